//! MovieLens-100K (`u.data`, `u.user`, `u.item`) and MovieLens-1M
//! (`ratings.dat`, `users.dat`, `movies.dat`) readers.
//!
//! Raw ids are 1-based integers and map to `id - 1`; ids that never occur
//! keep an empty row/column.

use std::path::Path;

use log::info;

use super::features::{age_bucket, tokenize, zip_bucket, BagOfWords, SideInfo, AGE_BUCKETS};
use super::{read_latin1, require_file, DataError, InteractionMatrix};
use crate::autodiff::SparseMatrix;

/// Most frequent terms kept from item text.
pub const MAX_TERMS: usize = 8000;

pub const ML100K_GENRES: [&str; 19] = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance",
    "Sci-Fi", "Thriller", "War", "Western",
];

const ML1M_GENRES: [&str; 18] = [
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary", "Drama",
    "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi", "Thriller",
    "War", "Western",
];

/// Binarised ratings plus bookkeeping from the raw file.
#[derive(Clone, Debug)]
pub struct RatingsFile {
    pub matrix: InteractionMatrix,
    /// Ratings read before binarisation.
    pub raw_ratings: usize,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains("::") {
        line.split("::").collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_id(field: &str, line_no: usize, what: &str) -> Result<usize, DataError> {
    match field.trim().parse::<usize>() {
        Ok(0) | Err(_) => Err(DataError::Parse {
            line: line_no,
            message: format!("bad {what} id {field:?}"),
        }),
        Ok(id) => Ok(id),
    }
}

/// Parses `user item rating timestamp` rows (tab/space or `::` separated)
/// and keeps pairs rated at least `threshold` as positives.
pub fn parse_ratings(text: &str, threshold: f64) -> Result<RatingsFile, DataError> {
    let mut triples = Vec::new();
    let (mut max_user, mut max_item, mut raw) = (0, 0, 0);
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_fields(line);
        if fields.len() < 4 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let user = parse_id(fields[0], line_no, "user")?;
        let item = parse_id(fields[1], line_no, "item")?;
        let rating: f64 = fields[2].trim().parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("bad rating {:?}", fields[2]),
        })?;
        let ts: i64 = fields[3].trim().parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("bad timestamp {:?}", fields[3]),
        })?;
        max_user = max_user.max(user);
        max_item = max_item.max(item);
        raw += 1;
        if rating >= threshold {
            triples.push((user - 1, item - 1, ts));
        }
    }
    if raw == 0 {
        return Err(DataError::Empty);
    }
    Ok(RatingsFile {
        matrix: InteractionMatrix::from_triples(max_user, max_item, triples)?,
        raw_ratings: raw,
    })
}

/// Reads a MovieLens ratings file, binarising at `threshold` (4 by default
/// in the pipelines).
pub fn load_movielens(path: &Path, threshold: f64) -> Result<RatingsFile, DataError> {
    let text = read_latin1(path)?;
    parse_ratings(&text, threshold).map_err(|e| e.in_file(path))
}

/// Demographic user vectors: gender (2) | age bracket | occupation | zip
/// first digit (10).
fn demographic_rows(
    records: &[(usize, u32, String, String, String)],
    n_users: usize,
    occupations: &[String],
) -> (SparseMatrix, Vec<String>) {
    let mut names: Vec<String> = vec!["gender=M".into(), "gender=F".into()];
    names.extend((0..AGE_BUCKETS).map(|b| format!("age_bucket={b}")));
    names.extend(occupations.iter().map(|o| format!("occupation={o}")));
    names.extend((0..10).map(|d| format!("zip={d}")));
    let occ_off = 2 + AGE_BUCKETS;
    let zip_off = occ_off + occupations.len();

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_users];
    for (u, age, gender, occupation, zip) in records {
        if *u >= n_users {
            continue;
        }
        let mut row = Vec::new();
        match gender.as_str() {
            "M" => row.push((0, 1.0)),
            "F" => row.push((1, 1.0)),
            _ => {}
        }
        row.push((2 + age_bucket(*age), 1.0));
        if let Ok(k) = occupations.binary_search(occupation) {
            row.push((occ_off + k, 1.0));
        }
        if let Some(d) = zip_bucket(zip) {
            row.push((zip_off + d, 1.0));
        }
        rows[*u] = row;
    }
    let missing = rows.iter().filter(|r| r.is_empty()).count();
    if missing > 0 {
        info!("{missing} users without demographic metadata get zero vectors");
    }
    let mut m = SparseMatrix::new(names.len());
    for r in rows {
        m.push_row(r);
    }
    (m, names)
}

/// Items: genre flags followed by an L2-normalised title bag-of-words.
fn item_rows(
    records: &[(usize, String, Vec<usize>)],
    n_items: usize,
    genres: &[&str],
) -> (SparseMatrix, Vec<String>) {
    let mut docs: Vec<Vec<String>> = vec![Vec::new(); n_items];
    let mut flags: Vec<Vec<usize>> = vec![Vec::new(); n_items];
    let mut seen = vec![false; n_items];
    for (i, title, g) in records {
        if *i >= n_items {
            continue;
        }
        docs[*i] = tokenize(title);
        flags[*i] = g.clone();
        seen[*i] = true;
    }
    let missing = seen.iter().filter(|s| !**s).count();
    if missing > 0 {
        info!("{missing} items without metadata get zero vectors");
    }
    let bow = BagOfWords::fit(docs.iter().map(Vec::as_slice), MAX_TERMS);
    let mut names: Vec<String> = genres.iter().map(|g| format!("genre={g}")).collect();
    names.extend(bow.terms().iter().map(|t| format!("term={t}")));
    let mut m = SparseMatrix::new(names.len());
    for i in 0..n_items {
        let mut row: Vec<(usize, f64)> = flags[i].iter().map(|&g| (g, 1.0)).collect();
        row.extend(
            bow.transform(&docs[i])
                .into_iter()
                .map(|(k, v)| (genres.len() + k, v)),
        );
        m.push_row(row);
    }
    (m, names)
}

/// Side information from `u.user` and `u.item`.
pub fn ml100k_side_info(dir: &Path, n_users: usize, n_items: usize) -> Result<SideInfo, DataError> {
    let users_path = require_file(dir, "u.user")?;
    let mut users = Vec::new();
    for (k, line) in read_latin1(&users_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() < 5 {
            return Err(DataError::Parse {
                line: k + 1,
                message: "u.user rows need 5 fields".into(),
            }
            .in_file(&users_path));
        }
        let id = parse_id(f[0], k + 1, "user").map_err(|e| e.in_file(&users_path))?;
        let age = f[1].trim().parse().unwrap_or(0);
        users.push((id - 1, age, f[2].trim().to_owned(), f[3].trim().to_owned(), f[4].to_owned()));
    }
    let mut occupations: Vec<String> = users.iter().map(|u| u.3.clone()).collect();
    occupations.sort();
    occupations.dedup();
    let (user_m, user_names) = demographic_rows(&users, n_users, &occupations);

    let items_path = require_file(dir, "u.item")?;
    let mut items = Vec::new();
    for (k, line) in read_latin1(&items_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('|').collect();
        if f.len() < 5 + ML100K_GENRES.len() {
            return Err(DataError::Parse {
                line: k + 1,
                message: format!("u.item rows need {} fields", 5 + ML100K_GENRES.len()),
            }
            .in_file(&items_path));
        }
        let id = parse_id(f[0], k + 1, "item").map_err(|e| e.in_file(&items_path))?;
        let flags = f[f.len() - ML100K_GENRES.len()..]
            .iter()
            .enumerate()
            .filter(|(_, v)| v.trim() == "1")
            .map(|(g, _)| g)
            .collect();
        items.push((id - 1, f[1].to_owned(), flags));
    }
    let (item_m, item_names) = item_rows(&items, n_items, &ML100K_GENRES);
    SideInfo::new(user_m, item_m, user_names, item_names)
}

/// Side information from `users.dat` and `movies.dat`.
pub fn ml1m_side_info(dir: &Path, n_users: usize, n_items: usize) -> Result<SideInfo, DataError> {
    let users_path = require_file(dir, "users.dat")?;
    let mut users = Vec::new();
    for (k, line) in read_latin1(&users_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() < 5 {
            return Err(DataError::Parse {
                line: k + 1,
                message: "users.dat rows need 5 fields".into(),
            }
            .in_file(&users_path));
        }
        let id = parse_id(f[0], k + 1, "user").map_err(|e| e.in_file(&users_path))?;
        let age = f[2].trim().parse().unwrap_or(0);
        users.push((id - 1, age, f[1].trim().to_owned(), f[3].trim().to_owned(), f[4].to_owned()));
    }
    let occupations: Vec<String> = {
        let mut o: Vec<u32> = users.iter().filter_map(|u| u.3.parse().ok()).collect();
        o.extend(0..21);
        o.sort_unstable();
        o.dedup();
        // zero-padded so lexical order matches numeric order for binary search
        o.into_iter().map(|v| format!("{v:02}")).collect()
    };
    for u in &mut users {
        if let Ok(v) = u.3.parse::<u32>() {
            u.3 = format!("{v:02}");
        }
    }
    let (user_m, user_names) = demographic_rows(&users, n_users, &occupations);

    let movies_path = require_file(dir, "movies.dat")?;
    let mut items = Vec::new();
    for (k, line) in read_latin1(&movies_path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split("::").collect();
        if f.len() < 3 {
            return Err(DataError::Parse {
                line: k + 1,
                message: "movies.dat rows need 3 fields".into(),
            }
            .in_file(&movies_path));
        }
        let id = parse_id(f[0], k + 1, "movie").map_err(|e| e.in_file(&movies_path))?;
        let flags = f[2]
            .split('|')
            .filter_map(|g| ML1M_GENRES.iter().position(|&x| x == g.trim()))
            .collect();
        items.push((id - 1, f[1].to_owned(), flags));
    }
    let (item_m, item_names) = item_rows(&items, n_items, &ML1M_GENRES);
    SideInfo::new(user_m, item_m, user_names, item_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarises_at_threshold_and_remaps() {
        let r = parse_ratings("1\t50\t5\t100\n", 4.0).unwrap();
        assert_eq!(r.matrix.user_row(0), &[49]);
        assert_eq!(r.matrix.n_items(), 50);

        let r = parse_ratings("1\t50\t3\t100\n", 4.0).unwrap();
        assert_eq!(r.matrix.n_positives(), 0);
        assert_eq!((r.matrix.n_users(), r.matrix.n_items()), (1, 50));
        assert_eq!(r.raw_ratings, 1);
    }

    #[test]
    fn double_colon_rows() {
        let r = parse_ratings("2::3::4::7\n1::1::1::1\n", 4.0).unwrap();
        assert_eq!(r.matrix.user_row(1), &[2]);
        assert_eq!(r.matrix.user_times(1), &[7]);
        assert!(r.matrix.user_row(0).is_empty());
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_ratings("1\t2\t5\t9\n1\tx\t5\t9\n", 4.0).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 2, .. }), "{err}");
        let err = parse_ratings("1\t2\t5\n", 4.0).unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(parse_ratings("\n\n", 4.0), Err(DataError::Empty)));
    }

    #[test]
    fn threshold_monotone() {
        let text = "1\t1\t5\t1\n1\t2\t4\t1\n2\t1\t3\t1\n2\t3\t2\t1\n";
        let mut last = usize::MAX;
        for t in [1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
            let n = parse_ratings(text, t).unwrap().matrix.n_positives();
            assert!(n <= last);
            last = n;
        }
    }
}
