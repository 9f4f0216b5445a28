//! Lastfm-2K (`user_artists.dat`, `user_friends.dat`,
//! `user_taggedartists.dat`, optional `tags.dat`).
//!
//! Every listened (user, artist) pair is a positive. The files carry no
//! listening time, so all timestamps are zero and leave-one-out falls back
//! to the larger-item-id tie rule. Users see their friend adjacency row;
//! artists see a bag of the tags users attached to them.

use std::collections::BTreeMap;
use std::path::Path;

use log::info;

use super::features::{BagOfWords, SideInfo};
use super::movielens::MAX_TERMS;
use super::{read_latin1, require_file, DataError, InteractionMatrix};
use crate::autodiff::SparseMatrix;

#[derive(Clone, Debug)]
pub struct LastfmData {
    pub matrix: InteractionMatrix,
    pub raw_ratings: usize,
    pub side: SideInfo,
}

fn rows_of(text: &str, min_fields: usize, path: &Path) -> Result<Vec<Vec<String>>, DataError> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if line.trim().is_empty() {
            continue;
        }
        // header row
        if k == 0 && f[0].trim().parse::<u64>().is_err() {
            continue;
        }
        if f.len() < min_fields {
            return Err(DataError::Parse {
                line: k + 1,
                message: format!("expected {min_fields} tab-separated fields"),
            }
            .in_file(path));
        }
        out.push(f.into_iter().map(|s| s.trim().to_owned()).collect());
    }
    Ok(out)
}

fn id(field: &str, path: &Path) -> Result<u64, DataError> {
    field.parse().map_err(|_| {
        DataError::Invalid(format!("bad id {field:?} in {}", path.display()))
    })
}

pub fn load_lastfm(dir: &Path) -> Result<LastfmData, DataError> {
    let ua_path = require_file(dir, "user_artists.dat")?;
    let ua = rows_of(&read_latin1(&ua_path)?, 2, &ua_path)?;
    if ua.is_empty() {
        return Err(DataError::Empty.in_file(&ua_path));
    }
    let mut pairs = Vec::with_capacity(ua.len());
    for r in &ua {
        pairs.push((id(&r[0], &ua_path)?, id(&r[1], &ua_path)?));
    }
    let users: BTreeMap<u64, usize> = {
        let mut ids: Vec<u64> = pairs.iter().map(|p| p.0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(k, v)| (v, k)).collect()
    };
    let items: BTreeMap<u64, usize> = {
        let mut ids: Vec<u64> = pairs.iter().map(|p| p.1).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().enumerate().map(|(k, v)| (v, k)).collect()
    };
    let matrix = InteractionMatrix::from_triples(
        users.len(),
        items.len(),
        pairs.iter().map(|(u, i)| (users[u], items[i], 0)),
    )?;

    // social adjacency over users present in the listening data
    let uf_path = require_file(dir, "user_friends.dat")?;
    let mut social: Vec<Vec<(usize, f64)>> = vec![Vec::new(); users.len()];
    for r in rows_of(&read_latin1(&uf_path)?, 2, &uf_path)? {
        let (a, b) = (id(&r[0], &uf_path)?, id(&r[1], &uf_path)?);
        if let (Some(&ua), Some(&ub)) = (users.get(&a), users.get(&b)) {
            social[ua].push((ub, 1.0));
        }
    }
    let mut user_m = SparseMatrix::new(users.len());
    let mut lonely = 0;
    for mut row in social {
        row.sort_by_key(|e| e.0);
        row.dedup_by_key(|e| e.0);
        lonely += usize::from(row.is_empty());
        user_m.push_row(row);
    }
    if lonely > 0 {
        info!("{lonely} users without friends get zero vectors");
    }
    let user_names = users.keys().map(|u| format!("friend={u}")).collect();

    let tag_names: BTreeMap<String, String> = match require_file(dir, "tags.dat") {
        Ok(p) => rows_of(&read_latin1(&p)?, 2, &p)?
            .into_iter()
            .map(|r| (r[0].clone(), r[1].clone()))
            .collect(),
        Err(_) => BTreeMap::new(),
    };
    let ut_path = require_file(dir, "user_taggedartists.dat")?;
    let mut docs: Vec<Vec<String>> = vec![Vec::new(); items.len()];
    for r in rows_of(&read_latin1(&ut_path)?, 3, &ut_path)? {
        if let Some(&i) = items.get(&id(&r[1], &ut_path)?) {
            docs[i].push(r[2].clone());
        }
    }
    let untagged = docs.iter().filter(|d| d.is_empty()).count();
    if untagged > 0 {
        info!("{untagged} artists without tags get zero vectors");
    }
    let bow = BagOfWords::fit(docs.iter().map(Vec::as_slice), MAX_TERMS);
    let item_names = bow
        .terms()
        .iter()
        .map(|t| format!("tag={}", tag_names.get(t).unwrap_or(t)))
        .collect();
    let mut item_m = SparseMatrix::new(bow.len());
    for d in &docs {
        item_m.push_row(bow.transform(d));
    }

    Ok(LastfmData {
        matrix,
        raw_ratings: ua.len(),
        side: SideInfo::new(user_m, item_m, user_names, item_names)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_lastfm_directory() {
        let dir = tempfile::tempdir().unwrap();
        let w = |name: &str, body: &str| std::fs::write(dir.path().join(name), body).unwrap();
        w("user_artists.dat", "userID\tartistID\tweight\n2\t51\t13\n2\t52\t1\n4\t52\t7\n");
        w("user_friends.dat", "userID\tfriendID\n2\t4\n4\t2\n2\t99\n");
        w(
            "user_taggedartists.dat",
            "userID\tartistID\ttagID\tday\tmonth\tyear\n2\t51\t7\t1\t1\t2008\n4\t51\t7\t1\t1\t2008\n",
        );
        w("tags.dat", "tagID\ttagValue\n7\trock\n");
        let d = load_lastfm(dir.path()).unwrap();
        assert_eq!((d.matrix.n_users(), d.matrix.n_items()), (2, 2));
        assert_eq!(d.matrix.user_row(0), &[0, 1]);
        assert_eq!(d.side.user_dense(0), vec![0.0, 1.0]);
        assert_eq!(d.side.item_dense(0), vec![1.0]);
        assert_eq!(d.side.item_dense(1), vec![0.0]);
        assert_eq!(d.side.item_feature_names(), &["tag=rock"]);
    }
}
