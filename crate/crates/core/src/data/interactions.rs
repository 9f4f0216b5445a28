use serde::{Deserialize, Serialize};

use super::DataError;

/// Sparse binary user–item feedback with both row and column views.
///
/// Row `u` lists the items user `u` interacted with in ascending order,
/// with the timestamp of each interaction alongside. Column `i` lists the
/// users that interacted with item `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    user_items: Vec<Vec<u32>>,
    user_times: Vec<Vec<i64>>,
    item_users: Vec<Vec<u32>>,
    n_positives: usize,
}

impl InteractionMatrix {
    /// Builds the matrix from `(user, item, timestamp)` triples. A pair seen
    /// more than once keeps its latest timestamp.
    pub fn from_triples(
        n_users: usize,
        n_items: usize,
        triples: impl IntoIterator<Item = (usize, usize, i64)>,
    ) -> Result<Self, DataError> {
        let mut rows: Vec<Vec<(u32, i64)>> = vec![Vec::new(); n_users];
        for (u, i, t) in triples {
            if u >= n_users || i >= n_items {
                return Err(DataError::Invalid(format!(
                    "interaction ({u}, {i}) outside a {n_users}x{n_items} matrix"
                )));
            }
            rows[u].push((i as u32, t));
        }
        let mut user_items = Vec::with_capacity(n_users);
        let mut user_times = Vec::with_capacity(n_users);
        let mut item_users = vec![Vec::new(); n_items];
        let mut n_positives = 0;
        for (u, mut row) in rows.into_iter().enumerate() {
            row.sort_unstable();
            let mut items: Vec<u32> = Vec::with_capacity(row.len());
            let mut times: Vec<i64> = Vec::with_capacity(row.len());
            for (i, t) in row {
                if items.last() == Some(&i) {
                    // sorted by (item, time), so the later timestamp wins
                    *times.last_mut().unwrap() = t;
                } else {
                    items.push(i);
                    times.push(t);
                    item_users[i as usize].push(u as u32);
                }
            }
            n_positives += items.len();
            user_items.push(items);
            user_times.push(times);
        }
        Ok(Self {
            n_users,
            n_items,
            user_items,
            user_times,
            item_users,
            n_positives,
        })
    }

    pub fn from_pairs(
        n_users: usize,
        n_items: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, DataError> {
        Self::from_triples(n_users, n_items, pairs.into_iter().map(|(u, i)| (u, i, 0)))
    }

    #[inline]
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    #[inline]
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    #[inline]
    pub fn n_positives(&self) -> usize {
        self.n_positives
    }

    /// Fraction of zero entries.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.n_positives as f64 / (self.n_users * self.n_items).max(1) as f64
    }

    /// Items of user `u`, ascending.
    #[inline]
    pub fn user_row(&self, u: usize) -> &[u32] {
        &self.user_items[u]
    }

    /// Timestamps aligned with [`Self::user_row`].
    #[inline]
    pub fn user_times(&self, u: usize) -> &[i64] {
        &self.user_times[u]
    }

    /// Users of item `i`, ascending.
    #[inline]
    pub fn item_col(&self, i: usize) -> &[u32] {
        &self.item_users[i]
    }

    #[inline]
    pub fn contains(&self, u: usize, i: usize) -> bool {
        self.user_items[u].binary_search(&(i as u32)).is_ok()
    }

    /// Binary row `R_u·` of length `n_items`.
    pub fn row_dense(&self, u: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_items];
        for &i in &self.user_items[u] {
            v[i as usize] = 1.0;
        }
        v
    }

    /// Binary column `R_·i` of length `n_users`.
    pub fn col_dense(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_users];
        for &u in &self.item_users[i] {
            v[u as usize] = 1.0;
        }
        v
    }

    /// All positives in row-major order.
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.user_items
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&i| (u, i as usize)))
    }

    /// All positives with timestamps in row-major order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, i64)> + '_ {
        self.user_items
            .iter()
            .zip(&self.user_times)
            .enumerate()
            .flat_map(|(u, (row, times))| {
                row.iter()
                    .zip(times)
                    .map(move |(&i, &t)| (u, i as usize, t))
            })
    }

    /// Copy with the given pairs removed.
    pub fn without(&self, removed: &[(usize, usize)]) -> Self {
        let mut drop: Vec<(usize, usize)> = removed.to_vec();
        drop.sort_unstable();
        Self::from_triples(
            self.n_users,
            self.n_items,
            self.triples()
                .filter(|&(u, i, _)| drop.binary_search(&(u, i)).is_err()),
        )
        .expect("subset of a valid matrix")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_agree() {
        let m = InteractionMatrix::from_triples(3, 4, [(0, 1, 5), (2, 1, 1), (0, 3, 2), (0, 1, 9)])
            .unwrap();
        assert_eq!(m.n_positives(), 3);
        assert_eq!(m.user_row(0), &[1, 3]);
        assert_eq!(m.user_times(0), &[9, 2]);
        assert_eq!(m.item_col(1), &[0, 2]);
        assert_eq!(m.row_dense(0), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(m.col_dense(1), vec![1.0, 0.0, 1.0]);
        assert!(m.contains(2, 1) && !m.contains(1, 1));
        let m2 = m.without(&[(0, 3)]);
        assert_eq!(m2.user_row(0), &[1]);
        assert_eq!(m2.n_positives(), 2);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(InteractionMatrix::from_pairs(2, 2, [(2, 0)]).is_err());
    }
}
