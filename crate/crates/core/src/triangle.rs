//! Cumulative loss triangles.
//!
//! Experience periods `i` and development periods `j` are 1-based in every
//! public API, matching the file formats. Each experience period stores a
//! contiguous prefix of development periods `1..=J_i`.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TriangleError {
    #[error("non-positive loss {loss} at cell ({i}, {j})")]
    NonPositive { i: usize, j: usize, loss: f64 },
    #[error("non-finite loss at cell ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("duplicate cell ({i}, {j})")]
    Duplicate { i: usize, j: usize },
    #[error("gap at cell ({i}, {j}): development periods must form a contiguous prefix")]
    Gap { i: usize, j: usize },
    #[error("experience period {i} has no cells")]
    EmptyRow { i: usize },
    #[error("indices are 1-based, got ({i}, {j})")]
    ZeroIndex { i: usize, j: usize },
    #[error("triangle needs at least 2 experience and 2 development periods, got {n} x {m}")]
    TooSmall { n: usize, m: usize },
    #[error("test cell ({i}, {j}) does not extend its training row contiguously")]
    TestNotContiguous { i: usize, j: usize },
}

/// One cell of a triangle: experience period `i`, development period `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub i: usize,
    pub j: usize,
    pub loss: f64,
}

/// How the held-out part of a triangle is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Keep `j <= min(M, N - i + 1)`; everything else is test data.
    LowerDiagonal,
    /// Hold out the last provided cell of each row (rows with one cell keep it).
    LastDiagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triangle {
    n_development: usize,
    rows: Vec<Vec<f64>>,
}

impl Triangle {
    /// Builds a triangle from unordered cells. `N` and `M` are the maximum
    /// indices seen.
    pub fn from_cells(cells: &[Cell]) -> Result<Self, TriangleError> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for c in cells {
            if c.i == 0 || c.j == 0 {
                return Err(TriangleError::ZeroIndex { i: c.i, j: c.j });
            }
            if !c.loss.is_finite() {
                return Err(TriangleError::NonFinite { i: c.i, j: c.j });
            }
            if c.loss <= 0.0 {
                return Err(TriangleError::NonPositive { i: c.i, j: c.j, loss: c.loss });
            }
            if map.insert((c.i, c.j), c.loss).is_some() {
                return Err(TriangleError::Duplicate { i: c.i, j: c.j });
            }
        }
        let n = map.keys().map(|k| k.0).max().unwrap_or(0);
        let m = map.keys().map(|k| k.1).max().unwrap_or(0);
        if n < 2 || m < 2 {
            return Err(TriangleError::TooSmall { n, m });
        }
        let mut rows: Vec<Vec<f64>> = alloc::vec![Vec::new(); n];
        for (&(i, j), &loss) in &map {
            let row = &mut rows[i - 1];
            if row.len() + 1 != j {
                return Err(TriangleError::Gap { i, j: row.len() + 1 });
            }
            row.push(loss);
        }
        if let Some(i) = rows.iter().position(|r| r.is_empty()) {
            return Err(TriangleError::EmptyRow { i: i + 1 });
        }
        Ok(Self { n_development: m, rows })
    }

    /// Builds a triangle from per-row prefixes with an explicit development
    /// horizon `m` (which may exceed every row length).
    pub fn from_rows(rows: Vec<Vec<f64>>, m: usize) -> Result<Self, TriangleError> {
        let n = rows.len();
        if n < 2 || m < 2 {
            return Err(TriangleError::TooSmall { n, m });
        }
        for (ii, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(TriangleError::EmptyRow { i: ii + 1 });
            }
            if row.len() > m {
                return Err(TriangleError::TooSmall { n, m: row.len() });
            }
            for (jj, &y) in row.iter().enumerate() {
                if !y.is_finite() {
                    return Err(TriangleError::NonFinite { i: ii + 1, j: jj + 1 });
                }
                if y <= 0.0 {
                    return Err(TriangleError::NonPositive { i: ii + 1, j: jj + 1, loss: y });
                }
            }
        }
        Ok(Self { n_development: m, rows })
    }

    pub fn n_experience(&self) -> usize {
        self.rows.len()
    }

    pub fn n_development(&self) -> usize {
        self.n_development
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Values of experience period `i` (1-based).
    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i - 1]
    }

    /// Number of stored development periods `J_i` for experience period `i`.
    pub fn row_len(&self, i: usize) -> usize {
        self.rows[i - 1].len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.rows.get(i.checked_sub(1)?)?.get(j.checked_sub(1)?).copied()
    }

    pub fn n_cells(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn max_loss(&self) -> f64 {
        self.rows.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.rows.iter().enumerate().flat_map(|(ii, row)| {
            row.iter().enumerate().map(move |(jj, &loss)| Cell { i: ii + 1, j: jj + 1, loss })
        })
    }

    /// True when every row is complete through `M`.
    pub fn is_full(&self) -> bool {
        self.rows.iter().all(|r| r.len() == self.n_development)
    }

    /// Splits into training triangle and held-out cells.
    pub fn split(&self, mode: SplitMode) -> (Triangle, Vec<Cell>) {
        let n = self.n_experience();
        let mut train = Vec::with_capacity(n);
        let mut test = Vec::new();
        for (ii, row) in self.rows.iter().enumerate() {
            let keep = match mode {
                SplitMode::LowerDiagonal => row.len().min(n - ii).min(self.n_development),
                SplitMode::LastDiagonal => (row.len() - 1).max(1),
            };
            train.push(row[..keep].to_vec());
            test.extend(
                row[keep..]
                    .iter()
                    .enumerate()
                    .map(|(k, &loss)| Cell { i: ii + 1, j: keep + k + 1, loss }),
            );
        }
        (Triangle { n_development: self.n_development, rows: train }, test)
    }

    pub fn split_upper_lower(&self) -> (Triangle, Vec<Cell>) {
        self.split(SplitMode::LowerDiagonal)
    }

    /// Inverse of [`Triangle::split`]: appends test cells to their rows.
    pub fn recombine(&self, test: &[Cell]) -> Result<Triangle, TriangleError> {
        let mut rows = self.rows.clone();
        let mut sorted: Vec<Cell> = test.to_vec();
        sorted.sort_by_key(|c| (c.i, c.j));
        let mut m = self.n_development;
        for c in sorted {
            if c.i == 0 || c.i > rows.len() || c.j != rows[c.i - 1].len() + 1 {
                return Err(TriangleError::TestNotContiguous { i: c.i, j: c.j });
            }
            if !(c.loss > 0.0 && c.loss.is_finite()) {
                return Err(TriangleError::NonPositive { i: c.i, j: c.j, loss: c.loss });
            }
            rows[c.i - 1].push(c.loss);
            m = m.max(c.j);
        }
        Ok(Triangle { n_development: m, rows })
    }

    /// Same rows with a different development horizon.
    pub fn with_horizon(&self, m: usize) -> Result<Triangle, TriangleError> {
        Triangle::from_rows(self.rows.clone(), m)
    }

    /// Checks that `test` cells continue the training rows without gaps.
    pub fn check_test_cells(&self, test: &[Cell]) -> Result<(), TriangleError> {
        self.recombine(test).map(|_| ())
    }
}

/// Ratio `y[i, d + 1] / y[i, d]` for transition `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkRatio {
    pub i: usize,
    pub d: usize,
    pub ratio: f64,
}

pub fn empirical_link_ratios(t: &Triangle) -> Vec<LinkRatio> {
    t.rows
        .iter()
        .enumerate()
        .flat_map(|(ii, row)| {
            row.windows(2)
                .enumerate()
                .map(move |(dd, w)| LinkRatio { i: ii + 1, d: dd + 1, ratio: w[1] / w[0] })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRatioSummary {
    pub group: String,
    pub transition: usize,
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

/// Pools link ratios per group and transition across a triangle collection.
/// Uses the `n - 1` standard deviation; a single ratio reports `sd = 0`.
pub fn summarize_link_ratios<'a, I>(groups: I) -> Vec<LinkRatioSummary>
where
    I: IntoIterator<Item = (&'a str, &'a Triangle)>,
{
    let mut pooled: BTreeMap<(String, usize), Vec<f64>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (group, tri) in groups {
        if !order.iter().any(|g| g == group) {
            order.push(group.into());
        }
        for lr in empirical_link_ratios(tri) {
            pooled.entry((group.into(), lr.d)).or_default().push(lr.ratio);
        }
    }
    let mut out = Vec::new();
    for group in &order {
        for ((g, d), ratios) in pooled.range((group.clone(), 0)..=(group.clone(), usize::MAX)) {
            let (mean, sd) = math::mean_sd(ratios).expect("non-empty by construction");
            out.push(LinkRatioSummary { group: g.clone(), transition: *d, mean, sd, count: ratios.len() });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn c(i: usize, j: usize, loss: f64) -> Cell {
        Cell { i, j, loss }
    }

    fn square(n: usize) -> Triangle {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| 100.0 + (i * n + j) as f64).collect())
            .collect();
        Triangle::from_rows(rows, n).unwrap()
    }

    #[test]
    fn load_small_trapezoid() {
        let t = Triangle::from_cells(&[c(1, 1, 100.0), c(1, 2, 150.0), c(2, 1, 120.0)]).unwrap();
        assert_eq!(t.n_experience(), 2);
        assert_eq!(t.n_development(), 2);
        assert_eq!(t.row_len(1), 2);
        assert_eq!(t.row_len(2), 1);
    }

    #[test]
    fn zero_loss_is_rejected_with_coordinates() {
        let err = Triangle::from_cells(&[c(1, 1, 100.0), c(1, 2, 0.0), c(2, 1, 1.0)]).unwrap_err();
        assert_eq!(err, TriangleError::NonPositive { i: 1, j: 2, loss: 0.0 });
        assert!(alloc::format!("{err}").contains("(1, 2)"));
    }

    #[test]
    fn gap_and_duplicate_are_rejected() {
        let err = Triangle::from_cells(&[c(1, 1, 100.0), c(1, 3, 150.0), c(2, 1, 1.0)]).unwrap_err();
        assert_eq!(err, TriangleError::Gap { i: 1, j: 2 });
        let err = Triangle::from_cells(&[c(1, 1, 1.0), c(1, 1, 2.0), c(2, 2, 1.0)]).unwrap_err();
        assert_eq!(err, TriangleError::Duplicate { i: 1, j: 1 });
        let err = Triangle::from_cells(&[c(1, 1, 1.0), c(1, 2, 2.0), c(3, 1, 1.0)]).unwrap_err();
        assert_eq!(err, TriangleError::EmptyRow { i: 2 });
    }

    #[test]
    fn lower_diagonal_split_counts() {
        let (train, test) = square(10).split_upper_lower();
        assert_eq!(train.n_cells(), 55);
        assert_eq!(test.len(), 45);
        let (train, test) = square(2).split_upper_lower();
        assert_eq!(train.rows(), &[vec![100.0, 101.0], vec![102.0]]);
        assert_eq!(test, vec![c(2, 2, 103.0)]);
    }

    #[test]
    fn last_diagonal_split_holds_out_latest_cells() {
        let (full_train, _) = square(5).split_upper_lower();
        let (train, test) = full_train.split(SplitMode::LastDiagonal);
        assert_eq!(test.len(), 4);
        assert!(test.iter().all(|cell| cell.i + cell.j == 6));
        assert_eq!(train.row_len(5), 1);
        assert_eq!(train.recombine(&test).unwrap(), full_train);
    }

    #[test]
    fn trapezoid_split_uses_min_rule() {
        // N = 3 experience periods with M = 5 development periods.
        let rows = vec![vec![1.0; 5], vec![1.0; 4], vec![1.0; 3]];
        let t = Triangle::from_rows(rows, 5).unwrap();
        let (train, test) = t.split_upper_lower();
        assert_eq!(train.rows().iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 2, 1]);
        assert_eq!(test.len(), 6);
    }

    #[test]
    fn link_ratio_examples() {
        let t = Triangle::from_rows(vec![vec![100.0, 150.0, 165.0], vec![50.0, 50.0]], 3).unwrap();
        let lr = empirical_link_ratios(&t);
        assert!((lr[0].ratio - 1.5).abs() < 1e-15);
        assert!((lr[1].ratio - 1.1).abs() < 1e-12);
        assert_eq!(lr[2].ratio, 1.0);
    }

    #[test]
    fn link_ratio_summary_uses_sample_sd() {
        let a = Triangle::from_rows(vec![vec![100.0, 150.0], vec![10.0]], 2).unwrap();
        let b = Triangle::from_rows(vec![vec![100.0, 110.0], vec![10.0]], 2).unwrap();
        let s = summarize_link_ratios([("PP", &a), ("PP", &b)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].count, 2);
        assert!((s[0].mean - 1.3).abs() < 1e-12);
        assert!((s[0].sd - 0.282_842_712_474_619).abs() < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn split_then_recombine_is_identity(n in 2usize..12, seed in 0u64..1000) {
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| 1.0 + ((seed + (i * 31 + j * 7) as u64) % 97) as f64).collect())
                .collect();
            let t = Triangle::from_rows(rows, n).unwrap();
            let (train, test) = t.split_upper_lower();
            proptest::prop_assert_eq!(train.n_cells() + test.len(), n * n);
            proptest::prop_assert_eq!(train.n_cells(), n * (n + 1) / 2);
            proptest::prop_assert_eq!(train.recombine(&test).unwrap(), t);
        }

        #[test]
        fn constant_growth_gives_constant_ratios(g in 1.0f64..3.0, len in 2usize..10) {
            let row: Vec<f64> = (0..len).map(|k| 10.0 * g.powi(k as i32)).collect();
            let t = Triangle::from_rows(vec![row, vec![1.0]], len).unwrap();
            for lr in empirical_link_ratios(&t) {
                proptest::prop_assert!((lr.ratio - g).abs() < 1e-12 * g);
            }
        }
    }
}
