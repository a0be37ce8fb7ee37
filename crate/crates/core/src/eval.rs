//! Accuracy bookkeeping, continual-learning metrics and storage accounting.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::data::ImageGeometry;
use crate::error::{GfrError, Result};
use crate::generator::FeatureGan;

/// `a[k][j]`: accuracy on task `j` after training task `k`, `1 ≤ j ≤ k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = AccuracyMatrix::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the row for the next task; it must hold one entry per task
    /// trained so far, each in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let k = self.rows.len() + 1;
        if row.len() != k {
            return Err(GfrError::input(format!("row {k} needs {k} entries, got {}", row.len())));
        }
        if let Some(a) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(GfrError::input(format!("accuracy {a} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.rows.len()
    }

    /// 1-based row.
    pub fn row(&self, k: usize) -> Result<&[f64]> {
        k.checked_sub(1)
            .and_then(|i| self.rows.get(i))
            .map(Vec::as_slice)
            .ok_or_else(|| GfrError::input(format!("row {k} is not complete ({} rows recorded)", self.rows.len())))
    }

    /// 1-based entry `a[k][j]`.
    pub fn get(&self, k: usize, j: usize) -> Result<f64> {
        let row = self.row(k)?;
        j.checked_sub(1)
            .and_then(|i| row.get(i))
            .copied()
            .ok_or_else(|| GfrError::input(format!("entry ({k}, {j}) is outside the lower triangle")))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// `after_task,eval_task,accuracy` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("after_task,eval_task,accuracy\n");
        for (k, row) in self.rows.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                writeln!(out, "{},{},{}", k + 1, j + 1, a).expect("write to string");
            }
        }
        out
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<Self> {
        let bad = |m: String| GfrError::format(path, m);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("after_task,eval_task,accuracy") {
            return Err(bad("missing `after_task,eval_task,accuracy` header".into()));
        }
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [k, j, a] => k
                    .parse::<usize>()
                    .ok()
                    .zip(j.parse::<usize>().ok())
                    .zip(a.parse::<f64>().ok()),
                _ => None,
            };
            let ((k, j), a) = parsed.ok_or_else(|| bad(format!("line {}: expected three numeric fields", n + 2)))?;
            if k == rows.len() + 1 && j == 1 {
                rows.push(Vec::new());
            }
            let count = rows.len();
            match rows.last_mut() {
                Some(row) if k == count && j == row.len() + 1 => row.push(a),
                _ => return Err(bad(format!("line {}: entry ({k}, {j}) out of order", n + 2))),
            }
        }
        if let Some(last) = rows.last() {
            if last.len() != rows.len() {
                return Err(bad(format!("row {} is incomplete", rows.len())));
            }
        }
        AccuracyMatrix::from_rows(rows).map_err(|e| bad(e.to_string()))
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax_lowest(scores: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in scores.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Fraction of rows whose argmax over all columns equals the label.
pub fn accuracy_from_scores(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(GfrError::input("accuracy of an empty split is undefined"));
    }
    if scores.nrows() != labels.len() {
        return Err(GfrError::input("score rows and labels differ in length"));
    }
    let correct = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax_lowest(row.iter().copied()) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// `(1/k)·Σ_{j≤k} a[k][j]`.
pub fn average_accuracy(m: &AccuracyMatrix, k: usize) -> Result<f64> {
    let row = m.row(k)?;
    Ok(row.iter().sum::<f64>() / k as f64)
}

/// Accuracy over the pooled test samples of tasks `1..=k`, weighting each task
/// by its test-split size.
pub fn micro_average_accuracy(m: &AccuracyMatrix, k: usize, test_sizes: &[usize]) -> Result<f64> {
    let row = m.row(k)?;
    if test_sizes.len() < k {
        return Err(GfrError::input("test sizes missing for some tasks"));
    }
    let total: usize = test_sizes[..k].iter().sum();
    if total == 0 {
        return Err(GfrError::input("no test samples"));
    }
    Ok(row.iter().zip(test_sizes).map(|(a, &n)| a * n as f64).sum::<f64>() / total as f64)
}

/// `(1/(k−1))·Σ_{j<k} [max_{l∈[j,k−1]} a[l][j] − a[k][j]]`, unclamped.
pub fn average_forgetting(m: &AccuracyMatrix, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(GfrError::input("forgetting needs at least two tasks"));
    }
    let last = m.row(k)?;
    let mut total = 0.0;
    for j in 1..k {
        let best = (j..k).map(|l| m.get(l, j)).collect::<Result<Vec<_>>>()?;
        let best = best.into_iter().fold(f64::NEG_INFINITY, f64::max);
        total += best - last[j - 1];
    }
    Ok(total / (k - 1) as f64)
}

/// `k,avg_accuracy,avg_forgetting` lines; forgetting is empty for `k = 1`.
pub fn summary_csv(m: &AccuracyMatrix) -> Result<String> {
    let mut out = String::from("k,avg_accuracy,avg_forgetting\n");
    for k in 1..=m.num_tasks() {
        let acc = average_accuracy(m, k)?;
        let forgetting = if k >= 2 {
            average_forgetting(m, k)?.to_string()
        } else {
            String::new()
        };
        writeln!(out, "{k},{acc},{forgetting}").expect("write to string");
    }
    Ok(out)
}

/// What a method keeps between tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodFootprint {
    pub method: String,
    /// Stored exemplar count and their image geometry.
    pub exemplars: Option<(usize, ImageGeometry)>,
    /// Named stored networks with their parameter counts.
    pub models: Vec<(String, usize)>,
}

impl MethodFootprint {
    pub fn exemplars(method: &str, count: usize, geometry: ImageGeometry) -> Self {
        MethodFootprint {
            method: method.to_string(),
            exemplars: Some((count, geometry)),
            models: Vec::new(),
        }
    }

    /// Conditional feature generator plus critic.
    pub fn feature_gan(method: &str, classes: usize, feature_dim: usize, latent: usize, hidden: &[usize]) -> Self {
        let (g, d) = FeatureGan::param_counts(classes, feature_dim, latent, hidden);
        MethodFootprint {
            method: method.to_string(),
            exemplars: None,
            models: vec![("generator".into(), g), ("critic".into(), d)],
        }
    }
}

pub const BYTES_PER_PIXEL: u64 = 1;
pub const BYTES_PER_PARAMETER: u64 = 4;

/// Bytes a method stores, split by kind.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageReport {
    pub method: String,
    pub exemplar_bytes: u64,
    pub model_bytes: u64,
    pub components: Vec<(String, u64)>,
}

impl StorageReport {
    pub fn total_bytes(&self) -> u64 {
        self.exemplar_bytes + self.model_bytes
    }

    /// Decimal megabytes (10⁶ bytes).
    pub fn megabytes(&self) -> f64 {
        self.total_bytes() as f64 / 1e6
    }

    /// Binary mebibytes (2²⁰ bytes).
    pub fn mebibytes(&self) -> f64 {
        self.total_bytes() as f64 / (1u64 << 20) as f64
    }
}

pub fn storage_footprint(desc: &MethodFootprint) -> StorageReport {
    let mut components = Vec::new();
    let exemplar_bytes = desc
        .exemplars
        .map(|(count, g)| count as u64 * g.pixels() as u64 * BYTES_PER_PIXEL)
        .unwrap_or(0);
    if desc.exemplars.is_some() {
        components.push(("exemplars".to_string(), exemplar_bytes));
    }
    let mut model_bytes = 0;
    for (name, params) in &desc.models {
        let bytes = *params as u64 * BYTES_PER_PARAMETER;
        model_bytes += bytes;
        components.push((name.clone(), bytes));
    }
    StorageReport {
        method: desc.method.clone(),
        exemplar_bytes,
        model_bytes,
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> AccuracyMatrix {
        AccuracyMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn average_accuracy_examples() {
        let a = m(&[&[0.2], &[0.1, 0.3], &[0.5, 0.7, 0.9]]);
        assert!((average_accuracy(&a, 3).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(average_accuracy(&a, 1).unwrap(), 0.2);
        let c = m(&[&[0.4], &[0.4, 0.4]]);
        assert!((average_accuracy(&c, 2).unwrap() - 0.4).abs() < 1e-12);
        assert!(average_accuracy(&c, 3).is_err());
    }

    #[test]
    fn forgetting_examples() {
        assert!((average_forgetting(&m(&[&[0.9], &[0.7, 0.8]]), 2).unwrap() - 0.2).abs() < 1e-12);
        let three = m(&[&[0.9], &[0.6, 0.8], &[0.5, 0.7, 0.9]]);
        assert!((average_forgetting(&three, 3).unwrap() - 0.25).abs() < 1e-12);
        assert!((average_forgetting(&m(&[&[0.5], &[0.6, 0.7]]), 2).unwrap() + 0.1).abs() < 1e-12);
        assert!(average_forgetting(&three, 1).is_err());
    }

    #[test]
    fn rows_must_fill_the_lower_triangle() {
        let mut a = AccuracyMatrix::new();
        assert!(a.push_row(vec![0.5, 0.5]).is_err());
        a.push_row(vec![0.5]).unwrap();
        assert!(a.push_row(vec![0.5, 1.5]).is_err());
        assert!(a.get(1, 2).is_err());
    }

    #[test]
    fn csv_round_trip_and_counts() {
        let a = m(&[&[0.9], &[0.6, 0.8], &[0.5, 0.7, 0.9]]);
        let text = a.to_csv();
        assert_eq!(text.lines().count(), 1 + 6);
        assert_eq!(AccuracyMatrix::from_csv(Path::new("m.csv"), &text).unwrap(), a);
        assert!(AccuracyMatrix::from_csv(Path::new("m.csv"), "after_task,eval_task,accuracy\n2,1,0.5\n").is_err());
        let summary = summary_csv(&a).unwrap();
        assert_eq!(summary.lines().nth(1), Some("1,0.9,"));
        assert_eq!(summary.lines().count(), 4);
    }

    #[test]
    fn single_head_accuracy() {
        let scores = array![[2.0, 1.0, 0.0], [0.0, 3.0, 3.0], [0.1, 0.2, 5.0]];
        assert_eq!(accuracy_from_scores(&scores, &[0, 1, 2]).unwrap(), 1.0);
        assert!((accuracy_from_scores(&scores, &[0, 2, 2]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let constant = Array2::zeros((4, 2));
        assert_eq!(accuracy_from_scores(&constant, &[0, 1, 0, 1]).unwrap(), 0.5);
        // Right within its own task (columns 0..2) but beaten by a newer class.
        let old = array![[1.0, 0.5, 4.0]];
        assert_eq!(accuracy_from_scores(&old, &[0]).unwrap(), 0.0);
        assert!(accuracy_from_scores(&Array2::zeros((0, 2)), &[]).is_err());
    }

    #[test]
    fn micro_weights_by_test_size() {
        let a = m(&[&[1.0], &[1.0, 0.0]]);
        assert!((micro_average_accuracy(&a, 2, &[30, 10]).unwrap() - 0.75).abs() < 1e-12);
        assert!((average_accuracy(&a, 2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn table_storage_values() {
        let cifar = storage_footprint(&MethodFootprint::exemplars("icarl", 2000, ImageGeometry::new(32, 32, 3)));
        assert_eq!(cifar.total_bytes(), 6_144_000);
        assert!((cifar.megabytes() - 6.144).abs() < 1e-12);
        let imagenet = storage_footprint(&MethodFootprint::exemplars("icarl", 2000, ImageGeometry::new(256, 256, 3)));
        assert_eq!(imagenet.total_bytes(), 393_216_000);
        assert_eq!(imagenet.mebibytes(), 375.0);
        let gan = storage_footprint(&MethodFootprint::feature_gan("ours", 100, 512, 200, &[512, 512]));
        assert_eq!(gan.total_bytes(), 1_256_449 * 4);
        assert!(gan.megabytes() > 0.45 && gan.megabytes() < 45.0);
    }

    #[test]
    fn generator_bytes_grow_only_through_one_hot_width() {
        let bytes = |k| storage_footprint(&MethodFootprint::feature_gan("ours", k, 64, 32, &[128, 128])).total_bytes();
        let step = bytes(11) - bytes(10);
        assert_eq!(step, 2 * 128 * 4);
        assert_eq!(bytes(30) - bytes(10), 20 * step);
    }

    proptest! {
        #[test]
        fn exemplar_bytes_are_linear(count in 0usize..5000, h in 1usize..64, w in 1usize..64) {
            let g = ImageGeometry::new(h, w, 3);
            let one = storage_footprint(&MethodFootprint::exemplars("x", count, g)).total_bytes();
            let two = storage_footprint(&MethodFootprint::exemplars("x", 2 * count, g)).total_bytes();
            let three = storage_footprint(&MethodFootprint::exemplars("x", 3 * count, g)).total_bytes();
            prop_assert_eq!(two, 2 * one);
            prop_assert_eq!(three, 3 * one);
        }

        #[test]
        fn forgetting_at_two_is_the_drop(a11 in 0.0f64..=1.0, a21 in 0.0f64..=1.0, a22 in 0.0f64..=1.0) {
            let mat = AccuracyMatrix::from_rows(vec![vec![a11], vec![a21, a22]]).unwrap();
            prop_assert_eq!(average_forgetting(&mat, 2).unwrap(), a11 - a21);
        }

        #[test]
        fn dominating_last_row_has_no_forgetting(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 5), 2..5)) {
            let k = rows.len();
            let mut tri: Vec<Vec<f64>> = rows.iter().enumerate().map(|(i, r)| r[..=i].to_vec()).collect();
            for j in 0..k {
                let best = (j..k).map(|l| tri[l][j]).fold(0.0, f64::max);
                tri[k - 1][j] = best;
            }
            let mat = AccuracyMatrix::from_rows(tri).unwrap();
            prop_assert!(average_forgetting(&mat, k).unwrap() <= 1e-12);
        }

        #[test]
        fn average_accuracy_ignores_order(mut row in proptest::collection::vec(0.0f64..=1.0, 3), seed in 0u64..100) {
            let build = |r: &[f64]| AccuracyMatrix::from_rows(vec![vec![0.0], vec![0.0, 0.0], r.to_vec()]).unwrap();
            let before = average_accuracy(&build(&row), 3).unwrap();
            row.rotate_left((seed % 3) as usize);
            row.swap(0, (seed % 2) as usize);
            prop_assert!((average_accuracy(&build(&row), 3).unwrap() - before).abs() < 1e-12);
        }
    }
}
