//! Dataset ingestion, stratified splitting, class centroids, and the
//! planted-feature synthetic generator used throughout the tests.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// Labeled sample matrix. Labels are re-encoded to 0..M−1 in first-appearance
/// order; original label strings live in `class_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl Dataset {
    /// Validating constructor for ingested data: every class 0..M−1 must have
    /// at least one sample and all entries must be finite.
    pub fn new(
        x: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if labels.len() != x.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if feature_names.len() != x.cols() {
            return Err(Error::Shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.cols()
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("dataset entries".into()));
        }
        let m = class_names.len();
        let mut seen = vec![false; m];
        for &l in &labels {
            if l >= m {
                return Err(Error::Data(format!("label {l} out of range for {m} classes")));
            }
            seen[l] = true;
        }
        if x.rows() > 0 && !seen.iter().all(|&s| s) {
            return Err(Error::Data("some classes have no samples".into()));
        }
        Ok(Dataset {
            x,
            labels,
            feature_names,
            class_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn d(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Sample indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_classes()];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// Row subset. Partitions produced this way keep the full class list and
    /// may legitimately miss classes when splitting unstratified.
    pub fn subset_rows(&self, rows: &[usize]) -> Dataset {
        let mut x = Matrix::zeros(rows.len(), self.d());
        let mut labels = Vec::with_capacity(rows.len());
        for (out_i, &r) in rows.iter().enumerate() {
            x.row_mut(out_i).copy_from_slice(self.x.row(r));
            labels.push(self.labels[r]);
        }
        Dataset {
            x,
            labels,
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        }
    }

    /// Column subset. Indices are applied in ascending order regardless of
    /// the order given, so selecting all features is the identity.
    pub fn restrict_features(&self, features: &[usize]) -> Result<Dataset> {
        let sorted: Vec<usize> = {
            let set: BTreeSet<usize> = features.iter().copied().collect();
            set.into_iter().collect()
        };
        if sorted.len() != features.len() {
            return Err(Error::Data("duplicate feature indices".into()));
        }
        if let Some(&bad) = sorted.iter().find(|&&f| f >= self.d()) {
            return Err(Error::Data(format!(
                "feature index {bad} out of range for d={}",
                self.d()
            )));
        }
        let mut x = Matrix::zeros(self.n(), sorted.len());
        for i in 0..self.n() {
            let src = self.x.row(i);
            for (out_j, &f) in sorted.iter().enumerate() {
                x.set(i, out_j, src[f]);
            }
        }
        Ok(Dataset {
            x,
            labels: self.labels.clone(),
            feature_names: sorted.iter().map(|&f| self.feature_names[f].clone()).collect(),
            class_names: self.class_names.clone(),
        })
    }

    /// Same metadata, replaced sample matrix (e.g. after standardization).
    pub fn with_x(&self, x: Matrix) -> Result<Dataset> {
        if x.rows() != self.n() || x.cols() != self.d() {
            return Err(Error::Shape(format!(
                "replacement matrix {}x{} for dataset {}x{}",
                x.rows(),
                x.cols(),
                self.n(),
                self.d()
            )));
        }
        Ok(Dataset {
            x,
            labels: self.labels.clone(),
            feature_names: self.feature_names.clone(),
            class_names: self.class_names.clone(),
        })
    }
}

/// Ambient class centroids plus their adaptively sparsified versions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub base: Matrix,
    pub adapted: Matrix,
    pub epoch_stamp: usize,
}

impl CentroidSet {
    /// Hadamard update: adapted row j = base row j ⊙ spl (signed weights).
    pub fn readapt(&mut self, spl: &[f64], epoch: usize) {
        for j in 0..self.base.rows() {
            let from = self.base.row(j).to_vec();
            let row = self.adapted.row_mut(j);
            for ((a, b), w) in row.iter_mut().zip(from).zip(spl) {
                *a = b * w;
            }
        }
        self.epoch_stamp = epoch;
    }
}

/// Per-class means. `adapted` starts equal to `base`.
pub fn compute_centroids(ds: &Dataset) -> CentroidSet {
    let m = ds.num_classes();
    let d = ds.d();
    let mut base = Matrix::zeros(m, d);
    let mut counts = vec![0usize; m];
    for i in 0..ds.n() {
        let j = ds.labels[i];
        counts[j] += 1;
        let row = base.row_mut(j);
        for (acc, &v) in row.iter_mut().zip(ds.x.row(i)) {
            *acc += v;
        }
    }
    for j in 0..m {
        if counts[j] > 0 {
            let inv = 1.0 / counts[j] as f64;
            for v in base.row_mut(j) {
                *v *= inv;
            }
        }
    }
    CentroidSet {
        adapted: base.clone(),
        base,
        epoch_stamp: 0,
    }
}

/// Train/validation/test fractions plus stratification flag and seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub stratified: bool,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(fractions: (f64, f64, f64), stratified: bool, seed: u64) -> Result<Self> {
        let (a, b, c) = fractions;
        for f in [a, b, c] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("split fraction {f} outside [0,1]")));
            }
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {a}+{b}+{c} do not sum to 1"
            )));
        }
        Ok(SplitSpec {
            fractions,
            stratified,
            seed,
        })
    }
}

/// Allocates `n` items to three partitions, carrying rounding error between
/// calls so grand totals stay within one sample of the requested fractions.
fn allocate(n: usize, fractions: (f64, f64, f64), err: &mut [f64; 3]) -> [usize; 3] {
    let ideal = [
        n as f64 * fractions.0,
        n as f64 * fractions.1,
        n as f64 * fractions.2,
    ];
    let raw = [ideal[0] + err[0], ideal[1] + err[1], ideal[2] + err[2]];
    let mut alloc = [0usize; 3];
    let mut assigned = 0usize;
    for p in 0..3 {
        alloc[p] = raw[p].max(0.0).floor() as usize;
        assigned += alloc[p];
    }
    let mut rem = n.saturating_sub(assigned);
    // Distribute leftovers by largest fractional part, ties to lower index.
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &p in order.iter().cycle() {
        if rem == 0 {
            break;
        }
        alloc[p] += 1;
        rem -= 1;
    }
    for p in 0..3 {
        err[p] += ideal[p] - alloc[p] as f64;
    }
    alloc
}

/// Index partition for a split. Indices within each partition are in the
/// shuffled draw order.
pub fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    SplitSpec::new(spec.fractions, spec.stratified, spec.seed)?;
    let fracs = [spec.fractions.0, spec.fractions.1, spec.fractions.2];
    let nonempty: Vec<usize> = (0..3).filter(|&p| fracs[p] > 0.0).collect();
    let mut rng = Rng::new(spec.seed);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];

    if spec.stratified {
        let groups = ds.class_indices();
        for (class, group) in groups.iter().enumerate() {
            if group.len() < nonempty.len() {
                return Err(Error::Data(format!(
                    "class {class} has {} samples, fewer than the {} nonempty partitions",
                    group.len(),
                    nonempty.len()
                )));
            }
        }
        let mut err = [0.0f64; 3];
        for group in &groups {
            let mut alloc = allocate(group.len(), spec.fractions, &mut err);
            // Every nonempty partition must receive at least one sample of
            // the class; steal from the largest allocation when needed.
            for &p in &nonempty {
                while alloc[p] == 0 {
                    let donor = (0..3)
                        .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a)))
                        .unwrap();
                    if alloc[donor] <= 1 && nonempty.contains(&donor) {
                        break;
                    }
                    alloc[donor] -= 1;
                    alloc[p] += 1;
                    err[donor] += 1.0;
                    err[p] -= 1.0;
                }
            }
            let mut idx = group.clone();
            rng.shuffle(&mut idx);
            let (a, b) = (alloc[0], alloc[0] + alloc[1]);
            parts[0].extend_from_slice(&idx[..a]);
            parts[1].extend_from_slice(&idx[a..b]);
            parts[2].extend_from_slice(&idx[b..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..ds.n()).collect();
        rng.shuffle(&mut idx);
        let mut err = [0.0f64; 3];
        let alloc = allocate(ds.n(), spec.fractions, &mut err);
        let (a, b) = (alloc[0], alloc[0] + alloc[1]);
        parts[0] = idx[..a].to_vec();
        parts[1] = idx[a..b].to_vec();
        parts[2] = idx[b..].to_vec();
    }
    let [train, val, test] = parts;
    Ok((train, val, test))
}

/// Stratified (or plain random) partition into train/validation/test.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (tr, va, te) = split_indices(ds, spec)?;
    Ok((ds.subset_rows(&tr), ds.subset_rows(&va), ds.subset_rows(&te)))
}

/// Fold assignment for stratified k-fold cross-validation: per class, samples
/// are shuffled and dealt round-robin, so folds differ in size by at most one
/// per class.
pub fn stratified_kfold(ds: &Dataset, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("k-fold needs at least 2 folds, got {folds}")));
    }
    for (class, group) in ds.class_indices().iter().enumerate() {
        if group.len() < folds {
            return Err(Error::Data(format!(
                "class {class} has {} samples, fewer than {folds} folds",
                group.len()
            )));
        }
    }
    let mut rng = Rng::new(seed);
    let mut assignment = vec![Vec::new(); folds];
    for group in ds.class_indices() {
        let mut idx = group;
        rng.shuffle(&mut idx);
        for (pos, sample) in idx.into_iter().enumerate() {
            assignment[pos % folds].push(sample);
        }
    }
    Ok(assignment)
}

/// Which column holds the labels.
#[derive(Clone, Debug, PartialEq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl LabelColumn {
    pub fn parse(s: &str) -> LabelColumn {
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

/// Loads a comma-delimited numeric table with a header row and one label
/// column. Missing cells (empty strings) are mean-imputed per feature when
/// `impute_missing` is set, otherwise they are an error.
pub fn load_csv(path: &Path, label_column: &LabelColumn, impute_missing: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_idx = match label_column {
        LabelColumn::Index(i) => {
            if *i >= headers.len() {
                return Err(Error::Config(format!(
                    "label column index {i} out of range for {} columns",
                    headers.len()
                )));
            }
            *i
        }
        LabelColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("label column '{name}' not found in header")))?,
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let d = feature_names.len();

    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    let mut labels_raw: Vec<String> = Vec::new();
    for (row_i, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: row_i + 2,
                col: 0,
                msg: format!("{} fields, expected {}", record.len(), headers.len()),
            });
        }
        let mut row = Vec::with_capacity(d);
        for (col_i, field) in record.iter().enumerate() {
            if col_i == label_idx {
                labels_raw.push(field.to_string());
                continue;
            }
            if field.is_empty() {
                row.push(None);
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: row_i + 2,
                col: col_i + 1,
                msg: format!("cannot parse '{field}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_i + 2,
                    col: col_i + 1,
                    msg: format!("non-finite value '{field}'"),
                });
            }
            row.push(Some(v));
        }
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 {
        return Err(Error::Data("empty data file".into()));
    }

    // Column means over non-missing values, for imputation.
    let mut means = vec![0.0f64; d];
    let mut counts = vec![0usize; d];
    for row in &rows {
        for (j, cell) in row.iter().enumerate() {
            if let Some(v) = cell {
                means[j] += v;
                counts[j] += 1;
            }
        }
    }
    for j in 0..d {
        if counts[j] > 0 {
            means[j] /= counts[j] as f64;
        }
    }

    let mut data = Vec::with_capacity(n * d);
    for (row_i, row) in rows.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            match cell {
                Some(v) => data.push(*v),
                None if impute_missing => {
                    if counts[j] == 0 {
                        return Err(Error::Data(format!(
                            "feature '{}' has no observed values to impute from",
                            feature_names[j]
                        )));
                    }
                    data.push(means[j]);
                }
                None => {
                    return Err(Error::Parse {
                        row: row_i + 2,
                        col: if j < label_idx { j + 1 } else { j + 2 },
                        msg: "missing value (pass --impute-missing to mean-impute)".into(),
                    });
                }
            }
        }
    }

    // First-appearance label encoding.
    let mut class_names: Vec<String> = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for raw in labels_raw {
        let id = match class_names.iter().position(|c| *c == raw) {
            Some(i) => i,
            None => {
                class_names.push(raw);
                class_names.len() - 1
            }
        };
        labels.push(id);
    }
    if class_names.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 classes, found {}",
            class_names.len()
        )));
    }

    Dataset::new(Matrix::from_vec(n, d, data)?, labels, feature_names, class_names)
}

/// Writes a dataset back to CSV (label column last); floats use the shortest
/// round-tripping representation so load ∘ save is exact.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.feature_names.clone();
    header.push("label".to_string());
    writer.write_record(&header)?;
    for i in 0..ds.n() {
        let mut record: Vec<String> = ds.x.row(i).iter().map(|v| format!("{v}")).collect();
        record.push(ds.class_names[ds.labels[i]].clone());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Two-class planted-feature generator. Class 0 is N(0, noise_std²) on every
/// feature; class 1 additionally gets +shift on the informative features.
/// Returns the dataset and the sorted informative indices as ground truth.
pub fn make_synthetic(
    n_per_class: usize,
    d: usize,
    informative: &[usize],
    shift: f64,
    noise_std: f64,
    seed: u64,
) -> Result<(Dataset, Vec<usize>)> {
    let info: BTreeSet<usize> = informative.iter().copied().collect();
    if let Some(&bad) = info.iter().find(|&&f| f >= d) {
        return Err(Error::Data(format!("informative index {bad} out of range for d={d}")));
    }
    let mut rng = Rng::new(seed);
    let n = 2 * n_per_class;
    let mut x = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for class in 0..2usize {
        for _ in 0..n_per_class {
            let i = labels.len();
            let row = x.row_mut(i);
            for (j, v) in row.iter_mut().enumerate() {
                *v = rng.normal(0.0, noise_std);
                if class == 1 && info.contains(&j) {
                    *v += shift;
                }
            }
            labels.push(class);
        }
    }
    let feature_names = (0..d).map(|j| format!("f{j}")).collect();
    let class_names = vec!["class0".to_string(), "class1".to_string()];
    let ds = Dataset::new(x, labels, feature_names, class_names)?;
    Ok((ds, info.into_iter().collect()))
}

/// Writes the synthetic ground-truth sidecar: one informative index per line.
pub fn save_sidecar(informative: &[usize], path: &Path) -> Result<()> {
    let body: String = informative.iter().map(|i| format!("{i}\n")).collect();
    std::fs::write(path, body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_dataset() -> Dataset {
        let x = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![2.0, 2.0],
            vec![1.0, 5.0],
            vec![3.0, 7.0],
        ])
        .unwrap();
        Dataset::new(
            x,
            vec![0, 0, 1, 1],
            vec!["a".into(), "b".into()],
            vec!["c0".into(), "c1".into()],
        )
        .unwrap()
    }

    #[test]
    fn centroid_two_point_mean() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap();
        let ds = Dataset::new(x, vec![0, 0], vec!["a".into(), "b".into()], vec!["c".into()])
            .unwrap();
        let cents = compute_centroids(&ds);
        assert_eq!(cents.base.row(0), &[1.0, 1.0]);
        assert_eq!(cents.base, cents.adapted);
        assert_eq!(cents.epoch_stamp, 0);
    }

    #[test]
    fn centroid_singleton_classes() {
        let ds = toy_dataset();
        let one_per_class = ds.subset_rows(&[0, 2]);
        let cents = compute_centroids(&one_per_class);
        assert_eq!(cents.base.row(0), one_per_class.x.row(0));
        assert_eq!(cents.base.row(1), one_per_class.x.row(1));
    }

    #[test]
    fn centroid_matches_loop_and_divide_oracle() {
        let mut rng = Rng::new(21);
        let n = 60;
        let d = 5;
        let data: Vec<f64> = (0..n * d).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ds = Dataset::new(
            Matrix::from_vec(n, d, data).unwrap(),
            labels.clone(),
            (0..d).map(|j| format!("f{j}")).collect(),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let cents = compute_centroids(&ds);
        for class in 0..3 {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            for j in 0..d {
                let want: f64 =
                    members.iter().map(|&i| ds.x.get(i, j)).sum::<f64>() / members.len() as f64;
                assert!((cents.base.get(class, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn readapt_multiplies_componentwise() {
        let ds = toy_dataset();
        let mut cents = compute_centroids(&ds);
        cents.readapt(&[0.5, -1.0], 7);
        assert_eq!(cents.adapted.get(0, 0), cents.base.get(0, 0) * 0.5);
        assert_eq!(cents.adapted.get(0, 1), cents.base.get(0, 1) * -1.0);
        assert_eq!(cents.epoch_stamp, 7);
        cents.readapt(&[1.0, 1.0], 8);
        assert_eq!(cents.adapted, cents.base);
    }

    fn balanced_dataset(per_class: usize, classes: usize) -> Dataset {
        let n = per_class * classes;
        let x = Matrix::zeros(n, 2);
        let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();
        Dataset::new(
            x,
            labels,
            vec!["a".into(), "b".into()],
            (0..classes).map(|c| format!("c{c}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn split_half_half_exact() {
        let ds = balanced_dataset(50, 2);
        let spec = SplitSpec::new((0.5, 0.0, 0.5), true, 1).unwrap();
        let (tr, va, te) = split(&ds, &spec).unwrap();
        assert_eq!(va.n(), 0);
        assert_eq!(tr.n(), 50);
        assert_eq!(te.n(), 50);
        for part in [&tr, &te] {
            for class in 0..2 {
                assert_eq!(part.labels.iter().filter(|&&l| l == class).count(), 25);
            }
        }
    }

    #[test]
    fn split_same_seed_identical() {
        let ds = balanced_dataset(30, 3);
        let spec = SplitSpec::new((0.6, 0.2, 0.2), true, 9).unwrap();
        let a = split_indices(&ds, &spec).unwrap();
        let b = split_indices(&ds, &spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = balanced_dataset(17, 4);
        for stratified in [true, false] {
            let spec = SplitSpec::new((0.7, 0.1, 0.2), stratified, 3).unwrap();
            let (tr, va, te) = split_indices(&ds, &spec).unwrap();
            let mut all: Vec<usize> = tr.iter().chain(&va).chain(&te).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..ds.n()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn split_975_counting_oracle() {
        // Eight classes with uneven sizes summing to 975.
        let sizes = [150usize, 150, 135, 135, 120, 105, 105, 75];
        let n: usize = sizes.iter().sum();
        assert_eq!(n, 975);
        let mut labels = Vec::new();
        for (c, &s) in sizes.iter().enumerate() {
            labels.extend(std::iter::repeat(c).take(s));
        }
        let ds = Dataset::new(
            Matrix::zeros(n, 3),
            labels,
            vec!["a".into(), "b".into(), "c".into()],
            (0..8).map(|c| format!("c{c}")).collect(),
        )
        .unwrap();
        let spec = SplitSpec::new((0.7, 0.1, 0.2), true, 5).unwrap();
        let (tr, va, te) = split_indices(&ds, &spec).unwrap();
        assert!((tr.len() as i64 - 682).abs() <= 1, "train {}", tr.len());
        assert!((va.len() as i64 - 97).abs() <= 1, "val {}", va.len());
        assert!((te.len() as i64 - 196).abs() <= 1, "test {}", te.len());
        for part in [&tr, &va, &te] {
            let classes: BTreeSet<usize> = part.iter().map(|&i| ds.labels[i]).collect();
            assert_eq!(classes.len(), 8);
        }
        // Per-class proportions within one sample of the request.
        for class in 0..8 {
            let in_train = tr.iter().filter(|&&i| ds.labels[i] == class).count() as f64;
            assert!((in_train - sizes[class] as f64 * 0.7).abs() <= 1.0);
        }
    }

    #[test]
    fn split_rejects_class_smaller_than_partitions() {
        let x = Matrix::zeros(5, 1);
        let ds = Dataset::new(
            x,
            vec![0, 0, 0, 0, 1],
            vec!["a".into()],
            vec!["c0".into(), "c1".into()],
        )
        .unwrap();
        let spec = SplitSpec::new((0.4, 0.3, 0.3), true, 0).unwrap();
        assert!(split_indices(&ds, &spec).is_err());
    }

    #[test]
    fn centroids_after_split_use_only_train_rows() {
        let mut rng = Rng::new(8);
        let n = 40;
        let data: Vec<f64> = (0..n * 3).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let ds = Dataset::new(
            Matrix::from_vec(n, 3, data).unwrap(),
            (0..n).map(|i| i % 2).collect(),
            vec!["a".into(), "b".into(), "c".into()],
            vec!["c0".into(), "c1".into()],
        )
        .unwrap();
        let spec = SplitSpec::new((0.5, 0.0, 0.5), true, 2).unwrap();
        let (tr_idx, _, _) = split_indices(&ds, &spec).unwrap();
        let train = ds.subset_rows(&tr_idx);
        let cents = compute_centroids(&train);
        for class in 0..2 {
            let members: Vec<&usize> =
                tr_idx.iter().filter(|&&i| ds.labels[i] == class).collect();
            for j in 0..3 {
                let want: f64 = members.iter().map(|&&i| ds.x.get(i, j)).sum::<f64>()
                    / members.len() as f64;
                assert!((cents.base.get(class, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn load_csv_toy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "x1,x2,target").unwrap();
        writeln!(f, "1.0,2.0,yes").unwrap();
        writeln!(f, "1.5,2.5,yes").unwrap();
        writeln!(f, "3.0,4.0,no").unwrap();
        writeln!(f, "3.5,4.5,no").unwrap();
        drop(f);
        let ds = load_csv(&path, &LabelColumn::Name("target".into()), false).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.d(), 2);
        assert_eq!(ds.class_names, vec!["yes", "no"]);
        assert_eq!(ds.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn load_csv_imputes_column_mean() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        std::fs::write(&path, "a,b,label\n1.0,5.0,x\n,7.0,x\n4.0,9.0,y\n").unwrap();
        let ds = load_csv(&path, &LabelColumn::Name("label".into()), true).unwrap();
        assert!((ds.x.get(1, 0) - 2.5).abs() < 1e-15); // mean of 1.0 and 4.0
        let err = load_csv(&path, &LabelColumn::Name("label".into()), false).unwrap_err();
        assert!(err.to_string().contains("row 3"), "{err}");
    }

    #[test]
    fn load_csv_rejects_bad_cell_and_single_class() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,label\noops,x\n").unwrap();
        let err = load_csv(&bad, &LabelColumn::Index(1), false).unwrap_err();
        match err {
            Error::Parse { row, col, .. } => {
                assert_eq!((row, col), (2, 1));
            }
            other => panic!("unexpected error {other}"),
        }
        let single = dir.path().join("single.csv");
        std::fs::write(&single, "a,label\n1.0,x\n2.0,x\n").unwrap();
        assert!(load_csv(&single, &LabelColumn::Index(1), false).is_err());
    }

    #[test]
    fn csv_round_trip_exact() {
        let (ds, _) = make_synthetic(5, 4, &[0, 2], 1.5, 0.7, 33).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.csv");
        save_csv(&ds, &path).unwrap();
        let back = load_csv(&path, &LabelColumn::Name("label".into()), false).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn synthetic_null_effect_when_shift_zero() {
        let (ds, info) = make_synthetic(10, 6, &[1, 3], 0.0, 1.0, 4).unwrap();
        assert_eq!(info, vec![1, 3]);
        // With shift 0 the generator draws both classes from the same
        // distribution; per-class means should be statistically close.
        let cents = compute_centroids(&ds);
        for j in 0..6 {
            assert!((cents.base.get(0, j) - cents.base.get(1, j)).abs() < 2.0);
        }
    }

    #[test]
    fn synthetic_noiseless_takes_exact_values() {
        let (ds, _) = make_synthetic(3, 4, &[1], 2.0, 0.0, 9).unwrap();
        for i in 0..ds.n() {
            for j in 0..4 {
                let want = if j == 1 && ds.labels[i] == 1 { 2.0 } else { 0.0 };
                assert_eq!(ds.x.get(i, j), want);
            }
        }
    }

    #[test]
    fn synthetic_informative_columns_have_largest_t_statistics() {
        // Oracle: two-sample t statistic per column; planted columns must
        // dominate every noise column.
        let (ds, info) = make_synthetic(200, 100, &(0..10).collect::<Vec<_>>(), 2.0, 1.0, 17)
            .unwrap();
        let mut t = vec![0.0f64; 100];
        let groups = ds.class_indices();
        for (j, tj) in t.iter_mut().enumerate() {
            let mut stats = [(0.0f64, 0.0f64, 0usize); 2];
            for class in 0..2 {
                let vals: Vec<f64> = groups[class].iter().map(|&i| ds.x.get(i, j)).collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                stats[class] = (mean, var, vals.len());
            }
            let (m0, v0, n0) = stats[0];
            let (m1, v1, n1) = stats[1];
            *tj = (m1 - m0).abs() / (v0 / n0 as f64 + v1 / n1 as f64).sqrt();
        }
        let min_info = info
            .iter()
            .map(|&j| t[j])
            .fold(f64::INFINITY, f64::min);
        let max_noise = (0..100)
            .filter(|j| !info.contains(j))
            .map(|j| t[j])
            .fold(0.0f64, f64::max);
        assert!(
            min_info > max_noise,
            "weakest informative t {min_info} vs strongest noise t {max_noise}"
        );
    }

    #[test]
    fn kfold_covers_each_sample_once() {
        let ds = balanced_dataset(13, 3);
        let folds = stratified_kfold(&ds, 5, 3).unwrap();
        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..ds.n()).collect::<Vec<_>>());
    }
}
