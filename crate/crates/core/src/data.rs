//! Bagged datasets: the in-memory representation, the bag-CSV format, the
//! synthetic generator, PCA preprocessing and bag-level stratified splits.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instances grouped into labelled bags.
///
/// Instances of a bag need not be contiguous; `bags` holds the partition and
/// `bag_of` its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct MilDataset {
    x: DMatrix<f64>,
    bag_ids: Vec<String>,
    bags: Vec<Vec<usize>>,
    bag_of: Vec<usize>,
    bag_labels: Vec<u8>,
    instance_labels: Vec<Option<u8>>,
}

impl MilDataset {
    /// `x` is N x D. `instance_labels` may be empty, meaning all unknown.
    pub fn new(
        x: DMatrix<f64>,
        bag_ids: Vec<String>,
        bags: Vec<Vec<usize>>,
        bag_labels: Vec<u8>,
        instance_labels: Vec<Option<u8>>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Dataset("no instances".into()));
        }
        if x.ncols() == 0 {
            return Err(Error::Dataset("instances have no features".into()));
        }
        if bags.len() != bag_labels.len() || bags.len() != bag_ids.len() {
            return Err(Error::Dataset(format!(
                "{} bags but {} labels and {} ids",
                bags.len(),
                bag_labels.len(),
                bag_ids.len()
            )));
        }
        let instance_labels = if instance_labels.is_empty() {
            vec![None; n]
        } else {
            instance_labels
        };
        if instance_labels.len() != n {
            return Err(Error::Dataset(format!(
                "{} instance labels for {n} instances",
                instance_labels.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dataset("non-finite feature value".into()));
        }
        let mut bag_of = vec![usize::MAX; n];
        for (b, members) in bags.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Dataset(format!("bag `{}` is empty", bag_ids[b])));
            }
            for &i in members {
                if i >= n {
                    return Err(Error::Dataset(format!("bag `{}` references instance {i} >= {n}", bag_ids[b])));
                }
                if bag_of[i] != usize::MAX {
                    return Err(Error::Dataset(format!("instance {i} belongs to more than one bag")));
                }
                bag_of[i] = b;
            }
        }
        if let Some(i) = bag_of.iter().position(|&b| b == usize::MAX) {
            return Err(Error::Dataset(format!("instance {i} belongs to no bag")));
        }
        for (b, &t) in bag_labels.iter().enumerate() {
            if t > 1 {
                return Err(Error::Dataset(format!("bag `{}` has label {t}", bag_ids[b])));
            }
            let labels: Vec<Option<u8>> = bags[b].iter().map(|&i| instance_labels[i]).collect();
            if labels.iter().flatten().any(|&y| y > 1) {
                return Err(Error::Dataset(format!("bag `{}` has an instance label > 1", bag_ids[b])));
            }
            let any_pos = labels.contains(&Some(1));
            let all_known = labels.iter().all(Option::is_some);
            if (any_pos && t == 0) || (all_known && !any_pos && t == 1) {
                return Err(Error::Dataset(format!(
                    "bag `{}` label {t} disagrees with the max of its instance labels",
                    bag_ids[b]
                )));
            }
        }
        Ok(Self {
            x,
            bag_ids,
            bags,
            bag_of,
            bag_labels,
            instance_labels,
        })
    }

    pub fn n_instances(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_bags(&self) -> usize {
        self.bags.len()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn bags(&self) -> &[Vec<usize>] {
        &self.bags
    }

    pub fn bag(&self, b: usize) -> &[usize] {
        &self.bags[b]
    }

    pub fn bag_of(&self, n: usize) -> usize {
        self.bag_of[n]
    }

    pub fn bag_ids(&self) -> &[String] {
        &self.bag_ids
    }

    pub fn bag_labels(&self) -> &[u8] {
        &self.bag_labels
    }

    pub fn instance_labels(&self) -> &[Option<u8>] {
        &self.instance_labels
    }

    pub fn has_instance_labels(&self) -> bool {
        self.instance_labels.iter().any(Option::is_some)
    }

    /// Features of the instances of bag `b`, one row each.
    pub fn bag_features(&self, b: usize) -> DMatrix<f64> {
        self.x.select_rows(self.bags[b].iter())
    }

    /// Bags of each class.
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.bag_labels.iter().filter(|&&t| t == 1).count();
        (self.n_bags() - pos, pos)
    }

    /// A new dataset holding the listed bags, instances renumbered contiguously.
    pub fn subset(&self, bag_indices: &[usize]) -> Result<Self> {
        let mut rows = Vec::new();
        let mut bags = Vec::with_capacity(bag_indices.len());
        let mut labels = Vec::new();
        for &b in bag_indices {
            let start = rows.len();
            rows.extend_from_slice(&self.bags[b]);
            bags.push((start..rows.len()).collect());
        }
        for &i in &rows {
            labels.push(self.instance_labels[i]);
        }
        Self::new(
            self.x.select_rows(rows.iter()),
            bag_indices.iter().map(|&b| self.bag_ids[b].clone()).collect(),
            bags,
            bag_indices.iter().map(|&b| self.bag_labels[b]).collect(),
            labels,
        )
    }

    /// Same bags and labels over a transformed feature matrix.
    pub fn with_features(&self, x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != self.n_instances() {
            return Err(Error::DimensionMismatch {
                expected: self.n_instances(),
                found: x.nrows(),
            });
        }
        Self::new(
            x,
            self.bag_ids.clone(),
            self.bags.clone(),
            self.bag_labels.clone(),
            self.instance_labels.clone(),
        )
    }
}

fn data_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a bag-CSV file: header, then `bag_id,bag_label,instance_label,f0,...`.
///
/// Bags are numbered in order of first appearance and instances are stored
/// bag by bag, keeping file order within a bag.
pub fn load_csv(path: impl AsRef<Path>) -> Result<MilDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => return Err(data_err(path, 1, "empty file")),
    };
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[0] != "bag_id" || cols[1] != "bag_label" || cols[2] != "instance_label" {
        return Err(data_err(
            path,
            1,
            "header must be `bag_id,bag_label,instance_label,f0,...` with at least one feature",
        ));
    }
    let d = cols.len() - 3;

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows_by_bag: Vec<Vec<(Vec<f64>, Option<u8>)>> = Vec::new();
    let mut bag_label: Vec<(u8, usize)> = Vec::new();

    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 3 {
            return Err(data_err(path, lineno, format!("expected {} fields, found {}", d + 3, fields.len())));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(data_err(path, lineno, "empty bag_id"));
        }
        let t: u8 = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => return Err(data_err(path, lineno, format!("bag_label must be 0 or 1, got `{other}`"))),
        };
        let y = match fields[2] {
            "0" => Some(0),
            "1" => Some(1),
            "-1" => None,
            other => {
                return Err(data_err(path, lineno, format!("instance_label must be 0, 1 or -1, got `{other}`")))
            }
        };
        let mut feats = Vec::with_capacity(d);
        for (j, s) in fields[3..].iter().enumerate() {
            let v: f64 = s
                .parse()
                .map_err(|_| data_err(path, lineno, format!("feature f{j} is not a number: `{s}`")))?;
            if !v.is_finite() {
                return Err(data_err(path, lineno, format!("feature f{j} is not finite")));
            }
            feats.push(v);
        }
        let b = match index.get(id) {
            Some(&b) => {
                let (prev, prev_line) = bag_label[b];
                if prev != t {
                    return Err(data_err(
                        path,
                        lineno,
                        format!("bag `{id}` has label {t} but line {prev_line} gave {prev}"),
                    ));
                }
                b
            }
            None => {
                let b = order.len();
                order.push(id.to_string());
                index.insert(id.to_string(), b);
                rows_by_bag.push(Vec::new());
                bag_label.push((t, lineno));
                b
            }
        };
        if y == Some(1) && t == 0 {
            return Err(data_err(path, lineno, format!("positive instance in negative bag `{id}`")));
        }
        rows_by_bag[b].push((feats, y));
    }
    if order.is_empty() {
        return Err(data_err(path, 2, "no data rows"));
    }

    let n: usize = rows_by_bag.iter().map(Vec::len).sum();
    let mut x = DMatrix::zeros(n, d);
    let mut bags = Vec::with_capacity(order.len());
    let mut labels = Vec::with_capacity(n);
    let mut i = 0;
    for rows in &rows_by_bag {
        let start = i;
        for (feats, y) in rows {
            for (j, v) in feats.iter().enumerate() {
                x[(i, j)] = *v;
            }
            labels.push(*y);
            i += 1;
        }
        bags.push((start..i).collect());
    }
    MilDataset::new(x, order, bags, bag_label.iter().map(|&(t, _)| t).collect(), labels)
        .map_err(|e| data_err(path, 0, e.to_string()))
}

/// Writes a dataset in the bag-CSV format, bag by bag.
pub fn save_csv(data: &MilDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header = String::from("bag_id,bag_label,instance_label");
    for j in 0..data.dim() {
        write!(header, ",f{j}").unwrap();
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for (b, members) in data.bags().iter().enumerate() {
        for &i in members {
            line.clear();
            let y = match data.instance_labels()[i] {
                Some(y) => i32::from(y),
                None => -1,
            };
            write!(line, "{},{},{}", data.bag_ids()[b], data.bag_labels()[b], y).unwrap();
            for j in 0..data.dim() {
                write!(line, ",{}", data.features()[(i, j)]).unwrap();
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Synthetic bag generator: Gaussian negatives at the origin, Gaussian
/// positives shifted by `separation` along the first axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_bags: usize,
    pub bag_size: usize,
    /// Inclusive range of positive instances in a positive bag.
    pub positives_per_positive_bag: (usize, usize),
    pub dim: usize,
    pub separation: f64,
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_bags: 200,
            bag_size: 10,
            positives_per_positive_bag: (1, 4),
            dim: 5,
            separation: 3.0,
            positive_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.positives_per_positive_bag;
        if self.num_bags == 0 {
            return Err(Error::invalid("num_bags", "must be >= 1"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("dim", "must be >= 1"));
        }
        if lo == 0 || lo > hi {
            return Err(Error::invalid("positives_per_positive_bag", format!("invalid range {lo}..={hi}")));
        }
        if self.bag_size < hi {
            return Err(Error::invalid(
                "bag_size",
                format!("{} is smaller than the maximum positive count {hi}", self.bag_size),
            ));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::invalid("positive_fraction", "must lie in (0, 1)"));
        }
        if !self.separation.is_finite() {
            return Err(Error::invalid("separation", "must be finite"));
        }
        Ok(())
    }
}

/// Generates a dataset with ground-truth instance labels.
pub fn gen_synth(cfg: &SynthConfig) -> Result<MilDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_pos = ((cfg.num_bags as f64 * cfg.positive_fraction).round() as usize).clamp(1, cfg.num_bags);
    let mut bag_is_pos: Vec<bool> = (0..cfg.num_bags).map(|b| b < n_pos).collect();
    bag_is_pos.shuffle(&mut rng);

    let n = cfg.num_bags * cfg.bag_size;
    let mut x = DMatrix::zeros(n, cfg.dim);
    let mut bags = Vec::with_capacity(cfg.num_bags);
    let mut labels = Vec::with_capacity(n);
    let (lo, hi) = cfg.positives_per_positive_bag;
    for (b, &pos) in bag_is_pos.iter().enumerate() {
        let mut ys = vec![0u8; cfg.bag_size];
        if pos {
            let k = rng.random_range(lo..=hi);
            ys[..k].fill(1);
            ys.shuffle(&mut rng);
        }
        let start = b * cfg.bag_size;
        for (k, &y) in ys.iter().enumerate() {
            let i = start + k;
            for j in 0..cfg.dim {
                let z: f64 = rng.sample(StandardNormal);
                x[(i, j)] = if j == 0 && y == 1 { z + cfg.separation } else { z };
            }
            labels.push(Some(y));
        }
        bags.push((start..start + cfg.bag_size).collect());
    }
    MilDataset::new(
        x,
        (0..cfg.num_bags).map(|b| format!("bag{b}")).collect(),
        bags,
        bag_is_pos.iter().map(|&p| u8::from(p)).collect(),
        labels,
    )
}

/// Principal-component projection fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaTransform {
    /// D x k, orthonormal columns.
    pub components: DMatrix<f64>,
    pub mean: DVector<f64>,
    /// Variances along the retained components, non-increasing.
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaTransform {
    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.components.nrows()
    }

    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance <= 0.0 {
            return 1.0;
        }
        self.explained_variance.iter().sum::<f64>() / self.total_variance
    }

    /// Maps reduced coordinates back to the input space.
    pub fn reconstruct(&self, reduced: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = reduced * self.components.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }
}

/// Fits PCA with `k` components by eigendecomposition of the sample covariance.
pub fn fit_pca(x: &DMatrix<f64>, k: usize) -> Result<PcaTransform> {
    let (n, d) = x.shape();
    if k == 0 || k > n.min(d) {
        return Err(Error::invalid("k", format!("must lie in 1..={}, got {k}", n.min(d))));
    }
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = (n.max(2) - 1) as f64;
    let cov = centered.transpose() * &centered / denom;
    let cov = (&cov + cov.transpose()) * 0.5;
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = DMatrix::zeros(d, k);
    let mut explained_variance = Vec::with_capacity(k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        let mut col = eig.eigenvectors.column(idx).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col = -col;
        }
        components.set_column(c, &col);
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaTransform {
        components,
        mean,
        explained_variance,
        total_variance,
    })
}

/// Projects centered rows onto the retained components.
pub fn apply_pca(t: &PcaTransform, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != t.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: t.input_dim(),
            found: x.ncols(),
        });
    }
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= t.mean.transpose();
    }
    Ok(centered * &t.components)
}

/// Splits whole bags into train and test, preserving the class balance.
pub fn stratified_split(data: &MilDataset, test_fraction: f64, seed: u64) -> Result<(MilDataset, MilDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction", format!("must lie in (0, 1), got {test_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test = Vec::new();
    let mut train = Vec::new();
    for class in [0u8, 1u8] {
        let mut members: Vec<usize> = (0..data.n_bags()).filter(|&b| data.bag_labels()[b] == class).collect();
        if members.len() < 2 {
            return Err(Error::Dataset(format!(
                "stratified split needs at least 2 bags of class {class}, found {}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let k = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train)?, data.subset(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::BTreeSet;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn load_two_rows_one_bag() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "bag_id,bag_label,instance_label,f0,f1\nb,1,1,0.5,1\nb,1,-1,2,3.25\n");
        let d = load_csv(&p).unwrap();
        assert_eq!(d.n_instances(), 2);
        assert_eq!(d.n_bags(), 1);
        assert_eq!(d.bag_labels(), &[1]);
        assert_eq!(d.instance_labels(), &[Some(1), None]);
        assert_eq!(d.features()[(1, 1)], 3.25);
    }

    #[test]
    fn load_groups_non_contiguous_bags() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "a.csv",
            "bag_id,bag_label,instance_label,f0\nx,0,0,1\ny,1,-1,2\nx,0,0,3\n",
        );
        let d = load_csv(&p).unwrap();
        assert_eq!(d.bag_ids(), &["x".to_string(), "y".to_string()]);
        assert_eq!(d.bag(0), &[0, 1]);
        assert_eq!(d.features().column(0).as_slice(), &[1.0, 3.0, 2.0]);
    }

    #[test]
    fn load_reports_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let cases = [
            ("bag_id,bag_label,instance_label,f0\nb,1,1,0\nb,0,0,1\n", 3, "label"),
            ("bag_id,bag_label,instance_label,f0\nb,1,1,abc\n", 2, "not a number"),
            ("bag_id,bag_label,instance_label,f0\nb,1,1\n", 2, "fields"),
            ("bag_id,bag_label,instance_label,f0\nb,2,1,0\n", 2, "bag_label"),
            ("bag_id,bag_label,instance_label,f0\nb,0,1,0\n", 2, "positive instance"),
            ("", 1, "empty"),
            ("bag_id,bag_label,instance_label,f0\n", 2, "no data"),
            ("id,label,f0\n", 1, "header"),
        ];
        for (body, line, needle) in cases {
            let p = write(&dir, "bad.csv", body);
            match load_csv(&p) {
                Err(Error::Data { line: l, message, .. }) => {
                    assert_eq!(l, line, "{message}");
                    assert!(message.contains(needle), "{message}");
                }
                other => panic!("expected data error for {body:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn negative_bag_with_all_known_positive_label_is_rejected() {
        let x = DMatrix::zeros(2, 1);
        let err = MilDataset::new(x, vec!["b".into()], vec![vec![0, 1]], vec![1], vec![Some(0), Some(0)]);
        assert!(err.is_err());
    }

    #[test]
    fn dataset_rejects_overlapping_bags() {
        let x = DMatrix::zeros(2, 1);
        assert!(MilDataset::new(x.clone(), vec!["a".into(), "b".into()], vec![vec![0, 1], vec![1]], vec![0, 0], vec![]).is_err());
        assert!(MilDataset::new(x, vec!["a".into()], vec![vec![0]], vec![0], vec![]).is_err());
    }

    #[test]
    fn csv_round_trip_on_random_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let d = gen_synth(&SynthConfig {
            num_bags: 12,
            dim: 3,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        let p = dir.path().join("d.csv");
        save_csv(&d, &p).unwrap();
        assert_eq!(load_csv(&p).unwrap(), d);
    }

    #[test]
    fn synth_counts_and_labels() {
        let cfg = SynthConfig::default();
        let d = gen_synth(&cfg).unwrap();
        assert_eq!(d.n_instances(), 2000);
        assert_eq!(d.class_counts(), (100, 100));
        for b in 0..d.n_bags() {
            let npos = d.bag(b).iter().filter(|&&i| d.instance_labels()[i] == Some(1)).count();
            if d.bag_labels()[b] == 1 {
                assert!((1..=4).contains(&npos));
            } else {
                assert_eq!(npos, 0);
            }
        }
        assert_eq!(gen_synth(&cfg).unwrap(), d);
    }

    #[test]
    fn synth_config_validation() {
        let bad = SynthConfig {
            bag_size: 3,
            ..SynthConfig::default()
        };
        assert!(gen_synth(&bad).is_err());
        let bad = SynthConfig {
            positive_fraction: 1.0,
            ..SynthConfig::default()
        };
        assert!(gen_synth(&bad).is_err());
    }

    fn random_matrix(seed: u64, n: usize, d: usize) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn pca_full_rank_reconstructs_exactly() {
        let x = random_matrix(1, 15, 4);
        let t = fit_pca(&x, 4).unwrap();
        let back = t.reconstruct(&apply_pca(&t, &x).unwrap());
        assert_relative_eq!(back, x, epsilon = 1e-8);
        let ct = t.components.transpose() * &t.components;
        assert_relative_eq!(ct, DMatrix::identity(4, 4), epsilon = 1e-8);
    }

    #[test]
    fn pca_line_in_3d() {
        let x = DMatrix::from_fn(20, 3, |i, j| (i as f64 - 7.0) * [1.0, -2.0, 0.5][j] + 4.0);
        let t = fit_pca(&x, 1).unwrap();
        assert_relative_eq!(t.explained_variance_ratio(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn pca_projection_diagonalizes_covariance() {
        let x = random_matrix(2, 20, 5);
        let k = 3;
        let t = fit_pca(&x, k).unwrap();
        let y = apply_pca(&t, &x).unwrap();
        let cov = y.transpose() * &y / 19.0;

        // Oracle: eigenvalues by power iteration with deflation on the raw covariance.
        let mean = DVector::from_fn(5, |j, _| x.column(j).mean());
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= mean.transpose();
        }
        let mut a = c.transpose() * &c / 19.0;
        let mut eigs = Vec::new();
        for _ in 0..k {
            let mut v = DVector::from_element(5, 1.0);
            for _ in 0..5000 {
                v = &a * &v;
                v /= v.norm();
            }
            let lambda = (v.transpose() * &a * &v)[0];
            eigs.push(lambda);
            a -= lambda * &v * v.transpose();
        }
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    assert_relative_eq!(cov[(i, j)], eigs[i], epsilon = 1e-8);
                } else {
                    assert!(cov[(i, j)].abs() < 1e-8);
                }
            }
        }
        let ev = &t.explained_variance;
        assert!(ev.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn pca_reconstruction_error_non_increasing_in_k() {
        let x = random_matrix(3, 25, 6);
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let t = fit_pca(&x, k).unwrap();
            let err = (t.reconstruct(&apply_pca(&t, &x).unwrap()) - &x).norm();
            assert!(err <= prev + 1e-12);
            prev = err;
        }
        assert!(fit_pca(&x, 0).is_err());
        assert!(fit_pca(&x, 7).is_err());
    }

    fn balanced(pos: usize, neg: usize) -> MilDataset {
        let n = pos + neg;
        MilDataset::new(
            DMatrix::from_fn(n, 1, |i, _| i as f64),
            (0..n).map(|b| format!("b{b}")).collect(),
            (0..n).map(|b| vec![b]).collect(),
            (0..n).map(|b| u8::from(b < pos)).collect(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn split_preserves_strata() {
        let d = balanced(10, 10);
        let (train, test) = stratified_split(&d, 0.2, 1).unwrap();
        assert_eq!(test.class_counts(), (2, 2));
        assert_eq!(train.class_counts(), (8, 8));
        let a: BTreeSet<_> = train.bag_ids().iter().cloned().collect();
        let b: BTreeSet<_> = test.bag_ids().iter().cloned().collect();
        assert!(a.is_disjoint(&b));
        assert_eq!(a.union(&b).count(), 20);
    }

    #[test]
    fn split_depends_on_seed() {
        let d = balanced(10, 10);
        let parts: BTreeSet<Vec<String>> = (0..5)
            .map(|s| stratified_split(&d, 0.3, s).unwrap().1.bag_ids().to_vec())
            .collect();
        assert_eq!(parts.len(), 5);
        assert!(stratified_split(&balanced(1, 5), 0.2, 0).is_err());
        assert!(stratified_split(&d, 1.0, 0).is_err());
    }
}
