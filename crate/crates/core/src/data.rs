//! Dataset ingestion and generation: feature CSVs, windowed sensor series,
//! deterministic synthetic blobs, stratified splitting, and train-statistic
//! standardization.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// A labeled feature matrix.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::invalid(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        if features.rows() < num_classes {
            return Err(Error::invalid(format!(
                "{} samples cannot cover {} classes",
                features.rows(),
                num_classes
            )));
        }
        if !features.all_finite() {
            return Err(Error::invalid("dataset features contain NaN or Inf"));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    fn take_rows(&self, rows: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.features.select_rows(rows)?,
            rows.iter().map(|&r| self.labels[r]).collect(),
            self.num_classes,
            self.name.clone(),
        )
    }
}

/// Sliding-window extraction parameters for raw sensor series.
#[derive(Clone, Copy, Debug)]
pub struct WindowSpec {
    pub window_len: usize,
    pub stride: usize,
    pub flatten: bool,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.stride == 0 {
            return Err(Error::invalid("window_len and stride must be positive"));
        }
        if !self.flatten {
            // The MLP pipeline consumes flat vectors only.
            return Err(Error::invalid(
                "non-flattened windows are not supported; set flatten = true",
            ));
        }
        Ok(())
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

fn parse_cell(path: &Path, row: usize, col_name: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        path: path.display().to_string(),
        row,
        msg: format!("non-numeric cell '{raw}' in column '{col_name}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row,
            msg: format!("non-finite cell '{raw}' in column '{col_name}'"),
        });
    }
    Ok(v)
}

fn parse_label(path: &Path, row: usize, raw: &str) -> Result<usize> {
    let v = parse_cell(path, row, "label", raw)?;
    if v.fract() != 0.0 || v < 0.0 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row,
            msg: format!("label '{raw}' is not a non-negative integer"),
        });
    }
    Ok(v as usize)
}

/// Load a header-ed numeric CSV where one named column carries integer
/// class labels and every other column is a feature. Class count is the
/// highest label + 1. Features are left raw; standardization happens
/// after splitting so test rows never leak into the statistics.
pub fn load_feature_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: format!("label column '{label_column}' not found in header"),
        })?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: row_no,
            msg: e.to_string(),
        })?;
        let mut feats = Vec::with_capacity(feature_names.len());
        for (c, cell) in record.iter().enumerate() {
            if c == label_idx {
                labels.push(parse_label(path, row_no, cell)?);
            } else {
                feats.push(parse_cell(path, row_no, &headers[c], cell)?);
            }
        }
        rows.push(feats);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: "no data rows".to_string(),
        });
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    Dataset::new(
        Tensor::from_rows(&rows)?,
        labels,
        num_classes,
        file_stem(path),
    )
}

/// Load a raw sensor series CSV (`session_id`, label column, channels) and
/// cut it into flattened sliding windows. Each window's label is the
/// majority label inside it, ties resolved to the lower class index.
pub fn window_series_csv(path: &Path, spec: WindowSpec, label_column: &str) -> Result<Dataset> {
    spec.validate()?;
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::io(path.display().to_string(), std::io::Error::other(e)))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: e.to_string(),
        })?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let session_idx = find("session_id").ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        row: 0,
        msg: "column 'session_id' not found in header".to_string(),
    })?;
    let label_idx = find(label_column).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        row: 0,
        msg: format!("label column '{label_column}' not found in header"),
    })?;
    let channel_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != session_idx && i != label_idx)
        .collect();
    if channel_cols.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: "no channel columns".to_string(),
        });
    }

    // Sessions keyed by id, rows kept in file order; session order is
    // first appearance.
    let mut order: Vec<String> = Vec::new();
    let mut sessions: BTreeMap<String, (Vec<Vec<f64>>, Vec<usize>)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            row: row_no,
            msg: e.to_string(),
        })?;
        let sid = record.get(session_idx).unwrap_or("").to_string();
        let label = parse_label(path, row_no, record.get(label_idx).unwrap_or(""))?;
        let mut sample = Vec::with_capacity(channel_cols.len());
        for &c in &channel_cols {
            sample.push(parse_cell(
                path,
                row_no,
                &headers[c],
                record.get(c).unwrap_or(""),
            )?);
        }
        if !sessions.contains_key(&sid) {
            order.push(sid.clone());
        }
        let entry = sessions.entry(sid).or_default();
        entry.0.push(sample);
        entry.1.push(label);
    }
    if order.is_empty() {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 0,
            msg: "no data rows".to_string(),
        });
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    for sid in &order {
        let (samples, row_labels) = &sessions[sid];
        if samples.len() < spec.window_len {
            return Err(Error::invalid(format!(
                "window length {} exceeds session '{}' length {}",
                spec.window_len,
                sid,
                samples.len()
            )));
        }
        let mut start = 0;
        while start + spec.window_len <= samples.len() {
            let mut flat = Vec::with_capacity(spec.window_len * channel_cols.len());
            for sample in &samples[start..start + spec.window_len] {
                flat.extend_from_slice(sample);
            }
            rows.push(flat);
            labels.push(majority_label(&row_labels[start..start + spec.window_len]));
            start += spec.stride;
        }
    }
    let num_classes = labels.iter().max().unwrap() + 1;
    Dataset::new(
        Tensor::from_rows(&rows)?,
        labels,
        num_classes,
        file_stem(path),
    )
}

/// Most frequent label; ties resolved to the lower class index.
pub fn majority_label(labels: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(l, _)| l)
        .expect("non-empty window")
}

/// Gaussian blobs around well-separated seeded random centers. The center
/// layout rejects candidates closer than 4 x spread to any accepted
/// center; if 1000 draws cannot satisfy that, the spread is too large for
/// the sampling box.
pub fn synth_blobs(
    n_per_class: usize,
    num_classes: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 || dim == 0 {
        return Err(Error::invalid("blob sizes must be positive"));
    }
    if !(spread > 0.0) {
        return Err(Error::invalid("spread must be positive"));
    }
    let mut rng = rng::stream(seed, rng::SALT_BLOBS);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut attempts = 0;
    while centers.len() < num_classes {
        attempts += 1;
        if attempts > 1000 {
            return Err(Error::invalid(format!(
                "could not place {num_classes} blob centers at min distance {}: spread too large",
                4.0 * spread
            )));
        }
        let candidate: Vec<f64> = (0..dim).map(|_| rng.random_range(-10.0..10.0)).collect();
        let min_dist = centers
            .iter()
            .map(|c| {
                c.iter()
                    .zip(&candidate)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        if min_dist >= 4.0 * spread {
            centers.push(candidate);
        }
    }

    let normal = StandardNormal;
    let mut rows = Vec::with_capacity(n_per_class * num_classes);
    let mut labels = Vec::with_capacity(n_per_class * num_classes);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..n_per_class {
            let row: Vec<f64> = center
                .iter()
                .map(|&m| {
                    let z: f64 = normal.sample(&mut rng);
                    m + spread * z
                })
                .collect();
            rows.push(row);
            labels.push(c);
        }
    }
    Dataset::new(Tensor::from_rows(&rows)?, labels, num_classes, "synth")
}

/// Stratified split: per class, a seeded shuffle sends round(f * n_c)
/// samples to the test side and the rest to train.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must lie in (0,1), got {test_fraction}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for (i, &l) in dataset.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let mut rng = rng::stream(seed, rng::SALT_SPLIT);
    let mut train_rows = Vec::new();
    let mut test_rows = Vec::new();
    for (c, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < 2 {
            return Err(Error::invalid(format!(
                "class {c} has {} samples; at least 2 required to split",
                indices.len()
            )));
        }
        indices.shuffle(&mut rng);
        let n_test = (test_fraction * indices.len() as f64).round() as usize;
        test_rows.extend_from_slice(&indices[..n_test]);
        train_rows.extend_from_slice(&indices[n_test..]);
    }
    Ok((
        dataset.take_rows(&train_rows)?,
        dataset.take_rows(&test_rows)?,
    ))
}

/// Per-column standardization fitted on the train set and applied to both
/// sides. A variance floor of 1e-12 maps constant columns to all zeros.
pub fn standardize(train: &mut Dataset, test: &mut Dataset) -> Result<()> {
    if train.dim() != test.dim() {
        return Err(Error::ShapeMismatch {
            op: "standardize",
            lhs: train.features.shape_string(),
            rhs: test.features.shape_string(),
        });
    }
    let (n, d) = train.features.shape();
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (c, m) in means.iter_mut().enumerate() {
            *m += train.features.get(r, c);
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            let dv = train.features.get(r, c) - means[c];
            stds[c] += dv * dv;
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).max(1e-12).sqrt();
    }
    for ds in [train, test] {
        let rows = ds.features.rows();
        for r in 0..rows {
            for c in 0..d {
                let v = (ds.features.get(r, c) - means[c]) / stds[c];
                ds.features.set(r, c, v);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn feature_csv_shape_arithmetic() {
        let (_d, path) = write_tmp("f0,label\n1,0\n0,1\n");
        let ds = load_feature_csv(&path, "label").unwrap();
        assert_eq!(ds.features.shape(), (2, 1));
        assert_eq!(ds.labels, vec![0, 1]);
        assert_eq!(ds.num_classes, 2);
    }

    #[test]
    fn feature_csv_rejects_non_numeric_cell_with_row() {
        let (_d, path) = write_tmp("f0,label\n1,0\nx,1\n");
        let err = load_feature_csv(&path, "label").unwrap_err().to_string();
        assert!(
            err.contains("row 2") && err.contains("non-numeric"),
            "{err}"
        );
    }

    #[test]
    fn feature_csv_rejects_ragged_rows() {
        let (_d, path) = write_tmp("f0,f1,label\n1,2,0\n1,0\n");
        assert!(load_feature_csv(&path, "label").is_err());
    }

    #[test]
    fn feature_csv_rejects_empty_and_bad_labels() {
        let (_d1, p1) = write_tmp("f0,label\n");
        assert!(load_feature_csv(&p1, "label").is_err());
        let (_d2, p2) = write_tmp("f0,label\n1,1.5\n");
        assert!(load_feature_csv(&p2, "label").is_err());
        let (_d3, p3) = write_tmp("f0,label\n1,0\n2,nan\n");
        assert!(load_feature_csv(&p3, "label").is_err());
    }

    #[test]
    fn constant_column_standardizes_to_zeros() {
        let mut train = Dataset::new(
            Tensor::from_rows(&[vec![5.0, 1.0], vec![5.0, 3.0]]).unwrap(),
            vec![0, 1],
            2,
            "t",
        )
        .unwrap();
        let mut test = train.clone();
        standardize(&mut train, &mut test).unwrap();
        assert_eq!(train.features.get(0, 0), 0.0);
        assert_eq!(train.features.get(1, 0), 0.0);
        assert_eq!(test.features.get(0, 0), 0.0);
    }

    #[test]
    fn standardized_train_stats_are_zero_mean_unit_variance() {
        let ds = synth_blobs(30, 3, 4, 1.0, 11).unwrap();
        let (mut train, mut test) = split(&ds, 0.2, 1).unwrap();
        standardize(&mut train, &mut test).unwrap();
        let (n, d) = train.features.shape();
        for c in 0..d {
            let mean: f64 = (0..n).map(|r| train.features.get(r, c)).sum::<f64>() / n as f64;
            let var: f64 = (0..n)
                .map(|r| (train.features.get(r, c) - mean).powi(2))
                .sum::<f64>()
                / n as f64;
            assert!(mean.abs() < 1e-9, "column {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-9, "column {c} var {var}");
        }
    }

    #[test]
    fn standardization_never_consults_test_rows() {
        let base = Dataset::new(
            Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0], vec![4.0]]).unwrap(),
            vec![0, 1, 0, 1],
            2,
            "t",
        )
        .unwrap();
        let mut train_a = base.clone();
        let mut test_sentinel = Dataset::new(
            Tensor::from_rows(&[vec![1e9], vec![-1e9]]).unwrap(),
            vec![0, 1],
            2,
            "t",
        )
        .unwrap();
        let mut train_b = base.clone();
        let mut test_benign = Dataset::new(
            Tensor::from_rows(&[vec![2.0], vec![3.0]]).unwrap(),
            vec![0, 1],
            2,
            "t",
        )
        .unwrap();
        standardize(&mut train_a, &mut test_sentinel).unwrap();
        standardize(&mut train_b, &mut test_benign).unwrap();
        assert_eq!(train_a.features, train_b.features);
    }

    #[test]
    fn window_count_formula() {
        // length 10, window 4, stride 2 -> 4 windows at offsets 0,2,4,6
        let mut csv = String::from("session_id,label,ch0\n");
        for t in 0..10 {
            csv.push_str(&format!("s1,0,{t}\n"));
        }
        let (_d, path) = write_tmp(&csv);
        let ds = window_series_csv(
            &path,
            WindowSpec {
                window_len: 4,
                stride: 2,
                flatten: true,
            },
            "label",
        )
        .unwrap();
        assert_eq!(ds.len(), 4);
        assert_eq!(ds.dim(), 4);
        // windows start at 0,2,4,6
        assert_eq!(ds.features.row_slice(3), &[6.0, 7.0, 8.0, 9.0]);
    }

    #[test]
    fn single_label_session_and_majority_tie() {
        assert_eq!(majority_label(&[1, 1, 1]), 1);
        assert_eq!(majority_label(&[0, 0, 1, 1]), 0);
        assert_eq!(majority_label(&[2, 1, 2, 1]), 1);
    }

    #[test]
    fn window_longer_than_session_names_it() {
        let (_d, path) =
            write_tmp("session_id,label,ch0\nabc,0,1\nabc,0,2\nzz,1,0\nzz,1,0\nzz,1,0\n");
        let err = window_series_csv(
            &path,
            WindowSpec {
                window_len: 3,
                stride: 1,
                flatten: true,
            },
            "label",
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("abc"), "{err}");
    }

    #[test]
    fn blobs_are_deterministic_and_sized() {
        let a = synth_blobs(50, 6, 5, 1.0, 3).unwrap();
        let b = synth_blobs(50, 6, 5, 1.0, 3).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn blobs_reject_oversized_spread() {
        assert!(synth_blobs(5, 8, 2, 50.0, 0).is_err());
    }

    #[test]
    fn split_arithmetic_and_determinism() {
        let ds = synth_blobs(50, 2, 3, 1.0, 5).unwrap();
        let (train, test) = split(&ds, 0.2, 9).unwrap();
        assert_eq!(train.len(), 80);
        assert_eq!(test.len(), 20);
        for c in 0..2 {
            assert_eq!(test.labels.iter().filter(|&&l| l == c).count(), 10);
        }
        let (train2, test2) = split(&ds, 0.2, 9).unwrap();
        assert_eq!(train.features, train2.features);
        assert_eq!(test.labels, test2.labels);
    }

    #[test]
    fn split_is_a_partition() {
        let ds = synth_blobs(13, 3, 2, 1.0, 2).unwrap();
        let (train, test) = split(&ds, 0.3, 4).unwrap();
        assert_eq!(train.len() + test.len(), ds.len());
        // multiset equality on (rounded features, label) pairs
        let key = |f: &[f64], l: usize| (f.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), l);
        let mut original: Vec<_> = (0..ds.len())
            .map(|r| key(ds.features.row_slice(r), ds.labels[r]))
            .collect();
        let mut recombined: Vec<_> = (0..train.len())
            .map(|r| key(train.features.row_slice(r), train.labels[r]))
            .chain((0..test.len()).map(|r| key(test.features.row_slice(r), test.labels[r])))
            .collect();
        original.sort();
        recombined.sort();
        assert_eq!(original, recombined);
        // stratification within one sample per class
        for c in 0..3 {
            let n_c = ds.labels.iter().filter(|&&l| l == c).count() as f64;
            let t_c = test.labels.iter().filter(|&&l| l == c).count() as f64;
            assert!((t_c - 0.3 * n_c).abs() <= 1.0);
        }
    }

    #[test]
    fn vanishing_spread_blobs_are_perfectly_learnable() {
        use crate::model::MlpConfig;
        use crate::trainer::{self, SpongeConfig, TrainConfig};
        let ds = synth_blobs(20, 3, 5, 0.01, 8).unwrap();
        let mlp = MlpConfig::new(5, vec![8], 3).unwrap();
        let tc = TrainConfig {
            epochs: 15,
            batch_size: 8,
            learning_rate: 5e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let (_m, history) = trainer::train(&ds, &mlp, &tc, &SpongeConfig::default()).unwrap();
        assert_eq!(history.last().unwrap().train_acc, 100.0);
    }

    #[test]
    fn split_rejects_tiny_class() {
        let ds = Dataset::new(
            Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            vec![0, 0, 1],
            2,
            "t",
        )
        .unwrap();
        assert!(split(&ds, 0.5, 0).is_err());
    }
}
