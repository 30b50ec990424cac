//! Dataset loading, normalization, synthetic generators and corruption
//! injectors.

use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::DataMatrix;
use crate::numeric::column_norms;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum DataSource {
    CsvFile {
        path: PathBuf,
        #[serde(default)]
        has_labels: bool,
    },
    SynthFig1 {
        seed: u64,
    },
    SynthBlobs {
        c: usize,
        per_cluster: usize,
        d: usize,
        separation: f64,
        seed: u64,
    },
    SynthRandom {
        d: usize,
        n: usize,
        seed: u64,
    },
    SynthMoons {
        per_moon: usize,
        noise: f64,
        #[serde(default = "default_lift")]
        lift: f64,
        seed: u64,
    },
}

fn default_lift() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub source: DataSource,
    #[serde(default)]
    pub normalize: bool,
}

impl DatasetSpec {
    /// Builds the dataset; relative CSV paths resolve against `base_dir`.
    pub fn load(&self, base_dir: Option<&Path>) -> Result<DataMatrix> {
        let x = match &self.source {
            DataSource::CsvFile { path, has_labels } => {
                let path = match base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                load_csv(&path, *has_labels)?
            }
            DataSource::SynthFig1 { seed } => synth_fig1(*seed),
            DataSource::SynthBlobs {
                c,
                per_cluster,
                d,
                separation,
                seed,
            } => synth_blobs(*c, *per_cluster, *d, *separation, *seed)?,
            DataSource::SynthRandom { d, n, seed } => synth_random(*d, *n, *seed)?,
            DataSource::SynthMoons {
                per_moon,
                noise,
                lift,
                seed,
            } => synth_moons(*per_moon, *noise, *lift, *seed)?,
        };
        if self.normalize {
            unit_normalize(&x)
        } else {
            Ok(x)
        }
    }
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok()
}

/// Reads samples-as-rows CSV into a features × samples matrix.
///
/// A first row containing any non-numeric cell is treated as a header. With
/// `has_labels`, the last column holds nonnegative integer class labels.
pub fn load_csv(path: &Path, has_labels: bool) -> Result<DataMatrix> {
    let file = std::fs::File::open(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(idx + 1, |p| p.line() as usize),
            column: None,
            message: e.to_string(),
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.iter().all(|c| c.trim().is_empty()) {
            continue;
        }
        if idx == 0 && record.iter().any(|c| parse_cell(c).is_none()) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    column: None,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let n_features = if has_labels {
            if record.len() < 2 {
                return Err(Error::Parse {
                    line,
                    column: None,
                    message: "need at least one feature and a label column".into(),
                });
            }
            record.len() - 1
        } else {
            record.len()
        };
        let mut row = Vec::with_capacity(n_features);
        for (col, cell) in record.iter().take(n_features).enumerate() {
            let v = parse_cell(cell).ok_or_else(|| Error::Parse {
                line,
                column: Some(col + 1),
                message: format!("non-numeric value '{}'", cell.trim()),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Parse {
                    line,
                    column: Some(col + 1),
                    message: format!("value {v} is not a finite nonnegative number"),
                });
            }
            row.push(v);
        }
        if has_labels {
            let cell = record.get(n_features).unwrap_or("").trim();
            let label = cell.parse::<usize>().map_err(|_| Error::Parse {
                line,
                column: Some(n_features + 1),
                message: format!("label '{cell}' is not a nonnegative integer"),
            })?;
            labels.push(label);
        }
        rows.push(row);
    }
    let d = width.map(|w| if has_labels { w - 1 } else { w }).unwrap_or(0);
    if rows.is_empty() || d == 0 {
        return Err(Error::Parse {
            line: 1,
            column: None,
            message: "file contains no data rows".into(),
        });
    }
    let n = rows.len();
    let x = Array2::from_shape_fn((d, n), |(k, i)| rows[i][k]);
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    DataMatrix::new(x, has_labels.then_some(labels), name)
}

/// Scales every sample to unit Euclidean norm.
pub fn unit_normalize(x: &DataMatrix) -> Result<DataMatrix> {
    let norms = column_norms(x.values());
    if let Some(i) = norms.iter().position(|&r| r == 0.0) {
        return Err(Error::InvalidInput(format!("sample {i} is all zeros and cannot be normalized")));
    }
    let values = x.values() / &norms.view().insert_axis(Axis(0));
    DataMatrix::new(values, x.labels().map(<[usize]>::to_vec), x.name())
}

/// 10 inliers around (5, 5) and 3 far outliers in the plane.
///
/// Labels are 0 for inliers and 1 for outliers. Outliers sit 5–20° off
/// alternating coordinate axes, far from the inlier direction, at least ten
/// times the inlier spread from the inlier mean.
pub fn synth_fig1(seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).expect("valid std");
    let mut x = Array2::<f64>::zeros((2, 13));
    for i in 0..10 {
        for k in 0..2 {
            x[[k, i]] = (5.0_f64 + noise.sample(&mut rng)).abs();
        }
    }
    let inliers = x.slice(ndarray::s![.., 0..10]);
    let mu = inliers.mean_axis(Axis(1)).expect("non-empty");
    let spread = inliers
        .columns()
        .into_iter()
        .map(|c| ((c[0] - mu[0]).powi(2) + (c[1] - mu[1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    let mu_norm = (mu[0] * mu[0] + mu[1] * mu[1]).sqrt();
    for k in 0..3 {
        let mut angle = rng.random_range(5.0f64..20.0).to_radians();
        if k % 2 == 1 {
            angle = std::f64::consts::FRAC_PI_2 - angle;
        }
        let mag = mu_norm + rng.random_range(20.0..30.0) * spread;
        let mut p = [mag * angle.cos(), mag * angle.sin()];
        while ((p[0] - mu[0]).powi(2) + (p[1] - mu[1]).powi(2)).sqrt() < 10.0 * spread {
            p = [p[0] * 1.1, p[1] * 1.1];
        }
        x[[0, 10 + k]] = p[0];
        x[[1, 10 + k]] = p[1];
    }
    let labels = (0..13).map(|i| usize::from(i >= 10)).collect();
    DataMatrix::new(x, Some(labels), "synth_fig1").expect("generator emits valid data")
}

/// `c` unit-variance Gaussian clusters in `d ≥ c` dimensions.
///
/// Cluster `k` is centered at `separation` on every coordinate `j ≡ k (mod c)`
/// and zero elsewhere; negative draws are clipped to zero.
pub fn synth_blobs(c: usize, per_cluster: usize, d: usize, separation: f64, seed: u64) -> Result<DataMatrix> {
    if c == 0 || per_cluster == 0 {
        return Err(Error::InvalidInput("need at least one cluster and one point per cluster".into()));
    }
    if d < c {
        return Err(Error::InvalidInput(format!("dimension {d} must be at least the cluster count {c}")));
    }
    if !(separation > 0.0) || !separation.is_finite() {
        return Err(Error::InvalidInput(format!("separation must be positive, got {separation}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("valid std");
    let n = c * per_cluster;
    let mut x = Array2::zeros((d, n));
    let mut labels = Vec::with_capacity(n);
    for k in 0..c {
        for p in 0..per_cluster {
            let i = k * per_cluster + p;
            for j in 0..d {
                let center = if j % c == k { separation } else { 0.0 };
                x[[j, i]] = (center + noise.sample(&mut rng)).max(0.0);
            }
            labels.push(k);
        }
    }
    DataMatrix::new(x, Some(labels), "synth_blobs")
}

/// i.i.d. uniform `[0, 1)` entries, unlabeled.
pub fn synth_random(d: usize, n: usize, seed: u64) -> Result<DataMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((d, n), |_| rng.random::<f64>());
    DataMatrix::new(x, None, "synth_random")
}

/// Two interleaved half circles shifted into the positive quadrant, with a
/// constant third feature `lift`.
pub fn synth_moons(per_moon: usize, noise: f64, lift: f64, seed: u64) -> Result<DataMatrix> {
    if per_moon == 0 {
        return Err(Error::InvalidInput("per_moon must be at least 1".into()));
    }
    if !(noise >= 0.0) || !(lift >= 0.0) {
        return Err(Error::InvalidInput("noise and lift must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let angle = Uniform::new(0.0, std::f64::consts::PI).expect("valid range");
    let n = 2 * per_moon;
    let mut pts = Array2::<f64>::zeros((2, n));
    for i in 0..per_moon {
        let t = angle.sample(&mut rng);
        pts[[0, i]] = t.cos();
        pts[[1, i]] = t.sin();
    }
    for i in per_moon..n {
        let t = angle.sample(&mut rng);
        pts[[0, i]] = 1.0 - t.cos();
        pts[[1, i]] = 0.5 - t.sin();
    }
    if noise > 0.0 {
        let jitter = Normal::new(0.0, noise).expect("valid std");
        pts.mapv_inplace(|v| v + jitter.sample(&mut rng));
    }
    for mut row in pts.rows_mut() {
        let min = row.iter().copied().fold(f64::INFINITY, f64::min);
        row.mapv_inplace(|v| v - min);
    }
    let x = concatenate(Axis(0), &[pts.view(), Array2::from_elem((1, n), lift).view()])
        .expect("matching widths");
    let labels = (0..n).map(|i| usize::from(i >= per_moon)).collect();
    DataMatrix::new(x, Some(labels), "synth_moons")
}

/// Appends `count` columns with entries uniform on `[0, 10 · max(X)]`.
///
/// Returns the augmented matrix and a mask that is `true` for original
/// samples. Injected samples get label `max_label + 1`.
pub fn inject_outlier_vectors(x: &DataMatrix, count: usize, seed: u64) -> Result<(DataMatrix, Vec<bool>)> {
    let n = x.n_samples();
    let mut mask = vec![true; n];
    if count == 0 {
        return Ok((x.clone(), mask));
    }
    let hi = 10.0 * x.values().iter().copied().fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = Array2::from_shape_fn((x.n_features(), count), |_| rng.random::<f64>() * hi);
    let values = concatenate(Axis(1), &[x.values().view(), extra.view()]).expect("matching heights");
    let labels = x.labels().map(|l| {
        let outlier = l.iter().copied().max().map_or(0, |m| m + 1);
        l.iter().copied().chain(std::iter::repeat_n(outlier, count)).collect()
    });
    mask.extend(std::iter::repeat_n(false, count));
    Ok((DataMatrix::new(values, labels, x.name())?, mask))
}

/// For `samples_per_class` samples of every class, overwrites a random
/// contiguous run of `run_length` features with uniform `[0, max(X)]` noise.
///
/// Returns the corrupted matrix and a mask that is `true` for modified samples.
pub fn inject_block_noise(
    x: &DataMatrix,
    run_length: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<(DataMatrix, Vec<bool>)> {
    let labels = x
        .labels()
        .ok_or_else(|| Error::InvalidInput("block noise needs class labels".into()))?;
    let (d, n) = x.values().dim();
    if run_length > d {
        return Err(Error::InvalidInput(format!("block of {run_length} features exceeds d = {d}")));
    }
    let mut mask = vec![false; n];
    if run_length == 0 || samples_per_class == 0 {
        return Ok((x.clone(), mask));
    }
    let hi = x.values().iter().copied().fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = x.values().clone();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        if members.len() < samples_per_class {
            return Err(Error::InvalidInput(format!(
                "class {class} has {} samples, fewer than {samples_per_class}",
                members.len()
            )));
        }
        let mut chosen: Vec<usize> = sample(&mut rng, members.len(), samples_per_class)
            .into_iter()
            .map(|j| members[j])
            .collect();
        chosen.sort_unstable();
        for i in chosen {
            let start = rng.random_range(0..=d - run_length);
            for k in start..start + run_length {
                values[[k, i]] = rng.random::<f64>() * hi;
            }
            mask[i] = true;
        }
    }
    Ok((DataMatrix::new(values, x.labels().map(<[usize]>::to_vec), x.name())?, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_with_labels() {
        let f = write_csv("1,2,0\n3,4,1\n");
        let x = load_csv(f.path(), true).unwrap();
        assert_eq!(x.values(), &array![[1.0, 3.0], [2.0, 4.0]]);
        assert_eq!(x.labels(), Some(&[0, 1][..]));
    }

    #[test]
    fn csv_header_is_skipped() {
        let f = write_csv("a,b\n1,2\n3,4\n");
        let x = load_csv(f.path(), false).unwrap();
        assert_eq!(x.values(), &array![[1.0, 3.0], [2.0, 4.0]]);
    }

    #[test]
    fn csv_negative_entry_names_position() {
        let f = write_csv("1,2\n3,-4\n");
        match load_csv(f.path(), false).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, Some(2));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_ragged_and_non_numeric_rows() {
        let f = write_csv("1,2\n3\n");
        assert!(matches!(load_csv(f.path(), false), Err(Error::Parse { line: 2, .. })));
        let f = write_csv("1,2\n3,x\n");
        assert!(matches!(load_csv(f.path(), false), Err(Error::Parse { line: 2, column: Some(2), .. })));
        let f = write_csv("1,2,0.5\n");
        assert!(matches!(load_csv(f.path(), true), Err(Error::Parse { column: Some(3), .. })));
    }

    #[test]
    fn csv_empty_file_is_error() {
        let f = write_csv("");
        assert!(matches!(load_csv(f.path(), false), Err(Error::Parse { .. })));
    }

    #[test]
    fn normalize_examples() {
        let x = DataMatrix::from_values(array![[3.0, 1.0], [4.0, 0.0]]).unwrap();
        let y = unit_normalize(&x).unwrap();
        assert!((y.values()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((y.values()[[1, 0]] - 0.8).abs() < 1e-15);
        let z = unit_normalize(&y).unwrap();
        for (a, b) in z.values().iter().zip(y.values().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_zero_column() {
        let x = DataMatrix::from_values(array![[1.0, 0.0], [1.0, 0.0]]).unwrap();
        let err = unit_normalize(&x).unwrap_err();
        assert!(err.to_string().contains("sample 1"));
    }

    #[test]
    fn fig1_shape_and_outlier_distance() {
        for seed in 0..20 {
            let x = synth_fig1(seed);
            assert_eq!(x.values().dim(), (2, 13));
            assert!(x.values().iter().all(|&v| v >= 0.0));
            let v = x.values();
            let mu = [
                (0..10).map(|i| v[[0, i]]).sum::<f64>() / 10.0,
                (0..10).map(|i| v[[1, i]]).sum::<f64>() / 10.0,
            ];
            let dist = |i: usize| ((v[[0, i]] - mu[0]).powi(2) + (v[[1, i]] - mu[1]).powi(2)).sqrt();
            let spread = (0..10).map(dist).fold(0.0, f64::max);
            for i in 10..13 {
                assert!(dist(i) >= 10.0 * spread);
            }
        }
        assert_eq!(synth_fig1(3), synth_fig1(3));
    }

    #[test]
    fn blobs_basic_properties() {
        let x = synth_blobs(3, 1, 4, 10.0, 1).unwrap();
        assert_eq!(x.n_samples(), 3);
        assert_eq!(synth_blobs(3, 5, 6, 8.0, 2).unwrap(), synth_blobs(3, 5, 6, 8.0, 2).unwrap());
        assert!(synth_blobs(3, 5, 2, 8.0, 2).is_err());
        assert!(synth_blobs(3, 5, 4, 0.0, 2).is_err());
    }

    #[test]
    fn moons_are_nonnegative_and_labeled() {
        let x = synth_moons(20, 0.1, 6.0, 4).unwrap();
        assert_eq!(x.values().dim(), (3, 40));
        assert!(x.values().iter().all(|&v| v >= 0.0));
        assert!(x.values().row(2).iter().all(|&v| v == 6.0));
        assert_eq!(x.labels().unwrap().iter().filter(|&&l| l == 1).count(), 20);
    }

    #[test]
    fn outlier_injection() {
        let x = synth_blobs(2, 4, 3, 5.0, 0).unwrap();
        let (same, mask) = inject_outlier_vectors(&x, 0, 1).unwrap();
        assert_eq!(same, x);
        assert!(mask.iter().all(|&m| m));
        let (y, mask) = inject_outlier_vectors(&x, 5, 1).unwrap();
        assert_eq!(y.n_samples(), 13);
        assert_eq!(mask.iter().filter(|&&m| !m).count(), 5);
        let hi = 10.0 * x.values().iter().copied().fold(0.0, f64::max);
        for i in 8..13 {
            assert!(y.values().column(i).iter().all(|&v| (0.0..=hi).contains(&v)));
            assert_eq!(y.labels().unwrap()[i], 2);
        }
        for i in 0..8 {
            assert_eq!(y.values().column(i), x.values().column(i));
        }
    }

    #[test]
    fn block_noise_counts_and_identity() {
        let x = synth_blobs(3, 6, 9, 5.0, 0).unwrap();
        let (same, mask) = inject_block_noise(&x, 0, 2, 1).unwrap();
        assert_eq!(same, x);
        assert!(mask.iter().all(|&m| !m));
        let (y, mask) = inject_block_noise(&x, 4, 2, 1).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 6);
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(y.values().column(i), x.values().column(i));
            }
        }
        assert!(inject_block_noise(&x, 10, 2, 1).is_err());
        assert!(inject_block_noise(&x, 2, 7, 1).is_err());
    }

    #[test]
    fn spec_round_trips_through_json_shape() {
        let spec = DatasetSpec {
            source: DataSource::SynthBlobs {
                c: 2,
                per_cluster: 3,
                d: 2,
                separation: 4.0,
                seed: 9,
            },
            normalize: true,
        };
        let x = spec.load(None).unwrap();
        let norms = column_norms(x.values());
        assert!(norms.iter().all(|r| (r - 1.0).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn normalized_columns_have_unit_norm(seed in 0u64..1000, d in 1usize..8, n in 1usize..12) {
            let x = synth_random(d, n, seed).unwrap();
            let y = unit_normalize(&x).unwrap();
            for r in column_norms(y.values()).iter() {
                prop_assert!((r - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn generators_are_nonnegative_and_deterministic(seed in 0u64..1000) {
            let gens = [
                synth_fig1(seed),
                synth_blobs(3, 4, 5, 3.0, seed).unwrap(),
                synth_random(3, 4, seed).unwrap(),
                synth_moons(5, 0.2, 1.0, seed).unwrap(),
            ];
            for g in &gens {
                prop_assert!(g.values().iter().all(|&v| v >= 0.0));
            }
            prop_assert_eq!(&gens[1], &synth_blobs(3, 4, 5, 3.0, seed).unwrap());
            prop_assert_eq!(&gens[3], &synth_moons(5, 0.2, 1.0, seed).unwrap());
        }

        #[test]
        fn injectors_leave_originals_untouched(seed in 0u64..1000, count in 0usize..6, run in 0usize..5) {
            let x = synth_blobs(2, 5, 6, 4.0, seed).unwrap();
            let (y, mask) = inject_outlier_vectors(&x, count, seed).unwrap();
            for i in (0..y.n_samples()).filter(|&i| mask[i]) {
                prop_assert_eq!(y.values().column(i), x.values().column(i));
            }
            let (z, mask) = inject_block_noise(&x, run, 2, seed).unwrap();
            for i in (0..z.n_samples()).filter(|&i| !mask[i]) {
                prop_assert_eq!(z.values().column(i), x.values().column(i));
            }
        }
    }
}
