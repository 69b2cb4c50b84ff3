//! Dataset loading, standardization, fold plans and a synthetic generator.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A multi-target regression dataset: `n` rows, `d` features, `m` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    targets: Array2<f64>,
    feature_names: Vec<String>,
    target_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        features: Array2<f64>,
        targets: Array2<f64>,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        let (nt, m) = targets.dim();
        if n == 0 {
            return Err(Error::InvalidDataset("dataset has no rows".into()));
        }
        if n != nt {
            return Err(Error::DimensionMismatch {
                context: "dataset rows",
                expected: n,
                got: nt,
            });
        }
        if d == 0 || m == 0 {
            return Err(Error::InvalidDataset(format!(
                "need at least one feature and one target column (got d={d}, m={m})"
            )));
        }
        if feature_names.len() != d {
            return Err(Error::DimensionMismatch {
                context: "feature names",
                expected: d,
                got: feature_names.len(),
            });
        }
        if target_names.len() != m {
            return Err(Error::DimensionMismatch {
                context: "target names",
                expected: m,
                got: target_names.len(),
            });
        }
        check_finite(&features.view(), 0)?;
        check_finite(&targets.view(), d)?;
        Ok(Self {
            features,
            targets,
            feature_names,
            target_names,
        })
    }

    /// Builds a dataset with generated names `x1..xd` and `t1..tm`.
    pub fn from_arrays(features: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        let feature_names = (1..=features.ncols()).map(|j| format!("x{j}")).collect();
        let target_names = (1..=targets.ncols()).map(|j| format!("t{j}")).collect();
        Self::new(features, targets, feature_names, target_names)
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn targets(&self) -> ArrayView2<'_, f64> {
        self.targets.view()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.ncols()
    }

    /// Copies the given rows, in the given order, into a new dataset.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Dataset> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.n_rows()) {
            return Err(Error::InvalidParameter(format!(
                "row index {bad} out of range for {} rows",
                self.n_rows()
            )));
        }
        Dataset::new(
            self.features.select(Axis(0), idx),
            self.targets.select(Axis(0), idx),
            self.feature_names.clone(),
            self.target_names.clone(),
        )
    }

    /// Writes features then targets as a headed CSV. Floats use the shortest
    /// round-tripping representation, so output is deterministic.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.feature_names.iter().chain(self.target_names.iter()))?;
        for (f, t) in self.features.rows().into_iter().zip(self.targets.rows()) {
            w.write_record(f.iter().chain(t.iter()).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_finite(m: &ArrayView2<'_, f64>, col_offset: usize) -> Result<()> {
    for ((row, col), v) in m.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                row,
                col: col + col_offset,
            });
        }
    }
    Ok(())
}

/// Loads a headed, comma-separated file. `target_columns` become the targets
/// in the given order; every other column is a feature, in header order.
pub fn load_csv(path: impl AsRef<Path>, target_columns: &[String]) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, target_columns)
}

pub fn read_csv<R: std::io::Read>(input: R, target_columns: &[String]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::EmptyFile);
    }
    if target_columns.is_empty() {
        return Err(Error::InvalidDataset("no target columns given".into()));
    }

    let mut target_pos = Vec::with_capacity(target_columns.len());
    for name in target_columns {
        let pos = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.clone()))?;
        target_pos.push(pos);
    }
    let feature_pos: Vec<usize> = (0..header.len())
        .filter(|p| !target_pos.contains(p))
        .collect();

    let mut feat = Vec::new();
    let mut targ = Vec::new();
    let mut n = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |pos: usize| -> Result<f64> {
            let raw = record.get(pos).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::NonNumericCell {
                row,
                col: header[pos].clone(),
            })
        };
        for &p in &feature_pos {
            feat.push(cell(p)?);
        }
        for &p in &target_pos {
            targ.push(cell(p)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyFile);
    }

    let features = Array2::from_shape_vec((n, feature_pos.len()), feat)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    let targets = Array2::from_shape_vec((n, target_pos.len()), targ)
        .map_err(|e| Error::InvalidDataset(e.to_string()))?;
    Dataset::new(
        features,
        targets,
        feature_pos.iter().map(|&p| header[p].clone()).collect(),
        target_columns.to_vec(),
    )
}

/// Per-column affine standardization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    /// Population standard deviation; zero-variance columns get 1.
    pub std: Vec<f64>,
}

impl ScalerParams {
    /// Fits mean and standard deviation on the rows in `fit_idx` only.
    pub fn fit(data: ArrayView2<'_, f64>, fit_idx: &[usize]) -> Result<Self> {
        if fit_idx.is_empty() {
            return Err(Error::EmptyFitSet);
        }
        let rows = data.select(Axis(0), fit_idx);
        let k = fit_idx.len() as f64;
        let mean: Array1<f64> = rows.sum_axis(Axis(0)) / k;
        let std = rows
            .columns()
            .into_iter()
            .zip(mean.iter())
            .map(|(col, &mu)| {
                let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / k;
                let sd = var.sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self {
            mean: mean.to_vec(),
            std,
        })
    }

    pub fn transform(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.mean[j]) / self.std[j]);
        }
        out
    }

    pub fn inverse_transform(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.std[j] + self.mean[j]);
        }
        out
    }
}

/// Scalers for both sides of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub features: ScalerParams,
    pub targets: ScalerParams,
}

/// Standardizes features and targets with statistics from `fit_idx` rows only.
pub fn standardize(data: &Dataset, fit_idx: &[usize]) -> Result<(Dataset, Standardizer)> {
    let features = ScalerParams::fit(data.features(), fit_idx)?;
    let targets = ScalerParams::fit(data.targets(), fit_idx)?;
    let scaled = Dataset::new(
        features.transform(data.features()),
        targets.transform(data.targets()),
        data.feature_names.clone(),
        data.target_names.clone(),
    )?;
    Ok((scaled, Standardizer { features, targets }))
}

/// Parameters for [`make_folds`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldParams {
    pub fold_count: usize,
    pub calibration_fraction: f64,
    pub seed: u64,
    /// Lower bound on the calibration size of every fold.
    pub min_calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_count: usize,
    pub calibration_fraction: f64,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Splits `0..n` into `fold_count` test folds after a seeded shuffle. For each
/// fold, `round(calibration_fraction * non_test)` rows (at least
/// `min_calibration`) are sampled uniformly from the non-test rows as the
/// calibration set; the rest form the proper training set.
pub fn make_folds(n: usize, params: FoldParams) -> Result<SplitPlan> {
    let k = params.fold_count;
    if k < 2 {
        return Err(Error::InvalidParameter(format!(
            "fold_count must be at least 2, got {k}"
        )));
    }
    let frac = params.calibration_fraction;
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "calibration_fraction must lie in (0, 1), got {frac}"
        )));
    }
    if n < 2 * k {
        return Err(Error::TooFewRows {
            needed: 2 * k,
            got: n,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test = order[start..start + size].to_vec();
        start += size;
        test.sort_unstable();

        let mut in_test = vec![false; n];
        for &i in &test {
            in_test[i] = true;
        }
        let mut rest: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let n_calib = ((frac * rest.len() as f64).round() as usize).max(params.min_calibration);
        if n_calib + 1 > rest.len() {
            return Err(Error::TooFewRows {
                needed: n_calib + 1 + test.len(),
                got: n,
            });
        }
        rest.shuffle(&mut rng);
        let mut calib = rest[..n_calib].to_vec();
        let mut train = rest[n_calib..].to_vec();
        calib.sort_unstable();
        train.sort_unstable();
        folds.push(Fold { train, calib, test });
    }

    Ok(SplitPlan {
        fold_count: k,
        calibration_fraction: frac,
        seed: params.seed,
        folds,
    })
}

/// Ground truth of a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    /// `d x m` coefficient matrix of the noiseless linear map.
    pub coefficients: Array2<f64>,
    /// `n x m` noise actually added to the targets.
    pub noise: Array2<f64>,
}

/// Generates `n` rows with `feature_dim` standard normal features and `m`
/// targets `y = x W + e`.
///
/// `W` has entries uniform on `[-1, 1]`. The noise is
/// `e_j = sqrt(dependence) * z_0 + sqrt(1 - dependence) * z_j` with independent
/// standard normals `z_0, ..., z_m`, so every noise component is N(0, 1) and
/// any two components have correlation exactly `dependence`.
pub fn synth_dataset(
    n: usize,
    m: usize,
    feature_dim: usize,
    dependence: f64,
    seed: u64,
) -> Result<Dataset> {
    synth_dataset_with_truth(n, m, feature_dim, dependence, seed).map(|(d, _)| d)
}

pub fn synth_dataset_with_truth(
    n: usize,
    m: usize,
    feature_dim: usize,
    dependence: f64,
    seed: u64,
) -> Result<(Dataset, SyntheticTruth)> {
    if n < 10 {
        return Err(Error::TooFewRows { needed: 10, got: n });
    }
    if m == 0 || feature_dim == 0 {
        return Err(Error::InvalidParameter(
            "need at least one target and one feature".into(),
        ));
    }
    if !(0.0..1.0).contains(&dependence) {
        return Err(Error::InvalidParameter(format!(
            "dependence must lie in [0, 1), got {dependence}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefficients =
        Array2::from_shape_simple_fn((feature_dim, m), || rng.gen_range(-1.0..=1.0));
    let features =
        Array2::from_shape_simple_fn((n, feature_dim), || rng.sample::<f64, _>(StandardNormal));

    let shared = dependence.sqrt();
    let own = (1.0 - dependence).sqrt();
    let mut noise = Array2::zeros((n, m));
    for mut row in noise.rows_mut() {
        let common: f64 = rng.sample(StandardNormal);
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = shared * common + own * z;
        }
    }

    let targets = features.dot(&coefficients) + &noise;
    let data = Dataset::from_arrays(features, targets)?;
    Ok((
        data,
        SyntheticTruth {
            coefficients,
            noise,
        },
    ))
}
