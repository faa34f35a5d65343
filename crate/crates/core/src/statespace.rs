//! Linear state-space models, the bimodal measurement-noise process,
//! trajectory simulation and on-disk datasets.
//!
//! A dataset directory holds `meta.toml` (model matrices, noise parameters,
//! seeds, split sizes, format version and content fingerprint) and one CSV per
//! split (`train.csv`, `val.csv`, `test.csv`) with columns
//! `series,t,x_pos,x_vel,z,mode`. Floats are written with 17 significant
//! digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{cholesky_psd, Matrix, Real};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// `x_t = F x_{t-1} + v_t`, `z_t = H x_t + w_t` with `v_t ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStateSpaceModel<T> {
    pub f: Matrix<T>,
    pub h: Matrix<T>,
    pub q: Matrix<T>,
    pub dt: T,
}

/// The part of a model a learned filter may see: dynamics and observation
/// matrices, but no noise statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownDynamics<T> {
    pub f: Matrix<T>,
    pub h: Matrix<T>,
    pub dt: T,
}

impl<T: Real> LinearStateSpaceModel<T> {
    pub fn new(f: Matrix<T>, h: Matrix<T>, q: Matrix<T>, dt: T) -> Result<Self> {
        let m = f.rows();
        if !f.is_square() || h.cols() != m || q.shape() != (m, m) {
            return Err(Error::InvalidParameter(format!(
                "inconsistent model dimensions: F {:?}, H {:?}, Q {:?}",
                f.shape(),
                h.shape(),
                q.shape()
            )));
        }
        if !(dt > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        cholesky_psd(&q, T::from_f64_lossy(1e-12)).map_err(|e| {
            Error::InvalidParameter(format!("process noise covariance is not PSD: {e}"))
        })?;
        Ok(Self { f, h, q, dt })
    }

    pub fn state_dim(&self) -> usize {
        self.f.rows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.rows()
    }

    pub fn known_dynamics(&self) -> KnownDynamics<T> {
        KnownDynamics {
            f: self.f.clone(),
            h: self.h.clone(),
            dt: self.dt,
        }
    }

    pub fn cast<U: Real>(&self) -> LinearStateSpaceModel<U> {
        LinearStateSpaceModel {
            f: self.f.cast(),
            h: self.h.cast(),
            q: self.q.cast(),
            dt: U::from_f64_lossy(self.dt.to_f64_lossy()),
        }
    }
}

impl<T: Real> KnownDynamics<T> {
    pub fn state_dim(&self) -> usize {
        self.f.rows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.h.rows()
    }
}

/// 1D constant-velocity model with a position measurement and white
/// acceleration noise of variance `sigma_v_sq` on the velocity.
pub fn make_constant_velocity_model<T: Real>(
    dt: T,
    sigma_v_sq: T,
) -> Result<LinearStateSpaceModel<T>> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "time step must be positive, got {dt}"
        )));
    }
    if !(sigma_v_sq >= T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "process noise variance must be non-negative, got {sigma_v_sq}"
        )));
    }
    let (o, z) = (T::one(), T::zero());
    LinearStateSpaceModel::new(
        Matrix::from_rows(&[[o, dt], [z, o]]),
        Matrix::from_rows(&[[o, z]]),
        Matrix::from_rows(&[[z, z], [z, sigma_v_sq]]),
        dt,
    )
}

/// Mixture `p N(0, σ1²) + (1 − p) N(0, σ2²)` selected per step by a Bernoulli
/// indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BimodalNoiseSpec {
    pub p: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Expected variance `p σ1² + (1 − p) σ2²`.
    pub sigma_w_sq: f64,
}

impl BimodalNoiseSpec {
    pub fn new(p: f64, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "mode probability must be in [0, 1], got {p}"
            )));
        }
        if !(sigma1_sq > 0.0 && sigma2_sq > 0.0) || !sigma1_sq.is_finite() || !sigma2_sq.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "mode variances must be positive, got {sigma1_sq} and {sigma2_sq}"
            )));
        }
        Ok(Self {
            p,
            sigma1_sq,
            sigma2_sq,
            sigma_w_sq: p * sigma1_sq + (1.0 - p) * sigma2_sq,
        })
    }

    /// Variance of the measurement noise given the mode indicator.
    pub fn mode_variance(&self, mode: bool) -> f64 {
        if mode {
            self.sigma1_sq
        } else {
            self.sigma2_sq
        }
    }
}

/// Noise parameters for a heterogeneity level `ν = σ_w² / σ_v²` given in dB,
/// with `σ1² = sigma1_ratio · σ_w²` and `σ2²` fixed by the expected variance.
pub fn noise_from_heterogeneity(
    nu_db: f64,
    sigma_v_sq: f64,
    p: f64,
    sigma1_ratio: f64,
) -> Result<BimodalNoiseSpec> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "mode probability must be in (0, 1), got {p}"
        )));
    }
    if !(sigma_v_sq > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "process noise variance must be positive to define a heterogeneity level, got {sigma_v_sq}"
        )));
    }
    let sigma_w_sq = sigma_v_sq * 10f64.powf(nu_db / 10.0);
    let sigma1_sq = sigma1_ratio * sigma_w_sq;
    let sigma2_sq = (sigma_w_sq - p * sigma1_sq) / (1.0 - p);
    if !(sigma2_sq > 0.0) || !(sigma1_sq > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "heterogeneity {nu_db} dB with p = {p} and ratio {sigma1_ratio} gives non-positive mode variances \
             ({sigma1_sq}, {sigma2_sq})"
        )));
    }
    Ok(BimodalNoiseSpec {
        p,
        sigma1_sq,
        sigma2_sq,
        sigma_w_sq,
    })
}

/// Simulated series. Index `k` holds time step `t = k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub measurements: Vec<Vec<f64>>,
    pub modes: Vec<bool>,
    pub series_seed: u64,
}

/// What a filter is allowed to read from a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct Observations<'a, T> {
    pub measurements: &'a [Vec<T>],
    pub modes: Option<&'a [bool]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn observations(&self) -> Observations<'_, f64> {
        Observations {
            measurements: &self.measurements,
            modes: Some(&self.modes),
        }
    }
}

fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Simulates `horizon` steps from `x₀ ~ N(init_mean, init_cov)`.
///
/// Per step the draw order is: process noise (one standard normal per state
/// component), the mode indicator, then one standard normal per measurement
/// component. Normals come from `rand_distr::StandardNormal` (ziggurat).
pub fn sample_trajectory<R: Rng + ?Sized>(
    model: &LinearStateSpaceModel<f64>,
    noise: &BimodalNoiseSpec,
    horizon: usize,
    init_mean: &[f64],
    init_cov: &Matrix<f64>,
    rng: &mut R,
) -> Result<Trajectory> {
    let m = model.state_dim();
    let n = model.measurement_dim();
    if horizon == 0 {
        return Err(Error::InvalidParameter(
            "trajectory length must be at least 1".into(),
        ));
    }
    if init_mean.len() != m || init_cov.shape() != (m, m) {
        return Err(Error::InvalidParameter(format!(
            "initial condition dimensions ({}, {:?}) do not match state dimension {m}",
            init_mean.len(),
            init_cov.shape()
        )));
    }
    let init_factor = cholesky_psd(init_cov, 1e-12)
        .map_err(|e| Error::InvalidParameter(format!("initial covariance is not PSD: {e}")))?;
    let process_factor = cholesky_psd(&model.q, 1e-12).map_err(|e| {
        Error::InvalidParameter(format!("process noise covariance is not PSD: {e}"))
    })?;
    let process_factor = process_factor.to_matrix();
    let bernoulli = Bernoulli::new(noise.p)
        .map_err(|e| Error::InvalidParameter(format!("mode probability: {e}")))?;

    let xi = gaussian_vector(rng, m);
    let mut x: Vec<f64> = init_factor
        .to_matrix()
        .mul_vec(&xi)
        .iter()
        .zip(init_mean)
        .map(|(d, mu)| mu + d)
        .collect();

    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon),
        measurements: Vec::with_capacity(horizon),
        modes: Vec::with_capacity(horizon),
        series_seed: 0,
    };
    for _ in 0..horizon {
        let v = process_factor.mul_vec(&gaussian_vector(rng, m));
        x = model
            .f
            .mul_vec(&x)
            .iter()
            .zip(&v)
            .map(|(a, b)| a + b)
            .collect();
        let mode = bernoulli.sample(rng);
        let std = noise.mode_variance(mode).sqrt();
        let w = gaussian_vector(rng, n);
        let z = model
            .h
            .mul_vec(&x)
            .iter()
            .zip(&w)
            .map(|(hx, wi)| hx + std * wi)
            .collect();
        traj.states.push(x.clone());
        traj.measurements.push(z);
        traj.modes.push(mode);
    }
    Ok(traj)
}

/// Dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of series `index` in `split`: `mix64(mix64(mix64(master) ^ tag) ^ index)`.
pub fn derive_seed(master_seed: u64, split: Split, index: u64) -> u64 {
    mix64(mix64(mix64(master_seed) ^ split.tag()) ^ index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub dt: f64,
    pub sigma_v_sq: f64,
    pub noise: BimodalNoiseSpec,
    pub init_mean: Vec<f64>,
    pub init_cov: Vec<Vec<f64>>,
    pub sizes: SplitSizes,
    pub horizon: usize,
    pub master_seed: u64,
}

impl DatasetConfig {
    pub fn init_cov_matrix(&self) -> Result<Matrix<f64>> {
        let cols = self.init_cov.first().map_or(0, Vec::len);
        if self.init_cov.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidParameter(
                "initial covariance rows have unequal length".into(),
            ));
        }
        Ok(Matrix::new(
            self.init_cov.len(),
            cols,
            self.init_cov.concat(),
        )?)
    }

    /// SHA-256 over the canonical TOML encoding of this config.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).expect("dataset config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub model: LinearStateSpaceModel<f64>,
    pub noise: BimodalNoiseSpec,
    pub init_mean: Vec<f64>,
    pub init_cov: Matrix<f64>,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    pub master_seed: u64,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Trajectory] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    /// SHA-256 over the serialized split CSVs, in train/val/test order.
    pub fn fingerprint(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        for split in Split::ALL {
            hasher.update(split_csv(self.split(split), split)?.as_bytes());
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Generates all three splits. Series `i` of a split is simulated from its own
/// `ChaCha8Rng` seeded with [`derive_seed`], so the result is a pure function
/// of the config and independent of thread scheduling.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    let model = make_constant_velocity_model(config.dt, config.sigma_v_sq)?;
    let noise = BimodalNoiseSpec::new(
        config.noise.p,
        config.noise.sigma1_sq,
        config.noise.sigma2_sq,
    )?;
    let init_cov = config.init_cov_matrix()?;
    if config.horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let make_split = |split: Split| -> Result<Vec<Trajectory>> {
        (0..config.sizes.get(split))
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(config.master_seed, split, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut traj = sample_trajectory(
                    &model,
                    &noise,
                    config.horizon,
                    &config.init_mean,
                    &init_cov,
                    &mut rng,
                )?;
                traj.series_seed = seed;
                Ok(traj)
            })
            .collect()
    };
    Ok(Dataset {
        train: make_split(Split::Train)?,
        val: make_split(Split::Val)?,
        test: make_split(Split::Test)?,
        model,
        noise,
        init_mean: config.init_mean.clone(),
        init_cov,
        master_seed: config.master_seed,
        config: config.clone(),
    })
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub(crate) fn parse_f64(field: &str, location: &str) -> Result<f64> {
    match field.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        s => s
            .parse::<f64>()
            .map_err(|e| Error::parse(location, format!("{s:?}: {e}"))),
    }
}

const SPLIT_HEADER: &str = "series,t,x_pos,x_vel,z,mode";

fn split_csv(series: &[Trajectory], split: Split) -> Result<String> {
    let mut out =
        String::with_capacity(series.len() * series.first().map_or(0, Trajectory::len) * 96);
    out.push_str(SPLIT_HEADER);
    out.push('\n');
    for (i, traj) in series.iter().enumerate() {
        for k in 0..traj.len() {
            let (x, z) = (&traj.states[k], &traj.measurements[k]);
            if x.len() != 2 || z.len() != 1 {
                return Err(Error::InvalidParameter(format!(
                    "{} split: the dataset file format stores 2 states and 1 measurement per row, got {} and {}",
                    split.name(),
                    x.len(),
                    z.len()
                )));
            }
            writeln!(
                out,
                "{i},{},{},{},{},{}",
                k + 1,
                fmt_f64(x[0]),
                fmt_f64(x[1]),
                fmt_f64(z[0]),
                u8::from(traj.modes[k])
            )
            .expect("writing to a String cannot fail");
        }
    }
    Ok(out)
}

fn parse_split(
    text: &str,
    split: Split,
    master_seed: u64,
    expected_series: usize,
    horizon: usize,
) -> Result<Vec<Trajectory>> {
    let file = format!("{}.csv", split.name());
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse(&file, e))?
        .clone();
    if header.iter().collect::<Vec<_>>().join(",") != SPLIT_HEADER {
        return Err(Error::parse(&file, format!("unexpected header {header:?}")));
    }
    let mut series: Vec<Trajectory> = Vec::with_capacity(expected_series);
    for (row, record) in reader.records().enumerate() {
        let location = format!("{file} row {}", row + 2);
        let record = record.map_err(|e| Error::parse(&location, e))?;
        if record.len() != 6 {
            return Err(Error::parse(
                &location,
                format!("expected 6 fields, found {}", record.len()),
            ));
        }
        let idx: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| Error::parse(&location, e))?;
        let t: usize = record[1]
            .trim()
            .parse()
            .map_err(|e| Error::parse(&location, e))?;
        if idx == series.len() {
            series.push(Trajectory {
                states: Vec::with_capacity(horizon),
                measurements: Vec::with_capacity(horizon),
                modes: Vec::with_capacity(horizon),
                series_seed: derive_seed(master_seed, split, idx as u64),
            });
        } else if idx + 1 != series.len() {
            return Err(Error::parse(
                &location,
                format!("series index {idx} out of order"),
            ));
        }
        let traj = series.last_mut().expect("series pushed above");
        if t != traj.len() + 1 {
            return Err(Error::parse(
                &location,
                format!("time index {t} out of order"),
            ));
        }
        let mode = match record[5].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    &location,
                    format!("mode must be 0 or 1, got {other:?}"),
                ))
            }
        };
        traj.states.push(vec![
            parse_f64(&record[2], &location)?,
            parse_f64(&record[3], &location)?,
        ]);
        traj.measurements
            .push(vec![parse_f64(&record[4], &location)?]);
        traj.modes.push(mode);
    }
    if series.len() != expected_series {
        return Err(Error::parse(
            &file,
            format!("expected {expected_series} series, found {}", series.len()),
        ));
    }
    if let Some((i, t)) = series.iter().enumerate().find(|(_, t)| t.len() != horizon) {
        return Err(Error::parse(
            &file,
            format!("series {i} has {} steps, expected {horizon}", t.len()),
        ));
    }
    Ok(series)
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    format_version: u32,
    config_fingerprint: String,
    content_fingerprint: String,
    config: DatasetConfig,
    model: ModelMatrices,
}

#[derive(Serialize, Deserialize)]
struct ModelMatrices {
    f: Vec<Vec<f64>>,
    h: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
}

fn rows_of(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    m.as_slice()
        .chunks(m.cols().max(1))
        .map(<[f64]>::to_vec)
        .collect()
}

/// Writes the dataset directory, returning the content fingerprint.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut hasher = Sha256::new();
    for split in Split::ALL {
        let text = split_csv(dataset.split(split), split)?;
        hasher.update(text.as_bytes());
        let path = dir.join(format!("{}.csv", split.name()));
        fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    let content_fingerprint = hex::encode(hasher.finalize());
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        config_fingerprint: dataset.config.fingerprint(),
        content_fingerprint: content_fingerprint.clone(),
        config: dataset.config.clone(),
        model: ModelMatrices {
            f: rows_of(&dataset.model.f),
            h: rows_of(&dataset.model.h),
            q: rows_of(&dataset.model.q),
        },
    };
    let path = dir.join("meta.toml");
    let text = toml::to_string(&meta).map_err(|e| Error::parse("meta.toml", e))?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(content_fingerprint)
}

/// Reads a dataset directory written by [`save_dataset`], verifying the
/// format version and content fingerprint.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.toml");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let version = meta_text
        .parse::<toml::Table>()
        .map_err(|e| Error::parse("meta.toml", e))?
        .get("format_version")
        .and_then(toml::Value::as_integer)
        .ok_or_else(|| Error::parse("meta.toml", "missing format_version"))?;
    if version != i64::from(DATASET_FORMAT_VERSION) {
        return Err(Error::FormatVersionMismatch {
            expected: DATASET_FORMAT_VERSION,
            found: u32::try_from(version).unwrap_or(u32::MAX),
        });
    }
    let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| Error::parse("meta.toml", e))?;
    let config = meta.config;
    let model = make_constant_velocity_model(config.dt, config.sigma_v_sq)?;
    if rows_of(&model.f) != meta.model.f
        || rows_of(&model.h) != meta.model.h
        || rows_of(&model.q) != meta.model.q
    {
        return Err(Error::parse(
            "meta.toml",
            "model matrices disagree with dt and sigma_v_sq",
        ));
    }

    let mut hasher = Sha256::new();
    let mut splits = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = dir.join(format!("{}.csv", split.name()));
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        hasher.update(text.as_bytes());
        splits.push(parse_split(
            &text,
            split,
            config.master_seed,
            config.sizes.get(split),
            config.horizon,
        )?);
    }
    let found = hex::encode(hasher.finalize());
    if found != meta.content_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: meta.content_fingerprint,
            found,
        });
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        noise: config.noise,
        init_mean: config.init_mean.clone(),
        init_cov: config.init_cov_matrix()?,
        master_seed: config.master_seed,
        model,
        train,
        val,
        test,
        config,
    })
}

/// Reads only the stored fingerprints `(config, content)` of a dataset directory.
pub fn read_dataset_fingerprints(dir: &Path) -> Result<(String, String)> {
    let meta_path = dir.join("meta.toml");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = toml::from_str(&meta_text).map_err(|e| Error::parse("meta.toml", e))?;
    Ok((meta.config_fingerprint, meta.content_fingerprint))
}
