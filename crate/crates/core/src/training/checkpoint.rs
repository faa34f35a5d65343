//! Checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 8 bytes   magic "RKNCKPT\0"
//! u32       format version
//! u64       header length L
//! L bytes   JSON header
//! f64 × N   parameter block
//! ```
//!
//! The parameter block holds, in order: current gain parameters, current
//! Cholesky parameters, best gain parameters, best Cholesky parameters and,
//! when the header's `has_optimizer` is set, the gain network's Adam `m`,
//! `v` followed by the Cholesky network's Adam `m`, `v`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, TrainingConfig, TrainingState};
use crate::error::{Error, Result};
use crate::neural::{AdamState, NetworkSpec, ParameterStore};
use crate::rkn::RknModel;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RKNCKPT\0";

/// A training snapshot plus the provenance needed to reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainingState,
    pub config: TrainingConfig,
    pub init_seed: u64,
    pub dataset_fingerprint: String,
}

impl Checkpoint {
    pub fn best_model(&self) -> RknModel {
        self.state.best_model()
    }

    /// Fails with [`Error::SpecMismatch`] unless both network specs match.
    pub fn check_specs(&self, gain: &NetworkSpec, chol: &NetworkSpec) -> Result<()> {
        let model = &self.state.model;
        if model.gain_net().spec() != gain || model.chol_net().spec() != chol {
            return Err(Error::SpecMismatch(format!(
                "checkpoint has gain {:?} / Cholesky {:?}, expected {:?} / {:?}",
                model.gain_net().spec(),
                model.chol_net().spec(),
                gain,
                chol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    state_dim: usize,
    measurement_dim: usize,
    squared_features: bool,
    gain_spec: NetworkSpec,
    chol_spec: NetworkSpec,
    init_seed: u64,
    config: TrainingConfig,
    epoch: usize,
    best_epoch: usize,
    /// Bit pattern, so an infinite initial value survives JSON.
    best_val_nll_bits: u64,
    epochs_since_best: usize,
    history: Vec<[u64; 5]>,
    dataset_fingerprint: String,
    has_optimizer: bool,
    gain_adam: Option<AdamHeader>,
    chol_adam: Option<AdamHeader>,
}

fn record_bits(r: &EpochRecord) -> [u64; 5] {
    [
        r.epoch as u64,
        r.train_nll.to_bits(),
        r.val_nll.to_bits(),
        r.val_mse_db.to_bits(),
        r.val_msmd.to_bits(),
    ]
}

fn record_from_bits(b: &[u64; 5]) -> EpochRecord {
    EpochRecord {
        epoch: b[0] as usize,
        train_nll: f64::from_bits(b[1]),
        val_nll: f64::from_bits(b[2]),
        val_mse_db: f64::from_bits(b[3]),
        val_msmd: f64::from_bits(b[4]),
    }
}

fn adam_header(a: &AdamState) -> AdamHeader {
    AdamHeader {
        lr: a.lr,
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        step: a.step,
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint, include_optimizer: bool) -> Result<()> {
    let s = &ckpt.state;
    let model = &s.model;
    let header = Header {
        state_dim: model.state_dim(),
        measurement_dim: model.measurement_dim(),
        squared_features: model.squared_features(),
        gain_spec: model.gain_net().spec().clone(),
        chol_spec: model.chol_net().spec().clone(),
        init_seed: ckpt.init_seed,
        config: ckpt.config.clone(),
        epoch: s.epoch,
        best_epoch: s.best_epoch,
        best_val_nll_bits: s.best_val_nll.to_bits(),
        epochs_since_best: s.epochs_since_best,
        history: s.history.iter().map(record_bits).collect(),
        dataset_fingerprint: ckpt.dataset_fingerprint.clone(),
        has_optimizer: include_optimizer,
        gain_adam: include_optimizer.then(|| adam_header(&s.gain_adam)),
        chol_adam: include_optimizer.then(|| adam_header(&s.chol_adam)),
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut blocks: Vec<&[f64]> = vec![
        &model.gain_params.values,
        &model.chol_params.values,
        &s.best_gain,
        &s.best_chol,
    ];
    if include_optimizer {
        blocks.extend([
            &s.gain_adam.m[..],
            &s.gain_adam.v[..],
            &s.chol_adam.m[..],
            &s.chol_adam.v[..],
        ]);
    }
    let floats: usize = blocks.iter().map(|b| b.len()).sum();
    let mut bytes = Vec::with_capacity(8 + 4 + 8 + json.len() + 8 * floats);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in blocks.into_iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    location: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::parse(
                    &self.location,
                    format!("file truncated while reading {what}"),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::parse(&self.location, "block size overflow"))?,
            what,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        location: path.display().to_string(),
    };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::parse(&r.location, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(r.take(4, "format version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::FormatVersionMismatch {
            expected: CHECKPOINT_FORMAT_VERSION,
            found: version,
        });
    }
    let header_len = u64::from_le_bytes(r.take(8, "header length")?.try_into().expect("8 bytes"));
    let header_len = usize::try_from(header_len)
        .map_err(|_| Error::parse(&r.location, "header length overflow"))?;
    let header: Header = serde_json::from_slice(r.take(header_len, "header")?)
        .map_err(|e| Error::parse(&r.location, e))?;

    let mut model = RknModel::zeros(
        header.state_dim,
        header.measurement_dim,
        header.squared_features,
        header.gain_spec.clone(),
        header.chol_spec.clone(),
    )?;
    let (ng, nc) = (model.gain_params.len(), model.chol_params.len());
    model.gain_params =
        ParameterStore::from_values(&header.gain_spec, r.floats(ng, "gain parameters")?)?;
    model.chol_params =
        ParameterStore::from_values(&header.chol_spec, r.floats(nc, "Cholesky parameters")?)?;
    let best_gain = r.floats(ng, "best gain parameters")?;
    let best_chol = r.floats(nc, "best Cholesky parameters")?;

    let location = r.location.clone();
    let restore = |h: Option<&AdamHeader>, m: Vec<f64>, v: Vec<f64>| -> Result<AdamState> {
        let h = h.ok_or_else(|| {
            Error::parse(&location, "optimizer flag set without optimizer header")
        })?;
        Ok(AdamState {
            lr: h.lr,
            beta1: h.beta1,
            beta2: h.beta2,
            eps: h.eps,
            step: h.step,
            m,
            v,
        })
    };
    let (gain_adam, chol_adam) = if header.has_optimizer {
        let gm = r.floats(ng, "gain optimizer state")?;
        let gv = r.floats(ng, "gain optimizer state")?;
        let cm = r.floats(nc, "Cholesky optimizer state")?;
        let cv = r.floats(nc, "Cholesky optimizer state")?;
        (
            restore(header.gain_adam.as_ref(), gm, gv)?,
            restore(header.chol_adam.as_ref(), cm, cv)?,
        )
    } else {
        (
            AdamState::new(ng, header.config.learning_rate),
            AdamState::new(nc, header.config.learning_rate),
        )
    };
    if r.pos != bytes.len() {
        return Err(Error::parse(
            &r.location,
            format!("{} trailing bytes", bytes.len() - r.pos),
        ));
    }

    let state = TrainingState {
        model,
        gain_adam,
        chol_adam,
        best_gain,
        best_chol,
        best_epoch: header.best_epoch,
        best_val_nll: f64::from_bits(header.best_val_nll_bits),
        epochs_since_best: header.epochs_since_best,
        epoch: header.epoch,
        history: header.history.iter().map(record_from_bits).collect(),
    };
    Ok(Checkpoint {
        state,
        config: header.config,
        init_seed: header.init_seed,
        dataset_fingerprint: header.dataset_fingerprint,
    })
}
