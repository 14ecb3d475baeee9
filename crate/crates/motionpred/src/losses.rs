//! Training objectives built on the autodiff tape.
//!
//! All losses reduce a prediction/target pair `[frames, joints, 3]` to a
//! scalar through the per-frame error `e_t`: the joint-averaged Euclidean
//! distance at frame `t` (optionally squared distances instead, which
//! keeps the objective smooth at zero error).
//!
//! Three objectives compose:
//! - the uncertainty-weighted loss `sum_t exp(-2 s_t)/2 * e_t + s_t`,
//!   where `s_t` is a trainable log-sigma per future frame; frames the
//!   optimizer finds hard earn larger sigmas and smaller weight, paid for
//!   by the `s_t` regularizer,
//! - the first-frame emphasis `omega * T * e_1 + sum_t e_t`, which anchors
//!   the transition out of the observed window,
//! - their blend `lambda * adaptive + (1 - lambda) * salient`.
//!
//! The blend always builds both branches, so the log-sigmas stay connected
//! to the graph even at `lambda = 0`; scaling by exactly 0.0 or 1.0 is
//! bitwise-neutral in IEEE arithmetic, so the endpoint identities hold
//! exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{BoundParams, ParamId};
use crate::tape::VarId;
use crate::tensor::fmt_shape;
use crate::{ParamStore, Tape, Tensor};

/// Weights of the combined objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Blend factor: 1.0 is purely uncertainty-weighted, 0.0 purely
    /// first-frame-emphasized.
    pub lambda: f64,
    /// First-frame emphasis strength.
    pub omega: f64,
    /// Use mean squared distances for the uncertainty-weighted branch
    /// instead of mean distances.
    pub squared_error: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.3,
            omega: 10.0,
            squared_error: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "loss.lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(Error::Config(format!(
                "loss.omega must be finite and non-negative, got {}",
                self.omega
            )));
        }
        Ok(())
    }
}

/// Trainable per-future-frame log-sigmas, kept in their own store so the
/// optimizer and checkpoints treat them like any other parameter group.
#[derive(Debug, Clone)]
pub struct UncertaintyParams {
    store: ParamStore,
    s: ParamId,
}

impl UncertaintyParams {
    /// All-zero log-sigmas (sigma = 1) for a horizon of `out_frames`.
    pub fn new(out_frames: usize) -> Result<Self> {
        Self::from_values(vec![0.0; out_frames])
    }

    /// Restores log-sigmas, e.g. from a checkpoint.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("uncertainty needs at least one frame".into()));
        }
        let n = values.len();
        let mut store = ParamStore::new();
        let s = store.insert("uncertainty.s", Tensor::new(vec![n], values)?)?;
        Ok(Self { store, s })
    }

    pub fn horizon(&self) -> usize {
        self.store.tensor(self.s).numel()
    }

    /// Current log-sigmas.
    pub fn log_sigmas(&self) -> &[f64] {
        self.store.tensor(self.s).data()
    }

    /// Current sigmas, `exp(s_t)`.
    pub fn sigmas(&self) -> Vec<f64> {
        self.log_sigmas().iter().map(|s| s.exp()).collect()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.store.bind(tape)
    }

    /// The log-sigma vector's node within a binding of this store.
    pub fn var(&self, bound: &BoundParams) -> VarId {
        bound.var(self.s)
    }
}

/// Per-frame errors `[frames]` between prediction and target, both
/// `[frames, joints, 3]`: the mean over joints of the Euclidean distance
/// (or of the squared distance with `squared` set).
///
/// The unsquared form differentiates through a square root, so its
/// gradient is undefined at exactly zero error; trainers start from
/// random parameters where this does not occur.
pub fn per_frame_errors(tape: &mut Tape, pred: VarId, target: VarId, squared: bool) -> Result<VarId> {
    let (ps, ts) = (tape.shape(pred), tape.shape(target));
    if ps.len() != 3 || ps != ts {
        return Err(Error::Shape(format!(
            "per-frame errors need matching rank-3 tensors, got {} vs {}",
            fmt_shape(ps),
            fmt_shape(ts)
        )));
    }
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    let dist_sq = tape.sum_axis(sq, 2)?;
    if squared {
        tape.mean_axis(dist_sq, 1)
    } else {
        let dist = tape.sqrt(dist_sq)?;
        tape.mean_axis(dist, 1)
    }
}

/// Plain scalar objective: the mean of the per-frame errors.
pub fn mpjpe_loss(tape: &mut Tape, pred: VarId, target: VarId) -> Result<VarId> {
    let e = per_frame_errors(tape, pred, target, false)?;
    tape.mean_all(e)
}

/// Uncertainty-weighted objective
/// `sum_t exp(-2 s_t)/2 * e_t + s_t` over the prediction horizon.
/// `log_sigmas` must have exactly one entry per predicted frame.
pub fn adaptive_loss(
    tape: &mut Tape,
    pred: VarId,
    target: VarId,
    log_sigmas: VarId,
    squared: bool,
) -> Result<VarId> {
    let frames = tape.shape(pred).first().copied().unwrap_or(0);
    if tape.shape(log_sigmas) != [frames] {
        return Err(Error::Shape(format!(
            "log-sigmas shape {} does not cover {frames} predicted frames",
            fmt_shape(tape.shape(log_sigmas))
        )));
    }
    let e = per_frame_errors(tape, pred, target, squared)?;
    let neg2s = tape.scale(log_sigmas, -2.0)?;
    let precision = tape.exp(neg2s)?;
    let half_precision = tape.scale(precision, 0.5)?;
    let weighted = tape.mul(half_precision, e)?;
    let data_term = tape.sum_all(weighted)?;
    let regularizer = tape.sum_all(log_sigmas)?;
    tape.add(data_term, regularizer)
}

/// First-frame-emphasized objective
/// `omega * T * e_1 + sum_t e_t` over `T` predicted frames.
pub fn salient_loss(tape: &mut Tape, pred: VarId, target: VarId, omega: f64) -> Result<VarId> {
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(Error::Config(format!(
            "omega must be finite and non-negative, got {omega}"
        )));
    }
    let e = per_frame_errors(tape, pred, target, false)?;
    let frames = tape.shape(e)[0];
    let total = tape.sum_all(e)?;
    let first = tape.narrow(e, 0, 0, 1)?;
    let first = tape.sum_all(first)?;
    let emphasized = tape.scale(first, omega * frames as f64)?;
    tape.add(emphasized, total)
}

/// Blended training objective
/// `lambda * adaptive + (1 - lambda) * salient`.
pub fn combined_loss(
    tape: &mut Tape,
    pred: VarId,
    target: VarId,
    log_sigmas: VarId,
    config: &LossConfig,
) -> Result<VarId> {
    config.validate()?;
    let adaptive = adaptive_loss(tape, pred, target, log_sigmas, config.squared_error)?;
    let salient = salient_loss(tape, pred, target, config.omega)?;
    let wa = tape.scale(adaptive, config.lambda)?;
    let ws = tape.scale(salient, 1.0 - config.lambda)?;
    tape.add(wa, ws)
}
