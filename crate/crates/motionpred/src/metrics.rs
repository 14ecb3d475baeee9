//! Evaluation metrics on plain values, independent of the autodiff tape.
//!
//! Position error is reported in the data's own units; jitter is always
//! converted to meters per cubic second so figures are comparable across
//! datasets recorded in millimeters and meters.
//!
//! Jitter summarizes how erratic the error curve is. For an error series
//! `x_0..x_{L-1}` with first differences `dx_t = x_{t+1} - x_t`, it is
//!
//! ```text
//! fps^3 / (T - 3) * sum_{t=0}^{T-3} (dx_{t+3} - 3 dx_{t+2} + 3 dx_{t+1} - dx_t)
//! ```
//!
//! with `T = L - 2` so the last summand's `dx_{t+3}` is the final first
//! difference. The summand is a third difference, so any series whose
//! errors follow a polynomial of degree two or less contributes exactly
//! zero. The divisor `T - 3` requires at least six error frames.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Units;
use crate::error::{Error, Result};
use crate::tensor::fmt_shape;
use crate::Tensor;

/// Smallest error-series length the jitter divisor supports.
pub const MIN_JITTER_FRAMES: usize = 6;

/// Per-frame mean joint distance between two `[frames, joints, 3]` poses.
pub fn frame_errors(pred: &Tensor, target: &Tensor) -> Result<Vec<f64>> {
    if pred.rank() != 3 || pred.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "frame errors need matching rank-3 tensors, got {} vs {}",
            fmt_shape(pred.shape()),
            fmt_shape(target.shape())
        )));
    }
    let (frames, joints, coords) = (pred.shape()[0], pred.shape()[1], pred.shape()[2]);
    let (p, t) = (pred.data(), target.data());
    let mut errors = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut sum = 0.0;
        for j in 0..joints {
            let base = (f * joints + j) * coords;
            let mut sq = 0.0;
            for c in 0..coords {
                let d = p[base + c] - t[base + c];
                sq += d * d;
            }
            sum += sq.sqrt();
        }
        errors.push(sum / joints as f64);
    }
    Ok(errors)
}

/// Mean of the per-frame errors over the whole horizon.
pub fn mpjpe(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let errors = frame_errors(pred, target)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// The 1-indexed frame a millisecond horizon lands on at the given frame
/// rate. The horizon must be a whole positive number of frames.
pub fn horizon_frame(fps: f64, horizon_ms: u64) -> Result<usize> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Config(format!("frame rate must be positive, got {fps}")));
    }
    let exact = horizon_ms as f64 * fps / 1000.0;
    let frame = exact.round();
    if (exact - frame).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "horizon {horizon_ms}ms is not a whole number of frames at {fps}fps"
        )));
    }
    if frame < 1.0 {
        return Err(Error::Config(format!(
            "horizon {horizon_ms}ms precedes the first predicted frame at {fps}fps"
        )));
    }
    Ok(frame as usize)
}

/// Reads the error at each millisecond horizon off a per-frame error
/// curve (frame 1 is the first predicted frame).
pub fn mpjpe_at_horizons(
    errors: &[f64],
    fps: f64,
    horizons_ms: &[u64],
) -> Result<BTreeMap<u64, f64>> {
    let mut out = BTreeMap::new();
    for &ms in horizons_ms {
        let frame = horizon_frame(fps, ms)?;
        if frame > errors.len() {
            return Err(Error::Config(format!(
                "horizon {ms}ms at {fps}fps lands on frame {frame}, beyond the {}-frame horizon",
                errors.len()
            )));
        }
        out.insert(ms, errors[frame - 1]);
    }
    Ok(out)
}

/// Signed jitter alongside the variant that takes absolute values of each
/// third difference; the signed form can hide oscillation through
/// cancellation, the absolute form cannot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterValue {
    pub signed: f64,
    pub abs: f64,
}

/// Jitter of an error series given in meters; result is in m/s^3.
pub fn jitter_from_errors(errors_m: &[f64], fps: f64) -> Result<JitterValue> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Config(format!("frame rate must be positive, got {fps}")));
    }
    let len = errors_m.len();
    if len < MIN_JITTER_FRAMES {
        return Err(Error::Domain(format!(
            "jitter needs at least {MIN_JITTER_FRAMES} error frames, got {len}"
        )));
    }
    let deltas: Vec<f64> = errors_m.windows(2).map(|w| w[1] - w[0]).collect();
    let span = len - 2;
    let scale = fps.powi(3) / (span - 3) as f64;
    let mut signed = 0.0;
    let mut abs = 0.0;
    for t in 0..=span - 3 {
        let d = deltas[t + 3] - 3.0 * deltas[t + 2] + 3.0 * deltas[t + 1] - deltas[t];
        signed += d;
        abs += d.abs();
    }
    Ok(JitterValue {
        signed: scale * signed,
        abs: scale * abs,
    })
}

/// Jitter over one millisecond window of the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterWindow {
    pub start_ms: u64,
    pub end_ms: u64,
    pub signed: f64,
    pub abs: f64,
}

/// Jitter over each `(start_ms, end_ms]` window of an error curve given
/// in the data's units. A window covers the frames strictly after
/// `start_ms` through the frame at `end_ms`; both bounds must land on
/// whole frames.
pub fn jitter_windows(
    errors: &[f64],
    fps: f64,
    units: Units,
    windows: &[(u64, u64)],
) -> Result<Vec<JitterWindow>> {
    let to_m = units.scale_to_meters();
    let errors_m: Vec<f64> = errors.iter().map(|e| e * to_m).collect();
    let mut out = Vec::with_capacity(windows.len());
    for &(start_ms, end_ms) in windows {
        if start_ms >= end_ms {
            return Err(Error::Config(format!(
                "jitter window {start_ms}..{end_ms}ms is empty"
            )));
        }
        let first = if start_ms == 0 { 1 } else { horizon_frame(fps, start_ms)? };
        let last = horizon_frame(fps, end_ms)?;
        if last > errors.len() {
            return Err(Error::Config(format!(
                "jitter window end {end_ms}ms lands on frame {last}, beyond the {}-frame horizon",
                errors.len()
            )));
        }
        let value = jitter_from_errors(&errors_m[first - 1..last], fps)?;
        out.push(JitterWindow {
            start_ms,
            end_ms,
            signed: value.signed,
            abs: value.abs,
        });
    }
    Ok(out)
}

/// Standard jitter windows for a horizon: the full span plus its last 60%
/// and last 20%. Candidates that do not land on whole frames or leave too
/// few frames for the jitter divisor are dropped.
pub fn default_jitter_windows(fps: f64, out_frames: usize) -> Vec<(u64, u64)> {
    let horizon = out_frames as f64 * 1000.0 / fps;
    if !horizon.is_finite() || (horizon - horizon.round()).abs() > 1e-9 || horizon < 1.0 {
        return Vec::new();
    }
    let h = horizon.round() as u64;
    let mut windows = Vec::new();
    for start in [0, 2 * h / 5, 4 * h / 5] {
        if start > 0 && (2 * h % 5 != 0 || 4 * h % 5 != 0) {
            continue;
        }
        let first = if start == 0 { 1 } else { match horizon_frame(fps, start) { Ok(f) => f, Err(_) => continue } };
        let frames = out_frames + 1 - first;
        if frames >= MIN_JITTER_FRAMES && !windows.contains(&(start, h)) {
            windows.push((start, h));
        }
    }
    windows
}

/// Constant-pose prediction: the last observed frame repeated over the
/// horizon. Beating this is the first bar any trained model must clear.
pub fn zero_velocity_baseline(obs: &Tensor, out_frames: usize) -> Result<Tensor> {
    if obs.rank() != 3 || obs.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "baseline needs a non-empty rank-3 observation, got {}",
            fmt_shape(obs.shape())
        )));
    }
    if out_frames == 0 {
        return Err(Error::Config("baseline horizon must be positive".into()));
    }
    let (frames, joints, coords) = (obs.shape()[0], obs.shape()[1], obs.shape()[2]);
    let last = &obs.data()[(frames - 1) * joints * coords..];
    let mut data = Vec::with_capacity(out_frames * joints * coords);
    for _ in 0..out_frames {
        data.extend_from_slice(last);
    }
    Tensor::new(vec![out_frames, joints, coords], data)
}

/// Element-wise mean of equally long error curves.
pub fn mean_curves(curves: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Data("cannot average zero error curves".into()))?;
    let len = first.len();
    let mut mean = vec![0.0; len];
    for curve in curves {
        if curve.len() != len {
            return Err(Error::Data(format!(
                "error curves differ in length: {} vs {len}",
                curve.len()
            )));
        }
        for (m, v) in mean.iter_mut().zip(curve) {
            *m += v;
        }
    }
    let n = curves.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

/// Evaluation summary for one predictor over a set of windows. Position
/// errors are in `units`; jitter is in m/s^3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub units: Units,
    pub n_windows: usize,
    pub mpjpe_overall: f64,
    pub mpjpe_at_ms: BTreeMap<u64, f64>,
    pub jitter: Vec<JitterWindow>,
}

impl MetricsReport {
    /// Single-level JSON object with self-describing keys, e.g.
    /// `mpjpe_400ms` and `jitter_abs_800_1000ms`.
    pub fn to_flat_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        map.insert("units".into(), serde_json::json!(self.units));
        map.insert("n_windows".into(), serde_json::json!(self.n_windows));
        map.insert("mpjpe_overall".into(), serde_json::json!(self.mpjpe_overall));
        for (ms, v) in &self.mpjpe_at_ms {
            map.insert(format!("mpjpe_{ms}ms"), serde_json::json!(v));
        }
        for w in &self.jitter {
            map.insert(
                format!("jitter_signed_{}_{}ms", w.start_ms, w.end_ms),
                serde_json::json!(w.signed),
            );
            map.insert(
                format!("jitter_abs_{}_{}ms", w.start_ms, w.end_ms),
                serde_json::json!(w.abs),
            );
        }
        serde_json::Value::Object(map)
    }
}
