//! Finite-difference gradient verification.
//!
//! The oracle perturbs each parameter entry by `+h` and `-h`, re-evaluates
//! the objective, and forms the central difference `(f+ - f-) / 2h`.
//! Comparison against analytic gradients is norm-based per parameter:
//! entries with true gradient near zero would otherwise drown in
//! finite-difference roundoff even when the analytic values are right.

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;

/// Perturbation step used by the harness and the acceptance checks.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error bound under which a parameter's gradient counts as
/// verified.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Central-difference gradient of `f` with respect to every entry of every
/// parameter in `store`, in store order.
///
/// `f` must be a pure function of the store contents: it is evaluated
/// twice up front and a bitwise mismatch is reported as an error. The
/// store is perturbed in place and restored exactly.
pub fn finite_diff_grad<S, F>(store: &mut ParamStore<S>, h: f64, mut f: F) -> Result<Vec<Vec<S>>>
where
    S: Scalar,
    F: FnMut(&ParamStore<S>) -> Result<S>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Domain(format!("step size must be positive, got {h}")));
    }
    let probe1 = f(store)?.into_f64();
    let probe2 = f(store)?.into_f64();
    if probe1.to_bits() != probe2.to_bits() {
        return Err(Error::Autodiff(format!(
            "objective is not deterministic: {probe1:?} vs {probe2:?} on identical parameters"
        )));
    }

    let hs = S::from_f64(h);
    let ids: Vec<crate::param::ParamId> = store.iter().map(|(id, _, _)| id).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let n = store.tensor(id).numel();
        let mut grad = vec![S::zero(); n];
        for j in 0..n {
            let original = store.tensor(id).data()[j];
            store.tensor_mut(id).data_mut()[j] = original + hs;
            let plus = f(store)?.into_f64();
            store.tensor_mut(id).data_mut()[j] = original - hs;
            let minus = f(store)?.into_f64();
            store.tensor_mut(id).data_mut()[j] = original;
            grad[j] = S::from_f64((plus - minus) / (2.0 * h));
        }
        out.push(grad);
    }
    Ok(out)
}

/// Norm-based relative error between an analytic and a numeric gradient:
/// `|a - n| / (|a| + |n|)` in the Euclidean norm, and 0 when both vanish.
/// Panics if the slices differ in length; callers compare like with like.
pub fn relative_error<S: Scalar>(analytic: &[S], numeric: &[S]) -> f64 {
    assert_eq!(
        analytic.len(),
        numeric.len(),
        "gradient slices must have equal length"
    );
    let mut diff = 0.0;
    let mut na = 0.0;
    let mut nn = 0.0;
    for (&a, &n) in analytic.iter().zip(numeric) {
        let (a, n) = (a.into_f64(), n.into_f64());
        diff += (a - n) * (a - n);
        na += a * a;
        nn += n * n;
    }
    let denom = na.sqrt() + nn.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff.sqrt() / denom
    }
}

/// Outcome of comparing one parameter's analytic gradient against the
/// finite-difference oracle.
#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    pub rel_error: f64,
}

impl GroupCheck {
    pub fn compare<S: Scalar>(name: &str, analytic: &[S], numeric: &[S]) -> Self {
        let norm = |xs: &[S]| {
            xs.iter()
                .map(|x| {
                    let v = x.into_f64();
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        };
        Self {
            name: name.to_string(),
            analytic_norm: norm(analytic),
            numeric_norm: norm(numeric),
            rel_error: relative_error(analytic, numeric),
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.rel_error < tolerance
    }
}
