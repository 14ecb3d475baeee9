//! Adam optimizer with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;

/// Adam state for one [`ParamStore`]: hyperparameters, step counter, and
/// first/second moment buffers parallel to the store's parameters.
///
/// The update for each entry, at step `t` (1-based) with gradient `g`:
///
/// ```text
/// m <- b1 m + (1 - b1) g          mhat = m / (1 - b1^t)
/// v <- b2 v + (1 - b2) g^2        vhat = v / (1 - b2^t)
/// p <- p - lr * mhat / (sqrt(vhat) + eps)
/// ```
///
/// `eps` sits outside the square root.
#[derive(Debug, Clone)]
pub struct AdamState<S> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> AdamState<S> {
    /// Fresh state (zero moments) for the given store.
    pub fn new(store: &ParamStore<S>, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        validate_hyper(lr, beta1, beta2, epsilon)?;
        let m = store.iter().map(|(_, _, t)| vec![S::zero(); t.numel()]).collect();
        let v = store.iter().map(|(_, _, t)| vec![S::zero(); t.numel()]).collect();
        Ok(Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            m,
            v,
        })
    }

    /// Rebuilds state from checkpoint parts. Buffer layout must match the
    /// store parameter for parameter.
    pub fn from_parts(
        store: &ParamStore<S>,
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        step_count: u64,
        m: Vec<Vec<S>>,
        v: Vec<Vec<S>>,
    ) -> Result<Self> {
        validate_hyper(lr, beta1, beta2, epsilon)?;
        let numels: Vec<usize> = store.iter().map(|(_, _, t)| t.numel()).collect();
        let fits = |buf: &[Vec<S>]| {
            buf.len() == numels.len() && buf.iter().zip(&numels).all(|(b, &n)| b.len() == n)
        };
        if !fits(&m) || !fits(&v) {
            return Err(Error::Autodiff(
                "optimizer moment buffers do not match the parameter store".into(),
            ));
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            epsilon,
            step_count,
            m,
            v,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn beta1(&self) -> f64 {
        self.beta1
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moments(&self) -> &[Vec<S>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<S>] {
        &self.v
    }

    /// Checkpoint resume keeps two stores in lockstep with one shared
    /// counter; this re-synchronizes after `from_parts`.
    pub fn set_step_count(&mut self, step_count: u64) {
        self.step_count = step_count;
    }

    /// Applies one update using the gradients currently stored on the
    /// parameters. Every parameter must carry a gradient.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if store.len() != self.m.len() {
            return Err(Error::Autodiff(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                store.len()
            )));
        }
        let missing: Option<String> = store
            .iter()
            .find(|(_, _, t)| t.grad().is_none())
            .map(|(_, n, _)| n.to_string());
        if let Some(name) = missing {
            return Err(Error::Autodiff(format!(
                "parameter '{name}' has no gradient; run backward before stepping"
            )));
        }
        self.step_count += 1;
        let t = self.step_count;
        let bc1 = 1.0 - self.beta1.powf(t as f64);
        let bc2 = 1.0 - self.beta2.powf(t as f64);
        let (b1, b2) = (S::from_f64(self.beta1), S::from_f64(self.beta2));
        let one_m_b1 = S::from_f64(1.0 - self.beta1);
        let one_m_b2 = S::from_f64(1.0 - self.beta2);
        let (inv_bc1, inv_bc2) = (S::from_f64(1.0 / bc1), S::from_f64(1.0 / bc2));
        let (lr, eps) = (S::from_f64(self.lr), S::from_f64(self.epsilon));

        let ids: Vec<crate::param::ParamId> = store.iter().map(|(id, _, _)| id).collect();
        for (slot, id) in ids.into_iter().enumerate() {
            let tensor = store.tensor_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let data = tensor.data_mut();
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = b1 * m[j] + one_m_b1 * g;
                v[j] = b2 * v[j] + one_m_b2 * g * g;
                let mhat = m[j] * inv_bc1;
                let vhat = v[j] * inv_bc2;
                data[j] = data[j] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

fn validate_hyper(lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
        if !(0.0..1.0).contains(&b) {
            return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
        }
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}
