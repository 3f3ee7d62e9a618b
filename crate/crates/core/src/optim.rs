//! Adam with per-entry step counters.
//!
//! Moments are aligned to the full-capacity stores. An entry only advances
//! (moments, step count, value) on iterations where it is active, so a filter
//! that joins late starts from zero moments and its first update is
//! bias-corrected as step 1.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient at entry {index}")]
    NonFiniteGrad { index: usize },
    #[error("gradient has {got} entries, parameter has {want}")]
    Length { want: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u32>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            steps: vec![0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One Adam step on every entry with `active[i]` (all entries when `None`).
/// Nothing is modified if any active gradient is non-finite.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    active: Option<&[bool]>,
    hyper: &AdamConfig,
) -> Result<(), OptimError> {
    if grads.len() != params.len() || moments.len() != params.len() {
        return Err(OptimError::Length {
            want: params.len(),
            got: grads.len().min(moments.len()),
        });
    }
    let is_active = |i: usize| active.map_or(true, |a| a[i]);
    if let Some(index) = (0..grads.len()).find(|&i| is_active(i) && !grads[i].is_finite()) {
        return Err(OptimError::NonFiniteGrad { index });
    }
    for i in 0..params.len() {
        if !is_active(i) {
            continue;
        }
        let g = grads[i];
        let t = moments.steps[i] + 1;
        moments.steps[i] = t;
        let m = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let m_hat = m / (1.0 - hyper.beta1.powi(t as i32));
        let v_hat = v / (1.0 - hyper.beta2.powi(t as i32));
        params[i] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}
