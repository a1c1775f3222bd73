use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::Float;

/// RMSprop with a classical momentum buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            momentum: 0.9,
            decay: 0.9,
            epsilon: 1e-7,
            clip_norm: Some(10.0),
        }
    }
}

/// Per-parameter running state, in [`ModelParams::named`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub config: RmsPropConfig,
    pub square_avg: Vec<Vec<T>>,
    pub momentum_buf: Vec<Vec<T>>,
}

impl<T: Float> OptimizerState<T> {
    pub fn new(config: RmsPropConfig, params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.named().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self {
            config,
            square_avg: zeros.clone(),
            momentum_buf: zeros,
        }
    }
}

/// Applies one update. `grads` follows [`ModelParams::named`] order; frozen
/// tensors (no `requires_grad`) are left alone.
///
/// ```text
/// acc ← ρ·acc + (1 − ρ)·g²
/// buf ← μ·buf + lr·g / √(acc + ε)
/// θ   ← θ − buf
/// ```
pub fn rmsprop_step<T: Float>(
    params: &mut ModelParams<T>,
    grads: &[Vec<T>],
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let mut named = params.named_mut();
    if grads.len() != named.len() || state.square_avg.len() != named.len() {
        return Err(Error::Usage(format!(
            "optimizer expected {} gradient tensors, got {}",
            named.len(),
            grads.len()
        )));
    }
    let mut norm_sq = 0.0;
    for ((name, t), g) in named.iter().zip(grads) {
        if g.len() != t.len() {
            return Err(Error::dimension("rmsprop_step", &[g.len()], t.shape()));
        }
        if !t.requires_grad() {
            continue;
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for {name}")));
        }
        norm_sq += g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>();
    }
    let clip = match state.config.clip_norm {
        Some(max) if norm_sq.sqrt() > max => max / norm_sq.sqrt(),
        _ => 1.0,
    };

    let c = state.config;
    let (lr, mu, rho, eps) = (
        T::from_f64_lossy(c.learning_rate),
        T::from_f64_lossy(c.momentum),
        T::from_f64_lossy(c.decay),
        T::from_f64_lossy(c.epsilon),
    );
    let clip = T::from_f64_lossy(clip);
    for (k, ((_, t), g)) in named.iter_mut().zip(grads).enumerate() {
        if !t.requires_grad() {
            continue;
        }
        let acc = &mut state.square_avg[k];
        let buf = &mut state.momentum_buf[k];
        for (i, theta) in t.data_mut().iter_mut().enumerate() {
            let g = g[i] * clip;
            acc[i] = rho * acc[i] + (T::one() - rho) * g * g;
            buf[i] = mu * buf[i] + lr * g / (acc[i] + eps).sqrt();
            *theta -= buf[i];
        }
    }
    Ok(())
}
