use super::{ParamStore, Result, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Tensors whose update was skipped because their gradient was not finite.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamReport {
    pub skipped: Vec<usize>,
}

/// Adam moments for one [`ParamStore`].
///
/// `step` updates the store in place.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: store.zeros_like(),
            second_moment: store.zeros_like(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<AdamReport> {
        if grads.len() != store.len() || grads.len() != self.first_moment.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (i, (g, t)) in grads.iter().zip(store.tensors()).enumerate() {
            if g.len() != t.len() || self.first_moment[i].len() != t.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    left: t.shape().to_vec(),
                    right: vec![g.len()],
                });
            }
        }
        self.step_count += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut report = AdamReport::default();
        for (i, (g, tensor)) in grads.iter().zip(store.tensors_mut()).enumerate() {
            if g.iter().any(|v| !v.is_finite()) {
                log::warn!("adam: non-finite gradient for parameter {i}, update skipped");
                report.skipped.push(i);
                continue;
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (((p, &gj), mj), vj) in tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mj = beta1 * *mj + (1.0 - beta1) * gj;
                *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
                let m_hat = *mj / c1;
                let v_hat = *vj / c2;
                *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(report)
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(groups: &mut [&mut Vec<Vec<f64>>], max_norm: f64) -> f64 {
    let norm = groups
        .iter()
        .flat_map(|g| g.iter())
        .flat_map(|t| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for g in groups.iter_mut() {
            for t in g.iter_mut() {
                t.iter_mut().for_each(|v| *v *= scale);
            }
        }
    }
    norm
}
