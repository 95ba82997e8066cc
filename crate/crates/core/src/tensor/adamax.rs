use super::{shape_err, Real, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaMaxConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdaMaxConfig {
    fn default() -> Self {
        AdaMaxConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First moment `m` and infinity-norm accumulator `u`, one buffer per
/// parameter tensor.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AdaMaxState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct AdaMax<T> {
    pub config: AdaMaxConfig,
    pub state: AdaMaxState<T>,
}

impl<T: Real> AdaMax<T> {
    pub fn new(config: AdaMaxConfig) -> Self {
        AdaMax { config, state: AdaMaxState { step: 0, m: Vec::new(), u: Vec::new() } }
    }

    pub fn with_state(config: AdaMaxConfig, state: AdaMaxState<T>) -> Self {
        AdaMax { config, state }
    }

    /// Applies one update. A non-finite gradient rejects the whole step and
    /// leaves parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<(), TensorError> {
        if params.len() != grads.len() {
            return Err(shape_err("adamax_step", format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(shape_err(
                    "adamax_step",
                    format!("parameter {i} has shape {:?}, gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFiniteGradient { index: i });
            }
        }
        if self.state.m.is_empty() {
            self.state.m = params.iter().map(|p| vec![T::zero(); p.numel()]).collect();
            self.state.u = self.state.m.clone();
        }
        if self.state.m.len() != params.len()
            || self.state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel())
        {
            return Err(shape_err("adamax_step", "optimizer state does not match the parameter set"));
        }
        let AdaMaxConfig { lr, beta1, beta2, eps } = self.config;
        self.state.step += 1;
        let step_size = lr / (1.0 - beta1.powi(self.state.step as i32));
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        for ((p, g), (m, u)) in params.iter_mut().zip(grads).zip(self.state.m.iter_mut().zip(self.state.u.iter_mut())) {
            for ((theta, &gv), (mv, uv)) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut().zip(u.iter_mut())) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *uv = (b2 * *uv).max(gv.abs());
                *theta = T::of(theta.as_f64() - step_size * mv.as_f64() / (uv.as_f64() + eps));
            }
        }
        Ok(())
    }
}
