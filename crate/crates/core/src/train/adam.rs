use crate::error::{Error, Result};
use crate::tensor::{lit, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment estimates for one list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &[Tensor<T>], config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Real>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.t += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.t as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let (b1, b2): (T, T) = (lit(beta1), lit(beta2));
    let (one_b1, one_b2): (T, T) = (lit(1.0 - beta1), lit(1.0 - beta2));
    let (inv_c1, inv_c2, eps, lr): (T, T, T, T) = (lit(1.0 / c1), lit(1.0 / c2), lit(eps), lit(lr));
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (j, &gj) in g.data().iter().enumerate() {
            md[j] = b1 * md[j] + one_b1 * gj;
            vd[j] = b2 * vd[j] + one_b2 * gj * gj;
            let m_hat = md[j] * inv_c1;
            let v_hat = vd[j] * inv_c2;
            pd[j] = pd[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
