use crate::diffarray::ParamSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam first and second moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParamSet<f32>,
    pub v: ParamSet<f32>,
}

impl AdamState {
    pub fn new(params: &ParamSet<f32>) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. Grads are validated before anything is
/// modified, so an error leaves `params` and `state` untouched.
pub fn optimizer_step(
    params: &mut ParamSet<f32>,
    grads: &ParamSet<f32>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(
            "optimizer: parameter, gradient and moment sets differ",
        ));
    }
    for ((name, p), (gname, g)) in params.iter().zip(grads.iter()) {
        if name != gname || p.shape() != g.shape() {
            return Err(Error::shape("optimizer_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let (b1, b2) = (BETA1 as f32, BETA2 as f32);
    for ((name, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
        let m = state.m.get_mut(name).expect("moment layout");
        let v = state.v.get_mut(name).expect("moment layout");
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = f64::from(*m) / c1;
            let v_hat = f64::from(*v) / c2;
            *p -= (lr * m_hat / (v_hat.sqrt() + EPS)) as f32;
        }
    }
    Ok(())
}
