use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.eps > 0.0 && in_unit(self.beta1) && in_unit(self.beta2)) {
            return Err(Error::invalid("adam", format!("invalid hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// Step counter and per-parameter moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(config: AdamConfig, shapes: impl IntoIterator<Item = &'a [usize]>) -> Result<Self> {
        config.validate()?;
        let first_moment: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros).collect();
        Ok(AdamState {
            config,
            step: 0,
            second_moment: first_moment.clone(),
            first_moment,
        })
    }

    pub fn for_params(config: AdamConfig, params: &[Tensor<T>]) -> Result<Self> {
        Self::new(config, params.iter().map(|p| p.shape()))
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    state.config.validate()?;
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.first_moment).enumerate() {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {:?}, grad {:?}, moments {:?}", p.shape(), g.shape(), m.shape()),
            ));
        }
    }

    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
    let step_size = T::from_f64_lossy(c.lr / bc1);
    let inv_sqrt_bc2 = T::from_f64_lossy(1.0 / bc2.sqrt());
    let eps = T::from_f64_lossy(c.eps);

    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            *pv -= step_size * *mv / (vv.sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f32>::from_fn(&[3], |i| i as f32)];
        let before = p.clone();
        let mut st = AdamState::for_params(AdamConfig::default(), &p).unwrap();
        for _ in 0..3 {
            adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 3);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // At t=1: m̂ = g, v̂ = g², so the update is lr·g/(|g| + eps).
        let g = [0.3f64, -2.0, 1e-3];
        let mut p = vec![Tensor::<f64>::zeros(&[3])];
        let mut st = AdamState::for_params(AdamConfig::default(), &p).unwrap();
        adam_step(&mut p, &[Tensor::new(&[3], g.to_vec()).unwrap()], &mut st).unwrap();
        for (&pv, &gv) in p[0].data().iter().zip(&g) {
            let expect = -1e-3 * gv / (gv.abs() + 1e-8);
            assert!((pv - expect).abs() < 1e-15, "{pv} vs {expect}");
            assert!((pv.abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn quadratic_bowl_follows_scripted_rollout() {
        // Independent scalar rollout of the textbook update on f(w) = w².
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.1f64, 1e-8f64);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut oracle = Vec::new();
        for t in 1..=20 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            oracle.push(w);
        }

        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut st = AdamState::for_params(AdamConfig::with_lr(0.1), &p).unwrap();
        let mut traj = Vec::new();
        for _ in 0..20 {
            let w = p[0].data()[0];
            adam_step(&mut p, &[Tensor::scalar(2.0 * w)], &mut st).unwrap();
            traj.push(p[0].data()[0]);
        }
        for (a, e) in traj.iter().zip(&oracle) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        // Momentum carries w past the minimum after step 11.
        assert!(traj[..11].windows(2).all(|p| p[1].abs() < p[0].abs()));
        assert!(traj[10].abs() < 0.01);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::<f32>::zeros(&[2])];
        let mut st = AdamState::for_params(AdamConfig::default(), &p).unwrap();
        assert!(adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st).is_err());
        assert!(AdamState::<f32>::new(AdamConfig { beta1: 1.0, ..Default::default() }, []).is_err());
    }
}
