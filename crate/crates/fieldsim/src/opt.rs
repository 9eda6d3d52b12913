//! Bias-corrected Adam over any `ParamSet`.

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::num::Real;

#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second-moment accumulators mirroring the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl<P> AdamState<P> {
    pub fn new<R: Real>(params: &P, hyper: AdamHyper) -> Self
    where
        P: ParamSet<R>,
    {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            hyper,
        }
    }
}

/// One Adam update. The tape holds gradients and is zeroed afterwards.
pub fn adam_step<R: Real, P: ParamSet<R>>(
    params: &mut P,
    tape: &mut P,
    state: &mut AdamState<P>,
    lr: f64,
) -> Result<()> {
    if !tape.all_finite() {
        return Err(Error::NonFiniteGradient("adam_step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(t);
    let bc2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (R::of(h.beta1), R::of(h.beta2));
    let one_m_b1 = R::of(1.0 - h.beta1);
    let one_m_b2 = R::of(1.0 - h.beta2);
    let eps = R::of(h.eps);
    let scale = R::of(lr / bc1);
    let inv_sqrt_bc2 = R::of(1.0 / bc2.sqrt());

    let mut ps = params.named_mut();
    let mut gs = tape.named_mut();
    let mut ms = state.m.named_mut();
    let mut vs = state.v.named_mut();
    if ps.len() != gs.len() || ps.len() != ms.len() || ps.len() != vs.len() {
        return Err(Error::ShapeMismatch("adam tensor count".into()));
    }
    for i in 0..ps.len() {
        let p = ps[i].1.data_mut();
        let g = gs[i].1.data_mut();
        let m = ms[i].1.data_mut();
        let v = vs[i].1.data_mut();
        if p.len() != g.len() || p.len() != m.len() || p.len() != v.len() {
            return Err(Error::ShapeMismatch(format!("adam tensor {i}")));
        }
        for k in 0..p.len() {
            m[k] = b1 * m[k] + one_m_b1 * g[k];
            v[k] = b2 * v[k] + one_m_b2 * g[k] * g[k];
            // update = lr * m_hat / (sqrt(v_hat) + eps) with m_hat = m/bc1,
            // v_hat = v/bc2.
            let vhat_sqrt = v[k].sqrt() * inv_sqrt_bc2;
            p[k] = p[k] - scale * m[k] / (vhat_sqrt + eps);
            g[k] = R::zero();
        }
    }
    Ok(())
}

/// Exponential decay from `lr0` to `lr1` over `total` steps.
pub fn lr_schedule(lr0: f64, lr1: f64, step: u64, total: u64) -> f64 {
    if total <= 1 {
        return lr0;
    }
    let t = (step as f64 / (total - 1) as f64).clamp(0.0, 1.0);
    lr0 * (lr1 / lr0).powf(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::num::Tensor;

    #[derive(Debug, Clone)]
    struct Single(Tensor<f64>);

    impl ParamSet<f64> for Single {
        fn named(&self) -> Vec<(String, &Tensor<f64>)> {
            vec![("x".into(), &self.0)]
        }
        fn named_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
            vec![("x".into(), &mut self.0)]
        }
        fn zeros_like(&self) -> Self {
            Single(Tensor::zeros(self.0.shape()))
        }
    }

    #[test]
    fn first_step_matches_closed_form() {
        // Single scalar, g = 1 at step 1: update = -lr / (1 + eps') which is
        // approximately -lr after bias correction.
        let mut p = Single(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let mut tape = p.zeros_like();
        tape.0.data_mut()[0] = 1.0;
        let mut st = AdamState::new(&p, AdamHyper::default());
        let lr = 1e-3;
        adam_step(&mut p, &mut tape, &mut st, lr).unwrap();
        // m_hat = 1, v_hat = 1 -> update = -lr * 1/(1 + eps).
        let want = -lr * 1.0 / (1.0 + 1e-8);
        assert!((p.0.data()[0] - want).abs() < 1e-15);
        assert_eq!(tape.0.data()[0], 0.0, "tape zeroed");
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = Single(Tensor::from_vec(&[1], vec![0.75]).unwrap());
        let mut tape = p.zeros_like();
        let mut st = AdamState::new(&p, AdamHyper::default());
        adam_step(&mut p, &mut tape, &mut st, 1e-2).unwrap();
        assert_eq!(p.0.data()[0], 0.75);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn nonfinite_gradient_rejected() {
        let mut p = Single(Tensor::from_vec(&[1], vec![0.0]).unwrap());
        let mut tape = p.zeros_like();
        tape.0.data_mut()[0] = f64::NAN;
        let mut st = AdamState::new(&p, AdamHyper::default());
        assert!(adam_step(&mut p, &mut tape, &mut st, 1e-3).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        assert!((lr_schedule(5e-4, 5e-5, 0, 100) - 5e-4).abs() < 1e-12);
        assert!((lr_schedule(5e-4, 5e-5, 99, 100) - 5e-5).abs() < 1e-12);
    }
}
