//! Central-finite-difference verification of analytic gradients.
//!
//! Runs in f64 so the comparison tolerance reflects the math rather than
//! accumulated rounding. Used by the unit tests and the acceptance suite.

use crate::nn::ParamSet;
use crate::num::Tensor;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_rel_err: f64,
}

/// Compares analytic gradients against central differences on
/// `coords_per_tensor` random coordinates of every tensor in the set.
///
/// `loss` evaluates the scalar objective for the given parameters;
/// `grad` fills a zeroed tape with the analytic gradient.
pub fn check_gradients<P, L, G>(
    params: &P,
    coords_per_tensor: usize,
    h: f64,
    seed: u64,
    mut loss: L,
    grad: G,
) -> GradCheckReport
where
    P: ParamSet<f64> + Clone,
    L: FnMut(&P) -> f64,
    G: FnOnce(&P, &mut P),
{
    let mut tape = params.zeros_like();
    grad(params, &mut tape);

    let mut rng = RngStream::seed(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let names: Vec<String> = params.named().iter().map(|(n, _)| n.clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = params.named()[ti].1.len();
        if len == 0 {
            continue;
        }
        let analytic: Vec<f64> = tape.named()[ti].1.data().to_vec();
        for _ in 0..coords_per_tensor.min(len) {
            let k = rng.below(len as u64) as usize;
            let mut plus = params.clone();
            plus.named_mut()[ti].1.data_mut()[k] += h;
            let mut minus = params.clone();
            minus.named_mut()[ti].1.data_mut()[k] -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic[k];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            let rel = (a - fd).abs() / denom;
            if rel > worst {
                worst = rel;
            }
            checked += 1;
            debug_assert!(
                rel.is_finite(),
                "non-finite gradcheck at {name}[{k}]: analytic {a}, fd {fd}"
            );
        }
    }
    GradCheckReport {
        checked,
        worst_rel_err: worst,
    }
}

/// Finite-difference check of a gradient w.r.t. a plain vector input.
pub fn check_input_gradient<L>(
    x: &[f64],
    analytic: &[f64],
    coords: usize,
    h: f64,
    seed: u64,
    mut loss: L,
) -> GradCheckReport
where
    L: FnMut(&[f64]) -> f64,
{
    let mut rng = RngStream::seed(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..coords.min(x.len()) {
        let k = rng.below(x.len() as u64) as usize;
        let mut xp = x.to_vec();
        xp[k] += h;
        let mut xm = x.to_vec();
        xm[k] -= h;
        let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
        let denom = analytic[k].abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic[k] - fd).abs() / denom);
        checked += 1;
    }
    GradCheckReport {
        checked,
        worst_rel_err: worst,
    }
}

/// A tiny ParamSet wrapper for free-standing tensor collections in tests.
#[derive(Debug, Clone)]
pub struct TensorBundle {
    pub tensors: Vec<(String, Tensor<f64>)>,
}

impl ParamSet<f64> for TensorBundle {
    fn named(&self) -> Vec<(String, &Tensor<f64>)> {
        self.tensors.iter().map(|(n, t)| (n.clone(), t)).collect()
    }
    fn named_mut(&mut self) -> Vec<(String, &mut Tensor<f64>)> {
        self.tensors
            .iter_mut()
            .map(|(n, t)| (n.clone(), t))
            .collect()
    }
    fn zeros_like(&self) -> Self {
        TensorBundle {
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};

    /// Dense layers against finite differences for every activation.
    #[test]
    fn dense_gradients_match_fd() {
        for act in [
            Activation::Linear,
            Activation::Relu,
            Activation::Softplus,
            Activation::Sigmoid,
            Activation::Tanh,
        ] {
            let mut rng = RngStream::seed(11);
            let layer = Dense::<f64>::init(5, 4, act, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let target: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();

            let bundle = TensorBundle {
                tensors: vec![
                    ("w".into(), layer.w.clone()),
                    ("b".into(), layer.b.clone()),
                ],
            };
            let run = |b: &TensorBundle| -> f64 {
                let mut l = layer.clone();
                l.w.data_mut().copy_from_slice(b.tensors[0].1.data());
                l.b.data_mut().copy_from_slice(b.tensors[1].1.data());
                let (mut pre, mut out) = (Vec::new(), Vec::new());
                l.forward(&x, 1, &mut pre, &mut out);
                out.iter()
                    .zip(&target)
                    .map(|(o, t)| (o - t) * (o - t))
                    .sum()
            };
            let report = check_gradients(&bundle, 50, 1e-5, 3, run, |b, tape| {
                let mut l = layer.clone();
                l.w.data_mut().copy_from_slice(b.tensors[0].1.data());
                l.b.data_mut().copy_from_slice(b.tensors[1].1.data());
                let (mut pre, mut out) = (Vec::new(), Vec::new());
                l.forward(&x, 1, &mut pre, &mut out);
                let dout: Vec<f64> = out
                    .iter()
                    .zip(&target)
                    .map(|(o, t)| 2.0 * (o - t))
                    .collect();
                let mut dx = vec![0.0; 5];
                let mut tensors = tape.named_mut().into_iter();
                let gw = tensors.next().unwrap().1;
                let gb = tensors.next().unwrap().1;
                l.backward(&x, &pre, &out, &dout, 1, gw, gb, &mut dx);
            });
            assert!(
                report.worst_rel_err < 1e-6,
                "{act:?}: worst rel err {}",
                report.worst_rel_err
            );
        }
    }
}
