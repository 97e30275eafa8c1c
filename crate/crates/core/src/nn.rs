//! Small dense networks with hand-written backpropagation.
//!
//! All approximators in the crate (noise predictor, critics, policy) are
//! tanh MLPs over a single flat `f64` parameter vector, so optimizers,
//! checkpoints and finite-difference checks treat them uniformly.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fully connected tanh network with a linear output layer and an optional
/// linear skip path from input to output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    skip: bool,
    pub params: Vec<f64>,
}

/// Per-sample activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input; `acts[l]` the output of hidden layer `l`.
    acts: Vec<Vec<f64>>,
}

/// Activations of a batch, one `rows × width` matrix per layer.
#[derive(Debug, Clone)]
pub struct BatchTrace {
    acts: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], skip: bool, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2);
        let mut mlp = Mlp {
            sizes: sizes.to_vec(),
            skip,
            params: Vec::new(),
        };
        mlp.params = vec![0.0; mlp.param_count()];
        for l in 0..mlp.layers() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let std = (1.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let (w, _) = mlp.layer_offsets(l);
            for p in &mut mlp.params[w..w + fan_in * fan_out] {
                *p = normal.sample(rng);
            }
        }
        mlp
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        let dense: usize = self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        dense
            + if self.skip {
                self.input_dim() * self.output_dim()
            } else {
                0
            }
    }

    /// Offsets of the weight matrix and bias of layer `l`.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    fn skip_offset(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Output-layer weights and bias, for initialization tweaks.
    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let l = self.layers() - 1;
        let (w, b) = self.layer_offsets(l);
        let n_out = self.output_dim();
        let (head, tail) = self.params.split_at_mut(b);
        (&mut head[w..], &mut tail[..n_out])
    }

    /// Skip weights (`out × in`, row-major); empty without a skip path.
    pub fn skip_mut(&mut self) -> &mut [f64] {
        if !self.skip {
            return &mut [];
        }
        let off = self.skip_offset();
        &mut self.params[off..]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).0
    }

    pub fn forward_trace(&self, x: &[f64]) -> (Vec<f64>, Trace) {
        assert_eq!(x.len(), self.input_dim(), "input width");
        let mut acts = Vec::with_capacity(self.layers());
        acts.push(x.to_vec());
        let mut out = Vec::new();
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let input = acts.last().expect("input");
            let mut y = self.params[b..b + n_out].to_vec();
            for (o, yo) in y.iter_mut().enumerate() {
                let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                *yo += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
            }
            if l + 1 < self.layers() {
                y.iter_mut().for_each(|v| *v = v.tanh());
                acts.push(y);
            } else {
                out = y;
            }
        }
        if self.skip {
            let off = self.skip_offset();
            let n_in = self.input_dim();
            for (o, yo) in out.iter_mut().enumerate() {
                let row = &self.params[off + o * n_in..off + (o + 1) * n_in];
                *yo += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        (out, Trace { acts })
    }

    /// Accumulates `∂(grad_out · y)/∂params` into `grads` and returns the
    /// gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(grads.len(), self.params.len());
        let mut delta = grad_out.to_vec();
        let mut grad_in_skip = vec![0.0; self.input_dim()];
        if self.skip {
            let off = self.skip_offset();
            let n_in = self.input_dim();
            let x = &trace.acts[0];
            for (o, d) in delta.iter().enumerate() {
                for i in 0..n_in {
                    grads[off + o * n_in + i] += d * x[i];
                    grad_in_skip[i] += d * self.params[off + o * n_in + i];
                }
            }
        }
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let input = &trace.acts[l];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                grads[b + o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = w + o * n_in;
                for i in 0..n_in {
                    grads[row + i] += d * input[i];
                    next[i] += d * self.params[row + i];
                }
            }
            if l > 0 {
                // input is tanh output of the previous layer
                for (n, a) in next.iter_mut().zip(input) {
                    *n *= 1.0 - a * a;
                }
            }
            delta = next;
        }
        for (d, s) in delta.iter_mut().zip(&grad_in_skip) {
            *d += s;
        }
        delta
    }

    fn weights(&self, l: usize) -> (ArrayView2<'_, f64>, &[f64]) {
        let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
        let (w, b) = self.layer_offsets(l);
        let view = ArrayView2::from_shape((n_out, n_in), &self.params[w..b]).expect("layer shape");
        (view, &self.params[b..b + n_out])
    }

    fn skip_weights(&self) -> ArrayView2<'_, f64> {
        let off = self.skip_offset();
        ArrayView2::from_shape((self.output_dim(), self.input_dim()), &self.params[off..])
            .expect("skip shape")
    }

    /// Forward pass over `x` (`rows × input_dim`, row-major); returns the
    /// `rows × output_dim` outputs.
    pub fn forward_batch(&self, x: &[f64]) -> (Array2<f64>, BatchTrace) {
        let n_in = self.input_dim();
        assert_eq!(x.len() % n_in, 0, "input width");
        let input =
            Array2::from_shape_vec((x.len() / n_in, n_in), x.to_vec()).expect("batch shape");
        let rows = input.nrows();
        let mut acts = Vec::with_capacity(self.layers());
        acts.push(input);
        let mut out = Array2::zeros((rows, self.output_dim()));
        for l in 0..self.layers() {
            let (w, b) = self.weights(l);
            let mut y = Array2::from_shape_fn((rows, b.len()), |(_, o)| b[o]);
            general_mat_mul(1.0, acts.last().expect("input"), &w.t(), 1.0, &mut y);
            if l + 1 < self.layers() {
                y.mapv_inplace(f64::tanh);
                acts.push(y);
            } else {
                out = y;
            }
        }
        if self.skip {
            general_mat_mul(1.0, &acts[0], &self.skip_weights().t(), 1.0, &mut out);
        }
        (out, BatchTrace { acts })
    }

    /// Batched [`Mlp::backward`]: accumulates parameter gradients of
    /// `Σ_rows grad_out · y` and returns the `rows × input_dim` input
    /// gradients.
    pub fn backward_batch(
        &self,
        trace: &BatchTrace,
        grad_out: &Array2<f64>,
        grads: &mut [f64],
    ) -> Array2<f64> {
        assert_eq!(grads.len(), self.params.len());
        let mut delta = grad_out.clone();
        let mut grad_in_skip = None;
        if self.skip {
            let off = self.skip_offset();
            let (n_out, n_in) = (self.output_dim(), self.input_dim());
            let mut g =
                Array2::from_shape_vec((n_out, n_in), grads[off..].to_vec()).expect("skip shape");
            general_mat_mul(1.0, &delta.t(), &trace.acts[0], 1.0, &mut g);
            grads[off..].copy_from_slice(g.as_slice().expect("standard layout"));
            grad_in_skip = Some(delta.dot(&self.skip_weights()));
        }
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (wo, bo) = self.layer_offsets(l);
            let input = &trace.acts[l];
            let mut gw =
                Array2::from_shape_vec((n_out, n_in), grads[wo..bo].to_vec()).expect("layer shape");
            general_mat_mul(1.0, &delta.t(), input, 1.0, &mut gw);
            grads[wo..bo].copy_from_slice(gw.as_slice().expect("standard layout"));
            for (g, s) in grads[bo..bo + n_out]
                .iter_mut()
                .zip(delta.sum_axis(Axis(0)))
            {
                *g += s;
            }
            let mut next = delta.dot(&self.weights(l).0);
            if l > 0 {
                next.zip_mut_with(input, |n, a| *n *= 1.0 - a * a);
            }
            delta = next;
        }
        if let Some(s) = grad_in_skip {
            delta += &s;
        }
        delta
    }

    /// Polyak averaging: `self ← τ·self + (1-τ)·online`.
    pub fn polyak_from(&mut self, online: &Mlp, tau: f64) {
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * *t + (1.0 - tau) * o;
        }
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Descent step: `params -= lr · m̂ / (√v̂ + eps)`.
    pub fn descend(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grads: &[f64]) {
        let neg: Vec<f64> = grads.iter().map(|g| -g).collect();
        self.descend(params, &neg);
    }
}

pub mod fd {
    //! Central finite-difference gradient checks.

    use rand::Rng;

    /// `count` parameter indices drawn uniformly from `0..n`.
    pub fn probes<R: Rng + ?Sized>(n: usize, count: usize, rng: &mut R) -> Vec<usize> {
        (0..count).map(|_| rng.random_range(0..n)).collect()
    }

    /// Max relative error between `analytic` and central differences of
    /// `loss` at `probes` parameter coordinates.
    pub fn check(
        params: &mut [f64],
        analytic: &[f64],
        probes: &[usize],
        step: f64,
        mut loss: impl FnMut(&[f64]) -> f64,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        for &i in probes {
            let orig = params[i];
            params[i] = orig + step;
            let up = loss(params);
            params[i] = orig - step;
            let down = loss(params);
            params[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let scale = numeric.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max((numeric - analytic[i]).abs() / scale);
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = stream(1, 0);
        for skip in [false, true] {
            let net = Mlp::new(&[5, 7, 6, 3], skip, &mut rng);
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = [0.3, -1.2, 0.7];
            let (_, trace) = net.forward_trace(&x);
            let mut grads = vec![0.0; net.params.len()];
            let gin = net.backward(&trace, &w, &mut grads);
            let probes: Vec<usize> = (0..10)
                .map(|_| rng.random_range(0..net.params.len()))
                .collect();
            let mut params = net.params.clone();
            let shape = net.clone();
            let err = fd::check(&mut params, &grads, &probes, 1e-6, |p| {
                let mut n = shape.clone();
                n.params.copy_from_slice(p);
                n.forward(&x).iter().zip(&w).map(|(a, b)| a * b).sum()
            });
            assert!(err < 1e-6, "param grad err {err}");
            // input gradient
            for i in 0..5 {
                let mut xp = x.clone();
                xp[i] += 1e-6;
                let mut xm = x.clone();
                xm[i] -= 1e-6;
                let f = |x: &[f64]| {
                    net.forward(x)
                        .iter()
                        .zip(&w)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                };
                let num = (f(&xp) - f(&xm)) / 2e-6;
                assert!((num - gin[i]).abs() < 1e-6 * num.abs().max(1.0));
            }
        }
    }

    #[test]
    fn batch_passes_match_per_sample() {
        let mut rng = stream(4, 0);
        for skip in [false, true] {
            let net = Mlp::new(&[4, 9, 5, 2], skip, &mut rng);
            let rows = 6;
            let x: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let go = Array2::from_shape_fn((rows, 2), |_| rng.random_range(-1.0..1.0));
            let (out, trace) = net.forward_batch(&x);
            let mut g_batch = vec![0.0; net.params.len()];
            let gin = net.backward_batch(&trace, &go, &mut g_batch);
            let mut g_single = vec![0.0; net.params.len()];
            for r in 0..rows {
                let (y, t) = net.forward_trace(&x[4 * r..4 * r + 4]);
                for o in 0..2 {
                    assert!((y[o] - out[[r, o]]).abs() < 1e-12);
                }
                let gi = net.backward(&t, &[go[[r, 0]], go[[r, 1]]], &mut g_single);
                for i in 0..4 {
                    assert!((gi[i] - gin[[r, i]]).abs() < 1e-12);
                }
            }
            for (a, b) in g_batch.iter().zip(&g_single) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let g = vec![2.0 * x[0], 2.0 * x[1]];
            opt.descend(&mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn polyak_is_convex_combination() {
        let mut rng = stream(2, 0);
        let a = Mlp::new(&[2, 3, 1], false, &mut rng);
        let mut b = Mlp::new(&[2, 3, 1], false, &mut rng);
        let before = b.clone();
        b.polyak_from(&a, 0.995);
        for i in 0..a.params.len() {
            let expect = 0.995 * before.params[i] + 0.005 * a.params[i];
            assert!((b.params[i] - expect).abs() < 1e-15);
        }
    }
}
