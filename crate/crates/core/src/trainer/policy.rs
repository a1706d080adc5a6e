//! Recurrent Gaussian actor-critic.
//!
//! A single gated recurrent cell reads the observation; the actor and
//! critic heads read the new hidden state concatenated with the
//! observation. The action distribution is a diagonal Gaussian whose
//! log-std is a free parameter vector. All parameters live in one flat
//! vector so optimizers and checkpoints handle them uniformly.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) const LOG_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub obs_dim: usize,
    pub hidden: usize,
    pub action_dim: usize,
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    wx: usize,
    bx: usize,
    uh: usize,
    bh: usize,
    wa: usize,
    ba: usize,
    log_std: usize,
    wv: usize,
    bv: usize,
    total: usize,
}

impl PolicyShape {
    fn features(&self) -> usize {
        self.hidden + self.obs_dim
    }

    fn layout(&self) -> Layout {
        let (d, h, a, f) = (self.obs_dim, self.hidden, self.action_dim, self.features());
        let wx = 0;
        let bx = wx + 3 * h * d;
        let uh = bx + 3 * h;
        let bh = uh + 3 * h * h;
        let wa = bh + 3 * h;
        let ba = wa + a * f;
        let log_std = ba + a;
        let wv = log_std + a;
        let bv = wv + f;
        Layout {
            wx,
            bx,
            uh,
            bh,
            wa,
            ba,
            log_std,
            wv,
            bv,
            total: bv + 1,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layout().total
    }
}

fn view2(p: &[f64], off: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &p[off..off + rows * cols]).expect("block fits layout")
}

fn view1(p: &[f64], off: usize, n: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[off..off + n])
}

fn view2_mut(p: &mut [f64], off: usize, rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut p[off..off + rows * cols]).expect("block fits layout")
}

fn view1_mut(p: &mut [f64], off: usize, n: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut p[off..off + n])
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values of one recurrent step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Array2<f64>,
    pub h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    /// Recurrent pre-activation of the candidate gate, before the reset gate.
    ghn: Array2<f64>,
    /// `[h_new, x]`
    feat: Array2<f64>,
}

impl StepCache {
    pub fn h_new(&self, hidden: usize) -> Array2<f64> {
        self.feat.slice(s![.., ..hidden]).to_owned()
    }
}

/// Output of a forward step over a batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub mean: Array2<f64>,
    pub value: Array1<f64>,
    pub h_new: Array2<f64>,
    pub cache: StepCache,
}

/// One recurrent step for a batch of rows.
pub fn forward_step(
    params: &[f64],
    shape: &PolicyShape,
    x: ArrayView2<'_, f64>,
    h_prev: ArrayView2<'_, f64>,
) -> StepOutput {
    let (d, h, a, f) = (shape.obs_dim, shape.hidden, shape.action_dim, shape.features());
    let l = shape.layout();
    let b = x.nrows();
    let mut gx = x.dot(&view2(params, l.wx, 3 * h, d).t());
    gx += &view1(params, l.bx, 3 * h);
    let mut gh = h_prev.dot(&view2(params, l.uh, 3 * h, h).t());
    gh += &view1(params, l.bh, 3 * h);

    let mut z = Array2::zeros((b, h));
    let mut r = Array2::zeros((b, h));
    let mut n = Array2::zeros((b, h));
    let mut ghn = Array2::zeros((b, h));
    let mut feat = Array2::zeros((b, f));
    for i in 0..b {
        for k in 0..h {
            let zk = sigmoid(gx[[i, k]] + gh[[i, k]]);
            let rk = sigmoid(gx[[i, h + k]] + gh[[i, h + k]]);
            let g = gh[[i, 2 * h + k]];
            let nk = (gx[[i, 2 * h + k]] + rk * g).tanh();
            z[[i, k]] = zk;
            r[[i, k]] = rk;
            n[[i, k]] = nk;
            ghn[[i, k]] = g;
            feat[[i, k]] = (1.0 - zk) * nk + zk * h_prev[[i, k]];
        }
    }
    feat.slice_mut(s![.., h..]).assign(&x);

    let mut mean = feat.dot(&view2(params, l.wa, a, f).t());
    mean += &view1(params, l.ba, a);
    let value = feat.dot(&view1(params, l.wv, f)) + params[l.bv];
    let h_new = feat.slice(s![.., ..h]).to_owned();
    StepOutput {
        mean,
        value,
        h_new,
        cache: StepCache {
            x: x.to_owned(),
            h_prev: h_prev.to_owned(),
            z,
            r,
            n,
            ghn,
            feat,
        },
    }
}

/// Accumulates the parameter gradient of one step into `grad` and returns
/// the gradient with respect to the previous hidden state.
///
/// `dh_carry` is the gradient flowing into this step's new hidden state
/// from later steps.
pub fn backward_step(
    params: &[f64],
    shape: &PolicyShape,
    cache: &StepCache,
    d_mean: ArrayView2<'_, f64>,
    d_value: ArrayView1<'_, f64>,
    dh_carry: ArrayView2<'_, f64>,
    grad: &mut [f64],
) -> Array2<f64> {
    let (d, h, a, f) = (shape.obs_dim, shape.hidden, shape.action_dim, shape.features());
    let l = shape.layout();
    let b = cache.x.nrows();

    // Heads.
    let wa = view2(params, l.wa, a, f);
    let wv = view1(params, l.wv, f);
    let mut d_feat = d_mean.dot(&wa);
    for i in 0..b {
        let dv = d_value[i];
        if dv != 0.0 {
            d_feat.row_mut(i).scaled_add(dv, &wv);
        }
    }
    view2_mut(grad, l.wa, a, f).scaled_add(1.0, &d_mean.t().dot(&cache.feat));
    view1_mut(grad, l.ba, a).scaled_add(1.0, &d_mean.sum_axis(Axis(0)));
    view1_mut(grad, l.wv, f).scaled_add(1.0, &cache.feat.t().dot(&d_value));
    grad[l.bv] += d_value.sum();

    // Recurrent cell.
    let mut dgx = Array2::zeros((b, 3 * h));
    let mut dgh = Array2::zeros((b, 3 * h));
    let mut dh_prev = Array2::zeros((b, h));
    for i in 0..b {
        for k in 0..h {
            let dhn = d_feat[[i, k]] + dh_carry[[i, k]];
            let (z, r, n, g) = (cache.z[[i, k]], cache.r[[i, k]], cache.n[[i, k]], cache.ghn[[i, k]]);
            let hp = cache.h_prev[[i, k]];
            let dn = dhn * (1.0 - z);
            let dz = dhn * (hp - n);
            dh_prev[[i, k]] = dhn * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * g;
            let daz = dz * z * (1.0 - z);
            let dar = dr * r * (1.0 - r);
            dgx[[i, k]] = daz;
            dgx[[i, h + k]] = dar;
            dgx[[i, 2 * h + k]] = dan;
            dgh[[i, k]] = daz;
            dgh[[i, h + k]] = dar;
            dgh[[i, 2 * h + k]] = dan * r;
        }
    }
    view2_mut(grad, l.wx, 3 * h, d).scaled_add(1.0, &dgx.t().dot(&cache.x));
    view1_mut(grad, l.bx, 3 * h).scaled_add(1.0, &dgx.sum_axis(Axis(0)));
    view2_mut(grad, l.uh, 3 * h, h).scaled_add(1.0, &dgh.t().dot(&cache.h_prev));
    view1_mut(grad, l.bh, 3 * h).scaled_add(1.0, &dgh.sum_axis(Axis(0)));
    dh_prev += &dgh.dot(&view2(params, l.uh, 3 * h, h));
    dh_prev
}

/// `sum_j [-(a_j - mu_j)^2 / (2 sigma_j^2) - log sigma_j - log(2 pi) / 2]`
pub fn gaussian_log_prob(mean: ArrayView1<'_, f64>, log_std: ArrayView1<'_, f64>, action: &[f64]) -> f64 {
    let mut lp = 0.0;
    for j in 0..action.len() {
        let z = (action[j] - mean[j]) * (-log_std[j]).exp();
        lp += -0.5 * z * z - log_std[j] - 0.5 * LOG_2PI;
    }
    lp
}

/// `sum_j (log sigma_j + log(2 pi e) / 2)`
pub fn gaussian_entropy(log_std: ArrayView1<'_, f64>) -> f64 {
    log_std.iter().map(|l| l + 0.5 * (LOG_2PI + 1.0)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentPolicy {
    pub shape: PolicyShape,
    pub params: Vec<f64>,
}

impl RecurrentPolicy {
    /// Uniform `+-1/sqrt(fan)` recurrent weights, a near-zero actor head so
    /// initial actions centre on the neutral command, and the given log-std.
    pub fn new(shape: PolicyShape, log_std_init: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if shape.obs_dim == 0 || shape.hidden == 0 || shape.action_dim == 0 {
            return Err(Error::Config("policy dimensions must be positive".into()));
        }
        let l = shape.layout();
        let (d, h, a, f) = (shape.obs_dim, shape.hidden, shape.action_dim, shape.features());
        let mut p = vec![0.0; l.total];
        let k = 1.0 / (h as f64).sqrt();
        let mut fill = |p: &mut [f64], off: usize, len: usize, scale: f64| {
            for v in &mut p[off..off + len] {
                *v = rng.random_range(-scale..=scale);
            }
        };
        fill(&mut p, l.wx, 3 * h * d, k);
        fill(&mut p, l.uh, 3 * h * h, k);
        fill(&mut p, l.bx, 3 * h, k);
        fill(&mut p, l.bh, 3 * h, k);
        let kf = 1.0 / (f as f64).sqrt();
        fill(&mut p, l.wa, a * f, 0.01 * kf);
        fill(&mut p, l.wv, f, kf);
        p[l.log_std..l.log_std + a].fill(log_std_init);
        Ok(Self { shape, params: p })
    }

    pub fn from_params(shape: PolicyShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.n_params() {
            return Err(Error::Schema(format!(
                "policy expects {} parameters, found {}",
                shape.n_params(),
                params.len()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn log_std(&self) -> ArrayView1<'_, f64> {
        log_std_of(&self.params, &self.shape)
    }

    pub fn zero_hidden(&self, batch: usize) -> Array2<f64> {
        Array2::zeros((batch, self.shape.hidden))
    }

    pub fn step(&self, x: ArrayView2<'_, f64>, h: ArrayView2<'_, f64>) -> StepOutput {
        forward_step(&self.params, &self.shape, x, h)
    }

    /// Draws `mean + sigma * eps` for every row.
    pub fn sample(&self, mean: ArrayView2<'_, f64>, rng: &mut ChaCha8Rng) -> Array2<f64> {
        let sigma = self.log_std().mapv(f64::exp);
        let mut out = mean.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                let e: f64 = StandardNormal.sample(rng);
                *v += sigma[j] * e;
            }
        }
        out
    }
}

pub fn log_std_of<'a>(params: &'a [f64], shape: &PolicyShape) -> ArrayView1<'a, f64> {
    view1(params, shape.layout().log_std, shape.action_dim)
}

pub(crate) fn log_std_offset(shape: &PolicyShape) -> usize {
    shape.layout().log_std
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy() -> (PolicyShape, Vec<f64>) {
        let shape = PolicyShape {
            obs_dim: 3,
            hidden: 4,
            action_dim: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = RecurrentPolicy::new(shape, -0.5, &mut rng).unwrap().params;
        // Larger head weights so the test exercises every block.
        for v in p.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
        (shape, p)
    }

    /// Scalar objective over a 3-step sequence: sum of weighted means and values.
    fn objective(p: &[f64], shape: &PolicyShape, xs: &[Array2<f64>], h0: &Array2<f64>) -> f64 {
        let mut h = h0.clone();
        let mut total = 0.0;
        for (t, x) in xs.iter().enumerate() {
            let out = forward_step(p, shape, x.view(), h.view());
            total += out.mean.iter().enumerate().map(|(i, m)| m * (1.0 + i as f64 * 0.1)).sum::<f64>();
            total += out.value.sum() * (0.5 + t as f64);
            h = out.h_new;
        }
        total
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let (shape, p) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn((2, 3), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let h0 = Array2::from_shape_fn((2, 4), |_| rng.random_range(-0.5..0.5));

        let mut caches = Vec::new();
        let mut h = h0.clone();
        for x in &xs {
            let out = forward_step(&p, &shape, x.view(), h.view());
            h = out.h_new.clone();
            caches.push(out.cache);
        }
        let mut grad = vec![0.0; p.len()];
        let mut carry = Array2::zeros((2, 4));
        for t in (0..3).rev() {
            let dm = Array2::from_shape_fn((2, 2), |(i, j)| 1.0 + (i * 2 + j) as f64 * 0.1);
            let dv = Array1::from_elem(2, 0.5 + t as f64);
            carry = backward_step(&p, &shape, &caches[t], dm.view(), dv.view(), carry.view(), &mut grad);
        }
        for i in 0..p.len() {
            let eps = 1e-6;
            let mut pp = p.clone();
            pp[i] += eps;
            let up = objective(&pp, &shape, &xs, &h0);
            pp[i] -= 2.0 * eps;
            let dn = objective(&pp, &shape, &xs, &h0);
            let fd = (up - dn) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6);
            assert!(err < 1e-5, "param {i}: fd {fd} vs bptt {}", grad[i]);
        }
    }

    #[test]
    fn entropy_closed_form() {
        let ls = Array1::from(vec![-0.5, 0.1, 0.3]);
        let expected: f64 = ls.iter().map(|l| l + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).sum();
        assert!((gaussian_entropy(ls.view()) - expected).abs() < 1e-9);
    }

    #[test]
    fn log_prob_standard_normal() {
        let m = Array1::zeros(1);
        let ls = Array1::zeros(1);
        let lp = gaussian_log_prob(m.view(), ls.view(), &[0.0]);
        assert!((lp + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }
}
