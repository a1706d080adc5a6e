//! Clipped-surrogate loss and its gradient over contiguous sequences.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::policy::{
    backward_step, forward_step, gaussian_entropy, gaussian_log_prob, log_std_of, log_std_offset,
    PolicyShape, StepCache, LOG_2PI,
};

/// Loss coefficients of one update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip_eps: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

/// `B` environment sequences of `T` steps each, stored time-major.
#[derive(Debug, Clone)]
pub struct SequenceBatch {
    /// `T` matrices of shape `B x obs_dim`.
    pub obs: Vec<Array2<f64>>,
    /// `T` matrices of shape `B x action_dim`.
    pub actions: Vec<Array2<f64>>,
    /// `T x B`
    pub old_log_prob: Array2<f64>,
    pub advantages: Array2<f64>,
    pub returns: Array2<f64>,
    /// `starts[t][i]`: the hidden state of sequence `i` is zeroed before step `t`.
    pub starts: Vec<Vec<bool>>,
    /// Hidden state before step 0, `B x hidden`.
    pub h0: Array2<f64>,
}

impl SequenceBatch {
    pub fn steps(&self) -> usize {
        self.obs.len()
    }

    pub fn envs(&self) -> usize {
        self.h0.nrows()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Replays the sequences, returning the caches, means and values per step.
fn replay(
    params: &[f64],
    shape: &PolicyShape,
    batch: &SequenceBatch,
) -> (Vec<StepCache>, Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let mut h = batch.h0.clone();
    let mut caches = Vec::with_capacity(batch.steps());
    let mut means = Vec::with_capacity(batch.steps());
    let mut values = Vec::with_capacity(batch.steps());
    for t in 0..batch.steps() {
        for (i, &start) in batch.starts[t].iter().enumerate() {
            if start {
                h.row_mut(i).fill(0.0);
            }
        }
        let out = forward_step(params, shape, batch.obs[t].view(), h.view());
        h = out.h_new;
        caches.push(out.cache);
        means.push(out.mean);
        values.push(out.value);
    }
    (caches, means, values)
}

/// Log-probabilities of the stored actions under `params`, `T x B`.
pub fn replay_log_probs(params: &[f64], shape: &PolicyShape, batch: &SequenceBatch) -> Array2<f64> {
    let (_, means, _) = replay(params, shape, batch);
    let log_std = log_std_of(params, shape);
    let mut out = Array2::zeros((batch.steps(), batch.envs()));
    for t in 0..batch.steps() {
        for i in 0..batch.envs() {
            let a = batch.actions[t].row(i).to_vec();
            out[[t, i]] = gaussian_log_prob(means[t].row(i), log_std, &a);
        }
    }
    out
}

/// Total loss `L_clip + c_v L_value - c_e H` averaged over all samples,
/// together with its gradient.
pub fn loss_and_grad(
    params: &[f64],
    shape: &PolicyShape,
    batch: &SequenceBatch,
    coefs: &LossCoefs,
) -> (LossStats, Vec<f64>) {
    let (t_len, b) = (batch.steps(), batch.envs());
    let a_dim = shape.action_dim;
    let n = (t_len * b) as f64;
    let (caches, means, values) = replay(params, shape, batch);
    let log_std = log_std_of(params, shape).to_owned();
    let inv_var = log_std.mapv(|l| (-2.0 * l).exp());
    let entropy = gaussian_entropy(log_std.view());

    let mut stats = LossStats {
        entropy,
        ..Default::default()
    };
    let mut grad = vec![0.0; params.len()];
    let mut d_log_std = Array1::<f64>::zeros(a_dim);
    let mut d_means = Vec::with_capacity(t_len);
    let mut d_values = Vec::with_capacity(t_len);

    for t in 0..t_len {
        let mut dm = Array2::zeros((b, a_dim));
        let mut dv = Array1::zeros(b);
        for i in 0..b {
            let action = batch.actions[t].row(i);
            let mean = means[t].row(i);
            let mut lp = 0.0;
            for j in 0..a_dim {
                let z = (action[j] - mean[j]) * (-log_std[j]).exp();
                lp += -0.5 * z * z - log_std[j] - 0.5 * LOG_2PI;
            }
            let adv = batch.advantages[[t, i]];
            let log_ratio = lp - batch.old_log_prob[[t, i]];
            let ratio = log_ratio.exp();
            let clipped = ratio.clamp(1.0 - coefs.clip_eps, 1.0 + coefs.clip_eps);
            let unclipped_obj = ratio * adv;
            let clipped_obj = clipped * adv;
            stats.policy_loss -= unclipped_obj.min(clipped_obj);
            if (ratio - 1.0).abs() > coefs.clip_eps {
                stats.clip_fraction += 1.0;
            }
            stats.approx_kl += (ratio - 1.0) - log_ratio;

            // Gradient flows only through the unclipped branch when it is the minimum.
            if unclipped_obj <= clipped_obj {
                let d_lp = -ratio * adv / n;
                for j in 0..a_dim {
                    let diff = action[j] - mean[j];
                    dm[[i, j]] = d_lp * diff * inv_var[j];
                    d_log_std[j] += d_lp * (diff * diff * inv_var[j] - 1.0);
                }
            }

            let err = values[t][i] - batch.returns[[t, i]];
            stats.value_loss += err * err;
            dv[i] = coefs.value_coef * 2.0 * err / n;
        }
        d_means.push(dm);
        d_values.push(dv);
    }
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.clip_fraction /= n;
    stats.approx_kl /= n;
    stats.loss = stats.policy_loss + coefs.value_coef * stats.value_loss - coefs.entropy_coef * entropy;

    let mut carry = Array2::zeros((b, shape.hidden));
    for t in (0..t_len).rev() {
        let mut dh_prev = backward_step(
            params,
            shape,
            &caches[t],
            d_means[t].view(),
            d_values[t].view(),
            carry.view(),
            &mut grad,
        );
        for (i, &start) in batch.starts[t].iter().enumerate() {
            if start {
                dh_prev.row_mut(i).fill(0.0);
            }
        }
        carry = dh_prev;
    }
    let off = log_std_offset(shape);
    for j in 0..a_dim {
        grad[off + j] += d_log_std[j] - coefs.entropy_coef;
    }
    (stats, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_batch(shape: &PolicyShape, params: &[f64], rng: &mut ChaCha8Rng) -> SequenceBatch {
        let (t_len, b) = (4, 3);
        let obs: Vec<Array2<f64>> = (0..t_len)
            .map(|_| Array2::from_shape_fn((b, shape.obs_dim), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let actions = (0..t_len)
            .map(|_| Array2::from_shape_fn((b, shape.action_dim), |_| rng.random_range(-1.0..1.0)))
            .collect();
        let mut batch = SequenceBatch {
            obs,
            actions,
            old_log_prob: Array2::zeros((t_len, b)),
            advantages: Array2::from_shape_fn((t_len, b), |_| rng.random_range(-1.0..1.0)),
            returns: Array2::from_shape_fn((t_len, b), |_| rng.random_range(-1.0..1.0)),
            starts: vec![vec![false, true, false], vec![false; 3], vec![true, false, false], vec![false; 3]],
            h0: Array2::from_shape_fn((b, shape.hidden), |_| rng.random_range(-0.5..0.5)),
        };
        batch.old_log_prob = replay_log_probs(params, shape, &batch);
        batch
    }

    #[test]
    fn clip_arithmetic() {
        let eps: f64 = 0.2;
        let (ratio, adv) = (1.5f64, 2.0);
        let obj = (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv);
        assert!((obj - 1.2 * adv).abs() < 1e-15);
    }

    #[test]
    fn unit_ratio_gives_unclipped_gradient() {
        let shape = PolicyShape {
            obs_dim: 3,
            hidden: 2,
            action_dim: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params: Vec<f64> = (0..shape.n_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let batch = toy_batch(&shape, &params, &mut rng);
        let clipped = LossCoefs {
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
        };
        let wide = LossCoefs {
            clip_eps: 1e9,
            ..clipped
        };
        let (s1, g1) = loss_and_grad(&params, &shape, &batch, &clipped);
        let (s2, g2) = loss_and_grad(&params, &shape, &batch, &wide);
        assert_eq!(s1.clip_fraction, 0.0);
        assert!(s1.approx_kl.abs() < 1e-12);
        assert!((s1.loss - s2.loss).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let shape = PolicyShape {
            obs_dim: 3,
            hidden: 2,
            action_dim: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params: Vec<f64> = (0..shape.n_params()).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut batch = toy_batch(&shape, &params, &mut rng);
        // Shift the behavior log-probs so ratios sit strictly inside the clip band.
        batch.old_log_prob.mapv_inplace(|l| l + 0.05);
        let coefs = LossCoefs {
            clip_eps: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
        };
        let (_, g) = loss_and_grad(&params, &shape, &batch, &coefs);
        let h = 1e-6;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            let up = loss_and_grad(&p, &shape, &batch, &coefs).0.loss;
            p[k] -= 2.0 * h;
            let down = loss_and_grad(&p, &shape, &batch, &coefs).0.loss;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-6);
            assert!(err < 1e-4, "param {k}: analytic {} fd {fd}", g[k]);
        }
    }
}
