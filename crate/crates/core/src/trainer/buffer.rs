//! Fixed-length on-policy rollout storage.

use ndarray::{Array1, Array2};

use super::gae::compute_gae;
use super::ppo::SequenceBatch;
use crate::error::{Error, Result};

/// `T x N` transitions collected by the behavior policy.
///
/// `starts[t][i]` marks that environment `i` began a new episode right
/// before step `t`, so the recurrent state must be zeroed there. `h0` holds
/// each environment's hidden state at the start of the segment, before any
/// such reset.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    /// `T` matrices of shape `N x obs_dim`.
    pub obs: Vec<Array2<f64>>,
    /// `T` matrices of shape `N x action_dim`.
    pub actions: Vec<Array2<f64>>,
    pub log_probs: Array2<f64>,
    pub values: Array2<f64>,
    pub rewards: Array2<f64>,
    pub terminated: Array2<bool>,
    pub truncated: Array2<bool>,
    /// Critic estimate of the last observation of an episode truncated at `t`.
    pub final_values: Array2<f64>,
    pub starts: Vec<Vec<bool>>,
    pub h0: Array2<f64>,
    /// Critic estimate of the observation following the segment.
    pub bootstrap: Array1<f64>,
}

impl RolloutBuffer {
    pub fn new(t_len: usize, n_envs: usize, h0: Array2<f64>) -> Self {
        Self {
            obs: Vec::with_capacity(t_len),
            actions: Vec::with_capacity(t_len),
            log_probs: Array2::zeros((t_len, n_envs)),
            values: Array2::zeros((t_len, n_envs)),
            rewards: Array2::zeros((t_len, n_envs)),
            terminated: Array2::from_elem((t_len, n_envs), false),
            truncated: Array2::from_elem((t_len, n_envs), false),
            final_values: Array2::zeros((t_len, n_envs)),
            starts: Vec::with_capacity(t_len),
            h0,
            bootstrap: Array1::zeros(n_envs),
        }
    }

    pub fn steps(&self) -> usize {
        self.log_probs.nrows()
    }

    pub fn n_envs(&self) -> usize {
        self.log_probs.ncols()
    }

    /// Checks that every step was filled and that no environment was
    /// stepped past a terminal flag without a reset.
    pub fn validate(&self) -> Result<()> {
        let t_len = self.steps();
        if self.obs.len() != t_len || self.actions.len() != t_len || self.starts.len() != t_len {
            return Err(Error::Runtime(format!(
                "rollout holds {} observation rows for {t_len} steps",
                self.obs.len()
            )));
        }
        for t in 1..t_len {
            for i in 0..self.n_envs() {
                let ended = self.terminated[[t - 1, i]] || self.truncated[[t - 1, i]];
                if ended != self.starts[t][i] {
                    return Err(Error::Runtime(format!(
                        "env {i} step {t}: episode boundary and hidden-state reset disagree"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Per-environment advantages and returns, both `T x N`.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> Result<(Array2<f64>, Array2<f64>)> {
        let (t_len, n) = (self.steps(), self.n_envs());
        let mut adv = Array2::zeros((t_len, n));
        let mut ret = Array2::zeros((t_len, n));
        for i in 0..n {
            let col = |a: &Array2<f64>| a.column(i).to_vec();
            let colb = |a: &Array2<bool>| a.column(i).to_vec();
            let (a, r) = compute_gae(
                &col(&self.rewards),
                &col(&self.values),
                self.bootstrap[i],
                &colb(&self.terminated),
                &colb(&self.truncated),
                &col(&self.final_values),
                gamma,
                lambda,
            )?;
            adv.column_mut(i).assign(&Array1::from(a));
            ret.column_mut(i).assign(&Array1::from(r));
        }
        Ok((adv, ret))
    }

    /// The full sequences of the listed environments.
    pub fn sequence_batch(&self, envs: &[usize], advantages: &Array2<f64>, returns: &Array2<f64>) -> SequenceBatch {
        let pick_rows = |m: &Array2<f64>| m.select(ndarray::Axis(0), envs);
        let pick_cols = |m: &Array2<f64>| m.select(ndarray::Axis(1), envs);
        SequenceBatch {
            obs: self.obs.iter().map(pick_rows).collect(),
            actions: self.actions.iter().map(pick_rows).collect(),
            old_log_prob: pick_cols(&self.log_probs),
            advantages: pick_cols(advantages),
            returns: pick_cols(returns),
            starts: self.starts.iter().map(|s| envs.iter().map(|&i| s[i]).collect()).collect(),
            h0: pick_rows(&self.h0),
        }
    }
}
