//! Recurrent PPO over the vectorized hierarchical environment.
//!
//! One iteration collects `rollout_t` steps from every environment with the
//! current policy, then runs `epochs` passes of `minibatches` updates. Each
//! minibatch is a group of whole environment sequences so the recurrent
//! state can be replayed from the stored segment starts. Collection and
//! update are separated by a full barrier. All randomness of an iteration
//! comes from a generator seeded by `(seed, iteration)`, which makes runs
//! and resumed runs reproducible bit for bit.

pub mod adam;
pub mod buffer;
pub mod checkpoint;
pub mod gae;
pub mod policy;
pub mod ppo;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::curriculum::CurriculumState;
use crate::decoder::ACTION_DIM;
use crate::error::{Error, Result};
use crate::export::JsonlWriter;
use crate::hier_env::{episode_seed, Failure, HierStack, VecEnv};

use adam::{clip_grad_norm, Adam};
use buffer::RolloutBuffer;
use checkpoint::Checkpoint;
use gae::normalize_advantages;
use policy::{gaussian_log_prob, PolicyShape, RecurrentPolicy};
use ppo::{loss_and_grad, LossCoefs, LossStats};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const METRICS_KIND: &str = "metrics";
pub const CONFIG_FILE: &str = "config.toml";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub n_envs: usize,
    pub max_iterations: usize,
    pub seed: u64,
    pub rollout_t: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub hidden: usize,
    pub log_std_init: f64,
    pub adam_eps: f64,
    /// Rewards are multiplied by this factor before advantage estimation.
    pub reward_scale: f64,
    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            n_envs: 100,
            max_iterations: 20000,
            seed: 42,
            rollout_t: 24,
            lr: 1e-4,
            entropy_coef: 1e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            epochs: 5,
            minibatches: 4,
            value_coef: 0.5,
            max_grad_norm: 1.0,
            hidden: 128,
            log_std_init: -0.5,
            adam_eps: 1e-8,
            reward_scale: 1.0,
            checkpoint_every: 100,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("trainer: {m}")));
        for (name, v) in [
            ("n_envs", self.n_envs),
            ("max_iterations", self.max_iterations),
            ("rollout_t", self.rollout_t),
            ("epochs", self.epochs),
            ("minibatches", self.minibatches),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        for (name, v) in [
            ("lr", self.lr),
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("max_grad_norm", self.max_grad_norm),
            ("adam_eps", self.adam_eps),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        for (name, v) in [
            ("clip_eps", self.clip_eps),
            ("gamma", self.gamma),
            ("gae_lambda", self.gae_lambda),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {v}"));
            }
        }
        if !self.log_std_init.is_finite() {
            return bad("log_std_init must be finite".into());
        }
        if self.minibatches > self.n_envs {
            return bad(format!(
                "{} minibatches cannot be formed from {} environment sequences",
                self.minibatches, self.n_envs
            ));
        }
        Ok(())
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    /// Completed iterations including this one.
    pub iteration: usize,
    pub transitions: usize,
    /// Mean per-step total reward, before `reward_scale`.
    pub mean_reward: f64,
    /// Mean per-step weighted contribution of each reward term.
    pub reward_terms: BTreeMap<String, f64>,
    pub episodes: usize,
    pub successes: usize,
    /// `successes / episodes`, or 0 when no episode ended.
    pub success_rate: f64,
    pub failures: FailureCounts,
    pub mean_episode_return: f64,
    pub promotions: usize,
    pub demotions: usize,
    pub mean_level: f64,
    pub level_histogram: Vec<usize>,
    /// Share of decision steps per gait: trot, pronk, pace, bound.
    pub gait_fractions: [f64; 4],
    pub loss: LossStats,
    pub grad_norm: f64,
    pub mean_log_std: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCounts {
    pub fall: usize,
    pub collision: usize,
    pub out_of_bounds: usize,
    pub timeout: usize,
}

/// Episode and reward statistics gathered while collecting.
#[derive(Debug, Clone, Default)]
pub struct CollectStats {
    pub transitions: usize,
    pub reward_sum: f64,
    pub term_sums: BTreeMap<String, f64>,
    pub episodes: usize,
    pub successes: usize,
    pub failures: FailureCounts,
    pub return_sum: f64,
    pub promotions: usize,
    pub demotions: usize,
    pub gait_steps: [usize; 4],
}

/// Averages over the minibatch updates of one iteration.
#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    pub loss: LossStats,
    pub grad_norm: f64,
}

pub struct Trainer {
    cfg: RunConfig,
    shape: PolicyShape,
    policy: RecurrentPolicy,
    adam: Adam,
    venv: VecEnv,
    iteration: usize,
    hidden: Array2<f64>,
    obs: Vec<Vec<f64>>,
    /// Environments whose episode starts at the next collected step.
    fresh: Vec<bool>,
    run_dir: Option<PathBuf>,
    metrics: Option<JsonlWriter>,
}

/// Generator for the stochastic parts of one iteration.
pub fn iteration_rng(seed: u64, iteration: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(episode_seed(seed, usize::MAX, iteration as u64))
}

fn env_seed(seed: u64, iteration: usize) -> u64 {
    if iteration == 0 {
        seed
    } else {
        episode_seed(seed, usize::MAX - 1, iteration as u64)
    }
}

impl Trainer {
    /// Fresh policy and curriculum; fails on any configuration inconsistency.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let stack = cfg.build_stack()?;
        let shape = PolicyShape {
            obs_dim: stack.env.obs_dim(),
            hidden: cfg.trainer.hidden,
            action_dim: ACTION_DIM,
        };
        let mut init_rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.trainer.seed, usize::MAX - 2, 0));
        let policy = RecurrentPolicy::new(shape, cfg.trainer.log_std_init, &mut init_rng)?;
        let adam = Adam::new(shape.n_params(), cfg.trainer.lr, cfg.trainer.adam_eps);
        let curriculum = CurriculumState::new(&cfg.curriculum, cfg.trainer.n_envs, cfg.terrain.levels)?;
        Self::assemble(cfg, stack, policy, adam, curriculum, 0)
    }

    /// Continues from a checkpoint. Environments restart with fresh
    /// episodes; policy, optimizer and curriculum state carry over.
    pub fn resume(cfg: RunConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        ckpt.ensure_compatible(&cfg)?;
        if ckpt.curriculum.n_envs() != cfg.trainer.n_envs {
            return Err(Error::Config(format!(
                "checkpoint tracks {} environments, configuration asks for {}",
                ckpt.curriculum.n_envs(),
                cfg.trainer.n_envs
            )));
        }
        let stack = cfg.build_stack()?;
        let mut adam = ckpt.adam;
        adam.lr = cfg.trainer.lr;
        Self::assemble(cfg, stack, ckpt.policy, adam, ckpt.curriculum, ckpt.iteration)
    }

    fn assemble(
        cfg: RunConfig,
        stack: Arc<HierStack>,
        policy: RecurrentPolicy,
        adam: Adam,
        curriculum: CurriculumState,
        iteration: usize,
    ) -> Result<Self> {
        let venv = VecEnv::new(stack, curriculum, env_seed(cfg.trainer.seed, iteration))?;
        let n = venv.n_envs();
        let obs = venv.observations();
        Ok(Self {
            shape: policy.shape,
            hidden: policy.zero_hidden(n),
            policy,
            adam,
            venv,
            iteration,
            obs,
            fresh: vec![true; n],
            cfg,
            run_dir: None,
            metrics: None,
        })
    }

    /// Persists the configuration and a metrics log under `dir`. A fresh run
    /// starts a new log; a resumed run appends to the existing one.
    pub fn with_run_dir(mut self, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let cfg_path = dir.join(CONFIG_FILE);
        let metrics_path = dir.join(METRICS_FILE);
        if self.iteration > 0 && metrics_path.exists() {
            if cfg_path.exists() {
                let previous = RunConfig::load(&cfg_path)?;
                let diff = previous.diff(&self.cfg);
                if !diff.is_empty() {
                    log::warn!("resumed run changes the configuration: {}", diff.join(", "));
                }
            }
            self.metrics = Some(JsonlWriter::append(&metrics_path, METRICS_KIND)?);
        } else {
            let meta = serde_json::json!({
                "config_hash": self.cfg.hash(),
                "n_envs": self.cfg.trainer.n_envs,
                "rollout_t": self.cfg.trainer.rollout_t,
            });
            self.metrics = Some(JsonlWriter::create(&metrics_path, METRICS_KIND, meta)?);
        }
        self.cfg.save(&cfg_path)?;
        self.run_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &RecurrentPolicy {
        &self.policy
    }

    pub fn curriculum(&self) -> &CurriculumState {
        self.venv.curriculum()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.cfg,
            self.iteration,
            self.policy.clone(),
            self.adam.clone(),
            self.venv.curriculum().clone(),
        )
    }

    fn obs_matrix(&self, rows: &[Vec<f64>]) -> Array2<f64> {
        let d = self.shape.obs_dim;
        let mut m = Array2::zeros((rows.len(), d));
        for (i, r) in rows.iter().enumerate() {
            m.row_mut(i).assign(&ndarray::ArrayView1::from(r.as_slice()));
        }
        m
    }

    /// Runs the behavior policy for `rollout_t` steps in every environment.
    pub fn collect(&mut self, rng: &mut ChaCha8Rng) -> Result<(RolloutBuffer, CollectStats)> {
        let t_len = self.cfg.trainer.rollout_t;
        let n = self.venv.n_envs();
        let scale = self.cfg.trainer.reward_scale;
        let mut buf = RolloutBuffer::new(t_len, n, self.hidden.clone());
        let mut stats = CollectStats::default();
        let log_std = self.policy.log_std().to_owned();

        for t in 0..t_len {
            for i in 0..n {
                if self.fresh[i] {
                    self.hidden.row_mut(i).fill(0.0);
                }
            }
            buf.starts.push(self.fresh.clone());
            let x = self.obs_matrix(&self.obs);
            let out = self.policy.step(x.view(), self.hidden.view());
            let actions = self.policy.sample(out.mean.view(), rng);
            for i in 0..n {
                let a = actions.row(i).to_vec();
                buf.log_probs[[t, i]] = gaussian_log_prob(out.mean.row(i), log_std.view(), &a);
            }
            buf.values.row_mut(t).assign(&out.value);

            let rows: Vec<Vec<f64>> = actions.rows().into_iter().map(|r| r.to_vec()).collect();
            let step = self.venv.batch_step(&rows)?;

            // Critic estimates for episodes cut by the horizon.
            let cut: Vec<usize> = (0..n)
                .filter(|&i| step.flags[i].truncated && !step.flags[i].terminated)
                .collect();
            if !cut.is_empty() {
                let xo: Vec<Vec<f64>> = cut
                    .iter()
                    .map(|&i| step.final_obs[i].clone().expect("finished env keeps its last observation"))
                    .collect();
                let hf = out.h_new.select(Axis(0), &cut);
                let fv = self.policy.step(self.obs_matrix(&xo).view(), hf.view()).value;
                for (k, &i) in cut.iter().enumerate() {
                    buf.final_values[[t, i]] = fv[k];
                }
            }

            for i in 0..n {
                let f = step.flags[i];
                buf.rewards[[t, i]] = scale * step.rewards[i];
                buf.terminated[[t, i]] = f.terminated;
                buf.truncated[[t, i]] = f.truncated && !f.terminated;
                self.fresh[i] = f.done();
                stats.reward_sum += step.rewards[i];
                for term in &step.breakdowns[i].terms {
                    *stats.term_sums.entry(term.name.to_string()).or_insert(0.0) += term.contribution();
                }
                stats.gait_steps[step.gaits[i].index()] += 1;
            }
            for ep in &step.episodes {
                stats.episodes += 1;
                stats.successes += usize::from(ep.success);
                stats.return_sum += ep.episode_return;
                match ep.failure {
                    Some(Failure::Fall) => stats.failures.fall += 1,
                    Some(Failure::Collision) => stats.failures.collision += 1,
                    Some(Failure::OutOfBounds) => stats.failures.out_of_bounds += 1,
                    None if !ep.success => stats.failures.timeout += 1,
                    None => {}
                }
            }
            for ch in &step.level_changes {
                if ch.to > ch.from {
                    stats.promotions += 1;
                } else {
                    stats.demotions += 1;
                }
            }
            buf.actions.push(actions);
            buf.obs.push(x);
            stats.transitions += n;
            self.hidden = out.h_new;
            self.obs = step.obs;
        }

        for i in 0..n {
            if self.fresh[i] {
                self.hidden.row_mut(i).fill(0.0);
            }
        }
        let x = self.obs_matrix(&self.obs);
        buf.bootstrap = self.policy.step(x.view(), self.hidden.view()).value;
        buf.validate()?;
        Ok((buf, stats))
    }

    /// PPO epochs over the rollout.
    pub fn update(&mut self, buf: &RolloutBuffer, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        let tc = self.cfg.trainer.clone();
        let (mut adv, returns) = buf.advantages(tc.gamma, tc.gae_lambda)?;
        normalize_advantages(adv.as_slice_mut().expect("advantages are contiguous"));
        let coefs = LossCoefs {
            clip_eps: tc.clip_eps,
            value_coef: tc.value_coef,
            entropy_coef: tc.entropy_coef,
        };
        let n = buf.n_envs();
        let mut order: Vec<usize> = (0..n).collect();
        let mut acc = UpdateStats::default();
        let mut count = 0usize;
        for epoch in 0..tc.epochs {
            order.shuffle(rng);
            for mb in 0..tc.minibatches {
                let lo = mb * n / tc.minibatches;
                let hi = (mb + 1) * n / tc.minibatches;
                let mut envs = order[lo..hi].to_vec();
                envs.sort_unstable();
                let batch = buf.sequence_batch(&envs, &adv, &returns);
                let (stats, mut grad) = loss_and_grad(&self.policy.params, &self.shape, &batch, &coefs);
                if !stats.loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(self.abort_non_finite(epoch, mb, &stats, &envs));
                }
                let norm = clip_grad_norm(&mut grad, tc.max_grad_norm);
                self.adam.step(&mut self.policy.params, &grad);
                acc.loss.loss += stats.loss;
                acc.loss.policy_loss += stats.policy_loss;
                acc.loss.value_loss += stats.value_loss;
                acc.loss.entropy += stats.entropy;
                acc.loss.approx_kl += stats.approx_kl;
                acc.loss.clip_fraction += stats.clip_fraction;
                acc.grad_norm += norm;
                count += 1;
            }
        }
        let c = count as f64;
        acc.loss.loss /= c;
        acc.loss.policy_loss /= c;
        acc.loss.value_loss /= c;
        acc.loss.entropy /= c;
        acc.loss.approx_kl /= c;
        acc.loss.clip_fraction /= c;
        acc.grad_norm /= c;
        Ok(acc)
    }

    fn abort_non_finite(&self, epoch: usize, minibatch: usize, stats: &LossStats, envs: &[usize]) -> Error {
        let params = &self.policy.params;
        let dump = serde_json::json!({
            "iteration": self.iteration,
            "epoch": epoch,
            "minibatch": minibatch,
            "envs": envs,
            "loss": stats,
            "non_finite_params": params.iter().filter(|p| !p.is_finite()).count(),
            "max_abs_param": params.iter().fold(0.0f64, |m, p| m.max(p.abs())),
            "log_std": self.policy.log_std().to_vec(),
            "levels": self.venv.curriculum().levels(),
        });
        let mut msg = format!(
            "non-finite loss at iteration {} epoch {epoch} minibatch {minibatch}",
            self.iteration
        );
        if let Some(dir) = &self.run_dir {
            let path = dir.join("diagnostic.json");
            if std::fs::write(&path, serde_json::to_vec_pretty(&dump).unwrap_or_default()).is_ok() {
                msg.push_str(&format!("; diagnostics written to {}", path.display()));
            }
        } else {
            msg.push_str(&format!("; diagnostics: {dump}"));
        }
        Error::Runtime(msg)
    }

    /// One collect-then-update cycle; appends to the metrics log and writes
    /// a checkpoint when due.
    pub fn run_iteration(&mut self) -> Result<IterationMetrics> {
        let mut rng = iteration_rng(self.cfg.trainer.seed, self.iteration);
        let (buf, cs) = self.collect(&mut rng)?;
        let us = self.update(&buf, &mut rng)?;
        self.iteration += 1;

        let steps = cs.transitions.max(1) as f64;
        let total_gait: usize = cs.gait_steps.iter().sum();
        let cur = self.venv.curriculum();
        let m = IterationMetrics {
            iteration: self.iteration,
            transitions: cs.transitions,
            mean_reward: cs.reward_sum / steps,
            reward_terms: cs.term_sums.iter().map(|(k, v)| (k.clone(), v / steps)).collect(),
            episodes: cs.episodes,
            successes: cs.successes,
            success_rate: if cs.episodes == 0 {
                0.0
            } else {
                cs.successes as f64 / cs.episodes as f64
            },
            failures: cs.failures,
            mean_episode_return: if cs.episodes == 0 {
                0.0
            } else {
                cs.return_sum / cs.episodes as f64
            },
            promotions: cs.promotions,
            demotions: cs.demotions,
            mean_level: cur.mean_level(),
            level_histogram: cur.histogram(),
            gait_fractions: std::array::from_fn(|g| cs.gait_steps[g] as f64 / total_gait.max(1) as f64),
            loss: us.loss,
            grad_norm: us.grad_norm,
            mean_log_std: self.policy.log_std().mean().unwrap_or(0.0),
        };
        if let Some(w) = &mut self.metrics {
            w.write(&m)?;
            w.flush()?;
        }
        let every = self.cfg.trainer.checkpoint_every;
        if every > 0 && self.iteration.is_multiple_of(every) {
            self.save_checkpoint()?;
        }
        Ok(m)
    }

    /// Runs until `max_iterations` completed iterations (or `iterations`
    /// more when given) and saves a final checkpoint.
    pub fn train(&mut self, iterations: Option<usize>) -> Result<Vec<IterationMetrics>> {
        let end = match iterations {
            Some(k) => self.iteration + k,
            None => self.cfg.trainer.max_iterations,
        };
        let mut out = Vec::new();
        while self.iteration < end {
            let m = self.run_iteration()?;
            log::info!(
                "iter {:>5} reward {:+.4} success {:.2} ({} eps) level {:.2} kl {:.4}",
                m.iteration,
                m.mean_reward,
                m.success_rate,
                m.episodes,
                m.mean_level,
                m.loss.approx_kl
            );
            out.push(m);
        }
        self.save_checkpoint()?;
        Ok(out)
    }

    /// Writes `ckpt_<iteration>.json` and refreshes the latest checkpoint.
    pub fn save_checkpoint(&self) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.run_dir else {
            return Ok(None);
        };
        let ckpt = self.checkpoint();
        let path = dir.join("checkpoints").join(format!("ckpt_{:06}.json", self.iteration));
        ckpt.save(&path)?;
        ckpt.save(&dir.join(LATEST_CHECKPOINT))?;
        Ok(Some(path))
    }
}
