//! Fixed-level evaluation with success counted by the reach latch.
//!
//! Each `(family, level)` cell runs `K` independent episodes in lockstep.
//! Episode `k` of a cell always sees the same tile and spawn for a given
//! seed, so two policies evaluated with one seed face identical terrain.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{Gait, HighLevelAction, ACTION_DIM, GAIT_CHANNEL};
use crate::error::{Error, Result};
use crate::export::{read_jsonl, write_jsonl};
use crate::hier_env::{episode_seed, Failure, HierEnv, HierStack, TrajectoryRecord};
use crate::terrain::TerrainFamily;
use crate::trainer::policy::RecurrentPolicy;

pub const EVAL_KIND: &str = "eval";

/// Maps a batch of observations to a batch of raw high-level actions.
pub trait Policy: Send {
    /// Called before the first step of a batch of `n` fresh episodes.
    fn begin(&mut self, n: usize);
    fn act(&mut self, obs: &[Vec<f64>]) -> Vec<Vec<f64>>;
    fn name(&self) -> String;
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn begin(&mut self, n: usize) {
        (**self).begin(n);
    }

    fn act(&mut self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (**self).act(obs)
    }

    fn name(&self) -> String {
        (**self).name()
    }
}

/// A trained recurrent policy acting with its mean action.
pub struct NeuralPolicy {
    policy: RecurrentPolicy,
    hidden: Array2<f64>,
}

impl NeuralPolicy {
    pub fn new(policy: RecurrentPolicy) -> Self {
        let hidden = policy.zero_hidden(0);
        Self { policy, hidden }
    }
}

impl Policy for NeuralPolicy {
    fn begin(&mut self, n: usize) {
        self.hidden = self.policy.zero_hidden(n);
    }

    fn act(&mut self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let d = self.policy.shape.obs_dim;
        let x = Array2::from_shape_fn((obs.len(), d), |(i, j)| obs[i][j]);
        let out = self.policy.step(x.view(), self.hidden.view());
        self.hidden = out.h_new;
        out.mean.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    fn name(&self) -> String {
        format!("neural(hidden={})", self.policy.shape.hidden)
    }
}

/// Walks straight at the goal: turns toward its bearing and drives forward
/// at `speed` (normalized, in `[-1, 1]`) once roughly facing it.
#[derive(Debug, Clone)]
pub struct GoalSeeker {
    pub speed: f64,
    pub turn_gain: f64,
    pub a_max: f64,
}

impl GoalSeeker {
    pub fn new(a_max: f64) -> Self {
        Self {
            speed: 0.6,
            turn_gain: 1.5,
            a_max,
        }
    }
}

impl Policy for GoalSeeker {
    fn begin(&mut self, _n: usize) {}

    fn act(&mut self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        obs.iter()
            .map(|o| {
                let bearing = o[1].atan2(o[2]);
                let mut a = vec![0.0; ACTION_DIM];
                a[0] = self.speed * o[2].max(0.0) * self.a_max;
                a[2] = (self.turn_gain * bearing).clamp(-1.0, 1.0) * self.a_max;
                a
            })
            .collect()
    }

    fn name(&self) -> String {
        format!("goal_seeker(speed={})", self.speed)
    }
}

/// Forces the gait channel of an inner policy to one gait.
pub struct GaitLock<P> {
    pub inner: P,
    pub gait: Gait,
    pub a_max: f64,
}

impl<P: Policy> Policy for GaitLock<P> {
    fn begin(&mut self, n: usize) {
        self.inner.begin(n);
    }

    fn act(&mut self, obs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut a = self.inner.act(obs);
        for row in &mut a {
            row[GAIT_CHANNEL] = self.gait.channel_value() * self.a_max;
        }
        a
    }

    fn name(&self) -> String {
        format!("{}+{}", self.inner.name(), self.gait)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub families: Vec<TerrainFamily>,
    /// Zero-based level indices.
    pub levels: Vec<usize>,
    /// Episodes per `(family, level)` cell.
    pub episodes: usize,
    pub seed: u64,
    /// End an episode as soon as the goal is reached; the outcome is the
    /// same because the reach latch cannot be undone.
    pub stop_on_reach: bool,
}

impl EvalSpec {
    /// Every family at levels 5..=9, 100 episodes each.
    pub fn protocol(seed: u64) -> Self {
        Self {
            families: TerrainFamily::ALL.to_vec(),
            levels: (5..10).collect(),
            episodes: 100,
            seed,
            stop_on_reach: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub family: TerrainFamily,
    pub level: usize,
    pub episode: usize,
    pub seed: u64,
    pub success: bool,
    pub failure: Option<Failure>,
    pub steps: usize,
    pub episode_return: f64,
    /// Decision steps per gait: trot, pronk, pace, bound.
    pub gait_steps: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub family: TerrainFamily,
    pub level: usize,
    pub episodes: usize,
    pub successes: usize,
    /// `successes / episodes`, 0 for an empty cell.
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: TerrainFamily,
    /// Unweighted mean of the family's cell rates.
    pub success_rate: f64,
    pub gait_steps: [usize; 4],
}

/// Everything needed to rebuild a report from its episode list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMeta {
    pub spec: EvalSpec,
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalMeta,
    pub cells: Vec<EvalCell>,
    pub families: Vec<FamilySummary>,
    /// Unweighted mean over cells.
    pub mean_success_cells: f64,
    /// Successes over all episodes.
    pub mean_success_episodes: f64,
    pub episodes: Vec<EvalEpisode>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl EvalReport {
    /// Aggregates episodes into cells in spec order.
    pub fn from_episodes(meta: EvalMeta, episodes: Vec<EvalEpisode>) -> Self {
        let spec = &meta.spec;
        let mut cells = Vec::new();
        let mut families = Vec::new();
        for &family in &spec.families {
            let mut rates = Vec::new();
            let mut gait_steps = [0usize; 4];
            for &level in &spec.levels {
                let eps: Vec<&EvalEpisode> =
                    episodes.iter().filter(|e| e.family == family && e.level == level).collect();
                let successes = eps.iter().filter(|e| e.success).count();
                for e in &eps {
                    for (acc, n) in gait_steps.iter_mut().zip(e.gait_steps) {
                        *acc += n;
                    }
                }
                let rate = ratio(successes, eps.len());
                rates.push(rate);
                cells.push(EvalCell {
                    family,
                    level,
                    episodes: eps.len(),
                    successes,
                    success_rate: rate,
                });
            }
            families.push(FamilySummary {
                family,
                success_rate: mean(&rates),
                gait_steps,
            });
        }
        let cell_rates: Vec<f64> = cells.iter().map(|c| c.success_rate).collect();
        let total_successes = episodes.iter().filter(|e| e.success).count();
        Self {
            mean_success_cells: mean(&cell_rates),
            mean_success_episodes: ratio(total_successes, episodes.len()),
            meta,
            cells,
            families,
            episodes,
        }
    }

    pub fn cell(&self, family: TerrainFamily, level: usize) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.family == family && c.level == level)
    }

    /// Header with the spec, then one line per episode.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, EVAL_KIND, serde_json::to_value(&self.meta)?, &self.episodes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, episodes) = read_jsonl(path, EVAL_KIND)?;
        let meta: EvalMeta =
            serde_json::from_value(header.meta).map_err(|e| Error::Schema(format!("eval header: {e}")))?;
        Ok(Self::from_episodes(meta, episodes))
    }

    /// Fixed-width table of cell rates.
    pub fn table(&self) -> String {
        let mut s = format!("{:<8}", "family");
        for l in &self.meta.spec.levels {
            s.push_str(&format!(" {:>6}", format!("L{l}")));
        }
        s.push_str(&format!(" {:>6}\n", "mean"));
        for f in &self.families {
            s.push_str(&format!("{:<8}", f.family.name()));
            for l in &self.meta.spec.levels {
                let c = self.cell(f.family, *l).expect("cell exists for every family and level");
                s.push_str(&format!(" {:>6.3}", c.success_rate));
            }
            s.push_str(&format!(" {:>6.3}\n", f.success_rate));
        }
        s.push_str(&format!(
            "mean over cells {:.4}, over episodes {:.4} ({} episodes)\n",
            self.mean_success_cells,
            self.mean_success_episodes,
            self.episodes.len()
        ));
        s
    }
}

fn cell_seed(seed: u64, family: TerrainFamily, level: usize) -> u64 {
    let f = TerrainFamily::ALL.iter().position(|&x| x == family).expect("family is listed");
    episode_seed(seed, f, level as u64)
}

/// Runs the evaluation protocol; see [`evaluate_traced`].
pub fn evaluate(stack: &Arc<HierStack>, policy: &mut dyn Policy, spec: &EvalSpec) -> Result<EvalReport> {
    evaluate_traced(stack, policy, spec, false).map(|(r, _)| r)
}

/// Runs every cell of `spec` and optionally records every decision step.
pub fn evaluate_traced(
    stack: &Arc<HierStack>,
    policy: &mut dyn Policy,
    spec: &EvalSpec,
    record: bool,
) -> Result<(EvalReport, Vec<TrajectoryRecord>)> {
    for &l in &spec.levels {
        if l >= stack.terrain.levels {
            return Err(Error::Domain(format!(
                "level {l} outside 0..{}",
                stack.terrain.levels
            )));
        }
    }
    if spec.episodes == 0 {
        log::warn!("evaluation with zero episodes per cell: every success rate is reported as 0");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(stack.env.workers)
        .build()
        .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?;
    let mut episodes = Vec::new();
    let mut trace = Vec::new();
    for &family in &spec.families {
        for &level in &spec.levels {
            let base = cell_seed(spec.seed, family, level);
            let seeds: Vec<u64> = (0..spec.episodes).map(|k| episode_seed(base, k, 0)).collect();
            let mut envs = pool.install(|| {
                seeds
                    .par_iter()
                    .map(|&s| HierEnv::new(Arc::clone(stack), level, family, s))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut active = vec![true; envs.len()];
            let mut reached = vec![false; envs.len()];
            let mut obs: Vec<Vec<f64>> = envs.iter().map(HierEnv::observe).collect();
            policy.begin(envs.len());
            while active.iter().any(|&a| a) {
                let actions = policy.act(&obs);
                let results = pool.install(|| {
                    envs.par_iter_mut()
                        .zip(actions.par_iter())
                        .zip(active.par_iter())
                        .map(|((env, a), &on)| {
                            if !on {
                                return Ok(None);
                            }
                            let out = env.step_traced(&HighLevelAction::from_slice(a)?)?;
                            Ok(Some(out))
                        })
                        .collect::<Result<Vec<_>>>()
                })?;
                for (i, r) in results.into_iter().enumerate() {
                    let Some((o, ll)) = r else { continue };
                    if record {
                        let env = &envs[i];
                        trace.push(TrajectoryRecord {
                            env: i,
                            episode: 0,
                            step: env.t() - 1,
                            family,
                            level,
                            pos: env.robot().pos,
                            yaw: env.robot().yaw,
                            gait: o.command.gait.index(),
                            command: o.command.to_array().to_vec(),
                            goal_distance: o.goal_distance,
                            reward: o.reward.clone(),
                            lowlevel_reward: ll,
                            flags: o.flags,
                        });
                    }
                    reached[i] = o.flags.success;
                    if o.flags.done() || (spec.stop_on_reach && o.flags.success) {
                        active[i] = false;
                    }
                    obs[i] = o.obs;
                }
            }
            for (k, env) in envs.iter().enumerate() {
                let s = env.summary(k, 0);
                episodes.push(EvalEpisode {
                    family,
                    level,
                    episode: k,
                    seed: seeds[k],
                    success: reached[k],
                    failure: if reached[k] { None } else { s.failure },
                    steps: s.steps,
                    episode_return: s.episode_return,
                    gait_steps: s.gait_steps,
                });
            }
        }
    }
    let meta = EvalMeta {
        spec: spec.clone(),
        policy: policy.name(),
    };
    Ok((EvalReport::from_episodes(meta, episodes), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn spec(episodes: usize) -> EvalSpec {
        EvalSpec {
            families: vec![TerrainFamily::Rough, TerrainFamily::Gap],
            levels: vec![0, 3],
            episodes,
            seed: 5,
            stop_on_reach: true,
        }
    }

    #[test]
    fn empty_evaluation_is_defined() {
        let stack = RunConfig::default().build_stack().unwrap();
        let mut p = GoalSeeker::new(1.0);
        let r = evaluate(&stack, &mut p, &spec(0)).unwrap();
        assert_eq!(r.cells.len(), 4);
        assert!(r.cells.iter().all(|c| c.episodes == 0 && c.success_rate == 0.0));
        assert_eq!(r.mean_success_cells, 0.0);
        assert_eq!(r.mean_success_episodes, 0.0);
    }

    #[test]
    fn rates_are_exact_and_round_trip() {
        let stack = RunConfig::default().build_stack().unwrap();
        let mut p = GoalSeeker::new(1.0);
        let r = evaluate(&stack, &mut p, &spec(7)).unwrap();
        assert_eq!(r.episodes.len(), 28);
        for c in &r.cells {
            assert_eq!(c.episodes, 7);
            assert_eq!(c.success_rate, c.successes as f64 / 7.0);
        }
        let rough0 = r.cell(TerrainFamily::Rough, 0).unwrap();
        assert_eq!(rough0.successes, 7, "flat ground is easy for the scripted walker");
        for e in &r.episodes {
            assert_eq!(e.gait_steps.iter().sum::<usize>(), e.steps);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.jsonl");
        r.save(&path).unwrap();
        assert_eq!(EvalReport::load(&path).unwrap(), r);
    }

    #[test]
    fn evaluation_is_deterministic() {
        let stack = RunConfig::default().build_stack().unwrap();
        let a = evaluate(&stack, &mut GoalSeeker::new(1.0), &spec(3)).unwrap();
        let b = evaluate(&stack, &mut GoalSeeker::new(1.0), &spec(3)).unwrap();
        assert_eq!(a, b);
    }
}
