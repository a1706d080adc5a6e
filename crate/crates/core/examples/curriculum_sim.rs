//! Simulates the per-environment curriculum against agents of different
//! skill, where success gets less likely as levels rise.

use gaitnav::curriculum::{CurriculumConfig, CurriculumState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gaitnav::Result<()> {
    let cfg = CurriculumConfig::default();
    let levels = 10;
    println!(
        "window {} episodes, promote at >= {}, demote below {}",
        cfg.window_len,
        cfg.threshold,
        cfg.window_len - cfg.threshold + 1
    );
    for skill in [2.0, 5.0, 8.0] {
        let mut state = CurriculumState::new(&cfg, 64, levels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        print!("skill {skill}:");
        for round in 1..=400 {
            for env in 0..state.n_envs() {
                let level = state.level(env)? as f64;
                // Logistic success curve centred on the agent's skill.
                let p = 1.0 / (1.0 + (1.5 * (level - skill)).exp());
                state.record_outcome(env, rng.random_bool(p))?;
            }
            if round % 100 == 0 {
                print!("  after {round} episodes mean {:.2}", state.mean_level());
            }
        }
        println!("\n  histogram {:?}", state.histogram());
    }
    Ok(())
}
