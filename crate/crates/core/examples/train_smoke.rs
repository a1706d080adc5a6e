//! Short training run on rough terrain followed by a level-0 evaluation.
//!
//! ```text
//! cargo run --release --example train_smoke -- [ITERATIONS] [RUN_DIR]
//! ```

use gaitnav::config::RunConfig;
use gaitnav::eval::{evaluate, EvalSpec, NeuralPolicy};
use gaitnav::terrain::TerrainFamily;
use gaitnav::trainer::Trainer;

fn main() -> gaitnav::Result<()> {
    let _ = env_logger::builder().filter_level(log::LevelFilter::Info).try_init();
    let mut args = std::env::args().skip(1);
    let iterations: usize = args.next().map(|s| s.parse().expect("iteration count")).unwrap_or(300);
    let cfg = RunConfig::from_toml_str(include_str!("../configs/smoke.toml"))?;
    let mut trainer = Trainer::new(cfg.clone())?;
    if let Some(dir) = args.next() {
        trainer = trainer.with_run_dir(std::path::Path::new(&dir))?;
    }

    for _ in 0..iterations {
        let m = trainer.run_iteration()?;
        if m.iteration % 10 == 0 {
            println!(
                "iter {:>4}  reward {:+.3}  episodes {:>3}  success {:.2}  mean level {:.2}  log std {:+.2}",
                m.iteration, m.mean_reward, m.episodes, m.success_rate, m.mean_level, m.mean_log_std
            );
        }
    }

    let stack = cfg.build_stack()?;
    let spec = EvalSpec {
        families: vec![TerrainFamily::Rough],
        levels: vec![0],
        episodes: 50,
        seed: 7,
        stop_on_reach: true,
    };
    let report = evaluate(&stack, &mut NeuralPolicy::new(trainer.policy().clone()), &spec)?;
    print!("{}", report.table());
    Ok(())
}
