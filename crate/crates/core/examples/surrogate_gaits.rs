//! Drives the surrogate executor with each gait held fixed across the
//! hardest stair and gap tiles, showing which gaits can cross which terrain.

use std::sync::Arc;

use gaitnav::config::RunConfig;
use gaitnav::decoder::{Gait, HighLevelAction};
use gaitnav::eval::{GaitLock, GoalSeeker, Policy};
use gaitnav::hier_env::HierEnv;
use gaitnav::terrain::TerrainFamily;

fn main() -> gaitnav::Result<()> {
    let cfg = RunConfig::default();
    let stack = cfg.build_stack()?;
    let caps = &cfg.lowlevel.surrogate.capabilities;
    println!("gait   max step  max span  max tilt");
    for g in Gait::ALL {
        let c = caps.get(g);
        println!("{:<6} {:>7.2} m {:>7.2} m {:>6.2} rad", g.to_string(), c.max_step, c.max_span, c.max_tilt);
    }

    let level = cfg.terrain.levels - 1;
    for family in [TerrainFamily::Stair, TerrainFamily::Gap, TerrainFamily::Tilt] {
        println!("\n{family} level {level}");
        for gait in Gait::ALL {
            let mut policy = GaitLock {
                inner: GoalSeeker::new(cfg.decoder.a_max),
                gait,
                a_max: cfg.decoder.a_max,
            };
            let mut env = HierEnv::new(Arc::clone(&stack), level, family, 5)?;
            policy.begin(1);
            let mut obs = env.observe();
            let start = env.goal_distance();
            let mut closest = start;
            let outcome = loop {
                let a = policy.act(std::slice::from_ref(&obs)).remove(0);
                let step = env.step(&HighLevelAction::from_slice(&a)?)?;
                closest = closest.min(step.goal_distance);
                obs = step.obs;
                if step.flags.reached {
                    break "reached goal".to_string();
                }
                if step.flags.done() {
                    break match step.flags.failure {
                        Some(f) => format!("{f:?}"),
                        None => "timeout".into(),
                    };
                }
            };
            println!(
                "  {:<6} {:>3} steps, closest {closest:.2} m of {start:.2} m: {outcome}",
                gait.to_string(),
                env.t()
            );
        }
    }
    Ok(())
}
