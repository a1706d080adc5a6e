//! Runs the five-family evaluation grid over the hardest levels with the
//! scripted goal seeker, then repeats it with single-gait variants.
//!
//! ```text
//! cargo run --release --example eval_protocol -- [EPISODES_PER_CELL]
//! ```

use gaitnav::config::RunConfig;
use gaitnav::decoder::Gait;
use gaitnav::eval::{evaluate, EvalSpec, GaitLock, GoalSeeker};

fn main() -> gaitnav::Result<()> {
    let episodes: usize = std::env::args().nth(1).map(|s| s.parse().expect("episode count")).unwrap_or(20);
    let cfg = RunConfig::default();
    let stack = cfg.build_stack()?;
    let spec = EvalSpec {
        episodes,
        ..EvalSpec::protocol(0)
    };
    let a_max = cfg.decoder.a_max;

    let report = evaluate(&stack, &mut GoalSeeker::new(a_max), &spec)?;
    print!("{}", report.table());

    println!("\nper-family success with the gait held fixed:");
    print!("{:<6}", "gait");
    for f in &spec.families {
        print!(" {:>7}", f.to_string());
    }
    println!();
    for gait in Gait::ALL {
        let mut policy = GaitLock {
            inner: GoalSeeker::new(a_max),
            gait,
            a_max,
        };
        let r = evaluate(&stack, &mut policy, &spec)?;
        print!("{:<6}", gait.to_string());
        for f in &r.families {
            print!(" {:>7.2}", f.success_rate);
        }
        println!();
    }
    Ok(())
}
