//! Runs one scripted episode and reports what each reward term contributed.

use std::collections::BTreeMap;
use std::sync::Arc;

use gaitnav::config::RunConfig;
use gaitnav::decoder::HighLevelAction;
use gaitnav::eval::{GoalSeeker, Policy};
use gaitnav::hier_env::HierEnv;
use gaitnav::terrain::TerrainFamily;

fn main() -> gaitnav::Result<()> {
    let cfg = RunConfig::default();
    let stack = cfg.build_stack()?;
    let mut env = HierEnv::new(Arc::clone(&stack), 2, TerrainFamily::Rough, 11)?;
    let mut policy = GoalSeeker::new(cfg.decoder.a_max);
    policy.begin(1);

    let mut obs = env.observe();
    let mut sums: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut total = 0.0;
    let mut reached_at = None;
    loop {
        let a = policy.act(std::slice::from_ref(&obs)).remove(0);
        let step = env.step(&HighLevelAction::from_slice(&a)?)?;
        for term in &step.reward.terms {
            let e = sums.entry(term.name.to_string()).or_default();
            e.0 += term.raw;
            e.1 += term.contribution();
        }
        total += step.reward.total;
        if step.flags.reached && reached_at.is_none() {
            reached_at = Some(env.t());
        }
        obs = step.obs;
        if step.flags.done() {
            break;
        }
    }
    println!("episode of {} steps, goal first reached at {:?}", env.t(), reached_at);
    println!("{:<12} {:>12} {:>12}", "term", "sum raw", "sum weighted");
    for (name, (raw, weighted)) in &sums {
        println!("{name:<12} {raw:>12.4} {weighted:>12.4}");
    }
    println!("{:<12} {:>12} {total:>12.4}", "total", "");
    Ok(())
}
