//! Roll out one group in the search world and print all seven signals at
//! each K of the grid.
//!
//! cargo run --example divergence_signals -- [seed]

use selective_rollout::divergence::SIGNAL_NAMES;
use selective_rollout::gate::K_GRID;
use selective_rollout::simenv::{corpus_group, CorpusSpec};
use selective_rollout::{annotate, GateSupervisorConfig};

fn main() -> selective_rollout::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(42);
    let spec = CorpusSpec::calibrated(8, seed);
    for i in 0..spec.n_groups {
        let mut group = corpus_group(&spec, i, &GateSupervisorConfig::disabled())?;
        annotate(&mut group, &K_GRID)?;
        println!("{} ({}) rewards {:?} -> {}", group.prompt_id, group.task_type, group.rewards, group.label);
        print!("{:>28}", "");
        for k in K_GRID {
            print!("  K={k:<4}");
        }
        println!();
        for (j, name) in SIGNAL_NAMES.iter().enumerate() {
            print!("{name:>28}");
            for k in K_GRID {
                print!("  {:.3} ", group.divergence[&k].values()[j]);
            }
            println!();
        }
        println!();
    }
    Ok(())
}
