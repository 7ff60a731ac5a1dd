//! Compare the d_K gate against random, oracle and dynamic-sampling arms
//! at a matched budget.
//!
//! cargo run --release --example baseline_arms

use selective_rollout::gate::{self, K_GRID};
use selective_rollout::report::arms_table;
use selective_rollout::{annotate, generate_corpus, CorpusSpec, GateSupervisorConfig};

fn main() -> selective_rollout::Result<()> {
    let spec = CorpusSpec::calibrated(500, 42);
    let mut corpus = generate_corpus(&spec, &GateSupervisorConfig::disabled())?;
    for g in corpus.iter_mut() {
        annotate(g, &K_GRID)?;
    }
    let obs = gate::observations(&corpus, 10, 1e-4)?;
    let d_l = 0.12;
    let budget = obs.iter().filter(|o| gate::single_axis_gate(o.d_k, d_l)).count();
    let arms = gate::baseline_arms(&obs, 10, spec.t_max, d_l, 0.9, budget, 42)?;
    println!("{}", arms_table(&arms).to_text());
    Ok(())
}
