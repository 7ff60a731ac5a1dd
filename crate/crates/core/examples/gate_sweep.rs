//! Sweep the single-axis gate threshold over a calibrated corpus and print
//! cut counts, precision, recall and savings at each d_L.
//!
//! cargo run --release --example gate_sweep -- [n_groups] [seed]

use selective_rollout::gate::{self, GateRule, K_GRID};
use selective_rollout::report::sweep_table;
use selective_rollout::{annotate, generate_corpus, CorpusSpec, GateSupervisorConfig};

fn main() -> selective_rollout::Result<()> {
    let mut args = std::env::args().skip(1);
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let spec = CorpusSpec::calibrated(n, seed);
    let mut corpus = generate_corpus(&spec, &GateSupervisorConfig::disabled())?;
    for g in corpus.iter_mut() {
        annotate(g, &K_GRID)?;
    }
    let zv = corpus.iter().filter(|g| g.is_zero_variance()).count();
    println!("{n} groups, {zv} zero-variance, G = {}, T_max = {}\n", spec.g, spec.t_max);

    let obs = gate::observations(&corpus, 10, 1e-4)?;
    let grid = [0.05, 0.08, 0.10, 0.12, 0.14, 0.18];
    let rows = gate::sweep(&obs, GateRule::SingleAxis { d_l: 0.0 }, 10, &grid, spec.t_max);
    println!("{}", sweep_table(&rows).to_text());

    let or_rows = gate::sweep(&obs, GateRule::OrRule { d_l: 0.0, tau_h: 0.9 }, 10, &grid, spec.t_max);
    println!("{}", sweep_table(&or_rows).to_text());
    Ok(())
}
