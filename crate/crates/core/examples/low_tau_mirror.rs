//! Grid search over the low-tau mirror rule `d_K < d_L or tau_K <= t_L`.
//! Mixed groups almost never finish by K, so the tau clause sweeps them up
//! and precision collapses.
//!
//! cargo run --release --example low_tau_mirror

use selective_rollout::gate::{self, K_GRID};
use selective_rollout::report::{grid_search_table, grid_search_verdict};
use selective_rollout::stats::mean;
use selective_rollout::types::GroupLabel;
use selective_rollout::{annotate, generate_corpus, CorpusSpec, GateSupervisorConfig};

fn main() -> selective_rollout::Result<()> {
    let mut corpus = generate_corpus(&CorpusSpec::calibrated(500, 42), &GateSupervisorConfig::disabled())?;
    for g in corpus.iter_mut() {
        annotate(g, &K_GRID)?;
    }
    for label in [GroupLabel::AllFail, GroupLabel::AllSucceed, GroupLabel::Mixed] {
        let taus: Vec<f64> = corpus.iter().filter(|g| g.label == label).map(|g| g.divergence[&10].tau_k()).collect();
        println!("{:>12}: {:>3} groups, mean tau_10 {:.3}", label.to_string(), taus.len(), mean(&taus));
    }
    let search = gate::low_tau_mirror_search(&corpus, &K_GRID, &gate::LOW_TAU_TL_GRID, &gate::low_tau_dl_grid(), 30, 1e-4, 0.80)?;
    println!("\n{}", grid_search_table(&search).to_text());
    println!("{}", grid_search_verdict(&search));
    Ok(())
}
