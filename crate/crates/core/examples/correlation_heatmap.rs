//! Spearman correlation and AUROC of every signal against zero-variance
//! membership, over the K grid, plus the per-task-type breakdown.
//!
//! cargo run --release --example correlation_heatmap -- [--flip]

use selective_rollout::gate::K_GRID;
use selective_rollout::report::{heatmap_tables, per_type_table};
use selective_rollout::stats::{heatmap, per_type_breakdown};
use selective_rollout::{annotate, generate_corpus, CorpusSpec, GateSupervisorConfig};

fn main() -> selective_rollout::Result<()> {
    let flip = std::env::args().any(|a| a == "--flip");
    let mut corpus = generate_corpus(&CorpusSpec::calibrated(500, 42), &GateSupervisorConfig::disabled())?;
    for g in corpus.iter_mut() {
        annotate(g, &K_GRID)?;
    }
    let (rho, au) = heatmap_tables(&heatmap(&corpus, &K_GRID, flip)?);
    println!("{}\n{}", rho.to_text(), au.to_text());
    println!("{}", per_type_table(&per_type_breakdown(&corpus, 10, &K_GRID)?).to_text());
    Ok(())
}
