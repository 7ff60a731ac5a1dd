//! Gradient steps on a fixed rollout buffer, with and without the
//! zero-variance groups the gate would drop. On a matched batch the
//! gradient norm ratio equals the kept-item fraction.
//!
//! cargo run --release --example fixed_buffer_training

use selective_rollout::report::tier2_table;
use selective_rollout::toytrain::{run_tier2, TrainConfig};
use selective_rollout::{annotate, generate_corpus, CorpusSpec, GateSupervisorConfig};

fn main() -> selective_rollout::Result<()> {
    let cfg = TrainConfig::default();
    let mut buffer = generate_corpus(&CorpusSpec::calibrated(200, 7), &GateSupervisorConfig::disabled())?;
    for g in buffer.iter_mut() {
        annotate(g, &[cfg.gate.k])?;
    }
    let r = run_tier2(&buffer, 20, 4, &cfg, 7)?;
    println!("{}", tier2_table(&r).to_text());
    for s in r.steps.iter().take(5) {
        println!(
            "step {:>2}: items {} -> {}, |g| {:.4} -> {}, matched ratio {:?} vs (N-m)/N {:?}",
            s.step,
            s.baseline_items,
            s.gated_items,
            s.baseline_grad_l2,
            s.gated_grad_l2.map_or("skipped".into(), |v| format!("{v:.4}")),
            s.matched_ratio,
            s.matched_identity
        );
    }
    Ok(())
}
