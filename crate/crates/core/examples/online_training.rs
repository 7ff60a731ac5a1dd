//! Online GRPO on the toy tabular policy, baseline against gated, over
//! several seeds. Compares the measured gradient-norm ratio with the
//! prediction from the zero-advantage fractions.
//!
//! cargo run --release --example online_training -- [iterations]

use selective_rollout::report::tier3_table;
use selective_rollout::toytrain::{run_tier3, Tier3Config, TrainConfig};

fn main() -> selective_rollout::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let t3 = Tier3Config { iterations, ..Tier3Config::default() };
    let r = run_tier3(&TrainConfig::default(), &t3)?;
    println!("{}", tier3_table(&r).to_text());
    println!(
        "measured {:.4}, predicted {:.4}, relative gap {:.1}%",
        r.measured_ratio,
        r.predicted_ratio,
        r.ratio_relative_error() * 100.0
    );
    Ok(())
}
