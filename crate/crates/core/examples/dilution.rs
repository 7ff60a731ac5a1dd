//! Gradient dilution: zero-advantage items add nothing to the summed
//! gradient but still count in the mean, so removing them scales the
//! per-item gradient by (1 - z_gated) / (1 - z_base).
//!
//! cargo run --example dilution

use selective_rollout::grpo::{advantages, dilution_ratio, l2_preservation};

fn main() -> selective_rollout::Result<()> {
    for (zb, zg) in [(0.40, 0.28), (0.33, 0.24), (0.50, 0.10), (0.20, 0.20)] {
        println!("z_base {zb:.2}  z_gated {zg:.2}  ->  ratio {:.4}", dilution_ratio(zb, zg)?);
    }

    let groups = [[1.0, 1.0, 1.0, 1.0], [0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 1.0], [1.0, 0.0, 0.0, 0.0]];
    let mut all = vec![];
    let mut kept = vec![];
    for r in groups {
        let a = advantages(&r, 1e-4)?;
        println!("rewards {r:?} -> advantages {:?}", a.values.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>());
        kept.extend(std::iter::repeat_n(a.std > 0.0, r.len()));
        all.extend(a.values);
    }
    println!(
        "dropping the two zero-variance groups keeps {:.1}% of the advantage L2 norm",
        100.0 * l2_preservation(&all, &kept)?
    );
    Ok(())
}
