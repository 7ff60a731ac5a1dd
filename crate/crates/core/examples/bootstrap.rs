//! Percentile bootstrap intervals. For tiny samples where B >= n^n every
//! resample is enumerated and the interval is exact.
//!
//! cargo run --example bootstrap

use selective_rollout::stats::{bootstrap_ci, mean, median};

fn main() -> selective_rollout::Result<()> {
    let small = [1.0, 4.0, 10.0];
    let r = bootstrap_ci(&small, mean, 27, 0.95, 1)?;
    println!("n=3, B=27: mean {:.3} CI [{:.3}, {:.3}] exhaustive={}", r.point_estimate, r.ci_low, r.ci_high, r.exhaustive);

    let savings = [12.1, 15.3, 9.8, 14.4, 16.9, 11.2, 13.0, 15.8, 10.4, 14.1];
    for b in [200, 1000, 5000] {
        let r = bootstrap_ci(&savings, mean, b, 0.95, 42)?;
        println!("mean saving, B={b:>4}: {:.2} [{:.2}, {:.2}]", r.point_estimate, r.ci_low, r.ci_high);
    }
    let r = bootstrap_ci(&savings, |v| median(v).unwrap_or(f64::NAN), 2000, 0.90, 42)?;
    println!("median saving, 90%: {:.2} [{:.2}, {:.2}]", r.point_estimate, r.ci_low, r.ci_high);
    Ok(())
}
