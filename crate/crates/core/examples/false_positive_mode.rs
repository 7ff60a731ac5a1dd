//! The gate's blind spot: a group that follows one script for its first K
//! steps and only then branches has d_K = 0 but can still end mixed.
//!
//! cargo run --example false_positive_mode -- [post_success_prob]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selective_rollout::simenv::make_fp_mode_group;
use selective_rollout::{annotate, GateSupervisorConfig, SearchWorld, TaskType};

fn main() -> selective_rollout::Result<()> {
    let p = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let gate = GateSupervisorConfig::new(10, 0.12);
    let mut mixed = 0;
    for i in 0..20 {
        let world = SearchWorld::sample(TaskType::PickAndPlaceSimple, 12, i, &mut rng).with_decoy(12);
        let mut full = make_fp_mode_group(&world, 8, 30, p, i, &GateSupervisorConfig::disabled())?;
        annotate(&mut full, &[10])?;
        let gated = make_fp_mode_group(&world, 8, 30, p, i, &gate)?;
        if !full.is_zero_variance() {
            mixed += 1;
        }
        println!(
            "{}: d_10 {:.3}, full rewards {:?} ({}), gated arm cut = {}",
            full.prompt_id,
            full.divergence[&10].d_k(),
            full.rewards,
            full.label,
            gated.is_cut()
        );
    }
    println!("{mixed}/20 groups the gate cuts would have carried signal");
    Ok(())
}
