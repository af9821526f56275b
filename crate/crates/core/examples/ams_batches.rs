//! Batch composition as the sampling parameter theta moves: genuine pairs
//! versus pseudo-pairs built from same-class donors.

use pgad::ams::{build_batch, sampling_ratio, theta_gradient, AmsMode, AmsState};
use pgad::synthdata::{generate_dataset, DatasetConfig};

fn main() -> pgad::Result<()> {
    let data = generate_dataset(&DatasetConfig {
        samples_per_class: 40,
        missing_rate: 0.5,
        ..DatasetConfig::default()
    })?;
    let paired: Vec<_> = data.iter().filter(|s| s.paired()).map(|s| (s.id, s.label)).collect();
    let unpaired: Vec<_> = data.iter().filter(|s| !s.paired()).map(|s| (s.id, s.label)).collect();

    for theta in [-2.0, -0.5, 0.0, 0.5, 2.0] {
        let state = AmsState {
            theta,
            ..AmsState::new(AmsMode::Dynamic, 0.5)
        };
        let r = sampling_ratio(&state);
        let plan = build_batch(&paired, &unpaired, 32, r, 42)?;
        println!(
            "theta {theta:+.1}  r {r:.3}  genuine {:>2}  pseudo {:>2}  shortfall {}",
            plan.genuine.len(),
            plan.pseudo.len(),
            plan.shortfall
        );
    }
    let pp = build_batch(&paired, &unpaired, 8, 0.5, 1)?.pseudo[0];
    println!("pseudo-pair: recipient {} gets modality B of donor {} (class {})", pp.recipient, pp.donor, pp.class);

    // Pseudo-pairs that are harder for the teacher push theta up.
    let g = theta_gradient(&AmsState::new(AmsMode::Dynamic, 0.5), 0.4, 0.9)?;
    println!("dL/dtheta with CE genuine 0.4, CE pseudo 0.9: {g:.4}");
    Ok(())
}
