//! Train the reduced FitzHugh-Nagumo bundle twice, once sampling the whole
//! time window from the start and once with a growing horizon, and compare
//! how well each tracks the oscillator late in the window.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example fhn_curriculum -- [seed]
//! ```
//!
//! Both runs read their settings from `configs/fhn_desk.toml` and
//! `configs/fhn_curriculum_desk.toml`. A probe point counts as stuck when
//! the bundle satisfies the equation there (every residual component below
//! 1e-3) yet sits more than 0.5 from the RK4 trajectory: typically a
//! network that has settled on a nullcline or the unstable fixed point.

use std::path::PathBuf;

use odebundle::config::RunConfig;
use odebundle::reference::tracking_diagnostics;
use odebundle::training::Trainer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> odebundle::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));
    let configs = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["fhn_desk", "fhn_curriculum_desk"] {
        let cfg = RunConfig::load(&configs.join(format!("{name}.toml")))?;
        let domain = cfg.bundle_config()?;
        let spec = cfg.network_spec(&domain)?;
        let training = cfg.training_config()?.clone();

        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let x0s: Vec<Vec<f64>> = (0..20)
            .map(|_| domain.x0_box.iter().map(|iv| iv.lerp(rng.gen())).collect())
            .collect();
        let half = (domain.tf - domain.t0) / 2.0;
        let late: Vec<f64> = (1..=50)
            .map(|i| domain.t0 + half + half * i as f64 / 50.0)
            .collect();

        println!(
            "{name}: {} batches of {}",
            training.batches, training.batch_size
        );
        let report_every = (training.batches / 5).max(1);
        let mut trainer = Trainer::new(domain.clone(), &spec, training, seed)?;
        while !trainer.is_finished() {
            let r = trainer.step()?;
            if (r.batch + 1) % report_every == 0 {
                let d =
                    tracking_diagnostics(&trainer.bundle()?, &x0s, &[], &late, 0.01, 1e-3, 0.5)?;
                println!(
                    "  batch {:>7}  horizon {:>6.1}  late residual {:.3e}  distance {:.3e}  stuck {:.3}",
                    r.batch + 1,
                    r.t_horizon,
                    d.mean_residual,
                    d.mean_distance,
                    d.stuck_fraction
                );
            }
        }
    }
    Ok(())
}
