//! Push a Gaussian cloud of oscillator initial states through a quarter
//! period and histogram where it lands.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example propagate_sho -- [checkpoint]
//! ```
//!
//! Without a checkpoint the RK4 oracle moves the cloud; with one (for
//! example from `train_sho`) the bundle does, and its phase-volume
//! distortion `|det ∂x̂/∂x₀|` is reported as well.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use odebundle::bundle::{Bundle, BundleConfig, Interval, ParamSetting};
use odebundle::checkpoint::Checkpoint;
use odebundle::systems::OdeSystem;
use odebundle::uq::{
    jacobian_determinant, propagate, GridAxis, OracleModel, TrajectoryModel, WeightedHistogram,
};

fn main() -> odebundle::Result<()> {
    let bundle: Option<Bundle> = match std::env::args().nth(1) {
        Some(p) => Some(Checkpoint::load(Path::new(&p))?.into_bundle()?),
        None => None,
    };
    let oracle = OracleModel::new(
        BundleConfig::new(
            OdeSystem::Sho,
            0.0,
            2.0 * std::f64::consts::PI,
            vec![Interval::new(-1.0, 1.0); 2],
            vec![ParamSetting::Free(Interval::new(0.5, 2.0))],
        ),
        1e-3,
    );
    let model: &dyn TrajectoryModel = match &bundle {
        Some(b) => b,
        None => &oracle,
    };

    let (mean, sigma) = ([0.3, -0.2], 0.15);
    let density = |x: &[f64]| -> odebundle::Result<f64> {
        let q: f64 = x
            .iter()
            .zip(mean)
            .map(|(v, m)| ((v - m) / sigma).powi(2))
            .sum();
        Ok((-0.5 * q).exp() / (2.0 * std::f64::consts::PI * sigma * sigma))
    };
    let grid = [GridAxis::new(-1.0, 1.0, 80), GridAxis::new(-1.0, 1.0, 80)];
    let bins = vec![GridAxis::new(-1.2, 1.2, 48), GridAxis::new(-1.2, 1.2, 48)];
    let mut hist = propagate(
        model,
        &grid,
        &[1.0],
        FRAC_PI_2,
        density,
        WeightedHistogram::new(vec![0, 1], bins)?,
    )?;
    hist.normalize()?;

    // With k = 1 a quarter period maps (x, v) to (v, −x).
    let m = hist.mean();
    println!(
        "cloud mean after a quarter period: ({:.4}, {:.4}); exact ({:.4}, {:.4})",
        m[0], m[1], mean[1], -mean[0]
    );
    println!(
        "weight landing outside the histogram: {:.2e}",
        hist.outside_weight
    );
    let path = "propagated_sho.csv";
    hist.write_csv(
        std::fs::File::create(path).map_err(|e| odebundle::Error::io(Path::new(path), e))?,
    )?;
    println!("wrote {path}");

    if let Some(b) = &bundle {
        let mut worst = 0.0f64;
        let mut sum = 0.0;
        let n = 400;
        for i in 0..n {
            let x0 = [grid[0].center(i % 80), grid[1].center((7 * i) % 80)];
            let d = (jacobian_determinant(b, FRAC_PI_2, &x0, &[1.0])? - 1.0).abs();
            worst = worst.max(d);
            sum += d;
        }
        println!(
            "bundle ||det J| - 1|: mean {:.3e}, max {worst:.3e}",
            sum / n as f64
        );
    }
    Ok(())
}
