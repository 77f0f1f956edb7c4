//! Where will an asteroid be, given two position fixes 0.05 time units apart?
//!
//! The restricted three-body domain and the two measurements come from
//! `configs/crtbp_desk.toml`. Every cell of the initial-state grid is
//! weighted by the likelihood of both fixes, then carried to `t = 1`; the
//! result is the posterior over the asteroid's position at that time.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example asteroid_posterior -- [checkpoint]
//! ```
//!
//! The RK4 oracle moves the grid unless a trained CRTBP checkpoint is given.

use std::path::{Path, PathBuf};

use odebundle::bundle::Bundle;
use odebundle::checkpoint::Checkpoint;
use odebundle::config::{DensitySpec, RunConfig};
use odebundle::uq::{
    asteroid_posterior_weight, propagate, OracleModel, TrajectoryModel, WeightedHistogram,
};

fn main() -> odebundle::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/crtbp_desk.toml");
    let cfg = RunConfig::load(&path)?;
    let domain = cfg.bundle_config()?;
    let section = cfg
        .propagate
        .as_ref()
        .expect("crtbp_desk has a propagate section");
    let DensitySpec::Measurements { measurements } = &section.density else {
        panic!("crtbp_desk propagates a measurement likelihood");
    };
    let fixes = measurements
        .iter()
        .map(|m| m.to_measurement())
        .collect::<odebundle::Result<Vec<_>>>()?;

    let bundle: Option<Bundle> = match std::env::args().nth(1) {
        Some(p) => Some(Checkpoint::load(Path::new(&p))?.into_bundle()?),
        None => None,
    };
    let oracle = OracleModel::new(domain, 1e-3);
    let model: &dyn TrajectoryModel = match &bundle {
        Some(b) => b,
        None => &oracle,
    };

    let weight =
        |x0: &[f64]| asteroid_posterior_weight(model, x0, &section.theta, &fixes[0], &fixes[1]);
    let hist = WeightedHistogram::new(
        section.histogram.components.clone(),
        section.histogram.bins.clone(),
    )?;
    let mut hist = propagate(
        model,
        &section.x0_grid,
        &section.theta,
        section.t,
        weight,
        hist,
    )?;
    let cells: usize = section.x0_grid.iter().map(|a| a.cells).product();
    println!(
        "{cells} initial-state cells weighted by {} fixes",
        fixes.len()
    );
    if hist.all_outside() {
        println!("all posterior mass left the histogram window");
        return Ok(());
    }
    let outside = hist.outside_weight / hist.total_weight;
    hist.normalize()?;
    let m = hist.mean();
    println!(
        "posterior mean position at t = {}: ({:.4}, {:.4})",
        section.t, m[0], m[1]
    );
    let occupied = hist.weights.iter().filter(|&&w| w > 1e-6).count();
    println!("{occupied} bins hold more than 1e-6 of the mass; {outside:.2e} of it fell outside the window");
    let out = "asteroid_posterior.csv";
    hist.write_csv(std::fs::File::create(out).map_err(|e| odebundle::Error::io(out, e))?)?;
    println!("wrote {out}");
    Ok(())
}
