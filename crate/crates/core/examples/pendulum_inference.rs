//! Infer the stiffness and damping of a rebound pendulum from noisy angle
//! measurements.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example pendulum_inference -- [checkpoint]
//! ```
//!
//! The data and grids come from `configs/pendulum_desk.toml`. Without a
//! checkpoint the RK4 oracle scores a (k, c) grid with the start state pinned
//! at its true value. With a checkpoint trained from that config
//! (`odebundle train --config configs/pendulum_desk.toml`) the bundle scores
//! the full four-dimensional grid, and gradient ascent refines its maximum.

use std::path::{Path, PathBuf};

use odebundle::checkpoint::Checkpoint;
use odebundle::config::{DataSpec, RunConfig};
use odebundle::uq::{
    bayes_posterior, map_estimate, sort_measurements, Coordinate, GridAxis, MapOptions,
    OracleModel, PosteriorGrid,
};

fn summarize(post: &PosteriorGrid) {
    let best = post.point(post.argmax());
    for (name, v) in post.names.iter().zip(&best) {
        print!("{name} = {v:.4}  ");
    }
    println!();
    for k in 0..post.free.len() {
        let marginal = post.marginal(k);
        let axis = post.axis(k);
        let mean: f64 = marginal
            .iter()
            .enumerate()
            .map(|(i, p)| p * axis.center(i))
            .sum();
        let var: f64 = marginal
            .iter()
            .enumerate()
            .map(|(i, p)| p * (axis.center(i) - mean).powi(2))
            .sum();
        println!(
            "  marginal {}: mean {mean:.4}, sd {:.4}",
            post.names[post.free[k]],
            var.sqrt()
        );
    }
}

fn main() -> odebundle::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/pendulum_desk.toml");
    let cfg = RunConfig::load(&path)?;
    let domain = cfg.bundle_config()?;
    let section = cfg
        .infer
        .as_ref()
        .expect("pendulum_desk has an infer section");
    let data = section.data.measurements(&domain, cfg.seed)?;
    if let DataSpec::Synthetic { x0, theta, .. } = &section.data {
        println!(
            "{} observations of a trajectory from x0 = {x0:?} with (k, c) = {theta:?}",
            data.len()
        );
    }

    match std::env::args().nth(1) {
        None => {
            let DataSpec::Synthetic { x0, .. } = &section.data else {
                panic!("the oracle run pins the synthetic start state");
            };
            let oracle = OracleModel::new(domain.clone(), 1e-3);
            let coords = vec![
                Coordinate::Fixed(x0[0]),
                Coordinate::Fixed(x0[1]),
                Coordinate::Free(GridAxis::new(2.0, 5.0, 60)),
                Coordinate::Free(GridAxis::new(0.0, 2.0, 40)),
            ];
            let names = odebundle::uq::coordinate_names(&domain);
            let post = bayes_posterior(&oracle, &data, names, coords)?;
            print!("oracle grid argmax: ");
            summarize(&post);
        }
        Some(ckpt) => {
            let bundle = Checkpoint::load(Path::new(&ckpt))?.into_bundle()?;
            let (names, coords) = section.resolve_coordinates(bundle.config())?;
            let post = bayes_posterior(&bundle, &data, names.clone(), coords.clone())?;
            print!("bundle grid argmax: ");
            summarize(&post);
            let est = map_estimate(
                &bundle,
                &data,
                &coords,
                &post.point(post.argmax()),
                MapOptions::default(),
            )?;
            println!(
                "MAP after {} iterations (converged: {}, projected gradient norm {:.2e}):",
                est.iterations, est.converged, est.gradient_norm
            );
            for (n, v) in names.iter().zip(&est.point) {
                println!("  {n} = {v:.5}");
            }
            let sorted = sort_measurements(&data);
            let chi2: f64 = sorted
                .iter()
                .zip(&est.fit)
                .map(|(m, s)| {
                    let r = m.components.iter().zip(&m.mean).zip(&m.sigma);
                    r.map(|((&c, &mu), &sd)| ((s[c] - mu) / sd).powi(2))
                        .sum::<f64>()
                })
                .sum();
            println!(
                "chi-square of the fit: {chi2:.1} over {} observations",
                sorted.len()
            );
        }
    }
    Ok(())
}
