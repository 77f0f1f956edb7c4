//! Train a harmonic-oscillator bundle over a box of initial states and
//! stiffnesses, then compare it with the closed-form solution and with the
//! global error bound implied by its residual.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example train_sho -- [batches] [out_dir]
//! ```
//!
//! The checkpoint written to `out_dir` (default `runs/example_sho`) can be
//! passed to the other examples.

use std::f64::consts::TAU;
use std::path::PathBuf;

use odebundle::bench::{accuracy_sweep, sweep_samples, Contender, FlopModel};
use odebundle::bundle::{BundleConfig, Interval, ParamSetting};
use odebundle::checkpoint::Checkpoint;
use odebundle::reference::{global_error_bound, residual_scan, sho_lipschitz};
use odebundle::systems::{sho_exact, OdeSystem};
use odebundle::training::{run_training, RunOptions, StepRecord, TrainingConfig};

fn main() -> odebundle::Result<()> {
    let mut args = std::env::args().skip(1);
    let batches: u64 = args.next().map_or(20_000, |s| s.parse().expect("batches"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/example_sho".into()));

    let domain = BundleConfig::new(
        OdeSystem::Sho,
        0.0,
        TAU,
        vec![Interval::new(-1.0, 1.0); 2],
        vec![ParamSetting::Free(Interval::new(0.5, 2.0))],
    )
    .with_time_margin(0.01)
    .with_normalized_inputs(true);
    let spec = domain.network_spec(vec![16, 16], false);
    let mut training = TrainingConfig::new(batches, 256, 3e-3);
    training.smoothing_window = 1000;

    let every = (batches / 10).max(1);
    let mut progress = |r: &StepRecord| {
        if (r.batch + 1) % every == 0 {
            println!(
                "batch {:>7}  smoothed loss {:.3e}",
                r.batch + 1,
                r.smoothed_loss
            );
        }
    };
    let options = RunOptions {
        progress: Some(&mut progress),
        ..Default::default()
    };
    let summary = run_training(&domain, &spec, &training, 0, &out, options)?;
    let bundle = Checkpoint::load(&summary.checkpoint)?.into_bundle()?;
    println!("checkpoint: {}", summary.checkpoint.display());

    let samples = sweep_samples(10_000, 1);
    let row = accuracy_sweep(
        &[Contender::Network {
            label: "2x16".into(),
            bundle: &bundle,
        }],
        &samples,
        &FlopModel::default(),
    )?
    .remove(0);
    println!(
        "mean absolute error over 10^4 samples: {:.3e} (p5 {:.2e}, p95 {:.2e})",
        row.mean_abs_err, row.p5, row.p95
    );

    // One trajectory: residual, actual error, and the bound at a few times.
    let (x0, k) = ([0.8, -0.3], 1.7);
    let times: Vec<f64> = (0..=400).map(|i| TAU * i as f64 / 400.0).collect();
    let eps = residual_scan(&bundle, &x0, &[k], &times)?
        .into_iter()
        .fold(0.0, f64::max);
    println!("x0 = {x0:?}, k = {k}: max residual {eps:.3e}");
    println!("{:>6} {:>12} {:>12}", "t", "error", "bound");
    for &t in times.iter().step_by(50) {
        let s = bundle.state(t, &x0, &[k])?;
        let e = sho_exact(x0[0], x0[1], k, t);
        let err = ((s[0] - e[0]).powi(2) + (s[1] - e[1]).powi(2)).sqrt();
        let bound = global_error_bound(eps, sho_lipschitz(k), t, 0.0)?;
        println!("{t:>6.3} {err:>12.3e} {bound:>12.3e}");
    }
    Ok(())
}
