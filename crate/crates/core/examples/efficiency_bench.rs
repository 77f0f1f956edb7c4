//! Accuracy against cost for the ways of answering "where is the
//! oscillator at time t": RK4 and Euler at several step counts, lookup
//! tables at several resolutions, and optionally a trained bundle.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example efficiency_bench -- [checkpoint]
//! ```
//!
//! Cost is counted in floating-point operations (a fixed FLOP model, not
//! wall clock) and in stored bytes; error is the mean absolute error against
//! the closed form over uniform samples of (x0, v0, k, t).

use std::path::Path;

use odebundle::bench::{
    accuracy_sweep, sho_sweep_config, sweep_samples, write_report, Contender, FlopModel,
    LookupTable,
};
use odebundle::bundle::Bundle;
use odebundle::checkpoint::Checkpoint;
use odebundle::reference::Method;

fn main() -> odebundle::Result<()> {
    let bundle: Option<Bundle> = match std::env::args().nth(1) {
        Some(p) => Some(Checkpoint::load(Path::new(&p))?.into_bundle()?),
        None => None,
    };
    let model = FlopModel::default();
    let samples = sweep_samples(2000, 0);

    let tables = [4, 8, 16]
        .iter()
        .map(|&d| LookupTable::build(&sho_sweep_config(), d, 0.01))
        .collect::<odebundle::Result<Vec<_>>>()?;
    let mut contenders = vec![Contender::Exact];
    if let Some(b) = &bundle {
        println!(
            "network: {} parameters, {} FLOPs per query",
            b.params().len(),
            model.bundle(b.params().spec())
        );
        contenders.push(Contender::Network {
            label: "bundle".into(),
            bundle: b,
        });
    }
    contenders.extend([4, 16, 64].map(|steps| Contender::Integrator {
        method: Method::Rk4,
        steps,
    }));
    contenders.extend([16, 64, 256, 1024].map(|steps| Contender::Integrator {
        method: Method::Euler,
        steps,
    }));
    contenders.extend(tables.iter().map(Contender::Table));

    let rows = accuracy_sweep(&contenders, &samples, &model)?;
    write_report(&rows, std::io::stdout().lock())?;
    Ok(())
}
