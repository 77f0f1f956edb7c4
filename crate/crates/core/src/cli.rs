//! `odebundle train|eval|propagate|infer|bench|inspect --config <path>`.
//!
//! Every command reads one TOML file, writes CSV outputs into the
//! configured output directory and records a manifest that reruns it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;

use crate::bench::{
    accuracy_sweep, sho_sweep_config, sweep_samples, write_report, Contender, FlopModel,
    LookupTable, FLOP_MODEL_VERSION,
};
use crate::bundle::Bundle;
use crate::checkpoint::{Checkpoint, FORMAT_VERSION};
use crate::config::{BundleSection, DataSpec, DensitySpec, Manifest, ModelSpec, RunConfig};
use crate::error::{Error, Result};
use crate::reference::Method;
use crate::training::{run_training, RunOptions, StepRecord, CHECKPOINT_FILE, LOSS_FILE};
use crate::uq::{
    bayes_posterior, check_measurements, coordinate_names, log_likelihood, map_estimate, propagate,
    sort_measurements, write_data_csv, Coordinate, MapOptions, OracleModel, TrajectoryModel,
    WeightedHistogram,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Train,
    Eval,
    Propagate,
    Infer,
    Bench,
    Inspect,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Propagate => "propagate",
            Command::Infer => "infer",
            Command::Bench => "bench",
            Command::Inspect => "inspect",
        }
    }
}

#[derive(Clone, Debug, Parser)]
#[command(
    name = "odebundle",
    version,
    about = "Train and use neural solution bundles for ODE initial-value problems"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Run configuration (TOML); a manifest from an earlier run also works.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Continue training from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// No progress output.
    #[arg(long)]
    pub quiet: bool,
}

/// Files written and a human-readable summary.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub report: String,
}

/// Parse arguments, run, print, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    let mut cfg = RunConfig::load(&cli.config)?;
    cfg.manifest = None;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if cli.resume && cli.command != Command::Train {
        return Err(Error::config("--resume", "only applies to train"));
    }
    match cli.threads {
        Some(0) => Err(Error::config("--threads", "must be at least 1")),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::config("--threads", e.to_string()))?;
            pool.install(|| dispatch(cli, &cfg))
        }
        None => dispatch(cli, &cfg),
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    match cli.command {
        Command::Train => train(cli, cfg),
        Command::Eval => eval(cli, cfg),
        Command::Propagate => propagate_cmd(cli, cfg),
        Command::Infer => infer(cli, cfg),
        Command::Bench => bench(cli, cfg),
        Command::Inspect => inspect(cfg),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_to_file<F>(path: &Path, f: F) -> Result<PathBuf>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    write_file(path, &buf)?;
    Ok(path.to_path_buf())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// The configuration as run, plus provenance. Feeding it back through
/// `--config` repeats the command.
fn write_manifest(
    cli: &Cli,
    cfg: &RunConfig,
    name: &str,
    inputs: Vec<String>,
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let mut resolved = cfg.clone();
    if let Some(b) = &cfg.bundle {
        resolved.bundle = Some(BundleSection::from_config(&b.to_config()?));
    }
    resolved.manifest = Some(Manifest {
        command: cli.command.name().into(),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_format: FORMAT_VERSION,
        flop_model: FLOP_MODEL_VERSION,
        threads: cli.threads,
        inputs,
        outputs: outputs.iter().map(|p| file_name(p)).collect(),
    });
    let path = cfg.output_dir.join(name);
    write_file(&path, resolved.to_toml().as_bytes())?;
    Ok(path)
}

fn train(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    let bundle = cfg.bundle_config()?;
    let spec = cfg.network_spec(&bundle)?;
    let training = cfg.training_config()?;
    create_dir(&cfg.output_dir)?;
    let every = (training.batches / 100).max(1);
    let quiet = cli.quiet;
    let mut progress = |r: &StepRecord| {
        if !quiet && (r.batch + 1) % every == 0 {
            eprintln!(
                "batch {:>10}  loss {:.4e}  smoothed {:.4e}  lr {:.2e}  horizon {:.4}",
                r.batch + 1,
                r.raw_loss,
                r.smoothed_loss,
                r.lr,
                r.t_horizon
            );
        }
    };
    let summary = run_training(
        &bundle,
        &spec,
        training,
        cfg.seed,
        &cfg.output_dir,
        RunOptions {
            resume: cli.resume,
            stop_after: None,
            progress: Some(&mut progress),
        },
    )?;
    let mut outputs = vec![summary.checkpoint.clone(), summary.loss_log.clone()];
    let resolved = write_manifest(cli, cfg, "config.resolved", Vec::new(), &outputs)?;
    outputs.push(resolved);
    let mut report = format!("trained {} batches of {}\n", summary.batches, bundle.system);
    if let Some(last) = summary.last {
        let _ = writeln!(
            report,
            "final smoothed loss {:.6e}, lr {:.3e}",
            last.smoothed_loss, last.lr
        );
    }
    for o in &outputs {
        let _ = writeln!(report, "wrote {}", o.display());
    }
    Ok(Outcome { outputs, report })
}

fn default_checkpoint(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(CHECKPOINT_FILE)
}

/// Load a trained bundle and check it against the `[bundle]` section if
/// one is given.
fn load_bundle(cfg: &RunConfig, path: &Path) -> Result<Bundle> {
    let ckpt = Checkpoint::load(path)?;
    if cfg.bundle.is_some() {
        let expected = cfg.bundle_config()?;
        if expected != ckpt.bundle {
            return Err(Error::config(
                "bundle",
                format!("does not match the domain stored in {}", path.display()),
            ));
        }
        if cfg.network.is_some() && cfg.network_spec(&expected)? != *ckpt.params.spec() {
            return Err(Error::config(
                "network",
                format!("does not match the network stored in {}", path.display()),
            ));
        }
    }
    ckpt.into_bundle()
}

enum Model {
    Bundle(Bundle),
    Oracle(OracleModel),
}

impl Model {
    fn as_dyn(&self) -> &dyn TrajectoryModel {
        match self {
            Model::Bundle(b) => b,
            Model::Oracle(o) => o,
        }
    }
}

fn load_model(cfg: &RunConfig, spec: &ModelSpec) -> Result<(Model, Vec<String>)> {
    match spec {
        ModelSpec::Bundle => {
            let p = default_checkpoint(cfg);
            Ok((
                Model::Bundle(load_bundle(cfg, &p)?),
                vec![p.display().to_string()],
            ))
        }
        ModelSpec::Checkpoint { path } => Ok((
            Model::Bundle(load_bundle(cfg, path)?),
            vec![path.display().to_string()],
        )),
        ModelSpec::Oracle { h } => Ok((
            Model::Oracle(OracleModel::new(cfg.bundle_config()?, *h)),
            Vec::new(),
        )),
    }
}

struct Query {
    t: f64,
    x0: Vec<f64>,
    theta: Vec<f64>,
}

fn read_queries(path: &Path, n: usize, p: usize) -> Result<Vec<Query>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 1 + n + p {
            return Err(Error::Input(format!(
                "{} row {}: expected {} columns (t, x0, theta), got {}",
                path.display(),
                i + 1,
                1 + n + p,
                rec.len()
            )));
        }
        let v = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|_| {
                Error::Input(format!(
                    "{} row {}: non-numeric field",
                    path.display(),
                    i + 1
                ))
            })?;
        out.push(Query {
            t: v[0],
            x0: v[1..1 + n].to_vec(),
            theta: v[1 + n..].to_vec(),
        });
    }
    Ok(out)
}

fn eval(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    let section = cfg
        .eval
        .as_ref()
        .ok_or_else(|| Error::config("eval", "section is required for eval"))?;
    let ckpt = section
        .checkpoint
        .clone()
        .unwrap_or_else(|| default_checkpoint(cfg));
    let bundle = load_bundle(cfg, &ckpt)?;
    let bc = bundle.config().clone();
    let (n, p) = (bc.state_dim(), bc.free_dim());
    let mut inputs = vec![ckpt.display().to_string()];
    let mut queries = Vec::new();
    if let Some(path) = &section.queries {
        queries.extend(read_queries(path, n, p)?);
        inputs.push(path.display().to_string());
    }
    for (i, pt) in section.points.iter().enumerate() {
        if pt.x0.len() != n || pt.theta.len() != p {
            return Err(Error::config(
                format!("eval.points[{i}]"),
                format!("needs {n} initial-state and {p} parameter values"),
            ));
        }
        queries.extend(pt.times.iter().map(|&t| Query {
            t,
            x0: pt.x0.clone(),
            theta: pt.theta.clone(),
        }));
    }
    if queries.is_empty() {
        return Err(Error::config(
            "eval",
            "no queries: give `queries` or `points`",
        ));
    }
    let rows = queries
        .par_iter()
        .map(|q| {
            let e = bundle.evaluate(q.t, &q.x0, &q.theta)?;
            let r = bundle.residual(q.t, &q.x0, &q.theta)?;
            let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            let mut row: Vec<String> = std::iter::once(q.t)
                .chain(q.x0.iter().copied())
                .chain(q.theta.iter().copied())
                .chain(e.state.iter().copied())
                .chain(std::iter::once(norm))
                .map(|v| v.to_string())
                .collect();
            row.push(u8::from(e.extrapolated).to_string());
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&cfg.output_dir)?;
    let out = csv_to_file(&cfg.output_dir.join(&section.output), |buf| {
        let mut w = csv::Writer::from_writer(buf);
        let mut header = vec!["t".to_string()];
        header.extend(coordinate_names(&bc));
        header.extend(bc.system.state_labels().iter().map(|l| format!("xhat_{l}")));
        header.push("residual_norm".into());
        header.push("extrapolated".into());
        w.write_record(&header)?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::Input(e.to_string()))
    })?;
    let extrapolated = rows
        .iter()
        .filter(|r| r.last().is_some_and(|v| v == "1"))
        .count();
    let mut outputs = vec![out];
    outputs.push(write_manifest(
        cli,
        cfg,
        "manifest_eval.toml",
        inputs,
        &outputs,
    )?);
    let mut report = format!(
        "evaluated {} queries ({extrapolated} outside the trained domain)\n",
        rows.len()
    );
    for o in &outputs {
        let _ = writeln!(report, "wrote {}", o.display());
    }
    Ok(Outcome { outputs, report })
}

fn propagate_cmd(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    let section = cfg
        .propagate
        .as_ref()
        .ok_or_else(|| Error::config("propagate", "section is required for propagate"))?;
    let (model, inputs) = load_model(cfg, &section.model)?;
    let model = model.as_dyn();
    let n = model.state_dim();
    let measurements = match &section.density {
        DensitySpec::Measurements { measurements } => {
            let data = measurements
                .iter()
                .map(|m| m.to_measurement())
                .collect::<Result<Vec<_>>>()?;
            let data = sort_measurements(&data);
            check_measurements(model, &data)?;
            data
        }
        _ => Vec::new(),
    };
    if let DensitySpec::Gaussian { mean, .. } = &section.density {
        if mean.len() != n {
            return Err(Error::config(
                "propagate.density.mean",
                format!("expected {n} entries"),
            ));
        }
    }
    let theta = section.theta.clone();
    let density = |x0: &[f64]| -> Result<f64> {
        match &section.density {
            DensitySpec::Uniform => Ok(1.0),
            DensitySpec::Gaussian { mean, sigma } => Ok(x0
                .iter()
                .zip(mean)
                .zip(sigma)
                .map(|((x, m), s)| {
                    let r = (x - m) / s;
                    (-0.5 * r * r).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
                })
                .product()),
            DensitySpec::Measurements { .. } => {
                Ok(log_likelihood(model, x0, &theta, &measurements)?.exp())
            }
        }
    };
    let hist = WeightedHistogram::new(
        section.histogram.components.clone(),
        section.histogram.bins.clone(),
    )?;
    let mut hist = propagate(
        model,
        &section.x0_grid,
        &section.theta,
        section.t,
        density,
        hist,
    )?;
    let all_outside = hist.all_outside();
    if section.normalize && !all_outside {
        hist.normalize()?;
    }
    create_dir(&cfg.output_dir)?;
    let out = csv_to_file(&cfg.output_dir.join(&section.output), |buf| {
        hist.write_csv(buf)
    })?;
    let mut outputs = vec![out];
    outputs.push(write_manifest(
        cli,
        cfg,
        "manifest_propagate.toml",
        inputs,
        &outputs,
    )?);
    let mut report = format!(
        "propagated to t = {}: total weight {:.6e}, binned {:.6e}, outside bins {:.6e}\n",
        section.t,
        hist.total_weight,
        if hist.normalized {
            1.0
        } else {
            hist.binned_weight()
        },
        hist.outside_weight
    );
    if all_outside {
        report.push_str("warning: all propagated mass fell outside the histogram bins\n");
    } else {
        let _ = writeln!(report, "histogram mean {:?}", hist.mean());
    }
    for o in &outputs {
        let _ = writeln!(report, "wrote {}", o.display());
    }
    Ok(Outcome { outputs, report })
}

fn infer(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    let section = cfg
        .infer
        .as_ref()
        .ok_or_else(|| Error::config("infer", "section is required for infer"))?;
    let (model, mut inputs) = load_model(cfg, &section.model)?;
    let domain = match &model {
        Model::Bundle(b) => b.config().clone(),
        Model::Oracle(o) => o.config.clone(),
    };
    let (names, coords) = section.resolve_coordinates(&domain)?;
    if let DataSpec::File { path } = &section.data {
        inputs.push(path.display().to_string());
    }
    let data = section.data.measurements(&domain, cfg.seed)?;
    create_dir(&cfg.output_dir)?;
    let mut outputs = vec![csv_to_file(&cfg.output_dir.join("data.csv"), |buf| {
        write_data_csv(&data, buf)
    })?];

    let post = bayes_posterior(model.as_dyn(), &data, names.clone(), coords.clone())?;
    for k in 0..post.free.len() {
        let name = &names[post.free[k]];
        let path = cfg.output_dir.join(format!("posterior_{name}.csv"));
        outputs.push(csv_to_file(&path, |buf| post.write_marginal_csv(k, buf))?);
    }
    let best = post.point(post.argmax());
    let mut report = format!(
        "posterior over {} cells from {} observations\n",
        post.log_density.len(),
        data.len()
    );
    for (n, v) in names.iter().zip(&best) {
        let _ = writeln!(report, "  grid argmax {n} = {v}");
    }

    if let Some(map) = &section.map {
        let Model::Bundle(bundle) = &model else {
            return Err(Error::config(
                "infer.map",
                "needs a trained bundle model (derivatives come from the network)",
            ));
        };
        let init = map.init.clone().unwrap_or_else(|| best.clone());
        let est = map_estimate(
            bundle,
            &data,
            &coords,
            &init,
            MapOptions {
                tol: map.tol,
                max_iter: map.max_iter,
            },
        )?;
        let mut text = String::new();
        let _ = writeln!(text, "converged = {}", est.converged);
        let _ = writeln!(text, "iterations = {}", est.iterations);
        let _ = writeln!(text, "gradient_norm = {}", est.gradient_norm);
        let _ = writeln!(text, "log_posterior = {}", est.log_posterior);
        let _ = writeln!(text, "\n[point]");
        for ((n, v), c) in names.iter().zip(&est.point).zip(&coords) {
            let tag = if matches!(c, Coordinate::Fixed(_)) {
                "  # fixed"
            } else {
                ""
            };
            let _ = writeln!(text, "{n} = {v}{tag}");
        }
        let map_path = cfg.output_dir.join("map.txt");
        write_file(&map_path, text.as_bytes())?;
        outputs.push(map_path);

        // dense fitted trajectory for plotting against the data
        let (x0, theta) = est.point.split_at(domain.state_dim());
        let times: Vec<f64> = (0..=200)
            .map(|i| domain.t0 + (domain.tf - domain.t0) * i as f64 / 200.0)
            .collect();
        let states = bundle.states(x0, theta, &times)?;
        let fit_path = cfg.output_dir.join("map_fit.csv");
        outputs.push(csv_to_file(&fit_path, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            let mut header = vec!["t".to_string()];
            header.extend(
                domain
                    .system
                    .state_labels()
                    .iter()
                    .map(|l| format!("xhat_{l}")),
            );
            w.write_record(&header)?;
            for (t, s) in times.iter().zip(&states) {
                let row: Vec<String> = std::iter::once(*t)
                    .chain(s.iter().copied())
                    .map(|v| v.to_string())
                    .collect();
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::Input(e.to_string()))
        })?);
        let _ = writeln!(
            report,
            "MAP after {} iterations (converged: {}), log-posterior {:.6}",
            est.iterations, est.converged, est.log_posterior
        );
        for (n, v) in names.iter().zip(&est.point) {
            let _ = writeln!(report, "  {n} = {v}");
        }
    }
    outputs.push(write_manifest(
        cli,
        cfg,
        "manifest_infer.toml",
        inputs,
        &outputs,
    )?);
    for o in &outputs {
        let _ = writeln!(report, "wrote {}", o.display());
    }
    Ok(Outcome { outputs, report })
}

fn bench(cli: &Cli, cfg: &RunConfig) -> Result<Outcome> {
    let section = cfg
        .bench
        .as_ref()
        .ok_or_else(|| Error::config("bench", "section is required for bench"))?;
    let model = FlopModel::new(section.transcendental_cost)?;
    let samples = sweep_samples(section.samples, cfg.seed);
    let mut inputs = Vec::new();
    let mut networks = Vec::new();
    for n in &section.networks {
        inputs.push(n.checkpoint.display().to_string());
        networks.push((
            n.label.clone(),
            Checkpoint::load(&n.checkpoint)?.into_bundle()?,
        ));
    }
    let tables = section
        .table_divisions
        .iter()
        .map(|&d| {
            Ok(LookupTable::build(&sho_sweep_config(), d, section.table_h)?
                .with_multilinear(section.multilinear))
        })
        .collect::<Result<Vec<_>>>()?;

    let nets = || {
        networks.iter().map(|(label, bundle)| Contender::Network {
            label: label.clone(),
            bundle,
        })
    };
    let mut flops: Vec<Contender> = vec![Contender::Exact];
    flops.extend(nets());
    flops.extend(section.rk4_steps.iter().map(|&s| Contender::Integrator {
        method: Method::Rk4,
        steps: s,
    }));
    flops.extend(section.euler_steps.iter().map(|&s| Contender::Integrator {
        method: Method::Euler,
        steps: s,
    }));
    let mut memory: Vec<Contender> = nets().collect();
    memory.extend(tables.iter().map(Contender::Table));

    let flop_rows = accuracy_sweep(&flops, &samples, &model)?;
    let memory_rows = accuracy_sweep(&memory, &samples, &model)?;
    create_dir(&cfg.output_dir)?;
    let mut outputs = vec![
        csv_to_file(&cfg.output_dir.join("bench_flops.csv"), |b| {
            write_report(&flop_rows, b)
        })?,
        csv_to_file(&cfg.output_dir.join("bench_memory.csv"), |b| {
            write_report(&memory_rows, b)
        })?,
    ];
    outputs.push(write_manifest(
        cli,
        cfg,
        "manifest_bench.toml",
        inputs,
        &outputs,
    )?);
    let mut report = format!(
        "{} samples, FLOP model v{FLOP_MODEL_VERSION} (transcendental = {})\n",
        samples.len(),
        model.transcendental
    );
    // networks sit in both reports; list them once
    let tables = memory_rows.iter().filter(|r| r.flops.is_none());
    for r in flop_rows.iter().chain(tables) {
        let _ = writeln!(
            report,
            "  {:<24} flops {:>10} bytes {:>10} mean {:.3e} [{:.3e}, {:.3e}]",
            r.contender,
            r.flops.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            r.bytes.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
            r.mean_abs_err,
            r.p5,
            r.p95
        );
    }
    for o in &outputs {
        let _ = writeln!(report, "wrote {}", o.display());
    }
    Ok(Outcome { outputs, report })
}

fn inspect(cfg: &RunConfig) -> Result<Outcome> {
    let mut report = String::new();
    if cfg.bundle.is_some() {
        let b = cfg.bundle_config()?;
        let _ = writeln!(
            report,
            "system {} (state {:?})",
            b.system,
            b.system.state_labels()
        );
        let _ = writeln!(
            report,
            "time window [{}, {}], margin {}",
            b.t0, b.tf, b.time_margin
        );
        let _ = writeln!(report, "inference coordinates {:?}", coordinate_names(&b));
        if cfg.network.is_some() {
            let spec = cfg.network_spec(&b)?;
            let _ = writeln!(
                report,
                "network {} -> {:?} -> {} ({} parameters, {} flops per evaluation)",
                spec.input_dim,
                spec.hidden,
                spec.output_dim,
                spec.param_count(),
                FlopModel::default().bundle(&spec)
            );
        }
    }
    let ckpt_path = cfg
        .eval
        .as_ref()
        .and_then(|e| e.checkpoint.clone())
        .unwrap_or_else(|| default_checkpoint(cfg));
    if ckpt_path.exists() {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let _ = writeln!(report, "checkpoint {}", ckpt_path.display());
        let _ = writeln!(
            report,
            "  system {}, seed {}, {} batches trained",
            ckpt.bundle.system, ckpt.seed, ckpt.batches
        );
        let _ = writeln!(
            report,
            "  network hidden {:?}, {} parameters",
            ckpt.params.spec().hidden,
            ckpt.params.len()
        );
        match ckpt.smoothed_loss {
            Some(l) => {
                let _ = writeln!(report, "  smoothed loss {l:.6e}");
            }
            None => report.push_str("  no loss recorded\n"),
        }
        let log = cfg.output_dir.join(LOSS_FILE);
        if log.exists() {
            let _ = writeln!(report, "  loss log {}", log.display());
        }
    } else {
        let _ = writeln!(report, "no checkpoint at {}", ckpt_path.display());
    }
    Ok(Outcome {
        outputs: Vec::new(),
        report,
    })
}
