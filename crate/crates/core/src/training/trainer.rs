use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, BundleConfig};
use crate::checkpoint::{Checkpoint, TrainingState};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkSpec};
use crate::training::loss::loss_and_gradient;
use crate::training::optim::{Adam, AdamConfig, MovingAverage, PlateauConfig, PlateauState};
use crate::training::sampling::{batch_rng, sample_batch};
use crate::training::schedule::{Schedule, Weighting};

pub const LOSS_CSV_HEADER: &str = "batch,raw_loss,smoothed_loss,lr,t_horizon,lambda";

/// Manual learning-rate change at a given batch. The plateau scheduler that
/// follows it (if any) starts from a fresh state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrOverride {
    pub from_batch: u64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau: Option<PlateauConfig>,
}

fn default_window() -> usize {
    10_000
}

fn default_log_every() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Total batches `M`.
    pub batches: u64,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plateau: Option<PlateauConfig>,
    #[serde(default)]
    pub weighting: Weighting,
    #[serde(default)]
    pub curriculum: bool,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
    /// Save every this many batches; 0 saves only at the end.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default)]
    pub lr_overrides: Vec<LrOverride>,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl TrainingConfig {
    pub fn new(batches: u64, batch_size: usize, lr: f64) -> Self {
        Self {
            batches,
            batch_size,
            lr,
            plateau: None,
            weighting: Weighting::Constant,
            curriculum: false,
            smoothing_window: default_window(),
            checkpoint_every: 0,
            log_every: 1,
            lr_overrides: Vec::new(),
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches == 0 {
            return Err(Error::config("training.batches", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("training.lr", "must be positive"));
        }
        if self.smoothing_window == 0 {
            return Err(Error::config(
                "training.smoothing_window",
                "must be positive",
            ));
        }
        if self.log_every == 0 {
            return Err(Error::config("training.log_every", "must be positive"));
        }
        self.weighting.validate()?;
        if let Some(p) = &self.plateau {
            p.validate()?;
        }
        let mut prev = None;
        for (i, o) in self.lr_overrides.iter().enumerate() {
            if !(o.lr > 0.0 && o.lr.is_finite()) {
                return Err(Error::config(
                    format!("training.lr_overrides[{i}].lr"),
                    "must be positive",
                ));
            }
            if prev.is_some_and(|p| o.from_batch <= p) {
                return Err(Error::config(
                    format!("training.lr_overrides[{i}].from_batch"),
                    "overrides must be in strictly increasing batch order",
                ));
            }
            if let Some(p) = &o.plateau {
                p.validate()?;
            }
            prev = Some(o.from_batch);
        }
        Ok(())
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub batch: u64,
    pub raw_loss: f64,
    pub smoothed_loss: f64,
    /// Learning rate used for this batch's update.
    pub lr: f64,
    pub t_horizon: f64,
    pub lambda: f64,
}

impl StepRecord {
    pub fn csv_fields(&self) -> [String; 6] {
        [
            self.batch.to_string(),
            self.raw_loss.to_string(),
            self.smoothed_loss.to_string(),
            self.lr.to_string(),
            self.t_horizon.to_string(),
            self.lambda.to_string(),
        ]
    }
}

/// Training state machine: one call to [`step`](Trainer::step) per batch.
#[derive(Clone, Debug)]
pub struct Trainer {
    bundle: BundleConfig,
    params: NetworkParams,
    config: TrainingConfig,
    seed: u64,
    batch: u64,
    state: TrainingState,
}

impl Trainer {
    /// Fresh run with weights initialized from `seed`.
    pub fn new(
        bundle: BundleConfig,
        spec: &NetworkSpec,
        config: TrainingConfig,
        seed: u64,
    ) -> Result<Self> {
        let params = NetworkParams::init(spec, seed)?;
        Self::with_params(bundle, params, config, seed)
    }

    pub fn with_params(
        bundle: BundleConfig,
        params: NetworkParams,
        config: TrainingConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        // checks network and domain agree
        Bundle::new(bundle.clone(), params.clone())?;
        let state = TrainingState {
            lr: config.lr,
            adam: Adam::new(config.adam, params.len()),
            plateau: PlateauState::default(),
            smoothing: MovingAverage::new(config.smoothing_window),
        };
        Ok(Self {
            bundle,
            params,
            config,
            seed,
            batch: 0,
            state,
        })
    }

    /// Continue from a checkpoint written by [`checkpoint`](Trainer::checkpoint).
    pub fn resume(ckpt: Checkpoint, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let state = ckpt.training.ok_or_else(|| {
            Error::Checkpoint("checkpoint has no optimizer state to resume from".into())
        })?;
        if state.smoothing.window != config.smoothing_window {
            return Err(Error::config(
                "training.smoothing_window",
                format!(
                    "checkpoint was written with window {}",
                    state.smoothing.window
                ),
            ));
        }
        if state.adam.config != config.adam {
            return Err(Error::config(
                "training.adam",
                "differs from the checkpointed optimizer",
            ));
        }
        Bundle::new(ckpt.bundle.clone(), ckpt.params.clone())?;
        Ok(Self {
            bundle: ckpt.bundle,
            params: ckpt.params,
            config,
            seed: ckpt.seed,
            batch: ckpt.batches,
            state,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn bundle_config(&self) -> &BundleConfig {
        &self.bundle
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn bundle(&self) -> Result<Bundle> {
        Bundle::new(self.bundle.clone(), self.params.clone())
    }

    /// Batches completed so far.
    pub fn batches_done(&self) -> u64 {
        self.batch
    }

    pub fn is_finished(&self) -> bool {
        self.batch >= self.config.batches
    }

    pub fn lr(&self) -> f64 {
        self.state.lr
    }

    pub fn smoothed_loss(&self) -> Option<f64> {
        let m = self.state.smoothing.mean();
        m.is_finite().then_some(m)
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            t0: self.bundle.t0,
            tf: self.bundle.tf,
            total_batches: self.config.batches,
            curriculum: self.config.curriculum,
            weighting: self.config.weighting,
        }
    }

    fn plateau_at(&self, m: u64) -> Option<PlateauConfig> {
        match self
            .config
            .lr_overrides
            .iter()
            .rev()
            .find(|o| o.from_batch <= m)
        {
            Some(o) => o.plateau,
            None => self.config.plateau,
        }
    }

    pub fn step(&mut self) -> Result<StepRecord> {
        let m = self.batch;
        if let Some(o) = self.config.lr_overrides.iter().find(|o| o.from_batch == m) {
            self.state.lr = o.lr;
            self.state.plateau = PlateauState::default();
        }
        let schedule = self.schedule();
        let horizon = schedule.horizon(m);
        let lambda = schedule.lambda(m);
        let mut rng = batch_rng(self.seed, m);
        let batch = sample_batch(&self.bundle, horizon, self.config.batch_size, &mut rng);
        let lg =
            loss_and_gradient(&self.params, &self.bundle, &batch, lambda).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("batch {m}: {msg}")),
                other => other,
            })?;
        let lr = self.state.lr;
        self.state
            .adam
            .update(self.params.values_mut(), &lg.gradient, lr);
        let smoothed = self.state.smoothing.push(lg.loss);
        if let Some(pc) = self.plateau_at(m) {
            self.state.lr = self.state.plateau.step(&pc, smoothed, lr);
        }
        self.batch += 1;
        Ok(StepRecord {
            batch: m,
            raw_loss: lg.loss,
            smoothed_loss: smoothed,
            lr,
            t_horizon: horizon,
            lambda,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            bundle: self.bundle.clone(),
            params: self.params.clone(),
            seed: self.seed,
            batches: self.batch,
            smoothed_loss: self.smoothed_loss(),
            training: Some(self.state.clone()),
        }
    }
}

#[derive(Default)]
pub struct RunOptions<'a> {
    pub resume: bool,
    /// Stop after this many total batches without a final save (simulates
    /// an interruption).
    pub stop_after: Option<u64>,
    pub progress: Option<&'a mut dyn FnMut(&StepRecord)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub batches: u64,
    pub last: Option<StepRecord>,
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

/// Train and write `checkpoint.ckpt` and `loss.csv` into `out_dir`.
///
/// On resume the loss log is cut back to the checkpointed batch before
/// appending, so an interrupted and resumed run produces the same files as
/// an uninterrupted one.
pub fn run_training(
    bundle: &BundleConfig,
    spec: &NetworkSpec,
    config: &TrainingConfig,
    seed: u64,
    out_dir: &Path,
    mut options: RunOptions<'_>,
) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let ckpt_path = out_dir.join(CHECKPOINT_FILE);
    let log_path = out_dir.join(LOSS_FILE);
    let mut trainer = if options.resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        if &ckpt.bundle != bundle {
            return Err(Error::config(
                "bundle",
                "differs from the checkpoint being resumed",
            ));
        }
        if ckpt.params.spec() != spec {
            return Err(Error::config(
                "network",
                "differs from the checkpoint being resumed",
            ));
        }
        if ckpt.seed != seed {
            return Err(Error::config(
                "run.seed",
                format!("checkpoint was trained with seed {}", ckpt.seed),
            ));
        }
        let trainer = Trainer::resume(ckpt, config.clone())?;
        truncate_log(&log_path, trainer.batches_done())?;
        trainer
    } else {
        let trainer = Trainer::new(bundle.clone(), spec, config.clone(), seed)?;
        fs::write(&log_path, format!("{LOSS_CSV_HEADER}\n"))
            .map_err(|e| Error::io(&log_path, e))?;
        trainer
    };

    let file = fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = csv::Writer::from_writer(BufWriter::new(file));
    let mut last = None;
    while !trainer.is_finished() {
        if options
            .stop_after
            .is_some_and(|s| trainer.batches_done() >= s)
        {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            return Ok(TrainSummary {
                batches: trainer.batches_done(),
                last,
                checkpoint: ckpt_path,
                loss_log: log_path,
            });
        }
        let rec = trainer.step()?;
        if rec.batch % config.log_every == 0 || trainer.is_finished() {
            log.write_record(rec.csv_fields())?;
        }
        if let Some(cb) = options.progress.as_mut() {
            cb(&rec);
        }
        last = Some(rec);
        let done = trainer.batches_done();
        if config.checkpoint_every > 0
            && done % config.checkpoint_every == 0
            && !trainer.is_finished()
        {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            trainer.checkpoint().save(&ckpt_path)?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    trainer.checkpoint().save(&ckpt_path)?;
    Ok(TrainSummary {
        batches: trainer.batches_done(),
        last,
        checkpoint: ckpt_path,
        loss_log: log_path,
    })
}

fn truncate_log(path: &Path, batches: u64) -> Result<()> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = String::with_capacity(text.len());
    out.push_str(LOSS_CSV_HEADER);
    out.push('\n');
    for line in text.lines().skip(1) {
        let batch: u64 = line
            .split(',')
            .next()
            .and_then(|b| b.parse().ok())
            .ok_or_else(|| {
                Error::Input(format!(
                    "{}: malformed loss log row `{line}`",
                    path.display()
                ))
            })?;
        if batch < batches {
            out.push_str(line);
            out.push('\n');
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{Interval, ParamSetting};
    use crate::systems::OdeSystem;

    fn small() -> (BundleConfig, NetworkSpec, TrainingConfig) {
        let bundle = BundleConfig::new(
            OdeSystem::Sho,
            0.0,
            2.0,
            vec![Interval::new(-1.0, 1.0); 2],
            vec![ParamSetting::Free(Interval::new(0.5, 2.0))],
        );
        let spec = bundle.network_spec(vec![8, 8], false);
        let mut cfg = TrainingConfig::new(60, 32, 1e-2);
        cfg.smoothing_window = 7;
        cfg.weighting = Weighting::ExpDecay { lambda: 0.5 };
        cfg.plateau = Some(PlateauConfig {
            patience: 5,
            ..Default::default()
        });
        (bundle, spec, cfg)
    }

    #[test]
    fn identical_seeds_give_identical_trajectories() {
        let (b, s, c) = small();
        let mut t1 = Trainer::new(b.clone(), &s, c.clone(), 4).unwrap();
        let mut t2 = Trainer::new(b, &s, c, 4).unwrap();
        for _ in 0..20 {
            assert_eq!(t1.step().unwrap(), t2.step().unwrap());
        }
        assert_eq!(t1.params(), t2.params());
    }

    #[test]
    fn training_reduces_loss() {
        let (b, s, mut c) = small();
        c.batches = 400;
        c.plateau = None;
        let mut t = Trainer::new(b, &s, c, 1).unwrap();
        let first = t.step().unwrap().raw_loss;
        let mut last = first;
        while !t.is_finished() {
            last = t.step().unwrap().smoothed_loss;
        }
        assert!(last < 0.2 * first, "{first} -> {last}");
    }

    #[test]
    fn resume_in_memory_matches_uninterrupted() {
        let (b, s, c) = small();
        let mut full = Trainer::new(b.clone(), &s, c.clone(), 9).unwrap();
        let mut part = Trainer::new(b, &s, c.clone(), 9).unwrap();
        for _ in 0..23 {
            full.step().unwrap();
            part.step().unwrap();
        }
        let text = part.checkpoint().to_text();
        let mut resumed = Trainer::resume(Checkpoint::from_text(&text).unwrap(), c).unwrap();
        while !full.is_finished() {
            assert_eq!(full.step().unwrap(), resumed.step().unwrap());
        }
        assert_eq!(full.params(), resumed.params());
    }

    #[test]
    fn lr_override_applies_at_its_batch() {
        let (b, s, mut c) = small();
        c.plateau = None;
        c.lr_overrides = vec![LrOverride {
            from_batch: 10,
            lr: 0.5,
            plateau: None,
        }];
        let mut t = Trainer::new(b, &s, c, 2).unwrap();
        let lrs: Vec<f64> = (0..12).map(|_| t.step().unwrap().lr).collect();
        assert_eq!(lrs[9], 1e-2);
        assert_eq!(lrs[10], 0.5);
        assert_eq!(lrs[11], 0.5);
    }

    #[test]
    fn curriculum_records_growing_horizon() {
        let (b, s, mut c) = small();
        c.curriculum = true;
        c.weighting = Weighting::HorizonDecay;
        let mut t = Trainer::new(b, &s, c, 2).unwrap();
        let recs: Vec<StepRecord> = (0..60).map(|_| t.step().unwrap()).collect();
        assert_eq!(recs[0].t_horizon, 0.0);
        assert!(recs.windows(2).all(|w| w[1].t_horizon >= w[0].t_horizon));
        assert!((recs[0].lambda - 0.8).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs_rejected() {
        let (b, s, c) = small();
        let mut bad = c.clone();
        bad.batch_size = 0;
        assert!(Trainer::new(b.clone(), &s, bad, 0).is_err());
        let mut bad = c.clone();
        bad.plateau = Some(PlateauConfig {
            factor: 1.5,
            ..Default::default()
        });
        assert!(Trainer::new(b.clone(), &s, bad, 0).is_err());
        let wrong = NetworkSpec::new(3, vec![4], 2);
        assert!(Trainer::new(b, &wrong, c, 0).is_err());
    }

    #[test]
    fn files_resume_byte_identical() {
        let (b, s, mut c) = small();
        c.checkpoint_every = 10;
        let full_dir = tempfile::tempdir().unwrap();
        let cut_dir = tempfile::tempdir().unwrap();
        run_training(&b, &s, &c, 5, full_dir.path(), RunOptions::default()).unwrap();
        let stopped = run_training(
            &b,
            &s,
            &c,
            5,
            cut_dir.path(),
            RunOptions {
                stop_after: Some(37),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(stopped.batches, 37);
        // the last save was at batch 30; rows 30..36 get rewritten
        let ckpt = Checkpoint::load(&cut_dir.path().join(CHECKPOINT_FILE)).unwrap();
        assert_eq!(ckpt.batches, 30);
        run_training(
            &b,
            &s,
            &c,
            5,
            cut_dir.path(),
            RunOptions {
                resume: true,
                ..Default::default()
            },
        )
        .unwrap();
        for f in [CHECKPOINT_FILE, LOSS_FILE] {
            assert_eq!(
                fs::read(full_dir.path().join(f)).unwrap(),
                fs::read(cut_dir.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let log = fs::read_to_string(full_dir.path().join(LOSS_FILE)).unwrap();
        assert_eq!(log.lines().next().unwrap(), LOSS_CSV_HEADER);
        assert_eq!(log.lines().count(), 61);
    }

    #[test]
    fn resume_with_other_seed_rejected() {
        let (b, s, c) = small();
        let dir = tempfile::tempdir().unwrap();
        run_training(&b, &s, &c, 5, dir.path(), RunOptions::default()).unwrap();
        let err = run_training(
            &b,
            &s,
            &c,
            6,
            dir.path(),
            RunOptions {
                resume: true,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
