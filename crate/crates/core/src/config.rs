//! Run configuration files (TOML) and the manifests written next to every
//! command's outputs.
//!
//! A manifest is itself a complete configuration: passing it back through
//! `--config` reruns the command with the same seed and inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{AKind, BundleConfig, Interval, ParamSetting};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::systems::OdeSystem;
use crate::training::TrainingConfig;
use crate::uq::{
    coordinate_names, read_data_csv, synthetic_data, Coordinate, GaussianMeasurement, GridAxis,
    OracleModel,
};

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Relative paths resolve against the working directory.
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bundle: Option<BundleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub propagate: Option<PropagateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub infer: Option<InferSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSection>,
    /// Present in manifests; ignored on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<Manifest>,
}

/// A parameter is either pinned (`k = 1.0`) or free over a box
/// (`k = [0.5, 2.0]`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Fixed(f64),
    Free(Interval),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleSection {
    pub system: String,
    pub t0: f64,
    pub tf: f64,
    pub x0_box: Vec<Interval>,
    /// Missing parameters are fixed at the system defaults.
    #[serde(default)]
    pub params: BTreeMap<String, ParamValue>,
    #[serde(default)]
    pub a_kind: AKind,
    /// Defaults to 0.2% of the time window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_margin: Option<f64>,
    #[serde(default)]
    pub normalize_inputs: bool,
}

impl BundleSection {
    pub fn to_config(&self) -> Result<BundleConfig> {
        let system: OdeSystem = self.system.parse()?;
        let names = system.param_names();
        if let Some(unknown) = self.params.keys().find(|k| !names.contains(&k.as_str())) {
            return Err(Error::config(
                format!("bundle.params.{unknown}"),
                format!("{system} has parameters {names:?}"),
            ));
        }
        let params = names
            .iter()
            .zip(system.default_params())
            .map(|(name, &default)| match self.params.get(*name) {
                Some(ParamValue::Fixed(v)) => ParamSetting::Fixed(*v),
                Some(ParamValue::Free(iv)) => ParamSetting::Free(*iv),
                None => ParamSetting::Fixed(default),
            })
            .collect();
        let mut cfg = BundleConfig::new(system, self.t0, self.tf, self.x0_box.clone(), params)
            .with_a_kind(self.a_kind);
        if let Some(m) = self.time_margin {
            cfg = cfg.with_time_margin(m);
        }
        cfg = cfg.with_normalized_inputs(self.normalize_inputs);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully explicit section (every parameter and the margin spelled out).
    pub fn from_config(cfg: &BundleConfig) -> Self {
        let params = cfg
            .system
            .param_names()
            .iter()
            .zip(&cfg.params)
            .map(|(name, p)| {
                let v = match p {
                    ParamSetting::Fixed(v) => ParamValue::Fixed(*v),
                    ParamSetting::Free(iv) => ParamValue::Free(*iv),
                };
                (name.to_string(), v)
            })
            .collect();
        Self {
            system: cfg.system.name().to_string(),
            t0: cfg.t0,
            tf: cfg.tf,
            x0_box: cfg.x0_box.clone(),
            params,
            a_kind: cfg.a_kind,
            time_margin: Some(cfg.time_margin),
            normalize_inputs: cfg.normalize_inputs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub skip_connections: bool,
}

/// Where trajectories come from in propagation and inference.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Trained bundle; defaults to `<output_dir>/checkpoint.ckpt`.
    #[default]
    Bundle,
    Checkpoint {
        path: PathBuf,
    },
    /// RK4 with step `h` over the `[bundle]` domain.
    Oracle {
        h: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryPoints {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub theta: Vec<f64>,
    pub times: Vec<f64>,
}

fn default_eval_output() -> String {
    "eval.csv".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// CSV with columns `t, x0…, theta…` and a header row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queries: Option<PathBuf>,
    #[serde(default)]
    pub points: Vec<QueryPoints>,
    #[serde(default = "default_eval_output")]
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub t: f64,
    pub components: Vec<usize>,
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl MeasurementSpec {
    pub fn to_measurement(&self) -> Result<GaussianMeasurement> {
        GaussianMeasurement::new(
            self.t,
            self.components.clone(),
            self.mean.clone(),
            self.sigma.clone(),
        )
    }
}

/// Initial-state density for propagation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Uniform,
    /// Independent Gaussian per state component.
    Gaussian {
        mean: Vec<f64>,
        sigma: Vec<f64>,
    },
    /// Posterior weight from measurements of the trajectory itself.
    Measurements {
        measurements: Vec<MeasurementSpec>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub components: Vec<usize>,
    pub bins: Vec<GridAxis>,
}

fn default_histogram_output() -> String {
    "histogram.csv".into()
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagateSection {
    #[serde(default)]
    pub model: ModelSpec,
    pub t: f64,
    #[serde(default)]
    pub theta: Vec<f64>,
    pub x0_grid: Vec<GridAxis>,
    pub density: DensitySpec,
    pub histogram: HistogramSpec,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_histogram_output")]
    pub output: String,
}

fn default_synthetic_h() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// CSV `t,component,value,sigma`.
    File { path: PathBuf },
    /// RK4 trajectory plus Gaussian noise drawn from the run seed.
    Synthetic {
        x0: Vec<f64>,
        #[serde(default)]
        theta: Vec<f64>,
        times: Vec<f64>,
        components: Vec<usize>,
        sigma: f64,
        #[serde(default = "default_synthetic_h")]
        h: f64,
    },
}

impl DataSpec {
    /// Read the file, or simulate the trajectory on `domain` and add noise
    /// drawn from `seed`.
    pub fn measurements(
        &self,
        domain: &BundleConfig,
        seed: u64,
    ) -> Result<Vec<GaussianMeasurement>> {
        match self {
            DataSpec::File { path } => {
                let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                read_data_csv(f)
            }
            DataSpec::Synthetic {
                x0,
                theta,
                times,
                components,
                sigma,
                h,
            } => {
                let oracle = OracleModel::new(domain.clone(), *h);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                synthetic_data(&oracle, x0, theta, times, components, *sigma, &mut rng)
            }
        }
    }
}

/// A coordinate is pinned (`k = 1.3`) or gridded (`k = [0.5, 2.0, 50]`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoordinateSpec {
    Fixed(f64),
    Grid(GridAxis),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    /// Start point over all coordinates; defaults to the grid argmax.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    #[serde(default = "default_map_tol")]
    pub tol: f64,
    #[serde(default = "default_map_iter")]
    pub max_iter: usize,
}

fn default_map_tol() -> f64 {
    1e-6
}

fn default_map_iter() -> usize {
    5000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferSection {
    #[serde(default)]
    pub model: ModelSpec,
    pub data: DataSpec,
    /// One entry per `(x₀, θ)` coordinate, keyed by name (see `inspect`).
    pub coordinates: BTreeMap<String, CoordinateSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSpec>,
}

impl InferSection {
    /// Coordinates in `(x₀, θ)` order.
    pub fn resolve_coordinates(
        &self,
        cfg: &BundleConfig,
    ) -> Result<(Vec<String>, Vec<Coordinate>)> {
        let names = coordinate_names(cfg);
        if let Some(unknown) = self.coordinates.keys().find(|k| !names.contains(k)) {
            return Err(Error::config(
                format!("infer.coordinates.{unknown}"),
                format!("unknown coordinate; expected {names:?}"),
            ));
        }
        let coords = names
            .iter()
            .map(|n| match self.coordinates.get(n) {
                Some(CoordinateSpec::Fixed(v)) => Ok(Coordinate::Fixed(*v)),
                Some(CoordinateSpec::Grid(a)) => {
                    a.validate(n).map_err(|e| {
                        Error::config(format!("infer.coordinates.{n}"), e.to_string())
                    })?;
                    Ok(Coordinate::Free(*a))
                }
                None => Err(Error::config(
                    format!("infer.coordinates.{n}"),
                    "missing; every coordinate needs a value or grid",
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((names, coords))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkContender {
    pub label: String,
    pub checkpoint: PathBuf,
}

fn default_samples() -> usize {
    10_000
}

fn default_transcendental() -> u64 {
    4
}

fn default_table_h() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_transcendental")]
    pub transcendental_cost: u64,
    #[serde(default)]
    pub rk4_steps: Vec<u64>,
    #[serde(default)]
    pub euler_steps: Vec<u64>,
    #[serde(default)]
    pub table_divisions: Vec<usize>,
    #[serde(default = "default_table_h")]
    pub table_h: f64,
    #[serde(default)]
    pub multilinear: bool,
    #[serde(default)]
    pub networks: Vec<NetworkContender>,
}

/// Provenance written next to command outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub crate_version: String,
    pub checkpoint_format: u32,
    pub flop_model: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub inputs: Vec<String>,
    #[serde(default)]
    pub outputs: Vec<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::config(
                "version",
                format!(
                    "unsupported config version {} (expected {CONFIG_VERSION})",
                    cfg.version
                ),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { field, message } => {
                Error::config(field, format!("{message} (in {})", path.display()))
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn bundle_config(&self) -> Result<BundleConfig> {
        self.bundle
            .as_ref()
            .ok_or_else(|| Error::config("bundle", "section is required for this command"))?
            .to_config()
    }

    pub fn network_spec(&self, bundle: &BundleConfig) -> Result<NetworkSpec> {
        let net = self
            .network
            .as_ref()
            .ok_or_else(|| Error::config("network", "section is required for this command"))?;
        let spec = bundle.network_spec(net.hidden.clone(), net.skip_connections);
        spec.validate()?;
        Ok(spec)
    }

    pub fn training_config(&self) -> Result<&TrainingConfig> {
        let t = self
            .training
            .as_ref()
            .ok_or_else(|| Error::config("training", "section is required for training"))?;
        t.validate()?;
        Ok(t)
    }

    /// Check every present section against the system dimensions.
    pub fn validate(&self) -> Result<()> {
        let bundle = match &self.bundle {
            Some(b) => Some(b.to_config()?),
            None => None,
        };
        if let Some(b) = &bundle {
            if self.network.is_some() {
                self.network_spec(b)?;
            }
        }
        if self.training.is_some() {
            self.training_config()?;
        }
        if let Some(p) = &self.propagate {
            if let Some(b) = &bundle {
                check_len("propagate.x0_grid", b.state_dim(), p.x0_grid.len())?;
                check_len("propagate.theta", b.free_dim(), p.theta.len())?;
                if let DensitySpec::Gaussian { mean, sigma } = &p.density {
                    check_len("propagate.density.mean", b.state_dim(), mean.len())?;
                    check_len("propagate.density.sigma", b.state_dim(), sigma.len())?;
                }
            }
            for (i, a) in p.x0_grid.iter().enumerate() {
                a.validate("grid")
                    .map_err(|e| Error::config(format!("propagate.x0_grid[{i}]"), e.to_string()))?;
            }
            check_len(
                "propagate.histogram.bins",
                p.histogram.components.len(),
                p.histogram.bins.len(),
            )?;
            for (i, a) in p.histogram.bins.iter().enumerate() {
                a.validate("histogram").map_err(|e| {
                    Error::config(format!("propagate.histogram.bins[{i}]"), e.to_string())
                })?;
            }
            if let DensitySpec::Gaussian { sigma, .. } = &p.density {
                if sigma.iter().any(|s| !(*s > 0.0)) {
                    return Err(Error::config("propagate.density.sigma", "must be positive"));
                }
            }
            if let DensitySpec::Measurements { measurements } = &p.density {
                for (i, m) in measurements.iter().enumerate() {
                    m.to_measurement().map_err(|e| {
                        Error::config(
                            format!("propagate.density.measurements[{i}]"),
                            e.to_string(),
                        )
                    })?;
                }
            }
        }
        if let Some(inf) = &self.infer {
            if let Some(b) = &bundle {
                inf.resolve_coordinates(b)?;
            }
            if let DataSpec::Synthetic { sigma, h, .. } = &inf.data {
                if !(*sigma > 0.0) {
                    return Err(Error::config("infer.data.sigma", "must be positive"));
                }
                if !(*h > 0.0) {
                    return Err(Error::config("infer.data.h", "must be positive"));
                }
            }
            if let Some(m) = &inf.map {
                if !(m.tol > 0.0) {
                    return Err(Error::config("infer.map.tol", "must be positive"));
                }
            }
        }
        if let Some(b) = &self.bench {
            if b.samples == 0 {
                return Err(Error::config("bench.samples", "must be positive"));
            }
            if b.transcendental_cost == 0 {
                return Err(Error::config(
                    "bench.transcendental_cost",
                    "must be at least 1",
                ));
            }
            if b.rk4_steps.iter().chain(&b.euler_steps).any(|&s| s == 0) {
                return Err(Error::config(
                    "bench.rk4_steps",
                    "step counts must be positive",
                ));
            }
            if b.table_divisions.iter().any(|&d| d < 2) {
                return Err(Error::config(
                    "bench.table_divisions",
                    "need at least 2 divisions",
                ));
            }
        }
        for (field, h) in [
            (
                "propagate.model.h",
                self.propagate.as_ref().map(|p| &p.model),
            ),
            ("infer.model.h", self.infer.as_ref().map(|p| &p.model)),
        ] {
            if let Some(ModelSpec::Oracle { h }) = h {
                if !(*h > 0.0) {
                    return Err(Error::config(field, "must be positive"));
                }
            }
        }
        Ok(())
    }
}

fn check_len(field: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::config(
            field,
            format!("expected {expected} entries, got {got}"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHO: &str = r#"
seed = 3
output_dir = "runs/sho"

[bundle]
system = "sho"
t0 = 0.0
tf = 6.283185307179586
x0_box = [[-1.0, 1.0], [-1.0, 1.0]]
params = { k = [0.5, 2.0] }
time_margin = 0.01

[network]
hidden = [16, 16]

[training]
batches = 1000
batch_size = 64
lr = 1e-3
weighting = { kind = "exp_decay", lambda = 0.5 }
plateau = { patience = 100 }

[infer]
model = { kind = "oracle", h = 0.01 }
data = { kind = "synthetic", x0 = [0.6, -0.3], theta = [1.3], times = [1.0, 2.0], components = [0, 1], sigma = 0.01 }
coordinates = { x0 = 0.6, v0 = -0.3, k = [0.5, 2.0, 50] }
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::from_toml(SHO).unwrap();
        cfg.validate().unwrap();
        let b = cfg.bundle_config().unwrap();
        assert_eq!(b.params, vec![ParamSetting::Free(Interval::new(0.5, 2.0))]);
        assert_eq!(b.time_margin, 0.01);
        assert_eq!(cfg.network_spec(&b).unwrap().input_dim, 4);
        let t = cfg.training_config().unwrap();
        assert_eq!(t.plateau.unwrap().patience, 100);
        assert_eq!(t.plateau.unwrap().factor, 0.5);
        let (names, coords) = cfg.infer.as_ref().unwrap().resolve_coordinates(&b).unwrap();
        assert_eq!(names, vec!["x0", "v0", "k"]);
        assert_eq!(coords[2], Coordinate::Free(GridAxis::new(0.5, 2.0, 50)));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::from_toml(SHO).unwrap();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn explicit_bundle_section_round_trips() {
        let b = RunConfig::from_toml(SHO).unwrap().bundle_config().unwrap();
        assert_eq!(BundleSection::from_config(&b).to_config().unwrap(), b);
    }

    #[test]
    fn missing_parameters_take_defaults() {
        let text = SHO.replace("params = { k = [0.5, 2.0] }", "");
        let b = RunConfig::from_toml(&text)
            .unwrap()
            .bundle_config()
            .unwrap();
        assert_eq!(
            b.params,
            vec![ParamSetting::Fixed(OdeSystem::Sho.default_params()[0])]
        );
    }

    fn field_of(text: &str) -> String {
        let err = RunConfig::from_toml(text)
            .and_then(|c| c.validate())
            .unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
        match err {
            Error::Config { field, .. } => field,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn field_level_errors() {
        assert_eq!(
            field_of(&SHO.replace("k = [0.5, 2.0]", "q = 1.0")),
            "bundle.params.q"
        );
        assert_eq!(
            field_of(&SHO.replace("[[-1.0, 1.0], [-1.0, 1.0]]", "[[-1.0, 1.0]]")),
            "bundle.x0_box"
        );
        assert_eq!(
            field_of(&SHO.replace("batch_size = 64", "batch_size = 0")),
            "training.batch_size"
        );
        assert_eq!(
            field_of(&SHO.replace("v0 = -0.3, ", "")),
            "infer.coordinates.v0"
        );
        assert_eq!(field_of(&SHO.replace("\"sho\"", "\"duffing\"")), "system");
        assert_eq!(
            field_of(&SHO.replace("seed = 3", "seed = 3\nversion = 7")),
            "version"
        );
        // unknown keys are rejected rather than silently ignored
        assert_eq!(
            field_of(&SHO.replace("seed = 3", "seed = 3\nsede = 4")),
            "config"
        );
    }
}
