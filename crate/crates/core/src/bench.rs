//! Accuracy against cost for the harmonic oscillator: trained bundles versus
//! fixed-step integrators (floating-point operations) and uniform lookup
//! tables (bytes).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bundle::{Bundle, BundleConfig, Interval};
use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::reference::{absolute_error, step, Method};
use crate::systems::{sho_exact, OdeSystem};
use crate::uq::{GridAxis, OracleModel, TrajectoryModel};

/// Bumped whenever the operation accounting below changes.
pub const FLOP_MODEL_VERSION: u32 = 1;

pub const REPORT_HEADER: [&str; 6] = ["contender", "flops", "bytes", "mean_abs_err", "p5", "p95"];

/// Sampling box of the sweep: `(x₀, v₀, k, t)`.
pub const SHO_SWEEP_BOX: [Interval; 4] = [
    Interval::new(-1.0, 1.0),
    Interval::new(-1.0, 1.0),
    Interval::new(0.5, 2.0),
    Interval::new(0.0, std::f64::consts::TAU),
];

/// Operation counts: add, mul and div cost one, transcendental functions
/// cost `transcendental`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopModel {
    pub transcendental: u64,
}

impl Default for FlopModel {
    fn default() -> Self {
        Self { transcendental: 4 }
    }
}

impl FlopModel {
    pub fn new(transcendental: u64) -> Result<Self> {
        if transcendental == 0 {
            return Err(Error::config(
                "bench.transcendental_cost",
                "must be at least 1",
            ));
        }
        Ok(Self { transcendental })
    }

    /// `2·in·out + out`, plus one tanh per output when activated.
    pub fn dense_layer(&self, fan_in: usize, fan_out: usize, activated: bool) -> u64 {
        let (i, o) = (fan_in as u64, fan_out as u64);
        2 * i * o
            + o
            + if activated {
                o * self.transcendental
            } else {
                0
            }
    }

    /// Hidden layers are tanh-activated, the output layer is affine.
    pub fn network(&self, spec: &NetworkSpec) -> u64 {
        let layers = spec.layers();
        let last = layers.len() - 1;
        layers
            .iter()
            .enumerate()
            .map(|(i, l)| self.dense_layer(l.fan_in, l.fan_out, i != last))
            .sum()
    }

    /// Network plus the exponential envelope `x₀ + (1 − e^{−(t−t₀)})·N`.
    pub fn bundle(&self, spec: &NetworkSpec) -> u64 {
        self.network(spec) + self.transcendental + 2 + 2 * spec.output_dim as u64
    }

    pub fn rk4_step(&self, system: OdeSystem) -> u64 {
        4 * system.rhs_flops(self.transcendental) + 34 * system.state_dim() as u64
    }

    pub fn euler_step(&self, system: OdeSystem) -> u64 {
        system.rhs_flops(self.transcendental) + 2 * system.state_dim() as u64
    }

    pub fn integrator_step(&self, system: OdeSystem, method: Method) -> u64 {
        match method {
            Method::Rk4 => self.rk4_step(system),
            Method::Euler => self.euler_step(system),
        }
    }
}

pub fn flop_count_network(spec: &NetworkSpec, model: &FlopModel) -> u64 {
    model.network(spec)
}

/// Stored states at the cell centers of a uniform grid over
/// `(x₀, θ, t)`.
#[derive(Clone, Debug)]
pub struct LookupTable {
    pub axes: Vec<GridAxis>,
    pub state_dim: usize,
    /// Row-major over `axes`, last (time) fastest; `state_dim` values per cell.
    pub values: Vec<f64>,
    pub multilinear: bool,
}

impl LookupTable {
    /// Fill every cell from the RK4 oracle with step `h`; each `(x₀, θ)`
    /// center is integrated once through all time centers.
    pub fn build(config: &BundleConfig, divisions: usize, h: f64) -> Result<Self> {
        if divisions < 2 {
            return Err(Error::config(
                "bench.table_divisions",
                "need at least 2 divisions per axis",
            ));
        }
        config.validate()?;
        let n = config.state_dim();
        let mut axes: Vec<GridAxis> = config
            .x0_box
            .iter()
            .chain(config.theta_box().iter())
            .map(|iv| GridAxis::new(iv.lo, iv.hi, divisions))
            .collect();
        let time = GridAxis::new(config.t0, config.tf, divisions);
        axes.push(time);
        let times: Vec<f64> = (0..divisions).map(|i| time.center(i)).collect();
        let outer = axes.len() - 1;
        let combos = divisions.pow(outer as u32);
        let oracle = OracleModel::new(config.clone(), h);
        let rows: Result<Vec<Vec<f64>>> = (0..combos)
            .into_par_iter()
            .map(|flat| {
                let mut rest = flat;
                let mut point = vec![0.0; outer];
                for k in (0..outer).rev() {
                    point[k] = axes[k].center(rest % divisions);
                    rest /= divisions;
                }
                let (x0, theta) = point.split_at(n);
                Ok(oracle.states(x0, theta, &times)?.concat())
            })
            .collect();
        Ok(Self {
            axes,
            state_dim: n,
            values: rows?.concat(),
            multilinear: false,
        })
    }

    /// Interpolate between neighbouring centers instead of snapping.
    pub fn with_multilinear(mut self, on: bool) -> Self {
        self.multilinear = on;
        self
    }

    pub fn divisions(&self) -> usize {
        self.axes[0].cells
    }

    pub fn cells(&self) -> usize {
        self.axes.iter().map(|a| a.cells).product()
    }

    pub fn bytes(&self) -> u64 {
        (self.cells() * self.state_dim * 8) as u64
    }

    fn cell_value(&self, idx: &[usize]) -> &[f64] {
        let flat = idx
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, a)| acc * a.cells + i);
        &self.values[flat * self.state_dim..(flat + 1) * self.state_dim]
    }

    /// Position of `v` in center units: center `i` sits at `i`.
    fn coordinate(&self, k: usize, v: f64) -> Result<f64> {
        let a = &self.axes[k];
        if !(v >= a.lo && v <= a.hi) {
            return Err(Error::InvalidParameter(format!(
                "table query {v} outside axis {k} range [{}, {}]",
                a.lo, a.hi
            )));
        }
        Ok((v - a.lo) / a.width() - 0.5)
    }

    /// Query point ordered `(x₀, θ, t)`.
    pub fn query(&self, point: &[f64]) -> Result<Vec<f64>> {
        if point.len() != self.axes.len() {
            return Err(Error::Dimension {
                context: "lookup table query",
                expected: self.axes.len(),
                got: point.len(),
            });
        }
        let coords = point
            .iter()
            .enumerate()
            .map(|(k, &v)| self.coordinate(k, v))
            .collect::<Result<Vec<f64>>>()?;
        if !self.multilinear {
            // nearest center; exact midpoints go to the lower cell
            let idx: Vec<usize> = coords
                .iter()
                .zip(&self.axes)
                .map(|(&s, a)| ((s - 0.5).ceil().max(0.0) as usize).min(a.cells - 1))
                .collect();
            return Ok(self.cell_value(&idx).to_vec());
        }
        let d = self.axes.len();
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for k in 0..d {
            let s = coords[k].clamp(0.0, (self.axes[k].cells - 1) as f64);
            let i0 = (s.floor() as usize).min(self.axes[k].cells - 2);
            base[k] = i0;
            frac[k] = s - i0 as f64;
        }
        let mut out = vec![0.0; self.state_dim];
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for k in 0..d {
                let up = (corner >> k) & 1 == 1;
                idx[k] = base[k] + usize::from(up);
                w *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(self.cell_value(&idx)) {
                    *o += w * v;
                }
            }
        }
        Ok(out)
    }
}

/// SHO bundle configuration over the sweep box.
pub fn sho_sweep_config() -> BundleConfig {
    use crate::bundle::ParamSetting;
    BundleConfig::new(
        OdeSystem::Sho,
        SHO_SWEEP_BOX[3].lo,
        SHO_SWEEP_BOX[3].hi,
        SHO_SWEEP_BOX[..2].to_vec(),
        vec![ParamSetting::Free(SHO_SWEEP_BOX[2])],
    )
}

/// Something that predicts the oscillator state at `(x₀, v₀, k, t)`.
pub enum Contender<'a> {
    Exact,
    Network {
        label: String,
        bundle: &'a Bundle,
    },
    /// `steps` uniform steps from 0 to `t`.
    Integrator {
        method: Method,
        steps: u64,
    },
    Table(&'a LookupTable),
}

impl Contender<'_> {
    pub fn label(&self) -> String {
        match self {
            Contender::Exact => "exact".into(),
            Contender::Network { label, .. } => label.clone(),
            Contender::Integrator { method, steps } => format!("{method}_{steps}"),
            Contender::Table(t) => {
                let kind = if t.multilinear { "_multilinear" } else { "" };
                format!("table_{}{kind}", t.divisions())
            }
        }
    }

    /// Operations per query.
    pub fn flops(&self, model: &FlopModel) -> Option<u64> {
        match self {
            Contender::Exact | Contender::Table(_) => None,
            Contender::Network { bundle, .. } => Some(model.bundle(bundle.params().spec())),
            Contender::Integrator { method, steps } => {
                Some(steps * model.integrator_step(OdeSystem::Sho, *method))
            }
        }
    }

    /// Stored floats.
    pub fn bytes(&self) -> Option<u64> {
        match self {
            Contender::Exact | Contender::Integrator { .. } => None,
            Contender::Network { bundle, .. } => Some(8 * bundle.params().len() as u64),
            Contender::Table(t) => Some(t.bytes()),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Contender::Network { bundle, .. }
                if bundle.system() != OdeSystem::Sho || bundle.config().free_dim() != 1 =>
            {
                Err(Error::config(
                    "bench.networks",
                    "contender networks must be SHO bundles with free k",
                ))
            }
            Contender::Integrator { steps: 0, .. } => {
                Err(Error::config("bench.steps", "need at least one step"))
            }
            Contender::Table(t) if t.axes.len() != 4 || t.state_dim != 2 => Err(Error::config(
                "bench.tables",
                "table must cover (x0, v0, k, t)",
            )),
            _ => Ok(()),
        }
    }

    pub fn predict(&self, s: &[f64; 4]) -> Result<[f64; 2]> {
        let [x0, v0, k, t] = *s;
        match self {
            Contender::Exact => Ok(sho_exact(x0, v0, k, t)),
            Contender::Network { bundle, .. } => {
                let v = bundle.state(t, &[x0, v0], &[k])?;
                Ok([v[0], v[1]])
            }
            Contender::Integrator { method, steps } => {
                let f = |_: f64, x: &[f64]| OdeSystem::Sho.rhs_f64(0.0, x, &[k]);
                let h = t / *steps as f64;
                let mut x = vec![x0, v0];
                if t > 0.0 {
                    for i in 0..*steps {
                        x = step(&f, *method, i as f64 * h, &x, h)?;
                    }
                }
                Ok([x[0], x[1]])
            }
            Contender::Table(table) => {
                let v = table.query(s)?;
                Ok([v[0], v[1]])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub contender: String,
    pub flops: Option<u64>,
    pub bytes: Option<u64>,
    pub mean_abs_err: f64,
    pub p5: f64,
    pub p95: f64,
}

/// Uniform samples of `(x₀, v₀, k, t)` from the sweep box.
pub fn sweep_samples(count: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut s = [0.0; 4];
            for (v, iv) in s.iter_mut().zip(&SHO_SWEEP_BOX) {
                *v = iv.lerp(rng.gen());
            }
            s
        })
        .collect()
}

/// Linear interpolation between order statistics of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Absolute error of every contender against the closed-form solution on
/// the same samples.
pub fn accuracy_sweep(
    contenders: &[Contender],
    samples: &[[f64; 4]],
    model: &FlopModel,
) -> Result<Vec<BenchRow>> {
    if samples.is_empty() {
        return Err(Error::config("bench.samples", "need at least one sample"));
    }
    contenders
        .iter()
        .map(|c| {
            c.validate()?;
            let mut errors = samples
                .par_iter()
                .map(|s| {
                    let exact = sho_exact(s[0], s[1], s[2], s[3]);
                    Ok(absolute_error(&c.predict(s)?, &exact))
                })
                .collect::<Result<Vec<f64>>>()?;
            let mean = errors.iter().sum::<f64>() / errors.len() as f64;
            errors.sort_by(f64::total_cmp);
            Ok(BenchRow {
                contender: c.label(),
                flops: c.flops(model),
                bytes: c.bytes(),
                mean_abs_err: mean,
                p5: percentile(&errors, 5.0),
                p95: percentile(&errors, 95.0),
            })
        })
        .collect()
}

pub fn write_report<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.contender.clone(),
            opt(r.flops),
            opt(r.bytes),
            r.mean_abs_err.to_string(),
            r.p5.to_string(),
            r.p95.to_string(),
        ])?;
    }
    w.flush()
        .map_err(|e| Error::Input(format!("writing bench report: {e}")))?;
    Ok(())
}
