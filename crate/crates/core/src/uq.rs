//! Uncertainty propagation and Bayesian inference over a trajectory model
//! (a trained bundle or the classical integrator).

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, BundleConfig, Interval};
use crate::error::{Error, Result};
use crate::reference::{integrate_to, Method};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Anything that maps `(x₀, θ)` to states at a list of times.
pub trait TrajectoryModel: Sync {
    fn state_dim(&self) -> usize;
    fn free_dim(&self) -> usize;
    /// Window the model is valid on, if limited.
    fn time_domain(&self) -> Option<Interval>;
    /// States at `times`, which must be sorted ascending.
    fn states(&self, x0: &[f64], theta: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>>;
}

impl TrajectoryModel for Bundle {
    fn state_dim(&self) -> usize {
        self.config().state_dim()
    }

    fn free_dim(&self) -> usize {
        self.config().free_dim()
    }

    fn time_domain(&self) -> Option<Interval> {
        Some(Interval::new(self.config().t0, self.config().tf))
    }

    fn states(&self, x0: &[f64], theta: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        times.iter().map(|&t| self.state(t, x0, theta)).collect()
    }
}

/// RK4 reference with the same `(x₀, θ)` layout as a bundle domain; one
/// pass through the sorted times per query.
#[derive(Clone, Debug)]
pub struct OracleModel {
    pub config: BundleConfig,
    pub h: f64,
}

impl OracleModel {
    pub fn new(config: BundleConfig, h: f64) -> Self {
        Self { config, h }
    }
}

impl TrajectoryModel for OracleModel {
    fn state_dim(&self) -> usize {
        self.config.state_dim()
    }

    fn free_dim(&self) -> usize {
        self.config.free_dim()
    }

    fn time_domain(&self) -> Option<Interval> {
        None
    }

    fn states(&self, x0: &[f64], theta: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let p = self.config.full_params(theta)?;
        let system = self.config.system;
        let f = |t: f64, x: &[f64]| system.rhs_f64(t, x, &p);
        let mut t_prev = self.config.t0;
        let mut x = x0.to_vec();
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            if t < t_prev {
                return Err(Error::InvalidParameter("query times must be sorted".into()));
            }
            x = integrate_to(&f, Method::Rk4, &x, t_prev, t, self.h)?;
            t_prev = t;
            out.push(x.clone());
        }
        Ok(out)
    }
}

/// Independent Gaussian observation of some state components at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMeasurement {
    pub t: f64,
    pub components: Vec<usize>,
    pub mean: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianMeasurement {
    pub fn new(t: f64, components: Vec<usize>, mean: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if components.len() != mean.len() || mean.len() != sigma.len() || mean.is_empty() {
            return Err(Error::InvalidParameter(
                "measurement needs one mean and sigma per observed component".into(),
            ));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "measurement sigma must be positive, got {s}"
            )));
        }
        Ok(Self {
            t,
            components,
            mean,
            sigma,
        })
    }

    /// Full-state observation with a common sigma.
    pub fn full(t: f64, mean: Vec<f64>, sigma: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(t, (0..n).collect(), mean, vec![sigma; n])
    }

    pub fn log_density(&self, state: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(&self.mean)
            .zip(&self.sigma)
            .map(|((&c, &m), &s)| {
                let r = (state[c] - m) / s;
                -0.5 * r * r - s.ln() - LN_SQRT_2PI
            })
            .sum()
    }

    fn check(&self, n: usize) -> Result<()> {
        if let Some(&c) = self.components.iter().find(|&&c| c >= n) {
            return Err(Error::InvalidParameter(format!(
                "observed component {c} outside state of size {n}"
            )));
        }
        Ok(())
    }
}

/// Observations of `components` at `times` from the model, with independent
/// Gaussian noise of standard deviation `sigma`.
pub fn synthetic_data<R: Rng>(
    model: &dyn TrajectoryModel,
    x0: &[f64],
    theta: &[f64],
    times: &[f64],
    components: &[usize],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<GaussianMeasurement>> {
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    let states = model.states(x0, theta, &sorted)?;
    sorted
        .iter()
        .zip(&states)
        .map(|(&t, s)| {
            let mean = components
                .iter()
                .map(|&c| s[c] + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            GaussianMeasurement::new(t, components.to_vec(), mean, vec![sigma; components.len()])
        })
        .collect()
}

pub const DATA_CSV_HEADER: [&str; 4] = ["t", "component", "value", "sigma"];

/// One row per observed component: `t,component,value,sigma`.
pub fn write_data_csv<W: Write>(data: &[GaussianMeasurement], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DATA_CSV_HEADER)?;
    for m in data {
        for ((c, v), s) in m.components.iter().zip(&m.mean).zip(&m.sigma) {
            w.write_record([m.t.to_string(), c.to_string(), v.to_string(), s.to_string()])?;
        }
    }
    w.flush()
        .map_err(|e| Error::Input(format!("writing data: {e}")))?;
    Ok(())
}

/// Inverse of [`write_data_csv`]; every row becomes a one-component
/// measurement.
pub fn read_data_csv<R: std::io::Read>(input: R) -> Result<Vec<GaussianMeasurement>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let field = |k: usize| -> Result<&str> {
            row.get(k)
                .ok_or_else(|| Error::Input(format!("data row {}: expected 4 columns", i + 1)))
        };
        let num = |k: usize| -> Result<f64> {
            field(k)?.trim().parse().map_err(|_| {
                Error::Input(format!(
                    "data row {}: column {} is not a number",
                    i + 1,
                    DATA_CSV_HEADER[k]
                ))
            })
        };
        let component = field(1)?.trim().parse().map_err(|_| {
            Error::Input(format!(
                "data row {}: component must be a state index",
                i + 1
            ))
        })?;
        out.push(GaussianMeasurement::new(
            num(0)?,
            vec![component],
            vec![num(2)?],
            vec![num(3)?],
        )?);
    }
    Ok(out)
}

/// Data sorted by time (ties broken by contents) so the likelihood sum has a
/// canonical order.
pub fn sort_measurements(data: &[GaussianMeasurement]) -> Vec<GaussianMeasurement> {
    let mut d = data.to_vec();
    d.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then_with(|| a.components.cmp(&b.components))
            .then_with(|| {
                a.mean
                    .iter()
                    .zip(&b.mean)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    d
}

pub fn check_measurements(model: &dyn TrajectoryModel, data: &[GaussianMeasurement]) -> Result<()> {
    for m in data {
        m.check(model.state_dim())?;
        if let Some(dom) = model.time_domain() {
            if !dom.contains(m.t) {
                return Err(Error::InvalidParameter(format!(
                    "data time {} outside the model window [{}, {}]",
                    m.t, dom.lo, dom.hi
                )));
            }
        }
    }
    Ok(())
}

/// `Σᵢ log N(observed xᵢ | x(tᵢ; x₀, θ), σᵢ)` over time-sorted data.
pub fn log_likelihood(
    model: &dyn TrajectoryModel,
    x0: &[f64],
    theta: &[f64],
    sorted: &[GaussianMeasurement],
) -> Result<f64> {
    if sorted.is_empty() {
        return Ok(0.0);
    }
    let times: Vec<f64> = sorted.iter().map(|m| m.t).collect();
    let states = model.states(x0, theta, &times)?;
    Ok(sorted
        .iter()
        .zip(&states)
        .map(|(m, s)| m.log_density(s))
        .sum())
}

/// Unnormalized posterior weight of a candidate initial state given two
/// independent position measurements (uniform prior).
pub fn asteroid_posterior_weight(
    model: &dyn TrajectoryModel,
    x0: &[f64],
    theta: &[f64],
    r0: &GaussianMeasurement,
    r1: &GaussianMeasurement,
) -> Result<f64> {
    let data = sort_measurements(&[r0.clone(), r1.clone()]);
    check_measurements(model, &data)?;
    Ok(log_likelihood(model, x0, theta, &data)?.exp())
}

/// Uniform axis `[lo, hi]` split into `cells` equal cells; written
/// `[lo, hi, cells]` in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, usize)", into = "(f64, f64, usize)")]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl From<(f64, f64, usize)> for GridAxis {
    fn from((lo, hi, cells): (f64, f64, usize)) -> Self {
        GridAxis::new(lo, hi, cells)
    }
}

impl From<GridAxis> for (f64, f64, usize) {
    fn from(a: GridAxis) -> Self {
        (a.lo, a.hi, a.cells)
    }
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, cells: usize) -> Self {
        Self { lo, hi, cells }
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn center(&self, i: usize) -> f64 {
        self.lo + (i as f64 + 0.5) * self.width()
    }

    /// Cell containing `v`; the upper edge belongs to the last cell.
    pub fn index(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        let i = ((v - self.lo) / self.width()).floor() as usize;
        Some(i.min(self.cells - 1))
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if self.cells == 0 || !(self.lo < self.hi) {
            return Err(Error::InvalidParameter(format!("{what}: empty grid axis")));
        }
        Ok(())
    }
}

fn unravel(mut flat: usize, dims: &[usize], out: &mut [usize]) {
    for (k, &d) in dims.iter().enumerate().rev() {
        out[k] = flat % d;
        flat /= d;
    }
}

/// Weighted histogram over selected state components. Mass falling outside
/// the bins is tracked but not binned.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedHistogram {
    pub components: Vec<usize>,
    pub axes: Vec<GridAxis>,
    /// Row-major, last axis fastest.
    pub weights: Vec<f64>,
    pub total_weight: f64,
    pub outside_weight: f64,
    pub normalized: bool,
}

impl WeightedHistogram {
    pub fn new(components: Vec<usize>, axes: Vec<GridAxis>) -> Result<Self> {
        if components.len() != axes.len() || axes.is_empty() {
            return Err(Error::InvalidParameter(
                "histogram needs one axis per binned component".into(),
            ));
        }
        for a in &axes {
            a.validate("histogram")?;
        }
        let size = axes.iter().map(|a| a.cells).product();
        Ok(Self {
            components,
            axes,
            weights: vec![0.0; size],
            total_weight: 0.0,
            outside_weight: 0.0,
            normalized: false,
        })
    }

    pub fn bin_of(&self, state: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for (a, &c) in self.axes.iter().zip(&self.components) {
            flat = flat * a.cells + a.index(state[c])?;
        }
        Some(flat)
    }

    pub fn add(&mut self, state: &[f64], w: f64) {
        self.total_weight += w;
        match self.bin_of(state) {
            Some(b) => self.weights[b] += w,
            None => self.outside_weight += w,
        }
    }

    /// True when no mass landed inside the bins.
    pub fn all_outside(&self) -> bool {
        self.total_weight > 0.0 && self.weights.iter().all(|&w| w == 0.0)
    }

    pub fn binned_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Scale binned weights to sum to one.
    pub fn normalize(&mut self) -> Result<()> {
        let s = self.binned_weight();
        if !(s > 0.0) {
            return Err(Error::NonFinite(
                "histogram has no mass inside its bins".into(),
            ));
        }
        for w in &mut self.weights {
            *w /= s;
        }
        self.normalized = true;
        Ok(())
    }

    pub fn bin_center(&self, flat: usize) -> Vec<f64> {
        let dims: Vec<usize> = self.axes.iter().map(|a| a.cells).collect();
        let mut idx = vec![0; dims.len()];
        unravel(flat, &dims, &mut idx);
        self.axes
            .iter()
            .zip(&idx)
            .map(|(a, &i)| a.center(i))
            .collect()
    }

    /// Weighted mean of bin centers.
    pub fn mean(&self) -> Vec<f64> {
        let s = self.binned_weight();
        let mut m = vec![0.0; self.axes.len()];
        for (b, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                for (acc, c) in m.iter_mut().zip(self.bin_center(b)) {
                    *acc += w * c;
                }
            }
        }
        m.iter().map(|v| v / s).collect()
    }

    /// CSV `bin_center_1,…,bin_center_k,weight`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.axes.len())
            .map(|i| format!("bin_center_{i}"))
            .collect();
        header.push("weight".into());
        w.write_record(&header)?;
        for (b, &wt) in self.weights.iter().enumerate() {
            let mut row: Vec<String> = self.bin_center(b).iter().map(|c| c.to_string()).collect();
            row.push(wt.to_string());
            w.write_record(&row)?;
        }
        w.flush()
            .map_err(|e| Error::Input(format!("writing histogram: {e}")))?;
        Ok(())
    }
}

/// Push a distribution over initial states through the model: every cell
/// of the `x₀` grid contributes `p₀(center)·volume` to the bin of its state
/// at time `t`.
pub fn propagate<F>(
    model: &dyn TrajectoryModel,
    x0_grid: &[GridAxis],
    theta: &[f64],
    t: f64,
    density: F,
    mut histogram: WeightedHistogram,
) -> Result<WeightedHistogram>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if x0_grid.len() != model.state_dim() {
        return Err(Error::Dimension {
            context: "initial-state grid",
            expected: model.state_dim(),
            got: x0_grid.len(),
        });
    }
    for a in x0_grid {
        a.validate("initial-state grid")?;
    }
    if let Some(&c) = histogram
        .components
        .iter()
        .find(|&&c| c >= model.state_dim())
    {
        return Err(Error::InvalidParameter(format!(
            "histogram component {c} outside the state"
        )));
    }
    let dims: Vec<usize> = x0_grid.iter().map(|a| a.cells).collect();
    let volume: f64 = x0_grid.iter().map(|a| a.width()).product();
    let cells: usize = dims.iter().product();
    let results: Vec<Result<Option<(Vec<f64>, f64)>>> = (0..cells)
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0; dims.len()];
            unravel(flat, &dims, &mut idx);
            let x0: Vec<f64> = x0_grid
                .iter()
                .zip(&idx)
                .map(|(a, &i)| a.center(i))
                .collect();
            let w = density(&x0)? * volume;
            if w == 0.0 {
                return Ok(None);
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::NonFinite(format!("density {w} at {x0:?}")));
            }
            let s = model.states(&x0, theta, &[t])?.pop().unwrap();
            Ok(Some((s, w)))
        })
        .collect();
    for r in results {
        if let Some((s, w)) = r? {
            histogram.add(&s, w);
        }
    }
    Ok(histogram)
}

/// Determinant by LU factorization with partial pivoting.
pub fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        if a[p][k] == 0.0 {
            return 0.0;
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det *= a[k][k];
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    det
}

/// `|det ∂x̂(t)/∂x₀|`.
pub fn jacobian_determinant(bundle: &Bundle, t: f64, x0: &[f64], theta: &[f64]) -> Result<f64> {
    Ok(determinant(bundle.input_jacobian(t, x0, theta)?).abs())
}

/// Density over initial states implied by a density over states at `t`:
/// `p₀(x₀) = p_t(x̂(t; x₀))·|det ∂x̂/∂x₀|`.
pub fn density_pullback<F>(
    bundle: &Bundle,
    p_t: F,
    t: f64,
    x0: &[f64],
    theta: &[f64],
) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let state = bundle.state(t, x0, theta)?;
    Ok(p_t(&state) * jacobian_determinant(bundle, t, x0, theta)?)
}

/// One coordinate of the `(x₀, θ)` vector in an inference problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coordinate {
    Fixed(f64),
    Free(GridAxis),
}

impl Coordinate {
    fn bounds(&self) -> Option<Interval> {
        match self {
            Coordinate::Fixed(_) => None,
            Coordinate::Free(a) => Some(Interval::new(a.lo, a.hi)),
        }
    }
}

/// Names of the `(x₀, θ)` coordinates of a bundle domain.
pub fn coordinate_names(config: &BundleConfig) -> Vec<String> {
    config
        .system
        .state_labels()
        .iter()
        .map(|l| format!("{l}0"))
        .chain(config.free_param_names().iter().map(|s| s.to_string()))
        .collect()
}

fn split(z: &[f64], n: usize) -> (&[f64], &[f64]) {
    z.split_at(n)
}

/// Grid posterior: unnormalized log-density per cell of the free axes.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGrid {
    pub names: Vec<String>,
    pub coordinates: Vec<Coordinate>,
    /// Indices into `coordinates` of the gridded axes, in grid order.
    pub free: Vec<usize>,
    /// Row-major over the free axes, last fastest; `−∞` marks zero density.
    pub log_density: Vec<f64>,
}

impl PosteriorGrid {
    fn dims(&self) -> Vec<usize> {
        self.free
            .iter()
            .map(|&i| match self.coordinates[i] {
                Coordinate::Free(a) => a.cells,
                Coordinate::Fixed(_) => 1,
            })
            .collect()
    }

    /// Full `(x₀, θ)` vector at the center of a cell.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        let dims = self.dims();
        let mut idx = vec![0; dims.len()];
        unravel(flat, &dims, &mut idx);
        let mut k = 0;
        self.coordinates
            .iter()
            .map(|c| match c {
                Coordinate::Fixed(v) => *v,
                Coordinate::Free(a) => {
                    let v = a.center(idx[k]);
                    k += 1;
                    v
                }
            })
            .collect()
    }

    /// Cell index along each free axis.
    pub fn cell(&self, flat: usize) -> Vec<usize> {
        let dims = self.dims();
        let mut idx = vec![0; dims.len()];
        unravel(flat, &dims, &mut idx);
        idx
    }

    /// Flat index of the highest-density cell (first on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.log_density.iter().enumerate() {
            if v > self.log_density[best] {
                best = i;
            }
        }
        best
    }

    /// Probabilities per cell, computed with the maximum subtracted first.
    pub fn probabilities(&self) -> Vec<f64> {
        let max = self.log_density[self.argmax()];
        if max == f64::NEG_INFINITY {
            return vec![0.0; self.log_density.len()];
        }
        let w: Vec<f64> = self.log_density.iter().map(|&l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    /// Marginal probability per cell of free axis `k`.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let dims = self.dims();
        let mut out = vec![0.0; dims[k]];
        let mut idx = vec![0; dims.len()];
        for (flat, p) in self.probabilities().into_iter().enumerate() {
            unravel(flat, &dims, &mut idx);
            out[idx[k]] += p;
        }
        out
    }

    pub fn axis(&self, k: usize) -> GridAxis {
        match self.coordinates[self.free[k]] {
            Coordinate::Free(a) => a,
            Coordinate::Fixed(_) => unreachable!("free list holds only gridded coordinates"),
        }
    }

    /// CSV `<name>,probability` for free axis `k`.
    pub fn write_marginal_csv<W: Write>(&self, k: usize, out: W) -> Result<()> {
        let axis = self.axis(k);
        let mut w = csv::Writer::from_writer(out);
        w.write_record([self.names[self.free[k]].as_str(), "probability"])?;
        for (i, p) in self.marginal(k).iter().enumerate() {
            w.write_record([axis.center(i).to_string(), p.to_string()])?;
        }
        w.flush()
            .map_err(|e| Error::Input(format!("writing marginal: {e}")))?;
        Ok(())
    }
}

fn check_coordinates(model: &dyn TrajectoryModel, coordinates: &[Coordinate]) -> Result<()> {
    let expected = model.state_dim() + model.free_dim();
    if coordinates.len() != expected {
        return Err(Error::Dimension {
            context: "inference coordinates (x0 then free parameters)",
            expected,
            got: coordinates.len(),
        });
    }
    for c in coordinates {
        if let Coordinate::Free(a) = c {
            a.validate("posterior grid")?;
        }
    }
    Ok(())
}

/// Log-posterior on a grid with a uniform prior over the box.
pub fn bayes_posterior(
    model: &dyn TrajectoryModel,
    data: &[GaussianMeasurement],
    names: Vec<String>,
    coordinates: Vec<Coordinate>,
) -> Result<PosteriorGrid> {
    bayes_posterior_with_prior(model, data, names, coordinates, |_| 0.0)
}

pub fn bayes_posterior_with_prior<P>(
    model: &dyn TrajectoryModel,
    data: &[GaussianMeasurement],
    names: Vec<String>,
    coordinates: Vec<Coordinate>,
    log_prior: P,
) -> Result<PosteriorGrid>
where
    P: Fn(&[f64]) -> f64 + Sync,
{
    check_coordinates(model, &coordinates)?;
    let free: Vec<usize> = (0..coordinates.len())
        .filter(|&i| matches!(coordinates[i], Coordinate::Free(_)))
        .collect();
    if free.is_empty() {
        return Err(Error::InvalidParameter(
            "posterior grid has no free axes".into(),
        ));
    }
    let data = sort_measurements(data);
    check_measurements(model, &data)?;
    let mut grid = PosteriorGrid {
        names,
        coordinates,
        free,
        log_density: Vec::new(),
    };
    let cells: usize = grid.dims().iter().product();
    let n = model.state_dim();
    let log_density: Result<Vec<f64>> = (0..cells)
        .into_par_iter()
        .map(|flat| {
            let z = grid.point(flat);
            let (x0, theta) = split(&z, n);
            let lp = log_prior(&z);
            if lp == f64::NEG_INFINITY {
                return Ok(lp);
            }
            let v = lp + log_likelihood(model, x0, theta, &data)?;
            Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
        })
        .collect();
    grid.log_density = log_density?;
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapOptions {
    /// Stop when the projected gradient norm (in unit-box coordinates) is below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapEstimate {
    /// Full `(x₀, θ)` vector.
    pub point: Vec<f64>,
    pub log_posterior: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Model states at the (time-sorted) data times.
    pub fit: Vec<Vec<f64>>,
    pub fit_times: Vec<f64>,
}

/// Log-likelihood and its gradient with respect to the full `(x₀, θ)` vector.
pub fn log_likelihood_gradient(
    bundle: &Bundle,
    z: &[f64],
    sorted: &[GaussianMeasurement],
) -> Result<(f64, Vec<f64>)> {
    let n = bundle.config().state_dim();
    let (x0, theta) = split(z, n);
    let mut ll = 0.0;
    let mut grad = vec![0.0; z.len()];
    for m in sorted {
        let (state, jac) = bundle.jacobian(m.t, x0, theta, true)?;
        ll += m.log_density(&state);
        for ((&c, &mu), &s) in m.components.iter().zip(&m.mean).zip(&m.sigma) {
            let r = (state[c] - mu) / s;
            for (g, j) in grad.iter_mut().zip(&jac[c]) {
                *g -= r / s * j;
            }
        }
    }
    Ok((ll, grad))
}

/// Projected gradient ascent on the log-posterior (uniform prior over the
/// box of the free coordinates) with a backtracking line search.
pub fn map_estimate(
    bundle: &Bundle,
    data: &[GaussianMeasurement],
    coordinates: &[Coordinate],
    init: &[f64],
    options: MapOptions,
) -> Result<MapEstimate> {
    check_coordinates(bundle, coordinates)?;
    if init.len() != coordinates.len() {
        return Err(Error::Dimension {
            context: "MAP initial point",
            expected: coordinates.len(),
            got: init.len(),
        });
    }
    let data = sort_measurements(data);
    check_measurements(bundle, &data)?;
    let bounds: Vec<Option<Interval>> = coordinates.iter().map(|c| c.bounds()).collect();
    for (i, b) in bounds.iter().enumerate() {
        if let Some(b) = b {
            if !b.contains(init[i]) {
                return Err(Error::InvalidParameter(format!(
                    "MAP start {} outside its box at coordinate {i}",
                    init[i]
                )));
            }
        }
    }
    // optimize in unit-box coordinates u = (z − lo)/(hi − lo)
    let to_z = |u: &[f64]| -> Vec<f64> {
        coordinates
            .iter()
            .zip(u)
            .map(|(c, &ui)| match c {
                Coordinate::Fixed(v) => *v,
                Coordinate::Free(a) => a.lo + ui * (a.hi - a.lo),
            })
            .collect()
    };
    let eval = |u: &[f64]| -> Result<(f64, Vec<f64>)> {
        let z = to_z(u);
        let (ll, gz) = log_likelihood_gradient(bundle, &z, &data)?;
        let gu = coordinates
            .iter()
            .zip(gz)
            .map(|(c, g)| match c {
                Coordinate::Fixed(_) => 0.0,
                Coordinate::Free(a) => g * (a.hi - a.lo),
            })
            .collect();
        Ok((ll, gu))
    };
    let project = |u: &mut [f64]| {
        for (ui, b) in u.iter_mut().zip(&bounds) {
            if b.is_some() {
                *ui = ui.clamp(0.0, 1.0);
            }
        }
    };
    // gradient with components pushing out of the box removed
    let projected_norm = |u: &[f64], g: &[f64]| -> f64 {
        u.iter()
            .zip(g)
            .zip(&bounds)
            .map(|((&ui, &gi), b)| {
                if b.is_none() || (ui <= 0.0 && gi < 0.0) || (ui >= 1.0 && gi > 0.0) {
                    0.0
                } else {
                    gi * gi
                }
            })
            .sum::<f64>()
            .sqrt()
    };

    let mut u: Vec<f64> = coordinates
        .iter()
        .zip(init)
        .map(|(c, &z)| match c {
            Coordinate::Fixed(_) => 0.0,
            Coordinate::Free(a) => (z - a.lo) / (a.hi - a.lo),
        })
        .collect();
    let (mut f, mut g) = eval(&u)?;
    let mut iterations = 0;
    let mut gnorm = projected_norm(&u, &g);
    let mut converged = gnorm < options.tol;
    while !converged && iterations < options.max_iter {
        iterations += 1;
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-16 {
            let mut trial: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            project(&mut trial);
            let ascent: f64 = trial
                .iter()
                .zip(&u)
                .zip(&g)
                .map(|((t, a), b)| (t - a) * b)
                .sum();
            let (ft, gt) = eval(&trial)?;
            if ft.is_finite() && ft >= f + 1e-4 * ascent {
                let moved = trial.iter().zip(&u).any(|(a, b)| a != b);
                u = trial;
                f = ft;
                g = gt;
                accepted = moved;
                break;
            }
            step *= 0.5;
        }
        gnorm = projected_norm(&u, &g);
        if gnorm < options.tol {
            converged = true;
        } else if !accepted {
            // no ascent step exists at working precision
            break;
        }
    }
    let point = to_z(&u);
    let (x0, theta) = split(&point, bundle.config().state_dim());
    let fit_times: Vec<f64> = data.iter().map(|m| m.t).collect();
    let fit = bundle.states(x0, theta, &fit_times)?;
    Ok(MapEstimate {
        point,
        log_posterior: f,
        gradient_norm: gnorm,
        iterations,
        converged,
        fit,
        fit_times,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::ParamSetting;
    use crate::network::NetworkParams;
    use crate::systems::{sho_exact, OdeSystem};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn sho_config(k: ParamSetting) -> BundleConfig {
        BundleConfig::new(
            OdeSystem::Sho,
            0.0,
            TAU,
            vec![Interval::new(-1.0, 1.0); 2],
            vec![k],
        )
    }

    fn random_bundle(seed: u64) -> Bundle {
        let cfg = sho_config(ParamSetting::Free(Interval::new(0.5, 2.0)));
        let spec = cfg.network_spec(vec![6, 6], false);
        Bundle::new(cfg, NetworkParams::init(&spec, seed).unwrap()).unwrap()
    }

    fn gaussian2(x: &[f64], m: [f64; 2], s: f64) -> f64 {
        let r2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
        (-0.5 * r2 / (s * s)).exp() / (TAU * s * s)
    }

    #[test]
    fn determinant_examples() {
        assert_eq!(determinant(vec![vec![2.0, 0.0], vec![0.0, 3.0]]), 6.0);
        assert_eq!(determinant(vec![vec![0.0, 1.0], vec![1.0, 0.0]]), -1.0);
        let d = determinant(vec![
            vec![1.0, 2.0, 3.0],
            vec![0.0, 1.0, 4.0],
            vec![5.0, 6.0, 0.0],
        ]);
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sho_flow_preserves_volume() {
        // the exact flow is linear in (x₀, v₀) with determinant cos² + sin² = 1
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let k: f64 = rng.gen_range(0.5..2.0);
            let t: f64 = rng.gen_range(0.0..TAU);
            let c1 = sho_exact(1.0, 0.0, k, t);
            let c2 = sho_exact(0.0, 1.0, k, t);
            let d = determinant(vec![vec![c1[0], c2[0]], vec![c1[1], c2[1]]]);
            assert!((d - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn pullback_at_initial_time_is_identity() {
        let b = random_bundle(2);
        let p = |x: &[f64]| gaussian2(x, [0.1, -0.2], 0.3);
        for x0 in [[0.0, 0.0], [0.5, -0.7], [-0.9, 0.9]] {
            assert_eq!(jacobian_determinant(&b, 0.0, &x0, &[1.0]).unwrap(), 1.0);
            assert_eq!(density_pullback(&b, p, 0.0, &x0, &[1.0]).unwrap(), p(&x0));
        }
    }

    #[test]
    fn delta_like_initial_density_stays_put_at_t0() {
        let b = random_bundle(3);
        let grid = [GridAxis::new(-1.0, 1.0, 20); 2];
        let hist =
            WeightedHistogram::new(vec![0, 1], vec![GridAxis::new(-1.0, 1.0, 20); 2]).unwrap();
        let target = [grid[0].center(13), grid[1].center(4)];
        let h = propagate(
            &b,
            &grid,
            &[1.0],
            0.0,
            |x| Ok(if x == target { 1.0 } else { 0.0 }),
            hist,
        )
        .unwrap();
        let bin = h.bin_of(&target).unwrap();
        assert_eq!(h.weights[bin], h.total_weight);
        assert!((h.total_weight - 0.01).abs() < 1e-15);
    }

    #[test]
    fn quarter_period_rotates_a_gaussian() {
        let cfg = sho_config(ParamSetting::Fixed(1.0));
        let oracle = OracleModel::new(cfg, 1e-3);
        let grid = [GridAxis::new(-1.0, 1.0, 60); 2];
        let mean = [0.3, -0.2];
        let hist =
            WeightedHistogram::new(vec![0, 1], vec![GridAxis::new(-1.5, 1.5, 60); 2]).unwrap();
        let h = propagate(
            &oracle,
            &grid,
            &[],
            FRAC_PI_2,
            |x| Ok(gaussian2(x, mean, 0.1)),
            hist,
        )
        .unwrap();
        let m = h.mean();
        let bin = 3.0 / 60.0;
        assert!(
            (m[0] - mean[1]).abs() < bin && (m[1] + mean[0]).abs() < bin,
            "{m:?}"
        );
        // mass conservation before normalization
        let expected: f64 = (0..3600)
            .map(|i| {
                gaussian2(&[grid[0].center(i / 60), grid[1].center(i % 60)], mean, 0.1)
                    * grid[0].width()
                    * grid[1].width()
            })
            .sum();
        assert!((h.total_weight - expected).abs() < 1e-12);
        assert!((h.binned_weight() + h.outside_weight - h.total_weight).abs() < 1e-12);
        let mut h = h;
        h.normalize().unwrap();
        assert!((h.binned_weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mass_outside_bins_is_flagged() {
        let b = random_bundle(1);
        let grid = [GridAxis::new(-1.0, 1.0, 4); 2];
        let hist = WeightedHistogram::new(vec![0], vec![GridAxis::new(5.0, 6.0, 3)]).unwrap();
        let mut h = propagate(&b, &grid, &[1.0], 0.0, |_| Ok(1.0), hist).unwrap();
        assert!(h.all_outside());
        assert!(h.normalize().is_err());
    }

    #[test]
    fn asteroid_weight_peaks_at_consistent_candidate() {
        let cfg = sho_config(ParamSetting::Fixed(1.0));
        let oracle = OracleModel::new(cfg, 1e-3);
        let truth = [0.4, 0.1];
        let r1 = oracle.states(&truth, &[], &[0.5]).unwrap().pop().unwrap();
        let m0 = GaussianMeasurement::new(0.0, vec![0], vec![truth[0]], vec![0.01]).unwrap();
        let m1 = GaussianMeasurement::new(0.5, vec![0], vec![r1[0]], vec![0.01]).unwrap();
        let best = asteroid_posterior_weight(&oracle, &truth, &[], &m0, &m1).unwrap();
        for dv in [-0.05, -0.01, 0.01, 0.05] {
            let w = asteroid_posterior_weight(&oracle, &[truth[0], truth[1] + dv], &[], &m0, &m1)
                .unwrap();
            assert!(w < best);
        }
        let wide0 = GaussianMeasurement::new(0.0, vec![0], vec![truth[0]], vec![1e12]).unwrap();
        let wide1 = GaussianMeasurement::new(0.5, vec![0], vec![r1[0]], vec![1e12]).unwrap();
        let a = asteroid_posterior_weight(&oracle, &truth, &[], &wide0, &wide1).unwrap();
        let b = asteroid_posterior_weight(&oracle, &[-0.9, 0.8], &[], &wide0, &wide1).unwrap();
        assert!((a / b - 1.0).abs() < 1e-12);
    }

    fn synthetic(
        k: f64,
        x0: [f64; 2],
        sigma: f64,
        n: usize,
        seed: u64,
    ) -> Vec<GaussianMeasurement> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let t = TAU * (i + 1) as f64 / n as f64;
                let e = sho_exact(x0[0], x0[1], k, t);
                let noise = |r: &mut ChaCha8Rng| -> f64 { r.sample(rand_distr::StandardNormal) };
                let mean = vec![
                    e[0] + sigma * noise(&mut rng),
                    e[1] + sigma * noise(&mut rng),
                ];
                GaussianMeasurement::full(t, mean, sigma).unwrap()
            })
            .collect()
    }

    fn k_axis() -> Vec<Coordinate> {
        vec![
            Coordinate::Fixed(0.6),
            Coordinate::Fixed(-0.3),
            Coordinate::Free(GridAxis::new(0.5, 2.0, 50)),
        ]
    }

    fn names() -> Vec<String> {
        vec!["x0".into(), "v0".into(), "k".into()]
    }

    #[test]
    fn oracle_posterior_recovers_stiffness() {
        let oracle = OracleModel::new(
            sho_config(ParamSetting::Free(Interval::new(0.5, 2.0))),
            1e-2,
        );
        let data = synthetic(1.3, [0.6, -0.3], 0.01, 20, 4);
        let post = bayes_posterior(&oracle, &data, names(), k_axis()).unwrap();
        let cell = post.cell(post.argmax())[0] as f64;
        let truth_cell = (1.3 - 0.5) / 0.03 - 0.5;
        assert!(
            (cell - truth_cell).abs() <= 2.0,
            "cell {cell} vs {truth_cell}"
        );
        let marg = post.marginal(0);
        assert!((marg.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        // doubling σ keeps the argmax
        let wider: Vec<GaussianMeasurement> = data
            .iter()
            .map(|m| {
                GaussianMeasurement::new(
                    m.t,
                    m.components.clone(),
                    m.mean.clone(),
                    m.sigma.iter().map(|s| 2.0 * s).collect(),
                )
                .unwrap()
            })
            .collect();
        assert_eq!(
            bayes_posterior(&oracle, &wider, names(), k_axis())
                .unwrap()
                .argmax(),
            post.argmax()
        );

        // data order does not matter
        let mut shuffled = data.clone();
        shuffled.reverse();
        shuffled.swap(3, 11);
        assert_eq!(
            bayes_posterior(&oracle, &shuffled, names(), k_axis()).unwrap(),
            post
        );
    }

    #[test]
    fn data_csv_round_trip() {
        let oracle = OracleModel::new(sho_config(ParamSetting::Fixed(1.0)), 1e-2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = synthetic_data(
            &oracle,
            &[0.5, 0.0],
            &[],
            &[2.0, 1.0, 3.0],
            &[0, 1],
            0.1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(
            data.iter().map(|m| m.t).collect::<Vec<_>>(),
            vec![1.0, 2.0, 3.0]
        );
        let mut buf = Vec::new();
        write_data_csv(&data, &mut buf).unwrap();
        let back = read_data_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back[1].t, 1.0);
        assert_eq!(back[1].mean[0], data[0].mean[1]);
        let ll = |d: &[GaussianMeasurement]| {
            log_likelihood(&oracle, &[0.5, 0.0], &[], &sort_measurements(d)).unwrap()
        };
        assert!((ll(&data) - ll(&back)).abs() < 1e-12);
        assert!(read_data_csv("t,component,value,sigma\n1.0,x,2.0,0.1\n".as_bytes()).is_err());
        assert!(read_data_csv("t,component,value,sigma\n1.0,0,2.0,0\n".as_bytes()).is_err());
    }

    #[test]
    fn no_data_gives_the_prior() {
        let b = random_bundle(5);
        let post = bayes_posterior(&b, &[], names(), k_axis()).unwrap();
        assert!(post
            .probabilities()
            .iter()
            .all(|&p| (p - 0.02).abs() < 1e-15));
        let err = bayes_posterior(&b, &[], names(), vec![Coordinate::Fixed(0.0); 3]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let late = GaussianMeasurement::full(10.0, vec![0.0, 0.0], 0.1).unwrap();
        assert!(bayes_posterior(&b, &[late], names(), k_axis()).is_err());
    }

    #[test]
    fn map_recovers_self_generated_data() {
        let b = random_bundle(11);
        let truth = [0.2, -0.4, 1.1];
        let times: Vec<f64> = (1..=15).map(|i| 0.4 * i as f64).collect();
        let states = b.states(&truth[..2], &truth[2..], &times).unwrap();
        let data: Vec<GaussianMeasurement> = times
            .iter()
            .zip(&states)
            .map(|(&t, s)| GaussianMeasurement::full(t, s.clone(), 0.05).unwrap())
            .collect();
        let coords = vec![
            Coordinate::Free(GridAxis::new(-1.0, 1.0, 1)),
            Coordinate::Free(GridAxis::new(-1.0, 1.0, 1)),
            Coordinate::Free(GridAxis::new(0.5, 2.0, 1)),
        ];
        let est = map_estimate(
            &b,
            &data,
            &coords,
            &[0.25, -0.35, 1.2],
            MapOptions {
                tol: 1e-4,
                max_iter: 20_000,
            },
        )
        .unwrap();
        for (a, t) in est.point.iter().zip(truth) {
            assert!(
                (a - t).abs() < 1e-3,
                "{:?} vs {truth:?} ({} iters)",
                est.point,
                est.iterations
            );
        }
        assert!(
            est.converged,
            "{} after {} iterations",
            est.gradient_norm, est.iterations
        );

        // directional derivatives in unit-box coordinates vanish at the optimum
        let sorted = sort_measurements(&data);
        let widths = [2.0, 2.0, 1.5];
        let f = |z: &[f64]| log_likelihood(&b, &z[..2], &z[2..], &sorted).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let d: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            let h = 1e-6;
            let shifted = |s: f64| -> Vec<f64> {
                (0..3)
                    .map(|i| est.point[i] + s * h * d[i] / norm * widths[i])
                    .collect()
            };
            let dd = (f(&shifted(1.0)) - f(&shifted(-1.0))) / (2.0 * h);
            assert!(dd.abs() <= 1e-4 * 10.0, "directional derivative {dd}");
        }
    }

    #[test]
    fn map_with_single_full_observation_at_t0() {
        let b = random_bundle(12);
        let data = [GaussianMeasurement::full(0.0, vec![0.31, -0.52], 0.1).unwrap()];
        let coords = vec![
            Coordinate::Free(GridAxis::new(-1.0, 1.0, 1)),
            Coordinate::Free(GridAxis::new(-1.0, 1.0, 1)),
            Coordinate::Fixed(1.0),
        ];
        let est =
            map_estimate(&b, &data, &coords, &[0.0, 0.0, 1.0], MapOptions::default()).unwrap();
        assert!(est.converged);
        // |∂/∂u| = width·|x − μ|/σ² < tol bounds the distance to the observation
        let bound = 1e-6 * 0.01 / 2.0;
        assert!(
            (est.point[0] - 0.31).abs() < bound && (est.point[1] + 0.52).abs() < bound,
            "{:?}",
            est.point
        );
    }

    #[test]
    fn map_gradient_matches_finite_differences() {
        let b = random_bundle(13);
        let data = synthetic(1.0, [0.1, 0.2], 0.1, 6, 1);
        let sorted = sort_measurements(&data);
        let z = [0.3, 0.1, 1.4];
        let (_, g) = log_likelihood_gradient(&b, &z, &sorted).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let f = |z: &[f64]| log_likelihood(&b, &z[..2], &z[2..], &sorted).unwrap();
            let fd = (f(&zp) - f(&zm)) / (2.0 * h);
            assert!(
                (g[i] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "{i}: {} vs {fd}",
                g[i]
            );
        }
    }
}
