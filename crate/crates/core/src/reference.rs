//! Classical fixed-step integrators used as ground truth, error metrics and
//! the global error bound for a trained bundle.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::ad::Dual;
use crate::bundle::{Bundle, Interval};
use crate::error::{Error, Result};
use crate::systems::OdeSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Rk4,
    Euler,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Rk4 => "rk4",
            Method::Euler => "euler",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One step of `method` for `dx/dt = f(t, x)`.
pub fn step<F>(f: &F, method: Method, t: f64, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    match method {
        Method::Euler => {
            let k1 = f(t, x)?;
            Ok((0..n).map(|i| x[i] + h * k1[i]).collect())
        }
        Method::Rk4 => {
            let k1 = f(t, x)?;
            let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
            let k2 = f(t + 0.5 * h, &x2)?;
            let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
            let k3 = f(t + 0.5 * h, &x3)?;
            let x4: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
            let k4 = f(t + h, &x4)?;
            Ok((0..n)
                .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect())
        }
    }
}

fn check_step(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive, got {h}"
        )));
    }
    Ok(())
}

/// Number of full steps of size `h` that fit in `span`, tolerating
/// round-off when `span` is an exact multiple.
fn full_steps(span: f64, h: f64) -> u64 {
    let q = span / h;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.max(1.0) {
        r as u64
    } else {
        q.floor() as u64
    }
}

/// State at `t` from `x(t₀) = x₀`: whole steps of `h` from `t₀`, then one
/// shorter step to land on `t`. Works backwards in time when `t < t₀`.
pub fn integrate_to<F>(
    f: &F,
    method: Method,
    x0: &[f64],
    t0: f64,
    t: f64,
    h: f64,
) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Result<Vec<f64>>,
{
    check_step(h)?;
    let dir = if t >= t0 { 1.0 } else { -1.0 };
    let span = (t - t0).abs();
    let n = full_steps(span, h);
    let mut x = x0.to_vec();
    for k in 0..n {
        x = step(f, method, t0 + dir * k as f64 * h, &x, dir * h)?;
    }
    let done = n as f64 * h;
    let rest = span - done;
    if rest > 1e-12 * span.max(1.0) {
        x = step(f, method, t0 + dir * done, &x, dir * rest)?;
    }
    Ok(x)
}

/// Steps taken by [`integrate_to`] over `span`.
pub fn step_count(span: f64, h: f64) -> u64 {
    let n = full_steps(span.abs(), h);
    let rest = span.abs() - n as f64 * h;
    n + u64::from(rest > 1e-12 * span.abs().max(1.0))
}

/// Uniform-step solution; the final step is shortened to end exactly at
/// `t_end` when the window is not a multiple of `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub system: OdeSystem,
    pub params: Vec<f64>,
    pub method: Method,
    pub h: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Dense output: from the last stored time not after `t`, one partial step.
    pub fn state_at(&self, t: f64) -> Result<Vec<f64>> {
        let (t0, t1) = (self.t0(), self.t_end());
        if t < t0 - 1e-12 || t > t1 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "t = {t} outside trajectory [{t0}, {t1}]"
            )));
        }
        let k = match self.times.partition_point(|&s| s <= t) {
            0 => 0,
            i => i - 1,
        };
        let dt = t - self.times[k];
        if dt <= 0.0 {
            return Ok(self.states[k].clone());
        }
        let f = |tt: f64, x: &[f64]| self.system.rhs_f64(tt, x, &self.params);
        step(&f, self.method, self.times[k], &self.states[k], dt)
    }

    /// CSV with header `t,x1,…,xn`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.system.state_dim()).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for (t, x) in self.times.iter().zip(&self.states) {
            let mut row = vec![t.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()
            .map_err(|e| Error::Input(format!("writing trajectory: {e}")))?;
        Ok(())
    }
}

pub fn solve(
    system: OdeSystem,
    method: Method,
    x0: &[f64],
    params: &[f64],
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    check_step(h)?;
    if !(t_end > t0) {
        return Err(Error::InvalidParameter(format!(
            "t_end = {t_end} must exceed t0 = {t0}"
        )));
    }
    let f = |t: f64, x: &[f64]| system.rhs_f64(t, x, params);
    // validates dimensions up front
    f(t0, x0)?;
    let n = full_steps(t_end - t0, h);
    let mut times = Vec::with_capacity(n as usize + 2);
    let mut states = Vec::with_capacity(n as usize + 2);
    times.push(t0);
    states.push(x0.to_vec());
    let mut x = x0.to_vec();
    for k in 0..n {
        x = step(&f, method, t0 + k as f64 * h, &x, h)?;
        times.push(t0 + (k + 1) as f64 * h);
        states.push(x.clone());
    }
    let last = t0 + n as f64 * h;
    let rest = t_end - last;
    if rest > 1e-12 * (t_end - t0).max(1.0) {
        x = step(&f, method, last, &x, rest)?;
        times.push(t_end);
        states.push(x);
    } else if let Some(t) = times.last_mut() {
        *t = t_end;
    }
    Ok(Trajectory {
        system,
        params: params.to_vec(),
        method,
        h,
        times,
        states,
    })
}

pub fn rk4_solve(
    system: OdeSystem,
    x0: &[f64],
    params: &[f64],
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    solve(system, Method::Rk4, x0, params, t0, t_end, h)
}

pub fn euler_solve(
    system: OdeSystem,
    x0: &[f64],
    params: &[f64],
    t0: f64,
    t_end: f64,
    h: f64,
) -> Result<Trajectory> {
    solve(system, Method::Euler, x0, params, t0, t_end, h)
}

/// Mean of componentwise absolute differences.
pub fn absolute_error(estimate: &[f64], exact: &[f64]) -> f64 {
    debug_assert_eq!(estimate.len(), exact.len());
    let sum: f64 = estimate.iter().zip(exact).map(|(a, b)| (a - b).abs()).sum();
    sum / estimate.len() as f64
}

/// `(ε/L)(e^{L(t − t₀)} − 1)`: bound on the distance between a function
/// whose residual never exceeds `ε` and the true solution, for an `L`-Lipschitz
/// field.
pub fn global_error_bound(eps_max: f64, lipschitz: f64, t: f64, t0: f64) -> Result<f64> {
    if !(lipschitz > 0.0) || !(eps_max >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "bound needs L > 0 and ε ≥ 0, got L = {lipschitz}, ε = {eps_max}"
        )));
    }
    Ok(eps_max / lipschitz * (lipschitz * (t - t0)).exp_m1())
}

/// Euclidean norm of the bundle residual at each time.
pub fn residual_scan(
    bundle: &Bundle,
    x0: &[f64],
    theta: &[f64],
    times: &[f64],
) -> Result<Vec<f64>> {
    times
        .iter()
        .map(|&t| {
            let r = bundle.residual(t, x0, theta)?;
            Ok(r.iter().map(|v| v * v).sum::<f64>().sqrt())
        })
        .collect()
}

/// How well a bundle tracks the integrator over a set of initial states.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackingDiagnostics {
    pub points: usize,
    /// Mean Euclidean residual norm.
    pub mean_residual: f64,
    /// Mean Euclidean distance to the reference trajectory.
    pub mean_distance: f64,
    /// Fraction of points that satisfy the equation locally (every residual
    /// component below the tolerance) while sitting far from the reference.
    pub stuck_fraction: f64,
}

/// Compare the bundle with RK4 (step `h`) at every `(x₀, t)` pair.
pub fn tracking_diagnostics(
    bundle: &Bundle,
    x0s: &[Vec<f64>],
    theta: &[f64],
    times: &[f64],
    h: f64,
    residual_tol: f64,
    distance: f64,
) -> Result<TrackingDiagnostics> {
    let cfg = bundle.config();
    let params = cfg.full_params(theta)?;
    let t_end = times.iter().copied().fold(cfg.t0, f64::max);
    let per_start = x0s
        .par_iter()
        .map(|x0| {
            let reference = solve(cfg.system, Method::Rk4, x0, &params, cfg.t0, t_end, h)?;
            let mut acc = (0.0, 0.0, 0usize);
            for &t in times {
                let r = bundle.residual(t, x0, theta)?;
                let state = bundle.state(t, x0, theta)?;
                let exact = reference.state_at(t)?;
                let d = state
                    .iter()
                    .zip(&exact)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                acc.0 += r.iter().map(|v| v * v).sum::<f64>().sqrt();
                acc.1 += d;
                if d > distance && r.iter().all(|v| v.abs() < residual_tol) {
                    acc.2 += 1;
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let points = x0s.len() * times.len();
    let (res, dist, stuck) = per_start
        .iter()
        .fold((0.0, 0.0, 0usize), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    Ok(TrackingDiagnostics {
        points,
        mean_residual: res / points as f64,
        mean_distance: dist / points as f64,
        stuck_fraction: stuck as f64 / points as f64,
    })
}

/// Running maximum of a residual scan.
pub fn running_max(values: &[f64]) -> Vec<f64> {
    let mut m = 0.0f64;
    values
        .iter()
        .map(|&v| {
            m = m.max(v);
            m
        })
        .collect()
}

/// Lipschitz constant of `x ↦ kx`-style SHO field: the 2-norm of
/// `[[0, 1], [−k, 0]]` is `max(1, k)`.
pub fn sho_lipschitz(k_max: f64) -> f64 {
    k_max.max(1.0)
}

/// Spectral norm of the state Jacobian of `f`, by forward mode and power
/// iteration on `JᵀJ`.
pub fn jacobian_norm(system: OdeSystem, t: f64, x: &[f64], params: &[f64]) -> Result<f64> {
    let n = x.len();
    let pd: Vec<Dual> = params.iter().map(|&v| Dual::constant(v)).collect();
    let mut jac = vec![vec![0.0; n]; n];
    for j in 0..n {
        let xd: Vec<Dual> = x
            .iter()
            .enumerate()
            .map(|(i, &v)| Dual::new(v, if i == j { 1.0 } else { 0.0 }))
            .collect();
        let out = system.rhs(Dual::constant(t), &xd, &pd)?;
        for i in 0..n {
            jac[i][j] = out[i].eps;
        }
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut sigma2 = 0.0;
    for _ in 0..200 {
        let jv: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| jac[i][j] * v[j]).sum())
            .collect();
        let w: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| jac[i][j] * jv[i]).sum())
            .collect();
        let norm = w.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        sigma2 = norm;
        v = w.iter().map(|a| a / norm).collect();
    }
    Ok(sigma2.sqrt())
}

/// Sampled Lipschitz estimate over a box: the largest Jacobian norm seen at
/// `samples` uniform points, times a 1.1 safety factor.
pub fn lipschitz_estimate(
    system: OdeSystem,
    state_box: &[Interval],
    param_box: &[Interval],
    t_range: Interval,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let mut best = 0.0f64;
    for _ in 0..samples {
        let t = t_range.lerp(rng.gen());
        let x: Vec<f64> = state_box.iter().map(|iv| iv.lerp(rng.gen())).collect();
        let p: Vec<f64> = param_box.iter().map(|iv| iv.lerp(rng.gen())).collect();
        best = best.max(jacobian_norm(system, t, &x, &p)?);
    }
    Ok(1.1 * best)
}

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn convergence_order(steps: &[f64], errors: &[f64]) -> f64 {
    let xs: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
