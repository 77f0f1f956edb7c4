//! Trial solution `x̂(t; x₀, θ) = x₀ + a(t)·N(t, x₀, θ)` with `a(t₀) = 0`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ad::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::network::{NetworkParams, NetworkSpec};
use crate::systems::OdeSystem;

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        let slack = 1e-12 * (self.lo.abs().max(self.hi.abs()).max(1.0));
        v >= self.lo - slack && v <= self.hi + slack
    }

    /// `lo + u·(hi − lo)` for `u ∈ [0, 1]`.
    pub fn lerp(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(v: Interval) -> Self {
        [v.lo, v.hi]
    }
}

/// Time envelope `a(t)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AKind {
    /// `a(t) = t − t₀`
    Linear,
    /// `a(t) = 1 − e^{−(t − t₀)}`
    #[default]
    Exp,
}

impl AKind {
    pub fn name(self) -> &'static str {
        match self {
            AKind::Linear => "linear",
            AKind::Exp => "exp",
        }
    }
}

impl fmt::Display for AKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(AKind::Linear),
            "exp" => Ok(AKind::Exp),
            other => Err(Error::config(
                "bundle.a_kind",
                format!("unknown kind `{other}`"),
            )),
        }
    }
}

pub fn a_value(kind: AKind, t: f64, t0: f64) -> f64 {
    match kind {
        AKind::Linear => t - t0,
        AKind::Exp => -(-(t - t0)).exp_m1(),
    }
}

pub fn a_derivative(kind: AKind, t: f64, t0: f64) -> f64 {
    match kind {
        AKind::Linear => 1.0,
        AKind::Exp => (-(t - t0)).exp(),
    }
}

/// `a(t)` over any scalar type.
pub fn a_scalar<S: Scalar>(kind: AKind, t: S, t0: f64) -> S {
    match kind {
        AKind::Linear => t - t0,
        AKind::Exp => -((-(t - t0)).exp()) + 1.0,
    }
}

/// A system parameter is either sampled over an interval (and fed to the
/// network) or held at a fixed value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamSetting {
    Fixed(f64),
    Free(Interval),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BundleConfig {
    pub system: OdeSystem,
    pub t0: f64,
    pub tf: f64,
    pub x0_box: Vec<Interval>,
    /// One entry per system parameter, in the system's order.
    pub params: Vec<ParamSetting>,
    pub a_kind: AKind,
    /// Training samples times from `[t₀ − δ, t_f]`.
    pub time_margin: f64,
    /// Affinely map every network input onto `[−1, 1]` using the domains.
    pub normalize_inputs: bool,
}

impl BundleConfig {
    /// Domain with every parameter free at ±0 width around its default and
    /// the default 0.2% pre-`t₀` margin.
    pub fn new(
        system: OdeSystem,
        t0: f64,
        tf: f64,
        x0_box: Vec<Interval>,
        params: Vec<ParamSetting>,
    ) -> Self {
        Self {
            system,
            t0,
            tf,
            x0_box,
            params,
            a_kind: AKind::Exp,
            time_margin: 0.002 * (tf - t0),
            normalize_inputs: false,
        }
    }

    pub fn with_a_kind(mut self, kind: AKind) -> Self {
        self.a_kind = kind;
        self
    }

    pub fn with_time_margin(mut self, margin: f64) -> Self {
        self.time_margin = margin;
        self
    }

    pub fn with_normalized_inputs(mut self, on: bool) -> Self {
        self.normalize_inputs = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.system.state_dim();
        if !(self.t0 < self.tf) {
            return Err(Error::config(
                "bundle",
                format!("t0 = {} must be below tf = {}", self.t0, self.tf),
            ));
        }
        if !(self.time_margin >= 0.0) {
            return Err(Error::config("bundle.time_margin", "must be non-negative"));
        }
        if self.x0_box.len() != n {
            return Err(Error::config(
                "bundle.x0_box",
                format!(
                    "{} has {n} state components, got {} intervals",
                    self.system,
                    self.x0_box.len()
                ),
            ));
        }
        for (i, iv) in self.x0_box.iter().enumerate() {
            if !(iv.lo < iv.hi) {
                return Err(Error::config(
                    format!("bundle.x0_box[{i}]"),
                    "interval is empty or degenerate",
                ));
            }
        }
        let names = self.system.param_names();
        if self.params.len() != names.len() {
            return Err(Error::config(
                "bundle.params",
                format!(
                    "{} expects parameters {names:?}, got {} settings",
                    self.system,
                    self.params.len()
                ),
            ));
        }
        for (name, setting) in names.iter().zip(&self.params) {
            match setting {
                ParamSetting::Free(iv) if !(iv.lo < iv.hi) => {
                    return Err(Error::config(
                        format!("bundle.params.{name}"),
                        "interval is empty or degenerate",
                    ));
                }
                ParamSetting::Fixed(v) if !v.is_finite() => {
                    return Err(Error::config(
                        format!("bundle.params.{name}"),
                        "value must be finite",
                    ));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    /// Number of free parameters `p`.
    pub fn free_dim(&self) -> usize {
        self.params
            .iter()
            .filter(|p| matches!(p, ParamSetting::Free(_)))
            .count()
    }

    pub fn input_dim(&self) -> usize {
        1 + self.state_dim() + self.free_dim()
    }

    pub fn theta_box(&self) -> Vec<Interval> {
        self.params
            .iter()
            .filter_map(|p| match p {
                ParamSetting::Free(iv) => Some(*iv),
                ParamSetting::Fixed(_) => None,
            })
            .collect()
    }

    pub fn free_param_names(&self) -> Vec<&'static str> {
        self.system
            .param_names()
            .iter()
            .zip(&self.params)
            .filter(|(_, p)| matches!(p, ParamSetting::Free(_)))
            .map(|(n, _)| *n)
            .collect()
    }

    /// Training time range `[t₀ − δ, t_f]`.
    pub fn time_domain(&self) -> Interval {
        Interval::new(self.t0 - self.time_margin, self.tf)
    }

    /// Full system parameter vector from the free ones.
    pub fn full_params(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta.len())?;
        let mut free = theta.iter();
        Ok(self
            .params
            .iter()
            .map(|p| match p {
                ParamSetting::Fixed(v) => *v,
                ParamSetting::Free(_) => *free.next().unwrap(),
            })
            .collect())
    }

    /// As [`full_params`](Self::full_params) for any scalar type; fixed
    /// values become constants in the context of `like`.
    pub fn full_params_scalar<S: Scalar>(&self, theta: &[S], like: S) -> Result<Vec<S>> {
        self.check_theta(theta.len())?;
        let mut free = theta.iter();
        Ok(self
            .params
            .iter()
            .map(|p| match p {
                ParamSetting::Fixed(v) => like.constant_like(*v),
                ParamSetting::Free(_) => *free.next().unwrap(),
            })
            .collect())
    }

    fn check_theta(&self, got: usize) -> Result<()> {
        if got != self.free_dim() {
            return Err(Error::Dimension {
                context: "free parameter vector",
                expected: self.free_dim(),
                got,
            });
        }
        Ok(())
    }

    fn check_x0(&self, got: usize) -> Result<()> {
        if got != self.state_dim() {
            return Err(Error::Dimension {
                context: "initial state",
                expected: self.state_dim(),
                got,
            });
        }
        Ok(())
    }

    pub fn network_spec(&self, hidden: Vec<usize>, skip_connections: bool) -> NetworkSpec {
        NetworkSpec::new(self.input_dim(), hidden, self.state_dim())
            .with_skip_connections(skip_connections)
    }

    /// Whether `(t, x₀, θ)` lies in the trained domain.
    pub fn in_domain(&self, t: f64, x0: &[f64], theta: &[f64]) -> bool {
        self.time_domain().contains(t)
            && x0.iter().zip(&self.x0_box).all(|(v, iv)| iv.contains(*v))
            && theta
                .iter()
                .zip(self.theta_box())
                .all(|(v, iv)| iv.contains(*v))
    }

    /// Per-input `(center, 1/half-width)`; identity when normalization is off.
    pub fn input_affine(&self) -> Vec<(f64, f64)> {
        let mut domains = vec![self.time_domain()];
        domains.extend(self.x0_box.iter().copied());
        domains.extend(self.theta_box());
        domains
            .into_iter()
            .map(|iv| {
                if self.normalize_inputs {
                    (iv.center(), 2.0 / iv.width())
                } else {
                    (0.0, 1.0)
                }
            })
            .collect()
    }
}

/// Network input vector `[t, x₀, θ]` (normalized when configured) and its
/// derivative with respect to `t`.
#[derive(Clone, Debug)]
pub struct InputEncoder {
    affine: Vec<(f64, f64)>,
    normalize: bool,
}

impl InputEncoder {
    pub fn new(config: &BundleConfig) -> Self {
        Self {
            affine: config.input_affine(),
            normalize: config.normalize_inputs,
        }
    }

    #[inline]
    fn map<S: Scalar>(&self, i: usize, v: S) -> S {
        if self.normalize {
            let (c, s) = self.affine[i];
            (v - c) * s
        } else {
            v
        }
    }

    pub fn encode(&self, t: f64, x0: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = self.map(0, t);
        for (i, &v) in x0.iter().chain(theta).enumerate() {
            out[i + 1] = self.map(i + 1, v);
        }
    }

    pub fn encode_scalar<S: Scalar>(&self, t: S, x0: &[S], theta: &[S]) -> Vec<S> {
        let mut out = Vec::with_capacity(1 + x0.len() + theta.len());
        out.push(self.map(0, t));
        for (i, &v) in x0.iter().chain(theta).enumerate() {
            out.push(self.map(i + 1, v));
        }
        out
    }

    /// `d(input)/dt`: nonzero only in the time slot.
    pub fn time_tangent(&self, out: &mut [f64]) {
        out.fill(0.0);
        out[0] = if self.normalize {
            self.affine[0].1
        } else {
            1.0
        };
    }
}

/// Result of evaluating a bundle, flagged when outside the trained domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub state: Vec<f64>,
    pub extrapolated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeDerivativeEvaluation {
    pub state: Vec<f64>,
    pub time_derivative: Vec<f64>,
    pub extrapolated: bool,
}

/// A trained (or untrained) network together with the domain it represents.
#[derive(Clone, Debug)]
pub struct Bundle {
    config: BundleConfig,
    params: NetworkParams,
    encoder: InputEncoder,
}

impl Bundle {
    pub fn new(config: BundleConfig, params: NetworkParams) -> Result<Self> {
        config.validate()?;
        let spec = params.spec();
        if spec.input_dim != config.input_dim() {
            return Err(Error::Dimension {
                context: "network input width vs bundle domain",
                expected: config.input_dim(),
                got: spec.input_dim,
            });
        }
        if spec.output_dim != config.state_dim() {
            return Err(Error::Dimension {
                context: "network output width vs state dimension",
                expected: config.state_dim(),
                got: spec.output_dim,
            });
        }
        Ok(Self {
            encoder: InputEncoder::new(&config),
            config,
            params,
        })
    }

    pub fn config(&self) -> &BundleConfig {
        &self.config
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn encoder(&self) -> &InputEncoder {
        &self.encoder
    }

    pub fn system(&self) -> OdeSystem {
        self.config.system
    }

    pub fn into_parts(self) -> (BundleConfig, NetworkParams) {
        (self.config, self.params)
    }

    /// `x̂(t; x₀, θ)` over any scalar type.
    pub fn evaluate_scalar<S: Scalar>(&self, t: S, x0: &[S], theta: &[S]) -> Result<Vec<S>> {
        self.config.check_x0(x0.len())?;
        self.config.check_theta(theta.len())?;
        let input = self.encoder.encode_scalar(t, x0, theta);
        let n = self.params.forward_scalar(&input)?;
        let a = a_scalar(self.config.a_kind, t, self.config.t0);
        Ok(x0.iter().zip(n).map(|(&x, ni)| x + a * ni).collect())
    }

    pub fn evaluate(&self, t: f64, x0: &[f64], theta: &[f64]) -> Result<Evaluation> {
        let state = self.evaluate_scalar(t, x0, theta)?;
        Ok(Evaluation {
            state,
            extrapolated: !self.config.in_domain(t, x0, theta),
        })
    }

    /// Plain state, ignoring the domain flag.
    pub fn state(&self, t: f64, x0: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.evaluate_scalar(t, x0, theta)
    }

    /// `(x̂, ∂x̂/∂t)` with `∂x̂/∂t = a′(t)·N + a(t)·∂N/∂t`.
    pub fn evaluate_with_time_derivative(
        &self,
        t: f64,
        x0: &[f64],
        theta: &[f64],
    ) -> Result<TimeDerivativeEvaluation> {
        self.config.check_x0(x0.len())?;
        self.config.check_theta(theta.len())?;
        let td = Dual::variable(t);
        let x0d: Vec<Dual> = x0.iter().map(|&v| Dual::constant(v)).collect();
        let thd: Vec<Dual> = theta.iter().map(|&v| Dual::constant(v)).collect();
        let input = self.encoder.encode_scalar(td, &x0d, &thd);
        let n = self.params.forward_scalar(&input)?;
        let a = a_value(self.config.a_kind, t, self.config.t0);
        let da = a_derivative(self.config.a_kind, t, self.config.t0);
        let state = x0.iter().zip(&n).map(|(&x, ni)| x + a * ni.re).collect();
        let time_derivative = n.iter().map(|ni| da * ni.re + a * ni.eps).collect();
        Ok(TimeDerivativeEvaluation {
            state,
            time_derivative,
            extrapolated: !self.config.in_domain(t, x0, theta),
        })
    }

    /// Local error `ε(t) = ∂x̂/∂t − f(t, x̂; θ)`.
    pub fn residual(&self, t: f64, x0: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let ev = self.evaluate_with_time_derivative(t, x0, theta)?;
        let p = self.config.full_params(theta)?;
        self.config
            .system
            .residual(&ev.state, &ev.time_derivative, t, &p)
    }

    /// `∂x̂/∂x₀` (row = output component, column = initial-state input),
    /// one forward-mode pass per column.
    pub fn input_jacobian(&self, t: f64, x0: &[f64], theta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (_, jac) = self.jacobian(t, x0, theta, false)?;
        Ok(jac)
    }

    /// `x̂` and its Jacobian with respect to `x₀` and, when
    /// `include_theta`, the free parameters (columns `x₀…, θ…`).
    pub fn jacobian(
        &self,
        t: f64,
        x0: &[f64],
        theta: &[f64],
        include_theta: bool,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let n = x0.len();
        let cols = if include_theta { n + theta.len() } else { n };
        let mut jac = vec![vec![0.0; cols]; self.config.state_dim()];
        let mut state = Vec::new();
        for j in 0..cols {
            let seed = |i: usize, v: f64| Dual::new(v, if i == j { 1.0 } else { 0.0 });
            let x0d: Vec<Dual> = x0.iter().enumerate().map(|(i, &v)| seed(i, v)).collect();
            let thd: Vec<Dual> = theta
                .iter()
                .enumerate()
                .map(|(i, &v)| seed(n + i, v))
                .collect();
            let out = self.evaluate_scalar(Dual::constant(t), &x0d, &thd)?;
            for (i, o) in out.iter().enumerate() {
                jac[i][j] = o.eps;
            }
            if j == 0 {
                state = out.iter().map(|o| o.re).collect();
            }
        }
        if cols == 0 {
            state = self.state(t, x0, theta)?;
        }
        Ok((state, jac))
    }
}
