//! Weighted residual loss `L = (1/|B|) Σ b(tᵢ)·|ẋ̂ − f(tᵢ, x̂; θᵢ)|²` and its
//! gradient with respect to the network weights.

use rayon::prelude::*;

use crate::ad::{Dual, Tape, Var};
use crate::bundle::{a_derivative, a_scalar, a_value, BundleConfig, InputEncoder};
use crate::error::{Error, Result};
use crate::network::{forward_generic, DualPass, NetworkParams};
use crate::training::sampling::Batch;
use crate::training::schedule::weight;

/// Points per parallel work item; partial sums are combined in chunk order
/// so the result does not depend on the thread count.
pub const CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct LossGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
}

struct Workspace {
    pass: DualPass,
    input: Vec<f64>,
    input_tangent: Vec<f64>,
    n_adj: Vec<f64>,
    nt_adj: Vec<f64>,
}

impl Workspace {
    fn new(params: &NetworkParams, encoder: &InputEncoder) -> Self {
        let spec = params.spec();
        let mut input_tangent = vec![0.0; spec.input_dim];
        encoder.time_tangent(&mut input_tangent);
        Self {
            pass: DualPass::new(spec),
            input: vec![0.0; spec.input_dim],
            input_tangent,
            n_adj: vec![0.0; spec.output_dim],
            nt_adj: vec![0.0; spec.output_dim],
        }
    }
}

/// `f(t, x̂)` and `∂f/∂x̂` (row-major `n × n`) by forward mode.
fn rhs_and_jacobian(
    config: &BundleConfig,
    t: f64,
    xhat: &[f64],
    p: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = xhat.len();
    let pd: Vec<Dual> = p.iter().map(|&v| Dual::constant(v)).collect();
    let mut f = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    let mut xd: Vec<Dual> = xhat.iter().map(|&v| Dual::constant(v)).collect();
    for j in 0..n {
        xd[j].eps = 1.0;
        let out = config.system.rhs(Dual::constant(t), &xd, &pd)?;
        xd[j].eps = 0.0;
        for i in 0..n {
            jac[i * n + j] = out[i].eps;
            f[i] = out[i].re;
        }
    }
    Ok((f, jac))
}

/// Adds one point's gradient into `grad` and returns its loss contribution.
#[allow(clippy::too_many_arguments)]
fn point(
    ws: &mut Workspace,
    params: &NetworkParams,
    config: &BundleConfig,
    encoder: &InputEncoder,
    t: f64,
    x0: &[f64],
    theta: &[f64],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let n = x0.len();
    encoder.encode(t, x0, theta, &mut ws.input);
    let a = a_value(config.a_kind, t, config.t0);
    let da = a_derivative(config.a_kind, t, config.t0);
    let (net, net_t) = ws.pass.forward(params, &ws.input, &ws.input_tangent);
    let xhat: Vec<f64> = (0..n).map(|i| x0[i] + a * net[i]).collect();
    let xdot: Vec<f64> = (0..n).map(|i| da * net[i] + a * net_t[i]).collect();
    let p = config.full_params(theta)?;
    let (f, jac) = rhs_and_jacobian(config, t, &xhat, &p)?;

    let mut contrib = 0.0;
    for i in 0..n {
        let r = xdot[i] - f[i];
        contrib += r * r;
        // ∂(scale·|r|²)/∂ẋ̂ᵢ
        ws.nt_adj[i] = 2.0 * scale * r;
    }
    for j in 0..n {
        // ∂/∂x̂ⱼ = −Σᵢ r̄ᵢ ∂fᵢ/∂x̂ⱼ
        let xhat_adj: f64 = -(0..n).map(|i| ws.nt_adj[i] * jac[i * n + j]).sum::<f64>();
        let xdot_adj = ws.nt_adj[j];
        ws.n_adj[j] = a * xhat_adj + da * xdot_adj;
    }
    for v in &mut ws.nt_adj {
        *v *= a;
    }
    ws.pass.backward(params, &ws.n_adj, &ws.nt_adj, grad);
    Ok(scale * contrib)
}

fn check_batch(params: &NetworkParams, config: &BundleConfig, batch: &Batch) -> Result<()> {
    if params.spec().input_dim != config.input_dim() {
        return Err(Error::Dimension {
            context: "network input width vs bundle domain",
            expected: config.input_dim(),
            got: params.spec().input_dim,
        });
    }
    if batch.state_dim != config.state_dim() || batch.free_dim != config.free_dim() {
        return Err(Error::Dimension {
            context: "batch layout",
            expected: config.input_dim(),
            got: 1 + batch.state_dim + batch.free_dim,
        });
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    Ok(())
}

/// Per-point weights `b(tᵢ)` for decay rate `λ`.
pub fn time_weights(config: &BundleConfig, batch: &Batch, lambda: f64) -> Vec<f64> {
    batch
        .t
        .iter()
        .map(|&t| weight(lambda, t, config.t0))
        .collect()
}

/// Loss and weight gradient using the fused dense-layer pass, parallel over
/// fixed-size chunks of the batch.
pub fn loss_and_gradient(
    params: &NetworkParams,
    config: &BundleConfig,
    batch: &Batch,
    lambda: f64,
) -> Result<LossGradient> {
    weighted_loss_and_gradient(params, config, batch, &time_weights(config, batch, lambda))
}

/// As [`loss_and_gradient`] with explicit per-point weights.
pub fn weighted_loss_and_gradient(
    params: &NetworkParams,
    config: &BundleConfig,
    batch: &Batch,
    weights: &[f64],
) -> Result<LossGradient> {
    check_batch(params, config, batch)?;
    if weights.len() != batch.len() {
        return Err(Error::Dimension {
            context: "loss weights",
            expected: batch.len(),
            got: weights.len(),
        });
    }
    let encoder = InputEncoder::new(config);
    let inv = 1.0 / batch.len() as f64;
    let chunks = batch.len().div_ceil(CHUNK);
    let partials: Vec<Result<(f64, Vec<f64>)>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut ws = Workspace::new(params, &encoder);
            let mut grad = vec![0.0; params.len()];
            let mut loss = 0.0;
            for i in c * CHUNK..((c + 1) * CHUNK).min(batch.len()) {
                let s = batch.get(i);
                loss += point(
                    &mut ws,
                    params,
                    config,
                    &encoder,
                    s.t,
                    s.x0,
                    s.theta,
                    weights[i] * inv,
                    &mut grad,
                )?;
            }
            Ok((loss, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut gradient = vec![0.0; params.len()];
    for part in partials {
        let (l, g) = part?;
        loss += l;
        for (acc, v) in gradient.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("loss = {loss}")));
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    Ok(LossGradient { loss, gradient })
}

/// Loss value alone, through the generic forward-mode evaluation path.
pub fn loss_value(
    params: &NetworkParams,
    config: &BundleConfig,
    batch: &Batch,
    lambda: f64,
) -> Result<f64> {
    check_batch(params, config, batch)?;
    let encoder = InputEncoder::new(config);
    let mut total = 0.0;
    for i in 0..batch.len() {
        let s = batch.get(i);
        let td = Dual::variable(s.t);
        let x0: Vec<Dual> = s.x0.iter().map(|&v| Dual::constant(v)).collect();
        let th: Vec<Dual> = s.theta.iter().map(|&v| Dual::constant(v)).collect();
        let input = encoder.encode_scalar(td, &x0, &th);
        let net = params.forward_scalar(&input)?;
        let a = a_value(config.a_kind, s.t, config.t0);
        let da = a_derivative(config.a_kind, s.t, config.t0);
        let xhat: Vec<f64> = s.x0.iter().zip(&net).map(|(&x, o)| x + a * o.re).collect();
        let xdot: Vec<f64> = net.iter().map(|o| da * o.re + a * o.eps).collect();
        let p = config.full_params(s.theta)?;
        let r = config.system.residual(&xhat, &xdot, s.t, &p)?;
        total += weight(lambda, s.t, config.t0) * r.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Loss and gradient with the whole computation recorded on one tape: the
/// time derivative comes from the forward tangent and the weight gradient
/// from a reverse sweep over it. Slow; used to cross-check the fused path.
pub fn taped_loss_gradient(
    params: &NetworkParams,
    config: &BundleConfig,
    batch: &Batch,
    lambda: f64,
) -> Result<LossGradient> {
    check_batch(params, config, batch)?;
    let encoder = InputEncoder::new(config);
    let tape = Tape::new();
    let weights: Vec<Var> = params.values().iter().map(|&w| tape.leaf(w)).collect();
    let inv = 1.0 / batch.len() as f64;
    let mut total = tape.constant(0.0);
    for i in 0..batch.len() {
        let s = batch.get(i);
        let t = tape.leaf_with_tangent(s.t, 1.0);
        let x0: Vec<Var> = s.x0.iter().map(|&v| tape.constant(v)).collect();
        let th: Vec<Var> = s.theta.iter().map(|&v| tape.constant(v)).collect();
        let input = encoder.encode_scalar(t, &x0, &th);
        let net = forward_generic(params.layers(), params.spec().input_dim, &weights, &input);
        let a = a_scalar(config.a_kind, t, config.t0);
        let xhat: Vec<Var> = x0.iter().zip(&net).map(|(&x, &o)| x + a * o).collect();
        let xdot: Vec<Var> = xhat.iter().map(|v| v.tangent()).collect();
        let p = config.full_params_scalar(&th, t)?;
        let r = config.system.residual(&xhat, &xdot, t, &p)?;
        let mut sq = r[0] * r[0];
        for v in &r[1..] {
            sq = sq + *v * *v;
        }
        total = total + sq * (weight(lambda, s.t, config.t0) * inv);
    }
    tape.check()?;
    let g = tape.gradient(total);
    Ok(LossGradient {
        loss: total.primal(),
        gradient: g.entries[..params.len()].to_vec(),
    })
}
