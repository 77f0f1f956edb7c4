//! Dense tanh networks `N: ℝ^(1+n+p) → ℝⁿ` with a linear output layer.
//!
//! Parameters are stored flat: layer by layer, each layer's weight matrix
//! (out × in, row-major) followed by its bias vector. With skip connections
//! every layer after the first sees `[previous activations, raw input]`.

use std::ops::{Add, Mul};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ad::Scalar;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    #[serde(default)]
    pub skip_connections: bool,
}

/// Shape and offset of one dense layer inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.weight_count()
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.fan_out
    }
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden,
            output_dim,
            skip_connections: false,
        }
    }

    pub fn with_skip_connections(mut self, on: bool) -> Self {
        self.skip_connections = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::config(
                "network",
                "input and output widths must be at least 1",
            ));
        }
        if self.hidden.iter().any(|&w| w == 0) {
            return Err(Error::config(
                "network.hidden",
                "hidden widths must be at least 1",
            ));
        }
        Ok(())
    }

    /// All layers including the output layer.
    pub fn layers(&self) -> Vec<LayerShape> {
        let mut out = Vec::with_capacity(self.hidden.len() + 1);
        let mut offset = 0;
        let mut prev = self.input_dim;
        for (i, &w) in self
            .hidden
            .iter()
            .chain(std::iter::once(&self.output_dim))
            .enumerate()
        {
            let fan_in = if i > 0 && self.skip_connections {
                prev + self.input_dim
            } else {
                prev
            };
            let shape = LayerShape {
                fan_in,
                fan_out: w,
                offset,
            };
            offset += shape.param_count();
            out.push(shape);
            prev = w;
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerShape::param_count).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    spec: NetworkSpec,
    layers: Vec<LayerShape>,
    values: Vec<f64>,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; spec.param_count()];
        for layer in spec.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            for w in &mut values[layer.offset..layer.bias_offset()] {
                *w = dist.sample(&mut rng);
            }
        }
        Self::from_values(spec.clone(), values)
    }

    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        Self::from_values(spec.clone(), vec![0.0; spec.param_count()])
    }

    pub fn from_values(spec: NetworkSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count();
        if values.len() != expected {
            return Err(Error::Dimension {
                context: "network parameters",
                expected,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network parameter {i}")));
        }
        Ok(Self {
            layers: spec.layers(),
            spec,
            values,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        Ok(forward_generic(
            &self.layers,
            self.spec.input_dim,
            &self.values,
            input,
        ))
    }

    /// Forward pass over any scalar type with `f64` weights.
    pub fn forward_scalar<S>(&self, input: &[S]) -> Result<Vec<S>>
    where
        S: Scalar + Mul<f64, Output = S> + Add<f64, Output = S>,
    {
        self.check_input(input.len())?;
        Ok(forward_generic(
            &self.layers,
            self.spec.input_dim,
            &self.values,
            input,
        ))
    }

    pub(crate) fn check_input(&self, got: usize) -> Result<()> {
        if got != self.spec.input_dim {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.spec.input_dim,
                got,
            });
        }
        Ok(())
    }
}

/// Forward pass where the weights themselves may be recorded values
/// (e.g. tape leaves), so the same code serves evaluation and reverse mode.
pub fn forward_generic<S, W>(
    layers: &[LayerShape],
    input_dim: usize,
    weights: &[W],
    input: &[S],
) -> Vec<S>
where
    S: Scalar + Mul<W, Output = S> + Add<W, Output = S>,
    W: Copy,
{
    debug_assert_eq!(input.len(), input_dim);
    let mut x: Vec<S> = input.to_vec();
    let last = layers.len() - 1;
    for (l, layer) in layers.iter().enumerate() {
        let mut z = Vec::with_capacity(layer.fan_out);
        for i in 0..layer.fan_out {
            let row = layer.offset + i * layer.fan_in;
            let mut acc = x[0] * weights[row];
            for j in 1..layer.fan_in {
                acc = acc + x[j] * weights[row + j];
            }
            z.push(acc + weights[layer.bias_offset() + i]);
        }
        if l < last {
            for v in &mut z {
                *v = v.tanh();
            }
            if layers[l + 1].fan_in > layer.fan_out {
                z.extend_from_slice(input);
            }
        }
        x = z;
    }
    x
}

/// Scratch buffers for a forward pass that carries one input tangent and a
/// matching reverse pass with adjoints on both channels.
///
/// For a hidden layer `a = tanh(z)`, `ȧ = (1 − a²) ż`; the reverse pass uses
/// `z̄ = (1 − a²)(ā − 2 a ż ǡ)` and `ż̄ = (1 − a²) ǡ`.
#[derive(Clone, Debug)]
pub struct DualPass {
    /// Input (and its tangent) seen by each layer.
    inputs: Vec<Vec<f64>>,
    input_tangents: Vec<Vec<f64>>,
    /// Hidden activations and pre-activation tangents.
    acts: Vec<Vec<f64>>,
    pre_tangents: Vec<Vec<f64>>,
    output: Vec<f64>,
    output_tangent: Vec<f64>,
    adj: Vec<f64>,
    adj_t: Vec<f64>,
    next_adj: Vec<f64>,
    next_adj_t: Vec<f64>,
}

impl DualPass {
    pub fn new(spec: &NetworkSpec) -> Self {
        let layers = spec.layers();
        let widest = layers
            .iter()
            .map(|l| l.fan_in.max(l.fan_out))
            .max()
            .unwrap_or(1);
        Self {
            inputs: layers.iter().map(|l| vec![0.0; l.fan_in]).collect(),
            input_tangents: layers.iter().map(|l| vec![0.0; l.fan_in]).collect(),
            acts: spec.hidden.iter().map(|&w| vec![0.0; w]).collect(),
            pre_tangents: spec.hidden.iter().map(|&w| vec![0.0; w]).collect(),
            output: vec![0.0; spec.output_dim],
            output_tangent: vec![0.0; spec.output_dim],
            adj: vec![0.0; widest],
            adj_t: vec![0.0; widest],
            next_adj: vec![0.0; widest],
            next_adj_t: vec![0.0; widest],
        }
    }

    /// Returns `(N, dN/ds)` where `s` is the direction given by `input_tangent`.
    pub fn forward(
        &mut self,
        params: &NetworkParams,
        input: &[f64],
        input_tangent: &[f64],
    ) -> (&[f64], &[f64]) {
        let layers = params.layers();
        let w = params.values();
        let last = layers.len() - 1;
        self.inputs[0].copy_from_slice(input);
        self.input_tangents[0].copy_from_slice(input_tangent);
        for (l, layer) in layers.iter().enumerate() {
            let x = &self.inputs[l];
            let xt = &self.input_tangents[l];
            let bias = &w[layer.bias_offset()..layer.bias_offset() + layer.fan_out];
            let (out, out_t): (&mut [f64], &mut [f64]) = if l < last {
                (&mut self.acts[l], &mut self.pre_tangents[l])
            } else {
                (&mut self.output, &mut self.output_tangent)
            };
            for i in 0..layer.fan_out {
                let row =
                    &w[layer.offset + i * layer.fan_in..layer.offset + (i + 1) * layer.fan_in];
                let mut acc = x[0] * row[0];
                let mut acc_t = xt[0] * row[0];
                for j in 1..layer.fan_in {
                    acc += x[j] * row[j];
                    acc_t += xt[j] * row[j];
                }
                out[i] = acc + bias[i];
                out_t[i] = acc_t;
            }
            if l < last {
                let h = layer.fan_out;
                let (next_in, next_t) = (&mut self.inputs[l + 1], &mut self.input_tangents[l + 1]);
                for i in 0..h {
                    let a = self.acts[l][i].tanh();
                    self.acts[l][i] = a;
                    next_in[i] = a;
                    next_t[i] = (1.0 - a * a) * self.pre_tangents[l][i];
                }
                if next_in.len() > h {
                    next_in[h..].copy_from_slice(input);
                    next_t[h..].copy_from_slice(input_tangent);
                }
            }
        }
        (&self.output, &self.output_tangent)
    }

    /// Accumulate into `grad` the weight gradient of a scalar whose
    /// adjoints with respect to `N` and `dN/ds` are `out_adj`, `out_tan_adj`.
    /// Must follow a [`forward`](Self::forward) call with the same parameters.
    pub fn backward(
        &mut self,
        params: &NetworkParams,
        out_adj: &[f64],
        out_tan_adj: &[f64],
        grad: &mut [f64],
    ) {
        let layers = params.layers();
        let w = params.values();
        let last = layers.len() - 1;
        self.adj[..out_adj.len()].copy_from_slice(out_adj);
        self.adj_t[..out_tan_adj.len()].copy_from_slice(out_tan_adj);
        for l in (0..=last).rev() {
            let layer = layers[l];
            let (n_in, n_out) = (layer.fan_in, layer.fan_out);
            if l < last {
                // through tanh: adj holds (ā, ǡ) of the activations
                let a = &self.acts[l];
                let zt = &self.pre_tangents[l];
                for i in 0..n_out {
                    let s = 1.0 - a[i] * a[i];
                    let ab = self.adj[i];
                    let atb = self.adj_t[i];
                    self.adj[i] = s * (ab - 2.0 * a[i] * zt[i] * atb);
                    self.adj_t[i] = s * atb;
                }
            }
            let x = &self.inputs[l];
            let xt = &self.input_tangents[l];
            let need_input_adj = l > 0;
            if need_input_adj {
                self.next_adj[..n_in].fill(0.0);
                self.next_adj_t[..n_in].fill(0.0);
            }
            for i in 0..n_out {
                let zb = self.adj[i];
                let ztb = self.adj_t[i];
                let row_off = layer.offset + i * n_in;
                let g = &mut grad[row_off..row_off + n_in];
                for j in 0..n_in {
                    g[j] += zb * x[j] + ztb * xt[j];
                }
                grad[layer.bias_offset() + i] += zb;
                if need_input_adj {
                    let row = &w[row_off..row_off + n_in];
                    for j in 0..n_in {
                        self.next_adj[j] += row[j] * zb;
                        self.next_adj_t[j] += row[j] * ztb;
                    }
                }
            }
            if need_input_adj {
                // only the previous-activation block propagates further
                let h = layers[l - 1].fan_out;
                self.adj[..h].copy_from_slice(&self.next_adj[..h]);
                self.adj_t[..h].copy_from_slice(&self.next_adj_t[..h]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad::{Dual, Tape};

    #[test]
    fn parameter_count_small() {
        let spec = NetworkSpec::new(3, vec![4, 4], 2);
        assert_eq!(spec.param_count(), (3 * 4 + 4) + (4 * 4 + 4) + (4 * 2 + 2));
        assert_eq!(spec.param_count(), 46);
    }

    #[test]
    fn parameter_count_with_skip() {
        let spec = NetworkSpec::new(7, vec![121; 8], 2).with_skip_connections(true);
        let expected = (7 * 121 + 121) + 7 * ((128 * 121) + 121) + (128 * 2 + 2);
        assert_eq!(spec.param_count(), expected);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = NetworkSpec::new(4, vec![16, 16], 2);
        let a = NetworkParams::init(&spec, 42).unwrap();
        let b = NetworkParams::init(&spec, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, NetworkParams::init(&spec, 43).unwrap());
        for layer in a.layers() {
            let limit = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            assert!(a.values()[layer.offset..layer.bias_offset()]
                .iter()
                .all(|w| w.abs() <= limit));
            assert!(
                a.values()[layer.bias_offset()..layer.offset + layer.param_count()]
                    .iter()
                    .all(|&b| b == 0.0)
            );
        }
    }

    #[test]
    fn glorot_layer_mean_is_centered() {
        let spec = NetworkSpec::new(128, vec![128], 1);
        let p = NetworkParams::init(&spec, 9).unwrap();
        let layer = p.layers()[0];
        let w = &p.values()[layer.offset..layer.bias_offset()];
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        // Var of U(-L, L) is L²/3
        let limit = (6.0 / 256.0f64).sqrt();
        let std_err = (limit * limit / 3.0 / n).sqrt();
        assert!(mean.abs() < 3.0 * std_err, "mean {mean}, se {std_err}");
    }

    #[test]
    fn zero_params_give_zero_output() {
        let spec = NetworkSpec::new(3, vec![5, 5], 2);
        let p = NetworkParams::zeros(&spec).unwrap();
        assert_eq!(p.forward(&[0.3, -2.0, 7.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_layer_selects_inputs() {
        let spec = NetworkSpec::new(3, vec![], 2);
        // rows pick inputs 1 and 2
        let values = vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let p = NetworkParams::from_values(spec, values).unwrap();
        assert_eq!(p.forward(&[0.5, 0.25, -0.75]).unwrap(), vec![0.25, -0.75]);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = NetworkSpec::new(3, vec![4], 2);
        let p = NetworkParams::zeros(&spec).unwrap();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Dimension { .. })));
        assert!(NetworkParams::from_values(spec, vec![0.0; 3]).is_err());
    }

    #[test]
    fn skip_with_zero_hidden_weights_is_affine_in_input() {
        let spec = NetworkSpec::new(3, vec![4, 4], 2).with_skip_connections(true);
        let mut p = NetworkParams::init(&spec, 1).unwrap();
        let layers = p.layers().to_vec();
        for l in &layers[..2] {
            p.values_mut()[l.offset..l.offset + l.param_count()].fill(0.0);
        }
        let out = layers[2];
        let v = p.values().to_vec();
        let x = [0.2, -0.4, 0.9];
        let y = p.forward(&x).unwrap();
        for i in 0..2 {
            let row = &v[out.offset + i * out.fan_in..out.offset + (i + 1) * out.fan_in];
            // the first 4 columns see tanh(0) = 0
            let expected: f64 = row[4..].iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>()
                + v[out.bias_offset() + i];
            assert!((y[i] - expected).abs() < 1e-15);
        }
    }

    fn tangent_fd(p: &NetworkParams, x: &[f64], dir: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let xp: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
        let xm: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
        let yp = p.forward(&xp).unwrap();
        let ym = p.forward(&xm).unwrap();
        yp.iter()
            .zip(ym)
            .map(|(a, b)| (a - b) / (2.0 * h))
            .collect()
    }

    #[test]
    fn dual_pass_matches_plain_forward_and_dual_numbers() {
        for skip in [false, true] {
            let spec = NetworkSpec::new(4, vec![6, 5], 3).with_skip_connections(skip);
            let p = NetworkParams::init(&spec, 3).unwrap();
            let x = [0.4, -0.2, 0.7, 1.1];
            let dir = [1.0, 0.0, 0.0, 0.0];
            let mut pass = DualPass::new(&spec);
            let (y, yt) = pass.forward(&p, &x, &dir);
            let plain = p.forward(&x).unwrap();
            assert_eq!(y, plain.as_slice());
            let xd: Vec<Dual> = x.iter().zip(dir).map(|(&a, d)| Dual::new(a, d)).collect();
            let yd = p.forward_scalar(&xd).unwrap();
            let fd = tangent_fd(&p, &x, &dir);
            for i in 0..3 {
                assert!((yt[i] - yd[i].eps).abs() < 1e-14);
                assert!((yt[i] - fd[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dual_pass_backward_matches_tape() {
        for skip in [false, true] {
            let spec = NetworkSpec::new(3, vec![5, 4], 2).with_skip_connections(skip);
            let p = NetworkParams::init(&spec, 8).unwrap();
            let x = [0.3, 0.9, -0.5];
            let dir = [1.0, 0.0, 0.0];
            // scalar = Σ c_i N_i + Σ d_i dN_i/dt
            let c = [0.7, -1.3];
            let d = [2.1, 0.4];

            let mut pass = DualPass::new(&spec);
            pass.forward(&p, &x, &dir);
            let mut grad = vec![0.0; p.len()];
            pass.backward(&p, &c, &d, &mut grad);

            let tape = Tape::new();
            let wv: Vec<_> = p.values().iter().map(|&w| tape.leaf(w)).collect();
            let xv: Vec<_> = x
                .iter()
                .zip(dir)
                .map(|(&a, t)| tape.constant(a) + tape.leaf_with_tangent(0.0, t))
                .collect();
            let y = forward_generic(p.layers(), 3, &wv, &xv);
            let mut s = y[0] * c[0];
            s = s + y[1] * c[1] + y[0].tangent() * d[0] + y[1].tangent() * d[1];
            let g = tape.gradient(s);
            for (k, (a, b)) in grad.iter().zip(&g.entries[..p.len()]).enumerate() {
                assert!(
                    (a - b).abs() <= 1e-12 * b.abs().max(1.0),
                    "skip={skip} param {k}: {a} vs {b}"
                );
            }
        }
    }
}
