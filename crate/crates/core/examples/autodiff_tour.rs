//! Forward tangents, reverse gradients, and the two combined.
//!
//! Run with:
//!
//! ```not_rust
//! cargo run --release --example autodiff_tour
//! ```

use odebundle::ad::{eval_dual, reverse_gradient, Scalar, Tape};

fn main() {
    // Forward mode: d/dt [sin(2t)·e^{−t}] at t = 0.3.
    let t = 0.3;
    let d = eval_dual(&[t], 0, |v| (v[0] * 2.0).sin() * (-v[0]).exp()).unwrap();
    let exact = (2.0 * (2.0 * t).cos() - (2.0 * t).sin()) * (-t).exp();
    println!(
        "forward:  f = {:.12}  f' = {:.12}  (closed form {exact:.12})",
        d.primal, d.tangent
    );

    // Reverse mode: gradient of tanh(w·x + b) with respect to every leaf.
    let tape = Tape::new();
    let (w, x, b) = (tape.leaf(0.7), tape.leaf(-1.2), tape.leaf(0.1));
    let y = (w * x + b).tanh();
    let g = reverse_gradient(&tape, y);
    let sech2 = 1.0 - y.primal().powi(2);
    println!(
        "reverse:  dy/dw = {:.12} (x·sech² = {:.12}), dy/dx = {:.12}, dy/db = {:.12}",
        g.entries[0],
        -1.2 * sech2,
        g.entries[1],
        g.entries[2]
    );

    // Forward-over-reverse: the loss contains ∂u/∂t, and we want its
    // gradient with respect to the weight. Seed the time leaf's tangent,
    // build the loss from u's tangent, then sweep backwards once.
    let target = 0.4;
    let loss_at = |w0: f64| {
        let tape = Tape::new();
        let t = tape.leaf_with_tangent(0.5, 1.0);
        let w = tape.leaf(w0);
        let u = (w * t).tanh();
        let loss = (u.tangent() - target).square();
        (loss.primal(), reverse_gradient(&tape, loss).entries[1])
    };
    let (loss, grad) = loss_at(1.3);
    let h = 1e-6;
    let fd = (loss_at(1.3 + h).0 - loss_at(1.3 - h).0) / (2.0 * h);
    println!("fwd-rev:  L = {loss:.12}  dL/dw = {grad:.12}  (central difference {fd:.12})");
}
