//! Recorded scalar computations with a forward tangent on every node.
//!
//! Each node stores its primal value and its derivative along one seeded
//! direction (normally the time input). The reverse sweep carries two
//! adjoints per node, one for the primal channel and one for the tangent
//! channel, so a loss built from tangents (via [`Var::tangent`]) can be
//! differentiated with respect to every leaf.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{AdError, Scalar};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Op {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    Div,
    Max,
    Neg,
    AddConst(f64),
    MulConst(f64),
    DivConst(f64),
    PowConst(f64),
    PowI(i32),
    Exp,
    Tanh,
    Sin,
    Cos,
    Sqrt,
    Abs,
    /// Primal of this node is the tangent of its operand.
    Tangent,
}

#[derive(Clone, Copy, Debug)]
struct Node {
    op: Op,
    args: [u32; 2],
    primal: f64,
    tangent: f64,
    /// First partials with respect to each operand.
    partials: [f64; 2],
}

/// Ordered list of elementary operations. Operands always precede the node
/// that consumes them.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    leaves: RefCell<Vec<u32>>,
    error: Cell<Option<AdError>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
}

/// Primal and tangent of a scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualValue {
    pub primal: f64,
    pub tangent: f64,
}

/// Derivative of a scalar output with respect to each leaf, in leaf order.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub entries: Vec<f64>,
}

impl GradientVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Adjoints of both channels for every node, indexed by node.
#[derive(Clone, Debug)]
pub struct Adjoints {
    pub primal: Vec<f64>,
    pub tangent: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
            ..Self::default()
        }
    }

    /// Drop all nodes, keeping the allocation.
    pub fn clear(&self) {
        self.nodes.borrow_mut().clear();
        self.leaves.borrow_mut().clear();
        self.error.set(None);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.borrow().len()
    }

    /// Node index of leaf `k`.
    pub fn leaf_node(&self, k: usize) -> usize {
        self.leaves.borrow()[k] as usize
    }

    /// First domain error recorded while building, if any.
    pub fn error(&self) -> Option<AdError> {
        self.error.get()
    }

    pub fn check(&self) -> Result<(), AdError> {
        match self.error.get() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// New independent input with zero tangent.
    pub fn leaf(&self, value: f64) -> Var<'_> {
        self.leaf_with_tangent(value, 0.0)
    }

    pub fn leaf_with_tangent(&self, value: f64, tangent: f64) -> Var<'_> {
        let v = self.push(Op::Leaf, [0, 0], value, tangent, [0.0, 0.0]);
        self.leaves.borrow_mut().push(v.idx);
        v
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Const, [0, 0], value, 0.0, [0.0, 0.0])
    }

    fn push(
        &self,
        op: Op,
        args: [u32; 2],
        primal: f64,
        tangent: f64,
        partials: [f64; 2],
    ) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let idx = u32::try_from(nodes.len()).expect("tape exceeds u32 nodes");
        nodes.push(Node {
            op,
            args,
            primal,
            tangent,
            partials,
        });
        Var { tape: self, idx }
    }

    fn fail(&self, e: AdError) {
        if self.error.get().is_none() {
            self.error.set(Some(e));
        }
    }

    fn node(&self, idx: u32) -> Node {
        self.nodes.borrow()[idx as usize]
    }

    fn unary(&self, a: u32, op: Op) -> Var<'_> {
        let x = self.node(a);
        let (p, d) = match op {
            Op::Neg => (-x.primal, -1.0),
            Op::AddConst(c) => (x.primal + c, 1.0),
            Op::MulConst(c) => (x.primal * c, c),
            Op::DivConst(c) => {
                if c == 0.0 {
                    self.fail(AdError::DivisionByZero);
                }
                (x.primal / c, 1.0 / c)
            }
            Op::PowConst(c) => {
                if x.primal < 0.0 && c.fract() != 0.0 {
                    self.fail(AdError::NegativeBasePow);
                }
                (x.primal.powf(c), c * x.primal.powf(c - 1.0))
            }
            Op::PowI(n) => (x.primal.powi(n), f64::from(n) * x.primal.powi(n - 1)),
            Op::Exp => {
                let e = x.primal.exp();
                (e, e)
            }
            Op::Tanh => {
                let t = x.primal.tanh();
                (t, 1.0 - t * t)
            }
            Op::Sin => (x.primal.sin(), x.primal.cos()),
            Op::Cos => (x.primal.cos(), -x.primal.sin()),
            Op::Sqrt => {
                if x.primal < 0.0 {
                    self.fail(AdError::NegativeSqrt);
                }
                let s = x.primal.sqrt();
                (s, 0.5 / s)
            }
            Op::Abs => (x.primal.abs(), sign(x.primal)),
            Op::Tangent => (x.tangent, 0.0),
            _ => unreachable!("not a unary op: {op:?}"),
        };
        // Second-order information in the seed direction is not tracked for
        // an extracted tangent.
        let tangent = if op == Op::Tangent {
            0.0
        } else {
            d * x.tangent
        };
        self.push(op, [a, a], p, tangent, [d, 0.0])
    }

    fn binary(&self, a: u32, b: u32, op: Op) -> Var<'_> {
        let x = self.node(a);
        let y = self.node(b);
        let (p, da, db) = match op {
            Op::Add => (x.primal + y.primal, 1.0, 1.0),
            Op::Sub => (x.primal - y.primal, 1.0, -1.0),
            Op::Mul => (x.primal * y.primal, y.primal, x.primal),
            Op::Div => {
                if y.primal == 0.0 {
                    self.fail(AdError::DivisionByZero);
                }
                let q = x.primal / y.primal;
                (q, 1.0 / y.primal, -q / y.primal)
            }
            Op::Max => {
                if x.primal >= y.primal {
                    (x.primal, 1.0, 0.0)
                } else {
                    (y.primal, 0.0, 1.0)
                }
            }
            _ => unreachable!("not a binary op: {op:?}"),
        };
        let t = da * x.tangent + db * y.tangent;
        self.push(op, [a, b], p, t, [da, db])
    }

    /// Primal and tangent of node `idx`.
    pub fn dual_of(&self, idx: usize) -> DualValue {
        let n = self.nodes.borrow()[idx];
        DualValue {
            primal: n.primal,
            tangent: n.tangent,
        }
    }

    /// Reverse sweep from `output` carrying both adjoint channels.
    pub fn adjoints(&self, output: Var<'_>) -> Adjoints {
        self.adjoints_seeded(&[(output.idx as usize, 1.0, 0.0)])
    }

    /// Reverse sweep with arbitrary seeds `(node, primal adjoint, tangent adjoint)`.
    pub fn adjoints_seeded(&self, seeds: &[(usize, f64, f64)]) -> Adjoints {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        let mut pa = vec![0.0; n];
        let mut ta = vec![0.0; n];
        let mut last = 0;
        for &(k, p, t) in seeds {
            pa[k] += p;
            ta[k] += t;
            last = last.max(k + 1);
        }
        for k in (0..last).rev() {
            let (zp, zt) = (pa[k], ta[k]);
            if zp == 0.0 && zt == 0.0 {
                continue;
            }
            let node = &nodes[k];
            let [a, b] = node.args;
            let (a, b) = (a as usize, b as usize);
            match node.op {
                Op::Leaf | Op::Const => {}
                Op::Tangent => ta[a] += zp,
                Op::Add | Op::Sub | Op::Max => {
                    let [da, db] = node.partials;
                    pa[a] += zp * da;
                    ta[a] += zt * da;
                    pa[b] += zp * db;
                    ta[b] += zt * db;
                }
                Op::Mul => {
                    let (x, y) = (&nodes[a], &nodes[b]);
                    pa[a] += zp * y.primal + zt * y.tangent;
                    ta[a] += zt * y.primal;
                    pa[b] += zp * x.primal + zt * x.tangent;
                    ta[b] += zt * x.primal;
                }
                Op::Div => {
                    let (x, y) = (&nodes[a], &nodes[b]);
                    let inv = 1.0 / y.primal;
                    let inv2 = inv * inv;
                    let [da, db] = node.partials;
                    // d²/da² = 0, d²/dadb = -1/b², d²/db² = 2a/b³
                    let hab = -inv2;
                    let hbb = 2.0 * x.primal * inv2 * inv;
                    pa[a] += zp * da + zt * (hab * y.tangent);
                    ta[a] += zt * da;
                    pa[b] += zp * db + zt * (hab * x.tangent + hbb * y.tangent);
                    ta[b] += zt * db;
                }
                op => {
                    let d1 = node.partials[0];
                    let x = &nodes[a];
                    let d2 = second_derivative(op, x.primal, node.primal);
                    pa[a] += zp * d1 + zt * d2 * x.tangent;
                    ta[a] += zt * d1;
                }
            }
        }
        Adjoints {
            primal: pa,
            tangent: ta,
        }
    }

    /// Gradient of `output` with respect to each leaf, in leaf order.
    pub fn gradient(&self, output: Var<'_>) -> GradientVector {
        let adj = self.adjoints(output);
        let leaves = self.leaves.borrow();
        GradientVector {
            entries: leaves.iter().map(|&i| adj.primal[i as usize]).collect(),
        }
    }

    /// Recompute every node from the leaf values without recording.
    ///
    /// Returns `(primal, tangent)` per node.
    pub fn replay(&self, leaf_primals: &[f64], leaf_tangents: &[f64]) -> Vec<DualValue> {
        let nodes = self.nodes.borrow();
        let mut out: Vec<DualValue> = Vec::with_capacity(nodes.len());
        let mut leaf = 0;
        for node in nodes.iter() {
            let [a, b] = node.args;
            let x = out.get(a as usize).copied();
            let y = out.get(b as usize).copied();
            let v = match node.op {
                Op::Leaf => {
                    let v = DualValue {
                        primal: leaf_primals[leaf],
                        tangent: leaf_tangents[leaf],
                    };
                    leaf += 1;
                    v
                }
                Op::Const => DualValue {
                    primal: node.primal,
                    tangent: 0.0,
                },
                op => replay_op(op, x.unwrap(), y.unwrap()),
            };
            out.push(v);
        }
        out
    }
}

fn replay_op(op: Op, x: DualValue, y: DualValue) -> DualValue {
    let dv = |primal: f64, tangent: f64| DualValue { primal, tangent };
    match op {
        Op::Add => dv(x.primal + y.primal, x.tangent + y.tangent),
        Op::Sub => dv(x.primal - y.primal, x.tangent - y.tangent),
        Op::Mul => dv(
            x.primal * y.primal,
            y.primal * x.tangent + x.primal * y.tangent,
        ),
        Op::Div => {
            let q = x.primal / y.primal;
            dv(q, 1.0 / y.primal * x.tangent + (-q / y.primal) * y.tangent)
        }
        Op::Max => {
            if x.primal >= y.primal {
                dv(x.primal, 1.0 * x.tangent + 0.0 * y.tangent)
            } else {
                dv(y.primal, 0.0 * x.tangent + 1.0 * y.tangent)
            }
        }
        Op::Tangent => dv(x.tangent, 0.0),
        op => {
            let (p, d) = match op {
                Op::Neg => (-x.primal, -1.0),
                Op::AddConst(c) => (x.primal + c, 1.0),
                Op::MulConst(c) => (x.primal * c, c),
                Op::DivConst(c) => (x.primal / c, 1.0 / c),
                Op::PowConst(c) => (x.primal.powf(c), c * x.primal.powf(c - 1.0)),
                Op::PowI(n) => (x.primal.powi(n), f64::from(n) * x.primal.powi(n - 1)),
                Op::Exp => {
                    let e = x.primal.exp();
                    (e, e)
                }
                Op::Tanh => {
                    let t = x.primal.tanh();
                    (t, 1.0 - t * t)
                }
                Op::Sin => (x.primal.sin(), x.primal.cos()),
                Op::Cos => (x.primal.cos(), -x.primal.sin()),
                Op::Sqrt => {
                    let s = x.primal.sqrt();
                    (s, 0.5 / s)
                }
                Op::Abs => (x.primal.abs(), sign(x.primal)),
                _ => unreachable!(),
            };
            dv(p, d * x.tangent)
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// φ''(x) for unary op φ, given operand `x` and result `z = φ(x)`.
fn second_derivative(op: Op, x: f64, z: f64) -> f64 {
    match op {
        Op::Neg | Op::AddConst(_) | Op::MulConst(_) | Op::DivConst(_) | Op::Abs => 0.0,
        Op::PowConst(c) => c * (c - 1.0) * x.powf(c - 2.0),
        Op::PowI(n) => f64::from(n) * f64::from(n - 1) * x.powi(n - 2),
        Op::Exp => z,
        Op::Tanh => -2.0 * z * (1.0 - z * z),
        Op::Sin | Op::Cos => -z,
        Op::Sqrt => -0.25 / (z * z * z),
        _ => 0.0,
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn index(&self) -> usize {
        self.idx as usize
    }

    pub fn primal(&self) -> f64 {
        self.tape.node(self.idx).primal
    }

    pub fn tangent_value(&self) -> f64 {
        self.tape.node(self.idx).tangent
    }

    pub fn dual(&self) -> DualValue {
        self.tape.dual_of(self.idx as usize)
    }

    /// New node whose primal is this node's tangent. Losses built from it
    /// are differentiated through the tangent channel on the reverse sweep.
    pub fn tangent(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Tangent)
    }

    fn same_tape(&self, other: &Var<'t>) {
        debug_assert!(
            std::ptr::eq(self.tape, other.tape),
            "operands recorded on different tapes"
        );
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.same_tape(&rhs);
                self.tape.binary(self.idx, rhs.idx, $op)
            }
        }
    };
}

binop!(Add, add, Op::Add);
binop!(Sub, sub, Op::Sub);
binop!(Mul, mul, Op::Mul);
binop!(Div, div, Op::Div);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.unary(self.idx, Op::Neg)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::AddConst(rhs))
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::AddConst(-rhs))
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::MulConst(rhs))
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Var<'t> {
        self.tape.unary(self.idx, Op::DivConst(rhs))
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        rhs + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        (-rhs) + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        rhs * self
    }
}

impl<'t> Scalar for Var<'t> {
    fn value(&self) -> f64 {
        self.primal()
    }
    fn constant_like(&self, v: f64) -> Self {
        self.tape.constant(v)
    }
    fn exp(self) -> Self {
        self.tape.unary(self.idx, Op::Exp)
    }
    fn tanh(self) -> Self {
        self.tape.unary(self.idx, Op::Tanh)
    }
    fn sin(self) -> Self {
        self.tape.unary(self.idx, Op::Sin)
    }
    fn cos(self) -> Self {
        self.tape.unary(self.idx, Op::Cos)
    }
    fn sqrt(self) -> Self {
        self.tape.unary(self.idx, Op::Sqrt)
    }
    fn abs(self) -> Self {
        self.tape.unary(self.idx, Op::Abs)
    }
    fn powf(self, exponent: f64) -> Self {
        self.tape.unary(self.idx, Op::PowConst(exponent))
    }
    fn powi(self, exponent: i32) -> Self {
        self.tape.unary(self.idx, Op::PowI(exponent))
    }
    fn max(self, other: Self) -> Self {
        self.same_tape(&other);
        self.tape.binary(self.idx, other.idx, Op::Max)
    }
}

/// Evaluate `f` at `leaves` with the tangent seeded on leaf `seed`.
pub fn eval_dual<F>(leaves: &[f64], seed: usize, f: F) -> Result<DualValue, AdError>
where
    F: for<'t> FnOnce(&[Var<'t>]) -> Var<'t>,
{
    if seed >= leaves.len() {
        return Err(AdError::InvalidSeed {
            seed,
            leaves: leaves.len(),
        });
    }
    let tape = Tape::with_capacity(leaves.len() * 4);
    let vars: Vec<Var<'_>> = leaves
        .iter()
        .enumerate()
        .map(|(i, &v)| tape.leaf_with_tangent(v, if i == seed { 1.0 } else { 0.0 }))
        .collect();
    let out = f(&vars);
    tape.check()?;
    Ok(out.dual())
}

/// Gradient of `output` with respect to every leaf of `tape`.
pub fn reverse_gradient(tape: &Tape, output: Var<'_>) -> GradientVector {
    tape.gradient(output)
}
