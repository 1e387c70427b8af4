//! Reverse-mode automatic differentiation on a flat tape.
//!
//! The planning formulas are written once against the [`Real`] trait and run
//! either on plain `f64` (fast, value-only) or on [`Var`] handles that record
//! every operation on a [`Tape`]. A single backward sweep then yields exact
//! gradients of a scalar output with respect to the tape inputs — including
//! through iterative procedures such as the SLPG correction, whose internal
//! linearizations are themselves recorded.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by value-only and recorded evaluation.
///
/// Constants enter expressions either via the `f64` operator overloads or
/// through [`Real::constant_like`], which ties a fresh constant to the same
/// tape as an existing value.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// Current numeric value.
    fn value(self) -> f64;
    /// Constant `c` attached to the same tape as `self` (plain `c` for `f64`).
    fn constant_like(self, c: f64) -> Self;
    /// Sine.
    fn sin(self) -> Self;
    /// Cosine.
    fn cos(self) -> Self;
    /// Tangent.
    fn tan(self) -> Self;
    /// Absolute value (derivative 0 at the kink).
    fn abs(self) -> Self;
    /// `max(0, x)` (derivative 0 at the kink).
    fn relu(self) -> Self;
    /// Clamp into `[lo, hi]`; gradient passes through inside the interval
    /// (boundaries included) and is zero outside.
    fn clamp_box(self, lo: f64, hi: f64) -> Self;
    /// Square.
    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn constant_like(self, c: f64) -> Self {
        c
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn relu(self) -> Self {
        self.max(0.0)
    }
    fn clamp_box(self, lo: f64, hi: f64) -> Self {
        self.clamp(lo, hi)
    }
}

/// Sentinel parent index meaning "no parent".
const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    /// Local partial derivatives with respect to the two parents.
    weight: [f64; 2],
    /// Tape indices of the parents (`NONE` when absent).
    parent: [u32; 2],
    /// Forward value.
    value: f64,
}

/// Operation record for one reverse-mode pass.
///
/// Create inputs with [`Tape::input`], build the computation with [`Var`]
/// arithmetic, then call [`Tape::gradient`] on the scalar output.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    /// Empty tape.
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an independent input variable.
    pub fn input(&self, value: f64) -> Var<'_> {
        self.push(Node { weight: [0.0, 0.0], parent: [NONE, NONE], value })
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    /// True when nothing has been recorded.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adjoints of every node with respect to `output`, via one reverse sweep.
    pub fn gradient(&self, output: Var<'_>) -> Adjoints {
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.index as usize] = 1.0;
        for i in (0..=output.index as usize).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = &nodes[i];
            for s in 0..2 {
                if node.parent[s] != NONE {
                    adjoint[node.parent[s] as usize] += node.weight[s] * a;
                }
            }
        }
        Adjoints(adjoint)
    }

    fn push(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        assert!(index < NONE as usize, "tape overflow");
        nodes.push(node);
        Var { tape: self, index: index as u32 }
    }
}

/// Per-node derivative values produced by [`Tape::gradient`].
pub struct Adjoints(Vec<f64>);

impl Adjoints {
    /// Derivative of the output with respect to `v`.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.0[v.index as usize]
    }
}

/// Handle to one tape node; cheap to copy, borrows the tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
}

impl<'t> Var<'t> {
    fn node(self, value: f64, parent: [Var<'t>; 2], weight: [f64; 2]) -> Var<'t> {
        self.tape.push(Node {
            weight,
            parent: [parent[0].index, parent[1].index],
            value,
        })
    }

    fn unary(self, value: f64, weight: f64) -> Var<'t> {
        self.tape.push(Node {
            weight: [weight, 0.0],
            parent: [self.index, NONE],
            value,
        })
    }
}

impl Real for Var<'_> {
    fn value(self) -> f64 {
        self.tape.nodes.borrow()[self.index as usize].value
    }
    fn constant_like(self, c: f64) -> Self {
        self.unary(c, 0.0)
    }
    fn sin(self) -> Self {
        let v = self.value();
        self.unary(v.sin(), v.cos())
    }
    fn cos(self) -> Self {
        let v = self.value();
        self.unary(v.cos(), -v.sin())
    }
    fn tan(self) -> Self {
        let t = self.value().tan();
        self.unary(t, 1.0 + t * t)
    }
    fn abs(self) -> Self {
        let v = self.value();
        self.unary(v.abs(), if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
    }
    fn relu(self) -> Self {
        let v = self.value();
        self.unary(v.max(0.0), if v > 0.0 { 1.0 } else { 0.0 })
    }
    fn clamp_box(self, lo: f64, hi: f64) -> Self {
        let v = self.value();
        let inside = lo <= v && v <= hi;
        self.unary(v.clamp(lo, hi), if inside { 1.0 } else { 0.0 })
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self::Output {
        self.node(self.value() + rhs.value(), [self, rhs], [1.0, 1.0])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self::Output {
        self.node(self.value() - rhs.value(), [self, rhs], [1.0, -1.0])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self::Output {
        let (a, b) = (self.value(), rhs.value());
        self.node(a * b, [self, rhs], [b, a])
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self::Output {
        let (a, b) = (self.value(), rhs.value());
        self.node(a / b, [self, rhs], [1.0 / b, -a / (b * b)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self::Output {
        self.unary(-self.value(), -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self::Output {
        self.unary(self.value() + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self::Output {
        self.unary(self.value() - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self::Output {
        self.unary(self.value() * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self::Output {
        self.unary(self.value() / rhs, 1.0 / rhs)
    }
}
