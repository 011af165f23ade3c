//! Reverse-mode differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation of a forward pass as a node holding its
//! value. [`Tape::backward`] walks the nodes in reverse and accumulates the
//! adjoint of a scalar output with respect to every node that depends on a
//! trainable leaf. The op set is deliberately narrow: affine maps, a handful
//! of elementwise nonlinearities, column slicing/concatenation and sums. That
//! is enough for coupling flows, the adapter/discriminator model and the
//! regularized losses built on top of them.
//!
//! Values are `f64` row-major matrices. Batches are laid out as one sample per
//! row, so a per-sample loss is an `n x 1` column and a scalar is `1 x 1`.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiffError {
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
    #[error("shape mismatch in `{op}`: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("parameter `{0}` contains non-finite values")]
    NonFiniteParam(String),
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

pub type Result<T> = std::result::Result<T, DiffError>;

fn dims(m: &Mat) -> (usize, usize) {
    m.dim()
}

fn ensure_finite(op: &'static str, m: &Mat) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DiffError::NonFinite { op })
    }
}

/// Named collection of trainable real arrays.
///
/// Names are kept sorted so iteration order (and therefore every reduction
/// over the set) is deterministic.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(DiffError::DuplicateParam(name));
        }
        if !value.iter().all(|v| v.is_finite()) {
            return Err(DiffError::NonFiniteParam(name));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.entries
            .get(name)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    /// Overwrites the values of an existing entry. The shape must not change.
    pub fn set(&mut self, name: &str, value: Mat) -> Result<()> {
        let slot = self
            .entries
            .get_mut(name)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))?;
        if slot.dim() != value.dim() {
            return Err(DiffError::Shape {
                op: "set",
                left: slot.dim(),
                right: value.dim(),
            });
        }
        if !value.iter().all(|v| v.is_finite()) {
            return Err(DiffError::NonFiniteParam(name.to_string()));
        }
        *slot = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_dim(&self) -> usize {
        self.entries.values().map(|m| m.len()).sum()
    }

    /// Sum of squares over every scalar in the set.
    pub fn squared_norm(&self) -> f64 {
        self.entries.values().flat_map(|m| m.iter()).map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// `self - step * grad`, entry by entry.
    pub fn descend(&self, grad: &Gradient, step: f64) -> Result<ParamSet> {
        self.check_matches(grad)?;
        let entries = self
            .entries
            .iter()
            .map(|(name, value)| {
                let g = &grad.entries[name];
                (name.clone(), value - &(g * step))
            })
            .collect();
        Ok(ParamSet { entries })
    }

    pub fn check_matches(&self, grad: &Gradient) -> Result<()> {
        for (name, value) in &self.entries {
            let g = grad
                .entries
                .get(name)
                .ok_or_else(|| DiffError::UnknownParam(name.clone()))?;
            if g.dim() != value.dim() {
                return Err(DiffError::Shape {
                    op: "descend",
                    left: value.dim(),
                    right: g.dim(),
                });
            }
        }
        if let Some(extra) = grad.entries.keys().find(|k| !self.entries.contains_key(*k)) {
            return Err(DiffError::UnknownParam(extra.clone()));
        }
        Ok(())
    }

    fn perturbed(&self, name: &str, flat_index: usize, delta: f64) -> ParamSet {
        let mut out = self.clone();
        let m = out.entries.get_mut(name).expect("name taken from self");
        let cols = m.ncols();
        m[[flat_index / cols, flat_index % cols]] += delta;
        out
    }
}

/// Gradient of a scalar with respect to every entry of a [`ParamSet`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Gradient {
    entries: BTreeMap<String, Mat>,
}

impl Gradient {
    pub fn zeros_like(params: &ParamSet) -> Self {
        let entries = params
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), Mat::zeros(v.dim())))
            .collect();
        Gradient { entries }
    }

    /// Builds a gradient from raw arrays. Used when gradients come from
    /// somewhere other than a tape (tests, hand-written updates).
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Mat)>) -> Self {
        Gradient {
            entries: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Mat> {
        self.entries
            .get(name)
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn add_assign(&mut self, other: &Gradient) -> Result<()> {
        for (name, value) in self.entries.iter_mut() {
            let o = other.get(name)?;
            if o.dim() != value.dim() {
                return Err(DiffError::Shape {
                    op: "add_assign",
                    left: value.dim(),
                    right: o.dim(),
                });
            }
            *value += o;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for value in self.entries.values_mut() {
            value.mapv_inplace(|v| v * factor);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|m| m.iter())
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|m| m.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales so the norm is at most `max_norm`; returns whether it did.
    pub fn clip_norm(&mut self, max_norm: f64) -> bool {
        let n = self.norm();
        if n > max_norm && n.is_finite() {
            self.scale(max_norm / n);
            true
        } else {
            false
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Columns(Var, usize),
    ConcatCols(Var, Var),
    SumCols(Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

/// Parameter name to tape handle, produced by [`Tape::bind`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }
}

/// Recording of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // Sign pattern of every ReLU input, in recording order. Two evaluations
    // with different patterns lie on different linear pieces.
    relu_pattern: Vec<bool>,
    relu_at_kink: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        let m = self.value(v);
        if m.dim() != (1, 1) {
            return Err(DiffError::NotScalar(m.dim()));
        }
        Ok(m[[0, 0]])
    }

    /// True when some ReLU input was exactly zero, i.e. the evaluation sits
    /// on a kink where the derivative is not defined.
    pub fn touched_kink(&self) -> bool {
        self.relu_at_kink
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: &'static str, value: Mat, node_op: Op, requires_grad: bool) -> Result<Var> {
        ensure_finite(op, &value)?;
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Mat) -> Result<Var> {
        self.push("constant", value, Op::Constant, false)
    }

    pub fn param(&mut self, value: Mat) -> Result<Var> {
        self.push("param", value, Op::Param, true)
    }

    /// Puts every entry of `params` on the tape as a trainable leaf.
    pub fn bind(&mut self, params: &ParamSet) -> Result<ParamVars> {
        let mut vars = BTreeMap::new();
        for (name, value) in params.iter() {
            let v = self.param(value.clone())?;
            vars.insert(name.to_string(), v);
        }
        Ok(ParamVars { vars })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (da, db) = (dims(self.value(a)), dims(self.value(b)));
        if da != db {
            return Err(DiffError::Shape {
                op,
                left: da,
                right: db,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(DiffError::Shape {
                op: "matmul",
                left: va.dim(),
                right: vb.dim(),
            });
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    /// Adds a `1 x m` row to every row of an `n x m` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (vx, vr) = (self.value(x), self.value(row));
        if vr.nrows() != 1 || vr.ncols() != vx.ncols() {
            return Err(DiffError::Shape {
                op: "add_row",
                left: vx.dim(),
                right: vr.dim(),
            });
        }
        let out = vx + vr;
        let rg = self.rg(x) || self.rg(row);
        self.push("add_row", out, Op::AddRow(x, row), rg)
    }

    /// `x @ w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push("sub", out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x) * c;
        let rg = self.rg(x);
        self.push("scale", out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x) + c;
        let rg = self.rg(x);
        self.push("add_scalar", out, Op::AddScalar(x), rg)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(f64::tanh);
        let rg = self.rg(x);
        self.push("tanh", out, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        let mut at_kink = false;
        let mut pattern = Vec::with_capacity(vx.len());
        for &v in vx.iter() {
            at_kink |= v == 0.0;
            pattern.push(v > 0.0);
        }
        let out = vx.mapv(|v| v.max(0.0));
        self.relu_pattern.extend(pattern);
        self.relu_at_kink |= at_kink;
        let rg = self.rg(x);
        self.push("relu", out, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(f64::exp);
        let rg = self.rg(x);
        self.push("exp", out, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(f64::ln);
        let rg = self.rg(x);
        self.push("log", out, Op::Log(x), rg)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).mapv(|v| v * v);
        let rg = self.rg(x);
        self.push("square", out, Op::Square(x), rg)
    }

    /// Columns `start..end` of `x`.
    pub fn columns(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let vx = self.value(x);
        if start > end || end > vx.ncols() {
            return Err(DiffError::Shape {
                op: "columns",
                left: vx.dim(),
                right: (start, end),
            });
        }
        let out = vx.slice(s![.., start..end]).to_owned();
        let rg = self.rg(x);
        self.push("columns", out, Op::Columns(x, start), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.nrows() != vb.nrows() {
            return Err(DiffError::Shape {
                op: "concat_cols",
                left: va.dim(),
                right: vb.dim(),
            });
        }
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).expect("row counts checked");
        let rg = self.rg(a) || self.rg(b);
        self.push("concat_cols", out, Op::ConcatCols(a, b), rg)
    }

    /// Row sums: `n x m` to `n x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(x);
        self.push("sum_cols", out, Op::SumCols(x), rg)
    }

    /// Sum of every element, as a `1 x 1` scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let total = self.value(x).sum();
        let rg = self.rg(x);
        self.push("sum", Mat::from_elem((1, 1), total), Op::Sum(x), rg)
    }

    /// Reverse pass from the scalar `output`. Returns adjoints for every node
    /// that depends on a trainable leaf (`None` elsewhere).
    fn backward(&self, output: Var) -> Result<Vec<Option<Mat>>> {
        let out_dim = self.value(output).dim();
        if out_dim != (1, 1) {
            return Err(DiffError::NotScalar(out_dim));
        }
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            ensure_finite("backward", &g)?;
            let mut acc = |v: Var, delta: Mat| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Param | Op::Constant => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.rg(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(x, row) => {
                    if self.rg(*row) {
                        acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        acc(*a, &g * self.value(*b));
                    }
                    if self.rg(*b) {
                        acc(*b, &g * self.value(*a));
                    }
                }
                Op::Scale(x, c) => acc(*x, g * *c),
                Op::AddScalar(x) => acc(*x, g),
                Op::Tanh(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= 1.0 - y * y);
                    acc(*x, d);
                }
                Op::Relu(x) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*x)).for_each(|d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    acc(*x, d);
                }
                Op::Exp(x) => acc(*x, g * &node.value),
                Op::Log(x) => acc(*x, g / self.value(*x)),
                Op::Square(x) => acc(*x, g * self.value(*x) * 2.0),
                Op::Columns(x, start) => {
                    let mut d = Mat::zeros(self.value(*x).dim());
                    let end = start + g.ncols();
                    d.slice_mut(s![.., *start..end]).assign(&g);
                    acc(*x, d);
                }
                Op::ConcatCols(a, b) => {
                    let split = self.value(*a).ncols();
                    acc(*a, g.slice(s![.., ..split]).to_owned());
                    acc(*b, g.slice(s![.., split..]).to_owned());
                }
                Op::SumCols(x) => {
                    let cols = self.value(*x).ncols();
                    let d = g
                        .broadcast((g.nrows(), cols))
                        .expect("column vector broadcasts")
                        .to_owned();
                    acc(*x, d);
                }
                Op::Sum(x) => {
                    let d = Mat::from_elem(self.value(*x).dim(), g[[0, 0]]);
                    acc(*x, d);
                }
            }
        }
        Ok(grads)
    }

    /// Gradient of scalar `output` with respect to the bound parameters.
    pub fn gradient(&self, output: Var, vars: &ParamVars) -> Result<Gradient> {
        let mut grads = self.backward(output)?;
        let mut entries = BTreeMap::new();
        for (name, var) in &vars.vars {
            let g = grads[var.0]
                .take()
                .unwrap_or_else(|| Mat::zeros(self.value(*var).dim()));
            ensure_finite("gradient", &g)?;
            entries.insert(name.clone(), g);
        }
        Ok(Gradient { entries })
    }
}

/// A scalar-valued differentiable function of a parameter set and a batch.
pub trait LossFn {
    fn build(&self, tape: &mut Tape, params: &ParamVars, inputs: Var) -> Result<Var>;
}

impl<F> LossFn for F
where
    F: Fn(&mut Tape, &ParamVars, Var) -> Result<Var>,
{
    fn build(&self, tape: &mut Tape, params: &ParamVars, inputs: Var) -> Result<Var> {
        self(tape, params, inputs)
    }
}

fn record<L: LossFn + ?Sized>(loss_fn: &L, params: &ParamSet, inputs: &Mat) -> Result<(Tape, ParamVars, Var)> {
    ensure_finite("inputs", inputs)?;
    let mut tape = Tape::new();
    let vars = tape.bind(params)?;
    let x = tape.constant(inputs.clone())?;
    let out = loss_fn.build(&mut tape, &vars, x)?;
    let dim = tape.value(out).dim();
    if dim != (1, 1) {
        return Err(DiffError::NotScalar(dim));
    }
    Ok((tape, vars, out))
}

pub fn evaluate<L: LossFn + ?Sized>(loss_fn: &L, params: &ParamSet, inputs: &Mat) -> Result<f64> {
    let (tape, _, out) = record(loss_fn, params, inputs)?;
    tape.scalar(out)
}

pub fn gradient<L: LossFn + ?Sized>(loss_fn: &L, params: &ParamSet, inputs: &Mat) -> Result<Gradient> {
    value_and_gradient(loss_fn, params, inputs).map(|(_, g)| g)
}

pub fn value_and_gradient<L: LossFn + ?Sized>(loss_fn: &L, params: &ParamSet, inputs: &Mat) -> Result<(f64, Gradient)> {
    let (tape, vars, out) = record(loss_fn, params, inputs)?;
    let grad = tape.gradient(out, &vars)?;
    Ok((tape.scalar(out)?, grad))
}

/// Floor on the denominator of the relative error so that near-zero
/// gradients are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// False when the central difference straddles a ReLU kink; such
    /// entries are excluded from pass/fail.
    pub smooth: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub h: f64,
    pub tol: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.smooth && e.rel_error > self.tol)
    }

    pub fn non_smooth(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| !e.smooth)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.smooth)
            .fold(0.0, |acc, e| acc.max(e.rel_error))
    }
}

/// Compares reverse-mode gradients against central finite differences,
/// one scalar at a time.
pub fn grad_check<L: LossFn + ?Sized>(
    loss_fn: &L,
    params: &ParamSet,
    inputs: &Mat,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(DiffError::InvalidStep(h));
    }
    let (tape, vars, out) = record(loss_fn, params, inputs)?;
    let analytic = tape.gradient(out, &vars)?;
    let base_pattern = tape.relu_pattern.clone();
    let base_kink = tape.relu_at_kink;

    let mut entries = Vec::with_capacity(params.total_dim());
    for name in params.names() {
        let g = analytic.get(name)?;
        for (index, &a) in g.iter().enumerate() {
            let (plus_tape, _, plus_out) = record(loss_fn, &params.perturbed(name, index, h), inputs)?;
            let (minus_tape, _, minus_out) = record(loss_fn, &params.perturbed(name, index, -h), inputs)?;
            let numeric = (plus_tape.scalar(plus_out)? - minus_tape.scalar(minus_out)?) / (2.0 * h);
            let smooth =
                !base_kink && plus_tape.relu_pattern == base_pattern && minus_tape.relu_pattern == base_pattern;
            let denom = a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            entries.push(GradCheckEntry {
                name: name.to_string(),
                index,
                analytic: a,
                numeric,
                rel_error: (a - numeric).abs() / denom,
                smooth,
            });
        }
    }
    Ok(GradCheckReport { h, tol, entries })
}
