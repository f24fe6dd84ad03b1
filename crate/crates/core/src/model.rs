//! L2-regularized logistic regression: the objective, per-instance gradients,
//! the variance-reduced direction and the smoothness / strong-convexity
//! constants the convergence analysis needs.
//!
//! The objective is the averaged form
//!
//! ```text
//! f(w) = (1/n) Σ_i log(1 + exp(-y_i x_iᵀ w)) + (λ/2) ‖w‖²
//! ```
//!
//! so every `f_i` carries the full regularizer and `∇f = (1/n) Σ ∇f_i`.
//! Sums over instances are taken over fixed blocks of [`BLOCK`] examples and
//! merged by [`par::tree_reduce`], which keeps results bitwise reproducible
//! regardless of thread count.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::par::{self, Exec};

/// Number of instances per leaf of every reduction over the dataset.
pub const BLOCK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }
}

/// One labelled instance with a sparse feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseExample {
    indices: Vec<u32>,
    values: Vec<f64>,
    label: Label,
}

impl SparseExample {
    pub fn new(indices: Vec<u32>, values: Vec<f64>, label: Label) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::InvalidDataset(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if let Some(pos) = indices.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDataset(format!(
                "feature indices not strictly increasing at position {}",
                pos + 1
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature value".into()));
        }
        Ok(SparseExample { indices, values, label })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn max_index(&self) -> Option<u32> {
        self.indices.last().copied()
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&j, &v)| (j as usize, v))
    }

    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.iter().map(|(j, v)| v * w[j]).sum()
    }
}

/// An immutable training set; shared freely between workers.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    examples: Vec<SparseExample>,
    dim: usize,
}

impl Dataset {
    pub fn new(examples: Vec<SparseExample>, dim: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::InvalidDataset("dataset has no instances".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidDataset("feature dimension is zero".into()));
        }
        if let Some((i, ex)) = examples
            .iter()
            .enumerate()
            .find(|(_, ex)| ex.max_index().is_some_and(|m| m as usize >= dim))
        {
            return Err(Error::InvalidDataset(format!(
                "instance {i} has feature index {} outside dimension {dim}",
                ex.max_index().unwrap_or(0)
            )));
        }
        Ok(Dataset { examples, dim })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn examples(&self) -> &[SparseExample] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &SparseExample {
        &self.examples[i]
    }

    pub fn nnz(&self) -> usize {
        self.examples.iter().map(SparseExample::nnz).sum()
    }

    pub fn max_row_norm_sq(&self) -> f64 {
        self.examples.iter().map(SparseExample::norm_sq).fold(0.0, f64::max)
    }

    fn blocks(&self) -> usize {
        self.len().div_ceil(BLOCK)
    }

    fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        b * BLOCK..((b + 1) * BLOCK).min(self.len())
    }
}

/// Dense parameter vector (the iterate, a snapshot, or a gradient).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Problem constants for the convergence analysis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConstants {
    /// Per-component smoothness `L`.
    pub smoothness: f64,
    /// Strong convexity `μ` of the averaged objective.
    pub strong_convexity: f64,
    pub regularizer: f64,
}

impl LossConstants {
    pub fn for_dataset(data: &Dataset, lambda: f64) -> Result<Self> {
        Ok(LossConstants {
            smoothness: smoothness_constant(data, lambda),
            strong_convexity: strong_convexity_constant(lambda)?,
            regularizer: lambda,
        })
    }
}

pub fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Derivative of `log(1 + exp(-y z))` with respect to the margin `z`.
#[inline]
pub fn loss_slope(label: Label, z: f64) -> f64 {
    let y = label.sign();
    -y * sigmoid(-y * z)
}

/// Unregularized logistic loss of one instance.
#[inline]
pub fn loss_component(ex: &SparseExample, w: &[f64]) -> f64 {
    softplus(-ex.label().sign() * ex.dot(w))
}

fn check_dim(data: &Dataset, w: &[f64]) -> Result<()> {
    if w.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            actual: w.len(),
        });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!(
            "regularizer must be finite and non-negative, got {lambda}"
        )));
    }
    Ok(())
}

pub fn objective(data: &Dataset, w: &[f64], lambda: f64) -> Result<f64> {
    objective_exec(Exec::default(), data, w, lambda)
}

pub fn objective_exec(exec: Exec, data: &Dataset, w: &[f64], lambda: f64) -> Result<f64> {
    check_dim(data, w)?;
    check_lambda(lambda)?;
    let loss = par::tree_reduce(
        exec,
        data.blocks(),
        |b| {
            data.block_range(b)
                .map(|i| loss_component(data.example(i), w))
                .sum::<f64>()
        },
        |a, b| a + b,
    )
    .unwrap_or(0.0);
    let value = loss / data.len() as f64 + 0.5 * lambda * norm_sq(w);
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "objective" });
    }
    Ok(value)
}

/// Gradient of `f_i(w) = log(1 + exp(-y xᵀw)) + (λ/2)‖w‖²`, returned dense.
pub fn grad_component(ex: &SparseExample, w: &[f64], lambda: f64) -> Result<ParamVector> {
    if let Some(m) = ex.max_index() {
        if m as usize >= w.len() {
            return Err(Error::DimensionMismatch {
                expected: m as usize + 1,
                actual: w.len(),
            });
        }
    }
    let slope = loss_slope(ex.label(), ex.dot(w));
    let mut g: Vec<f64> = w.iter().map(|x| lambda * x).collect();
    for (j, v) in ex.iter() {
        g[j] += slope * v;
    }
    Ok(ParamVector(g))
}

/// A disjoint cover of the instance indices `0..n`, one part per worker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    parts: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(mut parts: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for part in &mut parts {
            part.sort_unstable();
            for &i in part.iter() {
                if i >= n {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} out of range for {n} instances"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} assigned to more than one worker"
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "index {missing} not assigned to any worker"
            )));
        }
        Ok(Partition { parts })
    }

    /// Splits `0..n` into `p` contiguous, nearly equal ranges.
    pub fn contiguous(n: usize, p: usize) -> Self {
        let p = p.max(1);
        let parts = (0..p).map(|a| (a * n / p..(a + 1) * n / p).collect()).collect();
        Partition { parts }
    }

    pub fn parts(&self) -> &[Vec<usize>] {
        &self.parts
    }
}

fn accumulate_slopes(data: &Dataset, w: &[f64], idx: impl Iterator<Item = usize>, acc: &mut [f64]) {
    for i in idx {
        let ex = data.example(i);
        let slope = loss_slope(ex.label(), ex.dot(w));
        for (j, v) in ex.iter() {
            acc[j] += slope * v;
        }
    }
}

fn add_into(mut a: Vec<f64>, b: Vec<f64>) -> Vec<f64> {
    for (x, y) in a.iter_mut().zip(&b) {
        *x += y;
    }
    a
}

/// `∇f(w) = (1/n) Σ_i ∇f_i(w)`.
///
/// With a partition, each part is summed separately (as one worker would) and
/// the partial sums are merged in part order. The unpartitioned path uses the
/// canonical block tree and is bitwise reproducible.
pub fn full_gradient(data: &Dataset, w: &[f64], lambda: f64, partition: Option<&Partition>) -> Result<ParamVector> {
    full_gradient_exec(Exec::default(), data, w, lambda, partition)
}

pub fn full_gradient_exec(
    exec: Exec,
    data: &Dataset,
    w: &[f64],
    lambda: f64,
    partition: Option<&Partition>,
) -> Result<ParamVector> {
    check_dim(data, w)?;
    check_lambda(lambda)?;
    let d = data.dim();
    let sum = match partition {
        None => par::tree_reduce(
            exec,
            data.blocks(),
            |b| {
                let mut acc = vec![0.0; d];
                accumulate_slopes(data, w, data.block_range(b), &mut acc);
                acc
            },
            add_into,
        )
        .unwrap_or_else(|| vec![0.0; d]),
        Some(partition) => {
            // Re-validate: a Partition may have been built for another dataset.
            let partition = Partition::new(partition.parts.clone(), data.len())?;
            let partials = par::map_collect(exec, partition.parts.len(), |a| {
                let mut acc = vec![0.0; d];
                accumulate_slopes(data, w, partition.parts[a].iter().copied(), &mut acc);
                acc
            });
            partials.into_iter().fold(vec![0.0; d], add_into)
        }
    };
    let n = data.len() as f64;
    let g: Vec<f64> = sum.iter().zip(w).map(|(s, x)| s / n + lambda * x).collect();
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "full gradient",
        });
    }
    Ok(ParamVector(g))
}

/// `v = ∇f_i(u_read) − ∇f_i(u0) + g0`, evaluated term by term.
pub fn vr_update_vector(
    data: &Dataset,
    i: usize,
    u_read: &[f64],
    u0: &[f64],
    g0: &[f64],
    lambda: f64,
) -> Result<ParamVector> {
    check_dim(data, u_read)?;
    check_dim(data, u0)?;
    check_dim(data, g0)?;
    let ex = data.example(i);
    let a = grad_component(ex, u_read, lambda)?;
    let b = grad_component(ex, u0, lambda)?;
    Ok(ParamVector(
        a.iter().zip(b.iter()).zip(g0).map(|((a, b), g)| a - b + g).collect(),
    ))
}

/// Per-epoch quantities shared by every inner step: the snapshot `u0`, its
/// full gradient `g0`, and each instance's loss slope at `u0`.
#[derive(Clone, Debug)]
pub struct Anchor {
    point: Vec<f64>,
    full_grad: Vec<f64>,
    slopes: Vec<f64>,
}

impl Anchor {
    pub fn new(exec: Exec, data: &Dataset, u0: &[f64], lambda: f64) -> Result<Self> {
        let full_grad = full_gradient_exec(exec, data, u0, lambda, None)?.into_vec();
        let slopes = par::map_collect(exec, data.len(), |i| {
            let ex = data.example(i);
            loss_slope(ex.label(), ex.dot(u0))
        });
        Ok(Anchor {
            point: u0.to_vec(),
            full_grad,
            slopes,
        })
    }

    pub fn point(&self) -> &[f64] {
        &self.point
    }

    pub fn full_grad(&self) -> &[f64] {
        &self.full_grad
    }

    /// Writes the variance-reduced direction for instance `i` at `u_read` into
    /// `out`. Mathematically identical to [`vr_update_vector`]; the dense part
    /// is `λ(u_read − u0) + g0` and only the support of `x_i` is touched again.
    #[inline]
    pub fn direction_into(&self, data: &Dataset, i: usize, u_read: &[f64], lambda: f64, out: &mut [f64]) {
        let ex = data.example(i);
        let c = loss_slope(ex.label(), ex.dot(u_read)) - self.slopes[i];
        for ((o, u), (p, g)) in out.iter_mut().zip(u_read).zip(self.point.iter().zip(&self.full_grad)) {
            *o = lambda * (u - p) + g;
        }
        for (j, v) in ex.iter() {
            out[j] += c * v;
        }
    }

    /// `q(u) = (1/n) Σ_i ‖∇f_i(u) − ∇f_i(u0) + g0‖²`, by full enumeration.
    pub fn variance_q(&self, exec: Exec, data: &Dataset, u: &[f64], lambda: f64) -> f64 {
        let d = data.dim();
        let total = par::tree_reduce(
            exec,
            data.blocks(),
            |b| {
                let mut buf = vec![0.0; d];
                data.block_range(b)
                    .map(|i| {
                        self.direction_into(data, i, u, lambda, &mut buf);
                        norm_sq(&buf)
                    })
                    .sum::<f64>()
            },
            |a, b| a + b,
        )
        .unwrap_or(0.0);
        total / data.len() as f64
    }
}

/// `L = (1/4) max_i ‖x_i‖² + λ`, a smoothness bound valid for every `f_i`.
pub fn smoothness_constant(data: &Dataset, lambda: f64) -> f64 {
    0.25 * data.max_row_norm_sq() + lambda
}

/// `μ = λ`: the regularizer makes the averaged objective λ-strongly convex.
pub fn strong_convexity_constant(lambda: f64) -> Result<f64> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(lambda)
    } else {
        Err(Error::NotStronglyConvex(lambda))
    }
}
