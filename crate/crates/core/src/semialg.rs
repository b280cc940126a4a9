//! Degree-two semialgebraic encodings shared by all certification models.
//!
//! A [`QuadraticProgramSpec`] declares named variable blocks that are laid out
//! contiguously in declaration order; every polynomial refers to variables by
//! their index in that concatenated vector. Quadratic parts are kept as sparse
//! symmetric matrices (upper triangle stored, `xᵀ Q x` semantics).

use std::collections::BTreeMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::norm::Norm;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarBlock {
    pub name: String,
    pub dim: usize,
    /// Position of the first coordinate in the concatenated variable vector.
    pub offset: usize,
}

impl VarBlock {
    pub fn var(&self, i: usize) -> usize {
        assert!(i < self.dim, "index {i} out of range for block {} (dim {})", self.name, self.dim);
        self.offset + i
    }

    pub fn vars(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.dim
    }
}

/// Handle returned by [`QuadraticProgramSpec::add_block`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockId(pub usize);

/// Sparse affine function `Σ aᵢ xᵢ + c`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineExpr {
    pub terms: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(c: f64) -> Self {
        Self { terms: BTreeMap::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        let mut e = Self::default();
        e.add_term(i, 1.0);
        e
    }

    pub fn add_term(&mut self, i: usize, a: f64) -> &mut Self {
        if a != 0.0 {
            *self.terms.entry(i).or_insert(0.0) += a;
        }
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            terms: self.terms.iter().map(|(&i, &a)| (i, a * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn add(&self, other: &AffineExpr) -> Self {
        let mut out = self.clone();
        for (&i, &a) in &other.terms {
            out.add_term(i, a);
        }
        out.constant += other.constant;
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> Self {
        self.add(&other.scaled(-1.0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(&i, &a)| a * x[i]).sum::<f64>()
    }

    pub fn max_var(&self) -> Option<usize> {
        self.terms.keys().next_back().copied()
    }
}

/// `Σ_{i,j} Q_ij xᵢ xⱼ + Σ lᵢ xᵢ + c` with `Q` symmetric.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadForm {
    /// Upper-triangle entries `(i, j)`, `i ≤ j`, of the symmetric matrix `Q`.
    pub quad: BTreeMap<(usize, usize), f64>,
    pub linear: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl QuadForm {
    pub fn from_affine(a: &AffineExpr) -> Self {
        Self { quad: BTreeMap::new(), linear: a.terms.clone(), constant: a.constant }
    }

    /// Adds `coef · xᵢ xⱼ`.
    pub fn add_monomial(&mut self, i: usize, j: usize, coef: f64) {
        if coef == 0.0 {
            return;
        }
        let key = (i.min(j), i.max(j));
        let entry = if i == j { coef } else { 0.5 * coef };
        *self.quad.entry(key).or_insert(0.0) += entry;
    }

    pub fn add_linear(&mut self, i: usize, coef: f64) {
        if coef != 0.0 {
            *self.linear.entry(i).or_insert(0.0) += coef;
        }
    }

    /// The product `a · b` of two affine functions.
    pub fn product(a: &AffineExpr, b: &AffineExpr) -> Self {
        let mut out = QuadForm::default();
        for (&i, &ai) in &a.terms {
            for (&j, &bj) in &b.terms {
                out.add_monomial(i, j, ai * bj);
            }
        }
        for (&i, &ai) in &a.terms {
            out.add_linear(i, ai * b.constant);
        }
        for (&j, &bj) in &b.terms {
            out.add_linear(j, bj * a.constant);
        }
        out.constant = a.constant * b.constant;
        out
    }

    pub fn add_scaled(&mut self, other: &QuadForm, s: f64) {
        for (&k, &v) in &other.quad {
            *self.quad.entry(k).or_insert(0.0) += s * v;
        }
        for (&i, &v) in &other.linear {
            *self.linear.entry(i).or_insert(0.0) += s * v;
        }
        self.constant += s * other.constant;
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = QuadForm::default();
        out.add_scaled(self, s);
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for (&i, &a) in &self.linear {
            v += a * x[i];
        }
        for (&(i, j), &q) in &self.quad {
            v += if i == j { q * x[i] * x[i] } else { 2.0 * q * x[i] * x[j] };
        }
        v
    }

    pub fn is_affine(&self) -> bool {
        self.quad.values().all(|v| *v == 0.0)
    }

    pub fn max_var(&self) -> Option<usize> {
        let q = self.quad.keys().map(|&(_, j)| j).max();
        let l = self.linear.keys().next_back().copied();
        q.max(l)
    }

    /// Dense symmetric matrix of the quadratic part.
    pub fn quad_matrix(&self, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for (&(i, j), &q) in &self.quad {
            m[(i, j)] += q;
            if i != j {
                m[(j, i)] += q;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// `form = 0`
    Eq,
    /// `form ≥ 0`
    Geq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub sense: Sense,
    pub form: QuadForm,
    /// Short tag naming the constraint family (for dumps and diagnostics).
    pub tag: String,
}

impl QuadConstraint {
    pub fn eq(form: QuadForm, tag: impl Into<String>) -> Self {
        Self { sense: Sense::Eq, form, tag: tag.into() }
    }

    pub fn geq(form: QuadForm, tag: impl Into<String>) -> Self {
        Self { sense: Sense::Geq, form, tag: tag.into() }
    }

    /// Whether `x` satisfies the constraint up to `tol`.
    pub fn satisfied(&self, x: &[f64], tol: f64) -> bool {
        let v = self.form.eval(x);
        match self.sense {
            Sense::Eq => v.abs() <= tol,
            Sense::Geq => v >= -tol,
        }
    }
}

/// A quadratically constrained quadratic program `max objective s.t. constraints`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QuadraticProgramSpec {
    pub blocks: Vec<VarBlock>,
    pub objective: QuadForm,
    pub constraints: Vec<QuadConstraint>,
}

impl QuadraticProgramSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, name: &str, dim: usize) -> Result<BlockId> {
        if dim == 0 {
            return Err(Error::InvalidArgument(format!("block '{name}' has zero dimension")));
        }
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(Error::InvalidArgument(format!("duplicate block name '{name}'")));
        }
        let offset = self.n_vars();
        self.blocks.push(VarBlock { name: name.to_string(), dim, offset });
        Ok(BlockId(self.blocks.len() - 1))
    }

    pub fn block(&self, id: BlockId) -> &VarBlock {
        &self.blocks[id.0]
    }

    pub fn block_by_name(&self, name: &str) -> Option<&VarBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn var(&self, id: BlockId, i: usize) -> usize {
        self.blocks[id.0].var(i)
    }

    pub fn n_vars(&self) -> usize {
        self.blocks.iter().map(|b| b.dim).sum()
    }

    pub fn extend(&mut self, cons: impl IntoIterator<Item = QuadConstraint>) {
        self.constraints.extend(cons);
    }

    /// Checks that every polynomial only references declared variables.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let check = |f: &QuadForm, what: &str| -> Result<()> {
            match f.max_var() {
                Some(v) if v >= n => Err(Error::Dimension(format!("{what} references variable {v} but only {n} are declared"))),
                _ => Ok(()),
            }
        };
        check(&self.objective, "objective")?;
        for c in &self.constraints {
            check(&c.form, &format!("constraint '{}'", c.tag))?;
        }
        Ok(())
    }

    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        self.constraints.iter().all(|c| c.satisfied(x, tol))
    }

    /// Declares a lifted block (when needed) and adds `x ∈ B(center, eps, q)`.
    pub fn add_lq_ball(&mut self, x: BlockId, center: &[f64], eps: f64, q: Norm) -> Result<()> {
        let lift = if q == Norm::L1 {
            let name = format!("{}_abs", self.block(x).name);
            let dim = self.block(x).dim;
            Some(self.add_block(&name, dim)?)
        } else {
            None
        };
        let xb = self.block(x).clone();
        let lb = lift.map(|l| self.block(l).clone());
        let cons = lq_ball(&xb, center, eps, q, lb.as_ref())?;
        self.extend(cons);
        Ok(())
    }
}

/// `z = ReLU(preact)` as `zᵢ(zᵢ - preactᵢ) = 0`, `zᵢ - preactᵢ ≥ 0`, `zᵢ ≥ 0`.
pub fn relu_graph(z: &VarBlock, preact: &[AffineExpr]) -> Result<Vec<QuadConstraint>> {
    if preact.len() != z.dim {
        return Err(Error::Dimension(format!(
            "relu_graph: block '{}' has dim {} but preactivation has {} rows",
            z.name,
            z.dim,
            preact.len()
        )));
    }
    let mut out = Vec::with_capacity(3 * z.dim);
    for (i, pre) in preact.iter().enumerate() {
        let zi = AffineExpr::var(z.var(i));
        let gap = zi.sub(pre);
        out.push(QuadConstraint::eq(QuadForm::product(&zi, &gap), "relu_complementarity"));
        out.push(QuadConstraint::geq(QuadForm::from_affine(&gap), "relu_upper"));
        out.push(QuadConstraint::geq(QuadForm::from_affine(&zi), "relu_nonneg"));
    }
    Ok(out)
}

/// `s ∈ ∂ReLU(preact)` as `s(s - 1) ≤ 0`, `s·preact ≥ 0`, `(s - 1)·preact ≥ 0`.
pub fn relu_subgradient(s: &VarBlock, preact: &[AffineExpr]) -> Result<Vec<QuadConstraint>> {
    if preact.len() != s.dim {
        return Err(Error::Dimension(format!(
            "relu_subgradient: block '{}' has dim {} but preactivation has {} rows",
            s.name,
            s.dim,
            preact.len()
        )));
    }
    let mut out = Vec::with_capacity(3 * s.dim);
    for (i, pre) in preact.iter().enumerate() {
        let si = AffineExpr::var(s.var(i));
        let si_minus_1 = si.clone().plus_const(-1.0);
        // s(s - 1) ≤ 0  ⇔  -s(s - 1) ≥ 0
        out.push(QuadConstraint::geq(QuadForm::product(&si, &si_minus_1).scaled(-1.0), "subgrad_box"));
        out.push(QuadConstraint::geq(QuadForm::product(&si, pre), "subgrad_active"));
        out.push(QuadConstraint::geq(QuadForm::product(&si_minus_1, pre), "subgrad_inactive"));
    }
    Ok(out)
}

/// `‖x - center‖_q ≤ eps` for `q ∈ {1, 2, ∞}`.
///
/// `q = 2` is one quadratic, `q = ∞` is one quadratic per coordinate. `q = 1`
/// needs the nonnegative lift block `a` (`aᵢ ≥ ±(xᵢ - centerᵢ)`, `Σ aᵢ ≤ eps`)
/// and also carries the implied bound `‖x - center‖₂² ≤ eps²` so the moment
/// relaxation sees bounded second moments.
pub fn lq_ball(
    x: &VarBlock,
    center: &[f64],
    eps: f64,
    q: Norm,
    lift: Option<&VarBlock>,
) -> Result<Vec<QuadConstraint>> {
    if center.len() != x.dim {
        return Err(Error::Dimension(format!(
            "lq_ball: center has length {} but block '{}' has dim {}",
            center.len(),
            x.name,
            x.dim
        )));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("ball radius must be nonnegative, got {eps}")));
    }
    let diff = |i: usize| AffineExpr::var(x.var(i)).plus_const(-center[i]);
    let l2_ball = || {
        let mut f = QuadForm { constant: eps * eps, ..Default::default() };
        for i in 0..x.dim {
            f.add_scaled(&QuadForm::product(&diff(i), &diff(i)), -1.0);
        }
        QuadConstraint::geq(f, "ball_l2")
    };
    match q {
        Norm::Finite(2) => Ok(vec![l2_ball()]),
        Norm::Inf => Ok((0..x.dim)
            .map(|i| {
                let mut f = QuadForm { constant: eps * eps, ..Default::default() };
                f.add_scaled(&QuadForm::product(&diff(i), &diff(i)), -1.0);
                QuadConstraint::geq(f, "ball_linf")
            })
            .collect()),
        Norm::Finite(1) => {
            let a = lift.ok_or_else(|| Error::InvalidArgument("q = 1 ball needs a lift block".into()))?;
            if a.dim != x.dim {
                return Err(Error::Dimension(format!("lift block has dim {}, expected {}", a.dim, x.dim)));
            }
            let mut out = Vec::with_capacity(2 * x.dim + 2);
            let mut budget = AffineExpr::constant(eps);
            for i in 0..x.dim {
                let ai = AffineExpr::var(a.var(i));
                out.push(QuadConstraint::geq(QuadForm::from_affine(&ai.sub(&diff(i))), "ball_l1_lift"));
                out.push(QuadConstraint::geq(QuadForm::from_affine(&ai.add(&diff(i))), "ball_l1_lift"));
                budget.add_term(a.var(i), -1.0);
            }
            out.push(QuadConstraint::geq(QuadForm::from_affine(&budget), "ball_l1_budget"));
            out.push(l2_ball());
            Ok(out)
        }
        other => Err(Error::UnsupportedNorm(other.to_string(), "1, 2, inf")),
    }
}

/// Affine rows `W z + U x + u` over the given blocks.
pub fn preactivation_exprs(
    w: &DMatrix<f64>,
    u: &DMatrix<f64>,
    bias: &[f64],
    z: &VarBlock,
    x: &VarBlock,
) -> Vec<AffineExpr> {
    (0..w.nrows())
        .map(|i| {
            let mut e = AffineExpr::constant(bias[i]);
            for j in 0..z.dim {
                e.add_term(z.var(j), w[(i, j)]);
            }
            for k in 0..x.dim {
                e.add_term(x.var(k), u[(i, k)]);
            }
            e
        })
        .collect()
}
