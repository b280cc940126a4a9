//! Forward evaluation of a monotone equilibrium network.
//!
//! The equilibrium `z = ReLU(W z + U x + u)` is the zero of the strongly
//! monotone inclusion `0 ∈ (I - W) z - (U x + u) + N_{z ≥ 0}(z)`. Two
//! iterations are available:
//!
//! - plain Picard `z ← ReLU(W z + b)`, a contraction when `‖W‖₂ < 1`;
//! - forward–backward splitting `z ← ReLU((1 - α) z + α (W z + b))`, a
//!   contraction with factor `√(1 - m²/L²)` for `α = m/L²`, `L = ‖I - W‖₂`.
//!
//! [`Scheme::Auto`] picks whichever has the smaller contraction factor. Once
//! the residual is small the active set is frozen and the equilibrium is
//! recovered from the linear system on that set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netio::MonDEQ;
use crate::norm::spectral_norm;

/// Iteration strategy for the equilibrium solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Scheme {
    #[default]
    Auto,
    Picard,
    /// Forward–backward splitting with the given step (`None`: `m/‖I - W‖₂²`).
    ForwardBackward(Option<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub scheme: Scheme,
    /// Freeze the active set and solve the linear system once the residual drops below this.
    pub polish_below: f64,
}

impl Default for FixedPointSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 5000, scheme: Scheme::Auto, polish_below: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub z: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
enum Step {
    Picard,
    ForwardBackward(f64),
}

/// Reusable solver for one network (the step-size norms are computed once).
#[derive(Debug, Clone)]
pub struct EquilibriumSolver<'a> {
    net: &'a MonDEQ,
    settings: FixedPointSettings,
    step: Step,
}

impl<'a> EquilibriumSolver<'a> {
    pub fn new(net: &'a MonDEQ, settings: FixedPointSettings) -> Self {
        let p = net.p();
        let step = match settings.scheme {
            Scheme::Picard => Step::Picard,
            Scheme::ForwardBackward(Some(alpha)) => Step::ForwardBackward(alpha),
            Scheme::ForwardBackward(None) | Scheme::Auto => {
                let lip = spectral_norm(&(DMatrix::<f64>::identity(p, p) - &net.w));
                let alpha = if lip > 0.0 { (net.m / (lip * lip)).min(1.0) } else { 1.0 };
                let fb_rate = (1.0 - 2.0 * alpha * net.m + alpha * alpha * lip * lip).max(0.0).sqrt();
                match settings.scheme {
                    Scheme::Auto if spectral_norm(&net.w) < fb_rate => Step::Picard,
                    _ => Step::ForwardBackward(alpha),
                }
            }
        };
        Self { net, settings, step }
    }

    pub fn net(&self) -> &MonDEQ {
        self.net
    }

    pub fn solve(&self, x: &[f64]) -> Result<EquilibriumResult> {
        self.solve_from(x, None)
    }

    /// Solve starting from `init` (zeros when `None`).
    pub fn solve_from(&self, x: &[f64], init: Option<&[f64]>) -> Result<EquilibriumResult> {
        let net = self.net;
        if x.len() != net.p0() {
            return Err(Error::Dimension(format!("input has length {}, expected p0={}", x.len(), net.p0())));
        }
        let p = net.p();
        let mut z = match init {
            Some(z0) if z0.len() == p => DVector::from_column_slice(z0),
            Some(z0) => return Err(Error::Dimension(format!("initial z has length {}, expected {p}", z0.len()))),
            None => DVector::zeros(p),
        };
        let drive = &net.u * DVector::from_column_slice(x) + &net.u_bias;

        let mut best = (f64::INFINITY, z.clone());
        let mut last_polish_pattern: Option<Vec<bool>> = None;
        for it in 0..=self.settings.max_iter {
            let res = residual(net, &z, &drive);
            if res < best.0 {
                best = (res, z.clone());
            }
            if res <= self.settings.tol {
                return Ok(EquilibriumResult { z: z.iter().copied().collect(), residual: res, iterations: it, converged: true });
            }
            if res <= self.settings.polish_below {
                let pre = &net.w * &z + &drive;
                let pattern: Vec<bool> = pre.iter().map(|v| *v > 0.0).collect();
                if last_polish_pattern.as_ref() != Some(&pattern) {
                    if let Some(zp) = solve_on_pattern(net, &pattern, &drive) {
                        let rp = residual(net, &zp, &drive);
                        if rp <= self.settings.tol {
                            return Ok(EquilibriumResult { z: zp.iter().copied().collect(), residual: rp, iterations: it, converged: true });
                        }
                        if rp < best.0 {
                            best = (rp, zp);
                        }
                    }
                    last_polish_pattern = Some(pattern);
                }
            }
            if it == self.settings.max_iter {
                break;
            }
            z = match self.step {
                Step::Picard => relu(&(&net.w * &z + &drive)),
                Step::ForwardBackward(alpha) => {
                    let inner = &z * (1.0 - alpha) + (&net.w * &z + &drive) * alpha;
                    relu(&inner)
                }
            };
        }
        Ok(EquilibriumResult {
            z: best.1.iter().copied().collect(),
            residual: best.0,
            iterations: self.settings.max_iter,
            converged: false,
        })
    }

    fn converged_z(&self, x: &[f64]) -> Result<DVector<f64>> {
        let eq = self.solve(x)?;
        if !eq.converged {
            return Err(Error::NotConverged { residual: eq.residual, iterations: eq.iterations });
        }
        Ok(DVector::from_vec(eq.z))
    }

    /// `C z + c` at the equilibrium.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.converged_z(x)?;
        Ok((&self.net.c * z + &self.net.c_bias).iter().copied().collect())
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    /// `C (I - diag(s) W)⁻¹ diag(s) U` with `s` the active indicator (0 at exact kinks).
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let z = self.converged_z(x)?;
        let s = self.active_indicator(&z, x);
        let inner = self.activation_jacobian(&s)?;
        Ok(&self.net.c * inner)
    }

    /// Outputs at `x` together with the vector–Jacobian product `(C J)ᵀ a`.
    pub fn vjp(&self, x: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let net = self.net;
        if a.len() != net.k() {
            return Err(Error::Dimension(format!("cotangent has length {}, expected K={}", a.len(), net.k())));
        }
        let z = self.converged_z(x)?;
        let out: Vec<f64> = (&net.c * &z + &net.c_bias).iter().copied().collect();
        let s = self.active_indicator(&z, x);
        let p = net.p();
        // r solves (I - Wᵀ diag(s)) r = Cᵀ a, and the gradient is Uᵀ diag(s) r.
        let mut lhs = DMatrix::<f64>::identity(p, p);
        for j in 0..p {
            for i in 0..p {
                lhs[(i, j)] -= net.w[(j, i)] * s[j];
            }
        }
        let rhs = net.c.transpose() * DVector::from_column_slice(a);
        let r = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular I - Wᵀdiag(s)".into()))?;
        let sr = DVector::from_fn(p, |i, _| s[i] * r[i]);
        let grad = net.u.transpose() * sr;
        Ok((out, grad.iter().copied().collect()))
    }

    fn active_indicator(&self, z: &DVector<f64>, x: &[f64]) -> Vec<f64> {
        let pre = self.net.preactivation(z, &DVector::from_column_slice(x));
        pre.iter().map(|v| if *v > 0.0 { 1.0 } else { 0.0 }).collect()
    }

    /// `(I - diag(s) W)⁻¹ diag(s) U`.
    fn activation_jacobian(&self, s: &[f64]) -> Result<DMatrix<f64>> {
        let net = self.net;
        let p = net.p();
        let mut lhs = DMatrix::<f64>::identity(p, p);
        let mut rhs = net.u.clone();
        for i in 0..p {
            for j in 0..p {
                lhs[(i, j)] -= s[i] * net.w[(i, j)];
            }
            for j in 0..net.p0() {
                rhs[(i, j)] *= s[i];
            }
        }
        lhs.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("singular I - diag(s) W".into()))
    }
}

fn relu(v: &DVector<f64>) -> DVector<f64> {
    v.map(|x| x.max(0.0))
}

fn residual(net: &MonDEQ, z: &DVector<f64>, drive: &DVector<f64>) -> f64 {
    (z - relu(&(&net.w * z + drive))).norm()
}

/// `z_A = (I - W)_AA⁻¹ b_A`, `z_{Aᶜ} = 0`.
pub(crate) fn solve_on_pattern(net: &MonDEQ, active: &[bool], drive: &DVector<f64>) -> Option<DVector<f64>> {
    let idx: Vec<usize> = (0..net.p()).filter(|&i| active[i]).collect();
    let mut z = DVector::zeros(net.p());
    if idx.is_empty() {
        return Some(z);
    }
    let n = idx.len();
    let sys = DMatrix::from_fn(n, n, |a, b| {
        let (i, j) = (idx[a], idx[b]);
        (if i == j { 1.0 } else { 0.0 }) - net.w[(i, j)]
    });
    let rhs = DVector::from_fn(n, |a, _| drive[idx[a]]);
    let sol = sys.lu().solve(&rhs)?;
    for (a, &i) in idx.iter().enumerate() {
        z[i] = sol[a];
    }
    Some(z)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn solve_equilibrium(net: &MonDEQ, x: &[f64], tol_fp: f64, max_iter: usize) -> Result<EquilibriumResult> {
    let settings = FixedPointSettings { tol: tol_fp, max_iter, ..Default::default() };
    EquilibriumSolver::new(net, settings).solve(x)
}

pub fn forward(net: &MonDEQ, x: &[f64]) -> Result<Vec<f64>> {
    EquilibriumSolver::new(net, FixedPointSettings::default()).forward(x)
}

pub fn predict(net: &MonDEQ, x: &[f64]) -> Result<usize> {
    EquilibriumSolver::new(net, FixedPointSettings::default()).predict(x)
}

/// `K × p0` Jacobian of `F` at `x`.
pub fn implicit_jacobian(net: &MonDEQ, x: &[f64]) -> Result<DMatrix<f64>> {
    EquilibriumSolver::new(net, FixedPointSettings::default()).jacobian(x)
}
