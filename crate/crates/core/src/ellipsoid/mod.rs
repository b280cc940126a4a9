//! Minimum-volume outer ellipsoid of the output set `F(E)` and the label
//! test built on it.

pub mod figure;
pub mod gram;
pub mod lmi;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{argmax, EquilibriumSolver, FixedPointSettings};
use crate::netio::{MonDEQ, PerturbationSpec};
use crate::norm::{lambda_max_sym, spectral_norm, Norm};
use crate::sdpcore::{solve, SolveStatus, SolverSettings};

pub use figure::{projection_figure, write_svg, ProjectionFigure};
pub use gram::{assemble_gram, gram_linear_part, Coef, MultiplierSet};
pub use lmi::{build_ellipsoid_program, schur_lmi, EllipsoidLayout, EllipsoidProgram};

/// `{ξ : ‖Q ξ + b‖₂ ≤ 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    #[serde(with = "matrix_rows")]
    pub q: DMatrix<f64>,
    pub b: Vec<f64>,
}

mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }
}

impl Ellipsoid {
    pub fn new(q: DMatrix<f64>, b: Vec<f64>) -> Result<Self> {
        if q.nrows() != q.ncols() || q.nrows() != b.len() {
            return Err(Error::Dimension("Q must be square and match b".into()));
        }
        Ok(Self { q, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `‖Q ξ + b‖₂`.
    pub fn level(&self, xi: &[f64]) -> f64 {
        (&self.q * DVector::from_column_slice(xi) + DVector::from_column_slice(&self.b)).norm()
    }

    pub fn contains(&self, xi: &[f64], tol: f64) -> bool {
        self.level(xi) <= 1.0 + tol
    }

    pub fn log_det(&self) -> f64 {
        self.q.determinant().abs().ln()
    }

    fn inverse(&self) -> Result<DMatrix<f64>> {
        self.q.clone().try_inverse().ok_or_else(|| Error::Numerical("ellipsoid matrix is singular".into()))
    }

    /// Center `-Q⁻¹ b`.
    pub fn center(&self) -> Result<Vec<f64>> {
        let c = -(self.inverse()? * DVector::from_column_slice(&self.b));
        Ok(c.iter().copied().collect())
    }
}

/// `max {ξ_i - ξ_y0 : ξ in the ellipsoid} = -aᵀQ⁻¹b + ‖Q⁻ᵀa‖₂` with `a = e_i - e_y0`.
pub fn ellipsoid_label_gap(ell: &Ellipsoid, y0: usize, i: usize) -> Result<f64> {
    let k = ell.dim();
    if y0 >= k || i >= k {
        return Err(Error::InvalidArgument(format!("labels ({y0}, {i}) out of range for {k} outputs")));
    }
    let inv = ell.inverse()?;
    let mut a = DVector::zeros(k);
    a[i] += 1.0;
    a[y0] -= 1.0;
    let shift = -(a.transpose() * &inv * DVector::from_column_slice(&ell.b))[(0, 0)];
    Ok(shift + (inv.transpose() * a).norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipsoidSettings {
    pub solver: SolverSettings,
    /// Include the pairwise slope-restriction multipliers.
    pub slope_restriction: bool,
    pub tol_margin: f64,
    /// Below this determinant the solve is repeated with a trace floor.
    pub det_floor: f64,
    pub trace_floor: f64,
    /// Largest ratio between the output-set radius bound and the thinnest semi-axis.
    pub max_aspect: f64,
}

impl Default for EllipsoidSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            slope_restriction: true,
            tol_margin: 1e-6,
            det_floor: 1e-12,
            trace_floor: 1e-6,
            max_aspect: 1e4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidFit {
    pub ellipsoid: Ellipsoid,
    pub status: SolveStatus,
    pub log_det: f64,
    /// Largest eigenvalue of the Gram matrix at the returned point, before rescaling.
    pub certificate_residual: f64,
    /// Factor applied to `(Q, b)` to absorb a positive residual (1 when none was needed).
    pub rescale: f64,
    pub regularized: bool,
    pub solve_time_s: f64,
}

/// `‖(x, z, 1)‖₂²` bound over the region, from `m‖z‖ ≤ ‖U x + u‖`.
fn basis_norm_bound(net: &MonDEQ, pert: &PerturbationSpec) -> f64 {
    let x0n = Norm::L2.of(&pert.x0);
    let xr = x0n + pert.eps * Norm::L2.comparison_factor(pert.q, pert.x0.len());
    let zr = (spectral_norm(&net.u) * xr + net.u_bias.norm()) / net.m;
    1.0 + xr * xr + zr * zr
}

/// Radius bound `ε κ ‖C‖₂ ‖U‖₂ / m` of the output set around `F(x0)`.
fn output_radius_bound(net: &MonDEQ, pert: &PerturbationSpec) -> f64 {
    let kappa = Norm::L2.comparison_factor(pert.q, pert.x0.len());
    pert.eps * kappa * spectral_norm(&net.c) * spectral_norm(&net.u) / net.m
}

fn solve_once(
    net: &MonDEQ,
    pert: &PerturbationSpec,
    settings: &EllipsoidSettings,
    trace_floor: Option<f64>,
) -> Result<(Ellipsoid, MultiplierSet<f64>, SolveStatus)> {
    let r = output_radius_bound(net, pert);
    let cap = settings.max_aspect / if r > 1e-12 { r } else { 1.0 };
    let prog = build_ellipsoid_program(net, pert, settings.slope_restriction, trace_floor, Some(cap))?;
    let sol = solve(&prog.problem, &settings.solver)?;
    // any iterate is usable because the caller repairs the certificate residual
    let usable = sol.status.has_solution()
        || (sol.status == SolveStatus::SolverError && sol.x.len() == prog.problem.n_vars() && sol.x.iter().all(|v| v.is_finite()));
    if !usable {
        return Err(Error::Solver(format!("ellipsoid program ended with status {}", sol.status)));
    }
    let l = &prog.layout;
    let q = l.read_q(&sol.x);
    let q = (&q + q.transpose()) * 0.5;
    Ok((Ellipsoid::new(q, l.read_b(&sol.x))?, l.read_multipliers(&sol.x), sol.status))
}

/// Outer ellipsoid of `F(E)` with maximal `log det Q`.
pub fn min_volume_ellipsoid(net: &MonDEQ, pert: &PerturbationSpec, settings: &EllipsoidSettings) -> Result<EllipsoidFit> {
    pert.q.require_2_or_inf()?;
    if pert.x0.len() != net.p0() {
        return Err(Error::Dimension(format!("x0 has length {}, network expects {}", pert.x0.len(), net.p0())));
    }
    let start = Instant::now();
    let (mut ell, mut mult, mut status) = solve_once(net, pert, settings, None)?;
    let mut regularized = false;
    if ell.q.determinant() < settings.det_floor {
        log::warn!("degenerate ellipsoid (det Q = {:e}); retrying with a trace floor", ell.q.determinant());
        (ell, mult, status) = solve_once(net, pert, settings, Some(settings.trace_floor))?;
        regularized = true;
        if ell.q.determinant() < settings.det_floor {
            return Err(Error::Numerical(format!("degenerate ellipsoid: det Q = {:e}", ell.q.determinant())));
        }
    }

    // x̄ᵀ M x̄ ≤ λ_max(M) ‖x̄‖² on the region, so shrink (Q, b) to absorb λ_max > 0
    let m = assemble_gram(net, pert, &ell.q, &ell.b, &mult)?;
    let residual = lambda_max_sym(&m)?;
    let rescale = if residual > 0.0 { 1.0 / (1.0 + residual * basis_norm_bound(net, pert)).sqrt() } else { 1.0 };
    if rescale < 1.0 {
        ell.q *= rescale;
        ell.b.iter_mut().for_each(|v| *v *= rescale);
    }
    Ok(EllipsoidFit {
        log_det: ell.log_det(),
        ellipsoid: ell,
        status,
        certificate_residual: residual,
        rescale,
        regularized,
        solve_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelGap {
    pub label: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidReport {
    pub y0: usize,
    pub eps: f64,
    pub norm: Norm,
    pub fit: Option<EllipsoidFit>,
    pub gaps: Vec<LabelGap>,
    pub certified: bool,
    pub total_time_s: f64,
}

/// Certifies when every competing label has gap at most `-tol_margin`.
pub fn certify_via_ellipsoid(
    net: &MonDEQ,
    pert: &PerturbationSpec,
    settings: &EllipsoidSettings,
) -> Result<EllipsoidReport> {
    let start = Instant::now();
    let logits = EquilibriumSolver::new(net, FixedPointSettings::default()).forward(&pert.x0)?;
    let y0 = argmax(&logits);
    if net.k() == 1 {
        return Ok(EllipsoidReport {
            y0,
            eps: pert.eps,
            norm: pert.q,
            fit: None,
            gaps: Vec::new(),
            certified: true,
            total_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let fit = min_volume_ellipsoid(net, pert, settings)?;
    let mut gaps = Vec::new();
    for i in (0..net.k()).filter(|&i| i != y0) {
        gaps.push(LabelGap { label: i, gap: ellipsoid_label_gap(&fit.ellipsoid, y0, i)? });
    }
    let certified = gaps.iter().all(|g| g.gap <= -settings.tol_margin);
    Ok(EllipsoidReport {
        y0,
        eps: pert.eps,
        norm: pert.q,
        fit: Some(fit),
        gaps,
        certified,
        total_time_s: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn label_gap_examples() {
        let e = Ellipsoid::new(DMatrix::identity(2, 2), vec![0.0, 0.0]).unwrap();
        assert!((ellipsoid_label_gap(&e, 0, 1).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        let e = Ellipsoid::new(DMatrix::identity(2, 2), vec![0.0, -10.0]).unwrap();
        assert!((ellipsoid_label_gap(&e, 0, 1).unwrap() - (10.0 + 2f64.sqrt())).abs() < 1e-12);
        let e = Ellipsoid::new(DMatrix::identity(2, 2) * 2.0, vec![0.0, 0.0]).unwrap();
        assert!((ellipsoid_label_gap(&e, 0, 1).unwrap() - 2f64.sqrt() / 2.0).abs() < 1e-12);
        let e = Ellipsoid::new(DMatrix::zeros(2, 2), vec![0.0, 0.0]).unwrap();
        assert!(ellipsoid_label_gap(&e, 0, 1).is_err());
    }

    #[test]
    fn contains_sampled_outputs() {
        let net = crate::netio::generate_network(2, 4, 3, 1.0, 11, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for q in [Norm::L2, Norm::Inf] {
            let pert = PerturbationSpec::new(vec![0.2, -0.3], 0.3, q).unwrap();
            let fit = min_volume_ellipsoid(&net, &pert, &EllipsoidSettings::default()).unwrap();
            assert!(fit.log_det.is_finite());
            let solver = EquilibriumSolver::new(&net, FixedPointSettings::default());
            for _ in 0..2000 {
                let x = crate::norm::sample_ball(&mut rng, &pert.x0, pert.eps, q).unwrap();
                let f = solver.forward(&x).unwrap();
                assert!(fit.ellipsoid.contains(&f, 1e-6), "{q}: level {}", fit.ellipsoid.level(&f));
            }
        }
    }

    #[test]
    fn identity_small_ball_certifies() {
        let net = MonDEQ::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            0.5,
        )
        .unwrap();
        let pert = PerturbationSpec::new(vec![1.0, 0.0], 0.1, Norm::Inf).unwrap();
        let r = certify_via_ellipsoid(&net, &pert, &EllipsoidSettings::default()).unwrap();
        assert!(r.certified, "{r:?}");
        let pert = PerturbationSpec::new(vec![1.0, 0.0], 2.0, Norm::Inf).unwrap();
        let r = certify_via_ellipsoid(&net, &pert, &EllipsoidSettings::default()).unwrap();
        assert!(!r.certified);
    }

    #[test]
    fn serde_round_trip() {
        let e = Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]), vec![0.1, -0.2]).unwrap();
        let s = serde_json::to_string(&e).unwrap();
        let back: Ellipsoid = serde_json::from_str(&s).unwrap();
        assert_eq!(e, back);
    }
}
