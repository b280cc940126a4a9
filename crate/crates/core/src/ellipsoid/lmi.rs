//! Linear matrix inequality form of the containment certificate and its
//! conic program with the log-determinant objective.

use nalgebra::DMatrix;

use super::gram::{ball_multiplier_len, gram_linear_part, n_pairs, readout_factor, Basis, MultiplierSet};
use crate::error::Result;
use crate::netio::{MonDEQ, PerturbationSpec};
use crate::sdpcore::{psd_entry, Cone, ConicBuilder, ConicProblem};
use crate::semialg::AffineExpr;

/// `[[-M_lin, Nᵀ], [N, I_K]]`, which is PSD exactly when `-M ⪰ 0`.
pub fn schur_lmi(
    net: &MonDEQ,
    pert: &PerturbationSpec,
    b: &[f64],
    mult: &MultiplierSet<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = net.p0() + net.p() + 1;
    let k = net.k();
    let lin = DMatrix::from_row_slice(n, n, &gram_linear_part(net, pert, mult)?);
    let nf = readout_factor(net, q, b)?;
    let mut out = DMatrix::zeros(n + k, n + k);
    out.view_mut((0, 0), (n, n)).copy_from(&(-lin));
    out.view_mut((n, 0), (k, n)).copy_from(&nf);
    out.view_mut((0, n), (n, k)).copy_from(&nf.transpose());
    out.view_mut((n, n), (k, k)).fill_with_identity();
    Ok(out)
}

/// Variable offsets of the ellipsoid conic program.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidLayout {
    pub p0: usize,
    pub p: usize,
    pub k: usize,
    /// Side of the Gram matrix (`p0 + p + 1`).
    pub gram_side: usize,
    /// Scaled-triangle block of the Schur LMI, side `gram_side + k`.
    pub lmi_off: usize,
    /// `[[Q, Z], [Zᵀ, diag(Z)]]`, side `2k`.
    pub det_off: usize,
    pub sigma_ball_off: usize,
    pub sigma_ball_len: usize,
    pub sigma_affine_off: usize,
    pub sigma_zpos_off: usize,
    pub lambda_off: usize,
    pub lambda_len: usize,
    pub b_off: usize,
    pub tau_off: usize,
    /// First of `k` exponential-cone triples `(t_r, 1, Z_rr)`.
    pub exp_off: usize,
    pub trace_slack_off: Option<usize>,
    /// Slack block `q_cap I - Q`, side `k`.
    pub cap_off: Option<usize>,
}

impl EllipsoidLayout {
    pub fn q_entry(&self, r: usize, s: usize) -> (usize, f64) {
        let (i, sc) = psd_entry(2 * self.k, r, s);
        (self.det_off + i, sc)
    }

    /// Number of scalar unknowns in `(σ_ball, σ_aff, σ_z, τ, b, Q)` counting `Q` as `k²`.
    pub fn certificate_unknowns(&self) -> usize {
        self.sigma_ball_len + 3 * self.p + self.k + self.k * self.k
    }

    pub fn read_q(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |r, s| {
            let (i, sc) = self.q_entry(r, s);
            sc * x[i]
        })
    }

    pub fn read_b(&self, x: &[f64]) -> Vec<f64> {
        x[self.b_off..self.b_off + self.k].to_vec()
    }

    /// Multipliers at a primal point, with sign-constrained ones clipped at zero.
    pub fn read_multipliers(&self, x: &[f64]) -> MultiplierSet<f64> {
        let nn = |o: usize, l: usize| x[o..o + l].iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
        MultiplierSet {
            sigma_ball: nn(self.sigma_ball_off, self.sigma_ball_len),
            sigma_affine: nn(self.sigma_affine_off, self.p),
            sigma_zpos: nn(self.sigma_zpos_off, self.p),
            tau: x[self.tau_off..self.tau_off + self.p].to_vec(),
            lambda: nn(self.lambda_off, self.lambda_len),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EllipsoidProgram {
    pub problem: ConicProblem,
    pub layout: EllipsoidLayout,
}

/// Builds `max Σ log Z_rr` subject to the Schur LMI and the determinant block.
///
/// `q_cap` bounds `Q ⪯ q_cap I`, which keeps the program bounded when the
/// output set is flat.
pub fn build_ellipsoid_program(
    net: &MonDEQ,
    pert: &PerturbationSpec,
    slope: bool,
    trace_floor: Option<f64>,
    q_cap: Option<f64>,
) -> Result<EllipsoidProgram> {
    let (p0, p, k) = (net.p0(), net.p(), net.k());
    let bs = Basis { p0, p };
    let n = bs.len();
    let side = n + k;
    let nb = ball_multiplier_len(p0, pert.q)?;
    let nl = if slope { n_pairs(p) } else { 0 };

    let mut bld = ConicBuilder::new();
    let lmi_off = bld.add_cone(Cone::Psd(side));
    let det_off = bld.add_cone(Cone::Psd(2 * k));
    let nonneg_off = bld.add_cone(Cone::Nonneg(nb + 2 * p + nl));
    let free_off = bld.add_cone(Cone::Free(k + p));
    let exp_off = bld.n_vars();
    for _ in 0..k {
        bld.add_cone(Cone::Exp);
    }
    let trace_slack_off = trace_floor.map(|_| bld.add_cone(Cone::Nonneg(1)));
    let cap_off = q_cap.map(|_| bld.add_cone(Cone::Psd(k)));

    let layout = EllipsoidLayout {
        p0,
        p,
        k,
        gram_side: n,
        lmi_off,
        det_off,
        sigma_ball_off: nonneg_off,
        sigma_ball_len: nb,
        sigma_affine_off: nonneg_off + nb,
        sigma_zpos_off: nonneg_off + nb + p,
        lambda_off: nonneg_off + nb + 2 * p,
        lambda_len: nl,
        b_off: free_off,
        tau_off: free_off + k,
        exp_off,
        trace_slack_off,
        cap_off,
    };

    let vars = |off: usize, len: usize| (off..off + len).map(AffineExpr::var).collect::<Vec<_>>();
    let mult = MultiplierSet {
        sigma_ball: vars(layout.sigma_ball_off, nb),
        sigma_affine: vars(layout.sigma_affine_off, p),
        sigma_zpos: vars(layout.sigma_zpos_off, p),
        tau: vars(layout.tau_off, p),
        lambda: vars(layout.lambda_off, nl),
    };
    let lin = gram_linear_part(net, pert, &mult)?;

    let q_expr = |r: usize, s: usize| {
        let (i, sc) = layout.q_entry(r, s);
        let mut e = AffineExpr::default();
        e.add_term(i, sc);
        e
    };
    // N[r, a] as affine functions of Q and b
    let n_expr = |r: usize, a: usize| -> AffineExpr {
        let mut e = AffineExpr::default();
        if a >= p0 && a < p0 + p {
            let i = a - p0;
            for s in 0..k {
                e = e.add(&q_expr(r, s).scaled(net.c[(s, i)]));
            }
        } else if a == bs.one() {
            for s in 0..k {
                e = e.add(&q_expr(r, s).scaled(net.c_bias[s]));
            }
            e.add_term(layout.b_off + r, 1.0);
        }
        e
    };

    // LMI entries tied to their affine targets
    for col in 0..side {
        for row in 0..=col {
            let target = if col < n {
                lin[row * n + col].scaled(-1.0)
            } else if row < n {
                n_expr(col - n, row)
            } else {
                AffineExpr::constant(if row == col { 1.0 } else { 0.0 })
            };
            let (idx, sc) = psd_entry(side, row, col);
            let mut terms = vec![(lmi_off + idx, sc)];
            terms.extend(target.terms.iter().map(|(&v, &c)| (v, -c)));
            bld.add_row(terms, target.constant);
        }
    }

    // determinant block: Z lower triangular, lower-right block equal to diag(Z)
    let g = |r: usize, s: usize| {
        let (i, sc) = psd_entry(2 * k, r, s);
        (det_off + i, sc)
    };
    for r in 0..k {
        for s in r + 1..k {
            bld.add_row([g(r, k + s)], 0.0);
            bld.add_row([g(k + r, k + s)], 0.0);
        }
        let (d, dsc) = g(k + r, k + r);
        let (z, zsc) = g(r, k + r);
        bld.add_row([(d, dsc), (z, -zsc)], 0.0);
        let e = exp_off + 3 * r;
        bld.add_row([(e + 1, 1.0)], 1.0);
        bld.add_row([(e + 2, 1.0), (z, -zsc)], 0.0);
        bld.add_cost(e, -1.0);
    }

    if let (Some(floor), Some(s)) = (trace_floor, trace_slack_off) {
        let mut terms: Vec<(usize, f64)> = (0..k).map(|r| layout.q_entry(r, r)).collect();
        terms.push((s, -1.0));
        bld.add_row(terms, floor);
    }

    if let (Some(cap), Some(off)) = (q_cap, cap_off) {
        for s in 0..k {
            for r in 0..=s {
                let (i, sc) = psd_entry(k, r, s);
                let (qi, qsc) = layout.q_entry(r, s);
                bld.add_row([(off + i, sc), (qi, qsc)], if r == s { cap } else { 0.0 });
            }
        }
    }

    Ok(EllipsoidProgram { problem: bld.build()?, layout })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ellipsoid::gram::assemble_gram;
    use crate::norm::{lambda_min_sym, Norm};

    #[test]
    fn zero_data_lmi() {
        let net = crate::netio::generate_network(2, 3, 2, 1.0, 1, 1.0).unwrap();
        let pert = PerturbationSpec::new(vec![0.0, 0.0], 0.1, Norm::L2).unwrap();
        let mult = MultiplierSet::<f64>::zeros(&net, Norm::L2, true).unwrap();
        let l = schur_lmi(&net, &pert, &[0.0, 0.0], &mult, &DMatrix::zeros(2, 2)).unwrap();
        let n = 6;
        for i in 0..n + 2 {
            for j in 0..n + 2 {
                let expect = if i == j && (i == n - 1 || i >= n) { 1.0 } else { 0.0 };
                assert_eq!(l[(i, j)], expect, "({i},{j})");
            }
        }
        assert!(lambda_min_sym(&l).unwrap() >= 0.0);
        let m = assemble_gram(&net, &pert, &DMatrix::zeros(2, 2), &[0.0, 0.0], &mult).unwrap();
        assert!(lambda_min_sym(&(-m)).unwrap() >= 0.0);
    }

    #[test]
    fn layout_sizes() {
        let net = crate::netio::generate_network(3, 4, 2, 1.0, 1, 1.0).unwrap();
        let pert = PerturbationSpec::new(vec![0.0; 3], 0.1, Norm::Inf).unwrap();
        let prog = build_ellipsoid_program(&net, &pert, true, None, None).unwrap();
        let l = &prog.layout;
        assert_eq!(l.gram_side, 3 + 4 + 1);
        assert_eq!(l.certificate_unknowns(), 3 + 3 * 4 + 2 + 4);
        assert_eq!(l.lambda_len, 6);
        let prog = build_ellipsoid_program(&net, &pert, false, Some(1e-6), None).unwrap();
        assert_eq!(prog.layout.lambda_len, 0);
        assert!(prog.layout.trace_slack_off.is_some());
    }
}
