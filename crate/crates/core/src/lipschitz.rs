//! Global Lipschitz upper bounds of the network output over an input ball,
//! the closed-form norm-product baseline, and the margin-based robustness test.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{argmax, EquilibriumSolver, FixedPointSettings};
use crate::netio::MonDEQ;
use crate::norm::{inf_operator_norm, sample_ball, spectral_norm, Norm};
use crate::sdpcore::{shor_relax, SolveStatus, SolverSettings};
use crate::semialg::{
    preactivation_exprs, relu_graph, relu_subgradient, AffineExpr, BlockId, QuadConstraint, QuadForm,
    QuadraticProgramSpec,
};

/// The region `S` on which the Lipschitz constant is bounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub norm: Norm,
}

impl InputBall {
    pub fn new(center: Vec<f64>, radius: f64, norm: Norm) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!("ball radius must be positive, got {radius}")));
        }
        Ok(Self { center, radius, norm })
    }

    /// Whether `B(x0, eps, ‖·‖_q)` lies inside this ball.
    pub fn contains_ball(&self, x0: &[f64], eps: f64, q: Norm) -> Result<()> {
        if x0.len() != self.center.len() {
            return Err(Error::Dimension(format!(
                "query point has length {}, ball center has {}",
                x0.len(),
                self.center.len()
            )));
        }
        let kappa = self.norm.comparison_factor(q, x0.len());
        let needed = self.norm.dist(x0, &self.center) + eps * kappa;
        if needed <= self.radius {
            Ok(())
        } else {
            Err(Error::BallNotContained { needed, radius: self.radius })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    /// Norm used on both inputs and outputs.
    pub q: Norm,
    pub ball: InputBall,
    pub value: f64,
    pub status: SolveStatus,
    pub solve_time_s: f64,
}

/// Builds the quadratic program whose value is the Lipschitz constant of `F`
/// on `S` with respect to `‖·‖_q`, `q ∈ {2, ∞}`.
///
/// Blocks are `t, x, s, z, y, r, v, w`. The objective `tᵀUᵀy` equals
/// `vᵀ C J t` at every feasible point, with `J` an element of the generalized
/// Jacobian of `z(x)`, `t` in the unit `q`-ball and `v` in the unit dual ball.
pub fn build_lipmon(net: &MonDEQ, ball: &InputBall, q: Norm) -> Result<QuadraticProgramSpec> {
    let q = q.require_2_or_inf()?;
    let (p0, p, k) = (net.p0(), net.p(), net.k());
    if ball.center.len() != p0 {
        return Err(Error::Dimension(format!("ball center has length {}, network expects {p0}", ball.center.len())));
    }
    let mut spec = QuadraticProgramSpec::new();
    let t = spec.add_block("t", p0)?;
    let x = spec.add_block("x", p0)?;
    let s = spec.add_block("s", p)?;
    let z = spec.add_block("z", p)?;
    let y = spec.add_block("y", p)?;
    let r = spec.add_block("r", p)?;
    let v = spec.add_block("v", k)?;
    let w = spec.add_block("w", k)?;
    let var = |spec: &QuadraticProgramSpec, b: BlockId, i: usize| AffineExpr::var(spec.var(b, i));

    let sum_sq = |spec: &QuadraticProgramSpec, b: BlockId| {
        let mut f = QuadForm::default();
        for i in 0..spec.block(b).dim {
            let e = var(spec, b, i);
            f.add_scaled(&QuadForm::product(&e, &e), 1.0);
        }
        f
    };
    let unit_ball = |spec: &QuadraticProgramSpec, b: BlockId, tag: &str| -> Vec<QuadConstraint> {
        match q {
            Norm::Inf => (0..spec.block(b).dim)
                .map(|i| {
                    let e = var(spec, b, i);
                    let mut f = QuadForm::product(&e, &e).scaled(-1.0);
                    f.constant = 1.0;
                    QuadConstraint::geq(f, tag)
                })
                .collect(),
            _ => {
                let mut f = sum_sq(spec, b).scaled(-1.0);
                f.constant = 1.0;
                vec![QuadConstraint::geq(f, tag)]
            }
        }
    };

    // (a) direction and dual-direction normalisation
    let mut cons = unit_ball(&spec, t, "t_unit");
    cons.extend(unit_ball(&spec, w, "w_unit"));
    let mut wv = QuadForm { constant: 1.0, ..Default::default() };
    for i in 0..k {
        wv.add_scaled(&QuadForm::product(&var(&spec, w, i), &var(&spec, v, i)), -1.0);
    }
    cons.push(QuadConstraint::geq(wv, "dual_pairing"));
    let mut vv = sum_sq(&spec, v).scaled(-1.0);
    vv.constant = 1.0;
    cons.push(QuadConstraint::geq(vv, "v_unit_l2"));
    if q == Norm::Inf {
        // w doubles as |v|, so Σ w ≤ 1 gives ‖v‖₁ ≤ 1
        let mut budget = AffineExpr::constant(1.0);
        for i in 0..k {
            let (wi, vi) = (var(&spec, w, i), var(&spec, v, i));
            cons.push(QuadConstraint::geq(QuadForm::from_affine(&wi.sub(&vi)), "v_abs_lift"));
            cons.push(QuadConstraint::geq(QuadForm::from_affine(&wi.add(&vi)), "v_abs_lift"));
            budget.add_term(spec.var(w, i), -1.0);
        }
        cons.push(QuadConstraint::geq(QuadForm::from_affine(&budget), "v_l1_budget"));
    }
    spec.extend(cons);

    // (b) x ∈ S
    spec.add_lq_ball(x, &ball.center, ball.radius, ball.norm)?;

    // (c) equilibrium and generalized derivative at it
    let pre = preactivation_exprs(&net.w, &net.u, net.u_bias.as_slice(), spec.block(z), spec.block(x));
    let cons = relu_graph(spec.block(z), &pre)?;
    spec.extend(cons);
    let cons = relu_subgradient(spec.block(s), &pre)?;
    spec.extend(cons);

    // (d) r - Wᵀy - Cᵀv = 0 and y = diag(s) r
    let residual: Vec<AffineExpr> = (0..p)
        .map(|i| {
            let mut e = var(&spec, r, i);
            for j in 0..p {
                e.add_term(spec.var(y, j), -net.w[(j, i)]);
            }
            for l in 0..k {
                e.add_term(spec.var(v, l), -net.c[(l, i)]);
            }
            e
        })
        .collect();
    for e in &residual {
        spec.constraints.push(QuadConstraint::eq(QuadForm::from_affine(e), "adjoint"));
    }
    for i in 0..p {
        let mut f = QuadForm::from_affine(&var(&spec, y, i));
        f.add_scaled(&QuadForm::product(&var(&spec, s, i), &var(&spec, r, i)), -1.0);
        spec.constraints.push(QuadConstraint::eq(f, "y_eq_sr"));
    }

    // (e) norm bounds implied by I - W ⪰ mI and s ∈ [0, 1]
    let c_norm = spectral_norm(&net.c);
    let w_norm = spectral_norm(&net.w);
    let y_scale = c_norm / net.m;
    let r_scale = c_norm * (1.0 + w_norm / net.m);
    for (blk, scale, tag) in [(y, y_scale, "y_norm"), (r, r_scale, "r_norm")] {
        let mut f = sum_sq(&spec, v).scaled(scale * scale);
        f.add_scaled(&sum_sq(&spec, blk), -1.0);
        spec.constraints.push(QuadConstraint::geq(f, tag));
    }

    // (f) products of the adjoint equation with s, z, y, r
    for b in [s, z, y, r] {
        for (i, e) in residual.iter().enumerate() {
            let f = QuadForm::product(&var(&spec, b, i), e);
            spec.constraints.push(QuadConstraint::eq(f, "adjoint_product"));
        }
    }

    let mut obj = QuadForm::default();
    for kk in 0..p0 {
        for i in 0..p {
            obj.add_monomial(spec.var(t, kk), spec.var(y, i), net.u[(i, kk)]);
        }
    }
    spec.objective = obj;
    Ok(spec)
}

/// Solves the relaxation of [`build_lipmon`].
pub fn lipschitz_bound(net: &MonDEQ, ball: &InputBall, q: Norm, settings: &SolverSettings) -> Result<LipschitzBound> {
    let spec = build_lipmon(net, ball, q)?;
    let relax = shor_relax(&spec)?;
    let start = Instant::now();
    let out = relax.solve(settings)?;
    let status = out.solution.status;
    let value = match out.bound {
        Some(v) if status.has_solution() => v.max(0.0),
        _ => return Err(Error::Solver(format!("Lipschitz relaxation ended with status {status}"))),
    };
    Ok(LipschitzBound { q, ball: ball.clone(), value, status, solve_time_s: start.elapsed().as_secs_f64() })
}

/// Norm-product bound `‖C‖_q · ‖U‖₂ / m`, with an extra `√p0` for `q = ∞`.
pub fn baseline_bound(net: &MonDEQ, q: Norm) -> Result<f64> {
    let z2 = spectral_norm(&net.u) / net.m;
    match q.require_2_or_inf()? {
        Norm::Inf => Ok(inf_operator_norm(&net.c) * (net.p0() as f64).sqrt() * z2),
        _ => Ok(spectral_norm(&net.c) * z2),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCertificate {
    pub y0: usize,
    /// Worst-case output movement `ε · L`.
    pub delta: f64,
    /// Clean margin `F_y0 - max_{k≠y0} F_k`.
    pub tau: f64,
    pub certified: bool,
}

/// `2δ < τ - tol_margin`.
pub fn lipschitz_criterion(delta: f64, tau: f64, tol_margin: f64) -> bool {
    2.0 * delta < tau - tol_margin
}

/// Clean prediction and margin at `x0`; the margin is `+∞` for a single output.
pub fn clean_margin(logits: &[f64]) -> (usize, f64) {
    let y0 = argmax(logits);
    let runner_up = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != y0)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    (y0, logits[y0] - runner_up)
}

/// Robustness test from a precomputed global bound.
pub fn certify_via_lipschitz(
    net: &MonDEQ,
    x0: &[f64],
    eps: f64,
    q: Norm,
    bound: &LipschitzBound,
    tol_margin: f64,
) -> Result<LipschitzCertificate> {
    bound.ball.contains_ball(x0, eps, q)?;
    let logits = EquilibriumSolver::new(net, FixedPointSettings::default()).forward(x0)?;
    let (y0, tau) = clean_margin(&logits);
    // ‖x - x0‖_{bound.q} ≤ κ ε, and ‖·‖_∞ ≤ ‖·‖_{bound.q} on outputs
    let kappa = bound.q.comparison_factor(q, x0.len());
    let delta = eps * kappa * bound.value;
    Ok(LipschitzCertificate { y0, delta, tau, certified: lipschitz_criterion(delta, tau, tol_margin) })
}

/// Ball centred at the mean of `points` that covers all of them with margin `eps`.
pub fn default_input_ball(points: &[Vec<f64>], eps: f64, norm: Norm) -> Result<InputBall> {
    let first = points.first().ok_or_else(|| Error::InvalidArgument("no points to cover".into()))?;
    let d = first.len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("points have different lengths".into()));
    }
    let mut center = vec![0.0; d];
    for p in points {
        for (c, v) in center.iter_mut().zip(p) {
            *c += v / points.len() as f64;
        }
    }
    let spread = points.iter().map(|p| norm.dist(p, &center)).fold(0.0, f64::max);
    InputBall::new(center, spread + eps, norm)
}

/// Largest observed `‖F(a) - F(b)‖_q / ‖a - b‖_q` over random pairs in `S`.
///
/// Half of the pairs are independent draws, the other half are close pairs
/// that probe local slopes.
pub fn sampled_lipschitz_lower_bound(net: &MonDEQ, ball: &InputBall, q: Norm, pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let solver = EquilibriumSolver::new(net, FixedPointSettings::default());
    let mut best = 0.0_f64;
    for n in 0..pairs {
        let a = sample_ball(&mut rng, &ball.center, ball.radius, ball.norm)?;
        let b = if n % 2 == 0 {
            sample_ball(&mut rng, &ball.center, ball.radius, ball.norm)?
        } else {
            sample_ball(&mut rng, &a, 1e-3 * ball.radius, ball.norm)?
        };
        let d_in = q.dist(&a, &b);
        if d_in < 1e-12 {
            continue;
        }
        let fa = solver.forward(&a)?;
        let fb = solver.forward(&b)?;
        best = best.max(q.dist(&fa, &fb) / d_in);
    }
    Ok(best)
}

/// Operator norm `‖C J(x)‖_{q→q}` of the output Jacobian at one point.
pub fn local_jacobian_norm(net: &MonDEQ, x: &[f64], q: Norm) -> Result<f64> {
    let j: DMatrix<f64> = EquilibriumSolver::new(net, FixedPointSettings::default()).jacobian(x)?;
    crate::norm::operator_norm(&j, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn scalar_net() -> MonDEQ {
        MonDEQ::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 1.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 3.0),
            DVector::zeros(1),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn lipmon_block_count() {
        let net = crate::netio::generate_network(3, 4, 2, 1.0, 1, 1.0).unwrap();
        let ball = InputBall::new(vec![0.0; 3], 1.0, Norm::L2).unwrap();
        let spec = build_lipmon(&net, &ball, Norm::L2).unwrap();
        assert_eq!(spec.n_vars(), 2 * 3 + 4 * 4 + 2 * 2);
        let spec = build_lipmon(&net, &ball, Norm::Inf).unwrap();
        assert_eq!(spec.n_vars(), 2 * 3 + 4 * 4 + 2 * 2);
        assert!(build_lipmon(&net, &ball, Norm::L1).is_err());
    }

    #[test]
    fn scalar_chain_rule() {
        let net = scalar_net();
        let ball = InputBall::new(vec![2.0], 1.0, Norm::L2).unwrap();
        for q in [Norm::L2, Norm::Inf] {
            let b = lipschitz_bound(&net, &ball, q, &SolverSettings::default()).unwrap();
            assert!(b.value >= 6.0 - 1e-5, "{q}: {}", b.value);
            assert!(b.value <= 6.0 + 1e-3, "{q}: {}", b.value);
        }
    }

    #[test]
    fn identity_on_active_region() {
        let net = MonDEQ::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![5.0, 5.0]),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            1.0,
        )
        .unwrap();
        let ball = InputBall::new(vec![0.0, 0.0], 1.0, Norm::L2).unwrap();
        let b = lipschitz_bound(&net, &ball, Norm::L2, &SolverSettings::default()).unwrap();
        assert!(b.value >= 1.0 - 1e-6, "{}", b.value);
    }

    #[test]
    fn zero_readout_gives_zero() {
        let net = MonDEQ::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::zeros(2, 2),
            DVector::zeros(2),
            1.0,
        )
        .unwrap();
        let ball = InputBall::new(vec![0.0, 0.0], 1.0, Norm::Inf).unwrap();
        let b = lipschitz_bound(&net, &ball, Norm::L2, &SolverSettings::default()).unwrap();
        assert!(b.value.abs() < 1e-5, "{}", b.value);
    }

    #[test]
    fn baseline_examples() {
        // W = -I so that I - W ⪰ 2I
        let net = MonDEQ::new(
            -DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            2.0,
        )
        .unwrap();
        assert!((baseline_bound(&net, Norm::L2).unwrap() - 0.5).abs() < 1e-9);
        let mut net2 = net.clone();
        net2.c = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 3.0]);
        let expected = 3.0 * 2f64.sqrt() * 0.5;
        assert!((baseline_bound(&net2, Norm::Inf).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn criterion_boundary() {
        assert!(lipschitz_criterion(0.4, 1.0, 1e-6));
        assert!(!lipschitz_criterion(0.5, 1.0, 1e-6));
    }

    #[test]
    fn containment_is_enforced() {
        let net = scalar_net();
        let bound = LipschitzBound {
            q: Norm::L2,
            ball: InputBall::new(vec![0.0], 1.0, Norm::L2).unwrap(),
            value: 6.0,
            status: SolveStatus::Optimal,
            solve_time_s: 0.0,
        };
        assert!(matches!(
            certify_via_lipschitz(&net, &[0.9], 0.2, Norm::L2, &bound, 1e-6),
            Err(Error::BallNotContained { .. })
        ));
        assert!(certify_via_lipschitz(&net, &[0.5], 0.2, Norm::L2, &bound, 1e-6).is_ok());
    }

    #[test]
    fn mixed_norm_containment() {
        let ball = InputBall::new(vec![0.0; 4], 1.0, Norm::L2).unwrap();
        // the ∞-ball of radius 0.5 reaches ‖·‖₂ = 1 at its corners
        assert!(ball.contains_ball(&[0.0; 4], 0.5, Norm::Inf).is_ok());
        assert!(ball.contains_ball(&[0.0; 4], 0.51, Norm::Inf).is_err());
    }

    #[test]
    fn default_ball_covers_points() {
        let pts = vec![vec![0.0, 0.0], vec![2.0, 0.0], vec![1.0, 3.0]];
        let b = default_input_ball(&pts, 0.1, Norm::L2).unwrap();
        for p in &pts {
            assert!(b.contains_ball(p, 0.1, Norm::L2).is_ok());
        }
    }

    #[test]
    fn sampled_bound_is_below_sdp() {
        let net = crate::netio::generate_network(2, 3, 2, 1.0, 5, 1.0).unwrap();
        let ball = InputBall::new(vec![0.0, 0.0], 1.0, Norm::L2).unwrap();
        for q in [Norm::L2, Norm::Inf] {
            let b = lipschitz_bound(&net, &ball, q, &SolverSettings::default()).unwrap();
            let lo = sampled_lipschitz_lower_bound(&net, &ball, q, 2000, 3).unwrap();
            assert!(b.value >= lo - 1e-6, "{q}: sdp {} < sampled {lo}", b.value);
        }
    }
}
