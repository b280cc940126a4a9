//! Per-label upper bounds on the logit gap over an input ball, and the
//! robustness verdict built from them.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{argmax, EquilibriumSolver, FixedPointSettings};
use crate::netio::{MonDEQ, PerturbationSpec};
use crate::norm::Norm;
use crate::sdpcore::{shor_relax, SolveStatus, SolverSettings};
use crate::semialg::{preactivation_exprs, relu_graph, AffineExpr, QuadForm, QuadraticProgramSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessSettings {
    pub solver: SolverSettings,
    /// A bound counts as negative only when it is at most `-tol_margin`.
    pub tol_margin: f64,
    /// Stop at the first label whose bound is not negative.
    pub early_exit: bool,
    pub fixed_point: FixedPointSettings,
}

impl Default for RobustnessSettings {
    fn default() -> Self {
        Self {
            solver: SolverSettings::default(),
            tol_margin: 1e-6,
            early_exit: true,
            fixed_point: FixedPointSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelBound {
    pub label: usize,
    /// Upper bound on `max_{x ∈ E} F_label(x) - F_y0(x)`.
    pub bound: Option<f64>,
    pub status: SolveStatus,
    pub solve_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub y0: usize,
    pub eps: f64,
    pub norm: Norm,
    pub clean_logits: Vec<f64>,
    pub bounds: Vec<LabelBound>,
    /// Labels left unsolved after an early exit.
    pub skipped: Vec<usize>,
    pub certified: bool,
    pub reason: Option<String>,
    pub total_time_s: f64,
}

/// `max (C_i - C_y0) z + c_i - c_y0  s.t.  z = ReLU(W z + U x + u), x ∈ E`.
pub fn build_certmon(net: &MonDEQ, pert: &PerturbationSpec, y0: usize, i: usize) -> Result<QuadraticProgramSpec> {
    let k = net.k();
    if y0 >= k || i >= k {
        return Err(Error::InvalidArgument(format!("labels ({y0}, {i}) out of range for {k} outputs")));
    }
    if i == y0 {
        return Err(Error::InvalidArgument("competing label must differ from the reference label".into()));
    }
    if pert.x0.len() != net.p0() {
        return Err(Error::Dimension(format!("x0 has length {}, network expects {}", pert.x0.len(), net.p0())));
    }
    let mut spec = QuadraticProgramSpec::new();
    let x = spec.add_block("x", net.p0())?;
    let z = spec.add_block("z", net.p())?;
    spec.add_lq_ball(x, &pert.x0, pert.eps, pert.q)?;
    let pre = preactivation_exprs(&net.w, &net.u, net.u_bias.as_slice(), spec.block(z), spec.block(x));
    let cons = relu_graph(spec.block(z), &pre)?;
    spec.extend(cons);

    let mut obj = AffineExpr::constant(net.c_bias[i] - net.c_bias[y0]);
    for j in 0..net.p() {
        obj.add_term(spec.var(z, j), net.c[(i, j)] - net.c[(y0, j)]);
    }
    spec.objective = QuadForm::from_affine(&obj);
    Ok(spec)
}

/// Solves the relaxation for one competing label.
pub fn label_bound(
    net: &MonDEQ,
    pert: &PerturbationSpec,
    y0: usize,
    i: usize,
    settings: &SolverSettings,
) -> Result<LabelBound> {
    let spec = build_certmon(net, pert, y0, i)?;
    let relax = shor_relax(&spec)?;
    let start = Instant::now();
    let out = relax.solve(settings)?;
    let status = out.solution.status;
    Ok(LabelBound {
        label: i,
        bound: if status.has_solution() { out.bound } else { None },
        status,
        solve_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Certifies `argmax F(x) = y0` on the whole ball, where `y0` is the clean prediction.
pub fn certify_robustness(
    net: &MonDEQ,
    pert: &PerturbationSpec,
    settings: &RobustnessSettings,
) -> Result<RobustnessReport> {
    let start = Instant::now();
    let solver = EquilibriumSolver::new(net, settings.fixed_point);
    let logits = solver.forward(&pert.x0)?;
    let y0 = argmax(&logits);

    // closest competitors first
    let mut order: Vec<usize> = (0..net.k()).filter(|&i| i != y0).collect();
    order.sort_by(|&a, &b| (logits[y0] - logits[a]).total_cmp(&(logits[y0] - logits[b])));

    let mut bounds = Vec::new();
    let mut skipped = Vec::new();
    let mut reason = None;
    for (pos, &i) in order.iter().enumerate() {
        let lb = label_bound(net, pert, y0, i, &settings.solver)?;
        let ok = matches!(lb.bound, Some(v) if v <= -settings.tol_margin) && lb.status.has_solution();
        if !ok && reason.is_none() {
            reason = Some(match lb.bound {
                Some(v) if lb.status.has_solution() => format!("label {i}: gap bound {v:.6e} is not negative"),
                _ => format!("label {i}: solver status {}", lb.status),
            });
        }
        bounds.push(lb);
        if !ok && settings.early_exit {
            skipped.extend_from_slice(&order[pos + 1..]);
            break;
        }
    }
    Ok(RobustnessReport {
        y0,
        eps: pert.eps,
        norm: pert.q,
        clean_logits: logits,
        certified: reason.is_none(),
        bounds,
        skipped,
        reason,
        total_time_s: start.elapsed().as_secs_f64(),
    })
}
