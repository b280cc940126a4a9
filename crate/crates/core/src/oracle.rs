//! Exact logit-gap maxima for small networks by enumerating ReLU activation
//! patterns. On a fixed pattern the equilibrium is affine in `x`, so each
//! cell is a linear (q = ∞) or second-order cone (q = 2) program.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{argmax, EquilibriumSolver, FixedPointSettings};
use crate::netio::{MonDEQ, PerturbationSpec};
use crate::norm::Norm;
use crate::sdpcore::{solve, Cone, ConicBuilder, SolveStatus, SolverSettings};

pub const MAX_HIDDEN: usize = 12;

/// One activation pattern and the polyhedron of inputs that realise it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCell {
    pub active: Vec<bool>,
    /// Rows `(a, b)` meaning `aᵀx ≤ b`.
    pub region: Vec<(Vec<f64>, f64)>,
    /// `z = gain · x + offset` on the cell (all hidden units, inactive rows zero).
    pub gain: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl PatternCell {
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.region.iter().all(|(a, b)| a.iter().zip(x).map(|(u, v)| u * v).sum::<f64>() <= b + tol)
    }

    pub fn equilibrium(&self, x: &[f64]) -> Vec<f64> {
        self.gain
            .iter()
            .zip(&self.offset)
            .map(|(g, o)| o + g.iter().zip(x).map(|(u, v)| u * v).sum::<f64>())
            .collect()
    }
}

/// Builds the affine equilibrium and sign conditions for a pattern.
pub fn pattern_cell(net: &MonDEQ, active: &[bool]) -> Result<PatternCell> {
    let (p0, p) = (net.p0(), net.p());
    if active.len() != p {
        return Err(Error::Dimension(format!("pattern has length {}, network has {p} hidden units", active.len())));
    }
    let idx: Vec<usize> = (0..p).filter(|&i| active[i]).collect();
    let na = idx.len();
    let mut gain = DMatrix::zeros(p, p0);
    let mut offset = DVector::zeros(p);
    if na > 0 {
        let lhs = DMatrix::from_fn(na, na, |r, c| if r == c { 1.0 } else { 0.0 } - net.w[(idx[r], idx[c])]);
        let mut rhs = DMatrix::zeros(na, p0 + 1);
        for (r, &i) in idx.iter().enumerate() {
            for k in 0..p0 {
                rhs[(r, k)] = net.u[(i, k)];
            }
            rhs[(r, p0)] = net.u_bias[i];
        }
        let sol = lhs.lu().solve(&rhs).ok_or_else(|| Error::Numerical("singular pattern system".into()))?;
        for (r, &i) in idx.iter().enumerate() {
            for k in 0..p0 {
                gain[(i, k)] = sol[(r, k)];
            }
            offset[i] = sol[(r, p0)];
        }
    }
    // preactivation = (W gain + U) x + (W offset + u)
    let pre_gain = &net.w * &gain + &net.u;
    let pre_off = &net.w * &offset + &net.u_bias;
    let mut region = Vec::with_capacity(p);
    for i in 0..p {
        if active[i] {
            // z_i ≥ 0
            region.push(((0..p0).map(|k| -gain[(i, k)]).collect(), offset[i]));
        } else {
            // preactivation ≤ 0
            region.push(((0..p0).map(|k| pre_gain[(i, k)]).collect(), -pre_off[i]));
        }
    }
    Ok(PatternCell {
        active: active.to_vec(),
        region,
        gain: gain.row_iter().map(|r| r.iter().copied().collect()).collect(),
        offset: offset.iter().copied().collect(),
    })
}

/// `max cᵀx` over the cell intersected with the ball; `None` when empty.
fn cell_max(cell: &PatternCell, pert: &PerturbationSpec, c: &[f64], settings: &SolverSettings) -> Result<Option<f64>> {
    let p0 = pert.x0.len();
    let mut b = ConicBuilder::new();
    let x = b.add_cone(Cone::Free(p0));
    let s = b.add_cone(Cone::Nonneg(cell.region.len()));
    for (r, (a, rhs)) in cell.region.iter().enumerate() {
        let mut terms: Vec<(usize, f64)> = a.iter().enumerate().map(|(k, v)| (x + k, *v)).collect();
        terms.push((s + r, 1.0));
        b.add_row(terms, *rhs);
    }
    match pert.q {
        Norm::Inf => {
            let box_s = b.add_cone(Cone::Nonneg(2 * p0));
            for k in 0..p0 {
                b.add_row([(x + k, 1.0), (box_s + 2 * k, 1.0)], pert.x0[k] + pert.eps);
                b.add_row([(x + k, -1.0), (box_s + 2 * k + 1, 1.0)], pert.eps - pert.x0[k]);
            }
        }
        Norm::Finite(2) => {
            let soc = b.add_cone(Cone::SecondOrder(1 + p0));
            b.add_row([(soc, 1.0)], pert.eps);
            for k in 0..p0 {
                b.add_row([(soc + 1 + k, 1.0), (x + k, -1.0)], -pert.x0[k]);
            }
        }
        other => return Err(Error::UnsupportedNorm(other.to_string(), "2, inf")),
    }
    for (k, v) in c.iter().enumerate() {
        b.add_cost(x + k, -v);
    }
    let sol = solve(&b.build()?, settings)?;
    match sol.status {
        SolveStatus::Infeasible => Ok(None),
        st if st.has_solution() => Ok(sol.objective.map(|v| -v)),
        // a cell without interior is covered by the closures of its neighbours
        _ if interior_radius(cell, pert, settings)? <= THIN_CELL => Ok(None),
        st => Err(Error::Solver(format!("pattern subproblem ended with status {st} ({})", sol.message))),
    }
}

const THIN_CELL: f64 = 1e-7;

/// Radius of the largest ball inside the cell whose center lies in the
/// perturbation set, capped at 1; negative when the intersection is empty.
fn interior_radius(cell: &PatternCell, pert: &PerturbationSpec, settings: &SolverSettings) -> Result<f64> {
    let p0 = pert.x0.len();
    let mut b = ConicBuilder::new();
    let x = b.add_cone(Cone::Free(p0));
    let t = b.add_cone(Cone::Free(1));
    let s = b.add_cone(Cone::Nonneg(cell.region.len() + 1));
    for (r, (a, rhs)) in cell.region.iter().enumerate() {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut terms: Vec<(usize, f64)> = a.iter().enumerate().map(|(k, v)| (x + k, *v)).collect();
        terms.extend([(t, norm), (s + r, 1.0)]);
        b.add_row(terms, *rhs);
    }
    b.add_row([(t, 1.0), (s + cell.region.len(), 1.0)], 1.0);
    match pert.q {
        Norm::Inf => {
            let box_s = b.add_cone(Cone::Nonneg(2 * p0));
            for k in 0..p0 {
                b.add_row([(x + k, 1.0), (box_s + 2 * k, 1.0)], pert.x0[k] + pert.eps);
                b.add_row([(x + k, -1.0), (box_s + 2 * k + 1, 1.0)], pert.eps - pert.x0[k]);
            }
        }
        _ => {
            let soc = b.add_cone(Cone::SecondOrder(1 + p0));
            b.add_row([(soc, 1.0)], pert.eps);
            for k in 0..p0 {
                b.add_row([(soc + 1 + k, 1.0), (x + k, -1.0)], -pert.x0[k]);
            }
        }
    }
    b.add_cost(t, -1.0);
    let sol = solve(&b.build()?, settings)?;
    match sol.objective {
        Some(v) if sol.status.has_solution() => Ok(-v),
        _ => Err(Error::Solver(format!("cell interior test ended with status {} ({})", sol.status, sol.message))),
    }
}

fn check_size(net: &MonDEQ, pert: &PerturbationSpec) -> Result<()> {
    if net.p() > MAX_HIDDEN {
        return Err(Error::InvalidArgument(format!(
            "exhaustive enumeration is limited to {MAX_HIDDEN} hidden units, network has {}",
            net.p()
        )));
    }
    if pert.x0.len() != net.p0() {
        return Err(Error::Dimension(format!("x0 has length {}, network expects {}", pert.x0.len(), net.p0())));
    }
    pert.q.require_2_or_inf()?;
    Ok(())
}

fn patterns(p: usize) -> impl Iterator<Item = Vec<bool>> {
    (0u32..(1u32 << p)).map(move |mask| (0..p).map(|i| mask >> i & 1 == 1).collect())
}

/// Linear objective in `x` and constant for `ξᵀz` on a cell.
fn objective_on_cell(cell: &PatternCell, xi: &[f64]) -> (Vec<f64>, f64) {
    let p0 = cell.gain.first().map_or(0, |g| g.len());
    let mut c = vec![0.0; p0];
    let mut c0 = 0.0;
    for (i, w) in xi.iter().enumerate() {
        for k in 0..p0 {
            c[k] += w * cell.gain[i][k];
        }
        c0 += w * cell.offset[i];
    }
    (c, c0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactGap {
    pub label: usize,
    /// `max_{x ∈ E} F_label(x) - F_y0(x)`.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub y0: usize,
    pub gaps: Vec<ExactGap>,
    pub feasible_patterns: usize,
    pub total_patterns: usize,
    pub robust: bool,
}

/// Exact gap maxima for every label other than `y0`.
pub fn exact_gaps(net: &MonDEQ, pert: &PerturbationSpec, y0: usize, settings: &SolverSettings) -> Result<OracleReport> {
    check_size(net, pert)?;
    let (p, k) = (net.p(), net.k());
    if y0 >= k {
        return Err(Error::InvalidArgument(format!("label {y0} out of range for {k} outputs")));
    }
    let labels: Vec<usize> = (0..k).filter(|&i| i != y0).collect();
    let xis: Vec<Vec<f64>> =
        labels.iter().map(|&i| (0..p).map(|j| net.c[(i, j)] - net.c[(y0, j)]).collect()).collect();
    let bias: Vec<f64> = labels.iter().map(|&i| net.c_bias[i] - net.c_bias[y0]).collect();
    let mut best = vec![f64::NEG_INFINITY; labels.len()];
    let mut feasible = 0;
    for active in patterns(p) {
        let cell = pattern_cell(net, &active)?;
        let mut cell_feasible = true;
        for (li, xi) in xis.iter().enumerate() {
            let (c, c0) = objective_on_cell(&cell, xi);
            match cell_max(&cell, pert, &c, settings)? {
                Some(v) => best[li] = best[li].max(v + c0 + bias[li]),
                None => {
                    cell_feasible = false;
                    break;
                }
            }
        }
        if cell_feasible {
            feasible += 1;
        }
    }
    let gaps: Vec<ExactGap> = labels.iter().zip(&best).map(|(&label, &gap)| ExactGap { label, gap }).collect();
    Ok(OracleReport {
        y0,
        robust: gaps.iter().all(|g| g.gap < 0.0),
        gaps,
        feasible_patterns: feasible,
        total_patterns: 1 << p,
    })
}

/// Exact gap for a single competing label.
pub fn exact_gap(net: &MonDEQ, pert: &PerturbationSpec, y0: usize, i: usize, settings: &SolverSettings) -> Result<f64> {
    if i == y0 || i >= net.k() {
        return Err(Error::InvalidArgument(format!("bad competing label {i}")));
    }
    let r = exact_gaps(net, pert, y0, settings)?;
    Ok(r.gaps.into_iter().find(|g| g.label == i).map(|g| g.gap).unwrap_or(f64::NEG_INFINITY))
}

/// Oracle at the clean prediction of `x0`.
pub fn exact_certify(net: &MonDEQ, pert: &PerturbationSpec, settings: &SolverSettings) -> Result<OracleReport> {
    let logits = EquilibriumSolver::new(net, FixedPointSettings::default()).forward(&pert.x0)?;
    exact_gaps(net, pert, argmax(&logits), settings)
}

/// All patterns whose cell meets the ball.
pub fn feasible_cells(net: &MonDEQ, pert: &PerturbationSpec, settings: &SolverSettings) -> Result<Vec<PatternCell>> {
    check_size(net, pert)?;
    let mut out = Vec::new();
    for active in patterns(net.p()) {
        let cell = pattern_cell(net, &active)?;
        if cell_max(&cell, pert, &vec![0.0; net.p0()], settings)?.is_some() {
            out.push(cell);
        }
    }
    Ok(out)
}
