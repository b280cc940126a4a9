use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::conic::{Cone, ConicProblem, ConicSolution, SolveStatus, SolverSettings};
use crate::error::{Error, Result};

/// Anything that can solve a [`ConicProblem`].
pub trait ConicBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution>;
}

/// Interior-point backend built on Clarabel.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

fn map_status(s: SolverStatus) -> SolveStatus {
    match s {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => SolveStatus::NearOptimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::SolverError,
    }
}

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution> {
        problem.validate()?;
        let n = problem.n_vars();
        let m_eq = problem.n_rows();

        // rows: A x + s = b with s in the zero cone, then -x + s = 0 per cone block
        let mut rows = Vec::with_capacity(problem.a_triplets.len() + n);
        let mut cols = Vec::with_capacity(rows.capacity());
        let mut vals = Vec::with_capacity(rows.capacity());
        for &(r, c, v) in &problem.a_triplets {
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        if m_eq > 0 {
            cones.push(SupportedConeT::ZeroConeT(m_eq));
        }
        let mut next_row = m_eq;
        let mut var = 0;
        for cone in &problem.cones {
            let d = cone.dim();
            let sc = match *cone {
                Cone::Free(_) => None,
                Cone::Nonneg(k) => Some(SupportedConeT::NonnegativeConeT(k)),
                Cone::SecondOrder(k) => Some(SupportedConeT::SecondOrderConeT(k)),
                Cone::Psd(side) => Some(SupportedConeT::PSDTriangleConeT(side)),
                Cone::Exp => Some(SupportedConeT::ExponentialConeT()),
            };
            if let Some(sc) = sc {
                if d > 0 {
                    for t in 0..d {
                        rows.push(next_row + t);
                        cols.push(var + t);
                        vals.push(-1.0);
                    }
                    next_row += d;
                    cones.push(sc);
                }
            }
            var += d;
        }
        let total_rows = next_row;
        let mut b = problem.b.clone();
        b.resize(total_rows, 0.0);

        let a = CscMatrix::new_from_triplets(total_rows, n, rows, cols, vals);
        let p = CscMatrix::zeros((n, n));

        let mut builder = DefaultSettingsBuilder::default();
        builder
            .max_iter(settings.max_iter)
            .verbose(settings.verbose)
            .tol_gap_abs(settings.tol)
            .tol_gap_rel(settings.tol)
            .tol_feas(settings.tol)
            .presolve_enable(false);
        if let Some(t) = settings.time_limit_s {
            builder.time_limit(t);
        }
        let csettings = builder.build().map_err(|e| Error::Solver(format!("settings: {e:?}")))?;

        let start = Instant::now();
        let mut solver = DefaultSolver::new(&p, &problem.cost, &a, &b, &cones, csettings)
            .map_err(|e| Error::Solver(format!("{e:?}")))?;
        solver.solve();
        let elapsed = start.elapsed().as_secs_f64();

        let sol = &solver.solution;
        let status = map_status(sol.status);
        let objective = if status.has_solution() { Some(problem.objective_at(&sol.x)) } else { None };
        Ok(ConicSolution {
            status,
            objective,
            x: sol.x.clone(),
            y: sol.z[..m_eq].to_vec(),
            solve_time_s: elapsed,
            iterations: sol.iterations,
            message: format!("{:?}", sol.status),
        })
    }
}

/// Solves with the default backend.
pub fn solve(problem: &ConicProblem, settings: &SolverSettings) -> Result<ConicSolution> {
    ClarabelBackend.solve(problem, settings)
}
