use std::collections::BTreeMap;

use nalgebra::DMatrix;

use super::backend::ConicBackend;
use super::conic::{psd_entry, Cone, ConicBuilder, ConicProblem, ConicSolution, SolverSettings};
use crate::error::{Error, Result};
use crate::semialg::{QuadForm, QuadraticProgramSpec, Sense, VarBlock};

/// Row/column layout of the first-order moment matrix: index 0 is the
/// constant monomial, index `1 + v` is variable `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrixLayout {
    pub side: usize,
    pub blocks: Vec<VarBlock>,
}

impl MomentMatrixLayout {
    pub fn index_of(&self, var: usize) -> usize {
        1 + var
    }

    pub fn block(&self, name: &str) -> Option<&VarBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

/// The order-one moment relaxation of a [`QuadraticProgramSpec`].
#[derive(Debug, Clone)]
pub struct ShorRelaxation {
    pub problem: ConicProblem,
    pub layout: MomentMatrixLayout,
    objective_constant: f64,
}

/// Outcome of solving a relaxation.
#[derive(Debug, Clone)]
pub struct ShorSolution {
    /// Upper bound on the maximum of the quadratic program.
    pub bound: Option<f64>,
    pub solution: ConicSolution,
}

/// Coefficients of `L(f)` on the scaled-triangle variables of the moment block.
fn functional_terms(f: &QuadForm, side: usize) -> BTreeMap<usize, f64> {
    let mut terms = BTreeMap::new();
    let mut push = |i: usize, j: usize, coef: f64| {
        let (idx, sc) = psd_entry(side, i, j);
        let mult = if i == j { 1.0 } else { 2.0 };
        *terms.entry(idx).or_insert(0.0) += mult * sc * coef;
    };
    for (&(i, j), &q) in &f.quad {
        push(1 + i, 1 + j, q);
    }
    // l_i x_i = l_i M_{0,i} splits evenly over the two symmetric entries
    for (&i, &l) in &f.linear {
        push(0, 1 + i, 0.5 * l);
    }
    terms
}

/// Builds the moment relaxation: `max L(objective)` over `M ⪰ 0`, `M₀₀ = 1`,
/// `L(g) = 0` for equalities and `L(g) ≥ 0` for inequalities.
pub fn shor_relax(spec: &QuadraticProgramSpec) -> Result<ShorRelaxation> {
    spec.validate()?;
    let n = spec.n_vars();
    let side = n + 1;
    let n_geq = spec.constraints.iter().filter(|c| c.sense == Sense::Geq).count();

    let mut b = ConicBuilder::new();
    let m_off = b.add_cone(Cone::Psd(side));
    let s_off = if n_geq > 0 { b.add_cone(Cone::Nonneg(n_geq)) } else { b.n_vars() };

    b.add_row([(m_off + psd_entry(side, 0, 0).0, 1.0)], 1.0);
    let mut slack = 0;
    for c in &spec.constraints {
        let mut terms: Vec<(usize, f64)> =
            functional_terms(&c.form, side).into_iter().map(|(i, v)| (m_off + i, v)).collect();
        if c.sense == Sense::Geq {
            terms.push((s_off + slack, -1.0));
            slack += 1;
        }
        b.add_row(terms, -c.form.constant);
    }
    for (i, v) in functional_terms(&spec.objective, side) {
        b.add_cost(m_off + i, -v);
    }
    Ok(ShorRelaxation {
        problem: b.build()?,
        layout: MomentMatrixLayout { side, blocks: spec.blocks.clone() },
        objective_constant: spec.objective.constant,
    })
}

impl ShorRelaxation {
    /// Upper bound implied by a solved relaxation.
    pub fn bound(&self, sol: &ConicSolution) -> Option<f64> {
        sol.objective.map(|v| -v + self.objective_constant)
    }

    /// The moment matrix read off a primal point.
    pub fn moment_matrix(&self, sol: &ConicSolution) -> Result<DMatrix<f64>> {
        if sol.x.len() != self.problem.n_vars() {
            return Err(Error::Dimension("solution does not belong to this relaxation".into()));
        }
        let side = self.layout.side;
        Ok(DMatrix::from_fn(side, side, |i, j| {
            let (idx, sc) = psd_entry(side, i, j);
            sc * sol.x[idx]
        }))
    }

    pub fn solve_with(&self, backend: &dyn ConicBackend, settings: &SolverSettings) -> Result<ShorSolution> {
        let solution = backend.solve(&self.problem, settings)?;
        Ok(ShorSolution { bound: self.bound(&solution), solution })
    }

    pub fn solve(&self, settings: &SolverSettings) -> Result<ShorSolution> {
        self.solve_with(&super::backend::ClarabelBackend, settings)
    }
}
