use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A cone block over a contiguous run of variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    Free(usize),
    Nonneg(usize),
    /// `x0 ≥ ‖x_{1:}‖₂`.
    SecondOrder(usize),
    /// Symmetric PSD matrix of the given side, stored as the scaled upper
    /// triangle (column by column, off-diagonals multiplied by `√2`).
    Psd(usize),
    /// `{(a, b, c) : b·exp(a/b) ≤ c, b > 0}` (closure).
    Exp,
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Free(n) | Cone::Nonneg(n) | Cone::SecondOrder(n) => n,
            Cone::Psd(side) => side * (side + 1) / 2,
            Cone::Exp => 3,
        }
    }
}

/// Position and scale of matrix entry `(i, j)` in a scaled-triangle PSD block:
/// `M_ij = scale · x[offset + index]`.
pub fn psd_entry(side: usize, i: usize, j: usize) -> (usize, f64) {
    assert!(i < side && j < side, "entry ({i}, {j}) outside a {side}×{side} block");
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    let idx = c * (c + 1) / 2 + r;
    let scale = if r == c { 1.0 } else { std::f64::consts::FRAC_1_SQRT_2 };
    (idx, scale)
}

/// `minimize cᵀx + offset  s.t.  A x = b,  x ∈ K₁ × K₂ × …`
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProblem {
    pub cost: Vec<f64>,
    pub objective_offset: f64,
    /// Equality rows as `(row, col, value)` triplets; duplicates are summed.
    pub a_triplets: Vec<(usize, usize, f64)>,
    pub b: Vec<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn n_vars(&self) -> usize {
        self.cones.iter().map(Cone::dim).sum()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.cost.len() != n {
            return Err(Error::Dimension(format!("cost has length {} but cones cover {n} variables", self.cost.len())));
        }
        let m = self.b.len();
        for &(r, c, v) in &self.a_triplets {
            if r >= m || c >= n {
                return Err(Error::Dimension(format!("triplet ({r}, {c}) outside a {m}×{n} constraint matrix")));
            }
            if !v.is_finite() {
                return Err(Error::Numerical(format!("non-finite coefficient at ({r}, {c})")));
            }
        }
        if self.b.iter().chain(&self.cost).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite cost or right-hand side".into()));
        }
        Ok(())
    }

    /// Residual `‖A x - b‖_∞`.
    pub fn equality_residual(&self, x: &[f64]) -> f64 {
        let mut r: Vec<f64> = self.b.iter().map(|v| -v).collect();
        for &(i, j, v) in &self.a_triplets {
            r[i] += v * x[j];
        }
        r.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective_offset + self.cost.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Incremental construction of a [`ConicProblem`].
#[derive(Debug, Clone, Default)]
pub struct ConicBuilder {
    problem: ConicProblem,
}

impl ConicBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a cone block and returns the offset of its first variable.
    pub fn add_cone(&mut self, cone: Cone) -> usize {
        let off = self.problem.n_vars();
        self.problem.cones.push(cone);
        self.problem.cost.resize(off + cone.dim(), 0.0);
        off
    }

    /// Appends `Σ coef·x = rhs` and returns its row index.
    pub fn add_row<I: IntoIterator<Item = (usize, f64)>>(&mut self, terms: I, rhs: f64) -> usize {
        let row = self.problem.b.len();
        self.problem.b.push(rhs);
        for (j, v) in terms {
            if v != 0.0 {
                self.problem.a_triplets.push((row, j, v));
            }
        }
        row
    }

    pub fn add_cost(&mut self, j: usize, v: f64) {
        self.problem.cost[j] += v;
    }

    pub fn add_offset(&mut self, v: f64) {
        self.problem.objective_offset += v;
    }

    pub fn n_vars(&self) -> usize {
        self.problem.n_vars()
    }

    pub fn build(self) -> Result<ConicProblem> {
        self.problem.validate()?;
        Ok(self.problem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    SolverError,
}

impl SolveStatus {
    pub fn has_solution(&self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::NearOptimal => "near_optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::SolverError => "solver_error",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iter: u32,
    /// Absolute and relative gap tolerance and feasibility tolerance.
    pub tol: f64,
    pub verbose: bool,
    pub time_limit_s: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-8, verbose: false, time_limit_s: None }
    }
}

impl SolverSettings {
    pub const TOL_ENV: &'static str = "MONDEQ_SOLVER_TOL";

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Applies `MONDEQ_SOLVER_TOL` when it is set to a positive number.
    pub fn with_env_override(mut self) -> Self {
        if let Some(t) = std::env::var(Self::TOL_ENV).ok().and_then(|s| s.trim().parse::<f64>().ok()) {
            if t > 0.0 && t.is_finite() {
                self.tol = t;
            }
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// `cᵀx + offset`, present when a (near-)optimal point was returned.
    pub objective: Option<f64>,
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y: Vec<f64>,
    pub solve_time_s: f64,
    pub iterations: u32,
    pub message: String,
}
