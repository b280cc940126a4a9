//! Monotone equilibrium network parameters, perturbation regions, the JSON
//! network format, and seeded generation of networks that satisfy the
//! strong-monotonicity condition `I - W ⪰ mI`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::{lambda_min_sym, Norm};

/// Default slack on the monotonicity eigenvalue test.
pub const DEFAULT_TOL_MONO: f64 = 1e-8;

/// A fully connected monotone equilibrium network
/// `F(x) = C z + c` with `z = ReLU(W z + U x + u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MonDEQ {
    /// Hidden-to-hidden weights, `p × p`.
    pub w: DMatrix<f64>,
    /// Input-to-hidden weights, `p × p0`.
    pub u: DMatrix<f64>,
    /// Hidden bias, length `p`.
    pub u_bias: DVector<f64>,
    /// Readout, `K × p`.
    pub c: DMatrix<f64>,
    /// Readout bias, length `K`.
    pub c_bias: DVector<f64>,
    /// Monotonicity margin.
    pub m: f64,
    pub normalization: Option<NormalizationSpec>,
}

/// Input preprocessing constants carried with a network file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub mu: f64,
    pub sigma: f64,
}

impl NormalizationSpec {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mu.is_finite() {
            return Err(Error::InvalidArgument(format!("normalization needs sigma > 0, got {sigma}")));
        }
        Ok(Self { mu, sigma })
    }

    /// Radius in normalized input units.
    pub fn scale_radius(&self, eps: f64) -> f64 {
        eps / self.sigma
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mu) / self.sigma
    }
}

/// The input region `E = B(x0, eps, ‖·‖_q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub x0: Vec<f64>,
    pub eps: f64,
    pub q: Norm,
}

impl PerturbationSpec {
    pub fn new(x0: Vec<f64>, eps: f64, q: Norm) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("x0 has non-finite entries".into()));
        }
        Ok(Self { x0, eps, q })
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        self.q.dist(x, &self.x0) <= self.eps + slack
    }
}

/// Outcome of the monotonicity eigenvalue test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonotoneCheck {
    pub lambda_min: f64,
    pub ok: bool,
}

impl MonDEQ {
    /// Assemble a network, checking shapes and the monotonicity condition.
    pub fn new(
        w: DMatrix<f64>,
        u: DMatrix<f64>,
        u_bias: DVector<f64>,
        c: DMatrix<f64>,
        c_bias: DVector<f64>,
        m: f64,
    ) -> Result<Self> {
        let net = Self { w, u, u_bias, c, c_bias, m, normalization: None };
        net.check_shapes()?;
        net.require_monotone(DEFAULT_TOL_MONO)?;
        Ok(net)
    }

    pub fn p0(&self) -> usize {
        self.u.ncols()
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn k(&self) -> usize {
        self.c.nrows()
    }

    pub fn with_normalization(mut self, norm: Option<NormalizationSpec>) -> Self {
        self.normalization = norm;
        self
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (p, p0, k) = (self.p(), self.p0(), self.k());
        if p == 0 || p0 == 0 || k == 0 {
            return Err(Error::Dimension(format!("p0={p0}, p={p}, K={k} must all be >= 1")));
        }
        if self.w.ncols() != p {
            return Err(Error::Dimension(format!("W is {}x{}, expected square", p, self.w.ncols())));
        }
        if self.u.nrows() != p {
            return Err(Error::Dimension(format!("U has {} rows, expected p={p}", self.u.nrows())));
        }
        if self.u_bias.len() != p {
            return Err(Error::Dimension(format!("u has length {}, expected p={p}", self.u_bias.len())));
        }
        if self.c.ncols() != p {
            return Err(Error::Dimension(format!("C has {} columns, expected p={p}", self.c.ncols())));
        }
        if self.c_bias.len() != k {
            return Err(Error::Dimension(format!("c has length {}, expected K={k}", self.c_bias.len())));
        }
        if !(self.m > 0.0) || !self.m.is_finite() {
            return Err(Error::InvalidArgument(format!("monotonicity margin m must be positive, got {}", self.m)));
        }
        let finite = self.w.iter().chain(self.u.iter()).chain(self.u_bias.iter())
            .chain(self.c.iter()).chain(self.c_bias.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("network has non-finite parameters".into()));
        }
        Ok(())
    }

    fn require_monotone(&self, tol_mono: f64) -> Result<()> {
        let check = validate_monotone(self, tol_mono)?;
        if !check.ok {
            return Err(Error::Monotonicity { lambda_min: check.lambda_min, m: self.m });
        }
        Ok(())
    }

    /// `W z + U x + u`.
    pub fn preactivation(&self, z: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        &self.w * z + &self.u * x + &self.u_bias
    }
}

/// `lambda_min` of the symmetric part of `I - W`, and whether it clears `m - tol_mono`.
pub fn validate_monotone(net: &MonDEQ, tol_mono: f64) -> Result<MonotoneCheck> {
    let p = net.p();
    let i_minus_w = DMatrix::<f64>::identity(p, p) - &net.w;
    let lambda_min = lambda_min_sym(&i_minus_w)?;
    Ok(MonotoneCheck { lambda_min, ok: lambda_min >= net.m - tol_mono })
}

/// Seeded random network with `I - W ⪰ mI` by construction.
///
/// `W = (1 - m) I - AᵀA + B - Bᵀ` with `A, B` i.i.d. `N(0, scale²/p)`. The
/// remaining parameters are Gaussian with standard deviation `scale/√fan_in`
/// for weights and `0.1·scale` for biases.
pub fn generate_network(p0: usize, p: usize, k: usize, m: f64, seed: u64, scale: f64) -> Result<MonDEQ> {
    if p0 == 0 || p == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!("dimensions must be >= 1 (p0={p0}, p={p}, K={k})")));
    }
    if !(m > 0.0) || !m.is_finite() {
        return Err(Error::InvalidArgument(format!("m must be positive, got {m}")));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |rows: usize, cols: usize, std: f64| -> DMatrix<f64> {
        let dist = Normal::new(0.0, std).expect("positive std");
        DMatrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng))
    };
    let hidden_std = scale / (p as f64).sqrt();
    let a = gauss(p, p, hidden_std);
    let b = gauss(p, p, hidden_std);
    let u = gauss(p, p0, scale / (p0 as f64).sqrt());
    let u_bias = gauss(p, 1, 0.1 * scale).column(0).into_owned();
    let c = gauss(k, p, hidden_std);
    let c_bias = gauss(k, 1, 0.1 * scale).column(0).into_owned();

    let w = DMatrix::<f64>::identity(p, p) * (1.0 - m) - a.transpose() * &a + &b - b.transpose();
    let net = MonDEQ { w, u, u_bias, c, c_bias, m, normalization: None };
    net.check_shapes()?;
    Ok(net)
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct NetworkFile {
    p0: usize,
    p: usize,
    K: usize,
    m: f64,
    W: Vec<Vec<f64>>,
    U: Vec<Vec<f64>>,
    u: Vec<f64>,
    C: Vec<Vec<f64>>,
    c: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normalization: Option<NormalizationSpec>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::Dimension(format!("{name} has {} rows, expected {nrows}", rows.len())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!("{name} row {i} has {} entries, expected {ncols}", r.len())));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn vector_of(name: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::Dimension(format!("{name} has length {}, expected {len}", v.len())));
    }
    Ok(DVector::from_column_slice(v))
}

impl MonDEQ {
    /// Parse and validate the JSON network format.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let net = MonDEQ {
            w: matrix_from_rows("W", &file.W, file.p, file.p)?,
            u: matrix_from_rows("U", &file.U, file.p, file.p0)?,
            u_bias: vector_of("u", &file.u, file.p)?,
            c: matrix_from_rows("C", &file.C, file.K, file.p)?,
            c_bias: vector_of("c", &file.c, file.K)?,
            m: file.m,
            normalization: file.normalization,
        };
        if let Some(n) = net.normalization {
            NormalizationSpec::new(n.mu, n.sigma)?;
        }
        net.check_shapes()?;
        net.require_monotone(DEFAULT_TOL_MONO)?;
        Ok(net)
    }

    pub fn to_json_string(&self) -> String {
        let file = NetworkFile {
            p0: self.p0(),
            p: self.p(),
            K: self.k(),
            m: self.m,
            W: rows_of(&self.w),
            U: rows_of(&self.u),
            u: self.u_bias.iter().copied().collect(),
            C: rows_of(&self.c),
            c: self.c_bias.iter().copied().collect(),
            normalization: self.normalization,
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string())
            .map_err(|source| Error::Io { path: path.display().to_string(), source })
    }
}

/// Supported on-disk network formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkFormat {
    Json,
}

pub fn load_network(path: impl AsRef<Path>, format: NetworkFormat) -> Result<MonDEQ> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    match format {
        NetworkFormat::Json => MonDEQ::from_json_str(&text),
    }
}
