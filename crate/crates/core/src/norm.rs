//! L_q norm indices and the vector/operator norms built on them.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm index `q`: a positive integer or infinity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Norm {
    Finite(u32),
    Inf,
}

impl Norm {
    pub const L1: Norm = Norm::Finite(1);
    pub const L2: Norm = Norm::Finite(2);

    pub fn finite(q: u32) -> Result<Self> {
        if q == 0 {
            return Err(Error::InvalidArgument("norm index must be >= 1".into()));
        }
        Ok(Norm::Finite(q))
    }

    /// Norm of a slice.
    pub fn of(&self, v: &[f64]) -> f64 {
        match *self {
            Norm::Inf => v.iter().fold(0.0_f64, |a, x| a.max(x.abs())),
            Norm::Finite(1) => v.iter().map(|x| x.abs()).sum(),
            Norm::Finite(2) => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Finite(q) => {
                let q = q as f64;
                v.iter().map(|x| x.abs().powf(q)).sum::<f64>().powf(1.0 / q)
            }
        }
    }

    /// Distance `‖a - b‖_q`.
    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        self.of(&d)
    }

    /// `1/q`, with `1/∞ = 0`.
    pub fn reciprocal(&self) -> f64 {
        match *self {
            Norm::Inf => 0.0,
            Norm::Finite(q) => 1.0 / q as f64,
        }
    }

    /// Smallest `κ` with `‖d‖_self ≤ κ‖d‖_from` for all `d ∈ R^dim`.
    pub fn comparison_factor(&self, from: Norm, dim: usize) -> f64 {
        let expo = (self.reciprocal() - from.reciprocal()).max(0.0);
        (dim as f64).powf(expo)
    }

    /// Restrict to the norms the quadratic models handle.
    pub fn require_2_or_inf(self) -> Result<Self> {
        match self {
            Norm::Finite(2) | Norm::Inf => Ok(self),
            other => Err(Error::UnsupportedNorm(other.to_string(), "2, inf")),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::Inf => write!(f, "inf"),
            Norm::Finite(q) => write!(f, "{q}"),
        }
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" | "linf" => Ok(Norm::Inf),
            other => {
                let other = other.strip_prefix('l').unwrap_or(other);
                let q: u32 = other
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad norm index '{s}'")))?;
                Norm::finite(q)
            }
        }
    }
}

impl TryFrom<String> for Norm {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Norm> for String {
    fn from(n: Norm) -> String {
        n.to_string()
    }
}

/// Uniform sample from `B(center, radius, ‖·‖_q)` for `q ∈ {1, 2, ∞}`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, center: &[f64], radius: f64, q: Norm) -> Result<Vec<f64>> {
    let d = center.len();
    let offset: Vec<f64> = match q {
        Norm::Inf => (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
        Norm::Finite(2) => {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = Norm::L2.of(&g).max(f64::MIN_POSITIVE);
            let r = rng.gen::<f64>().powf(1.0 / d as f64);
            g.iter().map(|v| v / n * r).collect()
        }
        Norm::Finite(1) => {
            // d + 1 exponentials normalised by their sum are uniform on the simplex
            let e: Vec<f64> = (0..=d).map(|_| Exp1.sample(rng)).collect();
            let total: f64 = e.iter().sum();
            (0..d).map(|i| if rng.gen::<bool>() { e[i] / total } else { -e[i] / total }).collect()
        }
        other => return Err(Error::UnsupportedNorm(other.to_string(), "1, 2, inf")),
    };
    Ok(center.iter().zip(offset).map(|(c, o)| c + radius * o).collect())
}

/// Spectral norm `|||A|||_2` by power iteration on `AᵀA`, stopped at 1e-10
/// relative change of the Rayleigh quotient.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let ata = a.transpose() * a;
    // deterministic start with no symmetry that could hide the top direction
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919 % 13) as f64) / 13.0);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..20_000 {
        let w = &ata * &v;
        let next = v.dot(&w);
        let wn = w.norm();
        if wn == 0.0 {
            // v landed in the kernel; fall back to the exact answer
            return exact_spectral_norm(a);
        }
        v = w / wn;
        if (next - lambda).abs() <= 1e-10 * next.abs().max(f64::MIN_POSITIVE) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    // one more Rayleigh quotient at the final vector
    let rq = v.dot(&(&ata * &v));
    lambda.max(rq).max(0.0).sqrt()
}

fn exact_spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0_f64, |m, s| m.max(*s))
}

/// `|||A|||_∞`: maximum absolute row sum.
pub fn inf_operator_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `|||A|||_1`: maximum absolute column sum.
pub fn one_operator_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Operator norm induced by `q ∈ {1, 2, ∞}`.
pub fn operator_norm(a: &DMatrix<f64>, q: Norm) -> Result<f64> {
    match q {
        Norm::Finite(1) => Ok(one_operator_norm(a)),
        Norm::Finite(2) => Ok(spectral_norm(a)),
        Norm::Inf => Ok(inf_operator_norm(a)),
        other => Err(Error::UnsupportedNorm(other.to_string(), "1, 2, inf")),
    }
}

/// Smallest eigenvalue of the symmetric part of a square matrix.
pub fn lambda_min_sym(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension("lambda_min_sym needs a square matrix".into()));
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::Numerical("symmetric eigensolver returned non-finite values".into()));
    }
    Ok(min)
}

/// Largest eigenvalue of a symmetric matrix (only the symmetric part is read).
pub fn lambda_max_sym(a: &DMatrix<f64>) -> Result<f64> {
    Ok(-lambda_min_sym(&(-a))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parse_and_display() {
        assert_eq!("inf".parse::<Norm>().unwrap(), Norm::Inf);
        assert_eq!("2".parse::<Norm>().unwrap(), Norm::L2);
        assert_eq!("L1".parse::<Norm>().unwrap(), Norm::L1);
        assert!("0".parse::<Norm>().is_err());
        assert!("x".parse::<Norm>().is_err());
        assert_eq!(Norm::Inf.to_string(), "inf");
    }

    #[test]
    fn vector_norms() {
        let v = [3.0, -4.0];
        assert_eq!(Norm::L1.of(&v), 7.0);
        assert_eq!(Norm::L2.of(&v), 5.0);
        assert_eq!(Norm::Inf.of(&v), 4.0);
        assert_relative_eq!(Norm::Finite(3).of(&v), (27.0f64 + 64.0).powf(1.0 / 3.0));
    }

    #[test]
    fn comparison_factors() {
        // ‖d‖_2 ≤ √n ‖d‖_∞, ‖d‖_∞ ≤ ‖d‖_2
        assert_relative_eq!(Norm::L2.comparison_factor(Norm::Inf, 4), 2.0);
        assert_relative_eq!(Norm::Inf.comparison_factor(Norm::L2, 4), 1.0);
        assert_relative_eq!(Norm::L1.comparison_factor(Norm::L2, 9), 3.0);
    }

    #[test]
    fn spectral_norm_matches_svd() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -0.5, 0.3, 4.0, -1.0]);
        assert_relative_eq!(spectral_norm(&a), exact_spectral_norm(&a), max_relative = 1e-9);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 2.0]));
        assert_relative_eq!(spectral_norm(&d), 3.0, max_relative = 1e-10);
        assert_eq!(spectral_norm(&DMatrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn ball_samples_stay_inside() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let c = [0.5, -1.0, 2.0];
        for q in [Norm::L1, Norm::L2, Norm::Inf] {
            let mut far = 0.0_f64;
            for _ in 0..2000 {
                let x = sample_ball(&mut rng, &c, 0.3, q).unwrap();
                let d = q.dist(&x, &c);
                assert!(d <= 0.3 + 1e-12);
                far = far.max(d);
            }
            assert!(far > 0.25, "{q}: {far}");
        }
        assert!(sample_ball(&mut rng, &c, 1.0, Norm::Finite(4)).is_err());
    }

    #[test]
    fn row_and_column_sums() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 3.0]);
        assert_eq!(inf_operator_norm(&c), 3.0);
        assert_eq!(one_operator_norm(&c), 4.0);
    }

    #[test]
    fn lambda_min_of_symmetric_part() {
        // skew part does not move the symmetric spectrum
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 5.0, -5.0, 1.0]);
        assert_relative_eq!(lambda_min_sym(&a).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(lambda_max_sym(&a).unwrap(), 2.0, epsilon = 1e-12);
    }
}
