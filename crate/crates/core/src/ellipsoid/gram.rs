//! Gram matrices of the containment certificate in the basis `[x; z; 1]`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::netio::{MonDEQ, PerturbationSpec};
use crate::norm::Norm;
use crate::semialg::AffineExpr;

/// Scalar type of Gram entries: plain numbers or affine functions of decision variables.
pub trait Coef: Clone {
    fn zero() -> Self;
    fn add_scaled(&mut self, other: &Self, s: f64);
    fn add_const(&mut self, c: f64);
}

impl Coef for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add_scaled(&mut self, other: &Self, s: f64) {
        *self += s * other;
    }
    fn add_const(&mut self, c: f64) {
        *self += c;
    }
}

impl Coef for AffineExpr {
    fn zero() -> Self {
        AffineExpr::default()
    }
    fn add_scaled(&mut self, other: &Self, s: f64) {
        *self = self.add(&other.scaled(s));
    }
    fn add_const(&mut self, c: f64) {
        self.constant += c;
    }
}

/// Multipliers of the degree-one certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSet<T> {
    /// Input-ball multiplier: one entry for `q = 2`, `p0` entries for `q = ∞`.
    pub sigma_ball: Vec<T>,
    /// Multipliers of `z - (W z + U x + u) ≥ 0`.
    pub sigma_affine: Vec<T>,
    /// Multipliers of `z ≥ 0`.
    pub sigma_zpos: Vec<T>,
    /// Multipliers of `z ∘ (z - W z - U x - u) = 0` (free sign).
    pub tau: Vec<T>,
    /// Slope-restriction weights for pairs `i < j` in [`pair_index`] order; empty when unused.
    pub lambda: Vec<T>,
}

impl<T: Coef> MultiplierSet<T> {
    pub fn zeros(net: &MonDEQ, q: Norm, slope: bool) -> Result<Self> {
        let p = net.p();
        Ok(Self {
            sigma_ball: vec![T::zero(); ball_multiplier_len(net.p0(), q)?],
            sigma_affine: vec![T::zero(); p],
            sigma_zpos: vec![T::zero(); p],
            tau: vec![T::zero(); p],
            lambda: if slope { vec![T::zero(); n_pairs(p)] } else { Vec::new() },
        })
    }
}

pub fn ball_multiplier_len(p0: usize, q: Norm) -> Result<usize> {
    match q.require_2_or_inf()? {
        Norm::Inf => Ok(p0),
        _ => Ok(1),
    }
}

pub fn n_pairs(p: usize) -> usize {
    p * p.saturating_sub(1) / 2
}

/// Pairs `(i, j)`, `i < j`, in lexicographic order.
pub fn pair_index(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect()
}

/// Index helpers for the basis `[x; z; 1]`.
#[derive(Debug, Clone, Copy)]
pub struct Basis {
    pub p0: usize,
    pub p: usize,
}

impl Basis {
    pub fn x(&self, k: usize) -> usize {
        k
    }
    pub fn z(&self, i: usize) -> usize {
        self.p0 + i
    }
    pub fn one(&self) -> usize {
        self.p0 + self.p
    }
    pub fn len(&self) -> usize {
        self.p0 + self.p + 1
    }
}

fn check(net: &MonDEQ, pert: &PerturbationSpec, mult_lens: (usize, usize, usize, usize, usize)) -> Result<()> {
    let p = net.p();
    if pert.x0.len() != net.p0() {
        return Err(Error::Dimension(format!("x0 has length {}, network expects {}", pert.x0.len(), net.p0())));
    }
    let (nb, na, nz, nt, nl) = mult_lens;
    if nb != ball_multiplier_len(net.p0(), pert.q)? || na != p || nz != p || nt != p || (nl != 0 && nl != n_pairs(p)) {
        return Err(Error::Dimension("multiplier sizes do not match the network".into()));
    }
    Ok(())
}

/// Part of the Gram matrix that is linear in the multipliers, including the
/// `-1` of the ellipsoid condition; the quadratic readout part `NᵀN` is
/// added separately. Returned row-major, side `p0 + p + 1`.
pub fn gram_linear_part<T: Coef>(net: &MonDEQ, pert: &PerturbationSpec, mult: &MultiplierSet<T>) -> Result<Vec<T>> {
    check(
        net,
        pert,
        (mult.sigma_ball.len(), mult.sigma_affine.len(), mult.sigma_zpos.len(), mult.tau.len(), mult.lambda.len()),
    )?;
    let (p0, p) = (net.p0(), net.p());
    let bs = Basis { p0, p };
    let n = bs.len();
    let one = bs.one();
    let mut m = vec![T::zero(); n * n];
    let at = |i: usize, j: usize| i * n + j;
    let eps2 = pert.eps * pert.eps;

    // readout constant
    m[at(one, one)].add_const(-1.0);

    // input ball
    match pert.q {
        Norm::Inf => {
            for k in 0..p0 {
                let s = &mult.sigma_ball[k];
                let x0k = pert.x0[k];
                m[at(bs.x(k), bs.x(k))].add_scaled(s, -1.0);
                m[at(bs.x(k), one)].add_scaled(s, x0k);
                m[at(one, bs.x(k))].add_scaled(s, x0k);
                m[at(one, one)].add_scaled(s, eps2 - x0k * x0k);
            }
        }
        _ => {
            let s = &mult.sigma_ball[0];
            let x0sq: f64 = pert.x0.iter().map(|v| v * v).sum();
            for k in 0..p0 {
                let x0k = pert.x0[k];
                m[at(bs.x(k), bs.x(k))].add_scaled(s, -1.0);
                m[at(bs.x(k), one)].add_scaled(s, x0k);
                m[at(one, bs.x(k))].add_scaled(s, x0k);
            }
            m[at(one, one)].add_scaled(s, eps2 - x0sq);
        }
    }

    // complementarity, symmetrized diag(τ)(I - W)
    for i in 0..p {
        let t = &mult.tau[i];
        for j in 0..p {
            let d = if i == j { 1.0 } else { 0.0 };
            let c = 0.5 * (d - net.w[(i, j)]);
            m[at(bs.z(i), bs.z(j))].add_scaled(t, c);
            m[at(bs.z(j), bs.z(i))].add_scaled(t, c);
        }
        for k in 0..p0 {
            let c = -0.5 * net.u[(i, k)];
            m[at(bs.x(k), bs.z(i))].add_scaled(t, c);
            m[at(bs.z(i), bs.x(k))].add_scaled(t, c);
        }
        let c = -0.5 * net.u_bias[i];
        m[at(bs.z(i), one)].add_scaled(t, c);
        m[at(one, bs.z(i))].add_scaled(t, c);
    }

    // z - W z - U x - u ≥ 0
    for i in 0..p {
        let s = &mult.sigma_affine[i];
        for k in 0..p0 {
            let c = -0.5 * net.u[(i, k)];
            m[at(bs.x(k), one)].add_scaled(s, c);
            m[at(one, bs.x(k))].add_scaled(s, c);
        }
        for j in 0..p {
            let d = if i == j { 1.0 } else { 0.0 };
            let c = 0.5 * (d - net.w[(i, j)]);
            m[at(bs.z(j), one)].add_scaled(s, c);
            m[at(one, bs.z(j))].add_scaled(s, c);
        }
        m[at(one, one)].add_scaled(s, -net.u_bias[i]);
    }

    // z ≥ 0
    for i in 0..p {
        let s = &mult.sigma_zpos[i];
        m[at(bs.z(i), one)].add_scaled(s, 0.5);
        m[at(one, bs.z(i))].add_scaled(s, 0.5);
    }

    // slope restriction 2λ[(pre_i - pre_j)(z_i - z_j) - (z_i - z_j)²]
    if !mult.lambda.is_empty() {
        for (l, &(i, j)) in pair_index(p).iter().enumerate() {
            let lam = &mult.lambda[l];
            let mut d = vec![0.0; n];
            for k in 0..p0 {
                d[bs.x(k)] = net.u[(i, k)] - net.u[(j, k)];
            }
            for c in 0..p {
                d[bs.z(c)] = net.w[(i, c)] - net.w[(j, c)];
            }
            d[one] = net.u_bias[i] - net.u_bias[j];
            for (a, &da) in d.iter().enumerate() {
                if da == 0.0 {
                    continue;
                }
                m[at(a, bs.z(i))].add_scaled(lam, da);
                m[at(bs.z(i), a)].add_scaled(lam, da);
                m[at(a, bs.z(j))].add_scaled(lam, -da);
                m[at(bs.z(j), a)].add_scaled(lam, -da);
            }
            m[at(bs.z(i), bs.z(i))].add_scaled(lam, -2.0);
            m[at(bs.z(j), bs.z(j))].add_scaled(lam, -2.0);
            m[at(bs.z(i), bs.z(j))].add_scaled(lam, 2.0);
            m[at(bs.z(j), bs.z(i))].add_scaled(lam, 2.0);
        }
    }
    Ok(m)
}

/// `N = [0, Q C, Q c + b]`, so that `N [x; z; 1] = Q (C z + c) + b`.
pub fn readout_factor(net: &MonDEQ, q: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    let k = net.k();
    if q.nrows() != k || q.ncols() != k || b.len() != k {
        return Err(Error::Dimension(format!("Q must be {k}×{k} and b of length {k}")));
    }
    let bs = Basis { p0: net.p0(), p: net.p() };
    let qc = q * &net.c;
    let qcb = q * &net.c_bias;
    let mut n = DMatrix::zeros(k, bs.len());
    for r in 0..k {
        for i in 0..net.p() {
            n[(r, bs.z(i))] = qc[(r, i)];
        }
        n[(r, bs.one())] = qcb[r] + b[r];
    }
    Ok(n)
}

/// Full Gram matrix `M = NᵀN + M_lin` of the certificate polynomial.
pub fn assemble_gram(
    net: &MonDEQ,
    pert: &PerturbationSpec,
    q: &DMatrix<f64>,
    b: &[f64],
    mult: &MultiplierSet<f64>,
) -> Result<DMatrix<f64>> {
    let lin = gram_linear_part(net, pert, mult)?;
    let n = net.p0() + net.p() + 1;
    let nf = readout_factor(net, q, b)?;
    Ok(nf.transpose() * &nf + DMatrix::from_row_slice(n, n, &lin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_everything_leaves_the_constant() {
        let net = crate::netio::generate_network(2, 3, 2, 1.0, 1, 1.0).unwrap();
        let pert = PerturbationSpec::new(vec![0.1, 0.2], 0.3, Norm::Inf).unwrap();
        let mult = MultiplierSet::<f64>::zeros(&net, Norm::Inf, true).unwrap();
        let m = assemble_gram(&net, &pert, &DMatrix::zeros(2, 2), &[0.0, 0.0], &mult).unwrap();
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                let expect = if i == n - 1 && j == n - 1 { -1.0 } else { 0.0 };
                assert_eq!(m[(i, j)], expect);
            }
        }
    }

    #[test]
    fn symmetric_for_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = crate::netio::generate_network(3, 4, 3, 1.0, 2, 1.0).unwrap();
        for q in [Norm::L2, Norm::Inf] {
            let pert = PerturbationSpec::new(vec![0.3, -0.2, 0.1], 0.4, q).unwrap();
            let mut mult = MultiplierSet::<f64>::zeros(&net, q, true).unwrap();
            for v in mult
                .sigma_ball
                .iter_mut()
                .chain(&mut mult.sigma_affine)
                .chain(&mut mult.sigma_zpos)
                .chain(&mut mult.tau)
                .chain(&mut mult.lambda)
            {
                *v = rng.gen_range(-1.0..1.0);
            }
            let qm = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let m = assemble_gram(&net, &pert, &qm, &[0.1, 0.2, 0.3], &mult).unwrap();
            assert!((&m - m.transpose()).abs().max() < 1e-14);
        }
    }

    #[test]
    fn symbolic_matches_numeric() {
        let net = crate::netio::generate_network(2, 3, 2, 1.0, 3, 1.0).unwrap();
        let pert = PerturbationSpec::new(vec![0.5, -0.5], 0.2, Norm::Inf).unwrap();
        let mut next = 0;
        let mut var = || {
            next += 1;
            AffineExpr::var(next - 1)
        };
        let sym = MultiplierSet {
            sigma_ball: (0..2).map(|_| var()).collect(),
            sigma_affine: (0..3).map(|_| var()).collect(),
            sigma_zpos: (0..3).map(|_| var()).collect(),
            tau: (0..3).map(|_| var()).collect(),
            lambda: (0..3).map(|_| var()).collect(),
        };
        let values: Vec<f64> = (0..14).map(|i| 0.1 * i as f64 - 0.4).collect();
        let num = MultiplierSet {
            sigma_ball: values[0..2].to_vec(),
            sigma_affine: values[2..5].to_vec(),
            sigma_zpos: values[5..8].to_vec(),
            tau: values[8..11].to_vec(),
            lambda: values[11..14].to_vec(),
        };
        let a = gram_linear_part(&net, &pert, &sym).unwrap();
        let b = gram_linear_part(&net, &pert, &num).unwrap();
        for (e, v) in a.iter().zip(&b) {
            assert!((e.eval(&values) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_sizes() {
        let net = crate::netio::generate_network(2, 3, 2, 1.0, 1, 1.0).unwrap();
        let pert = PerturbationSpec::new(vec![0.0, 0.0], 0.1, Norm::L2).unwrap();
        let mult = MultiplierSet::<f64>::zeros(&net, Norm::Inf, true).unwrap();
        assert!(gram_linear_part(&net, &pert, &mult).is_err());
        assert!(MultiplierSet::<f64>::zeros(&net, Norm::L1, true).is_err());
    }
}
