//! Projected gradient ascent on the logit margin inside an L_q ball.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixpoint::{argmax, EquilibriumSolver, FixedPointSettings};
use crate::netio::MonDEQ;
use crate::norm::{sample_ball, Norm};

/// Normalised pixel range of the usual MNIST preprocessing.
pub const PIXEL_RANGE: (f64, f64) = (-0.42, 2.82);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdSettings {
    pub steps: usize,
    pub restarts: usize,
    /// `None` uses `2.5 ε / steps`.
    pub step_size: Option<f64>,
    pub seed: u64,
    /// Clamp iterates to this box after each projection.
    pub clamp: Option<(f64, f64)>,
}

impl Default for PgdSettings {
    fn default() -> Self {
        Self { steps: 100, restarts: 10, step_size: None, seed: 0, clamp: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub success: bool,
    pub y0: usize,
    pub adversarial_x: Option<Vec<f64>>,
    pub adversarial_label: Option<usize>,
    /// Total gradient steps taken over all restarts.
    pub iterations: usize,
    /// Best margin `max_{i≠y0} F_i - F_y0` after each step of the last restart run.
    pub margin_trace: Vec<f64>,
    pub best_margin: f64,
    /// Restarts dropped because an equilibrium solve failed.
    pub aborted_restarts: usize,
}

/// Margin `max_{i≠y0} F_i - F_y0` and the maximizing label.
pub fn logit_margin(logits: &[f64], y0: usize) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, y0);
    for (i, &v) in logits.iter().enumerate() {
        if i != y0 && v > best.0 {
            best = (v, i);
        }
    }
    (best.0 - logits[y0], best.1)
}

/// Projects `x` onto `B(x0, eps, q)` for `q ∈ {2, ∞}`.
pub fn project(x: &mut [f64], x0: &[f64], eps: f64, q: Norm) {
    match q {
        Norm::Inf => {
            for (v, c) in x.iter_mut().zip(x0) {
                *v = v.clamp(c - eps, c + eps);
            }
        }
        _ => {
            let d = Norm::L2.dist(x, x0);
            if d > eps {
                let s = if d > 0.0 { eps / d } else { 0.0 };
                for (v, c) in x.iter_mut().zip(x0) {
                    *v = c + (*v - c) * s;
                }
            }
        }
    }
}

fn clamp_box(x: &mut [f64], range: Option<(f64, f64)>) {
    if let Some((lo, hi)) = range {
        x.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
}

/// Runs PGD from `x0` (first restart) and from random points of the ball.
pub fn pgd_attack(
    net: &MonDEQ,
    x0: &[f64],
    eps: f64,
    q: Norm,
    settings: &PgdSettings,
) -> Result<AttackResult> {
    let q = q.require_2_or_inf()?;
    if x0.len() != net.p0() {
        return Err(Error::Dimension(format!("x0 has length {}, network expects {}", x0.len(), net.p0())));
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {eps}")));
    }
    let solver = EquilibriumSolver::new(net, FixedPointSettings::default());
    let clean = solver.forward(x0)?;
    let y0 = argmax(&clean);
    let k = net.k();
    let mut out = AttackResult {
        success: false,
        y0,
        adversarial_x: None,
        adversarial_label: None,
        iterations: 0,
        margin_trace: Vec::new(),
        best_margin: logit_margin(&clean, y0).0,
        aborted_restarts: 0,
    };
    if k < 2 || eps == 0.0 {
        return Ok(out);
    }
    let step = settings.step_size.unwrap_or(2.5 * eps / settings.steps.max(1) as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    for restart in 0..settings.restarts.max(1) {
        let mut x = if restart == 0 { x0.to_vec() } else { sample_ball(&mut rng, x0, eps, q)? };
        clamp_box(&mut x, settings.clamp);
        let mut trace = Vec::with_capacity(settings.steps);
        let mut aborted = false;
        for _ in 0..settings.steps {
            // gradient of F_j - F_y0 for the current runner-up j
            let logits = match solver.forward(&x) {
                Ok(l) => l,
                Err(_) => {
                    aborted = true;
                    break;
                }
            };
            let (margin, j) = logit_margin(&logits, y0);
            if margin > 0.0 && verify(&solver, &x, x0, eps, q, y0)? {
                out.success = true;
                out.adversarial_label = Some(argmax(&logits));
                out.adversarial_x = Some(x);
                out.margin_trace = trace;
                out.best_margin = out.best_margin.max(margin);
                return Ok(out);
            }
            let mut a = vec![0.0; k];
            a[j] = 1.0;
            a[y0] = -1.0;
            let grad = match solver.vjp(&x, &a) {
                Ok((_, g)) => g,
                Err(_) => {
                    aborted = true;
                    break;
                }
            };
            match q {
                Norm::Inf => {
                    for (v, g) in x.iter_mut().zip(&grad) {
                        if *g != 0.0 {
                            *v += step * g.signum();
                        }
                    }
                }
                _ => {
                    let gn = Norm::L2.of(&grad);
                    if gn > 0.0 {
                        for (v, g) in x.iter_mut().zip(&grad) {
                            *v += step * g / gn;
                        }
                    }
                }
            }
            project(&mut x, x0, eps, q);
            clamp_box(&mut x, settings.clamp);
            out.iterations += 1;
            out.best_margin = out.best_margin.max(margin);
            trace.push(out.best_margin);
        }
        if aborted {
            out.aborted_restarts += 1;
            continue;
        }
        // the last iterate has not been evaluated yet
        if let Ok(logits) = solver.forward(&x) {
            let (margin, _) = logit_margin(&logits, y0);
            out.best_margin = out.best_margin.max(margin);
            if margin > 0.0 && verify(&solver, &x, x0, eps, q, y0)? {
                out.success = true;
                out.adversarial_label = Some(argmax(&logits));
                out.adversarial_x = Some(x);
                out.margin_trace = trace;
                return Ok(out);
            }
        }
        out.margin_trace = trace;
    }
    Ok(out)
}

/// Independent check of a candidate: inside the ball and misclassified by a fresh solve.
fn verify(solver: &EquilibriumSolver<'_>, x: &[f64], x0: &[f64], eps: f64, q: Norm, y0: usize) -> Result<bool> {
    if q.dist(x, x0) > eps + 1e-9 {
        return Ok(false);
    }
    let fresh = EquilibriumSolver::new(solver.net(), FixedPointSettings::default()).solve(x)?;
    if !fresh.converged {
        return Ok(false);
    }
    let net = solver.net();
    let z = nalgebra::DVector::from_vec(fresh.z);
    let logits: Vec<f64> = (&net.c * z + &net.c_bias).iter().copied().collect();
    Ok(argmax(&logits) != y0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn identity_net() -> MonDEQ {
        MonDEQ::new(
            DMatrix::zeros(2, 2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn zero_radius_never_succeeds() {
        let r = pgd_attack(&identity_net(), &[1.0, 0.0], 0.0, Norm::Inf, &PgdSettings::default()).unwrap();
        assert!(!r.success);
    }

    #[test]
    fn identity_margin_closed_form() {
        // margin 1 at (1, 0); the optimal L2 move along e_1 - e_0 needs eps > 1/√2
        let net = identity_net();
        let r = pgd_attack(&net, &[1.0, 0.0], 0.75, Norm::L2, &PgdSettings::default()).unwrap();
        assert!(r.success);
        let x = r.adversarial_x.unwrap();
        assert!(Norm::L2.dist(&x, &[1.0, 0.0]) <= 0.75 + 1e-9);
        assert_eq!(r.adversarial_label, Some(1));
        let r = pgd_attack(&net, &[1.0, 0.0], 0.65, Norm::L2, &PgdSettings::default()).unwrap();
        assert!(!r.success);
    }

    #[test]
    fn box_attack_and_determinism() {
        let net = identity_net();
        let s = PgdSettings { seed: 3, ..Default::default() };
        let a = pgd_attack(&net, &[1.0, 0.0], 0.55, Norm::Inf, &s).unwrap();
        let b = pgd_attack(&net, &[1.0, 0.0], 0.55, Norm::Inf, &s).unwrap();
        assert!(a.success);
        assert_eq!(a, b);
    }

    #[test]
    fn projections() {
        let mut x = vec![3.0, -3.0];
        project(&mut x, &[0.0, 0.0], 1.0, Norm::Inf);
        assert_eq!(x, vec![1.0, -1.0]);
        let mut x = vec![3.0, 4.0];
        project(&mut x, &[0.0, 0.0], 1.0, Norm::L2);
        assert!((x[0] - 0.6).abs() < 1e-12 && (x[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn clamping_keeps_pixel_range() {
        let net = identity_net();
        let s = PgdSettings { clamp: Some(PIXEL_RANGE), restarts: 2, steps: 10, ..Default::default() };
        let r = pgd_attack(&net, &[2.8, 0.0], 1.5, Norm::Inf, &s).unwrap();
        if let Some(x) = r.adversarial_x {
            assert!(x.iter().all(|v| (PIXEL_RANGE.0..=PIXEL_RANGE.1).contains(v)));
        }
    }
}
