//! Two-dimensional projection of an output ellipsoid and its SVG rendering.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use super::Ellipsoid;
use crate::error::{Error, Result};

/// Projection onto coordinates `(y0, i)`: `{η : (η - c)ᵀ P (η - c) ≤ 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionFigure {
    pub y0: usize,
    pub i: usize,
    pub center: [f64; 2],
    /// Shape matrix `P` of the projected ellipse, row-major.
    pub shape: [[f64; 2]; 2],
    pub samples: Vec<[f64; 2]>,
}

impl ProjectionFigure {
    /// Semi-axis lengths, largest first.
    pub fn semi_axes(&self) -> [f64; 2] {
        let p = Matrix2::new(self.shape[0][0], self.shape[0][1], self.shape[1][0], self.shape[1][1]);
        let ev = p.symmetric_eigenvalues();
        let mut ax = [1.0 / ev[0].sqrt(), 1.0 / ev[1].sqrt()];
        ax.sort_by(|a, b| b.total_cmp(a));
        ax
    }

    pub fn contains(&self, pt: [f64; 2], tol: f64) -> bool {
        let d = Vector2::new(pt[0] - self.center[0], pt[1] - self.center[1]);
        let p = Matrix2::new(self.shape[0][0], self.shape[0][1], self.shape[1][0], self.shape[1][1]);
        (d.transpose() * p * d)[(0, 0)] <= 1.0 + tol
    }

    /// Boundary polyline with `n` vertices.
    pub fn boundary(&self, n: usize) -> Result<Vec<[f64; 2]>> {
        let p = Matrix2::new(self.shape[0][0], self.shape[0][1], self.shape[1][0], self.shape[1][1]);
        let inv = p.try_inverse().ok_or_else(|| Error::Numerical("singular projected ellipse".into()))?;
        let l = inv.cholesky().ok_or_else(|| Error::Numerical("projected ellipse is not positive definite".into()))?.l();
        Ok((0..n)
            .map(|s| {
                let th = 2.0 * std::f64::consts::PI * s as f64 / n as f64;
                let v = l * Vector2::new(th.cos(), th.sin());
                [self.center[0] + v[0], self.center[1] + v[1]]
            })
            .collect())
    }
}

pub fn projection_figure(ell: &Ellipsoid, samples: &[Vec<f64>], y0: usize, i: usize) -> Result<ProjectionFigure> {
    let k = ell.dim();
    if k < 2 {
        return Err(Error::InvalidArgument("projection needs at least two outputs".into()));
    }
    if y0 >= k || i >= k || y0 == i {
        return Err(Error::InvalidArgument(format!("bad coordinate pair ({y0}, {i}) for {k} outputs")));
    }
    let a = ell.q.transpose() * &ell.q;
    let a_inv = a.try_inverse().ok_or_else(|| Error::Numerical("ellipsoid matrix is singular".into()))?;
    let sub = DMatrix::from_fn(2, 2, |r, c| {
        let idx = [y0, i];
        a_inv[(idx[r], idx[c])]
    });
    let shape = sub.try_inverse().ok_or_else(|| Error::Numerical("singular projection".into()))?;
    let c = ell.center()?;
    Ok(ProjectionFigure {
        y0,
        i,
        center: [c[y0], c[i]],
        shape: [[shape[(0, 0)], shape[(0, 1)]], [shape[(1, 0)], shape[(1, 1)]]],
        samples: samples.iter().map(|s| [s[y0], s[i]]).collect(),
    })
}

/// Renders the projected ellipse, the samples and the line `ξ_y0 = ξ_i`.
pub fn write_svg(fig: &ProjectionFigure) -> Result<String> {
    let boundary = fig.boundary(256)?;
    let pts = boundary.iter().chain(fig.samples.iter());
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in pts {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
    let pad = 0.08 * span;
    let (x0, y0) = (lo[0] - pad, lo[1] - pad);
    let extent = span + 2.0 * pad;
    let size = 480.0;
    let sx = |v: f64| (v - x0) / extent * size;
    let sy = |v: f64| size - (v - y0) / extent * size;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    // decision threshold ξ_y0 = ξ_i
    let (a, b) = (x0.min(y0), (x0 + extent).max(y0 + extent));
    let _ = writeln!(
        s,
        r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="blue" stroke-dasharray="6,4"/>"#,
        sx(a),
        sy(a),
        sx(b),
        sy(b)
    );
    let path: Vec<String> = boundary.iter().map(|p| format!("{:.3},{:.3}", sx(p[0]), sy(p[1]))).collect();
    let _ = writeln!(s, r#"<polygon points="{}" fill="none" stroke="blue" stroke-width="2"/>"#, path.join(" "));
    for p in &fig.samples {
        let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="1.5" fill="red"/>"#, sx(p[0]), sy(p[1]));
    }
    let _ = writeln!(
        s,
        r#"<text x="8" y="{:.0}" font-size="12" font-family="sans-serif">output {} (horizontal) vs output {} (vertical)</text>"#,
        size - 8.0,
        fig.y0,
        fig.i
    );
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_ball_projects_to_unit_disk() {
        let e = Ellipsoid::new(DMatrix::identity(3, 3), vec![0.0; 3]).unwrap();
        let f = projection_figure(&e, &[], 0, 1).unwrap();
        let ax = f.semi_axes();
        assert!((ax[0] - 1.0).abs() < 1e-12 && (ax[1] - 1.0).abs() < 1e-12);
        assert_eq!(f.center, [0.0, 0.0]);
    }

    #[test]
    fn axis_aligned_semi_axes() {
        let q = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let e = Ellipsoid::new(q, vec![0.0; 3]).unwrap();
        let f = projection_figure(&e, &[], 0, 1).unwrap();
        let ax = f.semi_axes();
        assert!((ax[0] - 1.0).abs() < 1e-12 && (ax[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_contains_projected_points() {
        let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.0, 1.0, 0.4, 0.2, 0.0, 1.5]);
        let e = Ellipsoid::new(q.clone(), vec![0.1, 0.2, -0.3]).unwrap();
        let inv = q.try_inverse().unwrap();
        let c = e.center().unwrap();
        let mut pts = Vec::new();
        for s in 0..200 {
            let th = s as f64 * 0.1;
            let u = nalgebra::DVector::from_vec(vec![th.cos() * 0.7, th.sin() * 0.7, 0.3 * (th * 0.5).cos()]);
            let xi = &inv * u + nalgebra::DVector::from_vec(c.clone());
            pts.push(xi.iter().copied().collect::<Vec<f64>>());
        }
        for p in &pts {
            assert!(e.contains(p, 1e-9));
        }
        let f = projection_figure(&e, &pts, 2, 0).unwrap();
        assert!(f.samples.iter().all(|p| f.contains(*p, 1e-9)));
        let svg = write_svg(&f).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polygon") && svg.matches("<circle").count() == 200);
    }

    #[test]
    fn rejects_bad_pairs() {
        let e = Ellipsoid::new(DMatrix::identity(1, 1), vec![0.0]).unwrap();
        assert!(projection_figure(&e, &[], 0, 0).is_err());
    }
}
