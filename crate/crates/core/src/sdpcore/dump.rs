use std::fmt::Write as _;
use std::io::Write;

use super::conic::{Cone, ConicProblem};
use crate::error::{Error, Result};

/// Plain-text listing of a conic problem: header, cones, cost, triplets, rhs.
pub fn dump_to_string(p: &ConicProblem) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# conic problem: minimize c'x + offset s.t. Ax = b, x in K");
    let _ = writeln!(s, "vars {}", p.n_vars());
    let _ = writeln!(s, "rows {}", p.n_rows());
    let _ = writeln!(s, "offset {:e}", p.objective_offset);
    let _ = writeln!(s, "cones {}", p.cones.len());
    for c in &p.cones {
        let line = match c {
            Cone::Free(n) => format!("free {n}"),
            Cone::Nonneg(n) => format!("nonneg {n}"),
            Cone::SecondOrder(n) => format!("soc {n}"),
            Cone::Psd(side) => format!("psd {side}"),
            Cone::Exp => "exp 3".to_string(),
        };
        let _ = writeln!(s, "{line}");
    }
    let nz: Vec<(usize, f64)> = p.cost.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
    let _ = writeln!(s, "cost {}", nz.len());
    for (j, v) in nz {
        let _ = writeln!(s, "{j} {v:e}");
    }
    let _ = writeln!(s, "a {}", p.a_triplets.len());
    for (i, j, v) in &p.a_triplets {
        let _ = writeln!(s, "{i} {j} {v:e}");
    }
    let _ = writeln!(s, "b {}", p.b.len());
    for v in &p.b {
        let _ = writeln!(s, "{v:e}");
    }
    s
}

pub fn write_dump(p: &ConicProblem, path: &std::path::Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    f.write_all(dump_to_string(p).as_bytes())
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdpcore::conic::ConicBuilder;

    #[test]
    fn dump_lists_everything() {
        let mut b = ConicBuilder::new();
        let o = b.add_cone(Cone::Psd(2));
        b.add_cone(Cone::Free(1));
        b.add_cost(o, 2.0);
        b.add_row([(o, 1.0), (3, -1.0)], 0.5);
        let text = dump_to_string(&b.build().unwrap());
        assert!(text.contains("vars 4"));
        assert!(text.contains("psd 2"));
        assert!(text.contains("free 1"));
        assert!(text.contains("a 2"));
        assert!(text.contains("0 3 -1e0"));
    }
}
