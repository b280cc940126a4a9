use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Robustness,
    Lipschitz,
    Ellipsoid,
}

/// Number of scalar unknowns in a model and the side of its largest PSD block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSizes {
    pub n_vars: usize,
    pub psd_side: usize,
}

/// Closed-form sizes for a network with `p0` inputs, `p` hidden units, `k` outputs.
///
/// For the ellipsoid model the count is the unknowns `(σ_ball, σ_aff, σ_z, τ, b, Q)`
/// with a per-coordinate box multiplier and without slope multipliers, and the
/// side is the Gram matrix over `(x, z, 1)`.
pub fn model_sizes(kind: ModelKind, p0: usize, p: usize, k: usize) -> ModelSizes {
    match kind {
        ModelKind::Robustness => ModelSizes { n_vars: p0 + p, psd_side: 1 + p0 + p },
        ModelKind::Lipschitz => {
            let n = 2 * p0 + 4 * p + 2 * k;
            ModelSizes { n_vars: n, psd_side: 1 + n }
        }
        ModelKind::Ellipsoid => ModelSizes { n_vars: p0 + 3 * p + k + k * k, psd_side: 1 + p0 + p },
    }
}
