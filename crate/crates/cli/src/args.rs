//! Command-line definitions.

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use mondeq_core::Norm;

#[derive(Debug, Parser)]
#[command(name = "mondeq-cert", version, about = "Certify monotone equilibrium networks against input perturbations")]
pub struct Cli {
    /// Conic solver tolerance (gap and feasibility).
    #[arg(long, global = true, env = "MONDEQ_SOLVER_TOL")]
    pub solver_tol: Option<f64>,

    /// Worker threads for batch runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random monotone network.
    Gen(GenArgs),
    /// Evaluate the network on inputs.
    Predict(PredictArgs),
    /// Certify robustness of inputs with one of the models.
    Certify(CertifyArgs),
    /// Upper-bound the Lipschitz constant over an input ball.
    Lipschitz(LipschitzArgs),
    /// Certify inputs from a stored Lipschitz bound.
    CertifyLip(CertifyLipArgs),
    /// Fit an outer ellipsoid to the output set of an input ball.
    Ellipsoid(EllipsoidArgs),
    /// Search for an adversarial example with projected gradient ascent.
    Attack(AttackArgs),
    /// Exact gaps by enumerating activation patterns (small networks only).
    Oracle(OracleArgs),
    /// Convert IDX images into normalized JSON input vectors.
    ImportMnist(ImportMnistArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Robustness,
    Lipschitz,
    Ellipsoid,
    Oracle,
}

/// One input vector or a directory of them.
#[derive(Debug, Args)]
pub struct InputSource {
    /// JSON array with one input vector.
    #[arg(long, conflicts_with = "inputs", required_unless_present = "inputs")]
    pub x0: Option<PathBuf>,

    /// Directory of JSON input vectors, processed in file-name order.
    #[arg(long)]
    pub inputs: Option<PathBuf>,

    /// Only use the first N inputs of the directory.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub p0: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long = "K")]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub m: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weight scale.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Attach input normalization constants (requires --sigma).
    #[arg(long, requires = "sigma")]
    pub mu: Option<f64>,
    #[arg(long, requires = "mu")]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[command(flatten)]
    pub input: InputSource,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[command(flatten)]
    pub input: InputSource,
    /// Perturbation radii, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    #[arg(long, default_value = "inf")]
    pub norm: Norm,
    #[arg(long, value_enum, default_value_t = Model::Robustness)]
    pub model: Model,
    /// Solve every label even after one fails.
    #[arg(long)]
    pub no_early_exit: bool,
    /// Drop the slope-restriction terms of the ellipsoid model.
    #[arg(long)]
    pub no_slope: bool,
    /// Center of the Lipschitz input set (default: mean of the inputs).
    #[arg(long = "S-center", requires = "s_radius")]
    pub s_center: Option<PathBuf>,
    #[arg(long = "S-radius")]
    pub s_radius: Option<f64>,
    /// Also run PGD on every input and check that no attacked input is certified.
    #[arg(long)]
    pub attack: bool,
    #[arg(long, default_value_t = 100)]
    pub attack_steps: usize,
    #[arg(long, default_value_t = 10)]
    pub attack_restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LipschitzArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Norm of the Lipschitz constant.
    #[arg(long, default_value = "2")]
    pub norm: Norm,
    #[arg(long = "S-center", requires = "s_radius")]
    pub s_center: Option<PathBuf>,
    #[arg(long = "S-radius")]
    pub s_radius: Option<f64>,
    /// Norm of the input set (default: --norm).
    #[arg(long = "S-norm")]
    pub s_norm: Option<Norm>,
    /// Build the input set around these inputs instead of --S-center.
    #[arg(long, conflicts_with = "s_center")]
    pub inputs: Option<PathBuf>,
    /// Margin added around the inputs.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Write the conic program in text form.
    #[arg(long)]
    pub dump_sdp: Option<PathBuf>,
    /// Random input pairs for an empirical lower bound (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CertifyLipArgs {
    #[arg(long)]
    pub net: PathBuf,
    /// Report written by the `lipschitz` command.
    #[arg(long)]
    pub bound: PathBuf,
    #[command(flatten)]
    pub input: InputSource,
    #[arg(long, value_delimiter = ',', required = true)]
    pub eps: Vec<f64>,
    /// Norm of the perturbation (default: the bound's norm).
    #[arg(long)]
    pub norm: Option<Norm>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EllipsoidArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub x0: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value = "inf")]
    pub norm: Norm,
    #[arg(long)]
    pub no_slope: bool,
    /// SVG of the ellipse projected on two output coordinates.
    #[arg(long)]
    pub figure: Option<PathBuf>,
    /// Output coordinates of the figure as `a,b` (default: prediction and runner-up).
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<usize>>,
    /// Sampled outputs drawn in the figure.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub x0: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value = "inf")]
    pub norm: Norm,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Keep iterates in the normalized pixel range.
    #[arg(long)]
    pub clamp: bool,
    /// Write the adversarial vector as a bare JSON array.
    #[arg(long)]
    pub adversarial_out: Option<PathBuf>,
    /// SVG with the clean and adversarial inputs drawn as images.
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Image width in pixels (default: square images).
    #[arg(long)]
    pub image_width: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub x0: PathBuf,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value = "inf")]
    pub norm: Norm,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportMnistArgs {
    /// IDX image file (`*-images-idx3-ubyte`).
    #[arg(long)]
    pub images: PathBuf,
    /// IDX label file (`*-labels-idx1-ubyte`).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub offset: usize,
    #[arg(long, default_value_t = 0.1307)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.3081)]
    pub sigma: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}
