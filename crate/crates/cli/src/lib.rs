//! Command-line front end for the monotone equilibrium network certifiers.

pub mod args;
pub mod batch;
pub mod commands;
pub mod io;
pub mod mnist;
pub mod svg;

use anyhow::Result;

use args::{Cli, Command};
use commands::Context;

/// Dispatches one parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::from_cli(cli)?;
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Predict(a) => commands::predict(&ctx, a),
        Command::Certify(a) => commands::certify(&ctx, a),
        Command::Lipschitz(a) => commands::lipschitz(&ctx, a),
        Command::CertifyLip(a) => commands::certify_lip(&ctx, a),
        Command::Ellipsoid(a) => commands::ellipsoid(&ctx, a),
        Command::Attack(a) => commands::attack(a),
        Command::Oracle(a) => commands::oracle(&ctx, a),
        Command::ImportMnist(a) => commands::import_mnist(a),
    }
}
