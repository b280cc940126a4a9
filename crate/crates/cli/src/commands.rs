//! Subcommand implementations.

use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use mondeq_core::attack::{pgd_attack, AttackResult, PgdSettings, PIXEL_RANGE};
use mondeq_core::ellipsoid::{
    certify_via_ellipsoid, projection_figure, write_svg, EllipsoidReport, EllipsoidSettings,
};
use mondeq_core::fixpoint::{argmax, EquilibriumSolver, FixedPointSettings};
use mondeq_core::lipschitz::{
    baseline_bound, build_lipmon, certify_via_lipschitz, default_input_ball, lipschitz_bound,
    sampled_lipschitz_lower_bound, InputBall, LipschitzBound,
};
use mondeq_core::netio::{generate_network, load_network, NetworkFormat};
use mondeq_core::norm::sample_ball;
use mondeq_core::oracle::{exact_certify, OracleReport};
use mondeq_core::robustness::{certify_robustness, RobustnessSettings};
use mondeq_core::sdpcore::{shor_relax, write_dump, SolverSettings};
use mondeq_core::{MonDEQ, NormalizationSpec, Norm, PerturbationSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::*;
use crate::batch::{parallel_map, Summary};
use crate::io::{emit, load_inputs, read_vector, write_text, Input};
use crate::mnist;
use crate::svg::image_grid;

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub solver: SolverSettings,
    pub workers: usize,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Result<Self> {
        let mut solver = SolverSettings::default();
        if let Some(t) = cli.solver_tol {
            if !(t > 0.0) || !t.is_finite() {
                bail!("--solver-tol must be positive, got {t}");
            }
            solver = solver.with_tol(t);
        }
        Ok(Self { solver, workers: cli.workers.max(1) })
    }
}

fn load_net(path: &Path) -> Result<MonDEQ> {
    load_network(path, NetworkFormat::Json).with_context(|| format!("loading network {}", path.display()))
}

/// Radius in the network's input units, logging the conversion when one applies.
fn effective_eps(net: &MonDEQ, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        bail!("eps must be positive, got {eps}");
    }
    Ok(match net.normalization {
        Some(n) => {
            let e = n.scale_radius(eps);
            log::info!("normalized radius: eps {eps} / sigma {} = {e}", n.sigma);
            e
        }
        None => eps,
    })
}

fn check_input_dim(net: &MonDEQ, inputs: &[Input]) -> Result<()> {
    for inp in inputs {
        if inp.x.len() != net.p0() {
            bail!("input {} has length {}, network expects {}", inp.name, inp.x.len(), net.p0());
        }
    }
    Ok(())
}

pub fn gen(a: &GenArgs) -> Result<()> {
    let mut net = generate_network(a.p0, a.p, a.k, a.m, a.seed, a.scale)?;
    if let (Some(mu), Some(sigma)) = (a.mu, a.sigma) {
        net = net.with_normalization(Some(NormalizationSpec::new(mu, sigma)?));
    }
    let mut text = net.to_json_string();
    text.push('\n');
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct PredictItem {
    input: String,
    label: usize,
    logits: Vec<f64>,
    residual: f64,
    iterations: usize,
}

#[derive(Debug, Serialize)]
struct PredictReport {
    command: &'static str,
    items: Vec<PredictItem>,
}

pub fn predict(ctx: &Context, a: &PredictArgs) -> Result<()> {
    let net = load_net(&a.net)?;
    let inputs = load_inputs(&a.input)?;
    check_input_dim(&net, &inputs)?;
    let solver = EquilibriumSolver::new(&net, FixedPointSettings::default());
    let items = parallel_map(&inputs, ctx.workers, |_, inp| -> Result<PredictItem> {
        let eq = solver.solve(&inp.x)?;
        if !eq.converged {
            bail!("equilibrium solve did not converge for {}", inp.name);
        }
        let logits = solver.forward(&inp.x)?;
        Ok(PredictItem {
            input: inp.name.clone(),
            label: argmax(&logits),
            logits,
            residual: eq.residual,
            iterations: eq.iterations,
        })
    });
    let items = items.into_iter().collect::<Result<Vec<_>>>()?;
    emit(&PredictReport { command: "predict", items }, a.out.as_deref())
}

#[derive(Debug, Serialize)]
pub struct ItemResult {
    pub input: String,
    pub y0: usize,
    pub certified: bool,
    pub attack_success: Option<bool>,
    pub detail: Value,
    pub item_time_s: f64,
}

#[derive(Debug, Serialize)]
pub struct EpsRun {
    pub eps: f64,
    pub effective_eps: f64,
    pub lipschitz_bound: Option<LipschitzBound>,
    pub items: Vec<ItemResult>,
    pub summary: Summary,
}

#[derive(Debug, Serialize)]
pub struct CertifyReport {
    pub command: &'static str,
    pub model: Model,
    pub norm: Norm,
    pub seed: u64,
    pub normalization: Option<NormalizationSpec>,
    pub runs: Vec<EpsRun>,
    pub total_time_s: f64,
}

fn summarize(items: &[ItemResult]) -> Summary {
    let cert: Vec<bool> = items.iter().map(|i| i.certified).collect();
    let attacked: Option<Vec<bool>> = items.iter().map(|i| i.attack_success).collect();
    let times: Vec<f64> = items.iter().map(|i| i.item_time_s).collect();
    Summary::new(&cert, attacked.as_deref(), &times)
}

fn lipschitz_set(
    a_center: Option<&Path>,
    a_radius: Option<f64>,
    norm: Norm,
    inputs: &[Input],
    margin: f64,
) -> Result<InputBall> {
    match (a_center, a_radius) {
        (Some(c), Some(r)) => Ok(InputBall::new(read_vector(c)?, r, norm)?),
        (None, None) => {
            let pts: Vec<Vec<f64>> = inputs.iter().map(|i| i.x.clone()).collect();
            Ok(default_input_ball(&pts, margin, norm)?)
        }
        _ => bail!("--S-center and --S-radius go together"),
    }
}

pub fn certify(ctx: &Context, a: &CertifyArgs) -> Result<()> {
    let start = Instant::now();
    let net = load_net(&a.net)?;
    let inputs = load_inputs(&a.input)?;
    check_input_dim(&net, &inputs)?;
    let q = a.norm;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut runs = Vec::new();
    for &eps in &a.eps {
        let eff = effective_eps(&net, eps)?;
        let bound = if a.model == Model::Lipschitz {
            let ball = lipschitz_set(a.s_center.as_deref(), a.s_radius, q, &inputs, eff)?;
            Some(lipschitz_bound(&net, &ball, q, &ctx.solver)?)
        } else {
            None
        };
        let seeds: Vec<u64> = inputs.iter().map(|_| rng.gen()).collect();
        let items = parallel_map(&inputs, ctx.workers, |n, inp| {
            certify_item(ctx, a, &net, inp, eff, bound.as_ref(), seeds[n])
        });
        let items = items.into_iter().collect::<Result<Vec<_>>>()?;
        let summary = summarize(&items);
        log::info!(
            "eps {eps}: certified {}/{} (95% CI [{:.4}, {:.4}])",
            summary.certified,
            summary.total,
            summary.ci95[0],
            summary.ci95[1]
        );
        runs.push(EpsRun { eps, effective_eps: eff, lipschitz_bound: bound, items, summary });
    }
    let report = CertifyReport {
        command: "certify",
        model: a.model,
        norm: q,
        seed: a.seed,
        normalization: net.normalization,
        runs,
        total_time_s: start.elapsed().as_secs_f64(),
    };
    emit(&report, a.out.as_deref())?;
    let bad: Vec<f64> = report.runs.iter().filter(|r| r.summary.consistent == Some(false)).map(|r| r.eps).collect();
    if !bad.is_empty() {
        bail!("certified inputs were broken by the attack at eps {bad:?}");
    }
    Ok(())
}

fn certify_item(
    ctx: &Context,
    a: &CertifyArgs,
    net: &MonDEQ,
    inp: &Input,
    eps: f64,
    bound: Option<&LipschitzBound>,
    seed: u64,
) -> Result<ItemResult> {
    let start = Instant::now();
    let pert = PerturbationSpec::new(inp.x.clone(), eps, a.norm)?;
    let (y0, certified, detail) = match a.model {
        Model::Robustness => {
            let s = RobustnessSettings { solver: ctx.solver, early_exit: !a.no_early_exit, ..Default::default() };
            let r = certify_robustness(net, &pert, &s)?;
            (r.y0, r.certified, serde_json::to_value(&r)?)
        }
        Model::Lipschitz => {
            let bound = bound.expect("bound computed for the lipschitz model");
            let r = certify_via_lipschitz(net, &inp.x, eps, a.norm, bound, 1e-6)?;
            (r.y0, r.certified, serde_json::to_value(r)?)
        }
        Model::Ellipsoid => {
            let s = EllipsoidSettings { solver: ctx.solver, slope_restriction: !a.no_slope, ..Default::default() };
            let r = certify_via_ellipsoid(net, &pert, &s)?;
            (r.y0, r.certified, serde_json::to_value(&r)?)
        }
        Model::Oracle => {
            let r = exact_certify(net, &pert, &ctx.solver)?;
            (r.y0, r.robust, serde_json::to_value(&r)?)
        }
    };
    let attack_success = if a.attack {
        let s = PgdSettings { steps: a.attack_steps, restarts: a.attack_restarts, seed, ..Default::default() };
        Some(pgd_attack(net, &inp.x, eps, a.norm, &s)?.success)
    } else {
        None
    };
    if attack_success == Some(true) && certified {
        log::error!("{} is certified but the attack succeeded", inp.name);
    }
    Ok(ItemResult {
        input: inp.name.clone(),
        y0,
        certified,
        attack_success,
        detail,
        item_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub command: String,
    pub bound: LipschitzBound,
    /// Norm-product bound for comparison.
    pub baseline: f64,
    pub sampled_lower_bound: Option<f64>,
    pub seed: u64,
    pub total_time_s: f64,
}

pub fn lipschitz(ctx: &Context, a: &LipschitzArgs) -> Result<()> {
    let start = Instant::now();
    let net = load_net(&a.net)?;
    let q = a.norm;
    let s_norm = a.s_norm.unwrap_or(q);
    let ball = match (&a.s_center, &a.inputs) {
        (Some(_), _) => lipschitz_set(a.s_center.as_deref(), a.s_radius, s_norm, &[], 0.0)?,
        (None, Some(dir)) => {
            let src = InputSource { x0: None, inputs: Some(dir.clone()), limit: None };
            let inputs = load_inputs(&src)?;
            check_input_dim(&net, &inputs)?;
            let margin = if a.eps > 0.0 { effective_eps(&net, a.eps)? } else { 0.0 };
            lipschitz_set(None, None, s_norm, &inputs, margin)?
        }
        (None, None) => bail!("give the input set with --S-center/--S-radius or --inputs"),
    };
    if ball.center.len() != net.p0() {
        bail!("input set center has length {}, network expects {}", ball.center.len(), net.p0());
    }
    if let Some(path) = &a.dump_sdp {
        let relax = shor_relax(&build_lipmon(&net, &ball, q)?)?;
        write_dump(&relax.problem, path)?;
    }
    let bound = lipschitz_bound(&net, &ball, q, &ctx.solver)?;
    let sampled = if a.samples > 0 {
        Some(sampled_lipschitz_lower_bound(&net, &ball, q, a.samples, a.seed)?)
    } else {
        None
    };
    let report = LipschitzReport {
        command: "lipschitz".into(),
        baseline: baseline_bound(&net, q)?,
        bound,
        sampled_lower_bound: sampled,
        seed: a.seed,
        total_time_s: start.elapsed().as_secs_f64(),
    };
    emit(&report, a.out.as_deref())
}

fn read_bound(path: &Path) -> Result<LipschitzBound> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let inner = v.get("bound").cloned().unwrap_or(v);
    serde_json::from_value(inner).with_context(|| format!("{} does not hold a Lipschitz bound", path.display()))
}

pub fn certify_lip(ctx: &Context, a: &CertifyLipArgs) -> Result<()> {
    let start = Instant::now();
    let net = load_net(&a.net)?;
    let bound = read_bound(&a.bound)?;
    let inputs = load_inputs(&a.input)?;
    check_input_dim(&net, &inputs)?;
    let q = a.norm.unwrap_or(bound.q);
    let mut runs = Vec::new();
    for &eps in &a.eps {
        let eff = effective_eps(&net, eps)?;
        let items = parallel_map(&inputs, ctx.workers, |_, inp| -> Result<ItemResult> {
            let t = Instant::now();
            let r = certify_via_lipschitz(&net, &inp.x, eff, q, &bound, 1e-6)?;
            Ok(ItemResult {
                input: inp.name.clone(),
                y0: r.y0,
                certified: r.certified,
                attack_success: None,
                detail: serde_json::to_value(r)?,
                item_time_s: t.elapsed().as_secs_f64(),
            })
        });
        let items = items.into_iter().collect::<Result<Vec<_>>>()?;
        let summary = summarize(&items);
        runs.push(EpsRun { eps, effective_eps: eff, lipschitz_bound: None, items, summary });
    }
    let report = CertifyReport {
        command: "certify-lip",
        model: Model::Lipschitz,
        norm: q,
        seed: 0,
        normalization: net.normalization,
        runs,
        total_time_s: start.elapsed().as_secs_f64(),
    };
    emit(&report, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct EllipsoidCommandReport {
    command: &'static str,
    eps: f64,
    effective_eps: f64,
    seed: u64,
    figure_labels: Option<[usize; 2]>,
    report: EllipsoidReport,
}

pub fn ellipsoid(ctx: &Context, a: &EllipsoidArgs) -> Result<()> {
    let net = load_net(&a.net)?;
    let x0 = read_vector(&a.x0)?;
    let eff = effective_eps(&net, a.eps)?;
    let pert = PerturbationSpec::new(x0.clone(), eff, a.norm)?;
    let s = EllipsoidSettings { solver: ctx.solver, slope_restriction: !a.no_slope, ..Default::default() };
    let report = certify_via_ellipsoid(&net, &pert, &s)?;
    let mut figure_labels = None;
    if let Some(path) = &a.figure {
        let Some(fit) = &report.fit else { bail!("a figure needs at least two outputs") };
        let (y0, i) = match a.labels.as_deref() {
            Some([y0, i]) => (*y0, *i),
            Some(other) => bail!("--labels takes two labels, got {other:?}"),
            None => {
                let logits = EquilibriumSolver::new(&net, FixedPointSettings::default()).forward(&x0)?;
                let y0 = argmax(&logits);
                let runner_up =
                    (0..net.k()).filter(|&j| j != y0).max_by(|&p, &r| logits[p].total_cmp(&logits[r])).expect("K >= 2");
                (y0, runner_up)
            }
        };
        let solver = EquilibriumSolver::new(&net, FixedPointSettings::default());
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let mut outputs = Vec::with_capacity(a.samples);
        for _ in 0..a.samples {
            let x = sample_ball(&mut rng, &x0, eff, a.norm)?;
            outputs.push(solver.forward(&x)?);
        }
        let fig = projection_figure(&fit.ellipsoid, &outputs, y0, i)?;
        write_text(path, &write_svg(&fig)?)?;
        figure_labels = Some([y0, i]);
    }
    let out = EllipsoidCommandReport {
        command: "ellipsoid",
        eps: a.eps,
        effective_eps: eff,
        seed: a.seed,
        figure_labels,
        report,
    };
    emit(&out, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct AttackReport {
    command: &'static str,
    eps: f64,
    effective_eps: f64,
    norm: Norm,
    seed: u64,
    result: AttackResult,
}

pub fn attack(a: &AttackArgs) -> Result<()> {
    let net = load_net(&a.net)?;
    let x0 = read_vector(&a.x0)?;
    let eff = effective_eps(&net, a.eps)?;
    let s = PgdSettings {
        steps: a.steps,
        restarts: a.restarts,
        step_size: a.step_size,
        seed: a.seed,
        clamp: a.clamp.then_some(PIXEL_RANGE),
    };
    let result = pgd_attack(&net, &x0, eff, a.norm, &s)?;
    if let (Some(path), Some(adv)) = (&a.adversarial_out, &result.adversarial_x) {
        write_text(path, &format!("{}\n", serde_json::to_string(adv)?))?;
    }
    if let Some(path) = &a.image {
        let mut panels: Vec<(String, &[f64])> = vec![(format!("clean, label {}", result.y0), &x0)];
        if let (Some(adv), Some(label)) = (&result.adversarial_x, result.adversarial_label) {
            panels.push((format!("adversarial, classified as {label}"), adv));
        }
        let refs: Vec<(&str, &[f64])> = panels.iter().map(|(t, v)| (t.as_str(), *v)).collect();
        write_text(path, &image_grid(&refs, a.image_width)?)?;
    }
    let report = AttackReport { command: "attack", eps: a.eps, effective_eps: eff, norm: a.norm, seed: a.seed, result };
    emit(&report, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct OracleCommandReport {
    command: &'static str,
    eps: f64,
    effective_eps: f64,
    norm: Norm,
    report: OracleReport,
    total_time_s: f64,
}

pub fn oracle(ctx: &Context, a: &OracleArgs) -> Result<()> {
    let start = Instant::now();
    let net = load_net(&a.net)?;
    let x0 = read_vector(&a.x0)?;
    let eff = effective_eps(&net, a.eps)?;
    let pert = PerturbationSpec::new(x0, eff, a.norm)?;
    let report = exact_certify(&net, &pert, &ctx.solver)?;
    let out = OracleCommandReport {
        command: "oracle",
        eps: a.eps,
        effective_eps: eff,
        norm: a.norm,
        report,
        total_time_s: start.elapsed().as_secs_f64(),
    };
    emit(&out, a.out.as_deref())
}

#[derive(Debug, Serialize)]
struct ImportReport {
    command: &'static str,
    count: usize,
    rows: usize,
    cols: usize,
    normalization: NormalizationSpec,
    files: Vec<String>,
}

pub fn import_mnist(a: &ImportMnistArgs) -> Result<()> {
    let norm = NormalizationSpec::new(a.mu, a.sigma)?;
    let bytes = fs::read(&a.images).with_context(|| format!("reading {}", a.images.display()))?;
    let images = mnist::parse_images(&bytes)?;
    let labels = match &a.labels {
        Some(p) => {
            let l = mnist::parse_labels(&fs::read(p).with_context(|| format!("reading {}", p.display()))?)?;
            if l.len() != images.pixels.len() {
                bail!("{} labels for {} images", l.len(), images.pixels.len());
            }
            Some(l)
        }
        None => None,
    };
    let end = a.count.map_or(images.pixels.len(), |c| (a.offset + c).min(images.pixels.len()));
    if a.offset >= end {
        bail!("offset {} leaves no images (file has {})", a.offset, images.pixels.len());
    }
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut files = Vec::new();
    for idx in a.offset..end {
        let name = format!("{idx:05}.json");
        let v = mnist::normalize(&images.pixels[idx], norm.mu, norm.sigma);
        write_text(&a.out_dir.join(&name), &format!("{}\n", serde_json::to_string(&v)?))?;
        files.push(name);
    }
    if let Some(l) = labels {
        let sel: Vec<u8> = l[a.offset..end].to_vec();
        write_text(&a.out_dir.join("labels.json"), &format!("{}\n", serde_json::to_string(&sel)?))?;
    }
    let report = ImportReport {
        command: "import-mnist",
        count: files.len(),
        rows: images.rows,
        cols: images.cols,
        normalization: norm,
        files,
    };
    emit(&report, None)
}
