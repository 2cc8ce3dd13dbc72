#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use localw2::experiments::{
    bench_losses, load_concrete, median, run_concrete, run_linreg, run_nn_recon, run_ode, seeds, ConcreteConfig,
    LinregConfig, NnReconConfig, NormChoice, OdeRunConfig,
};
use localw2::models::{MlpArch, Propagation};
use localw2::ode::{write_trajectories, Trajectory};
use localw2::verify::{self, CheckResult};
use localw2::{LossKind, TrainConfig};

use report::{fmt_f64, Report, Table};

/// Exit code 1 for bad input, 2 for failures while running.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Runtime(m) => m,
        }
    }
}

impl From<localw2::Error> for Failure {
    fn from(e: localw2::Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "localw2", version, about = "Uncertainty quantification with local Wasserstein-2 losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recover a linear-Gaussian model from samples.
    Linreg(LinregArgs),
    /// Fit a stochastic MLP to a nonlinear benchmark and score it on a grid.
    NnRecon(NnArgs),
    /// Concrete compressive strength study (needs --data).
    Concrete(ConcreteArgs),
    /// Learn an uncertain ODE right-hand side from trajectories.
    Ode(OdeArgs),
    /// Linear recovery errors across neighborhood radii.
    SweepDelta(SweepDeltaArgs),
    /// Linear recovery errors across training-set sizes.
    SweepN(SweepNArgs),
    /// Nonlinear benchmark errors across network widths and depths.
    SweepArch(SweepArchArgs),
    /// Evaluate every loss on one fixed prediction set.
    BenchLoss(BenchArgs),
    /// Run a built-in property suite.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Base seed; repeats use seed, seed+1, ...
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Output directory [default: runs/<experiment>]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Plain-text `key = value` file of flag values; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Neighborhood radius for local losses.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, value_parser = ["w2", "mmd", "mse", "mean2var"])]
    loss: Option<String>,
    #[arg(long, conflicts_with = "global")]
    local: bool,
    #[arg(long)]
    global: bool,
}

#[derive(Args, Debug)]
struct LinregArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    n: Option<usize>,
    /// homo | hete
    #[arg(long)]
    norm: Option<String>,
}

#[derive(Args, Debug)]
struct ArchArgs {
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Residual connections between hidden layers.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    resnet: Option<bool>,
}

#[derive(Args, Debug)]
struct NnArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    arch: ArchArgs,
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct ConcreteArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    arch: ArchArgs,
    /// CSV with cement, fly_ash, water, superplasticizer, coarse_aggregate, fine_aggregate, strength.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    norm: Option<String>,
    /// Radius of the test-set evaluation neighborhoods.
    #[arg(long)]
    delta0: Option<f64>,
}

#[derive(Args, Debug)]
struct OdeArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    /// Radius of the evaluation neighborhoods on initial conditions.
    #[arg(long)]
    delta0: Option<f64>,
    /// SD of initial conditions around 1.
    #[arg(long)]
    a: Option<f64>,
    /// Half-width of the uniform latent.
    #[arg(long)]
    sigma_u: Option<f64>,
    /// RK4 steps over the horizon.
    #[arg(long)]
    m: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepDeltaArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    norm: Option<String>,
    /// Comma-separated radii.
    #[arg(long, value_delimiter = ',', default_value = "0.025,0.05,0.1,0.2,0.4")]
    deltas: Vec<f64>,
}

#[derive(Args, Debug)]
struct SweepNArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    norm: Option<String>,
    /// Comma-separated training-set sizes.
    #[arg(long, value_delimiter = ',', default_value = "250,500,1000,2000,4000")]
    ns: Vec<usize>,
}

#[derive(Args, Debug)]
struct SweepArchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "20,50,100")]
    widths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    depths: Vec<usize>,
    /// Restrict to one propagation; both are swept by default.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    resnet: Option<bool>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Oracles,
    Gradients,
    Bounds,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    suite: Suite,
    /// Swap in a deliberately wrong transport solver.
    #[arg(long, hide = true)]
    mutate: bool,
}

type Flags = Vec<(String, String)>;

fn flag(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn norm_choice(arg: &Option<String>, default: NormChoice) -> Result<NormChoice, Failure> {
    arg.as_deref().map_or(Ok(default), |s| s.parse().map_err(Failure::from))
}

fn norm_label(n: NormChoice) -> &'static str {
    match n {
        NormChoice::Homo => "homo",
        NormChoice::Hete => "hete",
    }
}

impl TrainArgs {
    fn apply(&self, run: &RunArgs, tc: &mut TrainConfig) -> Result<(), Failure> {
        tc.epochs = self.epochs.unwrap_or(tc.epochs);
        tc.lr = self.lr.unwrap_or(tc.lr);
        tc.weight_decay = self.weight_decay.unwrap_or(tc.weight_decay);
        tc.delta = self.delta.unwrap_or(tc.delta);
        tc.seed = run.seed.unwrap_or(tc.seed);
        tc.repeats = run.repeats.unwrap_or(tc.repeats);
        let family = self.loss.clone().unwrap_or_else(|| tc.loss.family.to_string());
        let locality = if self.global { "global" } else { "local" };
        tc.loss = format!("{locality}-{family}").parse::<LossKind>()?;
        tc.validate()?;
        Ok(())
    }
}

fn train_flags(tc: &TrainConfig) -> Flags {
    let text = tc.loss.to_string();
    let (locality, family) = text.split_once('-').unwrap_or(("local", "w2"));
    vec![
        flag("seed", tc.seed),
        flag("repeats", tc.repeats),
        flag("epochs", tc.epochs),
        flag("lr", tc.lr),
        flag("weight-decay", tc.weight_decay),
        flag("delta", tc.delta),
        flag("loss", family),
        flag(locality, true),
    ]
}

fn out_dir(run: &RunArgs, name: &str) -> Result<PathBuf, Failure> {
    let dir = run.out.clone().unwrap_or_else(|| Path::new("runs").join(name));
    report::prepare_dir(&dir, run.force)?;
    Ok(dir)
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(|e| Failure::Runtime(e.to_string()))
}

fn check_arch(width: usize, depth: usize, resnet: bool) -> Result<(), Failure> {
    let prop = if resnet { Propagation::ResNet } else { Propagation::FeedForward };
    MlpArch::uniform(1, width, depth, 1, prop)?;
    Ok(())
}

fn linreg_config(run: &RunArgs, train: &TrainArgs, n: Option<usize>, norm: &Option<String>) -> Result<LinregConfig, Failure> {
    let mut cfg = LinregConfig::defaults(1);
    train.apply(run, &mut cfg.train)?;
    cfg.n = n.unwrap_or(cfg.n);
    cfg.norm = norm_choice(norm, cfg.norm)?;
    Ok(cfg)
}

fn cmd_linreg(a: &LinregArgs) -> Result<(Report, PathBuf), Failure> {
    let cfg = linreg_config(&a.run, &a.train, a.n, &a.norm)?;
    let dir = out_dir(&a.run, "linreg")?;
    let mut r = Report::new("linreg");
    r.seeds = seeds(cfg.train.seed, cfg.train.repeats);
    let results = r.seeds.iter().map(|&s| run_linreg(&cfg, s)).collect::<Result<Vec<_>, _>>()?;
    let eb: Vec<f64> = results.iter().map(|x| x.error_b).collect();
    let es: Vec<f64> = results.iter().map(|x| x.error_sigma).collect();
    r.metrics = json!({
        "median_error_b": median(&eb),
        "median_error_sigma": median(&es),
        "error_b": eb,
        "error_sigma": es,
    });
    r.traces = results.iter().map(|x| (format!("loss_seed{}", x.seed), x.loss_trace.clone())).collect();
    r.runs = to_value(&results)?;
    r.config = to_value(&cfg)?;
    r.flags = train_flags(&cfg.train);
    r.flags.extend([flag("n", cfg.n), flag("norm", norm_label(cfg.norm))]);
    Ok((r, dir))
}

fn nn_config(run: &RunArgs, train: &TrainArgs, arch: &ArchArgs, n: Option<usize>) -> Result<NnReconConfig, Failure> {
    let mut cfg = NnReconConfig::defaults(1);
    train.apply(run, &mut cfg.train)?;
    cfg.n = n.unwrap_or(cfg.n);
    cfg.width = arch.width.unwrap_or(cfg.width);
    cfg.depth = arch.depth.unwrap_or(cfg.depth);
    cfg.resnet = arch.resnet.unwrap_or(cfg.resnet);
    check_arch(cfg.width, cfg.depth, cfg.resnet)?;
    Ok(cfg)
}

fn nn_flags(cfg: &NnReconConfig) -> Flags {
    let mut f = train_flags(&cfg.train);
    f.extend([flag("n", cfg.n), flag("width", cfg.width), flag("depth", cfg.depth), flag("resnet", cfg.resnet)]);
    f
}

fn grid_table(name: String, grid: &[f64], truth: &[localw2::metrics::Moments], pred: &[localw2::metrics::Moments]) -> Table {
    Table {
        name,
        header: vec!["x", "truth_mean", "truth_sd", "pred_mean", "pred_sd"],
        rows: grid
            .iter()
            .zip(truth.iter().zip(pred))
            .map(|(x, (t, p))| vec![fmt_f64(*x), fmt_f64(t.mean), fmt_f64(t.sd), fmt_f64(p.mean), fmt_f64(p.sd)])
            .collect(),
    }
}

fn cmd_nn(a: &NnArgs) -> Result<(Report, PathBuf), Failure> {
    let cfg = nn_config(&a.run, &a.train, &a.arch, a.n)?;
    let dir = out_dir(&a.run, "nn-recon")?;
    let mut r = Report::new("nn-recon");
    r.seeds = seeds(cfg.train.seed, cfg.train.repeats);
    let results = r.seeds.iter().map(|&s| run_nn_recon(&cfg, s)).collect::<Result<Vec<_>, _>>()?;
    let me: Vec<f64> = results.iter().map(|x| x.mean_error).collect();
    let se: Vec<f64> = results.iter().map(|x| x.sd_error).collect();
    r.metrics = json!({
        "median_mean_error": median(&me),
        "median_sd_error": median(&se),
        "mean_error": me,
        "sd_error": se,
    });
    for x in &results {
        r.traces.push((format!("loss_seed{}", x.seed), x.loss_trace.clone()));
        r.tables.push(grid_table(format!("grid_seed{}", x.seed), &x.grid, &x.truth_moments, &x.pred_moments));
    }
    r.runs = to_value(&results)?;
    r.config = to_value(&cfg)?;
    r.flags = nn_flags(&cfg);
    Ok((r, dir))
}

const STANDARDIZATION: &str =
    "inputs standardized with the training split's mean and population SD; first floor(2N/3) rows train, rest test";

fn cmd_concrete(a: &ConcreteArgs) -> Result<(Report, PathBuf), Failure> {
    let mut cfg = ConcreteConfig::defaults(1);
    a.train.apply(&a.run, &mut cfg.train)?;
    cfg.width = a.arch.width.unwrap_or(cfg.width);
    cfg.depth = a.arch.depth.unwrap_or(cfg.depth);
    cfg.resnet = a.arch.resnet.unwrap_or(cfg.resnet);
    cfg.norm = norm_choice(&a.norm, cfg.norm)?;
    cfg.delta0 = a.delta0.unwrap_or(cfg.delta0);
    check_arch(cfg.width, cfg.depth, cfg.resnet)?;
    if !(cfg.delta0 > 0.0) {
        return Err(Failure::Validation(format!("--delta0 must be positive, got {}", cfg.delta0)));
    }
    let path = a.data.clone().ok_or_else(|| Failure::Validation("concrete needs --data <csv>".into()))?;
    if !path.is_file() {
        return Err(Failure::Validation(format!("dataset file {} not found", path.display())));
    }
    let data = load_concrete(&path)?;
    let dir = out_dir(&a.run, "concrete")?;
    let mut r = Report::new("concrete");
    r.seeds = seeds(cfg.train.seed, cfg.train.repeats);
    let results = r.seeds.iter().map(|&s| run_concrete(&cfg, &data, s)).collect::<Result<Vec<_>, _>>()?;
    let me: Vec<f64> = results.iter().map(|x| x.moments.mean_error).collect();
    let se: Vec<f64> = results.iter().map(|x| x.moments.sd_error).collect();
    r.metrics = json!({
        "median_mean_error": median(&me),
        "median_sd_error": median(&se),
        "mean_error": me,
        "sd_error": se,
    });
    for x in &results {
        r.traces.push((format!("loss_seed{}", x.seed), x.loss_trace.clone()));
        let rows = x
            .moments
            .truth
            .iter()
            .zip(&x.moments.pred)
            .enumerate()
            .map(|(i, (t, p))| vec![i.to_string(), fmt_f64(t.mean), fmt_f64(t.sd), fmt_f64(p.mean), fmt_f64(p.sd)])
            .collect();
        r.tables.push(Table {
            name: format!("anchors_seed{}", x.seed),
            header: vec!["anchor", "truth_mean", "truth_sd", "pred_mean", "pred_sd"],
            rows,
        });
    }
    r.runs = to_value(&results)?;
    let mut config = to_value(&cfg)?;
    config["data"] = json!(path.display().to_string());
    config["standardization"] = json!(STANDARDIZATION);
    r.config = config;
    r.flags = train_flags(&cfg.train);
    r.flags.extend([
        flag("data", path.display()),
        flag("norm", norm_label(cfg.norm)),
        flag("delta0", cfg.delta0),
        flag("width", cfg.width),
        flag("depth", cfg.depth),
        flag("resnet", cfg.resnet),
    ]);
    Ok((r, dir))
}

fn cmd_ode(a: &OdeArgs) -> Result<(Report, PathBuf), Failure> {
    let mut cfg = OdeRunConfig::defaults(1);
    a.train.apply(&a.run, &mut cfg.train)?;
    cfg.width = a.width.unwrap_or(cfg.width);
    cfg.depth = a.depth.unwrap_or(cfg.depth);
    cfg.delta0 = a.delta0.unwrap_or(cfg.delta0);
    cfg.ode.init_sd = a.a.unwrap_or(cfg.ode.init_sd);
    cfg.ode.sigma_u = a.sigma_u.unwrap_or(cfg.ode.sigma_u);
    cfg.ode.steps = a.m.unwrap_or(cfg.ode.steps);
    cfg.ode.validate()?;
    localw2::ode::neural_rhs_arch(cfg.width, cfg.depth)?;
    if !(cfg.delta0 > 0.0) {
        return Err(Failure::Validation(format!("--delta0 must be positive, got {}", cfg.delta0)));
    }
    let dir = out_dir(&a.run, "ode")?;
    let mut r = Report::new("ode");
    r.seeds = seeds(cfg.train.seed, cfg.train.repeats);
    let results = r.seeds.iter().map(|&s| run_ode(&cfg, s)).collect::<Result<Vec<_>, _>>()?;
    let yhat: Vec<f64> = results.iter().map(|x| x.errors.error_in_yhat).collect();
    let ghat: Vec<f64> = results.iter().map(|x| x.errors.error_in_ghat).collect();
    let slice_max: Vec<f64> =
        results.iter().map(|x| x.errors.per_slice_normalized.iter().copied().fold(0.0, f64::max)).collect();
    r.metrics = json!({
        "median_error_in_yhat": median(&yhat),
        "median_error_in_ghat": median(&ghat),
        "median_max_slice_error": median(&slice_max),
        "error_in_yhat": yhat,
        "error_in_ghat": ghat,
        "max_slice_error": slice_max,
    });
    let traj_dir = dir.join("trajectories");
    let mut trajectories: Vec<(PathBuf, &[Trajectory], &[f64])> = Vec::new();
    for x in &results {
        r.traces.push((format!("loss_seed{}", x.seed), x.loss_trace.clone()));
        r.tables.push(Table {
            name: format!("slices_seed{}", x.seed),
            header: vec!["t", "normalized_error"],
            rows: x.times.iter().zip(&x.errors.per_slice_normalized).map(|(t, e)| vec![fmt_f64(*t), fmt_f64(*e)]).collect(),
        });
        trajectories.push((traj_dir.join(format!("truth_seed{}.csv", x.seed)), &x.test_truth, &x.times));
        trajectories.push((traj_dir.join(format!("model_seed{}.csv", x.seed)), &x.test_model, &x.times));
    }
    std::fs::create_dir_all(&traj_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", traj_dir.display())))?;
    for (path, trajs, times) in trajectories {
        write_trajectories(&path, trajs, times)?;
    }
    r.runs = to_value(&results)?;
    r.config = to_value(&cfg)?;
    r.flags = train_flags(&cfg.train);
    r.flags.extend([
        flag("width", cfg.width),
        flag("depth", cfg.depth),
        flag("delta0", cfg.delta0),
        flag("a", cfg.ode.init_sd),
        flag("sigma-u", cfg.ode.sigma_u),
        flag("m", cfg.ode.steps),
    ]);
    Ok((r, dir))
}

fn list(values: &[impl ToString]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

/// One linear-recovery sweep over `points`, each point setting one knob.
fn linreg_sweep<T: Copy + ToString + serde::Serialize>(
    name: &'static str,
    knob: &'static str,
    points: &[T],
    base: &LinregConfig,
    set: impl Fn(&mut LinregConfig, T),
) -> Result<Report, Failure> {
    if points.is_empty() {
        return Err(Failure::Validation(format!("{name} needs at least one {knob} value")));
    }
    for &p in points {
        let mut cfg = base.clone();
        set(&mut cfg, p);
        cfg.train.validate()?;
    }
    let mut r = Report::new(name);
    r.seeds = seeds(base.train.seed, base.train.repeats);
    let (mut runs, mut curve, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for &p in points {
        let mut cfg = base.clone();
        set(&mut cfg, p);
        let results = r.seeds.iter().map(|&s| run_linreg(&cfg, s)).collect::<Result<Vec<_>, _>>()?;
        let eb: Vec<f64> = results.iter().map(|x| x.error_b).collect();
        let es: Vec<f64> = results.iter().map(|x| x.error_sigma).collect();
        curve.push(json!({ knob: p, "median_error_b": median(&eb), "median_error_sigma": median(&es) }));
        for x in results {
            rows.push(vec![
                p.to_string(),
                x.seed.to_string(),
                fmt_f64(x.error_b),
                fmt_f64(x.error_sigma),
                x.mean_neighborhood_size.map_or(String::new(), fmt_f64),
            ]);
            r.traces.push((format!("loss_{knob}{}_seed{}", p.to_string(), x.seed), x.loss_trace.clone()));
            runs.push(json!({ knob: p, "result": to_value(&x)? }));
        }
    }
    r.tables.push(Table {
        name: name.replace('-', "_"),
        header: vec![knob, "seed", "error_b", "error_sigma", "mean_neighborhood_size"],
        rows,
    });
    r.metrics = json!({ "curve": curve });
    r.runs = Value::Array(runs);
    r.config = json!({ "base": to_value(base)?, knob: points });
    r.flags = train_flags(&base.train);
    Ok(r)
}

fn cmd_sweep_delta(a: &SweepDeltaArgs) -> Result<(Report, PathBuf), Failure> {
    let base = linreg_config(&a.run, &a.train, a.n, &a.norm)?;
    if let Some(bad) = a.deltas.iter().find(|d| !(**d > 0.0)) {
        return Err(Failure::Validation(format!("radius must be positive, got {bad}")));
    }
    let dir = out_dir(&a.run, "sweep-delta")?;
    let mut r = linreg_sweep("sweep-delta", "delta", &a.deltas, &base, |c, d| c.train.delta = d)?;
    r.flags.retain(|(k, _)| k != "delta");
    r.flags.extend([flag("n", base.n), flag("norm", norm_label(base.norm)), flag("deltas", list(&a.deltas))]);
    Ok((r, dir))
}

fn cmd_sweep_n(a: &SweepNArgs) -> Result<(Report, PathBuf), Failure> {
    let base = linreg_config(&a.run, &a.train, None, &a.norm)?;
    if a.ns.iter().any(|&n| n < 5) {
        return Err(Failure::Validation("every N must be at least 5".into()));
    }
    let dir = out_dir(&a.run, "sweep-n")?;
    let mut r = linreg_sweep("sweep-n", "n", &a.ns, &base, |c, n| c.n = n)?;
    r.flags.extend([flag("norm", norm_label(base.norm)), flag("ns", list(&a.ns))]);
    Ok((r, dir))
}

fn cmd_sweep_arch(a: &SweepArchArgs) -> Result<(Report, PathBuf), Failure> {
    let base = nn_config(&a.run, &a.train, &ArchArgs { width: None, depth: None, resnet: None }, a.n)?;
    let props: Vec<bool> = a.resnet.map_or(vec![false, true], |r| vec![r]);
    if a.widths.is_empty() || a.depths.is_empty() {
        return Err(Failure::Validation("sweep-arch needs at least one width and one depth".into()));
    }
    for (&w, &d) in a.widths.iter().flat_map(|w| a.depths.iter().map(move |d| (w, d))) {
        for &p in &props {
            check_arch(w, d, p)?;
        }
    }
    let dir = out_dir(&a.run, "sweep-arch")?;
    let mut r = Report::new("sweep-arch");
    r.seeds = seeds(base.train.seed, base.train.repeats);
    let (mut runs, mut curve, mut rows) = (Vec::new(), Vec::new(), Vec::new());
    for &resnet in &props {
        for &depth in &a.depths {
            for &width in &a.widths {
                let cfg = NnReconConfig { width, depth, resnet, ..base.clone() };
                let results = r.seeds.iter().map(|&s| run_nn_recon(&cfg, s)).collect::<Result<Vec<_>, _>>()?;
                let me: Vec<f64> = results.iter().map(|x| x.mean_error).collect();
                let se: Vec<f64> = results.iter().map(|x| x.sd_error).collect();
                let prop = if resnet { "resnet" } else { "feed-forward" };
                curve.push(json!({
                    "width": width, "depth": depth, "propagation": prop,
                    "median_mean_error": median(&me), "median_sd_error": median(&se),
                }));
                for x in results {
                    rows.push(vec![
                        width.to_string(),
                        depth.to_string(),
                        prop.to_string(),
                        x.seed.to_string(),
                        fmt_f64(x.mean_error),
                        fmt_f64(x.sd_error),
                    ]);
                    r.traces.push((format!("loss_{prop}_w{width}_d{depth}_seed{}", x.seed), x.loss_trace.clone()));
                    runs.push(json!({ "width": width, "depth": depth, "propagation": prop, "result": to_value(&x)? }));
                }
            }
        }
    }
    r.tables.push(Table {
        name: "sweep_arch".into(),
        header: vec!["width", "depth", "propagation", "seed", "mean_error", "sd_error"],
        rows,
    });
    r.metrics = json!({ "curve": curve });
    r.runs = Value::Array(runs);
    r.config = json!({ "base": to_value(&base)?, "widths": a.widths, "depths": a.depths, "resnet": props });
    r.flags = train_flags(&base.train);
    r.flags.extend([flag("n", base.n), flag("widths", list(&a.widths)), flag("depths", list(&a.depths))]);
    if let Some(p) = a.resnet {
        r.flags.push(flag("resnet", p));
    }
    Ok((r, dir))
}

fn cmd_bench(a: &BenchArgs) -> Result<(Report, PathBuf), Failure> {
    let n = a.n.unwrap_or(1000);
    let delta = a.delta.unwrap_or(0.1);
    let seed = a.run.seed.unwrap_or(1);
    if !(delta > 0.0) {
        return Err(Failure::Validation(format!("neighborhood radius must be positive, got {delta}")));
    }
    if n < 5 {
        return Err(Failure::Validation(format!("need at least 5 samples, got {n}")));
    }
    let dir = out_dir(&a.run, "bench-loss")?;
    let rows = bench_losses(n, delta, seed)?;
    let mut r = Report::new("bench-loss");
    r.seeds = vec![seed];
    r.metrics = Value::Object(rows.iter().map(|x| (x.loss.to_string(), json!(x.value))).collect());
    r.tables.push(Table {
        name: "bench_loss".into(),
        header: vec!["loss", "value", "seconds"],
        rows: rows.iter().map(|x| vec![x.loss.to_string(), fmt_f64(x.value), fmt_f64(x.seconds)]).collect(),
    });
    r.runs = to_value(&rows)?;
    r.config = json!({ "n": n, "delta": delta, "seed": seed });
    r.flags = vec![flag("seed", seed), flag("n", n), flag("delta", delta)];
    Ok((r, dir))
}

fn cmd_verify(a: &VerifyArgs) -> Result<(), Failure> {
    let checks: Vec<CheckResult> = match a.suite {
        Suite::Oracles if a.mutate => {
            verify::oracle_checks_with(&|x, y| Ok(verify::assignment_solver(x, y)? + 1e-6))
        }
        Suite::Oracles => verify::oracle_checks(),
        Suite::Gradients => verify::gradient_checks(),
        Suite::Bounds => verify::bound_checks_suite(),
    };
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(())
}

fn run(args: Vec<String>) -> Result<(), Failure> {
    let args = config::merge(args)?;
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(Failure::Validation(e.render().to_string().trim_start_matches("error: ").trim_end().to_string()));
        }
    };
    let started = Instant::now();
    let (report, dir) = match &cli.command {
        Command::Linreg(a) => cmd_linreg(a)?,
        Command::NnRecon(a) => cmd_nn(a)?,
        Command::Concrete(a) => cmd_concrete(a)?,
        Command::Ode(a) => cmd_ode(a)?,
        Command::SweepDelta(a) => cmd_sweep_delta(a)?,
        Command::SweepN(a) => cmd_sweep_n(a)?,
        Command::SweepArch(a) => cmd_sweep_arch(a)?,
        Command::BenchLoss(a) => cmd_bench(a)?,
        Command::Verify(a) => return cmd_verify(a),
    };
    report::emit(&report, &dir, started)?;
    println!("wrote {}", dir.join("report.json").display());
    Ok(())
}

fn main() -> ExitCode {
    match run(std::env::args().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
