mod data;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use burstdof_core::burst::{autofocus, extract_burst, sample_trajectory_with, AlphaRange};
use burstdof_core::eval::{evaluate, AlphaMode, EvalConfig};
use burstdof_core::io::{write_pfm, write_png, BitDepth};
use burstdof_core::models::{Bpn, BpnConfig, Mmn, MmnConfig, Pipeline};
use burstdof_core::ndgrad::op_suite;
use burstdof_core::scene::{generate_scene, random_scene_spec, scene_rng, Scene, SceneConfig};
use burstdof_core::train::{train_bpn, train_mmn, TrainConfig};
use burstdof_core::{bias_disparity, circular_aperture_mask, ground_truth, Rect};

#[derive(Parser)]
#[command(name = "burstdof", version, about = "Synthetic shallow depth-of-field from handheld bursts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random plane-stack scenes (views, disparity, spec).
    GenData(GenData),
    /// Render the shallow depth-of-field ground truth and biased disparity.
    MakeGt(MakeGt),
    /// Simulate a refocused handheld burst from a scene.
    SimulateBurst(SimulateBurst),
    /// Train the blur prediction network.
    TrainBpn(TrainBpn),
    /// Train the merging network with a frozen blur prediction network.
    TrainMmn(TrainMmn),
    /// Run the full multi-scale pipeline on a burst.
    Infer(Infer),
    /// Score a trained pipeline and the baselines on a dataset.
    Eval(Eval),
    /// Finite-difference check of every differentiable op.
    GradCheck(GradCheck),
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON scene configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct MakeGt {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    alpha: f64,
    /// Aperture radius in viewpoints; defaults to the full grid half-extent.
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateBurst {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value_t = 9)]
    frames: usize,
    /// Refocus factor; autofocus when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    /// Keep the mean viewpoint at the grid center.
    #[arg(long)]
    constrained: bool,
    #[arg(long, default_value_t = 1)]
    max_jitter: i32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON training configuration; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Scenes held out for validation.
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 9)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainBpn {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, default_value_t = 8)]
    base: usize,
}

#[derive(Args)]
struct TrainMmn {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    bpn: PathBuf,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
}

#[derive(Args)]
struct Infer {
    #[arg(long)]
    bpn: PathBuf,
    #[arg(long)]
    mmn: PathBuf,
    /// Directory with frame_NN.png and trajectory.json.
    #[arg(long)]
    burst: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-scale merge weights as an RGB PNG.
    #[arg(long)]
    weights_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    bpn: PathBuf,
    #[arg(long)]
    mmn: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fixed refocus factor; autofocus when omitted.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 4.0)]
    blur_k: f64,
    #[arg(long, default_value_t = 9)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradCheck {
    /// Number of random seeds per op, starting at --seed.
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
        }
        None => Ok(T::default()),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn gen_data(args: GenData) -> Result<()> {
    if args.n == 0 {
        bail!("--n must be at least 1");
    }
    let cfg: SceneConfig = read_json(args.config.as_deref())?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.n {
        let spec = random_scene_spec(&cfg, args.size, &mut scene_rng(args.seed, i));
        let scene = generate_scene(&spec)?;
        data::save_scene(&scene, &spec, &args.out.join(data::scene_dir_name(i)))?;
    }
    eprintln!("wrote {} scenes to {}", args.n, args.out.display());
    Ok(())
}

fn aperture(scene: &Scene, radius: Option<f64>) -> Result<burstdof_core::ApertureMask> {
    let lf = &scene.light_field;
    Ok(circular_aperture_mask(lf.grid_size(), radius.unwrap_or(lf.half_extent() as f64))?)
}

fn make_gt(args: MakeGt) -> Result<()> {
    let scene = data::load_scene(&args.scene, args.grid)?;
    let gt = ground_truth(&scene.light_field, &aperture(&scene, args.radius)?, args.alpha)?;
    fs::create_dir_all(&args.out)?;
    write_png(&gt, &args.out.join("gt.png"), BitDepth::Sixteen)?;
    write_pfm(&bias_disparity(&scene.disparity, args.alpha), &args.out.join(data::DISPARITY_FILE))?;
    Ok(())
}

fn simulate_burst(args: SimulateBurst) -> Result<()> {
    let scene = data::load_scene(&args.scene, args.grid)?;
    let lf = &scene.light_field;
    let traj = sample_trajectory_with(args.frames, lf.grid_size(), args.seed, args.constrained, args.max_jitter)?;
    let alpha = match args.alpha {
        Some(a) => a,
        None => {
            let roi = Rect::full(lf.width(), lf.height()).inset(lf.width().min(lf.height()) / 4);
            autofocus(lf, &traj, roi, AlphaRange::new(0.0, 4.0, 0.25))?.value()
        }
    };
    data::save_burst(&extract_burst(lf, &traj, alpha)?, &args.out)?;
    eprintln!("alpha {alpha:.4}, {} frames", traj.len());
    Ok(())
}

/// Last `val_fraction` of the scenes (at least one) become validation.
fn split_dataset(args: &TrainArgs) -> Result<(Vec<Scene>, Vec<Scene>)> {
    if !(0.0..1.0).contains(&args.val_fraction) {
        bail!("--val-fraction must be in [0, 1)");
    }
    let mut scenes = data::load_dataset(&args.data, args.grid)?;
    if scenes.len() < 2 {
        bail!("need at least two scenes (one for validation), found {}", scenes.len());
    }
    let n_val = ((scenes.len() as f64 * args.val_fraction).round() as usize).clamp(1, scenes.len() - 1);
    let val = scenes.split_off(scenes.len() - n_val);
    Ok((scenes, val))
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = read_json(args.config.as_deref())?;
    cfg.seed = args.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn report_run(best_step: usize, curve_len: usize, out: &Path) {
    eprintln!(
        "{curve_len} steps, best validation at step {best_step}; checkpoint {}",
        out.display()
    );
}

fn cmd_train_bpn(args: TrainBpn) -> Result<()> {
    let cfg = train_config(&args.train)?;
    let (train, val) = split_dataset(&args.train)?;
    let model = Bpn::new(
        BpnConfig {
            levels: args.levels,
            base: args.base,
            burst_len: cfg.burst_len,
        },
        args.train.seed,
    )?;
    ensure_parent(&args.train.out)?;
    let run = train_bpn(model, &train, &val, &cfg, Some(&args.train.out))?;
    run.model.save(&args.train.out)?;
    report_run(run.best_step, run.curve.len(), &args.train.out);
    Ok(())
}

fn cmd_train_mmn(args: TrainMmn) -> Result<()> {
    let cfg = train_config(&args.train)?;
    let bpn = Bpn::load(&args.bpn).with_context(|| format!("loading BPN {}", args.bpn.display()))?;
    let (train, val) = split_dataset(&args.train)?;
    let mmn = Mmn::new(MmnConfig { hidden: args.hidden }, args.train.seed)?;
    ensure_parent(&args.train.out)?;
    let run = train_mmn(&bpn, mmn, &train, &val, &cfg, Some(&args.train.out))?;
    run.model.save(&args.train.out)?;
    report_run(run.best_step, run.curve.len(), &args.train.out);
    Ok(())
}

fn load_pipeline(bpn: &Path, mmn: &Path) -> Result<Pipeline> {
    Ok(Pipeline::new(
        Bpn::load(bpn).with_context(|| format!("loading BPN {}", bpn.display()))?,
        Mmn::load(mmn).with_context(|| format!("loading MMN {}", mmn.display()))?,
    ))
}

fn infer(args: Infer) -> Result<()> {
    let pipeline = load_pipeline(&args.bpn, &args.mmn)?;
    let burst = data::load_burst(&args.burst)?;
    let rendering = pipeline.render(&burst)?;
    ensure_parent(&args.out)?;
    write_png(&rendering.output, &args.out, BitDepth::Sixteen)?;
    if let Some(path) = &args.weights_out {
        let w = &rendering.weights;
        let (h, wd) = (w.shape()[2], w.shape()[3]);
        let img = burstdof_core::Image::from_vec(wd, h, 3, w.data().to_vec())?;
        ensure_parent(path)?;
        write_png(&img, path, BitDepth::Eight)?;
    }
    Ok(())
}

fn eval(args: Eval) -> Result<()> {
    let pipeline = load_pipeline(&args.bpn, &args.mmn)?;
    let scenes = data::load_dataset(&args.data, args.grid)?;
    let cfg = EvalConfig {
        alpha: args.alpha.map_or(AlphaMode::Autofocus, AlphaMode::Fixed),
        blur_k: args.blur_k,
        seed: args.seed,
        burst_len: pipeline.bpn.config().burst_len,
        ..EvalConfig::default()
    };
    let report = evaluate(&pipeline, &scenes, &cfg)?;
    ensure_parent(&args.out)?;
    fs::write(&args.out, serde_json::to_string_pretty(&report)?)?;
    eprintln!(
        "mean SSIM: model {:.4}, center view {:.4}, depth blur {:.4} ({} scenes, {:.1} s)",
        report.mean.model,
        report.mean.center_view,
        report.mean.depth_blur,
        report.scenes.len(),
        report.runtime_seconds
    );
    Ok(())
}

fn grad_check(args: GradCheck) -> Result<bool> {
    let mut all = true;
    println!("{:<16} {:>12}  result", "op", "max rel err");
    for op in op_suite() {
        let mut worst: f64 = 0.0;
        for seed in args.seed..args.seed + args.seeds {
            worst = worst.max((op.check)(seed)?);
        }
        let ok = worst < args.tolerance;
        all &= ok;
        println!("{:<16} {worst:>12.3e}  {}", op.name, if ok { "pass" } else { "FAIL" });
    }
    Ok(all)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData(a) => gen_data(a)?,
        Command::MakeGt(a) => make_gt(a)?,
        Command::SimulateBurst(a) => simulate_burst(a)?,
        Command::TrainBpn(a) => cmd_train_bpn(a)?,
        Command::TrainMmn(a) => cmd_train_mmn(a)?,
        Command::Infer(a) => infer(a)?,
        Command::Eval(a) => eval(a)?,
        Command::GradCheck(a) => return grad_check(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
