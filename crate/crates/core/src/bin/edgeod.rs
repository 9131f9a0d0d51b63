//! Command-line front door: simulate fixed strategies, train and evaluate the
//! coordinator, compare strategies side by side, and validate the latency
//! predictor. Every command is deterministic under a fixed seed and stamps its
//! outputs with a config hash.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use edgeod::collect::{EpisodeMetrics, ProcessingRecord, ServiceModel};
use edgeod::device::{load_device_spec, oneplus8t, serialize_device_spec, DeviceSpec};
use edgeod::keyframe::{static_select, SelectorConfig};
use edgeod::latency::validate as validate_predictor;
use edgeod::marl::{
    checkpoint_from_text, checkpoint_to_text, curve_to_csv, train as train_marl, Coordinator,
    Hyper, MarlController, MarlError, Mode,
};
use edgeod::prune::PruningLut;
use edgeod::scenario::{
    run_episode, ssd_like_workload, yolo_like_workload, FixedController, GovernorController,
    KeyframeRule, PenaltyMode, Scenario, Workload,
};
use edgeod::trace::{generate_trace, trace_from_csv, trace_to_csv, FrameTrace, TraceGenParams};

#[derive(Parser)]
#[command(
    name = "edgeod",
    about = "Edge object-detection deployment simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run eval episodes with a fixed strategy and write metric CSVs.
    Simulate(SimulateArgs),
    /// Train the coordinator and write a checkpoint plus the training curve.
    Train(TrainArgs),
    /// Run several strategies on the same scenario and write one report row
    /// per strategy.
    Compare(CompareArgs),
    /// Sweep the latency predictor against the noisy ground-truth model.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Penalty {
    Soft,
    Hard,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Device spec: a builtin name (oneplus8t) or a TOML file path.
    #[arg(long, default_value = "oneplus8t")]
    device: String,
    /// Pruning LUT: a builtin name (yolo_like, ssd_like) or a CSV file path.
    #[arg(long, default_value = "yolo_like")]
    lut: String,
    /// Largest layer footprint in bytes; required context for file LUTs,
    /// ignored for builtins.
    #[arg(long, default_value_t = 800_000)]
    max_layer_bytes: u64,
    /// Frame trace CSV; omit to generate a synthetic trace.
    #[arg(long, conflicts_with = "gen")]
    trace: Option<PathBuf>,
    /// Generate a synthetic trace with this many frames (default when no
    /// --trace is given: 1200).
    #[arg(long)]
    gen: Option<usize>,
    #[arg(long, default_value_t = 33.0)]
    rt_tar_ms: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_enum, default_value_t = Penalty::Soft)]
    penalty: Penalty,
    /// Ground-truth service-time noise bound, as a fraction.
    #[arg(long, default_value_t = 0.03)]
    noise: f64,
    /// Master seed: trace generation and episode noise derive from it.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// origin | static | static_<threshold> | marl
    #[arg(long, default_value = "origin")]
    strategy: String,
    /// Coordinator checkpoint, required for the marl strategy.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Number of eval episodes; episode i uses seed + i.
    #[arg(long, default_value_t = 1)]
    runs: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    /// Continue from an existing checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 0.05)]
    eps_end: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// At least two strategy names (origin | static[_t] | marl).
    #[arg(long, required = true, num_args = 2..)]
    strategy: Vec<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Runtime(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) | CliError::Diverged(m) => m,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn runtime_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Debug, Clone, PartialEq)]
enum Strategy {
    Origin,
    Static(f64),
    Marl,
}

impl Strategy {
    fn parse(name: &str) -> Result<Self, CliError> {
        if name == "origin" {
            return Ok(Strategy::Origin);
        }
        if name == "static" {
            return Ok(Strategy::Static(0.7));
        }
        if let Some(t) = name.strip_prefix("static_") {
            let threshold: f64 = t
                .parse()
                .map_err(|_| config_err(format!("bad static threshold in strategy '{name}'")))?;
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(config_err(format!(
                    "static threshold {threshold} outside (0, 1]"
                )));
            }
            return Ok(Strategy::Static(threshold));
        }
        if name == "marl" {
            return Ok(Strategy::Marl);
        }
        Err(config_err(format!(
            "unknown strategy '{name}' (expected origin, static, static_<t>, or marl)"
        )))
    }

    fn label(&self) -> String {
        match self {
            Strategy::Origin => "origin".into(),
            Strategy::Static(t) => format!("static_{t}"),
            Strategy::Marl => "marl".into(),
        }
    }
}

/// Everything a command resolved from disk and flags, hashed for the output
/// header.
struct Resolved {
    scenario: Scenario,
    noise: f64,
    seed: u64,
    out: PathBuf,
    config_hash: String,
}

fn load_device(name: &str) -> Result<DeviceSpec, CliError> {
    if name == "oneplus8t" {
        return Ok(oneplus8t());
    }
    let text = fs::read_to_string(name)
        .map_err(|e| config_err(format!("cannot read device spec '{name}': {e}")))?;
    load_device_spec(&text).map_err(|e| config_err(format!("device spec '{name}': {e}")))
}

fn load_workload(name: &str, max_layer_bytes: u64) -> Result<Workload, CliError> {
    match name {
        "yolo_like" => Ok(yolo_like_workload()),
        "ssd_like" => Ok(ssd_like_workload()),
        path => {
            let text = fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read LUT '{path}': {e}")))?;
            let lut =
                PruningLut::from_csv(&text).map_err(|e| config_err(format!("LUT '{path}': {e}")))?;
            let stem = Path::new(path)
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("custom")
                .to_string();
            Ok(Workload {
                name: stem,
                lut,
                max_layer_bytes,
                descriptor: [0.5, 0.5, 0.5],
            })
        }
    }
}

fn load_trace(common: &CommonArgs) -> Result<FrameTrace, CliError> {
    if let Some(path) = &common.trace {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read trace '{}': {e}", path.display())))?;
        return trace_from_csv(&text)
            .map_err(|e| config_err(format!("trace '{}': {e}", path.display())));
    }
    let frames = common.gen.unwrap_or(1200);
    if frames == 0 {
        return Err(config_err("--gen needs at least 1 frame"));
    }
    let params = TraceGenParams {
        seed: common.seed,
        ..TraceGenParams::default()
    };
    generate_trace(&params, 30.0, frames as f64 * 1000.0 / 30.0)
        .map_err(|e| config_err(format!("trace generation: {e}")))
}

fn resolve(common: &CommonArgs, extra_hash_input: &str) -> Result<Resolved, CliError> {
    if common.rt_tar_ms <= 0.0 {
        return Err(config_err("--rt-tar-ms must be > 0"));
    }
    if !(0.0..1.0).contains(&common.noise) {
        return Err(config_err("--noise must be in [0, 1)"));
    }
    let device = load_device(&common.device)?;
    let workload = load_workload(&common.lut, common.max_layer_bytes)?;
    let trace = load_trace(common)?;
    let penalty = match common.penalty {
        Penalty::Soft => PenaltyMode::Soft,
        Penalty::Hard => PenaltyMode::Hard,
    };
    let mut canonical = String::new();
    let _ = writeln!(canonical, "device:\n{}", serialize_device_spec(&device));
    let _ = writeln!(canonical, "lut {}:\n{}", workload.name, workload.lut.to_csv());
    let _ = writeln!(canonical, "max_layer_bytes {}", workload.max_layer_bytes);
    let _ = writeln!(canonical, "trace:\n{}", trace_to_csv(&trace));
    let _ = writeln!(
        canonical,
        "rt_tar {} alpha {} penalty {:?} noise {} seed {}",
        common.rt_tar_ms, common.alpha, common.penalty, common.noise, common.seed
    );
    let _ = writeln!(canonical, "{extra_hash_input}");
    let config_hash = hex_digest(&canonical);
    let scenario = Scenario::build(
        device,
        workload,
        trace,
        SelectorConfig::default(),
        common.rt_tar_ms,
        common.alpha,
        penalty,
        5.0,
    )
    .map_err(|e| config_err(format!("scenario: {e}")))?;
    Ok(Resolved {
        scenario,
        noise: common.noise,
        seed: common.seed,
        out: common.out.clone(),
        config_hash,
    })
}

fn hex_digest(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_output(dir: &Path, name: &str, hash: &str, body: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| runtime_err(format!("cannot create '{}': {e}", dir.display())))?;
    let path = dir.join(name);
    let content = format!("# config_hash={hash}\n{body}");
    fs::write(&path, content)
        .map_err(|e| runtime_err(format!("cannot write '{}': {e}", path.display())))?;
    Ok(path)
}

fn load_checkpoint_into(
    coord: &mut Coordinator,
    path: Option<&PathBuf>,
) -> Result<(), CliError> {
    let path = path.ok_or_else(|| config_err("the marl strategy needs --checkpoint"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read checkpoint '{}': {e}", path.display())))?;
    checkpoint_from_text(coord, &text)
        .map_err(|e| config_err(format!("checkpoint '{}': {e}", path.display())))
}

fn run_strategy(
    scenario: &Scenario,
    strategy: &Strategy,
    checkpoint: Option<&PathBuf>,
    noise: f64,
    seed: u64,
) -> Result<(EpisodeMetrics, Vec<ProcessingRecord>), CliError> {
    match strategy {
        Strategy::Origin => {
            let mut ctl = FixedController(scenario.clamp_action(scenario.origin_action()));
            run_episode(scenario, &KeyframeRule::All, &mut ctl, noise, seed).map_err(runtime_err)
        }
        Strategy::Static(threshold) => {
            let set = static_select(&scenario.trace, *threshold);
            let mut ctl = GovernorController::new(scenario);
            run_episode(scenario, &KeyframeRule::FixedSet(set), &mut ctl, noise, seed)
                .map_err(runtime_err)
        }
        Strategy::Marl => {
            let mut coord = Coordinator::new(scenario, Hyper::default(), 0);
            load_checkpoint_into(&mut coord, checkpoint)?;
            let mut ctl = MarlController::new(&mut coord, Mode::Eval);
            let result = run_episode(scenario, &KeyframeRule::Scheduled, &mut ctl, noise, seed)
                .map_err(runtime_err)?;
            if let Some(e) = ctl.error {
                return Err(runtime_err(e));
            }
            Ok(result)
        }
    }
}

const METRIC_COLUMNS: &str = "l_per_frame_ms,kf_count,wt_ms,wp_fraction,p_per_video_w,map_points";

fn metric_fields(m: &EpisodeMetrics) -> String {
    format!(
        "{},{},{},{},{},{}",
        m.l_per_frame_ms, m.kf_count, m.wt_ms, m.wp_fraction, m.p_per_video_w, m.map_points
    )
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let strategy = Strategy::parse(&args.strategy)?;
    if strategy == Strategy::Marl && args.checkpoint.is_none() {
        return Err(config_err("the marl strategy needs --checkpoint"));
    }
    let extra = format!("simulate strategy={} runs={}", strategy.label(), args.runs);
    let r = resolve(&args.common, &extra)?;
    let mut metrics_body = format!("strategy,seed,{METRIC_COLUMNS}\n");
    let mut frames_body = String::from(
        "seed,frame_index,arrival_ms,service_start_ms,service_ms,power_w,cpu_level,gpu_level,prune_ratio,keyframe_offset\n",
    );
    for run in 0..args.runs.max(1) {
        let episode_seed = r.seed + run;
        let (m, records) = run_strategy(
            &r.scenario,
            &strategy,
            args.checkpoint.as_ref(),
            r.noise,
            episode_seed,
        )?;
        let _ = writeln!(
            metrics_body,
            "{},{},{}",
            strategy.label(),
            episode_seed,
            metric_fields(&m)
        );
        for rec in &records {
            let a = rec.action.expect("keyframe records carry actions");
            let _ = writeln!(
                frames_body,
                "{},{},{},{},{},{},{},{},{},{}",
                episode_seed,
                rec.frame_index,
                rec.arrival_ms,
                rec.service_start_ms,
                rec.service_ms,
                rec.power_w,
                a.cpu_level,
                a.gpu_level,
                a.prune_ratio,
                a.keyframe_offset
            );
        }
    }
    let metrics = write_output(&r.out, "metrics.csv", &r.config_hash, &metrics_body)?;
    let frames = write_output(&r.out, "frames.csv", &r.config_hash, &frames_body)?;
    println!("wrote {}", metrics.display());
    println!("wrote {}", frames.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    if args.batch_size == 0 || args.hidden == 0 {
        return Err(config_err("--batch-size and --hidden must be > 0"));
    }
    if !(args.lr > 0.0) || !(args.lr_decay > 0.0 && args.lr_decay <= 1.0) {
        return Err(config_err("--lr must be > 0 and --lr-decay in (0, 1]"));
    }
    let extra = format!(
        "train steps={} lr={} lr_decay={} batch={} hidden={} eps_end={}",
        args.steps, args.lr, args.lr_decay, args.batch_size, args.hidden, args.eps_end
    );
    let r = resolve(&args.common, &extra)?;
    let hyper = Hyper {
        lr: args.lr,
        lr_decay: args.lr_decay,
        batch_size: args.batch_size,
        hidden: args.hidden,
        eps_end: args.eps_end,
        ..Hyper::default()
    };
    let mut coord = Coordinator::new(&r.scenario, hyper, r.seed);
    if let Some(resume) = &args.resume {
        load_checkpoint_into(&mut coord, Some(resume))?;
    }
    match train_marl(&mut coord, &r.scenario, args.steps, r.noise, r.seed) {
        Ok(curve) => {
            let text = checkpoint_to_text(&coord);
            let ckpt = write_output(&r.out, "checkpoint.txt", &r.config_hash, &text)?;
            let curve_path =
                write_output(&r.out, "curve.csv", &r.config_hash, &curve_to_csv(&curve))?;
            println!("wrote {}", ckpt.display());
            println!("wrote {}", curve_path.display());
            Ok(())
        }
        Err(MarlError::Diverged(call)) => {
            // best effort: persist whatever is still finite
            let text = checkpoint_to_text(&coord);
            let _ = write_output(&r.out, "checkpoint.txt", &r.config_hash, &text);
            Err(CliError::Diverged(format!(
                "training diverged at train call {call}; last checkpoint written"
            )))
        }
        Err(e) => Err(runtime_err(e)),
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let strategies: Vec<Strategy> = args
        .strategy
        .iter()
        .map(|s| Strategy::parse(s))
        .collect::<Result<_, _>>()?;
    if strategies.len() < 2 {
        return Err(config_err("compare needs at least two strategies"));
    }
    if strategies.contains(&Strategy::Marl) && args.checkpoint.is_none() {
        return Err(config_err("the marl strategy needs --checkpoint"));
    }
    let labels: Vec<String> = strategies.iter().map(|s| s.label()).collect();
    let extra = format!("compare strategies={}", labels.join("+"));
    let r = resolve(&args.common, &extra)?;
    let mut body = format!("strategy,{METRIC_COLUMNS},power_reduction_pct\n");
    let mut baseline_power: Option<f64> = None;
    for strategy in &strategies {
        let (m, _) = run_strategy(
            &r.scenario,
            strategy,
            args.checkpoint.as_ref(),
            r.noise,
            r.seed,
        )?;
        let base = *baseline_power.get_or_insert(m.p_per_video_w);
        let reduction = if base > 0.0 {
            (base - m.p_per_video_w) / base * 100.0
        } else {
            0.0
        };
        let _ = writeln!(
            body,
            "{},{},{}",
            strategy.label(),
            metric_fields(&m),
            reduction
        );
    }
    let path = write_output(&r.out, "compare.csv", &r.config_hash, &body)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<(), CliError> {
    let r = resolve(&args.common, "validate")?;
    let scn = &r.scenario;
    let base = scn
        .workload
        .lut
        .latency_at(scn.workload.lut.min_ratio())
        .map_err(runtime_err)?;
    let mut truth_model = ServiceModel::new(r.noise, r.seed);
    let gpu_khz: Vec<u64> = scn.device.gpu_levels.iter().map(|l| l.khz).collect();
    let report = validate_predictor(
        base,
        scn.cluster(),
        &gpu_khz,
        &scn.predictor,
        |cpu, gpu| {
            truth_model
                .service_ms(&scn.workload.lut, scn.workload.lut.min_ratio(), cpu, gpu, &scn.predictor)
                .expect("sweep stays inside the table domain")
        },
    )
    .map_err(runtime_err)?;
    let mut body = report.to_csv();
    let _ = writeln!(
        body,
        "# cpu_mean_rel_error={} cpu_max_rel_error={} gpu_mean_rel_error={} gpu_max_rel_error={}",
        report.cpu_mean_rel_error,
        report.cpu_max_rel_error,
        report.gpu_mean_rel_error,
        report.gpu_max_rel_error
    );
    let path = write_output(&r.out, "validation.csv", &r.config_hash, &body)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Simulate(args) => cmd_simulate(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Compare(args) => cmd_compare(args),
        Cmd::Validate(args) => cmd_validate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
