use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use viccount::gradcheck::{max_relative_error, random_blocks};
use viccount::io::{parse_stream, write_stream, write_stream_to};
use viccount::loss::{pair_loss, LossConfig};
use viccount::mcp::{count_video, FrameCount, McpConfig, TemplateAggregator};
use viccount::metrics::{evaluate, VideoResult};
use viccount::pseudo::pseudo_trajectories;
use viccount::sim::{generate_scene, gt_unique_count, EntryExitModel, SimConfig};

#[derive(Parser)]
#[command(
    name = "viccount",
    version,
    about = "Video individual counting from weakly labelled detection streams"
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream with ground-truth identities.
    Simulate(SimulateArgs),
    /// Count unique individuals in a stream.
    Count(CountArgs),
    /// Score count reports against ground truth.
    Eval(EvalArgs),
    /// Group-level matching loss over every adjacent pair of a stream.
    Loss(LossCommandArgs),
    /// Compare the analytic loss gradient with finite differences.
    Gradcheck(GradcheckArgs),
    /// Export pseudo-trajectory matchings.
    Pseudo(PseudoArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    identities: usize,
    #[arg(long, default_value_t = 30)]
    frames: usize,
    /// Seconds between sampled frames.
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Per-coordinate Gaussian feature noise before renormalization.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, value_enum, default_value_t = EntryExit::Uniform)]
    entry_exit: EntryExit,
    #[arg(long, default_value_t = 0.0)]
    reentry_prob: f64,
    #[arg(long, default_value_t = 1)]
    reentry_gap_min: usize,
    #[arg(long, default_value_t = 3)]
    reentry_gap_max: usize,
    /// Reject base features whose pairwise |cosine| reaches this value.
    #[arg(long)]
    max_base_sim: Option<f64>,
    #[arg(long, default_value_t = 1920.0)]
    width: f64,
    #[arg(long, default_value_t = 1080.0)]
    height: f64,
    #[arg(long, default_value_t = 10.0)]
    walk_sigma: f64,
    /// Output stream file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum EntryExit {
    Persistent,
    Uniform,
}

#[derive(Args)]
struct McpArgs {
    #[arg(long, default_value_t = 0.7)]
    zeta: f64,
    #[arg(long, default_value_t = 3)]
    ttlmax: u32,
    #[arg(long, default_value_t = 5)]
    memmax: usize,
    #[arg(long, value_enum, default_value_t = Aggregator::Max)]
    aggregator: Aggregator,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Aggregator {
    Max,
    Min,
    Mean,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    mcp: McpArgs,
    /// Identifier stored in the report; defaults to the input file stem.
    #[arg(long)]
    video_id: Option<String>,
    /// Report file; standard output when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Count reports, one per video.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// JSON object mapping video id to ground-truth count. Overrides counts
    /// stored in the reports.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LossArgs {
    /// Multiplier on similarities inside the exponent.
    #[arg(long, default_value_t = 10.0)]
    gamma_scale: f64,
    /// Hinge threshold on unmatched similarities.
    #[arg(long, default_value_t = 0.3)]
    theta: f64,
    /// Entropic regularization of the transport plan.
    #[arg(long, default_value_t = 0.05)]
    reg: f64,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

impl LossArgs {
    fn config(&self) -> LossConfig {
        LossConfig {
            temperature_scale: self.gamma_scale,
            hinge_threshold: self.theta,
            sinkhorn_reg: self.reg,
            sinkhorn_max_iters: self.iters,
            sinkhorn_tol: self.tol,
        }
    }
}

#[derive(Args)]
struct LossCommandArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    loss: LossArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Check the adjacent pairs of this stream instead of random blocks.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Number of random blocks.
    #[arg(long, default_value_t = 50)]
    cases: usize,
    #[arg(long, default_value_t = 6)]
    max_rows: usize,
    #[arg(long, default_value_t = 8)]
    max_cols: usize,
    #[arg(long, default_value_t = 5)]
    max_shared: usize,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Exit with a numerical failure above this relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[command(flatten)]
    loss: LossArgs,
}

#[derive(Args)]
struct PseudoArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[command(flatten)]
    loss: LossArgs,
    /// Emit chained trajectories instead of pairwise matchings.
    #[arg(long)]
    trajectories: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct VideoReport {
    video_id: String,
    /// Number of sampled frames.
    length: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_count: Option<u64>,
    total: usize,
    per_step: Vec<FrameCount>,
}

#[derive(Serialize)]
struct PairLine {
    frame_i: usize,
    frame_j: usize,
    shared: usize,
    contrastive: f64,
    hinge: f64,
    total: f64,
    converged: bool,
    iterations: usize,
}

enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<viccount::Error> for Failure {
    fn from(e: viccount::Error) -> Self {
        match e {
            viccount::Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            e if e.is_numerical() => Failure::Numerical(e.to_string()),
            e => Failure::Data(e.to_string()),
        }
    }
}

fn io_failure(path: &Path, e: io::Error) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Data(format!("stdout: {e}"))),
    }
}

fn json_line<T: Serialize>(buf: &mut String, value: &T) {
    buf.push_str(&serde_json::to_string(value).expect("plain data serializes"));
    buf.push('\n');
}

fn simulate(seed: u64, args: SimulateArgs) -> Result<(), Failure> {
    let cfg = SimConfig {
        num_identities: args.identities,
        num_frames: args.frames,
        delta: args.delta,
        feature_dim: args.dim,
        feature_noise_sigma: args.noise,
        entry_exit_model: match args.entry_exit {
            EntryExit::Persistent => EntryExitModel::Persistent,
            EntryExit::Uniform => EntryExitModel::Uniform,
        },
        reentry_probability: args.reentry_prob,
        reentry_gap: (args.reentry_gap_min, args.reentry_gap_max),
        max_base_similarity: args.max_base_sim,
        scene_size: (args.width, args.height),
        walk_step_sigma: args.walk_sigma,
        seed,
    };
    let stream = generate_scene(&cfg)?;
    match args.out {
        Some(path) => write_stream(&stream, &path)?,
        None => write_stream_to(&stream, io::stdout().lock())
            .map_err(|e| Failure::Data(format!("stdout: {e}")))?,
    }
    Ok(())
}

fn count(args: CountArgs) -> Result<(), Failure> {
    let stream = parse_stream(&args.input)?;
    let cfg = McpConfig {
        zeta: args.mcp.zeta,
        ttlmax: args.mcp.ttlmax,
        memmax: args.mcp.memmax,
        aggregator: match args.mcp.aggregator {
            Aggregator::Max => TemplateAggregator::Max,
            Aggregator::Min => TemplateAggregator::Min,
            Aggregator::Mean => TemplateAggregator::Mean,
        },
    };
    let counted = count_video(&stream, &cfg)?;
    let video_id = args.video_id.unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let report = VideoReport {
        video_id,
        length: stream.len() as u64,
        gt_count: gt_unique_count(&stream).ok().map(|n| n as u64),
        total: counted.total,
        per_step: counted.per_step,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("plain data serializes");
    text.push('\n');
    emit(args.report.as_deref(), &text)
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let overrides: BTreeMap<String, u64> = match &args.gt {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?
        }
        None => BTreeMap::new(),
    };
    let mut results = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
        let report: VideoReport = serde_json::from_str(&text)
            .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let gt_count = overrides
            .get(&report.video_id)
            .copied()
            .or(report.gt_count)
            .ok_or_else(|| {
                Failure::Data(format!(
                    "no ground-truth count for video {:?}",
                    report.video_id
                ))
            })?;
        results.push(VideoResult {
            video_id: report.video_id,
            length: report.length,
            gt_count,
            pred_count: report.total as f64,
        });
    }
    let summary = evaluate(&results)?;

    let width = results
        .iter()
        .map(|r| r.video_id.len())
        .max()
        .unwrap_or(0)
        .max(5);
    let mut text = format!(
        "{:<width$}  {:>8}  {:>8}  {:>8}\n",
        "video", "length", "gt", "pred"
    );
    for r in &results {
        text.push_str(&format!(
            "{:<width$}  {:>8}  {:>8}  {:>8}\n",
            r.video_id, r.length, r.gt_count, r.pred_count
        ));
    }
    text.push_str(&format!(
        "\nMAE   {:.4}\nMSE   {:.4}\nWRAE  {:.4}%\n",
        summary.mae, summary.mse, summary.wrae
    ));
    emit(args.out.as_deref(), &text)
}

fn loss(args: LossCommandArgs) -> Result<(), Failure> {
    let cfg = args.loss.config();
    cfg.validate()?;
    let stream = parse_stream(&args.input)?;
    let blocks = stream.adjacent_blocks()?;
    let mut text = String::new();
    let mut gml = 0.0;
    for (pair, b) in stream.frames().windows(2).zip(&blocks) {
        let l = pair_loss(b, &cfg)?;
        if !l.contrastive.plan.converged {
            eprintln!(
                "warning: sinkhorn did not converge for frames {} and {}",
                pair[0].frame_index(),
                pair[1].frame_index()
            );
        }
        gml += l.total();
        json_line(
            &mut text,
            &PairLine {
                frame_i: pair[0].frame_index(),
                frame_j: pair[1].frame_index(),
                shared: b.shared(),
                contrastive: l.contrastive.normalized,
                hinge: l.hinge,
                total: l.total(),
                converged: l.contrastive.plan.converged,
                iterations: l.contrastive.plan.iterations_used,
            },
        );
    }
    json_line(
        &mut text,
        &serde_json::json!({ "pairs": blocks.len(), "gml": gml }),
    );
    emit(args.out.as_deref(), &text)
}

fn gradcheck(seed: u64, args: GradcheckArgs) -> Result<(), Failure> {
    let cfg = args.loss.config();
    cfg.validate()?;
    if !(args.step > 0.0 && args.step.is_finite()) {
        return Err(Failure::Usage(
            "finite-difference step must be positive".into(),
        ));
    }
    let blocks = match &args.input {
        Some(path) => parse_stream(path)?.adjacent_blocks()?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..args.cases)
                .map(|_| random_blocks(&mut rng, args.max_rows, args.max_cols, args.max_shared))
                .collect::<viccount::Result<Vec<_>>>()?
        }
    };
    let mut worst: f64 = 0.0;
    for b in &blocks {
        worst = worst.max(max_relative_error(b, &cfg, args.step)?);
    }
    println!("cases {}\nmax_relative_error {worst:e}", blocks.len());
    if worst.is_nan() || worst >= args.tolerance {
        return Err(Failure::Numerical(format!(
            "gradient check failed: relative error {worst:e} exceeds {:e}",
            args.tolerance
        )));
    }
    Ok(())
}

fn pseudo(args: PseudoArgs) -> Result<(), Failure> {
    let labels = pseudo_trajectories(&parse_stream(&args.input)?, &args.loss.config())?;
    let mut text = String::new();
    if args.trajectories {
        labels
            .trajectories
            .iter()
            .for_each(|t| json_line(&mut text, t));
    } else {
        labels.pairs.iter().for_each(|p| json_line(&mut text, p));
    }
    emit(args.out.as_deref(), &text)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.to_string();
            let summary: Vec<&str> = rendered
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect();
            eprintln!("{}", summary.join(" "));
            return ExitCode::from(1);
        }
    };
    let outcome = match cli.command {
        Command::Simulate(args) => simulate(cli.seed, args),
        Command::Count(args) => count(args),
        Command::Eval(args) => eval(args),
        Command::Loss(args) => loss(args),
        Command::Gradcheck(args) => gradcheck(cli.seed, args),
        Command::Pseudo(args) => pseudo(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (code, message) = match failure {
                Failure::Usage(m) => (1, m),
                Failure::Data(m) => (2, m),
                Failure::Numerical(m) => (3, m),
            };
            eprintln!("error: {}", message.replace('\n', " "));
            ExitCode::from(code)
        }
    }
}
