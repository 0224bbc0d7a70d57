//! Command-line driver: config handling and the five experiments.

pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use star_core::attention::{
    attention_forward_lean, bitwidth_sweep, error_metrics, reference_attention, AttentionConfig,
    ErrorReport, Matrix,
};
use star_core::costmodel::{
    cost_report, softmax_schedule, CostParams, StageLatencyModel, SOFTMAX_STAGES,
};
use star_core::engine::SoftmaxEngine;
use star_core::fxp::FxFormat;

use config::{read_json, validate_attention, validate_input_format, ConfigError, RunConfig};
use output::{read_vectors, write_csv, write_json, Meta};

/// Environment variable capping the worker count (0 = one per core).
pub const THREADS_ENV: &str = "STAR_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "star",
    version,
    about = "Bit-exact RRAM-crossbar softmax engine simulator",
    after_help = "Without --config the shipped defaults apply: s9.3 input, u17.16 LUT, \
16 divider fraction bits, ideal ADC, max_seq_len 512, BERT-base attention at seq 128, \
gaussian{mean 0, std 2} corpus of 64 x 128, seed 0, shipped calibrated cost parameters.\n\
STAR_THREADS caps worker threads (0 = auto). Results do not depend on it."
)]
pub struct Cli {
    /// Run configuration (JSON). Missing keys take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for relative output paths.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Suppresses the summary line.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Runs the engine on logit vectors and writes probabilities.
    Softmax {
        /// Headerless CSV, one logit vector per line. Default: the config corpus.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also writes per-vector engine traces (JSON).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Random-input attention layer against a float64 reference.
    Attention {
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Error metrics of several input formats on one corpus.
    Sweep {
        /// Signed formats as total:frac pairs.
        #[arg(long, value_delimiter = ',', default_value = "7:2,8:2,9:3")]
        formats: Vec<String>,
        /// Headerless logit CSV. Default: the config corpus.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Area, power, latency and efficiency report.
    Cost {
        #[arg(long)]
        params: Option<PathBuf>,
        /// AttentionConfig JSON replacing the configured one.
        #[arg(long)]
        attention: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vector-grained pipeline schedule of the softmax engine.
    Pipeline {
        #[arg(long, default_value_t = 8)]
        vectors: usize,
        /// Vector length. Default: attention.seq_len.
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Runs vectors one after another instead of pipelined.
        #[arg(long)]
        sequential: bool,
    },
}

/// Failure classified by exit code.
#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Experiment(anyhow::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(e) => e.exit_code(),
            Self::Experiment(_) => 1,
        }
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Config(e) => write!(f, "{e}"),
            Self::Experiment(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<anyhow::Error> for RunError {
    fn from(e: anyhow::Error) -> Self {
        Self::Experiment(e)
    }
}

impl From<star_core::Error> for RunError {
    fn from(e: star_core::Error) -> Self {
        Self::Experiment(e.into())
    }
}

/// Parses `STAR_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>, ConfigError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v.trim().parse::<usize>().map(Some).map_err(|_| {
            ConfigError::validation(THREADS_ENV, format!("{v:?} is not a non-negative integer"))
        }),
    }
}

/// Parses `total:frac` into a signed input format.
pub fn parse_format(s: &str) -> Result<FxFormat, ConfigError> {
    let bad = || ConfigError::validation("--formats", format!("{s:?} is not total:frac"));
    let (t, f) = s.trim().split_once(':').ok_or_else(bad)?;
    let fmt = FxFormat {
        total_bits: t.parse().map_err(|_| bad())?,
        frac_bits: f.parse().map_err(|_| bad())?,
        signed: true,
    };
    validate_input_format(&format!("--formats[{s}]"), &fmt)?;
    Ok(fmt)
}

/// Applies flags and the config file; validates everything before any run.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(p) => config::load_config(p)?,
        None => RunConfig::defaults(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out_dir: PathBuf,
}

impl Ctx<'_> {
    fn out_path(&self, flag: &Option<PathBuf>, configured: &Path) -> PathBuf {
        let p = flag.as_deref().unwrap_or(configured);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    /// Provenance for an experiment: the config minus output paths, the
    /// cost parameters in effect and command-specific inputs.
    fn meta(&self, command: &str, params: Option<&CostParams>, extra: serde_json::Value) -> Meta {
        let c = self.cfg;
        Meta::new(
            &json!({
                "command": command,
                "engine": c.engine,
                "attention": c.attention,
                "corpus": c.corpus,
                "seed": c.seed,
                "cost_params": params,
                "inputs": extra,
            }),
            c.seed,
        )
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn load_params(cfg: &RunConfig, flag: &Option<PathBuf>) -> Result<CostParams, ConfigError> {
    match flag {
        Some(p) => {
            let params: CostParams = read_json(p)?;
            config::validate_params("--params", &params)?;
            Ok(params)
        }
        None => cfg.load_params(),
    }
}

/// Runs one subcommand and returns its summary line.
pub fn run_and_report(cli: &Cli, cfg: &RunConfig) -> Result<String, RunError> {
    let ctx = Ctx {
        cfg,
        out_dir: cli.out_dir.clone().unwrap_or_else(|| PathBuf::from(".")),
    };
    match &cli.command {
        Command::Softmax { input, out, trace } => run_softmax(&ctx, input, out, trace),
        Command::Attention { report } => run_attention(&ctx, report),
        Command::Sweep {
            formats,
            corpus,
            out,
        } => run_sweep(&ctx, formats, corpus, out),
        Command::Cost {
            params,
            attention,
            out,
        } => run_cost(&ctx, params, attention, out),
        Command::Pipeline {
            vectors,
            length,
            params,
            schedule,
            sequential,
        } => run_pipeline(&ctx, *vectors, *length, params, schedule, *sequential),
    }
}

/// Entry point shared by the binary and tests. Returns the exit code.
pub fn main_with(cli: Cli) -> i32 {
    let result = (|| -> Result<String, RunError> {
        if let Some(n) = threads_from_env()? {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| RunError::Experiment(anyhow!("thread pool: {e}")))?;
        }
        let cfg = resolve_config(&cli)?;
        run_and_report(&cli, &cfg)
    })();
    match result {
        Ok(summary) => {
            if !cli.quiet {
                println!("{summary}");
            }
            0
        }
        Err(e) => {
            eprintln!("star: {e}");
            e.exit_code()
        }
    }
}

fn run_softmax(
    ctx: &Ctx,
    input: &Option<PathBuf>,
    out: &Option<PathBuf>,
    trace: &Option<PathBuf>,
) -> Result<String, RunError> {
    let cfg = ctx.cfg;
    let (vectors, source) = match input {
        Some(p) => (read_vectors(p)?, json!({ "input_sha256": file_digest(p)? })),
        None => (cfg.corpus.generate(cfg.seed)?, json!("corpus")),
    };
    if vectors.is_empty() {
        return Err(anyhow!("no input vectors").into());
    }
    let engine = SoftmaxEngine::new(cfg.engine)?;
    let runs = vectors
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            engine
                .softmax(x)
                .with_context(|| format!("vector {}", i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = ctx.meta("softmax", None, source);

    let probs: Vec<Vec<f64>> = runs
        .iter()
        .map(|(p, _)| p.iter().map(|v| v.to_f64()).collect())
        .collect();
    let out_path = ctx.out_path(out, &cfg.outputs.softmax);
    write_csv(&out_path, &meta, None, &probs)?;

    let trace_path = trace
        .as_ref()
        .or(cfg.outputs.trace.as_ref())
        .map(|p| ctx.out_path(&Some(p.clone()), p));
    if let Some(tp) = &trace_path {
        let traces: Vec<_> = runs.iter().map(|(_, t)| t).collect();
        write_json(tp, &meta, &json!({ "traces": traces }))?;
    }

    let worst = probs
        .iter()
        .map(|p| (p.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let sat: usize = runs.iter().map(|(_, t)| t.saturation_events).sum();
    Ok(format!(
        "softmax: {} vectors, format {}, max |row sum - 1| {worst:e}, {sat} saturation events -> {}",
        probs.len(),
        cfg.engine.input_format,
        out_path.display()
    ))
}

#[derive(Serialize)]
struct AttentionReport {
    engine_format: String,
    attention: AttentionConfig,
    probabilities: ErrorReport,
    output_max_abs_error: f64,
    tile_ops: u64,
    saturation_events: usize,
}

fn run_attention(ctx: &Ctx, report: &Option<PathBuf>) -> Result<String, RunError> {
    let cfg = ctx.cfg;
    let a = &cfg.attention;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dist = &cfg.corpus.distribution;
    let q = Matrix::random(a.seq_len, a.d_model, dist, &mut rng)?;
    let k = Matrix::random(a.seq_len, a.d_model, dist, &mut rng)?;
    let v = Matrix::random(a.seq_len, a.d_model, dist, &mut rng)?;
    let got = attention_forward_lean(&q, &k, &v, a, &cfg.engine)?;
    let (want, want_probs) = reference_attention(&q, &k, &v, a)?;

    let flat = |ms: &[Matrix]| -> Vec<Vec<f64>> { ms.iter().flat_map(|m| m.to_rows()).collect() };
    let probabilities = error_metrics(&flat(&got.probabilities), &flat(&want_probs))?;
    let output_max_abs_error = got
        .output
        .to_rows()
        .iter()
        .flatten()
        .zip(want.to_rows().iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let body = AttentionReport {
        engine_format: cfg.engine.input_format.to_string(),
        attention: *a,
        probabilities,
        output_max_abs_error,
        tile_ops: got.tile_ops,
        saturation_events: got.saturation_events,
    };
    let path = ctx.out_path(report, &cfg.outputs.attention);
    write_json(&path, &ctx.meta("attention", None, json!(null)), &body)?;
    Ok(format!(
        "attention: seq {} x d_model {} x {} heads, prob max abs err {:e}, argmax agreement {}, output max abs err {:e} -> {}",
        a.seq_len,
        a.d_model,
        a.n_heads,
        probabilities.max_abs_error,
        probabilities.argmax_agreement,
        output_max_abs_error,
        path.display()
    ))
}

#[derive(Serialize)]
struct SweepCsvRow {
    total_bits: u32,
    frac_bits: u32,
    max_abs_err: f64,
    mean_abs_err: f64,
    mean_kl: f64,
    argmax_agreement: f64,
    saturation_events: usize,
}

const SWEEP_COLUMNS: [&str; 7] = [
    "total_bits",
    "frac_bits",
    "max_abs_err",
    "mean_abs_err",
    "mean_kl",
    "argmax_agreement",
    "saturation_events",
];

fn run_sweep(
    ctx: &Ctx,
    formats: &[String],
    corpus: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<String, RunError> {
    let cfg = ctx.cfg;
    let formats = formats
        .iter()
        .map(|s| parse_format(s))
        .collect::<Result<Vec<_>, _>>()?;
    let (vectors, source) = match corpus {
        Some(p) => (
            read_vectors(p)?,
            json!({ "corpus_sha256": file_digest(p)? }),
        ),
        None => (cfg.corpus.generate(cfg.seed)?, json!("corpus")),
    };
    let sweep = bitwidth_sweep(&vectors, &formats, &cfg.engine)?;
    let rows: Vec<SweepCsvRow> = sweep
        .rows
        .iter()
        .map(|r| SweepCsvRow {
            total_bits: r.format.total_bits,
            frac_bits: r.format.frac_bits,
            max_abs_err: r.report.max_abs_error,
            mean_abs_err: r.report.mean_abs_error,
            mean_kl: r.report.mean_kl_divergence,
            argmax_agreement: r.report.argmax_agreement,
            saturation_events: r.saturation_events,
        })
        .collect();
    let meta = ctx.meta(
        "sweep",
        None,
        json!({ "formats": formats, "source": source }),
    );
    let path = ctx.out_path(out, &cfg.outputs.sweep);
    write_csv(&path, &meta, Some(&SWEEP_COLUMNS), &rows)?;
    Ok(format!(
        "sweep: {} formats over {} vectors, observed range [{}, {}] needs {} integer bits -> {}",
        rows.len(),
        vectors.len(),
        sweep.observed_min,
        sweep.observed_max,
        sweep.min_integer_bits,
        path.display()
    ))
}

fn run_cost(
    ctx: &Ctx,
    params: &Option<PathBuf>,
    attention: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<String, RunError> {
    let cfg = ctx.cfg;
    let params = load_params(cfg, params)?;
    let acfg = match attention {
        Some(p) => {
            let a: AttentionConfig = read_json(p)?;
            validate_attention("--attention", &a, &cfg.engine)?;
            a
        }
        None => cfg.attention,
    };
    let report = cost_report(&cfg.engine, &acfg, &params)?;
    let label = if report.calibrated {
        "calibrated: parameters fitted to reference area, power and efficiency ratios, not independently measured"
    } else {
        "uncalibrated"
    };
    let meta = ctx.meta("cost", Some(&params), json!({ "attention": acfg }));
    let path = ctx.out_path(out, &cfg.outputs.cost);
    write_json(&path, &meta, &json!({ "label": label, "report": report }))?;
    Ok(format!(
        "cost{}: area {:.4}x / power {:.4}x of CMOS softmax, {:.2} GOPs/s/W -> {}",
        if report.calibrated {
            " (calibrated)"
        } else {
            ""
        },
        report.ratios.area_vs_cmos_softmax,
        report.ratios.power_vs_cmos_softmax,
        report.efficiency_gops_per_watt,
        path.display()
    ))
}

#[derive(Serialize)]
struct ScheduleCsvRow {
    vector_id: usize,
    stage: &'static str,
    start_ns: f64,
    end_ns: f64,
}

fn run_pipeline(
    ctx: &Ctx,
    vectors: usize,
    length: Option<usize>,
    params: &Option<PathBuf>,
    schedule: &Option<PathBuf>,
    sequential: bool,
) -> Result<String, RunError> {
    let cfg = ctx.cfg;
    let n = length.unwrap_or(cfg.attention.seq_len);
    if vectors == 0 {
        return Err(ConfigError::validation("--vectors", "must be >= 1").into());
    }
    if n == 0 || n > cfg.engine.max_seq_len {
        return Err(ConfigError::validation(
            "--length",
            format!("must be in 1..={}", cfg.engine.max_seq_len),
        )
        .into());
    }
    let params = load_params(cfg, params)?;
    let model = StageLatencyModel::default();
    let sched = softmax_schedule(vectors, n, &model, &params, !sequential);
    sched.verify(&model.durations(n, &params))?;
    let other = softmax_schedule(vectors, n, &model, &params, sequential).makespan_ns;
    let rows: Vec<ScheduleCsvRow> = sched
        .entries
        .iter()
        .map(|e| ScheduleCsvRow {
            vector_id: e.vector_id,
            stage: SOFTMAX_STAGES[e.stage],
            start_ns: e.start_ns,
            end_ns: e.end_ns,
        })
        .collect();
    let meta = ctx.meta(
        "pipeline",
        Some(&params),
        json!({ "vectors": vectors, "length": n, "pipelined": !sequential }),
    );
    let path = ctx.out_path(schedule, &cfg.outputs.schedule);
    write_csv(
        &path,
        &meta,
        Some(&["vector_id", "stage", "start_ns", "end_ns"]),
        &rows,
    )?;
    let (p, s) = if sequential {
        (other, sched.makespan_ns)
    } else {
        (sched.makespan_ns, other)
    };
    Ok(format!(
        "pipeline: {vectors} vectors of length {n}, makespan {} ns pipelined vs {} ns sequential -> {}",
        p,
        s,
        path.display()
    ))
}
