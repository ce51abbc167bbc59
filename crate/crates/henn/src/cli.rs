//! `henn plan | run | verify | bench`.
//!
//! Exit codes: 0 success, 1 verification failed, 2 usage error, 3 invalid
//! model or parameters, 4 file or format error, 5 evaluation error.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use henn_core::engine::{self, CostModel};
use henn_core::model::{self, ModelSpec};
use henn_core::{packing, HeParams, PackPlan};
use serde::Serialize;

use crate::io::{self, FormatError, Report};

#[derive(Debug, Parser)]
#[command(name = "henn", version, about = "Plan, run and check CNN inference over packed slot ciphertexts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a model and print its per-sample slot plan.
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Run inference on input samples and print a report.
    Run {
        #[command(flatten)]
        common: Common,
        /// Samples file (JSON, or CSV for single-channel models). Without it,
        /// `--batch` random samples are drawn from `--seed`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Samples packed per ciphertext.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        batch: u64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Compare homomorphic outputs against the plaintext oracle.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1e-6, value_parser = positive_f64)]
        tol: f64,
        /// Measure quantized error over a range of scale bits instead.
        #[arg(long)]
        scale_sweep: bool,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Per-layer operation counts and estimated cost, plus a depth sweep.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// Model JSON file.
    #[arg(long, required_unless_present = "builtin", conflicts_with = "builtin")]
    pub model: Option<PathBuf>,
    /// Built-in architecture, M1 to M7, with seeded random weights.
    #[arg(long)]
    pub builtin: Option<String>,
    /// Parameter JSON file; flags below override it.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Round the per-sample footprint up to a multiple of this.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub align: u64,
    #[arg(long)]
    pub quantize: bool,
    #[arg(long)]
    pub scale_bits: Option<u32>,
    #[arg(long)]
    pub depth: Option<u32>,
    /// Write output here instead of stdout.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(v),
        Ok(_) => Err("must be positive".into()),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("verification failed: {0}")]
    VerifyFailed(String),
    #[error("invalid model:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] henn_core::Error),
    #[error(transparent)]
    Other(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use henn_core::Error as E;
        match self {
            CliError::VerifyFailed(_) => 1,
            CliError::Invalid(_) => 3,
            CliError::Format(FormatError::Core(e)) | CliError::Core(e) => match e {
                E::InvalidParams(_)
                | E::UnknownModel(_)
                | E::InvalidModel(_)
                | E::FootprintOverflow { .. }
                | E::CapacityExceeded { .. } => 3,
                _ => 5,
            },
            CliError::Format(_) => 4,
            CliError::Other(_) => 5,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

impl Common {
    fn params(&self) -> CliResult<HeParams> {
        let mut p = match &self.params {
            Some(path) => io::load_params(path)?,
            None => HeParams::default(),
        };
        if let Some(d) = self.depth {
            p.depth = d;
        }
        if let Some(b) = self.scale_bits {
            p.scale_bits = b;
        }
        if self.quantize {
            p.quantize = true;
        }
        p.validate()?;
        Ok(p)
    }

    fn model(&self) -> CliResult<ModelSpec> {
        match (&self.model, &self.builtin) {
            (Some(path), _) => Ok(io::load_model(path)?),
            (None, Some(name)) => Ok(model::builtin(name, self.seed)?),
            (None, None) => unreachable!("clap requires one model source"),
        }
    }

    /// Model, parameters and plan, after validation.
    fn prepare(&self) -> CliResult<(ModelSpec, HeParams, PackPlan)> {
        let m = self.model()?;
        let params = self.params()?;
        let report = model::validate(&m, &params);
        if !report.ok {
            return Err(CliError::Invalid(
                report
                    .violations
                    .iter()
                    .map(|v| match v.layer {
                        Some(i) => format!("layer {i}: {}", v.message),
                        None => v.message.clone(),
                    })
                    .collect(),
            ));
        }
        let plan = packing::footprint(&m, &params, self.align as usize)?;
        Ok((m, params, plan))
    }

    fn emit(&self, text: &str) -> CliResult<()> {
        Ok(io::emit(self.report.as_deref(), text)?)
    }
}

#[derive(Serialize)]
struct PlanOutput<'a> {
    model: &'a str,
    #[serde(flatten)]
    plan: &'a PackPlan,
    mult_depth: u32,
    per_layer_mults: Vec<u32>,
}

fn cmd_plan(common: &Common) -> CliResult<()> {
    let (m, _, plan) = common.prepare()?;
    let depth = model::mult_depth(&m)?;
    let out = PlanOutput {
        model: &m.name,
        plan: &plan,
        mult_depth: depth.total,
        per_layer_mults: depth.per_layer,
    };
    common.emit(&serde_json::to_string_pretty(&out).context("serializing plan")?)
}

fn cmd_run(common: &Common, input: Option<&std::path::Path>, batch: usize, format: Format) -> CliResult<()> {
    let (m, params, plan) = common.prepare()?;
    if batch > plan.capacity {
        return Err(henn_core::Error::CapacityExceeded {
            samples: batch,
            capacity: plan.capacity,
        }
        .into());
    }
    let samples = match input {
        Some(path) => io::load_samples(path, m.input)?,
        None => engine::random_inputs(&m, batch, common.seed),
    };
    let mut outputs = Vec::with_capacity(samples.len());
    let mut metrics = None;
    let mut batches = 0;
    for chunk in samples.chunks(batch) {
        let result = engine::run(&m, chunk, &params, &plan)?;
        outputs.extend(result.outputs);
        metrics.get_or_insert(result.metrics);
        batches += 1;
    }
    let metrics = match metrics {
        Some(m) => m,
        None => engine::run(&m, &[], &params, &plan)?.metrics,
    };
    match format {
        Format::Json => {
            let report = Report::new(&m, params, plan.with_batch(batch)?, &metrics, outputs, batches);
            common.emit(&report.to_json())
        }
        Format::Csv => {
            let mut text = io::metrics_csv(&metrics.per_layer);
            text.push('\n');
            let rows: Vec<(usize, String)> = outputs
                .iter()
                .enumerate()
                .map(|(i, o)| (i, o.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")))
                .collect();
            text.push_str(&io::pairs_csv(["sample", "outputs"], &rows));
            common.emit(&text)
        }
    }
}

#[derive(Serialize)]
struct SweepRow {
    scale_bits: u32,
    mean_abs_err: f64,
    max_abs_err: f64,
}

#[derive(Serialize)]
struct SweepReport {
    model: String,
    trials: usize,
    sweep: Vec<SweepRow>,
    monotone: bool,
}

const SWEEP_BITS: [u32; 6] = [16, 20, 24, 28, 30, 32];

fn cmd_verify(common: &Common, trials: usize, tol: f64, sweep: bool, format: Format) -> CliResult<()> {
    let (m, params, plan) = common.prepare()?;
    if sweep {
        let mut rows = Vec::new();
        for bits in SWEEP_BITS {
            let p = params.with_quantization(bits);
            let r = engine::verify_against_oracle(&m, &p, &plan, trials, common.seed, tol)?;
            rows.push(SweepRow {
                scale_bits: bits,
                mean_abs_err: r.mean_abs_err,
                max_abs_err: r.max_abs_err,
            });
        }
        let monotone = rows.windows(2).all(|w| w[1].mean_abs_err < w[0].mean_abs_err);
        let text = match format {
            Format::Json => serde_json::to_string_pretty(&SweepReport {
                model: m.name.clone(),
                trials,
                sweep: rows,
                monotone,
            })
            .context("serializing sweep")?,
            Format::Csv => {
                let pairs: Vec<(u32, String)> = rows.iter().map(|r| (r.scale_bits, format!("{:e}", r.mean_abs_err))).collect();
                io::pairs_csv(["scale_bits", "mean_abs_err"], &pairs)
            }
        };
        common.emit(&text)?;
        return if monotone {
            Ok(())
        } else {
            Err(CliError::VerifyFailed("error does not shrink as scale bits grow".into()))
        };
    }

    let r = engine::verify_against_oracle(&m, &params, &plan, trials, common.seed, tol)?;
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&r).context("serializing verification")?,
        Format::Csv => io::pairs_csv(
            ["field", "value"],
            &[
                ("model", r.model.clone()),
                ("trials", r.trials.to_string()),
                ("max_abs_err", format!("{:e}", r.max_abs_err)),
                ("mean_abs_err", format!("{:e}", r.mean_abs_err)),
                ("argmax_agreement", r.argmax_agreement.to_string()),
                ("passed", r.passed.to_string()),
            ],
        ),
    };
    common.emit(&text)?;
    if r.passed {
        Ok(())
    } else {
        Err(CliError::VerifyFailed(format!(
            "max error {:e} exceeds tolerance {:e}",
            r.max_abs_err, tol
        )))
    }
}

#[derive(Serialize)]
struct BenchReport<'a> {
    model: &'a str,
    per_layer: &'a [henn_core::engine::LayerMetrics],
    depth_sweep: Vec<(u32, f64)>,
}

fn cmd_bench(common: &Common, format: Format) -> CliResult<()> {
    let (m, params, plan) = common.prepare()?;
    let samples = engine::random_inputs(&m, 1, common.seed);
    let run = engine::run(&m, &samples, &params, &plan)?;
    let needed = model::mult_depth(&m)?.total;
    let cost = CostModel::default();
    let sweep: Vec<(u32, f64)> = if m.layers.is_empty() {
        Vec::new()
    } else {
        (needed..=params.depth.max(needed))
            .map(|d| (d, engine::estimate_cost(&run.metrics, &params, d, &cost)))
            .collect()
    };
    let text = match format {
        Format::Csv => {
            let mut text = io::metrics_csv(&run.metrics.per_layer);
            if !sweep.is_empty() {
                let rows: Vec<(u32, String)> = sweep.iter().map(|(d, c)| (*d, format!("{c:.6e}"))).collect();
                text.push('\n');
                text.push_str(&io::pairs_csv(["depth", "est_cost"], &rows));
            }
            text
        }
        Format::Json => serde_json::to_string_pretty(&BenchReport {
            model: &m.name,
            per_layer: &run.metrics.per_layer,
            depth_sweep: sweep,
        })
        .context("serializing bench")?,
    };
    common.emit(&text)
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Plan { common } => cmd_plan(common),
        Command::Run {
            common,
            input,
            batch,
            format,
        } => cmd_run(common, input.as_deref(), *batch as usize, *format),
        Command::Verify {
            common,
            trials,
            tol,
            scale_sweep,
            format,
        } => cmd_verify(common, *trials, *tol, *scale_sweep, *format),
        Command::Bench { common, format } => cmd_bench(common, *format),
    }
}

/// Parse `args`, run the command and map the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
