use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ppt::compress::{Compressor, Policy};
use ppt::error::{Error, Result};
use ppt::flops::model_flops;
use ppt::oracle::run_selftest;
use ppt::ppm::{read_ppm, write_ppm};
use ppt::runconfig::{normalize_image, RunConfig};
use ppt::synthetic::{synthetic_image, synthetic_weights};
use ppt::trace::TraceReport;
use ppt::viz::render_patch_map;
use ppt::vit::{model_forward, ModelWeights};
use ppt::weightfile::{read_weights, write_weights};

#[derive(Parser)]
#[command(name = "ppt", about = "Token prune-or-pool compression for ViT inference", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one image through the model and write a trace report
    Run {
        /// Run-config JSON path
        #[arg(long)]
        config: PathBuf,
        /// Weight file (PPTW format)
        #[arg(long, conflicts_with = "synthetic")]
        weights: Option<PathBuf>,
        /// Generate seeded synthetic weights instead of loading a file
        #[arg(long, value_name = "SEED")]
        synthetic: Option<u64>,
        /// Input image (binary PPM, P6)
        #[arg(long)]
        image: PathBuf,
        /// Trace report output path (JSON)
        #[arg(long)]
        out: PathBuf,
        /// Also render the patch map to this PPM path
        #[arg(long)]
        viz: Option<PathBuf>,
        /// Score every layer without compressing (variance analysis)
        #[arg(long)]
        observe: bool,
    },
    /// Print the analytic FLOPs report for a config (no weights or image)
    Flops {
        #[arg(long)]
        config: PathBuf,
    },
    /// Grid-sweep per-stage removal counts and thresholds to CSV
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated per-stage removal counts
        #[arg(long, value_delimiter = ',', required = true)]
        r_list: Vec<usize>,
        /// Comma-separated decision thresholds
        #[arg(long, value_delimiter = ',', required = true)]
        tau_list: Vec<f64>,
        /// CSV output path
        #[arg(long)]
        out: PathBuf,
        /// Optional weight file; synthetic weights are used otherwise
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Optional image; a seeded synthetic image is used otherwise
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Run the built-in oracle and regression suites
    Selftest,
    /// Write a synthetic weight file for a config
    GenWeights {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_weights(
    rc: &RunConfig,
    weights: &Option<PathBuf>,
    synthetic: Option<u64>,
) -> Result<ModelWeights> {
    match (weights, synthetic) {
        (Some(path), _) => read_weights(path, &rc.model),
        (None, Some(seed)) => synthetic_weights(&rc.model, seed),
        (None, None) => Err(Error::Config(
            "either --weights or --synthetic <seed> is required".into(),
        )),
    }
}

fn trace_json(report: &TraceReport) -> Result<String> {
    let mut text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Numeric(format!("cannot serialize trace report: {e}")))?;
    text.push('\n');
    Ok(text)
}

fn policy_summary(report: &TraceReport) -> String {
    let parts: Vec<String> = report
        .layers
        .iter()
        .filter(|l| l.requested_r.is_some())
        .map(|l| {
            let p = match l.policy {
                Some(Policy::Prune) => "prune",
                Some(Policy::Pool) => "pool",
                None => "none",
            };
            format!("layer{}:{p}", l.layer)
        })
        .collect();
    if parts.is_empty() {
        "none".to_string()
    } else {
        parts.join(",")
    }
}

fn top1(logits: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

fn cmd_run(
    config: &Path,
    weights: &Option<PathBuf>,
    synthetic: Option<u64>,
    image: &Path,
    out: &Path,
    viz: &Option<PathBuf>,
    observe: bool,
) -> Result<()> {
    let rc = RunConfig::load(config)?;
    let w = load_weights(&rc, weights, synthetic)?;
    let img = read_ppm(image)?;
    let pixels = normalize_image(&img, &rc.model, &rc.normalization)?;
    let mut compressor = Compressor::new(rc.schedule.clone(), observe || rc.flags.observe);
    let (logits, report) = model_forward(&pixels, &w, &rc.model, &mut compressor)?;

    std::fs::write(out, trace_json(&report)?)?;
    let viz_path = viz.clone().or_else(|| {
        if rc.flags.viz { Some(out.with_extension("ppm")) } else { None }
    });
    if let Some(path) = viz_path {
        let rendered = render_patch_map(&img, &report.merge_map, &rc.model)?;
        write_ppm(&path, &rendered)?;
    }
    println!(
        "top1={} flops={} policies={}",
        top1(&logits),
        report.flops.total,
        policy_summary(&report)
    );
    Ok(())
}

fn cmd_flops(config: &Path) -> Result<()> {
    let rc = RunConfig::load(config)?;
    let report = model_flops(&rc.model, &rc.schedule)?;
    let text = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Numeric(format!("cannot serialize FLOPs report: {e}")))?;
    println!("{text}");
    Ok(())
}

fn cmd_sweep(
    config: &Path,
    r_list: &[usize],
    tau_list: &[f64],
    out: &Path,
    weights: &Option<PathBuf>,
    image: &Option<PathBuf>,
) -> Result<()> {
    let rc = RunConfig::load(config)?;
    if r_list.is_empty() || tau_list.is_empty() {
        return Err(Error::Config("sweep needs nonempty --r-list and --tau-list".into()));
    }
    let w = match weights {
        Some(path) => read_weights(path, &rc.model)?,
        None => synthetic_weights(&rc.model, rc.seed)?,
    };
    let img = match image {
        Some(path) => read_ppm(path)?,
        None => synthetic_image(&rc.model, rc.seed)?,
    };
    let pixels = normalize_image(&img, &rc.model, &rc.normalization)?;

    let mut csv = String::from("r,tau,flops,prune_count,pool_count\n");
    for &r in r_list {
        for &tau in tau_list {
            let mut schedule = rc.schedule.clone();
            if schedule.stages.is_empty() {
                return Err(Error::Schedule("sweep config must define at least one stage".into()));
            }
            for stage in schedule.stages.iter_mut() {
                stage.r = r;
            }
            schedule.tau = tau;
            schedule.validate(&rc.model)?;
            let mut compressor = Compressor::new(schedule, false);
            let (_, report) = model_forward(&pixels, &w, &rc.model, &mut compressor)?;
            let prune = report
                .layers
                .iter()
                .filter(|l| l.policy == Some(Policy::Prune))
                .count();
            let pool = report.layers.iter().filter(|l| l.policy == Some(Policy::Pool)).count();
            csv.push_str(&format!("{r},{tau},{},{prune},{pool}\n", report.flops.total));
        }
    }
    std::fs::write(out, csv)?;
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let results = run_selftest();
    let mut all_ok = true;
    for (name, ok, detail) in &results {
        println!("{:<22} {}  {detail}", name, if *ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    }
    if all_ok {
        Ok(())
    } else {
        Err(Error::Numeric("selftest failed".into()))
    }
}

fn cmd_gen_weights(config: &Path, seed: u64, out: &Path) -> Result<()> {
    let rc = RunConfig::load(config)?;
    let w = synthetic_weights(&rc.model, seed)?;
    write_weights(out, &w, &rc.model)?;
    println!("wrote {} (seed {seed})", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, weights, synthetic, image, out, viz, observe } => {
            cmd_run(config, weights, *synthetic, image, out, viz, *observe)
        }
        Command::Flops { config } => cmd_flops(config),
        Command::Sweep { config, r_list, tau_list, out, weights, image } => {
            cmd_sweep(config, r_list, tau_list, out, weights, image)
        }
        Command::Selftest => cmd_selftest(),
        Command::GenWeights { config, seed, out } => cmd_gen_weights(config, *seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
