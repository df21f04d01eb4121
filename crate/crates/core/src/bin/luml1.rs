use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use luml1::config::{parse_list, parse_size};
use luml1::gradcheck::run_suite;
use luml1::harness::{
    denoise_file, eval_table_csv, evaluate_model, load_clean_dir, noisy_baseline, noisy_eval_set, report_to_csv,
    run_bench_with, write_corpus, BenchPlan,
};
use luml1::image::{load_image, save_image};
use luml1::losses::{l1_loss, luminance_l1_loss};
use luml1::metrics::{psnr, ssim, SsimParams};
use luml1::par::Exec;
use luml1::tinynet::{load_checkpoint, TinyNet};
use luml1::trainer::{optimize_pixels_traced, train, TrainConfig};
use luml1::{Error, LossSpec, Result};

#[derive(Parser)]
#[command(name = "luml1", version, about = "Luminance-augmented L1 loss toolkit and denoising benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic clean/noisy corpus and its manifest
    Gen(GenArgs),
    /// Train a denoiser and write a checkpoint
    Train(TrainArgs),
    /// Score a checkpoint on a directory of clean images
    Eval(EvalArgs),
    /// Run a benchmark plan and write the report CSV
    Bench(BenchArgs),
    /// Denoise one image with a checkpoint
    Denoise(DenoiseArgs),
    /// Compare two images
    Metric(MetricArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Optimise the pixels of an image toward a target under a loss
    Pixopt(PixoptArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value = "40x40", value_parser = size_arg)]
    size: (usize, usize),
    /// Noise level of the noisy copies, 0–255 scale
    #[arg(long, default_value_t = 25.0)]
    sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// l1, l2 or luml1
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// l1 or l2, the pixel term under luml1
    #[arg(long)]
    pixel_base: Option<String>,
    #[arg(long)]
    sigma_max: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Per-step training log
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "5,10,15,20,25,30,35,40,45,50,55,60,65,70,75")]
    sigmas: String,
    /// Seed of the evaluation noise
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    csv: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    /// Also write each cell's trained checkpoint here
    #[arg(long)]
    ckpt_dir: Option<PathBuf>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long)]
    psnr: bool,
    #[arg(long)]
    ssim: bool,
    #[arg(long)]
    luml1: bool,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct PixoptArgs {
    #[arg(long)]
    init: PathBuf,
    #[arg(long)]
    target: PathBuf,
    /// Loss spec, e.g. `l1`, `l2`, `luml1`, `luml1:0.5:l2`
    #[arg(long, default_value = "luml1")]
    loss: String,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Step per element; the mean-loss gradient is rescaled by the element
    /// count so the step does not depend on image size
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

fn size_arg(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_size(s).map_err(|e| e.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let entries = write_corpus(&a.out, a.seed, a.count, a.size, a.sigma)?;
    eprintln!("wrote {} pairs to {}", entries.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::parse(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if a.loss.is_some() || a.lambda.is_some() || a.pixel_base.is_some() {
        let kind = a.loss.clone().unwrap_or_else(|| match cfg.loss.kind {
            luml1::LossKind::L1 => "l1".into(),
            luml1::LossKind::L2 => "l2".into(),
            luml1::LossKind::LuminanceL1 => "luml1".into(),
        });
        let lambda = a.lambda.or(cfg.loss.is_luminance().then_some(cfg.loss.lambda));
        let base = a.pixel_base.clone().unwrap_or_else(|| cfg.loss.pixel_base.to_string());
        cfg.loss = LossSpec::from_parts(&kind, lambda, Some(&base))?;
    }
    if let Some(s) = a.sigma_max {
        cfg.sigma_max = s;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let net = TinyNet::new(&cfg.net, cfg.init_seed())?;
    let (_, log) = train(net, &cfg, Some(&a.out))?;
    if let Some(p) = &a.log {
        fs::write(p, log.to_csv())?;
    }
    if let Some((p, s)) = log.last_validation() {
        eprintln!("trained {} steps of {}; validation psnr {p:.4} ssim {s:.4}", cfg.steps, cfg.loss);
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let net = load_checkpoint(&a.ckpt)?;
    let sigmas: Vec<f64> = parse_list(&a.sigmas).map_err(|_| Error::InvalidInput(format!("bad --sigmas {:?}", a.sigmas)))?;
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidInput("--sigmas must be a nonempty list of levels >= 0".into()));
    }
    let clean = load_clean_dir(&a.data)?;
    if clean.is_empty() {
        return Err(Error::InvalidInput(format!("no clean images in {}", a.data.display())));
    }
    let noisy = noisy_eval_set(&clean, &sigmas, a.seed)?;
    let exec = Exec::default();
    let input = noisy_baseline(&noisy, &clean, exec)?;
    let model = evaluate_model(&net, &noisy, &clean, exec)?;
    let table = eval_table_csv(&sigmas, &input, &model);
    fs::write(&a.csv, &table)?;
    print!("{table}");
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let plan = BenchPlan::parse(&read_text(&a.plan)?)?;
    if let Some(d) = &a.ckpt_dir {
        fs::create_dir_all(d)?;
    }
    let exec = if a.sequential { Exec::Sequential } else { Exec::default() };
    let report = run_bench_with(&plan, a.ckpt_dir.as_deref(), exec)?;
    fs::write(&a.csv, report_to_csv(&report))?;
    eprintln!(
        "bench: {} cells x {} levels in {:.1} s, config {:016x}",
        report.columns.len(),
        report.sigmas.len(),
        report.wall_clock_ms / 1e3,
        report.config_hash
    );
    for (ours, base) in report.comparisons() {
        let n = report.sigmas.len() as f64;
        let d: f64 = report.cells.iter().map(|r| r[ours].psnr - r[base].psnr).sum::<f64>() / n;
        eprintln!(
            "delta {} - {}: mean {d:+.4} dB",
            report.columns[ours].label(),
            report.columns[base].label()
        );
    }
    Ok(())
}

fn cmd_metric(a: MetricArgs) -> Result<()> {
    let x = load_image(&a.a)?;
    let y = load_image(&a.b)?;
    let all = !(a.psnr || a.ssim || a.luml1);
    if all || a.psnr {
        println!("psnr {:.6}", psnr(&x, &y, 1.0)?);
    }
    if all || a.ssim {
        println!("ssim {:.6}", ssim(&x, &y, &SsimParams::default())?);
    }
    if a.luml1 {
        let spec = LossSpec::luminance_l1(a.lambda);
        spec.validate()?;
        println!("luml1 {:.6}", luminance_l1_loss(&x, &y, &spec)?.value);
    } else if all {
        println!("l1 {:.6}", l1_loss(&x, &y)?.value);
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let results = run_suite(a.seed)?;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{} {:<28} checked {:>5} skipped {:>4} max_rel_err {:.3e} (tol {:.0e})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.checked,
            r.skipped,
            r.max_rel_err,
            r.tol
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}

fn cmd_pixopt(a: PixoptArgs) -> Result<()> {
    let mut spec: LossSpec = a.loss.parse()?;
    if let Some(l) = a.lambda {
        spec.lambda = l;
    }
    spec.validate()?;
    let init = load_image(&a.init)?;
    let target = load_image(&a.target)?;
    let (out, trace) = optimize_pixels_traced(&init, &target, &spec, a.steps, a.lr * init.len() as f64)?;
    save_image(&out, &a.out)?;
    if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
        eprintln!("{spec}: loss {first:.6} -> {last:.6} over {} steps", a.steps);
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Gen(a) => cmd_gen(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Denoise(a) => denoise_file(&a.ckpt, &a.input, &a.out),
        Cmd::Metric(a) => cmd_metric(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Pixopt(a) => cmd_pixopt(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
