mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fluoroden::eval::{denoise, line_profile, DenoiseConfig, DenoiseMode, MetricReport};
use fluoroden::fusion::FusionProducts;
use fluoroden::io::{load_sequence, read_pgm, save_sequence, write_pgm};
use fluoroden::nn::{Denoiser, Msr2auNet, StudentUNet};
use fluoroden::phantom::noise_seed;
use fluoroden::training::{run_ablation, train_step1, train_step2, AblationConfig, RunReport};
use fluoroden::{apply_dose_noise, estimate_flow, generate_clean_sequence, DoseLevel, FlowEstimatorConfig, FusionConfig, PhantomSpec};
use log::info;

use config::{read_toml, AblateFile, Step1File, Step2File};

#[derive(Parser)]
#[command(name = "fluoroden", version, about = "Two-step self-supervised denoising of noisy image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic phantom sequence as 16-bit PGM frames plus a manifest.
    Generate(GenerateArgs),
    /// Print shape, frame count and intensity statistics of a sequence.
    Inspect {
        manifest: PathBuf,
    },
    /// Estimate dense flow aligning `--mov` onto `--ref` and dump it as text.
    Flow {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        mov: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML flow-estimator settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write every fusion / high-frequency plane for a student and a filtered frame.
    FusionDump {
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        filtered: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// TOML fusion settings.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Denoise a sequence with a trained network or the recursive filter.
    Denoise(DenoiseArgs),
    /// Train the multi-frame network on noisy sequences.
    TrainStep1(TrainArgs),
    /// Train the single-frame network against a frozen multi-frame network.
    TrainStep2 {
        #[command(flatten)]
        common: TrainArgs,
        /// Checkpoint written by `train-step1`.
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Run a list of ablation configurations on synthetic data.
    Ablate {
        /// Comma-separated configuration ids, e.g. `0,1,2,3,4,4-1`.
        #[arg(long, default_value = "0,1,2,3,4,4-1")]
        configs: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for `ablation.csv` and `report.txt`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a denoised sequence against a reference sequence.
    Evaluate {
        #[arg(long)]
        denoised: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Frames at each end that were passed through and are left out of the statistics.
        #[arg(long, default_value_t = 0)]
        boundary: usize,
    },
    /// Sample an image along a straight segment.
    Profile {
        #[arg(long)]
        image: PathBuf,
        /// Start point as `row,col`.
        #[arg(long, value_parser = parse_point)]
        from: (f64, f64),
        #[arg(long, value_parser = parse_point)]
        to: (f64, f64),
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DoseArg {
    Low,
    High,
    Clean,
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML phantom description; defaults apply to missing keys.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "low")]
    dose: DoseArg,
    /// Noise seed; derived from `--seed` when absent.
    #[arg(long)]
    noise_seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the noise-free sequence here.
    #[arg(long)]
    clean_out: Option<PathBuf>,
}

#[derive(Args)]
struct DenoiseArgs {
    /// TOML denoise settings (mode, checkpoints, filter and flow parameters).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Clean reference; when given, `metrics.csv` is written next to the output.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Ignore the configured mode and run the motion-compensated recursive filter.
    #[arg(long)]
    filter_only: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Run report path; defaults to the checkpoint path with a `.report.txt` suffix.
    #[arg(long)]
    report: Option<PathBuf>,
}

impl TrainArgs {
    fn report_path(&self) -> PathBuf {
        self.report.clone().unwrap_or_else(|| {
            let mut name = self.out.file_stem().unwrap_or_default().to_os_string();
            name.push(".report.txt");
            self.out.with_file_name(name)
        })
    }
}

fn parse_point(s: &str) -> std::result::Result<(f64, f64), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected `row,col`, got `{s}`"))?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
    Ok((num(r)?, num(c)?))
}

fn generate(args: &GenerateArgs) -> Result<()> {
    let spec: PhantomSpec = read_toml(args.spec.as_deref())?;
    let clean = generate_clean_sequence(&spec, args.seed)?;
    let seq = match args.dose {
        DoseArg::Clean => clean.clone(),
        DoseArg::Low | DoseArg::High => {
            let dose = if matches!(args.dose, DoseArg::Low) { DoseLevel::low() } else { DoseLevel::high() };
            apply_dose_noise(&clean, dose, args.noise_seed.unwrap_or_else(|| noise_seed(args.seed)))?
        }
    };
    let manifest = save_sequence(&seq, &args.out)?;
    println!("{}", manifest.display());
    if let Some(dir) = &args.clean_out {
        println!("{}", save_sequence(&clean, dir)?.display());
    }
    Ok(())
}

fn inspect(manifest: &Path) -> Result<()> {
    let seq = load_sequence(manifest)?;
    let (h, w) = seq.shape();
    println!("frames: {}", seq.len());
    println!("shape: {h}x{w}");
    println!("dose: {:?}", seq.dose);
    println!("seed: {}", seq.seed);
    println!("spec_hash: {}", seq.spec_hash.as_deref().unwrap_or("-"));
    let n = (seq.len() * h * w) as f64;
    let values = || seq.frames.iter().flat_map(|f| f.iter().copied());
    let mean = values().sum::<f64>() / n;
    let var = values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let min = values().fold(f64::INFINITY, f64::min);
    let max = values().fold(f64::NEG_INFINITY, f64::max);
    println!("min: {min:.6}\nmax: {max:.6}\nmean: {mean:.6}\nstd: {:.6}", var.sqrt());
    Ok(())
}

fn flow(reference: &Path, moving: &Path, out: &Path, cfg: Option<&Path>) -> Result<()> {
    let cfg: FlowEstimatorConfig = read_toml(cfg)?;
    let est = estimate_flow(&read_pgm(reference)?, &read_pgm(moving)?, &cfg)?;
    if est.low_confidence {
        log::warn!("images carry almost no gradient; flow is unreliable");
    }
    est.flow.write_text(out)?;
    Ok(())
}

/// Planes are rescaled to [0, 1] for the PGM files; `ranges.csv` keeps the
/// original ranges.
fn fusion_dump(student: &Path, filtered: &Path, out: &Path, cfg: Option<&Path>) -> Result<()> {
    let cfg: FusionConfig = read_toml(cfg)?;
    let products = FusionProducts::compute(&read_pgm(student)?, &read_pgm(filtered)?, &cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut ranges = String::from("plane,min,max\n");
    for (name, plane) in products.planes() {
        let lo = plane.fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = plane.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let span = if hi > lo { hi - lo } else { 1.0 };
        write_pgm(&out.join(format!("{name}.pgm")), &plane.mapv(|v| (v - lo) / span))?;
        writeln!(ranges, "{name},{lo:e},{hi:e}")?;
    }
    fs::write(out.join("ranges.csv"), ranges)?;
    Ok(())
}

fn run_denoise(args: &DenoiseArgs) -> Result<()> {
    let mut cfg: DenoiseConfig = read_toml(args.config.as_deref())?;
    if args.filter_only {
        cfg.mode = DenoiseMode::Filter;
    }
    let input = load_sequence(&args.input)?;
    let reference = args.reference.as_deref().map(load_sequence).transpose()?;
    let out = denoise(&input, &cfg, reference.as_ref())?;
    let manifest = save_sequence(&out.sequence, &args.out)?;
    let flags: String = out.passthrough.iter().map(|&p| if p { "1\n" } else { "0\n" }).collect();
    fs::write(args.out.join("passthrough.txt"), flags)?;
    println!("{}", manifest.display());
    if let Some(m) = &out.metrics {
        fs::write(args.out.join("metrics.csv"), m.to_csv())?;
        println!("psnr {:.4} dB, ssim {:.4}", m.psnr_mean, m.ssim_mean);
    }
    Ok(())
}

fn step1(args: &TrainArgs) -> Result<()> {
    let file: Step1File = read_toml(Some(&args.config))?;
    let mut net = Msr2auNet::new(file.teacher.clone(), file.optimizer.seed)?;
    let (train, val) = file.data.windows(file.teacher.context_frames / 2)?;
    let history = train_step1(&mut net, &train, &val, &file.optimizer)?;
    net.save(&args.out)?;
    let mut report = RunReport::new("train-step1", &file)?;
    report.section("steps", history.steps_csv()).section("epochs", history.epochs_csv());
    report.write(&args.report_path())?;
    info!("teacher written to {}", args.out.display());
    Ok(())
}

fn step2(args: &TrainArgs, teacher_path: &Path) -> Result<()> {
    let file: Step2File = read_toml(Some(&args.config))?;
    let mut teacher = Msr2auNet::load(teacher_path, file.teacher.as_ref())?;
    teacher.store_mut().freeze();
    let mut student = StudentUNet::new(file.student.clone(), file.init_seed)?;
    let (train, val) = file.data.windows(teacher.config().context_frames / 2)?;
    let outcome = train_step2(&mut student, &teacher, &train, &val, &file.step2, &file.optimizer)?;
    student.save(&args.out)?;
    let mut report = RunReport::new("train-step2", &file)?;
    report
        .section(
            "teacher_digest",
            format!("before,after\n{},{}\n", outcome.teacher_digest_before, outcome.teacher_digest_after),
        )
        .section("steps", outcome.history.steps_csv())
        .section("epochs", outcome.history.epochs_csv());
    report.write(&args.report_path())?;
    info!("student written to {}", args.out.display());
    Ok(())
}

fn ablate(configs: &str, cfg: Option<&Path>, out: &Path) -> Result<()> {
    let file: AblateFile = read_toml(cfg)?;
    let grid = AblationConfig::parse_list(configs)?;
    let data = file.data.generate()?;
    let table = run_ablation(&grid, &data, &file.settings)?;
    fs::create_dir_all(out)?;
    let csv = table.to_csv();
    fs::write(out.join("ablation.csv"), &csv)?;
    let mut report = RunReport::new(format!("ablate {configs}"), &file)?;
    report.section("results", csv.clone());
    for (label, h) in &table.histories {
        report.section(format!("{label} steps"), h.steps_csv());
        report.section(format!("{label} epochs"), h.epochs_csv());
    }
    let mut digests = String::from("config,before,after\n");
    for (id, before, after) in &table.teacher_digests {
        writeln!(digests, "{id},{before},{after}")?;
    }
    report.section("teacher_digests", digests);
    report.write(&out.join("report.txt"))?;
    print!("{csv}");
    Ok(())
}

fn evaluate(denoised: &Path, reference: &Path, out: &Path, boundary: usize) -> Result<()> {
    let d = load_sequence(denoised)?;
    let r = load_sequence(reference)?;
    if d.len() != r.len() {
        bail!("{} denoised frames but {} reference frames", d.len(), r.len());
    }
    let n = d.len();
    let passthrough: Vec<bool> = (0..n).map(|k| k < boundary || k + boundary >= n).collect();
    let report = MetricReport::compute(&d.frames, &r.frames, &passthrough)?;
    fs::write(out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    println!("psnr {:.4} +- {:.4} dB, ssim {:.4} +- {:.4}", report.psnr_mean, report.psnr_std, report.ssim_mean, report.ssim_std);
    Ok(())
}

fn profile(image: &Path, from: (f64, f64), to: (f64, f64), out: &Path) -> Result<()> {
    let p = line_profile(&read_pgm(image)?, from, to)?;
    fs::write(out, p.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate(a) => generate(&a),
        Command::Inspect { manifest } => inspect(&manifest),
        Command::Flow { reference, mov, out, config } => flow(&reference, &mov, &out, config.as_deref()),
        Command::FusionDump { student, filtered, out, config } => fusion_dump(&student, &filtered, &out, config.as_deref()),
        Command::Denoise(a) => run_denoise(&a),
        Command::TrainStep1(a) => step1(&a),
        Command::TrainStep2 { common, teacher } => step2(&common, &teacher),
        Command::Ablate { configs, config, out } => ablate(&configs, config.as_deref(), &out),
        Command::Evaluate { denoised, reference, out, boundary } => evaluate(&denoised, &reference, &out, boundary),
        Command::Profile { image, from, to, out } => profile(&image, from, to, &out),
    }
}
