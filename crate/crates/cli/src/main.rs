//! `kinr`: phantom generation, masks, training, reconstruction, evaluation,
//! baselines and the toggle ablation from one executable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ndarray::Array2;

use kinr::dataset::Record;
use kinr::{
    ablation_report, evaluate, fit_checkpoint, load_dataset, make_equispaced_mask, save_dataset,
    simulate_records, Checkpoint, Error, Grappa, KernelSpec, Method, MetricTable, Reconstructor,
    TrainConfig, ZeroFill,
};

#[derive(Parser, Debug)]
#[command(name = "kinr", version, about = "Multi-scale INR reconstruction of undersampled multi-coil k-space")]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a dataset of multi-coil phantoms.
    PhantomGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 72)]
        count: usize,
        #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
        size: Vec<usize>,
        #[arg(long, default_value_t = 4)]
        coils: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Emit an equispaced mask with a centered ACS block.
    MaskGen {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        scale: usize,
        #[arg(long, default_value_t = 0.08)]
        acs: f64,
        /// Written to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model jointly over the configured scales.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct records and write images, error maps and metrics.
    Reconstruct {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scale: usize,
        #[arg(long)]
        out: PathBuf,
        /// Only this record (all records when omitted).
        #[arg(long)]
        record: Option<usize>,
    },
    /// Mean SSIM/PSNR of the model and baselines per scale, as CSV.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "4,5,6")]
        scales: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "grappa,zerofill")]
        baselines: Vec<BaselineMethod>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a classical baseline, as CSV.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "4,5,6")]
        scales: Vec<usize>,
        #[arg(long, default_value_t = 0.08)]
        acs: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate the five toggle arms on the same data and seed.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Trailing records held out for evaluation.
        #[arg(long, default_value_t = 8)]
        holdout: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// TOML file with training keys; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set iterations=500 --set scales=[4,5,6]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BaselineMethod {
    Grappa,
    Zerofill,
}

impl BaselineMethod {
    fn method(self) -> Box<dyn Method> {
        match self {
            BaselineMethod::Grappa => Box::new(Grappa(KernelSpec::default())),
            BaselineMethod::Zerofill => Box::new(ZeroFill),
        }
    }
}

#[derive(Debug)]
enum CliError {
    Core(Error),
    Io(PathBuf, std::io::Error),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(p, e) => write!(f, "{}: {e}", p.display()),
            CliError::Usage(m) => write!(f, "{m}"),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Run metadata beside `artifact`; the only place timestamps are written.
fn write_sidecar(artifact: &Path, command: &str) -> CliResult {
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "command": command,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "version": env!("CARGO_PKG_VERSION"),
        "created_unix": created,
    });
    write_file(&sidecar_path(artifact), format!("{meta:#}\n"))
}

/// File values, then `--set` overrides, validated as one TOML document.
fn effective_config(args: &ConfigArgs) -> CliResult<TrainConfig> {
    let mut table = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Io(p.clone(), e))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for item in &args.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        let key = key.trim();
        let doc = format!("v = {}", value.trim());
        let parsed = doc
            .parse::<toml::Table>()
            .or_else(|_| format!("v = {:?}", value.trim()).parse::<toml::Table>())
            .map_err(|e| CliError::Usage(format!("--set {key}: {e}")))?;
        table.insert(key.to_string(), parsed["v"].clone());
    }
    Ok(TrainConfig::from_toml(&table.to_string())?)
}

fn load(path: &Path) -> CliResult<Vec<Record>> {
    let records = load_dataset(path)?;
    info!("loaded {} records from {}", records.len(), path.display());
    Ok(records)
}

/// Quantizes `img / peak` to 16-bit grayscale PNG.
fn write_png(path: &Path, img: &Array2<f64>, peak: f64) -> CliResult {
    let (h, w) = img.dim();
    let peak = if peak > 0.0 { peak } else { 1.0 };
    let pixels: Vec<u16> = img
        .iter()
        .map(|&v| ((v / peak).clamp(0.0, 1.0) * f64::from(u16::MAX)).round() as u16)
        .collect();
    let buf = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, pixels)
        .expect("buffer matches dimensions");
    buf.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::Io(path.to_path_buf(), io),
        other => CliError::Io(path.to_path_buf(), std::io::Error::other(other)),
    })
}

fn table_header(table: &mut MetricTable, entries: Vec<(String, String)>, data: &Path, acs: f64) {
    table.header.push(("data".into(), data.display().to_string()));
    table.header.push(("eval_acs_fraction".into(), acs.to_string()));
    table.header.extend(entries);
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::PhantomGen {
            out,
            count,
            size,
            coils,
            noise,
            seed,
        } => {
            let records = simulate_records(count, size[0], size[1], coils, noise, seed)?;
            save_dataset(&out, &records)?;
            write_sidecar(&out, "phantom-gen")?;
            println!("wrote {count} records ({}×{}, {coils} coils) to {}", size[0], size[1], out.display());
        }
        Command::MaskGen { width, scale, acs, out } => {
            let m = make_equispaced_mask(width, scale, acs)?;
            let r = m.acs_range();
            let text = format!(
                "# width = {width}\n# scale = {scale}\n# acs_fraction = {acs}\n# acs_lines = {}..{}\n# selected = {}\n{}\n",
                r.start,
                r.end,
                m.selected_count(),
                m.to_csv_line()
            );
            match out {
                Some(p) => {
                    write_file(&p, &text)?;
                    println!("{} of {width} lines selected", m.selected_count());
                }
                None => print!("{text}"),
            }
        }
        Command::Train { data, config, out } => {
            let cfg = effective_config(&config)?;
            let records = load(&data)?;
            let (ckpt, curve) = fit_checkpoint(&records, &cfg)?;
            ckpt.save(&out)?;
            let mut loss = String::from("iteration,loss\n");
            for (i, l) in curve.iter().enumerate() {
                loss.push_str(&format!("{i},{l}\n"));
            }
            let mut loss_path = out.clone().into_os_string();
            loss_path.push(".loss.csv");
            write_file(Path::new(&loss_path), loss)?;
            write_sidecar(&out, "train")?;
            match curve.last() {
                Some(l) => println!("trained {} iterations, final loss {l:.6}; checkpoint {}", curve.len(), out.display()),
                None => println!("0 iterations; initial checkpoint {}", out.display()),
            }
        }
        Command::Reconstruct {
            ckpt,
            data,
            scale,
            out,
            record,
        } => {
            let recon = Reconstructor::from_checkpoint(&Checkpoint::load(&ckpt)?)?;
            let records = load(&data)?;
            let indices: Vec<usize> = match record {
                Some(i) if i >= records.len() => {
                    return Err(CliError::Usage(format!("record {i} out of range (dataset has {})", records.len())))
                }
                Some(i) => vec![i],
                None => (0..records.len()).collect(),
            };
            fs::create_dir_all(&out).map_err(|e| CliError::Io(out.clone(), e))?;
            for i in indices {
                let rec = &records[i];
                let mask = make_equispaced_mask(rec.dim().2, scale, recon.config().acs_fraction)?;
                let img = Method::reconstruct(&recon, rec, &mask)?;
                let err = (&img - &rec.sos).mapv(f64::abs);
                let peak = rec.sos.iter().copied().fold(0.0, f64::max);
                let err_peak = err.iter().copied().fold(0.0, f64::max);
                write_png(&out.join(format!("recon_{i:04}.png")), &img, peak)?;
                write_png(&out.join(format!("error_{i:04}.png")), &err, err_peak)?;
                let (s, p) = kinr::eval::record_metrics(&rec.sos, &img)?;
                println!("record={i} scale={scale} ssim={s:.6} psnr={p:.4} error_max={err_peak:.6e}");
            }
        }
        Command::Evaluate {
            ckpt,
            data,
            scales,
            baselines,
            out,
        } => {
            let checkpoint = Checkpoint::load(&ckpt)?;
            let recon = Reconstructor::from_checkpoint(&checkpoint)?;
            let records = load(&data)?;
            let baselines: Vec<Box<dyn Method>> = baselines.iter().map(|b| b.method()).collect();
            let mut methods: Vec<&dyn Method> = vec![&recon];
            methods.extend(baselines.iter().map(|b| b.as_ref()));
            let acs = checkpoint.config.acs_fraction;
            let mut table = evaluate(&methods, &records, &scales, acs)?;
            table_header(&mut table, checkpoint.config.entries(), &data, acs);
            table.header.insert(0, ("checkpoint".into(), ckpt.display().to_string()));
            write_file(&out, table.to_csv())?;
            write_sidecar(&out, "evaluate")?;
            print!("{}", table.to_csv());
        }
        Command::Baseline {
            method,
            data,
            scales,
            acs,
            out,
        } => {
            let records = load(&data)?;
            let m = method.method();
            let mut table = evaluate(&[m.as_ref()], &records, &scales, acs)?;
            table_header(&mut table, Vec::new(), &data, acs);
            write_file(&out, table.to_csv())?;
            write_sidecar(&out, "baseline")?;
            print!("{}", table.to_csv());
        }
        Command::Ablate {
            data,
            config,
            holdout,
            out,
        } => {
            let cfg = effective_config(&config)?;
            let mut train = load(&data)?;
            if holdout == 0 || holdout >= train.len() {
                return Err(CliError::Usage(format!(
                    "--holdout {holdout} must leave both training and held-out records ({} total)",
                    train.len()
                )));
            }
            let test = train.split_off(train.len() - holdout);
            let report = ablation_report(&train, &test, &cfg)?;
            write_file(&out, report.to_csv())?;
            write_sidecar(&out, "ablate")?;
            print!("{}", report.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout with status 0; usage errors exit 2
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kinr: error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
