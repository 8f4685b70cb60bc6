use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use emsc_core::align::{decode_fiducial, split_patches};
use emsc_core::corpus::{build_corpus, derive_seed, frame_payload, generate_sample, write_labels, CorpusManifest};
use emsc_core::denoise::{denoise, CommandSpec, DenoiseMethod};
use emsc_core::eval::{exclusion_for, run_benchmark};
use emsc_core::intercept::{compose_reference, recover_active, sync_periods, FrameStyle};
use emsc_core::pipeline::{alarm_from_detections, load_config, recognize_frame, run_pipeline, PipelineConfig};
use emsc_core::raster::rasterize;
use emsc_core::recognize::{detections_to_jsonl, read_detections, AlarmPolicy, Recognizer};
use emsc_core::signal::{apply_channel, synthesize_emanation, BasebandCapture};
use emsc_core::{Error, RasterImage, Result};
use serde_json::Value;

const EXIT_ALARM: u8 = 2;

#[derive(Parser)]
#[command(name = "emsc", version, about = "Simulated screen-emanation capture, recovery and keyword alarm")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON configuration document.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. `channel.noise_sigma=0.02`.
    #[arg(short = 's', long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let doc = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Persist {
                    path: path.clone(),
                    source: e,
                })?;
                Some(serde_json::from_str::<Value>(&text).map_err(|source| Error::Json {
                    path: path.clone(),
                    source,
                })?)
            }
            None => None,
        };
        load_config(doc, &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Leak a displayed frame into a capture file.
    Synth {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Active-area PGM to display; a random labelled sample is generated when absent.
        #[arg(short, long)]
        input: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Where to write the generated reference frame.
        #[arg(long)]
        reference_out: Option<PathBuf>,
        /// Where to write the generated character labels.
        #[arg(long)]
        labels_out: Option<PathBuf>,
    },
    /// Attenuate a capture and add receiver noise.
    Channel {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Defaults to the first configured level.
        #[arg(long)]
        attenuation_db: Option<f64>,
    },
    /// Fold a capture into a raster image.
    Raster {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the sync estimate as JSON.
        #[arg(long)]
        sync_out: Option<PathBuf>,
    },
    /// Find the porches, crop the active area and split it into patches.
    Align {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        input: PathBuf,
        /// Recovered active area.
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        patches_dir: Option<PathBuf>,
        /// Fail unless the fiducial decodes to this payload.
        #[arg(long)]
        payload: Option<u16>,
    },
    /// Build a labelled patch corpus.
    Dataset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Denoise one image.
    Denoise {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// raw, median:K, gaussian:SIGMA or external:PROGRAM; defaults to the first configured denoiser.
        #[arg(short, long)]
        method: Option<String>,
        /// Argument for an external program (repeatable).
        #[arg(long = "arg", allow_hyphen_values = true)]
        args: Vec<String>,
    },
    /// Detect characters in a patch or a whole recovered frame.
    Recognize {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(short, long)]
        input: PathBuf,
        /// JSON-lines detections; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Treat the input as a full active area: split into patches and
        /// report frame coordinates.
        #[arg(long)]
        frame: bool,
        /// Ignore the fiducial corner of a (0, 0) patch.
        #[arg(long)]
        fiducial: bool,
    },
    /// Score every configured denoiser on a corpus.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus manifest.
        #[arg(short, long)]
        manifest: PathBuf,
        /// CSV report path.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Group frame detections into lines and match the watchlist. Exits 2 on alarm.
    Alarm {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Frame-coordinate detections, JSON lines.
        #[arg(short, long)]
        input: PathBuf,
        /// Watchlist keyword (repeatable); replaces the configured list.
        #[arg(short, long = "keyword")]
        keywords: Vec<String>,
        #[arg(long)]
        max_errors: Option<usize>,
    },
    /// Run the whole experiment. Exits 2 when any frame raises the alarm.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Overrides `output_dir`.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn read_image(path: &Path) -> Result<RasterImage> {
    RasterImage::load_pgm(path)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::Persist {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    fs::write(path, bytes).map_err(|e| Error::Persist {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn parse_method(spec: &str, args: &[String]) -> Result<DenoiseMethod> {
    let (kind, param) = spec.split_once(':').unwrap_or((spec, ""));
    let bad = || Error::InvalidInput(format!("bad denoise method {spec:?}"));
    let method = match kind {
        "raw" => DenoiseMethod::Raw,
        "median" => DenoiseMethod::Median {
            k: param.parse().map_err(|_| bad())?,
        },
        "gaussian" => DenoiseMethod::Gaussian {
            sigma: param.parse().map_err(|_| bad())?,
        },
        "external" if !param.is_empty() => DenoiseMethod::External(CommandSpec {
            args: args.to_vec(),
            ..CommandSpec::new(param, &[])
        }),
        _ => return Err(bad()),
    };
    method.validate()?;
    Ok(method)
}

fn cmd_synth(
    cfg: &PipelineConfig,
    input: Option<&Path>,
    output: &Path,
    reference_out: Option<&Path>,
    labels_out: Option<&Path>,
) -> Result<()> {
    let icfg = cfg.intercept();
    icfg.validate()?;
    let reference = match input {
        Some(p) => read_image(p)?,
        None => {
            let sample_seed = derive_seed(cfg.seed, 0);
            let sample = generate_sample(&cfg.sample, cfg.grid(), sample_seed)?;
            let style = FrameStyle {
                fg: sample.meta.fg_level,
                bg: sample.meta.bg_level,
                payload: frame_payload(sample_seed),
            };
            log::info!("generated sample with payload {}", style.payload);
            if let Some(p) = labels_out {
                write_file(p, write_labels(&sample.chars).as_bytes())?;
            }
            compose_reference(&sample.image, &cfg.timing, style)?
        }
    };
    if let Some(p) = reference_out {
        reference.save_pgm(p)?;
    }
    let clean = synthesize_emanation(&reference, &cfg.timing, &cfg.model, icfg.sample_rate(), cfg.seed)?;
    let frames = match cfg.sync {
        emsc_core::intercept::SyncMode::GroundTruth => 1,
        emsc_core::intercept::SyncMode::Estimate { frames, .. } => frames,
    };
    clean.repeated(frames).save(output)
}

fn cmd_channel(cfg: &PipelineConfig, input: &Path, output: &Path, attenuation_db: Option<f64>) -> Result<()> {
    let capture = BasebandCapture::load(input)?;
    let att = attenuation_db.unwrap_or(cfg.channel.attenuations_db[0]);
    apply_channel(&capture, att, cfg.channel.noise_sigma, derive_seed(cfg.seed, 1))?.save(output)
}

fn cmd_raster(cfg: &PipelineConfig, input: &Path, output: &Path, sync_out: Option<&Path>) -> Result<()> {
    let mut capture = BasebandCapture::load(input)?;
    let mut icfg = cfg.intercept();
    icfg.sample_rate_hz = Some(capture.sample_rate_hz);
    capture.origin_tag = input.display().to_string();
    let (line_s, frame_s, sync) = sync_periods(&capture, &icfg)?;
    if let Some(est) = &sync {
        if est.low_confidence {
            log::warn!("sync estimate has low confidence ({:.3})", est.confidence);
        }
    }
    if let (Some(p), Some(est)) = (sync_out, &sync) {
        write_json(p, est)?;
    }
    rasterize(&capture, line_s, frame_s)?.save_pgm(output)
}

fn cmd_align(
    cfg: &PipelineConfig,
    input: &Path,
    output: &Path,
    patches_dir: Option<&Path>,
    payload: Option<u16>,
) -> Result<()> {
    let raster = read_image(input)?;
    let icfg = cfg.intercept();
    // one raster row is one line period
    let line_s = raster.width() as f64 / icfg.sample_rate();
    let (offsets, _, recovered) = recover_active(&raster, &icfg, line_s)?;
    log::info!("porches at column {}, row {}", offsets.col_boundary, offsets.row_boundary);
    recovered.save_pgm(output)?;
    let decoded = decode_fiducial(&recovered);
    match (payload, decoded) {
        (Some(want), got) if got != Some(want) => {
            return Err(Error::InvalidInput(format!(
                "fiducial decoded to {got:?}, expected {want}"
            )))
        }
        (_, Some(p)) => log::info!("fiducial payload {p}"),
        (_, None) => log::warn!("fiducial did not decode"),
    }
    if let Some(dir) = patches_dir {
        for p in split_patches(&recovered, cfg.patch_size)? {
            let (r, c) = p.grid_pos;
            write_file(&dir.join(format!("p{r}_{c}.pgm")), &p.image.to_pgm())?;
        }
    }
    Ok(())
}

fn cmd_recognize(cfg: &PipelineConfig, input: &Path, output: Option<&Path>, frame: bool, fiducial: bool) -> Result<()> {
    let img = read_image(input)?;
    let method = cfg.methods().remove(0);
    let recognizer = Recognizer::new(cfg.recognizer.clone())?;
    let dets = if frame {
        recognize_frame(&img, cfg.patch_size, &method, &recognizer)?
    } else {
        let clean = denoise(&img, &method.denoise)?;
        recognizer.recognize(&clean, if fiducial { exclusion_for(0, 0) } else { None })
    };
    let text = detections_to_jsonl(&dets);
    match output {
        Some(p) => write_file(p, text.as_bytes()),
        None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::Io),
    }
}

fn cmd_eval(cfg: &PipelineConfig, manifest_path: &Path, output: Option<&Path>) -> Result<()> {
    let manifest = CorpusManifest::load(manifest_path)?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let report = run_benchmark(&manifest, root, &cfg.methods())?;
    if let Some(p) = output {
        write_file(p, report.to_csv().as_bytes())?;
    }
    print!("{}", report.to_table());
    Ok(())
}

fn cmd_alarm(cfg: &PipelineConfig, input: &Path, keywords: Vec<String>, max_errors: Option<usize>) -> Result<bool> {
    let mut policy = cfg.alarm.clone().unwrap_or(AlarmPolicy {
        watchlist: Vec::new(),
        max_errors: 1,
    });
    if !keywords.is_empty() {
        policy.watchlist = keywords;
    }
    if let Some(k) = max_errors {
        policy.max_errors = k;
    }
    policy.validate()?;
    let dets = read_detections(input)?;
    let (_, texts, result) = alarm_from_detections(&dets, &cfg.hough, &policy)?;
    for t in &texts {
        log::info!("line: {t}");
    }
    println!("{}", serde_json::to_string(&result).expect("serialisable"));
    Ok(result.triggered)
}

fn cmd_pipeline(mut cfg: PipelineConfig, output: Option<PathBuf>) -> Result<bool> {
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    let report = run_pipeline(&cfg)?;
    println!(
        "{:>8}  {:<12} {:>7} {:>9} {:>7} {:>6} {:>7}",
        "att_dB", "denoiser", "F", "precision", "recall", "used", "skipped"
    );
    for l in &report.levels {
        println!(
            "{:>8.1}  {:<12} {:>7.3} {:>9.3} {:>7.3} {:>6} {:>7}",
            l.attenuation_db,
            l.denoiser,
            l.metrics.f_score,
            l.metrics.precision,
            l.metrics.recall,
            l.frames_used,
            l.frames_skipped
        );
    }
    if !report.alarms.is_empty() {
        let raised = report.alarms.iter().filter(|a| a.triggered).count();
        println!("alarm raised in {raised} of {} frames", report.alarms.len());
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(report.any_alarm())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Synth {
            cfg,
            input,
            output,
            reference_out,
            labels_out,
        } => cmd_synth(
            &cfg.load()?,
            input.as_deref(),
            &output,
            reference_out.as_deref(),
            labels_out.as_deref(),
        )
        .map(|_| false),
        Command::Channel {
            cfg,
            input,
            output,
            attenuation_db,
        } => cmd_channel(&cfg.load()?, &input, &output, attenuation_db).map(|_| false),
        Command::Raster {
            cfg,
            input,
            output,
            sync_out,
        } => cmd_raster(&cfg.load()?, &input, &output, sync_out.as_deref()).map(|_| false),
        Command::Align {
            cfg,
            input,
            output,
            patches_dir,
            payload,
        } => cmd_align(&cfg.load()?, &input, &output, patches_dir.as_deref(), payload).map(|_| false),
        Command::Dataset { cfg, output } => {
            let manifest = build_corpus(&cfg.load()?.corpus_config(), &output)?;
            println!(
                "{} frames kept, {} skipped, {} patches in {}",
                manifest.entries.len(),
                manifest.frames_skipped,
                manifest.n_patches(),
                output.display()
            );
            Ok(false)
        }
        Command::Denoise {
            cfg,
            input,
            output,
            method,
            args,
        } => {
            let cfg = cfg.load()?;
            let method = match method {
                Some(m) => parse_method(&m, &args)?,
                None => cfg.denoisers[0].clone(),
            };
            denoise(&read_image(&input)?, &method)?.save_pgm(&output)?;
            Ok(false)
        }
        Command::Recognize {
            cfg,
            input,
            output,
            frame,
            fiducial,
        } => cmd_recognize(&cfg.load()?, &input, output.as_deref(), frame, fiducial).map(|_| false),
        Command::Eval { cfg, manifest, output } => cmd_eval(&cfg.load()?, &manifest, output.as_deref()).map(|_| false),
        Command::Alarm {
            cfg,
            input,
            keywords,
            max_errors,
        } => cmd_alarm(&cfg.load()?, &input, keywords, max_errors),
        Command::Pipeline { cfg, output } => cmd_pipeline(cfg.load()?, output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::FAILURE,
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_ALARM),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
