use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fgrefine::eval::{clear_mot, evaluate_detections, DetectionReport, MotReport};
use fgrefine::pipeline::{detection_report_text, to_json};
use fgrefine::synth::{preset, SceneScript};
use fgrefine::{io, Error, ErrorKind, PipelineConfig};

#[derive(Parser)]
#[command(name = "fgrefine", version, about = "Refine background-subtraction detections with optical flow and edges")]
struct Cli {
    /// More log output (repeat for more)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the refinement pipeline over a frame directory
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Frame directory (io.frames)
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Directory of precomputed foreground masks (io.masks)
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Output directory (io.output)
        #[arg(long)]
        output: Option<PathBuf>,
        /// Ground-truth CSV (io.gt)
        #[arg(long)]
        gt: Option<PathBuf>,
    },
    /// Precision and recall of a detection CSV against ground truth
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = fgrefine::eval::DEFAULT_IOU_MIN)]
        iou_min: f64,
        /// Report path; a JSON copy is written next to it [default: <dets>.eval.txt]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// CLEAR-MOT scores of a track CSV against ground truth
    MotEval {
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = fgrefine::eval::DEFAULT_IOU_MIN)]
        iou_min: f64,
        /// Report path; a JSON copy is written next to it [default: <tracks>.mot.txt]
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic scenes
    Synth {
        #[command(subcommand)]
        action: SynthAction,
    },
    /// Print the effective configuration
    DumpConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Subcommand)]
enum SynthAction {
    /// Render a preset or a scene script into <outdir>/frames and <outdir>/gt.csv
    Emit { scene: String, outdir: PathBuf },
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set merge.t_m=5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> fgrefine::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Io => 2,
        ErrorKind::DataFormat => 3,
    }
}

fn write(path: &Path, text: &str) -> fgrefine::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn default_report_path(input: &Path, suffix: &str) -> PathBuf {
    let mut name = input.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(suffix);
    input.with_file_name(name)
}

fn save_report(out: &Path, text: &str, json_text: &str) -> fgrefine::Result<()> {
    write(out, text)?;
    write(&out.with_extension("json"), json_text)
}

fn mot_text(r: &MotReport) -> String {
    format!(
        "mota = {:.6}\nmotp = {:.6}\nmisses = {}\nfalse_positives = {}\nid_switches = {}\nmatches = {}\ntotal_gt = {}\n",
        r.mota, r.motp, r.misses, r.false_positives, r.id_switches, r.matches, r.total_gt
    )
}

fn run(cli: Cli) -> fgrefine::Result<()> {
    match cli.command {
        Command::Run {
            config,
            frames,
            masks,
            output,
            gt,
        } => {
            let mut cfg = config.load()?;
            if let Some(p) = frames {
                cfg.frames_dir = p;
            }
            if let Some(p) = masks {
                cfg.masks_dir = Some(p);
            }
            if let Some(p) = output {
                cfg.output_dir = p;
            }
            if let Some(p) = gt {
                cfg.gt_path = Some(p);
            }
            let summary = fgrefine::run_pipeline(&cfg)?;
            println!("frames processed = {}", summary.frames_processed);
            if summary.frames_skipped > 0 {
                println!("frames skipped = {}", summary.frames_skipped);
            }
            if let Some(r) = summary.report {
                print!("{}", r.to_text());
            }
        }
        Command::Eval { dets, gt, iou_min, out } => {
            if !(iou_min > 0.0 && iou_min <= 1.0) {
                return Err(Error::Config(format!("--iou-min must lie in (0, 1], got {iou_min}")));
            }
            let detections = io::read_detections(&dets)?;
            let truth = io::read_ground_truth(&gt)?;
            let report: DetectionReport = evaluate_detections(&detections, &truth, None, iou_min);
            let text = format!("iou_min = {iou_min}\n{}", detection_report_text("detections", &report));
            print!("{text}");
            let out = out.unwrap_or_else(|| default_report_path(&dets, ".eval.txt"));
            save_report(&out, &text, &to_json(&report))?;
        }
        Command::MotEval { tracks, gt, iou_min, out } => {
            if !(iou_min > 0.0 && iou_min <= 1.0) {
                return Err(Error::Config(format!("--iou-min must lie in (0, 1], got {iou_min}")));
            }
            let hyps = io::read_ground_truth(&tracks)?;
            let truth = io::read_ground_truth(&gt)?;
            let report = clear_mot(&hyps, &truth, iou_min);
            let text = mot_text(&report);
            print!("{text}");
            let out = out.unwrap_or_else(|| default_report_path(&tracks, ".mot.txt"));
            save_report(&out, &text, &to_json(&report))?;
        }
        Command::Synth {
            action: SynthAction::Emit { scene, outdir },
        } => {
            let script_path = Path::new(&scene);
            let script = if script_path.is_file() {
                SceneScript::load(script_path)?
            } else {
                preset(&scene)?
            };
            let (frames, gt) = script.render()?;
            let frames_dir = outdir.join("frames");
            io::create_dir(&frames_dir)?;
            for (t, f) in frames.iter().enumerate() {
                io::write_color_ppm(&frames_dir.join(format!("{t:06}.ppm")), f)?;
            }
            io::write_ground_truth(&outdir.join("gt.csv"), &gt)?;
            write(&outdir.join("scene.txt"), &script.to_text())?;
            println!("wrote {} frames and {} annotations to {}", frames.len(), gt.len(), outdir.display());
        }
        Command::DumpConfig { config } => {
            let cfg = config.load()?;
            cfg.validate()?;
            print!("{}", cfg.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.kind()))
        }
    }
}
