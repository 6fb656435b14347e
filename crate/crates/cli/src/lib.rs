//! Command-line front end: track a sequence, generate synthetic data,
//! re-score results, run ablations and measure throughput.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fusetrack_core::eval::{
    gen_synthetic, run_ablation, run_sequence, suite, AblationGroup, Preset, ResultsFile, Sequence, SynthSpec,
    TrackRun, DEFAULT_PRECISION_RADIUS,
};
use fusetrack_core::tracker::TrackerConfig;
use fusetrack_core::{Error, Image, Rect};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "fusetrack", version, about = "Online visual tracking with a fused classifier and matcher")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track a sequence directory and write a results file.
    Track(TrackArgs),
    /// Generate a synthetic sequence directory.
    Synth(SynthArgs),
    /// Score an existing results file against a sequence's ground truth.
    Eval(EvalArgs),
    /// Run one ablation group over a suite of synthetic sequences.
    Ablate(AblateArgs),
    /// Measure tracking throughput on a synthetic sequence.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Directory holding `frames/` and `groundtruth.txt`.
    #[arg(long)]
    pub sequence: PathBuf,
    /// `key=value` tracker configuration; defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Results file to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Center-error radius for precision, in pixels.
    #[arg(long, default_value_t = DEFAULT_PRECISION_RADIUS)]
    pub radius: f64,
    /// Write one PNG per frame with the predicted (red) and true (green) boxes.
    #[arg(long, value_name = "DIR")]
    pub dump_overlays: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// One of static, distractor, deform, occlusion, zoom.
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output sequence directory.
    #[arg(long)]
    pub output: PathBuf,
    /// Side of the square frames in pixels.
    #[arg(long, default_value_t = 288)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Results file written by `track`.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub sequence: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PRECISION_RADIUS)]
    pub radius: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// G1 (fusion weight), G2 (attention), G3 (template interval) or G4
    /// (matcher only, with and without template update).
    #[arg(long)]
    pub group: String,
    /// Seed of the first sequence; the others follow consecutively.
    #[arg(long)]
    pub seed: u64,
    /// Report file: aligned table followed by a JSON block.
    #[arg(long)]
    pub output: PathBuf,
    /// Number of sequences in the suite.
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Overrides the group's default preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// Base configuration the group's settings are derived from.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Number of tracked frames (the initial frame comes on top).
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    /// Side of the square frames in pixels.
    #[arg(long, default_value_t = 288)]
    pub size: usize,
    #[arg(long)]
    pub seed: u64,
    /// Optional JSON report.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// A failed command: the exit code and the message for standard error.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }

    fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::UnknownConfigKey(_) => EXIT_CONFIG,
        Error::Sequence(_) | Error::Io { .. } | Error::Image { .. } | Error::InvalidArgument(_) => EXIT_INPUT,
        Error::Frame { source, .. } => exit_code(source),
        _ => EXIT_INTERNAL,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self { code: exit_code(&e), message: e.to_string() }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn load_config(path: Option<&Path>) -> std::result::Result<TrackerConfig, Failure> {
    match path {
        None => Ok(TrackerConfig::default()),
        Some(p) => TrackerConfig::from_file(p).map_err(|e| Failure::config(format!("{}: {e}", p.display()))),
    }
}

fn parse_preset(s: &str) -> std::result::Result<Preset, Failure> {
    s.parse::<Preset>().map_err(|e| Failure::input(e.to_string()))
}

fn write_file(path: &Path, contents: &[u8]) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    }
}

pub fn run(command: &Command) -> CmdResult {
    match command {
        Command::Track(a) => cmd_track(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

pub fn cmd_track(args: &TrackArgs) -> CmdResult {
    let cfg = load_config(args.config.as_deref())?;
    let seq = Sequence::load(&args.sequence)?;
    let run = run_sequence(&seq, &cfg, args.seed, args.radius)?;
    let results = run.results(&seq.name, false);
    write_file(&args.output, results.to_json().as_bytes())?;
    if let Some(dir) = &args.dump_overlays {
        dump_overlays(&seq, &run, dir)?;
    }
    let s = &results.summary;
    println!("auc={:.4} pr={:.4} fps={:.2}", s.auc, s.precision, run.fps());
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> CmdResult {
    let spec = SynthSpec { image_size: args.size, ..SynthSpec::new(parse_preset(&args.preset)?, args.frames, args.seed) };
    let seq = gen_synthetic(&spec)?;
    seq.save(&args.output)?;
    println!("wrote {} frames to {}", seq.len(), args.output.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> CmdResult {
    let results = ResultsFile::load(&args.results)?;
    let seq = Sequence::load(&args.sequence)?;
    let s = results.evaluate(&seq.groundtruth, args.radius)?;
    println!("auc={:.4} pr={:.4} mean_iou={:.4}", s.auc, s.precision, s.mean_iou);
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> CmdResult {
    let group: AblationGroup = args
        .group
        .parse()
        .map_err(|_: Error| Failure::config(format!("unknown ablation group {:?}, expected G1, G2, G3 or G4", args.group)))?;
    let base = load_config(args.config.as_deref())?;
    let preset = match &args.preset {
        Some(p) => parse_preset(p)?,
        None => group.default_preset(),
    };
    if args.count == 0 {
        return Err(Failure::input("--count must be at least 1"));
    }
    let report = run_ablation(group, &base, &suite(preset, args.count, args.frames, args.seed))?;
    let text = report.to_text();
    write_file(&args.output, format!("{text}\n{}", report.to_json()).as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn cmd_bench(args: &BenchArgs) -> CmdResult {
    if args.frames < 10 {
        return Err(Failure::input(format!("--frames must be at least 10, got {}", args.frames)));
    }
    let spec = SynthSpec { image_size: args.size, ..SynthSpec::new(Preset::Distractor, args.frames + 1, args.seed) };
    let seq = gen_synthetic(&spec)?;
    let run = run_sequence(&seq, &TrackerConfig::default(), args.seed, DEFAULT_PRECISION_RADIUS)?;
    let fps = run.fps();
    println!("fps={fps:.2} frames={} seconds={:.3}", args.frames, run.step_seconds);
    if let Some(path) = &args.output {
        let report = serde_json::json!({
            "frames": args.frames,
            "size": args.size,
            "seconds": run.step_seconds,
            "fps": fps,
        });
        let mut text = serde_json::to_string_pretty(&report).expect("bench report serializes");
        text.push('\n');
        write_file(path, text.as_bytes())?;
    }
    Ok(())
}

fn dump_overlays(seq: &Sequence, run: &TrackRun, dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    for (i, (frame, out)) in seq.frames.iter().zip(&run.outputs).enumerate() {
        let img = overlay(frame, &[(seq.groundtruth[i], [0.0, 1.0, 0.0]), (out.state.rect, [1.0, 0.0, 0.0])])?;
        img.save_png(&dir.join(format!("{:08}.png", i + 1)))?;
    }
    Ok(())
}

/// RGB copy of `frame` with one-pixel box outlines.
fn overlay(frame: &Image, boxes: &[(Rect, [f64; 3])]) -> fusetrack_core::Result<Image> {
    let (h, w) = (frame.height(), frame.width());
    let gray = frame.to_gray();
    let mut data: Vec<f64> = gray.data().iter().flat_map(|&v| [v, v, v]).collect();
    for (r, color) in boxes {
        let clamp = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
        let (x0, x1) = (clamp(r.left(), w), clamp(r.right() - 1.0, w));
        let (y0, y1) = (clamp(r.top(), h), clamp(r.bottom() - 1.0, h));
        let mut put = |y: usize, x: usize| data[(y * w + x) * 3..(y * w + x + 1) * 3].copy_from_slice(color);
        for x in x0..=x1 {
            put(y0, x);
            put(y1, x);
        }
        for y in y0..=y1 {
            put(y, x0);
            put(y, x1);
        }
    }
    Image::new(h, w, 3, data)
}
