//! Sequences, tracking metrics, results files and the ablation runner.

mod ablation;
mod metrics;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use ablation::{run_ablation, run_settings, suite, AblationGroup, AblationReport, AblationRow};
pub use metrics::{mean_iou, precision_at, success_auc, DEFAULT_PRECISION_RADIUS};
pub use synth::{gen_synthetic, Layers, Preset, Scene, SynthSpec};

use crate::error::{Error, Result};
use crate::featmap::{iou, Rect};
use crate::features::Image;
use crate::tracker::{Flags, FrameOutput, TrackerConfig, TrackerState};

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Image>,
    pub groundtruth: Vec<Rect>,
}

impl Sequence {
    pub fn new(name: String, frames: Vec<Image>, groundtruth: Vec<Rect>) -> Result<Self> {
        if frames.len() != groundtruth.len() {
            return Err(Error::Sequence(format!(
                "{} frames but {} ground-truth boxes",
                frames.len(),
                groundtruth.len()
            )));
        }
        if frames.len() < 2 {
            return Err(Error::Sequence(format!("need at least 2 frames, got {}", frames.len())));
        }
        let dims = (frames[0].height(), frames[0].width());
        if let Some(i) = frames.iter().position(|f| (f.height(), f.width()) != dims) {
            return Err(Error::Sequence(format!("frame {i} size differs from frame 0")));
        }
        Ok(Self { name, frames, groundtruth })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Reads `frames/<8 digits>.<ext>` and `groundtruth.txt` (`x,y,w,h` per
    /// line, top-left corner) from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let frames_dir = dir.join("frames");
        let entries = fs::read_dir(&frames_dir).map_err(|source| Error::Io { path: frames_dir.clone(), source })?;
        let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
        for entry in entries {
            let path = entry.map_err(|source| Error::Io { path: frames_dir.clone(), source })?.path();
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
            if stem.len() == 8 && stem.bytes().all(|b| b.is_ascii_digit()) {
                numbered.push((stem.parse().expect("eight digits"), path));
            }
        }
        numbered.sort();
        if numbered.is_empty() {
            return Err(Error::Sequence(format!("no numbered frames in {}", frames_dir.display())));
        }
        let frames = numbered.iter().map(|(_, p)| Image::load(p)).collect::<Result<Vec<_>>>()?;

        let gt_path = dir.join("groundtruth.txt");
        let text = fs::read_to_string(&gt_path).map_err(|source| Error::Io { path: gt_path.clone(), source })?;
        let groundtruth = parse_groundtruth(&text)
            .map_err(|e| Error::Sequence(format!("{}: {e}", gt_path.display())))?;
        let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("sequence").to_string();
        Self::new(name, frames, groundtruth)
    }

    /// Writes the layout read by [`Sequence::load`], frames as PNG numbered
    /// from 1.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let frames_dir = dir.join("frames");
        fs::create_dir_all(&frames_dir).map_err(|source| Error::Io { path: frames_dir.clone(), source })?;
        for (i, frame) in self.frames.iter().enumerate() {
            frame.save_png(&frames_dir.join(format!("{:08}.png", i + 1)))?;
        }
        let mut gt = String::new();
        for r in &self.groundtruth {
            let [x, y, w, h] = r.to_xywh();
            gt.push_str(&format!("{x},{y},{w},{h}\n"));
        }
        let gt_path = dir.join("groundtruth.txt");
        fs::write(&gt_path, gt).map_err(|source| Error::Io { path: gt_path, source })
    }
}

/// One `x,y,w,h` box per non-empty line; commas, tabs or spaces separate.
pub fn parse_groundtruth(text: &str) -> Result<Vec<Rect>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Sequence(format!("line {}: {e}", i + 1)))?;
        let [x, y, w, h] = vals[..] else {
            return Err(Error::Sequence(format!("line {}: expected 4 values, got {}", i + 1, vals.len())));
        };
        out.push(Rect::from_xywh(x, y, w, h).map_err(|e| Error::Sequence(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    pub flags: Flags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub auc: f64,
    pub precision: f64,
    pub mean_iou: f64,
    /// Omitted (null) unless timing was requested, so files stay reproducible.
    pub fps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub sequence: String,
    pub frames: Vec<FrameRecord>,
    pub summary: Summary,
}

impl ResultsFile {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("results file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }

    /// Scores the recorded boxes against `groundtruth`. The stored summary is
    /// ignored; `fps` is carried over as recorded.
    pub fn evaluate(&self, groundtruth: &[Rect], radius: f64) -> Result<Summary> {
        if self.frames.len() != groundtruth.len() {
            return Err(Error::Sequence(format!(
                "results have {} frames, ground truth has {}",
                self.frames.len(),
                groundtruth.len()
            )));
        }
        let boxes = self
            .frames
            .iter()
            .map(|f| {
                let [x, y, w, h] = f.bbox;
                Rect::from_xywh(x, y, w, h)
            })
            .collect::<Result<Vec<_>>>()?;
        summarize(&boxes, groundtruth, radius, self.summary.fps)
    }
}

fn summarize(boxes: &[Rect], groundtruth: &[Rect], radius: f64, fps: Option<f64>) -> Result<Summary> {
    let ious: Vec<f64> = boxes.iter().zip(groundtruth).map(|(b, g)| iou(b, g)).collect();
    let pred: Vec<(f64, f64)> = boxes.iter().map(|b| (b.cx, b.cy)).collect();
    let gt: Vec<(f64, f64)> = groundtruth.iter().map(|g| (g.cx, g.cy)).collect();
    Ok(Summary {
        auc: success_auc(&ious)?,
        precision: precision_at(&pred, &gt, radius)?,
        mean_iou: mean_iou(&ious)?,
        fps,
    })
}

/// A tracked sequence: per-frame outputs (frame 0 is the initial box),
/// metrics and the time spent in the per-frame loop.
#[derive(Debug, Clone)]
pub struct TrackRun {
    pub outputs: Vec<FrameOutput>,
    pub ious: Vec<f64>,
    pub summary: Summary,
    pub step_seconds: f64,
}

impl TrackRun {
    /// Frames per second of the tracking loop, excluding initialisation.
    pub fn fps(&self) -> f64 {
        (self.outputs.len() - 1) as f64 / self.step_seconds.max(1e-9)
    }

    pub fn results(&self, name: &str, record_fps: bool) -> ResultsFile {
        let frames = self
            .outputs
            .iter()
            .map(|o| FrameRecord {
                frame: o.frame_index,
                bbox: o.state.rect.to_xywh(),
                score: o.state.confidence,
                flags: o.flags,
            })
            .collect();
        let mut summary = self.summary.clone();
        summary.fps = record_fps.then(|| self.fps());
        ResultsFile { sequence: name.to_string(), frames, summary }
    }
}

/// Initialises on frame 0 with its ground truth box.
pub fn init_tracker(seq: &Sequence, cfg: &TrackerConfig, seed: u64) -> Result<TrackerState> {
    TrackerState::init(&seq.frames[0], seq.groundtruth[0], cfg, seed)
        .map_err(|e| Error::Frame { frame: 0, source: Box::new(e) })
}

/// Runs an initialised tracker over frames 1.. and scores it.
pub fn track_from(mut state: TrackerState, seq: &Sequence, cfg: &TrackerConfig, radius: f64) -> Result<TrackRun> {
    let mut outputs = Vec::with_capacity(seq.len());
    outputs.push(FrameOutput {
        frame_index: 0,
        state: state.state,
        flags: Flags::default(),
        template: crate::matcher::TemplateKind::Long,
        sample_added: false,
        filter_updated: false,
        template_refreshed: false,
    });
    let start = Instant::now();
    for (i, frame) in seq.frames.iter().enumerate().skip(1) {
        let out = state.step(frame, cfg).map_err(|e| Error::Frame { frame: i, source: Box::new(e) })?;
        outputs.push(out);
    }
    let step_seconds = start.elapsed().as_secs_f64();
    let boxes: Vec<Rect> = outputs.iter().map(|o| o.state.rect).collect();
    let ious: Vec<f64> = boxes.iter().zip(&seq.groundtruth).map(|(b, g)| iou(b, g)).collect();
    let summary = summarize(&boxes, &seq.groundtruth, radius, None)?;
    Ok(TrackRun { outputs, ious, summary, step_seconds })
}

/// Initialises on the first frame and tracks the rest.
pub fn run_sequence(seq: &Sequence, cfg: &TrackerConfig, seed: u64, radius: f64) -> Result<TrackRun> {
    track_from(init_tracker(seq, cfg, seed)?, seq, cfg, radius)
}
