//! The tracking loop: online classifier and template matcher run on the same
//! search region, their scores are fused, and the classifier memory and
//! short-term template are refreshed from confident frames.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{
    apply_filter, embed, finetune_init, score_geometry, ClassifierParams, TrainingSample, DEFAULT_FINETUNE_LR,
    DEFAULT_FINETUNE_STEPS,
};
use crate::error::{Error, Result};
use crate::featmap::{
    blend_window, gaussian_label, penalty_window, resample_cubic, FeatureMap, Rect, ScoreMap, WindowKind,
};
use crate::features::{augment_initial, crop, extract_features, pad_to_multiple, FeatureConfig, Image, PatchGeometry};
use crate::matcher::{
    match_cls, match_reg_fc, patch_features, search_geometry, select_template, ScalePyramid, ScaledTemplate,
    TemplateBank, TemplateKind,
};
use crate::optimizer::{update_filter, SampleMemory, DEFAULT_CAPACITY};

pub const INITIAL_SAMPLES: usize = 30;
pub const INIT_GN_STEPS: usize = 6;
pub const INIT_CG_ITERS: usize = 10;
pub const UPDATE_GN_STEPS: usize = 1;
pub const UPDATE_CG_ITERS: usize = 5;
/// Label width relative to the target's geometric mean side.
pub const LABEL_SIGMA_FACTOR: f64 = 0.25;
/// Smallest box side the tracker will report, in pixels.
const MIN_SIDE: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrackerConfig {
    pub lambda_fusion: f64,
    pub update_interval: usize,
    pub template_interval: usize,
    pub tau_c: f64,
    pub ur: f64,
    pub uc: f64,
    pub memory_rate: f64,
    pub add_threshold: f64,
    pub absence_threshold: f64,
    pub distractor_ratio: f64,
    pub window_strength: f64,
    /// Refresh the short-term template every `template_interval` frames.
    pub template_update: bool,
    /// Use the channel and spatial gates in the classifier.
    pub attention: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            lambda_fusion: 0.8,
            update_interval: 10,
            template_interval: 5,
            tau_c: 0.75,
            ur: 0.6,
            uc: 0.5,
            memory_rate: 0.01,
            add_threshold: 0.25,
            absence_threshold: 0.25,
            distractor_ratio: 0.5,
            window_strength: 0.4,
            template_update: true,
            attention: true,
        }
    }
}

impl TrackerConfig {
    pub const KEYS: [&'static str; 13] = [
        "lambda_fusion",
        "update_interval",
        "template_interval",
        "tau_c",
        "ur",
        "uc",
        "memory_rate",
        "add_threshold",
        "absence_threshold",
        "distractor_ratio",
        "window_strength",
        "template_update",
        "attention",
    ];

    pub fn validate(&self) -> Result<()> {
        let unit = [
            ("lambda_fusion", self.lambda_fusion),
            ("tau_c", self.tau_c),
            ("ur", self.ur),
            ("uc", self.uc),
            ("add_threshold", self.add_threshold),
            ("absence_threshold", self.absence_threshold),
            ("distractor_ratio", self.distractor_ratio),
            ("window_strength", self.window_strength),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config { line: 0, message: format!("{name}={v} outside [0, 1]") });
            }
        }
        // doubled on distractor frames, so it must stay below 1/2
        if !(self.memory_rate > 0.0 && self.memory_rate < 0.5) {
            return Err(Error::Config { line: 0, message: format!("memory_rate={} outside (0, 0.5)", self.memory_rate) });
        }
        if self.update_interval == 0 || self.template_interval == 0 {
            return Err(Error::Config { line: 0, message: "intervals must be at least 1".into() });
        }
        Ok(())
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config { line: 0, message: format!("invalid value {value:?} for {key}") })
        }
        match key {
            "lambda_fusion" => self.lambda_fusion = num(key, value)?,
            "update_interval" => self.update_interval = num(key, value)?,
            "template_interval" => self.template_interval = num(key, value)?,
            "tau_c" => self.tau_c = num(key, value)?,
            "ur" => self.ur = num(key, value)?,
            "uc" => self.uc = num(key, value)?,
            "memory_rate" => self.memory_rate = num(key, value)?,
            "add_threshold" => self.add_threshold = num(key, value)?,
            "absence_threshold" => self.absence_threshold = num(key, value)?,
            "distractor_ratio" => self.distractor_ratio = num(key, value)?,
            "window_strength" => self.window_strength = num(key, value)?,
            "template_update" => self.template_update = num(key, value)?,
            "attention" => self.attention = num(key, value)?,
            _ => return Err(Error::UnknownConfigKey(key.to_string())),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config { line: line_no, message: format!("expected key=value, got {line:?}") });
            };
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config { message, .. } => Error::Config { line: line_no, message },
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }
}

impl fmt::Display for TrackerConfig {
    /// The same `key=value` form that [`TrackerConfig::parse`] reads.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lambda_fusion={}", self.lambda_fusion)?;
        writeln!(f, "update_interval={}", self.update_interval)?;
        writeln!(f, "template_interval={}", self.template_interval)?;
        writeln!(f, "tau_c={}", self.tau_c)?;
        writeln!(f, "ur={}", self.ur)?;
        writeln!(f, "uc={}", self.uc)?;
        writeln!(f, "memory_rate={}", self.memory_rate)?;
        writeln!(f, "add_threshold={}", self.add_threshold)?;
        writeln!(f, "absence_threshold={}", self.absence_threshold)?;
        writeln!(f, "distractor_ratio={}", self.distractor_ratio)?;
        writeln!(f, "window_strength={}", self.window_strength)?;
        writeln!(f, "template_update={}", self.template_update)?;
        writeln!(f, "attention={}", self.attention)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetState {
    pub rect: Rect,
    /// Classifier confidence in [0, 1].
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flags {
    pub distractor_present: bool,
    pub target_absent: bool,
}

/// Result of scanning a response map for its peaks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakReport {
    pub peak: (usize, usize),
    pub max: f64,
    /// Strongest local maximum outside the exclusion disc, if any.
    pub second: Option<((usize, usize), f64)>,
    pub flags: Flags,
}

/// Finds the global maximum and flags absence (maximum below the absence
/// threshold) and distractors (another local maximum of at least
/// `distractor_ratio` times the global one outside a disc of radius
/// `max(3, target_cells / 2)` cells).
pub fn detect_peaks(map: &ScoreMap, cfg: &TrackerConfig, target_cells: f64) -> PeakReport {
    let (h, w) = (map.height(), map.width());
    let peak = map.argmax();
    let max = map.at(peak.0, peak.1);
    let radius = (0.5 * target_cells).max(3.0);
    let mut second: Option<((usize, usize), f64)> = None;
    for r in 0..h {
        for c in 0..w {
            let v = map.at(r, c);
            let dr = r as f64 - peak.0 as f64;
            let dc = c as f64 - peak.1 as f64;
            if (dr * dr + dc * dc).sqrt() <= radius {
                continue;
            }
            if second.is_some_and(|(_, s)| s >= v) {
                continue;
            }
            let is_local_max = (r.saturating_sub(1)..(r + 2).min(h))
                .all(|rr| (c.saturating_sub(1)..(c + 2).min(w)).all(|cc| map.at(rr, cc) <= v));
            if is_local_max {
                second = Some(((r, c), v));
            }
        }
    }
    let target_absent = max < cfg.absence_threshold;
    let distractor_present =
        max > 0.0 && second.is_some_and(|(_, v)| v >= cfg.distractor_ratio * max);
    PeakReport { peak, max, second, flags: Flags { distractor_present, target_absent } }
}

/// `lambda * online + (1 - lambda) * siamese` on the siamese grid. Each map
/// is min-max normalised unless constant, and the online map is resampled
/// (Catmull-Rom) at the siamese cells' image positions.
pub fn fuse_scores(online: &ScoreMap, siamese: &ScoreMap, lambda: f64) -> Result<ScoreMap> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("fusion weight {lambda} outside [0, 1]")));
    }
    let s = siamese.normalized();
    let o = resample_cubic(&online.normalized(), s.height(), s.width(), s.stride(), s.origin())?;
    let data = o.data().iter().zip(s.data()).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
    ScoreMap::new(s.height(), s.width(), data, s.stride(), s.origin())
}

/// A frame remembered as a short-term template candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub frame_index: usize,
    pub score: f64,
    pub rect: Rect,
    pub frame: Arc<Image>,
}

/// Index of the highest-scoring entry above `tau_c`; the earliest wins ties.
pub fn best_candidate(scores: &[f64], tau_c: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s > tau_c && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// What happened on one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub frame_index: usize,
    pub state: TargetState,
    pub flags: Flags,
    pub template: TemplateKind,
    pub sample_added: bool,
    pub filter_updated: bool,
    pub template_refreshed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub frame_index: usize,
    pub state: TargetState,
    pub bank: TemplateBank,
    pub memory: SampleMemory,
    pub params: ClassifierParams,
    pub interval_buffer: Vec<BufferEntry>,
    pub flags: Flags,
    features: FeatureConfig,
    pyramid: ScalePyramid,
    frame_dims: (usize, usize),
}

/// Label for a search patch whose target sits at patch point `center`.
fn patch_label(
    feat_h: usize,
    feat_w: usize,
    stride: f64,
    params: &ClassifierParams,
    center: (f64, f64),
    target: (f64, f64),
) -> Result<ScoreMap> {
    let (st, origin) = score_geometry(feat_h, feat_w, stride, params);
    let probe = ScoreMap::filled(1, 1, 0.0)?.with_geometry(st, origin)?;
    let cell = probe.image_to_cell(center.0, center.1);
    let sigma = LABEL_SIGMA_FACTOR * (target.0 * target.1).sqrt() / stride;
    Ok(gaussian_label(feat_h, feat_w, cell, sigma)?.with_geometry(st, origin)?)
}

fn clamp_rect(rect: Rect, dims: (usize, usize)) -> Result<Rect> {
    let (h, w) = (dims.0 as f64, dims.1 as f64);
    Rect::new(
        rect.cx.clamp(0.0, w),
        rect.cy.clamp(0.0, h),
        rect.w.clamp(MIN_SIDE, w.max(MIN_SIDE)),
        rect.h.clamp(MIN_SIDE, h.max(MIN_SIDE)),
    )
}

impl TrackerState {
    /// Builds the long-term template, fits the classifier on augmented
    /// copies of the first search region and solves the first filter.
    pub fn init(first: &Image, s1: Rect, cfg: &TrackerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        s1.validate()?;
        let dims = (first.height(), first.width());
        if !(s1.cx >= 0.0 && s1.cx <= dims.1 as f64 && s1.cy >= 0.0 && s1.cy <= dims.0 as f64) {
            return Err(Error::InvalidArgument(format!("initial box center ({}, {}) outside the image", s1.cx, s1.cy)));
        }
        let features = FeatureConfig::default();
        let pyramid = ScalePyramid::default();
        let bank = TemplateBank::new(ScaledTemplate::from_frame(first, &s1, &pyramid, &features)?, 0.0);

        let geo = search_geometry(&s1);
        let patch = crop(first, &geo);
        let center = geo.image_to_patch(s1.cy, s1.cx);
        let target = (s1.h / geo.scale(), s1.w / geo.scale());
        let mut params = ClassifierParams::new(features.channels(), seed)?;
        params.attention = cfg.attention;
        let mut samples = Vec::with_capacity(INITIAL_SAMPLES);
        for aug in augment_initial(&patch, INITIAL_SAMPLES, seed)? {
            let feat = extract_features(&pad_to_multiple(&aug.image, features.cell_size), &features)?;
            let c = (center.0 + aug.shift.0, center.1 + aug.shift.1);
            let label = patch_label(feat.height(), feat.width(), feat.stride(), &params, c, target)?;
            samples.push(TrainingSample { feat, label, weight: 1.0 / INITIAL_SAMPLES as f64 });
        }

        let seed_memory = |params: &ClassifierParams| -> Result<SampleMemory> {
            let embedded = samples
                .iter()
                .map(|s| Ok((embed(&s.feat, params)?.0, s.label.clone())))
                .collect::<Result<Vec<_>>>()?;
            SampleMemory::with_initial(DEFAULT_CAPACITY, embedded, 0)
        };
        // a filter fitted to the random embedding gives the fine-tuning a
        // useful starting point for the other blocks
        params = update_filter(&seed_memory(&params)?, &params, INIT_GN_STEPS, INIT_CG_ITERS)?;
        params = finetune_init(&samples, &params, DEFAULT_FINETUNE_STEPS, DEFAULT_FINETUNE_LR)?;
        let memory = seed_memory(&params)?;
        params = update_filter(&memory, &params, INIT_GN_STEPS, INIT_CG_ITERS)?;

        Ok(Self {
            frame_index: 0,
            state: TargetState { rect: s1, confidence: 1.0 },
            bank,
            memory,
            params,
            interval_buffer: Vec::new(),
            flags: Flags::default(),
            features,
            pyramid,
            frame_dims: dims,
        })
    }

    pub fn feature_config(&self) -> &FeatureConfig {
        &self.features
    }

    /// Online classifier score for a search region, in image coordinates,
    /// together with the embedded features it was computed from.
    pub fn online_score(&self, search: &FeatureMap, geo: &PatchGeometry) -> Result<(ScoreMap, FeatureMap)> {
        let (zs, _) = embed(search, &self.params)?;
        let score = apply_filter(&zs, &self.params)?;
        Ok((geo.map_to_image(score)?, zs))
    }

    /// Tracks the target into `frame`.
    pub fn step(&mut self, frame: &Image, cfg: &TrackerConfig) -> Result<FrameOutput> {
        if (frame.height(), frame.width()) != self.frame_dims {
            return Err(Error::ShapeMismatch(format!(
                "frame is {}x{}, sequence is {}x{}",
                frame.height(),
                frame.width(),
                self.frame_dims.0,
                self.frame_dims.1
            )));
        }
        let t = self.frame_index + 1;
        let prev = self.state.rect;
        let geo = search_geometry(&prev);
        let search = patch_features(frame, &geo, &self.features)?;

        let (online, embedded) = self.online_score(&search, &geo)?;

        let long = match_reg_fc(&search, &self.bank, TemplateKind::Long, &self.pyramid, &prev, &geo)?;
        let (which, reg) = match self.bank.short() {
            Some(_) if cfg.template_update => {
                let short = match_reg_fc(&search, &self.bank, TemplateKind::Short, &self.pyramid, &prev, &geo)?;
                match select_template(&self.bank, &short.rect, &long.rect, short.score, long.score, cfg.ur, cfg.uc) {
                    TemplateKind::Short => (TemplateKind::Short, short),
                    TemplateKind::Long => (TemplateKind::Long, long),
                }
            }
            _ => (TemplateKind::Long, long),
        };
        let siamese = geo.map_to_image(match_cls(&search, &self.bank, which)?)?;

        let fused = fuse_scores(&online, &siamese, cfg.lambda_fusion)?;
        let window = penalty_window(fused.height(), fused.width(), WindowKind::Gaussian)?;
        let fused = blend_window(&fused, &window, cfg.window_strength)?;

        let target_cells = (prev.w * prev.h).sqrt() / online.stride().0;
        let peaks = detect_peaks(&online, cfg, target_cells);
        let confidence = peaks.max.clamp(0.0, 1.0);

        let rect = if peaks.flags.target_absent {
            prev
        } else {
            let (r, c) = fused.argmax();
            let (fr, fc) = fused.refine_peak(r, c);
            let (cy, cx) = fused.cell_to_image(fr, fc);
            clamp_rect(Rect::new(cx, cy, reg.rect.w, reg.rect.h)?, self.frame_dims)?
        };

        let mut sample_added = false;
        let mut filter_updated = false;
        if confidence >= cfg.add_threshold && !peaks.flags.target_absent {
            let rate = if peaks.flags.distractor_present { 2.0 * cfg.memory_rate } else { cfg.memory_rate };
            let center = geo.image_to_patch(rect.cy, rect.cx);
            let target = (rect.h / geo.scale(), rect.w / geo.scale());
            let label = patch_label(embedded.height(), embedded.width(), embedded.stride(), &self.params, center, target)?;
            self.memory.add_sample(embedded, label, rate, t)?;
            sample_added = true;
            if t % cfg.update_interval == 0 {
                self.params = update_filter(&self.memory, &self.params, UPDATE_GN_STEPS, UPDATE_CG_ITERS)?;
                filter_updated = true;
            }
        }

        self.frame_index = t;
        self.state = TargetState { rect, confidence };
        self.flags = peaks.flags;
        if cfg.template_update {
            self.interval_buffer.push(BufferEntry { frame_index: t, score: confidence, rect, frame: Arc::new(frame.clone()) });
        }
        let mut template_refreshed = false;
        if t % cfg.template_interval == 0 {
            template_refreshed = self.propose_short_term(cfg)?;
        }
        Ok(FrameOutput {
            frame_index: t,
            state: self.state,
            flags: self.flags,
            template: which,
            sample_added,
            filter_updated,
            template_refreshed,
        })
    }

    /// Replaces the short-term template with the best buffered frame whose
    /// score exceeds `tau_c`, then clears the buffer. Returns whether the
    /// template changed.
    pub fn propose_short_term(&mut self, cfg: &TrackerConfig) -> Result<bool> {
        let scores: Vec<f64> = self.interval_buffer.iter().map(|e| e.score).collect();
        let chosen = best_candidate(&scores, cfg.tau_c);
        let mut changed = false;
        if let (Some(i), true) = (chosen, cfg.template_update) {
            let entry = &self.interval_buffer[i];
            let zs = ScaledTemplate::from_frame(&entry.frame, &entry.rect, &self.pyramid, &self.features)?;
            self.bank.set_short(zs, entry.frame_index)?;
            changed = true;
        }
        self.interval_buffer.clear();
        Ok(changed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(h: usize, w: usize, centers: &[(f64, f64)], sigma: f64) -> ScoreMap {
        ScoreMap::from_fn(h, w, |r, c| {
            centers
                .iter()
                .map(|&(cr, cc)| {
                    let d = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                    (-d / (2.0 * sigma * sigma)).exp()
                })
                .fold(0.0, f64::max)
        })
        .unwrap()
    }

    #[test]
    fn config_defaults_and_parsing() {
        let cfg = TrackerConfig::default();
        assert_eq!(cfg.lambda_fusion, 0.8);
        assert_eq!((cfg.update_interval, cfg.template_interval), (10, 5));
        assert_eq!((cfg.tau_c, cfg.ur, cfg.uc), (0.75, 0.6, 0.5));
        let round = TrackerConfig::parse(&cfg.to_string()).unwrap();
        assert_eq!(round, cfg);
        let parsed = TrackerConfig::parse("# comment\n\nlambda_fusion = 0.6\ntemplate_update=false\n").unwrap();
        assert_eq!(parsed.lambda_fusion, 0.6);
        assert!(!parsed.template_update);
        match TrackerConfig::parse("tau_c=0.7\nbogus=1\n") {
            Err(Error::UnknownConfigKey(k)) => assert_eq!(k, "bogus"),
            other => panic!("{other:?}"),
        }
        match TrackerConfig::parse("tau_c=0.7\nuc=abc\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(TrackerConfig::parse("lambda_fusion=1.5").is_err());
        assert!(TrackerConfig::parse("update_interval=0").is_err());
        assert!(TrackerConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn fusion_endpoints_and_constant_maps() {
        let online = bump(8, 8, &[(3.0, 4.0)], 1.5).with_geometry((2.0, 2.0), (0.0, 0.0)).unwrap();
        let siamese = bump(8, 8, &[(5.0, 2.0)], 1.0).map_values(|v| 3.0 * v - 1.0).unwrap()
            .with_geometry((2.0, 2.0), (0.0, 0.0))
            .unwrap();
        let f0 = fuse_scores(&online, &siamese, 0.0).unwrap();
        assert_eq!(f0.data(), siamese.normalized().data());
        let f1 = fuse_scores(&online, &siamese, 1.0).unwrap();
        let expect = online.normalized();
        for (a, b) in f1.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(f0.argmax(), siamese.argmax());
        assert_eq!(f1.argmax(), online.argmax());

        let one = ScoreMap::filled(5, 5, 1.0).unwrap();
        let half = ScoreMap::filled(5, 5, 0.5).unwrap();
        let f = fuse_scores(&one, &half, 0.8).unwrap();
        assert!(f.data().iter().all(|&v| (v - 0.9).abs() < 1e-12));
        assert!(fuse_scores(&one, &half, 1.2).is_err());
    }

    #[test]
    fn peak_flags() {
        let cfg = TrackerConfig::default();
        let single = bump(25, 25, &[(12.0, 12.0)], 2.0);
        assert_eq!(detect_peaks(&single, &cfg, 6.0).flags, Flags::default());

        let two = bump(25, 25, &[(12.0, 6.0), (12.0, 16.0)], 2.0);
        let report = detect_peaks(&two, &cfg, 6.0);
        assert!(report.flags.distractor_present);
        assert!(!report.flags.target_absent);
        assert_eq!(report.peak, (12, 6));
        assert_eq!(report.second.unwrap().0, (12, 16));

        let low = ScoreMap::filled(10, 10, 0.1).unwrap();
        let report = detect_peaks(&low, &cfg, 6.0);
        assert!(report.flags.target_absent);

        // a weak second bump stays below the ratio
        let weak = ScoreMap::from_fn(25, 25, |r, c| {
            let a = bump(25, 25, &[(12.0, 6.0)], 2.0).at(r, c);
            let b = 0.3 * bump(25, 25, &[(12.0, 18.0)], 2.0).at(r, c);
            a.max(b)
        })
        .unwrap();
        assert!(!detect_peaks(&weak, &cfg, 6.0).flags.distractor_present);
        // a bump inside the exclusion disc is not a distractor
        let near = bump(25, 25, &[(12.0, 10.0), (12.0, 13.0)], 0.8);
        assert!(!detect_peaks(&near, &cfg, 6.0).flags.distractor_present);
    }

    #[test]
    fn short_term_candidate_selection() {
        assert_eq!(best_candidate(&[0.8, 0.6, 0.9, 0.7, 0.76], 0.75), Some(2));
        assert_eq!(best_candidate(&[0.5, 0.75, 0.7], 0.75), None);
        assert_eq!(best_candidate(&[0.1, 0.8, 0.2], 0.75), Some(1));
        assert_eq!(best_candidate(&[0.9, 0.9], 0.75), Some(0));
        assert_eq!(best_candidate(&[], 0.75), None);
    }

    #[test]
    fn label_peaks_at_target_cell() {
        let params = ClassifierParams::new(9, 0).unwrap();
        // patch point 132 maps to cell (132 - 4) / 8 - 0.5 = 15.5
        let label = patch_label(32, 32, 8.0, &params, (132.0, 132.0), (64.0, 64.0)).unwrap();
        assert!((label.at(15, 15) - label.at(16, 16)).abs() < 1e-12);
        let (y, x) = label.cell_to_image(15.5, 15.5);
        assert_eq!((y, x), (132.0, 132.0));
    }
}
