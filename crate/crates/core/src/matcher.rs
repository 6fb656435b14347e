//! Template matching: classification correlation with bias, scale search
//! over three resized templates, and the long/short template switch.

use crate::error::{Error, Result};
use crate::featmap::{iou, xcorr2d, CorrMode, FeatureMap, Rect, ScoreMap};
use crate::features::{context_side, crop, extract_features, pad_to_multiple, FeatureConfig, Image, PatchGeometry};

pub const TEMPLATE_SIZE: usize = 127;
pub const SEARCH_SIZE: usize = 255;
/// Context added around the box, as a fraction of `w + h`.
pub const CONTEXT_AMOUNT: f64 = 0.5;
pub const SCALE_STEP: f64 = 1.0375;
pub const SCALE_PENALTY: f64 = 0.97;
/// Weight of the winning scale factor in the size update.
pub const SCALE_DAMPING: f64 = 0.6;

/// Crop geometry of the template around `rect`.
pub fn template_geometry(rect: &Rect) -> PatchGeometry {
    PatchGeometry { cx: rect.cx, cy: rect.cy, side: context_side(rect, CONTEXT_AMOUNT), out_size: TEMPLATE_SIZE }
}

/// Crop geometry of the search region around `rect`, at the template's pixel
/// scale.
pub fn search_geometry(rect: &Rect) -> PatchGeometry {
    let side = context_side(rect, CONTEXT_AMOUNT) * SEARCH_SIZE as f64 / TEMPLATE_SIZE as f64;
    PatchGeometry { cx: rect.cx, cy: rect.cy, side, out_size: SEARCH_SIZE }
}

/// Features of a crop, padded up to a whole number of cells.
pub fn patch_features(img: &Image, geo: &PatchGeometry, cfg: &FeatureConfig) -> Result<FeatureMap> {
    let patch = pad_to_multiple(&crop(img, geo), cfg.cell_size);
    extract_features(&patch, cfg)
}

fn centered(raw: &FeatureMap) -> Vec<f64> {
    let plane = raw.plane_len() as f64;
    let mut data = raw.data().to_vec();
    for chunk in data.chunks_exact_mut(raw.plane_len()) {
        let mean = chunk.iter().sum::<f64>() / plane;
        chunk.iter_mut().for_each(|v| *v -= mean);
    }
    data
}

fn scaled(raw: &FeatureMap, data: Vec<f64>, gain: f64) -> Result<FeatureMap> {
    let data = data.into_iter().map(|v| v * gain).collect();
    FeatureMap::new(raw.channels(), raw.height(), raw.width(), data, raw.stride())
}

/// Inverse energy of the centered template, 0 for a textureless one.
fn template_gain(centered: &[f64]) -> f64 {
    let energy: f64 = centered.iter().map(|v| v * v).sum();
    if energy > 1e-12 {
        1.0 / energy
    } else {
        0.0
    }
}

/// Per-channel centering, scaled so the template's response to the features
/// it was cut from is exactly 1. A textureless template becomes all zeros.
pub fn normalize_template(raw: &FeatureMap) -> Result<FeatureMap> {
    let data = centered(raw);
    let gain = template_gain(&data);
    scaled(raw, data, gain)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalePyramid {
    factors: [f64; 3],
}

impl Default for ScalePyramid {
    fn default() -> Self {
        Self { factors: [1.0 / SCALE_STEP, 1.0, SCALE_STEP] }
    }
}

impl ScalePyramid {
    pub fn new(factors: [f64; 3]) -> Result<Self> {
        let ok = factors.iter().all(|f| f.is_finite() && *f > 0.0)
            && factors[0] < factors[1]
            && factors[1] < factors[2]
            && factors[1] == 1.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("scale factors {factors:?} must be sorted around 1")));
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> [f64; 3] {
        self.factors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    Long,
    Short,
}

/// A template at the three pyramid scales; index 1 is the unscaled one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledTemplate {
    pub scales: [FeatureMap; 3],
}

impl ScaledTemplate {
    /// Cuts the template for `rect` from `img`. The template for factor `f`
    /// covers `1/f` of the context so the target appears `f` times larger.
    /// All scales share the unscaled template's normalisation.
    pub fn from_frame(img: &Image, rect: &Rect, pyr: &ScalePyramid, cfg: &FeatureConfig) -> Result<Self> {
        rect.validate()?;
        let base = template_geometry(rect);
        let raw = pyr
            .factors()
            .iter()
            .map(|f| patch_features(img, &PatchGeometry { side: base.side / f, ..base }, cfg))
            .collect::<Result<Vec<_>>>()?;
        let centered: Vec<Vec<f64>> = raw.iter().map(centered).collect();
        // one gain for all scales keeps their responses comparable
        let gain = template_gain(&centered[1]);
        let mut out = Vec::with_capacity(3);
        for (r, c) in raw.iter().zip(centered) {
            out.push(scaled(r, c, gain)?);
        }
        let scales: [FeatureMap; 3] = out.try_into().expect("three scales");
        Ok(Self { scales })
    }

    pub fn unscaled(&self) -> &FeatureMap {
        &self.scales[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    z1: ScaledTemplate,
    zs: Option<ScaledTemplate>,
    /// Frame the short-term template was cut from.
    pub zs_frame: Option<usize>,
    pub bias: f64,
}

impl TemplateBank {
    pub fn new(z1: ScaledTemplate, bias: f64) -> Self {
        Self { z1, zs: None, zs_frame: None, bias }
    }

    pub fn long(&self) -> &ScaledTemplate {
        &self.z1
    }

    pub fn short(&self) -> Option<&ScaledTemplate> {
        self.zs.as_ref()
    }

    pub fn get(&self, which: TemplateKind) -> Result<&ScaledTemplate> {
        match which {
            TemplateKind::Long => Ok(&self.z1),
            TemplateKind::Short => self.zs.as_ref().ok_or(Error::MissingShortTemplate),
        }
    }

    /// Installs a short-term template; it must match the long one's shape.
    pub fn set_short(&mut self, zs: ScaledTemplate, frame: usize) -> Result<()> {
        for (a, b) in zs.scales.iter().zip(&self.z1.scales) {
            if !a.same_shape(b) {
                return Err(Error::ShapeMismatch("short-term template differs from long-term shape".into()));
            }
        }
        self.zs = Some(zs);
        self.zs_frame = Some(frame);
        Ok(())
    }
}

fn correlate(search: &FeatureMap, template: &FeatureMap, bias: f64) -> Result<ScoreMap> {
    let map = xcorr2d(search, template, CorrMode::Valid)?;
    if bias == 0.0 {
        Ok(map)
    } else {
        map.map_values(|v| v + bias)
    }
}

/// `search * z + b` over all valid positions, in search-patch coordinates.
pub fn match_cls(search: &FeatureMap, bank: &TemplateBank, which: TemplateKind) -> Result<ScoreMap> {
    correlate(search, bank.get(which)?.unscaled(), bank.bias)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleMatch {
    pub rect: Rect,
    /// Raw response at the winning position.
    pub score: f64,
    /// Index into the pyramid of the winning template.
    pub scale_index: usize,
    /// Winning cell of the response map.
    pub cell: (usize, usize),
}

/// Correlates all three scaled templates and picks the best penalised
/// response. Ties go to the smallest row, then column, then the factor
/// closest to 1. The result is `prev` moved to the refined peak and resized
/// by the damped winning factor.
pub fn match_reg_fc(
    search: &FeatureMap,
    bank: &TemplateBank,
    which: TemplateKind,
    pyr: &ScalePyramid,
    prev: &Rect,
    geo: &PatchGeometry,
) -> Result<ScaleMatch> {
    prev.validate()?;
    let template = bank.get(which)?;
    let factors = pyr.factors();
    let maps = template
        .scales
        .iter()
        .map(|t| correlate(search, t, bank.bias))
        .collect::<Result<Vec<_>>>()?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (factors[a] - 1.0).abs().total_cmp(&(factors[b] - 1.0).abs()));
    let (h, w) = (maps[1].height(), maps[1].width());
    let mut best = (f64::NEG_INFINITY, 1usize, 0usize, 0usize);
    for r in 0..h {
        for c in 0..w {
            for &s in &order {
                let raw = maps[s].at(r, c);
                let penalized = if s == 1 { raw } else { raw * SCALE_PENALTY };
                if penalized > best.0 {
                    best = (penalized, s, r, c);
                }
            }
        }
    }
    let (_, s, r, c) = best;
    let map = geo.map_to_image(maps[s].clone())?;
    let (fr, fc) = map.refine_peak(r, c);
    let (cy, cx) = map.cell_to_image(fr, fc);
    let gain = SCALE_DAMPING * factors[s] + (1.0 - SCALE_DAMPING);
    Ok(ScaleMatch {
        rect: Rect::new(cx, cy, prev.w * gain, prev.h * gain)?,
        score: maps[s].at(r, c),
        scale_index: s,
        cell: (r, c),
    })
}

/// Chooses the short-term template only when its box agrees with the
/// long-term box (`iou >= ur`) and its score is better by at least `uc`.
pub fn select_template(
    bank: &TemplateBank,
    candidate_box_s: &Rect,
    candidate_box_1: &Rect,
    score_s: f64,
    score_1: f64,
    ur: f64,
    uc: f64,
) -> TemplateKind {
    if bank.short().is_none() {
        return TemplateKind::Long;
    }
    if iou(candidate_box_s, candidate_box_1) >= ur && score_s - score_1 >= uc {
        TemplateKind::Short
    } else {
        TemplateKind::Long
    }
}
