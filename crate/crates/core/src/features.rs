//! Images, patch cropping and the hand-crafted feature extractor that stands
//! in for a learned backbone: cell-aggregated oriented gradient energy plus
//! mean intensity.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featmap::{FeatureMap, Rect, ScoreMap};

/// Row-major image with interleaved channels (1 or 3), values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!("image dims {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, 1, vec![value; height * width])
    }

    pub fn gray_from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, 1, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize, ch: usize) -> f64 {
        self.data[(r * self.width + c) * self.channels + ch]
    }

    /// Luma conversion (Rec. 601 weights); gray images are cloned.
    pub fn to_gray(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        Image { height: self.height, width: self.width, channels: 1, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Loads an 8-bit gray or RGB image, normalised to [0, 1].
    pub fn load(path: &Path) -> Result<Image> {
        let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
        if img.color().has_color() {
            let rgb = img.to_rgb8();
            let (w, h) = rgb.dimensions();
            let data = rgb.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
            Image::new(h as usize, w as usize, 3, data)
        } else {
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            let data = gray.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
            Image::new(h as usize, w as usize, 1, data)
        }
    }

    /// Writes the image as 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let color = if self.channels == 1 { image::ExtendedColorType::L8 } else { image::ExtendedColorType::Rgb8 };
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width as u32,
            self.height as u32,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
    }
}

/// Square crop geometry: patch pixel `p` (continuous, pixel centers at
/// `p + 0.5`) maps to image coordinate `center + (p - out/2) * side/out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchGeometry {
    pub cx: f64,
    pub cy: f64,
    /// Crop side in image pixels.
    pub side: f64,
    /// Patch side in pixels.
    pub out_size: usize,
}

impl PatchGeometry {
    /// Image pixels per patch pixel.
    pub fn scale(&self) -> f64 {
        self.side / self.out_size as f64
    }

    pub fn patch_to_image(&self, py: f64, px: f64) -> (f64, f64) {
        let half = self.out_size as f64 / 2.0;
        (self.cy + (py - half) * self.scale(), self.cx + (px - half) * self.scale())
    }

    pub fn image_to_patch(&self, y: f64, x: f64) -> (f64, f64) {
        let half = self.out_size as f64 / 2.0;
        ((y - self.cy) / self.scale() + half, (x - self.cx) / self.scale() + half)
    }

    /// Re-expresses a map defined in patch coordinates in image coordinates.
    pub fn map_to_image(&self, map: ScoreMap) -> Result<ScoreMap> {
        let half = self.out_size as f64 / 2.0;
        let s = self.scale();
        let (stride, origin) = (map.stride(), map.origin());
        map.with_geometry(
            (stride.0 * s, stride.1 * s),
            (self.cy + (origin.0 - half) * s, self.cx + (origin.1 - half) * s),
        )
    }
}

/// Side of the context crop around a box: `sqrt((w + p)(h + p))` with
/// `p = amount * (w + h)`.
pub fn context_side(rect: &Rect, amount: f64) -> f64 {
    let p = amount * (rect.w + rect.h);
    ((rect.w + p) * (rect.h + p)).sqrt()
}

/// Crops a square of side `context_scale * sqrt(w * h)` centred on `state`
/// and resamples it to `out_size x out_size`. Area outside the image takes
/// the image mean.
pub fn extract_patch(img: &Image, state: &Rect, context_scale: f64, out_size: usize) -> Result<Image> {
    state.validate()?;
    if !(context_scale > 0.0 && context_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("context scale {context_scale}")));
    }
    if out_size < 32 {
        return Err(Error::InvalidArgument(format!("patch size {out_size} below 32")));
    }
    let geo = PatchGeometry {
        cx: state.cx,
        cy: state.cy,
        side: context_scale * (state.w * state.h).sqrt(),
        out_size,
    };
    Ok(crop(img, &geo))
}

/// Bilinear crop for an explicit geometry. Neighbours outside the image
/// contribute the per-channel image mean.
pub fn crop(img: &Image, geo: &PatchGeometry) -> Image {
    let nch = img.channels;
    let mut mean = vec![0.0; nch];
    for px in img.data.chunks_exact(nch) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    let npx = (img.height * img.width) as f64;
    mean.iter_mut().for_each(|m| *m /= npx);

    let n = geo.out_size;
    let scale = geo.scale();
    let half = n as f64 / 2.0;
    // sample index along an axis (pixel centers at k + 0.5)
    let axis = |center: f64, len: usize| -> Vec<(isize, f64, bool, bool)> {
        (0..n)
            .map(|p| {
                let s = center + (p as f64 + 0.5 - half) * scale - 0.5;
                let f = s.floor();
                let i = f as isize;
                let in0 = i >= 0 && (i as usize) < len;
                let in1 = i + 1 >= 0 && ((i + 1) as usize) < len;
                (i, s - f, in0, in1)
            })
            .collect()
    };
    let ys = axis(geo.cy, img.height);
    let xs = axis(geo.cx, img.width);
    let mut data = vec![0.0; n * n * nch];
    for (py, &(iy, ty, y0ok, y1ok)) in ys.iter().enumerate() {
        for (px, &(ix, tx, x0ok, x1ok)) in xs.iter().enumerate() {
            for ch in 0..nch {
                let fetch = |ok_y: bool, ok_x: bool, r: isize, c: isize| {
                    if ok_y && ok_x {
                        img.data[(r as usize * img.width + c as usize) * nch + ch]
                    } else {
                        mean[ch]
                    }
                };
                let mut v = 0.0;
                let w00 = (1.0 - ty) * (1.0 - tx);
                let w01 = (1.0 - ty) * tx;
                let w10 = ty * (1.0 - tx);
                let w11 = ty * tx;
                if w00 != 0.0 {
                    v += w00 * fetch(y0ok, x0ok, iy, ix);
                }
                if w01 != 0.0 {
                    v += w01 * fetch(y0ok, x1ok, iy, ix + 1);
                }
                if w10 != 0.0 {
                    v += w10 * fetch(y1ok, x0ok, iy + 1, ix);
                }
                if w11 != 0.0 {
                    v += w11 * fetch(y1ok, x1ok, iy + 1, ix + 1);
                }
                data[(py * n + px) * nch + ch] = v.clamp(0.0, 1.0);
            }
        }
    }
    Image { height: n, width: n, channels: nch, data }
}

/// Pads bottom/right by edge replication up to a multiple of `cell`.
pub fn pad_to_multiple(img: &Image, cell: usize) -> Image {
    let cell = cell.max(1);
    let h = img.height.div_ceil(cell) * cell;
    let w = img.width.div_ceil(cell) * cell;
    if h == img.height && w == img.width {
        return img.clone();
    }
    let nch = img.channels;
    let mut data = Vec::with_capacity(h * w * nch);
    for r in 0..h {
        let sr = r.min(img.height - 1);
        for c in 0..w {
            let sc = c.min(img.width - 1);
            let base = (sr * img.width + sc) * nch;
            data.extend_from_slice(&img.data[base..base + nch]);
        }
    }
    Image { height: h, width: w, channels: nch, data }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub cell_size: usize,
    pub num_orientations: usize,
    pub include_intensity: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { cell_size: 8, num_orientations: 8, include_intensity: true }
    }
}

impl FeatureConfig {
    pub fn channels(&self) -> usize {
        self.num_orientations + usize::from(self.include_intensity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cell_size == 0 || self.num_orientations == 0 {
            return Err(Error::InvalidArgument(format!("bad feature config {self:?}")));
        }
        Ok(())
    }
}

/// Oriented gradient energy per cell. Channel `k < num_orientations` collects
/// gradient magnitude whose unsigned orientation is near `k * pi / n`
/// (linear interpolation between neighbouring bins); the optional last
/// channel is the mean intensity.
pub fn extract_features(patch: &Image, cfg: &FeatureConfig) -> Result<FeatureMap> {
    cfg.validate()?;
    let cs = cfg.cell_size;
    if patch.height % cs != 0 || patch.width % cs != 0 {
        return Err(Error::InvalidArgument(format!(
            "patch {}x{} not divisible by cell size {cs}",
            patch.height, patch.width
        )));
    }
    let gray = patch.to_gray();
    let (h, w) = (gray.height, gray.width);
    let (ch_h, ch_w) = (h / cs, w / cs);
    let nbins = cfg.num_orientations;
    let nch = cfg.channels();
    let plane = ch_h * ch_w;
    let mut out = vec![0.0; nch * plane];
    let px = |r: usize, c: usize| gray.data[r * w + c];
    let bin_width = PI / nbins as f64;
    let norm = 1.0 / (cs * cs) as f64;

    for r in 0..h {
        let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
        let cell_r = r / cs;
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let gx = px(r, cr) - px(r, cl);
            let gy = px(rd, c) - px(ru, c);
            let cell = cell_r * ch_w + c / cs;
            if cfg.include_intensity {
                out[nbins * plane + cell] += px(r, c) * norm;
            }
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(PI);
            let pos = theta / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let b0 = (lo as usize) % nbins;
            let b1 = (b0 + 1) % nbins;
            out[b0 * plane + cell] += mag * (1.0 - frac) * norm;
            out[b1 * plane + cell] += mag * frac * norm;
        }
    }
    FeatureMap::new(nch, ch_h, ch_w, out, cs as f64)
}

/// An augmented copy of a patch and the translation (rows, cols) applied to
/// its content.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPatch {
    pub image: Image,
    pub shift: (f64, f64),
}

const MAX_SHIFT: f64 = 8.0;
const MAX_ROTATION_DEG: f64 = 15.0;

/// Deterministic first-frame augmentation. Element 0 is the unmodified
/// patch; the rest cycle through translation, rotation and blur.
pub fn augment_initial(patch: &Image, count: usize, seed: u64) -> Result<Vec<AugmentedPatch>> {
    if count == 0 {
        return Err(Error::InvalidArgument("augmentation count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    out.push(AugmentedPatch { image: patch.clone(), shift: (0.0, 0.0) });
    for i in 1..count {
        let aug = match i % 3 {
            1 => {
                let dy = rng.random_range(-MAX_SHIFT..=MAX_SHIFT).round();
                let dx = rng.random_range(-MAX_SHIFT..=MAX_SHIFT).round();
                AugmentedPatch { image: warp_affine(patch, 0.0, (dy, dx)), shift: (dy, dx) }
            }
            2 => {
                let deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
                AugmentedPatch { image: warp_affine(patch, deg.to_radians(), (0.0, 0.0)), shift: (0.0, 0.0) }
            }
            _ => {
                let passes = rng.random_range(1..=3);
                let mut img = patch.clone();
                for _ in 0..passes {
                    img = binomial_blur(&img);
                }
                AugmentedPatch { image: img, shift: (0.0, 0.0) }
            }
        };
        out.push(aug);
    }
    Ok(out)
}

/// Rotation about the patch center followed by a translation; bilinear with
/// edge clamping.
fn warp_affine(img: &Image, angle: f64, shift: (f64, f64)) -> Image {
    let (h, w, nch) = (img.height, img.width, img.channels);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut data = vec![0.0; h * w * nch];
    let sample = |y: f64, x: f64, ch: usize| {
        let y = y.clamp(0.0, (h - 1) as f64);
        let x = x.clamp(0.0, (w - 1) as f64);
        let (y0, x0) = (y.floor() as usize, x.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
        let (ty, tx) = (y - y0 as f64, x - x0 as f64);
        let at = |r: usize, c: usize| img.data[(r * w + c) * nch + ch];
        (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x1)) + ty * ((1.0 - tx) * at(y1, x0) + tx * at(y1, x1))
    };
    for r in 0..h {
        for c in 0..w {
            // inverse map: undo the shift, then the rotation
            let (py, px) = (r as f64 + 0.5 - shift.0 - cy, c as f64 + 0.5 - shift.1 - cx);
            let sy = cos * py - sin * px + cy - 0.5;
            let sx = sin * py + cos * px + cx - 0.5;
            for ch in 0..nch {
                data[(r * w + c) * nch + ch] = sample(sy, sx, ch).clamp(0.0, 1.0);
            }
        }
    }
    Image { height: h, width: w, channels: nch, data }
}

/// Separable [1 2 1] / 4 blur with edge clamping.
fn binomial_blur(img: &Image) -> Image {
    let (h, w, nch) = (img.height, img.width, img.channels);
    let at = |d: &[f64], r: usize, c: usize, ch: usize| d[(r * w + c) * nch + ch];
    let mut tmp = vec![0.0; h * w * nch];
    for r in 0..h {
        for c in 0..w {
            let (cl, cr) = (c.saturating_sub(1), (c + 1).min(w - 1));
            for ch in 0..nch {
                tmp[(r * w + c) * nch + ch] =
                    0.25 * at(&img.data, r, cl, ch) + 0.5 * at(&img.data, r, c, ch) + 0.25 * at(&img.data, r, cr, ch);
            }
        }
    }
    let mut data = vec![0.0; h * w * nch];
    for r in 0..h {
        let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            for ch in 0..nch {
                data[(r * w + c) * nch + ch] =
                    0.25 * at(&tmp, ru, c, ch) + 0.5 * at(&tmp, r, c, ch) + 0.25 * at(&tmp, rd, c, ch);
            }
        }
    }
    Image { height: h, width: w, channels: nch, data }
}
