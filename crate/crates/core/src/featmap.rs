//! Dense feature maps, response maps and the correlation / resampling
//! primitives shared by the rest of the tracker.
//!
//! Coordinates: a map cell `(r, c)` represents the image point
//! `origin + (r + 0.5, c + 0.5) * stride`. Feature maps produced from a
//! patch use the patch's pixel frame with origin `(0, 0)`.

use crate::error::{Error, Result};

/// Multi-channel real-valued tensor in channel-major (`C x H x W`) order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    stride: f64,
}

impl FeatureMap {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        stride: f64,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if !(stride > 0.0 && stride.is_finite()) {
            return Err(Error::InvalidArgument(format!("stride must be positive, got {stride}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(Self { channels, height, width, data, stride })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, stride: f64) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width], stride)
    }

    /// Builds a map from a closure over `(channel, row, col)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for ch in 0..channels {
            for r in 0..height {
                for c in 0..width {
                    data.push(f(ch, r, c));
                }
            }
        }
        Self::new(channels, height, width, data, stride)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, ch: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[ch * n..(ch + 1) * n]
    }

    #[inline]
    pub fn at(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.height + r) * self.width + c]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// `a * self + b * other`, elementwise.
    pub fn lincomb(&self, a: f64, other: &FeatureMap, b: f64) -> Result<FeatureMap> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch("lincomb of differently shaped maps".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| a * x + b * y).collect();
        FeatureMap::new(self.channels, self.height, self.width, data, self.stride)
    }

    /// Single-channel view of plane `ch` as a score map in this map's frame.
    pub fn plane_as_score(&self, ch: usize) -> ScoreMap {
        ScoreMap {
            height: self.height,
            width: self.width,
            data: self.channel(ch).to_vec(),
            stride: (self.stride, self.stride),
            origin: (0.0, 0.0),
        }
    }
}

/// Single-channel response map with image-coordinate metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
    /// Image pixels per cell along (rows, cols).
    stride: (f64, f64),
    /// Offset added to `(r + 0.5, c + 0.5) * stride`.
    origin: (f64, f64),
}

impl ScoreMap {
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f64>,
        stride: (f64, f64),
        origin: (f64, f64),
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "score map dims must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "score map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if !(stride.0 > 0.0 && stride.1 > 0.0 && stride.0.is_finite() && stride.1.is_finite()) {
            return Err(Error::InvalidArgument(format!("stride must be positive, got {stride:?}")));
        }
        if !(origin.0.is_finite() && origin.1.is_finite()) || data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score map"));
        }
        Ok(Self { height, width, data, stride, origin })
    }

    /// Unit-stride map whose cell `(r, c)` sits at image point `(r, c)`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(height, width, data, (1.0, 1.0), (-0.5, -0.5))
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::from_vec(height, width, vec![value; height * width])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::from_vec(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn stride(&self) -> (f64, f64) {
        self.stride
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.width + c]
    }

    pub fn same_dims(&self, other: &ScoreMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Replaces the coordinate metadata, keeping the values.
    pub fn with_geometry(mut self, stride: (f64, f64), origin: (f64, f64)) -> Result<Self> {
        if !(stride.0 > 0.0 && stride.1 > 0.0) {
            return Err(Error::InvalidArgument(format!("stride must be positive, got {stride:?}")));
        }
        self.stride = stride;
        self.origin = origin;
        Ok(self)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<ScoreMap> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        ScoreMap::new(self.height, self.width, data, self.stride, self.origin)
    }

    /// Image point (y, x) of a possibly fractional cell position.
    pub fn cell_to_image(&self, r: f64, c: f64) -> (f64, f64) {
        (
            self.origin.0 + (r + 0.5) * self.stride.0,
            self.origin.1 + (c + 0.5) * self.stride.1,
        )
    }

    /// Inverse of [`ScoreMap::cell_to_image`].
    pub fn image_to_cell(&self, y: f64, x: f64) -> (f64, f64) {
        (
            (y - self.origin.0) / self.stride.0 - 0.5,
            (x - self.origin.1) / self.stride.1 - 0.5,
        )
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Location of the maximum; ties resolve to the smallest row, then column.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Sub-cell peak position from a least-squares quadratic over the 3x3
    /// neighbourhood of `(r, c)`. Offsets are clamped to half a cell; an axis
    /// touching the border is not refined.
    pub fn refine_peak(&self, r: usize, c: usize) -> (f64, f64) {
        let row_ok = r > 0 && r + 1 < self.height;
        let col_ok = c > 0 && c + 1 < self.width;
        let (mut dy, mut dx) = (0.0, 0.0);
        if row_ok && col_ok {
            // f = a + b x + c y + d x^2 + e y^2 + g x y on {-1,0,1}^2
            let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for j in -1i32..=1 {
                for i in -1i32..=1 {
                    let v = self.at((r as i32 + j) as usize, (c as i32 + i) as usize);
                    let (x, y) = (i as f64, j as f64);
                    sx += x * v;
                    sy += y * v;
                    sxy += x * y * v;
                    sxx += (x * x - 2.0 / 3.0) * v;
                    syy += (y * y - 2.0 / 3.0) * v;
                }
            }
            let (b, cy, g) = (sx / 6.0, sy / 6.0, sxy / 4.0);
            let (d, e) = (sxx / 2.0, syy / 2.0);
            let det = 4.0 * d * e - g * g;
            if d < 0.0 && det > 0.0 {
                dx = (-2.0 * e * b + g * cy) / det;
                dy = (-2.0 * d * cy + g * b) / det;
            } else {
                dx = parabola_offset(self.at(r, c - 1), self.at(r, c), self.at(r, c + 1));
                dy = parabola_offset(self.at(r - 1, c), self.at(r, c), self.at(r + 1, c));
            }
        } else if col_ok {
            dx = parabola_offset(self.at(r, c - 1), self.at(r, c), self.at(r, c + 1));
        } else if row_ok {
            dy = parabola_offset(self.at(r - 1, c), self.at(r, c), self.at(r + 1, c));
        }
        (r as f64 + dy.clamp(-0.5, 0.5), c as f64 + dx.clamp(-0.5, 0.5))
    }

    /// Min-max normalisation to [0, 1]; constant maps are returned unchanged.
    pub fn normalized(&self) -> ScoreMap {
        let (lo, hi) = (self.min(), self.max());
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            return self.clone();
        }
        let span = hi - lo;
        ScoreMap { data: self.data.iter().map(|v| (v - lo) / span).collect(), ..self.clone() }
    }
}

fn parabola_offset(left: f64, mid: f64, right: f64) -> f64 {
    let denom = left - 2.0 * mid + right;
    if denom < 0.0 {
        0.5 * (left - right) / denom
    } else {
        0.0
    }
}

/// Axis-aligned box in center form, image pixels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let rect = Rect { cx, cy, w, h };
        rect.validate()?;
        Ok(rect)
    }

    /// From the top-left `x, y, w, h` convention used on disk.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        Rect::new(x + w / 2.0, y + h / 2.0, w, h)
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.w, self.h]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::DegenerateRect { w: self.w, h: self.h });
        }
        if !self.w.is_finite() || !self.h.is_finite() {
            return Err(Error::NonFinite("rect"));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn left(&self) -> f64 {
        self.cx - self.w / 2.0
    }

    pub fn right(&self) -> f64 {
        self.cx + self.w / 2.0
    }

    pub fn top(&self) -> f64 {
        self.cy - self.h / 2.0
    }

    pub fn bottom(&self) -> f64 {
        self.cy + self.h / 2.0
    }

    pub fn center_distance(&self, other: &Rect) -> f64 {
        (self.cx - other.cx).hypot(self.cy - other.cy)
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrMode {
    /// Only placements fully inside the input.
    Valid,
    /// Zero padded so the output has the input's dims; even kernels pad one
    /// less cell on the top/left side.
    Same,
}

/// Placement of a kernel relative to the output grid: output cell `(r, c)`
/// reads input cell `(r + ky + off.0, c + kx + off.1)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CorrGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub off: (isize, isize),
    pub kh: usize,
    pub kw: usize,
}

impl CorrGeometry {
    pub fn new(in_h: usize, in_w: usize, kh: usize, kw: usize, mode: CorrMode) -> Result<Self> {
        match mode {
            CorrMode::Valid => {
                if kh > in_h || kw > in_w {
                    return Err(Error::ShapeMismatch(format!(
                        "kernel {kh}x{kw} larger than input {in_h}x{in_w} in valid mode"
                    )));
                }
                Ok(Self { out_h: in_h - kh + 1, out_w: in_w - kw + 1, off: (0, 0), kh, kw })
            }
            CorrMode::Same => Ok(Self {
                out_h: in_h,
                out_w: in_w,
                off: (-(((kh - 1) / 2) as isize), -(((kw - 1) / 2) as isize)),
                kh,
                kw,
            }),
        }
    }

    /// Output range of one axis for which the input index stays inside `[0, n)`.
    #[inline]
    fn span(out: usize, shift: isize, n: usize) -> (usize, usize) {
        let lo = (-shift).max(0) as usize;
        let hi = (n as isize - shift).clamp(0, out as isize) as usize;
        (lo.min(hi), hi)
    }

    /// Origin of the output grid in the input frame, cell-center convention.
    pub fn output_origin(&self, stride: f64) -> (f64, f64) {
        (
            (self.off.0 as f64 + self.kh as f64 / 2.0 - 0.5) * stride,
            (self.off.1 as f64 + self.kw as f64 / 2.0 - 0.5) * stride,
        )
    }
}

/// `out += corr(input, kernel)` with planes laid out contiguously.
pub(crate) fn corr_accumulate(
    input: &[f64],
    in_h: usize,
    in_w: usize,
    channels: usize,
    kernel: &[f64],
    geo: &CorrGeometry,
    out: &mut [f64],
) {
    let plane = in_h * in_w;
    for ch in 0..channels {
        let src = &input[ch * plane..(ch + 1) * plane];
        for ky in 0..geo.kh {
            let sy = ky as isize + geo.off.0;
            let (r0, r1) = CorrGeometry::span(geo.out_h, sy, in_h);
            for kx in 0..geo.kw {
                let w = kernel[(ch * geo.kh + ky) * geo.kw + kx];
                if w == 0.0 {
                    continue;
                }
                let sx = kx as isize + geo.off.1;
                let (c0, c1) = CorrGeometry::span(geo.out_w, sx, in_w);
                if c0 >= c1 {
                    continue;
                }
                for r in r0..r1 {
                    let ir = (r as isize + sy) as usize;
                    let irow = &src[ir * in_w..(ir + 1) * in_w];
                    let i0 = (c0 as isize + sx) as usize;
                    let orow = &mut out[r * geo.out_w + c0..r * geo.out_w + c1];
                    axpy(w, &irow[i0..i0 + (c1 - c0)], orow);
                }
            }
        }
    }
}

/// Adjoint of the correlation with respect to the kernel:
/// `grad[ch, ky, kx] += sum_{r,c} input[ch, r+ky+off, c+kx+off] * resid[r, c]`.
pub(crate) fn corr_kernel_adjoint(
    input: &[f64],
    in_h: usize,
    in_w: usize,
    channels: usize,
    resid: &[f64],
    geo: &CorrGeometry,
    grad: &mut [f64],
) {
    let plane = in_h * in_w;
    for ch in 0..channels {
        let src = &input[ch * plane..(ch + 1) * plane];
        for ky in 0..geo.kh {
            let sy = ky as isize + geo.off.0;
            let (r0, r1) = CorrGeometry::span(geo.out_h, sy, in_h);
            for kx in 0..geo.kw {
                let sx = kx as isize + geo.off.1;
                let (c0, c1) = CorrGeometry::span(geo.out_w, sx, in_w);
                let mut acc = 0.0;
                if c0 < c1 {
                    for r in r0..r1 {
                        let ir = (r as isize + sy) as usize;
                        let i0 = ir * in_w + (c0 as isize + sx) as usize;
                        acc += dot(
                            &src[i0..i0 + (c1 - c0)],
                            &resid[r * geo.out_w + c0..r * geo.out_w + c1],
                        );
                    }
                }
                grad[(ch * geo.kh + ky) * geo.kw + kx] += acc;
            }
        }
    }
}

/// Adjoint of the correlation with respect to the input:
/// `dinput[ch, r+ky+off, c+kx+off] += kernel[ch, ky, kx] * resid[r, c]`.
pub(crate) fn corr_input_adjoint(
    kernel: &[f64],
    channels: usize,
    resid: &[f64],
    geo: &CorrGeometry,
    in_h: usize,
    in_w: usize,
    dinput: &mut [f64],
) {
    let plane = in_h * in_w;
    for ch in 0..channels {
        let dst = &mut dinput[ch * plane..(ch + 1) * plane];
        for ky in 0..geo.kh {
            let sy = ky as isize + geo.off.0;
            let (r0, r1) = CorrGeometry::span(geo.out_h, sy, in_h);
            for kx in 0..geo.kw {
                let w = kernel[(ch * geo.kh + ky) * geo.kw + kx];
                if w == 0.0 {
                    continue;
                }
                let sx = kx as isize + geo.off.1;
                let (c0, c1) = CorrGeometry::span(geo.out_w, sx, in_w);
                if c0 >= c1 {
                    continue;
                }
                for r in r0..r1 {
                    let ir = (r as isize + sy) as usize;
                    let i0 = ir * in_w + (c0 as isize + sx) as usize;
                    axpy(
                        w,
                        &resid[r * geo.out_w + c0..r * geo.out_w + c1],
                        &mut dst[i0..i0 + (c1 - c0)],
                    );
                }
            }
        }
    }
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Channel-summed sliding inner product of `kernel` over `input`.
pub fn xcorr2d(input: &FeatureMap, kernel: &FeatureMap, mode: CorrMode) -> Result<ScoreMap> {
    if input.channels() != kernel.channels() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} channels, kernel has {}",
            input.channels(),
            kernel.channels()
        )));
    }
    let geo = CorrGeometry::new(input.height(), input.width(), kernel.height(), kernel.width(), mode)?;
    let mut out = vec![0.0; geo.out_h * geo.out_w];
    corr_accumulate(
        input.data(),
        input.height(),
        input.width(),
        input.channels(),
        kernel.data(),
        &geo,
        &mut out,
    );
    let stride = input.stride();
    ScoreMap::new(geo.out_h, geo.out_w, out, (stride, stride), geo.output_origin(stride))
}

/// Catmull-Rom cubic convolution weight (a = -0.5).
#[inline]
fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-index source taps for one axis of a cubic resample.
fn cubic_taps(n_in: usize, n_out: usize) -> Vec<([usize; 4], [f64; 4])> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let src = (d as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            let clamp = |i: isize| i.clamp(0, n_in as isize - 1) as usize;
            (
                [clamp(base - 1), clamp(base), clamp(base + 1), clamp(base + 2)],
                [cubic_weight(t + 1.0), cubic_weight(t), cubic_weight(1.0 - t), cubic_weight(2.0 - t)],
            )
        })
        .collect()
}

/// Bicubic resize with edge clamping. Output cells keep the half-cell
/// alignment of the input, so image coordinates of features are preserved.
pub fn resize_cubic(map: &ScoreMap, out_h: usize, out_w: usize) -> Result<ScoreMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!("resize target {out_h}x{out_w}")));
    }
    if out_h == map.height && out_w == map.width {
        return Ok(map.clone());
    }
    let rows = cubic_taps(map.height, out_h);
    let cols = cubic_taps(map.width, out_w);
    let mut tmp = vec![0.0; map.height * out_w];
    for r in 0..map.height {
        let src = &map.data[r * map.width..(r + 1) * map.width];
        for (c, (idx, w)) in cols.iter().enumerate() {
            tmp[r * out_w + c] =
                w[0] * src[idx[0]] + w[1] * src[idx[1]] + w[2] * src[idx[2]] + w[3] * src[idx[3]];
        }
    }
    let mut out = vec![0.0; out_h * out_w];
    for (r, (idx, w)) in rows.iter().enumerate() {
        for c in 0..out_w {
            out[r * out_w + c] = w[0] * tmp[idx[0] * out_w + c]
                + w[1] * tmp[idx[1] * out_w + c]
                + w[2] * tmp[idx[2] * out_w + c]
                + w[3] * tmp[idx[3] * out_w + c];
        }
    }
    let stride = (
        map.stride.0 * map.height as f64 / out_h as f64,
        map.stride.1 * map.width as f64 / out_w as f64,
    );
    ScoreMap::new(out_h, out_w, out, stride, map.origin)
}

/// Samples `map` with Catmull-Rom interpolation at the image points of every
/// cell of a target grid (`height x width`, `stride`, `origin`). Points
/// outside the source are edge clamped.
pub fn resample_cubic(
    map: &ScoreMap,
    height: usize,
    width: usize,
    stride: (f64, f64),
    origin: (f64, f64),
) -> Result<ScoreMap> {
    let taps = |n_src: usize, n_dst: usize, src_stride: f64, src_origin: f64, dst_stride: f64, dst_origin: f64| {
        (0..n_dst)
            .map(|d| {
                let p = dst_origin + (d as f64 + 0.5) * dst_stride;
                let src = (p - src_origin) / src_stride - 0.5;
                let base = src.floor();
                let t = src - base;
                let base = base as isize;
                let clamp = |i: isize| i.clamp(0, n_src as isize - 1) as usize;
                (
                    [clamp(base - 1), clamp(base), clamp(base + 1), clamp(base + 2)],
                    [cubic_weight(t + 1.0), cubic_weight(t), cubic_weight(1.0 - t), cubic_weight(2.0 - t)],
                )
            })
            .collect::<Vec<_>>()
    };
    let rows = taps(map.height, height, map.stride.0, map.origin.0, stride.0, origin.0);
    let cols = taps(map.width, width, map.stride.1, map.origin.1, stride.1, origin.1);
    let mut out = Vec::with_capacity(height * width);
    for (ri, rw) in &rows {
        for (ci, cw) in &cols {
            let mut v = 0.0;
            for a in 0..4 {
                let row = &map.data[ri[a] * map.width..];
                v += rw[a]
                    * (cw[0] * row[ci[0]] + cw[1] * row[ci[1]] + cw[2] * row[ci[2]] + cw[3] * row[ci[3]]);
            }
            out.push(v);
        }
    }
    ScoreMap::new(height, width, out, stride, origin)
}

/// Isotropic Gaussian `exp(-d^2 / (2 sigma^2))` around a fractional cell.
pub fn gaussian_label(h: usize, w: usize, center: (f64, f64), sigma: f64) -> Result<ScoreMap> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if !(center.0.is_finite() && center.1.is_finite()) {
        return Err(Error::NonFinite("label center"));
    }
    let denom = 2.0 * sigma * sigma;
    ScoreMap::from_fn(h, w, |r, c| {
        let dr = r as f64 - center.0;
        let dc = c as f64 - center.1;
        (-(dr * dr + dc * dc) / denom).exp()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Separable Gaussian with sigma a quarter of each dimension.
    Gaussian,
    /// Separable Hann window, zero on the border rows/cols.
    Cosine,
}

/// Centered window with values in [0, 1].
pub fn penalty_window(h: usize, w: usize, kind: WindowKind) -> Result<ScoreMap> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("window dims {h}x{w}")));
    }
    let axis = |n: usize| -> Vec<f64> {
        let center = (n as f64 - 1.0) / 2.0;
        (0..n)
            .map(|i| match kind {
                WindowKind::Gaussian => {
                    let sigma = n as f64 / 4.0;
                    let d = i as f64 - center;
                    (-(d * d) / (2.0 * sigma * sigma)).exp()
                }
                WindowKind::Cosine => {
                    if n == 1 {
                        1.0
                    } else {
                        0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / (n as f64 - 1.0)).cos())
                    }
                }
            })
            .collect()
    };
    let (wr, wc) = (axis(h), axis(w));
    ScoreMap::from_fn(h, w, |r, c| wr[r] * wc[c])
}

/// `score * (1 - strength) + window * strength * scale`, where `scale` is the
/// score map's maximum (1 when the maximum is not positive).
pub fn blend_window(score: &ScoreMap, window: &ScoreMap, strength: f64) -> Result<ScoreMap> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!("window strength {strength} outside [0, 1]")));
    }
    if !score.same_dims(window) {
        return Err(Error::ShapeMismatch("window and score dims differ".into()));
    }
    if strength == 0.0 {
        return Ok(score.clone());
    }
    let peak = score.max();
    let scale = if peak > 0.0 { peak } else { 1.0 };
    let data = score
        .data
        .iter()
        .zip(&window.data)
        .map(|(s, w)| s * (1.0 - strength) + w * strength * scale)
        .collect();
    ScoreMap::new(score.height, score.width, data, score.stride, score.origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_valid(input: &FeatureMap, kernel: &FeatureMap) -> Vec<f64> {
        let (oh, ow) = (input.height() - kernel.height() + 1, input.width() - kernel.width() + 1);
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                let mut s = 0.0;
                for ch in 0..input.channels() {
                    for ky in 0..kernel.height() {
                        for kx in 0..kernel.width() {
                            s += input.at(ch, r + ky, c + kx) * kernel.at(ch, ky, kx);
                        }
                    }
                }
                out[r * ow + c] = s;
            }
        }
        out
    }

    #[test]
    fn xcorr_valid_small_example() {
        let input = FeatureMap::new(1, 3, 3, (1..=9).map(f64::from).collect(), 1.0).unwrap();
        let kernel = FeatureMap::new(1, 2, 2, vec![1.0, 0.0, 0.0, 1.0], 1.0).unwrap();
        let out = xcorr2d(&input, &kernel, CorrMode::Valid).unwrap();
        assert_eq!((out.height(), out.width()), (2, 2));
        assert_eq!(out.data(), &[6.0, 8.0, 12.0, 14.0]);
        assert_eq!(out.data(), naive_valid(&input, &kernel).as_slice());
    }

    #[test]
    fn identity_and_zero_kernels() {
        let input = FeatureMap::from_fn(1, 4, 5, 2.0, |_, r, c| (r * 7 + c) as f64 * 0.3).unwrap();
        let one = FeatureMap::new(1, 1, 1, vec![1.0], 2.0).unwrap();
        let zero = FeatureMap::zeros(1, 3, 3, 2.0).unwrap();
        for mode in [CorrMode::Valid, CorrMode::Same] {
            let out = xcorr2d(&input, &one, mode).unwrap();
            assert_eq!(out.data(), input.channel(0));
            assert_eq!(out.origin(), (0.0, 0.0));
        }
        for mode in [CorrMode::Valid, CorrMode::Same] {
            assert!(xcorr2d(&input, &zero, mode).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn xcorr_errors() {
        let a = FeatureMap::zeros(2, 4, 4, 1.0).unwrap();
        let b = FeatureMap::zeros(1, 2, 2, 1.0).unwrap();
        assert!(matches!(xcorr2d(&a, &b, CorrMode::Valid), Err(Error::ShapeMismatch(_))));
        let big = FeatureMap::zeros(2, 5, 2, 1.0).unwrap();
        assert!(xcorr2d(&a, &big, CorrMode::Valid).is_err());
        assert!(xcorr2d(&a, &big, CorrMode::Same).is_ok());
    }

    #[test]
    fn same_mode_matches_zero_padded_valid() {
        let input = FeatureMap::from_fn(2, 5, 6, 1.0, |ch, r, c| ((ch * 31 + r * 7 + c * 3) % 11) as f64 - 5.0).unwrap();
        let kernel = FeatureMap::from_fn(2, 4, 4, 1.0, |ch, r, c| ((ch + r * 5 + c * 2) % 7) as f64 * 0.25).unwrap();
        // pad 1 top/left, 2 bottom/right
        let padded = FeatureMap::from_fn(2, 8, 9, 1.0, |ch, r, c| {
            if (1..6).contains(&r) && (1..7).contains(&c) {
                input.at(ch, r - 1, c - 1)
            } else {
                0.0
            }
        })
        .unwrap();
        let same = xcorr2d(&input, &kernel, CorrMode::Same).unwrap();
        assert_eq!(same.data(), naive_valid(&padded, &kernel).as_slice());
        assert_eq!(same.origin(), (0.5, 0.5));
    }

    #[test]
    fn cell_image_round_trip() {
        let m = ScoreMap::new(5, 7, vec![0.0; 35], (8.0, 6.0), (60.0, -3.0)).unwrap();
        for &(r, c) in &[(0.0, 0.0), (2.3, 5.9), (-1.5, 8.25)] {
            let (y, x) = m.cell_to_image(r, c);
            let (r2, c2) = m.image_to_cell(y, x);
            assert!((r2 - r).abs() < 1e-9 && (c2 - c).abs() < 1e-9);
        }
    }

    #[test]
    fn argmax_tie_break_and_refine() {
        let m = ScoreMap::filled(3, 3, 0.0).unwrap();
        assert_eq!(m.argmax(), (0, 0));
        // planted quadratic peak at (2.3, 3.8)
        let q = ScoreMap::from_fn(6, 7, |r, c| {
            let (dr, dc) = (r as f64 - 2.3, c as f64 - 3.8);
            5.0 - dr * dr - 2.0 * dc * dc
        })
        .unwrap();
        let (r, c) = q.argmax();
        assert_eq!((r, c), (2, 4));
        let (pr, pc) = q.refine_peak(r, c);
        assert!((pr - 2.3).abs() < 1e-9 && (pc - 3.8).abs() < 1e-9, "{pr} {pc}");
    }

    #[test]
    fn resize_identity_and_constant() {
        let m = ScoreMap::from_fn(4, 5, |r, c| (r * 5 + c) as f64).unwrap();
        assert_eq!(resize_cubic(&m, 4, 5).unwrap(), m);
        let k = ScoreMap::filled(3, 4, 2.5).unwrap();
        let big = resize_cubic(&k, 9, 7).unwrap();
        assert!(big.data().iter().all(|v| (v - 2.5).abs() < 1e-12));
        assert!(resize_cubic(&k, 0, 3).is_err());
    }

    #[test]
    fn resize_preserves_image_coordinates() {
        let m = ScoreMap::new(8, 8, vec![0.0; 64], (8.0, 8.0), (4.0, -2.0)).unwrap();
        let r = resize_cubic(&m, 16, 4).unwrap();
        // the map's image extent is unchanged
        let (y0, x0) = m.cell_to_image(-0.5, -0.5);
        let (y1, x1) = r.cell_to_image(-0.5, -0.5);
        assert!((y0 - y1).abs() < 1e-12 && (x0 - x1).abs() < 1e-12);
        let (y0, x0) = m.cell_to_image(7.5, 7.5);
        let (y1, x1) = r.cell_to_image(15.5, 3.5);
        assert!((y0 - y1).abs() < 1e-12 && (x0 - x1).abs() < 1e-12);
    }

    #[test]
    fn gaussian_label_examples() {
        let g = gaussian_label(7, 7, (3.0, 3.0), 1.5).unwrap();
        assert_eq!(g.at(3, 3), 1.0);
        assert_eq!(g.argmax(), (3, 3));
        for d in 1..=3 {
            assert_eq!(g.at(3 + d, 3), g.at(3 - d, 3));
            assert_eq!(g.at(3, 3 + d), g.at(3, 3 - d));
        }
        let s = gaussian_label(7, 7, (3.0, 3.0), 2.0).unwrap();
        assert!((s.at(3, 5) - (-0.5f64).exp()).abs() < 1e-15);
        assert!(gaussian_label(3, 3, (1.0, 1.0), 0.0).is_err());
        assert!(gaussian_label(3, 3, (1.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn windows() {
        let g = penalty_window(9, 9, WindowKind::Gaussian).unwrap();
        assert_eq!(g.at(4, 4), 1.0);
        assert!(g.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let c = penalty_window(7, 9, WindowKind::Cosine).unwrap();
        assert!((c.at(3, 4) - 1.0).abs() < 1e-15);
        for col in 0..9 {
            assert!(c.at(0, col).abs() < 1e-15 && c.at(6, col).abs() < 1e-15);
        }
        let score = ScoreMap::from_fn(9, 9, |r, c| (r * c) as f64 * 0.1 - 1.0).unwrap();
        assert_eq!(blend_window(&score, &g, 0.0).unwrap(), score);
        assert!(blend_window(&score, &g, 1.5).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = Rect::new(1.0, 1.0, 2.0, 2.0).unwrap();
        let b = Rect::new(2.0, 1.0, 2.0, 2.0).unwrap();
        assert_eq!(iou(&a, &a), 1.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-15);
        let far = Rect::new(10.0, 10.0, 2.0, 2.0).unwrap();
        assert_eq!(iou(&a, &far), 0.0);
        assert!(Rect::new(0.0, 0.0, 0.0, 1.0).is_err());
        let r = Rect::from_xywh(3.0, 4.0, 10.0, 6.0).unwrap();
        assert_eq!((r.cx, r.cy), (8.0, 7.0));
        assert_eq!(r.to_xywh(), [3.0, 4.0, 10.0, 6.0]);
    }

    #[test]
    fn construction_rejects_bad_data() {
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3], 1.0).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f64::NAN], 1.0).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![0.0], 0.0).is_err());
        assert!(ScoreMap::from_vec(1, 2, vec![0.0, f64::INFINITY]).is_err());
    }
}
