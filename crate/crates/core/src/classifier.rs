//! Online classification subnet: 1x1 compression with a rectifier, a
//! channel gate (pooled features through two dense layers and a sigmoid), a
//! spatial gate (softmax over positions of the channel mean, applied in
//! residual form) and a single-output 4x4 filter.
//!
//! Compression and gating are fitted on the first frame only. Afterwards the
//! score is linear in the filter weights, which is what makes the online
//! update an exact least-squares problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::featmap::{
    axpy, corr_accumulate, corr_input_adjoint, corr_kernel_adjoint, dot, CorrGeometry, CorrMode, FeatureMap,
    ScoreMap,
};

pub const COMPRESSED_CHANNELS: usize = 64;
pub const FILTER_SIZE: usize = 4;
pub const ATTENTION_REDUCTION: usize = 4;

/// Parameter tensors of the subnet. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlocks {
    /// `mid x in`
    pub compress_w: Vec<f64>,
    pub compress_b: Vec<f64>,
    /// `hidden x mid`
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    /// `mid x hidden`
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
    /// `mid x k x k`, one output channel
    pub filter_w: Vec<f64>,
}

impl ParamBlocks {
    fn zeros(dims: &Dims) -> Self {
        Self {
            compress_w: vec![0.0; dims.mid * dims.input],
            compress_b: vec![0.0; dims.mid],
            fc1_w: vec![0.0; dims.hidden * dims.mid],
            fc1_b: vec![0.0; dims.hidden],
            fc2_w: vec![0.0; dims.mid * dims.hidden],
            fc2_b: vec![0.0; dims.mid],
            filter_w: vec![0.0; dims.mid * dims.filter * dims.filter],
        }
    }

    pub fn blocks(&self) -> [&[f64]; 7] {
        [
            &self.compress_w,
            &self.compress_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
            &self.filter_w,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 7] {
        [
            &mut self.compress_w,
            &mut self.compress_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
            &mut self.filter_w,
        ]
    }

    pub fn scale(&mut self, a: f64) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|v| *v *= a);
        }
    }

    fn add_scaled(&mut self, a: f64, other: &ParamBlocks) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            axpy(a, src, dst);
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.blocks().iter().map(|b| dot(b, b)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub mid: usize,
    pub hidden: usize,
    pub filter: usize,
}

/// Ridge weights per weight tensor (biases are not regularised).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegLambda {
    pub compress: f64,
    pub fc1: f64,
    pub fc2: f64,
    pub filter: f64,
}

impl Default for RegLambda {
    fn default() -> Self {
        Self { compress: 0.0, fc1: 0.0, fc2: 0.0, filter: 1e-2 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub dims: Dims,
    pub blocks: ParamBlocks,
    pub reg: RegLambda,
    /// When false both gates are bypassed.
    pub attention: bool,
}

impl ClassifierParams {
    /// Default architecture (64 compressed channels, 4x4 filter).
    pub fn new(in_channels: usize, seed: u64) -> Result<Self> {
        Self::with_dims(
            Dims {
                input: in_channels,
                mid: COMPRESSED_CHANNELS,
                hidden: COMPRESSED_CHANNELS / ATTENTION_REDUCTION,
                filter: FILTER_SIZE,
            },
            seed,
        )
    }

    /// Seeded initialisation: uniform weights with variance `2 / fan_in`,
    /// zero biases and a zero filter.
    pub fn with_dims(dims: Dims, seed: u64) -> Result<Self> {
        if dims.input == 0 || dims.mid == 0 || dims.hidden == 0 || dims.filter == 0 {
            return Err(Error::InvalidArgument(format!("bad classifier dims {dims:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = ParamBlocks::zeros(&dims);
        let mut fill = |v: &mut Vec<f64>, fan_in: usize| {
            let a = (6.0 / fan_in as f64).sqrt();
            v.iter_mut().for_each(|x| *x = rng.random_range(-a..a));
        };
        fill(&mut blocks.compress_w, dims.input);
        fill(&mut blocks.fc1_w, dims.mid);
        fill(&mut blocks.fc2_w, dims.hidden);
        Ok(Self { dims, blocks, reg: RegLambda::default(), attention: true })
    }

    pub fn validate(&self) -> Result<()> {
        let expect = ParamBlocks::zeros(&self.dims);
        for (have, want) in self.blocks.blocks().iter().zip(expect.blocks()) {
            if have.len() != want.len() {
                return Err(Error::ShapeMismatch("parameter block size".into()));
            }
            if have.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("classifier parameters"));
            }
        }
        let r = self.reg;
        if [r.compress, r.fc1, r.fc2, r.filter].iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("regularisation weights must be non-negative".into()));
        }
        Ok(())
    }

    /// `sum_k lambda_k ||w_k||^2`
    pub fn reg_loss(&self) -> f64 {
        let b = &self.blocks;
        self.reg.compress * dot(&b.compress_w, &b.compress_w)
            + self.reg.fc1 * dot(&b.fc1_w, &b.fc1_w)
            + self.reg.fc2 * dot(&b.fc2_w, &b.fc2_w)
            + self.reg.filter * dot(&b.filter_w, &b.filter_w)
    }

    fn add_reg_gradient(&self, grad: &mut ParamBlocks) {
        let b = &self.blocks;
        axpy(2.0 * self.reg.compress, &b.compress_w, &mut grad.compress_w);
        axpy(2.0 * self.reg.fc1, &b.fc1_w, &mut grad.fc1_w);
        axpy(2.0 * self.reg.fc2, &b.fc2_w, &mut grad.fc2_w);
        axpy(2.0 * self.reg.filter, &b.filter_w, &mut grad.filter_w);
    }

    /// Geometry of the filter correlation on a `h x w` map.
    pub(crate) fn filter_geometry(&self, h: usize, w: usize) -> CorrGeometry {
        CorrGeometry::new(h, w, self.dims.filter, self.dims.filter, CorrMode::Same)
            .expect("same-mode geometry is always valid")
    }

    const MAGIC: &'static [u8; 4] = b"FTCP";
    const VERSION: u32 = 1;

    /// Flat little-endian snapshot: magic, version, dims, flags, regularisation,
    /// then every block prefixed by its length.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        for d in [self.dims.input, self.dims.mid, self.dims.hidden, self.dims.filter] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(u8::from(self.attention));
        for l in [self.reg.compress, self.reg.fc1, self.reg.fc2, self.reg.filter] {
            out.extend_from_slice(&l.to_le_bytes());
        }
        for block in self.blocks.blocks() {
            out.extend_from_slice(&(block.len() as u64).to_le_bytes());
            for v in block {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::InvalidArgument(format!("parameter snapshot: {what}"));
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, rest) = cur.split_at(n);
            cur = rest;
            Ok(head)
        };
        if take(4)? != Self::MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_at(take(4)?);
        if version != Self::VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let mut d = [0usize; 4];
        for slot in &mut d {
            *slot = u32_at(take(4)?) as usize;
        }
        let dims = Dims { input: d[0], mid: d[1], hidden: d[2], filter: d[3] };
        let attention = take(1)?[0] != 0;
        let mut l = [0.0f64; 4];
        for slot in &mut l {
            *slot = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        }
        let mut blocks = ParamBlocks::zeros(&dims);
        for block in blocks.blocks_mut() {
            let len = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
            if len != block.len() {
                return Err(bad("block length does not match dims"));
            }
            for v in block.iter_mut() {
                *v = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
            }
        }
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let params = ClassifierParams {
            dims,
            blocks,
            reg: RegLambda { compress: l[0], fc1: l[1], fc2: l[2], filter: l[3] },
            attention,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Gate values used on one input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    /// Per compressed channel, in (0, 1).
    pub channel_scale: Vec<f64>,
    /// Softmax over positions, sums to 1.
    pub spatial_weight: Vec<f64>,
}

/// Intermediate activations of one forward pass.
struct Trace {
    n: usize,
    pre: Vec<f64>,
    z: Vec<f64>,
    pooled: Vec<f64>,
    fc1_pre: Vec<f64>,
    fc1_act: Vec<f64>,
    scale: Vec<f64>,
    /// channel-gated features (`z * scale`)
    zc: Vec<f64>,
    spatial: Vec<f64>,
    /// filter input
    zs: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_input(feat: &FeatureMap, params: &ClassifierParams) -> Result<()> {
    if feat.channels() != params.dims.input {
        return Err(Error::ShapeMismatch(format!(
            "classifier expects {} input channels, got {}",
            params.dims.input,
            feat.channels()
        )));
    }
    Ok(())
}

fn trace(feat: &FeatureMap, params: &ClassifierParams) -> Trace {
    let dims = params.dims;
    let b = &params.blocks;
    let n = feat.plane_len();
    let x = feat.data();

    let mut pre = vec![0.0; dims.mid * n];
    for o in 0..dims.mid {
        let row = &mut pre[o * n..(o + 1) * n];
        row.iter_mut().for_each(|v| *v = b.compress_b[o]);
        for i in 0..dims.input {
            axpy(b.compress_w[o * dims.input + i], &x[i * n..(i + 1) * n], row);
        }
    }
    let z: Vec<f64> = pre.iter().map(|&v| v.max(0.0)).collect();

    if !params.attention {
        return Trace {
            n,
            pre,
            zs: z.clone(),
            zc: z.clone(),
            z,
            pooled: Vec::new(),
            fc1_pre: Vec::new(),
            fc1_act: Vec::new(),
            scale: vec![1.0; dims.mid],
            spatial: vec![1.0 / n as f64; n],
        };
    }

    let pooled: Vec<f64> = (0..dims.mid).map(|o| z[o * n..(o + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let fc1_pre: Vec<f64> =
        (0..dims.hidden).map(|h| b.fc1_b[h] + dot(&b.fc1_w[h * dims.mid..(h + 1) * dims.mid], &pooled)).collect();
    let fc1_act: Vec<f64> = fc1_pre.iter().map(|&v| v.max(0.0)).collect();
    let scale: Vec<f64> = (0..dims.mid)
        .map(|o| sigmoid(b.fc2_b[o] + dot(&b.fc2_w[o * dims.hidden..(o + 1) * dims.hidden], &fc1_act)))
        .collect();

    let mut zc = z.clone();
    for o in 0..dims.mid {
        zc[o * n..(o + 1) * n].iter_mut().for_each(|v| *v *= scale[o]);
    }
    let mut mean = vec![0.0; n];
    for o in 0..dims.mid {
        axpy(1.0 / dims.mid as f64, &zc[o * n..(o + 1) * n], &mut mean);
    }
    let peak = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut spatial: Vec<f64> = mean.iter().map(|&m| (m - peak).exp()).collect();
    let total: f64 = spatial.iter().sum();
    spatial.iter_mut().for_each(|a| *a /= total);

    let factor: Vec<f64> = spatial.iter().map(|&a| 1.0 + n as f64 * a).collect();
    let mut zs = zc.clone();
    for o in 0..dims.mid {
        for (v, f) in zs[o * n..(o + 1) * n].iter_mut().zip(&factor) {
            *v *= f;
        }
    }
    Trace { n, pre, z, pooled, fc1_pre, fc1_act, scale, zc, spatial, zs }
}

fn score_from_filter_input(zs: &[f64], h: usize, w: usize, stride: f64, params: &ClassifierParams) -> Result<ScoreMap> {
    let geo = params.filter_geometry(h, w);
    let mut out = vec![0.0; h * w];
    corr_accumulate(zs, h, w, params.dims.mid, &params.blocks.filter_w, &geo, &mut out);
    ScoreMap::new(h, w, out, (stride, stride), geo.output_origin(stride))
}

/// Stride and origin of the score map produced for an `h x w` input.
pub fn score_geometry(h: usize, w: usize, stride: f64, params: &ClassifierParams) -> ((f64, f64), (f64, f64)) {
    ((stride, stride), params.filter_geometry(h, w).output_origin(stride))
}

/// Target-specific features fed to the filter, plus the gate values.
pub fn embed(feat: &FeatureMap, params: &ClassifierParams) -> Result<(FeatureMap, AttentionState)> {
    check_input(feat, params)?;
    let t = trace(feat, params);
    let state = AttentionState { channel_scale: t.scale, spatial_weight: t.spatial };
    let zs = FeatureMap::new(params.dims.mid, feat.height(), feat.width(), t.zs, feat.stride())?;
    Ok((zs, state))
}

/// Filter response on already embedded features.
pub fn apply_filter(embedded: &FeatureMap, params: &ClassifierParams) -> Result<ScoreMap> {
    if embedded.channels() != params.dims.mid {
        return Err(Error::ShapeMismatch(format!(
            "filter expects {} channels, got {}",
            params.dims.mid,
            embedded.channels()
        )));
    }
    score_from_filter_input(embedded.data(), embedded.height(), embedded.width(), embedded.stride(), params)
}

/// Full forward pass: score map with the input's spatial dims.
pub fn forward(feat: &FeatureMap, params: &ClassifierParams) -> Result<(ScoreMap, AttentionState)> {
    let (zs, state) = embed(feat, params)?;
    Ok((apply_filter(&zs, params)?, state))
}

/// Data term `weight * ||f(feat) - label||^2`.
pub fn sample_loss(feat: &FeatureMap, label: &ScoreMap, weight: f64, params: &ClassifierParams) -> Result<f64> {
    let (score, _) = forward(feat, params)?;
    check_label(&score, label)?;
    Ok(weight * residual_sq(&score, label))
}

fn residual_sq(score: &ScoreMap, label: &ScoreMap) -> f64 {
    score.data().iter().zip(label.data()).map(|(s, y)| (s - y) * (s - y)).sum()
}

fn check_label(score: &ScoreMap, label: &ScoreMap) -> Result<()> {
    if !score.same_dims(label) {
        return Err(Error::ShapeMismatch(format!(
            "label {}x{} vs score {}x{}",
            label.height(),
            label.width(),
            score.height(),
            score.width()
        )));
    }
    Ok(())
}

/// Accumulates the gradient of the data term into `grad`; returns the term.
fn accumulate_data_gradient(
    feat: &FeatureMap,
    label: &ScoreMap,
    weight: f64,
    params: &ClassifierParams,
    grad: &mut ParamBlocks,
) -> Result<f64> {
    check_input(feat, params)?;
    if weight < 0.0 || !weight.is_finite() {
        return Err(Error::InvalidArgument(format!("sample weight {weight}")));
    }
    let dims = params.dims;
    let b = &params.blocks;
    let (h, w) = (feat.height(), feat.width());
    let t = trace(feat, params);
    let n = t.n;
    let score = score_from_filter_input(&t.zs, h, w, feat.stride(), params)?;
    check_label(&score, label)?;
    let loss = weight * residual_sq(&score, label);
    let dscore: Vec<f64> = score.data().iter().zip(label.data()).map(|(s, y)| 2.0 * weight * (s - y)).collect();

    let geo = params.filter_geometry(h, w);
    corr_kernel_adjoint(&t.zs, h, w, dims.mid, &dscore, &geo, &mut grad.filter_w);
    let mut dzs = vec![0.0; dims.mid * n];
    corr_input_adjoint(&b.filter_w, dims.mid, &dscore, &geo, h, w, &mut dzs);

    let mut dz = if params.attention {
        let nf = n as f64;
        // spatial gate: zs = zc * (1 + n * a)
        let mut d_spatial = vec![0.0; n];
        let mut dzc = dzs;
        for o in 0..dims.mid {
            let zc = &t.zc[o * n..(o + 1) * n];
            let row = &mut dzc[o * n..(o + 1) * n];
            for q in 0..n {
                d_spatial[q] += nf * row[q] * zc[q];
                row[q] *= 1.0 + nf * t.spatial[q];
            }
        }
        let inner = dot(&t.spatial, &d_spatial);
        let dmean: Vec<f64> = t.spatial.iter().zip(&d_spatial).map(|(a, da)| a * (da - inner)).collect();
        for o in 0..dims.mid {
            axpy(1.0 / dims.mid as f64, &dmean, &mut dzc[o * n..(o + 1) * n]);
        }
        // channel gate: zc = z * s
        let mut dscale = vec![0.0; dims.mid];
        let mut dz = dzc;
        for o in 0..dims.mid {
            let row = &mut dz[o * n..(o + 1) * n];
            dscale[o] = dot(row, &t.z[o * n..(o + 1) * n]);
            row.iter_mut().for_each(|v| *v *= t.scale[o]);
        }
        let du: Vec<f64> = dscale.iter().zip(&t.scale).map(|(ds, s)| ds * s * (1.0 - s)).collect();
        let mut da1 = vec![0.0; dims.hidden];
        for o in 0..dims.mid {
            axpy(du[o], &t.fc1_act, &mut grad.fc2_w[o * dims.hidden..(o + 1) * dims.hidden]);
            grad.fc2_b[o] += du[o];
            axpy(du[o], &b.fc2_w[o * dims.hidden..(o + 1) * dims.hidden], &mut da1);
        }
        let dv: Vec<f64> = da1.iter().zip(&t.fc1_pre).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect();
        let mut dpooled = vec![0.0; dims.mid];
        for hh in 0..dims.hidden {
            axpy(dv[hh], &t.pooled, &mut grad.fc1_w[hh * dims.mid..(hh + 1) * dims.mid]);
            grad.fc1_b[hh] += dv[hh];
            axpy(dv[hh], &b.fc1_w[hh * dims.mid..(hh + 1) * dims.mid], &mut dpooled);
        }
        for o in 0..dims.mid {
            let g = dpooled[o] / nf;
            dz[o * n..(o + 1) * n].iter_mut().for_each(|v| *v += g);
        }
        dz
    } else {
        dzs
    };

    for (d, &p) in dz.iter_mut().zip(&t.pre) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    let x = feat.data();
    for o in 0..dims.mid {
        let row = &dz[o * n..(o + 1) * n];
        grad.compress_b[o] += row.iter().sum::<f64>();
        for i in 0..dims.input {
            grad.compress_w[o * dims.input + i] += dot(row, &x[i * n..(i + 1) * n]);
        }
    }
    Ok(loss)
}

/// Exact gradient of `weight * ||forward(feat) - label||^2 + sum_k lambda_k ||w_k||^2`
/// with respect to every parameter block.
pub fn gradients(
    feat: &FeatureMap,
    label: &ScoreMap,
    weight: f64,
    params: &ClassifierParams,
) -> Result<ParamBlocks> {
    let mut grad = ParamBlocks::zeros(&params.dims);
    accumulate_data_gradient(feat, label, weight, params, &mut grad)?;
    params.add_reg_gradient(&mut grad);
    Ok(grad)
}

/// A weighted training pair.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub feat: FeatureMap,
    pub label: ScoreMap,
    pub weight: f64,
}

/// Summed data loss over `samples` plus the regulariser.
pub fn total_loss(samples: &[TrainingSample], params: &ClassifierParams) -> Result<f64> {
    let mut loss = params.reg_loss();
    for s in samples {
        loss += sample_loss(&s.feat, &s.label, s.weight, params)?;
    }
    Ok(loss)
}

pub const DEFAULT_FINETUNE_STEPS: usize = 60;
pub const DEFAULT_FINETUNE_LR: f64 = 0.01;

/// Gradient descent over all blocks. A step that would increase the loss is
/// retried with half the learning rate, so the loss never goes up.
pub fn finetune_init(
    samples: &[TrainingSample],
    params: &ClassifierParams,
    steps: usize,
    lr: f64,
) -> Result<ClassifierParams> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("fine-tuning needs at least one sample".into()));
    }
    if steps == 0 || !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("steps={steps}, lr={lr}")));
    }
    params.validate()?;
    let mut current = params.clone();
    let mut lr = lr;
    let mut grad = ParamBlocks::zeros(&current.dims);
    let mut loss = total_loss(samples, &current)?;
    for _ in 0..steps {
        grad.scale(0.0);
        for s in samples {
            accumulate_data_gradient(&s.feat, &s.label, s.weight, &current, &mut grad)?;
        }
        current.add_reg_gradient(&mut grad);
        if grad.sq_norm() == 0.0 {
            break;
        }
        loop {
            let mut trial = current.clone();
            trial.blocks.add_scaled(-lr, &grad);
            let trial_loss = total_loss(samples, &trial)?;
            if trial_loss <= loss {
                current = trial;
                loss = trial_loss;
                break;
            }
            lr *= 0.5;
            if lr < 1e-14 {
                return Ok(current);
            }
        }
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featmap::{gaussian_label, xcorr2d};

    fn random_feat(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(c, h, w, 8.0, |_, _, _| rng.random_range(0.0..1.0)).unwrap()
    }

    fn small_params(input: usize, seed: u64) -> ClassifierParams {
        let mut p = ClassifierParams::with_dims(Dims { input, mid: 8, hidden: 2, filter: 4 }, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        p.blocks.filter_w.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        p
    }

    #[test]
    fn zero_filter_gives_zero_scores() {
        let p = ClassifierParams::new(9, 1).unwrap();
        let (score, _) = forward(&random_feat(9, 12, 10, 2), &p).unwrap();
        assert_eq!((score.height(), score.width()), (12, 10));
        assert!(score.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_input_gives_uniform_spatial_weight() {
        let p = ClassifierParams::new(9, 3).unwrap();
        let feat = FeatureMap::from_fn(9, 6, 7, 8.0, |ch, _, _| ch as f64 * 0.1).unwrap();
        let (_, att) = forward(&feat, &p).unwrap();
        for &a in &att.spatial_weight {
            assert!((a - 1.0 / 42.0).abs() < 1e-15);
        }
        assert!(att.channel_scale.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let p = ClassifierParams::new(9, 3).unwrap();
        assert!(matches!(forward(&random_feat(4, 5, 5, 1), &p), Err(Error::ShapeMismatch(_))));
        let label = ScoreMap::filled(4, 4, 0.0).unwrap();
        assert!(gradients(&random_feat(9, 5, 5, 1), &label, 1.0, &p).is_err());
    }

    #[test]
    fn filter_is_linear_given_frozen_embedding() {
        let p = small_params(3, 5);
        let feat = random_feat(3, 7, 6, 9);
        let mut p2 = p.clone();
        p2.blocks.filter_w.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64 * 0.37).sin());
        let mut sum = p.clone();
        sum.blocks.filter_w = p.blocks.filter_w.iter().zip(&p2.blocks.filter_w).map(|(a, b)| a + b).collect();
        let mut zero = p.clone();
        zero.blocks.filter_w.iter_mut().for_each(|v| *v = 0.0);
        let f = |q: &ClassifierParams| forward(&feat, q).unwrap().0;
        let (a, b, s, z) = (f(&p), f(&p2), f(&sum), f(&zero));
        for i in 0..a.data().len() {
            assert!((s.data()[i] - (a.data()[i] + b.data()[i] - z.data()[i])).abs() < 1e-9);
        }
        let mut scaled = p.clone();
        scaled.blocks.filter_w.iter_mut().for_each(|v| *v *= 2.5);
        let sc = f(&scaled);
        for i in 0..a.data().len() {
            assert!((sc.data()[i] - 2.5 * a.data()[i]).abs() < 1e-12 * (1.0 + a.data()[i].abs()));
        }
    }

    #[test]
    fn matches_straight_line_reference() {
        // independent restatement of the pipeline on plain nested loops
        let p = small_params(3, 17);
        let feat = random_feat(3, 6, 5, 4);
        let (c_in, mid, hid, n) = (3, 8, 2, 30);
        let b = &p.blocks;
        let mut z = vec![vec![0.0; n]; mid];
        for o in 0..mid {
            for q in 0..n {
                let mut v = b.compress_b[o];
                for i in 0..c_in {
                    v += b.compress_w[o * c_in + i] * feat.data()[i * n + q];
                }
                z[o][q] = v.max(0.0);
            }
        }
        let g: Vec<f64> = z.iter().map(|row| row.iter().sum::<f64>() / n as f64).collect();
        let a1: Vec<f64> = (0..hid)
            .map(|h| (b.fc1_b[h] + (0..mid).map(|o| b.fc1_w[h * mid + o] * g[o]).sum::<f64>()).max(0.0))
            .collect();
        let s: Vec<f64> = (0..mid)
            .map(|o| 1.0 / (1.0 + (-(b.fc2_b[o] + (0..hid).map(|h| b.fc2_w[o * hid + h] * a1[h]).sum::<f64>())).exp()))
            .collect();
        let m: Vec<f64> = (0..n).map(|q| (0..mid).map(|o| z[o][q] * s[o]).sum::<f64>() / mid as f64).collect();
        let denom: f64 = m.iter().map(|v| v.exp()).sum();
        let att: Vec<f64> = m.iter().map(|v| v.exp() / denom).collect();
        let zs = FeatureMap::from_fn(mid, 6, 5, 8.0, |o, r, c| {
            let q = r * 5 + c;
            z[o][q] * s[o] * (1.0 + n as f64 * att[q])
        })
        .unwrap();
        let kernel = FeatureMap::new(mid, 4, 4, b.filter_w.clone(), 8.0).unwrap();
        // same mode == valid on a map padded 1 top/left and 2 bottom/right
        let padded = FeatureMap::from_fn(mid, 9, 8, 8.0, |o, r, c| {
            if (1..7).contains(&r) && (1..6).contains(&c) {
                zs.at(o, r - 1, c - 1)
            } else {
                0.0
            }
        })
        .unwrap();
        let reference = xcorr2d(&padded, &kernel, CorrMode::Valid).unwrap();
        let (score, state) = forward(&feat, &p).unwrap();
        for (x, y) in score.data().iter().zip(reference.data()) {
            assert!((x - y).abs() < 1e-9, "{x} vs {y}");
        }
        for (x, y) in state.spatial_weight.iter().zip(&att) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_zero_at_exact_fit() {
        let p = small_params(2, 8);
        let feat = random_feat(2, 5, 5, 3);
        let (score, _) = forward(&feat, &p).unwrap();
        let mut q = p.clone();
        q.reg = RegLambda { compress: 0.0, fc1: 0.0, fc2: 0.0, filter: 0.0 };
        let g = gradients(&feat, &score, 1.0, &q).unwrap();
        assert!(g.blocks().iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn doubling_weight_doubles_data_gradient() {
        let mut p = small_params(2, 8);
        p.reg.filter = 0.0;
        let feat = random_feat(2, 5, 5, 3);
        let label = gaussian_label(5, 5, (2.0, 2.0), 1.0).unwrap();
        let g1 = gradients(&feat, &label, 0.5, &p).unwrap();
        let g2 = gradients(&feat, &label, 1.0, &p).unwrap();
        for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn finetune_reduces_loss() {
        let mut p = ClassifierParams::with_dims(Dims { input: 3, mid: 8, hidden: 2, filter: 4 }, 21).unwrap();
        p.reg.filter = 1e-3;
        let feat = random_feat(3, 8, 8, 22);
        let label = gaussian_label(8, 8, (3.5, 4.0), 1.2).unwrap();
        let samples = vec![TrainingSample { feat, label, weight: 1.0 }];
        let before = total_loss(&samples, &p).unwrap();
        let tuned = finetune_init(&samples, &p, 50, 0.01).unwrap();
        let after = total_loss(&samples, &tuned).unwrap();
        assert!(after * 2.0 <= before, "{before} -> {after}");
        assert!(finetune_init(&samples, &p, 0, 0.01).is_err());
        assert!(finetune_init(&samples, &p, 3, 0.0).is_err());
        assert!(finetune_init(&[], &p, 3, 0.01).is_err());
    }

    #[test]
    fn finetune_at_stationary_point_is_a_no_op() {
        // zero filter, zero labels, no regularisation: every gradient vanishes
        let mut p = ClassifierParams::with_dims(Dims { input: 2, mid: 4, hidden: 1, filter: 4 }, 2).unwrap();
        p.reg.filter = 0.0;
        let samples = vec![TrainingSample {
            feat: random_feat(2, 6, 6, 1),
            label: ScoreMap::filled(6, 6, 0.0).unwrap(),
            weight: 1.0,
        }];
        let tuned = finetune_init(&samples, &p, 5, 0.01).unwrap();
        assert_eq!(tuned, p);
    }

    #[test]
    fn snapshot_round_trip_and_rejection() {
        let p = small_params(3, 44);
        let bytes = p.to_bytes();
        assert_eq!(ClassifierParams::from_bytes(&bytes).unwrap(), p);
        assert!(ClassifierParams::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ClassifierParams::from_bytes(&bad).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(ClassifierParams::from_bytes(&ver).is_err());
    }
}
