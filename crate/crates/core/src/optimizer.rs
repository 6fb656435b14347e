//! Online filter learning: a weighted sample memory, the regularised
//! least-squares problem over it, and a matrix-free conjugate gradient
//! solver.
//!
//! With compression and attention frozen the classifier score is linear in
//! the filter weights `w`, so the objective
//! `L(w) = sum_j gamma_j ||J_j w - y_j||^2 + lambda ||w||^2`
//! is an exact quadratic with normal equations
//! `(sum_j gamma_j J_j^T J_j + lambda I) w = sum_j gamma_j J_j^T y_j`.

use crate::classifier::ClassifierParams;
use crate::error::{Error, Result};
use crate::featmap::{corr_accumulate, corr_kernel_adjoint, dot, FeatureMap, ScoreMap};

pub const DEFAULT_CAPACITY: usize = 250;
/// Minimum total weight of the first-frame samples.
pub const INITIAL_WEIGHT_FLOOR: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    /// Filter-input (embedded) features.
    pub feat: FeatureMap,
    pub label: ScoreMap,
    pub gamma: f64,
    pub frame_index: usize,
    /// First-frame samples are never evicted while others remain.
    pub initial: bool,
}

/// Bounded training set with recency weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMemory {
    capacity: usize,
    entries: Vec<MemoryEntry>,
}

impl SampleMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("memory capacity must be positive".into()));
        }
        Ok(Self { capacity, entries: Vec::new() })
    }

    /// Memory seeded with equally weighted first-frame samples.
    pub fn with_initial(capacity: usize, samples: Vec<(FeatureMap, ScoreMap)>, frame_index: usize) -> Result<Self> {
        let mut mem = Self::new(capacity)?;
        if samples.len() > capacity {
            return Err(Error::InvalidArgument(format!(
                "{} initial samples exceed capacity {capacity}",
                samples.len()
            )));
        }
        let gamma = 1.0 / samples.len().max(1) as f64;
        mem.entries = samples
            .into_iter()
            .map(|(feat, label)| MemoryEntry { feat, label, gamma, frame_index, initial: true })
            .collect();
        Ok(mem)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.gamma).collect()
    }

    /// Total weight held by first-frame samples.
    pub fn initial_weight(&self) -> f64 {
        self.entries.iter().filter(|e| e.initial).map(|e| e.gamma).sum()
    }

    /// Inserts a sample with weight `rate`, scaling the others by `1 - rate`.
    /// At capacity the oldest non-initial entry is dropped first. Weights are
    /// renormalised and the initial samples are lifted to a joint floor.
    pub fn add_sample(&mut self, feat: FeatureMap, label: ScoreMap, rate: f64, frame_index: usize) -> Result<()> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::InvalidArgument(format!("memory rate {rate} outside (0, 1)")));
        }
        if let Some(last) = self.entries.iter().filter(|e| !e.initial).map(|e| e.frame_index).max() {
            if frame_index <= last {
                return Err(Error::InvalidArgument(format!(
                    "frame index {frame_index} not after {last}"
                )));
            }
        }
        if self.entries.is_empty() {
            self.entries.push(MemoryEntry { feat, label, gamma: 1.0, frame_index, initial: false });
            return Ok(());
        }
        if self.entries.len() == self.capacity {
            let victim = self.entries.iter().position(|e| !e.initial).unwrap_or(0);
            self.entries.remove(victim);
        }
        for e in &mut self.entries {
            e.gamma *= 1.0 - rate;
        }
        self.entries.push(MemoryEntry { feat, label, gamma: rate, frame_index, initial: false });
        self.normalize();
        Ok(())
    }

    fn normalize(&mut self) {
        let total: f64 = self.entries.iter().map(|e| e.gamma).sum();
        if total > 0.0 {
            self.entries.iter_mut().for_each(|e| e.gamma /= total);
        }
        let init = self.initial_weight();
        let has_recent = self.entries.iter().any(|e| !e.initial);
        if init > 0.0 && has_recent && init < INITIAL_WEIGHT_FLOOR {
            let rest = 1.0 - init;
            for e in &mut self.entries {
                if e.initial {
                    e.gamma *= INITIAL_WEIGHT_FLOOR / init;
                } else {
                    e.gamma *= (1.0 - INITIAL_WEIGHT_FLOOR) / rest;
                }
            }
        }
    }
}

/// Symmetric linear map given by its action.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

/// Explicit square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    n: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::ShapeMismatch(format!("{n}x{n} matrix needs {} entries", n * n)));
        }
        Ok(Self { n, data })
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n + c]
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(self.n) {
            *o = dot(&self.data[r * self.n..(r + 1) * self.n], x);
        }
    }
}

/// Matrix-free normal equations of the filter objective over a memory.
pub struct NormalEquations<'a> {
    entries: &'a [MemoryEntry],
    lambda: f64,
    channels: usize,
    ksize: usize,
    params: &'a ClassifierParams,
    rhs: Vec<f64>,
}

impl<'a> NormalEquations<'a> {
    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Scores of every entry for filter `w`, i.e. `J_j w`.
    fn response(&self, entry: &MemoryEntry, w: &[f64], out: &mut Vec<f64>) {
        let (h, wd) = (entry.feat.height(), entry.feat.width());
        let geo = self.params.filter_geometry(h, wd);
        out.clear();
        out.resize(h * wd, 0.0);
        corr_accumulate(entry.feat.data(), h, wd, self.channels, w, &geo, out);
    }

    /// `L(w) = sum_j gamma_j ||J_j w - y_j||^2 + lambda ||w||^2`
    pub fn loss(&self, w: &[f64]) -> f64 {
        let mut buf = Vec::new();
        let mut total = self.lambda * dot(w, w);
        for e in self.entries {
            self.response(e, w, &mut buf);
            total += e.gamma * buf.iter().zip(e.label.data()).map(|(s, y)| (s - y) * (s - y)).sum::<f64>();
        }
        total
    }
}

impl LinearOperator for NormalEquations<'_> {
    fn dim(&self) -> usize {
        self.channels * self.ksize * self.ksize
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.lambda * xi;
        }
        let mut buf = Vec::new();
        for e in self.entries {
            if e.gamma == 0.0 {
                continue;
            }
            self.response(e, x, &mut buf);
            buf.iter_mut().for_each(|v| *v *= e.gamma);
            let (h, w) = (e.feat.height(), e.feat.width());
            let geo = self.params.filter_geometry(h, w);
            corr_kernel_adjoint(e.feat.data(), h, w, self.channels, &buf, &geo, out);
        }
    }
}

/// Normal equations of the filter objective over `mem` with the frozen
/// embedding and the filter regulariser of `params`.
pub fn build_quadratic<'a>(mem: &'a SampleMemory, params: &'a ClassifierParams) -> Result<NormalEquations<'a>> {
    if mem.is_empty() {
        return Err(Error::EmptyMemory);
    }
    let channels = params.dims.mid;
    for e in mem.entries() {
        if e.feat.channels() != channels {
            return Err(Error::ShapeMismatch(format!(
                "memory features have {} channels, filter expects {channels}",
                e.feat.channels()
            )));
        }
        if e.feat.height() != e.label.height() || e.feat.width() != e.label.width() {
            return Err(Error::ShapeMismatch("memory label dims differ from features".into()));
        }
    }
    let mut eq = NormalEquations {
        entries: mem.entries(),
        lambda: params.reg.filter,
        channels,
        ksize: params.dims.filter,
        params,
        rhs: Vec::new(),
    };
    let mut rhs = vec![0.0; eq.dim()];
    for e in mem.entries() {
        let (h, w) = (e.feat.height(), e.feat.width());
        let weighted: Vec<f64> = e.label.data().iter().map(|y| e.gamma * y).collect();
        let geo = params.filter_geometry(h, w);
        corr_kernel_adjoint(e.feat.data(), h, w, channels, &weighted, &geo, &mut rhs);
    }
    eq.rhs = rhs;
    Ok(eq)
}

/// Iterate of the conjugate gradient method.
#[derive(Debug, Clone)]
pub struct CgState {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    pub direction: Vec<f64>,
    /// Step length of the last iteration.
    pub alpha: f64,
    pub iteration: usize,
    rr: f64,
    ap: Vec<f64>,
}

impl CgState {
    pub fn new(op: &dyn LinearOperator, rhs: &[f64], x0: &[f64]) -> Result<Self> {
        let n = op.dim();
        if rhs.len() != n || x0.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "operator dim {n}, rhs {}, x0 {}",
                rhs.len(),
                x0.len()
            )));
        }
        let mut ax = vec![0.0; n];
        op.apply(x0, &mut ax);
        let residual: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let rr = dot(&residual, &residual);
        Ok(Self { x: x0.to_vec(), direction: residual.clone(), residual, alpha: 0.0, iteration: 0, rr, ap: ax })
    }

    pub fn residual_norm(&self) -> f64 {
        self.rr.sqrt()
    }

    /// One CG iteration. Fails on non-positive curvature along the search
    /// direction.
    pub fn step(&mut self, op: &dyn LinearOperator) -> Result<()> {
        op.apply(&self.direction, &mut self.ap);
        let curvature = dot(&self.direction, &self.ap);
        if !(curvature > 0.0) {
            return Err(Error::NonPositiveCurvature { iteration: self.iteration, curvature });
        }
        let alpha = self.rr / curvature;
        for ((x, r), (p, ap)) in self.x.iter_mut().zip(self.residual.iter_mut()).zip(self.direction.iter().zip(&self.ap)) {
            *x += alpha * p;
            *r -= alpha * ap;
        }
        let rr_new = dot(&self.residual, &self.residual);
        let beta = rr_new / self.rr;
        for (p, r) in self.direction.iter_mut().zip(&self.residual) {
            *p = r + beta * *p;
        }
        self.rr = rr_new;
        self.alpha = alpha;
        self.iteration += 1;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Conjugate gradient from `x0`; stops once `||r|| <= tol * ||rhs||` or after
/// `max_iter` iterations.
pub fn cg_solve(op: &dyn LinearOperator, rhs: &[f64], x0: &[f64], max_iter: usize, tol: f64) -> Result<CgOutcome> {
    if max_iter == 0 || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("max_iter={max_iter}, tol={tol}")));
    }
    let target = tol * dot(rhs, rhs).sqrt();
    let mut state = CgState::new(op, rhs, x0)?;
    while state.iteration < max_iter && state.residual_norm() > target {
        state.step(op)?;
    }
    Ok(CgOutcome { residual_norm: state.residual_norm(), iterations: state.iteration, x: state.x })
}

/// Relative residual at which filter solves stop early.
pub const FILTER_CG_TOL: f64 = 1e-10;

/// Re-solves the filter over the memory: `gn_steps` outer passes of at most
/// `cg_iters` CG iterations each, warm-started from the current filter.
///
/// The frozen embedding makes the objective exactly quadratic, so every outer
/// pass sees the same operator and residual; the Krylov state is kept across
/// passes instead of being restarted, and the call converges like a single
/// run of `gn_steps * cg_iters` iterations.
pub fn update_filter(
    mem: &SampleMemory,
    params: &ClassifierParams,
    gn_steps: usize,
    cg_iters: usize,
) -> Result<ClassifierParams> {
    if gn_steps == 0 || cg_iters == 0 {
        return Err(Error::InvalidArgument(format!("gn_steps={gn_steps}, cg_iters={cg_iters}")));
    }
    let eq = build_quadratic(mem, params)?;
    let target = FILTER_CG_TOL * dot(eq.rhs(), eq.rhs()).sqrt();
    let mut state = CgState::new(&eq, eq.rhs(), &params.blocks.filter_w)?;
    'outer: for _ in 0..gn_steps {
        for _ in 0..cg_iters {
            if state.residual_norm() <= target {
                break 'outer;
            }
            state.step(&eq)?;
        }
    }
    let mut updated = params.clone();
    updated.blocks.filter_w = state.x;
    Ok(updated)
}

/// Objective value of the current filter over `mem`.
pub fn filter_loss(mem: &SampleMemory, params: &ClassifierParams) -> Result<f64> {
    Ok(build_quadratic(mem, params)?.loss(&params.blocks.filter_w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dummy(frame: usize) -> (FeatureMap, ScoreMap) {
        let f = FeatureMap::zeros(1, 2, 2, 1.0).unwrap();
        let _ = frame;
        (f, ScoreMap::filled(2, 2, 0.0).unwrap())
    }

    #[test]
    fn first_sample_gets_full_weight() {
        let mut mem = SampleMemory::new(4).unwrap();
        let (f, l) = dummy(0);
        mem.add_sample(f, l, 0.1, 0).unwrap();
        assert_eq!(mem.weights(), vec![1.0]);
    }

    #[test]
    fn weight_recursion_with_protected_initial() {
        let (f, l) = dummy(0);
        let mut mem = SampleMemory::with_initial(10, vec![(f.clone(), l.clone())], 0).unwrap();
        mem.add_sample(f.clone(), l.clone(), 0.1, 1).unwrap();
        mem.add_sample(f.clone(), l.clone(), 0.1, 2).unwrap();
        // hand recursion: [1] -> [0.9, 0.1] -> [0.81, 0.09, 0.1]
        let expect = [0.81, 0.09, 0.1];
        for (w, e) in mem.weights().iter().zip(expect) {
            assert!((w - e).abs() < 1e-12);
        }
        // floor binds with a large rate
        let mut mem = SampleMemory::with_initial(10, vec![(f.clone(), l.clone())], 0).unwrap();
        for t in 1..=3 {
            mem.add_sample(f.clone(), l.clone(), 0.5, t).unwrap();
        }
        // unfloored: [0.125, 0.125, 0.25, 0.5]; floor lifts initial to 0.25
        let expect = [0.25, 0.125 * 0.75 / 0.875, 0.25 * 0.75 / 0.875, 0.5 * 0.75 / 0.875];
        for (w, e) in mem.weights().iter().zip(expect) {
            assert!((w - e).abs() < 1e-12, "{:?}", mem.weights());
        }
    }

    #[test]
    fn eviction_drops_oldest_recent_sample() {
        let (f, l) = dummy(0);
        let mut mem = SampleMemory::with_initial(3, vec![(f.clone(), l.clone())], 0).unwrap();
        for t in 1..=5 {
            mem.add_sample(f.clone(), l.clone(), 0.2, t).unwrap();
        }
        assert_eq!(mem.len(), 3);
        let frames: Vec<usize> = mem.entries().iter().map(|e| e.frame_index).collect();
        assert_eq!(frames, vec![0, 4, 5]);
        assert!(mem.entries()[0].initial);
        assert!((mem.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn add_sample_rejects_bad_input() {
        let (f, l) = dummy(0);
        let mut mem = SampleMemory::new(3).unwrap();
        assert!(mem.add_sample(f.clone(), l.clone(), 0.0, 1).is_err());
        assert!(mem.add_sample(f.clone(), l.clone(), 1.0, 1).is_err());
        mem.add_sample(f.clone(), l.clone(), 0.1, 5).unwrap();
        assert!(mem.add_sample(f, l, 0.1, 5).is_err());
    }

    #[test]
    fn cg_identity_and_two_by_two() {
        let eye = DenseOperator::new(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        let out = cg_solve(&eye, &[1.0, -2.0, 3.0], &[0.0; 3], 10, 1e-12).unwrap();
        assert_eq!(out.iterations, 1);
        assert_eq!(out.x, vec![1.0, -2.0, 3.0]);

        let a = DenseOperator::new(2, vec![4.0, 1.0, 1.0, 3.0]).unwrap();
        let out = cg_solve(&a, &[1.0, 2.0], &[0.0, 0.0], 2, 1e-14).unwrap();
        assert!((out.x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((out.x[1] - 7.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn cg_detects_broken_operator() {
        let neg = DenseOperator::new(2, vec![-1.0, 0.0, 0.0, -2.0]).unwrap();
        assert!(matches!(
            cg_solve(&neg, &[1.0, 1.0], &[0.0, 0.0], 5, 1e-9),
            Err(Error::NonPositiveCurvature { .. })
        ));
        assert!(cg_solve(&neg, &[1.0], &[0.0, 0.0], 5, 1e-9).is_err());
        assert!(cg_solve(&neg, &[1.0, 1.0], &[0.0, 0.0], 0, 1e-9).is_err());
    }

    #[test]
    fn empty_memory_has_no_quadratic() {
        let mem = SampleMemory::new(5).unwrap();
        let params = ClassifierParams::new(9, 0).unwrap();
        assert!(matches!(build_quadratic(&mem, &params), Err(Error::EmptyMemory)));
    }

    #[test]
    fn zero_sample_leaves_pure_regulariser() {
        let mut params = ClassifierParams::with_dims(
            crate::classifier::Dims { input: 2, mid: 2, hidden: 1, filter: 4 },
            0,
        )
        .unwrap();
        params.reg.filter = 0.3;
        let mem = SampleMemory::with_initial(
            5,
            vec![(FeatureMap::zeros(2, 5, 5, 1.0).unwrap(), ScoreMap::filled(5, 5, 0.0).unwrap())],
            0,
        )
        .unwrap();
        let eq = build_quadratic(&mem, &params).unwrap();
        let v: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let mut out = vec![0.0; 32];
        eq.apply(&v, &mut out);
        for (o, x) in out.iter().zip(&v) {
            assert!((o - 0.3 * x).abs() < 1e-15);
        }
        assert!(eq.rhs().iter().all(|&b| b == 0.0));
    }
}
