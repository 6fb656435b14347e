use fusetrack_core::classifier::{ClassifierParams, Dims};
use fusetrack_core::featmap::{FeatureMap, ScoreMap};
use fusetrack_core::optimizer::{build_quadratic, cg_solve, filter_loss, update_filter, DenseOperator, LinearOperator, SampleMemory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const K: usize = 4;

/// Explicit design matrix of a same-mode 4x4 correlation: row `(r, c)`,
/// column `(ch, ky, kx)` holds the input cell `(r + ky - 1, c + kx - 1)`.
fn design_matrix(feat: &FeatureMap) -> Vec<Vec<f64>> {
    let (h, w, ch) = (feat.height(), feat.width(), feat.channels());
    let mut rows = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let mut row = vec![0.0; ch * K * K];
            for k in 0..ch {
                for ky in 0..K {
                    for kx in 0..K {
                        let (y, x) = (r as isize + ky as isize - 1, c as isize + kx as isize - 1);
                        if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                            row[(k * K + ky) * K + kx] = feat.at(k, y as usize, x as usize);
                        }
                    }
                }
            }
            rows.push(row);
        }
    }
    rows
}

fn random_memory(rng: &mut ChaCha8Rng, channels: usize, h: usize, w: usize, count: usize) -> SampleMemory {
    let initial: Vec<(FeatureMap, ScoreMap)> = (0..count)
        .map(|_| {
            let f = FeatureMap::from_fn(channels, h, w, 8.0, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
            let l = ScoreMap::from_fn(h, w, |_, _| rng.random_range(0.0..1.0)).unwrap();
            (f, l)
        })
        .collect();
    let mut mem = SampleMemory::with_initial(20, initial, 0).unwrap();
    for t in 1..4 {
        let f = FeatureMap::from_fn(channels, h, w, 8.0, |_, _, _| rng.random_range(-1.0..1.0)).unwrap();
        let l = ScoreMap::from_fn(h, w, |_, _| rng.random_range(0.0..1.0)).unwrap();
        mem.add_sample(f, l, 0.2, t).unwrap();
    }
    mem
}

fn params_for(channels: usize, seed: u64) -> ClassifierParams {
    ClassifierParams::with_dims(Dims { input: 3, mid: channels, hidden: 1, filter: K }, seed).unwrap()
}

fn dense_system(mem: &SampleMemory, lambda: f64) -> (DenseOperator, Vec<f64>) {
    let n = mem.entries()[0].feat.channels() * K * K;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    for e in mem.entries() {
        let j = design_matrix(&e.feat);
        for (row, y) in j.iter().zip(e.label.data()) {
            for p in 0..n {
                b[p] += e.gamma * row[p] * y;
                for q in 0..n {
                    a[p * n + q] += e.gamma * row[p] * row[q];
                }
            }
        }
    }
    for p in 0..n {
        a[p * n + p] += lambda;
    }
    (DenseOperator::new(n, a).unwrap(), b)
}

fn solve(op: &DenseOperator, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut a: Vec<Vec<f64>> = (0..n).map(|r| (0..n).map(|c| op.at(r, c)).chain([b[r]]).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..=n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][n] - s) / a[r][r];
    }
    x
}

#[test]
fn operator_matches_explicit_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mem = random_memory(&mut rng, 2, 5, 5, 3);
    let params = params_for(2, 7);
    let eq = build_quadratic(&mem, &params).unwrap();
    let (dense, b) = dense_system(&mem, params.reg.filter);
    assert_eq!(eq.dim(), 32);
    for (got, want) in eq.rhs().iter().zip(&b) {
        assert!((got - want).abs() < 1e-12, "rhs {got} vs {want}");
    }
    for p in 0..eq.dim() {
        let mut unit = vec![0.0; eq.dim()];
        unit[p] = 1.0;
        let mut col = vec![0.0; eq.dim()];
        eq.apply(&unit, &mut col);
        for q in 0..eq.dim() {
            assert!((col[q] - dense.at(q, p)).abs() < 1e-12, "A[{q},{p}]");
        }
    }
}

#[test]
fn update_filter_reaches_the_direct_solution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mem = random_memory(&mut rng, 2, 6, 5, 4);
    let params = params_for(2, 11);
    let (dense, b) = dense_system(&mem, params.reg.filter);
    let exact = solve(&dense, &b);
    let updated = update_filter(&mem, &params, 6, 10).unwrap();
    let scale = exact.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (got, want) in updated.blocks.filter_w.iter().zip(&exact) {
        assert!((got - want).abs() <= 1e-6 * scale, "{got} vs {want}");
    }
}

#[test]
fn two_by_two_system() {
    let op = DenseOperator::new(2, vec![4.0, 1.0, 1.0, 3.0]).unwrap();
    let out = cg_solve(&op, &[1.0, 2.0], &[0.0, 0.0], 2, 1e-14).unwrap();
    assert!((out.x[0] - 1.0 / 11.0).abs() < 1e-12);
    assert!((out.x[1] - 7.0 / 11.0).abs() < 1e-12);
}

#[test]
fn updates_never_raise_the_loss_and_are_idempotent() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mem = random_memory(&mut rng, 3, 6, 6, 3);
        let mut params = params_for(3, seed);
        params.blocks.filter_w.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let before = filter_loss(&mem, &params).unwrap();
        let once = update_filter(&mem, &params, 6, 10).unwrap();
        let after = filter_loss(&mem, &once).unwrap();
        assert!(after <= before + 1e-10, "seed {seed}: {after} > {before}");
        let twice = update_filter(&mem, &once, 6, 10).unwrap();
        let norm = |w: &[f64]| w.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (n1, n2) = (norm(&once.blocks.filter_w), norm(&twice.blocks.filter_w));
        assert!((n1 - n2).abs() <= 1e-6 * n1, "seed {seed}: {n1} vs {n2}");
    }
}

#[test]
fn data_term_is_positive_semidefinite() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mem = random_memory(&mut rng, 2, 5, 5, 2);
    let params = params_for(2, 3);
    let eq = build_quadratic(&mem, &params).unwrap();
    let x: Vec<f64> = (0..eq.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut out = vec![0.0; eq.dim()];
    eq.apply(&x, &mut out);
    let quad: f64 = x.iter().zip(&out).map(|(a, b)| a * b).sum();
    let reg: f64 = params.reg.filter * x.iter().map(|v| v * v).sum::<f64>();
    assert!(quad >= reg - 1e-12);
}
