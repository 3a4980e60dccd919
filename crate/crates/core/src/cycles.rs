//! Cycle matrices: segmentation of a warped signal into unit periods, SVD
//! entropy, and cyclic-shift synchronization of the rows.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WarpError};
use crate::fft::circular_xcorr;
use crate::linalg::{singular_values, top_symmetric_eigenpairs, Matrix};
use crate::scalar::Real;
use crate::warping::WarpedSignal;

/// Rows are consecutive unit cycles of a warped signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMatrix<T> {
    /// `P x L` cycle samples.
    pub rows: Matrix<T>,
    /// Original-time interval covered by each row.
    pub row_spans: Vec<(T, T)>,
    /// Samples per cycle.
    pub samples_per_cycle: usize,
    /// Index of the first row within the full warped signal.
    pub first_cycle: usize,
}

impl<T: Real> CycleMatrix<T> {
    pub fn n_cycles(&self) -> usize {
        self.rows.rows()
    }

    /// Same spans, new row contents.
    pub fn with_rows(&self, rows: Matrix<T>) -> Result<Self> {
        if rows.rows() != self.rows.rows() || rows.cols() != self.rows.cols() {
            return Err(WarpError::invalid("replacement rows have the wrong shape"));
        }
        Ok(CycleMatrix {
            rows,
            row_spans: self.row_spans.clone(),
            samples_per_cycle: self.samples_per_cycle,
            first_cycle: self.first_cycle,
        })
    }
}

/// Segments into `L`-sample cycles, keeping every complete cycle.
pub fn segment<T: Real>(warped: &WarpedSignal<T>, samples_per_cycle: usize) -> Result<CycleMatrix<T>> {
    segment_trimmed(warped, samples_per_cycle, 0)
}

/// Segments into `L`-sample cycles and drops `edge_cycles` complete cycles
/// at each end.
pub fn segment_trimmed<T: Real>(
    warped: &WarpedSignal<T>,
    samples_per_cycle: usize,
    edge_cycles: usize,
) -> Result<CycleMatrix<T>> {
    let l = samples_per_cycle;
    if l == 0 {
        return Err(WarpError::invalid("samples per cycle must be positive"));
    }
    let lf = T::from_usize_lossy(l);
    let grid = warped.map.delta_tau * lf;
    if (grid - T::one()).magnitude() > T::lit(1e-6) {
        return Err(WarpError::invalid(format!(
            "{l} samples per cycle does not match the warped grid spacing {}",
            warped.map.delta_tau
        )));
    }
    let x = warped.signal.samples();
    let total = x.len() / l;
    if total < 2 + 2 * edge_cycles {
        return Err(WarpError::insufficient(format!(
            "only {total} complete cycles after warping; at least {} needed",
            2 + 2 * edge_cycles
        )));
    }
    let first = edge_cycles;
    let last = total - edge_cycles;
    let p = last - first;
    let data = x[first * l..last * l].to_vec();
    let rows = Matrix::from_vec(p, l, data)?;
    if !rows.is_finite() {
        return Err(WarpError::numerical("cycle matrix contains non-finite samples"));
    }
    let taus: Vec<T> = (first..=last).map(|k| T::from_usize_lossy(k)).collect();
    let bounds = warped.map.to_original(&taus)?;
    let row_spans = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    Ok(CycleMatrix {
        rows,
        row_spans,
        samples_per_cycle: l,
        first_cycle: first,
    })
}

/// Shannon entropy (natural log) of the normalized singular values.
pub fn svd_entropy<T: Real>(matrix: &Matrix<T>) -> Result<T> {
    let sv = singular_values(matrix)?;
    let total: T = sv.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(WarpError::invalid("SVD entropy of an all-zero matrix is undefined"));
    }
    let mut s = T::zero();
    for &v in &sv {
        let p = v / total;
        if p > T::zero() {
            s = s - p * p.ln();
        }
    }
    Ok(s.max(T::zero()))
}

/// `roll(a, l)[n] = a[(n - l) mod L]`.
pub fn roll<T: Copy>(a: &[T], shift: usize) -> Vec<T> {
    let n = a.len();
    if n == 0 {
        return Vec::new();
    }
    let s = shift % n;
    (0..n).map(|i| a[(i + n - s) % n]).collect()
}

/// Continuous cyclic alignment of `b` onto `a`: the shift `delta` (samples,
/// in `[0, L)`) and gain `g` minimizing `|a - g * S(delta) b|`, where
/// `S(delta)` delays the trigonometric interpolant of `b` by `delta`. The
/// shift is located to `1 / subdivisions` of a sample around the best
/// integer shift. Returns `(delta, g, residual sum of squares)`.
pub fn fractional_alignment<T: Real>(a: &[T], b: &[T], subdivisions: usize) -> Result<(T, T, T)> {
    let (l0, _) = best_cyclic_shift(b, a)?;
    let n = a.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let spectrum = |x: &[T]| {
        let mut v: Vec<Complex<T>> = x.iter().map(|&r| Complex::new(r, T::zero())).collect();
        fwd.process(&mut v);
        v
    };
    let fa = spectrum(a);
    let fb = spectrum(b);
    let cross: Vec<Complex<T>> = fa.iter().zip(&fb).map(|(x, y)| *x * y.conj()).collect();
    let nf = T::from_usize_lossy(n);
    let freq = |k: usize| -> T {
        if 2 * k < n {
            T::from_usize_lossy(k)
        } else if 2 * k == n {
            T::zero()
        } else {
            -T::from_usize_lossy(n - k)
        }
    };
    let corr_at = |delta: T| -> T {
        let mut acc = T::zero();
        for (k, c) in cross.iter().enumerate() {
            let arg = T::two_pi() * freq(k) * delta / nf;
            acc = acc + c.re * arg.cos() - c.im * arg.sin();
        }
        acc / nf
    };
    let sub = subdivisions.max(1);
    let step = T::one() / T::from_usize_lossy(sub);
    let base = T::from_usize_lossy(l0);
    let mut best = (base, corr_at(base));
    for j in 1..=sub {
        for sign in [-T::one(), T::one()] {
            let d = base + sign * step * T::from_usize_lossy(j);
            let c = corr_at(d);
            if c > best.1 {
                best = (d, c);
            }
        }
    }
    let ea: T = a.iter().map(|&v| v * v).sum();
    let eb: T = b.iter().map(|&v| v * v).sum();
    let (delta, corr) = best;
    let delta = if delta < T::zero() { delta + nf } else if delta >= nf { delta - nf } else { delta };
    if !(eb > T::zero()) {
        return Ok((delta, T::zero(), ea));
    }
    let gain = corr / eb;
    let residual = (ea - corr * corr / eb).max(T::zero());
    Ok((delta, gain, residual))
}

/// Cyclic shift `l` minimizing `|roll(a, l) - b|` and the attained residual
/// norm. Ties go to the smallest angle `min(l, L - l)`, then the smaller `l`.
pub fn best_cyclic_shift<T: Real>(a: &[T], b: &[T]) -> Result<(usize, T)> {
    let mut planner = FftPlanner::new();
    best_cyclic_shift_with(&mut planner, a, b)
}

fn best_cyclic_shift_with<T: Real>(planner: &mut FftPlanner<T>, a: &[T], b: &[T]) -> Result<(usize, T)> {
    if a.len() != b.len() {
        return Err(WarpError::invalid("cyclic shift needs equal-length inputs"));
    }
    let n = a.len();
    if n == 0 {
        return Err(WarpError::invalid("cyclic shift of empty sequences"));
    }
    // roll(a, l) . b = sum_k b[k + l] a[k]
    let corr = circular_xcorr(planner, b, a);
    let energy: T = a.iter().chain(b).map(|&v| v * v).sum();
    let tol = energy * T::lit(1e-9);
    let top = corr.iter().copied().fold(T::neg_infinity(), T::max);
    let angle = |l: usize| l.min(n - l);
    let best = (0..n)
        .filter(|&l| top - corr[l] <= tol)
        .min_by_key(|&l| (angle(l), l))
        .unwrap_or(0);
    let rolled = roll(a, best);
    let residual = rolled
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<T>()
        .sqrt();
    Ok((best, residual))
}

/// Row shifts found by [`synchronize`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftAssignment {
    /// Row `i` is `roll(reference, shifts[i])`; aligned rows undo this.
    pub shifts: Vec<usize>,
    pub reference_row: usize,
}

/// Rounds half toward zero.
fn round_half_to_zero<T: Real>(x: T) -> T {
    let t = x.trunc();
    if (x - t).magnitude() == T::lit(0.5) {
        t
    } else {
        x.round()
    }
}

/// Nearest orthogonal matrix to the 2x2 block `[[a, b], [c, d]]`, as
/// `(angle, is_rotation)`. A rotation is `[[cos, -sin], [sin, cos]]`; a
/// reflection is `[[cos, sin], [sin, -cos]]`.
fn procrustes_2x2<T: Real>(a: T, b: T, c: T, d: T) -> (T, bool) {
    if a * d - b * c >= T::zero() {
        ((c - b).atan2(a + d), true)
    } else {
        ((c + b).atan2(a - d), false)
    }
}

const DENSE_PAIR_LIMIT: usize = 500;

fn pair_graph(p: usize, seed: u64) -> Vec<(usize, usize)> {
    if p <= DENSE_PAIR_LIMIT {
        return (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect();
    }
    let degree = (2.0 * (p as f64).ln()).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = std::collections::BTreeSet::new();
    let nodes: Vec<usize> = (0..p).collect();
    for i in 0..p {
        if i + 1 < p {
            pairs.insert((i, i + 1));
        }
        for &j in nodes.choose_multiple(&mut rng, degree) {
            if j != i {
                pairs.insert((i.min(j), i.max(j)));
            }
        }
    }
    pairs.into_iter().collect()
}

/// Aligns the rows by angular synchronization over the cyclic group: pairwise
/// best shifts become SO(2) blocks of a `2P x 2P` connection matrix whose top
/// two eigenvectors give one rotation per row after a per-block Procrustes
/// fit. Row 0 is the reference.
pub fn synchronize<T: Real>(matrix: &CycleMatrix<T>) -> Result<(CycleMatrix<T>, ShiftAssignment)> {
    let p = matrix.rows.rows();
    let l = matrix.rows.cols();
    if p < 2 {
        return Err(WarpError::insufficient("synchronization needs at least 2 cycles"));
    }
    let pairs = pair_graph(p, 0x5eed_c1c1e);
    let shifts: Vec<usize> = pairs
        .par_iter()
        .map_init(FftPlanner::new, |planner, &(i, j)| {
            best_cyclic_shift_with(planner, matrix.rows.row(i), matrix.rows.row(j)).map(|(s, _)| s)
        })
        .collect::<Result<_>>()?;

    let two_pi_over_l = T::two_pi() / T::from_usize_lossy(l);
    let mut c = Matrix::zeros(2 * p, 2 * p);
    let mut set_block = |i: usize, j: usize, theta: T| {
        let (s, co) = theta.sin_cos();
        c[(2 * i, 2 * j)] = co;
        c[(2 * i, 2 * j + 1)] = -s;
        c[(2 * i + 1, 2 * j)] = s;
        c[(2 * i + 1, 2 * j + 1)] = co;
    };
    for i in 0..p {
        set_block(i, i, T::zero());
    }
    // shift(i, j) = s_j - s_i, so block (i, j) carries the rotation by s_i - s_j.
    for (&(i, j), &s) in pairs.iter().zip(&shifts) {
        let theta = T::from_usize_lossy(s) * two_pi_over_l;
        set_block(i, j, -theta);
        set_block(j, i, theta);
    }
    let (_, q) = top_symmetric_eigenpairs(&c, 2)?;
    let blocks: Vec<(T, bool)> = (0..p)
        .map(|i| procrustes_2x2(q[0][2 * i], q[1][2 * i], q[0][2 * i + 1], q[1][2 * i + 1]))
        .collect();
    if blocks.iter().any(|(t, _)| !t.is_finite()) {
        return Err(WarpError::numerical("synchronization eigenvectors are not finite"));
    }
    let theta_ref = blocks[0].0;
    let lf = T::from_usize_lossy(l);
    let mut out = Vec::with_capacity(p);
    let mut data = Vec::with_capacity(p * l);
    for (i, &(theta, _)) in blocks.iter().enumerate() {
        // R_i R_ref^T is a rotation by the angle difference whether both
        // blocks are rotations or both are reflections.
        let rel = theta - theta_ref;
        let turns = rel / T::two_pi();
        let k = round_half_to_zero(turns * lf);
        let k = k.to_i64().unwrap_or(0).rem_euclid(l as i64) as usize;
        let k = if i == 0 { 0 } else { k };
        out.push(k);
        data.extend(roll(matrix.rows.row(i), (l - k) % l));
    }
    let aligned = matrix.with_rows(Matrix::from_vec(p, l, data)?)?;
    Ok((
        aligned,
        ShiftAssignment {
            shifts: out,
            reference_row: 0,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_model::Signal;
    use crate::warping::WarpMap;
    use proptest::prelude::*;
    use rand::Rng;

    fn cos_warped(cycles: usize, l: usize) -> WarpedSignal<f64> {
        let n = cycles * l + 1;
        let x: Vec<f64> = (0..n)
            .map(|m| (2.0 * std::f64::consts::PI * m as f64 / l as f64).cos())
            .collect();
        let map = WarpMap {
            source_times: (0..n).map(|m| m as f64 / (l * cycles) as f64).collect(),
            delta_tau: 1.0 / l as f64,
            composed: vec![],
        };
        WarpedSignal {
            signal: Signal::new(x, l as f64, 0.0).unwrap(),
            map,
            iteration: 1,
        }
    }

    fn template(l: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut t: Vec<f64> = (0..l).map(|_| rng.random::<f64>() - 0.5).collect();
        // Smooth a little so the template has a clear peak structure.
        for _ in 0..2 {
            t = (0..l).map(|i| (t[(i + l - 1) % l] + 2.0 * t[i] + t[(i + 1) % l]) / 4.0).collect();
        }
        t
    }

    #[test]
    fn periodic_signal_gives_identical_rows() {
        let w = cos_warped(40, 200);
        let m = segment(&w, 200).unwrap();
        assert_eq!(m.n_cycles(), 40);
        for i in 1..40 {
            let rms: f64 = m
                .rows
                .row(i)
                .iter()
                .zip(m.rows.row(0))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(rms < 1e-10);
        }
        assert!(m.row_spans.windows(2).all(|w| w[0].1 == w[1].0 && w[0].0 < w[1].0));
        assert!(m.row_spans[0].0 >= 0.0 && m.row_spans[39].1 <= 1.0 + 1e-12);
    }

    #[test]
    fn segmentation_errors() {
        let w = cos_warped(40, 200);
        assert!(segment(&w, 100).is_err());
        let short = cos_warped(1, 200);
        assert!(segment(&short, 200).is_err());
    }

    #[test]
    fn entropy_reference_values() {
        let u = [1.0, 2.0, -1.0];
        let v = [0.5, 1.0, 3.0, -2.0];
        let mut rank1 = Matrix::zeros(3, 4);
        for i in 0..3 {
            for j in 0..4 {
                rank1[(i, j)] = u[i] * v[j];
            }
        }
        assert!(svd_entropy(&rank1).unwrap() < 1e-7);
        let id = Matrix::<f64>::identity(5);
        assert!((svd_entropy(&id).unwrap() - 5f64.ln()).abs() < 1e-12);
        let mut d = Matrix::zeros(4, 3);
        d[(0, 0)] = 3.0;
        d[(1, 1)] = 1.0;
        let expect = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
        assert!((svd_entropy(&d).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.5623).abs() < 1e-4);
        assert!(svd_entropy(&Matrix::<f64>::zeros(3, 3)).is_err());
    }

    #[test]
    fn planted_shift_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = template(64, &mut rng);
        let b = roll(&a, 5);
        let (s, r) = best_cyclic_shift(&a, &b).unwrap();
        assert_eq!(s, 5);
        assert!(r < 1e-12);
        assert_eq!(best_cyclic_shift(&a, &a).unwrap().0, 0);
        assert_eq!(best_cyclic_shift(&[2.0; 16], &[2.0; 16]).unwrap().0, 0);
        assert!(best_cyclic_shift(&a, &b[..10]).is_err());
    }

    #[test]
    fn shift_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let a = template(37, &mut rng);
            let b = template(37, &mut rng);
            let (s, r) = best_cyclic_shift(&a, &b).unwrap();
            let brute = (0..37)
                .map(|l| {
                    roll(&a, l).iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((r - brute).abs() < 1e-9, "shift {s}");
        }
    }

    fn planted(p: usize, l: usize, shifts: &[usize], tpl: &[f64]) -> CycleMatrix<f64> {
        let mut data = Vec::new();
        for &s in &shifts[..p] {
            data.extend(roll(tpl, s));
        }
        CycleMatrix {
            rows: Matrix::from_vec(p, l, data).unwrap(),
            row_spans: (0..p).map(|i| (i as f64, i as f64 + 1.0)).collect(),
            samples_per_cycle: l,
            first_cycle: 0,
        }
    }

    #[test]
    fn synchronization_aligns_planted_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = 50;
        let tpl = template(l, &mut rng);
        let shifts: Vec<usize> = (0..10).map(|_| rng.random_range(0..l)).collect();
        let m = planted(10, l, &shifts, &tpl);
        let (aligned, a) = synchronize(&m).unwrap();
        assert!(svd_entropy(&aligned.rows).unwrap() < 1e-8);
        for i in 0..10 {
            assert_eq!(a.shifts[i], (shifts[i] + l - shifts[0]) % l);
        }
        assert_eq!(a.shifts[a.reference_row], 0);
    }

    #[test]
    fn aligned_input_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tpl = template(30, &mut rng);
        let m = planted(6, 30, &[0; 6], &tpl);
        let (aligned, a) = synchronize(&m).unwrap();
        assert!(a.shifts.iter().all(|&s| s == 0));
        assert_eq!(aligned.rows, m.rows);
    }

    #[test]
    fn two_templates_align_within_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let l = 40;
        let t1 = template(l, &mut rng);
        let t2 = template(l, &mut rng);
        let shifts: Vec<usize> = (0..10).map(|_| rng.random_range(0..l)).collect();
        let mut data = Vec::new();
        for (i, &s) in shifts.iter().enumerate() {
            data.extend(roll(if i < 5 { &t1 } else { &t2 }, s));
        }
        let m = CycleMatrix {
            rows: Matrix::from_vec(10, l, data).unwrap(),
            row_spans: (0..10).map(|i| (i as f64, i as f64 + 1.0)).collect(),
            samples_per_cycle: l,
            first_cycle: 0,
        };
        let (aligned, _) = synchronize(&m).unwrap();
        for group in [0..5, 5..10] {
            let rows: Vec<usize> = group.collect();
            for &i in &rows[1..] {
                let (s, _) = best_cyclic_shift(aligned.rows.row(rows[0]), aligned.rows.row(i)).unwrap();
                assert_eq!(s, 0);
            }
        }
        assert!(svd_entropy(&aligned.rows).unwrap() <= svd_entropy(&m.rows).unwrap() + 1e-9);
    }

    #[test]
    fn large_matrix_uses_sparse_pairs() {
        let g = pair_graph(600, 1);
        assert!(g.len() < 600 * 599 / 2 / 10);
        assert!((0..599).all(|i| g.binary_search(&(i, i + 1)).is_ok()));
    }

    #[test]
    fn fractional_shift_and_gain_recovered() {
        let l = 128;
        let wave = |delay: f64| -> Vec<f64> {
            (0..l)
                .map(|n| {
                    let t = std::f64::consts::TAU * (n as f64 - delay) / l as f64;
                    t.cos() + 0.5 * (3.0 * t).sin()
                })
                .collect()
        };
        let b = wave(0.0);
        for delay in [3.25, 0.5, 127.75] {
            let a: Vec<f64> = wave(delay).iter().map(|v| 2.0 * v).collect();
            let (d, g, rss) = fractional_alignment(&a, &b, 16).unwrap();
            assert!((d - delay).abs() < 1e-9, "{d} vs {delay}");
            assert!((g - 2.0).abs() < 1e-9, "gain {g}");
            assert!(rss < 1e-9, "rss {rss}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn shift_antisymmetry(seed in 0u64..10_000, l in 8usize..48) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = template(l, &mut rng);
            let b = template(l, &mut rng);
            let corr = circular_xcorr(&mut FftPlanner::new(), &b, &a);
            let top = corr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let unique = corr.iter().filter(|&&c| top - c < 1e-6).count() == 1;
            prop_assume!(unique);
            let (s1, _) = best_cyclic_shift(&a, &b).unwrap();
            let (s2, _) = best_cyclic_shift(&b, &a).unwrap();
            prop_assert_eq!((s1 + s2) % l, 0);
        }

        #[test]
        fn synchronization_never_increases_entropy(seed in 0u64..10_000, p in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = 32;
            let tpl = template(l, &mut rng);
            let shifts: Vec<usize> = (0..p).map(|_| rng.random_range(0..l)).collect();
            let m = planted(p, l, &shifts, &tpl);
            let (aligned, _) = synchronize(&m).unwrap();
            prop_assert!(svd_entropy(&aligned.rows).unwrap() <= svd_entropy(&m.rows).unwrap() + 1e-9);
        }

        #[test]
        fn synchronization_is_shift_equivariant(seed in 0u64..10_000, global in 0usize..32) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = 32;
            let tpl = template(l, &mut rng);
            let shifts: Vec<usize> = (0..8).map(|_| rng.random_range(0..l)).collect();
            let moved: Vec<usize> = shifts.iter().map(|s| (s + global) % l).collect();
            let (a, _) = synchronize(&planted(8, l, &shifts, &tpl)).unwrap();
            let (b, _) = synchronize(&planted(8, l, &moved, &tpl)).unwrap();
            for i in 0..8 {
                let expect = roll(a.rows.row(i), global);
                for (x, y) in expect.iter().zip(b.rows.row(i)) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
