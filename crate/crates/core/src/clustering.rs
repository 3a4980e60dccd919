//! k-means clustering of cycle rows, Calinski-Harabasz model selection,
//! per-cluster wave-shape estimates, and change points from label jumps.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cycles::{fractional_alignment, CycleMatrix};
use crate::error::{Result, WarpError};
use crate::linalg::{cholesky_solve, Matrix};
use crate::scalar::Real;

const MAX_LLOYD_ITERATIONS: usize = 300;

/// Outcome of [`kmeans`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult<T> {
    /// Cluster of each row, numbered by first appearance.
    pub labels: Vec<usize>,
    /// `k x d` centroids in label order.
    pub centers: Matrix<T>,
    /// Within-cluster sum of squared distances.
    pub within_ss: T,
    /// Objective after each Lloyd step of the winning replicate.
    pub objective_trace: Vec<T>,
    /// Replicate that produced the result.
    pub replicate: usize,
}

fn sq_dist<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Real>(row: &[T], centers: &Matrix<T>) -> (usize, T) {
    let mut best = (0, T::infinity());
    for c in 0..centers.rows() {
        let d = sq_dist(row, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed<T: Real>(data: &Matrix<T>, k: usize, rng: &mut ChaCha8Rng) -> Matrix<T> {
    let n = data.rows();
    let mut centers = Matrix::zeros(k, data.cols());
    let first = Uniform::new(0, n).expect("non-empty data").sample(rng);
    centers.row_mut(0).copy_from_slice(data.row(first));
    let mut d2: Vec<T> = (0..n).map(|i| sq_dist(data.row(i), centers.row(0))).collect();
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    for c in 1..k {
        let total: T = d2.iter().copied().sum();
        let pick = if total > T::zero() {
            let target = T::lit(unit.sample(rng)) * total;
            let mut acc = T::zero();
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc = acc + d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            Uniform::new(0, n).expect("non-empty data").sample(rng)
        };
        centers.row_mut(c).copy_from_slice(data.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), centers.row(c)));
        }
    }
    centers
}

fn lloyd<T: Real>(data: &Matrix<T>, mut centers: Matrix<T>) -> (Vec<usize>, Matrix<T>, T, Vec<T>) {
    let n = data.rows();
    let k = centers.rows();
    let d = data.cols();
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let assign: Vec<(usize, T)> = (0..n).map(|i| nearest(data.row(i), &centers)).collect();
        let objective: T = assign.iter().map(|a| a.1).sum();
        trace.push(objective);
        let new_labels: Vec<usize> = assign.iter().map(|a| a.0).collect();
        if new_labels == labels {
            break;
        }
        labels = new_labels;
        let mut sums = Matrix::<T>::zeros(k, d);
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums.row_mut(c).iter_mut().zip(data.row(i)) {
                *s = *s + v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster at the point farthest from its centre.
                let far = (0..n)
                    .max_by(|&a, &b| assign[a].1.partial_cmp(&assign[b].1).expect("finite distances"))
                    .expect("non-empty data");
                centers.row_mut(c).copy_from_slice(data.row(far));
                labels[far] = c;
            } else {
                let inv = T::one() / T::from_usize_lossy(counts[c]);
                for (dst, &s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    let within: T = (0..n).map(|i| sq_dist(data.row(i), centers.row(labels[i]))).sum();
    (labels, centers, within, trace)
}

/// Renumbers labels by first appearance and permutes the centres to match.
fn canonical<T: Real>(labels: &[usize], centers: &Matrix<T>) -> (Vec<usize>, Matrix<T>) {
    let k = centers.rows();
    let mut map = vec![usize::MAX; k];
    let mut next = 0;
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    for m in map.iter_mut() {
        if *m == usize::MAX {
            *m = next;
            next += 1;
        }
    }
    let mut out = Matrix::zeros(k, centers.cols());
    for (old, &new) in map.iter().enumerate() {
        out.row_mut(new).copy_from_slice(centers.row(old));
    }
    (labels.iter().map(|&l| map[l]).collect(), out)
}

/// Best of `replicates` k-means++ / Lloyd runs by within-cluster sum of
/// squares. Replicate `r` draws from ChaCha stream `r` of `seed`; ties go to
/// the lowest replicate.
pub fn kmeans<T: Real>(data: &Matrix<T>, k: usize, replicates: usize, seed: u64) -> Result<KMeansResult<T>> {
    if k == 0 || replicates == 0 {
        return Err(WarpError::invalid("k and replicates must be positive"));
    }
    if k > data.rows() {
        return Err(WarpError::invalid(format!("k = {k} exceeds the {} rows", data.rows())));
    }
    if !data.is_finite() {
        return Err(WarpError::invalid("k-means input contains non-finite values"));
    }
    let runs: Vec<(Vec<usize>, Matrix<T>, T, Vec<T>)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let init = plus_plus_seed(data, k, &mut rng);
            lloyd(data, init)
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.2 < runs[best].2 {
            best = r;
        }
    }
    let (labels, centers, within_ss, objective_trace) = runs.into_iter().nth(best).expect("replicates > 0");
    let (labels, centers) = canonical(&labels, &centers);
    Ok(KMeansResult {
        labels,
        centers,
        within_ss,
        objective_trace,
        replicate: best,
    })
}

/// Calinski-Harabasz index of a partition: between-cluster dispersion per
/// degree of freedom over within-cluster dispersion per degree of freedom.
/// A perfect partition (zero within) scores infinity.
pub fn calinski_harabasz<T: Real>(data: &Matrix<T>, labels: &[usize], k: usize) -> T {
    let n = data.rows();
    let d = data.cols();
    let mut mean = vec![T::zero(); d];
    for i in 0..n {
        for (m, &v) in mean.iter_mut().zip(data.row(i)) {
            *m = *m + v;
        }
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    mean.iter_mut().for_each(|m| *m = *m * inv_n);
    let mut centroid = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (c, &v) in centroid.row_mut(l).iter_mut().zip(data.row(i)) {
            *c = *c + v;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            let inv = T::one() / T::from_usize_lossy(counts[c]);
            centroid.row_mut(c).iter_mut().for_each(|v| *v = *v * inv);
        }
    }
    let within: T = (0..n).map(|i| sq_dist(data.row(i), centroid.row(labels[i]))).sum();
    let between: T = (0..k)
        .map(|c| T::from_usize_lossy(counts[c]) * sq_dist(centroid.row(c), &mean))
        .sum();
    let total = within + between;
    if !(within > total * T::epsilon() * T::lit(64.0)) {
        return if between > T::zero() { T::infinity() } else { T::zero() };
    }
    (between / T::from_usize_lossy(k - 1)) / (within / T::from_usize_lossy(n - k))
}

/// Result of [`select_k`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection<T> {
    pub k: usize,
    /// `(k, CH)` for every evaluated `k >= 2`.
    pub scores: Vec<(usize, T)>,
}

/// Chooses the number of clusters by maximizing the Calinski-Harabasz index
/// over `2..=k_max`; `k = 1` when the best index is below `ch_floor` or the
/// rows are all identical.
pub fn select_k<T: Real>(
    data: &Matrix<T>,
    k_max: usize,
    replicates: usize,
    seed: u64,
    ch_floor: T,
) -> Result<ModelSelection<T>> {
    if k_max < 2 {
        return Err(WarpError::invalid("k_max must be at least 2"));
    }
    if data.rows() <= k_max {
        return Err(WarpError::insufficient(format!(
            "{} rows cannot support k_max = {k_max}",
            data.rows()
        )));
    }
    let first = data.row(0);
    let scale: T = first.iter().map(|v| v.magnitude()).fold(T::zero(), T::max);
    let tol = scale * T::epsilon() * T::lit(16.0);
    let identical = (1..data.rows()).all(|i| data.row(i).iter().zip(first).all(|(a, b)| (*a - *b).magnitude() <= tol));
    if identical {
        return Ok(ModelSelection { k: 1, scores: Vec::new() });
    }
    let mut scores = Vec::with_capacity(k_max - 1);
    for k in 2..=k_max {
        let run = kmeans(data, k, replicates, seed)?;
        scores.push((k, calinski_harabasz(data, &run.labels, k)));
    }
    let (best_k, best_ch) = scores
        .iter()
        .copied()
        .fold((1, T::neg_infinity()), |acc, (k, ch)| if ch > acc.1 { (k, ch) } else { acc });
    let k = if best_ch < ch_floor { 1 } else { best_k };
    Ok(ModelSelection { k, scores })
}

/// Least-squares fit `sum_k a_k cos(2 pi k n / L) + b_k sin(2 pi k n / L)`,
/// `k = 1..=K`, returned as `(a, b, fitted)`.
pub fn trig_regression<T: Real>(values: &[T], harmonics: usize) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let l = values.len();
    if harmonics == 0 || 2 * harmonics >= l {
        return Err(WarpError::invalid(format!(
            "{harmonics} harmonics cannot be fitted to {l} samples"
        )));
    }
    let basis = trig_basis::<T>(l, harmonics);
    let m = 2 * harmonics;
    let mut gram = Matrix::zeros(m, m);
    let mut rhs = vec![T::zero(); m];
    for i in 0..m {
        for j in i..m {
            let g: T = basis[i].iter().zip(&basis[j]).map(|(&x, &y)| x * y).sum();
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
        rhs[i] = basis[i].iter().zip(values).map(|(&x, &y)| x * y).sum();
    }
    let coef = cholesky_solve(&gram, &rhs)?;
    let fitted: Vec<T> = (0..l).map(|n| (0..m).map(|i| coef[i] * basis[i][n]).sum()).collect();
    let a = (0..harmonics).map(|k| coef[2 * k]).collect();
    let b = (0..harmonics).map(|k| coef[2 * k + 1]).collect();
    Ok((a, b, fitted))
}

/// Columns `cos(2 pi k n / L)`, `sin(2 pi k n / L)` interleaved by harmonic.
fn trig_basis<T: Real>(l: usize, harmonics: usize) -> Vec<Vec<T>> {
    let step = T::two_pi() / T::from_usize_lossy(l);
    let mut out = Vec::with_capacity(2 * harmonics);
    for k in 1..=harmonics {
        let w = step * T::from_usize_lossy(k);
        out.push((0..l).map(|n| (w * T::from_usize_lossy(n)).cos()).collect());
        out.push((0..l).map(|n| (w * T::from_usize_lossy(n)).sin()).collect());
    }
    out
}

/// Residual-energy threshold of the harmonic-count rule.
pub const HARMONIC_RESIDUAL_THRESHOLD: f64 = 0.05;

/// Smallest `K <= k_max` whose residual energy fraction plus `2K/L` falls
/// below [`HARMONIC_RESIDUAL_THRESHOLD`]; when none does, the `K` minimizing
/// `L ln(RSS/L) + 2K ln L`.
pub fn select_harmonic_count<T: Real>(median: &[T], k_max: usize) -> Result<usize> {
    let l = median.len();
    if k_max == 0 || 2 * k_max >= l {
        return Err(WarpError::invalid(format!(
            "k_max = {k_max} must lie in [1, L/2) for L = {l}"
        )));
    }
    let energy: T = median.iter().map(|&v| v * v).sum();
    if !(energy > T::zero()) {
        return Ok(1);
    }
    let lf = T::from_usize_lossy(l);
    let threshold = T::lit(HARMONIC_RESIDUAL_THRESHOLD);
    let mut bic = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let (_, _, fitted) = trig_regression(median, k)?;
        let rss: T = median.iter().zip(&fitted).map(|(&x, &f)| (x - f) * (x - f)).sum();
        let kf = T::from_usize_lossy(k);
        if rss / energy + T::lit(2.0) * kf / lf < threshold {
            return Ok(k);
        }
        let floor = energy * T::epsilon();
        bic.push(lf * (rss.max(floor) / lf).ln() + T::lit(2.0) * kf * lf.ln());
    }
    let best = (0..k_max)
        .min_by(|&a, &b| bic[a].partial_cmp(&bic[b]).expect("finite criterion"))
        .expect("k_max >= 1");
    Ok(best + 1)
}

/// Pointwise median of the selected rows.
pub fn column_median<T: Real>(data: &Matrix<T>, rows: &[usize]) -> Vec<T> {
    let mut column = Vec::with_capacity(rows.len());
    (0..data.cols())
        .map(|j| {
            column.clear();
            column.extend(rows.iter().map(|&i| data[(i, j)]));
            column.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
            let m = column.len();
            if m % 2 == 1 {
                column[m / 2]
            } else {
                (column[m / 2 - 1] + column[m / 2]) / T::lit(2.0)
            }
        })
        .collect()
}

/// Wave-shape estimate for one cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WsfEstimate<T> {
    pub median: Vec<T>,
    /// Cosine coefficients `a_1..a_K`.
    pub cos_coeffs: Vec<T>,
    /// Sine coefficients `b_1..b_K`.
    pub sin_coeffs: Vec<T>,
    pub fitted: Vec<T>,
    pub harmonics: usize,
    /// RMS difference between the median and its trigonometric fit.
    pub fit_rms: T,
    pub n_cycles: usize,
}

/// Cluster medians and their trigonometric regressions, with the harmonic
/// count of each chosen by [`select_harmonic_count`].
pub fn estimate_wsfs<T: Real>(
    matrix: &CycleMatrix<T>,
    labels: &[usize],
    harmonic_k_max: usize,
) -> Result<Vec<WsfEstimate<T>>> {
    if labels.len() != matrix.rows.rows() {
        return Err(WarpError::invalid("one label per cycle required"));
    }
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    (0..k)
        .map(|c| {
            let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                return Err(WarpError::invalid(format!("cluster {c} is empty")));
            }
            let median = column_median(&matrix.rows, &members);
            let harmonics = select_harmonic_count(&median, harmonic_k_max)?;
            let (cos_coeffs, sin_coeffs, fitted) = trig_regression(&median, harmonics)?;
            let fit_rms = (median
                .iter()
                .zip(&fitted)
                .map(|(&x, &f)| (x - f) * (x - f))
                .sum::<T>()
                / T::from_usize_lossy(median.len()))
            .sqrt();
            Ok(WsfEstimate {
                median,
                cos_coeffs,
                sin_coeffs,
                fitted,
                harmonics,
                fit_rms,
                n_cycles: members.len(),
            })
        })
        .collect()
}

/// Original-time boundary between each pair of consecutive cycles with
/// different labels.
pub fn change_points<T: Real>(labels: &[usize], row_spans: &[(T, T)]) -> Result<Vec<T>> {
    if labels.len() != row_spans.len() {
        return Err(WarpError::invalid("labels and row spans differ in length"));
    }
    Ok(labels
        .windows(2)
        .zip(row_spans)
        .filter(|(w, _)| w[0] != w[1])
        .map(|(_, span)| span.1)
        .collect())
}

/// Template of cluster `c` in the time frame of a row whose
/// synchronization shift is `shift`.
fn row_template<T: Real>(medians: &Matrix<T>, c: usize, shift: usize) -> Vec<T> {
    crate::cycles::roll(medians.row(c), shift)
}

fn shift_of(shifts: Option<&[usize]>, i: usize) -> usize {
    shifts.map_or(0, |s| s[i])
}

fn squared_errors<T: Real>(x: &[T], template: &[T]) -> Vec<T> {
    x.iter().zip(template).map(|(&a, &b)| (a - b) * (a - b)).collect()
}

/// Weighted isotonic (nondecreasing) regression by pool-adjacent-violators.
pub fn isotonic_regression<T: Real>(values: &[T], weights: &[T]) -> Vec<T> {
    let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (v1, w1, n1) = blocks[blocks.len() - 1];
            let (v0, w0, n0) = blocks[blocks.len() - 2];
            if v0 <= v1 {
                break;
            }
            let w = w0 + w1;
            let v = if w > T::zero() {
                (v0 * w0 + v1 * w1) / w
            } else {
                T::lit(0.5) * (v0 + v1)
            };
            blocks.truncate(blocks.len() - 2);
            blocks.push((v, w, n0 + n1));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(v, _, n)| std::iter::repeat_n(v, n))
        .collect()
}

/// Best fit of `x` by `ta + w * (tb - ta)` with a nondecreasing mixing
/// weight `w` in `[0, 1]`; returns the residual sum of squares and `w`.
pub fn monotone_transition<T: Real>(x: &[T], ta: &[T], tb: &[T]) -> (T, Vec<T>) {
    let d: Vec<T> = ta.iter().zip(tb).map(|(&a, &b)| b - a).collect();
    let weights: Vec<T> = d.iter().map(|&v| v * v).collect();
    let raw: Vec<T> = x
        .iter()
        .zip(ta)
        .zip(&d)
        .map(|((&xv, &a), &dv)| if dv != T::zero() { (xv - a) / dv } else { T::lit(0.5) })
        .collect();
    let w: Vec<T> = isotonic_regression(&raw, &weights)
        .into_iter()
        .map(|v| v.max(T::zero()).min(T::one()))
        .collect();
    let cost = x
        .iter()
        .zip(ta)
        .zip(&d)
        .zip(&w)
        .map(|(((&xv, &a), &dv), &wv)| {
            let r = xv - a - wv * dv;
            r * r
        })
        .sum();
    (cost, w)
}

/// Relabels short runs of at most `max_run` cycles sitting between two
/// different clusters when a monotone blend from one cluster template to the
/// other (see [`monotone_transition`]) explains the run to within
/// `tolerance` times the pooled per-sample residual of the clusters, floored
/// at `resolution` times the mean square of `raw` (see [`noise_floor`]). Only
/// runs whose clusters have no members outside the run are considered. Each
/// cycle of an accepted run joins the side carrying most of its weight. Labels are renumbered by first appearance.
pub fn absorb_transitions<T: Real>(
    raw: &CycleMatrix<T>,
    shifts: Option<&[usize]>,
    labels: &[usize],
    medians: &Matrix<T>,
    tolerance: T,
    max_run: usize,
    resolution: T,
) -> Result<Vec<usize>> {
    let p = raw.rows.rows();
    let l = raw.rows.cols();
    if labels.len() != p {
        return Err(WarpError::invalid("one label per cycle required"));
    }
    let k = medians.rows();
    let mut counts = vec![0usize; k];
    for &c in labels {
        counts[c] += 1;
    }
    let mut pooled = T::zero();
    let mut n_pooled = 0usize;
    for i in 0..p {
        if counts[labels[i]] >= 3 {
            let t = row_template(medians, labels[i], shift_of(shifts, i));
            pooled = pooled + squared_errors(raw.rows.row(i), &t).into_iter().sum::<T>();
            n_pooled += l;
        }
    }
    let mut out = labels.to_vec();
    if n_pooled == 0 {
        return Ok(out);
    }
    let noise = (pooled / T::from_usize_lossy(n_pooled)).max(noise_floor(&raw.rows, resolution));
    let mut i = 1;
    while i + 1 < p {
        let a = out[i - 1];
        let mut accepted = false;
        for run in (1..=max_run.min(p - 1 - i)).rev() {
            let j = i + run;
            let b = labels[j];
            let inside = &labels[i..j];
            if b == a || inside.iter().any(|&c| c == a || c == b) {
                continue;
            }
            let confined = inside
                .iter()
                .all(|&c| inside.iter().filter(|&&d| d == c).count() == counts[c]);
            if !confined {
                continue;
            }
            let mut x = Vec::with_capacity(run * l);
            let mut ta = Vec::with_capacity(run * l);
            let mut tb = Vec::with_capacity(run * l);
            for r in i..j {
                let s = shift_of(shifts, r);
                x.extend_from_slice(raw.rows.row(r));
                ta.extend(row_template(medians, a, s));
                tb.extend(row_template(medians, b, s));
            }
            let (cost, w) = monotone_transition(&x, &ta, &tb);

            if cost / T::from_usize_lossy(run * l) <= tolerance * noise {
                for (offset, r) in (i..j).enumerate() {
                    let share: T = w[offset * l..(offset + 1) * l].iter().copied().sum();
                    out[r] = if share * T::lit(2.0) <= T::from_usize_lossy(l) { a } else { b };
                }
                i = j;
                accepted = true;
                break;
            }
        }
        if !accepted {
            i += 1;
        }
    }
    Ok(compact_labels(&out))
}

/// Merges clusters whose medians agree up to a continuous cyclic shift and
/// a gain. For each pair the aligned per-sample residual of the medians (see
/// [`fractional_alignment`]) is compared with the variance expected of a
/// difference of two medians, `(pi / 2) * noise * (1 / n_a + 1 / n_b)`,
/// where `noise` is half the mean squared difference between consecutive
/// rows sharing a cluster, floored at `resolution` times the mean square of
/// `data` (see [`noise_floor`]). The closest pair with a ratio at most
/// `tolerance` is merged, and the search repeats until no pair qualifies.
/// Labels are renumbered by first appearance.
pub fn merge_shifted_clusters<T: Real>(data: &Matrix<T>, labels: &[usize], tolerance: T, resolution: T) -> Result<Vec<usize>> {
    let p = data.rows();
    let l = data.cols();
    if labels.len() != p {
        return Err(WarpError::invalid("one label per cycle required"));
    }
    let mut labels = compact_labels(labels);
    loop {
        let k = labels.iter().copied().max().map_or(0, |m| m + 1);
        if k < 2 {
            return Ok(labels);
        }
        let members: Vec<Vec<usize>> = (0..k)
            .map(|c| (0..p).filter(|&i| labels[i] == c).collect())
            .collect();
        let medians: Vec<Vec<T>> = members.iter().map(|rows| column_median(data, rows)).collect();
        let mut pooled = T::zero();
        let mut n_pooled = 0usize;
        for i in 1..p {
            if labels[i] == labels[i - 1] {
                pooled = pooled + squared_errors(data.row(i), data.row(i - 1)).into_iter().sum::<T>();
                n_pooled += 2 * l;
            }
        }
        if n_pooled == 0 {
            return Ok(labels);
        }
        let noise = (pooled / T::from_usize_lossy(n_pooled)).max(noise_floor(data, resolution));
        let lf = T::from_usize_lossy(l);
        let mut best: Option<(T, usize, usize)> = None;
        for a in 0..k {
            for b in a + 1..k {
                let (_, _, rss) = fractional_alignment(&medians[a], &medians[b], 16)?;
                let spread = T::PI() / T::lit(2.0)
                    * noise
                    * (T::one() / T::from_usize_lossy(members[a].len()) + T::one() / T::from_usize_lossy(members[b].len()));
                let ratio = rss / lf / spread;
                if ratio <= tolerance && best.map_or(true, |(r, _, _)| ratio < r) {
                    best = Some((ratio, a, b));
                }
            }
        }
        match best {
            Some((_, a, b)) => {
                for v in labels.iter_mut() {
                    if *v == b {
                        *v = a;
                    }
                }
                labels = compact_labels(&labels);
            }
            None => return Ok(labels),
        }
    }
}

/// Smallest per-sample noise variance assumed by the merge and absorption
/// tests: `resolution` times the mean square of `data`.
pub fn noise_floor<T: Real>(data: &Matrix<T>, resolution: T) -> T {
    let n = data.rows() * data.cols();
    if n == 0 {
        return T::zero();
    }
    let energy: T = data.row_iter().flat_map(|r| r.iter().map(|&v| v * v)).sum();
    resolution * energy / T::from_usize_lossy(n)
}

/// Renumbers labels by first appearance, dropping unused values.
pub fn compact_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Sub-cycle change points: around each label change, the split within
/// half a cycle of the boundary that best separates the two cluster
/// templates, mapped to original time linearly within the cycle span.
pub fn refine_change_points<T: Real>(
    raw: &CycleMatrix<T>,
    shifts: Option<&[usize]>,
    labels: &[usize],
    medians: &Matrix<T>,
) -> Result<Vec<T>> {
    let p = raw.rows.rows();
    let l = raw.rows.cols();
    if labels.len() != p || raw.row_spans.len() != p {
        return Err(WarpError::invalid("labels, rows and spans must align"));
    }
    let h = l / 2;
    let lf = T::from_usize_lossy(l);
    let mut out = Vec::new();
    for i in 0..p.saturating_sub(1) {
        let (a, b) = (labels[i], labels[i + 1]);
        if a == b {
            continue;
        }
        let (s0, s1) = (shift_of(shifts, i), shift_of(shifts, i + 1));
        let x: Vec<T> = raw.rows.row(i)[l - h..]
            .iter()
            .chain(&raw.rows.row(i + 1)[..l - h])
            .copied()
            .collect();
        let splice = |c: usize| -> Vec<T> {
            let t0 = row_template(medians, c, s0);
            let t1 = row_template(medians, c, s1);
            t0[l - h..].iter().chain(&t1[..l - h]).copied().collect()
        };
        let ea = squared_errors(&x, &splice(a));
        let eb = squared_errors(&x, &splice(b));
        // Splits 0..L-1, ties broken toward the cycle boundary.
        let mut cost: T = eb.iter().copied().sum();
        let mut best = (cost, 0usize);
        let consider = |c: T, q: usize, best: &mut (T, usize)| {
            let closer = q.abs_diff(h) < best.1.abs_diff(h);
            if c < best.0 || (c == best.0 && closer) {
                *best = (c, q);
            }
        };
        consider(cost, 0, &mut best);
        for q in 1..l {
            cost = cost + ea[q - 1] - eb[q - 1];
            consider(cost, q, &mut best);
        }
        let q = best.1;
        let t = if q < h {
            let (lo, hi) = raw.row_spans[i];
            hi - (hi - lo) * T::from_usize_lossy(h - q) / lf
        } else {
            let (lo, hi) = raw.row_spans[i + 1];
            lo + (hi - lo) * T::from_usize_lossy(q - h) / lf
        };
        out.push(t);
    }
    Ok(out)
}

/// Full clustering outcome for a cycle matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult<T> {
    pub labels: Vec<usize>,
    pub k: usize,
    pub medians: Matrix<T>,
    pub wsfs: Vec<WsfEstimate<T>>,
    /// Change points (s); sub-cycle when refinement is enabled.
    pub change_points: Vec<T>,
    /// Cycle boundaries at which the label changes (s).
    pub boundary_change_points: Vec<T>,
    pub selection: ModelSelection<T>,
}

/// Settings for [`cluster_cycles`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig<T> {
    pub k_max: usize,
    pub replicates: usize,
    pub seed: u64,
    pub ch_floor: T,
    pub harmonic_k_max: usize,
    /// Merge single transitional cycles into a neighbouring cluster.
    pub absorb_transitions: bool,
    /// Residual ratio accepted by [`absorb_transitions`].
    pub transition_tolerance: T,
    /// Longest run of cycles [`absorb_transitions`] may relabel.
    pub transition_max_run: usize,
    /// Merge clusters equal up to a cyclic shift (see [`merge_shifted_clusters`]).
    pub merge_shifted: bool,
    /// Ratio accepted by [`merge_shifted_clusters`].
    pub merge_tolerance: T,
    /// Report sub-cycle change points.
    pub refine_change_points: bool,
    /// Relative noise floor of the merge and absorption tests (see
    /// [`noise_floor`]).
    pub resolution: T,
}


impl<T: Real> Default for ClusterConfig<T> {
    fn default() -> Self {
        ClusterConfig {
            k_max: 8,
            replicates: 50,
            seed: 0,
            ch_floor: T::lit(5.0),
            harmonic_k_max: 10,
            absorb_transitions: true,
            transition_tolerance: T::lit(5.0),
            transition_max_run: 2,
            merge_shifted: true,
            merge_tolerance: T::lit(1.5),
            refine_change_points: true,
            resolution: T::lit(1e-3),
        }
    }
}

fn medians_of<T: Real>(wsfs: &[WsfEstimate<T>], l: usize) -> Matrix<T> {
    let mut medians = Matrix::zeros(wsfs.len(), l);
    for (c, w) in wsfs.iter().enumerate() {
        medians.row_mut(c).copy_from_slice(&w.median);
    }
    medians
}

/// Model selection, k-means, WSF estimation and change points. `aligned`
/// holds the rows that are clustered; `raw` the same cycles before
/// synchronization by `shifts` (identical to `aligned` when unsynchronized).
pub fn cluster_cycles<T: Real>(
    raw: &CycleMatrix<T>,
    aligned: &CycleMatrix<T>,
    shifts: Option<&[usize]>,
    config: &ClusterConfig<T>,
) -> Result<ClusterResult<T>> {
    let p = aligned.rows.rows();
    let l = aligned.rows.cols();
    if p < 2 {
        return Err(WarpError::insufficient("clustering needs at least 2 cycles"));
    }
    if raw.rows.rows() != p || raw.rows.cols() != l {
        return Err(WarpError::invalid("raw and aligned cycle matrices differ in shape"));
    }
    let k_max = config.k_max.min(p - 1);
    let selection = if k_max >= 2 {
        select_k(&aligned.rows, k_max, config.replicates, config.seed, config.ch_floor)?
    } else {
        ModelSelection { k: 1, scores: Vec::new() }
    };
    let run = kmeans(&aligned.rows, selection.k, config.replicates, config.seed)?;
    let harmonic_k_max = config.harmonic_k_max.min((l - 1) / 2).max(1);
    let mut labels = run.labels;
    if config.merge_shifted {
        labels = merge_shifted_clusters(&aligned.rows, &labels, config.merge_tolerance, config.resolution)?;
    }
    let mut wsfs = estimate_wsfs(aligned, &labels, harmonic_k_max)?;
    if config.absorb_transitions && wsfs.len() > 2 {
        let absorbed = absorb_transitions(raw, shifts, &labels, &medians_of(&wsfs, l), config.transition_tolerance, config.transition_max_run, config.resolution)?;
        if absorbed != labels {
            labels = absorbed;
            wsfs = estimate_wsfs(aligned, &labels, harmonic_k_max)?;
        }
    }
    let medians = medians_of(&wsfs, l);
    let boundary_change_points = change_points(&labels, &aligned.row_spans)?;
    let change_points = if config.refine_change_points {
        refine_change_points(raw, shifts, &labels, &medians)?
    } else {
        boundary_change_points.clone()
    };
    Ok(ClusterResult {
        k: wsfs.len(),
        labels,
        medians,
        wsfs,
        change_points,
        boundary_change_points,
        selection,
    })
}
