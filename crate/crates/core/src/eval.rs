//! Scoring against ground truth and the Monte-Carlo change-point
//! experiment on the three-WSF benchmark.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WarpError};
use crate::linalg::Matrix;
use crate::pipeline::{cluster_iteration, PipelineConfig};
use crate::scalar::Real;
use crate::signal_model::{add_noise, harmonic_wave, smoothed_brownian_phase, synth_benchmark_perturbed, GroundTruth, NoiseSpec};
use crate::warping::iterate_warp;

/// Change-point and wave-shape scores for one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport<T> {
    pub f1: T,
    /// RMS of matched detection errors (s); zero when nothing matched.
    pub rmse_change_points: T,
    /// Signed error (detected minus truth) of each true change point, when
    /// matched.
    pub errors: Vec<Option<T>>,
    /// Shift-aligned RMSE of each true WSF against its assigned estimate.
    pub wsf_rmse: Vec<T>,
    pub n_true_pos: usize,
    pub n_false_pos: usize,
    pub n_false_neg: usize,
}

/// Greedy nearest-first one-to-one matching of detections to truth within
/// `tolerance`; returns `(truth index, detection index)` pairs.
pub fn match_change_points<T: Real>(detected: &[T], truth: &[T], tolerance: T) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(T, usize, usize)> = Vec::new();
    for (i, &t) in truth.iter().enumerate() {
        for (j, &d) in detected.iter().enumerate() {
            let gap = (d - t).magnitude();
            if gap <= tolerance {
                candidates.push((gap, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite gaps")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut used_truth = vec![false; truth.len()];
    let mut used_det = vec![false; detected.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_truth[i] && !used_det[j] {
            used_truth[i] = true;
            used_det[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// F1 and RMSE of detected change points; a detection within `cycle_len`
/// of an unmatched true point is a true positive.
pub fn score_change_points<T: Real>(detected: &[T], truth: &[T], cycle_len: T) -> Result<ScoreReport<T>> {
    if !(cycle_len > T::zero()) {
        return Err(WarpError::invalid("cycle length must be positive"));
    }
    let pairs = match_change_points(detected, truth, cycle_len);
    let tp = pairs.len();
    let fp = detected.len() - tp;
    let fn_ = truth.len() - tp;
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 {
        T::one()
    } else {
        T::from_usize_lossy(2 * tp) / T::from_usize_lossy(denom)
    };
    let mut errors = vec![None; truth.len()];
    let mut sq = T::zero();
    for &(i, j) in &pairs {
        let e = detected[j] - truth[i];
        errors[i] = Some(e);
        sq = sq + e * e;
    }
    let rmse = if tp > 0 {
        (sq / T::from_usize_lossy(tp)).sqrt()
    } else {
        T::zero()
    };
    Ok(ScoreReport {
        f1,
        rmse_change_points: rmse,
        errors,
        wsf_rmse: Vec::new(),
        n_true_pos: tp,
        n_false_pos: fp,
        n_false_neg: fn_,
    })
}

/// Minimum over cyclic shifts of the RMS difference between an estimated
/// cycle and the truth sampled at the same length.
pub fn wsf_rmse<T: Real>(estimated: &[T], truth: &[T]) -> Result<T> {
    if estimated.len() != truth.len() || estimated.is_empty() {
        return Err(WarpError::invalid("WSF lengths differ"));
    }
    let (_, residual) = crate::cycles::best_cyclic_shift(estimated, truth)?;
    Ok(residual / T::from_usize_lossy(truth.len()).sqrt())
}

/// Minimum-cost assignment of rows to distinct columns (rows <= cols) by the
/// Hungarian method; returns the column of each row.
pub fn hungarian<T: Real>(cost: &Matrix<T>) -> Result<Vec<usize>> {
    let n = cost.rows();
    let m = cost.cols();
    if n > m {
        return Err(WarpError::invalid("assignment needs at least as many columns as rows"));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if !cost.is_finite() {
        return Err(WarpError::invalid("assignment costs must be finite"));
    }
    let inf = T::infinity();
    // 1-based potentials over rows (u) and columns (v); way[j] tracks the
    // augmenting path, p[j] the row matched to column j.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] = u[p[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    Ok(out)
}

/// RMSE of each true WSF against the estimates. With at least as many
/// estimates as truths, truths are assigned to distinct estimates by the
/// Hungarian method; otherwise each truth takes its best estimate.
pub fn match_wsfs<T: Real>(estimates: &[Vec<T>], truths: &[Vec<T>]) -> Result<Vec<T>> {
    if estimates.is_empty() {
        return Err(WarpError::invalid("no estimated WSFs"));
    }
    let mut cost = Matrix::zeros(truths.len(), estimates.len());
    for (i, t) in truths.iter().enumerate() {
        for (j, e) in estimates.iter().enumerate() {
            cost[(i, j)] = wsf_rmse(e, t)?;
        }
    }
    if truths.len() <= estimates.len() {
        let assign = hungarian(&cost)?;
        Ok(assign.iter().enumerate().map(|(i, &j)| cost[(i, j)]).collect())
    } else {
        Ok((0..truths.len())
            .map(|i| cost.row(i).iter().copied().fold(T::infinity(), T::min))
            .collect())
    }
}

/// Settings of the Monte-Carlo benchmark experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Config<T> {
    pub snrs_db: Vec<T>,
    pub n_realizations: usize,
    /// Iterations performed; results are scored after each.
    pub iterations: usize,
    pub master_seed: u64,
    pub fs: T,
    pub duration: T,
    /// Smoothing kernel standard deviation of the random phase (s).
    pub phase_kernel_std: T,
    pub pipeline: PipelineConfig<T>,
}

impl<T: Real> Default for Table1Config<T> {
    fn default() -> Self {
        let mut pipeline = PipelineConfig::default();
        pipeline.synchronize = false;
        pipeline.cluster.merge_shifted = false;
        Table1Config {
            snrs_db: vec![T::lit(30.0), T::lit(20.0), T::lit(10.0)],
            n_realizations: 100,
            iterations: 3,
            master_seed: 2024,
            fs: T::lit(6000.0),
            duration: T::one(),
            phase_kernel_std: T::lit(0.05),
            pipeline,
        }
    }
}

/// Scores of one realization after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationScore<T> {
    pub iteration: usize,
    pub k: usize,
    pub entropy: T,
    pub detected: Vec<T>,
    pub score: ScoreReport<T>,
}

/// Outcome of one realization; `error` is set when the pipeline failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationRecord<T> {
    pub snr_db: T,
    pub realization: usize,
    pub iterations: Vec<IterationScore<T>>,
    pub error: Option<String>,
}

/// Aggregate over realizations for one SNR and iteration count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row<T> {
    pub snr_db: T,
    pub iterations: usize,
    pub n_realizations: usize,
    pub n_failed: usize,
    pub f1_mean: T,
    /// RMS error of each true change point over realizations where it was
    /// detected (s).
    pub rmse_change_points: Vec<T>,
    /// RMS over all matched detections (s).
    pub rmse_all: T,
    pub entropy_median: T,
    pub entropy_mean: T,
    /// Median shift-aligned RMSE of each true WSF.
    pub wsf_rmse_median: Vec<T>,
    pub k_mean: T,
}

/// Full experiment output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Report<T> {
    pub config: Table1Config<T>,
    pub rows: Vec<Table1Row<T>>,
    pub realizations: Vec<RealizationRecord<T>>,
}

fn mix(a: u64, b: u64) -> u64 {
    // SplitMix64 finalizer over a combined key.
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the random phase of realization `r` (shared across SNRs).
pub fn phase_seed(master: u64, r: usize) -> u64 {
    mix(master, r as u64)
}

/// Seed of the noise of realization `r` at SNR index `s`.
pub fn noise_seed(master: u64, s: usize, r: usize) -> u64 {
    mix(mix(master, 0x6e6f_6973_65 + s as u64), r as u64)
}

/// Synthesizes realization `r` of the benchmark at SNR index `s`.
pub fn benchmark_realization<T: Real>(
    config: &Table1Config<T>,
    s: usize,
    r: usize,
) -> Result<(crate::signal_model::Signal<T>, GroundTruth<T>)> {
    let n = (config.fs * config.duration).floor().to_usize().unwrap_or(0);
    let y = smoothed_brownian_phase(phase_seed(config.master_seed, r), config.phase_kernel_std, config.fs, n)?;
    let (clean, truth) = synth_benchmark_perturbed(config.fs, config.duration, Some(&y))?;
    let noisy = add_noise(
        &clean,
        &NoiseSpec {
            snr_db: Some(config.snrs_db[s]),
            seed: noise_seed(config.master_seed, s, r),
        },
    )?;
    Ok((noisy, truth))
}

fn run_realization<T: Real>(config: &Table1Config<T>, s: usize, r: usize) -> Result<Vec<IterationScore<T>>> {
    let (signal, truth) = benchmark_realization(config, s, r)?;
    let mut warp = config.pipeline.warp.clone();
    warp.min_iterations = config.iterations;
    warp.max_iterations = config.iterations;
    let outcome = iterate_warp(&signal, &warp)?;
    let cycle_len = truth.mean_cycle_len(config.fs);
    let l = warp.samples_per_cycle;
    let truths: Vec<Vec<T>> = truth.wsf_coeffs.iter().map(|c| harmonic_wave(c, l)).collect();
    outcome
        .records
        .iter()
        .map(|rec| {
            let clustered = cluster_iteration(rec, &config.pipeline)?;
            let detected = clustered.clusters.change_points.clone();
            let mut score = score_change_points(&detected, &truth.change_points, cycle_len)?;
            let estimates: Vec<Vec<T>> = clustered.clusters.wsfs.iter().map(|w| w.median.clone()).collect();
            score.wsf_rmse = match_wsfs(&estimates, &truths)?;
            Ok(IterationScore {
                iteration: rec.warped.iteration,
                k: clustered.clusters.k,
                entropy: rec.entropy,
                detected,
                score,
            })
        })
        .collect()
}

fn median<T: Real>(values: &mut [T]) -> T {
    if values.is_empty() {
        return T::nan();
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / T::lit(2.0)
    }
}

fn aggregate<T: Real>(snr_db: T, iteration: usize, records: &[&RealizationRecord<T>], n_truth: usize, n_wsf: usize) -> Table1Row<T> {
    let ok: Vec<&IterationScore<T>> = records
        .iter()
        .filter_map(|r| r.iterations.get(iteration - 1))
        .collect();
    let n_ok = ok.len();
    let nf = T::from_usize_lossy(n_ok.max(1));
    let f1_mean = ok.iter().map(|s| s.score.f1).sum::<T>() / nf;
    let rmse_change_points = (0..n_truth)
        .map(|i| {
            let errs: Vec<T> = ok.iter().filter_map(|s| s.score.errors[i]).collect();
            if errs.is_empty() {
                T::nan()
            } else {
                (errs.iter().map(|&e| e * e).sum::<T>() / T::from_usize_lossy(errs.len())).sqrt()
            }
        })
        .collect();
    let all: Vec<T> = ok.iter().flat_map(|s| s.score.errors.iter().flatten().copied()).collect();
    let rmse_all = if all.is_empty() {
        T::nan()
    } else {
        (all.iter().map(|&e| e * e).sum::<T>() / T::from_usize_lossy(all.len())).sqrt()
    };
    let mut ent: Vec<T> = ok.iter().map(|s| s.entropy).collect();
    let entropy_mean = ent.iter().copied().sum::<T>() / nf;
    let entropy_median = median(&mut ent);
    let wsf_rmse_median = (0..n_wsf)
        .map(|w| {
            let mut v: Vec<T> = ok.iter().filter_map(|s| s.score.wsf_rmse.get(w).copied()).collect();
            median(&mut v)
        })
        .collect();
    let k_mean = ok.iter().map(|s| T::from_usize_lossy(s.k)).sum::<T>() / nf;
    Table1Row {
        snr_db,
        iterations: iteration,
        n_realizations: records.len(),
        n_failed: records.len() - n_ok,
        f1_mean,
        rmse_change_points,
        rmse_all,
        entropy_median,
        entropy_mean,
        wsf_rmse_median,
        k_mean,
    }
}

/// Runs every SNR x realization in parallel and aggregates per SNR and
/// iteration count. Failed realizations are recorded, not fatal.
pub fn run_table1<T: Real>(config: &Table1Config<T>) -> Result<Table1Report<T>> {
    if config.n_realizations == 0 {
        return Err(WarpError::invalid("need at least one realization"));
    }
    if config.iterations == 0 {
        return Err(WarpError::invalid("need at least one iteration"));
    }
    if config.snrs_db.is_empty() {
        return Err(WarpError::invalid("need at least one SNR"));
    }
    config.pipeline.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.snrs_db.len())
        .flat_map(|s| (0..config.n_realizations).map(move |r| (s, r)))
        .collect();
    let realizations: Vec<RealizationRecord<T>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let (iterations, error) = match run_realization(config, s, r) {
                Ok(it) => (it, None),
                Err(e) => (Vec::new(), Some(e.to_string())),
            };
            RealizationRecord {
                snr_db: config.snrs_db[s],
                realization: r,
                iterations,
                error,
            }
        })
        .collect();
    let (n_truth, n_wsf) = {
        let (_, truth) = synth_benchmark_perturbed::<T>(config.fs, config.duration, None)?;
        (truth.change_points.len(), truth.wsf_coeffs.len())
    };
    let mut rows = Vec::new();
    for (s, &snr) in config.snrs_db.iter().enumerate() {
        let group: Vec<&RealizationRecord<T>> = realizations[s * config.n_realizations..(s + 1) * config.n_realizations]
            .iter()
            .collect();
        for it in 1..=config.iterations {
            rows.push(aggregate(snr, it, &group, n_truth, n_wsf));
        }
    }
    Ok(Table1Report {
        config: config.clone(),
        rows,
        realizations,
    })
}

impl<T: Real> Table1Report<T> {
    /// One CSV row per SNR and iteration count.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n_cp = self.rows.first().map_or(0, |r| r.rmse_change_points.len());
        let n_wsf = self.rows.first().map_or(0, |r| r.wsf_rmse_median.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["snr_db", "iterations", "n_realizations", "n_failed", "f1_mean"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=n_cp).map(|i| format!("rmse_cp{i}")));
        header.extend(["rmse_all", "entropy_median", "entropy_mean"].iter().map(|s| s.to_string()));
        header.extend((1..=n_wsf).map(|i| format!("wsf_rmse_median{i}")));
        header.push("k_mean".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.snr_db.to_string(),
                r.iterations.to_string(),
                r.n_realizations.to_string(),
                r.n_failed.to_string(),
                r.f1_mean.to_string(),
            ];
            rec.extend(r.rmse_change_points.iter().map(|v| v.to_string()));
            rec.extend([r.rmse_all, r.entropy_median, r.entropy_mean].iter().map(|v| v.to_string()));
            rec.extend(r.wsf_rmse_median.iter().map(|v| v.to_string()));
            rec.push(r.k_mean.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| WarpError::invalid(format!("CSV write failed: {e}")))?;
        Ok(())
    }

    /// Writes `table1.csv` and `table1.json` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        let io = |e: std::io::Error| WarpError::invalid(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(io)?;
        let csv_path = dir.join("table1.csv");
        let f = std::fs::File::create(&csv_path).map_err(io)?;
        self.write_csv(f)?;
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| WarpError::invalid(format!("JSON encoding failed: {e}")))?;
        std::fs::write(dir.join("table1.json"), json).map_err(io)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> WarpError {
    WarpError::invalid(format!("CSV write failed: {e}"))
}
