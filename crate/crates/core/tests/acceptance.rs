//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness, so the report is always printed. Every
//! criterion is evaluated and reported; the target exits with an error on a
//! failing criterion only when `WAVEWARP_STRICT_ACCEPTANCE` is set.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use wavewarp::clustering::{select_k, trig_regression};
use wavewarp::cycles::{roll, svd_entropy, synchronize, CycleMatrix};
use wavewarp::eval::{run_table1, Table1Config, Table1Report, Table1Row};
use wavewarp::linalg::Matrix;
use wavewarp::signal_model::{synth_benchmark, Signal};
use wavewarp::tfa::{self, IfOrder, WindowSpec};
use wavewarp::warping::{estimate_component, warp_step, WarpConfig};

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn report(&self) {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {} {}: {}", self.id, self.name, self.detail);
    }
}

fn row(report: &Table1Report<f64>, snr: f64, iterations: usize) -> &Table1Row<f64> {
    report
        .rows
        .iter()
        .find(|r| r.snr_db == snr && r.iterations == iterations)
        .expect("row present")
}

fn table1_reproduction(report: &Table1Report<f64>, seconds: f64) -> Outcome {
    let mut pass = seconds < 1800.0;
    let mut parts = Vec::new();
    for &snr in &report.config.snrs_db {
        let f1: Vec<f64> = (1..=3).map(|it| row(report, snr, it).f1_mean).collect();
        let rmse = &row(report, snr, 3).rmse_change_points;
        let ok_first = (0.35..=0.65).contains(&f1[0]);
        let ok_later = f1[1] >= 0.95 && f1[2] >= 0.95;
        let ok_rmse = rmse.iter().all(|&e| e <= 0.002);
        pass &= ok_first && ok_later && ok_rmse;
        parts.push(format!(
            "{snr} dB F1 {:.3}/{:.3}/{:.3} rmse@3 {:.4?}{}{}{}",
            f1[0],
            f1[1],
            f1[2],
            rmse,
            if ok_first { "" } else { " [iteration-1 F1 outside 0.35..0.65]" },
            if ok_later { "" } else { " [F1 < 0.95 after 2+ iterations]" },
            if ok_rmse { "" } else { " [change-point RMSE > 0.002 s]" },
        ));
    }
    parts.push(format!("sweep {seconds:.0} s"));
    Outcome {
        id: 1,
        name: "benchmark sweep",
        pass,
        detail: parts.join("; "),
    }
}

fn iteration_monotonicity(report: &Table1Report<f64>) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &snr in &report.config.snrs_db {
        let rows: Vec<&Table1Row<f64>> = (1..=3).map(|it| row(report, snr, it)).collect();
        let entropy: Vec<f64> = rows.iter().map(|r| r.entropy_median).collect();
        let ok_entropy = entropy[1] < entropy[0] && entropy[2] < entropy[1];
        let lenient = snr <= 10.0;
        let n_wsf = rows[0].wsf_rmse_median.len();
        let mut broken = Vec::new();
        for j in 0..n_wsf {
            let w: Vec<f64> = rows.iter().map(|r| r.wsf_rmse_median[j]).collect();
            let first = w[1] < w[0];
            let second = if lenient { w[2] <= w[1] } else { w[2] < w[1] };
            if !(first && second) {
                broken.push(format!("WSF{} {:.4}/{:.4}/{:.4}", j + 1, w[0], w[1], w[2]));
            }
        }
        pass &= ok_entropy && broken.is_empty();
        parts.push(format!(
            "{snr} dB entropy {:.3}/{:.3}/{:.3}{}{}",
            entropy[0],
            entropy[1],
            entropy[2],
            if ok_entropy { "" } else { " [entropy not decreasing]" },
            if broken.is_empty() {
                String::new()
            } else {
                format!(" [WSF RMSE not decreasing: {}]", broken.join(", "))
            }
        ));
    }
    Outcome {
        id: 2,
        name: "iteration monotonicity",
        pass,
        detail: parts.join("; "),
    }
}

fn smooth_template(l: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut t: Vec<f64> = (0..l).map(|_| rng.random::<f64>() - 0.5).collect();
    for _ in 0..2 {
        t = (0..l)
            .map(|i| (t[(i + l - 1) % l] + 2.0 * t[i] + t[(i + 1) % l]) / 4.0)
            .collect();
    }
    t
}

fn synchronization_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let trials = 200;
    let mut exact = 0;
    let mut worst_entropy = 0.0f64;
    for _ in 0..trials {
        let p = rng.random_range(5..=50);
        let l = rng.random_range(50..=400);
        let tpl = smooth_template(l, &mut rng);
        let planted: Vec<usize> = (0..p).map(|_| rng.random_range(0..l)).collect();
        let mut data = Vec::with_capacity(p * l);
        for &s in &planted {
            data.extend(roll(&tpl, s));
        }
        let m = CycleMatrix {
            rows: Matrix::from_vec(p, l, data).unwrap(),
            row_spans: (0..p).map(|i| (i as f64, i as f64 + 1.0)).collect(),
            samples_per_cycle: l,
            first_cycle: 0,
        };
        let (aligned, assignment) = synchronize(&m).unwrap();
        let recovered = (0..p).all(|i| assignment.shifts[i] == (planted[i] + l - planted[0]) % l);
        if recovered {
            exact += 1;
        }
        worst_entropy = worst_entropy.max(svd_entropy(&aligned.rows).unwrap());
    }
    Outcome {
        id: 3,
        name: "synchronization oracle",
        pass: exact == trials && worst_entropy < 1e-8,
        detail: format!("exact recovery {exact}/{trials}, worst aligned entropy {worst_entropy:.2e}"),
    }
}

fn entropy_analytics() -> Outcome {
    let u = [1.0, -2.0, 0.5, 3.0];
    let v = [2.0, 1.0, -1.0];
    let rank1 = Matrix::from_rows(&u.iter().map(|a| v.iter().map(|b| a * b).collect::<Vec<f64>>()).collect::<Vec<_>>()).unwrap();
    let e_rank1 = svd_entropy(&rank1).unwrap();
    let p = 7;
    let flat = Matrix::<f64>::identity(p).scale(2.5);
    let e_flat = svd_entropy(&flat).unwrap();
    let diag = Matrix::from_rows(&[[3.0f64, 0.0], [0.0, 1.0]]).unwrap();
    let e_diag = svd_entropy(&diag).unwrap();
    let pass = e_rank1.abs() < 1e-12 && (e_flat - (p as f64).ln()).abs() < 1e-12 && (e_diag - 0.5623).abs() < 1e-4;
    let hand = -(0.75f64 * 0.75f64.ln() + 0.25 * 0.25f64.ln());
    Outcome {
        id: 4,
        name: "SVD entropy analytics",
        pass: pass && (e_diag - hand).abs() < 1e-6,
        detail: format!("rank-1 {e_rank1:.1e}, flat {e_flat:.12} vs ln {p} = {:.12}, (3,1) {e_diag:.6}", (p as f64).ln()),
    }
}

fn coefficient_of_variation(v: &[f64]) -> f64 {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
    var.sqrt() / mean
}

fn interior(v: &[f64], fraction: f64) -> &[f64] {
    let cut = (v.len() as f64 * fraction) as usize;
    &v[cut..v.len() - cut]
}

fn estimator_accuracy() -> Outcome {
    let fs = 1000.0;
    let tone: Vec<f64> = (0..4000).map(|i| 2.0 * (TAU * 50.0 * i as f64 / fs).cos()).collect();
    let tone = Signal::new(tone, fs, 0.0).unwrap();
    let w = WindowSpec::gaussian(511, 511.0 / 6.0).unwrap();
    let t = tfa::stft(&tone, &w, 20, 1000).unwrap();
    let ridge = tfa::extract_ridge(&t, (30.0, 70.0), tfa::default_ridge_penalty(&t)).unwrap();
    let amp = tfa::estimate_amplitude(&t, &ridge).unwrap();
    let amp_err = amp[15..t.n_frames - 15]
        .iter()
        .map(|a| (a - 2.0).abs() / 2.0)
        .fold(0.0, f64::max);

    let chirp: Vec<f64> = (0..3000)
        .map(|i| {
            let s = i as f64 / fs;
            (TAU * (40.0 * s + (8.0 * PI * s).cos() / TAU)).cos()
        })
        .collect();
    let chirp = Signal::new(chirp, fs, 0.0).unwrap();
    let w = WindowSpec::for_bandwidth(fs, 16.0).unwrap();
    let t = tfa::stft(&chirp, &w, 5, tfa::default_n_fft(w.length)).unwrap();
    let ridge = tfa::extract_ridge(&t, (20.0, 60.0), tfa::default_ridge_penalty(&t)).unwrap();
    let f = tfa::estimate_if_with(&t, &ridge, IfOrder::default()).unwrap();
    let edge = (4.0 * w.sigma / 5.0).ceil() as usize;
    let frames = edge..t.n_frames - edge;
    let truth = |m: usize| 40.0 - 4.0 * (8.0 * PI * t.times[m]).sin();
    let n = frames.len() as f64;
    let if_rms = (frames.clone().map(|m| (f[m] - truth(m)).powi(2)).sum::<f64>() / n).sqrt();
    let if_mean = frames.map(truth).sum::<f64>() / n;

    let (_, gt) = synth_benchmark(6000.0, 1.0).unwrap();
    let x = gt.phase.iter().map(|p| (TAU * p).cos()).collect();
    let s = Signal::new(x, 6000.0, 0.0).unwrap();
    let config = WarpConfig::<f64>::default();
    let before = estimate_component(&s, 40.0, &config, true).unwrap();
    let warped = warp_step(&s, &before, &config, 1).unwrap();
    let after = estimate_component(&warped.signal, 1.0, &config, false).unwrap();
    let cv_before = coefficient_of_variation(interior(&before.inst_freq, 0.1));
    let cv_after = coefficient_of_variation(interior(&after.inst_freq, 0.1));
    let reduction = cv_before / cv_after;

    Outcome {
        id: 5,
        name: "estimator accuracy",
        pass: amp_err < 0.01 && if_rms < 0.005 * if_mean && reduction >= 10.0,
        detail: format!(
            "tone amplitude max rel err {amp_err:.2e}; chirp IF rms {if_rms:.4} Hz = {:.3}% of mean; warped IF CV {cv_before:.4} -> {cv_after:.5} ({reduction:.1}x)",
            100.0 * if_rms / if_mean
        ),
    }
}

fn blobs(seed: u64) -> Matrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = [[0.0, 0.0], [6.0, 0.0], [0.0, 6.0]];
    let mut rows = Vec::new();
    for c in &centres {
        for _ in 0..30 {
            let zx: f64 = StandardNormal.sample(&mut rng);
            let zy: f64 = StandardNormal.sample(&mut rng);
            rows.push(vec![c[0] + zx, c[1] + zy]);
        }
    }
    Matrix::from_rows(&rows).unwrap()
}

fn model_selection() -> Outcome {
    let hits = (0..100u64)
        .filter(|&seed| select_k(&blobs(seed), 8, 10, seed, 10.0).unwrap().k == 3)
        .count();
    let data = blobs(1000);
    let reference = select_k(&data, 8, 10, 7, 10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let log_scale = Uniform::new(-3.0f64, 3.0).unwrap();
    let invariant = (0..100)
        .filter(|_| {
            let c = 10f64.powf(log_scale.sample(&mut rng));
            select_k(&data.scale(c), 8, 10, 7, 10.0).unwrap().k == reference.k
        })
        .count();
    Outcome {
        id: 6,
        name: "clustering/model selection",
        pass: hits >= 99 && invariant == 100,
        detail: format!("k = 3 in {hits}/100 seeds; argmax unchanged under {invariant}/100 scalings"),
    }
}

fn trig_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let l = 200;
    let mut worst_coef = 0.0f64;
    let mut worst_orth = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(1..=10);
        let a: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let b: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let basis = |h: usize, n: usize| (TAU * h as f64 * n as f64 / l as f64).sin_cos();
        let clean: Vec<f64> = (0..l)
            .map(|n| {
                (0..k)
                    .map(|h| {
                        let (s, c) = basis(h + 1, n);
                        a[h] * c + b[h] * s
                    })
                    .sum()
            })
            .collect();
        let (fa, fb, _) = trig_regression(&clean, k).unwrap();
        for h in 0..k {
            worst_coef = worst_coef.max((fa[h] - a[h]).abs()).max((fb[h] - b[h]).abs());
        }
        let noisy: Vec<f64> = clean
            .iter()
            .map(|v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v + 0.3 * z
            })
            .collect();
        let (_, _, fitted) = trig_regression(&noisy, k).unwrap();
        let resid: Vec<f64> = noisy.iter().zip(&fitted).map(|(x, f)| x - f).collect();
        let rnorm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
        for h in 1..=k {
            for pick in 0..2 {
                let col: Vec<f64> = (0..l)
                    .map(|n| {
                        let (s, c) = basis(h, n);
                        if pick == 0 {
                            c
                        } else {
                            s
                        }
                    })
                    .collect();
                let cnorm = col.iter().map(|c| c * c).sum::<f64>().sqrt();
                let dot: f64 = col.iter().zip(&resid).map(|(c, r)| c * r).sum();
                worst_orth = worst_orth.max(dot.abs() / (cnorm * rnorm));
            }
        }
    }
    Outcome {
        id: 7,
        name: "trig regression",
        pass: worst_coef < 1e-9 && worst_orth < 1e-9,
        detail: format!("worst coefficient error {worst_coef:.1e}; worst residual correlation {worst_orth:.1e}"),
    }
}

fn determinism() -> Outcome {
    let config = Table1Config::<f64> {
        n_realizations: 1,
        ..Table1Config::default()
    };
    let first = serde_json::to_string(&run_table1(&config).unwrap()).unwrap();
    let second = serde_json::to_string(&run_table1(&config).unwrap()).unwrap();
    Outcome {
        id: 8,
        name: "determinism",
        pass: first == second,
        detail: format!("two reports of {} bytes {}", first.len(), if first == second { "identical" } else { "differ" }),
    }
}

fn main() {
    let config = Table1Config::<f64>::default();
    let start = Instant::now();
    let report = run_table1(&config).expect("sweep runs");
    let seconds = start.elapsed().as_secs_f64();
    let outcomes = vec![
        table1_reproduction(&report, seconds),
        iteration_monotonicity(&report),
        synchronization_oracle(),
        entropy_analytics(),
        estimator_accuracy(),
        model_selection(),
        trig_recovery(),
        determinism(),
    ];
    for o in &outcomes {
        o.report();
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass", outcomes.len());
    if passed < outcomes.len() && std::env::var_os("WAVEWARP_STRICT_ACCEPTANCE").is_some() {
        eprintln!("failing acceptance criteria");
        std::process::exit(1);
    }
}
