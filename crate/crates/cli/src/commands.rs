//! The `synth`, `analyze` and `eval` subcommands.

use std::path::{Path, PathBuf};

use serde::Serialize;
use wavewarp::clustering::WsfEstimate;
use wavewarp::eval::{run_table1, Table1Config, Table1Report};
use wavewarp::pipeline::{analyze, Analysis, PipelineConfig};
use wavewarp::signal_model::{add_noise, smoothed_brownian_phase, synth_benchmark_perturbed, GroundTruth, NoiseSpec, Signal};
use wavewarp::tfa::{self, TfRepresentation};
use wavewarp::warping::{estimate_component, frame_setup, HarmonicChoice, PeriodRefinement};

use crate::args::{AnalyzeArgs, EvalArgs, SynthArgs};
use crate::error::{CliError, CliResult};
use crate::io;
use crate::{TOOL, VERSION};

fn prepare_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Serialize)]
struct SynthSettings {
    snr_db: f64,
    seed: u64,
    fs: f64,
    duration: f64,
    random_phase: bool,
    phase_kernel_std: f64,
}

#[derive(Debug, Serialize)]
struct SynthDocument<'a> {
    tool: &'static str,
    version: &'static str,
    config: SynthSettings,
    signal_file: String,
    truth: &'a GroundTruth<f64>,
}

/// Writes `<name>.csv` (columns `t,x`) and `<name>_truth.json`; returns
/// both paths.
pub fn synth(args: &SynthArgs) -> CliResult<Vec<PathBuf>> {
    let n = (args.fs * args.duration).floor();
    if !(n >= 2.0) {
        return Err(CliError::Usage("fs * duration must cover at least two samples".into()));
    }
    let perturbation = if args.random_phase {
        Some(smoothed_brownian_phase(args.seed, args.phase_kernel, args.fs, n as usize)?)
    } else {
        None
    };
    let (clean, truth) = synth_benchmark_perturbed(args.fs, args.duration, perturbation.as_deref())?;
    let signal = add_noise(
        &clean,
        &NoiseSpec {
            snr_db: Some(args.snr),
            seed: args.seed,
        },
    )?;
    let dir = &args.output.out_dir;
    prepare_dir(dir)?;
    let csv_path = dir.join(format!("{}.csv", args.name));
    let rows: Vec<[f64; 2]> = signal
        .times()
        .into_iter()
        .zip(signal.samples().iter().copied())
        .map(|(t, x)| [t, x])
        .collect();
    io::write_rows(&csv_path, &["t".into(), "x".into()], &rows)?;
    let json_path = dir.join(format!("{}_truth.json", args.name));
    io::write_json(
        &json_path,
        &SynthDocument {
            tool: TOOL,
            version: VERSION,
            config: SynthSettings {
                snr_db: args.snr,
                seed: args.seed,
                fs: args.fs,
                duration: args.duration,
                random_phase: args.random_phase,
                phase_kernel_std: args.phase_kernel,
            },
            signal_file: csv_path.display().to_string(),
            truth: &truth,
        },
    )?;
    Ok(vec![csv_path, json_path])
}

#[derive(Debug, Serialize)]
struct WsfSummary<'a> {
    cluster: usize,
    n_cycles: usize,
    harmonics: usize,
    cos_coeffs: &'a [f64],
    sin_coeffs: &'a [f64],
    fit_rms: f64,
}

impl<'a> WsfSummary<'a> {
    fn new(cluster: usize, w: &'a WsfEstimate<f64>) -> Self {
        WsfSummary {
            cluster,
            n_cycles: w.n_cycles,
            harmonics: w.harmonics,
            cos_coeffs: &w.cos_coeffs,
            sin_coeffs: &w.sin_coeffs,
            fit_rms: w.fit_rms,
        }
    }
}

#[derive(Debug, Serialize)]
struct AnalysisDocument<'a> {
    tool: &'static str,
    version: &'static str,
    input: String,
    fs: f64,
    n_samples: usize,
    config: &'a PipelineConfig<f64>,
    k: usize,
    labels: &'a [usize],
    change_points: &'a [f64],
    cycle_boundary_change_points: &'a [f64],
    cycle_spans: &'a [(f64, f64)],
    shifts: Option<&'a [usize]>,
    entropy_trace: &'a [f64],
    used_iterations: usize,
    harmonic_per_iteration: Vec<usize>,
    period: Option<&'a PeriodRefinement<f64>>,
    wsfs: Vec<WsfSummary<'a>>,
    files: Vec<String>,
}

struct Spectrogram {
    tfr: TfRepresentation<f64>,
    ridge: Vec<f64>,
}

/// STFT and ridge of `signal` as the pipeline would compute them.
fn spectrogram(signal: &Signal<f64>, f0: f64, config: &PipelineConfig<f64>, first: bool) -> CliResult<Spectrogram> {
    let setup = frame_setup(signal.fs(), f0, &config.warp, first)?;
    let tfr = tfa::stft(signal, &setup.window, setup.hop, setup.n_fft)?;
    let ridge = estimate_component(signal, f0, &config.warp, first)?.ridge_freq;
    Ok(Spectrogram { tfr, ridge })
}

fn write_spectrogram(dir: &Path, stem: &str, s: &Spectrogram, max_freq: f64, files: &mut Vec<PathBuf>) -> CliResult<()> {
    let (db, n_bins) = io::log_spectrogram(&s.tfr, max_freq);
    let csv = dir.join(format!("{stem}.csv"));
    io::write_spectrogram_csv(&csv, &s.tfr, &db, n_bins)?;
    let png = dir.join(format!("{stem}.png"));
    io::write_png(&png, &io::spectrogram_image(&s.tfr, &db, n_bins, &s.ridge))?;
    files.push(csv);
    files.push(png);
    Ok(())
}

fn max_multiple(config: &PipelineConfig<f64>) -> usize {
    match config.warp.harmonic {
        HarmonicChoice::Auto(m) | HarmonicChoice::Fixed(m) => m,
    }
}

/// Runs the pipeline on one file and writes every artifact; returns the
/// paths written, results JSON first.
pub fn analyze_file(args: &AnalyzeArgs) -> CliResult<Vec<PathBuf>> {
    let config = args.pipeline.resolve(PipelineConfig::default())?;
    let signal = io::read_signal(&args.input, args.fs)?;
    let analysis: Analysis<f64> = analyze(&signal, &config)?;
    let dir = &args.output.out_dir;
    prepare_dir(dir)?;
    let mut files = Vec::new();

    let result = &analysis.result;
    let cycles_path = dir.join("cycles.csv");
    io::write_matrix(&cycles_path, &result.cycles.rows)?;
    files.push(cycles_path);
    let aligned_path = dir.join("aligned.csv");
    io::write_matrix(&aligned_path, &result.aligned.rows)?;
    files.push(aligned_path);
    let l = result.cycles.rows.cols();
    for (c, w) in result.clusters.wsfs.iter().enumerate() {
        let path = dir.join(format!("wsf_{}.csv", c + 1));
        let rows: Vec<[f64; 3]> = (0..l)
            .map(|n| [n as f64 / l as f64, w.median[n], w.fitted[n]])
            .collect();
        io::write_rows(&path, &["phase".into(), "median".into(), "fitted".into()], &rows)?;
        files.push(path);
    }

    let first = &analysis.warp.records[0];
    let top = (max_multiple(&config) as f64 + 1.5) * first.fundamental;
    let before = spectrogram(&signal, first.fundamental, &config, true)?;
    write_spectrogram(dir, "spectrogram_before", &before, top.min(signal.fs() / 2.0), &mut files)?;
    let last = analysis.warp.final_record();
    let after = spectrogram(&last.warped.signal, 1.0, &config, false)?;
    let warped_top = (max_multiple(&config) as f64 + 1.5).min(last.warped.signal.fs() / 2.0);
    write_spectrogram(dir, "spectrogram_after", &after, warped_top, &mut files)?;

    let results_path = dir.join("results.json");
    let doc = AnalysisDocument {
        tool: TOOL,
        version: VERSION,
        input: args.input.display().to_string(),
        fs: signal.fs(),
        n_samples: signal.len(),
        config: &config,
        k: result.clusters.k,
        labels: &result.clusters.labels,
        change_points: &result.clusters.change_points,
        cycle_boundary_change_points: &result.clusters.boundary_change_points,
        cycle_spans: &result.cycles.row_spans,
        shifts: result.shifts.as_ref().map(|s| s.shifts.as_slice()),
        entropy_trace: analysis.entropy_trace(),
        used_iterations: analysis.warp.used_iterations,
        harmonic_per_iteration: analysis.warp.records.iter().map(|r| r.component.harmonic_index).collect(),
        period: analysis.period.as_ref(),
        wsfs: result.clusters.wsfs.iter().enumerate().map(|(c, w)| WsfSummary::new(c + 1, w)).collect(),
        files: files.iter().map(|p| p.display().to_string()).collect(),
    };
    io::write_json(&results_path, &doc)?;
    files.insert(0, results_path);
    Ok(files)
}

#[derive(Debug, Serialize)]
struct EvalDocument<'a> {
    tool: &'static str,
    version: &'static str,
    report: &'a Table1Report<f64>,
}

/// Runs the sweep and writes `table1.csv` and `table1.json`.
pub fn eval(args: &EvalArgs) -> CliResult<Vec<PathBuf>> {
    let base = Table1Config::<f64>::default();
    let pipeline = args.pipeline.resolve(base.pipeline.clone())?;
    if args.realizations == 0 || args.iterations == 0 || args.snrs.is_empty() {
        return Err(CliError::Usage("realizations, iterations and SNR list must be non-empty".into()));
    }
    let config = Table1Config {
        snrs_db: args.snrs.clone(),
        n_realizations: args.realizations,
        iterations: args.iterations,
        master_seed: args.seed,
        pipeline,
        ..base
    };
    let report = run_table1(&config)?;
    let dir = &args.output.out_dir;
    prepare_dir(dir)?;
    let csv_path = dir.join("table1.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    report.write_csv(file)?;
    let json_path = dir.join("table1.json");
    io::write_json(
        &json_path,
        &EvalDocument {
            tool: TOOL,
            version: VERSION,
            report: &report,
        },
    )?;
    Ok(vec![csv_path, json_path])
}
