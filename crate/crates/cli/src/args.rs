//! Command-line arguments and their translation into pipeline settings.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wavewarp::pipeline::{PeriodRefineConfig, PipelineConfig};
use wavewarp::tfa::{IfOrder, WindowSpec};
use wavewarp::warping::HarmonicChoice;

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "WAVEWARP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "wavewarp", version, about = "Wave-shape estimation and change-point detection by iterative warping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the three-shape benchmark signal and its ground truth.
    Synth(SynthArgs),
    /// Analyze a signal file.
    Analyze(AnalyzeArgs),
    /// Run the benchmark evaluation sweep.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "wavewarp-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Signal-to-noise ratio in dB; `inf` gives the noiseless signal.
    #[arg(long, default_value = "inf")]
    pub snr: f64,
    /// Seed of the noise and of the optional phase perturbation.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sampling rate (Hz).
    #[arg(long, default_value_t = 6000.0)]
    pub fs: f64,
    /// Duration (s).
    #[arg(long, default_value_t = 1.0)]
    pub duration: f64,
    /// Add a smoothed Brownian perturbation to the phase.
    #[arg(long)]
    pub random_phase: bool,
    /// Smoothing kernel standard deviation of the phase perturbation (s).
    #[arg(long, default_value_t = 0.05)]
    pub phase_kernel: f64,
    /// Base name of the output files.
    #[arg(long, default_value = "benchmark")]
    pub name: String,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IfOrderArg {
    First,
    Second,
    Third,
}

impl From<IfOrderArg> for IfOrder {
    fn from(v: IfOrderArg) -> Self {
        match v {
            IfOrderArg::First => IfOrder::First,
            IfOrderArg::Second => IfOrder::Second,
            IfOrderArg::Third => IfOrder::Third,
        }
    }
}

/// Pipeline overrides. Each flag left out keeps the value of the base
/// configuration (built-in defaults, or `--config`).
#[derive(Debug, Default, Args)]
pub struct PipelineArgs {
    /// JSON file holding a full pipeline configuration to start from.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Analysis window length in samples (odd); needs --window-sigma.
    #[arg(long, requires = "window_sigma")]
    pub window_length: Option<usize>,
    /// Analysis window standard deviation in samples; needs --window-length.
    #[arg(long, requires = "window_length")]
    pub window_sigma: Option<f64>,
    /// STFT hop in samples.
    #[arg(long)]
    pub hop: Option<usize>,
    /// FFT size.
    #[arg(long)]
    pub n_fft: Option<usize>,
    /// Harmonic used for warping: a positive index, or `auto`.
    #[arg(long)]
    pub harmonic: Option<String>,
    /// Largest multiple considered by `--harmonic auto`.
    #[arg(long)]
    pub harmonic_max: Option<usize>,
    /// Expected fundamental frequency (Hz).
    #[arg(long)]
    pub fundamental: Option<f64>,
    /// Window bandwidth as a fraction of the fundamental.
    #[arg(long)]
    pub bandwidth_ratio: Option<f64>,
    /// Instantaneous-frequency reassignment order.
    #[arg(long, value_enum)]
    pub if_order: Option<IfOrderArg>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub min_iterations: Option<usize>,
    /// Relative SVD-entropy decrease below which iteration stops.
    #[arg(long)]
    pub entropy_tolerance: Option<f64>,
    /// Samples per warped cycle.
    #[arg(long)]
    pub samples_per_cycle: Option<usize>,
    /// Largest cluster count considered.
    #[arg(long)]
    pub k_max: Option<usize>,
    /// k-means restarts per cluster count.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Clustering seed.
    #[arg(long)]
    pub cluster_seed: Option<u64>,
    /// Warped-period search range `LO,HI`.
    #[arg(long, value_parser = parse_range)]
    pub period_refine: Option<(f64, f64)>,
    /// Grid points of the warped-period search.
    #[arg(long, default_value_t = 41)]
    pub period_grid: usize,
    /// Align cycles by cyclic synchronization before clustering.
    #[arg(long, overrides_with = "no_sync")]
    pub sync: bool,
    /// Cluster cycles without synchronization.
    #[arg(long, overrides_with = "sync")]
    pub no_sync: bool,
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

impl PipelineArgs {
    /// Applies the given flags on top of `base` (or the `--config` file).
    pub fn resolve(&self, base: PipelineConfig<f64>) -> CliResult<PipelineConfig<f64>> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => base,
        };
        if let (Some(length), Some(sigma)) = (self.window_length, self.window_sigma) {
            c.warp.window = Some(WindowSpec::gaussian(length, sigma)?);
        }
        if self.hop.is_some() {
            c.warp.hop = self.hop;
        }
        if self.n_fft.is_some() {
            c.warp.n_fft = self.n_fft;
        }
        let max_mult = self.harmonic_max.unwrap_or(match c.warp.harmonic {
            HarmonicChoice::Auto(m) => m,
            HarmonicChoice::Fixed(_) => 3,
        });
        c.warp.harmonic = match self.harmonic.as_deref() {
            None => match c.warp.harmonic {
                HarmonicChoice::Auto(_) => HarmonicChoice::Auto(max_mult),
                fixed => fixed,
            },
            Some("auto") => HarmonicChoice::Auto(max_mult),
            Some(v) => HarmonicChoice::Fixed(
                v.parse()
                    .map_err(|_| CliError::Usage(format!("--harmonic expects a positive integer or `auto`, got `{v}`")))?,
            ),
        };
        if self.fundamental.is_some() {
            c.warp.fundamental_hint = self.fundamental;
        }
        if let Some(v) = self.bandwidth_ratio {
            c.warp.bandwidth_ratio = v;
        }
        if let Some(v) = self.if_order {
            c.warp.if_order = v.into();
        }
        if let Some(v) = self.max_iterations {
            c.warp.max_iterations = v;
        }
        if let Some(v) = self.min_iterations {
            c.warp.min_iterations = v;
        }
        if let Some(v) = self.entropy_tolerance {
            c.warp.entropy_tolerance = v;
        }
        if let Some(v) = self.samples_per_cycle {
            c.warp.samples_per_cycle = v;
        }
        if let Some(v) = self.k_max {
            c.cluster.k_max = v;
        }
        if let Some(v) = self.replicates {
            c.cluster.replicates = v;
        }
        if let Some(v) = self.cluster_seed {
            c.cluster.seed = v;
        }
        if let Some(range) = self.period_refine {
            c.period_refine = Some(PeriodRefineConfig {
                range,
                n_grid: self.period_grid,
            });
        }
        if self.sync {
            c.synchronize = true;
        }
        if self.no_sync {
            c.synchronize = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Input signal: CSV with a header (`t,x`, or `x` with --fs) or mono WAV.
    pub input: PathBuf,
    /// Sampling rate (Hz); overrides the rate implied by the input.
    #[arg(long)]
    pub fs: Option<f64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Realizations per SNR.
    #[arg(long, default_value_t = 100)]
    pub realizations: usize,
    /// Master seed.
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
    /// Comma-separated SNRs (dB).
    #[arg(long, value_delimiter = ',', default_value = "30,20,10")]
    pub snrs: Vec<f64>,
    /// Warping iterations scored.
    #[arg(long, default_value_t = 3)]
    pub iterations: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}
