//! Signals, the three-harmonic benchmark generator with logistic harmonic
//! envelopes, smoothed Brownian phase perturbations, and calibrated additive
//! Gaussian noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WarpError};
use crate::fft;
use crate::scalar::Real;

/// Uniformly sampled real-valued series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal<T> {
    samples: Vec<T>,
    fs: T,
    t0: T,
}

impl<T: Real> Signal<T> {
    pub fn new(samples: Vec<T>, fs: T, t0: T) -> Result<Self> {
        if samples.is_empty() {
            return Err(WarpError::insufficient("signal has no samples"));
        }
        if !(fs > T::zero()) || !fs.is_finite() {
            return Err(WarpError::invalid(format!("sampling rate must be positive, got {fs}")));
        }
        if !t0.is_finite() {
            return Err(WarpError::invalid("time origin must be finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(WarpError::invalid(format!("sample {i} is not finite")));
        }
        Ok(Signal { samples, fs, t0 })
    }

    #[inline]
    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<T> {
        self.samples
    }

    #[inline]
    pub fn fs(&self) -> T {
        self.fs
    }

    #[inline]
    pub fn t0(&self) -> T {
        self.t0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time of sample `n`.
    #[inline]
    pub fn time(&self, n: usize) -> T {
        self.t0 + T::from_usize_lossy(n) / self.fs
    }

    /// Time of the last sample.
    pub fn end_time(&self) -> T {
        self.time(self.samples.len() - 1)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|n| self.time(n)).collect()
    }

    /// Sample-mean power.
    pub fn power(&self) -> T {
        self.samples.iter().map(|&v| v * v).sum::<T>() / T::from_usize_lossy(self.len())
    }

    /// Same sampling grid, new samples.
    pub fn with_samples(&self, samples: Vec<T>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(WarpError::invalid("replacement samples change the signal length"));
        }
        Signal::new(samples, self.fs, self.t0)
    }

    pub fn cast<U: Real>(&self) -> Signal<U> {
        Signal {
            samples: self.samples.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            fs: U::lit(self.fs.to_f64_lossy()),
            t0: U::lit(self.t0.to_f64_lossy()),
        }
    }
}

/// Known structure behind a synthesized signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<T> {
    /// Cosine coefficients of harmonics 1..=K for each WSF, in segment order.
    pub wsf_coeffs: Vec<Vec<T>>,
    /// Times (s) at which the wave shape switches.
    pub change_points: Vec<T>,
    /// Phase in cycles, tabulated on the signal grid.
    pub phase: Vec<T>,
    /// Phase derivative (cycles/s) on the signal grid.
    pub phase_rate: Vec<T>,
    /// Second-harmonic envelope.
    pub envelope_a: Vec<T>,
    /// Third-harmonic envelope.
    pub envelope_b: Vec<T>,
}

impl<T: Real> GroundTruth<T> {
    /// Samples WSF `j` at `len` points of one unit period.
    pub fn wsf_samples(&self, j: usize, len: usize) -> Vec<T> {
        harmonic_wave(&self.wsf_coeffs[j], len)
    }

    /// Mean cycle duration (s) implied by the tabulated phase.
    pub fn mean_cycle_len(&self, fs: T) -> T {
        let n = self.phase.len();
        let span = T::from_usize_lossy(n - 1) / fs;
        span / (self.phase[n - 1] - self.phase[0])
    }
}

/// Samples `sum_k c_k cos(2 pi k t)` at `t = n / len`.
pub fn harmonic_wave<T: Real>(cos_coeffs: &[T], len: usize) -> Vec<T> {
    (0..len)
        .map(|n| {
            let t = T::from_usize_lossy(n) / T::from_usize_lossy(len);
            cos_coeffs
                .iter()
                .enumerate()
                .map(|(k, &c)| c * (T::two_pi() * T::from_usize_lossy(k + 1) * t).cos())
                .sum()
        })
        .collect()
}

/// Additive-noise request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec<T> {
    /// Target SNR in dB; `None` or `+inf` leaves the signal untouched.
    pub snr_db: Option<T>,
    pub seed: u64,
}

const LOGISTIC_SLOPE: f64 = 250.0;
const BASE_RATE: f64 = 40.0;
const FM_DEPTH: f64 = 4.0;

fn logistic<T: Real>(t: T, center: f64) -> T {
    T::one() / (T::one() + (-T::lit(LOGISTIC_SLOPE) * (t - T::lit(center))).exp())
}

/// Noiseless three-harmonic benchmark: fundamental with constant unit
/// amplitude, and second/third harmonics whose logistic envelopes switch at
/// t = 1/3 and t = 2/3.
pub fn synth_benchmark<T: Real>(fs: T, duration: T) -> Result<(Signal<T>, GroundTruth<T>)> {
    synth_benchmark_perturbed(fs, duration, None)
}

/// Benchmark with an additive phase perturbation `Y` tabulated on the sample
/// grid (see [`smoothed_brownian_phase`]).
pub fn synth_benchmark_perturbed<T: Real>(
    fs: T,
    duration: T,
    perturbation: Option<&[T]>,
) -> Result<(Signal<T>, GroundTruth<T>)> {
    if !(fs > T::zero()) || !(duration > T::zero()) {
        return Err(WarpError::invalid("fs and duration must be positive"));
    }
    let n = (duration * fs).floor().to_usize().unwrap_or(0);
    if n < 2 {
        return Err(WarpError::insufficient("duration shorter than two samples"));
    }
    if let Some(p) = perturbation {
        if p.len() != n {
            return Err(WarpError::invalid(format!(
                "perturbation has {} samples, signal has {n}",
                p.len()
            )));
        }
    }
    let two_pi = T::two_pi();
    let fm = T::lit(4.0) * T::PI();
    let times: Vec<T> = (0..n).map(|i| T::from_usize_lossy(i) / fs).collect();
    let mut phase: Vec<T> = times
        .iter()
        .map(|&t| T::lit(BASE_RATE) * t + (T::lit(2.0) * fm * t).cos() / two_pi)
        .collect();
    let mut rate: Vec<T> = times
        .iter()
        .map(|&t| T::lit(BASE_RATE) - T::lit(FM_DEPTH) * (T::lit(2.0) * fm * t).sin())
        .collect();
    if let Some(p) = perturbation {
        let dp = gradient(p, fs);
        for i in 0..n {
            phase[i] = phase[i] + p[i];
            rate[i] = rate[i] + dp[i];
        }
    }
    let max_rate = rate.iter().copied().fold(T::zero(), T::max);
    let nyquist = T::lit(6.0) * max_rate;
    if fs < nyquist {
        return Err(WarpError::invalid(format!(
            "fs = {fs} Hz is below the third-harmonic Nyquist bound {nyquist} Hz"
        )));
    }
    let env_a: Vec<T> = times
        .iter()
        .map(|&t| logistic(t, 1.0 / 3.0) - logistic(t, 2.0 / 3.0))
        .collect();
    let env_b: Vec<T> = times.iter().map(|&t| logistic(t, 1.0 / 3.0)).collect();
    let samples: Vec<T> = (0..n)
        .map(|i| {
            let p = two_pi * phase[i];
            p.cos() + env_a[i] * (p + p).cos() + env_b[i] * (p + p + p).cos()
        })
        .collect();
    let change_points: Vec<T> = [1.0 / 3.0, 2.0 / 3.0]
        .iter()
        .map(|&c| T::lit(c))
        .filter(|&c| c < times[n - 1])
        .collect();
    let all_wsfs = [
        vec![T::one(), T::zero(), T::zero()],
        vec![T::one(), T::one(), T::one()],
        vec![T::one(), T::zero(), T::one()],
    ];
    let truth = GroundTruth {
        wsf_coeffs: all_wsfs[..change_points.len() + 1].to_vec(),
        change_points,
        phase,
        phase_rate: rate,
        envelope_a: env_a,
        envelope_b: env_b,
    };
    Ok((Signal::new(samples, fs, T::zero())?, truth))
}

/// Centered finite-difference derivative with one-sided ends.
fn gradient<T: Real>(y: &[T], fs: T) -> Vec<T> {
    let n = y.len();
    if n < 2 {
        return vec![T::zero(); n];
    }
    let half = T::lit(0.5);
    (0..n)
        .map(|i| {
            if i == 0 {
                (y[1] - y[0]) * fs
            } else if i == n - 1 {
                (y[n - 1] - y[n - 2]) * fs
            } else {
                (y[i + 1] - y[i - 1]) * half * fs
            }
        })
        .collect()
}

/// Realization of `Y(t) = int_0^t X(u) / max|X| du` with `X` a standard
/// Brownian path convolved with a Gaussian kernel of standard deviation
/// `kernel_std` seconds, tabulated at `n` samples of rate `fs` starting at 0.
///
/// The Brownian path is drawn on a grid extended by four kernel widths on
/// each side so the convolution has no edge artefacts.
pub fn smoothed_brownian_phase<T: Real>(seed: u64, kernel_std: T, fs: T, n: usize) -> Result<Vec<T>> {
    if !(kernel_std > T::zero()) {
        return Err(WarpError::invalid("kernel_std must be positive"));
    }
    if !(fs > T::zero()) || n == 0 {
        return Err(WarpError::invalid("grid must have positive rate and length"));
    }
    let dt = T::one() / fs;
    let ext = (T::lit(4.0) * kernel_std * fs).ceil().to_usize().unwrap_or(0).max(1);
    let total = n + 2 * ext;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sqrt_dt = dt.sqrt();
    let mut walk = Vec::with_capacity(total);
    let mut w = T::zero();
    walk.push(w);
    for _ in 1..total {
        let z: f64 = StandardNormal.sample(&mut rng);
        w = w + sqrt_dt * T::lit(z);
        walk.push(w);
    }
    let kernel: Vec<T> = (0..=2 * ext)
        .map(|j| {
            let s = (T::from_usize_lossy(j) - T::from_usize_lossy(ext)) * dt / kernel_std;
            (-(s * s) / T::lit(2.0)).exp()
        })
        .collect();
    let ksum: T = kernel.iter().copied().sum();
    let kernel: Vec<T> = kernel.iter().map(|&k| k / ksum).collect();
    let full = fft::convolve(&walk, &kernel);
    // Full-convolution index 2*ext + i centers the kernel on walk[ext + i].
    let smooth: Vec<T> = full[2 * ext..2 * ext + n].to_vec();
    let sup = smooth.iter().fold(T::zero(), |m, v| m.max(v.magnitude()));
    if !(sup > T::zero()) {
        return Err(WarpError::numerical("smoothed Brownian path vanished"));
    }
    let half = T::lit(0.5);
    let mut y = Vec::with_capacity(n);
    let mut acc = T::zero();
    y.push(acc);
    for i in 1..n {
        acc = acc + half * (smooth[i - 1] + smooth[i]) / sup * dt;
        y.push(acc);
    }
    Ok(y)
}

/// Adds white Gaussian noise scaled to the requested SNR (sample-mean powers).
pub fn add_noise<T: Real>(signal: &Signal<T>, spec: &NoiseSpec<T>) -> Result<Signal<T>> {
    let snr = match spec.snr_db {
        None => return Ok(signal.clone()),
        Some(s) if s.is_infinite() && s > T::zero() => return Ok(signal.clone()),
        Some(s) if s.is_nan() => return Err(WarpError::invalid("SNR is NaN")),
        Some(s) => s,
    };
    let power = signal.power();
    if !(power > T::zero()) {
        return Err(WarpError::invalid("cannot set an SNR on a zero-power signal"));
    }
    let sigma = (power / T::lit(10.0).powf(snr / T::lit(10.0))).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = signal
        .samples()
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x + sigma * T::lit(z)
        })
        .collect();
    signal.with_samples(samples)
}

/// Piecewise K-harmonic signal `sum_k c_{j,k} cos(2 pi k phase(t))`, with
/// segment `j` active from `boundaries[j-1]` to `boundaries[j]`. Test
/// scaffolding for pipelines that need a simple known wave-shape sequence.
pub fn piecewise_harmonic<T: Real>(
    phase: &[T],
    fs: T,
    boundaries: &[T],
    coeffs: &[Vec<T>],
) -> Result<Signal<T>> {
    if coeffs.len() != boundaries.len() + 1 {
        return Err(WarpError::invalid("need one coefficient set per segment"));
    }
    let samples = phase
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let t = T::from_usize_lossy(i) / fs;
            let seg = boundaries.iter().filter(|&&b| t >= b).count();
            coeffs[seg]
                .iter()
                .enumerate()
                .map(|(k, &c)| c * (T::two_pi() * T::from_usize_lossy(k + 1) * p).cos())
                .sum()
        })
        .collect();
    Signal::new(samples, fs, T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signal_rejects_bad_input() {
        assert!(Signal::<f64>::new(vec![], 1.0, 0.0).is_err());
        assert!(Signal::new(vec![1.0], 0.0, 0.0).is_err());
        assert!(Signal::new(vec![f64::NAN], 1.0, 0.0).is_err());
    }

    #[test]
    fn benchmark_basic_values() {
        let (s, gt) = synth_benchmark(6000.0f64, 1.0).unwrap();
        assert_eq!(s.len(), 6000);
        assert!((s.samples()[0] - 1f64.cos()).abs() < 1e-12);
        let phi = |t: f64| 40.0 * t + (8.0 * std::f64::consts::PI * t).cos() / (2.0 * std::f64::consts::PI);
        assert!((phi(1.0) - phi(0.0) - 40.0).abs() < 1e-12);
        assert_eq!(gt.change_points, vec![1.0 / 3.0, 2.0 / 3.0]);
        assert!(gt.phase_rate.iter().all(|&r| (36.0..=44.0).contains(&r)));
        assert!(gt.wsf_coeffs.iter().all(|c| c[0] == 1.0));
        assert!(gt.envelope_a[0] < 1e-30 && gt.envelope_b[0] < 1e-30);
    }

    #[test]
    fn benchmark_rejects_low_rate() {
        assert!(synth_benchmark(200.0f64, 1.0).is_err());
        assert!(synth_benchmark(264.0f64, 1.0).is_ok());
    }

    #[test]
    fn brownian_phase_contract() {
        let y = smoothed_brownian_phase(3, 0.05f64, 6000.0, 6000).unwrap();
        assert_eq!(y[0], 0.0);
        let slope = y
            .windows(2)
            .map(|w| ((w[1] - w[0]) * 6000.0).abs())
            .fold(0.0, f64::max);
        assert!(slope <= 1.0 + 1e-12, "slope {slope}");
        assert!(slope > 0.5);
        let again = smoothed_brownian_phase(3, 0.05f64, 6000.0, 6000).unwrap();
        assert_eq!(y, again);
        assert!(smoothed_brownian_phase(3, 0.0f64, 6000.0, 10).is_err());
    }

    #[test]
    fn noise_cases() {
        let (s, _) = synth_benchmark(6000.0f64, 1.0).unwrap();
        let same = add_noise(&s, &NoiseSpec { snr_db: None, seed: 1 }).unwrap();
        assert_eq!(same, s);
        let inf = add_noise(&s, &NoiseSpec { snr_db: Some(f64::INFINITY), seed: 1 }).unwrap();
        assert_eq!(inf, s);
        let zero = Signal::new(vec![0.0; 10], 1.0, 0.0).unwrap();
        assert!(add_noise(&zero, &NoiseSpec { snr_db: Some(0.0), seed: 1 }).is_err());
        assert_eq!(add_noise(&zero, &NoiseSpec { snr_db: None, seed: 1 }).unwrap(), zero);
    }

    #[test]
    fn zero_db_noise_power_matches_signal_power() {
        let (s, _) = synth_benchmark(6000.0f64, 1.0).unwrap();
        let y = add_noise(&s, &NoiseSpec { snr_db: Some(0.0), seed: 9 }).unwrap();
        let noise_power: f64 = y
            .samples()
            .iter()
            .zip(s.samples())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 6000.0;
        // sigma^2 equals P_x; the empirical noise power fluctuates by ~sqrt(2/N)
        assert!((noise_power / s.power() - 1.0).abs() < 0.08);
    }
}
