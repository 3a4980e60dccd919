//! Short-time Fourier analysis of one harmonic: Gaussian windows, the STFT
//! (with a derivative-window companion for reassignment), dynamic-programming
//! ridge extraction, and amplitude / instantaneous-frequency / phase
//! estimates along the ridge.

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WarpError};
use crate::fft::next_pow2;
use crate::scalar::Real;
use crate::signal_model::Signal;

/// Ratio between a Gaussian window's effective bandwidth (where its power
/// spectrum falls to 1e-4 of the peak) and its spectral standard deviation.
pub fn gaussian_bandwidth_ratio() -> f64 {
    1e4f64.ln().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec<T> {
    /// Odd number of taps.
    pub length: usize,
    /// Standard deviation in samples.
    pub sigma: T,
    pub kind: WindowKind,
}

impl<T: Real> WindowSpec<T> {
    pub fn gaussian(length: usize, sigma: T) -> Result<Self> {
        let spec = WindowSpec {
            length,
            sigma,
            kind: WindowKind::Gaussian,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Gaussian window whose effective bandwidth (1e-4 spectral tail) is
    /// `bandwidth_hz`, truncated at four standard deviations.
    pub fn for_bandwidth(fs: T, bandwidth_hz: T) -> Result<Self> {
        if !(bandwidth_hz > T::zero()) || !(fs > T::zero()) {
            return Err(WarpError::invalid("bandwidth and fs must be positive"));
        }
        let sigma_f = bandwidth_hz / T::lit(gaussian_bandwidth_ratio());
        let sigma = fs / (T::two_pi() * sigma_f);
        let half = (T::lit(4.0) * sigma).ceil().to_usize().unwrap_or(1).max(1);
        Self::gaussian(2 * half + 1, sigma)
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 3 || self.length % 2 == 0 {
            return Err(WarpError::invalid(format!(
                "window length must be odd and at least 3, got {}",
                self.length
            )));
        }
        if !(self.sigma > T::zero()) || !self.sigma.is_finite() {
            return Err(WarpError::invalid("window sigma must be positive"));
        }
        Ok(())
    }

    /// Spectral standard deviation (Hz) of the window at sampling rate `fs`.
    pub fn sigma_hz(&self, fs: T) -> T {
        fs / (T::two_pi() * self.sigma)
    }
}

/// Materialized window taps.
#[derive(Debug, Clone, PartialEq)]
pub struct Window<T> {
    pub spec: WindowSpec<T>,
    /// Unit-L2-norm taps, centered at index `length / 2`.
    pub taps: Vec<T>,
    /// Derivative of the taps with respect to the sample index.
    pub derivative: Vec<T>,
    /// Window spectrum at zero frequency, `sum h[n]`.
    pub h_hat_0: T,
}

pub fn make_window<T: Real>(spec: &WindowSpec<T>) -> Result<Window<T>> {
    spec.validate()?;
    let center = T::from_usize_lossy(spec.length / 2);
    let raw: Vec<T> = (0..spec.length)
        .map(|n| {
            let u = (T::from_usize_lossy(n) - center) / spec.sigma;
            (-(u * u) / T::lit(2.0)).exp()
        })
        .collect();
    let norm = raw.iter().map(|&v| v * v).sum::<T>().sqrt();
    let taps: Vec<T> = raw.iter().map(|&v| v / norm).collect();
    let var = spec.sigma * spec.sigma;
    let offset = |n: usize| T::from_usize_lossy(n) - center;
    let derivative: Vec<T> = taps.iter().enumerate().map(|(n, &h)| -offset(n) / var * h).collect();
    let h_hat_0 = taps.iter().copied().sum();
    Ok(Window {
        spec: *spec,
        taps,
        derivative,
        h_hat_0,
    })
}

/// STFT on a uniform time-frequency grid, with the auxiliary-window
/// transforms used for frequency reassignment kept alongside.
#[derive(Debug, Clone)]
pub struct TfRepresentation<T> {
    /// Row-major `[frames x bins]`.
    pub values: Vec<Complex<T>>,
    /// Same layout, computed with the derivative window `h'`.
    pub dvalues: Vec<Complex<T>>,
    /// Analysed samples, kept for single-bin transforms with other windows.
    pub samples: Vec<T>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub times: Vec<T>,
    pub freqs: Vec<T>,
    pub hop: usize,
    pub n_fft: usize,
    pub fs: T,
    pub window: WindowSpec<T>,
    pub h_hat_0: T,
}

impl<T: Real> TfRepresentation<T> {
    #[inline]
    pub fn value(&self, frame: usize, bin: usize) -> Complex<T> {
        self.values[frame * self.n_bins + bin]
    }

    #[inline]
    pub fn magnitude(&self, frame: usize, bin: usize) -> T {
        self.value(frame, bin).norm()
    }

    pub fn bin_width(&self) -> T {
        self.fs / T::from_usize_lossy(self.n_fft)
    }

    pub fn max_magnitude(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.norm()))
    }

    /// Nearest bin to `freq`, clamped into range.
    pub fn nearest_bin(&self, freq: T) -> usize {
        let b = (freq / self.bin_width()).round();
        if b <= T::zero() {
            0
        } else {
            b.to_usize().unwrap_or(self.n_bins - 1).min(self.n_bins - 1)
        }
    }

    /// Transform of one frame at one bin with arbitrary taps centred like
    /// the analysis window.
    pub fn value_with(&self, frame: usize, bin: usize, taps: &[T]) -> Complex<T> {
        let half = (taps.len() / 2) as isize;
        let center = (frame * self.hop) as isize;
        let step = -T::two_pi() * T::from_usize_lossy(bin) / T::from_usize_lossy(self.n_fft);
        let mut acc = Complex::new(T::zero(), T::zero());
        for (i, &w) in taps.iter().enumerate() {
            let j = i as isize - half;
            let u = center + j;
            if u < 0 || u >= self.samples.len() as isize {
                continue;
            }
            let theta = step * T::lit(j as f64);
            acc = acc + Complex::new(theta.cos(), theta.sin()) * (self.samples[u as usize] * w);
        }
        acc
    }

    /// Log-magnitude spectrogram as rows of `[frames][bins]`.
    pub fn log_magnitude(&self) -> Vec<Vec<T>> {
        let tiny = T::min_positive_value();
        (0..self.n_frames)
            .map(|m| {
                (0..self.n_bins)
                    .map(|k| (self.magnitude(m, k) + tiny).ln())
                    .collect()
            })
            .collect()
    }
}

/// `V[m, k] = sum_u x(u) h(u - t_m) exp(-i 2 pi xi_k (u - t_m))`, with frames
/// centred on samples `t_m = m * hop` and zero padding beyond the edges.
pub fn stft<T: Real>(
    signal: &Signal<T>,
    window: &WindowSpec<T>,
    hop: usize,
    n_fft: usize,
) -> Result<TfRepresentation<T>> {
    let win = make_window(window)?;
    if hop == 0 {
        return Err(WarpError::invalid("hop must be at least 1"));
    }
    if n_fft < window.length {
        return Err(WarpError::invalid(format!(
            "n_fft = {n_fft} is shorter than the window ({})",
            window.length
        )));
    }
    let x = signal.samples();
    if x.len() <= window.length {
        return Err(WarpError::insufficient(format!(
            "signal has {} samples; the analysis window needs more than {}",
            x.len(),
            window.length
        )));
    }
    let n_frames = (x.len() - 1) / hop + 1;
    let n_bins = n_fft / 2 + 1;
    let half = (window.length / 2) as isize;
    let fft = FftPlanner::<T>::new().plan_fft_forward(n_fft);
    let zero = Complex::new(T::zero(), T::zero());
    let tapsets = [&win.taps, &win.derivative];
    let frames: Vec<Vec<Vec<Complex<T>>>> = (0..n_frames)
        .into_par_iter()
        .map(|m| {
            let center = (m * hop) as isize;
            let mut scratch = vec![zero; fft.get_inplace_scratch_len()];
            tapsets
                .iter()
                .map(|taps| {
                    let mut buf = vec![zero; n_fft];
                    for j in -half..=half {
                        let u = center + j;
                        if u < 0 || u >= x.len() as isize {
                            continue;
                        }
                        let idx = j.rem_euclid(n_fft as isize) as usize;
                        buf[idx].re = x[u as usize] * taps[(j + half) as usize];
                    }
                    fft.process_with_scratch(&mut buf, &mut scratch);
                    buf.truncate(n_bins);
                    buf
                })
                .collect()
        })
        .collect();
    let mut planes: Vec<Vec<Complex<T>>> = (0..tapsets.len())
        .map(|_| Vec::with_capacity(n_frames * n_bins))
        .collect();
    for frame in frames {
        for (plane, v) in planes.iter_mut().zip(frame) {
            plane.extend(v);
        }
    }
    let dvalues = planes.pop().unwrap_or_default();
    let values = planes.pop().unwrap_or_default();
    if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(WarpError::numerical("non-finite STFT value"));
    }
    let fs = signal.fs();
    Ok(TfRepresentation {
        values,
        dvalues,
        samples: x.to_vec(),
        n_frames,
        n_bins,
        times: (0..n_frames).map(|m| signal.time(m * hop)).collect(),
        freqs: (0..n_bins)
            .map(|k| T::from_usize_lossy(k) * fs / T::from_usize_lossy(n_fft))
            .collect(),
        hop,
        n_fft,
        fs,
        window: *window,
        h_hat_0: win.h_hat_0,
    })
}

/// Default FFT size: next power of two at least four window lengths.
pub fn default_n_fft(window_length: usize) -> usize {
    next_pow2(4 * window_length)
}

/// Default ridge penalty (Hz^-2): a jump of `d` Hz costs as much as sitting
/// `d` Hz off the peak of a Gaussian window's log power spectrum.
pub fn default_ridge_penalty<T: Real>(tfr: &TfRepresentation<T>) -> T {
    let s = tfr.window.sigma_hz(tfr.fs);
    T::one() / (s * s)
}

/// Exact dynamic-programming ridge: maximizes
/// `sum_m log|V(m, c_m)|^2 - penalty * sum_m (f(c_{m+1}) - f(c_m))^2`
/// over all bin paths inside `band` (Hz, inclusive).
pub fn extract_ridge<T: Real>(tfr: &TfRepresentation<T>, band: (T, T), penalty: T) -> Result<Vec<usize>> {
    if !(penalty >= T::zero()) {
        return Err(WarpError::invalid("ridge penalty must be non-negative"));
    }
    let bins: Vec<usize> = (0..tfr.n_bins)
        .filter(|&k| tfr.freqs[k] >= band.0 && tfr.freqs[k] <= band.1)
        .collect();
    if bins.is_empty() {
        return Err(WarpError::invalid(format!(
            "frequency band [{}, {}] contains no bins",
            band.0, band.1
        )));
    }
    let nb = bins.len();
    let tiny = T::min_positive_value();
    let score = |m: usize, j: usize| -> T {
        let v = tfr.magnitude(m, bins[j]);
        (v * v + tiny).ln()
    };
    let df = tfr.bin_width();
    let cost: Vec<T> = (0..nb)
        .map(|d| {
            let f = T::from_usize_lossy(d) * df;
            penalty * f * f
        })
        .collect();
    let mut acc: Vec<T> = (0..nb).map(|j| score(0, j)).collect();
    let mut back = vec![0u32; tfr.n_frames * nb];
    let mut next = vec![T::zero(); nb];
    for m in 1..tfr.n_frames {
        for j in 0..nb {
            let mut best = T::neg_infinity();
            let mut arg = 0usize;
            for (i, &a) in acc.iter().enumerate() {
                let v = a - cost[i.abs_diff(j)];
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            next[j] = best + score(m, j);
            back[m * nb + j] = arg as u32;
        }
        std::mem::swap(&mut acc, &mut next);
    }
    let mut j = acc
        .iter()
        .enumerate()
        .fold((0usize, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0;
    let mut path = vec![0usize; tfr.n_frames];
    for m in (0..tfr.n_frames).rev() {
        path[m] = bins[j];
        if m > 0 {
            j = back[m * nb + j] as usize;
        }
    }
    Ok(path)
}

fn check_ridge<T: Real>(tfr: &TfRepresentation<T>, ridge: &[usize]) -> Result<()> {
    if ridge.len() != tfr.n_frames {
        return Err(WarpError::invalid("ridge length differs from frame count"));
    }
    if ridge.iter().any(|&k| k >= tfr.n_bins) {
        return Err(WarpError::invalid("ridge bin out of range"));
    }
    Ok(())
}

const MAGNITUDE_FLOOR: f64 = 1e-6;

/// `2 |V(t, f)| / h_hat(0)` along the ridge. The peak magnitude is refined by
/// a parabola through the log-magnitudes of the ridge bin and its neighbours,
/// which is exact for a Gaussian window and a stationary tone. Frames below
/// `1e-6` of the global maximum report that floor.
pub fn estimate_amplitude<T: Real>(tfr: &TfRepresentation<T>, ridge: &[usize]) -> Result<Vec<T>> {
    check_ridge(tfr, ridge)?;
    let global = tfr.max_magnitude();
    let floor = T::lit(MAGNITUDE_FLOOR) * global;
    let scale = T::lit(2.0) / tfr.h_hat_0;
    Ok(ridge
        .iter()
        .enumerate()
        .map(|(m, &k)| {
            let centre = tfr.magnitude(m, k);
            if !(centre > floor) {
                return floor * scale;
            }
            let mut peak = centre;
            if k > 0 && k + 1 < tfr.n_bins {
                let (l, r) = (tfr.magnitude(m, k - 1), tfr.magnitude(m, k + 1));
                if l > T::zero() && r > T::zero() && centre >= l && centre >= r {
                    let (a, b, c) = (l.ln(), centre.ln(), r.ln());
                    let denom = a - b - b + c;
                    if denom < T::zero() {
                        let off = (T::lit(0.5) * (a - c) / denom).max(-T::one()).min(T::one());
                        peak = (b - T::lit(0.25) * (a - c) * off).exp();
                    }
                }
            }
            peak * scale
        })
        .collect())
}

/// Local phase model used by [`estimate_if_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IfOrder {
    /// Pure tone: `f = xi - fs * Im(V_dh / V_h) / (2 pi)`.
    First,
    /// Linear chirp.
    Second,
    /// Quadratic instantaneous frequency.
    #[default]
    Third,
}

impl IfOrder {
    /// Number of polynomial coefficients of the local instantaneous frequency.
    pub fn degree(self) -> usize {
        match self {
            IfOrder::First => 1,
            IfOrder::Second => 2,
            IfOrder::Third => 3,
        }
    }
}

/// Reassigned instantaneous frequency along the ridge:
/// `f = xi - fs * Im(V_dh / V_h) / (2 pi)`, clipped to one bin around the
/// ridge and falling back to the ridge frequency where `|V|` is negligible.
pub fn estimate_if<T: Real>(tfr: &TfRepresentation<T>, ridge: &[usize]) -> Result<Vec<T>> {
    estimate_if_with(tfr, ridge, IfOrder::First)
}

/// Instantaneous frequency along the ridge under a polynomial local model.
///
/// Near each frame centre the component is taken as `exp(i 2 pi psi(s))`
/// with `psi'(s) = q_0 + q_1 s + ... + q_{P-1} s^{P-1}`. Summation by parts
/// against the windows `s^j h(s)`, `j < P`, gives the Hankel system
/// `sum_r M_{j+r} Q_r = -(j M_{j-1} + D_j) / (2 pi i)` with `M_k` the
/// transform with `s^k h`, `D_j` the transform with `s^j h'` and
/// `Q_0 = q_0 - xi`. The real part of `Q_0` is the correction. Corrections
/// are clipped to one bin around the ridge; frames where `|V|` is negligible
/// or the system is singular fall back to lower orders and finally to the
/// ridge frequency.
pub fn estimate_if_with<T: Real>(tfr: &TfRepresentation<T>, ridge: &[usize], order: IfOrder) -> Result<Vec<T>> {
    check_ridge(tfr, ridge)?;
    let floor = T::lit(MAGNITUDE_FLOOR) * tfr.max_magnitude();
    let df = tfr.bin_width();
    let p = order.degree();
    let win = make_window(&tfr.window)?;
    let center = T::from_usize_lossy(win.taps.len() / 2);
    let offsets: Vec<T> = (0..win.taps.len()).map(|n| T::from_usize_lossy(n) - center).collect();
    let weighted = |base: &[T], power: usize| -> Vec<T> {
        base.iter().zip(&offsets).map(|(&h, &s)| h * s.powi(power as i32)).collect()
    };
    let moment_taps: Vec<Vec<T>> = (1..2 * p - 1).map(|k| weighted(&win.taps, k)).collect();
    let deriv_taps: Vec<Vec<T>> = (1..p).map(|j| weighted(&win.derivative, j)).collect();
    Ok(ridge
        .par_iter()
        .enumerate()
        .map(|(m, &k)| {
            let xi = tfr.freqs[k];
            let idx = m * tfr.n_bins + k;
            let g = tfr.values[idx];
            if !(g.norm() > floor) {
                return xi;
            }
            let mut moments = vec![g];
            moments.extend(moment_taps.iter().map(|t| tfr.value_with(m, k, t)));
            let mut derivs = vec![tfr.dvalues[idx]];
            derivs.extend(deriv_taps.iter().map(|t| tfr.value_with(m, k, t)));
            let offset = (1..=p)
                .rev()
                .find_map(|q| polynomial_offset(&moments, &derivs, q))
                .unwrap_or_else(T::zero);
            let corr = (tfr.fs * offset).max(-df).min(df);
            if corr.is_finite() {
                xi + corr
            } else {
                xi
            }
        })
        .collect())
}

/// Frequency offset (cycles per sample) from the order-`p` Hankel system,
/// or `None` when it is numerically singular.
fn polynomial_offset<T: Real>(moments: &[Complex<T>], derivs: &[Complex<T>], p: usize) -> Option<T> {
    let a = Complex::new(T::zero(), T::two_pi());
    let mut rows: Vec<Vec<Complex<T>>> = (0..p)
        .map(|j| {
            let mut row: Vec<Complex<T>> = (0..p).map(|r| moments[j + r]).collect();
            let lower = if j == 0 {
                Complex::new(T::zero(), T::zero())
            } else {
                moments[j - 1] * T::from_usize_lossy(j)
            };
            row.push(-(lower + derivs[j]) / a);
            row
        })
        .collect();
    let solution = solve_complex(&mut rows)?;
    let q0 = solution[0].re;
    q0.is_finite().then_some(q0)
}

/// Gaussian elimination with partial pivoting on an augmented `n x (n+1)`
/// complex system. Returns `None` when a pivot is negligible relative to
/// its column scale.
fn solve_complex<T: Real>(rows: &mut [Vec<Complex<T>>]) -> Option<Vec<Complex<T>>> {
    let n = rows.len();
    for col in 0..n {
        let scale = rows.iter().map(|r| r[col].norm()).fold(T::zero(), T::max);
        let pivot = (col..n).max_by(|&a, &b| rows[a][col].norm().partial_cmp(&rows[b][col].norm()).unwrap_or(std::cmp::Ordering::Equal))?;
        if !(rows[pivot][col].norm() > T::lit(1e-10) * scale) {
            return None;
        }
        rows.swap(col, pivot);
        for r in col + 1..n {
            let f = rows[r][col] / rows[col][col];
            for c in col..=n {
                let v = rows[col][c];
                rows[r][c] = rows[r][c] - f * v;
            }
        }
    }
    let mut x = vec![Complex::new(T::zero(), T::zero()); n];
    for r in (0..n).rev() {
        let mut acc = rows[r][n];
        for c in r + 1..n {
            acc = acc - rows[r][c] * x[c];
        }
        x[r] = acc / rows[r][r];
    }
    Some(x)
}

/// Trapezoidal phase (cycles) of a per-frame IF series, starting at 0.
pub fn integrate_phase<T: Real>(inst_freq: &[T], hop: usize, fs: T) -> Result<Vec<T>> {
    if inst_freq.is_empty() {
        return Err(WarpError::insufficient("empty IF series"));
    }
    if let Some(i) = inst_freq.iter().position(|&f| !(f > T::zero())) {
        return Err(WarpError::invalid(format!(
            "instantaneous frequency must be positive (frame {i} is {})",
            inst_freq[i]
        )));
    }
    let dt = T::from_usize_lossy(hop) / fs;
    let half = T::lit(0.5);
    let mut out = Vec::with_capacity(inst_freq.len());
    let mut acc = T::zero();
    out.push(acc);
    for w in inst_freq.windows(2) {
        acc = acc + half * (w[0] + w[1]) * dt;
        out.push(acc);
    }
    Ok(out)
}

/// Chooses the multiple `l` in `1..=max_mult` of the base ridge frequency with
/// the largest mean STFT magnitude. Candidates leaving the frequency range are
/// skipped.
pub fn select_dominant_harmonic<T: Real>(
    tfr: &TfRepresentation<T>,
    base_freq: &[T],
    max_mult: usize,
) -> Result<usize> {
    if max_mult == 0 {
        return Err(WarpError::invalid("max_mult must be at least 1"));
    }
    if base_freq.len() != tfr.n_frames {
        return Err(WarpError::invalid("base ridge length differs from frame count"));
    }
    let top = tfr.freqs[tfr.n_bins - 1];
    let mut best: Option<(usize, T)> = None;
    for l in 1..=max_mult {
        let lf = T::from_usize_lossy(l);
        if base_freq.iter().any(|&f| !(f * lf <= top) || !(f > T::zero())) {
            continue;
        }
        let mean = base_freq
            .iter()
            .enumerate()
            .map(|(m, &f)| tfr.magnitude(m, tfr.nearest_bin(f * lf)))
            .sum::<T>()
            / T::from_usize_lossy(tfr.n_frames);
        if best.map_or(true, |(_, b)| mean > b) {
            best = Some((l, mean));
        }
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| WarpError::invalid("every candidate harmonic leaves the frequency range"))
}

/// Per-frame estimates for one harmonic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimate<T> {
    pub times: Vec<T>,
    pub ridge_freq: Vec<T>,
    pub inst_freq: Vec<T>,
    pub amplitude: Vec<T>,
    /// Phase of the harmonic in cycles.
    pub phase: Vec<T>,
    pub harmonic_index: usize,
}

impl<T: Real> ComponentEstimate<T> {
    /// Ridge, amplitude, IF and integrated phase in one pass. A non-positive
    /// IF (possible only on pathological input) is reported as an error.
    pub fn from_ridge(
        tfr: &TfRepresentation<T>,
        ridge: &[usize],
        harmonic_index: usize,
        order: IfOrder,
    ) -> Result<Self> {
        let amplitude = estimate_amplitude(tfr, ridge)?;
        let inst_freq = estimate_if_with(tfr, ridge, order)?;
        let phase = integrate_phase(&inst_freq, tfr.hop, tfr.fs)?;
        Ok(ComponentEstimate {
            times: tfr.times.clone(),
            ridge_freq: ridge.iter().map(|&k| tfr.freqs[k]).collect(),
            inst_freq,
            amplitude,
            phase,
            harmonic_index,
        })
    }

    /// Phase of the fundamental implied by this harmonic (cycles).
    pub fn fundamental_phase(&self) -> Vec<T> {
        let l = T::from_usize_lossy(self.harmonic_index);
        self.phase.iter().map(|&p| p / l).collect()
    }
}
