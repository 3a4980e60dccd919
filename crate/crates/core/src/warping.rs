//! Phase inversion, non-uniform resampling ("warping"), amplitude
//! demodulation, and the iteration controller that repeats
//! estimate → warp → demodulate until the cycle matrix stops simplifying.

use serde::{Deserialize, Serialize};

use crate::cycles::{segment_trimmed, svd_entropy, CycleMatrix};
use crate::error::{Result, WarpError};
use crate::interp::{MonotoneCubic, UniformCubicSpline};
use crate::scalar::Real;
use crate::signal_model::Signal;
use crate::tfa::{self, ComponentEstimate, IfOrder, WindowSpec};

/// Map from a uniform warped-time grid back to the time axis of the signal it
/// was resampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpMap<T> {
    /// Input time of each warped sample.
    pub source_times: Vec<T>,
    /// Warped-time spacing (cycles).
    pub delta_tau: T,
    /// Earlier maps, first iteration first; `source_times` lives on the
    /// output axis of the last of these.
    pub composed: Vec<WarpMap<T>>,
}

impl<T: Real> WarpMap<T> {
    pub fn len(&self) -> usize {
        self.source_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_times.is_empty()
    }

    /// Warped time of the last sample.
    pub fn tau_end(&self) -> T {
        T::from_usize_lossy(self.source_times.len() - 1) * self.delta_tau
    }

    fn interpolant(&self) -> Result<MonotoneCubic<T>> {
        let idx: Vec<T> = (0..self.len()).map(|i| T::from_usize_lossy(i) * self.delta_tau).collect();
        MonotoneCubic::new(&idx, &self.source_times)
    }

    /// Input times for warped times `taus`, by monotone interpolation.
    pub fn eval_many(&self, taus: &[T]) -> Result<Vec<T>> {
        if self.len() < 2 {
            return Err(WarpError::insufficient("warp map has fewer than two samples"));
        }
        let f = self.interpolant()?;
        Ok(taus.iter().map(|&t| f.eval(t)).collect())
    }

    /// Original-signal times for warped times `taus`, through every
    /// composed map.
    pub fn to_original(&self, taus: &[T]) -> Result<Vec<T>> {
        let mut t = self.eval_many(taus)?;
        for m in self.composed.iter().rev() {
            t = m.eval_many(&t)?;
        }
        Ok(t)
    }

    /// Original-signal time of every warped sample.
    pub fn composed_source_times(&self) -> Result<Vec<T>> {
        let mut t = self.source_times.clone();
        for m in self.composed.iter().rev() {
            t = m.eval_many(&t)?;
        }
        Ok(t)
    }

    /// Appends `next` (defined on this map's output axis) to the chain.
    pub fn then(&self, next: WarpMap<T>) -> WarpMap<T> {
        let mut chain = self.composed.clone();
        chain.push(WarpMap {
            source_times: self.source_times.clone(),
            delta_tau: self.delta_tau,
            composed: Vec::new(),
        });
        WarpMap {
            source_times: next.source_times,
            delta_tau: next.delta_tau,
            composed: chain,
        }
    }

    /// Single flat map carrying the composed source times.
    pub fn flatten(&self) -> Result<WarpMap<T>> {
        Ok(WarpMap {
            source_times: self.composed_source_times()?,
            delta_tau: self.delta_tau,
            composed: Vec::new(),
        })
    }
}

/// Signal resampled on a warped (cycle) time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpedSignal<T> {
    /// Samples at warped times `m * delta_tau`; `fs = 1 / delta_tau`.
    pub signal: Signal<T>,
    pub map: WarpMap<T>,
    pub iteration: usize,
}

fn check_phase<T: Real>(phase: &[T], times: &[T]) -> Result<()> {
    if phase.len() != times.len() {
        return Err(WarpError::invalid("phase and time series lengths differ"));
    }
    if phase.len() < 2 {
        return Err(WarpError::insufficient("phase needs at least two samples"));
    }
    if let Some(i) = phase.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(WarpError::invalid(format!("phase is not strictly increasing at index {i}")));
    }
    if let Some(i) = times.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(WarpError::invalid(format!("times are not strictly increasing at index {i}")));
    }
    Ok(())
}

/// Times `t_m` with `phase(t_m) = phase(t_0) + m * delta_tau`, where
/// `delta_tau = (phase(T) - phase(0)) / (n_out - 1)`.
pub fn invert_phase<T: Real>(phase: &[T], times: &[T], n_out: usize) -> Result<WarpMap<T>> {
    check_phase(phase, times)?;
    if n_out < 2 {
        return Err(WarpError::invalid("n_out must be at least 2"));
    }
    let span = phase[phase.len() - 1] - phase[0];
    let step = span / T::from_usize_lossy(n_out - 1);
    let inverse = MonotoneCubic::new(phase, times)?;
    let mut source_times: Vec<T> = (0..n_out)
        .map(|m| inverse.eval(phase[0] + T::from_usize_lossy(m) * step))
        .collect();
    source_times[n_out - 1] = times[times.len() - 1];
    Ok(WarpMap {
        source_times,
        delta_tau: step,
        composed: Vec::new(),
    })
}

/// Like [`invert_phase`] but with a fixed phase step; the grid stops at the
/// last step not beyond the phase range.
pub fn invert_phase_with_step<T: Real>(phase: &[T], times: &[T], step: T) -> Result<WarpMap<T>> {
    check_phase(phase, times)?;
    if !(step > T::zero()) {
        return Err(WarpError::invalid("phase step must be positive"));
    }
    let span = phase[phase.len() - 1] - phase[0];
    let count = (span / step * (T::one() + T::epsilon() * T::lit(16.0)))
        .floor()
        .to_usize()
        .unwrap_or(0)
        + 1;
    if count < 2 {
        return Err(WarpError::insufficient("phase range shorter than one step"));
    }
    let inverse = MonotoneCubic::new(phase, times)?;
    let source_times = (0..count)
        .map(|m| inverse.eval(phase[0] + T::from_usize_lossy(m) * step))
        .collect();
    Ok(WarpMap {
        source_times,
        delta_tau: step,
        composed: Vec::new(),
    })
}

/// `warped[m] = x(t_m)` by natural cubic spline interpolation of `x`.
pub fn warp<T: Real>(signal: &Signal<T>, map: &WarpMap<T>, iteration: usize) -> Result<WarpedSignal<T>> {
    if map.len() < 2 {
        return Err(WarpError::insufficient("warp map has fewer than two samples"));
    }
    let spline = UniformCubicSpline::new(signal.t0(), T::one() / signal.fs(), signal.samples())?;
    let (lo, hi) = spline.domain();
    let tol = (hi - lo) * T::lit(1e-9);
    if let Some(i) = map.source_times.iter().position(|&t| t < lo - tol || t > hi + tol) {
        return Err(WarpError::invalid(format!(
            "warp target {} (sample {i}) lies outside the signal span [{lo}, {hi}]",
            map.source_times[i]
        )));
    }
    let samples = map.source_times.iter().map(|&t| spline.eval(t)).collect();
    Ok(WarpedSignal {
        signal: Signal::new(samples, T::one() / map.delta_tau, T::zero())?,
        map: map.clone(),
        iteration: iteration.max(1),
    })
}

/// Type-7 (linear) sample quantile.
pub(crate) fn quantile<T: Real>(values: &[T], q: T) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q * T::from_usize_lossy(v.len() - 1);
    let lo = pos.floor().to_usize().unwrap_or(0).min(v.len() - 1);
    let hi = (lo + 1).min(v.len() - 1);
    let frac = pos - T::from_usize_lossy(lo);
    v[lo] + (v[hi] - v[lo]) * frac
}

/// `out[n] = x[n] / max(amplitude[n], floor)` with `floor` the
/// `floor_quantile` quantile of the amplitude.
pub fn demodulate<T: Real>(signal: &Signal<T>, amplitude: &[T], floor_quantile: T) -> Result<Signal<T>> {
    if amplitude.len() != signal.len() {
        return Err(WarpError::invalid(format!(
            "amplitude has {} samples, signal has {}",
            amplitude.len(),
            signal.len()
        )));
    }
    if !(floor_quantile > T::zero() && floor_quantile < T::lit(0.5)) {
        return Err(WarpError::invalid("floor quantile must lie in (0, 0.5)"));
    }
    let peak = amplitude.iter().fold(T::zero(), |m, v| m.max(v.magnitude()));
    if !(peak > T::zero()) {
        return Err(WarpError::invalid("amplitude is identically zero"));
    }
    let floor = quantile(amplitude, floor_quantile).max(peak * T::epsilon());
    let samples = signal
        .samples()
        .iter()
        .zip(amplitude)
        .map(|(&x, &a)| x / a.max(floor))
        .collect();
    signal.with_samples(samples)
}

/// How the harmonic used for warping is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum HarmonicChoice {
    /// Strongest multiple of the fundamental ridge up to `max_mult`.
    Auto(usize),
    Fixed(usize),
}

/// Parameters of the iterative warping loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpConfig<T> {
    /// Expected fundamental frequency of the input (Hz); estimated from the
    /// averaged spectrum when absent.
    pub fundamental_hint: Option<T>,
    /// Window effective bandwidth as a fraction of the fundamental.
    pub bandwidth_ratio: T,
    /// First-iteration window override (input samples).
    pub window: Option<WindowSpec<T>>,
    /// First-iteration hop override (input samples).
    pub hop: Option<usize>,
    /// First-iteration FFT size override.
    pub n_fft: Option<usize>,
    /// STFT frames per expected cycle when the hop is derived.
    pub frames_per_cycle: usize,
    pub harmonic: HarmonicChoice,
    /// Multiplier on the default ridge penalty.
    pub ridge_penalty_scale: T,
    /// Reassignment operator for the instantaneous frequency.
    #[serde(default)]
    pub if_order: IfOrder,
    pub max_iterations: usize,
    /// Iterations always performed before the stopping rule is consulted.
    pub min_iterations: usize,
    /// Relative SVD-entropy decrease below which iteration stops.
    pub entropy_tolerance: T,
    /// Samples per warped cycle (`L`).
    pub samples_per_cycle: usize,
    pub demod_floor_quantile: T,
    /// Whole cycles dropped at each end of the cycle matrix; `None` drops
    /// the cycles within two window standard deviations of either end.
    pub edge_cycles: Option<usize>,
}

impl<T: Real> Default for WarpConfig<T> {
    fn default() -> Self {
        WarpConfig {
            fundamental_hint: None,
            bandwidth_ratio: T::lit(0.4),
            window: None,
            hop: None,
            n_fft: None,
            frames_per_cycle: 8,
            harmonic: HarmonicChoice::Auto(3),
            ridge_penalty_scale: T::one(),
            if_order: IfOrder::default(),
            max_iterations: 10,
            min_iterations: 1,
            entropy_tolerance: T::lit(0.01),
            samples_per_cycle: 200,
            demod_floor_quantile: T::lit(0.05),
            edge_cycles: None,
        }
    }
}

impl<T: Real> WarpConfig<T> {
    /// Edge cycles to drop from a warped signal of `n_samples` samples. The
    /// automatic choice shrinks so that at least two cycles remain.
    pub fn edge_cycles_for(&self, n_samples: usize) -> usize {
        match self.edge_cycles {
            Some(e) => e,
            None => {
                let spread = T::lit(tfa::gaussian_bandwidth_ratio()) / (T::two_pi() * self.bandwidth_ratio);
                let auto = (T::lit(2.0) * spread).ceil().to_usize().unwrap_or(0);
                let total = n_samples / self.samples_per_cycle;
                auto.min(total.saturating_sub(2) / 2)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_ratio > T::zero() && self.bandwidth_ratio < T::one()) {
            return Err(WarpError::invalid("bandwidth ratio must lie in (0, 1)"));
        }
        if self.max_iterations == 0 || self.min_iterations > self.max_iterations {
            return Err(WarpError::invalid("need 1 <= min_iterations <= max_iterations"));
        }
        if self.samples_per_cycle < 8 {
            return Err(WarpError::invalid("samples per cycle must be at least 8"));
        }
        if self.frames_per_cycle == 0 {
            return Err(WarpError::invalid("frames per cycle must be positive"));
        }
        if !(self.entropy_tolerance >= T::zero()) {
            return Err(WarpError::invalid("entropy tolerance must be non-negative"));
        }
        match self.harmonic {
            HarmonicChoice::Auto(0) | HarmonicChoice::Fixed(0) => {
                return Err(WarpError::invalid("harmonic index must be at least 1"))
            }
            _ => {}
        }
        if let Some(w) = &self.window {
            w.validate()?;
        }
        Ok(())
    }
}

/// Everything produced by one warping iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord<T> {
    pub warped: WarpedSignal<T>,
    /// Harmonic estimate on the iteration's input axis.
    pub component: ComponentEstimate<T>,
    pub cycles: CycleMatrix<T>,
    pub entropy: T,
    /// Fundamental frequency assumed for this iteration's input.
    pub fundamental: T,
}

/// Result of [`iterate_warp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpOutcome<T> {
    /// Every iteration performed, in order.
    pub records: Vec<IterationRecord<T>>,
    pub entropy_trace: Vec<T>,
    /// Number of iterations whose result is kept; the record at
    /// `used_iterations - 1` is the final one.
    pub used_iterations: usize,
}

impl<T: Real> WarpOutcome<T> {
    pub fn final_record(&self) -> &IterationRecord<T> {
        &self.records[self.used_iterations - 1]
    }
}

/// Peak of the frame-averaged power spectrum, lowered to a strong
/// sub-multiple when one exists (so a dominant harmonic does not masquerade
/// as the fundamental).
pub fn estimate_fundamental<T: Real>(signal: &Signal<T>) -> Result<T> {
    let fs = signal.fs();
    let n = signal.len();
    let duration = T::from_usize_lossy(n) / fs;
    // Aim for ~8 frames over the record.
    let length = ((n / 4) | 1).max(3);
    let window = WindowSpec::gaussian(length, T::from_usize_lossy(length) / T::lit(6.0))?;
    let tfr = tfa::stft(signal, &window, (n / 8).max(1), tfa::default_n_fft(length))?;
    let mut power = vec![T::zero(); tfr.n_bins];
    for m in 0..tfr.n_frames {
        for (k, p) in power.iter_mut().enumerate() {
            let v = tfr.magnitude(m, k);
            *p = *p + v * v;
        }
    }
    // Ignore bins below two cycles per record.
    let min_f = T::lit(2.0) / duration;
    let valid: Vec<usize> = (0..tfr.n_bins).filter(|&k| tfr.freqs[k] >= min_f).collect();
    let peak = valid
        .iter()
        .copied()
        .max_by(|&a, &b| power[a].partial_cmp(&power[b]).expect("finite power"))
        .ok_or_else(|| WarpError::insufficient("signal too short to estimate a fundamental"))?;
    if !(power[peak] > T::zero()) {
        return Err(WarpError::insufficient("signal has no oscillatory content"));
    }
    let f_peak = tfr.freqs[peak];
    for div in (2..=4).rev() {
        let f = f_peak / T::from_usize_lossy(div);
        if f < min_f {
            continue;
        }
        let k = tfr.nearest_bin(f);
        let lo = k.saturating_sub(2);
        let hi = (k + 2).min(tfr.n_bins - 1);
        let local = (lo..=hi).map(|j| power[j]).fold(T::zero(), T::max);
        if local > T::lit(0.1) * power[peak] {
            let arg = (lo..=hi)
                .max_by(|&a, &b| power[a].partial_cmp(&power[b]).expect("finite power"))
                .unwrap_or(k);
            return Ok(tfr.freqs[arg]);
        }
    }
    Ok(f_peak)
}

/// STFT parameters for a signal whose fundamental is near `f0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSetup<T> {
    pub window: WindowSpec<T>,
    pub hop: usize,
    pub n_fft: usize,
}

/// Window, hop and FFT size used by [`estimate_component`]. The overrides in
/// `config` apply only when `first` is set.
pub fn frame_setup<T: Real>(
    fs: T,
    f0: T,
    config: &WarpConfig<T>,
    first: bool,
) -> Result<FrameSetup<T>> {
    let window = match (&config.window, first) {
        (Some(w), true) => *w,
        _ => WindowSpec::for_bandwidth(fs, config.bandwidth_ratio * f0)?,
    };
    let hop = match (config.hop, first) {
        (Some(h), true) => h,
        _ => (fs / (f0 * T::from_usize_lossy(config.frames_per_cycle)))
            .round()
            .to_usize()
            .unwrap_or(1)
            .max(1),
    };
    let n_fft = match (config.n_fft, first) {
        (Some(n), true) => n,
        _ => tfa::default_n_fft(window.length),
    };
    Ok(FrameSetup { window, hop, n_fft })
}

/// Estimates the chosen harmonic of `signal`, whose fundamental is near `f0`.
pub fn estimate_component<T: Real>(
    signal: &Signal<T>,
    f0: T,
    config: &WarpConfig<T>,
    first: bool,
) -> Result<ComponentEstimate<T>> {
    let setup = frame_setup(signal.fs(), f0, config, first)?;
    let tfr = tfa::stft(signal, &setup.window, setup.hop, setup.n_fft)?;
    let penalty = tfa::default_ridge_penalty(&tfr) * config.ridge_penalty_scale;
    let half = T::lit(0.5) * f0;
    let base = tfa::extract_ridge(&tfr, (f0 - half, f0 + half), penalty)?;
    let harmonic = match config.harmonic {
        HarmonicChoice::Fixed(l) => l,
        HarmonicChoice::Auto(max_mult) => {
            let base_if = tfa::estimate_if(&tfr, &base)?;
            tfa::select_dominant_harmonic(&tfr, &base_if, max_mult)?
        }
    };
    let ridge = if harmonic == 1 {
        base
    } else {
        let centre = T::from_usize_lossy(harmonic) * f0;
        tfa::extract_ridge(&tfr, (centre - half, centre + half), penalty)?
    };
    ComponentEstimate::from_ridge(&tfr, &ridge, harmonic, config.if_order)
}

/// One warp-and-demodulate step of `signal` driven by `component`.
pub fn warp_step<T: Real>(
    signal: &Signal<T>,
    component: &ComponentEstimate<T>,
    config: &WarpConfig<T>,
    iteration: usize,
) -> Result<WarpedSignal<T>> {
    let step = T::one() / T::from_usize_lossy(config.samples_per_cycle);
    let map = invert_phase_with_step(&component.fundamental_phase(), &component.times, step)?;
    let warped = warp(signal, &map, iteration)?;
    let amp_curve = MonotoneCubic::new(&component.times, &component.amplitude)?;
    let amplitude: Vec<T> = map.source_times.iter().map(|&t| amp_curve.eval(t)).collect();
    let demod = demodulate(&warped.signal, &amplitude, config.demod_floor_quantile)?;
    Ok(WarpedSignal {
        signal: demod,
        map,
        iteration,
    })
}

/// Iterative warping and demodulation. Each pass estimates the dominant
/// harmonic of the current signal, warps by its inverse phase, demodulates by
/// its amplitude, segments into unit cycles and records the SVD entropy.
/// Iteration stops once the relative entropy decrease falls below
/// `entropy_tolerance` (after `min_iterations`) or at `max_iterations`; when a
/// pass fails to improve, the previous pass is kept as the result.
pub fn iterate_warp<T: Real>(signal: &Signal<T>, config: &WarpConfig<T>) -> Result<WarpOutcome<T>> {
    config.validate()?;
    let f0_input = match config.fundamental_hint {
        Some(f) if f > T::zero() => f,
        Some(_) => return Err(WarpError::invalid("fundamental hint must be positive")),
        None => estimate_fundamental(signal)?,
    };
    let mut records: Vec<IterationRecord<T>> = Vec::new();
    let mut trace = Vec::new();
    let mut used = 0;
    let mut current = signal.clone();
    let mut chain: Option<WarpMap<T>> = None;
    for it in 1..=config.max_iterations {
        let f0 = if it == 1 { f0_input } else { T::one() };
        let component = estimate_component(&current, f0, config, it == 1)?;
        let mut warped = warp_step(&current, &component, config, it)?;
        if let Some(prev) = &chain {
            warped.map = prev.then(warped.map);
        }
        let edge = config.edge_cycles_for(warped.signal.len());
        let cycles = segment_trimmed(&warped, config.samples_per_cycle, edge)?;
        let entropy = svd_entropy(&cycles.rows)?;
        trace.push(entropy);
        let improved = match records.last() {
            None => true,
            Some(prev) => prev.entropy - entropy > config.entropy_tolerance * prev.entropy,
        };
        current = warped.signal.clone();
        chain = Some(warped.map.clone());
        records.push(IterationRecord {
            warped,
            component,
            cycles,
            entropy,
            fundamental: f0,
        });
        if it <= config.min_iterations {
            used = it;
            continue;
        }
        if improved {
            used = it;
        } else {
            break;
        }
    }
    Ok(WarpOutcome {
        records,
        entropy_trace: trace,
        used_iterations: used,
    })
}

/// Resamples a warped signal with warped time stretched by `factor`, so a
/// period of `factor` becomes one unit.
pub fn rescale_warped<T: Real>(warped: &WarpedSignal<T>, factor: T, samples_per_cycle: usize) -> Result<WarpedSignal<T>> {
    if !(factor > T::zero()) {
        return Err(WarpError::invalid("rescaling factor must be positive"));
    }
    let l = T::from_usize_lossy(samples_per_cycle);
    let end = warped.map.tau_end();
    let count = (end / factor * l).floor().to_usize().unwrap_or(0) + 1;
    if count < 2 {
        return Err(WarpError::insufficient("rescaled signal is empty"));
    }
    let taus: Vec<T> = (0..count).map(|j| factor * T::from_usize_lossy(j) / l).collect();
    let spline = UniformCubicSpline::new(T::zero(), warped.map.delta_tau, warped.signal.samples())?;
    let samples = taus.iter().map(|&t| spline.eval(t)).collect();
    let local = warped.map.eval_many(&taus)?;
    let map = WarpMap {
        source_times: local,
        delta_tau: T::one() / l,
        composed: warped.map.composed.clone(),
    };
    Ok(WarpedSignal {
        signal: Signal::new(samples, l, T::zero())?,
        map,
        iteration: warped.iteration,
    })
}

/// Result of a period-correction search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRefinement<T> {
    pub factor: T,
    pub candidates: Vec<T>,
    pub entropies: Vec<T>,
}

/// Grid search over `factor_range` for the warped-time rescaling whose cycle
/// matrix has minimal SVD entropy. Ties go to the candidate nearest the
/// range midpoint.
pub fn refine_period<T: Real>(
    warped: &WarpedSignal<T>,
    factor_range: (T, T),
    n_grid: usize,
    samples_per_cycle: usize,
) -> Result<(PeriodRefinement<T>, WarpedSignal<T>)> {
    let (lo, hi) = factor_range;
    if !(lo > T::zero()) || !(hi > lo) {
        return Err(WarpError::invalid("factor range must be positive and non-degenerate"));
    }
    if n_grid < 3 {
        return Err(WarpError::invalid("period grid needs at least 3 points"));
    }
    let step = (hi - lo) / T::from_usize_lossy(n_grid - 1);
    let candidates: Vec<T> = (0..n_grid).map(|i| lo + step * T::from_usize_lossy(i)).collect();
    let mut entropies = Vec::with_capacity(n_grid);
    for &c in &candidates {
        let r = rescale_warped(warped, c, samples_per_cycle)?;
        let m = segment_trimmed(&r, samples_per_cycle, 0)?;
        entropies.push(svd_entropy(&m.rows)?);
    }
    let min = entropies.iter().copied().fold(T::infinity(), T::min);
    let tol = min.magnitude() * T::lit(1e-12);
    let mid = (lo + hi) / T::lit(2.0);
    let best = (0..n_grid)
        .filter(|&i| entropies[i] - min <= tol)
        .min_by(|&a, &b| {
            (candidates[a] - mid)
                .magnitude()
                .partial_cmp(&(candidates[b] - mid).magnitude())
                .expect("finite candidates")
        })
        .expect("non-empty grid");
    let factor = candidates[best];
    let rescaled = rescale_warped(warped, factor, samples_per_cycle)?;
    Ok((
        PeriodRefinement {
            factor,
            candidates,
            entropies,
        },
        rescaled,
    ))
}
