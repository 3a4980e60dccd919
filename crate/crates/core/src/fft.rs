//! Thin helpers over `rustfft` for real-valued convolution and circular
//! cross-correlation.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::scalar::Real;

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Full linear convolution of two real sequences (length `a + b - 1`).
pub fn convolve<T: Real>(a: &[T], b: &[T]) -> Vec<T> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = next_pow2(out_len);
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa = pad(a, n);
    let mut fb = pad(b, n);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = *x * *y;
    }
    inv.process(&mut fa);
    let scale = T::one() / T::from_usize_lossy(n);
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Circular cross-correlation `c[l] = sum_k a[(k + l) mod L] * b[k]`.
pub fn circular_xcorr<T: Real>(planner: &mut FftPlanner<T>, a: &[T], b: &[T]) -> Vec<T> {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut fa = pad(a, n);
    let mut fb = pad(b, n);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x = *x * y.conj();
    }
    inv.process(&mut fa);
    let scale = T::one() / T::from_usize_lossy(n);
    fa.iter().map(|c| c.re * scale).collect()
}

fn pad<T: Real>(x: &[T], n: usize) -> Vec<Complex<T>> {
    let mut v = vec![Complex::new(T::zero(), T::zero()); n];
    for (dst, &src) in v.iter_mut().zip(x) {
        dst.re = src;
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolve_matches_direct() {
        let a = [1.0, 2.0, -1.0, 0.5];
        let b = [0.5, -0.25, 2.0];
        let c = convolve(&a, &b);
        for (k, &ck) in c.iter().enumerate() {
            let direct: f64 = (0..a.len())
                .filter(|&i| k >= i && k - i < b.len())
                .map(|i| a[i] * b[k - i])
                .sum();
            assert!((ck - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn xcorr_matches_direct() {
        let a = [1.0, 3.0, -2.0, 0.5, 4.0];
        let b = [0.2, -1.0, 2.0, 1.5, 0.0];
        let mut planner = FftPlanner::new();
        let c = circular_xcorr(&mut planner, &a, &b);
        for l in 0..5 {
            let direct: f64 = (0..5).map(|k| a[(k + l) % 5] * b[k]).sum();
            assert!((c[l] - direct).abs() < 1e-12);
        }
    }
}
