//! Interpolants used by warping: a natural cubic spline on a uniform grid for
//! resampling signals, and a Fritsch-Carlson monotone cubic for inverting
//! phase functions.

use crate::error::{Result, WarpError};
use crate::scalar::Real;

/// Natural cubic spline through uniformly spaced samples.
#[derive(Debug, Clone)]
pub struct UniformCubicSpline<T> {
    origin: T,
    step: T,
    values: Vec<T>,
    second: Vec<T>,
}

impl<T: Real> UniformCubicSpline<T> {
    pub fn new(origin: T, step: T, values: &[T]) -> Result<Self> {
        if values.len() < 2 {
            return Err(WarpError::insufficient("spline needs at least two samples"));
        }
        if !(step > T::zero()) {
            return Err(WarpError::invalid("spline step must be positive"));
        }
        let n = values.len();
        let mut second = vec![T::zero(); n];
        if n > 2 {
            // Tridiagonal system [1 4 1] m = 6 * second difference / step^2, m_0 = m_{n-1} = 0.
            let six = T::lit(6.0);
            let four = T::lit(4.0);
            let inner = n - 2;
            let mut diag = vec![four; inner];
            let mut rhs: Vec<T> = (1..n - 1)
                .map(|i| six * (values[i + 1] - values[i] - values[i] + values[i - 1]) / (step * step))
                .collect();
            for i in 1..inner {
                let w = T::one() / diag[i - 1];
                diag[i] = diag[i] - w;
                rhs[i] = rhs[i] - w * rhs[i - 1];
            }
            let mut m = vec![T::zero(); inner];
            m[inner - 1] = rhs[inner - 1] / diag[inner - 1];
            for i in (0..inner - 1).rev() {
                m[i] = (rhs[i] - m[i + 1]) / diag[i];
            }
            second[1..n - 1].copy_from_slice(&m);
        }
        Ok(UniformCubicSpline {
            origin,
            step,
            values: values.to_vec(),
            second,
        })
    }

    pub fn domain(&self) -> (T, T) {
        let last = self.origin + self.step * T::from_usize_lossy(self.values.len() - 1);
        (self.origin, last)
    }

    /// Evaluates the spline; arguments outside the knot span are clamped.
    pub fn eval(&self, x: T) -> T {
        let n = self.values.len();
        let pos = (x - self.origin) / self.step;
        let max_seg = n - 2;
        let seg = if pos <= T::zero() {
            0
        } else {
            pos.floor().to_usize().unwrap_or(max_seg).min(max_seg)
        };
        let u = (pos - T::from_usize_lossy(seg)).max(T::zero()).min(T::one());
        let v = T::one() - u;
        let h2 = self.step * self.step / T::lit(6.0);
        let (y0, y1) = (self.values[seg], self.values[seg + 1]);
        let (m0, m1) = (self.second[seg], self.second[seg + 1]);
        v * y0 + u * y1 + h2 * ((v * v * v - v) * m0 + (u * u * u - u) * m1)
    }
}

/// Shape-preserving monotone cubic Hermite interpolant (Fritsch-Carlson).
#[derive(Debug, Clone)]
pub struct MonotoneCubic<T> {
    xs: Vec<T>,
    ys: Vec<T>,
    slopes: Vec<T>,
}

impl<T: Real> MonotoneCubic<T> {
    /// `xs` must be strictly increasing; `ys` may be any finite data, but
    /// monotone data yields a monotone interpolant.
    pub fn new(xs: &[T], ys: &[T]) -> Result<Self> {
        let n = xs.len();
        if n != ys.len() {
            return Err(WarpError::invalid("abscissa and ordinate lengths differ"));
        }
        if n < 2 {
            return Err(WarpError::insufficient("monotone cubic needs at least two points"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(WarpError::invalid("abscissae must be strictly increasing"));
        }
        let h: Vec<T> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<T> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut m = vec![T::zero(); n];
        if n == 2 {
            m[0] = delta[0];
            m[1] = delta[0];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] <= T::zero() {
                    m[i] = T::zero();
                } else {
                    m[i] = (h[i] * delta[i - 1] + h[i - 1] * delta[i]) / (h[i - 1] + h[i]);
                }
            }
            m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
            let nine = T::lit(9.0);
            for i in 0..n - 1 {
                if delta[i] == T::zero() {
                    m[i] = T::zero();
                    m[i + 1] = T::zero();
                    continue;
                }
                let a = m[i] / delta[i];
                let b = m[i + 1] / delta[i];
                let r = a * a + b * b;
                if r > nine {
                    let tau = T::lit(3.0) / r.sqrt();
                    m[i] = tau * a * delta[i];
                    m[i + 1] = tau * b * delta[i];
                }
            }
        }
        Ok(MonotoneCubic {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes: m,
        })
    }

    pub fn domain(&self) -> (T, T) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    /// Evaluates the interpolant, clamping the argument into the data span.
    pub fn eval(&self, x: T) -> T {
        let n = self.xs.len();
        let x = x.max(self.xs[0]).min(self.xs[n - 1]);
        let seg = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).expect("finite abscissa"))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let h = self.xs[seg + 1] - self.xs[seg];
        let t = (x - self.xs[seg]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        let h00 = two * t3 - three * t2 + T::one();
        let h10 = t3 - two * t2 + t;
        let h01 = three * t2 - two * t3;
        let h11 = t3 - t2;
        h00 * self.ys[seg] + h10 * h * self.slopes[seg] + h01 * self.ys[seg + 1] + h11 * h * self.slopes[seg + 1]
    }
}

/// One-sided three-point end slope with the usual shape-preserving guards.
fn end_slope<T: Real>(h0: T, h1: T, d0: T, d1: T) -> T {
    let d = ((two::<T>() * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        T::zero()
    } else if d0.signum() != d1.signum() && d.magnitude() > T::lit(3.0) * d0.magnitude() {
        T::lit(3.0) * d0
    } else {
        d
    }
}

#[inline]
fn two<T: Real>() -> T {
    T::lit(2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_reproduces_knots_and_lines() {
        let ys: Vec<f64> = (0..20).map(|i| (i as f64 * 0.4).sin()).collect();
        let s = UniformCubicSpline::new(0.0, 0.5, &ys).unwrap();
        for (i, &y) in ys.iter().enumerate() {
            assert!((s.eval(i as f64 * 0.5) - y).abs() < 1e-14);
        }
        let line: Vec<f64> = (0..10).map(|i| 2.0 * i as f64 - 1.0).collect();
        let s = UniformCubicSpline::new(0.0, 1.0, &line).unwrap();
        assert!((s.eval(3.25) - 5.5).abs() < 1e-12);
    }

    #[test]
    fn spline_accuracy_on_smooth_function() {
        let n = 400;
        let h = 1.0 / 100.0;
        let ys: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * i as f64 * h).cos()).collect();
        let s = UniformCubicSpline::new(0.0, h, &ys).unwrap();
        for k in 100..300 {
            let x = k as f64 * h + 0.37 * h;
            let err = (s.eval(x) - (2.0 * std::f64::consts::PI * x).cos()).abs();
            assert!(err < 1e-6, "err {err}");
        }
    }

    #[test]
    fn monotone_cubic_stays_monotone_on_steps() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0.0, 0.0, 0.1, 5.0, 5.0, 5.1];
        let p = MonotoneCubic::new(&xs, &ys).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..=500 {
            let v = p.eval(k as f64 * 0.01);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn monotone_cubic_rejects_unsorted() {
        assert!(MonotoneCubic::new(&[0.0, 0.0, 1.0], &[0.0, 1.0, 2.0]).is_err());
    }
}
