//! Interpolating cubic splines (natural and periodic) in second-derivative form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivative at each knot.
    m: Vec<f64>,
    periodic: bool,
}

fn check_knots(x: &[f64], y: &[f64], min: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} times vs {} values", x.len(), y.len())));
    }
    if x.len() < min {
        return Err(Error::InsufficientData(format!("spline needs at least {min} samples, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("spline samples must be finite".into()));
    }
    if x.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("sample times must be strictly increasing".into()));
    }
    Ok(())
}

impl CubicSpline {
    /// Natural spline (zero second derivative at both ends).
    pub fn natural(x: &[f64], y: &[f64]) -> Result<Self> {
        check_knots(x, y, 3)?;
        let n = x.len();
        let mut m = vec![0.0; n];
        // Thomas algorithm on the interior equations.
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        let mut upper = vec![0.0; k];
        for i in 1..n - 1 {
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            diag[i - 1] = 2.0 * (h0 + h1);
            upper[i - 1] = h1;
            rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        for j in 1..k {
            let lower = x[j + 1] - x[j];
            let f = lower / diag[j - 1];
            diag[j] -= f * upper[j - 1];
            rhs[j] -= f * rhs[j - 1];
        }
        for j in (0..k).rev() {
            let next = if j + 1 < k { m[j + 2] } else { 0.0 };
            m[j + 1] = (rhs[j] - upper[j] * next) / diag[j];
        }
        Ok(CubicSpline {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
            periodic: false,
        })
    }

    /// Periodic spline over `[x0, x0 + period)`; all samples must lie in that
    /// interval. The curve and its first two derivatives wrap continuously.
    pub fn periodic(x: &[f64], y: &[f64], period: f64) -> Result<Self> {
        check_knots(x, y, 3)?;
        let n = x.len();
        if !(period > x[n - 1] - x[0]) {
            return Err(Error::InvalidParameter("period must exceed the sample span".into()));
        }
        let xs: Vec<f64> = x.iter().copied().chain([x[0] + period]).collect();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let yy = |i: usize| y[i % n];
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for i in 0..n {
            let hp = h[(i + n - 1) % n];
            let hn = h[i];
            a[(i, (i + n - 1) % n)] += hp;
            a[(i, i)] += 2.0 * (hp + hn);
            a[(i, (i + 1) % n)] += hn;
            let prev = yy((i + n - 1) % n);
            b[i] = 6.0 * ((yy(i + 1) - yy(i)) / hn - (yy(i) - prev) / hp);
        }
        let sol = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Numerical("periodic spline system is singular".into()))?;
        let mut m: Vec<f64> = sol.iter().copied().collect();
        m.push(m[0]);
        let ys: Vec<f64> = y.iter().copied().chain([y[0]]).collect();
        Ok(CubicSpline {
            x: xs,
            y: ys,
            m,
            periodic: true,
        })
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    /// Domain `[start, end]`; for periodic splines `end - start` is the period.
    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn second_derivatives(&self) -> &[f64] {
        &self.m
    }

    /// Segment index and local offsets for `t` (periodic splines wrap `t`,
    /// natural splines extrapolate the end cubics).
    fn locate(&self, t: f64) -> (usize, f64) {
        let (a, b) = self.domain();
        let t = if self.periodic { a + (t - a).rem_euclid(b - a) } else { t };
        let i = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => i.min(self.x.len() - 2),
            Err(i) => i.clamp(1, self.x.len() - 1) - 1,
        };
        (i, t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let (i, t) = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let (a, b) = ((self.x[i + 1] - t) / h, (t - self.x[i]) / h);
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let (i, t) = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let (a, b) = ((self.x[i + 1] - t) / h, (t - self.x[i]) / h);
        (self.y[i + 1] - self.y[i]) / h - (3.0 * a * a - 1.0) * h * self.m[i] / 6.0
            + (3.0 * b * b - 1.0) * h * self.m[i + 1] / 6.0
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let (i, t) = self.locate(t);
        let h = self.x[i + 1] - self.x[i];
        let (a, b) = ((self.x[i + 1] - t) / h, (t - self.x[i]) / h);
        a * self.m[i] + b * self.m[i + 1]
    }
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

/// Global maximum of `f` on `[a, b]`: dense grid (including `extra` points)
/// followed by golden-section refinement around the best grid point.
pub(crate) fn global_max(f: impl Fn(f64) -> f64, a: f64, b: f64, grid: usize, extra: &[f64]) -> (f64, f64) {
    let step = (b - a) / grid as f64;
    let mut best = (a, f(a));
    for t in (0..=grid).map(|i| a + step * i as f64).chain(extra.iter().copied()) {
        if !(a..=b).contains(&t) {
            continue;
        }
        let v = f(t);
        if v > best.1 {
            best = (t, v);
        }
    }
    let (lo, hi) = ((best.0 - step).max(a), (best.0 + step).min(b));
    let refined = golden_max(&f, lo, hi, 1e-10 * (b - a).max(1.0));
    if refined.1 > best.1 {
        refined
    } else {
        best
    }
}
