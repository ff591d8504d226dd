//! Clamped uniform cubic B-spline curves and their penalized least-squares fit.

use nalgebra::{DMatrix, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineCurve {
    pub control_points: Vec<Point3<f64>>,
    /// Clamped knot vector on [0, 1], length `control_points.len() + 4`.
    pub knots: Vec<f64>,
}

/// Clamped uniform knots for `m` control points.
pub fn clamped_uniform_knots(m: usize) -> Vec<f64> {
    let spans = m - DEGREE;
    let mut k = vec![0.0; DEGREE + 1];
    k.extend((1..spans).map(|i| i as f64 / spans as f64));
    k.extend(std::iter::repeat_n(1.0, DEGREE + 1));
    k
}

/// Knot span index `i` with `knots[i] <= u < knots[i + 1]` (last span at u = 1).
fn find_span(knots: &[f64], m: usize, u: f64) -> usize {
    if u >= knots[m] {
        return m - 1;
    }
    if u <= knots[DEGREE] {
        return DEGREE;
    }
    knots.partition_point(|&k| k <= u) - 1
}

/// Nonzero basis values and first/second derivatives at `u`:
/// returns the span and `ders[d][j]` for basis `span - 3 + j`.
fn basis_ders(knots: &[f64], m: usize, u: f64) -> (usize, [[f64; 4]; 3]) {
    let span = find_span(knots, m, u);
    let p = DEGREE;
    // The NURBS Book, algorithm A2.3.
    let mut ndu = [[0.0f64; 4]; 4];
    let mut left = [0.0; 4];
    let mut right = [0.0; 4];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = [[0.0; 4]; 3];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        let mut a = [[0.0f64; 4]; 2];
        a[0][0] = 1.0;
        for k in 1..=2usize {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut fac = p as f64;
    for row in ders.iter_mut().skip(1) {
        for v in row.iter_mut() {
            *v *= fac;
        }
        fac *= (p - 1) as f64;
    }
    (span, ders)
}

impl BSplineCurve {
    pub fn new(control_points: Vec<Point3<f64>>) -> Result<Self> {
        if control_points.len() < DEGREE + 1 {
            return Err(Error::InsufficientData(format!(
                "cubic B-spline needs >= 4 control points, got {}",
                control_points.len()
            )));
        }
        let knots = clamped_uniform_knots(control_points.len());
        Ok(BSplineCurve { control_points, knots })
    }

    fn ders(&self, u: f64) -> [Vector3<f64>; 3] {
        let m = self.control_points.len();
        let (span, d) = basis_ders(&self.knots, m, u.clamp(0.0, 1.0));
        let mut out = [Vector3::zeros(); 3];
        for (k, o) in out.iter_mut().enumerate() {
            for j in 0..=DEGREE {
                *o += self.control_points[span - DEGREE + j].coords * d[k][j];
            }
        }
        out
    }

    pub fn eval(&self, u: f64) -> Point3<f64> {
        Point3::from(self.ders(u)[0])
    }

    pub fn derivative(&self, u: f64) -> Vector3<f64> {
        self.ders(u)[1]
    }

    pub fn second_derivative(&self, u: f64) -> Vector3<f64> {
        self.ders(u)[2]
    }

    /// Curvature `|C' x C''| / |C'|^3`.
    pub fn curvature(&self, u: f64) -> f64 {
        let [_, d1, d2] = self.ders(u);
        let n = d1.norm();
        if n == 0.0 {
            0.0
        } else {
            d1.cross(&d2).norm() / (n * n * n)
        }
    }

    /// `n` points at evenly spaced parameters.
    pub fn sample(&self, n: usize) -> Vec<Point3<f64>> {
        let n = n.max(2);
        (0..n).map(|i| self.eval(i as f64 / (n - 1) as f64)).collect()
    }

    pub fn length(&self) -> f64 {
        crate::metrics::polyline_length(&self.sample(64 * self.control_points.len()))
    }
}

pub fn point_polyline_distance(x: &Point3<f64>, poly: &[Point3<f64>]) -> f64 {
    if poly.len() == 1 {
        return (x - poly[0]).norm();
    }
    poly.windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            let l2 = d.norm_squared();
            let t = if l2 > 0.0 { ((x - w[0]).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
            (x - (w[0] + d * t)).norm()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Normalized cumulative chord-length parameters in [0, 1].
pub fn chord_parameters(points: &[Point3<f64>]) -> Vec<f64> {
    let mut u = vec![0.0; points.len()];
    for i in 1..points.len() {
        u[i] = u[i - 1] + (points[i] - points[i - 1]).norm();
    }
    let total = *u.last().unwrap();
    if total > 0.0 {
        u.iter_mut().for_each(|v| *v /= total);
    }
    u
}

/// Least-squares cubic B-spline with `m` control points through `points` at
/// parameters `params`, plus the penalty `smooth * n * sum |P[i-1] - 2 P[i] + P[i+1]|^2`
/// on the control points.
pub fn fit_bspline(points: &[Point3<f64>], params: &[f64], m: usize, smooth: f64) -> Result<BSplineCurve> {
    if m < DEGREE + 1 {
        return Err(Error::InvalidParameter("need at least 4 control points".into()));
    }
    if points.len() != params.len() || points.len() < 2 {
        return Err(Error::InsufficientData("fit needs >= 2 parameterized points".into()));
    }
    let knots = clamped_uniform_knots(m);
    let mut a = DMatrix::<f64>::zeros(m, m);
    let mut b = DMatrix::<f64>::zeros(m, 3);
    for (x, &u) in points.iter().zip(params) {
        let (span, d) = basis_ders(&knots, m, u);
        for j in 0..=DEGREE {
            let r = span - DEGREE + j;
            for k in 0..=DEGREE {
                a[(r, span - DEGREE + k)] += d[0][j] * d[0][k];
            }
            for c in 0..3 {
                b[(r, c)] += d[0][j] * x[c];
            }
        }
    }
    if smooth > 0.0 {
        let w = smooth * points.len() as f64;
        for i in 1..m - 1 {
            let idx = [i - 1, i, i + 1];
            let c = [1.0, -2.0, 1.0];
            for j in 0..3 {
                for k in 0..3 {
                    a[(idx[j], idx[k])] += w * c[j] * c[k];
                }
            }
        }
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("B-spline normal equations are singular; too few points per span".into()))?;
    let x = chol.solve(&b);
    let ctrl = (0..m).map(|i| Point3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)])).collect();
    Ok(BSplineCurve { control_points: ctrl, knots })
}
