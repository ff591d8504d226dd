//! Correspondence search between two centerlines: epipolar candidates, a
//! grayscale + structure similarity, and order-preserving dynamic programming.

use nalgebra::{Matrix3, Point2, Vector2};
use serde::{Deserialize, Serialize};

use super::camera::{epipolar_line, fundamental_matrix, CameraModel};
use super::centerline::{Centerline2D, CurvePoint};
use crate::error::{Error, Result};
use crate::image::Image2D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    /// Weight of NCC against structural similarity.
    pub alpha: f64,
    /// Weight of the disparity-continuity term.
    pub lambda: f64,
    pub band_px: f64,
    /// Odd NCC window side in pixels.
    pub ncc_window: usize,
    /// Curvature scale of the structural term, 1/px.
    pub kappa0: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            alpha: 0.5,
            lambda: 1.0,
            band_px: 2.0,
            ncc_window: 11,
            kappa0: 0.05,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter(format!("alpha must be in [0,1], got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.band_px > 0.0 && self.kappa0 > 0.0) {
            return Err(Error::InvalidParameter("lambda >= 0 and band, kappa0 > 0 required".into()));
        }
        if self.ncc_window.is_multiple_of(2) || self.ncc_window < 3 {
            return Err(Error::InvalidParameter("NCC window must be odd and >= 3".into()));
        }
        Ok(())
    }
}

/// Square patch of bilinear samples centered on a continuous pixel position.
pub fn sample_patch(img: &Image2D, center: &Point2<f64>, side: usize) -> Vec<f64> {
    let r = (side / 2) as f64;
    let mut out = Vec::with_capacity(side * side);
    for j in 0..side {
        for i in 0..side {
            let (x, y) = (center.x - 0.5 + i as f64 - r, center.y - 0.5 + j as f64 - r);
            out.push(img.sample_bilinear(x, y));
        }
    }
    out
}

/// Normalized cross-correlation of equal-size patches.
pub fn ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!("patches of {} and {} samples", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if saa <= 1e-24 * scale * scale * n || sbb <= 1e-24 * scale * scale * n {
        return Err(Error::Undefined("NCC of a constant patch".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// `|cos(angle between tangents)| * exp(-|kappa1 - kappa2| / kappa0)`.
///
/// Tangent sign is arbitrary across views, hence the absolute cosine.
pub fn structural_similarity(a: &CurvePoint, b: &CurvePoint, kappa0: f64) -> f64 {
    a.tangent.dot(&b.tangent).abs().min(1.0) * (-(a.curvature - b.curvature).abs() / kappa0).exp()
}

/// `alpha * NCC + (1 - alpha) * S_struct`; a constant patch falls back to
/// `S_struct` alone.
pub fn match_cost(patch1: &[f64], patch2: &[f64], s_struct: f64, alpha: f64) -> Result<f64> {
    match ncc(patch1, patch2) {
        Ok(v) => Ok(alpha * v + (1.0 - alpha) * s_struct),
        Err(Error::Undefined(_)) => Ok(s_struct),
        Err(e) => Err(e),
    }
}

/// A correspondence between key point `i1` of the first curve and a
/// position on the second curve's dense polyline (between `j2` and `j2 + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub i1: usize,
    pub j2: usize,
    /// Undistorted pixel positions.
    pub p1: Point2<f64>,
    pub p2: Point2<f64>,
    /// Arc length of `p2` along the second curve.
    pub arc2: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub matches: Vec<Match>,
    /// When set, `j2` and `arc2` refer to the reversed second curve.
    pub c2_reversed: bool,
    pub energy: f64,
    /// Fraction of key points with no candidate inside the band.
    pub unmatched_fraction: f64,
}

/// Skipped key points, then energy; compared lexicographically.
type Score = (usize, f64);

fn better(a: Score, b: Score) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub j: usize,
    pub pos: Point2<f64>,
    pub raw: Point2<f64>,
    pub arc: f64,
}

/// Positions on a dense polyline where the epipolar line `l` crosses it,
/// plus near-misses (local minima of distance inside the band).
pub(crate) fn epipolar_candidates(l: &nalgebra::Vector3<f64>, dense: &[CurvePoint], undist: &[Point2<f64>], band: f64) -> Vec<Candidate> {
    let d: Vec<f64> = undist.iter().map(|q| l.x * q.x + l.y * q.y + l.z).collect();
    let mut out = Vec::new();
    if d.len() == 1 {
        if d[0].abs() <= band {
            out.push(Candidate {
                j: 0,
                pos: undist[0],
                raw: dense[0].pos,
                arc: 0.0,
            });
        }
        return out;
    }
    let mut crossed = vec![false; d.len()];
    for k in 0..d.len() - 1 {
        let (a, b) = (d[k], d[k + 1]);
        if (a <= 0.0 && b > 0.0) || (a >= 0.0 && b < 0.0) || (a == 0.0 && b == 0.0) {
            let t = if a == b { 0.0 } else { a / (a - b) };
            crossed[k] = true;
            crossed[k + 1] = true;
            out.push(Candidate {
                j: k,
                pos: undist[k] + (undist[k + 1] - undist[k]) * t,
                raw: dense[k].pos + (dense[k + 1].pos - dense[k].pos) * t,
                arc: dense[k].arc + (dense[k + 1].arc - dense[k].arc) * t,
            });
        }
    }
    for k in 0..d.len() {
        let local_min = (k == 0 || d[k].abs() <= d[k - 1].abs()) && (k + 1 == d.len() || d[k].abs() <= d[k + 1].abs());
        let near_crossing = crossed[k] || (k > 0 && crossed[k - 1]) || (k + 1 < d.len() && crossed[k + 1]);
        if local_min && !near_crossing && d[k].abs() <= band {
            out.push(Candidate {
                j: k.min(d.len() - 2),
                pos: undist[k],
                raw: dense[k].pos,
                arc: dense[k].arc,
            });
        }
    }
    out.sort_by(|a, b| a.arc.total_cmp(&b.arc));
    out
}

/// Images used for the grayscale term (already polarity-corrected).
pub type ImagePair<'a> = (&'a Image2D, &'a Image2D);

fn similarity(
    images: Option<ImagePair<'_>>,
    a: &CurvePoint,
    b_raw: &Point2<f64>,
    b: &CurvePoint,
    p: &MatchParams,
) -> Result<f64> {
    let s = structural_similarity(a, b, p.kappa0);
    match images {
        Some((i1, i2)) => {
            let pa = sample_patch(i1, &a.pos, p.ncc_window);
            let pb = sample_patch(i2, b_raw, p.ncc_window);
            match_cost(&pa, &pb, s, p.alpha)
        }
        None => Ok(s),
    }
}

fn run_dp(
    c1: &Centerline2D,
    c2: &Centerline2D,
    f: &Matrix3<f64>,
    cams: (&CameraModel, &CameraModel),
    images: Option<ImagePair<'_>>,
    p: &MatchParams,
) -> Result<(Vec<Match>, Score, f64)> {
    let undist2: Vec<Point2<f64>> = c2.dense.iter().map(|c| cams.1.undistort(&c.pos)).collect();
    let n = c1.points.len();
    let mut cands: Vec<Vec<(Candidate, Point2<f64>, f64)>> = Vec::with_capacity(n);
    for kp in &c1.points {
        let u1 = cams.0.undistort(&kp.pos);
        let l = epipolar_line(f, &u1);
        let mut row = Vec::new();
        for c in epipolar_candidates(&l, &c2.dense, &undist2, p.band_px) {
            let sim = similarity(images, kp, &c.raw, &c2.dense[c.j], p)?;
            row.push((c, u1, sim));
        }
        cands.push(row);
    }
    let missing = cands.iter().filter(|r| r.is_empty()).count();
    let unmatched = missing as f64 / n as f64;
    if unmatched > 0.5 {
        return Err(Error::MatchingFailure(format!(
            "{missing} of {n} key points have no epipolar candidate within {} px",
            p.band_px
        )));
    }
    // Chains are ranked by the number of key points they skip (points that
    // have candidates but are left out to keep the order), then by energy.
    // best[i][c] is the best chain ending at candidate c of point i.
    let mut with_cands = vec![0usize; n + 1];
    for i in 0..n {
        with_cands[i + 1] = with_cands[i] + usize::from(!cands[i].is_empty());
    }
    let skipped = |from: usize, to: usize| with_cands[to] - with_cands[from];
    let mut best: Vec<Vec<Score>> = cands.iter().map(|r| vec![(usize::MAX, f64::INFINITY); r.len()]).collect();
    let mut back: Vec<Vec<Option<(usize, usize)>>> = cands.iter().map(|r| vec![None; r.len()]).collect();
    for i in 0..n {
        for c in 0..cands[i].len() {
            let (cand, u1, sim) = &cands[i][c];
            let unary = 1.0 - sim;
            let mut e: Score = (skipped(0, i), unary);
            let mut from = None;
            let disp = cand.pos - u1;
            for (pi, prow) in cands.iter().enumerate().take(i) {
                for (pc, (pcand, pu1, _)) in prow.iter().enumerate() {
                    if pcand.arc > cand.arc {
                        continue;
                    }
                    let dd: Vector2<f64> = disp - (pcand.pos - pu1);
                    let prev = best[pi][pc];
                    let v = (prev.0 + skipped(pi + 1, i), prev.1 + unary + p.lambda * dd.norm_squared());
                    if better(v, e) {
                        e = v;
                        from = Some((pi, pc));
                    }
                }
            }
            best[i][c] = e;
            back[i][c] = from;
        }
    }
    let mut end: Option<(usize, usize, Score)> = None;
    for i in 0..n {
        for c in 0..cands[i].len() {
            let s = (best[i][c].0 + skipped(i + 1, n), best[i][c].1);
            if end.is_none_or(|(_, _, be)| better(s, be)) {
                end = Some((i, c, s));
            }
        }
    }
    let Some((mut i, mut c, score)) = end else {
        return Err(Error::MatchingFailure("no epipolar candidates at all".into()));
    };
    let mut chain = Vec::new();
    loop {
        let (cand, u1, sim) = &cands[i][c];
        chain.push(Match {
            i1: i,
            j2: cand.j,
            p1: *u1,
            p2: cand.pos,
            arc2: cand.arc,
            similarity: *sim,
        });
        match back[i][c] {
            Some((pi, pc)) => (i, c) = (pi, pc),
            None => break,
        }
    }
    chain.reverse();
    Ok((chain, score, unmatched))
}

/// Order-preserving correspondence of `c1` key points onto `c2`, minimizing
/// `sum(1 - C) + lambda * sum |disparity_k - disparity_{k-1}|^2` over both
/// traversal directions of `c2`.
pub fn match_curves_dp(
    c1: &Centerline2D,
    c2: &Centerline2D,
    cam1: &CameraModel,
    cam2: &CameraModel,
    images: Option<ImagePair<'_>>,
    p: &MatchParams,
) -> Result<MatchResult> {
    p.validate()?;
    if c1.points.is_empty() || c2.dense.is_empty() {
        return Err(Error::InsufficientData("both centerlines need points".into()));
    }
    let f = fundamental_matrix(cam1, cam2)?;
    let fwd = run_dp(c1, c2, &f, (cam1, cam2), images, p);
    let rev_curve = c2.reversed();
    let rev = run_dp(c1, &rev_curve, &f, (cam1, cam2), images, p);
    let pick = |(m, s, u): (Vec<Match>, Score, f64), reversed| MatchResult {
        matches: m,
        c2_reversed: reversed,
        energy: s.1,
        unmatched_fraction: u,
    };
    match (fwd, rev) {
        (Ok(a), Ok(b)) => Ok(if better(b.1, a.1) { pick(b, true) } else { pick(a, false) }),
        (Ok(a), Err(_)) => Ok(pick(a, false)),
        (Err(_), Ok(b)) => Ok(pick(b, true)),
        (Err(e), Err(_)) => Err(e),
    }
}

/// Extend key-point matches to every dense sample of `c1`: each sample takes
/// the epipolar crossing on `c2` closest to the arc position interpolated
/// between the surrounding key-point matches. Results stay monotone in `c2`.
pub fn densify_matches(
    c1: &Centerline2D,
    c2: &Centerline2D,
    cam1: &CameraModel,
    cam2: &CameraModel,
    result: &MatchResult,
    p: &MatchParams,
) -> Result<Vec<(Point2<f64>, Point2<f64>)>> {
    let f = fundamental_matrix(cam1, cam2)?;
    let c2 = if result.c2_reversed { c2.reversed() } else { c2.clone() };
    let undist2: Vec<Point2<f64>> = c2.dense.iter().map(|c| cam2.undistort(&c.pos)).collect();
    let anchors: Vec<(f64, f64)> = result.matches.iter().map(|m| (c1.points[m.i1].arc, m.arc2)).collect();
    if anchors.is_empty() {
        return Ok(Vec::new());
    }
    let expected = |a: f64| -> f64 {
        let k = anchors.partition_point(|x| x.0 <= a);
        if k == 0 {
            anchors[0].1 - (anchors[0].0 - a)
        } else if k == anchors.len() {
            let l = anchors[k - 1];
            l.1 + (a - l.0)
        } else {
            let (l, r) = (anchors[k - 1], anchors[k]);
            let t = if r.0 > l.0 { (a - l.0) / (r.0 - l.0) } else { 0.0 };
            l.1 + t * (r.1 - l.1)
        }
    };
    let mut out = Vec::new();
    let mut last_arc = f64::NEG_INFINITY;
    for s in &c1.dense {
        let u1 = cam1.undistort(&s.pos);
        let l = epipolar_line(&f, &u1);
        let want = expected(s.arc);
        let best = epipolar_candidates(&l, &c2.dense, &undist2, p.band_px)
            .into_iter()
            .filter(|c| c.arc >= last_arc)
            .min_by(|a, b| (a.arc - want).abs().total_cmp(&(b.arc - want).abs()));
        if let Some(c) = best {
            // Reject jumps to a different branch of the curve.
            if (c.arc - want).abs() <= p.band_px.max(0.1 * c2.length()) {
                last_arc = c.arc;
                out.push((u1, c.pos));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(tx: f64, ty: f64, k: f64) -> CurvePoint {
        CurvePoint {
            pos: Point2::origin(),
            tangent: Vector2::new(tx, ty).normalize(),
            curvature: k,
            arc: 0.0,
        }
    }

    #[test]
    fn ncc_and_cost_endpoints() {
        let a: Vec<f64> = (0..121).map(|i| ((i * 7) % 13) as f64).collect();
        assert!((ncc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = a.iter().map(|v| -2.0 * v + 3.0).collect();
        assert!((ncc(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(match_cost(&a, &a, 0.2, 1.0).unwrap(), 1.0);
        assert_eq!(match_cost(&a, &a, 0.9, 1.0).unwrap(), 1.0);
        assert!(matches!(ncc(&[1.0; 9], &a[..9]), Err(Error::Undefined(_))));
        assert_eq!(match_cost(&[1.0; 9], &a[..9], 0.4, 0.5).unwrap(), 0.4);
    }

    #[test]
    fn aligned_structure_scores_one() {
        let s = structural_similarity(&cp(1.0, 1.0, 0.02), &cp(-1.0, -1.0, 0.02), 0.05);
        assert!((s - 1.0).abs() < 1e-12);
        let s = structural_similarity(&cp(1.0, 0.0, 0.0), &cp(0.0, 1.0, 0.0), 0.05);
        assert!(s.abs() < 1e-12);
        let s = structural_similarity(&cp(1.0, 0.0, 0.0), &cp(1.0, 0.0, 0.05), 0.05);
        assert!((s - (-1f64).exp()).abs() < 1e-12);
    }
}
