//! Curve generation through the target region: discrete curvature, polyline
//! simplification, and a curvature-continuous bridge between two terminals
//! built from a chain of clothoid segments (cubic Hermite as fallback).

use crate::error::{Error, Result};
use crate::imagery::MaskRegion;
use crate::structure::{EdgePair, EdgeTerminal, StructureParams};

/// Signed discrete curvature of the circle through three points.
pub fn menger_curvature(p0: (f64, f64), p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
    let d01 = dist(p0, p1);
    let d12 = dist(p1, p2);
    let d02 = dist(p0, p2);
    if d01 < 1e-12 || d12 < 1e-12 || d02 < 1e-12 {
        return Err(Error::CoincidentPoints);
    }
    let det = (p1.0 - p0.0) * (p2.1 - p1.1) - (p1.1 - p0.1) * (p2.0 - p1.0);
    Ok(2.0 * det / (d01 * d12 * d02))
}

/// Polyline simplification by split-position DP: minimizes the sum of
/// per-segment maximum deviations plus a penalty per segment. Segments whose
/// deviation exceeds `eps_fit` are forbidden. Returns vertex indices.
pub fn fit_polyline(points: &[(f64, f64)], seg_penalty: f64, eps_fit: f64) -> Vec<usize> {
    let n = points.len();
    assert!(n >= 2, "need at least two points");
    // deviation of points j..=i from the chord (j, i)
    let dev = |j: usize, i: usize| -> f64 {
        let (a, b) = (points[j], points[i]);
        let len = dist(a, b);
        let mut worst = 0.0f64;
        for p in &points[j..=i] {
            let d = if len < 1e-12 {
                dist(a, *p)
            } else {
                ((b.0 - a.0) * (a.1 - p.1) - (a.0 - p.0) * (b.1 - a.1)).abs() / len
            };
            worst = worst.max(d);
        }
        worst
    };

    let mut best = vec![f64::INFINITY; n];
    let mut back = vec![usize::MAX; n];
    best[0] = 0.0;
    for i in 1..n {
        for j in 0..i {
            if !best[j].is_finite() {
                continue;
            }
            let d = dev(j, i);
            if d > eps_fit {
                continue;
            }
            let total = best[j] + d + seg_penalty;
            if total < best[i] {
                best[i] = total;
                back[i] = j;
            }
        }
    }
    let mut verts = vec![n - 1];
    let mut cur = n - 1;
    while back[cur] != usize::MAX {
        cur = back[cur];
        verts.push(cur);
    }
    verts.reverse();
    verts
}

/// One sample of a generated curve.
#[derive(Debug, Clone, Copy)]
pub struct CurveSample {
    pub pos: (f64, f64),
    pub tangent: (f64, f64),
    pub curvature: f64,
}

/// A generated curve bridging one terminal pair through the target region.
#[derive(Debug, Clone)]
pub struct StructureCurve {
    /// Samples at roughly 1 px spacing from source hit to target hit.
    pub samples: Vec<CurveSample>,
    /// Indices of the generating pair in the terminal list.
    pub pair_ref: (usize, usize),
    /// True when the clothoid chain solve succeeded (false: Hermite fallback).
    pub clothoid: bool,
}

impl StructureCurve {
    pub fn length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| dist(w[0].pos, w[1].pos))
            .sum()
    }

    /// Position at a given arc length, by linear interpolation of samples.
    pub fn point_at(&self, s: f64) -> (f64, f64) {
        if self.samples.len() == 1 {
            return self.samples[0].pos;
        }
        let mut acc = 0.0;
        for w in self.samples.windows(2) {
            let seg = dist(w[0].pos, w[1].pos);
            if acc + seg >= s || seg == 0.0 {
                let t = if seg == 0.0 { 0.0 } else { (s - acc) / seg };
                let t = t.clamp(0.0, 1.0);
                return (
                    w[0].pos.0 + t * (w[1].pos.0 - w[0].pos.0),
                    w[0].pos.1 + t * (w[1].pos.1 - w[0].pos.1),
                );
            }
            acc += seg;
        }
        self.samples.last().unwrap().pos
    }
}

/// Maximum curvature jump allowed between consecutive samples.
pub const CURVATURE_JOIN_TOLERANCE: f64 = 0.05;
/// How far a sample may stray outside the target region.
pub const CONTAINMENT_TOLERANCE: f64 = 2.0;

/// Builds the bridging curve for a matched pair. The end conditions come from
/// the terminals (positions and tangents exact, curvatures estimated from the
/// arc tails); the bridge is a three-piece clothoid chain, falling back to a
/// cubic Hermite when the solve fails or the result escapes the region.
pub fn generate_curve(
    pair: &EdgePair,
    terminals: &[EdgeTerminal],
    mask: &MaskRegion,
    params: &StructureParams,
) -> Result<StructureCurve> {
    if !pair.cost.is_finite() {
        return Err(Error::CurveDropped("pair cost is not finite".into()));
    }
    let src = &terminals[pair.source];
    let dst = &terminals[pair.target];
    let p0 = (src.hit_point.0 as f64, src.hit_point.1 as f64);
    let p1 = (dst.hit_point.0 as f64, dst.hit_point.1 as f64);
    if dist(p0, p1) < 1.0 {
        return Err(Error::CurveDropped("terminals coincide".into()));
    }
    let theta0 = src.tangent.1.atan2(src.tangent.0);
    // the curve leaves the region along the target arc, against its tangent
    let theta1 = (-dst.tangent.1).atan2(-dst.tangent.0);
    let k0 = end_curvature(&src.approach, params);
    // target approach is traversed outward by the curve, flipping the sign
    let k1 = -end_curvature(&dst.approach, params);

    if let Some(chain) = solve_clothoid_chain(p0, theta0, k0, p1, theta1, k1) {
        let samples = chain.sample_unit_spaced();
        let curve = StructureCurve {
            samples,
            pair_ref: (pair.source, pair.target),
            clothoid: true,
        };
        if validate_curve(&curve, src, dst, mask).is_ok() {
            return Ok(curve);
        }
    }

    // fallback: cubic Hermite on positions and tangents only
    let samples = hermite_samples(p0, theta0, p1, theta1);
    let curve = StructureCurve {
        samples,
        pair_ref: (pair.source, pair.target),
        clothoid: false,
    };
    validate_curve(&curve, src, dst, mask).map_err(Error::CurveDropped)?;
    Ok(curve)
}

/// Checks the endpoint, tangent, containment, and curvature-join invariants.
pub fn validate_curve(
    curve: &StructureCurve,
    src: &EdgeTerminal,
    dst: &EdgeTerminal,
    mask: &MaskRegion,
) -> std::result::Result<(), String> {
    let n = curve.samples.len();
    if n < 2 {
        return Err("curve has fewer than two samples".into());
    }
    let p0 = (src.hit_point.0 as f64, src.hit_point.1 as f64);
    let p1 = (dst.hit_point.0 as f64, dst.hit_point.1 as f64);
    if dist(curve.samples[0].pos, p0) > 1.0 || dist(curve.samples[n - 1].pos, p1) > 1.0 {
        return Err("endpoint strays more than 1 px from its hit point".into());
    }
    let angle_to = |t: (f64, f64), u: (f64, f64)| {
        let dot = (t.0 * u.0 + t.1 * u.1).clamp(-1.0, 1.0);
        dot.acos().to_degrees()
    };
    if angle_to(curve.samples[0].tangent, src.tangent) > 5.0 {
        return Err("start tangent deviates more than 5 degrees".into());
    }
    let exit = (-dst.tangent.0, -dst.tangent.1);
    if angle_to(curve.samples[n - 1].tangent, exit) > 5.0 {
        return Err("end tangent deviates more than 5 degrees".into());
    }
    for s in &curve.samples {
        if !near_target(mask, s.pos, CONTAINMENT_TOLERANCE) {
            return Err(format!(
                "sample ({:.1}, {:.1}) escapes the target region",
                s.pos.0, s.pos.1
            ));
        }
    }
    for w in curve.samples.windows(2) {
        if (w[1].curvature - w[0].curvature).abs() > CURVATURE_JOIN_TOLERANCE {
            return Err("curvature jump exceeds the join tolerance".into());
        }
    }
    Ok(())
}

fn near_target(mask: &MaskRegion, p: (f64, f64), tol: f64) -> bool {
    let r = tol.ceil() as i64;
    let (cx, cy) = (p.0.round() as i64, p.1.round() as i64);
    for dy in -r..=r {
        for dx in -r..=r {
            if mask.is_target_i(cx + dx, cy + dy) {
                let d = ((cx + dx) as f64 - p.0).hypot((cy + dy) as f64 - p.1);
                if d <= tol + 0.5 {
                    return true;
                }
            }
        }
    }
    false
}

/// Curvature near the hit end of an arc tail: resample at the configured
/// spacing, simplify, and average the discrete curvature over the final
/// polyline segment.
fn end_curvature(approach: &[(f64, f64)], params: &StructureParams) -> f64 {
    let pts = resample(approach, params.sample_spacing);
    if pts.len() < 3 {
        return 0.0;
    }
    let verts = fit_polyline(&pts, params.seg_penalty, params.eps_fit.max(1.0));
    let last_start = verts[verts.len() - 2];
    let from = last_start.min(pts.len() - 3);
    let mut sum = 0.0;
    let mut count = 0;
    for i in from..pts.len() - 2 {
        if let Ok(k) = menger_curvature(pts[i], pts[i + 1], pts[i + 2]) {
            sum += k;
            count += 1;
        }
    }
    if count == 0 {
        return 0.0;
    }
    (sum / count as f64).clamp(-0.2, 0.2)
}

/// Resamples a polyline at fixed arc-length spacing, keeping the last point.
fn resample(points: &[(f64, f64)], spacing: f64) -> Vec<(f64, f64)> {
    if points.len() < 2 {
        return points.to_vec();
    }
    let mut out = vec![points[0]];
    let mut carried = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = dist(a, b);
        if seg < 1e-12 {
            continue;
        }
        let mut s = spacing - carried;
        while s <= seg {
            let t = s / seg;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
            s += spacing;
        }
        carried = seg - (s - spacing);
    }
    let last = *points.last().unwrap();
    if dist(*out.last().unwrap(), last) > 1e-9 {
        out.push(last);
    }
    out
}

// --- clothoid chain -------------------------------------------------------

/// Piecewise-linear-curvature curve: a chain of clothoid segments.
struct ClothoidChain {
    p0: (f64, f64),
    theta0: f64,
    /// (length, curvature at start, curvature at end) per segment.
    segs: Vec<(f64, f64, f64)>,
}

impl ClothoidChain {
    fn total_length(&self) -> f64 {
        self.segs.iter().map(|s| s.0).sum()
    }

    /// State (x, y, theta, k) at arc length s.
    fn state_at(&self, s: f64) -> (f64, f64, f64, f64) {
        let (mut x, mut y, mut th) = (self.p0.0, self.p0.1, self.theta0);
        let mut remaining = s.max(0.0);
        for &(len, ka, kb) in &self.segs {
            let take = remaining.min(len);
            let (nx, ny, nth) = integrate_segment(x, y, th, ka, kb, len, take);
            if remaining <= len {
                let k = if len > 0.0 {
                    ka + (kb - ka) * take / len
                } else {
                    ka
                };
                return (nx, ny, nth, k);
            }
            x = nx;
            y = ny;
            th = nth;
            remaining -= len;
        }
        let last = self.segs.last().copied().unwrap_or((0.0, 0.0, 0.0));
        (x, y, th, last.2)
    }

    fn endpoint(&self) -> (f64, f64, f64) {
        let (x, y, th, _) = self.state_at(self.total_length());
        (x, y, th)
    }

    /// Samples at exactly unit-ish spacing covering [0, S].
    fn sample_unit_spaced(&self) -> Vec<CurveSample> {
        let total = self.total_length();
        let n = (total.ceil() as usize).max(1);
        let step = total / n as f64;
        (0..=n)
            .map(|i| {
                let (x, y, th, k) = self.state_at(i as f64 * step);
                CurveSample {
                    pos: (x, y),
                    tangent: (th.cos(), th.sin()),
                    curvature: k,
                }
            })
            .collect()
    }
}

/// Integrates position over one clothoid segment from (x, y, theta) for arc
/// length `s` of a segment with linearly varying curvature ka -> kb over `len`.
fn integrate_segment(
    x: f64,
    y: f64,
    theta: f64,
    ka: f64,
    kb: f64,
    len: f64,
    s: f64,
) -> (f64, f64, f64) {
    if s <= 0.0 || len <= 0.0 {
        return (x, y, theta);
    }
    let rate = (kb - ka) / len;
    let angle = |u: f64| theta + ka * u + 0.5 * rate * u * u;
    // composite Simpson
    let steps = ((s * 4.0).ceil() as usize).max(8);
    let steps = steps + steps % 2;
    let h = s / steps as f64;
    let (mut ix, mut iy) = (angle(0.0).cos(), angle(0.0).sin());
    for i in 1..steps {
        let a = angle(i as f64 * h);
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        ix += w * a.cos();
        iy += w * a.sin();
    }
    let a_end = angle(s);
    ix += a_end.cos();
    iy += a_end.sin();
    (x + ix * h / 3.0, y + iy * h / 3.0, a_end)
}

fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut v = a % two_pi;
    if v > std::f64::consts::PI {
        v -= two_pi;
    } else if v <= -std::f64::consts::PI {
        v += two_pi;
    }
    v
}

/// Solves a G2 bridge: three equal clothoid pieces with end curvatures pinned,
/// interior curvatures and total length free. Newton on (c1, c2, S).
fn solve_clothoid_chain(
    p0: (f64, f64),
    theta0: f64,
    k0: f64,
    p1: (f64, f64),
    theta1: f64,
    k1: f64,
) -> Option<ClothoidChain> {
    let r = dist(p0, p1);
    if r < 1e-9 {
        return None;
    }
    // initial guess from a single-clothoid fit on positions and angles
    let (mut c1, mut c2, mut total) = match solve_single_clothoid(p0, theta0, p1, theta1) {
        Some((a, b, l)) => (a, b, l),
        None => {
            let turn = wrap_angle(theta1 - theta0);
            let l = 1.2 * r;
            (turn / l, turn / l, l)
        }
    };

    let build = |c1: f64, c2: f64, total: f64| -> ClothoidChain {
        let l = total / 3.0;
        ClothoidChain {
            p0,
            theta0,
            segs: vec![(l, k0, c1), (l, c1, c2), (l, c2, k1)],
        }
    };
    let residual = |c1: f64, c2: f64, total: f64| -> [f64; 3] {
        let chain = build(c1, c2, total);
        let (x, y, th) = chain.endpoint();
        [x - p1.0, y - p1.1, wrap_angle(th - theta1)]
    };
    let norm = |f: &[f64; 3]| (f[0] * f[0] + f[1] * f[1]).sqrt() + r * f[2].abs();

    let mut f = residual(c1, c2, total);
    for _ in 0..60 {
        if norm(&f) < 1e-9 * r.max(1.0) {
            let chain = build(c1, c2, total);
            return Some(chain);
        }
        // numeric Jacobian
        let hc = 1e-6;
        let hs = 1e-6 * total.max(1.0);
        let fc1 = residual(c1 + hc, c2, total);
        let fc2 = residual(c1, c2 + hc, total);
        let fs = residual(c1, c2, total + hs);
        let mut jac = [[0.0; 3]; 3];
        for row in 0..3 {
            jac[row][0] = (fc1[row] - f[row]) / hc;
            jac[row][1] = (fc2[row] - f[row]) / hc;
            jac[row][2] = (fs[row] - f[row]) / hs;
        }
        let step = solve3(&jac, &f)?;
        // damped update
        let mut lambda = 1.0;
        let mut advanced = false;
        for _ in 0..12 {
            let (nc1, nc2, ns) = (
                c1 - lambda * step[0],
                c2 - lambda * step[1],
                total - lambda * step[2],
            );
            if ns < 0.5 * r || ns > 8.0 * r || !ns.is_finite() {
                lambda *= 0.5;
                continue;
            }
            let nf = residual(nc1, nc2, ns);
            if norm(&nf) < norm(&f) {
                c1 = nc1;
                c2 = nc2;
                total = ns;
                f = nf;
                advanced = true;
                break;
            }
            lambda *= 0.5;
        }
        if !advanced {
            return None;
        }
    }
    if norm(&f) < 1e-9 * r.max(1.0) {
        Some(build(c1, c2, total))
    } else {
        None
    }
}

/// Single-clothoid fit through positions and angles (curvature ends free).
/// Returns interior curvature samples at 1/3 and 2/3 plus the length, used to
/// seed the chain solve.
fn solve_single_clothoid(
    p0: (f64, f64),
    theta0: f64,
    p1: (f64, f64),
    theta1: f64,
) -> Option<(f64, f64, f64)> {
    let r = dist(p0, p1);
    let phi = (p1.1 - p0.1).atan2(p1.0 - p0.0);
    let phi0 = wrap_angle(theta0 - phi);
    let phi1 = wrap_angle(theta1 - phi);
    // in chord frame: theta(tau) = phi0 + (phi1 - phi0 - a) tau + a tau^2
    let g = |a: f64| -> f64 {
        simpson01(|tau| (phi0 + (phi1 - phi0 - a) * tau + a * tau * tau).sin())
    };
    let c = |a: f64| -> f64 {
        simpson01(|tau| (phi0 + (phi1 - phi0 - a) * tau + a * tau * tau).cos())
    };

    // bracket the root of g nearest zero
    let mut root = None;
    if g(0.0).abs() < 1e-12 {
        root = Some(0.0);
    } else {
        let step = 0.25;
        let mut best_bracket: Option<(f64, f64)> = None;
        let mut prev_a = 0.0;
        let mut prev_g = g(0.0);
        for i in 1..=160 {
            for sign in [1.0, -1.0] {
                let a = sign * step * i as f64;
                let ga = g(a);
                let pa = if sign > 0.0 { prev_a } else { -prev_a };
                let pg = if sign > 0.0 { prev_g } else { g(pa) };
                if pg * ga <= 0.0 && best_bracket.is_none() {
                    best_bracket = Some((pa.min(a), pa.max(a)));
                }
            }
            prev_a = step * i as f64;
            prev_g = g(prev_a);
            if best_bracket.is_some() {
                break;
            }
        }
        if let Some((mut lo, mut hi)) = best_bracket {
            let (mut glo, _ghi) = (g(lo), g(hi));
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let gm = g(mid);
                if glo * gm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    glo = gm;
                }
            }
            root = Some(0.5 * (lo + hi));
        }
    }
    let a = root?;
    let cos_int = c(a);
    if cos_int <= 1e-6 {
        return None;
    }
    let total = r / cos_int;
    // curvature in the chord frame: dtheta/ds = (phi1 - phi0 - a + 2 a tau) / L
    let k_at = |tau: f64| (phi1 - phi0 - a + 2.0 * a * tau) / total;
    Some((k_at(1.0 / 3.0), k_at(2.0 / 3.0), total))
}

fn simpson01(f: impl Fn(f64) -> f64) -> f64 {
    let n = 64usize;
    let h = 1.0 / n as f64;
    let mut acc = f(0.0) + f(1.0);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(i as f64 * h);
    }
    acc * h / 3.0
}

/// Solves the 3x3 system J x = b.
fn solve3(j: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut a = *j;
    let mut x = *b;
    for col in 0..3 {
        let mut pivot = col;
        for row in col + 1..3 {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    let mut out = [0.0; 3];
    for col in (0..3).rev() {
        let mut v = x[col];
        for k in col + 1..3 {
            v -= a[col][k] * out[k];
        }
        out[col] = v / a[col][col];
    }
    Some(out)
}

// --- Hermite fallback -----------------------------------------------------

/// Cubic Hermite between the endpoints with chord-scaled tangents, sampled at
/// unit arc-length spacing.
fn hermite_samples(p0: (f64, f64), theta0: f64, p1: (f64, f64), theta1: f64) -> Vec<CurveSample> {
    let r = dist(p0, p1);
    let m0 = (r * theta0.cos(), r * theta0.sin());
    let m1 = (r * theta1.cos(), r * theta1.sin());
    let point = |u: f64| {
        let h00 = 2.0 * u * u * u - 3.0 * u * u + 1.0;
        let h10 = u * u * u - 2.0 * u * u + u;
        let h01 = -2.0 * u * u * u + 3.0 * u * u;
        let h11 = u * u * u - u * u;
        (
            h00 * p0.0 + h10 * m0.0 + h01 * p1.0 + h11 * m1.0,
            h00 * p0.1 + h10 * m0.1 + h01 * p1.1 + h11 * m1.1,
        )
    };
    let deriv = |u: f64| {
        let d00 = 6.0 * u * u - 6.0 * u;
        let d10 = 3.0 * u * u - 4.0 * u + 1.0;
        let d01 = -6.0 * u * u + 6.0 * u;
        let d11 = 3.0 * u * u - 2.0 * u;
        (
            d00 * p0.0 + d10 * m0.0 + d01 * p1.0 + d11 * m1.0,
            d00 * p0.1 + d10 * m0.1 + d01 * p1.1 + d11 * m1.1,
        )
    };
    let second = |u: f64| {
        let s00 = 12.0 * u - 6.0;
        let s10 = 6.0 * u - 4.0;
        let s01 = -12.0 * u + 6.0;
        let s11 = 6.0 * u - 2.0;
        (
            s00 * p0.0 + s10 * m0.0 + s01 * p1.0 + s11 * m1.0,
            s00 * p0.1 + s10 * m0.1 + s01 * p1.1 + s11 * m1.1,
        )
    };

    // dense pre-sample then resample by arc length
    let dense = (8.0 * r).ceil().max(64.0) as usize;
    let mut cumulative = Vec::with_capacity(dense + 1);
    let mut total = 0.0;
    let mut prev = point(0.0);
    cumulative.push(0.0);
    for i in 1..=dense {
        let p = point(i as f64 / dense as f64);
        total += dist(prev, p);
        cumulative.push(total);
        prev = p;
    }
    let n = (total.ceil() as usize).max(1);
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n + 1);
    let mut seg = 0usize;
    for i in 0..=n {
        let target = i as f64 * step;
        while seg + 1 < cumulative.len() && cumulative[seg + 1] < target {
            seg += 1;
        }
        let u = if seg + 1 >= cumulative.len() {
            1.0
        } else {
            let (a, b) = (cumulative[seg], cumulative[seg + 1]);
            let frac = if b > a { (target - a) / (b - a) } else { 0.0 };
            ((seg as f64 + frac) / dense as f64).clamp(0.0, 1.0)
        };
        let p = point(u);
        let d = deriv(u);
        let dd = second(u);
        let speed = (d.0 * d.0 + d.1 * d.1).sqrt().max(1e-12);
        let k = (d.0 * dd.1 - d.1 * dd.0) / (speed * speed * speed);
        out.push(CurveSample {
            pos: p,
            tangent: (d.0 / speed, d.1 / speed),
            curvature: k,
        });
    }
    out
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::FlankRegion;

    #[test]
    fn menger_collinear_is_zero() {
        let k = menger_curvature((0.0, 0.0), (1.0, 0.0), (2.0, 0.0)).unwrap();
        assert_eq!(k, 0.0);
    }

    #[test]
    fn menger_unit_circle() {
        let k = menger_curvature((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)).unwrap();
        assert!((k - 1.0).abs() < 1e-12);
    }

    #[test]
    fn menger_radius_two_circle() {
        let p = |a: f64| (2.0 * a.cos(), 2.0 * a.sin());
        let k = menger_curvature(p(0.3), p(1.0), p(1.9)).unwrap();
        assert!((k.abs() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn menger_rejects_coincident() {
        assert!(menger_curvature((1.0, 1.0), (1.0, 1.0), (2.0, 0.0)).is_err());
    }

    #[test]
    fn menger_rigid_motion_invariant_and_reflection_negates() {
        let pts = [(0.2, 0.1), (1.3, 0.9), (2.0, 0.3)];
        let k = menger_curvature(pts[0], pts[1], pts[2]).unwrap();
        let (c, s) = (0.7f64.cos(), 0.7f64.sin());
        let rot = |p: (f64, f64)| (c * p.0 - s * p.1 + 3.0, s * p.0 + c * p.1 - 2.0);
        let kr = menger_curvature(rot(pts[0]), rot(pts[1]), rot(pts[2])).unwrap();
        assert!((k - kr).abs() < 1e-9);
        let refl = |p: (f64, f64)| (p.0, -p.1);
        let km = menger_curvature(refl(pts[0]), refl(pts[1]), refl(pts[2])).unwrap();
        assert!((k + km).abs() < 1e-12);
    }

    #[test]
    fn polyline_single_segment_on_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let verts = fit_polyline(&pts, 2.0, 1.5);
        assert_eq!(verts, vec![0, 9]);
    }

    #[test]
    fn polyline_l_shape_two_segments() {
        let mut pts: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 0.0)).collect();
        pts.extend((1..6).map(|i| (5.0, i as f64)));
        let verts = fit_polyline(&pts, 2.0, 1.5);
        assert_eq!(verts, vec![0, 5, 10], "corner becomes the interior vertex");

        // enumeration oracle over all split sets
        let n = pts.len();
        let seg_cost = |j: usize, i: usize| {
            let (a, b) = (pts[j], pts[i]);
            let len = dist(a, b);
            pts[j..=i]
                .iter()
                .map(|p| {
                    if len < 1e-12 {
                        dist(a, *p)
                    } else {
                        ((b.0 - a.0) * (a.1 - p.1) - (a.0 - p.0) * (b.1 - a.1)).abs() / len
                    }
                })
                .fold(0.0f64, f64::max)
        };
        let mut best = f64::INFINITY;
        for bits in 0u32..(1 << (n - 2)) {
            let mut verts = vec![0];
            for k in 0..(n - 2) {
                if bits & (1 << k) != 0 {
                    verts.push(k + 1);
                }
            }
            verts.push(n - 1);
            let mut total = 0.0;
            let mut ok = true;
            for w in verts.windows(2) {
                let d = seg_cost(w[0], w[1]);
                if d > 1.5 {
                    ok = false;
                    break;
                }
                total += d + 2.0;
            }
            if ok && total < best {
                best = total;
            }
        }
        assert!((best - 4.0).abs() < 1e-12, "two zero-deviation segments");
    }

    #[test]
    fn polyline_zero_penalty_splits_everywhere() {
        // generic (non-collinear) points: singleton segments are strictly optimal
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| (i as f64, (i as f64 * 0.9).sin()))
            .collect();
        let verts = fit_polyline(&pts, 0.0, 10.0);
        assert_eq!(verts, (0..8).collect::<Vec<_>>());
    }

    fn open_mask(w: u32, h: u32) -> MaskRegion {
        // everything target except a one-pixel frame
        MaskRegion::from_fn(w, h, |x, y| x > 0 && y > 0 && x < w - 1 && y < h - 1).unwrap()
    }

    fn terminal_at(hit: (u32, u32), tangent: (f64, f64), straight_tail: bool) -> EdgeTerminal {
        let (hx, hy) = (hit.0 as f64, hit.1 as f64);
        let approach: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let s = (12 - i) as f64;
                if straight_tail {
                    (hx - s * tangent.0, hy - s * tangent.1)
                } else {
                    (hx - s, hy)
                }
            })
            .collect();
        EdgeTerminal {
            hit_point: hit,
            tangent,
            strength: 1.0,
            arc_ref: 0,
            flank_regions: [
                FlankRegion { pixels: vec![(0, 0)] },
                FlankRegion { pixels: vec![(0, 1)] },
            ],
            boundary_position: 0.0,
            approach,
        }
    }

    #[test]
    fn straight_bridge_for_collinear_antiparallel_terminals() {
        let mask = open_mask(64, 64);
        let src = terminal_at((5, 32), (1.0, 0.0), true);
        let dst = terminal_at((58, 32), (-1.0, 0.0), true);
        let terms = vec![src, dst];
        let pair = EdgePair {
            source: 0,
            target: 1,
            cost: 0.0,
        };
        let curve =
            generate_curve(&pair, &terms, &mask, &StructureParams::default()).unwrap();
        assert!(curve.clothoid);
        for s in &curve.samples {
            assert!(s.curvature.abs() <= 1e-6, "straight segment expected");
            assert!((s.pos.1 - 32.0).abs() < 1e-6);
        }
    }

    #[test]
    fn mirrored_oblique_tangents_make_an_s_curve() {
        let mask = open_mask(80, 80);
        let a = 0.35f64;
        // travel directions +a at the start and +a at the end, level endpoints
        let src = terminal_at((10, 40), (a.cos(), a.sin()), true);
        let dst = terminal_at((70, 40), (-a.cos(), -a.sin()), true);
        let terms = vec![src, dst];
        let pair = EdgePair {
            source: 0,
            target: 1,
            cost: 0.0,
        };
        let curve =
            generate_curve(&pair, &terms, &mask, &StructureParams::default()).unwrap();
        // curvature crosses zero exactly once
        let mut signs = Vec::new();
        for s in &curve.samples {
            if s.curvature.abs() > 1e-9 {
                let sign = s.curvature.signum();
                if signs.last() != Some(&sign) {
                    signs.push(sign);
                }
            }
        }
        assert_eq!(signs.len(), 2, "one sign change, got {signs:?}");
    }

    #[test]
    fn endpoints_clamp_to_hit_points() {
        let mask = open_mask(64, 64);
        let src = terminal_at((4, 20), (0.8f64.cos(), 0.8f64.sin()), true);
        let dst = terminal_at((55, 45), (-0.9f64.cos(), 0.9f64.sin()), true);
        let terms = vec![src.clone(), dst.clone()];
        let pair = EdgePair {
            source: 0,
            target: 1,
            cost: 0.1,
        };
        let curve =
            generate_curve(&pair, &terms, &mask, &StructureParams::default()).unwrap();
        let first = curve.samples.first().unwrap().pos;
        let last = curve.samples.last().unwrap().pos;
        assert!(dist(first, (4.0, 20.0)) <= 1.0);
        assert!(dist(last, (55.0, 45.0)) <= 1.0);
        // curvature varies smoothly
        for w in curve.samples.windows(2) {
            assert!((w[1].curvature - w[0].curvature).abs() <= CURVATURE_JOIN_TOLERANCE);
        }
    }

    #[test]
    fn curve_escaping_region_is_dropped() {
        // a narrow horizontal slit cannot contain a strongly bent bridge
        let mask = MaskRegion::from_fn(64, 64, |x, y| (5..60).contains(&x) && y == 32).unwrap();
        let src = terminal_at((5, 32), (0.0, 1.0), true);
        let dst = terminal_at((59, 32), (0.0, 1.0), true);
        let terms = vec![src, dst];
        let pair = EdgePair {
            source: 0,
            target: 1,
            cost: 0.0,
        };
        assert!(generate_curve(&pair, &terms, &mask, &StructureParams::default()).is_err());
    }
}
