//! Structure estimation: edge terminals on the target boundary, optimal
//! terminal pairing, and curve generation through the target region.

mod curve;

pub use curve::{
    fit_polyline, generate_curve, menger_curvature, CurveSample, StructureCurve,
};

use std::collections::HashMap;

use crate::contours::ContourHierarchy;
use crate::error::{Error, Result};
use crate::imagery::{lab_scaled, MaskRegion, RasterImage};

/// Tunables of the structure stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureParams {
    /// Threshold sweep start.
    pub t_init: f64,
    /// Sweep step.
    pub dt: f64,
    /// Sweep floor.
    pub delta_t: f64,
    /// Maximum per-region histogram divergence for a valid match.
    pub delta_h: f64,
    /// Strength-penalty offset so equal-strength pairs still weigh appearance.
    pub epsilon_l: f64,
    /// Cost of leaving a terminal unmatched.
    pub kappa_u: f64,
    /// Arc sampling spacing for curvature estimation, pixels.
    pub sample_spacing: f64,
    /// Penalty per polyline segment.
    pub seg_penalty: f64,
    /// Polyline fit tolerance, pixels.
    pub eps_fit: f64,
    /// Arc-length window for tangent estimation at a hit point, pixels.
    pub tangent_window: f64,
}

impl Default for StructureParams {
    fn default() -> Self {
        let delta_h = std::f64::consts::LN_2; // half of the divergence range 2 ln 2
        StructureParams {
            t_init: 1.0,
            dt: 0.05,
            delta_t: 0.1,
            delta_h,
            epsilon_l: 0.05,
            kappa_u: 1.5 * delta_h,
            sample_spacing: 3.0,
            seg_penalty: 2.0,
            eps_fit: 1.5,
            tangent_window: 10.0,
        }
    }
}

/// One flank region of an edge: the known-region pixels on one side.
#[derive(Debug, Clone)]
pub struct FlankRegion {
    pub pixels: Vec<(u32, u32)>,
}

/// Point where a salient contour meets the target boundary.
#[derive(Debug, Clone)]
pub struct EdgeTerminal {
    /// Pixel on the target boundary hit by the arc.
    pub hit_point: (u32, u32),
    /// Unit vector pointing into the target region.
    pub tangent: (f64, f64),
    /// Strength of the source arc, in (0, 1].
    pub strength: f64,
    /// Index of the source arc in the hierarchy.
    pub arc_ref: usize,
    /// The two regions split by the edge.
    pub flank_regions: [FlankRegion; 2],
    /// Arc-length position of the hit point along the traced boundary.
    pub boundary_position: f64,
    /// Arc points ordered toward the hit point, used for curvature estimates.
    pub approach: Vec<(f64, f64)>,
}

/// A matched terminal pair; indices into the terminal list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePair {
    pub source: usize,
    pub target: usize,
    pub cost: f64,
}

/// Normalized 48-bin Lab histogram (16 bins per channel, concatenated).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionHistogram {
    bins: Vec<f64>,
}

impl RegionHistogram {
    pub const BINS_PER_CHANNEL: usize = 16;

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn from_bins(bins: Vec<f64>) -> Self {
        RegionHistogram { bins }
    }
}

/// Normalized color histogram of a pixel region.
pub fn region_histogram(img: &RasterImage, region: &[(u32, u32)]) -> Result<RegionHistogram> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    let nb = RegionHistogram::BINS_PER_CHANNEL;
    let mut bins = vec![0.0; 3 * nb];
    for &(x, y) in region {
        let lab = lab_scaled(img.rgb(x, y));
        for (c, v) in lab.iter().enumerate() {
            let b = ((v * nb as f64) as usize).min(nb - 1);
            bins[c * nb + b] += 1.0;
        }
    }
    let total = (3 * region.len()) as f64;
    for b in &mut bins {
        *b /= total;
    }
    Ok(RegionHistogram { bins })
}

/// Symmetrized divergence between two histograms; bounded by 2 ln 2.
pub fn js_divergence(h1: &RegionHistogram, h2: &RegionHistogram) -> Result<f64> {
    if h1.bins.len() != h2.bins.len() {
        return Err(Error::HistogramMismatch {
            left: h1.bins.len(),
            right: h2.bins.len(),
        });
    }
    let mut d = 0.0;
    for (&a, &b) in h1.bins.iter().zip(&h2.bins) {
        let s = a + b;
        if s <= 0.0 {
            continue;
        }
        if a > 0.0 {
            d += a * (2.0 * a / s).ln();
        }
        if b > 0.0 {
            d += b * (2.0 * b / s).ln();
        }
    }
    Ok(d.max(0.0))
}

/// Match cost between two terminals. Returns infinity when the best flank
/// correspondence exceeds the divergence cap.
pub fn pair_cost(
    s: &EdgeTerminal,
    t: &EdgeTerminal,
    img: &RasterImage,
    params: &StructureParams,
) -> Result<f64> {
    let hs = [
        region_histogram(img, &s.flank_regions[0].pixels)?,
        region_histogram(img, &s.flank_regions[1].pixels)?,
    ];
    let ht = [
        region_histogram(img, &t.flank_regions[0].pixels)?,
        region_histogram(img, &t.flank_regions[1].pixels)?,
    ];
    Ok(pair_cost_from_histograms(
        &hs, &ht, s.strength, t.strength, params,
    ))
}

fn pair_cost_from_histograms(
    hs: &[RegionHistogram; 2],
    ht: &[RegionHistogram; 2],
    ls: f64,
    lt: f64,
    params: &StructureParams,
) -> f64 {
    let d = |a: &RegionHistogram, b: &RegionHistogram| js_divergence(a, b).expect("equal bins");
    let straight = (d(&hs[0], &ht[0]), d(&hs[1], &ht[1]));
    let swapped = (d(&hs[0], &ht[1]), d(&hs[1], &ht[0]));
    let (da, db) = if straight.0 + straight.1 <= swapped.0 + swapped.1 {
        straight
    } else {
        swapped
    };
    if da > params.delta_h || db > params.delta_h {
        return f64::INFINITY;
    }
    let l_max = ls.max(lt);
    ((ls - lt).abs() + params.epsilon_l) / l_max * (da + db)
}

/// Traced boundary rings of the target region, with a pixel lookup.
pub struct BoundaryRings {
    pub rings: Vec<Vec<(u32, u32)>>,
    lookup: HashMap<(u32, u32), f64>,
}

impl BoundaryRings {
    pub fn new(mask: &MaskRegion) -> Self {
        let rings = crate::imagery::boundary(mask);
        let mut lookup = HashMap::new();
        let mut offset = 0usize;
        for ring in &rings {
            for (i, &p) in ring.iter().enumerate() {
                lookup.entry(p).or_insert((offset + i) as f64);
            }
            offset += ring.len();
        }
        BoundaryRings { rings, lookup }
    }

    pub fn position(&self, p: (u32, u32)) -> Option<f64> {
        self.lookup.get(&p).copied()
    }

    /// Nearest boundary pixel within `radius` of a point, ties by trace order.
    pub fn nearest(&self, p: (f64, f64), radius: f64) -> Option<(u32, u32)> {
        let mut best: Option<((u32, u32), f64, f64)> = None;
        let r = radius.ceil() as i64;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (p.0.round() as i64 + dx, p.1.round() as i64 + dy);
                if x < 0 || y < 0 {
                    continue;
                }
                let key = (x as u32, y as u32);
                if let Some(&pos) = self.lookup.get(&key) {
                    let d = ((x as f64 - p.0).powi(2) + (y as f64 - p.1).powi(2)).sqrt();
                    if d <= radius {
                        let better = match best {
                            None => true,
                            Some((_, bd, bpos)) => d < bd - 1e-12 || (d < bd + 1e-12 && pos < bpos),
                        };
                        if better {
                            best = Some((key, d, pos));
                        }
                    }
                }
            }
        }
        best.map(|(k, _, _)| k)
    }
}

/// Collects edge terminals: arcs that survive the threshold sweep and whose
/// endpoints land on the target boundary.
pub fn collect_terminals(
    hier: &ContourHierarchy,
    mask: &MaskRegion,
    params: &StructureParams,
) -> Vec<EdgeTerminal> {
    let rings = BoundaryRings::new(mask);
    collect_terminals_with_rings(hier, &rings, params)
}

pub fn collect_terminals_with_rings(
    hier: &ContourHierarchy,
    rings: &BoundaryRings,
    params: &StructureParams,
) -> Vec<EdgeTerminal> {
    // last sweep level at or above the floor
    let mut t = params.t_init;
    let mut t_last = None;
    loop {
        t -= params.dt;
        if t < params.delta_t - 1e-9 {
            break;
        }
        t_last = Some(t);
    }
    let Some(t_last) = t_last else {
        return Vec::new();
    };

    let mut terminals: Vec<EdgeTerminal> = Vec::new();
    for arc in &hier.arcs {
        if arc.strength <= t_last || arc.points.is_empty() {
            continue;
        }
        for end in [false, true] {
            let endpoint = if end {
                *arc.points.last().unwrap()
            } else {
                arc.points[0]
            };
            let Some(hit) = rings.nearest(endpoint, 1.6) else {
                continue;
            };
            // suppress duplicates: same arc, hit within 2 px
            let dup = terminals.iter().any(|t| {
                t.arc_ref == arc.id && {
                    let dx = t.hit_point.0 as f64 - hit.0 as f64;
                    let dy = t.hit_point.1 as f64 - hit.1 as f64;
                    (dx * dx + dy * dy).sqrt() <= 2.0
                }
            });
            if dup {
                continue;
            }
            let mut approach: Vec<(f64, f64)> = arc.points.clone();
            if !end {
                approach.reverse();
            }
            let Some(tangent) =
                tail_tangent(&approach, (hit.0 as f64, hit.1 as f64), params.tangent_window)
            else {
                continue;
            };
            let (fa, fb) = hier.flank_pixels(arc.id);
            if fa.is_empty() || fb.is_empty() {
                continue;
            }
            let boundary_position = rings.position(hit).unwrap_or(0.0);
            terminals.push(EdgeTerminal {
                hit_point: hit,
                tangent,
                strength: arc.strength,
                arc_ref: arc.id,
                flank_regions: [FlankRegion { pixels: fa }, FlankRegion { pixels: fb }],
                boundary_position,
                approach,
            });
        }
    }
    terminals.sort_by(|a, b| a.boundary_position.total_cmp(&b.boundary_position));
    terminals
}

/// Unit tangent of the chain tail, pointing from the tail toward the hit.
fn tail_tangent(approach: &[(f64, f64)], hit: (f64, f64), window: f64) -> Option<(f64, f64)> {
    // walk back from the hit end accumulating arc length
    let mut tail = vec![*approach.last()?];
    let mut acc = 0.0;
    for w in approach.windows(2).rev() {
        let (a, b) = (w[0], w[1]);
        acc += ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        tail.push(a);
        if acc >= window {
            break;
        }
    }
    tail.reverse();
    let dir = if tail.len() >= 2 {
        principal_direction(&tail)?
    } else {
        let p = tail[0];
        (hit.0 - p.0, hit.1 - p.1)
    };
    let norm = (dir.0 * dir.0 + dir.1 * dir.1).sqrt();
    if norm < 1e-12 {
        return None;
    }
    let mut d = (dir.0 / norm, dir.1 / norm);
    // orient along the travel direction toward the hit
    let travel = (
        tail.last().unwrap().0 - tail[0].0 + (hit.0 - tail[0].0),
        tail.last().unwrap().1 - tail[0].1 + (hit.1 - tail[0].1),
    );
    if d.0 * travel.0 + d.1 * travel.1 < 0.0 {
        d = (-d.0, -d.1);
    }
    Some(d)
}

/// Principal axis of a point set via the covariance eigenvector.
fn principal_direction(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (mx, my) = (mx / n, my / n);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.0 - mx, p.1 - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx + syy < 1e-15 {
        return None;
    }
    let angle = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    Some((angle.cos(), angle.sin()))
}

/// Small orientation-consistency term used only to break appearance ties:
/// zero when the chord continues both tangents, up to 4 for a U-turn.
fn bend_penalty(s: &EdgeTerminal, t: &EdgeTerminal) -> f64 {
    let chord = (
        t.hit_point.0 as f64 - s.hit_point.0 as f64,
        t.hit_point.1 as f64 - s.hit_point.1 as f64,
    );
    let norm = (chord.0 * chord.0 + chord.1 * chord.1).sqrt();
    if norm < 1e-9 {
        return 4.0;
    }
    let c = (chord.0 / norm, chord.1 / norm);
    (1.0 - (s.tangent.0 * c.0 + s.tangent.1 * c.1)) + (1.0 + (t.tangent.0 * c.0 + t.tangent.1 * c.1))
}

const BEND_TIEBREAK: f64 = 1e-6;

/// Optimal non-crossing partial matching of the terminals in boundary order.
/// Pairs are returned sorted by cost.
pub fn match_pairs(
    terminals: &[EdgeTerminal],
    img: &RasterImage,
    params: &StructureParams,
) -> Result<Vec<EdgePair>> {
    let n = terminals.len();
    if n < 2 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        terminals[a]
            .boundary_position
            .total_cmp(&terminals[b].boundary_position)
    });

    // cache flank histograms once per terminal
    let mut hists = Vec::with_capacity(n);
    for t in terminals {
        hists.push([
            region_histogram(img, &t.flank_regions[0].pixels)?,
            region_histogram(img, &t.flank_regions[1].pixels)?,
        ]);
    }

    let mut pure = vec![vec![f64::INFINITY; n]; n];
    let mut effective = vec![vec![f64::INFINITY; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (order[i], order[j]);
            let m = pair_cost_from_histograms(
                &hists[a],
                &hists[b],
                terminals[a].strength,
                terminals[b].strength,
                params,
            );
            pure[i][j] = m;
            if m.is_finite() {
                effective[i][j] = m + BEND_TIEBREAK * bend_penalty(&terminals[a], &terminals[b]);
            }
        }
    }

    let (matched, _total) = solve_noncrossing(&effective, params.kappa_u);
    let mut pairs: Vec<EdgePair> = matched
        .into_iter()
        .map(|(i, j)| EdgePair {
            source: order[i],
            target: order[j],
            cost: pure[i][j],
        })
        .collect();
    pairs.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    Ok(pairs)
}

/// Minimum-cost non-crossing partial matching over a circular order given a
/// pairwise cost matrix (upper triangle used; infinite entries are unmatched).
/// Each unmatched element costs `kappa_u`. Returns matched index pairs and
/// the total cost.
pub fn solve_noncrossing(cost: &[Vec<f64>], kappa_u: f64) -> (Vec<(usize, usize)>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    // f[i][j] over the interval i..=j, entry j+1 encodes the empty interval
    let mut f = vec![vec![0.0f64; n + 1]; n + 1];
    let mut choice = vec![vec![usize::MAX; n + 1]; n + 1];
    for len in 1..=n {
        for i in 0..=(n - len) {
            let j = i + len - 1;
            let mut best = kappa_u + f[i + 1][j + 1];
            let mut pick = usize::MAX;
            for k in (i + 1)..=j {
                let c = cost[i][k];
                if !c.is_finite() {
                    continue;
                }
                let inner = f[i + 1][k];
                let outer = f[k + 1][j + 1];
                let total = c + inner + outer;
                if total < best {
                    best = total;
                    pick = k;
                }
            }
            f[i][j + 1] = best;
            choice[i][j + 1] = pick;
        }
    }
    let mut pairs = Vec::new();
    let mut stack = vec![(0usize, n)];
    while let Some((i, jp1)) = stack.pop() {
        if i >= jp1 {
            continue;
        }
        let k = choice[i][jp1];
        if k == usize::MAX {
            stack.push((i + 1, jp1));
        } else {
            pairs.push((i, k));
            stack.push((i + 1, k));
            stack.push((k + 1, jp1));
        }
    }
    pairs.sort_unstable();
    (pairs, f[0][n])
}
