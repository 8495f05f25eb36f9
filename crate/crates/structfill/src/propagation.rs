//! Structure propagation: anchor points along the generated curves, candidate
//! patches from the known band, rotation-aware patch energies, and energy
//! minimization by chain DP (exact) or damped min-sum belief propagation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fill::ConfidenceMap;
use crate::grid::Grid;
use crate::imagery::{MaskRegion, RasterImage};
use crate::structure::StructureCurve;

/// Tunables of the propagation stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationParams {
    pub patch_side: u32,
    pub m_max: usize,
    /// Candidate band width around the boundary, pixels.
    pub band: u32,
    /// Relative message-change threshold for BP convergence.
    pub delta: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub seed: u64,
}

impl PropagationParams {
    pub fn for_patch_side(l: u32) -> Self {
        PropagationParams {
            patch_side: l,
            m_max: 400,
            band: 4 * l,
            delta: 1e-3,
            max_iter: 50,
            damping: 0.5,
            seed: 42,
        }
    }
}

impl Default for PropagationParams {
    fn default() -> Self {
        Self::for_patch_side(9)
    }
}

/// Patch rotations scored during matching; listed with the identity first so
/// ties resolve to the unrotated patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    R0,
    P45,
    N45,
    P90,
    N90,
    R180,
}

pub const ALL_ROTATIONS: [Rotation; 6] = [
    Rotation::R0,
    Rotation::P45,
    Rotation::N45,
    Rotation::P90,
    Rotation::N90,
    Rotation::R180,
];

impl Rotation {
    pub fn angle(self) -> f64 {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};
        match self {
            Rotation::R0 => 0.0,
            Rotation::P45 => FRAC_PI_4,
            Rotation::N45 => -FRAC_PI_4,
            Rotation::P90 => FRAC_PI_2,
            Rotation::N90 => -FRAC_PI_2,
            Rotation::R180 => PI,
        }
    }

    fn is_axis_aligned(self) -> bool {
        !matches!(self, Rotation::P45 | Rotation::N45)
    }
}

/// Patch placement site on a curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPoint {
    pub center: (i64, i64),
    pub curve_ref: usize,
    pub index: usize,
    /// Arc-length position along the curve.
    pub arc_pos: f64,
}

/// Source texture patch fully inside the known region.
#[derive(Debug, Clone)]
pub struct CandidatePatch {
    pub id: usize,
    pub source_center: (i64, i64),
    /// Unrotated l*l RGB block.
    pub pixels: Vec<[u8; 3]>,
}

/// Anchor adjacency: consecutive anchors per curve plus intersection links.
#[derive(Debug, Clone)]
pub struct StructureGraph {
    pub vertices: usize,
    pub edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

impl StructureGraph {
    pub fn new(vertices: usize, mut edges: Vec<(usize, usize)>) -> Self {
        for e in &mut edges {
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let mut adj = vec![Vec::new(); vertices];
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        StructureGraph {
            vertices,
            edges,
            adj,
        }
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.vertices];
        let mut out = Vec::new();
        for s in 0..self.vertices {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(v) = stack.pop() {
                for &n in &self.adj[v] {
                    if !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                        stack.push(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// True when the vertices form a simple path (in some order).
    pub fn is_path(&self, component: &[usize]) -> bool {
        let mut ends = 0;
        for &v in component {
            match self.adj[v].len() {
                0 => return component.len() == 1,
                1 => ends += 1,
                2 => {}
                _ => return false,
            }
        }
        ends == 2 && {
            let edge_count: usize = component.iter().map(|&v| self.adj[v].len()).sum::<usize>() / 2;
            edge_count == component.len() - 1
        }
    }

    /// Orders a path component from one end to the other.
    pub fn path_order(&self, component: &[usize]) -> Option<Vec<usize>> {
        if component.len() == 1 {
            return Some(component.to_vec());
        }
        if !self.is_path(component) {
            return None;
        }
        let in_comp: std::collections::HashSet<usize> = component.iter().copied().collect();
        let start = *component
            .iter()
            .find(|&&v| self.adj[v].iter().filter(|n| in_comp.contains(n)).count() == 1)?;
        let mut order = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        while order.len() < component.len() {
            let next = *self.adj[cur].iter().find(|&&n| n != prev)?;
            order.push(next);
            prev = cur;
            cur = next;
        }
        Some(order)
    }
}

/// Per-anchor label choice: candidate index and rotation index.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchAssignment {
    pub choices: Vec<(usize, usize)>,
    pub total_energy: f64,
    pub converged: bool,
}

/// Places anchors along a curve at arc-length multiples of floor(l/4),
/// always including the final sample.
pub fn place_anchors(curve: &StructureCurve, curve_ref: usize, l: u32) -> Vec<AnchorPoint> {
    let spacing = ((l / 4) as f64).max(1.0);
    let length = curve.length();
    let mut positions = Vec::new();
    let mut s = 0.0;
    while s < length - 1e-9 {
        positions.push(s);
        s += spacing;
    }
    positions.push(length);
    positions
        .into_iter()
        .enumerate()
        .map(|(index, arc_pos)| {
            let p = curve.point_at(arc_pos);
            AnchorPoint {
                center: (p.0.round() as i64, p.1.round() as i64),
                curve_ref,
                index,
                arc_pos,
            }
        })
        .collect()
}

/// Collects candidate patches: full windows inside the known region whose
/// centers lie within `band` of the target boundary, on a stride of
/// floor(l/2). Oversized sets are subsampled with the run seed.
pub fn collect_candidates(
    img: &RasterImage,
    mask: &MaskRegion,
    params: &PropagationParams,
) -> Result<Vec<CandidatePatch>> {
    let l = params.patch_side;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = (l as i64 - 1) / 2;
    let stride = ((l / 2) as i64).max(1);

    // squared distance to the nearest target pixel
    let d2 = distance_squared_to_target(mask);
    let band2 = (params.band as f64) * (params.band as f64);

    // integral image of target bits for O(1) window emptiness tests
    let integral = target_integral(mask);
    let window_clear = |cx: i64, cy: i64| -> bool {
        let (x0, y0, x1, y1) = (cx - r, cy - r, cx + r, cy + r);
        rect_sum(&integral, x0, y0, x1, y1) == 0
    };

    let mut centers = Vec::new();
    let mut cy = r;
    while cy + r < h {
        let mut cx = r;
        while cx + r < w {
            if *d2.get(cx as usize, cy as usize) <= band2 && window_clear(cx, cy) {
                centers.push((cx, cy));
            }
            cx += stride;
        }
        cy += stride;
    }
    if centers.is_empty() {
        return Err(Error::NoCandidates);
    }
    if centers.len() > params.m_max {
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        centers.shuffle(&mut rng);
        centers.truncate(params.m_max);
        centers.sort_unstable();
    }

    Ok(centers
        .into_iter()
        .enumerate()
        .map(|(id, (cx, cy))| {
            let mut pixels = Vec::with_capacity((l * l) as usize);
            for dy in -r..=r {
                for dx in -r..=r {
                    pixels.push(img.rgb((cx + dx) as u32, (cy + dy) as u32));
                }
            }
            CandidatePatch {
                id,
                source_center: (cx, cy),
                pixels,
            }
        })
        .collect())
}

/// Exact squared Euclidean distance to the nearest target pixel.
pub(crate) fn distance_squared_to_target(mask: &MaskRegion) -> Grid<f64> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    const INF: f64 = 1e18;
    let mut field = Grid::new(w, h, INF);
    for y in 0..h {
        for x in 0..w {
            if mask.is_target(x as u32, y as u32) {
                field.set(x, y, 0.0);
            }
        }
    }
    // columns then rows (Felzenszwalb-Huttenlocher 1D transform)
    let mut col = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = *field.get(x, y);
        }
        let out = dt1d(&col);
        for y in 0..h {
            field.set(x, y, out[y]);
        }
    }
    let mut row = vec![0.0; w];
    for y in 0..h {
        for x in 0..w {
            row[x] = *field.get(x, y);
        }
        let out = dt1d(&row);
        for x in 0..w {
            field.set(x, y, out[x]);
        }
    }
    field
}

fn dt1d(f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        loop {
            let s = ((f[q] + (q * q) as f64) - (f[v[k]] + (v[k] * v[k]) as f64))
                / (2.0 * q as f64 - 2.0 * v[k] as f64);
            if s <= z[k] {
                if k == 0 {
                    // degenerate, replace
                    v[0] = q;
                    break;
                }
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut out = vec![0.0; n];
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        out[q] = d * d + f[v[k]];
    }
    out
}

fn target_integral(mask: &MaskRegion) -> Grid<u32> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut integral = Grid::new(w + 1, h + 1, 0u32);
    for y in 0..h {
        for x in 0..w {
            let v = mask.is_target(x as u32, y as u32) as u32;
            let sum = v + integral.get(x, y + 1) + integral.get(x + 1, y) - integral.get(x, y);
            integral.set(x + 1, y + 1, sum);
        }
    }
    integral
}

fn rect_sum(integral: &Grid<u32>, x0: i64, y0: i64, x1: i64, y1: i64) -> u32 {
    let w = integral.width() as i64 - 1;
    let h = integral.height() as i64 - 1;
    let x0 = x0.clamp(0, w) as usize;
    let y0 = y0.clamp(0, h) as usize;
    let x1 = (x1 + 1).clamp(0, w) as usize;
    let y1 = (y1 + 1).clamp(0, h) as usize;
    integral.get(x1, y1) + integral.get(x0, y0) - integral.get(x0, y1) - integral.get(x1, y0)
}

/// Frozen state for energy evaluation: normalized pixels, the known map at
/// stage start, and pre-rotated candidate blocks.
pub struct EnergyContext {
    width: usize,
    height: usize,
    /// RGB scaled to [0, 1], 3 values per pixel.
    norm: Vec<f64>,
    known: Grid<bool>,
    pub l: u32,
    pub rotations: Vec<Rotation>,
    pub kappa_free: f64,
    candidates: Vec<CandidatePatch>,
    /// Placed value blocks per (candidate, rotation): l*l*3 values in [0, 1].
    placed: Vec<Vec<f64>>,
}

impl EnergyContext {
    pub fn new(
        img: &RasterImage,
        mask: &MaskRegion,
        candidates: Vec<CandidatePatch>,
        l: u32,
        rotations: Vec<Rotation>,
    ) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut norm = Vec::with_capacity(w * h * 3);
        for v in img.data() {
            norm.push(*v as f64 / 255.0);
        }
        let known = Grid::from_fn(w, h, |x, y| !mask.is_target(x as u32, y as u32));
        let kappa_free = 10.0 * (l * l) as f64;
        let mut ctx = EnergyContext {
            width: w,
            height: h,
            norm,
            known,
            l,
            rotations,
            kappa_free,
            candidates,
            placed: Vec::new(),
        };
        ctx.placed = (0..ctx.candidates.len() * ctx.rotations.len())
            .into_par_iter()
            .map(|label| {
                let (c, r) = (label / ctx.rotations.len(), label % ctx.rotations.len());
                ctx.rotate_block(&ctx.candidates[c], ctx.rotations[r])
            })
            .collect();
        ctx
    }

    pub fn candidates(&self) -> &[CandidatePatch] {
        &self.candidates
    }

    pub fn labels(&self) -> usize {
        self.candidates.len() * self.rotations.len()
    }

    pub fn label_parts(&self, label: usize) -> (usize, usize) {
        (label / self.rotations.len(), label % self.rotations.len())
    }

    fn half(&self) -> i64 {
        (self.l as i64 - 1) / 2
    }

    #[inline]
    fn norm_at(&self, x: i64, y: i64) -> [f64; 3] {
        let i = (y as usize * self.width + x as usize) * 3;
        [self.norm[i], self.norm[i + 1], self.norm[i + 2]]
    }

    /// Samples a candidate under a rotation about its center. Rotations that
    /// are multiples of 90 degrees use exact index remapping; diagonal
    /// rotations sample bilinearly with coordinates clamped into the block.
    fn rotate_block(&self, cand: &CandidatePatch, rot: Rotation) -> Vec<f64> {
        let l = self.l as i64;
        let r = self.half();
        let mut out = Vec::with_capacity((l * l * 3) as usize);
        let theta = rot.angle();
        let (sin_t, cos_t) = theta.sin_cos();
        let block = |dx: i64, dy: i64| -> [u8; 3] {
            cand.pixels[((dy + r) * l + (dx + r)) as usize]
        };
        for dy in -r..=r {
            for dx in -r..=r {
                if rot.is_axis_aligned() {
                    // pre-image under the inverse rotation, exact on the grid
                    let (sx, sy) = match rot {
                        Rotation::R0 => (dx, dy),
                        Rotation::P90 => (dy, -dx),
                        Rotation::N90 => (-dy, dx),
                        Rotation::R180 => (-dx, -dy),
                        _ => unreachable!(),
                    };
                    let px = block(sx, sy);
                    out.extend(px.iter().map(|v| *v as f64 / 255.0));
                } else {
                    // inverse-rotate and clamp into the block
                    let fx = (cos_t * dx as f64 + sin_t * dy as f64)
                        .clamp(-(r as f64), r as f64 - 1e-6);
                    let fy = (-sin_t * dx as f64 + cos_t * dy as f64)
                        .clamp(-(r as f64), r as f64 - 1e-6);
                    let (x0, y0) = (fx.floor(), fy.floor());
                    let (tx, ty) = (fx - x0, fy - y0);
                    let (x0, y0) = (x0 as i64, y0 as i64);
                    let x1 = (x0 + 1).min(r);
                    let y1 = (y0 + 1).min(r);
                    for c in 0..3 {
                        let v00 = block(x0, y0)[c] as f64;
                        let v10 = block(x1, y0)[c] as f64;
                        let v01 = block(x0, y1)[c] as f64;
                        let v11 = block(x1, y1)[c] as f64;
                        let v = v00 * (1.0 - tx) * (1.0 - ty)
                            + v10 * tx * (1.0 - ty)
                            + v01 * (1.0 - tx) * ty
                            + v11 * tx * ty;
                        out.push(v / 255.0);
                    }
                }
            }
        }
        out
    }

    pub fn placed_block(&self, cand: usize, rot: usize) -> &[f64] {
        &self.placed[cand * self.rotations.len() + rot]
    }

    /// Known pixels of an anchor window (in-bounds and outside the target).
    pub fn anchor_known_count(&self, anchor: &AnchorPoint) -> usize {
        let r = self.half();
        let mut count = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (anchor.center.0 + dx, anchor.center.1 + dy);
                if self.known.in_bounds(x, y) && *self.known.get(x as usize, y as usize) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Mean SSD against the known context, divided by the overlap fraction.
    pub fn node_energy(&self, anchor: &AnchorPoint, cand: usize, rot: usize) -> f64 {
        let r = self.half();
        let l = self.l as i64;
        let block = self.placed_block(cand, rot);
        let mut ssd = 0.0;
        let mut lambda = 0usize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (anchor.center.0 + dx, anchor.center.1 + dy);
                if !self.known.in_bounds(x, y) || !*self.known.get(x as usize, y as usize) {
                    continue;
                }
                lambda += 1;
                let target = self.norm_at(x, y);
                let i = (((dy + r) * l + (dx + r)) * 3) as usize;
                for c in 0..3 {
                    let d = target[c] - block[i + c];
                    ssd += d * d;
                }
            }
        }
        if lambda == 0 {
            return self.kappa_free;
        }
        let l2 = (self.l * self.l) as f64;
        ssd * l2 / (lambda as f64 * lambda as f64)
    }

    pub fn node_energy_label(&self, anchor: &AnchorPoint, label: usize) -> f64 {
        let (c, r) = self.label_parts(label);
        self.node_energy(anchor, c, r)
    }

    /// Mean SSD between two placed patches over their window overlap, divided
    /// by the overlap fraction. Zero when the windows do not overlap.
    pub fn pairwise_energy(
        &self,
        a_i: &AnchorPoint,
        a_j: &AnchorPoint,
        choice_i: (usize, usize),
        choice_j: (usize, usize),
    ) -> f64 {
        let Some(ov) = self.overlap(a_i, a_j) else {
            return 0.0;
        };
        let block_i = self.placed_block(choice_i.0, choice_i.1);
        let block_j = self.placed_block(choice_j.0, choice_j.1);
        let l = self.l as i64;
        let r = self.half();
        let mut ssd = 0.0;
        for oy in ov.y0..=ov.y1 {
            for ox in ov.x0..=ov.x1 {
                let ii = ((((oy - a_i.center.1) + r) * l + ((ox - a_i.center.0) + r)) * 3) as usize;
                let ij = ((((oy - a_j.center.1) + r) * l + ((ox - a_j.center.0) + r)) * 3) as usize;
                for c in 0..3 {
                    let d = block_i[ii + c] - block_j[ij + c];
                    ssd += d * d;
                }
            }
        }
        let lambda = ((ov.x1 - ov.x0 + 1) * (ov.y1 - ov.y0 + 1)) as f64;
        let l2 = (self.l * self.l) as f64;
        ssd * l2 / (lambda * lambda)
    }

    fn overlap(&self, a_i: &AnchorPoint, a_j: &AnchorPoint) -> Option<OverlapRect> {
        let r = self.half();
        let x0 = (a_i.center.0 - r).max(a_j.center.0 - r);
        let x1 = (a_i.center.0 + r).min(a_j.center.0 + r);
        let y0 = (a_i.center.1 - r).max(a_j.center.1 - r);
        let y1 = (a_i.center.1 + r).min(a_j.center.1 + r);
        if x0 > x1 || y0 > y1 {
            None
        } else {
            Some(OverlapRect { x0, y0, x1, y1 })
        }
    }

    /// Node energies for all labels of one anchor.
    pub fn node_table(&self, anchor: &AnchorPoint) -> Vec<f64> {
        (0..self.labels())
            .into_par_iter()
            .map(|label| self.node_energy_label(anchor, label))
            .collect()
    }

    /// Full pairwise table between two anchors, or None when their windows do
    /// not overlap. Large label spaces go through a Gram-matrix formulation.
    pub fn edge_table(&self, a_i: &AnchorPoint, a_j: &AnchorPoint) -> Option<Array2<f64>> {
        let ov = self.overlap(a_i, a_j)?;
        let nl = self.labels();
        let l = self.l as i64;
        let r = self.half();
        let lambda = ((ov.x1 - ov.x0 + 1) * (ov.y1 - ov.y0 + 1)) as f64;
        let scale = (self.l * self.l) as f64 / (lambda * lambda);

        let gather_idx = |anchor: &AnchorPoint| -> Vec<usize> {
            let mut idx = Vec::with_capacity((lambda as usize) * 3);
            for oy in ov.y0..=ov.y1 {
                for ox in ov.x0..=ov.x1 {
                    let base =
                        ((((oy - anchor.center.1) + r) * l + ((ox - anchor.center.0) + r)) * 3)
                            as usize;
                    idx.extend([base, base + 1, base + 2]);
                }
            }
            idx
        };
        let idx_i = gather_idx(a_i);
        let idx_j = gather_idx(a_j);
        let d = idx_i.len();

        if nl <= 256 {
            // direct evaluation for small label spaces
            let mut table = Array2::zeros((nl, nl));
            for a in 0..nl {
                let (ca, ra) = self.label_parts(a);
                let block_a = self.placed_block(ca, ra);
                for b in 0..nl {
                    let (cb, rb) = self.label_parts(b);
                    let block_b = self.placed_block(cb, rb);
                    let mut ssd = 0.0;
                    for k in 0..d {
                        let diff = block_a[idx_i[k]] - block_b[idx_j[k]];
                        ssd += diff * diff;
                    }
                    table[(a, b)] = ssd * scale;
                }
            }
            return Some(table);
        }

        // ||A - B||^2 = |A|^2 + |B|^2 - 2 A.B via matrix product
        let gather = |idx: &[usize]| -> Array2<f64> {
            let mut m = Array2::zeros((nl, d));
            m.axis_iter_mut(ndarray::Axis(0))
                .into_par_iter()
                .enumerate()
                .for_each(|(label, mut row)| {
                    let (c, rot) = self.label_parts(label);
                    let block = self.placed_block(c, rot);
                    for (k, &i) in idx.iter().enumerate() {
                        row[k] = block[i];
                    }
                });
            m
        };
        let a = gather(&idx_i);
        let b = gather(&idx_j);
        let gram = a.dot(&b.t());
        let sq = |m: &Array2<f64>| -> Vec<f64> {
            m.axis_iter(ndarray::Axis(0))
                .map(|row| row.iter().map(|v| v * v).sum())
                .collect()
        };
        let (sqa, sqb) = (sq(&a), sq(&b));
        let mut table = Array2::zeros((nl, nl));
        table
            .axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for j in 0..nl {
                    let ssd = (sqa[i] + sqb[j] - 2.0 * gram[(i, j)]).max(0.0);
                    row[j] = ssd * scale;
                }
            });
        Some(table)
    }

    /// Independent re-evaluation of an assignment's total energy.
    pub fn assignment_energy(
        &self,
        anchors: &[AnchorPoint],
        edges: &[(usize, usize)],
        choices: &[(usize, usize)],
    ) -> f64 {
        let mut total = 0.0;
        for (anchor, &choice) in anchors.iter().zip(choices) {
            total += self.node_energy(anchor, choice.0, choice.1);
        }
        for &(i, j) in edges {
            total += self.pairwise_energy(&anchors[i], &anchors[j], choices[i], choices[j]);
        }
        total
    }
}

struct OverlapRect {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
}

/// Exact minimization over a path of anchors by DP over (candidate, rotation)
/// labels.
pub fn optimize_chain(ctx: &EnergyContext, anchors: &[AnchorPoint]) -> Result<PatchAssignment> {
    let nl = ctx.labels();
    if nl == 0 {
        return Err(Error::NoCandidates);
    }
    assert!(!anchors.is_empty());
    let n = anchors.len();
    let mut cost = ctx.node_table(&anchors[0]);
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(n.saturating_sub(1));
    for i in 1..n {
        let node = ctx.node_table(&anchors[i]);
        let table = ctx.edge_table(&anchors[i - 1], &anchors[i]);
        let mut next = vec![0.0f64; nl];
        let mut bp = vec![0u32; nl];
        match &table {
            Some(t) => {
                next.par_iter_mut()
                    .zip(bp.par_iter_mut())
                    .enumerate()
                    .for_each(|(b, (slot, bslot))| {
                        let mut best = f64::INFINITY;
                        let mut arg = 0u32;
                        for a in 0..nl {
                            let v = cost[a] + t[(a, b)];
                            if v < best {
                                best = v;
                                arg = a as u32;
                            }
                        }
                        *slot = best + node[b];
                        *bslot = arg;
                    });
            }
            None => {
                // disjoint windows: previous best carries over
                let (mut best, mut arg) = (f64::INFINITY, 0u32);
                for a in 0..nl {
                    if cost[a] < best {
                        best = cost[a];
                        arg = a as u32;
                    }
                }
                for b in 0..nl {
                    next[b] = best + node[b];
                    bp[b] = arg;
                }
            }
        }
        cost = next;
        back.push(bp);
    }
    let mut label = (0..nl)
        .min_by(|&a, &b| cost[a].total_cmp(&cost[b]))
        .unwrap();
    let mut labels = vec![label; n];
    for i in (1..n).rev() {
        label = back[i - 1][label] as usize;
        labels[i - 1] = label;
    }
    let choices: Vec<(usize, usize)> = labels.iter().map(|&l| ctx.label_parts(l)).collect();
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    let total_energy = ctx.assignment_energy(anchors, &edges, &choices);
    Ok(PatchAssignment {
        choices,
        total_energy,
        converged: true,
    })
}

/// Damped min-sum belief propagation over an anchor graph. Exact on trees;
/// on loopy graphs returns the best decoded assignment seen, flagged when the
/// messages did not converge.
pub fn optimize_graph(
    ctx: &EnergyContext,
    graph: &StructureGraph,
    anchors: &[AnchorPoint],
    delta: f64,
    max_iter: usize,
    damping: f64,
) -> Result<PatchAssignment> {
    let nl = ctx.labels();
    if nl == 0 {
        return Err(Error::NoCandidates);
    }
    let n = anchors.len();
    assert_eq!(graph.vertices, n);

    let nodes: Vec<Vec<f64>> = anchors.iter().map(|a| ctx.node_table(a)).collect();
    let tables: Vec<Option<Array2<f64>>> = graph
        .edges
        .iter()
        .map(|&(i, j)| ctx.edge_table(&anchors[i], &anchors[j]))
        .collect();

    // directed messages indexed by (edge, direction); direction 0 = i->j
    let mut messages = vec![vec![0.0f64; nl]; graph.edges.len() * 2];
    let edge_index: std::collections::HashMap<(usize, usize), usize> = graph
        .edges
        .iter()
        .enumerate()
        .map(|(k, &e)| (e, k))
        .collect();
    let incoming = |v: usize, exclude: usize, messages: &[Vec<f64>], buf: &mut [f64]| {
        buf.iter_mut().for_each(|x| *x = 0.0);
        for &u in graph.neighbors(v) {
            if u == exclude {
                continue;
            }
            let (key, dir) = if u < v { ((u, v), 0) } else { ((v, u), 1) };
            let k = edge_index[&key];
            let m = &messages[k * 2 + dir];
            for x in 0..buf.len() {
                buf[x] += m[x];
            }
        }
    };

    let decode = |messages: &[Vec<f64>]| -> Vec<(usize, usize)> {
        let mut choices = Vec::with_capacity(n);
        let mut acc = vec![0.0f64; nl];
        for v in 0..n {
            incoming(v, usize::MAX, messages, &mut acc);
            let mut best = f64::INFINITY;
            let mut arg = 0usize;
            for x in 0..nl {
                let b = nodes[v][x] + acc[x];
                if b < best {
                    best = b;
                    arg = x;
                }
            }
            choices.push(ctx.label_parts(arg));
        }
        choices
    };

    let mut best_choices = decode(&messages);
    let mut best_energy = ctx.assignment_energy(anchors, &graph.edges, &best_choices);
    let mut converged = false;

    let mut acc = vec![0.0f64; nl];
    for _ in 0..max_iter {
        let mut max_change = 0.0f64;
        let mut max_mag = 0.0f64;
        for (k, &(i, j)) in graph.edges.iter().enumerate() {
            for dir in 0..2 {
                let (from, to) = if dir == 0 { (i, j) } else { (j, i) };
                incoming(from, to, &messages, &mut acc);
                let mut fresh = vec![0.0f64; nl];
                match &tables[k] {
                    Some(t) => {
                        fresh.par_iter_mut().enumerate().for_each(|(b, slot)| {
                            let mut best = f64::INFINITY;
                            for a in 0..nl {
                                let e = if dir == 0 { t[(a, b)] } else { t[(b, a)] };
                                let v = nodes[from][a] + acc[a] + e;
                                if v < best {
                                    best = v;
                                }
                            }
                            *slot = best;
                        });
                    }
                    None => {
                        let mut best = f64::INFINITY;
                        for a in 0..nl {
                            let v = nodes[from][a] + acc[a];
                            if v < best {
                                best = v;
                            }
                        }
                        fresh.iter_mut().for_each(|x| *x = best);
                    }
                }
                // normalize to keep messages bounded
                let min = fresh.iter().cloned().fold(f64::INFINITY, f64::min);
                fresh.iter_mut().for_each(|x| *x -= min);
                let slot = &mut messages[k * 2 + dir];
                for x in 0..nl {
                    let updated = damping * slot[x] + (1.0 - damping) * fresh[x];
                    max_change = max_change.max((updated - slot[x]).abs());
                    max_mag = max_mag.max(updated.abs());
                    slot[x] = updated;
                }
            }
        }

        let choices = decode(&messages);
        let energy = ctx.assignment_energy(anchors, &graph.edges, &choices);
        if energy < best_energy {
            best_energy = energy;
            best_choices = choices;
        }
        if max_change < delta * max_mag.max(1.0) {
            converged = true;
            break;
        }
    }

    Ok(PatchAssignment {
        choices: best_choices,
        total_energy: best_energy,
        converged,
    })
}

/// Builds the anchor graph: consecutive anchors per curve, plus one link
/// between the closest anchors of every pair of geometrically crossing curves.
pub fn build_graph(
    anchors: &[AnchorPoint],
    curves: &[StructureCurve],
    l: u32,
) -> StructureGraph {
    let mut edges = Vec::new();
    for w in anchors.windows(2) {
        if w[0].curve_ref == w[1].curve_ref {
            edges.push((
                anchors.iter().position(|a| a == &w[0]).unwrap(),
                anchors.iter().position(|a| a == &w[1]).unwrap(),
            ));
        }
    }
    // rebuild consecutive edges by index to avoid position() ambiguity
    edges.clear();
    for i in 1..anchors.len() {
        if anchors[i].curve_ref == anchors[i - 1].curve_ref
            && anchors[i].index == anchors[i - 1].index + 1
        {
            edges.push((i - 1, i));
        }
    }

    // intersection links between crossing curves
    for ci in 0..curves.len() {
        for cj in (ci + 1)..curves.len() {
            let mut min_d = f64::INFINITY;
            for a in &curves[ci].samples {
                for b in &curves[cj].samples {
                    let d = (a.pos.0 - b.pos.0).hypot(a.pos.1 - b.pos.1);
                    min_d = min_d.min(d);
                }
            }
            if min_d > 1.5 {
                continue;
            }
            // closest anchor pair across the two curves
            let mut best: Option<(usize, usize, f64)> = None;
            for (ia, a) in anchors.iter().enumerate() {
                if a.curve_ref != ci {
                    continue;
                }
                for (ib, b) in anchors.iter().enumerate() {
                    if b.curve_ref != cj {
                        continue;
                    }
                    let d = ((a.center.0 - b.center.0) as f64)
                        .hypot((a.center.1 - b.center.1) as f64);
                    if best.map_or(true, |(_, _, bd)| d < bd) {
                        best = Some((ia, ib, d));
                    }
                }
            }
            if let Some((ia, ib, d)) = best {
                if d < l as f64 {
                    edges.push((ia, ib));
                }
            }
        }
    }
    StructureGraph::new(anchors.len(), edges)
}

/// Pastes the assigned patches in anchor order. Target pixels become known;
/// overlaps with earlier pastes blend with distance-to-center feathering.
/// Original known pixels are never modified.
pub fn paste_assignment(
    ctx: &EnergyContext,
    img: &mut RasterImage,
    mask: &mut MaskRegion,
    confidence: &mut ConfidenceMap,
    anchors: &[AnchorPoint],
    assignment: &PatchAssignment,
) {
    let r = (ctx.l as i64 - 1) / 2;
    let l = ctx.l as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    // pixels known before this stage are immutable
    let original_known: Vec<bool> = (0..(w * h))
        .map(|i| !mask.is_target((i % w) as u32, (i / w) as u32))
        .collect();

    for (anchor, &(cand, rot)) in anchors.iter().zip(&assignment.choices) {
        let block = ctx.placed_block(cand, rot);
        // mean confidence of currently known pixels under the window
        let mut conf_sum = 0.0;
        let mut conf_n = 0usize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (anchor.center.0 + dx, anchor.center.1 + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                if !mask.is_target(x as u32, y as u32) {
                    conf_sum += *confidence.get(x as usize, y as usize);
                    conf_n += 1;
                }
            }
        }
        let mean_conf = if conf_n > 0 {
            conf_sum / conf_n as f64
        } else {
            0.0
        };

        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (anchor.center.0 + dx, anchor.center.1 + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                if original_known[(y * w + x) as usize] {
                    continue;
                }
                let bi = (((dy + r) * l + (dx + r)) * 3) as usize;
                let value = [
                    (block[bi] * 255.0).round().clamp(0.0, 255.0) as u8,
                    (block[bi + 1] * 255.0).round().clamp(0.0, 255.0) as u8,
                    (block[bi + 2] * 255.0).round().clamp(0.0, 255.0) as u8,
                ];
                if mask.is_target(x as u32, y as u32) {
                    img.set_rgb(x as u32, y as u32, value);
                    confidence.set(x as usize, y as usize, mean_conf);
                    mask.clear(x as u32, y as u32);
                } else {
                    // blend with the earlier paste
                    let weight = (1.0 - dx.abs() as f64 / (r + 1) as f64)
                        * (1.0 - dy.abs() as f64 / (r + 1) as f64);
                    let old = img.rgb(x as u32, y as u32);
                    let mut mixed = [0u8; 3];
                    for c in 0..3 {
                        let v = (1.0 - weight) * old[c] as f64 + weight * value[c] as f64;
                        mixed[c] = v.round().clamp(0.0, 255.0) as u8;
                    }
                    img.set_rgb(x as u32, y as u32, mixed);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::{CurveSample, StructureCurve};
    use rand::{Rng, SeedableRng};

    fn straight_curve(from: (f64, f64), to: (f64, f64)) -> StructureCurve {
        let len = (to.0 - from.0).hypot(to.1 - from.1);
        let n = (len.ceil() as usize).max(1);
        let samples = (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                CurveSample {
                    pos: (from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1)),
                    tangent: ((to.0 - from.0) / len, (to.1 - from.1) / len),
                    curvature: 0.0,
                }
            })
            .collect();
        StructureCurve {
            samples,
            pair_ref: (0, 1),
            clothoid: true,
        }
    }

    #[test]
    fn anchors_on_length_40_curve() {
        let curve = straight_curve((0.0, 0.0), (40.0, 0.0));
        let anchors = place_anchors(&curve, 0, 16);
        assert_eq!(anchors.len(), 11, "spacing 4 over length 40");
        for w in anchors.windows(2) {
            let gap = w[1].arc_pos - w[0].arc_pos;
            assert!((gap - 4.0).abs() <= 0.5 || w[1].index == anchors.len() - 1);
        }
    }

    #[test]
    fn short_curve_gets_two_anchors() {
        let curve = straight_curve((0.0, 0.0), (1.0, 0.0));
        let anchors = place_anchors(&curve, 0, 9);
        assert_eq!(anchors.len(), 2);
        assert_eq!(anchors[0].arc_pos, 0.0);
        assert!((anchors[1].arc_pos - 1.0).abs() < 1e-9);
    }

    fn plain_image(w: u32, h: u32) -> RasterImage {
        RasterImage::from_rgb_fn(w, h, |x, y| {
            let v = ((x * 11 + y * 7) % 64 + 96) as u8;
            [v, v.wrapping_add(20), v.wrapping_add(40)]
        })
    }

    #[test]
    fn candidates_avoid_target_and_match_enumeration() {
        let img = plain_image(48, 48);
        let mask = MaskRegion::from_fn(48, 48, |x, y| {
            (18..30).contains(&x) && (18..30).contains(&y)
        })
        .unwrap();
        let params = PropagationParams {
            m_max: 10_000,
            band: 100,
            ..PropagationParams::for_patch_side(9)
        };
        let cands = collect_candidates(&img, &mask, &params).unwrap();

        // exhaustive oracle over the same stride grid
        let l = 9i64;
        let r = 4i64;
        let stride = 4i64;
        let mut expect = 0;
        let mut cy = r;
        while cy + r < 48 {
            let mut cx = r;
            while cx + r < 48 {
                let mut clear = true;
                'scan: for dy in -r..=r {
                    for dx in -r..=r {
                        if mask.is_target((cx + dx) as u32, (cy + dy) as u32) {
                            clear = false;
                            break 'scan;
                        }
                    }
                }
                if clear {
                    expect += 1;
                }
                cx += stride;
            }
            cy += stride;
        }
        assert_eq!(cands.len(), expect);
        let _ = l;

        for c in &cands {
            for dy in -r..=r {
                for dx in -r..=r {
                    assert!(!mask
                        .is_target((c.source_center.0 + dx) as u32, (c.source_center.1 + dy) as u32));
                }
            }
        }
    }

    #[test]
    fn candidates_error_when_no_window_fits() {
        // target everywhere except an 8-pixel frame; a 9x9 window cannot fit
        let img = plain_image(40, 40);
        let mask = MaskRegion::from_fn(40, 40, |x, y| {
            (8..32).contains(&x) && (8..32).contains(&y) || (x + y) % 7 != 3
        })
        .unwrap();
        // ensure at least the frame is mostly known but narrower than l
        let mask = MaskRegion::from_fn(40, 40, |x, y| {
            !(x < 8 || y < 8 || x >= 32 || y >= 32) || mask.is_target(x, y) && false
        })
        .unwrap();
        let params = PropagationParams::for_patch_side(9);
        assert!(matches!(
            collect_candidates(&img, &mask, &params),
            Err(Error::NoCandidates)
        ));
    }

    #[test]
    fn candidate_cap_is_deterministic() {
        let img = plain_image(64, 64);
        let mask = MaskRegion::from_fn(64, 64, |x, y| {
            (28..36).contains(&x) && (28..36).contains(&y)
        })
        .unwrap();
        let params = PropagationParams {
            m_max: 12,
            band: 200,
            ..PropagationParams::for_patch_side(9)
        };
        let a = collect_candidates(&img, &mask, &params).unwrap();
        let b = collect_candidates(&img, &mask, &params).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(
            a.iter().map(|c| c.source_center).collect::<Vec<_>>(),
            b.iter().map(|c| c.source_center).collect::<Vec<_>>()
        );
    }

    fn context_with_candidates(
        img: &RasterImage,
        mask: &MaskRegion,
        centers: &[(i64, i64)],
        l: u32,
        rotations: Vec<Rotation>,
    ) -> EnergyContext {
        let r = (l as i64 - 1) / 2;
        let candidates: Vec<CandidatePatch> = centers
            .iter()
            .enumerate()
            .map(|(id, &(cx, cy))| {
                let mut pixels = Vec::new();
                for dy in -r..=r {
                    for dx in -r..=r {
                        pixels.push(img.rgb((cx + dx) as u32, (cy + dy) as u32));
                    }
                }
                CandidatePatch {
                    id,
                    source_center: (cx, cy),
                    pixels,
                }
            })
            .collect();
        EnergyContext::new(img, mask, candidates, l, rotations)
    }

    #[test]
    fn node_energy_zero_for_identical_context() {
        let img = plain_image(32, 32);
        // single target pixel far from the probe keeps the window fully known
        let mask = MaskRegion::from_fn(32, 32, |x, y| x == 30 && y == 30).unwrap();
        let ctx = context_with_candidates(&img, &mask, &[(10, 10)], 5, vec![Rotation::R0]);
        let anchor = AnchorPoint {
            center: (10, 10),
            curve_ref: 0,
            index: 0,
            arc_pos: 0.0,
        };
        assert_eq!(ctx.node_energy(&anchor, 0, 0), 0.0);
    }

    #[test]
    fn node_energy_180_on_symmetric_candidate() {
        // candidate symmetric under 180-degree rotation
        let img = RasterImage::from_rgb_fn(21, 21, |x, y| {
            let (cx, cy) = (10.0, 10.0);
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            [(d * 25.0).min(255.0) as u8; 3]
        });
        let mask = MaskRegion::from_fn(21, 21, |x, y| x == 0 && y == 0).unwrap();
        let ctx = context_with_candidates(
            &img,
            &mask,
            &[(10, 10)],
            7,
            vec![Rotation::R0, Rotation::R180],
        );
        let anchor = AnchorPoint {
            center: (10, 10),
            curve_ref: 0,
            index: 0,
            arc_pos: 0.0,
        };
        let e0 = ctx.node_energy(&anchor, 0, 0);
        let e180 = ctx.node_energy(&anchor, 0, 1);
        assert!((e0 - e180).abs() < 1e-12);
    }

    #[test]
    fn node_energy_halved_overlap_doubles() {
        // two masks: fully-known window vs left-half-known window
        let img = plain_image(33, 33);
        let far = |x: u32, y: u32| x == 32 && y == 32;
        let mask_full = MaskRegion::from_fn(33, 33, far).unwrap();
        // right half hidden: sum spans only left columns
        let mask_half = MaskRegion::from_fn(33, 33, |x, y| {
            far(x, y) || (x >= 16 && (6..=26).contains(&y) && (6..=26).contains(&x))
        })
        .unwrap();
        // candidate whose block copies a uniformly offset version of the context
        let shifted = RasterImage::from_rgb_fn(33, 33, |x, y| {
            let [r, g, b] = img.rgb(x, y);
            [
                r.saturating_add(10),
                g.saturating_add(10),
                b.saturating_add(10),
            ]
        });
        // anchor window rows/cols 12..20 around (16,16) with l=9
        let anchor = AnchorPoint {
            center: (16, 16),
            curve_ref: 0,
            index: 0,
            arc_pos: 0.0,
        };
        let ctx_full =
            context_with_candidates(&shifted, &mask_full, &[(16, 16)], 9, vec![Rotation::R0]);
        let ctx_half =
            context_with_candidates(&shifted, &mask_half, &[(16, 16)], 9, vec![Rotation::R0]);
        // constant per-pixel difference keeps the mean SSD fixed; lambda halves
        let e_full = ctx_full.node_energy(&anchor, 0, 0);
        let lambda_full = ctx_full.anchor_known_count(&anchor);
        let e_half = ctx_half.node_energy(&anchor, 0, 0);
        let lambda_half = ctx_half.anchor_known_count(&anchor);
        assert_eq!(lambda_full, 81);
        assert_eq!(lambda_half, 36, "4 of 9 columns known");
        // energy = meanSSD / (lambda / l^2): ratio equals lambda_full / lambda_half
        let ratio = e_half / e_full;
        assert!(
            (ratio - lambda_full as f64 / lambda_half as f64).abs() < 1e-9,
            "ratio {ratio}"
        );
    }

    #[test]
    fn node_energy_kappa_free_when_no_overlap() {
        let img = plain_image(32, 32);
        let mask = MaskRegion::from_fn(32, 32, |x, y| {
            (8..24).contains(&x) && (8..24).contains(&y)
        })
        .unwrap();
        let ctx = context_with_candidates(&img, &mask, &[(3, 3)], 5, vec![Rotation::R0]);
        let anchor = AnchorPoint {
            center: (15, 15),
            curve_ref: 0,
            index: 0,
            arc_pos: 0.0,
        };
        assert_eq!(ctx.node_energy(&anchor, 0, 0), ctx.kappa_free);
        assert_eq!(ctx.kappa_free, 250.0, "10 l^2 for l = 5");
    }

    #[test]
    fn pairwise_energy_basics() {
        let img = plain_image(40, 40);
        let mask = MaskRegion::from_fn(40, 40, |x, y| x == 39 && y == 39).unwrap();
        let ctx = context_with_candidates(
            &img,
            &mask,
            &[(10, 10), (20, 20)],
            7,
            vec![Rotation::R0, Rotation::P90],
        );
        let a = AnchorPoint {
            center: (15, 15),
            curve_ref: 0,
            index: 0,
            arc_pos: 0.0,
        };
        let co = AnchorPoint {
            center: (15, 15),
            curve_ref: 0,
            index: 1,
            arc_pos: 0.0,
        };
        // identical choices on co-located anchors
        assert_eq!(ctx.pairwise_energy(&a, &co, (0, 0), (0, 0)), 0.0);
        // disjoint windows
        let far = AnchorPoint {
            center: (30, 30),
            curve_ref: 0,
            index: 2,
            arc_pos: 0.0,
        };
        assert_eq!(ctx.pairwise_energy(&a, &far, (0, 0), (1, 1)), 0.0);
        // symmetry
        let b = AnchorPoint {
            center: (18, 16),
            curve_ref: 0,
            index: 3,
            arc_pos: 0.0,
        };
        let e1 = ctx.pairwise_energy(&a, &b, (0, 1), (1, 0));
        let e2 = ctx.pairwise_energy(&b, &a, (1, 0), (0, 1));
        assert!((e1 - e2).abs() < 1e-12);
    }

    fn brute_force_best(
        ctx: &EnergyContext,
        anchors: &[AnchorPoint],
        edges: &[(usize, usize)],
    ) -> f64 {
        let nl = ctx.labels();
        let n = anchors.len();
        let mut best = f64::INFINITY;
        let total = nl.pow(n as u32);
        for code in 0..total {
            let mut c = code;
            let choices: Vec<(usize, usize)> = (0..n)
                .map(|_| {
                    let label = c % nl;
                    c /= nl;
                    ctx.label_parts(label)
                })
                .collect();
            let e = ctx.assignment_energy(anchors, edges, &choices);
            if e < best {
                best = e;
            }
        }
        best
    }

    fn random_test_instance(
        seed: u64,
        max_anchors: usize,
        max_cands: usize,
        rotations: Vec<Rotation>,
    ) -> (EnergyContext, Vec<AnchorPoint>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let img = RasterImage::from_rgb_fn(48, 48, |x, y| {
            let v = ((x * 13 + y * 31 + (x * y) % 11) % 256) as u8;
            [v, v.wrapping_mul(3), v.wrapping_add(77)]
        });
        let mask = MaskRegion::from_fn(48, 48, |x, y| {
            (20..28).contains(&x) && (20..32).contains(&y)
        })
        .unwrap();
        let n_cands = rng.gen_range(2..=max_cands);
        let centers: Vec<(i64, i64)> = (0..n_cands)
            .map(|_| (rng.gen_range(4..14) as i64, rng.gen_range(4..44) as i64))
            .collect();
        let ctx = context_with_candidates(&img, &mask, &centers, 5, rotations);
        let n_anchors = rng.gen_range(1..=max_anchors);
        let anchors: Vec<AnchorPoint> = (0..n_anchors)
            .map(|i| AnchorPoint {
                center: (20 + rng.gen_range(0..6) as i64, 18 + (i as i64) * 3),
                curve_ref: 0,
                index: i,
                arc_pos: i as f64 * 3.0,
            })
            .collect();
        (ctx, anchors)
    }

    #[test]
    fn chain_single_anchor_is_node_argmin() {
        let (ctx, _) = random_test_instance(1, 1, 4, vec![Rotation::R0, Rotation::P45]);
        let anchor = AnchorPoint {
            center: (22, 22),
            curve_ref: 0,
            index: 0,
            arc_pos: 0.0,
        };
        let got = optimize_chain(&ctx, &[anchor]).unwrap();
        let mut best = f64::INFINITY;
        for label in 0..ctx.labels() {
            best = best.min(ctx.node_energy_label(&anchor, label));
        }
        assert!((got.total_energy - best).abs() < 1e-9);
    }

    #[test]
    fn chain_matches_bruteforce_small() {
        for seed in 0..10u64 {
            let (ctx, anchors) =
                random_test_instance(seed, 3, 2, vec![Rotation::R0]);
            let assignment = optimize_chain(&ctx, &anchors).unwrap();
            let edges: Vec<(usize, usize)> = (1..anchors.len()).map(|i| (i - 1, i)).collect();
            let brute = brute_force_best(&ctx, &anchors, &edges);
            assert!(
                (assignment.total_energy - brute).abs() < 1e-9,
                "seed {seed}: dp {} vs brute {brute}",
                assignment.total_energy
            );
        }
    }

    #[test]
    fn bp_on_path_matches_chain() {
        for seed in 20..26u64 {
            let (ctx, anchors) =
                random_test_instance(seed, 4, 3, vec![Rotation::R0, Rotation::P90]);
            if anchors.len() < 2 {
                continue;
            }
            let edges: Vec<(usize, usize)> = (1..anchors.len()).map(|i| (i - 1, i)).collect();
            let graph = StructureGraph::new(anchors.len(), edges);
            let chain = optimize_chain(&ctx, &anchors).unwrap();
            let bp = optimize_graph(&ctx, &graph, &anchors, 1e-12, 400, 0.5).unwrap();
            assert!(
                (chain.total_energy - bp.total_energy).abs() < 1e-9,
                "seed {seed}: chain {} vs bp {}",
                chain.total_energy,
                bp.total_energy
            );
        }
    }

    #[test]
    fn bp_single_vertex() {
        let (ctx, _) = random_test_instance(3, 1, 3, vec![Rotation::R0]);
        let anchor = AnchorPoint {
            center: (23, 25),
            curve_ref: 0,
            index: 0,
            arc_pos: 0.0,
        };
        let graph = StructureGraph::new(1, vec![]);
        let got = optimize_graph(&ctx, &graph, &[anchor], 1e-9, 50, 0.5).unwrap();
        let mut best = f64::INFINITY;
        for label in 0..ctx.labels() {
            best = best.min(ctx.node_energy_label(&anchor, label));
        }
        assert!((got.total_energy - best).abs() < 1e-12);
    }

    #[test]
    fn bp_on_x_graph_matches_bruteforce() {
        let (ctx, _) = random_test_instance(5, 1, 2, vec![Rotation::R0, Rotation::N45]);
        // X: center anchor shared by two crossing chains
        let mk = |center: (i64, i64), index: usize| AnchorPoint {
            center,
            curve_ref: 0,
            index,
            arc_pos: 0.0,
        };
        let anchors = vec![
            mk((20, 20), 0),
            mk((26, 20), 1),
            mk((23, 23), 2), // center
            mk((20, 26), 3),
            mk((26, 26), 4),
        ];
        let graph = StructureGraph::new(5, vec![(0, 2), (1, 2), (2, 3), (2, 4)]);
        let bp = optimize_graph(&ctx, &graph, &anchors, 1e-12, 400, 0.5).unwrap();
        let brute = brute_force_best(&ctx, &anchors, &graph.edges);
        assert!(
            (bp.total_energy - brute).abs() < 1e-9,
            "bp {} vs brute {brute}",
            bp.total_energy
        );
    }

    #[test]
    fn paste_covers_targets_and_preserves_sources() {
        let img0 = plain_image(40, 40);
        let mask0 = MaskRegion::from_fn(40, 40, |x, y| {
            (16..24).contains(&x) && (18..22).contains(&y)
        })
        .unwrap();
        let curve = straight_curve((14.0, 20.0), (25.0, 20.0));
        let anchors = place_anchors(&curve, 0, 9);
        let params = PropagationParams {
            band: 40,
            ..PropagationParams::for_patch_side(9)
        };
        let cands = collect_candidates(&img0, &mask0, &params).unwrap();
        let ctx = EnergyContext::new(&img0, &mask0, cands, 9, ALL_ROTATIONS.to_vec());
        let assignment = optimize_chain(&ctx, &anchors).unwrap();

        let mut img = img0.clone();
        let mut mask = mask0.clone();
        let mut conf = Grid::from_fn(40, 40, |x, y| {
            if mask0.is_target(x as u32, y as u32) {
                0.0
            } else {
                1.0
            }
        });
        paste_assignment(&ctx, &mut img, &mut mask, &mut conf, &anchors, &assignment);

        // anchor centers are known after pasting
        for a in &anchors {
            assert!(!mask.is_target(a.center.0 as u32, a.center.1 as u32));
        }
        // pixels outside all windows unchanged; original known pixels unchanged
        for y in 0..40u32 {
            for x in 0..40u32 {
                let in_window = anchors.iter().any(|a| {
                    (x as i64 - a.center.0).abs() <= 4 && (y as i64 - a.center.1).abs() <= 4
                });
                if !mask0.is_target(x, y) {
                    assert_eq!(img.rgb(x, y), img0.rgb(x, y), "known pixel modified");
                } else if !in_window {
                    assert!(mask.is_target(x, y), "pixel outside windows was written");
                }
                if mask0.is_target(x, y) && !mask.is_target(x, y) {
                    let c = *conf.get(x as usize, y as usize);
                    assert!(c > 0.0 && c <= 1.0);
                }
            }
        }
    }
}
