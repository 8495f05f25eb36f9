//! Remaining-part filling: priority-ordered exemplar copy driven by a
//! confidence map and an isophote data term.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, N4, N8};
use crate::imagery::{lab_scaled, MaskRegion, RasterImage};

/// Per-pixel reliability in [0, 1]: 1 on the original known region, 0 on the
/// untouched target region, set once when a pixel is filled.
#[derive(Debug, Clone)]
pub struct ConfidenceMap {
    grid: Grid<f64>,
}

impl ConfidenceMap {
    pub fn init(mask: &MaskRegion) -> Self {
        ConfidenceMap {
            grid: Grid::from_fn(mask.width() as usize, mask.height() as usize, |x, y| {
                if mask.is_target(x as u32, y as u32) {
                    0.0
                } else {
                    1.0
                }
            }),
        }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        *self.grid.get(x as usize, y as usize)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        self.grid.set(x as usize, y as usize, v.min(1.0));
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.grid
    }
}

/// Fill-front element with its priority inputs.
#[derive(Debug, Clone, Copy)]
pub struct FrontPixel {
    pub pos: (u32, u32),
    pub normal: (f64, f64),
    pub isophote: (f64, f64),
    pub confidence: f64,
    pub data: f64,
    pub priority: f64,
}

/// Fill parameters: shared patch side and the exemplar search mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillParams {
    pub patch_side: u32,
    /// None: exhaustive full-image search. Some(b): centers within `b` of the
    /// initial target region.
    pub search_band: Option<u32>,
}

impl Default for FillParams {
    fn default() -> Self {
        FillParams {
            patch_side: 9,
            search_band: None,
        }
    }
}

/// Outcome metadata of a fill run.
#[derive(Debug, Clone, Default)]
pub struct FillOutcome {
    pub iterations: usize,
    /// Chosen front pixel per iteration.
    pub order: Vec<(u32, u32)>,
}

/// Target pixels with at least one known 4-neighbor.
pub fn front_positions(mask: &MaskRegion) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.is_target(x, y)
                && N4
                    .iter()
                    .any(|(dx, dy)| mask.is_known_i(x as i64 + dx, y as i64 + dy))
            {
                out.push((x, y));
            }
        }
    }
    out
}

/// Mean confidence over the known pixels of the window, normalized by the
/// full patch area.
pub fn confidence(cmap: &ConfidenceMap, mask: &MaskRegion, p: (u32, u32), l: u32) -> f64 {
    let r = (l as i64 - 1) / 2;
    let mut sum = 0.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (p.0 as i64 + dx, p.1 as i64 + dy);
            if mask.is_known_i(x, y) {
                sum += cmap.get(x as u32, y as u32);
            }
        }
    }
    sum / (l as f64 * l as f64)
}

/// Unit normal of the target boundary at a front pixel, from a Sobel response
/// on the binary mask. Degenerate responses fall back to the perpendicular of
/// the local front direction.
pub fn normal_at(mask: &MaskRegion, p: (u32, u32)) -> (f64, f64) {
    let ind = |x: i64, y: i64| -> f64 {
        // clamp to edge so borders do not register as boundary
        let cx = x.clamp(0, mask.width() as i64 - 1);
        let cy = y.clamp(0, mask.height() as i64 - 1);
        mask.is_target(cx as u32, cy as u32) as u8 as f64
    };
    let (x, y) = (p.0 as i64, p.1 as i64);
    let gx = (ind(x + 1, y - 1) + 2.0 * ind(x + 1, y) + ind(x + 1, y + 1))
        - (ind(x - 1, y - 1) + 2.0 * ind(x - 1, y) + ind(x - 1, y + 1));
    let gy = (ind(x - 1, y + 1) + 2.0 * ind(x, y + 1) + ind(x + 1, y + 1))
        - (ind(x - 1, y - 1) + 2.0 * ind(x, y - 1) + ind(x + 1, y - 1));
    let norm = (gx * gx + gy * gy).sqrt();
    if norm > 1e-9 {
        return (gx / norm, gy / norm);
    }
    // front-tracing fallback: perpendicular of the direction between the
    // neighboring front pixels
    let mut neighbors = Vec::new();
    for (dx, dy) in N8 {
        let (nx, ny) = (x + dx, y + dy);
        if mask.is_target_i(nx, ny)
            && N4
                .iter()
                .any(|(ddx, ddy)| mask.is_known_i(nx + ddx, ny + ddy))
        {
            neighbors.push((nx as f64, ny as f64));
        }
    }
    if neighbors.len() >= 2 {
        let a = neighbors[0];
        let b = neighbors[neighbors.len() - 1];
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let n = (dx * dx + dy * dy).sqrt();
        if n > 1e-9 {
            return (-dy / n, dx / n);
        }
    }
    (1.0, 0.0)
}

/// Intensity gradient with the largest magnitude over the known pixels of the
/// window, rotated ninety degrees. Gradients use central or one-sided
/// differences restricted to known pixels.
pub fn isophote_at(img: &RasterImage, mask: &MaskRegion, p: (u32, u32), l: u32) -> (f64, f64) {
    let r = (l as i64 - 1) / 2;
    let intensity = |x: i64, y: i64| -> Option<f64> {
        if mask.is_known_i(x, y) {
            Some(img.intensity(x as u32, y as u32))
        } else {
            None
        }
    };
    let diff = |minus: Option<f64>, center: f64, plus: Option<f64>| -> f64 {
        match (minus, plus) {
            (Some(m), Some(pl)) => (pl - m) / 2.0,
            (None, Some(pl)) => pl - center,
            (Some(m), None) => center - m,
            (None, None) => 0.0,
        }
    };
    let mut best = (0.0, 0.0);
    let mut best_mag = -1.0;
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (p.0 as i64 + dx, p.1 as i64 + dy);
            let Some(center) = intensity(x, y) else {
                continue;
            };
            let gx = diff(intensity(x - 1, y), center, intensity(x + 1, y));
            let gy = diff(intensity(x, y - 1), center, intensity(x, y + 1));
            let mag = gx * gx + gy * gy;
            if mag > best_mag {
                best_mag = mag;
                best = (gx, gy);
            }
        }
    }
    (-best.1, best.0)
}

/// Data term: projection of the isophote on the boundary normal over 255.
pub fn data_term(isophote: (f64, f64), normal: (f64, f64)) -> f64 {
    (isophote.0 * normal.0 + isophote.1 * normal.1).abs() / 255.0
}

/// Assembles the current front with confidences, data terms, and priorities.
pub fn front_pixels(
    img: &RasterImage,
    mask: &MaskRegion,
    cmap: &ConfidenceMap,
    l: u32,
) -> Vec<FrontPixel> {
    front_positions(mask)
        .into_iter()
        .map(|pos| {
            let normal = normal_at(mask, pos);
            let isophote = isophote_at(img, mask, pos, l);
            let c = confidence(cmap, mask, pos, l);
            let d = data_term(isophote, normal);
            FrontPixel {
                pos,
                normal,
                isophote,
                confidence: c,
                data: d,
                priority: c * d,
            }
        })
        .collect()
}

/// State snapshot for exemplar search: Lab planes and a validity map of
/// fully-known source windows, frozen at fill start.
struct SourceIndex {
    lab: Vec<[f64; 3]>,
    valid: Vec<(u32, u32)>,
}

impl SourceIndex {
    fn build(img: &RasterImage, mask: &MaskRegion, params: &FillParams) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut lab = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                lab.push(lab_scaled(img.rgb(x as u32, y as u32)));
            }
        }
        let l = params.patch_side;
        let r = (l as i64 - 1) / 2;
        // integral of target bits
        let mut integral = Grid::new(w + 1, h + 1, 0u32);
        for y in 0..h {
            for x in 0..w {
                let v = mask.is_target(x as u32, y as u32) as u32;
                let sum = v + integral.get(x, y + 1) + integral.get(x + 1, y) - integral.get(x, y);
                integral.set(x + 1, y + 1, sum);
            }
        }
        let window_clear = |cx: i64, cy: i64| -> bool {
            let (x0, y0) = ((cx - r) as usize, (cy - r) as usize);
            let (x1, y1) = ((cx + r + 1) as usize, (cy + r + 1) as usize);
            integral.get(x1, y1) + integral.get(x0, y0)
                - integral.get(x0, y1)
                - integral.get(x1, y0)
                == 0
        };
        let band2 = params
            .search_band
            .map(|b| (b as f64) * (b as f64));
        let d2 = band2.map(|_| crate::propagation::distance_squared_to_target(mask));
        let mut valid = Vec::new();
        for cy in r..(h as i64 - r) {
            for cx in r..(w as i64 - r) {
                if !window_clear(cx, cy) {
                    continue;
                }
                if let (Some(b2), Some(d2)) = (band2, &d2) {
                    if *d2.get(cx as usize, cy as usize) > b2 {
                        continue;
                    }
                }
                valid.push((cx as u32, cy as u32));
            }
        }
        SourceIndex { lab, valid }
    }
}

/// Best exemplar center: exhaustive argmin of the Lab SSD against the known
/// pixels of the target window, ties broken in scan order.
pub fn best_exemplar(
    img: &RasterImage,
    mask: &MaskRegion,
    p: (u32, u32),
    params: &FillParams,
) -> Result<(u32, u32)> {
    let index = SourceIndex::build(img, mask, params);
    best_exemplar_indexed(&index, img.width() as usize, mask, p, params.patch_side)
}

fn best_exemplar_indexed(
    index: &SourceIndex,
    width: usize,
    mask: &MaskRegion,
    p: (u32, u32),
    l: u32,
) -> Result<(u32, u32)> {
    if index.valid.is_empty() {
        return Err(Error::NoExemplar);
    }
    let r = (l as i64 - 1) / 2;
    // known offsets of the target window
    let mut offsets = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let (x, y) = (p.0 as i64 + dx, p.1 as i64 + dy);
            if mask.is_known_i(x, y) {
                offsets.push((dx, dy, index.lab[y as usize * width + x as usize]));
            }
        }
    }

    let best = index
        .valid
        .par_iter()
        .enumerate()
        .map(|(i, &(cx, cy))| {
            let mut ssd = 0.0f64;
            for &(dx, dy, target) in &offsets {
                let sx = (cx as i64 + dx) as usize;
                let sy = (cy as i64 + dy) as usize;
                let source = index.lab[sy * width + sx];
                for c in 0..3 {
                    let d = target[c] - source[c];
                    ssd += d * d;
                }
            }
            (ssd, i)
        })
        .reduce(
            || (f64::INFINITY, usize::MAX),
            |a, b| {
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    Ok(index.valid[best.1])
}

/// Priority-ordered exemplar fill of the remaining target pixels.
pub fn fill_remaining(
    img: &mut RasterImage,
    mask: &mut MaskRegion,
    cmap: &mut ConfidenceMap,
    params: &FillParams,
) -> Result<FillOutcome> {
    let l = params.patch_side;
    let r = (l as i64 - 1) / 2;
    let index = SourceIndex::build(img, mask, params);
    let width = img.width() as usize;
    let mut outcome = FillOutcome::default();
    let budget = mask.target_count() + 1;

    for _ in 0..budget {
        let front = front_pixels(img, mask, cmap, l);
        if front.is_empty() {
            break;
        }
        // max priority, ties in scan order (front is built in scan order)
        let chosen = front
            .iter()
            .max_by(|a, b| a.priority.partial_cmp(&b.priority).unwrap())
            .unwrap();
        // max_by returns the last maximum; rescan for the first
        let chosen = front
            .iter()
            .find(|f| f.priority == chosen.priority)
            .unwrap();
        let p = chosen.pos;
        let cp = chosen.confidence;

        let source = best_exemplar_indexed(&index, width, mask, p, l)?;
        let mut wrote = 0usize;
        for dy in -r..=r {
            for dx in -r..=r {
                let (tx, ty) = (p.0 as i64 + dx, p.1 as i64 + dy);
                if tx < 0 || ty < 0 || tx >= img.width() as i64 || ty >= img.height() as i64 {
                    continue;
                }
                if !mask.is_target(tx as u32, ty as u32) {
                    continue;
                }
                let (sx, sy) = (source.0 as i64 + dx, source.1 as i64 + dy);
                let value = img.rgb(sx as u32, sy as u32);
                img.set_rgb(tx as u32, ty as u32, value);
                cmap.set(tx as u32, ty as u32, cp);
                mask.clear(tx as u32, ty as u32);
                wrote += 1;
            }
        }
        if wrote == 0 {
            return Err(Error::FillStalled {
                remaining: mask.target_count(),
            });
        }
        outcome.iterations += 1;
        outcome.order.push(p);
    }

    if mask.target_count() > 0 {
        return Err(Error::FillStalled {
            remaining: mask.target_count(),
        });
    }
    Ok(outcome)
}
