//! Image and mask I/O, channel transforms, and region geometry.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, N4, N8};

/// 8-bit multi-channel raster, row-major. Loaded images are normalized to 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new_rgb(width: u32, height: u32) -> Self {
        assert!(width >= 1 && height >= 1);
        RasterImage {
            width,
            height,
            channels: 3,
            data: vec![0; (width * height * 3) as usize],
        }
    }

    pub fn from_rgb_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Self {
        let mut img = Self::new_rgb(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set_rgb(x, y, f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_rgb(&mut self, x: u32, y: u32, px: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// Mean intensity in [0, 255].
    #[inline]
    pub fn intensity(&self, x: u32, y: u32) -> f64 {
        let [r, g, b] = self.rgb(x, y);
        (r as f64 + g as f64 + b as f64) / 3.0
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let buf: image::RgbImage =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("raster buffer size");
        buf.save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| Error::Encode {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Decodes a PNG or JPEG file into a 3-channel image. Alpha is dropped,
/// grayscale is replicated across channels.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })?;
    if dynimg.width() == 0 || dynimg.height() == 0 {
        return Err(Error::ZeroDimension);
    }
    let rgb = dynimg.to_rgb8();
    Ok(RasterImage {
        width: rgb.width(),
        height: rgb.height(),
        channels: 3,
        data: rgb.into_raw(),
    })
}

/// Binary target region, true where a pixel belongs to the region to remove.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskRegion {
    bits: Grid<bool>,
}

impl MaskRegion {
    pub fn from_bits(bits: Grid<bool>) -> Result<Self> {
        let count = bits.data().iter().filter(|&&b| b).count();
        if count == 0 {
            return Err(Error::EmptyMask);
        }
        if count == bits.width() * bits.height() {
            return Err(Error::FullMask);
        }
        Ok(MaskRegion { bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Result<Self> {
        Self::from_bits(Grid::from_fn(width as usize, height as usize, |x, y| {
            f(x as u32, y as u32)
        }))
    }

    pub fn width(&self) -> u32 {
        self.bits.width() as u32
    }

    pub fn height(&self) -> u32 {
        self.bits.height() as u32
    }

    /// True when (x, y) lies in the target region.
    #[inline]
    pub fn is_target(&self, x: u32, y: u32) -> bool {
        *self.bits.get(x as usize, y as usize)
    }

    #[inline]
    pub fn is_target_i(&self, x: i64, y: i64) -> bool {
        self.bits.in_bounds(x, y) && *self.bits.get(x as usize, y as usize)
    }

    /// True when (x, y) is in bounds and known (source region).
    #[inline]
    pub fn is_known_i(&self, x: i64, y: i64) -> bool {
        self.bits.in_bounds(x, y) && !*self.bits.get(x as usize, y as usize)
    }

    pub fn clear(&mut self, x: u32, y: u32) {
        self.bits.set(x as usize, y as usize, false);
    }

    pub fn target_count(&self) -> usize {
        self.bits.data().iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &Grid<bool> {
        &self.bits
    }

    pub fn target_pixels(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                if self.is_target(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Loads an 8-bit grayscale mask; pixels above 127 mark the target region.
pub fn load_mask(path: &Path, expected: (u32, u32)) -> Result<MaskRegion> {
    let dynimg = image::ImageReader::open(path)
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|source| Error::Decode {
            path: path.to_path_buf(),
            source,
        })?;
    if (dynimg.width(), dynimg.height()) != expected {
        return Err(Error::DimensionMismatch {
            got_w: dynimg.width(),
            got_h: dynimg.height(),
            want_w: expected.0,
            want_h: expected.1,
        });
    }
    let gray = dynimg.to_luma8();
    MaskRegion::from_bits(Grid::from_fn(
        gray.width() as usize,
        gray.height() as usize,
        |x, y| gray.get_pixel(x as u32, y as u32).0[0] > 127,
    ))
}

/// Square patch window centered on a pixel, side odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchWindow {
    pub center: (i64, i64),
    pub side: u32,
}

impl PatchWindow {
    pub fn new(center: (i64, i64), side: u32) -> Self {
        assert!(side >= 3 && side % 2 == 1, "patch side must be odd and >= 3");
        PatchWindow { center, side }
    }

    pub fn half(&self) -> i64 {
        (self.side as i64 - 1) / 2
    }

    /// Offsets (dx, dy) covering the window.
    pub fn offsets(&self) -> impl Iterator<Item = (i64, i64)> {
        let h = self.half();
        (-h..=h).flat_map(move |dy| (-h..=h).map(move |dx| (dx, dy)))
    }
}

/// CIE-Lab conversion with D65 white point. Returns (L, a, b) with L in [0, 100].
pub fn srgb_to_lab(rgb: [u8; 3]) -> (f64, f64, f64) {
    fn linearize(c: u8) -> f64 {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    }
    let (r, g, b) = (linearize(rgb[0]), linearize(rgb[1]), linearize(rgb[2]));
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let (xn, yn, zn) = (0.95047, 1.0, 1.08883);
    fn f(t: f64) -> f64 {
        const EPS: f64 = 216.0 / 24389.0;
        const KAPPA: f64 = 24389.0 / 27.0;
        if t > EPS {
            t.cbrt()
        } else {
            (KAPPA * t + 16.0) / 116.0
        }
    }
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    let l = 116.0 * fy - 16.0;
    let a = 500.0 * (fx - fy);
    let b = 200.0 * (fy - fz);
    (l, a, b)
}

/// Lab scaled into [0, 1] per channel: L/100, (a+128)/255, (b+128)/255.
pub fn lab_scaled(rgb: [u8; 3]) -> [f64; 3] {
    let (l, a, b) = srgb_to_lab(rgb);
    [
        (l / 100.0).clamp(0.0, 1.0),
        ((a + 128.0) / 255.0).clamp(0.0, 1.0),
        ((b + 128.0) / 255.0).clamp(0.0, 1.0),
    ]
}

/// Brightness, color-a, color-b, and texture planes, each in [0, 1].
#[derive(Debug, Clone)]
pub struct ChannelStack {
    pub brightness: Grid<f64>,
    pub color_a: Grid<f64>,
    pub color_b: Grid<f64>,
    pub texture: Grid<f64>,
}

impl ChannelStack {
    pub fn width(&self) -> usize {
        self.brightness.width()
    }

    pub fn height(&self) -> usize {
        self.brightness.height()
    }

    pub fn planes(&self) -> [&Grid<f64>; 4] {
        [&self.brightness, &self.color_a, &self.color_b, &self.texture]
    }
}

/// Transforms an RGB image into brightness / color-a / color-b / texture planes.
/// Texture is the 5x5 local standard deviation of brightness, scaled so the
/// maximum possible deviation of a [0,1] signal maps to 1.
pub fn to_channels(img: &RasterImage) -> ChannelStack {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut brightness = Grid::new(w, h, 0.0);
    let mut color_a = Grid::new(w, h, 0.0);
    let mut color_b = Grid::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let [l, a, b] = lab_scaled(img.rgb(x as u32, y as u32));
            brightness.set(x, y, l);
            color_a.set(x, y, a);
            color_b.set(x, y, b);
        }
    }
    let mut texture = Grid::new(w, h, 0.0);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut sum = 0.0;
            let mut sq = 0.0;
            let mut n = 0.0;
            for dy in -2..=2 {
                for dx in -2..=2 {
                    if brightness.in_bounds(x + dx, y + dy) {
                        let v = *brightness.get((x + dx) as usize, (y + dy) as usize);
                        sum += v;
                        sq += v * v;
                        n += 1.0;
                    }
                }
            }
            let mean = sum / n;
            let var = (sq / n - mean * mean).max(0.0);
            // max std-dev of a [0,1] signal is 0.5
            texture.set(x as usize, y as usize, (var.sqrt() * 2.0).min(1.0));
        }
    }
    ChannelStack {
        brightness,
        color_a,
        color_b,
        texture,
    }
}

/// Boundary pixels of the target region: pixels of the region 4-adjacent to a
/// known pixel, one ring per 8-connected component, ordered by contour tracing
/// starting at the topmost-leftmost pixel.
pub fn boundary(mask: &MaskRegion) -> Vec<Vec<(u32, u32)>> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut component = Grid::new(w as usize, h as usize, -1i32);
    let mut starts = Vec::new();

    // label 8-connected components in scan order
    let mut next = 0;
    for y in 0..h {
        for x in 0..w {
            if mask.is_target(x as u32, y as u32) && *component.get(x as usize, y as usize) < 0 {
                starts.push((x, y));
                let mut stack = vec![(x, y)];
                component.set(x as usize, y as usize, next);
                while let Some((cx, cy)) = stack.pop() {
                    for (dx, dy) in N8 {
                        let (nx, ny) = (cx + dx, cy + dy);
                        if mask.is_target_i(nx, ny)
                            && *component.get(nx as usize, ny as usize) < 0
                        {
                            component.set(nx as usize, ny as usize, next);
                            stack.push((nx, ny));
                        }
                    }
                }
                next += 1;
            }
        }
    }

    let touches_known = |x: i64, y: i64| N4.iter().any(|(dx, dy)| mask.is_known_i(x + dx, y + dy));

    let mut rings = Vec::new();
    for (comp, &(sx, sy)) in starts.iter().enumerate() {
        let trace = moore_trace(&component, comp as i32, (sx, sy));
        let mut ring = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (x, y) in trace {
            if touches_known(x, y) && seen.insert((x, y)) {
                ring.push((x as u32, y as u32));
            }
        }
        if !ring.is_empty() {
            rings.push(ring);
        }
    }
    rings
}

/// Moore-neighbor contour trace over one labelled component. Visits the outer
/// contour starting at the topmost-leftmost pixel, walking down the left flank
/// first; repeated pixels are emitted as encountered.
fn moore_trace(component: &Grid<i32>, label: i32, start: (i64, i64)) -> Vec<(i64, i64)> {
    let inside = |x: i64, y: i64| {
        component.in_bounds(x, y) && *component.get(x as usize, y as usize) == label
    };
    // neighbor ring in visual counter-clockwise order starting north
    const RING: [(i64, i64); 8] = [
        (0, -1),
        (-1, -1),
        (-1, 0),
        (-1, 1),
        (0, 1),
        (1, 1),
        (1, 0),
        (1, -1),
    ];
    let mut out = vec![start];
    // backtrack begins at the north neighbor, which is outside by construction
    let mut current = start;
    let mut back_dir = 0usize;
    let first_state;
    // find the first move
    let mut dir = None;
    for k in 1..=8 {
        let d = (back_dir + k) % 8;
        let (dx, dy) = RING[d];
        if inside(current.0 + dx, current.1 + dy) {
            dir = Some(d);
            break;
        }
    }
    let Some(mut d) = dir else {
        return out; // isolated pixel
    };
    first_state = (current, d);
    loop {
        let (dx, dy) = RING[d];
        current = (current.0 + dx, current.1 + dy);
        out.push(current);
        // backtrack direction points at the previous pixel
        back_dir = (d + 4) % 8;
        let mut next = None;
        for k in 1..=8 {
            let cand = (back_dir + k) % 8;
            let (cx, cy) = RING[cand];
            if inside(current.0 + cx, current.1 + cy) {
                next = Some(cand);
                break;
            }
        }
        d = next.expect("component pixel has at least its predecessor");
        if (current, d) == first_state {
            out.pop(); // closing pixel repeats the start
            break;
        }
        if out.len() > 8 * component.width() * component.height() {
            break; // defensive bound, unreachable for well-formed components
        }
    }
    out
}
