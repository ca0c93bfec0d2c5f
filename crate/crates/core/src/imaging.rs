//! Pixel-raster primitives shared by every stage.
//!
//! Frames and masks are row-major, with `(x, y)` meaning (column, row).
//! Boxes use half-open pixel semantics: a box covers columns `x..x + w` and
//! rows `y..y + h`, so its area is exactly `w * h` pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 8-bit grayscale frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!("empty frame {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "{width}x{height} frame needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Copy of the pixels inside `bbox`, which must lie within the frame.
    pub fn crop(&self, bbox: PixelBox) -> GrayFrame {
        let (x0, y0) = (bbox.x as usize, bbox.y as usize);
        let (w, h) = (bbox.w as usize, bbox.h as usize);
        assert!(
            x0 + w <= self.width && y0 + h <= self.height,
            "crop {bbox:?} outside {}x{} frame",
            self.width,
            self.height
        );
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        GrayFrame {
            width: w,
            height: h,
            data,
        }
    }
}

/// 24-bit RGB frame, channels interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ColorFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrame(format!("empty frame {width}x{height}")));
        }
        if data.len() != 3 * width * height {
            return Err(Error::InvalidFrame(format!(
                "{width}x{height} RGB frame needs {} bytes, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        let data = rgb.iter().copied().cycle().take(3 * width * height).collect();
        Self {
            width,
            height,
            data,
        }
    }

    /// Replicates a grayscale frame into all three channels.
    pub fn from_gray(gray: &GrayFrame) -> Self {
        let data = gray.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self {
            width: gray.width,
            height: gray.height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Per-pixel foreground (`true`) / background raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Sets every pixel of `bbox` (clipped to the mask) to `value`.
    pub fn fill_box(&mut self, bbox: PixelBox, value: bool) {
        for (x, y) in bbox.clip(self.width, self.height).pixels() {
            self.set(x, y, value);
        }
    }

    /// Every pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

/// Axis-aligned box in pixel coordinates, half-open on the right and bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl PixelBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// Box spanning the inclusive corner pixels `(x0, y0)` and `(x1, y1)`.
    pub fn from_corners(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x0 <= x1 && y0 <= y1);
        Self::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    }

    /// Exclusive right edge.
    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    /// Exclusive bottom edge.
    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn center(&self) -> (u32, u32) {
        (self.x + self.w / 2, self.y + self.h / 2)
    }

    pub fn contains_point(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn contains_box(&self, other: &PixelBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn intersection(&self, other: &PixelBox) -> Option<PixelBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        (x0 < x1 && y0 < y1).then(|| PixelBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn intersection_area(&self, other: &PixelBox) -> u64 {
        self.intersection(other).map_or(0, |b| b.area())
    }

    /// Grows the box by `margin` on every side, clipped to a `width` x `height` frame.
    pub fn expand(&self, margin: u32, width: usize, height: usize) -> PixelBox {
        let x0 = self.x.saturating_sub(margin);
        let y0 = self.y.saturating_sub(margin);
        let x1 = (self.right() + margin).min(width as u32);
        let y1 = (self.bottom() + margin).min(height as u32);
        PixelBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    /// The part of the box inside a `width` x `height` frame; may be zero-sized.
    pub fn clip(&self, width: usize, height: usize) -> PixelBox {
        let x0 = self.x.min(width as u32);
        let y0 = self.y.min(height as u32);
        let x1 = self.right().min(width as u32);
        let y1 = self.bottom().min(height as u32);
        PixelBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn translate(&self, dx: u32, dy: u32) -> PixelBox {
        PixelBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    /// Row-major iterator over the pixels covered by the box.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> {
        let (x0, x1) = (self.x as usize, self.right() as usize);
        (self.y as usize..self.bottom() as usize).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
    }
}

/// Smallest box containing both inputs.
pub fn box_union(a: &PixelBox, b: &PixelBox) -> PixelBox {
    let x0 = a.x.min(b.x);
    let y0 = a.y.min(b.y);
    let x1 = a.right().max(b.right());
    let y1 = a.bottom().max(b.bottom());
    PixelBox::new(x0, y0, x1 - x0, y1 - y0)
}

/// Intersection over union of two boxes.
pub fn box_iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let inter = a.intersection_area(b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

/// A connected foreground region.
///
/// `pixels` are kept sorted in row-major order and `bbox` is always the
/// tight box around them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub id: usize,
    pixels: Vec<(u32, u32)>,
    bbox: PixelBox,
}

impl Blob {
    /// Builds a blob from arbitrary-order pixels. Panics on an empty set.
    pub fn from_pixels(id: usize, mut pixels: Vec<(u32, u32)>) -> Self {
        assert!(!pixels.is_empty(), "a blob needs at least one pixel");
        pixels.sort_unstable_by_key(|&(x, y)| (y, x));
        pixels.dedup();
        let bbox = tight_box(&pixels).expect("non-empty");
        Self { id, pixels, bbox }
    }

    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    pub fn bbox(&self) -> PixelBox {
        self.bbox
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.bbox.contains_point(x, y) && self.pixels.binary_search_by_key(&(y, x), |&(px, py)| (py, px)).is_ok()
    }

    /// Union of the two pixel sets under a new id.
    pub fn union(&self, other: &Blob, id: usize) -> Blob {
        let mut pixels = Vec::with_capacity(self.pixels.len() + other.pixels.len());
        pixels.extend_from_slice(&self.pixels);
        pixels.extend_from_slice(&other.pixels);
        Blob::from_pixels(id, pixels)
    }

    /// Pixels with at least one 4-neighbour outside the blob.
    pub fn boundary(&self) -> Vec<(u32, u32)> {
        let local = self.local_mask();
        let (bw, bh) = (self.bbox.w as i64, self.bbox.h as i64);
        let inside = |lx: i64, ly: i64| lx >= 0 && ly >= 0 && lx < bw && ly < bh && local[(ly * bw + lx) as usize];
        self.pixels
            .iter()
            .copied()
            .filter(|&(x, y)| {
                let lx = i64::from(x - self.bbox.x);
                let ly = i64::from(y - self.bbox.y);
                !(inside(lx - 1, ly) && inside(lx + 1, ly) && inside(lx, ly - 1) && inside(lx, ly + 1))
            })
            .collect()
    }

    /// Membership bitmap over the blob's bounding box.
    fn local_mask(&self) -> Vec<bool> {
        let bw = self.bbox.w as usize;
        let mut local = vec![false; bw * self.bbox.h as usize];
        for &(x, y) in &self.pixels {
            local[(y - self.bbox.y) as usize * bw + (x - self.bbox.x) as usize] = true;
        }
        local
    }
}

/// Tight box around a set of pixels, `None` if the set is empty.
pub fn tight_box(pixels: &[(u32, u32)]) -> Option<PixelBox> {
    let (&(fx, fy), rest) = pixels.split_first()?;
    let (mut x0, mut y0, mut x1, mut y1) = (fx, fy, fx, fy);
    for &(x, y) in rest {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    Some(PixelBox::from_corners(x0, y0, x1, y1))
}

/// 8-connected components with at least `min_area` pixels, ordered by their
/// first pixel in row-major scan order. Ids are assigned `0..n` in that order.
pub fn connected_components(mask: &BinaryMask, min_area: usize) -> Vec<Blob> {
    let (w, h) = mask.dims();
    let mut visited = vec![false; w * h];
    let mut blobs = Vec::new();
    let mut stack = Vec::new();

    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut region = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            region.push((x as u32, y as u32));
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if mask.bits[j] && !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if region.len() >= min_area.max(1) {
            blobs.push(Blob::from_pixels(blobs.len(), region));
        }
    }
    blobs
}

/// Minimum Euclidean distance between the pixels of two blobs.
///
/// Only boundary pixels can realise the minimum between disjoint sets, so
/// the search runs over boundary pairs once the sets are known not to share
/// a pixel.
pub fn blob_distance(a: &Blob, b: &Blob) -> f64 {
    if a.bbox.intersection(&b.bbox).is_some() {
        let (small, large) = if a.area() <= b.area() { (a, b) } else { (b, a) };
        if small.pixels.iter().any(|&(x, y)| large.contains(x, y)) {
            return 0.0;
        }
    }
    let ba = a.boundary();
    let bb = b.boundary();
    let mut best = i64::MAX;
    for &(ax, ay) in &ba {
        for &(bx, by) in &bb {
            let dx = i64::from(ax) - i64::from(bx);
            let dy = i64::from(ay) - i64::from(by);
            best = best.min(dx * dx + dy * dy);
        }
    }
    (best as f64).sqrt()
}

/// Lower bound on the distance between any pixel of `a` and any pixel of `b`.
pub fn box_gap(a: &PixelBox, b: &PixelBox) -> f64 {
    let gap = |lo_a: u32, hi_a: u32, lo_b: u32, hi_b: u32| -> f64 {
        // hi values are exclusive; pixel centres of the closest columns differ by this much
        if hi_a <= lo_b {
            f64::from(lo_b - hi_a + 1)
        } else if hi_b <= lo_a {
            f64::from(lo_a - hi_b + 1)
        } else {
            0.0
        }
    };
    let gx = gap(a.x, a.right(), b.x, b.right());
    let gy = gap(a.y, a.bottom(), b.y, b.bottom());
    (gx * gx + gy * gy).sqrt()
}

/// Morphological dilation by a square (Chebyshev) structuring element.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        let row = &mask.bits[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            horizontal[y * w + x] = row[lo..=hi].iter().any(|&b| b);
        }
    }
    let mut bits = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            bits[y * w + x] = (lo..=hi).any(|yy| horizontal[yy * w + x]);
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits,
    }
}

/// BT.601 luma, rounded to nearest.
pub fn to_gray(frame: &ColorFrame) -> GrayFrame {
    let data = frame
        .data
        .chunks_exact(3)
        .map(|p| {
            let luma = 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]);
            luma.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayFrame {
        width: frame.width,
        height: frame.height,
        data,
    }
}
