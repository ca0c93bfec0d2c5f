//! Background-suppressed edge analysis of blob windows.
//!
//! Canny edges of the current frame and of the background image are taken
//! over the same blob window with thresholds derived from the window
//! median. Their exclusive-or leaves the foreground edges, which are grouped
//! by Manhattan proximity; each group's box is an object candidate.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::imaging::{dilate, tight_box, BinaryMask, Blob, GrayFrame, PixelBox};
use crate::refine_merge::RefinementLedger;

/// Extra pixels around the edge window used for smoothing and gradients.
const CONTEXT_MARGIN: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeConfig {
    pub sigma: f64,
    /// Largest Manhattan distance between neighbouring members of a group.
    pub group_dist: usize,
    pub min_group_size: usize,
    /// Mask out background edges dilated by one pixel instead of a strict xor.
    pub tolerant: bool,
    /// Drop group boxes that lie inside another group's box (inner texture
    /// of the same object rather than a second object).
    pub drop_nested: bool,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0 / 3.0,
            group_dist: 2,
            min_group_size: 10,
            tolerant: false,
            drop_nested: true,
        }
    }
}

impl EdgeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::Config(format!("edges.sigma must lie in (0, 1), got {}", self.sigma)));
        }
        if self.group_dist == 0 {
            return Err(Error::Config("edges.group_dist must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl EdgeMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn crop(&self, bbox: PixelBox) -> EdgeMap {
        EdgeMap::from_fn(bbox.w as usize, bbox.h as usize, |x, y| self.get(x + bbox.x as usize, y + bbox.y as usize))
    }

    pub fn to_mask(&self) -> BinaryMask {
        BinaryMask::from_bits(self.width, self.height, self.bits.clone()).expect("same size")
    }
}

/// A set of edge pixels linked by short Manhattan hops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeGroup {
    pub pixels: Vec<(u32, u32)>,
    pub bbox: PixelBox,
}

/// Lower median of the window's pixel values.
pub fn window_median(window: &GrayFrame) -> u8 {
    let mut hist = [0usize; 256];
    for &v in window.data() {
        hist[v as usize] += 1;
    }
    let rank = (window.data().len() - 1) / 2;
    let mut seen = 0;
    for (v, &count) in hist.iter().enumerate() {
        seen += count;
        if seen > rank {
            return v as u8;
        }
    }
    255
}

/// `(t_low, t_high) = ((1 - sigma) * median, (1 + sigma) * median)`.
pub fn canny_thresholds(window: &GrayFrame, cfg: &EdgeConfig) -> (f64, f64) {
    let median = f64::from(window_median(window));
    ((1.0 - cfg.sigma) * median, (1.0 + cfg.sigma) * median)
}

fn gaussian_kernel() -> [f32; 5] {
    let sigma = 1.4f32;
    let mut k = [0.0f32; 5];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f32 - 2.0;
        *v = (-(d * d) / (2.0 * sigma * sigma)).exp();
    }
    let sum: f32 = k.iter().sum();
    k.map(|v| v / sum)
}

fn smooth(window: &GrayFrame) -> Vec<f32> {
    let (w, h) = window.dims();
    let k = gaussian_kernel();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (0..5)
                .map(|i| k[i] * f32::from(window.get(clamp(x as isize + i as isize - 2, w), y)))
                .sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (0..5).map(|i| k[i] * tmp[clamp(y as isize + i as isize - 2, h) * w + x]).sum();
        }
    }
    out
}

/// Sobel gradients of the smoothed window: `(gx, gy)` per pixel, replicate borders.
fn sobel(img: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let at = |x: isize, y: isize| img[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            gx[i] = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
        }
    }
    (gx, gy)
}

/// Gradient magnitude of the smoothed window (L2 of the Sobel responses).
pub fn gradient_magnitude(window: &GrayFrame) -> Vec<f32> {
    let (w, h) = window.dims();
    let (gx, gy) = sobel(&smooth(window), w, h);
    gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect()
}

/// Canny edge detector.
///
/// 5x5 Gaussian (sigma 1.4), Sobel gradients, non-maximum suppression over
/// four direction bins, then hysteresis: pixels at or above `t_high` seed
/// edges that grow through 8-connected pixels at or above `t_low`. The
/// outermost ring of the window never holds an edge.
pub fn canny(window: &GrayFrame, t_low: f64, t_high: f64) -> EdgeMap {
    let (w, h) = window.dims();
    let (gx, gy) = sobel(&smooth(window), w, h);
    let mag: Vec<f32> = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();

    let mut candidate = vec![false; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 || f64::from(m) < t_low {
                continue;
            }
            let mut angle = gy[i].atan2(gx[i]).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // `before` is the neighbour on the negative side of the gradient axis
            let (before, after) = if !(22.5..157.5).contains(&angle) {
                (mag[i - 1], mag[i + 1])
            } else if angle < 67.5 {
                (mag[i - w - 1], mag[i + w + 1])
            } else if angle < 112.5 {
                (mag[i - w], mag[i + w])
            } else {
                (mag[i - w + 1], mag[i + w - 1])
            };
            candidate[i] = m > before && m >= after;
        }
    }

    let mut edges = EdgeMap::new(w, h);
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if candidate[i] && f64::from(mag[i]) >= t_high {
            edges.bits[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
            for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                let j = ny * w + nx;
                if candidate[j] && !edges.bits[j] {
                    edges.bits[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    edges
}

/// Per-pixel exclusive-or of the frame edges and the background edges.
pub fn foreground_edges(e_i: &EdgeMap, e_a: &EdgeMap) -> Result<EdgeMap> {
    if e_i.dims() != e_a.dims() {
        return Err(Error::dims(e_i.dims(), e_a.dims()));
    }
    Ok(EdgeMap {
        width: e_i.width,
        height: e_i.height,
        bits: e_i.bits.iter().zip(&e_a.bits).map(|(&a, &b)| a ^ b).collect(),
    })
}

/// Frame edges with every pixel within one pixel of a background edge removed.
pub fn foreground_edges_tolerant(e_i: &EdgeMap, e_a: &EdgeMap) -> Result<EdgeMap> {
    if e_i.dims() != e_a.dims() {
        return Err(Error::dims(e_i.dims(), e_a.dims()));
    }
    let grown = dilate(&e_a.to_mask(), 1);
    Ok(EdgeMap {
        width: e_i.width,
        height: e_i.height,
        bits: e_i.bits.iter().zip(grown.bits()).map(|(&a, &b)| a && !b).collect(),
    })
}

/// Groups edge pixels by transitive Manhattan proximity (`<= cfg.group_dist`).
///
/// Groups are seeded in row-major order; groups smaller than
/// `cfg.min_group_size` are dropped as noise.
pub fn group_edges(e_f: &EdgeMap, cfg: &EdgeConfig) -> Vec<EdgeGroup> {
    let (w, h) = e_f.dims();
    let r = cfg.group_dist as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| (dx, dy) != (0, 0) && dx.abs() + dy.abs() <= r)
        .collect();
    let mut visited = vec![false; w * h];
    let mut groups = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !e_f.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            pixels.push((x as u32, y as u32));
            for &(dx, dy) in &offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if e_f.bits[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        if pixels.len() >= cfg.min_group_size {
            pixels.sort_unstable_by_key(|&(x, y)| (y, x));
            let bbox = tight_box(&pixels).expect("non-empty group");
            groups.push(EdgeGroup { pixels, bbox });
        }
    }
    groups
}

/// Edge maps of one blob window, kept for debugging dumps.
#[derive(Debug, Clone)]
pub struct EdgeMaps {
    /// Window in image coordinates that the maps cover.
    pub window: PixelBox,
    pub frame_edges: EdgeMap,
    pub background_edges: EdgeMap,
    pub foreground_edges: EdgeMap,
}

/// Edge maps over the blob window: the blob bbox grown by one pixel so that
/// edges sitting on the blob's outer boundary are kept.
pub fn blob_edge_maps(blob: &Blob, frame: &GrayFrame, background: &GrayFrame, cfg: &EdgeConfig) -> Result<EdgeMaps> {
    if frame.dims() != background.dims() {
        return Err(Error::dims(frame.dims(), background.dims()));
    }
    let (w, h) = frame.dims();
    let bbox = blob.bbox();
    let window = bbox.expand(1, w, h);
    let context = window.expand(CONTEXT_MARGIN, w, h);
    let inner = PixelBox::new(window.x - context.x, window.y - context.y, window.w, window.h);

    let (t_low, t_high) = canny_thresholds(&frame.crop(bbox), cfg);
    let e_i = canny(&frame.crop(context), t_low, t_high).crop(inner);
    let e_a = canny(&background.crop(context), t_low, t_high).crop(inner);
    let e_f = if cfg.tolerant {
        foreground_edges_tolerant(&e_i, &e_a)?
    } else {
        foreground_edges(&e_i, &e_a)?
    };
    Ok(EdgeMaps {
        window,
        frame_edges: e_i,
        background_edges: e_a,
        foreground_edges: e_f,
    })
}

/// Edge-group boxes of a blob, in image coordinates and inside the blob bbox.
///
/// With no foreground edge at all the blob is a background object: an empty
/// entry is recorded in `ledger.edge_boxes` and an empty list returned. When
/// edges exist but every group is below the noise floor nothing is recorded.
pub fn edge_pass(blob: &Blob, frame: &GrayFrame, background: &GrayFrame, cfg: &EdgeConfig, ledger: &mut RefinementLedger) -> Result<Vec<PixelBox>> {
    let maps = blob_edge_maps(blob, frame, background, cfg)?;
    Ok(edge_boxes_from_maps(blob, &maps, cfg, ledger))
}

/// Removes boxes contained in another box; of identical boxes the first stays.
pub fn drop_nested(boxes: Vec<PixelBox>) -> Vec<PixelBox> {
    boxes
        .iter()
        .enumerate()
        .filter(|&(i, b)| !boxes.iter().enumerate().any(|(j, o)| j != i && o.contains_box(b) && (o != b || j < i)))
        .map(|(_, b)| *b)
        .collect()
}

pub(crate) fn edge_boxes_from_maps(blob: &Blob, maps: &EdgeMaps, cfg: &EdgeConfig, ledger: &mut RefinementLedger) -> Vec<PixelBox> {
    if maps.foreground_edges.is_empty() {
        ledger.edge_boxes.insert(blob.id, Vec::new());
        return Vec::new();
    }
    let bbox = blob.bbox();
    let boxes: Vec<PixelBox> = group_edges(&maps.foreground_edges, cfg)
        .into_iter()
        .filter_map(|g| g.bbox.translate(maps.window.x, maps.window.y).intersection(&bbox))
        .collect();
    let boxes = if cfg.drop_nested { drop_nested(boxes) } else { boxes };
    if !boxes.is_empty() {
        ledger.edge_boxes.insert(blob.id, boxes.clone());
    }
    boxes
}
