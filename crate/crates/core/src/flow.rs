//! Dense optical flow and per-blob flow statistics.
//!
//! The built-in engine is exhaustive block matching: the current frame is
//! tiled into `patch x patch` blocks and each block takes the displacement
//! minimising the sum of absolute differences against the previous frame.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, Blob, GrayFrame};

/// Motion of one pixel between consecutive frames, in pixels per frame.
/// A vector `(dx, dy)` means the content at `(x, y)` came from `(x - dx, y - dy)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FlowVector {
    pub dx: f64,
    pub dy: f64,
}

impl FlowVector {
    pub const fn new(dx: f64, dy: f64) -> Self {
        Self { dx, dy }
    }

    pub fn magnitude(&self) -> f64 {
        self.dx.hypot(self.dy)
    }

    /// Direction in `(-pi, pi]`; the zero vector has angle 0.
    pub fn angle(&self) -> f64 {
        let a = self.dy.atan2(self.dx);
        if a <= -PI {
            PI
        } else {
            a
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    vectors: Vec<FlowVector>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            vectors: vec![FlowVector::default(); width * height],
        }
    }

    pub fn from_vectors(width: usize, height: usize, vectors: Vec<FlowVector>) -> Result<Self> {
        if vectors.len() != width * height {
            return Err(Error::InvalidFrame(format!(
                "{width}x{height} flow field needs {} vectors, got {}",
                width * height,
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.dx.is_finite() || !v.dy.is_finite()) {
            return Err(Error::InvalidFrame("flow vectors must be finite".into()));
        }
        Ok(Self {
            width,
            height,
            vectors,
        })
    }

    /// Constant field, handy for tests and synthetic checks.
    pub fn uniform(width: usize, height: usize, v: FlowVector) -> Self {
        Self {
            width,
            height,
            vectors: vec![v; width * height],
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

    pub fn vectors(&self) -> &[FlowVector] {
        &self.vectors
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> FlowVector {
        self.vectors[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: FlowVector) {
        self.vectors[y * self.width + x] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.vectors.iter().all(|v| v.dx == 0.0 && v.dy == 0.0)
    }

    /// Writes `x,y,dx,dy` rows for every pixel.
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = crate::io::csv_writer(path)?;
        crate::io::write_row(path, &mut w, ["x", "y", "dx", "dy"])?;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                crate::io::write_row(path, &mut w, [x.to_string(), y.to_string(), v.dx.to_string(), v.dy.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub patch: usize,
    pub search_radius: usize,
    /// Blocks whose best match leaves a mean absolute residual above this
    /// (grey levels per pixel) get zero flow; infinity keeps every match.
    pub max_residual: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            patch: 8,
            search_radius: 16,
            max_residual: 3.0,
        }
    }
}

/// Best displacement found for one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatch {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub dx: i64,
    pub dy: i64,
    /// Mean absolute difference per pixel at the chosen displacement.
    pub residual: f64,
}

/// A dense flow backend.
///
/// `region`, when given, marks the pixels whose flow is actually needed;
/// an engine may leave vectors outside it at zero.
pub trait FlowEngine: Send + Sync {
    fn compute(&self, prev: &GrayFrame, curr: &GrayFrame, region: Option<&BinaryMask>) -> Result<FlowField>;
}

/// Exhaustive SAD block matching.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatcher {
    config: FlowConfig,
}

impl BlockMatcher {
    pub fn new(config: FlowConfig) -> Result<Self> {
        if config.patch == 0 {
            return Err(Error::Config("flow.patch must be at least 1".into()));
        }
        if !(config.max_residual >= 0.0) {
            return Err(Error::Config(format!("flow.max_residual must be >= 0, got {}", config.max_residual)));
        }
        Ok(Self { config })
    }

    /// Candidate displacements sorted by preference: magnitude first, then row-major.
    fn candidates(&self) -> Vec<(i64, i64)> {
        let r = self.config.search_radius as i64;
        let mut c: Vec<(i64, i64)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
        c.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
        c
    }

    #[allow(clippy::too_many_arguments)]
    fn match_block(&self, prev: &GrayFrame, curr: &GrayFrame, bx: usize, by: usize, bw: usize, bh: usize, candidates: &[(i64, i64)]) -> (i64, i64, u64) {
        let (w, h) = (curr.width() as i64, curr.height() as i64);
        let cdata = curr.data();
        let pdata = prev.data();
        let stride = curr.width();
        let mut best = (0, 0);
        let mut best_cost = u64::MAX;
        for &(dx, dy) in candidates {
            // source block must lie entirely inside the previous frame
            let sx = bx as i64 - dx;
            let sy = by as i64 - dy;
            if sx < 0 || sy < 0 || sx + bw as i64 > w || sy + bh as i64 > h {
                continue;
            }
            let (sx, sy) = (sx as usize, sy as usize);
            let mut cost = 0u64;
            for row in 0..bh {
                let c = &cdata[(by + row) * stride + bx..(by + row) * stride + bx + bw];
                let p = &pdata[(sy + row) * stride + sx..(sy + row) * stride + sx + bw];
                cost += c.iter().zip(p).map(|(&a, &b)| u64::from(a.abs_diff(b))).sum::<u64>();
                if cost >= best_cost {
                    break;
                }
            }
            // strict improvement only: earlier candidates win ties
            if cost < best_cost {
                best_cost = cost;
                best = (dx, dy);
                if cost == 0 {
                    break;
                }
            }
        }
        (best.0, best.1, best_cost)
    }

    /// Matches every block that touches `region` (all blocks when `None`).
    pub fn block_matches(&self, prev: &GrayFrame, curr: &GrayFrame, region: Option<&BinaryMask>) -> Result<Vec<BlockMatch>> {
        if prev.dims() != curr.dims() {
            return Err(Error::dims(prev.dims(), curr.dims()));
        }
        if let Some(mask) = region {
            if mask.dims() != curr.dims() {
                return Err(Error::dims(curr.dims(), mask.dims()));
            }
        }
        let (w, h) = curr.dims();
        let p = self.config.patch;
        let candidates = self.candidates();
        let blocks: Vec<(usize, usize, usize, usize)> = (0..h.div_ceil(p))
            .flat_map(|j| (0..w.div_ceil(p)).map(move |i| (i * p, j * p)))
            .map(|(x, y)| (x, y, p.min(w - x), p.min(h - y)))
            .filter(|&(x, y, bw, bh)| region.is_none_or(|m| (y..y + bh).any(|yy| (x..x + bw).any(|xx| m.get(xx, yy)))))
            .collect();
        Ok(blocks
            .par_iter()
            .map(|&(x, y, bw, bh)| {
                let (dx, dy, cost) = self.match_block(prev, curr, x, y, bw, bh, &candidates);
                BlockMatch {
                    x,
                    y,
                    w: bw,
                    h: bh,
                    dx,
                    dy,
                    residual: cost as f64 / (bw * bh) as f64,
                }
            })
            .collect())
    }
}

impl FlowEngine for BlockMatcher {
    fn compute(&self, prev: &GrayFrame, curr: &GrayFrame, region: Option<&BinaryMask>) -> Result<FlowField> {
        let (w, h) = curr.dims();
        let mut field = FlowField::zeros(w, h);
        for m in self.block_matches(prev, curr, region)? {
            if m.residual > self.config.max_residual {
                continue;
            }
            let v = FlowVector::new(m.dx as f64, m.dy as f64);
            for y in m.y..m.y + m.h {
                for x in m.x..m.x + m.w {
                    field.set(x, y, v);
                }
            }
        }
        Ok(field)
    }
}

/// Dense block-matching flow over the whole frame.
pub fn compute_flow(prev: &GrayFrame, curr: &GrayFrame, config: &FlowConfig) -> Result<FlowField> {
    BlockMatcher::new(*config)?.compute(prev, curr, None)
}

/// Magnitude interval and centre direction of the flow inside a blob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobFlowStats {
    pub mean_mag: f64,
    pub std_mag: f64,
    pub dom_lo: f64,
    pub dom_hi: f64,
    pub center_angle: f64,
}

/// Mean and population standard deviation of the flow magnitude over the
/// blob's pixels, plus the flow direction at the blob's centre.
///
/// The centre is the bbox centre; when that pixel is not part of the blob,
/// the nearest blob pixel (Euclidean, first in row-major order on ties) is
/// used instead.
pub fn blob_flow_stats(field: &FlowField, blob: &Blob) -> BlobFlowStats {
    let n = blob.area() as f64;
    let mags: Vec<f64> = blob
        .pixels()
        .iter()
        .map(|&(x, y)| field.get(x as usize, y as usize).magnitude())
        .collect();
    let mean = mags.iter().sum::<f64>() / n;
    let var = mags.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / n;
    let std = var.max(0.0).sqrt();

    let (cx, cy) = nearest_center_pixel(blob);
    let center_angle = field.get(cx as usize, cy as usize).angle();
    BlobFlowStats {
        mean_mag: mean,
        std_mag: std,
        dom_lo: mean - std,
        dom_hi: mean + std,
        center_angle,
    }
}

fn nearest_center_pixel(blob: &Blob) -> (u32, u32) {
    let (cx, cy) = blob.bbox().center();
    if blob.contains(cx, cy) {
        return (cx, cy);
    }
    let dist = |&(x, y): &(u32, u32)| {
        let dx = i64::from(x) - i64::from(cx);
        let dy = i64::from(y) - i64::from(cy);
        dx * dx + dy * dy
    };
    // pixels are row-major, and min_by_key keeps the first minimum
    *blob.pixels().iter().min_by_key(|p| dist(p)).expect("blob is non-empty")
}

/// Circular distance between two angles, in `[0, pi]`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texture(x: i64, y: i64) -> u8 {
        // deterministic high-entropy pattern
        let h = (x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663)).wrapping_mul(2_654_435_761);
        ((h >> 7) & 0xff) as u8
    }

    #[test]
    fn identical_frames_give_zero_field() {
        let f = GrayFrame::from_fn(40, 30, |x, y| texture(x as i64, y as i64));
        let field = compute_flow(&f, &f, &FlowConfig::default()).unwrap();
        assert!(field.is_zero());
        let flat = GrayFrame::filled(17, 9, 80);
        assert!(compute_flow(&flat, &flat, &FlowConfig::default()).unwrap().is_zero());
    }

    fn square_scene(offset: (i64, i64)) -> GrayFrame {
        GrayFrame::from_fn(64, 64, |x, y| {
            let (lx, ly) = (x as i64 - 24 - offset.0, y as i64 - 24 - offset.1);
            if (0..16).contains(&lx) && (0..16).contains(&ly) {
                texture(lx, ly)
            } else {
                100
            }
        })
    }

    #[test]
    fn translated_square_recovered() {
        for shift in [(3, 0), (-2, -2)] {
            let prev = square_scene((0, 0));
            let curr = square_scene(shift);
            let field = compute_flow(&prev, &curr, &FlowConfig::default()).unwrap();
            // blocks fully inside the moved square
            for (bx, by) in [(24, 24), (32, 32), (32, 24), (24, 32)] {
                let inside = (bx as i64 + 7 - 24 - shift.0) < 16 && (bx as i64 - 24 - shift.0) >= 0;
                if inside {
                    let v = field.get(bx + 3, by + 3);
                    assert_eq!((v.dx, v.dy), (shift.0 as f64, shift.1 as f64), "block ({bx},{by})");
                }
            }
        }
    }

    #[test]
    fn full_texture_translation_exact() {
        let (sx, sy) = (5i64, -3i64);
        let prev = GrayFrame::from_fn(64, 48, |x, y| texture(x as i64, y as i64));
        let curr = GrayFrame::from_fn(64, 48, |x, y| texture(x as i64 - sx, y as i64 - sy));
        let field = compute_flow(&prev, &curr, &FlowConfig::default()).unwrap();
        // blocks whose source lies inside the previous frame
        for by in (16..32).step_by(8) {
            for bx in (16..48).step_by(8) {
                let v = field.get(bx, by);
                assert_eq!((v.dx, v.dy), (sx as f64, sy as f64));
            }
        }
    }

    #[test]
    fn region_restricts_work() {
        let prev = square_scene((0, 0));
        let curr = square_scene((3, 0));
        let mut region = BinaryMask::new(64, 64);
        region.set(30, 30, true);
        let matcher = BlockMatcher::new(FlowConfig::default()).unwrap();
        let field = matcher.compute(&prev, &curr, Some(&region)).unwrap();
        assert_eq!(field.get(30, 30), FlowVector::new(3.0, 0.0));
        assert_eq!(field.get(5, 5), FlowVector::default());
    }

    #[test]
    fn unexplained_change_gets_zero_flow() {
        // the right half of the frame is replaced by unrelated texture
        let prev = GrayFrame::from_fn(48, 32, |x, y| texture(x as i64, y as i64));
        let curr = GrayFrame::from_fn(48, 32, |x, y| if x < 24 { texture(x as i64, y as i64) } else { texture(y as i64 * 7 + 3, x as i64 * 5 + 1) });
        let matcher = BlockMatcher::new(FlowConfig::default()).unwrap();
        let matches = matcher.block_matches(&prev, &curr, None).unwrap();
        assert!(matches.iter().filter(|m| m.x < 24).all(|m| m.residual == 0.0));
        assert!(matches.iter().filter(|m| m.x >= 24).all(|m| m.residual > FlowConfig::default().max_residual));
        assert!(matcher.compute(&prev, &curr, None).unwrap().is_zero());
    }

    #[test]
    fn mismatched_frames_rejected() {
        let a = GrayFrame::filled(8, 8, 0);
        let b = GrayFrame::filled(9, 8, 0);
        assert!(compute_flow(&a, &b, &FlowConfig::default()).is_err());
        assert!(BlockMatcher::new(FlowConfig { patch: 0, search_radius: 2, max_residual: f64::INFINITY }).is_err());
    }

    fn block_blob(x0: u32, y0: u32, w: u32, h: u32) -> Blob {
        Blob::from_pixels(0, (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| (x, y))).collect())
    }

    #[test]
    fn stats_uniform_field() {
        let field = FlowField::uniform(10, 10, FlowVector::new(1.0, 0.0));
        let s = blob_flow_stats(&field, &block_blob(2, 2, 4, 4));
        assert_eq!((s.mean_mag, s.std_mag, s.dom_lo, s.dom_hi, s.center_angle), (1.0, 0.0, 1.0, 1.0, 0.0));

        let down = FlowField::uniform(10, 10, FlowVector::new(0.0, -2.0));
        let s = blob_flow_stats(&down, &block_blob(2, 2, 4, 4));
        assert_eq!(s.mean_mag, 2.0);
        assert!((s.center_angle + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn stats_two_halves() {
        let mut field = FlowField::zeros(8, 4);
        for y in 0..4 {
            for x in 0..8 {
                field.set(x, y, FlowVector::new(if x < 4 { 3.0 } else { 5.0 }, 0.0));
            }
        }
        let s = blob_flow_stats(&field, &block_blob(0, 0, 8, 4));
        assert_eq!((s.mean_mag, s.std_mag, s.dom_lo, s.dom_hi, s.center_angle), (4.0, 1.0, 3.0, 5.0, 0.0));
    }

    #[test]
    fn center_snaps_to_blob_pixel() {
        // ring-shaped blob: centre is a hole
        let pixels: Vec<(u32, u32)> = (0..5u32)
            .flat_map(|y| (0..5u32).map(move |x| (x, y)))
            .filter(|&(x, y)| x == 0 || y == 0 || x == 4 || y == 4)
            .collect();
        let blob = Blob::from_pixels(0, pixels);
        let mut field = FlowField::zeros(5, 5);
        // nearest ring pixel to (2,2) in row-major order is (2,0)
        field.set(2, 0, FlowVector::new(0.0, 1.0));
        let s = blob_flow_stats(&field, &blob);
        assert!((s.center_angle - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn angle_diff_examples() {
        assert_eq!(angle_diff(0.0, 0.0), 0.0);
        assert!((angle_diff(PI - 0.1, -PI + 0.1) - 0.2).abs() < 1e-12);
        assert!((angle_diff(0.0, PI / 2.0) - PI / 2.0).abs() < 1e-12);
        assert!((angle_diff(0.0, PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn angle_range() {
        assert_eq!(FlowVector::new(-1.0, 0.0).angle(), PI);
        assert_eq!(FlowVector::new(-1.0, -0.0).angle(), PI);
        assert_eq!(FlowVector::new(0.0, 0.0).angle(), 0.0);
    }

    proptest! {
        #[test]
        fn angle_diff_bounds(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let d = angle_diff(a, b);
            prop_assert!((0.0..=PI + 1e-12).contains(&d));
            prop_assert!((d - angle_diff(b, a)).abs() < 1e-9);
        }

        #[test]
        fn constant_field_has_point_interval(dx in -5i32..5, dy in -5i32..5, w in 1u32..6, h in 1u32..6) {
            let field = FlowField::uniform(8, 8, FlowVector::new(dx as f64, dy as f64));
            let s = blob_flow_stats(&field, &block_blob(1, 1, w, h));
            prop_assert!(s.std_mag.abs() < 1e-12);
            prop_assert!((s.dom_hi - s.dom_lo).abs() < 1e-12);
        }
    }
}
