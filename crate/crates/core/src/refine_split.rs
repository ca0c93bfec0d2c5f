//! Splitting of blobs that hold two objects moving in opposite directions.
//!
//! The blob's flow vectors are clustered into three groups (background plus
//! two objects). A pair of cluster boxes that barely overlap and whose mean
//! flows point in opposite directions replaces the blob's box.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{angle_diff, FlowField, FlowVector};
use crate::imaging::{tight_box, Blob, PixelBox};
use crate::refine_merge::{MergeConfig, RefinementLedger};

pub const CLUSTER_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub k: usize,
    pub t_int: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Clusters whose mean flow is shorter than this (px/frame) count as
    /// background and never form a split pair.
    pub min_motion: f64,
    /// Smallest share of the blob's pixels a cluster needs to form a pair.
    pub min_support: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            k: CLUSTER_COUNT,
            t_int: 0.40,
            seed: 0,
            max_iter: 100,
            min_motion: 0.5,
            min_support: 0.25,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k != CLUSTER_COUNT {
            return Err(Error::Config(format!("split k is fixed at {CLUSTER_COUNT}, got {}", self.k)));
        }
        if !(0.0..=1.0).contains(&self.t_int) {
            return Err(Error::Config(format!("split.t_int must lie in [0, 1], got {}", self.t_int)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("split.max_iter must be at least 1".into()));
        }
        if !(self.min_motion >= 0.0) {
            return Err(Error::Config(format!("split.min_motion must be >= 0, got {}", self.min_motion)));
        }
        if !(0.0..=1.0).contains(&self.min_support) {
            return Err(Error::Config(format!("split.min_support must lie in [0, 1], got {}", self.min_support)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowCluster {
    /// Indices into the clustered vector list.
    pub members: Vec<usize>,
    pub centroid: FlowVector,
}

/// Returned when the input has fewer than three distinct vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Degenerate;

fn dist2(a: &FlowVector, b: &FlowVector) -> f64 {
    let dx = a.dx - b.dx;
    let dy = a.dy - b.dy;
    dx * dx + dy * dy
}

fn nearest(v: &FlowVector, centroids: &[FlowVector]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = dist2(v, centroid);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn distinct_count_at_least(vectors: &[FlowVector], n: usize) -> bool {
    let mut seen: Vec<(u64, u64)> = Vec::with_capacity(n);
    for v in vectors {
        let key = (v.dx.to_bits(), v.dy.to_bits());
        if !seen.contains(&key) {
            seen.push(key);
            if seen.len() >= n {
                return true;
            }
        }
    }
    false
}

/// Lloyd k-means (k = 3) with seeded farthest-point initialisation.
///
/// The first centre is a point drawn with `cfg.seed`; each next centre is the
/// point farthest from the centres chosen so far (lowest index on ties).
/// Points go to the nearest centroid, lowest cluster index on ties. A cluster
/// that empties is reseeded with the point farthest from its own centroid.
pub fn kmeans_flow(vectors: &[FlowVector], cfg: &SplitConfig) -> std::result::Result<[FlowCluster; 3], Degenerate> {
    if !distinct_count_at_least(vectors, CLUSTER_COUNT) {
        return Err(Degenerate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centroids = vec![vectors[rng.random_range(0..vectors.len())]];
    while centroids.len() < CLUSTER_COUNT {
        let mut far = 0;
        let mut far_d = -1.0;
        for (i, v) in vectors.iter().enumerate() {
            let d = centroids.iter().map(|c| dist2(v, c)).fold(f64::INFINITY, f64::min);
            if d > far_d {
                far_d = d;
                far = i;
            }
        }
        centroids.push(vectors[far]);
    }

    let mut labels: Vec<usize> = vectors.iter().map(|v| nearest(v, &centroids)).collect();
    for _ in 0..cfg.max_iter {
        let mut sums = [(0.0, 0.0, 0usize); CLUSTER_COUNT];
        for (v, &l) in vectors.iter().zip(&labels) {
            sums[l].0 += v.dx;
            sums[l].1 += v.dy;
            sums[l].2 += 1;
        }
        for (c, &(sx, sy, n)) in sums.iter().enumerate() {
            if n > 0 {
                centroids[c] = FlowVector::new(sx / n as f64, sy / n as f64);
            }
        }
        for c in 0..CLUSTER_COUNT {
            if labels.contains(&c) {
                continue;
            }
            let mut far = 0;
            let mut far_d = -1.0;
            for (i, (v, &l)) in vectors.iter().zip(&labels).enumerate() {
                let d = dist2(v, &centroids[l]);
                if d > far_d {
                    far_d = d;
                    far = i;
                }
            }
            labels[far] = c;
            centroids[c] = vectors[far];
        }
        let next: Vec<usize> = vectors.iter().map(|v| nearest(v, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }

    let clusters: Vec<FlowCluster> = (0..CLUSTER_COUNT)
        .map(|c| {
            let members: Vec<usize> = labels.iter().enumerate().filter(|&(_, &l)| l == c).map(|(i, _)| i).collect();
            let n = members.len().max(1) as f64;
            let (sx, sy) = members.iter().fold((0.0, 0.0), |(sx, sy), &i| (sx + vectors[i].dx, sy + vectors[i].dy));
            let centroid = if members.is_empty() { centroids[c] } else { FlowVector::new(sx / n, sy / n) };
            FlowCluster { members, centroid }
        })
        .collect();
    Ok(clusters.try_into().expect("three clusters"))
}

/// Intersection of two boxes over the smaller box's area.
pub fn ratio_int(a: &PixelBox, b: &PixelBox) -> f64 {
    let min_area = a.area().min(b.area());
    if min_area == 0 {
        return 0.0;
    }
    a.intersection_area(b) as f64 / min_area as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitOutcome {
    /// No opposite-motion pair: the RoI keeps its own box.
    Kept(PixelBox),
    Split([PixelBox; 2]),
}

impl SplitOutcome {
    pub fn boxes(&self) -> Vec<PixelBox> {
        match self {
            SplitOutcome::Kept(b) => vec![*b],
            SplitOutcome::Split(pair) => pair.to_vec(),
        }
    }
}

/// Re-clustering rounds after dropping minor clusters as outliers.
pub const OUTLIER_ROUNDS: usize = 2;

/// Tries to split `blob` into two boxes of objects moving in opposite directions.
///
/// A cluster pair qualifies when its boxes overlap less than `t_int` of the
/// smaller box and its mean flows fail C3. Clusters holding less than
/// `min_support` of the blob's pixels are mostly mismatched blocks; their
/// members are dropped and the rest re-clustered (at most [`OUTLIER_ROUNDS`]
/// times), since an outlier otherwise claims a centre and forces two real
/// groups together. Near-static clusters never pair: a zero mean flow has no
/// direction. The qualifying pair with the lowest overlap ratio wins (larger
/// combined area on ties) and is recorded in `ledger.split_flow`.
pub fn split_pass(blob: &Blob, field: &FlowField, cfg: &SplitConfig, merge_cfg: &MergeConfig, ledger: &mut RefinementLedger) -> SplitOutcome {
    let all: Vec<FlowVector> = blob.pixels().iter().map(|&(x, y)| field.get(x as usize, y as usize)).collect();
    let min_members = cfg.min_support * all.len() as f64;
    let mut active: Vec<usize> = (0..all.len()).collect();
    let mut round = 0;
    let mut previous = None;
    let clusters = loop {
        let vectors: Vec<FlowVector> = active.iter().map(|&i| all[i]).collect();
        let Ok(mut clusters) = kmeans_flow(&vectors, cfg) else {
            // too few distinct vectors left: the previous round already
            // separates them
            match previous {
                Some(p) => break p,
                None => return SplitOutcome::Kept(blob.bbox()),
            }
        };
        for c in &mut clusters {
            for m in &mut c.members {
                *m = active[*m];
            }
        }
        let minor = |c: &FlowCluster| (c.members.len() as f64) < min_members;
        if round == OUTLIER_ROUNDS || !clusters.iter().any(minor) {
            break clusters;
        }
        let dropped: BTreeSet<usize> = clusters.iter().filter(|c| minor(c)).flat_map(|c| c.members.iter().copied()).collect();
        active.retain(|i| !dropped.contains(i));
        previous = Some(clusters);
        round += 1;
    };
    let boxes: Vec<Option<PixelBox>> = clusters
        .iter()
        .map(|c| {
            let pts: Vec<(u32, u32)> = c.members.iter().map(|&i| blob.pixels()[i]).collect();
            tight_box(&pts)
        })
        .collect();
    let eligible = |c: &FlowCluster| c.centroid.magnitude() >= cfg.min_motion && c.members.len() as f64 >= min_members;

    let mut best: Option<(f64, u64, [PixelBox; 2])> = None;
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let (Some(ri), Some(rj)) = (boxes[i], boxes[j]) else {
            continue;
        };
        if !eligible(&clusters[i]) || !eligible(&clusters[j]) {
            continue;
        }
        let ratio = ratio_int(&ri, &rj);
        if ratio >= cfg.t_int {
            continue;
        }
        let opposite = angle_diff(clusters[i].centroid.angle(), clusters[j].centroid.angle()) > merge_cfg.a_t;
        if !opposite {
            continue;
        }
        let combined = ri.area() + rj.area();
        let better = match &best {
            None => true,
            Some((r, a, _)) => ratio < *r || (ratio == *r && combined > *a),
        };
        if better {
            best = Some((ratio, combined, [ri, rj]));
        }
    }

    match best {
        Some((ratio, _, pair)) => {
            log::debug!("split blob {} (ratio_int {ratio:.3})", blob.id);
            ledger.split_flow.insert(blob.id, pair);
            SplitOutcome::Split(pair)
        }
        None => SplitOutcome::Kept(blob.bbox()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(dx: f64, dy: f64) -> FlowVector {
        FlowVector::new(dx, dy)
    }

    #[test]
    fn three_groups_recovered() {
        let mut vectors = Vec::new();
        for i in 0..30 {
            vectors.push(match i % 3 {
                0 => v(5.0, 0.0),
                1 => v(-5.0, 0.0),
                _ => v(0.0, 0.0),
            });
        }
        let clusters = kmeans_flow(&vectors, &SplitConfig::default()).unwrap();
        let mut groups: Vec<Vec<usize>> = clusters.iter().map(|c| c.members.clone()).collect();
        groups.sort();
        let expected: Vec<Vec<usize>> = (0..3).map(|r| (0..30).filter(|i| i % 3 == r).collect()).collect();
        let mut expected_sorted = expected.clone();
        expected_sorted.sort();
        assert_eq!(groups, expected_sorted);
    }

    #[test]
    fn identical_vectors_degenerate() {
        assert_eq!(kmeans_flow(&[v(1.0, 1.0); 10], &SplitConfig::default()), Err(Degenerate));
        assert_eq!(kmeans_flow(&[v(1.0, 1.0), v(2.0, 2.0)], &SplitConfig::default()), Err(Degenerate));
    }

    #[test]
    fn noise_point_joins_nearest_group() {
        let mut vectors = vec![v(4.0, 0.0); 10];
        vectors.extend(vec![v(-4.0, 0.0); 10]);
        vectors.extend(vec![v(0.0, 0.0); 10]);
        vectors.push(v(3.5, 0.5));
        let clusters = kmeans_flow(&vectors, &SplitConfig::default()).unwrap();
        let total: usize = clusters.iter().map(|c| c.members.len()).sum();
        assert_eq!(total, vectors.len());
        let home = clusters.iter().find(|c| c.members.contains(&30)).unwrap();
        assert!(home.members.contains(&0));
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(ratio_int(&PixelBox::new(0, 0, 5, 5), &PixelBox::new(10, 10, 5, 5)), 0.0);
        assert_eq!(ratio_int(&PixelBox::new(0, 0, 10, 10), &PixelBox::new(2, 2, 3, 3)), 1.0);
        assert!((ratio_int(&PixelBox::new(0, 0, 10, 10), &PixelBox::new(5, 5, 10, 10)) - 0.25).abs() < 1e-12);
    }

    fn rect_pixels(x0: u32, y0: u32, w: u32, h: u32) -> Vec<(u32, u32)> {
        (y0..y0 + h).flat_map(|y| (x0..x0 + w).map(move |x| (x, y))).collect()
    }

    #[test]
    fn abutting_opposite_squares_split() {
        // two 12x12 squares side by side, flows (4,0) and (-4,0), a thin ring of
        // zero-flow pixels around them playing the background cluster
        let mut field = FlowField::zeros(40, 20);
        for y in 2..14 {
            for x in 2..14 {
                field.set(x, y, v(4.0, 0.0));
            }
            for x in 14..26 {
                field.set(x, y, v(-4.0, 0.0));
            }
        }
        let blob = Blob::from_pixels(0, rect_pixels(1, 1, 26, 14));
        let mut ledger = RefinementLedger::new();
        let out = split_pass(&blob, &field, &SplitConfig::default(), &MergeConfig::default(), &mut ledger);
        let SplitOutcome::Split(pair) = out else { panic!("expected a split, got {out:?}") };
        let mut pair = pair.to_vec();
        pair.sort();
        assert_eq!(pair, vec![PixelBox::new(2, 2, 12, 12), PixelBox::new(14, 2, 12, 12)]);
        assert_eq!(ledger.split_flow.len(), 1);
        assert!(pair.iter().all(|b| blob.bbox().contains_box(b)));
    }

    #[test]
    fn uniform_and_same_direction_blobs_kept() {
        let blob = Blob::from_pixels(3, rect_pixels(0, 0, 20, 10));
        let mut ledger = RefinementLedger::new();
        let uniform = FlowField::uniform(20, 10, v(2.0, 1.0));
        assert_eq!(
            split_pass(&blob, &uniform, &SplitConfig::default(), &MergeConfig::default(), &mut ledger),
            SplitOutcome::Kept(blob.bbox())
        );
        let mut speeds = FlowField::zeros(20, 10);
        for y in 0..10 {
            for x in 0..20 {
                speeds.set(x, y, v(if x < 7 { 4.0 } else if x < 14 { 8.0 } else { 6.0 }, 0.0));
            }
        }
        assert_eq!(
            split_pass(&blob, &speeds, &SplitConfig::default(), &MergeConfig::default(), &mut ledger),
            SplitOutcome::Kept(blob.bbox())
        );
        assert!(ledger.split_flow.is_empty());
    }

    #[test]
    fn static_and_minor_clusters_never_pair() {
        let blob = Blob::from_pixels(0, rect_pixels(0, 0, 30, 10));
        let cfg = SplitConfig::default();
        // left: moving right; middle: still; a single block at the far right
        // moving left holds too few pixels to count as an object
        let mut field = FlowField::zeros(30, 10);
        for y in 0..10 {
            for x in 0..14 {
                field.set(x, y, v(3.0, 0.0));
            }
        }
        for y in 0..3 {
            for x in 27..30 {
                field.set(x, y, v(-3.0, 0.0));
            }
        }
        let mut ledger = RefinementLedger::new();
        assert_eq!(split_pass(&blob, &field, &cfg, &MergeConfig::default(), &mut ledger), SplitOutcome::Kept(blob.bbox()));

        // the same layout splits once the support floor is lifted
        let loose = SplitConfig { min_support: 0.0, ..cfg };
        assert!(matches!(split_pass(&blob, &field, &loose, &MergeConfig::default(), &mut ledger), SplitOutcome::Split(_)));
    }

    #[test]
    fn outlier_patch_does_not_block_split() {
        // a 4x4 patch of wild vectors inside the left-moving half would take
        // a centre of its own and fuse the other groups
        let mut field = FlowField::zeros(60, 20);
        for y in 0..20 {
            for x in 0..48 {
                field.set(x, y, v(if x < 24 { 4.0 } else { -4.0 }, 0.0));
            }
        }
        for y in 8..12 {
            for x in 30..34 {
                field.set(x, y, v(-6.0, 4.0));
            }
        }
        let blob = Blob::from_pixels(0, rect_pixels(0, 0, 60, 20));
        let mut ledger = RefinementLedger::new();
        let out = split_pass(&blob, &field, &SplitConfig::default(), &MergeConfig::default(), &mut ledger);
        let SplitOutcome::Split(pair) = out else { panic!("expected a split, got {out:?}") };
        let mut pair = pair.to_vec();
        pair.sort();
        assert_eq!(pair, vec![PixelBox::new(0, 0, 24, 20), PixelBox::new(24, 0, 24, 20)]);
    }
}
