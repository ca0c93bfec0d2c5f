//! Merging of fragmented blobs.
//!
//! Two blobs merge when they are close (C1), their flow-magnitude intervals
//! overlap (C2) and their centre flow directions agree (C3). Merging runs to
//! a fixpoint so that chains of fragments collapse into one blob.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::flow::{angle_diff, blob_flow_stats, BlobFlowStats, FlowField};
use crate::imaging::{blob_distance, box_gap, Blob, PixelBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    /// Maximum pixel distance between merged blobs.
    pub t_m: f64,
    /// Maximum direction difference, radians.
    pub a_t: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self { t_m: 7.0, a_t: FRAC_PI_2 }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_m >= 0.0) {
            return Err(Error::Config(format!("merge.t_m must be >= 0, got {}", self.t_m)));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.a_t) {
            return Err(Error::Config(format!("merge.a_t must lie in [0, pi], got {}", self.a_t)));
        }
        Ok(())
    }
}

/// What each refinement stage did to the RoIs of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RefinementLedger {
    /// Merged RoI id -> ids of the raw blobs it absorbed.
    pub merged: BTreeMap<usize, BTreeSet<usize>>,
    /// RoI id -> the two boxes of objects moving in opposite directions.
    pub split_flow: BTreeMap<usize, [PixelBox; 2]>,
    /// RoI id -> foreground edge-group boxes. An empty list means the edge
    /// stage found no foreground edge at all (a background object).
    pub edge_boxes: BTreeMap<usize, Vec<PixelBox>>,
}

impl RefinementLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `result` as the union of `parts`; parts that were themselves
    /// merge results are replaced by their sources.
    pub fn record_merge(&mut self, result: usize, parts: [usize; 2]) {
        let mut sources = BTreeSet::new();
        for part in parts {
            match self.merged.remove(&part) {
                Some(inner) => sources.extend(inner),
                None => {
                    sources.insert(part);
                }
            }
        }
        let previous = self.merged.insert(result, sources);
        debug_assert!(previous.is_none(), "merge result {result} recorded twice");
    }

    pub fn was_merged(&self, id: usize) -> bool {
        self.merged.contains_key(&id)
    }
}

/// C1: blobs are at most `t_m` pixels apart.
pub fn check_c1(a: &Blob, b: &Blob, cfg: &MergeConfig) -> bool {
    if box_gap(&a.bbox(), &b.bbox()) > cfg.t_m {
        return false;
    }
    blob_distance(a, b) <= cfg.t_m
}

/// C2: the closed magnitude intervals share at least one value.
pub fn check_c2(sa: &BlobFlowStats, sb: &BlobFlowStats) -> bool {
    sa.dom_lo <= sb.dom_hi && sb.dom_lo <= sa.dom_hi
}

/// C3: centre flow directions differ by at most `a_t`.
pub fn check_c3(sa: &BlobFlowStats, sb: &BlobFlowStats, cfg: &MergeConfig) -> bool {
    angle_diff(sa.center_angle, sb.center_angle) <= cfg.a_t
}

fn mergeable(a: &(Blob, BlobFlowStats), b: &(Blob, BlobFlowStats), cfg: &MergeConfig) -> bool {
    check_c2(&a.1, &b.1) && check_c3(&a.1, &b.1, cfg) && check_c1(&a.0, &b.0, cfg)
}

/// Merges qualifying pairs until none is left.
///
/// Pairs are scanned in ascending `(id_i, id_j)` order and the first
/// qualifying pair is merged; the result takes a fresh id greater than every
/// existing one and its flow statistics are recomputed from its pixels.
pub fn merge_pass(blobs: Vec<Blob>, field: &FlowField, cfg: &MergeConfig, ledger: &mut RefinementLedger) -> Vec<Blob> {
    let mut items: Vec<(Blob, BlobFlowStats)> = blobs
        .into_iter()
        .map(|b| {
            let s = blob_flow_stats(field, &b);
            (b, s)
        })
        .collect();
    items.sort_by_key(|(b, _)| b.id);
    let mut next_id = items.iter().map(|(b, _)| b.id + 1).max().unwrap_or(0);

    'outer: loop {
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                if !mergeable(&items[i], &items[j], cfg) {
                    continue;
                }
                let (b, _) = items.remove(j);
                let (a, _) = items.remove(i);
                let merged = a.union(&b, next_id);
                next_id += 1;
                ledger.record_merge(merged.id, [a.id, b.id]);
                log::debug!("merged blobs {} and {} into {}", a.id, b.id, merged.id);
                let stats = blob_flow_stats(field, &merged);
                items.push((merged, stats));
                continue 'outer;
            }
        }
        break;
    }
    items.into_iter().map(|(b, _)| b).collect()
}
