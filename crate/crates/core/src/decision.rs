//! Per-RoI arbitration between the merge, flow-split and edge results, and
//! composition of the final foreground mask.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, PixelBox};
use crate::refine_merge::RefinementLedger;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionConfig {
    pub area_ratio_threshold: f64,
    pub max_edge_boxes: usize,
    /// Chebyshev radius by which pairwise box intersections are blacked out.
    pub intersection_dilation: u32,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            area_ratio_threshold: 0.65,
            max_edge_boxes: 4,
            intersection_dilation: 1,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.area_ratio_threshold > 0.0 && self.area_ratio_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "decision.area_ratio must lie in (0, 1], got {}",
                self.area_ratio_threshold
            )));
        }
        if self.max_edge_boxes < 2 {
            return Err(Error::Config(format!("decision.max_edge_boxes must be >= 2, got {}", self.max_edge_boxes)));
        }
        Ok(())
    }
}

/// Which stage produced a refined box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoxSource {
    FlowSplit,
    Edge,
    FlowMerged,
    Raw,
}

impl BoxSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoxSource::FlowSplit => "flow-split",
            BoxSource::Edge => "edge",
            BoxSource::FlowMerged => "flow-merged",
            BoxSource::Raw => "raw",
        }
    }
}

impl std::fmt::Display for BoxSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SourcedBox {
    pub bbox: PixelBox,
    pub source: BoxSource,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameDetections {
    pub frame_index: u64,
    pub boxes: Vec<SourcedBox>,
}

impl FrameDetections {
    pub fn new(frame_index: u64) -> Self {
        Self {
            frame_index,
            boxes: Vec::new(),
        }
    }

    pub fn plain_boxes(&self) -> Vec<PixelBox> {
        self.boxes.iter().map(|b| b.bbox).collect()
    }
}

/// The decision rule that fired for an RoI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    FlowSplit,
    MergedWithEdges,
    TooManyEdgeBoxes,
    AreaRatio { kept_flow: bool },
    FavorEdges,
    FlowFallback,
    BackgroundRejected,
}

/// Area of the union of two boxes, counting their overlap once.
pub fn union_area(a: &PixelBox, b: &PixelBox) -> u64 {
    a.area() + b.area() - a.intersection_area(b)
}

/// `area(e_i U e_j) / area(f_k)`.
pub fn ratio_area(e_i: &PixelBox, e_j: &PixelBox, flow_box: &PixelBox) -> f64 {
    union_area(e_i, e_j) as f64 / flow_box.area() as f64
}

/// Applies the decision rules in order and reports which one fired.
pub fn decide_roi_detailed(roi_id: usize, ledger: &RefinementLedger, flow_box: PixelBox, cfg: &DecisionConfig) -> (Rule, Vec<SourcedBox>) {
    let tag = |boxes: &[PixelBox], source| boxes.iter().map(|&bbox| SourcedBox { bbox, source }).collect::<Vec<_>>();
    let flow_source = if ledger.was_merged(roi_id) {
        BoxSource::FlowMerged
    } else {
        BoxSource::Raw
    };

    if let Some(pair) = ledger.split_flow.get(&roi_id) {
        return (Rule::FlowSplit, tag(pair, BoxSource::FlowSplit));
    }
    let edges = ledger.edge_boxes.get(&roi_id);
    let edge_boxes: &[PixelBox] = edges.map(Vec::as_slice).unwrap_or(&[]);
    if ledger.was_merged(roi_id) && !edge_boxes.is_empty() {
        return (Rule::MergedWithEdges, tag(edge_boxes, BoxSource::Edge));
    }
    if edge_boxes.len() >= cfg.max_edge_boxes {
        return (Rule::TooManyEdgeBoxes, tag(&[flow_box], flow_source));
    }
    if let [e_i, e_j] = edge_boxes {
        return if ratio_area(e_i, e_j, &flow_box) <= cfg.area_ratio_threshold {
            (Rule::AreaRatio { kept_flow: true }, tag(&[flow_box], flow_source))
        } else {
            (Rule::AreaRatio { kept_flow: false }, tag(edge_boxes, BoxSource::Edge))
        };
    }
    if !edge_boxes.is_empty() {
        return (Rule::FavorEdges, tag(edge_boxes, BoxSource::Edge));
    }
    if edges.is_some() {
        return (Rule::BackgroundRejected, Vec::new());
    }
    (Rule::FlowFallback, tag(&[flow_box], flow_source))
}

/// Final boxes for one RoI given its post-merge box.
pub fn decide_roi(roi_id: usize, ledger: &RefinementLedger, flow_box: PixelBox, cfg: &DecisionConfig) -> Vec<PixelBox> {
    decide_roi_detailed(roi_id, ledger, flow_box, cfg).1.into_iter().map(|b| b.bbox).collect()
}

/// Xors every box into an empty mask, then blacks out every pairwise
/// intersection grown by `cfg.intersection_dilation` pixels.
pub fn compose_final_mask(boxes: &[PixelBox], dims: (usize, usize), cfg: &DecisionConfig) -> BinaryMask {
    let (w, h) = dims;
    let mut mask = BinaryMask::new(w, h);
    for b in boxes {
        for (x, y) in b.clip(w, h).pixels() {
            let v = mask.get(x, y);
            mask.set(x, y, !v);
        }
    }
    for (i, a) in boxes.iter().enumerate() {
        for b in &boxes[i + 1..] {
            if let Some(inter) = a.intersection(b) {
                mask.fill_box(inter.expand(cfg.intersection_dilation, w, h), false);
            }
        }
    }
    mask
}
