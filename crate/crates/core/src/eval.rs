//! Detection metrics (IoU-matched precision/recall) and CLEAR-MOT scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::imaging::{box_iou, PixelBox};

pub const DEFAULT_IOU_MIN: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroundTruthEntry {
    pub frame_index: u64,
    pub object_id: u64,
    pub bbox: PixelBox,
    pub class_label: String,
}

impl GroundTruthEntry {
    pub fn new(frame_index: u64, object_id: u64, bbox: PixelBox) -> Self {
        Self {
            frame_index,
            object_id,
            bbox,
            class_label: String::new(),
        }
    }
}

/// One-to-one pairing of detections and ground-truth boxes within a frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Matching {
    /// `(detection index, ground-truth index, IoU)`.
    pub pairs: Vec<(usize, usize, f64)>,
    pub detections: usize,
    pub ground_truth: usize,
}

impl Matching {
    pub fn true_positives(&self) -> usize {
        self.pairs.len()
    }

    pub fn false_positives(&self) -> usize {
        self.detections - self.pairs.len()
    }

    pub fn false_negatives(&self) -> usize {
        self.ground_truth - self.pairs.len()
    }
}

/// Greedy IoU pairing: candidate pairs with IoU at or above `iou_min` are
/// taken in descending IoU order (ties by detection then gt index), each
/// box used at most once.
pub fn match_detections(dets: &[PixelBox], gts: &[PixelBox], iou_min: f64) -> Matching {
    let candidates = dets.iter().enumerate().flat_map(|(i, d)| gts.iter().enumerate().map(move |(j, g)| (i, j, box_iou(d, g))));
    Matching {
        pairs: greedy(candidates, iou_min),
        detections: dets.len(),
        ground_truth: gts.len(),
    }
}

fn greedy(candidates: impl Iterator<Item = (usize, usize, f64)>, iou_min: f64) -> Vec<(usize, usize, f64)> {
    let mut candidates: Vec<_> = candidates.filter(|&(_, _, iou)| iou >= iou_min && iou > 0.0).collect();
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_d = BTreeSet::new();
    let mut used_g = BTreeSet::new();
    let mut pairs = Vec::new();
    for (d, g, iou) in candidates {
        if !used_d.contains(&d) && !used_g.contains(&g) {
            used_d.insert(d);
            used_g.insert(g);
            pairs.push((d, g, iou));
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DetectionReport {
    pub frames: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
}

impl DetectionReport {
    pub fn from_counts(frames: usize, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Self {
            frames,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }

    /// Sums the counts of two reports and recomputes the ratios.
    pub fn combine(&self, other: &DetectionReport) -> Self {
        Self::from_counts(
            self.frames + other.frames,
            self.true_positives + other.true_positives,
            self.false_positives + other.false_positives,
            self.false_negatives + other.false_negatives,
        )
    }
}

pub fn detection_metrics(matchings: &[Matching]) -> DetectionReport {
    DetectionReport::from_counts(
        matchings.len(),
        matchings.iter().map(Matching::true_positives).sum(),
        matchings.iter().map(Matching::false_positives).sum(),
        matchings.iter().map(Matching::false_negatives).sum(),
    )
}

/// Evaluates frame-tagged detections against ground truth over `frames`
/// (every frame that appears in either list when `None`).
pub fn evaluate_detections(dets: &[(u64, PixelBox)], gts: &[GroundTruthEntry], frames: Option<&BTreeSet<u64>>, iou_min: f64) -> DetectionReport {
    let mut by_frame: BTreeMap<u64, (Vec<PixelBox>, Vec<PixelBox>)> = BTreeMap::new();
    if let Some(frames) = frames {
        for &f in frames {
            by_frame.entry(f).or_default();
        }
    }
    let keep = |f: &u64| frames.is_none_or(|s| s.contains(f));
    for (f, b) in dets.iter().filter(|(f, _)| keep(f)) {
        by_frame.entry(*f).or_default().0.push(*b);
    }
    for g in gts.iter().filter(|g| keep(&g.frame_index)) {
        by_frame.entry(g.frame_index).or_default().1.push(g.bbox);
    }
    let matchings: Vec<Matching> = by_frame.values().map(|(d, g)| match_detections(d, g, iou_min)).collect();
    detection_metrics(&matchings)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MotReport {
    pub mota: f64,
    pub motp: f64,
    pub misses: usize,
    pub false_positives: usize,
    pub id_switches: usize,
    pub matches: usize,
    pub total_gt: usize,
}

/// CLEAR-MOT over a track list in the ground-truth schema.
///
/// A ground-truth object matched in the previous frame keeps its track when
/// that track is present again with IoU at or above `iou_min`; the remaining
/// objects and tracks are paired greedily by IoU. A new pairing whose track
/// differs from the object's last matched track counts as an id switch.
/// MOTP is the mean IoU of all matched pairs (0 without matches).
pub fn clear_mot(tracks: &[GroundTruthEntry], gts: &[GroundTruthEntry], iou_min: f64) -> MotReport {
    let mut frames: BTreeMap<u64, (Vec<&GroundTruthEntry>, Vec<&GroundTruthEntry>)> = BTreeMap::new();
    for t in tracks {
        frames.entry(t.frame_index).or_default().0.push(t);
    }
    for g in gts {
        frames.entry(g.frame_index).or_default().1.push(g);
    }

    let mut previous: HashMap<u64, u64> = HashMap::new();
    let mut last_match: HashMap<u64, u64> = HashMap::new();
    let mut report = MotReport::default();
    let mut iou_sum = 0.0;

    for (hyps, objs) in frames.values() {
        let mut current: HashMap<u64, u64> = HashMap::new();
        let mut used_h = vec![false; hyps.len()];
        let mut used_o = vec![false; objs.len()];

        for (oi, o) in objs.iter().enumerate() {
            let Some(&track) = previous.get(&o.object_id) else { continue };
            let found = hyps
                .iter()
                .enumerate()
                .find(|(hi, h)| !used_h[*hi] && h.object_id == track);
            if let Some((hi, h)) = found {
                let iou = box_iou(&h.bbox, &o.bbox);
                if iou >= iou_min && iou > 0.0 {
                    used_h[hi] = true;
                    used_o[oi] = true;
                    current.insert(o.object_id, track);
                    iou_sum += iou;
                    report.matches += 1;
                }
            }
        }

        let candidates = hyps
            .iter()
            .enumerate()
            .filter(|(hi, _)| !used_h[*hi])
            .flat_map(|(hi, h)| {
                objs.iter()
                    .enumerate()
                    .filter(|(oi, _)| !used_o[*oi])
                    .map(move |(oi, o)| (hi, oi, box_iou(&h.bbox, &o.bbox)))
            })
            .collect::<Vec<_>>();
        for (hi, oi, iou) in greedy(candidates.into_iter(), iou_min) {
            let (h, o) = (hyps[hi], objs[oi]);
            used_h[hi] = true;
            used_o[oi] = true;
            if last_match.get(&o.object_id).is_some_and(|&t| t != h.object_id) {
                report.id_switches += 1;
            }
            current.insert(o.object_id, h.object_id);
            iou_sum += iou;
            report.matches += 1;
        }

        report.misses += used_o.iter().filter(|u| !**u).count();
        report.false_positives += used_h.iter().filter(|u| !**u).count();
        report.total_gt += objs.len();
        last_match.extend(current.iter().map(|(&k, &v)| (k, v)));
        previous = current;
    }

    let errors = (report.misses + report.false_positives + report.id_switches) as f64;
    report.mota = 1.0 - errors / report.total_gt.max(1) as f64;
    report.motp = if report.matches == 0 {
        0.0
    } else {
        iou_sum / report.matches as f64
    };
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> PixelBox {
        PixelBox::new(x, y, w, h)
    }

    #[test]
    fn identical_lists_match_fully() {
        let boxes = vec![b(0, 0, 5, 5), b(10, 10, 4, 4), b(30, 0, 2, 9)];
        let m = match_detections(&boxes, &boxes, 0.3);
        assert_eq!(m.true_positives(), 3);
        assert_eq!(m.false_positives() + m.false_negatives(), 0);
    }

    #[test]
    fn below_threshold_unmatched() {
        // IoU = 25 / 100 = 0.25
        let m = match_detections(&[b(0, 0, 10, 10)], &[b(0, 0, 5, 5)], 0.3);
        assert_eq!((m.true_positives(), m.false_positives(), m.false_negatives()), (0, 1, 1));
    }

    #[test]
    fn greedy_prefers_higher_iou() {
        // det (0,0,10,10); gt A covers half (IoU 0.5), gt B IoU 0.4
        let det = b(0, 0, 10, 10);
        let gt_a = b(0, 0, 10, 5);
        let gt_b = b(0, 0, 4, 10);
        assert!((box_iou(&det, &gt_a) - 0.5).abs() < 1e-12);
        assert!((box_iou(&det, &gt_b) - 0.4).abs() < 1e-12);
        let m = match_detections(&[det], &[gt_b, gt_a], 0.3);
        assert_eq!(m.pairs, vec![(0, 1, 0.5)]);
    }

    #[test]
    fn report_arithmetic() {
        let r = DetectionReport::from_counts(1, 3, 1, 1);
        assert!((r.precision - 0.75).abs() < 1e-12 && (r.recall - 0.75).abs() < 1e-12);
        let none = detection_metrics(&[match_detections(&[], &[b(0, 0, 3, 3)], 0.3)]);
        assert_eq!((none.precision, none.recall), (0.0, 0.0));
    }

    fn track(frame: u64, id: u64, bbox: PixelBox) -> GroundTruthEntry {
        GroundTruthEntry::new(frame, id, bbox)
    }

    #[test]
    fn perfect_tracks() {
        let gt: Vec<_> = (0..5).flat_map(|f| [track(f, 1, b(f as u32, 0, 5, 5)), track(f, 2, b(20, f as u32, 5, 5))]).collect();
        let r = clear_mot(&gt, &gt, 0.3);
        assert_eq!((r.mota, r.motp, r.id_switches), (1.0, 1.0, 0));
    }

    #[test]
    fn empty_tracks_all_missed() {
        let gt = vec![track(0, 1, b(0, 0, 5, 5)), track(1, 1, b(0, 0, 5, 5))];
        let r = clear_mot(&[], &gt, 0.3);
        assert_eq!((r.misses, r.mota), (2, 0.0));
    }

    #[test]
    fn relabelled_track_counts_one_switch() {
        let gt: Vec<_> = (0..4).map(|f| track(f, 7, b(10, 10, 6, 6))).collect();
        let tracks: Vec<_> = (0..4).map(|f| track(f, if f < 2 { 1 } else { 2 }, b(10, 10, 6, 6))).collect();
        let r = clear_mot(&tracks, &gt, 0.3);
        assert_eq!(r.id_switches, 1);
        assert!((r.mota - 0.75).abs() < 1e-12);
    }
}
