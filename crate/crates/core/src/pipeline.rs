//! End-to-end per-frame refinement.
//!
//! For every frame: update the background image, obtain the raw foreground
//! mask, extract blobs, and (after warm-up) compute flow against the previous
//! frame, merge fragments, split opposite movers, analyse foreground edges,
//! decide the final boxes and compose the refined mask.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::background::{ingest_mask, BackgroundModel, SampleSubtractor};
use crate::config::PipelineConfig;
use crate::decision::{compose_final_mask, decide_roi_detailed, BoxSource, FrameDetections, SourcedBox};
use crate::edges::{blob_edge_maps, edge_boxes_from_maps, EdgeMaps};
use crate::error::{Error, Result};
use crate::eval::{evaluate_detections, DetectionReport, GroundTruthEntry};
use crate::flow::{BlockMatcher, FlowEngine, FlowField};
use crate::imaging::{connected_components, to_gray, BinaryMask, Blob, ColorFrame, GrayFrame, PixelBox};
use crate::io::{self, csv_writer, write_row};
use crate::refine_merge::{merge_pass, RefinementLedger};
use crate::refine_split::{split_pass, SplitOutcome};

/// Everything produced for one frame.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub frame_index: u64,
    /// Raw blobs' ids and boxes, in extraction order.
    pub raw_boxes: Vec<(usize, PixelBox)>,
    pub refined: FrameDetections,
    pub mask: BinaryMask,
    pub ledger: RefinementLedger,
    /// Whether the refinement stages ran on this frame.
    pub refined_stages: bool,
    pub debug: Option<FrameDebug>,
}

/// Intermediate products kept when debug dumps are enabled.
#[derive(Debug, Clone)]
pub struct FrameDebug {
    pub raw_mask: BinaryMask,
    pub flow: FlowField,
    pub edges: Vec<(usize, EdgeMaps)>,
}

/// Stateful frame-by-frame processor.
pub struct Pipeline {
    config: PipelineConfig,
    background: BackgroundModel,
    subtractor: Option<SampleSubtractor>,
    previous: Option<GrayFrame>,
    engine: Box<dyn FlowEngine>,
    keep_debug: bool,
}

struct RoiResult {
    roi: Blob,
    ledger: RefinementLedger,
    edges: EdgeMaps,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let engine = Box::new(BlockMatcher::new(config.flow)?);
        Self::with_engine(config, engine)
    }

    /// Uses `engine` instead of the built-in block matcher.
    pub fn with_engine(config: PipelineConfig, engine: Box<dyn FlowEngine>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            background: BackgroundModel::new(config.alpha)?,
            keep_debug: config.debug_dump,
            config,
            subtractor: None,
            previous: None,
            engine,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Processes the next frame. With `ingested` the subtractor is bypassed.
    pub fn process(&mut self, frame_index: u64, frame: &ColorFrame, ingested: Option<BinaryMask>) -> Result<FrameOutput> {
        let gray = to_gray(frame);
        if let Some(prev) = &self.previous {
            if prev.dims() != gray.dims() {
                return Err(Error::dims(prev.dims(), gray.dims()));
            }
        }
        self.background.accumulate(frame)?;

        let raw_mask = match ingested {
            Some(mask) => {
                if mask.dims() != gray.dims() {
                    return Err(Error::dims(gray.dims(), mask.dims()));
                }
                mask
            }
            None => match &mut self.subtractor {
                Some(s) => s.segment(&gray)?,
                None => {
                    self.subtractor = Some(SampleSubtractor::new(self.config.subtractor, &gray)?);
                    BinaryMask::new(gray.width(), gray.height())
                }
            },
        };

        let blobs = connected_components(&raw_mask, self.config.min_blob_area);
        let raw_boxes: Vec<(usize, PixelBox)> = blobs.iter().map(|b| (b.id, b.bbox())).collect();
        let previous = self.previous.replace(gray.clone());

        let prev = match previous {
            Some(prev) if frame_index >= self.config.warmup_frames => prev,
            _ => {
                let refined = FrameDetections {
                    frame_index,
                    boxes: raw_boxes
                        .iter()
                        .map(|&(_, bbox)| SourcedBox {
                            bbox,
                            source: BoxSource::Raw,
                        })
                        .collect(),
                };
                let mask = compose_final_mask(&refined.plain_boxes(), gray.dims(), &self.config.decision);
                return Ok(FrameOutput {
                    frame_index,
                    raw_boxes,
                    refined,
                    mask,
                    ledger: RefinementLedger::new(),
                    refined_stages: false,
                    debug: None,
                });
            }
        };

        let background = to_gray(&self.background.snapshot()?);
        let flow = self.engine.compute(&prev, &gray, Some(&raw_mask))?;
        let mut ledger = RefinementLedger::new();
        let rois = merge_pass(blobs, &flow, &self.config.merge, &mut ledger);

        let cfg = &self.config;
        let results: Vec<RoiResult> = rois
            .into_par_iter()
            .map(|roi| -> Result<RoiResult> {
                let mut local = RefinementLedger::new();
                if let SplitOutcome::Split(_) = split_pass(&roi, &flow, &cfg.split, &cfg.merge, &mut local) {
                    log::debug!("frame {frame_index}: roi {} split by flow", roi.id);
                }
                let edges = blob_edge_maps(&roi, &gray, &background, &cfg.edges)?;
                edge_boxes_from_maps(&roi, &edges, &cfg.edges, &mut local);
                Ok(RoiResult { roi, ledger: local, edges })
            })
            .collect::<Result<_>>()?;

        for r in &results {
            ledger.split_flow.extend(r.ledger.split_flow.iter().map(|(k, v)| (*k, *v)));
            ledger.edge_boxes.extend(r.ledger.edge_boxes.iter().map(|(k, v)| (*k, v.clone())));
        }

        let mut refined = FrameDetections::new(frame_index);
        for r in &results {
            let (rule, boxes) = decide_roi_detailed(r.roi.id, &ledger, r.roi.bbox(), &cfg.decision);
            log::trace!("frame {frame_index}: roi {} -> {rule:?} ({} boxes)", r.roi.id, boxes.len());
            refined.boxes.extend(boxes);
        }
        let mask = compose_final_mask(&refined.plain_boxes(), gray.dims(), &cfg.decision);
        let debug = self.keep_debug.then(|| FrameDebug {
            raw_mask,
            flow,
            edges: results.into_iter().map(|r| (r.roi.id, r.edges)).collect(),
        });
        Ok(FrameOutput {
            frame_index,
            raw_boxes,
            refined,
            mask,
            ledger,
            refined_stages: true,
            debug,
        })
    }
}

/// Raw and refined detection quality over one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunReport {
    pub iou_min: f64,
    pub raw: DetectionReport,
    pub refined: DetectionReport,
}

impl RunReport {
    pub fn evaluate(outputs: &[FrameOutput], gt: &[GroundTruthEntry], iou_min: f64) -> Self {
        let frames: BTreeSet<u64> = outputs.iter().map(|o| o.frame_index).collect();
        let raw: Vec<(u64, PixelBox)> = outputs
            .iter()
            .flat_map(|o| o.raw_boxes.iter().map(move |(_, b)| (o.frame_index, *b)))
            .collect();
        let refined: Vec<(u64, PixelBox)> = outputs
            .iter()
            .flat_map(|o| o.refined.boxes.iter().map(move |b| (o.frame_index, b.bbox)))
            .collect();
        Self {
            iou_min,
            raw: evaluate_detections(&raw, gt, Some(&frames), iou_min),
            refined: evaluate_detections(&refined, gt, Some(&frames), iou_min),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("iou_min = {}\n", self.iou_min);
        for (name, r) in [("raw", &self.raw), ("refined", &self.refined)] {
            s.push_str(&detection_report_text(name, r));
        }
        s
    }
}

/// Flat `prefix.key = value` lines for a detection report.
pub fn detection_report_text(prefix: &str, r: &DetectionReport) -> String {
    format!(
        "{prefix}.frames = {}\n{prefix}.true_positives = {}\n{prefix}.false_positives = {}\n{prefix}.false_negatives = {}\n{prefix}.precision = {:.6}\n{prefix}.recall = {:.6}\n",
        r.frames, r.true_positives, r.false_positives, r.false_negatives, r.precision, r.recall
    )
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize infallibly");
    text.push('\n');
    text
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value))
}

/// Summary of a directory run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub frames_processed: usize,
    pub frames_skipped: usize,
    pub report: Option<RunReport>,
}

fn mask_for(masks_dir: &Path, frame_path: &Path) -> Option<PathBuf> {
    let stem = frame_path.file_stem()?;
    ["pgm", "png", "pbm"]
        .iter()
        .map(|ext| masks_dir.join(stem).with_extension(ext))
        .find(|p| p.is_file())
}

/// Runs the pipeline over `cfg.frames_dir` and writes every artifact into
/// `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let frames = io::list_frames(&cfg.frames_dir)?;
    if frames.is_empty() {
        return Err(Error::NoFrames(cfg.frames_dir.clone()));
    }
    let gt = cfg.gt_path.as_deref().map(io::read_ground_truth).transpose()?;

    let out = &cfg.output_dir;
    let refined_dir = out.join("refined");
    io::create_dir(&refined_dir)?;
    let debug_dir = out.join("debug");
    if cfg.debug_dump {
        io::create_dir(&debug_dir)?;
    }

    let raw_csv_path = out.join("raw_boxes.csv");
    let refined_csv_path = out.join("refined_boxes.csv");
    let mut raw_csv = csv_writer(&raw_csv_path)?;
    let mut refined_csv = csv_writer(&refined_csv_path)?;
    write_row(&raw_csv_path, &mut raw_csv, ["frame", "blob_id", "x", "y", "w", "h"])?;
    write_row(&refined_csv_path, &mut refined_csv, ["frame", "source", "x", "y", "w", "h"])?;

    let mut pipeline = Pipeline::new(cfg.clone())?;
    let mut outputs = Vec::with_capacity(frames.len());
    let mut skipped = 0;
    let mut dims: Option<(usize, usize)> = None;

    for (index, path) in frames.iter().enumerate() {
        let index = index as u64;
        let frame = match io::read_color_frame(path) {
            Ok(f) if dims.is_none_or(|d| d == f.dims()) => f,
            Ok(f) => {
                log::warn!("skipping {}: {}", path.display(), Error::dims(dims.unwrap_or_default(), f.dims()));
                skipped += 1;
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
                continue;
            }
        };
        dims = Some(frame.dims());
        let ingested = match &cfg.masks_dir {
            Some(dir) => match mask_for(dir, path).map(|p| ingest_mask(&p, frame.dims())) {
                Some(Ok(m)) => Some(m),
                Some(Err(e)) => {
                    log::warn!("frame {index}: ignoring mask: {e}; using an empty mask");
                    Some(BinaryMask::new(frame.width(), frame.height()))
                }
                None => {
                    log::warn!("frame {index}: no mask for {}; using an empty mask", path.display());
                    Some(BinaryMask::new(frame.width(), frame.height()))
                }
            },
            None => None,
        };

        let output = pipeline.process(index, &frame, ingested)?;
        io::write_mask_pgm(&refined_dir.join(format!("{index:06}.pgm")), &output.mask)?;
        for (id, b) in &output.raw_boxes {
            write_row(
                &raw_csv_path,
                &mut raw_csv,
                [index.to_string(), id.to_string(), b.x.to_string(), b.y.to_string(), b.w.to_string(), b.h.to_string()],
            )?;
        }
        for sb in &output.refined.boxes {
            let b = sb.bbox;
            write_row(
                &refined_csv_path,
                &mut refined_csv,
                [index.to_string(), sb.source.to_string(), b.x.to_string(), b.y.to_string(), b.w.to_string(), b.h.to_string()],
            )?;
        }
        if let Some(debug) = &output.debug {
            write_debug(&debug_dir, index, debug)?;
        }
        log::info!(
            "frame {index}: {} raw boxes, {} refined boxes",
            output.raw_boxes.len(),
            output.refined.boxes.len()
        );
        outputs.push(output);
    }
    raw_csv.flush().map_err(|e| Error::io(&raw_csv_path, e))?;
    refined_csv.flush().map_err(|e| Error::io(&refined_csv_path, e))?;

    let report = gt.map(|gt| RunReport::evaluate(&outputs, &gt, cfg.iou_min));
    if let Some(r) = &report {
        write_text(&out.join("report.txt"), &r.to_text())?;
        write_json(&out.join("report.json"), r)?;
    }
    Ok(RunSummary {
        frames_processed: outputs.len(),
        frames_skipped: skipped,
        report,
    })
}

fn write_debug(dir: &Path, index: u64, debug: &FrameDebug) -> Result<()> {
    io::write_mask_pgm(&dir.join(format!("{index:06}_raw.pgm")), &debug.raw_mask)?;
    debug.flow.write_csv(&dir.join(format!("{index:06}_flow.csv")))?;
    for (roi, maps) in &debug.edges {
        for (tag, map) in [("frame", &maps.frame_edges), ("background", &maps.background_edges), ("foreground", &maps.foreground_edges)] {
            io::write_mask_pgm(&dir.join(format!("{index:06}_roi{roi}_{tag}_edges.pgm")), &map.to_mask())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_frames_pass_raw_boxes() {
        let cfg = PipelineConfig {
            warmup_frames: 5,
            ..Default::default()
        };
        let mut p = Pipeline::new(cfg).unwrap();
        let bg = ColorFrame::filled(40, 30, [100, 100, 100]);
        let out = p.process(0, &bg, None).unwrap();
        assert!(out.raw_boxes.is_empty() && !out.refined_stages);
        let mut frame = bg.clone();
        for y in 5..20 {
            for x in 5..15 {
                frame.set(x, y, [10, 10, 10]);
            }
        }
        let out = p.process(1, &frame, None).unwrap();
        assert_eq!(out.raw_boxes, vec![(0, PixelBox::new(5, 5, 10, 15))]);
        assert_eq!(out.refined.plain_boxes(), vec![PixelBox::new(5, 5, 10, 15)]);
        assert_eq!(out.mask.count(), 150);
    }

    #[test]
    fn mismatched_frame_rejected() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        p.process(0, &ColorFrame::filled(10, 10, [0, 0, 0]), None).unwrap();
        assert!(p.process(1, &ColorFrame::filled(12, 10, [0, 0, 0]), None).is_err());
    }
}
