//! Pipeline configuration: every tunable constant in one place, loadable
//! from a `key = value` file and overridable key by key.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::background::SubtractorConfig;
use crate::decision::DecisionConfig;
use crate::edges::EdgeConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_IOU_MIN;
use crate::flow::{BlockMatcher, FlowConfig};
use crate::refine_merge::MergeConfig;
use crate::refine_split::SplitConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub alpha: f64,
    pub subtractor: SubtractorConfig,
    pub flow: FlowConfig,
    pub merge: MergeConfig,
    pub split: SplitConfig,
    pub edges: EdgeConfig,
    pub decision: DecisionConfig,
    /// Connected components smaller than this are dropped.
    pub min_blob_area: usize,
    /// Frames before this index emit raw boxes only.
    pub warmup_frames: u64,
    pub iou_min: f64,
    pub frames_dir: PathBuf,
    pub masks_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub gt_path: Option<PathBuf>,
    pub debug_dump: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            subtractor: SubtractorConfig::default(),
            flow: FlowConfig::default(),
            merge: MergeConfig::default(),
            split: SplitConfig::default(),
            edges: EdgeConfig::default(),
            decision: DecisionConfig::default(),
            min_blob_area: 50,
            warmup_frames: 30,
            iou_min: DEFAULT_IOU_MIN,
            frames_dir: PathBuf::from("frames"),
            masks_dir: None,
            output_dir: PathBuf::from("out"),
            gt_path: None,
            debug_dump: false,
        }
    }
}

pub const KEYS: [&str; 33] = [
    "bg.alpha",
    "bg.samples",
    "bg.match_radius",
    "bg.min_matches",
    "bg.update_prob",
    "bg.seed",
    "flow.patch",
    "flow.search_radius",
    "flow.max_residual",
    "merge.t_m",
    "merge.a_t",
    "split.k",
    "split.t_int",
    "split.seed",
    "split.max_iter",
    "split.min_motion",
    "split.min_support",
    "edges.sigma",
    "edges.group_dist",
    "edges.min_group_size",
    "edges.tolerant",
    "edges.drop_nested",
    "decision.area_ratio",
    "decision.max_edge_boxes",
    "decision.dilation",
    "blobs.min_area",
    "warmup_frames",
    "eval.iou_min",
    "io.frames",
    "io.masks",
    "io.output",
    "io.gt",
    "debug.dump",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "bg.alpha" => self.alpha = parse(key, value)?,
            "bg.samples" => self.subtractor.samples = parse(key, value)?,
            "bg.match_radius" => self.subtractor.match_radius = parse(key, value)?,
            "bg.min_matches" => self.subtractor.min_matches = parse(key, value)?,
            "bg.update_prob" => self.subtractor.update_probability = parse(key, value)?,
            "bg.seed" => self.subtractor.seed = parse(key, value)?,
            "flow.patch" => self.flow.patch = parse(key, value)?,
            "flow.search_radius" => self.flow.search_radius = parse(key, value)?,
            "flow.max_residual" => self.flow.max_residual = parse(key, value)?,
            "merge.t_m" => self.merge.t_m = parse(key, value)?,
            "merge.a_t" => self.merge.a_t = parse(key, value)?,
            "split.k" => self.split.k = parse(key, value)?,
            "split.t_int" => self.split.t_int = parse(key, value)?,
            "split.seed" => self.split.seed = parse(key, value)?,
            "split.max_iter" => self.split.max_iter = parse(key, value)?,
            "split.min_motion" => self.split.min_motion = parse(key, value)?,
            "split.min_support" => self.split.min_support = parse(key, value)?,
            "edges.sigma" => self.edges.sigma = parse(key, value)?,
            "edges.group_dist" => self.edges.group_dist = parse(key, value)?,
            "edges.min_group_size" => self.edges.min_group_size = parse(key, value)?,
            "edges.tolerant" => self.edges.tolerant = parse_bool(key, value)?,
            "edges.drop_nested" => self.edges.drop_nested = parse_bool(key, value)?,
            "decision.area_ratio" => self.decision.area_ratio_threshold = parse(key, value)?,
            "decision.max_edge_boxes" => self.decision.max_edge_boxes = parse(key, value)?,
            "decision.dilation" => self.decision.intersection_dilation = parse(key, value)?,
            "blobs.min_area" => self.min_blob_area = parse(key, value)?,
            "warmup_frames" => self.warmup_frames = parse(key, value)?,
            "eval.iou_min" => self.iou_min = parse(key, value)?,
            "io.frames" => self.frames_dir = PathBuf::from(value),
            "io.masks" => self.masks_dir = optional_path(value),
            "io.output" => self.output_dir = PathBuf::from(value),
            "io.gt" => self.gt_path = optional_path(value),
            "debug.dump" => self.debug_dump = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        self.set(k.trim(), v)
    }

    /// Applies a configuration file over the current values.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let to_parse_err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: n as u64 + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| to_parse_err(format!("expected `key = value`, found `{line}`")))?;
            self.set(k.trim(), v).map_err(|e| match e {
                Error::Config(m) => to_parse_err(m),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("bg.alpha must lie in (0, 1], got {}", self.alpha)));
        }
        self.subtractor.validate()?;
        BlockMatcher::new(self.flow)?;
        self.merge.validate()?;
        self.split.validate()?;
        self.edges.validate()?;
        self.decision.validate()?;
        if !(self.iou_min > 0.0 && self.iou_min <= 1.0) {
            return Err(Error::Config(format!("eval.iou_min must lie in (0, 1], got {}", self.iou_min)));
        }
        Ok(())
    }

    /// Every key with its current value, in the file format.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("bg.alpha", self.alpha.to_string());
        kv("bg.samples", self.subtractor.samples.to_string());
        kv("bg.match_radius", self.subtractor.match_radius.to_string());
        kv("bg.min_matches", self.subtractor.min_matches.to_string());
        kv("bg.update_prob", self.subtractor.update_probability.to_string());
        kv("bg.seed", self.subtractor.seed.to_string());
        kv("flow.patch", self.flow.patch.to_string());
        kv("flow.search_radius", self.flow.search_radius.to_string());
        kv("flow.max_residual", self.flow.max_residual.to_string());
        kv("merge.t_m", self.merge.t_m.to_string());
        kv("merge.a_t", self.merge.a_t.to_string());
        kv("split.k", self.split.k.to_string());
        kv("split.t_int", self.split.t_int.to_string());
        kv("split.seed", self.split.seed.to_string());
        kv("split.max_iter", self.split.max_iter.to_string());
        kv("split.min_motion", self.split.min_motion.to_string());
        kv("split.min_support", self.split.min_support.to_string());
        kv("edges.sigma", self.edges.sigma.to_string());
        kv("edges.group_dist", self.edges.group_dist.to_string());
        kv("edges.min_group_size", self.edges.min_group_size.to_string());
        kv("edges.tolerant", self.edges.tolerant.to_string());
        kv("edges.drop_nested", self.edges.drop_nested.to_string());
        kv("decision.area_ratio", self.decision.area_ratio_threshold.to_string());
        kv("decision.max_edge_boxes", self.decision.max_edge_boxes.to_string());
        kv("decision.dilation", self.decision.intersection_dilation.to_string());
        kv("blobs.min_area", self.min_blob_area.to_string());
        kv("warmup_frames", self.warmup_frames.to_string());
        kv("eval.iou_min", self.iou_min.to_string());
        kv("io.frames", self.frames_dir.display().to_string());
        kv("io.masks", path(&self.masks_dir));
        kv("io.output", self.output_dir.display().to_string());
        kv("io.gt", path(&self.gt_path));
        kv("debug.dump", self.debug_dump.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.set("merge.t_m", "5.5").unwrap();
        cfg.set("io.gt", "gt.csv").unwrap();
        cfg.set("edges.tolerant", "true").unwrap();
        let mut back = PipelineConfig::default();
        back.apply_text(&cfg.to_text(), Path::new("x")).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_rejected_with_line() {
        let err = PipelineConfig::default()
            .apply_text("# header\nmerge.t_m = 3\nmerge.tm = 3\n", Path::new("c.cfg"))
            .unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn ranges_validated() {
        let mut cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        cfg.apply_override("decision.area_ratio=1.5").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.apply_override("split.k=4").unwrap();
        assert!(cfg.validate().is_err());
        assert!(cfg.apply_override("nonsense").is_err());
    }
}
