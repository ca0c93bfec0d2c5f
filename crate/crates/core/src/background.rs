//! Scene background image and raw foreground masks.
//!
//! [`BackgroundModel`] keeps the running colour average used by the edge
//! stage. [`SampleSubtractor`] is a small sample-consensus subtractor that
//! produces raw masks; masks from any other subtractor can be used instead
//! through [`ingest_mask`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{BinaryMask, ColorFrame, GrayFrame};
use crate::io;

/// Running average `A_i = alpha * I + (1 - alpha) * A_{i-1}`, per channel.
#[derive(Debug, Clone)]
pub struct BackgroundModel {
    alpha: f64,
    accumulator: Vec<f64>,
    dims: Option<(usize, usize)>,
    frames_seen: u64,
}

impl BackgroundModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("bg.alpha must lie in (0, 1], got {alpha}")));
        }
        Ok(Self {
            alpha,
            accumulator: Vec::new(),
            dims: None,
            frames_seen: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    pub fn accumulator(&self) -> &[f64] {
        &self.accumulator
    }

    /// Folds a frame into the average. The first frame initialises it.
    pub fn accumulate(&mut self, frame: &ColorFrame) -> Result<()> {
        match self.dims {
            None => {
                self.accumulator = frame.data().iter().map(|&v| f64::from(v)).collect();
                self.dims = Some(frame.dims());
            }
            Some(dims) if dims != frame.dims() => return Err(Error::dims(dims, frame.dims())),
            Some(_) => {
                let keep = 1.0 - self.alpha;
                for (acc, &v) in self.accumulator.iter_mut().zip(frame.data()) {
                    *acc = self.alpha * f64::from(v) + keep * *acc;
                }
            }
        }
        self.frames_seen += 1;
        Ok(())
    }

    /// The average rounded to 8 bits per channel.
    pub fn snapshot(&self) -> Result<ColorFrame> {
        let (w, h) = self.dims.ok_or(Error::EmptyModel)?;
        let data = self
            .accumulator
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect();
        ColorFrame::new(w, h, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubtractorConfig {
    pub samples: usize,
    pub match_radius: u8,
    pub min_matches: usize,
    pub update_probability: f64,
    pub seed: u64,
}

impl Default for SubtractorConfig {
    fn default() -> Self {
        Self {
            samples: 20,
            match_radius: 20,
            min_matches: 2,
            update_probability: 1.0 / 16.0,
            seed: 0,
        }
    }
}

impl SubtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_matches == 0 || self.samples < self.min_matches {
            return Err(Error::Config(format!(
                "need bg.samples >= bg.min_matches >= 1, got {} and {}",
                self.samples, self.min_matches
            )));
        }
        if self.match_radius == 0 {
            return Err(Error::Config("bg.match_radius must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.update_probability) {
            return Err(Error::Config(format!(
                "bg.update_prob must lie in [0, 1], got {}",
                self.update_probability
            )));
        }
        Ok(())
    }
}

/// Per-pixel sample set subtractor.
///
/// A pixel is background when at least `min_matches` of its stored samples
/// lie within `match_radius` of the new value. Background pixels overwrite
/// one random sample with probability `update_probability`; foreground
/// pixels never update, so moving objects do not bleed into the model.
#[derive(Debug, Clone)]
pub struct SampleSubtractor {
    config: SubtractorConfig,
    width: usize,
    height: usize,
    samples: Vec<u8>,
    rng: ChaCha8Rng,
}

impl SampleSubtractor {
    /// Bootstraps every sample of every pixel from `first`.
    pub fn new(config: SubtractorConfig, first: &GrayFrame) -> Result<Self> {
        config.validate()?;
        let n = config.samples;
        let samples = first.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
        Ok(Self {
            config,
            width: first.width(),
            height: first.height(),
            samples,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &SubtractorConfig {
        &self.config
    }

    pub fn segment(&mut self, frame: &GrayFrame) -> Result<BinaryMask> {
        if frame.dims() != (self.width, self.height) {
            return Err(Error::dims((self.width, self.height), frame.dims()));
        }
        let n = self.config.samples;
        let radius = self.config.match_radius;
        let mut bits = Vec::with_capacity(self.width * self.height);
        for (i, &value) in frame.data().iter().enumerate() {
            let stored = &mut self.samples[i * n..(i + 1) * n];
            let mut matches = 0;
            for &s in stored.iter() {
                if s.abs_diff(value) <= radius {
                    matches += 1;
                    if matches >= self.config.min_matches {
                        break;
                    }
                }
            }
            let foreground = matches < self.config.min_matches;
            if !foreground && self.rng.random_bool(self.config.update_probability) {
                let slot = self.rng.random_range(0..n);
                stored[slot] = value;
            }
            bits.push(foreground);
        }
        BinaryMask::from_bits(self.width, self.height, bits)
    }
}

/// Loads an externally produced mask; nonzero pixels are foreground.
pub fn ingest_mask(path: &Path, expected: (usize, usize)) -> Result<BinaryMask> {
    let mask = io::read_mask(path)?;
    if mask.dims() != expected {
        return Err(Error::dims(expected, mask.dims()));
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(v: u8) -> ColorFrame {
        ColorFrame::filled(4, 3, [v, v, v])
    }

    #[test]
    fn first_frame_initialises() {
        let mut m = BackgroundModel::new(0.01).unwrap();
        let f = ColorFrame::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
        m.accumulate(&f).unwrap();
        assert_eq!(m.snapshot().unwrap(), f);
    }

    #[test]
    fn one_step_arithmetic() {
        let mut m = BackgroundModel::new(0.01).unwrap();
        m.accumulate(&solid(100)).unwrap();
        m.accumulate(&solid(200)).unwrap();
        for &v in m.accumulator() {
            assert!((v - 101.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fixed_point_and_empty_snapshot() {
        let mut m = BackgroundModel::new(0.01).unwrap();
        assert!(matches!(m.snapshot(), Err(Error::EmptyModel)));
        for _ in 0..300 {
            m.accumulate(&solid(77)).unwrap();
        }
        assert!(m.accumulator().iter().all(|&v| v == 77.0));
        assert_eq!(m.snapshot().unwrap(), solid(77));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut m = BackgroundModel::new(0.5).unwrap();
        m.accumulate(&solid(1)).unwrap();
        assert!(matches!(
            m.accumulate(&ColorFrame::filled(5, 5, [0; 3])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn invalid_alpha_rejected() {
        assert!(BackgroundModel::new(0.0).is_err());
        assert!(BackgroundModel::new(1.5).is_err());
        assert!(BackgroundModel::new(1.0).is_ok());
    }

    #[test]
    fn alternating_frames_converge_to_geometric_envelope() {
        // Closed form: after the first frame (value 0), step k adds alpha*(x_k - A).
        // The periodic steady state of a 0/200 alternation oscillates between
        // 200*(1-a)/(2-a) (after a 0 frame) and 200/(2-a) (after a 200 frame).
        let alpha = 0.01;
        let mut m = BackgroundModel::new(alpha).unwrap();
        for i in 0..3000 {
            m.accumulate(&solid(if i % 2 == 0 { 0 } else { 200 })).unwrap();
        }
        // the last frame (i = 2999) was a 200 frame
        let expected_hi = 200.0 / (2.0 - alpha);
        let v = m.accumulator()[0];
        assert!((v - expected_hi).abs() < 1e-6, "{v} vs {expected_hi}");
        assert_eq!(m.snapshot().unwrap().get(0, 0), [101, 101, 101]);
    }

    #[test]
    fn subtractor_static_scene_is_background() {
        let f = GrayFrame::from_fn(16, 16, |x, y| (x * 13 + y * 7) as u8);
        let mut s = SampleSubtractor::new(SubtractorConfig::default(), &f).unwrap();
        assert!(s.segment(&f).unwrap().is_empty());
        assert!(s.segment(&f).unwrap().is_empty());
    }

    #[test]
    fn subtractor_detects_bright_square() {
        let bg = GrayFrame::filled(20, 20, 30);
        let mut s = SampleSubtractor::new(SubtractorConfig::default(), &bg).unwrap();
        let fg = GrayFrame::from_fn(20, 20, |x, y| if (5..10).contains(&x) && (6..12).contains(&y) { 220 } else { 30 });
        let mask = s.segment(&fg).unwrap();
        for y in 6..12 {
            for x in 5..10 {
                assert!(mask.get(x, y));
            }
        }
        assert_eq!(mask.count(), 30);
    }

    #[test]
    fn subtractor_rejects_size_change() {
        let mut s = SampleSubtractor::new(SubtractorConfig::default(), &GrayFrame::filled(4, 4, 0)).unwrap();
        assert!(s.segment(&GrayFrame::filled(5, 4, 0)).is_err());
    }

    #[test]
    fn subtractor_config_validation() {
        let bad = SubtractorConfig {
            samples: 1,
            min_matches: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ingest_masks() {
        let dir = tempfile::tempdir().unwrap();
        let zero = dir.path().join("000000.pgm");
        io::write_gray_pgm(&zero, &GrayFrame::filled(6, 4, 0)).unwrap();
        assert!(ingest_mask(&zero, (6, 4)).unwrap().is_empty());
        let full = dir.path().join("000001.pgm");
        io::write_gray_pgm(&full, &GrayFrame::filled(6, 4, 255)).unwrap();
        assert_eq!(ingest_mask(&full, (6, 4)).unwrap().count(), 24);
        assert!(matches!(ingest_mask(&full, (7, 4)), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(ingest_mask(&dir.path().join("missing.pgm"), (6, 4)), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn accumulator_stays_within_seen_range(values in proptest::collection::vec(any::<u8>(), 1..60), alpha in 0.001f64..1.0) {
            let mut m = BackgroundModel::new(alpha).unwrap();
            let lo = *values.iter().min().unwrap() as f64;
            let hi = *values.iter().max().unwrap() as f64;
            for &v in &values {
                m.accumulate(&ColorFrame::filled(1, 1, [v, v, v])).unwrap();
                for &a in m.accumulator() {
                    prop_assert!(a >= lo - 1e-9 && a <= hi + 1e-9);
                }
            }
        }

        #[test]
        fn segment_is_deterministic(seed in any::<u64>(), shift in 0u8..60) {
            let cfg = SubtractorConfig { seed, ..Default::default() };
            let first = GrayFrame::from_fn(12, 9, |x, y| (x * 17 + y * 3) as u8);
            let next = GrayFrame::from_fn(12, 9, |x, y| ((x * 17 + y * 3) as u8).wrapping_add(if x > 5 { shift } else { 0 }));
            let run = || {
                let mut s = SampleSubtractor::new(cfg, &first).unwrap();
                (0..4).map(|_| s.segment(&next).unwrap()).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
