use std::collections::BTreeMap;

use fgrefine::eval::{clear_mot, match_detections, GroundTruthEntry};
use fgrefine::imaging::{box_iou, tight_box, PixelBox};
use fgrefine::synth::{preset, Actor, Background, SceneScript, PRESETS};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = PixelBox> {
    (0u32..40, 0u32..40, 1u32..15, 1u32..15).prop_map(|(x, y, w, h)| PixelBox::new(x, y, w, h))
}

fn arb_tracks() -> impl Strategy<Value = Vec<GroundTruthEntry>> {
    proptest::collection::vec((0u64..6, 1u64..5, arb_box()), 0..30).prop_map(|v| {
        // at most one box per (frame, id)
        let unique: BTreeMap<(u64, u64), PixelBox> = v.into_iter().map(|(f, id, b)| ((f, id), b)).collect();
        unique.into_iter().map(|((f, id), b)| GroundTruthEntry::new(f, id, b)).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matching_counts_balance(dets in proptest::collection::vec(arb_box(), 0..8), gts in proptest::collection::vec(arb_box(), 0..8), iou_min in 0.05f64..0.9) {
        let m = match_detections(&dets, &gts, iou_min);
        prop_assert_eq!(m.true_positives() + m.false_negatives(), gts.len());
        prop_assert_eq!(m.true_positives() + m.false_positives(), dets.len());
        for &(d, g, iou) in &m.pairs {
            prop_assert!(iou >= iou_min);
            prop_assert_eq!(iou, box_iou(&dets[d], &gts[g]));
        }
    }

    #[test]
    fn motp_within_bounds(tracks in arb_tracks(), gts in arb_tracks(), iou_min in 0.1f64..0.8) {
        let r = clear_mot(&tracks, &gts, iou_min);
        if r.matches > 0 {
            prop_assert!(r.motp >= iou_min - 1e-12 && r.motp <= 1.0 + 1e-12);
        }
        prop_assert_eq!(r.matches + r.misses, r.total_gt);
        prop_assert!(r.mota <= 1.0);
    }

    #[test]
    fn track_ids_are_symbolic(tracks in arb_tracks(), gts in arb_tracks(), offset in 100u64..1000) {
        // any injective relabelling that keeps the id order
        let relabelled: Vec<GroundTruthEntry> = tracks
            .iter()
            .map(|t| GroundTruthEntry::new(t.frame_index, t.object_id * 7 + offset, t.bbox))
            .collect();
        let a = clear_mot(&tracks, &gts, 0.3);
        let b = clear_mot(&relabelled, &gts, 0.3);
        prop_assert_eq!((a.mota, a.motp, a.id_switches), (b.mota, b.motp, b.id_switches));
    }
}

fn flat_scene(actors: Vec<Actor>) -> SceneScript {
    SceneScript {
        width: 64,
        height: 48,
        length: 6,
        seed: 0,
        noise: 0,
        background: Background::Flat { level: 200 },
        actors,
        occluders: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gt_bounds_rendered_pixels(
        x in -10i32..60, y in -10i32..44, w in 2u32..20, h in 2u32..20,
        vx in -3i32..=3, vy in -3i32..=3, level in 0u8..150,
    ) {
        let mut actor = Actor::rect(w, h, (x, y), (vx, vy));
        actor.level = level;
        let scene = flat_scene(vec![actor]);
        prop_assume!(scene.validate().is_ok());
        for t in 0..scene.length {
            let (frame, gt) = scene.render_frame(t);
            let mut drawn = Vec::new();
            for py in 0..frame.height() {
                for px in 0..frame.width() {
                    if frame.get(px, py)[0] != 200 {
                        drawn.push((px as u32, py as u32));
                    }
                }
            }
            let expected: Vec<PixelBox> = tight_box(&drawn).into_iter().collect();
            let got: Vec<PixelBox> = gt.iter().map(|g| g.bbox).collect();
            prop_assert_eq!(got, expected);
        }
    }
}

#[test]
fn presets_render_identically_twice() {
    for name in PRESETS {
        let s = preset(name).unwrap();
        let (f1, g1) = s.render().unwrap();
        let (f2, g2) = s.render().unwrap();
        assert_eq!(g1, g2, "{name}");
        assert!(f1.iter().zip(&f2).all(|(a, b)| a.data() == b.data()), "{name}");
    }
}

#[test]
fn fragmentation_preset_fragments_raw_blobs() {
    use fgrefine::{Pipeline, PipelineConfig};
    let s = preset("fragmentation").unwrap();
    let (frames, _) = s.render().unwrap();
    let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
    let fragmented = frames
        .iter()
        .enumerate()
        .map(|(t, f)| p.process(t as u64, f, None).unwrap())
        .filter(|o| o.raw_boxes.len() >= 2)
        .count();
    assert!(fragmented >= 20, "only {fragmented} frames with two or more raw blobs");
}
