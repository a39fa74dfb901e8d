use std::collections::BTreeMap;

use pdzseg_core::contour::{extract_contours, fill_contours};
use pdzseg_core::corrupt::{corrupt, CorruptionKind, CorruptionSpec};
use pdzseg_core::metrics::confusion_counts;
use pdzseg_core::prompt::{gen_prompt, stroke_coverage};
use pdzseg_core::synthetic::{generate_scenes, SceneKind};
use pdzseg_core::train::{apportion, cosine_lr, MixSpec};
use pdzseg_core::{ClassMask, ExperimentConfig, ImageTensor, Preset, PromptKind, VisualPrompt};
use proptest::prelude::*;

fn mask_strategy(max_side: usize) -> impl Strategy<Value = ClassMask> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        proptest::collection::vec(0u8..2, h * w).prop_map(move |labels| ClassMask::new(h, w, labels).unwrap())
    })
}

fn mask_pair(max_side: usize) -> impl Strategy<Value = (ClassMask, ClassMask)> {
    (1..=max_side, 1..=max_side).prop_flat_map(|(h, w)| {
        let labels = proptest::collection::vec(0u8..2, h * w);
        (labels.clone(), labels).prop_map(move |(a, b)| {
            (ClassMask::new(h, w, a).unwrap(), ClassMask::new(h, w, b).unwrap())
        })
    })
}

fn blob_mask() -> impl Strategy<Value = ClassMask> {
    (16usize..72, any::<u64>(), prop_oneof![Just(SceneKind::SingleBlob), Just(SceneKind::TwoBlob)])
        .prop_map(|(side, seed, kind)| generate_scenes(kind, 1, side, side, seed).remove(0).1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_and_dice_are_bounded_symmetric_and_ordered((pred, gt) in mask_pair(12)) {
        let ab = confusion_counts(&pred, &gt).unwrap();
        let ba = confusion_counts(&gt, &pred).unwrap();
        for class in 0..2 {
            match (ab.iou(class), ab.dice(class)) {
                (Ok(iou), Ok(dice)) => {
                    prop_assert!((0.0..=1.0).contains(&iou));
                    prop_assert!((0.0..=1.0).contains(&dice));
                    prop_assert!(dice >= iou);
                    prop_assert_eq!(iou, ba.iou(class).unwrap());
                    prop_assert_eq!(dice, ba.dice(class).unwrap());
                }
                (Err(_), Err(_)) => prop_assert!(ba.iou(class).is_err()),
                other => prop_assert!(false, "iou and dice disagree on definedness: {:?}", other),
            }
        }
    }

    #[test]
    fn a_mask_matches_itself(mask in mask_strategy(12)) {
        let counts = confusion_counts(&mask, &mask).unwrap();
        for class in 0..2u8 {
            if mask.count(class) > 0 {
                prop_assert_eq!(counts.iou(class as usize).unwrap(), 1.0);
            }
        }
    }

    #[test]
    fn nearest_resize_keeps_the_label_set(mask in mask_strategy(10), h in 1usize..30, w in 1usize..30) {
        let out = mask.resize_nearest(h, w);
        prop_assert_eq!((out.height(), out.width()), (h, w));
        for &l in out.labels() {
            prop_assert!(mask.labels().contains(&l));
        }
    }

    #[test]
    fn contours_round_trip_on_blobs(mask in blob_mask()) {
        let filled = fill_contours(&extract_contours(&mask), mask.height(), mask.width());
        prop_assert_eq!(filled, mask);
    }

    #[test]
    fn prompts_stay_in_the_zone(mask in blob_mask(), seed in any::<u64>()) {
        let zone = |p: &pdzseg_core::prompt::Point| mask.is_zone(p.x() as usize, p.y() as usize);
        for kind in [PromptKind::Point, PromptKind::ShortScribble, PromptKind::LongScribble] {
            let prompt = gen_prompt(kind, &mask, seed).unwrap();
            prop_assert!(prompt.points.iter().all(zone), "{} leaves the zone", kind);
            prop_assert_eq!(&prompt, &gen_prompt(kind, &mask, seed).unwrap());
        }
        let bbox = gen_prompt(PromptKind::Bbox, &mask, seed).unwrap();
        let (a, b) = (bbox.points[0], bbox.points[1]);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.is_zone(x, y) {
                    let (x, y) = (x as i64, y as i64);
                    prop_assert!(a.x() <= x && x <= b.x() && a.y() <= y && y <= b.y());
                }
            }
        }
    }

    #[test]
    fn prompt_documents_round_trip(mask in blob_mask(), kind in proptest::sample::select(PromptKind::ALL.to_vec())) {
        let prompt = gen_prompt(kind, &mask, 0).unwrap();
        let back = VisualPrompt::from_document(&prompt.to_document(), mask.height(), mask.width()).unwrap();
        prop_assert_eq!(back, prompt);
    }

    #[test]
    fn strokes_cover_their_vertices(mask in blob_mask()) {
        let prompt = gen_prompt(PromptKind::LongScribble, &mask, 0).unwrap();
        let cover = stroke_coverage(&prompt, mask.height(), mask.width()).unwrap();
        for p in &prompt.points {
            prop_assert!(cover[p.y() as usize * mask.width() + p.x() as usize]);
        }
    }

    #[test]
    fn cosine_schedule_decays_monotonically(total in 1usize..5000, base in 1e-6f64..1.0) {
        let mut prev = f64::INFINITY;
        for step in (0..=total).step_by((total / 50).max(1)) {
            let lr = cosine_lr(step, total, base).unwrap();
            prop_assert!(lr <= prev + 1e-15);
            prop_assert!((0.0..=base + 1e-15).contains(&lr));
            prev = lr;
        }
        prop_assert!(cosine_lr(total + 1, total, base).is_err());
    }

    #[test]
    fn apportion_is_exact_within_one(n in 0usize..5000, p in 0.0f64..=1.0) {
        for mix in [MixSpec::ratio(PromptKind::Bbox, p), MixSpec::four_way()] {
            let fractions = mix.fractions().unwrap();
            let counts = apportion(&fractions, n);
            prop_assert_eq!(counts.values().sum::<usize>(), n);
            for (k, f) in &fractions {
                prop_assert!((counts[k] as f64 - f * n as f64).abs() < 1.0);
            }
        }
    }

    #[test]
    fn corruption_is_seeded_and_bounded(
        seed in any::<u64>(),
        severity in 1u8..=5,
        kind in proptest::sample::select(CorruptionKind::ALL.to_vec()),
    ) {
        let (image, _) = generate_scenes(SceneKind::SingleBlob, 1, 24, 24, 1).remove(0);
        let spec = CorruptionSpec::new(kind, severity, seed).unwrap();
        let out = corrupt(&image, &spec).unwrap();
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(out, corrupt(&image, &spec).unwrap());
    }

    #[test]
    fn bilinear_resize_stays_in_range(h in 1usize..20, w in 1usize..20, oh in 1usize..40, ow in 1usize..40, seed in any::<u64>()) {
        let (img, _) = generate_scenes(SceneKind::SingleBlob, 1, 16, 16, seed).remove(0);
        let img = img.resize_bilinear(h, w);
        let out: ImageTensor = img.resize_bilinear(oh, ow);
        prop_assert_eq!((out.height(), out.width()), (oh, ow));
        prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn config_hash_survives_serialization() {
    for preset in [Preset::Full, Preset::Desk] {
        let cfg = ExperimentConfig::preset(preset);
        let back: ExperimentConfig = serde_json::from_str(&cfg.canonical_json().unwrap()).unwrap();
        assert_eq!(cfg.hash().unwrap(), back.hash().unwrap());
    }
    let counts: BTreeMap<_, _> = apportion(&MixSpec::four_way().fractions().unwrap(), 1480);
    assert!(counts.values().all(|&c| c == 370));
}
