mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use trapsift::manifest::{parse_manifest_str, summarize, to_labeled, Label, LabelPolicy, LabeledItem, LabeledSet};
use trapsift::metrics::{calibrate_threshold, metrics_at, pr_curve};
use trapsift::sampling::{SeededSampler, Stream};
use trapsift::scorestore::{
    join, read_scores, reduce_detections, write_scores, Detection, PrecisionMode, RunManifest, ScoreRecord,
};
use trapsift::splitgen::{balance_classes, cap_class_per_location, random_location_holdout};
use trapsift::EvalSet;

fn small_spec() -> SynthSpec {
    SynthSpec {
        locations: 8,
        seasons: 6,
        heavy_locations: 2,
        heavy_empty: (20, 40),
        light_empty: (0, 12),
        nonempty: (0, 10),
        boxed: 0.5,
    }
}

fn labeled(seed: u64) -> LabeledSet {
    let doc = synthetic_manifest(&mut rng(seed), &small_spec());
    let m = parse_manifest_str(&doc.to_string()).unwrap();
    to_labeled(&m, &LabelPolicy::default()).0
}

fn eval_set() -> impl Strategy<Value = EvalSet> {
    prop::collection::vec((any::<bool>(), 0u32..=20), 2..200).prop_map(|mut v| {
        v[0].0 = true;
        v[1].0 = false;
        EvalSet::from_pairs(v.into_iter().map(|(p, s)| {
            (if p { Label::Nonempty } else { Label::Empty }, s as f64 / 20.0)
        }))
        .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn manifest_round_trip(seed in any::<u64>()) {
        let doc = synthetic_manifest(&mut rng(seed), &small_spec());
        let m = parse_manifest_str(&doc.to_string()).unwrap();
        let again = parse_manifest_str(&m.to_json().to_string()).unwrap();
        prop_assert_eq!(m, again);
    }

    #[test]
    fn labeling_accounts_for_every_image(seed in any::<u64>(), require_bbox in any::<bool>()) {
        let doc = synthetic_manifest(&mut rng(seed), &small_spec());
        let m = parse_manifest_str(&doc.to_string()).unwrap();
        let policy = LabelPolicy::new(["empty"], require_bbox).unwrap();
        let (set, summary) = to_labeled(&m, &policy);
        prop_assert_eq!(set.len() + summary.excluded_count, m.images.len());
        if !require_bbox {
            prop_assert_eq!(summary.excluded_count, 0);
        }
    }

    #[test]
    fn summary_ignores_order(seed in any::<u64>(), shuffle in any::<u64>()) {
        let set = labeled(seed);
        let mut items = set.items.clone();
        items.shuffle(&mut rng(shuffle));
        prop_assert_eq!(summarize(&set), summarize(&LabeledSet::new(items)));
    }

    #[test]
    fn labeled_csv_round_trip(seed in any::<u64>()) {
        let set = labeled(seed);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        prop_assert_eq!(LabeledSet::read_csv(&buf[..]).unwrap(), set);
    }

    #[test]
    fn cap_is_exact_and_order_free(seed in any::<u64>(), cap in 1usize..30, shuffle in any::<u64>()) {
        let set = labeled(seed);
        let capped = cap_class_per_location(&set, Label::Empty, cap, seed).unwrap();
        let before = summarize(&set);
        let after = summarize(&capped);
        for (loc, c) in &before.per_location {
            let got = after.per_location.get(loc).copied().unwrap_or_default();
            prop_assert_eq!(got.empty, c.empty.min(cap));
            prop_assert_eq!(got.nonempty, c.nonempty);
        }
        let mut items = set.items.clone();
        items.shuffle(&mut rng(shuffle));
        let again = cap_class_per_location(&LabeledSet::new(items), Label::Empty, cap, seed).unwrap();
        prop_assert_eq!(capped, again);
    }

    #[test]
    fn balance_equalizes(seed in any::<u64>()) {
        let set = labeled(seed);
        prop_assume!(set.count(Label::Empty) > 0 && set.count(Label::Nonempty) > 0);
        let b = balance_classes(&set, seed).unwrap();
        let m = set.count(Label::Empty).min(set.count(Label::Nonempty));
        prop_assert_eq!(b.count(Label::Empty), m);
        prop_assert_eq!(b.count(Label::Nonempty), m);
        let ids: BTreeSet<&str> = set.items.iter().map(|i| i.image_id.as_str()).collect();
        prop_assert!(b.items.iter().all(|i| ids.contains(i.image_id.as_str())));
    }

    #[test]
    fn holdout_moves_whole_locations(seed in any::<u64>(), k in 0usize..=8) {
        let set = labeled(seed);
        let n_loc = set.locations().len();
        prop_assume!(k <= n_loc);
        let (rest, held) = random_location_holdout(&set, k, seed).unwrap();
        prop_assert_eq!(held.locations().len(), k);
        prop_assert!(rest.locations().is_disjoint(&held.locations()));
        prop_assert_eq!(rest.len() + held.len(), set.len());
    }

    #[test]
    fn sampler_picks_distinct_indices(seed in any::<u64>(), n in 0usize..500, k in 0usize..500) {
        let k = k.min(n);
        let picked = SeededSampler::new(seed, Stream::Balance).choose_indices(n, k);
        prop_assert_eq!(picked.len(), k);
        let unique: BTreeSet<usize> = picked.iter().copied().collect();
        prop_assert_eq!(unique.len(), k);
        prop_assert!(picked.iter().all(|&i| i < n));
        prop_assert_eq!(picked, SeededSampler::new(seed, Stream::Balance).choose_indices(n, k));
    }

    #[test]
    fn reduction_is_order_free(confs in prop::collection::vec(0.0f64..=1.0, 0..12), shuffle in any::<u64>()) {
        let ds: Vec<Detection> = confs.iter().enumerate().map(|(i, &c)| Detection::new(format!("c{}", i % 3), c)).collect();
        let mut shuffled = ds.clone();
        shuffled.shuffle(&mut rng(shuffle));
        let max = confs.iter().copied().fold(0.0, f64::max);
        prop_assert_eq!(reduce_detections(&ds).unwrap(), max);
        prop_assert_eq!(reduce_detections(&shuffled).unwrap(), max);
    }

    #[test]
    fn join_ignores_input_order(seed in any::<u64>(), shuffle in any::<u64>(), drop_every in 2usize..7) {
        let set = labeled(seed);
        prop_assume!(set.len() >= 2);
        let records: Vec<ScoreRecord> = set
            .items
            .iter()
            .enumerate()
            .filter(|(i, _)| i % drop_every != 0)
            .map(|(i, it)| ScoreRecord::classifier(it.image_id.clone(), (i % 10) as f64 / 10.0))
            .collect();
        prop_assume!(!records.is_empty());
        let (e, stats) = join(&records, &set).unwrap();
        prop_assert_eq!(e.len(), records.len());
        prop_assert_eq!(stats.unmatched_labels, set.len() - records.len());
        prop_assert_eq!(stats.unmatched_scores, 0);

        let mut r2 = records.clone();
        r2.shuffle(&mut rng(shuffle));
        let mut items: Vec<LabeledItem> = set.items.clone();
        items.shuffle(&mut rng(shuffle ^ 1));
        let (e2, stats2) = join(&r2, &LabeledSet::new(items)).unwrap();
        prop_assert_eq!(e, e2);
        prop_assert_eq!(stats, stats2);
    }

    #[test]
    fn score_file_round_trip(scores in prop::collection::vec(0.0f64..=1.0, 1..50)) {
        let run = RunManifest {
            run_id: "r".into(),
            model_name: "m".into(),
            precision_mode: PrecisionMode::Float,
            input_resolution: 300,
            width_multiplier: None,
            dataset_split: "val".into(),
            backend_id: "replay".into(),
            background_classes: vec![],
        };
        let records: Vec<ScoreRecord> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ScoreRecord::detector(format!("i{i}"), vec![Detection::new("1", s), Detection::new("2", s / 2.0)], &[]).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_scores(&mut buf, &run, &records).unwrap();
        let (run2, records2) = read_scores(&buf[..]).unwrap();
        prop_assert_eq!(run2, run);
        prop_assert_eq!(records2, records);
    }

    #[test]
    fn recall_never_decreases_along_the_curve(e in eval_set()) {
        let c = pr_curve(&e).unwrap();
        for w in c.points.windows(2) {
            prop_assert!(w[1].recall >= w[0].recall);
            prop_assert!(w[1].tnr <= w[0].tnr);
            prop_assert!(w[1].threshold < w[0].threshold);
        }
        let last = c.points.last().unwrap();
        prop_assert_eq!(last.recall, 1.0);
    }

    #[test]
    fn calibration_is_maximal(e in eval_set(), target in 0.01f64..=1.0) {
        let c = calibrate_threshold(&e, target).unwrap();
        prop_assert!(c.point.recall >= target);
        let items = pairs(&e);
        for s in candidates(&items) {
            if s > c.threshold {
                prop_assert!(brute_counts(&items, s).recall() < target);
            }
        }
    }

    #[test]
    fn replicating_items_keeps_ratios(e in eval_set(), k in 2usize..5) {
        let replicated = EvalSet::from_pairs(
            e.items.iter().flat_map(|i| std::iter::repeat((i.label, i.nonempty_score)).take(k)),
        )
        .unwrap();
        let (a, b) = (pr_curve(&e).unwrap(), pr_curve(&replicated).unwrap());
        prop_assert_eq!(a.points.len(), b.points.len());
        for (p, q) in a.points.iter().zip(&b.points) {
            prop_assert_eq!(p.tp * k as u64, q.tp);
            prop_assert!((p.precision - q.precision).abs() <= 1e-12);
            prop_assert!((p.recall - q.recall).abs() <= 1e-12);
            prop_assert!((p.tnr - q.tnr).abs() <= 1e-12);
        }
    }

    #[test]
    fn monotone_rescaling_keeps_counts(e in eval_set(), t in 0.0f64..=1.0) {
        let squared = EvalSet::from_pairs(e.items.iter().map(|i| (i.label, i.nonempty_score * i.nonempty_score))).unwrap();
        let p = metrics_at(&e, t);
        let q = metrics_at(&squared, t * t);
        prop_assert_eq!((p.tp, p.fp, p.tn, p.fn_), (q.tp, q.fp, q.tn, q.fn_));
    }
}
