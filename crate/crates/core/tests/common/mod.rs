//! Shared test support: a brute-force metrics oracle and data generators.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use trapsift::manifest::Label;
use trapsift::EvalSet;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

pub fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
    pub fn tnr(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }
}

/// Full rescan: predicted nonempty iff score >= t.
pub fn brute_counts(items: &[(bool, f64)], t: f64) -> Counts {
    let mut c = Counts { tp: 0, fp: 0, tn: 0, fn_: 0 };
    for &(pos, s) in items {
        match (pos, s >= t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

/// Distinct scores, highest first.
pub fn candidates(items: &[(bool, f64)]) -> Vec<f64> {
    let mut c: Vec<f64> = items.iter().map(|i| i.1).collect();
    c.sort_by(|a, b| b.partial_cmp(a).unwrap());
    c.dedup();
    c
}

/// `+inf` followed by every distinct score, each rescanned from scratch.
pub fn brute_curve(items: &[(bool, f64)]) -> Vec<(f64, Counts)> {
    std::iter::once(f64::INFINITY)
        .chain(candidates(items))
        .map(|t| (t, brute_counts(items, t)))
        .collect()
}

/// Largest distinct score whose recall reaches the target.
pub fn brute_calibrate(items: &[(bool, f64)], target: f64) -> (f64, Counts) {
    for t in candidates(items) {
        let c = brute_counts(items, t);
        if c.recall() >= target {
            return (t, c);
        }
    }
    unreachable!("the lowest score always gives recall 1")
}

pub fn brute_auc(curve: &[(f64, Counts)]) -> f64 {
    curve
        .windows(2)
        .map(|w| (w[1].1.recall() - w[0].1.recall()) * (w[0].1.precision() + w[1].1.precision()) / 2.0)
        .sum()
}

pub fn pairs(e: &EvalSet) -> Vec<(bool, f64)> {
    e.items.iter().map(|i| (i.label.is_positive(), i.nonempty_score)).collect()
}

/// Random EvalSet with both classes present. Scores are usually drawn from
/// a coarse grid so that ties are common.
pub fn random_eval_set(r: &mut ChaCha8Rng, min_n: usize, max_n: usize) -> EvalSet {
    let n = (((min_n as f64).ln() + r.gen::<f64>() * ((max_n as f64).ln() - (min_n as f64).ln())).exp()).round() as usize;
    let n = n.clamp(min_n.max(2), max_n);
    let levels: Option<u32> = match r.gen_range(0..6) {
        0 if n <= 1500 => None,
        0 | 1 => Some(2),
        2 => Some(11),
        3 => Some(64),
        _ => Some(r.gen_range(2..=512)),
    };
    let prevalence = r.gen_range(0.05..0.95);
    let items = (0..n).map(|i| {
        let positive = match i {
            0 => true,
            1 => false,
            _ => r.gen::<f64>() < prevalence,
        };
        let u: f64 = r.gen();
        let raw = if positive { u.sqrt() } else { u * u };
        let score = match levels {
            Some(l) => (raw * (l - 1) as f64).round() / (l - 1) as f64,
            None => raw,
        };
        (if positive { Label::Nonempty } else { Label::Empty }, score)
    });
    EvalSet::from_pairs(items.collect::<Vec<_>>()).unwrap()
}

pub struct SynthSpec {
    pub locations: usize,
    pub seasons: usize,
    /// Locations whose empty count exceeds this are "heavy".
    pub heavy_locations: usize,
    pub heavy_empty: (usize, usize),
    pub light_empty: (usize, usize),
    pub nonempty: (usize, usize),
    /// Fraction of nonempty images carrying a box.
    pub boxed: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            locations: 60,
            seasons: 6,
            heavy_locations: 8,
            heavy_empty: (1001, 1600),
            light_empty: (0, 300),
            nonempty: (1, 150),
            boxed: 0.6,
        }
    }
}

pub fn location_name(i: usize) -> String {
    format!("L{i:03}")
}

pub fn season_name(i: usize) -> String {
    format!("S{}", i + 1)
}

/// COCO Camera Traps document with the given shape. Image ids are unique
/// strings; every image carries exactly one annotation.
pub fn synthetic_manifest(r: &mut ChaCha8Rng, spec: &SynthSpec) -> Value {
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut next = 0usize;
    for loc in 0..spec.locations {
        let (lo, hi) = if loc < spec.heavy_locations {
            spec.heavy_empty
        } else {
            spec.light_empty
        };
        let empties = r.gen_range(lo..=hi);
        let nonempties = r.gen_range(spec.nonempty.0..=spec.nonempty.1);
        for k in 0..empties + nonempties {
            let id = format!("img{next:07}");
            next += 1;
            let season = season_name(r.gen_range(0..spec.seasons));
            images.push(json!({
                "id": id,
                "file_name": format!("{id}.jpg"),
                "location": location_name(loc),
                "season": season,
                "width": 640,
                "height": 480,
                "byte_size": r.gen_range(50_000u64..400_000),
            }));
            if k < empties {
                annotations.push(json!({"id": format!("a{id}"), "image_id": id, "category_id": 0}));
            } else {
                let cat = r.gen_range(1..=3);
                if r.gen::<f64>() < spec.boxed {
                    annotations.push(json!({
                        "id": format!("a{id}"), "image_id": id, "category_id": cat,
                        "bbox": [10.0, 20.0, 100.0, 80.0],
                    }));
                } else {
                    annotations.push(json!({"id": format!("a{id}"), "image_id": id, "category_id": cat}));
                }
            }
        }
    }
    json!({
        "info": {"description": "synthetic"},
        "images": images,
        "annotations": annotations,
        "categories": [
            {"id": 0, "name": "empty"},
            {"id": 1, "name": "deer"},
            {"id": 2, "name": "fox"},
            {"id": 3, "name": "human"},
        ],
    })
}

/// Writes a small PNG with a uniform colour.
pub fn write_png(dir: &Path, name: &str, value: u8) -> PathBuf {
    let img = image::RgbImage::from_pixel(16, 12, image::Rgb([value, value, value]));
    let p = dir.join(name);
    img.save(&p).unwrap();
    p
}
