//! Partitioning policies: location-disjoint and season-based splits,
//! per-location caps, class balancing, box-only subsets and random
//! location holdouts.
//!
//! Every operation returns items sorted by `image_id`, so results do not
//! depend on input order, and every seeded operation is a pure function of
//! its input and seed.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::manifest::{ClassCounts, Label, LabeledItem, LabeledSet, Manifest, ManifestError};
use crate::sampling::{SeededSampler, Stream};

#[derive(Debug, thiserror::Error)]
pub enum SplitError {
    #[error("locations without a partition: {}", .0.join(", "))]
    UnassignedLocations(Vec<String>),
    #[error("seasons without a partition: {}", .0.join(", "))]
    UnassignedSeasons(Vec<String>),
    #[error("items without a season: {}", .0.join(", "))]
    MissingSeason(Vec<String>),
    #[error("cannot balance: class {0} is absent")]
    MissingClass(Label),
    #[error("holdout of {requested} locations requested but only {available} present")]
    NotEnoughLocations { requested: usize, available: usize },
    #[error("cap must be at least 1")]
    ZeroCap,
    #[error("bad assignment row {row}: {message}")]
    Assignment { row: usize, message: String },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    Train,
    ValDev,
    Val,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Partition::Train, Partition::ValDev, Partition::Val];

    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Train => "train",
            Partition::ValDev => "val_dev",
            Partition::Val => "val",
        }
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Partition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Partition::Train),
            "val_dev" => Ok(Partition::ValDev),
            "val" => Ok(Partition::Val),
            other => Err(format!("unknown partition {other:?}")),
        }
    }
}

/// Key → partition mapping, used for both locations and seasons.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub mapping: BTreeMap<String, Partition>,
}

pub type LocationAssignment = Assignment;
pub type SeasonAssignment = Assignment;

impl Assignment {
    pub fn new<K: Into<String>>(pairs: impl IntoIterator<Item = (K, Partition)>) -> Self {
        Assignment {
            mapping: pairs.into_iter().map(|(k, p)| (k.into(), p)).collect(),
        }
    }

    /// The season mapping used for time-based splits: the first four seasons
    /// train, the fifth is val_dev and the sixth is val.
    pub fn first_six_seasons<S: AsRef<str>>(seasons: [S; 6]) -> Self {
        let parts = [
            Partition::Train,
            Partition::Train,
            Partition::Train,
            Partition::Train,
            Partition::ValDev,
            Partition::Val,
        ];
        Assignment::new(seasons.iter().map(|s| s.as_ref().to_string()).zip(parts))
    }

    /// Reads a `key,partition` CSV. A header row is optional.
    pub fn read_csv(reader: impl Read) -> Result<Self, SplitError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
        let mut mapping = BTreeMap::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let (Some(key), Some(part)) = (record.get(0), record.get(1)) else {
                return Err(SplitError::Assignment {
                    row: row + 1,
                    message: "expected two columns".into(),
                });
            };
            let key = key.trim();
            let part = part.trim();
            if row == 0 && part == "partition" {
                continue;
            }
            let part: Partition = part.parse().map_err(|message| SplitError::Assignment {
                row: row + 1,
                message,
            })?;
            if mapping.insert(key.to_string(), part).is_some() {
                return Err(SplitError::Assignment {
                    row: row + 1,
                    message: format!("key {key:?} assigned twice"),
                });
            }
        }
        Ok(Assignment { mapping })
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self, SplitError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| SplitError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(file)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub policy: String,
    pub seed: Option<u64>,
    pub steps: Vec<String>,
    pub counts: BTreeMap<String, ClassCounts>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitResult {
    pub train: LabeledSet,
    pub val_dev: LabeledSet,
    pub val: LabeledSet,
    pub provenance: Provenance,
}

impl SplitResult {
    pub fn get(&self, p: Partition) -> &LabeledSet {
        match p {
            Partition::Train => &self.train,
            Partition::ValDev => &self.val_dev,
            Partition::Val => &self.val,
        }
    }

    pub fn get_mut(&mut self, p: Partition) -> &mut LabeledSet {
        match p {
            Partition::Train => &mut self.train,
            Partition::ValDev => &mut self.val_dev,
            Partition::Val => &mut self.val,
        }
    }

    fn refresh_counts(&mut self) {
        self.provenance.counts = Partition::ALL
            .iter()
            .map(|&p| {
                let set = self.get(p);
                let counts = ClassCounts {
                    empty: set.count(Label::Empty),
                    nonempty: set.count(Label::Nonempty),
                };
                (p.as_str().to_string(), counts)
            })
            .collect();
    }

    /// Records a pipeline step and recomputes the per-partition counts.
    pub fn record_step(&mut self, step: impl Into<String>) {
        self.provenance.steps.push(step.into());
        self.refresh_counts();
    }

    /// Writes `train.csv`, `val_dev.csv`, `val.csv` and `provenance.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), SplitError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|source| SplitError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        for p in Partition::ALL {
            self.get(p).write_csv_file(dir.join(format!("{p}.csv")))?;
        }
        let path = dir.join("provenance.json");
        let mut text = serde_json::to_string_pretty(&self.provenance).expect("provenance json");
        text.push('\n');
        fs::write(&path, text).map_err(|source| SplitError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

fn sorted(mut items: Vec<LabeledItem>) -> LabeledSet {
    items.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    LabeledSet { items }
}

fn route<F>(set: &LabeledSet, policy: String, key: F) -> SplitResult
where
    F: Fn(&LabeledItem) -> Partition,
{
    let mut parts: [Vec<LabeledItem>; 3] = Default::default();
    for item in &set.items {
        let idx = match key(item) {
            Partition::Train => 0,
            Partition::ValDev => 1,
            Partition::Val => 2,
        };
        parts[idx].push(item.clone());
    }
    let [train, val_dev, val] = parts;
    let mut result = SplitResult {
        train: sorted(train),
        val_dev: sorted(val_dev),
        val: sorted(val),
        provenance: Provenance {
            policy: policy.clone(),
            seed: None,
            steps: Vec::new(),
            counts: BTreeMap::new(),
        },
    };
    result.record_step(policy);
    result
}

pub fn split_by_location(set: &LabeledSet, a: &LocationAssignment) -> Result<SplitResult, SplitError> {
    let missing: Vec<String> = set
        .locations()
        .into_iter()
        .filter(|l| !a.mapping.contains_key(*l))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(SplitError::UnassignedLocations(missing));
    }
    Ok(route(set, "split_by_location".into(), |item| a.mapping[&item.location_id]))
}

pub fn split_by_time(set: &LabeledSet, a: &SeasonAssignment) -> Result<SplitResult, SplitError> {
    let mut no_season: Vec<String> = set
        .items
        .iter()
        .filter(|i| i.season.is_none())
        .map(|i| i.image_id.clone())
        .collect();
    if !no_season.is_empty() {
        no_season.sort();
        return Err(SplitError::MissingSeason(no_season));
    }
    let missing: BTreeSet<String> = set
        .items
        .iter()
        .filter_map(|i| i.season.as_ref())
        .filter(|s| !a.mapping.contains_key(*s))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(SplitError::UnassignedSeasons(missing.into_iter().collect()));
    }
    Ok(route(set, "split_by_time".into(), |item| {
        a.mapping[item.season.as_ref().expect("checked above")]
    }))
}

/// Keeps at most `cap` items of `class` per location, sampled uniformly
/// without replacement. Locations are visited in sorted order and items
/// within a location by `image_id`, so the draw is independent of input
/// order.
pub fn cap_class_per_location(
    set: &LabeledSet,
    class: Label,
    cap: usize,
    seed: u64,
) -> Result<LabeledSet, SplitError> {
    if cap == 0 {
        return Err(SplitError::ZeroCap);
    }
    let mut by_location: BTreeMap<&str, Vec<&LabeledItem>> = BTreeMap::new();
    let mut out = Vec::with_capacity(set.len());
    for item in &set.items {
        if item.label == class {
            by_location.entry(&item.location_id).or_default().push(item);
        } else {
            out.push(item.clone());
        }
    }
    let mut sampler = SeededSampler::new(seed, Stream::CapPerLocation);
    for (_, mut items) in by_location {
        items.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if items.len() <= cap {
            out.extend(items.into_iter().cloned());
        } else {
            for i in sampler.choose_indices(items.len(), cap) {
                out.push(items[i].clone());
            }
        }
    }
    Ok(sorted(out))
}

/// Downsamples the majority class to the minority count.
pub fn balance_classes(set: &LabeledSet, seed: u64) -> Result<LabeledSet, SplitError> {
    let mut empty: Vec<&LabeledItem> = Vec::new();
    let mut nonempty: Vec<&LabeledItem> = Vec::new();
    for item in &set.items {
        match item.label {
            Label::Empty => empty.push(item),
            Label::Nonempty => nonempty.push(item),
        }
    }
    if empty.is_empty() {
        return Err(SplitError::MissingClass(Label::Empty));
    }
    if nonempty.is_empty() {
        return Err(SplitError::MissingClass(Label::Nonempty));
    }
    let (mut majority, minority) = if empty.len() >= nonempty.len() {
        (empty, nonempty)
    } else {
        (nonempty, empty)
    };
    majority.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut sampler = SeededSampler::new(seed, Stream::Balance);
    let mut out: Vec<LabeledItem> = minority.into_iter().cloned().collect();
    let keep = out.len();
    out.extend(
        sampler
            .choose_indices(majority.len(), keep)
            .into_iter()
            .map(|i| majority[i].clone()),
    );
    Ok(sorted(out))
}

/// Drops nonempty items without any bounding box; empty items stay.
pub fn select_bbox_subset(set: &LabeledSet, manifest: &Manifest) -> LabeledSet {
    let boxed = manifest.boxed_image_ids();
    sorted(
        set.items
            .iter()
            .filter(|i| i.label == Label::Empty || boxed.contains(i.image_id.as_str()))
            .cloned()
            .collect(),
    )
}

/// Moves `k` randomly chosen locations, wholesale, into the holdout.
/// Returns `(remainder, holdout)`.
pub fn random_location_holdout(
    set: &LabeledSet,
    k: usize,
    seed: u64,
) -> Result<(LabeledSet, LabeledSet), SplitError> {
    let locations: Vec<&str> = set.locations().into_iter().collect();
    if locations.len() < k {
        return Err(SplitError::NotEnoughLocations {
            requested: k,
            available: locations.len(),
        });
    }
    let mut sampler = SeededSampler::new(seed, Stream::LocationHoldout);
    let held: HashSet<&str> = sampler
        .choose_indices(locations.len(), k)
        .into_iter()
        .map(|i| locations[i])
        .collect();
    let (holdout, remainder): (Vec<LabeledItem>, Vec<LabeledItem>) = set
        .items
        .iter()
        .cloned()
        .partition(|i| held.contains(i.location_id.as_str()));
    Ok((sorted(remainder), sorted(holdout)))
}

/// Assembles the full split pipeline:
/// route → optional val_dev holdout from train → optional box-only subset
/// → cap on train and val_dev → optional balancing.
#[derive(Debug, Clone)]
pub struct SplitPlan {
    pub holdout_locations: Option<usize>,
    pub bbox_only: bool,
    pub empty_cap: Option<usize>,
    pub balance: Vec<Partition>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn apply(&self, mut split: SplitResult, manifest: Option<&Manifest>) -> Result<SplitResult, SplitError> {
        split.provenance.seed = Some(self.seed);
        if let Some(k) = self.holdout_locations {
            let (remainder, holdout) = random_location_holdout(&split.train, k, self.seed)?;
            let mut val_dev = holdout.items;
            val_dev.extend(split.val_dev.items.drain(..));
            split.train = remainder;
            split.val_dev = sorted(val_dev);
            split.record_step(format!("random_location_holdout(k={k})"));
        }
        if self.bbox_only {
            let manifest = manifest.ok_or_else(|| {
                SplitError::Manifest(ManifestError::Integrity {
                    message: "box-only subset needs the manifest".into(),
                    ids: vec![],
                })
            })?;
            for p in Partition::ALL {
                let subset = select_bbox_subset(split.get(p), manifest);
                *split.get_mut(p) = subset;
            }
            split.record_step("select_bbox_subset");
        }
        if let Some(cap) = self.empty_cap {
            for p in [Partition::Train, Partition::ValDev] {
                let capped = cap_class_per_location(split.get(p), Label::Empty, cap, self.seed)?;
                *split.get_mut(p) = capped;
            }
            split.record_step(format!("cap_class_per_location(empty, cap={cap}) on train,val_dev"));
        }
        for &p in &self.balance {
            let balanced = balance_classes(split.get(p), self.seed)?;
            *split.get_mut(p) = balanced;
            split.record_step(format!("balance_classes on {p}"));
        }
        Ok(split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, label: Label, loc: &str, season: Option<&str>) -> LabeledItem {
        LabeledItem {
            image_id: id.into(),
            label,
            location_id: loc.into(),
            season: season.map(str::to_string),
        }
    }

    fn many(n: usize, label: Label, loc: &str) -> Vec<LabeledItem> {
        (0..n)
            .map(|i| item(&format!("{loc}-{label}-{i:05}"), label, loc, None))
            .collect()
    }

    #[test]
    fn location_split_routes_items() {
        let mut items = many(3, Label::Empty, "L1");
        items.extend(many(2, Label::Nonempty, "L2"));
        let a = Assignment::new([("L1", Partition::Train), ("L2", Partition::Val)]);
        let r = split_by_location(&LabeledSet::new(items), &a).unwrap();
        assert_eq!((r.train.len(), r.val_dev.len(), r.val.len()), (3, 0, 2));
    }

    #[test]
    fn single_location_degenerate() {
        let a = Assignment::new([("L1", Partition::Val)]);
        let r = split_by_location(&LabeledSet::new(many(4, Label::Empty, "L1")), &a).unwrap();
        assert_eq!((r.train.len(), r.val_dev.len(), r.val.len()), (0, 0, 4));
    }

    #[test]
    fn unassigned_location_listed() {
        let a = Assignment::new([("L1", Partition::Val)]);
        let mut items = many(1, Label::Empty, "L1");
        items.extend(many(1, Label::Empty, "L9"));
        match split_by_location(&LabeledSet::new(items), &a) {
            Err(SplitError::UnassignedLocations(l)) => assert_eq!(l, vec!["L9".to_string()]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn season_split_four_one_one() {
        let seasons = ["S1", "S2", "S3", "S4", "S5", "S6"];
        let items = seasons
            .iter()
            .enumerate()
            .map(|(i, s)| item(&format!("i{i}"), Label::Empty, "L", Some(s)))
            .collect();
        let r = split_by_time(&LabeledSet::new(items), &Assignment::first_six_seasons(seasons)).unwrap();
        assert_eq!((r.train.len(), r.val_dev.len(), r.val.len()), (4, 1, 1));
        assert_eq!(r.val_dev.items[0].season.as_deref(), Some("S5"));
        assert_eq!(r.val.items[0].season.as_deref(), Some("S6"));
    }

    #[test]
    fn season_split_single_season() {
        let items = (0..5).map(|i| item(&format!("i{i}"), Label::Empty, "L", Some("S1"))).collect();
        let a = Assignment::new([("S1", Partition::Train)]);
        let r = split_by_time(&LabeledSet::new(items), &a).unwrap();
        assert_eq!(r.train.len(), 5);
    }

    #[test]
    fn season_split_requires_season() {
        let items = vec![item("x", Label::Empty, "L", None)];
        let a = Assignment::new([("S1", Partition::Train)]);
        assert!(matches!(
            split_by_time(&LabeledSet::new(items), &a),
            Err(SplitError::MissingSeason(_))
        ));
    }

    #[test]
    fn season_split_ignores_input_order() {
        let mut items: Vec<LabeledItem> = (0..30)
            .map(|i| item(&format!("i{i:02}"), Label::Empty, "L", Some(["S1", "S5", "S6"][i % 3])))
            .collect();
        let a = Assignment::first_six_seasons(["S1", "S2", "S3", "S4", "S5", "S6"]);
        let first = split_by_time(&LabeledSet::new(items.clone()), &a).unwrap();
        items.reverse();
        items.swap(3, 17);
        let second = split_by_time(&LabeledSet::new(items), &a).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn cap_at_thousand() {
        let mut items = many(1500, Label::Empty, "A");
        items.extend(many(3, Label::Empty, "B"));
        items.extend(many(1200, Label::Nonempty, "A"));
        let out = cap_class_per_location(&LabeledSet::new(items), Label::Empty, 1000, 5).unwrap();
        let s = crate::manifest::summarize(&out);
        assert_eq!(s.per_location["A"].empty, 1000);
        assert_eq!(s.per_location["A"].nonempty, 1200);
        assert_eq!(s.per_location["B"].empty, 3);
    }

    #[test]
    fn cap_is_seeded() {
        let set = LabeledSet::new(many(50, Label::Empty, "A"));
        let a = cap_class_per_location(&set, Label::Empty, 10, 1).unwrap();
        let b = cap_class_per_location(&set, Label::Empty, 10, 1).unwrap();
        let c = cap_class_per_location(&set, Label::Empty, 10, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.len(), 10);
        assert_ne!(a, c);
        assert!(cap_class_per_location(&set, Label::Empty, 0, 1).is_err());
    }

    #[test]
    fn balance_counts() {
        let mut items = many(10, Label::Empty, "A");
        items.extend(many(4, Label::Nonempty, "A"));
        let out = balance_classes(&LabeledSet::new(items), 3).unwrap();
        assert_eq!((out.count(Label::Empty), out.count(Label::Nonempty)), (4, 4));

        let mut even = many(5, Label::Empty, "A");
        even.extend(many(5, Label::Nonempty, "A"));
        let set = sorted(even);
        assert_eq!(balance_classes(&set, 3).unwrap(), set);

        assert!(matches!(
            balance_classes(&LabeledSet::new(many(3, Label::Empty, "A")), 0),
            Err(SplitError::MissingClass(Label::Nonempty))
        ));
    }

    #[test]
    fn balance_is_seeded() {
        let mut items = many(1000, Label::Empty, "A");
        items.extend(many(400, Label::Nonempty, "B"));
        let set = LabeledSet::new(items);
        assert_eq!(balance_classes(&set, 11).unwrap(), balance_classes(&set, 11).unwrap());
    }

    #[test]
    fn holdout_takes_whole_locations() {
        let items: Vec<LabeledItem> = (0..30)
            .flat_map(|l| many(3, Label::Empty, &format!("L{l:02}")))
            .collect();
        let set = LabeledSet::new(items);
        let (rest, held) = random_location_holdout(&set, 20, 9).unwrap();
        assert_eq!(held.locations().len(), 20);
        assert_eq!(rest.locations().len(), 10);
        assert!(held.locations().is_disjoint(&rest.locations()));
        let (rest23, held23) = random_location_holdout(&set, 23, 9).unwrap();
        assert_eq!(held23.locations().len(), 23);
        assert_eq!(rest23.len() + held23.len(), 90);

        let small = LabeledSet::new((0..5).flat_map(|l| many(1, Label::Empty, &format!("L{l}"))).collect());
        let (rest, held) = random_location_holdout(&small, 5, 0).unwrap();
        assert!(rest.is_empty());
        assert_eq!(held.len(), 5);
        assert!(matches!(
            random_location_holdout(&small, 6, 0),
            Err(SplitError::NotEnoughLocations { requested: 6, available: 5 })
        ));
    }

    #[test]
    fn assignment_csv_with_and_without_header() {
        let a = Assignment::read_csv("key,partition\nL1,train\nL2,val_dev\n".as_bytes()).unwrap();
        let b = Assignment::read_csv("L1,train\nL2,val_dev\n".as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mapping["L2"], Partition::ValDev);
        assert!(Assignment::read_csv("L1,test\n".as_bytes()).is_err());
        assert!(Assignment::read_csv("L1,train\nL1,val\n".as_bytes()).is_err());
    }
}
