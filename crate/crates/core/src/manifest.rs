//! Camera-trap dataset manifests and the binary empty/nonempty labeling.
//!
//! Manifests use the COCO Camera Traps layout: top-level `images`,
//! `annotations` and `categories` arrays. Only the fields needed for
//! labeling and splitting are kept; anything else in the document is
//! ignored.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Categories treated as "no animal" when no policy is given.
pub const DEFAULT_EMPTY_CATEGORIES: [&str; 2] = ["empty", "blank"];

/// Boxes may overhang the image border by this many pixels before the
/// manifest is rejected. Public annotations contain sub-pixel overhangs.
const BOX_BOUNDS_SLACK: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("manifest integrity error: {message}: {}", ids.join(", "))]
    Integrity { message: String, ids: Vec<String> },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ManifestError {
    fn integrity(message: impl Into<String>, ids: Vec<String>) -> Self {
        ManifestError::Integrity {
            message: message.into(),
            ids,
        }
    }

    fn from_json(err: serde_json::Error) -> Self {
        ManifestError::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// Binary target. `Nonempty` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Empty,
    Nonempty,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Nonempty
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Empty => "empty",
            Label::Nonempty => "nonempty",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empty" => Ok(Label::Empty),
            "nonempty" => Ok(Label::Nonempty),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub file_name: String,
    pub location_id: String,
    pub season: Option<String>,
    pub category: String,
    pub byte_size: Option<u64>,
    pub width: Option<u32>,
    pub height: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub image_id: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Counts of records dropped while parsing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    pub corrupt_excluded: usize,
    pub unannotated_excluded: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub images: Vec<ImageRecord>,
    pub boxes: Vec<BoundingBox>,
    pub categories: BTreeSet<String>,
    pub locations: BTreeSet<String>,
    pub stats: ParseStats,
}

// Raw COCO Camera Traps document. Ids and locations are strings in some
// releases and integers in others.
#[derive(Deserialize)]
struct RawDocument {
    #[serde(default)]
    images: Vec<RawImage>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<RawCategory>,
}

#[derive(Deserialize)]
struct RawImage {
    id: Value,
    file_name: String,
    location: Value,
    #[serde(default)]
    season: Option<Value>,
    #[serde(default)]
    corrupt: Option<Value>,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    #[serde(default)]
    byte_size: Option<u64>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: Value,
    category_id: Value,
    #[serde(default)]
    bbox: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct RawCategory {
    id: Value,
    name: String,
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn truthy(v: &Option<Value>) -> bool {
    match v {
        None | Some(Value::Null) => false,
        Some(Value::Bool(b)) => *b,
        Some(Value::Number(n)) => n.as_f64().is_some_and(|x| x != 0.0),
        Some(Value::String(s)) => !s.is_empty() && s != "false" && s != "0",
        Some(_) => true,
    }
}

pub fn parse_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let mut text = String::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
    parse_manifest_str(&text)
}

pub fn parse_manifest_str(text: &str) -> Result<Manifest, ManifestError> {
    let raw: RawDocument = serde_json::from_str(text).map_err(ManifestError::from_json)?;

    let mut category_names = HashMap::new();
    for c in &raw.categories {
        let id = scalar_to_string(&c.id)
            .ok_or_else(|| ManifestError::integrity("non-scalar category id", vec![c.name.clone()]))?;
        category_names.insert(id, c.name.clone());
    }

    let mut stats = ParseStats::default();
    let mut seen = HashSet::new();
    let mut duplicates = Vec::new();
    let mut bad_ids = Vec::new();
    let mut kept: Vec<ImageRecord> = Vec::with_capacity(raw.images.len());
    let mut corrupt = HashSet::new();
    for img in &raw.images {
        let Some(image_id) = scalar_to_string(&img.id) else {
            bad_ids.push(img.file_name.clone());
            continue;
        };
        if !seen.insert(image_id.clone()) {
            duplicates.push(image_id);
            continue;
        }
        if truthy(&img.corrupt) {
            stats.corrupt_excluded += 1;
            corrupt.insert(image_id);
            continue;
        }
        if img.width == Some(0) || img.height == Some(0) {
            bad_ids.push(image_id);
            continue;
        }
        kept.push(ImageRecord {
            image_id,
            file_name: img.file_name.clone(),
            location_id: scalar_to_string(&img.location).unwrap_or_default(),
            season: img.season.as_ref().and_then(scalar_to_string),
            category: String::new(),
            byte_size: img.byte_size,
            width: img.width,
            height: img.height,
        });
    }
    if !duplicates.is_empty() {
        return Err(ManifestError::integrity("duplicate image ids", duplicates));
    }
    if !bad_ids.is_empty() {
        return Err(ManifestError::integrity("invalid image records", bad_ids));
    }

    let index: HashMap<String, usize> = kept
        .iter()
        .enumerate()
        .map(|(i, r)| (r.image_id.clone(), i))
        .collect();

    let mut dangling = Vec::new();
    let mut unknown_categories = Vec::new();
    let mut bad_boxes = Vec::new();
    let mut category_of: Vec<Option<String>> = vec![None; kept.len()];
    let mut boxes = Vec::new();
    for ann in &raw.annotations {
        let image_id = scalar_to_string(&ann.image_id).unwrap_or_default();
        if corrupt.contains(&image_id) {
            continue;
        }
        let Some(&slot) = index.get(&image_id) else {
            dangling.push(image_id);
            continue;
        };
        let cat_key = scalar_to_string(&ann.category_id).unwrap_or_default();
        let Some(name) = category_names.get(&cat_key) else {
            unknown_categories.push(cat_key);
            continue;
        };
        // First annotation decides the image category.
        if category_of[slot].is_none() {
            category_of[slot] = Some(name.clone());
        }
        if let Some(bbox) = &ann.bbox {
            let record = &kept[slot];
            match to_box(&image_id, bbox, record) {
                Some(b) => boxes.push(b),
                None => bad_boxes.push(image_id),
            }
        }
    }
    if !dangling.is_empty() {
        dangling.sort();
        dangling.dedup();
        return Err(ManifestError::integrity(
            "annotations reference missing images",
            dangling,
        ));
    }
    if !unknown_categories.is_empty() {
        unknown_categories.sort();
        unknown_categories.dedup();
        return Err(ManifestError::integrity(
            "annotations reference unknown categories",
            unknown_categories,
        ));
    }
    if !bad_boxes.is_empty() {
        return Err(ManifestError::integrity("invalid bounding boxes", bad_boxes));
    }

    let mut images = Vec::with_capacity(kept.len());
    for (mut record, category) in kept.into_iter().zip(category_of) {
        match category {
            Some(c) => {
                record.category = c;
                images.push(record);
            }
            None => stats.unannotated_excluded += 1,
        }
    }
    let retained: HashSet<&str> = images.iter().map(|r| r.image_id.as_str()).collect();
    boxes.retain(|b| retained.contains(b.image_id.as_str()));

    let categories = category_names.into_values().collect();
    let locations = images.iter().map(|r| r.location_id.clone()).collect();
    Ok(Manifest {
        images,
        boxes,
        categories,
        locations,
        stats,
    })
}

fn to_box(image_id: &str, bbox: &[f64], record: &ImageRecord) -> Option<BoundingBox> {
    let [x, y, w, h] = <[f64; 4]>::try_from(bbox).ok()?;
    if !(x >= 0.0 && y >= 0.0 && w > 0.0 && h > 0.0) {
        return None;
    }
    if let (Some(iw), Some(ih)) = (record.width, record.height) {
        if x + w > iw as f64 + BOX_BOUNDS_SLACK || y + h > ih as f64 + BOX_BOUNDS_SLACK {
            return None;
        }
    }
    Some(BoundingBox {
        image_id: image_id.to_string(),
        x,
        y,
        w,
        h,
    })
}

impl Manifest {
    /// Serializes back to the COCO Camera Traps layout. Each image gets one
    /// annotation per box, or a single box-less annotation.
    pub fn to_json(&self) -> Value {
        let cat_ids: BTreeMap<&str, usize> = self
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let mut boxes_by_image: HashMap<&str, Vec<&BoundingBox>> = HashMap::new();
        for b in &self.boxes {
            boxes_by_image.entry(b.image_id.as_str()).or_default().push(b);
        }

        let mut images = Vec::with_capacity(self.images.len());
        let mut annotations = Vec::new();
        for r in &self.images {
            let mut img = serde_json::Map::new();
            img.insert("id".into(), r.image_id.clone().into());
            img.insert("file_name".into(), r.file_name.clone().into());
            img.insert("location".into(), r.location_id.clone().into());
            if let Some(s) = &r.season {
                img.insert("season".into(), s.clone().into());
            }
            if let Some(w) = r.width {
                img.insert("width".into(), w.into());
            }
            if let Some(h) = r.height {
                img.insert("height".into(), h.into());
            }
            if let Some(n) = r.byte_size {
                img.insert("byte_size".into(), n.into());
            }
            images.push(Value::Object(img));

            let cat = cat_ids[r.category.as_str()];
            match boxes_by_image.get(r.image_id.as_str()) {
                Some(bs) => {
                    for b in bs {
                        annotations.push(serde_json::json!({
                            "id": format!("{}_{}", r.image_id, annotations.len()),
                            "image_id": r.image_id,
                            "category_id": cat,
                            "bbox": [b.x, b.y, b.w, b.h],
                        }));
                    }
                }
                None => annotations.push(serde_json::json!({
                    "id": format!("{}_{}", r.image_id, annotations.len()),
                    "image_id": r.image_id,
                    "category_id": cat,
                })),
            }
        }
        let categories: Vec<Value> = cat_ids
            .iter()
            .map(|(name, id)| serde_json::json!({ "id": id, "name": name }))
            .collect();
        serde_json::json!({
            "images": images,
            "annotations": annotations,
            "categories": categories,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_json()).expect("manifest json");
        fs::write(path, text).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Images that carry at least one bounding box.
    pub fn boxed_image_ids(&self) -> HashSet<&str> {
        self.boxes.iter().map(|b| b.image_id.as_str()).collect()
    }

    /// Fills in missing seasons from an `image_id,season` CSV. Existing
    /// manifest seasons take precedence.
    pub fn apply_season_map(&mut self, reader: impl Read) -> Result<usize, ManifestError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut map = HashMap::new();
        for row in rdr.records() {
            let row = row?;
            if let (Some(id), Some(season)) = (row.get(0), row.get(1)) {
                map.insert(id.to_string(), season.to_string());
            }
        }
        let mut applied = 0;
        for r in self.images.iter_mut().filter(|r| r.season.is_none()) {
            if let Some(s) = map.get(&r.image_id) {
                r.season = Some(s.clone());
                applied += 1;
            }
        }
        Ok(applied)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPolicy {
    pub empty_categories: BTreeSet<String>,
    pub require_bbox_for_nonempty: bool,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        LabelPolicy {
            empty_categories: DEFAULT_EMPTY_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            require_bbox_for_nonempty: false,
        }
    }
}

impl LabelPolicy {
    pub fn new<I, S>(empty_categories: I, require_bbox_for_nonempty: bool) -> Result<Self, ManifestError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let empty_categories: BTreeSet<String> = empty_categories.into_iter().map(Into::into).collect();
        if empty_categories.is_empty() {
            return Err(ManifestError::integrity("label policy needs at least one empty category", vec![]));
        }
        Ok(LabelPolicy {
            empty_categories,
            require_bbox_for_nonempty,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub image_id: String,
    pub label: Label,
    #[serde(rename = "location")]
    pub location_id: String,
    #[serde(default, deserialize_with = "empty_as_none")]
    pub season: Option<String>,
}

fn empty_as_none<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<String>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.is_empty()))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledSet {
    pub items: Vec<LabeledItem>,
}

impl LabeledSet {
    pub fn new(items: Vec<LabeledItem>) -> Self {
        LabeledSet { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.items.iter().filter(|i| i.label == label).count()
    }

    pub fn locations(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.location_id.as_str()).collect()
    }

    /// Writes the `image_id,label,location,season` CSV.
    pub fn write_csv(&self, writer: impl Write) -> Result<(), ManifestError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["image_id", "label", "location", "season"])?;
        for item in &self.items {
            w.write_record([
                item.image_id.as_str(),
                item.label.as_str(),
                item.location_id.as_str(),
                item.season.as_deref().unwrap_or(""),
            ])?;
        }
        w.flush().map_err(|source| ManifestError::Io {
            path: "<csv>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn read_csv(reader: impl Read) -> Result<Self, ManifestError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut items = Vec::new();
        let mut seen = HashSet::new();
        let mut duplicates = Vec::new();
        for row in rdr.deserialize() {
            let item: LabeledItem = row?;
            if !seen.insert(item.image_id.clone()) {
                duplicates.push(item.image_id.clone());
            }
            items.push(item);
        }
        if !duplicates.is_empty() {
            return Err(ManifestError::integrity("duplicate image ids in labels", duplicates));
        }
        Ok(LabeledSet { items })
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelingSummary {
    pub labeled: usize,
    pub excluded_count: usize,
}

/// Applies the empty/nonempty policy. Category wins over boxes: an image in
/// an empty category is empty even when annotated with a box.
pub fn to_labeled(manifest: &Manifest, policy: &LabelPolicy) -> (LabeledSet, LabelingSummary) {
    let boxed = manifest.boxed_image_ids();
    let mut items = Vec::with_capacity(manifest.images.len());
    let mut excluded = 0;
    for r in &manifest.images {
        let label = if policy.empty_categories.contains(&r.category) {
            Label::Empty
        } else if policy.require_bbox_for_nonempty && !boxed.contains(r.image_id.as_str()) {
            excluded += 1;
            continue;
        } else {
            Label::Nonempty
        };
        items.push(LabeledItem {
            image_id: r.image_id.clone(),
            label,
            location_id: r.location_id.clone(),
            season: r.season.clone(),
        });
    }
    let summary = LabelingSummary {
        labeled: items.len(),
        excluded_count: excluded,
    };
    (LabeledSet { items }, summary)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub empty: usize,
    pub nonempty: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.empty + self.nonempty
    }

    fn add(&mut self, label: Label) {
        match label {
            Label::Empty => self.empty += 1,
            Label::Nonempty => self.nonempty += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSummary {
    pub classes: ClassCounts,
    pub per_location: BTreeMap<String, ClassCounts>,
}

pub fn summarize(set: &LabeledSet) -> SetSummary {
    let mut summary = SetSummary::default();
    for item in &set.items {
        summary.classes.add(item.label);
        summary
            .per_location
            .entry(item.location_id.clone())
            .or_default()
            .add(item.label);
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(images: &str, annotations: &str) -> String {
        format!(
            r#"{{"info": {{"version": "1"}},
                "categories": [{{"id": 0, "name": "empty"}}, {{"id": 1, "name": "deer"}}, {{"id": 2, "name": "blank"}}],
                "images": [{images}], "annotations": [{annotations}]}}"#
        )
    }

    fn img(id: &str, loc: &str) -> String {
        format!(r#"{{"id": "{id}", "file_name": "{id}.jpg", "location": "{loc}", "width": 100, "height": 80}}"#)
    }

    fn ann(id: &str, cat: u32, bbox: Option<[f64; 4]>) -> String {
        match bbox {
            Some(b) => format!(
                r#"{{"id": "a{id}{cat}", "image_id": "{id}", "category_id": {cat}, "bbox": [{}, {}, {}, {}]}}"#,
                b[0], b[1], b[2], b[3]
            ),
            None => format!(r#"{{"id": "a{id}{cat}", "image_id": "{id}", "category_id": {cat}}}"#),
        }
    }

    #[test]
    fn empty_document() {
        let m = parse_manifest_str(&doc("", "")).unwrap();
        assert!(m.images.is_empty());
        assert!(m.boxes.is_empty());
        assert!(m.locations.is_empty());
    }

    #[test]
    fn two_images_one_box() {
        let text = doc(
            &[img("a", "L1"), img("b", "L2")].join(","),
            &[ann("a", 1, Some([1.0, 2.0, 10.0, 10.0])), ann("b", 0, None)].join(","),
        );
        let m = parse_manifest_str(&text).unwrap();
        assert_eq!(m.images.len(), 2);
        assert_eq!(m.boxes.len(), 1);
        assert_eq!(m.boxes[0].image_id, "a");
        assert_eq!(m.images[0].category, "deer");
        assert_eq!(m.images[1].category, "empty");
    }

    #[test]
    fn dangling_box_reference_is_named() {
        let images: Vec<String> = (0..10).map(|i| img(&format!("i{i}"), "L")).collect();
        let mut anns: Vec<String> = (0..10).map(|i| ann(&format!("i{i}"), 1, None)).collect();
        anns.push(ann("zz", 1, Some([0.0, 0.0, 5.0, 5.0])));
        let err = parse_manifest_str(&doc(&images.join(","), &anns.join(","))).unwrap_err();
        match err {
            ManifestError::Integrity { ids, .. } => assert_eq!(ids, vec!["zz".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_reports_position() {
        let err = parse_manifest_str("{\n  \"images\": [\n  {\"id\": }\n]}").unwrap_err();
        match err {
            ManifestError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn numeric_ids_and_locations() {
        let text = r#"{"images": [{"id": 7, "file_name": "x.jpg", "location": 38}],
            "annotations": [{"image_id": 7, "category_id": 1}],
            "categories": [{"id": 1, "name": "bobcat"}]}"#;
        let m = parse_manifest_str(text).unwrap();
        assert_eq!(m.images[0].image_id, "7");
        assert_eq!(m.images[0].location_id, "38");
    }

    #[test]
    fn corrupt_images_are_excluded_and_counted() {
        let text = r#"{"images": [
                {"id": "a", "file_name": "a.jpg", "location": "1", "corrupt": true},
                {"id": "b", "file_name": "b.jpg", "location": "1", "corrupt": false}],
            "annotations": [{"image_id": "a", "category_id": 1}, {"image_id": "b", "category_id": 1}],
            "categories": [{"id": 1, "name": "empty"}]}"#;
        let m = parse_manifest_str(text).unwrap();
        assert_eq!(m.images.len(), 1);
        assert_eq!(m.stats.corrupt_excluded, 1);
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let text = doc(&img("a", "L"), &ann("a", 1, Some([90.0, 0.0, 20.0, 10.0])));
        assert!(matches!(
            parse_manifest_str(&text),
            Err(ManifestError::Integrity { .. })
        ));
    }

    fn labeled_fixture(require_bbox: bool) -> (LabeledSet, LabelingSummary) {
        let text = doc(
            &[img("a", "L"), img("b", "L"), img("c", "L")].join(","),
            &[ann("a", 2, None), ann("b", 1, None), ann("c", 2, None)].join(","),
        );
        let m = parse_manifest_str(&text).unwrap();
        let policy = LabelPolicy::new(["blank"], require_bbox).unwrap();
        to_labeled(&m, &policy)
    }

    #[test]
    fn labeling_by_category() {
        let (set, summary) = labeled_fixture(false);
        let labels: Vec<Label> = set.items.iter().map(|i| i.label).collect();
        assert_eq!(labels, vec![Label::Empty, Label::Nonempty, Label::Empty]);
        assert_eq!(summary.excluded_count, 0);
    }

    #[test]
    fn require_bbox_excludes_unboxed_nonempty() {
        let (set, summary) = labeled_fixture(true);
        assert_eq!(set.len(), 2);
        assert!(set.items.iter().all(|i| i.label == Label::Empty));
        assert_eq!(summary.excluded_count, 1);
    }

    #[test]
    fn all_empty_categories() {
        let text = doc(
            &[img("a", "L"), img("b", "L")].join(","),
            &[ann("a", 0, None), ann("b", 2, Some([0.0, 0.0, 3.0, 3.0]))].join(","),
        );
        let m = parse_manifest_str(&text).unwrap();
        let (set, _) = to_labeled(&m, &LabelPolicy::default());
        assert!(set.items.iter().all(|i| i.label == Label::Empty));
    }

    #[test]
    fn empty_policy_rejected() {
        assert!(LabelPolicy::new(Vec::<String>::new(), false).is_err());
    }

    #[test]
    fn summary_counts() {
        assert_eq!(summarize(&LabeledSet::default()), SetSummary::default());
        let mk = |id: &str, label, loc: &str| LabeledItem {
            image_id: id.into(),
            label,
            location_id: loc.into(),
            season: None,
        };
        let set = LabeledSet::new(vec![
            mk("1", Label::Empty, "A"),
            mk("2", Label::Empty, "A"),
            mk("3", Label::Nonempty, "A"),
            mk("4", Label::Empty, "B"),
            mk("5", Label::Empty, "B"),
            mk("6", Label::Empty, "B"),
            mk("7", Label::Nonempty, "B"),
            mk("8", Label::Nonempty, "B"),
        ]);
        let s = summarize(&set);
        assert_eq!(s.classes, ClassCounts { empty: 5, nonempty: 3 });
        assert_eq!(s.per_location["A"], ClassCounts { empty: 2, nonempty: 1 });
        assert_eq!(s.per_location["B"], ClassCounts { empty: 3, nonempty: 2 });
    }

    #[test]
    fn labeled_csv_round_trip() {
        let (set, _) = labeled_fixture(false);
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,label,location,season\n"));
        assert_eq!(LabeledSet::read_csv(&buf[..]).unwrap(), set);
    }

    #[test]
    fn season_map_fills_missing() {
        let text = doc(&img("a", "L"), &ann("a", 1, None));
        let mut m = parse_manifest_str(&text).unwrap();
        let n = m.apply_season_map("image_id,season\na,S3\n".as_bytes()).unwrap();
        assert_eq!(n, 1);
        assert_eq!(m.images[0].season.as_deref(), Some("S3"));
    }
}
