//! Model predictions: per-image nonempty confidence, detector output
//! reduction, the JSON Lines score file, and the join with ground truth.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::manifest::{Label, LabeledSet};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("confidence {value} outside [0, 1]{}", context.as_deref().map(|c| format!(" in record {c}")).unwrap_or_default())]
    OutOfRange { value: f64, context: Option<String> },
    #[error("record {image_id}: nonempty_score {stored} differs from reduced detections {reduced}")]
    ReductionMismatch {
        image_id: String,
        stored: f64,
        reduced: f64,
    },
    #[error("duplicate image ids: {}", .0.join(", "))]
    DuplicateIds(Vec<String>),
    #[error("score file is empty: the first line must be the run manifest")]
    MissingManifest,
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("scores and labels share no image ids ({scores} scores, {labels} labels)")]
    NoOverlap { scores: usize, labels: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    Float,
    Int8,
    Int8Qat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Classifier,
    Detector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: String,
    pub confidence: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

impl Detection {
    pub fn new(class_id: impl Into<String>, confidence: f64) -> Self {
        Detection {
            class_id: class_id.into(),
            confidence,
            bbox: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_name: String,
    pub precision_mode: PrecisionMode,
    pub input_resolution: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width_multiplier: Option<f64>,
    pub dataset_split: String,
    pub backend_id: String,
    /// Detector classes ignored by the reduction (e.g. an explicit background class).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub background_classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub nonempty_score: f64,
    pub source: ScoreSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<Detection>>,
}

fn check_unit(value: f64, context: Option<&str>) -> Result<f64, ScoreError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ScoreError::OutOfRange {
            value,
            context: context.map(str::to_string),
        })
    }
}

/// Reduces detector output to one nonempty confidence: the highest
/// confidence over every detection, 0 when there are none.
pub fn reduce_detections(detections: &[Detection]) -> Result<f64, ScoreError> {
    reduce_detections_excluding(detections, &[])
}

/// As [`reduce_detections`], skipping detections whose class is listed in
/// `background`.
pub fn reduce_detections_excluding(detections: &[Detection], background: &[String]) -> Result<f64, ScoreError> {
    let mut best = 0.0f64;
    for d in detections {
        check_unit(d.confidence, None)?;
        if background.iter().any(|b| *b == d.class_id) {
            continue;
        }
        best = best.max(d.confidence);
    }
    Ok(best)
}

impl ScoreRecord {
    pub fn classifier(image_id: impl Into<String>, score: f64) -> Self {
        ScoreRecord {
            image_id: image_id.into(),
            nonempty_score: score,
            source: ScoreSource::Classifier,
            detections: None,
        }
    }

    pub fn detector(image_id: impl Into<String>, detections: Vec<Detection>, background: &[String]) -> Result<Self, ScoreError> {
        let score = reduce_detections_excluding(&detections, background)?;
        Ok(ScoreRecord {
            image_id: image_id.into(),
            nonempty_score: score,
            source: ScoreSource::Detector,
            detections: Some(detections),
        })
    }

    fn validate(&self, background: &[String]) -> Result<(), ScoreError> {
        check_unit(self.nonempty_score, Some(&self.image_id))?;
        if let (ScoreSource::Detector, Some(ds)) = (self.source, &self.detections) {
            let reduced = reduce_detections_excluding(ds, background).map_err(|e| match e {
                ScoreError::OutOfRange { value, .. } => ScoreError::OutOfRange {
                    value,
                    context: Some(self.image_id.clone()),
                },
                other => other,
            })?;
            if reduced != self.nonempty_score {
                return Err(ScoreError::ReductionMismatch {
                    image_id: self.image_id.clone(),
                    stored: self.nonempty_score,
                    reduced,
                });
            }
        }
        Ok(())
    }
}

/// Writes a score file: the run manifest on the first line, then one record per line.
pub fn write_scores(mut writer: impl Write, run: &RunManifest, records: &[ScoreRecord]) -> Result<(), ScoreError> {
    serde_json::to_writer(&mut writer, run).map_err(|source| ScoreError::Json { line: 1, source })?;
    writer.write_all(b"\n")?;
    for (i, r) in records.iter().enumerate() {
        serde_json::to_writer(&mut writer, r).map_err(|source| ScoreError::Json { line: i + 2, source })?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_scores(reader: impl Read) -> Result<(RunManifest, Vec<ScoreRecord>), ScoreError> {
    let mut lines = BufReader::new(reader).lines().enumerate();
    let run: RunManifest = loop {
        match lines.next() {
            None => return Err(ScoreError::MissingManifest),
            Some((_, line)) if line.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
            Some((i, line)) => {
                break serde_json::from_str(&line?).map_err(|source| ScoreError::Json { line: i + 1, source })?
            }
        }
    };
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut duplicates = BTreeSet::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ScoreRecord =
            serde_json::from_str(&line).map_err(|source| ScoreError::Json { line: i + 1, source })?;
        record.validate(&run.background_classes)?;
        if !seen.insert(record.image_id.clone()) {
            duplicates.insert(record.image_id.clone());
        }
        records.push(record);
    }
    if !duplicates.is_empty() {
        return Err(ScoreError::DuplicateIds(duplicates.into_iter().collect()));
    }
    Ok((run, records))
}

pub fn write_scores_file(path: impl AsRef<Path>, run: &RunManifest, records: &[ScoreRecord]) -> Result<(), ScoreError> {
    write_scores(BufWriter::new(fs::File::create(path)?), run, records)
}

pub fn read_scores_file(path: impl AsRef<Path>) -> Result<(RunManifest, Vec<ScoreRecord>), ScoreError> {
    read_scores(fs::File::open(path)?)
}

/// `image_id,nonempty_score` export.
pub fn write_scores_csv(writer: impl Write, records: &[ScoreRecord]) -> Result<(), ScoreError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["image_id", "nonempty_score"])?;
    for r in records {
        w.write_record([r.image_id.as_str(), &r.nonempty_score.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub image_id: String,
    pub label: Label,
    pub nonempty_score: f64,
}

/// Scores joined with ground truth, sorted by `image_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSet {
    pub items: Vec<EvalItem>,
}

impl EvalSet {
    /// Builds an EvalSet from `(label, score)` pairs with generated ids.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, f64)>) -> Result<Self, ScoreError> {
        let items = pairs
            .into_iter()
            .enumerate()
            .map(|(i, (label, score))| {
                check_unit(score, None)?;
                Ok(EvalItem {
                    image_id: format!("{i:08}"),
                    label,
                    nonempty_score: score,
                })
            })
            .collect::<Result<_, ScoreError>>()?;
        Ok(EvalSet { items })
    }

    /// Builds an EvalSet from separate positive and negative score lists.
    pub fn from_scores(positives: &[f64], negatives: &[f64]) -> Result<Self, ScoreError> {
        Self::from_pairs(
            positives
                .iter()
                .map(|&s| (Label::Nonempty, s))
                .chain(negatives.iter().map(|&s| (Label::Empty, s))),
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.items.iter().filter(|i| i.label.is_positive()).count()
    }

    pub fn negatives(&self) -> usize {
        self.len() - self.positives()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinStats {
    pub unmatched_scores: usize,
    pub unmatched_labels: usize,
}

/// Inner join on `image_id`.
pub fn join(scores: &[ScoreRecord], labels: &LabeledSet) -> Result<(EvalSet, JoinStats), ScoreError> {
    let by_id: HashMap<&str, Label> = labels
        .items
        .iter()
        .map(|i| (i.image_id.as_str(), i.label))
        .collect();
    let mut items = Vec::with_capacity(scores.len().min(labels.len()));
    let mut matched = HashSet::new();
    for s in scores {
        if let Some(&label) = by_id.get(s.image_id.as_str()) {
            if matched.insert(s.image_id.as_str()) {
                items.push(EvalItem {
                    image_id: s.image_id.clone(),
                    label,
                    nonempty_score: check_unit(s.nonempty_score, Some(&s.image_id))?,
                });
            }
        }
    }
    if items.is_empty() {
        return Err(ScoreError::NoOverlap {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    items.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let stats = JoinStats {
        unmatched_scores: scores.len() - items.len(),
        unmatched_labels: by_id.len() - items.len(),
    };
    Ok((EvalSet { items }, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::LabeledItem;

    fn run() -> RunManifest {
        RunManifest {
            run_id: "ssdlite-float".into(),
            model_name: "SSDLite+MobileNetV2".into(),
            precision_mode: PrecisionMode::Float,
            input_resolution: 320,
            width_multiplier: Some(1.0),
            dataset_split: "ss_site/val".into(),
            backend_id: "replay".into(),
            background_classes: vec![],
        }
    }

    fn labels(ids: &[&str]) -> LabeledSet {
        LabeledSet::new(
            ids.iter()
                .enumerate()
                .map(|(i, id)| LabeledItem {
                    image_id: id.to_string(),
                    label: if i % 2 == 0 { Label::Empty } else { Label::Nonempty },
                    location_id: "L".into(),
                    season: None,
                })
                .collect(),
        )
    }

    #[test]
    fn reduction_examples() {
        assert_eq!(reduce_detections(&[]).unwrap(), 0.0);
        let ds = [Detection::new("animal", 0.3), Detection::new("animal", 0.7)];
        assert_eq!(reduce_detections(&ds).unwrap(), 0.7);
        let ds = [
            Detection::new("animal", 0.05),
            Detection::new("animal", 0.91),
            Detection::new("animal", 0.44),
        ];
        assert_eq!(reduce_detections(&ds).unwrap(), 0.91);
        assert!(matches!(
            reduce_detections(&[Detection::new("animal", 1.5)]),
            Err(ScoreError::OutOfRange { .. })
        ));
    }

    #[test]
    fn background_classes_are_ignored() {
        let ds = [Detection::new("background", 0.99), Detection::new("animal", 0.2)];
        assert_eq!(reduce_detections_excluding(&ds, &["background".into()]).unwrap(), 0.2);
    }

    #[test]
    fn score_file_round_trip() {
        let records: Vec<ScoreRecord> = (0..100)
            .map(|i| {
                if i % 3 == 0 {
                    let ds = vec![
                        Detection {
                            class_id: "1".into(),
                            confidence: (i as f64) / 101.0,
                            bbox: Some([1.0, 2.0, 3.5, 4.25]),
                        },
                        Detection::new("1", 0.1 / (i as f64 + 1.0)),
                    ];
                    ScoreRecord::detector(format!("img{i}"), ds, &[]).unwrap()
                } else {
                    ScoreRecord::classifier(format!("img{i}"), 1.0 / (i as f64 + 3.0))
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_scores(&mut buf, &run(), &records).unwrap();
        let (r, back) = read_scores(&buf[..]).unwrap();
        assert_eq!(r, run());
        assert_eq!(back, records);
    }

    #[test]
    fn manifest_only_file() {
        let mut buf = Vec::new();
        write_scores(&mut buf, &run(), &[]).unwrap();
        let (_, back) = read_scores(&buf[..]).unwrap();
        assert!(back.is_empty());
        assert!(matches!(read_scores(&b""[..]), Err(ScoreError::MissingManifest)));
    }

    #[test]
    fn reduction_invariant_checked_on_read() {
        let mut buf = Vec::new();
        write_scores(&mut buf, &run(), &[]).unwrap();
        buf.extend_from_slice(
            br#"{"image_id":"x","nonempty_score":0.5,"source":"detector","detections":[{"class_id":"1","confidence":0.7}]}"#,
        );
        match read_scores(&buf[..]) {
            Err(ScoreError::ReductionMismatch { image_id, .. }) => assert_eq!(image_id, "x"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let recs = vec![ScoreRecord::classifier("a", 0.1), ScoreRecord::classifier("a", 0.2)];
        let mut buf = Vec::new();
        write_scores(&mut buf, &run(), &recs).unwrap();
        assert!(matches!(read_scores(&buf[..]), Err(ScoreError::DuplicateIds(_))));
    }

    #[test]
    fn join_examples() {
        let scores: Vec<ScoreRecord> = ["a", "b", "c"].iter().map(|id| ScoreRecord::classifier(*id, 0.5)).collect();
        let (e, stats) = join(&scores, &labels(&["a", "b", "c"])).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(stats, JoinStats::default());

        let scores: Vec<ScoreRecord> = ["a", "b", "c", "d", "e"]
            .iter()
            .map(|id| ScoreRecord::classifier(*id, 0.5))
            .collect();
        let (e, stats) = join(&scores, &labels(&["c", "a", "e"])).unwrap();
        assert_eq!(e.len(), 3);
        assert_eq!(
            stats,
            JoinStats {
                unmatched_scores: 2,
                unmatched_labels: 0
            }
        );

        assert!(matches!(
            join(&scores, &labels(&["x", "y"])),
            Err(ScoreError::NoOverlap { .. })
        ));
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &[ScoreRecord::classifier("a", 0.148)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "image_id,nonempty_score\na,0.148\n");
    }
}
