//! Interaction logs, candidate feature streams and model-ready windows.
//!
//! Raw categorical ids start at 1; index 0 is reserved for start and padding
//! tokens in every categorical table.

mod features;
mod split;
pub mod synthetic;

pub use features::{
    derive_features, make_windows, time_buckets, FeatureSequences, SequenceWindow, Standardizer, Stream,
    DAY_CAP, ELAPSED_SECONDS_CAP, LAG_MINUTES_CAP, LAG_SECONDS_CAP,
};
pub use split::{split, DatasetSplit, SplitRatios, FOLDS};

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One student–exercise event.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractionRecord {
    pub student: String,
    pub exercise: u32,
    pub skill: u32,
    pub tag: u32,
    pub tagset: u32,
    pub bundle: u32,
    pub timestamp_ms: i64,
    pub elapsed_ms: i64,
    pub response: u8,
}

/// The twelve candidate input features, in embedding-slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Exercise,
    Skill,
    Tag,
    Tagset,
    Bundle,
    Response,
    ElapsedCont,
    ElapsedSeconds,
    LagCont,
    LagSeconds,
    LagMinutes,
    LagDays,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 12] = [
        FeatureKind::Exercise,
        FeatureKind::Skill,
        FeatureKind::Tag,
        FeatureKind::Tagset,
        FeatureKind::Bundle,
        FeatureKind::Response,
        FeatureKind::ElapsedCont,
        FeatureKind::ElapsedSeconds,
        FeatureKind::LagCont,
        FeatureKind::LagSeconds,
        FeatureKind::LagMinutes,
        FeatureKind::LagDays,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn short_name(self) -> &'static str {
        match self {
            FeatureKind::Exercise => "exer",
            FeatureKind::Skill => "sk",
            FeatureKind::Tag => "tag",
            FeatureKind::Tagset => "tagset",
            FeatureKind::Bundle => "bund",
            FeatureKind::Response => "ans",
            FeatureKind::ElapsedCont => "cont_ela",
            FeatureKind::ElapsedSeconds => "cate_ela_s",
            FeatureKind::LagCont => "cont_lag",
            FeatureKind::LagSeconds => "cate_lag_s",
            FeatureKind::LagMinutes => "cate_lag_m",
            FeatureKind::LagDays => "cate_lag_d",
        }
    }

    pub fn is_continuous(self) -> bool {
        matches!(self, FeatureKind::ElapsedCont | FeatureKind::LagCont)
    }

    /// Streams whose position `t` carries information from interaction `t−1`.
    pub fn is_shifted(self) -> bool {
        matches!(
            self,
            FeatureKind::Response
                | FeatureKind::ElapsedCont
                | FeatureKind::ElapsedSeconds
                | FeatureKind::LagCont
                | FeatureKind::LagSeconds
                | FeatureKind::LagMinutes
                | FeatureKind::LagDays
        )
    }
}

/// Number of distinct raw ids per categorical field. Raw ids run `1..=count`;
/// embedding tables get one extra row for the reserved index 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureVocabulary {
    pub exercises: u32,
    pub skills: u32,
    pub tags: u32,
    pub tagsets: u32,
    pub bundles: u32,
}

impl FeatureVocabulary {
    /// Rows of the embedding table for `kind`; `None` for continuous features.
    pub fn table_rows(&self, kind: FeatureKind) -> Option<usize> {
        let rows = match kind {
            FeatureKind::Exercise => self.exercises as usize + 1,
            FeatureKind::Skill => self.skills as usize + 1,
            FeatureKind::Tag => self.tags as usize + 1,
            FeatureKind::Tagset => self.tagsets as usize + 1,
            FeatureKind::Bundle => self.bundles as usize + 1,
            // start/pad, incorrect, correct
            FeatureKind::Response => 3,
            FeatureKind::ElapsedSeconds => ELAPSED_SECONDS_CAP as usize + 2,
            FeatureKind::LagSeconds => LAG_SECONDS_CAP as usize + 2,
            FeatureKind::LagMinutes => LAG_MINUTES_CAP as usize + 2,
            FeatureKind::LagDays => DAY_CAP as usize + 2,
            FeatureKind::ElapsedCont | FeatureKind::LagCont => return None,
        };
        Some(rows)
    }

    fn fields(&self) -> [(&'static str, u32); 5] {
        [
            ("exercise", self.exercises),
            ("skill", self.skills),
            ("tag", self.tags),
            ("tagset", self.tagsets),
            ("bundle", self.bundles),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn record_fields(r: &InteractionRecord) -> [(&'static str, u32); 5] {
    [
        ("exercise", r.exercise),
        ("skill", r.skill),
        ("tag", r.tag),
        ("tagset", r.tagset),
        ("bundle", r.bundle),
    ]
}

/// All records of one student, sorted by timestamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StudentLog {
    pub student: String,
    pub records: Vec<InteractionRecord>,
}

fn validate_record(r: &InteractionRecord, line: usize, schema: Option<&FeatureVocabulary>) -> Result<()> {
    if r.response > 1 {
        return Err(Error::MalformedRow {
            line,
            message: format!("response must be 0 or 1, got {}", r.response),
        });
    }
    if r.elapsed_ms < 0 {
        return Err(Error::MalformedRow {
            line,
            message: format!("elapsed_ms must be non-negative, got {}", r.elapsed_ms),
        });
    }
    let limits = schema.map(|s| s.fields());
    for (i, (feature, value)) in record_fields(r).into_iter().enumerate() {
        let cardinality = limits.map(|l| l[i].1);
        if value == 0 || cardinality.is_some_and(|c| value > c) {
            return Err(Error::UnknownCategory {
                line,
                feature,
                value: value as u64,
                cardinality: cardinality.map(|c| c as u64 + 1).unwrap_or(0),
            });
        }
    }
    Ok(())
}

/// Parses JSONL interaction records from a reader. Blank lines are skipped.
///
/// Without a schema the vocabulary is the largest id seen per field; with one,
/// every id must fall inside it.
pub fn parse_jsonl<R: BufRead>(
    reader: R,
    schema: Option<&FeatureVocabulary>,
) -> Result<(Vec<StudentLog>, FeatureVocabulary)> {
    let mut records = Vec::new();
    let mut seen = FeatureVocabulary {
        exercises: 0,
        skills: 0,
        tags: 0,
        tagsets: 0,
        bundles: 0,
    };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedRow {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: InteractionRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            line: line_no,
            message: e.to_string(),
        })?;
        validate_record(&record, line_no, schema)?;
        seen.exercises = seen.exercises.max(record.exercise);
        seen.skills = seen.skills.max(record.skill);
        seen.tags = seen.tags.max(record.tag);
        seen.tagsets = seen.tagsets.max(record.tagset);
        seen.bundles = seen.bundles.max(record.bundle);
        records.push(record);
    }
    Ok((group_by_student(records), schema.cloned().unwrap_or(seen)))
}

/// Groups records into per-student logs ordered by student id, each sorted
/// stably by timestamp so equal timestamps keep input order.
pub fn group_by_student(records: Vec<InteractionRecord>) -> Vec<StudentLog> {
    let mut by_student: BTreeMap<String, Vec<InteractionRecord>> = BTreeMap::new();
    for record in records {
        by_student.entry(record.student.clone()).or_default().push(record);
    }
    by_student
        .into_iter()
        .map(|(student, mut records)| {
            records.sort_by_key(|r| r.timestamp_ms);
            StudentLog { student, records }
        })
        .collect()
}

pub fn ingest(path: &Path, schema: Option<&FeatureVocabulary>) -> Result<(Vec<StudentLog>, FeatureVocabulary)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), schema)
}

pub fn read_vocabulary(path: &Path) -> Result<FeatureVocabulary> {
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    FeatureVocabulary::from_json(&text)
}

/// Everything the trainers need: vocabulary, split, and windows per partition.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub vocabulary: FeatureVocabulary,
    pub seq_len: usize,
    pub split: DatasetSplit,
    pub standardizer: Standardizer,
    pub train: Vec<SequenceWindow>,
    pub validation: Vec<SequenceWindow>,
    pub test: Vec<SequenceWindow>,
}

impl PreparedDataset {
    /// Derives features, splits by student, fits the continuous-feature
    /// standardiser on the training students and cuts windows.
    pub fn build(
        logs: &[StudentLog],
        vocabulary: FeatureVocabulary,
        seq_len: usize,
        ratios: SplitRatios,
        fold: usize,
        seed: u64,
    ) -> Result<Self> {
        if seq_len < 2 {
            return Err(Error::invalid("seq_len", "window length must be at least 2"));
        }
        let students: Vec<String> = logs.iter().map(|l| l.student.clone()).collect();
        let split = split(&students, ratios, fold, seed)?;
        let sequences: BTreeMap<&str, FeatureSequences> = logs
            .iter()
            .map(|l| (l.student.as_str(), derive_features(&l.records)))
            .collect();
        let standardizer = Standardizer::fit(split.train.iter().map(|s| &sequences[s.as_str()]));
        let windows = |ids: &[String]| -> Vec<SequenceWindow> {
            ids.iter()
                .flat_map(|s| {
                    let mut seq = sequences[s.as_str()].clone();
                    standardizer.apply(&mut seq);
                    make_windows(s, &seq, seq_len)
                })
                .collect()
        };
        Ok(Self {
            train: windows(&split.train),
            validation: windows(&split.validation),
            test: windows(&split.test),
            vocabulary,
            seq_len,
            split,
            standardizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self)?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let data: Self = serde_json::from_reader(BufReader::new(file))?;
        if data.train.is_empty() || data.validation.is_empty() || data.test.is_empty() {
            return Err(Error::invalid("dataset", format!("{} has an empty partition", path.display())));
        }
        Ok(data)
    }
}
