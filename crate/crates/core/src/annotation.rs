//! Backend of the annotation workflow: reports with labeler highlights,
//! save-time conflict checks, an append-only annotation log and phrase
//! additions that feed straight back into the labeler.

use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::evaluation::{GoldAnnotation, GoldLabel};
use crate::io::{write_labels_to, LabelRow, ReportRecord};
use crate::labeler::{label_report, CutoffRadius, MentionClassification};
use crate::lexicon::{AddOutcome, LexiconStore, ObservationClass, Polarity};

pub const ANNOTATION_LOG: &str = "annotations.jsonl";
pub const PHRASE_AUDIT_LOG: &str = "phrase_audit.jsonl";

/// Serializes the 14 labels as an object keyed by class name and insists on
/// every class being present.
mod label_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::evaluation::GoldLabel;
    use crate::lexicon::ObservationClass;

    pub fn serialize<S: Serializer>(labels: &[GoldLabel; 14], s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, GoldLabel> = ObservationClass::ALL
            .iter()
            .map(|c| (c.snake_name(), labels[c.index()]))
            .collect();
        map.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[GoldLabel; 14], D::Error> {
        let map = BTreeMap::<String, GoldLabel>::deserialize(d)?;
        let mut labels = [GoldLabel::None; 14];
        for (name, label) in &map {
            let class = ObservationClass::from_snake(name)
                .ok_or_else(|| D::Error::custom(format!("unknown class {name:?}")))?;
            labels[class.index()] = *label;
        }
        if let Some(missing) = ObservationClass::ALL
            .iter()
            .find(|c| !map.contains_key(c.snake_name()))
        {
            return Err(D::Error::custom(format!("missing label for {missing}")));
        }
        Ok(labels)
    }
}

/// One saved judgment of one report by one annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub report_id: String,
    pub annotator_id: String,
    #[serde(with = "label_map")]
    pub labels: [GoldLabel; ObservationClass::COUNT],
    #[serde(default)]
    pub marked: bool,
    #[serde(default)]
    pub comment: Option<String>,
    pub saved_at: DateTime<Utc>,
    pub revision: u64,
}

/// What a client sends when saving. `revision` is the revision this save
/// will create, i.e. the stored revision plus one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSubmission {
    pub annotator_id: String,
    #[serde(with = "label_map")]
    pub labels: [GoldLabel; ObservationClass::COUNT],
    #[serde(default)]
    pub marked: bool,
    #[serde(default)]
    pub comment: Option<String>,
    pub revision: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    /// The labeler found the class but the annotator chose "none".
    RecognizedButNone,
    /// The annotator chose a label but the labeler found nothing.
    SelectedButUnrecognized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaveConflict {
    pub kind: ConflictKind,
    pub class: ObservationClass,
    /// Byte spans of the matched phrases; empty for `SelectedButUnrecognized`.
    pub evidence: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SaveOutcome {
    Saved { record: AnnotationRecord },
    Conflicts { conflicts: Vec<SaveConflict> },
}

#[derive(Debug, thiserror::Error)]
pub enum SaveError {
    #[error("unknown report id {0:?}")]
    UnknownReport(String),
    #[error("stale revision {submitted}: revision {stored} is already stored")]
    Stale { stored: u64, submitted: u64 },
    #[error("revision {submitted} skips ahead of stored revision {stored}")]
    Skipped { stored: u64, submitted: u64 },
    #[error("annotator id must not be empty")]
    NoAnnotator,
    #[error(transparent)]
    Store(#[from] Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: usize,
    pub total: usize,
}

/// A labeler match rendered on top of the report text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Highlight {
    pub start: usize,
    pub end: usize,
    pub class: ObservationClass,
    pub classification: MentionClassification,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportView {
    pub report_id: String,
    pub view_position: Option<String>,
    pub text: String,
    pub highlights: Vec<Highlight>,
}

/// Append-only JSON-lines log of annotation records.
#[derive(Debug)]
pub struct AnnotationStore {
    path: PathBuf,
    file: Mutex<File>,
    records: RwLock<Vec<AnnotationRecord>>,
    skipped: usize,
}

impl AnnotationStore {
    /// Opens (or creates) the log in `dir`. Lines that do not parse (a torn
    /// write left by a crash) are skipped with a warning, never rewritten.
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(ANNOTATION_LOG);
        let mut records = Vec::new();
        let mut skipped = 0;
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path).at(&path)?)
                .lines()
                .collect::<std::io::Result<_>>()
                .at(&path)?;
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<AnnotationRecord>(line) {
                    Ok(r) => records.push(r),
                    Err(e) => {
                        log::warn!("{}:{}: skipping incomplete record: {e}", path.display(), i + 1);
                        skipped += 1;
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).at(&path)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
            records: RwLock::new(records),
            skipped,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Unparsable lines found when the log was opened.
    pub fn skipped_lines(&self) -> usize {
        self.skipped
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Vec<AnnotationRecord>> {
        self.records.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Writes one record as a single line. The in-memory view only changes
    /// once the line is durable.
    pub fn append(&self, record: &AnnotationRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        // terminate a torn line left behind by an earlier crash
        if file.metadata().at(&self.path)?.len() > 0 && !ends_with_newline(&self.path)? {
            line.insert(0, b'\n');
        }
        file.write_all(&line).at(&self.path)?;
        file.sync_data().at(&self.path)?;
        self.records
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .push(record.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.read().is_empty()
    }

    pub fn all(&self) -> Vec<AnnotationRecord> {
        self.read().clone()
    }

    pub fn latest(&self, report_id: &str, annotator_id: &str) -> Option<AnnotationRecord> {
        self.read()
            .iter()
            .filter(|r| r.report_id == report_id && r.annotator_id == annotator_id)
            .max_by_key(|r| r.revision)
            .cloned()
    }

    pub fn latest_revision(&self, report_id: &str, annotator_id: &str) -> u64 {
        self.latest(report_id, annotator_id).map_or(0, |r| r.revision)
    }

    pub fn annotated_reports(&self, annotator_id: &str) -> BTreeSet<String> {
        self.read()
            .iter()
            .filter(|r| r.annotator_id == annotator_id)
            .map(|r| r.report_id.clone())
            .collect()
    }

    pub fn annotators(&self) -> BTreeSet<String> {
        self.read().iter().map(|r| r.annotator_id.clone()).collect()
    }

    /// Latest revision per report for one annotator, folded over the log.
    pub fn latest_by_report(&self, annotator_id: &str) -> HashMap<String, AnnotationRecord> {
        let mut latest: HashMap<String, AnnotationRecord> = HashMap::new();
        for r in self.read().iter().filter(|r| r.annotator_id == annotator_id) {
            match latest.get(&r.report_id) {
                Some(existing) if existing.revision >= r.revision => {}
                _ => {
                    latest.insert(r.report_id.clone(), r.clone());
                }
            }
        }
        latest
    }
}

fn ends_with_newline(path: &Path) -> Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path).at(path)?;
    f.seek(SeekFrom::End(-1)).at(path)?;
    let mut last = [0u8; 1];
    f.read_exact(&mut last).at(path)?;
    Ok(last[0] == b'\n')
}

#[derive(Debug, Serialize)]
struct PhraseAudit<'a> {
    timestamp: DateTime<Utc>,
    annotator_id: &'a str,
    class: ObservationClass,
    polarity: Polarity,
    surface: &'a str,
    outcome: AddOutcome,
}

/// Everything the annotation endpoints need.
#[derive(Debug)]
pub struct AnnotationService {
    corpus: Vec<ReportRecord>,
    index: HashMap<String, usize>,
    lexicons: LexiconStore,
    store: AnnotationStore,
    audit_path: PathBuf,
    radius: CutoffRadius,
    writer: Mutex<()>,
}

impl AnnotationService {
    pub fn new(
        corpus: Vec<ReportRecord>,
        lexicons: LexiconStore,
        store_dir: &Path,
        radius: CutoffRadius,
    ) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, r) in corpus.iter().enumerate() {
            if index.insert(r.report_id.clone(), i).is_some() {
                return Err(Error::DuplicateReport(r.report_id.clone()));
            }
        }
        let store = AnnotationStore::open(store_dir)?;
        Ok(Self {
            corpus,
            index,
            lexicons,
            store,
            audit_path: store_dir.join(PHRASE_AUDIT_LOG),
            radius,
            writer: Mutex::new(()),
        })
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn lexicons(&self) -> &LexiconStore {
        &self.lexicons
    }

    pub fn corpus(&self) -> &[ReportRecord] {
        &self.corpus
    }

    fn record(&self, report_id: &str) -> Option<&ReportRecord> {
        self.index.get(report_id).map(|&i| &self.corpus[i])
    }

    pub fn progress(&self, annotator_id: &str) -> Progress {
        let done = self.store.annotated_reports(annotator_id);
        Progress {
            completed: self.corpus.iter().filter(|r| done.contains(&r.report_id)).count(),
            total: self.corpus.len(),
        }
    }

    fn highlights(&self, record: &ReportRecord) -> Vec<Highlight> {
        let lexicons = self.lexicons.snapshot();
        label_report(&record.report_id, &record.text, &lexicons, self.radius)
            .mentions
            .into_iter()
            .map(|m| Highlight {
                start: m.char_span.0,
                end: m.char_span.1,
                class: m.observation,
                classification: m.classification,
                phrase: m.phrase.text(),
            })
            .collect()
    }

    pub fn report(&self, report_id: &str) -> Option<ReportView> {
        let record = self.record(report_id)?;
        Some(ReportView {
            report_id: record.report_id.clone(),
            view_position: record.view_position.clone(),
            text: record.text.clone(),
            highlights: self.highlights(record),
        })
    }

    /// First report in corpus order without a saved annotation by
    /// `annotator_id`.
    pub fn next_report(&self, annotator_id: &str) -> Option<ReportView> {
        let done = self.store.annotated_reports(annotator_id);
        self.corpus
            .iter()
            .find(|r| !done.contains(&r.report_id))
            .and_then(|r| self.report(&r.report_id))
    }

    /// Save-time checks against the current lexicon. NoFinding has no phrase
    /// lists and is never checked.
    pub fn conflicts(&self, report_id: &str, labels: &[GoldLabel; ObservationClass::COUNT]) -> Option<Vec<SaveConflict>> {
        let record = self.record(report_id)?;
        let highlights = self.highlights(record);
        let mut conflicts = Vec::new();
        for class in ObservationClass::matchable() {
            let evidence: Vec<(usize, usize)> = highlights
                .iter()
                .filter(|h| h.class == class)
                .map(|h| (h.start, h.end))
                .collect();
            let kind = match (labels[class.index()], evidence.is_empty()) {
                (GoldLabel::None, false) => ConflictKind::RecognizedButNone,
                (GoldLabel::None, true) | (_, false) => continue,
                (_, true) => ConflictKind::SelectedButUnrecognized,
            };
            conflicts.push(SaveConflict {
                kind,
                class,
                evidence: if kind == ConflictKind::RecognizedButNone { evidence } else { Vec::new() },
            });
        }
        Some(conflicts)
    }

    /// Saves unless there are conflicts and `confirm` is false. Revision
    /// check, conflict check and append happen under one writer lock.
    pub fn save(
        &self,
        report_id: &str,
        submission: AnnotationSubmission,
        confirm: bool,
    ) -> Result<SaveOutcome, SaveError> {
        if submission.annotator_id.trim().is_empty() {
            return Err(SaveError::NoAnnotator);
        }
        if self.record(report_id).is_none() {
            return Err(SaveError::UnknownReport(report_id.to_string()));
        }
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let stored = self.store.latest_revision(report_id, &submission.annotator_id);
        if submission.revision <= stored {
            return Err(SaveError::Stale {
                stored,
                submitted: submission.revision,
            });
        }
        if submission.revision > stored + 1 {
            return Err(SaveError::Skipped {
                stored,
                submitted: submission.revision,
            });
        }
        if !confirm {
            let conflicts = self
                .conflicts(report_id, &submission.labels)
                .ok_or_else(|| SaveError::UnknownReport(report_id.to_string()))?;
            if !conflicts.is_empty() {
                return Ok(SaveOutcome::Conflicts { conflicts });
            }
        }
        let record = AnnotationRecord {
            report_id: report_id.to_string(),
            annotator_id: submission.annotator_id,
            labels: submission.labels,
            marked: submission.marked,
            comment: submission.comment.filter(|c| !c.trim().is_empty()),
            saved_at: Utc::now(),
            revision: submission.revision,
        };
        self.store.append(&record)?;
        Ok(SaveOutcome::Saved { record })
    }

    /// Adds a phrase to the live lexicon and records who did it.
    pub fn add_phrase(
        &self,
        class: ObservationClass,
        polarity: Polarity,
        surface: &str,
        annotator_id: &str,
    ) -> Result<AddOutcome> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let outcome = self.lexicons.add_phrase(class, polarity, surface)?;
        let entry = PhraseAudit {
            timestamp: Utc::now(),
            annotator_id,
            class,
            polarity,
            surface,
            outcome,
        };
        let mut line = serde_json::to_vec(&entry)?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.audit_path)
            .at(&self.audit_path)?;
        f.write_all(&line).at(&self.audit_path)?;
        log::info!("{annotator_id} added {surface:?} to {class}/{polarity}: {outcome:?}");
        Ok(outcome)
    }

    /// Latest annotation of every report `annotator_id` has saved, in corpus
    /// order.
    pub fn export(&self, annotator_id: &str) -> Vec<GoldAnnotation> {
        let latest = self.store.latest_by_report(annotator_id);
        self.corpus
            .iter()
            .filter_map(|r| latest.get(&r.report_id))
            .map(|a| GoldAnnotation {
                report_id: a.report_id.clone(),
                labels: a.labels,
            })
            .collect()
    }

    pub fn export_csv(&self, annotator_id: &str) -> Result<String> {
        let rows: Vec<LabelRow> = self.export(annotator_id).iter().map(LabelRow::from).collect();
        let mut buf = Vec::new();
        write_labels_to(&rows, &mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV output is UTF-8"))
    }

    /// One gold CSV per annotator, named `annotations_<annotator>.csv`.
    pub fn export_all(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir).at(out_dir)?;
        let mut written = Vec::new();
        for annotator in self.store.annotators() {
            let safe: String = annotator
                .chars()
                .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            let path = out_dir.join(format!("annotations_{safe}.csv"));
            fs::write(&path, self.export_csv(&annotator)?).at(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}
