//! Rule-based labeler that turns German chest X-ray reports into the 14
//! CheXpert observation labels, plus the evaluation harness and the backend
//! of the annotation tool.
//!
//! The pipeline is: [`text`] splits a report into sentences and tokens,
//! [`labeler`] matches class-specific phrases from a [`lexicon`], classifies
//! each mention with windowed negation/uncertainty triggers and aggregates
//! mentions into one label per observation.

pub mod annotation;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod labeler;
pub mod lexicon;
pub mod text;

pub use error::{Error, Result};
pub use evaluation::{
    binarize, bootstrap_ci, compute_metrics, evaluate, reduce_task, BootstrapCi, BootstrapConfig,
    ClassMetrics, ConfusionCounts, Evaluation, GoldAnnotation, GoldLabel, Metric, Task,
};
pub use io::{read_corpus, read_labels, write_labels, LabelRow, ReportRecord};
pub use labeler::{
    aggregate, classify_mention, derive_no_finding, extract_mentions, find_triggers, label_batch,
    label_report, CutoffRadius, LabelVector, Mention, MentionClassification, ObservationLabel,
    TriggerOccurrence,
};
pub use lexicon::{
    add_phrase, load_lexicons, validate_lexicons, AddOutcome, Diagnostic, Lexicons, ObservationClass,
    PhraseEntry, PhraseLexicon, Polarity, TriggerEntry, TriggerKind, TriggerLexicon, TriggerPosition,
};
pub use text::{normalize, segment_sentences, tokenize, Abbreviations, Token, TokenizedReport};
