//! Mention extraction, trigger scoping, aggregation and the "no finding" rule.

use std::num::NonZeroUsize;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ReportRecord;
use crate::lexicon::{
    Lexicons, ObservationClass, PhraseEntry, PhraseLexicon, Polarity, TriggerEntry, TriggerKind,
    TriggerLexicon, TriggerPosition,
};
use crate::text::{Token, TokenizedReport};

/// Classification of a single mention. Same three values as a phrase file's
/// polarity.
pub type MentionClassification = Polarity;

/// Number of tokens inspected on each side of a mention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct CutoffRadius(NonZeroUsize);

impl CutoffRadius {
    /// Six tokens is the smallest radius under which "Keine pleurale
    /// Dehiszenz im Sinne eines Pneumothorax" negates the trailing mention.
    pub const DEFAULT: CutoffRadius = CutoffRadius(NonZeroUsize::new(6).unwrap());

    pub fn new(tokens: usize) -> Result<Self> {
        NonZeroUsize::new(tokens)
            .map(Self)
            .ok_or_else(|| Error::Config("cut-off radius must be at least 1".into()))
    }

    pub fn get(self) -> usize {
        self.0.get()
    }
}

impl Default for CutoffRadius {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<usize> for CutoffRadius {
    type Error = Error;
    fn try_from(v: usize) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CutoffRadius> for usize {
    fn from(r: CutoffRadius) -> usize {
        r.get()
    }
}

/// One phrase occurrence. `token_range` is inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub observation: ObservationClass,
    pub phrase: PhraseEntry,
    pub token_range: (usize, usize),
    pub char_span: (usize, usize),
    pub sentence_index: usize,
    pub source_polarity: Polarity,
    pub classification: MentionClassification,
    pub cause: Option<TriggerEntry>,
}

/// A trigger found in a report. `token_range` is inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerOccurrence {
    pub entry: TriggerEntry,
    pub token_range: (usize, usize),
    pub sentence_index: usize,
}

/// Per-observation output label. `Blank` means the observation was not
/// mentioned at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObservationLabel {
    Positive,
    Negative,
    Uncertain,
    #[default]
    Blank,
}

impl ObservationLabel {
    pub fn polarity(self) -> Option<Polarity> {
        match self {
            Self::Positive => Some(Polarity::Positive),
            Self::Negative => Some(Polarity::Negative),
            Self::Uncertain => Some(Polarity::Uncertain),
            Self::Blank => None,
        }
    }

    pub fn from_polarity(p: Option<Polarity>) -> Self {
        match p {
            Some(Polarity::Positive) => Self::Positive,
            Some(Polarity::Negative) => Self::Negative,
            Some(Polarity::Uncertain) => Self::Uncertain,
            None => Self::Blank,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub report_id: String,
    pub labels: [ObservationLabel; ObservationClass::COUNT],
    pub mentions: Vec<Mention>,
}

impl LabelVector {
    pub fn get(&self, class: ObservationClass) -> ObservationLabel {
        self.labels[class.index()]
    }

    pub fn mentions_of(&self, class: ObservationClass) -> impl Iterator<Item = &Mention> {
        self.mentions.iter().filter(move |m| m.observation == class)
    }
}

/// Longest match of any entry in `entries` starting at `start`, as a length.
fn longest_at<'a>(
    entries: &'a [PhraseEntry],
    tokens: &[Token],
    start: usize,
) -> Option<(usize, &'a PhraseEntry)> {
    entries
        .iter()
        .filter(|e| e.matches_at(tokens, start))
        .fold(None, |best: Option<(usize, &'a PhraseEntry)>, e| match best {
            Some((len, _)) if len >= e.len() => best,
            _ => Some((e.len(), e)),
        })
}

/// Finds phrase occurrences sentence by sentence. Within one (class,
/// polarity) list matches are greedy and non-overlapping with the longest
/// phrase winning; different lists overlap freely. The returned mentions
/// carry their source polarity as a provisional classification.
pub fn extract_mentions(report: &TokenizedReport, phrases: &PhraseLexicon) -> Vec<Mention> {
    let mut mentions = Vec::new();
    for (sentence_index, bounds) in report.sentence_boundaries.iter().enumerate() {
        let tokens = &report.tokens[bounds.clone()];
        for class in ObservationClass::matchable() {
            for polarity in Polarity::ALL {
                let list = phrases.entries(class, polarity);
                if list.is_empty() {
                    continue;
                }
                let mut i = 0;
                while i < tokens.len() {
                    match longest_at(list, tokens, i) {
                        Some((len, entry)) => {
                            let first = bounds.start + i;
                            let last = first + len - 1;
                            mentions.push(Mention {
                                observation: class,
                                phrase: entry.clone(),
                                token_range: (first, last),
                                char_span: (
                                    report.tokens[first].char_span.0,
                                    report.tokens[last].char_span.1,
                                ),
                                sentence_index,
                                source_polarity: polarity,
                                classification: polarity,
                                cause: None,
                            });
                            i += len;
                        }
                        None => i += 1,
                    }
                }
            }
        }
    }
    mentions.sort_by_key(|m| (m.token_range.0, m.observation, m.source_polarity, m.token_range.1));
    mentions
}

/// Finds trigger occurrences. At each position the longest trigger wins and
/// scanning resumes after it; entries with identical tokens but different
/// kind or position are all reported.
pub fn find_triggers(report: &TokenizedReport, triggers: &TriggerLexicon) -> Vec<TriggerOccurrence> {
    let mut found = Vec::new();
    for (sentence_index, bounds) in report.sentence_boundaries.iter().enumerate() {
        let tokens = &report.tokens[bounds.clone()];
        let mut i = 0;
        while i < tokens.len() {
            let best = triggers
                .entries()
                .iter()
                .filter(|t| t.phrase.matches_at(tokens, i))
                .map(|t| t.phrase.len())
                .max();
            let Some(len) = best else {
                i += 1;
                continue;
            };
            let first = bounds.start + i;
            for entry in triggers
                .entries()
                .iter()
                .filter(|t| t.phrase.len() == len && t.phrase.matches_at(tokens, i))
            {
                found.push(TriggerOccurrence {
                    entry: entry.clone(),
                    token_range: (first, first + len - 1),
                    sentence_index,
                });
            }
            i += len;
        }
    }
    found
}

/// Drops triggers that cover exactly the same tokens as a phrase match.
pub fn suppress_phrase_overlaps(triggers: &mut Vec<TriggerOccurrence>, mentions: &[Mention]) {
    triggers.retain(|t| !mentions.iter().any(|m| m.token_range == t.token_range));
}

/// Token distance from the mention when `trigger` falls inside the window,
/// `None` otherwise.
fn window_distance(mention: &Mention, trigger: &TriggerOccurrence, radius: usize) -> Option<usize> {
    if trigger.sentence_index != mention.sentence_index {
        return None;
    }
    let (first, last) = mention.token_range;
    match trigger.entry.position {
        TriggerPosition::Pre => {
            let end = trigger.token_range.1;
            (end < first && first - end <= radius).then(|| first - end)
        }
        TriggerPosition::Post => {
            let start = trigger.token_range.0;
            (start > last && start - last <= radius).then(|| start - last)
        }
    }
}

/// Classifies one mention against the triggers of its sentence.
///
/// Mentions from negative or uncertain phrase files keep that polarity. For
/// positive-list mentions, a qualifying uncertainty trigger yields
/// `Uncertain`, otherwise a qualifying negation trigger yields `Negative`,
/// otherwise `Positive`. The second element is the nearest trigger of the
/// deciding kind (ties go to the earlier trigger).
pub fn classify_mention<'t>(
    mention: &Mention,
    triggers_in_sentence: &'t [TriggerOccurrence],
    radius: CutoffRadius,
) -> (MentionClassification, Option<&'t TriggerOccurrence>) {
    if mention.source_polarity != Polarity::Positive {
        return (mention.source_polarity, None);
    }
    let nearest = |kind: TriggerKind| {
        triggers_in_sentence
            .iter()
            .filter(|t| t.entry.kind == kind)
            .filter_map(|t| window_distance(mention, t, radius.get()).map(|d| (d, t)))
            .min_by_key(|(d, t)| (*d, t.token_range.0))
            .map(|(_, t)| t)
    };
    if let Some(t) = nearest(TriggerKind::Uncertainty) {
        (Polarity::Uncertain, Some(t))
    } else if let Some(t) = nearest(TriggerKind::Negation) {
        (Polarity::Negative, Some(t))
    } else {
        (Polarity::Positive, None)
    }
}

/// Positive beats Uncertain beats Negative; no mentions at all is Blank.
pub fn aggregate<I>(classifications: I) -> ObservationLabel
where
    I: IntoIterator<Item = MentionClassification>,
{
    let mut label = ObservationLabel::Blank;
    for c in classifications {
        label = match (label, c) {
            (_, Polarity::Positive) | (ObservationLabel::Positive, _) => ObservationLabel::Positive,
            (_, Polarity::Uncertain) | (ObservationLabel::Uncertain, _) => ObservationLabel::Uncertain,
            _ => ObservationLabel::Negative,
        };
    }
    label
}

/// "No finding" is Positive unless some class other than SupportDevices is
/// Positive or Uncertain. The NoFinding slot of `labels` is ignored.
pub fn derive_no_finding(labels: &[ObservationLabel; ObservationClass::COUNT]) -> ObservationLabel {
    let blocked = ObservationClass::ALL.into_iter().any(|c| {
        c.blocks_no_finding()
            && matches!(labels[c.index()], ObservationLabel::Positive | ObservationLabel::Uncertain)
    });
    if blocked {
        ObservationLabel::Negative
    } else {
        ObservationLabel::Positive
    }
}

/// Runs the whole pipeline on one report.
pub fn label_report(report_id: &str, text: &str, lexicons: &Lexicons, radius: CutoffRadius) -> LabelVector {
    let report = TokenizedReport::new(report_id, text, &lexicons.abbreviations);
    let mut mentions = extract_mentions(&report, &lexicons.phrases);
    let mut triggers = find_triggers(&report, &lexicons.triggers);
    suppress_phrase_overlaps(&mut triggers, &mentions);

    for mention in &mut mentions {
        let in_sentence: Vec<TriggerOccurrence> = triggers
            .iter()
            .filter(|t| t.sentence_index == mention.sentence_index)
            .cloned()
            .collect();
        let (classification, cause) = classify_mention(mention, &in_sentence, radius);
        mention.classification = classification;
        mention.cause = cause.map(|t| t.entry.clone());
    }

    let mut labels = [ObservationLabel::Blank; ObservationClass::COUNT];
    for class in ObservationClass::matchable() {
        labels[class.index()] = aggregate(
            mentions
                .iter()
                .filter(|m| m.observation == class)
                .map(|m| m.classification),
        );
    }
    labels[ObservationClass::NoFinding.index()] = derive_no_finding(&labels);

    LabelVector {
        report_id: report_id.to_string(),
        labels,
        mentions,
    }
}

/// Labels `reports` on a dedicated pool of `workers` threads. Output order
/// matches input order and does not depend on `workers`.
pub fn label_batch(
    reports: &[ReportRecord],
    lexicons: &Lexicons,
    radius: CutoffRadius,
    workers: usize,
) -> Result<Vec<LabelVector>> {
    if workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| {
        reports
            .par_iter()
            .map(|r| label_report(&r.report_id, &r.text, lexicons, radius))
            .collect()
    }))
}
