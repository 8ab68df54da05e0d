//! Phrase and trigger lexicons.
//!
//! On disk a lexicon is a directory with one plain-text file per
//! (observation, polarity) pair and four trigger files:
//!
//! ```text
//! lexicon/<class>/{positive,negative,uncertain}.txt
//! lexicon/triggers/{negation,uncertainty}_{pre,post}.txt
//! lexicon/abbreviations.txt
//! ```
//!
//! One phrase per line, `#` starts a comment, and a trailing `*` turns the
//! last token into a prefix match.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::text::{phrase_tokens, Abbreviations, Token, DEFAULT_ABBREVIATIONS};

/// The 14 CheXpert observations, in label-file column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationClass {
    Atelectasis,
    Cardiomegaly,
    Consolidation,
    Edema,
    EnlargedCardiomediastinum,
    Fracture,
    LungLesion,
    LungOpacity,
    NoFinding,
    PleuralEffusion,
    PleuralOther,
    Pneumonia,
    Pneumothorax,
    SupportDevices,
}

impl ObservationClass {
    pub const COUNT: usize = 14;

    pub const ALL: [ObservationClass; Self::COUNT] = [
        Self::Atelectasis,
        Self::Cardiomegaly,
        Self::Consolidation,
        Self::Edema,
        Self::EnlargedCardiomediastinum,
        Self::Fracture,
        Self::LungLesion,
        Self::LungOpacity,
        Self::NoFinding,
        Self::PleuralEffusion,
        Self::PleuralOther,
        Self::Pneumonia,
        Self::Pneumothorax,
        Self::SupportDevices,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn snake_name(self) -> &'static str {
        match self {
            Self::Atelectasis => "atelectasis",
            Self::Cardiomegaly => "cardiomegaly",
            Self::Consolidation => "consolidation",
            Self::Edema => "edema",
            Self::EnlargedCardiomediastinum => "enlarged_cardiomediastinum",
            Self::Fracture => "fracture",
            Self::LungLesion => "lung_lesion",
            Self::LungOpacity => "lung_opacity",
            Self::NoFinding => "no_finding",
            Self::PleuralEffusion => "pleural_effusion",
            Self::PleuralOther => "pleural_other",
            Self::Pneumonia => "pneumonia",
            Self::Pneumothorax => "pneumothorax",
            Self::SupportDevices => "support_devices",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Self::Atelectasis => "Atelectasis",
            Self::Cardiomegaly => "Cardiomegaly",
            Self::Consolidation => "Consolidation",
            Self::Edema => "Edema",
            Self::EnlargedCardiomediastinum => "Enlarged cardiomediastinum",
            Self::Fracture => "Fracture",
            Self::LungLesion => "Lung lesion",
            Self::LungOpacity => "Lung opacity",
            Self::NoFinding => "No finding",
            Self::PleuralEffusion => "Pleural effusion",
            Self::PleuralOther => "Pleural other",
            Self::Pneumonia => "Pneumonia",
            Self::Pneumothorax => "Pneumothorax",
            Self::SupportDevices => "Support devices",
        }
    }

    pub fn from_snake(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.snake_name() == name)
    }

    /// NoFinding is derived from the other labels and never matched.
    pub fn has_phrase_lists(self) -> bool {
        self != Self::NoFinding
    }

    /// Whether a Positive/Uncertain label on this class rules out NoFinding.
    pub fn blocks_no_finding(self) -> bool {
        !matches!(self, Self::NoFinding | Self::SupportDevices)
    }

    /// The 13 classes that have phrase files.
    pub fn matchable() -> impl Iterator<Item = ObservationClass> {
        Self::ALL.into_iter().filter(|c| c.has_phrase_lists())
    }
}

impl fmt::Display for ObservationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.snake_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Uncertain,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Self::Positive, Self::Negative, Self::Uncertain];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Positive => "positive",
            Self::Negative => "negative",
            Self::Uncertain => "uncertain",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Self::Positive => "positive.txt",
            Self::Negative => "negative.txt",
            Self::Uncertain => "uncertain.txt",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A normalized token sequence, optionally matching its last token by prefix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhraseEntry {
    pub tokens: Vec<String>,
    pub prefix_wildcard: bool,
}

impl PhraseEntry {
    pub fn parse(surface: &str) -> Result<Self> {
        let trimmed = surface.trim();
        let (body, prefix_wildcard) = match trimmed.strip_suffix('*') {
            Some(body) => (body, true),
            None => (trimmed, false),
        };
        let tokens = phrase_tokens(body);
        if tokens.is_empty() {
            return Err(Error::EmptyPhrase);
        }
        Ok(Self {
            tokens,
            prefix_wildcard,
        })
    }

    /// Canonical one-line form, e.g. `infiltrat*`.
    pub fn text(&self) -> String {
        let mut s = self.tokens.join(" ");
        if self.prefix_wildcard {
            s.push('*');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn token_matches(&self, k: usize, candidate: &str) -> bool {
        let want = &self.tokens[k];
        if self.prefix_wildcard && k + 1 == self.tokens.len() {
            candidate.starts_with(want.as_str())
        } else {
            candidate == want
        }
    }

    /// Whether the phrase occurs in `tokens` starting at `start`.
    pub fn matches_at(&self, tokens: &[Token], start: usize) -> bool {
        start + self.tokens.len() <= tokens.len()
            && (0..self.tokens.len()).all(|k| self.token_matches(k, &tokens[start + k].normalized))
    }

    /// Same test over plain normalized strings.
    pub fn matches_words_at(&self, words: &[String], start: usize) -> bool {
        start + self.tokens.len() <= words.len()
            && (0..self.tokens.len()).all(|k| self.token_matches(k, &words[start + k]))
    }
}

impl fmt::Display for PhraseEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

/// Outcome of inserting a phrase into a list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AddOutcome {
    Added,
    AlreadyPresent,
}

/// Per-observation phrase lists, one per polarity. Lists are kept sorted by
/// canonical text and free of duplicates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PhraseLexicon {
    lists: [[Vec<PhraseEntry>; 3]; ObservationClass::COUNT],
}

impl PhraseLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self, class: ObservationClass, polarity: Polarity) -> &[PhraseEntry] {
        &self.lists[class.index()][polarity.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ObservationClass, Polarity, &PhraseEntry)> {
        ObservationClass::ALL.into_iter().flat_map(move |class| {
            Polarity::ALL.into_iter().flat_map(move |polarity| {
                self.entries(class, polarity)
                    .iter()
                    .map(move |entry| (class, polarity, entry))
            })
        })
    }

    pub fn len(&self) -> usize {
        self.lists.iter().flatten().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn insert_entry(
        &mut self,
        class: ObservationClass,
        polarity: Polarity,
        entry: PhraseEntry,
    ) -> Result<AddOutcome> {
        if !class.has_phrase_lists() {
            return Err(Error::NoPhraseLists(class.snake_name()));
        }
        let list = &mut self.lists[class.index()][polarity.index()];
        if list.contains(&entry) {
            return Ok(AddOutcome::AlreadyPresent);
        }
        let key = entry.text();
        let at = list.partition_point(|e| e.text() < key);
        list.insert(at, entry);
        Ok(AddOutcome::Added)
    }

    /// Returns a copy with `surface` added to the (class, polarity) list.
    /// Does not touch the filesystem; see [`add_phrase`] for that.
    pub fn with_phrase(
        &self,
        class: ObservationClass,
        polarity: Polarity,
        surface: &str,
    ) -> Result<(Self, AddOutcome)> {
        if !class.has_phrase_lists() {
            return Err(Error::NoPhraseLists(class.snake_name()));
        }
        let entry = PhraseEntry::parse(surface)?;
        let mut next = self.clone();
        let outcome = next.insert_entry(class, polarity, entry)?;
        Ok((next, outcome))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    Negation,
    Uncertainty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPosition {
    /// Scopes forward over mentions that follow it.
    Pre,
    /// Scopes backward over mentions that precede it.
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriggerEntry {
    pub phrase: PhraseEntry,
    pub kind: TriggerKind,
    pub position: TriggerPosition,
}

impl TriggerEntry {
    pub fn new(surface: &str, kind: TriggerKind, position: TriggerPosition) -> Result<Self> {
        Ok(Self {
            phrase: PhraseEntry::parse(surface)?,
            kind,
            position,
        })
    }

    fn sort_key(&self) -> (String, TriggerKind, TriggerPosition) {
        (self.phrase.text(), self.kind, self.position)
    }
}

const TRIGGER_FILES: [(&str, TriggerKind, TriggerPosition); 4] = [
    ("negation_pre.txt", TriggerKind::Negation, TriggerPosition::Pre),
    ("negation_post.txt", TriggerKind::Negation, TriggerPosition::Post),
    ("uncertainty_pre.txt", TriggerKind::Uncertainty, TriggerPosition::Pre),
    ("uncertainty_post.txt", TriggerKind::Uncertainty, TriggerPosition::Post),
];

/// Negation and uncertainty cues, deduplicated and sorted.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TriggerLexicon {
    entries: Vec<TriggerEntry>,
}

impl TriggerLexicon {
    pub fn new(entries: impl IntoIterator<Item = TriggerEntry>) -> Self {
        let mut entries: Vec<TriggerEntry> = entries.into_iter().collect();
        entries.sort_by_key(TriggerEntry::sort_key);
        entries.dedup();
        Self { entries }
    }

    /// Minimal built-in trigger set. The shipped `lexicon/triggers` files are
    /// a superset of this.
    pub fn starter() -> Self {
        use TriggerKind::*;
        use TriggerPosition::*;
        let raw = [
            ("kein", Negation, Pre),
            ("keine", Negation, Pre),
            ("keinen", Negation, Pre),
            ("nicht", Negation, Pre),
            ("ohne", Negation, Pre),
            ("kann ausgeschlossen werden", Negation, Post),
            ("ausgeschlossen", Negation, Post),
            ("v.a.", Uncertainty, Pre),
            ("verdacht auf", Uncertainty, Pre),
            ("unwahrscheinlich", Uncertainty, Post),
            ("nicht ausgeschlossen", Uncertainty, Post),
        ];
        Self::new(
            raw.into_iter()
                .map(|(s, k, p)| TriggerEntry::new(s, k, p).expect("starter triggers are valid")),
        )
    }

    pub fn entries(&self) -> &[TriggerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Everything the labeler needs, as one immutable snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub phrases: PhraseLexicon,
    pub triggers: TriggerLexicon,
    pub abbreviations: Abbreviations,
}

impl Lexicons {
    pub fn new(phrases: PhraseLexicon, triggers: TriggerLexicon) -> Self {
        Self {
            phrases,
            triggers,
            abbreviations: Abbreviations::default(),
        }
    }
}

/// Warnings raised while loading or validating a lexicon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    Duplicate {
        path: PathBuf,
        line: usize,
        phrase: String,
    },
    EqualsTrigger {
        class: ObservationClass,
        polarity: Polarity,
        phrase: String,
    },
    ContainsTrigger {
        class: ObservationClass,
        polarity: Polarity,
        phrase: String,
        trigger: String,
    },
    Shadowed {
        class: ObservationClass,
        polarity: Polarity,
        shorter: String,
        longer: String,
    },
    EmptyList {
        class: ObservationClass,
        polarity: Polarity,
    },
    NoTriggers,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Duplicate { path, line, phrase } => {
                write!(f, "{}:{line}: duplicate phrase {phrase:?} ignored", path.display())
            }
            Self::EqualsTrigger {
                class,
                polarity,
                phrase,
            } => write!(f, "{class}/{polarity}: phrase {phrase:?} is also a trigger"),
            Self::ContainsTrigger {
                class,
                polarity,
                phrase,
                trigger,
            } => write!(f, "{class}/{polarity}: phrase {phrase:?} contains trigger {trigger:?}"),
            Self::Shadowed {
                class,
                polarity,
                shorter,
                longer,
            } => write!(
                f,
                "{class}/{polarity}: {shorter:?} is a prefix of {longer:?} and never wins where both match"
            ),
            Self::EmptyList { class, polarity } => write!(f, "{class}/{polarity}: list is empty"),
            Self::NoTriggers => write!(f, "trigger lexicon is empty"),
        }
    }
}

/// Result of [`load_lexicons`]: the snapshot plus non-fatal warnings.
#[derive(Debug, Clone)]
pub struct LoadedLexicons {
    pub lexicons: Lexicons,
    pub warnings: Vec<Diagnostic>,
}

/// Meaningful lines of a lexicon file as (1-based line number, content).
fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let content = match fs::read_to_string(path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e).at(path),
    };
    Ok(content
        .lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let body = line.split('#').next().unwrap_or("").trim();
            (!body.is_empty()).then(|| (i + 1, body.to_string()))
        })
        .collect())
}

fn parse_entry(path: &Path, line: usize, body: &str) -> Result<PhraseEntry> {
    PhraseEntry::parse(body).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        line,
        message: format!("{body:?} is empty after normalization"),
    })
}

pub fn class_dir(root: &Path, class: ObservationClass) -> PathBuf {
    root.join(class.snake_name())
}

pub fn phrase_file(root: &Path, class: ObservationClass, polarity: Polarity) -> PathBuf {
    class_dir(root, class).join(polarity.file_name())
}

/// Reads a lexicon directory. Missing files count as empty lists; duplicates
/// within one list keep the first occurrence and produce a warning.
pub fn load_lexicons(root: &Path) -> Result<LoadedLexicons> {
    if !root.is_dir() {
        return Err(Error::MissingLexicon(root.to_path_buf()));
    }
    let mut warnings = Vec::new();
    let mut phrases = PhraseLexicon::new();

    for class in ObservationClass::matchable() {
        for polarity in Polarity::ALL {
            let path = phrase_file(root, class, polarity);
            for (line, body) in read_lines(&path)? {
                let entry = parse_entry(&path, line, &body)?;
                if phrases.insert_entry(class, polarity, entry.clone())? == AddOutcome::AlreadyPresent {
                    warnings.push(Diagnostic::Duplicate {
                        path: path.clone(),
                        line,
                        phrase: entry.text(),
                    });
                }
            }
        }
    }

    let mut seen = BTreeSet::new();
    let mut triggers = Vec::new();
    for (file, kind, position) in TRIGGER_FILES {
        let path = root.join("triggers").join(file);
        for (line, body) in read_lines(&path)? {
            let phrase = parse_entry(&path, line, &body)?;
            let entry = TriggerEntry {
                phrase,
                kind,
                position,
            };
            if !seen.insert(entry.sort_key()) {
                warnings.push(Diagnostic::Duplicate {
                    path: path.clone(),
                    line,
                    phrase: entry.phrase.text(),
                });
                continue;
            }
            triggers.push(entry);
        }
    }
    let triggers = TriggerLexicon::new(triggers);
    if triggers.is_empty() {
        warnings.push(Diagnostic::NoTriggers);
    }

    let abbreviation_path = root.join("abbreviations.txt");
    let abbreviations = if abbreviation_path.exists() {
        Abbreviations::new(read_lines(&abbreviation_path)?.into_iter().map(|(_, b)| b))
    } else {
        Abbreviations::new(DEFAULT_ABBREVIATIONS)
    };

    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(LoadedLexicons {
        lexicons: Lexicons {
            phrases,
            triggers,
            abbreviations,
        },
        warnings,
    })
}

fn write_atomically(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).at(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{file_name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).at(&tmp)?;
        f.write_all(contents.as_bytes()).at(&tmp)?;
        f.sync_all().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

fn render_list<'a>(entries: impl Iterator<Item = &'a PhraseEntry>) -> String {
    entries.map(|e| e.text() + "\n").collect()
}

/// Writes every list of `lexicons` under `root`, replacing existing files.
pub fn save_lexicons(root: &Path, lexicons: &Lexicons) -> Result<()> {
    for class in ObservationClass::matchable() {
        for polarity in Polarity::ALL {
            let body = render_list(lexicons.phrases.entries(class, polarity).iter());
            write_atomically(&phrase_file(root, class, polarity), &body)?;
        }
    }
    for (file, kind, position) in TRIGGER_FILES {
        let body = render_list(
            lexicons
                .triggers
                .entries()
                .iter()
                .filter(|t| t.kind == kind && t.position == position)
                .map(|t| &t.phrase),
        );
        write_atomically(&root.join("triggers").join(file), &body)?;
    }
    let abbreviations: String = lexicons
        .abbreviations
        .sorted()
        .into_iter()
        .map(|a| format!("{a}\n"))
        .collect();
    write_atomically(&root.join("abbreviations.txt"), &abbreviations)
}

/// Adds a phrase and appends it to the backing file under `root`. The file
/// is rewritten through a temporary copy so readers never see a torn write;
/// existing lines and comments are kept.
pub fn add_phrase(
    root: &Path,
    lexicon: &PhraseLexicon,
    class: ObservationClass,
    polarity: Polarity,
    surface: &str,
) -> Result<(PhraseLexicon, AddOutcome)> {
    let (next, outcome) = lexicon.with_phrase(class, polarity, surface)?;
    if outcome == AddOutcome::AlreadyPresent {
        return Ok((next, outcome));
    }
    let path = phrase_file(root, class, polarity);
    let mut contents = match fs::read_to_string(&path) {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e).at(&path),
    };
    if !contents.is_empty() && !contents.ends_with('\n') {
        contents.push('\n');
    }
    let line: Vec<&str> = surface.split('#').next().unwrap_or("").split_whitespace().collect();
    contents.push_str(&line.join(" "));
    contents.push('\n');
    write_atomically(&path, &contents)?;
    Ok((next, outcome))
}

/// Static checks that catch lexicon mistakes which would silently change
/// labeling behavior.
pub fn validate_lexicons(phrases: &PhraseLexicon, triggers: &TriggerLexicon) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if triggers.is_empty() {
        out.push(Diagnostic::NoTriggers);
    }
    for class in ObservationClass::matchable() {
        for polarity in Polarity::ALL {
            let list = phrases.entries(class, polarity);
            if list.is_empty() {
                out.push(Diagnostic::EmptyList { class, polarity });
            }
            for entry in list {
                for trigger in triggers.entries() {
                    if trigger.phrase.tokens == entry.tokens {
                        out.push(Diagnostic::EqualsTrigger {
                            class,
                            polarity,
                            phrase: entry.text(),
                        });
                    } else if contains_pattern(&entry.tokens, &trigger.phrase) {
                        out.push(Diagnostic::ContainsTrigger {
                            class,
                            polarity,
                            phrase: entry.text(),
                            trigger: trigger.phrase.text(),
                        });
                    }
                }
            }
            for shorter in list {
                for longer in list {
                    if shorter.len() < longer.len() && shorter.matches_words_at(&longer.tokens, 0) {
                        out.push(Diagnostic::Shadowed {
                            class,
                            polarity,
                            shorter: shorter.text(),
                            longer: longer.text(),
                        });
                    }
                }
            }
        }
    }
    out.dedup();
    out
}

fn contains_pattern(words: &[String], pattern: &PhraseEntry) -> bool {
    (0..words.len()).any(|start| pattern.matches_words_at(words, start))
}

/// Lexicon directory plus the current snapshot. Readers take cheap `Arc`
/// clones; phrase additions are serialized and swap the snapshot in one step.
#[derive(Debug)]
pub struct LexiconStore {
    root: PathBuf,
    snapshot: RwLock<Arc<Lexicons>>,
    writer: Mutex<()>,
}

impl LexiconStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<(Self, Vec<Diagnostic>)> {
        let root = root.into();
        let loaded = load_lexicons(&root)?;
        Ok((
            Self {
                root,
                snapshot: RwLock::new(Arc::new(loaded.lexicons)),
                writer: Mutex::new(()),
            },
            loaded.warnings,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snapshot(&self) -> Arc<Lexicons> {
        Arc::clone(&self.snapshot.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn add_phrase(
        &self,
        class: ObservationClass,
        polarity: Polarity,
        surface: &str,
    ) -> Result<AddOutcome> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.snapshot();
        let (phrases, outcome) = add_phrase(&self.root, &current.phrases, class, polarity, surface)?;
        if outcome == AddOutcome::Added {
            let next = Lexicons {
                phrases,
                triggers: current.triggers.clone(),
                abbreviations: current.abbreviations.clone(),
            };
            *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn write(root: &Path, rel: &str, body: &str) {
        let path = root.join(rel);
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(path, body).unwrap();
    }

    fn texts(lex: &PhraseLexicon, class: ObservationClass, polarity: Polarity) -> Vec<String> {
        lex.entries(class, polarity).iter().map(PhraseEntry::text).collect()
    }

    #[test]
    fn fourteen_classes_two_special() {
        assert_eq!(ObservationClass::ALL.len(), 14);
        assert_eq!(ObservationClass::matchable().count(), 13);
        let blocking = ObservationClass::ALL.iter().filter(|c| c.blocks_no_finding()).count();
        assert_eq!(blocking, 12);
        for c in ObservationClass::ALL {
            assert_eq!(ObservationClass::from_snake(c.snake_name()), Some(c));
        }
    }

    #[test]
    fn loads_pneumothorax_phrases() {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "pneumothorax/positive.txt", "Pneumothorax\npleurale Dehiszenz\n");
        let loaded = load_lexicons(dir.path()).unwrap();
        let lex = &loaded.lexicons.phrases;
        assert_eq!(
            texts(lex, ObservationClass::Pneumothorax, Polarity::Positive),
            vec!["pleurale dehiszenz", "pneumothorax"]
        );
    }

    #[test]
    fn empty_class_dir_gives_empty_lists() {
        let dir = TempDir::new().unwrap();
        fs::create_dir_all(dir.path().join("fracture")).unwrap();
        let loaded = load_lexicons(dir.path()).unwrap();
        for p in Polarity::ALL {
            assert!(loaded.lexicons.phrases.entries(ObservationClass::Fracture, p).is_empty());
        }
    }

    #[test]
    fn shared_wildcard_phrase() {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "lung_opacity/positive.txt", "Infiltrat*\n");
        write(dir.path(), "pneumonia/positive.txt", "# shared\nInfiltrat*\n");
        let lex = load_lexicons(dir.path()).unwrap().lexicons.phrases;
        let a = &lex.entries(ObservationClass::LungOpacity, Polarity::Positive)[0];
        let b = &lex.entries(ObservationClass::Pneumonia, Polarity::Positive)[0];
        assert_eq!(a, b);
        assert!(a.prefix_wildcard);
        assert_eq!(a.tokens, vec!["infiltrat"]);
    }

    #[test]
    fn missing_root_is_fatal() {
        let dir = TempDir::new().unwrap();
        let err = load_lexicons(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, Error::MissingLexicon(_)));
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "edema/positive.txt", "Stauung\n# ok\n...\n");
        match load_lexicons(dir.path()).unwrap_err() {
            Error::Malformed { path, line, .. } => {
                assert!(path.ends_with("edema/positive.txt"));
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_keeps_first_and_warns() {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "edema/positive.txt", "Stauung\nSTAUUNG\n");
        let loaded = load_lexicons(dir.path()).unwrap();
        assert_eq!(loaded.lexicons.phrases.entries(ObservationClass::Edema, Polarity::Positive).len(), 1);
        assert!(matches!(loaded.warnings[0], Diagnostic::Duplicate { line: 2, .. }));
    }

    #[test]
    fn add_phrase_to_empty() {
        let lex = PhraseLexicon::new();
        let (lex, outcome) = lex
            .with_phrase(ObservationClass::PleuralEffusion, Polarity::Positive, "Pleuraerguss")
            .unwrap();
        assert_eq!(outcome, AddOutcome::Added);
        assert_eq!(lex.entries(ObservationClass::PleuralEffusion, Polarity::Positive).len(), 1);
        let (lex, outcome) = lex
            .with_phrase(ObservationClass::PleuralEffusion, Polarity::Positive, "pleuraerguss")
            .unwrap();
        assert_eq!(outcome, AddOutcome::AlreadyPresent);
        assert_eq!(lex.entries(ObservationClass::PleuralEffusion, Polarity::Positive).len(), 1);
    }

    #[test]
    fn add_phrase_rejects_no_finding_and_empty() {
        let lex = PhraseLexicon::new();
        assert!(matches!(
            lex.with_phrase(ObservationClass::NoFinding, Polarity::Positive, "normal"),
            Err(Error::NoPhraseLists(_))
        ));
        assert!(matches!(
            lex.with_phrase(ObservationClass::Edema, Polarity::Positive, " .,; "),
            Err(Error::EmptyPhrase)
        ));
    }

    #[test]
    fn add_phrase_persists_and_keeps_comments() {
        let dir = TempDir::new().unwrap();
        write(dir.path(), "cardiomegaly/negative.txt", "# normal heart\nnormale Herzgröße");
        let lex = load_lexicons(dir.path()).unwrap().lexicons.phrases;
        let (next, outcome) = add_phrase(
            dir.path(),
            &lex,
            ObservationClass::Cardiomegaly,
            Polarity::Negative,
            "Herz normal groß",
        )
        .unwrap();
        assert_eq!(outcome, AddOutcome::Added);
        let body = fs::read_to_string(dir.path().join("cardiomegaly/negative.txt")).unwrap();
        assert_eq!(body, "# normal heart\nnormale Herzgröße\nHerz normal groß\n");
        let reloaded = load_lexicons(dir.path()).unwrap().lexicons.phrases;
        assert_eq!(reloaded, next);
    }

    #[test]
    fn store_swaps_snapshot() {
        let dir = TempDir::new().unwrap();
        fs::create_dir_all(dir.path()).unwrap();
        let (store, _) = LexiconStore::open(dir.path()).unwrap();
        let before = store.snapshot();
        store
            .add_phrase(ObservationClass::Edema, Polarity::Positive, "Stauung")
            .unwrap();
        assert!(before.phrases.is_empty());
        assert_eq!(store.snapshot().phrases.len(), 1);
        assert_eq!(
            store
                .add_phrase(ObservationClass::Edema, Polarity::Positive, "Stauung")
                .unwrap(),
            AddOutcome::AlreadyPresent
        );
    }

    fn triggers() -> TriggerLexicon {
        TriggerLexicon::starter()
    }

    #[test]
    fn validate_trigger_collision() {
        let (lex, _) = PhraseLexicon::new()
            .with_phrase(ObservationClass::Edema, Polarity::Negative, "kein")
            .unwrap();
        let diags = validate_lexicons(&lex, &triggers());
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::EqualsTrigger { phrase, .. } if phrase == "kein")));
    }

    #[test]
    fn validate_prefix_shadowing() {
        let (lex, _) = PhraseLexicon::new()
            .with_phrase(ObservationClass::PleuralEffusion, Polarity::Positive, "Erguss")
            .unwrap();
        let (lex, _) = lex
            .with_phrase(ObservationClass::PleuralEffusion, Polarity::Positive, "Erguss beidseits")
            .unwrap();
        let diags = validate_lexicons(&lex, &triggers());
        assert!(diags.contains(&Diagnostic::Shadowed {
            class: ObservationClass::PleuralEffusion,
            polarity: Polarity::Positive,
            shorter: "erguss".into(),
            longer: "erguss beidseits".into(),
        }));
    }

    #[test]
    fn validate_disjoint_is_clean() {
        let mut lex = PhraseLexicon::new();
        for (i, class) in ObservationClass::matchable().enumerate() {
            for polarity in Polarity::ALL {
                let phrase = format!("befund{i}{}", polarity.as_str());
                lex = lex.with_phrase(class, polarity, &phrase).unwrap().0;
            }
        }
        assert_eq!(validate_lexicons(&lex, &triggers()), vec![]);
    }

    fn arb_phrase() -> impl Strategy<Value = String> {
        prop::collection::vec("[a-zäöüß]{1,6}", 1..4)
            .prop_flat_map(|words| (Just(words.join(" ")), any::<bool>()))
            .prop_map(|(s, wild)| if wild { s + "*" } else { s })
    }

    proptest! {
        #[test]
        fn load_ignores_line_order(mut lines in prop::collection::vec(arb_phrase(), 0..12), seed in any::<u64>()) {
            let a = TempDir::new().unwrap();
            let b = TempDir::new().unwrap();
            write(a.path(), "edema/positive.txt", &lines.join("\n"));
            // deterministic shuffle driven by the seed
            let n = lines.len();
            for i in 0..n {
                let j = ((seed.rotate_left(i as u32) ^ i as u64) % n as u64) as usize;
                lines.swap(i, j);
            }
            write(b.path(), "edema/positive.txt", &lines.join("\n"));
            let la = load_lexicons(a.path()).unwrap().lexicons;
            let lb = load_lexicons(b.path()).unwrap().lexicons;
            prop_assert_eq!(la.phrases, lb.phrases);
        }

        #[test]
        fn save_then_load_round_trips(phrases in prop::collection::vec((0usize..13, 0usize..3, arb_phrase()), 0..20)) {
            let mut lex = PhraseLexicon::new();
            let classes: Vec<_> = ObservationClass::matchable().collect();
            for (c, p, s) in &phrases {
                lex = lex.with_phrase(classes[*c], Polarity::ALL[*p], s).unwrap().0;
            }
            let lexicons = Lexicons::new(lex, TriggerLexicon::starter());
            let dir = TempDir::new().unwrap();
            save_lexicons(dir.path(), &lexicons).unwrap();
            let loaded = load_lexicons(dir.path()).unwrap();
            prop_assert!(loaded.warnings.is_empty());
            prop_assert_eq!(loaded.lexicons, lexicons);
        }

        #[test]
        fn distinct_additions_commute(a in arb_phrase(), b in arb_phrase()) {
            let empty = PhraseLexicon::new();
            let class = ObservationClass::Pneumonia;
            let ab = empty.with_phrase(class, Polarity::Positive, &a).unwrap().0
                .with_phrase(class, Polarity::Positive, &b).unwrap().0;
            let ba = empty.with_phrase(class, Polarity::Positive, &b).unwrap().0
                .with_phrase(class, Polarity::Positive, &a).unwrap().0;
            let twice = ab.with_phrase(class, Polarity::Positive, &a).unwrap().0;
            prop_assert_eq!(&ab, &ba);
            prop_assert_eq!(&ab, &twice);
        }
    }
}
