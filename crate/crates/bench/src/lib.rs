//! Fixtures for the labeling benchmarks.

use std::path::PathBuf;

use befund_core::{load_lexicons, read_corpus, Lexicons, ReportRecord};

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// The shipped lexicon and the first `n` reports of the bundled corpus,
/// cycled when `n` exceeds its size.
pub fn fixture(n: usize) -> (Lexicons, Vec<ReportRecord>) {
    let root = workspace();
    let lexicons = load_lexicons(&root.join("lexicon")).expect("shipped lexicon").lexicons;
    let corpus = read_corpus(&root.join("data/corpus.jsonl")).expect("bundled corpus");
    let reports = corpus
        .iter()
        .cycle()
        .take(n)
        .enumerate()
        .map(|(i, r)| ReportRecord {
            report_id: format!("{}-{i}", r.report_id),
            ..r.clone()
        })
        .collect();
    (lexicons, reports)
}
