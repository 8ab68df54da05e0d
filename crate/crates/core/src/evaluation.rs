//! Agreement metrics between labeler output and reference annotations.
//!
//! Each observation is scored on three binary reductions (mention
//! extraction, negation, uncertainty) with precision, recall and F1, and on
//! the binary positive/negative view with sensitivity and specificity.
//! Confidence intervals come from a percentile bootstrap over reports.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::LabelRow;
use crate::labeler::ObservationLabel;
use crate::lexicon::{ObservationClass, Polarity};

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// A human judgment for one observation. `None` means "not mentioned".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Positive,
    Negative,
    Uncertain,
    #[default]
    None,
}

impl GoldLabel {
    pub fn polarity(self) -> Option<Polarity> {
        match self {
            Self::Positive => Some(Polarity::Positive),
            Self::Negative => Some(Polarity::Negative),
            Self::Uncertain => Some(Polarity::Uncertain),
            Self::None => None,
        }
    }

    pub fn from_polarity(p: Option<Polarity>) -> Self {
        match p {
            Some(Polarity::Positive) => Self::Positive,
            Some(Polarity::Negative) => Self::Negative,
            Some(Polarity::Uncertain) => Self::Uncertain,
            None => Self::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub report_id: String,
    pub labels: [GoldLabel; ObservationClass::COUNT],
}

impl From<LabelRow> for GoldAnnotation {
    fn from(row: LabelRow) -> Self {
        Self {
            report_id: row.report_id,
            labels: row.cells.map(GoldLabel::from_polarity),
        }
    }
}

impl From<&GoldAnnotation> for LabelRow {
    fn from(g: &GoldAnnotation) -> Self {
        Self {
            report_id: g.report_id.clone(),
            cells: g.labels.map(GoldLabel::polarity),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    MentionExtraction,
    Negation,
    Uncertainty,
}

impl Task {
    pub const ALL: [Task; 3] = [Self::MentionExtraction, Self::Negation, Self::Uncertainty];

    pub fn name(self) -> &'static str {
        match self {
            Self::MentionExtraction => "mention_extraction",
            Self::Negation => "negation",
            Self::Uncertainty => "uncertainty",
        }
    }

    fn is_positive(self, label: Option<Polarity>) -> bool {
        match self {
            Self::MentionExtraction => label.is_some(),
            Self::Negation => label == Some(Polarity::Negative),
            Self::Uncertainty => label == Some(Polarity::Uncertain),
        }
    }
}

/// Maps a (gold, predicted) pair onto the binary problem of `task`.
pub fn reduce_task(gold: GoldLabel, pred: ObservationLabel, task: Task) -> (bool, bool) {
    (task.is_positive(gold.polarity()), task.is_positive(pred.polarity()))
}

/// Uncertain counts as positive, "none"/Blank as negative.
pub fn binarize(label: Option<Polarity>) -> bool {
    matches!(label, Some(Polarity::Positive | Polarity::Uncertain))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// Counts over (gold, predicted) pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a (bool, bool)>) -> Self {
        let mut c = Self::default();
        for &(gold, pred) in pairs {
            c.add(gold, pred);
        }
        c
    }

    fn add(&mut self, gold: bool, pred: bool) {
        match (gold, pred) {
            (true, true) => self.tp += 1,
            (false, true) => self.fp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        match metric {
            Metric::Precision => ratio(self.tp, self.tp + self.fp),
            Metric::Recall | Metric::Sensitivity => ratio(self.tp, self.tp + self.fn_),
            Metric::Specificity => ratio(self.tn, self.tn + self.fp),
            Metric::F1 => {
                let p = self.metric(Metric::Precision)?;
                let r = self.metric(Metric::Recall)?;
                (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    F1,
    Precision,
    Recall,
    Sensitivity,
    Specificity,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::F1 => "f1",
            Self::Precision => "precision",
            Self::Recall => "recall",
            Self::Sensitivity => "sensitivity",
            Self::Specificity => "specificity",
        }
    }
}

/// Point estimates; `None` where a denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub f1: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

pub fn compute_metrics(counts: &ConfusionCounts) -> ClassMetrics {
    ClassMetrics {
        f1: counts.metric(Metric::F1),
        precision: counts.metric(Metric::Precision),
        recall: counts.metric(Metric::Recall),
        sensitivity: counts.metric(Metric::Sensitivity),
        specificity: counts.metric(Metric::Specificity),
    }
}

/// Formats an optional metric the way result tables show it.
pub fn render(value: Option<f64>) -> String {
    value.map_or_else(|| "N/A".to_string(), |v| format!("{v:.3}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    pub workers: usize,
}

impl BootstrapConfig {
    pub fn new(resamples: usize, seed: u64) -> Self {
        Self {
            resamples,
            seed,
            workers: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    /// (2.5th, 97.5th) percentile of the defined replicates.
    pub interval: Option<(f64, f64)>,
    /// Replicates where the metric was undefined and therefore skipped.
    pub skipped: usize,
}

/// Random stream of replicate `index`: ChaCha8 seeded with `seed`, on
/// stream `index`. Sampling draws `n` indices with `random_range(0..n)`.
pub fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Confusion counts of every bootstrap replicate, in replicate order.
pub fn bootstrap_counts(pairs: &[(bool, bool)], config: &BootstrapConfig) -> Result<Vec<ConfusionCounts>> {
    if pairs.is_empty() {
        return Err(Error::Invalid("bootstrap needs at least one report".into()));
    }
    if config.workers == 0 {
        return Err(Error::Config("worker count must be at least 1".into()));
    }
    let n = pairs.len();
    let replicate = |index: usize| {
        let mut rng = replicate_rng(config.seed, index);
        let mut counts = ConfusionCounts::default();
        for _ in 0..n {
            let (gold, pred) = pairs[rng.random_range(0..n)];
            counts.add(gold, pred);
        }
        counts
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| (0..config.resamples).into_par_iter().map(replicate).collect()))
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn interval_of(replicates: &[ConfusionCounts], metric: Metric) -> BootstrapCi {
    let mut values: Vec<f64> = replicates.iter().filter_map(|c| c.metric(metric)).collect();
    let skipped = replicates.len() - values.len();
    if values.is_empty() {
        return BootstrapCi {
            interval: None,
            skipped,
        };
    }
    values.sort_by(f64::total_cmp);
    BootstrapCi {
        interval: Some((percentile(&values, 0.025), percentile(&values, 0.975))),
        skipped,
    }
}

/// Percentile bootstrap CI of `metric` over per-report (gold, predicted)
/// pairs.
pub fn bootstrap_ci(pairs: &[(bool, bool)], metric: Metric, config: &BootstrapConfig) -> Result<BootstrapCi> {
    Ok(interval_of(&bootstrap_counts(pairs, config)?, metric))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub value: Option<f64>,
    pub ci: Option<[f64; 2]>,
}

/// class → task → metric → value. `binary` is the positive/negative view
/// with uncertain counted as positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Evaluation(pub BTreeMap<String, BTreeMap<String, BTreeMap<String, MetricValue>>>);

pub const BINARY_TASK: &str = "binary";

impl Evaluation {
    pub fn get(&self, class: ObservationClass, task: &str, metric: Metric) -> Option<&MetricValue> {
        self.0.get(class.snake_name())?.get(task)?.get(metric.name())
    }

    /// Every defined value of `metric` across classes and the three tasks.
    pub fn defined(&self, metric: Metric) -> impl Iterator<Item = f64> + '_ {
        self.0
            .values()
            .flat_map(|tasks| tasks.values())
            .filter_map(move |m| m.get(metric.name()).and_then(|v| v.value))
    }
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28}{:>8}{:>8}{:>8}{:>8}{:>8}", "class", "ME F1", "NEG F1", "UNC F1", "SENS", "SPEC")?;
        for class in ObservationClass::ALL {
            let v = |task: &str, m: Metric| render(self.get(class, task, m).and_then(|x| x.value));
            writeln!(
                f,
                "{:<28}{:>8}{:>8}{:>8}{:>8}{:>8}",
                class.snake_name(),
                v("mention_extraction", Metric::F1),
                v("negation", Metric::F1),
                v("uncertainty", Metric::F1),
                v(BINARY_TASK, Metric::Sensitivity),
                v(BINARY_TASK, Metric::Specificity),
            )?;
        }
        Ok(())
    }
}

fn metric_entries(
    pairs: &[(bool, bool)],
    metrics: &[Metric],
    bootstrap: Option<&BootstrapConfig>,
) -> Result<BTreeMap<String, MetricValue>> {
    let counts = ConfusionCounts::from_pairs(pairs);
    let replicates = match bootstrap {
        Some(cfg) if cfg.resamples > 0 && !pairs.is_empty() => Some(bootstrap_counts(pairs, cfg)?),
        _ => None,
    };
    Ok(metrics
        .iter()
        .map(|&m| {
            let ci = replicates
                .as_deref()
                .and_then(|r| interval_of(r, m).interval)
                .map(|(lo, hi)| [lo, hi]);
            (
                m.name().to_string(),
                MetricValue {
                    value: counts.metric(m),
                    ci,
                },
            )
        })
        .collect())
}

/// Scores predictions against gold annotations for all 14 classes. Every
/// report must appear on both sides.
pub fn evaluate(
    pred: &[LabelRow],
    gold: &[GoldAnnotation],
    bootstrap: Option<&BootstrapConfig>,
) -> Result<Evaluation> {
    let by_id: HashMap<&str, &LabelRow> = pred.iter().map(|r| (r.report_id.as_str(), r)).collect();
    if by_id.len() != pred.len() {
        return Err(Error::Invalid("duplicate report id in predictions".into()));
    }
    let gold_ids: HashMap<&str, ()> = gold.iter().map(|g| (g.report_id.as_str(), ())).collect();
    if gold_ids.len() != gold.len() {
        return Err(Error::Invalid("duplicate report id in gold annotations".into()));
    }
    if let Some(p) = pred.iter().find(|p| !gold_ids.contains_key(p.report_id.as_str())) {
        return Err(Error::Unmatched {
            report_id: p.report_id.clone(),
            side: "gold",
        });
    }
    let mut joined = Vec::with_capacity(gold.len());
    for g in gold {
        let p = by_id.get(g.report_id.as_str()).ok_or_else(|| Error::Unmatched {
            report_id: g.report_id.clone(),
            side: "predicted",
        })?;
        joined.push((g, *p));
    }

    let mut out = BTreeMap::new();
    for class in ObservationClass::ALL {
        let mut tasks = BTreeMap::new();
        for task in Task::ALL {
            let pairs: Vec<(bool, bool)> = joined
                .iter()
                .map(|(g, p)| {
                    reduce_task(
                        g.labels[class.index()],
                        ObservationLabel::from_polarity(p.get(class)),
                        task,
                    )
                })
                .collect();
            tasks.insert(
                task.name().to_string(),
                metric_entries(&pairs, &[Metric::F1, Metric::Precision, Metric::Recall], bootstrap)?,
            );
        }
        let binary: Vec<(bool, bool)> = joined
            .iter()
            .map(|(g, p)| (binarize(g.labels[class.index()].polarity()), binarize(p.get(class))))
            .collect();
        tasks.insert(
            BINARY_TASK.to_string(),
            metric_entries(&binary, &[Metric::Sensitivity, Metric::Specificity], bootstrap)?,
        );
        out.insert(class.snake_name().to_string(), tasks);
    }
    Ok(Evaluation(out))
}
