//! Confusion matrices, accuracy rates and confidence-weighted aggregation.
//!
//! Matrices put the reference (ground-truth) class on rows and the map class
//! on columns: producer's accuracy reads along rows, user's accuracy along
//! columns. Rates stay in full precision; rounding to whole percents only
//! happens in [`percent`] and the text rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::{ConfidenceLevel, GroundTruth};
use crate::nomenclature::GeneralClass;
use crate::retrieval::{RetrievalError, RetrievalTable};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("expected {expected} counts for {n} classes, got {actual}")]
    Shape { n: usize, expected: usize, actual: usize },
    #[error("kappa is undefined: expected agreement is 1")]
    UndefinedKappa,
    #[error("no confidence levels given")]
    NoLevels,
    #[error("level {level} has an invalid percent range [{low}, {high}]")]
    BadLevelRange { level: u8, low: f64, high: f64 },
    #[error("duplicate confidence level {0}")]
    DuplicateLevel(u8),
    #[error("level {0} has observations but no weight")]
    MissingWeight(u8),
    #[error("level {0} has observations but no accuracy")]
    MissingAccuracy(u8),
    #[error("accuracy {1} of level {0} is outside [0, 1]")]
    BadAccuracy(u8, f64),
    #[error("no level has any observations")]
    NoObservations,
    #[error("sample sets differ: {only_truth} only in ground truth, {only_map} only in the retrieval table")]
    SampleMismatch { only_truth: usize, only_map: usize },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self { labels, counts: vec![0; n * n] }
    }

    /// Empty matrix over the five general classes.
    pub fn general() -> Self {
        Self::zeros(GeneralClass::ALL.iter().map(|c| c.name().to_string()).collect())
    }

    /// `counts` is row-major, rows = reference, columns = map.
    pub fn from_counts(labels: Vec<String>, counts: Vec<u64>) -> Result<Self, MetricsError> {
        let n = labels.len();
        if counts.len() != n * n {
            return Err(MetricsError::Shape { n, expected: n * n, actual: counts.len() });
        }
        Ok(Self { labels, counts })
    }

    pub fn from_general_rows(rows: [[u64; 5]; 5]) -> Self {
        let mut m = Self::general();
        m.counts = rows.iter().flatten().copied().collect();
        m
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, mapped: usize) -> u64 {
        self.counts[truth * self.size() + mapped]
    }

    pub fn add(&mut self, truth: usize, mapped: usize) {
        let n = self.size();
        self.counts[truth * n + mapped] += 1;
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        let n = self.size();
        self.counts[class * n..(class + 1) * n].iter().sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        (0..self.size()).map(|r| self.get(r, class)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.get(i, i)).sum()
    }

    /// Element-wise sum of matrices over the same classes.
    pub fn merged<'a>(matrices: impl IntoIterator<Item = &'a ConfusionMatrix>) -> Option<ConfusionMatrix> {
        let mut iter = matrices.into_iter();
        let mut acc = iter.next()?.clone();
        for m in iter {
            assert_eq!(m.labels, acc.labels, "merging matrices over different classes");
            for (a, b) in acc.counts.iter_mut().zip(&m.counts) {
                *a += b;
            }
        }
        Some(acc)
    }
}

pub fn overall_accuracy(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match m.total() {
        0 => Err(MetricsError::EmptyMatrix),
        total => Ok(m.trace() as f64 / total as f64),
    }
}

/// Producer's and user's accuracy of one class; `None` when the marginal is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub producer: Option<f64>,
    pub user: Option<f64>,
}

pub fn producer_user_accuracy(m: &ConfusionMatrix) -> Result<Vec<ClassAccuracy>, MetricsError> {
    if m.total() == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    Ok((0..m.size())
        .map(|c| {
            let diag = m.get(c, c) as f64;
            let row = m.row_sum(c);
            let col = m.col_sum(c);
            ClassAccuracy { producer: (row > 0).then(|| diag / row as f64), user: (col > 0).then(|| diag / col as f64) }
        })
        .collect())
}

/// Cohen's kappa, `(p_o − p_e) / (1 − p_e)`.
///
/// Evaluated as `(N·trace − Σ row·col) / (N² − Σ row·col)` in integers, so the
/// only rounding is the final division and kappa near zero keeps full precision.
pub fn kappa(m: &ConfusionMatrix) -> Result<f64, MetricsError> {
    let total = m.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let chance: u128 = (0..m.size()).map(|c| m.row_sum(c) as u128 * m.col_sum(c) as u128).sum();
    let total_sq = total as u128 * total as u128;
    if chance == total_sq {
        return Err(MetricsError::UndefinedKappa);
    }
    let num = (total as u128 * m.trace() as u128) as i128 - chance as i128;
    let den = (total_sq - chance) as i128;
    Ok(ratio(num, den))
}

/// `num / den` rounded once, after removing common factors.
fn ratio(num: i128, den: i128) -> f64 {
    let (mut a, mut b) = (num.unsigned_abs(), den.unsigned_abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    let g = a.max(1) as i128;
    let (n, d) = (num / g, den / g);
    // Both fit in 2^53 for any realistic sample count, making each conversion exact.
    n as f64 / d as f64
}

/// Percent range of one confidence level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelDefinition {
    pub level: u8,
    pub low: f64,
    pub high: f64,
}

impl LevelDefinition {
    /// The three standard interpretation-confidence levels.
    pub fn standard() -> Vec<LevelDefinition> {
        ConfidenceLevel::ALL
            .iter()
            .map(|&l| {
                let (low, high) = l.percent_range();
                LevelDefinition { level: l.number(), low, high }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelWeight {
    pub level: u8,
    /// Midpoint of the level's percent range.
    pub median: f64,
    pub weight: f64,
}

/// Per-level weights proportional to the midpoint of each level's range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceWeighting {
    pub levels: Vec<LevelWeight>,
}

impl ConfidenceWeighting {
    pub fn standard() -> Self {
        weights_from_levels(&LevelDefinition::standard()).expect("standard levels are valid")
    }

    pub fn weight(&self, level: u8) -> Option<f64> {
        self.levels.iter().find(|l| l.level == level).map(|l| l.weight)
    }
}

pub fn weights_from_levels(levels: &[LevelDefinition]) -> Result<ConfidenceWeighting, MetricsError> {
    if levels.is_empty() {
        return Err(MetricsError::NoLevels);
    }
    let mut seen = BTreeSet::new();
    for d in levels {
        let valid = d.low.is_finite() && d.high.is_finite() && d.low >= 0.0 && d.low <= d.high && d.high > 0.0;
        if !valid {
            return Err(MetricsError::BadLevelRange { level: d.level, low: d.low, high: d.high });
        }
        if !seen.insert(d.level) {
            return Err(MetricsError::DuplicateLevel(d.level));
        }
    }
    let medians: Vec<f64> = levels.iter().map(|d| (d.low + d.high) / 2.0).collect();
    let sum: f64 = medians.iter().sum();
    Ok(ConfidenceWeighting {
        levels: levels
            .iter()
            .zip(medians)
            .map(|(d, median)| LevelWeight { level: d.level, median, weight: median / sum })
            .collect(),
    })
}

/// Observation count and accuracy of one confidence level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerLevelAccuracy {
    pub level: u8,
    pub n: u64,
    pub accuracy: Option<f64>,
}

impl PerLevelAccuracy {
    pub fn new(level: u8, n: u64, accuracy: f64) -> Self {
        Self { level, n, accuracy: Some(accuracy) }
    }
}

/// `Σ wᵢ·Nᵢ·Aᵢ / Σ wᵢ·Nᵢ` over the levels that have observations.
pub fn weighted_metric(per_level: &[PerLevelAccuracy], weights: &ConfidenceWeighting) -> Result<f64, MetricsError> {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut common: Option<Option<f64>> = None;
    for l in per_level.iter().filter(|l| l.n > 0) {
        let w = weights.weight(l.level).ok_or(MetricsError::MissingWeight(l.level))?;
        let a = l.accuracy.ok_or(MetricsError::MissingAccuracy(l.level))?;
        if !(0.0..=1.0).contains(&a) {
            return Err(MetricsError::BadAccuracy(l.level, a));
        }
        num += w * l.n as f64 * a;
        den += w * l.n as f64;
        common = Some(match common {
            None => Some(a),
            Some(c) => c.filter(|&c| c == a),
        });
    }
    match common {
        None => Err(MetricsError::NoObservations),
        // A weighted mean of equal values is that value; skip the rounding.
        Some(Some(a)) => Ok(a),
        Some(None) => Ok(num / den),
    }
}

/// One confusion matrix per confidence level (all three levels present, some
/// possibly empty), cell = (reference label, product label).
pub fn build_matrices(
    truth: &GroundTruth,
    mapped: &RetrievalTable,
    product: &str,
) -> Result<BTreeMap<ConfidenceLevel, ConfusionMatrix>, MetricsError> {
    let labels: BTreeMap<u64, GeneralClass> = mapped.labels_for(product)?.into_iter().collect();
    let truth_ids: BTreeSet<u64> = truth.entries.iter().map(|e| e.sample_id).collect();
    let only_truth = truth_ids.iter().filter(|id| !labels.contains_key(id)).count();
    let only_map = labels.keys().filter(|id| !truth_ids.contains(id)).count();
    if only_truth > 0 || only_map > 0 || truth_ids.len() != truth.entries.len() {
        return Err(MetricsError::SampleMismatch { only_truth, only_map });
    }
    let mut out: BTreeMap<_, _> = ConfidenceLevel::ALL.iter().map(|&l| (l, ConfusionMatrix::general())).collect();
    for e in &truth.entries {
        let m = out.get_mut(&e.confidence).expect("all levels present");
        m.add(e.label.index(), labels[&e.sample_id].index());
    }
    Ok(out)
}

/// Metrics of one matrix; every rate is absent when the matrix is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub n: u64,
    pub matrix: ConfusionMatrix,
    pub overall_accuracy: Option<f64>,
    pub classes: Vec<ClassAccuracy>,
    pub kappa: Option<f64>,
}

impl MatrixSummary {
    pub fn of(matrix: ConfusionMatrix) -> Self {
        let classes = producer_user_accuracy(&matrix)
            .unwrap_or_else(|_| vec![ClassAccuracy { producer: None, user: None }; matrix.size()]);
        Self {
            n: matrix.total(),
            overall_accuracy: overall_accuracy(&matrix).ok(),
            kappa: kappa(&matrix).ok(),
            classes,
            matrix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u8,
    #[serde(flatten)]
    pub summary: MatrixSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedClassAccuracy {
    pub class: GeneralClass,
    pub producer: Option<f64>,
    pub user: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub product: String,
    pub sampling_set: String,
    pub weighting: ConfidenceWeighting,
    pub levels: Vec<LevelReport>,
    /// All levels pooled into one matrix.
    pub pooled: MatrixSummary,
    pub weighted_overall_accuracy: f64,
    pub weighted_classes: Vec<WeightedClassAccuracy>,
}

impl AccuracyReport {
    pub fn level(&self, level: u8) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.level == level)
    }

    pub fn per_level_overall(&self) -> Vec<PerLevelAccuracy> {
        self.levels
            .iter()
            .map(|l| PerLevelAccuracy { level: l.level, n: l.summary.n, accuracy: l.summary.overall_accuracy })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn optional_weighted(
    per_level: &[PerLevelAccuracy],
    weights: &ConfidenceWeighting,
) -> Result<Option<f64>, MetricsError> {
    match weighted_metric(per_level, weights) {
        Ok(v) => Ok(Some(v)),
        Err(MetricsError::NoObservations) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Per-level matrices and rates for one product, plus weighted OA and
/// weighted per-class PA/UA. Class-specific weighting uses the reference row
/// count of each level as `Nᵢ` for PA and the map column count for UA.
pub fn evaluate(
    truth: &GroundTruth,
    mapped: &RetrievalTable,
    product: &str,
    weighting: &ConfidenceWeighting,
    sampling_set: &str,
) -> Result<AccuracyReport, MetricsError> {
    let matrices = build_matrices(truth, mapped, product)?;
    let pooled = ConfusionMatrix::merged(matrices.values()).expect("three levels");
    let levels: Vec<LevelReport> = matrices
        .into_iter()
        .map(|(level, m)| LevelReport { level: level.number(), summary: MatrixSummary::of(m) })
        .collect();

    let per_level_oa: Vec<PerLevelAccuracy> = levels
        .iter()
        .map(|l| PerLevelAccuracy { level: l.level, n: l.summary.n, accuracy: l.summary.overall_accuracy })
        .collect();
    let weighted_overall_accuracy = weighted_metric(&per_level_oa, weighting)?;

    let mut weighted_classes = Vec::with_capacity(GeneralClass::ALL.len());
    for class in GeneralClass::ALL {
        let c = class.index();
        let pa: Vec<_> = levels
            .iter()
            .map(|l| PerLevelAccuracy {
                level: l.level,
                n: l.summary.matrix.row_sum(c),
                accuracy: l.summary.classes[c].producer,
            })
            .collect();
        let ua: Vec<_> = levels
            .iter()
            .map(|l| PerLevelAccuracy {
                level: l.level,
                n: l.summary.matrix.col_sum(c),
                accuracy: l.summary.classes[c].user,
            })
            .collect();
        weighted_classes.push(WeightedClassAccuracy {
            class,
            producer: optional_weighted(&pa, weighting)?,
            user: optional_weighted(&ua, weighting)?,
        });
    }

    Ok(AccuracyReport {
        product: product.to_string(),
        sampling_set: sampling_set.to_string(),
        weighting: weighting.clone(),
        levels,
        pooled: MatrixSummary::of(pooled),
        weighted_overall_accuracy,
        weighted_classes,
    })
}

/// Whole percent, rounded half up: `0.8631 -> "86%"`.
pub fn percent(rate: f64) -> String {
    format!("{}%", round_percent(rate))
}

pub fn round_percent(rate: f64) -> i64 {
    // The small bias keeps values such as 0.945 (stored as 0.94499999...) rounding up.
    (rate * 100.0 + 0.5 + 1e-9).floor() as i64
}

fn percent_or_dash(rate: Option<f64>) -> String {
    rate.map_or_else(|| "-".to_string(), percent)
}

fn render_matrix(out: &mut String, s: &MatrixSummary) {
    let m = &s.matrix;
    let width = m.labels().iter().map(String::len).max().unwrap_or(0).max(12) + 2;
    let _ = write!(out, "{:<width$}", "truth \\ map");
    for l in m.labels() {
        let _ = write!(out, "{l:>width$}");
    }
    let _ = writeln!(out, "{:>8}{:>6}", "Sum", "PA");
    for r in 0..m.size() {
        let _ = write!(out, "{:<width$}", m.labels()[r]);
        for c in 0..m.size() {
            let _ = write!(out, "{:>width$}", m.get(r, c));
        }
        let _ = writeln!(out, "{:>8}{:>6}", m.row_sum(r), percent_or_dash(s.classes[r].producer));
    }
    let _ = write!(out, "{:<width$}", "Sum");
    for c in 0..m.size() {
        let _ = write!(out, "{:>width$}", m.col_sum(c));
    }
    let _ = writeln!(out, "{:>8}", m.total());
    let _ = write!(out, "{:<width$}", "UA");
    for c in 0..m.size() {
        let _ = write!(out, "{:>width$}", percent_or_dash(s.classes[c].user));
    }
    out.push('\n');
    match s.overall_accuracy {
        Some(oa) => {
            let _ = writeln!(out, "Overall accuracy = {:.2}%", oa * 100.0);
        }
        None => out.push_str("Overall accuracy = -\n"),
    }
    match s.kappa {
        Some(k) => {
            let _ = writeln!(out, "kappa = {k:.2}");
        }
        None => out.push_str("kappa = -\n"),
    }
}

/// Plain-text rendering of a report.
pub fn render_report(report: &AccuracyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Product: {}", report.product);
    let _ = writeln!(out, "Sampling set: {}", report.sampling_set);
    out.push('\n');
    let _ = writeln!(out, "{:<8}{:>8}{:>8}{:>8}{:>8}", "Level", "M", "w_i", "N", "OA");
    for l in &report.levels {
        let w = report.weighting.levels.iter().find(|w| w.level == l.level);
        let _ = writeln!(
            out,
            "{:<8}{:>8}{:>8}{:>8}{:>8}",
            l.level,
            w.map_or("-".to_string(), |w| format!("{:.2}", w.median)),
            w.map_or("-".to_string(), |w| format!("{:.3}", w.weight)),
            l.summary.n,
            percent_or_dash(l.summary.overall_accuracy),
        );
    }
    let _ = writeln!(out, "OA: {}", percent_or_dash(report.pooled.overall_accuracy));
    let _ = writeln!(out, "Weighted OA: {}", percent(report.weighted_overall_accuracy));
    out.push('\n');
    let _ = writeln!(out, "{:<22}{:>6}{:>6}{:>6}{:>6}", "Class", "PA", "UA", "wPA", "wUA");
    for (w, pooled) in report.weighted_classes.iter().zip(&report.pooled.classes) {
        let _ = writeln!(
            out,
            "{:<22}{:>6}{:>6}{:>6}{:>6}",
            w.class.display_name(),
            percent_or_dash(pooled.producer),
            percent_or_dash(pooled.user),
            percent_or_dash(w.producer),
            percent_or_dash(w.user),
        );
    }
    for l in &report.levels {
        out.push('\n');
        let _ = writeln!(out, "Confidence level #{} (N = {})", l.level, l.summary.n);
        render_matrix(&mut out, &l.summary);
    }
    out.push('\n');
    let _ = writeln!(out, "All levels pooled (N = {})", report.pooled.n);
    render_matrix(&mut out, &report.pooled);
    out
}

/// Weighted OA per product (rows) and sampling set (columns).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedOaSummary {
    pub sampling_sets: Vec<String>,
    pub products: Vec<String>,
    pub values: BTreeMap<(String, String), f64>,
}

impl WeightedOaSummary {
    pub fn insert(&mut self, product: &str, sampling_set: &str, weighted_oa: f64) {
        if !self.products.iter().any(|p| p == product) {
            self.products.push(product.to_string());
        }
        if !self.sampling_sets.iter().any(|s| s == sampling_set) {
            self.sampling_sets.push(sampling_set.to_string());
        }
        self.values.insert((product.to_string(), sampling_set.to_string()), weighted_oa);
    }

    pub fn from_reports<'a>(reports: impl IntoIterator<Item = &'a AccuracyReport>) -> Self {
        let mut s = Self::default();
        for r in reports {
            s.insert(&r.product, &r.sampling_set, r.weighted_overall_accuracy);
        }
        s
    }

    pub fn get(&self, product: &str, sampling_set: &str) -> Option<f64> {
        self.values.get(&(product.to_string(), sampling_set.to_string())).copied()
    }

    /// `product,<set>,...` with whole-percent cells; missing cells are `-`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MetricsError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["product".to_string()];
        header.extend(self.sampling_sets.iter().cloned());
        wtr.write_record(&header)?;
        for p in &self.products {
            let mut row = vec![p.clone()];
            for s in &self.sampling_sets {
                row.push(self.get(p, s).map_or_else(|| "-".into(), |v| round_percent(v).to_string()));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
