//! Dual-expert reference annotation with confidence levels and a consensus
//! round.
//!
//! The store is an append-only log of [`AnnotationRecord`]s; every sample's
//! workflow state is a fold over that sample's records:
//!
//! * no round-1 record: `Pending`
//! * one round-1 record: `PartiallyAnnotated`
//! * two round-1 records with the same label, both at level 1: `Finalized`
//! * two round-1 records otherwise: `NeedsReview`
//! * a round-2 (consensus) record: `Finalized`

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, RasterGrid};
use crate::nomenclature::GeneralClass;
use crate::retrieval::{ExtentPolicy, Product};
use crate::sampling::SamplePoint;

/// Expert id carried by every round-2 record.
pub const CONSENSUS_EXPERT: &str = "consensus";

/// Default side of the interpretation context, in meters.
pub const DEFAULT_PATCH_METERS: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("unknown sample {0}")]
    UnknownSample(u64),
    #[error("expert {0:?} is not on the roster")]
    UnknownExpert(String),
    #[error("expert id {0:?} is reserved for consensus records")]
    ReservedExpert(String),
    #[error("expert roster needs two distinct experts")]
    BadRoster,
    #[error("expert {expert:?} already annotated sample {sample_id}")]
    DuplicateAnnotation { sample_id: u64, expert: String },
    #[error("sample {0} is not awaiting review")]
    NotReviewable(u64),
    #[error("sample {0} is already finalized")]
    AlreadyFinalized(u64),
    #[error("round must be 1 or 2, got {0}")]
    InvalidRound(u8),
    #[error("confidence level must be 1, 2 or 3, got {0}")]
    InvalidLevel(u8),
    #[error("confidence {0}% is outside [0, 100]")]
    InvalidPercent(f64),
    #[error("{count} samples are not finalized")]
    Unfinalized { count: usize },
    #[error("unknown provenance {0:?}")]
    UnknownProvenance(String),
    #[error("sample {sample_id} is outside product {product}: {message}")]
    OutOfExtent { sample_id: u64, product: String, message: String },
    #[error("log line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for AnnotationError {
    fn from(e: csv::Error) -> Self {
        AnnotationError::Csv(e.to_string())
    }
}

impl From<std::io::Error> for AnnotationError {
    fn from(e: std::io::Error) -> Self {
        AnnotationError::Csv(e.to_string())
    }
}

/// Interpreter's self-reported certainty: level 1 is above 75%, level 2 is
/// 25% to 75% inclusive, level 3 is below 25%.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConfidenceLevel {
    Level1,
    Level2,
    Level3,
}

impl ConfidenceLevel {
    pub const ALL: [ConfidenceLevel; 3] = [ConfidenceLevel::Level1, ConfidenceLevel::Level2, ConfidenceLevel::Level3];

    pub fn number(self) -> u8 {
        match self {
            ConfidenceLevel::Level1 => 1,
            ConfidenceLevel::Level2 => 2,
            ConfidenceLevel::Level3 => 3,
        }
    }

    pub fn from_number(n: u8) -> Result<Self, AnnotationError> {
        match n {
            1 => Ok(ConfidenceLevel::Level1),
            2 => Ok(ConfidenceLevel::Level2),
            3 => Ok(ConfidenceLevel::Level3),
            other => Err(AnnotationError::InvalidLevel(other)),
        }
    }

    pub fn from_percent(p: f64) -> Result<Self, AnnotationError> {
        if !(0.0..=100.0).contains(&p) {
            return Err(AnnotationError::InvalidPercent(p));
        }
        Ok(if p > 75.0 {
            ConfidenceLevel::Level1
        } else if p >= 25.0 {
            ConfidenceLevel::Level2
        } else {
            ConfidenceLevel::Level3
        })
    }

    /// Percent range `(low, high)`; see the type docs for which ends are inclusive.
    pub fn percent_range(self) -> (f64, f64) {
        match self {
            ConfidenceLevel::Level1 => (75.0, 100.0),
            ConfidenceLevel::Level2 => (25.0, 75.0),
            ConfidenceLevel::Level3 => (0.0, 25.0),
        }
    }
}

impl fmt::Display for ConfidenceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl Serialize for ConfidenceLevel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.number())
    }
}

impl<'de> Deserialize<'de> for ConfidenceLevel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = u8::deserialize(d)?;
        ConfidenceLevel::from_number(n).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: u64,
    pub expert_id: String,
    pub label: GeneralClass,
    pub confidence: ConfidenceLevel,
    /// 1 for independent interpretation, 2 for the consensus record.
    pub round: u8,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorkflowState {
    Pending,
    PartiallyAnnotated,
    NeedsReview,
    Finalized,
}

impl WorkflowState {
    pub fn name(self) -> &'static str {
        match self {
            WorkflowState::Pending => "pending",
            WorkflowState::PartiallyAnnotated => "partially-annotated",
            WorkflowState::NeedsReview => "needs-review",
            WorkflowState::Finalized => "finalized",
        }
    }
}

impl FromStr for WorkflowState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            WorkflowState::Pending,
            WorkflowState::PartiallyAnnotated,
            WorkflowState::NeedsReview,
            WorkflowState::Finalized,
        ]
        .into_iter()
        .find(|w| w.name() == s)
        .ok_or_else(|| format!("unknown workflow state {s:?}"))
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    #[serde(rename = "agreed-round-1")]
    AgreedRound1,
    #[serde(rename = "consensus-round-2")]
    ConsensusRound2,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::AgreedRound1 => "agreed-round-1",
            Provenance::ConsensusRound2 => "consensus-round-2",
        }
    }
}

impl FromStr for Provenance {
    type Err = AnnotationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agreed-round-1" => Ok(Provenance::AgreedRound1),
            "consensus-round-2" => Ok(Provenance::ConsensusRound2),
            other => Err(AnnotationError::UnknownProvenance(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub sample_id: u64,
    pub label: GeneralClass,
    pub confidence: ConfidenceLevel,
    pub provenance: Provenance,
}

/// Final reference labels, ordered by sample id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub entries: Vec<GroundTruthEntry>,
}

impl GroundTruth {
    pub fn level_counts(&self) -> BTreeMap<ConfidenceLevel, usize> {
        let mut counts: BTreeMap<_, _> = ConfidenceLevel::ALL.iter().map(|&l| (l, 0)).collect();
        for e in &self.entries {
            *counts.get_mut(&e.confidence).expect("all levels present") += 1;
        }
        counts
    }

    /// `sample_id,label,confidence,provenance`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), AnnotationError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["sample_id", "label", "confidence", "provenance"])?;
        for e in &self.entries {
            wtr.write_record([
                e.sample_id.to_string().as_str(),
                e.label.name(),
                &e.confidence.number().to_string(),
                e.provenance.name(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, AnnotationError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for (i, row) in rdr.deserialize::<GroundTruthEntry>().enumerate() {
            entries.push(row.map_err(|e| AnnotationError::Row { line: i as u64 + 2, message: e.to_string() })?);
        }
        entries.sort_by_key(|e| e.sample_id);
        Ok(Self { entries })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct SampleRecords {
    round1: Vec<AnnotationRecord>,
    round2: Option<AnnotationRecord>,
}

impl SampleRecords {
    fn state(&self) -> WorkflowState {
        if self.round2.is_some() {
            return WorkflowState::Finalized;
        }
        match self.round1.as_slice() {
            [] => WorkflowState::Pending,
            [_] => WorkflowState::PartiallyAnnotated,
            [a, b, ..] => {
                if a.label == b.label
                    && a.confidence == ConfidenceLevel::Level1
                    && b.confidence == ConfidenceLevel::Level1
                {
                    WorkflowState::Finalized
                } else {
                    WorkflowState::NeedsReview
                }
            }
        }
    }

    fn final_label(&self, sample_id: u64) -> Option<GroundTruthEntry> {
        if let Some(r) = &self.round2 {
            return Some(GroundTruthEntry {
                sample_id,
                label: r.label,
                confidence: r.confidence,
                provenance: Provenance::ConsensusRound2,
            });
        }
        (self.state() == WorkflowState::Finalized).then(|| GroundTruthEntry {
            sample_id,
            label: self.round1[0].label,
            confidence: ConfidenceLevel::Level1,
            provenance: Provenance::AgreedRound1,
        })
    }
}

/// Sample summary exposed to annotation clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStatus {
    pub sample_id: u64,
    pub state: WorkflowState,
    pub annotated_by: Vec<String>,
}

/// Ground-truth store for one sample set and a two-expert roster.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationStore {
    experts: [String; 2],
    samples: BTreeMap<u64, SampleRecords>,
    log: Vec<AnnotationRecord>,
}

impl AnnotationStore {
    pub fn new(sample_ids: impl IntoIterator<Item = u64>, experts: [String; 2]) -> Result<Self, AnnotationError> {
        if experts[0] == experts[1] || experts.iter().any(|e| e.is_empty()) {
            return Err(AnnotationError::BadRoster);
        }
        if let Some(e) = experts.iter().find(|e| e.as_str() == CONSENSUS_EXPERT) {
            return Err(AnnotationError::ReservedExpert(e.clone()));
        }
        Ok(Self {
            experts,
            samples: sample_ids.into_iter().map(|id| (id, SampleRecords::default())).collect(),
            log: Vec::new(),
        })
    }

    /// Rebuilds a store by replaying a log; every record is re-validated.
    pub fn from_log(
        sample_ids: impl IntoIterator<Item = u64>,
        experts: [String; 2],
        log: impl IntoIterator<Item = AnnotationRecord>,
    ) -> Result<Self, AnnotationError> {
        let mut store = Self::new(sample_ids, experts)?;
        for record in log {
            store.record_annotation(record)?;
        }
        Ok(store)
    }

    pub fn experts(&self) -> &[String; 2] {
        &self.experts
    }

    pub fn log(&self) -> &[AnnotationRecord] {
        &self.log
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.samples.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state(&self, sample_id: u64) -> Result<WorkflowState, AnnotationError> {
        self.samples.get(&sample_id).map(SampleRecords::state).ok_or(AnnotationError::UnknownSample(sample_id))
    }

    pub fn records(&self, sample_id: u64) -> Result<Vec<&AnnotationRecord>, AnnotationError> {
        let s = self.samples.get(&sample_id).ok_or(AnnotationError::UnknownSample(sample_id))?;
        Ok(s.round1.iter().chain(s.round2.as_ref()).collect())
    }

    pub fn statuses(&self, filter: Option<WorkflowState>) -> Vec<SampleStatus> {
        self.samples
            .iter()
            .map(|(&id, s)| SampleStatus {
                sample_id: id,
                state: s.state(),
                annotated_by: s.round1.iter().chain(&s.round2).map(|r| r.expert_id.clone()).collect(),
            })
            .filter(|s| filter.is_none_or(|f| s.state == f))
            .collect()
    }

    /// Appends one record and returns the sample's new workflow state.
    pub fn record_annotation(&mut self, record: AnnotationRecord) -> Result<WorkflowState, AnnotationError> {
        let sample_id = record.sample_id;
        let entry = self.samples.get_mut(&sample_id).ok_or(AnnotationError::UnknownSample(sample_id))?;
        match record.round {
            1 => {
                if record.expert_id == CONSENSUS_EXPERT {
                    return Err(AnnotationError::ReservedExpert(record.expert_id));
                }
                if !self.experts.contains(&record.expert_id) {
                    return Err(AnnotationError::UnknownExpert(record.expert_id));
                }
                if entry.round1.iter().any(|r| r.expert_id == record.expert_id) {
                    return Err(AnnotationError::DuplicateAnnotation { sample_id, expert: record.expert_id });
                }
                entry.round1.push(record.clone());
            }
            2 => {
                if record.expert_id != CONSENSUS_EXPERT {
                    return Err(AnnotationError::UnknownExpert(record.expert_id));
                }
                match entry.state() {
                    WorkflowState::NeedsReview => {}
                    WorkflowState::Finalized => return Err(AnnotationError::AlreadyFinalized(sample_id)),
                    _ => return Err(AnnotationError::NotReviewable(sample_id)),
                }
                entry.round2 = Some(record.clone());
            }
            other => return Err(AnnotationError::InvalidRound(other)),
        }
        let state = entry.state();
        self.log.push(record);
        Ok(state)
    }

    /// Samples whose two independent labels disagree or carry a confidence
    /// below level 1, and which have no consensus record yet.
    pub fn review_queue(&self) -> Vec<u64> {
        self.samples.iter().filter(|(_, s)| s.state() == WorkflowState::NeedsReview).map(|(&id, _)| id).collect()
    }

    pub fn record_consensus(
        &mut self,
        sample_id: u64,
        label: GeneralClass,
        confidence: ConfidenceLevel,
        timestamp: u64,
    ) -> Result<WorkflowState, AnnotationError> {
        self.record_annotation(AnnotationRecord {
            sample_id,
            expert_id: CONSENSUS_EXPERT.to_string(),
            label,
            confidence,
            round: 2,
            timestamp,
        })
    }

    /// Final labels. Unless `partial` is set, every sample must be finalized.
    pub fn export_ground_truth(&self, partial: bool) -> Result<GroundTruth, AnnotationError> {
        let entries: Vec<_> = self.samples.iter().filter_map(|(&id, s)| s.final_label(id)).collect();
        if !partial && entries.len() != self.samples.len() {
            return Err(AnnotationError::Unfinalized { count: self.samples.len() - entries.len() });
        }
        Ok(GroundTruth { entries })
    }

    /// `sample_id,expert_id,label,confidence,round,timestamp`.
    pub fn write_log<W: Write>(&self, writer: W) -> Result<(), AnnotationError> {
        write_records(&self.log, writer)
    }
}

pub fn write_records<W: Write>(records: &[AnnotationRecord], writer: W) -> Result<(), AnnotationError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["sample_id", "expert_id", "label", "confidence", "round", "timestamp"])?;
    for r in records {
        wtr.write_record([
            r.sample_id.to_string().as_str(),
            &r.expert_id,
            r.label.name(),
            &r.confidence.number().to_string(),
            &r.round.to_string(),
            &r.timestamp.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<AnnotationRecord>().enumerate() {
        out.push(row.map_err(|e| AnnotationError::Row { line: i as u64 + 2, message: e.to_string() })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub code: i32,
    pub label: String,
    pub general: GeneralClass,
}

/// Square window of one product around a sample, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchWindow {
    pub product: String,
    pub cell_size: f64,
    pub side: usize,
    pub center_row: usize,
    pub center_col: usize,
    pub nodata: i32,
    pub values: Vec<i32>,
    pub legend: Vec<LegendEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPatch {
    pub sample_id: u64,
    pub windows: Vec<PatchWindow>,
}

/// Odd number of cells covering at least `meters`, never fewer than three.
pub fn patch_side(meters: f64, cell_size: f64) -> usize {
    let cells = ((meters / cell_size) - 1e-9).ceil().max(1.0) as usize;
    let odd = if cells % 2 == 0 { cells + 1 } else { cells };
    odd.max(3)
}

fn window(grid: &RasterGrid, center_row: usize, center_col: usize, side: usize) -> Vec<i32> {
    let half = (side / 2) as i64;
    let mut values = Vec::with_capacity(side * side);
    for dr in -half..=half {
        for dc in -half..=half {
            let v = grid.get_signed(center_row as i64 + dr, center_col as i64 + dc);
            values.push(v.unwrap_or(grid.nodata()));
        }
    }
    values
}

/// Context windows of at least `meters` × `meters` around the sample in every
/// product, padded with nodata beyond the grid edge.
pub fn extract_patch(
    products: &[Product],
    sample: &SamplePoint,
    meters: f64,
    policy: ExtentPolicy,
) -> Result<ContextPatch, AnnotationError> {
    let mut windows = Vec::with_capacity(products.len());
    for p in products {
        let side = patch_side(meters, p.grid.cell_size());
        let center = match p.grid.world_to_cell(sample.x, sample.y) {
            Ok(c) => Some(c),
            Err(e @ GridError::OutOfExtent { .. }) => match policy {
                ExtentPolicy::Strict => {
                    return Err(AnnotationError::OutOfExtent {
                        sample_id: sample.sample_id,
                        product: p.name.clone(),
                        message: e.to_string(),
                    })
                }
                ExtentPolicy::Unclassified => None,
            },
            Err(e) => unreachable!("world_to_cell only fails on extent: {e}"),
        };
        let (center_row, center_col, values) = match center {
            Some(c) => (c.row, c.col, window(&p.grid, c.row, c.col, side)),
            None => (0, 0, vec![p.grid.nodata(); side * side]),
        };
        let codes: BTreeSet<i32> = values.iter().copied().filter(|&v| v != p.grid.nodata()).collect();
        let legend = codes
            .into_iter()
            .map(|code| {
                let entry = p.scheme.entry(code);
                LegendEntry {
                    code,
                    label: entry.map_or_else(|| "unlisted".to_string(), |e| e.label.clone()),
                    general: p.scheme.harmonize(code),
                }
            })
            .collect();
        windows.push(PatchWindow {
            product: p.name.clone(),
            cell_size: p.grid.cell_size(),
            side,
            center_row,
            center_col,
            nodata: p.grid.nodata(),
            values,
            legend,
        });
    }
    Ok(ContextPatch { sample_id: sample.sample_id, windows })
}
