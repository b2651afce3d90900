//! Sample-size planning, stratified allocation and seeded point drawing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CellIndex, RasterGrid};
use crate::nomenclature::{ClassScheme, GeneralClass};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid half-width {0}: must lie in (0, 1)")]
    InvalidHalfWidth(f64),
    #[error("invalid critical value {0}: must be positive")]
    InvalidCriticalValue(f64),
    #[error("invalid planning proportion {0}: must lie in [0, 1]")]
    InvalidProportion(f64),
    #[error("no strata given")]
    NoStrata,
    #[error("stratum {0} has an invalid coverage {1}")]
    InvalidCoverage(StratumId, f64),
    #[error("duplicate stratum {0}")]
    DuplicateStratum(StratumId),
    #[error("all strata have zero coverage")]
    ZeroCoverage,
    #[error("n_max ({n_max}) must be at least n_min ({n_min})")]
    CapOrder { n_max: u64, n_min: u64 },
    #[error("anchor stratum {0} is missing")]
    MissingAnchor(StratumId),
    #[error("anchor stratum {0} has zero coverage")]
    ZeroAnchor(StratumId),
    #[error("anchor count {anchor_n} is below the per-stratum minimum {n_min}")]
    AnchorBelowMinimum { anchor_n: u64, n_min: u64 },
    #[error("stratum {0} has no class codes")]
    UnknownStratum(StratumId),
    #[error("stratum {stratum} needs {needed} cells but the map has only {available}")]
    Underpopulated { stratum: StratumId, needed: u64, available: u64 },
    #[error("sample file line {line}: {message}")]
    Row { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sample size from the normal-approximation half-width bound
/// `n = ceil(z² · P · (1 − P) / h²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizePlan {
    /// Two-tailed critical value of the standard normal.
    pub z: f64,
    /// Planning value for the proportion of correctly mapped cases.
    pub p: f64,
    /// Half-width of the desired confidence interval.
    pub h: f64,
    pub n: u64,
}

pub fn required_sample_size(z: f64, p: f64, h: f64) -> Result<SampleSizePlan, SamplingError> {
    if !(h > 0.0 && h < 1.0) {
        return Err(SamplingError::InvalidHalfWidth(h));
    }
    if !(z > 0.0 && z.is_finite()) {
        return Err(SamplingError::InvalidCriticalValue(z));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(SamplingError::InvalidProportion(p));
    }
    let exact = z * z * p * (1.0 - p) / (h * h);
    // Absorb representation error so that e.g. 99.99999999999997 stays 100.
    let nearest = exact.round();
    let n = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) { nearest } else { exact.ceil() };
    Ok(SampleSizePlan { z, p, h, n: n as u64 })
}

/// Identifier of a stratum: a level-3 code, a general class name or a raw code.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StratumId(pub String);

impl StratumId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for StratumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StratumId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub id: StratumId,
    /// Fraction of the stratified area, in [0, 1].
    pub coverage: f64,
}

impl Stratum {
    pub fn new(id: impl Into<String>, coverage: f64) -> Self {
        Self { id: StratumId::new(id), coverage }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationEntry {
    pub stratum_id: StratumId,
    pub coverage: f64,
    pub raw_quota: f64,
    pub selected: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub entries: Vec<AllocationEntry>,
    pub total: u64,
}

impl Allocation {
    fn from_entries(entries: Vec<AllocationEntry>) -> Self {
        let total = entries.iter().map(|e| e.selected).sum();
        Self { entries, total }
    }

    pub fn get(&self, id: &str) -> Option<&AllocationEntry> {
        self.entries.iter().find(|e| e.stratum_id.as_str() == id)
    }

    /// `stratum_id,coverage,raw_quota,selected` report.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SamplingError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["stratum_id", "coverage", "raw_quota", "selected"])?;
        for e in &self.entries {
            wtr.write_record([
                e.stratum_id.as_str(),
                &format!("{:.6}", e.coverage),
                &format!("{:.2}", e.raw_quota),
                &e.selected.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn round_half_up(x: f64) -> u64 {
    (x + 0.5).floor() as u64
}

fn validate_strata(strata: &[Stratum]) -> Result<(), SamplingError> {
    if strata.is_empty() {
        return Err(SamplingError::NoStrata);
    }
    let mut seen = BTreeSet::new();
    for s in strata {
        if !(s.coverage.is_finite() && s.coverage >= 0.0) {
            return Err(SamplingError::InvalidCoverage(s.id.clone(), s.coverage));
        }
        if !seen.insert(&s.id) {
            return Err(SamplingError::DuplicateStratum(s.id.clone()));
        }
    }
    Ok(())
}

fn scale_to_anchor(strata: &[Stratum], anchor: usize, anchor_n: u64, n_min: u64) -> Allocation {
    let anchor_cov = strata[anchor].coverage;
    let entries = strata
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (raw_quota, selected) = if i == anchor {
                (anchor_n as f64, anchor_n)
            } else {
                let raw = s.coverage / anchor_cov * anchor_n as f64;
                (raw, round_half_up(raw).max(n_min))
            };
            AllocationEntry { stratum_id: s.id.clone(), coverage: s.coverage, raw_quota, selected }
        })
        .collect();
    Allocation::from_entries(entries)
}

/// Gives the largest stratum `n_max` samples and every other stratum its
/// coverage-proportional share of that, floored at `n_min` after rounding.
///
/// Coverages only enter as ratios, so they need not sum exactly to one.
pub fn allocate_max_anchored(strata: &[Stratum], n_max: u64, n_min: u64) -> Result<Allocation, SamplingError> {
    validate_strata(strata)?;
    if n_max < n_min {
        return Err(SamplingError::CapOrder { n_max, n_min });
    }
    // First stratum wins ties for the maximum.
    let anchor =
        strata.iter().enumerate().fold(0, |best, (i, s)| if s.coverage > strata[best].coverage { i } else { best });
    if strata[anchor].coverage == 0.0 {
        return Err(SamplingError::ZeroCoverage);
    }
    Ok(scale_to_anchor(strata, anchor, n_max, n_min))
}

/// Fixes the anchor stratum at `anchor_n` samples and scales the others by
/// their coverage ratio to it, floored at `n_min`.
pub fn allocate_class_anchored(
    strata: &[Stratum],
    anchor: &StratumId,
    anchor_n: u64,
    n_min: u64,
) -> Result<Allocation, SamplingError> {
    validate_strata(strata)?;
    let idx =
        strata.iter().position(|s| &s.id == anchor).ok_or_else(|| SamplingError::MissingAnchor(anchor.clone()))?;
    if strata[idx].coverage == 0.0 {
        return Err(SamplingError::ZeroAnchor(anchor.clone()));
    }
    if anchor_n < n_min {
        return Err(SamplingError::AnchorBelowMinimum { anchor_n, n_min });
    }
    Ok(scale_to_anchor(strata, idx, anchor_n, n_min))
}

/// Raster codes making up each stratum.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StratumCodes(pub BTreeMap<StratumId, Vec<i32>>);

/// How strata are derived from a product's scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyBy {
    /// One stratum per level-3 code.
    L3,
    /// One stratum per studied general class.
    General,
    /// One stratum per raw code in the scheme.
    Code,
}

impl StratumCodes {
    pub fn insert(&mut self, id: impl Into<String>, codes: Vec<i32>) {
        self.0.insert(StratumId::new(id), codes);
    }

    pub fn get(&self, id: &StratumId) -> Option<&[i32]> {
        self.0.get(id).map(Vec::as_slice)
    }

    pub fn from_scheme(scheme: &ClassScheme, by: StratifyBy) -> Self {
        let mut map: BTreeMap<StratumId, Vec<i32>> = BTreeMap::new();
        match by {
            StratifyBy::L3 => {
                for (&code, entry) in scheme.entries() {
                    if let Some(l3) = &entry.l3_code {
                        map.entry(StratumId::new(l3.as_str())).or_default().push(code);
                    }
                }
            }
            StratifyBy::General => {
                for class in GeneralClass::STUDIED {
                    let codes = scheme.codes_for_general(class);
                    if !codes.is_empty() {
                        map.insert(StratumId::new(class.name()), codes);
                    }
                }
            }
            StratifyBy::Code => {
                for &code in scheme.entries().keys() {
                    map.insert(StratumId::new(code.to_string()), vec![code]);
                }
            }
        }
        Self(map)
    }

    /// Coverage of each stratum relative to the cells of all listed strata.
    /// Strata absent from the map get coverage zero.
    pub fn coverage(&self, grid: &RasterGrid) -> Vec<Stratum> {
        let mut by_code: BTreeMap<i32, &StratumId> = BTreeMap::new();
        for (id, codes) in &self.0 {
            for &c in codes {
                by_code.insert(c, id);
            }
        }
        let mut counts: BTreeMap<&StratumId, u64> = self.0.keys().map(|k| (k, 0)).collect();
        for &v in grid.values() {
            if v == grid.nodata() {
                continue;
            }
            if let Some(id) = by_code.get(&v) {
                *counts.get_mut(id).expect("stratum listed") += 1;
            }
        }
        let total: u64 = counts.values().sum();
        counts
            .into_iter()
            .map(|(id, n)| Stratum { id: id.clone(), coverage: if total == 0 { 0.0 } else { n as f64 / total as f64 } })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub sample_id: u64,
    pub x: f64,
    pub y: f64,
    pub stratum_id: StratumId,
    pub source_product: String,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one stratum's draw; depends only on the run seed and the
/// stratum id.
pub fn stratum_rng(seed: u64, stratum: &StratumId) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(fnv1a(stratum.as_str().as_bytes()))))
}

/// Draws `selected` distinct cells per stratum uniformly without replacement
/// and places a sample at each cell center.
///
/// Strata are emitted in stratum-id order and cells in row-major order within
/// a stratum, so the output does not depend on the order of the allocation
/// entries. Sample ids run from 0.
pub fn draw_points(
    stratum_map: &RasterGrid,
    allocation: &Allocation,
    strata: &StratumCodes,
    seed: u64,
    source_product: &str,
) -> Result<Vec<SamplePoint>, SamplingError> {
    let mut entries: Vec<&AllocationEntry> = allocation.entries.iter().collect();
    entries.sort_by(|a, b| a.stratum_id.cmp(&b.stratum_id));

    let mut points = Vec::with_capacity(allocation.total as usize);
    for entry in entries {
        let codes = strata
            .get(&entry.stratum_id)
            .filter(|c| !c.is_empty())
            .ok_or_else(|| SamplingError::UnknownStratum(entry.stratum_id.clone()))?;
        let eligible: Vec<CellIndex> = stratum_map
            .cells()
            .filter(|&(_, v)| v != stratum_map.nodata() && codes.contains(&v))
            .map(|(idx, _)| idx)
            .collect();
        if (eligible.len() as u64) < entry.selected {
            return Err(SamplingError::Underpopulated {
                stratum: entry.stratum_id.clone(),
                needed: entry.selected,
                available: eligible.len() as u64,
            });
        }
        let mut rng = stratum_rng(seed, &entry.stratum_id);
        let mut chosen = rand::seq::index::sample(&mut rng, eligible.len(), entry.selected as usize).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            let (x, y) = stratum_map.cell_center(eligible[i]);
            points.push(SamplePoint {
                sample_id: points.len() as u64,
                x,
                y,
                stratum_id: entry.stratum_id.clone(),
                source_product: source_product.to_string(),
            });
        }
    }
    Ok(points)
}

/// Writes a `sample_id,x,y,stratum_id,source_product` file.
pub fn write_samples<W: Write>(points: &[SamplePoint], writer: W) -> Result<(), SamplingError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["sample_id", "x", "y", "stratum_id", "source_product"])?;
    for p in points {
        wtr.write_record([
            p.sample_id.to_string().as_str(),
            &p.x.to_string(),
            &p.y.to_string(),
            p.stratum_id.as_str(),
            &p.source_product,
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_samples<R: Read>(reader: R) -> Result<Vec<SamplePoint>, SamplingError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let mut ids = BTreeSet::new();
    for row in rdr.deserialize::<SamplePoint>() {
        let p = row.map_err(|e| SamplingError::Row {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !ids.insert(p.sample_id) {
            return Err(SamplingError::Row {
                line: out.len() as u64 + 2,
                message: format!("duplicate sample_id {}", p.sample_id),
            });
        }
        out.push(p);
    }
    Ok(out)
}
