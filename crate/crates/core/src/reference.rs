//! Reference figures of a three-product validation campaign, kept as
//! fixtures, with a check runner that recomputes each figure from its inputs.
//!
//! Per-level inputs of the two extra sampling sets were never published, only
//! the resulting weighted OA. The correct counts below were chosen so that
//! they reproduce those published values; they are stand-ins, not data.

use std::fmt;

use crate::metrics::{
    kappa, overall_accuracy, percent, producer_user_accuracy, round_percent, weighted_metric, ConfidenceWeighting,
    ConfusionMatrix, PerLevelAccuracy, WeightedOaSummary,
};
use crate::nomenclature::GeneralClass;
use crate::sampling::{allocate_class_anchored, allocate_max_anchored, required_sample_size, Stratum, StratumId};

/// One L3 stratum of the CLC2012-based design.
#[derive(Debug, Clone, Copy)]
pub struct CoverageRow {
    pub class: GeneralClass,
    pub l3_code: &'static str,
    pub coverage_percent: f64,
    pub printed_raw_quota: f64,
    pub printed_selected: u64,
}

const fn row(class: GeneralClass, l3_code: &'static str, cov: f64, raw: f64, selected: u64) -> CoverageRow {
    CoverageRow { class, l3_code, coverage_percent: cov, printed_raw_quota: raw, printed_selected: selected }
}

use GeneralClass::{Agriculture as AGR, ArtificialSurfaces as ART, Forest as FOR, Water as WAT};

pub const CLC_COVERAGE: [CoverageRow; 25] = [
    row(ART, "1.1.1", 0.02, 0.07, 5),
    row(ART, "1.1.2", 2.53, 12.12, 12),
    row(ART, "1.2.1", 0.50, 2.41, 5),
    row(ART, "1.2.2", 0.19, 0.89, 5),
    row(ART, "1.2.3", 0.00, 0.02, 5),
    row(ART, "1.2.4", 0.26, 1.25, 5),
    row(ART, "1.3.1", 0.12, 0.55, 5),
    row(ART, "1.3.2", 0.00, 0.01, 5),
    row(ART, "1.3.3", 0.03, 0.15, 5),
    row(ART, "1.4.1", 0.00, 0.02, 5),
    row(ART, "1.4.2", 0.03, 0.16, 5),
    row(AGR, "2.1.1", 24.00, 115.02, 115),
    row(AGR, "2.1.2", 25.03, 120.00, 120),
    row(AGR, "2.1.3", 0.01, 0.07, 5),
    row(AGR, "2.2.1", 0.21, 1.03, 5),
    row(AGR, "2.2.2", 0.80, 3.84, 5),
    row(AGR, "2.2.3", 2.62, 12.58, 13),
    row(AGR, "2.3.1", 1.96, 9.40, 9),
    row(AGR, "2.4.2", 4.60, 22.04, 22),
    row(AGR, "2.4.3", 9.11, 43.68, 44),
    row(FOR, "3.1.1", 13.76, 65.94, 66),
    row(FOR, "3.1.2", 7.94, 38.05, 38),
    row(FOR, "3.1.3", 5.17, 24.77, 25),
    row(WAT, "5.1.1", 0.30, 1.45, 5),
    row(WAT, "5.1.2", 0.80, 3.82, 5),
];

pub const CLC_N_MAX: u64 = 120;
pub const N_MIN: u64 = 5;
pub const CLC_CLASS_SUMS: [(GeneralClass, u64); 4] = [(ART, 62), (AGR, 338), (FOR, 129), (WAT, 10)];
pub const CLC_TOTAL: u64 = 539;

/// General-class design anchored on a fixed Forest sample size.
#[derive(Debug, Clone, Copy)]
pub struct AnchoredRow {
    pub class: GeneralClass,
    pub coverage_percent: f64,
    pub printed_raw_quota: f64,
    pub printed_selected: u64,
}

const fn anchored(class: GeneralClass, cov: f64, raw: f64, selected: u64) -> AnchoredRow {
    AnchoredRow { class, coverage_percent: cov, printed_raw_quota: raw, printed_selected: selected }
}

pub const FOREST_ANCHOR: u64 = 129;

pub const HRL_COVERAGE: [AnchoredRow; 3] =
    [anchored(ART, 4.17, 5.71, 6), anchored(FOR, 94.14, 129.00, 129), anchored(WAT, 1.69, 2.32, 5)];
pub const HRL_TOTAL: u64 = 140;

pub const GLC_COVERAGE: [AnchoredRow; 4] = [
    anchored(ART, 3.36, 11.33, 11),
    anchored(FOR, 38.23, 129.00, 129),
    anchored(WAT, 0.61, 2.07, 5),
    anchored(AGR, 57.80, 195.01, 195),
];
pub const GLC_TOTAL: u64 = 340;

/// Level-1 matrix of CLC2012 against the CLC2012-based ground truth.
/// Rows are reference classes, columns map classes, both in
/// [`GeneralClass::ALL`] order.
pub const CLC_LEVEL1_MATRIX: [[u64; 5]; 5] =
    [[33, 4, 0, 0, 0], [1, 164, 0, 0, 0], [0, 0, 70, 0, 0], [0, 0, 0, 7, 0], [2, 3, 3, 2, 0]];
pub const CLC_LEVEL1_OA_PERCENT: f64 = 94.81;
pub const CLC_LEVEL1_KAPPA: f64 = 0.911;
pub const CLC_LEVEL1_PA: [Option<f64>; 5] = [Some(89.0), Some(99.0), Some(100.0), Some(100.0), Some(0.0)];
pub const CLC_LEVEL1_UA: [Option<f64>; 5] = [Some(92.0), Some(96.0), Some(96.0), Some(78.0), None];

pub const LEVEL_MEDIANS: [f64; 3] = [87.5, 50.0, 12.5];
pub const LEVEL_WEIGHTS: [f64; 3] = [0.583, 0.333, 0.083];

/// Per-level sample counts and OA of one product on one sampling set.
#[derive(Debug, Clone, Copy)]
pub struct LevelFigures {
    pub product: &'static str,
    pub sampling_set: &'static str,
    pub n: [u64; 3],
    pub accuracy: [f64; 3],
    pub printed_oa_percent: Option<f64>,
    pub printed_weighted_percent: f64,
}

impl LevelFigures {
    pub fn per_level(&self) -> Vec<PerLevelAccuracy> {
        (0..3).map(|i| PerLevelAccuracy::new(i as u8 + 1, self.n[i], self.accuracy[i])).collect()
    }

    /// Sample-weighted mean of the per-level OA.
    pub fn plain_oa(&self) -> f64 {
        let n: u64 = self.n.iter().sum();
        self.n.iter().zip(&self.accuracy).map(|(&k, a)| k as f64 * a).sum::<f64>() / n as f64
    }
}

pub const SAMPLING_SETS: [&str; 3] = ["clc_based", "hrl_based", "glc30_based"];
pub const PRODUCTS: [&str; 3] = ["clc2012", "hrl", "glc30"];

/// Printed per-level figures of the CLC2012-based sampling set.
pub const CLC_BASED_LEVELS: [LevelFigures; 3] = [
    LevelFigures {
        product: "clc2012",
        sampling_set: "clc_based",
        n: [289, 225, 25],
        accuracy: [0.95, 0.77, 0.72],
        printed_oa_percent: Some(86.0),
        printed_weighted_percent: 89.0,
    },
    LevelFigures {
        product: "hrl",
        sampling_set: "clc_based",
        n: [289, 225, 25],
        accuracy: [0.91, 0.87, 0.76],
        printed_oa_percent: Some(89.0),
        printed_weighted_percent: 90.0,
    },
    LevelFigures {
        product: "glc30",
        sampling_set: "clc_based",
        n: [291, 218, 30],
        accuracy: [0.90, 0.78, 0.77],
        printed_oa_percent: Some(84.0),
        printed_weighted_percent: 86.0,
    },
];

const HRL_SET_N: [u64; 3] = [76, 56, 8];
const GLC_SET_N: [u64; 3] = [182, 140, 18];

fn constructed(product: &'static str, set: &'static str, n: [u64; 3], correct: [u64; 3], printed: f64) -> LevelFigures {
    LevelFigures {
        product,
        sampling_set: set,
        n,
        accuracy: [correct[0] as f64 / n[0] as f64, correct[1] as f64 / n[1] as f64, correct[2] as f64 / n[2] as f64],
        printed_oa_percent: None,
        printed_weighted_percent: printed,
    }
}

/// Stand-in per-level figures for the HRL- and GLC30-based sets.
pub fn constructed_levels() -> [LevelFigures; 6] {
    [
        constructed("clc2012", "hrl_based", HRL_SET_N, [70, 46, 6], 89.0),
        constructed("hrl", "hrl_based", HRL_SET_N, [67, 42, 6], 84.0),
        constructed("glc30", "hrl_based", HRL_SET_N, [66, 45, 6], 85.0),
        constructed("clc2012", "glc30_based", GLC_SET_N, [164, 113, 14], 87.0),
        constructed("hrl", "glc30_based", GLC_SET_N, [175, 121, 15], 93.0),
        constructed("glc30", "glc30_based", GLC_SET_N, [159, 108, 13], 84.0),
    ]
}

/// All nine cross-sampling entries.
pub fn cross_sampling_levels() -> Vec<LevelFigures> {
    CLC_BASED_LEVELS.iter().copied().chain(constructed_levels()).collect()
}

/// Weighted OA grid, products × sampling sets.
pub fn cross_sampling_summary() -> WeightedOaSummary {
    let w = ConfidenceWeighting::standard();
    let mut s = WeightedOaSummary::default();
    let levels = cross_sampling_levels();
    for product in PRODUCTS {
        for set in SAMPLING_SETS {
            let f = levels.iter().find(|f| f.product == product && f.sampling_set == set).expect("full grid");
            let v = weighted_metric(&f.per_level(), &w).expect("valid fixture");
            s.insert(product, set, v);
        }
    }
    s
}

pub fn clc_strata() -> Vec<Stratum> {
    CLC_COVERAGE.iter().map(|r| Stratum::new(r.l3_code, r.coverage_percent / 100.0)).collect()
}

pub fn anchored_strata(rows: &[AnchoredRow]) -> Vec<Stratum> {
    rows.iter().map(|r| Stratum::new(r.class.name(), r.coverage_percent / 100.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

fn check_sample_size() -> CheckResult {
    let a = required_sample_size(1.96, 0.5, 0.04).ok().map(|p| p.n);
    let b = required_sample_size(1.96, 0.5, 0.05).ok().map(|p| p.n);
    check("sample_size", a == Some(601) && b == Some(385), format!("h=0.04 -> {a:?}, h=0.05 -> {b:?}"))
}

fn check_clc_allocation() -> CheckResult {
    let alloc = match allocate_max_anchored(&clc_strata(), CLC_N_MAX, N_MIN) {
        Ok(a) => a,
        Err(e) => return check("clc_allocation", false, e.to_string()),
    };
    let mut problems = Vec::new();
    for (r, e) in CLC_COVERAGE.iter().zip(&alloc.entries) {
        if (e.raw_quota - r.printed_raw_quota).abs() > 0.1 {
            problems.push(format!("{} raw {:.3} vs {}", r.l3_code, e.raw_quota, r.printed_raw_quota));
        }
        if e.selected != r.printed_selected {
            problems.push(format!("{} selected {} vs {}", r.l3_code, e.selected, r.printed_selected));
        }
    }
    for (class, want) in CLC_CLASS_SUMS {
        let got: u64 =
            CLC_COVERAGE.iter().zip(&alloc.entries).filter(|(r, _)| r.class == class).map(|(_, e)| e.selected).sum();
        if got != want {
            problems.push(format!("{} sum {got} vs {want}", class.name()));
        }
    }
    if alloc.total != CLC_TOTAL {
        problems.push(format!("total {} vs {CLC_TOTAL}", alloc.total));
    }
    let ok = problems.is_empty();
    let detail = if ok { format!("25 strata, total {}", alloc.total) } else { problems.join("; ") };
    check("clc_allocation", ok, detail)
}

fn check_anchored(name: &'static str, rows: &[AnchoredRow], total: u64) -> CheckResult {
    let forest = StratumId::new(GeneralClass::Forest.name());
    let alloc = match allocate_class_anchored(&anchored_strata(rows), &forest, FOREST_ANCHOR, N_MIN) {
        Ok(a) => a,
        Err(e) => return check(name, false, e.to_string()),
    };
    let got: Vec<u64> = alloc.entries.iter().map(|e| e.selected).collect();
    let want: Vec<u64> = rows.iter().map(|r| r.printed_selected).collect();
    let raw_ok = rows.iter().zip(&alloc.entries).all(|(r, e)| (e.raw_quota - r.printed_raw_quota).abs() <= 0.1);
    check(
        name,
        got == want && alloc.total == total && raw_ok,
        format!("selected {got:?} (expected {want:?}), total {}", alloc.total),
    )
}

fn check_weights() -> CheckResult {
    let w = ConfidenceWeighting::standard();
    let medians: Vec<f64> = w.levels.iter().map(|l| l.median).collect();
    let weights: Vec<f64> = w.levels.iter().map(|l| l.weight).collect();
    let ok = medians == LEVEL_MEDIANS && weights.iter().zip(LEVEL_WEIGHTS).all(|(a, b)| (a - b).abs() <= 0.001);
    check("confidence_weights", ok, format!("medians {medians:?}, weights {weights:.4?}"))
}

fn check_weighted_example() -> CheckResult {
    let f = &CLC_BASED_LEVELS[2];
    let v = weighted_metric(&f.per_level(), &ConfidenceWeighting::standard()).unwrap_or(f64::NAN);
    check("weighted_oa_example", (v * 100.0 - 86.0).abs() <= 0.5, format!("weighted OA {:.4} -> {}", v, percent(v)))
}

fn check_matrix() -> CheckResult {
    let m = ConfusionMatrix::from_general_rows(CLC_LEVEL1_MATRIX);
    let (Ok(oa), Ok(k), Ok(pu)) = (overall_accuracy(&m), kappa(&m), producer_user_accuracy(&m)) else {
        return check("level1_matrix", false, "metrics undefined".into());
    };
    let close = |got: Option<f64>, want: Option<f64>| match (got, want) {
        (Some(g), Some(w)) => (g * 100.0 - w).abs() <= 0.5,
        (None, None) => true,
        _ => false,
    };
    let pa_ok = pu.iter().zip(CLC_LEVEL1_PA).all(|(c, w)| close(c.producer, w));
    let ua_ok = pu.iter().zip(CLC_LEVEL1_UA).all(|(c, w)| close(c.user, w));
    let ok =
        (oa * 100.0 - CLC_LEVEL1_OA_PERCENT).abs() <= 0.01 && (k - CLC_LEVEL1_KAPPA).abs() <= 0.005 && pa_ok && ua_ok;
    check("level1_matrix", ok, format!("OA {:.4}%, kappa {:.4}", oa * 100.0, k))
}

fn check_weighted_gain() -> CheckResult {
    let w = ConfidenceWeighting::standard();
    let mut ok = true;
    let mut parts = Vec::new();
    for f in &CLC_BASED_LEVELS {
        let plain = f.plain_oa();
        let weighted = weighted_metric(&f.per_level(), &w).unwrap_or(f64::NAN);
        let gain = (weighted - plain) * 100.0;
        ok &= (1.0..=3.0).contains(&gain) && (weighted * 100.0 - f.printed_weighted_percent).abs() <= 0.5;
        parts.push(format!("{} {:.2}% (+{:.2}pp)", f.product, weighted * 100.0, gain));
    }
    check("weighted_gain", ok, parts.join(", "))
}

fn check_cross_sampling() -> CheckResult {
    let s = cross_sampling_summary();
    let mut ok = true;
    let mut parts = Vec::new();
    for f in cross_sampling_levels() {
        let v = s.get(f.product, f.sampling_set).unwrap_or(f64::NAN);
        ok &= (v * 100.0 - f.printed_weighted_percent).abs() <= 0.5;
        parts.push(format!("{}/{}={}", f.product, f.sampling_set, round_percent(v)));
    }
    check("cross_sampling_summary", ok, parts.join(" "))
}

/// Recomputes every reference figure from its inputs.
pub fn run_reference_checks() -> Vec<CheckResult> {
    vec![
        check_sample_size(),
        check_clc_allocation(),
        check_anchored("hrl_allocation", &HRL_COVERAGE, HRL_TOTAL),
        check_anchored("glc30_allocation", &GLC_COVERAGE, GLC_TOTAL),
        check_weights(),
        check_weighted_example(),
        check_matrix(),
        check_weighted_gain(),
        check_cross_sampling(),
    ]
}

/// Input and output files of the reference checks, as `(file name, contents)`.
pub fn fixture_files() -> Vec<(String, String)> {
    let mut files = Vec::new();
    let csv_of = |alloc: crate::sampling::Allocation| {
        let mut buf = Vec::new();
        alloc.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    };
    if let Ok(a) = allocate_max_anchored(&clc_strata(), CLC_N_MAX, N_MIN) {
        files.push(("allocation_clc_based.csv".into(), csv_of(a)));
    }
    let forest = StratumId::new(GeneralClass::Forest.name());
    for (name, rows) in [("hrl_based", &HRL_COVERAGE[..]), ("glc30_based", &GLC_COVERAGE[..])] {
        if let Ok(a) = allocate_class_anchored(&anchored_strata(rows), &forest, FOREST_ANCHOR, N_MIN) {
            files.push((format!("allocation_{name}.csv"), csv_of(a)));
        }
    }
    let mut levels = String::from("product,sampling_set,level,n,accuracy\n");
    for f in cross_sampling_levels() {
        for i in 0..3 {
            levels.push_str(&format!("{},{},{},{},{}\n", f.product, f.sampling_set, i + 1, f.n[i], f.accuracy[i]));
        }
    }
    files.push(("per_level_inputs.csv".into(), levels));
    let mut summary = Vec::new();
    cross_sampling_summary().write_csv(&mut summary).expect("in-memory write");
    files.push(("weighted_oa_summary.csv".into(), String::from_utf8(summary).expect("utf8")));
    let checks: String = run_reference_checks().iter().map(|c| format!("{c}\n")).collect();
    files.push(("checks.txt".into(), checks));
    files
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_reference_check_passes() {
        for c in run_reference_checks() {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn coverage_rows_match_builtin_scheme() {
        let scheme = crate::nomenclature::ClassScheme::builtin("clc2012").unwrap();
        for r in CLC_COVERAGE {
            let codes = scheme.codes_for_l3(r.l3_code);
            assert!(!codes.is_empty(), "{}", r.l3_code);
            assert_eq!(scheme.harmonize(codes[0]), r.class);
        }
    }

    #[test]
    fn constructed_sets_have_published_sizes() {
        assert_eq!(HRL_SET_N.iter().sum::<u64>(), HRL_TOTAL);
        assert_eq!(GLC_SET_N.iter().sum::<u64>(), GLC_TOTAL);
    }

    #[test]
    fn fixture_files_are_complete() {
        let names: Vec<String> = fixture_files().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 6);
        assert!(names.contains(&"weighted_oa_summary.csv".to_string()));
    }
}
