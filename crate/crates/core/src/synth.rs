//! Seeded synthetic landscapes and degraded copies of them.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, RasterGrid, TileShift};

pub const DEFAULT_NODATA: i32 = -9999;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no classes given")]
    NoClasses,
    #[error("fraction {fraction} of class {code} is outside [0, 1]")]
    InvalidFraction { code: i32, fraction: f64 },
    #[error("class fractions sum to {0}, expected 1")]
    FractionSum(f64),
    #[error("class {0} is listed twice")]
    DuplicateClass(i32),
    #[error("class code {0} equals the nodata value")]
    NodataClass(i32),
    #[error("blob scale must be at least 1")]
    BlobScale,
    #[error("kernel has {rows}x{cols} entries for {truth} truth and {map} map classes")]
    KernelShape { rows: usize, cols: usize, truth: usize, map: usize },
    #[error("kernel row of class {code} sums to {sum}, expected 1")]
    KernelRowSum { code: i32, sum: f64 },
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("truth class {0} has no kernel row")]
    UnknownClass(i32),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid synth config: {0}")]
    Config(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassFraction {
    pub code: i32,
    pub fraction: f64,
}

/// Geometry and class mix of a synthetic truth grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "default_cell_size")]
    pub cell_size: f64,
    #[serde(default)]
    pub xll: f64,
    #[serde(default)]
    pub yll: f64,
    #[serde(default = "default_nodata")]
    pub nodata: i32,
    pub blob_scale: usize,
    pub classes: Vec<ClassFraction>,
}

fn default_cell_size() -> f64 {
    30.0
}

fn default_nodata() -> i32 {
    DEFAULT_NODATA
}

impl LandscapeSpec {
    pub fn new(rows: usize, cols: usize, cell_size: f64, blob_scale: usize, classes: Vec<ClassFraction>) -> Self {
        Self { rows, cols, cell_size, xll: 0.0, yll: 0.0, nodata: DEFAULT_NODATA, blob_scale, classes }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.classes.is_empty() {
            return Err(SynthError::NoClasses);
        }
        if self.blob_scale < 1 {
            return Err(SynthError::BlobScale);
        }
        let mut sum = 0.0;
        for (i, c) in self.classes.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.fraction) {
                return Err(SynthError::InvalidFraction { code: c.code, fraction: c.fraction });
            }
            if self.classes[..i].iter().any(|d| d.code == c.code) {
                return Err(SynthError::DuplicateClass(c.code));
            }
            if c.code == self.nodata {
                return Err(SynthError::NodataClass(c.code));
            }
            sum += c.fraction;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(SynthError::FractionSum(sum));
        }
        Ok(())
    }
}

/// Cell counts per class by largest remainder, so they add up to `total`.
fn class_quotas(classes: &[ClassFraction], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = classes.iter().map(|c| c.fraction * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().cycle().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Region-grown landscape: blobs of roughly `blob_scale²` cells are grown
/// from random seeds until each class has exactly its quota of cells.
pub fn generate_landscape(spec: &LandscapeSpec, seed: u64) -> Result<RasterGrid, SynthError> {
    spec.validate()?;
    let (rows, cols) = (spec.rows, spec.cols);
    let total = rows * cols;
    let mut grid = RasterGrid::from_lower_left(
        rows,
        cols,
        spec.xll,
        spec.yll,
        spec.cell_size,
        spec.nodata,
        vec![spec.nodata; total],
    )?;
    let mut remaining = class_quotas(&spec.classes, total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut assigned = vec![false; total];
    let mut seeds: Vec<usize> = (0..total).collect();
    seeds.shuffle(&mut rng);
    let mut next_seed = 0;
    let blob_target = spec.blob_scale * spec.blob_scale;
    let mut values = vec![spec.nodata; total];
    let mut left = total;
    let mut frontier = Vec::new();

    while left > 0 {
        // Class drawn in proportion to its unfilled quota.
        let mut pick = rng.random_range(0..left);
        let class = remaining
            .iter()
            .position(|&r| {
                if pick < r {
                    true
                } else {
                    pick -= r;
                    false
                }
            })
            .expect("quotas sum to the unassigned cell count");
        while assigned[seeds[next_seed]] {
            next_seed += 1;
        }
        let budget = blob_target.min(remaining[class]);
        frontier.clear();
        frontier.push(seeds[next_seed]);
        let mut grown = 0;
        while grown < budget && !frontier.is_empty() {
            let cell = frontier.swap_remove(rng.random_range(0..frontier.len()));
            if assigned[cell] {
                continue;
            }
            assigned[cell] = true;
            values[cell] = spec.classes[class].code;
            grown += 1;
            let (r, c) = (cell / cols, cell % cols);
            if r > 0 && !assigned[cell - cols] {
                frontier.push(cell - cols);
            }
            if r + 1 < rows && !assigned[cell + cols] {
                frontier.push(cell + cols);
            }
            if c > 0 && !assigned[cell - 1] {
                frontier.push(cell - 1);
            }
            if c + 1 < cols && !assigned[cell + 1] {
                frontier.push(cell + 1);
            }
        }
        remaining[class] -= grown;
        left -= grown;
    }
    for (i, v) in values.into_iter().enumerate() {
        grid.set(crate::grid::CellIndex::new(i / cols, i % cols), v);
    }
    Ok(grid)
}

/// How a map product departs from the truth grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub truth_classes: Vec<i32>,
    pub map_classes: Vec<i32>,
    /// `kernel[i][j]` = P(map class j | truth class i).
    pub kernel: Vec<Vec<f64>>,
    #[serde(default)]
    pub shift: TileShift,
    #[serde(default)]
    pub unclassified_rate: f64,
}

/// Text form of a [`DegradationSpec`]; `shift` is `[dx, dy]`.
#[derive(Debug, Deserialize)]
struct DegradationConfig {
    truth: Vec<i32>,
    map: Vec<i32>,
    p: Vec<Vec<f64>>,
    #[serde(default)]
    shift: [i32; 2],
    #[serde(default)]
    unclassified_rate: f64,
}

impl DegradationSpec {
    pub fn identity(classes: Vec<i32>) -> Self {
        let k = classes.len();
        let kernel = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Self {
            map_classes: classes.clone(),
            truth_classes: classes,
            kernel,
            shift: TileShift::ZERO,
            unclassified_rate: 0.0,
        }
    }

    /// Correct with probability `p`, otherwise uniform over the other classes.
    pub fn uniform_diagonal(classes: Vec<i32>, p: f64) -> Self {
        let k = classes.len();
        let off = if k > 1 { (1.0 - p) / (k - 1) as f64 } else { 0.0 };
        let kernel = (0..k).map(|i| (0..k).map(|j| if i == j { p } else { off }).collect()).collect();
        Self {
            map_classes: classes.clone(),
            truth_classes: classes,
            kernel,
            shift: TileShift::ZERO,
            unclassified_rate: 0.0,
        }
    }

    pub fn with_shift(mut self, shift: TileShift) -> Self {
        self.shift = shift;
        self
    }

    pub fn with_unclassified_rate(mut self, rate: f64) -> Self {
        self.unclassified_rate = rate;
        self
    }

    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        let c: DegradationConfig = toml::from_str(text)?;
        let spec = Self {
            truth_classes: c.truth,
            map_classes: c.map,
            kernel: c.p,
            shift: TileShift { dx: c.shift[0], dy: c.shift[1] },
            unclassified_rate: c.unclassified_rate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let (t, m) = (self.truth_classes.len(), self.map_classes.len());
        if t == 0 || m == 0 {
            return Err(SynthError::NoClasses);
        }
        if self.kernel.len() != t || self.kernel.iter().any(|r| r.len() != m) {
            return Err(SynthError::KernelShape {
                rows: self.kernel.len(),
                cols: self.kernel.first().map_or(0, Vec::len),
                truth: t,
                map: m,
            });
        }
        for (i, &code) in self.truth_classes.iter().enumerate() {
            if self.truth_classes[..i].contains(&code) {
                return Err(SynthError::DuplicateClass(code));
            }
        }
        for (code, row) in self.truth_classes.iter().zip(&self.kernel) {
            if let Some(&p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(SynthError::InvalidProbability(p));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(SynthError::KernelRowSum { code: *code, sum });
            }
        }
        if !(0.0..=1.0).contains(&self.unclassified_rate) {
            return Err(SynthError::InvalidProbability(self.unclassified_rate));
        }
        Ok(())
    }
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Shifted, reclassified copy of `truth` on the same geometry.
///
/// Output cell `(r, c)` takes its truth class from `(r + dy, c − dx)`, so
/// content moves `dx` cells east and `dy` cells north. Cells whose source is
/// off the grid or nodata become nodata.
pub fn degrade(truth: &RasterGrid, spec: &DegradationSpec, seed: u64) -> Result<RasterGrid, SynthError> {
    spec.validate()?;
    let rows_of: BTreeMap<i32, usize> = spec.truth_classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    if let Some(&v) = truth.values().iter().find(|&&v| v != truth.nodata() && !rows_of.contains_key(&v)) {
        return Err(SynthError::UnknownClass(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (truth.rows() as i64, truth.cols() as i64);
    let mut values = Vec::with_capacity(truth.len());
    for r in 0..rows {
        for c in 0..cols {
            let source = truth.get_signed(r + spec.shift.dy as i64, c - spec.shift.dx as i64);
            let v = match source {
                Some(v) if v != truth.nodata() => {
                    if spec.unclassified_rate > 0.0 && rng.random::<f64>() < spec.unclassified_rate {
                        truth.nodata()
                    } else {
                        let u: f64 = rng.random();
                        spec.map_classes[sample_row(&spec.kernel[rows_of[&v]], u)]
                    }
                }
                _ => truth.nodata(),
            };
            values.push(v);
        }
    }
    Ok(RasterGrid::from_lower_left(
        truth.rows(),
        truth.cols(),
        truth.xll(),
        truth.yll(),
        truth.cell_size(),
        truth.nodata(),
        values,
    )?)
}

/// A whole synthetic scenario: one truth grid and named degraded products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub landscape: LandscapeSpec,
    #[serde(default)]
    pub products: Vec<SynthProduct>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProduct {
    pub name: String,
    pub truth: Vec<i32>,
    pub map: Vec<i32>,
    pub p: Vec<Vec<f64>>,
    #[serde(default)]
    pub shift: [i32; 2],
    #[serde(default)]
    pub unclassified_rate: f64,
}

impl SynthProduct {
    pub fn spec(&self) -> Result<DegradationSpec, SynthError> {
        let spec = DegradationSpec {
            truth_classes: self.truth.clone(),
            map_classes: self.map.clone(),
            kernel: self.p.clone(),
            shift: TileShift { dx: self.shift[0], dy: self.shift[1] },
            unclassified_rate: self.unclassified_rate,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SynthConfig {
    pub fn from_toml(text: &str) -> Result<Self, SynthError> {
        Ok(toml::from_str(text)?)
    }

    /// Truth grid followed by each product, seeded from `seed` and the product position.
    pub fn generate(&self) -> Result<(RasterGrid, Vec<(String, RasterGrid)>), SynthError> {
        let truth = generate_landscape(&self.landscape, self.seed)?;
        let mut products = Vec::with_capacity(self.products.len());
        for (i, p) in self.products.iter().enumerate() {
            let seed = self.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
            products.push((p.name.clone(), degrade(&truth, &p.spec()?, seed)?));
        }
        Ok((truth, products))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mix(pairs: &[(i32, f64)]) -> Vec<ClassFraction> {
        pairs.iter().map(|&(code, fraction)| ClassFraction { code, fraction }).collect()
    }

    fn counts(grid: &RasterGrid) -> BTreeMap<i32, usize> {
        let mut m = BTreeMap::new();
        for &v in grid.values() {
            *m.entry(v).or_default() += 1;
        }
        m
    }

    #[test]
    fn single_class_is_uniform() {
        let g = generate_landscape(&LandscapeSpec::new(20, 30, 30.0, 4, mix(&[(20, 1.0)])), 1).unwrap();
        assert!(g.values().iter().all(|&v| v == 20));
    }

    #[test]
    fn quotas_are_exact() {
        let spec = LandscapeSpec::new(37, 41, 30.0, 5, mix(&[(10, 0.55), (20, 0.30), (80, 0.08), (60, 0.07)]));
        let g = generate_landscape(&spec, 9).unwrap();
        let c = counts(&g);
        let total = 37.0 * 41.0;
        for cf in &spec.classes {
            let got = c[&cf.code] as f64;
            assert!((got - cf.fraction * total).abs() < 1.0, "{} {got}", cf.code);
        }
    }

    #[test]
    fn same_seed_same_grid() {
        let spec = LandscapeSpec::new(30, 30, 30.0, 3, mix(&[(1, 0.5), (2, 0.5)]));
        assert_eq!(generate_landscape(&spec, 4).unwrap(), generate_landscape(&spec, 4).unwrap());
        assert_ne!(generate_landscape(&spec, 4).unwrap(), generate_landscape(&spec, 5).unwrap());
    }

    #[test]
    fn invalid_mixes_rejected() {
        let bad_sum = LandscapeSpec::new(5, 5, 30.0, 1, mix(&[(1, 0.5), (2, 0.4)]));
        assert!(matches!(generate_landscape(&bad_sum, 0), Err(SynthError::FractionSum(_))));
        let negative = LandscapeSpec::new(5, 5, 30.0, 1, mix(&[(1, 1.2), (2, -0.2)]));
        assert!(matches!(generate_landscape(&negative, 0), Err(SynthError::InvalidFraction { .. })));
        let blob = LandscapeSpec::new(5, 5, 30.0, 0, mix(&[(1, 1.0)]));
        assert!(matches!(generate_landscape(&blob, 0), Err(SynthError::BlobScale)));
    }

    #[test]
    fn larger_blobs_are_more_coherent() {
        fn same_neighbor_share(g: &RasterGrid) -> f64 {
            let v = g.values();
            let cols = g.cols();
            let pairs = (0..v.len()).filter(|i| (i + 1) % cols != 0);
            let (same, n) = pairs.fold((0, 0), |(s, n), i| (s + (v[i] == v[i + 1]) as usize, n + 1));
            same as f64 / n as f64
        }
        let classes = mix(&[(1, 0.25), (2, 0.25), (3, 0.25), (4, 0.25)]);
        let fine = generate_landscape(&LandscapeSpec::new(80, 80, 30.0, 1, classes.clone()), 2).unwrap();
        let coarse = generate_landscape(&LandscapeSpec::new(80, 80, 30.0, 8, classes), 2).unwrap();
        assert!(same_neighbor_share(&coarse) > same_neighbor_share(&fine) + 0.2);
    }

    #[test]
    fn identity_degradation_is_identity() {
        let spec = LandscapeSpec::new(25, 25, 30.0, 3, mix(&[(1, 0.6), (2, 0.4)]));
        let g = generate_landscape(&spec, 3).unwrap();
        assert_eq!(degrade(&g, &DegradationSpec::identity(vec![1, 2]), 99).unwrap(), g);
    }

    #[test]
    fn shift_translates_content() {
        let values: Vec<i32> = (0..12).map(|i| i % 3 + 1).collect();
        let g = RasterGrid::from_lower_left(3, 4, 0.0, 0.0, 10.0, -1, values).unwrap();
        let spec = DegradationSpec::identity(vec![1, 2, 3]).with_shift(TileShift { dx: 1, dy: 0 });
        let out = degrade(&g, &spec, 0).unwrap();
        for r in 0..3 {
            assert_eq!(out.values()[r * 4], -1);
            for c in 1..4 {
                assert_eq!(out.values()[r * 4 + c], g.values()[r * 4 + c - 1]);
            }
        }
    }

    #[test]
    fn unknown_truth_class_rejected() {
        let g = RasterGrid::filled(2, 2, 0.0, 20.0, 10.0, -1, 7).unwrap();
        assert!(matches!(degrade(&g, &DegradationSpec::identity(vec![1]), 0), Err(SynthError::UnknownClass(7))));
    }

    #[test]
    fn kernel_validation() {
        let mut spec = DegradationSpec::uniform_diagonal(vec![1, 2, 3], 0.9);
        assert!(spec.validate().is_ok());
        spec.kernel[0][0] = 0.8;
        assert!(matches!(spec.validate(), Err(SynthError::KernelRowSum { code: 1, .. })));
        spec.kernel.pop();
        assert!(matches!(spec.validate(), Err(SynthError::KernelShape { .. })));
    }

    #[test]
    fn degradation_from_toml() {
        let spec = DegradationSpec::from_toml(
            "truth = [10, 60]\nmap = [10, 60]\np = [[1.0, 0.0], [0.75, 0.25]]\nshift = [0, -1]\nunclassified_rate = 0.01\n",
        )
        .unwrap();
        assert_eq!(spec.shift, TileShift { dx: 0, dy: -1 });
        assert_eq!(spec.kernel[1], vec![0.75, 0.25]);
        assert!(DegradationSpec::from_toml("truth = [1]\nmap = [1]\np = [[0.5]]\n").is_err());
    }

    #[test]
    fn all_cells_unclassified_at_rate_one() {
        let g = RasterGrid::filled(4, 4, 0.0, 40.0, 10.0, -1, 1).unwrap();
        let out = degrade(&g, &DegradationSpec::identity(vec![1]).with_unclassified_rate(1.0), 0).unwrap();
        assert!(out.values().iter().all(|&v| v == -1));
    }
}
