use std::collections::BTreeMap;

use lcval_core::grid::{RasterGrid, TileShift};
use lcval_core::synth::{degrade, generate_landscape, ClassFraction, DegradationSpec, LandscapeSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mix() -> Vec<ClassFraction> {
    [(2, 0.55), (3, 0.30), (1, 0.08), (5, 0.07)]
        .iter()
        .map(|&(code, fraction)| ClassFraction { code, fraction })
        .collect()
}

fn fractions(grid: &RasterGrid) -> BTreeMap<i32, f64> {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &v in grid.values() {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_iter().map(|(k, c)| (k, c as f64 / grid.len() as f64)).collect()
}

#[test]
fn landscape_mix_matches_targets() {
    for (seed, blob) in [(1, 1), (2, 8), (3, 40)] {
        let spec = LandscapeSpec::new(500, 500, 30.0, blob, mix());
        let g = generate_landscape(&spec, seed).unwrap();
        let f = fractions(&g);
        for c in mix() {
            let got = f.get(&c.code).copied().unwrap_or(0.0);
            assert!((got - c.fraction).abs() <= 0.02, "class {} at {got}", c.code);
        }
        assert_eq!(f.len(), 4);
    }
}

#[test]
fn single_class_landscape_is_uniform() {
    let spec = LandscapeSpec::new(30, 40, 30.0, 5, vec![ClassFraction { code: 7, fraction: 1.0 }]);
    let g = generate_landscape(&spec, 9).unwrap();
    assert!(g.values().iter().all(|&v| v == 7));
}

#[test]
fn landscape_is_deterministic_per_seed() {
    let spec = LandscapeSpec::new(120, 90, 30.0, 6, mix());
    assert_eq!(generate_landscape(&spec, 4).unwrap(), generate_landscape(&spec, 4).unwrap());
    assert_ne!(generate_landscape(&spec, 4).unwrap(), generate_landscape(&spec, 5).unwrap());
}

#[test]
fn larger_blobs_give_more_neighbour_agreement() {
    let agreement = |blob| {
        let g = generate_landscape(&LandscapeSpec::new(200, 200, 30.0, blob, mix()), 12).unwrap();
        let v = g.values();
        let same = (0..200)
            .flat_map(|r| (1..200).map(move |c| (r, c)))
            .filter(|&(r, c)| v[r * 200 + c] == v[r * 200 + c - 1])
            .count();
        same as f64 / (200.0 * 199.0)
    };
    let (fine, coarse) = (agreement(1), agreement(20));
    assert!(coarse > fine + 0.2, "fine {fine}, coarse {coarse}");
}

#[test]
fn infeasible_mixes_fail() {
    let bad = vec![ClassFraction { code: 1, fraction: 0.7 }, ClassFraction { code: 2, fraction: 0.2 }];
    assert!(generate_landscape(&LandscapeSpec::new(10, 10, 30.0, 2, bad), 0).is_err());
    let neg = vec![ClassFraction { code: 1, fraction: 1.2 }, ClassFraction { code: 2, fraction: -0.2 }];
    assert!(generate_landscape(&LandscapeSpec::new(10, 10, 30.0, 2, neg), 0).is_err());
    let good = vec![ClassFraction { code: 1, fraction: 1.0 }];
    assert!(generate_landscape(&LandscapeSpec::new(10, 10, 30.0, 0, good), 0).is_err());
}

#[test]
fn diagonal_kernel_accuracy_follows_law_of_large_numbers() {
    // Independent per-cell truth keeps the oracle free of the landscape generator.
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let classes = vec![1, 2, 3, 4];
    let values: Vec<i32> = (0..1_000_000).map(|_| classes[rng.random_range(0..4)]).collect();
    let truth = RasterGrid::from_lower_left(1000, 1000, 0.0, 0.0, 30.0, -9999, values).unwrap();
    let map = degrade(&truth, &DegradationSpec::uniform_diagonal(classes.clone(), 0.9), 62).unwrap();
    for &c in &classes {
        let (mut n, mut hit) = (0usize, 0usize);
        for (&t, &m) in truth.values().iter().zip(map.values()) {
            if t == c {
                n += 1;
                hit += (m == c) as usize;
            }
        }
        let acc = hit as f64 / n as f64;
        assert!((acc - 0.9).abs() <= 0.002, "class {c}: {acc}");
    }
}

#[test]
fn identity_kernel_is_identity() {
    let spec = LandscapeSpec::new(60, 70, 30.0, 4, mix());
    let truth = generate_landscape(&spec, 3).unwrap();
    let id = DegradationSpec::identity(vec![1, 2, 3, 5]);
    assert_eq!(degrade(&truth, &id, 0).unwrap(), truth);
}

#[test]
fn identity_kernel_with_shift_translates() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let (rows, cols) = (13, 17);
    let values: Vec<i32> = (0..rows * cols).map(|_| rng.random_range(1..=3)).collect();
    let truth = RasterGrid::from_lower_left(rows, cols, 0.0, 0.0, 30.0, -9999, values).unwrap();
    for (dx, dy) in [(1, 0), (0, 1), (-2, 3), (0, -1)] {
        let spec = DegradationSpec::identity(vec![1, 2, 3]).with_shift(TileShift::new(dx, dy).unwrap());
        let out = degrade(&truth, &spec, 0).unwrap();
        for r in 0..rows as i64 {
            for c in 0..cols as i64 {
                // Content moves dx columns east and dy rows north.
                let (sr, sc) = (r + dy as i64, c - dx as i64);
                let want = if sr < 0 || sc < 0 || sr >= rows as i64 || sc >= cols as i64 {
                    -9999
                } else {
                    truth.values()[sr as usize * cols + sc as usize]
                };
                assert_eq!(out.values()[r as usize * cols + c as usize], want);
            }
        }
    }
}

#[test]
fn unclassified_rate_emits_nodata_at_that_rate() {
    let truth = RasterGrid::filled(400, 500, 0.0, 0.0, 30.0, -9999, 1).unwrap();
    let spec = DegradationSpec::identity(vec![1]).with_unclassified_rate(0.1);
    let out = degrade(&truth, &spec, 5).unwrap();
    let rate = out.values().iter().filter(|&&v| v == -9999).count() as f64 / out.len() as f64;
    // 200,000 cells give a standard error of about 0.0007.
    assert!((rate - 0.1).abs() < 0.004, "{rate}");
    assert!(out.values().iter().all(|&v| v == 1 || v == -9999));
}

#[test]
fn degrade_is_deterministic_and_rejects_unknown_classes() {
    let truth = generate_landscape(&LandscapeSpec::new(50, 50, 30.0, 3, mix()), 8).unwrap();
    let spec = DegradationSpec::uniform_diagonal(vec![1, 2, 3, 5], 0.8);
    assert_eq!(degrade(&truth, &spec, 1).unwrap(), degrade(&truth, &spec, 1).unwrap());
    assert_ne!(degrade(&truth, &spec, 1).unwrap(), degrade(&truth, &spec, 2).unwrap());
    assert!(degrade(&truth, &DegradationSpec::identity(vec![1, 2, 3]), 1).is_err());
}

#[test]
fn degradation_spec_reads_from_toml() {
    let spec = DegradationSpec::from_toml(
        "truth = [1, 2]\nmap = [10, 20, 30]\np = [[0.9, 0.1, 0.0], [0.2, 0.7, 0.1]]\nshift = [1, -1]\nunclassified_rate = 0.05\n",
    )
    .unwrap();
    assert_eq!(spec.map_classes, vec![10, 20, 30]);
    assert_eq!((spec.shift.dx, spec.shift.dy), (1, -1));
    assert!(DegradationSpec::from_toml("truth = [1]\nmap = [1]\np = [[0.5]]\n").is_err());
    assert!(DegradationSpec::from_toml("truth = [1]\nmap = [1, 2]\np = [[1.2, -0.2]]\n").is_err());
}
