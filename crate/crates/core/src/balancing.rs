//! Training-set rebalancing on windowed samples.
//!
//! Expression: neutral samples are halved, every other sample is duplicated.
//! Valence/arousal: the plane is cut into an 8x8 grid; samples in the center
//! regions are halved, samples everywhere else are duplicated.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Task, NEUTRAL, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::windowing::WindowedDataset;

pub const BINS_PER_AXIS: usize = 8;
pub const NUM_REGIONS: usize = BINS_PER_AXIS * BINS_PER_AXIS;
const BIN_WIDTH: f64 = 2.0 / BINS_PER_AXIS as f64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaGrid {
    /// Regions treated as over-represented and halved.
    pub center_regions: Vec<usize>,
}

impl Default for VaGrid {
    /// The 2x2 block covering `[-0.25, 0.25]` on both axes.
    fn default() -> Self {
        VaGrid {
            center_regions: vec![27, 28, 35, 36],
        }
    }
}

impl VaGrid {
    pub fn new(center_regions: Vec<usize>) -> Result<Self> {
        if let Some(r) = center_regions.iter().find(|&&r| r >= NUM_REGIONS) {
            return Err(Error::Parameter(format!(
                "region id {r} is outside 0..{NUM_REGIONS}"
            )));
        }
        Ok(VaGrid { center_regions })
    }

    pub fn is_center(&self, region: usize) -> bool {
        self.center_regions.contains(&region)
    }
}

fn axis_bin(x: f64, axis: &str) -> Result<usize> {
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Range(format!("{axis} {x} is outside [-1, 1]")));
    }
    Ok((((x + 1.0) / BIN_WIDTH).floor() as usize).min(BINS_PER_AXIS - 1))
}

/// Region id `arousal_bin * 8 + valence_bin`.
pub fn va_region_index(valence: f64, arousal: f64) -> Result<usize> {
    Ok(axis_bin(arousal, "arousal")? * BINS_PER_AXIS + axis_bin(valence, "valence")?)
}

/// Before/after sample counts per bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub before: BTreeMap<usize, usize>,
    pub after: BTreeMap<usize, usize>,
}

/// Keeps `ceil(n/2)` of each halved bucket (seeded choice without
/// replacement) and emits every other sample twice, adjacent. Survivors keep
/// their input order.
fn rebalance(
    ds: &WindowedDataset,
    keys: &[usize],
    halve: impl Fn(usize) -> bool,
    seed: u64,
) -> (WindowedDataset, BalanceReport) {
    let mut buckets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &k) in keys.iter().enumerate() {
        buckets.entry(k).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut copies = vec![2usize; keys.len()];
    for (&k, members) in &buckets {
        if !halve(k) {
            continue;
        }
        let mut order = members.clone();
        order.shuffle(&mut rng);
        let keep = members.len().div_ceil(2);
        for &i in &order[..keep] {
            copies[i] = 1;
        }
        for &i in &order[keep..] {
            copies[i] = 0;
        }
    }
    let mut out = WindowedDataset::empty(ds.schema.clone());
    let mut report = BalanceReport {
        before: BTreeMap::new(),
        after: BTreeMap::new(),
    };
    for (i, s) in ds.samples.iter().enumerate() {
        *report.before.entry(keys[i]).or_insert(0) += 1;
        for _ in 0..copies[i] {
            out.samples.push(s.clone());
            *report.after.entry(keys[i]).or_insert(0) += 1;
        }
    }
    (out, report)
}

/// Halves neutral samples and duplicates all others, keyed on the
/// short-term expression label. Report buckets are class ids.
pub fn balance_expression(
    ds: &WindowedDataset,
    seed: u64,
) -> Result<(WindowedDataset, BalanceReport)> {
    let keys: Vec<usize> = ds
        .short_labels(Task::Expression)?
        .into_iter()
        .map(|y| y as usize)
        .collect();
    if let Some(bad) = keys.iter().find(|&&k| k >= NUM_CLASSES) {
        return Err(Error::Range(format!(
            "expression class {bad} outside 0..{NUM_CLASSES}"
        )));
    }
    Ok(rebalance(ds, &keys, |k| k == NEUTRAL as usize, seed))
}

/// Halves samples in the grid's center regions and duplicates the rest,
/// keyed on short-term valence/arousal. Report buckets are region ids.
pub fn balance_va(
    ds: &WindowedDataset,
    grid: &VaGrid,
    seed: u64,
) -> Result<(WindowedDataset, BalanceReport)> {
    let v = ds.short_labels(Task::Valence)?;
    let a = ds.short_labels(Task::Arousal)?;
    let keys = v
        .iter()
        .zip(&a)
        .map(|(&v, &a)| va_region_index(v, a))
        .collect::<Result<Vec<_>>>()?;
    Ok(rebalance(ds, &keys, |k| grid.is_center(k), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GroupName;
    use crate::windowing::{Term, WindowSchema, WindowedSample};

    fn expr_ds(classes: &[(u8, usize)]) -> WindowedDataset {
        let schema = WindowSchema {
            terms: vec![Term::new("short", 1.0)],
            groups: vec![(GroupName::Gaze, 1)],
            tasks: vec![Task::Expression],
        };
        let mut ds = WindowedDataset::empty(schema);
        let mut i = 0;
        for &(c, n) in classes {
            for _ in 0..n {
                ds.samples.push(WindowedSample {
                    video_id: format!("v{}", i % 3),
                    anchor: i as f64,
                    features: vec![i as f64; 4],
                    labels: vec![c as f64],
                });
                i += 1;
            }
        }
        ds
    }

    #[test]
    fn region_corners() {
        assert_eq!(va_region_index(-1.0, -1.0).unwrap(), 0);
        assert_eq!(va_region_index(1.0, 1.0).unwrap(), 63);
        assert_eq!(va_region_index(0.1, 0.1).unwrap(), 36);
        assert_eq!(va_region_index(0.1, -0.9).unwrap(), 4);
        assert!(matches!(va_region_index(1.2, 0.0), Err(Error::Range(_))));
    }

    #[test]
    fn default_center_is_the_middle_block() {
        let g = VaGrid::default();
        for (v, a) in [(-0.2, -0.2), (0.2, -0.2), (-0.2, 0.2), (0.2, 0.2)] {
            assert!(g.is_center(va_region_index(v, a).unwrap()));
        }
        assert!(!g.is_center(va_region_index(0.3, 0.0).unwrap()));
    }

    #[test]
    fn neutral_halved_others_doubled() {
        let (out, rep) = balance_expression(&expr_ds(&[(0, 100), (1, 10)]), 3).unwrap();
        assert_eq!(rep.after[&0], 50);
        assert_eq!(rep.after[&1], 20);
        assert_eq!(out.len(), 70);
        let (out, _) = balance_expression(&expr_ds(&[(0, 1)]), 3).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn seeds_change_membership_not_counts() {
        let ds = expr_ds(&[(0, 41), (4, 5)]);
        let (a, _) = balance_expression(&ds, 1).unwrap();
        let (b, _) = balance_expression(&ds, 1).unwrap();
        let (c, _) = balance_expression(&ds, 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), c.len());
        assert_ne!(a, c);
    }
}
