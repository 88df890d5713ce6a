mod common;

use std::collections::BTreeMap;

use affect_core::balancing::{balance_expression, balance_va, va_region_index, VaGrid};
use affect_core::windowing::WindowedDataset;
use affect_core::Error;
use common::random_windowed;

const V: usize = 0;
const A: usize = 1;
const E: usize = 2;

/// Region of a sample by direct arithmetic on the bin edges.
fn region_oracle(v: f64, a: f64) -> usize {
    let bin = |x: f64| {
        let mut b = 0;
        while b < 7 && x >= -1.0 + 0.25 * (b + 1) as f64 {
            b += 1;
        }
        b
    };
    bin(a) * 8 + bin(v)
}

fn counts_by<F: Fn(&[f64]) -> usize>(ds: &WindowedDataset, key: F) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for s in &ds.samples {
        *m.entry(key(&s.labels)).or_default() += 1;
    }
    m
}

fn is_copy_of_input(out: &WindowedDataset, input: &WindowedDataset) -> bool {
    out.samples.iter().all(|s| input.samples.contains(s))
}

#[test]
fn region_examples() {
    assert_eq!(va_region_index(-1.0, -1.0).unwrap(), 0);
    assert_eq!(va_region_index(1.0, 1.0).unwrap(), 63);
    assert_eq!(va_region_index(0.1, 0.1).unwrap(), 36);
    assert_eq!(va_region_index(-0.1, 0.1).unwrap(), 35);
    assert!(matches!(va_region_index(1.01, 0.0), Err(Error::Range(_))));
    for i in 0..=40 {
        for j in 0..=40 {
            let (v, a) = (-1.0 + i as f64 * 0.05, -1.0 + j as f64 * 0.05);
            let (v, a) = (v.clamp(-1.0, 1.0), a.clamp(-1.0, 1.0));
            assert_eq!(
                va_region_index(v, a).unwrap(),
                region_oracle(v, a),
                "({v}, {a})"
            );
        }
    }
}

#[test]
fn expression_counts_on_random_datasets() {
    for seed in 0..50 {
        let ds = random_windowed(seed, 100 + 7 * seed as usize, 5);
        let before = counts_by(&ds, |l| l[E] as usize);
        let (out, report) = balance_expression(&ds, seed).unwrap();
        let after = counts_by(&out, |l| l[E] as usize);
        for (&c, &n) in &before {
            let want = if c == 0 { n.div_ceil(2) } else { 2 * n };
            assert_eq!(after[&c], want, "seed {seed} class {c}");
        }
        assert_eq!(report.before, before);
        assert_eq!(report.after, after);
        assert!(is_copy_of_input(&out, &ds));
        let frac = |m: &BTreeMap<usize, usize>| {
            *m.get(&0).unwrap_or(&0) as f64 / m.values().sum::<usize>() as f64
        };
        if frac(&before) > 1.0 / 3.0 {
            assert!(frac(&after) < frac(&before));
        }
    }
}

#[test]
fn va_counts_on_random_datasets() {
    let grid = VaGrid::default();
    for seed in 0..50 {
        let ds = random_windowed(1000 + seed, 150, 4);
        let before = counts_by(&ds, |l| region_oracle(l[V], l[A]));
        let (out, report) = balance_va(&ds, &grid, seed).unwrap();
        let after = counts_by(&out, |l| region_oracle(l[V], l[A]));
        let mut total = 0;
        for (&r, &n) in &before {
            let want = if [27, 28, 35, 36].contains(&r) {
                n.div_ceil(2)
            } else {
                2 * n
            };
            assert_eq!(after[&r], want);
            total += want;
        }
        assert_eq!(out.len(), total);
        assert_eq!(report.after, after);
        assert!(is_copy_of_input(&out, &ds));
    }
}

#[test]
fn neutral_halved_anger_doubled() {
    let mut ds = random_windowed(1, 110, 3);
    for (i, s) in ds.samples.iter_mut().enumerate() {
        s.labels[E] = if i < 100 { 0.0 } else { 1.0 };
    }
    let (out, _) = balance_expression(&ds, 0).unwrap();
    let c = counts_by(&out, |l| l[E] as usize);
    assert_eq!(c[&0], 50);
    assert_eq!(c[&1], 20);

    ds.samples.truncate(1);
    ds.samples[0].labels[E] = 0.0;
    let (out, _) = balance_expression(&ds, 0).unwrap();
    assert_eq!(out.len(), 1);
}

#[test]
fn seeds_change_survivors_not_counts() {
    let ds = random_windowed(9, 400, 6);
    let (a, _) = balance_expression(&ds, 1).unwrap();
    let (b, _) = balance_expression(&ds, 1).unwrap();
    let (c, _) = balance_expression(&ds, 2).unwrap();
    assert_eq!(a.samples, b.samples);
    assert_eq!(a.len(), c.len());
    assert_ne!(a.samples, c.samples);
}

#[test]
fn grid_rejects_bad_regions() {
    assert!(matches!(VaGrid::new(vec![64]), Err(Error::Parameter(_))));
    assert!(VaGrid::new(vec![0, 63]).is_ok());
}
