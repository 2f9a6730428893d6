//! Energy distance between empirical samples, used to judge how relevant a
//! certificate's data is to a contract's data.
//!
//! D(X, Y) = 2 E|X - Y| - E|X - X'| - E|Y - Y'| with Euclidean norm, every
//! expectation taken over all ordered pairs (i = j included), so the value is
//! exactly zero on identical multisets.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use crate::data::{Dataset, Value};
use crate::error::{Error, Result};

pub type Rows = Vec<Vec<f64>>;

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_pairwise(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in a {
        for y in b {
            total += euclidean(x, y);
        }
    }
    total / (a.len() as f64 * b.len() as f64)
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
}

fn cmp_samples(a: &[Vec<f64>], b: &[Vec<f64>]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| cmp_rows(x, y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
}

/// Energy distance between two row sets. Rows are put in canonical order and
/// the arguments in canonical order first, which makes the result exactly
/// symmetric and exactly permutation invariant.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(|x, y| cmp_rows(x, y));
    b.sort_by(|x, y| cmp_rows(x, y));
    if cmp_samples(&a, &b) == Ordering::Greater {
        std::mem::swap(&mut a, &mut b);
    }
    let d = 2.0 * mean_pairwise(&a, &b) - mean_pairwise(&a, &a) - mean_pairwise(&b, &b);
    d.max(0.0)
}

/// Numeric rows for two datasets with matching schemas. Text features are
/// one-hot expanded over the union of categories seen in either dataset.
pub fn numeric_rows(a: &Dataset, b: &Dataset) -> Result<(Rows, Rows)> {
    if !a.is_empty() && !b.is_empty() && a.schema != b.schema {
        return Err(Error::SchemaMismatch(format!(
            "cannot compare `{}` with `{}`: feature schemas differ",
            a.source_id, b.source_id
        )));
    }
    let mut vocab: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for p in a.points.iter().chain(&b.points) {
        for f in &p.features {
            if let Value::Text(s) = &f.value {
                vocab.entry(f.name.clone()).or_default().insert(s.clone());
            }
        }
    }
    let row = |p: &crate::data::DataPoint| {
        let mut out = Vec::new();
        for f in &p.features {
            match &f.value {
                Value::Number(x) => out.push(*x),
                Value::Vector(v) => out.extend_from_slice(v),
                Value::Text(s) => {
                    for cat in &vocab[&f.name] {
                        out.push(if cat == s { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        out
    };
    Ok((a.points.iter().map(row).collect(), b.points.iter().map(row).collect()))
}

/// Energy distance between two datasets on their raw numeric features.
pub fn relevance_distance(a: &Dataset, b: &Dataset) -> Result<f64> {
    let (x, y) = numeric_rows(a, b)?;
    Ok(energy_distance(&x, &y))
}

/// Standardize every column with the pooled mean and standard deviation of
/// both samples; constant columns are only centered.
pub fn zscore_pooled(a: &mut [Vec<f64>], b: &mut [Vec<f64>]) {
    let Some(width) = a.first().or(b.first()).map(Vec::len) else { return };
    let n = (a.len() + b.len()) as f64;
    for c in 0..width {
        let mean = a.iter().chain(b.iter()).map(|r| r[c]).sum::<f64>() / n;
        let var = a.iter().chain(b.iter()).map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in a.iter_mut().chain(b.iter_mut()) {
            r[c] -= mean;
            if sd > 0.0 {
                r[c] /= sd;
            }
        }
    }
}

/// Evenly strided subsample of at most `max` rows; deterministic.
pub fn strided(rows: Vec<Vec<f64>>, max: usize) -> Vec<Vec<f64>> {
    if rows.len() <= max || max == 0 {
        return rows;
    }
    let n = rows.len();
    (0..max).map(|k| rows[k * n / max].clone()).collect()
}

/// Energy distance on pooled z-scored features, each side capped at
/// `max_points` rows.
pub fn normalized_distance(a: &Dataset, b: &Dataset, max_points: usize) -> Result<f64> {
    let (x, y) = numeric_rows(a, b)?;
    let mut x = strided(x, max_points);
    let mut y = strided(y, max_points);
    zscore_pooled(&mut x, &mut y);
    Ok(energy_distance(&x, &y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DataPoint;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn ds(rows: &[Vec<f64>]) -> Dataset {
        Dataset::new("t", rows.iter().map(|r| DataPoint::from_numbers(r)).collect(), None).unwrap()
    }

    /// Independent oracle: the V-statistic written out with plain loops.
    fn brute_force(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
        let d = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let (n, m) = (x.len() as f64, y.len() as f64);
        let mut xy = 0.0;
        let mut xx = 0.0;
        let mut yy = 0.0;
        for a in x {
            for b in y {
                xy += d(a, b);
            }
            for b in x {
                xx += d(a, b);
            }
        }
        for a in y {
            for b in y {
                yy += d(a, b);
            }
        }
        2.0 * xy / (n * m) - xx / (n * n) - yy / (m * m)
    }

    #[test]
    fn point_masses_at_zero_and_one() {
        let expected = brute_force(&[vec![0.0]], &[vec![1.0]]);
        assert_eq!(expected, 2.0);
        assert_eq!(relevance_distance(&ds(&[vec![0.0]]), &ds(&[vec![1.0]])).unwrap(), expected);
    }

    #[test]
    fn identical_and_shuffled_datasets_are_at_zero() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64).sin(), (i as f64 * 0.3).cos()]).collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng_from_seed(3));
        assert_eq!(relevance_distance(&ds(&rows), &ds(&rows)).unwrap(), 0.0);
        assert_eq!(relevance_distance(&ds(&rows), &ds(&shuffled)).unwrap(), 0.0);
    }

    #[test]
    fn schema_mismatch_is_reported() {
        assert!(matches!(
            relevance_distance(&ds(&[vec![0.0]]), &ds(&[vec![0.0, 1.0]])),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn text_features_are_one_hot_expanded() {
        let p = |s: &str| DataPoint::new(vec![crate::data::Feature { name: "c".into(), value: Value::Text(s.into()) }]);
        let a = Dataset::new("a", vec![p("red")], None).unwrap();
        let b = Dataset::new("b", vec![p("blue")], None).unwrap();
        // one-hot rows (0,1) and (1,0): distance sqrt(2), energy 2 sqrt(2)
        let d = relevance_distance(&a, &b).unwrap();
        assert!((d - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn zscore_makes_scale_irrelevant() {
        let a = ds(&[vec![0.0], vec![1.0]]);
        let b = ds(&[vec![2.0], vec![3.0]]);
        let a10 = ds(&[vec![0.0], vec![10.0]]);
        let b10 = ds(&[vec![20.0], vec![30.0]]);
        let d1 = normalized_distance(&a, &b, 100).unwrap();
        let d2 = normalized_distance(&a10, &b10, 100).unwrap();
        assert!((d1 - d2).abs() < 1e-12);
    }

    fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, 2), 1..12)
    }

    proptest! {
        #[test]
        fn matches_brute_force_oracle(x in rows_strategy(), y in rows_strategy()) {
            let got = energy_distance(&x, &y);
            let want = brute_force(&x, &y).max(0.0);
            prop_assert!((got - want).abs() <= 1e-9 * (1.0 + want.abs()), "{} vs {}", got, want);
        }

        #[test]
        fn symmetric_and_non_negative(x in rows_strategy(), y in rows_strategy()) {
            let d = energy_distance(&x, &y);
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d.to_bits(), energy_distance(&y, &x).to_bits());
        }
    }
}
