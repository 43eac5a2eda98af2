//! Truncated rank densities and banded Markov operators.
//!
//! A [`Density`] is a probability vector on ranks `0..N`. A
//! [`BandedOperator`] is a row-stochastic matrix `[m_{r,s}]` acting on the
//! right: `(M f)(s) = sum_r m_{r,s} f(r)`. Both are immutable after
//! construction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Scalar, TOL_NORM};

/// Parity half of the rank lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Even,
    Odd,
}

impl Side {
    pub fn of(n: usize) -> Side {
        if n % 2 == 0 {
            Side::Even
        } else {
            Side::Odd
        }
    }

    pub fn flip(self) -> Side {
        match self {
            Side::Even => Side::Odd,
            Side::Odd => Side::Even,
        }
    }

    pub fn contains(self, n: usize) -> bool {
        Side::of(n) == self
    }
}

/// Zero-pattern class of an operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParityClass {
    Preserving,
    Reversing,
    Neither,
}

fn sum<T: Scalar>(values: &[T]) -> T {
    values.iter().cloned().fold(T::zero(), |acc, v| acc + v)
}

fn check_normalized<T: Scalar>(total: &T) -> Result<()> {
    if total.near(&T::one(), TOL_NORM) {
        Ok(())
    } else {
        Err(Error::NotNormalized { sum: total.to_f64() })
    }
}

/// A probability distribution on ranks `0..N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density<T = f64> {
    values: Vec<T>,
}

impl<T: Scalar> Density<T> {
    /// Zero-pads `raw` to `cutoff` entries and validates it.
    pub fn new(mut raw: Vec<T>, cutoff: usize) -> Result<Self> {
        if raw.len() > cutoff {
            return Err(Error::TooLong { len: raw.len(), cutoff });
        }
        if let Some((index, value)) = raw.iter().enumerate().find(|(_, v)| **v < T::zero()) {
            return Err(Error::NegativeEntry { index, value: value.to_f64() });
        }
        check_normalized(&sum(&raw))?;
        raw.resize(cutoff, T::zero());
        Ok(Density { values: raw })
    }

    /// Wraps a vector already known to be a density (up to rounding drift).
    pub(crate) fn from_vec_unchecked(values: Vec<T>) -> Self {
        debug_assert!(values.iter().all(|v| *v >= T::zero()));
        Density { values }
    }

    pub fn point_mass(rank: usize, cutoff: usize) -> Result<Self> {
        if rank >= cutoff {
            return Err(Error::TooLong { len: rank + 1, cutoff });
        }
        let mut values = vec![T::zero(); cutoff];
        values[rank] = T::one();
        Ok(Density { values })
    }

    /// Convex combination `sum_i w_i f_i`; weights must be non-negative and sum to 1.
    pub fn mix(parts: &[(T, &Density<T>)]) -> Result<Self> {
        let Some((_, first)) = parts.first() else {
            return Err(Error::InvalidParams("empty mixture".into()));
        };
        let n = first.truncation();
        let mut values = vec![T::zero(); n];
        let mut total_weight = T::zero();
        for (w, f) in parts {
            if f.truncation() != n {
                return Err(Error::TruncationMismatch { left: n, right: f.truncation() });
            }
            if *w < T::zero() {
                return Err(Error::NegativeEntry { index: 0, value: w.to_f64() });
            }
            total_weight = total_weight + w.clone();
            for (acc, v) in values.iter_mut().zip(&f.values) {
                *acc = acc.clone() + w.clone() * v.clone();
            }
        }
        check_normalized(&total_weight)?;
        Ok(Density { values })
    }

    pub fn truncation(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, n: usize) -> T {
        self.values.get(n).cloned().unwrap_or_else(T::zero)
    }

    pub fn total(&self) -> T {
        sum(&self.values)
    }

    /// Mass on ranks of the given parity.
    pub fn mass(&self, side: Side) -> T {
        self.values
            .iter()
            .enumerate()
            .filter(|(n, _)| side.contains(*n))
            .fold(T::zero(), |acc, (_, v)| acc + v.clone())
    }

    /// Parity `rho(f)`: the mass on odd ranks.
    pub fn rho(&self) -> T {
        self.mass(Side::Odd)
    }

    /// `pi^+ f` or `pi^- f`: keeps one parity, zeroes the other, no renormalization.
    pub fn project(&self, side: Side) -> Vec<T> {
        self.values
            .iter()
            .enumerate()
            .map(|(n, v)| if side.contains(n) { v.clone() } else { T::zero() })
            .collect()
    }

    /// Expected rank `sum_n n f(n)`.
    pub fn mean(&self) -> T {
        self.values
            .iter()
            .enumerate()
            .fold(T::zero(), |acc, (n, v)| acc + T::from_u64(n as u64) * v.clone())
    }

    /// Largest rank carrying positive mass.
    pub fn max_support(&self) -> Option<usize> {
        self.values.iter().rposition(|v| *v > T::zero())
    }
}

impl Density<f64> {
    /// Samples a rank by inverse CDF from a uniform draw in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (n, v) in self.values.iter().enumerate() {
            acc += v;
            if u < acc {
                return n;
            }
        }
        self.max_support().unwrap_or(0)
    }

    /// Empirical density from a histogram of counts.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::NotNormalized { sum: 0.0 });
        }
        let values = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Ok(Density { values })
    }
}

/// `make_density` for the floating-point backend.
pub fn make_density(raw: &[f64], cutoff: usize) -> Result<Density> {
    Density::new(raw.to_vec(), cutoff)
}

/// Sum of absolute differences of two equal-length vectors.
pub fn l1_vec<T: Scalar>(f: &[T], g: &[T]) -> Result<T> {
    if f.len() != g.len() {
        return Err(Error::TruncationMismatch { left: f.len(), right: g.len() });
    }
    Ok(f
        .iter()
        .zip(g)
        .fold(T::zero(), |acc, (a, b)| acc + (a.clone() - b.clone()).abs()))
}

/// `||f - g||_1`.
pub fn l1_distance<T: Scalar>(f: &Density<T>, g: &Density<T>) -> Result<T> {
    l1_vec(f.values(), g.values())
}

pub fn rho_parity<T: Scalar>(f: &Density<T>) -> T {
    f.rho()
}

pub fn project_parity<T: Scalar>(f: &Density<T>, side: Side) -> Vec<T> {
    f.project(side)
}

#[derive(Debug, Clone, PartialEq)]
struct BandRow<T> {
    start: usize,
    entries: Vec<T>,
}

impl<T: Scalar> BandRow<T> {
    fn from_dense(dense: Vec<T>) -> Self {
        let first = dense.iter().position(|v| !v.is_zero());
        let Some(start) = first else {
            return BandRow { start: 0, entries: Vec::new() };
        };
        let end = dense.iter().rposition(|v| !v.is_zero()).unwrap() + 1;
        BandRow { start, entries: dense[start..end].to_vec() }
    }

    fn iter(&self) -> impl Iterator<Item = (usize, &T)> {
        self.entries.iter().enumerate().map(move |(i, v)| (self.start + i, v))
    }
}

/// A row-stochastic operator stored as one contiguous band per row.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedOperator<T = f64> {
    truncation: usize,
    prime: Option<u64>,
    rows: Vec<BandRow<T>>,
}

impl<T: Scalar> BandedOperator<T> {
    /// Builds an operator from sparse rows `(s, m_{r,s})`; row `r` is `rows[r]`.
    pub fn from_rows(truncation: usize, rows: Vec<Vec<(usize, T)>>, prime: Option<u64>) -> Result<Self> {
        if rows.len() != truncation {
            return Err(Error::TruncationMismatch { left: truncation, right: rows.len() });
        }
        let mut banded = Vec::with_capacity(truncation);
        for (r, row) in rows.into_iter().enumerate() {
            let mut dense = vec![T::zero(); truncation];
            for (s, v) in row {
                if s >= truncation {
                    return Err(Error::InvalidOperator { row: r, reason: format!("column {s} out of range") });
                }
                if v < T::zero() {
                    return Err(Error::InvalidOperator { row: r, reason: format!("negative entry at column {s}") });
                }
                dense[s] = dense[s].clone() + v;
            }
            let total = sum(&dense);
            if !total.near(&T::one(), TOL_NORM) {
                return Err(Error::InvalidOperator {
                    row: r,
                    reason: format!("row sums to {}", total.to_f64()),
                });
            }
            banded.push(BandRow::from_dense(dense));
        }
        Ok(BandedOperator { truncation, prime, rows: banded })
    }

    pub fn identity(truncation: usize) -> Self {
        let rows = (0..truncation)
            .map(|r| BandRow { start: r, entries: vec![T::one()] })
            .collect();
        BandedOperator { truncation, prime: None, rows }
    }

    pub fn truncation(&self) -> usize {
        self.truncation
    }

    pub fn prime(&self) -> Option<u64> {
        self.prime
    }

    pub fn entry(&self, r: usize, s: usize) -> T {
        let row = &self.rows[r];
        if s < row.start {
            return T::zero();
        }
        row.entries.get(s - row.start).cloned().unwrap_or_else(T::zero)
    }

    /// Non-zero band entries `(s, m_{r,s})` of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, &T)> {
        self.rows[r].iter().filter(|(_, v)| !v.is_zero())
    }

    /// Largest `|r - s|` over non-zero entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.truncation)
            .flat_map(|r| self.row(r).map(move |(s, _)| r.abs_diff(s)))
            .max()
            .unwrap_or(0)
    }

    pub fn apply_vec(&self, f: &[T]) -> Result<Vec<T>> {
        if f.len() != self.truncation {
            return Err(Error::TruncationMismatch { left: self.truncation, right: f.len() });
        }
        let mut out = vec![T::zero(); self.truncation];
        for (r, fr) in f.iter().enumerate() {
            if fr.is_zero() {
                continue;
            }
            for (s, m) in self.rows[r].iter() {
                out[s] = out[s].clone() + m.clone() * fr.clone();
            }
        }
        Ok(out)
    }

    /// `M(f)`; mass drift is bounded by the row-sum tolerance, no renormalization.
    pub fn apply(&self, f: &Density<T>) -> Result<Density<T>> {
        Ok(Density::from_vec_unchecked(self.apply_vec(f.values())?))
    }

    /// `M^k(f)` by repeated application.
    pub fn apply_power(&self, f: &Density<T>, k: usize) -> Result<Density<T>> {
        let mut cur = f.clone();
        for _ in 0..k {
            cur = self.apply(&cur)?;
        }
        Ok(cur)
    }

    /// Matrix product `self * other`: first `self`, then `other`.
    pub fn compose(&self, other: &BandedOperator<T>) -> Result<Self> {
        if self.truncation != other.truncation {
            return Err(Error::TruncationMismatch { left: self.truncation, right: other.truncation });
        }
        let n = self.truncation;
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut dense = vec![T::zero(); n];
                for (t, a) in row.iter() {
                    for (s, b) in other.rows[t].iter() {
                        dense[s] = dense[s].clone() + a.clone() * b.clone();
                    }
                }
                BandRow::from_dense(dense)
            })
            .collect();
        let prime = if self.prime == other.prime { self.prime } else { None };
        Ok(BandedOperator { truncation: n, prime, rows })
    }

    /// `M^k` by binary exponentiation; `M^0` is the identity.
    pub fn power(&self, k: u32) -> Self {
        let mut result = BandedOperator::identity(self.truncation);
        result.prime = self.prime;
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = result.compose(&base).expect("same truncation");
            }
            e >>= 1;
            if e > 0 {
                base = base.compose(&base).expect("same truncation");
            }
        }
        result
    }

    /// Exact zero-pattern parity test.
    pub fn classify_parity(&self) -> ParityClass {
        let mut same = false;
        let mut cross = false;
        for r in 0..self.truncation {
            for (s, _) in self.row(r) {
                if r % 2 == s % 2 {
                    same = true;
                } else {
                    cross = true;
                }
            }
        }
        match (same, cross) {
            (_, false) => ParityClass::Preserving,
            (false, true) => ParityClass::Reversing,
            (true, true) => ParityClass::Neither,
        }
    }

    /// Convex combination of operators with a shared truncation.
    pub fn mix(parts: &[(T, &BandedOperator<T>)]) -> Result<Self> {
        let Some((_, first)) = parts.first() else {
            return Err(Error::InvalidParams("empty mixture".into()));
        };
        let n = first.truncation;
        let rows = (0..n)
            .map(|r| {
                let mut row: BTreeMap<usize, T> = BTreeMap::new();
                for (w, op) in parts {
                    for (s, v) in op.row(r) {
                        let e = row.entry(s).or_insert_with(T::zero);
                        *e = e.clone() + w.clone() * v.clone();
                    }
                }
                row.into_iter().collect()
            })
            .collect();
        for (_, op) in parts {
            if op.truncation != n {
                return Err(Error::TruncationMismatch { left: n, right: op.truncation });
            }
        }
        BandedOperator::from_rows(n, rows, None)
    }

    /// Worst row-sum deviation from 1.
    pub fn max_row_error(&self) -> f64 {
        self.rows
            .iter()
            .map(|row| (sum(&row.entries) - T::one()).abs().to_f64())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise difference over rows `0..=last_row`.
    pub fn max_entry_difference(&self, other: &BandedOperator<T>, last_row: usize) -> Result<f64> {
        if self.truncation != other.truncation {
            return Err(Error::TruncationMismatch { left: self.truncation, right: other.truncation });
        }
        let mut worst = 0.0f64;
        for r in 0..=last_row.min(self.truncation - 1) {
            for s in 0..self.truncation {
                let d = (self.entry(r, s) - other.entry(r, s)).abs().to_f64();
                worst = worst.max(d);
            }
        }
        Ok(worst)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DensityRepr {
    #[serde(rename = "N")]
    n: usize,
    values: Vec<f64>,
}

impl Serialize for Density<f64> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        DensityRepr { n: self.truncation(), values: self.values.clone() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Density<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = DensityRepr::deserialize(deserializer)?;
        Density::new(repr.values, repr.n).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RowRepr {
    r: usize,
    entries: BTreeMap<usize, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorRepr {
    #[serde(rename = "N")]
    n: usize,
    rows: Vec<RowRepr>,
}

impl Serialize for BandedOperator<f64> {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.truncation)
            .map(|r| RowRepr { r, entries: self.row(r).map(|(s, v)| (s, *v)).collect() })
            .collect();
        OperatorRepr { n: self.truncation, rows }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BandedOperator<f64> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = OperatorRepr::deserialize(deserializer)?;
        let mut rows = vec![Vec::new(); repr.n];
        for row in repr.rows {
            let slot = rows
                .get_mut(row.r)
                .ok_or_else(|| serde::de::Error::custom(format!("row {} out of range", row.r)))?;
            slot.extend(row.entries);
        }
        BandedOperator::from_rows(repr.n, rows, None).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shift_up(n: usize) -> BandedOperator {
        // r -> r+1, last row folds back to r-1
        let rows = (0..n)
            .map(|r| if r + 1 < n { vec![(r + 1, 1.0)] } else { vec![(r - 1, 1.0)] })
            .collect();
        BandedOperator::from_rows(n, rows, None).unwrap()
    }

    #[test]
    fn make_density_examples() {
        let d = make_density(&[1.0], 4).unwrap();
        assert_eq!(d.values(), &[1.0, 0.0, 0.0, 0.0]);
        let half = make_density(&[0.5, 0.5], 4).unwrap();
        assert_eq!(half.rho(), 0.5);
        assert!(matches!(make_density(&[0.3, 0.3], 4), Err(Error::NotNormalized { .. })));
        assert!(matches!(
            make_density(&[1.2, -0.2], 4),
            Err(Error::NegativeEntry { index: 1, .. })
        ));
        assert!(matches!(make_density(&[0.5, 0.5], 1), Err(Error::TooLong { .. })));
    }

    #[test]
    fn l1_examples() {
        let a = Density::<f64>::point_mass(0, 5).unwrap();
        let b = Density::<f64>::point_mass(1, 5).unwrap();
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        let c = Density::<f64>::point_mass(1, 6).unwrap();
        assert!(matches!(l1_distance(&a, &c), Err(Error::TruncationMismatch { .. })));
    }

    #[test]
    fn parity_projection_examples() {
        let d0 = Density::<f64>::point_mass(0, 4).unwrap();
        let d1 = Density::<f64>::point_mass(1, 4).unwrap();
        assert_eq!(rho_parity(&d0), 0.0);
        assert_eq!(rho_parity(&d1), 1.0);
        assert_eq!(project_parity(&d0, Side::Even), d0.values());
        assert_eq!(project_parity(&d0, Side::Odd), vec![0.0; 4]);
        let half = make_density(&[0.5, 0.5], 2).unwrap();
        assert_eq!(project_parity(&half, Side::Even), vec![0.5, 0.0]);
    }

    #[test]
    fn identity_and_classification() {
        let id = BandedOperator::<f64>::identity(6);
        let f = make_density(&[0.2, 0.3, 0.5], 6).unwrap();
        assert_eq!(id.apply(&f).unwrap(), f);
        assert_eq!(id.classify_parity(), ParityClass::Preserving);
        let up = shift_up(6);
        assert_eq!(up.classify_parity(), ParityClass::Reversing);
        let lazy = BandedOperator::mix(&[(0.5, &id), (0.5, &up)]).unwrap();
        assert_eq!(lazy.classify_parity(), ParityClass::Neither);
        assert_eq!(up.power(0), BandedOperator::identity(6));
        assert_eq!(up.power(2).classify_parity(), ParityClass::Preserving);
    }

    #[test]
    fn rejects_bad_rows() {
        let rows = vec![vec![(0, 0.5)], vec![(1, 1.0)]];
        assert!(matches!(
            BandedOperator::from_rows(2, rows, None),
            Err(Error::InvalidOperator { row: 0, .. })
        ));
        let rows = vec![vec![(0, 1.5), (1, -0.5)], vec![(1, 1.0)]];
        assert!(BandedOperator::from_rows(2, rows, None).is_err());
    }

    #[test]
    fn json_shapes() {
        let d = make_density(&[0.25, 0.75], 3).unwrap();
        let js = serde_json::to_string(&d).unwrap();
        assert_eq!(js, r#"{"N":3,"values":[0.25,0.75,0.0]}"#);
        let back: Density = serde_json::from_str(&js).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<Density>(r#"{"N":2,"values":[0.3,0.3]}"#).is_err());

        let op = shift_up(3);
        let js = serde_json::to_string(&op).unwrap();
        assert_eq!(
            js,
            r#"{"N":3,"rows":[{"r":0,"entries":{"1":1.0}},{"r":1,"entries":{"2":1.0}},{"r":2,"entries":{"1":1.0}}]}"#
        );
        let back: BandedOperator = serde_json::from_str(&js).unwrap();
        assert_eq!(back, op);
    }

    fn arb_density(n: usize) -> impl Strategy<Value = Density> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", move |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| {
                let v: Vec<f64> = raw.iter().map(|x| x / s).collect();
                Density::from_vec_unchecked(v)
            })
        })
    }

    fn arb_operator(n: usize) -> impl Strategy<Value = BandedOperator> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), n).prop_map(move |raw| {
            let rows = raw
                .into_iter()
                .enumerate()
                .map(|(r, w)| {
                    let cols = [r.saturating_sub(1), r, (r + 1).min(n - 1)];
                    let s: f64 = w.iter().sum::<f64>() + 1e-9;
                    cols.iter().zip(&w).enumerate().map(|(i, (&c, x))| (c, x / s + if i == 1 { 1e-9 / s } else { 0.0 })).collect()
                })
                .collect();
            BandedOperator::from_rows(n, rows, None).unwrap()
        })
    }

    proptest! {
        #[test]
        fn projections_sum_to_identity(f in arb_density(9)) {
            let plus = f.project(Side::Even);
            let minus = f.project(Side::Odd);
            for n in 0..9 {
                prop_assert_eq!(plus[n] + minus[n], f.values()[n]);
            }
        }

        #[test]
        fn apply_preserves_mass_and_is_affine(
            op in arb_operator(8), f in arb_density(8), g in arb_density(8), a in 0.0f64..1.0
        ) {
            prop_assert!(op.max_row_error() <= TOL_NORM);
            let mf = op.apply(&f).unwrap();
            prop_assert!((mf.total() - 1.0).abs() < TOL_NORM);
            let mix = Density::mix(&[(a, &f), (1.0 - a, &g)]).unwrap();
            let lhs = op.apply(&mix).unwrap();
            let rhs = Density::mix(&[(a, &mf), (1.0 - a, &op.apply(&g).unwrap())]).unwrap();
            prop_assert!(l1_distance(&lhs, &rhs).unwrap() < TOL_NORM);
        }

        #[test]
        fn l1_is_symmetric(f in arb_density(7), g in arb_density(7)) {
            prop_assert_eq!(l1_distance(&f, &g).unwrap(), l1_distance(&g, &f).unwrap());
        }

        #[test]
        fn power_matches_repeated_application(op in arb_operator(6), f in arb_density(6), k in 0u32..6) {
            let a = op.power(k).apply(&f).unwrap();
            let b = op.apply_power(&f, k as usize).unwrap();
            prop_assert!(l1_distance(&a, &b).unwrap() < 1e-12);
            prop_assert!(op.power(k).max_row_error() < 1e-12);
            prop_assert!(op.power(k).bandwidth() <= k as usize * op.bandwidth());
        }
    }
}
