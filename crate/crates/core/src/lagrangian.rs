//! The mod-p Lagrangian operator, its equilibrium constants `c_n`, and the
//! two equilibrium states `E^+` (even ranks) and `E^-` (odd ranks).
//!
//! `M_L` is the birth-death chain that moves rank `r` down with probability
//! `1 - p^-r` and up with probability `p^-r`. It is parity reversing, so
//! `M_L^2` splits into two chains and every density converges under even
//! powers to `(1 - rho) E^+ + rho E^-`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::distribution::{l1_distance, BandedOperator, Density, Side};
use crate::error::{Error, Result};
use crate::scalar::{Scalar, TOL_TAIL};

pub const DEFAULT_TRUNCATION: usize = 64;
pub const DEFAULT_TAIL_TERMS: usize = 200;
pub const DEFAULT_TOL_STOP: f64 = 1e-10;
pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// A rational prime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct Prime(u64);

impl Prime {
    pub fn new(p: u64) -> Result<Self> {
        let is_prime = p >= 2 && (2..).take_while(|d| d * d <= p).all(|d| p % d != 0);
        if is_prime {
            Ok(Prime(p))
        } else {
            Err(Error::InvalidPrime(p))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

impl<'de> Deserialize<'de> for Prime {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Prime::new(u64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<u64> for Prime {
    type Error = Error;

    fn try_from(p: u64) -> Result<Self> {
        Prime::new(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianParams {
    pub p: Prime,
    pub truncation: usize,
    pub tail_terms: usize,
}

impl LagrangianParams {
    pub fn new(p: u64, truncation: usize, tail_terms: usize) -> Result<Self> {
        let p = Prime::new(p)?;
        if truncation < 2 {
            return Err(Error::InvalidParams(format!("truncation {truncation} < 2")));
        }
        if tail_terms < 50 {
            return Err(Error::InvalidParams(format!("tail_terms {tail_terms} < 50")));
        }
        Ok(LagrangianParams { p, truncation, tail_terms })
    }

    /// `N = 64`, `J = 200`.
    pub fn with_defaults(p: u64) -> Result<Self> {
        LagrangianParams::new(p, DEFAULT_TRUNCATION, DEFAULT_TAIL_TERMS)
    }
}

/// Column that receives mass aimed at `s`: `s` itself when in range, else the
/// largest in-range column of the same parity.
pub(crate) fn fold_column(s: usize, truncation: usize) -> usize {
    if s < truncation {
        s
    } else if (truncation - 1) % 2 == s % 2 {
        truncation - 1
    } else {
        truncation - 2
    }
}

/// `M_L` truncated at `truncation` ranks in any scalar backend.
pub fn lagrangian_operator<T: Scalar>(p: Prime, truncation: usize) -> BandedOperator<T> {
    let rows = (0..truncation)
        .map(|r| {
            let up = T::inv_pow(p.get(), r as u32);
            let mut row = Vec::with_capacity(2);
            if r >= 1 {
                row.push((r - 1, T::one() - up.clone()));
            }
            row.push((fold_column(r + 1, truncation), up));
            row
        })
        .collect();
    BandedOperator::from_rows(truncation, rows, Some(p.get()))
        .expect("Lagrangian rows are stochastic by construction")
}

pub fn build_lagrangian(params: &LagrangianParams) -> BandedOperator {
    lagrangian_operator(params.p, params.truncation)
}

/// `prod_{j=1}^{J} (1 + p^-j)^-1` and a bound on its relative truncation error,
/// `exp(sum_{j>J} p^-j) - 1`.
pub fn product_prefactor(p: Prime, tail_terms: usize) -> (f64, f64) {
    let pf = p.get() as f64;
    let value = (1..=tail_terms).fold(1.0, |acc, j| acc / (1.0 + pf.powi(-(j as i32))));
    let remainder = (pf.powi(-(tail_terms as i32)) / (pf - 1.0)).exp_m1();
    (value, remainder)
}

/// `c_0 .. c_{N-1}`.
pub fn c_constants(params: &LagrangianParams) -> Vec<f64> {
    let pf = params.p.get() as f64;
    let (c0, _) = product_prefactor(params.p, params.tail_terms);
    let mut c = Vec::with_capacity(params.truncation);
    c.push(c0);
    for n in 1..params.truncation {
        let prev = c[n - 1];
        c.push(prev * pf / (pf.powi(n as i32) - 1.0));
    }
    c
}

/// `c_n / c_0 = prod_{j=1}^{n} p / (p^j - 1)` exactly, for `n < truncation`.
pub fn c_ratios_exact(p: Prime, truncation: usize) -> Vec<BigRational> {
    let pb = BigInt::from(p.get());
    let mut out = Vec::with_capacity(truncation);
    let mut acc = BigRational::one();
    let mut pj = BigInt::one();
    out.push(acc.clone());
    for _ in 1..truncation {
        pj *= &pb;
        acc = acc * BigRational::new(pb.clone(), &pj - BigInt::one());
        out.push(acc.clone());
    }
    out
}

/// `E^+` and `E^-` with the common prefactor dropped (exact backend).
pub fn equilibrium_vectors_exact(p: Prime, truncation: usize) -> (Vec<BigRational>, Vec<BigRational>) {
    let c = c_ratios_exact(p, truncation);
    let zero = || BigRational::from_integer(BigInt::from(0));
    let plus = c.iter().enumerate().map(|(n, v)| if n % 2 == 0 { v.clone() } else { zero() }).collect();
    let minus = c.iter().enumerate().map(|(n, v)| if n % 2 == 1 { v.clone() } else { zero() }).collect();
    (plus, minus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPair {
    pub e_plus: Density,
    pub e_minus: Density,
    pub c: Vec<f64>,
}

impl EquilibriumPair {
    pub fn state(&self, side: Side) -> &Density {
        match side {
            Side::Even => &self.e_plus,
            Side::Odd => &self.e_minus,
        }
    }

    /// `a E^+ + (1 - a) E^-`.
    pub fn blend(&self, weight_plus: f64) -> Result<Density> {
        Density::mix(&[(weight_plus, &self.e_plus), (1.0 - weight_plus, &self.e_minus)])
    }
}

pub fn equilibrium(params: &LagrangianParams) -> Result<EquilibriumPair> {
    let c = c_constants(params);
    let split = |side: Side| -> Result<Density> {
        let v: Vec<f64> = c
            .iter()
            .enumerate()
            .map(|(n, x)| if side.contains(n) { *x } else { 0.0 })
            .collect();
        let total: f64 = v.iter().sum();
        if (total - 1.0).abs() > TOL_TAIL {
            return Err(Error::InvalidParams(format!(
                "truncation {} leaves {side:?} equilibrium mass {total}",
                params.truncation
            )));
        }
        Ok(Density::from_vec_unchecked(v))
    };
    Ok(EquilibriumPair { e_plus: split(Side::Even)?, e_minus: split(Side::Odd)?, c })
}

/// Iterates `f -> M^2 f` until successive even iterates differ by less than
/// `tol_stop`. Returns `(M^{2k} f, k)`.
pub fn iterate_limit(
    op: &BandedOperator,
    f: &Density,
    max_steps: usize,
    tol_stop: f64,
) -> Result<(Density, usize)> {
    let square = op.power(2);
    let mut cur = f.clone();
    let mut last_change = f64::INFINITY;
    for k in 0..max_steps {
        let next = square.apply(&cur)?;
        last_change = l1_distance(&next, &cur)?;
        if last_change < tol_stop {
            return Ok((cur, k));
        }
        cur = next;
    }
    Err(Error::NoConvergence { steps: max_steps, last_change })
}

/// Limit of `M_L^{2k} f` (`Even`) or `M_L^{2k+1} f` (`Odd`).
pub fn predicted_limit(f: &Density, power_parity: Side, pair: &EquilibriumPair) -> Result<Density> {
    let rho = f.rho();
    match power_parity {
        Side::Even => pair.blend(1.0 - rho),
        Side::Odd => pair.blend(rho),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{make_density, ParityClass};
    use crate::scalar::TOL_NORM;
    use num_traits::Zero;
    use proptest::prelude::*;

    fn params(p: u64) -> LagrangianParams {
        LagrangianParams::with_defaults(p).unwrap()
    }

    #[test]
    fn primes() {
        assert!(Prime::new(2).is_ok());
        assert!(Prime::new(97).is_ok());
        for bad in [0, 1, 4, 9, 91] {
            assert_eq!(Prime::new(bad), Err(Error::InvalidPrime(bad)));
        }
        assert!(LagrangianParams::new(2, 1, 200).is_err());
        assert!(LagrangianParams::new(2, 8, 49).is_err());
    }

    #[test]
    fn operator_entries() {
        let m = build_lagrangian(&params(2));
        assert_eq!(m.entry(0, 1), 1.0);
        assert_eq!(m.entry(2, 1), 0.75);
        assert_eq!(m.entry(2, 3), 0.25);
        let m3 = build_lagrangian(&params(3));
        assert!((m3.entry(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((m3.entry(1, 2) - 1.0 / 3.0).abs() < 1e-15);
        // boundary fold
        let n = 64;
        assert_eq!(m.entry(n - 1, n - 2), 1.0);
        assert_eq!(m.classify_parity(), ParityClass::Reversing);
        assert_eq!(m.power(2).classify_parity(), ParityClass::Preserving);
        assert!(m.max_row_error() <= TOL_NORM);
    }

    #[test]
    fn apply_examples() {
        let m = build_lagrangian(&params(2));
        let d0 = Density::point_mass(0, 64).unwrap();
        assert_eq!(m.apply(&d0).unwrap(), Density::point_mass(1, 64).unwrap());
        let d1 = Density::point_mass(1, 64).unwrap();
        let got = m.apply(&d1).unwrap();
        assert_eq!(&got.values()[..4], &[0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn square_row_one_matches_formula() {
        // p^{1-r} + p^{-r} - p^{1-2r} - p^{-1-2r} at r = 1, p = 2
        let formula = 1.0 + 0.5 - 0.5 - 0.125;
        let sq = build_lagrangian(&params(2)).power(2);
        assert!((sq.entry(1, 1) - formula).abs() < 1e-15);
        assert!((sq.entry(1, 1) - 0.875).abs() < 1e-15);
    }

    #[test]
    fn constants_match_independent_product() {
        // Euler: prod (1 + q^j)^-1 = prod (1 - q^{2j-1}), q = 1/p.
        for p in [2u64, 3, 5] {
            let q = 1.0 / p as f64;
            let euler: f64 = (1..=200).map(|j| 1.0 - q.powi(2 * j - 1)).product();
            let c = c_constants(&params(p));
            assert!((c[0] - euler).abs() < 1e-15, "p={p}: {} vs {euler}", c[0]);
            assert!((c[1] / c[0] - p as f64 / (p as f64 - 1.0)).abs() < 1e-14);
        }
        let c = c_constants(&params(2));
        assert!((c[0] - 0.41942).abs() < 5e-6);
        assert!((c[1] - 2.0 * c[0]).abs() < 1e-15);
        assert!((c[2] - c[1] * 2.0 / 3.0).abs() < 1e-15);
        assert!((c[2] - 0.55923).abs() < 5e-6);
        // positive and eventually strictly decreasing
        assert!(c.iter().all(|&x| x >= 0.0));
        assert!(c[2..40].windows(2).all(|w| w[1] < w[0]));
        let (_, remainder) = product_prefactor(Prime::new(2).unwrap(), 200);
        assert!(remainder < 1e-30);
    }

    #[test]
    fn exact_ratio_identity() {
        let p = Prime::new(3).unwrap();
        let c = c_ratios_exact(p, 12);
        let mut pn = BigInt::one();
        for n in 0..11 {
            pn *= 3;
            let expected = BigRational::new(BigInt::from(3), &pn - BigInt::one());
            assert_eq!(&c[n + 1] / &c[n], expected);
        }
    }

    #[test]
    fn exact_fixed_point_identity() {
        for p in [2u64, 3, 5] {
            let prime = Prime::new(p).unwrap();
            for n in [6usize, 11, 16] {
                let m = lagrangian_operator::<BigRational>(prime, n);
                let (plus, minus) = equilibrium_vectors_exact(prime, n);
                let image = m.apply_vec(&plus).unwrap();
                for s in 0..n - 2 {
                    assert_eq!(image[s], minus[s], "p={p} N={n} s={s}");
                }
                let image = m.apply_vec(&minus).unwrap();
                for s in 0..n - 2 {
                    assert_eq!(image[s], plus[s], "p={p} N={n} s={s}");
                }
                assert!(m.apply_vec(&plus).unwrap().iter().step_by(2).all(Zero::is_zero));
            }
        }
    }

    #[test]
    fn equilibrium_pair() {
        for p in [2u64, 3, 5] {
            let pair = equilibrium(&params(p)).unwrap();
            assert!((pair.e_plus.total() - 1.0).abs() < TOL_TAIL);
            assert!((pair.e_minus.total() - 1.0).abs() < TOL_TAIL);
            assert_eq!(pair.e_plus.get(1), 0.0);
            assert!(pair.e_minus.values().iter().step_by(2).all(|&v| v == 0.0));
            let m = build_lagrangian(&params(p));
            let image = m.apply(&pair.e_plus).unwrap();
            assert!(l1_distance(&image, &pair.e_minus).unwrap() < TOL_TAIL);
            let twice = m.apply(&image).unwrap();
            assert!(l1_distance(&twice, &pair.e_plus).unwrap() < 2.0 * TOL_TAIL);
        }
        assert!(equilibrium(&LagrangianParams::new(2, 4, 200).unwrap()).is_err());
        assert!((equilibrium(&params(2)).unwrap().e_plus.get(2) - 0.55923).abs() < 5e-6);
    }

    #[test]
    fn iterate_from_fixed_point_and_point_mass() {
        let pr = params(2);
        let m = build_lagrangian(&pr);
        let pair = equilibrium(&pr).unwrap();
        let (lim, steps) = iterate_limit(&m, &pair.e_plus, DEFAULT_MAX_STEPS, DEFAULT_TOL_STOP).unwrap();
        assert_eq!(steps, 0);
        assert_eq!(lim, pair.e_plus);

        let d0 = Density::point_mass(0, 64).unwrap();
        let (lim, steps) = iterate_limit(&m, &d0, DEFAULT_MAX_STEPS, DEFAULT_TOL_STOP).unwrap();
        assert!(steps <= 60, "{steps}");
        assert!(l1_distance(&lim, &pair.e_plus).unwrap() < 1e-8);

        assert!(matches!(
            iterate_limit(&m, &d0, 2, 1e-300),
            Err(Error::NoConvergence { steps: 2, .. })
        ));
    }

    #[test]
    fn half_parity_start_converges_to_even_blend() {
        let pr = params(2);
        let m = build_lagrangian(&pr);
        let pair = equilibrium(&pr).unwrap();
        let f = make_density(&[0.3, 0.5, 0.2], 64).unwrap();
        assert_eq!(f.rho(), 0.5);
        let target = pair.blend(0.5).unwrap();
        for k in [40usize, 41] {
            let fk = m.apply_power(&f, k).unwrap();
            assert!(l1_distance(&fk, &target).unwrap() < 1e-8);
        }
    }

    #[test]
    fn predicted_limit_examples() {
        let pair = equilibrium(&params(2)).unwrap();
        let d0 = Density::point_mass(0, 64).unwrap();
        let d1 = Density::point_mass(1, 64).unwrap();
        assert_eq!(predicted_limit(&d0, Side::Even, &pair).unwrap(), pair.e_plus);
        assert_eq!(predicted_limit(&d1, Side::Even, &pair).unwrap(), pair.e_minus);
        let f = make_density(&[0.25, 0.75], 64).unwrap();
        let got = predicted_limit(&f, Side::Odd, &pair).unwrap();
        let want = pair.blend(0.75).unwrap();
        assert!(l1_distance(&got, &want).unwrap() < 1e-15);
    }

    #[test]
    fn monotone_convergence_diagnostic() {
        let pr = params(2);
        let sq = build_lagrangian(&pr).power(2);
        let pair = equilibrium(&pr).unwrap();
        for start in [vec![1.0], vec![0.0, 0.0, 0.0, 1.0], vec![0.1, 0.2, 0.3, 0.4]] {
            let mut f = make_density(&start, 64).unwrap();
            let target = predicted_limit(&f, Side::Even, &pair).unwrap();
            let mut prev = l1_distance(&f, &target).unwrap();
            for _ in 0..40 {
                f = sq.apply(&f).unwrap();
                let d = l1_distance(&f, &target).unwrap();
                assert!(d <= prev + 1e-14, "{d} > {prev}");
                prev = d;
            }
        }
    }

    fn arb_density(n: usize) -> impl Strategy<Value = Density> {
        prop::collection::vec(0.0f64..1.0, n).prop_filter_map("zero mass", move |raw| {
            let s: f64 = raw.iter().sum();
            (s > 1e-6).then(|| make_density(&raw.iter().map(|x| x / s).collect::<Vec<_>>(), 64).unwrap())
        })
    }

    proptest! {
        #[test]
        fn parity_mass_swaps_under_lagrangian(f in arb_density(20), p in prop::sample::select(vec![2u64, 3, 5])) {
            let m = build_lagrangian(&params(p));
            let mf = m.apply(&f).unwrap();
            prop_assert!((mf.rho() - (1.0 - f.rho())).abs() < TOL_NORM);
            let sq = m.power(2);
            prop_assert!((sq.apply(&f).unwrap().rho() - f.rho()).abs() < TOL_NORM);
            // M o pi^+ = pi^- o M
            let lhs = m.apply_vec(&f.project(Side::Even)).unwrap();
            let rhs = mf.project(Side::Odd);
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).abs() < TOL_NORM);
            }
        }
    }
}
