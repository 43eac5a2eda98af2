//! Synthetic twist process.
//!
//! A seeded stream of prime sites with widths stands in for the primes of the
//! base field. Twisting at a site of width `i` first draws `t`, the dimension
//! of the localization of the current Selmer group, from the frequency table
//! below, then updates the rank:
//!
//! | width | t = 0 | t = 1 | t = 2 |
//! |-------|-------|-------|-------|
//! | 1 | `p^-r` | `1 - p^-r` | |
//! | 2 | `p^-2r` | `(p+1)(p^-r - p^-2r)` | `1 - (p+1)p^-r + p^(1-2r)` |
//!
//! Width 1: `t = 1` lowers the rank by one, `t = 0` raises it by one.
//! Width 2: `t = 2` lowers it by two, `t = 1` keeps it, and `t = 0` raises it
//! by two for `p - 1` of the `p(p - 1)` ramified characters in the fiber and
//! keeps it otherwise.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::distribution::{BandedOperator, Side};
use crate::error::{Error, Result};
use crate::exec::{substream, Execution};
use crate::lagrangian::{fold_column, Prime};
use crate::scalar::Scalar;

/// A synthetic prime with its norm and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrimeSite {
    pub id: u64,
    pub norm: f64,
    pub width: u8,
}

/// Width densities `(d_0, d_1, d_2)`, linear growth rate, and seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    pub densities: [f64; 3],
    pub growth_rate: f64,
    pub seed: u64,
}

impl StreamConfig {
    /// Frobenius-class proportions in `S_3`: elements of order 3 give width 0,
    /// transpositions width 1, the identity width 2.
    pub const S3_DENSITIES: [f64; 3] = [1.0 / 3.0, 1.0 / 2.0, 1.0 / 6.0];

    pub fn s3(growth_rate: f64, seed: u64) -> Self {
        StreamConfig { densities: Self::S3_DENSITIES, growth_rate, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.growth_rate > 0.0) || !self.growth_rate.is_finite() {
            return Err(Error::DegenerateConfig(format!("growth_rate {} must be positive", self.growth_rate)));
        }
        if self.densities.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::DegenerateConfig("width densities must be non-negative".into()));
        }
        let total: f64 = self.densities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::DegenerateConfig(format!("width densities sum to {total}")));
        }
        if self.densities[2] <= 0.0 {
            return Err(Error::DegenerateConfig("width-2 density must be positive".into()));
        }
        Ok(())
    }
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig::s3(1.0, 0)
    }
}

/// Sites with norm in `(1, bound)`: a Poisson stream of intensity
/// `growth_rate` per unit norm with i.i.d. widths. Sorted by norm; ids follow
/// the order.
pub fn synth_prime_stream(config: &StreamConfig, bound: f64) -> Result<Vec<PrimeSite>> {
    config.validate()?;
    let mut rng = substream(config.seed, 0);
    let gap = Exp::new(config.growth_rate).map_err(|e| Error::DegenerateConfig(e.to_string()))?;
    let [d0, d1, _] = config.densities;
    let mut sites = Vec::new();
    let mut norm = 1.0;
    loop {
        norm += gap.sample(&mut rng);
        if norm >= bound {
            break;
        }
        let u: f64 = rng.random();
        let width = if u < d0 {
            0
        } else if u < d0 + d1 {
            1
        } else {
            2
        };
        sites.push(PrimeSite { id: sites.len() as u64, norm, width });
    }
    Ok(sites)
}

/// Current rank with its parity tracked separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankWalkState {
    rank: usize,
    parity: Side,
}

impl RankWalkState {
    pub fn new(rank: usize) -> Self {
        RankWalkState { rank, parity: Side::of(rank) }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn parity(&self) -> Side {
        self.parity
    }

    fn moved(self, new_rank: usize, flips: bool) -> Self {
        let parity = if flips { self.parity.flip() } else { self.parity };
        debug_assert_eq!(parity, Side::of(new_rank));
        RankWalkState { rank: new_rank, parity }
    }
}

fn check_width(width: u8) -> Result<()> {
    if width == 1 || width == 2 {
        Ok(())
    } else {
        Err(Error::InvalidWidth(width))
    }
}

/// Distribution of `t` over `0..=width` at rank `rank`.
pub fn t_distribution<T: Scalar>(width: u8, rank: usize, p: Prime) -> Result<Vec<T>> {
    check_width(width)?;
    let r = rank.min(u32::MAX as usize / 2) as u32;
    let q = T::inv_pow(p.get(), r);
    let row = match width {
        1 => vec![q.clone(), T::one() - q],
        _ => {
            let pp = T::from_u64(p.get());
            let q2 = T::inv_pow(p.get(), 2 * r);
            let one_dim = (pp.clone() + T::one()) * (q.clone() - q2.clone());
            let two_dim = T::one() - (pp.clone() + T::one()) * q + pp * q2.clone();
            vec![q2, one_dim, two_dim]
        }
    };
    // f64 can leave -1e-17 where the exact value is 0
    Ok(row.into_iter().map(|v| if v < T::zero() { T::zero() } else { v }).collect())
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, q) in probs.iter().enumerate() {
        acc += q;
        if u < acc {
            return j;
        }
    }
    probs.iter().rposition(|q| *q > 0.0).unwrap_or(0)
}

/// Draws `t` from [`t_distribution`].
pub fn sample_t<R: Rng + ?Sized>(width: u8, rank: usize, p: Prime, rng: &mut R) -> Result<u8> {
    let probs = t_distribution::<f64>(width, rank, p)?;
    Ok(sample_index(&probs, rng) as u8)
}

/// Rank update after twisting at a site of the given width with localization
/// dimension `t`. For width 2 and `t = 0` a ramified character is drawn
/// uniformly from the `p(p - 1)` in the fiber.
pub fn twist_step<R: Rng + ?Sized>(
    state: RankWalkState,
    width: u8,
    t: u8,
    p: Prime,
    rng: &mut R,
) -> Result<RankWalkState> {
    check_width(width)?;
    let r = state.rank;
    if t > width || t as usize > r {
        return Err(Error::InvalidT { t, width, rank: r });
    }
    Ok(match (width, t) {
        (1, 1) => state.moved(r - 1, true),
        (1, _) => state.moved(r + 1, true),
        (_, 2) => state.moved(r - 2, false),
        (_, 1) => state.moved(r, false),
        _ => {
            let pp = p.get();
            let character = rng.random_range(0..pp * (pp - 1));
            if character < pp - 1 {
                state.moved(r + 2, false)
            } else {
                state.moved(r, false)
            }
        }
    })
}

/// Conditional law of the rank change given `(width, t)` as `(delta, prob)`.
fn step_outcomes<T: Scalar>(width: u8, t: u8, p: Prime) -> Vec<(i64, T)> {
    match (width, t) {
        (1, 1) => vec![(-1, T::one())],
        (1, _) => vec![(1, T::one())],
        (_, 2) => vec![(-2, T::one())],
        (_, 1) => vec![(0, T::one())],
        _ => {
            let up = T::inv_pow(p.get(), 1);
            vec![(2, up.clone()), (0, T::one() - up)]
        }
    }
}

/// One-step rank kernel for a width-`width` site: the `t` table composed with
/// the rank update. Mass beyond the truncation folds onto the largest rank of
/// the same parity.
pub fn exact_step_kernel<T: Scalar>(width: u8, p: Prime, truncation: usize) -> Result<BandedOperator<T>> {
    check_width(width)?;
    let mut rows = Vec::with_capacity(truncation);
    for r in 0..truncation {
        let mut row: Vec<(usize, T)> = Vec::new();
        for (t, pt) in t_distribution::<T>(width, r, p)?.into_iter().enumerate() {
            if pt.is_zero() {
                continue;
            }
            for (delta, pd) in step_outcomes::<T>(width, t as u8, p) {
                let s = fold_column((r as i64 + delta) as usize, truncation);
                row.push((s, pt.clone() * pd));
            }
        }
        rows.push(row);
    }
    BandedOperator::from_rows(truncation, rows, Some(p.get()))
}

/// Draws `t` and applies the rank update.
pub fn sample_transition<R: Rng + ?Sized>(
    state: RankWalkState,
    width: u8,
    p: Prime,
    rng: &mut R,
) -> Result<RankWalkState> {
    let t = sample_t(width, state.rank, p, rng)?;
    twist_step(state, width, t, p, rng)
}

/// Histogram of new ranks after `draws` independent transitions from `rank`.
pub fn empirical_step_counts(
    width: u8,
    rank: usize,
    p: Prime,
    draws: u64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<u64>> {
    check_width(width)?;
    let bins = rank + 3;
    Ok(exec.histogram(draws, bins, |i| {
        let mut rng = substream(seed, i);
        sample_transition(RankWalkState::new(rank), width, p, &mut rng)
            .expect("sampled t is always admissible")
            .rank()
    }))
}

/// `t` sampler used by walks: either the exact table or a finite-`Y`
/// perturbation of it.
///
/// The perturbation of row `(width, rank)` is fixed by the seed, sums to
/// zero, keeps the support, and has entries of size at most `1/(2Y)`. Every
/// entry of the induced rank kernel is then within `1/Y` of the exact one.
#[derive(Debug, Clone)]
pub struct StepSampler {
    p: Prime,
    perturbation: Option<(f64, u64)>,
    rows: [Vec<Vec<f64>>; 2],
}

impl StepSampler {
    pub fn exact(p: Prime, max_rank: usize) -> Self {
        Self::build(p, max_rank, None)
    }

    pub fn perturbed(p: Prime, max_rank: usize, y: f64, seed: u64) -> Result<Self> {
        if !(y >= 1.0) {
            return Err(Error::InvalidParams(format!("Y = {y} must be >= 1")));
        }
        Ok(Self::build(p, max_rank, Some((y, seed))))
    }

    fn build(p: Prime, max_rank: usize, perturbation: Option<(f64, u64)>) -> Self {
        let rows = [1u8, 2].map(|w| (0..=max_rank).map(|r| Self::compute_row(p, w, r, perturbation)).collect());
        StepSampler { p, perturbation, rows }
    }

    fn compute_row(p: Prime, width: u8, rank: usize, perturbation: Option<(f64, u64)>) -> Vec<f64> {
        let base = t_distribution::<f64>(width, rank, p).expect("valid width");
        let Some((y, seed)) = perturbation else {
            return base;
        };
        let support: Vec<usize> = (0..base.len()).filter(|&j| base[j] > 0.0).collect();
        if support.len() < 2 {
            return base;
        }
        let mut rng = substream(seed, ((width as u64) << 40) | rank as u64);
        let u: Vec<f64> = support.iter().map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let bound = 1.0 / (2.0 * y);
        let mut e: Vec<f64> = u.iter().map(|x| (x - mean) * bound / 2.0).collect();
        let shrink = support
            .iter()
            .zip(&e)
            .filter(|(_, d)| **d < 0.0)
            .map(|(&j, d)| base[j] / -d)
            .fold(2.0f64, f64::min)
            / 2.0;
        e.iter_mut().for_each(|d| *d *= shrink);
        let mut row = base;
        for (&j, d) in support.iter().zip(&e) {
            row[j] = (row[j] + d).max(0.0);
        }
        row
    }

    pub fn prime(&self) -> Prime {
        self.p
    }

    /// `Some(Y)` for a perturbed sampler.
    pub fn y(&self) -> Option<f64> {
        self.perturbation.map(|(y, _)| y)
    }

    pub fn row(&self, width: u8, rank: usize) -> Vec<f64> {
        self.rows[(width - 1) as usize]
            .get(rank)
            .cloned()
            .unwrap_or_else(|| Self::compute_row(self.p, width, rank, self.perturbation))
    }

    pub fn sample_t<R: Rng + ?Sized>(&self, width: u8, rank: usize, rng: &mut R) -> u8 {
        match self.rows[(width - 1) as usize].get(rank) {
            Some(row) => sample_index(row, rng) as u8,
            None => sample_index(&self.row(width, rank), rng) as u8,
        }
    }

    pub fn step<R: Rng + ?Sized>(&self, state: RankWalkState, width: u8, rng: &mut R) -> Result<RankWalkState> {
        check_width(width)?;
        let t = self.sample_t(width, state.rank, rng);
        twist_step(state, width, t, self.p, rng)
    }

    /// Rank kernel induced by this sampler's `t` rows.
    pub fn kernel(&self, width: u8, truncation: usize) -> Result<BandedOperator> {
        check_width(width)?;
        let mut rows = Vec::with_capacity(truncation);
        for r in 0..truncation {
            let mut row = Vec::new();
            for (t, pt) in self.row(width, r).into_iter().enumerate() {
                if pt == 0.0 {
                    continue;
                }
                for (delta, pd) in step_outcomes::<f64>(width, t as u8, self.p) {
                    row.push((fold_column((r as i64 + delta) as usize, truncation), pt * pd));
                }
            }
            rows.push(row);
        }
        BandedOperator::from_rows(truncation, rows, Some(self.p.get()))
    }
}
