//! Fan structures over a synthetic prime stream and the rank distributions
//! they average.
//!
//! A fan `D_{m,k,X}` is the set of levels of `m` sites and total width `k`
//! whose `j`-th smallest norm lies below `L_j(X)`. Membership is defined
//! relative to a finite stream, so `|D_{m,k,X}|` is a finite number that
//! [`FanIndex`] computes exactly by dynamic programming over the norm-sorted
//! stream. The same table drives an exactly uniform sampler.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distribution::{l1_distance, BandedOperator, Density};
use crate::error::{Error, Result};
use crate::exec::{substream, Execution};
use crate::lagrangian::{fold_column, lagrangian_operator, Prime};
use crate::scalar::Scalar;
use crate::twist::{exact_step_kernel, PrimeSite, RankWalkState, StepSampler};

const MAX_SITES_PER_LEVEL: usize = 1000;
const MAX_TABLE_CELLS: usize = 1 << 26;
const WALK_SALT: u64 = 0x5eed_0f3a_1c00_0000;

/// A nondecreasing `L: [1, inf) -> [1, inf)` with `L(Y) >= Y`, evaluated on
/// logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConvergenceRate {
    /// `C * Y^a`
    Power { c: f64, a: f64 },
    /// `C * exp(a * Y)`
    Exponential { c: f64, a: f64 },
}

impl ConvergenceRate {
    pub fn validate(&self) -> Result<()> {
        let (ConvergenceRate::Power { c, a } | ConvergenceRate::Exponential { c, a }) = *self;
        if !(c >= 1.0 && a >= 1.0 && c.is_finite() && a.is_finite()) {
            return Err(Error::InvalidParams(format!("convergence rate needs C >= 1 and a >= 1, got {self:?}")));
        }
        Ok(())
    }

    /// `ln L(Y)` from `ln Y`.
    pub fn log_eval(&self, log_y: f64) -> Result<f64> {
        let v = match *self {
            ConvergenceRate::Power { c, a } => c.ln() + a * log_y,
            ConvergenceRate::Exponential { c, a } => c.ln() + a * log_y.exp(),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Overflow)
        }
    }
}

/// `ln L_1(X), ..., ln L_{m+1}(X)` with `L_1 = L(X)` and
/// `L_{n+1} = max(L(L_1 ... L_n), X L_n)`.
pub fn strat_bounds(rate: &ConvergenceRate, m: usize, x: f64) -> Result<Vec<f64>> {
    rate.validate()?;
    if !(x >= 1.0) {
        return Err(Error::InvalidParams(format!("X = {x} must be >= 1")));
    }
    if m > MAX_SITES_PER_LEVEL {
        return Err(Error::Overflow);
    }
    let log_x = x.ln();
    let mut bounds = vec![rate.log_eval(log_x)?];
    let mut log_product = bounds[0];
    for n in 0..m {
        let next = rate.log_eval(log_product)?.max(log_x + bounds[n]);
        log_product += next;
        if !log_product.is_finite() {
            return Err(Error::Overflow);
        }
        bounds.push(next);
    }
    Ok(bounds)
}

/// Parameters of `D_{m,k,X}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FanSpec {
    pub m: usize,
    pub k: usize,
    pub x: f64,
    pub rate: ConvergenceRate,
    log_bounds: Vec<f64>,
}

impl FanSpec {
    pub fn new(rate: ConvergenceRate, m: usize, k: usize, x: f64) -> Result<Self> {
        let log_bounds = strat_bounds(&rate, m, x)?;
        Ok(FanSpec { m, k, x, rate, log_bounds })
    }

    /// `ln L_1(X) .. ln L_{m+1}(X)`.
    pub fn log_bounds(&self) -> &[f64] {
        &self.log_bounds
    }

    /// Counts of width-1 and width-2 sites in every level of the fan.
    pub fn width_pattern(&self) -> Result<(usize, usize)> {
        let (m, k) = (self.m, self.k);
        if m > k || k > 2 * m {
            return Err(Error::InfeasibleFan { m, k });
        }
        Ok((2 * m - k, k - m))
    }
}

/// A set of sites of positive width, kept sorted by norm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Level {
    sites: Vec<PrimeSite>,
    width: usize,
    log_norm: f64,
}

impl Level {
    pub fn empty() -> Self {
        Level { sites: Vec::new(), width: 0, log_norm: 0.0 }
    }

    pub fn new(mut sites: Vec<PrimeSite>) -> Result<Self> {
        if let Some(s) = sites.iter().find(|s| s.width != 1 && s.width != 2) {
            return Err(Error::InvalidWidth(s.width));
        }
        let ids: BTreeSet<u64> = sites.iter().map(|s| s.id).collect();
        if ids.len() != sites.len() {
            return Err(Error::InvalidParams("level sites must be distinct".into()));
        }
        sites.sort_by(|a, b| a.norm.total_cmp(&b.norm).then(a.id.cmp(&b.id)));
        let width = sites.iter().map(|s| s.width as usize).sum();
        let log_norm = sites.iter().map(|s| s.norm.ln()).sum();
        Ok(Level { sites, width, log_norm })
    }

    pub fn sites(&self) -> &[PrimeSite] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// `w(δ)`
    pub fn width(&self) -> usize {
        self.width
    }

    /// `ln N(δ)`
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub fn widths(&self) -> Vec<u8> {
        self.sites.iter().map(|s| s.width).collect()
    }

    fn ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.sites.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        ids
    }
}

pub fn level_membership(level: &Level, spec: &FanSpec) -> bool {
    level.len() == spec.m
        && level.width() == spec.k
        && level.sites.iter().zip(&spec.log_bounds).all(|(s, b)| s.norm.ln() < *b)
}

/// Counting table for `D_{m,k,X}` over a stream.
///
/// `ways[i][c][a]` is the number of ways to finish a level from stream
/// position `i` when `c` sites (`a` of width 1) have been taken from earlier
/// positions. Site `i` may be taken as the `(c+1)`-th smallest only when its
/// norm is below `L_{c+1}`.
#[derive(Debug, Clone)]
pub struct FanIndex {
    spec: FanSpec,
    candidates: Vec<PrimeSite>,
    n1: usize,
    ways: Vec<f64>,
}

impl FanIndex {
    pub fn new(stream: &[PrimeSite], spec: &FanSpec) -> Result<Self> {
        let (n1, _) = spec.width_pattern()?;
        let m = spec.m;
        let cutoff = if m == 0 { f64::NEG_INFINITY } else { spec.log_bounds[m - 1] };
        let mut candidates: Vec<PrimeSite> =
            stream.iter().filter(|s| s.width > 0 && s.norm.ln() < cutoff).copied().collect();
        if let Some(s) = candidates.iter().find(|s| s.width > 2) {
            return Err(Error::InvalidWidth(s.width));
        }
        candidates.sort_by(|a, b| a.norm.total_cmp(&b.norm).then(a.id.cmp(&b.id)));
        let n = candidates.len();
        let cells = (n + 1) * (m + 1) * (n1 + 1);
        if cells > MAX_TABLE_CELLS {
            return Err(Error::InvalidParams(format!(
                "counting table would need {cells} cells for {n} candidate sites; use a shorter stream"
            )));
        }
        let mut index = FanIndex { spec: spec.clone(), candidates, n1, ways: vec![0.0; (n + 1) * (m + 1) * (n1 + 1)] };
        let last = index.slot(n, m, n1);
        index.ways[last] = 1.0;
        for i in (0..n).rev() {
            for c in 0..=m {
                for a in 0..=n1 {
                    let mut w = index.ways[index.slot(i + 1, c, a)];
                    if let Some((c2, a2)) = index.take(i, c, a) {
                        w += index.ways[index.slot(i + 1, c2, a2)];
                    }
                    let at = index.slot(i, c, a);
                    index.ways[at] = w;
                }
            }
        }
        if !index.count().is_finite() {
            return Err(Error::Overflow);
        }
        Ok(index)
    }

    fn slot(&self, i: usize, c: usize, a: usize) -> usize {
        (i * (self.spec.m + 1) + c) * (self.n1 + 1) + a
    }

    /// State after taking candidate `i` in state `(c, a)`, if allowed.
    fn take(&self, i: usize, c: usize, a: usize) -> Option<(usize, usize)> {
        let m = self.spec.m;
        if c >= m || a > c || self.candidates[i].norm.ln() >= self.spec.log_bounds[c] {
            return None;
        }
        let a2 = a + (self.candidates[i].width == 1) as usize;
        let twos = c + 1 - a2;
        (a2 <= self.n1 && twos <= m - self.n1).then_some((c + 1, a2))
    }

    pub fn spec(&self) -> &FanSpec {
        &self.spec
    }

    /// `|D_{m,k,X}|` relative to the stream.
    pub fn count(&self) -> f64 {
        self.ways[self.slot(0, 0, 0)]
    }

    /// One level drawn uniformly from the fan.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Level> {
        if self.count() == 0.0 {
            return Err(Error::InvalidParams(format!(
                "no levels with (m, k) = ({}, {}) in the stream",
                self.spec.m, self.spec.k
            )));
        }
        let (mut c, mut a) = (0, 0);
        let mut chosen = Vec::with_capacity(self.spec.m);
        for i in 0..self.candidates.len() {
            if c == self.spec.m {
                break;
            }
            if let Some((c2, a2)) = self.take(i, c, a) {
                let with = self.ways[self.slot(i + 1, c2, a2)];
                let total = self.ways[self.slot(i, c, a)];
                if rng.random::<f64>() * total < with {
                    chosen.push(self.candidates[i]);
                    (c, a) = (c2, a2);
                }
            }
        }
        Level::new(chosen)
    }

    /// Every level of the fan, refusing when there are more than `limit`.
    pub fn enumerate(&self, limit: usize) -> Result<Vec<Level>> {
        if self.count() > limit as f64 {
            return Err(Error::InvalidParams(format!("fan has {} levels, above the limit {limit}", self.count())));
        }
        let mut out = Vec::new();
        let mut chosen = Vec::new();
        self.walk(0, 0, 0, &mut chosen, &mut out)?;
        Ok(out)
    }

    fn walk(&self, i: usize, c: usize, a: usize, chosen: &mut Vec<PrimeSite>, out: &mut Vec<Level>) -> Result<()> {
        if self.ways[self.slot(i, c, a)] == 0.0 {
            return Ok(());
        }
        if i == self.candidates.len() {
            out.push(Level::new(chosen.clone())?);
            return Ok(());
        }
        if let Some((c2, a2)) = self.take(i, c, a) {
            chosen.push(self.candidates[i]);
            self.walk(i + 1, c2, a2, chosen, out)?;
            chosen.pop();
        }
        self.walk(i + 1, c, a, chosen, out)
    }
}

/// `count` levels drawn independently and uniformly from `D_{m,k,X}`.
pub fn sample_levels<R: Rng + ?Sized>(
    stream: &[PrimeSite],
    spec: &FanSpec,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Level>> {
    let index = FanIndex::new(stream, spec)?;
    (0..count).map(|_| index.sample(rng)).collect()
}

/// How a level's rank distribution is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mode {
    /// Product of the exact one-step kernels.
    ExactKernel,
    /// Monte Carlo walks using `t` rows perturbed at scale `1/Y`; `walks` per level.
    SampledAtY { y: f64, walks: u64, seed: u64 },
}

/// Applies the exact kernels for `widths` in the given order.
pub fn exact_level_distribution<T: Scalar>(widths: &[u8], initial: &Density<T>, p: Prime) -> Result<Density<T>> {
    let n = initial.truncation();
    let kernels = [exact_step_kernel::<T>(1, p, n)?, exact_step_kernel::<T>(2, p, n)?];
    let mut cur = initial.clone();
    for &w in widths {
        if w != 1 && w != 2 {
            return Err(Error::InvalidWidth(w));
        }
        cur = kernels[(w - 1) as usize].apply(&cur)?;
    }
    Ok(cur)
}

fn walk_sampler(initial: &Density, levels: &[Level], p: Prime, y: f64, seed: u64) -> Result<StepSampler> {
    let max_width = levels.iter().map(Level::width).max().unwrap_or(0);
    let max_rank = initial.max_support().unwrap_or(0) + max_width;
    StepSampler::perturbed(p, max_rank, y, seed)
}

/// Final rank of one walk from `initial` through `widths`.
fn run_walk<R: Rng + ?Sized>(
    initial: &Density,
    widths: &[u8],
    sampler: &StepSampler,
    rng: &mut R,
) -> Result<usize> {
    let mut state = RankWalkState::new(initial.quantile(rng.random()));
    for &w in widths {
        state = sampler.step(state, w, rng)?;
    }
    Ok(state.rank())
}

fn sampled_histogram(
    levels: &[Level],
    initial: &Density,
    p: Prime,
    y: f64,
    walks: u64,
    seed: u64,
    exec: Execution,
) -> Result<Vec<u64>> {
    if walks == 0 {
        return Err(Error::InvalidParams("sampled mode needs at least one walk per level".into()));
    }
    let sampler = walk_sampler(initial, levels, p, y, seed)?;
    let widths: Vec<Vec<u8>> = levels.iter().map(Level::widths).collect();
    let n = initial.truncation();
    let walk_seed = seed ^ WALK_SALT;
    Ok(exec.histogram(levels.len() as u64 * walks, n, |i| {
        let mut rng = substream(walk_seed, i);
        let rank = run_walk(initial, &widths[(i / walks) as usize], &sampler, &mut rng).expect("level widths are 1 or 2");
        fold_column(rank, n)
    }))
}

/// `E_δ` for a level started from `initial`.
pub fn level_rank_distribution(level: &Level, initial: &Density, mode: Mode, p: Prime) -> Result<Density> {
    fan_distribution(std::slice::from_ref(level), initial, mode, p, Execution::default())
}

/// `E_B` for a list of levels of equal cardinality: the unweighted mean of
/// the level distributions.
pub fn fan_distribution(levels: &[Level], initial: &Density, mode: Mode, p: Prime, exec: Execution) -> Result<Density> {
    if levels.is_empty() {
        return Err(Error::EmptyFan);
    }
    match mode {
        Mode::ExactKernel => {
            let parts = exec.map(levels.len(), |i| exact_level_distribution(&levels[i].widths(), initial, p));
            let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
            mean_of(&parts)
        }
        Mode::SampledAtY { y, walks, seed } => {
            Density::from_counts(&sampled_histogram(levels, initial, p, y, walks, seed, exec)?)
        }
    }
}

fn mean_of(parts: &[Density]) -> Result<Density> {
    let w = 1.0 / parts.len() as f64;
    let weighted: Vec<(f64, &Density)> = parts.iter().map(|d| (w, d)).collect();
    mix_renormalized(&weighted)
}

/// Convex combination with weights rescaled to sum to one.
fn mix_renormalized(parts: &[(f64, &Density)]) -> Result<Density> {
    let total: f64 = parts.iter().map(|(w, _)| w).sum();
    let scaled: Vec<(f64, &Density)> = parts.iter().map(|(w, d)| (w / total, *d)).collect();
    let n = scaled[0].1.truncation();
    let mut values = vec![0.0; n];
    for (w, d) in &scaled {
        if d.truncation() != n {
            return Err(Error::TruncationMismatch { left: n, right: d.truncation() });
        }
        values.iter_mut().zip(d.values()).for_each(|(acc, v)| *acc += w * v);
    }
    // renormalize away the last-ulp drift of the weighted sum
    let s: f64 = values.iter().sum();
    Ok(Density::from_vec_unchecked(values.into_iter().map(|v| v / s).collect()))
}

/// `M_L^k(initial)` at the truncation of `initial`.
pub fn lagrangian_power(initial: &Density, k: usize, p: Prime) -> Result<Density> {
    lagrangian_operator::<f64>(p, initial.truncation()).apply_power(initial, k)
}

/// Fan distribution over `samples` uniform levels and its distance to
/// `M_L^k(initial)`.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub fan: Density,
    pub target: Density,
    pub residual: f64,
    pub fan_size: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn theorem43_residual(
    spec: &FanSpec,
    stream: &[PrimeSite],
    initial: &Density,
    mode: Mode,
    p: Prime,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<ResidualReport> {
    let index = FanIndex::new(stream, spec)?;
    let mut rng = substream(seed, 0);
    let levels = (0..samples.max(1)).map(|_| index.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
    let fan = fan_distribution(&levels, initial, mode, p, exec)?;
    let target = lagrangian_power(initial, spec.k, p)?;
    let residual = l1_distance(&fan, &target)?;
    Ok(ResidualReport { fan, target, residual, fan_size: index.count() })
}

/// `(||E_B - E_B'||, 2|B' - B| / |B|)` for `B ⊆ B'` in exact mode.
pub fn mixture_bound_check(b: &[Level], b_prime: &[Level], initial: &Density, p: Prime) -> Result<(f64, f64)> {
    if b.is_empty() {
        return Err(Error::EmptyFan);
    }
    let m = b[0].len();
    if b.iter().chain(b_prime).any(|l| l.len() != m) {
        return Err(Error::CardinalityMismatch);
    }
    let small: BTreeSet<Vec<u64>> = b.iter().map(Level::ids).collect();
    let large: BTreeSet<Vec<u64>> = b_prime.iter().map(Level::ids).collect();
    if small.len() != b.len() || large.len() != b_prime.len() {
        return Err(Error::InvalidParams("level lists must not repeat a level".into()));
    }
    if !small.is_subset(&large) {
        return Err(Error::NotSubset);
    }
    let e_b = fan_distribution(b, initial, Mode::ExactKernel, p, Execution::Sequential)?;
    let e_bp = fan_distribution(b_prime, initial, Mode::ExactKernel, p, Execution::Sequential)?;
    let lhs = l1_distance(&e_b, &e_bp)?;
    let rhs = 2.0 * (large.len() - small.len()) as f64 / small.len() as f64;
    Ok((lhs, rhs))
}

/// `E` over `D_X^{(k)} = ∪_m D_{m,k,X}` for `m <= m_max`. Each slice is
/// estimated from `samples` uniform levels and weighted by its exact size.
#[allow(clippy::too_many_arguments)]
pub fn fan_union_distribution(
    stream: &[PrimeSite],
    m_max: usize,
    k: usize,
    x: f64,
    rate: ConvergenceRate,
    initial: &Density,
    mode: Mode,
    p: Prime,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<Density> {
    let mut slices = Vec::new();
    for m in k.div_ceil(2)..=k.min(m_max) {
        let index = FanIndex::new(stream, &FanSpec::new(rate, m, k, x)?)?;
        if index.count() == 0.0 {
            continue;
        }
        let mut rng = substream(seed, m as u64);
        let levels = (0..samples.max(1)).map(|_| index.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
        let slice_mode = match mode {
            Mode::SampledAtY { y, walks, seed } => Mode::SampledAtY { y, walks, seed: seed.wrapping_add(m as u64) },
            exact => exact,
        };
        slices.push((index.count(), fan_distribution(&levels, initial, slice_mode, p, exec)?));
    }
    if slices.is_empty() {
        return Err(Error::EmptyFan);
    }
    let parts: Vec<(f64, &Density)> = slices.iter().map(|(w, d)| (*w, d)).collect();
    mix_renormalized(&parts)
}

/// One trial of the one-step bound for appending a width-`i` site.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepBoundTrial {
    pub measured: f64,
    pub bias_bound: f64,
    pub noise: f64,
}

impl StepBoundTrial {
    /// `(b + 1)/Y + 4 * noise`
    pub fn bound(&self) -> f64 {
        self.bias_bound + 4.0 * self.noise
    }

    pub fn holds(&self) -> bool {
        self.measured <= self.bound()
    }
}

/// Runs `walks` walks through `level` and one extra width-`i` site with the
/// `Y`-perturbed sampler. Compares the final histogram with `M^i` applied
/// to the histogram at the end of `level`.
#[allow(clippy::too_many_arguments)]
pub fn one_step_bound_trial(
    level: &Level,
    i: u8,
    initial: &Density,
    p: Prime,
    y: f64,
    walks: u64,
    seed: u64,
    exec: Execution,
) -> Result<StepBoundTrial> {
    if i != 1 && i != 2 {
        return Err(Error::InvalidWidth(i));
    }
    if walks == 0 {
        return Err(Error::InvalidParams("need at least one walk".into()));
    }
    let n = initial.truncation();
    let b = initial.max_support().unwrap_or(0) + level.width() + i as usize;
    if b + 1 > n {
        return Err(Error::TooLong { len: b + 1, cutoff: n });
    }
    let sampler = StepSampler::perturbed(p, b, y, seed)?;
    let widths = level.widths();
    let walk_seed = seed ^ WALK_SALT;
    let pairs = exec.histogram(walks, n * n, |j| {
        let mut rng = substream(walk_seed, j);
        let before = run_walk(initial, &widths, &sampler, &mut rng).expect("widths are 1 or 2");
        let after = sampler.step(RankWalkState::new(before), i, &mut rng).expect("width checked").rank();
        before * n + after
    });
    let mut before = vec![0u64; n];
    let mut after = vec![0u64; n];
    for (idx, c) in pairs.iter().enumerate() {
        before[idx / n] += c;
        after[idx % n] += c;
    }
    let e_delta = Density::from_counts(&before)?;
    let extended = Density::from_counts(&after)?;
    let kernel: BandedOperator = lagrangian_operator::<f64>(p, n).power(i as u32);
    let q = kernel.apply(&e_delta)?;
    let measured = l1_distance(&extended, &q)?;
    let noise = q.values().iter().map(|v| (v * (1.0 - v) / walks as f64).sqrt()).sum();
    Ok(StepBoundTrial { measured, bias_bound: (b as f64 + 1.0) / y, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::make_density;
    use crate::twist::{synth_prime_stream, StreamConfig};
    use num_rational::BigRational;
    use proptest::prelude::*;

    fn p2() -> Prime {
        Prime::new(2).unwrap()
    }

    fn square() -> ConvergenceRate {
        ConvergenceRate::Power { c: 1.0, a: 2.0 }
    }

    fn site(id: u64, norm: f64, width: u8) -> PrimeSite {
        PrimeSite { id, norm, width }
    }

    fn binomial(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
    }

    #[test]
    fn bounds_examples() {
        let b = strat_bounds(&square(), 1, 10.0).unwrap();
        assert!((b[0].exp() - 100.0).abs() < 1e-9);
        let b = strat_bounds(&square(), 2, 10.0).unwrap();
        assert!((b[1].exp() - 1e4).abs() < 1e-6);
        assert_eq!(strat_bounds(&square(), 0, 10.0).unwrap().len(), 1);
        assert!(b.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(strat_bounds(&square(), 5000, 10.0), Err(Error::Overflow)));
        let exp = ConvergenceRate::Exponential { c: 1.0, a: 1.0 };
        assert!(matches!(strat_bounds(&exp, 3, 10.0), Err(Error::Overflow)));
        assert!(ConvergenceRate::Power { c: 0.5, a: 2.0 }.validate().is_err());
    }

    #[test]
    fn membership_examples() {
        let spec = FanSpec::new(square(), 0, 0, 10.0).unwrap();
        assert!(level_membership(&Level::empty(), &spec));

        let level = Level::new(vec![site(1, 5000.0, 2), site(0, 50.0, 2)]).unwrap();
        let spec = FanSpec::new(square(), 2, 4, 10.0).unwrap();
        assert!(level_membership(&level, &spec));
        let tight = FanSpec { log_bounds: vec![100f64.ln(); 3], ..spec };
        assert!(!level_membership(&level, &tight));
        assert!(Level::new(vec![site(0, 5.0, 0)]).is_err());
        assert!(Level::new(vec![site(0, 5.0, 1), site(0, 6.0, 1)]).is_err());
    }

    #[test]
    fn infeasible_and_trivial_fans() {
        let stream = synth_prime_stream(&StreamConfig::default(), 200.0).unwrap();
        let spec = FanSpec::new(square(), 1, 3, 10.0).unwrap();
        assert!(matches!(FanIndex::new(&stream, &spec), Err(Error::InfeasibleFan { m: 1, k: 3 })));
        let spec = FanSpec::new(square(), 0, 0, 10.0).unwrap();
        let index = FanIndex::new(&stream, &spec).unwrap();
        assert_eq!(index.count(), 1.0);
        assert_eq!(index.sample(&mut substream(0, 0)).unwrap(), Level::empty());

        let only_even = StreamConfig { densities: [0.5, 0.0, 0.5], ..StreamConfig::default() };
        let stream = synth_prime_stream(&only_even, 200.0).unwrap();
        let spec = FanSpec::new(square(), 2, 3, 10.0).unwrap();
        assert_eq!(FanIndex::new(&stream, &spec).unwrap().count(), 0.0);
    }

    #[test]
    fn count_matches_brute_force() {
        let stream: Vec<PrimeSite> = (0..14).map(|j| site(j, 2.0 + 12.0 * j as f64, [1, 2, 0][j as usize % 3])).collect();
        let rate = ConvergenceRate::Power { c: 1.0, a: 1.0 };
        for (m, k) in [(1, 1), (1, 2), (2, 3), (2, 4), (3, 4), (3, 5)] {
            let spec = FanSpec::new(rate, m, k, 40.0).unwrap();
            let index = FanIndex::new(&stream, &spec).unwrap();
            let mut brute = 0usize;
            for mask in 0u32..(1 << stream.len()) {
                let picked: Vec<PrimeSite> =
                    stream.iter().enumerate().filter(|(j, _)| mask >> j & 1 == 1).map(|(_, s)| *s).collect();
                if let Ok(level) = Level::new(picked) {
                    brute += level_membership(&level, &spec) as usize;
                }
            }
            assert_eq!(index.count(), brute as f64, "(m, k) = ({m}, {k})");
            let all = index.enumerate(10_000).unwrap();
            assert_eq!(all.len(), brute);
            assert!(all.iter().all(|l| level_membership(l, &spec)));
        }
    }

    #[test]
    fn pattern_example() {
        let stream = synth_prime_stream(&StreamConfig::default(), 2000.0).unwrap();
        let spec = FanSpec::new(square(), 2, 3, 10.0).unwrap();
        let mut rng = substream(4, 0);
        for level in sample_levels(&stream, &spec, 200, &mut rng).unwrap() {
            let mut w = level.widths();
            w.sort();
            assert_eq!(w, vec![1, 2]);
        }
    }

    #[test]
    fn sampler_is_uniform() {
        let stream: Vec<PrimeSite> = (0..8).map(|j| site(j, 2.0 + j as f64, 1 + (j % 2) as u8)).collect();
        let spec = FanSpec::new(ConvergenceRate::Power { c: 1.0, a: 1.0 }, 2, 3, 6.0).unwrap();
        let index = FanIndex::new(&stream, &spec).unwrap();
        let all = index.enumerate(1000).unwrap();
        let draws = 40_000;
        let mut rng = substream(11, 0);
        let mut hits = vec![0u64; all.len()];
        for _ in 0..draws {
            let l = index.sample(&mut rng).unwrap();
            hits[all.iter().position(|x| *x == l).unwrap()] += 1;
        }
        let probs = vec![1.0 / all.len() as f64; all.len()];
        assert!(crate::stats::chi_square_gof(&hits, &probs).p_value > 1e-4);
    }

    #[test]
    fn membership_fuzz() {
        let stream = synth_prime_stream(&StreamConfig::s3(1.0, 8), 1e4).unwrap();
        let mut rng = substream(8, 1);
        for (m, k) in [(1, 1), (1, 2), (2, 3), (2, 4), (3, 4), (3, 6)] {
            let spec = FanSpec::new(square(), m, k, 10.0).unwrap();
            for level in sample_levels(&stream, &spec, 10_000 / 6 + 1, &mut rng).unwrap() {
                assert!(level_membership(&level, &spec));
            }
        }
    }

    #[test]
    fn wide_streams_count_binomially() {
        // every site fits every slot, so the count is a product of binomials
        let stream: Vec<PrimeSite> = (0..300).map(|j| site(j, 2.0 + j as f64 * 1e-3, 1 + (j % 2) as u8)).collect();
        let spec = FanSpec::new(square(), 4, 6, 10.0).unwrap();
        let index = FanIndex::new(&stream, &spec).unwrap();
        let expected = binomial(150, 2) * binomial(150, 2);
        assert!((index.count() / expected - 1.0).abs() < 1e-12);
    }

    #[test]
    fn level_distribution_examples() {
        let initial = make_density(&[0.3, 0.5, 0.2], 32).unwrap();
        let e = level_rank_distribution(&Level::empty(), &initial, Mode::ExactKernel, p2()).unwrap();
        assert_eq!(e, initial);
        let level = Level::new(vec![site(0, 3.0, 2)]).unwrap();
        let e = level_rank_distribution(&level, &initial, Mode::ExactKernel, p2()).unwrap();
        let m2 = lagrangian_operator::<f64>(p2(), 32).power(2).apply(&initial).unwrap();
        assert!(l1_distance(&e, &m2).unwrap() < 1e-14);
        let level = Level::new(vec![site(0, 3.0, 2), site(1, 4.0, 1), site(2, 5.0, 2)]).unwrap();
        let e = level_rank_distribution(&level, &initial, Mode::ExactKernel, p2()).unwrap();
        assert!(l1_distance(&e, &lagrangian_power(&initial, 5, p2()).unwrap()).unwrap() < 1e-14);
    }

    #[test]
    fn fan_distribution_examples() {
        let initial = Density::point_mass(0, 32).unwrap();
        assert!(matches!(fan_distribution(&[], &initial, Mode::ExactKernel, p2(), Execution::Sequential), Err(Error::EmptyFan)));
        let level = Level::new(vec![site(0, 3.0, 1), site(1, 4.0, 2)]).unwrap();
        let one = fan_distribution(&[level.clone()], &initial, Mode::ExactKernel, p2(), Execution::Sequential).unwrap();
        let two = fan_distribution(&[level.clone(), level], &initial, Mode::ExactKernel, p2(), Execution::Sequential)
            .unwrap();
        assert!(l1_distance(&one, &two).unwrap() < 1e-15);
    }

    #[test]
    fn residual_examples() {
        let stream = synth_prime_stream(&StreamConfig::s3(1.0, 2), 2e4).unwrap();
        let initial = Density::point_mass(0, 32).unwrap();
        for (m, k) in [(0, 0), (2, 3), (2, 4), (3, 5)] {
            let spec = FanSpec::new(square(), m, k, 10.0).unwrap();
            let r = theorem43_residual(&spec, &stream, &initial, Mode::ExactKernel, p2(), 50, 0, Execution::default())
                .unwrap();
            assert!(r.residual < 1e-10, "{m} {k}: {}", r.residual);
        }
        let spec = FanSpec::new(square(), 2, 4, 10.0).unwrap();
        let mode = Mode::SampledAtY { y: 1e3, walks: 100, seed: 3 };
        let r = theorem43_residual(&spec, &stream, &initial, mode, p2(), 100, 0, Execution::default()).unwrap();
        assert!(r.residual < 0.05, "{}", r.residual);
    }

    #[test]
    fn sampled_mode_is_deterministic_across_strategies() {
        let initial = make_density(&[0.5, 0.5], 16).unwrap();
        let levels = vec![
            Level::new(vec![site(0, 3.0, 2), site(1, 4.0, 1)]).unwrap(),
            Level::new(vec![site(2, 5.0, 1), site(3, 6.0, 2)]).unwrap(),
        ];
        let mode = Mode::SampledAtY { y: 50.0, walks: 2000, seed: 9 };
        let a = fan_distribution(&levels, &initial, mode, p2(), Execution::Sequential).unwrap();
        let b = fan_distribution(&levels, &initial, mode, p2(), Execution::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_bound_examples() {
        let initial = Density::point_mass(0, 32).unwrap();
        let levels: Vec<Level> =
            (0..10).map(|j| Level::new(vec![site(j, 3.0 + j as f64, 1 + (j % 2) as u8)]).unwrap()).collect();
        let (lhs, rhs) = mixture_bound_check(&levels, &levels, &initial, p2()).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
        let (lhs, rhs) = mixture_bound_check(&levels[..9], &levels, &initial, p2()).unwrap();
        assert!((rhs - 2.0 / 9.0).abs() < 1e-15);
        assert!(lhs <= rhs);
        assert!(matches!(mixture_bound_check(&levels[..5], &levels[3..], &initial, p2()), Err(Error::NotSubset)));
        let pair = vec![Level::new(vec![site(50, 3.0, 1), site(51, 4.0, 1)]).unwrap()];
        assert!(matches!(mixture_bound_check(&levels, &pair, &initial, p2()), Err(Error::CardinalityMismatch)));
    }

    #[test]
    fn union_examples() {
        let stream = synth_prime_stream(&StreamConfig::s3(1.0, 6), 5e3).unwrap();
        let initial = make_density(&[0.6, 0.4], 64).unwrap();
        let run = |k| {
            fan_union_distribution(&stream, k, k, 10.0, square(), &initial, Mode::ExactKernel, p2(), 20, 1, Execution::default())
                .unwrap()
        };
        assert!(l1_distance(&run(0), &initial).unwrap() < 1e-15);
        for k in [1, 4, 7] {
            assert!(l1_distance(&run(k), &lagrangian_power(&initial, k, p2()).unwrap()).unwrap() < 1e-12);
        }
    }

    #[test]
    fn union_reaches_even_limit() {
        let params = crate::lagrangian::LagrangianParams::with_defaults(2).unwrap();
        let pair = crate::lagrangian::equilibrium(&params).unwrap();
        let initial = make_density(&[0.6, 0.4], 64).unwrap();
        let limit = crate::lagrangian::predicted_limit(&initial, crate::distribution::Side::Even, &pair).unwrap();
        // width-2 sites only, so the union has the single slice m = k/2
        let stream: Vec<PrimeSite> = (0..30).map(|j| site(j, 2.0 + j as f64 * 1e-3, 2)).collect();
        let rate = ConvergenceRate::Power { c: 1.0, a: 1.0 };
        let e = fan_union_distribution(&stream, 20, 40, 10.0, rate, &initial, Mode::ExactKernel, p2(), 5, 0, Execution::default())
            .unwrap();
        assert!(l1_distance(&e, &limit).unwrap() < 1e-6);
    }

    #[test]
    fn one_step_bound_trials_hold() {
        let initial = make_density(&[0.5, 0.5], 32).unwrap();
        let level = Level::new(vec![site(0, 3.0, 2), site(1, 4.0, 1)]).unwrap();
        for (i, y) in [(1u8, 10.0), (2, 100.0), (2, 5.0)] {
            let t = one_step_bound_trial(&level, i, &initial, p2(), y, 20_000, 1, Execution::default()).unwrap();
            assert!(t.holds(), "{t:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn exact_level_distribution_ignores_order(
            widths in prop::collection::vec(1u8..=2, 0..6),
            perm_seed in any::<u64>(),
            p in prop::sample::select(vec![2u64, 3]),
        ) {
            let p = Prime::new(p).unwrap();
            let initial: Density<BigRational> = Density::new(
                vec![BigRational::new(1.into(), 3.into()), BigRational::new(2.into(), 3.into())], 16).unwrap();
            let mut shuffled = widths.clone();
            let mut rng = substream(perm_seed, 0);
            for j in (1..shuffled.len()).rev() {
                shuffled.swap(j, rng.random_range(0..=j));
            }
            let a = exact_level_distribution(&widths, &initial, p).unwrap();
            let b = exact_level_distribution(&shuffled, &initial, p).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
