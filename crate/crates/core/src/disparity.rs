//! Disparity of a twist family and the limiting rank laws it selects.
//!
//! Each place carries a list of local characters `ψ` with
//! `γ(ψ) = (-1)^{h(1, ψ)} ψ(Δ)`. The local term `δ_v` is the mean of `γ`
//! over the list and the global disparity is
//! `δ = ((-1)^{rk(1)} / 2) ∏_v δ_v`.

use serde::{Deserialize, Serialize};

use crate::distribution::{l1_distance, Density, Side};
use crate::error::{Error, Result};
use crate::exec::{substream, Execution};
use crate::fan::{fan_distribution, lagrangian_power, FanIndex, FanSpec, Mode};
use crate::lagrangian::{equilibrium, EquilibriumPair, LagrangianParams};
use crate::twist::PrimeSite;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CharacterEntry {
    /// `h(1_v, ψ) mod 2`
    pub h_parity: u8,
    /// `ψ(Δ)`, either 1 or -1
    pub delta_value: i8,
}

impl CharacterEntry {
    pub fn gamma(&self) -> f64 {
        let sign = if self.h_parity == 0 { 1.0 } else { -1.0 };
        sign * self.delta_value as f64
    }

    fn is_trivial(&self) -> bool {
        self.h_parity == 0 && self.delta_value == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalPlaceData {
    pub id: String,
    pub characters: Vec<CharacterEntry>,
}

impl LocalPlaceData {
    pub fn validate(&self) -> Result<()> {
        if self.characters.is_empty() {
            return Err(Error::EmptyCharacterList(self.id.clone()));
        }
        for ch in &self.characters {
            if ch.h_parity > 1 {
                return Err(Error::InvalidCharacter {
                    place: self.id.clone(),
                    reason: format!("h_parity {} is not 0 or 1", ch.h_parity),
                });
            }
            if ch.delta_value != 1 && ch.delta_value != -1 {
                return Err(Error::InvalidCharacter {
                    place: self.id.clone(),
                    reason: format!("delta_value {} is not 1 or -1", ch.delta_value),
                });
            }
        }
        if !self.characters.iter().any(CharacterEntry::is_trivial) {
            return Err(Error::MissingTrivialCharacter(self.id.clone()));
        }
        Ok(())
    }
}

/// `δ_v`, the mean of `γ` over the place's characters.
pub fn delta_local(place: &LocalPlaceData) -> Result<f64> {
    place.validate()?;
    Ok(place.characters.iter().map(CharacterEntry::gamma).sum::<f64>() / place.characters.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisparityTable {
    pub rank_of_trivial: u32,
    pub places: Vec<LocalPlaceData>,
}

impl DisparityTable {
    pub fn from_json(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

pub fn delta_global(table: &DisparityTable) -> Result<f64> {
    let sign = if table.rank_of_trivial.is_multiple_of(2) { 0.5 } else { -0.5 };
    table.places.iter().try_fold(sign, |acc, place| Ok(acc * delta_local(place)?))
}

fn check_disparity(delta: f64) -> Result<()> {
    if delta.abs() <= 0.5 {
        Ok(())
    } else {
        Err(Error::DisparityOutOfRange(delta))
    }
}

/// Rank distributions on the two halves of the empty level.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPair {
    pub e1_plus: Density,
    pub e1_minus: Density,
}

impl InitialPair {
    /// The state used by a level of total width `k`.
    pub fn for_width(&self, k: usize) -> &Density {
        match Side::of(k) {
            Side::Even => &self.e1_plus,
            Side::Odd => &self.e1_minus,
        }
    }
}

/// Pair supported on ranks 0 and 1 with `ρ(e1_plus) = 1/2 - δ` and
/// `ρ(e1_minus) = 1/2 + δ`.
pub fn initial_from_disparity(delta: f64, truncation: usize) -> Result<InitialPair> {
    check_disparity(delta)?;
    let e1_plus = Density::new(vec![0.5 + delta, 0.5 - delta], truncation)?;
    let e1_minus = Density::new(vec![0.5 - delta, 0.5 + delta], truncation)?;
    Ok(InitialPair { e1_plus, e1_minus })
}

/// Which parity receives the weight `1/2 + δ` in the limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// `1/2 + δ` on odd ranks.
    #[default]
    TheoremA,
    /// `1/2 + δ` on `E^+`.
    #[serde(rename = "corollary_1112")]
    Corollary1112,
}

impl Orientation {
    /// Weight on `E^+` in the limit law.
    pub fn even_weight(self, delta: f64) -> f64 {
        match self {
            Orientation::TheoremA => 0.5 - delta,
            Orientation::Corollary1112 => 0.5 + delta,
        }
    }

    /// Disparity to hand to [`initial_from_disparity`] so that the finite
    /// fans converge to this orientation's limit.
    pub fn initial_disparity(self, delta: f64) -> f64 {
        match self {
            Orientation::TheoremA => -delta,
            Orientation::Corollary1112 => delta,
        }
    }
}

/// `M^k(E_1^+)` for even `k`, `M^k(E_1^-)` for odd `k`.
pub fn finite_fan_distribution(pair: &InitialPair, k: usize, params: &LagrangianParams) -> Result<Density> {
    lagrangian_power(pair.for_width(k), k, params.p)
}

pub fn limit_distribution(delta: f64, pair: &EquilibriumPair, orientation: Orientation) -> Result<Density> {
    check_disparity(delta)?;
    pair.blend(orientation.even_weight(delta))
}

pub fn average_rank(delta: f64, pair: &EquilibriumPair, orientation: Orientation) -> Result<f64> {
    Ok(limit_distribution(delta, pair, orientation)?.mean())
}

/// `(intercept, slope)` of the average rank as a function of `δ`:
/// `(A + B)/2 ± δ (B - A)` with `A = Σ_{even} n c_n` and `B = Σ_{odd} n c_n`.
pub fn average_rank_affine(pair: &EquilibriumPair, orientation: Orientation) -> (f64, f64) {
    let a = pair.e_plus.mean();
    let b = pair.e_minus.mean();
    let slope = match orientation {
        Orientation::TheoremA => b - a,
        Orientation::Corollary1112 => a - b,
    };
    ((a + b) / 2.0, slope)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndReport {
    pub delta: f64,
    pub fan: Density,
    pub finite: Density,
    pub limit: Density,
    pub residual_finite: f64,
    pub residual_limit: f64,
    pub even_mass: f64,
    pub fan_size: f64,
}

/// Disparity from `table`, initial pair, fan average over `samples` uniform
/// levels of `spec`, and its distances to the finite and limiting laws.
#[allow(clippy::too_many_arguments)]
pub fn end_to_end_fan_experiment(
    table: &DisparityTable,
    stream: &[PrimeSite],
    spec: &FanSpec,
    mode: Mode,
    orientation: Orientation,
    params: &LagrangianParams,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<EndToEndReport> {
    let delta = delta_global(table)?;
    let index = FanIndex::new(stream, spec)?;
    let pair = initial_from_disparity(orientation.initial_disparity(delta), params.truncation)?;
    let mut rng = substream(seed, 0);
    let levels = (0..samples.max(1)).map(|_| index.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
    let fan = fan_distribution(&levels, pair.for_width(spec.k), mode, params.p, exec)?;
    let finite = finite_fan_distribution(&pair, spec.k, params)?;
    let limit = limit_distribution(delta, &equilibrium(params)?, orientation)?;
    Ok(EndToEndReport {
        delta,
        residual_finite: l1_distance(&fan, &finite)?,
        residual_limit: l1_distance(&fan, &limit)?,
        even_mass: fan.mass(Side::Even),
        fan,
        finite,
        limit,
        fan_size: index.count(),
    })
}
