//! Two-player lottery contest with a built-in first-mover advantage, its
//! fairness conditions, and a simulator producing datasets whose potential
//! outcomes (and therefore treatment effects) are known.
//!
//! Contestant `i` starting wins with probability `A_i / (A_i + δ_i A_j)`;
//! as non-starter (opponent `j` starts) with `A_i / (A_i + A_j / δ_j)`.
//! `δ = 1` means no advantage. In simulated data the treatment is "i
//! starts" and the outcome is "i wins".

use std::fmt::Write as _;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnKind, Dataset, ObservationRecord, Provenance, XColumn};
use crate::error::{Error, Result};
use crate::stats::{derive_seed, stream_rng};

/// Bounds applied to every shootout-probability model.
pub const PI_BOUNDS: (f64, f64) = (0.05, 0.95);
/// Bounds applied to potential-outcome probabilities in the linear design.
pub const LINEAR_PROB_BOUNDS: (f64, f64) = (0.02, 0.98);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContestConfig {
    pub ability_i: f64,
    pub ability_j: f64,
    pub delta_i: f64,
    pub delta_j: f64,
    /// Probability that `i` starts.
    pub pi: f64,
}

impl ContestConfig {
    pub fn validate(&self) -> Result<()> {
        check_ability(self.ability_i)?;
        check_ability(self.ability_j)?;
        check_delta(self.delta_i)?;
        check_delta(self.delta_j)?;
        if !(0.0..=1.0).contains(&self.pi) {
            return Err(Error::config(format!("pi {} outside [0, 1]", self.pi)));
        }
        Ok(())
    }
}

fn check_ability(a: f64) -> Result<()> {
    if a > 0.0 && a.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("ability must be positive and finite, got {a}")))
    }
}

fn check_delta(d: f64) -> Result<()> {
    if d > 0.0 && d <= 1.0 {
        Ok(())
    } else {
        Err(Error::config(format!("advantage parameter δ={d} outside (0, 1]")))
    }
}

/// Win probability of `i` when `i` starts.
pub fn win_prob_starter(ability_i: f64, ability_j: f64, delta_i: f64) -> Result<f64> {
    check_ability(ability_i)?;
    check_ability(ability_j)?;
    check_delta(delta_i)?;
    Ok(ability_i / (ability_i + delta_i * ability_j))
}

/// Win probability of `i` when the opponent `j` starts.
pub fn win_prob_nonstarter(ability_i: f64, ability_j: f64, delta_j: f64) -> Result<f64> {
    check_ability(ability_i)?;
    check_ability(ability_j)?;
    check_delta(delta_j)?;
    Ok(ability_i / (ability_i + ability_j / delta_j))
}

/// Ex-ante win probability of `i`, mixing both starting orders with `pi`.
pub fn win_prob_exante(cfg: &ContestConfig) -> Result<f64> {
    cfg.validate()?;
    let s = win_prob_starter(cfg.ability_i, cfg.ability_j, cfg.delta_i)?;
    let ns = win_prob_nonstarter(cfg.ability_i, cfg.ability_j, cfg.delta_j)?;
    Ok(cfg.pi * s + (1.0 - cfg.pi) * ns)
}

/// Closed form of the ex-ante probability split into a starting-order
/// neutral part and a part scaled by `1 - 2π`.
pub fn win_prob_exante_expanded(cfg: &ContestConfig) -> Result<f64> {
    cfg.validate()?;
    let (ai, aj, di, dj) = (cfg.ability_i, cfg.ability_j, cfg.delta_i, cfg.delta_j);
    let denom = 2.0 * (ai + di * aj) * (dj * ai + aj);
    Ok((ai * aj * (1.0 + di * dj) + 2.0 * dj * ai * ai) / denom
        + (1.0 - 2.0 * cfg.pi) * ai * aj * (di * dj - 1.0) / denom)
}

/// The expanded form specialised to equal abilities.
pub fn win_prob_exante_equal_ability(delta_i: f64, delta_j: f64, pi: f64) -> Result<f64> {
    check_delta(delta_i)?;
    check_delta(delta_j)?;
    let denom = 2.0 * (1.0 + delta_i) * (delta_j + 1.0);
    Ok(((1.0 + delta_i * delta_j) + 2.0 * delta_j) / denom
        + (1.0 - 2.0 * pi) * (delta_i * delta_j - 1.0) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessCondition {
    NoBias,
    RandomizedAndSymmetric,
    /// Unequal advantages exactly offset by the start probability:
    /// δ_j − δ_i = (1 − 2π)(1 − δ_i δ_j), e.g. π = 0 with δ_j = 1.
    OffsettingAdvantages,
    Neither,
}

/// Residuals below this count as zero in the offsetting condition.
pub const FAIRNESS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FairnessReport {
    pub fair: bool,
    pub condition: FairnessCondition,
    pub win_prob: f64,
}

/// Fairness for equally able contestants: fair when there is no advantage
/// at all, or when the start is randomized and both advantages are equal.
/// Setting the equal-ability win probability to 1/2 gives the exact
/// condition δ_j − δ_i = (1 − 2π)(1 − δ_i δ_j), which those two cases
/// satisfy; the remaining solutions (e.g. δ_i = 1/2, δ_j = 1/3, π = 0.6)
/// are reported as [`FairnessCondition::OffsettingAdvantages`].
pub fn fairness_check(cfg: &ContestConfig) -> Result<FairnessReport> {
    cfg.validate()?;
    if cfg.ability_i != cfg.ability_j {
        return Err(Error::config("fairness undefined for unequal abilities"));
    }
    let condition = if cfg.delta_i == 1.0 && cfg.delta_j == 1.0 {
        FairnessCondition::NoBias
    } else if cfg.pi == 0.5 && cfg.delta_i == cfg.delta_j {
        FairnessCondition::RandomizedAndSymmetric
    } else if ((cfg.delta_j - cfg.delta_i) - (1.0 - 2.0 * cfg.pi) * (1.0 - cfg.delta_i * cfg.delta_j)).abs()
        <= FAIRNESS_TOLERANCE
    {
        FairnessCondition::OffsettingAdvantages
    } else {
        FairnessCondition::Neither
    };
    Ok(FairnessReport {
        fair: condition != FairnessCondition::Neither,
        condition,
        win_prob: win_prob_exante(cfg)?,
    })
}

// ---------------------------------------------------------------------------
// best-of-K legs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LegOrder {
    /// Leg starters alternate: A B A B ...
    Alternating,
    /// Tie-break style: A B B A A B B ...
    Abba,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchFormat {
    /// Odd number of legs K; the first to (K + 1) / 2 legs wins.
    pub legs: usize,
    pub order: LegOrder,
    /// The second mover may answer a finished leg, which removes the
    /// per-leg advantage (leg odds `A_i / (A_i + A_j)`).
    pub catch_up: bool,
}

pub const MAX_ENUMERATED_LEGS: usize = 13;

impl MatchFormat {
    pub fn best_of(legs: usize) -> Self {
        MatchFormat {
            legs,
            order: LegOrder::Alternating,
            catch_up: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.legs == 0 || self.legs % 2 == 0 {
            return Err(Error::config(format!(
                "best-of-K needs an odd positive K, got {}",
                self.legs
            )));
        }
        Ok(())
    }

    pub fn legs_to_win(&self) -> usize {
        self.legs.div_ceil(2)
    }

    /// Whether the match starter also starts leg `leg` (0-based).
    pub fn match_starter_opens(&self, leg: usize) -> bool {
        match self.order {
            LegOrder::Alternating => leg % 2 == 0,
            LegOrder::Abba => leg == 0 || ((leg - 1) / 2) % 2 == 1,
        }
    }

    /// Leg-win probabilities of `i`: (i opens the leg, j opens the leg).
    pub fn leg_probs(&self, ability_i: f64, ability_j: f64, delta_i: f64, delta_j: f64) -> Result<(f64, f64)> {
        if self.catch_up {
            check_ability(ability_i)?;
            check_ability(ability_j)?;
            let p = ability_i / (ability_i + ability_j);
            Ok((p, p))
        } else {
            Ok((
                win_prob_starter(ability_i, ability_j, delta_i)?,
                win_prob_nonstarter(ability_i, ability_j, delta_j)?,
            ))
        }
    }

    fn leg_prob(&self, leg: usize, i_starts_match: bool, probs: (f64, f64)) -> f64 {
        let i_opens = self.match_starter_opens(leg) == i_starts_match;
        if i_opens {
            probs.0
        } else {
            probs.1
        }
    }

    /// Match-win probability of `i` by dynamic programming over the leg
    /// score, stopping as soon as either side reaches the winning count.
    pub fn match_win_prob(&self, probs: (f64, f64), i_starts_match: bool) -> Result<f64> {
        self.validate()?;
        let need = self.legs_to_win();
        // state[w] = probability of i having w leg wins after `leg` legs,
        // restricted to undecided matches
        let mut state = vec![0.0; need];
        state[0] = 1.0;
        let mut won = 0.0;
        for leg in 0..self.legs {
            let p = self.leg_prob(leg, i_starts_match, probs);
            let mut next = vec![0.0; need];
            for (w, &mass) in state.iter().enumerate() {
                if mass == 0.0 {
                    continue;
                }
                let lost = leg - w;
                if w + 1 == need {
                    won += mass * p;
                } else {
                    next[w + 1] += mass * p;
                }
                if lost + 1 < need {
                    next[w] += mass * (1.0 - p);
                }
            }
            state = next;
        }
        Ok(won)
    }

    /// Match-win probability of `i` by summing over all 2^K leg outcome
    /// sequences (every leg played out; the majority winner is the first to
    /// reach (K + 1) / 2). Limited to K <= 13.
    pub fn match_win_prob_enumerated(&self, probs: (f64, f64), i_starts_match: bool) -> Result<f64> {
        self.validate()?;
        if self.legs > MAX_ENUMERATED_LEGS {
            return Err(Error::config(format!(
                "enumeration limited to K <= {MAX_ENUMERATED_LEGS}"
            )));
        }
        let leg_p: Vec<f64> = (0..self.legs)
            .map(|l| self.leg_prob(l, i_starts_match, probs))
            .collect();
        let need = self.legs_to_win() as u32;
        let mut total = 0.0;
        for seq in 0u32..(1 << self.legs) {
            if seq.count_ones() < need {
                continue;
            }
            let mut pr = 1.0;
            for (l, p) in leg_p.iter().enumerate() {
                pr *= if seq >> l & 1 == 1 { *p } else { 1.0 - p };
            }
            total += pr;
        }
        Ok(total)
    }

    /// Plays one match leg by leg; true when `i` wins.
    pub fn play<R: Rng>(&self, probs: (f64, f64), i_starts_match: bool, rng: &mut R) -> bool {
        let need = self.legs_to_win();
        let (mut wi, mut wj) = (0, 0);
        for leg in 0..self.legs {
            if rng.random::<f64>() < self.leg_prob(leg, i_starts_match, probs) {
                wi += 1;
            } else {
                wj += 1;
            }
            if wi == need || wj == need {
                break;
            }
        }
        wi == need
    }
}

// ---------------------------------------------------------------------------
// simulator

/// `δ = min(1, base + home_shift·home + experience_shift·experience)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaModel {
    pub base: f64,
    pub home_shift: f64,
    pub experience_shift: f64,
}

impl DeltaModel {
    pub fn constant(delta: f64) -> Self {
        DeltaModel {
            base: delta,
            home_shift: 0.0,
            experience_shift: 0.0,
        }
    }

    pub fn delta(&self, home: f64, experience: f64) -> f64 {
        (self.base + self.home_shift * home + self.experience_shift * experience).min(1.0)
    }

    fn validate(&self) -> Result<()> {
        for home in [0.0, 1.0] {
            for exp in [0.0, 1.0] {
                let d = self.delta(home, exp);
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::config(format!(
                        "delta model yields δ={d} (home={home}, experience={exp}); must be in (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Shootout model: `π = clamp(logistic(intercept + ability_slope ·
/// (log A_i - log A_j)), 0.05, 0.95)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiModel {
    pub intercept: f64,
    pub ability_slope: f64,
}

impl PiModel {
    pub fn randomized() -> Self {
        PiModel {
            intercept: 0.0,
            ability_slope: 0.0,
        }
    }

    pub fn pi(&self, log_ability_gap: f64) -> f64 {
        bounded_logistic(self.intercept + self.ability_slope * log_ability_gap, PI_BOUNDS)
    }
}

fn bounded_logistic(eta: f64, (lo, hi): (f64, f64)) -> f64 {
    (1.0 / (1.0 + (-eta).exp())).clamp(lo, hi)
}

/// Linear design on covariates `x_k ~ U(0, 1)`:
/// `P(Y(0)=1) = clamp(m(x))`, `P(Y(1)=1) = clamp(m(x) + τ(x))` with
/// `m`, `τ` affine and the treatment probability a bounded logistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearDgp {
    pub outcome_intercept: f64,
    pub outcome_slopes: Vec<f64>,
    pub effect_intercept: f64,
    pub effect_slopes: Vec<f64>,
    pub propensity_intercept: f64,
    pub propensity_slopes: Vec<f64>,
}

impl LinearDgp {
    fn n_covariates(&self) -> usize {
        self.outcome_slopes.len()
    }

    fn validate(&self) -> Result<()> {
        let p = self.n_covariates();
        if p == 0 {
            return Err(Error::config("linear design needs at least one covariate"));
        }
        if self.effect_slopes.len() != p || self.propensity_slopes.len() != p {
            return Err(Error::config(
                "outcome, effect and propensity slopes must have equal length",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DgpKind {
    /// Match outcome drawn directly from the contest probabilities, or leg
    /// by leg when a format is given.
    Contest { format: Option<MatchFormat> },
    GenericLinear(LinearDgp),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_matches: usize,
    /// Size of the player pool; the cluster id is the index of player `i`.
    pub n_players: usize,
    /// Standard deviation of log ability across players.
    pub ability_sd: f64,
    pub home_share: f64,
    pub delta: DeltaModel,
    pub pi: PiModel,
    /// Extra N(0, 1) covariates unrelated to anything.
    pub noise_covariates: usize,
    pub seed: u64,
    pub dgp: DgpKind,
}

impl SimConfig {
    /// Confounded contest: better players win the shootout more often and
    /// also win more, so the naive starter/non-starter comparison is biased.
    /// A constant δ = 0.83 puts the population ATE at about 0.0865.
    pub fn darts_like(n_matches: usize, seed: u64) -> Self {
        SimConfig {
            n_matches,
            n_players: 400,
            ability_sd: 0.4,
            home_share: 0.2,
            delta: DeltaModel::constant(0.83),
            pi: PiModel {
                intercept: 0.0,
                ability_slope: 2.0,
            },
            noise_covariates: 1,
            seed,
            dgp: DgpKind::Contest { format: None },
        }
    }

    /// Linear design with a single covariate `x1` and effect
    /// `effect_intercept + effect_slope · x1`.
    pub fn linear_effect(n_matches: usize, effect_intercept: f64, effect_slope: f64, seed: u64) -> Self {
        SimConfig {
            n_matches,
            n_players: 200,
            ability_sd: 0.0,
            home_share: 0.0,
            delta: DeltaModel::constant(1.0),
            pi: PiModel::randomized(),
            noise_covariates: 0,
            seed,
            dgp: DgpKind::GenericLinear(LinearDgp {
                outcome_intercept: 0.3,
                outcome_slopes: vec![0.3],
                effect_intercept,
                effect_slopes: vec![effect_slope],
                propensity_intercept: -0.5,
                propensity_slopes: vec![1.0],
            }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_matches < 2 {
            return Err(Error::config(format!(
                "n_matches must be at least 2, got {}",
                self.n_matches
            )));
        }
        if self.n_players < 2 {
            return Err(Error::config("need at least 2 players"));
        }
        if !(self.ability_sd >= 0.0 && self.ability_sd.is_finite()) {
            return Err(Error::config("ability_sd must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.home_share) {
            return Err(Error::config("home_share outside [0, 1]"));
        }
        self.delta.validate()?;
        match &self.dgp {
            DgpKind::Contest { format: Some(f) } => f.validate(),
            DgpKind::Contest { format: None } => Ok(()),
            DgpKind::GenericLinear(l) => l.validate(),
        }
    }
}

/// Hidden truth for one simulated row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub row: usize,
    /// P(Y(1) = 1), P(Y(0) = 1)
    pub p1: f64,
    pub p0: f64,
    pub y1: u8,
    pub y0: u8,
    pub tau: f64,
}

#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub dataset: Dataset,
    pub truth: Vec<TruthRow>,
    /// True propensity P(D = 1 | X) per row.
    pub propensity: Vec<f64>,
}

impl SimulatedDataset {
    pub fn true_ate(&self) -> f64 {
        true_ate(&self.truth).expect("simulated data is non-empty")
    }

    /// Truth file: `row,p1,p0,y1,y0,tau`.
    pub fn truth_csv(&self) -> String {
        let mut s = String::from("row,p1,p0,y1,y0,tau\n");
        for t in &self.truth {
            let _ = writeln!(s, "{},{},{},{},{},{}", t.row, t.p1, t.p0, t.y1, t.y0, t.tau);
        }
        s
    }

    pub fn write_truth_csv<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(self.truth_csv().as_bytes())
            .map_err(|e| Error::data(format!("writing truth file: {e}")))
    }
}

/// Mean of `p1 - p0`, the finite-population average effect.
pub fn true_ate(truth: &[TruthRow]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::data("no simulated truth available"));
    }
    Ok(truth.iter().map(|t| t.tau).sum::<f64>() / truth.len() as f64)
}

pub fn read_truth_csv<R: std::io::Read>(input: R) -> Result<Vec<TruthRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::data(format!("truth file: {e}"))))
        .collect()
}

struct RowDraw {
    record: ObservationRecord,
    truth: TruthRow,
    propensity: f64,
}

const TAG_PLAYERS: u64 = 0x706c_6179;
const TAG_ROWS: u64 = 0x726f_7773;

pub fn simulate(cfg: &SimConfig) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let (x_columns, z_names) = simulated_columns(cfg);
    let players: Vec<f64> = {
        let mut rng = stream_rng(derive_seed(cfg.seed, TAG_PLAYERS), 0);
        let normal = Normal::new(0.0, cfg.ability_sd).map_err(|e| Error::config(e.to_string()))?;
        (0..cfg.n_players).map(|_| normal.sample(&mut rng)).collect()
    };
    let row_seed = derive_seed(cfg.seed, TAG_ROWS);
    let draws = (0..cfg.n_matches)
        .into_par_iter()
        .map(|row| draw_row(cfg, &players, row, &mut stream_rng(row_seed, row as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(draws.len());
    let mut truth = Vec::with_capacity(draws.len());
    let mut propensity = Vec::with_capacity(draws.len());
    for d in draws {
        records.push(d.record);
        truth.push(d.truth);
        propensity.push(d.propensity);
    }
    let provenance = Provenance {
        source: format!("simulated (seed {})", cfg.seed),
        n_source_rows: cfg.n_matches,
        ..Default::default()
    };
    let z: Vec<&str> = z_names.iter().map(String::as_str).collect();
    let dataset = Dataset::new(
        records,
        "won",
        "starts",
        Some("player".into()),
        x_columns,
        &z,
        provenance,
    )?;
    Ok(SimulatedDataset {
        dataset,
        truth,
        propensity,
    })
}

fn simulated_columns(cfg: &SimConfig) -> (Vec<XColumn>, Vec<String>) {
    let col = |name: &str, kind| XColumn {
        name: name.to_string(),
        kind,
    };
    let (mut cols, z) = match &cfg.dgp {
        DgpKind::Contest { .. } => {
            let cols = vec![
                col("ability_i", ColumnKind::Continuous),
                col("ability_j", ColumnKind::Continuous),
                col("experience_i", ColumnKind::Continuous),
                col("experience_j", ColumnKind::Continuous),
                col("home_i", ColumnKind::Binary),
                col("home_j", ColumnKind::Binary),
            ];
            let z = cols.iter().map(|c| c.name.clone()).collect();
            (cols, z)
        }
        DgpKind::GenericLinear(l) => {
            let cols: Vec<XColumn> = (1..=l.n_covariates())
                .map(|k| col(&format!("x{k}"), ColumnKind::Continuous))
                .collect();
            let z = cols.iter().map(|c| c.name.clone()).collect();
            (cols, z)
        }
    };
    for k in 1..=cfg.noise_covariates {
        cols.push(col(&format!("noise_{k}"), ColumnKind::Continuous));
    }
    (cols, z)
}

fn bernoulli<R: Rng>(rng: &mut R, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p)
}

fn draw_row<R: Rng>(cfg: &SimConfig, players: &[f64], row: usize, rng: &mut R) -> Result<RowDraw> {
    let (mut x, cluster_id, p1, p0, pi, y1, y0) = match &cfg.dgp {
        DgpKind::Contest { format } => {
            let i = rng.random_range(0..players.len());
            let mut j = rng.random_range(0..players.len() - 1);
            if j >= i {
                j += 1;
            }
            let (log_ai, log_aj) = (players[i], players[j]);
            let (ai, aj) = (log_ai.exp(), log_aj.exp());
            let exp_i: f64 = rng.random();
            let exp_j: f64 = rng.random();
            let home_i = f64::from(bernoulli(rng, cfg.home_share));
            let home_j = if home_i == 1.0 {
                0.0
            } else {
                f64::from(bernoulli(rng, cfg.home_share))
            };
            let delta_i = cfg.delta.delta(home_i, exp_i);
            let delta_j = cfg.delta.delta(home_j, exp_j);
            let pi = cfg.pi.pi(log_ai - log_aj);
            let (p1, p0, y1, y0) = match format {
                None => {
                    let p1 = win_prob_starter(ai, aj, delta_i)?;
                    let p0 = win_prob_nonstarter(ai, aj, delta_j)?;
                    (p1, p0, bernoulli(rng, p1), bernoulli(rng, p0))
                }
                Some(f) => {
                    let legs = f.leg_probs(ai, aj, delta_i, delta_j)?;
                    let p1 = f.match_win_prob(legs, true)?;
                    let p0 = f.match_win_prob(legs, false)?;
                    let y1 = u8::from(f.play(legs, true, rng));
                    let y0 = u8::from(f.play(legs, false, rng));
                    (p1, p0, y1, y0)
                }
            };
            let x = vec![log_ai, log_aj, exp_i, exp_j, home_i, home_j];
            (x, i as u64, p1, p0, pi, y1, y0)
        }
        DgpKind::GenericLinear(l) => {
            let x: Vec<f64> = (0..l.n_covariates()).map(|_| rng.random()).collect();
            let dot = |c: f64, s: &[f64]| c + s.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            let m = dot(l.outcome_intercept, &l.outcome_slopes);
            let tau = dot(l.effect_intercept, &l.effect_slopes);
            let (lo, hi) = LINEAR_PROB_BOUNDS;
            let p1 = (m + tau).clamp(lo, hi);
            let p0 = m.clamp(lo, hi);
            let pi = bounded_logistic(dot(l.propensity_intercept, &l.propensity_slopes), PI_BOUNDS);
            let (y1, y0) = (bernoulli(rng, p1), bernoulli(rng, p0));
            (x, (row % cfg.n_players) as u64, p1, p0, pi, y1, y0)
        }
    };
    if !(p1 > 0.0 && p1 < 1.0 && p0 > 0.0 && p0 < 1.0) {
        return Err(Error::numeric(format!(
            "row {row}: potential-outcome probability outside (0, 1)"
        )));
    }
    for _ in 0..cfg.noise_covariates {
        x.push(rng.sample(StandardNormal));
    }
    let d = bernoulli(rng, pi);
    let y = if d == 1 { y1 } else { y0 };
    Ok(RowDraw {
        record: ObservationRecord {
            y,
            d,
            x,
            cluster_id,
            weight: 1.0,
        },
        truth: TruthRow {
            row,
            p1,
            p0,
            y1,
            y0,
            tau: p1 - p0,
        },
        propensity: pi,
    })
}
