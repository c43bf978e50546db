//! Exhaustive cross-check of the four-candidate switching selection.
//!
//! For each arm size n in 2..=6 random leg states are drawn and the
//! selection result is compared with the minimum of the objective over all
//! (n + 1)² insertion-count pairs.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mmc::MmcParams;
use crate::mpc::{better, build_decision, objective_f, select_switching, sort_arm, IdealArmVoltages, SortedArm, SwitchDecision};
use crate::parallel::Execution;

pub const SIZES: std::ops::RangeInclusive<usize> = 2..=6;

/// Minimum of the objective over every insertion-count pair, with the same
/// tie-break as the selection step.
pub fn exhaustive_selection(params: &MmcParams, up: &SortedArm, low: &SortedArm, ideal: &IdealArmVoltages) -> SwitchDecision {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..=up.n() {
        for j in 0..=low.n() {
            let f = objective_f(
                params,
                ideal.v_up_star - up.cumulative[i],
                ideal.v_low_star - low.cumulative[j],
            );
            if best.is_none_or(|b| better((f, i, j), b)) {
                best = Some((f, i, j));
            }
        }
    }
    let (_, k_up, k_low) = best.expect("non-empty candidate set");
    build_decision(params, up, low, ideal, k_up, k_low)
}

/// A random selection problem.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCase {
    pub n: usize,
    pub v_c_upper: Vec<f64>,
    pub v_c_lower: Vec<f64>,
    pub i_upper: f64,
    pub i_lower: f64,
    pub ideal: IdealArmVoltages,
}

impl OracleCase {
    pub fn params(&self) -> MmcParams {
        MmcParams {
            n: self.n,
            v_dc: 100.0 * self.n as f64,
            ..MmcParams::default()
        }
    }

    /// Draws SM voltages within ±20 % of 100 V, random arm-current signs,
    /// and ideal arm voltages spanning slightly beyond the reachable range.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut draw = || (0..n).map(|_| rng.random_range(80.0..120.0)).collect::<Vec<f64>>();
        let v_c_upper = draw();
        let v_c_lower = draw();
        let i_upper = rng.random_range(-20.0..20.0);
        let i_lower = rng.random_range(-20.0..20.0);
        let span_up: f64 = v_c_upper.iter().sum();
        let span_low: f64 = v_c_lower.iter().sum();
        let ideal = IdealArmVoltages {
            v_up_star: rng.random_range(-0.1..1.1) * span_up,
            v_low_star: rng.random_range(-0.1..1.1) * span_low,
        };
        OracleCase {
            n,
            v_c_upper,
            v_c_lower,
            i_upper,
            i_lower,
            ideal,
        }
    }

    /// (selected, exhaustive) decisions.
    pub fn solve(&self) -> Result<(SwitchDecision, SwitchDecision)> {
        let params = self.params();
        let up = sort_arm(&self.v_c_upper, self.i_upper);
        let low = sort_arm(&self.v_c_lower, self.i_lower);
        let selected = select_switching(&params, &up, &low, &self.ideal)?;
        let exhaustive = exhaustive_selection(&params, &up, &low, &self.ideal);
        Ok((selected, exhaustive))
    }
}

impl fmt::Display for OracleCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "v_c upper = {:?}", self.v_c_upper)?;
        writeln!(f, "v_c lower = {:?}", self.v_c_lower)?;
        writeln!(f, "i_upper = {:?}, i_lower = {:?}", self.i_upper, self.i_lower)?;
        write!(f, "v_up* = {:?}, v_low* = {:?}", self.ideal.v_up_star, self.ideal.v_low_star)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub case: OracleCase,
    pub selected: SwitchDecision,
    pub exhaustive: SwitchDecision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SizeReport {
    pub n: usize,
    pub trials: usize,
    pub mismatches: usize,
    /// Largest objective excess of the selection over the exhaustive minimum.
    pub worst_deviation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleReport {
    pub seed: u64,
    pub sizes: Vec<SizeReport>,
    pub first_mismatch: Option<Mismatch>,
}

impl OracleReport {
    pub fn total_mismatches(&self) -> usize {
        self.sizes.iter().map(|s| s.mismatches).sum()
    }

    pub fn worst_deviation(&self) -> f64 {
        self.sizes.iter().map(|s| s.worst_deviation).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.total_mismatches() == 0
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "seed {}", self.seed)?;
        for s in &self.sizes {
            writeln!(
                f,
                "n = {}: {} trials, {} passed, {} mismatches, worst deviation {:e}",
                s.n,
                s.trials,
                s.trials - s.mismatches,
                s.mismatches,
                s.worst_deviation
            )?;
        }
        if let Some(m) = &self.first_mismatch {
            writeln!(f, "first mismatch:\n{}", m.case)?;
            writeln!(
                f,
                "selected (k_up, k_low, f) = ({}, {}, {:e}), exhaustive = ({}, {}, {:e})",
                m.selected.k_up, m.selected.k_low, m.selected.f, m.exhaustive.k_up, m.exhaustive.k_low, m.exhaustive.f
            )?;
        }
        Ok(())
    }
}

fn trial_rng(seed: u64, n: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 40) | trial as u64);
    rng
}

/// Runs `n_trials` random cases for every arm size. A case is a mismatch
/// when the selection's objective exceeds the exhaustive minimum.
pub fn oracle_check(n_trials: usize, seed: u64, execution: Execution) -> Result<OracleReport> {
    if n_trials == 0 {
        return Err(Error::InvalidInput("oracle check needs at least one trial".into()));
    }
    let mut sizes = Vec::new();
    let mut first_mismatch = None;
    for n in SIZES {
        let outcomes = execution.map_indices(n_trials, |trial| -> Result<(f64, Option<Mismatch>)> {
            let case = OracleCase::random(n, &mut trial_rng(seed, n, trial));
            let (selected, exhaustive) = case.solve()?;
            let deviation = selected.f - exhaustive.f;
            let mismatch = (deviation > 0.0).then_some(Mismatch {
                case,
                selected,
                exhaustive,
            });
            Ok((deviation.max(0.0), mismatch))
        });
        let mut report = SizeReport {
            n,
            trials: n_trials,
            mismatches: 0,
            worst_deviation: 0.0,
        };
        for outcome in outcomes {
            let (deviation, mismatch) = outcome?;
            report.worst_deviation = report.worst_deviation.max(deviation);
            if let Some(m) = mismatch {
                report.mismatches += 1;
                first_mismatch.get_or_insert(m);
            }
        }
        sizes.push(report);
    }
    Ok(OracleReport {
        seed,
        sizes,
        first_mismatch,
    })
}
