//! Sorting-and-selection model predictive switching for one phase leg.
//!
//! Capacitor balancing is handled by the sort order: when an arm current
//! charges the capacitors the lowest-voltage SMs come first, otherwise the
//! highest. Inserting the first `k` SMs of each order yields the prefix-sum
//! levels α_k (upper) and β_k (lower); the insertion counts are chosen to
//! minimise the weighted AC-tracking and circulating-current objective by
//! checking only the four level pairs that bracket the ideal arm voltages.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::mmc::{arm_voltages, LegState, MmcParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdealArmVoltages {
    pub v_up_star: f64,
    pub v_low_star: f64,
}

/// Arm voltages that would give exact current tracking and zero
/// circulating current after one period.
pub fn ideal_arm_voltages(params: &MmcParams, state: &LegState, i_ref: f64, v_s: f64) -> IdealArmVoltages {
    let common = params.v_dc / 2.0 + params.l_arm / params.t_s * state.i_z;
    let differential = params.k_prime() * i_ref + v_s - params.l_prime() / params.t_s * state.i_ac;
    IdealArmVoltages {
        v_up_star: common - differential,
        v_low_star: common + differential,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SortedArm {
    /// Arm-local SM indices in insertion priority order.
    pub order: Vec<usize>,
    pub sorted: Vec<f64>,
    /// Prefix sums of `sorted`, length n + 1, starting at 0.
    pub cumulative: Vec<f64>,
}

impl SortedArm {
    pub fn n(&self) -> usize {
        self.order.len()
    }
}

/// Orders one arm for insertion. Ascending voltage when `arm_current >= 0`
/// (charging), descending otherwise; ties keep the lower index first.
pub fn sort_arm(v_c_arm: &[f64], arm_current: f64) -> SortedArm {
    let mut order: Vec<usize> = (0..v_c_arm.len()).collect();
    if arm_current >= 0.0 {
        order.sort_by(|&a, &b| v_c_arm[a].total_cmp(&v_c_arm[b]));
    } else {
        order.sort_by(|&a, &b| v_c_arm[b].total_cmp(&v_c_arm[a]));
    }
    let sorted: Vec<f64> = order.iter().map(|&j| v_c_arm[j]).collect();
    let mut cumulative = Vec::with_capacity(sorted.len() + 1);
    cumulative.push(0.0);
    let mut acc = 0.0;
    for v in &sorted {
        acc += v;
        cumulative.push(acc);
    }
    SortedArm {
        order,
        sorted,
        cumulative,
    }
}

/// Weighted |Δi| + |i_z| objective expressed in arm-voltage deviations.
pub fn objective_f(params: &MmcParams, dv_up: f64, dv_low: f64) -> f64 {
    params.w / (2.0 * params.k_prime()) * (dv_low - dv_up).abs()
        + params.w_z * params.t_s / (2.0 * params.l_arm) * (dv_low + dv_up).abs()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchDecision {
    pub u: Vec<bool>,
    pub k_up: usize,
    pub k_low: usize,
    pub v_up: f64,
    pub v_low: f64,
    pub f: f64,
}

/// Candidate with the smaller objective, then fewer upper, then fewer lower
/// insertions.
pub(crate) fn better(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    match a.0.total_cmp(&b.0) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => (a.1, a.2) < (b.1, b.2),
    }
}

/// Levels bracketing `target`: `[i, i + 1]` with `c[i] <= target < c[i + 1]`,
/// or the single boundary level when `target` lies outside the span.
fn bracket(cumulative: &[f64], target: f64) -> ([usize; 2], usize) {
    let n = cumulative.len() - 1;
    if !(target >= cumulative[0]) {
        return ([0, 0], 1);
    }
    if target >= cumulative[n] {
        return ([n, n], 1);
    }
    let i = cumulative.partition_point(|&c| c <= target) - 1;
    ([i, i + 1], 2)
}

pub(crate) fn build_decision(
    params: &MmcParams,
    up: &SortedArm,
    low: &SortedArm,
    ideal: &IdealArmVoltages,
    k_up: usize,
    k_low: usize,
) -> SwitchDecision {
    let n = up.n();
    let mut u = vec![false; 2 * n];
    for &j in &up.order[..k_up] {
        u[j] = true;
    }
    for &j in &low.order[..k_low] {
        u[n + j] = true;
    }
    let (v_up, v_low) = (up.cumulative[k_up], low.cumulative[k_low]);
    SwitchDecision {
        u,
        k_up,
        k_low,
        v_up,
        v_low,
        f: objective_f(params, ideal.v_up_star - v_up, ideal.v_low_star - v_low),
    }
}

/// Picks insertion counts from the four bracketing level pairs.
pub fn select_switching(
    params: &MmcParams,
    up: &SortedArm,
    low: &SortedArm,
    ideal: &IdealArmVoltages,
) -> Result<SwitchDecision> {
    if up.n() == 0 || low.n() == 0 {
        return Err(Error::Config("arm has no submodules".into()));
    }
    if up.n() != low.n() {
        return Err(Error::Config(format!(
            "arm sizes differ: {} upper vs {} lower",
            up.n(),
            low.n()
        )));
    }
    let (up_idx, up_len) = bracket(&up.cumulative, ideal.v_up_star);
    let (low_idx, low_len) = bracket(&low.cumulative, ideal.v_low_star);
    let mut best: Option<(f64, usize, usize)> = None;
    for &i in &up_idx[..up_len] {
        for &j in &low_idx[..low_len] {
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
    let (_, k_up, k_low) = best.expect("at least one candidate");
    Ok(build_decision(params, up, low, ideal, k_up, k_low))
}

/// Full switching decision for one leg and one period. With
/// `deadline_exceeded` the previously applied vector is kept.
pub fn mpc_tick(
    params: &MmcParams,
    state: &LegState,
    i_ref: f64,
    v_s: f64,
    deadline_exceeded: bool,
) -> Result<SwitchDecision> {
    let n = state.n();
    if n == 0 {
        return Err(Error::Config("arm has no submodules".into()));
    }
    let ideal = ideal_arm_voltages(params, state, i_ref, v_s);
    if deadline_exceeded {
        let u = state.u_applied.clone();
        let (v_up, v_low) = arm_voltages(state, &u);
        return Ok(SwitchDecision {
            k_up: u[..n].iter().filter(|&&x| x).count(),
            k_low: u[n..].iter().filter(|&&x| x).count(),
            f: objective_f(params, ideal.v_up_star - v_up, ideal.v_low_star - v_low),
            u,
            v_up,
            v_low,
        });
    }
    let up = sort_arm(state.upper(), state.i_upper());
    let low = sort_arm(state.lower(), state.i_lower());
    select_switching(params, &up, &low, &ideal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmc::{predict_ac_current, predict_circulating_current};

    fn rel_eq(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs()
    }

    #[test]
    fn ideal_voltages_examples() {
        let p = MmcParams::default();
        let mut s = LegState::nominal(&p);
        let ideal = ideal_arm_voltages(&p, &s, 0.0, 0.0);
        assert_eq!((ideal.v_up_star, ideal.v_low_star), (300.0, 300.0));

        s.i_ac = 16.0;
        let ideal = ideal_arm_voltages(&p, &s, 16.0, 0.0);
        assert!(rel_eq(ideal.v_up_star, 299.952), "{}", ideal.v_up_star);
        assert!(rel_eq(ideal.v_low_star, 300.048), "{}", ideal.v_low_star);

        let mut s = LegState::nominal(&p);
        s.i_z = 0.5;
        let ideal = ideal_arm_voltages(&p, &s, 0.0, 0.0);
        assert!(rel_eq(ideal.v_up_star, 400.0));
        assert!(rel_eq(ideal.v_low_star, 400.0));
    }

    #[test]
    fn sort_examples() {
        let arm = [102.0, 98.0, 100.0];
        let s = sort_arm(&arm, 1.0);
        assert_eq!(s.sorted, vec![98.0, 100.0, 102.0]);
        assert_eq!(s.order, vec![1, 2, 0]);
        assert_eq!(s.cumulative, vec![0.0, 98.0, 198.0, 300.0]);
        assert_eq!(sort_arm(&arm, 0.0).sorted, vec![98.0, 100.0, 102.0]);
        let s = sort_arm(&arm, -1.0);
        assert_eq!(s.sorted, vec![102.0, 100.0, 98.0]);
        let flat = [100.0; 3];
        for sign in [1.0, -1.0] {
            let s = sort_arm(&flat, sign);
            assert_eq!(s.cumulative, vec![0.0, 100.0, 200.0, 300.0]);
            assert_eq!(s.order, vec![0, 1, 2]);
        }
    }

    #[test]
    fn objective_examples() {
        let p = MmcParams::default();
        assert_eq!(objective_f(&p, 0.0, 0.0), 0.0);
        assert!(rel_eq(objective_f(&p, -10.0, 10.0), 20.0 / 600.006));
        assert!((objective_f(&p, -10.0, 10.0) - 0.033333).abs() < 1e-6);
        assert!(rel_eq(objective_f(&p, 10.0, 10.0), 0.05));
    }

    #[test]
    fn selection_examples() {
        let p = MmcParams::default();
        let arm = sort_arm(&[100.0; 6], 1.0);
        let ideal = IdealArmVoltages { v_up_star: 299.952, v_low_star: 300.048 };
        let d = select_switching(&p, &arm, &arm, &ideal).unwrap();
        assert_eq!((d.k_up, d.k_low), (3, 3));
        assert_eq!((d.v_up, d.v_low), (300.0, 300.0));

        let ideal = IdealArmVoltages { v_up_star: 0.0, v_low_star: 600.0 };
        let d = select_switching(&p, &arm, &arm, &ideal).unwrap();
        assert_eq!((d.k_up, d.k_low), (0, 6));
        assert_eq!(d.f, 0.0);
        assert_eq!(d.u, [vec![false; 6], vec![true; 6]].concat());
    }

    #[test]
    fn selection_clamps_outside_span() {
        let p = MmcParams::default();
        let arm = sort_arm(&[100.0; 6], 1.0);
        let ideal = IdealArmVoltages { v_up_star: -50.0, v_low_star: 900.0 };
        let d = select_switching(&p, &arm, &arm, &ideal).unwrap();
        assert_eq!((d.k_up, d.k_low), (0, 6));
    }

    #[test]
    fn empty_arm_is_config_error() {
        let p = MmcParams::default();
        let arm = sort_arm(&[], 1.0);
        let ideal = IdealArmVoltages { v_up_star: 0.0, v_low_star: 0.0 };
        assert!(matches!(select_switching(&p, &arm, &arm, &ideal), Err(Error::Config(_))));
    }

    #[test]
    fn tick_balanced_start_inserts_half() {
        let p = MmcParams::default();
        let s = LegState::nominal(&p);
        let d = mpc_tick(&p, &s, 0.0, 0.0, false).unwrap();
        assert_eq!((d.k_up, d.k_low), (3, 3));
    }

    #[test]
    fn tick_keeps_previous_vector_on_deadline() {
        let p = MmcParams::default();
        let mut s = LegState::nominal(&p);
        s.u_applied = vec![true, false, true, false, false, false, true, true, true, true, false, false];
        let d = mpc_tick(&p, &s, 10.0, 50.0, true).unwrap();
        assert_eq!(d.u, s.u_applied);
        assert_eq!((d.k_up, d.k_low), (2, 4));
        assert_eq!((d.v_up, d.v_low), (200.0, 400.0));
    }

    #[test]
    fn tick_charging_arm_inserts_lowest_voltages() {
        let p = MmcParams::default();
        let mut s = LegState::nominal(&p);
        s.v_c = vec![101.0, 99.0, 100.5, 98.0, 102.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0];
        s.i_ac = 10.0; // i_up = 5 A > 0
        let d = mpc_tick(&p, &s, 10.0, 0.0, false).unwrap();
        let selected: Vec<f64> = (0..6).filter(|&j| d.u[j]).map(|j| s.v_c[j]).collect();
        let rest: Vec<f64> = (0..6).filter(|&j| !d.u[j]).map(|j| s.v_c[j]).collect();
        assert_eq!(selected.len(), d.k_up);
        for a in &selected {
            for b in &rest {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn exact_level_match_tracks_exactly() {
        let p = MmcParams::default();
        let mut s = LegState::nominal(&p);
        s.i_ac = 3.0;
        s.i_z = 0.0;
        // pick the reference that makes (α_2, β_4) = (200, 400) ideal
        // v_low* - v_up* = 2 (K' i_ref + v_s - L'/Ts i) = 200
        let v_s = 20.0;
        let i_ref = (100.0 - v_s + p.l_prime() / p.t_s * s.i_ac) / p.k_prime();
        let ideal = ideal_arm_voltages(&p, &s, i_ref, v_s);
        assert!((ideal.v_up_star - 200.0).abs() < 1e-9);
        let d = mpc_tick(&p, &s, i_ref, v_s, false).unwrap();
        assert_eq!((d.k_up, d.k_low), (2, 4));
        assert!(d.f < 1e-12);
        let i_next = predict_ac_current(&p, &s, d.v_up, d.v_low, v_s);
        assert!((i_next - i_ref).abs() < 1e-12);
        assert!(predict_circulating_current(&p, &s, d.v_up, d.v_low).abs() < 1e-12);
    }
}
