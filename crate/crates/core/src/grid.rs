//! Outer-loop current reference generation.
//!
//! A PI controller acts on the deviation of the converter-wide average SM
//! voltage from nominal and adds a direct-axis correction to the
//! feedforward reference. The dq pair is turned into three phase references
//! with the amplitude-invariant inverse Park and Clarke transforms, with the
//! d axis aligned to the phase-A grid voltage so that a pure d-axis
//! reference is exported at unity power factor.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mmc::LegState;

const SQRT3_2: f64 = 0.866_025_403_784_438_6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn offset(self) -> f64 {
        match self {
            Phase::A => 0.0,
            Phase::B => -2.0 * PI / 3.0,
            Phase::C => 2.0 * PI / 3.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::A => "a",
            Phase::B => "b",
            Phase::C => "c",
        }
    }
}

/// Stiff balanced three-phase grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridModel {
    /// Peak line-to-neutral voltage, V.
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
}

impl Default for GridModel {
    fn default() -> Self {
        GridModel {
            amplitude: 200.0,
            frequency: 60.0,
        }
    }
}

impl GridModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::validation("grid.amplitude", "must be positive"));
        }
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::validation("grid.frequency", "must be positive"));
        }
        Ok(())
    }

    pub fn angle(&self, t: f64) -> f64 {
        2.0 * PI * self.frequency * t
    }
}

pub fn grid_voltage(grid: &GridModel, phase: Phase, t: f64) -> f64 {
    grid.amplitude * (grid.angle(t) + phase.offset()).cos()
}

pub fn abc_to_alpha_beta(abc: [f64; 3]) -> (f64, f64) {
    let [a, b, c] = abc;
    (2.0 / 3.0 * (a - 0.5 * b - 0.5 * c), (b - c) / 3f64.sqrt())
}

pub fn alpha_beta_to_abc(alpha: f64, beta: f64) -> [f64; 3] {
    [
        alpha,
        -0.5 * alpha + SQRT3_2 * beta,
        -0.5 * alpha - SQRT3_2 * beta,
    ]
}

pub fn alpha_beta_to_dq(alpha: f64, beta: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (alpha * c + beta * s, -alpha * s + beta * c)
}

pub fn dq_to_alpha_beta(d: f64, q: f64, theta: f64) -> (f64, f64) {
    let (s, c) = theta.sin_cos();
    (d * c - q * s, d * s + q * c)
}

/// Mean of every SM capacitor voltage in the converter.
pub fn average_sm_voltage(legs: &[LegState]) -> f64 {
    let (sum, count) = legs
        .iter()
        .flat_map(|leg| leg.v_c.iter())
        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    sum / count as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiState {
    pub kp: f64,
    pub ki: f64,
    pub integrator: f64,
    /// Symmetric output limit, A.
    pub limit: f64,
}

impl PiState {
    pub fn new(kp: f64, ki: f64, limit: f64) -> Self {
        PiState {
            kp,
            ki,
            integrator: 0.0,
            limit,
        }
    }
}

/// Advances the PI controller by `dt`. The integrator is clamped to
/// `±limit / ki` and the output to `±limit`.
pub fn pi_update(state: &PiState, error: f64, dt: f64) -> (PiState, f64) {
    debug_assert!(dt > 0.0);
    let bound = if state.ki > 0.0 { state.limit / state.ki } else { f64::INFINITY };
    let integrator = (state.integrator + error * dt).clamp(-bound, bound);
    let correction = (state.kp * error + state.ki * integrator).clamp(-state.limit, state.limit);
    (
        PiState {
            integrator,
            ..state.clone()
        },
        correction,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlSettings {
    /// A/V
    pub kp: f64,
    /// A/(V·s)
    pub ki: f64,
    /// Limit on the PI correction, A.
    pub output_limit: f64,
    /// Feedforward direct-axis current, A peak.
    pub i_d_ff: f64,
    pub i_q_ref: f64,
    /// Seconds between PI updates.
    pub pi_period: f64,
}

impl Default for ControlSettings {
    fn default() -> Self {
        ControlSettings {
            kp: 5.0,
            ki: 200.0,
            output_limit: 30.0,
            i_d_ff: 16.0,
            i_q_ref: 0.0,
            pi_period: 100e-6,
        }
    }
}

impl ControlSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.kp.is_finite()) {
            return Err(Error::validation("control.kp", "must be finite and >= 0"));
        }
        if !(self.ki >= 0.0 && self.ki.is_finite()) {
            return Err(Error::validation("control.ki", "must be finite and >= 0"));
        }
        if !(self.output_limit > 0.0 && self.output_limit.is_finite()) {
            return Err(Error::validation("control.output_limit", "must be positive"));
        }
        if !self.i_d_ff.is_finite() {
            return Err(Error::validation("control.i_d_ff", "must be finite"));
        }
        if !self.i_q_ref.is_finite() {
            return Err(Error::validation("control.i_q_ref", "must be finite"));
        }
        if !(self.pi_period > 0.0 && self.pi_period.is_finite()) {
            return Err(Error::validation("control.pi_period", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurrentReference {
    pub i_d_ff: f64,
    pub i_q_ref: f64,
    /// Total direct-axis reference after the PI correction.
    pub i_d_ref: f64,
    pub i_abc_ref: [f64; 3],
}

/// Per-phase references for a dq current pair at grid time `t`.
pub fn references_from_dq(grid: &GridModel, i_d: f64, i_q: f64, t: f64) -> [f64; 3] {
    let (alpha, beta) = dq_to_alpha_beta(i_d, i_q, grid.angle(t));
    alpha_beta_to_abc(alpha, beta)
}

/// PI energy-balance loop plus feedforward, sampled at its own period.
#[derive(Clone, Debug, PartialEq)]
pub struct CurrentController {
    pub pi: PiState,
    pub correction: f64,
    i_d_ff: f64,
    i_q_ref: f64,
    period: f64,
    next_update: f64,
}

impl CurrentController {
    pub fn new(settings: &ControlSettings) -> Self {
        CurrentController {
            pi: PiState::new(settings.kp, settings.ki, settings.output_limit),
            correction: 0.0,
            i_d_ff: settings.i_d_ff,
            i_q_ref: settings.i_q_ref,
            period: settings.pi_period,
            next_update: 0.0,
        }
    }

    /// References at time `t`. The PI runs when its period has elapsed;
    /// a positive deviation (stored-energy surplus) raises the exported
    /// direct-axis current.
    pub fn make_references(&mut self, grid: &GridModel, avg_v: f64, v_nom: f64, t: f64) -> CurrentReference {
        // relative slack for k * t_s sampling instants
        if t >= self.next_update - 1e-9 * self.period {
            let (pi, correction) = pi_update(&self.pi, avg_v - v_nom, self.period);
            self.pi = pi;
            self.correction = correction;
            self.next_update = t + self.period;
        }
        self.current(grid, t)
    }

    /// References at `t` with the currently held correction.
    pub fn current(&self, grid: &GridModel, t: f64) -> CurrentReference {
        let i_d_ref = self.i_d_ff + self.correction;
        CurrentReference {
            i_d_ff: self.i_d_ff,
            i_q_ref: self.i_q_ref,
            i_d_ref,
            i_abc_ref: references_from_dq(grid, i_d_ref, self.i_q_ref, t),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmc::MmcParams;

    #[test]
    fn grid_voltage_examples() {
        let g = GridModel {
            amplitude: 240.0,
            frequency: 60.0,
        };
        assert_eq!(grid_voltage(&g, Phase::A, 0.0), 240.0);
        assert!(grid_voltage(&g, Phase::A, 1.0 / (4.0 * 60.0)).abs() < 1e-9);
        for k in 0..100 {
            let t = k as f64 * 1.37e-4;
            let sum: f64 = Phase::ALL.iter().map(|&p| grid_voltage(&g, p, t)).sum();
            assert!(sum.abs() < 1e-9);
        }
    }

    #[test]
    fn transforms_round_trip() {
        let abc = [3.0, -1.25, -1.75];
        let (al, be) = abc_to_alpha_beta(abc);
        let (d, q) = alpha_beta_to_dq(al, be, 0.7);
        let (al2, be2) = dq_to_alpha_beta(d, q, 0.7);
        let back = alpha_beta_to_abc(al2, be2);
        for k in 0..3 {
            assert!((back[k] - abc[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_at_zero_angle() {
        let r = references_from_dq(&GridModel::default(), 16.0, 0.0, 0.0);
        assert_eq!(r[0], 16.0);
        assert!((r[1] + 8.0).abs() < 1e-12);
        assert!((r[2] + 8.0).abs() < 1e-12);
        assert_eq!(references_from_dq(&GridModel::default(), 0.0, 0.0, 0.3), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn references_follow_grid_voltage() {
        let g = GridModel::default();
        let mut ctrl = CurrentController::new(&ControlSettings::default());
        for k in 0..50 {
            let t = k as f64 * 3.1e-4;
            let r = ctrl.make_references(&g, 100.0, 100.0, t);
            assert_eq!(r.i_d_ref, 16.0);
            for p in Phase::ALL {
                let expected = 16.0 / 200.0 * grid_voltage(&g, p, t);
                assert!((r.i_abc_ref[p.index()] - expected).abs() < 1e-9);
            }
            assert!(r.i_abc_ref.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn surplus_raises_export() {
        let mut ctrl = CurrentController::new(&ControlSettings::default());
        let r = ctrl.make_references(&GridModel::default(), 102.0, 100.0, 0.0);
        assert!(r.i_d_ref > 16.0);
        let mut ctrl = CurrentController::new(&ControlSettings::default());
        let r = ctrl.make_references(&GridModel::default(), 98.0, 100.0, 0.0);
        assert!(r.i_d_ref < 16.0);
    }

    #[test]
    fn pi_examples() {
        let (_, c) = pi_update(&PiState::new(0.5, 20.0, 30.0), 0.0, 1e-4);
        assert_eq!(c, 0.0);
        let (_, c) = pi_update(&PiState::new(2.0, 0.0, 30.0), 1.5, 1e-4);
        assert_eq!(c, 3.0);

        // pure integral action ramps by ki * e * dt per step, then saturates
        let (ki, e, dt, limit) = (20.0, 2.0, 1e-3, 1.0);
        let mut s = PiState::new(0.0, ki, limit);
        let mut prev = 0.0;
        let mut saturated = false;
        for _ in 0..100 {
            let (next, c) = pi_update(&s, e, dt);
            if !saturated && prev + ki * e * dt <= limit {
                assert!((c - prev - ki * e * dt).abs() < 1e-12);
            } else {
                saturated = true;
                assert_eq!(c, limit);
            }
            prev = c;
            s = next;
        }
        assert!(saturated);
        assert!((s.integrator - limit / ki).abs() < 1e-15);
    }

    #[test]
    fn average_voltage() {
        let p = MmcParams::default();
        let mut legs = vec![LegState::nominal(&p); 3];
        assert_eq!(average_sm_voltage(&legs), 100.0);
        for (k, v) in legs.iter_mut().flat_map(|l| l.v_c.iter_mut()).enumerate() {
            *v = if k % 2 == 0 { 99.0 } else { 101.0 };
        }
        assert_eq!(average_sm_voltage(&legs), 100.0);
    }
}
