//! Per-submodule perturb-and-observe MPPT and the averaged boost converter
//! that turns the PV operating point into charge for the SM capacitor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pv_model::{EnvironmentSample, PvModel};

/// Below this SM capacitor voltage the converter stops injecting.
pub const V_MIN_THRESHOLD: f64 = 10.0;

/// Relative slack when comparing elapsed time against the update period,
/// so that `k * t_s` sampling instants do not miss a period by one ulp.
const PERIOD_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpptSettings {
    /// Voltage perturbation per update, V.
    pub step: f64,
    /// Seconds between perturbations.
    pub update_period: f64,
    /// Starting PV voltage command. Defaults to 0.8 V_oc.
    pub initial_v_ref: Option<f64>,
}

impl Default for MpptSettings {
    fn default() -> Self {
        MpptSettings {
            step: 0.5,
            update_period: 1e-3,
            initial_v_ref: None,
        }
    }
}

impl MpptSettings {
    pub fn validate(&self, v_oc: f64) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::validation("mppt.step", "must be positive"));
        }
        if !(self.update_period > 0.0 && self.update_period.is_finite()) {
            return Err(Error::validation("mppt.update_period", "must be positive"));
        }
        if let Some(v) = self.initial_v_ref {
            if !(v >= 0.1 * v_oc && v <= v_oc) {
                return Err(Error::validation(
                    "mppt.initial_v_ref",
                    format!("must lie in [{:.3}, {:.3}] V", 0.1 * v_oc, v_oc),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    fn flipped(self) -> Self {
        match self {
            Direction::Up => Direction::Down,
            Direction::Down => Direction::Up,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Direction::Up => 1.0,
            Direction::Down => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpptState {
    pub v_ref: f64,
    pub last_power: f64,
    pub last_direction: Direction,
    pub step: f64,
    pub update_period: f64,
    pub last_update_time: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl MpptState {
    /// Controller for a module with open-circuit voltage `v_oc`. The command
    /// is clamped to `[0.1 v_oc, v_oc]`.
    pub fn new(settings: &MpptSettings, v_oc: f64) -> Self {
        let (v_min, v_max) = (0.1 * v_oc, v_oc);
        MpptState {
            v_ref: settings.initial_v_ref.unwrap_or(0.8 * v_oc).clamp(v_min, v_max),
            last_power: 0.0,
            last_direction: Direction::Up,
            step: settings.step,
            update_period: settings.update_period,
            last_update_time: 0.0,
            v_min,
            v_max,
        }
    }
}

/// One perturb-and-observe decision at time `t` given the power measured at
/// the current command.
pub fn po_step(state: &MpptState, p_now: f64, t: f64) -> Result<MpptState> {
    if !p_now.is_finite() {
        return Err(Error::InvalidInput(format!("measured PV power is not finite: {p_now}")));
    }
    if !(t >= state.last_update_time) {
        return Err(Error::InvalidInput(format!(
            "P&O time went backwards: {t} < {}",
            state.last_update_time
        )));
    }
    if t - state.last_update_time < state.update_period * (1.0 - PERIOD_SLACK) {
        return Ok(state.clone());
    }
    let direction = if p_now >= state.last_power {
        state.last_direction
    } else {
        state.last_direction.flipped()
    };
    Ok(MpptState {
        v_ref: (state.v_ref + direction.sign() * state.step).clamp(state.v_min, state.v_max),
        last_power: p_now,
        last_direction: direction,
        last_update_time: t,
        ..state.clone()
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SmInjection {
    /// Current pushed into the SM capacitor, A.
    pub i_inj: f64,
    /// Power drawn from the PV module, W. Always equals `i_inj * v_c`.
    pub p_pv: f64,
    /// Set when the capacitor voltage is too low to inject into.
    pub suspended: bool,
}

/// Lossless average model of the boost stage: the PV module is held at
/// `state.v_ref` and its power is delivered to the capacitor at `v_c`.
pub fn converter_injection(
    model: &PvModel,
    env: &EnvironmentSample,
    state: &MpptState,
    v_c: f64,
) -> Result<SmInjection> {
    if !v_c.is_finite() {
        return Err(Error::InvalidInput(format!("SM voltage is not finite: {v_c}")));
    }
    if v_c <= V_MIN_THRESHOLD {
        return Ok(SmInjection {
            i_inj: 0.0,
            p_pv: 0.0,
            suspended: true,
        });
    }
    let p = model.power(env, state.v_ref)?;
    let i_inj = p / v_c;
    Ok(SmInjection {
        i_inj,
        p_pv: i_inj * v_c,
        suspended: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pv_model::PvModuleParams;

    fn state() -> MpptState {
        MpptState::new(&MpptSettings::default(), 64.2)
    }

    #[test]
    fn holds_between_updates() {
        let s = state();
        let next = po_step(&s, 100.0, 0.5e-3).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn keeps_direction_when_power_rises() {
        let mut s = state();
        s.last_power = 100.0;
        let next = po_step(&s, 120.0, 1e-3).unwrap();
        assert_eq!(next.v_ref, s.v_ref + 0.5);
        assert_eq!(next.last_direction, Direction::Up);
        assert_eq!(next.last_power, 120.0);
        assert_eq!(next.last_update_time, 1e-3);
    }

    #[test]
    fn reverses_when_power_falls() {
        let mut s = state();
        s.last_power = 100.0;
        let next = po_step(&s, 90.0, 1e-3).unwrap();
        assert_eq!(next.v_ref, s.v_ref - 0.5);
        assert_eq!(next.last_direction, Direction::Down);
    }

    #[test]
    fn update_fires_on_sampled_period_boundary() {
        // 40 steps of 25 us do not sum to exactly 1 ms in floating point
        let t = 40.0 * 25e-6;
        let next = po_step(&state(), 10.0, t).unwrap();
        assert_ne!(next.v_ref, state().v_ref);
    }

    #[test]
    fn rejects_non_finite_power_and_time_reversal() {
        assert!(matches!(po_step(&state(), f64::NAN, 1.0), Err(Error::InvalidInput(_))));
        let mut s = state();
        s.last_update_time = 2.0;
        assert!(po_step(&s, 1.0, 1.0).is_err());
    }

    #[test]
    fn command_stays_clamped() {
        let mut s = state();
        s.v_ref = 64.0;
        s.last_power = 0.0;
        let mut t = 0.0;
        for _ in 0..10 {
            t += 1e-3;
            s = po_step(&s, 1.0, t).unwrap();
        }
        assert_eq!(s.v_ref, 64.2);
    }

    #[test]
    fn injection_conserves_power() {
        let model = PvModel::fit(&PvModuleParams::spr_305e()).unwrap();
        let mut s = state();
        s.v_ref = 54.7;
        let inj = converter_injection(&model, &EnvironmentSample::stc(), &s, 100.0).unwrap();
        assert_eq!(inj.i_inj * 100.0, inj.p_pv);
        assert!(!inj.suspended);
        let p = model.power(&EnvironmentSample::stc(), 54.7).unwrap();
        assert!((inj.i_inj - p / 100.0).abs() < 1e-15);
    }

    #[test]
    fn injection_examples() {
        let model = PvModel::fit(&PvModuleParams::spr_305e()).unwrap();
        let s = state();
        let dark = converter_injection(&model, &EnvironmentSample::new(0.0, 25.0), &s, 100.0).unwrap();
        assert_eq!((dark.i_inj, dark.p_pv), (0.0, 0.0));
        let low = converter_injection(&model, &EnvironmentSample::stc(), &s, 10.0).unwrap();
        assert!(low.suspended);
        assert_eq!((low.i_inj, low.p_pv), (0.0, 0.0));
        // Table I maximum power pushed into a 100 V capacitor
        assert!((305.226_f64 / 100.0 - 3.05226).abs() < 1e-15);
    }
}
