//! Per-leg converter state and the discrete Euler model that advances it.
//!
//! The same difference equations serve as the MPC predictor and as the
//! plant. Submodule indices `0..n` belong to the upper arm and `n..2n` to
//! the lower arm. Arm currents follow `i_up = i_z + i/2`,
//! `i_low = i_z - i/2`, and every SM capacitor additionally receives the
//! current injected by its PV converter whether or not it is inserted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mppt::SmInjection;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmcParams {
    /// Submodules per arm.
    pub n: usize,
    /// DC bus voltage, V.
    pub v_dc: f64,
    /// Sampling period, s.
    pub t_s: f64,
    /// SM capacitance, F.
    pub c_sm: f64,
    /// AC filter resistance, Ω.
    pub r: f64,
    /// AC filter inductance, H.
    pub l_f: f64,
    /// Arm inductance, H.
    pub l_arm: f64,
    /// AC tracking weight.
    pub w: f64,
    /// Circulating current weight.
    pub w_z: f64,
}

impl Default for MmcParams {
    fn default() -> Self {
        MmcParams {
            n: 6,
            v_dc: 600.0,
            t_s: 25e-6,
            c_sm: 5000e-6,
            r: 0.003,
            l_f: 5e-3,
            l_arm: 5e-3,
            w: 1.0,
            w_z: 1.0,
        }
    }
}

impl MmcParams {
    /// L' = L + l/2
    pub fn l_prime(&self) -> f64 {
        self.l_f + self.l_arm / 2.0
    }

    /// K' = R + L'/Ts
    pub fn k_prime(&self) -> f64 {
        self.r + self.l_prime() / self.t_s
    }

    /// Nominal SM voltage V_DC / n.
    pub fn v_nominal(&self) -> f64 {
        self.v_dc / self.n as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::validation("mmc.n", "must be at least 1"));
        }
        let positive = [
            ("mmc.v_dc", self.v_dc),
            ("mmc.t_s", self.t_s),
            ("mmc.c_sm", self.c_sm),
            ("mmc.r", self.r),
            ("mmc.l_f", self.l_f),
            ("mmc.l_arm", self.l_arm),
            ("mmc.w", self.w),
            ("mmc.w_z", self.w_z),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::validation(field, format!("must be positive, got {value}")));
            }
        }
        // sampling must be far faster than a 60 Hz grid period
        if self.t_s > 1e-3 {
            return Err(Error::validation("mmc.t_s", "must be well below the grid period (<= 1 ms)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LegState {
    /// Capacitor voltages, upper arm first.
    pub v_c: Vec<f64>,
    /// AC phase current, A.
    pub i_ac: f64,
    /// Circulating current, A.
    pub i_z: f64,
    /// Insertion vector applied during the last period.
    pub u_applied: Vec<bool>,
}

impl LegState {
    /// All capacitors at V_DC/n, currents at zero, nothing inserted.
    pub fn nominal(params: &MmcParams) -> Self {
        LegState {
            v_c: vec![params.v_nominal(); 2 * params.n],
            i_ac: 0.0,
            i_z: 0.0,
            u_applied: vec![false; 2 * params.n],
        }
    }

    pub fn n(&self) -> usize {
        self.v_c.len() / 2
    }

    pub fn upper(&self) -> &[f64] {
        &self.v_c[..self.n()]
    }

    pub fn lower(&self) -> &[f64] {
        &self.v_c[self.n()..]
    }

    pub fn i_upper(&self) -> f64 {
        self.i_z + self.i_ac / 2.0
    }

    pub fn i_lower(&self) -> f64 {
        self.i_z - self.i_ac / 2.0
    }

    pub fn capacitor_energy(&self, params: &MmcParams) -> f64 {
        0.5 * params.c_sm * self.v_c.iter().map(|v| v * v).sum::<f64>()
    }

    /// Energy in the filter and arm inductors: L' i²/2 + l i_z².
    pub fn inductor_energy(&self, params: &MmcParams) -> f64 {
        0.5 * params.l_prime() * self.i_ac * self.i_ac + params.l_arm * self.i_z * self.i_z
    }
}

/// Upper and lower arm voltages produced by insertion vector `u`.
pub fn arm_voltages(state: &LegState, u: &[bool]) -> (f64, f64) {
    debug_assert_eq!(u.len(), state.v_c.len());
    let n = state.n();
    let sum = |range: std::ops::Range<usize>| {
        range
            .filter(|&j| u[j])
            .map(|j| state.v_c[j])
            .sum::<f64>()
    };
    (sum(0..n), sum(n..2 * n))
}

/// AC current one period ahead.
pub fn predict_ac_current(params: &MmcParams, state: &LegState, v_up: f64, v_low: f64, v_s: f64) -> f64 {
    ((v_low - v_up) / 2.0 - v_s + params.l_prime() / params.t_s * state.i_ac) / params.k_prime()
}

/// Circulating current one period ahead.
pub fn predict_circulating_current(params: &MmcParams, state: &LegState, v_up: f64, v_low: f64) -> f64 {
    params.t_s / (2.0 * params.l_arm) * (params.v_dc - v_low - v_up) + state.i_z
}

/// Applies `u` for one sampling period.
pub fn step_leg(
    params: &MmcParams,
    state: &LegState,
    u: &[bool],
    injections: &[SmInjection],
    v_s: f64,
) -> Result<LegState> {
    let len = state.v_c.len();
    if u.len() != len || injections.len() != len {
        return Err(Error::InvalidInput(format!(
            "leg has {len} SMs but got {} switch states and {} injections",
            u.len(),
            injections.len()
        )));
    }
    let n = state.n();
    let (v_up, v_low) = arm_voltages(state, u);
    let i_ac = predict_ac_current(params, state, v_up, v_low, v_s);
    let i_z = predict_circulating_current(params, state, v_up, v_low);
    let gain = params.t_s / params.c_sm;
    let (i_up, i_low) = (state.i_upper(), state.i_lower());
    let v_c: Vec<f64> = (0..len)
        .map(|j| {
            let i_arm = if j < n { i_up } else { i_low };
            let switched = if u[j] { i_arm } else { 0.0 };
            state.v_c[j] + gain * (switched + injections[j].i_inj)
        })
        .collect();

    if !i_ac.is_finite() {
        return Err(Error::NonFinite { quantity: "AC current".into() });
    }
    if !i_z.is_finite() {
        return Err(Error::NonFinite { quantity: "circulating current".into() });
    }
    if let Some(j) = v_c.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { quantity: format!("capacitor voltage of SM {}", j + 1) });
    }
    Ok(LegState {
        v_c,
        i_ac,
        i_z,
        u_applied: u.to_vec(),
    })
}
