//! Single-diode five-parameter PV module model and irradiance scenarios.
//!
//! The model is fitted once from datasheet values at standard test
//! conditions (1000 W/m², 25 °C). For a candidate diode ideality factor the
//! series and shunt resistances, photocurrent and saturation current are
//! solved so that the I-V curve passes through short circuit, open circuit
//! and the maximum power point with zero power slope there. The ideality
//! factor itself is picked by a bounded golden-section search so that the
//! modelled open-circuit voltage drifts with temperature at the datasheet
//! coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STC_IRRADIANCE: f64 = 1000.0;
pub const STC_TEMPERATURE: f64 = 25.0;

const KELVIN_OFFSET: f64 = 273.15;
const BOLTZMANN: f64 = 1.380649e-23; // J/K
const ELEMENTARY_CHARGE: f64 = 1.602176634e-19; // C
const BOLTZMANN_EV: f64 = 8.617333262e-5; // eV/K
const BANDGAP_REF: f64 = 1.121; // eV, crystalline silicon
const BANDGAP_DRIFT: f64 = -0.0002677; // 1/K

const IDEALITY_BOUNDS: (f64, f64) = (0.8, 1.3);
const SOLVER_TOL: f64 = 1e-9;
const SOLVER_MAX_ITER: usize = 50;

/// Datasheet values of a PV module at standard test conditions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PvModuleParams {
    pub p_max: f64,
    pub v_oc: f64,
    pub i_sc: f64,
    pub v_mpp: f64,
    pub i_mpp: f64,
    pub n_cells: u32,
    /// Temperature coefficient of `v_oc` in %/°C.
    pub k_v: f64,
    /// Temperature coefficient of `i_sc` in %/°C.
    pub k_i: f64,
}

impl PvModuleParams {
    /// SunPower SPR-305E-WHT-D.
    pub fn spr_305e() -> Self {
        PvModuleParams {
            p_max: 305.226,
            v_oc: 64.2,
            i_sc: 5.96,
            v_mpp: 54.7,
            i_mpp: 5.58,
            n_cells: 96,
            k_v: -0.27269,
            k_i: 0.061745,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("pv.p_max", self.p_max),
            ("pv.v_oc", self.v_oc),
            ("pv.i_sc", self.i_sc),
            ("pv.v_mpp", self.v_mpp),
            ("pv.i_mpp", self.i_mpp),
            ("pv.k_v", self.k_v),
            ("pv.k_i", self.k_i),
        ];
        for (field, value) in finite {
            if !value.is_finite() {
                return Err(Error::validation(field, "must be finite"));
            }
        }
        if self.n_cells == 0 {
            return Err(Error::validation("pv.n_cells", "must be positive"));
        }
        if !(self.v_mpp > 0.0 && self.v_mpp < self.v_oc) {
            return Err(Error::validation("pv.v_mpp", "must satisfy 0 < v_mpp < v_oc"));
        }
        if !(self.i_mpp > 0.0 && self.i_mpp < self.i_sc) {
            return Err(Error::validation("pv.i_mpp", "must satisfy 0 < i_mpp < i_sc"));
        }
        let mismatch = (self.v_mpp * self.i_mpp - self.p_max).abs() / self.p_max;
        if !(mismatch <= 0.005) {
            return Err(Error::validation(
                "pv.p_max",
                format!("v_mpp * i_mpp deviates from p_max by {:.2}%", mismatch * 100.0),
            ));
        }
        Ok(())
    }
}

impl Default for PvModuleParams {
    fn default() -> Self {
        Self::spr_305e()
    }
}

/// Irradiance and cell temperature seen by one module at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvironmentSample {
    /// W/m²
    pub irradiance: f64,
    /// °C
    pub temperature: f64,
}

impl EnvironmentSample {
    pub fn new(irradiance: f64, temperature: f64) -> Self {
        EnvironmentSample {
            irradiance,
            temperature,
        }
    }

    pub fn stc() -> Self {
        Self::new(STC_IRRADIANCE, STC_TEMPERATURE)
    }
}

/// Piecewise-linear time series given as `[t, value]` knots with strictly
/// increasing times. Held constant outside the knot span.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseLinear(Vec<[f64; 2]>);

impl PiecewiseLinear {
    pub fn new(knots: Vec<[f64; 2]>) -> Result<Self> {
        let series = PiecewiseLinear(knots);
        series.validate("series")?;
        Ok(series)
    }

    pub fn constant(value: f64) -> Self {
        PiecewiseLinear(vec![[0.0, value]])
    }

    pub fn knots(&self) -> &[[f64; 2]] {
        &self.0
    }

    pub fn validate(&self, field: &str) -> Result<()> {
        if self.0.is_empty() {
            return Err(Error::validation(field, "needs at least one knot"));
        }
        for knot in &self.0 {
            if !knot[0].is_finite() || !knot[1].is_finite() {
                return Err(Error::validation(field, "knots must be finite"));
            }
            if knot[1] < 0.0 {
                return Err(Error::validation(field, "values must be non-negative"));
            }
        }
        if self.0.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err(Error::validation(field, "knot times must be strictly increasing"));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> f64 {
        let knots = &self.0;
        let first = knots[0];
        if t <= first[0] {
            return first[1];
        }
        let last = knots[knots.len() - 1];
        if t >= last[0] {
            return last[1];
        }
        // first knot with time > t; guaranteed in 1..len
        let hi = knots.partition_point(|k| k[0] <= t);
        let (a, b) = (knots[hi - 1], knots[hi]);
        a[1] + (b[1] - a[1]) * (t - a[0]) / (b[0] - a[0])
    }

    /// Multiplies every knot time by `factor`.
    pub fn stretched(&self, factor: f64) -> Self {
        PiecewiseLinear(self.0.iter().map(|k| [k[0] * factor, k[1]]).collect())
    }
}

/// Irradiance seen by one module: a shared base series scaled by a
/// per-module factor, optionally dropping to zero for good at `failure_time`.
#[derive(Clone, Debug, PartialEq)]
pub struct IrradianceProfile {
    pub base: PiecewiseLinear,
    pub scale: f64,
    pub failure_time: Option<f64>,
}

impl IrradianceProfile {
    pub fn new(base: PiecewiseLinear, scale: f64, failure_time: Option<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&scale) {
            return Err(Error::validation("scale", "must lie in [0, 1]"));
        }
        base.validate("base")?;
        Ok(IrradianceProfile {
            base,
            scale,
            failure_time,
        })
    }

    pub fn irradiance(&self, t: f64) -> f64 {
        match self.failure_time {
            Some(tf) if t >= tf => 0.0,
            _ => self.base.eval(t) * self.scale,
        }
    }
}

/// Environment of module `module_id` (index into `profiles`) at time `t`.
pub fn sample_environment(
    profiles: &[IrradianceProfile],
    module_id: usize,
    t: f64,
    temperature: f64,
) -> Result<EnvironmentSample> {
    let profile = profiles.get(module_id).ok_or_else(|| {
        Error::Config(format!(
            "unknown module id {module_id} ({} modules configured)",
            profiles.len()
        ))
    })?;
    if !(t >= 0.0) {
        return Err(Error::InvalidInput(format!("sample time must be >= 0, got {t}")));
    }
    Ok(EnvironmentSample::new(profile.irradiance(t), temperature))
}

/// Diode equation coefficients at one operating condition.
#[derive(Clone, Copy, Debug)]
struct DiodeCurve {
    i_l: f64,
    i_0: f64,
    /// Modified ideality factor n·Ns·kT/q in volts.
    a: f64,
    r_s: f64,
    r_sh: f64,
}

impl DiodeCurve {
    fn residual(&self, v: f64, i: f64) -> (f64, f64) {
        let x = v + i * self.r_s;
        let e = (x / self.a).exp();
        let g = self.i_l - self.i_0 * (e - 1.0) - x / self.r_sh - i;
        let dg = -self.i_0 * self.r_s / self.a * e - self.r_s / self.r_sh - 1.0;
        (g, dg)
    }

    /// Terminal current at `v`, clamped at zero beyond open circuit.
    fn current(&self, v: f64) -> f64 {
        let (g0, _) = self.residual(v, 0.0);
        if !(g0 > 0.0) {
            return 0.0;
        }
        // residual is strictly decreasing in i; root lies in (0, i_l]
        let (mut lo, mut hi) = (0.0, self.i_l);
        let mut i = hi;
        for _ in 0..SOLVER_MAX_ITER {
            let (g, dg) = self.residual(v, i);
            if g > 0.0 {
                lo = i;
            } else {
                hi = i;
            }
            let mut next = i - g / dg;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - i).abs() < SOLVER_TOL {
                return next;
            }
            i = next;
        }
        i
    }

    fn open_circuit_voltage(&self) -> f64 {
        if self.i_l <= 0.0 {
            return 0.0;
        }
        let mut lo = 0.0;
        let mut hi = self.a * (self.i_l / self.i_0 + 1.0).ln();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.residual(mid, 0.0).0 > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// PV module model fitted to a datasheet.
#[derive(Clone, Debug, PartialEq)]
pub struct PvModel {
    params: PvModuleParams,
    ideality: f64,
    a_ref: f64,
    i_l_ref: f64,
    i_0_ref: f64,
    r_s: f64,
    r_sh: f64,
}

impl PvModel {
    pub fn fit(params: &PvModuleParams) -> Result<Self> {
        params.validate()?;
        let target = params.k_v / 100.0 * params.v_oc;
        let mismatch = |n: f64| match fit_at_ideality(params, n) {
            Ok(model) => (model.voc_temperature_slope() - target).powi(2),
            Err(_) => f64::INFINITY,
        };
        let n = golden_section_min(mismatch, IDEALITY_BOUNDS.0, IDEALITY_BOUNDS.1, 1e-7);
        fit_at_ideality(params, n)
    }

    pub fn params(&self) -> &PvModuleParams {
        &self.params
    }

    pub fn ideality(&self) -> f64 {
        self.ideality
    }

    pub fn series_resistance(&self) -> f64 {
        self.r_s
    }

    pub fn shunt_resistance(&self) -> f64 {
        self.r_sh
    }

    fn curve(&self, env: &EnvironmentSample) -> DiodeCurve {
        let t_ref = STC_TEMPERATURE + KELVIN_OFFSET;
        let t = env.temperature + KELVIN_OFFSET;
        let alpha_isc = self.params.k_i / 100.0 * self.params.i_sc;
        let bandgap = BANDGAP_REF * (1.0 + BANDGAP_DRIFT * (t - t_ref));
        DiodeCurve {
            i_l: env.irradiance / STC_IRRADIANCE * (self.i_l_ref + alpha_isc * (t - t_ref)),
            i_0: self.i_0_ref
                * (t / t_ref).powi(3)
                * ((BANDGAP_REF / t_ref - bandgap / t) / BOLTZMANN_EV).exp(),
            a: self.a_ref * t / t_ref,
            r_s: self.r_s,
            r_sh: self.r_sh,
        }
    }

    fn check(env: &EnvironmentSample, v: f64) -> Result<()> {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidInput(format!("PV voltage must be finite and >= 0, got {v}")));
        }
        check_env(env)
    }

    pub fn current(&self, env: &EnvironmentSample, v: f64) -> Result<f64> {
        Self::check(env, v)?;
        Ok(self.curve(env).current(v))
    }

    pub fn power(&self, env: &EnvironmentSample, v: f64) -> Result<f64> {
        Ok(self.current(env, v)? * v)
    }

    pub fn open_circuit_voltage(&self, env: &EnvironmentSample) -> Result<f64> {
        check_env(env)?;
        Ok(self.curve(env).open_circuit_voltage())
    }

    fn voc_temperature_slope(&self) -> f64 {
        let at = |temperature| {
            self.curve(&EnvironmentSample::new(STC_IRRADIANCE, temperature))
                .open_circuit_voltage()
        };
        (at(STC_TEMPERATURE + 1.0) - at(STC_TEMPERATURE - 1.0)) / 2.0
    }
}

fn check_env(env: &EnvironmentSample) -> Result<()> {
    if !env.irradiance.is_finite() || env.irradiance < 0.0 {
        return Err(Error::InvalidInput(format!(
            "irradiance must be finite and >= 0, got {}",
            env.irradiance
        )));
    }
    if !env.temperature.is_finite() {
        return Err(Error::InvalidInput("temperature must be finite".into()));
    }
    Ok(())
}

/// Solves the four STC conditions for a fixed ideality factor `n`.
///
/// For given (r_s, g_sh = 1/r_sh) the short- and open-circuit conditions are
/// linear in (i_l, i_0). The MPP point condition then fixes g_sh for each
/// r_s, and r_s is found from the zero power slope at the MPP.
fn fit_at_ideality(params: &PvModuleParams, n: f64) -> Result<PvModel> {
    let t_ref = STC_TEMPERATURE + KELVIN_OFFSET;
    let a = n * params.n_cells as f64 * BOLTZMANN * t_ref / ELEMENTARY_CHARGE;
    let (isc, voc, vm, im) = (params.i_sc, params.v_oc, params.v_mpp, params.i_mpp);

    let currents = |r_s: f64, g: f64| {
        let i_0 = (isc * (1.0 + r_s * g) - voc * g) / ((voc / a).exp() - (isc * r_s / a).exp());
        let i_l = voc * g + i_0 * ((voc / a).exp() - 1.0);
        (i_l, i_0)
    };
    let mpp_point = |r_s: f64, g: f64| {
        let (i_l, i_0) = currents(r_s, g);
        let x = vm + im * r_s;
        i_l - i_0 * ((x / a).exp() - 1.0) - x * g - im
    };
    let mpp_slope = |r_s: f64, g: f64| {
        let (_, i_0) = currents(r_s, g);
        let x = vm + im * r_s;
        let gd = i_0 / a * (x / a).exp() + g;
        im / vm - gd / (1.0 + r_s * gd)
    };

    if !(mpp_point(0.0, 0.0) > 0.0) {
        return Err(Error::Fit(format!("ideality {n:.4} cannot reach the datasheet fill factor")));
    }
    let r_s_max = bisect(|r| mpp_point(r, 0.0), 0.0, (voc - vm) / im)
        .ok_or_else(|| Error::Fit("no series-resistance bracket".into()))?;
    let g_max = 0.999 * isc / voc;
    let shunt_for = |r_s: f64| bisect(|g| mpp_point(r_s, g), 0.0, g_max);
    let r_s = bisect(
        |r| shunt_for(r).map_or(f64::NAN, |g| mpp_slope(r, g)),
        0.0,
        r_s_max * (1.0 - 1e-9),
    )
    .ok_or_else(|| Error::Fit(format!("no series resistance satisfies the MPP slope at ideality {n:.4}")))?;
    let g = shunt_for(r_s).ok_or_else(|| Error::Fit("no shunt conductance".into()))?;
    if !(g > 0.0) {
        return Err(Error::Fit("shunt conductance collapsed to zero".into()));
    }
    let (i_l, i_0) = currents(r_s, g);
    if !(i_0 > 0.0 && i_l > 0.0) {
        return Err(Error::Fit("non-physical diode currents".into()));
    }
    Ok(PvModel {
        params: params.clone(),
        ideality: n,
        a_ref: a,
        i_l_ref: i_l,
        i_0_ref: i_0,
        r_s,
        r_sh: 1.0 / g,
    })
}

/// Root of `f` on `[lo, hi]` when the endpoints bracket a sign change.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if !(f_lo.is_finite() && f_hi.is_finite()) || (f_lo > 0.0) == (f_hi > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if !f_mid.is_finite() {
            return None;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi.abs().max(1e-300) {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

fn golden_section_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}
