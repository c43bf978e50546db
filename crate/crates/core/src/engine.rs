//! Fixed-step co-simulation of the three phase legs, their PV submodules
//! and the outer current loop.
//!
//! Every sampling period runs, in order: environment sampling, MPPT and
//! converter injection, reference generation, MPC switching per leg, and the
//! plant step per leg. Cross-leg inputs to a tick (average SM voltage) come
//! from the state at the start of the tick, so legs can be advanced in
//! parallel without changing the result.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Divergence, Error, Result};
use crate::grid::{average_sm_voltage, grid_voltage, CurrentController, Phase};
use crate::mmc::{step_leg, LegState};
use crate::mpc::{mpc_tick, SwitchDecision};
use crate::mppt::{converter_injection, po_step, MpptState, SmInjection};
use crate::parallel::Execution;
use crate::pv_model::{sample_environment, PvModel};
use crate::scenario::{DeadlinePolicy, ScenarioConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct LegRecord {
    pub i_ac: f64,
    pub i_ref: f64,
    pub i_z: f64,
    pub v_c: Vec<f64>,
    /// Insertion vector applied from this instant.
    pub u: Vec<bool>,
    pub p_pv: Vec<f64>,
    pub irradiance: Vec<f64>,
    pub k_up: usize,
    pub k_low: usize,
}

impl LegRecord {
    pub fn n(&self) -> usize {
        self.v_c.len() / 2
    }

    pub fn i_upper(&self) -> f64 {
        self.i_z + self.i_ac / 2.0
    }

    pub fn i_lower(&self) -> f64 {
        self.i_z - self.i_ac / 2.0
    }
}

/// One sample of every observable signal.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub v_avg: f64,
    pub v_s: [f64; 3],
    pub legs: Vec<LegRecord>,
}

impl TraceRecord {
    pub fn p_pv_total(&self) -> f64 {
        self.legs.iter().flat_map(|l| l.p_pv.iter()).sum()
    }

    /// Instantaneous power exported to the grid.
    pub fn p_ac(&self) -> f64 {
        self.legs.iter().zip(self.v_s).map(|(l, v)| l.i_ac * v).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub ticks: usize,
    /// Ticks on which each leg re-applied its previous insertion vector.
    pub fallback_ticks: [usize; 3],
    pub suspended_injections: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummarySettings {
    /// Records before this time are excluded from post-transient metrics.
    pub startup: f64,
    pub v_nominal: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub window_start: f64,
    /// RMS of i - i_ref per phase over the post-transient window.
    pub tracking_rms: [f64; 3],
    /// sqrt(2) · RMS of i_ref per phase over the window.
    pub reference_amplitude: [f64; 3],
    pub max_abs_iz: [f64; 3],
    pub mean_abs_iz: [f64; 3],
    pub v_avg_min_pct: f64,
    pub v_avg_max_pct: f64,
    /// Largest max-min SM voltage spread within one arm over the window.
    pub max_arm_spread: f64,
    pub mean_pv_power: f64,
    pub mean_ac_power: f64,
    /// Energy captured per SM over the whole trace, J.
    pub energy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub name: String,
    pub n: usize,
    pub t_s: f64,
    pub decimation: usize,
    pub v_nominal: f64,
    pub trace: Vec<TraceRecord>,
    pub summary: Summary,
    pub stats: RunStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Environment,
    Injection,
    Reference,
    Mpc,
    Plant,
}

/// Hook into the tick loop, used for instrumentation and tests.
pub trait TickObserver {
    fn on_stage(&mut self, _tick: usize, _stage: Stage) {}

    /// Called once per leg after the switching decision. `state` is the leg
    /// state the decision was made from.
    fn on_decision(&mut self, _tick: usize, _leg: usize, _exceeded: bool, _state: &LegState, _decision: &SwitchDecision) {}
}

pub struct NoObserver;

impl TickObserver for NoObserver {}

pub fn run_scenario(config: &ScenarioConfig) -> Result<SimResult> {
    run_scenario_observed(config, &mut NoObserver)
}

/// Runs several scenarios, concurrently when `execution` allows it.
pub fn run_batch(configs: &[ScenarioConfig], execution: Execution) -> Vec<Result<SimResult>> {
    execution.map(configs, run_scenario)
}

pub fn run_scenario_observed(config: &ScenarioConfig, observer: &mut dyn TickObserver) -> Result<SimResult> {
    config.validate()?;
    let params = &config.mmc;
    let n = params.n;
    let per_leg = 2 * n;
    let model = PvModel::fit(&config.pv)?;
    let profiles = config.module_profiles()?;
    let temperature = config.irradiance.temperature;
    let v_nominal = params.v_nominal();
    let execution = config.sim.execution;
    let decimation = config.sim.decimation;

    let mut legs = vec![LegState::nominal(params); 3];
    let mut mppt = vec![MpptState::new(&config.mppt, config.pv.v_oc); 6 * n];
    let mut injections = vec![SmInjection::default(); 6 * n];
    let mut irradiance = vec![0.0; 6 * n];
    let mut controller = CurrentController::new(&config.control);
    let mut rng = ChaCha8Rng::seed_from_u64(config.sim.seed);
    let mut i_ref_now = controller.current(&config.grid, 0.0).i_abc_ref;
    let mut trace = Vec::with_capacity(config.steps() / decimation + 1);
    let mut stats = RunStats::default();

    for tick in 0..config.steps() {
        let t = tick as f64 * params.t_s;

        observer.on_stage(tick, Stage::Environment);
        for (id, g) in irradiance.iter_mut().enumerate() {
            *g = sample_environment(&profiles, id, t, temperature)?.irradiance;
        }

        observer.on_stage(tick, Stage::Injection);
        for id in 0..6 * n {
            let env = crate::pv_model::EnvironmentSample::new(irradiance[id], temperature);
            // P&O observes the power delivered over the previous period
            mppt[id] = po_step(&mppt[id], injections[id].p_pv, t)?;
            let v_c = legs[id / per_leg].v_c[id % per_leg];
            injections[id] = converter_injection(&model, &env, &mppt[id], v_c)?;
            stats.suspended_injections += injections[id].suspended as usize;
        }

        observer.on_stage(tick, Stage::Reference);
        let avg_v = average_sm_voltage(&legs);
        // references are targets for the end of this period
        let target = controller.make_references(&config.grid, avg_v, v_nominal, t + params.t_s);
        let v_s = Phase::ALL.map(|p| grid_voltage(&config.grid, p, t));

        observer.on_stage(tick, Stage::Mpc);
        let exceeded: [bool; 3] = match config.sim.deadline {
            DeadlinePolicy::Simulated { exceed_probability } if exceed_probability > 0.0 => {
                std::array::from_fn(|_| rng.random::<f64>() < exceed_probability)
            }
            _ => [false; 3],
        };
        let decisions = execution.map_indices(3, |leg| -> Result<(SwitchDecision, bool)> {
            let state = &legs[leg];
            let (i_ref, v) = (target.i_abc_ref[leg], v_s[leg]);
            match config.sim.deadline {
                DeadlinePolicy::WallClock { budget } => {
                    let start = Instant::now();
                    let decision = mpc_tick(params, state, i_ref, v, false)?;
                    if start.elapsed().as_secs_f64() > budget {
                        Ok((mpc_tick(params, state, i_ref, v, true)?, true))
                    } else {
                        Ok((decision, false))
                    }
                }
                DeadlinePolicy::Simulated { .. } => Ok((mpc_tick(params, state, i_ref, v, exceeded[leg])?, exceeded[leg])),
            }
        });
        let decisions: Vec<(SwitchDecision, bool)> = decisions.into_iter().collect::<Result<_>>()?;
        for (leg, (decision, fell_back)) in decisions.iter().enumerate() {
            stats.fallback_ticks[leg] += *fell_back as usize;
            observer.on_decision(tick, leg, *fell_back, &legs[leg], decision);
        }

        if tick % decimation == 0 {
            trace.push(TraceRecord {
                t,
                v_avg: avg_v,
                v_s,
                legs: (0..3)
                    .map(|leg| {
                        let state = &legs[leg];
                        let d = &decisions[leg].0;
                        let range = leg * per_leg..(leg + 1) * per_leg;
                        LegRecord {
                            i_ac: state.i_ac,
                            i_ref: i_ref_now[leg],
                            i_z: state.i_z,
                            v_c: state.v_c.clone(),
                            u: d.u.clone(),
                            p_pv: injections[range.clone()].iter().map(|i| i.p_pv).collect(),
                            irradiance: irradiance[range].to_vec(),
                            k_up: d.k_up,
                            k_low: d.k_low,
                        }
                    })
                    .collect(),
            });
        }

        observer.on_stage(tick, Stage::Plant);
        let stepped = execution.map_indices(3, |leg| {
            let range = leg * per_leg..(leg + 1) * per_leg;
            step_leg(params, &legs[leg], &decisions[leg].0.u, &injections[range], v_s[leg])
        });
        for (leg, next) in stepped.into_iter().enumerate() {
            match next {
                Ok(state) => legs[leg] = state,
                Err(Error::NonFinite { quantity }) => {
                    return Err(Error::Divergence(Box::new(Divergence {
                        quantity,
                        leg: Some(leg),
                        time: t + params.t_s,
                        trace,
                    })));
                }
                Err(e) => return Err(e),
            }
        }
        i_ref_now = target.i_abc_ref;
        stats.ticks += 1;
    }

    let summary = summarize(
        &trace,
        &SummarySettings {
            startup: config.sim.startup,
            v_nominal,
        },
    )?;
    Ok(SimResult {
        name: config.name.clone(),
        n,
        t_s: params.t_s,
        decimation,
        v_nominal,
        trace,
        summary,
        stats,
    })
}

/// Post-transient metrics. Falls back to the whole trace when no record
/// lies past `settings.startup`.
pub fn summarize(trace: &[TraceRecord], settings: &SummarySettings) -> Result<Summary> {
    if trace.is_empty() {
        return Err(Error::InvalidInput("cannot summarize an empty trace".into()));
    }
    let mut window: Vec<&TraceRecord> = trace.iter().filter(|r| r.t >= settings.startup).collect();
    if window.is_empty() {
        window = trace.iter().collect();
    }
    let count = window.len() as f64;
    let mean = |f: &dyn Fn(&TraceRecord) -> f64| window.iter().map(|r| f(r)).sum::<f64>() / count;

    let per_phase = |f: &dyn Fn(&LegRecord) -> f64| -> [f64; 3] { std::array::from_fn(|k| mean(&|r| f(&r.legs[k]))) };
    let tracking_rms = per_phase(&|l| (l.i_ac - l.i_ref).powi(2)).map(f64::sqrt);
    let reference_amplitude = per_phase(&|l| l.i_ref * l.i_ref).map(|ms| (2.0 * ms).sqrt());
    let mean_abs_iz = per_phase(&|l| l.i_z.abs());
    let max_abs_iz: [f64; 3] =
        std::array::from_fn(|k| window.iter().map(|r| r.legs[k].i_z.abs()).fold(0.0, f64::max));

    let pct = |v: f64| {
        if settings.v_nominal > 0.0 {
            100.0 * v / settings.v_nominal
        } else {
            0.0
        }
    };
    let v_min = window.iter().map(|r| r.v_avg).fold(f64::INFINITY, f64::min);
    let v_max = window.iter().map(|r| r.v_avg).fold(f64::NEG_INFINITY, f64::max);

    let spread = |arm: &[f64]| {
        let hi = arm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = arm.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    };
    let max_arm_spread = window
        .iter()
        .flat_map(|r| r.legs.iter())
        .flat_map(|l| {
            let n = l.n();
            [spread(&l.v_c[..n]), spread(&l.v_c[n..])]
        })
        .fold(0.0, f64::max);

    let dt = if trace.len() > 1 {
        (trace[trace.len() - 1].t - trace[0].t) / (trace.len() - 1) as f64
    } else {
        0.0
    };
    let modules = trace[0].legs.iter().map(|l| l.p_pv.len()).sum::<usize>();
    let mut energy = vec![0.0; modules];
    for r in trace {
        for (e, p) in energy.iter_mut().zip(r.legs.iter().flat_map(|l| l.p_pv.iter())) {
            *e += p * dt;
        }
    }

    Ok(Summary {
        window_start: window[0].t,
        tracking_rms,
        reference_amplitude,
        max_abs_iz,
        mean_abs_iz,
        v_avg_min_pct: pct(v_min),
        v_avg_max_pct: pct(v_max),
        max_arm_spread,
        mean_pv_power: mean(&|r| r.p_pv_total()),
        mean_ac_power: mean(&|r| r.p_ac()),
        energy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::preset;

    fn zero_record(t: f64) -> TraceRecord {
        TraceRecord {
            t,
            v_avg: 0.0,
            v_s: [0.0; 3],
            legs: vec![
                LegRecord {
                    i_ac: 0.0,
                    i_ref: 0.0,
                    i_z: 0.0,
                    v_c: vec![0.0; 4],
                    u: vec![false; 4],
                    p_pv: vec![0.0; 4],
                    irradiance: vec![0.0; 4],
                    k_up: 0,
                    k_low: 0,
                };
                3
            ],
        }
    }

    fn settings() -> SummarySettings {
        SummarySettings { startup: 0.0, v_nominal: 100.0 }
    }

    #[test]
    fn empty_trace_is_an_error() {
        assert!(summarize(&[], &settings()).is_err());
    }

    #[test]
    fn zero_trace_gives_zero_metrics() {
        let trace: Vec<_> = (0..5).map(|k| zero_record(k as f64 * 1e-3)).collect();
        let s = summarize(&trace, &settings()).unwrap();
        assert_eq!(s.tracking_rms, [0.0; 3]);
        assert_eq!(s.max_abs_iz, [0.0; 3]);
        assert_eq!(s.mean_abs_iz, [0.0; 3]);
        assert_eq!((s.v_avg_min_pct, s.v_avg_max_pct), (0.0, 0.0));
        assert_eq!(s.max_arm_spread, 0.0);
        assert!(s.energy.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn perfect_tracking_has_zero_error() {
        let trace: Vec<_> = (0..5)
            .map(|k| {
                let mut r = zero_record(k as f64 * 1e-3);
                for (p, l) in r.legs.iter_mut().enumerate() {
                    l.i_ref = (k + p) as f64 * 1.5;
                    l.i_ac = l.i_ref;
                }
                r
            })
            .collect();
        let s = summarize(&trace, &settings()).unwrap();
        assert_eq!(s.tracking_rms, [0.0; 3]);
        assert!(s.reference_amplitude[0] > 0.0);
    }

    #[test]
    fn energy_integrates_power() {
        let trace: Vec<_> = (0..11)
            .map(|k| {
                let mut r = zero_record(k as f64 * 1e-3);
                r.legs[0].p_pv[0] = 100.0;
                r
            })
            .collect();
        let s = summarize(&trace, &settings()).unwrap();
        assert!((s.energy[0] - 100.0 * 11.0 * 1e-3).abs() < 1e-12);
        assert_eq!(s.energy.len(), 12);
    }

    #[test]
    fn short_run_records_at_decimated_instants() {
        let mut cfg = preset("normal").unwrap();
        cfg.sim.duration = 0.01;
        let r = run_scenario(&cfg).unwrap();
        assert_eq!(r.stats.ticks, 400);
        assert_eq!(r.trace.len(), 20);
        for w in r.trace.windows(2) {
            assert!((w[1].t - w[0].t - 20.0 * 25e-6).abs() < 1e-12);
        }
        assert_eq!(r.stats.fallback_ticks, [0; 3]);
    }

    #[test]
    fn divergence_keeps_partial_trace() {
        let mut cfg = preset("normal").unwrap();
        cfg.sim.duration = 0.005;
        cfg.sim.decimation = 1;
        // a vanishing arm inductance makes the circulating current overflow
        cfg.mmc.l_arm = 1e-305;
        match run_scenario(&cfg) {
            Err(Error::Divergence(d)) => {
                assert!(d.leg.is_some());
                assert!(!d.trace.is_empty());
                assert!(d.trace.len() < cfg.steps());
            }
            other => panic!("expected divergence, got {:?}", other.map(|r| r.stats)),
        }
    }
}
