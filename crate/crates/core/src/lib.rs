//! Simulation of a modular multilevel converter whose submodules are each fed
//! by a PV module through a DC-DC stage with per-module MPPT, switched by a
//! sorting-and-selection model predictive controller.
//!
//! The crate is organised bottom-up:
//!
//! - [`pv_model`]: single-diode module model fitted to datasheet values.
//! - [`mppt`]: perturb-and-observe tracking and converter injection.
//! - [`mmc`]: discrete-time phase-leg plant.
//! - [`mpc`]: capacitor sorting and insertion-count selection.
//! - [`grid`]: grid voltages, dq transforms and the outer current loop.
//! - [`scenario`] and [`engine`]: configuration, presets and the tick loop.
//! - [`trace_csv`], [`plot`], [`oracle`]: output and verification tooling.
//!
//! ```
//! use mmcpv_core::{preset, run_scenario};
//!
//! let mut config = preset("normal").unwrap();
//! config.sim.duration = 0.002;
//! let result = run_scenario(&config).unwrap();
//! assert_eq!(result.stats.ticks, 80);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod engine;
pub mod error;
pub mod grid;
pub mod mmc;
pub mod mpc;
pub mod mppt;
pub mod oracle;
pub mod parallel;
pub mod plot;
pub mod pv_model;
pub mod scenario;
pub mod trace_csv;

pub use engine::{run_batch, run_scenario, run_scenario_observed, summarize, SimResult, Summary, TraceRecord};
pub use error::{Error, Result};
pub use parallel::Execution;
pub use scenario::{builtin_presets, parse_scenario, parse_scenario_with_overrides, preset, ScenarioConfig};
