//! Scenario configuration, built-in presets and the TOML scenario format.
//!
//! Every key is optional. A file may name a `preset` to start from
//! (`normal` when omitted); the remaining keys are merged over it, then
//! `key=value` overrides with dotted paths such as `mmc.n=4` are applied.
//! Unknown keys are rejected. See `docs/scenario.md` for the schema.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ControlSettings, GridModel, Phase};
use crate::mmc::MmcParams;
use crate::mppt::MpptSettings;
use crate::parallel::Execution;
use crate::pv_model::{IrradianceProfile, PiecewiseLinear, PvModuleParams, STC_TEMPERATURE};

/// Duration used by `--full-duration`, s.
pub const FULL_DURATION: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Upper,
    Lower,
}

/// Irradiance modifier for a set of submodules. Empty selectors match all.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleGroup {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phases: Vec<Phase>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arms: Vec<Arm>,
    /// 1-based SM positions within an arm.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sms: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_time: Option<f64>,
}

impl ModuleGroup {
    fn matches(&self, phase: Phase, arm: Arm, sm: usize) -> bool {
        (self.phases.is_empty() || self.phases.contains(&phase))
            && (self.arms.is_empty() || self.arms.contains(&arm))
            && (self.sms.is_empty() || self.sms.contains(&sm))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IrradianceSettings {
    /// Cell temperature, °C.
    pub temperature: f64,
    /// Shared irradiance series, `[[t, W/m²], ...]`.
    pub base: PiecewiseLinear,
    pub groups: Vec<ModuleGroup>,
}

impl Default for IrradianceSettings {
    fn default() -> Self {
        IrradianceSettings {
            temperature: STC_TEMPERATURE,
            base: fluctuating_base(),
            groups: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeadlinePolicy {
    /// Each leg's MPC misses its deadline with this probability per tick.
    Simulated { exceed_probability: f64 },
    /// Measure MPC compute time and fall back when it exceeds `budget` s.
    WallClock { budget: f64 },
}

impl Default for DeadlinePolicy {
    fn default() -> Self {
        DeadlinePolicy::Simulated { exceed_probability: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSettings {
    /// Simulated time, s.
    pub duration: f64,
    /// Record one trace row every `decimation` sampling periods.
    pub decimation: usize,
    pub seed: u64,
    /// Start of the post-transient window used by summary metrics, s.
    pub startup: f64,
    pub deadline: DeadlinePolicy,
    /// How the three legs are advanced within one tick.
    pub execution: Execution,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            duration: 0.3,
            decimation: 20,
            seed: 1,
            startup: 0.05,
            deadline: DeadlinePolicy::default(),
            execution: Execution::Sequential,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Preset the file starts from. Only meaningful while parsing.
    #[serde(skip_serializing)]
    pub preset: Option<String>,
    pub name: String,
    pub mmc: MmcParams,
    pub pv: PvModuleParams,
    pub mppt: MpptSettings,
    pub grid: GridModel,
    pub control: ControlSettings,
    pub irradiance: IrradianceSettings,
    pub sim: SimSettings,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            preset: None,
            name: "normal".into(),
            mmc: MmcParams::default(),
            pv: PvModuleParams::default(),
            mppt: MpptSettings::default(),
            grid: GridModel::default(),
            control: ControlSettings::default(),
            irradiance: IrradianceSettings::default(),
            sim: SimSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.mmc.validate()?;
        self.pv.validate()?;
        self.mppt.validate(self.pv.v_oc)?;
        self.grid.validate()?;
        self.control.validate()?;

        let irr = &self.irradiance;
        if !irr.temperature.is_finite() {
            return Err(Error::validation("irradiance.temperature", "must be finite"));
        }
        irr.base.validate("irradiance.base")?;
        for (k, group) in irr.groups.iter().enumerate() {
            if let Some(&sm) = group.sms.iter().find(|&&sm| sm == 0 || sm > self.mmc.n) {
                return Err(Error::validation(
                    format!("irradiance.groups[{k}].sms"),
                    format!("SM {sm} outside 1..={}", self.mmc.n),
                ));
            }
            if let Some(scale) = group.scale {
                if !(0.0..=1.0).contains(&scale) {
                    return Err(Error::validation(format!("irradiance.groups[{k}].scale"), "must lie in [0, 1]"));
                }
            }
            if let Some(tf) = group.failure_time {
                if !(tf >= 0.0 && tf.is_finite()) {
                    return Err(Error::validation(
                        format!("irradiance.groups[{k}].failure_time"),
                        "must be finite and >= 0",
                    ));
                }
            }
        }

        let sim = &self.sim;
        if !(sim.duration > 0.0 && sim.duration.is_finite()) {
            return Err(Error::validation("sim.duration", "must be positive"));
        }
        if sim.decimation == 0 {
            return Err(Error::validation("sim.decimation", "must be at least 1"));
        }
        if !(sim.startup >= 0.0 && sim.startup.is_finite()) {
            return Err(Error::validation("sim.startup", "must be finite and >= 0"));
        }
        match sim.deadline {
            DeadlinePolicy::Simulated { exceed_probability: p } if !(0.0..=1.0).contains(&p) => {
                return Err(Error::validation("sim.deadline.exceed_probability", "must lie in [0, 1]"));
            }
            DeadlinePolicy::WallClock { budget } if !(budget > 0.0 && budget.is_finite()) => {
                return Err(Error::validation("sim.deadline.budget", "must be positive"));
            }
            _ => {}
        }
        Ok(())
    }

    /// One irradiance profile per SM, ordered phase-major then upper arm
    /// before lower arm: id = phase * 2n + arm * n + (sm - 1).
    pub fn module_profiles(&self) -> Result<Vec<IrradianceProfile>> {
        let n = self.mmc.n;
        let mut profiles = Vec::with_capacity(6 * n);
        for phase in Phase::ALL {
            for arm in [Arm::Upper, Arm::Lower] {
                for sm in 1..=n {
                    let mut scale = 1.0;
                    let mut failure_time = None;
                    for group in self.irradiance.groups.iter().filter(|g| g.matches(phase, arm, sm)) {
                        scale = group.scale.unwrap_or(scale);
                        failure_time = group.failure_time.or(failure_time);
                    }
                    profiles.push(IrradianceProfile::new(self.irradiance.base.clone(), scale, failure_time)?);
                }
            }
        }
        Ok(profiles)
    }

    /// Total number of sampling periods to simulate.
    pub fn steps(&self) -> usize {
        (self.sim.duration / self.mmc.t_s).round() as usize
    }

    /// Copy stretched to the full 3 s run with event times scaled alike.
    pub fn full_duration(&self) -> Self {
        let factor = FULL_DURATION / self.sim.duration;
        let mut cfg = self.clone();
        cfg.sim.duration = FULL_DURATION;
        for group in &mut cfg.irradiance.groups {
            group.failure_time = group.failure_time.map(|t| t * factor);
        }
        cfg
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key=value` overrides (dotted keys) and re-validates.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self> {
        let mut table = to_table(self)?;
        apply_overrides(&mut table, overrides)?;
        from_table(table)
    }
}

/// 1000 W/m² with a ±15 % triangular fluctuation at 1 Hz, spanning 3 s.
pub fn fluctuating_base() -> PiecewiseLinear {
    let pattern = [1000.0, 1150.0, 1000.0, 850.0];
    let knots = (0..=12).map(|k| [k as f64 * 0.25, pattern[k % 4]]).collect();
    PiecewiseLinear::new(knots).expect("static knots are valid")
}

fn shaded_group() -> ModuleGroup {
    ModuleGroup {
        phases: Vec::new(),
        arms: Vec::new(),
        sms: vec![5, 6],
        scale: Some(0.2),
        failure_time: None,
    }
}

/// The three case studies: normal operation, partial shading, and partial
/// shading with the SM 1 modules of every arm failing at 0.2 s.
pub fn builtin_presets() -> Vec<ScenarioConfig> {
    let normal = ScenarioConfig::default();

    let mut shading = ScenarioConfig {
        name: "partial_shading".into(),
        ..ScenarioConfig::default()
    };
    shading.irradiance.groups.push(shaded_group());

    let mut failure = ScenarioConfig {
        name: "failure".into(),
        ..ScenarioConfig::default()
    };
    failure.irradiance.groups.push(shaded_group());
    failure.irradiance.groups.push(ModuleGroup {
        phases: Vec::new(),
        arms: Vec::new(),
        sms: vec![1],
        scale: None,
        failure_time: Some(0.2),
    });

    vec![normal, shading, failure]
}

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    builtin_presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown preset `{name}` (expected normal, partial_shading or failure)")))
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn parse_error(text: &str, err: toml::de::Error) -> Error {
    Error::Parse {
        line: err.span().map_or(0, |s| line_of(text, s.start)),
        message: err.message().trim().to_string(),
    }
}

fn to_table(cfg: &ScenarioConfig) -> Result<toml::Table> {
    match toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))? {
        toml::Value::Table(t) => Ok(t),
        _ => unreachable!("a struct serializes to a table"),
    }
}

fn from_table(table: toml::Table) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !switches_variant(b, &o) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// A different `mode` selects another variant whose fields replace the old.
fn switches_variant(base: &toml::Table, over: &toml::Table) -> bool {
    matches!((base.get("mode"), over.get("mode")), (Some(a), Some(b)) if a != b)
}

fn apply_overrides(table: &mut toml::Table, overrides: &[(String, String)]) -> Result<()> {
    for (key, raw) in overrides {
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.clone()),
        };
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty override key `{key}`")))?;
        let mut node = &mut *table;
        for part in parts {
            node = match node
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            {
                toml::Value::Table(t) => t,
                _ => return Err(Error::Config(format!("override `{key}`: `{part}` is not a table"))),
            };
        }
        if leaf == "mode" && node.get("mode").is_some_and(|m| *m != value) {
            node.clear();
        }
        node.insert(leaf.to_string(), value);
    }
    Ok(())
}

/// Parses and validates a scenario file.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    parse_scenario_with_overrides(text, &[])
}

pub fn parse_scenario_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<ScenarioConfig> {
    // schema check against the user's own text so errors carry line numbers
    let own: ScenarioConfig = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let user: toml::Table = toml::from_str(text).map_err(|e| parse_error(text, e))?;
    let base = preset(own.preset.as_deref().unwrap_or("normal"))?;
    let mut table = to_table(&base)?;
    let mut user = user;
    user.remove("preset");
    merge(&mut table, user);
    apply_overrides(&mut table, overrides)?;
    from_table(table)
}
