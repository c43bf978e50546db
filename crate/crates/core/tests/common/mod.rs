#![allow(dead_code)]

use std::collections::HashMap;

use mmcpv_core::pv_model::{EnvironmentSample, PvModel};

/// Scans the module power on a 0.01 V grid from 0 to Voc and returns the
/// best (v, p). Deliberately brute force so it shares nothing with MPPT.
pub fn scan_mpp(model: &PvModel, env: &EnvironmentSample) -> (f64, f64) {
    let v_oc = model.open_circuit_voltage(env).unwrap();
    let mut best = (0.0, 0.0);
    let mut k = 0;
    loop {
        let v = k as f64 * 0.01;
        if v > v_oc {
            break;
        }
        let p = model.power(env, v).unwrap();
        if p > best.1 {
            best = (v, p);
        }
        k += 1;
    }
    best
}

/// Memoised grid scan keyed by the exact environment.
pub struct MppOracle {
    pub model: PvModel,
    cache: HashMap<(u64, u64), (f64, f64)>,
}

impl MppOracle {
    pub fn new(model: PvModel) -> Self {
        MppOracle {
            model,
            cache: HashMap::new(),
        }
    }

    pub fn mpp(&mut self, irradiance: f64, temperature: f64) -> (f64, f64) {
        let key = (irradiance.to_bits(), temperature.to_bits());
        if let Some(&hit) = self.cache.get(&key) {
            return hit;
        }
        let value = if irradiance <= 0.0 {
            (0.0, 0.0)
        } else {
            scan_mpp(&self.model, &EnvironmentSample::new(irradiance, temperature))
        };
        self.cache.insert(key, value);
        value
    }
}

pub fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for x in xs {
        sum += x;
        count += 1;
    }
    sum / count as f64
}
