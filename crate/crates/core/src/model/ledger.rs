use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lipschitz constants of `f`, `g` and `sigma` in the state (`*_x`) and in
/// the measure under W1 (`*_m`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzLedger {
    pub l_fx: f64,
    pub l_fm: f64,
    pub l_gx: f64,
    pub l_gm: f64,
    pub l_sx: f64,
    pub l_sm: f64,
}

impl LipschitzLedger {
    pub const KEYS: [&'static str; 6] = ["L_fx", "L_fm", "L_gx", "L_gm", "L_sx", "L_sm"];

    pub fn zero() -> Self {
        Self {
            l_fx: 0.0,
            l_fm: 0.0,
            l_gx: 0.0,
            l_gm: 0.0,
            l_sx: 0.0,
            l_sm: 0.0,
        }
    }

    pub fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str| -> Result<f64> {
            let v = *map
                .get(k)
                .ok_or_else(|| Error::MissingLedgerEntry(k.to_string()))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidModel(format!("ledger entry {k} = {v}")));
            }
            Ok(v)
        };
        Ok(Self {
            l_fx: get("L_fx")?,
            l_fm: get("L_fm")?,
            l_gx: get("L_gx")?,
            l_gm: get("L_gm")?,
            l_sx: get("L_sx")?,
            l_sm: get("L_sm")?,
        })
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        Self::KEYS.iter().map(|k| (k.to_string(), self.get(k))).collect()
    }

    fn get(&self, key: &str) -> f64 {
        match key {
            "L_fx" => self.l_fx,
            "L_fm" => self.l_fm,
            "L_gx" => self.l_gx,
            "L_gm" => self.l_gm,
            "L_sx" => self.l_sx,
            _ => self.l_sm,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            l_fx: self.l_fx * factor,
            l_fm: self.l_fm * factor,
            l_gx: self.l_gx * factor,
            l_gm: self.l_gm * factor,
            l_sx: self.l_sx * factor,
            l_sm: self.l_sm * factor,
        }
    }
}

/// Constants of the stability and epsilon-Nash estimates, evaluated from a
/// Lipschitz ledger, the horizon `T` and `diam(G)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantLedger {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    /// Multiplies `W(m0, delta_x^N)` in the Nash-gap bound.
    pub hat_c1: f64,
    /// Multiplies `N max_i int |x - x_i| m_N^i(dx)`.
    pub hat_c2: f64,
    /// Multiplies `1/N`.
    pub hat_c3: f64,
}

impl ConstantLedger {
    pub fn compute(l: &LipschitzLedger, horizon: f64, diam: f64) -> Self {
        let t = horizon;
        let c2 = (l.l_fx * t).exp();
        let c1 = c2 * l.l_fm;
        let c3 = c2 * (c1 * t).exp();
        let c4 = diam * (c1 * t).exp();
        let c5 = c1 * c3 * t;
        let c6 = l.l_gx * c2 * t;
        let c7 = t * t * c1 * c3 * (l.l_gx + l.l_gm);
        let c8 = l.l_gm * c4 * t + c1 * c4 * t * t * l.l_gx;
        Self {
            c1,
            c2,
            c3,
            c4,
            c5,
            c6,
            c7,
            c8,
            hat_c1: 2.0 * (l.l_sx * c5 + l.l_sm * c3 + c7),
            hat_c2: 2.0 * (l.l_sx * c2 + c6),
            hat_c3: l.l_sx * c1 * c4 * t + l.l_sm * c4 + c8,
        }
    }

    /// Right-hand side of the epsilon-Nash estimate.
    pub fn nash_bound(&self, w_emp: f64, d_max: f64, n: usize) -> f64 {
        self.hat_c1 * w_emp + self.hat_c2 * d_max + self.hat_c3 / n as f64
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        [
            ("C1", self.c1),
            ("C2", self.c2),
            ("C3", self.c3),
            ("C4", self.c4),
            ("C5", self.c5),
            ("C6", self.c6),
            ("C7", self.c7),
            ("C8", self.c8),
            ("hat_C1", self.hat_c1),
            ("hat_C2", self.hat_c2),
            ("hat_C3", self.hat_c3),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}
