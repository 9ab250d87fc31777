use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::measures::{BoxRegion, ParticleMeasure};

use super::{ControlSet, LipschitzLedger, MeanFieldModel, MeasureFeatures, SharedModel};

pub const TEMPLATE_NAMES: [&str; 3] = ["lq1d", "congestion1d", "uncoupled"];

/// Numeric template parameters by name.
pub type TemplateParams = BTreeMap<String, f64>;

struct ParamReader<'a> {
    template: &'a str,
    params: &'a TemplateParams,
    known: Vec<&'static str>,
}

impl<'a> ParamReader<'a> {
    fn new(template: &'a str, params: &'a TemplateParams) -> Self {
        Self {
            template,
            params,
            known: Vec::new(),
        }
    }

    fn get(&mut self, key: &'static str, default: f64) -> Result<f64> {
        self.known.push(key);
        let v = self.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::config(format!("model.params.{key}"), "must be finite"));
        }
        Ok(v)
    }

    fn positive(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v = self.get(key, default)?;
        if v <= 0.0 {
            return Err(Error::config(format!("model.params.{key}"), "must be positive"));
        }
        Ok(v)
    }

    fn nonneg(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v = self.get(key, default)?;
        if v < 0.0 {
            return Err(Error::config(format!("model.params.{key}"), "must be nonnegative"));
        }
        Ok(v)
    }

    fn count(&mut self, key: &'static str, default: usize) -> Result<usize> {
        let v = self.get(key, default as f64)?;
        if v < 1.0 || v.fract() != 0.0 || v > 1e7 {
            return Err(Error::config(
                format!("model.params.{key}"),
                "must be a positive integer",
            ));
        }
        Ok(v as usize)
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.params.keys().find(|k| !self.known.contains(&k.as_str())) {
            return Err(Error::config(
                format!("model.params.{k}"),
                format!("unknown parameter for template {}", self.template),
            ));
        }
        Ok(())
    }
}

/// Shared scalar setup: horizon, control grid on `[-u_max, u_max]`, and an
/// initial measure of `atoms` cell-centred equal-weight atoms on
/// `[m0_lo, m0_hi]` unless one is supplied.
struct Common {
    horizon: f64,
    controls: ControlSet,
    m0: ParticleMeasure,
}

fn common(r: &mut ParamReader<'_>, m0: Option<ParticleMeasure>) -> Result<Common> {
    let horizon = r.positive("T", 1.0)?;
    let u_max = r.positive("u_max", 1.0)?;
    let n_controls = r.count("controls", 21)?;
    let atoms = r.count("atoms", 200)?;
    let lo = r.get("m0_lo", -0.5)?;
    let hi = r.get("m0_hi", 0.5)?;
    if hi < lo {
        return Err(Error::config("model.params.m0_hi", "must be at least m0_lo"));
    }
    let m0 = match m0 {
        Some(m) => {
            if m.dim() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    found: m.dim(),
                });
            }
            m
        }
        None => {
            let pts: Vec<f64> = (0..atoms)
                .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / atoms as f64)
                .collect();
            ParticleMeasure::uniform_1d(&pts)?
        }
    };
    Ok(Common {
        horizon,
        controls: ControlSet::linspace(-u_max, u_max, n_controls)?,
        m0,
    })
}

fn max_dist(region: &BoxRegion, target: f64) -> f64 {
    (region.lo[0] - target).abs().max((region.hi[0] - target).abs())
}

/// Linear-quadratic model with mean attraction:
/// `f = u + kappa (mean - x)`, `g = u^2/2 + c (x - mean)^2`,
/// `sigma = -(x - x_target)^2`.
#[derive(Debug, Clone)]
pub struct Lq1d {
    pub c: f64,
    pub x_target: f64,
    pub kappa: f64,
    horizon: f64,
    controls: ControlSet,
    m0: ParticleMeasure,
}

impl Lq1d {
    pub fn new(params: &TemplateParams, m0: Option<ParticleMeasure>) -> Result<Self> {
        let mut r = ParamReader::new("lq1d", params);
        let c = r.nonneg("c", 0.1)?;
        let x_target = r.get("x_target", 1.0)?;
        let kappa = r.nonneg("drift_coupling", 0.0)?;
        let cm = common(&mut r, m0)?;
        r.finish()?;
        Ok(Self {
            c,
            x_target,
            kappa,
            horizon: cm.horizon,
            controls: cm.controls,
            m0: cm.m0,
        })
    }
}

impl MeanFieldModel for Lq1d {
    fn name(&self) -> &str {
        "lq1d"
    }
    fn dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn controls(&self) -> &ControlSet {
        &self.controls
    }
    fn initial_measure(&self) -> &ParticleMeasure {
        &self.m0
    }
    fn features(&self, m: &ParticleMeasure) -> MeasureFeatures {
        MeasureFeatures(m.mean())
    }
    fn velocity(&self, _t: f64, x: &[f64], m: &MeasureFeatures, u: &[f64], out: &mut [f64]) {
        out[0] = u[0] + self.kappa * (m.get(0) - x[0]);
    }
    fn running_cost(&self, _t: f64, x: &[f64], m: &MeasureFeatures, u: &[f64]) -> f64 {
        let d = x[0] - m.get(0);
        0.5 * u[0] * u[0] + self.c * d * d
    }
    fn terminal_payoff(&self, x: &[f64], _m: &MeasureFeatures) -> f64 {
        let d = x[0] - self.x_target;
        -d * d
    }
    fn declared_ledger(&self, region: &BoxRegion) -> Option<LipschitzLedger> {
        // |x - mean| <= diam(G) and the mean is 1-Lipschitz under W1.
        let diam = region.diameter();
        Some(LipschitzLedger {
            l_fx: self.kappa,
            l_fm: self.kappa,
            l_gx: 2.0 * self.c * diam,
            l_gm: 2.0 * self.c * diam,
            l_sx: 2.0 * max_dist(region, self.x_target),
            l_sm: 0.0,
        })
    }
    fn is_coupled(&self) -> bool {
        self.c != 0.0 || self.kappa != 0.0
    }
}

/// Crowd-averse model: `f = u`,
/// `g = u^2/2 + a * rho_h(x)` with `rho_h` the Gaussian kernel density of the
/// measure at bandwidth `h`, `sigma = -s (x - x_target)^2`.
///
/// The density is tabulated on a fixed lattice over
/// `[density_lo, density_hi]` and interpolated linearly; outside the lattice
/// the end values are used.
#[derive(Debug, Clone)]
pub struct Congestion1d {
    pub crowding: f64,
    pub bandwidth: f64,
    pub x_target: f64,
    pub terminal_weight: f64,
    density_lo: f64,
    density_step: f64,
    density_nodes: usize,
    horizon: f64,
    controls: ControlSet,
    m0: ParticleMeasure,
}

impl Congestion1d {
    pub fn new(params: &TemplateParams, m0: Option<ParticleMeasure>) -> Result<Self> {
        let mut r = ParamReader::new("congestion1d", params);
        let crowding = r.nonneg("crowding", 1.0)?;
        let bandwidth = r.positive("bandwidth", 0.25)?;
        let x_target = r.get("x_target", 0.0)?;
        let terminal_weight = r.nonneg("terminal_weight", 1.0)?;
        let density_lo = r.get("density_lo", -4.0)?;
        let density_hi = r.get("density_hi", 4.0)?;
        let density_nodes = r.count("density_nodes", 321)?;
        if density_hi <= density_lo || density_nodes < 2 {
            return Err(Error::config(
                "model.params.density_hi",
                "density lattice needs density_hi > density_lo and at least 2 nodes",
            ));
        }
        let cm = common(&mut r, m0)?;
        r.finish()?;
        Ok(Self {
            crowding,
            bandwidth,
            x_target,
            terminal_weight,
            density_lo,
            density_step: (density_hi - density_lo) / (density_nodes - 1) as f64,
            density_nodes,
            horizon: cm.horizon,
            controls: cm.controls,
            m0: cm.m0,
        })
    }

    fn kernel(&self, z: f64) -> f64 {
        let h = self.bandwidth;
        (-0.5 * (z / h).powi(2)).exp() / (h * (2.0 * std::f64::consts::PI).sqrt())
    }

    /// `sup |d/dz kernel|`, attained at `|z| = h`.
    fn kernel_lipschitz(&self) -> f64 {
        let h = self.bandwidth;
        (-0.5f64).exp() / (h * h * (2.0 * std::f64::consts::PI).sqrt())
    }

    fn density(&self, x: f64, table: &MeasureFeatures) -> f64 {
        let s = (x - self.density_lo) / self.density_step;
        if s <= 0.0 {
            return table.get(0);
        }
        let last = self.density_nodes - 1;
        if s >= last as f64 {
            return table.get(last);
        }
        let i = (s.floor() as usize).min(last - 1);
        let w = s - i as f64;
        (1.0 - w) * table.get(i) + w * table.get(i + 1)
    }
}

impl MeanFieldModel for Congestion1d {
    fn name(&self) -> &str {
        "congestion1d"
    }
    fn dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn controls(&self) -> &ControlSet {
        &self.controls
    }
    fn initial_measure(&self) -> &ParticleMeasure {
        &self.m0
    }
    fn features(&self, m: &ParticleMeasure) -> MeasureFeatures {
        MeasureFeatures(
            (0..self.density_nodes)
                .map(|i| {
                    let x = self.density_lo + i as f64 * self.density_step;
                    m.integrate(|y| self.kernel(x - y[0]))
                })
                .collect(),
        )
    }
    fn velocity(&self, _t: f64, _x: &[f64], _m: &MeasureFeatures, u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn running_cost(&self, _t: f64, x: &[f64], m: &MeasureFeatures, u: &[f64]) -> f64 {
        0.5 * u[0] * u[0] + self.crowding * self.density(x[0], m)
    }
    fn terminal_payoff(&self, x: &[f64], _m: &MeasureFeatures) -> f64 {
        let d = x[0] - self.x_target;
        -self.terminal_weight * d * d
    }
    fn declared_ledger(&self, region: &BoxRegion) -> Option<LipschitzLedger> {
        let lk = self.crowding * self.kernel_lipschitz();
        Some(LipschitzLedger {
            l_fx: 0.0,
            l_fm: 0.0,
            l_gx: lk,
            l_gm: lk,
            l_sx: 2.0 * self.terminal_weight * max_dist(region, self.x_target),
            l_sm: 0.0,
        })
    }
}

/// Single-agent control problem with no measure dependence:
/// `f = u`, `g = u^2/2`, `sigma = -(x - x_target)^2`.
#[derive(Debug, Clone)]
pub struct Uncoupled {
    pub x_target: f64,
    horizon: f64,
    controls: ControlSet,
    m0: ParticleMeasure,
}

impl Uncoupled {
    pub fn new(params: &TemplateParams, m0: Option<ParticleMeasure>) -> Result<Self> {
        let mut r = ParamReader::new("uncoupled", params);
        let x_target = r.get("x_target", 1.0)?;
        let cm = common(&mut r, m0)?;
        r.finish()?;
        Ok(Self {
            x_target,
            horizon: cm.horizon,
            controls: cm.controls,
            m0: cm.m0,
        })
    }
}

impl MeanFieldModel for Uncoupled {
    fn name(&self) -> &str {
        "uncoupled"
    }
    fn dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> f64 {
        self.horizon
    }
    fn controls(&self) -> &ControlSet {
        &self.controls
    }
    fn initial_measure(&self) -> &ParticleMeasure {
        &self.m0
    }
    fn velocity(&self, _t: f64, _x: &[f64], _m: &MeasureFeatures, u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
    fn running_cost(&self, _t: f64, _x: &[f64], _m: &MeasureFeatures, u: &[f64]) -> f64 {
        0.5 * u[0] * u[0]
    }
    fn terminal_payoff(&self, x: &[f64], _m: &MeasureFeatures) -> f64 {
        let d = x[0] - self.x_target;
        -d * d
    }
    fn declared_ledger(&self, region: &BoxRegion) -> Option<LipschitzLedger> {
        Some(LipschitzLedger {
            l_sx: 2.0 * max_dist(region, self.x_target),
            ..LipschitzLedger::zero()
        })
    }
    fn is_coupled(&self) -> bool {
        false
    }
}

/// Builds a built-in model by name. `m0`, when given, replaces the
/// template's generated initial measure.
pub fn build_template(
    name: &str,
    params: &TemplateParams,
    m0: Option<ParticleMeasure>,
) -> Result<SharedModel> {
    Ok(match name {
        "lq1d" => Arc::new(Lq1d::new(params, m0)?),
        "congestion1d" => Arc::new(Congestion1d::new(params, m0)?),
        "uncoupled" => Arc::new(Uncoupled::new(params, m0)?),
        other => {
            return Err(Error::config(
                "model.template",
                format!("unknown template {other:?}; expected one of {TEMPLATE_NAMES:?}"),
            ))
        }
    })
}
