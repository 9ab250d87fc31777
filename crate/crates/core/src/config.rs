//! Run configuration: a TOML file with `model`, `grid`, `solver`, `nplayer`,
//! `check` and `output` sections, plus `MFG_` environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::equilibrium::{Schedule, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{TemplateParams, TEMPLATE_NAMES};

/// Prefix of environment variables overriding config keys; `__` separates
/// path segments, e.g. `MFG_SOLVER__TOL_W=1e-4`.
pub const ENV_PREFIX: &str = "MFG_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub nplayer: NPlayerConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub template: String,
    #[serde(default)]
    pub params: TemplateParams,
    /// Measure CSV replacing the template's initial measure, relative to the
    /// config file.
    #[serde(default)]
    pub m0_file: Option<PathBuf>,
    /// Lipschitz constants (`L_fx`, ...) replacing the declared ones.
    #[serde(default)]
    pub ledger: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub steps: usize,
    /// State nodes per axis; defaults by dimension.
    #[serde(default)]
    pub nodes: Option<usize>,
    /// State box; defaults to the invariant box inflated by 10%.
    #[serde(default)]
    pub lo: Option<Vec<f64>>,
    #[serde(default)]
    pub hi: Option<Vec<f64>>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            steps: 64,
            nodes: None,
            lo: None,
            hi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    FictitiousPlay,
    Picard,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub schedule: ScheduleKind,
    /// Relaxation weight of the `constant` schedule.
    #[serde(default)]
    pub beta: Option<f64>,
    pub tol_w: f64,
    pub max_iter: usize,
    pub particle_cap: usize,
    pub split_ties: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleKind::FictitiousPlay,
            beta: None,
            tol_w: 1e-3,
            max_iter: 50,
            particle_cap: 5000,
            split_ties: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SiteRuleKind {
    Quantile,
    Iid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NPlayerConfig {
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub site_rule: SiteRuleKind,
    pub probe_players: usize,
    /// Inner fixed-point tolerance; defaults to `solver.tol_w / 10`.
    #[serde(default)]
    pub inner_tol: Option<f64>,
    pub inner_max_iter: usize,
    /// Multiple of the scheme tolerance allowed on top of the bound.
    pub slack_factor: f64,
}

impl Default for NPlayerConfig {
    fn default() -> Self {
        Self {
            n_list: vec![8, 32, 128],
            seeds: vec![1, 2, 3],
            site_rule: SiteRuleKind::Quantile,
            probe_players: 16,
            inner_tol: None,
            inner_max_iter: 200,
            slack_factor: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckConfig {
    /// Allowed `|V(T, x) - sigma(x, mu[T])|` on the lattice.
    pub terminal_tol: f64,
    /// Allowed Bellman residual of the stored value function.
    pub bellman_tol: f64,
    /// Viability tolerance as a multiple of the measured DP consistency.
    pub viability_factor: f64,
    /// Hadamard tolerance as a multiple of `dt + max dx`.
    pub hadamard_factor: f64,
    /// Difference-quotient steps as multiples of the largest state spacing.
    pub delta_multiples: Vec<f64>,
    /// Sample times as fractions of the horizon.
    pub sample_fractions: Vec<f64>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            terminal_tol: 1e-9,
            bellman_tol: 1e-9,
            viability_factor: 5.0,
            hadamard_factor: 2.0,
            delta_multiples: vec![2.0, 4.0],
            sample_fractions: vec![0.25, 0.5, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Parses TOML text, applies `overrides` (`(dotted.path, value)`), and
    /// validates.
    pub fn from_toml_with(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let parse_err = |e: toml::de::Error| Error::Parse(format!("config: {e}"));
        // Without overrides the document is deserialized directly so that
        // errors keep their line and column.
        let cfg: RunConfig = if overrides.is_empty() {
            toml::from_str(text).map_err(parse_err)?
        } else {
            let mut table: toml::Table = text.parse().map_err(parse_err)?;
            for (path, value) in overrides {
                apply_override(&mut table, path, value)?;
            }
            table.try_into().map_err(parse_err)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with(text, &[])
    }

    /// Reads a config file with overrides from the process environment.
    /// A relative `model.m0_file` is resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_with(&text, &env_overrides(std::env::vars()))?;
        if let Some(f) = &cfg.model.m0_file {
            if f.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.model.m0_file = Some(base.join(f));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !TEMPLATE_NAMES.contains(&self.model.template.as_str()) {
            return Err(Error::config(
                "model.template",
                format!("unknown template {:?}; expected one of {TEMPLATE_NAMES:?}", self.model.template),
            ));
        }
        if self.grid.steps == 0 {
            return Err(Error::config("grid.steps", "must be at least 1"));
        }
        if matches!(self.grid.nodes, Some(n) if n < 2) {
            return Err(Error::config("grid.nodes", "must be at least 2"));
        }
        match (&self.grid.lo, &self.grid.hi) {
            (Some(lo), Some(hi)) => {
                if lo.len() != hi.len() || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return Err(Error::config("grid.hi", "must exceed grid.lo on every axis"));
                }
            }
            (None, None) => {}
            _ => return Err(Error::config("grid.lo", "grid.lo and grid.hi go together")),
        }
        positive("solver.tol_w", self.solver.tol_w)?;
        if self.solver.particle_cap == 0 {
            return Err(Error::config("solver.particle_cap", "must be at least 1"));
        }
        if self.solver.schedule == ScheduleKind::Constant {
            match self.solver.beta {
                Some(b) if b > 0.0 && b <= 1.0 => {}
                Some(b) => return Err(Error::config("solver.beta", format!("{b} is not in (0, 1]"))),
                None => return Err(Error::config("solver.beta", "required by the constant schedule")),
            }
        }
        let np = &self.nplayer;
        if np.n_list.is_empty() || np.n_list.contains(&0) {
            return Err(Error::config("nplayer.n_list", "needs positive player counts"));
        }
        if np.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("nplayer.n_list", "must be strictly ascending"));
        }
        if np.seeds.is_empty() {
            return Err(Error::config("nplayer.seeds", "at least one seed is required"));
        }
        if np.probe_players == 0 {
            return Err(Error::config("nplayer.probe_players", "must be at least 1"));
        }
        if let Some(t) = np.inner_tol {
            positive("nplayer.inner_tol", t)?;
        }
        nonneg("nplayer.slack_factor", np.slack_factor)?;
        let c = &self.check;
        positive("check.terminal_tol", c.terminal_tol)?;
        positive("check.bellman_tol", c.bellman_tol)?;
        positive("check.viability_factor", c.viability_factor)?;
        positive("check.hadamard_factor", c.hadamard_factor)?;
        if c.delta_multiples.is_empty() {
            return Err(Error::config("check.delta_multiples", "must not be empty"));
        }
        for d in &c.delta_multiples {
            positive("check.delta_multiples", *d)?;
        }
        if c.sample_fractions.iter().any(|f| !(*f >= 0.0 && *f < 1.0)) {
            return Err(Error::config("check.sample_fractions", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn solver_options(&self) -> SolverOptions {
        let schedule = match self.solver.schedule {
            ScheduleKind::FictitiousPlay => Schedule::FictitiousPlay,
            ScheduleKind::Picard => Schedule::Picard,
            ScheduleKind::Constant => Schedule::Constant {
                beta: self.solver.beta.unwrap_or(1.0),
            },
        };
        SolverOptions {
            schedule,
            tol_w: self.solver.tol_w,
            max_iter: self.solver.max_iter,
            particle_cap: self.solver.particle_cap,
            split_ties: self.solver.split_ties,
            guard: None,
        }
    }

    pub fn inner_tol(&self) -> f64 {
        self.nplayer.inner_tol.unwrap_or(self.solver.tol_w / 10.0)
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::config(field, format!("{v} must be positive")));
    }
    Ok(())
}

fn nonneg(field: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::config(field, format!("{v} must be nonnegative")));
    }
    Ok(())
}

/// `(dotted.path, value)` pairs from `MFG_*` variables.
pub fn env_overrides(vars: impl Iterator<Item = (String, String)>) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vars
        .filter_map(|(k, v)| {
            let rest = k.strip_prefix(ENV_PREFIX)?;
            if rest.is_empty() {
                return None;
            }
            Some((rest.split("__").map(|s| s.to_ascii_lowercase()).collect::<Vec<_>>().join("."), v))
        })
        .collect();
    out.sort();
    out
}

/// Sets `path` in `table`, parsing `value` as a TOML value and falling back
/// to a plain string.
fn apply_override(table: &mut toml::Table, path: &str, value: &str) -> Result<()> {
    let parsed: toml::Value = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let parts: Vec<&str> = path.split('.').collect();
    let Some((last, head)) = parts.split_last() else {
        return Err(Error::config(path, "empty override path"));
    };
    let mut cur = table;
    for p in head {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(path, format!("`{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), parsed);
    Ok(())
}
