//! Commands behind the `mfg` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use minimax_mfg::config::{RunConfig, SiteRuleKind};
use minimax_mfg::dynamics::FlowContext;
use minimax_mfg::equilibrium::{apply_a_in, fixed_point_solve, EquilibriumResult, SolverOptions};
use minimax_mfg::io::{self, Diagnostics, LoadedResult, SolverRecord};
use minimax_mfg::measures::{flow_distance, w1_distance, TimeGrid};
use minimax_mfg::model::{
    bound_box_and_k, build_template, estimate_ledger, ledger_warnings, BoundOptions, ConstantLedger,
    InvariantRegion, LipschitzLedger, SharedModel,
};
use minimax_mfg::nplayer::{nash_gap_curve, NashOptions, NashRow, SimOptions, SiteRule};
use minimax_mfg::value::{check_hadamard, check_viability, StateGrid};

pub const CHECK_JSON: &str = "check.json";
pub const NASH_CSV: &str = "nash_gap.csv";
pub const NASH_JSON: &str = "nash_gap.json";

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Not converged, or a check or bound failed.
    Incomplete,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Incomplete => 2,
        }
    }
}

/// Model and grids derived from a config.
pub struct Setup {
    pub cfg: RunConfig,
    pub model: SharedModel,
    pub time: TimeGrid,
    pub invariant: InvariantRegion,
    pub sgrid: StateGrid,
    pub ledger: LipschitzLedger,
    pub constants: ConstantLedger,
    pub warnings: Vec<String>,
}

impl Setup {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let m0 = match &cfg.model.m0_file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading model.m0_file {}", path.display()))?;
                Some(io::parse_measure_csv(&text).with_context(|| format!("parsing {}", path.display()))?)
            }
            None => None,
        };
        let model = build_template(&cfg.model.template, &cfg.model.params, m0)?;
        let time = TimeGrid::new(model.horizon(), cfg.grid.steps)?;
        let invariant = bound_box_and_k(model.as_ref(), &time, &BoundOptions::default())?;
        let sgrid = match (&cfg.grid.lo, &cfg.grid.hi, cfg.grid.nodes) {
            (Some(lo), Some(hi), nodes) => {
                let region = minimax_mfg::measures::BoxRegion::new(lo.clone(), hi.clone())?;
                let per_axis = nodes.unwrap_or(*StateGrid::default_for(&region)?.counts().first().unwrap_or(&101));
                StateGrid::uniform(region, per_axis)?
            }
            (_, _, Some(nodes)) => {
                let region = StateGrid::default_for(&invariant.region)?.region().clone();
                StateGrid::uniform(region, nodes)?
            }
            _ => StateGrid::default_for(&invariant.region)?,
        };
        let mut warnings = Vec::new();
        let ledger = match (&cfg.model.ledger, model.declared_ledger(&invariant.region)) {
            (Some(map), _) => LipschitzLedger::from_map(map)?,
            (None, Some(declared)) => {
                warnings = ledger_warnings(model.as_ref(), &time, &invariant.region, &declared)?;
                declared
            }
            (None, None) => {
                warnings.push("no declared ledger; using sampled ratios inflated by 5%".into());
                estimate_ledger(model.as_ref(), &time, &invariant.region)?
            }
        };
        let constants = ConstantLedger::compute(&ledger, model.horizon(), invariant.region.diameter());
        Ok(Self {
            cfg,
            model,
            time,
            invariant,
            sgrid,
            ledger,
            constants,
            warnings,
        })
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            guard: Some(self.invariant.region.clone()),
            ..self.cfg.solver_options()
        }
    }

    fn context(&self, flow: &minimax_mfg::measures::MeasureFlow) -> Result<FlowContext> {
        Ok(FlowContext::new(self.model.as_ref(), flow)?.with_guard(self.invariant.region.clone()))
    }
}

pub fn load_config(path: &Path, out: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path).with_context(|| format!("loading config {}", path.display()))?;
    if let Some(out) = out {
        cfg.output.dir = out.to_path_buf();
    }
    if let Some(seed) = seed {
        cfg.nplayer.seeds = vec![seed];
    }
    Ok(cfg)
}

/// Solves for an equilibrium and writes the result directory.
pub fn cmd_solve(setup: &Setup) -> Result<(Status, Diagnostics)> {
    let opts = setup.solver_options();
    let result = fixed_point_solve(setup.model.as_ref(), setup.time, &setup.sgrid, &opts)?;
    let ctx = setup.context(&result.flow)?;
    let dp = result.bundle.dp_consistency(setup.model.as_ref(), &ctx, &result.vfield);
    let diagnostics = Diagnostics {
        model: setup.model.name().to_string(),
        params: setup.cfg.model.params.clone(),
        time_grid: setup.time,
        state_grid: setup.sgrid.clone(),
        invariant_box: setup.invariant.region.clone(),
        speed_bound: setup.invariant.speed_bound,
        solver: SolverRecord::from(&opts),
        residual: result.residual,
        iterations: result.iterations,
        converged: result.converged,
        history: result.history.clone(),
        consolidation_w1: result.consolidation_w1,
        paths: result.paths,
        dp_consistency: dp,
        ledger: setup.ledger.to_map(),
        constants: setup.constants.to_map(),
        warnings: setup.warnings.clone(),
    };
    io::save_result(&setup.cfg.output.dir, &result, &diagnostics)?;
    let status = if result.converged { Status::Ok } else { Status::Incomplete };
    Ok((status, diagnostics))
}

fn load(setup: &Setup, dir: &Path) -> Result<LoadedResult> {
    let loaded = io::load_result(dir, setup.model.as_ref())
        .with_context(|| format!("loading result directory {}", dir.display()))?;
    let g = loaded.flow.grid();
    if !g.same_as(&setup.time) {
        bail!(
            "{} uses time grid (T={}, steps={}), the config asks for (T={}, steps={})",
            dir.display(),
            g.horizon(),
            g.steps(),
            setup.time.horizon(),
            setup.time.steps()
        );
    }
    if loaded.diagnostics.state_grid != setup.sgrid {
        bail!("{} was solved on another state grid than the config describes", dir.display());
    }
    Ok(loaded)
}

#[derive(Debug, Clone, Serialize)]
pub struct Section {
    pub defect: f64,
    pub tol: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl Section {
    fn new(defect: f64, tol: f64) -> Self {
        Self {
            defect,
            tol,
            pass: defect <= tol,
            details: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, v: f64) -> Self {
        self.details.insert(key.to_string(), v);
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub terminal: Section,
    pub viability: Section,
    pub upper_hadamard: Section,
    pub lower_hadamard: Section,
    pub bellman: Section,
    pub equilibrium: Section,
    pub pass: bool,
}

/// Re-validates a result directory against the optimality and equilibrium
/// conditions and writes `check.json` next to it.
pub fn cmd_check(setup: &Setup, dir: &Path) -> Result<(Status, CheckReport)> {
    let loaded = load(setup, dir)?;
    let model = setup.model.as_ref();
    let ctx = setup.context(&loaded.flow)?;
    let v = &loaded.vfield;
    let c = &setup.cfg.check;
    let steps = setup.time.steps();

    let feats = ctx.features(steps);
    let terminal = setup
        .sgrid
        .nodes()
        .zip(v.slice(steps))
        .map(|(x, val)| (val - model.terminal_payoff(&x, feats)).abs())
        .fold(0.0, f64::max);
    let terminal = Section::new(terminal, c.terminal_tol);

    let bellman = Section::new(v.dp_residual(model, &ctx)?, c.bellman_tol);

    let dp = loaded.bundle.dp_consistency(model, &ctx, v);
    let vtol = c.viability_factor * dp + c.bellman_tol;
    let (mut graph, mut e_minus, mut hull) = (0.0f64, 0.0f64, 0.0f64);
    for e in loaded.bundle.entries() {
        let r = check_viability(model, &ctx, v, &e.trajectory, vtol)?;
        graph = graph.max(r.graph_defect);
        e_minus = e_minus.max(r.e_minus_defect);
        hull = hull.max(r.hull_gap);
    }
    let viability = Section::new(graph.max(e_minus).max(hull), vtol)
        .with("graph_defect", graph)
        .with("e_minus_defect", e_minus)
        .with("hull_gap", hull)
        .with("dp_consistency", dp);

    let h = setup.sgrid.spacing().iter().fold(0.0f64, |a, b| a.max(*b));
    let deltas: Vec<f64> = c.delta_multiples.iter().map(|m| m * h).collect();
    let samples = hadamard_samples(&loaded, &c.sample_fractions);
    let had = check_hadamard(model, &ctx, v, &samples, &deltas)?;
    let htol = c.hadamard_factor * (setup.time.dt() + h);
    let upper = Section::new(had.upper_defect, htol).with("samples", had.samples as f64);
    let lower = Section::new(had.lower_defect, htol).with("samples", had.samples as f64);

    let step = apply_a_in(model, &ctx, &setup.sgrid, setup.cfg.solver.split_ties)?;
    let residual = flow_distance(&step.nu, &loaded.flow)?;
    let reint = loaded.bundle.reintegration_defect(model, &ctx)?;
    let equilibrium = Section::new(residual, setup.cfg.solver.tol_w)
        .with("recorded_residual", loaded.diagnostics.residual)
        .with("reintegration_defect", reint);
    let equilibrium = Section {
        pass: equilibrium.pass && reint <= c.bellman_tol,
        ..equilibrium
    };

    let pass = [&terminal, &viability, &upper, &lower, &bellman, &equilibrium]
        .iter()
        .all(|s| s.pass);
    let report = CheckReport {
        terminal,
        viability,
        upper_hadamard: upper,
        lower_hadamard: lower,
        bellman,
        equilibrium,
        pass,
    };
    io::write_json(&dir.join(CHECK_JSON), &report)?;
    Ok((if pass { Status::Ok } else { Status::Incomplete }, report))
}

/// On-path sample points: the bundle states at the requested fractions of
/// the horizon, at most 9 entries per time, trusted nodes only.
fn hadamard_samples(loaded: &LoadedResult, fractions: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let grid = loaded.flow.grid();
    let entries = loaded.bundle.entries();
    let stride = entries.len().div_ceil(9).max(1);
    let mut out = Vec::new();
    for f in fractions {
        let k = ((f * grid.steps() as f64).round() as usize).min(grid.steps().saturating_sub(1));
        for e in entries.iter().step_by(stride) {
            let x = e.trajectory.state(k).to_vec();
            if loaded.vfield.is_trusted(k, &x) && !out.contains(&(k, x.clone())) {
                out.push((k, x));
            }
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct NashManifest {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub site_rule: SiteRuleKind,
    pub probe_players: usize,
    pub inner_tol: f64,
    pub inner_max_iter: usize,
    pub equilibrium_residual: f64,
    pub dp_consistency: f64,
    /// `dp_consistency + equilibrium_residual`.
    pub scheme_tol: f64,
    pub slack: f64,
    pub ledger: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub rows: Vec<NashRow>,
    pub all_within_bound: bool,
}

/// Measures Nash gaps of the equilibrium profile for every `(N, seed)`.
pub fn cmd_nash_gap(setup: &Setup, dir: &Path) -> Result<(Status, NashManifest)> {
    let loaded = load(setup, dir)?;
    let d = &loaded.diagnostics;
    let eq = EquilibriumResult {
        flow: loaded.flow.clone(),
        vfield: loaded.vfield.clone(),
        bundle: loaded.bundle.clone(),
        residual: d.residual,
        iterations: d.iterations,
        converged: d.converged,
        history: d.history.clone(),
        consolidation_w1: d.consolidation_w1,
        paths: d.paths,
    };
    let np = &setup.cfg.nplayer;
    let site_rule = match np.site_rule {
        SiteRuleKind::Quantile => SiteRule::Quantile,
        SiteRuleKind::Iid => SiteRule::IidSample { seed: 0 },
    };
    let opts = NashOptions {
        site_rule,
        sim: SimOptions {
            tol: setup.cfg.inner_tol(),
            max_iter: np.inner_max_iter,
            guard: Some(setup.invariant.region.clone()),
        },
        probe_players: np.probe_players,
        sgrid: Some(setup.sgrid.clone()),
    };
    let rows = nash_gap_curve(setup.model.as_ref(), &eq, &setup.constants, &np.n_list, &np.seeds, &opts)?;
    let scheme_tol = d.dp_consistency + d.residual;
    let slack = np.slack_factor * scheme_tol;
    let all = rows.iter().all(|r| r.within_bound(slack));
    std::fs::write(dir.join(NASH_CSV), nash_csv(&rows))?;
    let manifest = NashManifest {
        model: d.model.clone(),
        params: d.params.clone(),
        n_list: np.n_list.clone(),
        seeds: np.seeds.clone(),
        site_rule: np.site_rule,
        probe_players: np.probe_players,
        inner_tol: setup.cfg.inner_tol(),
        inner_max_iter: np.inner_max_iter,
        equilibrium_residual: d.residual,
        dp_consistency: d.dp_consistency,
        scheme_tol,
        slack,
        ledger: setup.ledger.to_map(),
        constants: setup.constants.to_map(),
        rows,
        all_within_bound: all,
    };
    io::write_json(&dir.join(NASH_JSON), &manifest)?;
    Ok((if all { Status::Ok } else { Status::Incomplete }, manifest))
}

/// `N,seed,w_emp,d_max,gain,bound,converged`, one row per `(N, seed)`.
pub fn nash_csv(rows: &[NashRow]) -> String {
    let mut out = String::from("N,seed,w_emp,d_max,gain,bound,converged\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.n,
            r.seed,
            io::fmt_f64(r.w_emp),
            io::fmt_f64(r.d_max),
            io::fmt_f64(r.gain),
            io::fmt_f64(r.bound),
            r.converged
        ));
    }
    out
}

/// W1 distance between two measure CSV files.
pub fn cmd_w1(a: &Path, b: &Path) -> Result<f64> {
    let read = |p: &Path| -> Result<_> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        io::parse_measure_csv(&text).with_context(|| format!("parsing {}", p.display()))
    };
    Ok(w1_distance(&read(a)?, &read(b)?)?)
}

pub fn result_dir(cfg: &RunConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| cfg.output.dir.clone())
}
