//! The finite-population game: player placement by optimal transport of the
//! initial measure, routing of equilibrium controls to players, simulation
//! of the coupled open-loop system, and measured deviation gains.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowContext, RelaxedControl, Trajectory};
use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::measures::{
    decompose_to_empirical, flow_distance, quantile_coupling, BoxRegion, EmpiricalDecomposition,
    MeasureFlow, ParticleMeasure, TimeGrid, MASS_TOL,
};
use crate::model::{ConstantLedger, MeanFieldModel};
use crate::value::{best_response_in, solve_value_in, StateGrid};

#[derive(Debug, Clone, PartialEq)]
pub enum SiteRule {
    /// Mean of each of the `N` equal-mass quantile slices of `m0` (1D only).
    Quantile,
    /// `N` independent draws from `m0`.
    IidSample { seed: u64 },
    List(Vec<Vec<f64>>),
}

#[derive(Debug, Clone)]
pub struct PlayerSetup {
    pub sites: Vec<Vec<f64>>,
    /// Normalized pieces of `m0` routed to each site.
    pub parts: Vec<ParticleMeasure>,
    pub decomposition: EmpiricalDecomposition,
    /// `W(m0, delta_x^N)`.
    pub w_emp: f64,
    /// `N max_i int |x - x_i| (1/N) part_i(dx)`.
    pub d_max: f64,
}

impl PlayerSetup {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

pub fn setup_players(model: &dyn MeanFieldModel, n: usize, rule: &SiteRule) -> Result<PlayerSetup> {
    if n == 0 {
        return Err(Error::config("nplayer.n_list", "player counts must be at least 1"));
    }
    let m0 = model.initial_measure();
    let sites = match rule {
        SiteRule::Quantile => quantile_sites(m0, n)?,
        SiteRule::IidSample { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let dist = WeightedIndex::new(m0.weights())
                .map_err(|e| Error::InvalidMeasure(e.to_string()))?;
            (0..n).map(|_| m0.point(dist.sample(&mut rng)).to_vec()).collect()
        }
        SiteRule::List(list) => {
            if list.len() != n {
                return Err(Error::config(
                    "nplayer.sites",
                    format!("{} sites listed for {n} players", list.len()),
                ));
            }
            if let Some(s) = list.iter().find(|s| s.len() != m0.dim()) {
                return Err(Error::DimensionMismatch {
                    expected: m0.dim(),
                    found: s.len(),
                });
            }
            list.clone()
        }
    };
    let decomposition = decompose_to_empirical(m0, &sites)?;
    let d_max = decomposition.max_part_spread(&sites);
    Ok(PlayerSetup {
        w_emp: decomposition.distance,
        d_max,
        parts: decomposition.parts.clone(),
        sites,
        decomposition,
    })
}

fn quantile_sites(m0: &ParticleMeasure, n: usize) -> Result<Vec<Vec<f64>>> {
    if m0.dim() != 1 {
        return Err(Error::config(
            "nplayer.site_rule",
            format!("quantile sites need a 1D initial measure, got dimension {}", m0.dim()),
        ));
    }
    let slots: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let plan = quantile_coupling(m0, &ParticleMeasure::uniform_1d(&slots)?);
    let mut sums = vec![0.0; n];
    let mut mass = vec![0.0; n];
    for e in &plan.entries {
        sums[e.target] += e.mass * m0.point(e.source)[0];
        mass[e.target] += e.mass;
    }
    Ok(sums.iter().zip(&mass).map(|(s, m)| vec![s / m]).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerMixture {
    /// `(probability, control)`, distinct controls.
    pub components: Vec<(f64, RelaxedControl)>,
    /// Bundle entries routed to this player with their probabilities.
    pub provenance: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomProfile {
    pub players: Vec<PlayerMixture>,
}

/// Routes the equilibrium bundle through the transport plan of `setup`: the
/// probability of entry `e` (started at atom `s`) for player `i` is
/// `N * plan(s, i) * weight(e) / weight of all entries at s`.
pub fn build_profile(
    model: &dyn MeanFieldModel,
    equilibrium: &EquilibriumResult,
    setup: &PlayerSetup,
) -> Result<RandomProfile> {
    let m0 = model.initial_measure();
    let bundle = &equilibrium.bundle;
    let key = |x: &[f64]| x.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let mut at_point: HashMap<Vec<u64>, (Vec<usize>, f64)> = HashMap::new();
    for (e, entry) in bundle.entries().iter().enumerate() {
        let slot = at_point.entry(key(&entry.x0)).or_insert((Vec::new(), 0.0));
        slot.0.push(e);
        slot.1 += entry.weight;
    }
    let n = setup.len();
    let mut routed: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for pe in &setup.decomposition.plan.entries {
        let x = m0.point(pe.source);
        let Some((entries, total)) = at_point.get(&key(x)) else {
            return Err(Error::Inconsistent(format!(
                "initial atom {x:?} has no equilibrium bundle entry"
            )));
        };
        for &e in entries {
            let p = n as f64 * pe.mass * bundle.entries()[e].weight / total;
            if p > 0.0 {
                routed[pe.target].push((e, p));
            }
        }
    }
    let players = routed
        .into_iter()
        .map(|mut prov| {
            prov.sort_by_key(|(e, _)| *e);
            let total: f64 = prov.iter().map(|(_, p)| p).sum();
            for (_, p) in &mut prov {
                *p /= total;
            }
            let mut components: Vec<(f64, RelaxedControl)> = Vec::new();
            for (e, p) in &prov {
                let c = &bundle.entries()[*e].control;
                match components.iter_mut().find(|(_, a)| a == c) {
                    Some(slot) => slot.0 += p,
                    None => components.push((*p, c.clone())),
                }
            }
            PlayerMixture {
                components,
                provenance: prov,
            }
        })
        .collect();
    Ok(RandomProfile { players })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    /// Stop when successive empirical flows are within this sup-W1 distance.
    pub tol: f64,
    pub max_iter: usize,
    pub guard: Option<BoxRegion>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iter: 200,
            guard: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NPlayerOutcome {
    /// Mixture-averaged empirical flow the trajectories were integrated against.
    pub flow: MeasureFlow,
    /// Expected payoff of every player.
    pub payoffs: Vec<f64>,
    /// Sup-W1 change of the flow in the last inner step.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Copy<'a> {
    player: usize,
    prob: f64,
    start: &'a [f64],
    control: &'a RelaxedControl,
}

/// Solves the coupled system of all players' mixture trajectories by Picard
/// iteration on the empirical flow, started from the players at rest. With
/// `deviation = Some((j, mixture))`, player `j` plays `mixture` instead.
pub fn simulate_profile(
    model: &dyn MeanFieldModel,
    grid: TimeGrid,
    setup: &PlayerSetup,
    profile: &RandomProfile,
    deviation: Option<(usize, &[(f64, RelaxedControl)])>,
    opts: &SimOptions,
) -> Result<NPlayerOutcome> {
    let n = setup.len();
    if profile.players.len() != n {
        return Err(Error::Inconsistent(format!(
            "{} mixtures for {n} players",
            profile.players.len()
        )));
    }
    if let Some((j, mix)) = deviation {
        if j >= n {
            return Err(Error::Inconsistent(format!("player {j} of {n}")));
        }
        check_mixture(mix)?;
    }
    let mut copies = Vec::new();
    for (i, site) in setup.sites.iter().enumerate() {
        let comps: &[(f64, RelaxedControl)] = match deviation {
            Some((j, mix)) if j == i => mix,
            _ => &profile.players[i].components,
        };
        for (p, c) in comps {
            copies.push(Copy {
                player: i,
                prob: *p,
                start: site,
                control: c,
            });
        }
    }
    let weights: Vec<f64> = copies.iter().map(|c| c.prob / n as f64).collect();
    let at_rest = ParticleMeasure::normalized(
        model.dim(),
        setup.sites.concat(),
        vec![1.0; n],
    )?
    .merged(0.0);
    let mut flow = MeasureFlow::constant(grid, &at_rest);
    for it in 0..=opts.max_iter {
        let mut ctx = FlowContext::new(model, &flow)?;
        if let Some(g) = &opts.guard {
            ctx = ctx.with_guard(g.clone());
        }
        let trajs = copies
            .par_iter()
            .map(|c| ctx.integrate(model, 0, c.start, c.control))
            .collect::<Result<Vec<_>>>()?;
        let next = aggregate(grid, model.dim(), &trajs, &weights)?;
        let residual = flow_distance(&next, &flow)?;
        let converged = residual <= opts.tol;
        if converged || it == opts.max_iter {
            let mut payoffs = vec![0.0; n];
            for (c, t) in copies.iter().zip(&trajs) {
                payoffs[c.player] += c.prob * ctx.payoff_of(model, t);
            }
            return Ok(NPlayerOutcome {
                flow,
                payoffs,
                residual,
                iterations: it,
                converged,
            });
        }
        flow = next;
    }
    unreachable!("the loop returns at it == max_iter")
}

fn check_mixture(mix: &[(f64, RelaxedControl)]) -> Result<()> {
    let total: f64 = mix.iter().map(|(p, _)| p).sum();
    if mix.is_empty() || mix.iter().any(|(p, _)| !(*p >= 0.0)) || (total - 1.0).abs() > MASS_TOL {
        return Err(Error::InvalidControl(format!(
            "mixture probabilities must be nonnegative and sum to 1 (sum {total})"
        )));
    }
    Ok(())
}

fn aggregate(
    grid: TimeGrid,
    dim: usize,
    trajs: &[Trajectory],
    weights: &[f64],
) -> Result<MeasureFlow> {
    let snaps = (0..grid.node_count())
        .into_par_iter()
        .map(|k| {
            let mut coords = Vec::with_capacity(trajs.len() * dim);
            for t in trajs {
                coords.extend_from_slice(t.state(k));
            }
            Ok(ParticleMeasure::normalized(dim, coords, weights.to_vec())?.merged(0.0))
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(grid, snaps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationResult {
    /// `max_candidates J(deviated) - J(baseline)` for the probed player.
    pub gain: f64,
    /// Index of the maximizing candidate.
    pub best: usize,
    /// Whether every deviated simulation converged.
    pub converged: bool,
}

/// Largest payoff improvement of player `j` over `baseline` among pure
/// deviations to `candidates`.
pub fn deviation_gain(
    model: &dyn MeanFieldModel,
    grid: TimeGrid,
    setup: &PlayerSetup,
    profile: &RandomProfile,
    baseline: &NPlayerOutcome,
    j: usize,
    candidates: &[RelaxedControl],
    opts: &SimOptions,
) -> Result<DeviationResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidControl("no deviation candidates".into()));
    }
    let results = candidates
        .par_iter()
        .map(|c| {
            let mix = [(1.0, c.clone())];
            let out = simulate_profile(model, grid, setup, profile, Some((j, &mix)), opts)?;
            Ok((out.payoffs[j] - baseline.payoffs[j], out.converged))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 > results[best].0 {
            best = i;
        }
    }
    Ok(DeviationResult {
        gain: results[best].0,
        best,
        converged: results.iter().all(|r| r.1),
    })
}

/// Best response from `site` against the flow in `ctx` (skipped when the
/// site is not trusted by `vfield`), every constant control, and the
/// player's own mixture components; duplicates removed.
pub fn default_candidates(
    model: &dyn MeanFieldModel,
    ctx: &FlowContext,
    vfield: Option<&crate::value::ValueField>,
    site: &[f64],
    mixture: &PlayerMixture,
) -> Result<Vec<RelaxedControl>> {
    let grid = *ctx.grid();
    let nc = model.controls().len();
    let mut out: Vec<RelaxedControl> = Vec::new();
    let mut push = |c: RelaxedControl| {
        if !out.contains(&c) {
            out.push(c);
        }
    };
    if let Some(v) = vfield {
        if v.is_trusted(0, site) {
            push(best_response_in(model, ctx, v, site, None)?);
        }
    }
    for u in 0..nc {
        push(RelaxedControl::constant(grid, nc, u)?);
    }
    for (_, c) in &mixture.components {
        push(c.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashOptions {
    /// `Quantile` or `IidSample` (the seed field is replaced per row).
    pub site_rule: SiteRule,
    pub sim: SimOptions,
    /// Most players probed per row, evenly spaced by index.
    pub probe_players: usize,
    /// State lattice for the best-response candidate; `None` skips it.
    pub sgrid: Option<StateGrid>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub w_emp: f64,
    pub d_max: f64,
    pub gain: f64,
    pub bound: f64,
    pub converged: bool,
    /// `W(nu_N, mu_hat)`, sup over nodes.
    pub flow_gap: f64,
    /// Largest sup-W1 distance of a deviated flow from `mu_hat`.
    pub deviated_flow_gap: f64,
}

impl NashRow {
    /// Whether the row is consistent with the epsilon-Nash estimate, given a
    /// slack of `slack` (always true for non-converged rows).
    pub fn within_bound(&self, slack: f64) -> bool {
        !self.converged || self.gain <= self.bound + slack
    }
}

/// Probed player indices: all of them up to `probe`, else `probe` evenly
/// spaced ones including the first and last.
pub fn probe_indices(n: usize, probe: usize) -> Vec<usize> {
    let p = probe.max(1);
    if n <= p {
        return (0..n).collect();
    }
    if p == 1 {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..p).map(|i| i * (n - 1) / (p - 1)).collect();
    out.dedup();
    out
}

/// Measured Nash gaps for every `(N, seed)` pair.
pub fn nash_gap_curve(
    model: &dyn MeanFieldModel,
    equilibrium: &EquilibriumResult,
    constants: &ConstantLedger,
    n_list: &[usize],
    seeds: &[u64],
    opts: &NashOptions,
) -> Result<Vec<NashRow>> {
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("nplayer.n_list", "must be strictly ascending"));
    }
    if seeds.is_empty() {
        return Err(Error::config("nplayer.seeds", "at least one seed is required"));
    }
    let grid = *equilibrium.flow.grid();
    let cells: Vec<(usize, u64)> = n_list
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(n, seed)| {
            let rule = match &opts.site_rule {
                SiteRule::IidSample { .. } => SiteRule::IidSample { seed },
                other => other.clone(),
            };
            let setup = setup_players(model, n, &rule)?;
            let profile = build_profile(model, equilibrium, &setup)?;
            let baseline = simulate_profile(model, grid, &setup, &profile, None, &opts.sim)?;
            let mut ctx = FlowContext::new(model, &baseline.flow)?;
            if let Some(g) = &opts.sim.guard {
                ctx = ctx.with_guard(g.clone());
            }
            let vfield = match &opts.sgrid {
                Some(s) => match solve_value_in(model, &ctx, s) {
                    Ok(v) => Some(v),
                    Err(Error::StateGridTooSmall(_)) => None,
                    Err(e) => return Err(e),
                },
                None => None,
            };
            let mut gain = f64::NEG_INFINITY;
            let mut converged = baseline.converged;
            let mut deviated_gap = 0.0f64;
            for j in probe_indices(n, opts.probe_players) {
                let cands = default_candidates(
                    model,
                    &ctx,
                    vfield.as_ref(),
                    &setup.sites[j],
                    &profile.players[j],
                )?;
                let r = deviation_gain(model, grid, &setup, &profile, &baseline, j, &cands, &opts.sim)?;
                converged &= r.converged;
                gain = gain.max(r.gain);
                let mix = [(1.0, cands[r.best].clone())];
                let dev = simulate_profile(model, grid, &setup, &profile, Some((j, &mix)), &opts.sim)?;
                deviated_gap = deviated_gap.max(flow_distance(&dev.flow, &equilibrium.flow)?);
            }
            Ok(NashRow {
                n,
                seed,
                w_emp: setup.w_emp,
                d_max: setup.d_max,
                gain,
                bound: constants.nash_bound(setup.w_emp, setup.d_max, n),
                converged,
                flow_gap: flow_distance(&baseline.flow, &equilibrium.flow)?,
                deviated_flow_gap: deviated_gap,
            })
        })
        .collect()
}
