//! Text formats for measures, flows, value functions, bundles and result
//! directories. Parsers take `&str`, reject malformed input with
//! [`Error::Parse`] and never panic. Floats are written with 17 significant
//! digits, so every written file reads back bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{FlowContext, RelaxedControl, Trajectory};
use crate::equilibrium::{BundleEntry, EquilibriumResult, Schedule, SolverOptions, TrajectoryBundle};
use crate::error::{Error, Result};
use crate::measures::{BoxRegion, MeasureFlow, ParticleMeasure, TimeGrid};
use crate::model::MeanFieldModel;
use crate::value::{StateGrid, ValueField, MAX_STATE_DIM};

pub const FLOW_JSON: &str = "flow.json";
pub const FLOW_CSV: &str = "flow.csv";
pub const VALUE_CSV: &str = "value.csv";
pub const BUNDLE_CSV: &str = "bundle.csv";
pub const DIAGNOSTICS_JSON: &str = "diagnostics.json";

/// Relative tolerance when matching written grid coordinates and times.
const GRID_TOL: f64 = 1e-9;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, fields: impl IntoIterator<Item = String>) {
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        out.push_str(&f);
        first = false;
    }
    out.push('\n');
}

fn parse_err(line: u64, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("line {line}: {msg}"))
}

fn number(line: u64, column: &str, s: &str) -> Result<f64> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(line, format!("column `{column}`: {s:?} is not a finite number"))),
    }
}

fn index(line: u64, column: &str, s: &str) -> Result<usize> {
    s.parse::<usize>()
        .map_err(|_| parse_err(line, format!("column `{column}`: {s:?} is not an index")))
}

/// Rows of a headed CSV document, with the 1-based line of each row.
struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(text: &str) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

/// Checks `header` against `prefix`, `x1..xn`, `suffix` and returns `n`.
fn state_columns(header: &[String], prefix: &[&str], suffix: &[&str]) -> Result<usize> {
    let expected = |n: usize| -> Vec<String> {
        prefix
            .iter()
            .map(|s| s.to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .chain(suffix.iter().map(|s| s.to_string()))
            .collect()
    };
    let n = header.len().saturating_sub(prefix.len() + suffix.len());
    if n == 0 || header != expected(n).as_slice() {
        return Err(Error::Parse(format!(
            "header {:?} does not match {:?}",
            header.join(","),
            expected(1.max(n)).join(",")
        )));
    }
    Ok(n)
}

fn state_header(prefix: &[&str], dim: usize, suffix: &[&str]) -> Vec<String> {
    prefix
        .iter()
        .map(|s| s.to_string())
        .chain((1..=dim).map(|i| format!("x{i}")))
        .chain(suffix.iter().map(|s| s.to_string()))
        .collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= GRID_TOL * a.abs().max(b.abs()).max(1.0)
}

/// Time grid whose node `k` is `times[k]`.
fn infer_time_grid(times: &[f64]) -> Result<TimeGrid> {
    if times.len() < 2 {
        return Err(Error::Parse("need at least two time nodes".into()));
    }
    let steps = times.len() - 1;
    let grid = TimeGrid::new(times[steps], steps).map_err(|e| Error::Parse(e.to_string()))?;
    for (k, t) in times.iter().enumerate() {
        if !close(*t, grid.node(k)) {
            return Err(Error::Parse(format!(
                "time {t} at node {k} is off the uniform grid of horizon {}",
                grid.horizon()
            )));
        }
    }
    Ok(grid)
}

// ---------------------------------------------------------------- measures

/// CSV with header `x1,...,xn,weight`, one atom per row.
pub fn write_measure_csv(m: &ParticleMeasure) -> String {
    let mut out = String::new();
    push_row(&mut out, state_header(&[], m.dim(), &["weight"]));
    for (x, w) in m.iter() {
        push_row(&mut out, x.iter().map(|v| fmt_f64(*v)).chain([fmt_f64(w)]));
    }
    out
}

pub fn parse_measure_csv(text: &str) -> Result<ParticleMeasure> {
    let table = read_table(text)?;
    let dim = state_columns(&table.header, &[], &["weight"])?;
    let mut coords = Vec::with_capacity(table.rows.len() * dim);
    let mut weights = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        for (c, s) in table.header.iter().zip(row).take(dim) {
            coords.push(number(*line, c, s)?);
        }
        weights.push(number(*line, "weight", &row[dim])?);
    }
    ParticleMeasure::new(dim, coords, weights)
}

// ------------------------------------------------------------------- flows

#[derive(Serialize, Deserialize)]
struct FlowDoc {
    grid: TimeGrid,
    snapshots: Vec<Vec<(Vec<f64>, f64)>>,
}

/// JSON document `{grid: {T, steps}, snapshots: [[[x...], w], ...]}`.
pub fn write_flow_json(flow: &MeasureFlow) -> Result<String> {
    let doc = FlowDoc {
        grid: *flow.grid(),
        snapshots: flow
            .snapshots()
            .iter()
            .map(|m| m.iter().map(|(x, w)| (x.to_vec(), w)).collect())
            .collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn parse_flow_json(text: &str) -> Result<MeasureFlow> {
    let doc: FlowDoc = serde_json::from_str(text)?;
    if doc.snapshots.len() != doc.grid.node_count() {
        return Err(Error::Parse(format!(
            "{} snapshots for {} grid nodes",
            doc.snapshots.len(),
            doc.grid.node_count()
        )));
    }
    let snaps = doc
        .snapshots
        .into_iter()
        .enumerate()
        .map(|(k, atoms)| {
            let dim = atoms.first().map_or(0, |a| a.0.len());
            let mut coords = Vec::with_capacity(atoms.len() * dim);
            let mut weights = Vec::with_capacity(atoms.len());
            for (x, w) in atoms {
                if x.len() != dim {
                    return Err(Error::Parse(format!("snapshot {k}: atoms of mixed dimension")));
                }
                coords.extend(x);
                weights.push(w);
            }
            ParticleMeasure::new(dim, coords, weights)
                .map_err(|e| Error::Parse(format!("snapshot {k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(doc.grid, snaps)
}

/// Long-format CSV `k,t,x1..xn,weight`, snapshots in node order.
pub fn write_flow_csv(flow: &MeasureFlow) -> String {
    let mut out = String::new();
    push_row(&mut out, state_header(&["k", "t"], flow.dim(), &["weight"]));
    for (k, m) in flow.snapshots().iter().enumerate() {
        let t = fmt_f64(flow.grid().node(k));
        for (x, w) in m.iter() {
            push_row(
                &mut out,
                [k.to_string(), t.clone()]
                    .into_iter()
                    .chain(x.iter().map(|v| fmt_f64(*v)))
                    .chain([fmt_f64(w)]),
            );
        }
    }
    out
}

pub fn parse_flow_csv(text: &str) -> Result<MeasureFlow> {
    let table = read_table(text)?;
    let dim = state_columns(&table.header, &["k", "t"], &["weight"])?;
    let mut nodes: BTreeMap<usize, (f64, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, row) in &table.rows {
        let k = index(*line, "k", &row[0])?;
        let t = number(*line, "t", &row[1])?;
        let slot = nodes.entry(k).or_insert_with(|| (t, Vec::new(), Vec::new()));
        if slot.0 != t {
            return Err(parse_err(*line, format!("node {k} has two times")));
        }
        for (c, s) in table.header.iter().zip(row).skip(2).take(dim) {
            slot.1.push(number(*line, c, s)?);
        }
        slot.2.push(number(*line, "weight", &row[dim + 2])?);
    }
    if nodes.keys().enumerate().any(|(i, k)| i != *k) {
        return Err(Error::Parse("node indices must run 0, 1, ..., steps".into()));
    }
    let times: Vec<f64> = nodes.values().map(|n| n.0).collect();
    let grid = infer_time_grid(&times)?;
    let snaps = nodes
        .into_iter()
        .map(|(k, (_, coords, weights))| {
            ParticleMeasure::new(dim, coords, weights)
                .map_err(|e| Error::Parse(format!("node {k}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFlow::new(grid, snaps)
}

// ---------------------------------------------------------- value fields

/// Node values of a value function on `time x sgrid`, node-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub time: TimeGrid,
    pub sgrid: StateGrid,
    /// `values[k * sgrid.len() + i]`.
    pub values: Vec<f64>,
}

impl ValueTable {
    pub fn of(v: &ValueField) -> Self {
        Self {
            time: *v.time_grid(),
            sgrid: v.state_grid().clone(),
            values: v.values().to_vec(),
        }
    }

    /// Rebuilds argmax sets and trust weights against the flow in `ctx`.
    pub fn into_field(self, model: &dyn MeanFieldModel, ctx: &FlowContext) -> Result<ValueField> {
        self.time.ensure_same(ctx.grid())?;
        ValueField::from_values(model, ctx, &self.sgrid, self.values)
    }
}

/// CSV `t,x1..xn,V`; rows run over state nodes (first axis fastest) within
/// each time node.
pub fn write_value_csv(v: &ValueField) -> String {
    let sg = v.state_grid();
    let mut out = String::new();
    push_row(&mut out, state_header(&["t"], sg.dim(), &["V"]));
    let coords: Vec<Vec<String>> = sg
        .nodes()
        .map(|x| x.iter().map(|c| fmt_f64(*c)).collect())
        .collect();
    for k in 0..v.time_grid().node_count() {
        let t = fmt_f64(v.time_grid().node(k));
        for (x, val) in coords.iter().zip(v.slice(k)) {
            push_row(
                &mut out,
                std::iter::once(t.clone())
                    .chain(x.iter().cloned())
                    .chain([fmt_f64(*val)]),
            );
        }
    }
    out
}

/// Reads a value CSV, inferring both grids from the coordinates.
pub fn parse_value_csv(text: &str) -> Result<ValueTable> {
    let table = read_table(text)?;
    let dim = state_columns(&table.header, &["t"], &["V"])?;
    if dim > MAX_STATE_DIM {
        return Err(Error::Parse(format!("{dim} state columns exceed the maximum {MAX_STATE_DIM}")));
    }
    let mut times: Vec<f64> = Vec::new();
    let mut points: Vec<f64> = Vec::with_capacity(table.rows.len() * dim);
    let mut values = Vec::with_capacity(table.rows.len());
    let mut row_time = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        let t = number(*line, "t", &row[0])?;
        if times.last() != Some(&t) {
            if times.contains(&t) {
                return Err(parse_err(*line, format!("rows of time {t} are not contiguous")));
            }
            times.push(t);
        }
        row_time.push(times.len() - 1);
        for (c, s) in table.header.iter().zip(row).skip(1).take(dim) {
            points.push(number(*line, c, s)?);
        }
        values.push(number(*line, "V", &row[dim + 1])?);
    }
    let time = infer_time_grid(&times)?;
    let mut axes: Vec<Vec<f64>> = (0..dim)
        .map(|d| points.iter().skip(d).step_by(dim).copied().collect())
        .collect();
    for a in &mut axes {
        a.sort_by(f64::total_cmp);
        a.dedup();
    }
    let len = axes
        .iter()
        .try_fold(1usize, |acc, a| acc.checked_mul(a.len()))
        .ok_or_else(|| Error::Parse("state lattice too large".into()))?;
    if Some(values.len()) != len.checked_mul(times.len()) {
        return Err(Error::Parse(format!(
            "{} rows do not form a {} x {len} lattice",
            values.len(),
            times.len()
        )));
    }
    let region = BoxRegion::new(
        axes.iter().map(|a| a[0]).collect(),
        axes.iter().map(|a| a[a.len() - 1]).collect(),
    )
    .map_err(|e| Error::Parse(e.to_string()))?;
    let sgrid = StateGrid::new(region, axes.iter().map(Vec::len).collect())
        .map_err(|e| Error::Parse(e.to_string()))?;
    let mut x = vec![0.0; dim];
    for (r, (line, _)) in table.rows.iter().enumerate() {
        let (k, i) = (r / len, r % len);
        sgrid.node_into(i, &mut x);
        let found = &points[r * dim..(r + 1) * dim];
        if row_time[r] != k || x.iter().zip(found).any(|(a, b)| !close(*a, *b)) {
            return Err(parse_err(*line, "rows are not in lattice order"));
        }
    }
    Ok(ValueTable { time, sgrid, values })
}

#[derive(Serialize, Deserialize)]
struct ValueDoc {
    grid: TimeGrid,
    state_grid: StateGrid,
    /// One array of node values per time node.
    values: Vec<Vec<f64>>,
}

/// JSON `{grid: {T, steps}, state_grid: {lo, hi, nodes}, values: [[...]]}`.
pub fn write_value_json(v: &ValueField) -> Result<String> {
    let doc = ValueDoc {
        grid: *v.time_grid(),
        state_grid: v.state_grid().clone(),
        values: (0..v.time_grid().node_count()).map(|k| v.slice(k).to_vec()).collect(),
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn parse_value_json(text: &str) -> Result<ValueTable> {
    let doc: ValueDoc = serde_json::from_str(text)?;
    if doc.values.len() != doc.grid.node_count() {
        return Err(Error::Parse(format!(
            "{} value slices for {} time nodes",
            doc.values.len(),
            doc.grid.node_count()
        )));
    }
    if let Some(k) = doc.values.iter().position(|s| s.len() != doc.state_grid.len()) {
        return Err(Error::Parse(format!("slice {k} does not match the state grid")));
    }
    if doc.values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Parse("non-finite value".into()));
    }
    Ok(ValueTable {
        time: doc.grid,
        sgrid: doc.state_grid,
        values: doc.values.into_iter().flatten().collect(),
    })
}

// ----------------------------------------------------- trajectories/bundles

/// `j` for a Dirac cell, `j:w;j:w;...` over the positive weights otherwise.
pub fn format_control_cell(cell: &[f64]) -> String {
    if let Some(j) = cell.iter().position(|w| *w == 1.0) {
        return j.to_string();
    }
    cell.iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(j, w)| format!("{j}:{}", fmt_f64(*w)))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_control_cell(line: u64, s: &str, n_controls: usize) -> Result<Vec<f64>> {
    let mut cell = vec![0.0; n_controls];
    let bad = |msg: String| parse_err(line, format!("control {s:?}: {msg}"));
    if s.is_empty() {
        return Err(bad("empty".into()));
    }
    let single = !s.contains(':');
    for part in s.split(';') {
        let (j, w) = match part.split_once(':') {
            Some((j, w)) if !single => (j.trim(), number(line, "control", w.trim())?),
            None if single => (part.trim(), 1.0),
            _ => return Err(bad("mixes pure and weighted forms".into())),
        };
        let j = index(line, "control", j)?;
        if j >= n_controls {
            return Err(bad(format!("index {j} outside {n_controls} controls")));
        }
        if w < 0.0 {
            return Err(bad(format!("negative weight {w}")));
        }
        cell[j] += w;
    }
    Ok(cell)
}

/// CSV `t,x1..xn,z`, with `z` the accumulated cost variable.
pub fn write_trajectory_csv(tr: &Trajectory) -> String {
    let mut out = String::new();
    push_row(&mut out, state_header(&["t"], tr.dim(), &["z"]));
    for k in 0..tr.grid().node_count() {
        push_row(
            &mut out,
            std::iter::once(fmt_f64(tr.grid().node(k)))
                .chain(tr.state(k).iter().map(|v| fmt_f64(*v)))
                .chain([fmt_f64(tr.cost(k))]),
        );
    }
    out
}

pub fn parse_trajectory_csv(text: &str) -> Result<Trajectory> {
    let table = read_table(text)?;
    let dim = state_columns(&table.header, &["t"], &["z"])?;
    let mut times = Vec::with_capacity(table.rows.len());
    let mut states = Vec::with_capacity(table.rows.len() * dim);
    let mut cost = Vec::with_capacity(table.rows.len());
    for (line, row) in &table.rows {
        times.push(number(*line, "t", &row[0])?);
        for (c, s) in table.header.iter().zip(row).skip(1).take(dim) {
            states.push(number(*line, c, s)?);
        }
        cost.push(number(*line, "z", &row[dim + 1])?);
    }
    let grid = infer_time_grid(&times)?;
    Trajectory::new(grid, dim, states, cost)
}

/// CSV `entry,weight,k,t,x1..xn,z,control`: one row per entry and time node;
/// `control` holds the distribution used on `[t_k, t_{k+1})` and is empty on
/// the final node.
pub fn write_bundle_csv(b: &TrajectoryBundle) -> String {
    let mut out = String::new();
    push_row(&mut out, state_header(&["entry", "weight", "k", "t"], b.dim(), &["z", "control"]));
    let steps = b.grid().steps();
    for (e, entry) in b.entries().iter().enumerate() {
        let w = fmt_f64(entry.weight);
        for k in 0..=steps {
            let control = if k < steps {
                format_control_cell(entry.control.cell(k))
            } else {
                String::new()
            };
            push_row(
                &mut out,
                [e.to_string(), w.clone(), k.to_string(), fmt_f64(b.grid().node(k))]
                    .into_iter()
                    .chain(entry.trajectory.state(k).iter().map(|v| fmt_f64(*v)))
                    .chain([fmt_f64(entry.trajectory.cost(k)), control]),
            );
        }
    }
    out
}

struct EntryRows {
    weight: f64,
    times: Vec<f64>,
    states: Vec<f64>,
    cost: Vec<f64>,
    cells: Vec<Vec<f64>>,
    last_line: u64,
    closed: bool,
}

pub fn parse_bundle_csv(text: &str, n_controls: usize) -> Result<TrajectoryBundle> {
    if n_controls == 0 {
        return Err(Error::Parse("bundle needs at least one control".into()));
    }
    let table = read_table(text)?;
    let dim = state_columns(&table.header, &["entry", "weight", "k", "t"], &["z", "control"])?;
    let mut entries: BTreeMap<usize, EntryRows> = BTreeMap::new();
    for (line, row) in &table.rows {
        let line = *line;
        let e = index(line, "entry", &row[0])?;
        let weight = number(line, "weight", &row[1])?;
        let k = index(line, "k", &row[2])?;
        let slot = entries.entry(e).or_insert_with(|| EntryRows {
            weight,
            times: Vec::new(),
            states: Vec::new(),
            cost: Vec::new(),
            cells: Vec::new(),
            last_line: line,
            closed: false,
        });
        if slot.weight != weight {
            return Err(parse_err(line, format!("entry {e} changes weight")));
        }
        if slot.closed || k != slot.times.len() {
            return Err(parse_err(line, format!("entry {e}: node {k} out of order")));
        }
        slot.times.push(number(line, "t", &row[3])?);
        for (c, s) in table.header.iter().zip(row).skip(4).take(dim) {
            slot.states.push(number(line, c, s)?);
        }
        slot.cost.push(number(line, "z", &row[dim + 4])?);
        let control = &row[dim + 5];
        if control.is_empty() {
            slot.closed = true;
        } else {
            slot.cells.push(parse_control_cell(line, control, n_controls)?);
        }
        slot.last_line = line;
    }
    if entries.keys().enumerate().any(|(i, e)| i != *e) {
        return Err(Error::Parse("entry indices must run 0, 1, ...".into()));
    }
    let mut out = Vec::with_capacity(entries.len());
    let mut grid: Option<TimeGrid> = None;
    for (e, rows) in entries {
        if !rows.closed {
            return Err(parse_err(rows.last_line, format!("entry {e} lacks a final node")));
        }
        let g = infer_time_grid(&rows.times)?;
        match &grid {
            Some(first) if !first.same_as(&g) => {
                return Err(parse_err(rows.last_line, format!("entry {e} uses another time grid")));
            }
            None => grid = Some(g),
            _ => {}
        }
        let trajectory = Trajectory::new(g, dim, rows.states, rows.cost)?;
        out.push(BundleEntry {
            weight: rows.weight,
            x0: trajectory.state(0).to_vec(),
            control: RelaxedControl::new(g, rows.cells)?,
            trajectory,
        });
    }
    TrajectoryBundle::new(out)
}

// ------------------------------------------------------ result directories

/// Solver settings as recorded in diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub schedule: Schedule,
    pub tol_w: f64,
    pub max_iter: usize,
    pub particle_cap: usize,
    pub split_ties: bool,
    pub guard: Option<BoxRegion>,
}

impl From<&SolverOptions> for SolverRecord {
    fn from(o: &SolverOptions) -> Self {
        Self {
            schedule: o.schedule,
            tol_w: o.tol_w,
            max_iter: o.max_iter,
            particle_cap: o.particle_cap,
            split_ties: o.split_ties,
            guard: o.guard.clone(),
        }
    }
}

/// Everything about a solve that is not a flow, value or bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub time_grid: TimeGrid,
    pub state_grid: StateGrid,
    /// Invariant box and speed bound used for the ledger constants.
    pub invariant_box: BoxRegion,
    pub speed_bound: f64,
    pub solver: SolverRecord,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<f64>,
    pub consolidation_w1: f64,
    pub paths: usize,
    /// `max |J(entry) - V(0, x0)|` over the bundle.
    pub dp_consistency: f64,
    pub ledger: BTreeMap<String, f64>,
    pub constants: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

/// A result directory read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedResult {
    pub diagnostics: Diagnostics,
    pub flow: MeasureFlow,
    pub vfield: ValueField,
    pub bundle: TrajectoryBundle,
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<()> {
    std::fs::write(dir.join(name), text).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display())))
    })
}

fn read_file(dir: &Path, name: &str) -> Result<String> {
    std::fs::read_to_string(dir.join(name)).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display())))
    })
}

fn in_file(name: &'static str) -> impl Fn(Error) -> Error {
    move |e| Error::Parse(format!("{name}: {e}"))
}

/// Writes flow (JSON and CSV), value CSV, bundle CSV and diagnostics.
pub fn save_result(dir: &Path, result: &EquilibriumResult, diagnostics: &Diagnostics) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_file(dir, FLOW_JSON, &write_flow_json(&result.flow)?)?;
    write_file(dir, FLOW_CSV, &write_flow_csv(&result.flow))?;
    write_file(dir, VALUE_CSV, &write_value_csv(&result.vfield))?;
    write_file(dir, BUNDLE_CSV, &write_bundle_csv(&result.bundle))?;
    write_file(dir, DIAGNOSTICS_JSON, &serde_json::to_string_pretty(diagnostics)?)?;
    Ok(())
}

/// Reads a directory written by [`save_result`] and re-validates it against
/// `model`.
pub fn load_result(dir: &Path, model: &dyn MeanFieldModel) -> Result<LoadedResult> {
    let diagnostics: Diagnostics = serde_json::from_str(&read_file(dir, DIAGNOSTICS_JSON)?)
        .map_err(|e| Error::Parse(format!("{DIAGNOSTICS_JSON}: {e}")))?;
    if diagnostics.model != model.name() {
        return Err(Error::Inconsistent(format!(
            "result was produced by model `{}`, not `{}`",
            diagnostics.model,
            model.name()
        )));
    }
    let flow = parse_flow_json(&read_file(dir, FLOW_JSON)?).map_err(in_file(FLOW_JSON))?;
    flow.grid().ensure_same(&diagnostics.time_grid)?;
    if flow.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: flow.dim(),
        });
    }
    let table = parse_value_csv(&read_file(dir, VALUE_CSV)?).map_err(in_file(VALUE_CSV))?;
    if table.sgrid != diagnostics.state_grid {
        return Err(Error::Inconsistent(format!("{VALUE_CSV} does not use the recorded state grid")));
    }
    let mut ctx = FlowContext::new(model, &flow)?;
    if let Some(g) = &diagnostics.solver.guard {
        ctx = ctx.with_guard(g.clone());
    }
    let vfield = table.into_field(model, &ctx)?;
    let bundle = parse_bundle_csv(&read_file(dir, BUNDLE_CSV)?, model.controls().len())
        .map_err(in_file(BUNDLE_CSV))?;
    bundle.grid().ensure_same(&diagnostics.time_grid)?;
    Ok(LoadedResult {
        diagnostics,
        flow,
        vfield,
        bundle,
    })
}

/// Writes `value` as pretty JSON to `path`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text)?;
    Ok(())
}
