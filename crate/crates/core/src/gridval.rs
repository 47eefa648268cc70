//! Grid-impact validation: AC power flow on a small distribution network
//! under actual and predicted load, and the per-bus voltage differences
//! between the two.
//!
//! All electrical quantities are per-unit on the case's `base_mva`. Loads
//! are constant-PQ per timestep.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;
/// Series impedance of every fixture segment.
pub const FIXTURE_R: f64 = 0.01;
pub const FIXTURE_X: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
}

/// Active and reactive demand per bus over time.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadProfile {
    pub n_timesteps: usize,
    /// Bus id → `(p, q)` series, each of length `n_timesteps`.
    pub buses: BTreeMap<usize, BusLoad>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BusLoad {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// How daily kWh figures become per-unit bus loads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadScaling {
    pub base_mva: f64,
    /// Identical stations aggregated behind each load bus.
    pub stations_per_bus: f64,
    /// Lagging power factor used to derive Q from P.
    pub power_factor: f64,
}

impl Default for LoadScaling {
    fn default() -> Self {
        Self {
            base_mva: 1.0,
            stations_per_bus: 10.0,
            power_factor: 0.95,
        }
    }
}

impl LoadScaling {
    /// Per-unit active power of one bus for a mean interval energy in kWh.
    pub fn p_pu(&self, interval_kwh: f64) -> f64 {
        let kw = interval_kwh * 60.0 / crate::ingest::SAMPLE_PERIOD_MINUTES as f64;
        kw / 1000.0 * self.stations_per_bus / self.base_mva
    }

    pub fn q_over_p(&self) -> f64 {
        self.power_factor.acos().tan()
    }
}

impl LoadProfile {
    pub fn zeros(bus_ids: impl IntoIterator<Item = usize>, n_timesteps: usize) -> Self {
        let buses = bus_ids
            .into_iter()
            .map(|id| {
                (
                    id,
                    BusLoad {
                        p: vec![0.0; n_timesteps],
                        q: vec![0.0; n_timesteps],
                    },
                )
            })
            .collect();
        Self { n_timesteps, buses }
    }

    /// Every listed bus draws the same daily-average profile.
    pub fn from_daily_average(da_kwh: &[f64], bus_ids: impl IntoIterator<Item = usize>, scaling: LoadScaling) -> Self {
        let p: Vec<f64> = da_kwh.iter().map(|&e| scaling.p_pu(e)).collect();
        let q: Vec<f64> = p.iter().map(|&v| v * scaling.q_over_p()).collect();
        let buses = bus_ids
            .into_iter()
            .map(|id| (id, BusLoad { p: p.clone(), q: q.clone() }))
            .collect();
        Self {
            n_timesteps: da_kwh.len(),
            buses,
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for load in out.buses.values_mut() {
            load.p.iter_mut().for_each(|v| *v *= k);
            load.q.iter_mut().for_each(|v| *v *= k);
        }
        out
    }

    /// `self + k · (other − self)`, elementwise.
    pub fn blend(&self, other: &LoadProfile, k: f64) -> Result<Self> {
        check_same_shape(self, other)?;
        let mut out = self.clone();
        for (id, load) in out.buses.iter_mut() {
            let o = &other.buses[id];
            for (v, w) in load.p.iter_mut().zip(&o.p) {
                *v += k * (w - *v);
            }
            for (v, w) in load.q.iter_mut().zip(&o.q) {
                *v += k * (w - *v);
            }
        }
        Ok(out)
    }

    fn validate(&self) -> Result<()> {
        for (id, load) in &self.buses {
            if load.p.len() != self.n_timesteps || load.q.len() != self.n_timesteps {
                return Err(Error::ProfileMismatch(format!(
                    "bus {id} has {}/{} samples, expected {}",
                    load.p.len(),
                    load.q.len(),
                    self.n_timesteps
                )));
            }
            if load.p.iter().chain(&load.q).any(|v| !v.is_finite()) {
                return Err(Error::ProfileMismatch(format!("bus {id} has non-finite load")));
            }
        }
        Ok(())
    }

    /// CSV `timestep,bus_id,p_pu,q_pu`, one row per timestep and bus.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestep", "bus_id", "p_pu", "q_pu"])?;
        for t in 0..self.n_timesteps {
            for (id, load) in &self.buses {
                w.write_record([t.to_string(), id.to_string(), load.p[t].to_string(), load.q[t].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            timestep: usize,
            bus_id: usize,
            p_pu: f64,
            q_pu: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut cells: BTreeMap<usize, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
        let mut n_timesteps = 0;
        for row in rdr.deserialize() {
            let row: Row = row?;
            n_timesteps = n_timesteps.max(row.timestep + 1);
            if cells
                .entry(row.bus_id)
                .or_default()
                .insert(row.timestep, (row.p_pu, row.q_pu))
                .is_some()
            {
                return Err(Error::ProfileMismatch(format!(
                    "duplicate row for bus {} at timestep {}",
                    row.bus_id, row.timestep
                )));
            }
        }
        if cells.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut buses = BTreeMap::new();
        for (id, series) in cells {
            if series.len() != n_timesteps {
                return Err(Error::ProfileMismatch(format!(
                    "bus {id} covers {} of {n_timesteps} timesteps",
                    series.len()
                )));
            }
            buses.insert(
                id,
                BusLoad {
                    p: series.values().map(|v| v.0).collect(),
                    q: series.values().map(|v| v.1).collect(),
                },
            );
        }
        Ok(Self { n_timesteps, buses })
    }
}

fn check_same_shape(a: &LoadProfile, b: &LoadProfile) -> Result<()> {
    if a.n_timesteps != b.n_timesteps {
        return Err(Error::ProfileMismatch(format!(
            "{} vs {} timesteps",
            a.n_timesteps, b.n_timesteps
        )));
    }
    let ka: Vec<_> = a.buses.keys().collect();
    let kb: Vec<_> = b.buses.keys().collect();
    if ka != kb {
        return Err(Error::ProfileMismatch(format!("buses {ka:?} vs {kb:?}")));
    }
    Ok(())
}

/// A small distribution network with its load profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    #[serde(default, skip_serializing_if = "is_empty_profile")]
    pub loads: LoadProfile,
}

fn is_empty_profile(p: &LoadProfile) -> bool {
    p.buses.is_empty()
}

/// Radial path feeder: slack at bus 0, identical segments between
/// consecutive buses.
pub fn build_fixture_case(n_buses: usize, loads: LoadProfile) -> Result<GridCase> {
    if n_buses < 2 {
        return Err(Error::InvalidSize(format!("feeder needs at least 2 buses, got {n_buses}")));
    }
    let buses = (0..n_buses)
        .map(|id| Bus {
            id,
            kind: if id == 0 { BusKind::Slack } else { BusKind::Pq },
            base_kv: 12.47,
        })
        .collect();
    let lines = (1..n_buses)
        .map(|k| Line {
            from: k - 1,
            to: k,
            r: FIXTURE_R,
            x: FIXTURE_X,
        })
        .collect();
    let case = GridCase {
        base_mva: 1.0,
        buses,
        lines,
        loads,
    };
    case.validate()?;
    Ok(case)
}

impl GridCase {
    pub fn load_bus_ids(&self) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Pq)
            .map(|b| b.id)
            .collect()
    }

    pub fn with_loads(&self, loads: LoadProfile) -> Result<Self> {
        let case = Self {
            loads,
            ..self.clone()
        };
        case.validate()?;
        Ok(case)
    }

    fn index(&self) -> HashMap<usize, usize> {
        self.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect()
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated case has a slack bus")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCase(m));
        if self.buses.len() < 2 {
            return bad("need at least 2 buses".into());
        }
        if !(self.base_mva > 0.0) {
            return bad("base_mva must be > 0".into());
        }
        let ids: BTreeSet<usize> = self.buses.iter().map(|b| b.id).collect();
        if ids.len() != self.buses.len() {
            return bad("bus ids are not unique".into());
        }
        let n_slack = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if n_slack != 1 {
            return bad(format!("need exactly one slack bus, found {n_slack}"));
        }
        for l in &self.lines {
            if !ids.contains(&l.from) || !ids.contains(&l.to) || l.from == l.to {
                return bad(format!("line {}-{} has invalid endpoints", l.from, l.to));
            }
            if !(l.r >= 0.0 && l.x >= 0.0 && l.r + l.x > 0.0) {
                return bad(format!("line {}-{} needs r, x >= 0 and r + x > 0", l.from, l.to));
            }
        }
        let idx = self.index();
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            adj[idx[&l.from]].push(idx[&l.to]);
            adj[idx[&l.to]].push(idx[&l.from]);
        }
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad("network is not connected".into());
        }
        self.loads.validate()?;
        for id in self.loads.buses.keys() {
            match self.buses.iter().find(|b| b.id == *id) {
                Some(b) if b.kind == BusKind::Pq => {}
                _ => return bad(format!("load on bus {id}, which is not a PQ bus")),
            }
        }
        Ok(())
    }

    /// Bus admittance matrix in bus order.
    pub fn admittance(&self) -> Vec<Vec<Complex64>> {
        let n = self.buses.len();
        let idx = self.index();
        let mut y = vec![vec![Complex64::new(0.0, 0.0); n]; n];
        for l in &self.lines {
            let ys = Complex64::new(1.0, 0.0) / Complex64::new(l.r, l.x);
            let (i, j) = (idx[&l.from], idx[&l.to]);
            y[i][i] += ys;
            y[j][j] += ys;
            y[i][j] -= ys;
            y[j][i] -= ys;
        }
        y
    }

    /// Net injected `(P, Q)` per bus at `timestep` (loads are negative).
    pub fn injections(&self, timestep: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.buses.len();
        let idx = self.index();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for (id, load) in &self.loads.buses {
            p[idx[id]] = -load.p[timestep];
            q[idx[id]] = -load.q[timestep];
        }
        (p, q)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let case: Self = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }
}

/// Bus voltages for one timestep, in bus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoltageSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_mismatch: f64,
}

impl VoltageSolution {
    pub fn phasors(&self) -> Vec<Complex64> {
        self.vm
            .iter()
            .zip(&self.va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

fn calc_power(y: &[Vec<Complex64>], vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = vm.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let (g, b) = (y[i][j].re, y[i][j].im);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let th = va[i] - va[j];
            let (s, c) = th.sin_cos();
            p[i] += vm[i] * vm[j] * (g * c + b * s);
            q[i] += vm[i] * vm[j] * (g * s - b * c);
        }
    }
    (p, q)
}

/// Newton–Raphson in polar form from a flat start. Converged means the
/// largest |ΔP| or |ΔQ| over the PQ buses is at most `tol`.
pub fn solve_power_flow(case: &GridCase, timestep: usize, tol: f64, max_iter: usize) -> Result<VoltageSolution> {
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {tol}")));
    }
    if timestep >= case.loads.n_timesteps.max(1) {
        return Err(Error::ProfileMismatch(format!(
            "timestep {timestep} outside profile of {} steps",
            case.loads.n_timesteps
        )));
    }
    let n = case.buses.len();
    let slack = case.slack_index();
    let pq: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let m = pq.len();
    let y = case.admittance();
    let (p_set, q_set) = if case.loads.n_timesteps == 0 {
        (vec![0.0; n], vec![0.0; n])
    } else {
        case.injections(timestep)
    };

    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let (p, q) = calc_power(&y, &vm, &va);
        let mut mismatch = DVector::zeros(2 * m);
        for (k, &i) in pq.iter().enumerate() {
            mismatch[k] = p_set[i] - p[i];
            mismatch[m + k] = q_set[i] - q[i];
        }
        let worst = mismatch.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !worst.is_finite() {
            return Err(Error::NonConvergence {
                mismatch: worst,
                iterations,
                context: String::new(),
            });
        }
        if worst <= tol {
            return Ok(VoltageSolution {
                vm,
                va,
                iterations,
                converged: true,
                max_mismatch: worst,
            });
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                mismatch: worst,
                iterations,
                context: String::new(),
            });
        }

        let mut jac = DMatrix::zeros(2 * m, 2 * m);
        for (r, &i) in pq.iter().enumerate() {
            for (c, &k) in pq.iter().enumerate() {
                let (g, b) = (y[i][k].re, y[i][k].im);
                if i == k {
                    jac[(r, c)] = -q[i] - b * vm[i] * vm[i];
                    jac[(r, m + c)] = p[i] / vm[i] + g * vm[i];
                    jac[(m + r, c)] = p[i] - g * vm[i] * vm[i];
                    jac[(m + r, m + c)] = q[i] / vm[i] - b * vm[i];
                } else {
                    let (s, cs) = (va[i] - va[k]).sin_cos();
                    jac[(r, c)] = vm[i] * vm[k] * (g * s - b * cs);
                    jac[(r, m + c)] = vm[i] * (g * cs + b * s);
                    jac[(m + r, c)] = -vm[i] * vm[k] * (g * cs + b * s);
                    jac[(m + r, m + c)] = vm[i] * (g * s - b * cs);
                }
            }
        }
        let Some(dx) = jac.lu().solve(&mismatch) else {
            return Err(Error::NonConvergence {
                mismatch: worst,
                iterations,
                context: " (singular Jacobian)".into(),
            });
        };
        for (k, &i) in pq.iter().enumerate() {
            va[i] += dx[k];
            vm[i] += dx[m + k];
        }
        iterations += 1;
    }
}

/// Complex power drawn from the slack bus and total series losses.
pub fn slack_and_losses(case: &GridCase, sol: &VoltageSolution) -> (Complex64, Complex64) {
    let v = sol.phasors();
    let y = case.admittance();
    let s = case.slack_index();
    let i_slack: Complex64 = (0..v.len()).map(|j| y[s][j] * v[j]).sum();
    let slack = v[s] * i_slack.conj();
    let idx = case.index();
    let losses = case
        .lines
        .iter()
        .map(|l| {
            let (a, b) = (v[idx[&l.from]], v[idx[&l.to]]);
            let i = (a - b) / Complex64::new(l.r, l.x);
            Complex64::new(l.r, l.x) * i.norm_sqr()
        })
        .sum();
    (slack, losses)
}

/// Per-bus `|V_pred| − |V_actual|` over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub bus_ids: Vec<usize>,
    /// `dv[t][k]` for timestep `t` and bus `bus_ids[k]`, per-unit.
    pub dv: Vec<Vec<f64>>,
    pub max_abs_dv: f64,
    pub argmax_timestep: usize,
    pub argmax_bus: usize,
}

#[derive(Serialize)]
struct DeviationSummary<'a> {
    n_timesteps: usize,
    bus_ids: &'a [usize],
    max_abs_dv_pu: f64,
    argmax_timestep: usize,
    argmax_bus: usize,
}

impl DeviationReport {
    /// CSV `timestep,bus_id,dv_pu`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestep", "bus_id", "dv_pu"])?;
        for (t, row) in self.dv.iter().enumerate() {
            for (id, v) in self.bus_ids.iter().zip(row) {
                w.write_record([t.to_string(), id.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&DeviationSummary {
            n_timesteps: self.dv.len(),
            bus_ids: &self.bus_ids,
            max_abs_dv_pu: self.max_abs_dv,
            argmax_timestep: self.argmax_timestep,
            argmax_bus: self.argmax_bus,
        })?)
    }
}

fn solve_all(case: &GridCase, tol: f64, max_iter: usize, scenario: &str) -> Result<Vec<VoltageSolution>> {
    (0..case.loads.n_timesteps)
        .into_par_iter()
        .map(|t| {
            solve_power_flow(case, t, tol, max_iter).map_err(|e| match e {
                Error::NonConvergence {
                    mismatch,
                    iterations,
                    context,
                } => Error::NonConvergence {
                    mismatch,
                    iterations,
                    context: format!("{context} in {scenario} scenario at timestep {t}"),
                },
                other => other,
            })
        })
        .collect()
}

/// Solve both scenarios at every timestep and report voltage-magnitude
/// differences (predicted minus actual) at every bus.
pub fn compare_profiles(
    case: &GridCase,
    actual: &LoadProfile,
    predicted: &LoadProfile,
    tol: f64,
    max_iter: usize,
) -> Result<DeviationReport> {
    check_same_shape(actual, predicted)?;
    if actual.n_timesteps == 0 {
        return Err(Error::ProfileMismatch("profiles have no timesteps".into()));
    }
    let a = solve_all(&case.with_loads(actual.clone())?, tol, max_iter, "actual")?;
    let p = solve_all(&case.with_loads(predicted.clone())?, tol, max_iter, "predicted")?;
    let dv: Vec<Vec<f64>> = a
        .iter()
        .zip(&p)
        .map(|(sa, sp)| sp.vm.iter().zip(&sa.vm).map(|(vp, va)| vp - va).collect())
        .collect();
    let mut max_abs = 0.0;
    let mut arg = (0, 0);
    for (t, row) in dv.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                arg = (t, k);
            }
        }
    }
    let bus_ids: Vec<usize> = case.buses.iter().map(|b| b.id).collect();
    Ok(DeviationReport {
        argmax_bus: bus_ids[arg.1],
        argmax_timestep: arg.0,
        bus_ids,
        dv,
        max_abs_dv: max_abs,
    })
}
