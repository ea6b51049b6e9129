//! Rolling-window sweep over a grid of timescale pairs.
//!
//! For every calibration window the grouping partition is computed once per
//! timescale. Every ordered pair `(Δt1, Δt2)` then reuses the two partitions
//! to build its lead-lag network. Both phases run on a rayon pool and are
//! collected in key order, so the result does not depend on the thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coarsen::{slice_grid, state_matrix, State};
use crate::community::{detect_communities, svn_summary, CommunityConfig, GroupPartition, SvnSummary};
use crate::error::{Error, Result};
use crate::ingest::{DayRange, TradeSet};
use crate::io::{atomic_write, fmt_f64, parse_f64};
use crate::leadlag::{
    build_llsvn, classify_links, leadlag_observations, AlignmentGrid, LeadLagConfig, LeadLagLink, LinkTaxonomy,
};
use crate::stats::activity_rate_correlation;
use crate::validate::{build_svn, StatePair, SvnConfig};

/// A calibration window of consecutive business days; `start_day` is 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CalibrationWindow {
    pub index: usize,
    pub start_day: usize,
    pub len_days: usize,
}

impl CalibrationWindow {
    pub fn days(&self) -> DayRange {
        DayRange::new(self.start_day, self.len_days)
    }
}

/// Windows `[d, d + t_in)` for `d = 0, step, 2·step, …` inside a span of `span_days`.
pub fn rolling_windows(span_days: usize, t_in_days: usize, step_days: usize) -> Result<Vec<CalibrationWindow>> {
    if t_in_days == 0 || step_days == 0 {
        return Err(Error::config("window length and step must be positive"));
    }
    if span_days < t_in_days {
        return Err(Error::input(format!("{span_days} business days cannot hold a {t_in_days}-day window")));
    }
    Ok((0..=span_days - t_in_days)
        .step_by(step_days)
        .enumerate()
        .map(|(index, start_day)| CalibrationWindow { index, start_day, len_days: t_in_days })
        .collect())
}

/// Arithmetic grid of timescales in seconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimescaleGrid {
    values: Vec<u32>,
}

impl TimescaleGrid {
    pub fn new(min_s: u32, max_s: u32, step_s: u32) -> Result<Self> {
        if min_s == 0 || step_s == 0 || min_s > max_s {
            return Err(Error::config(format!("invalid timescale grid {min_s}..{max_s} step {step_s}")));
        }
        if !(max_s - min_s).is_multiple_of(step_s) {
            return Err(Error::config(format!("step {step_s} s does not divide {min_s}..{max_s}")));
        }
        Ok(TimescaleGrid { values: (min_s..=max_s).step_by(step_s as usize).collect() })
    }

    pub fn from_values(mut values: Vec<u32>) -> Result<Self> {
        values.sort_unstable();
        values.dedup();
        if values.is_empty() || values[0] == 0 {
            return Err(Error::config("timescales must be positive and non-empty"));
        }
        Ok(TimescaleGrid { values })
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn position(&self, dt: u32) -> Option<usize> {
        self.values.binary_search(&dt).ok()
    }

    /// Pairs `(a, b)` with `a <= b`.
    pub fn unordered_pairs(&self) -> Vec<(u32, u32)> {
        let v = &self.values;
        (0..v.len()).flat_map(|i| (i..v.len()).map(move |j| (v[i], v[j]))).collect()
    }

    pub fn ordered_pairs(&self) -> Vec<(u32, u32)> {
        let v = &self.values;
        v.iter().flat_map(|&a| v.iter().map(move |&b| (a, b))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub t_in_days: usize,
    pub window_step_days: usize,
    pub grid_min_s: u32,
    pub grid_max_s: u32,
    pub grid_step_s: u32,
    /// Explicit timescales; overrides the arithmetic grid when non-empty.
    pub grid_values: Vec<u32>,
    pub rho0: f64,
    pub fdr_alpha: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the rayon default.
    pub threads: usize,
    pub min_active_slices: usize,
    pub n_restarts: usize,
    pub condition_on_joint_activity: bool,
    pub pool_state_pairs: bool,
    pub pool_observations: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            t_in_days: 30,
            window_step_days: 5,
            grid_min_s: 300,
            grid_max_s: 14400,
            grid_step_s: 300,
            grid_values: Vec::new(),
            rho0: 0.01,
            fdr_alpha: 0.05,
            seed: 0,
            threads: 0,
            min_active_slices: 10,
            n_restarts: 10,
            condition_on_joint_activity: false,
            pool_state_pairs: true,
            pool_observations: false,
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> Result<TimescaleGrid> {
        if self.grid_values.is_empty() {
            TimescaleGrid::new(self.grid_min_s, self.grid_max_s, self.grid_step_s)
        } else {
            TimescaleGrid::from_values(self.grid_values.clone())
        }
    }

    pub fn svn(&self) -> SvnConfig {
        SvnConfig {
            alpha: self.fdr_alpha,
            min_active_slices: self.min_active_slices,
            condition_on_joint_activity: self.condition_on_joint_activity,
        }
    }

    pub fn community(&self) -> CommunityConfig {
        CommunityConfig { n_restarts: self.n_restarts }
    }

    pub fn leadlag(&self) -> LeadLagConfig {
        LeadLagConfig { alpha: self.fdr_alpha, pool_state_pairs: self.pool_state_pairs }
    }

    /// SHA-256 of the configuration with the thread count cleared.
    pub fn hash(&self) -> String {
        let canonical = SweepConfig { threads: 0, ..self.clone() };
        let json = serde_json::to_string(&canonical).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Grouping results of one window at one timescale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtSummary {
    pub window: usize,
    pub dt_s: u32,
    /// Traders with at least one trade in the window.
    pub universe: usize,
    pub n_svn_links: usize,
    pub n_svn_tests: usize,
    pub summary: SvnSummary,
    pub codelength: Option<f64>,
}

/// Lead-lag results of one window at one ordered timescale pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub window: usize,
    pub dt1_s: u32,
    pub dt2_s: u32,
    pub n_points: usize,
    pub n_leading: usize,
    pub n_lagging: usize,
    pub taxonomy: LinkTaxonomy,
    pub rho_n: Option<f64>,
    pub links: Vec<LeadLagLink>,
}

impl Cell {
    /// Number of validated links `W`.
    pub fn n_links(&self) -> usize {
        self.taxonomy.n_links
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub windows: Vec<CalibrationWindow>,
    pub grid: TimescaleGrid,
    /// Sorted by window, then timescale.
    pub summaries: Vec<DtSummary>,
    /// Sorted by window, then timescale.
    pub partitions: Vec<GroupPartition>,
    /// Sorted by window, then `(Δt1, Δt2)` in grid order.
    pub cells: Vec<Cell>,
}

fn task_seed(seed: u64, window: usize, dt: u32) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((window as u64).to_le_bytes());
    h.update(dt.to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Grouping SVN and partition of one window at one timescale.
pub fn compute_partition(
    ts: &TradeSet,
    window: &CalibrationWindow,
    dt_s: u32,
    cfg: &SweepConfig,
) -> Result<(GroupPartition, DtSummary)> {
    let grid = slice_grid(ts.calendar(), dt_s, window.days())?;
    let sm = state_matrix(ts, &grid, cfg.rho0);
    let universe = ts.active_traders(window.days());
    let (partition, n_links, n_tests) = if sm.n_traders() < 2 {
        (GroupPartition::empty(window.index, dt_s), 0, 0)
    } else {
        let mut svn = build_svn(&sm, &StatePair::GROUPING, &cfg.svn())?;
        svn.window_id = window.index;
        let p = detect_communities(&svn, task_seed(cfg.seed, window.index, dt_s), &cfg.community())?;
        (p, svn.links.len(), svn.n_tests)
    };
    let summary = if universe == 0 {
        SvnSummary { n_groups: 0, fraction_grouped: 0.0, mean_size: None, median_size: None }
    } else {
        svn_summary(&partition, universe)?
    };
    let codelength = partition.codelength;
    let s = DtSummary {
        window: window.index,
        dt_s,
        universe,
        n_svn_links: n_links,
        n_svn_tests: n_tests,
        summary,
        codelength,
    };
    Ok((partition, s))
}

/// Lead-lag network of one window between the partitions at `Δt1` (leading) and `Δt2` (lagging).
pub fn compute_cell(
    ts: &TradeSet,
    window: &CalibrationWindow,
    leading: &GroupPartition,
    lagging: &GroupPartition,
    cfg: &SweepConfig,
) -> Result<Cell> {
    let grid = AlignmentGrid::new(ts.calendar(), leading.delta_t_s, lagging.delta_t_s)?;
    let mut cell = Cell {
        window: window.index,
        dt1_s: leading.delta_t_s,
        dt2_s: lagging.delta_t_s,
        n_points: window.len_days * grid.points_per_day as usize,
        n_leading: leading.n_groups(),
        n_lagging: lagging.n_groups(),
        taxonomy: LinkTaxonomy::default(),
        rho_n: None,
        links: Vec::new(),
    };
    if leading.is_empty() || lagging.is_empty() || cell.n_points == 0 {
        return Ok(cell);
    }
    let obs = leadlag_observations(ts, window.days(), leading, lagging, &grid, cfg.rho0);
    let net = build_llsvn(&obs, &cfg.leadlag())?;
    cell.taxonomy = classify_links(&net);
    cell.rho_n = activity_rate_correlation(&obs, &net, cfg.pool_observations);
    cell.links = net.links;
    Ok(cell)
}

fn task_error(window: usize, dt1: u32, dt2: u32) -> impl Fn(Error) -> Error {
    move |e| Error::Task { window, dt1, dt2, source: Box::new(e) }
}

pub fn run_sweep(ts: &TradeSet, cfg: &SweepConfig) -> Result<SweepResult> {
    if ts.is_empty() {
        return Err(Error::input("no session trades to sweep"));
    }
    let grid = cfg.grid()?;
    let windows = rolling_windows(ts.n_days(), cfg.t_in_days, cfg.window_step_days)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let values = grid.values();
    let n = values.len();

    let phase1: Vec<(GroupPartition, DtSummary)> = pool.install(|| {
        let tasks: Vec<(usize, u32)> =
            windows.iter().flat_map(|w| values.iter().map(move |&dt| (w.index, dt))).collect();
        tasks
            .par_iter()
            .map(|&(w, dt)| compute_partition(ts, &windows[w], dt, cfg).map_err(task_error(w, dt, dt)))
            .collect::<Result<Vec<_>>>()
    })?;
    let (partitions, summaries): (Vec<_>, Vec<_>) = phase1.into_iter().unzip();
    log::info!("grouping done: {} partitions", partitions.len());

    let cells: Vec<Cell> = pool.install(|| {
        let tasks: Vec<(usize, usize, usize)> =
            windows.iter().flat_map(|w| (0..n * n).map(move |k| (w.index, k / n, k % n))).collect();
        tasks
            .par_iter()
            .map(|&(w, i, j)| {
                let (p1, p2) = (&partitions[w * n + i], &partitions[w * n + j]);
                compute_cell(ts, &windows[w], p1, p2, cfg).map_err(task_error(w, values[i], values[j]))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    log::info!("lead-lag done: {} cells", cells.len());

    Ok(SweepResult { config: cfg.clone(), windows, grid, summaries, partitions, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    tool_version: String,
    config_hash: String,
    seed: u64,
    config: SweepConfig,
    windows: Vec<CalibrationWindow>,
    grid: Vec<u32>,
}

const CELL_HEADER: [&str; 12] = [
    "window",
    "dt1",
    "dt2",
    "n_points",
    "n_leading",
    "n_lagging",
    "n_links",
    "self_links",
    "cross_links",
    "groups_only_self",
    "dual_links",
    "rho_n",
];

const SUMMARY_HEADER: [&str; 10] = [
    "window",
    "dt",
    "universe",
    "n_svn_links",
    "n_svn_tests",
    "n_groups",
    "fraction_grouped",
    "mean_size",
    "median_size",
    "codelength",
];

fn write_csv<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut csv::Writer<&mut dyn Write>) -> Result<()>,
{
    atomic_write(path, |w| {
        let mut cw = csv::Writer::from_writer(w);
        fill(&mut cw)?;
        cw.flush()?;
        Ok(())
    })
}

struct Row<'a> {
    rec: &'a csv::StringRecord,
    line: u64,
}

impl Row<'_> {
    fn str(&self, i: usize) -> Result<&str> {
        self.rec.get(i).ok_or_else(|| Error::Parse { line: self.line, message: format!("missing column {i}") })
    }

    fn num<T: std::str::FromStr>(&self, i: usize) -> Result<T> {
        self.str(i)?.parse().map_err(|_| Error::Parse { line: self.line, message: format!("bad number in column {i}") })
    }

    fn float(&self, i: usize) -> Result<Option<f64>> {
        let s = self.str(i)?;
        match parse_f64(s) {
            None if s.trim() != "NA" => {
                Err(Error::Parse { line: self.line, message: format!("bad float in column {i}") })
            }
            v => Ok(v),
        }
    }
}

fn read_rows<F>(path: &Path, mut each: F) -> Result<()>
where
    F: FnMut(Row<'_>) -> Result<()>,
{
    let mut r = csv::Reader::from_path(path)?;
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        each(Row { rec: &rec, line: n as u64 + 2 })?;
    }
    Ok(())
}

impl SweepResult {
    pub fn cell(&self, window: usize, dt1: u32, dt2: u32) -> Option<&Cell> {
        let n = self.grid.values().len();
        let (i, j) = (self.grid.position(dt1)?, self.grid.position(dt2)?);
        self.cells.get(window * n * n + i * n + j).filter(|c| c.window == window)
    }

    pub fn summary(&self, window: usize, dt: u32) -> Option<&DtSummary> {
        let n = self.grid.values().len();
        self.summaries.get(window * n + self.grid.position(dt)?).filter(|s| s.window == window)
    }

    pub fn partition(&self, window: usize, dt: u32) -> Option<&GroupPartition> {
        let n = self.grid.values().len();
        self.partitions.get(window * n + self.grid.position(dt)?).filter(|p| p.window_id == window)
    }

    /// Writes `manifest.json`, `summaries.csv` and per-window `cells-`, `links-` and `partitions-` shards.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for w in &self.windows {
            let cells: Vec<&Cell> = self.cells.iter().filter(|c| c.window == w.index).collect();
            write_csv(&dir.join(format!("cells-{:04}.csv", w.index)), |cw| {
                cw.write_record(CELL_HEADER)?;
                for c in &cells {
                    let t = &c.taxonomy;
                    cw.write_record([
                        c.window.to_string(),
                        c.dt1_s.to_string(),
                        c.dt2_s.to_string(),
                        c.n_points.to_string(),
                        c.n_leading.to_string(),
                        c.n_lagging.to_string(),
                        t.n_links.to_string(),
                        t.self_links.to_string(),
                        t.cross_links.to_string(),
                        t.groups_only_self.to_string(),
                        t.dual_links.to_string(),
                        fmt_f64(c.rho_n),
                    ])?;
                }
                Ok(())
            })?;
            write_csv(&dir.join(format!("links-{:04}.csv", w.index)), |cw| {
                cw.write_record([
                    "window_id",
                    "dt1",
                    "dt2",
                    "src_group",
                    "src_state",
                    "dst_group",
                    "dst_state",
                    "p_value",
                ])?;
                for c in &cells {
                    for l in &c.links {
                        cw.write_record([
                            c.window.to_string().as_str(),
                            &c.dt1_s.to_string(),
                            &c.dt2_s.to_string(),
                            &l.src_group.to_string(),
                            l.src_state.code(),
                            &l.dst_group.to_string(),
                            l.dst_state.code(),
                            &fmt_f64(Some(l.p_value)),
                        ])?;
                    }
                }
                Ok(())
            })?;
            write_csv(&dir.join(format!("partitions-{:04}.csv", w.index)), |cw| {
                cw.write_record(["window_id", "delta_t", "group_id", "trader_id"])?;
                for p in self.partitions.iter().filter(|p| p.window_id == w.index) {
                    p.write_rows(cw)?;
                }
                Ok(())
            })?;
        }
        write_csv(&dir.join("summaries.csv"), |cw| {
            cw.write_record(SUMMARY_HEADER)?;
            for s in &self.summaries {
                cw.write_record([
                    s.window.to_string(),
                    s.dt_s.to_string(),
                    s.universe.to_string(),
                    s.n_svn_links.to_string(),
                    s.n_svn_tests.to_string(),
                    s.summary.n_groups.to_string(),
                    fmt_f64(Some(s.summary.fraction_grouped)),
                    fmt_f64(s.summary.mean_size),
                    fmt_f64(s.summary.median_size),
                    fmt_f64(s.codelength),
                ])?;
            }
            Ok(())
        })?;
        let manifest = Manifest {
            format_version: 1,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: self.config.hash(),
            seed: self.config.seed,
            config: self.config.clone(),
            windows: self.windows.clone(),
            grid: self.grid.values().to_vec(),
        };
        atomic_write(&dir.join("manifest.json"), |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    /// Loads a sweep written by [`write_dir`](Self::write_dir). Missing shards or cells are an error.
    pub fn read_dir(dir: &Path) -> Result<SweepResult> {
        let manifest_path = dir.join("manifest.json");
        if !manifest_path.exists() {
            return Err(Error::IncompleteSweep(format!("no manifest.json in {}", dir.display())));
        }
        let manifest: Manifest =
            serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(&manifest_path)?))?;
        let grid = TimescaleGrid::from_values(manifest.grid.clone())?;
        let n = grid.values().len();

        let mut missing: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize, usize), Cell> = BTreeMap::new();
        let mut partitions: BTreeMap<(usize, u32), GroupPartition> = BTreeMap::new();
        for w in &manifest.windows {
            let shard = |kind: &str| dir.join(format!("{kind}-{:04}.csv", w.index));
            let absent: Vec<&str> =
                ["cells", "links", "partitions"].into_iter().filter(|k| !shard(k).exists()).collect();
            if !absent.is_empty() {
                missing.extend(absent.iter().map(|k| format!("{k} shard of window {}", w.index)));
                continue;
            }
            read_rows(&shard("cells"), |r| {
                let (dt1, dt2): (u32, u32) = (r.num(1)?, r.num(2)?);
                let (Some(i), Some(j)) = (grid.position(dt1), grid.position(dt2)) else {
                    return Err(Error::Parse {
                        line: r.line,
                        message: format!("timescales ({dt1}, {dt2}) not on the grid"),
                    });
                };
                let cell = Cell {
                    window: r.num(0)?,
                    dt1_s: dt1,
                    dt2_s: dt2,
                    n_points: r.num(3)?,
                    n_leading: r.num(4)?,
                    n_lagging: r.num(5)?,
                    taxonomy: LinkTaxonomy {
                        n_links: r.num(6)?,
                        self_links: r.num(7)?,
                        cross_links: r.num(8)?,
                        groups_only_self: r.num(9)?,
                        dual_links: r.num(10)?,
                    },
                    rho_n: r.float(11)?,
                    links: Vec::new(),
                };
                cells.insert((cell.window, i, j), cell);
                Ok(())
            })?;
            read_rows(&shard("links"), |r| {
                let key = (r.num(0)?, grid.position(r.num(1)?), grid.position(r.num(2)?));
                let parse_state = |i: usize| -> Result<State> {
                    r.str(i)?.parse().map_err(|_| Error::Parse { line: r.line, message: "bad state".into() })
                };
                let link = LeadLagLink {
                    src_group: r.num(3)?,
                    src_state: parse_state(4)?,
                    dst_group: r.num(5)?,
                    dst_state: parse_state(6)?,
                    p_value: r
                        .float(7)?
                        .ok_or_else(|| Error::Parse { line: r.line, message: "missing p-value".into() })?,
                };
                match key {
                    (w, Some(i), Some(j)) if cells.contains_key(&(w, i, j)) => {
                        cells.get_mut(&(w, i, j)).expect("present").links.push(link);
                        Ok(())
                    }
                    _ => Err(Error::Parse { line: r.line, message: "link for an unknown cell".into() }),
                }
            })?;
            let file = std::fs::File::open(shard("partitions"))?;
            for p in GroupPartition::read_csv(std::io::BufReader::new(file))? {
                partitions.insert((p.window_id, p.delta_t_s), p);
            }
        }

        let mut summaries: BTreeMap<(usize, u32), DtSummary> = BTreeMap::new();
        let summary_path = dir.join("summaries.csv");
        if summary_path.exists() {
            read_rows(&summary_path, |r| {
                let s = DtSummary {
                    window: r.num(0)?,
                    dt_s: r.num(1)?,
                    universe: r.num(2)?,
                    n_svn_links: r.num(3)?,
                    n_svn_tests: r.num(4)?,
                    summary: SvnSummary {
                        n_groups: r.num(5)?,
                        fraction_grouped: r.float(6)?.unwrap_or(0.0),
                        mean_size: r.float(7)?,
                        median_size: r.float(8)?,
                    },
                    codelength: r.float(9)?,
                };
                summaries.insert((s.window, s.dt_s), s);
                Ok(())
            })?;
        } else {
            missing.push("summaries.csv".into());
        }

        let mut out_cells = Vec::with_capacity(manifest.windows.len() * n * n);
        let mut out_parts = Vec::new();
        let mut out_summaries = Vec::new();
        for w in &manifest.windows {
            for (k, &dt) in grid.values().iter().enumerate() {
                match summaries.remove(&(w.index, dt)) {
                    Some(s) => out_summaries.push(s),
                    None => missing.push(format!("summary ({}, {dt})", w.index)),
                }
                let mut p = partitions.remove(&(w.index, dt)).unwrap_or_else(|| GroupPartition::empty(w.index, dt));
                p.codelength = out_summaries.last().and_then(|s: &DtSummary| s.codelength);
                out_parts.push(p);
                for (j, &dt2) in grid.values().iter().enumerate() {
                    match cells.remove(&(w.index, k, j)) {
                        Some(c) => out_cells.push(c),
                        None => missing.push(format!("cell ({}, {dt}, {dt2})", w.index)),
                    }
                }
            }
        }
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(20).map(String::as_str).collect();
            let more = missing.len().saturating_sub(shown.len());
            let tail = if more > 0 { format!(" and {more} more") } else { String::new() };
            return Err(Error::IncompleteSweep(format!("{}{tail}", shown.join(", "))));
        }
        Ok(SweepResult {
            config: manifest.config,
            windows: manifest.windows,
            grid,
            summaries: out_summaries,
            partitions: out_parts,
            cells: out_cells,
        })
    }
}
