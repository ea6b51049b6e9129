use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use llsvn::coarsen::{slice_grid, state_matrix};
use llsvn::community::GroupPartition;
use llsvn::ingest::{build_calendar, filter_session, filter_session_within, parse_trades, write_trades, TradeSet};
use llsvn::io::{atomic_write, fmt_f64};
use llsvn::leadlag::{build_llsvn, classify_links, leadlag_observations, AlignmentGrid, LeadLagNetwork};
use llsvn::stats::{activity_rate_correlation, export_mugshot, AsymmetryReport, Metric, Variance};
use llsvn::sweep::{compute_partition, run_sweep, CalibrationWindow, SweepConfig, SweepResult};
use llsvn::synth::{generate_trades, planted_truth};
use llsvn::validate::{build_svn, StatePair};
use log::info;
use serde_json::json;

use crate::config::{digest, manifest_path, FileConfig, FileDigest, Run, UsageError};
use crate::{Analysis, AsymArgs, Command, Common, LeadLagArgs, ReportArgs, SliceArgs, SweepArgs, SynthArgs};

pub fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::States(a) => states(a),
        Command::Svn(a) => svn(a),
        Command::Groups(a) => groups(a),
        Command::Leadlag(a) => leadlag(a),
        Command::Sweep(a) => sweep(a),
        Command::Asym(a) => asym(a),
        Command::Report(a) => report(a),
    }
}

struct Loaded {
    file: FileConfig,
    sweep: SweepConfig,
    trades: TradeSet,
    inputs: Vec<FileDigest>,
}

fn config_inputs(common: &Common) -> anyhow::Result<Vec<FileDigest>> {
    common.config.iter().map(|p| digest(p)).collect()
}

fn init_threads(threads: usize) -> anyhow::Result<()> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("starting worker threads")
}

fn load(common: &Common, a: &Analysis) -> anyhow::Result<Loaded> {
    let file = FileConfig::load(common.config.as_deref())?;
    let mut sweep = file.sweep.clone();
    if let Some(t) = common.threads {
        sweep.threads = t;
    }
    if let Some(v) = a.rho0 {
        sweep.rho0 = v;
    }
    if let Some(v) = a.alpha {
        sweep.fdr_alpha = v;
    }
    if let Some(v) = a.min_active_slices {
        sweep.min_active_slices = v;
    }
    if let Some(v) = a.seed {
        sweep.seed = v;
    }
    if let Some(v) = a.n_restarts {
        sweep.n_restarts = v;
    }
    let cal = build_calendar(&file.calendar)?;
    let mut inputs = config_inputs(common)?;
    inputs.push(digest(&a.input)?);
    let src = File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let raw = parse_trades(BufReader::new(src), &file.input.format()?)
        .with_context(|| format!("parsing {}", a.input.display()))?;
    let trades = match (a.from, a.to) {
        (None, None) => filter_session(&raw, &cal),
        (first, last) => {
            let first = first.or_else(|| raw.iter().filter_map(|t| cal.locate(t.timestamp_ms)).map(|x| x.0).min());
            let last = last.or_else(|| raw.iter().filter_map(|t| cal.locate(t.timestamp_ms)).map(|x| x.0).max());
            match (first, last) {
                (Some(f), Some(l)) if f <= l => filter_session_within(&raw, &cal, f, l),
                (Some(f), Some(l)) => bail!(UsageError(format!("--from {f} is after --to {l}"))),
                _ => filter_session(&raw, &cal),
            }
        }
    };
    info!("{} session trades on {} days, {} excluded", trades.len(), trades.n_days(), trades.excluded());
    Ok(Loaded { file, sweep, trades, inputs })
}

fn whole(ts: &TradeSet) -> CalibrationWindow {
    CalibrationWindow { index: 0, start_day: 0, len_days: ts.n_days() }
}

fn analysis_config(l: &Loaded, a: &Analysis, extra: serde_json::Value) -> serde_json::Value {
    json!({
        "calendar": l.file.calendar,
        "input": l.file.input,
        "analysis": l.sweep,
        "from": a.from,
        "to": a.to,
        "command": extra,
    })
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let run = Run::start("synth");
    let file = FileConfig::load(a.common.config.as_deref())?;
    let mut cfg = file.synth.clone();
    cfg.calendar = file.calendar.clone();
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.days {
        cfg.n_days = v;
    }
    if let Some(v) = a.traders {
        cfg.n_traders = v;
    }
    let (_, days, trades) = generate_trades(&cfg)?;
    atomic_write(&a.out, |w| write_trades(&trades, w))?;
    let mut outputs = vec![a.out.clone()];
    let truth = planted_truth(&cfg);
    if let Some(path) = &a.truth {
        atomic_write(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &truth)?;
            w.write_all(b"\n")?;
            Ok(())
        })?;
        outputs.push(path.clone());
    }
    info!("{} trades on {} days", trades.len(), days.len());
    let results = json!({ "n_trades": trades.len(), "first_day": days.first(), "last_day": days.last() });
    let inputs = config_inputs(&a.common)?;
    run.finish(&manifest_path(&a.out), &cfg, Some(cfg.seed), 1, inputs, outputs, results)
}

fn states(a: SliceArgs) -> anyhow::Result<()> {
    let run = Run::start("states");
    let l = load(&a.common, &a.analysis)?;
    init_threads(l.sweep.threads)?;
    let grid = slice_grid(l.trades.calendar(), a.dt, l.trades.all_days())?;
    let sm = state_matrix(&l.trades, &grid, l.sweep.rho0);
    atomic_write(&a.out, |w| sm.write_csv(w))?;
    let results = json!({ "n_traders": sm.n_traders(), "n_slots": sm.n_slots() });
    let config = analysis_config(&l, &a.analysis, json!({ "dt_s": a.dt }));
    run.finish(&manifest_path(&a.out), &config, None, l.sweep.threads, l.inputs, vec![a.out], results)
}

fn svn(a: SliceArgs) -> anyhow::Result<()> {
    let run = Run::start("svn");
    let l = load(&a.common, &a.analysis)?;
    init_threads(l.sweep.threads)?;
    let grid = slice_grid(l.trades.calendar(), a.dt, l.trades.all_days())?;
    let sm = state_matrix(&l.trades, &grid, l.sweep.rho0);
    let net = build_svn(&sm, &StatePair::GROUPING, &l.sweep.svn())?;
    atomic_write(&a.out, |w| net.write_csv(w))?;
    let results = json!({
        "n_traders": sm.n_traders(),
        "n_links": net.links.len(),
        "n_tests": net.n_tests,
        "threshold": net.threshold,
    });
    let config = analysis_config(&l, &a.analysis, json!({ "dt_s": a.dt }));
    run.finish(&manifest_path(&a.out), &config, None, l.sweep.threads, l.inputs, vec![a.out], results)
}

fn groups(a: SliceArgs) -> anyhow::Result<()> {
    let run = Run::start("groups");
    let l = load(&a.common, &a.analysis)?;
    init_threads(l.sweep.threads)?;
    let (partition, summary) = compute_partition(&l.trades, &whole(&l.trades), a.dt, &l.sweep)?;
    atomic_write(&a.out, |w| partition.write_csv(w))?;
    let results = serde_json::to_value(&summary)?;
    let config = analysis_config(&l, &a.analysis, json!({ "dt_s": a.dt }));
    let seed = Some(l.sweep.seed);
    run.finish(&manifest_path(&a.out), &config, seed, l.sweep.threads, l.inputs, vec![a.out], results)
}

fn empty_network(p1: &GroupPartition, p2: &GroupPartition, alpha: f64) -> LeadLagNetwork {
    LeadLagNetwork {
        window_id: 0,
        dt1_s: p1.delta_t_s,
        dt2_s: p2.delta_t_s,
        leading_groups: p1.groups.clone(),
        lagging_groups: p2.groups.clone(),
        links: Vec::new(),
        alpha,
        n_tests: 0,
        n_points: 0,
    }
}

fn leadlag(a: LeadLagArgs) -> anyhow::Result<()> {
    let run = Run::start("leadlag");
    let l = load(&a.common, &a.analysis)?;
    init_threads(l.sweep.threads)?;
    let w = whole(&l.trades);
    let (p1, _) = compute_partition(&l.trades, &w, a.dt1, &l.sweep)?;
    let (p2, _) = compute_partition(&l.trades, &w, a.dt2, &l.sweep)?;
    let grid = AlignmentGrid::new(l.trades.calendar(), a.dt1, a.dt2)?;
    let (net, rho_n) = if p1.is_empty() || p2.is_empty() {
        (empty_network(&p1, &p2, l.sweep.fdr_alpha), None)
    } else {
        let obs = leadlag_observations(&l.trades, w.days(), &p1, &p2, &grid, l.sweep.rho0);
        let net = build_llsvn(&obs, &l.sweep.leadlag())?;
        let rho = activity_rate_correlation(&obs, &net, l.sweep.pool_observations);
        (net, rho)
    };
    atomic_write(&a.out, |w| net.write_csv(w))?;
    let results = json!({
        "n_leading": p1.n_groups(),
        "n_lagging": p2.n_groups(),
        "n_points": net.n_points,
        "n_tests": net.n_tests,
        "taxonomy": classify_links(&net),
        "rho_n": rho_n,
    });
    let config = analysis_config(&l, &a.analysis, json!({ "dt1_s": a.dt1, "dt2_s": a.dt2 }));
    let seed = Some(l.sweep.seed);
    run.finish(&manifest_path(&a.out), &config, seed, l.sweep.threads, l.inputs, vec![a.out], results)
}

fn sweep(a: SweepArgs) -> anyhow::Result<()> {
    let run = Run::start("sweep");
    let mut l = load(&a.common, &a.analysis)?;
    let cfg = &mut l.sweep;
    if let Some(v) = a.t_in_days {
        cfg.t_in_days = v;
    }
    if let Some(v) = a.window_step_days {
        cfg.window_step_days = v;
    }
    if let Some(v) = a.grid_min {
        cfg.grid_min_s = v;
    }
    if let Some(v) = a.grid_max {
        cfg.grid_max_s = v;
    }
    if let Some(v) = a.grid_step {
        cfg.grid_step_s = v;
    }
    if let Some(v) = &a.grid {
        cfg.grid_values = v.clone();
    }
    let result = run_sweep(&l.trades, &l.sweep)?;
    result.write_dir(&a.out)?;
    let results = json!({
        "n_windows": result.windows.len(),
        "n_timescales": result.grid.values().len(),
        "n_cells": result.cells.len(),
        "sweep_config_hash": l.sweep.hash(),
    });
    let config = analysis_config(&l, &a.analysis, json!({}));
    let manifest = a.out.join("run.json");
    let seed = Some(l.sweep.seed);
    run.finish(&manifest, &config, seed, l.sweep.threads, l.inputs, vec![a.out], results)
}

fn parse_variance(s: &str) -> anyhow::Result<Variance> {
    match s {
        "ar1" => Ok(Variance::Ar1),
        "newey_west" => Ok(Variance::NeweyWest),
        _ => bail!(UsageError(format!("unknown variance {s:?}; expected ar1 or newey_west"))),
    }
}

fn sweep_inputs(common: &Common, dir: &Path) -> anyhow::Result<Vec<FileDigest>> {
    let mut inputs = config_inputs(common)?;
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading sweep directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    names.retain(|p| p.file_name().is_some_and(|n| n != "run.json"));
    names.sort();
    for p in names {
        inputs.push(digest(&p)?);
    }
    Ok(inputs)
}

fn asym(a: AsymArgs) -> anyhow::Result<()> {
    let run = Run::start("asym");
    let file = FileConfig::load(a.common.config.as_deref())?;
    let metric: Metric = a.metric.parse()?;
    let mut tcfg = file.asym.clone();
    if let Some(v) = &a.variance {
        tcfg.variance = parse_variance(v)?;
    }
    if let Some(v) = a.n_min {
        tcfg.n_min = v;
    }
    let inputs = sweep_inputs(&a.common, &a.sweep)?;
    let sweep = SweepResult::read_dir(&a.sweep)?;
    let report = AsymmetryReport::from_sweep(&sweep, &tcfg);
    export_mugshot(&report, metric, &a.out)?;
    let outputs = vec![a.out.clone(), a.out.with_extension("json")];
    let results = json!({ "rows": report.rows(metric).len(), "n_windows": report.n_windows });
    let config = json!({ "metric": metric, "tstat": tcfg });
    run.finish(&manifest_path(&a.out), &config, None, 1, inputs, outputs, results)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    let run = Run::start("report");
    let inputs = sweep_inputs(&a.common, &a.sweep)?;
    let sweep = SweepResult::read_dir(&a.sweep)?;
    let windows: Vec<usize> = sweep.windows.iter().map(|w| w.index).collect();
    atomic_write(&a.out, |w| {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record([
            "dt",
            "n_windows",
            "groups",
            "fraction_grouped",
            "mean_size",
            "median_size",
            "links",
            "self_links",
            "cross_links",
            "dual_links",
            "groups_only_self",
        ])?;
        for &dt in sweep.grid.values() {
            let sums: Vec<_> = windows.iter().filter_map(|&w| sweep.summary(w, dt)).collect();
            let cells: Vec<_> = windows.iter().filter_map(|&w| sweep.cell(w, dt, dt)).collect();
            let over = |f: &dyn Fn(&llsvn::sweep::Cell) -> usize| mean(cells.iter().map(|c| f(c) as f64));
            cw.write_record([
                dt.to_string(),
                windows.len().to_string(),
                fmt_f64(mean(sums.iter().map(|s| s.summary.n_groups as f64))),
                fmt_f64(mean(sums.iter().map(|s| s.summary.fraction_grouped))),
                fmt_f64(mean(sums.iter().filter_map(|s| s.summary.mean_size))),
                fmt_f64(mean(sums.iter().filter_map(|s| s.summary.median_size))),
                fmt_f64(over(&|c| c.n_links())),
                fmt_f64(over(&|c| c.taxonomy.self_links)),
                fmt_f64(over(&|c| c.taxonomy.cross_links)),
                fmt_f64(over(&|c| c.taxonomy.dual_links)),
                fmt_f64(over(&|c| c.taxonomy.groups_only_self)),
            ])?;
        }
        cw.flush()?;
        Ok(())
    })?;
    let results = json!({ "rows": sweep.grid.values().len(), "n_windows": windows.len() });
    let config = json!({ "sweep_config_hash": sweep.config.hash() });
    run.finish(&manifest_path(&a.out), &config, None, 1, inputs, vec![a.out], results)
}
