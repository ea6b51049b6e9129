//! Timescale-asymmetry statistics over a completed sweep.
//!
//! For every unordered pair of timescales `(a, b)` with `a <= b` the per-window
//! difference `δX_i = X_i(a, b) − X_i(b, a)` is formed for the link count `W`
//! and for the activity-rate correlation `ρ_N`. Each difference series is
//! summarised by an autocorrelation-corrected t-statistic, and the off-diagonal
//! cells are filtered with Benjamini–Hochberg.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::io::{atomic_write, fmt_f64, parse_f64};
use crate::leadlag::{LeadLagNetwork, LeadLagObservations};
use crate::sweep::SweepResult;
use crate::validate::bh_threshold;

/// Pearson correlation; `None` with fewer than 3 points or zero variance on either side.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correlation of activity rates `N1/Δt1` and `N2/Δt2` over the group pairs joined
/// by at least one validated link. By default the per-pair correlations are
/// averaged; `pool` correlates the concatenated observations instead.
pub fn activity_rate_correlation(obs: &LeadLagObservations, net: &LeadLagNetwork, pool: bool) -> Option<f64> {
    let mut pairs: Vec<(u32, u32)> = net.links.iter().map(|l| (l.src_group, l.dst_group)).collect();
    pairs.dedup();
    pairs.sort_unstable();
    pairs.dedup();
    let (dt1, dt2) = (obs.grid.dt1_s as f64, obs.grid.dt2_s as f64);
    let rates = |counts: Vec<u32>, dt: f64| counts.into_iter().map(|c| c as f64 / dt).collect::<Vec<f64>>();
    let series = pairs
        .iter()
        .map(|&(g1, g2)| (rates(obs.past_counts(g1 as usize), dt1), rates(obs.future_counts(g2 as usize), dt2)));
    if pool {
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (x, y) in series {
            xs.extend(x);
            ys.extend(y);
        }
        pearson(&xs, &ys)
    } else {
        let r: Vec<f64> = series.filter_map(|(x, y)| pearson(&x, &y)).collect();
        (!r.is_empty()).then(|| r.iter().sum::<f64>() / r.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variance {
    /// Plain variance with an effective sample size from the lag-1 autocorrelation.
    Ar1,
    /// Newey–West long-run variance with Bartlett weights.
    NeweyWest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TStatConfig {
    pub n_min: usize,
    pub variance: Variance,
}

impl Default for TStatConfig {
    fn default() -> Self {
        TStatConfig { n_min: 10, variance: Variance::Ar1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TStatStatus {
    Ok,
    ZeroVariance,
    InsufficientData,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TStat {
    pub t: Option<f64>,
    /// Two-sided p-value.
    pub p_value: Option<f64>,
    pub n: usize,
    pub n_eff: Option<f64>,
    pub mean: Option<f64>,
    pub status: TStatStatus,
}

impl TStat {
    fn negated(self) -> TStat {
        TStat { t: self.t.map(|t| -t), mean: self.mean.map(|m| -m), ..self }
    }
}

fn autocovariance(d: &[f64], mean: f64, lag: usize) -> f64 {
    d.iter().zip(&d[lag..]).map(|(a, b)| (a - mean) * (b - mean)).sum::<f64>() / d.len() as f64
}

/// One-sample t-statistic of `d` against zero, corrected for serial correlation.
pub fn robust_tstat(d: &[f64], cfg: &TStatConfig) -> TStat {
    let n = d.len();
    let mean = (n > 0).then(|| d.iter().sum::<f64>() / n as f64);
    let na = |status| TStat { t: None, p_value: None, n, n_eff: None, mean, status };
    if n < cfg.n_min.max(2) {
        return na(TStatStatus::InsufficientData);
    }
    let m = mean.expect("non-empty");
    let ss: f64 = d.iter().map(|x| (x - m).powi(2)).sum();
    let sd = (ss / (n - 1) as f64).sqrt();
    if sd <= 1e-14 * (1.0 + m.abs()) {
        return na(TStatStatus::ZeroVariance);
    }
    let nf = n as f64;
    let (t, n_eff) = match cfg.variance {
        Variance::Ar1 => {
            let r1 = autocovariance(d, m, 1) / autocovariance(d, m, 0);
            let n_eff = (nf * (1.0 - r1) / (1.0 + r1)).clamp(1.0, nf);
            (m / (sd / n_eff.sqrt()), n_eff)
        }
        Variance::NeweyWest => {
            let lags = (4.0 * (nf / 100.0).powf(2.0 / 9.0)).floor() as usize;
            let g0 = autocovariance(d, m, 0);
            let lrv = g0
                + 2.0
                    * (1..=lags.min(n - 1))
                        .map(|l| (1.0 - l as f64 / (lags as f64 + 1.0)) * autocovariance(d, m, l))
                        .sum::<f64>();
            let lrv = lrv.max(g0 / nf);
            ((m / (lrv / nf).sqrt()), (nf * g0 / lrv).clamp(1.0, nf))
        }
    };
    let p = if n_eff >= 30.0 {
        2.0 * Normal::standard().sf(t.abs())
    } else {
        let dist = StudentsT::new(0.0, 1.0, (n_eff - 1.0).max(1.0)).expect("positive degrees of freedom");
        2.0 * dist.sf(t.abs())
    };
    TStat { t: Some(t), p_value: Some(p.clamp(0.0, 1.0)), n, n_eff: Some(n_eff), mean, status: TStatStatus::Ok }
}

/// BH pass flags over the cells with a p-value; cells where `include` is false
/// (the diagonal) and NA cells never pass and are not counted in `m`.
pub fn fdr_mask_grid(pvalues: &[Option<f64>], include: &[bool], alpha: f64) -> Vec<bool> {
    let idx: Vec<usize> = (0..pvalues.len()).filter(|&i| include[i] && pvalues[i].is_some()).collect();
    let ps: Vec<f64> = idx.iter().map(|&i| pvalues[i].expect("filtered")).collect();
    let mut mask = vec![false; pvalues.len()];
    for r in bh_threshold(&ps, alpha, ps.len()).rejected {
        mask[idx[r]] = true;
    }
    mask
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Link-count difference `δW`.
    Links,
    /// Activity-correlation difference `δρ_N`.
    RhoN,
    /// Mean `W` per ordered pair.
    LinksLevel,
    /// Mean `ρ_N` per ordered pair.
    RhoNLevel,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Links, Metric::RhoN, Metric::LinksLevel, Metric::RhoNLevel];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Links => "links",
            Metric::RhoN => "rho_n",
            Metric::LinksLevel => "links_level",
            Metric::RhoNLevel => "rho_n_level",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::config(format!("unknown metric {s:?}; expected one of links, rho_n, links_level, rho_n_level"))
        })
    }
}

/// Per-window values of `W` or `ρ_N`, `[window][i1][i2]` in grid order.
pub type MetricCube = Vec<Vec<Vec<Option<f64>>>>;

fn cube(sweep: &SweepResult, value: impl Fn(&crate::sweep::Cell) -> Option<f64>) -> MetricCube {
    let n = sweep.grid.values().len();
    sweep
        .windows
        .iter()
        .map(|w| (0..n).map(|i| (0..n).map(|j| value(&sweep.cells[w.index * n * n + i * n + j])).collect()).collect())
        .collect()
}

/// Link counts `W_i(Δt1, Δt2)` of every window.
pub fn link_count_matrix(sweep: &SweepResult) -> MetricCube {
    cube(sweep, |c| Some(c.n_links() as f64))
}

pub fn rho_n_matrix(sweep: &SweepResult) -> MetricCube {
    cube(sweep, |c| c.rho_n)
}

/// `X_i(a, b) − X_i(b, a)` for the windows where both values exist.
pub fn delta_series(cube: &MetricCube, i: usize, j: usize) -> Vec<f64> {
    cube.iter().filter_map(|w| Some(w[i][j]? - w[j][i]?)).collect()
}

fn mean_of(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// One cell of an asymmetry report. Difference rows have `dt1 <= dt2` and hold
/// statistics of `X(dt1, dt2) − X(dt2, dt1)`; level rows cover every ordered pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryRow {
    pub dt1_s: u32,
    pub dt2_s: u32,
    pub mean: Option<f64>,
    pub tstat: TStat,
    pub fdr_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymmetryReport {
    pub grid: Vec<u32>,
    pub n_windows: usize,
    pub alpha: f64,
    pub tstat: TStatConfig,
    pub config_hash: String,
    pub links: Vec<AsymmetryRow>,
    pub rho_n: Vec<AsymmetryRow>,
    pub links_level: Vec<AsymmetryRow>,
    pub rho_n_level: Vec<AsymmetryRow>,
}

fn level_rows(cube: &MetricCube, grid: &[u32]) -> Vec<AsymmetryRow> {
    let n = grid.len();
    let na = TStat { t: None, p_value: None, n: 0, n_eff: None, mean: None, status: TStatStatus::InsufficientData };
    (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let vals: Vec<f64> = cube.iter().filter_map(|w| w[i][j]).collect();
            let mean = mean_of(vals.iter().copied());
            AsymmetryRow {
                dt1_s: grid[i],
                dt2_s: grid[j],
                mean,
                tstat: TStat { n: vals.len(), mean, ..na },
                fdr_pass: false,
            }
        })
        .collect()
}

fn delta_rows(cube: &MetricCube, grid: &[u32], cfg: &TStatConfig, alpha: f64) -> Vec<AsymmetryRow> {
    let n = grid.len();
    let mut rows: Vec<AsymmetryRow> = (0..n)
        .flat_map(|i| (i..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let d = delta_series(cube, i, j);
            let tstat = robust_tstat(&d, cfg);
            AsymmetryRow { dt1_s: grid[i], dt2_s: grid[j], mean: mean_of(d.iter().copied()), tstat, fdr_pass: false }
        })
        .collect();
    let p: Vec<Option<f64>> = rows.iter().map(|r| r.tstat.p_value).collect();
    let off: Vec<bool> = rows.iter().map(|r| r.dt1_s != r.dt2_s).collect();
    for (r, pass) in rows.iter_mut().zip(fdr_mask_grid(&p, &off, alpha)) {
        r.fdr_pass = pass;
    }
    rows
}

impl AsymmetryReport {
    pub fn from_sweep(sweep: &SweepResult, cfg: &TStatConfig) -> AsymmetryReport {
        let grid = sweep.grid.values().to_vec();
        let alpha = sweep.config.fdr_alpha;
        let (w, r) = (link_count_matrix(sweep), rho_n_matrix(sweep));
        AsymmetryReport {
            n_windows: sweep.windows.len(),
            alpha,
            tstat: cfg.clone(),
            config_hash: sweep.config.hash(),
            links: delta_rows(&w, &grid, cfg, alpha),
            rho_n: delta_rows(&r, &grid, cfg, alpha),
            links_level: level_rows(&w, &grid),
            rho_n_level: level_rows(&r, &grid),
            grid,
        }
    }

    pub fn rows(&self, metric: Metric) -> &[AsymmetryRow] {
        match metric {
            Metric::Links => &self.links,
            Metric::RhoN => &self.rho_n,
            Metric::LinksLevel => &self.links_level,
            Metric::RhoNLevel => &self.rho_n_level,
        }
    }

    /// Difference statistic of `X(dt1, dt2) − X(dt2, dt1)` for either orientation.
    pub fn delta(&self, metric: Metric, dt1: u32, dt2: u32) -> Option<(TStat, bool)> {
        let rows = match metric {
            Metric::Links | Metric::LinksLevel => &self.links,
            Metric::RhoN | Metric::RhoNLevel => &self.rho_n,
        };
        let (a, b) = (dt1.min(dt2), dt1.max(dt2));
        let row = rows.iter().find(|r| (r.dt1_s, r.dt2_s) == (a, b))?;
        Some((if dt1 <= dt2 { row.tstat } else { row.tstat.negated() }, row.fdr_pass))
    }
}

/// A mugshot record as exported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MugshotRow {
    pub dt1_s: u32,
    pub dt2_s: u32,
    pub mean: Option<f64>,
    pub tstat: Option<f64>,
    pub fdr_pass: bool,
}

impl From<&AsymmetryRow> for MugshotRow {
    fn from(r: &AsymmetryRow) -> Self {
        MugshotRow { dt1_s: r.dt1_s, dt2_s: r.dt2_s, mean: r.mean, tstat: r.tstat.t, fdr_pass: r.fdr_pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MugshotManifest {
    metric: Metric,
    rows: usize,
    n_windows: usize,
    alpha: f64,
    tstat: TStatConfig,
    sweep_config_hash: String,
    tool_version: String,
}

/// Writes `dt1,dt2,mean,tstat,fdr_pass` to `path` and a manifest next to it with a `.json` extension.
pub fn export_mugshot(report: &AsymmetryReport, metric: Metric, path: &Path) -> Result<()> {
    let rows = report.rows(metric);
    atomic_write(path, |w| {
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["dt1", "dt2", "mean", "tstat", "fdr_pass"])?;
        for r in rows {
            cw.write_record([
                r.dt1_s.to_string(),
                r.dt2_s.to_string(),
                fmt_f64(r.mean),
                fmt_f64(r.tstat.t),
                r.fdr_pass.to_string(),
            ])?;
        }
        cw.flush()?;
        Ok(())
    })?;
    let manifest = MugshotManifest {
        metric,
        rows: rows.len(),
        n_windows: report.n_windows,
        alpha: report.alpha,
        tstat: report.tstat.clone(),
        sweep_config_hash: report.config_hash.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    atomic_write(&path.with_extension("json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn import_mugshot(path: &Path) -> Result<Vec<MugshotRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = n as u64 + 2;
        let bad = |what: &str| Error::Parse { line, message: format!("bad {what}") };
        let get = |i: usize| rec.get(i).ok_or_else(|| bad("field count"));
        let float = |i: usize| -> Result<Option<f64>> {
            let s = get(i)?;
            match parse_f64(s) {
                None if s != "NA" => Err(bad("float")),
                v => Ok(v),
            }
        };
        out.push(MugshotRow {
            dt1_s: get(0)?.parse().map_err(|_| bad("dt1"))?,
            dt2_s: get(1)?.parse().map_err(|_| bad("dt2"))?,
            mean: float(2)?,
            tstat: float(3)?,
            fdr_pass: get(4)?.parse().map_err(|_| bad("fdr_pass"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 5.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]), None);
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn tstat_examples() {
        let cfg = TStatConfig::default();
        let alt: Vec<f64> = (0..20).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let t = robust_tstat(&alt, &cfg);
        assert_eq!(t.t, Some(0.0));
        // negative autocorrelation raises the effective size up to the cap
        assert_eq!(t.n_eff, Some(20.0));
        let t = robust_tstat(&[1.0; 12], &cfg);
        assert_eq!((t.t, t.status), (None, TStatStatus::ZeroVariance));
        let t = robust_tstat(&[1.0, 2.0, 3.0], &cfg);
        assert_eq!(t.status, TStatStatus::InsufficientData);
    }

    #[test]
    fn tstat_without_autocorrelation_is_plain() {
        let e: Vec<f64> = [2.0, 0.5, -0.5, -2.0, 1.0, -1.0, 0.25, -0.25, 1.5, -1.5, 0.75, -0.75].to_vec();
        let s = robust_tstat(&e, &TStatConfig::default());
        let me = e.iter().sum::<f64>() / e.len() as f64;
        let g0: f64 = e.iter().map(|x| (x - me).powi(2)).sum();
        let g1: f64 = e.windows(2).map(|w| (w[0] - me) * (w[1] - me)).sum();
        let ne = (12.0 * (1.0 - g1 / g0) / (1.0 + g1 / g0)).clamp(1.0, 12.0);
        assert!((s.n_eff.unwrap() - ne).abs() < 1e-12);
        let sd = (g0 / 11.0).sqrt();
        assert!((s.t.unwrap() - me / (sd / ne.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn newey_west_matches_plain_on_white_noise_scale() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0) + 0.1).collect();
        let a = robust_tstat(&d, &TStatConfig::default()).t.unwrap();
        let b = robust_tstat(&d, &TStatConfig { variance: Variance::NeweyWest, ..Default::default() }).t.unwrap();
        assert!(a > 0.0 && b > 0.0);
        assert!((a / b - 1.0).abs() < 0.3, "{a} vs {b}");
    }

    #[test]
    fn fdr_mask_examples() {
        let all = vec![true; 4];
        let big = fdr_mask_grid(&[Some(1e-9), Some(1e-8), Some(1e-10), Some(1e-12)], &all, 0.05);
        assert_eq!(big, vec![true; 4]);
        assert_eq!(fdr_mask_grid(&[Some(1.0); 4], &all, 0.05), vec![false; 4]);
        let mixed = fdr_mask_grid(&[Some(0.001), Some(0.01), None, Some(0.02), Some(0.8)], &[true; 5], 0.05);
        assert_eq!(mixed, vec![true, true, false, true, false]);
        let diag = fdr_mask_grid(&[Some(0.0), Some(0.04)], &[false, true], 0.05);
        assert_eq!(diag, vec![false, true]);
    }

    #[test]
    fn metric_names() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        assert!("volatility".parse::<Metric>().is_err());
    }

    proptest! {
        #[test]
        fn tstat_is_odd(d in prop::collection::vec(-10.0f64..10.0, 10..60)) {
            let cfg = TStatConfig::default();
            let neg: Vec<f64> = d.iter().map(|x| -x).collect();
            let (a, b) = (robust_tstat(&d, &cfg), robust_tstat(&neg, &cfg));
            match (a.t, b.t) {
                (Some(x), Some(y)) => {
                    prop_assert!((x + y).abs() <= 1e-9 * x.abs().max(1.0));
                    prop_assert!((a.p_value.unwrap() - b.p_value.unwrap()).abs() < 1e-12);
                }
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
