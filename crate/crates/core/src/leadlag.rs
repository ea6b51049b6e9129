//! Directed lead-lag networks between groups found at two timescales.
//!
//! Alignment times sit at multiples `k·Δt_M` of `Δt_M = max(Δt1, Δt2)` inside
//! each session. At every alignment time the state of each leading group is
//! taken over the past interval `[t − Δt1, t)` and the state of each lagging
//! group over the future interval `[t, t + Δt2)`, both recomputed from member
//! trades. Over-expressed (past, future) state pairs become directed links.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coarsen::{CellFlow, State};
use crate::community::GroupPartition;
use crate::error::{Error, Result};
use crate::ingest::{DayRange, SessionCalendar, TradeSet, TraderId};
use crate::validate::{bh_threshold, CoCounts, LnFactorials};

/// Alignment of two timescales within one session day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AlignmentGrid {
    pub dt1_s: u32,
    pub dt2_s: u32,
    pub dt_m_s: u32,
    /// Valid alignment indices per day are `1..=points_per_day`.
    pub points_per_day: u32,
}

impl AlignmentGrid {
    pub fn new(cal: &SessionCalendar, dt1_s: u32, dt2_s: u32) -> Result<Self> {
        let s = cal.session_len_s();
        if dt1_s == 0 || dt2_s == 0 {
            return Err(Error::config("timescales must be positive"));
        }
        if dt1_s > s || dt2_s > s {
            return Err(Error::config(format!("timescales ({dt1_s}, {dt2_s}) s exceed the {s} s session")));
        }
        let dt_m_s = dt1_s.max(dt2_s);
        Ok(AlignmentGrid { dt1_s, dt2_s, dt_m_s, points_per_day: (s - dt2_s) / dt_m_s })
    }

    /// Past-interval alignment index (1-based) containing a session offset.
    fn past_index(&self, offset_ms: u32) -> Option<u32> {
        let m = self.dt_m_s as u64 * 1000;
        let o = offset_ms as u64;
        let k = o / m + 1;
        (k <= self.points_per_day as u64 && o >= k * m - self.dt1_s as u64 * 1000).then_some(k as u32)
    }

    /// Future-interval alignment index (1-based) containing a session offset.
    fn future_index(&self, offset_ms: u32) -> Option<u32> {
        let m = self.dt_m_s as u64 * 1000;
        let o = offset_ms as u64;
        let k = o / m;
        (k >= 1 && k <= self.points_per_day as u64 && o < k * m + self.dt2_s as u64 * 1000).then_some(k as u32)
    }
}

/// Alignment times of one day as epoch milliseconds; empty on non-business days.
pub fn alignment_points(cal: &SessionCalendar, date: NaiveDate, dt1_s: u32, dt2_s: u32) -> Result<Vec<i64>> {
    let grid = AlignmentGrid::new(cal, dt1_s, dt2_s)?;
    if !cal.is_business_day(date) {
        return Ok(Vec::new());
    }
    let start = cal.day_start_ms(date);
    Ok((1..=grid.points_per_day as i64).map(|k| start + k * grid.dt_m_s as i64 * 1000).collect())
}

/// Past flows of the leading groups and future flows of the lagging groups at
/// every alignment point of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadLagObservations {
    pub window_id: usize,
    pub grid: AlignmentGrid,
    pub days: DayRange,
    pub rho0: f64,
    pub leading_groups: Vec<Vec<TraderId>>,
    pub lagging_groups: Vec<Vec<TraderId>>,
    /// `past[g1][point]`.
    pub past: Vec<Vec<CellFlow>>,
    /// `future[g2][point]`.
    pub future: Vec<Vec<CellFlow>>,
}

impl LeadLagObservations {
    pub fn n_points(&self) -> usize {
        self.days.len * self.grid.points_per_day as usize
    }

    pub fn past_states(&self, g1: usize) -> Vec<State> {
        self.past[g1].iter().map(|f| f.state(self.rho0)).collect()
    }

    pub fn future_states(&self, g2: usize) -> Vec<State> {
        self.future[g2].iter().map(|f| f.state(self.rho0)).collect()
    }

    /// Past trade counts of a leading group.
    pub fn past_counts(&self, g1: usize) -> Vec<u32> {
        self.past[g1].iter().map(|f| f.n_trades).collect()
    }

    /// Future trade counts of a lagging group.
    pub fn future_counts(&self, g2: usize) -> Vec<u32> {
        self.future[g2].iter().map(|f| f.n_trades).collect()
    }
}

fn trader_index(ts: &TradeSet) -> HashMap<&TraderId, usize> {
    ts.traders().iter().enumerate().map(|(i, t)| (&t.id, i)).collect()
}

fn group_flows<F>(
    ts: &TradeSet,
    index: &HashMap<&TraderId, usize>,
    members: &[TraderId],
    days: DayRange,
    n: usize,
    locate: F,
) -> Vec<CellFlow>
where
    F: Fn(u32) -> Option<u32>,
{
    let per_day = n / days.len.max(1);
    let mut out = vec![CellFlow::default(); n];
    for i in members.iter().filter_map(|m| index.get(m)) {
        for t in ts.traders()[*i].in_days(days) {
            if let Some(k) = locate(t.offset_ms) {
                out[(t.day as usize - days.start) * per_day + (k as usize - 1)].add(t.volume);
            }
        }
    }
    out
}

/// Aggregates member trades of both partitions over the alignment intervals of `days`.
/// Members absent from `ts` contribute nothing.
pub fn leadlag_observations(
    ts: &TradeSet,
    days: DayRange,
    leading: &GroupPartition,
    lagging: &GroupPartition,
    grid: &AlignmentGrid,
    rho0: f64,
) -> LeadLagObservations {
    let index = trader_index(ts);
    let n = days.len * grid.points_per_day as usize;
    let past = leading.groups.par_iter().map(|g| group_flows(ts, &index, g, days, n, |o| grid.past_index(o))).collect();
    let future =
        lagging.groups.par_iter().map(|g| group_flows(ts, &index, g, days, n, |o| grid.future_index(o))).collect();
    LeadLagObservations {
        window_id: leading.window_id,
        grid: *grid,
        days,
        rho0,
        leading_groups: leading.groups.clone(),
        lagging_groups: lagging.groups.clone(),
        past,
        future,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeadLagConfig {
    pub alpha: f64,
    /// One BH family over all nine state pairs; otherwise one family per state pair.
    pub pool_state_pairs: bool,
}

impl Default for LeadLagConfig {
    fn default() -> Self {
        LeadLagConfig { alpha: 0.05, pool_state_pairs: true }
    }
}

/// A validated directed link `(src_group, src_state) → (dst_group, dst_state)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LeadLagLink {
    pub src_group: u32,
    pub src_state: State,
    pub dst_group: u32,
    pub dst_state: State,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeadLagNetwork {
    pub window_id: usize,
    pub dt1_s: u32,
    pub dt2_s: u32,
    pub leading_groups: Vec<Vec<TraderId>>,
    pub lagging_groups: Vec<Vec<TraderId>>,
    /// Sorted by source group, source state, target group, target state.
    pub links: Vec<LeadLagLink>,
    pub alpha: f64,
    pub n_tests: usize,
    pub n_points: usize,
}

fn sort_links(links: &mut [LeadLagLink]) {
    links.sort_by(|a, b| {
        (a.src_group, a.src_state, a.dst_group, a.dst_state).cmp(&(b.src_group, b.src_state, b.dst_group, b.dst_state))
    });
}

impl LeadLagNetwork {
    /// The network with every link reversed and the roles of the two timescales swapped.
    pub fn transposed(&self) -> LeadLagNetwork {
        let mut links: Vec<LeadLagLink> = self
            .links
            .iter()
            .map(|l| LeadLagLink {
                src_group: l.dst_group,
                src_state: l.dst_state,
                dst_group: l.src_group,
                dst_state: l.src_state,
                p_value: l.p_value,
            })
            .collect();
        sort_links(&mut links);
        LeadLagNetwork {
            dt1_s: self.dt2_s,
            dt2_s: self.dt1_s,
            leading_groups: self.lagging_groups.clone(),
            lagging_groups: self.leading_groups.clone(),
            links,
            ..self.clone()
        }
    }

    /// Export as `window_id,dt1,dt2,src_group,src_state,dst_group,dst_state,p_value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["window_id", "dt1", "dt2", "src_group", "src_state", "dst_group", "dst_state", "p_value"])?;
        self.write_rows(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        for l in &self.links {
            w.write_record([
                self.window_id.to_string().as_str(),
                &self.dt1_s.to_string(),
                &self.dt2_s.to_string(),
                &l.src_group.to_string(),
                l.src_state.code(),
                &l.dst_group.to_string(),
                l.dst_state.code(),
                &crate::io::fmt_f64(Some(l.p_value)),
            ])?;
        }
        Ok(())
    }
}

fn state_index(s: State) -> usize {
    match s {
        State::Buy => 0,
        State::Sell => 1,
        State::Neutral => 2,
        State::Inactive => 3,
    }
}

/// Tests every (leading group, lagging group, state pair) and keeps the BH rejections.
pub fn build_llsvn(obs: &LeadLagObservations, cfg: &LeadLagConfig) -> Result<LeadLagNetwork> {
    let (n1, n2) = (obs.leading_groups.len(), obs.lagging_groups.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::input(format!("lead-lag network needs groups on both sides, got {n1} and {n2}")));
    }
    let t = obs.n_points();
    if t == 0 {
        return Err(Error::input("no alignment points in the window"));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::config(format!("FDR level must lie in (0, 1), got {}", cfg.alpha)));
    }
    let lnf = LnFactorials::new(t);
    let past: Vec<Vec<usize>> = (0..n1).map(|g| obs.past_states(g).into_iter().map(state_index).collect()).collect();
    let future: Vec<Vec<usize>> =
        (0..n2).map(|g| obs.future_states(g).into_iter().map(state_index).collect()).collect();

    // p-values indexed by ((g1 * n2 + g2) * 9 + 3 * s1 + s2)
    let pvalues: Vec<f64> = (0..n1 * n2)
        .into_par_iter()
        .flat_map_iter(|cell| {
            let (a, b) = (&past[cell / n2], &future[cell % n2]);
            let mut table = [[0u32; 4]; 4];
            for (&x, &y) in a.iter().zip(b) {
                table[x][y] += 1;
            }
            let lnf = &lnf;
            (0..9).map(move |k| {
                let (s1, s2) = (k / 3, k % 3);
                let n_p = table[s1].iter().sum();
                let n_q = table.iter().map(|r| r[s2]).sum();
                lnf.upper_tail(CoCounts { slots: t as u32, n_p, n_q, n_pq: table[s1][s2] })
            })
        })
        .collect();

    let rejected: Vec<usize> = if cfg.pool_state_pairs {
        bh_threshold(&pvalues, cfg.alpha, pvalues.len()).rejected
    } else {
        let mut all: Vec<usize> = (0..9)
            .flat_map(|k| {
                let idx: Vec<usize> = (k..pvalues.len()).step_by(9).collect();
                let ps: Vec<f64> = idx.iter().map(|&i| pvalues[i]).collect();
                bh_threshold(&ps, cfg.alpha, ps.len()).rejected.into_iter().map(move |r| idx[r])
            })
            .collect();
        all.sort_unstable();
        all
    };

    let mut links: Vec<LeadLagLink> = rejected
        .into_iter()
        .map(|i| {
            let (cell, k) = (i / 9, i % 9);
            LeadLagLink {
                src_group: (cell / n2) as u32,
                src_state: State::ACTIVE[k / 3],
                dst_group: (cell % n2) as u32,
                dst_state: State::ACTIVE[k % 3],
                p_value: pvalues[i],
            }
        })
        .collect();
    sort_links(&mut links);
    Ok(LeadLagNetwork {
        window_id: obs.window_id,
        dt1_s: obs.grid.dt1_s,
        dt2_s: obs.grid.dt2_s,
        leading_groups: obs.leading_groups.clone(),
        lagging_groups: obs.lagging_groups.clone(),
        links,
        alpha: cfg.alpha,
        n_tests: pvalues.len(),
        n_points: t,
    })
}

/// Counts of link kinds in a lead-lag network.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkTaxonomy {
    pub n_links: usize,
    /// Links whose source and target groups have the same members.
    pub self_links: usize,
    pub cross_links: usize,
    /// Leading groups with a self link and no cross link.
    pub groups_only_self: usize,
    /// `(src_group, src_state, dst_group)` triples reaching two or more target states.
    pub dual_links: usize,
}

pub fn classify_links(net: &LeadLagNetwork) -> LinkTaxonomy {
    let is_self =
        |l: &LeadLagLink| net.leading_groups[l.src_group as usize] == net.lagging_groups[l.dst_group as usize];
    let self_links = net.links.iter().filter(|l| is_self(l)).count();
    let with_self: BTreeSet<u32> = net.links.iter().filter(|l| is_self(l)).map(|l| l.src_group).collect();
    let with_cross: BTreeSet<u32> = net.links.iter().filter(|l| !is_self(l)).map(|l| l.src_group).collect();
    let mut targets: HashMap<(u32, State, u32), BTreeSet<State>> = HashMap::new();
    for l in &net.links {
        targets.entry((l.src_group, l.src_state, l.dst_group)).or_default().insert(l.dst_state);
    }
    LinkTaxonomy {
        n_links: net.links.len(),
        self_links,
        cross_links: net.links.len() - self_links,
        groups_only_self: with_self.difference(&with_cross).count(),
        dual_links: targets.values().filter(|s| s.len() >= 2).count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsen::{slice_grid, state_matrix};
    use crate::ingest::{filter_session, filter_session_within, Trade};
    use chrono::{NaiveDate, NaiveTime};

    fn cal() -> SessionCalendar {
        SessionCalendar::default()
    }

    fn day() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, 5).unwrap()
    }

    fn at(h: u32, m: u32, s: u32, ms: u32) -> i64 {
        day().and_time(NaiveTime::from_hms_milli_opt(h, m, s, ms).unwrap()).and_utc().timestamp_millis()
    }

    #[test]
    fn alignment_counts() {
        let c = cal();
        assert_eq!(alignment_points(&c, day(), 3600, 3600).unwrap().len(), 7);
        assert_eq!(alignment_points(&c, day(), 600, 300).unwrap().len(), 47);
        let one = alignment_points(&c, day(), 14400, 14400).unwrap();
        assert_eq!(one, vec![at(13, 0, 0, 0)]);
        let sat = NaiveDate::from_ymd_opt(2024, 3, 9).unwrap();
        assert!(alignment_points(&c, sat, 600, 300).unwrap().is_empty());
        assert!(alignment_points(&c, day(), 0, 300).is_err());
        assert!(alignment_points(&c, day(), 28801, 300).is_err());
        assert!(alignment_points(&c, day(), 28800, 300).unwrap().is_empty());
    }

    #[test]
    fn interval_membership() {
        let g = AlignmentGrid::new(&cal(), 600, 300).unwrap();
        let ms = |m: u32| m * 60_000;
        assert_eq!(g.past_index(0), Some(1));
        assert_eq!(g.past_index(ms(10) - 1), Some(1));
        assert_eq!(g.past_index(ms(10)), Some(2));
        assert_eq!(g.future_index(ms(10) - 1), None);
        assert_eq!(g.future_index(ms(10)), Some(1));
        assert_eq!(g.future_index(ms(15) - 1), Some(1));
        assert_eq!(g.future_index(ms(15)), None);
        // the interval ending at the close belongs to no point with dt2 = 300 at k = 48
        assert_eq!(g.past_index(ms(475)), None);
        assert_eq!(g.future_index(ms(470)), Some(47));
        let g = AlignmentGrid::new(&cal(), 300, 600).unwrap();
        assert_eq!(g.past_index(ms(4)), None);
        assert_eq!(g.past_index(ms(5)), Some(1));
        assert_eq!(g.future_index(ms(12)), Some(1));
    }

    #[test]
    fn hand_built_fixture() {
        // dt1 = 3600, dt2 = 1800 → dt_m = 3600, 7 points; group a leads, group b lags
        let trades = vec![
            Trade::new("a1", at(9, 10, 0, 0), 10.0).unwrap(),
            Trade::new("a2", at(9, 20, 0, 0), -4.0).unwrap(),
            Trade::new("a1", at(10, 30, 0, 0), -5.0).unwrap(),
            Trade::new("b1", at(10, 0, 0, 0), 3.0).unwrap(),
            Trade::new("b1", at(10, 29, 59, 999), 1.0).unwrap(),
            Trade::new("b1", at(10, 30, 0, 0), -100.0).unwrap(),
            Trade::new("b2", at(11, 15, 0, 0), -2.0).unwrap(),
            Trade::new("b2", at(12, 5, 0, 0), 7.0).unwrap(),
            Trade::new("b1", at(12, 5, 0, 0), -7.0).unwrap(),
        ];
        let ts = filter_session(&trades, &cal());
        let ids = |v: &[&str]| v.iter().map(|&s| TraderId::from(s)).collect::<Vec<_>>();
        let lead = GroupPartition::from_groups(0, 3600, vec![ids(&["a1", "a2"])]);
        let lag = GroupPartition::from_groups(0, 1800, vec![ids(&["b1", "b2"])]);
        let grid = AlignmentGrid::new(&cal(), 3600, 1800).unwrap();
        let obs = leadlag_observations(&ts, DayRange::new(0, 1), &lead, &lag, &grid, 0.01);
        assert_eq!(obs.n_points(), 7);
        use State::*;
        assert_eq!(obs.past_states(0), vec![Buy, Sell, Inactive, Inactive, Inactive, Inactive, Inactive]);
        assert_eq!(obs.future_states(0), vec![Buy, Sell, Neutral, Inactive, Inactive, Inactive, Inactive]);
        assert_eq!(obs.past_counts(0), vec![2, 1, 0, 0, 0, 0, 0]);
        assert_eq!(obs.future_counts(0), vec![2, 1, 2, 0, 0, 0, 0]);
        assert_eq!(obs.past[0][0], CellFlow { net: 6.0, turnover: 14.0, n_trades: 2 });
    }

    #[test]
    fn equal_timescales_reduce_to_consecutive_slices() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        use rand::Rng;
        let first = day();
        let trades: Vec<Trade> = (0..2000)
            .map(|_| {
                let ms = rng.random_range(0..28_800_000i64);
                let d = rng.random_range(0..3i64);
                let v = rng.random_range(1..20) as f64 * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Trade::new(format!("t{}", rng.random_range(0..4)), at(9, 0, 0, 0) + d * 86_400_000 + ms, v).unwrap()
            })
            .collect();
        let ts = filter_session_within(&trades, &cal(), first, first + chrono::Days::new(2));
        let everyone = GroupPartition::from_groups(0, 1200, vec![ts.traders().iter().map(|t| t.id.clone()).collect()]);
        let grid = AlignmentGrid::new(&cal(), 1200, 1200).unwrap();
        let obs = leadlag_observations(&ts, ts.all_days(), &everyone, &everyone, &grid, 0.01);
        let sg = slice_grid(&cal(), 1200, ts.all_days()).unwrap();
        let sm = state_matrix(&ts, &sg, 0.01);
        let total = |slot: usize| {
            let mut f = CellFlow::default();
            for i in 0..sm.n_traders() {
                f.merge(&sm.flows(i)[slot]);
            }
            f
        };
        for d in 0..ts.n_days() {
            for k in 1..=grid.points_per_day as usize {
                let p = d * grid.points_per_day as usize + k - 1;
                assert_eq!(obs.past[0][p], total(sg.slot(d, k as u32 - 1)));
                assert_eq!(obs.future[0][p], total(sg.slot(d, k as u32)));
            }
        }
    }

    fn net(leading: Vec<Vec<&str>>, lagging: Vec<Vec<&str>>, links: &[(u32, State, u32, State)]) -> LeadLagNetwork {
        let ids = |g: Vec<Vec<&str>>| g.into_iter().map(|v| v.into_iter().map(TraderId::from).collect()).collect();
        LeadLagNetwork {
            window_id: 0,
            dt1_s: 600,
            dt2_s: 300,
            leading_groups: ids(leading),
            lagging_groups: ids(lagging),
            links: links
                .iter()
                .map(|&(a, s, b, t)| LeadLagLink {
                    src_group: a,
                    src_state: s,
                    dst_group: b,
                    dst_state: t,
                    p_value: 1e-5,
                })
                .collect(),
            alpha: 0.05,
            n_tests: 36,
            n_points: 100,
        }
    }

    #[test]
    fn taxonomy_examples() {
        use State::*;
        let g = || vec![vec!["x", "y"], vec!["z"]];
        let t = classify_links(&net(g(), g(), &[(0, Buy, 0, Buy)]));
        assert_eq!((t.self_links, t.cross_links, t.groups_only_self, t.dual_links), (1, 0, 1, 0));
        let t = classify_links(&net(g(), g(), &[(0, Buy, 1, Buy), (1, Buy, 0, Buy)]));
        assert_eq!((t.self_links, t.cross_links), (0, 2));
        let t = classify_links(&net(g(), g(), &[(0, Buy, 1, Buy), (0, Buy, 1, Sell)]));
        assert_eq!(t.dual_links, 1);
        // groups matched by members, not by index
        let t = classify_links(&net(g(), vec![vec!["z"], vec!["x", "y"]], &[(0, Sell, 1, Sell)]));
        assert_eq!(t.self_links, 1);
    }

    #[test]
    fn planted_copy_is_validated() {
        use rand::Rng;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let grid = AlignmentGrid::new(&cal(), 600, 600).unwrap();
        let n = 40 * grid.points_per_day as usize;
        let flow = |s: f64| CellFlow { net: s, turnover: 1.0, n_trades: 1 };
        let src: Vec<CellFlow> = (0..n).map(|_| flow(if rng.random_bool(0.5) { 1.0 } else { -1.0 })).collect();
        let dst: Vec<CellFlow> = src.iter().map(|f| if rng.random_bool(0.9) { *f } else { flow(-f.net) }).collect();
        let other: Vec<CellFlow> = (0..n).map(|_| flow(if rng.random_bool(0.5) { 1.0 } else { -1.0 })).collect();
        let obs = LeadLagObservations {
            window_id: 3,
            grid,
            days: DayRange::new(0, 40),
            rho0: 0.01,
            leading_groups: vec![vec!["a".into()], vec!["c".into()]],
            lagging_groups: vec![vec!["b".into()]],
            past: vec![src, other],
            future: vec![dst],
        };
        for pool in [true, false] {
            let net = build_llsvn(&obs, &LeadLagConfig { alpha: 0.05, pool_state_pairs: pool }).unwrap();
            assert_eq!(net.n_tests, 18);
            let keys: Vec<_> = net.links.iter().map(|l| (l.src_group, l.src_state, l.dst_group, l.dst_state)).collect();
            assert!(keys.contains(&(0, State::Buy, 0, State::Buy)));
            assert!(keys.contains(&(0, State::Sell, 0, State::Sell)));
            assert!(net.links.iter().all(|l| l.src_group == 0));
            let back = net.transposed().transposed();
            assert_eq!(back, net);
        }
        let empty = LeadLagObservations { leading_groups: vec![], past: vec![], ..obs };
        assert!(build_llsvn(&empty, &LeadLagConfig::default()).is_err());
    }
}
