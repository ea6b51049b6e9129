//! Synthetic markets with planted trader groups and planted cross-timescale
//! lead-lag couplings.
//!
//! Generation runs in three passes over a seeded RNG:
//!
//! 1. Baseline trading: every trader trades Poisson-many times per base slice
//!    with a random sign. In a group event all members adopt one common sign
//!    (each follows it with probability `sync_prob`) for the whole slice.
//! 2. Activity coupling: at each alignment point of a coupling the source
//!    group receives a burst of extra trades in its past interval, with size
//!    driven by a Gamma-distributed intensity. With probability `beta` the
//!    point is a copy event and the target group's burst in the future
//!    interval reuses the same intensity; otherwise it draws a fresh one.
//! 3. Sign coupling: at copy events with a directional source state, each
//!    target trade in the future interval takes that sign with probability
//!    `copy_fidelity`.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{
    build_calendar, filter_session_within, CalendarConfig, SessionCalendar, Trade, TradeSet, TraderId,
};

/// A planted lead-lag coupling between two groups (0-based group indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub source: usize,
    pub source_dt_s: u32,
    pub target: usize,
    pub target_dt_s: u32,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_traders: usize,
    /// Memberships as 1-based trader numbers; trader `k` has id `"k"`.
    pub groups: Vec<Vec<usize>>,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub calendar: CalendarConfig,
    /// Length of the slices on which baseline trading and group events are drawn.
    pub base_slice_s: u32,
    /// Mean trades per trader per base slice.
    pub baseline_rate: f64,
    /// Probability of a group event per group and base slice.
    pub group_event_rate: f64,
    /// Probability that a member follows the common sign of a group event.
    pub sync_prob: f64,
    /// Mean extra trades per member in a group-event slice.
    pub event_trades: f64,
    pub couplings: Vec<Coupling>,
    /// Probability that a target trade copies the source sign at a copy event.
    pub copy_fidelity: f64,
    /// Mean burst trades per member per hour of interval.
    pub burst_rate: f64,
    /// Variance of the unit-mean Gamma burst intensity.
    pub burst_dispersion: f64,
    /// Log-normal volume parameters; volumes are rounded to whole units of at least 1.
    pub volume_mu: f64,
    pub volume_sigma: f64,
    pub rho0: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_traders: 50,
            groups: Vec::new(),
            n_days: 30,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            calendar: CalendarConfig::default(),
            base_slice_s: 300,
            baseline_rate: 0.3,
            group_event_rate: 0.0,
            sync_prob: 0.9,
            event_trades: 1.0,
            couplings: Vec::new(),
            copy_fidelity: 0.9,
            burst_rate: 0.0,
            burst_dispersion: 1.0,
            volume_mu: 3.0,
            volume_sigma: 1.0,
            rho0: 0.01,
            seed: 0,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

fn check_rate(name: &str, r: f64) -> Result<()> {
    if r.is_finite() && r >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a non-negative rate, got {r}")))
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<SessionCalendar> {
        let cal = build_calendar(&self.calendar)?;
        if self.n_traders == 0 || self.n_days == 0 {
            return Err(Error::config("need at least one trader and one day"));
        }
        if self.base_slice_s == 0 || self.base_slice_s > cal.session_len_s() {
            return Err(Error::config(format!("base slice of {} s does not fit the session", self.base_slice_s)));
        }
        check_prob("group_event_rate", self.group_event_rate)?;
        check_prob("sync_prob", self.sync_prob)?;
        check_prob("copy_fidelity", self.copy_fidelity)?;
        check_rate("baseline_rate", self.baseline_rate)?;
        check_rate("event_trades", self.event_trades)?;
        check_rate("burst_rate", self.burst_rate)?;
        if !(self.burst_dispersion.is_finite() && self.burst_dispersion > 0.0) {
            return Err(Error::config("burst_dispersion must be positive"));
        }
        if !(self.volume_sigma.is_finite() && self.volume_sigma >= 0.0 && self.volume_mu.is_finite()) {
            return Err(Error::config("invalid volume distribution"));
        }
        let mut seen = vec![false; self.n_traders + 1];
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::config("empty group"));
            }
            for &k in g {
                if k == 0 || k > self.n_traders {
                    return Err(Error::config(format!("group member {k} outside 1..={}", self.n_traders)));
                }
                if std::mem::replace(&mut seen[k], true) {
                    return Err(Error::config(format!("trader {k} belongs to two groups")));
                }
            }
        }
        for c in &self.couplings {
            check_prob("coupling beta", c.beta)?;
            if c.source >= self.groups.len() || c.target >= self.groups.len() {
                return Err(Error::config(format!("coupling {c:?} names a missing group")));
            }
            for dt in [c.source_dt_s, c.target_dt_s] {
                if dt == 0 || dt > cal.session_len_s() {
                    return Err(Error::config(format!("coupling timescale {dt} s does not fit the session")));
                }
            }
        }
        Ok(cal)
    }
}

/// Signed trade `(offset_ms, signed volume)` during generation.
type Raw = (u32, f64);

struct Market {
    /// `trades[trader][day]`.
    trades: Vec<Vec<Vec<Raw>>>,
}

impl Market {
    fn net_in(&self, members: &[usize], day: usize, lo: u32, hi: u32) -> (f64, f64) {
        let mut v = 0.0;
        let mut a = 0.0;
        for &m in members {
            for &(o, x) in &self.trades[m][day] {
                if o >= lo && o < hi {
                    v += x;
                    a += x.abs();
                }
            }
        }
        (v, a)
    }
}

struct Draw<'a> {
    rng: &'a mut ChaCha8Rng,
    volume: LogNormal<f64>,
}

impl Draw<'_> {
    fn poisson(&mut self, lambda: f64) -> u64 {
        if lambda <= 0.0 {
            return 0;
        }
        Poisson::new(lambda).expect("positive rate").sample(self.rng) as u64
    }

    fn sign(&mut self) -> f64 {
        if self.rng.random_bool(0.5) {
            1.0
        } else {
            -1.0
        }
    }

    fn volume(&mut self) -> f64 {
        self.volume.sample(self.rng).round().max(1.0)
    }

    fn offset(&mut self, lo: u32, hi: u32) -> u32 {
        self.rng.random_range(lo..hi)
    }
}

/// Draws the synthetic trades. Trader ids are `"1"..="n"`.
pub fn generate_trades(cfg: &SynthConfig) -> Result<(SessionCalendar, Vec<NaiveDate>, Vec<Trade>)> {
    let cal = cfg.validate()?;
    let days = cal.next_business_days(cfg.start_date, cfg.n_days);
    let s_ms = cal.session_len_ms();
    let base_ms = cfg.base_slice_s * 1000;
    let n_slices = cal.session_len_s() / cfg.base_slice_s;
    let members: Vec<Vec<usize>> = cfg.groups.iter().map(|g| g.iter().map(|k| k - 1).collect()).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let volume = LogNormal::new(cfg.volume_mu, cfg.volume_sigma).map_err(|e| Error::config(e.to_string()))?;
    let mut d = Draw { rng: &mut rng, volume };
    let mut mk = Market { trades: vec![vec![Vec::new(); days.len()]; cfg.n_traders] };

    // baseline and group events
    for day in 0..days.len() {
        for k in 0..n_slices {
            let (lo, hi) = (k * base_ms, (k + 1) * base_ms);
            for trader in 0..cfg.n_traders {
                for _ in 0..d.poisson(cfg.baseline_rate) {
                    let t = (d.offset(lo, hi), d.sign() * d.volume());
                    mk.trades[trader][day].push(t);
                }
            }
            for g in &members {
                if !d.rng.random_bool(cfg.group_event_rate) {
                    continue;
                }
                let s = d.sign();
                for &m in g {
                    let sm = if d.rng.random_bool(cfg.sync_prob) { s } else { -s };
                    for t in mk.trades[m][day].iter_mut().filter(|t| t.0 >= lo && t.0 < hi) {
                        t.1 = sm * t.1.abs();
                    }
                    for _ in 0..1 + d.poisson(cfg.event_trades) {
                        let t = (d.offset(lo, hi), sm * d.volume());
                        mk.trades[m][day].push(t);
                    }
                }
            }
        }
    }

    // activity bursts; copy decisions are kept for the sign pass
    let burst =
        Gamma::new(1.0 / cfg.burst_dispersion, cfg.burst_dispersion).map_err(|e| Error::config(e.to_string()))?;
    let mut copies: Vec<Vec<Vec<bool>>> = Vec::with_capacity(cfg.couplings.len());
    for c in &cfg.couplings {
        let m_ms = c.source_dt_s.max(c.target_dt_s) * 1000;
        let (t1, t2) = (c.source_dt_s * 1000, c.target_dt_s * 1000);
        let points = (s_ms - t2) / m_ms;
        let (src, tgt) = (&members[c.source], &members[c.target]);
        let mut flags = vec![Vec::with_capacity(points as usize); days.len()];
        for (day, day_flags) in flags.iter_mut().enumerate() {
            for k in 1..=points {
                let t = k * m_ms;
                let z = burst.sample(d.rng);
                let copy = d.rng.random_bool(c.beta);
                day_flags.push(copy);
                let z2 = if copy { z } else { burst.sample(d.rng) };
                for (group, lo, hi, zz) in [(src, t - t1, t, z), (tgt, t, t + t2, z2)] {
                    let lambda = cfg.burst_rate * (hi - lo) as f64 / 3.6e6 * group.len() as f64 * zz;
                    for _ in 0..d.poisson(lambda) {
                        let m = group[d.rng.random_range(0..group.len())];
                        let tr = (d.offset(lo, hi), d.sign() * d.volume());
                        mk.trades[m][day].push(tr);
                    }
                }
            }
        }
        copies.push(flags);
    }

    // sign copying, coupling by coupling in chronological order
    for (c, flags) in cfg.couplings.iter().zip(&copies) {
        let m_ms = c.source_dt_s.max(c.target_dt_s) * 1000;
        let (t1, t2) = (c.source_dt_s * 1000, c.target_dt_s * 1000);
        let (src, tgt) = (&members[c.source], &members[c.target]);
        for (day, day_flags) in flags.iter().enumerate() {
            for (i, &copy) in day_flags.iter().enumerate() {
                if !copy {
                    continue;
                }
                let t = (i as u32 + 1) * m_ms;
                let (v, a) = mk.net_in(src, day, t - t1, t);
                if a <= 0.0 || (v / a).abs() <= cfg.rho0 {
                    continue;
                }
                let s = v.signum();
                for &m in tgt {
                    for tr in mk.trades[m][day].iter_mut().filter(|x| x.0 >= t && x.0 < t + t2) {
                        if d.rng.random_bool(cfg.copy_fidelity) {
                            tr.1 = s * tr.1.abs();
                        }
                    }
                }
            }
        }
    }

    let mut out = Vec::new();
    for (trader, per_day) in mk.trades.iter().enumerate() {
        let id = TraderId((trader + 1).to_string());
        for (day, ts) in per_day.iter().enumerate() {
            let start = cal.day_start_ms(days[day]);
            let mut ts = ts.clone();
            ts.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            for (o, v) in ts {
                out.push(Trade::new(id.clone(), start + o as i64, v)?);
            }
        }
    }
    out.sort_by(|a, b| a.timestamp_ms.cmp(&b.timestamp_ms).then_with(|| a.trader_id.cmp(&b.trader_id)));
    Ok((cal, days, out))
}

/// Draws a synthetic market; the day axis covers all generated business days.
pub fn generate_market(cfg: &SynthConfig) -> Result<TradeSet> {
    let (cal, days, trades) = generate_trades(cfg)?;
    Ok(filter_session_within(&trades, &cal, days[0], *days.last().expect("at least one day")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCoupling {
    pub source: Vec<TraderId>,
    pub source_dt_s: u32,
    pub target: Vec<TraderId>,
    pub target_dt_s: u32,
    pub beta: f64,
}

/// Ground truth of a synthetic market. The planted partition applies at every timescale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub groups: Vec<Vec<TraderId>>,
    pub couplings: Vec<PlantedCoupling>,
}

pub fn planted_truth(cfg: &SynthConfig) -> PlantedTruth {
    let ids = |g: &[usize]| -> Vec<TraderId> {
        let mut v: Vec<TraderId> = g.iter().map(|k| TraderId(k.to_string())).collect();
        v.sort();
        v
    };
    PlantedTruth {
        groups: cfg.groups.iter().map(|g| ids(g)).collect(),
        couplings: cfg
            .couplings
            .iter()
            .map(|c| PlantedCoupling {
                source: ids(&cfg.groups[c.source]),
                source_dt_s: c.source_dt_s,
                target: ids(&cfg.groups[c.target]),
                target_dt_s: c.target_dt_s,
                beta: c.beta,
            })
            .collect(),
    }
}
