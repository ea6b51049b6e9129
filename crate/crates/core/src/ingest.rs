//! Trade ingestion: CSV parsing, the trading-session calendar and session filtering.
//!
//! Raw records carry a trader identifier, a UTC timestamp in milliseconds and a
//! signed volume (positive for buys, negative for sells). Only trades inside the
//! daily session `[session_start, session_end)` on business days are retained.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Opaque trader identifier, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraderId(pub String);

impl fmt::Display for TraderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TraderId {
    fn from(s: &str) -> Self {
        TraderId(s.to_string())
    }
}

impl From<String> for TraderId {
    fn from(s: String) -> Self {
        TraderId(s)
    }
}

/// A single transaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Trade {
    pub trader_id: TraderId,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp_ms: i64,
    /// Signed volume in base-currency units; negative for sells.
    pub volume: f64,
}

impl Trade {
    pub fn new(trader_id: impl Into<TraderId>, timestamp_ms: i64, volume: f64) -> Result<Self> {
        if volume == 0.0 || !volume.is_finite() {
            return Err(Error::input(format!("volume must be finite and non-zero, got {volume}")));
        }
        Ok(Trade { trader_id: trader_id.into(), timestamp_ms, volume })
    }
}

/// Column layout of a trade CSV.
#[derive(Debug, Clone)]
pub struct TradeCsvFormat {
    pub delimiter: u8,
    pub trader_column: String,
    pub timestamp_column: String,
    pub volume_column: String,
}

impl Default for TradeCsvFormat {
    fn default() -> Self {
        TradeCsvFormat {
            delimiter: b',',
            trader_column: "trader_id".into(),
            timestamp_column: "timestamp_ms".into(),
            volume_column: "volume".into(),
        }
    }
}

/// Parses trade records. Row order is preserved; extra columns are ignored with a warning.
pub fn parse_trades<R: Read>(source: R, format: &TradeCsvFormat) -> Result<Vec<Trade>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing column `{name}`") })
    };
    let (c_trader, c_ts, c_vol) =
        (find(&format.trader_column)?, find(&format.timestamp_column)?, find(&format.volume_column)?);
    if headers.len() > 3 {
        log::warn!("ignoring {} extra column(s) in trade file", headers.len() - 3);
    }

    let mut trades = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                return Err(Error::Parse { line, message: e.to_string() });
            }
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let bad = |message: String| Error::Parse { line, message };
        if record.len() != headers.len() {
            return Err(bad(format!("expected {} fields, found {}", headers.len(), record.len())));
        }
        let trader = &record[c_trader];
        if trader.is_empty() {
            return Err(bad("empty trader_id".into()));
        }
        let ts: i64 = record[c_ts].parse().map_err(|_| bad(format!("invalid timestamp `{}`", &record[c_ts])))?;
        let volume: f64 = record[c_vol].parse().map_err(|_| bad(format!("invalid volume `{}`", &record[c_vol])))?;
        if !volume.is_finite() {
            return Err(bad(format!("non-finite volume `{}`", &record[c_vol])));
        }
        if volume == 0.0 {
            return Err(bad("zero volume".into()));
        }
        trades.push(Trade { trader_id: TraderId(trader.to_string()), timestamp_ms: ts, volume });
    }
    Ok(trades)
}

/// Writes trades in the canonical `trader_id,timestamp_ms,volume` layout.
pub fn write_trades<'a, W, I>(trades: I, out: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Trade>,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trader_id", "timestamp_ms", "volume"])?;
    for t in trades {
        w.write_record([t.trader_id.0.as_str(), &t.timestamp_ms.to_string(), &t.volume.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Session settings as they appear in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalendarConfig {
    /// Time of day, `HH:MM` or `HH:MM:SS`.
    pub session_start: String,
    /// Time of day (exclusive).
    pub session_end: String,
    /// Weekday names, e.g. `Mon`.
    pub business_days: Vec<String>,
    pub holidays: Vec<NaiveDate>,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        CalendarConfig {
            session_start: "09:00:00".into(),
            session_end: "17:00:00".into(),
            business_days: ["Mon", "Tue", "Wed", "Thu", "Fri"].iter().map(|s| s.to_string()).collect(),
            holidays: Vec::new(),
        }
    }
}

/// Daily half-open trading session on a set of business days.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionCalendar {
    session_start: NaiveTime,
    session_end: NaiveTime,
    business: [bool; 7],
    holidays: BTreeSet<NaiveDate>,
}

fn parse_time_of_day(s: &str) -> Result<NaiveTime> {
    NaiveTime::parse_from_str(s, "%H:%M:%S")
        .or_else(|_| NaiveTime::parse_from_str(s, "%H:%M"))
        .map_err(|_| Error::config(format!("invalid time of day `{s}`")))
}

/// Builds a calendar from its configuration.
pub fn build_calendar(config: &CalendarConfig) -> Result<SessionCalendar> {
    let start = parse_time_of_day(&config.session_start)?;
    let end = parse_time_of_day(&config.session_end)?;
    if end <= start {
        return Err(Error::config(format!("session end {end} must be after session start {start}")));
    }
    let mut business = [false; 7];
    for name in &config.business_days {
        let day: Weekday = name.parse().map_err(|_| Error::config(format!("invalid weekday `{name}`")))?;
        business[day.num_days_from_monday() as usize] = true;
    }
    if !business.iter().any(|&b| b) {
        return Err(Error::config("no business days configured"));
    }
    Ok(SessionCalendar {
        session_start: start,
        session_end: end,
        business,
        holidays: config.holidays.iter().copied().collect(),
    })
}

fn ms_of_day(t: NaiveTime) -> u32 {
    t.num_seconds_from_midnight() * 1000 + t.nanosecond() / 1_000_000
}

impl Default for SessionCalendar {
    fn default() -> Self {
        build_calendar(&CalendarConfig::default()).expect("default calendar is valid")
    }
}

impl SessionCalendar {
    pub fn session_start(&self) -> NaiveTime {
        self.session_start
    }

    pub fn session_end(&self) -> NaiveTime {
        self.session_end
    }

    /// Session length in milliseconds.
    pub fn session_len_ms(&self) -> u32 {
        ms_of_day(self.session_end) - ms_of_day(self.session_start)
    }

    /// Session length in whole seconds (28800 for the default 09:00–17:00 session).
    pub fn session_len_s(&self) -> u32 {
        self.session_len_ms() / 1000
    }

    pub fn is_business_day(&self, date: NaiveDate) -> bool {
        self.business[date.weekday().num_days_from_monday() as usize] && !self.holidays.contains(&date)
    }

    /// Epoch milliseconds of the session start on `date`.
    pub fn day_start_ms(&self, date: NaiveDate) -> i64 {
        date.and_time(self.session_start).and_utc().timestamp_millis()
    }

    /// Maps a timestamp to its business day and millisecond offset from the session start.
    pub fn locate(&self, timestamp_ms: i64) -> Option<(NaiveDate, u32)> {
        let dt = DateTime::from_timestamp_millis(timestamp_ms)?.naive_utc();
        let date = dt.date();
        if !self.is_business_day(date) {
            return None;
        }
        let tod = ms_of_day(dt.time());
        let (start, end) = (ms_of_day(self.session_start), ms_of_day(self.session_end));
        (start..end).contains(&tod).then(|| (date, tod - start))
    }

    /// Business days in `[first, last]`.
    pub fn business_days(&self, first: NaiveDate, last: NaiveDate) -> Vec<NaiveDate> {
        first.iter_days().take_while(|d| *d <= last).filter(|d| self.is_business_day(*d)).collect()
    }

    /// The `n` consecutive business days starting at or after `first`.
    pub fn next_business_days(&self, first: NaiveDate, n: usize) -> Vec<NaiveDate> {
        first.iter_days().filter(|d| self.is_business_day(*d)).take(n).collect()
    }
}

/// Contiguous range of business-day indices of a [`TradeSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DayRange {
    pub start: usize,
    pub len: usize,
}

impl DayRange {
    pub fn new(start: usize, len: usize) -> Self {
        DayRange { start, len }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn contains(&self, day: usize) -> bool {
        (self.start..self.end()).contains(&day)
    }
}

/// A trade located inside the session grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionTrade {
    /// Index into [`TradeSet::days`].
    pub day: u32,
    /// Milliseconds since the session start of that day.
    pub offset_ms: u32,
    pub volume: f64,
}

/// All session trades of one trader, sorted by (day, offset).
#[derive(Debug, Clone, PartialEq)]
pub struct TraderTrades {
    pub id: TraderId,
    pub trades: Vec<SessionTrade>,
}

impl TraderTrades {
    /// Trades whose day lies in `days`.
    pub fn in_days(&self, days: DayRange) -> &[SessionTrade] {
        let lo = self.trades.partition_point(|t| (t.day as usize) < days.start);
        let hi = self.trades.partition_point(|t| (t.day as usize) < days.end());
        &self.trades[lo..hi]
    }
}

/// Session-filtered trades grouped by trader. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeSet {
    calendar: SessionCalendar,
    days: Vec<NaiveDate>,
    traders: Vec<TraderTrades>,
    excluded: usize,
}

/// Keeps the trades inside the calendar's sessions. The day axis spans the business
/// days between the first and the last retained trade.
pub fn filter_session(trades: &[Trade], cal: &SessionCalendar) -> TradeSet {
    filter_impl(trades, cal, None)
}

/// Like [`filter_session`] but with an explicit day axis `[first, last]`; trades on
/// other dates are excluded.
pub fn filter_session_within(trades: &[Trade], cal: &SessionCalendar, first: NaiveDate, last: NaiveDate) -> TradeSet {
    filter_impl(trades, cal, Some((first, last)))
}

fn filter_impl(trades: &[Trade], cal: &SessionCalendar, span: Option<(NaiveDate, NaiveDate)>) -> TradeSet {
    let located: Vec<(usize, NaiveDate, u32)> = trades
        .iter()
        .enumerate()
        .filter_map(|(i, t)| cal.locate(t.timestamp_ms).map(|(d, o)| (i, d, o)))
        .filter(|(_, d, _)| span.is_none_or(|(a, b)| *d >= a && *d <= b))
        .collect();

    let days = match span {
        Some((a, b)) => cal.business_days(a, b),
        None => match (located.iter().map(|x| x.1).min(), located.iter().map(|x| x.1).max()) {
            (Some(a), Some(b)) => cal.business_days(a, b),
            _ => Vec::new(),
        },
    };

    let mut by_trader: BTreeMap<&TraderId, Vec<SessionTrade>> = BTreeMap::new();
    for &(i, date, offset_ms) in &located {
        let day = days.binary_search(&date).expect("located trade lies on a business day") as u32;
        by_trader.entry(&trades[i].trader_id).or_default().push(SessionTrade {
            day,
            offset_ms,
            volume: trades[i].volume,
        });
    }
    let traders = by_trader
        .into_iter()
        .map(|(id, mut ts)| {
            ts.sort_by_key(|t| (t.day, t.offset_ms));
            TraderTrades { id: id.clone(), trades: ts }
        })
        .collect();

    TradeSet { calendar: cal.clone(), days, traders, excluded: trades.len() - located.len() }
}

impl TradeSet {
    pub fn calendar(&self) -> &SessionCalendar {
        &self.calendar
    }

    /// Business days on the day axis.
    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn traders(&self) -> &[TraderTrades] {
        &self.traders
    }

    /// Number of retained trades.
    pub fn len(&self) -> usize {
        self.traders.iter().map(|t| t.trades.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.traders.is_empty()
    }

    /// Number of input trades that fell outside the sessions.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn all_days(&self) -> DayRange {
        DayRange::new(0, self.days.len())
    }

    /// Traders with at least one trade in `days`.
    pub fn active_traders(&self, days: DayRange) -> usize {
        self.traders.iter().filter(|t| !t.in_days(days).is_empty()).count()
    }

    /// Flattens back to raw trades, by trader then time.
    pub fn trades(&self) -> Vec<Trade> {
        let starts: Vec<i64> = self.days.iter().map(|d| self.calendar.day_start_ms(*d)).collect();
        self.traders
            .iter()
            .flat_map(|tr| {
                let starts = &starts;
                tr.trades.iter().map(move |t| Trade {
                    trader_id: tr.id.clone(),
                    timestamp_ms: starts[t.day as usize] + i64::from(t.offset_ms),
                    volume: t.volume,
                })
            })
            .collect()
    }

    /// Mirrors every trade inside its session: offset `o` becomes `S - 1 - o` (in ms),
    /// which maps each half-open interval `[a, b)` onto `[S - b, S - a)`.
    pub fn reverse_within_day(&self) -> TradeSet {
        let s_ms = self.calendar.session_len_ms();
        let traders = self
            .traders
            .iter()
            .map(|tr| {
                let mut trades: Vec<SessionTrade> =
                    tr.trades.iter().map(|t| SessionTrade { offset_ms: s_ms - 1 - t.offset_ms, ..*t }).collect();
                trades.sort_by_key(|t| (t.day, t.offset_ms));
                TraderTrades { id: tr.id.clone(), trades }
            })
            .collect();
        TradeSet { calendar: self.calendar.clone(), days: self.days.clone(), traders, excluded: self.excluded }
    }

    /// The trade set restricted to a subset of traders.
    pub fn retain_traders<F: FnMut(&TraderId) -> bool>(&self, mut keep: F) -> TradeSet {
        TradeSet {
            calendar: self.calendar.clone(),
            days: self.days.clone(),
            traders: self.traders.iter().filter(|t| keep(&t.id)).cloned().collect(),
            excluded: self.excluded,
        }
    }
}
