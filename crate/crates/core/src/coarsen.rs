//! Coarsening of asynchronous trades into synchronous per-slice states.
//!
//! Each trader's flow in a slice is summarised by its net volume `v`, its
//! turnover `a` and the imbalance ratio `rho = v / a`. The state is `+1` when
//! `rho > rho0`, `-1` when `rho < -rho0`, `0` inside the closed dead zone and
//! `NA` when the trader did not trade.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DayRange, SessionCalendar, TradeSet, TraderId};

/// Discrete per-interval state of a trader or group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum State {
    /// Mostly buying, `+1`.
    Buy,
    /// Mostly selling, `-1`.
    Sell,
    /// Balanced flow, `0`.
    Neutral,
    /// No trades, `NA`.
    Inactive,
}

impl State {
    /// The three symbols that take part in co-occurrence tests.
    pub const ACTIVE: [State; 3] = [State::Buy, State::Sell, State::Neutral];

    pub fn code(self) -> &'static str {
        match self {
            State::Buy => "1",
            State::Sell => "-1",
            State::Neutral => "0",
            State::Inactive => "NA",
        }
    }

    pub fn is_active(self) -> bool {
        self != State::Inactive
    }

    /// State of the sign-flipped flow.
    pub fn flipped(self) -> State {
        match self {
            State::Buy => State::Sell,
            State::Sell => State::Buy,
            s => s,
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for State {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "+1" => Ok(State::Buy),
            "-1" => Ok(State::Sell),
            "0" => Ok(State::Neutral),
            "NA" => Ok(State::Inactive),
            other => Err(Error::input(format!("unknown state `{other}`"))),
        }
    }
}

/// Flow aggregate of one cell: net volume, turnover and trade count.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellFlow {
    pub net: f64,
    pub turnover: f64,
    pub n_trades: u32,
}

impl CellFlow {
    pub fn add(&mut self, volume: f64) {
        self.net += volume;
        self.turnover += volume.abs();
        self.n_trades += 1;
    }

    pub fn merge(&mut self, other: &CellFlow) {
        self.net += other.net;
        self.turnover += other.turnover;
        self.n_trades += other.n_trades;
    }

    /// Imbalance ratio, `None` when there was no activity.
    pub fn rho(&self) -> Option<f64> {
        (self.turnover > 0.0).then(|| self.net / self.turnover)
    }

    pub fn state(&self, rho0: f64) -> State {
        assign_state(self.rho(), rho0)
    }
}

/// Net volume, turnover and imbalance of the trades in one cell.
pub fn trader_imbalance(volumes: &[f64]) -> CellFlow {
    let mut flow = CellFlow::default();
    for &v in volumes {
        flow.add(v);
    }
    flow
}

/// Thresholds an imbalance ratio. `|rho| == rho0` maps to the neutral state.
pub fn assign_state(rho: Option<f64>, rho0: f64) -> State {
    match rho {
        None => State::Inactive,
        Some(r) if r > rho0 => State::Buy,
        Some(r) if r < -rho0 => State::Sell,
        Some(_) => State::Neutral,
    }
}

/// Regular slicing of each session day into `floor(S / dt)` slices of length `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceGrid {
    delta_t_s: u32,
    slices_per_day: u32,
    session_len_s: u32,
    days: DayRange,
}

/// Builds the slice grid for `delta_t_s` over the given days. A trailing partial
/// slice is dropped.
pub fn slice_grid(cal: &SessionCalendar, delta_t_s: u32, days: DayRange) -> Result<SliceGrid> {
    let s = cal.session_len_s();
    if delta_t_s == 0 {
        return Err(Error::config("slice length must be positive"));
    }
    if delta_t_s > s {
        return Err(Error::config(format!("slice length {delta_t_s} s exceeds the {s} s session")));
    }
    Ok(SliceGrid { delta_t_s, slices_per_day: s / delta_t_s, session_len_s: s, days })
}

impl SliceGrid {
    pub fn delta_t_s(&self) -> u32 {
        self.delta_t_s
    }

    pub fn slices_per_day(&self) -> u32 {
        self.slices_per_day
    }

    pub fn session_len_s(&self) -> u32 {
        self.session_len_s
    }

    pub fn days(&self) -> DayRange {
        self.days
    }

    /// Total number of slots in the window.
    pub fn n_slots(&self) -> usize {
        self.days.len * self.slices_per_day as usize
    }

    /// Slot id of slice `k` on absolute day `day`.
    pub fn slot(&self, day: usize, k: u32) -> usize {
        (day - self.days.start) * self.slices_per_day as usize + k as usize
    }

    /// Inverse of [`slot`](Self::slot): absolute day and slice index.
    pub fn locate_slot(&self, slot: usize) -> (usize, u32) {
        let n = self.slices_per_day as usize;
        (self.days.start + slot / n, (slot % n) as u32)
    }

    /// Slice index of a session offset, `None` in the unused tail of the day.
    pub fn slice_of(&self, offset_ms: u32) -> Option<u32> {
        let k = offset_ms / (self.delta_t_s * 1000);
        (k < self.slices_per_day).then_some(k)
    }
}

/// Trader × slot matrix of states and flows.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMatrix {
    traders: Vec<TraderId>,
    grid: SliceGrid,
    rho0: f64,
    flows: Vec<CellFlow>,
    states: Vec<State>,
}

impl StateMatrix {
    /// Builds a matrix from row-major cell flows (`traders.len() * grid.n_slots()` cells).
    pub fn from_flows(traders: Vec<TraderId>, grid: SliceGrid, rho0: f64, flows: Vec<CellFlow>) -> Result<Self> {
        if flows.len() != traders.len() * grid.n_slots() {
            return Err(Error::input(format!(
                "expected {} cells, got {}",
                traders.len() * grid.n_slots(),
                flows.len()
            )));
        }
        let states = flows.iter().map(|f| f.state(rho0)).collect();
        Ok(StateMatrix { traders, grid, rho0, flows, states })
    }

    pub fn traders(&self) -> &[TraderId] {
        &self.traders
    }

    pub fn n_traders(&self) -> usize {
        self.traders.len()
    }

    pub fn grid(&self) -> &SliceGrid {
        &self.grid
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn n_slots(&self) -> usize {
        self.grid.n_slots()
    }

    pub fn states(&self, trader: usize) -> &[State] {
        let n = self.n_slots();
        &self.states[trader * n..(trader + 1) * n]
    }

    pub fn flows(&self, trader: usize) -> &[CellFlow] {
        let n = self.n_slots();
        &self.flows[trader * n..(trader + 1) * n]
    }

    pub fn index_of(&self, id: &TraderId) -> Option<usize> {
        self.traders.iter().position(|t| t == id)
    }

    /// Number of slots where the trader is active.
    pub fn active_slots(&self, trader: usize) -> usize {
        self.states(trader).iter().filter(|s| s.is_active()).count()
    }

    /// Rows reordered by `order` (a permutation of trader indices).
    pub fn permuted(&self, order: &[usize]) -> StateMatrix {
        let n = self.n_slots();
        let mut flows = Vec::with_capacity(self.flows.len());
        let mut states = Vec::with_capacity(self.states.len());
        for &i in order {
            flows.extend_from_slice(&self.flows[i * n..(i + 1) * n]);
            states.extend_from_slice(&self.states[i * n..(i + 1) * n]);
        }
        StateMatrix {
            traders: order.iter().map(|&i| self.traders[i].clone()).collect(),
            grid: self.grid,
            rho0: self.rho0,
            flows,
            states,
        }
    }

    /// Debug export: `trader_id,day,slice,state,v,a,n_trades`, one row per cell.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trader_id", "day", "slice", "state", "v", "a", "n_trades"])?;
        for (i, id) in self.traders.iter().enumerate() {
            for (slot, (flow, state)) in self.flows(i).iter().zip(self.states(i)).enumerate() {
                let (day, k) = self.grid.locate_slot(slot);
                w.write_record([
                    id.0.as_str(),
                    &day.to_string(),
                    &k.to_string(),
                    state.code(),
                    &flow.net.to_string(),
                    &flow.turnover.to_string(),
                    &flow.n_trades.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Coarsens every trader of the trade set onto the grid.
pub fn state_matrix(ts: &TradeSet, grid: &SliceGrid, rho0: f64) -> StateMatrix {
    let n = grid.n_slots();
    let rows: Vec<Vec<CellFlow>> = ts
        .traders()
        .par_iter()
        .map(|tr| {
            let mut row = vec![CellFlow::default(); n];
            for t in tr.in_days(grid.days()) {
                if let Some(k) = grid.slice_of(t.offset_ms) {
                    row[grid.slot(t.day as usize, k)].add(t.volume);
                }
            }
            row
        })
        .collect();
    let traders = ts.traders().iter().map(|t| t.id.clone()).collect();
    StateMatrix::from_flows(traders, *grid, rho0, rows.concat()).expect("dimensions match by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{filter_session, Trade};
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn cal() -> SessionCalendar {
        SessionCalendar::default()
    }

    #[test]
    fn slices_per_day() {
        let d = DayRange::new(0, 1);
        assert_eq!(slice_grid(&cal(), 14400, d).unwrap().slices_per_day(), 2);
        assert_eq!(slice_grid(&cal(), 300, d).unwrap().slices_per_day(), 96);
        let g = slice_grid(&cal(), 11000, d).unwrap();
        assert_eq!(g.slices_per_day(), 2);
        // 22000 s into the session lies in the dropped tail.
        assert_eq!(g.slice_of(21_999_999), Some(1));
        assert_eq!(g.slice_of(22_000_000), None);
        assert!(slice_grid(&cal(), 28801, d).is_err());
        assert!(slice_grid(&cal(), 0, d).is_err());
    }

    #[test]
    fn imbalance_examples() {
        let f = trader_imbalance(&[100.0, -50.0]);
        assert_eq!((f.net, f.turnover), (50.0, 150.0));
        assert_eq!(f.rho(), Some(1.0 / 3.0));
        assert_eq!(trader_imbalance(&[-10.0]).rho(), Some(-1.0));
        assert_eq!(trader_imbalance(&[]).rho(), None);
    }

    #[test]
    fn state_thresholds() {
        assert_eq!(assign_state(Some(1.0 / 3.0), 0.01), State::Buy);
        assert_eq!(assign_state(Some(0.0), 0.01), State::Neutral);
        assert_eq!(assign_state(Some(-0.005), 0.01), State::Neutral);
        assert_eq!(assign_state(Some(0.01), 0.01), State::Neutral);
        assert_eq!(assign_state(Some(-0.01), 0.01), State::Neutral);
        assert_eq!(assign_state(Some(-0.5), 0.01), State::Sell);
        assert_eq!(assign_state(None, 0.01), State::Inactive);
    }

    fn ms(day: NaiveDate, h: u32, m: u32) -> i64 {
        day.and_hms_opt(h, m, 0).unwrap().and_utc().timestamp_millis()
    }

    #[test]
    fn hand_computed_matrix() {
        // Tuesday, Δt = 4 h gives 2 slices; second day Wednesday.
        let tue = NaiveDate::from_ymd_opt(2014, 1, 7).unwrap();
        let wed = tue.succ_opt().unwrap();
        let trades = vec![
            Trade::new("a", ms(tue, 9, 30), 100.0).unwrap(),
            Trade::new("a", ms(tue, 10, 0), -50.0).unwrap(),
            Trade::new("a", ms(tue, 14, 0), -10.0).unwrap(),
            Trade::new("a", ms(wed, 9, 0), 7.0).unwrap(),
            Trade::new("a", ms(wed, 9, 1), -7.0).unwrap(),
            Trade::new("b", ms(tue, 12, 59), 5.0).unwrap(),
            Trade::new("b", ms(wed, 16, 59), -1.0).unwrap(),
        ];
        let set = filter_session(&trades, &cal());
        let grid = slice_grid(&cal(), 14400, set.all_days()).unwrap();
        let sm = state_matrix(&set, &grid, 0.01);
        use State::*;
        // slots: (tue, 0), (tue, 1), (wed, 0), (wed, 1)
        assert_eq!(sm.states(0), &[Buy, Sell, Neutral, Inactive]);
        assert_eq!(sm.states(1), &[Buy, Inactive, Inactive, Sell]);
        assert_eq!(sm.flows(0)[0], CellFlow { net: 50.0, turnover: 150.0, n_trades: 2 });
        assert_eq!(sm.flows(0)[2].n_trades, 2);
        assert_eq!(sm.active_slots(1), 2);
    }

    #[test]
    fn single_day_trader_is_inactive_elsewhere() {
        let mon = NaiveDate::from_ymd_opt(2014, 1, 6).unwrap();
        let days: Vec<NaiveDate> = cal().next_business_days(mon, 3);
        let mut trades: Vec<Trade> = (0..8).map(|h| Trade::new("a", ms(days[0], 9 + h, 5), 1.0).unwrap()).collect();
        trades.push(Trade::new("b", ms(days[2], 9, 0), 1.0).unwrap());
        let set = filter_session(&trades, &cal());
        let grid = slice_grid(&cal(), 3600, set.all_days()).unwrap();
        let sm = state_matrix(&set, &grid, 0.01);
        assert!(sm.states(0)[..8].iter().all(|s| *s == State::Buy));
        assert!(sm.states(0)[8..].iter().all(|s| *s == State::Inactive));
    }

    proptest! {
        #[test]
        fn state_is_odd_in_flow_sign(rho in -1.0f64..=1.0, rho0 in 0.0001f64..0.5) {
            prop_assert_eq!(assign_state(Some(-rho), rho0), assign_state(Some(rho), rho0).flipped());
        }

        #[test]
        fn turnover_is_conserved(vols in prop::collection::vec((0u32..28_800_000, -500i32..500), 1..80)) {
            let tue = NaiveDate::from_ymd_opt(2014, 1, 7).unwrap();
            let start = cal().day_start_ms(tue);
            let trades: Vec<Trade> = vols
                .iter()
                .filter(|(_, v)| *v != 0)
                .enumerate()
                .map(|(i, (o, v))| Trade::new(format!("{}", i % 4), start + i64::from(*o), f64::from(*v)).unwrap())
                .collect();
            let set = filter_session(&trades, &cal());
            let grid = slice_grid(&cal(), 300, set.all_days()).unwrap();
            let sm = state_matrix(&set, &grid, 0.01);
            let total: f64 = (0..sm.n_traders()).flat_map(|i| sm.flows(i).iter().map(|f| f.turnover)).sum();
            let expected: f64 = trades.iter().map(|t| t.volume.abs()).sum();
            prop_assert_eq!(total, expected);
            for i in 0..sm.n_traders() {
                for f in sm.flows(i) {
                    prop_assert_eq!(f.turnover == 0.0, f.state(0.01) == State::Inactive);
                    prop_assert!(f.net.abs() <= f.turnover);
                }
            }
        }

        #[test]
        fn small_thresholds_agree_off_zero(vols in prop::collection::vec(-20i32..20, 1..10)) {
            // rho = v / a with integer volumes of magnitude < 20 and at most 10 trades is
            // either 0 or at least 1/200 in magnitude.
            let v: Vec<f64> = vols.iter().filter(|x| **x != 0).map(|x| f64::from(*x)).collect();
            let f = trader_imbalance(&v);
            if let Some(r) = f.rho() {
                if r != 0.0 {
                    prop_assert_eq!(assign_state(Some(r), 0.001), assign_state(Some(r), 0.004));
                }
            }
        }
    }
}
