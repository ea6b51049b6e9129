//! Statistical validation of state co-occurrences.
//!
//! Two state series are compared slot by slot. Under the null of random
//! co-occurrence given the margins, the number of slots where series A is in
//! state P and series B in state Q is hypergeometric; the over-expression
//! p-value is its upper tail. Tests are pooled and filtered with the
//! Benjamini–Hochberg procedure.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::coarsen::{State, StateMatrix};
use crate::error::{Error, Result};
use crate::ingest::TraderId;

/// An ordered pair of states `(P, Q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StatePair(pub State, pub State);

impl StatePair {
    /// The synchronous pairs used for grouping: `(+1,+1)`, `(-1,-1)`, `(0,0)`.
    pub const GROUPING: [StatePair; 3] = [
        StatePair(State::Buy, State::Buy),
        StatePair(State::Sell, State::Sell),
        StatePair(State::Neutral, State::Neutral),
    ];

    /// All nine pairs of active states.
    pub fn all_active() -> [StatePair; 9] {
        let mut out = [StatePair(State::Buy, State::Buy); 9];
        for (i, a) in State::ACTIVE.into_iter().enumerate() {
            for (j, b) in State::ACTIVE.into_iter().enumerate() {
                out[3 * i + j] = StatePair(a, b);
            }
        }
        out
    }

    pub fn swapped(self) -> StatePair {
        StatePair(self.1, self.0)
    }
}

/// Margins and co-occurrence count of one test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CoCounts {
    /// Number of observation slots `T`.
    pub slots: u32,
    /// Slots where series A is in state P.
    pub n_p: u32,
    /// Slots where series B is in state Q.
    pub n_q: u32,
    /// Slots where both hold.
    pub n_pq: u32,
}

impl CoCounts {
    pub fn validate(&self) -> Result<()> {
        if self.n_p > self.slots || self.n_q > self.slots {
            return Err(Error::input(format!("margins {self:?} exceed the slot count")));
        }
        if self.n_pq > self.n_p.min(self.n_q) {
            return Err(Error::input(format!("co-occurrences {self:?} exceed a margin")));
        }
        if self.n_p + self.n_q > self.slots + self.n_pq {
            return Err(Error::input(format!("counts {self:?} are not realisable")));
        }
        Ok(())
    }
}

/// Counts co-occurrences of `pair` between two aligned series. Inactive slots
/// count towards `T` and match no state.
pub fn cooccurrence_counts(a: &[State], b: &[State], pair: StatePair) -> Result<CoCounts> {
    if a.len() != b.len() {
        return Err(Error::input(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    let StatePair(p, q) = pair;
    let mut c = CoCounts { slots: a.len() as u32, n_p: 0, n_q: 0, n_pq: 0 };
    for (&x, &y) in a.iter().zip(b) {
        let (ip, iq) = (x == p && p.is_active(), y == q && q.is_active());
        c.n_p += ip as u32;
        c.n_q += iq as u32;
        c.n_pq += (ip && iq) as u32;
    }
    Ok(c)
}

/// Table of `ln(k!)` for `k = 0..=n`.
#[derive(Debug, Clone)]
pub struct LnFactorials(Vec<f64>);

impl LnFactorials {
    pub fn new(n: usize) -> Self {
        let mut v = Vec::with_capacity(n + 1);
        v.push(0.0);
        v.push(0.0);
        for k in 2..=n {
            v.push(ln_gamma(k as f64 + 1.0));
        }
        v.truncate(n + 1);
        LnFactorials(v)
    }

    pub fn max_n(&self) -> usize {
        self.0.len() - 1
    }

    #[inline]
    fn ln_choose(&self, n: u32, k: u32) -> f64 {
        self.0[n as usize] - self.0[k as usize] - self.0[(n - k) as usize]
    }

    /// Natural log of the upper hypergeometric tail `P(X >= n_pq)`.
    pub fn ln_upper_tail(&self, c: CoCounts) -> f64 {
        assert!(c.slots as usize <= self.max_n(), "factorial table too small");
        // The tail is symmetric in the two margins; canonical order keeps it bit-identical.
        let (small, large) = (c.n_p.min(c.n_q), c.n_p.max(c.n_q));
        let t = c.slots;
        let floor = (small + large).saturating_sub(t);
        if c.n_pq <= floor {
            return 0.0;
        }
        let ln_den = self.ln_choose(t, large);
        let ln_term = |x: u32| self.ln_choose(small, x) + self.ln_choose(t - small, large - x) - ln_den;

        let mode = (((small as u64 + 1) * (large as u64 + 1)) / (t as u64 + 2)) as u32;
        let peak = mode.max(c.n_pq).min(small);
        let ln_max = ln_term(peak);
        const NEGLIGIBLE: f64 = 40.0;

        let mut sum = 1.0;
        for x in peak + 1..=small {
            let d = ln_term(x) - ln_max;
            if d < -NEGLIGIBLE {
                break;
            }
            sum += d.exp();
        }
        for x in (c.n_pq..peak).rev() {
            let d = ln_term(x) - ln_max;
            if d < -NEGLIGIBLE {
                break;
            }
            sum += d.exp();
        }
        (ln_max + sum.ln()).min(0.0)
    }

    /// Upper-tail p-value, floored at the smallest normal `f64`.
    pub fn upper_tail(&self, c: CoCounts) -> f64 {
        self.ln_upper_tail(c).exp().max(f64::MIN_POSITIVE)
    }
}

/// Exact over-expression p-value `P(X >= N_PQ)` for a hypergeometric `X` with
/// population `T`, `N_P` successes and `N_Q` draws.
pub fn hypergeom_pvalue(c: CoCounts) -> Result<f64> {
    c.validate()?;
    Ok(LnFactorials::new(c.slots as usize).upper_tail(c))
}

/// Outcome of the Benjamini–Hochberg step-up procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct BhOutcome {
    /// Largest p-value that is rejected, if any.
    pub threshold: Option<f64>,
    /// Indices of rejected tests, ascending.
    pub rejected: Vec<usize>,
}

/// Benjamini–Hochberg at level `alpha` over a family of `m` tests, of which
/// `pvalues` are the ones with p < 1 (or all of them). `m` is raised to
/// `pvalues.len()` if smaller.
pub fn bh_threshold(pvalues: &[f64], alpha: f64, m: usize) -> BhOutcome {
    let m = m.max(pvalues.len());
    let mut order: Vec<usize> = (0..pvalues.len()).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]));
    let k = order
        .iter()
        .enumerate()
        .rev()
        .find(|(rank, &i)| pvalues[i] <= (rank + 1) as f64 * alpha / m as f64)
        .map(|(rank, _)| rank + 1);
    match k {
        None => BhOutcome { threshold: None, rejected: Vec::new() },
        Some(k) => {
            let threshold = pvalues[order[k - 1]];
            let rejected = (0..pvalues.len()).filter(|&i| pvalues[i] <= threshold).collect();
            BhOutcome { threshold: Some(threshold), rejected }
        }
    }
}

/// Settings of the grouping SVN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvnConfig {
    /// FDR level `p0`.
    pub alpha: f64,
    /// Traders with fewer active slices in the window are not tested.
    pub min_active_slices: usize,
    /// Restrict each pairwise test to the slots where both traders are active.
    pub condition_on_joint_activity: bool,
}

impl Default for SvnConfig {
    fn default() -> Self {
        SvnConfig { alpha: 0.05, min_active_slices: 10, condition_on_joint_activity: false }
    }
}

/// One validated co-occurrence; `i < j` index [`Svn::traders`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvnLink {
    pub i: u32,
    pub j: u32,
    pub pair: StatePair,
    pub p_value: f64,
}

/// A statistically validated network. Several links may join the same two traders.
#[derive(Debug, Clone, PartialEq)]
pub struct Svn {
    pub window_id: usize,
    pub delta_t_s: u32,
    pub traders: Vec<TraderId>,
    pub links: Vec<SvnLink>,
    pub alpha: f64,
    /// Realised BH threshold.
    pub threshold: Option<f64>,
    /// Tests entering the BH family.
    pub n_tests: usize,
}

impl Svn {
    /// Trader indices with at least one link, ascending.
    pub fn nodes(&self) -> Vec<u32> {
        let mut n: Vec<u32> = self.links.iter().flat_map(|l| [l.i, l.j]).collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    /// Export as `window_id,trader_i,trader_j,state_i,state_j,p_value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["window_id", "trader_i", "trader_j", "state_i", "state_j", "p_value"])?;
        for l in &self.links {
            w.write_record([
                self.window_id.to_string().as_str(),
                &self.traders[l.i as usize].0,
                &self.traders[l.j as usize].0,
                l.pair.0.code(),
                l.pair.1.code(),
                &crate::io::fmt_f64(Some(l.p_value)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-trader bitsets of the slots in each active state.
struct StateBits {
    words: usize,
    /// `[buy, sell, neutral, active]` per trader, each `words` long.
    bits: Vec<u64>,
}

impl StateBits {
    fn new(sm: &StateMatrix, rows: &[usize]) -> Self {
        let words = sm.n_slots().div_ceil(64);
        let mut bits = vec![0u64; rows.len() * 4 * words];
        for (r, &i) in rows.iter().enumerate() {
            let base = r * 4 * words;
            for (slot, s) in sm.states(i).iter().enumerate() {
                let (w, b) = (slot / 64, 1u64 << (slot % 64));
                if let Some(k) = Self::plane(*s) {
                    bits[base + k * words + w] |= b;
                    bits[base + 3 * words + w] |= b;
                }
            }
        }
        StateBits { words, bits }
    }

    fn plane(s: State) -> Option<usize> {
        match s {
            State::Buy => Some(0),
            State::Sell => Some(1),
            State::Neutral => Some(2),
            State::Inactive => None,
        }
    }

    fn row(&self, r: usize, s: State) -> &[u64] {
        let k = Self::plane(s).unwrap_or(3);
        let base = (r * 4 + k) * self.words;
        &self.bits[base..base + self.words]
    }

    fn active(&self, r: usize) -> &[u64] {
        let base = (r * 4 + 3) * self.words;
        &self.bits[base..base + self.words]
    }
}

fn popcount(a: &[u64]) -> u32 {
    a.iter().map(|w| w.count_ones()).sum()
}

fn popcount_and(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x & y).count_ones()).sum()
}

fn popcount_and3(a: &[u64], b: &[u64], c: &[u64]) -> u32 {
    a.iter().zip(b).zip(c).map(|((x, y), z)| (x & y & z).count_ones()).sum()
}

/// Builds the SVN of a state matrix: every unordered pair of sufficiently active
/// traders is tested for each pair in `pairs`, and BH rejections become links.
pub fn build_svn(sm: &StateMatrix, pairs: &[StatePair], cfg: &SvnConfig) -> Result<Svn> {
    if sm.n_traders() < 2 {
        return Err(Error::input(format!("an SVN needs at least 2 traders, got {}", sm.n_traders())));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::config(format!("FDR level must lie in (0, 1), got {}", cfg.alpha)));
    }
    let eligible: Vec<usize> = (0..sm.n_traders())
        .filter(|&i| {
            let active = sm.active_slots(i);
            active > 0 && active >= cfg.min_active_slices
        })
        .collect();
    let bits = StateBits::new(sm, &eligible);
    let lnf = LnFactorials::new(sm.n_slots());
    let t_all = sm.n_slots() as u32;

    // (row a, row b, pair index, p-value) for every performed test.
    let tests: Vec<(u32, u32, u8, f64)> = (0..eligible.len())
        .into_par_iter()
        .flat_map_iter(|ra| {
            let bits = &bits;
            let lnf = &lnf;
            (ra + 1..eligible.len()).flat_map(move |rb| {
                pairs.iter().enumerate().filter_map(move |(k, pair)| {
                    let (pa, qb) = (bits.row(ra, pair.0), bits.row(rb, pair.1));
                    let c = if cfg.condition_on_joint_activity {
                        let (act_a, act_b) = (bits.active(ra), bits.active(rb));
                        CoCounts {
                            slots: popcount_and(act_a, act_b),
                            n_p: popcount_and(pa, act_b),
                            n_q: popcount_and(qb, act_a),
                            n_pq: popcount_and3(pa, qb, act_a),
                        }
                    } else {
                        CoCounts { slots: t_all, n_p: popcount(pa), n_q: popcount(qb), n_pq: popcount_and(pa, qb) }
                    };
                    (c.n_p > 0 && c.n_q > 0).then(|| (ra as u32, rb as u32, k as u8, lnf.upper_tail(c)))
                })
            })
        })
        .collect();

    let pvalues: Vec<f64> = tests.iter().map(|t| t.3).collect();
    let bh = bh_threshold(&pvalues, cfg.alpha, tests.len());
    let links = bh
        .rejected
        .iter()
        .map(|&n| {
            let (ra, rb, k, p) = tests[n];
            SvnLink {
                i: eligible[ra as usize] as u32,
                j: eligible[rb as usize] as u32,
                pair: pairs[k as usize],
                p_value: p,
            }
        })
        .collect();

    Ok(Svn {
        window_id: 0,
        delta_t_s: sm.grid().delta_t_s(),
        traders: sm.traders().to_vec(),
        links,
        alpha: cfg.alpha,
        threshold: bh.threshold,
        n_tests: tests.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coarsen::{slice_grid, CellFlow, State::*};
    use crate::ingest::{DayRange, SessionCalendar};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct tail sum of the pmf with exact rational binomials (small T only).
    fn exact_tail(c: CoCounts) -> f64 {
        fn choose(n: u32, k: u32) -> f64 {
            if k > n {
                return 0.0;
            }
            (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
        }
        let hi = c.n_p.min(c.n_q);
        (c.n_pq..=hi)
            .map(|x| {
                if c.n_q < x || c.slots - c.n_p < c.n_q - x {
                    0.0
                } else {
                    choose(c.n_p, x) * choose(c.slots - c.n_p, c.n_q - x)
                }
            })
            .sum::<f64>()
            / choose(c.slots, c.n_q)
    }

    #[test]
    fn counts_examples() {
        let a = [Buy, Buy, Neutral, Inactive];
        let b = [Buy, Neutral, Neutral, Buy];
        let c = cooccurrence_counts(&a, &b, StatePair(Buy, Buy)).unwrap();
        assert_eq!(c, CoCounts { slots: 4, n_p: 2, n_q: 2, n_pq: 1 });
        let full = [Buy; 5];
        assert_eq!(
            cooccurrence_counts(&full, &full, StatePair(Buy, Buy)).unwrap(),
            CoCounts { slots: 5, n_p: 5, n_q: 5, n_pq: 5 }
        );
        let c = cooccurrence_counts(&[Buy, Inactive], &[Inactive, Buy], StatePair(Buy, Buy)).unwrap();
        assert_eq!(c.n_pq, 0);
        assert!(cooccurrence_counts(&[Buy], &[Buy, Buy], StatePair(Buy, Buy)).is_err());
    }

    #[test]
    fn pvalue_hand_values() {
        let p = hypergeom_pvalue(CoCounts { slots: 10, n_p: 5, n_q: 5, n_pq: 5 }).unwrap();
        assert!((p - 1.0 / 252.0).abs() < 1e-15, "{p}");
        let p = hypergeom_pvalue(CoCounts { slots: 4, n_p: 2, n_q: 2, n_pq: 2 }).unwrap();
        assert!((p - 1.0 / 6.0).abs() < 1e-15, "{p}");
        for (n_p, n_q) in [(3u32, 7u32), (0, 4), (10, 10), (6, 8)] {
            let n_pq = (n_p + n_q).saturating_sub(10);
            assert_eq!(hypergeom_pvalue(CoCounts { slots: 10, n_p, n_q, n_pq }).unwrap(), 1.0);
        }
        assert!(hypergeom_pvalue(CoCounts { slots: 4, n_p: 5, n_q: 1, n_pq: 0 }).is_err());
        assert!(hypergeom_pvalue(CoCounts { slots: 4, n_p: 2, n_q: 1, n_pq: 2 }).is_err());
        assert!(hypergeom_pvalue(CoCounts { slots: 4, n_p: 3, n_q: 3, n_pq: 1 }).is_err());
    }

    #[test]
    fn pvalue_extreme_is_positive() {
        let c = CoCounts { slots: 20000, n_p: 10000, n_q: 10000, n_pq: 10000 };
        let p = hypergeom_pvalue(c).unwrap();
        assert!(p > 0.0 && p <= f64::MIN_POSITIVE);
    }

    #[test]
    fn pvalue_matches_exact_sum_on_grid() {
        for t in 1..=30u32 {
            for n_p in 0..=t {
                for n_q in 0..=t {
                    for n_pq in (n_p + n_q).saturating_sub(t)..=n_p.min(n_q) {
                        let c = CoCounts { slots: t, n_p, n_q, n_pq };
                        let got = hypergeom_pvalue(c).unwrap();
                        let want = exact_tail(c).min(1.0);
                        assert!((got - want).abs() <= 1e-12 * want.max(1e-300) + 1e-15, "{c:?}: {got} vs {want}");
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn pvalue_symmetry_and_monotonicity(t in 1u32..400, a in 0.0f64..1.0, b in 0.0f64..1.0, x in 0.0f64..1.0) {
            let n_p = (a * t as f64) as u32;
            let n_q = (b * t as f64) as u32;
            let lo = (n_p + n_q).saturating_sub(t);
            let hi = n_p.min(n_q);
            let n_pq = lo + ((hi - lo) as f64 * x) as u32;
            let c = CoCounts { slots: t, n_p, n_q, n_pq };
            let p = hypergeom_pvalue(c).unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
            let swapped = hypergeom_pvalue(CoCounts { n_p: n_q, n_q: n_p, ..c }).unwrap();
            prop_assert_eq!(p, swapped);
            // complementing both margins and the joint count consistently
            let comp = CoCounts { slots: t, n_p: t - n_p, n_q: t - n_q, n_pq: t + n_pq - n_p - n_q };
            let pc = hypergeom_pvalue(comp).unwrap();
            prop_assert!((p - pc).abs() <= 1e-9 * p.max(pc), "{} vs {}", p, pc);
            if n_pq < hi {
                let next = hypergeom_pvalue(CoCounts { n_pq: n_pq + 1, ..c }).unwrap();
                prop_assert!(next <= p);
            }
        }

        #[test]
        fn bh_is_monotone(ps in prop::collection::vec(0.0f64..1.0, 1..40), idx in 0usize..40, f in 0.0f64..1.0) {
            let before = bh_threshold(&ps, 0.05, ps.len());
            let mut lowered = ps.clone();
            let i = idx % ps.len();
            lowered[i] *= f;
            let after = bh_threshold(&lowered, 0.05, ps.len());
            for r in &before.rejected {
                prop_assert!(after.rejected.contains(r));
            }
        }
    }

    #[test]
    fn bh_examples() {
        let out = bh_threshold(&[0.001, 0.01, 0.02, 0.8], 0.05, 4);
        assert_eq!(out.rejected, vec![0, 1, 2]);
        assert_eq!(out.threshold, Some(0.02));
        assert!(bh_threshold(&[1.0, 1.0, 1.0], 0.05, 3).rejected.is_empty());
        assert_eq!(bh_threshold(&[0.04], 0.05, 1).rejected, vec![0]);
        // step-up: a larger p can rescue smaller ones
        assert_eq!(bh_threshold(&[0.03, 0.04], 0.05, 2).rejected, vec![0, 1]);
        // m larger than the list makes it stricter
        assert!(bh_threshold(&[0.04], 0.05, 2).rejected.is_empty());
    }

    fn matrix_from_states(rows: &[Vec<State>]) -> StateMatrix {
        let n = rows[0].len();
        let cal = SessionCalendar::default();
        let grid = slice_grid(&cal, 28800, DayRange::new(0, n)).unwrap();
        let flows = rows
            .iter()
            .flat_map(|r| {
                r.iter().map(|s| match s {
                    Buy => CellFlow { net: 1.0, turnover: 1.0, n_trades: 1 },
                    Sell => CellFlow { net: -1.0, turnover: 1.0, n_trades: 1 },
                    Neutral => CellFlow { net: 0.0, turnover: 2.0, n_trades: 2 },
                    Inactive => CellFlow::default(),
                })
            })
            .collect();
        let ids = (0..rows.len()).map(|i| TraderId(format!("t{i:02}"))).collect();
        StateMatrix::from_flows(ids, grid, 0.01, flows).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<State>> {
        (0..n)
            .map(|_| (0..len).map(|_| [Buy, Sell, Neutral, Inactive, Inactive][rng.random_range(0..5)]).collect())
            .collect()
    }

    #[test]
    fn clones_are_linked_among_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rows = random_rows(&mut rng, 50, 200);
        let clone: Vec<State> = (0..200).map(|_| if rng.random_bool(0.5) { Buy } else { Sell }).collect();
        rows[7] = clone.clone();
        rows[31] = clone;
        let sm = matrix_from_states(&rows);
        let svn = build_svn(&sm, &StatePair::GROUPING, &SvnConfig::default()).unwrap();
        let between: Vec<_> = svn.links.iter().filter(|l| (l.i, l.j) == (7, 31)).map(|l| l.pair).collect();
        assert!(between.contains(&StatePair(Buy, Buy)));
        assert!(between.contains(&StatePair(Sell, Sell)));
        assert!(svn.links.iter().all(|l| l.p_value <= svn.threshold.unwrap()));
        assert_eq!(svn.nodes().len(), 2 + svn.nodes().iter().filter(|&&n| n != 7 && n != 31).count());
    }

    #[test]
    fn single_trader_is_an_error() {
        let sm = matrix_from_states(&[vec![Buy; 5]]);
        assert!(build_svn(&sm, &StatePair::GROUPING, &SvnConfig::default()).is_err());
    }

    #[test]
    fn inactive_traders_are_not_tested() {
        let mut rows = vec![[Buy, Sell].repeat(10), [Buy, Sell].repeat(10), vec![Inactive; 20]];
        rows[2][0] = Buy;
        let sm = matrix_from_states(&rows);
        let svn = build_svn(&sm, &StatePair::GROUPING, &SvnConfig::default()).unwrap();
        // three state pairs, but only (+1,+1) and (-1,-1) have non-empty margins
        assert_eq!(svn.n_tests, 2);
        assert_eq!(svn.links.len(), 2);
    }

    #[test]
    fn joint_activity_conditioning_shrinks_slots() {
        let a = vec![Buy, Buy, Sell, Sell, Inactive, Inactive, Buy, Sell, Buy, Sell, Buy, Sell];
        let b = vec![Buy, Buy, Sell, Sell, Buy, Sell, Inactive, Inactive, Buy, Sell, Buy, Sell];
        let sm = matrix_from_states(&[a, b]);
        let cfg = SvnConfig { min_active_slices: 1, ..Default::default() };
        let plain = build_svn(&sm, &[StatePair(Buy, Buy)], &cfg).unwrap();
        let joint =
            build_svn(&sm, &[StatePair(Buy, Buy)], &SvnConfig { condition_on_joint_activity: true, ..cfg }).unwrap();
        let bits = StateBits::new(&sm, &[0, 1]);
        assert_eq!(popcount_and(bits.active(0), bits.active(1)), 8);
        let lnf = LnFactorials::new(12);
        let p_plain = lnf.upper_tail(CoCounts { slots: 12, n_p: 5, n_q: 5, n_pq: 4 });
        let p_joint = lnf.upper_tail(CoCounts { slots: 8, n_p: 4, n_q: 4, n_pq: 4 });
        assert_eq!(plain.n_tests, 1);
        assert_eq!(joint.n_tests, 1);
        assert_eq!(plain.links.first().map(|l| l.p_value).unwrap_or(p_plain), p_plain);
        assert_eq!(joint.links.first().map(|l| l.p_value).unwrap_or(p_joint), p_joint);
    }

    #[test]
    fn svn_is_independent_of_trader_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = random_rows(&mut rng, 12, 120);
        for k in [3, 6, 9] {
            rows[k] = rows[0].clone();
        }
        let sm = matrix_from_states(&rows);
        let order: Vec<usize> = (0..12).rev().collect();
        let perm = sm.permuted(&order);
        let key = |svn: &Svn| {
            let mut v: Vec<(String, String, StatePair, u64)> = svn
                .links
                .iter()
                .map(|l| {
                    let (a, b) = (&svn.traders[l.i as usize].0, &svn.traders[l.j as usize].0);
                    let (a, b, pair) = if a < b { (a, b, l.pair) } else { (b, a, l.pair.swapped()) };
                    (a.clone(), b.clone(), pair, l.p_value.to_bits())
                })
                .collect();
            v.sort();
            v
        };
        let cfg = SvnConfig::default();
        let a = build_svn(&sm, &StatePair::GROUPING, &cfg).unwrap();
        let b = build_svn(&perm, &StatePair::GROUPING, &cfg).unwrap();
        assert!(!a.links.is_empty());
        assert_eq!(key(&a), key(&b));
    }
}
