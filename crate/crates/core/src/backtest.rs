//! Event-driven replay of a two-sided market-making strategy.
//!
//! At each snapshot the strategy quotes a sell and a buy around the
//! predicted mid, the quotes are matched against the next snapshot and the
//! trade prints in between, and equity is marked to the next mid. Unfilled
//! quotes are cancelled at the step boundary.

use std::{
    collections::VecDeque,
    fmt::Write as _,
    fs,
    path::{Path, PathBuf},
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{
    embedding::{embed_snapshot, EmbedError, FrameMatrix},
    lob::{LobSnapshot, Side, SnapshotSeries, TradeEvent},
    metrics::{self, LogGrowthFit},
    models::{Model, ModelError},
    nn::Tensor,
    sampling::{Aggregation, Anchor, SampleSpec},
    PRICE_EPS,
};

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("series too short for a backtest: {0} snapshots")]
    SeriesTooShort(usize),
    #[error("invalid strategy config: {0}")]
    InvalidConfig(String),
    #[error("unsupported predictor setup: {0}")]
    Unsupported(String),
    #[error("position cap violated at {ts_ms}: inventory notional {notional} > {bound}")]
    CapViolated { ts_ms: i64, notional: f64, bound: f64 },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyConfig {
    /// Distance between the two quotes, centered on the predicted mid.
    pub quote_spread: f64,
    /// Per-side order notional and inventory cap, in quote currency.
    pub max_side_notional: f64,
    /// Negative values are rebates.
    pub maker_fee_rate: f64,
    pub taker_fee_rate: f64,
    pub initial_capital: f64,
    /// Allow passive fills against trade prints.
    pub use_trade_tape: bool,
    /// Execute crossing quotes at the touch instead of the limit price.
    pub taker_at_touch: bool,
    /// Use the inverted crossing test as literally worded in the source
    /// description (sell crosses when above the bid), for comparison only.
    pub paper_literal_fill_rule: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            quote_spread: 0.1,
            max_side_notional: 5.0,
            maker_fee_rate: -0.0001,
            taker_fee_rate: 0.0005,
            initial_capital: 100.0,
            use_trade_tape: true,
            taker_at_touch: false,
            paper_literal_fill_rule: false,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: &str| Err(BacktestError::InvalidConfig(m.into()));
        if !(self.quote_spread > 0.0) {
            return bad("quote spread must be positive");
        }
        if !(self.max_side_notional > 0.0) {
            return bad("max side notional must be positive");
        }
        if !self.maker_fee_rate.is_finite() || !self.taker_fee_rate.is_finite() {
            return bad("fee rates must be finite");
        }
        if !self.initial_capital.is_finite() {
            return bad("initial capital must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub side: Side,
    pub price: f64,
    pub qty: f64,
}

impl Order {
    pub fn notional(&self) -> f64 {
        self.price * self.qty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Maker,
    Taker,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fill {
    pub side: Side,
    pub price: f64,
    pub qty: f64,
    pub role: Role,
    /// Signed fee in quote currency; negative is a rebate.
    pub fee: f64,
}

impl Fill {
    pub fn notional(&self) -> f64 {
        self.price * self.qty
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BookkeepingState {
    pub cash: f64,
    pub inventory: f64,
}

impl BookkeepingState {
    pub fn new(initial_capital: f64) -> Self {
        BookkeepingState { cash: initial_capital, inventory: 0.0 }
    }

    pub fn equity(&self, mid: f64) -> f64 {
        self.cash + self.inventory * mid
    }

    pub fn apply(&mut self, f: &Fill) {
        match f.side {
            Side::Buy => {
                self.cash -= f.price * f.qty + f.fee;
                self.inventory += f.qty;
            }
            Side::Sell => {
                self.cash += f.price * f.qty - f.fee;
                self.inventory -= f.qty;
            }
        }
    }
}

/// Sell at `pred + spread/2` and buy at `pred − spread/2`, each sized to
/// `max_side_notional / price` but clipped so a full fill keeps that side's
/// position (marked at `mid`) within the cap. A side with no capacity left
/// is not quoted.
pub fn quote(pred_mid: f64, cfg: &StrategyConfig, state: &BookkeepingState, mid: f64) -> Vec<Order> {
    let half = cfg.quote_spread / 2.0;
    let cap = cfg.max_side_notional;
    let mut out = Vec::with_capacity(2);
    let sides = [
        (Side::Sell, pred_mid + half, cap + state.inventory * mid),
        (Side::Buy, pred_mid - half, cap - state.inventory * mid),
    ];
    for (side, price, room) in sides {
        let notional = cap.min(room);
        if price > 0.0 && notional > PRICE_EPS {
            out.push(Order { side, price, qty: notional / price });
        }
    }
    out
}

/// Whether `o` executes immediately against `next`.
fn crosses(o: &Order, next: &LobSnapshot, cfg: &StrategyConfig) -> bool {
    match (o.side, cfg.paper_literal_fill_rule) {
        (Side::Sell, false) => o.price <= next.best_bid(),
        (Side::Buy, false) => o.price >= next.best_ask(),
        (Side::Sell, true) => o.price > next.best_bid(),
        (Side::Buy, true) => o.price < next.best_ask(),
    }
}

/// Full-quantity fills: taker when crossing the next book, otherwise maker
/// when a print in the step window traded through the quote.
pub fn match_orders(
    orders: &[Order],
    next: &LobSnapshot,
    trades: &[TradeEvent],
    cfg: &StrategyConfig,
) -> Vec<Fill> {
    let mut fills = Vec::new();
    for o in orders {
        if crosses(o, next, cfg) {
            let price = if cfg.taker_at_touch {
                match o.side {
                    Side::Sell => next.best_bid(),
                    Side::Buy => next.best_ask(),
                }
            } else {
                o.price
            };
            fills.push(Fill {
                side: o.side,
                price,
                qty: o.qty,
                role: Role::Taker,
                fee: price * o.qty * cfg.taker_fee_rate,
            });
            continue;
        }
        if !cfg.use_trade_tape {
            continue;
        }
        let hit = trades.iter().any(|t| match o.side {
            Side::Sell => t.price >= o.price,
            Side::Buy => t.price <= o.price,
        });
        if hit {
            fills.push(Fill {
                side: o.side,
                price: o.price,
                qty: o.qty,
                role: Role::Maker,
                fee: o.notional() * cfg.maker_fee_rate,
            });
        }
    }
    fills
}

/// Applies fills and returns the equity change from `mid_prev` to
/// `mid_next`: realized cash flow plus mark-to-market.
pub fn step_pnl(state: &mut BookkeepingState, fills: &[Fill], mid_prev: f64, mid_next: f64) -> f64 {
    let before = state.equity(mid_prev);
    for f in fills {
        state.apply(f);
    }
    state.equity(mid_next) - before
}

/// Forecast source. Receives only the snapshots up to and including the
/// current one.
pub trait MidPredictor {
    fn predict_mid(&mut self, history: &[LobSnapshot]) -> Result<Option<f64>, BacktestError>;
}

impl<F> MidPredictor for F
where
    F: FnMut(&[LobSnapshot]) -> Option<f64>,
{
    fn predict_mid(&mut self, history: &[LobSnapshot]) -> Result<Option<f64>, BacktestError> {
        Ok(self(history))
    }
}

/// No-change forecast.
#[derive(Debug, Clone, Copy, Default)]
pub struct PersistencePredictor;

impl MidPredictor for PersistencePredictor {
    fn predict_mid(&mut self, history: &[LobSnapshot]) -> Result<Option<f64>, BacktestError> {
        Ok(history.last().map(LobSnapshot::mid_price))
    }
}

/// Runs a trained model over a sliding window of the last L snapshots.
pub struct ModelPredictor<'a> {
    model: &'a Model,
    spec: SampleSpec,
    frames: VecDeque<FrameMatrix>,
    seen: usize,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(model: &'a Model) -> Result<Self, BacktestError> {
        let spec = model
            .spec
            .ok_or_else(|| BacktestError::Unsupported("model has not been trained".into()))?;
        if spec.aggregation != Aggregation::Window {
            return Err(BacktestError::Unsupported(
                "backtests replay sliding windows; interval models are not supported".into(),
            ));
        }
        if model.arch.assets != 1 {
            return Err(BacktestError::Unsupported("one-shot pair models need two tapes".into()));
        }
        Ok(ModelPredictor { model, spec, frames: VecDeque::new(), seen: 0 })
    }
}

impl MidPredictor for ModelPredictor<'_> {
    fn predict_mid(&mut self, history: &[LobSnapshot]) -> Result<Option<f64>, BacktestError> {
        let l = self.spec.frame_count;
        let start = self.seen.max(history.len().saturating_sub(l));
        for s in &history[start..] {
            self.frames.push_back(embed_snapshot(s, &self.spec.embed)?);
            if self.frames.len() > l {
                self.frames.pop_front();
            }
        }
        self.seen = history.len();
        if self.frames.len() < l {
            return Ok(None);
        }
        let first = &self.frames[0];
        let (d, c) = (first.rows, first.cols);
        let data: Vec<f64> =
            self.frames.iter().flat_map(|f| f.data.iter().map(|&x| x as f32 as f64)).collect();
        let stacked = Tensor::new(vec![l, d, c], data).map_err(ModelError::from)?;
        let anchor = match self.spec.anchor {
            Anchor::Last => self.frames[l - 1].anchor_mid,
            Anchor::First => first.anchor_mid,
        };
        Ok(Some(self.model.predict_stacked(&stacked, &[anchor])?[0]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlStep {
    pub ts_ms: i64,
    pub pnl: f64,
    pub equity: f64,
    pub inventory: f64,
    pub mid: f64,
    pub fills: Vec<Fill>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PnlSeries {
    pub config: StrategyConfig,
    pub initial_equity: f64,
    pub start_ms: i64,
    pub steps: Vec<PnlStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub steps: usize,
    pub maker_fills: usize,
    pub taker_fills: usize,
    pub fees: f64,
    pub initial_equity: f64,
    pub final_equity: f64,
    pub total_pnl: f64,
    pub sharpe: Option<f64>,
    pub max_drawdown: f64,
    pub log_growth: Option<LogGrowthFit>,
}

impl PnlSeries {
    pub fn pnl(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.pnl).collect()
    }

    /// Equity curve including the initial point.
    pub fn equity(&self) -> Vec<f64> {
        std::iter::once(self.initial_equity).chain(self.steps.iter().map(|s| s.equity)).collect()
    }

    pub fn fills(&self) -> impl Iterator<Item = &Fill> {
        self.steps.iter().flat_map(|s| &s.fills)
    }

    pub fn summary(&self) -> BacktestSummary {
        let pnl = self.pnl();
        let count = |r: Role| self.fills().filter(|f| f.role == r).count();
        BacktestSummary {
            steps: self.steps.len(),
            maker_fills: count(Role::Maker),
            taker_fills: count(Role::Taker),
            fees: self.fills().map(|f| f.fee).sum(),
            initial_equity: self.initial_equity,
            final_equity: self.steps.last().map_or(self.initial_equity, |s| s.equity),
            total_pnl: metrics::total_pnl(&pnl),
            sharpe: metrics::sharpe(&pnl).ok(),
            max_drawdown: if pnl.is_empty() { 0.0 } else { metrics::max_drawdown(&pnl) },
            log_growth: metrics::fit_log_growth(&self.equity()).ok(),
        }
    }

    /// One row per step; multiple fills in a step are `;`-joined.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("ts_ms,pnl,cum_pnl,equity,inventory,fill_side,fill_price,fill_qty,fill_role,fee\n");
        let mut cum = 0.0;
        for s in &self.steps {
            cum += s.pnl;
            let join = |f: &dyn Fn(&Fill) -> String| {
                s.fills.iter().map(f).collect::<Vec<_>>().join(";")
            };
            let side = join(&|f| match f.side {
                Side::Buy => "buy".into(),
                Side::Sell => "sell".into(),
            });
            let role = join(&|f| match f.role {
                Role::Maker => "maker".into(),
                Role::Taker => "taker".into(),
            });
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                s.ts_ms,
                s.pnl,
                cum,
                s.equity,
                s.inventory,
                side,
                join(&|f| f.price.to_string()),
                join(&|f| f.qty.to_string()),
                role,
                join(&|f| f.fee.to_string()),
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), BacktestError> {
        fs::write(path, self.to_csv()).map_err(|source| BacktestError::Io { path: path.to_owned(), source })
    }
}

/// Replays `series` with quotes from `predictor`. `trades` must be sorted
/// by timestamp; prints in `(t_i, t_{i+1}]` can fill step `i`'s quotes.
pub fn run_backtest(
    series: &SnapshotSeries,
    trades: &[TradeEvent],
    predictor: &mut dyn MidPredictor,
    cfg: &StrategyConfig,
) -> Result<PnlSeries, BacktestError> {
    cfg.validate()?;
    let snaps = &series.snapshots;
    if snaps.len() < 2 {
        return Err(BacktestError::SeriesTooShort(snaps.len()));
    }
    if trades.windows(2).any(|w| w[1].ts_ms < w[0].ts_ms) {
        return Err(BacktestError::InvalidConfig("trade prints are not time-ordered".into()));
    }
    let mut state = BookkeepingState::new(cfg.initial_capital);
    let mut steps = Vec::with_capacity(snaps.len() - 1);
    let mut equity_prev = state.equity(snaps[0].mid_price());
    for i in 0..snaps.len() - 1 {
        let (cur, next) = (&snaps[i], &snaps[i + 1]);
        let mid = cur.mid_price();
        let orders = match predictor.predict_mid(&snaps[..=i])? {
            Some(p) if p.is_finite() && p > 0.0 => quote(p, cfg, &state, mid),
            _ => Vec::new(),
        };
        let lo = trades.partition_point(|t| t.ts_ms <= cur.ts_ms);
        let hi = trades.partition_point(|t| t.ts_ms <= next.ts_ms);
        let fills = match_orders(&orders, next, &trades[lo..hi], cfg);
        for f in &fills {
            state.apply(f);
        }
        let bound = cfg.max_side_notional * (1.0 + mid / (mid - cfg.quote_spread / 2.0).max(PRICE_EPS));
        let notional = (state.inventory * mid).abs();
        if notional > bound + PRICE_EPS {
            return Err(BacktestError::CapViolated { ts_ms: next.ts_ms, notional, bound });
        }
        let mid_next = next.mid_price();
        let equity = state.equity(mid_next);
        steps.push(PnlStep {
            ts_ms: next.ts_ms,
            pnl: equity - equity_prev,
            equity,
            inventory: state.inventory,
            mid: mid_next,
            fills,
        });
        equity_prev = equity;
    }
    Ok(PnlSeries { config: *cfg, initial_equity: cfg.initial_capital, start_ms: snaps[0].ts_ms, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::Level;

    fn book(ts: i64, bid: f64, ask: f64) -> LobSnapshot {
        LobSnapshot::new(
            ts,
            "T",
            vec![Level { price: ask, qty: 1.0 }, Level { price: ask + 0.01, qty: 1.0 }],
            vec![Level { price: bid, qty: 1.0 }, Level { price: bid - 0.01, qty: 1.0 }],
        )
        .unwrap()
    }

    fn print(ts: i64, price: f64) -> TradeEvent {
        TradeEvent { ts_ms: ts, symbol: "T".into(), price, qty: 1.0, side: Side::Buy }
    }

    #[test]
    fn quote_example() {
        let cfg = StrategyConfig::default();
        let q = quote(100.0, &cfg, &BookkeepingState::new(100.0), 100.0);
        assert_eq!(q.len(), 2);
        assert_eq!((q[0].side, q[0].price), (Side::Sell, 100.05));
        assert_eq!(q[0].qty, 5.0 / 100.05);
        assert_eq!((q[1].side, q[1].price), (Side::Buy, 99.95));
        assert_eq!(q[1].qty, 5.0 / 99.95);
        let long = BookkeepingState { cash: 95.0, inventory: 0.05 };
        let q = quote(100.0, &cfg, &long, 100.0);
        assert_eq!(q.iter().map(|o| o.side).collect::<Vec<_>>(), vec![Side::Sell]);
        let half_long = BookkeepingState { cash: 97.5, inventory: 0.025 };
        let q = quote(100.0, &cfg, &half_long, 100.0);
        assert_eq!(q[1].qty, 2.5 / 99.95);
    }

    #[test]
    fn taker_and_maker_fills() {
        let cfg = StrategyConfig::default();
        let sell = Order { side: Side::Sell, price: 100.05, qty: 5.0 / 100.05 };
        let f = match_orders(&[sell], &book(1, 100.10, 100.12), &[], &cfg);
        assert_eq!(f.len(), 1);
        assert_eq!((f[0].role, f[0].price), (Role::Taker, 100.05));
        assert!((f[0].fee - 5.0 * 0.0005).abs() < 1e-15);

        let f = match_orders(&[sell], &book(1, 100.00, 100.02), &[print(1, 100.07)], &cfg);
        assert_eq!(f[0].role, Role::Maker);
        assert!((f[0].fee + 5.0 * 0.0001).abs() < 1e-15);

        let f = match_orders(&[sell], &book(1, 100.00, 100.02), &[print(1, 100.01)], &cfg);
        assert!(f.is_empty());
        let no_tape = StrategyConfig { use_trade_tape: false, ..cfg };
        assert!(match_orders(&[sell], &book(1, 100.00, 100.02), &[print(1, 100.07)], &no_tape).is_empty());

        let literal = StrategyConfig { paper_literal_fill_rule: true, ..cfg };
        let f = match_orders(&[sell], &book(1, 100.00, 100.02), &[], &literal);
        assert_eq!(f[0].role, Role::Taker);

        let touch = StrategyConfig { taker_at_touch: true, ..cfg };
        let f = match_orders(&[sell], &book(1, 100.10, 100.12), &[], &touch);
        assert_eq!(f[0].price, 100.10);
    }

    #[test]
    fn pnl_examples() {
        let mut s = BookkeepingState::new(100.0);
        assert_eq!(step_pnl(&mut s, &[], 100.0, 100.0), 0.0);
        let buy = Fill { side: Side::Buy, price: 100.0, qty: 0.05, role: Role::Maker, fee: 0.0 };
        let a = step_pnl(&mut s, &[buy], 100.0, 100.0);
        let b = step_pnl(&mut s, &[], 100.0, 101.0);
        assert!((a + b - 0.05).abs() < 1e-12);

        let mut s = BookkeepingState::new(100.0);
        let rebate = Fill { side: Side::Sell, price: 100.0, qty: 0.05, role: Role::Maker, fee: -5.0 * 0.0001 };
        assert!((step_pnl(&mut s, &[rebate], 100.0, 100.0) - 5.0 * 0.0001).abs() < 1e-12);
    }

    #[test]
    fn flat_book_persistence_earns_nothing() {
        let snaps: Vec<LobSnapshot> = (0..50).map(|i| book(i * 100, 99.99, 100.01)).collect();
        let series = SnapshotSeries::new(snaps).unwrap();
        let r = run_backtest(&series, &[], &mut PersistencePredictor, &StrategyConfig::default()).unwrap();
        assert_eq!(r.steps.len(), 49);
        assert!(r.steps.iter().all(|s| s.pnl == 0.0 && s.fills.is_empty()));
        assert_eq!(r.equity()[0], 100.0);
    }

    #[test]
    fn predictor_sees_no_future() {
        let snaps: Vec<LobSnapshot> = (0..30).map(|i| book(i * 100, 99.99, 100.01)).collect();
        let series = SnapshotSeries::new(snaps).unwrap();
        let mut seen = Vec::new();
        let mut p = |h: &[LobSnapshot]| {
            seen.push((h.len(), h.last().unwrap().ts_ms));
            None
        };
        run_backtest(&series, &[], &mut p, &StrategyConfig::default()).unwrap();
        for (k, &(len, ts)) in seen.iter().enumerate() {
            assert_eq!((len, ts), (k + 1, k as i64 * 100));
        }
    }

    #[test]
    fn csv_has_expected_header() {
        let snaps: Vec<LobSnapshot> = (0..3).map(|i| book(i * 100, 99.99, 100.01)).collect();
        let series = SnapshotSeries::new(snaps).unwrap();
        let r = run_backtest(&series, &[], &mut PersistencePredictor, &StrategyConfig::default()).unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("ts_ms,pnl,cum_pnl,equity,inventory,fill_side,fill_price,fill_qty,fill_role,fee\n"));
        assert_eq!(csv.lines().count(), 3);
    }
}
