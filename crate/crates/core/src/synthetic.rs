//! Deterministic synthetic tapes for tests, benches and demos.
//!
//! Prices live on an integer tick grid, so every generated book is valid
//! and round-trips through JSONL exactly.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{
    lob::{Level, LobSnapshot, Side, SnapshotSeries, TradeEvent},
    nn::{seeded_rng, Rng},
};

/// Latent mid-price process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TapeKind {
    /// Constant book: identical snapshots every step.
    Flat,
    /// `m += per_step + noise_std·N(0,1)` each step.
    Drift { per_step: f64, noise_std: f64 },
    /// Gaussian random walk.
    RandomWalk { step_std: f64 },
    /// Discrete Ornstein-Uhlenbeck around the base price.
    MeanReverting { theta: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTape {
    #[serde(flatten)]
    pub kind: TapeKind,
    pub symbol: String,
    pub snapshots: usize,
    pub depth: usize,
    pub interval_ms: i64,
    pub start_ms: i64,
    pub base_price: f64,
    pub tick: f64,
    pub base_qty: f64,
    pub max_spread_ticks: u32,
    /// Trade prints between consecutive snapshots.
    pub trades_per_step: usize,
    /// Prints land within this many ticks of the next mid.
    pub trade_range_ticks: i64,
    pub seed: u64,
}

impl Default for SyntheticTape {
    fn default() -> Self {
        SyntheticTape {
            kind: TapeKind::Flat,
            symbol: "SYN".into(),
            snapshots: 1_000,
            depth: 10,
            interval_ms: 200,
            start_ms: 1_600_000_000_000,
            base_price: 100.0,
            tick: 0.01,
            base_qty: 1.0,
            max_spread_ticks: 4,
            trades_per_step: 0,
            trade_range_ticks: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub series: SnapshotSeries,
    pub trades: Vec<TradeEvent>,
}

impl SyntheticTape {
    fn price(&self, ticks: i64) -> f64 {
        ticks as f64 / (1.0 / self.tick).round()
    }

    fn latent_path(&self, rng: &mut Rng) -> Vec<f64> {
        let mut m = self.base_price;
        let floor = 100.0 * self.tick;
        let mut path = Vec::with_capacity(self.snapshots);
        for _ in 0..self.snapshots {
            path.push(m);
            let z: f64 = rng.sample(StandardNormal);
            m += match self.kind {
                TapeKind::Flat => 0.0,
                TapeKind::Drift { per_step, noise_std } => per_step + noise_std * z,
                TapeKind::RandomWalk { step_std } => step_std * z,
                TapeKind::MeanReverting { theta, sigma } => theta * (self.base_price - m) + sigma * z,
            };
            m = m.max(floor);
        }
        path
    }

    fn book(&self, ts_ms: i64, mid: f64, rng: &mut Rng) -> LobSnapshot {
        let flat = matches!(self.kind, TapeKind::Flat);
        let spread = if flat { 2 } else { rng.gen_range(1..=self.max_spread_ticks.max(1)) as i64 };
        let inv = (1.0 / self.tick).round();
        let bid0 = ((mid * inv).round() as i64 - spread / 2).max(1);
        let ask0 = bid0 + spread;
        let mut asks = Vec::with_capacity(self.depth);
        let mut bids = Vec::with_capacity(self.depth);
        let (mut a, mut b) = (ask0, bid0);
        for k in 0..self.depth {
            let qty = |rng: &mut Rng| {
                let q = if flat {
                    self.base_qty * (1.0 + 0.1 * k as f64)
                } else {
                    self.base_qty * rng.gen_range(0.5..1.5)
                };
                (q * 1e4).round() / 1e4
            };
            asks.push(Level { price: self.price(a), qty: qty(rng) });
            bids.push(Level { price: self.price(b.max(1)), qty: qty(rng) });
            let (ga, gb) = if flat { (1, 1) } else { (rng.gen_range(1..=3), rng.gen_range(1..=3)) };
            a += ga;
            b -= gb;
        }
        // Very low prices could push deep bids to the floor; drop duplicates by
        // keeping the ladder strictly decreasing.
        for k in 1..bids.len() {
            if bids[k].price >= bids[k - 1].price {
                bids[k].price = bids[k - 1].price / 2.0;
            }
        }
        LobSnapshot::new(ts_ms, self.symbol.clone(), asks, bids).expect("generated book is valid")
    }

    pub fn generate(&self) -> SyntheticData {
        assert!(self.snapshots >= 1 && self.depth >= 1 && self.interval_ms > 0);
        let mut rng = seeded_rng(self.seed);
        let path = self.latent_path(&mut rng);
        let snaps: Vec<LobSnapshot> = path
            .iter()
            .enumerate()
            .map(|(i, &m)| self.book(self.start_ms + i as i64 * self.interval_ms, m, &mut rng))
            .collect();
        let mut trades = Vec::new();
        if self.trades_per_step > 0 {
            let inv = (1.0 / self.tick).round();
            for w in snaps.windows(2) {
                let next_mid = (w[1].mid_price() * inv).round() as i64;
                let n = self.trades_per_step as i64;
                for k in 0..n {
                    let ts = w[0].ts_ms + (k + 1) * (w[1].ts_ms - w[0].ts_ms) / (n + 1);
                    let off = rng.gen_range(-self.trade_range_ticks..=self.trade_range_ticks);
                    let ticks = (next_mid + off).max(1);
                    let qty = (self.base_qty * rng.gen_range(0.01..0.5) * 1e4).round() / 1e4;
                    trades.push(TradeEvent {
                        ts_ms: ts.max(w[0].ts_ms + 1),
                        symbol: self.symbol.clone(),
                        price: self.price(ticks),
                        qty,
                        side: if off >= 0 { Side::Buy } else { Side::Sell },
                    });
                }
            }
        }
        SyntheticData { series: SnapshotSeries::new(snaps).expect("generated series is valid"), trades }
    }
}
