//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use lobforge::{
    backtest::StrategyConfig,
    lob::{Level, LobSnapshot, Side, SnapshotSeries, TradeEvent},
    models::{build_model, ArchKind, ArchSpec},
    nn::{
        grad_check, ops, seeded_init, seeded_rng, GradCheckReport, Layer, Network, ParamStore, Rng,
        Tensor,
    },
    synthetic::{SyntheticData, SyntheticTape, TapeKind},
};
use rand::Rng as _;

pub const LAYER_TOL: f64 = 1e-4;
pub const NET_TOL: f64 = 1e-3;

/// A valid random book: random depth in `2..=max_depth`, irregular tick
/// gaps, quantities that are never constant on a side.
pub fn random_snapshot(rng: &mut Rng, ts_ms: i64, max_depth: usize) -> LobSnapshot {
    let depth = rng.gen_range(2..=max_depth);
    let mid_ticks: i64 = rng.gen_range(1_000..10_000_000);
    let half = rng.gen_range(1..20);
    let (mut a, mut b) = (mid_ticks + half, mid_ticks - half);
    let mut asks = Vec::new();
    let mut bids = Vec::new();
    for k in 0..depth {
        let q = |rng: &mut Rng| (rng.gen_range(0.0..50.0f64) * 1e4).round() / 1e4;
        let (mut qa, mut qb) = (q(rng), q(rng));
        if k == 0 {
            qa += 100.0;
            qb += 100.0;
        }
        asks.push(Level { price: a as f64 / 100.0, qty: qa });
        bids.push(Level { price: b as f64 / 100.0, qty: qb });
        a += rng.gen_range(1..30);
        b -= rng.gen_range(1..30);
    }
    LobSnapshot::new(ts_ms, "RND", asks, bids).expect("valid random book")
}

fn mse_of(net: &Network, ps: &ParamStore, x: &Tensor, y: &Tensor) -> f64 {
    let (pred, _) = net.forward(ps, x).unwrap();
    ops::mse_loss(&pred, y).unwrap().0
}

/// Gradient check of a small network against an MSE loss to a random target.
pub fn check_network(net: &Network, ps: &ParamStore, x: &Tensor, rng: &mut Rng, tol: f64, eps: f64) -> GradCheckReport {
    let (pred, caches) = net.forward(ps, x).unwrap();
    let y = seeded_init(pred.shape(), 1, rng);
    let (_, gy) = ops::mse_loss(&pred, &y).unwrap();
    let mut grads = ps.zero_grads();
    let gx = net.backward(ps, &caches, gy, &mut grads).unwrap();
    grad_check(ps, x, &grads, Some(&gx), |p, x| mse_of(net, p, x, &y), eps, tol, 12)
}

pub fn conv_check(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let mut ps = ParamStore::new();
    let w = ps.add_init("w", &[4, 3, 3, 2], 18, &mut rng);
    let b = ps.add_init("b", &[4], 18, &mut rng);
    let cfg = ops::Conv2dCfg { stride: (2, 1), pad: (1, 2) };
    let net = Network::new(vec![Layer::Conv2d { weight: w, bias: b, cfg }]);
    let x = seeded_init(&[2, 3, 7, 6], 1, &mut rng);
    check_network(&net, &ps, &x, &mut rng, LAYER_TOL, 1e-6)
}

pub fn maxpool_check(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let ps = ParamStore::new();
    let net = Network::new(vec![Layer::MaxPool2d(ops::PoolCfg { kernel: (2, 3), stride: (2, 1) })]);
    let x = seeded_init(&[2, 3, 6, 5], 1, &mut rng);
    check_network(&net, &ps, &x, &mut rng, LAYER_TOL, 1e-6)
}

pub fn dense_check(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let mut ps = ParamStore::new();
    let w1 = ps.add_init("w1", &[6, 5], 5, &mut rng);
    let b1 = ps.add_init("b1", &[6], 5, &mut rng);
    let w2 = ps.add_init("w2", &[4, 6], 6, &mut rng);
    let b2 = ps.add_init("b2", &[4], 6, &mut rng);
    let net = Network::new(vec![
        Layer::Dense { weight: w1, bias: b1 },
        Layer::Sigmoid,
        Layer::Dense { weight: w2, bias: b2 },
        Layer::Tanh,
    ]);
    let x = seeded_init(&[3, 5], 1, &mut rng);
    check_network(&net, &ps, &x, &mut rng, LAYER_TOL, 1e-6)
}

/// Single LSTM step; the initial state is checked as a parameter too.
pub fn lstm_step_check(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let (n, e, h) = (2, 3, 4);
    let mut ps = ParamStore::new();
    let w = ps.add_init("w", &[4 * h, e], e, &mut rng);
    let u = ps.add_init("u", &[4 * h, h], h, &mut rng);
    let b = ps.add_init("b", &[4 * h], h, &mut rng);
    let h0 = ps.add_init("h0", &[n, h], 1, &mut rng);
    let c0 = ps.add_init("c0", &[n, h], 1, &mut rng);
    let x = seeded_init(&[n, e], 1, &mut rng);
    let rh = seeded_init(&[n, h], 1, &mut rng);
    let rc = seeded_init(&[n, h], 1, &mut rng);
    let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    let loss = |ps: &ParamStore, x: &Tensor| {
        let p = ops::LstmWeights { w: ps.get(w), u: ps.get(u), b: ps.get(b) };
        let (h1, c1, _) = ops::lstm_step_forward(x, ps.get(h0), ps.get(c0), p).unwrap();
        dot(&h1, &rh) + dot(&c1, &rc)
    };
    let p = ops::LstmWeights { w: ps.get(w), u: ps.get(u), b: ps.get(b) };
    let (_, _, cache) = ops::lstm_step_forward(&x, ps.get(h0), ps.get(c0), p).unwrap();
    let g = ops::lstm_step_backward(&cache, p, &rh, &rc).unwrap();
    let mut grads = ps.zero_grads();
    grads.0[w] = g.w;
    grads.0[u] = g.u;
    grads.0[b] = g.b;
    grads.0[h0] = g.h_prev;
    grads.0[c0] = g.c_prev;
    grad_check(&ps, &x, &grads, Some(&g.x), loss, 1e-6, LAYER_TOL, 64)
}

pub fn mse_check(seed: u64) -> GradCheckReport {
    let mut rng = seeded_rng(seed);
    let mut ps = ParamStore::new();
    let pred = ps.add_init("pred", &[3, 4], 1, &mut rng);
    let target = seeded_init(&[3, 4], 1, &mut rng);
    let (_, g) = ops::mse_loss(ps.get(pred), &target).unwrap();
    let mut grads = ps.zero_grads();
    grads.0[pred] = g;
    grad_check(&ps, &target, &grads, None, |p, t| ops::mse_loss(p.get(pred), t).unwrap().0, 1e-6, LAYER_TOL, 64)
}

/// End-to-end check of an architecture at miniature dimensions (D=8, L=3).
pub fn arch_check(kind: ArchKind, seed: u64) -> GradCheckReport {
    let arch = ArchSpec::new(kind, 3, 8, 4);
    let model = build_model(&arch, seed).unwrap();
    let mut rng = seeded_rng(seed ^ 0xabcd);
    let shape: Vec<usize> = match kind.representation() {
        Some(lobforge::sampling::Representation::Merged) => vec![2, 1, 8, 12],
        _ => vec![2, 3, 8, 4],
    };
    let x = seeded_init(&shape, 1, &mut rng);
    let y = seeded_init(&[2, 1], 1, &mut rng);
    let (_, grads, gx) = model.loss_and_grads(&x, &y).unwrap();
    grad_check(&model.params, &x, &grads, Some(&gx), |p, x| model.loss_with(p, x, &y).unwrap(), 1e-6, NET_TOL, 6)
}

/// Tape with trade prints used by the backtest oracles.
pub fn trading_tape(seed: u64, steps: usize) -> SyntheticData {
    let kind = if seed.is_multiple_of(2) {
        TapeKind::RandomWalk { step_std: 0.04 }
    } else {
        TapeKind::MeanReverting { theta: 0.05, sigma: 0.05 }
    };
    SyntheticTape {
        kind,
        snapshots: steps + 1,
        depth: 10,
        trades_per_step: 3,
        trade_range_ticks: 12,
        seed,
        ..Default::default()
    }
    .generate()
}

/// Deterministic forecast from the visible book: mid shifted by the top-3
/// volume imbalance.
pub fn imbalance_forecast(history: &[LobSnapshot]) -> Option<f64> {
    let s = history.last()?;
    let qa: f64 = s.asks.iter().take(3).map(|l| l.qty).sum();
    let qb: f64 = s.bids.iter().take(3).map(|l| l.qty).sum();
    Some(s.mid_price() + 0.12 * (qb - qa) / (qa + qb))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefStep {
    pub ts_ms: i64,
    pub pnl: f64,
    pub equity: f64,
    pub inventory: f64,
    pub fills: usize,
}

/// Straight-line replay of the market-making rules, written independently
/// of the engine: quote, cross/print matching, fees, mark-to-market.
pub fn reference_backtest(
    series: &SnapshotSeries,
    trades: &[TradeEvent],
    forecast: impl Fn(&[LobSnapshot]) -> Option<f64>,
    cfg: &StrategyConfig,
) -> Vec<RefStep> {
    let s = &series.snapshots;
    let mut cash = cfg.initial_capital;
    let mut inv = 0.0f64;
    let mut prev_equity = cash + inv * ((s[0].asks[0].price + s[0].bids[0].price) / 2.0);
    let mut out = Vec::new();
    for i in 0..s.len() - 1 {
        let mid = (s[i].asks[0].price + s[i].bids[0].price) / 2.0;
        let next = &s[i + 1];
        let (next_bid, next_ask) = (next.bids[0].price, next.asks[0].price);
        let mut fills = 0;
        if let Some(p) = forecast(&s[..=i]).filter(|p| p.is_finite() && *p > 0.0) {
            let half = cfg.quote_spread / 2.0;
            let window: Vec<&TradeEvent> =
                trades.iter().filter(|t| t.ts_ms > s[i].ts_ms && t.ts_ms <= next.ts_ms).collect();
            // sell first, then buy; both sized against the pre-step inventory
            let inv0 = inv;
            let sell_room = cfg.max_side_notional + inv0 * mid;
            let buy_room = cfg.max_side_notional - inv0 * mid;
            for (side, px, room) in
                [(Side::Sell, p + half, sell_room), (Side::Buy, p - half, buy_room)]
            {
                let notional = if room < cfg.max_side_notional { room } else { cfg.max_side_notional };
                if !(px > 0.0 && notional > 1e-9) {
                    continue;
                }
                let qty = notional / px;
                let crossing = match side {
                    Side::Sell => px <= next_bid,
                    Side::Buy => px >= next_ask,
                };
                let rate = if crossing {
                    Some(cfg.taker_fee_rate)
                } else if cfg.use_trade_tape
                    && window.iter().any(|t| match side {
                        Side::Sell => t.price >= px,
                        Side::Buy => t.price <= px,
                    })
                {
                    Some(cfg.maker_fee_rate)
                } else {
                    None
                };
                if let Some(rate) = rate {
                    let fee = px * qty * rate;
                    match side {
                        Side::Sell => {
                            cash += px * qty - fee;
                            inv -= qty;
                        }
                        Side::Buy => {
                            cash -= px * qty + fee;
                            inv += qty;
                        }
                    }
                    fills += 1;
                }
            }
        }
        let next_mid = (next_ask + next_bid) / 2.0;
        let equity = cash + inv * next_mid;
        out.push(RefStep { ts_ms: next.ts_ms, pnl: equity - prev_equity, equity, inventory: inv, fills });
        prev_equity = equity;
    }
    out
}
