//! Order-book snapshot and trade-print tapes.
//!
//! Tapes are JSON Lines, optionally gzip-compressed (detected by magic
//! bytes, not by extension).

use std::{
    fs::File,
    io::{BufRead, BufReader, BufWriter, Read, Write},
    path::Path,
};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error)]
pub enum LobError {
    #[error("malformed record{}: {reason}", line_suffix(*.line))]
    MalformedRecord { line: Option<usize>, reason: String },
    #[error("crossed book at ts {ts_ms}: best ask {best_ask} <= best bid {best_bid}")]
    CrossedBook { ts_ms: i64, best_ask: f64, best_bid: f64 },
    #[error("negative or non-finite value at ts {ts_ms}: {what}")]
    NegativeValue { ts_ms: i64, what: String },
    #[error("duplicate price level {price} on the {side} side at ts {ts_ms}")]
    DuplicateLevel { ts_ms: i64, side: &'static str, price: f64 },
    #[error("depth changed within series: expected {expected}, found {found} at ts {ts_ms}")]
    DepthMismatch { expected: usize, found: usize, ts_ms: i64 },
    #[error("no records left after filtering")]
    EmptySeries,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" on line {l}")).unwrap_or_default()
}

impl LobError {
    fn malformed(reason: impl Into<String>) -> Self {
        LobError::MalformedRecord { line: None, reason: reason.into() }
    }

    fn at_line(self, line: usize) -> Self {
        match self {
            LobError::MalformedRecord { reason, .. } => {
                LobError::MalformedRecord { line: Some(line), reason }
            }
            other => other,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        LobError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub price: f64,
    pub qty: f64,
}

/// One depth-D book state. Asks ascend in price, bids descend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobSnapshot {
    pub ts_ms: i64,
    pub symbol: String,
    pub asks: Vec<Level>,
    pub bids: Vec<Level>,
}

impl LobSnapshot {
    /// Builds a snapshot, canonicalizing ladder order and validating it.
    pub fn new(
        ts_ms: i64,
        symbol: impl Into<String>,
        mut asks: Vec<Level>,
        mut bids: Vec<Level>,
    ) -> Result<Self, LobError> {
        for (side, ladder) in [("ask", &asks), ("bid", &bids)] {
            for l in ladder.iter() {
                if !(l.price.is_finite() && l.price > 0.0) {
                    return Err(LobError::NegativeValue {
                        ts_ms,
                        what: format!("{side} price {}", l.price),
                    });
                }
                if !(l.qty.is_finite() && l.qty >= 0.0) {
                    return Err(LobError::NegativeValue {
                        ts_ms,
                        what: format!("{side} quantity {}", l.qty),
                    });
                }
            }
        }
        if asks.is_empty() || bids.is_empty() {
            return Err(LobError::malformed("empty ask or bid ladder"));
        }
        if asks.len() != bids.len() {
            return Err(LobError::malformed(format!(
                "ask depth {} differs from bid depth {}",
                asks.len(),
                bids.len()
            )));
        }
        asks.sort_by(|a, b| a.price.total_cmp(&b.price));
        bids.sort_by(|a, b| b.price.total_cmp(&a.price));
        for (side, ladder) in [("ask", &asks), ("bid", &bids)] {
            if let Some(w) = ladder.windows(2).find(|w| w[0].price == w[1].price) {
                return Err(LobError::DuplicateLevel { ts_ms, side, price: w[0].price });
            }
        }
        let (best_ask, best_bid) = (asks[0].price, bids[0].price);
        if best_ask <= best_bid {
            return Err(LobError::CrossedBook { ts_ms, best_ask, best_bid });
        }
        Ok(LobSnapshot { ts_ms, symbol: symbol.into(), asks, bids })
    }

    pub fn depth(&self) -> usize {
        self.asks.len()
    }

    pub fn best_ask(&self) -> f64 {
        self.asks[0].price
    }

    pub fn best_bid(&self) -> f64 {
        self.bids[0].price
    }

    /// (best ask + best bid) / 2.
    pub fn mid_price(&self) -> f64 {
        0.5 * (self.best_ask() + self.best_bid())
    }

    pub fn spread(&self) -> f64 {
        self.best_ask() - self.best_bid()
    }

    pub fn to_json_line(&self) -> String {
        let ladder = |v: &[Level]| v.iter().map(|l| json!([l.price, l.qty])).collect::<Vec<_>>();
        json!({
            "ts_ms": self.ts_ms,
            "symbol": self.symbol,
            "asks": ladder(&self.asks),
            "bids": ladder(&self.bids),
        })
        .to_string()
    }
}

pub fn mid_price(s: &LobSnapshot) -> f64 {
    s.mid_price()
}

pub fn spread(s: &LobSnapshot) -> f64 {
    s.spread()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Buy,
    Sell,
}

/// A trade print; `side` is the taker side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeEvent {
    pub ts_ms: i64,
    pub symbol: String,
    pub price: f64,
    pub qty: f64,
    pub side: Side,
}

impl TradeEvent {
    pub fn to_json_line(&self) -> String {
        json!({
            "ts_ms": self.ts_ms,
            "symbol": self.symbol,
            "price": self.price,
            "qty": self.qty,
            "side": self.side,
        })
        .to_string()
    }
}

/// Time-ordered snapshots of one symbol at fixed depth.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSeries {
    pub symbol: String,
    pub snapshots: Vec<LobSnapshot>,
    pub nominal_interval_ms: i64,
}

impl SnapshotSeries {
    /// Validates ordering, symbol and depth; the nominal interval is the
    /// median timestamp gap.
    pub fn new(snapshots: Vec<LobSnapshot>) -> Result<Self, LobError> {
        let first = snapshots.first().ok_or(LobError::EmptySeries)?;
        let symbol = first.symbol.clone();
        let depth = first.depth();
        for w in snapshots.windows(2) {
            if w[1].ts_ms <= w[0].ts_ms {
                return Err(LobError::malformed(format!(
                    "timestamps not strictly increasing: {} then {}",
                    w[0].ts_ms, w[1].ts_ms
                )));
            }
        }
        for s in &snapshots {
            if s.symbol != symbol {
                return Err(LobError::malformed(format!(
                    "mixed symbols in series: {symbol} and {}",
                    s.symbol
                )));
            }
            if s.depth() != depth {
                return Err(LobError::DepthMismatch {
                    expected: depth,
                    found: s.depth(),
                    ts_ms: s.ts_ms,
                });
            }
        }
        let mut gaps: Vec<i64> = snapshots.windows(2).map(|w| w[1].ts_ms - w[0].ts_ms).collect();
        gaps.sort_unstable();
        let nominal_interval_ms = gaps.get(gaps.len() / 2).copied().unwrap_or(0);
        Ok(SnapshotSeries { symbol, snapshots, nominal_interval_ms })
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.snapshots.first().map_or(0, LobSnapshot::depth)
    }

    pub fn mids(&self) -> Vec<f64> {
        self.snapshots.iter().map(LobSnapshot::mid_price).collect()
    }

    /// Sub-series with `t0 <= ts_ms <= t1`.
    pub fn slice_time(&self, t0: i64, t1: i64) -> Result<Self, LobError> {
        let snaps = self
            .snapshots
            .iter()
            .filter(|s| s.ts_ms >= t0 && s.ts_ms <= t1)
            .cloned()
            .collect();
        SnapshotSeries::new(snaps)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), LobError> {
        write_lines(path, self.snapshots.iter().map(LobSnapshot::to_json_line))
    }
}

/// Inclusive time filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeRange {
    pub from_ms: i64,
    pub to_ms: i64,
}

impl TimeRange {
    pub const ALL: TimeRange = TimeRange { from_ms: i64::MIN, to_ms: i64::MAX };

    pub fn contains(&self, ts: i64) -> bool {
        ts >= self.from_ms && ts <= self.to_ms
    }
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a Value, LobError> {
    obj.get(key).ok_or_else(|| LobError::malformed(format!("missing key `{key}`")))
}

/// Accepts a JSON number or a decimal string.
fn decimal(v: &Value, what: &str) -> Result<f64, LobError> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    x.filter(|x| x.is_finite())
        .ok_or_else(|| LobError::malformed(format!("{what}: expected a number, got {v}")))
}

fn parse_ladder(v: &Value, side: &str) -> Result<Vec<Level>, LobError> {
    let arr = v
        .as_array()
        .ok_or_else(|| LobError::malformed(format!("`{side}` must be an array")))?;
    arr.iter()
        .map(|pair| match pair.as_array().map(Vec::as_slice) {
            Some([p, q]) => Ok(Level { price: decimal(p, side)?, qty: decimal(q, side)? }),
            _ => Err(LobError::malformed(format!(
                "`{side}` entries must be [price, qty] pairs, got {pair}"
            ))),
        })
        .collect()
}

fn parse_object(line: &str) -> Result<serde_json::Map<String, Value>, LobError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(LobError::malformed("record is not a JSON object")),
        Err(e) => Err(LobError::malformed(format!("invalid JSON: {e}"))),
    }
}

fn timestamp(obj: &serde_json::Map<String, Value>) -> Result<i64, LobError> {
    field(obj, "ts_ms")?
        .as_i64()
        .ok_or_else(|| LobError::malformed("`ts_ms` must be an integer"))
}

fn symbol(obj: &serde_json::Map<String, Value>) -> Result<String, LobError> {
    field(obj, "symbol")?
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| LobError::malformed("`symbol` must be a string"))
}

/// Parses one snapshot record.
pub fn parse_snapshot(line: &str) -> Result<LobSnapshot, LobError> {
    let obj = parse_object(line)?;
    let ts_ms = timestamp(&obj)?;
    let symbol = symbol(&obj)?;
    let asks = parse_ladder(field(&obj, "asks")?, "asks")?;
    let bids = parse_ladder(field(&obj, "bids")?, "bids")?;
    LobSnapshot::new(ts_ms, symbol, asks, bids)
}

pub fn parse_trade(line: &str) -> Result<TradeEvent, LobError> {
    let obj = parse_object(line)?;
    let ts_ms = timestamp(&obj)?;
    let symbol = symbol(&obj)?;
    let price = decimal(field(&obj, "price")?, "price")?;
    let qty = decimal(field(&obj, "qty")?, "qty")?;
    let side = match field(&obj, "side")?.as_str() {
        Some("buy") => Side::Buy,
        Some("sell") => Side::Sell,
        _ => return Err(LobError::malformed("`side` must be \"buy\" or \"sell\"")),
    };
    if price <= 0.0 || qty <= 0.0 {
        return Err(LobError::NegativeValue { ts_ms, what: format!("trade price {price} qty {qty}") });
    }
    Ok(TradeEvent { ts_ms, symbol, price, qty, side })
}

/// Opens a file, transparently gunzipping when it starts with the gzip magic.
pub fn open_maybe_gz(path: &Path) -> Result<Box<dyn BufRead>, LobError> {
    let mut file = File::open(path).map_err(|e| LobError::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| LobError::io(path, e))?;
    let file = File::open(path).map_err(|e| LobError::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(flate2::read::MultiGzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, LobError> {
    let reader = open_maybe_gz(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| LobError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub(crate) fn write_lines(
    path: &Path,
    lines: impl Iterator<Item = String>,
) -> Result<(), LobError> {
    let file = File::create(path).map_err(|e| LobError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| LobError::io(path, e))?;
    }
    w.flush().map_err(|e| LobError::io(path, e))
}

/// Loads a snapshot tape: parse (in parallel), filter by symbol and time,
/// sort by time and keep the last record of any duplicated timestamp.
///
/// With `symbol == None` the tape must hold a single symbol.
pub fn load_tape(
    path: &Path,
    symbol: Option<&str>,
    range: TimeRange,
) -> Result<SnapshotSeries, LobError> {
    let lines = read_lines(path)?;
    let parsed =
        par::try_map_slice(&lines, |(no, l)| parse_snapshot(l).map_err(|e| e.at_line(*no)))?;
    let mut snaps: Vec<LobSnapshot> = parsed
        .into_iter()
        .filter(|s| symbol.is_none_or(|sym| s.symbol == sym) && range.contains(s.ts_ms))
        .collect();
    if snaps.is_empty() {
        return Err(LobError::EmptySeries);
    }
    canonicalize_snapshots(&mut snaps);
    SnapshotSeries::new(snaps)
}

/// Stable time sort, then keep-last deduplication of equal timestamps.
pub fn canonicalize_snapshots(snaps: &mut Vec<LobSnapshot>) {
    snaps.sort_by_key(|s| s.ts_ms);
    let mut out: Vec<LobSnapshot> = Vec::with_capacity(snaps.len());
    for s in snaps.drain(..) {
        match out.last_mut() {
            Some(last) if last.ts_ms == s.ts_ms => *last = s,
            _ => out.push(s),
        }
    }
    *snaps = out;
}

/// Loads trade prints, filtered and stably sorted by time. Several prints
/// may share a millisecond, so nothing is deduplicated.
pub fn load_trades(
    path: &Path,
    symbol: Option<&str>,
    range: TimeRange,
) -> Result<Vec<TradeEvent>, LobError> {
    let lines = read_lines(path)?;
    let parsed = par::try_map_slice(&lines, |(no, l)| parse_trade(l).map_err(|e| e.at_line(*no)))?;
    let mut trades: Vec<TradeEvent> = parsed
        .into_iter()
        .filter(|t| symbol.is_none_or(|sym| t.symbol == sym) && range.contains(t.ts_ms))
        .collect();
    if trades.is_empty() {
        return Err(LobError::EmptySeries);
    }
    trades.sort_by_key(|t| t.ts_ms);
    Ok(trades)
}

pub fn write_trades(path: &Path, trades: &[TradeEvent]) -> Result<(), LobError> {
    write_lines(path, trades.iter().map(TradeEvent::to_json_line))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn minimal() -> LobSnapshot {
        parse_snapshot(r#"{"ts_ms":1,"symbol":"BTCUSDT","asks":[[100.1,1]],"bids":[[99.9,2]]}"#)
            .unwrap()
    }

    #[test]
    fn parses_minimal_book() {
        let s = minimal();
        assert_eq!(s.depth(), 1);
        assert_eq!(s.best_ask(), 100.1);
        assert_eq!(s.best_bid(), 99.9);
        assert!((s.mid_price() - 100.0).abs() < 1e-12);
        assert!((s.spread() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn crossed_and_locked_books_are_rejected() {
        let locked = r#"{"ts_ms":1,"symbol":"X","asks":[[100.0,1]],"bids":[[100.0,1]]}"#;
        assert!(matches!(parse_snapshot(locked), Err(LobError::CrossedBook { .. })));
        let crossed = r#"{"ts_ms":1,"symbol":"X","asks":[[99.0,1]],"bids":[[100.0,1]]}"#;
        assert!(matches!(parse_snapshot(crossed), Err(LobError::CrossedBook { .. })));
    }

    #[test]
    fn negative_values_are_rejected() {
        let neg_qty = r#"{"ts_ms":1,"symbol":"X","asks":[[101,-1]],"bids":[[99,1]]}"#;
        assert!(matches!(parse_snapshot(neg_qty), Err(LobError::NegativeValue { .. })));
        let neg_px = r#"{"ts_ms":1,"symbol":"X","asks":[[101,1]],"bids":[[-99,1]]}"#;
        assert!(matches!(parse_snapshot(neg_px), Err(LobError::NegativeValue { .. })));
    }

    #[test]
    fn malformed_records() {
        for bad in [
            r#"{"symbol":"X","asks":[[101,1]],"bids":[[99,1]]}"#,
            r#"{"ts_ms":1,"symbol":"X","asks":[[101,1,3]],"bids":[[99,1]]}"#,
            r#"{"ts_ms":1,"symbol":"X","asks":[[101,1]],"bids":[]}"#,
            r#"{"ts_ms":1,"symbol":"X","asks":[["abc",1]],"bids":[[99,1]]}"#,
            r#"[1,2]"#,
            "not json",
        ] {
            assert!(
                matches!(parse_snapshot(bad), Err(LobError::MalformedRecord { .. })),
                "{bad}"
            );
        }
    }

    #[test]
    fn decimal_strings_and_unsorted_ladders() {
        let s = parse_snapshot(
            r#"{"ts_ms":5,"symbol":"X","asks":[["100.3","1"],["100.1","2"]],"bids":[["99.8","1"],["99.9","0"]]}"#,
        )
        .unwrap();
        assert_eq!(s.asks.iter().map(|l| l.price).collect::<Vec<_>>(), vec![100.1, 100.3]);
        assert_eq!(s.bids.iter().map(|l| l.price).collect::<Vec<_>>(), vec![99.9, 99.8]);
        assert_eq!(s.bids[0].qty, 0.0);
    }

    #[test]
    fn spread_examples() {
        let s = LobSnapshot::new(
            0,
            "X",
            vec![Level { price: 100.05, qty: 1.0 }],
            vec![Level { price: 100.0, qty: 1.0 }],
        )
        .unwrap();
        assert!((s.spread() - 0.05).abs() < 1e-9);
        let eps = 1e-6;
        let s = LobSnapshot::new(
            0,
            "X",
            vec![Level { price: 50.0 + eps, qty: 1.0 }],
            vec![Level { price: 50.0, qty: 1.0 }],
        )
        .unwrap();
        assert!((s.mid_price() - (50.0 + eps / 2.0)).abs() < 1e-12);
    }

    fn write_tmp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const L1: &str = r#"{"ts_ms":30,"symbol":"X","asks":[[101,1]],"bids":[[99,1]]}"#;
    const L2: &str = r#"{"ts_ms":10,"symbol":"X","asks":[[102,1]],"bids":[[98,1]]}"#;
    const L3: &str = r#"{"ts_ms":20,"symbol":"X","asks":[[103,1]],"bids":[[97,1]]}"#;

    #[test]
    fn load_tape_sorts_and_filters() {
        let f = write_tmp(&[L1, L2, L3]);
        let s = load_tape(f.path(), Some("X"), TimeRange::ALL).unwrap();
        assert_eq!(s.snapshots.iter().map(|s| s.ts_ms).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert_eq!(s.nominal_interval_ms, 10);
        let e = load_tape(f.path(), Some("X"), TimeRange { from_ms: 100, to_ms: 200 });
        assert!(matches!(e, Err(LobError::EmptySeries)));
        let e = load_tape(f.path(), Some("Y"), TimeRange::ALL);
        assert!(matches!(e, Err(LobError::EmptySeries)));
        let s = load_tape(f.path(), None, TimeRange { from_ms: 15, to_ms: 30 }).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn duplicate_timestamps_keep_last() {
        let dup = r#"{"ts_ms":10,"symbol":"X","asks":[[105,1]],"bids":[[95,1]]}"#;
        let f = write_tmp(&[L2, L1, dup]);
        let s = load_tape(f.path(), None, TimeRange::ALL).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.snapshots[0].best_ask(), 105.0);
    }

    #[test]
    fn varying_depth_is_rejected() {
        let deep = r#"{"ts_ms":40,"symbol":"X","asks":[[101,1],[102,1]],"bids":[[99,1],[98,1]]}"#;
        let f = write_tmp(&[L1, deep]);
        assert!(matches!(
            load_tape(f.path(), None, TimeRange::ALL),
            Err(LobError::DepthMismatch { .. })
        ));
    }

    #[test]
    fn gzip_is_transparent() {
        let f = tempfile::NamedTempFile::new().unwrap();
        {
            let mut gz = flate2::write::GzEncoder::new(
                File::create(f.path()).unwrap(),
                flate2::Compression::default(),
            );
            for l in [L1, L2, L3] {
                writeln!(gz, "{l}").unwrap();
            }
            gz.finish().unwrap();
        }
        assert_eq!(load_tape(f.path(), None, TimeRange::ALL).unwrap().len(), 3);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_tmp(&[L1, "{}", L3]);
        match load_tape(f.path(), None, TimeRange::ALL) {
            Err(LobError::MalformedRecord { line, .. }) => assert_eq!(line, Some(2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trades_load_and_validate() {
        let f = write_tmp(&[
            r#"{"ts_ms":20,"symbol":"X","price":100.5,"qty":0.1,"side":"buy"}"#,
            r#"{"ts_ms":10,"symbol":"X","price":"100.4","qty":"0.2","side":"sell"}"#,
            r#"{"ts_ms":10,"symbol":"X","price":100.3,"qty":0.2,"side":"sell"}"#,
        ]);
        let t = load_trades(f.path(), Some("X"), TimeRange::ALL).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].price, 100.4);
        assert_eq!(t[2].side, Side::Buy);
        assert!(parse_trade(r#"{"ts_ms":1,"symbol":"X","price":1,"qty":0,"side":"buy"}"#).is_err());
        assert!(parse_trade(r#"{"ts_ms":1,"symbol":"X","price":1,"qty":1,"side":"hold"}"#).is_err());
    }

    fn arb_snapshot() -> impl Strategy<Value = LobSnapshot> {
        (1usize..12, 1.0f64..1e5, 1e-4f64..1.0, 0i64..1_000_000).prop_flat_map(
            |(d, mid, half, ts)| {
                (
                    prop::collection::vec((1e-4f64..5.0, 0.0f64..100.0), d),
                    prop::collection::vec((1e-4f64..5.0, 0.0f64..100.0), d),
                )
                    .prop_map(move |(a, b)| {
                        let mut px = mid + half;
                        let asks = a
                            .iter()
                            .map(|&(g, q)| {
                                let l = Level { price: px, qty: q };
                                px += g;
                                l
                            })
                            .collect();
                        let mut px = mid - half;
                        let bids = b
                            .iter()
                            .map(|&(g, q)| {
                                let l = Level { price: px, qty: q };
                                px = (px - g).max(px * 0.5);
                                l
                            })
                            .collect();
                        LobSnapshot::new(ts, "SYM", asks, bids).unwrap()
                    })
            },
        )
    }

    proptest! {
        #[test]
        fn serialize_parse_round_trip(s in arb_snapshot()) {
            let back = parse_snapshot(&s.to_json_line()).unwrap();
            prop_assert_eq!(back, s);
        }

        #[test]
        fn mid_lies_inside_spread(s in arb_snapshot()) {
            prop_assert!(s.spread() > 0.0);
            prop_assert!(s.mid_price() > s.best_bid() && s.mid_price() < s.best_ask());
        }
    }
}
