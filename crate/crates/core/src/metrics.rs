//! Forecast and strategy metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lob::TradeEvent;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} actuals vs {1} forecasts")]
    LengthMismatch(usize, usize),
    #[error("actual value {0} at index {1} is not positive")]
    NonPositiveActual(f64, usize),
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("degenerate least-squares fit")]
    DegenerateFit,
    #[error("only {0} buckets with usable volume changes")]
    InsufficientOverlap(usize),
}

/// Mean absolute percentage error, in percent.
pub fn mape(actuals: &[f64], forecasts: &[f64]) -> Result<f64, MetricsError> {
    if actuals.len() != forecasts.len() {
        return Err(MetricsError::LengthMismatch(actuals.len(), forecasts.len()));
    }
    if actuals.is_empty() {
        return Err(MetricsError::TooFewPoints { need: 1, got: 0 });
    }
    let mut sum = 0.0;
    for (i, (&p, &f)) in actuals.iter().zip(forecasts).enumerate() {
        if !(p > 0.0) {
            return Err(MetricsError::NonPositiveActual(p, i));
        }
        sum += (p - f).abs() / p;
    }
    Ok(sum / actuals.len() as f64 * 100.0)
}

/// 1 % = 100 bps.
pub fn pct_to_bps(pct: f64) -> f64 {
    pct * 100.0
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `√N · mean / std` with the population standard deviation.
pub fn sharpe(pnl: &[f64]) -> Result<f64, MetricsError> {
    if pnl.len() < 2 {
        return Err(MetricsError::TooFewPoints { need: 2, got: pnl.len() });
    }
    let (mean, std) = mean_std(pnl);
    if std == 0.0 {
        return Err(MetricsError::ZeroVariance);
    }
    Ok((pnl.len() as f64).sqrt() * mean / std)
}

pub fn total_pnl(pnl: &[f64]) -> f64 {
    pnl.iter().sum()
}

/// Running sum of `pnl`.
pub fn cumsum(pnl: &[f64]) -> Vec<f64> {
    pnl.iter()
        .scan(0.0, |acc, &x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Minimum of cumulative PnL minus its running maximum; always `<= 0`.
pub fn max_drawdown(pnl: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst = 0.0f64;
    for c in cumsum(pnl) {
        peak = peak.max(c);
        worst = worst.min(c - peak);
    }
    worst
}

/// Fit of `equity ≈ bias + velocity · ln(t)`, `t = 1, 2, …`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogGrowthFit {
    pub bias: f64,
    pub velocity: f64,
    /// `velocity · 10⁴`.
    pub velocity_bps: f64,
}

impl LogGrowthFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.bias + self.velocity * t.ln()
    }
}

/// Ordinary least squares of the equity curve on the log of the 1-based
/// step index.
pub fn fit_log_growth(equity: &[f64]) -> Result<LogGrowthFit, MetricsError> {
    if equity.len() < 2 {
        return Err(MetricsError::TooFewPoints { need: 2, got: equity.len() });
    }
    let xs: Vec<f64> = (1..=equity.len()).map(|t| (t as f64).ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = equity.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(equity) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 || !sxy.is_finite() {
        return Err(MetricsError::DegenerateFit);
    }
    let velocity = sxy / sxx;
    Ok(LogGrowthFit { bias: my - velocity * mx, velocity, velocity_bps: velocity * 1e4 })
}

/// Sums trade quantity into `n` buckets of `bucket_ms` starting at `t0`.
pub fn bucket_traded_volume(trades: &[TradeEvent], t0: i64, bucket_ms: i64, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for t in trades {
        if t.ts_ms < t0 {
            continue;
        }
        let k = ((t.ts_ms - t0) / bucket_ms) as usize;
        if k < n {
            out[k] += t.qty;
        }
    }
    out
}

/// Symmetric correlation matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Buckets that contributed a relative change.
    pub n_buckets: usize,
}

/// Pearson correlations of relative volume changes `v_t / v_{t-1} - 1`.
///
/// Buckets where any series has a zero previous volume are skipped for
/// all series so every pair sees the same time points.
pub fn volume_correlation(
    labels: &[String],
    volumes: &[Vec<f64>],
) -> Result<CorrelationMatrix, MetricsError> {
    if volumes.len() < 2 {
        return Err(MetricsError::TooFewPoints { need: 2, got: volumes.len() });
    }
    let len = volumes.iter().map(Vec::len).min().unwrap_or(0);
    let mut changes: Vec<Vec<f64>> = vec![Vec::new(); volumes.len()];
    for t in 1..len {
        if volumes.iter().all(|v| v[t - 1] > 0.0) {
            for (c, v) in changes.iter_mut().zip(volumes) {
                c.push(v[t] / v[t - 1] - 1.0);
            }
        }
    }
    let m = changes[0].len();
    if m < 3 {
        return Err(MetricsError::InsufficientOverlap(m));
    }
    let stats: Vec<(f64, f64)> = changes.iter().map(|c| mean_std(c)).collect();
    if stats.iter().any(|&(_, s)| s == 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    let k = volumes.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in i + 1..k {
            let (mi, si) = stats[i];
            let (mj, sj) = stats[j];
            let cov = changes[i].iter().zip(&changes[j]).map(|(a, b)| (a - mi) * (b - mj)).sum::<f64>()
                / m as f64;
            let r = (cov / (si * sj)).clamp(-1.0, 1.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix { labels: labels.to_vec(), values, n_buckets: m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolMape {
    pub symbol: String,
    pub mape_pct: f64,
    pub mape_bps: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mape_pct: Option<f64>,
    pub mape_bps: Option<f64>,
    /// `None` when the PnL series has zero variance or fewer than 2 steps.
    pub sharpe: Option<f64>,
    pub total_pnl: Option<f64>,
    pub max_drawdown: Option<f64>,
    pub n_samples: usize,
    pub per_symbol: Vec<SymbolMape>,
}

impl MetricReport {
    /// Forecast-only report; per-symbol rows come from the tags.
    pub fn from_forecasts(
        symbols: &[String],
        actuals: &[f64],
        forecasts: &[f64],
    ) -> Result<Self, MetricsError> {
        let overall = mape(actuals, forecasts)?;
        let mut names: Vec<&String> = symbols.iter().collect();
        names.sort();
        names.dedup();
        let mut per_symbol = Vec::new();
        for name in names {
            let (a, f): (Vec<f64>, Vec<f64>) = symbols
                .iter()
                .zip(actuals.iter().zip(forecasts))
                .filter(|(s, _)| *s == name)
                .map(|(_, (&a, &f))| (a, f))
                .unzip();
            let m = mape(&a, &f)?;
            per_symbol.push(SymbolMape {
                symbol: name.clone(),
                mape_pct: m,
                mape_bps: pct_to_bps(m),
                n_samples: a.len(),
            });
        }
        Ok(MetricReport {
            mape_pct: Some(overall),
            mape_bps: Some(pct_to_bps(overall)),
            sharpe: None,
            total_pnl: None,
            max_drawdown: None,
            n_samples: actuals.len(),
            per_symbol,
        })
    }

    pub fn from_pnl(pnl: &[f64]) -> Self {
        MetricReport {
            mape_pct: None,
            mape_bps: None,
            sharpe: sharpe(pnl).ok(),
            total_pnl: Some(total_pnl(pnl)),
            max_drawdown: Some(max_drawdown(pnl)),
            n_samples: pnl.len(),
            per_symbol: Vec::new(),
        }
    }
}
