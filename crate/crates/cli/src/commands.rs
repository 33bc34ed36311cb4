use std::{
    collections::BTreeMap,
    fmt::Write as _,
    fs,
    path::{Path, PathBuf},
};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use log::{info, warn};
use lobforge::{
    backtest::{run_backtest, MidPredictor, ModelPredictor, PersistencePredictor},
    embedding::{embed_series, export_frame_png, merge_frames, EmbedConfig, GlobalStats, VolumeScaling},
    lob::{load_tape, load_trades, write_trades, SnapshotSeries, TimeRange, TradeEvent},
    metrics::{bucket_traded_volume, volume_correlation, MetricReport},
    models::{build_model, ArchSpec, Model, TrainConfig},
    sampling::{build_samples, SampleSet},
    synthetic::{SyntheticTape, TapeKind},
};
use serde_json::{json, Value};

use crate::{config::RunConfig, plot};

/// Version of the provenance block and sidecar layout.
pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

pub struct Ctx {
    pub cfg: RunConfig,
    pub command: &'static str,
}

impl Ctx {
    /// Provenance block: tool version, command, seed, inputs and the
    /// resolved config. Worker count is left out since it never changes
    /// results.
    fn provenance(&self, inputs: &[&Path]) -> Value {
        let mut cfg = self.cfg.clone();
        cfg.threads = 0;
        json!({
            "tool": "lobforge",
            "version": env!("CARGO_PKG_VERSION"),
            "format_version": ARTIFACT_FORMAT_VERSION,
            "command": self.command,
            "seed": self.cfg.seed,
            "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "config": cfg,
        })
    }

    fn range(&self) -> TimeRange {
        TimeRange {
            from_ms: self.cfg.from_ms.unwrap_or(i64::MIN),
            to_ms: self.cfg.to_ms.unwrap_or(i64::MAX),
        }
    }

    fn load_series(&self, path: &Path) -> Result<SnapshotSeries> {
        let s = load_tape(path, self.cfg.symbol.as_deref(), self.range())
            .with_context(|| format!("loading tape {}", path.display()))?;
        info!("{}: {} snapshots of {} at depth {}, interval {} ms", path.display(), s.len(), s.symbol, s.depth(), s.nominal_interval_ms);
        Ok(s)
    }

    /// Embedding config with global statistics fitted on the leading
    /// training share of the tape when the scaling needs them.
    fn embed_config(&self, series: &SnapshotSeries) -> Result<EmbedConfig> {
        let mut embed = self.cfg.sample_spec()?.embed;
        if embed.needs_stats() {
            let cut = ((series.len() as f64 * self.cfg.sample.train_fraction).ceil() as usize).clamp(1, series.len());
            embed.global_stats = GlobalStats::fit(&series.snapshots[..cut]);
        }
        Ok(embed)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => create_dir(dir),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(v)? + "\n"))
}

/// Formats without their own metadata slot get a `<file>.provenance.json`.
fn write_sidecar(path: &Path, provenance: &Value) -> Result<()> {
    let mut name = path.as_os_str().to_owned();
    name.push(".provenance.json");
    write_json(Path::new(&name), provenance)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynKind {
    Flat,
    Drift,
    RandomWalk,
    MeanReverting,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    #[arg(value_enum)]
    pub kind: SynKind,
    #[arg(long, default_value_t = 1_000)]
    pub snapshots: usize,
    #[arg(long, default_value_t = 10)]
    pub depth: usize,
    #[arg(long, default_value_t = 200)]
    pub interval_ms: i64,
    #[arg(long, default_value_t = 0)]
    pub trades_per_step: usize,
    /// Mid change per step for `drift`.
    #[arg(long, default_value_t = 0.01)]
    pub drift: f64,
    /// Noise std per step (drift, random-walk and mean-reverting).
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    /// Reversion speed for `mean-reverting`.
    #[arg(long, default_value_t = 0.05)]
    pub theta: f64,
    #[arg(long, default_value_t = 100.0)]
    pub base_price: f64,
    /// Output directory for book.jsonl and trades.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn synthetic(ctx: &Ctx, a: &SyntheticArgs) -> Result<()> {
    let kind = match a.kind {
        SynKind::Flat => TapeKind::Flat,
        SynKind::Drift => TapeKind::Drift { per_step: a.drift, noise_std: a.noise },
        SynKind::RandomWalk => TapeKind::RandomWalk { step_std: a.noise },
        SynKind::MeanReverting => TapeKind::MeanReverting { theta: a.theta, sigma: a.noise },
    };
    if a.snapshots < 2 || a.depth == 0 || a.interval_ms <= 0 {
        bail!(crate::config::ConfigError::Invalid {
            key: "synthetic",
            reason: "need at least 2 snapshots, depth >= 1 and a positive interval".into(),
        });
    }
    let gen = SyntheticTape {
        kind,
        symbol: ctx.cfg.symbol.clone().unwrap_or_else(|| "SYN".into()),
        snapshots: a.snapshots,
        depth: a.depth,
        interval_ms: a.interval_ms,
        base_price: a.base_price,
        trades_per_step: a.trades_per_step,
        seed: ctx.cfg.seed,
        ..Default::default()
    };
    let data = gen.generate();
    create_dir(&a.out)?;
    let mut prov = ctx.provenance(&[]);
    prov["generator"] = serde_json::to_value(&gen)?;
    let book = a.out.join("book.jsonl");
    data.series.write_jsonl(&book)?;
    write_sidecar(&book, &prov)?;
    if !data.trades.is_empty() {
        let trades = a.out.join("trades.jsonl");
        write_trades(&trades, &data.trades)?;
        write_sidecar(&trades, &prov)?;
    }
    info!("wrote {} snapshots and {} trades to {}", data.series.len(), data.trades.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Raw snapshot JSONL (plain or gzip).
    pub input: PathBuf,
    /// Raw trade-print JSONL to clean alongside.
    #[arg(long)]
    pub trades: Option<PathBuf>,
    /// Canonical snapshot tape to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Where to write the cleaned trades (default: `<out>.trades.jsonl`).
    #[arg(long)]
    pub trades_out: Option<PathBuf>,
}

pub fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    let series = ctx.load_series(&a.input)?;
    ensure_parent(&a.out)?;
    series.write_jsonl(&a.out)?;
    write_sidecar(&a.out, &ctx.provenance(&[&a.input]))?;
    if let Some(raw) = &a.trades {
        let trades = load_trades(raw, Some(&series.symbol), ctx.range())
            .with_context(|| format!("loading trades {}", raw.display()))?;
        let out = a.trades_out.clone().unwrap_or_else(|| a.out.with_extension("trades.jsonl"));
        ensure_parent(&out)?;
        write_trades(&out, &trades)?;
        write_sidecar(&out, &ctx.provenance(&[raw]))?;
        info!("wrote {} trades to {}", trades.len(), out.display());
    }
    info!("wrote {} snapshots to {}", series.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    pub tape: PathBuf,
    /// Output directory for the frame PNGs.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of leading snapshots to export.
    #[arg(long, default_value_t = 64)]
    pub limit: usize,
}

pub fn embed(ctx: &Ctx, a: &EmbedArgs) -> Result<()> {
    let series = ctx.load_series(&a.tape)?;
    let cfg = ctx.embed_config(&series)?;
    let snaps = &series.snapshots[..a.limit.min(series.len())];
    let frames = embed_series(snaps, &cfg)?;
    create_dir(&a.out)?;
    let prov = ctx.provenance(&[&a.tape]).to_string();
    let text = [("lobforge:provenance", prov.as_str())];
    // z-scores leave [0, 255]; clamp them for display
    let clamp = cfg.volume_scaling == VolumeScaling::Zscore;
    for (i, (f, s)) in frames.iter().zip(snaps).enumerate() {
        let path = a.out.join(format!("frame_{i:05}_{}.png", s.ts_ms));
        export_frame_png(&f.to_tensor(), &path, clamp, &text)?;
    }
    let (_, l) = ctx.cfg.aggregation()?;
    if frames.len() >= l {
        let refs: Vec<_> = frames[..l].iter().collect();
        export_frame_png(&merge_frames(&refs)?, &a.out.join("merged_window.png"), clamp, &text)?;
    }
    info!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub tape: PathBuf,
    /// Sample-set container to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn sample(ctx: &Ctx, a: &SampleArgs) -> Result<()> {
    let series = ctx.load_series(&a.tape)?;
    let mut spec = ctx.cfg.sample_spec()?;
    spec.embed = ctx.embed_config(&series)?;
    spec.validate(series.nominal_interval_ms)?;
    let mut set = build_samples(&series, &spec)?;
    set.fit_scaler();
    let prov = ctx.provenance(&[&a.tape]);
    set.provenance = Some(prov.clone());
    ensure_parent(&a.out)?;
    set.save(&a.out)?;
    write_sidecar(&a.out, &prov)?;
    info!(
        "wrote {} samples of shape {:?} to {} ({} empty buckets skipped)",
        set.len(),
        set.model_input_shape(),
        a.out.display(),
        set.skipped_empty_buckets
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub set: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn train(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let set = SampleSet::load(&a.set)?;
    let kind = ctx.cfg.arch()?;
    let (mut train, _) = set.split_by_time(ctx.cfg.sample.train_fraction)?;
    if train.len() > ctx.cfg.sample.max_train_samples {
        train.truncate(ctx.cfg.sample.max_train_samples);
        train.fit_scaler();
    }
    let mut model = build_model(&ArchSpec::for_set(kind, &train), ctx.cfg.seed)?;
    model.check_compatible(&train).with_context(|| {
        format!("{} cannot train on this sample set; rebuild it with a matching --repr", kind)
    })?;
    info!("training {kind} ({} parameters) on {} samples", model.parameter_count(), train.len());
    let t = &ctx.cfg.train;
    let history = model
        .train(&train, &TrainConfig { epochs: t.epochs, batch_size: t.batch_size, lr: t.lr, seed: ctx.cfg.seed })?
        .to_vec();
    let mut prov = ctx.provenance(&[&a.set]);
    prov["train_samples"] = json!(train.len());
    prov["train_end_ms"] = json!(train.samples.iter().map(|s| s.t_target_ms).max());
    prov["final_loss"] = json!(history.last());
    model.provenance = Some(prov);
    ensure_parent(&a.out)?;
    model.save(&a.out)?;
    write_sidecar(&a.out, model.provenance.as_ref().expect("set above"))?;
    info!("loss {:.6} -> {:.6}; wrote {}", history[0], history[history.len() - 1], a.out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub checkpoint: PathBuf,
    pub set: PathBuf,
    /// Which time split of the set to forecast.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    /// Forecast CSV to write; metrics go to `<out>.metrics.json`.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn predict(ctx: &Ctx, a: &PredictArgs) -> Result<()> {
    let model = Model::load(&a.checkpoint)?;
    let set = SampleSet::load(&a.set)?;
    let eval = match a.split {
        SplitArg::All => set,
        SplitArg::Train => set.split_by_time(ctx.cfg.sample.train_fraction)?.0,
        SplitArg::Test => set.split_by_time(ctx.cfg.sample.train_fraction)?.1,
    };
    let forecasts = model.predict(&eval)?;
    let mut csv = String::from("t_anchor_ms,symbol,leg,anchor_mid,forecast,actual\n");
    let (mut labels, mut actual, mut pred) = (Vec::new(), Vec::new(), Vec::new());
    for (s, f) in eval.samples.iter().zip(&forecasts) {
        let sym = eval.symbol_of(s);
        for (k, (leg, &p)) in s.legs.iter().zip(f).enumerate() {
            let _ = writeln!(csv, "{},{sym},{k},{},{p},{}", s.t_anchor_ms, leg.anchor_mid, leg.future_mid);
            labels.push(if s.legs.len() > 1 { format!("{sym}#{k}") } else { sym.to_owned() });
            actual.push(leg.future_mid);
            pred.push(p);
        }
    }
    write_text(&a.out, &csv)?;
    let prov = ctx.provenance(&[&a.checkpoint, &a.set]);
    write_sidecar(&a.out, &prov)?;
    let report = MetricReport::from_forecasts(&labels, &actual, &pred)?;
    let mut metrics_path = a.out.as_os_str().to_owned();
    metrics_path.push(".metrics.json");
    write_json(Path::new(&metrics_path), &json!({ "metrics": report, "provenance": prov }))?;
    info!(
        "{} forecasts, MAPE {:.6}% ({:.3} bps); wrote {}",
        pred.len(),
        report.mape_pct.unwrap_or(f64::NAN),
        report.mape_bps.unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    /// Checkpoint, or `persistence` for the no-change baseline.
    pub checkpoint: String,
    pub tape: PathBuf,
    #[arg(long)]
    pub trades: Option<PathBuf>,
    /// Output directory for pnl.csv, summary.json and pnl.svg.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn backtest(ctx: &Ctx, a: &BacktestArgs) -> Result<()> {
    let model = match a.checkpoint.as_str() {
        "persistence" => None,
        p => Some(Model::load(Path::new(p))?),
    };
    let mut series = ctx.load_series(&a.tape)?;
    // replay only what the model has not been trained on
    let train_end = model
        .as_ref()
        .and_then(|m| m.provenance.as_ref())
        .and_then(|p| p.get("train_end_ms"))
        .and_then(Value::as_i64);
    if let Some(t) = train_end {
        if series.snapshots[0].ts_ms <= t {
            series = series.slice_time(t + 1, i64::MAX).with_context(|| {
                format!("tape {} has no snapshots after the training window (ends at {t})", a.tape.display())
            })?;
            info!("starting replay after the training window: {} snapshots left", series.len());
        }
    }
    let trades: Vec<TradeEvent> = match &a.trades {
        Some(p) => load_trades(p, Some(&series.symbol), ctx.range())
            .with_context(|| format!("loading trades {}", p.display()))?,
        None => {
            if ctx.cfg.strategy.use_trade_tape {
                warn!("no trade tape given; only crossing fills can occur");
            }
            Vec::new()
        }
    };
    let mut predictor: Box<dyn MidPredictor + '_> = match &model {
        Some(m) => Box::new(ModelPredictor::new(m)?),
        None => Box::new(PersistencePredictor),
    };
    let result = run_backtest(&series, &trades, predictor.as_mut(), &ctx.cfg.strategy)?;
    let summary = result.summary();
    let mut inputs: Vec<&Path> = vec![Path::new(&a.checkpoint), &a.tape];
    if let Some(t) = &a.trades {
        inputs.push(t);
    }
    let prov = ctx.provenance(&inputs);
    create_dir(&a.out)?;
    let csv = a.out.join("pnl.csv");
    result.write_csv(&csv)?;
    write_sidecar(&csv, &prov)?;
    write_json(
        &a.out.join("summary.json"),
        &json!({
            "summary": summary,
            "metrics": MetricReport::from_pnl(&result.pnl()),
            "provenance": prov,
        }),
    )?;
    let title = format!("{} equity, {}", series.symbol, model.as_ref().map_or("Persistence".into(), |m| m.kind().to_string()));
    let svg = plot::equity_svg(&result.equity(), summary.log_growth.as_ref(), &title, &prov.to_string());
    write_text(&a.out.join("pnl.svg"), &svg)?;
    info!(
        "{} steps, {} maker / {} taker fills, total pnl {:.6}, sharpe {:?}",
        summary.steps, summary.maker_fills, summary.taker_fills, summary.total_pnl, summary.sharpe
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Trade-print tapes; prints are grouped by symbol.
    #[arg(required = true)]
    pub trades: Vec<PathBuf>,
    #[arg(long, default_value_t = 60_000)]
    pub bucket_ms: i64,
    /// Output directory for corr.csv, corr.json and corr.svg.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn analyze(ctx: &Ctx, a: &AnalyzeArgs) -> Result<()> {
    if a.bucket_ms <= 0 {
        bail!(crate::config::ConfigError::Invalid { key: "bucket_ms", reason: "must be positive".into() });
    }
    let mut by_symbol: BTreeMap<String, Vec<TradeEvent>> = BTreeMap::new();
    for p in &a.trades {
        for t in load_trades(p, None, ctx.range()).with_context(|| format!("loading trades {}", p.display()))? {
            by_symbol.entry(t.symbol.clone()).or_default().push(t);
        }
    }
    let t0 = by_symbol.values().flatten().map(|t| t.ts_ms).min().unwrap_or(0);
    let t1 = by_symbol.values().flatten().map(|t| t.ts_ms).max().unwrap_or(0);
    let n = ((t1 - t0) / a.bucket_ms + 1) as usize;
    let labels: Vec<String> = by_symbol.keys().cloned().collect();
    let volumes: Vec<Vec<f64>> = by_symbol
        .values_mut()
        .map(|v| {
            v.sort_by_key(|t| t.ts_ms);
            bucket_traded_volume(v, t0, a.bucket_ms, n)
        })
        .collect();
    let corr = volume_correlation(&labels, &volumes)?;
    let inputs: Vec<&Path> = a.trades.iter().map(PathBuf::as_path).collect();
    let prov = ctx.provenance(&inputs);
    create_dir(&a.out)?;
    let mut csv = format!("symbol,{}\n", labels.join(","));
    for (label, row) in labels.iter().zip(&corr.values) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        let _ = writeln!(csv, "{label},{}", cells.join(","));
    }
    let path = a.out.join("corr.csv");
    write_text(&path, &csv)?;
    write_sidecar(&path, &prov)?;
    write_json(&a.out.join("corr.json"), &json!({ "bucket_ms": a.bucket_ms, "correlation": corr, "provenance": prov }))?;
    let title = format!("traded-volume change correlation, {} ms buckets", a.bucket_ms);
    write_text(&a.out.join("corr.svg"), &plot::heatmap_svg(&corr, &title, &prov.to_string()))?;
    info!("{} symbols over {} buckets; wrote {}", labels.len(), corr.n_buckets, a.out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Artifact files or directories (JSON summaries and SVG charts).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// HTML file to write.
    #[arg(long)]
    pub out: PathBuf,
}

fn collect_artifacts(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            for e in fs::read_dir(p).with_context(|| format!("reading {}", p.display()))? {
                out.push(e?.path());
            }
        } else if p.exists() {
            out.push(p.clone());
        } else {
            bail!(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} does not exist", p.display())));
        }
    }
    out.retain(|p| {
        let name = p.to_string_lossy();
        (name.ends_with(".json") && !name.ends_with(".provenance.json")) || name.ends_with(".svg")
    });
    out.sort();
    out.dedup();
    Ok(out)
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Scalar fields of a JSON object, nested objects flattened with dots.
fn flatten(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                if k != "provenance" {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    flatten(&key, x, rows);
                }
            }
        }
        Value::Array(a) if a.iter().any(|x| x.is_object() || x.is_array()) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}[{i}]"), x, rows);
            }
        }
        other => rows.push((prefix.to_owned(), other.to_string())),
    }
}

pub fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    let files = collect_artifacts(&a.inputs)?;
    if files.is_empty() {
        bail!(crate::config::ConfigError::Invalid { key: "inputs", reason: "no JSON or SVG artifacts found".into() });
    }
    let inputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    let prov = ctx.provenance(&inputs);
    let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>lobforge report</title>\n");
    let _ = writeln!(html, "<script type=\"application/json\" id=\"provenance\">{}</script>", prov.to_string().replace("</", "<\\/"));
    html.push_str("<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}td{border:1px solid #ccc;padding:2px 8px}</style>\n</head><body>\n<h1>lobforge report</h1>\n");
    for f in &files {
        let text = fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let _ = writeln!(html, "<h2>{}</h2>", html_escape(&f.display().to_string()));
        if f.extension().is_some_and(|e| e == "svg") {
            html.push_str(&text);
        } else {
            let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
            let mut rows = Vec::new();
            flatten("", &v, &mut rows);
            html.push_str("<table>\n");
            for (k, x) in rows {
                let _ = writeln!(html, "<tr><td>{}</td><td>{}</td></tr>", html_escape(&k), html_escape(&x));
            }
            html.push_str("</table>\n");
        }
    }
    html.push_str("</body></html>\n");
    write_text(&a.out, &html)?;
    info!("report over {} artifacts written to {}", files.len(), a.out.display());
    Ok(())
}
