//! Supervised samples from a snapshot series.
//!
//! Inputs are always stored in the stacked `L × D × C` layout as f32; the
//! merged view is materialized on demand by [`SampleSet::model_input`].

use std::{
    fs::File,
    io::{BufReader, BufWriter, Read, Write},
    path::Path,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{
    embedding::{embed_series, merge_stacked, EmbedConfig, EmbedError, FrameMatrix},
    lob::{LobError, SnapshotSeries},
    nn::Tensor,
    par,
};

pub const SAMPLESET_MAGIC: &[u8; 4] = b"LOBS";
pub const SAMPLESET_VERSION: u16 = 1;

/// Forecast horizons used in the experiments, in milliseconds.
pub const HORIZON_GRID_MS: [i64; 6] = [200, 1_000, 5_000, 10_000, 30_000, 60_000];

/// Default cap on training samples taken from one tape.
pub const DEFAULT_TRAIN_SAMPLES: usize = 5_000;

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("series too short: {0}")]
    SeriesTooShort(String),
    #[error("invalid sample spec: {0}")]
    InvalidSpec(String),
    #[error("sample sets differ: {0}")]
    SpecMismatch(String),
    #[error("{unmatched} of {total} samples have no partner within {tolerance_ms} ms")]
    AlignmentGap { unmatched: usize, total: usize, tolerance_ms: i64 },
    #[error("sample set file: {0}")]
    Format(String),
    #[error("unsupported sample set version {0}")]
    VersionMismatch(u16),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Lob(#[from] LobError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Aggregation {
    /// Overlapping windows of the last `frame_count` snapshots, stride 1.
    Window,
    /// Non-overlapping wall-clock buckets of `ms` milliseconds.
    Interval { ms: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Delta,
    Returns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Last,
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Stacked,
    Merged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub aggregation: Aggregation,
    pub frame_count: usize,
    pub horizon_ms: i64,
    pub target_kind: TargetKind,
    pub anchor: Anchor,
    pub representation: Representation,
    pub embed: EmbedConfig,
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            aggregation: Aggregation::Window,
            frame_count: 30,
            horizon_ms: 1_000,
            target_kind: TargetKind::Delta,
            anchor: Anchor::Last,
            representation: Representation::Stacked,
            embed: EmbedConfig::default(),
        }
    }
}

impl SampleSpec {
    pub fn validate(&self, nominal_interval_ms: i64) -> Result<(), SampleError> {
        if self.frame_count == 0 {
            return Err(SampleError::InvalidSpec("frame count must be at least 1".into()));
        }
        if self.horizon_ms <= 0 || self.horizon_ms < nominal_interval_ms {
            return Err(SampleError::InvalidSpec(format!(
                "horizon {} ms is shorter than the snapshot interval {nominal_interval_ms} ms",
                self.horizon_ms
            )));
        }
        if let Aggregation::Interval { ms } = self.aggregation {
            if ms <= 0 {
                return Err(SampleError::InvalidSpec(format!("interval {ms} ms must be positive")));
            }
        }
        self.embed.validate()?;
        Ok(())
    }

    /// Equality up to per-symbol embedding statistics.
    fn compatible(&self, other: &SampleSpec) -> bool {
        let mut a = *self;
        let mut b = *other;
        a.embed.global_stats = None;
        b.embed.global_stats = None;
        a == b
    }
}

/// Regression target from the anchor and future mids: a price delta or a simple return.
pub fn make_target(anchor_mid: f64, future_mid: f64, kind: TargetKind) -> f64 {
    match kind {
        TargetKind::Delta => future_mid - anchor_mid,
        TargetKind::Returns => future_mid / anchor_mid - 1.0,
    }
}

/// Inverse of [`make_target`].
pub fn decode_prediction(pred: f64, anchor_mid: f64, kind: TargetKind) -> f64 {
    match kind {
        TargetKind::Delta => anchor_mid + pred,
        TargetKind::Returns => anchor_mid * (1.0 + pred),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub anchor_mid: f64,
    pub target: f64,
    pub future_mid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Stacked `L × D × C` input, row-major.
    pub input: Vec<f32>,
    pub t_first_ms: i64,
    pub t_anchor_ms: i64,
    pub t_target_ms: i64,
    /// Index into [`SampleSet::symbols`].
    pub symbol: u16,
    /// One entry per forecast asset (two for one-shot pairs).
    pub legs: Vec<Leg>,
}

/// Per-component target standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaler {
    pub fn identity(dim: usize) -> Self {
        TargetScaler { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fits mean and population std per component; components with fewer
    /// than two samples or zero spread get the identity.
    pub fn fit(targets: &[Vec<f64>]) -> Self {
        let dim = targets.first().map_or(1, Vec::len);
        let mut s = TargetScaler::identity(dim);
        if targets.len() < 2 {
            return s;
        }
        let n = targets.len() as f64;
        for k in 0..dim {
            let mean = targets.iter().map(|t| t[k]).sum::<f64>() / n;
            let var = targets.iter().map(|t| (t[k] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                s.mean[k] = mean;
                s.std[k] = var.sqrt();
            }
        }
        s
    }

    pub fn apply(&self, t: &[f64]) -> Vec<f64> {
        t.iter().enumerate().map(|(k, &x)| (x - self.mean[k]) / self.std[k]).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(k, &x)| x * self.std[k] + self.mean[k]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    All,
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub spec: SampleSpec,
    /// Stacked input shape `[channels, D, C]`; channels is `2L` for pairs.
    pub input_shape: [usize; 3],
    pub symbols: Vec<String>,
    pub samples: Vec<Sample>,
    pub scaler: TargetScaler,
    pub split: Split,
    pub nominal_interval_ms: i64,
    pub skipped_empty_buckets: usize,
    /// Free-form provenance (resolved config, seed) carried into files.
    pub provenance: Option<serde_json::Value>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.samples.first().map_or(1, |s| s.legs.len())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn symbol_of(&self, s: &Sample) -> &str {
        &self.symbols[s.symbol as usize]
    }

    /// Per-sample input in the representation the spec asks for.
    pub fn model_input(&self, i: usize) -> Tensor {
        let data = self.samples[i].input.iter().map(|&x| x as f64).collect();
        let stacked = Tensor::new(self.input_shape.to_vec(), data).expect("input shape");
        match self.spec.representation {
            Representation::Stacked => stacked,
            Representation::Merged => merge_stacked(&stacked).expect("stacked rank"),
        }
    }

    /// Model-input shape (without batch axis).
    pub fn model_input_shape(&self) -> Vec<usize> {
        let [l, d, c] = self.input_shape;
        match self.spec.representation {
            Representation::Stacked => vec![l, d, c],
            Representation::Merged => vec![d, c * l],
        }
    }

    pub fn targets(&self) -> Vec<Vec<f64>> {
        self.samples.iter().map(|s| s.legs.iter().map(|l| l.target).collect()).collect()
    }

    /// Refits the target scaler on this set's targets.
    pub fn fit_scaler(&mut self) {
        self.scaler = TargetScaler::fit(&self.targets());
    }

    /// Keeps the earliest `max` samples.
    pub fn truncate(&mut self, max: usize) {
        self.samples.truncate(max);
    }

    /// Chronological split. Training takes the first `train_fraction` of
    /// samples; test samples start strictly after the last training target
    /// (inputs included), so nothing from the test period leaks backwards.
    /// The training scaler is fitted and shared with the test set.
    pub fn split_by_time(mut self, train_fraction: f64) -> Result<(SampleSet, SampleSet), SampleError> {
        let n = self.samples.len();
        let k = ((n as f64) * train_fraction).floor() as usize;
        if k == 0 || k >= n {
            return Err(SampleError::SeriesTooShort(format!(
                "cannot split {n} samples at fraction {train_fraction}"
            )));
        }
        let test_all = self.samples.split_off(k);
        let cut = self.samples.iter().map(|s| s.t_target_ms).max().unwrap_or(i64::MIN);
        let test_samples: Vec<Sample> = test_all.into_iter().filter(|s| s.t_first_ms > cut).collect();
        if test_samples.is_empty() {
            return Err(SampleError::SeriesTooShort("no test samples after the train cut".into()));
        }
        let mut train = self;
        train.split = Split::Train;
        train.fit_scaler();
        let test = SampleSet {
            samples: test_samples,
            split: Split::Test,
            ..train.clone_meta()
        };
        Ok((train, test))
    }

    fn clone_meta(&self) -> SampleSet {
        SampleSet {
            spec: self.spec,
            input_shape: self.input_shape,
            symbols: self.symbols.clone(),
            samples: Vec::new(),
            scaler: self.scaler.clone(),
            split: self.split,
            nominal_interval_ms: self.nominal_interval_ms,
            skipped_empty_buckets: self.skipped_empty_buckets,
            provenance: self.provenance.clone(),
        }
    }
}

fn check_series(series: &SnapshotSeries, spec: &SampleSpec) -> Result<(), SampleError> {
    spec.validate(series.nominal_interval_ms)?;
    if series.len() < spec.frame_count + 1 {
        return Err(SampleError::SeriesTooShort(format!(
            "{} snapshots for {} frames plus a target",
            series.len(),
            spec.frame_count
        )));
    }
    Ok(())
}

fn stacked_input(frames: &[&FrameMatrix]) -> Vec<f32> {
    frames.iter().flat_map(|f| f.data.iter().map(|&x| x as f32)).collect()
}

/// First index whose timestamp is `>= ts`.
fn lookup(ts: &[i64], at: i64) -> Option<usize> {
    let j = ts.partition_point(|&t| t < at);
    (j < ts.len()).then_some(j)
}

fn base_set(series: &SnapshotSeries, spec: &SampleSpec, frames: &[FrameMatrix]) -> SampleSet {
    let (d, c) = frames.first().map_or((0, 0), |f| (f.rows, f.cols));
    SampleSet {
        spec: *spec,
        input_shape: [spec.frame_count, d, c],
        symbols: vec![series.symbol.clone()],
        samples: Vec::new(),
        scaler: TargetScaler::identity(1),
        split: Split::All,
        nominal_interval_ms: series.nominal_interval_ms,
        skipped_empty_buckets: 0,
        provenance: None,
    }
}

fn leg_for(spec: &SampleSpec, first_mid: f64, last_mid: f64, future_mid: f64) -> Leg {
    let anchor_mid = match spec.anchor {
        Anchor::Last => last_mid,
        Anchor::First => first_mid,
    };
    Leg { anchor_mid, target: make_target(anchor_mid, future_mid, spec.target_kind), future_mid }
}

/// Overlapping windows: one sample per anchor index `i >= L-1` whose
/// horizon lands inside the series.
pub fn window_samples(series: &SnapshotSeries, spec: &SampleSpec) -> Result<SampleSet, SampleError> {
    check_series(series, spec)?;
    let frames = embed_series(&series.snapshots, &spec.embed)?;
    let ts: Vec<i64> = series.snapshots.iter().map(|s| s.ts_ms).collect();
    let mids = series.mids();
    let l = spec.frame_count;
    let n = series.len();
    let built = par::map_range(n - (l - 1), |k| {
        let i = k + l - 1;
        let j = lookup(&ts, ts[i] + spec.horizon_ms)?;
        let refs: Vec<&FrameMatrix> = frames[i + 1 - l..=i].iter().collect();
        Some(Sample {
            input: stacked_input(&refs),
            t_first_ms: ts[i + 1 - l],
            t_anchor_ms: ts[i],
            t_target_ms: ts[j],
            symbol: 0,
            legs: vec![leg_for(spec, mids[i + 1 - l], mids[i], mids[j])],
        })
    });
    let mut set = base_set(series, spec, &frames);
    set.samples = built.into_iter().flatten().collect();
    if set.samples.is_empty() {
        return Err(SampleError::SeriesTooShort("no anchor reaches the horizon".into()));
    }
    Ok(set)
}

/// Bucket index for a timestamp: buckets are `[t0 + kT, t0 + (k+1)T]`, and
/// a snapshot exactly on a border belongs to the earlier bucket.
pub fn bucket_of(ts: i64, t0: i64, interval_ms: i64) -> usize {
    let off = ts - t0;
    if off <= 0 {
        0
    } else {
        ((off + interval_ms - 1) / interval_ms - 1) as usize
    }
}

/// Non-overlapping wall-clock buckets, each reduced to exactly L frames
/// (last L kept; short buckets repeat their earliest frame at the front).
pub fn interval_samples(series: &SnapshotSeries, spec: &SampleSpec) -> Result<SampleSet, SampleError> {
    let Aggregation::Interval { ms: interval } = spec.aggregation else {
        return Err(SampleError::InvalidSpec("interval sampler needs interval aggregation".into()));
    };
    spec.validate(series.nominal_interval_ms)?;
    let ts: Vec<i64> = series.snapshots.iter().map(|s| s.ts_ms).collect();
    let first = ts[0];
    let t0 = first.div_euclid(interval) * interval;
    let span = ts[ts.len() - 1] - t0;
    if span < 2 * interval {
        return Err(SampleError::SeriesTooShort(format!(
            "series spans {span} ms, need at least two {interval} ms intervals"
        )));
    }
    let frames = embed_series(&series.snapshots, &spec.embed)?;
    let mids = series.mids();
    let n_buckets = bucket_of(ts[ts.len() - 1], t0, interval) + 1;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_buckets];
    for (i, &t) in ts.iter().enumerate() {
        members[bucket_of(t, t0, interval)].push(i);
    }
    let skipped = members.iter().filter(|m| m.is_empty()).count();
    let l = spec.frame_count;
    let built = par::map_slice(&members, |idx| {
        let &last = idx.last()?;
        let j = lookup(&ts, ts[last] + spec.horizon_ms)?;
        let take = &idx[idx.len().saturating_sub(l)..];
        let mut chosen: Vec<usize> = vec![take[0]; l - take.len()];
        chosen.extend_from_slice(take);
        let refs: Vec<&FrameMatrix> = chosen.iter().map(|&k| &frames[k]).collect();
        Some(Sample {
            input: stacked_input(&refs),
            t_first_ms: ts[idx[0]],
            t_anchor_ms: ts[last],
            t_target_ms: ts[j],
            symbol: 0,
            legs: vec![leg_for(spec, mids[chosen[0]], mids[last], mids[j])],
        })
    });
    let mut set = base_set(series, spec, &frames);
    set.skipped_empty_buckets = skipped;
    set.samples = built.into_iter().flatten().collect();
    if set.samples.is_empty() {
        return Err(SampleError::SeriesTooShort("no bucket reaches the horizon".into()));
    }
    Ok(set)
}

/// Dispatches on the spec's aggregation.
pub fn build_samples(series: &SnapshotSeries, spec: &SampleSpec) -> Result<SampleSet, SampleError> {
    match spec.aggregation {
        Aggregation::Window => window_samples(series, spec),
        Aggregation::Interval { .. } => interval_samples(series, spec),
    }
}

fn ensure_compatible(a: &SampleSet, b: &SampleSet) -> Result<(), SampleError> {
    if !a.spec.compatible(&b.spec) {
        return Err(SampleError::SpecMismatch("sample specs differ".into()));
    }
    if a.input_shape != b.input_shape {
        return Err(SampleError::SpecMismatch(format!(
            "input shapes {:?} vs {:?}",
            a.input_shape, b.input_shape
        )));
    }
    if a.output_dim() != b.output_dim() {
        return Err(SampleError::SpecMismatch("target dimensions differ".into()));
    }
    Ok(())
}

/// Time-interleaved union of single-symbol sets; samples keep their symbol
/// tag and the scaler is refitted on the union.
pub fn union_sets(sets: &[SampleSet]) -> Result<SampleSet, SampleError> {
    let first = sets.first().ok_or_else(|| SampleError::SpecMismatch("no sets".into()))?;
    let mut out = first.clone_meta();
    out.symbols.clear();
    let mut all: Vec<(i64, usize, Sample)> = Vec::new();
    for (k, set) in sets.iter().enumerate() {
        ensure_compatible(first, set)?;
        for s in &set.samples {
            let name = set.symbol_of(s);
            let idx = match out.symbols.iter().position(|x| x == name) {
                Some(i) => i,
                None => {
                    out.symbols.push(name.to_owned());
                    out.symbols.len() - 1
                }
            };
            let mut s = s.clone();
            s.symbol = idx as u16;
            all.push((s.t_anchor_ms, k, s));
        }
    }
    all.sort_by_key(|(t, k, _)| (*t, *k));
    out.samples = all.into_iter().map(|(_, _, s)| s).collect();
    out.nominal_interval_ms = sets.iter().map(|s| s.nominal_interval_ms).max().unwrap_or(0);
    out.fit_scaler();
    Ok(out)
}

/// Pairs two single-symbol sets by nearest anchor time (within half the
/// nominal interval). Inputs are concatenated along the channel axis and
/// targets become `[a, b]`.
pub fn pair_oneshot(a: &SampleSet, b: &SampleSet) -> Result<SampleSet, SampleError> {
    ensure_compatible(a, b)?;
    let tol = a.nominal_interval_ms.max(b.nominal_interval_ms) / 2;
    let bt: Vec<i64> = b.samples.iter().map(|s| s.t_anchor_ms).collect();
    let mut out = a.clone_meta();
    out.input_shape[0] *= 2;
    out.symbols = vec![format!(
        "{}+{}",
        a.symbols.first().map_or("", String::as_str),
        b.symbols.first().map_or("", String::as_str)
    )];
    let mut unmatched = 0;
    for s in &a.samples {
        let j = bt.partition_point(|&t| t < s.t_anchor_ms);
        let best = [j.checked_sub(1), (j < bt.len()).then_some(j)]
            .into_iter()
            .flatten()
            .min_by_key(|&k| ((bt[k] - s.t_anchor_ms).abs(), k));
        match best.filter(|&k| (bt[k] - s.t_anchor_ms).abs() <= tol) {
            Some(k) => {
                let partner = &b.samples[k];
                let mut input = s.input.clone();
                input.extend_from_slice(&partner.input);
                let mut legs = s.legs.clone();
                legs.extend_from_slice(&partner.legs);
                out.samples.push(Sample {
                    input,
                    t_first_ms: s.t_first_ms.min(partner.t_first_ms),
                    t_anchor_ms: s.t_anchor_ms.max(partner.t_anchor_ms),
                    t_target_ms: s.t_target_ms.max(partner.t_target_ms),
                    symbol: 0,
                    legs,
                });
            }
            None => unmatched += 1,
        }
    }
    let total = a.samples.len();
    if total == 0 || unmatched * 10 > total {
        return Err(SampleError::AlignmentGap { unmatched, total, tolerance_ms: tol });
    }
    out.fit_scaler();
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct SetHeader {
    spec: SampleSpec,
    input_shape: [usize; 3],
    symbols: Vec<String>,
    scaler: TargetScaler,
    split: Split,
    nominal_interval_ms: i64,
    skipped_empty_buckets: usize,
    n_samples: usize,
    output_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

impl SampleSet {
    /// Little-endian container: `LOBS`, u16 version, u32 header length,
    /// JSON header, then per sample: f32 input, u16 symbol, i64 first /
    /// anchor / target times, and per leg f64 anchor mid, target, future mid.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = SetHeader {
            spec: self.spec,
            input_shape: self.input_shape,
            symbols: self.symbols.clone(),
            scaler: self.scaler.clone(),
            split: self.split,
            nominal_interval_ms: self.nominal_interval_ms,
            skipped_empty_buckets: self.skipped_empty_buckets,
            n_samples: self.samples.len(),
            output_dim: self.output_dim(),
            provenance: self.provenance.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(SAMPLESET_MAGIC)?;
        w.write_all(&SAMPLESET_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        for s in &self.samples {
            for x in &s.input {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&s.symbol.to_le_bytes())?;
            for t in [s.t_first_ms, s.t_anchor_ms, s.t_target_ms] {
                w.write_all(&t.to_le_bytes())?;
            }
            for l in &s.legs {
                for v in [l.anchor_mid, l.target, l.future_mid] {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, SampleError> {
        let fmt = |e: std::io::Error| SampleError::Format(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(fmt)?;
        if &magic != SAMPLESET_MAGIC {
            return Err(SampleError::Format("bad magic, not a sample set".into()));
        }
        let version = u16::from_le_bytes(read_arr(&mut r).map_err(fmt)?);
        if version != SAMPLESET_VERSION {
            return Err(SampleError::VersionMismatch(version));
        }
        let len = u32::from_le_bytes(read_arr(&mut r).map_err(fmt)?) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json).map_err(fmt)?;
        let h: SetHeader =
            serde_json::from_slice(&json).map_err(|e| SampleError::Format(e.to_string()))?;
        let input_len: usize = h.input_shape.iter().product();
        let mut samples = Vec::with_capacity(h.n_samples);
        for _ in 0..h.n_samples {
            let mut input = Vec::with_capacity(input_len);
            for _ in 0..input_len {
                input.push(f32::from_le_bytes(read_arr(&mut r).map_err(fmt)?));
            }
            let symbol = u16::from_le_bytes(read_arr(&mut r).map_err(fmt)?);
            let mut t = [0i64; 3];
            for x in &mut t {
                *x = i64::from_le_bytes(read_arr(&mut r).map_err(fmt)?);
            }
            let mut legs = Vec::with_capacity(h.output_dim);
            for _ in 0..h.output_dim {
                let mut v = [0f64; 3];
                for x in &mut v {
                    *x = f64::from_le_bytes(read_arr(&mut r).map_err(fmt)?);
                }
                legs.push(Leg { anchor_mid: v[0], target: v[1], future_mid: v[2] });
            }
            samples.push(Sample {
                input,
                t_first_ms: t[0],
                t_anchor_ms: t[1],
                t_target_ms: t[2],
                symbol,
                legs,
            });
        }
        Ok(SampleSet {
            spec: h.spec,
            input_shape: h.input_shape,
            symbols: h.symbols,
            samples,
            scaler: h.scaler,
            split: h.split,
            nominal_interval_ms: h.nominal_interval_ms,
            skipped_empty_buckets: h.skipped_empty_buckets,
            provenance: h.provenance,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), SampleError> {
        let io = |e: std::io::Error| LobError::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        self.write_to(&mut w).map_err(io)?;
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SampleError> {
        let f = File::open(path).map_err(|e| LobError::io(path, e))?;
        SampleSet::read_from(BufReader::new(f))
    }
}

fn read_arr<const N: usize>(r: &mut impl Read) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}
