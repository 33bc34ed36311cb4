//! Snapshot → image-like frame embedding.
//!
//! Prices are scaled relative to the snapshot mid so the best levels sit near
//! 0 and the deepest level on each side maps to exactly 1. Quantities use one
//! of three scalings. Frames are `D × C` with `C = 4` or `8` and, by default,
//! multiplied by 255 (kept as reals; rounding only happens in PNG export).

use std::{fs::File, io::BufWriter, path::Path};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{
    lob::LobSnapshot,
    nn::{NnError, Tensor},
    par,
};

/// Bumped whenever the column order of [`FrameMatrix`] changes.
pub const COLUMN_LAYOUT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("degenerate {side} ladder: deepest price equals the mid")]
    DegenerateLadder { side: &'static str },
    #[error("{0} scaling requires global statistics")]
    MissingStats(&'static str),
    #[error("z-score scaling with zero standard deviation")]
    ZeroVariance,
    #[error("global min-max scaling with MAX <= MIN")]
    EmptyRange,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("pixel value {value} at ({row}, {col}) outside [0, 255]")]
    OutOfRange { value: f64, row: usize, col: usize },
    #[error("image io error on {path}: {reason}")]
    Io { path: String, reason: String },
}

impl From<NnError> for EmbedError {
    fn from(e: NnError) -> Self {
        EmbedError::ShapeMismatch(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VolumeScaling {
    Zscore,
    MinmaxGlobal,
    MinmaxDomain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSet {
    F4,
    F8,
}

impl FeatureSet {
    pub fn columns(self) -> usize {
        match self {
            FeatureSet::F4 => 4,
            FeatureSet::F8 => 8,
        }
    }
}

/// Quantity statistics over a whole (training) sample, both sides pooled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl GlobalStats {
    pub fn fit<'a>(snapshots: impl IntoIterator<Item = &'a LobSnapshot>) -> Option<Self> {
        let (mut n, mut sum, mut sumsq) = (0usize, 0.0, 0.0);
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in snapshots {
            for l in s.asks.iter().chain(&s.bids) {
                n += 1;
                sum += l.qty;
                sumsq += l.qty * l.qty;
                min = min.min(l.qty);
                max = max.max(l.qty);
            }
        }
        if n == 0 {
            return None;
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(0.0);
        Some(GlobalStats { min, max, mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub volume_scaling: VolumeScaling,
    pub feature_set: FeatureSet,
    pub quantize_255: bool,
    pub global_stats: Option<GlobalStats>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            volume_scaling: VolumeScaling::MinmaxDomain,
            feature_set: FeatureSet::F4,
            quantize_255: true,
            global_stats: None,
        }
    }
}

impl EmbedConfig {
    pub fn needs_stats(&self) -> bool {
        self.volume_scaling != VolumeScaling::MinmaxDomain || self.feature_set == FeatureSet::F8
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.needs_stats() && self.global_stats.is_none() {
            let what = match (self.volume_scaling, self.feature_set) {
                (VolumeScaling::Zscore, _) => "z-score",
                (VolumeScaling::MinmaxGlobal, _) => "global min-max",
                _ => "8-feature",
            };
            return Err(EmbedError::MissingStats(what));
        }
        Ok(())
    }

    pub fn meta(&self) -> EmbedMeta {
        EmbedMeta { config: *self, column_layout_version: COLUMN_LAYOUT_VERSION }
    }
}

/// JSON header stored next to any tensor container.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedMeta {
    #[serde(flatten)]
    pub config: EmbedConfig,
    pub column_layout_version: u32,
}

/// One embedded snapshot, row-major `rows × cols`.
///
/// Column layout (F4): ask price, ask volume, bid price, bid volume.
/// F8 appends: ask volume (global min-max), ask bin width, bid volume
/// (global min-max), bid bin width.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub anchor_mid: f64,
    pub ts_ms: i64,
}

impl FrameMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.data.clone()).expect("frame shape")
    }
}

/// Mid-relative price scaling of both ladders; outputs lie in (0, 1].
pub fn scale_prices(s: &LobSnapshot) -> Result<(Vec<f64>, Vec<f64>), EmbedError> {
    let mid = s.mid_price();
    let deepest_ask = s.asks.iter().fold(f64::NEG_INFINITY, |m, l| m.max(l.price));
    let deepest_bid = s.bids.iter().fold(f64::INFINITY, |m, l| m.min(l.price));
    let ask_range = deepest_ask - mid;
    let bid_range = deepest_bid - mid;
    if ask_range <= 0.0 {
        return Err(EmbedError::DegenerateLadder { side: "ask" });
    }
    if bid_range >= 0.0 {
        return Err(EmbedError::DegenerateLadder { side: "bid" });
    }
    let asks = s.asks.iter().map(|l| (l.price - mid) / ask_range).collect();
    let bids = s.bids.iter().map(|l| (l.price - mid) / bid_range).collect();
    Ok((asks, bids))
}

/// Scales one side's quantities.
///
/// `MinmaxDomain` uses the side's own min and max; a flat side maps to all
/// zeros. The other modes need `stats`.
pub fn scale_quantities(
    q: &[f64],
    mode: VolumeScaling,
    stats: Option<&GlobalStats>,
) -> Result<Vec<f64>, EmbedError> {
    match mode {
        VolumeScaling::MinmaxDomain => {
            let min = q.iter().copied().fold(f64::INFINITY, f64::min);
            let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max > min {
                Ok(q.iter().map(|&x| (x - min) / (max - min)).collect())
            } else {
                Ok(vec![0.0; q.len()])
            }
        }
        VolumeScaling::MinmaxGlobal => {
            let st = stats.ok_or(EmbedError::MissingStats("global min-max"))?;
            if st.max <= st.min {
                return Err(EmbedError::EmptyRange);
            }
            Ok(q.iter().map(|&x| (x - st.min) / (st.max - st.min)).collect())
        }
        VolumeScaling::Zscore => {
            let st = stats.ok_or(EmbedError::MissingStats("z-score"))?;
            if st.std <= 0.0 {
                return Err(EmbedError::ZeroVariance);
            }
            Ok(q.iter().map(|&x| (x - st.mean) / st.std).collect())
        }
    }
}

/// Gaps between consecutive scaled price levels; the last level repeats
/// the previous gap.
pub fn bin_widths(prices_scaled: &[f64]) -> Vec<f64> {
    let d = prices_scaled.len();
    if d <= 1 {
        return vec![0.0; d];
    }
    let mut w: Vec<f64> =
        prices_scaled.windows(2).map(|p| (p[1] - p[0]).abs()).collect();
    w.push(w[d - 2]);
    w
}

pub fn embed_snapshot(s: &LobSnapshot, cfg: &EmbedConfig) -> Result<FrameMatrix, EmbedError> {
    cfg.validate()?;
    let d = s.depth();
    let cols = cfg.feature_set.columns();
    let (ask_px, bid_px) = scale_prices(s)?;
    let ask_q: Vec<f64> = s.asks.iter().map(|l| l.qty).collect();
    let bid_q: Vec<f64> = s.bids.iter().map(|l| l.qty).collect();
    let stats = cfg.global_stats.as_ref();
    let mut columns = vec![
        ask_px.clone(),
        scale_quantities(&ask_q, cfg.volume_scaling, stats)?,
        bid_px.clone(),
        scale_quantities(&bid_q, cfg.volume_scaling, stats)?,
    ];
    if cfg.feature_set == FeatureSet::F8 {
        columns.push(scale_quantities(&ask_q, VolumeScaling::MinmaxGlobal, stats)?);
        columns.push(bin_widths(&ask_px));
        columns.push(scale_quantities(&bid_q, VolumeScaling::MinmaxGlobal, stats)?);
        columns.push(bin_widths(&bid_px));
    }
    let k = if cfg.quantize_255 { 255.0 } else { 1.0 };
    let mut data = Vec::with_capacity(d * cols);
    for r in 0..d {
        for c in &columns {
            data.push(c[r] * k);
        }
    }
    Ok(FrameMatrix { rows: d, cols, data, anchor_mid: s.mid_price(), ts_ms: s.ts_ms })
}

/// Embeds every snapshot (in parallel), preserving order.
pub fn embed_series(snaps: &[LobSnapshot], cfg: &EmbedConfig) -> Result<Vec<FrameMatrix>, EmbedError> {
    par::try_map_slice(snaps, |s| embed_snapshot(s, cfg))
}

fn check_frames(frames: &[&FrameMatrix]) -> Result<(usize, usize), EmbedError> {
    let first = frames.first().ok_or_else(|| EmbedError::ShapeMismatch("no frames".into()))?;
    for f in frames {
        if (f.rows, f.cols) != (first.rows, first.cols) {
            return Err(EmbedError::ShapeMismatch(format!(
                "frame {}x{} vs {}x{}",
                f.rows, f.cols, first.rows, first.cols
            )));
        }
    }
    Ok((first.rows, first.cols))
}

/// `L × D × C`: frame j becomes channel j.
pub fn stack_frames(frames: &[&FrameMatrix]) -> Result<Tensor, EmbedError> {
    let (d, c) = check_frames(frames)?;
    let data = frames.iter().flat_map(|f| f.data.iter().copied()).collect();
    Ok(Tensor::new(vec![frames.len(), d, c], data)?)
}

/// `D × (C·L)`: frame j occupies columns `[jC, (j+1)C)`.
pub fn merge_frames(frames: &[&FrameMatrix]) -> Result<Tensor, EmbedError> {
    Ok(merge_stacked(&stack_frames(frames)?)?)
}

/// Reshapes a stacked `L × D × C` tensor into the merged `D × (C·L)` image.
pub fn merge_stacked(stacked: &Tensor) -> Result<Tensor, NnError> {
    let &[l, d, c] = stacked.shape() else {
        return Err(NnError::shape("merge_stacked", format!("{:?}", stacked.shape())));
    };
    let src = stacked.data();
    let mut out = vec![0.0; l * d * c];
    for j in 0..l {
        for r in 0..d {
            out[r * l * c + j * c..][..c].copy_from_slice(&src[(j * d + r) * c..][..c]);
        }
    }
    Tensor::new(vec![d, c * l], out)
}

/// Inverse of [`merge_stacked`].
pub fn unmerge(merged: &Tensor, frames: usize) -> Result<Tensor, NnError> {
    let &[d, w] = merged.shape() else {
        return Err(NnError::shape("unmerge", format!("{:?}", merged.shape())));
    };
    if frames == 0 || w % frames != 0 {
        return Err(NnError::shape("unmerge", format!("width {w} for {frames} frames")));
    }
    let c = w / frames;
    let src = merged.data();
    let mut out = vec![0.0; d * w];
    for j in 0..frames {
        for r in 0..d {
            out[(j * d + r) * c..][..c].copy_from_slice(&src[r * w + j * c..][..c]);
        }
    }
    Tensor::new(vec![frames, d, c], out)
}

/// Writes a 2-D matrix as an 8-bit grayscale PNG, one pixel per entry,
/// rounding half to even. Values outside [0, 255] are an error unless
/// `clamp` is set. `text` entries become PNG tEXt chunks.
pub fn export_frame_png(
    image: &Tensor,
    path: &Path,
    clamp: bool,
    text: &[(&str, &str)],
) -> Result<(), EmbedError> {
    let &[rows, cols] = image.shape() else {
        return Err(EmbedError::ShapeMismatch(format!("image must be 2-D, got {:?}", image.shape())));
    };
    let pixels = to_pixels(image.data(), cols, clamp)?;
    let io = |e: &dyn std::fmt::Display| EmbedError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let file = File::create(path).map_err(|e| io(&e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), cols as u32, rows as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    for (k, v) in text {
        enc.add_text_chunk(k.to_string(), v.to_string()).map_err(|e| io(&e))?;
    }
    let mut w = enc.write_header().map_err(|e| io(&e))?;
    w.write_image_data(&pixels).map_err(|e| io(&e))?;
    w.finish().map_err(|e| io(&e))
}

fn to_pixels(values: &[f64], cols: usize, clamp: bool) -> Result<Vec<u8>, EmbedError> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = if clamp {
                if v.is_nan() { 0.0 } else { v.clamp(0.0, 255.0) }
            } else if (0.0..=255.0).contains(&v) {
                v
            } else {
                return Err(EmbedError::OutOfRange { value: v, row: i / cols, col: i % cols });
            };
            Ok(v.round_ties_even() as u8)
        })
        .collect()
}

/// Decodes an 8-bit grayscale PNG into `(rows, cols, pixels)`.
pub fn read_png_gray(path: &Path) -> Result<(usize, usize, Vec<u8>), EmbedError> {
    let io = |e: &dyn std::fmt::Display| EmbedError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    };
    let file = File::open(path).map_err(|e| io(&e))?;
    let mut reader = png::Decoder::new(std::io::BufReader::new(file)).read_info().map_err(|e| io(&e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| io(&e))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(io(&"not an 8-bit grayscale image"));
    }
    buf.truncate(info.buffer_size());
    Ok((info.height as usize, info.width as usize, buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lob::Level;
    use proptest::prelude::*;

    fn book(asks: &[(f64, f64)], bids: &[(f64, f64)]) -> LobSnapshot {
        let lv = |v: &[(f64, f64)]| v.iter().map(|&(price, qty)| Level { price, qty }).collect();
        LobSnapshot::new(7, "T", lv(asks), lv(bids)).unwrap()
    }

    #[test]
    fn price_scaling_examples() {
        let s = book(
            &[(101.0, 1.0), (102.0, 1.0), (103.0, 1.0), (104.0, 1.0)],
            &[(99.0, 1.0), (98.0, 1.0), (97.0, 1.0), (96.0, 1.0)],
        );
        let (a, b) = scale_prices(&s).unwrap();
        assert_eq!(a, vec![0.25, 0.5, 0.75, 1.0]);
        assert_eq!(b, vec![0.25, 0.5, 0.75, 1.0]);

        let s = book(&[(101.0, 1.0), (102.0, 1.0)], &[(99.0, 1.0), (98.0, 1.0)]);
        let (_, b) = scale_prices(&s).unwrap();
        assert_eq!(b, vec![0.5, 1.0]);

        let s = book(&[(100.1, 1.0)], &[(99.9, 1.0)]);
        let (a, b) = scale_prices(&s).unwrap();
        assert_eq!((a, b), (vec![1.0], vec![1.0]));
    }

    #[test]
    fn quantity_scaling_examples() {
        let q = scale_quantities(&[2.0, 4.0, 6.0], VolumeScaling::MinmaxDomain, None).unwrap();
        assert_eq!(q, vec![0.0, 0.5, 1.0]);
        let st = GlobalStats { min: 0.0, max: 10.0, mean: 2.0, std: 1.0 };
        let q = scale_quantities(&[5.0], VolumeScaling::MinmaxGlobal, Some(&st)).unwrap();
        assert_eq!(q, vec![0.5]);
        let q = scale_quantities(&[1.0, 3.0], VolumeScaling::Zscore, Some(&st)).unwrap();
        assert_eq!(q, vec![-1.0, 1.0]);
    }

    #[test]
    fn quantity_scaling_errors_and_flat_side() {
        assert_eq!(
            scale_quantities(&[1.0], VolumeScaling::Zscore, None),
            Err(EmbedError::MissingStats("z-score"))
        );
        let st = GlobalStats { min: 1.0, max: 1.0, mean: 1.0, std: 0.0 };
        assert_eq!(
            scale_quantities(&[1.0], VolumeScaling::Zscore, Some(&st)),
            Err(EmbedError::ZeroVariance)
        );
        let q = scale_quantities(&[3.0, 3.0], VolumeScaling::MinmaxDomain, None).unwrap();
        assert_eq!(q, vec![0.0, 0.0]);
    }

    #[test]
    fn bin_width_examples() {
        assert_eq!(bin_widths(&[0.25, 0.5, 0.75, 1.0]), vec![0.25; 4]);
        let w = bin_widths(&[0.1, 0.2, 1.0]);
        assert!((w[0] - 0.1).abs() < 1e-15 && w[1] == 0.8 && w[2] == 0.8);
        assert_eq!(bin_widths(&[1.0]), vec![0.0]);
    }

    fn two_level() -> LobSnapshot {
        book(&[(100.5, 3.0), (101.0, 1.0)], &[(99.5, 2.0), (99.0, 6.0)])
    }

    #[test]
    fn f4_frame_layout() {
        let f = embed_snapshot(&two_level(), &EmbedConfig::default()).unwrap();
        assert_eq!((f.rows, f.cols), (2, 4));
        for c in [0, 2] {
            assert!(f.column(c).iter().all(|&v| v > 0.0 && v <= 255.0));
        }
        for c in [1, 3] {
            let col = f.column(c);
            assert!(col.contains(&0.0) && col.contains(&255.0));
        }
        assert_eq!(f.column(0), vec![127.5, 255.0]);
        assert_eq!(f.column(1), vec![255.0, 0.0]);
        assert_eq!(f.anchor_mid, 100.0);
    }

    #[test]
    fn f8_contains_f4() {
        let s = two_level();
        let stats = GlobalStats::fit([&s]);
        let f4 = embed_snapshot(&s, &EmbedConfig { global_stats: stats, ..Default::default() })
            .unwrap();
        let cfg8 = EmbedConfig { feature_set: FeatureSet::F8, global_stats: stats, ..Default::default() };
        let f8 = embed_snapshot(&s, &cfg8).unwrap();
        assert_eq!((f8.rows, f8.cols), (2, 8));
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(f8.get(r, c), f4.get(r, c));
            }
        }
        // global min-max over {1,2,3,6}: ask 3 -> 0.4, ask 1 -> 0
        assert!((f8.get(0, 4) - 0.4 * 255.0).abs() < 1e-12);
        assert_eq!(f8.get(1, 4), 0.0);
        assert_eq!(f8.column(5), vec![127.5, 127.5]);
    }

    #[test]
    fn f8_without_stats_is_rejected() {
        let cfg = EmbedConfig { feature_set: FeatureSet::F8, ..Default::default() };
        assert_eq!(embed_snapshot(&two_level(), &cfg), Err(EmbedError::MissingStats("8-feature")));
    }

    fn frame(rows: usize, cols: usize, seed: usize) -> FrameMatrix {
        FrameMatrix {
            rows,
            cols,
            data: (0..rows * cols).map(|i| (i * 31 + seed * 7) as f64 % 255.0).collect(),
            anchor_mid: 1.0,
            ts_ms: seed as i64,
        }
    }

    #[test]
    fn stack_and_merge_shapes() {
        let frames: Vec<FrameMatrix> = (0..30).map(|j| frame(50, 4, j)).collect();
        let refs: Vec<&FrameMatrix> = frames.iter().collect();
        assert_eq!(stack_frames(&refs).unwrap().shape(), &[30, 50, 4]);
        assert_eq!(merge_frames(&refs).unwrap().shape(), &[50, 120]);

        let one = frame(3, 4, 1);
        assert_eq!(stack_frames(&[&one]).unwrap().data(), &one.data[..]);
        assert_eq!(merge_frames(&[&one]).unwrap(), one.to_tensor());

        let other = frame(3, 8, 2);
        assert!(matches!(stack_frames(&[&one, &other]), Err(EmbedError::ShapeMismatch(_))));
        assert!(matches!(merge_frames(&[&one, &other]), Err(EmbedError::ShapeMismatch(_))));
    }

    #[test]
    fn png_round_trip_and_range() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Tensor::new(vec![2, 2], vec![0.0, 255.0, 128.0, 0.0]).unwrap();
        export_frame_png(&img, &p, false, &[("source", "test")]).unwrap();
        assert_eq!(read_png_gray(&p).unwrap(), (2, 2, vec![0, 255, 128, 0]));

        let hot = Tensor::new(vec![1, 2], vec![300.0, 2.5]).unwrap();
        assert!(matches!(
            export_frame_png(&hot, &p, false, &[]),
            Err(EmbedError::OutOfRange { value, .. }) if value == 300.0
        ));
        export_frame_png(&hot, &p, true, &[]).unwrap();
        // 2.5 rounds half to even
        assert_eq!(read_png_gray(&p).unwrap().2, vec![255, 2]);
    }

    proptest! {
        #[test]
        fn merged_is_reshape_of_stacked(l in 1usize..6, d in 1usize..7, c in prop::sample::select(vec![4usize, 8])) {
            let frames: Vec<FrameMatrix> = (0..l).map(|j| frame(d, c, j)).collect();
            let refs: Vec<&FrameMatrix> = frames.iter().collect();
            let st = stack_frames(&refs).unwrap();
            let mg = merge_frames(&refs).unwrap();
            for j in 0..l { for r in 0..d { for k in 0..c {
                prop_assert_eq!(mg.data()[r * c * l + j * c + k], st.data()[(j * d + r) * c + k]);
            }}}
            prop_assert_eq!(unmerge(&mg, l).unwrap(), st);
        }

        #[test]
        fn scalings_are_monotone(q in prop::collection::vec(0.0f64..1e3, 2..20)) {
            let st = GlobalStats { min: 0.0, max: 1e3, mean: 10.0, std: 3.0 };
            for mode in [VolumeScaling::MinmaxDomain, VolumeScaling::MinmaxGlobal, VolumeScaling::Zscore] {
                let s = scale_quantities(&q, mode, Some(&st)).unwrap();
                for i in 0..q.len() { for j in 0..q.len() {
                    if q[i] <= q[j] { prop_assert!(s[i] <= s[j]); }
                }}
            }
        }
    }
}
