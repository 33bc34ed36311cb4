use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::{
    nn::{ops::Conv2dCfg, ops::PoolCfg, Layer, Network, ParamStore, Rng},
    sampling::{Representation, SampleSet},
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchKind {
    #[serde(rename = "SimpleCNN")]
    SimpleCnn,
    #[serde(rename = "SimpleCNN_2D")]
    SimpleCnn2d,
    #[serde(rename = "CNN2LSTM")]
    Cnn2Lstm,
    #[serde(rename = "CNNModel_2D")]
    CnnModel2d,
    Persistence,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::SimpleCnn,
        ArchKind::SimpleCnn2d,
        ArchKind::Cnn2Lstm,
        ArchKind::CnnModel2d,
        ArchKind::Persistence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchKind::SimpleCnn => "SimpleCNN",
            ArchKind::SimpleCnn2d => "SimpleCNN_2D",
            ArchKind::Cnn2Lstm => "CNN2LSTM",
            ArchKind::CnnModel2d => "CNNModel_2D",
            ArchKind::Persistence => "Persistence",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '_'], "");
        ArchKind::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase().replace('_', "") == norm)
    }

    /// Input layout the architecture consumes; `None` accepts either.
    pub fn representation(self) -> Option<Representation> {
        match self {
            ArchKind::SimpleCnn | ArchKind::Cnn2Lstm => Some(Representation::Stacked),
            ArchKind::SimpleCnn2d | ArchKind::CnnModel2d => Some(Representation::Merged),
            ArchKind::Persistence => None,
        }
    }
}

impl std::fmt::Display for ArchKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Layer widths; every field has a per-kind default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchHyper {
    /// Output channels of the convolution blocks (unused by CNN2LSTM,
    /// whose encoder width follows the frame count).
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub dense_hidden: usize,
    pub lstm_hidden: usize,
    /// Per-step feature width of the CNN2LSTM sequence expansion.
    pub step_width: usize,
}

impl ArchHyper {
    pub fn defaults(kind: ArchKind) -> Self {
        let (channels, dense_hidden) = match kind {
            ArchKind::SimpleCnn => (vec![32, 64], 128),
            ArchKind::SimpleCnn2d => (vec![16, 32, 64, 64], 128),
            ArchKind::CnnModel2d => (vec![16, 32, 64, 64, 128], 256),
            ArchKind::Cnn2Lstm | ArchKind::Persistence => (Vec::new(), 0),
        };
        ArchHyper { channels, kernel: 3, dense_hidden, lstm_hidden: 64, step_width: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    /// Frames per asset (L).
    pub frames: usize,
    pub depth: usize,
    pub columns: usize,
    /// 1, or 2 for one-shot pairs (input channels are `assets · L`).
    pub assets: usize,
    pub output_dim: usize,
    pub hyper: ArchHyper,
}

impl ArchSpec {
    pub fn new(kind: ArchKind, frames: usize, depth: usize, columns: usize) -> Self {
        ArchSpec {
            kind,
            frames,
            depth,
            columns,
            assets: 1,
            output_dim: 1,
            hyper: ArchHyper::defaults(kind),
        }
    }

    /// Architecture sized for a sample set.
    pub fn for_set(kind: ArchKind, set: &SampleSet) -> Self {
        let [ch, d, c] = set.input_shape;
        let l = set.spec.frame_count;
        ArchSpec {
            assets: (ch / l.max(1)).max(1),
            output_dim: set.output_dim(),
            ..ArchSpec::new(kind, l, d, c)
        }
    }

    pub fn channels_in(&self) -> usize {
        self.assets * self.frames
    }

    /// Per-sample input shape in stacked layout.
    pub fn stacked_shape(&self) -> [usize; 3] {
        [self.channels_in(), self.depth, self.columns]
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidArch(m));
        if self.frames == 0 || self.depth == 0 || self.columns == 0 {
            return bad(format!("zero dimension in L={} D={} C={}", self.frames, self.depth, self.columns));
        }
        if !(1..=2).contains(&self.assets) || !(1..=2).contains(&self.output_dim) {
            return bad(format!("assets {} / outputs {} must be 1 or 2", self.assets, self.output_dim));
        }
        let h = &self.hyper;
        let needs_channels = matches!(
            self.kind,
            ArchKind::SimpleCnn | ArchKind::SimpleCnn2d | ArchKind::CnnModel2d
        );
        if needs_channels && (h.channels.is_empty() || h.channels.contains(&0) || h.dense_hidden == 0) {
            return bad(format!("{} needs non-zero conv channels and dense width", self.kind));
        }
        if self.kind != ArchKind::Persistence && h.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", h.kernel));
        }
        if self.kind == ArchKind::Cnn2Lstm && (h.lstm_hidden == 0 || h.step_width == 0) {
            return bad("CNN2LSTM needs non-zero LSTM and step widths".into());
        }
        Ok(())
    }
}

/// Channel count of the CNN2LSTM encoder, `max(16, 2L)`.
pub fn cnn2lstm_encoder_width(frames: usize) -> usize {
    (2 * frames).max(16)
}

/// Flattened CNN2LSTM encoder length: width × ⌊(D+2)/2⌋, which is
/// `26 · max(16, 2L)` at depth 50.
pub fn cnn2lstm_encoder_len(frames: usize, depth: usize) -> usize {
    cnn2lstm_encoder_width(frames) * ((depth + 2) / 2)
}

/// Layer pipeline builder with shape inference (shapes exclude the batch axis).
struct Builder<'a> {
    params: &'a mut ParamStore,
    rng: &'a mut Rng,
    layers: Vec<Layer>,
    shape: Vec<usize>,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, cout: usize, k: (usize, usize), pad: (usize, usize)) {
        let [cin, h, w] = self.shape[..] else { unreachable!("conv on rank-3 input") };
        let fan_in = cin * k.0 * k.1;
        let weight = self.params.add_init(&format!("{name}.weight"), &[cout, cin, k.0, k.1], fan_in, self.rng);
        let bias = self.params.add_init(&format!("{name}.bias"), &[cout], fan_in, self.rng);
        self.layers.push(Layer::Conv2d { weight, bias, cfg: Conv2dCfg { stride: (1, 1), pad } });
        self.shape = vec![cout, h + 2 * pad.0 + 1 - k.0, w + 2 * pad.1 + 1 - k.1];
    }

    /// Max pooling that never pools an axis below length 1.
    fn pool(&mut self, kh: usize, kw: usize) {
        let [c, h, w] = self.shape[..] else { unreachable!("pool on rank-3 input") };
        let (kh, kw) = (kh.min(h), kw.min(w));
        if kh == 1 && kw == 1 {
            return;
        }
        self.layers.push(Layer::MaxPool2d(PoolCfg { kernel: (kh, kw), stride: (kh, kw) }));
        self.shape = vec![c, h / kh, w / kw];
    }

    fn relu(&mut self) {
        self.layers.push(Layer::Relu);
    }

    fn flatten(&mut self) {
        self.layers.push(Layer::Flatten);
        self.shape = vec![self.shape.iter().product()];
    }

    fn dense(&mut self, name: &str, out: usize) {
        let fin = self.shape[0];
        let weight = self.params.add_init(&format!("{name}.weight"), &[out, fin], fin, self.rng);
        let bias = self.params.add_init(&format!("{name}.bias"), &[out], fin, self.rng);
        self.layers.push(Layer::Dense { weight, bias });
        self.shape = vec![out];
    }

    fn lstm(&mut self, name: &str, hidden: usize, steps: usize) {
        let e = self.shape[0] / steps;
        let w = self.params.add_init(&format!("{name}.w"), &[4 * hidden, e], e, self.rng);
        let u = self.params.add_init(&format!("{name}.u"), &[4 * hidden, hidden], hidden, self.rng);
        let b = self.params.add_init(&format!("{name}.b"), &[4 * hidden], hidden, self.rng);
        self.layers.push(Layer::Lstm { w, u, b, steps });
        self.shape = vec![hidden];
    }
}

/// Network, parameters and (for CNN2LSTM) the encoder length.
pub(crate) fn build_network(
    arch: &ArchSpec,
    rng: &mut Rng,
) -> Result<(Network, ParamStore, Option<usize>), ModelError> {
    arch.validate()?;
    let mut params = ParamStore::new();
    let h = &arch.hyper;
    let (d, c, cin) = (arch.depth, arch.columns, arch.channels_in());
    let k = h.kernel;
    let same = k / 2;
    let input_shape = match arch.kind.representation() {
        Some(Representation::Merged) => vec![1, d, c * cin],
        _ => vec![cin, d, c],
    };
    let mut b = Builder { params: &mut params, rng, layers: Vec::new(), shape: input_shape };
    let mut encoder_len = None;
    match arch.kind {
        ArchKind::Persistence => {}
        ArchKind::SimpleCnn | ArchKind::SimpleCnn2d | ArchKind::CnnModel2d => {
            for (i, &ch) in h.channels.iter().enumerate() {
                b.conv(&format!("conv{}", i + 1), ch, (k, k), (same, same));
                b.relu();
                b.pool(2, 2);
            }
            b.flatten();
            b.dense("fc1", h.dense_hidden);
            b.relu();
            b.dense("out", arch.output_dim);
        }
        ArchKind::Cnn2Lstm => {
            let width = cnn2lstm_encoder_width(arch.frames);
            b.conv("enc1", width, (k, k), (same + 1, same));
            b.relu();
            let w = b.shape[2];
            b.pool(2, w);
            b.conv("enc2", width, (k, 1), (same, 0));
            b.relu();
            b.flatten();
            let len = b.shape[0];
            let expected = cnn2lstm_encoder_len(arch.frames, d);
            assert_eq!(len, expected, "CNN2LSTM encoder length {len} != {expected}");
            encoder_len = Some(len);
            b.dense("expand", arch.frames * h.step_width);
            b.lstm("lstm", h.lstm_hidden, arch.frames);
            b.dense("out", arch.output_dim);
        }
    }
    let layers = std::mem::take(&mut b.layers);
    Ok((Network::new(layers), params, encoder_len))
}
