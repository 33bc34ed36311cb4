//! Forecasting architectures, training loop and prediction.
//!
//! Batches are split into fixed-size chunks whose gradients are computed in
//! parallel and summed in chunk order, so training is bit-reproducible for
//! a given seed regardless of the worker count.

mod arch;
mod checkpoint;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arch::{cnn2lstm_encoder_len, cnn2lstm_encoder_width, ArchHyper, ArchKind, ArchSpec};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::{
    embedding::merge_stacked,
    nn::{ops::mse_loss, seeded_rng, Adam, AdamConfig, Cache, Grads, Network, NnError, ParamStore, Tensor},
    par,
    sampling::{decode_prediction, Representation, SampleSet, SampleSpec, TargetKind, TargetScaler},
};

/// Samples per gradient work unit.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("training set is empty")]
    EmptySet,
    #[error("{arch} expects {expected:?} input, got {got:?}")]
    Representation { arch: ArchKind, expected: Representation, got: Representation },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u16),
    #[error("checkpoint checksum mismatch (truncated or corrupted file)")]
    CorruptChecksum,
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 50, batch_size: 32, lr: 1e-3, seed: 0 }
    }
}

/// A built (and possibly trained) forecaster.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: ArchSpec,
    pub seed: u64,
    pub net: Network,
    pub params: ParamStore,
    /// Flattened encoder length (CNN2LSTM only).
    pub encoder_len: Option<usize>,
    /// Sample spec of the training set, including embedding settings.
    pub spec: Option<SampleSpec>,
    pub scaler: TargetScaler,
    /// Mean training loss per epoch (scaled target space).
    pub history: Vec<f64>,
    pub provenance: Option<serde_json::Value>,
}

/// Builds an architecture with seeded parameters.
pub fn build_model(arch: &ArchSpec, seed: u64) -> Result<Model, ModelError> {
    let mut rng = seeded_rng(seed);
    let (net, params, encoder_len) = arch::build_network(arch, &mut rng)?;
    Ok(Model {
        arch: arch.clone(),
        seed,
        net,
        params,
        encoder_len,
        spec: None,
        scaler: TargetScaler::identity(arch.output_dim),
        history: Vec::new(),
        provenance: None,
    })
}

impl Model {
    pub fn kind(&self) -> ArchKind {
        self.arch.kind
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn target_kind(&self, set: &SampleSet) -> TargetKind {
        self.spec.map_or(set.spec.target_kind, |s| s.target_kind)
    }

    /// Rejects sets whose layout or shape this model cannot consume.
    pub fn check_compatible(&self, set: &SampleSet) -> Result<(), ModelError> {
        if let Some(expected) = self.arch.kind.representation() {
            if set.spec.representation != expected {
                return Err(ModelError::Representation {
                    arch: self.arch.kind,
                    expected,
                    got: set.spec.representation,
                });
            }
        }
        if set.input_shape != self.arch.stacked_shape() {
            return Err(ModelError::ShapeMismatch(format!(
                "model expects stacked input {:?}, set has {:?}",
                self.arch.stacked_shape(),
                set.input_shape
            )));
        }
        if !set.is_empty() && set.output_dim() != self.arch.output_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "model has {} outputs, set has {} targets",
                self.arch.output_dim,
                set.output_dim()
            )));
        }
        Ok(())
    }

    /// Network-layout batch (`N×C×H×W`) for the given sample indices,
    /// with pixels rescaled to unit range.
    pub fn batch_input(&self, set: &SampleSet, idx: &[usize]) -> Tensor {
        let [cin, d, c] = set.input_shape;
        let per = cin * d * c;
        let k = pixel_scale(&set.spec);
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend(set.model_input(i).into_data().into_iter().map(|v| v * k));
        }
        let shape = match set.spec.representation {
            Representation::Stacked => vec![idx.len(), cin, d, c],
            Representation::Merged => vec![idx.len(), 1, d, c * cin],
        };
        Tensor::new(shape, data).expect("batch shape")
    }

    fn batch_targets(&self, set: &SampleSet, idx: &[usize]) -> Tensor {
        let out = self.arch.output_dim;
        let mut data = Vec::with_capacity(idx.len() * out);
        for &i in idx {
            let t: Vec<f64> = set.samples[i].legs.iter().map(|l| l.target).collect();
            data.extend(self.scaler.apply(&t));
        }
        Tensor::new(vec![idx.len(), out], data).expect("target shape")
    }

    /// Raw network output for a network-layout batch.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, ModelError> {
        if self.arch.kind == ArchKind::Persistence {
            return Ok(Tensor::zeros(&[x.shape()[0], self.arch.output_dim]));
        }
        Ok(self.net.forward(&self.params, x)?.0)
    }

    /// Mean squared error of `params` on a batch; used by gradient checks.
    pub fn loss_with(&self, params: &ParamStore, x: &Tensor, y: &Tensor) -> Result<f64, ModelError> {
        let (pred, _) = self.net.forward(params, x)?;
        Ok(mse_loss(&pred, y)?.0)
    }

    /// Loss, parameter gradients and input gradient of the batch MSE.
    pub fn loss_and_grads(&self, x: &Tensor, y: &Tensor) -> Result<(f64, Grads, Tensor), ModelError> {
        self.loss_and_grads_scaled(x, y, 1.0)
    }

    fn loss_and_grads_scaled(
        &self,
        x: &Tensor,
        y: &Tensor,
        weight: f64,
    ) -> Result<(f64, Grads, Tensor), ModelError> {
        let (pred, caches): (Tensor, Vec<Cache>) = self.net.forward(&self.params, x)?;
        let (loss, gy) = mse_loss(&pred, y)?;
        let mut grads = self.params.zero_grads();
        let gx = self.net.backward(&self.params, &caches, gy.map(|g| g * weight), &mut grads)?;
        Ok((loss * weight, grads, gx))
    }

    fn batch_step(&self, set: &SampleSet, idx: &[usize]) -> Result<(f64, Grads), ModelError> {
        let chunks: Vec<&[usize]> = idx.chunks(GRAD_CHUNK).collect();
        let total = idx.len() as f64;
        let parts = par::try_map_slice(&chunks, |chunk| {
            let x = self.batch_input(set, chunk);
            let y = self.batch_targets(set, chunk);
            let (loss, grads, _) = self.loss_and_grads_scaled(&x, &y, chunk.len() as f64 / total)?;
            Ok::<_, ModelError>((loss, grads))
        })?;
        let mut iter = parts.into_iter();
        let (mut loss, mut grads) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            grads.add_assign(&g);
        }
        Ok((loss, grads))
    }

    /// Trains on `set` with Adam on MSE of scaled targets. The set's scaler
    /// and spec are adopted by the model. Returns the per-epoch history.
    pub fn train(&mut self, set: &SampleSet, cfg: &TrainConfig) -> Result<&[f64], ModelError> {
        if set.is_empty() {
            return Err(ModelError::EmptySet);
        }
        self.check_compatible(set)?;
        self.spec = Some(set.spec);
        self.scaler = set.scaler.clone();
        self.history.clear();
        let n = set.len();
        if self.arch.kind == ArchKind::Persistence {
            let idx: Vec<usize> = (0..n).collect();
            let y = self.batch_targets(set, &idx);
            // the no-change forecast, expressed in scaled target space
            let base = self.scaler.apply(&vec![0.0; self.arch.output_dim]);
            let pred = Tensor::new(y.shape().to_vec(), base.repeat(n))?;
            let loss = mse_loss(&pred, &y)?.0;
            self.history = vec![loss; cfg.epochs];
            return Ok(&self.history);
        }
        let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &self.params);
        let mut rng = seeded_rng(cfg.seed ^ 0x5348_5546_464c_4521);
        let mut order: Vec<usize> = (0..n).collect();
        let batch = cfg.batch_size.max(1);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut sum = 0.0;
            for idx in order.chunks(batch) {
                let (loss, grads) = self.batch_step(set, idx)?;
                adam.update(&mut self.params, &grads);
                sum += loss * idx.len() as f64;
            }
            let mean = sum / n as f64;
            log::debug!("{} epoch {}: loss {mean:.6}", self.arch.kind, epoch + 1);
            self.history.push(mean);
        }
        Ok(&self.history)
    }

    /// Target-space predictions (scaler inverted), one vector per sample.
    pub fn predict_raw(&self, set: &SampleSet) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_compatible(set)?;
        let out = self.arch.output_dim;
        if self.arch.kind == ArchKind::Persistence {
            return Ok(vec![vec![0.0; out]; set.len()]);
        }
        let idx: Vec<usize> = (0..set.len()).collect();
        let chunks: Vec<&[usize]> = idx.chunks(64).collect();
        let parts = par::try_map_slice(&chunks, |chunk| {
            let y = self.forward(&self.batch_input(set, chunk))?;
            Ok::<_, ModelError>(
                y.data().chunks(out).map(|row| self.scaler.invert(row)).collect::<Vec<_>>(),
            )
        })?;
        Ok(parts.into_iter().flatten().collect())
    }

    /// Decoded forecasts for one stacked `L'×D×C` input with the given
    /// anchor mids (one per output).
    pub fn predict_stacked(&self, stacked: &Tensor, anchor_mids: &[f64]) -> Result<Vec<f64>, ModelError> {
        let shape = self.arch.stacked_shape();
        if stacked.shape() != shape.as_slice() || anchor_mids.len() != self.arch.output_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "expected input {shape:?} and {} anchors, got {:?} and {}",
                self.arch.output_dim,
                stacked.shape(),
                anchor_mids.len()
            )));
        }
        let kind = self.spec.map_or(TargetKind::Delta, |s| s.target_kind);
        let raw = if self.arch.kind == ArchKind::Persistence {
            vec![0.0; self.arch.output_dim]
        } else {
            let [cin, d, c] = shape;
            let k = self.spec.as_ref().map_or(1.0, pixel_scale);
            let stacked = stacked.map(|v| v * k);
            let x = match self.arch.kind.representation() {
                Some(Representation::Merged) => merge_stacked(&stacked)?.reshape(&[1, 1, d, c * cin])?,
                _ => stacked.reshape(&[1, cin, d, c])?,
            };
            self.scaler.invert(self.forward(&x)?.data())
        };
        Ok(raw.iter().zip(anchor_mids).map(|(&p, &a)| decode_prediction(p, a, kind)).collect())
    }

    /// Decoded mid forecasts, one per leg of each sample.
    pub fn predict(&self, set: &SampleSet) -> Result<Vec<Vec<f64>>, ModelError> {
        let raw = self.predict_raw(set)?;
        let kind = self.target_kind(set);
        Ok(raw
            .iter()
            .zip(&set.samples)
            .map(|(r, s)| {
                r.iter()
                    .zip(&s.legs)
                    .map(|(&p, leg)| decode_prediction(p, leg.anchor_mid, kind))
                    .collect()
            })
            .collect())
    }
}

/// Factor that maps embedded pixels onto `[0, 1]` before the first layer.
fn pixel_scale(spec: &SampleSpec) -> f64 {
    if spec.embed.quantize_255 {
        1.0 / 255.0
    } else {
        1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{
        sampling::{window_samples, SampleSpec},
        synthetic::{SyntheticTape, TapeKind},
    };

    fn small_set(repr: Representation) -> SampleSet {
        let series = SyntheticTape {
            kind: TapeKind::RandomWalk { step_std: 0.03 },
            snapshots: 80,
            depth: 8,
            seed: 2,
            ..Default::default()
        }
        .generate()
        .series;
        let spec = SampleSpec { frame_count: 3, horizon_ms: 200, representation: repr, ..Default::default() };
        let mut s = window_samples(&series, &spec).unwrap();
        s.fit_scaler();
        s
    }

    #[test]
    fn parameter_counts_are_deterministic() {
        for kind in ArchKind::ALL {
            let a = ArchSpec::new(kind, 3, 8, 4);
            let m1 = build_model(&a, 1).unwrap();
            let m2 = build_model(&a, 1).unwrap();
            assert_eq!(m1.params, m2.params);
            let m3 = build_model(&a, 2).unwrap();
            assert_eq!(m1.parameter_count(), m3.parameter_count());
        }
        assert_eq!(build_model(&ArchSpec::new(ArchKind::Persistence, 30, 50, 4), 0).unwrap().parameter_count(), 0);
    }

    #[test]
    fn encoder_length_formula() {
        for l in [2, 3, 5, 10, 30] {
            let m = build_model(&ArchSpec::new(ArchKind::Cnn2Lstm, l, 50, 4), 0).unwrap();
            assert_eq!(m.encoder_len, Some(26 * (2 * l).max(16)));
        }
    }

    #[test]
    fn representation_guard() {
        let merged = small_set(Representation::Merged);
        let stacked = small_set(Representation::Stacked);
        let cnn = build_model(&ArchSpec::for_set(ArchKind::SimpleCnn, &stacked), 0).unwrap();
        assert!(matches!(cnn.predict_raw(&merged), Err(ModelError::Representation { .. })));
        let cnn2d = build_model(&ArchSpec::for_set(ArchKind::SimpleCnn2d, &merged), 0).unwrap();
        assert!(matches!(cnn2d.predict_raw(&stacked), Err(ModelError::Representation { .. })));
        assert_eq!(cnn2d.predict_raw(&merged).unwrap().len(), merged.len());
    }

    #[test]
    fn invalid_arch() {
        let mut a = ArchSpec::new(ArchKind::SimpleCnn, 3, 8, 4);
        a.hyper.channels.clear();
        assert!(matches!(build_model(&a, 0), Err(ModelError::InvalidArch(_))));
        let a = ArchSpec::new(ArchKind::SimpleCnn, 0, 8, 4);
        assert!(matches!(build_model(&a, 0), Err(ModelError::InvalidArch(_))));
    }

    #[test]
    fn persistence_predicts_no_change() {
        let mut set = small_set(Representation::Stacked);
        let mut m = build_model(&ArchSpec::for_set(ArchKind::Persistence, &set), 0).unwrap();
        let h = m.train(&set, &TrainConfig { epochs: 3, ..Default::default() }).unwrap().to_vec();
        assert!(h.windows(2).all(|w| w[0] == w[1]));
        let p = m.predict(&set).unwrap();
        assert!(p.iter().zip(&set.samples).all(|(p, s)| p[0] == s.legs[0].anchor_mid));
        set.spec.target_kind = TargetKind::Returns;
        assert!(m.predict_raw(&set).unwrap().iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn training_is_deterministic() {
        let set = small_set(Representation::Stacked);
        let arch = ArchSpec::for_set(ArchKind::SimpleCnn, &set);
        let cfg = TrainConfig { epochs: 2, batch_size: 16, seed: 4, ..Default::default() };
        let mut a = build_model(&arch, 4).unwrap();
        let mut b = build_model(&arch, 4).unwrap();
        a.train(&set, &cfg).unwrap();
        b.train(&set, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn empty_set_is_rejected() {
        let mut set = small_set(Representation::Stacked);
        set.samples.clear();
        let mut m = build_model(&ArchSpec::new(ArchKind::SimpleCnn, 3, 8, 4), 0).unwrap();
        assert!(matches!(m.train(&set, &TrainConfig::default()), Err(ModelError::EmptySet)));
    }
}
