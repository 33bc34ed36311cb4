use thiserror::Error;

use crate::{
    backtest::BacktestError, embedding::EmbedError, lob::LobError, metrics::MetricsError,
    models::ModelError, nn::NnError, sampling::SampleError,
};

/// Crate-level error; each module keeps its own enum.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Lob(#[from] LobError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Backtest(#[from] BacktestError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
