//! Monitor output and analyses: time series, BOLD forward model, EEG
//! projection, functional connectivity, and seizure-zone classification.

mod bold;
mod eeg;
mod fc;
mod zones;

pub use bold::{bold_hrf, convolve_hrf, hrf_kernel, HrfParams};
pub use eeg::{eeg_project, load_lead_field, Granularity, LeadField};
pub use fc::{fc, fc_fit, FcMatrix};
pub use zones::{classify_zones, seizes, Zone};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error("too few samples: {retained} retained, need at least {needed}")]
    TooFewSamples { retained: usize, needed: usize },
    #[error("all channels have zero variance")]
    AllChannelsConstant,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("zero variance in {0}; correlation undefined")]
    ZeroVariance(String),
    #[error("TR {tr} ms is not a positive multiple of dt_out {dt} ms")]
    BadTr { tr: f64, dt: f64 },
    #[error("{path}: {msg}")]
    BadFile { path: String, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ObservableError>;

/// Monitor output: channels by samples, with the sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    /// Time of the first sample, ms.
    pub t0: f64,
    /// Output sampling step, ms.
    pub dt_out: f64,
    /// What produced this series ("raw", "tavg", "coupling", "bold", "eeg").
    pub name: String,
    pub labels: Vec<String>,
    /// data[channel][sample]
    pub data: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    /// Flattened row-major (channel-major) copy of the samples.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_channels() * self.n_samples());
        for row in &self.data {
            out.extend_from_slice(row);
        }
        out
    }
}
