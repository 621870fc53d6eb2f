//! Throttled end-to-end benchmark: payload sizes × signing modes, each run
//! verified by the server, reported as medians with first-byte latency and
//! peak tracked memory of the client signing path.

mod report;
mod run;

use std::io;

pub use report::{emit_csv, emit_plot_data, BenchReport, BenchRow, CSV_HEADER};
pub use run::{bench_envelope, calibrate_digest, run_benchmark, Calibration, SeededPayload, BENCH_PATH};

use crate::transport::{ThrottleConfig, TransportError};
use crate::wssec::{DigestAlgorithm, Mode, WssecError};

pub const MIB: u64 = 1 << 20;

/// Sweep used when no sizes are given: 1, 4, 16, 64 and 256 MiB.
pub const DEFAULT_SIZES: [u64; 5] = [MIB, 4 * MIB, 16 * MIB, 64 * MIB, 256 * MIB];

/// 100 Mbit/s expressed in bytes per second.
pub const DEFAULT_RATE: f64 = 12_500_000.0;

pub const DEFAULT_SEED: u64 = 0x5712_ea75;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    InvalidConfig(String),
    #[error("server unavailable: {0}")]
    ServerUnavailable(#[source] TransportError),
    #[error("verification failed for {mode} at {size} bytes: {detail}")]
    VerificationFailed { size: u64, mode: Mode, detail: String },
    #[error("transport error: {0}")]
    Transport(#[source] TransportError),
    #[error("signing error: {0}")]
    Sign(#[from] WssecError),
    #[error("report is empty")]
    EmptyReport,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sizes: Vec<u64>,
    pub modes: Vec<Mode>,
    pub repetitions: usize,
    pub warmup: usize,
    pub throttle: Option<ThrottleConfig>,
    pub seed: u64,
    pub chunk_size: usize,
    pub digest_algorithm: DigestAlgorithm,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            sizes: DEFAULT_SIZES.to_vec(),
            modes: vec![Mode::Unsigned, Mode::Blocking, Mode::StreamingStrict],
            repetitions: 3,
            warmup: 1,
            throttle: Some(ThrottleConfig::with_rate(DEFAULT_RATE).expect("default rate is valid")),
            seed: DEFAULT_SEED,
            chunk_size: crate::config::chunk_size(),
            digest_algorithm: DigestAlgorithm::Sha256,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let invalid = |m: String| Err(BenchError::InvalidConfig(m));
        if self.sizes.is_empty() {
            return invalid("no payload sizes".into());
        }
        if self.sizes.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("sizes must be strictly increasing: {:?}", self.sizes));
        }
        if self.modes.is_empty() {
            return invalid("no modes".into());
        }
        let mut modes = self.modes.clone();
        modes.sort();
        modes.dedup();
        if modes.len() != self.modes.len() {
            return invalid("duplicate mode".into());
        }
        if self.repetitions < 3 {
            return invalid(format!("{} repetitions, at least 3 required", self.repetitions));
        }
        if self.chunk_size == 0 {
            return invalid("chunk size 0".into());
        }
        Ok(())
    }
}

/// Median of a non-empty sample; the mean of the two middle values for even counts.
pub fn median(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "median of empty sample");
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}
