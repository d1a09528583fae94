use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Inproc,
    Socket,
}

impl Transport {
    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Inproc => "inproc",
            Transport::Socket => "socket",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("delta must lie in (0, 1/2], got {0}")]
    Delta(f64),
    #[error("lambda must be even and in [4, 128], got {0}")]
    Lambda(u16),
    #[error("epsTarget must lie in (0, 1), got {0}")]
    Eps(f64),
    #[error("{0} must be at least 1")]
    Zero(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExperimentConfig {
    pub seed: u64,
    pub lambda: u16,
    pub delta: f64,
    pub eps_target: f64,
    pub n: usize,
    pub ell: u64,
    pub trials: u64,
    pub transport: Transport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            lambda: 32,
            delta: 0.1,
            eps_target: 1e-3,
            n: 8,
            ell: 10,
            trials: 10_000,
            transport: Transport::Inproc,
            output_path: None,
        }
    }
}

/// Stream reserved for the global setup; trials use streams from 1 upward.
const SETUP_STREAM: u64 = 0;

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.delta > 0.0 && self.delta <= 0.5) {
            return Err(ConfigError::Delta(self.delta));
        }
        if self.lambda < 4 || self.lambda > 128 || self.lambda % 2 != 0 {
            return Err(ConfigError::Lambda(self.lambda));
        }
        if !(self.eps_target > 0.0 && self.eps_target < 1.0) {
            return Err(ConfigError::Eps(self.eps_target));
        }
        for (name, v) in [("n", self.n as u64), ("ell", self.ell), ("trials", self.trials)] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        Ok(())
    }

    /// Per-token corruption probability matching the configured margin.
    pub fn p_fail(&self) -> f64 {
        0.5 - self.delta
    }

    pub fn setup_rng(&self) -> ChaCha20Rng {
        stream_rng(self.seed, SETUP_STREAM)
    }

    /// Independent stream for trial `t`, whatever order trials run in.
    pub fn trial_rng(&self, t: u64) -> ChaCha20Rng {
        stream_rng(self.seed, t + 1)
    }
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
