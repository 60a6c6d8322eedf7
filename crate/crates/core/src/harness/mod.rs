//! Orchestration: trial sets, built-in evaluation, external feature ingestion,
//! per-head sweeps, and Gestalt stimuli.

pub mod eval;
pub mod ingest;
pub mod manifest;
pub mod stimuli;
pub mod sweep;
pub mod trialset;

use crate::error::{Error, Result};

pub use eval::{eval_builtin, Extractor};
pub use ingest::{ingest_features, Ingested};
pub use manifest::{FeatureManifest, ResponseLog, TrialManifest};
pub use sweep::{head_sweep, HeadSweep};
pub use trialset::{build_trialset, TrialsetOptions};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "DISRT_THREADS";

/// Worker pool sized by `DISRT_THREADS` when set, else by rayon's default.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            Error::config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Order-sensitive hash of a word sequence; used for every derived seed.
pub fn derive_seed(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x5EED_0F_D15E_u64, |h, &w| splitmix64(h ^ splitmix64(w)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_depend_on_every_word() {
        let base = derive_seed(&[1, 2, 3]);
        assert_eq!(base, derive_seed(&[1, 2, 3]));
        assert_ne!(base, derive_seed(&[1, 2, 4]));
        assert_ne!(base, derive_seed(&[2, 1, 3]));
        assert_ne!(base, derive_seed(&[1, 2]));
    }
}
