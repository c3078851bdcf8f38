//! Sample sweeps over many configurations, data-parallel with rayon when the
//! `parallel` feature is on and sequential otherwise.
//!
//! Every sample draws from its own ChaCha stream (`seed`, stream = sample
//! index), so results do not depend on the execution mode or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arm_model::{AngularConfig, ArmDims};
use crate::dynamics::{integrate_arm, ControlSignal, IntegratorSettings, Trajectory};
use crate::error::{Error, Result};
use crate::flag_verifier::{verify_flag, FlagReport, VerifyOptions};
use crate::sampling::{random_config, random_regular_config, singular_config, RegularSampling};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "MULTIFLAG_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// `f(0), ..., f(count - 1)` in index order.
pub fn map_indexed<T, F>(exec: Execution, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(f).collect()
        }
        _ => (0..count).map(f).collect(),
    }
}

pub fn try_map_indexed<T, F>(exec: Execution, count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(exec, count, f).into_iter().collect()
}

/// Reads [`THREADS_ENV`] and sizes the global pool. Returns the cap if one was set.
pub fn configure_threads_from_env() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    #[cfg(feature = "parallel")]
    {
        // a pool built earlier in the process keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    Ok(Some(threads))
}

pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleKind {
    /// Uniform directions, no rejection.
    Uniform,
    /// Rejects `|A_i|` below the given threshold.
    Regular(RegularSampling),
    /// Regular sample with `A_index = 0`.
    Singular { index: usize },
}

pub fn sample_config(dims: ArmDims, kind: SampleKind, seed: u64, index: usize) -> AngularConfig {
    let mut rng = sample_rng(seed, index);
    match kind {
        SampleKind::Uniform => random_config(dims, &mut rng),
        SampleKind::Regular(opts) => random_regular_config(dims, &mut rng, opts),
        SampleKind::Singular { index } => singular_config(dims, &mut rng, index),
    }
}

pub fn sample_configs(
    dims: ArmDims,
    kind: SampleKind,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Vec<AngularConfig> {
    map_indexed(exec, count, |i| sample_config(dims, kind, seed, i))
}

pub fn verify_sweep(
    configs: &[AngularConfig],
    opts: VerifyOptions,
    exec: Execution,
) -> Result<Vec<FlagReport>> {
    try_map_indexed(exec, configs.len(), |i| verify_flag(&configs[i], opts))
}

/// Integrates the arm from every configuration, with per-sample controls.
pub fn integrate_sweep<C>(
    configs: &[AngularConfig],
    controls: C,
    t_end: f64,
    settings: &IntegratorSettings,
    exec: Execution,
) -> Result<Vec<Trajectory<AngularConfig>>>
where
    C: Fn(usize) -> ControlSignal + Sync + Send,
{
    try_map_indexed(exec, configs.len(), |i| {
        integrate_arm(&configs[i], &controls(i), t_end, settings)
    })
}
