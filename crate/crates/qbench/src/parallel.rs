//! Multi-threaded dataset synthesis.
//!
//! Output equals running [`Forge::synth_family`] per family in sequence: each
//! task depends only on its own seed, so ordinals can be synthesized in any
//! order and the first `count` successes kept.

use qbench_core::forge::{Family, Forge, TaskInstance};
use rayon::prelude::*;

/// Synthesizes `count` tasks of one family on the current rayon pool.
pub fn synth_family_par(forge: &Forge<'_>, family: Family, master_seed: u64, count: usize) -> Vec<TaskInstance> {
    let limit = (count as u64) * 4 + 16;
    let batch = (count as u64).clamp(16, 256);
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    while out.len() < count && start < limit {
        let end = (start + batch).min(limit);
        let results: Vec<Option<TaskInstance>> =
            (start..end).into_par_iter().map(|o| forge.synth(family, master_seed, o).ok()).collect();
        out.extend(results.into_iter().flatten().take(count - out.len()));
        start = end;
    }
    out
}

/// Synthesizes every family in turn with `workers` threads.
pub fn synth_dataset(
    forge: &Forge<'_>,
    plan: &[(Family, usize)],
    master_seed: u64,
    workers: usize,
) -> Result<Vec<TaskInstance>, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    Ok(pool.install(|| plan.iter().flat_map(|&(f, n)| synth_family_par(forge, f, master_seed, n)).collect()))
}
