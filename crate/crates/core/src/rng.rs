//! Seed derivation. Every episode gets its own generator derived only from
//! the run seed and the task index, so the order in which episodes are
//! executed cannot change their results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type TaskRng = ChaCha8Rng;

/// Seed of task `task_index` in a run seeded with `run_seed`: `run_seed + task_index` (wrapping).
pub fn episode_seed(run_seed: u64, task_index: u64) -> u64 {
    run_seed.wrapping_add(task_index)
}

pub fn episode_rng(run_seed: u64, task_index: u64) -> TaskRng {
    TaskRng::seed_from_u64(episode_seed(run_seed, task_index))
}

/// Generator for synthetic data: same seed as the run but on a separate
/// ChaCha stream, so it never overlaps an episode stream.
pub fn data_rng(seed: u64) -> TaskRng {
    let mut rng = TaskRng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}
