//! Parallel evaluation over many sampled episodes.
//!
//! Task `t` always uses the generator `episode_rng(seed, t)`, so results do
//! not depend on scheduling or on the number of threads.

use std::time::Instant;

use rayon::prelude::*;

use protoshot_core::pipeline::{run_episode, EpisodeOutcome, Phase, PhaseTimer};
use protoshot_core::prototrain::ProtoStrategy;
use protoshot_core::rng::{data_rng, episode_rng};
use protoshot_core::{Diagnostics, EmbeddingSet, PipelineConfig};

use crate::config::{ConfigError, DataSource, RunConfig};
use crate::format::{load_embedding_set, FormatError};
use crate::report::{AbortedTask, EvalReport, ReportError, StrategyDelta, WallTime};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] FormatError),
    #[error(transparent)]
    Core(#[from] protoshot_core::Error),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
    #[error("{aborted} of {tasks} tasks aborted (at most {allowed} allowed); first: task {first_task}: {first_error}")]
    TooManyAborted {
        aborted: usize,
        allowed: usize,
        tasks: usize,
        first_task: usize,
        first_error: String,
        diagnostics: Diagnostics,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    /// Also run the other prototype strategy and record the difference.
    pub compare: bool,
}

/// Loads an EMB1 file or generates the synthetic pool for `seed`.
pub fn load_data(source: &DataSource, seed: u64) -> Result<EmbeddingSet, EvalError> {
    match source {
        DataSource::File(path) => Ok(load_embedding_set(path)?),
        DataSource::Synthetic(spec) => Ok(spec.generate(&mut data_rng(seed))?),
    }
}

#[derive(Default)]
struct PhaseClock {
    secs: [f64; Phase::ALL.len()],
    started: Option<Instant>,
}

impl PhaseTimer for PhaseClock {
    fn begin(&mut self, _: Phase) {
        self.started = Some(Instant::now());
    }

    fn end(&mut self, phase: Phase) {
        if let Some(t) = self.started.take() {
            self.secs[phase as usize] += t.elapsed().as_secs_f64();
        }
    }
}

struct TaskResult {
    outcome: protoshot_core::Result<EpisodeOutcome>,
    secs: [f64; Phase::ALL.len()],
}

fn run_tasks(
    set: &EmbeddingSet,
    pipeline: &PipelineConfig,
    seed: u64,
    n_tasks: usize,
) -> Vec<TaskResult> {
    (0..n_tasks)
        .into_par_iter()
        .map(|task| {
            let mut clock = PhaseClock::default();
            let outcome = run_episode(
                set,
                pipeline,
                &mut episode_rng(seed, task as u64),
                &mut clock,
            );
            TaskResult {
                outcome,
                secs: clock.secs,
            }
        })
        .collect()
}

struct Collected {
    accuracies: Vec<f64>,
    aborted: Vec<AbortedTask>,
    diagnostics: Diagnostics,
    phase_secs: [f64; Phase::ALL.len()],
}

fn collect(results: Vec<TaskResult>) -> Result<Collected, EvalError> {
    let tasks = results.len();
    let mut c = Collected {
        accuracies: Vec::with_capacity(tasks),
        aborted: Vec::new(),
        diagnostics: Diagnostics::default(),
        phase_secs: [0.0; Phase::ALL.len()],
    };
    for (task, r) in results.into_iter().enumerate() {
        for (total, s) in c.phase_secs.iter_mut().zip(r.secs) {
            *total += s;
        }
        match r.outcome {
            Ok(o) => {
                c.accuracies.push(o.accuracy);
                c.diagnostics += o.diagnostics;
            }
            Err(e) => c.aborted.push(AbortedTask {
                task,
                error: e.to_string(),
            }),
        }
    }
    let allowed = tasks / 100;
    if c.aborted.len() > allowed {
        let first = &c.aborted[0];
        return Err(EvalError::TooManyAborted {
            aborted: c.aborted.len(),
            allowed,
            tasks,
            first_task: first.task,
            first_error: first.error.clone(),
            diagnostics: c.diagnostics,
        });
    }
    Ok(c)
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, EvalError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()?;
    Ok(pool.install(f))
}

pub fn run_eval(config: &RunConfig, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let set = load_data(&config.data, config.seed)?;
    run_eval_on(&set, config, opts)
}

/// Runs `config.n_tasks` episodes drawn from `set`.
pub fn run_eval_on(
    set: &EmbeddingSet,
    config: &RunConfig,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let start = Instant::now();
    let (primary, other) = in_pool(opts.threads, || {
        let primary = run_tasks(set, &config.pipeline, config.seed, config.n_tasks);
        let other = opts.compare.then(|| {
            let mut p = config.pipeline;
            p.proto.strategy = match p.proto.strategy {
                ProtoStrategy::Trained => ProtoStrategy::Mean,
                ProtoStrategy::Mean => ProtoStrategy::Trained,
            };
            run_tasks(set, &p, config.seed, config.n_tasks)
        });
        (primary, other)
    })?;

    let c = collect(primary)?;
    let mut report = EvalReport::new(config.clone(), c.accuracies, c.aborted, c.diagnostics)?;
    if let Some(other) = other {
        let o = collect(other)?;
        let (trained, mean) = match config.pipeline.proto.strategy {
            ProtoStrategy::Trained => (&report.per_task_accuracy, &o.accuracies),
            ProtoStrategy::Mean => (&o.accuracies, &report.per_task_accuracy),
        };
        report.strategy_delta = Some(StrategyDelta::new(trained, mean)?);
    }
    report.wall_time = WallTime {
        total_secs: start.elapsed().as_secs_f64(),
        phase_secs: Phase::ALL
            .iter()
            .zip(c.phase_secs)
            .map(|(p, s)| (p.name().to_string(), s))
            .collect(),
    };
    Ok(report)
}
