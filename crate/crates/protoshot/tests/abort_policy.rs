use protoshot::{run_eval_on, DataSource, EvalError, EvalOptions, RunConfig};
use protoshot_core::embedset::SyntheticSpec;
use protoshot_core::EmbeddingSet;

/// `n_good` classes of three records plus one class with a single record, which
/// aborts any 1-way 1-shot 2-query episode that draws it.
fn pool(n_good: u32) -> EmbeddingSet {
    let mut set = EmbeddingSet::new(2).unwrap();
    for c in 0..n_good {
        for i in 0..3 {
            set.push(&[c as f32 + 1.0, i as f32 + 1.0], c).unwrap();
        }
    }
    set.push(&[1.0, 1.0], 999).unwrap();
    set
}

fn config(n_tasks: usize) -> RunConfig {
    let mut c = RunConfig {
        data: DataSource::Synthetic(SyntheticSpec::STANDARD),
        n_tasks,
        seed: 1,
        ..RunConfig::default()
    };
    c.pipeline.n_ways = 1;
    c.pipeline.k_shots = 1;
    c.pipeline.n_queries = 2;
    c.pipeline.proto.epochs = 5;
    c
}

#[test]
fn few_aborts_are_excluded_from_statistics() {
    let r = run_eval_on(&pool(150), &config(400), &EvalOptions::default()).unwrap();
    assert!(
        !r.aborted.is_empty() && r.aborted.len() <= 4,
        "{:?}",
        r.aborted
    );
    assert_eq!(r.per_task_accuracy.len() + r.aborted.len(), 400);
    assert!(r.aborted[0].error.contains("999"));
    assert_eq!(r.mean_accuracy, 1.0);
}

#[test]
fn too_many_aborts_fail() {
    match run_eval_on(&pool(9), &config(200), &EvalOptions::default()) {
        Err(EvalError::TooManyAborted {
            allowed: 2,
            tasks: 200,
            aborted,
            ..
        }) => assert!(aborted > 2),
        other => panic!("{:?}", other.map(|r| r.aborted)),
    }
}
