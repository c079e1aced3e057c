//! One episode end to end: sample, propagate, train the head, build
//! prototypes, classify.

use alloc::vec::Vec;

use rand::Rng;

use crate::diag::Diagnostics;
use crate::embedset::{sample_episode, EmbeddingSet, Episode};
use crate::error::{Error, Result};
use crate::headcls::{manifold_augment, train_head, HeadConfig};
use crate::metriccls::{build_masks, classify_all, score_episode};
use crate::prototrain::{mean_prototypes, train_prototypes, ProtoConfig, ProtoStrategy};
use crate::taskgraph::{GraphParams, TaskGraph};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskConfig {
    pub enabled: bool,
    pub mu: f64,
    pub epsilon: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mu: 1.0,
            epsilon: 10000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PipelineConfig {
    pub n_ways: usize,
    pub k_shots: usize,
    /// Queries per class.
    pub n_queries: usize,
    pub graph: GraphParams,
    pub head: HeadConfig,
    pub proto: ProtoConfig,
    pub mask: MaskConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_ways: 5,
            k_shots: 5,
            n_queries: 15,
            graph: GraphParams::default(),
            head: HeadConfig::default(),
            proto: ProtoConfig::default(),
            mask: MaskConfig::default(),
        }
    }
}

fn positive(name: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::out_of_range(name, 0.0, ">= 1"));
    }
    Ok(())
}

fn finite(name: &'static str, v: f64, min: f64, expected: &'static str) -> Result<()> {
    if !(v.is_finite() && v >= min) {
        return Err(Error::out_of_range(name, v, expected));
    }
    Ok(())
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        positive("n_ways", self.n_ways)?;
        positive("k_shots", self.k_shots)?;
        positive("n_queries", self.n_queries)?;
        positive("graph m", self.graph.m)?;
        finite("graph alpha", self.graph.alpha, f64::MIN, "finite")?;
        positive("head epochs", self.head.epochs)?;
        finite("head lr", self.head.lr, 0.0, "finite, >= 0")?;
        finite("head init_std", self.head.init_std, 0.0, "finite, >= 0")?;
        if self.proto.strategy == ProtoStrategy::Trained {
            positive("proto epochs", self.proto.epochs)?;
        }
        finite("proto lr", self.proto.lr, 0.0, "finite, >= 0")?;
        self.proto.weights.validate()?;
        finite("mask mu", self.mask.mu, f64::MIN, "finite")?;
        finite("mask epsilon", self.mask.epsilon, 0.0, "finite, >= 0")?;
        Ok(())
    }
}

/// Pipeline stages, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Phase {
    Sample,
    Graph,
    Head,
    Prototypes,
    Classify,
}

impl Phase {
    pub const ALL: [Phase; 5] = [
        Phase::Sample,
        Phase::Graph,
        Phase::Head,
        Phase::Prototypes,
        Phase::Classify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Sample => "sample",
            Phase::Graph => "graph",
            Phase::Head => "head",
            Phase::Prototypes => "prototypes",
            Phase::Classify => "classify",
        }
    }
}

/// Receives phase boundaries. The core crate has no clock; `()` ignores them.
pub trait PhaseTimer {
    fn begin(&mut self, phase: Phase);
    fn end(&mut self, phase: Phase);
}

impl PhaseTimer for () {
    fn begin(&mut self, _: Phase) {}
    fn end(&mut self, _: Phase) {}
}

fn timed<T, P: PhaseTimer + ?Sized>(timer: &mut P, phase: Phase, f: impl FnOnce() -> T) -> T {
    timer.begin(phase);
    let out = f();
    timer.end(phase);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub diagnostics: Diagnostics,
}

/// Samples an episode from `set` and runs [`run_on_episode`] on it.
pub fn run_episode<R: Rng + ?Sized, P: PhaseTimer + ?Sized>(
    set: &EmbeddingSet,
    config: &PipelineConfig,
    rng: &mut R,
    timer: &mut P,
) -> Result<EpisodeOutcome> {
    config.validate()?;
    let episode = timed(timer, Phase::Sample, || {
        sample_episode(set, config.n_ways, config.k_shots, config.n_queries, rng)
    })?;
    run_on_episode(&episode, config, rng, timer)
}

/// Propagates features over the episode graph, trains the head and the
/// prototypes, and classifies the queries.
pub fn run_on_episode<R: Rng + ?Sized, P: PhaseTimer + ?Sized>(
    episode: &Episode,
    config: &PipelineConfig,
    rng: &mut R,
    timer: &mut P,
) -> Result<EpisodeOutcome> {
    config.validate()?;
    let n = episode.n_ways();
    let mut diag = Diagnostics::default();

    let graph = timed(timer, Phase::Graph, || {
        TaskGraph::build(episode.support(), episode.query(), &config.graph, &mut diag)
    })?;
    let support = graph.support_features();
    let query = graph.query_features();
    let labels = episode.support_labels();

    let head = timed(timer, Phase::Head, || {
        let aug = manifold_augment(&support, labels, n, config.head.n_aug, rng)?;
        train_head(&aug, n, &config.head, rng, &mut diag)
    })?
    .head;

    let protos = timed(timer, Phase::Prototypes, || match config.proto.strategy {
        ProtoStrategy::Mean => mean_prototypes(&support, labels, n),
        ProtoStrategy::Trained => {
            train_prototypes(&head, &support, labels, &config.proto, rng, &mut diag).map(|t| t.bank)
        }
    })?
    .protos;

    timer.begin(Phase::Classify);
    let masks = config
        .mask
        .enabled
        .then(|| build_masks(&protos, config.mask.mu, config.mask.epsilon));
    let predictions = classify_all(&query, &protos, masks.as_ref(), &mut diag)?;
    let accuracy = score_episode(episode, &predictions)?;
    timer.end(Phase::Classify);

    Ok(EpisodeOutcome {
        accuracy,
        predictions,
        diagnostics: diag,
    })
}
