//! Training data construction and mini-batch gradient descent.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{forward, grad};
use super::params::{ScorerDims, ScorerParams};
use super::ScorerError;
use crate::encoder::{node_text, Embedding, TextEncoder};
use crate::kg::{EntityId, GraphView, KnowledgeGraph, NeighborEdge};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question_emb: Embedding,
    pub center_emb: Embedding,
    pub neighbor_embs: Vec<Embedding>,
    /// 1 = relevant, 0 = irrelevant.
    pub label: u8,
}

/// A single-hop supervision sample: `answer` is directly linked to `topic`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub question: String,
    pub topic: EntityId,
    pub answer: EntityId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub negative_ratio: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            negative_ratio: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ScorerError> {
        // lr = 0 is allowed: it is the identity run used to check initialization.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ScorerError::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.negative_ratio == 0 {
            return Err(ScorerError::Config(
                "epochs, batch_size and negative_ratio must be positive".into(),
            ));
        }
        Ok(())
    }
}

const SHUFFLE_STREAM: u64 = 1;
const SAMPLING_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains from the seeded initialization for `dims`.
pub fn train(dataset: &[TrainingExample], dims: ScorerDims, cfg: &TrainConfig) -> Result<ScorerParams, ScorerError> {
    train_from(ScorerParams::init(dims, cfg.seed), dataset, cfg)
}

/// Plain mini-batch gradient descent over a seeded per-epoch shuffle.
pub fn train_from(
    mut params: ScorerParams,
    dataset: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<ScorerParams, ScorerError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(ScorerError::Empty("training set"));
    }
    let mut rng = rng_for(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| dataset[i].clone()));
            let g = grad(&batch, &params)?;
            params.sgd_step(cfg.learning_rate, &g);
        }
        log::debug!("epoch {epoch} done");
    }
    params.validate()?;
    Ok(params)
}

/// Fraction of examples whose argmax class equals the label.
pub fn accuracy(dataset: &[TrainingExample], params: &ScorerParams) -> Result<f64, ScorerError> {
    if dataset.is_empty() {
        return Err(ScorerError::Empty("dataset"));
    }
    let mut correct = 0usize;
    for ex in dataset {
        let views: Vec<&[f64]> = ex.neighbor_embs.iter().map(Embedding::as_slice).collect();
        let f = forward(ex.question_emb.as_slice(), ex.center_emb.as_slice(), &views, params)?;
        let predicted = u8::from(f.probs[1] > f.probs[0]);
        correct += usize::from(predicted == ex.label);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

struct Sample {
    center_text: String,
    entity: EntityId,
    label: u8,
}

/// One positive per pair plus `negative_ratio` sampled negatives.
///
/// Negatives come uniformly from the topic's other 1-hop neighbors; when the
/// topic has none, from all graph entities other than the topic and answer.
pub fn build_training_set(
    graph: &KnowledgeGraph,
    pairs: &[TrainingPair],
    encoder: &dyn TextEncoder,
    cfg: &TrainConfig,
) -> Result<Vec<TrainingExample>, ScorerError> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, SAMPLING_STREAM);
    let all_entities = graph.entities();
    let edge_text = |e: &NeighborEdge| node_text(&graph.label(&e.neighbor), e.relation.as_str(), e.direction);

    let mut plan: Vec<(usize, Sample)> = Vec::new();
    for (index, pair) in pairs.iter().enumerate() {
        let edges = graph.edges(&pair.topic);
        let Some(positive) = edges.iter().find(|e| e.neighbor == pair.answer) else {
            return Err(ScorerError::NotANeighbor {
                index,
                topic: pair.topic.to_string(),
                answer: pair.answer.to_string(),
            });
        };
        plan.push((
            index,
            Sample {
                center_text: edge_text(positive),
                entity: pair.answer.clone(),
                label: 1,
            },
        ));

        // First edge per distinct neighbor.
        let mut seen = BTreeSet::new();
        let others: Vec<&NeighborEdge> = edges
            .iter()
            .filter(|e| e.neighbor != pair.answer && seen.insert(&e.neighbor))
            .collect();
        for _ in 0..cfg.negative_ratio {
            let sample = if !others.is_empty() {
                let e = others[rng.random_range(0..others.len())];
                Sample {
                    center_text: edge_text(e),
                    entity: e.neighbor.clone(),
                    label: 0,
                }
            } else {
                let pool: Vec<&EntityId> = all_entities
                    .iter()
                    .filter(|e| **e != pair.answer && **e != pair.topic)
                    .collect();
                let Some(e) = (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())]) else {
                    log::warn!("pair {index}: no entity available for a negative sample");
                    continue;
                };
                Sample {
                    center_text: graph.label(e),
                    entity: e.clone(),
                    label: 0,
                }
            };
            plan.push((index, sample));
        }
    }

    let mut examples = Vec::with_capacity(plan.len());
    for (index, sample) in plan {
        let neighbor_texts: Vec<String> = graph
            .neighbors_2hop(&sample.entity)?
            .iter()
            .map(|n| graph.label(n))
            .collect();
        let mut texts = vec![pairs[index].question.clone(), sample.center_text];
        texts.extend(neighbor_texts);
        let mut embs = encoder.encode(&texts)?.into_iter();
        let (Some(question_emb), Some(center_emb)) = (embs.next(), embs.next()) else {
            return Err(ScorerError::Dimension {
                what: "encoder output count",
                expected: texts.len(),
                got: 0,
            });
        };
        examples.push(TrainingExample {
            question_emb,
            center_emb,
            neighbor_embs: embs.collect(),
            label: sample.label,
        });
    }
    Ok(examples)
}
