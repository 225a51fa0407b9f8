//! Candidate scoring over a frontier and top-k selection.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::model::forward;
use super::params::ScorerParams;
use super::ScorerError;
use crate::encoder::{node_text, TextEncoder, REMOTE_BATCH_LIMIT};
use crate::kg::{EntityId, GraphView, NeighborEdge};
use crate::par::{map_ordered, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub entity: EntityId,
    pub via_edge: NeighborEdge,
    pub score: f64,
}

fn by_score_then_id(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.entity.cmp(&b.entity))
        .then_with(|| a.via_edge.cmp(&b.via_edge))
}

/// Interns texts so each distinct string is encoded once.
#[derive(Default)]
struct TextTable {
    index: HashMap<String, usize>,
    texts: Vec<String>,
}

impl TextTable {
    fn intern(&mut self, text: String) -> usize {
        if let Some(&i) = self.index.get(&text) {
            return i;
        }
        let i = self.texts.len();
        self.index.insert(text.clone(), i);
        self.texts.push(text);
        i
    }
}

/// Scores every 1-hop edge of every frontier entity against `subquestion`.
///
/// Each candidate is embedded from its edge verbalization, aggregated with
/// the label embeddings of its own neighbors, and classified. The result is
/// deduplicated per `(entity, via_edge)` and sorted by descending score, ties
/// broken by entity id.
pub fn score_candidates<G: GraphView + ?Sized>(
    graph: &G,
    frontier: &[EntityId],
    subquestion: &str,
    encoder: &dyn TextEncoder,
    params: &ScorerParams,
) -> Result<Vec<ScoredCandidate>, ScorerError> {
    score_candidates_with(graph, frontier, subquestion, encoder, params, Execution::default())
}

pub fn score_candidates_with<G: GraphView + ?Sized>(
    graph: &G,
    frontier: &[EntityId],
    subquestion: &str,
    encoder: &dyn TextEncoder,
    params: &ScorerParams,
    mode: Execution,
) -> Result<Vec<ScoredCandidate>, ScorerError> {
    let mut edges = BTreeSet::new();
    for e in frontier {
        edges.extend(graph.neighbors_1hop(e)?);
    }
    if edges.is_empty() {
        return Ok(Vec::new());
    }
    let edges: Vec<NeighborEdge> = edges.into_iter().collect();

    let mut table = TextTable::default();
    let question = table.intern(subquestion.to_string());
    let mut neighborhoods: HashMap<&EntityId, Vec<usize>> = HashMap::new();
    let mut centers = Vec::with_capacity(edges.len());
    for edge in &edges {
        let text = node_text(&graph.label(&edge.neighbor), edge.relation.as_str(), edge.direction);
        centers.push(table.intern(text));
        if !neighborhoods.contains_key(&edge.neighbor) {
            let ids: Vec<usize> = graph
                .neighbors_2hop(&edge.neighbor)?
                .iter()
                .map(|n| table.intern(graph.label(n)))
                .collect();
            neighborhoods.insert(&edge.neighbor, ids);
        }
    }

    let chunks: Vec<&[String]> = table.texts.chunks(REMOTE_BATCH_LIMIT).collect();
    let mut embeddings = Vec::with_capacity(table.texts.len());
    for part in map_ordered(&chunks, mode, |c| encoder.encode(c)) {
        embeddings.extend(part?);
    }
    if embeddings.len() != table.texts.len() {
        return Err(ScorerError::Dimension {
            what: "encoder output count",
            expected: table.texts.len(),
            got: embeddings.len(),
        });
    }
    let q = embeddings[question].as_slice();

    let jobs: Vec<(usize, &NeighborEdge)> = centers.into_iter().zip(&edges).collect();
    let scored = map_ordered(&jobs, mode, |(center, edge)| {
        let views: Vec<&[f64]> = neighborhoods[&edge.neighbor]
            .iter()
            .map(|&i| embeddings[i].as_slice())
            .collect();
        let f = forward(q, embeddings[*center].as_slice(), &views, params)?;
        Ok(ScoredCandidate {
            entity: edge.neighbor.clone(),
            via_edge: (*edge).clone(),
            score: f.probs[1],
        })
    });
    let mut out = scored.into_iter().collect::<Result<Vec<_>, ScorerError>>()?;
    out.sort_by(by_score_then_id);
    Ok(out)
}

/// The `k` highest-scoring distinct entities; an entity counts with its best
/// score. Ordered by descending score, ties by entity id ascending.
pub fn select_topk(candidates: &[ScoredCandidate], k: usize) -> Vec<EntityId> {
    let mut best: HashMap<&EntityId, f64> = HashMap::new();
    for c in candidates {
        best.entry(&c.entity)
            .and_modify(|s| {
                if c.score > *s {
                    *s = c.score
                }
            })
            .or_insert(c.score);
    }
    let mut ranked: Vec<(&EntityId, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(k).map(|(e, _)| e.clone()).collect()
}
