//! Knowledge graph store.
//!
//! An immutable, in-process triple store loaded from TSV with forward and
//! reverse adjacency indexes. Graph access used by the scorer and the
//! pipeline goes through [`GraphView`], so a remote SPARQL endpoint can be
//! plugged in via [`RemoteGraph`] without touching the callers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("invalid identifier {0:?}: must be non-empty and contain no tab or newline")]
    InvalidId(String),
    #[error("remote endpoint failed: {0}")]
    Remote(String),
}

fn check_id(s: &str) -> Result<(), KgError> {
    if s.is_empty() || s.contains(['\t', '\n', '\r']) {
        return Err(KgError::InvalidId(s.to_string()));
    }
    Ok(())
}

/// Opaque entity identifier, e.g. a Freebase MID such as `m.0bxtg`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityId(String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Result<Self, KgError> {
        let id = id.into();
        check_id(&id)?;
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityId {
    type Error = KgError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<EntityId> for String {
    fn from(value: EntityId) -> Self {
        value.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EntityId({})", self.0)
    }
}

/// Opaque relation identifier, e.g. `film.director.film`.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RelationId(String);

impl RelationId {
    pub fn new(id: impl Into<String>) -> Result<Self, KgError> {
        let id = id.into();
        check_id(&id)?;
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for RelationId {
    type Error = KgError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<RelationId> for String {
    fn from(value: RelationId) -> Self {
        value.0
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RelationId({})", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(subject: &str, relation: &str, object: &str) -> Result<Self, KgError> {
        Ok(Self {
            subject: EntityId::new(subject)?,
            relation: RelationId::new(relation)?,
            object: EntityId::new(object)?,
        })
    }
}

/// Edge direction relative to the queried entity.
///
/// `Incoming` sorts before `Outgoing`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Incoming,
    Outgoing,
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "out" | "outgoing" => Ok(Direction::Outgoing),
            "in" | "incoming" => Ok(Direction::Incoming),
            other => Err(format!("unknown direction {other:?} (expected out or in)")),
        }
    }
}

/// One edge seen from a center entity `c`: `Outgoing` means `<c, relation,
/// neighbor>` exists, `Incoming` means `<neighbor, relation, c>` exists.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NeighborEdge {
    pub direction: Direction,
    pub relation: RelationId,
    pub neighbor: EntityId,
}

/// Read access to a graph, either local or remote.
pub trait GraphView: Sync {
    /// All incoming and outgoing edges of `e`, deduplicated and sorted.
    fn neighbors_1hop(&self, e: &EntityId) -> Result<Vec<NeighborEdge>, KgError>;

    /// Display name for `e`, falling back to the raw id.
    fn label(&self, e: &EntityId) -> String;

    fn contains(&self, e: &EntityId) -> Result<bool, KgError>;

    /// Deduplicated, sorted set of entities adjacent to `e` in either direction.
    fn neighbors_2hop(&self, e: &EntityId) -> Result<Vec<EntityId>, KgError> {
        let set: BTreeSet<EntityId> = self.neighbors_1hop(e)?.into_iter().map(|edge| edge.neighbor).collect();
        Ok(set.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    triples: BTreeSet<Triple>,
    out_index: HashMap<EntityId, Vec<(RelationId, EntityId)>>,
    in_index: HashMap<EntityId, Vec<(RelationId, EntityId)>>,
    labels: HashMap<EntityId, String>,
}

impl KnowledgeGraph {
    /// Builds a graph from triples; duplicates collapse.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let triples: BTreeSet<Triple> = triples.into_iter().collect();
        let mut out_index: HashMap<EntityId, Vec<(RelationId, EntityId)>> = HashMap::new();
        let mut in_index: HashMap<EntityId, Vec<(RelationId, EntityId)>> = HashMap::new();
        // BTreeSet iteration is sorted by (subject, relation, object), so each
        // out list is already sorted; in lists are sorted below.
        for t in &triples {
            out_index
                .entry(t.subject.clone())
                .or_default()
                .push((t.relation.clone(), t.object.clone()));
            in_index
                .entry(t.object.clone())
                .or_default()
                .push((t.relation.clone(), t.subject.clone()));
        }
        for list in in_index.values_mut() {
            list.sort();
        }
        Self {
            triples,
            out_index,
            in_index,
            labels: HashMap::new(),
        }
    }

    pub fn with_labels(mut self, labels: impl IntoIterator<Item = (EntityId, String)>) -> Self {
        self.labels.extend(labels);
        self
    }

    pub fn triples(&self) -> impl Iterator<Item = &Triple> {
        self.triples.iter()
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn out_edges(&self, e: &EntityId) -> &[(RelationId, EntityId)] {
        self.out_index.get(e).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn in_edges(&self, e: &EntityId) -> &[(RelationId, EntityId)] {
        self.in_index.get(e).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn has_entity(&self, e: &EntityId) -> bool {
        self.out_index.contains_key(e) || self.in_index.contains_key(e)
    }

    /// Every entity that appears in some triple, sorted.
    pub fn entities(&self) -> Vec<EntityId> {
        let set: BTreeSet<&EntityId> = self.out_index.keys().chain(self.in_index.keys()).collect();
        set.into_iter().cloned().collect()
    }

    pub fn edges(&self, e: &EntityId) -> Vec<NeighborEdge> {
        let mut edges: Vec<NeighborEdge> = self
            .in_edges(e)
            .iter()
            .map(|(r, n)| NeighborEdge {
                direction: Direction::Incoming,
                relation: r.clone(),
                neighbor: n.clone(),
            })
            .chain(self.out_edges(e).iter().map(|(r, n)| NeighborEdge {
                direction: Direction::Outgoing,
                relation: r.clone(),
                neighbor: n.clone(),
            }))
            .collect();
        // A self-loop appears once per direction, which is the intended reading.
        edges.sort();
        edges.dedup();
        edges
    }

    pub fn label_of(&self, e: &EntityId) -> String {
        self.labels.get(e).cloned().unwrap_or_else(|| e.as_str().to_string())
    }
}

impl GraphView for KnowledgeGraph {
    fn neighbors_1hop(&self, e: &EntityId) -> Result<Vec<NeighborEdge>, KgError> {
        Ok(self.edges(e))
    }

    fn label(&self, e: &EntityId) -> String {
        self.label_of(e)
    }

    fn contains(&self, e: &EntityId) -> Result<bool, KgError> {
        Ok(self.has_entity(e))
    }
}

fn read(path: &Path) -> Result<String, KgError> {
    fs::read_to_string(path).map_err(|source| KgError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

/// Loads a graph from a triples TSV file and an optional labels TSV file.
///
/// Blank lines and `#` comments are skipped. Literal objects (dates,
/// numbers) are ordinary entities whose label is their own text.
pub fn load_graph(triples_path: &Path, labels_path: Option<&Path>) -> Result<KnowledgeGraph, KgError> {
    let text = read(triples_path)?;
    let path = triples_path.display().to_string();
    let mut triples = Vec::new();
    for (line, raw) in data_lines(&text) {
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed {
                path,
                line,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let triple = Triple::new(fields[0], fields[1], fields[2]).map_err(|e| KgError::Malformed {
            path: path.clone(),
            line,
            reason: e.to_string(),
        })?;
        triples.push(triple);
    }
    let mut graph = KnowledgeGraph::from_triples(triples);

    if let Some(labels_path) = labels_path {
        let text = read(labels_path)?;
        let path = labels_path.display().to_string();
        let mut labels = Vec::new();
        for (line, raw) in data_lines(&text) {
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 2 {
                return Err(KgError::Malformed {
                    path,
                    line,
                    reason: format!("expected 2 tab-separated fields, found {}", fields.len()),
                });
            }
            let id = EntityId::new(fields[0]).map_err(|e| KgError::Malformed {
                path: path.clone(),
                line,
                reason: e.to_string(),
            })?;
            labels.push((id, fields[1].to_string()));
        }
        graph = graph.with_labels(labels);
    }
    Ok(graph)
}

/// Renders the fixed neighbor-retrieval SPARQL template.
///
/// `Outgoing` selects `?tailEntity`, `Incoming` selects `?headEntity`. With no
/// relation, the predicate position holds `?r`, which is also selected.
pub fn render_sparql(e: &EntityId, direction: Direction, relation: Option<&RelationId>) -> String {
    let predicate = relation.map_or_else(|| "?r".to_string(), |r| format!("ns:{r}"));
    let (var, pattern) = match direction {
        Direction::Outgoing => ("?tailEntity", format!("ns:{e} {predicate} ?tailEntity .")),
        Direction::Incoming => ("?headEntity", format!("?headEntity {predicate} ns:{e} .")),
    };
    let select = if relation.is_some() {
        var.to_string()
    } else {
        format!("?r {var}")
    };
    format!("SELECT {select}\nWHERE {{\n  {pattern}\n}}\n")
}

/// Collapses all whitespace runs to single spaces and trims; used to compare
/// queries independent of layout.
pub fn canonical_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// One result row of a SPARQL SELECT, variable name (without `?`) to value.
pub type Binding = BTreeMap<String, String>;

/// Hook for executing rendered queries against an external endpoint.
pub trait SparqlEndpoint: Send + Sync {
    fn select(&self, query: &str) -> Result<Vec<Binding>, KgError>;
}

impl<F> SparqlEndpoint for F
where
    F: Fn(&str) -> Result<Vec<Binding>, KgError> + Send + Sync,
{
    fn select(&self, query: &str) -> Result<Vec<Binding>, KgError> {
        self(query)
    }
}

const FREEBASE_NS: &str = "http://rdf.freebase.com/ns/";

fn strip_namespace(value: &str) -> &str {
    value
        .strip_prefix(FREEBASE_NS)
        .or_else(|| value.strip_prefix("ns:"))
        .unwrap_or(value)
}

/// Graph view backed by a remote SPARQL endpoint through the neighbor
/// template. Labels are not fetched; the id fallback applies.
pub struct RemoteGraph<E> {
    endpoint: E,
}

impl<E: SparqlEndpoint> RemoteGraph<E> {
    pub fn new(endpoint: E) -> Self {
        Self { endpoint }
    }

    fn fetch(&self, e: &EntityId, direction: Direction) -> Result<Vec<NeighborEdge>, KgError> {
        let query = render_sparql(e, direction, None);
        let var = match direction {
            Direction::Outgoing => "tailEntity",
            Direction::Incoming => "headEntity",
        };
        let mut edges = Vec::new();
        for row in self.endpoint.select(&query)? {
            let (Some(r), Some(n)) = (row.get("r"), row.get(var)) else {
                return Err(KgError::Remote(format!("binding missing ?r or ?{var}: {row:?}")));
            };
            edges.push(NeighborEdge {
                direction,
                relation: RelationId::new(strip_namespace(r))?,
                neighbor: EntityId::new(strip_namespace(n))?,
            });
        }
        Ok(edges)
    }
}

impl<E: SparqlEndpoint> GraphView for RemoteGraph<E> {
    fn neighbors_1hop(&self, e: &EntityId) -> Result<Vec<NeighborEdge>, KgError> {
        let mut edges = self.fetch(e, Direction::Incoming)?;
        edges.extend(self.fetch(e, Direction::Outgoing)?);
        edges.sort();
        edges.dedup();
        Ok(edges)
    }

    fn label(&self, e: &EntityId) -> String {
        e.as_str().to_string()
    }

    fn contains(&self, e: &EntityId) -> Result<bool, KgError> {
        Ok(!self.neighbors_1hop(e)?.is_empty())
    }
}
