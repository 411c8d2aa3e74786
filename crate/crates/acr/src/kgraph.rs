//! Knowledge-based retrieval: a subject–predicate–object triple store with
//! entity aliases, n-hop neighborhood expansion, and linearization of
//! triples into synthetic evidence chunks.
//!
//! Graph file format (UTF-8, tab-separated, one record per line):
//!
//! ```text
//! E<TAB>entity_id<TAB>name<TAB>alias1|alias2|...
//! T<TAB>subject_id<TAB>predicate<TAB>object_id
//! ```
//!
//! Entity linking is exact on tokenized names: a concept links to an entity
//! when its token sequence equals the tokenized name or any tokenized
//! alias. That keeps linking deterministic and auditable.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Chunk, KG_DOC_ID};
use crate::error::{Error, Result};
use crate::lexical::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub entity_id: String,
    pub name: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

/// Index of a triple in the graph's file-order triple list.
pub type TripleIdx = usize;

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    entities: HashMap<String, Entity>,
    triples: Vec<Triple>,
    /// entity_id -> indexes of triples touching it (either direction).
    adjacency: HashMap<String, Vec<TripleIdx>>,
    /// Space-joined token key of each name/alias -> entity ids.
    name_keys: HashMap<String, BTreeSet<String>>,
}

fn token_key(text: &str) -> String {
    tokenize(text).join(" ")
}

impl KnowledgeGraph {
    /// Builds a graph from parts, checking referential integrity.
    pub fn from_parts(entities: Vec<Entity>, triples: Vec<Triple>) -> Result<Self> {
        let mut graph = KnowledgeGraph::default();
        for entity in entities {
            graph.insert_entity(entity)?;
        }
        for triple in triples {
            graph.insert_triple(triple)?;
        }
        Ok(graph)
    }

    fn insert_entity(&mut self, entity: Entity) -> Result<()> {
        if entity.entity_id.is_empty() {
            return Err(Error::Invalid("entity_id must be nonempty".into()));
        }
        if entity.name.is_empty() {
            return Err(Error::Invalid(format!(
                "entity {:?} has an empty name",
                entity.entity_id
            )));
        }
        if self.entities.contains_key(&entity.entity_id) {
            return Err(Error::Invalid(format!(
                "duplicate entity_id {:?}",
                entity.entity_id
            )));
        }
        for label in std::iter::once(&entity.name).chain(entity.aliases.iter()) {
            let key = token_key(label);
            if !key.is_empty() {
                self.name_keys
                    .entry(key)
                    .or_default()
                    .insert(entity.entity_id.clone());
            }
        }
        self.entities.insert(entity.entity_id.clone(), entity);
        Ok(())
    }

    fn insert_triple(&mut self, triple: Triple) -> Result<()> {
        if triple.predicate.is_empty() {
            return Err(Error::Invalid("triple predicate must be nonempty".into()));
        }
        for endpoint in [&triple.subject, &triple.object] {
            if !self.entities.contains_key(endpoint) {
                return Err(Error::UnknownEntity(endpoint.clone()));
            }
        }
        let idx = self.triples.len();
        self.adjacency
            .entry(triple.subject.clone())
            .or_default()
            .push(idx);
        if triple.object != triple.subject {
            self.adjacency
                .entry(triple.object.clone())
                .or_default()
                .push(idx);
        }
        self.triples.push(triple);
        Ok(())
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn entity(&self, entity_id: &str) -> Option<&Entity> {
        self.entities.get(entity_id)
    }

    pub fn triple(&self, idx: TripleIdx) -> Option<&Triple> {
        self.triples.get(idx)
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }
}

/// Loads a graph file. Entities may appear anywhere in the file relative to
/// the triples that use them; dangling references and duplicate entity ids
/// are rejected with their line number.
pub fn load_graph(path: impl AsRef<Path>) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entity_lines: Vec<(usize, Entity)> = Vec::new();
    let mut triple_lines: Vec<(usize, Triple)> = Vec::new();

    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "E" => {
                if fields.len() != 3 && fields.len() != 4 {
                    return Err(Error::format(
                        path,
                        lineno,
                        "entity line must be E<TAB>id<TAB>name[<TAB>aliases]",
                    ));
                }
                let aliases = fields
                    .get(3)
                    .map(|raw| {
                        raw.split('|')
                            .map(str::trim)
                            .filter(|a| !a.is_empty())
                            .map(str::to_string)
                            .collect()
                    })
                    .unwrap_or_default();
                entity_lines.push((
                    lineno,
                    Entity {
                        entity_id: fields[1].to_string(),
                        name: fields[2].to_string(),
                        aliases,
                    },
                ));
            }
            "T" => {
                if fields.len() != 4 {
                    return Err(Error::format(
                        path,
                        lineno,
                        "triple line must be T<TAB>subject<TAB>predicate<TAB>object",
                    ));
                }
                triple_lines.push((
                    lineno,
                    Triple {
                        subject: fields[1].to_string(),
                        predicate: fields[2].to_string(),
                        object: fields[3].to_string(),
                    },
                ));
            }
            other => {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("unknown record type {other:?}"),
                ));
            }
        }
    }

    // Entities first so triples can reference them regardless of order.
    let mut graph = KnowledgeGraph::default();
    for (lineno, entity) in entity_lines {
        graph
            .insert_entity(entity)
            .map_err(|e| Error::format(path, lineno, e.to_string()))?;
    }
    for (lineno, triple) in triple_lines {
        graph
            .insert_triple(triple)
            .map_err(|e| Error::format(path, lineno, e.to_string()))?;
    }
    Ok(graph)
}

/// Links concepts to entities by exact tokenized-name equality, against the
/// entity name or any alias. Output is deduplicated, ascending entity_id.
pub fn link_entities(graph: &KnowledgeGraph, concepts: &[String]) -> Vec<String> {
    let mut linked: BTreeSet<String> = BTreeSet::new();
    for concept in concepts {
        let key = token_key(concept);
        if key.is_empty() {
            continue;
        }
        if let Some(ids) = graph.name_keys.get(&key) {
            linked.extend(ids.iter().cloned());
        }
    }
    linked.into_iter().collect()
}

/// Breadth-first expansion over undirected adjacency.
///
/// Returns, in file order, every triple whose endpoints both lie within
/// `hops` of some seed; `hops = 0` selects exactly the triples between the
/// seeds themselves.
pub fn expand_neighborhood(
    graph: &KnowledgeGraph,
    seeds: &[String],
    hops: usize,
) -> Result<Vec<TripleIdx>> {
    let mut distance: HashMap<&str, usize> = HashMap::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    for seed in seeds {
        let entity = graph
            .entity(seed)
            .ok_or_else(|| Error::UnknownEntity(seed.clone()))?;
        distance.entry(entity.entity_id.as_str()).or_insert(0);
        queue.push_back(entity.entity_id.as_str());
    }

    while let Some(current) = queue.pop_front() {
        let d = distance[current];
        if d == hops {
            continue;
        }
        let Some(triple_idxs) = graph.adjacency.get(current) else {
            continue;
        };
        for &idx in triple_idxs {
            let triple = &graph.triples[idx];
            for neighbor in [triple.subject.as_str(), triple.object.as_str()] {
                if !distance.contains_key(neighbor) {
                    distance.insert(neighbor, d + 1);
                    queue.push_back(neighbor);
                }
            }
        }
    }

    let selected: Vec<TripleIdx> = graph
        .triples
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            distance.contains_key(t.subject.as_str()) && distance.contains_key(t.object.as_str())
        })
        .map(|(idx, _)| idx)
        .collect();
    Ok(selected)
}

/// Linearizes triples into synthetic evidence chunks in the reserved `kg`
/// namespace: chunk `kg#{idx}` with text
/// `"{subject name} {predicate} {object name}."`.
pub fn triples_to_evidence(graph: &KnowledgeGraph, triple_idxs: &[TripleIdx]) -> Vec<Chunk> {
    triple_idxs
        .iter()
        .filter_map(|&idx| {
            let triple = graph.triple(idx)?;
            let subject = graph.entity(&triple.subject)?;
            let object = graph.entity(&triple.object)?;
            let text = format!("{} {} {}.", subject.name, triple.predicate, object.name);
            Some(Chunk {
                chunk_id: format!("{KG_DOC_ID}#{idx}"),
                doc_id: KG_DOC_ID.to_string(),
                ordinal: idx,
                char_start: 0,
                char_end: text.chars().count(),
                text,
            })
        })
        .collect()
}
