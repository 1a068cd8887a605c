//! Reference knowledge graph ingestion.
//!
//! Input is two delimited files with a header row: concepts (`id`, `name`)
//! and edges (`src`, `dst`, `relation`). Tab-separated when the header contains
//! a tab (or has no comma and the file ends in `.tsv`), comma-separated otherwise.
//! Subclass relations (`is a`, `reverse is a`) are kept in the edge list but
//! never traversed; every other edge is traversable in both directions.

use indexmap::IndexSet;
use std::collections::{HashMap, VecDeque};
use std::io::Read;
use std::path::Path;
use thiserror::Error;
use tracing::info;

#[derive(Debug, Error)]
pub enum TruthError {
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error("{file} line {line}: edge references unknown concept id {id:?}")]
    UnknownConcept { file: String, line: u64, id: String },
    #[error("{file} line {line}: duplicate concept {what:?}")]
    DuplicateConcept { file: String, line: u64, what: String },
    #[error("reading {file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

pub const EXCLUDED_RELATIONS: [&str; 2] = ["is a", "reverse is a"];

pub fn is_excluded_relation(label: &str) -> bool {
    let norm = label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    EXCLUDED_RELATIONS.contains(&norm.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledEdge {
    pub src: usize,
    pub dst: usize,
    pub relation: String,
}

#[derive(Debug, Clone, Default)]
pub struct GroundTruthGraph {
    names: Vec<String>,
    by_name: HashMap<String, usize>,
    edges: Vec<LabeledEdge>,
    // distinct directed (src, dst) pairs of traversable edges
    retained: IndexSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl GroundTruthGraph {
    /// Builds from concept names and `(src, dst, relation)` triples over
    /// those names.
    pub fn from_parts<'a>(
        names: impl IntoIterator<Item = &'a str>,
        edges: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Result<Self, TruthError> {
        let mut g = Self::default();
        for (i, n) in names.into_iter().enumerate() {
            g.push_concept(n, "<memory>", i as u64 + 1)?;
        }
        for (i, (s, d, r)) in edges.into_iter().enumerate() {
            let lookup = |n: &str| {
                g.by_name.get(n).copied().ok_or_else(|| TruthError::UnknownConcept {
                    file: "<memory>".into(),
                    line: i as u64 + 1,
                    id: n.to_string(),
                })
            };
            let (s, d) = (lookup(s)?, lookup(d)?);
            g.push_edge(s, d, r);
        }
        Ok(g)
    }

    fn push_concept(&mut self, name: &str, file: &str, line: u64) -> Result<usize, TruthError> {
        let name = name.trim().to_string();
        if name.is_empty() {
            return Err(TruthError::Format {
                file: file.into(),
                message: format!("line {line}: empty concept name"),
            });
        }
        if self.by_name.contains_key(&name) {
            return Err(TruthError::DuplicateConcept {
                file: file.into(),
                line,
                what: name,
            });
        }
        let idx = self.names.len();
        self.by_name.insert(name.clone(), idx);
        self.names.push(name);
        self.adjacency.push(Vec::new());
        Ok(idx)
    }

    fn push_edge(&mut self, src: usize, dst: usize, relation: &str) {
        let relation = relation.trim().to_string();
        if !is_excluded_relation(&relation)
            && src != dst
            && self.retained.insert((src, dst))
            && !self.adjacency[src].contains(&dst)
        {
            self.adjacency[src].push(dst);
            self.adjacency[dst].push(src);
        }
        self.edges.push(LabeledEdge { src, dst, relation });
    }

    pub fn concept_count(&self) -> usize {
        self.names.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn labeled_edges(&self) -> &[LabeledEdge] {
        &self.edges
    }

    /// Distinct directed pairs of traversable edges.
    pub fn retained_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.retained.iter().copied()
    }

    pub fn retained_edge_count(&self) -> usize {
        self.retained.len()
    }

    /// Undirected neighbours over traversable edges.
    pub fn neighbors(&self, idx: usize) -> &[usize] {
        &self.adjacency[idx]
    }

    /// Node count of a shortest undirected path from `src` to `dst`, if one
    /// with at most `max_nodes` nodes exists. A concept reaches itself with a
    /// one-node path.
    pub fn bounded_path_nodes(&self, src: usize, dst: usize, max_nodes: usize) -> Option<usize> {
        if max_nodes == 0 {
            return None;
        }
        if src == dst {
            return Some(1);
        }
        let max_hops = max_nodes - 1;
        let mut dist = vec![usize::MAX; self.names.len()];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(v) = queue.pop_front() {
            if dist[v] >= max_hops {
                continue;
            }
            for &w in &self.adjacency[v] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    if w == dst {
                        return Some(dist[w] + 1);
                    }
                    queue.push_back(w);
                }
            }
        }
        None
    }

    pub fn load(concepts: &Path, edges: &Path) -> Result<Self, TruthError> {
        let open = |p: &Path| {
            std::fs::File::open(p).map_err(|source| TruthError::Io {
                file: p.display().to_string(),
                source,
            })
        };
        let g = Self::from_readers(
            open(concepts)?,
            &concepts.display().to_string(),
            open(edges)?,
            &edges.display().to_string(),
        )?;
        info!(
            concepts = g.concept_count(),
            edges = g.edge_count(),
            traversable = g.retained_edge_count(),
            "reference graph loaded"
        );
        Ok(g)
    }

    pub fn from_readers(
        concepts: impl Read,
        concepts_name: &str,
        edges: impl Read,
        edges_name: &str,
    ) -> Result<Self, TruthError> {
        let mut g = Self::default();
        let mut ids: HashMap<String, usize> = HashMap::new();

        let (header, rows) = read_table(concepts, concepts_name)?;
        let id_col = column(&header, &["id", "cui", "concept_id"], concepts_name)?;
        let name_col = column(&header, &["name", "preferred_name", "label"], concepts_name)?;
        for (line, row) in rows {
            let id = field(&row, id_col, concepts_name, line)?.trim().to_string();
            let name = field(&row, name_col, concepts_name, line)?;
            if ids.contains_key(&id) {
                return Err(TruthError::DuplicateConcept {
                    file: concepts_name.into(),
                    line,
                    what: id,
                });
            }
            let idx = g.push_concept(name, concepts_name, line)?;
            ids.insert(id, idx);
        }

        let (header, rows) = read_table(edges, edges_name)?;
        let src_col = column(&header, &["src", "source", "src_id"], edges_name)?;
        let dst_col = column(&header, &["dst", "target", "dst_id"], edges_name)?;
        let rel_col = column(&header, &["relation", "rel", "label"], edges_name)?;
        for (line, row) in rows {
            let resolve = |col| -> Result<usize, TruthError> {
                let id = field(&row, col, edges_name, line)?.trim();
                ids.get(id).copied().ok_or_else(|| TruthError::UnknownConcept {
                    file: edges_name.into(),
                    line,
                    id: id.to_string(),
                })
            };
            let src = resolve(src_col)?;
            let dst = resolve(dst_col)?;
            let rel = field(&row, rel_col, edges_name, line)?.to_string();
            g.push_edge(src, dst, &rel);
        }
        Ok(g)
    }
}

type Rows = Vec<(u64, csv::StringRecord)>;

fn read_table(mut input: impl Read, file: &str) -> Result<(Vec<String>, Rows), TruthError> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|source| TruthError::Io {
        file: file.into(),
        source,
    })?;
    let first = text.lines().next().unwrap_or("");
    let delimiter = if first.contains('\t') || (!first.contains(',') && file.ends_with(".tsv")) {
        b'\t'
    } else {
        b','
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(false)
        .quoting(delimiter == b',')
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| TruthError::Format {
            file: file.into(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_lowercase())
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| TruthError::Format {
            file: file.into(),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn column(header: &[String], names: &[&str], file: &str) -> Result<usize, TruthError> {
    header
        .iter()
        .position(|h| names.contains(&h.as_str()))
        .ok_or_else(|| TruthError::Format {
            file: file.into(),
            message: format!("missing column (one of {names:?}) in header {header:?}"),
        })
}

fn field<'r>(row: &'r csv::StringRecord, col: usize, file: &str, line: u64) -> Result<&'r str, TruthError> {
    row.get(col).ok_or_else(|| TruthError::Format {
        file: file.into(),
        message: format!("line {line}: missing column {col}"),
    })
}
