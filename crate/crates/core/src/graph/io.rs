use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{DataflowGraph, Edge, GraphError, MetaOp, Vertex};

#[derive(Debug, Error)]
pub enum GraphIoError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("graph schema: {0}")]
    Schema(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] GraphError),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    vertices: Vec<Vertex>,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    meta_ops: Vec<MetaOp>,
    /// Provenance citation added by the command-line tool; ignored.
    #[serde(rename = "manifest", default, skip_serializing)]
    _manifest: Option<serde_json::Value>,
}

impl DataflowGraph {
    pub fn to_json(&self) -> String {
        let file = GraphFile {
            vertices: self.vertices.clone(),
            edges: self.edges.iter().map(|e| [e.src, e.dst]).collect(),
            meta_ops: self.meta_ops.clone(),
            _manifest: None,
        };
        serde_json::to_string_pretty(&file).expect("graph serializes")
    }

    /// Parses and validates a graph document.
    pub fn from_json(text: &str) -> Result<Self, GraphIoError> {
        let file: GraphFile = serde_json::from_str(text)?;
        let edges = file.edges.into_iter().map(|[s, d]| Edge::new(s, d)).collect();
        Ok(DataflowGraph::new(file.vertices, edges, file.meta_ops)?)
    }
}

pub fn load_json(path: impl AsRef<Path>) -> Result<DataflowGraph, GraphIoError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| GraphIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    DataflowGraph::from_json(&text)
}

pub fn save_json(graph: &DataflowGraph, path: impl AsRef<Path>) -> Result<(), GraphIoError> {
    let path = path.as_ref();
    fs::write(path, graph.to_json()).map_err(|source| GraphIoError::Io {
        path: path.display().to_string(),
        source,
    })
}
