use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DataflowGraph, VertexId};

/// Total map from vertex to device, tagged with the engine that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Assignment {
    devices: Vec<usize>,
    engine: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignmentError {
    #[error("assignment covers {got} vertices but the graph has {expected}")]
    Length { got: usize, expected: usize },
    #[error("vertex {vertex} is mapped to device {device} but only {devices} devices exist")]
    Device { vertex: VertexId, device: usize, devices: usize },
}

impl Assignment {
    pub fn new(devices: Vec<usize>, engine: impl Into<String>) -> Self {
        Self {
            devices,
            engine: engine.into(),
        }
    }

    pub fn device(&self, v: VertexId) -> usize {
        self.devices[v]
    }

    pub fn devices(&self) -> &[usize] {
        &self.devices
    }

    pub fn engine(&self) -> &str {
        &self.engine
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn with_engine(mut self, engine: impl Into<String>) -> Self {
        self.engine = engine.into();
        self
    }

    pub fn check(&self, graph: &DataflowGraph, device_count: usize) -> Result<(), AssignmentError> {
        if self.devices.len() != graph.len() {
            return Err(AssignmentError::Length {
                got: self.devices.len(),
                expected: graph.len(),
            });
        }
        for (vertex, &device) in self.devices.iter().enumerate() {
            if device >= device_count {
                return Err(AssignmentError::Device {
                    vertex,
                    device,
                    devices: device_count,
                });
            }
        }
        Ok(())
    }
}

/// On-disk form of an assignment together with its simulated makespan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentRecord {
    pub engine: String,
    pub assignment: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub makespan_ms: Option<f64>,
}

impl AssignmentRecord {
    pub fn new(a: &Assignment, makespan_ms: Option<f64>) -> Self {
        Self {
            engine: a.engine.clone(),
            assignment: a.devices.clone(),
            makespan_ms,
        }
    }

    pub fn to_assignment(&self) -> Assignment {
        Assignment::new(self.assignment.clone(), self.engine.clone())
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(std::io::Error::other)
    }
}
