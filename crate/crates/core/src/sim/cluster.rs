use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Task;
use crate::graph::{DataflowGraph, DEFAULT_COMM_FACTOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Jitter {
    #[default]
    None,
    /// Multiplicative `exp(sigma · z)` noise with `z ~ N(0, 1)`.
    Lognormal { sigma: f64, seed: u64 },
}

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("cluster needs at least one device")]
    NoDevices,
    #[error("{what} has {got} entries, expected {expected}")]
    Shape { what: &'static str, got: usize, expected: usize },
    #[error("compute rate of device {0} must be positive")]
    Rate(usize),
    #[error("bandwidth {0} -> {1} must be positive")]
    Bandwidth(usize, usize),
    #[error("{what} slot count for {at} must be at least 1")]
    Slots { what: &'static str, at: String },
    #[error("communication factor must be positive")]
    CommFactor,
    #[error("jitter sigma must be finite and non-negative")]
    Sigma,
}

/// Devices, links, and the cost model the simulator charges against.
///
/// Compute rates are FLOPs per millisecond and bandwidths are bytes per
/// millisecond. The diagonal of `bandwidth` is ignored: a result never
/// moves onto the device that already holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub rates: Vec<f64>,
    pub bandwidth: Vec<Vec<f64>>,
    pub exec_slots: Vec<usize>,
    pub transfer_slots: Vec<Vec<usize>>,
    #[serde(default = "default_comm_factor")]
    pub comm_factor: f64,
    #[serde(default)]
    pub jitter: Jitter,
}

fn default_comm_factor() -> f64 {
    DEFAULT_COMM_FACTOR
}

impl ClusterSpec {
    /// Identical devices on a fully connected uniform network, one exec
    /// slot per device and one transfer slot per ordered pair.
    pub fn uniform(devices: usize, rate: f64, bandwidth: f64) -> Self {
        Self {
            rates: vec![rate; devices],
            bandwidth: vec![vec![bandwidth; devices]; devices],
            exec_slots: vec![1; devices],
            transfer_slots: vec![vec![1; devices]; devices],
            comm_factor: DEFAULT_COMM_FACTOR,
            jitter: Jitter::None,
        }
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_comm_factor(mut self, comm_factor: f64) -> Self {
        self.comm_factor = comm_factor;
        self
    }

    pub fn device_count(&self) -> usize {
        self.rates.len()
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        let d = self.rates.len();
        if d == 0 {
            return Err(ClusterError::NoDevices);
        }
        let shape = |what, got| {
            if got == d {
                Ok(())
            } else {
                Err(ClusterError::Shape { what, got, expected: d })
            }
        };
        shape("bandwidth", self.bandwidth.len())?;
        shape("exec_slots", self.exec_slots.len())?;
        shape("transfer_slots", self.transfer_slots.len())?;
        for (i, &r) in self.rates.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(ClusterError::Rate(i));
            }
            shape("bandwidth row", self.bandwidth[i].len())?;
            shape("transfer_slots row", self.transfer_slots[i].len())?;
            if self.exec_slots[i] == 0 {
                return Err(ClusterError::Slots { what: "exec", at: format!("device {i}") });
            }
            for j in 0..d {
                if i == j {
                    continue;
                }
                if !(self.bandwidth[i][j] > 0.0) {
                    return Err(ClusterError::Bandwidth(i, j));
                }
                if self.transfer_slots[i][j] == 0 {
                    return Err(ClusterError::Slots { what: "transfer", at: format!("link {i}->{j}") });
                }
            }
        }
        if !(self.comm_factor > 0.0) {
            return Err(ClusterError::CommFactor);
        }
        if let Jitter::Lognormal { sigma, .. } = self.jitter {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(ClusterError::Sigma);
            }
        }
        Ok(())
    }

    /// Nominal execution time of `flops` on `device`.
    pub fn exec_ms(&self, flops: u64, device: usize) -> f64 {
        flops as f64 / self.rates[device]
    }

    /// Nominal time to move a result of `bytes` from `src` to `dst`.
    pub fn transfer_ms(&self, bytes: u64, src: usize, dst: usize) -> f64 {
        if src == dst {
            0.0
        } else {
            bytes as f64 * self.comm_factor / self.bandwidth[src][dst]
        }
    }

    /// Duration of a task, including jitter when enabled. The jitter draw is
    /// a pure function of the jitter seed, `run_seed`, and the task, so the
    /// same call always returns the same value.
    pub fn duration(&self, graph: &DataflowGraph, task: &Task, run_seed: u64) -> f64 {
        let nominal = match *task {
            Task::Exec { vertex, device } => self.exec_ms(graph.vertex(vertex).flops, device),
            Task::Transfer { vertex, src, dst } => self.transfer_ms(graph.vertex(vertex).output_bytes, src, dst),
        };
        match self.jitter {
            Jitter::None => nominal,
            Jitter::Lognormal { sigma, .. } if sigma == 0.0 => nominal,
            Jitter::Lognormal { sigma, seed } => {
                let key = mix(mix(seed, run_seed), task_key(task));
                let mut rng = ChaCha8Rng::seed_from_u64(key);
                let dist = LogNormal::new(0.0, sigma).expect("sigma validated");
                nominal * dist.sample(&mut rng)
            }
        }
    }
}

fn task_key(task: &Task) -> u64 {
    match *task {
        Task::Exec { vertex, device } => mix(mix(1, vertex as u64), device as u64),
        Task::Transfer { vertex, src, dst } => mix(mix(mix(2, vertex as u64), src as u64), dst as u64),
    }
}

/// SplitMix64 finalizer over a pair of words.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(a << 6).wrapping_add(a >> 2);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, OpKind, Vertex};

    fn two_vertex() -> DataflowGraph {
        DataflowGraph::from_parts(
            vec![
                Vertex { id: 0, op_kind: OpKind::Matmul, flops: 1000, output_bytes: 400, label: String::new() },
                Vertex { id: 1, op_kind: OpKind::Add, flops: 10, output_bytes: 4, label: String::new() },
            ],
            vec![Edge::new(0, 1)],
            vec![],
        )
    }

    #[test]
    fn exec_duration_is_flops_over_rate() {
        let c = ClusterSpec::uniform(2, 100.0, 800.0);
        let g = two_vertex();
        assert_eq!(c.duration(&g, &Task::Exec { vertex: 0, device: 1 }, 0), 10.0);
    }

    #[test]
    fn transfer_duration_uses_comm_factor() {
        let c = ClusterSpec::uniform(2, 100.0, 800.0).with_comm_factor(4.0);
        let g = two_vertex();
        assert_eq!(c.duration(&g, &Task::Transfer { vertex: 0, src: 0, dst: 1 }, 0), 2.0);
    }

    #[test]
    fn jitter_is_reproducible_and_seed_dependent() {
        let c = ClusterSpec::uniform(2, 100.0, 800.0).with_jitter(Jitter::Lognormal { sigma: 0.1, seed: 7 });
        let g = two_vertex();
        let t = Task::Exec { vertex: 0, device: 0 };
        let a = c.duration(&g, &t, 3);
        assert_eq!(a, c.duration(&g, &t, 3));
        assert_ne!(a, c.duration(&g, &t, 4));
        assert!(a > 0.0 && (a / 10.0 - 1.0).abs() < 0.6);
    }

    #[test]
    fn validation_catches_bad_specs() {
        let mut c = ClusterSpec::uniform(2, 1.0, 1.0);
        c.exec_slots[1] = 0;
        assert!(matches!(c.validate(), Err(ClusterError::Slots { .. })));
        let mut c = ClusterSpec::uniform(2, 1.0, 1.0);
        c.bandwidth[0][1] = 0.0;
        assert_eq!(c.validate(), Err(ClusterError::Bandwidth(0, 1)));
        let mut c = ClusterSpec::uniform(2, 1.0, 1.0);
        c.bandwidth[0][0] = 0.0;
        assert_eq!(c.validate(), Ok(()));
        assert_eq!(ClusterSpec::uniform(0, 1.0, 1.0).validate(), Err(ClusterError::NoDevices));
    }
}
