//! Dual select/place policy: a message-passing encoder feeding a vertex
//! selection head (SEL) and a device placement head (PLC).

mod context;
mod rollout;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{dynamic_device_features, GraphContext, NormStats, DEVICE_FEATURES, EDGE_INPUTS, NODE_INPUTS};
pub use rollout::{assign_rollout, mixture_log_prob, teacher_action, Control, EpisodeTrace, Rollout, RolloutOptions, StepRecord};

use crate::graph::{VertexId, FEATURE_COUNT};
use crate::nn::{self, Matrix, NnError, ParamId, ParamStore, Tape, Var};
use crate::sim::EstimateError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("teacher chose vertex {vertex}, which is not a candidate")]
    TeacherOutsideCandidates { vertex: VertexId },
    #[error("checkpoint was saved with {saved} but the policy expects {expected}")]
    Incompatible { saved: String, expected: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// When node embeddings are recomputed during a rollout.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpMode {
    /// Encode once at the start of the episode; dynamics enter only
    /// through device features.
    #[default]
    PerEpisode,
    /// Re-encode before every step.
    PerStep,
}

impl FromStr for MpMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_episode" => Ok(Self::PerEpisode),
            "per_step" => Ok(Self::PerStep),
            other => Err(format!("unknown message-passing mode {other:?} (expected per_episode or per_step)")),
        }
    }
}

impl fmt::Display for MpMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PerEpisode => "per_episode",
            Self::PerStep => "per_step",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub hidden: usize,
    /// Message-passing rounds.
    pub layers: usize,
    /// One encoder for both heads instead of one each.
    pub shared_encoder: bool,
    pub mp_mode: MpMode,
    pub leaky_slope: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { hidden: 64, layers: 2, shared_encoder: false, mp_mode: MpMode::PerEpisode, leaky_slope: 0.01 }
    }
}

impl PolicyConfig {
    fn shape_key(&self) -> String {
        format!("hidden={} layers={} shared_encoder={}", self.hidden, self.layers, self.shared_encoder)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct EncoderParams {
    /// Per round: message function over `[h_u | h_v | e_uv]` and update
    /// function over `[h_v | aggregate]`.
    psi: Vec<Linear>,
    phi: Vec<Linear>,
    /// Static-feature embedding.
    z: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct HeadParams {
    l1: Linear,
    l2: Linear,
}

#[derive(Debug, Clone, PartialEq)]
struct Ids {
    sel_enc: EncoderParams,
    plc_enc: EncoderParams,
    sel: HeadParams,
    plc: HeadParams,
    /// Device-feature embedding.
    y: Linear,
}

/// Node embeddings and static embeddings for both heads on one tape.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub h_sel: Var,
    pub z_sel: Var,
    pub h_plc: Var,
    pub z_plc: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: ParamStore,
    ids: Ids,
}

fn linear(store: &mut ParamStore, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Linear {
    Linear {
        w: store.add_xavier(format!("{name}.w"), rows, cols, rng),
        b: store.add_zeros(format!("{name}.b"), 1, cols),
    }
}

fn encoder(store: &mut ParamStore, name: &str, cfg: &PolicyConfig, rng: &mut ChaCha8Rng) -> EncoderParams {
    let h = cfg.hidden;
    let mut psi = Vec::new();
    let mut phi = Vec::new();
    for k in 0..cfg.layers {
        let width = if k == 0 { NODE_INPUTS } else { h };
        psi.push(linear(store, &format!("{name}.psi{k}"), 2 * width + EDGE_INPUTS, h, rng));
        phi.push(linear(store, &format!("{name}.phi{k}"), width + h, h, rng));
    }
    let z = linear(store, &format!("{name}.z"), FEATURE_COUNT, h, rng);
    EncoderParams { psi, phi, z }
}

impl Policy {
    /// Fresh policy with Xavier-uniform weights and zero biases.
    pub fn new(config: PolicyConfig, seed: u64) -> Self {
        assert!(config.layers >= 1 && config.hidden >= 1, "policy needs at least one layer and unit");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let (sel_enc, plc_enc) = if config.shared_encoder {
            let e = encoder(&mut store, "enc", &config, &mut rng);
            (e.clone(), e)
        } else {
            (encoder(&mut store, "sel.enc", &config, &mut rng), encoder(&mut store, "plc.enc", &config, &mut rng))
        };
        let sel = HeadParams {
            l1: linear(&mut store, "sel.head1", 4 * h, h, &mut rng),
            l2: linear(&mut store, "sel.head2", h, 1, &mut rng),
        };
        let y = linear(&mut store, "plc.y", DEVICE_FEATURES, h, &mut rng);
        let plc = HeadParams {
            l1: linear(&mut store, "plc.head1", 4 * h, h, &mut rng),
            l2: linear(&mut store, "plc.head2", h, 1, &mut rng),
        };
        Self { config, params: store, ids: Ids { sel_enc, plc_enc, sel, plc, y } }
    }

    fn apply(&self, tape: &mut Tape, l: Linear, x: Var) -> Result<Var, NnError> {
        let w = tape.param(&self.params, l.w);
        let b = tape.param(&self.params, l.b);
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    fn dense(&self, tape: &mut Tape, l: Linear, x: Var) -> Result<Var, NnError> {
        let y = self.apply(tape, l, x)?;
        Ok(tape.leaky_relu(y, self.config.leaky_slope))
    }

    fn gnn(&self, tape: &mut Tape, enc: &EncoderParams, ctx: &GraphContext<'_>, x: Var) -> Result<Var, NnError> {
        let n = ctx.len();
        let e = tape.constant(ctx.msg_features.clone());
        let mut h = x;
        for (psi, phi) in enc.psi.iter().zip(&enc.phi) {
            let hu = tape.row_gather(h, &ctx.msg_src)?;
            let hv = tape.row_gather(h, &ctx.msg_dst)?;
            let m_in = tape.concat(&[hu, hv, e])?;
            let msg = self.dense(tape, *psi, m_in)?;
            let agg = tape.segment_sum(msg, &ctx.msg_dst, n)?;
            let u_in = tape.concat(&[h, agg])?;
            h = self.dense(tape, *phi, u_in)?;
        }
        Ok(h)
    }

    /// Runs the encoder(s) on node inputs `x` (`n x NODE_INPUTS`) and
    /// returns the number of encoder invocations alongside the embeddings.
    pub fn encode(&self, tape: &mut Tape, ctx: &GraphContext<'_>, x: &Matrix) -> Result<(Encoded, usize), NnError> {
        let xv = tape.constant(x.clone());
        let xs = tape.constant(ctx.x_static.clone());
        let h_sel = self.gnn(tape, &self.ids.sel_enc, ctx, xv)?;
        let z_sel = self.dense(tape, self.ids.sel_enc.z, xs)?;
        if self.config.shared_encoder {
            return Ok((Encoded { h_sel, z_sel, h_plc: h_sel, z_plc: z_sel }, 1));
        }
        let h_plc = self.gnn(tape, &self.ids.plc_enc, ctx, xv)?;
        let z_plc = self.dense(tape, self.ids.plc_enc.z, xs)?;
        Ok((Encoded { h_sel, z_sel, h_plc, z_plc }, 2))
    }

    /// SEL-encoder node embeddings as plain values.
    pub fn gnn_encode(&self, ctx: &GraphContext<'_>, x: &Matrix) -> Result<Matrix, NnError> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let h = self.gnn(&mut tape, &self.ids.sel_enc, ctx, xv)?;
        Ok(tape.value(h).clone())
    }

    fn path_sums(&self, tape: &mut Tape, h: Var, paths: &[Vec<VertexId>], cands: &[VertexId], n: usize) -> Result<Var, NnError> {
        let mut idx = Vec::new();
        let mut seg = Vec::new();
        for (i, &v) in cands.iter().enumerate() {
            idx.extend_from_slice(&paths[v]);
            seg.extend(std::iter::repeat_n(i, paths[v].len()));
        }
        let rows = tape.row_gather(h, &idx)?;
        let s = tape.segment_sum(rows, &seg, cands.len())?;
        Ok(tape.scalar_mul(s, 1.0 / n as f64))
    }

    fn head(&self, tape: &mut Tape, p: &HeadParams, emb: Var) -> Result<Var, NnError> {
        let a = self.dense(tape, p.l1, emb)?;
        let logits = self.apply(tape, p.l2, a)?;
        Ok(tape.transpose(logits))
    }

    /// SEL logits over `cands` as a `1 x |cands|` row.
    pub fn sel_logits(&self, tape: &mut Tape, ctx: &GraphContext<'_>, enc: &Encoded, cands: &[VertexId]) -> Result<Var, PolicyError> {
        if cands.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let n = ctx.len();
        let hv = tape.row_gather(enc.h_sel, cands)?;
        let hb = self.path_sums(tape, enc.h_sel, &ctx.features.b_path, cands, n)?;
        let ht = self.path_sums(tape, enc.h_sel, &ctx.features.t_path, cands, n)?;
        let z = tape.row_gather(enc.z_sel, cands)?;
        let emb = tape.concat(&[hv, hb, ht, z])?;
        Ok(self.head(tape, &self.ids.sel, emb)?)
    }

    /// Sum of PLC embeddings of the vertices already placed on each device,
    /// scaled by `1 / n`; `devices x hidden`.
    pub fn device_sums(&self, tape: &mut Tape, h: Var, placed: &[(VertexId, usize)], devices: usize, n: usize) -> Result<Var, NnError> {
        let idx: Vec<VertexId> = placed.iter().map(|p| p.0).collect();
        let seg: Vec<usize> = placed.iter().map(|p| p.1).collect();
        let rows = tape.row_gather(h, &idx)?;
        let s = tape.segment_sum(rows, &seg, devices)?;
        Ok(tape.scalar_mul(s, 1.0 / n as f64))
    }

    /// PLC logits over all devices for placing `v`, as a `1 x devices` row.
    pub fn plc_logits(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext<'_>,
        enc: &Encoded,
        v: VertexId,
        placed: &[(VertexId, usize)],
        device_features: &Matrix,
    ) -> Result<Var, PolicyError> {
        let d = ctx.devices();
        let n = ctx.len();
        let rep = vec![v; d];
        let hv = tape.row_gather(enc.h_plc, &rep)?;
        let hd = self.device_sums(tape, enc.h_plc, placed, d, n)?;
        let xd = tape.constant(device_features.clone());
        let y = self.dense(tape, self.ids.y, xd)?;
        let z = tape.row_gather(enc.z_plc, &rep)?;
        let emb = tape.concat(&[hv, hd, y, z])?;
        Ok(self.head(tape, &self.ids.plc, emb)?)
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &PolicyMeta) -> Result<(), PolicyError> {
        let path = path.as_ref();
        let io = |source| PolicyError::Io { path: path.to_path_buf(), source };
        nn::save_checkpoint(&self.params, path).map_err(io)?;
        let side = sidecar_path(path);
        let sidecar = Sidecar { config: self.config.clone(), meta: meta.clone() };
        let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&side, text).map_err(|source| PolicyError::Io { path: side, source })
    }

    /// Loads a checkpoint written by [`Policy::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PolicyMeta), PolicyError> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|source| PolicyError::Io { path: side.clone(), source })?;
        let sidecar: Sidecar = serde_json::from_str(&text)
            .map_err(|e| PolicyError::Io { path: side, source: std::io::Error::other(e) })?;
        let ckpt = nn::load_checkpoint(path).map_err(|source| PolicyError::Io { path: path.to_path_buf(), source })?;
        let mut policy = Policy::new(sidecar.config, 0);
        policy.params.load_checkpoint(&ckpt)?;
        Ok((policy, sidecar.meta))
    }

    /// Copies parameters from `other`, which must have the same shapes.
    pub fn load_params_from(&mut self, other: &Policy) -> Result<(), PolicyError> {
        if self.config.shape_key() != other.config.shape_key() {
            return Err(PolicyError::Incompatible { saved: other.config.shape_key(), expected: self.config.shape_key() });
        }
        self.params.load_checkpoint(&other.params.to_checkpoint())?;
        Ok(())
    }
}

/// Training metadata stored next to a checkpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub episodes_trained: usize,
    pub stages: Vec<String>,
    pub epsilon: Option<nn::LinearSchedule>,
    /// Normalization constants of the graph last trained on.
    pub normalization: Option<NormStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    config: PolicyConfig,
    meta: PolicyMeta,
}

/// `policy.json` stores its metadata in `policy.sidecar.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.sidecar.json"))
}
