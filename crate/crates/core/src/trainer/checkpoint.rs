//! Binary checkpoint format.
//!
//! Layout: `b"TRVL"`, a little-endian `u32` version, a little-endian `u64`
//! manifest length, the JSON manifest, then every tensor as raw little-endian
//! `f32` values in manifest order. Offsets in the manifest are byte offsets
//! into that trailing block.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DirectionNets, HistoryEntry, TrainState, Trainee, TrainingConfig};
use crate::data::SamplerState;
use crate::diffcore::{AdamConfig, AdamState, ParameterSet, Tensor};
use crate::networks::{NetworkParams, Role};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TRVL";
pub const CHECKPOINT_VERSION: u32 = 1;

const HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Group {
    Params,
    Running,
    AdamM,
    AdamV,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: Group,
    offset: u64,
    shape: Vec<usize>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct NetworkEntry {
    key: String,
    role: Role,
    optimizer_step: u64,
    optimizer: AdamConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    step: u64,
    config: TrainingConfig,
    samplers: [SamplerState; 2],
    networks: Vec<NetworkEntry>,
    history: Vec<HistoryEntry>,
}

fn role_of(key: &str) -> Role {
    match key.as_bytes()[0] {
        b'g' => Role::Generator,
        b'd' => Role::Discriminator,
        _ => Role::Siamese,
    }
}

pub fn encode_checkpoint(state: &TrainState) -> Result<Vec<u8>> {
    let mut blob: Vec<u8> = Vec::new();
    let mut networks = Vec::new();
    for (key, trainee) in state.trainees() {
        let mut tensors = Vec::new();
        let groups = [
            (Group::Params, &trainee.net.params),
            (Group::Running, &trainee.net.running),
            (Group::AdamM, &trainee.opt.m),
            (Group::AdamV, &trainee.opt.v),
        ];
        for (group, set) in groups {
            for (name, t) in set.iter() {
                tensors.push(TensorEntry {
                    name: name.to_string(),
                    group,
                    offset: blob.len() as u64,
                    shape: t.shape().to_vec(),
                    dtype: "f32".into(),
                });
                for v in t.data() {
                    blob.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        networks.push(NetworkEntry {
            key: key.to_string(),
            role: role_of(key),
            optimizer_step: trainee.opt.step,
            optimizer: trainee.opt.config,
            tensors,
        });
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        step: state.step,
        config: state.config.clone(),
        samplers: state.samplers,
        networks,
        history: state.history.iter().copied().collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + blob.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

fn incompatible(key: &str, e: Error) -> Error {
    Error::Incompatible(format!("{key}: {e}"))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic bytes {:?}", &bytes[..4])));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let manifest_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let blob_start = usize::try_from(manifest_len)
        .ok()
        .and_then(|n| n.checked_add(HEADER_LEN))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::Format("truncated manifest".into()))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..blob_start])
        .map_err(|e| Error::Format(format!("unreadable manifest: {e}")))?;
    let blob = &bytes[blob_start..];

    let expected = TrainState::init(manifest.config.clone())
        .map_err(|e| Error::Incompatible(e.to_string()))?;
    let layout: Vec<&str> = expected.trainees().iter().map(|(k, _)| *k).collect();
    let stored: Vec<&str> = manifest.networks.iter().map(|n| n.key.as_str()).collect();
    if layout != stored {
        return Err(Error::Incompatible(format!(
            "networks {stored:?}, expected {layout:?}"
        )));
    }

    let mut consumed = 0usize;
    let mut trainees = Vec::new();
    for entry in &manifest.networks {
        let mut sets: [ParameterSet<f32>; 4] = Default::default();
        for t in &entry.tensors {
            if t.dtype != "f32" {
                return Err(Error::Format(format!(
                    "{}: unsupported dtype {}",
                    t.name, t.dtype
                )));
            }
            let numel: usize = t.shape.iter().product();
            let start = t.offset as usize;
            let end = start + 4 * numel;
            if start != consumed || end > blob.len() {
                return Err(Error::Format(format!(
                    "tensor {} is truncated or misplaced",
                    t.name
                )));
            }
            let data = blob[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let slot = match t.group {
                Group::Params => 0,
                Group::Running => 1,
                Group::AdamM => 2,
                Group::AdamV => 3,
            };
            sets[slot].insert(t.name.clone(), Tensor::new(t.shape.clone(), data)?)?;
            consumed = end;
        }
        let [params, running, m, v] = sets;
        let net = NetworkParams::from_parts(&manifest.config.arch, entry.role, params, running)
            .map_err(|e| incompatible(&entry.key, e))?;
        net.params
            .check_aligned(&m)
            .map_err(|e| incompatible(&entry.key, e))?;
        net.params
            .check_aligned(&v)
            .map_err(|e| incompatible(&entry.key, e))?;
        let opt = AdamState {
            config: entry.optimizer,
            step: entry.optimizer_step,
            m,
            v,
        };
        trainees.push(Trainee { net, opt });
    }
    if consumed != blob.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after the last tensor",
            blob.len() - consumed
        )));
    }

    let mut it = trainees.into_iter();
    let mut next = || it.next().expect("layout checked above");
    let xy = DirectionNets {
        generator: next(),
        discriminator: next(),
    };
    let yx = expected.yx.is_some().then(|| DirectionNets {
        generator: next(),
        discriminator: next(),
    });
    let siamese = (0..expected.siamese.len()).map(|_| next()).collect();
    Ok(TrainState {
        config: manifest.config,
        step: manifest.step,
        xy,
        yx,
        siamese,
        samplers: manifest.samplers,
        history: VecDeque::from(manifest.history),
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(state)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
