//! Binary checkpoint layout:
//!
//! ```text
//! "PLRSA-CKPT-v1\n"
//! u64 LE  header length in bytes
//! JSON    header {seed, rule, arch, bn_updates, tensors: [{name, shape}]}
//! f64 LE  tensor payloads, concatenated in header order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, NetworkState};
use crate::error::{Error, Result};
use crate::tensor::{RunningStats, Tensor};

pub const CHECKPOINT_MAGIC: &str = "PLRSA-CKPT-v1\n";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    rule: String,
    arch: Architecture,
    bn_updates: [u64; 3],
    tensors: Vec<TensorEntry>,
}

fn named_tensors(state: &NetworkState) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    for (i, b) in state.convs.iter().enumerate() {
        let c = b.gamma.len();
        let vec = |v: &[f64]| Tensor::from_vec(&[c], v.to_vec()).expect("channel vector");
        out.push((format!("conv{}.weight", i + 1), b.weight.clone()));
        out.push((format!("conv{}.bias", i + 1), b.bias.clone()));
        out.push((format!("conv{}.gamma", i + 1), vec(&b.gamma)));
        out.push((format!("conv{}.beta", i + 1), vec(&b.beta)));
        out.push((format!("conv{}.running_mean", i + 1), vec(&b.stats.mean)));
        out.push((format!("conv{}.running_var", i + 1), vec(&b.stats.var)));
    }
    out.push(("fc1.weight".into(), state.fc1.weight.clone()));
    out.push(("fc1.bias".into(), state.fc1.bias.clone()));
    out.push(("fc2.weight".into(), state.fc2.weight.clone()));
    out.push(("fc2.bias".into(), state.fc2.bias.clone()));
    out
}

pub fn write_checkpoint(path: &Path, state: &NetworkState, rule: &str) -> Result<()> {
    let tensors = named_tensors(state);
    let header = Header {
        seed: state.seed,
        rule: rule.to_string(),
        arch: state.arch.clone(),
        bn_updates: [
            state.convs[0].stats.updates,
            state.convs[1].stats.updates,
            state.convs[2].stats.updates,
        ],
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut buf = Vec::with_capacity(json.len() + 64 + tensors.iter().map(|(_, t)| t.len() * 8).sum::<usize>());
    buf.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in &tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Returns the state and the rule tag it was trained with.
pub fn read_checkpoint(path: &Path) -> Result<(NetworkState, String)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = path;
    let magic = CHECKPOINT_MAGIC.as_bytes();
    if !bytes.starts_with(magic) {
        return Err(Error::format(p, "missing PLRSA-CKPT-v1 header"));
    }
    let mut pos = magic.len();
    let len_bytes: [u8; 8] = bytes
        .get(pos..pos + 8)
        .ok_or_else(|| Error::format(p, format!("truncated at byte {pos}")))?
        .try_into()
        .expect("8 bytes");
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    pos += 8;
    let hbytes = bytes
        .get(pos..pos + hlen)
        .ok_or_else(|| Error::format(p, format!("header truncated at byte {pos}")))?;
    let header: Header =
        serde_json::from_slice(hbytes).map_err(|e| Error::format(p, format!("bad header: {e}")))?;
    pos += hlen;

    let mut state = super::init_he_normal(&header.arch, header.seed)
        .map_err(|e| Error::format(p, format!("bad architecture: {e}")))?;
    let expected = named_tensors(&state);
    if expected.len() != header.tensors.len() {
        return Err(Error::format(p, "unexpected tensor count"));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for ((name, proto), entry) in expected.iter().zip(&header.tensors) {
        if *name != entry.name || proto.shape() != entry.shape.as_slice() {
            return Err(Error::format(
                p,
                format!("tensor {} has shape {:?}, architecture expects {} {:?}", entry.name, entry.shape, name, proto.shape()),
            ));
        }
        let n = proto.len();
        let raw = bytes
            .get(pos..pos + 8 * n)
            .ok_or_else(|| Error::format(p, format!("tensor {name} truncated at byte {pos}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        loaded.push(Tensor::from_vec(&entry.shape, data)?);
        pos += 8 * n;
    }
    if pos != bytes.len() {
        return Err(Error::format(p, format!("{} trailing bytes after byte {pos}", bytes.len() - pos)));
    }
    let mut it = loaded.into_iter();
    for (i, b) in state.convs.iter_mut().enumerate() {
        b.weight = it.next().expect("weight");
        b.bias = it.next().expect("bias");
        b.gamma = it.next().expect("gamma").into_data();
        b.beta = it.next().expect("beta").into_data();
        b.stats = RunningStats {
            mean: it.next().expect("mean").into_data(),
            var: it.next().expect("var").into_data(),
            updates: header.bn_updates[i],
        };
    }
    state.fc1.weight = it.next().expect("fc1.weight");
    state.fc1.bias = it.next().expect("fc1.bias");
    state.fc2.weight = it.next().expect("fc2.weight");
    state.fc2.bias = it.next().expect("fc2.bias");
    Ok((state, header.rule))
}
