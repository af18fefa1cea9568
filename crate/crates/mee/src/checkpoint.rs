//! "MEEC" checkpoint files.
//!
//! ```text
//! b"MEEC" | u32 version | u64 header length | JSON header | f32 payloads
//! ```
//!
//! The header names every tensor with its shape and byte offset into the
//! payload section. Adam moments are stored as extra tensors named
//! `<param>#adam_m` and `<param>#adam_v` so a run can resume exactly.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mee_core::model::{MeeParams, ModelConfig};
use mee_core::{Parameter, ParameterRegistry, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{f32s_from_le, push_f32s};

pub const MAGIC: [u8; 4] = *b"MEEC";
pub const VERSION: u32 = 1;
const ADAM_M: &str = "#adam_m";
const ADAM_V: &str = "#adam_v";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Epochs completed.
    pub epoch: u64,
    /// Optimizer steps taken.
    pub step: u64,
    pub seed: u64,
    /// Best validation R@1 + R@5 + R@10 seen so far.
    pub best_rsum: Option<f64>,
    pub best_epoch: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    /// Adam step counter of the owning parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub architecture: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub state: TrainState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MeeParams<f32>,
    pub state: TrainState,
}

fn entries(params: &MeeParams<f32>) -> Vec<(TensorEntry, &Tensor<f32>)> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    for p in params.parameters() {
        let slots = [
            (p.name.clone(), &p.value, Some(p.step_count)),
            (format!("{}{ADAM_M}", p.name), &p.adam_m, None),
            (format!("{}{ADAM_V}", p.name), &p.adam_v, None),
        ];
        for (name, t, step) in slots {
            let entry = TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset,
                step,
            };
            offset += 4 * t.len() as u64;
            out.push((entry, t));
        }
    }
    out
}

pub fn encode(params: &MeeParams<f32>, state: &TrainState) -> Result<Vec<u8>> {
    let tensors = entries(params);
    let header = Header {
        architecture: params.config().clone(),
        tensors: tensors.iter().map(|(e, _)| e.clone()).collect(),
        state: state.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        push_f32s(&mut out, t.data());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let bad = |what: String| Error::Checkpoint {
        path: path.to_path_buf(),
        what,
    };
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes is shorter than the fixed header", bytes.len()),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("four bytes");
    if found != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("four bytes"));
    if version != VERSION {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: VERSION,
            found: version,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes")) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header of {header_len} bytes runs past end of file"),
        })?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end]).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let payload = &bytes[header_end..];

    let mut params = MeeParams::<f32>::new(header.architecture.clone(), 0)?;
    let mut expected_len = 0u64;
    let mut found_names = std::collections::BTreeSet::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let end = entry.offset + 4 * n as u64;
        if end > payload.len() as u64 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("tensor {} ends at byte {end} of a {}-byte payload", entry.name, payload.len()),
            });
        }
        expected_len = expected_len.max(end);
        let data = f32s_from_le(&payload[entry.offset as usize..end as usize]);
        let tensor = Tensor::from_vec(&entry.shape, data).map_err(|e| bad(format!("{}: {e}", entry.name)))?;
        let (base, slot) = match entry.name.split_once('#') {
            Some((b, "adam_m")) => (b, Slot::M),
            Some((b, "adam_v")) => (b, Slot::V),
            Some(_) => return Err(bad(format!("unknown tensor {}", entry.name))),
            None => (entry.name.as_str(), Slot::Value),
        };
        let p = find_mut(&mut params, base).ok_or_else(|| bad(format!("unexpected tensor {}", entry.name)))?;
        if p.value.shape() != tensor.shape() {
            return Err(bad(format!(
                "{} has shape {:?}, architecture needs {:?}",
                entry.name,
                tensor.shape(),
                p.value.shape()
            )));
        }
        match slot {
            Slot::Value => {
                p.value = tensor;
                p.step_count = entry.step.unwrap_or(0);
            }
            Slot::M => p.adam_m = tensor,
            Slot::V => p.adam_v = tensor,
        }
        found_names.insert(entry.name.clone());
    }
    if expected_len != payload.len() as u64 {
        return Err(bad(format!(
            "payload has {} bytes, header accounts for {expected_len}",
            payload.len()
        )));
    }
    for p in params.parameters() {
        if !found_names.contains(&p.name) {
            return Err(bad(format!("missing tensor {}", p.name)));
        }
    }
    Ok(Checkpoint {
        params,
        state: header.state,
    })
}

enum Slot {
    Value,
    M,
    V,
}

fn find_mut<'a>(params: &'a mut MeeParams<f32>, name: &str) -> Option<&'a mut Parameter<f32>> {
    params.parameters_mut().into_iter().find(|p| p.name == name)
}

pub fn save(path: &Path, params: &MeeParams<f32>, state: &TrainState) -> Result<()> {
    let bytes = encode(params, state)?;
    // Write beside the target and rename so a crash never leaves a torn file.
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&bytes)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn read_header(path: &Path) -> Result<Header> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: "no fixed header".into(),
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("eight bytes")) as usize;
    let end = (16 + header_len).min(bytes.len());
    serde_json::from_slice(&bytes[16..end]).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mee_core::gradcheck::tiny_model_config;

    fn p() -> &'static Path {
        Path::new("mem.ckpt")
    }

    fn trained_params() -> MeeParams<f32> {
        let mut params = MeeParams::<f32>::new(tiny_model_config(), 5).unwrap();
        for (i, p) in params.parameters_mut().into_iter().enumerate() {
            p.step_count = 3 + i as u64;
            p.adam_m.data_mut().iter_mut().for_each(|v| *v = 0.125 * i as f32);
            p.adam_v.data_mut().iter_mut().for_each(|v| *v = 1e-7);
        }
        params
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let params = trained_params();
        let state = TrainState {
            epoch: 4,
            step: 17,
            seed: 9,
            best_rsum: Some(1.5),
            best_epoch: Some(2),
        };
        let bytes = encode(&params, &state).unwrap();
        let ck = decode(&bytes, p()).unwrap();
        assert_eq!(ck.state, state);
        for (a, b) in params.parameters().iter().zip(ck.params.parameters()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.step_count, b.step_count);
            for (x, y) in [(&a.value, &b.value), (&a.adam_m, &b.adam_m), (&a.adam_v, &b.adam_v)] {
                let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
                let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(xb, yb, "{}", a.name);
            }
        }
        assert_eq!(encode(&ck.params, &ck.state).unwrap(), bytes);
    }

    #[test]
    fn header_lists_offsets_in_order() {
        let params = trained_params();
        let bytes = encode(&params, &TrainState::default()).unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        let mut expected = 0;
        for e in &header.tensors {
            assert_eq!(e.offset, expected);
            expected += 4 * e.shape.iter().product::<usize>() as u64;
        }
        assert_eq!(bytes.len() - 16 - len, expected as usize);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut bytes = encode(&trained_params(), &TrainState::default()).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes, p()), Err(Error::Truncated { .. })));
        bytes[0] = b'Z';
        assert!(matches!(decode(&bytes, p()), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&trained_params(), &TrainState::default()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes, p()), Err(Error::Version { found: 2, .. })));
    }
}
