//! Model checkpoints: a human-readable header followed by little-endian
//! `f32` tensor data.
//!
//! ```text
//! nsexit-checkpoint 1
//! variant pretrain_6exits
//! dims 257 400 400 400 600 600 257 128
//! seed 7
//! fc_exit pre
//! training strategy=joint epochs=12
//! tensor fc1.weight 400x257 0 102800
//! ...
//! end
//! <tensor data>
//! ```
//!
//! Offsets and lengths count `f32` elements from the start of the data.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::arch::{Dims, FcExitSource, Model, Variant, NUM_STAGES};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "nsexit-checkpoint";

/// Header fields that are not part of the model itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointInfo {
    pub version: u32,
    /// Free-form one-line training summary.
    pub training: String,
    /// Content hash of the whole file.
    pub id: String,
}

/// Short content hash used to identify checkpoints.
pub fn content_id(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

pub fn checkpoint_bytes(model: &Model<f32>, training: &str) -> Result<Vec<u8>> {
    if training.contains('\n') {
        return Err(Error::Checkpoint("training summary must be a single line".into()));
    }
    let d = model.dims();
    let mut h = format!("{MAGIC} {FORMAT_VERSION}\nvariant {}\ndims {}", model.variant(), d.bins);
    for w in d.chain {
        write!(h, " {w}").unwrap();
    }
    writeln!(h, " {}", d.aux).unwrap();
    writeln!(h, "seed {}", model.seed()).unwrap();
    writeln!(h, "fc_exit {}", model.fc_exit_source().name()).unwrap();
    writeln!(h, "training {training}").unwrap();
    let params = model.params();
    let mut offset = 0;
    for p in &params {
        let shape: Vec<String> = p.shape.iter().map(|s| s.to_string()).collect();
        writeln!(h, "tensor {} {} {offset} {}", p.name, shape.join("x"), p.value.len()).unwrap();
        offset += p.value.len();
    }
    h.push_str("end\n");
    let mut bytes = h.into_bytes();
    bytes.reserve(offset * 4);
    for p in &params {
        for v in p.value {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(bytes)
}

/// Writes the checkpoint and returns its content id.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>, training: &str) -> Result<String> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(model, training)?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(content_id(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, CheckpointInfo)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<(Model<f32>, CheckpointInfo)> {
    const END: &[u8] = b"\nend\n";
    let split = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| bad("header is not terminated by an `end` line"))?;
    let header = std::str::from_utf8(&bytes[..split + 1]).map_err(|_| bad("header is not UTF-8"))?;
    let data = &bytes[split + END.len()..];
    if data.len() % 4 != 0 {
        return Err(bad(format!("tensor data length {} is not a multiple of 4", data.len())));
    }

    let mut version = None;
    let mut variant = None;
    let mut dims = None;
    let mut seed = None;
    let mut fc_exit = FcExitSource::default();
    let mut training = String::new();
    let mut tensors = Vec::new();
    for (i, line) in header.lines().enumerate() {
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let at = |m: String| bad(format!("header line {}: {m}", i + 1));
        match key {
            MAGIC => {
                let v: u32 = rest.parse().map_err(|_| at(format!("bad version {rest:?}")))?;
                if v != FORMAT_VERSION {
                    return Err(at(format!("unsupported format version {v}")));
                }
                version = Some(v);
            }
            "variant" => variant = Some(rest.parse::<Variant>().map_err(|e| at(e.to_string()))?),
            "dims" => {
                let v: Vec<usize> = rest
                    .split_whitespace()
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| at(format!("bad dims {rest:?}")))?;
                if v.len() != NUM_STAGES + 2 {
                    return Err(at(format!("expected {} dims, found {}", NUM_STAGES + 2, v.len())));
                }
                let mut chain = [0; NUM_STAGES];
                chain.copy_from_slice(&v[1..=NUM_STAGES]);
                dims = Some(Dims {
                    bins: v[0],
                    chain,
                    aux: v[NUM_STAGES + 1],
                });
            }
            "seed" => seed = Some(rest.parse::<u64>().map_err(|_| at(format!("bad seed {rest:?}")))?),
            "fc_exit" => fc_exit = FcExitSource::parse(rest).map_err(|e| at(e.to_string()))?,
            "training" => training = rest.to_string(),
            "tensor" => {
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 4 {
                    return Err(at("tensor lines need name, shape, offset and length".into()));
                }
                let shape: Vec<usize> = f[1]
                    .split('x')
                    .map(|s| s.parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| at(format!("bad shape {:?}", f[1])))?;
                let num = |s: &str| s.parse::<usize>().map_err(|_| at(format!("bad number {s:?}")));
                tensors.push(TensorEntry {
                    name: f[0].to_string(),
                    shape,
                    offset: num(f[2])?,
                    len: num(f[3])?,
                });
            }
            "" => {}
            other => return Err(at(format!("unknown header key {other:?}"))),
        }
    }
    let version = version.ok_or_else(|| bad("missing format line"))?;
    let variant = variant.ok_or_else(|| bad("missing variant"))?;
    let dims = dims.ok_or_else(|| bad("missing dims"))?;
    let seed = seed.ok_or_else(|| bad("missing seed"))?;

    let mut model = Model::<f32>::zeroed(variant, dims)?;
    model.set_seed(seed);
    model.set_fc_exit_source(fc_exit);
    let total = data.len() / 4;
    let mut spans: Vec<(usize, usize)> = tensors.iter().map(|t| (t.offset, t.len)).collect();
    spans.sort_unstable();
    for w in spans.windows(2) {
        if w[0].0 + w[0].1 > w[1].0 {
            return Err(bad(format!("tensor data at {} overlaps data at {}", w[0].0, w[1].0)));
        }
    }
    let mut params = model.params_mut();
    if params.len() != tensors.len() {
        return Err(bad(format!(
            "{variant} has {} tensors but the checkpoint lists {}",
            params.len(),
            tensors.len()
        )));
    }
    for p in params.iter_mut() {
        let t = tensors
            .iter()
            .find(|t| t.name == p.name)
            .ok_or_else(|| bad(format!("tensor {} missing", p.name)))?;
        if t.shape != p.shape || t.len != p.value.len() {
            return Err(bad(format!(
                "tensor {} has shape {:?} ({} values), expected {:?}",
                t.name, t.shape, t.len, p.shape
            )));
        }
        if t.offset + t.len > total {
            return Err(bad(format!("tensor {} runs past the end of the data", t.name)));
        }
        let src = &data[4 * t.offset..4 * (t.offset + t.len)];
        for (v, b) in p.value.iter_mut().zip(src.chunks_exact(4)) {
            *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
        }
        if p.value.iter().any(|v| !v.is_finite()) {
            return Err(bad(format!("tensor {} holds non-finite values", t.name)));
        }
    }
    drop(params);
    Ok((
        model,
        CheckpointInfo {
            version,
            training,
            id: content_id(bytes),
        },
    ))
}
