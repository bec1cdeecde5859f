//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FFNT"                      magic
//! u32                         format version (1)
//! u64                         iteration
//! [u8; 32]                    SHA-256 of the canonical architecture text
//! u32                         tensor count (parameters + momentum)
//! per tensor:
//!   u16 + UTF-8               name
//!   u8                        rank (always 4)
//!   u32 × rank                dims
//!   f32 × product(dims)       payload
//! u64                         rng seed
//! ```
//!
//! Parameter tensors are named `<layer>.w` / `<layer>.b` in canonical layer
//! order; the momentum tensors follow with a `.m` suffix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::graph::{NetworkSpec, ParamStore};
use crate::layers::LayerParams;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"FFNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub fingerprint: [u8; 32],
    pub seed: u64,
    pub params: ParamStore,
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name `{name}` too long")))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[4u8])?;
    for d in t.shape().dims() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn named_tensors<'a>(
    entries: impl Iterator<Item = (&'a str, &'a LayerParams)>,
    suffix: &'a str,
) -> impl Iterator<Item = (String, &'a Tensor)> {
    entries.flat_map(move |(name, p)| {
        std::iter::once((format!("{name}.w{suffix}"), &p.weights))
            .chain(p.bias.iter().map(move |b| (format!("{name}.b{suffix}"), b)))
    })
}

pub fn checkpoint_save(path: &Path, spec: &NetworkSpec, params: &ParamStore, iteration: u64, seed: u64) -> Result<()> {
    params.validate(spec)?;
    let mut tensors: Vec<(String, &Tensor)> = named_tensors(params.iter(), "").collect();
    let momentum = params.names().map(|n| (n, params.momentum(n).expect("momentum keys match parameter keys")));
    tensors.extend(named_tensors(momentum, ".m"));

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&iteration.to_le_bytes())?;
    w.write_all(&spec.fingerprint())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        write_tensor(&mut w, &name, t)?;
    }
    w.write_all(&seed.to_le_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_tensor(r: &mut impl Read) -> Result<(String, Tensor)> {
    let len = u16::from_le_bytes(read_array(r)?) as usize;
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
    let rank = read_array::<1>(r)?[0];
    if rank != 4 {
        return Err(Error::Format(format!("tensor `{name}` has rank {rank}, expected 4")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = u32::from_le_bytes(read_array(r)?) as usize;
    }
    let shape =
        Shape::new(dims[0], dims[1], dims[2], dims[3]).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
    let mut bytes = vec![0u8; shape.len() * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((name, Tensor::from_vec(shape, data)?))
}

/// Reads a checkpoint written for `spec`. Magic and version errors are
/// format errors; a different architecture is an incompatible-spec error;
/// a short file surfaces as an I/O error.
pub fn checkpoint_load(path: &Path, spec: &NetworkSpec) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(&magic))));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let iteration = u64::from_le_bytes(read_array(&mut r)?);
    let fingerprint: [u8; 32] = read_array(&mut r)?;
    if fingerprint != spec.fingerprint() {
        return Err(Error::IncompatibleSpec { expected: hex(&spec.fingerprint()), found: hex(&fingerprint) });
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut tensors = IndexMap::new();
    for _ in 0..count {
        let (name, t) = read_tensor(&mut r)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
    }
    let seed = u64::from_le_bytes(read_array(&mut r)?);

    let mut take = |name: String| tensors.shift_remove(&name).ok_or(Error::Format(format!("missing tensor `{name}`")));
    let mut params = IndexMap::new();
    let mut momentum = Vec::new();
    for (layer, _) in spec.layers() {
        params.insert(
            layer.clone(),
            LayerParams { weights: take(format!("{layer}.w"))?, bias: Some(take(format!("{layer}.b"))?) },
        );
        momentum.push((
            layer.clone(),
            LayerParams { weights: take(format!("{layer}.w.m"))?, bias: Some(take(format!("{layer}.b.m"))?) },
        ));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Format(format!("unexpected tensor `{extra}`")));
    }
    let mut store = ParamStore::from_params(params);
    store.validate(spec).map_err(|e| Error::Format(e.to_string()))?;
    for (layer, m) in momentum {
        let slot = store.momentum_mut(&layer).expect("momentum keys match parameter keys");
        if slot.weights.shape() != m.weights.shape() {
            return Err(Error::Format(format!("momentum for `{layer}` has the wrong shape")));
        }
        *slot = m;
    }
    Ok(Checkpoint { iteration, fingerprint, seed, params: store })
}
