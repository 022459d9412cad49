//! Binary checkpoint format, all integers and floats little-endian:
//!
//! ```text
//! "ZDCE"  u32 version  u8 variant  u8 iterations  u16 downsample
//! then per parameter tensor, in storage order:
//! u32 rank  u32 extent * rank  f32 * product(extents)
//! ```
//!
//! The tensor list runs to end of file; depth and width are recovered from the shapes.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, NetConfig, Variant};
use crate::error::{CheckpointError, Result};
use crate::tensor::{Real, Tensor};

const MAGIC: [u8; 4] = *b"ZDCE";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_ELEMENTS: usize = 1 << 28;

pub fn write_checkpoint<T: Real, W: Write>(model: &Model<T>, mut w: W) -> std::result::Result<(), CheckpointError> {
    let cfg = model.config();
    w.write_all(&MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[cfg.variant.tag(), cfg.iterations as u8])?;
    w.write_all(&(cfg.downsample as u16).to_le_bytes())?;
    for p in model.params() {
        w.write_all(&(p.shape().len() as u32).to_le_bytes())?;
        for &e in p.shape() {
            w.write_all(&(e as u32).to_le_bytes())?;
        }
        for v in p.data() {
            w.write_all(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fills `buf` completely, or reports how many bytes were available.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> std::result::Result<(), CheckpointError> {
    let got = read_full(r, buf)?;
    if got < buf.len() {
        return Err(CheckpointError::Truncated(format!(
            "{what}: needed {} bytes, found {got}",
            buf.len()
        )));
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> std::result::Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> std::result::Result<Model<T>, CheckpointError> {
    let mut magic = [0u8; 4];
    let got = read_full(&mut r, &mut magic)?;
    if got < 4 {
        return Err(CheckpointError::Truncated(format!("header: {got} bytes")));
    }
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u32(&mut r, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut head = [0u8; 4];
    read_exact_or(&mut r, &mut head, "header")?;
    let variant = Variant::from_tag(head[0])
        .ok_or_else(|| CheckpointError::Inconsistent(format!("unknown variant tag {}", head[0])))?;
    let iterations = head[1] as usize;
    let downsample = u16::from_le_bytes([head[2], head[3]]) as usize;

    let mut params = Vec::new();
    loop {
        let mut b = [0u8; 4];
        match read_full(&mut r, &mut b)? {
            0 => break,
            4 => {}
            n => return Err(CheckpointError::Truncated(format!("tensor {} rank: {n} of 4 bytes", params.len()))),
        }
        let rank = u32::from_le_bytes(b) as usize;
        if rank == 0 || rank > 4 {
            return Err(CheckpointError::Inconsistent(format!("tensor {} has rank {rank}", params.len())));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, "tensor extents")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .filter(|&c| c <= MAX_ELEMENTS)
            .ok_or_else(|| CheckpointError::Inconsistent(format!("implausible tensor shape {shape:?}")))?;
        let mut bytes = Vec::new();
        (&mut r).take(4 * count as u64).read_to_end(&mut bytes)?;
        if bytes.len() < 4 * count {
            return Err(CheckpointError::Truncated(format!(
                "tensor {} payload: {} of {} bytes",
                params.len(),
                bytes.len(),
                4 * count
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| T::from_f32(f32::from_le_bytes([c[0], c[1], c[2], c[3]])).unwrap())
            .collect();
        params.push(Tensor::new(shape, data).expect("length checked"));
    }

    let config = infer_config(variant, iterations, downsample, &params)?;
    Model::from_params(config, params).map_err(|e| CheckpointError::Inconsistent(e.to_string()))
}

fn infer_config<T: Real>(
    variant: Variant,
    iterations: usize,
    downsample: usize,
    params: &[Tensor<T>],
) -> std::result::Result<NetConfig, CheckpointError> {
    let per_layer = match variant {
        Variant::Plain => 2,
        Variant::Separable => 4,
    };
    let bad = |m: String| CheckpointError::Inconsistent(m);
    if params.is_empty() || params.len() % per_layer != 0 {
        return Err(bad(format!(
            "{} tensors cannot form {variant} layers of {per_layer} tensors",
            params.len()
        )));
    }
    let layers = params.len() / per_layer;
    let out_of_first = |k: usize| params[k].shape().first().copied().unwrap_or(0);
    let features = if layers == 1 {
        1
    } else {
        match variant {
            Variant::Plain => out_of_first(0),
            Variant::Separable => out_of_first(2),
        }
    };
    let cfg = NetConfig {
        variant,
        layers,
        features,
        iterations,
        downsample,
    };
    cfg.validate().map_err(|e| bad(e.to_string()))?;
    let expected = cfg.param_shapes();
    for (i, (p, s)) in params.iter().zip(&expected).enumerate() {
        if p.shape() != s.as_slice() {
            return Err(bad(format!(
                "tensor {i} has shape {:?}, but a {layers}-layer {variant} model with {iterations} iterations needs {s:?}",
                p.shape()
            )));
        }
    }
    Ok(cfg)
}

pub fn save<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref()).map_err(CheckpointError::Io)?;
    write_checkpoint(model, BufWriter::new(file))?;
    Ok(())
}

pub fn load<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let file = File::open(path.as_ref()).map_err(CheckpointError::Io)?;
    Ok(read_checkpoint(BufReader::new(file))?)
}
