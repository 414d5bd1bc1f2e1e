//! Binary checkpoint container.
//!
//! All integers little-endian.
//!
//! ```text
//! magic               8 bytes   "QGENCKPT"
//! version             u32       1
//! input_vocab_hash    u64       FNV-1a of the input vocabulary
//! output_vocab_hash   u64       FNV-1a of the output vocabulary
//! tensor_count        u32
//! tensor_count × {
//!     name_len        u32
//!     name            name_len bytes, UTF-8
//!     ndim            u32
//!     dims            ndim × u64
//!     payload         prod(dims) × f64, row-major
//! }
//! ```
//!
//! The first tensor is always `E_in`, the frozen input table; the rest are
//! the trainable tensors in registration order. No timestamps are stored, so
//! identical parameters serialize to identical bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::QGenParams;
use crate::numerics::{ParamSet, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QGENCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const INPUT_TABLE: &str = "E_in";

fn write_tensor(w: &mut impl Write, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &QGenParams,
    input_vocab_hash: u64,
    output_vocab_hash: u64,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&input_vocab_hash.to_le_bytes()).map_err(io)?;
    w.write_all(&output_vocab_hash.to_le_bytes()).map_err(io)?;
    w.write_all(&((model.params.len() + 1) as u32).to_le_bytes())
        .map_err(io)?;
    write_tensor(&mut w, INPUT_TABLE, &model.input_embeddings).map_err(io)?;
    for (_, name, t) in model.params.iter() {
        write_tensor(&mut w, name, t).map_err(io)?;
    }
    w.flush().map_err(io)
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let mut name = vec![0u8; name_len];
        self.inner
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| self.bytes::<8>().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}

/// Loads a checkpoint, rejecting it unless both vocabulary hashes match.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    input_vocab_hash: u64,
    output_vocab_hash: u64,
) -> Result<QGenParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        inner: BufReader::new(file),
    };
    if &r.bytes::<8>()? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let (in_hash, out_hash) = (r.u64()?, r.u64()?);
    if in_hash != input_vocab_hash || out_hash != output_vocab_hash {
        return Err(Error::Checkpoint(format!(
            "vocabulary mismatch: checkpoint has {in_hash:016x}/{out_hash:016x}, \
             given {input_vocab_hash:016x}/{output_vocab_hash:016x}"
        )));
    }
    let count = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Checkpoint("no tensors".into()));
    }
    let (first, input_embeddings) = r.tensor()?;
    if first != INPUT_TABLE {
        return Err(Error::Checkpoint(format!("first tensor must be {INPUT_TABLE}, found `{first}`")));
    }
    let mut params = ParamSet::new();
    for _ in 1..count {
        let (name, t) = r.tensor()?;
        if params.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        params.register(name, t);
    }
    QGenParams::from_parts(input_embeddings, params)
}
