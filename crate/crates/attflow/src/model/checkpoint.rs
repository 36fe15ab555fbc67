//! Model checkpoint container: versioned header with a spec digest, then
//! named parameter tensors as raw little-endian f32.
//!
//! Layout (all integers little-endian):
//!   magic "AFLOWCP1" | u32 version | spec digest (32B sha256 of spec JSON) |
//!   u32 spec JSON length | spec JSON | u32 tensor count |
//!   per tensor: u16 name len | name | u8 rank | u32 dims... | f32 data

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::nn::ParamVisitor;

const MAGIC: &[u8; 8] = b"AFLOWCP1";
const VERSION: u32 = 1;

pub fn spec_digest(spec: &ModelSpec) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(spec.canonical_json().as_bytes());
    h.finalize().into()
}

/// Writes every parameter of `model` (declaration order) as f32.
pub fn write_checkpoint<T: Scalar, M: ParamVisitor<T>>(
    path: impl AsRef<Path>,
    spec: &ModelSpec,
    model: &M,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io_err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
    w.write_all(&spec_digest(spec)).map_err(io_err)?;
    let spec_json = spec.canonical_json();
    w.write_all(&(spec_json.len() as u32).to_le_bytes())
        .map_err(io_err)?;
    w.write_all(spec_json.as_bytes()).map_err(io_err)?;

    let mut count = 0u32;
    model.visit(&mut |_| count += 1);
    w.write_all(&count.to_le_bytes()).map_err(io_err)?;

    let mut result = Ok(());
    model.visit(&mut |p| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let name = p.name().as_bytes();
            w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io_err)?;
            w.write_all(name).map_err(io_err)?;
            let dims = p.value.dims();
            w.write_all(&[dims.len() as u8]).map_err(io_err)?;
            for &d in dims {
                w.write_all(&(d as u32).to_le_bytes()).map_err(io_err)?;
            }
            for v in p.value.data() {
                w.write_all(&v.to_f32().to_le_bytes()).map_err(io_err)?;
            }
            Ok(())
        })();
    });
    result?;
    w.flush().map_err(io_err)
}

struct Reader<'a> {
    r: BufReader<File>,
    path: &'a Path,
    offset: u64,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(|_| Error::Format {
            path: self.path.to_path_buf(),
            message: format!("truncated while reading {what}"),
            offset: self.offset,
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Reads just the embedded spec (to build a model before loading weights).
pub fn read_checkpoint_spec(path: impl AsRef<Path>) -> Result<ModelSpec> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = Reader {
        r: BufReader::new(file),
        path,
        offset: 0,
    };
    let magic = rd.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("bad magic {magic:?}, expected {MAGIC:?}"),
            offset: 0,
        });
    }
    let version = rd.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let stored_digest = rd.take(32, "spec digest")?;
    let json_len = rd.u32("spec length")? as usize;
    let json = rd.take(json_len, "spec json")?;
    let spec: ModelSpec = serde_json::from_slice(&json)
        .map_err(|e| Error::Checkpoint(format!("unreadable embedded spec: {e}")))?;
    if spec_digest(&spec)[..] != stored_digest[..] {
        return Err(Error::Checkpoint(
            "embedded spec does not match its stored digest (corrupt file)".into(),
        ));
    }
    Ok(spec)
}

/// Loads weights into an already-built model; rejects a digest mismatch
/// between the file's spec and the model's.
pub fn load_checkpoint<T: Scalar, M: ParamVisitor<T>>(
    path: impl AsRef<Path>,
    spec: &ModelSpec,
    model: &mut M,
) -> Result<()> {
    let path = path.as_ref();
    let file_spec = read_checkpoint_spec(path)?;
    if spec_digest(&file_spec) != spec_digest(spec) {
        return Err(Error::Checkpoint(format!(
            "checkpoint was written for {} but the target model is {} (digest mismatch)",
            file_spec.name(),
            spec.name()
        )));
    }

    // re-open and skip the header
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = Reader {
        r: BufReader::new(file),
        path,
        offset: 0,
    };
    rd.take(8 + 4 + 32, "header")?;
    let json_len = rd.u32("spec length")? as usize;
    rd.take(json_len, "spec json")?;
    let count = rd.u32("tensor count")? as usize;

    let mut expected = 0usize;
    model.visit(&mut |_| expected += 1);
    if count != expected {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {count} tensors, model has {expected}"
        )));
    }

    let mut result: Result<()> = Ok(());
    model.visit_mut(&mut |p| {
        if result.is_err() {
            return;
        }
        result = (|| {
            let name_len =
                u16::from_le_bytes(rd.take(2, "name length")?.try_into().unwrap()) as usize;
            let name = String::from_utf8_lossy(&rd.take(name_len, "name")?).into_owned();
            if name != p.name() {
                return Err(Error::Checkpoint(format!(
                    "tensor order mismatch: file has {name}, model expects {}",
                    p.name()
                )));
            }
            let rank = rd.take(1, "rank")?[0] as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(rd.u32("dim")? as usize);
            }
            if dims != p.value.dims() {
                return Err(Error::shape(
                    format!("checkpoint tensor {name}"),
                    &dims,
                    p.value.dims(),
                ));
            }
            let n = p.value.numel();
            let raw = rd.take(n * 4, "tensor data")?;
            let data: Vec<T> = raw
                .chunks_exact(4)
                .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap())))
                .collect();
            p.value = crate::autodiff::Tensor::new(p.value.shape().clone(), data)?;
            Ok(())
        })();
    });
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExtractorKind, FlowNetwork};

    #[test]
    fn round_trip_preserves_weights_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let spec = ModelSpec::new(ExtractorKind::Plain, false, false).micro();
        let model = FlowNetwork::<f32>::build(spec.clone(), 42).unwrap();
        write_checkpoint(&path, &spec, &model).unwrap();

        let mut reloaded = FlowNetwork::<f32>::build(spec.clone(), 999).unwrap();
        load_checkpoint(&path, &spec, &mut reloaded).unwrap();

        let mut a = Vec::new();
        model.visit(&mut |p| a.extend_from_slice(p.value.data()));
        let mut b = Vec::new();
        reloaded.visit(&mut |p| b.extend_from_slice(p.value.data()));
        assert_eq!(a, b);
    }

    #[test]
    fn digest_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let spec = ModelSpec::new(ExtractorKind::Plain, false, false).micro();
        let model = FlowNetwork::<f32>::build(spec.clone(), 42).unwrap();
        write_checkpoint(&path, &spec, &model).unwrap();

        let other = ModelSpec::new(ExtractorKind::Res, false, false).micro();
        let mut target = FlowNetwork::<f32>::build(other.clone(), 1).unwrap();
        let err = load_checkpoint(&path, &other, &mut target).unwrap_err();
        assert!(err.to_string().contains("digest"), "{err}");
    }
}
