//! Training-state files for exact resume: parameter values and optimizer
//! moments at the model's native precision, plus the iteration counter.
//! Distinct from model checkpoints, which are the f32 exchange format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::nn::ParamVisitor;
use crate::train::Optimizer;

const MAGIC: &[u8; 8] = b"AFLOWST1";

pub struct TrainState;

impl TrainState {
    pub fn save<T: Scalar, M: ParamVisitor<T>>(
        path: &Path,
        model: &M,
        optimizer: &Optimizer<T>,
        iteration: usize,
    ) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io_err = |e| Error::io(path, e);
        let width = std::mem::size_of::<T>() as u8;

        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&[width, optimizer.kind().tag()]).map_err(io_err)?;
        w.write_all(&(iteration as u64).to_le_bytes()).map_err(io_err)?;
        w.write_all(&optimizer.step_count().to_le_bytes())
            .map_err(io_err)?;

        let slots = optimizer.export_state(model);
        let mut count = 0u32;
        model.visit(&mut |_| count += 1);
        w.write_all(&count.to_le_bytes()).map_err(io_err)?;

        let write_vec = |w: &mut BufWriter<File>, v: &[T]| -> Result<()> {
            w.write_all(&(v.len() as u64).to_le_bytes())
                .map_err(io_err)?;
            for x in v {
                if width == 4 {
                    w.write_all(&x.to_f32().to_le_bytes()).map_err(io_err)?;
                } else {
                    w.write_all(&x.to_f64().to_le_bytes()).map_err(io_err)?;
                }
            }
            Ok(())
        };

        let mut idx = 0usize;
        let mut result = Ok(());
        model.visit(&mut |p| {
            if result.is_err() {
                return;
            }
            result = (|| {
                let name = p.name().as_bytes();
                w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io_err)?;
                w.write_all(name).map_err(io_err)?;
                write_vec(&mut w, p.value.data())?;
                write_vec(&mut w, &slots[idx].0)?;
                write_vec(&mut w, &slots[idx].1)?;
                idx += 1;
                Ok(())
            })();
        });
        result?;
        w.flush().map_err(io_err)
    }

    /// Restores parameters and optimizer state; returns the iteration to
    /// continue from.
    pub fn load_into<T: Scalar, M: ParamVisitor<T>>(
        path: &Path,
        model: &mut M,
        optimizer: &mut Optimizer<T>,
    ) -> Result<usize> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut read_exact = |n: usize, what: &str| -> Result<Vec<u8>> {
            let mut buf = vec![0u8; n];
            r.read_exact(&mut buf).map_err(|_| Error::Format {
                path: path.to_path_buf(),
                message: format!("truncated while reading {what}"),
                offset: 0,
            })?;
            Ok(buf)
        };

        if read_exact(8, "magic")? != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a training-state file",
                path.display()
            )));
        }
        let head = read_exact(2, "width/kind")?;
        let width = head[0];
        if width as usize != std::mem::size_of::<T>() {
            return Err(Error::Checkpoint(format!(
                "state was written at {}-byte precision, model runs at {}",
                width,
                std::mem::size_of::<T>()
            )));
        }
        if head[1] != optimizer.kind().tag() {
            return Err(Error::Checkpoint(
                "state was written with a different optimizer".into(),
            ));
        }
        let iteration =
            u64::from_le_bytes(read_exact(8, "iteration")?.try_into().unwrap()) as usize;
        let step_count = u64::from_le_bytes(read_exact(8, "step count")?.try_into().unwrap());
        let count = u32::from_le_bytes(read_exact(4, "count")?.try_into().unwrap());

        let mut expected = 0u32;
        model.visit(&mut |_| expected += 1);
        if count != expected {
            return Err(Error::Checkpoint(format!(
                "state holds {count} tensors, model has {expected}"
            )));
        }

        let read_vec = |r: &mut BufReader<File>| -> Result<Vec<T>> {
            let mut lenb = [0u8; 8];
            r.read_exact(&mut lenb).map_err(|e| Error::io(path, e))?;
            let len = u64::from_le_bytes(lenb) as usize;
            let mut out = Vec::with_capacity(len);
            if width == 4 {
                let mut buf = vec![0u8; len * 4];
                r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                out.extend(
                    buf.chunks_exact(4)
                        .map(|b| T::from_f32(f32::from_le_bytes(b.try_into().unwrap()))),
                );
            } else {
                let mut buf = vec![0u8; len * 8];
                r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                out.extend(
                    buf.chunks_exact(8)
                        .map(|b| T::from_f64(f64::from_le_bytes(b.try_into().unwrap()))),
                );
            }
            Ok(out)
        };

        let mut slots: Vec<(Vec<T>, Vec<T>)> = Vec::with_capacity(count as usize);
        let mut result: Result<()> = Ok(());
        model.visit_mut(&mut |p| {
            if result.is_err() {
                return;
            }
            result = (|| {
                let mut lenb = [0u8; 2];
                r.read_exact(&mut lenb).map_err(|e| Error::io(path, e))?;
                let name_len = u16::from_le_bytes(lenb) as usize;
                let mut name = vec![0u8; name_len];
                r.read_exact(&mut name).map_err(|e| Error::io(path, e))?;
                let name = String::from_utf8_lossy(&name);
                if name != p.name() {
                    return Err(Error::Checkpoint(format!(
                        "state tensor order mismatch: file has {name}, model expects {}",
                        p.name()
                    )));
                }
                let value = read_vec(&mut r)?;
                if value.len() != p.numel() {
                    return Err(Error::Checkpoint(format!(
                        "state tensor {name} holds {} values, expected {}",
                        value.len(),
                        p.numel()
                    )));
                }
                p.value = crate::autodiff::Tensor::new(p.value.shape().clone(), value)?;
                let m = read_vec(&mut r)?;
                let v = read_vec(&mut r)?;
                slots.push((m, v));
                Ok(())
            })();
        });
        result?;
        optimizer.import_state(model, slots, step_count);
        Ok(iteration)
    }
}
