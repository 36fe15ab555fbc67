//! Middlebury `.flo` interchange: little-endian float magic 202021.25, i32
//! width, i32 height, then row-major interleaved (u,v) float32 pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::FlowField;
use crate::error::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    if flow.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "refusing to write non-finite flow values".into(),
        ));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    put(&FLO_MAGIC.to_le_bytes())?;
    put(&(flow.width() as i32).to_le_bytes())?;
    put(&(flow.height() as i32).to_le_bytes())?;
    for v in flow.data() {
        put(&v.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut offset = 0u64;
    let mut take4 = |what: &str| -> Result<[u8; 4]> {
        let mut buf = [0u8; 4];
        r.read_exact(&mut buf).map_err(|_| Error::Format {
            path: path.to_path_buf(),
            message: format!("truncated while reading {what}"),
            offset,
        })?;
        offset += 4;
        Ok(buf)
    };

    let magic = f32::from_le_bytes(take4("magic")?);
    if magic != FLO_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("bad magic {magic}, expected {FLO_MAGIC}"),
            offset: 0,
        });
    }
    let width = i32::from_le_bytes(take4("width")?);
    let height = i32::from_le_bytes(take4("height")?);
    if width <= 0 || height <= 0 || width > 1 << 20 || height > 1 << 20 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("implausible dimensions {width}x{height}"),
            offset: 4,
        });
    }
    let (width, height) = (width as usize, height as usize);
    let mut data = Vec::with_capacity(width * height * 2);
    for _ in 0..width * height * 2 {
        data.push(f32::from_le_bytes(take4("flow data")?));
    }
    FlowField::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pixel_zero_flow_is_twenty_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.flo");
        write_flo(&path, &FlowField::zeros(1, 1)).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 20);
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.flo");
        let data: Vec<f32> = (0..5 * 3 * 2).map(|i| (i as f32) * 0.37 - 2.0).collect();
        let f = FlowField::new(5, 3, data).unwrap();
        write_flo(&path, &f).unwrap();
        let g = read_flo(&path).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn zero_magic_names_expected_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&0.0f32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        std::fs::write(&path, bytes).unwrap();
        let err = read_flo(&path).unwrap_err();
        assert!(err.to_string().contains("202021.25"), "{err}");
    }

    #[test]
    fn truncated_file_reports_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // 7 floats missing
        std::fs::write(&path, bytes).unwrap();
        let err = read_flo(&path).unwrap_err();
        assert!(err.to_string().contains("offset 16"), "{err}");
    }
}
