//! On-disk container plumbing shared by models, SNNs and datasets: a
//! directory holding `manifest.json` plus one raw little-endian blob per
//! tensor, named after the tensor.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: &str = "1.0";
pub const FORMAT_MAJOR: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U32,
    I32,
    I64,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::F32 | DType::U32 | DType::I32 => 4,
            DType::I64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
}

pub fn check_version(found: &str) -> Result<()> {
    let major = found.split('.').next().and_then(|m| m.parse::<u32>().ok());
    if major == Some(FORMAT_MAJOR) {
        Ok(())
    } else {
        Err(Error::Version {
            found: found.to_string(),
            expected: FORMAT_MAJOR,
        })
    }
}

fn check_blob_name(name: &str) -> Result<()> {
    if name.is_empty() || name == MANIFEST || name.starts_with('.') || name.contains(['/', '\\']) {
        return Err(Error::Manifest(format!("invalid tensor name \"{name}\"")));
    }
    Ok(())
}

pub fn read_manifest<T: DeserializeOwned>(dir: &Path) -> Result<T> {
    let path = dir.join(MANIFEST);
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "container directory not found"),
        ));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
}

pub fn write_manifest<T: Serialize>(dir: &Path, manifest: &T) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST);
    let mut text = serde_json::to_string_pretty(manifest).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_raw(dir: &Path, entry: &TensorEntry) -> Result<Vec<u8>> {
    check_blob_name(&entry.name)?;
    let path = dir.join(&entry.name);
    if !path.is_file() {
        return Err(Error::MissingBlob(entry.name.clone()));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = entry.shape.iter().product::<usize>() * entry.dtype.width();
    if bytes.len() != expected {
        return Err(Error::Manifest(format!(
            "blob \"{}\" has {} bytes, shape {:?} of {:?} needs {expected}",
            entry.name,
            bytes.len(),
            entry.shape,
            entry.dtype
        )));
    }
    Ok(bytes)
}

fn expect_dtype(entry: &TensorEntry, dtype: DType) -> Result<()> {
    if entry.dtype != dtype {
        return Err(Error::Manifest(format!(
            "tensor \"{}\" has dtype {:?}, expected {dtype:?}",
            entry.name, entry.dtype
        )));
    }
    Ok(())
}

macro_rules! blob_codec {
    ($read:ident, $write:ident, $ty:ty, $dtype:expr) => {
        pub fn $read(dir: &Path, entry: &TensorEntry) -> Result<Tensor<$ty>> {
            expect_dtype(entry, $dtype)?;
            let bytes = read_raw(dir, entry)?;
            let data = bytes
                .chunks_exact(std::mem::size_of::<$ty>())
                .map(|c| <$ty>::from_le_bytes(c.try_into().expect("chunk width")))
                .collect();
            Tensor::new(entry.shape.clone(), data)
                .map_err(|e| Error::Manifest(format!("tensor \"{}\": {e}", entry.name)))
        }

        pub fn $write(dir: &Path, name: &str, tensor: &Tensor<$ty>) -> Result<TensorEntry> {
            check_blob_name(name)?;
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let bytes: Vec<u8> = tensor.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            let path: PathBuf = dir.join(name);
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            Ok(TensorEntry {
                name: name.to_string(),
                dtype: $dtype,
                shape: tensor.shape().to_vec(),
            })
        }
    };
}

blob_codec!(read_f32, write_f32, f32, DType::F32);
blob_codec!(read_u32, write_u32, u32, DType::U32);
blob_codec!(read_i32, write_i32, i32, DType::I32);
blob_codec!(read_i64, write_i64, i64, DType::I64);

pub fn find_entry<'a>(entries: &'a [TensorEntry], name: &str) -> Result<&'a TensorEntry> {
    entries
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::MissingBlob(name.to_string()))
}
