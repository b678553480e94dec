//! Dataset descriptor: a JSON document pointing at headerless little-endian
//! payloads (x fastest, z slowest). Payload paths are relative to the
//! descriptor's directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    AttributeSchema, AttributeValue, Dataset, GridDims, InstanceTable, RawVolume,
    SegmentationVolume,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadRef {
    pub file: String,
    pub dtype: String,
    #[serde(default = "little")]
    pub endianness: String,
}

fn little() -> String {
    "little".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeBlock {
    pub schema: AttributeSchema,
    #[serde(default)]
    pub rows: BTreeMap<u32, Vec<AttributeValue>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub raw: PayloadRef,
    pub seg: PayloadRef,
    pub attributes: AttributeBlock,
}

pub fn load_dataset(descriptor_path: impl AsRef<Path>) -> Result<Dataset> {
    let path = descriptor_path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let desc: DatasetDescriptor = serde_json::from_str(&text).map_err(|source| Error::Json {
        context: format!("descriptor {}", path.display()),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let dims = GridDims::new(desc.dims, desc.spacing)?;

    check_endianness("raw", &desc.raw)?;
    let raw_bytes = read_payload(&base, &desc.raw)?;
    let samples: Vec<f64> = match desc.raw.dtype.as_str() {
        "u8" => {
            expect_len(&desc.raw.file, raw_bytes.len(), dims.len())?;
            raw_bytes.iter().map(|&b| f64::from(b)).collect()
        }
        "f32" => {
            expect_len(&desc.raw.file, raw_bytes.len(), dims.len() * 4)?;
            raw_bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect()
        }
        other => {
            return Err(Error::UnsupportedDtype {
                field: "raw",
                dtype: other.into(),
            })
        }
    };
    let raw = RawVolume::from_unnormalized(dims, &samples)?;

    check_endianness("seg", &desc.seg)?;
    if desc.seg.dtype != "u32" {
        return Err(Error::UnsupportedDtype {
            field: "seg",
            dtype: desc.seg.dtype.clone(),
        });
    }
    let seg_bytes = read_payload(&base, &desc.seg)?;
    expect_len(&desc.seg.file, seg_bytes.len(), dims.len() * 4)?;
    let ids = seg_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let seg = SegmentationVolume::new(dims, ids)?;

    let table = InstanceTable::new(desc.attributes.schema, desc.attributes.rows)?;
    Dataset::new(raw, seg, table)
}

/// Writes `<stem>.json`, `<stem>.raw.f32` and `<stem>.seg.u32` into `dir` and
/// returns the descriptor path.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>, stem: &str) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let dims = dataset.dims();
    let raw_name = format!("{stem}.raw.f32");
    let seg_name = format!("{stem}.seg.u32");

    let raw_bytes: Vec<u8> = dataset
        .raw
        .values()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    write(&dir.join(&raw_name), &raw_bytes)?;
    let seg_bytes: Vec<u8> = dataset
        .seg
        .ids()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    write(&dir.join(&seg_name), &seg_bytes)?;

    let desc = DatasetDescriptor {
        dims: dims.shape(),
        spacing: dims.spacing,
        raw: PayloadRef {
            file: raw_name,
            dtype: "f32".into(),
            endianness: little(),
        },
        seg: PayloadRef {
            file: seg_name,
            dtype: "u32".into(),
            endianness: little(),
        },
        attributes: AttributeBlock {
            schema: dataset.table.schema().clone(),
            rows: dataset.table.rows_by_id(),
        },
    };
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&desc).map_err(|source| Error::Json {
        context: "descriptor".into(),
        source,
    })?;
    write(&path, text.as_bytes())?;
    Ok(path)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_payload(base: &Path, payload: &PayloadRef) -> Result<Vec<u8>> {
    let p = base.join(&payload.file);
    fs::read(&p).map_err(|e| Error::io(p, e))
}

fn check_endianness(field: &'static str, payload: &PayloadRef) -> Result<()> {
    if payload.endianness != "little" {
        return Err(Error::invalid(
            field,
            format!(
                "endianness {:?} (only \"little\" is supported)",
                payload.endianness
            ),
        ));
    }
    Ok(())
}

fn expect_len(file: &str, actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::PayloadSize {
            file: file.into(),
            expected,
            actual,
        });
    }
    Ok(())
}
