//! On-disk interchange formats.
//!
//! Every file starts with a single-line compact JSON header terminated by
//! `\n`, followed by a packed little-endian payload:
//!
//! | file            | header fields                                   | payload |
//! |-----------------|-------------------------------------------------|---------|
//! | descriptor table| `count, dim, gem_p, encoder_id`                 | `count*dim` f32 |
//! | feature map     | `channels, width, height, encoder_id`           | `C*H*W` f32 |
//! | embedding head  | `input_dim, output_dim`                         | weights then bias, f32 |
//! | index           | `dim, count, label_set, dtype`                  | `count*dim` f64, then a JSON metadata line |

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::descriptor::FeatureMap;
use crate::error::{Error, Result};
use crate::metric::EmbeddingHead;
use crate::retrieval::{build_index, Index, IndexEntry};

fn write_header<W: Write, H: Serialize>(w: &mut W, header: &H) -> Result<()> {
    let line = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(line.as_bytes())
        .and_then(|_| w.write_all(b"\n"))
        .map_err(|e| Error::io("<stream>", e))
}

fn read_header<R: BufRead, H: DeserializeOwned>(r: &mut R) -> Result<H> {
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io("<stream>", e))?;
    if line.is_empty() {
        return Err(Error::Format("missing JSON header line".into()));
    }
    serde_json::from_str(line.trim_end()).map_err(|e| Error::Format(format!("bad header: {e}")))
}

fn write_f32s<W: Write>(w: &mut W, values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        w.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io("<stream>", e))?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated payload, expected {count} f32 values: {e}")))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut extra = [0u8; 1];
    match r.read(&mut extra) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Format("trailing bytes after payload".into())),
        Err(e) => Err(Error::io("<stream>", e)),
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<std::fs::File>> {
    std::fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescriptorTableHeader {
    pub count: usize,
    pub dim: usize,
    pub gem_p: f64,
    pub encoder_id: String,
}

/// Descriptors in manifest order.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorTable {
    pub gem_p: f64,
    pub encoder_id: String,
    pub rows: Vec<Vec<f64>>,
}

impl DescriptorTable {
    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let dim = self.dim();
        if self.rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Format("descriptor rows differ in length".into()));
        }
        write_header(
            &mut w,
            &DescriptorTableHeader {
                count: self.rows.len(),
                dim,
                gem_p: self.gem_p,
                encoder_id: self.encoder_id.clone(),
            },
        )?;
        write_f32s(&mut w, self.rows.iter().flatten().copied())?;
        w.flush().map_err(|e| Error::io("<stream>", e))
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let h: DescriptorTableHeader = read_header(&mut r)?;
        let flat = read_f32s(&mut r, h.count * h.dim)?;
        expect_eof(&mut r)?;
        let rows = if h.dim == 0 {
            vec![Vec::new(); h.count]
        } else {
            flat.chunks_exact(h.dim).map(<[f64]>::to_vec).collect()
        };
        Ok(Self {
            gem_p: h.gem_p,
            encoder_id: h.encoder_id,
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(create(path.as_ref())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(open(path.as_ref())?)
    }
}

#[derive(Serialize, Deserialize)]
struct FeatureMapHeader {
    channels: usize,
    width: usize,
    height: usize,
    encoder_id: String,
}

pub fn write_feature_map<W: Write>(fm: &FeatureMap, mut w: W) -> Result<()> {
    write_header(
        &mut w,
        &FeatureMapHeader {
            channels: fm.channels,
            width: fm.width,
            height: fm.height,
            encoder_id: fm.encoder_id.clone(),
        },
    )?;
    write_f32s(&mut w, fm.data.iter().copied())?;
    w.flush().map_err(|e| Error::io("<stream>", e))
}

pub fn read_feature_map<R: Read>(r: R) -> Result<FeatureMap> {
    let mut r = BufReader::new(r);
    let h: FeatureMapHeader = read_header(&mut r)?;
    let data = read_f32s(&mut r, h.channels * h.width * h.height)?;
    expect_eof(&mut r)?;
    FeatureMap::new(h.channels, h.width, h.height, data, h.encoder_id)
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_feature_map(open(path.as_ref())?)
}

pub fn save_feature_map(fm: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_feature_map(fm, create(path.as_ref())?)
}

#[derive(Serialize, Deserialize)]
struct HeadHeader {
    input_dim: usize,
    output_dim: usize,
}

pub fn write_head<W: Write>(head: &EmbeddingHead, mut w: W) -> Result<()> {
    write_header(
        &mut w,
        &HeadHeader {
            input_dim: head.input_dim,
            output_dim: head.output_dim,
        },
    )?;
    write_f32s(&mut w, head.weights.iter().chain(&head.bias).copied())?;
    w.flush().map_err(|e| Error::io("<stream>", e))
}

pub fn read_head<R: Read>(r: R) -> Result<EmbeddingHead> {
    let mut r = BufReader::new(r);
    let h: HeadHeader = read_header(&mut r)?;
    let weights = read_f32s(&mut r, h.input_dim * h.output_dim)?;
    let bias = read_f32s(&mut r, h.output_dim)?;
    expect_eof(&mut r)?;
    EmbeddingHead::new(h.input_dim, h.output_dim, weights, bias)
}

pub fn save_head(head: &EmbeddingHead, path: impl AsRef<Path>) -> Result<()> {
    write_head(head, create(path.as_ref())?)
}

pub fn load_head(path: impl AsRef<Path>) -> Result<EmbeddingHead> {
    read_head(open(path.as_ref())?)
}

#[derive(Serialize, Deserialize)]
struct IndexHeader {
    dim: usize,
    count: usize,
    label_set: Vec<String>,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct IndexMeta {
    id: String,
    patient_id: String,
    study_id: String,
    lesion_type: String,
}

/// Index embeddings are stored as f64 so a save/load cycle is lossless.
pub fn write_index<W: Write>(index: &Index, mut w: W) -> Result<()> {
    write_header(
        &mut w,
        &IndexHeader {
            dim: index.dim(),
            count: index.len(),
            label_set: index.label_set(),
            dtype: "f64le".into(),
        },
    )?;
    for e in index.entries() {
        for v in &e.embedding {
            w.write_all(&v.to_le_bytes()).map_err(|e| Error::io("<stream>", e))?;
        }
    }
    let meta: Vec<IndexMeta> = index
        .entries()
        .iter()
        .map(|e| IndexMeta {
            id: e.id.clone(),
            patient_id: e.patient_id.clone(),
            study_id: e.study_id.clone(),
            lesion_type: e.lesion_type.clone(),
        })
        .collect();
    write_header(&mut w, &meta)?;
    w.flush().map_err(|e| Error::io("<stream>", e))
}

pub fn read_index<R: Read>(r: R) -> Result<Index> {
    let mut r = BufReader::new(r);
    let h: IndexHeader = read_header(&mut r)?;
    if h.dtype != "f64le" {
        return Err(Error::Format(format!("unsupported index dtype `{}`", h.dtype)));
    }
    let mut buf = vec![0u8; h.count * h.dim * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated index payload: {e}")))?;
    let flat: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let meta: Vec<IndexMeta> = read_header(&mut r)?;
    expect_eof(&mut r)?;
    if meta.len() != h.count {
        return Err(Error::Format(format!(
            "index header declares {} entries, metadata lists {}",
            h.count,
            meta.len()
        )));
    }
    let entries = meta
        .into_iter()
        .enumerate()
        .map(|(i, m)| IndexEntry {
            id: m.id,
            embedding: flat[i * h.dim..(i + 1) * h.dim].to_vec(),
            patient_id: m.patient_id,
            study_id: m.study_id,
            lesion_type: m.lesion_type,
        })
        .collect();
    build_index(entries)
}

pub fn save_index(index: &Index, path: impl AsRef<Path>) -> Result<()> {
    write_index(index, create(path.as_ref())?)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<Index> {
    read_index(open(path.as_ref())?)
}
