use std::collections::HashSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

/// Required header columns, in canonical order.
pub const MANIFEST_COLUMNS: [&str; 8] = [
    "image_path",
    "patient_id",
    "study_id",
    "lesion_type",
    "left",
    "top",
    "right",
    "bottom",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LesionRecord {
    pub image_path: PathBuf,
    pub patient_id: String,
    pub study_id: String,
    pub lesion_type: String,
    pub bbox: BBox,
}

impl LesionRecord {
    /// Stable identifier derived from the image file stem and the bbox.
    pub fn derived_id(&self) -> String {
        let stem = self
            .image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let stem: String = stem
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let b = &self.bbox;
        format!("{stem}-{}-{}-{}-{}", b.left, b.top, b.right, b.bottom)
    }
}

/// Parsed lesion table. Immutable after construction.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    records: Vec<LesionRecord>,
    label_set: Vec<String>,
}

impl Manifest {
    pub fn records(&self) -> &[LesionRecord] {
        &self.records
    }

    /// Distinct lesion types in first-seen order.
    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.records.iter().map(|r| r.lesion_type.clone()).collect()
    }

    /// Resolve relative image paths against `base`.
    pub fn resolve_paths(&self, base: &Path) -> Vec<PathBuf> {
        self.records
            .iter()
            .map(|r| {
                if r.image_path.is_absolute() {
                    r.image_path.clone()
                } else {
                    base.join(&r.image_path)
                }
            })
            .collect()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(file)
}

pub fn parse_manifest(reader: impl Read) -> Result<Manifest> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; MANIFEST_COLUMNS.len()];
    for (slot, name) in col.iter_mut().zip(MANIFEST_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })?;
    }

    let mut records = Vec::new();
    let mut label_set: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| row.get(col[i]).unwrap_or("");
        let coord = |i: usize| -> Result<u32> {
            field(i).parse::<u32>().map_err(|_| Error::Row {
                line,
                message: format!("column `{}` is not a pixel coordinate: {:?}", MANIFEST_COLUMNS[i], field(i)),
            })
        };
        let bbox = BBox::new(coord(4)?, coord(5)?, coord(6)?, coord(7)?);
        if !bbox.is_valid() {
            return Err(Error::Row {
                line,
                message: format!("bbox {bbox} violates left < right and top < bottom"),
            });
        }
        let patient_id = field(1).to_string();
        if patient_id.is_empty() {
            return Err(Error::Row {
                line,
                message: "patient_id is empty".into(),
            });
        }
        let image_path = PathBuf::from(field(0));
        if image_path.as_os_str().is_empty() {
            return Err(Error::Row {
                line,
                message: "image_path is empty".into(),
            });
        }
        if !seen.insert((image_path.clone(), bbox)) {
            return Err(Error::Row {
                line,
                message: format!("duplicate (image_path, bbox) pair: {} {bbox}", image_path.display()),
            });
        }
        let lesion_type = field(3).to_string();
        if lesion_type.is_empty() {
            return Err(Error::Row {
                line,
                message: "lesion_type is empty".into(),
            });
        }
        if !label_set.contains(&lesion_type) {
            label_set.push(lesion_type.clone());
        }
        records.push(LesionRecord {
            image_path,
            patient_id,
            study_id: field(2).to_string(),
            lesion_type,
            bbox,
        });
    }
    Ok(Manifest { records, label_set })
}
