//! Persistent retrieval state: index, catalog, thumbnails and annotations.
//!
//! Layout of the data directory:
//!
//! ```text
//! index.bin              embeddings + metadata (see cbir_core::formats)
//! catalog.json           index version and per-image source metadata
//! thumbnails/<id>.png    64x64 8-bit previews
//! annotations/<id>.jsonl accepted annotation bodies, one per line
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use cbir_core::descriptor::{describe, DescribeInput, Encoder, FeatureMap};
use cbir_core::formats::{load_feature_map, load_head, load_index, read_feature_map, save_index};
use cbir_core::imagecore::{
    decode_raster, encode_png8, load_raster, prepare_roi, resize_bilinear, BBox, ImageGrid,
    LesionRecord, Manifest, ROI_SIZE,
};
use cbir_core::metric::EmbeddingHead;
use cbir_core::retrieval::{query, EvalSetting, Index, IndexEntry, QueryOptions};
use cbir_core::Error as CoreError;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::Annotation;
use crate::config::ServiceConfig;
use crate::error::{ServiceError, ServiceResult};

pub const INDEX_FILE: &str = "index.bin";
pub const CATALOG_FILE: &str = "catalog.json";
pub const THUMBNAIL_DIR: &str = "thumbnails";
pub const ANNOTATION_DIR: &str = "annotations";

/// Source metadata kept for every indexed ROI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub image_path: String,
    pub width: usize,
    pub height: usize,
    pub bbox: BBox,
}

#[derive(Default, Serialize, Deserialize)]
struct CatalogFile {
    index_version: u64,
    images: BTreeMap<String, CatalogEntry>,
}

/// Immutable view handed to readers. Ingest builds a new one and swaps it in.
#[derive(Clone, Debug, Default)]
pub struct Snapshot {
    pub index: Index,
    pub catalog: BTreeMap<String, CatalogEntry>,
    pub version: u64,
}

/// What an image reference in a manifest resolves to.
pub enum SourceItem {
    Image(ImageGrid),
    Features(FeatureMap),
}

/// Resolves manifest image paths. `None` means the file does not exist.
pub trait RecordSource {
    fn raster(&self, path: &Path) -> Option<Result<ImageGrid, CoreError>>;
    fn features(&self, path: &Path) -> Option<Result<FeatureMap, CoreError>>;
}

/// Files on disk, relative paths resolved against `base`.
pub struct DirSource {
    pub base: PathBuf,
}

impl DirSource {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self { base: base.into() }
    }

    fn resolve(&self, path: &Path) -> Option<PathBuf> {
        let p = if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        };
        p.is_file().then_some(p)
    }
}

impl RecordSource for DirSource {
    fn raster(&self, path: &Path) -> Option<Result<ImageGrid, CoreError>> {
        self.resolve(path).map(load_raster)
    }

    fn features(&self, path: &Path) -> Option<Result<FeatureMap, CoreError>> {
        self.resolve(path).map(load_feature_map)
    }
}

/// Uploaded files keyed by name. A manifest path matches a file by its full
/// text or by its final component.
#[derive(Default)]
pub struct UploadSource {
    files: HashMap<String, Vec<u8>>,
}

impl UploadSource {
    pub fn insert(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    fn lookup(&self, path: &Path) -> Option<&[u8]> {
        let full = path.to_string_lossy();
        self.files
            .get(full.as_ref())
            .or_else(|| {
                let name = path.file_name()?.to_string_lossy();
                self.files.get(name.as_ref())
            })
            .map(Vec::as_slice)
    }
}

impl RecordSource for UploadSource {
    fn raster(&self, path: &Path) -> Option<Result<ImageGrid, CoreError>> {
        self.lookup(path).map(decode_raster)
    }

    fn features(&self, path: &Path) -> Option<Result<FeatureMap, CoreError>> {
        self.lookup(path).map(read_feature_map)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub ingested: usize,
    pub index_version: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryRequest {
    pub k: Option<usize>,
    pub setting: EvalSetting,
    pub patient_id: Option<String>,
    pub exclude_id: Option<String>,
    pub bbox: Option<BBox>,
}

impl Default for QueryRequest {
    fn default() -> Self {
        Self {
            k: None,
            setting: EvalSetting::AllPatients,
            patient_id: None,
            exclude_id: None,
            bbox: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryHit {
    pub id: String,
    pub distance: f64,
    pub lesion_type: String,
    pub patient_id: String,
    pub thumbnail_url: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub count: usize,
    pub dim: usize,
    pub label_histogram: BTreeMap<String, usize>,
    pub index_version: u64,
}

pub fn thumbnail_url(id: &str) -> String {
    format!("/api/v1/thumbnails/{id}.png")
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> ServiceResult<()>) -> ServiceResult<()> {
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| ServiceError::io(format!("replacing {}", path.display()), e))
}

/// Mean over channels, min-max normalized and resized for display.
fn feature_preview(fm: &FeatureMap) -> ServiceResult<ImageGrid> {
    let n = fm.width * fm.height;
    let mean: Vec<f64> = (0..n)
        .map(|i| (0..fm.channels).map(|c| fm.channel(c)[i]).sum::<f64>() / fm.channels as f64)
        .collect();
    let grid = ImageGrid::new(fm.width, fm.height, 1, mean)?.normalized();
    Ok(resize_bilinear(&grid, ROI_SIZE, ROI_SIZE)?)
}

pub struct Engine {
    config: ServiceConfig,
    head: RwLock<Option<Arc<EmbeddingHead>>>,
    state: RwLock<Arc<Snapshot>>,
    writer: Mutex<()>,
    annotation_lock: Mutex<()>,
}

impl Engine {
    /// Open (or initialize) the data directory and load any persisted index.
    pub fn open(config: ServiceConfig) -> ServiceResult<Self> {
        config.validate()?;
        let dir = &config.data_dir;
        for sub in [THUMBNAIL_DIR, ANNOTATION_DIR] {
            std::fs::create_dir_all(dir.join(sub))
                .map_err(|e| ServiceError::io(format!("creating {}", dir.join(sub).display()), e))?;
        }
        let head = match &config.head_path {
            Some(p) => Some(Arc::new(load_head(p)?)),
            None => None,
        };
        let snapshot = Self::load_snapshot(dir)?;
        if let Some(h) = &head {
            if !snapshot.index.is_empty() && h.output_dim != snapshot.index.dim() {
                return Err(ServiceError::BadRequest(format!(
                    "head outputs {} dims but the stored index holds {}",
                    h.output_dim,
                    snapshot.index.dim()
                )));
            }
        }
        Ok(Self {
            config,
            head: RwLock::new(head),
            state: RwLock::new(Arc::new(snapshot)),
            writer: Mutex::new(()),
            annotation_lock: Mutex::new(()),
        })
    }

    fn load_snapshot(dir: &Path) -> ServiceResult<Snapshot> {
        let (index_path, catalog_path) = (dir.join(INDEX_FILE), dir.join(CATALOG_FILE));
        if !index_path.exists() {
            return Ok(Snapshot::default());
        }
        let index = load_index(&index_path)?;
        let text = std::fs::read_to_string(&catalog_path)
            .map_err(|e| ServiceError::io(format!("reading {}", catalog_path.display()), e))?;
        let catalog: CatalogFile = serde_json::from_str(&text)
            .map_err(|e| ServiceError::Internal(format!("{}: {e}", catalog_path.display())))?;
        if catalog.images.len() != index.len() || index.entries().iter().any(|e| !catalog.images.contains_key(&e.id)) {
            return Err(ServiceError::Internal(format!(
                "{} and {} disagree on the stored ids",
                index_path.display(),
                catalog_path.display()
            )));
        }
        Ok(Snapshot {
            index,
            catalog: catalog.images,
            version: catalog.index_version,
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn data_dir(&self) -> &Path {
        &self.config.data_dir
    }

    pub fn thumbnail_dir(&self) -> PathBuf {
        self.config.data_dir.join(THUMBNAIL_DIR)
    }

    /// The current read snapshot. Never observes a partially applied ingest.
    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.state.read().expect("state lock poisoned").clone()
    }

    pub fn head(&self) -> Option<Arc<EmbeddingHead>> {
        self.head.read().expect("head lock poisoned").clone()
    }

    /// Replace the embedding head. Refused when it does not fit the stored index.
    pub fn set_head(&self, head: Option<EmbeddingHead>) -> ServiceResult<()> {
        let _w = self.writer.lock().expect("writer lock poisoned");
        let snap = self.snapshot();
        if let Some(h) = &head {
            if !snap.index.is_empty() && h.output_dim != snap.index.dim() {
                return Err(ServiceError::BadRequest(format!(
                    "head outputs {} dims but the index holds {}",
                    h.output_dim,
                    snap.index.dim()
                )));
            }
        }
        *self.head.write().expect("head lock poisoned") = head.map(Arc::new);
        Ok(())
    }

    pub fn stats(&self) -> IndexStats {
        let snap = self.snapshot();
        IndexStats {
            count: snap.index.len(),
            dim: snap.index.dim(),
            label_histogram: snap.index.label_histogram(),
            index_version: snap.version,
        }
    }

    fn uses_features(&self) -> bool {
        self.config.descriptor.encoder == Encoder::Precomputed
    }

    fn load_item(&self, source: &dyn RecordSource, path: &Path) -> Option<Result<SourceItem, CoreError>> {
        if self.uses_features() {
            source.features(path).map(|r| r.map(SourceItem::Features))
        } else {
            source.raster(path).map(|r| r.map(SourceItem::Image))
        }
    }

    /// Decode an uploaded query file according to the configured encoder.
    pub fn decode_upload(&self, bytes: &[u8]) -> ServiceResult<SourceItem> {
        if self.uses_features() {
            Ok(SourceItem::Features(read_feature_map(bytes)?))
        } else {
            Ok(SourceItem::Image(decode_raster(bytes)?))
        }
    }

    /// Descriptor of a ready 64x64 ROI or feature map, projected by the head when loaded.
    pub fn embed_input(&self, input: DescribeInput<'_>) -> ServiceResult<Vec<f64>> {
        let descriptor = describe(input, &self.config.descriptor)?;
        match self.head() {
            Some(h) => Ok(h.embed(&descriptor.vector)?),
            None => Ok(descriptor.vector),
        }
    }

    /// Like [`Engine::embed_input`], cropping and resizing a raster first.
    pub fn embed_item(&self, item: &SourceItem, bbox: Option<&BBox>) -> ServiceResult<Vec<f64>> {
        match item {
            SourceItem::Image(img) => self.embed_input(DescribeInput::Image(&prepare_roi(img, bbox)?)),
            SourceItem::Features(fm) => self.embed_input(DescribeInput::Features(fm)),
        }
    }

    fn prepare_record(&self, record: &LesionRecord, item: &SourceItem) -> ServiceResult<(Vec<f64>, Vec<u8>, CatalogEntry)> {
        let (width, height, embedding, thumb) = match item {
            SourceItem::Image(img) => {
                let roi = prepare_roi(img, Some(&record.bbox))?;
                let embedding = self.embed_input(DescribeInput::Image(&roi))?;
                (img.width(), img.height(), embedding, roi)
            }
            SourceItem::Features(fm) => {
                let embedding = self.embed_input(DescribeInput::Features(fm))?;
                (fm.width, fm.height, embedding, feature_preview(fm)?)
            }
        };
        let entry = CatalogEntry {
            image_path: record.image_path.to_string_lossy().into_owned(),
            width,
            height,
            bbox: record.bbox,
        };
        Ok((embedding, encode_png8(&thumb)?, entry))
    }

    /// Describe every record, append to the index and persist. All or nothing:
    /// any failing record leaves the index untouched. An empty manifest is a
    /// no-op that keeps the current version.
    pub fn ingest(&self, manifest: &Manifest, source: &dyn RecordSource) -> ServiceResult<IngestSummary> {
        let _w = self.writer.lock().expect("writer lock poisoned");
        let current = self.snapshot();
        if manifest.is_empty() {
            return Ok(IngestSummary {
                ingested: 0,
                index_version: current.version,
            });
        }
        let mut index = current.index.clone();
        let mut catalog = current.catalog.clone();
        let mut thumbs = Vec::with_capacity(manifest.len());
        for (i, record) in manifest.records().iter().enumerate() {
            // header is line 1
            let line = i + 2;
            let path = record.image_path.to_string_lossy().into_owned();
            let wrap = |source: CoreError| ServiceError::Record {
                line,
                path: path.clone(),
                source,
            };
            let item = self
                .load_item(source, &record.image_path)
                .ok_or_else(|| ServiceError::MissingFile {
                    line,
                    path: path.clone(),
                })?
                .map_err(wrap)?;
            let (embedding, png, entry) = self.prepare_record(record, &item).map_err(|e| match e {
                ServiceError::Core(c) => wrap(c),
                other => other,
            })?;
            let id = record.derived_id();
            index
                .insert(IndexEntry {
                    id: id.clone(),
                    embedding,
                    patient_id: record.patient_id.clone(),
                    study_id: record.study_id.clone(),
                    lesion_type: record.lesion_type.clone(),
                })
                .map_err(wrap)?;
            catalog.insert(id.clone(), entry);
            thumbs.push((id, png));
        }
        let thumb_dir = self.thumbnail_dir();
        for (id, png) in &thumbs {
            let p = thumb_dir.join(format!("{id}.png"));
            std::fs::write(&p, png).map_err(|e| ServiceError::io(format!("writing {}", p.display()), e))?;
        }
        let next = Snapshot {
            index,
            catalog,
            version: current.version + 1,
        };
        self.persist(&next)?;
        let summary = IngestSummary {
            ingested: thumbs.len(),
            index_version: next.version,
        };
        *self.state.write().expect("state lock poisoned") = Arc::new(next);
        tracing::info!(ingested = summary.ingested, version = summary.index_version, "ingest complete");
        Ok(summary)
    }

    fn persist(&self, snap: &Snapshot) -> ServiceResult<()> {
        let dir = self.data_dir();
        write_atomic(&dir.join(INDEX_FILE), |p| Ok(save_index(&snap.index, p)?))?;
        let catalog = CatalogFile {
            index_version: snap.version,
            images: snap.catalog.clone(),
        };
        let text = serde_json::to_string_pretty(&catalog).map_err(|e| ServiceError::Internal(e.to_string()))?;
        write_atomic(&dir.join(CATALOG_FILE), |p| {
            std::fs::write(p, text).map_err(|e| ServiceError::io(format!("writing {}", p.display()), e))
        })
    }

    /// Rank the current index against a ready embedding.
    pub fn query_embedding(&self, embedding: &[f64], req: &QueryRequest) -> ServiceResult<Vec<QueryHit>> {
        let snap = self.snapshot();
        let opts = QueryOptions {
            k: req.k.unwrap_or(self.config.default_k),
            setting: req.setting,
            patient_id: req.patient_id.as_deref(),
            exclude_id: req.exclude_id.as_deref(),
        };
        let ranked = query(&snap.index, embedding, &opts)?;
        if ranked.is_empty() {
            return Err(ServiceError::EmptyPool(req.setting.to_string()));
        }
        Ok(ranked
            .hits
            .into_iter()
            .map(|h| {
                let e = snap.index.get(&h.id).expect("hit comes from the index");
                QueryHit {
                    thumbnail_url: thumbnail_url(&h.id),
                    lesion_type: e.lesion_type.clone(),
                    patient_id: e.patient_id.clone(),
                    id: h.id,
                    distance: h.distance,
                }
            })
            .collect())
    }

    /// Describe, embed and rank a query image or feature map.
    pub fn query_item(&self, item: &SourceItem, req: &QueryRequest) -> ServiceResult<Vec<QueryHit>> {
        if let (SourceItem::Features(_), Some(_)) = (item, &req.bbox) {
            return Err(ServiceError::BadRequest("bbox applies to raster queries only".into()));
        }
        let embedding = self.embed_item(item, req.bbox.as_ref())?;
        self.query_embedding(&embedding, req)
    }

    fn annotation_path(&self, image_id: &str) -> PathBuf {
        self.data_dir().join(ANNOTATION_DIR).join(format!("{image_id}.jsonl"))
    }

    /// Validate and append an annotation body. The stored JSON is exactly the
    /// accepted body.
    pub fn add_annotation(&self, body: Value) -> ServiceResult<Value> {
        let ann = Annotation::from_value(&body)?;
        ann.validate_fields()?;
        let snap = self.snapshot();
        let entry = snap
            .catalog
            .get(&ann.image_id)
            .ok_or_else(|| ServiceError::NotFound(format!("unknown image_id `{}`", ann.image_id)))?;
        ann.validate_bounds(entry.width, entry.height)?;
        let mut line = serde_json::to_string(&body).map_err(|e| ServiceError::Internal(e.to_string()))?;
        line.push('\n');
        let path = self.annotation_path(&ann.image_id);
        let _g = self.annotation_lock.lock().expect("annotation lock poisoned");
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ServiceError::io(format!("opening {}", path.display()), e))?;
        f.write_all(line.as_bytes())
            .map_err(|e| ServiceError::io(format!("appending to {}", path.display()), e))?;
        Ok(body)
    }

    /// All annotations stored for a known image, oldest first.
    pub fn annotations(&self, image_id: &str) -> ServiceResult<Vec<Value>> {
        if !self.snapshot().catalog.contains_key(image_id) {
            return Err(ServiceError::NotFound(format!("unknown image_id `{image_id}`")));
        }
        let path = self.annotation_path(image_id);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(ServiceError::io(format!("reading {}", path.display()), e)),
        };
        text.lines()
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| ServiceError::Internal(format!("{}: {e}", path.display()))))
            .collect()
    }
}
