//! On-disk model directories and commitment files.
//!
//! A model directory holds `manifest.json` plus one raw little-endian `i64`
//! file per parameter tensor, laid out as `L0/e3/w1.bin` for `L0.e3.w1`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use veritensor_core::commit::Digest;
use veritensor_core::error::ModelError;
use veritensor_core::field::MODULUS;
use veritensor_core::model::{Commitment, Layout, ModelConfig, TensorKind, WeightStore};
use veritensor_core::tensor::QTensor;

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";
pub const COMMITMENT: &str = "commitment.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub file: String,
    pub leaf_offset: usize,
    pub leaf_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub model_name: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafRange {
    pub name: String,
    pub leaf_offset: usize,
    pub leaf_count: usize,
}

/// What a verifier needs to know about a committed model.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentFile {
    pub model_name: String,
    pub modulus: u64,
    pub q: u32,
    pub l: u32,
    pub tensors: Vec<LeafRange>,
    pub root: Digest,
}

impl CommitmentFile {
    pub fn new(model_name: &str, c: &Commitment) -> Self {
        Self {
            model_name: model_name.into(),
            modulus: MODULUS,
            q: c.cfg.quant.q,
            l: c.cfg.quant.l,
            tensors: c
                .layout
                .entries
                .iter()
                .map(|e| LeafRange {
                    name: e.name.clone(),
                    leaf_offset: e.leaf_offset,
                    leaf_count: e.leaf_count,
                })
                .collect(),
            root: c.root(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let f: Self = serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        if f.modulus != MODULUS {
            return Err(CliError::Manifest(format!("field modulus {:#x} is not supported", f.modulus)));
        }
        Ok(f)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }
}

fn tensor_file(name: &str) -> String {
    format!("{}.bin", name.replace('.', "/"))
}

/// The manifest records a layout must produce for `cfg`.
fn records(layout: &Layout) -> Vec<TensorRecord> {
    layout
        .entries
        .iter()
        .filter(|e| e.kind != TensorKind::Rope)
        .map(|e| TensorRecord {
            name: e.name.clone(),
            rows: e.rows,
            cols: e.cols,
            file: tensor_file(&e.name),
            leaf_offset: e.leaf_offset,
            leaf_count: e.leaf_count,
        })
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).expect("plain data serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Weights read lazily from a validated model directory.
pub struct DirStore {
    dir: PathBuf,
    pub manifest: Manifest,
    index: BTreeMap<String, usize>,
}

impl DirStore {
    /// Reads the manifest and checks it and every tensor file against the
    /// layout before any weight is hashed.
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))?;
        manifest.config.validate().map_err(|e| CliError::Manifest(e.to_string()))?;
        let layout = Layout::new(&manifest.config).map_err(|e| CliError::Manifest(e.to_string()))?;

        let expected = records(&layout);
        if manifest.tensors.len() != expected.len() {
            return Err(CliError::Shape(format!(
                "manifest lists {} tensors, the config needs {}",
                manifest.tensors.len(),
                expected.len()
            )));
        }
        for (got, want) in manifest.tensors.iter().zip(&expected) {
            if got.name != want.name || (got.rows, got.cols) != (want.rows, want.cols) {
                return Err(CliError::Shape(format!(
                    "{} is {}x{} in the manifest, the config needs {} as {}x{}",
                    got.name, got.rows, got.cols, want.name, want.rows, want.cols
                )));
            }
            if (got.leaf_offset, got.leaf_count) != (want.leaf_offset, want.leaf_count) {
                return Err(CliError::Shape(format!("{}: leaf range disagrees with the layout", got.name)));
            }
            if got.file.starts_with('/') || got.file.split('/').any(|p| p == "..") {
                return Err(CliError::Manifest(format!("{}: file must stay inside the model directory", got.name)));
            }
            let file = dir.join(&got.file);
            let len = fs::metadata(&file).map_err(|e| CliError::io(&file, e))?.len();
            let want_len = (got.rows * got.cols * 8) as u64;
            if len != want_len {
                return Err(CliError::Shape(format!("{}: {len} bytes, expected {want_len}", file.display())));
            }
        }
        let index = manifest.tensors.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.manifest.config
    }
}

impl WeightStore for DirStore {
    fn load(&self, name: &str) -> Result<QTensor, ModelError> {
        let rec = &self.manifest.tensors[*self.index.get(name).ok_or_else(|| ModelError::MissingWeight(name.into()))?];
        let path = self.dir.join(&rec.file);
        let bytes = fs::read(&path).map_err(|e| ModelError::Store(format!("{}: {e}", path.display())))?;
        if bytes.len() != rec.rows * rec.cols * 8 {
            return Err(ModelError::WeightShape {
                name: name.into(),
                got: (bytes.len() / 8 / rec.cols.max(1), rec.cols),
                expected: (rec.rows, rec.cols),
            });
        }
        let data = bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(QTensor::new(rec.rows, rec.cols, data)?)
    }
}

/// Writes a complete model directory; `root` is recorded when known.
pub fn write_model_dir(
    dir: &Path,
    model_name: &str,
    cfg: &ModelConfig,
    weights: &BTreeMap<String, QTensor>,
    root: Option<Digest>,
) -> Result<Manifest, CliError> {
    let layout = Layout::new(cfg)?;
    let tensors = records(&layout);
    for rec in &tensors {
        let t = weights.load(&rec.name)?;
        let path = dir.join(&rec.file);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
    }
    let manifest = Manifest {
        model_name: model_name.into(),
        config: *cfg,
        tensors,
        root,
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}
