//! Model persistence: a versioned binary container of named f64 tensors
//! plus a config snapshot and structural metadata, ending in a CRC32.
//!
//! Layout (all integers little-endian):
//!   magic "CSAR" | version u32 | config_len u64 | config utf8
//!   | meta_len u64 | meta utf8 | tensor_count u32
//!   | per tensor: name_len u32, name utf8, rows u64, cols u64, data f64*
//!   | crc32 u32 over everything before it
//!
//! load(save(m)) reproduces every tensor bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use cosmos_core::losses::PseudoMetric;
use cosmos_core::model::{CosmosModel, Skip};
use cosmos_core::pipeline::{FeatureClassifier, PatchSpec, StreamEnsemble};
use cosmos_core::tensor::Tensor;

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 4] = b"CSAR";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub version: u32,
    pub config_snapshot: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl ModelArchive {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let config = self.config_snapshot.as_bytes();
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(config);
        let meta_text: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        let meta = meta_text.as_bytes();
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, tensor) in &self.tensors {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.extend_from_slice(&(tensor.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(tensor.cols() as u64).to_le_bytes());
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 8 {
            return Err(CliError::Archive("file too short".into()));
        }
        let declared_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        let actual_crc = crc32fast::hash(&bytes[..bytes.len() - 4]);
        if declared_crc != actual_crc {
            return Err(CliError::Archive(format!(
                "checksum mismatch: stored {declared_crc:#010x}, computed {actual_crc:#010x}"
            )));
        }
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(CliError::Archive("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Archive(format!(
                "unsupported archive version {version} (expected {VERSION})"
            )));
        }
        let config_len = r.u64()? as usize;
        let config_snapshot = String::from_utf8(r.take(config_len)?.to_vec())
            .map_err(|_| CliError::Archive("config snapshot is not utf8".into()))?;
        let meta_len = r.u64()? as usize;
        let meta_text = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| CliError::Archive("meta block is not utf8".into()))?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CliError::Archive("tensor name is not utf8".into()))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            let tensor = Tensor::new(rows, cols, data)
                .map_err(|e| CliError::Archive(format!("tensor {name}: {e}")))?;
            tensors.push((name, tensor));
        }
        if r.pos != bytes.len() - 4 {
            return Err(CliError::Archive("trailing bytes before checksum".into()));
        }
        Ok(ModelArchive {
            version,
            config_snapshot,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    fn tensor_map(&self) -> BTreeMap<&str, &Tensor> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect()
    }

    fn meta_get(&self, key: &str) -> CliResult<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| CliError::Archive(format!("missing meta key '{key}'")))
    }

    fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        self.meta_get(key)?
            .parse::<T>()
            .map_err(|_| CliError::Archive(format!("meta key '{key}' is malformed")))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CliResult<&'a [u8]> {
        // the final 4 bytes are the checksum, never payload
        if self.pos + n > self.bytes.len().saturating_sub(4) {
            return Err(CliError::Archive("truncated archive".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> CliResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> CliResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn push_model_tensors(prefix: &str, model: &CosmosModel, out: &mut Vec<(String, Tensor)>) {
    for (k, w) in model.weights().iter().enumerate() {
        out.push((format!("{prefix}.w{k}"), w.clone()));
    }
    for (k, b) in model.biases().iter().enumerate() {
        out.push((format!("{prefix}.b{k}"), b.clone()));
    }
    for (j, skip) in model.skips().iter().enumerate() {
        if let Skip::Projection(p) = skip {
            out.push((format!("{prefix}.skip{j}"), p.clone()));
        }
    }
    out.push((format!("{prefix}.metric"), model.metric().tensor().clone()));
    out.push((format!("{prefix}.omega"), model.omega().clone()));
}

fn push_classifier_tensors(prefix: &str, clf: &FeatureClassifier, out: &mut Vec<(String, Tensor)>) {
    for (k, (w, b)) in clf.layers().iter().enumerate() {
        out.push((format!("{prefix}.w{k}"), w.clone()));
        out.push((format!("{prefix}.b{k}"), b.clone()));
    }
    let (mean, inv_std) = clf.standardization();
    out.push((format!("{prefix}.mean"), mean.clone()));
    out.push((format!("{prefix}.inv_std"), inv_std.clone()));
}

fn model_meta(prefix: &str, model: &CosmosModel, meta: &mut BTreeMap<String, String>) {
    meta.insert(
        format!("{prefix}.dims"),
        model
            .layer_dims()
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    meta.insert(
        format!("{prefix}.skips"),
        (!model.skips().is_empty()).to_string(),
    );
    meta.insert(
        format!("{prefix}.dropout"),
        model.dropout_rate().to_string(),
    );
}

fn load_model(prefix: &str, archive: &ModelArchive) -> CliResult<CosmosModel> {
    let tensors = archive.tensor_map();
    let dims: Vec<usize> = archive
        .meta_get(&format!("{prefix}.dims"))?
        .split(',')
        .map(|d| d.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Archive(format!("{prefix}.dims malformed")))?;
    let has_skips: bool = archive.meta_parse(&format!("{prefix}.skips"))?;
    let dropout: f64 = archive.meta_parse(&format!("{prefix}.dropout"))?;
    let n_classes: usize = archive.meta_parse("classes")?;
    let layers = dims.len() - 1;
    let fetch = |name: String| -> CliResult<Tensor> {
        tensors
            .get(name.as_str())
            .map(|t| (*t).clone())
            .ok_or_else(|| CliError::Archive(format!("missing tensor '{name}'")))
    };
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for k in 0..layers {
        weights.push(fetch(format!("{prefix}.w{k}"))?);
        biases.push(fetch(format!("{prefix}.b{k}"))?);
    }
    let mut skips = Vec::new();
    if has_skips && layers >= 3 {
        for j in 1..=layers - 2 {
            if dims[j] == dims[j + 2] {
                skips.push(Skip::Identity);
            } else {
                skips.push(Skip::Projection(fetch(format!("{prefix}.skip{}", j - 1))?));
            }
        }
    }
    let metric = PseudoMetric::new(fetch(format!("{prefix}.metric"))?)
        .map_err(|e| CliError::Archive(e.to_string()))?;
    let omega = fetch(format!("{prefix}.omega"))?;
    CosmosModel::from_parts(dims, weights, biases, skips, metric, omega, dropout, n_classes)
        .map_err(|e| CliError::Archive(format!("{prefix}: {e}")))
}

fn load_classifier(prefix: &str, archive: &ModelArchive) -> CliResult<FeatureClassifier> {
    let tensors = archive.tensor_map();
    let fetch = |name: String| -> CliResult<Tensor> {
        tensors
            .get(name.as_str())
            .map(|t| (*t).clone())
            .ok_or_else(|| CliError::Archive(format!("missing tensor '{name}'")))
    };
    let mut layers = Vec::with_capacity(3);
    for k in 0..3 {
        layers.push((fetch(format!("{prefix}.w{k}"))?, fetch(format!("{prefix}.b{k}"))?));
    }
    FeatureClassifier::from_parts(
        layers,
        fetch(format!("{prefix}.mean"))?,
        fetch(format!("{prefix}.inv_std"))?,
    )
    .map_err(|e| CliError::Archive(format!("{prefix}: {e}")))
}

/// Serialize a trained ensemble with its config snapshot and the validation
/// accuracy recorded at train time.
pub fn archive_ensemble(
    ensemble: &StreamEnsemble,
    config_snapshot: String,
    val_accuracy: f64,
) -> ModelArchive {
    let mut meta = BTreeMap::new();
    let mut tensors = Vec::new();
    meta.insert("kind".into(), "ensemble".into());
    meta.insert("classes".into(), ensemble.n_classes().to_string());
    meta.insert("val_accuracy".into(), format!("{val_accuracy:.17e}"));
    meta.insert(
        "patch_streams".into(),
        ensemble.patch_models().len().to_string(),
    );
    meta.insert(
        "whole_stream".into(),
        ensemble.whole_model().is_some().to_string(),
    );
    meta.insert(
        "fusion_weights".into(),
        ensemble
            .fusion_weights()
            .iter()
            .map(|w| format!("{w:.17e}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    if let Some(spec) = ensemble.spec() {
        let (h, w, c) = spec.image_shape();
        let (ph, pw) = spec.patch_shape();
        meta.insert("patch_spec".into(), format!("{h},{w},{c},{ph},{pw}"));
    }
    for (p, model) in ensemble.patch_models().iter().enumerate() {
        let prefix = format!("stream{p}");
        model_meta(&prefix, model, &mut meta);
        push_model_tensors(&prefix, model, &mut tensors);
    }
    if let Some(model) = ensemble.whole_model() {
        model_meta("whole", model, &mut meta);
        push_model_tensors("whole", model, &mut tensors);
    }
    for (i, clf) in ensemble.classifiers().iter().enumerate() {
        push_classifier_tensors(&format!("clf{i}"), clf, &mut tensors);
    }
    ModelArchive {
        version: VERSION,
        config_snapshot,
        meta,
        tensors,
    }
}

/// Rebuild the ensemble stored in an archive.
pub fn restore_ensemble(archive: &ModelArchive) -> CliResult<StreamEnsemble> {
    let patch_streams: usize = archive.meta_parse("patch_streams")?;
    let whole_stream: bool = archive.meta_parse("whole_stream")?;
    let spec = match archive.meta.get("patch_spec") {
        Some(text) => {
            let parts: Vec<usize> = text
                .split(',')
                .map(|p| p.parse::<usize>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Archive("patch_spec malformed".into()))?;
            if parts.len() != 5 {
                return Err(CliError::Archive("patch_spec malformed".into()));
            }
            Some(
                PatchSpec::new((parts[0], parts[1], parts[2]), (parts[3], parts[4]))
                    .map_err(|e| CliError::Archive(e.to_string()))?,
            )
        }
        None => None,
    };
    let mut patch_models = Vec::with_capacity(patch_streams);
    for p in 0..patch_streams {
        patch_models.push(load_model(&format!("stream{p}"), archive)?);
    }
    let whole_model = if whole_stream {
        Some(load_model("whole", archive)?)
    } else {
        None
    };
    let n_streams = patch_streams + usize::from(whole_stream);
    let mut classifiers = Vec::with_capacity(n_streams);
    for i in 0..n_streams {
        classifiers.push(load_classifier(&format!("clf{i}"), archive)?);
    }
    let fusion_weights: Vec<f64> = archive
        .meta_get("fusion_weights")?
        .split(',')
        .map(|w| w.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Archive("fusion_weights malformed".into()))?;
    StreamEnsemble::from_parts(spec, patch_models, whole_model, classifiers, fusion_weights)
        .map_err(|e| CliError::Archive(e.to_string()))
}

/// The validation accuracy recorded when the archive was written.
pub fn recorded_val_accuracy(archive: &ModelArchive) -> CliResult<f64> {
    archive.meta_parse("val_accuracy")
}
