//! Dataset ingestion: IDX and CIFAR-10 binary formats, deterministic
//! stratified splitting, and synthetic Gaussian class data for tests.

use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD_LEN: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_CHANNELS: usize = 3;

/// A labeled feature matrix: one sample per row, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub class_count: usize,
}

impl DataBatch {
    pub fn new(x: Tensor, y: Vec<usize>, class_count: usize) -> Result<Self> {
        if y.len() != x.rows() {
            return Err(Error::Invalid(format!(
                "{} labels for {} samples",
                y.len(),
                x.rows()
            )));
        }
        if class_count == 0 {
            return Err(Error::Invalid("class_count must be positive".into()));
        }
        for &label in &y {
            if label >= class_count {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: class_count,
                });
            }
        }
        if x.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Invalid("features must lie in [0, 1]".into()));
        }
        Ok(DataBatch { x, y, class_count })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    /// Select samples by index, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<DataBatch> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let dim = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * dim);
        let mut y = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
            y.push(self.y[i]);
        }
        Ok(DataBatch {
            x: Tensor::new(indices.len(), dim, data)?,
            y,
            class_count: self.class_count,
        })
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format(format!(
            "truncated file: need {end} bytes, have {}",
            bytes.len()
        )));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parse IDX image/label byte buffers into a batch. Pixels divide by 255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<DataBatch> {
    let magic = be_u32(images, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = be_u32(images, 4)? as usize;
    let rows = be_u32(images, 8)? as usize;
    let cols = be_u32(images, 12)? as usize;
    let pixel_count = n
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    if images.len() != 16 + pixel_count {
        return Err(Error::Format(format!(
            "truncated image file: header promises {} pixel bytes, found {}",
            pixel_count,
            images.len().saturating_sub(16)
        )));
    }

    let lmagic = be_u32(labels, 0)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let ln = be_u32(labels, 4)? as usize;
    if labels.len() != 8 + ln {
        return Err(Error::Format(format!(
            "truncated label file: header promises {ln} labels, found {}",
            labels.len().saturating_sub(8)
        )));
    }
    if ln != n {
        return Err(Error::Format(format!(
            "image/label count mismatch: {n} images vs {ln} labels"
        )));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }

    let dim = rows * cols;
    let data: Vec<f64> = images[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let y: Vec<usize> = labels[8..].iter().map(|&b| b as usize).collect();
    let class_count = y.iter().max().map_or(1, |&m| m + 1).max(10);
    DataBatch::new(Tensor::new(n, dim, data)?, y, class_count)
}

/// Load MNIST-style IDX files from disk.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DataBatch> {
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;
    parse_idx(&images, &labels)
}

/// Serialize a batch back to IDX bytes. Exact inverse of [`parse_idx`] for
/// data loaded from files (pixel values are k/255 for integer k).
pub fn idx_bytes(batch: &DataBatch, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if rows * cols != batch.feature_dim() {
        return Err(Error::Invalid(format!(
            "{rows}x{cols} does not match feature dim {}",
            batch.feature_dim()
        )));
    }
    let n = batch.len();
    let mut images = Vec::with_capacity(16 + n * rows * cols);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(n as u32).to_be_bytes());
    images.extend_from_slice(&(rows as u32).to_be_bytes());
    images.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in batch.x.data() {
        images.push((v * 255.0).round() as u8);
    }
    let mut labels = Vec::with_capacity(8 + n);
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(n as u32).to_be_bytes());
    labels.extend(batch.y.iter().map(|&l| l as u8));
    Ok((images, labels))
}

/// Parse one or more CIFAR-10 binary batch buffers. Each record is 1 label
/// byte + 3072 channel-planar pixels; output rows are row-major with
/// channels interleaved last, values divided by 255.
pub fn parse_cifar10(buffers: &[Vec<u8>]) -> Result<DataBatch> {
    let mut data = Vec::new();
    let mut y = Vec::new();
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    for (i, buf) in buffers.iter().enumerate() {
        if buf.is_empty() || buf.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::Format(format!(
                "buffer {i}: length {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record",
                buf.len()
            )));
        }
        for record in buf.chunks_exact(CIFAR_RECORD_LEN) {
            let label = record[0] as usize;
            if label > 9 {
                return Err(Error::Format(format!("label {label} > 9 in buffer {i}")));
            }
            y.push(label);
            let pixels = &record[1..];
            for p in 0..plane {
                for c in 0..CIFAR_CHANNELS {
                    data.push(pixels[c * plane + p] as f64 / 255.0);
                }
            }
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = y.len();
    DataBatch::new(Tensor::new(n, plane * CIFAR_CHANNELS, data)?, y, 10)
}

/// Load CIFAR-10 binary batch files from disk.
pub fn load_cifar10(batch_paths: &[&Path]) -> Result<DataBatch> {
    let mut buffers = Vec::with_capacity(batch_paths.len());
    for p in batch_paths {
        buffers.push(read_file(p)?);
    }
    parse_cifar10(&buffers)
}

/// Serialize a batch back to CIFAR-10 record bytes (single buffer); exact
/// inverse of [`parse_cifar10`] on file-loaded data.
pub fn cifar10_bytes(batch: &DataBatch) -> Result<Vec<u8>> {
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    if batch.feature_dim() != plane * CIFAR_CHANNELS {
        return Err(Error::Invalid(format!(
            "feature dim {} is not a 32x32x3 image",
            batch.feature_dim()
        )));
    }
    let mut out = Vec::with_capacity(batch.len() * CIFAR_RECORD_LEN);
    for r in 0..batch.len() {
        out.push(batch.y[r] as u8);
        let row = batch.x.row(r);
        for c in 0..CIFAR_CHANNELS {
            for p in 0..plane {
                out.push((row[p * CIFAR_CHANNELS + c] * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

/// Deterministic stratified split into up to three parts.
///
/// `fractions` has 1..=3 positive entries summing to at most 1. Counts per
/// class use largest-remainder rounding so e.g. (0.8, 0.1, 0.1) on 10
/// samples per class yields exactly 8/1/1. Missing parts come back empty.
pub fn split(
    batch: &DataBatch,
    fractions: &[f64],
    seed: u64,
) -> Result<(DataBatch, Option<DataBatch>, Option<DataBatch>)> {
    if fractions.is_empty() || fractions.len() > 3 {
        return Err(Error::Invalid("need 1..=3 split fractions".into()));
    }
    if fractions.iter().any(|&f| f <= 0.0) {
        return Err(Error::Invalid("split fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if total > 1.0 + 1e-12 {
        return Err(Error::Invalid(format!("split fractions sum to {total} > 1")));
    }

    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); batch.class_count];
    for (i, &label) in batch.y.iter().enumerate() {
        per_class[label].push(i);
    }
    let parts = fractions.len();
    let mut part_indices: Vec<Vec<usize>> = vec![Vec::new(); parts];
    for (class, indices) in per_class.iter().enumerate() {
        if indices.is_empty() {
            continue;
        }
        if indices.len() < parts {
            return Err(Error::Invalid(format!(
                "class {class} has {} samples, fewer than {parts} split parts",
                indices.len()
            )));
        }
        let mut shuffled = indices.clone();
        Rng::derive(seed, class as u64).shuffle(&mut shuffled);

        // largest-remainder apportionment of this class across the parts
        let n = shuffled.len() as f64;
        let mut counts: Vec<usize> = fractions.iter().map(|f| (f * n).floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let want = (total * n).round() as usize;
        let mut remainders: Vec<(usize, f64)> = fractions
            .iter()
            .enumerate()
            .map(|(k, f)| (k, f * n - counts[k] as f64))
            .collect();
        remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for (k, _) in remainders.iter().take(want.saturating_sub(assigned)) {
            counts[*k] += 1;
        }

        let mut cursor = 0;
        for (part, &count) in counts.iter().enumerate() {
            part_indices[part].extend(&shuffled[cursor..cursor + count]);
            cursor += count;
        }
    }

    let first = batch.subset(&part_indices[0])?;
    let second = match part_indices.get(1) {
        Some(ix) if !ix.is_empty() => Some(batch.subset(ix)?),
        _ => None,
    };
    let third = match part_indices.get(2) {
        Some(ix) if !ix.is_empty() => Some(batch.subset(ix)?),
        _ => None,
    };
    Ok((first, second, third))
}

/// Isotropic Gaussian blobs at separated means, clipped to [0, 1].
///
/// Class means sit at 0.5 + separation * sigma * u_c for random unit
/// directions u_c; sigma = 0.05. Separation 0 collapses every class onto
/// the same blob.
pub fn synth_gaussian_classes(
    n_per_class: usize,
    dim: usize,
    class_count: usize,
    separation: f64,
    seed: u64,
) -> Result<DataBatch> {
    if n_per_class == 0 || dim == 0 || class_count == 0 {
        return Err(Error::Invalid("synthetic sizes must be positive".into()));
    }
    let sigma = 0.05;
    let mut dir_rng = Rng::derive(seed, 0xd1_5e);
    let mut means = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let mut u: Vec<f64> = (0..dim).map(|_| dir_rng.next_normal()).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        u.iter_mut().for_each(|v| *v /= norm);
        let mean: Vec<f64> = u.iter().map(|v| 0.5 + separation * sigma * v).collect();
        means.push(mean);
    }
    let n = n_per_class * class_count;
    let mut data = Vec::with_capacity(n * dim);
    let mut y = Vec::with_capacity(n);
    let mut rng = Rng::derive(seed, 0x5a_3b);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean {
                data.push((m + sigma * rng.next_normal()).clamp(0.0, 1.0));
            }
            y.push(class);
        }
    }
    DataBatch::new(Tensor::new(n, dim, data)?, y, class_count)
}
