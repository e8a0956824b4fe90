//! The classification pipeline: tessellate each image into nine overlapping
//! patches, train one COSMOS model per patch stream (plus an optional
//! whole-image stream), classify each stream's features with a small
//! two-layer network, and fuse posteriors by sum rule.

use rayon::prelude::*;

use crate::data::DataBatch;
use crate::error::{Error, Result};
use crate::model::CosmosModel;
use crate::optim::AdamState;
use crate::rng::Rng;
use crate::tensor::{init_weights, Tensor};
use crate::training::{self, Hyperparams, TrainReport};

/// 3x3 grid of overlapping patches over an H x W x C image.
///
/// Row/column origins are {0, (H-h)/2, H-h} x {0, (W-w)/2, W-w}; both
/// differences must be even so the grid is symmetric.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSpec {
    image_shape: (usize, usize, usize),
    patch_shape: (usize, usize),
    row_offsets: [usize; 3],
    col_offsets: [usize; 3],
}

impl PatchSpec {
    pub fn new(image_shape: (usize, usize, usize), patch_shape: (usize, usize)) -> Result<Self> {
        let (height, width, channels) = image_shape;
        let (ph, pw) = patch_shape;
        if height == 0 || width == 0 || channels == 0 || ph == 0 || pw == 0 {
            return Err(Error::Geometry("dimensions must be positive".into()));
        }
        if ph > height || pw > width {
            return Err(Error::Geometry(format!(
                "patch {ph}x{pw} exceeds image {height}x{width}"
            )));
        }
        if (height - ph) % 2 != 0 || (width - pw) % 2 != 0 {
            return Err(Error::Geometry(format!(
                "image minus patch must be even in both axes, got {} and {}",
                height - ph,
                width - pw
            )));
        }
        Ok(PatchSpec {
            image_shape,
            patch_shape,
            row_offsets: [0, (height - ph) / 2, height - ph],
            col_offsets: [0, (width - pw) / 2, width - pw],
        })
    }

    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.image_shape
    }

    pub fn patch_shape(&self) -> (usize, usize) {
        self.patch_shape
    }

    pub fn row_offsets(&self) -> [usize; 3] {
        self.row_offsets
    }

    pub fn col_offsets(&self) -> [usize; 3] {
        self.col_offsets
    }

    pub fn image_dim(&self) -> usize {
        let (h, w, c) = self.image_shape;
        h * w * c
    }

    pub fn patch_dim(&self) -> usize {
        let (h, w) = self.patch_shape;
        h * w * self.image_shape.2
    }

    /// Flat feature indices of patch `p` (row-major grid order, channels
    /// interleaved last), p in 0..9.
    pub fn patch_indices(&self, p: usize) -> Vec<usize> {
        let (_, width, channels) = self.image_shape;
        let (ph, pw) = self.patch_shape;
        let r0 = self.row_offsets[p / 3];
        let c0 = self.col_offsets[p % 3];
        let mut out = Vec::with_capacity(ph * pw * channels);
        for r in 0..ph {
            for c in 0..pw {
                let pixel = (r0 + r) * width + (c0 + c);
                for ch in 0..channels {
                    out.push(pixel * channels + ch);
                }
            }
        }
        out
    }
}

/// The nine vectorized patches of a single image (1 x image_dim tensor).
pub fn extract_patches(image: &Tensor, spec: &PatchSpec) -> Result<Vec<Tensor>> {
    if image.rows() != 1 || image.cols() != spec.image_dim() {
        return Err(Error::Geometry(format!(
            "image shape {:?} does not match spec dim {}",
            image.shape(),
            spec.image_dim()
        )));
    }
    (0..9)
        .map(|p| {
            let idx = spec.patch_indices(p);
            let data: Vec<f64> = idx.iter().map(|&i| image.data()[i]).collect();
            Tensor::new(1, data.len(), data)
        })
        .collect()
}

/// Patch `p` of every row of a batch, as an n x patch_dim matrix.
pub fn patch_columns(x: &Tensor, spec: &PatchSpec, p: usize) -> Result<Tensor> {
    if x.cols() != spec.image_dim() {
        return Err(Error::Geometry(format!(
            "batch feature dim {} does not match spec dim {}",
            x.cols(),
            spec.image_dim()
        )));
    }
    let idx = spec.patch_indices(p);
    let mut data = Vec::with_capacity(x.rows() * idx.len());
    for r in 0..x.rows() {
        let row = x.row(r);
        data.extend(idx.iter().map(|&i| row[i]));
    }
    Tensor::new(x.rows(), idx.len(), data)
}

/// Hidden dimensions of a stream classifier: floor(n/2), floor(n/4).
pub fn classifier_hidden_dims(feature_dim: usize) -> (usize, usize) {
    ((feature_dim / 2).max(1), (feature_dim / 4).max(1))
}

/// Two-hidden-layer softmax classifier over frozen stream features,
/// trained with cross-entropy and Adam.
///
/// Inputs are standardized with train-set statistics; raw ReLU codes are
/// nonnegative with a dominant mean direction, which otherwise kills whole
/// hidden layers at small widths.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureClassifier {
    layers: Vec<(Tensor, Tensor)>, // (weight, bias) x3
    mean: Tensor,                  // 1 x feature_dim
    inv_std: Tensor,               // 1 x feature_dim
}

impl FeatureClassifier {
    pub fn new(feature_dim: usize, n_classes: usize, seed: u64) -> Result<Self> {
        let (h1, h2) = classifier_hidden_dims(feature_dim);
        let dims = [feature_dim, h1, h2, n_classes];
        let mut layers = Vec::with_capacity(3);
        for k in 0..3 {
            layers.push((
                init_weights(dims[k], dims[k + 1], Rng::derive(seed, 300 + k as u64).next_u64())?,
                Tensor::zeros(1, dims[k + 1]),
            ));
        }
        let mut inv_std = Tensor::zeros(1, feature_dim);
        inv_std.data_mut().fill(1.0);
        Ok(FeatureClassifier {
            layers,
            mean: Tensor::zeros(1, feature_dim),
            inv_std,
        })
    }

    pub fn from_parts(
        layers: Vec<(Tensor, Tensor)>,
        mean: Tensor,
        inv_std: Tensor,
    ) -> Result<Self> {
        if layers.len() != 3 {
            return Err(Error::Invalid("classifier needs exactly 3 layers".into()));
        }
        for (w, b) in &layers {
            if b.shape() != (1, w.cols()) {
                return Err(Error::ShapeMismatch {
                    op: "from_parts(bias)",
                    lhs: b.shape(),
                    rhs: (1, w.cols()),
                });
            }
        }
        for pair in layers.windows(2) {
            if pair[0].0.cols() != pair[1].0.rows() {
                return Err(Error::Invalid("classifier layer dims do not chain".into()));
            }
        }
        let dim = layers[0].0.rows();
        if mean.shape() != (1, dim) || inv_std.shape() != (1, dim) {
            return Err(Error::Invalid("standardization stats have the wrong shape".into()));
        }
        Ok(FeatureClassifier {
            layers,
            mean,
            inv_std,
        })
    }

    pub fn layers(&self) -> &[(Tensor, Tensor)] {
        &self.layers
    }

    pub fn standardization(&self) -> (&Tensor, &Tensor) {
        (&self.mean, &self.inv_std)
    }

    fn fit_standardization(&mut self, features: &Tensor) {
        let n = features.rows() as f64;
        let dim = features.cols();
        let mut mean = vec![0.0; dim];
        for r in 0..features.rows() {
            for (m, &v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in 0..features.rows() {
            for ((s, &v), &m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv_std: Vec<f64> = var
            .iter()
            .map(|&s| 1.0 / (s / n).sqrt().max(1e-8))
            .collect();
        self.mean = Tensor::new(1, dim, mean).expect("finite stats");
        self.inv_std = Tensor::new(1, dim, inv_std).expect("finite stats");
    }

    fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = x.clone();
        for r in 0..out.rows() {
            for ((v, &m), &s) in out
                .row_mut(r)
                .iter_mut()
                .zip(self.mean.data())
                .zip(self.inv_std.data())
            {
                *v = (*v - m) * s;
            }
        }
        Ok(out)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.layers[2].0.cols()
    }

    fn forward(&self, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>, Tensor)> {
        self.forward_standardized(&self.standardize(x)?)
    }

    fn forward_standardized(&self, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>, Tensor)> {
        let mut pre = Vec::with_capacity(3);
        let mut post = Vec::with_capacity(2);
        let mut h = x.clone();
        for (k, (w, b)) in self.layers.iter().enumerate() {
            let z = h.matmul(w)?.add_row_broadcast(b)?;
            if k < 2 {
                h = z.relu();
                post.push(h.clone());
            }
            pre.push(z);
        }
        let logits = pre[2].clone();
        Ok((pre, post, logits))
    }

    /// Class posteriors, n x C.
    pub fn posteriors(&self, features: &Tensor) -> Result<Tensor> {
        let (_, _, logits) = self.forward(features)?;
        Ok(crate::losses::SoftPrediction::from_logits(&logits)
            .tensor()
            .clone())
    }

    pub fn accuracy(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        let probs = self.posteriors(features)?;
        let correct = (0..features.rows())
            .filter(|&r| training::argmax(probs.row(r)) == labels[r])
            .count();
        Ok(correct as f64 / features.rows().max(1) as f64)
    }

    /// Mini-batch cross-entropy training; keeps the best-validation weights
    /// and returns that accuracy.
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        &mut self,
        features: &Tensor,
        labels: &[usize],
        val_features: &Tensor,
        val_labels: &[usize],
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<f64> {
        if features.rows() != labels.len() {
            return Err(Error::Invalid("feature/label count mismatch".into()));
        }
        self.fit_standardization(features);
        let batch_size = batch_size.clamp(1, features.rows());
        let mut states: Vec<(AdamState, AdamState)> = self
            .layers
            .iter()
            .map(|(w, b)| {
                Ok((
                    AdamState::new(w.rows(), w.cols(), lr)?,
                    AdamState::new(1, b.cols(), lr)?,
                ))
            })
            .collect::<Result<_>>()?;
        let mut best = self.clone();
        let mut best_acc = f64::NEG_INFINITY;
        for epoch in 0..epochs {
            let mut order: Vec<usize> = (0..features.rows()).collect();
            Rng::derive(seed, 0xc1a5 ^ epoch as u64).shuffle(&mut order);
            for chunk in order.chunks(batch_size) {
                let mut xb = Vec::with_capacity(chunk.len() * features.cols());
                let mut yb = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    xb.extend_from_slice(features.row(i));
                    yb.push(labels[i]);
                }
                let xb = Tensor::new(chunk.len(), features.cols(), xb)?;
                self.sgd_step(&xb, &yb, &mut states)?;
            }
            let acc = self.accuracy(val_features, val_labels)?;
            if acc > best_acc {
                best_acc = acc;
                best = self.clone();
            }
        }
        *self = best;
        Ok(best_acc.max(0.0))
    }

    fn sgd_step(
        &mut self,
        x: &Tensor,
        y: &[usize],
        states: &mut [(AdamState, AdamState)],
    ) -> Result<()> {
        let n = x.rows();
        let x = self.standardize(x)?;
        let x = &x;
        let (pre, post, logits) = self.forward_standardized(x)?;
        let probs = crate::losses::SoftPrediction::from_logits(&logits);
        // d cross-entropy / d logits = (p - onehot) / n
        let mut dz = probs.tensor().clone();
        for (r, &label) in y.iter().enumerate() {
            let row = dz.row_mut(r);
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
        let mut grads = Vec::with_capacity(3);
        let mut d = dz;
        for k in (0..3).rev() {
            let below: &Tensor = if k == 0 { x } else { &post[k - 1] };
            let gw = below.matmul_tn(&d)?;
            let gb = d.col_sums();
            grads.push((k, gw, gb));
            if k > 0 {
                d = d.matmul_nt(&self.layers[k].0)?.relu_backward(&pre[k - 1])?;
            }
        }
        for (k, gw, gb) in grads.into_iter().rev() {
            let (w, b) = &self.layers[k];
            let new_w = states[k].0.step(w, &gw)?;
            let new_b = states[k].1.step(b, &gb)?;
            self.layers[k] = (new_w, new_b);
        }
        Ok(())
    }
}

/// Per-stream report from pipeline training.
#[derive(Debug, Clone)]
pub struct StreamReport {
    pub stream: String,
    pub report: TrainReport,
    pub classifier_val_accuracy: f64,
}

/// Trained patch models (+ optional whole-image model) with one classifier
/// per stream and sum-rule fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEnsemble {
    spec: Option<PatchSpec>,
    patch_models: Vec<CosmosModel>,
    whole_model: Option<CosmosModel>,
    classifiers: Vec<FeatureClassifier>,
    fusion_weights: Vec<f64>,
}

impl StreamEnsemble {
    pub fn from_parts(
        spec: Option<PatchSpec>,
        patch_models: Vec<CosmosModel>,
        whole_model: Option<CosmosModel>,
        classifiers: Vec<FeatureClassifier>,
        fusion_weights: Vec<f64>,
    ) -> Result<Self> {
        let n_streams = patch_models.len() + usize::from(whole_model.is_some());
        if n_streams == 0 {
            return Err(Error::Invalid("ensemble needs at least one stream".into()));
        }
        if !patch_models.is_empty() {
            if patch_models.len() != 9 {
                return Err(Error::Invalid(format!(
                    "expected 9 patch models, got {}",
                    patch_models.len()
                )));
            }
            if spec.is_none() {
                return Err(Error::Invalid("patch models need a patch spec".into()));
            }
        }
        if classifiers.len() != n_streams {
            return Err(Error::Invalid(format!(
                "{} classifiers for {} streams",
                classifiers.len(),
                n_streams
            )));
        }
        if fusion_weights.len() != n_streams {
            return Err(Error::Invalid(format!(
                "{} fusion weights for {} streams",
                fusion_weights.len(),
                n_streams
            )));
        }
        let mut classes = None;
        for (model, classifier) in patch_models
            .iter()
            .chain(whole_model.iter())
            .zip(&classifiers)
        {
            if classifier.input_dim() != model.code_dim() {
                return Err(Error::Invalid(
                    "classifier input dim must equal its stream's code dim".into(),
                ));
            }
            let c = classifier.n_classes();
            if *classes.get_or_insert(c) != c || model.n_classes() != c {
                return Err(Error::Invalid("streams disagree on class count".into()));
            }
        }
        Ok(StreamEnsemble {
            spec,
            patch_models,
            whole_model,
            classifiers,
            fusion_weights,
        })
    }

    pub fn spec(&self) -> Option<&PatchSpec> {
        self.spec.as_ref()
    }

    pub fn patch_models(&self) -> &[CosmosModel] {
        &self.patch_models
    }

    pub fn whole_model(&self) -> Option<&CosmosModel> {
        self.whole_model.as_ref()
    }

    pub fn classifiers(&self) -> &[FeatureClassifier] {
        &self.classifiers
    }

    pub fn fusion_weights(&self) -> &[f64] {
        &self.fusion_weights
    }

    pub fn set_fusion_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.n_streams() {
            return Err(Error::Invalid("fusion weight count mismatch".into()));
        }
        self.fusion_weights = weights;
        Ok(())
    }

    pub fn n_streams(&self) -> usize {
        self.patch_models.len() + usize::from(self.whole_model.is_some())
    }

    pub fn n_classes(&self) -> usize {
        self.classifiers[0].n_classes()
    }

    pub fn stream_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.patch_models.len())
            .map(|p| format!("patch{p}"))
            .collect();
        if self.whole_model.is_some() {
            names.push("whole".into());
        }
        names
    }

    /// Input dim the ensemble expects (the full image dim).
    pub fn input_dim(&self) -> usize {
        match (&self.spec, &self.whole_model) {
            (Some(spec), _) => spec.image_dim(),
            (None, Some(m)) => m.input_dim(),
            (None, None) => unreachable!("validated non-empty"),
        }
    }

    /// Per-stream posteriors for a batch, in stream order.
    fn stream_posteriors(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "predict(input)",
                lhs: x.shape(),
                rhs: (x.rows(), self.input_dim()),
            });
        }
        let mut out = Vec::with_capacity(self.n_streams());
        for (p, model) in self.patch_models.iter().enumerate() {
            let spec = self.spec.as_ref().expect("validated");
            let xs = patch_columns(x, spec, p)?;
            let features = model.extract_features(&xs)?;
            out.push(self.classifiers[p].posteriors(&features)?);
        }
        if let Some(model) = &self.whole_model {
            let features = model.extract_features(x)?;
            out.push(self.classifiers[self.patch_models.len()].posteriors(&features)?);
        }
        Ok(out)
    }

    /// Sum-rule fusion: weighted mean of per-stream posteriors.
    pub fn fused_posteriors(&self, x: &Tensor) -> Result<Tensor> {
        let streams = self.stream_posteriors(x)?;
        fuse_posteriors(&streams, &self.fusion_weights)
    }

    /// Predicted classes and fused posteriors for a batch; argmax ties break
    /// toward the lowest class index.
    pub fn predict_batch(&self, x: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let fused = self.fused_posteriors(x)?;
        let classes = (0..fused.rows())
            .map(|r| training::argmax(fused.row(r)))
            .collect();
        Ok((classes, fused))
    }

    /// Single-image prediction: (class, fused posterior).
    pub fn predict(&self, image: &Tensor) -> Result<(usize, Vec<f64>)> {
        let (classes, fused) = self.predict_batch(image)?;
        Ok((classes[0], fused.row(0).to_vec()))
    }

    pub fn accuracy(&self, data: &DataBatch) -> Result<f64> {
        let (classes, _) = self.predict_batch(&data.x)?;
        let correct = classes.iter().zip(&data.y).filter(|(a, b)| a == b).count();
        Ok(correct as f64 / data.len().max(1) as f64)
    }
}

/// Weighted mean of posterior matrices; weights must be positive.
pub fn fuse_posteriors(streams: &[Tensor], weights: &[f64]) -> Result<Tensor> {
    if streams.is_empty() || streams.len() != weights.len() {
        return Err(Error::Invalid("stream/weight count mismatch".into()));
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::Invalid("fusion weights must be positive".into()));
    }
    let total: f64 = weights.iter().sum();
    let mut fused = Tensor::zeros(streams[0].rows(), streams[0].cols());
    for (s, &w) in streams.iter().zip(weights) {
        if s.shape() != fused.shape() {
            return Err(Error::ShapeMismatch {
                op: "fuse_posteriors",
                lhs: s.shape(),
                rhs: fused.shape(),
            });
        }
        fused.add_assign(&s.scale(w / total)?)?;
    }
    Ok(fused)
}

/// Pipeline configuration: stream architectures plus classifier budget.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Architecture of each patch stream; first dim must equal the patch dim.
    pub patch_arch: Vec<usize>,
    /// Whole-image stream architecture; None defaults to patch_arch with the
    /// input dim swapped for the image dim.
    pub whole_arch: Option<Vec<usize>>,
    pub tessellate: bool,
    pub include_whole: bool,
    pub n_classes: usize,
    pub use_skips: bool,
    pub hyper: Hyperparams,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub classifier_batch: usize,
}

impl PipelineConfig {
    pub fn streams(&self) -> usize {
        usize::from(self.tessellate) * 9 + usize::from(self.include_whole)
    }
}

/// Train every stream's COSMOS model, freeze them, then train the per-stream
/// classifiers on extracted features. Streams run in parallel; each owns its
/// seed, so the result does not depend on scheduling.
pub fn train_pipeline(
    train: &DataBatch,
    val: &DataBatch,
    spec: Option<&PatchSpec>,
    config: &PipelineConfig,
) -> Result<(StreamEnsemble, Vec<StreamReport>)> {
    if !config.tessellate && !config.include_whole {
        return Err(Error::Invalid("pipeline has no streams enabled".into()));
    }
    if config.tessellate && spec.is_none() {
        return Err(Error::Invalid("tessellation requires a patch spec".into()));
    }

    enum StreamInput {
        Patch(usize),
        Whole,
    }
    let mut inputs = Vec::new();
    if config.tessellate {
        for p in 0..9 {
            inputs.push(StreamInput::Patch(p));
        }
    }
    if config.include_whole {
        inputs.push(StreamInput::Whole);
    }

    let whole_arch: Vec<usize> = config.whole_arch.clone().unwrap_or_else(|| {
        let mut a = config.patch_arch.clone();
        a[0] = train.feature_dim();
        a
    });

    let results: Vec<Result<(CosmosModel, FeatureClassifier, StreamReport)>> = inputs
        .par_iter()
        .enumerate()
        .map(|(sidx, input)| {
            let (name, train_x, val_x, arch) = match input {
                StreamInput::Patch(p) => {
                    let spec = spec.expect("checked above");
                    (
                        format!("patch{p}"),
                        patch_columns(&train.x, spec, *p)?,
                        patch_columns(&val.x, spec, *p)?,
                        config.patch_arch.clone(),
                    )
                }
                StreamInput::Whole => (
                    "whole".to_string(),
                    train.x.clone(),
                    val.x.clone(),
                    whole_arch.clone(),
                ),
            };
            let tag = |e: Error| Error::Invalid(format!("stream {name}: {e}"));
            let mut hyper = config.hyper.clone();
            hyper.seed = Rng::derive(config.hyper.seed, 7000 + sidx as u64).next_u64();
            let train_batch =
                DataBatch::new(train_x, train.y.clone(), train.class_count).map_err(tag)?;
            let val_batch =
                DataBatch::new(val_x, val.y.clone(), val.class_count).map_err(tag)?;
            let model = CosmosModel::with_options(
                &arch,
                config.n_classes,
                hyper.dropout_rate,
                hyper.seed,
                config.use_skips,
            )
            .map_err(tag)?;
            let (model, report) =
                training::train(model, &train_batch, &val_batch, &hyper).map_err(tag)?;

            let train_features = model.extract_features(&train_batch.x).map_err(tag)?;
            let val_features = model.extract_features(&val_batch.x).map_err(tag)?;
            let mut classifier =
                FeatureClassifier::new(model.code_dim(), config.n_classes, hyper.seed)
                    .map_err(tag)?;
            let classifier_val_accuracy = classifier
                .train(
                    &train_features,
                    &train_batch.y,
                    &val_features,
                    &val_batch.y,
                    config.classifier_epochs,
                    config.classifier_lr,
                    config.classifier_batch,
                    hyper.seed ^ 0xc1a5,
                )
                .map_err(tag)?;
            Ok((
                model,
                classifier,
                StreamReport {
                    stream: name,
                    report,
                    classifier_val_accuracy,
                },
            ))
        })
        .collect();

    let mut patch_models = Vec::new();
    let mut whole_model = None;
    let mut classifiers = Vec::new();
    let mut reports = Vec::new();
    for (input, result) in inputs.iter().zip(results) {
        let (model, classifier, report) = result?;
        match input {
            StreamInput::Patch(_) => patch_models.push(model),
            StreamInput::Whole => whole_model = Some(model),
        }
        classifiers.push(classifier);
        reports.push(report);
    }
    let n_streams = classifiers.len();
    let ensemble = StreamEnsemble::from_parts(
        if config.tessellate { spec.cloned() } else { None },
        patch_models,
        whole_model,
        classifiers,
        vec![1.0; n_streams],
    )?;
    Ok((ensemble, reports))
}

/// Histogram of fused posterior scores for one class, split by true class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDistribution {
    pub class_of_interest: usize,
    pub bin_edges: Vec<f64>,
    /// counts[true_class][bin]
    pub counts: Vec<Vec<usize>>,
}

impl ScoreDistribution {
    pub fn bins(&self) -> usize {
        self.bin_edges.len() - 1
    }

    /// Comma-separated table: bin_low, bin_high, count_class0, count_class1, ...
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high");
        for k in 0..self.counts.len() {
            out.push_str(&format!(",count_class{k}"));
        }
        out.push('\n');
        for b in 0..self.bins() {
            out.push_str(&format!("{},{}", self.bin_edges[b], self.bin_edges[b + 1]));
            for class_counts in &self.counts {
                out.push_str(&format!(",{}", class_counts[b]));
            }
            out.push('\n');
        }
        out
    }

    /// Samples sitting in bins where more than one true class has mass.
    pub fn overlap_count(&self) -> usize {
        (0..self.bins())
            .filter(|&b| self.counts.iter().filter(|c| c[b] > 0).count() > 1)
            .map(|b| self.counts.iter().map(|c| c[b]).sum::<usize>())
            .sum()
    }
}

/// Fused-posterior score histograms for `class_of_interest`, split by
/// ground-truth class.
pub fn score_distributions(
    ensemble: &StreamEnsemble,
    data: &DataBatch,
    class_of_interest: usize,
    bins: usize,
) -> Result<ScoreDistribution> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if class_of_interest >= ensemble.n_classes() {
        return Err(Error::LabelOutOfRange {
            label: class_of_interest,
            classes: ensemble.n_classes(),
        });
    }
    let bins = bins.max(1);
    let fused = ensemble.fused_posteriors(&data.x)?;
    let bin_edges: Vec<f64> = (0..=bins).map(|b| b as f64 / bins as f64).collect();
    let mut counts = vec![vec![0usize; bins]; data.class_count];
    for r in 0..data.len() {
        let score = fused.get(r, class_of_interest).clamp(0.0, 1.0);
        let bin = ((score * bins as f64) as usize).min(bins - 1);
        counts[data.y[r]][bin] += 1;
    }
    Ok(ScoreDistribution {
        class_of_interest,
        bin_edges,
        counts,
    })
}
