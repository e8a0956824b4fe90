//! The stacked COSMOS autoencoder.
//!
//! ReLU encoder layers with a tied decoder (decoding always multiplies by
//! the transposed encoder weights; decoder weights are never stored), skip
//! connections bridging alternate encoder layers, inverted dropout, one
//! pseudo-metric at the reconstruction, and a linear-softmax classifier head
//! on the code for the mutual-information term.

use crate::error::{Error, Result};
use crate::losses::{PseudoMetric, SoftPrediction};
use crate::rng::Rng;
use crate::tensor::{init_weights, Tensor};

/// Additive bypass from encoder level j into the pre-activation of level j+2.
#[derive(Debug, Clone, PartialEq)]
pub enum Skip {
    /// Dimensions match; the activation is added as-is.
    Identity,
    /// Learned linear projection bridging differing dimensions.
    Projection(Tensor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CosmosModel {
    layer_dims: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    skips: Vec<Skip>,
    metric: PseudoMetric,
    omega: Tensor,
    dropout_rate: f64,
    n_classes: usize,
}

/// Gradients for every trainable parameter group, shaped like the model.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
    /// One entry per bridge; `None` for identity skips (nothing to learn).
    pub skips: Vec<Option<Tensor>>,
    pub metric: Tensor,
    pub omega: Tensor,
}

/// Everything one forward pass produced, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Tensor,
    enc_pre: Vec<Tensor>,
    enc_post: Vec<Tensor>,
    masks: Vec<Option<Tensor>>,
    dec_pre: Vec<Tensor>,
    dec_post: Vec<Tensor>,
    logits: Tensor,
    pub code: Tensor,
    pub reconstruction: Tensor,
    pub class_probs: SoftPrediction,
}

/// Gradients of a scalar loss w.r.t. the forward outputs; what
/// [`CosmosModel::backward`] pulls back to the parameters.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub wrt_reconstruction: Tensor,
    pub wrt_class_probs: Tensor,
    pub wrt_metric: Tensor,
}

fn param_seed(seed: u64, tag: u64) -> u64 {
    Rng::derive(seed, tag).next_u64()
}

impl CosmosModel {
    /// Model with skip connections between alternate encoder layers.
    pub fn new(layer_dims: &[usize], n_classes: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        Self::with_options(layer_dims, n_classes, dropout_rate, seed, true)
    }

    pub fn with_options(
        layer_dims: &[usize],
        n_classes: usize,
        dropout_rate: f64,
        seed: u64,
        use_skips: bool,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Invalid(
                "architecture needs an input dim and at least one layer".into(),
            ));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid("layer dimensions must be positive".into()));
        }
        if n_classes < 2 {
            return Err(Error::Invalid("need at least two classes".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidDropout(dropout_rate));
        }
        let layers = layer_dims.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for k in 0..layers {
            weights.push(init_weights(
                layer_dims[k],
                layer_dims[k + 1],
                param_seed(seed, k as u64),
            )?);
            biases.push(Tensor::zeros(1, layer_dims[k + 1]));
        }
        // bridge j: level j output feeds level j+2 pre-activation, j = 1..=layers-2
        let mut skips = Vec::new();
        if use_skips && layers >= 3 {
            for j in 1..=layers - 2 {
                let (from, to) = (layer_dims[j], layer_dims[j + 2]);
                if from == to {
                    skips.push(Skip::Identity);
                } else {
                    skips.push(Skip::Projection(init_weights(
                        from,
                        to,
                        param_seed(seed, 100 + j as u64),
                    )?));
                }
            }
        }
        let code_dim = *layer_dims.last().expect("non-empty dims");
        Ok(CosmosModel {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            skips,
            metric: PseudoMetric::identity(layer_dims[0]),
            omega: init_weights(code_dim, n_classes, param_seed(seed, 200))?,
            dropout_rate,
            n_classes,
        })
    }

    /// Rebuild a model from explicit parts (archive loading, tests).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Tensor>,
        biases: Vec<Tensor>,
        skips: Vec<Skip>,
        metric: PseudoMetric,
        omega: Tensor,
        dropout_rate: f64,
        n_classes: usize,
    ) -> Result<Self> {
        let layers = layer_dims.len().saturating_sub(1);
        if layers == 0 || weights.len() != layers || biases.len() != layers {
            return Err(Error::Invalid("parameter count does not match dims".into()));
        }
        for k in 0..layers {
            if weights[k].shape() != (layer_dims[k], layer_dims[k + 1]) {
                return Err(Error::ShapeMismatch {
                    op: "from_parts(weight)",
                    lhs: weights[k].shape(),
                    rhs: (layer_dims[k], layer_dims[k + 1]),
                });
            }
            if biases[k].shape() != (1, layer_dims[k + 1]) {
                return Err(Error::ShapeMismatch {
                    op: "from_parts(bias)",
                    lhs: biases[k].shape(),
                    rhs: (1, layer_dims[k + 1]),
                });
            }
        }
        if !skips.is_empty() && skips.len() != layers.saturating_sub(2) {
            return Err(Error::Invalid("skip count does not match depth".into()));
        }
        for (j, skip) in skips.iter().enumerate() {
            let (from, to) = (layer_dims[j + 1], layer_dims[j + 3]);
            match skip {
                Skip::Identity if from == to => {}
                Skip::Projection(t) if t.shape() == (from, to) => {}
                _ => return Err(Error::Invalid(format!("skip {j} has the wrong shape"))),
            }
        }
        if metric.dim() != layer_dims[0] {
            return Err(Error::ShapeMismatch {
                op: "from_parts(metric)",
                lhs: (metric.dim(), metric.dim()),
                rhs: (layer_dims[0], layer_dims[0]),
            });
        }
        let code_dim = *layer_dims.last().expect("non-empty dims");
        if omega.shape() != (code_dim, n_classes) {
            return Err(Error::ShapeMismatch {
                op: "from_parts(omega)",
                lhs: omega.shape(),
                rhs: (code_dim, n_classes),
            });
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidDropout(dropout_rate));
        }
        Ok(CosmosModel {
            layer_dims,
            weights,
            biases,
            skips,
            metric,
            omega,
            dropout_rate,
            n_classes,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn code_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty dims")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn biases(&self) -> &[Tensor] {
        &self.biases
    }

    pub fn skips(&self) -> &[Skip] {
        &self.skips
    }

    pub fn metric(&self) -> &PseudoMetric {
        &self.metric
    }

    pub fn omega(&self) -> &Tensor {
        &self.omega
    }

    pub fn set_weight(&mut self, k: usize, w: Tensor) {
        debug_assert_eq!(w.shape(), self.weights[k].shape());
        self.weights[k] = w;
    }

    pub fn set_bias(&mut self, k: usize, b: Tensor) {
        debug_assert_eq!(b.shape(), self.biases[k].shape());
        self.biases[k] = b;
    }

    pub fn set_skip_projection(&mut self, j: usize, t: Tensor) {
        if let Skip::Projection(p) = &self.skips[j] {
            debug_assert_eq!(t.shape(), p.shape());
            self.skips[j] = Skip::Projection(t);
        }
    }

    pub fn set_metric(&mut self, m: PseudoMetric) {
        debug_assert_eq!(m.dim(), self.metric.dim());
        self.metric = m;
    }

    pub fn set_omega(&mut self, omega: Tensor) {
        debug_assert_eq!(omega.shape(), self.omega.shape());
        self.omega = omega;
    }

    /// Squared Frobenius norm of encoder weights and learned skip
    /// projections; the R term of the combined objective.
    pub fn weight_norm_sq(&self) -> f64 {
        let mut r: f64 = self.weights.iter().map(Tensor::frobenius_sq).sum();
        for skip in &self.skips {
            if let Skip::Projection(t) = skip {
                r += t.frobenius_sq();
            }
        }
        r
    }

    /// Encoder + tied decoder + classifier head.
    ///
    /// Train mode applies inverted dropout to every encoder post-activation,
    /// with masks drawn from `seed`; eval mode is a pure function of (model,
    /// x). Skip bridges are added into the destination pre-activation.
    pub fn forward(&self, x: &Tensor, train_mode: bool, seed: u64) -> Result<ForwardTrace> {
        if x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward(input)",
                lhs: x.shape(),
                rhs: (x.rows(), self.input_dim()),
            });
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidDropout(self.dropout_rate));
        }
        let layers = self.n_layers();
        let mut enc_pre = Vec::with_capacity(layers);
        let mut enc_post: Vec<Tensor> = Vec::with_capacity(layers);
        let mut masks: Vec<Option<Tensor>> = Vec::with_capacity(layers);
        let dropping = train_mode && self.dropout_rate > 0.0;
        let keep_scale = 1.0 / (1.0 - self.dropout_rate);

        for k in 0..layers {
            let below = if k == 0 { x } else { &enc_post[k - 1] };
            let mut z = below.matmul(&self.weights[k])?.add_row_broadcast(&self.biases[k])?;
            // bridge feeding this level: source level j = k - 1 (levels are 1-based)
            if k >= 2 {
                let j = k - 1;
                if let Some(skip) = self.skips.get(j - 1) {
                    let source = &enc_post[j - 1];
                    match skip {
                        Skip::Identity => z.add_assign(source)?,
                        Skip::Projection(p) => z.add_assign(&source.matmul(p)?)?,
                    }
                }
            }
            let mut h = z.relu();
            let mask = if dropping {
                let mut rng = Rng::derive(seed, 0x6d61_736b ^ k as u64);
                let mut m = Tensor::zeros(h.rows(), h.cols());
                for v in m.data_mut() {
                    *v = if rng.next_f64() < self.dropout_rate {
                        0.0
                    } else {
                        keep_scale
                    };
                }
                h = h.hadamard(&m)?;
                Some(m)
            } else {
                None
            };
            enc_pre.push(z);
            enc_post.push(h);
            masks.push(mask);
        }

        let code = enc_post[layers - 1].clone();
        let logits = code.matmul(&self.omega)?;
        let class_probs = SoftPrediction::from_logits(&logits);

        // tied decoder: hidden layers ReLU, output linear
        let mut dec_pre = Vec::new();
        let mut dec_post = Vec::new();
        let mut up = code.clone();
        for k in (1..layers).rev() {
            let z = up.matmul_nt(&self.weights[k])?;
            up = z.relu();
            dec_pre.push(z);
            dec_post.push(up.clone());
        }
        let reconstruction = up.matmul_nt(&self.weights[0])?;

        Ok(ForwardTrace {
            input: x.clone(),
            enc_pre,
            enc_post,
            masks,
            dec_pre,
            dec_post,
            logits,
            code,
            reconstruction,
            class_probs,
        })
    }

    /// Pull loss gradients back to every parameter group. Tied weights
    /// accumulate contributions from both their encoder and decoder uses.
    pub fn backward(&self, trace: &ForwardTrace, loss_grads: &LossGrads) -> Result<ParamGrads> {
        let layers = self.n_layers();
        let n = trace.input.rows();
        if trace.reconstruction.shape() != loss_grads.wrt_reconstruction.shape()
            || trace.logits.shape() != loss_grads.wrt_class_probs.shape()
            || loss_grads.wrt_metric.shape() != (self.metric.dim(), self.metric.dim())
        {
            return Err(Error::ShapeMismatch {
                op: "backward(loss_grads)",
                lhs: loss_grads.wrt_reconstruction.shape(),
                rhs: trace.reconstruction.shape(),
            });
        }

        let mut grad_w: Vec<Tensor> = self
            .weights
            .iter()
            .map(|w| Tensor::zeros(w.rows(), w.cols()))
            .collect();
        let mut grad_b: Vec<Tensor> = self
            .biases
            .iter()
            .map(|b| Tensor::zeros(1, b.cols()))
            .collect();
        let mut grad_skips: Vec<Option<Tensor>> = self
            .skips
            .iter()
            .map(|s| match s {
                Skip::Identity => None,
                Skip::Projection(p) => Some(Tensor::zeros(p.rows(), p.cols())),
            })
            .collect();

        // classifier head: softmax jacobian, then omega
        let probs = trace.class_probs.tensor();
        let gp = &loss_grads.wrt_class_probs;
        let mut dlogits = Tensor::zeros(n, self.n_classes);
        for r in 0..n {
            let p = probs.row(r);
            let g = gp.row(r);
            let inner: f64 = p.iter().zip(g).map(|(pi, gi)| pi * gi).sum();
            for (o, (&pi, &gi)) in dlogits.row_mut(r).iter_mut().zip(p.iter().zip(g)) {
                *o = pi * (gi - inner);
            }
        }
        let grad_omega = trace.code.matmul_tn(&dlogits)?;
        let mut dcode = dlogits.matmul_nt(&self.omega)?;

        // decoder walk, reconstruction back up to the code
        let mut dup = loss_grads.wrt_reconstruction.clone();
        {
            // reconstruction = u1 * W0^T; u1 is the last dec_post (code when depth 1)
            let u1 = trace.dec_post.last().unwrap_or(&trace.code);
            grad_w[0].add_assign(&dup.matmul_tn(u1)?)?;
            dup = dup.matmul(&self.weights[0])?;
        }
        // hidden decoder layers u_k = relu(u_{k+1} W_k^T), walking k = 1 upward;
        // dec_pre/dec_post were pushed for k = layers-1 .. 1
        for k in 1..layers {
            let pos = trace.dec_pre.len() - k;
            let dz = dup.relu_backward(&trace.dec_pre[pos])?;
            let above = if pos == 0 {
                &trace.code
            } else {
                &trace.dec_post[pos - 1]
            };
            grad_w[k].add_assign(&dz.matmul_tn(above)?)?;
            dup = dz.matmul(&self.weights[k])?;
        }
        dcode.add_assign(&dup)?;

        // encoder walk, code level down to the input layer
        let mut dh: Vec<Option<Tensor>> = vec![None; layers];
        dh[layers - 1] = Some(dcode);
        for k in (0..layers).rev() {
            let mut d = dh[k]
                .take()
                .unwrap_or_else(|| Tensor::zeros(n, self.layer_dims[k + 1]));
            if let Some(mask) = &trace.masks[k] {
                d = d.hadamard(mask)?;
            }
            let dz = d.relu_backward(&trace.enc_pre[k])?;
            let below = if k == 0 { &trace.input } else { &trace.enc_post[k - 1] };
            grad_w[k].add_assign(&below.matmul_tn(&dz)?)?;
            grad_b[k].add_assign(&dz.col_sums())?;
            if k >= 1 {
                let back = dz.matmul_nt(&self.weights[k])?;
                match &mut dh[k - 1] {
                    Some(acc) => acc.add_assign(&back)?,
                    slot => *slot = Some(back),
                }
            }
            // skip bridge feeding this level: source level j = k - 1
            if k >= 2 {
                let j = k - 1;
                if let Some(skip) = self.skips.get(j - 1) {
                    let source_idx = j - 1;
                    match skip {
                        Skip::Identity => match &mut dh[source_idx] {
                            Some(acc) => acc.add_assign(&dz)?,
                            slot => *slot = Some(dz.clone()),
                        },
                        Skip::Projection(p) => {
                            let gskip = trace.enc_post[source_idx].matmul_tn(&dz)?;
                            if let Some(gs) = &mut grad_skips[j - 1] {
                                gs.add_assign(&gskip)?;
                            }
                            let back = dz.matmul_nt(p)?;
                            match &mut dh[source_idx] {
                                Some(acc) => acc.add_assign(&back)?,
                                slot => *slot = Some(back),
                            }
                        }
                    }
                }
            }
        }

        Ok(ParamGrads {
            weights: grad_w,
            biases: grad_b,
            skips: grad_skips,
            metric: loss_grads.wrt_metric.clone(),
            omega: grad_omega,
        })
    }

    /// Gradient w.r.t. the classifier weights alone, for objectives that
    /// only see the class probabilities (the omega update of Step 3).
    pub fn classifier_grad(&self, trace: &ForwardTrace, grad_probs: &Tensor) -> Result<Tensor> {
        if grad_probs.shape() != trace.logits.shape() {
            return Err(Error::ShapeMismatch {
                op: "classifier_grad",
                lhs: grad_probs.shape(),
                rhs: trace.logits.shape(),
            });
        }
        let n = trace.input.rows();
        let probs = trace.class_probs.tensor();
        let mut dlogits = Tensor::zeros(n, self.n_classes);
        for r in 0..n {
            let p = probs.row(r);
            let g = grad_probs.row(r);
            let inner: f64 = p.iter().zip(g).map(|(pi, gi)| pi * gi).sum();
            for (o, (&pi, &gi)) in dlogits.row_mut(r).iter_mut().zip(p.iter().zip(g)) {
                *o = pi * (gi - inner);
            }
        }
        trace.code.matmul_tn(&dlogits)
    }

    /// Eval-mode code vectors for a batch: n_samples x code_dim.
    pub fn extract_features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward(x, false, 0)?.code)
    }
}
