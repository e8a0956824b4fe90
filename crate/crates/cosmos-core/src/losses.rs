//! The loss terms of the supervised COSMOS objective and their analytic
//! gradients.
//!
//! All reconstruction losses are evaluated per sample (one sample per row)
//! and summed over the batch; a whole-matrix cosine would entangle
//! unrelated samples. The combined objective is
//!
//! total = -cosine + mahalanobis - lambda1 * mutual_info + lambda2 * regularizer
//!
//! Every gradient here is checked against central finite differences in the
//! test suites.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MI_EPS: f64 = 1e-12;

/// How the cosine denominator is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CosineMode {
    /// x . xhat / (|x| * |xhat|), the scale-invariant similarity.
    #[default]
    Standard,
    /// x . xhat / (|x|^2 * |xhat|^2); squares the norms in the denominator,
    /// which gives up scale invariance and the [-1, 1] range.
    SquaredNorm,
}

impl CosineMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(CosineMode::Standard),
            "squared_norm" => Ok(CosineMode::SquaredNorm),
            other => Err(Error::Invalid(format!(
                "unknown cosine mode '{other}' (expected standard|squared_norm)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CosineMode::Standard => "standard",
            CosineMode::SquaredNorm => "squared_norm",
        }
    }
}

/// Learnable m x m pseudo-distance matrix. Neither symmetry nor positive
/// semi-definiteness is required.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoMetric(Tensor);

impl PseudoMetric {
    pub fn new(m: Tensor) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::InvalidShape {
                rows: m.rows(),
                cols: m.cols(),
                reason: "pseudo-metric must be square",
            });
        }
        Ok(PseudoMetric(m))
    }

    pub fn identity(dim: usize) -> Self {
        PseudoMetric(Tensor::identity(dim))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Row-stochastic class scores: n_samples x n_classes, rows sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPrediction(Tensor);

impl SoftPrediction {
    pub fn new(probs: Tensor) -> Result<Self> {
        for r in 0..probs.rows() {
            let row = probs.row(r);
            if row.iter().any(|&p| p < 0.0) {
                return Err(Error::Invalid(format!(
                    "soft prediction row {r} has a negative entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Invalid(format!(
                    "soft prediction row {r} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(SoftPrediction(probs))
    }

    /// Row-wise softmax; always produces valid probabilities.
    pub fn from_logits(logits: &Tensor) -> Self {
        let mut out = logits.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        SoftPrediction(out)
    }

    pub fn n_samples(&self) -> usize {
        self.0.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.0.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

/// Regularization constants and the cosine flavor a loss is evaluated under.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosmosHyper {
    pub lambda1: f64,
    pub lambda2: f64,
    pub cosine_mode: CosineMode,
}

impl Default for CosmosHyper {
    fn default() -> Self {
        CosmosHyper {
            lambda1: 0.0,
            lambda2: 0.0,
            cosine_mode: CosineMode::Standard,
        }
    }
}

/// Per-term values of one combined-loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub cosine: f64,
    pub mahalanobis: f64,
    pub mutual_info: f64,
    pub regularizer: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(
        cosine: f64,
        mahalanobis: f64,
        mutual_info: f64,
        regularizer: f64,
        lambda1: f64,
        lambda2: f64,
    ) -> Self {
        let mut b = LossBreakdown {
            cosine,
            mahalanobis,
            mutual_info,
            regularizer,
            lambda1,
            lambda2,
            total: 0.0,
        };
        b.total = b.recompute_total();
        b
    }

    pub fn recompute_total(&self) -> f64 {
        -self.cosine + self.mahalanobis - self.lambda1 * self.mutual_info
            + self.lambda2 * self.regularizer
    }
}

/// Combined loss value plus the gradients the alternating steps consume.
#[derive(Debug, Clone)]
pub struct CosmosLoss {
    pub breakdown: LossBreakdown,
    /// d total / d xhat
    pub grad_reconstruction: Tensor,
    /// d total / d M
    pub grad_metric: Tensor,
    /// d total / d soft predictions
    pub grad_probs: Tensor,
}

fn check_same_shape(x: &Tensor, xhat: &Tensor, op: &'static str) -> Result<()> {
    if x.shape() != xhat.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x.shape(),
            rhs: xhat.shape(),
        });
    }
    Ok(())
}

/// Sum of squared entrywise differences, accumulated per sample.
pub fn euclidean_loss(x: &Tensor, xhat: &Tensor) -> Result<f64> {
    check_same_shape(x, xhat, "euclidean_loss")?;
    let mut total = 0.0;
    for r in 0..x.rows() {
        let mut acc = 0.0;
        for (a, b) in x.row(r).iter().zip(xhat.row(r)) {
            let d = a - b;
            acc += d * d;
        }
        total += acc;
    }
    Ok(total)
}

/// Euclidean loss with its gradient w.r.t. xhat: 2 (xhat - x).
pub fn euclidean_loss_grad(x: &Tensor, xhat: &Tensor) -> Result<(f64, Tensor)> {
    let value = euclidean_loss(x, xhat)?;
    let grad = xhat.sub(x)?.scale(2.0)?;
    Ok((value, grad))
}

fn row_norms(x: &Tensor, xhat: &Tensor, sample: usize) -> Result<(f64, f64, f64)> {
    let xr = x.row(sample);
    let hr = xhat.row(sample);
    let mut dot = 0.0;
    let mut nx2 = 0.0;
    let mut nh2 = 0.0;
    for (a, b) in xr.iter().zip(hr) {
        dot += a * b;
        nx2 += a * a;
        nh2 += b * b;
    }
    if nx2 == 0.0 || nh2 == 0.0 {
        return Err(Error::DegenerateVector { sample });
    }
    Ok((dot, nx2, nh2))
}

/// Per-sample cosine similarity between x and xhat, summed over the batch.
pub fn cosine_loss(x: &Tensor, xhat: &Tensor, mode: CosineMode) -> Result<f64> {
    check_same_shape(x, xhat, "cosine_loss")?;
    let mut total = 0.0;
    for r in 0..x.rows() {
        let (dot, nx2, nh2) = row_norms(x, xhat, r)?;
        total += match mode {
            CosineMode::Standard => dot / (nx2.sqrt() * nh2.sqrt()),
            CosineMode::SquaredNorm => dot / (nx2 * nh2),
        };
    }
    Ok(total)
}

/// Cosine loss with its gradient w.r.t. xhat.
pub fn cosine_loss_grad(x: &Tensor, xhat: &Tensor, mode: CosineMode) -> Result<(f64, Tensor)> {
    check_same_shape(x, xhat, "cosine_loss")?;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let (dot, nx2, nh2) = row_norms(x, xhat, r)?;
        let xr = x.row(r);
        let hr = xhat.row(r);
        let g = grad.row_mut(r);
        match mode {
            CosineMode::Standard => {
                let denom = nx2.sqrt() * nh2.sqrt();
                total += dot / denom;
                // d/dxhat [x.xhat / (|x||xhat|)] = x/denom - dot*xhat/(denom*|xhat|^2)
                let coef = dot / (denom * nh2);
                for ((gi, &xi), &hi) in g.iter_mut().zip(xr).zip(hr) {
                    *gi = xi / denom - coef * hi;
                }
            }
            CosineMode::SquaredNorm => {
                let denom = nx2 * nh2;
                total += dot / denom;
                // d/dxhat [x.xhat / (|x|^2 |xhat|^2)] = x/denom - 2*dot*xhat/(denom*|xhat|^2)
                let coef = 2.0 * dot / (denom * nh2);
                for ((gi, &xi), &hi) in g.iter_mut().zip(xr).zip(hr) {
                    *gi = xi / denom - coef * hi;
                }
            }
        }
    }
    grad.check_finite("cosine_loss_grad")?;
    Ok((total, grad))
}

/// Cosine loss where samples with a zero-norm side contribute nothing.
///
/// ReLU decoders can produce exactly-zero reconstruction rows, and image
/// patches can be entirely black; such samples carry no direction, so the
/// training loop drops them from the cosine term instead of failing. On the
/// ReLU-reachable parameter set this stays consistent with finite
/// differences: a dead sample is dead in a neighborhood.
pub fn cosine_loss_masked(x: &Tensor, xhat: &Tensor, mode: CosineMode) -> Result<f64> {
    check_same_shape(x, xhat, "cosine_loss")?;
    let mut total = 0.0;
    for r in 0..x.rows() {
        match row_norms(x, xhat, r) {
            Ok((dot, nx2, nh2)) => {
                total += match mode {
                    CosineMode::Standard => dot / (nx2.sqrt() * nh2.sqrt()),
                    CosineMode::SquaredNorm => dot / (nx2 * nh2),
                };
            }
            Err(Error::DegenerateVector { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(total)
}

/// Masked cosine loss with its gradient w.r.t. xhat; degenerate samples get
/// zero gradient rows.
pub fn cosine_loss_grad_masked(
    x: &Tensor,
    xhat: &Tensor,
    mode: CosineMode,
) -> Result<(f64, Tensor)> {
    check_same_shape(x, xhat, "cosine_loss")?;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let (dot, nx2, nh2) = match row_norms(x, xhat, r) {
            Ok(v) => v,
            Err(Error::DegenerateVector { .. }) => continue,
            Err(e) => return Err(e),
        };
        let xr = x.row(r);
        let hr = xhat.row(r);
        let g = grad.row_mut(r);
        match mode {
            CosineMode::Standard => {
                let denom = nx2.sqrt() * nh2.sqrt();
                total += dot / denom;
                let coef = dot / (denom * nh2);
                for ((gi, &xi), &hi) in g.iter_mut().zip(xr).zip(hr) {
                    *gi = xi / denom - coef * hi;
                }
            }
            CosineMode::SquaredNorm => {
                let denom = nx2 * nh2;
                total += dot / denom;
                let coef = 2.0 * dot / (denom * nh2);
                for ((gi, &xi), &hi) in g.iter_mut().zip(xr).zip(hr) {
                    *gi = xi / denom - coef * hi;
                }
            }
        }
    }
    grad.check_finite("cosine_loss_grad_masked")?;
    Ok((total, grad))
}

fn residual(x: &Tensor, xhat: &Tensor, metric: &PseudoMetric) -> Result<Tensor> {
    check_same_shape(x, xhat, "mahalanobis_loss")?;
    let m = metric.tensor();
    if m.rows() != x.cols() {
        return Err(Error::ShapeMismatch {
            op: "mahalanobis_loss(metric)",
            lhs: m.shape(),
            rhs: (x.cols(), x.cols()),
        });
    }
    x.sub(xhat)
}

fn rowwise_dot_sum(a: &Tensor, b: &Tensor) -> f64 {
    let mut total = 0.0;
    for r in 0..a.rows() {
        let mut acc = 0.0;
        for (x, y) in a.row(r).iter().zip(b.row(r)) {
            acc += x * y;
        }
        total += acc;
    }
    total
}

/// Squared pseudo-Mahalanobis distance d^T M d per sample, summed over the
/// batch, with d = x - xhat. Evaluated batchwise as sum(D (D M)^T) rows.
pub fn mahalanobis_loss(x: &Tensor, xhat: &Tensor, metric: &PseudoMetric) -> Result<f64> {
    let d = residual(x, xhat, metric)?;
    let q = d.matmul(metric.tensor())?;
    let total = rowwise_dot_sum(&d, &q);
    if !total.is_finite() {
        return Err(Error::NonFinite("mahalanobis_loss"));
    }
    Ok(total)
}

/// Mahalanobis loss with gradients w.r.t. xhat (-(M + M^T) d per sample) and
/// w.r.t. M (sum of d d^T over samples, unconstrained): three batch matrix
/// products instead of per-sample loops.
pub fn mahalanobis_loss_grad(
    x: &Tensor,
    xhat: &Tensor,
    metric: &PseudoMetric,
) -> Result<(f64, Tensor, Tensor)> {
    let (value, grad_xhat) = mahalanobis_loss_grad_xhat(x, xhat, metric)?;
    let grad_m = mahalanobis_metric_grad(x, xhat)?;
    Ok((value, grad_xhat, grad_m))
}

/// Value and reconstruction gradient only; what the weight step consumes
/// while the metric is frozen.
pub fn mahalanobis_loss_grad_xhat(
    x: &Tensor,
    xhat: &Tensor,
    metric: &PseudoMetric,
) -> Result<(f64, Tensor)> {
    let d = residual(x, xhat, metric)?;
    let q = d.matmul(metric.tensor())?; // D M
    let value = rowwise_dot_sum(&d, &q);
    if !value.is_finite() {
        return Err(Error::NonFinite("mahalanobis_loss"));
    }
    let qt = d.matmul_nt(metric.tensor())?; // D M^T
    let grad_xhat = q.add(&qt)?.scale(-1.0)?;
    grad_xhat.check_finite("mahalanobis_loss_grad(xhat)")?;
    Ok((value, grad_xhat))
}

/// Gradient w.r.t. M alone: sum of d d^T = D^T D. Independent of M itself,
/// which is what makes the metric step one matrix product.
pub fn mahalanobis_metric_grad(x: &Tensor, xhat: &Tensor) -> Result<Tensor> {
    check_same_shape(x, xhat, "mahalanobis_metric_grad")?;
    let d = x.sub(xhat)?;
    let grad_m = d.matmul_tn(&d)?;
    grad_m.check_finite("mahalanobis_loss_grad(M)")?;
    Ok(grad_m)
}

fn validate_labels(n_rows: usize, n_classes: usize, labels: &[usize]) -> Result<()> {
    if n_rows == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != n_rows {
        return Err(Error::Invalid(format!(
            "got {} labels for {} prediction rows",
            labels.len(),
            n_rows
        )));
    }
    for &l in labels {
        if l >= n_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: n_classes,
            });
        }
    }
    Ok(())
}

struct JointTable {
    n: usize,
    classes: usize,
    joint: Vec<f64>,    // p(pred j, true k), row-major j*classes + k
    pred_marg: Vec<f64>,
    true_marg: Vec<f64>,
}

fn soft_joint(probs: &Tensor, labels: &[usize]) -> Result<JointTable> {
    let classes = probs.cols();
    validate_labels(probs.rows(), classes, labels)?;
    let n = probs.rows();
    let mut joint = vec![0.0; classes * classes];
    for (r, &label) in labels.iter().enumerate() {
        for (j, &p) in probs.row(r).iter().enumerate() {
            joint[j * classes + label] += p;
        }
    }
    let inv_n = 1.0 / n as f64;
    for v in &mut joint {
        *v *= inv_n;
    }
    let mut pred_marg = vec![0.0; classes];
    let mut true_marg = vec![0.0; classes];
    for j in 0..classes {
        for k in 0..classes {
            let p = joint[j * classes + k];
            pred_marg[j] += p;
            true_marg[k] += p;
        }
    }
    Ok(JointTable {
        n,
        classes,
        joint,
        pred_marg,
        true_marg,
    })
}

/// Mutual information of the soft joint distribution between predicted and
/// true labels, in nats. Accepts any nonnegative score matrix; rows need not
/// be normalized, which keeps the estimator probeable by finite differences.
pub fn soft_mutual_information(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    let t = soft_joint(probs, labels)?;
    let mut mi = 0.0;
    for j in 0..t.classes {
        for k in 0..t.classes {
            let p = t.joint[j * t.classes + k];
            if p == 0.0 {
                continue;
            }
            mi += p * ((p + MI_EPS).ln() - (t.pred_marg[j] + MI_EPS).ln() - (t.true_marg[k] + MI_EPS).ln());
        }
    }
    Ok(mi)
}

/// Soft MI with its gradient w.r.t. the prediction matrix.
pub fn soft_mutual_information_grad(probs: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let t = soft_joint(probs, labels)?;
    let mut mi = 0.0;
    for j in 0..t.classes {
        for k in 0..t.classes {
            let p = t.joint[j * t.classes + k];
            if p == 0.0 {
                continue;
            }
            mi += p * ((p + MI_EPS).ln() - (t.pred_marg[j] + MI_EPS).ln() - (t.true_marg[k] + MI_EPS).ln());
        }
    }
    // d mi / d p(j,k), including the marginal terms
    let mut dj = vec![0.0; t.classes * t.classes];
    for j in 0..t.classes {
        let pj = t.pred_marg[j];
        for k in 0..t.classes {
            let pk = t.true_marg[k];
            let p = t.joint[j * t.classes + k];
            dj[j * t.classes + k] = (p + MI_EPS).ln() + p / (p + MI_EPS)
                - (pj + MI_EPS).ln()
                - pj / (pj + MI_EPS)
                - (pk + MI_EPS).ln()
                - pk / (pk + MI_EPS);
        }
    }
    let inv_n = 1.0 / t.n as f64;
    let mut grad = Tensor::zeros(t.n, t.classes);
    for (r, &label) in labels.iter().enumerate() {
        let g = grad.row_mut(r);
        for (j, gi) in g.iter_mut().enumerate() {
            *gi = inv_n * dj[j * t.classes + label];
        }
    }
    grad.check_finite("soft_mutual_information_grad")?;
    Ok((mi, grad))
}

/// Typed wrapper over [`soft_mutual_information`] for validated predictions.
pub fn mutual_information(probs: &SoftPrediction, labels: &[usize]) -> Result<f64> {
    soft_mutual_information(probs.tensor(), labels)
}

pub fn mutual_information_grad(
    probs: &SoftPrediction,
    labels: &[usize],
) -> Result<(f64, Tensor)> {
    soft_mutual_information_grad(probs.tensor(), labels)
}

/// Full combined objective with every gradient the alternating steps need.
///
/// `regularizer` is the precomputed value of R (the squared norm of whatever
/// parameter set the caller regularizes); its gradient lives with those
/// parameters, not here.
pub fn supervised_cosmos_loss(
    x: &Tensor,
    xhat: &Tensor,
    metric: &PseudoMetric,
    probs: &SoftPrediction,
    labels: &[usize],
    hyper: &CosmosHyper,
    regularizer: f64,
) -> Result<CosmosLoss> {
    let (cos, grad_cos) = cosine_loss_grad(x, xhat, hyper.cosine_mode)?;
    let (mah, grad_mah_xhat, grad_mah_m) = mahalanobis_loss_grad(x, xhat, metric)?;
    let (mi, grad_mi) = soft_mutual_information_grad(probs.tensor(), labels)?;
    let breakdown = LossBreakdown::new(cos, mah, mi, regularizer, hyper.lambda1, hyper.lambda2);
    let grad_reconstruction = grad_mah_xhat.sub(&grad_cos)?;
    let grad_probs = grad_mi.scale(-hyper.lambda1)?;
    Ok(CosmosLoss {
        breakdown,
        grad_reconstruction,
        grad_metric: grad_mah_m,
        grad_probs,
    })
}
