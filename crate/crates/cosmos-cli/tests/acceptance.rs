//! Acceptance suite: one test per criterion, each printing a PASS line.
//!
//! Criteria 4-6 train desk-scale pipelines on the image corpus from
//! `common` (real MNIST IDX files when available, the rendered digit corpus
//! otherwise) and share one set of trained runs through a OnceLock.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use cosmos_core::data::{self, DataBatch};
use cosmos_core::gradcheck::{finite_diff_grad, max_relative_error};
use cosmos_core::losses::{
    cosine_loss, cosine_loss_grad, euclidean_loss, mahalanobis_loss, mahalanobis_loss_grad,
    soft_mutual_information, soft_mutual_information_grad, CosineMode, PseudoMetric,
    SoftPrediction,
};
use cosmos_core::model::CosmosModel;
use cosmos_core::pipeline::{
    train_pipeline, PatchSpec, PipelineConfig, StreamEnsemble,
};
use cosmos_core::rng::Rng;
use cosmos_core::tensor::Tensor;
use cosmos_core::training::{Hyperparams, LossToggles, OptimizerBundle};

use cosmos_cli::ablate::{parse_cell, AblationCell, AblationTable};
use cosmos_cli::commands::cmd_train;
use cosmos_cli::RunConfig;

fn random_tensor(rows: usize, cols: usize, rng: &mut Rng, offset: f64) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.next_f64() + offset).collect(),
    )
    .unwrap()
}

fn random_probs(rows: usize, classes: usize, rng: &mut Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * classes);
    for _ in 0..rows {
        let mut row: Vec<f64> = (0..classes).map(|_| rng.next_f64() + 0.05).collect();
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        data.extend(row);
    }
    Tensor::new(rows, classes, data).unwrap()
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_suite() {
    let started = Instant::now();
    let h = 1e-5;
    let tol = 1e-4;
    let floor = 1e-7;
    let mut rng = Rng::new(0xacce97a);

    for case in 0..100 {
        let dim = 3 + (case % 6);
        let n = 1 + (case % 3);
        let x = random_tensor(n, dim, &mut rng, 0.15);
        let xhat = random_tensor(n, dim, &mut rng, 0.15);

        for mode in [CosineMode::Standard, CosineMode::SquaredNorm] {
            let (_, grad) = cosine_loss_grad(&x, &xhat, mode).unwrap();
            let fd = finite_diff_grad(|t| cosine_loss(&x, t, mode).unwrap(), &xhat, h).unwrap();
            let err = max_relative_error(&grad, &fd, floor);
            assert!(err < tol, "cosine {mode:?} case {case}: err {err}");
        }

        let metric = PseudoMetric::new(random_tensor(dim, dim, &mut rng, -0.5)).unwrap();
        let (_, gx, gm) = mahalanobis_loss_grad(&x, &xhat, &metric).unwrap();
        let fd_x =
            finite_diff_grad(|t| mahalanobis_loss(&x, t, &metric).unwrap(), &xhat, h).unwrap();
        assert!(
            max_relative_error(&gx, &fd_x, floor) < tol,
            "mahalanobis xhat case {case}"
        );
        let fd_m = finite_diff_grad(
            |t| mahalanobis_loss(&x, &xhat, &PseudoMetric::new(t.clone()).unwrap()).unwrap(),
            metric.tensor(),
            h,
        )
        .unwrap();
        assert!(
            max_relative_error(&gm, &fd_m, floor) < tol,
            "mahalanobis metric case {case}"
        );

        let classes = 3 + (case % 4);
        let probs = random_probs(n.max(2) * 2, classes, &mut rng);
        let labels: Vec<usize> = (0..probs.rows()).map(|_| rng.next_below(classes)).collect();
        let (_, gp) = soft_mutual_information_grad(&probs, &labels).unwrap();
        let fd_p = finite_diff_grad(
            |t| soft_mutual_information(t, &labels).unwrap(),
            &probs,
            h,
        )
        .unwrap();
        assert!(
            max_relative_error(&gp, &fd_p, floor) < tol,
            "mutual information case {case}"
        );

        // composed objective: -cos + mah - l1*mi (+ l2*R, constant here)
        let lambda1 = 0.3 + 0.4 * rng.next_f64();
        let mi_probs = random_probs(n, dim.min(classes), &mut rng);
        let mi_labels: Vec<usize> =
            (0..n).map(|_| rng.next_below(mi_probs.cols())).collect();
        let total = |xh: &Tensor, mt: &Tensor, pb: &Tensor| -> f64 {
            -cosine_loss(&x, xh, CosineMode::Standard).unwrap()
                + mahalanobis_loss(&x, xh, &PseudoMetric::new(mt.clone()).unwrap()).unwrap()
                - lambda1 * soft_mutual_information(pb, &mi_labels).unwrap()
        };
        let loss = cosmos_core::losses::supervised_cosmos_loss(
            &x,
            &xhat,
            &metric,
            &SoftPrediction::new(mi_probs.clone()).unwrap(),
            &mi_labels,
            &cosmos_core::losses::CosmosHyper {
                lambda1,
                lambda2: 0.0,
                cosine_mode: CosineMode::Standard,
            },
            0.0,
        )
        .unwrap();
        let fd_xhat =
            finite_diff_grad(|t| total(t, metric.tensor(), &mi_probs), &xhat, h).unwrap();
        assert!(
            max_relative_error(&loss.grad_reconstruction, &fd_xhat, floor) < tol,
            "composed xhat case {case}"
        );
        let fd_metric =
            finite_diff_grad(|t| total(&xhat, t, &mi_probs), metric.tensor(), h).unwrap();
        assert!(
            max_relative_error(&loss.grad_metric, &fd_metric, floor) < tol,
            "composed metric case {case}"
        );
        let fd_probs =
            finite_diff_grad(|t| total(&xhat, metric.tensor(), t), &mi_probs, h).unwrap();
        assert!(
            max_relative_error(&loss.grad_probs, &fd_probs, floor) < tol,
            "composed probs case {case}"
        );
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "gradient suite took {elapsed:?}, budget is one minute"
    );
    println!("criterion 1 (gradient suite, 100 instances/loss): PASS in {elapsed:?}");
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_2_oracle_identities() {
    let mut rng = Rng::new(0x0c0de2);

    for _ in 0..1000 {
        let dim = 3 + rng.next_below(6);
        let x = random_tensor(2, dim, &mut rng, -0.5);
        let xhat = random_tensor(2, dim, &mut rng, -0.5);
        let mah = mahalanobis_loss(&x, &xhat, &PseudoMetric::identity(dim)).unwrap();
        let euc = euclidean_loss(&x, &xhat).unwrap();
        assert!((mah - euc).abs() <= 1e-12, "identity metric: {mah} vs {euc}");

        let alpha = 0.01 + 99.0 * rng.next_f64();
        let a = cosine_loss(&x, &xhat, CosineMode::Standard).unwrap();
        let b = cosine_loss(&x, &xhat.scale(alpha).unwrap(), CosineMode::Standard).unwrap();
        assert!((a - b).abs() <= 1e-12, "scale invariance: {a} vs {b}");
    }

    // MI bounds on random batches
    for _ in 0..200 {
        let classes = 2 + rng.next_below(4);
        let probs = random_probs(8, classes, &mut rng);
        let labels: Vec<usize> = (0..8).map(|_| rng.next_below(classes)).collect();
        let mi = soft_mutual_information(&probs, &labels).unwrap();
        assert!(mi >= -1e-9, "mi {mi} below zero");
        assert!(mi <= (classes as f64).ln() + 1e-9, "mi {mi} above ln C");
    }

    // perfect balanced two-class batch: ln 2
    let perfect = Tensor::new(4, 2, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    let mi = soft_mutual_information(&perfect, &[0, 0, 1, 1]).unwrap();
    assert!((mi - std::f64::consts::LN_2).abs() <= 1e-6, "perfect mi {mi}");

    // independent predictions: 0
    let marginal = Tensor::new(4, 2, vec![0.7, 0.3, 0.7, 0.3, 0.7, 0.3, 0.7, 0.3]).unwrap();
    let mi = soft_mutual_information(&marginal, &[0, 1, 0, 1]).unwrap();
    assert!(mi.abs() <= 1e-6, "independent mi {mi}");

    println!("criterion 2 (oracle identities, 1000 pairs): PASS");
}

// ---------------------------------------------------------------- criterion 3

/// Plain tied-weight Euclidean autoencoder, written independently with flat
/// vectors: the trajectory oracle for the reduced configuration.
struct PlainAe {
    w0: Vec<f64>, // d0 x d1 row-major
    b0: Vec<f64>,
    w1: Vec<f64>, // d1 x d2
    b1: Vec<f64>,
    d0: usize,
    d1: usize,
    d2: usize,
    adam: Vec<AdamLane>,
}

struct AdamLane {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamLane {
    fn new(len: usize) -> Self {
        AdamLane {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(&mut self, param: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - 0.9f64.powi(self.t);
        let bc2 = 1.0 - 0.999f64.powi(self.t);
        for i in 0..param.len() {
            let g = grad[i];
            self.m[i] = 0.9 * self.m[i] + 0.1 * g;
            self.v[i] = 0.999 * self.v[i] + 0.001 * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        }
    }
}

impl PlainAe {
    fn from_model(model: &CosmosModel) -> Self {
        let dims = model.layer_dims();
        PlainAe {
            w0: model.weights()[0].data().to_vec(),
            b0: model.biases()[0].data().to_vec(),
            w1: model.weights()[1].data().to_vec(),
            b1: model.biases()[1].data().to_vec(),
            d0: dims[0],
            d1: dims[1],
            d2: dims[2],
            adam: vec![
                AdamLane::new(dims[0] * dims[1]),
                AdamLane::new(dims[1]),
                AdamLane::new(dims[1] * dims[2]),
                AdamLane::new(dims[2]),
            ],
        }
    }

    fn forward(&self, x: &[f64], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let (d0, d1, d2) = (self.d0, self.d1, self.d2);
        let mut z1 = vec![0.0; n * d1];
        for r in 0..n {
            for k in 0..d0 {
                let a = x[r * d0 + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d1 {
                    z1[r * d1 + j] += a * self.w0[k * d1 + j];
                }
            }
            for j in 0..d1 {
                z1[r * d1 + j] += self.b0[j];
            }
        }
        let h1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let mut z2 = vec![0.0; n * d2];
        for r in 0..n {
            for k in 0..d1 {
                let a = h1[r * d1 + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d2 {
                    z2[r * d2 + j] += a * self.w1[k * d2 + j];
                }
            }
            for j in 0..d2 {
                z2[r * d2 + j] += self.b1[j];
            }
        }
        let code: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();
        // decoder: u1 = relu(code W1^T), recon = u1 W0^T
        let mut du1 = vec![0.0; n * d1];
        for r in 0..n {
            for j in 0..d1 {
                let mut acc = 0.0;
                for k in 0..d2 {
                    acc += code[r * d2 + k] * self.w1[j * d2 + k];
                }
                du1[r * d1 + j] = acc;
            }
        }
        let u1: Vec<f64> = du1.iter().map(|&v| v.max(0.0)).collect();
        let mut recon = vec![0.0; n * d0];
        for r in 0..n {
            for j in 0..d0 {
                let mut acc = 0.0;
                for k in 0..d1 {
                    acc += u1[r * d1 + k] * self.w0[j * d1 + k];
                }
                recon[r * d0 + j] = acc;
            }
        }
        (z1, z2, du1, u1, recon)
    }

    fn loss(&self, x: &[f64], n: usize) -> f64 {
        let (_, _, _, _, recon) = self.forward(x, n);
        let mut total = 0.0;
        for r in 0..n {
            let mut acc = 0.0;
            for j in 0..self.d0 {
                let d = x[r * self.d0 + j] - recon[r * self.d0 + j];
                acc += d * d;
            }
            total += acc;
        }
        total
    }

    /// One full-batch epoch: gradient of sum of squared errors, Adam update.
    fn train_epoch(&mut self, x: &[f64], n: usize, lr: f64) {
        let (d0, d1, d2) = (self.d0, self.d1, self.d2);
        let (z1, z2, du1, u1, recon) = self.forward(x, n);
        let h1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();
        let code: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();

        // dL/drecon = 2 (recon - x)
        let drecon: Vec<f64> = recon
            .iter()
            .zip(x)
            .map(|(r, xv)| 2.0 * (r - xv))
            .collect();

        let mut gw0 = vec![0.0; d0 * d1];
        let mut gb0 = vec![0.0; d1];
        let mut gw1 = vec![0.0; d1 * d2];
        let mut gb1 = vec![0.0; d2];

        // decoder: recon = u1 W0^T -> gW0 += drecon^T u1 (into d0 x d1)
        for r in 0..n {
            for j in 0..d0 {
                let g = drecon[r * d0 + j];
                if g == 0.0 {
                    continue;
                }
                for k in 0..d1 {
                    gw0[j * d1 + k] += g * u1[r * d1 + k];
                }
            }
        }
        // du1 = drecon W0, masked by relu'(du1-pre)
        let mut d_u1 = vec![0.0; n * d1];
        for r in 0..n {
            for k in 0..d1 {
                let mut acc = 0.0;
                for j in 0..d0 {
                    acc += drecon[r * d0 + j] * self.w0[j * d1 + k];
                }
                d_u1[r * d1 + k] = if du1[r * d1 + k] > 0.0 { acc } else { 0.0 };
            }
        }
        // u1 = relu(code W1^T): gW1 += d_u1^T code (into d1 x d2)
        for r in 0..n {
            for j in 0..d1 {
                let g = d_u1[r * d1 + j];
                if g == 0.0 {
                    continue;
                }
                for k in 0..d2 {
                    gw1[j * d2 + k] += g * code[r * d2 + k];
                }
            }
        }
        // dcode = d_u1 W1
        let mut dcode = vec![0.0; n * d2];
        for r in 0..n {
            for k in 0..d2 {
                let mut acc = 0.0;
                for j in 0..d1 {
                    acc += d_u1[r * d1 + j] * self.w1[j * d2 + k];
                }
                dcode[r * d2 + k] = acc;
            }
        }
        // encoder layer 2: code = relu(h1 W1 + b1)
        let mut dz2 = vec![0.0; n * d2];
        for i in 0..n * d2 {
            dz2[i] = if z2[i] > 0.0 { dcode[i] } else { 0.0 };
        }
        for r in 0..n {
            for k in 0..d1 {
                let a = h1[r * d1 + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d2 {
                    gw1[k * d2 + j] += a * dz2[r * d2 + j];
                }
            }
        }
        for r in 0..n {
            for j in 0..d2 {
                gb1[j] += dz2[r * d2 + j];
            }
        }
        // dh1 = dz2 W1^T
        let mut dh1 = vec![0.0; n * d1];
        for r in 0..n {
            for k in 0..d1 {
                let mut acc = 0.0;
                for j in 0..d2 {
                    acc += dz2[r * d2 + j] * self.w1[k * d2 + j];
                }
                dh1[r * d1 + k] = acc;
            }
        }
        // encoder layer 1: h1 = relu(x W0 + b0)
        let mut dz1 = vec![0.0; n * d1];
        for i in 0..n * d1 {
            dz1[i] = if z1[i] > 0.0 { dh1[i] } else { 0.0 };
        }
        for r in 0..n {
            for k in 0..d0 {
                let a = x[r * d0 + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d1 {
                    gw0[k * d1 + j] += a * dz1[r * d1 + j];
                }
            }
        }
        for r in 0..n {
            for j in 0..d1 {
                gb0[j] += dz1[r * d1 + j];
            }
        }

        self.adam[0].step(&mut self.w0, &gw0, lr);
        self.adam[1].step(&mut self.b0, &gb0, lr);
        self.adam[2].step(&mut self.w1, &gw1, lr);
        self.adam[3].step(&mut self.b1, &gb1, lr);
    }
}

#[test]
fn criterion_3_euclidean_reduction() {
    let dims = [8usize, 6, 4];
    let seed = 0x3dc3;
    let data = data::synth_gaussian_classes(100, 8, 2, 2.0, seed).unwrap();
    assert_eq!(data.len(), 200);

    let hyper = Hyperparams {
        lambda1: 0.0,
        lambda2: 0.0,
        lr_w: 1e-3,
        batch_size: 200,
        max_iters: 20,
        dropout_rate: 0.0,
        seed,
        toggles: LossToggles::euclidean_only(),
        ..Hyperparams::default()
    };
    let mut model = CosmosModel::new(&dims, 2, 0.0, seed).unwrap();
    assert_eq!(model.metric().tensor(), &Tensor::identity(8));
    let mut oracle = PlainAe::from_model(&model);
    let mut opt = OptimizerBundle::new(&model, &hyper).unwrap();

    let mut worst: f64 = 0.0;
    for epoch in 0..20 {
        let breakdown =
            cosmos_core::training::alt_min_epoch(&mut model, &mut opt, &data, &hyper, epoch)
                .unwrap();
        oracle.train_epoch(data.x.data(), data.len(), 1e-3);
        let oracle_loss = oracle.loss(data.x.data(), data.len());
        let diff = (breakdown.total - oracle_loss).abs();
        worst = worst.max(diff);
        assert!(
            diff <= 1e-9,
            "epoch {epoch}: impl {} vs oracle {oracle_loss}, diff {diff}",
            breakdown.total
        );
    }
    // M was never touched
    assert_eq!(model.metric().tensor(), &Tensor::identity(8));
    println!("criterion 3 (euclidean reduction, 20 epochs): PASS, worst diff {worst:.3e}");
}

// ----------------------------------------------------- criteria 4 and 6 fixture

struct DeskRuns {
    source: &'static str,
    cosmos_acc: Vec<f64>,
    euclid_acc: Vec<f64>,
    whole_only_acc: Vec<f64>,
    cpu_minutes: f64,
}

static DESK: OnceLock<DeskRuns> = OnceLock::new();

fn desk_hyper(seed: u64, toggles: LossToggles) -> Hyperparams {
    Hyperparams {
        lambda1: 0.05,
        lambda2: 1e-5,
        lr_w: 1e-3,
        lr_m: 1e-4,
        lr_omega: 1e-2,
        dropout_rate: 0.0,
        max_iters: 10,
        batch_size: 128,
        convergence_tol: 1e-6,
        lambda_decay: 0.0,
        cosine_mode: CosineMode::Standard,
        seed,
        toggles,
        patience: 10,
        metric_cap: 1e3,
    }
}

fn desk_config(seed: u64, toggles: LossToggles) -> PipelineConfig {
    PipelineConfig {
        patch_arch: vec![196, 150, 100, 100, 50],
        whole_arch: Some(vec![784, 150, 100, 100, 50]),
        tessellate: true,
        include_whole: true,
        n_classes: 10,
        use_skips: true,
        hyper: desk_hyper(seed, toggles),
        classifier_epochs: 30,
        classifier_lr: 1e-2,
        classifier_batch: 128,
    }
}

fn desk_runs() -> &'static DeskRuns {
    DESK.get_or_init(|| {
        let cpu_before = common::cpu_minutes();
        let (train_pool, test, source) = common::image_corpus(2000, 1000, 41);
        let spec = PatchSpec::new((28, 28, 1), (14, 14)).unwrap();
        let (train, val, _) = data::split(&train_pool, &[0.9, 0.1], 17).unwrap();
        let val = val.unwrap();

        let mut cosmos_acc = Vec::new();
        let mut euclid_acc = Vec::new();
        let mut whole_only_acc = Vec::new();
        for seed in 0..3u64 {
            let cosmos_cfg = desk_config(seed, LossToggles::cosmos());
            let (ensemble, _) =
                train_pipeline(&train, &val, Some(&spec), &cosmos_cfg).unwrap();
            cosmos_acc.push(ensemble.accuracy(&test).unwrap());
            whole_only_acc.push(whole_only_accuracy(&ensemble, &test));

            let euclid_cfg = desk_config(seed, LossToggles::euclidean_only());
            let (ensemble, _) =
                train_pipeline(&train, &val, Some(&spec), &euclid_cfg).unwrap();
            euclid_acc.push(ensemble.accuracy(&test).unwrap());
        }
        DeskRuns {
            source,
            cosmos_acc,
            euclid_acc,
            whole_only_acc,
            cpu_minutes: common::cpu_minutes() - cpu_before,
        }
    })
}

fn whole_only_accuracy(ensemble: &StreamEnsemble, test: &DataBatch) -> f64 {
    let whole = ensemble.whole_model().expect("10-stream ensemble").clone();
    let clf = ensemble.classifiers()[ensemble.patch_models().len()].clone();
    let solo = StreamEnsemble::from_parts(None, vec![], Some(whole), vec![clf], vec![1.0])
        .unwrap();
    solo.accuracy(test).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn criterion_4_desk_scale_pipeline() {
    let runs = desk_runs();
    let cosmos_mean = mean(&runs.cosmos_acc);
    let euclid_mean = mean(&runs.euclid_acc);
    assert!(
        cosmos_mean >= 0.90,
        "[{}] mean accuracy {cosmos_mean:.4} below 0.90 (per seed {:?})",
        runs.source,
        runs.cosmos_acc
    );
    assert!(
        cosmos_mean > euclid_mean,
        "[{}] supervised COSMOS {cosmos_mean:.4} does not beat euclidean {euclid_mean:.4}",
        runs.source
    );
    assert!(
        runs.cpu_minutes < 30.0,
        "desk-scale runs took {:.1} CPU-minutes, budget 30",
        runs.cpu_minutes
    );
    println!(
        "criterion 4 (desk-scale pipeline on {}): PASS, cosmos {:.4} vs euclidean {:.4}, {:.1} cpu-min",
        runs.source, cosmos_mean, euclid_mean, runs.cpu_minutes
    );
}

#[test]
fn criterion_6_tessellation_effect() {
    let runs = desk_runs();
    let fused = mean(&runs.cosmos_acc);
    let whole = mean(&runs.whole_only_acc);
    assert!(
        fused >= whole,
        "[{}] fused {fused:.4} below whole-only {whole:.4}",
        runs.source
    );
    println!(
        "criterion 6 (tessellation effect on {}): PASS, fused {:.4} vs whole-only {:.4}",
        runs.source, fused, whole
    );
}

// ---------------------------------------------------------------- criterion 5

const NINE_CELLS: [&str; 9] = [
    "euclidean",
    "cosine",
    "mahalanobis",
    "euclidean+mi",
    "cosine+mi",
    "mahalanobis+mi",
    "euclidean+cosine",
    "euclidean+mahalanobis",
    "cosine+mahalanobis",
];

fn run_cells(
    train: &DataBatch,
    val: &DataBatch,
    test: &DataBatch,
    arch: Vec<usize>,
    hyper: Hyperparams,
    classifier_epochs: usize,
    seeds: u64,
) -> AblationTable {
    use rayon::prelude::*;
    let base_seed = hyper.seed;
    let jobs: Vec<(usize, u64)> = (0..NINE_CELLS.len())
        .flat_map(|c| (0..seeds).map(move |s| (c, s)))
        .collect();
    let accs: Vec<Option<f64>> = jobs
        .par_iter()
        .map(|&(c, s)| {
            let mut hyper = hyper.clone();
            hyper.seed = base_seed + s;
            hyper.toggles = parse_cell(NINE_CELLS[c]).unwrap();
            let config = PipelineConfig {
                patch_arch: arch.clone(),
                whole_arch: Some(arch.clone()),
                tessellate: false,
                include_whole: true,
                n_classes: train.class_count,
                use_skips: true,
                hyper,
                classifier_epochs,
                classifier_lr: 1e-2,
                classifier_batch: 64,
            };
            train_pipeline(train, val, None, &config)
                .and_then(|(e, _)| e.accuracy(test))
                .ok()
        })
        .collect();
    let cells = NINE_CELLS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let per_seed: Vec<Option<f64>> =
                (0..seeds as usize).map(|s| accs[c * seeds as usize + s]).collect();
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let (m, sd) = if ok.len() == per_seed.len() {
                let m = mean(&ok);
                let var = ok.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / ok.len() as f64;
                (Some(m), Some(var.sqrt()))
            } else {
                (None, None)
            };
            AblationCell {
                name: name.to_string(),
                per_seed,
                mean: m,
                std: sd,
            }
        })
        .collect();
    AblationTable {
        cells,
        seeds: seeds as usize,
    }
}

/// COSMOS >= each single metric; each +MI >= its unsupervised counterpart;
/// at most one inversion of <= 0.5 accuracy points.
fn check_ordering(table: &AblationTable, dataset: &str) {
    let get = |name: &str| -> f64 {
        table
            .get(name)
            .and_then(|c| c.mean)
            .unwrap_or_else(|| panic!("cell {name} failed on {dataset}"))
    };
    let comparisons = [
        ("cosine+mahalanobis", "euclidean"),
        ("cosine+mahalanobis", "cosine"),
        ("cosine+mahalanobis", "mahalanobis"),
        ("euclidean+mi", "euclidean"),
        ("cosine+mi", "cosine"),
        ("mahalanobis+mi", "mahalanobis"),
    ];
    let mut inversions = Vec::new();
    for (hi, lo) in comparisons {
        let gap = get(hi) - get(lo);
        if gap < 0.0 {
            inversions.push((hi, lo, -gap * 100.0));
        }
    }
    assert!(
        inversions.len() <= 1,
        "{dataset}: {} inversions {:?}\n{}",
        inversions.len(),
        inversions,
        table.human_table()
    );
    if let Some((hi, lo, points)) = inversions.first() {
        assert!(
            *points <= 0.5,
            "{dataset}: inversion {hi} < {lo} by {points:.2} points\n{}",
            table.human_table()
        );
    }
}

#[test]
fn criterion_5_ablation_ordering() {
    // synthetic gaussian table
    let all = data::synth_gaussian_classes(150, 24, 3, 5.0, 0x5ab1e).unwrap();
    let (train, val, test) = data::split(&all, &[0.6, 0.2, 0.2], 3).unwrap();
    let (val, test) = (val.unwrap(), test.unwrap());
    let hyper = Hyperparams {
        lambda1: 0.5,
        lambda2: 0.0,
        lr_w: 1e-3,
        lr_omega: 1e-2,
        max_iters: 20,
        batch_size: 64,
        seed: 100,
        ..Hyperparams::default()
    };
    let gauss_table = run_cells(&train, &val, &test, vec![24, 20, 16], hyper, 60, 3);
    println!("--- gaussian ablation ---\n{}", gauss_table.human_table());
    check_ordering(&gauss_table, "synthetic-gaussian");

    // image-subset table
    let (train_pool, test, source) = common::image_corpus(700, 300, 0xab1a7e);
    let (train, val, _) = data::split(&train_pool, &[0.85, 0.15], 5).unwrap();
    let val = val.unwrap();
    let hyper = Hyperparams {
        lambda1: 0.1,
        lambda2: 0.0,
        lr_w: 1e-3,
        lr_m: 1e-6,
        lr_omega: 1e-2,
        max_iters: 18,
        batch_size: 64,
        seed: 200,
        ..Hyperparams::default()
    };
    let image_table = run_cells(&train, &val, &test, vec![784, 96, 48], hyper, 60, 3);
    println!("--- {source} ablation ---\n{}", image_table.human_table());
    check_ordering(&image_table, source);

    println!("criterion 5 (ablation ordering on synthetic-gaussian and {source}): PASS");
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_parser_fidelity() {
    // IDX fixture: 16-byte header + 4 pixels
    let images = vec![
        0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 128, 255, 0,
    ];
    let labels = vec![0, 0, 8, 1, 0, 0, 0, 1, 7];
    let batch = data::parse_idx(&images, &labels).unwrap();
    assert_eq!(batch.len(), 1);
    assert_eq!(batch.y, vec![7]);
    assert_eq!(
        batch.x.data(),
        &[0.0, 128.0 / 255.0, 1.0, 0.0],
        "hand-computed pixel tensor"
    );
    let (im2, lb2) = data::idx_bytes(&batch, 2, 2).unwrap();
    assert_eq!(im2, images);
    assert_eq!(lb2, labels);

    // bad magic on the images argument
    let mut bad = images.clone();
    bad[3] = 1;
    assert!(data::parse_idx(&bad, &labels).is_err());

    // CIFAR record with label 7 and a recognizable ramp
    let mut record = vec![7u8];
    for c in 0..3u32 {
        for p in 0..1024u32 {
            record.push(((c * 37 + p) % 251) as u8);
        }
    }
    let batch = data::parse_cifar10(&[record.clone()]).unwrap();
    assert_eq!(batch.len(), 1);
    assert_eq!(batch.y, vec![7]);
    // hand-computed interleave: feature (p, c) = planar byte c*1024 + p
    for p in [0usize, 100, 1023] {
        for c in 0..3 {
            let expected = record[1 + c * 1024 + p] as f64 / 255.0;
            assert_eq!(batch.x.get(0, p * 3 + c), expected);
        }
    }
    assert_eq!(data::cifar10_bytes(&batch).unwrap(), record);

    // 10-record file length arithmetic
    let mut buf = Vec::new();
    for i in 0..10u8 {
        let mut r = record.clone();
        r[0] = i;
        buf.extend(r);
    }
    assert_eq!(buf.len(), 30_730);
    assert_eq!(data::parse_cifar10(&[buf]).unwrap().len(), 10);

    println!("criterion 7 (parser fidelity): PASS");
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_persistence() {
    let config = RunConfig::parse(
        "
[dataset]
kind = synthetic
n_per_class = 40
dim = 16
classes = 2
separation = 3.0

[model]
patch_arch = 16,12,8
whole_arch = 16,24,16
classes = 2

[train]
max_iters = 4
batch_size = 16
lambda1 = 0.2
classifier_epochs = 20

[output]
seed = 77
",
    )
    .unwrap();

    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let out1 = cmd_train(&config, d1.path()).unwrap();
    let out2 = cmd_train(&config, d2.path()).unwrap();

    let bytes1 = std::fs::read(&out1.archive_path).unwrap();
    let bytes2 = std::fs::read(&out2.archive_path).unwrap();
    assert_eq!(bytes1, bytes2, "end-to-end rerun must be byte-identical");

    // save/load round trip is bit-exact
    let archive = cosmos_cli::archive::ModelArchive::from_bytes(&bytes1).unwrap();
    assert_eq!(archive.to_bytes(), bytes1);
    let restored = cosmos_cli::archive::restore_ensemble(&archive).unwrap();
    assert_eq!(restored, out1.ensemble);
    for ((n1, t1), (n2, t2)) in archive
        .tensors
        .iter()
        .zip(cosmos_cli::archive::ModelArchive::from_bytes(&bytes2).unwrap().tensors.iter())
    {
        assert_eq!(n1, n2);
        for (a, b) in t1.data().iter().zip(t2.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    println!("criterion 8 (persistence): PASS");
}
