use std::time::Instant;
use cosmos_core::model::CosmosModel;
use cosmos_core::tensor::{init_weights, Tensor};
use cosmos_core::losses::*;
use cosmos_core::rng::Rng;

fn main() {
    let model = CosmosModel::new(&[784, 128, 64], 10, 0.0, 1).unwrap();
    let mut rng = Rng::new(2);
    let x = Tensor::new(64, 784, (0..64*784).map(|_| rng.next_f64()).collect()).unwrap();

    let t = Instant::now();
    for _ in 0..50 { let _ = model.forward(&x, true, 3).unwrap(); }
    println!("forward x50: {:.3}s", t.elapsed().as_secs_f64());

    let trace = model.forward(&x, true, 3).unwrap();
    let (_, ge) = euclidean_loss_grad(&x, &trace.reconstruction).unwrap();
    let lg = cosmos_core::model::LossGrads {
        wrt_reconstruction: ge.clone(),
        wrt_class_probs: Tensor::zeros(64, 10),
        wrt_metric: Tensor::zeros(784, 784),
    };
    let t = Instant::now();
    for _ in 0..50 { let _ = model.backward(&trace, &lg).unwrap(); }
    println!("backward x50: {:.3}s", t.elapsed().as_secs_f64());

    let metric = PseudoMetric::identity(784);
    let t = Instant::now();
    for _ in 0..50 { let _ = mahalanobis_loss_grad_xhat(&x, &trace.reconstruction, &metric).unwrap(); }
    println!("mah grad_xhat x50: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    for _ in 0..50 { let _ = mahalanobis_metric_grad(&x, &trace.reconstruction).unwrap(); }
    println!("mah metric grad x50: {:.3}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    for _ in 0..50 { let _ = cosine_loss_grad_masked(&x, &trace.reconstruction, CosineMode::Standard).unwrap(); }
    println!("cos grad x50: {:.3}s", t.elapsed().as_secs_f64());

    let mut opt = cosmos_core::optim::AdamState::new(784, 784, 1e-4).unwrap();
    let g = init_weights(784, 784, 5).unwrap();
    let m0 = Tensor::identity(784);
    let t = Instant::now();
    for _ in 0..50 { let _ = opt.step(&m0, &g).unwrap(); }
    println!("adam 784x784 x50: {:.3}s", t.elapsed().as_secs_f64());
}
