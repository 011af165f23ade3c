use comet_core::backbones::{Backbone, CouplingFlow, FeatureExtractorStub, FlowConfig, NfBackbone, TransformSet};
use comet_core::diffcore::{Mat, ParamSet};
use comet_core::meta::weighted_value_and_grad;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

fn jitter(params: &ParamSet, rng: &mut ChaCha8Rng, std: f64) -> ParamSet {
    let mut out = params.clone();
    for (name, value) in params.iter() {
        let (r, c) = value.dim();
        out.set(name, value + &normal_matrix(rng, r, c, std)).unwrap();
    }
    out
}

#[test]
fn inverse_recovers_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let dim = 2 * (1 + i % 4);
        let flow = CouplingFlow::new(FlowConfig {
            dim,
            layers: 1 + i % 5,
            hidden: 4,
            scale_clamp: 2.0,
        })
        .unwrap();
        let params = jitter(&flow.init_params(i as u64), &mut rng, 0.5);
        let u: Vec<f64> = (0..dim).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (z, _) = flow.forward(&params, &u).unwrap();
        let back = flow.inverse(&params, &z).unwrap();
        for (a, b) in u.iter().zip(&back) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-6, "worst round-trip error {worst}");
}

#[test]
fn two_dimensional_density_integrates_to_one() {
    let flow = CouplingFlow::new(FlowConfig {
        dim: 2,
        layers: 4,
        hidden: 8,
        scale_clamp: 2.0,
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let params = jitter(&flow.init_params(3), &mut rng, 0.3);

    let half = 8.0;
    let step = 0.04;
    let n = (2.0 * half / step) as usize;
    let grid = Mat::from_shape_fn((n * n, 2), |(k, j)| {
        let idx = if j == 0 { k / n } else { k % n };
        -half + (idx as f64 + 0.5) * step
    });
    let nll = flow.nll_batch(&params, &grid).unwrap();
    let mass: f64 = nll.iter().map(|v| (-v).exp()).sum::<f64>() * step * step;
    assert!((mass - 1.0).abs() < 1e-2, "mass {mass}");
}

#[test]
fn gradient_descent_decreases_flow_loss() {
    let nb = NfBackbone::new(
        FlowConfig::default(),
        FeatureExtractorStub::identity(8),
        TransformSet::identity(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = normal_matrix(&mut rng, 64, 8, 0.7).mapv(|v| v + 1.5);
    let weights = vec![1.0; 64];
    let mut params = nb.init_params(8);
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let (loss, grad) = weighted_value_and_grad(&nb, &params, &x, &weights, 0.0, &mut rng).unwrap();
        assert!(loss <= prev, "step {step}: {loss} > {prev}");
        prev = loss;
        params = params.descend(&grad, 2e-4).unwrap();
    }
    let first = {
        let (l, _) = weighted_value_and_grad(&nb, &nb.init_params(8), &x, &weights, 0.0, &mut rng).unwrap();
        l
    };
    assert!(prev < first);
}
