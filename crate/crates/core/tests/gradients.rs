use comet_core::backbones::{
    Backbone, Batch, FeatureExtractorStub, FlowConfig, NfBackbone, SimpleNetConfig, SimpleNetModel, TransformSet,
};
use comet_core::diffcore::{self, grad_check, Mat, ParamSet, ParamVars, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Mat::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

/// Adds independent noise to every parameter so no layer sits at its
/// identity initialization.
fn jitter(params: &ParamSet, rng: &mut ChaCha8Rng, std: f64) -> ParamSet {
    let mut out = params.clone();
    for (name, value) in params.iter() {
        let (r, c) = value.dim();
        out.set(name, value + &normal_matrix(rng, r, c, std)).unwrap();
    }
    out
}

fn summed_loss<B: Backbone>(
    backbone: &B,
    batch: Batch,
) -> impl Fn(&mut Tape, &ParamVars, Var) -> diffcore::Result<Var> + '_ {
    move |tape, vars, _inputs| {
        let col = backbone.loss_column(tape, vars, &batch).map_err(|e| match e {
            comet_core::backbones::ModelError::Diff(d) => d,
            other => panic!("{other}"),
        })?;
        tape.sum(col)
    }
}

#[test]
fn flow_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..60 {
        let dim = 2 * rng.random_range(1..=3);
        let cfg = FlowConfig {
            dim,
            layers: rng.random_range(1..=3),
            hidden: rng.random_range(2..=5),
            scale_clamp: rng.random_range(0.5..3.0),
        };
        let nb = NfBackbone::new(cfg, FeatureExtractorStub::identity(dim), TransformSet::identity()).unwrap();
        let params = jitter(&nb.init_params(rng.random()), &mut rng, 0.3);
        let n = rng.random_range(1..=4);
        let x = normal_matrix(&mut rng, n, dim, 1.5);
        let batch = nb.make_batch(&x, &mut rng).unwrap();
        let report = grad_check(&summed_loss(&nb, batch), &params, &x, H, TOL).unwrap();
        assert!(report.passed(), "worst entry {:?}", report.failures().next());
        assert_eq!(report.non_smooth().count(), 0);
        worst = worst.max(report.max_rel_error());
    }
    assert!(worst < TOL);
}

#[test]
fn discriminator_loss_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut checked = 0;
    for _ in 0..60 {
        let in_dim = rng.random_range(2..=5);
        let cfg = SimpleNetConfig {
            in_dim,
            adapter_dim: rng.random_range(1..=in_dim),
            hidden: rng.random_range(2..=6),
            noise_std: rng.random_range(0.05..0.5),
            th: rng.random_range(0.2..1.0),
        };
        let sn = SimpleNetModel::new(cfg, FeatureExtractorStub::identity(in_dim)).unwrap();
        let params = jitter(&sn.init_params(rng.random()), &mut rng, 0.2);
        let n = rng.random_range(1..=4);
        let x = normal_matrix(&mut rng, n, in_dim, 1.0);
        let batch = sn.make_batch(&x, &mut rng).unwrap();
        let report = grad_check(&summed_loss(&sn, batch), &params, &x, H, TOL).unwrap();
        assert!(report.passed(), "worst entry {:?}", report.failures().next());
        checked += report.entries.iter().filter(|e| e.smooth).count();
    }
    assert!(checked > 1000);
}

#[test]
fn gradient_is_linear_in_the_loss() {
    let nb = NfBackbone::new(
        FlowConfig {
            dim: 4,
            layers: 2,
            hidden: 3,
            scale_clamp: 2.0,
        },
        FeatureExtractorStub::identity(4),
        TransformSet::identity(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = jitter(&nb.init_params(1), &mut rng, 0.3);
    let x1 = normal_matrix(&mut rng, 3, 4, 1.0);
    let x2 = normal_matrix(&mut rng, 3, 4, 1.0);
    let (a, b) = (0.7, -1.3);

    let combined = |tape: &mut Tape, vars: &ParamVars, _u: Var| -> diffcore::Result<Var> {
        let mut total = None;
        for (x, c) in [(&x1, a), (&x2, b)] {
            let batch = Batch {
                features: x.clone(),
                noise: None,
            };
            let col = nb.loss_column(tape, vars, &batch).unwrap();
            let s = tape.sum(col)?;
            let s = tape.scale(s, c)?;
            total = Some(match total {
                None => s,
                Some(t) => tape.add(t, s)?,
            });
        }
        Ok(total.unwrap())
    };
    let g = diffcore::gradient(&combined, &params, &x1).unwrap();
    let g1 = diffcore::gradient(
        &summed_loss(
            &nb,
            Batch {
                features: x1.clone(),
                noise: None,
            },
        ),
        &params,
        &x1,
    )
    .unwrap();
    let g2 = diffcore::gradient(
        &summed_loss(
            &nb,
            Batch {
                features: x2.clone(),
                noise: None,
            },
        ),
        &params,
        &x2,
    )
    .unwrap();
    for (name, gv) in g.iter() {
        let expected = g1.get(name).unwrap() * a + g2.get(name).unwrap() * b;
        for (u, v) in gv.iter().zip(expected.iter()) {
            assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()), "{name}: {u} vs {v}");
        }
    }
}
