//! Release gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use comet_core::backbones::{
    Backbone, Batch, CouplingFlow, FeatureExtractorStub, FlowConfig, ModelError, NfBackbone, SimpleNetConfig,
    SimpleNetModel, TransformSet,
};
use comet_core::data::{self, FeatureDataset, Label, Provenance};
use comet_core::diffcore::{self, grad_check, Mat, ParamSet, ParamVars, Tape, Var};
use comet_core::meta::{self, Ablation, TrainConfig};
use comet_core::metrics::auroc;
use comet_core::scl::{self, Cov2, LossPairSeries};
use comet_harness::config::{ExperimentConfig, Variant};
use comet_harness::suite;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

// Tolerances, fixed by the acceptance criteria.
const DET_TOL: f64 = 1e-12;
const LAMBDA_TOL: f64 = 1e-15;
const GRAD_REL_TOL: f64 = 1e-4;
const MIN_GRAD_CONFIGS: usize = 100;
const ROUND_TRIP_TOL: f64 = 1e-6;
const ROUND_TRIP_INPUTS: usize = 1000;
const DENSITY_TOL: f64 = 1e-2;
const DENSITY_HALF_WIDTH: f64 = 8.0;
const REDUCTION_TOL: f64 = 1e-12;
const REDUCTION_STEPS: usize = 10;
const AUROC_TOL: f64 = 1e-12;
const AUROC_MAX_N: usize = 200;
const ABLATION_SLACK: f64 = 0.01;
const NOISE_MARGIN: f64 = 0.0;
const CMFT_DATASETS: usize = 50;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Box<dyn Fn() -> Outcome>);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

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

fn scl_exactness() -> Outcome {
    let t = scl::iqr_threshold(&[1.0, 2.0, 3.0, 4.0, 100.0], 1.5).map_err(|e| e.to_string())?;
    ensure(t == 7.0, format!("threshold {t}, expected 7.0"))?;
    let w = scl::saturated_inverse(&[1.0, 3.5, 7.0, 14.0], 7.0).map_err(|e| e.to_string())?;
    ensure(w == vec![1.0, 1.0, 1.0, 0.5], format!("weights {w:?}"))?;
    let series = LossPairSeries::from_pairs(vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]).map_err(|e| e.to_string())?;
    let sigma = scl::loss_covariance(&series).map_err(|e| e.to_string())?;
    let det = sigma.det();
    ensure((det - 0.75).abs() <= DET_TOL, format!("det {det}"))?;
    // A covariance with determinant exactly 0.75 for the regularizer.
    let sigma = Cov2([[1.0, -0.5], [-0.5, 1.0]]);
    let reg = scl::adaptive_lambda(0.01, 1.0, &sigma).map_err(|e| e.to_string())?;
    ensure(
        (reg.lambda - 0.0175).abs() <= LAMBDA_TOL,
        format!("lambda {}", reg.lambda),
    )?;
    Ok(format!("t = {t}, w = {w:?}, det = {det}, lambda = {}", reg.lambda))
}

fn summed_loss<B: Backbone>(
    backbone: &B,
    batch: Batch,
) -> impl Fn(&mut Tape, &ParamVars, Var) -> diffcore::Result<Var> + '_ {
    move |tape, vars, _| {
        let col = backbone.loss_column(tape, vars, &batch).map_err(|e| match e {
            ModelError::Diff(d) => d,
            other => panic!("{other}"),
        })?;
        tape.sum(col)
    }
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    let mut configs = 0;
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let mut skipped = 0;
    for i in 0..MIN_GRAD_CONFIGS + 20 {
        let report = if i % 2 == 0 {
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
            let f = summed_loss(&nb, batch);
            grad_check(&f, &params, &x, 1e-5, GRAD_REL_TOL).unwrap()
        } else {
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
            let f = summed_loss(&sn, batch);
            grad_check(&f, &params, &x, 1e-5, GRAD_REL_TOL).unwrap()
        };
        if let Some(f) = report.failures().next() {
            return Err(format!(
                "config {i}: {} [{}] analytic {} numeric {}",
                f.name, f.index, f.analytic, f.numeric
            ));
        }
        configs += 1;
        worst = worst.max(report.max_rel_error());
        entries += report.entries.len();
        skipped += report.non_smooth().count();
    }
    ensure(configs >= MIN_GRAD_CONFIGS, format!("only {configs} configurations"))?;
    Ok(format!(
        "{configs} configurations, {entries} entries ({skipped} at hinge kinks skipped), max rel err {worst:.2e}"
    ))
}

fn flow_validity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for i in 0..ROUND_TRIP_INPUTS {
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
        worst = u.iter().zip(&back).fold(worst, |w, (a, b)| w.max((a - b).abs()));
    }
    ensure(worst < ROUND_TRIP_TOL, format!("round-trip error {worst:.2e}"))?;

    let flow = CouplingFlow::new(FlowConfig {
        dim: 2,
        layers: 4,
        hidden: 8,
        scale_clamp: 2.0,
    })
    .unwrap();
    let params = jitter(&flow.init_params(3), &mut rng, 0.3);
    let step = 0.04;
    let n = (2.0 * DENSITY_HALF_WIDTH / step) as usize;
    let grid = Mat::from_shape_fn((n * n, 2), |(k, j)| {
        let idx = if j == 0 { k / n } else { k % n };
        -DENSITY_HALF_WIDTH + (idx as f64 + 0.5) * step
    });
    let nll = flow.nll_batch(&params, &grid).unwrap();
    let mass: f64 = nll.iter().map(|v| (-v).exp()).sum::<f64>() * step * step;
    ensure((mass - 1.0).abs() < DENSITY_TOL, format!("density mass {mass}"))?;
    Ok(format!(
        "max round-trip error {worst:.2e} over {ROUND_TRIP_INPUTS} inputs; 2-D mass {mass:.5}"
    ))
}

/// `L_i = ||theta - x_i||^2 / 2`.
struct Centroid;

impl Backbone for Centroid {
    fn name(&self) -> &'static str {
        "centroid"
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn init_params(&self, _seed: u64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("theta", Mat::from_shape_vec((1, 3), vec![0.5, -0.5, -1.5]).unwrap())
            .unwrap();
        p
    }
    fn make_batch(&self, x: &Mat, _rng: &mut ChaCha8Rng) -> Result<Batch, ModelError> {
        Ok(Batch {
            features: x.clone(),
            noise: None,
        })
    }
    fn loss_column(&self, tape: &mut Tape, vars: &ParamVars, batch: &Batch) -> Result<Var, ModelError> {
        let x = tape.constant(batch.features.clone())?;
        let ones = tape.constant(Mat::ones((batch.features.nrows(), 1)))?;
        let theta = tape.matmul(ones, vars.get("theta")?)?;
        let d = tape.sub(theta, x)?;
        let sq = tape.square(d)?;
        let s = tape.sum_cols(sq)?;
        Ok(tape.scale(s, 0.5)?)
    }
    fn scores(&self, params: &ParamSet, x: &Mat) -> Result<Vec<f64>, ModelError> {
        let t = params.get("theta")?;
        Ok(x.rows()
            .into_iter()
            .map(|r| (&r - &t.row(0)).mapv(|v| v * v).sum().sqrt() + 1.0)
            .collect())
    }
}

fn reduction_identity() -> Outcome {
    let x = Mat::from_shape_vec(
        (5, 3),
        vec![
            1.0, 2.0, -1.0, 0.5, -0.3, 2.0, 3.0, 1.0, 0.0, -2.0, 0.4, 1.1, 0.9, 0.9, -0.7,
        ],
    )
    .unwrap();
    let n_tasks = 2;
    let cfg = TrainConfig {
        epochs: REDUCTION_STEPS / n_tasks,
        n_tasks,
        beta: 0.03,
        lambda0: 0.05,
        max_grad_norm: None,
        ablation: Ablation {
            disable_ml: true,
            disable_scl_data: true,
            disable_scl_model: true,
        },
        ..TrainConfig::default()
    };
    let out = meta::train(&Centroid, &x, &cfg).map_err(|e| e.to_string())?;
    let mut theta = [0.5, -0.5, -1.5];
    for _ in 0..REDUCTION_STEPS {
        let mut grad = [0.0; 3];
        for (j, g) in grad.iter_mut().enumerate() {
            *g = x.column(j).iter().map(|xi| theta[j] - xi).sum::<f64>() + 2.0 * cfg.lambda0 * theta[j];
        }
        for j in 0..3 {
            theta[j] -= cfg.beta * grad[j];
        }
    }
    let got = out.params.get("theta").unwrap();
    let err = (0..3).map(|j| (got[[0, j]] - theta[j]).abs()).fold(0.0, f64::max);
    ensure(err <= REDUCTION_TOL, format!("max deviation {err:.2e}"))?;
    Ok(format!("{REDUCTION_STEPS} steps, max deviation {err:.2e}"))
}

fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let pick = |class: u8| {
        scores
            .iter()
            .zip(labels)
            .filter(move |(_, &l)| l == class)
            .map(|(&s, _)| s)
    };
    let (mut num, mut den) = (0.0, 0.0);
    for p in pick(1) {
        for n in pick(0) {
            den += 1.0;
            num += match p.partial_cmp(&n).unwrap() {
                std::cmp::Ordering::Greater => 1.0,
                std::cmp::Ordering::Equal => 0.5,
                std::cmp::Ordering::Less => 0.0,
            };
        }
    }
    num / den
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let instances = 2000;
    for _ in 0..instances {
        let n = rng.random_range(2..=AUROC_MAX_N);
        let levels = rng.random_range(2..40);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 / 7.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let a = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        worst = worst.max((a - pairwise_auroc(&scores, &labels)).abs());
    }
    ensure(worst <= AUROC_TOL, format!("max deviation {worst:.2e}"))?;
    Ok(format!(
        "{instances} tied instances, N <= {AUROC_MAX_N}, max deviation {worst:.2e}"
    ))
}

fn workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn ablation_ordering(out: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        workers: workers(),
        ..ExperimentConfig::default()
    };
    ensure(
        cfg.dim == 8 && cfg.n_train == 400 && cfg.contamination_rate == 0.10 && cfg.seeds.len() == 5,
        "default task changed",
    )?;
    let started = Instant::now();
    let res = suite::ablate(&cfg, out).map_err(|e| e.to_string())?;
    let mean = |v| {
        res.mean(v)
            .ok_or(format!("{} has no successful runs", Variant::label(&v)))
    };
    let full = mean(Variant::Full)?;
    let base = mean(Variant::Baseline)?;
    ensure(full >= base, format!("full {full:.4} < baseline {base:.4}"))?;
    for v in [Variant::NoMl, Variant::NoSclDataModel, Variant::NoSclData] {
        let m = mean(v)?;
        ensure(
            full >= m - ABLATION_SLACK,
            format!("full {full:.4} < {} {m:.4} - {ABLATION_SLACK}", v.label()),
        )?;
    }
    let table: Vec<String> = res
        .table
        .iter()
        .map(|r| format!("{} {:.4}", r.configuration, r.mean_i_auroc.unwrap_or(f64::NAN)))
        .collect();
    Ok(format!(
        "{} ({:.0}s)",
        table.join("; "),
        started.elapsed().as_secs_f64()
    ))
}

fn noise_robustness(out: &Path) -> Outcome {
    let cfg = ExperimentConfig {
        workers: workers(),
        ..ExperimentConfig::default()
    };
    ensure(
        cfg.noise_levels == vec![0.0, 0.02, 0.05, 0.10] && cfg.seeds.len() == 5,
        "default sweep changed",
    )?;
    let started = Instant::now();
    let res = suite::sweep_noise(&cfg, out).map_err(|e| e.to_string())?;
    ensure(res.rows.len() == 40, format!("{} rows", res.rows.len()))?;
    let full = res.degradation(Variant::Full).ok_or("no full-configuration results")?;
    let base = res.degradation(Variant::Baseline).ok_or("no baseline results")?;
    ensure(
        base - full >= NOISE_MARGIN,
        format!("degradation full {full:.4} > baseline {base:.4}"),
    )?;
    Ok(format!(
        "degradation 0->10%: full {full:.4}, baseline {base:.4} ({:.0}s)",
        started.elapsed().as_secs_f64()
    ))
}

fn comet(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_comet"))
        .args(args)
        .current_dir(dir)
        .env_remove("COMET_SEED")
        .output()
        .expect("binary runs")
}

fn without_wall_clock(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"wall_clock_seconds\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism(dir: &Path) -> Outcome {
    let config = dir.join("run.toml");
    std::fs::write(&config, "schema_version = 1\nepochs = 6\nseed = 4\n").unwrap();
    let cfg = config.to_str().unwrap();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let o = comet(&["train", "--config", cfg, "--out", run], dir);
        ensure(
            o.status.success(),
            format!(
                "train exited {:?}: {}",
                o.status.code(),
                String::from_utf8_lossy(&o.stderr)
            ),
        )?;
        reports.push(without_wall_clock(&dir.join(run).join("report.json")));
    }
    ensure(reports[0] == reports[1], "report.json differs between identical runs")?;

    let sweep_cfg = dir.join("sweep.toml");
    std::fs::write(
        &sweep_cfg,
        "schema_version = 1\nepochs = 2\nn_train = 80\nn_test = 40\nseeds = [1, 2, 3]\nnoise_levels = [0.0, 0.1]\n",
    )
    .unwrap();
    let sc = sweep_cfg.to_str().unwrap();
    let mut sweeps = Vec::new();
    for (w, name) in [("1", "w1"), ("3", "w3")] {
        let o = comet(&["sweep", "--config", sc, "--workers", w, "--out", name], dir);
        ensure(o.status.success(), format!("sweep exited {:?}", o.status.code()))?;
        sweeps.push(std::fs::read(dir.join(name).join("sweep.csv")).unwrap());
    }
    ensure(sweeps[0] == sweeps[1], "sweep.csv depends on --workers")?;
    Ok("identical report.json (wall clock excluded); sweep.csv identical for --workers 1 and 3".into())
}

fn format_round_trip(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..CMFT_DATASETS {
        let n = rng.random_range(1..50);
        let d = rng.random_range(1..16);
        let scale = 10f64.powi(rng.random_range(-4..5));
        let features = Mat::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0) * scale);
        let labels = (0..n)
            .map(|_| [Label::Nominal, Label::Anomalous, Label::Unknown][rng.random_range(0..3)])
            .collect();
        let ds = FeatureDataset::new(
            features,
            labels,
            Provenance::Derived {
                note: "acceptance".into(),
            },
        )
        .unwrap();
        let path = dir.join(format!("{i}.cmft"));
        data::save_features(&ds, &path).map_err(|e| e.to_string())?;
        let back = data::load_features(&path).map_err(|e| e.to_string())?;
        let same = back.dim() == ds.dim()
            && back.eval_labels() == ds.eval_labels()
            && back
                .features()
                .iter()
                .zip(ds.features().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
        ensure(same, format!("dataset {i} changed on round trip"))?;
    }

    let fixture = FeatureDataset::new(
        Mat::from_shape_vec((2, 3), vec![0.5, -1.0, 2.0, 3.5, 0.0, -0.25]).unwrap(),
        vec![Label::Nominal, Label::Anomalous],
        Provenance::Derived { note: "fixture".into() },
    )
    .unwrap();
    let good = data::encode(&fixture);
    let mut bad_magic = good.clone();
    bad_magic[..4].copy_from_slice(b"NOPE");
    let truncated = good[..good.len() - 5].to_vec();
    let mut overflow = good.clone();
    overflow[5..9].copy_from_slice(&0x0100_0000u32.to_le_bytes());
    overflow[9..13].copy_from_slice(&0x0100_0000u32.to_le_bytes());
    let mut codes = Vec::new();
    for bytes in [bad_magic, truncated, overflow] {
        let err = data::decode(&bytes, Provenance::Derived { note: String::new() }).unwrap_err();
        codes.push(err.code());
    }
    ensure(
        codes == ["bad-magic", "truncated", "dim-overflow"],
        format!("codes {codes:?}"),
    )?;
    Ok(format!(
        "{CMFT_DATASETS} datasets bitwise identical; error codes {codes:?}"
    ))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let sub = |name: &str| {
        let p = tmp.path().join(name);
        std::fs::create_dir_all(&p).unwrap();
        p
    };
    let (abl, sweep, det, cmft) = (sub("ablation"), sub("sweep"), sub("determinism"), sub("cmft"));

    let criteria: Vec<Criterion> = vec![
        ("1 SCL exactness", Box::new(scl_exactness)),
        ("2 gradient correctness", Box::new(gradient_correctness)),
        ("3 flow validity", Box::new(flow_validity)),
        ("4 reduction identity", Box::new(reduction_identity)),
        ("5 metric oracle", Box::new(metric_oracle)),
        ("6 ablation ordering", Box::new(move || ablation_ordering(&abl))),
        ("7 noise robustness", Box::new(move || noise_robustness(&sweep))),
        ("8 determinism", Box::new(move || determinism(&det))),
        ("9 format round-trip", Box::new(move || format_round_trip(&cmft))),
    ];

    let mut failed = 0;
    for (name, check) in &criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
