use std::fs;
use std::path::PathBuf;

use grnet::image::{Image, Plane};
use grnet::model::{
    evaluate, stream_inputs, train, train_inputs, Checkpoint, FusionMethod, GrNet, ModelConfig,
};
use grnet::synth::{generate_split, DatasetConfig, Split};
use grnet::tensor::Tensor;
use grnet::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(fusion: FusionMethod, size: usize, classes: usize) -> ModelConfig {
    ModelConfig {
        channels: vec![4, 8],
        input_size: size,
        n_classes: classes,
        epochs: 5,
        ..ModelConfig::ablation(true, fusion)
    }
}

/// Class 1 carries a fine checkerboard, class 0 is smooth noise-free shading.
fn toy_set(n: usize, size: usize, seed: u64) -> Vec<(Image, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = i % 2;
            let base: f64 = rng.random_range(0.3..0.7);
            let tilt: f64 = rng.random_range(-0.1..0.1);
            let plane = Plane::from_fn(size, size, |x, y| {
                let smooth = base + tilt * x as f64 / size as f64;
                let trace = if (x + y) % 2 == 0 { 0.08 } else { -0.08 };
                smooth + if label == 1 { trace } else { 0.0 }
            });
            (Image::from_planes(vec![plane.clone(), plane.clone(), plane]).unwrap(), label)
        })
        .collect()
}

#[test]
fn separable_toy_set_is_learned() {
    let data = toy_set(50, 12, 1);
    let cfg = ModelConfig {
        epochs: 20,
        optimizer: grnet::tensor::AdamConfig {
            learning_rate: 5e-3,
            gamma: 0.9,
            ..Default::default()
        },
        ..small_config(FusionMethod::Afm, 12, 2)
    };
    let ck = train(cfg, &data).unwrap();
    let ev = evaluate(&ck.model, &data).unwrap();
    assert!(ev.fused.accuracy >= 0.98, "train accuracy {}", ev.fused.accuracy);
}

#[test]
fn same_seed_gives_identical_history() {
    let data = toy_set(16, 8, 2);
    let cfg = small_config(FusionMethod::Afm, 8, 2);
    let a = train(cfg.clone(), &data).unwrap();
    let b = train(cfg.clone(), &data).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.parameters(), b.model.parameters());
    let c = train(ModelConfig { seed: 9, ..cfg }, &data).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn loss_decreases_over_first_epochs() {
    let data = toy_set(40, 12, 3);
    let cfg = ModelConfig {
        optimizer: grnet::tensor::AdamConfig {
            learning_rate: 2e-3,
            gamma: 0.9,
            ..Default::default()
        },
        ..small_config(FusionMethod::Afm, 12, 2)
    };
    let ck = train(cfg, &data).unwrap();
    let losses: Vec<f64> = ck.history.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 5);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "losses {losses:?}");
    }
}

#[test]
fn loss_decreases_on_the_standard_synthetic_set() {
    let recs = generate_split(&DatasetConfig::default(), Split::Train).unwrap();
    let data: Vec<(Image, usize)> = recs.into_iter().map(|r| (r.image, r.label)).collect();
    let cfg = ModelConfig {
        epochs: 5,
        ..ModelConfig::default()
    };
    let ck = train(cfg, &data).unwrap();
    let losses: Vec<f64> = ck.history.iter().map(|r| r.loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "losses {losses:?}");
    }
}

#[test]
fn checkpoint_round_trip_reproduces_metrics() {
    let data = toy_set(12, 8, 4);
    for fusion in [FusionMethod::Afm, FusionMethod::Concat] {
        let ck = train(small_config(fusion, 8, 2), &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.history, ck.history);
        assert_eq!(evaluate(&back.model, &data).unwrap(), evaluate(&ck.model, &data).unwrap());
        for (img, _) in &data {
            assert_eq!(back.model.forward(img).unwrap(), ck.model.forward(img).unwrap());
        }
    }
}

#[test]
fn non_finite_loss_reports_divergence() {
    let cfg = small_config(FusionMethod::Sum, 8, 2);
    let data = toy_set(4, 8, 5);
    let mut inputs: Vec<_> = data.iter().map(|(i, _)| stream_inputs(i, &cfg).unwrap()).collect();
    inputs[2].rgb = Tensor::filled(&[3, 8, 8], f64::NAN);
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    match train_inputs(cfg, &inputs, &labels) {
        Err(Error::Diverged { epoch: 0, loss, .. }) => assert!(loss.is_nan()),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn labels_out_of_range_are_rejected() {
    let data: Vec<_> = toy_set(4, 8, 6).into_iter().map(|(i, _)| (i, 5)).collect();
    assert!(matches!(
        train(small_config(FusionMethod::Afm, 8, 2), &data),
        Err(Error::InvalidLabel { label: 5, classes: 2 })
    ));
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_logits.json")
}

/// Logits of a fixed 4-image batch under a fixed-seed model with
/// deterministic nonzero heads, compared against the stored vector.
/// Set `GRNET_BLESS=1` to rewrite the stored values.
#[test]
fn golden_logits() {
    let cfg = ModelConfig {
        channels: vec![4, 8],
        input_size: 16,
        n_classes: 4,
        seed: 11,
        ..ModelConfig::default()
    };
    let mut net = GrNet::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for p in net.parameters_mut() {
        if p.data().iter().all(|&v| v == 0.0) {
            *p = Tensor::uniform(p.shape(), -0.5, 0.5, &mut rng);
        }
    }
    let batch: Vec<Image> = (0..4)
        .map(|k| {
            let planes = (0..3)
                .map(|c| {
                    Plane::from_fn(16, 16, |x, y| {
                        (0.5 + 0.4 * ((x * (k + 1) + y * (c + 2)) as f64 * 0.37).sin()).clamp(0.0, 1.0)
                    })
                })
                .collect();
            Image::from_planes(planes).unwrap()
        })
        .collect();
    let logits: Vec<Vec<f64>> = batch.iter().map(|img| net.forward(img).unwrap().fused).collect();

    let path = golden_path();
    if std::env::var("GRNET_BLESS").is_ok_and(|v| v == "1") {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, serde_json::to_string_pretty(&logits).unwrap()).unwrap();
    }
    let text = fs::read_to_string(&path).expect("golden file present; run with GRNET_BLESS=1 to create");
    let golden: Vec<Vec<f64>> = serde_json::from_str(&text).unwrap();
    assert_eq!(golden.len(), 4);
    for (g, l) in golden.iter().zip(&logits) {
        assert_eq!(g.len(), l.len());
        for (a, b) in g.iter().zip(l) {
            assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{g:?} vs {l:?}");
        }
    }
}
