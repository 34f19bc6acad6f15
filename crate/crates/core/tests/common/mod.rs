#![allow(dead_code)]

use grnet::afm::{channel_attention_on, fuse_on, stream_weights};
use grnet::model::{FusionMethod, GrNet, ModelConfig};
use grnet::tensor::{grad_check_inputs, GradCheckReport, Tape, Tensor, Var};
use grnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

pub struct Case {
    pub op: &'static str,
    pub shape: String,
    pub report: GradCheckReport,
}

/// Values in `[-1, 1]` kept at least `gap` away from zero.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// `Σ out ⊙ w` for a fixed random `w`, turning any output into a scalar.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::uniform(tape.shape(out), -1.0, 1.0, &mut rng);
    let w = tape.constant(&w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn check(
    cases: &mut Vec<Case>,
    op: &'static str,
    inputs: Vec<Tensor>,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) {
    let shape = inputs
        .iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(",");
    let report = grad_check_inputs(f, &inputs, STEP, TOLERANCE).expect("gradient check runs");
    cases.push(Case { op, shape, report });
}

const SHAPES_2D: [[usize; 2]; 5] = [[1, 1], [2, 3], [4, 1], [3, 5], [6, 4]];
const SHAPES_3D: [[usize; 3]; 5] = [[1, 1, 1], [1, 3, 2], [2, 2, 2], [3, 4, 3], [4, 2, 5]];

/// Finite-difference checks of every differentiable operation, five random
/// shapes each, plus the full two-stream composite.
pub fn gradient_suite() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let mut cases = Vec::new();

    for (i, s) in SHAPES_3D.iter().enumerate() {
        let seed = i as u64;
        let (a, b) = (uniform(s, &mut rng), uniform(s, &mut rng));
        check(&mut cases, "add", vec![a.clone(), b.clone()], |t, v| {
            let o = t.add(v[0], v[1])?;
            project(t, o, seed)
        });
        check(&mut cases, "sub", vec![a.clone(), b.clone()], |t, v| {
            let o = t.sub(v[0], v[1])?;
            project(t, o, seed)
        });
        check(&mut cases, "mul", vec![a.clone(), b.clone()], |t, v| {
            let o = t.mul(v[0], v[1])?;
            project(t, o, seed)
        });
        // max/min need a gap between the arguments; b = a + offset, |offset| ≥ 0.05
        let off = away_from_zero(s, 0.05, &mut rng);
        let b2 = Tensor::from_fn(s, |k| a.data()[k] + off.data()[k]);
        check(&mut cases, "maximum", vec![a.clone(), b2.clone()], |t, v| {
            let o = t.maximum(v[0], v[1])?;
            project(t, o, seed)
        });
        check(&mut cases, "minimum", vec![a.clone(), b2.clone()], |t, v| {
            let o = t.minimum(v[0], v[1])?;
            project(t, o, seed)
        });
        check(&mut cases, "scale", vec![a.clone()], |t, v| {
            let o = t.scale(v[0], -1.7);
            project(t, o, seed)
        });
        check(&mut cases, "relu", vec![away_from_zero(s, 0.05, &mut rng)], |t, v| {
            let o = t.relu(v[0]);
            project(t, o, seed)
        });
        check(&mut cases, "sum", vec![a.clone()], |t, v| {
            let o = t.sum(v[0]);
            let sq = t.mul(o, o)?;
            Ok(t.sum(sq))
        });
        check(&mut cases, "global_avg_pool", vec![a.clone()], |t, v| {
            let o = t.global_avg_pool(v[0])?;
            project(t, o, seed)
        });
        check(&mut cases, "reshape", vec![a.clone()], |t, v| {
            let n: usize = s.iter().product();
            let o = t.reshape(v[0], &[n, 1])?;
            let sq = t.mul(o, o)?;
            project(t, sq, seed)
        });
        let c = uniform(&[s[0] + 1, s[1], s[2]], &mut rng);
        check(&mut cases, "concat", vec![a.clone(), c], |t, v| {
            let o = t.concat(&[v[0], v[1]])?;
            let sq = t.mul(o, o)?;
            project(t, sq, seed)
        });
        for axis in 0..3 {
            check(&mut cases, "softmax", vec![a.clone()], move |t, v| {
                let o = t.softmax(v[0], axis)?;
                project(t, o, seed)
            });
        }
    }

    for (i, s) in SHAPES_2D.iter().enumerate() {
        let seed = 100 + i as u64;
        let k = i + 2;
        let (a, b) = (uniform(&[s[0], k], &mut rng), uniform(&[k, s[1]], &mut rng));
        check(&mut cases, "matmul", vec![a, b], |t, v| {
            let o = t.matmul(v[0], v[1])?;
            project(t, o, seed)
        });
        check(&mut cases, "transpose", vec![uniform(s, &mut rng)], |t, v| {
            let o = t.transpose(v[0])?;
            let sq = t.mul(o, o)?;
            project(t, sq, seed)
        });
        let labels: Vec<usize> = (0..s[0]).map(|r| (r * 7 + i) % (s[1] + 1)).collect();
        let logits = Tensor::uniform(&[s[0], s[1] + 1], -3.0, 3.0, &mut rng);
        check(&mut cases, "cross_entropy", vec![logits], move |t, v| {
            t.cross_entropy(v[0], &labels)
        });
    }

    // (c_in, h, w, c_out, k, stride, pad)
    let convs = [
        (1, 3, 3, 1, 1, 1, 0),
        (2, 5, 4, 3, 3, 1, 1),
        (3, 6, 6, 2, 3, 2, 1),
        (1, 7, 5, 2, 2, 2, 0),
        (2, 4, 4, 4, 3, 1, 0),
    ];
    for (i, &(ci, h, w, co, k, stride, pad)) in convs.iter().enumerate() {
        let seed = 200 + i as u64;
        let inputs = vec![
            uniform(&[ci, h, w], &mut rng),
            uniform(&[co, ci, k, k], &mut rng),
            uniform(&[co], &mut rng),
        ];
        check(&mut cases, "conv2d", inputs, move |t, v| {
            let o = t.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            project(t, o, seed)
        });
    }

    for (i, s) in SHAPES_3D.iter().enumerate() {
        let seed = 300 + i as u64;
        for skip in [false, true] {
            check(&mut cases, "channel_attention", vec![uniform(s, &mut rng)], move |t, v| {
                let (o, _) = channel_attention_on(t, v[0], skip)?;
                project(t, o, seed)
            });
        }
        let w = stream_weights(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)).unwrap();
        check(
            &mut cases,
            "fuse",
            vec![uniform(s, &mut rng), uniform(s, &mut rng)],
            move |t, v| {
                let o = fuse_on(t, v[0], v[1], &w)?;
                project(t, o, seed)
            },
        );
        // attention on both streams, fused, pooled, scored by cross-entropy
        let c = s[0];
        let head = uniform(&[3, c], &mut rng);
        check(
            &mut cases,
            "attention_fuse_xent",
            vec![uniform(s, &mut rng), uniform(s, &mut rng), head],
            move |t, v| {
                let (a, _) = channel_attention_on(t, v[0], false)?;
                let (b, _) = channel_attention_on(t, v[1], false)?;
                let f = fuse_on(t, a, b, &w)?;
                let p = t.global_avg_pool(f)?;
                let col = t.reshape(p, &[c, 1])?;
                let logits = t.matmul(v[2], col)?;
                let logits = t.reshape(logits, &[3])?;
                t.cross_entropy(logits, &[i % 3])
            },
        );
    }

    for (i, fusion) in [
        FusionMethod::Afm,
        FusionMethod::Afm,
        FusionMethod::Sum,
        FusionMethod::Concat,
        FusionMethod::Afm,
    ]
    .into_iter()
    .enumerate()
    {
        cases.push(composite_case(i as u64, fusion, &mut rng));
    }
    cases
}

/// Whole model: both backbones, auxiliary heads, fusion and detector, with
/// the summed training loss differentiated against every parameter.
fn composite_case(seed: u64, fusion: FusionMethod, rng: &mut ChaCha8Rng) -> Case {
    let sizes = [4usize, 5, 6, 7, 8];
    let size = sizes[seed as usize];
    let config = ModelConfig {
        channels: vec![2, 3],
        input_size: size,
        n_classes: 3,
        seed,
        ..ModelConfig::ablation(true, fusion)
    };
    let mut net = GrNet::new(config).unwrap();
    for p in net.parameters_mut() {
        *p = Tensor::uniform(p.shape(), -0.8, 0.8, rng);
    }
    let rgb = uniform(&[3, size, size], rng);
    let gr = uniform(&[3, size, size], rng);
    let weights = stream_weights(0.4, 0.9).unwrap();
    let label = (seed % 3) as usize;
    let params: Vec<Tensor> = net.parameters().into_iter().cloned().collect();
    let report = grad_check_inputs(
        |t, vars| {
            let (x, y) = (t.constant(&rgb), t.constant(&gr));
            let out = net.forward_on(t, vars, x, y, &weights)?;
            let lf = t.cross_entropy(out.fused, &[label])?;
            let lr = t.cross_entropy(out.rgb, &[label])?;
            let lg = t.cross_entropy(out.gr, &[label])?;
            let s = t.add(lf, lr)?;
            t.add(s, lg)
        },
        &params,
        STEP,
        TOLERANCE,
    )
    .expect("composite check runs");
    Case {
        op: "model_composite",
        shape: format!("{fusion} 3x{size}x{size}"),
        report,
    }
}
