//! Attention fusion of the spatial and residual streams.
//!
//! Each stream's `C×H×W` feature map is flattened to `C×N`, its channel Gram
//! matrix `G = f·fᵀ` is row-softmaxed into a `C×C` attention matrix `M`
//! (entry `(j, i)` is the influence of channel `i` on channel `j`), and the
//! re-weighted features are `f' = Mᵀ·f`. The two attended maps are then mixed
//! element-wise with weights `α_i = 1 − softmax(L)_i` derived from the two
//! streams' classification losses, so the stream with the lower loss counts
//! for more.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Row-stochastic `C×C` channel attention matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    size: usize,
    data: Vec<f64>,
}

impl AttentionMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    /// Entry `(row, col)`: influence of channel `col` on channel `row`.
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.size + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.size..(row + 1) * self.size]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Fusion weights of the two streams and the losses they came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamWeights {
    pub alpha: [f64; 2],
    pub losses: [f64; 2],
    pub epoch: usize,
}

impl Default for StreamWeights {
    /// Equal weighting, used before any loss has been observed.
    fn default() -> Self {
        StreamWeights {
            alpha: [0.5, 0.5],
            losses: [0.0, 0.0],
            epoch: 0,
        }
    }
}

/// `α_i = 1 − exp(L_i) / Σ_j exp(L_j)` for the spatial (`l1`) and residual
/// (`l2`) stream losses.
pub fn stream_weights(l1: f64, l2: f64) -> Result<StreamWeights> {
    for l in [l1, l2] {
        if l.is_nan() || l.is_infinite() {
            return Err(Error::NonFinite("stream_weights"));
        }
        if l < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "stream losses must be nonnegative, got {l}"
            )));
        }
    }
    let mx = l1.max(l2);
    let (e1, e2) = ((l1 - mx).exp(), (l2 - mx).exp());
    let z = e1 + e2;
    Ok(StreamWeights {
        alpha: [1.0 - e1 / z, 1.0 - e2 / z],
        losses: [l1, l2],
        epoch: 0,
    })
}

/// Records channel attention for one `C×H×W` feature map on `tape`.
///
/// Returns `(f', M)`; with `skip` the input is added back, `f' = Mᵀf + f`.
pub fn channel_attention_on(tape: &mut Tape, f: Var, skip: bool) -> Result<(Var, Var)> {
    let shape = tape.shape(f).to_vec();
    if shape.len() != 3 || shape.contains(&0) {
        return Err(Error::Shape {
            op: "channel_attention",
            detail: format!("expected nonempty C×H×W, got {shape:?}"),
        });
    }
    let (c, n) = (shape[0], shape[1] * shape[2]);
    let flat = tape.reshape(f, &[c, n])?;
    let flat_t = tape.transpose(flat)?;
    let gram = tape.matmul(flat, flat_t)?;
    let m = tape.softmax(gram, 1)?;
    let m_t = tape.transpose(m)?;
    let mut out = tape.matmul(m_t, flat)?;
    if skip {
        out = tape.add(out, flat)?;
    }
    let out = tape.reshape(out, &shape)?;
    Ok((out, m))
}

/// Eager channel attention without skip connection.
pub fn channel_attention(f: &Tensor) -> Result<(Tensor, AttentionMatrix)> {
    let mut tape = Tape::new();
    let fv = tape.constant(f);
    let (out, m) = channel_attention_on(&mut tape, fv, false)?;
    let size = tape.shape(m)[0];
    let matrix = AttentionMatrix {
        size,
        data: tape.value(m).data().to_vec(),
    };
    Ok((tape.value(out).detached(), matrix))
}

/// Records `α₁·a + α₂·b`; the weights are constants.
pub fn fuse_on(tape: &mut Tape, a: Var, b: Var, w: &StreamWeights) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape {
            op: "fuse",
            detail: format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        });
    }
    let sa = tape.scale(a, w.alpha[0]);
    let sb = tape.scale(b, w.alpha[1]);
    tape.add(sa, sb)
}

pub fn fuse(a: &Tensor, b: &Tensor, w: &StreamWeights) -> Result<Tensor> {
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a), tape.constant(b));
    let out = fuse_on(&mut tape, va, vb, w)?;
    Ok(tape.value(out).detached())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Nested-loop channel attention straight from the definition.
    fn oracle(f: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let s = f.shape();
        let (c, n) = (s[0], s[1] * s[2]);
        let x = f.data();
        let dot = |i: usize, j: usize| (0..n).map(|p| x[i * n + p] * x[j * n + p]).sum::<f64>();
        let mut m = vec![0.0; c * c];
        for j in 0..c {
            let denom: f64 = (0..c).map(|i| dot(i, j).exp()).sum();
            for i in 0..c {
                m[j * c + i] = dot(i, j).exp() / denom;
            }
        }
        let mut out = vec![0.0; c * n];
        for i in 0..c {
            for p in 0..n {
                out[i * n + p] = (0..c).map(|j| m[j * c + i] * x[j * n + p]).sum();
            }
        }
        (m, out)
    }

    #[test]
    fn single_channel_is_identity() {
        let f = Tensor::from_fn(&[1, 2, 3], |i| i as f64 * 0.1);
        let (out, m) = channel_attention(&f).unwrap();
        assert_eq!(m.data(), &[1.0]);
        assert_eq!(out, f);
    }

    #[test]
    fn identical_channels_split_evenly() {
        let f = Tensor::from_fn(&[2, 2, 2], |i| [0.3, -0.1, 0.7, 0.2][i % 4]);
        let (out, m) = channel_attention(&f).unwrap();
        for &v in m.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        for i in 0..4 {
            assert!((out.data()[i] - f.data()[i]).abs() < 1e-15);
            assert!((out.data()[4 + i] - f.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_nested_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let f = Tensor::uniform(&[3, 2, 2], -1.0, 1.0, &mut rng);
        let (out, m) = channel_attention(&f).unwrap();
        let (wm, wout) = oracle(&f);
        for (a, b) in m.data().iter().zip(&wm) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in out.data().iter().zip(&wout) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let c = rng.random_range(1..6);
            let f = Tensor::uniform(&[c, 3, 3], -0.5, 0.5, &mut rng);
            let (_, m) = channel_attention(&f).unwrap();
            for r in 0..c {
                assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(m.row(r).iter().all(|&v| v > 0.0 && v < 1.0 || c == 1));
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (c, hw) = (4, 6);
        let f = Tensor::uniform(&[c, 2, 3], -1.0, 1.0, &mut rng);
        let perm = [2, 0, 3, 1];
        let g = Tensor::from_fn(&[c, 2, 3], |i| f.data()[perm[i / hw] * hw + i % hw]);
        let (fo, fm) = channel_attention(&f).unwrap();
        let (go, gm) = channel_attention(&g).unwrap();
        for r in 0..c {
            for col in 0..c {
                assert!((gm.get(r, col) - fm.get(perm[r], perm[col])).abs() < 1e-12);
            }
            for p in 0..hw {
                assert!((go.data()[r * hw + p] - fo.data()[perm[r] * hw + p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_shapes_are_rejected() {
        assert!(channel_attention(&Tensor::zeros(&[0, 2, 2])).is_err());
        assert!(channel_attention(&Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn weights_known_values() {
        let w = stream_weights(0.7, 0.7).unwrap();
        assert_eq!(w.alpha, [0.5, 0.5]);
        let w = stream_weights(0.0, 3f64.ln()).unwrap();
        assert!((w.alpha[0] - 0.75).abs() < 1e-15);
        assert!((w.alpha[1] - 0.25).abs() < 1e-15);
        assert!(matches!(
            stream_weights(f64::NAN, 0.1),
            Err(Error::NonFinite(_))
        ));
        assert!(stream_weights(-0.1, 0.1).is_err());
    }

    #[test]
    fn smaller_loss_gets_larger_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..100 {
            let a: f64 = rng.random_range(0.0..5.0);
            let b: f64 = rng.random_range(0.0..5.0);
            let (l1, l2) = (a.min(b), a.max(b) + 1e-3);
            let w = stream_weights(l1, l2).unwrap();
            assert!(w.alpha[0] > w.alpha[1]);
            assert!((w.alpha[0] + w.alpha[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_degenerate_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let a = Tensor::uniform(&[2, 3, 3], -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[2, 3, 3], -1.0, 1.0, &mut rng);
        let w = StreamWeights {
            alpha: [1.0, 0.0],
            ..StreamWeights::default()
        };
        assert_eq!(fuse(&a, &b, &w).unwrap(), a);
        let neg = Tensor::from_fn(a.shape(), |i| -a.data()[i]);
        let zero = fuse(&a, &neg, &StreamWeights::default()).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(fuse(&a, &Tensor::zeros(&[2, 3]), &w).is_err());
    }
}
