//! Finite-difference verification of analytic gradients.
//!
//! The analytic side runs the production f32 forward/backward. The finite
//! difference side evaluates an independent, naive f64 reference
//! implementation of each layer, so the comparison is limited by the f32
//! arithmetic of the implementation under test rather than by rounding noise
//! in the oracle. Central differences with the base step are scaled by each
//! element's magnitude.

use super::layers::{Layer, NnError};
use super::tensor::Tensor;
use crate::rng::SeededRng;

/// Relative error |a - b| / max(|a|, |b|, 1e-4).
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[derive(Clone)]
struct F64Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl F64Tensor {
    fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&x| x as f64).collect(),
        }
    }
}

/// Naive f64 reference forward used as the finite-difference oracle. Written
/// as direct loops from the layer definitions, independent of the optimized
/// phase-split implementation in `layers`.
fn ref_forward(layer: &Layer, inputs: &[F64Tensor], params: &[F64Tensor]) -> Vec<f64> {
    match layer {
        Layer::Conv1d(l) => {
            let (bsz, cin, ln) = (inputs[0].shape[0], inputs[0].shape[1], inputs[0].shape[2]);
            let lo = (ln + 2 * l.pad - l.kernel) / l.stride + 1;
            let (w, b) = (&params[0].data, &params[1].data);
            let x = &inputs[0].data;
            let mut y = vec![0.0; bsz * l.cout * lo];
            for bi in 0..bsz {
                for co in 0..l.cout {
                    for t in 0..lo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for kk in 0..l.kernel {
                                let idx = (t * l.stride + kk) as isize - l.pad as isize;
                                if idx >= 0 && (idx as usize) < ln {
                                    acc += w[(co * cin + ci) * l.kernel + kk]
                                        * x[(bi * cin + ci) * ln + idx as usize];
                                }
                            }
                        }
                        y[(bi * l.cout + co) * lo + t] = acc;
                    }
                }
            }
            y
        }
        Layer::TransposedConv1d(l) => {
            let (bsz, cin, ln) = (inputs[0].shape[0], inputs[0].shape[1], inputs[0].shape[2]);
            let lo = (ln - 1) * l.stride + l.kernel - 2 * l.pad;
            let (w, b) = (&params[0].data, &params[1].data);
            let x = &inputs[0].data;
            let mut y = vec![0.0; bsz * l.cout * lo];
            for bi in 0..bsz {
                for co in 0..l.cout {
                    for j in 0..lo {
                        y[(bi * l.cout + co) * lo + j] = b[co];
                    }
                }
                for ci in 0..cin {
                    for t in 0..ln {
                        for kk in 0..l.kernel {
                            let j = (t * l.stride + kk) as isize - l.pad as isize;
                            if j >= 0 && (j as usize) < lo {
                                for co in 0..l.cout {
                                    y[(bi * l.cout + co) * lo + j as usize] += w
                                        [(ci * l.cout + co) * l.kernel + kk]
                                        * x[(bi * cin + ci) * ln + t];
                                }
                            }
                        }
                    }
                }
            }
            y
        }
        Layer::Dense(l) => {
            let (bsz, fin) = (inputs[0].shape[0], inputs[0].shape[1]);
            let (w, b) = (&params[0].data, &params[1].data);
            let x = &inputs[0].data;
            let mut y = vec![0.0; bsz * l.fout];
            for bi in 0..bsz {
                for o in 0..l.fout {
                    let mut acc = b[o];
                    for i in 0..fin {
                        acc += w[o * fin + i] * x[bi * fin + i];
                    }
                    y[bi * l.fout + o] = acc;
                }
            }
            y
        }
        Layer::GroupNorm(l) => {
            let (bsz, c, ln) = (inputs[0].shape[0], inputs[0].shape[1], inputs[0].shape[2]);
            let cg = c / l.groups;
            let (gamma, beta) = (&params[0].data, &params[1].data);
            let x = &inputs[0].data;
            let mut y = vec![0.0; bsz * c * ln];
            for bi in 0..bsz {
                for g in 0..l.groups {
                    let base = (bi * c + g * cg) * ln;
                    let n = (cg * ln) as f64;
                    let mean: f64 = x[base..base + cg * ln].iter().sum::<f64>() / n;
                    let var: f64 = x[base..base + cg * ln]
                        .iter()
                        .map(|&v| (v - mean) * (v - mean))
                        .sum::<f64>()
                        / n;
                    let inv = 1.0 / (var + l.eps as f64).sqrt();
                    for cc in 0..cg {
                        let ch = g * cg + cc;
                        for t in 0..ln {
                            let xhat = (x[base + cc * ln + t] - mean) * inv;
                            y[base + cc * ln + t] = gamma[ch] * xhat + beta[ch];
                        }
                    }
                }
            }
            y
        }
        Layer::Silu(_) => inputs[0]
            .data
            .iter()
            .map(|&v| v / (1.0 + (-v).exp()))
            .collect(),
        Layer::Attention1d(l) => {
            let (bsz, c, t) = (inputs[0].shape[0], inputs[0].shape[1], inputs[0].shape[2]);
            let dh = c / l.heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let (wq, wk, wv, wo) = (&params[0].data, &params[1].data, &params[2].data, &params[3].data);
            let x = &inputs[0].data;
            let project = |w: &Vec<f64>, src: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; c * t];
                for m in 0..c {
                    for cc in 0..c {
                        for tt in 0..t {
                            out[m * t + tt] += w[m * c + cc] * src[cc * t + tt];
                        }
                    }
                }
                out
            };
            let mut y = vec![0.0; bsz * c * t];
            for bi in 0..bsz {
                let xb = &x[bi * c * t..(bi + 1) * c * t];
                let q = project(wq, xb);
                let k = project(wk, xb);
                let v = project(wv, xb);
                let mut o = vec![0.0; c * t];
                for h in 0..l.heads {
                    for ti in 0..t {
                        let mut logits = vec![0.0f64; t];
                        for (u, lg) in logits.iter_mut().enumerate() {
                            for d in 0..dh {
                                *lg += q[(h * dh + d) * t + ti] * k[(h * dh + d) * t + u];
                            }
                            *lg *= scale;
                        }
                        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut probs: Vec<f64> = logits.iter().map(|&s| (s - mx).exp()).collect();
                        let sum: f64 = probs.iter().sum();
                        probs.iter_mut().for_each(|p| *p /= sum);
                        for d in 0..dh {
                            let mut acc = 0.0;
                            for u in 0..t {
                                acc += probs[u] * v[(h * dh + d) * t + u];
                            }
                            o[(h * dh + d) * t + ti] = acc;
                        }
                    }
                }
                let out = project(wo, &o);
                y[bi * c * t..(bi + 1) * c * t].copy_from_slice(&out);
            }
            y
        }
        Layer::Film(_) => {
            let (bsz, c, ln) = (inputs[0].shape[0], inputs[0].shape[1], inputs[0].shape[2]);
            let x = &inputs[0].data;
            let scale = &inputs[1].data;
            let shift = &inputs[2].data;
            let mut y = vec![0.0; bsz * c * ln];
            for bi in 0..bsz {
                for cc in 0..c {
                    for t in 0..ln {
                        y[(bi * c + cc) * ln + t] =
                            scale[bi * c + cc] * x[(bi * c + cc) * ln + t] + shift[bi * c + cc];
                    }
                }
            }
            y
        }
    }
}

fn projected(y: &[f64], direction: &[f64]) -> f64 {
    y.iter().zip(direction.iter()).map(|(a, b)| a * b).sum()
}

/// Runs the gradient check and returns the max relative error over every
/// input element and every parameter element.
pub fn grad_check(
    layer: &mut Layer,
    input_shapes: &[&[usize]],
    step: f64,
    rng: &mut SeededRng,
) -> Result<f64, NnError> {
    assert_eq!(input_shapes.len(), layer.arity(), "wrong input count");
    let mut inputs: Vec<Tensor> = Vec::new();
    for (i, shape) in input_shapes.iter().enumerate() {
        let mut t = Tensor::randn(shape, rng);
        // FiLM scale input: keep near 1 so the map stays well-conditioned.
        if matches!(layer, Layer::Film(_)) && i == 1 {
            t.data_mut().iter_mut().for_each(|v| *v = 1.0 + 0.3 * *v);
        }
        inputs.push(t);
    }

    let refs: Vec<&Tensor> = inputs.iter().collect();
    let y = layer.forward(&refs)?;
    let direction: Vec<f64> = (0..y.numel()).map(|_| rng.normal() as f64).collect();

    // Analytic gradients from the f32 implementation.
    layer.zero_grads();
    let dir32: Vec<f32> = direction.iter().map(|&d| d as f32).collect();
    let dir_tensor = Tensor::from_vec(y.shape(), dir32).unwrap();
    let analytic_inputs = layer.backward(&refs, &dir_tensor)?;
    let analytic_params: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();
    layer.zero_grads();

    // f64 copies for the reference oracle.
    let mut inputs64: Vec<F64Tensor> = inputs.iter().map(F64Tensor::from_tensor).collect();
    let mut params64: Vec<F64Tensor> = layer
        .params()
        .iter()
        .map(|p| F64Tensor::from_tensor(&p.value))
        .collect();

    // The f32 forward and the f64 reference must agree; this also
    // cross-checks the optimized implementation against the naive loops.
    let ref_y = ref_forward(layer, &inputs64, &params64);
    for (a, &b) in y.data().iter().zip(ref_y.iter()) {
        assert!(
            rel_err(*a as f64, b) < 1e-4,
            "{}: f32 forward diverges from reference ({a} vs {b})",
            layer.name()
        );
    }

    let mut max_err = 0.0f64;
    for (ti, analytic) in analytic_inputs.iter().enumerate() {
        for ei in 0..inputs64[ti].data.len() {
            let orig = inputs64[ti].data[ei];
            let h = step * orig.abs().max(1.0);
            inputs64[ti].data[ei] = orig + h;
            let lp = projected(&ref_forward(layer, &inputs64, &params64), &direction);
            inputs64[ti].data[ei] = orig - h;
            let lm = projected(&ref_forward(layer, &inputs64, &params64), &direction);
            inputs64[ti].data[ei] = orig;
            let fd = (lp - lm) / (2.0 * h);
            max_err = max_err.max(rel_err(analytic.data()[ei] as f64, fd));
        }
    }
    for (pi, analytic) in analytic_params.iter().enumerate() {
        for ei in 0..params64[pi].data.len() {
            let orig = params64[pi].data[ei];
            let h = step * orig.abs().max(1.0);
            params64[pi].data[ei] = orig + h;
            let lp = projected(&ref_forward(layer, &inputs64, &params64), &direction);
            params64[pi].data[ei] = orig - h;
            let lm = projected(&ref_forward(layer, &inputs64, &params64), &direction);
            params64[pi].data[ei] = orig;
            let fd = (lp - lm) / (2.0 * h);
            max_err = max_err.max(rel_err(analytic.data()[ei] as f64, fd));
        }
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::*;

    const TOL: f64 = 1e-3;
    const STEP: f64 = 1e-3;

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        let mut rng = SeededRng::from_seed(100);
        let mut layer = Layer::Conv1d(Conv1d::new("gc", 4, 3, 3, 1, 1, 0.5, &mut rng));
        let err = grad_check(&mut layer, &[&[2, 4, 16]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "conv1d max rel err {err}");
    }

    #[test]
    fn strided_conv1d_gradients_match() {
        let mut rng = SeededRng::from_seed(101);
        let mut layer = Layer::Conv1d(Conv1d::new("gc", 3, 4, 4, 2, 1, 0.5, &mut rng));
        let err = grad_check(&mut layer, &[&[2, 3, 12]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "strided conv1d max rel err {err}");
    }

    #[test]
    fn transposed_conv1d_gradients_match() {
        let mut rng = SeededRng::from_seed(102);
        let mut layer =
            Layer::TransposedConv1d(TransposedConv1d::new("gc", 3, 2, 4, 2, 1, 0.5, &mut rng));
        let err = grad_check(&mut layer, &[&[2, 3, 8]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "transposed conv1d max rel err {err}");
    }

    #[test]
    fn dense_gradients_match() {
        let mut rng = SeededRng::from_seed(103);
        let mut layer = Layer::Dense(Dense::new("gc", 6, 4, 0.5, &mut rng));
        let err = grad_check(&mut layer, &[&[3, 6]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "dense max rel err {err}");
    }

    #[test]
    fn group_norm_gradients_match() {
        let mut rng = SeededRng::from_seed(104);
        let mut layer = Layer::GroupNorm(GroupNorm::new("gc", 6, 2));
        let err = grad_check(&mut layer, &[&[2, 6, 10]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "group_norm max rel err {err}");
    }

    #[test]
    fn silu_gradients_match() {
        let mut rng = SeededRng::from_seed(105);
        let mut layer = Layer::Silu(Silu);
        let err = grad_check(&mut layer, &[&[2, 5, 7]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "silu max rel err {err}");
    }

    #[test]
    fn attention_gradients_match() {
        let mut rng = SeededRng::from_seed(106);
        let mut layer = Layer::Attention1d(Attention1d::new("gc", 16, 4, 0.3, &mut rng));
        let err = grad_check(&mut layer, &[&[1, 16, 8]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "attention max rel err {err}");
    }

    #[test]
    fn film_gradients_match() {
        let mut rng = SeededRng::from_seed(107);
        let mut layer = Layer::Film(Film);
        let err = grad_check(&mut layer, &[&[2, 4, 6], &[2, 4], &[2, 4]], STEP, &mut rng).unwrap();
        assert!(err < TOL, "film max rel err {err}");
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = SeededRng::from_seed(108);
        let mut conv = Conv1d::new("gc", 2, 2, 3, 1, 1, 0.5, &mut rng);
        let x = Tensor::randn(&[1, 2, 8], &mut rng);
        let dy = Tensor::zeros(&[1, 2, 8]);
        let dx = conv.backward(&x, &dy);
        assert!(dx.max_abs() == 0.0);
        assert!(conv.w.grad.max_abs() == 0.0);
        assert!(conv.b.grad.max_abs() == 0.0);
    }
}
