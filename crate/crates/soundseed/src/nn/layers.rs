//! Differentiable layers with hand-written reverse-mode gradients.
//!
//! Each layer owns its [`Parameter`]s; `backward` consumes the same inputs the
//! forward saw, accumulates parameter gradients in place, and returns input
//! gradients. Reductions run in a fixed serial order so results are
//! bit-deterministic regardless of thread count: parallel tasks only ever
//! write disjoint output rows.

use rayon::prelude::*;
use thiserror::Error;

use super::tensor::Tensor;
use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{layer}: shape mismatch: {detail}")]
    ShapeMismatch { layer: String, detail: String },
    #[error("{layer}: expected {expected} inputs, got {got}")]
    InputArity {
        layer: String,
        expected: usize,
        got: usize,
    },
}

/// Trainable tensor with gradient and Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Minimum per-task element count before a loop is handed to rayon.
const PAR_THRESHOLD: usize = 1 << 14;

#[inline]
fn axpy(y: &mut [f32], x: &[f32], w: f32) {
    debug_assert_eq!(y.len(), x.len());
    for (yt, xt) in y.iter_mut().zip(x.iter()) {
        *yt += w * xt;
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut s0 = 0.0f32;
    let mut s1 = 0.0f32;
    let mut s2 = 0.0f32;
    let mut s3 = 0.0f32;
    let mut chunks = a.chunks_exact(4).zip(b.chunks_exact(4));
    for (ca, cb) in &mut chunks {
        s0 += ca[0] * cb[0];
        s1 += ca[1] * cb[1];
        s2 += ca[2] * cb[2];
        s3 += ca[3] * cb[3];
    }
    let rem = a.len() - a.len() % 4;
    let mut s = s0 + s1 + s2 + s3;
    for i in rem..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Splits `src` into `stride` phases: phase r holds src[r], src[r+stride], ...
/// laid out back to back in `dst`. With stride 1 this is a plain copy.
fn phase_split(src: &[f32], dst: &mut [f32], stride: usize) {
    debug_assert_eq!(src.len(), dst.len());
    let l = src.len();
    let mut off = 0;
    for r in 0..stride {
        let len_r = if l > r { (l - r + stride - 1) / stride } else { 0 };
        for i in 0..len_r {
            dst[off + i] = src[r + i * stride];
        }
        off += len_r;
    }
}

/// Inverse of [`phase_split`]: interleaves phases back into natural order.
fn phase_merge(src: &[f32], dst: &mut [f32], stride: usize) {
    debug_assert_eq!(src.len(), dst.len());
    let l = dst.len();
    let mut off = 0;
    for r in 0..stride {
        let len_r = if l > r { (l - r + stride - 1) / stride } else { 0 };
        for i in 0..len_r {
            dst[r + i * stride] = src[off + i];
        }
        off += len_r;
    }
}

/// Offset of phase `r` inside a phase-split buffer of logical length `l`.
fn phase_offset(l: usize, stride: usize, r: usize) -> usize {
    let mut off = 0;
    for q in 0..r {
        off += if l > q { (l - q + stride - 1) / stride } else { 0 };
    }
    off
}

fn phase_len(l: usize, stride: usize, r: usize) -> usize {
    if l > r {
        (l - r + stride - 1) / stride
    } else {
        0
    }
}

/// For an access pattern `base[stride*t + c]`, returns `(r, m)` such that
/// `base[stride*t + c] == phase_r[t + m]`.
#[inline]
fn phase_coords(c: isize, stride: usize) -> (usize, isize) {
    let s = stride as isize;
    let r = c.rem_euclid(s);
    let m = (c - r) / s;
    (r as usize, m)
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

/// 1-D convolution over [batch, channels, length] with zero padding.
///
/// out_len = floor((in_len + 2*pad - kernel) / stride) + 1
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub w: Parameter,
    pub b: Parameter,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init_std: f32,
        rng: &mut SeededRng,
    ) -> Self {
        let w = Tensor::randn_trunc(&[cout, cin, kernel], init_std, rng);
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            w: Parameter::new(format!("{name}.w"), w),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    /// Zero-initialized variant for the last layer of residual branches.
    #[allow(clippy::too_many_arguments)]
    pub fn new_zeroed(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            w: Parameter::new(format!("{name}.w"), Tensor::zeros(&[cout, cin, kernel])),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        assert!(
            in_len + 2 * self.pad >= self.kernel,
            "conv1d: input length {in_len} too short for kernel {}",
            self.kernel
        );
        (in_len + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (bsz, cin, l) = dims3(x, "conv1d");
        assert_eq!(cin, self.cin, "conv1d: channel mismatch");
        let lo = self.out_len(l);
        let s = self.stride;
        let mut y = Tensor::zeros(&[bsz, self.cout, lo]);

        // Phase-split the input once so strided reads become contiguous.
        let mut xph = vec![0.0f32; bsz * cin * l];
        for (row, chunk) in x.data().chunks_exact(l).zip(xph.chunks_exact_mut(l)) {
            phase_split(row, chunk, s);
        }

        let wd = self.w.value.data();
        let bd = self.b.value.data();
        let run = |(bc, yrow): (usize, &mut [f32])| {
            let b = bc / self.cout;
            let co = bc % self.cout;
            yrow.iter_mut().for_each(|v| *v = bd[co]);
            for ci in 0..cin {
                let xrow = &xph[(b * cin + ci) * l..(b * cin + ci + 1) * l];
                for kk in 0..self.kernel {
                    let w = wd[(co * cin + ci) * self.kernel + kk];
                    let c = kk as isize - self.pad as isize;
                    let (r, m) = phase_coords(c, s);
                    let pl = phase_len(l, s, r);
                    let po = phase_offset(l, s, r);
                    let t0 = (-m).max(0) as usize;
                    let t1 = lo.min((pl as isize - m).max(0) as usize);
                    if t0 < t1 {
                        let xo = (t0 as isize + m) as usize;
                        axpy(
                            &mut yrow[t0..t1],
                            &xrow[po + xo..po + xo + (t1 - t0)],
                            w,
                        );
                    }
                }
            }
        };
        if bsz * self.cout * lo * cin >= PAR_THRESHOLD {
            y.data_mut().par_chunks_mut(lo).enumerate().for_each(run);
        } else {
            y.data_mut().chunks_mut(lo).enumerate().for_each(run);
        }
        y.debug_check_finite("conv1d");
        y
    }

    /// Accumulates parameter grads and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (bsz, cin, l) = dims3(x, "conv1d");
        let (bs2, cout, lo) = dims3(dy, "conv1d");
        assert_eq!(bsz, bs2, "conv1d: batch mismatch");
        assert_eq!(cout, self.cout, "conv1d: out-channel mismatch");
        assert_eq!(lo, self.out_len(l), "conv1d: upstream length mismatch");
        let s = self.stride;
        let kn = self.kernel;

        let mut xph = vec![0.0f32; bsz * cin * l];
        for (row, chunk) in x.data().chunks_exact(l).zip(xph.chunks_exact_mut(l)) {
            phase_split(row, chunk, s);
        }
        let dyd = dy.data();
        let wd = self.w.value.data();

        // dw[co,ci,k] = sum_b sum_t dy[b,co,t] * x[b,ci,s*t + k - p]
        {
            let dw = self.w.grad.data_mut();
            let run = |(co, dwrow): (usize, &mut [f32])| {
                for b in 0..bsz {
                    let dyrow = &dyd[(b * cout + co) * lo..(b * cout + co + 1) * lo];
                    for ci in 0..cin {
                        let xrow = &xph[(b * cin + ci) * l..(b * cin + ci + 1) * l];
                        for kk in 0..kn {
                            let c = kk as isize - self.pad as isize;
                            let (r, m) = phase_coords(c, s);
                            let pl = phase_len(l, s, r);
                            let po = phase_offset(l, s, r);
                            let t0 = (-m).max(0) as usize;
                            let t1 = lo.min((pl as isize - m).max(0) as usize);
                            if t0 < t1 {
                                let xo = (t0 as isize + m) as usize;
                                dwrow[ci * kn + kk] +=
                                    dot(&dyrow[t0..t1], &xrow[po + xo..po + xo + (t1 - t0)]);
                            }
                        }
                    }
                }
            };
            if bsz * cout * cin * kn * lo >= PAR_THRESHOLD {
                dw.par_chunks_mut(cin * kn).enumerate().for_each(run);
            } else {
                dw.chunks_mut(cin * kn).enumerate().for_each(run);
            }
        }

        // db[co] = sum over batch and time
        {
            let db = self.b.grad.data_mut();
            for b in 0..bsz {
                for co in 0..cout {
                    let dyrow = &dyd[(b * cout + co) * lo..(b * cout + co + 1) * lo];
                    db[co] += dyrow.iter().sum::<f32>();
                }
            }
        }

        // dx[b,ci,s*t + k - p] += w[co,ci,k] * dy[b,co,t]: accumulate into
        // phase layout, then merge back to natural order.
        let mut dxph = vec![0.0f32; bsz * cin * l];
        {
            let run = |(bci, dxrow): (usize, &mut [f32])| {
                let b = bci / cin;
                let ci = bci % cin;
                for co in 0..cout {
                    let dyrow = &dyd[(b * cout + co) * lo..(b * cout + co + 1) * lo];
                    for kk in 0..kn {
                        let w = wd[(co * cin + ci) * kn + kk];
                        let c = kk as isize - self.pad as isize;
                        let (r, m) = phase_coords(c, s);
                        let pl = phase_len(l, s, r);
                        let po = phase_offset(l, s, r);
                        let t0 = (-m).max(0) as usize;
                        let t1 = lo.min((pl as isize - m).max(0) as usize);
                        if t0 < t1 {
                            let xo = (t0 as isize + m) as usize;
                            axpy(
                                &mut dxrow[po + xo..po + xo + (t1 - t0)],
                                &dyrow[t0..t1],
                                w,
                            );
                        }
                    }
                }
            };
            if bsz * cin * cout * lo >= PAR_THRESHOLD {
                dxph.par_chunks_mut(l).enumerate().for_each(run);
            } else {
                dxph.chunks_mut(l).enumerate().for_each(run);
            }
        }
        let mut dx = Tensor::zeros(&[bsz, cin, l]);
        for (chunk, row) in dxph.chunks_exact(l).zip(dx.data_mut().chunks_exact_mut(l)) {
            phase_merge(chunk, row, s);
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// TransposedConv1d
// ---------------------------------------------------------------------------

/// 1-D transposed convolution (learned upsampling).
///
/// out_len = (in_len - 1) * stride + kernel - 2*pad
#[derive(Debug, Clone)]
pub struct TransposedConv1d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Weight layout [cin, cout, kernel].
    pub w: Parameter,
    pub b: Parameter,
}

impl TransposedConv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        init_std: f32,
        rng: &mut SeededRng,
    ) -> Self {
        let w = Tensor::randn_trunc(&[cin, cout, kernel], init_std, rng);
        Self {
            cin,
            cout,
            kernel,
            stride,
            pad,
            w: Parameter::new(format!("{name}.w"), w),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    pub fn out_len(&self, in_len: usize) -> usize {
        assert!(in_len > 0, "transposed_conv1d: empty input");
        (in_len - 1) * self.stride + self.kernel - 2 * self.pad
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (bsz, cin, l) = dims3(x, "transposed_conv1d");
        assert_eq!(cin, self.cin, "transposed_conv1d: channel mismatch");
        let lo = self.out_len(l);
        let s = self.stride;
        let kn = self.kernel;
        let xd = x.data();
        let wd = self.w.value.data();
        let bd = self.b.value.data();

        // Accumulate in phase layout of the output, merge at the end.
        let mut yph = vec![0.0f32; bsz * self.cout * lo];
        let run = |(bc, yrow): (usize, &mut [f32])| {
            let b = bc / self.cout;
            let co = bc % self.cout;
            for ci in 0..cin {
                let xrow = &xd[(b * cin + ci) * l..(b * cin + ci + 1) * l];
                for kk in 0..kn {
                    let w = wd[(ci * self.cout + co) * kn + kk];
                    let c = kk as isize - self.pad as isize;
                    let (r, m) = phase_coords(c, s);
                    let pl = phase_len(lo, s, r);
                    let po = phase_offset(lo, s, r);
                    // y_phase_r[t + m] += w * x[t]
                    let t0 = (-m).max(0) as usize;
                    let t1 = l.min((pl as isize - m).max(0) as usize);
                    if t0 < t1 {
                        let yo = (t0 as isize + m) as usize;
                        axpy(&mut yrow[po + yo..po + yo + (t1 - t0)], &xrow[t0..t1], w);
                    }
                }
            }
        };
        if bsz * self.cout * l * cin >= PAR_THRESHOLD {
            yph.par_chunks_mut(lo).enumerate().for_each(run);
        } else {
            yph.chunks_mut(lo).enumerate().for_each(run);
        }

        let mut y = Tensor::zeros(&[bsz, self.cout, lo]);
        for ((chunk, row), co) in yph
            .chunks_exact(lo)
            .zip(y.data_mut().chunks_exact_mut(lo))
            .zip((0..self.cout).cycle())
        {
            phase_merge(chunk, row, s);
            let bias = bd[co];
            row.iter_mut().for_each(|v| *v += bias);
        }
        y.debug_check_finite("transposed_conv1d");
        y
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (bsz, cin, l) = dims3(x, "transposed_conv1d");
        let (bs2, cout, lo) = dims3(dy, "transposed_conv1d");
        assert_eq!(bsz, bs2, "transposed_conv1d: batch mismatch");
        assert_eq!(cout, self.cout, "transposed_conv1d: out-channel mismatch");
        assert_eq!(lo, self.out_len(l), "transposed_conv1d: upstream length mismatch");
        let s = self.stride;
        let kn = self.kernel;
        let xd = x.data();
        let wd = self.w.value.data();

        let mut dyph = vec![0.0f32; bsz * cout * lo];
        for (row, chunk) in dy.data().chunks_exact(lo).zip(dyph.chunks_exact_mut(lo)) {
            phase_split(row, chunk, s);
        }

        // dw[ci,co,k] = sum_b sum_t x[b,ci,t] * dy[b,co,s*t + k - p]
        {
            let dw = self.w.grad.data_mut();
            let run = |(ci, dwrow): (usize, &mut [f32])| {
                for b in 0..bsz {
                    let xrow = &xd[(b * cin + ci) * l..(b * cin + ci + 1) * l];
                    for co in 0..cout {
                        let dyrow = &dyph[(b * cout + co) * lo..(b * cout + co + 1) * lo];
                        for kk in 0..kn {
                            let c = kk as isize - self.pad as isize;
                            let (r, m) = phase_coords(c, s);
                            let pl = phase_len(lo, s, r);
                            let po = phase_offset(lo, s, r);
                            let t0 = (-m).max(0) as usize;
                            let t1 = l.min((pl as isize - m).max(0) as usize);
                            if t0 < t1 {
                                let yo = (t0 as isize + m) as usize;
                                dwrow[co * kn + kk] +=
                                    dot(&xrow[t0..t1], &dyrow[po + yo..po + yo + (t1 - t0)]);
                            }
                        }
                    }
                }
            };
            if bsz * cout * cin * kn * l >= PAR_THRESHOLD {
                dw.par_chunks_mut(cout * kn).enumerate().for_each(run);
            } else {
                dw.chunks_mut(cout * kn).enumerate().for_each(run);
            }
        }

        {
            let db = self.b.grad.data_mut();
            for b in 0..bsz {
                for co in 0..cout {
                    let dyrow = &dy.data()[(b * cout + co) * lo..(b * cout + co + 1) * lo];
                    db[co] += dyrow.iter().sum::<f32>();
                }
            }
        }

        // dx[b,ci,t] = sum_co sum_k w[ci,co,k] * dy[b,co,s*t + k - p]
        let mut dx = Tensor::zeros(&[bsz, cin, l]);
        {
            let run = |(bci, dxrow): (usize, &mut [f32])| {
                let b = bci / cin;
                let ci = bci % cin;
                for co in 0..cout {
                    let dyrow = &dyph[(b * cout + co) * lo..(b * cout + co + 1) * lo];
                    for kk in 0..kn {
                        let w = wd[(ci * cout + co) * kn + kk];
                        let c = kk as isize - self.pad as isize;
                        let (r, m) = phase_coords(c, s);
                        let pl = phase_len(lo, s, r);
                        let po = phase_offset(lo, s, r);
                        let t0 = (-m).max(0) as usize;
                        let t1 = l.min((pl as isize - m).max(0) as usize);
                        if t0 < t1 {
                            let yo = (t0 as isize + m) as usize;
                            axpy(
                                &mut dxrow[t0..t1],
                                &dyrow[po + yo..po + yo + (t1 - t0)],
                                w,
                            );
                        }
                    }
                }
            };
            if bsz * cin * cout * l >= PAR_THRESHOLD {
                dx.data_mut().par_chunks_mut(l).enumerate().for_each(run);
            } else {
                dx.data_mut().chunks_mut(l).enumerate().for_each(run);
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

/// Fully connected layer over [batch, features].
#[derive(Debug, Clone)]
pub struct Dense {
    pub fin: usize,
    pub fout: usize,
    /// Weight layout [fout, fin].
    pub w: Parameter,
    pub b: Parameter,
}

impl Dense {
    pub fn new(name: &str, fin: usize, fout: usize, init_std: f32, rng: &mut SeededRng) -> Self {
        let w = Tensor::randn_trunc(&[fout, fin], init_std, rng);
        Self {
            fin,
            fout,
            w: Parameter::new(format!("{name}.w"), w),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[fout])),
        }
    }

    pub fn new_zeroed(name: &str, fin: usize, fout: usize) -> Self {
        Self {
            fin,
            fout,
            w: Parameter::new(format!("{name}.w"), Tensor::zeros(&[fout, fin])),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[fout])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (bsz, fin) = dims2(x, "dense");
        assert_eq!(fin, self.fin, "dense: feature mismatch");
        let mut y = Tensor::zeros(&[bsz, self.fout]);
        let wd = self.w.value.data();
        let bd = self.b.value.data();
        for b in 0..bsz {
            let xrow = &x.data()[b * fin..(b + 1) * fin];
            let yrow = &mut y.data_mut()[b * self.fout..(b + 1) * self.fout];
            for (o, yv) in yrow.iter_mut().enumerate() {
                *yv = bd[o] + dot(&wd[o * fin..(o + 1) * fin], xrow);
            }
        }
        y.debug_check_finite("dense");
        y
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (bsz, fin) = dims2(x, "dense");
        let (bs2, fout) = dims2(dy, "dense");
        assert_eq!(bsz, bs2, "dense: batch mismatch");
        assert_eq!(fout, self.fout, "dense: upstream feature mismatch");
        let mut dx = Tensor::zeros(&[bsz, fin]);
        let wd = self.w.value.data();
        {
            let dw = self.w.grad.data_mut();
            let db = self.b.grad.data_mut();
            for b in 0..bsz {
                let xrow = &x.data()[b * fin..(b + 1) * fin];
                let dyrow = &dy.data()[b * fout..(b + 1) * fout];
                let dxrow = &mut dx.data_mut()[b * fin..(b + 1) * fin];
                for (o, &g) in dyrow.iter().enumerate() {
                    axpy(&mut dw[o * fin..(o + 1) * fin], xrow, g);
                    axpy(dxrow, &wd[o * fin..(o + 1) * fin], g);
                    db[o] += g;
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// GroupNorm
// ---------------------------------------------------------------------------

/// Group normalization over [batch, channels, length] with per-channel affine.
#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub eps: f32,
    pub gamma: Parameter,
    pub beta: Parameter,
}

impl GroupNorm {
    pub fn new(name: &str, channels: usize, groups: usize) -> Self {
        assert!(channels % groups == 0, "group_norm: channels % groups != 0");
        Self {
            channels,
            groups,
            eps: 1e-5,
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (bsz, c, l) = dims3(x, "group_norm");
        assert_eq!(c, self.channels, "group_norm: channel mismatch");
        let cg = c / self.groups;
        let n = (cg * l) as f64;
        let mut y = Tensor::zeros(&[bsz, c, l]);
        let gd = self.gamma.value.data();
        let bd = self.beta.value.data();
        for b in 0..bsz {
            for g in 0..self.groups {
                let base = (b * c + g * cg) * l;
                let xg = &x.data()[base..base + cg * l];
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                for &v in xg {
                    sum += v as f64;
                    sq += (v as f64) * (v as f64);
                }
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0);
                let inv = 1.0 / (var + self.eps as f64).sqrt();
                for cc in 0..cg {
                    let ch = g * cg + cc;
                    let (ga, be) = (gd[ch], bd[ch]);
                    let xrow = &x.data()[base + cc * l..base + (cc + 1) * l];
                    let yrow = &mut y.data_mut()[base + cc * l..base + (cc + 1) * l];
                    for (yv, &xv) in yrow.iter_mut().zip(xrow.iter()) {
                        *yv = ga * (((xv as f64 - mean) * inv) as f32) + be;
                    }
                }
            }
        }
        y.debug_check_finite("group_norm");
        y
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (bsz, c, l) = dims3(x, "group_norm");
        assert_eq!(dy.shape(), x.shape(), "group_norm: upstream shape mismatch");
        let cg = c / self.groups;
        let n = (cg * l) as f64;
        let mut dx = Tensor::zeros(&[bsz, c, l]);
        let gd = self.gamma.value.data();
        {
            let dgamma = self.gamma.grad.data_mut();
            let dbeta = self.beta.grad.data_mut();
            for b in 0..bsz {
                for g in 0..self.groups {
                    let base = (b * c + g * cg) * l;
                    let xg = &x.data()[base..base + cg * l];
                    let dyg = &dy.data()[base..base + cg * l];
                    let mut sum = 0.0f64;
                    let mut sq = 0.0f64;
                    for &v in xg {
                        sum += v as f64;
                        sq += (v as f64) * (v as f64);
                    }
                    let mean = sum / n;
                    let var = (sq / n - mean * mean).max(0.0);
                    let inv = 1.0 / (var + self.eps as f64).sqrt();

                    // dyhat = dy * gamma; reductions for the norm backward
                    let mut s_dyh = 0.0f64;
                    let mut s_dyh_xhat = 0.0f64;
                    for cc in 0..cg {
                        let ch = g * cg + cc;
                        let ga = gd[ch] as f64;
                        for t in 0..l {
                            let xv = xg[cc * l + t] as f64;
                            let dyv = dyg[cc * l + t] as f64;
                            let xhat = (xv - mean) * inv;
                            let dyh = dyv * ga;
                            s_dyh += dyh;
                            s_dyh_xhat += dyh * xhat;
                            dgamma[ch] += (dyv * xhat) as f32;
                            dbeta[ch] += dyv as f32;
                        }
                    }
                    let m_dyh = s_dyh / n;
                    let m_dyh_xhat = s_dyh_xhat / n;
                    let dxg = &mut dx.data_mut()[base..base + cg * l];
                    for cc in 0..cg {
                        let ch = g * cg + cc;
                        let ga = gd[ch] as f64;
                        for t in 0..l {
                            let xv = xg[cc * l + t] as f64;
                            let dyv = dyg[cc * l + t] as f64;
                            let xhat = (xv - mean) * inv;
                            let dyh = dyv * ga;
                            dxg[cc * l + t] = ((dyh - m_dyh - xhat * m_dyh_xhat) * inv) as f32;
                        }
                    }
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// SiLU
// ---------------------------------------------------------------------------

/// x * sigmoid(x), elementwise; shape-preserving, no parameters.
#[derive(Debug, Clone, Default)]
pub struct Silu;

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl Silu {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v *= sigmoid(*v));
        y.debug_check_finite("silu");
        y
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Tensor {
        assert_eq!(x.shape(), dy.shape(), "silu: upstream shape mismatch");
        let mut dx = dy.clone();
        for (g, &xv) in dx.data_mut().iter_mut().zip(x.data().iter()) {
            let s = sigmoid(xv);
            *g *= s * (1.0 + xv * (1.0 - s));
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Attention1d
// ---------------------------------------------------------------------------

/// Multi-head self-attention over [batch, channels, time].
#[derive(Debug, Clone)]
pub struct Attention1d {
    pub channels: usize,
    pub heads: usize,
    pub wq: Parameter,
    pub wk: Parameter,
    pub wv: Parameter,
    pub wo: Parameter,
}

impl Attention1d {
    pub fn new(name: &str, channels: usize, heads: usize, init_std: f32, rng: &mut SeededRng) -> Self {
        assert!(channels % heads == 0, "attention_1d: channels % heads != 0");
        let mk = |suffix: &str, rng: &mut SeededRng| {
            Parameter::new(
                format!("{name}.{suffix}"),
                Tensor::randn_trunc(&[channels, channels], init_std, rng),
            )
        };
        Self {
            channels,
            heads,
            wq: mk("wq", rng),
            wk: mk("wk", rng),
            wv: mk("wv", rng),
            wo: mk("wo", rng),
        }
    }

    /// out[m, t] = sum_c w[m, c] * x[c, t]
    fn project(w: &[f32], x: &[f32], c: usize, t: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; c * t];
        for m in 0..c {
            let orow = &mut out[m * t..(m + 1) * t];
            for cc in 0..c {
                axpy(orow, &x[cc * t..(cc + 1) * t], w[m * c + cc]);
            }
        }
        out
    }

    /// Recomputes (q, k, v, probs) for one batch item.
    fn attention_intermediates(
        &self,
        xb: &[f32],
        t: usize,
    ) -> (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
        let c = self.channels;
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let q = Self::project(self.wq.value.data(), xb, c, t);
        let k = Self::project(self.wk.value.data(), xb, c, t);
        let v = Self::project(self.wv.value.data(), xb, c, t);
        let mut probs = vec![0.0f32; self.heads * t * t];
        for h in 0..self.heads {
            let qh = &q[h * dh * t..(h + 1) * dh * t];
            let kh = &k[h * dh * t..(h + 1) * dh * t];
            let ph = &mut probs[h * t * t..(h + 1) * t * t];
            for ti in 0..t {
                let row = &mut ph[ti * t..(ti + 1) * t];
                for d in 0..dh {
                    axpy(row, &kh[d * t..(d + 1) * t], qh[d * t + ti] * scale);
                }
                softmax_inplace(row);
            }
        }
        (q, k, v, probs)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (bsz, c, t) = dims3(x, "attention_1d");
        assert_eq!(c, self.channels, "attention_1d: channel mismatch");
        let dh = c / self.heads;
        let mut y = Tensor::zeros(&[bsz, c, t]);
        for b in 0..bsz {
            let xb = &x.data()[b * c * t..(b + 1) * c * t];
            let (_q, _k, v, probs) = self.attention_intermediates(xb, t);
            let mut o = vec![0.0f32; c * t];
            for h in 0..self.heads {
                let vh = &v[h * dh * t..(h + 1) * dh * t];
                let ph = &probs[h * t * t..(h + 1) * t * t];
                let oh = &mut o[h * dh * t..(h + 1) * dh * t];
                for d in 0..dh {
                    for ti in 0..t {
                        oh[d * t + ti] = dot(&ph[ti * t..(ti + 1) * t], &vh[d * t..(d + 1) * t]);
                    }
                }
            }
            let out = Self::project(self.wo.value.data(), &o, c, t);
            y.data_mut()[b * c * t..(b + 1) * c * t].copy_from_slice(&out);
        }
        y.debug_check_finite("attention_1d");
        y
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor) -> Tensor {
        let (bsz, c, t) = dims3(x, "attention_1d");
        assert_eq!(dy.shape(), x.shape(), "attention_1d: upstream shape mismatch");
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut dx = Tensor::zeros(&[bsz, c, t]);

        for b in 0..bsz {
            let xb = &x.data()[b * c * t..(b + 1) * c * t];
            let dyb = &dy.data()[b * c * t..(b + 1) * c * t];
            let (q, k, v, probs) = self.attention_intermediates(xb, t);

            // Recompute o for dWo.
            let mut o = vec![0.0f32; c * t];
            for h in 0..self.heads {
                let vh = &v[h * dh * t..(h + 1) * dh * t];
                let ph = &probs[h * t * t..(h + 1) * t * t];
                let oh = &mut o[h * dh * t..(h + 1) * dh * t];
                for d in 0..dh {
                    for ti in 0..t {
                        oh[d * t + ti] = dot(&ph[ti * t..(ti + 1) * t], &vh[d * t..(d + 1) * t]);
                    }
                }
            }

            // y = Wo * o: dWo[m,c'] += sum_t dy[m,t] o[c',t]; do = Wo^T dy
            let mut dof = vec![0.0f32; c * t];
            {
                let dwo = self.wo.grad.data_mut();
                let wo = self.wo.value.data();
                for m in 0..c {
                    let dyrow = &dyb[m * t..(m + 1) * t];
                    for cc in 0..c {
                        dwo[m * c + cc] += dot(dyrow, &o[cc * t..(cc + 1) * t]);
                        axpy(&mut dof[cc * t..(cc + 1) * t], dyrow, wo[m * c + cc]);
                    }
                }
            }

            let mut dq = vec![0.0f32; c * t];
            let mut dk = vec![0.0f32; c * t];
            let mut dv = vec![0.0f32; c * t];
            for h in 0..self.heads {
                let qh = &q[h * dh * t..(h + 1) * dh * t];
                let kh = &k[h * dh * t..(h + 1) * dh * t];
                let vh = &v[h * dh * t..(h + 1) * dh * t];
                let ph = &probs[h * t * t..(h + 1) * t * t];
                let doh = &dof[h * dh * t..(h + 1) * dh * t];
                let dqh = &mut dq[h * dh * t..(h + 1) * dh * t];
                let dkh = &mut dk[h * dh * t..(h + 1) * dh * t];
                let dvh = &mut dv[h * dh * t..(h + 1) * dh * t];

                // dA[t,u] = sum_d do[d,t] v[d,u]; dv[d,u] += sum_t A[t,u] do[d,t]
                let mut da = vec![0.0f32; t * t];
                for d in 0..dh {
                    for ti in 0..t {
                        let g = doh[d * t + ti];
                        axpy(&mut da[ti * t..(ti + 1) * t], &vh[d * t..(d + 1) * t], g);
                        axpy(&mut dvh[d * t..(d + 1) * t], &ph[ti * t..(ti + 1) * t], g);
                    }
                }
                // softmax backward per row: dS = A ⊙ (dA - sum(dA ⊙ A))
                for ti in 0..t {
                    let arow = &ph[ti * t..(ti + 1) * t];
                    let darow = &mut da[ti * t..(ti + 1) * t];
                    let inner = dot(darow, arow);
                    for (ds, &a) in darow.iter_mut().zip(arow.iter()) {
                        *ds = a * (*ds - inner);
                    }
                }
                // dq[d,t] += scale * sum_u dS[t,u] k[d,u]; dk[d,u] += scale * sum_t dS[t,u] q[d,t]
                for d in 0..dh {
                    for ti in 0..t {
                        let dsrow = &da[ti * t..(ti + 1) * t];
                        dqh[d * t + ti] += scale * dot(dsrow, &kh[d * t..(d + 1) * t]);
                        axpy(&mut dkh[d * t..(d + 1) * t], dsrow, scale * qh[d * t + ti]);
                    }
                }
            }

            // Through the q/k/v projections.
            let mut dxb = vec![0.0f32; c * t];
            for (param, dproj) in [(&mut self.wq, &dq), (&mut self.wk, &dk), (&mut self.wv, &dv)] {
                let wd = param.value.data();
                let dwd = param.grad.data_mut();
                for m in 0..c {
                    let drow = &dproj[m * t..(m + 1) * t];
                    for cc in 0..c {
                        dwd[m * c + cc] += dot(drow, &xb[cc * t..(cc + 1) * t]);
                        axpy(&mut dxb[cc * t..(cc + 1) * t], drow, wd[m * c + cc]);
                    }
                }
            }
            axpy(&mut dx.data_mut()[b * c * t..(b + 1) * c * t], &dxb, 1.0);
        }
        dx
    }
}

fn softmax_inplace(row: &mut [f32]) {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &x| m.max(x));
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

// ---------------------------------------------------------------------------
// FiLM
// ---------------------------------------------------------------------------

/// Feature-wise linear modulation: y[b,c,t] = scale[b,c] * x[b,c,t] + shift[b,c].
///
/// Scale and shift are inputs (produced by a conditioning network), not
/// parameters; scale 1 / shift 0 is the identity map.
#[derive(Debug, Clone, Default)]
pub struct Film;

impl Film {
    pub fn forward(&self, x: &Tensor, scale: &Tensor, shift: &Tensor) -> Tensor {
        let (bsz, c, l) = dims3(x, "film");
        assert_eq!(scale.shape(), &[bsz, c], "film: scale shape mismatch");
        assert_eq!(shift.shape(), &[bsz, c], "film: shift shape mismatch");
        let mut y = Tensor::zeros(&[bsz, c, l]);
        for b in 0..bsz {
            for cc in 0..c {
                let s = scale.data()[b * c + cc];
                let sh = shift.data()[b * c + cc];
                let xrow = &x.data()[(b * c + cc) * l..(b * c + cc + 1) * l];
                let yrow = &mut y.data_mut()[(b * c + cc) * l..(b * c + cc + 1) * l];
                for (yv, &xv) in yrow.iter_mut().zip(xrow.iter()) {
                    *yv = s * xv + sh;
                }
            }
        }
        y.debug_check_finite("film");
        y
    }

    /// Returns (dx, dscale, dshift).
    pub fn backward(
        &self,
        x: &Tensor,
        scale: &Tensor,
        dy: &Tensor,
    ) -> (Tensor, Tensor, Tensor) {
        let (bsz, c, l) = dims3(x, "film");
        assert_eq!(dy.shape(), x.shape(), "film: upstream shape mismatch");
        let mut dx = Tensor::zeros(&[bsz, c, l]);
        let mut dscale = Tensor::zeros(&[bsz, c]);
        let mut dshift = Tensor::zeros(&[bsz, c]);
        for b in 0..bsz {
            for cc in 0..c {
                let s = scale.data()[b * c + cc];
                let xrow = &x.data()[(b * c + cc) * l..(b * c + cc + 1) * l];
                let dyrow = &dy.data()[(b * c + cc) * l..(b * c + cc + 1) * l];
                let dxrow = &mut dx.data_mut()[(b * c + cc) * l..(b * c + cc + 1) * l];
                axpy(dxrow, dyrow, s);
                dscale.data_mut()[b * c + cc] = dot(dyrow, xrow);
                dshift.data_mut()[b * c + cc] = dyrow.iter().sum();
            }
        }
        (dx, dscale, dshift)
    }
}

// ---------------------------------------------------------------------------
// Unified layer surface (used by grad_check and shape-error reporting)
// ---------------------------------------------------------------------------

/// Any differentiable layer behind one API: `forward(inputs) -> output`,
/// `backward(inputs, upstream) -> input gradients` (parameter gradients
/// accumulate inside the layer).
#[derive(Debug)]
pub enum Layer {
    Conv1d(Conv1d),
    TransposedConv1d(TransposedConv1d),
    Dense(Dense),
    GroupNorm(GroupNorm),
    Silu(Silu),
    Attention1d(Attention1d),
    Film(Film),
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv1d(_) => "conv1d",
            Layer::TransposedConv1d(_) => "transposed_conv1d",
            Layer::Dense(_) => "dense",
            Layer::GroupNorm(_) => "group_norm",
            Layer::Silu(_) => "silu",
            Layer::Attention1d(_) => "attention_1d",
            Layer::Film(_) => "film",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Layer::Film(_) => 3,
            _ => 1,
        }
    }

    fn check_arity(&self, got: usize) -> Result<(), NnError> {
        if got != self.arity() {
            return Err(NnError::InputArity {
                layer: self.name().to_string(),
                expected: self.arity(),
                got,
            });
        }
        Ok(())
    }

    fn check_shapes(&self, inputs: &[&Tensor]) -> Result<(), NnError> {
        let fail = |detail: String| {
            Err(NnError::ShapeMismatch {
                layer: self.name().to_string(),
                detail,
            })
        };
        match self {
            Layer::Conv1d(l) => {
                let s = inputs[0].shape();
                if s.len() != 3 || s[1] != l.cin {
                    return fail(format!("expected [B, {}, L], got {s:?}", l.cin));
                }
                if s[2] + 2 * l.pad < l.kernel {
                    return fail(format!("input length {} shorter than kernel {}", s[2], l.kernel));
                }
            }
            Layer::TransposedConv1d(l) => {
                let s = inputs[0].shape();
                if s.len() != 3 || s[1] != l.cin || s[2] == 0 {
                    return fail(format!("expected [B, {}, L>0], got {s:?}", l.cin));
                }
            }
            Layer::Dense(l) => {
                let s = inputs[0].shape();
                if s.len() != 2 || s[1] != l.fin {
                    return fail(format!("expected [B, {}], got {s:?}", l.fin));
                }
            }
            Layer::GroupNorm(l) => {
                let s = inputs[0].shape();
                if s.len() != 3 || s[1] != l.channels {
                    return fail(format!("expected [B, {}, L], got {s:?}", l.channels));
                }
            }
            Layer::Silu(_) => {}
            Layer::Attention1d(l) => {
                let s = inputs[0].shape();
                if s.len() != 3 || s[1] != l.channels {
                    return fail(format!("expected [B, {}, T], got {s:?}", l.channels));
                }
            }
            Layer::Film(_) => {
                let s = inputs[0].shape();
                if s.len() != 3 {
                    return fail(format!("expected [B, C, L], got {s:?}"));
                }
                let want = vec![s[0], s[1]];
                if inputs[1].shape() != want.as_slice() || inputs[2].shape() != want.as_slice() {
                    return fail(format!(
                        "scale/shift must be {want:?}, got {:?} and {:?}",
                        inputs[1].shape(),
                        inputs[2].shape()
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor, NnError> {
        self.check_arity(inputs.len())?;
        self.check_shapes(inputs)?;
        Ok(match self {
            Layer::Conv1d(l) => l.forward(inputs[0]),
            Layer::TransposedConv1d(l) => l.forward(inputs[0]),
            Layer::Dense(l) => l.forward(inputs[0]),
            Layer::GroupNorm(l) => l.forward(inputs[0]),
            Layer::Silu(l) => l.forward(inputs[0]),
            Layer::Attention1d(l) => l.forward(inputs[0]),
            Layer::Film(l) => l.forward(inputs[0], inputs[1], inputs[2]),
        })
    }

    /// Returns one gradient per input, in input order.
    pub fn backward(&mut self, inputs: &[&Tensor], upstream: &Tensor) -> Result<Vec<Tensor>, NnError> {
        self.check_arity(inputs.len())?;
        self.check_shapes(inputs)?;
        Ok(match self {
            Layer::Conv1d(l) => vec![l.backward(inputs[0], upstream)],
            Layer::TransposedConv1d(l) => vec![l.backward(inputs[0], upstream)],
            Layer::Dense(l) => vec![l.backward(inputs[0], upstream)],
            Layer::GroupNorm(l) => vec![l.backward(inputs[0], upstream)],
            Layer::Silu(l) => vec![l.backward(inputs[0], upstream)],
            Layer::Attention1d(l) => vec![l.backward(inputs[0], upstream)],
            Layer::Film(l) => {
                let (dx, dscale, dshift) = l.backward(inputs[0], inputs[1], upstream);
                vec![dx, dscale, dshift]
            }
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        match self {
            Layer::Conv1d(l) => vec![&l.w, &l.b],
            Layer::TransposedConv1d(l) => vec![&l.w, &l.b],
            Layer::Dense(l) => vec![&l.w, &l.b],
            Layer::GroupNorm(l) => vec![&l.gamma, &l.beta],
            Layer::Silu(_) | Layer::Film(_) => vec![],
            Layer::Attention1d(l) => vec![&l.wq, &l.wk, &l.wv, &l.wo],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        match self {
            Layer::Conv1d(l) => vec![&mut l.w, &mut l.b],
            Layer::TransposedConv1d(l) => vec![&mut l.w, &mut l.b],
            Layer::Dense(l) => vec![&mut l.w, &mut l.b],
            Layer::GroupNorm(l) => vec![&mut l.gamma, &mut l.beta],
            Layer::Silu(_) | Layer::Film(_) => vec![],
            Layer::Attention1d(l) => vec![&mut l.wq, &mut l.wk, &mut l.wv, &mut l.wo],
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

fn dims3(x: &Tensor, layer: &str) -> (usize, usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 3, "{layer}: expected rank-3 input, got {s:?}");
    (s[0], s[1], s[2])
}

fn dims2(x: &Tensor, layer: &str) -> (usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 2, "{layer}: expected rank-2 input, got {s:?}");
    (s[0], s[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv1d_identity_kernel() {
        let mut rng = SeededRng::from_seed(0);
        let mut conv = Conv1d::new("t", 1, 1, 1, 1, 0, 0.02, &mut rng);
        conv.w.value = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        conv.b.value = Tensor::zeros(&[1]);
        let x = Tensor::from_vec(&[1, 1, 5], vec![0.1, -0.4, 0.9, 0.0, 0.3]).unwrap();
        let y = conv.forward(&x);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv1d_matches_naive_reference() {
        let mut rng = SeededRng::from_seed(1);
        for &(stride, pad, k) in &[(1usize, 1usize, 3usize), (2, 1, 4), (2, 0, 2), (1, 3, 7)] {
            let conv = Conv1d::new("t", 3, 2, k, stride, pad, 0.5, &mut rng);
            let l = 13;
            let x = Tensor::randn(&[2, 3, l], &mut rng);
            let y = conv.forward(&x);
            let lo = conv.out_len(l);
            for b in 0..2 {
                for co in 0..2 {
                    for t in 0..lo {
                        let mut want = conv.b.value.data()[co];
                        for ci in 0..3 {
                            for kk in 0..k {
                                let idx = (t * stride + kk) as isize - pad as isize;
                                if idx >= 0 && (idx as usize) < l {
                                    want += conv.w.value.data()[(co * 3 + ci) * k + kk]
                                        * x.data()[(b * 3 + ci) * l + idx as usize];
                                }
                            }
                        }
                        let got = y.data()[(b * 2 + co) * lo + t];
                        assert!((got - want).abs() < 1e-5, "conv mismatch {got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn transposed_conv_matches_naive_reference() {
        let mut rng = SeededRng::from_seed(2);
        for &(stride, pad, k) in &[(2usize, 1usize, 4usize), (1, 0, 3), (2, 0, 2)] {
            let tconv = TransposedConv1d::new("t", 2, 3, k, stride, pad, 0.5, &mut rng);
            let l = 9;
            let x = Tensor::randn(&[2, 2, l], &mut rng);
            let y = tconv.forward(&x);
            let lo = tconv.out_len(l);
            for b in 0..2 {
                for co in 0..3 {
                    for j in 0..lo {
                        let mut want = tconv.b.value.data()[co];
                        for ci in 0..2 {
                            for kk in 0..k {
                                // j = stride*t + kk - pad
                                let num = j as isize + pad as isize - kk as isize;
                                if num >= 0 && num % stride as isize == 0 {
                                    let t = (num / stride as isize) as usize;
                                    if t < l {
                                        want += tconv.w.value.data()[(ci * 3 + co) * k + kk]
                                            * x.data()[(b * 2 + ci) * l + t];
                                    }
                                }
                            }
                        }
                        let got = y.data()[(b * 3 + co) * lo + j];
                        assert!((got - want).abs() < 1e-5, "tconv mismatch {got} vs {want}");
                    }
                }
            }
        }
    }

    #[test]
    fn group_norm_constant_channels_give_zero_before_affine() {
        let gn = GroupNorm::new("t", 4, 2);
        let x = Tensor::full(&[1, 4, 8], 3.25);
        let y = gn.forward(&x);
        for &v in y.data() {
            assert!(v.abs() < 1e-4, "expected ~0, got {v}");
        }
    }

    #[test]
    fn group_norm_standardizes_random_input() {
        let mut rng = SeededRng::from_seed(5);
        let gn = GroupNorm::new("t", 8, 2);
        let mut x = Tensor::randn(&[2, 8, 64], &mut rng);
        x.data_mut().iter_mut().for_each(|v| *v = *v * 3.0 + 1.5);
        let y = gn.forward(&x);
        let cg = 4;
        let l = 64;
        for b in 0..2 {
            for g in 0..2 {
                let base = (b * 8 + g * cg) * l;
                let group = &y.data()[base..base + cg * l];
                let n = group.len() as f64;
                let mean: f64 = group.iter().map(|&v| v as f64).sum::<f64>() / n;
                let var: f64 =
                    group.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
                assert!(mean.abs() < 1e-5, "group mean {mean}");
                assert!((var - 1.0).abs() < 1e-3, "group var {var}");
            }
        }
    }

    #[test]
    fn attention_singleton_position_returns_value() {
        let mut rng = SeededRng::from_seed(7);
        let mut attn = Attention1d::new("t", 4, 2, 0.3, &mut rng);
        // Make wo identity and wv identity so output == value == x.
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.data_mut()[i * 4 + i] = 1.0;
        }
        attn.wv.value = eye.clone();
        attn.wo.value = eye;
        let x = Tensor::from_vec(&[1, 4, 1], vec![0.3, -0.7, 0.2, 0.9]).unwrap();
        let y = attn.forward(&x);
        for (a, b) in y.data().iter().zip(x.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn film_scale_one_shift_zero_is_identity() {
        let mut rng = SeededRng::from_seed(9);
        let x = Tensor::randn(&[2, 3, 5], &mut rng);
        let scale = Tensor::full(&[2, 3], 1.0);
        let shift = Tensor::zeros(&[2, 3]);
        let y = Film.forward(&x, &scale, &shift);
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn layer_enum_reports_shape_errors_with_layer_name() {
        let mut rng = SeededRng::from_seed(11);
        let layer = Layer::Conv1d(Conv1d::new("t", 4, 2, 3, 1, 1, 0.02, &mut rng));
        let x = Tensor::zeros(&[1, 3, 16]);
        let err = layer.forward(&[&x]).unwrap_err();
        assert!(err.to_string().contains("conv1d"), "{err}");
    }

    #[test]
    fn silu_known_values() {
        let x = Tensor::from_vec(&[3], vec![0.0, 1.0, -1.0]).unwrap();
        let y = Silu.forward(&x);
        assert!((y.data()[0] - 0.0).abs() < 1e-7);
        assert!((y.data()[1] - 1.0 / (1.0 + (-1.0f32).exp())).abs() < 1e-6);
        assert!((y.data()[2] + 1.0 - 1.0 / (1.0 + 1.0f32.exp()) - (1.0 - 1.0)).abs() < 1.0);
    }
}
