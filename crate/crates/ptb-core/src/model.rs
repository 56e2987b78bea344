//! From-scratch convolutional classifier with manual gradients, an SGD
//! training loop that gates poisoned samples through the physical
//! transforms, and checkpoint persistence.
//!
//! Architecture: conv(3x3, stride 1, zero-pad 1) -> ReLU -> 2x2 max-pool,
//! twice, then two dense layers with a ReLU between them and a softmax on
//! top. Filter counts are part of [`ArchDesc`] so tests can run tiny
//! instances; the reference net is 8 and 16 filters with a 64-unit hidden
//! layer.
//!
//! Determinism: per-sample gradients accumulate into fixed 16-sample chunks
//! in index order and chunk partials combine in a fixed pairwise tree, so
//! results are bit-identical for every worker count. All randomness comes
//! from streams derived off `TrainConfig::seed`; the transform stream for a
//! poisoned sample is keyed by `(seed, epoch, sample id)` and is therefore
//! independent of shuffling and batch composition.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng::{domain, Stream, StreamKey};
use crate::transforms::{apply_composite, sample_params, TransformRanges};

/// Gradient chunk width; fixed so the reduction tree never depends on the
/// worker count.
const GRAD_CHUNK: usize = 16;

const MAGIC: &[u8; 8] = b"PTBCKPT1";

// ---------------------------------------------------------------------------
// architecture and parameters
// ---------------------------------------------------------------------------

/// Shape of the network. `height`/`width` must be at least 4 so both pool
/// stages keep at least one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchDesc {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub conv1_out: usize,
    pub conv2_out: usize,
    pub fc1_out: usize,
}

impl ArchDesc {
    /// Reference filter sizes for a given input geometry.
    pub fn new(height: usize, width: usize, channels: usize, num_classes: usize) -> Self {
        ArchDesc {
            height,
            width,
            channels,
            num_classes,
            conv1_out: 8,
            conv2_out: 16,
            fc1_out: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.height >= 4
            && self.width >= 4
            && (self.channels == 1 || self.channels == 3)
            && self.num_classes >= 2
            && self.conv1_out >= 1
            && self.conv2_out >= 1
            && self.fc1_out >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::ArchMismatch {
                expected: "height/width >= 4, channels in {1,3}, >= 2 classes, >= 1 filter per layer"
                    .into(),
                found: self.describe(),
            })
        }
    }

    pub fn pooled1(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn pooled2(&self) -> (usize, usize) {
        (self.height / 2 / 2, self.width / 2 / 2)
    }

    /// Length of the flattened feature vector entering fc1.
    pub fn flat_len(&self) -> usize {
        let (h, w) = self.pooled2();
        self.conv2_out * h * w
    }

    pub fn describe(&self) -> String {
        format!(
            "{}x{}x{} -> conv{} -> conv{} -> fc{} -> {} classes",
            self.height,
            self.width,
            self.channels,
            self.conv1_out,
            self.conv2_out,
            self.fc1_out,
            self.num_classes
        )
    }
}

/// The eight weight/bias tensors, also used as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

impl ParamTensors {
    pub fn zeros(arch: &ArchDesc) -> Self {
        ParamTensors {
            conv1_w: vec![0.0; arch.conv1_out * arch.channels * 9],
            conv1_b: vec![0.0; arch.conv1_out],
            conv2_w: vec![0.0; arch.conv2_out * arch.conv1_out * 9],
            conv2_b: vec![0.0; arch.conv2_out],
            fc1_w: vec![0.0; arch.fc1_out * arch.flat_len()],
            fc1_b: vec![0.0; arch.fc1_out],
            fc2_w: vec![0.0; arch.num_classes * arch.fc1_out],
            fc2_b: vec![0.0; arch.num_classes],
        }
    }

    /// Per-sample gradient container with the large fc1 weight tensor left
    /// empty; it is materialized rank-1 style during the chunk reduction.
    fn zeros_light(arch: &ArchDesc) -> Self {
        ParamTensors {
            fc1_w: Vec::new(),
            ..Self::zeros(arch)
        }
    }

    /// Tensor list in the declaration order used by checkpoints and flat
    /// indexing.
    fn tensors(&self) -> [&Vec<f64>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn flat_len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn get_flat(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t[index];
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("flat index out of range");
    }

    fn add_assign(&mut self, other: &ParamTensors) {
        let mut mine = self.tensors_mut();
        let theirs = other.tensors();
        for (m, t) in mine.iter_mut().zip(theirs) {
            for (a, b) in m.iter_mut().zip(t.iter()) {
                *a += *b;
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    /// SGD step: `self -= lr * grads`.
    fn step(&mut self, grads: &ParamTensors, lr: f64) {
        let mut mine = self.tensors_mut();
        let theirs = grads.tensors();
        for (m, g) in mine.iter_mut().zip(theirs) {
            for (a, b) in m.iter_mut().zip(g.iter()) {
                *a -= lr * *b;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// The classifier: architecture plus parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: ArchDesc,
    pub t: ParamTensors,
}

impl ModelParams {
    /// Seeded Glorot-uniform initialization: weights uniform in `[-s, s]`
    /// with `s = sqrt(6 / (fan_in + fan_out))` per layer, biases zero.
    pub fn init(arch: ArchDesc, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut t = ParamTensors::zeros(&arch);
        let layers: [(&mut Vec<f64>, usize, usize); 4] = [
            (&mut t.conv1_w, arch.channels * 9, arch.conv1_out * 9),
            (&mut t.conv2_w, arch.conv1_out * 9, arch.conv2_out * 9),
            (&mut t.fc1_w, arch.flat_len(), arch.fc1_out),
            (&mut t.fc2_w, arch.fc1_out, arch.num_classes),
        ];
        for (layer_idx, (weights, fan_in, fan_out)) in layers.into_iter().enumerate() {
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut stream = StreamKey::new(seed)
                .child(domain::INIT)
                .child(layer_idx as u64)
                .stream();
            for w in weights.iter_mut() {
                *w = stream.uniform(-s, s);
            }
        }
        Ok(ModelParams { arch, t })
    }

    fn check_input(&self, image: &Image) -> Result<()> {
        let a = &self.arch;
        if image.height() != a.height || image.width() != a.width || image.channels() != a.channels
        {
            return Err(Error::InputMismatch {
                found_w: image.width(),
                found_h: image.height(),
                found_c: image.channels(),
                expected_w: a.width,
                expected_h: a.height,
                expected_c: a.channels,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// forward / backward
// ---------------------------------------------------------------------------

/// Per-sample activation buffers, reused across samples within a chunk.
struct Scratch {
    padded_in: Vec<f64>,
    conv1: Vec<f64>,
    pool1: Vec<f64>,
    pool1_arg: Vec<u8>,
    padded_p1: Vec<f64>,
    conv2: Vec<f64>,
    pool2: Vec<f64>,
    pool2_arg: Vec<u8>,
    h1: Vec<f64>,
    logits: Vec<f64>,
    conf: Vec<f64>,
    // backward buffers
    d_h1: Vec<f64>,
    d_flat: Vec<f64>,
    d_conv2: Vec<f64>,
    d_padded_p1: Vec<f64>,
    d_pool1: Vec<f64>,
    d_conv1: Vec<f64>,
}

impl Scratch {
    fn new(arch: &ArchDesc) -> Self {
        let (h, w) = (arch.height, arch.width);
        let (h1p, w1p) = arch.pooled1();
        let (h2p, w2p) = arch.pooled2();
        Scratch {
            padded_in: vec![0.0; arch.channels * (h + 2) * (w + 2)],
            conv1: vec![0.0; arch.conv1_out * h * w],
            pool1: vec![0.0; arch.conv1_out * h1p * w1p],
            pool1_arg: vec![0; arch.conv1_out * h1p * w1p],
            padded_p1: vec![0.0; arch.conv1_out * (h1p + 2) * (w1p + 2)],
            conv2: vec![0.0; arch.conv2_out * h1p * w1p],
            pool2: vec![0.0; arch.conv2_out * h2p * w2p],
            pool2_arg: vec![0; arch.conv2_out * h2p * w2p],
            h1: vec![0.0; arch.fc1_out],
            logits: vec![0.0; arch.num_classes],
            conf: vec![0.0; arch.num_classes],
            d_h1: vec![0.0; arch.fc1_out],
            d_flat: vec![0.0; arch.flat_len()],
            d_conv2: vec![0.0; arch.conv2_out * h1p * w1p],
            d_padded_p1: vec![0.0; arch.conv1_out * (h1p + 2) * (w1p + 2)],
            d_pool1: vec![0.0; arch.conv1_out * h1p * w1p],
            d_conv1: vec![0.0; arch.conv1_out * h * w],
        }
    }
}

/// Copies interleaved image data into zero-padded planar buffers, centering
/// pixel values to `[-0.5, 0.5]`. Centering is part of the architecture:
/// the zero pad then sits at mid-gray, and features need not fight the
/// large constant component of unit-interval images.
pub(crate) const INPUT_CENTER: f64 = 0.5;

fn image_to_padded_planar(image: &Image, out: &mut [f64]) {
    let (h, w, ch) = (image.height(), image.width(), image.channels());
    let (ph, pw) = (h + 2, w + 2);
    out.fill(0.0);
    let px = image.pixels();
    for c in 0..ch {
        for y in 0..h {
            let dst = &mut out[(c * ph + y + 1) * pw + 1..(c * ph + y + 1) * pw + 1 + w];
            for (x, d) in dst.iter_mut().enumerate() {
                *d = px[(y * w + x) * ch + c] - INPUT_CENTER;
            }
        }
    }
}

/// Re-pads planar activations (used between pool1 and conv2).
fn planar_to_padded(src: &[f64], ch: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ph, pw) = (h + 2, w + 2);
    out.fill(0.0);
    for c in 0..ch {
        for y in 0..h {
            let s = &src[(c * h + y) * w..(c * h + y) * w + w];
            let d = &mut out[(c * ph + y + 1) * pw + 1..(c * ph + y + 1) * pw + 1 + w];
            d.copy_from_slice(s);
        }
    }
}

/// 3x3 convolution over zero-padded planar input, writing `bias`-initialized
/// planar output. Row-blocked: each output row accumulates all 9 taps of
/// every input channel while it is hot in cache.
fn conv3x3_forward(
    padded: &[f64],
    in_c: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    out_c: usize,
    out: &mut [f64],
) {
    let (ph, pw) = (h + 2, w + 2);
    for f in 0..out_c {
        let out_plane = &mut out[f * h * w..(f + 1) * h * w];
        for y in 0..h {
            let row = &mut out_plane[y * w..(y + 1) * w];
            row.fill(bias[f]);
            for c in 0..in_c {
                let in_plane = &padded[c * ph * pw..(c + 1) * ph * pw];
                for ky in 0..3 {
                    let wv = &weights[((f * in_c + c) * 3 + ky) * 3..][..3];
                    let src = &in_plane[(y + ky) * pw..(y + ky) * pw + w + 2];
                    for (x, d) in row.iter_mut().enumerate() {
                        *d += wv[0] * src[x] + wv[1] * src[x + 1] + wv[2] * src[x + 2];
                    }
                }
            }
        }
    }
}

fn relu_inplace(data: &mut [f64]) {
    for v in data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// 2x2 max pool with stride 2 (floor). Ties go to the first cell in scan
/// order, recorded in `arg` for the backward pass.
fn maxpool2(input: &[f64], ch: usize, h: usize, w: usize, out: &mut [f64], arg: &mut [u8]) {
    let (oh, ow) = (h / 2, w / 2);
    for c in 0..ch {
        let in_plane = &input[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let base = (2 * y) * w + 2 * x;
                let cand = [
                    in_plane[base],
                    in_plane[base + 1],
                    in_plane[base + w],
                    in_plane[base + w + 1],
                ];
                let mut best = 0usize;
                for (i, v) in cand.iter().enumerate().skip(1) {
                    if *v > cand[best] {
                        best = i;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out[o] = cand[best];
                arg[o] = best as u8;
            }
        }
    }
}

fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &weights[j * n_in..(j + 1) * n_in];
        let mut acc = bias[j];
        for (w, x) in row.iter().zip(input) {
            acc += w * x;
        }
        *o = acc;
    }
}

fn softmax(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Runs the forward pass, filling `scratch`.
fn forward_sample(params: &ModelParams, image: &Image, scratch: &mut Scratch) -> Result<()> {
    params.check_input(image)?;
    let a = &params.arch;
    let (h, w) = (a.height, a.width);
    let (h1, w1) = a.pooled1();
    let (h2, w2) = a.pooled2();

    image_to_padded_planar(image, &mut scratch.padded_in);
    conv3x3_forward(
        &scratch.padded_in,
        a.channels,
        h,
        w,
        &params.t.conv1_w,
        &params.t.conv1_b,
        a.conv1_out,
        &mut scratch.conv1,
    );
    relu_inplace(&mut scratch.conv1);
    maxpool2(
        &scratch.conv1,
        a.conv1_out,
        h,
        w,
        &mut scratch.pool1,
        &mut scratch.pool1_arg,
    );
    planar_to_padded(&scratch.pool1, a.conv1_out, h1, w1, &mut scratch.padded_p1);
    conv3x3_forward(
        &scratch.padded_p1,
        a.conv1_out,
        h1,
        w1,
        &params.t.conv2_w,
        &params.t.conv2_b,
        a.conv2_out,
        &mut scratch.conv2,
    );
    relu_inplace(&mut scratch.conv2);
    maxpool2(
        &scratch.conv2,
        a.conv2_out,
        h1,
        w1,
        &mut scratch.pool2,
        &mut scratch.pool2_arg,
    );
    debug_assert_eq!(scratch.pool2.len(), a.flat_len());
    debug_assert_eq!(h2 * w2 * a.conv2_out, a.flat_len());

    dense_forward(
        &scratch.pool2,
        &params.t.fc1_w,
        &params.t.fc1_b,
        &mut scratch.h1,
    );
    relu_inplace(&mut scratch.h1);
    dense_forward(
        &scratch.h1,
        &params.t.fc2_w,
        &params.t.fc2_b,
        &mut scratch.logits,
    );
    softmax(&scratch.logits, &mut scratch.conf);
    Ok(())
}

/// Cross-entropy of the current scratch against `label`. A confidence that
/// underflowed to zero yields an infinite loss, which the training loop
/// reports as a divergence.
fn loss_from_scratch(scratch: &Scratch, label: usize) -> f64 {
    -scratch.conf[label].ln()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Accumulates this sample's gradients into `acc`. Must be called right
/// after [`forward_sample`] on the same scratch.
fn backward_sample(params: &ModelParams, label: usize, scratch: &mut Scratch, acc: &mut ParamTensors) {
    let a = &params.arch;
    let (h, w) = (a.height, a.width);
    let (h1, w1) = a.pooled1();

    // d(loss)/d(logits) = softmax - one_hot
    let n_classes = a.num_classes;
    let fc1_out = a.fc1_out;
    scratch.d_h1.fill(0.0);
    for k in 0..n_classes {
        let dl = scratch.conf[k] - if k == label { 1.0 } else { 0.0 };
        acc.fc2_b[k] += dl;
        let w_row = &params.t.fc2_w[k * fc1_out..(k + 1) * fc1_out];
        let g_row = &mut acc.fc2_w[k * fc1_out..(k + 1) * fc1_out];
        for j in 0..fc1_out {
            g_row[j] += dl * scratch.h1[j];
            scratch.d_h1[j] += dl * w_row[j];
        }
    }
    // ReLU between the dense layers
    for (d, v) in scratch.d_h1.iter_mut().zip(&scratch.h1) {
        if *v <= 0.0 {
            *d = 0.0;
        }
    }

    // fc1 weight gradients are the rank-1 outer product d_h1 x pool2; the
    // caller materializes them during the chunk reduction, so only the bias
    // and input gradients are produced here
    let flat_len = a.flat_len();
    scratch.d_flat.fill(0.0);
    for j in 0..fc1_out {
        let dj = scratch.d_h1[j];
        acc.fc1_b[j] += dj;
        let w_row = &params.t.fc1_w[j * flat_len..(j + 1) * flat_len];
        if dj != 0.0 {
            for (d, w) in scratch.d_flat.iter_mut().zip(w_row) {
                *d += dj * w;
            }
        }
    }

    // unpool 2: route each pooled gradient to its argmax cell, gated by the
    // ReLU that produced the pool input
    scratch.d_conv2.fill(0.0);
    let (h2, w2) = a.pooled2();
    for c in 0..a.conv2_out {
        for y in 0..h2 {
            for x in 0..w2 {
                let o = (c * h2 + y) * w2 + x;
                let g = scratch.d_flat[o];
                if g == 0.0 {
                    continue;
                }
                let best = scratch.pool2_arg[o] as usize;
                let base = (c * h1 + 2 * y) * w1 + 2 * x;
                let pos = match best {
                    0 => base,
                    1 => base + 1,
                    2 => base + w1,
                    _ => base + w1 + 1,
                };
                if scratch.conv2[pos] > 0.0 {
                    scratch.d_conv2[pos] += g;
                }
            }
        }
    }

    // conv2 backward: per output row, accumulate all 9 weight-grad dots and
    // scatter the input gradient through a zero-extended row buffer
    let (p1h, p1w) = (h1 + 2, w1 + 2);
    scratch.d_padded_p1.fill(0.0);
    let mut dout_ext = vec![0.0f64; w1 + 4];
    for f in 0..a.conv2_out {
        let dout = &scratch.d_conv2[f * h1 * w1..(f + 1) * h1 * w1];
        acc.conv2_b[f] += dout.iter().sum::<f64>();
        for y in 0..h1 {
            let drow = &dout[y * w1..(y + 1) * w1];
            dout_ext[2..2 + w1].copy_from_slice(drow);
            for c in 0..a.conv1_out {
                let in_plane = &scratch.padded_p1[c * p1h * p1w..(c + 1) * p1h * p1w];
                let d_in_plane =
                    &mut scratch.d_padded_p1[c * p1h * p1w..(c + 1) * p1h * p1w];
                let wbase = ((f * a.conv1_out + c) * 3) * 3;
                for ky in 0..3 {
                    let srow = &in_plane[(y + ky) * p1w..(y + ky) * p1w + w1 + 2];
                    let (mut g0, mut g1, mut g2) = (0.0, 0.0, 0.0);
                    for (x, d) in drow.iter().enumerate() {
                        g0 += d * srow[x];
                        g1 += d * srow[x + 1];
                        g2 += d * srow[x + 2];
                    }
                    acc.conv2_w[wbase + ky * 3] += g0;
                    acc.conv2_w[wbase + ky * 3 + 1] += g1;
                    acc.conv2_w[wbase + ky * 3 + 2] += g2;

                    let wv = &params.t.conv2_w[wbase + ky * 3..][..3];
                    let girow = &mut d_in_plane[(y + ky) * p1w..(y + ky) * p1w + p1w];
                    for (p, g) in girow.iter_mut().enumerate() {
                        *g += wv[0] * dout_ext[p + 2]
                            + wv[1] * dout_ext[p + 1]
                            + wv[2] * dout_ext[p];
                    }
                }
            }
        }
    }

    // crop the padded gradient, then unpool 1 with its ReLU gate
    for c in 0..a.conv1_out {
        for y in 0..h1 {
            let src = &scratch.d_padded_p1
                [(c * p1h + y + 1) * p1w + 1..(c * p1h + y + 1) * p1w + 1 + w1];
            scratch.d_pool1[(c * h1 + y) * w1..(c * h1 + y) * w1 + w1].copy_from_slice(src);
        }
    }
    scratch.d_conv1.fill(0.0);
    for c in 0..a.conv1_out {
        for y in 0..h1 {
            for x in 0..w1 {
                let o = (c * h1 + y) * w1 + x;
                let g = scratch.d_pool1[o];
                if g == 0.0 {
                    continue;
                }
                let best = scratch.pool1_arg[o] as usize;
                let base = (c * h + 2 * y) * w + 2 * x;
                let pos = match best {
                    0 => base,
                    1 => base + 1,
                    2 => base + w,
                    _ => base + w + 1,
                };
                if scratch.conv1[pos] > 0.0 {
                    scratch.d_conv1[pos] += g;
                }
            }
        }
    }

    // conv1 backward: weight and bias grads only (input needs no gradient)
    let (pih, piw) = (h + 2, w + 2);
    for f in 0..a.conv1_out {
        let dout = &scratch.d_conv1[f * h * w..(f + 1) * h * w];
        acc.conv1_b[f] += dout.iter().sum::<f64>();
        for y in 0..h {
            let drow = &dout[y * w..(y + 1) * w];
            for c in 0..a.channels {
                let in_plane = &scratch.padded_in[c * pih * piw..(c + 1) * pih * piw];
                let wbase = ((f * a.channels + c) * 3) * 3;
                for ky in 0..3 {
                    let srow = &in_plane[(y + ky) * piw..(y + ky) * piw + w + 2];
                    let (mut g0, mut g1, mut g2) = (0.0, 0.0, 0.0);
                    for (x, d) in drow.iter().enumerate() {
                        g0 += d * srow[x];
                        g1 += d * srow[x + 1];
                        g2 += d * srow[x + 2];
                    }
                    acc.conv1_w[wbase + ky * 3] += g0;
                    acc.conv1_w[wbase + ky * 3 + 1] += g1;
                    acc.conv1_w[wbase + ky * 3 + 2] += g2;
                }
            }
        }
    }
}

/// Forward pass for one image: `(logits, confidences)`.
pub fn forward(params: &ModelParams, image: &Image) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut scratch = Scratch::new(&params.arch);
    forward_sample(params, image, &mut scratch)?;
    Ok((scratch.logits, scratch.conf))
}

/// Predicted class: argmax of the logits, lowest index on ties.
pub fn predict(params: &ModelParams, image: &Image) -> Result<usize> {
    let mut scratch = Scratch::new(&params.arch);
    forward_sample(params, image, &mut scratch)?;
    Ok(argmax(&scratch.logits))
}

/// Combines chunk partials in a fixed pairwise tree.
fn pairwise_combine<T, F: Fn(&mut T, &T)>(mut items: Vec<T>, add: F) -> Option<T> {
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut iter = items.into_iter();
        while let Some(mut a) = iter.next() {
            if let Some(b) = iter.next() {
                add(&mut a, &b);
            }
            next.push(a);
        }
        items = next;
    }
    items.pop()
}

struct ChunkPartial {
    loss_sum: f64,
    grads: ParamTensors,
    preds: Vec<usize>,
}

/// Adjacent-pairs reduction of a small slice, same tree shape as
/// [`pairwise_combine`].
fn tree_reduce(vals: &mut [f64]) -> f64 {
    let mut m = vals.len();
    while m > 1 {
        let mut read = 0;
        let mut write = 0;
        while read + 1 < m {
            vals[write] = vals[read] + vals[read + 1];
            read += 2;
            write += 1;
        }
        if read < m {
            vals[write] = vals[read];
            write += 1;
        }
        m = write;
    }
    vals[0]
}

/// Per-sample losses and gradients for one chunk, reduced pairwise. The
/// chunk width is a power of two and chunks start at multiples of it, so the
/// chunk-internal trees followed by the cross-chunk tree form exactly the
/// adjacent-pairs tree over all samples: the reduction is identical for
/// every worker count, and duplicating every sample scales each tree node by
/// exactly 2. The fc1 weight gradient of one sample is the rank-1 product
/// `d_h1 x pool2`; it is kept in factored form and sent through the same
/// per-entry tree, which avoids materializing the largest tensor per sample.
fn batch_partials(params: &ModelParams, batch: &[(&Image, usize)]) -> Result<Vec<ChunkPartial>> {
    let fc1_out = params.arch.fc1_out;
    let flat_len = params.arch.flat_len();
    batch
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut scratch = Scratch::new(&params.arch);
            let mut losses = Vec::with_capacity(chunk.len());
            let mut sample_grads = Vec::with_capacity(chunk.len());
            let mut preds = Vec::with_capacity(chunk.len());
            let mut dh1s: Vec<Vec<f64>> = Vec::with_capacity(chunk.len());
            let mut flats: Vec<Vec<f64>> = Vec::with_capacity(chunk.len());
            for (image, label) in chunk {
                forward_sample(params, image, &mut scratch)?;
                losses.push(loss_from_scratch(&scratch, *label));
                preds.push(argmax(&scratch.logits));
                let mut g = ParamTensors::zeros_light(&params.arch);
                backward_sample(params, *label, &mut scratch, &mut g);
                sample_grads.push(g);
                dh1s.push(scratch.d_h1.clone());
                flats.push(scratch.pool2.clone());
            }
            let loss_sum = pairwise_combine(losses, |a, b| *a += *b).unwrap_or(0.0);
            let mut grads = pairwise_combine(sample_grads, |a, b| a.add_assign(b))
                .expect("chunk is non-empty");

            let n = chunk.len();
            grads.fc1_w = vec![0.0; fc1_out * flat_len];
            let mut vals = [0.0f64; GRAD_CHUNK];
            for j in 0..fc1_out {
                if dh1s.iter().all(|d| d[j] == 0.0) {
                    continue;
                }
                let row = &mut grads.fc1_w[j * flat_len..(j + 1) * flat_len];
                for (i, out) in row.iter_mut().enumerate() {
                    for s in 0..n {
                        vals[s] = dh1s[s][j] * flats[s][i];
                    }
                    *out = tree_reduce(&mut vals[..n]);
                }
            }
            Ok(ChunkPartial {
                loss_sum,
                grads,
                preds,
            })
        })
        .collect()
}

/// Mean cross-entropy loss and its gradient over a batch.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[(&Image, usize)],
) -> Result<(f64, ParamTensors)> {
    let (loss, grads, _) = loss_grads_preds(params, batch)?;
    Ok((loss, grads))
}

fn loss_grads_preds(
    params: &ModelParams,
    batch: &[(&Image, usize)],
) -> Result<(f64, ParamTensors, Vec<usize>)> {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let partials = batch_partials(params, batch)?;
    let preds: Vec<usize> = partials.iter().flat_map(|p| p.preds.clone()).collect();
    let n = batch.len() as f64;
    let loss_sum = pairwise_combine(
        partials.iter().map(|p| p.loss_sum).collect::<Vec<f64>>(),
        |a, b| *a += *b,
    )
    .unwrap_or(0.0);
    let mut grads = pairwise_combine(
        partials.into_iter().map(|p| p.grads).collect::<Vec<_>>(),
        |a, b| a.add_assign(b),
    )
    .expect("non-empty batch produces at least one partial");
    grads.scale(1.0 / n);
    Ok((loss_sum / n, grads, preds))
}

/// Fraction of samples whose prediction matches their label.
pub fn accuracy(params: &ModelParams, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let correct: usize = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut scratch = Scratch::new(&params.arch);
            let mut c = 0usize;
            for s in chunk {
                forward_sample(params, &s.image, &mut scratch)?;
                if argmax(&scratch.logits) == s.label {
                    c += 1;
                }
            }
            Ok(c)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    Ok(correct as f64 / samples.len() as f64)
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

/// Training hyperparameters plus the PTB gate settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub ranges: TransformRanges,
    /// When false, poisoned samples enter training untouched (the
    /// static-poisoning baseline).
    pub ptb_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.01,
            seed: 42,
            ranges: TransformRanges::default(),
            ptb_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::InvalidRanges(format!(
                "train config needs positive epochs/batch_size/learning_rate, got {}/{}/{}",
                self.epochs, self.batch_size, self.learning_rate
            )));
        }
        self.ranges.validate()
    }
}

/// Per-epoch progress: mean loss and running accuracy over clean samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub clean_correct: usize,
    pub clean_total: usize,
}

impl EpochStats {
    pub fn clean_acc(&self) -> f64 {
        if self.clean_total == 0 {
            0.0
        } else {
            self.clean_correct as f64 / self.clean_total as f64
        }
    }
}

/// The PTB gate for one poisoned sample at one epoch: draws transform
/// parameters from the stream keyed by `(seed, epoch, sample id)` and applies
/// the composite. Independent of batch composition and worker count.
pub fn ptb_transform(
    seed: u64,
    epoch: usize,
    sample: &Sample,
    ranges: &TransformRanges,
) -> Result<Image> {
    let mut stream: Stream = StreamKey::new(seed)
        .child(domain::TRAIN_TRANSFORM)
        .child(epoch as u64)
        .child(sample.id)
        .stream();
    let params = sample_params(ranges, &mut stream);
    apply_composite(&sample.image, &params)
}

/// SGD over shuffled batches. Every poisoned sample passes through the PTB
/// gate before each forward/backward pass (when `ptb_enabled`); clean
/// samples are never transformed. Emits one [`EpochStats`] per epoch through
/// `on_epoch`.
pub fn train_with_progress(
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &ModelParams),
) -> Result<(ModelParams, Vec<EpochStats>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidRanges("training dataset is empty".into()));
    }
    let (h, w, c) = data.geometry();
    let arch = ArchDesc::new(h, w, c, data.num_classes);
    let mut params = ModelParams::init(arch, cfg.seed)?;
    let mut stats = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_stream = StreamKey::new(cfg.seed)
            .child(domain::SHUFFLE)
            .child(epoch as u64)
            .stream();
        shuffle_stream.shuffle(&mut order);

        let mut loss_weighted = 0.0;
        let mut clean_correct = 0usize;
        let mut clean_total = 0usize;

        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            // materialize the batch, gating poisoned samples
            let mut owned: Vec<Option<Image>> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &data.samples[i];
                if s.poisoned && cfg.ptb_enabled {
                    owned.push(Some(ptb_transform(cfg.seed, epoch, s, &cfg.ranges)?));
                } else {
                    owned.push(None);
                }
            }
            let batch: Vec<(&Image, usize)> = chunk
                .iter()
                .zip(&owned)
                .map(|(&i, o)| {
                    let s = &data.samples[i];
                    (o.as_ref().unwrap_or(&s.image), s.label)
                })
                .collect();

            let (loss, grads, preds) = loss_grads_preds(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            for (&i, pred) in chunk.iter().zip(&preds) {
                let s = &data.samples[i];
                if !s.poisoned {
                    clean_total += 1;
                    if *pred == s.label {
                        clean_correct += 1;
                    }
                }
            }
            params.t.step(&grads, cfg.learning_rate);
            if !params.t.all_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_weighted += loss * chunk.len() as f64;
        }

        let s = EpochStats {
            epoch,
            mean_loss: loss_weighted / data.len() as f64,
            clean_correct,
            clean_total,
        };
        on_epoch(&s, &params);
        stats.push(s);
    }
    Ok((params, stats))
}

/// [`train_with_progress`] without a progress sink; returns final parameters
/// and the per-epoch stats.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(ModelParams, Vec<EpochStats>)> {
    train_with_progress(data, cfg, |_, _| {})
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

/// Serializes: magic, 7 u32 LE descriptor fields (height, width, channels,
/// num_classes, conv1_out, conv2_out, fc1_out), then every tensor as f64 LE
/// in declaration order.
pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let a = &params.arch;
    let mut bytes = Vec::with_capacity(8 + 28 + params.t.flat_len() * 8);
    bytes.extend_from_slice(MAGIC);
    for v in [
        a.height,
        a.width,
        a.channels,
        a.num_classes,
        a.conv1_out,
        a.conv2_out,
        a.fc1_out,
    ] {
        bytes.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for t in params.t.tensors() {
        for v in t {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 8 + 28 {
        return Err(Error::NotACheckpoint);
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let mut fields = [0usize; 7];
    for (i, f) in fields.iter_mut().enumerate() {
        let off = 8 + i * 4;
        *f = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let arch = ArchDesc {
        height: fields[0],
        width: fields[1],
        channels: fields[2],
        num_classes: fields[3],
        conv1_out: fields[4],
        conv2_out: fields[5],
        fc1_out: fields[6],
    };
    arch.validate()?;
    let mut t = ParamTensors::zeros(&arch);
    let expected = t.flat_len() * 8;
    let payload = &bytes[8 + 28..];
    if payload.len() != expected {
        return Err(Error::TruncatedCheckpoint {
            expected,
            found: payload.len(),
        });
    }
    let mut off = 0usize;
    for tensor in t.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
            off += 8;
        }
    }
    Ok(ModelParams { arch, t })
}

/// Checks a loaded checkpoint against the architecture the caller expects.
pub fn validate_arch(params: &ModelParams, expected: &ArchDesc) -> Result<()> {
    if params.arch != *expected {
        return Err(Error::ArchMismatch {
            expected: expected.describe(),
            found: params.arch.describe(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_generate;

    fn tiny_arch() -> ArchDesc {
        ArchDesc {
            height: 8,
            width: 8,
            channels: 1,
            num_classes: 3,
            conv1_out: 2,
            conv2_out: 3,
            fc1_out: 4,
        }
    }

    fn random_image(h: usize, w: usize, c: usize, seed: u64) -> Image {
        let mut s = StreamKey::new(seed).stream();
        let px = (0..h * w * c).map(|_| s.unit_f64()).collect();
        Image::from_pixels(h, w, c, px).unwrap()
    }

    #[test]
    fn softmax_sums_to_one_and_uniform_for_zero_params() {
        let arch = tiny_arch();
        let params = ModelParams {
            arch,
            t: ParamTensors::zeros(&arch),
        };
        let img = random_image(8, 8, 1, 1);
        let (logits, conf) = forward(&params, &img).unwrap();
        assert!(logits.iter().all(|&l| l == 0.0));
        let sum: f64 = conf.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
        for c in conf {
            assert!((c - 1.0 / 3.0).abs() < 1e-12);
            assert!(c > 0.0 && c < 1.0);
        }
    }

    #[test]
    fn forward_matches_hand_computed_tiny_net() {
        // 4x4 single-channel input, 1 filter per conv, 1 hidden unit:
        // every step below is straight-line arithmetic independent of the
        // layer implementations (including the input centering).
        let arch = ArchDesc {
            height: 4,
            width: 4,
            channels: 1,
            num_classes: 2,
            conv1_out: 1,
            conv2_out: 1,
            fc1_out: 1,
        };
        let mut t = ParamTensors::zeros(&arch);
        t.conv1_w[4] = 1.0; // center tap: conv1 = input + b1
        t.conv1_b[0] = 0.1;
        t.conv2_w[4] = 1.0;
        t.conv2_b[0] = 0.05;
        t.fc1_w[0] = 2.0;
        t.fc1_b[0] = -0.05;
        t.fc2_w[0] = 1.0; // logit0 = h1 + 0.25
        t.fc2_w[1] = -1.0; // logit1 = -h1
        t.fc2_b[0] = 0.25;
        let params = ModelParams { arch, t };

        let vals: Vec<f64> = (0..16).map(|i| i as f64 / 20.0).collect();
        let img = Image::from_pixels(4, 4, 1, vals.clone()).unwrap();

        // hand computation: centered input through center-tap convs
        let c1: Vec<f64> = vals.iter().map(|v| (v - 0.5 + 0.1).max(0.0)).collect();
        let p1 = [
            c1[0].max(c1[1]).max(c1[4]).max(c1[5]),
            c1[2].max(c1[3]).max(c1[6]).max(c1[7]),
            c1[8].max(c1[9]).max(c1[12]).max(c1[13]),
            c1[10].max(c1[11]).max(c1[14]).max(c1[15]),
        ];
        let c2: Vec<f64> = p1.iter().map(|v| (v + 0.05).max(0.0)).collect();
        let p2 = c2[0].max(c2[1]).max(c2[2]).max(c2[3]);
        let h1 = (2.0 * p2 - 0.05).max(0.0);
        let expected_logits = [h1 + 0.25, -h1];

        let (logits, _) = forward(&params, &img).unwrap();
        assert!((logits[0] - expected_logits[0]).abs() < 1e-12);
        assert!((logits[1] - expected_logits[1]).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let arch = tiny_arch();
        for init_seed in [5u64, 17] {
            let params = ModelParams::init(arch, init_seed).unwrap();
            let images = [
                random_image(8, 8, 1, 100 + init_seed),
                random_image(8, 8, 1, 200 + init_seed),
            ];
            let batch: Vec<(&Image, usize)> = vec![(&images[0], 0), (&images[1], 2)];
            let (_, grads) = loss_and_grads(&params, &batch).unwrap();

            let h = 1e-5;
            let n = params.t.flat_len();
            for i in 0..n {
                let mut plus = params.clone();
                plus.t.set_flat(i, plus.t.get_flat(i) + h);
                let (lp, _) = loss_and_grads(&plus, &batch).unwrap();
                let mut minus = params.clone();
                minus.t.set_flat(i, minus.t.get_flat(i) - h);
                let (lm, _) = loss_and_grads(&minus, &batch).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let g = grads.get_flat(i);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
                assert!(
                    rel <= 1e-3,
                    "param {i}: grad {g} vs fd {fd} (rel {rel}) at init {init_seed}"
                );
            }
        }
    }

    #[test]
    fn duplicated_batch_gives_identical_loss_and_grads() {
        let arch = tiny_arch();
        let params = ModelParams::init(arch, 3).unwrap();
        let a = random_image(8, 8, 1, 1);
        let b = random_image(8, 8, 1, 2);
        let single: Vec<(&Image, usize)> = vec![(&a, 0), (&b, 1)];
        let doubled: Vec<(&Image, usize)> = vec![(&a, 0), (&a, 0), (&b, 1), (&b, 1)];
        let (l1, g1) = loss_and_grads(&params, &single).unwrap();
        let (l2, g2) = loss_and_grads(&params, &doubled).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn saturated_correct_confidence_has_near_zero_loss() {
        let arch = tiny_arch();
        let mut t = ParamTensors::zeros(&arch);
        t.fc2_b[1] = 20.0;
        let params = ModelParams { arch, t };
        let img = random_image(8, 8, 1, 9);
        let batch: Vec<(&Image, usize)> = vec![(&img, 1)];
        let (loss, _) = loss_and_grads(&params, &batch).unwrap();
        assert!(loss <= 1e-3, "loss {loss}");
    }

    #[test]
    fn input_dimension_mismatch_is_rejected() {
        let params = ModelParams::init(tiny_arch(), 1).unwrap();
        let img = random_image(16, 16, 1, 1);
        assert!(matches!(
            forward(&params, &img).unwrap_err(),
            Error::InputMismatch { .. }
        ));
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (train_set, _) = synth_generate(3, 8, 2, 16, 5);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 9,
            ranges: TransformRanges::default(),
            ptb_enabled: true,
        };
        let (m1, s1) = train(&train_set, &cfg).unwrap();
        let (m2, s2) = train(&train_set, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(s1, s2);
    }

    #[test]
    fn gate_probability_zero_matches_ptb_disabled() {
        use crate::dataset::{build_poisoned, PoisonConfig};
        use crate::trigger::{make_square, PoisonLabel};
        let (train_set, _) = synth_generate(3, 8, 2, 16, 5);
        let poisoned = build_poisoned(
            &train_set,
            &PoisonConfig {
                trigger: make_square(0.25, [0.0; 3]).unwrap(),
                target: PoisonLabel::new(0, 3).unwrap(),
                count: 4,
                seed: 2,
            },
        )
        .unwrap();
        let base = TrainConfig {
            epochs: 2,
            batch_size: 8,
            learning_rate: 0.05,
            seed: 9,
            ranges: TransformRanges {
                gate_p: 0.0,
                ..TransformRanges::default()
            },
            ptb_enabled: true,
        };
        let off = TrainConfig {
            ptb_enabled: false,
            ..base.clone()
        };
        let (m1, _) = train(&poisoned, &base).unwrap();
        let (m2, _) = train(&poisoned, &off).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn loss_decreases_and_accuracy_reported() {
        let (train_set, _) = synth_generate(3, 12, 2, 16, 7);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 12,
            learning_rate: 0.1,
            seed: 4,
            ranges: TransformRanges::default(),
            ptb_enabled: false,
        };
        let (_, stats) = train(&train_set, &cfg).unwrap();
        assert!(stats[4].mean_loss < stats[0].mean_loss);
        assert_eq!(stats[0].clean_total, 36);
    }

    #[test]
    fn exploding_learning_rate_aborts_with_diagnostic() {
        let (train_set, _) = synth_generate(3, 8, 2, 16, 5);
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 8,
            learning_rate: 1e18,
            seed: 9,
            ranges: TransformRanges::default(),
            ptb_enabled: false,
        };
        match train(&train_set, &cfg) {
            Err(Error::NanLoss { .. }) => {}
            other => panic!("expected NanLoss abort, got {other:?}"),
        }
    }

    #[test]
    fn ptb_transform_is_independent_of_surrounding_state() {
        let (train_set, _) = synth_generate(3, 4, 2, 16, 5);
        let mut sample = train_set.samples[0].clone();
        sample.poisoned = true;
        // gate forced open so distinct epochs provably draw distinct params
        let ranges = TransformRanges {
            gate_p: 1.0,
            ..TransformRanges::default()
        };
        let a = ptb_transform(11, 3, &sample, &ranges).unwrap();
        // interleave unrelated stream work, then repeat
        let mut noise = StreamKey::new(999).stream();
        for _ in 0..100 {
            noise.next_u64();
        }
        let b = ptb_transform(11, 3, &sample, &ranges).unwrap();
        assert_eq!(a, b);
        // a different epoch gives a different draw
        let c = ptb_transform(11, 4, &sample, &ranges).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let params = ModelParams::init(tiny_arch(), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&params, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn corrupted_magic_is_not_a_checkpoint() {
        let params = ModelParams::init(tiny_arch(), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&params, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path).unwrap_err(), Error::NotACheckpoint));
    }

    #[test]
    fn truncated_checkpoint_is_detected() {
        let params = ModelParams::init(tiny_arch(), 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&params, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load(&path).unwrap_err(),
            Error::TruncatedCheckpoint { .. }
        ));
    }

    #[test]
    fn arch_mismatch_names_expected_and_found() {
        let params = ModelParams::init(tiny_arch(), 21).unwrap();
        let expected = ArchDesc::new(64, 64, 3, 10);
        match validate_arch(&params, &expected).unwrap_err() {
            Error::ArchMismatch { expected, found } => {
                assert!(expected.contains("64x64x3"));
                assert!(found.contains("8x8x1"));
            }
            other => panic!("expected ArchMismatch, got {other}"),
        }
    }
}
