//! 3-D convolution block: conv(3^3) -> relu -> 2x max-pool -> conv(3^3) ->
//! relu -> 2x nearest unpool -> conv(3^3). Channels-last grids `[m,m,m,c]`,
//! zero padding, output shape equals input shape.

use rand::Rng;

use super::linalg;
use super::tensor::{ParamStore, Tensor};
use crate::error::{Error, Result};

const KERNEL_TAPS: usize = 27;
/// Grid rows per im2col chunk.
const CONV_CHUNK: usize = 4096;

fn conv_weight_name(prefix: &str, idx: usize) -> String {
    format!("{prefix}.conv{idx}.w")
}

fn conv_bias_name(prefix: &str, idx: usize) -> String {
    format!("{prefix}.conv{idx}.b")
}

/// Register the three convolution layers of one block. Biases start at zero
/// so a zero feature grid propagates to a zero output.
pub fn register_conv_block<R: Rng>(store: &mut ParamStore, prefix: &str, channels: usize, rng: &mut R) {
    let fan_in = KERNEL_TAPS * channels;
    let bound = (1.0 / fan_in as f64).sqrt();
    for idx in 0..3 {
        let w: Vec<f64> = (0..fan_in * channels).map(|_| rng.gen_range(-bound..bound)).collect();
        store.insert(conv_weight_name(prefix, idx), Tensor::from_values(&[fan_in, channels], w).unwrap());
        store.insert(conv_bias_name(prefix, idx), Tensor::zeros(&[channels]));
    }
}

#[inline]
fn node_id(m: usize, i: usize, j: usize, k: usize) -> usize {
    (i * m + j) * m + k
}

/// Gather the 27-tap neighborhood rows for nodes `[row0, row0+rows)`.
fn im2col(input: &[f64], m: usize, c: usize, row0: usize, rows: usize, patches: &mut [f64]) {
    let width = KERNEL_TAPS * c;
    debug_assert_eq!(patches.len(), rows * width);
    patches.fill(0.0);
    for r in 0..rows {
        let node = row0 + r;
        let k = node % m;
        let j = (node / m) % m;
        let i = node / (m * m);
        let row = &mut patches[r * width..(r + 1) * width];
        let mut tap = 0;
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                for dk in -1i64..=1 {
                    let ii = i as i64 + di;
                    let jj = j as i64 + dj;
                    let kk = k as i64 + dk;
                    if ii >= 0 && jj >= 0 && kk >= 0 && (ii as usize) < m && (jj as usize) < m && (kk as usize) < m {
                        let src = node_id(m, ii as usize, jj as usize, kk as usize) * c;
                        row[tap * c..(tap + 1) * c].copy_from_slice(&input[src..src + c]);
                    }
                    tap += 1;
                }
            }
        }
    }
}

/// One 3^3 zero-padded convolution, `c -> c` channels.
fn conv3_forward(input: &[f64], m: usize, c: usize, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let nodes = m * m * m;
    let width = KERNEL_TAPS * c;
    let mut out = vec![0.0; nodes * c];
    let mut patches = vec![0.0; CONV_CHUNK.min(nodes) * width];
    let mut row0 = 0;
    while row0 < nodes {
        let rows = CONV_CHUNK.min(nodes - row0);
        let p = &mut patches[..rows * width];
        im2col(input, m, c, row0, rows, p);
        linalg::matmul(p, w, rows, width, c, &mut out[row0 * c..(row0 + rows) * c]);
        row0 += rows;
    }
    if let Some(bias) = b {
        for row in out.chunks_exact_mut(c) {
            for (v, bb) in row.iter_mut().zip(bias) {
                *v += bb;
            }
        }
    }
    out
}

/// Spatially flipped, channel-transposed kernel: convolving the output
/// gradient with it yields the input gradient of [`conv3_forward`].
fn flip_kernel(w: &[f64], c: usize) -> Vec<f64> {
    let mut flipped = vec![0.0; w.len()];
    for tap in 0..KERNEL_TAPS {
        for ci in 0..c {
            for co in 0..c {
                flipped[((KERNEL_TAPS - 1 - tap) * c + co) * c + ci] = w[(tap * c + ci) * c + co];
            }
        }
    }
    flipped
}

/// Gradients of one convolution: accumulates `dw`/`db` and returns `dx`.
fn conv3_backward(
    input: &[f64],
    m: usize,
    c: usize,
    w: &[f64],
    grad_out: &[f64],
    dw: &mut [f64],
    db: Option<&mut [f64]>,
) -> Vec<f64> {
    let nodes = m * m * m;
    let width = KERNEL_TAPS * c;
    // dW += patches^T . dOut, chunk by chunk in fixed order.
    let mut patches = vec![0.0; CONV_CHUNK.min(nodes) * width];
    let mut row0 = 0;
    while row0 < nodes {
        let rows = CONV_CHUNK.min(nodes - row0);
        let p = &mut patches[..rows * width];
        im2col(input, m, c, row0, rows, p);
        linalg::matmul_tn_acc(p, &grad_out[row0 * c..(row0 + rows) * c], rows, width, c, dw);
        row0 += rows;
    }
    if let Some(db) = db {
        for row in grad_out.chunks_exact(c) {
            for (acc, g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
    }
    conv3_forward(grad_out, m, c, &flip_kernel(w, c), None)
}

fn relu_forward(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Relu gradient from the stored post-activation values.
fn relu_backward(post: &[f64], grad: &mut [f64]) {
    for (g, &p) in grad.iter_mut().zip(post) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x max pool; records the winning fine-node id per (coarse node, channel).
fn maxpool2(input: &[f64], m: usize, c: usize) -> (Vec<f64>, Vec<u32>) {
    let half = m / 2;
    let coarse_nodes = half * half * half;
    let mut out = vec![f64::NEG_INFINITY; coarse_nodes * c];
    let mut argmax = vec![0u32; coarse_nodes * c];
    for ci in 0..half {
        for cj in 0..half {
            for ck in 0..half {
                let cid = node_id(half, ci, cj, ck);
                for di in 0..2 {
                    for dj in 0..2 {
                        for dk in 0..2 {
                            let fid = node_id(m, ci * 2 + di, cj * 2 + dj, ck * 2 + dk);
                            for ch in 0..c {
                                let v = input[fid * c + ch];
                                if v > out[cid * c + ch] {
                                    out[cid * c + ch] = v;
                                    argmax[cid * c + ch] = fid as u32;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (out, argmax)
}

fn maxpool2_backward(grad_out: &[f64], argmax: &[u32], fine_len: usize, c: usize) -> Vec<f64> {
    let mut grad_in = vec![0.0; fine_len];
    for (slot, &g) in grad_out.iter().enumerate() {
        let ch = slot % c;
        grad_in[argmax[slot] as usize * c + ch] += g;
    }
    grad_in
}

/// Nearest-neighbor 2x unpool: each coarse value is repeated into its eight
/// fine children.
fn unpool2(input: &[f64], half: usize, c: usize) -> Vec<f64> {
    let m = half * 2;
    let mut out = vec![0.0; m * m * m * c];
    for fi in 0..m {
        for fj in 0..m {
            for fk in 0..m {
                let src = node_id(half, fi / 2, fj / 2, fk / 2) * c;
                let dst = node_id(m, fi, fj, fk) * c;
                out[dst..dst + c].copy_from_slice(&input[src..src + c]);
            }
        }
    }
    out
}

fn unpool2_backward(grad_out: &[f64], half: usize, c: usize) -> Vec<f64> {
    let m = half * 2;
    let mut grad_in = vec![0.0; half * half * half * c];
    for fi in 0..m {
        for fj in 0..m {
            for fk in 0..m {
                let dst = node_id(half, fi / 2, fj / 2, fk / 2) * c;
                let src = node_id(m, fi, fj, fk) * c;
                for ch in 0..c {
                    grad_in[dst + ch] += grad_out[src + ch];
                }
            }
        }
    }
    grad_in
}

/// Values cached by the forward pass for the reverse pass.
#[derive(Debug, Clone)]
pub struct ConvBlockCache {
    m: usize,
    channels: usize,
    input: Vec<f64>,
    post1: Vec<f64>,
    argmax: Vec<u32>,
    pooled: Vec<f64>,
    post2: Vec<f64>,
    unpooled: Vec<f64>,
}

/// Forward pass of the block; `grid` is `[m,m,m,c]` flattened.
pub fn conv_block_forward(
    store: &ParamStore,
    prefix: &str,
    grid: &[f64],
    m: usize,
    channels: usize,
) -> Result<(Vec<f64>, ConvBlockCache)> {
    if m % 2 != 0 {
        return Err(Error::OddConvResolution { m });
    }
    let nodes = m * m * m;
    if grid.len() != nodes * channels {
        return Err(Error::ShapeMismatch {
            context: format!("{prefix} input grid"),
            expected: vec![m, m, m, channels],
            actual: vec![grid.len()],
        });
    }
    let w0 = store.values(&conv_weight_name(prefix, 0))?;
    let b0 = store.values(&conv_bias_name(prefix, 0))?;
    let w1 = store.values(&conv_weight_name(prefix, 1))?;
    let b1 = store.values(&conv_bias_name(prefix, 1))?;
    let w2 = store.values(&conv_weight_name(prefix, 2))?;
    let b2 = store.values(&conv_bias_name(prefix, 2))?;

    let mut post1 = conv3_forward(grid, m, channels, w0, Some(b0));
    relu_forward(&mut post1);
    let (pooled, argmax) = maxpool2(&post1, m, channels);
    let half = m / 2;
    let mut post2 = conv3_forward(&pooled, half, channels, w1, Some(b1));
    relu_forward(&mut post2);
    let unpooled = unpool2(&post2, half, channels);
    let out = conv3_forward(&unpooled, m, channels, w2, Some(b2));

    let cache = ConvBlockCache {
        m,
        channels,
        input: grid.to_vec(),
        post1,
        argmax,
        pooled,
        post2,
        unpooled,
    };
    Ok((out, cache))
}

/// Reverse pass: accumulates parameter gradients, returns the input gradient.
pub fn conv_block_backward(
    store: &mut ParamStore,
    prefix: &str,
    cache: &ConvBlockCache,
    grad_out: &[f64],
) -> Result<Vec<f64>> {
    let (m, c) = (cache.m, cache.channels);
    let half = m / 2;
    let w0 = store.values(&conv_weight_name(prefix, 0))?.to_vec();
    let w1 = store.values(&conv_weight_name(prefix, 1))?.to_vec();
    let w2 = store.values(&conv_weight_name(prefix, 2))?.to_vec();
    let taps = KERNEL_TAPS * c;

    let mut dw2 = vec![0.0; taps * c];
    let mut db2 = vec![0.0; c];
    let mut d_unpooled =
        conv3_backward(&cache.unpooled, m, c, &w2, grad_out, &mut dw2, Some(&mut db2));

    let mut d_post2 = unpool2_backward(&d_unpooled, half, c);
    d_unpooled.clear();
    relu_backward(&cache.post2, &mut d_post2);

    let mut dw1 = vec![0.0; taps * c];
    let mut db1 = vec![0.0; c];
    let d_pooled =
        conv3_backward(&cache.pooled, half, c, &w1, &d_post2, &mut dw1, Some(&mut db1));

    let mut d_post1 = maxpool2_backward(&d_pooled, &cache.argmax, m * m * m * c, c);
    relu_backward(&cache.post1, &mut d_post1);

    let mut dw0 = vec![0.0; taps * c];
    let mut db0 = vec![0.0; c];
    let d_input = conv3_backward(&cache.input, m, c, &w0, &d_post1, &mut dw0, Some(&mut db0));

    store.accumulate_grad(&conv_weight_name(prefix, 0), &dw0)?;
    store.accumulate_grad(&conv_bias_name(prefix, 0), &db0)?;
    store.accumulate_grad(&conv_weight_name(prefix, 1), &dw1)?;
    store.accumulate_grad(&conv_bias_name(prefix, 1), &db1)?;
    store.accumulate_grad(&conv_weight_name(prefix, 2), &dw2)?;
    store.accumulate_grad(&conv_bias_name(prefix, 2), &db2)?;
    Ok(d_input)
}
