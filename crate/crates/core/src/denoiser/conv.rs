//! Small convolutional noise predictor with hand-written backpropagation.
//!
//! Layout: `depth` blocks of `3×3 conv → + A·c + B·emb(t) → SiLU`, then a
//! zero-initialized `3×3` head back to the latent channels. The input is the
//! channel concatenation `(z_t, b, M)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{InpaintCondition, NoisePredictor};
use crate::error::{Error, Result};
use crate::grid::LatentGrid;

const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Latent channels `C`; the network input has `2C + 1` channels.
    pub channels: usize,
    pub hidden: usize,
    pub depth: usize,
    pub embed_dim: usize,
    /// Width of the sinusoidal timestep features (even).
    pub time_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            channels: 1,
            hidden: 16,
            depth: 2,
            embed_dim: 16,
            time_dim: 8,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("hidden", self.hidden),
            ("depth", self.depth),
            ("embed_dim", self.embed_dim),
            ("time_dim", self.time_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Architecture(format!("{name} must be positive")));
        }
        if !self.time_dim.is_multiple_of(2) {
            return Err(Error::Architecture(format!(
                "time_dim must be even, got {}",
                self.time_dim
            )));
        }
        Ok(())
    }

    fn input_channels(&self) -> usize {
        2 * self.channels + 1
    }

    fn block_in(&self, k: usize) -> usize {
        if k == 0 {
            self.input_channels()
        } else {
            self.hidden
        }
    }

    fn block_len(&self, k: usize) -> usize {
        self.hidden * self.block_in(k) * TAPS + self.hidden + self.hidden * (self.embed_dim + self.time_dim)
    }

    pub fn param_count(&self) -> usize {
        (0..self.depth).map(|k| self.block_len(k)).sum::<usize>()
            + self.channels * self.hidden * TAPS
            + self.channels
    }
}

/// Offsets of one block's parameters inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct BlockLayout {
    input: usize,
    conv_w: usize,
    conv_b: usize,
    cond_w: usize,
    time_w: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainableDenoiser {
    arch: ArchConfig,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for [`TrainableDenoiser::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    height: usize,
    width: usize,
    prompt: Vec<f64>,
    time: Vec<f64>,
    /// Block inputs; entry `k` feeds block `k`, the last one feeds the head.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation values of each block.
    pre: Vec<Vec<f64>>,
}

impl TrainableDenoiser {
    /// Random hidden weights from `seed`, zero head.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for k in 0..arch.depth {
            let fan_in = (arch.block_in(k) * TAPS) as f64;
            let std = (2.0 / fan_in).sqrt();
            for _ in 0..arch.hidden * arch.block_in(k) * TAPS {
                params.push(std * rng.sample::<f64, _>(StandardNormal));
            }
            params.extend(std::iter::repeat_n(0.0, arch.hidden));
            let cs = 1.0 / (arch.embed_dim as f64).sqrt();
            for _ in 0..arch.hidden * arch.embed_dim {
                params.push(cs * rng.sample::<f64, _>(StandardNormal));
            }
            let ts = 1.0 / (arch.time_dim as f64).sqrt();
            for _ in 0..arch.hidden * arch.time_dim {
                params.push(ts * rng.sample::<f64, _>(StandardNormal));
            }
        }
        params.extend(std::iter::repeat_n(0.0, arch.channels * arch.hidden * TAPS + arch.channels));
        debug_assert_eq!(params.len(), arch.param_count());
        Ok(TrainableDenoiser { arch, params })
    }

    pub fn from_params(arch: ArchConfig, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Architecture(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(TrainableDenoiser { arch, params })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn layout(&self) -> (Vec<BlockLayout>, usize, usize) {
        let a = &self.arch;
        let mut off = 0;
        let mut blocks = Vec::with_capacity(a.depth);
        for k in 0..a.depth {
            let input = a.block_in(k);
            let conv_w = off;
            let conv_b = conv_w + a.hidden * input * TAPS;
            let cond_w = conv_b + a.hidden;
            let time_w = cond_w + a.hidden * a.embed_dim;
            off = time_w + a.hidden * a.time_dim;
            blocks.push(BlockLayout {
                input,
                conv_w,
                conv_b,
                cond_w,
                time_w,
            });
        }
        let head_w = off;
        let head_b = head_w + a.channels * a.hidden * TAPS;
        (blocks, head_w, head_b)
    }

    /// Sinusoidal features of the integer level `t`.
    pub fn time_features(&self, t: usize) -> Vec<f64> {
        let half = self.arch.time_dim / 2;
        let mut out = Vec::with_capacity(self.arch.time_dim);
        for k in 0..half {
            let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            out.push((t as f64 * freq).sin());
        }
        for k in 0..half {
            let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
            out.push((t as f64 * freq).cos());
        }
        out
    }

    fn check_inputs(&self, cond: &InpaintCondition<'_>, prompt: &[f64]) -> Result<()> {
        if cond.z_t().channels() != self.arch.channels {
            return Err(Error::Conditioning(format!(
                "model expects {} latent channels, got {}",
                self.arch.channels,
                cond.z_t().channels()
            )));
        }
        if prompt.len() != self.arch.embed_dim {
            return Err(Error::Conditioning(format!(
                "model expects a {}-dim prompt, got {}",
                self.arch.embed_dim,
                prompt.len()
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        cond: &InpaintCondition<'_>,
        t: usize,
        prompt: &[f64],
    ) -> Result<(LatentGrid, ForwardCache)> {
        self.check_inputs(cond, prompt)?;
        let a = &self.arch;
        let (h, w) = (cond.z_t().height(), cond.z_t().width());
        let plane = h * w;

        let mut x = Vec::with_capacity(a.input_channels() * plane);
        x.extend_from_slice(cond.z_t().data());
        x.extend_from_slice(cond.background().data());
        x.extend(cond.mask().data().iter().map(|&m| if m { 1.0 } else { 0.0 }));

        let time = self.time_features(t);
        let (blocks, head_w, head_b) = self.layout();
        let mut inputs = Vec::with_capacity(a.depth + 1);
        let mut pres = Vec::with_capacity(a.depth);
        for bl in &blocks {
            let mut pre = conv3x3(
                &x,
                bl.input,
                a.hidden,
                h,
                w,
                &self.params[bl.conv_w..bl.conv_b],
                &self.params[bl.conv_b..bl.cond_w],
            );
            for o in 0..a.hidden {
                let cw = &self.params[bl.cond_w + o * a.embed_dim..bl.cond_w + (o + 1) * a.embed_dim];
                let tw = &self.params[bl.time_w + o * a.time_dim..bl.time_w + (o + 1) * a.time_dim];
                let shift = dot(cw, prompt) + dot(tw, &time);
                pre[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v += shift);
            }
            let act: Vec<f64> = pre.iter().map(|&v| silu(v)).collect();
            inputs.push(std::mem::replace(&mut x, act));
            pres.push(pre);
        }
        let out = conv3x3(
            &x,
            a.hidden,
            a.channels,
            h,
            w,
            &self.params[head_w..head_b],
            &self.params[head_b..head_b + a.channels],
        );
        inputs.push(x);
        let grid = LatentGrid::from_vec(a.channels, h, w, out)
            .map_err(|e| Error::Conditioning(format!("network output: {e}")))?;
        Ok((
            grid,
            ForwardCache {
                height: h,
                width: w,
                prompt: prompt.to_vec(),
                time,
                inputs,
                pre: pres,
            },
        ))
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &LatentGrid, grads: &mut [f64]) -> Result<()> {
        let a = &self.arch;
        let (h, w) = (cache.height, cache.width);
        if grad_out.shape() != (a.channels, h, w) {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match ({}, {h}, {w})",
                grad_out.shape(),
                a.channels
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "gradient buffer has {} entries, model has {}",
                grads.len(),
                self.params.len()
            )));
        }
        let plane = h * w;
        let (blocks, head_w, head_b) = self.layout();

        let (gw, rest) = grads[head_w..].split_at_mut(head_b - head_w);
        let mut g = conv3x3_backward(
            &cache.inputs[a.depth],
            a.hidden,
            a.channels,
            h,
            w,
            &self.params[head_w..head_b],
            grad_out.data(),
            gw,
            &mut rest[..a.channels],
        );

        for (k, bl) in blocks.iter().enumerate().rev() {
            let pre = &cache.pre[k];
            for (gv, &p) in g.iter_mut().zip(pre) {
                *gv *= silu_grad(p);
            }
            for o in 0..a.hidden {
                let gs: f64 = g[o * plane..(o + 1) * plane].iter().sum();
                for (j, &c) in cache.prompt.iter().enumerate() {
                    grads[bl.cond_w + o * a.embed_dim + j] += gs * c;
                }
                for (j, &e) in cache.time.iter().enumerate() {
                    grads[bl.time_w + o * a.time_dim + j] += gs * e;
                }
            }
            let (gw, gb) = grads[bl.conv_w..bl.cond_w].split_at_mut(bl.conv_b - bl.conv_w);
            g = conv3x3_backward(
                &cache.inputs[k],
                bl.input,
                a.hidden,
                h,
                w,
                &self.params[bl.conv_w..bl.conv_b],
                &g,
                gw,
                gb,
            );
        }
        Ok(())
    }
}

impl NoisePredictor for TrainableDenoiser {
    fn predict_noise(&self, cond: &InpaintCondition<'_>, t: usize, prompt: &[f64]) -> Result<LatentGrid> {
        self.forward(cond, t, prompt).map(|(out, _)| out)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Zero-padded "same" 3×3 convolution; weights are `[out][in][ky][kx]`.
fn conv3x3(
    input: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[o]);
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let wk = &weight[(o * cin + i) * TAPS..(o * cin + i + 1) * TAPS];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = wk[ky * KERNEL + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for_each_tap(h, w, ky, kx, |dst_i, src_i| dst[dst_i] += wv * src[src_i]);
                }
            }
        }
    }
    out
}

/// Returns `∂L/∂input`, accumulating weight and bias gradients.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    weight: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
) -> Vec<f64> {
    let plane = h * w;
    let mut grad_in = vec![0.0; cin * plane];
    for o in 0..cout {
        let go = &grad_out[o * plane..(o + 1) * plane];
        grad_b[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let src = &input[i * plane..(i + 1) * plane];
            let gi = &mut grad_in[i * plane..(i + 1) * plane];
            let base = (o * cin + i) * TAPS;
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let wv = weight[base + ky * KERNEL + kx];
                    let mut acc = 0.0;
                    for_each_tap(h, w, ky, kx, |dst_i, src_i| {
                        acc += go[dst_i] * src[src_i];
                        gi[src_i] += wv * go[dst_i];
                    });
                    grad_w[base + ky * KERNEL + kx] += acc;
                }
            }
        }
    }
    grad_in
}

/// Visits every `(output index, input index)` pair linked by kernel tap `(ky, kx)`.
#[inline]
fn for_each_tap(h: usize, w: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
    let (y0, y1) = (1usize.saturating_sub(ky), (h + 1 - ky).min(h));
    let (x0, x1) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
    for y in y0..y1 {
        let sy = y + ky - 1;
        for x in x0..x1 {
            f(y * w + x, sy * w + x + kx - 1);
        }
    }
}
