use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::FingerprintNetConfig;
use super::conv::Conv2d;
use super::tensor::Tensor;
use crate::error::Result;
use crate::{par, seed};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
/// Samples per gradient partial; fixed so reductions never depend on the
/// thread count.
const GRAD_GROUP: usize = 4;

/// Intensity scaling applied before the network, identical in training and
/// extraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f32,
    pub offset: f32,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            scale: 1.0 / 255.0,
            offset: 0.0,
        }
    }
}

impl Normalization {
    pub fn apply(&self, v: u8) -> f32 {
        f32::from(v) * self.scale + self.offset
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    fn new(c: usize) -> Self {
        Self {
            gamma: vec![1.0; c],
            beta: vec![0.0; c],
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub conv: Conv2d,
    pub bn: Option<BatchNorm>,
    pub relu: bool,
}

struct BnCache {
    xhat: Vec<f32>,
    inv_std: Vec<f32>,
}

/// Activations kept by [`FingerprintNet::forward_train`] for the backward pass.
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<Tensor>,
    bn: Vec<Option<BnCache>>,
}

/// Gradients in [`FingerprintNet::params`] order.
pub type Grads = Vec<Vec<f32>>;

/// Stride-1 conv stack mapping an intensity plane to a fingerprint plane.
#[derive(Clone, Debug, PartialEq)]
pub struct FingerprintNet {
    pub config: FingerprintNetConfig,
    pub normalization: Normalization,
    pub layers: Vec<Layer>,
}

fn conv_forward(conv: &Conv2d, x: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(x.n, conv.cout, x.h, x.w);
    let (h, w) = (x.h, x.w);
    let per = conv.cout * h * w;
    par::for_each_chunk_mut(&mut out.data, per, |i, chunk| conv.forward(x.sample(i), h, w, chunk));
    out
}

impl FingerprintNet {
    /// He-normal weights drawn from `seed`; zero biases; unit BN scales. With
    /// `residual_head` the output layer starts at zero.
    pub fn new(config: FingerprintNetConfig, seed_value: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng_for(seed_value, "fingerprint-net/init");
        let k = config.kernel;
        let mut layers = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let cin = if i == 0 { 1 } else { config.width };
            let cout = if i + 1 == config.depth { 1 } else { config.width };
            let hidden = i > 0 && i + 1 < config.depth;
            let bn = hidden && config.batch_norm;
            let last = i + 1 == config.depth;
            let fan_in = (cin * k * k) as f64;
            let std = if last { (1.0 / fan_in).sqrt() } else { (2.0 / fan_in).sqrt() };
            let normal = Normal::new(0.0, std).expect("positive std");
            let mut weight: Vec<f32> = (0..cout * cin * k * k).map(|_| normal.sample(&mut rng) as f32).collect();
            // an artifact head starts as the zero predictor
            if last && config.residual_head {
                weight.fill(0.0);
            }
            layers.push(Layer {
                conv: Conv2d {
                    cin,
                    cout,
                    k,
                    weight,
                    bias: (!bn).then(|| vec![0.0; cout]),
                },
                bn: bn.then(|| BatchNorm::new(cout)),
                relu: !last,
            });
        }
        Ok(Self {
            config,
            normalization: Normalization::default(),
            layers,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn params(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for l in &self.layers {
            out.push(&l.conv.weight);
            if let Some(b) = &l.conv.bias {
                out.push(b);
            }
            if let Some(bn) = &l.bn {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.conv.weight);
            if let Some(b) = &mut l.conv.bias {
                out.push(b);
            }
            if let Some(bn) = &mut l.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    /// Non-trainable state (BN running statistics).
    pub fn buffers(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = Vec::new();
        for bn in self.layers.iter().filter_map(|l| l.bn.as_ref()) {
            out.push(&bn.running_mean);
            out.push(&bn.running_var);
        }
        out
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<f32>> {
        let mut out = Vec::new();
        for bn in self.layers.iter_mut().filter_map(|l| l.bn.as_mut()) {
            out.push(&mut bn.running_mean);
            out.push(&mut bn.running_var);
        }
        out
    }

    /// Inference pass (BN uses running statistics).
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut y = conv_forward(&layer.conv, &cur);
            let hw = y.plane_len();
            if let Some(bn) = &layer.bn {
                for n in 0..y.n {
                    for c in 0..y.c {
                        let inv = 1.0 / (f64::from(bn.running_var[c]) + BN_EPS).sqrt();
                        let scale = (f64::from(bn.gamma[c]) * inv) as f32;
                        let shift = bn.beta[c] - bn.running_mean[c] * scale;
                        let off = (n * y.c + c) * hw;
                        y.data[off..off + hw].iter_mut().for_each(|v| *v = *v * scale + shift);
                    }
                }
            }
            if layer.relu {
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cur = y;
        }
        self.head(x, cur)
    }

    fn head(&self, x: &Tensor, mut f: Tensor) -> Tensor {
        if !self.config.residual_head {
            f.data.iter_mut().zip(&x.data).for_each(|(o, i)| *o = i - *o);
        }
        f
    }

    /// Training pass: BN uses batch statistics and updates running ones.
    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, ForwardCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut bn_caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &mut self.layers {
            let mut y = conv_forward(&layer.conv, &cur);
            let hw = y.plane_len();
            let mut cache = None;
            if let Some(bn) = &mut layer.bn {
                let m = (y.n * hw) as f64;
                let mut xhat = vec![0.0f32; y.data.len()];
                let mut inv_std = vec![0.0f32; y.c];
                for c in 0..y.c {
                    let (mut sum, mut sq) = (0.0f64, 0.0f64);
                    for n in 0..y.n {
                        for &v in &y.data[(n * y.c + c) * hw..][..hw] {
                            sum += f64::from(v);
                            sq += f64::from(v) * f64::from(v);
                        }
                    }
                    let mean = sum / m;
                    let var = (sq / m - mean * mean).max(0.0);
                    let inv = 1.0 / (var + BN_EPS).sqrt();
                    inv_std[c] = inv as f32;
                    let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                    bn.running_mean[c] =
                        ((1.0 - BN_MOMENTUM) * f64::from(bn.running_mean[c]) + BN_MOMENTUM * mean) as f32;
                    bn.running_var[c] =
                        ((1.0 - BN_MOMENTUM) * f64::from(bn.running_var[c]) + BN_MOMENTUM * unbiased) as f32;
                    for n in 0..y.n {
                        let off = (n * y.c + c) * hw;
                        for i in off..off + hw {
                            let xh = ((f64::from(y.data[i]) - mean) * inv) as f32;
                            xhat[i] = xh;
                            y.data[i] = bn.gamma[c] * xh + bn.beta[c];
                        }
                    }
                }
                cache = Some(BnCache { xhat, inv_std });
            }
            if layer.relu {
                y.data.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(cur);
            bn_caches.push(cache);
            cur = y;
        }
        let out = self.head(x, cur);
        (
            out,
            ForwardCache {
                inputs,
                bn: bn_caches,
            },
        )
    }

    /// Gradients of a loss with respect to the parameters, given the loss
    /// gradient at the output.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Tensor) -> Grads {
        let mut g = grad_out.clone();
        if !self.config.residual_head {
            g.data.iter_mut().for_each(|v| *v = -*v);
        }
        let mut per_layer: Vec<Vec<Vec<f32>>> = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let hw = g.plane_len();
            if layer.relu {
                let act = if li + 1 < self.layers.len() {
                    &cache.inputs[li + 1]
                } else {
                    unreachable!("last layer has no activation")
                };
                g.data.iter_mut().zip(&act.data).for_each(|(gv, a)| {
                    if *a <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let mut bn_grads = None;
            if let (Some(bn), Some(bc)) = (&layer.bn, &cache.bn[li]) {
                let m = (g.n * hw) as f64;
                let mut dgamma = vec![0.0f32; g.c];
                let mut dbeta = vec![0.0f32; g.c];
                for c in 0..g.c {
                    let (mut sg, mut sgx) = (0.0f64, 0.0f64);
                    for n in 0..g.n {
                        let off = (n * g.c + c) * hw;
                        for i in off..off + hw {
                            sg += f64::from(g.data[i]);
                            sgx += f64::from(g.data[i]) * f64::from(bc.xhat[i]);
                        }
                    }
                    dgamma[c] = sgx as f32;
                    dbeta[c] = sg as f32;
                    let k = f64::from(bn.gamma[c]) * f64::from(bc.inv_std[c]) / m;
                    for n in 0..g.n {
                        let off = (n * g.c + c) * hw;
                        for i in off..off + hw {
                            let v = k * (m * f64::from(g.data[i]) - sg - f64::from(bc.xhat[i]) * sgx);
                            g.data[i] = v as f32;
                        }
                    }
                }
                bn_grads = Some((dgamma, dbeta));
            }

            let x = &cache.inputs[li];
            let conv = &layer.conv;
            let need_gx = li > 0;
            let groups = g.n.div_ceil(GRAD_GROUP);
            let (h, w) = (g.h, g.w);
            let partials = par::map_range(groups, |gi| {
                let mut gw = vec![0.0f32; conv.weight.len()];
                let mut gb = conv.bias.as_ref().map(|b| vec![0.0f32; b.len()]);
                let lo = gi * GRAD_GROUP;
                let hi = (lo + GRAD_GROUP).min(g.n);
                let mut gx = if need_gx {
                    vec![0.0f32; (hi - lo) * conv.cin * h * w]
                } else {
                    Vec::new()
                };
                for (j, s) in (lo..hi).enumerate() {
                    let gx_s = need_gx.then(|| &mut gx[j * conv.cin * h * w..(j + 1) * conv.cin * h * w]);
                    conv.backward(x.sample(s), g.sample(s), h, w, &mut gw, gb.as_deref_mut(), gx_s);
                }
                (gw, gb, gx)
            });
            let mut gw = vec![0.0f32; conv.weight.len()];
            let mut gb = conv.bias.as_ref().map(|b| vec![0.0f32; b.len()]);
            let mut gx = Tensor::zeros(if need_gx { g.n } else { 0 }, conv.cin, h, w);
            let mut offset = 0;
            for (pw, pb, px) in partials {
                gw.iter_mut().zip(&pw).for_each(|(a, b)| *a += b);
                if let (Some(gb), Some(pb)) = (gb.as_mut(), pb) {
                    gb.iter_mut().zip(&pb).for_each(|(a, b)| *a += b);
                }
                if need_gx {
                    gx.data[offset..offset + px.len()].copy_from_slice(&px);
                    offset += px.len();
                }
            }
            let mut grads = vec![gw];
            if let Some(gb) = gb {
                grads.push(gb);
            }
            if let Some((dg, db)) = bn_grads {
                grads.push(dg);
                grads.push(db);
            }
            per_layer.push(grads);
            if need_gx {
                g = gx;
            }
        }
        per_layer.into_iter().rev().flatten().collect()
    }

    /// Normalizes an 8-bit plane and runs one inference pass on it.
    pub fn apply_plane(&self, plane: &Array2<u8>) -> Array2<f32> {
        let (h, w) = plane.dim();
        let input: Vec<f32> = plane.iter().map(|&v| self.normalization.apply(v)).collect();
        let out = self.forward(&Tensor::from_planes(&[input], h, w));
        Array2::from_shape_vec((h, w), out.data).expect("single-channel output")
    }

    pub fn normalize_plane(&self, plane: &Array2<u8>) -> Vec<f32> {
        plane.iter().map(|&v| self.normalization.apply(v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(n: usize, h: usize, w: usize, seed_value: u64) -> Tensor {
        let mut rng = seed::rng(seed_value);
        let planes: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        Tensor::from_planes(&planes, h, w)
    }

    #[test]
    fn forward_preserves_shape_and_is_deterministic() {
        let net = FingerprintNet::new(FingerprintNetConfig::small(2, 1), 4).unwrap();
        let x = random_input(2, 9, 13, 1);
        let y = net.forward(&x);
        assert_eq!((y.n, y.c, y.h, y.w), (2, 1, 9, 13));
        let again = FingerprintNet::new(FingerprintNetConfig::small(2, 1), 4).unwrap();
        assert_eq!(again.forward(&x), y);
        assert!(y.data.iter().all(|v| *v == 0.0));
        let plane = FingerprintNetConfig {
            residual_head: false,
            ..FingerprintNetConfig::small(2, 1)
        };
        let a = FingerprintNet::new(plane.clone(), 4).unwrap();
        let b = FingerprintNet::new(plane, 5).unwrap();
        assert_ne!(a.forward(&x), b.forward(&x));
    }

    fn check_gradients(config: FingerprintNetConfig) {
        let mut net = FingerprintNet::new(config, 8).unwrap();
        // a zero head would hide every upstream gradient
        let mut rng = seed::rng(11);
        let head = &mut net.layers.last_mut().unwrap().conv.weight;
        head.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        let x = random_input(3, 6, 7, 2);
        let r = random_input(3, 6, 7, 3);
        // loss = sum(out * r) in train mode
        let loss = |net: &FingerprintNet| -> f64 {
            let mut copy = net.clone();
            let (out, _) = copy.forward_train(&x);
            out.data.iter().zip(&r.data).map(|(a, b)| f64::from(*a) * f64::from(*b)).sum()
        };
        let (_, cache) = net.forward_train(&x);
        let grads = net.backward(&cache, &r);
        let eps = 1e-3f32;
        let n_params = grads.len();
        for p in 0..n_params {
            for idx in [0usize, grads[p].len() / 2] {
                let orig = net.params()[p][idx];
                net.params_mut()[p][idx] = orig + eps;
                let up = loss(&net);
                net.params_mut()[p][idx] = orig - eps;
                let down = loss(&net);
                net.params_mut()[p][idx] = orig;
                let fd = (up - down) / (2.0 * f64::from(eps));
                let an = f64::from(grads[p][idx]);
                assert!(
                    (fd - an).abs() < 2e-2 * (1.0 + fd.abs()),
                    "param {p}[{idx}]: finite difference {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn gradients_without_batch_norm() {
        check_gradients(FingerprintNetConfig::small(3, 3));
    }

    #[test]
    fn gradients_with_batch_norm() {
        check_gradients(FingerprintNetConfig {
            batch_norm: true,
            ..FingerprintNetConfig::small(4, 3)
        });
    }

    #[test]
    fn gradients_with_clean_plane_head() {
        check_gradients(FingerprintNetConfig {
            residual_head: false,
            ..FingerprintNetConfig::small(3, 2)
        });
    }
}
