//! Same-padded 2-D cross-correlation and ReLU on planar feature maps.

use crate::error::{Error, Result};
use crate::image::Image;

/// Planar `channels × height × width` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_image(img: &Image) -> Self {
        let (h, w, c) = img.shape();
        let mut data = vec![0.0; h * w * c];
        for (p, px) in img.data().chunks_exact(c).enumerate() {
            for (ch, &v) in px.iter().enumerate() {
                data[ch * h * w + p] = v;
            }
        }
        FeatureMap {
            channels: c,
            height: h,
            width: w,
            data,
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        let plane = self.height * self.width;
        let mut data = vec![0.0; self.data.len()];
        for ch in 0..self.channels {
            for p in 0..plane {
                data[p * self.channels + ch] = self.data[ch * plane + p];
            }
        }
        Image::new(self.height, self.width, self.channels, data)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    /// `[out_ch][in_ch][k][k]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Result<Self> {
        if k % 2 == 0 || in_ch == 0 || out_ch == 0 {
            return Err(Error::invalid(format!(
                "conv layer needs odd kernel and positive channels, got {in_ch}->{out_ch} k={k}"
            )));
        }
        Ok(ConvLayer {
            in_ch,
            out_ch,
            k,
            weight: vec![0.0; out_ch * in_ch * k * k],
            bias: vec![0.0; out_ch],
        })
    }

    #[inline]
    pub fn widx(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + i) * self.k + ky) * self.k + kx
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// What the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache {
    pub input: FeatureMap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub grad_x: FeatureMap,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

/// Valid output range along one axis for kernel offset `d` (may be negative).
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

pub fn conv_forward(x: &FeatureMap, layer: &ConvLayer) -> Result<(FeatureMap, ConvCache)> {
    if x.channels != layer.in_ch {
        return Err(Error::invalid(format!(
            "conv expects {} input channels, got {}",
            layer.in_ch, x.channels
        )));
    }
    let (h, w) = (x.height, x.width);
    let plane = h * w;
    let pad = (layer.k / 2) as isize;
    let mut out = FeatureMap::zeros(layer.out_ch, h, w);
    for o in 0..layer.out_ch {
        let dst = &mut out.data[o * plane..(o + 1) * plane];
        dst.fill(layer.bias[o]);
        for i in 0..layer.in_ch {
            let src = x.plane(i);
            for ky in 0..layer.k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..layer.k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let wv = layer.weight[layer.widx(o, i, ky, kx)];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s = &src[sy * w + (x0 as isize + dx) as usize..][..x1 - x0];
                        let d = &mut dst[y * w + x0..y * w + x1];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    Ok((out, ConvCache { input: x.clone() }))
}

pub fn conv_backward(grad_out: &FeatureMap, cache: &ConvCache, layer: &ConvLayer) -> Result<ConvGrads> {
    let x = &cache.input;
    if grad_out.channels != layer.out_ch || grad_out.height != x.height || grad_out.width != x.width {
        return Err(Error::invalid(format!(
            "conv grad_out shape {}x{}x{} does not match forward output {}x{}x{}",
            grad_out.channels, grad_out.height, grad_out.width, layer.out_ch, x.height, x.width
        )));
    }
    if x.channels != layer.in_ch {
        return Err(Error::Internal("conv cache does not match layer".into()));
    }
    let (h, w) = (x.height, x.width);
    let plane = h * w;
    let pad = (layer.k / 2) as isize;
    let mut grad_x = FeatureMap::zeros(layer.in_ch, h, w);
    let mut grad_weight = vec![0.0; layer.weight.len()];
    let mut grad_bias = vec![0.0; layer.out_ch];
    for o in 0..layer.out_ch {
        let go = grad_out.plane(o);
        grad_bias[o] = go.iter().sum();
        for i in 0..layer.in_ch {
            let src = x.plane(i);
            for ky in 0..layer.k {
                let dy = ky as isize - pad;
                let (y0, y1) = span(h, dy);
                for kx in 0..layer.k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = span(w, dx);
                    let widx = layer.widx(o, i, ky, kx);
                    let wv = layer.weight[widx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let soff = sy * w + (x0 as isize + dx) as usize;
                        let g = &go[y * w + x0..y * w + x1];
                        let s = &src[soff..soff + (x1 - x0)];
                        for (gv, sv) in g.iter().zip(s) {
                            acc += gv * sv;
                        }
                        let gx = &mut grad_x.data[i * plane + soff..i * plane + soff + (x1 - x0)];
                        for (gxv, gv) in gx.iter_mut().zip(g) {
                            *gxv += wv * gv;
                        }
                    }
                    grad_weight[widx] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_weight,
        grad_bias,
    })
}

pub fn relu_forward(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
        ..*x
    }
}

/// Masks `grad` by `pre_activation > 0`; the gradient at exactly 0 is 0.
pub fn relu_backward(grad: &FeatureMap, pre_activation: &FeatureMap) -> Result<FeatureMap> {
    if !grad.same_shape(pre_activation) {
        return Err(Error::invalid("relu_backward shape mismatch"));
    }
    Ok(FeatureMap {
        data: grad
            .data
            .iter()
            .zip(&pre_activation.data)
            .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
            .collect(),
        ..*grad
    })
}
