//! A small residual convolutional denoiser with hand-written backprop.
//!
//! The stack is `conv → ReLU → … → conv`; in residual mode the stack
//! estimates the noise and the output is `input − estimate`. There is no
//! batch normalisation: every layer is convolution plus bias.

mod checkpoint;
mod conv;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use conv::{
    conv_backward, conv_forward, relu_backward, relu_forward, ConvCache, ConvGrads, ConvLayer,
    FeatureMap,
};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Number of `width → width` layers between the input and output layers.
    pub hidden_layers: usize,
    pub width: usize,
    pub kernel: usize,
    pub residual: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden_layers: 3,
            width: 16,
            kernel: 3,
            residual: true,
        }
    }
}

impl NetConfig {
    pub fn conv_layers(&self) -> usize {
        self.hidden_layers + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    pub layers: Vec<ConvLayer>,
    pub residual: bool,
}

/// Activations saved by [`net_forward`]: the input to every conv layer.
#[derive(Debug, Clone)]
pub struct NetCache {
    inputs: Vec<FeatureMap>,
}

/// Parameter gradients, one entry per layer, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTape {
    pub layers: Vec<LayerGrad>,
    pub input: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TinyNet {
    pub fn from_layers(layers: Vec<ConvLayer>, residual: bool) -> Result<Self> {
        let (Some(first), Some(last)) = (layers.first(), layers.last()) else {
            return Err(Error::invalid("network needs at least one layer"));
        };
        if first.in_ch != 3 || last.out_ch != 3 {
            return Err(Error::invalid(format!(
                "network must map 3 channels to 3, got {} -> {}",
                first.in_ch, last.out_ch
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::invalid(format!(
                    "layer {i} outputs {} channels but layer {} expects {}",
                    pair[0].out_ch,
                    i + 1,
                    pair[1].in_ch
                )));
            }
        }
        for l in &layers {
            if l.weight.len() != l.out_ch * l.in_ch * l.k * l.k || l.bias.len() != l.out_ch {
                return Err(Error::invalid("layer parameter length does not match its shape"));
            }
        }
        Ok(TinyNet { layers, residual })
    }

    /// All parameters zero: the identity map in residual mode.
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        let mut layers = Vec::with_capacity(cfg.conv_layers());
        let mut in_ch = 3;
        for i in 0..cfg.conv_layers() {
            let out_ch = if i + 1 == cfg.conv_layers() { 3 } else { cfg.width };
            layers.push(ConvLayer::zeros(in_ch, out_ch, cfg.kernel)?);
            in_ch = out_ch;
        }
        TinyNet::from_layers(layers, cfg.residual)
    }

    /// He-normal weights from `seed`, zero biases, and the output layer
    /// scaled to `N(0, 1e-3²)` so training starts close to the identity.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        TinyNet::init(cfg, seed, Some(1e-3))
    }

    /// He-normal everywhere, the output layer included.
    pub fn he(cfg: &NetConfig, seed: u64) -> Result<Self> {
        TinyNet::init(cfg, seed, None)
    }

    fn init(cfg: &NetConfig, seed: u64, output_scale: Option<f64>) -> Result<Self> {
        let mut net = TinyNet::zeros(cfg)?;
        let last = net.layers.len() - 1;
        for (idx, layer) in net.layers.iter_mut().enumerate() {
            let mut rng = SeededRng::new(seed, idx as u64);
            let he = (2.0 / (layer.in_ch * layer.k * layer.k) as f64).sqrt();
            let std = match output_scale {
                Some(s) if idx == last => s,
                _ => he,
            };
            layer.weight.iter_mut().for_each(|w| *w = std * rng.normal());
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ConvLayer::param_count).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.layers.iter().position(|l| !l.is_finite()) {
            Some(i) => Err(Error::Numerical(format!("non-finite parameter in layer {i}"))),
            None => Ok(()),
        }
    }

    /// Runs the network without keeping activations.
    pub fn denoise(&self, noisy: &Image) -> Result<Image> {
        Ok(net_forward(self, noisy)?.0)
    }
}

pub fn net_forward(net: &TinyNet, noisy: &Image) -> Result<(Image, NetCache)> {
    noisy.ensure_channels(3, "net_forward")?;
    let x = FeatureMap::from_image(noisy);
    let mut inputs = Vec::with_capacity(net.layers.len());
    let mut act = x;
    let last = net.layers.len() - 1;
    for (i, layer) in net.layers.iter().enumerate() {
        let (z, cache) = conv_forward(&act, layer)?;
        inputs.push(cache.input);
        act = if i == last { z } else { relu_forward(&z) };
    }
    let estimate = act.to_image()?;
    let out = if net.residual {
        noisy.sub(&estimate)?
    } else {
        estimate
    };
    Ok((out, NetCache { inputs }))
}

pub fn net_backward(net: &TinyNet, cache: &NetCache, grad_denoised: &Image) -> Result<GradTape> {
    if cache.inputs.len() != net.layers.len()
        || cache
            .inputs
            .iter()
            .zip(&net.layers)
            .any(|(x, l)| x.channels != l.in_ch)
    {
        return Err(Error::Internal("network cache does not match the network".into()));
    }
    let x0 = &cache.inputs[0];
    if grad_denoised.shape() != (x0.height, x0.width, 3) {
        return Err(Error::invalid(format!(
            "gradient shape {:?} does not match network output {}x{}x3",
            grad_denoised.shape(),
            x0.height,
            x0.width
        )));
    }
    let mut g = FeatureMap::from_image(grad_denoised);
    if net.residual {
        // d(x - N(x)) / dN = -1
        g.data.iter_mut().for_each(|v| *v = -*v);
    }
    let mut layers = Vec::with_capacity(net.layers.len());
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let grads = conv_backward(
            &g,
            &ConvCache {
                input: cache.inputs[i].clone(),
            },
            layer,
        )?;
        layers.push(LayerGrad {
            weight: grads.grad_weight,
            bias: grads.grad_bias,
        });
        g = if i > 0 {
            // inputs[i] = relu(z_{i-1}) is positive exactly where z_{i-1} is
            relu_backward(&grads.grad_x, &cache.inputs[i])?
        } else {
            grads.grad_x
        };
    }
    layers.reverse();
    let mut input = g.to_image()?;
    if net.residual {
        // identity path plus the (already negated) path through the stack
        input = grad_denoised.add(&input)?;
    }
    Ok(GradTape { layers, input })
}

impl NetCache {
    /// `true` where a ReLU input was strictly positive, over all hidden layers.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.inputs[1..]
            .iter()
            .flat_map(|x| x.data.iter().map(|&v| v > 0.0))
            .collect()
    }
}

impl GradTape {
    pub fn zeros_like(net: &TinyNet, h: usize, w: usize) -> Result<Self> {
        Ok(GradTape {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            input: Image::zeros(h, w, 3)?,
        })
    }

    /// Adds another tape's parameter gradients; the input gradient is left alone.
    pub fn accumulate(&mut self, other: &GradTape) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.iter_mut().zip(&b.weight).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale_params(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|v| *v *= k);
            l.bias.iter_mut().for_each(|v| *v *= k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|&v| v == 0.0))
            && self.input.data().iter().all(|&v| v == 0.0)
    }

    pub fn matches(&self, net: &TinyNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weight.len() == l.weight.len() && g.bias.len() == l.bias.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{l2_loss, luminance_l1_loss, LossSpec};
    use crate::rng::SeededRng;

    fn random_rgb(rng: &mut SeededRng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 3, |_, _, _| rng.uniform()).unwrap()
    }

    fn small_cfg() -> NetConfig {
        NetConfig {
            hidden_layers: 0,
            width: 4,
            ..NetConfig::default()
        }
    }

    fn with_random_bias(mut net: TinyNet, seed: u64) -> TinyNet {
        let mut rng = SeededRng::new(seed, 99);
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.uniform_range(-0.1, 0.1));
        }
        net
    }

    /// The stack written out as plain loops over HWC pixels.
    fn straight_line_forward(net: &TinyNet, img: &Image) -> Image {
        let (h, w, _) = img.shape();
        let mut act: Vec<Vec<Vec<f64>>> = (0..h)
            .map(|y| (0..w).map(|x| (0..3).map(|c| img.get(y, x, c)).collect()).collect())
            .collect();
        for (li, l) in net.layers.iter().enumerate() {
            let p = (l.k / 2) as isize;
            let mut next = vec![vec![vec![0.0; l.out_ch]; w]; h];
            for y in 0..h {
                for x in 0..w {
                    for o in 0..l.out_ch {
                        let mut acc = l.bias[o];
                        for ky in 0..l.k {
                            for kx in 0..l.k {
                                let sy = y as isize + ky as isize - p;
                                let sx = x as isize + kx as isize - p;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                for i in 0..l.in_ch {
                                    acc += l.weight[l.widx(o, i, ky, kx)]
                                        * act[sy as usize][sx as usize][i];
                                }
                            }
                        }
                        next[y][x][o] = if li + 1 < net.layers.len() { acc.max(0.0) } else { acc };
                    }
                }
            }
            act = next;
        }
        Image::from_fn(h, w, 3, |y, x, c| {
            if net.residual {
                img.get(y, x, c) - act[y][x][c]
            } else {
                act[y][x][c]
            }
        })
        .unwrap()
    }

    #[test]
    fn zero_net_is_identity() {
        let mut rng = SeededRng::new(1, 0);
        let img = random_rgb(&mut rng, 6, 7);
        let net = TinyNet::zeros(&NetConfig::default()).unwrap();
        assert_eq!(net.denoise(&img).unwrap(), img);
        let plain = TinyNet::zeros(&NetConfig {
            residual: false,
            ..NetConfig::default()
        })
        .unwrap();
        assert!(plain.denoise(&img).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_architecture() {
        let net = TinyNet::new(&NetConfig::default(), 3).unwrap();
        let shapes: Vec<(usize, usize)> = net.layers.iter().map(|l| (l.in_ch, l.out_ch)).collect();
        assert_eq!(shapes, vec![(3, 16), (16, 16), (16, 16), (16, 16), (16, 3)]);
        let last = net.layers.last().unwrap();
        assert!(last.weight.iter().all(|w| w.abs() < 1e-2));
        assert!(net.layers[0].weight.iter().any(|w| w.abs() > 0.1));
        assert_eq!(net, TinyNet::new(&NetConfig::default(), 3).unwrap());
        assert!(TinyNet::from_layers(vec![ConvLayer::zeros(3, 2, 3).unwrap()], true).is_err());
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = SeededRng::new(2, 0);
        let img = random_rgb(&mut rng, 5, 6);
        for residual in [true, false] {
            let cfg = NetConfig {
                hidden_layers: 1,
                width: 5,
                residual,
                ..NetConfig::default()
            };
            let net = with_random_bias(TinyNet::he(&cfg, 4).unwrap(), 4);
            let fast = net.denoise(&img).unwrap();
            let slow = straight_line_forward(&net, &img);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = SeededRng::new(3, 0);
        let img = random_rgb(&mut rng, 8, 8);
        let net = TinyNet::he(&NetConfig::default(), 1).unwrap();
        assert_eq!(net.denoise(&img).unwrap(), net.denoise(&img).unwrap());
    }

    #[test]
    fn backward_trivial_cases() {
        let mut rng = SeededRng::new(4, 0);
        let img = random_rgb(&mut rng, 6, 6);
        let net = TinyNet::he(&small_cfg(), 2).unwrap();
        let (out, cache) = net_forward(&net, &img).unwrap();
        let tape = net_backward(&net, &cache, &Image::zeros(6, 6, 3).unwrap()).unwrap();
        assert!(tape.is_zero());
        assert!(tape.matches(&net));
        let at_target = l2_loss(&out, &out).unwrap();
        let tape = net_backward(&net, &cache, &at_target.grad).unwrap();
        assert!(tape.is_zero());
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut rng = SeededRng::new(5, 0);
        let img = random_rgb(&mut rng, 6, 6);
        let a = TinyNet::he(&small_cfg(), 2).unwrap();
        let b = TinyNet::he(&NetConfig::default(), 2).unwrap();
        let (_, cache) = net_forward(&a, &img).unwrap();
        assert!(matches!(
            net_backward(&b, &cache, &Image::zeros(6, 6, 3).unwrap()),
            Err(Error::Internal(_))
        ));
        assert!(net_backward(&a, &cache, &Image::zeros(5, 6, 3).unwrap()).is_err());
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(6, 0);
        let img = random_rgb(&mut rng, 5, 5);
        let target = random_rgb(&mut rng, 5, 5);
        let net = with_random_bias(TinyNet::he(&small_cfg(), 8).unwrap(), 8);
        let loss = |x: &Image| l2_loss(&net.denoise(x).unwrap(), &target).unwrap().value;
        let (out, cache) = net_forward(&net, &img).unwrap();
        let tape = net_backward(&net, &cache, &l2_loss(&out, &target).unwrap().grad).unwrap();
        let h = 1e-5;
        for j in 0..img.len() {
            let mut hi = img.data().to_vec();
            let mut lo = img.data().to_vec();
            hi[j] += h;
            lo[j] -= h;
            let fd = (loss(&Image::new(5, 5, 3, hi).unwrap()) - loss(&Image::new(5, 5, 3, lo).unwrap()))
                / (2.0 * h);
            let a = tape.input.data()[j];
            assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-4), "{a} vs {fd}");
        }
    }

    #[test]
    fn parameter_gradients_through_luminance_loss() {
        let mut rng = SeededRng::new(7, 0);
        let img = random_rgb(&mut rng, 6, 6);
        let target = random_rgb(&mut rng, 6, 6);
        let spec = LossSpec::luminance_l1(1.0);
        let net = with_random_bias(TinyNet::he(&small_cfg(), 9).unwrap(), 9);
        let (out, cache) = net_forward(&net, &img).unwrap();
        let tape =
            net_backward(&net, &cache, &luminance_l1_loss(&out, &target, &spec).unwrap().grad).unwrap();
        let loss = |n: &TinyNet| {
            luminance_l1_loss(&n.denoise(&img).unwrap(), &target, &spec)
                .unwrap()
                .value
        };
        let h = 1e-5;
        for (li, layer) in net.layers.iter().enumerate() {
            for j in 0..layer.weight.len() {
                let mut hi = net.clone();
                let mut lo = net.clone();
                hi.layers[li].weight[j] += h;
                lo.layers[li].weight[j] -= h;
                let fd = (loss(&hi) - loss(&lo)) / (2.0 * h);
                let a = tape.layers[li].weight[j];
                assert!((a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-4), "{a} vs {fd}");
            }
        }
    }
}
