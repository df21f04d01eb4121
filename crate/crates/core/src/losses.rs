//! Training losses with analytic gradients.
//!
//! Every loss is a mean over its own element count: `3·H·W` for the pixel
//! terms and `H·W` for the luminance term. The L1 subgradient uses
//! `sign(0) = 0`, so `pred == target` is always stationary.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::{grayscale_backward, to_grayscale, Image, LuminanceWeights};

/// A scalar loss and its gradient with respect to the prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Image,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    L1,
    L2,
    LuminanceL1,
}

/// Pixel-space term that the luminance penalty is added to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PixelBase {
    #[default]
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    pub lambda: f64,
    pub pixel_base: PixelBase,
    pub weights: LuminanceWeights,
}

impl LossSpec {
    pub fn l1() -> Self {
        LossSpec {
            kind: LossKind::L1,
            lambda: 1.0,
            pixel_base: PixelBase::L1,
            weights: LuminanceWeights::DEFAULT,
        }
    }

    pub fn l2() -> Self {
        LossSpec {
            kind: LossKind::L2,
            ..LossSpec::l1()
        }
    }

    pub fn luminance_l1(lambda: f64) -> Self {
        LossSpec {
            kind: LossKind::LuminanceL1,
            lambda,
            ..LossSpec::l1()
        }
    }

    pub fn with_pixel_base(mut self, base: PixelBase) -> Self {
        self.pixel_base = base;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Builds a spec from the `loss`, `lambda` and `pixel_base` config values.
    pub fn from_parts(loss: &str, lambda: Option<f64>, pixel_base: Option<&str>) -> Result<Self> {
        let mut spec = match loss.trim() {
            "l1" => LossSpec::l1(),
            "l2" => LossSpec::l2(),
            "luml1" => LossSpec::luminance_l1(1.0),
            other => return Err(Error::invalid(format!("unknown loss {other:?}"))),
        };
        if let Some(l) = lambda {
            spec.lambda = l;
        }
        if let Some(b) = pixel_base {
            spec.pixel_base = b.parse()?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn is_luminance(&self) -> bool {
        self.kind == LossKind::LuminanceL1
    }

    /// Short column label: `l1`, `l2`, `luml1`, or `luml1-lam0.5-l2` for
    /// non-default combinations.
    pub fn label(&self) -> String {
        match self.kind {
            LossKind::L1 => "l1".into(),
            LossKind::L2 => "l2".into(),
            LossKind::LuminanceL1 => {
                let mut s = String::from("luml1");
                if self.lambda != 1.0 {
                    s.push_str(&format!("-lam{}", self.lambda));
                }
                if self.pixel_base == PixelBase::L2 {
                    s.push_str("-l2");
                }
                s
            }
        }
    }
}

impl fmt::Display for PixelBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PixelBase::L1 => "l1",
            PixelBase::L2 => "l2",
        })
    }
}

impl FromStr for PixelBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "l1" => Ok(PixelBase::L1),
            "l2" => Ok(PixelBase::L2),
            other => Err(Error::invalid(format!("unknown pixel_base {other:?}"))),
        }
    }
}

/// Compact form used in plan files: `l1`, `l2`, `luml1`, `luml1:<lambda>`,
/// `luml1:<lambda>:<pixel_base>`.
impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default();
        let lambda = parts
            .next()
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad lambda in {s:?}")))
            })
            .transpose()?;
        let base = parts.next();
        if parts.next().is_some() {
            return Err(Error::invalid(format!("too many fields in loss {s:?}")));
        }
        if kind.trim() != "luml1" && (lambda.is_some() || base.is_some()) {
            return Err(Error::invalid(format!("only luml1 takes parameters: {s:?}")));
        }
        LossSpec::from_parts(kind, lambda, base)
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LossKind::L1 => f.write_str("l1"),
            LossKind::L2 => f.write_str("l2"),
            LossKind::LuminanceL1 => write!(f, "luml1:{}:{}", self.lambda, self.pixel_base),
        }
    }
}

#[inline]
fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn l1_loss(pred: &Image, target: &Image) -> Result<LossOutput> {
    pred.ensure_same_shape(target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        total += d.abs();
        grad.push(sign(d) / n);
    }
    Ok(LossOutput {
        value: total / n,
        grad: pred.with_data(grad),
    })
}

pub fn l2_loss(pred: &Image, target: &Image) -> Result<LossOutput> {
    pred.ensure_same_shape(target)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = p - t;
        total += d * d;
        grad.push(2.0 * d / n);
    }
    Ok(LossOutput {
        value: total / n,
        grad: pred.with_data(grad),
    })
}

/// Mean absolute difference of the luminance projections, with the gradient
/// pulled back through the projection.
pub fn luminance_term(pred: &Image, target: &Image, w: &LuminanceWeights) -> Result<LossOutput> {
    pred.ensure_same_shape(target)?;
    pred.ensure_channels(3, "luminance_term")?;
    let gp = to_grayscale(pred, w)?;
    let gt = to_grayscale(target, w)?;
    let m = gp.len() as f64;
    let mut total = 0.0;
    let mut gray_grad = Vec::with_capacity(gp.len());
    for (&p, &t) in gp.data().iter().zip(gt.data()) {
        let d = p - t;
        total += d.abs();
        gray_grad.push(sign(d) / m);
    }
    let grad = grayscale_backward(&gp.with_data(gray_grad), w)?;
    Ok(LossOutput {
        value: total / m,
        grad,
    })
}

fn pixel_loss(base: PixelBase, pred: &Image, target: &Image) -> Result<LossOutput> {
    match base {
        PixelBase::L1 => l1_loss(pred, target),
        PixelBase::L2 => l2_loss(pred, target),
    }
}

/// `pixel_base(pred, target) + λ · luminance_term(pred, target)`.
pub fn luminance_l1_loss(pred: &Image, target: &Image, spec: &LossSpec) -> Result<LossOutput> {
    if spec.kind != LossKind::LuminanceL1 {
        return Err(Error::invalid(format!(
            "luminance_l1_loss called with {:?} spec",
            spec.kind
        )));
    }
    spec.validate()?;
    pred.ensure_channels(3, "luminance_l1_loss")?;
    let pixel = pixel_loss(spec.pixel_base, pred, target)?;
    if spec.lambda == 0.0 {
        return Ok(pixel);
    }
    let lum = luminance_term(pred, target, &spec.weights)?;
    let lambda = spec.lambda;
    let grad = pixel
        .grad
        .data()
        .iter()
        .zip(lum.grad.data())
        .map(|(a, b)| a + lambda * b)
        .collect();
    Ok(LossOutput {
        value: pixel.value + lambda * lum.value,
        grad: pixel.grad.with_data(grad),
    })
}

pub fn eval_loss(spec: &LossSpec, pred: &Image, target: &Image) -> Result<LossOutput> {
    match spec.kind {
        LossKind::L1 => l1_loss(pred, target),
        LossKind::L2 => l2_loss(pred, target),
        LossKind::LuminanceL1 => luminance_l1_loss(pred, target, spec),
    }
}
