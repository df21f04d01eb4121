//! Finite-difference verification of every analytic gradient.
//!
//! Each check perturbs one element by `±STEP`, takes the central difference
//! of the scalar loss, and compares it with the analytic gradient. Elements
//! whose perturbation could straddle an absolute-value kink are skipped.

use crate::error::Result;
use crate::image::{to_grayscale, Image, LuminanceWeights};
use crate::losses::{eval_loss, l1_loss, l2_loss, luminance_term, LossOutput, LossSpec};
use crate::rng::SeededRng;
use crate::tinynet::{net_backward, net_forward, NetCache, NetConfig, TinyNet};

pub const STEP: f64 = 1e-5;
/// Distance from an L1 kink below which an element is not checked.
pub const KINK_MARGIN: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const TOL_L2: f64 = 1e-6;
/// Denominator floor, relative to the largest analytic gradient magnitude in
/// the same check, so that near-zero entries are judged on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor).max(1e-300)
}

fn random_rgb(rng: &mut SeededRng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, 3, |_, _, _| rng.uniform()).unwrap()
}

/// Which loss terms are active, for kink exclusion.
#[derive(Debug, Clone, Copy)]
struct Kinks {
    pixel: bool,
    luminance: bool,
}

fn near_kink(pred: &Image, target: &Image, idx: usize, kinks: Kinks, w: &LuminanceWeights) -> bool {
    if kinks.pixel && (pred.data()[idx] - target.data()[idx]).abs() < KINK_MARGIN {
        return true;
    }
    if kinks.luminance {
        let p = idx / 3 * 3;
        let gp = w.project(&pred.data()[p..p + 3]);
        let gt = w.project(&target.data()[p..p + 3]);
        if (gp - gt).abs() < KINK_MARGIN {
            return true;
        }
    }
    false
}

fn check_image_loss(
    name: &str,
    pairs: &[(Image, Image)],
    kinks: Kinks,
    tol: f64,
    f: impl Fn(&Image, &Image) -> Result<LossOutput>,
) -> Result<CheckResult> {
    let w = LuminanceWeights::default();
    let mut res = CheckResult {
        name: name.to_string(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tol,
    };
    for (pred, target) in pairs {
        let analytic = f(pred, target)?.grad;
        let floor = SCALE_FLOOR * analytic.data().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let (h, wd, c) = pred.shape();
        for idx in 0..pred.len() {
            if near_kink(pred, target, idx, kinks, &w) {
                res.skipped += 1;
                continue;
            }
            let mut hi = pred.data().to_vec();
            let mut lo = pred.data().to_vec();
            hi[idx] += STEP;
            lo[idx] -= STEP;
            let fhi = f(&Image::new(h, wd, c, hi)?, target)?.value;
            let flo = f(&Image::new(h, wd, c, lo)?, target)?.value;
            let numeric = (fhi - flo) / (2.0 * STEP);
            let err = relative_error(analytic.data()[idx], numeric, floor);
            res.max_rel_err = res.max_rel_err.max(err);
            res.checked += 1;
        }
    }
    Ok(res)
}

/// Ten seeded 8×8×3 pairs per loss: L1, L2, the luminance term and the
/// combined loss at λ ∈ {0.5, 1, 2}.
pub fn loss_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = SeededRng::new(seed, 0x6c6f7373);
    let pairs: Vec<(Image, Image)> = (0..10)
        .map(|_| (random_rgb(&mut rng, 8, 8), random_rgb(&mut rng, 8, 8)))
        .collect();
    let w = LuminanceWeights::default();
    let mut out = vec![
        check_image_loss("l1_loss", &pairs, Kinks { pixel: true, luminance: false }, TOL, l1_loss)?,
        check_image_loss("l2_loss", &pairs, Kinks { pixel: false, luminance: false }, TOL_L2, l2_loss)?,
        check_image_loss(
            "luminance_term",
            &pairs,
            Kinks { pixel: false, luminance: true },
            TOL,
            |p, t| luminance_term(p, t, &w),
        )?,
    ];
    for lambda in [0.5, 1.0, 2.0] {
        let spec = LossSpec::luminance_l1(lambda);
        out.push(check_image_loss(
            &format!("luminance_l1_loss(lambda={lambda})"),
            &pairs,
            Kinks { pixel: true, luminance: true },
            TOL,
            |p, t| eval_loss(&spec, p, t),
        )?);
    }
    Ok(out)
}

/// Signs that decide which linear piece the loss is on: ReLU activity plus
/// the sign of every pixel and luminance residual.
fn piece_signature(cache: &NetCache, out: &Image, target: &Image) -> Vec<i8> {
    let w = LuminanceWeights::default();
    let mut sig: Vec<i8> = cache.activation_pattern().into_iter().map(i8::from).collect();
    sig.extend(
        out.data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b).partial_cmp(&0.0).map_or(0, |o| o as i8)),
    );
    let go = to_grayscale(out, &w).unwrap();
    let gt = to_grayscale(target, &w).unwrap();
    sig.extend(
        go.data()
            .iter()
            .zip(gt.data())
            .map(|(a, b)| (a - b).partial_cmp(&0.0).map_or(0, |o| o as i8)),
    );
    sig
}

/// Every parameter of a seeded two-layer net on an 8×8 input, differentiated
/// end to end through the combined loss. Parameters whose perturbation
/// changes the linear piece are skipped.
pub fn network_suite(seed: u64) -> Result<CheckResult> {
    let cfg = NetConfig {
        hidden_layers: 0,
        width: 16,
        ..NetConfig::default()
    };
    let mut net = TinyNet::he(&cfg, seed)?;
    let mut rng = SeededRng::new(seed, 0x6e6574);
    for l in &mut net.layers {
        l.bias.iter_mut().for_each(|b| *b = rng.uniform_range(-0.1, 0.1));
    }
    let noisy = random_rgb(&mut rng, 8, 8);
    let target = random_rgb(&mut rng, 8, 8);
    let spec = LossSpec::luminance_l1(1.0);

    let (out, cache) = net_forward(&net, &noisy)?;
    let base_sig = piece_signature(&cache, &out, &target);
    let tape = net_backward(&net, &cache, &eval_loss(&spec, &out, &target)?.grad)?;
    let floor = SCALE_FLOOR
        * tape
            .layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .fold(0.0f64, |m, g| m.max(g.abs()));

    let eval = |n: &TinyNet| -> Result<(f64, Vec<i8>)> {
        let (o, c) = net_forward(n, &noisy)?;
        Ok((eval_loss(&spec, &o, &target)?.value, piece_signature(&c, &o, &target)))
    };

    let mut res = CheckResult {
        name: "tinynet 2-layer via luminance_l1_loss".into(),
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        tol: TOL,
    };
    for li in 0..net.layers.len() {
        let nw = net.layers[li].weight.len();
        let nb = net.layers[li].bias.len();
        for j in 0..nw + nb {
            let mut hi = net.clone();
            let mut lo = net.clone();
            let analytic = if j < nw {
                hi.layers[li].weight[j] += STEP;
                lo.layers[li].weight[j] -= STEP;
                tape.layers[li].weight[j]
            } else {
                hi.layers[li].bias[j - nw] += STEP;
                lo.layers[li].bias[j - nw] -= STEP;
                tape.layers[li].bias[j - nw]
            };
            let (fhi, shi) = eval(&hi)?;
            let (flo, slo) = eval(&lo)?;
            if shi != base_sig || slo != base_sig {
                res.skipped += 1;
                continue;
            }
            let numeric = (fhi - flo) / (2.0 * STEP);
            res.max_rel_err = res.max_rel_err.max(relative_error(analytic, numeric, floor));
            res.checked += 1;
        }
    }
    Ok(res)
}

pub fn run_suite(seed: u64) -> Result<Vec<CheckResult>> {
    let mut all = loss_suite(seed)?;
    all.push(network_suite(seed)?);
    Ok(all)
}
