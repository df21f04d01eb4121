//! Synthetic clean images, additive Gaussian noise and blind training patches.
//!
//! Noise levels are given on the 0–255 scale and divided by 255 internally.
//! Noise is added without clamping.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::par::Exec;
use crate::rng::{mix_seed, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma_255: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma_255: f64, seed: u64) -> Self {
        NoiseSpec { sigma_255, seed }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_255 / 255.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlindTrainSpec {
    pub sigma_max_255: f64,
    pub patch_size: usize,
    pub count: usize,
    pub seed: u64,
}

/// A training pair. It carries no noise level: the consumer is blind.
#[derive(Debug, Clone, PartialEq)]
pub struct BlindPair {
    pub noisy: Image,
    pub clean: Image,
}

pub fn gen_clean(seed: u64, count: usize, h: usize, w: usize) -> Result<Vec<Image>> {
    gen_clean_with(seed, count, h, w, Exec::default())
}

/// Procedural RGB images: a two-colour gradient, a few translucent
/// rectangles and a low-frequency sinusoidal texture. Image `i` draws from
/// stream `i` of `seed`, so the output does not depend on `exec`.
pub fn gen_clean_with(seed: u64, count: usize, h: usize, w: usize, exec: Exec) -> Result<Vec<Image>> {
    if h < 16 || w < 16 {
        return Err(Error::invalid(format!(
            "synthetic images must be at least 16x16, got {h}x{w}"
        )));
    }
    exec.map_range(count, |i| synth_image(&mut SeededRng::new(seed, i as u64), h, w))
        .into_iter()
        .collect()
}

struct Rect {
    y0: f64,
    y1: f64,
    x0: f64,
    x1: f64,
    color: [f64; 3],
    alpha: f64,
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: [f64; 3],
}

fn synth_image(rng: &mut SeededRng, h: usize, w: usize) -> Result<Image> {
    let tau = 2.0 * std::f64::consts::PI;
    let c0: [f64; 3] = std::array::from_fn(|_| rng.uniform());
    // Second colour differs by at least 0.3 per channel so every channel varies.
    let c1: [f64; 3] = std::array::from_fn(|c| {
        let step = rng.uniform_range(0.3, 0.6);
        if c0[c] + step <= 1.0 {
            c0[c] + step
        } else {
            c0[c] - step
        }
    });
    let angle = rng.uniform_range(0.0, tau);
    let (dir_y, dir_x) = (libm::sin(angle), libm::cos(angle));

    let n_rects = 2 + rng.below(4) as usize;
    let rects: Vec<Rect> = (0..n_rects)
        .map(|_| {
            let (a, b) = (rng.uniform(), rng.uniform());
            let (c, d) = (rng.uniform(), rng.uniform());
            Rect {
                y0: a.min(b) * h as f64,
                y1: a.max(b) * h as f64,
                x0: c.min(d) * w as f64,
                x1: c.max(d) * w as f64,
                color: std::array::from_fn(|_| rng.uniform()),
                alpha: rng.uniform_range(0.5, 1.0),
            }
        })
        .collect();

    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            fy: rng.uniform_range(-6.0, 6.0) / h as f64,
            fx: rng.uniform_range(-6.0, 6.0) / w as f64,
            phase: rng.uniform_range(0.0, tau),
            amp: std::array::from_fn(|_| rng.uniform_range(0.0, 0.05)),
        })
        .collect();

    Image::from_fn(h, w, 3, |y, x, c| {
        let (fy, fx) = (y as f64, x as f64);
        let t = 0.5 + (fy / h as f64 - 0.5) * dir_y + (fx / w as f64 - 0.5) * dir_x;
        let t = t.clamp(0.0, 1.0);
        let mut v = c0[c] * (1.0 - t) + c1[c] * t;
        for r in &rects {
            if fy >= r.y0 && fy < r.y1 && fx >= r.x0 && fx < r.x1 {
                v = v * (1.0 - r.alpha) + r.color[c] * r.alpha;
            }
        }
        for wave in &waves {
            v += wave.amp[c] * libm::sin(tau * (wave.fy * fy + wave.fx * fx) + wave.phase);
        }
        v.clamp(0.0, 1.0)
    })
}

/// `img + N(0, (σ/255)²)` per element, unclamped.
pub fn add_noise(img: &Image, spec: NoiseSpec) -> Result<Image> {
    if !(spec.sigma_255 >= 0.0 && spec.sigma_255.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma must be finite and >= 0, got {}",
            spec.sigma_255
        )));
    }
    if spec.sigma_255 == 0.0 {
        return Ok(img.clone());
    }
    let sigma = spec.sigma();
    let mut rng = SeededRng::new(spec.seed, 0);
    Ok(img.map(|v| v + sigma * rng.normal()))
}

/// Where a patch comes from. Kept private: consumers only see [`BlindPair`].
#[derive(Debug, Clone, Copy, PartialEq)]
struct PatchDraw {
    image: usize,
    y: usize,
    x: usize,
    sigma_255: f64,
    noise_seed: u64,
}

/// Deterministic stream of blind training pairs, at most `spec.count` long.
pub struct BlindBatches<'a> {
    clean: &'a [Image],
    spec: BlindTrainSpec,
    rng: SeededRng,
    emitted: usize,
    exec: Exec,
}

pub fn make_blind_batches(clean: &[Image], spec: BlindTrainSpec) -> Result<BlindBatches<'_>> {
    if clean.is_empty() && spec.count > 0 {
        return Err(Error::invalid("blind batches need at least one clean image"));
    }
    if spec.patch_size == 0 {
        return Err(Error::invalid("patch_size must be positive"));
    }
    if !(spec.sigma_max_255 >= 0.0 && spec.sigma_max_255.is_finite()) {
        return Err(Error::invalid(format!(
            "sigma_max must be finite and >= 0, got {}",
            spec.sigma_max_255
        )));
    }
    for (i, img) in clean.iter().enumerate() {
        if spec.patch_size > img.height().min(img.width()) {
            return Err(Error::invalid(format!(
                "patch size {} exceeds image {i} ({}x{})",
                spec.patch_size,
                img.height(),
                img.width()
            )));
        }
        img.ensure_channels(3, "blind batches")?;
    }
    Ok(BlindBatches {
        clean,
        spec,
        rng: SeededRng::new(spec.seed, 0),
        emitted: 0,
        exec: Exec::default(),
    })
}

impl<'a> BlindBatches<'a> {
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn remaining(&self) -> usize {
        self.spec.count - self.emitted
    }

    fn draw(&mut self) -> PatchDraw {
        let p = self.spec.patch_size;
        let image = self.rng.below(self.clean.len() as u64) as usize;
        let img = &self.clean[image];
        let y = self.rng.below((img.height() - p + 1) as u64) as usize;
        let x = self.rng.below((img.width() - p + 1) as u64) as usize;
        let sigma_255 = self.rng.uniform() * self.spec.sigma_max_255;
        let noise_seed = mix_seed(self.spec.seed, self.rng.next_u64());
        PatchDraw {
            image,
            y,
            x,
            sigma_255,
            noise_seed,
        }
    }

    fn materialise(&self, d: &PatchDraw) -> Result<BlindPair> {
        let p = self.spec.patch_size;
        let clean = self.clean[d.image].crop(d.y, d.x, p, p)?;
        let noisy = add_noise(&clean, NoiseSpec::new(d.sigma_255, d.noise_seed))?;
        Ok(BlindPair { noisy, clean })
    }

    /// Up to `n` pairs. Draws are sequential; noise synthesis fans out.
    pub fn next_batch(&mut self, n: usize) -> Result<Vec<BlindPair>> {
        let n = n.min(self.remaining());
        let draws: Vec<PatchDraw> = (0..n).map(|_| self.draw()).collect();
        self.emitted += n;
        let this = &*self;
        self.exec
            .map_slice(&draws, |d| this.materialise(d))
            .into_iter()
            .collect()
    }
}

impl Iterator for BlindBatches<'_> {
    type Item = Result<BlindPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining() == 0 {
            return None;
        }
        let d = self.draw();
        self.emitted += 1;
        Some(self.materialise(&d))
    }
}
