//! Evaluation metrics: MSE, PSNR and Gaussian-windowed SSIM.

use crate::error::{Error, Result};
use crate::image::{to_grayscale, Image, LuminanceWeights};
use crate::par::{pairwise_sum, Exec};

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let sq: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    Ok(pairwise_sum(&sq) / sq.len() as f64)
}

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    if !(max_val > 0.0 && max_val.is_finite()) {
        return Err(Error::invalid(format!("max_val must be positive, got {max_val}")));
    }
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_val * max_val / err).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::invalid(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.window_size
            )));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::invalid("SSIM gaussian_sigma must be positive"));
        }
        let (c1, c2) = self.constants();
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::invalid("SSIM constants C1, C2 must be positive"));
        }
        Ok(())
    }

    /// `(C1, C2) = ((k1·L)², (k2·L)²)`.
    pub fn constants(&self) -> (f64, f64) {
        let l = self.dynamic_range;
        ((self.k1 * l).powi(2), (self.k2 * l).powi(2))
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let c = (self.window_size / 2) as f64;
        let s2 = 2.0 * self.gaussian_sigma * self.gaussian_sigma;
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| (-((i as f64 - c).powi(2)) / s2).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

pub fn ssim(a: &Image, b: &Image, p: &SsimParams) -> Result<f64> {
    ssim_with(a, b, p, Exec::default())
}

/// Mean SSIM over every fully-contained window (no padding). Colour inputs
/// are compared on their luminance projection.
pub fn ssim_with(a: &Image, b: &Image, p: &SsimParams, exec: Exec) -> Result<f64> {
    p.validate()?;
    a.ensure_same_shape(b)?;
    let ws = p.window_size;
    if a.height() < ws || a.width() < ws {
        return Err(Error::invalid(format!(
            "image {}x{} is smaller than the {ws}x{ws} SSIM window",
            a.height(),
            a.width()
        )));
    }
    let (ga, gb);
    let (x, y) = if a.channels() == 3 {
        let w = LuminanceWeights::default();
        ga = to_grayscale(a, &w)?;
        gb = to_grayscale(b, &w)?;
        (&ga, &gb)
    } else {
        (a, b)
    };

    let taps = p.gaussian_taps();
    let (h, w) = (x.height(), x.width());
    let out_w = w - ws + 1;
    let out_h = h - ws + 1;
    let (c1, c2) = p.constants();

    // Horizontal pass: five moment maps, each h × out_w.
    let rows: Vec<[Vec<f64>; 5]> = exec.map_range(h, |r| {
        let xr = &x.data()[r * w..(r + 1) * w];
        let yr = &y.data()[r * w..(r + 1) * w];
        let mut m: [Vec<f64>; 5] = Default::default();
        for v in m.iter_mut() {
            v.reserve(out_w);
        }
        for c in 0..out_w {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (k, &g) in taps.iter().enumerate() {
                let xv = xr[c + k];
                let yv = yr[c + k];
                sx += g * xv;
                sy += g * yv;
                sxx += g * xv * xv;
                syy += g * yv * yv;
                sxy += g * (xv * yv);
            }
            m[0].push(sx);
            m[1].push(sy);
            m[2].push(sxx);
            m[3].push(syy);
            m[4].push(sxy);
        }
        m
    });

    // Vertical pass, one SSIM row sum per output row.
    let row_sums: Vec<f64> = exec.map_range(out_h, |r| {
        let mut vals = Vec::with_capacity(out_w);
        for c in 0..out_w {
            let mut s = [0.0f64; 5];
            for (k, &g) in taps.iter().enumerate() {
                let row = &rows[r + k];
                for (acc, map) in s.iter_mut().zip(row.iter()) {
                    *acc += g * map[c];
                }
            }
            let [mx, my, exx, eyy, exy] = s;
            let vx = exx - mx * mx;
            let vy = eyy - my * my;
            let cov = exy - mx * my;
            let num = (2.0 * (mx * my) + c1) * (2.0 * cov + c2);
            let den = (mx * mx + my * my + c1) * (vx + vy + c2);
            vals.push(num / den);
        }
        pairwise_sum(&vals)
    });
    Ok(pairwise_sum(&row_sums) / (out_h * out_w) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn random_gray(rng: &mut SeededRng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, 1, |_, _, _| rng.uniform()).unwrap()
    }

    /// Per-window SSIM with explicit 2-D weights and centred second moments.
    fn ssim_brute_force(a: &Image, b: &Image, p: &SsimParams) -> f64 {
        let ws = p.window_size;
        let half = (ws / 2) as f64;
        let mut weights = vec![vec![0.0; ws]; ws];
        let mut total = 0.0;
        for (i, row) in weights.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let d2 = (i as f64 - half).powi(2) + (j as f64 - half).powi(2);
                *v = (-d2 / (2.0 * p.gaussian_sigma * p.gaussian_sigma)).exp();
                total += *v;
            }
        }
        let c1 = (p.k1 * p.dynamic_range).powi(2);
        let c2 = (p.k2 * p.dynamic_range).powi(2);
        let (h, w) = (a.height(), a.width());
        let mut sum = 0.0;
        let mut count = 0usize;
        for top in 0..=h - ws {
            for left in 0..=w - ws {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..ws {
                    for j in 0..ws {
                        let wt = weights[i][j] / total;
                        mx += wt * a.get(top + i, left + j, 0);
                        my += wt * b.get(top + i, left + j, 0);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..ws {
                    for j in 0..ws {
                        let wt = weights[i][j] / total;
                        let dx = a.get(top + i, left + j, 0) - mx;
                        let dy = b.get(top + i, left + j, 0) - my;
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        sum / count as f64
    }

    #[test]
    fn mse_examples() {
        let a = Image::new(1, 2, 1, vec![0.0, 0.0]).unwrap();
        let b = Image::new(1, 2, 1, vec![0.3, 0.4]).unwrap();
        assert!((mse(&a, &b).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        let c = Image::filled(4, 4, 3, 0.5).unwrap();
        let d = Image::filled(4, 4, 3, 0.6).unwrap();
        assert!((mse(&c, &d).unwrap() - 0.01).abs() < 1e-15);
        assert!(matches!(mse(&a, &c), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(8, 8, 3, 0.3).unwrap();
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = a.map(|v| v + 0.01);
        assert!((psnr(&a, &c, 1.0).unwrap() - 40.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &Image::zeros(2, 2, 3).unwrap(), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constant() {
        let mut rng = SeededRng::new(7, 0);
        let a = random_gray(&mut rng, 16, 16);
        assert!((ssim(&a, &a, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
        let k = Image::filled(12, 12, 1, 0.5).unwrap();
        assert!((ssim(&k, &k, &SsimParams::default()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_matches_brute_force() {
        let p = SsimParams::default();
        let mut rng = SeededRng::new(11, 0);
        for _ in 0..3 {
            let a = random_gray(&mut rng, 16, 16);
            let b = random_gray(&mut rng, 16, 16);
            let fast = ssim(&a, &b, &p).unwrap();
            let slow = ssim_brute_force(&a, &b, &p);
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }

    #[test]
    fn ssim_colour_uses_luminance() {
        let mut rng = SeededRng::new(3, 0);
        let a = Image::from_fn(13, 14, 3, |_, _, _| rng.uniform()).unwrap();
        let b = Image::from_fn(13, 14, 3, |_, _, _| rng.uniform()).unwrap();
        let w = LuminanceWeights::default();
        let p = SsimParams::default();
        let direct = ssim(&a, &b, &p).unwrap();
        let via_gray = ssim(&to_grayscale(&a, &w).unwrap(), &to_grayscale(&b, &w).unwrap(), &p)
            .unwrap();
        assert_eq!(direct, via_gray);
    }

    #[test]
    fn ssim_rejects_small_images_and_bad_params() {
        let a = Image::zeros(10, 20, 1).unwrap();
        assert!(matches!(
            ssim(&a, &a, &SsimParams::default()),
            Err(Error::InvalidInput(_))
        ));
        let even = SsimParams {
            window_size: 4,
            ..SsimParams::default()
        };
        assert!(even.validate().is_err());
        let zero_c = SsimParams {
            k1: 0.0,
            ..SsimParams::default()
        };
        assert!(zero_c.validate().is_err());
    }

    #[test]
    fn ssim_exec_modes_agree() {
        let mut rng = SeededRng::new(5, 0);
        let a = random_gray(&mut rng, 30, 25);
        let b = random_gray(&mut rng, 30, 25);
        let p = SsimParams::default();
        assert_eq!(
            ssim_with(&a, &b, &p, Exec::Sequential).unwrap(),
            ssim_with(&a, &b, &p, Exec::Parallel).unwrap()
        );
    }

    #[test]
    fn psnr_decreases_with_nested_perturbations() {
        let mut rng = SeededRng::new(9, 0);
        let clean = Image::from_fn(8, 8, 3, |_, _, _| rng.uniform()).unwrap();
        let noise: Vec<f64> = (0..clean.len()).map(|_| rng.uniform() - 0.5).collect();
        let mut last = f64::INFINITY;
        for k in 1..10 {
            let scale = k as f64 * 0.02;
            let data = clean.data().iter().zip(&noise).map(|(c, n)| c + scale * n).collect();
            let noisy = Image::new(8, 8, 3, data).unwrap();
            let value = psnr(&clean, &noisy, 1.0).unwrap();
            assert!(value < last);
            last = value;
        }
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_bounded(
            a in prop::collection::vec(0.0f64..1.0, 12 * 13),
            b in prop::collection::vec(0.0f64..1.0, 12 * 13),
        ) {
            let a = Image::new(12, 13, 1, a).unwrap();
            let b = Image::new(12, 13, 1, b).unwrap();
            let p = SsimParams::default();
            prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
            let s = ssim(&a, &b, &p).unwrap();
            prop_assert_eq!(s, ssim(&b, &a, &p).unwrap());
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}
