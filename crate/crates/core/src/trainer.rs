//! Adam, the blind-denoising training loop, and direct pixel optimisation.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::config::KeyValues;
use crate::dataset::{add_noise, gen_clean, make_blind_batches, BlindPair, BlindTrainSpec, NoiseSpec};
use crate::error::{Error, Result};
use crate::image::{clamp01, Image};
use crate::losses::{eval_loss, LossSpec};
use crate::metrics::{psnr, ssim, SsimParams};
use crate::par::Exec;
use crate::rng::train_seed;
use crate::tinynet::{net_backward, net_forward, save_checkpoint, GradTape, NetConfig, TinyNet};

// Sub-seed tags within one training run.
const TAG_INIT: u64 = 1;
const TAG_CORPUS: u64 = 2;
const TAG_PATCHES: u64 = 3;
const TAG_VAL: u64 = 4;
const TAG_VAL_NOISE: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "Adam needs lr > 0, 0 < beta1, beta2 < 1 and eps > 0, got {self:?}"
            )))
        }
    }
}

/// First and second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update. `name` labels the buffer in diagnostics.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    name: &str,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Internal(format!(
            "{name}: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient in {name} at index {i}"
        )));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Adam state for every layer of a [`TinyNet`].
#[derive(Debug, Clone)]
pub struct NetAdam {
    cfg: AdamConfig,
    states: Vec<(AdamState, AdamState)>,
}

impl NetAdam {
    pub fn new(net: &TinyNet, cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(NetAdam {
            cfg,
            states: net
                .layers
                .iter()
                .map(|l| (AdamState::new(l.weight.len()), AdamState::new(l.bias.len())))
                .collect(),
        })
    }

    pub fn step(&mut self, net: &mut TinyNet, tape: &GradTape) -> Result<()> {
        if !tape.matches(net) || self.states.len() != net.layers.len() {
            return Err(Error::Internal("gradient tape does not match network".into()));
        }
        for (i, ((layer, grad), (sw, sb))) in net
            .layers
            .iter_mut()
            .zip(&tape.layers)
            .zip(self.states.iter_mut())
            .enumerate()
        {
            adam_step(&mut layer.weight, &grad.weight, sw, &self.cfg, &format!("layer {i} weights"))?;
            adam_step(&mut layer.bias, &grad.bias, sb, &self.cfg, &format!("layer {i} bias"))?;
        }
        net.check_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Per-patch noise is drawn from `U(0, sigma_max)` on the 0–255 scale.
    pub sigma_max: f64,
    pub patch_size: usize,
    /// 0 disables periodic checkpoints (the final one is still written).
    pub checkpoint_every: usize,
    pub corpus_count: usize,
    pub corpus_size: (usize, usize),
    pub net: NetConfig,
    /// 0 disables periodic validation (the final step is always validated).
    pub val_every: usize,
    pub val_sigma: f64,
    pub val_count: usize,
    pub val_size: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossSpec::l1(),
            steps: 1200,
            batch_size: 8,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 2024,
            sigma_max: 25.0,
            patch_size: 24,
            checkpoint_every: 0,
            corpus_count: 64,
            corpus_size: (40, 40),
            net: NetConfig::default(),
            val_every: 200,
            val_sigma: 15.0,
            val_count: 4,
            val_size: (40, 40),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn blind_spec(&self) -> BlindTrainSpec {
        BlindTrainSpec {
            sigma_max_255: self.sigma_max,
            patch_size: self.patch_size,
            count: self.steps * self.batch_size,
            seed: train_seed(self.seed, TAG_PATCHES),
        }
    }

    /// Seed for the network initialisation; shared by every loss variant.
    pub fn init_seed(&self) -> u64 {
        train_seed(self.seed, TAG_INIT)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.adam().validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.corpus_count == 0 {
            return Err(Error::invalid("corpus_count must be positive"));
        }
        if self.patch_size == 0
            || self.patch_size > self.corpus_size.0.min(self.corpus_size.1)
        {
            return Err(Error::invalid(format!(
                "patch_size {} must be in 1..={}",
                self.patch_size,
                self.corpus_size.0.min(self.corpus_size.1)
            )));
        }
        if !(self.sigma_max >= 0.0) || !(self.val_sigma >= 0.0) {
            return Err(Error::invalid("noise levels must be >= 0"));
        }
        let ws = SsimParams::default().window_size;
        if self.val_count > 0 && self.val_size.0.min(self.val_size.1) < ws.max(16) {
            return Err(Error::invalid(format!(
                "val_size must be at least {}x{}",
                ws.max(16),
                ws.max(16)
            )));
        }
        Ok(())
    }

    /// Reads the training keys from `kv`, starting from the defaults.
    /// Does not call [`KeyValues::finish`], so callers can layer more keys.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let loss = LossSpec::from_parts(
            kv.raw("loss").unwrap_or("l1"),
            kv.get("lambda")?,
            kv.raw("pixel_base"),
        )?;
        let net = NetConfig {
            hidden_layers: kv.get_or("hidden_layers", d.net.hidden_layers)?,
            width: kv.get_or("width", d.net.width)?,
            kernel: kv.get_or("kernel", d.net.kernel)?,
            residual: kv.get_or("residual", d.net.residual)?,
        };
        let cfg = TrainConfig {
            loss,
            steps: kv.get_or("steps", d.steps)?,
            batch_size: kv.get_or("batch_size", d.batch_size)?,
            lr: kv.get_or("lr", d.lr)?,
            adam_beta1: kv.get_or("adam_beta1", d.adam_beta1)?,
            adam_beta2: kv.get_or("adam_beta2", d.adam_beta2)?,
            adam_eps: kv.get_or("adam_eps", d.adam_eps)?,
            seed: kv.get_or("seed", d.seed)?,
            sigma_max: kv.get_or("sigma_max", d.sigma_max)?,
            patch_size: kv.get_or("patch_size", d.patch_size)?,
            checkpoint_every: kv.get_or("checkpoint_every", d.checkpoint_every)?,
            corpus_count: kv.get_or("corpus_count", d.corpus_count)?,
            corpus_size: kv.size("corpus_size")?.unwrap_or(d.corpus_size),
            net,
            val_every: kv.get_or("val_every", d.val_every)?,
            val_sigma: kv.get_or("val_sigma", d.val_sigma)?,
            val_count: kv.get_or("val_count", d.val_count)?,
            val_size: kv.size("val_size")?.unwrap_or(d.val_size),
        };
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let cfg = TrainConfig::from_kv(&kv)?;
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical `key = value` text; [`TrainConfig::parse`] reads it back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.loss.kind {
            crate::losses::LossKind::L1 => "l1",
            crate::losses::LossKind::L2 => "l2",
            crate::losses::LossKind::LuminanceL1 => "luml1",
        };
        let _ = writeln!(s, "loss = {kind}");
        let _ = writeln!(s, "lambda = {}", self.loss.lambda);
        let _ = writeln!(s, "pixel_base = {}", self.loss.pixel_base);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "adam_beta1 = {}", self.adam_beta1);
        let _ = writeln!(s, "adam_beta2 = {}", self.adam_beta2);
        let _ = writeln!(s, "adam_eps = {}", self.adam_eps);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "sigma_max = {}", self.sigma_max);
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "corpus_count = {}", self.corpus_count);
        let _ = writeln!(s, "corpus_size = {}x{}", self.corpus_size.0, self.corpus_size.1);
        let _ = writeln!(s, "hidden_layers = {}", self.net.hidden_layers);
        let _ = writeln!(s, "width = {}", self.net.width);
        let _ = writeln!(s, "kernel = {}", self.net.kernel);
        let _ = writeln!(s, "residual = {}", self.net.residual);
        let _ = writeln!(s, "val_every = {}", self.val_every);
        let _ = writeln!(s, "val_sigma = {}", self.val_sigma);
        let _ = writeln!(s, "val_count = {}", self.val_count);
        let _ = writeln!(s, "val_size = {}x{}", self.val_size.0, self.val_size.1);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub ms: f64,
    pub val: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    pub fn last_validation(&self) -> Option<(f64, f64)> {
        self.records.iter().rev().find_map(|r| r.val)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,loss,ms,val_psnr,val_ssim\n");
        for r in &self.records {
            let _ = write!(s, "{},{:.6},{:.3},", r.step, r.loss, r.ms);
            match r.val {
                Some((p, q)) => {
                    let _ = writeln!(s, "{p:.4},{q:.4}");
                }
                None => s.push_str(",\n"),
            }
        }
        s
    }
}

/// Mean loss and mean parameter gradient over a batch. Items fan out over
/// `exec`; per-item results are summed in item order.
pub fn batch_gradients(
    net: &TinyNet,
    batch: &[BlindPair],
    loss: &LossSpec,
    exec: Exec,
) -> Result<(f64, GradTape)> {
    let Some(first) = batch.first() else {
        return Err(Error::invalid("empty batch"));
    };
    let items: Vec<Result<(f64, GradTape)>> = exec.map_slice(batch, |pair| {
        let (out, cache) = net_forward(net, &pair.noisy)?;
        let lo = eval_loss(loss, &out, &pair.clean)?;
        let tape = net_backward(net, &cache, &lo.grad)?;
        Ok((lo.value, tape))
    });
    let (h, w, _) = first.noisy.shape();
    let mut total = GradTape::zeros_like(net, h, w)?;
    let mut loss_sum = 0.0;
    for item in items {
        let (value, tape) = item?;
        loss_sum += value;
        total.accumulate(&tape);
    }
    let n = batch.len() as f64;
    total.scale_params(1.0 / n);
    Ok((loss_sum / n, total))
}

/// Noisy/clean validation pairs drawn from the training seed domain.
fn validation_set(cfg: &TrainConfig) -> Result<Vec<(Image, Image)>> {
    let clean = gen_clean(
        train_seed(cfg.seed, TAG_VAL),
        cfg.val_count,
        cfg.val_size.0,
        cfg.val_size.1,
    )?;
    clean
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let seed = train_seed(cfg.seed, TAG_VAL_NOISE.wrapping_add((i as u64) << 8));
            let noisy = add_noise(&c, NoiseSpec::new(cfg.val_sigma, seed))?;
            Ok((noisy, c))
        })
        .collect()
}

/// Mean PSNR and SSIM of clamped network outputs against the clean images.
pub fn evaluate_pairs(net: &TinyNet, pairs: &[(Image, Image)], exec: Exec) -> Result<(f64, f64)> {
    if pairs.is_empty() {
        return Err(Error::invalid("no evaluation pairs"));
    }
    let scores: Vec<Result<(f64, f64)>> = exec.map_slice(pairs, |(noisy, clean)| {
        let out = clamp01(&net.denoise(noisy)?);
        Ok((psnr(&out, clean, 1.0)?, ssim(&out, clean, &SsimParams::default())?))
    });
    let (mut p, mut s) = (0.0, 0.0);
    for r in scores {
        let (a, b) = r?;
        p += a;
        s += b;
    }
    let n = pairs.len() as f64;
    Ok((p / n, s / n))
}

/// Trains `net` with blind patches from a synthetic corpus.
///
/// With `checkpoint` set, the parameters are written every
/// `checkpoint_every` steps and at the end. A non-finite loss aborts the run
/// without touching the last checkpoint on disk.
pub fn train(mut net: TinyNet, cfg: &TrainConfig, checkpoint: Option<&Path>) -> Result<(TinyNet, TrainLog)> {
    cfg.validate()?;
    let exec = Exec::default();
    let corpus = gen_clean(
        train_seed(cfg.seed, TAG_CORPUS),
        cfg.corpus_count,
        cfg.corpus_size.0,
        cfg.corpus_size.1,
    )?;
    let val = if cfg.val_count > 0 {
        validation_set(cfg)?
    } else {
        Vec::new()
    };
    let mut batches = make_blind_batches(&corpus, cfg.blind_spec())?.with_exec(exec);
    let mut adam = NetAdam::new(&net, cfg.adam())?;
    let mut log = TrainLog::default();
    let start = Instant::now();

    for step in 1..=cfg.steps {
        let batch = batches.next_batch(cfg.batch_size)?;
        let (loss, tape) = batch_gradients(&net, &batch, &cfg.loss, exec)?;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "loss became {loss} at step {step}; last good checkpoint left in place"
            )));
        }
        adam.step(&mut net, &tape)
            .map_err(|e| Error::Numerical(format!("step {step}: {e}")))?;

        let validate = !val.is_empty()
            && (step == cfg.steps || (cfg.val_every > 0 && step % cfg.val_every == 0));
        let v = if validate {
            Some(evaluate_pairs(&net, &val, exec)?)
        } else {
            None
        };
        log.records.push(StepRecord {
            step,
            loss,
            ms: start.elapsed().as_secs_f64() * 1e3,
            val: v,
        });
        if let Some(path) = checkpoint {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
                save_checkpoint(&net, path)?;
            }
        }
    }
    if let Some(path) = checkpoint {
        save_checkpoint(&net, path)?;
    }
    Ok((net, log))
}

pub fn optimize_pixels(init: &Image, target: &Image, loss: &LossSpec, steps: usize, lr: f64) -> Result<Image> {
    Ok(optimize_pixels_traced(init, target, loss, steps, lr)?.0)
}

/// Plain gradient descent on the pixels of `init`. Also returns the loss
/// before each step.
pub fn optimize_pixels_traced(
    init: &Image,
    target: &Image,
    loss: &LossSpec,
    steps: usize,
    lr: f64,
) -> Result<(Image, Vec<f64>)> {
    init.ensure_same_shape(target)?;
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::invalid(format!("lr must be positive, got {lr}")));
    }
    let mut x = init.clone();
    let mut trace = Vec::with_capacity(steps);
    for _ in 0..steps {
        let out = eval_loss(loss, &x, target)?;
        trace.push(out.value);
        let data: Vec<f64> = x
            .data()
            .iter()
            .zip(out.grad.data())
            .map(|(v, g)| v - lr * g)
            .collect();
        x = Image::new(x.height(), x.width(), x.channels(), data)
            .map_err(|_| Error::Numerical("pixel optimisation diverged".into()))?;
    }
    Ok((x, trace))
}
