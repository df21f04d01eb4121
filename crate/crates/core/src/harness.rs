//! Benchmark grid: one trained model per (loss, σ_max) cell, evaluated on a
//! fixed synthetic set at every evaluation noise level.
//!
//! Reported PSNR/SSIM are per-image values (on clamped outputs) averaged
//! over the evaluation set.

use std::fmt::Write as _;
use std::fs;
use std::hash::Hasher;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fnv::FnvHasher;

use crate::config::{parse_list, KeyValues};
use crate::dataset::{add_noise, gen_clean, NoiseSpec};
use crate::error::{Error, Result};
use crate::image::{clamp01, load_image, save_image, Image};
use crate::losses::LossSpec;
use crate::metrics::{psnr, ssim, SsimParams};
use crate::par::Exec;
use crate::rng::{eval_seed, mix_seed};
use crate::tinynet::{load_checkpoint, save_checkpoint, TinyNet};
use crate::trainer::{train, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSetSpec {
    pub count: usize,
    pub size: (usize, usize),
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPlan {
    pub sigma_max_list: Vec<f64>,
    pub eval_sigmas: Vec<f64>,
    pub losses: Vec<LossSpec>,
    /// Template for every cell; `loss` and `sigma_max` are overridden.
    pub train: TrainConfig,
    pub eval_set: EvalSetSpec,
}

fn default_eval_sigmas() -> Vec<f64> {
    (1..=15).map(|k| 5.0 * k as f64).collect()
}

impl BenchPlan {
    /// Desk-scale preset: one σ_max of 25, base L1 against λ = 1.
    pub fn fast() -> Self {
        BenchPlan {
            sigma_max_list: vec![25.0],
            eval_sigmas: default_eval_sigmas(),
            losses: vec![LossSpec::l1(), LossSpec::luminance_l1(1.0)],
            train: TrainConfig::default(),
            eval_set: EvalSetSpec {
                count: 16,
                size: (40, 40),
                seed: 7,
            },
        }
    }

    /// Two wide blind ranges, σ_max ∈ {55, 75}.
    pub fn full() -> Self {
        BenchPlan {
            sigma_max_list: vec![55.0, 75.0],
            ..BenchPlan::fast()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_sigmas.is_empty() {
            return Err(Error::invalid("eval_sigmas must not be empty"));
        }
        if self.eval_sigmas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("eval_sigmas must be strictly increasing"));
        }
        if self.eval_sigmas.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("eval_sigmas must be >= 0"));
        }
        if self.sigma_max_list.is_empty() || self.sigma_max_list.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("sigma_max_list must be nonempty and >= 0"));
        }
        if self.losses.is_empty() {
            return Err(Error::invalid("losses must not be empty"));
        }
        let ws = SsimParams::default().window_size.max(16);
        if self.eval_set.count == 0 || self.eval_set.size.0 < ws || self.eval_set.size.1 < ws {
            return Err(Error::invalid(format!(
                "eval set needs count > 0 and images at least {ws}x{ws}"
            )));
        }
        for &sm in &self.sigma_max_list {
            self.cell_config(&self.losses[0], sm).validate()?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let d = BenchPlan::fast();
        let train = TrainConfig::from_kv(&kv)?;
        let losses = match kv.raw("losses") {
            Some(v) => parse_list::<LossSpec>(v)?,
            None => d.losses,
        };
        let plan = BenchPlan {
            sigma_max_list: kv.list("sigma_max_list")?.unwrap_or(d.sigma_max_list),
            eval_sigmas: kv.list("eval_sigmas")?.unwrap_or(d.eval_sigmas),
            losses,
            train,
            eval_set: EvalSetSpec {
                count: kv.get_or("eval_count", d.eval_set.count)?,
                size: kv.size("eval_size")?.unwrap_or(d.eval_set.size),
                seed: kv.get_or("eval_seed", d.eval_set.seed)?,
            },
        };
        kv.finish()?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "sigma_max_list = {}", join(&self.sigma_max_list));
        let _ = writeln!(s, "eval_sigmas = {}", join(&self.eval_sigmas));
        let losses: Vec<String> = self.losses.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(s, "losses = {}", losses.join(","));
        let _ = writeln!(s, "eval_count = {}", self.eval_set.count);
        let _ = writeln!(s, "eval_size = {}x{}", self.eval_set.size.0, self.eval_set.size.1);
        let _ = writeln!(s, "eval_seed = {}", self.eval_set.seed);
        s.push_str(&self.train.to_text());
        s
    }

    /// FNV-1a of the canonical plan text.
    pub fn config_hash(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write(self.to_text().as_bytes());
        h.finish()
    }

    pub fn cell_config(&self, loss: &LossSpec, sigma_max: f64) -> TrainConfig {
        TrainConfig {
            loss: *loss,
            sigma_max,
            ..self.train.clone()
        }
    }

    pub fn columns(&self) -> Vec<ColumnKey> {
        self.sigma_max_list
            .iter()
            .flat_map(|&sm| {
                self.losses.iter().map(move |l| ColumnKey {
                    loss: *l,
                    sigma_max: sm,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnKey {
    pub loss: LossSpec,
    pub sigma_max: f64,
}

impl ColumnKey {
    pub fn label(&self) -> String {
        format!("{}_{}", self.loss.label(), self.sigma_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub columns: Vec<ColumnKey>,
    pub sigmas: Vec<f64>,
    /// `cells[row][col]`, rows follow `sigmas`.
    pub cells: Vec<Vec<Score>>,
    pub seed: u64,
    pub eval_seed: u64,
    pub config_hash: u64,
    pub wall_clock_ms: f64,
    pub logs: Vec<TrainLog>,
}

impl BenchReport {
    /// `(ours, base)` column index pairs: each luminance column against the
    /// first non-luminance column with the same σ_max.
    pub fn comparisons(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, c) in self.columns.iter().enumerate() {
            if !c.loss.is_luminance() {
                continue;
            }
            if let Some(b) = self
                .columns
                .iter()
                .position(|b| !b.loss.is_luminance() && b.sigma_max == c.sigma_max)
            {
                out.push((i, b));
            }
        }
        out
    }

    /// Rows where a column's PSNR rises by more than `slack` dB as σ grows.
    pub fn psnr_monotonicity_violations(&self, slack: f64) -> Vec<(usize, f64, f64)> {
        let mut bad = Vec::new();
        for col in 0..self.columns.len() {
            for r in 1..self.sigmas.len() {
                let prev = self.cells[r - 1][col].psnr;
                let cur = self.cells[r][col].psnr;
                if cur > prev + slack {
                    bad.push((col, self.sigmas[r], cur - prev));
                }
            }
        }
        bad
    }
}

/// Clean evaluation images, from the evaluation seed domain.
pub fn eval_images(spec: &EvalSetSpec) -> Result<Vec<Image>> {
    gen_clean(eval_seed(spec.seed, 0), spec.count, spec.size.0, spec.size.1)
}

/// Noise seed for image `image` at noise level index `level`; shared by all cells.
fn eval_noise_seed(seed: u64, level: usize, image: usize) -> u64 {
    eval_seed(seed, mix_seed(level as u64 + 1, image as u64))
}

/// Noisy copies of `clean` at every level in `sigmas`: `[level][image]`.
pub fn noisy_eval_set(clean: &[Image], sigmas: &[f64], seed: u64) -> Result<Vec<Vec<Image>>> {
    sigmas
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            clean
                .iter()
                .enumerate()
                .map(|(i, img)| add_noise(img, NoiseSpec::new(s, eval_noise_seed(seed, j, i))))
                .collect()
        })
        .collect()
}

fn mean_score(outputs: &[Image], clean: &[Image], exec: Exec) -> Result<Score> {
    let pairs: Vec<(&Image, &Image)> = outputs.iter().zip(clean).collect();
    let scores: Vec<Result<Score>> = exec.map_slice(&pairs, |(out, c)| {
        let out = clamp01(out);
        Ok(Score {
            psnr: psnr(&out, c, 1.0)?,
            ssim: ssim(&out, c, &SsimParams::default())?,
        })
    });
    let (mut p, mut s) = (0.0, 0.0);
    for sc in scores {
        let sc = sc?;
        p += sc.psnr;
        s += sc.ssim;
    }
    let n = clean.len() as f64;
    Ok(Score {
        psnr: p / n,
        ssim: s / n,
    })
}

/// Mean scores of the clamped noisy inputs themselves, one per level.
pub fn noisy_baseline(noisy: &[Vec<Image>], clean: &[Image], exec: Exec) -> Result<Vec<Score>> {
    noisy.iter().map(|level| mean_score(level, clean, exec)).collect()
}

/// Mean scores of `net` on every level.
pub fn evaluate_model(net: &TinyNet, noisy: &[Vec<Image>], clean: &[Image], exec: Exec) -> Result<Vec<Score>> {
    noisy
        .iter()
        .map(|level| {
            let outs: Vec<Result<Image>> = exec.map_slice(level, |x| net.denoise(x));
            let outs: Vec<Image> = outs.into_iter().collect::<Result<_>>()?;
            mean_score(&outs, clean, exec)
        })
        .collect()
}

pub fn run_bench(plan: &BenchPlan) -> Result<BenchReport> {
    run_bench_with(plan, None, Exec::default())
}

/// Trains and evaluates every cell. With `checkpoint_dir`, each cell's
/// final parameters are written there as `<column>.ckpt`.
pub fn run_bench_with(plan: &BenchPlan, checkpoint_dir: Option<&Path>, exec: Exec) -> Result<BenchReport> {
    plan.validate()?;
    let start = Instant::now();
    let clean = eval_images(&plan.eval_set)?;
    let noisy = noisy_eval_set(&clean, &plan.eval_sigmas, plan.eval_set.seed)?;
    let columns = plan.columns();

    let results: Vec<Result<(Vec<Score>, TrainLog)>> = exec.map_slice(&columns, |col| {
        let cfg = plan.cell_config(&col.loss, col.sigma_max);
        let in_cell = |e: Error| cell_error(col, e);
        let net = TinyNet::new(&cfg.net, cfg.init_seed()).map_err(in_cell)?;
        let (net, log) = train(net, &cfg, None).map_err(in_cell)?;
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(&net, dir.join(format!("{}.ckpt", col.label()))).map_err(in_cell)?;
        }
        let scores = evaluate_model(&net, &noisy, &clean, exec).map_err(in_cell)?;
        Ok((scores, log))
    });

    let mut per_column = Vec::with_capacity(columns.len());
    let mut logs = Vec::with_capacity(columns.len());
    for r in results {
        let (scores, log) = r?;
        per_column.push(scores);
        logs.push(log);
    }
    let cells = (0..plan.eval_sigmas.len())
        .map(|row| per_column.iter().map(|col| col[row]).collect())
        .collect();
    Ok(BenchReport {
        columns,
        sigmas: plan.eval_sigmas.clone(),
        cells,
        seed: plan.train.seed,
        eval_seed: plan.eval_set.seed,
        config_hash: plan.config_hash(),
        wall_clock_ms: start.elapsed().as_secs_f64() * 1e3,
        logs,
    })
}

fn cell_error(col: &ColumnKey, e: Error) -> Error {
    let tag = format!("cell {}", col.label());
    match e {
        Error::Numerical(m) => Error::Numerical(format!("{tag}: {m}")),
        Error::InvalidInput(m) => Error::InvalidInput(format!("{tag}: {m}")),
        Error::Internal(m) => Error::Internal(format!("{tag}: {m}")),
        other => other,
    }
}

/// The value a cell has once written with four decimals.
fn rounded(v: f64) -> f64 {
    format!("{v:.4}").parse().unwrap_or(v)
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

/// CSV rendering.
///
/// After the header and one row per σ come summary rows: `mean` (per-column
/// means), then `delta:<σ>` for every σ and `delta:mean`, holding
/// ours-minus-base in each luminance column and blanks elsewhere. All
/// summary values are computed from the four-decimal cells as printed.
pub fn report_to_csv(report: &BenchReport) -> String {
    let ncol = report.columns.len();
    let cells: Vec<Vec<(f64, f64)>> = report
        .cells
        .iter()
        .map(|row| row.iter().map(|c| (rounded(c.psnr), rounded(c.ssim))).collect())
        .collect();
    let nrow = cells.len() as f64;
    let means: Vec<(f64, f64)> = (0..ncol)
        .map(|c| {
            let (p, s) = cells
                .iter()
                .fold((0.0, 0.0), |(p, s), row| (p + row[c].0, s + row[c].1));
            (rounded(p / nrow), rounded(s / nrow))
        })
        .collect();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "# luml1 bench: seed={} eval_seed={} config_hash={:016x}; PSNR in dB (max 1.0), per-image mean; SSIM columns are an extension",
        report.seed, report.eval_seed, report.config_hash
    );
    out.push_str("sigma");
    for c in &report.columns {
        let _ = write!(out, ",{0}_psnr,{0}_ssim", c.label());
    }
    out.push('\n');
    for (row, sigma) in cells.iter().zip(&report.sigmas) {
        out.push_str(&sigma.to_string());
        for (p, s) in row {
            let _ = write!(out, ",{},{}", fmt4(*p), fmt4(*s));
        }
        out.push('\n');
    }
    out.push_str("mean");
    for (p, s) in &means {
        let _ = write!(out, ",{},{}", fmt4(*p), fmt4(*s));
    }
    out.push('\n');

    let pairs = report.comparisons();
    if pairs.is_empty() {
        return out;
    }
    let delta_row = |label: &str, values: &[(f64, f64)]| {
        let mut line = label.to_string();
        for c in 0..ncol {
            match pairs.iter().find(|(ours, _)| *ours == c) {
                Some(&(ours, base)) => {
                    let _ = write!(
                        line,
                        ",{},{}",
                        fmt4(values[ours].0 - values[base].0),
                        fmt4(values[ours].1 - values[base].1)
                    );
                }
                None => line.push_str(",,"),
            }
        }
        line.push('\n');
        line
    };
    for (row, sigma) in cells.iter().zip(&report.sigmas) {
        out.push_str(&delta_row(&format!("delta:{sigma}"), row));
    }
    out.push_str(&delta_row("delta:mean", &means));
    out
}

/// A report CSV read back: header columns and labelled rows of optional cells.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCsv {
    pub header: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl ParsedCsv {
    pub fn row(&self, label: &str) -> Option<&[Option<f64>]> {
        self.rows
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v.as_slice())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().skip(1).position(|h| h == name)
    }
}

pub fn parse_report_csv(text: &str) -> Result<ParsedCsv> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::invalid("empty report"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        let mut fields = line.split(',');
        let label = fields.next().unwrap_or_default().to_string();
        let values: Vec<Option<f64>> = fields
            .map(|f| {
                if f.is_empty() {
                    Ok(None)
                } else {
                    f.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::invalid(format!("bad cell {f:?} in row {label}")))
                }
            })
            .collect::<Result<_>>()?;
        if values.len() + 1 != header.len() {
            return Err(Error::invalid(format!("row {label} has {} cells", values.len())));
        }
        rows.push((label, values));
    }
    Ok(ParsedCsv { header, rows })
}

/// Loads a checkpoint, denoises one image and writes the clamped result.
pub fn denoise_file(checkpoint: &Path, input: &Path, output: &Path) -> Result<()> {
    let net = load_checkpoint(checkpoint)?;
    let img = load_image(input)?;
    img.ensure_channels(3, "denoise")?;
    let out = clamp01(&net.denoise(&img)?);
    save_image(&out, output)
}

/// One generated pair as listed in a corpus manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub sigma_255: f64,
    pub clean: PathBuf,
    pub noisy: PathBuf,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Writes `clean_NNNN.ppm`, `noisy_NNNN.lumf` (unclamped) and a manifest
/// with one `index sigma_255 clean noisy` line per pair.
pub fn write_corpus(dir: &Path, seed: u64, count: usize, size: (usize, usize), sigma_255: f64) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir)?;
    let clean = gen_clean(seed, count, size.0, size.1)?;
    let mut manifest = String::from("# index sigma_255 clean noisy\n");
    let mut entries = Vec::with_capacity(count);
    for (i, img) in clean.iter().enumerate() {
        let noisy = add_noise(img, NoiseSpec::new(sigma_255, mix_seed(seed, 0x6e6f_6973_0000 + i as u64)))?;
        let e = ManifestEntry {
            index: i,
            sigma_255,
            clean: PathBuf::from(format!("clean_{i:04}.ppm")),
            noisy: PathBuf::from(format!("noisy_{i:04}.lumf")),
        };
        save_image(img, dir.join(&e.clean))?;
        save_image(&noisy, dir.join(&e.noisy))?;
        let _ = writeln!(
            manifest,
            "{} {} {} {}",
            e.index,
            e.sigma_255,
            e.clean.display(),
            e.noisy.display()
        );
        entries.push(e);
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_ascii_whitespace().collect();
        let bad = || Error::format(n, format!("bad manifest line {}: {line:?}", n + 1));
        let [index, sigma, clean, noisy] = f[..] else {
            return Err(bad());
        };
        out.push(ManifestEntry {
            index: index.parse().map_err(|_| bad())?,
            sigma_255: sigma.parse().map_err(|_| bad())?,
            clean: PathBuf::from(clean),
            noisy: PathBuf::from(noisy),
        });
    }
    Ok(out)
}

/// Clean images of a data directory: the manifest's clean column if present,
/// otherwise every `.ppm` file in name order.
pub fn load_clean_dir(dir: &Path) -> Result<Vec<Image>> {
    if dir.join(MANIFEST_NAME).exists() {
        return read_manifest(dir)?
            .iter()
            .map(|e| load_image(dir.join(&e.clean)))
            .collect();
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    paths.iter().map(load_image).collect()
}

/// `sigma,input_psnr,input_ssim,model_psnr,model_ssim` table.
pub fn eval_table_csv(sigmas: &[f64], input: &[Score], model: &[Score]) -> String {
    let mut s = String::from("sigma,input_psnr,input_ssim,model_psnr,model_ssim\n");
    for ((sigma, a), b) in sigmas.iter().zip(input).zip(model) {
        let _ = writeln!(
            s,
            "{sigma},{},{},{},{}",
            fmt4(a.psnr),
            fmt4(a.ssim),
            fmt4(b.psnr),
            fmt4(b.ssim)
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinynet::NetConfig;

    fn report_with(columns: Vec<ColumnKey>, sigmas: Vec<f64>, f: impl Fn(usize, usize) -> Score) -> BenchReport {
        let cells = (0..sigmas.len())
            .map(|r| (0..columns.len()).map(|c| f(r, c)).collect())
            .collect();
        BenchReport {
            columns,
            sigmas,
            cells,
            seed: 1,
            eval_seed: 2,
            config_hash: 3,
            wall_clock_ms: 0.0,
            logs: Vec::new(),
        }
    }

    fn two_column_report() -> BenchReport {
        let cols = vec![
            ColumnKey {
                loss: LossSpec::l1(),
                sigma_max: 25.0,
            },
            ColumnKey {
                loss: LossSpec::luminance_l1(1.0),
                sigma_max: 25.0,
            },
        ];
        report_with(cols, vec![5.0, 10.0, 15.0], |r, c| Score {
            psnr: 35.0 - 3.3333333 * r as f64 + 0.123456 * c as f64,
            ssim: 0.95 - 0.01 * r as f64 + 0.0012345 * c as f64,
        })
    }

    #[test]
    fn single_cell_csv_shape() {
        let cols = vec![ColumnKey {
            loss: LossSpec::l1(),
            sigma_max: 25.0,
        }];
        let rep = report_with(cols, vec![15.0], |_, _| Score {
            psnr: 30.0,
            ssim: 0.9,
        });
        let csv = report_to_csv(&rep);
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines, vec!["sigma,l1_25_psnr,l1_25_ssim", "15,30.0000,0.9000", "mean,30.0000,0.9000"]);
        assert!(rep.comparisons().is_empty());
    }

    #[test]
    fn delta_rows_come_from_printed_cells() {
        let rep = two_column_report();
        let csv = report_to_csv(&rep);
        let parsed = parse_report_csv(&csv).unwrap();
        assert_eq!(
            parsed.header,
            vec!["sigma", "l1_25_psnr", "l1_25_ssim", "luml1_25_psnr", "luml1_25_ssim"]
        );
        let base = parsed.column("l1_25_psnr").unwrap();
        let ours = parsed.column("luml1_25_psnr").unwrap();
        for sigma in ["5", "10", "15"] {
            let row = parsed.row(sigma).unwrap();
            let delta = parsed.row(&format!("delta:{sigma}")).unwrap();
            let want = row[ours].unwrap() - row[base].unwrap();
            assert_eq!(fmt4(want), fmt4(delta[ours].unwrap()));
            assert_eq!(delta[base], None);
        }
        let mean = parsed.row("mean").unwrap();
        let dm = parsed.row("delta:mean").unwrap();
        assert_eq!(fmt4(mean[ours].unwrap() - mean[base].unwrap()), fmt4(dm[ours].unwrap()));
    }

    #[test]
    fn csv_parse_back_recovers_cells() {
        let rep = two_column_report();
        let parsed = parse_report_csv(&report_to_csv(&rep)).unwrap();
        for (r, sigma) in rep.sigmas.iter().enumerate() {
            let row = parsed.row(&sigma.to_string()).unwrap();
            for (c, cell) in rep.cells[r].iter().enumerate() {
                assert_eq!(row[2 * c], Some(rounded(cell.psnr)));
                assert_eq!(row[2 * c + 1], Some(rounded(cell.ssim)));
            }
        }
    }

    #[test]
    fn infinite_psnr_serialises_as_inf() {
        let cols = vec![ColumnKey {
            loss: LossSpec::l1(),
            sigma_max: 25.0,
        }];
        let rep = report_with(cols, vec![0.0], |_, _| Score {
            psnr: f64::INFINITY,
            ssim: 1.0,
        });
        let csv = report_to_csv(&rep);
        assert!(csv.contains("\n0,inf,1.0000\n"));
        let parsed = parse_report_csv(&csv).unwrap();
        assert_eq!(parsed.row("0").unwrap()[0], Some(f64::INFINITY));
    }

    #[test]
    fn monotonicity_check() {
        let rep = two_column_report();
        assert!(rep.psnr_monotonicity_violations(0.2).is_empty());
        let mut bumped = rep.clone();
        bumped.cells[2][0].psnr = bumped.cells[1][0].psnr + 0.5;
        assert_eq!(bumped.psnr_monotonicity_violations(0.2).len(), 1);
    }

    #[test]
    fn plan_parse_and_validation() {
        let plan = BenchPlan::parse("losses = l1, luml1:0.5\nsigma_max_list = 55,75\nsteps = 10\n").unwrap();
        assert_eq!(plan.losses, vec![LossSpec::l1(), LossSpec::luminance_l1(0.5)]);
        assert_eq!(plan.sigma_max_list, vec![55.0, 75.0]);
        assert_eq!(plan.eval_sigmas.len(), 15);
        assert_eq!(BenchPlan::parse(&plan.to_text()).unwrap(), plan);
        assert!(BenchPlan::parse("eval_sigmas = 10,5\n").is_err());
        assert!(BenchPlan::parse("eval_sigmas = \n").is_err());
        assert!(BenchPlan::parse("bogus = 1\n").is_err());
        assert_ne!(plan.config_hash(), BenchPlan::fast().config_hash());
        let cols = plan.columns();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[1].label(), "luml1-lam0.5_55");
    }

    fn tiny_plan(losses: Vec<LossSpec>) -> BenchPlan {
        let mut plan = BenchPlan::fast();
        plan.losses = losses;
        plan.eval_sigmas = vec![5.0, 25.0, 50.0];
        plan.eval_set = EvalSetSpec {
            count: 2,
            size: (16, 16),
            seed: 3,
        };
        plan.train = TrainConfig {
            steps: 4,
            batch_size: 2,
            patch_size: 12,
            corpus_count: 3,
            corpus_size: (16, 16),
            val_count: 0,
            net: NetConfig {
                hidden_layers: 0,
                width: 4,
                ..NetConfig::default()
            },
            ..TrainConfig::default()
        };
        plan
    }

    #[test]
    fn bench_is_deterministic_and_complete() {
        let plan = tiny_plan(vec![LossSpec::l1(), LossSpec::luminance_l1(1.0)]);
        let a = run_bench(&plan).unwrap();
        let b = run_bench_with(&plan, None, Exec::Sequential).unwrap();
        assert_eq!(report_to_csv(&a), report_to_csv(&b));
        assert_eq!(a.cells.len(), 3);
        assert!(a.cells.iter().all(|r| r.len() == 2 && r.iter().all(|c| c.psnr.is_finite())));
        assert_eq!(a.comparisons(), vec![(1, 0)]);
    }

    #[test]
    fn single_loss_plan_has_no_deltas() {
        let plan = tiny_plan(vec![LossSpec::l1()]);
        let csv = report_to_csv(&run_bench(&plan).unwrap());
        assert!(!csv.contains("delta"));
    }

    #[test]
    fn denoise_file_with_zero_checkpoint_is_clamped_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("zero.ckpt");
        save_checkpoint(&TinyNet::zeros(&NetConfig::default()).unwrap(), &ckpt).unwrap();
        let img = Image::from_fn(5, 6, 3, |y, x, c| (y as f64 - x as f64) * 0.3 + c as f64 * 0.1).unwrap();
        let input = dir.path().join("in.lumf");
        save_image(&img, &input).unwrap();
        let out = dir.path().join("out.lumf");
        denoise_file(&ckpt, &input, &out).unwrap();
        let got = load_image(&out).unwrap();
        let want = clamp01(&load_image(&input).unwrap());
        assert_eq!(got, want);
        let out2 = dir.path().join("out2.lumf");
        denoise_file(&ckpt, &input, &out2).unwrap();
        assert_eq!(fs::read(&out).unwrap(), fs::read(&out2).unwrap());
    }

    #[test]
    fn corpus_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let entries = write_corpus(dir.path(), 4, 3, (16, 20), 25.0).unwrap();
        assert_eq!(read_manifest(dir.path()).unwrap(), entries);
        let clean = load_clean_dir(dir.path()).unwrap();
        assert_eq!(clean.len(), 3);
        assert_eq!(clean[0].shape(), (16, 20, 3));
        let noisy = load_image(dir.path().join(&entries[0].noisy)).unwrap();
        assert!(noisy.data().iter().any(|v| !(0.0..=1.0).contains(v)));
    }
}
