//! Experiment orchestration: survey generation, pattern bank and autoencoder
//! builds, one inversion per (test model, selection method), and the result,
//! summary and timing tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dcl::{harvest_patterns, HarvestPlan, DclArchitecture, DclSample, DclTrainConfig, SensingPattern};
use crate::error::{FwicError, Result};
use crate::fwi::{invert, StopReason};
use crate::geomodel::{generate_model, VelocityModel};
use crate::io::{read_json, read_model, read_survey, write_json};
use crate::metrics::Metrics;
use crate::neural::Tensor;
use crate::par::{self, Execution};
use crate::profile::{Profile, ProfileKind};
use crate::rlselect::{gather_to_tensor, select_pattern, train_cae, Cae, CaeTrainConfig, SelectionReport};
use crate::seed::derive_seed;
use crate::wavesim::ShotGather;

const TAG_TRAIN: u64 = 1;
const TAG_VAL: u64 = 2;
const TAG_DCL: u64 = 3;
const TAG_CAE: u64 = 4;
const TAG_RANDOM: u64 = 5;
const TAG_KMEANS: u64 = 6;
const TAG_LAYERS: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    All,
    Random,
    Dcl,
    DclRl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Method::All => "all",
            Method::Random => "random",
            Method::Dcl => "dcl",
            Method::DclRl => "dcl-rl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSpec {
    pub shot_counts: Vec<usize>,
    pub iterations: usize,
    #[serde(default = "one")]
    pub repeats: usize,
}

fn one() -> usize {
    1
}

fn three() -> usize {
    3
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub profile: ProfileKind,
    pub seed: u64,
    pub test_model_seeds: Vec<u64>,
    /// selected shot counts K (rate K / N_s)
    pub shot_counts: Vec<usize>,
    pub methods: Vec<Method>,
    #[serde(default = "three")]
    pub random_repeats: usize,
    #[serde(default = "three")]
    pub seeds_per_rate: usize,
    #[serde(default)]
    pub train_models: usize,
    #[serde(default)]
    pub val_models: usize,
    pub dcl: Option<DclTrainConfig>,
    pub cae: Option<CaeTrainConfig>,
    /// prebuilt pattern bank; built into the output directory when absent
    pub bank: Option<PathBuf>,
    /// prebuilt autoencoder checkpoint; trained when absent
    pub cae_checkpoint: Option<PathBuf>,
    pub fwi_max_iterations: Option<usize>,
    pub timing: Option<TimingSpec>,
    pub output_dir: PathBuf,
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let mut m: ExperimentManifest = read_json(path)?;
        if m.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                m.output_dir = dir.join(&m.output_dir);
            }
        }
        for p in [&mut m.bank, &mut m.cae_checkpoint].into_iter().flatten() {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = Profile::from_kind(self.profile).n_shots;
        if self.methods.is_empty() {
            return Err(FwicError::param("manifest lists no selection method"));
        }
        if self.test_model_seeds.is_empty() {
            return Err(FwicError::param("manifest lists no test model"));
        }
        if let Some(&k) = self.shot_counts.iter().find(|&&k| k == 0 || k > n) {
            return Err(FwicError::param(format!("shot count {k} outside 1..={n}")));
        }
        let learned = self.methods.iter().any(|m| matches!(m, Method::Dcl | Method::DclRl));
        if learned && self.bank.is_none() && (self.dcl.is_none() || self.train_models == 0) {
            return Err(FwicError::param("dcl methods need a bank path or a dcl config with training models"));
        }
        if self.methods.contains(&Method::DclRl) && self.cae_checkpoint.is_none() && (self.cae.is_none() || self.train_models == 0) {
            return Err(FwicError::param("dcl-rl needs a cae checkpoint or a cae config with training models"));
        }
        Ok(())
    }
}

/// Layered model for a seed; the layer count is drawn from the profile range.
pub fn model_for_seed(profile: &Profile, seed: u64) -> Result<VelocityModel> {
    let span = (profile.max_layers - profile.min_layers + 1) as u64;
    let n_layers = profile.min_layers + (derive_seed(seed, &[TAG_LAYERS]) % span) as usize;
    generate_model(&profile.layer_params(n_layers, seed), profile.grid)
}

#[derive(Debug, Clone)]
pub struct Survey {
    pub seed: u64,
    pub model: VelocityModel,
    pub gathers: Vec<ShotGather>,
}

pub fn simulate_surveys(profile: &Profile, seeds: &[u64], exec: Execution) -> Result<Vec<Survey>> {
    let setup = profile.setup()?;
    par::try_map(exec, seeds, |&seed| {
        let model = model_for_seed(profile, seed)?;
        let gathers = setup.simulate_survey(&model, Execution::Sequential)?;
        Ok(Survey { seed, model, gathers })
    })
}

/// Training and validation surveys derived from the global seed.
pub fn training_surveys(profile: &Profile, seed: u64, n_train: usize, n_val: usize, exec: Execution) -> Result<(Vec<Survey>, Vec<Survey>)> {
    let train: Vec<u64> = (0..n_train as u64).map(|i| derive_seed(seed, &[TAG_TRAIN, i])).collect();
    let val: Vec<u64> = (0..n_val as u64).map(|i| derive_seed(seed, &[TAG_VAL, i])).collect();
    Ok((simulate_surveys(profile, &train, exec)?, simulate_surveys(profile, &val, exec)?))
}

pub const MODEL_FILE: &str = "model.vmod";

/// Survey directories under `root` in name order; each holds
/// [`MODEL_FILE`] and its `.sgz` gathers.
pub fn read_dataset(root: &Path) -> Result<Vec<Survey>> {
    let mut dirs: Vec<PathBuf> =
        fs::read_dir(root)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(MODEL_FILE).exists()).collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(missing(root, "fwic gen --out <dir> && fwic simulate --data <dir>"));
    }
    dirs.iter()
        .enumerate()
        .map(|(i, d)| {
            Ok(Survey { seed: i as u64, model: read_model(&d.join(MODEL_FILE))?, gathers: read_survey(d)? })
        })
        .collect()
}

pub fn dcl_samples(surveys: &[Survey], arch: &DclArchitecture) -> Result<Vec<DclSample>> {
    surveys.iter().map(|s| DclSample::new(&s.gathers, &s.model, arch)).collect()
}

pub fn gather_corpus(surveys: &[Survey]) -> Vec<Tensor> {
    surveys.iter().flat_map(|s| s.gathers.iter().map(gather_to_tensor)).collect()
}

/// `K` shots drawn uniformly without replacement, sorted.
pub fn random_pattern(n_shots: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = sample(&mut rng, n_shots, k).into_vec();
    p.sort_unstable();
    p
}

/// `K` shots spread evenly over the line, always including the first.
pub fn even_pattern(n_shots: usize, k: usize) -> Vec<usize> {
    (0..k).map(|i| i * n_shots / k).collect()
}

/// One inversion of the experiment table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model_id: usize,
    pub model_seed: u64,
    pub method: Method,
    pub repeat: usize,
    pub shots: usize,
    pub rate: f64,
    /// space-separated shot indices
    pub selected: String,
    pub mae: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub final_loss: f64,
    pub seconds: f64,
}

impl ResultRow {
    pub const TIMING_COLUMNS: [&'static str; 1] = ["seconds"];
}

/// Mean metrics per (shot count, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub shots: usize,
    pub rate: f64,
    pub method: Method,
    pub runs: usize,
    pub mae: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub iterations: f64,
    pub seconds: f64,
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(usize, Method), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.shots, r.method)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((shots, method), g)| {
            let n = g.len() as f64;
            let mean = |f: fn(&ResultRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / n;
            SummaryRow {
                shots,
                rate: g[0].rate,
                method,
                runs: g.len(),
                mae: mean(|r| r.mae),
                ssim: mean(|r| r.ssim),
                psnr: mean(|r| r.psnr),
                iterations: mean(|r| r.iterations as f64),
                seconds: mean(|r| r.seconds),
            }
        })
        .collect()
}

/// Mean wall-clock per shot count with a least-squares line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCurve {
    /// (shots, mean seconds, runs)
    pub points: Vec<(usize, f64, usize)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn timing_curve(samples: &[(usize, f64)]) -> Result<TimingCurve> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for &(k, s) in samples {
        groups.entry(k).or_default().push(s);
    }
    if groups.len() < 2 {
        return Err(FwicError::param(format!(
            "timing curve needs at least 2 distinct shot counts, got {}",
            groups.len()
        )));
    }
    let points: Vec<(usize, f64, usize)> =
        groups.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64, v.len())).collect();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(TimingCurve { points, slope, intercept: my - slope * mx, r_squared })
}

/// Plain SVG line chart of the timing curve and its fit.
pub fn timing_svg(curve: &TimingCurve) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let x_max = curve.points.iter().map(|p| p.0).max().unwrap_or(1) as f64 + 1.0;
    let y_max = curve.points.iter().map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.1;
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y / y_max * (h - 2.0 * pad);
    let line: Vec<String> = curve.points.iter().map(|p| format!("{:.1},{:.1}", sx(p.0 as f64), sy(p.1))).collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    svg += &format!(
        "<line x1=\"{pad}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{0}\" stroke=\"black\"/>\n",
        h - pad,
        w - pad
    );
    svg += &format!(
        "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
        sx(0.0),
        sy(curve.intercept.max(0.0)),
        sx(x_max),
        sy((curve.intercept + curve.slope * x_max).min(y_max))
    );
    svg += &format!("<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n", line.join(" "));
    for p in &curve.points {
        svg += &format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"steelblue\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            sx(p.0 as f64),
            sy(p.1),
            sx(p.0 as f64),
            h - pad + 16.0,
            p.0
        );
    }
    svg += &format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">shots</text>\n<text x=\"12\" y=\"{pad}\">FWI seconds (max {:.2})</text>\n",
        w / 2.0,
        h - 8.0,
        y_max / 1.1
    );
    svg += &format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">slope {:.3} s/shot, R2 {:.4}</text>\n</svg>\n",
        w - pad,
        pad - 12.0,
        curve.slope,
        curve.r_squared
    );
    svg
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> FwicError + '_ {
    move |e| FwicError::Format { kind: "csv", path: path.to_path_buf(), reason: e.to_string() }
}

/// Wall-clock of fixed-budget inversions on one survey for each shot count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub shots: usize,
    pub repeat: usize,
    pub iterations: usize,
    pub seconds: f64,
}

pub fn timing_run(profile: &Profile, survey: &Survey, spec: &TimingSpec) -> Result<Vec<TimingRow>> {
    let setup = profile.setup()?;
    let mut rows = Vec::new();
    for repeat in 0..spec.repeats {
        for &k in &spec.shot_counts {
            let mut config = profile.fwi_config(even_pattern(profile.n_shots, k));
            config.max_iterations = spec.iterations;
            config.loss_threshold = f64::MIN_POSITIVE;
            config.patience = spec.iterations + 1;
            let m0 = config.starting_model(&survey.model)?;
            let report = invert(&m0, &setup, &survey.gathers, &config, Execution::Sequential)?;
            rows.push(TimingRow { shots: k, repeat, iterations: report.iterations, seconds: report.total_seconds });
        }
    }
    Ok(rows)
}

pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub bank: Vec<SensingPattern>,
    pub selections: Vec<SelectionRecord>,
    pub timing: Option<TimingCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub model_id: usize,
    pub shots: usize,
    pub report: SelectionReport,
}

struct Job {
    model_id: usize,
    method: Method,
    repeat: usize,
    selected: Vec<usize>,
}

fn missing(path: &Path, step: &str) -> FwicError {
    FwicError::MissingArtifact { path: path.to_path_buf(), build_step: step.to_string() }
}

/// Run every (test model, method) inversion of the manifest and write
/// `results.csv`, `summary.csv`, `timing.csv` and `timing.svg` (plus the
/// bank, autoencoder and selection reports) under `output_dir`.
pub fn run_experiment(manifest: &ExperimentManifest, exec: Execution) -> Result<ExperimentOutcome> {
    manifest.validate()?;
    let profile = Profile::from_kind(manifest.profile);
    let out = &manifest.output_dir;
    fs::create_dir_all(out)?;
    write_json(&out.join("manifest.json"), manifest)?;
    let seed = manifest.seed;
    let n = profile.n_shots;
    let wants = |m: Method| manifest.methods.contains(&m);
    let learned = wants(Method::Dcl) || wants(Method::DclRl);

    let need_training = learned
        && (manifest.bank.is_none() || (wants(Method::DclRl) && manifest.cae_checkpoint.is_none()));
    let (train, val) = if need_training {
        log::info!("simulating {} training and {} validation surveys", manifest.train_models, manifest.val_models);
        training_surveys(&profile, seed, manifest.train_models, manifest.val_models, exec)?
    } else {
        (Vec::new(), Vec::new())
    };

    let bank: Vec<SensingPattern> = if !learned {
        Vec::new()
    } else if let Some(path) = &manifest.bank {
        if !path.exists() {
            return Err(missing(path, "fwic train-dcl --bank <path>"));
        }
        read_json(path)?
    } else {
        let arch = DclArchitecture::for_profile(&profile)?;
        let config = manifest.dcl.clone().expect("validated");
        let rates: Vec<f64> = manifest.shot_counts.iter().map(|&k| k as f64 / n as f64).collect();
        let bank = harvest_patterns(
            &arch,
            &dcl_samples(&train, &arch)?,
            &dcl_samples(&val, &arch)?,
            &HarvestPlan { rates, seeds_per_rate: manifest.seeds_per_rate, seed: derive_seed(seed, &[TAG_DCL]) },
            &config,
            exec,
        )?;
        write_json(&out.join("bank.json"), &bank)?;
        bank
    };

    let cae = if !wants(Method::DclRl) {
        None
    } else if let Some(path) = &manifest.cae_checkpoint {
        if !path.exists() {
            return Err(missing(path, "fwic train-cae --out <path>"));
        }
        Some(Cae::load(path)?)
    } else {
        let config = manifest.cae.clone().expect("validated");
        let cae_seed = derive_seed(seed, &[TAG_CAE]);
        let (cae, history) = train_cae(&gather_corpus(&train), cae_seed, &config)?;
        log::info!("cae trained, final epoch loss {:.5}", history.last().copied().unwrap_or(f64::NAN));
        cae.save(&out.join("cae.ckpt"), cae_seed, config.epochs as u64)?;
        Some(cae)
    };

    log::info!("simulating {} test surveys", manifest.test_model_seeds.len());
    let tests = simulate_surveys(&profile, &manifest.test_model_seeds, exec)?;

    let mut jobs = Vec::new();
    let mut selections = Vec::new();
    for (model_id, survey) in tests.iter().enumerate() {
        if wants(Method::All) {
            jobs.push(Job { model_id, method: Method::All, repeat: 0, selected: (0..n).collect() });
        }
        for &k in &manifest.shot_counts {
            if wants(Method::Random) {
                for repeat in 0..manifest.random_repeats {
                    let s = derive_seed(seed, &[TAG_RANDOM, model_id as u64, k as u64, repeat as u64]);
                    jobs.push(Job { model_id, method: Method::Random, repeat, selected: random_pattern(n, k, s) });
                }
            }
            let patterns: Vec<Vec<usize>> =
                bank.iter().filter(|p| p.indices.len() == k).map(|p| p.indices.clone()).collect();
            if learned && patterns.is_empty() {
                return Err(FwicError::param(format!("pattern bank has no entry with {k} shots")));
            }
            if wants(Method::Dcl) {
                for (repeat, p) in patterns.iter().enumerate() {
                    jobs.push(Job { model_id, method: Method::Dcl, repeat, selected: p.clone() });
                }
            }
            if let Some(cae) = &cae {
                let kseed = derive_seed(seed, &[TAG_KMEANS, model_id as u64, k as u64]);
                let report = select_pattern(&patterns, &survey.gathers, cae, k, kseed, exec)?;
                jobs.push(Job { model_id, method: Method::DclRl, repeat: 0, selected: report.chosen_indices.clone() });
                selections.push(SelectionRecord { model_id, shots: k, report });
            }
        }
    }
    if !selections.is_empty() {
        write_json(&out.join("selections.json"), &selections)?;
    }

    let setup = profile.setup()?;
    let starts: Vec<VelocityModel> = tests
        .iter()
        .map(|s| profile.fwi_config(Vec::new()).starting_model(&s.model))
        .collect::<Result<_>>()?;
    log::info!("running {} inversions", jobs.len());
    let rows = par::try_map(exec, &jobs, |job| -> Result<ResultRow> {
        let survey = &tests[job.model_id];
        let mut config = profile.fwi_config(job.selected.clone());
        if let Some(it) = manifest.fwi_max_iterations {
            config.max_iterations = it;
        }
        let clock = Instant::now();
        let report = invert(&starts[job.model_id], &setup, &survey.gathers, &config, Execution::Sequential)?;
        let seconds = clock.elapsed().as_secs_f64();
        let metrics = Metrics::between(&report.model, &survey.model)?;
        log::debug!("model {} {} {:?}: mae {:.4}", job.model_id, job.method, job.selected, metrics.mae);
        Ok(ResultRow {
            model_id: job.model_id,
            model_seed: survey.seed,
            method: job.method,
            repeat: job.repeat,
            shots: job.selected.len(),
            rate: job.selected.len() as f64 / n as f64,
            selected: job.selected.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
            mae: metrics.mae,
            ssim: metrics.ssim,
            psnr: metrics.psnr,
            iterations: report.iterations,
            stop_reason: report.stop_reason,
            final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
            seconds,
        })
    })?;
    write_csv(&out.join("results.csv"), &rows)?;
    let summary = summarize(&rows);
    write_csv(&out.join("summary.csv"), &summary)?;

    let samples: Vec<(usize, f64)> = match &manifest.timing {
        Some(spec) => timing_run(&profile, &tests[0], spec)?.iter().map(|r| (r.shots, r.seconds)).collect(),
        None => rows.iter().map(|r| (r.shots, r.seconds)).collect(),
    };
    let timing = match timing_curve(&samples) {
        Ok(curve) => {
            #[derive(Serialize)]
            struct Point {
                shots: usize,
                mean_seconds: f64,
                runs: usize,
            }
            let points: Vec<Point> =
                curve.points.iter().map(|&(shots, mean_seconds, runs)| Point { shots, mean_seconds, runs }).collect();
            write_csv(&out.join("timing.csv"), &points)?;
            fs::write(out.join("timing.svg"), timing_svg(&curve))?;
            log::info!("timing slope {:.3} s/shot, R2 {:.4}", curve.slope, curve.r_squared);
            Some(curve)
        }
        Err(e) => {
            log::warn!("no timing curve: {e}");
            None
        }
    };
    Ok(ExperimentOutcome { rows, summary, bank, selections, timing })
}
