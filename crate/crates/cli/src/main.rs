use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fwic::dcl::{harvest_patterns, DclArchitecture, DclTrainConfig, HarvestPlan, SensingPattern};
use fwic::fwi::invert;
use fwic::harness::{
    dcl_samples, gather_corpus, model_for_seed, read_dataset, run_experiment, ExperimentManifest, MODEL_FILE,
};
use fwic::io::{read_json, read_model, read_survey, write_json, write_survey, write_vmod};
use fwic::metrics::Metrics;
use fwic::par::Execution;
use fwic::profile::{Profile, ProfileKind};
use fwic::rlselect::{select_pattern, train_cae, Cae, CaeTrainConfig};
use fwic::seed::derive_seed;

#[derive(Parser)]
#[command(name = "fwic", version, about = "Learned shot selection for full waveform inversion")]
struct Cli {
    /// Global seed; overrides manifest seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run independent jobs one at a time.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ProfileArg {
    #[arg(long, default_value = "desk")]
    profile: ProfileKind,
}

#[derive(Subcommand)]
enum Command {
    /// Generate layered velocity models, one directory per survey.
    Gen {
        #[command(flatten)]
        profile: ProfileArg,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the shot gathers of every survey directory under --data.
    Simulate {
        #[command(flatten)]
        profile: ProfileArg,
        #[arg(long)]
        data: PathBuf,
    },
    /// Invert one survey from the smoothed true model.
    Invert {
        #[command(flatten)]
        profile: ProfileArg,
        /// Survey directory with model.vmod and gathers.
        #[arg(long)]
        survey: PathBuf,
        /// Comma-separated shot indices; all shots when omitted.
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        #[arg(long)]
        max_iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train DCL networks and write the pattern bank.
    TrainDcl {
        #[command(flatten)]
        profile: ProfileArg,
        #[arg(long)]
        data: PathBuf,
        /// Selected shot counts, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Surveys held out for validation SSIM.
        #[arg(long, default_value_t = 4)]
        val: usize,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        bank: PathBuf,
    },
    /// Train the gather autoencoder.
    TrainCae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the bank pattern for one survey.
    Select {
        #[arg(long)]
        bank: PathBuf,
        /// Directory holding the survey's .sgz gathers.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        cae: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::available() };
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::Gen { profile, count, out } => {
            let p = Profile::from_kind(profile.profile);
            for i in 0..count {
                let dir = out.join(format!("survey_{i:04}"));
                fs::create_dir_all(&dir)?;
                write_vmod(&dir.join(MODEL_FILE), &model_for_seed(&p, derive_seed(seed, &[i as u64]))?)?;
            }
            log::info!("wrote {count} models under {}", out.display());
        }
        Command::Simulate { profile, data } => {
            let setup = Profile::from_kind(profile.profile).setup()?;
            for dir in survey_dirs(&data)? {
                let model = read_model(&dir.join(MODEL_FILE))?;
                write_survey(&dir, &setup.simulate_survey(&model, exec)?)?;
                log::info!("simulated {}", dir.display());
            }
        }
        Command::Invert { profile, survey, shots, max_iterations, out } => {
            let p = Profile::from_kind(profile.profile);
            let truth = read_model(&survey.join(MODEL_FILE))?;
            let gathers = read_survey(&survey)?;
            let mut config = p.fwi_config(shots.unwrap_or_else(|| (0..gathers.len()).collect()));
            if let Some(it) = max_iterations {
                config.max_iterations = it;
            }
            let m0 = config.starting_model(&truth)?;
            let report = invert(&m0, &p.setup()?, &gathers, &config, exec)?;
            let metrics = Metrics::between(&report.model, &truth)?;
            fs::create_dir_all(&out)?;
            write_vmod(&out.join("inverted.vmod"), &report.model)?;
            write_json(&out.join("report.json"), &serde_json::json!({
                "inversion": report.record(&config.selected),
                "metrics": metrics,
            }))?;
            println!("{} iterations ({}), mae {:.4}, ssim {:.4}, psnr {:.2}", report.iterations, report.stop_reason, metrics.mae, metrics.ssim, metrics.psnr);
        }
        Command::TrainDcl { profile, data, rates, seeds, val, epochs, bank } => {
            let p = Profile::from_kind(profile.profile);
            let surveys = read_dataset(&data)?;
            if val >= surveys.len() {
                bail!("{} surveys leave none for training after {val} validation surveys", surveys.len());
            }
            let (train, held) = surveys.split_at(surveys.len() - val);
            let arch = DclArchitecture::for_profile(&p)?;
            let mut config = DclTrainConfig::desk();
            if let Some(e) = epochs {
                config.epochs = e;
            }
            let plan = HarvestPlan {
                rates: rates.iter().map(|&k| k as f64 / p.n_shots as f64).collect(),
                seeds_per_rate: seeds,
                seed,
            };
            let patterns: Vec<SensingPattern> =
                harvest_patterns(&arch, &dcl_samples(train, &arch)?, &dcl_samples(held, &arch)?, &plan, &config, exec)?;
            write_json(&bank, &patterns)?;
            println!("{} patterns written to {}", patterns.len(), bank.display());
        }
        Command::TrainCae { data, epochs, out } => {
            let surveys = read_dataset(&data)?;
            let mut config = CaeTrainConfig::desk();
            if let Some(e) = epochs {
                config.epochs = e;
            }
            let (cae, history) = train_cae(&gather_corpus(&surveys), seed, &config)?;
            cae.save(&out, seed, config.epochs as u64)?;
            println!("final reconstruction loss {:.5}", history.last().copied().unwrap_or(f64::NAN));
        }
        Command::Select { bank, data, cae, k, out } => {
            let patterns: Vec<SensingPattern> = read_json(&bank)?;
            let candidates: Vec<Vec<usize>> =
                patterns.into_iter().filter(|p| p.indices.len() == k).map(|p| p.indices).collect();
            let cae = Cae::load(&cae)?;
            let report = select_pattern(&candidates, &read_survey(&data)?, &cae, k, seed, exec)?;
            write_json(&out, &report)?;
            println!("{:?}", report.chosen_indices);
        }
        Command::Run { manifest } => {
            let mut m = ExperimentManifest::load(&manifest)?;
            if let Some(s) = cli.seed {
                m.seed = s;
            }
            let outcome = run_experiment(&m, exec).with_context(|| format!("running {}", manifest.display()))?;
            println!("{:>6} {:>8} {:>5} {:>8} {:>8} {:>8}", "shots", "method", "runs", "mae", "ssim", "psnr");
            for r in &outcome.summary {
                println!("{:>6} {:>8} {:>5} {:>8.4} {:>8.4} {:>8.2}", r.shots, r.method, r.runs, r.mae, r.ssim, r.psnr);
            }
            if let Some(t) = &outcome.timing {
                println!("timing: {:.3} s per shot, R2 {:.4}", t.slope, t.r_squared);
            }
        }
    }
    Ok(())
}

fn survey_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .with_context(|| format!("reading {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MODEL_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no survey directories with {MODEL_FILE} under {}; run `fwic gen` first", root.display());
    }
    Ok(dirs)
}
