//! Compressed-learning U-Net: a binary sensing layer over the shot axis
//! followed by an encoder/decoder that maps the kept gathers to a velocity
//! model. Training it at a target rate yields a shot-selection pattern.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};
use crate::geomodel::{denormalize, GridSpec, VelocityModel};
use crate::metrics::ssim;
use crate::neural::{
    assign, concat_channels, load_checkpoint, mixed_loss, save_checkpoint, split_channels, zero_grads, Adam, Conv2d,
    ConvTranspose2d, Dropout, InstanceNorm2d, Layer, MaxPool2d, Mode, Padding, Param, Relu, SensingLayer, Sequential,
    Tensor, Upsample2d,
};
use crate::par::{self, Execution};
use crate::profile::{Profile, ProfileKind};
use crate::seed::derive_seed;
use crate::wavesim::ShotGather;

/// Encoder widths of the full-size network.
pub const FULL_ENCODER_CHANNELS: [usize; 5] = [32, 64, 128, 256, 512];
/// Time samples merged by the output head.
pub const HEAD_STRIDE: usize = 6;
const POOLS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DclArchitecture {
    pub profile: ProfileKind,
    pub n_shots: usize,
    /// T: time samples per trace (input height)
    pub n_samples: usize,
    /// R: receivers (input width)
    pub n_receivers: usize,
    pub grid: GridSpec,
    pub encoder_channels: [usize; 5],
    pub dropout: f32,
}

impl DclArchitecture {
    pub fn for_profile(p: &Profile) -> Result<Self> {
        let a = DclArchitecture {
            profile: p.kind,
            n_shots: p.n_shots,
            n_samples: p.n_time_samples,
            n_receivers: p.geometry()?.n_receivers(),
            grid: p.grid,
            encoder_channels: FULL_ENCODER_CHANNELS.map(|c| c / p.dcl_channel_divisor),
            dropout: 0.2,
        };
        a.validate()?;
        Ok(a)
    }

    /// Output width factor after the head: `nx / R`.
    pub fn width_factor(&self) -> usize {
        self.grid.nx / self.n_receivers
    }

    pub fn validate(&self) -> Result<()> {
        let div = 1 << POOLS;
        if !self.n_samples.is_multiple_of(div) || !self.n_receivers.is_multiple_of(div) {
            return Err(FwicError::param(format!(
                "input {}x{} must be divisible by {div} for four poolings",
                self.n_samples, self.n_receivers
            )));
        }
        if !self.n_samples.is_multiple_of(HEAD_STRIDE) || self.n_samples / HEAD_STRIDE != self.grid.nz {
            return Err(FwicError::param(format!(
                "T = {} must equal {HEAD_STRIDE} * nz = {}",
                self.n_samples,
                HEAD_STRIDE * self.grid.nz
            )));
        }
        if !self.grid.nx.is_multiple_of(self.n_receivers) {
            return Err(FwicError::param(format!(
                "nx = {} is not a multiple of R = {}",
                self.grid.nx, self.n_receivers
            )));
        }
        if self.encoder_channels.iter().any(|&c| c < 2 || c % 2 != 0) {
            return Err(FwicError::param(format!("encoder widths {:?} must be even", self.encoder_channels)));
        }
        Ok(())
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.n_shots, self.n_samples, self.n_receivers]
    }

    pub fn output_shape(&self, batch: usize) -> [usize; 4] {
        [batch, 1, self.grid.nz, self.grid.nx]
    }
}

fn conv_in_relu(name: &str, cin: usize, cout: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Box<dyn Layer>> {
    vec![
        Box::new(Conv2d::new(name, cin, cout, (k, k), rng)),
        Box::new(InstanceNorm2d::new(&format!("{name}.norm"), cout, true)),
        Box::new(Relu::new()),
    ]
}

struct EncBlock {
    convs: Sequential,
    down: Option<Sequential>,
}

struct DecBlock {
    up: Sequential,
    up_channels: usize,
    convs: Sequential,
}

/// The sensing layer plus Enc1-Enc5, Dec1-Dec4 and the strided head.
pub struct DclNetwork {
    pub arch: DclArchitecture,
    pub sensing: SensingLayer,
    enc: Vec<EncBlock>,
    dec: Vec<DecBlock>,
    head: Conv2d,
    widen: Upsample2d,
}

impl DclNetwork {
    pub fn new(arch: DclArchitecture, target_rate: f64, mu: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        let sensing = SensingLayer::new(arch.n_shots, target_rate, mu, derive_seed(seed, &[0]))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
        let ch = arch.encoder_channels;
        let mut enc = Vec::new();
        let mut cin = arch.n_shots;
        for (i, &c) in ch.iter().enumerate() {
            let name = format!("enc{}", i + 1);
            let mut layers = conv_in_relu(&format!("{name}.conv1"), cin, c, 5, &mut rng);
            layers.extend(conv_in_relu(&format!("{name}.conv2"), c, c, 5, &mut rng));
            let down = (i < POOLS).then(|| -> Result<Sequential> {
                Ok(Sequential::new(vec![
                    Box::new(MaxPool2d::new(2)),
                    Box::new(Dropout::new(arch.dropout, derive_seed(seed, &[2, i as u64]))?),
                ]))
            });
            enc.push(EncBlock { convs: Sequential::new(layers), down: down.transpose()? });
            cin = c;
        }
        let mut dec = Vec::new();
        for i in 0..POOLS {
            let name = format!("dec{}", i + 1);
            let c = ch[POOLS - i];
            let half = ch[POOLS - 1 - i];
            let up: Vec<Box<dyn Layer>> = vec![
                Box::new(ConvTranspose2d::new(&format!("{name}.up"), c, half, 2, &mut rng)),
                Box::new(InstanceNorm2d::new(&format!("{name}.up.norm"), half, true)),
                Box::new(Relu::new()),
            ];
            let mut convs = conv_in_relu(&format!("{name}.conv1"), 2 * half, half, 2, &mut rng);
            convs.extend(conv_in_relu(&format!("{name}.conv2"), half, half, 2, &mut rng));
            dec.push(DecBlock { up: Sequential::new(up), up_channels: half, convs: Sequential::new(convs) });
        }
        let head = Conv2d::new("head", ch[0], 1, (HEAD_STRIDE, 1), &mut rng)
            .with_stride((HEAD_STRIDE, 1))
            .with_padding(Padding::default());
        let widen = Upsample2d::new(1, arch.width_factor());
        Ok(DclNetwork { arch, sensing, enc, dec, head, widen })
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let n = x.shape()[0];
        x.expect_shape("dcl input", self.arch.input_shape(n))?;
        let mut h = self.sensing.forward(x, mode)?;
        let mut skips = Vec::with_capacity(POOLS);
        for block in &mut self.enc {
            h = block.convs.forward(&h, mode)?;
            if let Some(down) = &mut block.down {
                skips.push(h.clone());
                h = down.forward(&h, mode)?;
            }
        }
        for block in &mut self.dec {
            let up = block.up.forward(&h, mode)?;
            let skip = skips.pop().expect("one skip per decoder block");
            h = block.convs.forward(&concat_channels(&up, &skip)?, mode)?;
        }
        let y = self.head.forward(&h, mode)?;
        self.widen.forward(&y, mode)
    }

    /// Backpropagate `d_out`; the sensing-weight gradient includes the data
    /// term only (add the rate term with `sensing.backward_rate`).
    pub fn backward(&mut self, d_out: &Tensor) -> Result<Tensor> {
        let mut g = self.widen.backward(d_out)?;
        g = self.head.backward(&g)?;
        let mut d_skips = Vec::with_capacity(POOLS);
        for block in self.dec.iter_mut().rev() {
            let d_cat = block.convs.backward(&g)?;
            let (d_up, d_skip) = split_channels(&d_cat, block.up_channels)?;
            d_skips.push(d_skip);
            g = block.up.backward(&d_up)?;
        }
        for block in self.enc.iter_mut().rev() {
            if let Some(down) = &mut block.down {
                g = down.backward(&g)?;
                g.add_assign(&d_skips.pop().expect("one skip per pooled block"))?;
            }
            g = block.convs.backward(&g)?;
        }
        self.sensing.backward(&g)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = vec![&self.sensing.weights];
        for b in &self.enc {
            p.extend(b.convs.params());
        }
        for b in &self.dec {
            p.extend(b.up.params());
            p.extend(b.convs.params());
        }
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = vec![&mut self.sensing.weights];
        for b in &mut self.enc {
            p.extend(b.convs.params_mut());
        }
        for b in &mut self.dec {
            p.extend(b.up.params_mut());
            p.extend(b.convs.params_mut());
        }
        p.extend(self.head.params_mut());
        p
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn save(&self, path: &Path, seed: u64, step: u64) -> Result<()> {
        let config = serde_json::json!({
            "arch": self.arch,
            "target_rate": self.sensing.target_rate,
            "mu": self.sensing.mu,
        });
        save_checkpoint(path, "dcl-unet", config, seed, step, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, values) = load_checkpoint(path)?;
        let bad = |reason: &str| FwicError::Format { kind: "checkpoint", path: path.to_path_buf(), reason: reason.into() };
        if manifest.architecture != "dcl-unet" {
            return Err(bad(&format!("architecture {} is not dcl-unet", manifest.architecture)));
        }
        let arch: DclArchitecture = serde_json::from_value(manifest.config["arch"].clone())?;
        let rate = manifest.config["target_rate"].as_f64().ok_or_else(|| bad("missing target_rate"))?;
        let mu = manifest.config["mu"].as_f64().ok_or_else(|| bad("missing mu"))?;
        let mut net = DclNetwork::new(arch, rate, mu, manifest.seed)?;
        assign(net.params_mut(), &manifest, values)?;
        Ok(net)
    }
}

/// Network input for one survey: gathers as channels, each `T x R` and
/// max-abs scaled onto [-1, 1].
pub fn gathers_to_input(gathers: &[ShotGather], arch: &DclArchitecture) -> Result<Tensor> {
    let (t, r) = (arch.n_samples, arch.n_receivers);
    if gathers.len() != arch.n_shots {
        return Err(FwicError::dims("survey shot count", &[arch.n_shots], &[gathers.len()]));
    }
    let mut x = Tensor::zeros(arch.input_shape(1));
    for (c, g) in gathers.iter().enumerate() {
        if g.data.dim() != (r, t) {
            return Err(FwicError::dims("gather (receivers, samples)", &[r, t], &[g.n_receivers(), g.n_samples()]));
        }
        let norm = g.normalized();
        let plane = x.plane_mut(0, c);
        for ((ir, it), &v) in norm.indexed_iter() {
            plane[it * r + ir] = v;
        }
    }
    Ok(x)
}

/// [0, 1]-normalized model as a `1 x 1 x nz x nx` target.
pub fn model_to_target(m: &VelocityModel) -> Tensor {
    let (nz, nx) = m.values.dim();
    let v = m.normalized().iter().map(|&x| x as f32).collect();
    Tensor::from_vec([1, 1, nz, nx], v).expect("shape matches model")
}

/// One training pair.
#[derive(Debug, Clone)]
pub struct DclSample {
    pub input: Tensor,
    pub target: Tensor,
}

impl DclSample {
    pub fn new(gathers: &[ShotGather], model: &VelocityModel, arch: &DclArchitecture) -> Result<Self> {
        if model.spec.shape() != (arch.grid.nz, arch.grid.nx) {
            return Err(FwicError::dims(
                "model (nz, nx)",
                &[arch.grid.nz, arch.grid.nx],
                &[model.spec.nz, model.spec.nx],
            ));
        }
        Ok(DclSample { input: gathers_to_input(gathers, arch)?, target: model_to_target(model) })
    }
}

fn stack(samples: &[&Tensor]) -> Tensor {
    let [_, c, h, w] = samples[0].shape();
    let data = samples.iter().flat_map(|s| s.data().iter().copied()).collect();
    Tensor::from_vec([samples.len(), c, h, w], data).expect("uniform sample shapes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DclTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mu: f64,
}

impl DclTrainConfig {
    pub fn desk() -> Self {
        DclTrainConfig { epochs: 12, batch_size: 4, learning_rate: 2e-3, mu: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(FwicError::param("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(FwicError::param(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

/// A K-subset of shot indices with the run that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingPattern {
    pub indices: Vec<usize>,
    pub rate: f64,
    pub seed: u64,
    pub val_ssim: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss: f64,
    pub mae: f64,
    /// realized rate after the epoch
    pub rate_hat: f64,
}

pub struct TrainedDcl {
    pub network: DclNetwork,
    pub pattern: SensingPattern,
    pub history: Vec<EpochStats>,
}

/// Jointly train the sensing mask and the inversion network on `train` with
/// `MAE + mu (R - R_hat)^2`, then harvest the mask and score `val`.
pub fn train_dcl(
    arch: &DclArchitecture,
    train: &[DclSample],
    val: &[DclSample],
    target_rate: f64,
    seed: u64,
    config: &DclTrainConfig,
) -> Result<TrainedDcl> {
    if train.is_empty() {
        return Err(FwicError::param("empty training set"));
    }
    config.validate()?;
    let mut net = DclNetwork::new(arch.clone(), target_rate, config.mu, seed)?;
    let mut opt = Adam::new(config.learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[3]));
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut mae, mut batches) = (0.0, 0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let x = stack(&chunk.iter().map(|&i| &train[i].input).collect::<Vec<_>>());
            let y = stack(&chunk.iter().map(|&i| &train[i].target).collect::<Vec<_>>());
            let pred = net.forward(&x, Mode::Train)?;
            let l = mixed_loss(&pred, &y, net.sensing.rate(), target_rate, config.mu)?;
            zero_grads(&mut net.params_mut());
            net.backward(&l.d_pred)?;
            net.sensing.backward_rate(l.d_rate);
            opt.update(&mut net.params_mut())?;
            loss += l.loss;
            mae += l.mae;
            batches += 1;
        }
        let stats = EpochStats { loss: loss / batches as f64, mae: mae / batches as f64, rate_hat: net.sensing.rate() };
        log::debug!("dcl seed {seed} rate {target_rate:.3} epoch {epoch}: {stats:?}");
        history.push(stats);
    }
    let val_ssim = validation_ssim(&mut net, val)?;
    let pattern = SensingPattern { indices: net.sensing.harvest(), rate: target_rate, seed, val_ssim };
    Ok(TrainedDcl { network: net, pattern, history })
}

fn prediction_plane(net: &mut DclNetwork, input: &Tensor) -> Result<Array2<f64>> {
    let y = net.forward(input, Mode::Eval)?;
    let (nz, nx) = (net.arch.grid.nz, net.arch.grid.nx);
    Ok(Array2::from_shape_fn((nz, nx), |(i, j)| (y.data()[i * nx + j] as f64).clamp(0.0, 1.0)))
}

/// Mean SSIM of clamped predictions against the normalized truths (NaN for an empty set).
pub fn validation_ssim(net: &mut DclNetwork, val: &[DclSample]) -> Result<f64> {
    if val.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in val {
        let pred = prediction_plane(net, &s.input)?;
        let (nz, nx) = pred.dim();
        let truth = Array2::from_shape_fn((nz, nx), |(i, j)| s.target.data()[i * nx + j] as f64);
        total += ssim(&pred, &truth)?;
    }
    Ok(total / val.len() as f64)
}

/// Predicted velocity model in km/s; the normalized output is clamped to [0, 1].
pub fn predict_model(net: &mut DclNetwork, gathers: &[ShotGather]) -> Result<VelocityModel> {
    let x = gathers_to_input(gathers, &net.arch)?;
    let plane = prediction_plane(net, &x)?;
    VelocityModel::new(net.arch.grid, denormalize(&plane))
}

/// Rates and seeds of a pattern-bank build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestPlan {
    pub rates: Vec<f64>,
    pub seeds_per_rate: usize,
    pub seed: u64,
}

/// One training job per (rate, repeat); the job seed is derived from the
/// plan seed, the rate index and the repeat index.
pub fn harvest_patterns(
    arch: &DclArchitecture,
    train: &[DclSample],
    val: &[DclSample],
    plan: &HarvestPlan,
    config: &DclTrainConfig,
    exec: Execution,
) -> Result<Vec<SensingPattern>> {
    if plan.rates.is_empty() {
        log::warn!("no sensing rates requested; the pattern bank is empty");
        return Ok(Vec::new());
    }
    let jobs: Vec<(f64, u64)> = plan
        .rates
        .iter()
        .enumerate()
        .flat_map(|(ri, &r)| (0..plan.seeds_per_rate).map(move |j| (r, derive_seed(plan.seed, &[ri as u64, j as u64]))))
        .collect();
    for &(r, _) in &jobs {
        crate::neural::target_count(r, arch.n_shots)?;
    }
    par::try_map(exec, &jobs, |&(rate, s)| {
        let run = train_dcl(arch, train, val, rate, s, config)?;
        log::info!("dcl rate {rate:.3} seed {s}: pattern {:?}, val ssim {:.3}", run.pattern.indices, run.pattern.val_ssim);
        Ok(run.pattern)
    })
}
