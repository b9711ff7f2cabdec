//! Pattern ranking for a new survey: autoencoder latents of its gathers are
//! clustered into `K` groups, and the bank pattern touching the most clusters
//! (then spanning the largest latent distances) wins.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FwicError, Result};
use crate::neural::{
    assign, load_checkpoint, mse_loss, save_checkpoint, zero_grads, Adam, Conv2d, Layer, MaxPool2d, Mode, Param, Relu,
    Sequential, Tanh, Tensor, Upsample2d,
};
use crate::par::{self, Execution};
use crate::seed::derive_seed;
use crate::wavesim::ShotGather;

pub const CAE_ENCODER_CHANNELS: [usize; 4] = [16, 8, 8, 8];
pub const CAE_DECODER_CHANNELS: [usize; 4] = [8, 8, 8, 16];
pub const KMEANS_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaeArchitecture {
    /// T
    pub n_samples: usize,
    /// R
    pub n_receivers: usize,
}

impl CaeArchitecture {
    pub fn new(n_samples: usize, n_receivers: usize) -> Result<Self> {
        if !n_samples.is_multiple_of(16) || !n_receivers.is_multiple_of(16) {
            return Err(FwicError::param(format!(
                "gather {n_samples}x{n_receivers} must be divisible by 16 for four poolings"
            )));
        }
        Ok(CaeArchitecture { n_samples, n_receivers })
    }

    /// `(F, H, W)` of the Enc4 output.
    pub fn latent_shape(&self) -> (usize, usize, usize) {
        (CAE_ENCODER_CHANNELS[3], self.n_samples / 16, self.n_receivers / 16)
    }

    pub fn latent_len(&self) -> usize {
        let (f, h, w) = self.latent_shape();
        f * h * w
    }

    pub fn input_len(&self) -> usize {
        self.n_samples * self.n_receivers
    }
}

/// Convolutional autoencoder over single normalized gathers (`T x R`).
pub struct Cae {
    pub arch: CaeArchitecture,
    encoder: Sequential,
    decoder: Sequential,
}

impl Cae {
    pub fn new(arch: CaeArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc: Vec<Box<dyn Layer>> = Vec::new();
        let mut cin = 1;
        for (i, &c) in CAE_ENCODER_CHANNELS.iter().enumerate() {
            enc.push(Box::new(Conv2d::new(&format!("enc{}", i + 1), cin, c, (3, 3), &mut rng)));
            enc.push(Box::new(Relu::new()));
            enc.push(Box::new(MaxPool2d::new(2)));
            cin = c;
        }
        let mut dec: Vec<Box<dyn Layer>> = Vec::new();
        for (i, &c) in CAE_DECODER_CHANNELS.iter().enumerate() {
            dec.push(Box::new(Conv2d::new(&format!("dec{}", i + 1), cin, c, (3, 3), &mut rng)));
            dec.push(Box::new(Relu::new()));
            dec.push(Box::new(Upsample2d::new(2, 2)));
            cin = c;
        }
        dec.push(Box::new(Conv2d::new("dec5", cin, 1, (3, 3), &mut rng)));
        dec.push(Box::new(Tanh::new()));
        Cae { arch, encoder: Sequential::new(enc), decoder: Sequential::new(dec) }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let [n, ..] = x.shape();
        x.expect_shape("autoencoder input", [n, 1, self.arch.n_samples, self.arch.n_receivers])
    }

    pub fn reconstruct(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check(x)?;
        let z = self.encoder.forward(x, Mode::Eval)?;
        self.decoder.forward(&z, Mode::Eval)
    }

    /// Flattened Enc4 output per sample (channel-major, then row-major).
    pub fn encode_tensor(&mut self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        self.check(x)?;
        let z = self.encoder.forward(x, Mode::Eval)?;
        Ok((0..z.shape()[0]).map(|i| z.sample(i).iter().map(|&v| v as f64).collect()).collect())
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn save(&self, path: &Path, seed: u64, step: u64) -> Result<()> {
        save_checkpoint(path, "cae", serde_json::to_value(self.arch)?, seed, step, &self.params())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, values) = load_checkpoint(path)?;
        if manifest.architecture != "cae" {
            return Err(FwicError::Format {
                kind: "checkpoint",
                path: path.to_path_buf(),
                reason: format!("architecture {} is not cae", manifest.architecture),
            });
        }
        let arch: CaeArchitecture = serde_json::from_value(manifest.config.clone())?;
        let mut cae = Cae::new(arch, manifest.seed);
        assign(cae.params_mut(), &manifest, values)?;
        Ok(cae)
    }
}

/// A gather as a `1 x 1 x T x R` tensor, max-abs scaled onto [-1, 1].
pub fn gather_to_tensor(g: &ShotGather) -> Tensor {
    let (r, t) = g.data.dim();
    let norm = g.normalized();
    let mut x = Tensor::zeros([1, 1, t, r]);
    let plane = x.plane_mut(0, 0);
    for ((ir, it), &v) in norm.indexed_iter() {
        plane[it * r + ir] = v;
    }
    x
}

fn stack(samples: &[&Tensor]) -> Tensor {
    let [_, c, h, w] = samples[0].shape();
    let data = samples.iter().flat_map(|s| s.data().iter().copied()).collect();
    Tensor::from_vec([samples.len(), c, h, w], data).expect("uniform sample shapes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl CaeTrainConfig {
    pub fn desk() -> Self {
        CaeTrainConfig { epochs: 8, batch_size: 8, learning_rate: 2e-3 }
    }
}

/// Minimize the mean squared reconstruction error over `corpus` (normalized
/// `1 x 1 x T x R` tensors) with Adam. Returns the per-epoch mean loss.
pub fn train_cae(corpus: &[Tensor], seed: u64, config: &CaeTrainConfig) -> Result<(Cae, Vec<f64>)> {
    let first = corpus.first().ok_or_else(|| FwicError::param("empty gather corpus"))?;
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(FwicError::param("epochs and batch size must be positive"));
    }
    let [_, _, t, r] = first.shape();
    let mut cae = Cae::new(CaeArchitecture::new(t, r)?, seed);
    for x in corpus {
        cae.check(x)?;
    }
    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut total, mut batches) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            let x = stack(&chunk.iter().map(|&i| &corpus[i]).collect::<Vec<_>>());
            let z = cae.encoder.forward(&x, Mode::Train)?;
            let y = cae.decoder.forward(&z, Mode::Train)?;
            let (loss, grad) = mse_loss(&y, &x)?;
            zero_grads(&mut cae.params_mut());
            let dz = cae.decoder.backward(&grad)?;
            cae.encoder.backward(&dz)?;
            opt.update(&mut cae.params_mut())?;
            total += loss;
            batches += 1;
        }
        history.push(total / batches as f64);
        log::debug!("cae epoch loss {:.5}", history.last().unwrap());
    }
    Ok((cae, history))
}

/// Mean squared reconstruction error over `gathers`.
pub fn reconstruction_mse(cae: &mut Cae, gathers: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for x in gathers {
        let y = cae.reconstruct(x)?;
        total += mse_loss(&y, x)?.0;
    }
    Ok(total / gathers.len() as f64)
}

/// Latent codes of a survey's gathers, in shot order.
pub fn encode(cae: &Cae, gathers: &[ShotGather], exec: Execution) -> Result<Vec<Vec<f64>>> {
    let arch = cae.arch;
    let values: Vec<Vec<f32>> = cae.params().iter().map(|p| p.value.clone()).collect();
    par::try_map(exec, gathers, |g| {
        // forward caches activations, so each job works on its own copy
        let mut local = Cae::new(arch, 0);
        for (dst, src) in local.params_mut().into_iter().zip(&values) {
            dst.value.copy_from_slice(src);
        }
        local.encode_tensor(&gather_to_tensor(g)).map(|mut v| v.remove(0))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// 1-based labels
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// within-cluster sum of squared distances
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_pp(codes: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = codes.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = codes.iter().map(|z| sq_dist(z, &codes[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            let rest: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            rest[rng.random_range(0..rest.len())]
        };
        chosen.push(next);
        for (d, z) in d2.iter_mut().zip(codes) {
            *d = d.min(sq_dist(z, &codes[next]));
        }
    }
    chosen.into_iter().map(|i| codes[i].clone()).collect()
}

fn assign_labels(codes: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    codes
        .iter()
        .map(|z| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(z, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn inertia(codes: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    codes.iter().zip(labels).map(|(z, &l)| sq_dist(z, &centroids[l])).sum()
}

/// Move the point farthest from its centroid in the largest cluster into
/// each empty cluster.
fn repair_empty(codes: &[Vec<f64>], labels: &mut [usize], centroids: &[Vec<f64>], k: usize) -> bool {
    let mut changed = false;
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&l| counts[l] += 1);
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return changed };
        let largest = (0..k).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).expect("k >= 1");
        let far = (0..codes.len())
            .filter(|&i| labels[i] == largest)
            .max_by(|&a, &b| {
                sq_dist(&codes[a], &centroids[largest])
                    .total_cmp(&sq_dist(&codes[b], &centroids[largest]))
                    .then(b.cmp(&a))
            })
            .expect("largest cluster is nonempty");
        labels[far] = empty;
        changed = true;
    }
}

fn means(codes: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = codes[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (z, &l) in codes.iter().zip(labels) {
        counts[l] += 1;
        sums[l].iter_mut().zip(z).for_each(|(s, v)| *s += v);
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= c.max(1) as f64);
    }
    sums
}

fn lloyd(codes: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<Vec<f64>>, f64) {
    let mut centroids = kmeans_pp(codes, k, rng);
    let mut labels = assign_labels(codes, &centroids);
    repair_empty(codes, &mut labels, &centroids, k);
    for _ in 0..KMEANS_MAX_ITERATIONS {
        centroids = means(codes, &labels, k);
        let mut next = assign_labels(codes, &centroids);
        repair_empty(codes, &mut next, &centroids, k);
        if next == labels {
            break;
        }
        labels = next;
    }
    centroids = means(codes, &labels, k);
    let sse = inertia(codes, &labels, &centroids);
    (labels, centroids, sse)
}

/// k-means++ seeding and Lloyd iterations, keeping the lowest-inertia run of
/// `n_init` restarts.
pub fn kmeans(codes: &[Vec<f64>], k: usize, seed: u64, n_init: usize) -> Result<ClusterLabels> {
    let n = codes.len();
    if k == 0 || k > n {
        return Err(FwicError::param(format!("cannot form {k} clusters from {n} codes")));
    }
    let dim = codes[0].len();
    if let Some(bad) = codes.iter().find(|z| z.len() != dim) {
        return Err(FwicError::dims("latent code length", &[dim], &[bad.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, f64)> = None;
    for _ in 0..n_init.max(1) {
        let run = lloyd(codes, k, &mut rng);
        if best.as_ref().is_none_or(|b| run.2 < b.2) {
            best = Some(run);
        }
    }
    let (labels, centroids, inertia) = best.expect("at least one run");
    Ok(ClusterLabels { labels: labels.into_iter().map(|l| l + 1).collect(), centroids, inertia })
}

fn check_indices(theta: &[usize], n: usize) -> Result<()> {
    match theta.iter().find(|&&i| i >= n) {
        Some(&i) => Err(FwicError::param(format!("pattern index {i} out of range for {n} shots"))),
        None => Ok(()),
    }
}

/// s1: distinct cluster labels among the selected shots.
pub fn diversity_score(theta: &[usize], labels: &[usize]) -> usize {
    theta.iter().map(|&i| labels[i]).collect::<BTreeSet<_>>().len()
}

/// s2: sum of latent Euclidean distances over ordered pairs of selected shots.
pub fn distance_score(theta: &[usize], codes: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for &n in theta {
        for &m in theta {
            s += sq_dist(&codes[n], &codes[m]).sqrt();
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternScore {
    pub s1: usize,
    /// only computed for patterns tied at the best s1
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub chosen: usize,
    pub chosen_indices: Vec<usize>,
    pub per_pattern: Vec<PatternScore>,
    pub kmeans_seed: u64,
    pub inertia: f64,
}

/// Highest s1, then highest s2, then lowest bank position.
pub fn rank_patterns(bank: &[Vec<usize>], labels: &[usize], codes: &[Vec<f64>]) -> Result<(usize, Vec<PatternScore>)> {
    let k = bank.first().ok_or_else(|| FwicError::param("empty pattern bank"))?.len();
    if let Some(p) = bank.iter().find(|p| p.len() != k) {
        return Err(FwicError::param(format!("bank mixes pattern sizes {k} and {}", p.len())));
    }
    if labels.len() != codes.len() {
        return Err(FwicError::dims("labels vs codes", &[codes.len()], &[labels.len()]));
    }
    for p in bank {
        check_indices(p, codes.len())?;
    }
    let mut scores: Vec<PatternScore> =
        bank.iter().map(|p| PatternScore { s1: diversity_score(p, labels), s2: None }).collect();
    let top = scores.iter().map(|s| s.s1).max().expect("nonempty bank");
    let mut chosen = None;
    let mut best_s2 = f64::NEG_INFINITY;
    for (i, (p, s)) in bank.iter().zip(scores.iter_mut()).enumerate() {
        if s.s1 == top {
            let s2 = distance_score(p, codes);
            s.s2 = Some(s2);
            if s2 > best_s2 {
                best_s2 = s2;
                chosen = Some(i);
            }
        }
    }
    Ok((chosen.expect("some pattern attains the top s1"), scores))
}

pub const KMEANS_RESTARTS: usize = 64;

/// Encode the survey, cluster its codes into `K` groups and rank the bank.
pub fn select_pattern(
    bank: &[Vec<usize>],
    gathers: &[ShotGather],
    cae: &Cae,
    k: usize,
    seed: u64,
    exec: Execution,
) -> Result<SelectionReport> {
    if bank.is_empty() {
        return Err(FwicError::param("empty pattern bank"));
    }
    if gathers.len() < k {
        return Err(FwicError::param(format!("{} gathers cannot supply {k} shots", gathers.len())));
    }
    if let Some(p) = bank.iter().find(|p| p.len() != k) {
        return Err(FwicError::param(format!("bank pattern {p:?} does not have {k} shots")));
    }
    let codes = encode(cae, gathers, exec)?;
    let clusters = kmeans(&codes, k, seed, KMEANS_RESTARTS)?;
    let (chosen, per_pattern) = rank_patterns(bank, &clusters.labels, &codes)?;
    Ok(SelectionReport {
        chosen,
        chosen_indices: bank[chosen].clone(),
        per_pattern,
        kmeans_seed: seed,
        inertia: clusters.inertia,
    })
}
