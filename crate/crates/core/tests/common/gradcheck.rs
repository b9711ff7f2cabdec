//! Central finite-difference checks of layer backward passes.

use fwic::neural::{
    hard_sigmoid, mixed_loss, ConvTranspose2d, Conv2d, Dropout, InstanceNorm2d, Layer, MaxPool2d, Mode, Padding,
    Relu, SensingLayer, Tanh, Tensor, Upsample2d,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-3;
pub const SHAPES_PER_LAYER: usize = 20;
pub const H: f32 = 1e-2;

pub const LAYERS: [&str; 8] =
    ["conv2d", "conv-transpose2d", "max-pool2d", "upsample2d", "instance-norm2d", "relu", "tanh", "sensing"];

/// Normwise relative error over the sampled coordinates.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn coords(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    all.shuffle(rng);
    all.truncate(max);
    all
}

/// Check input and parameter gradients of `layer` for the scalar `sum(r * y)`.
pub fn check(layer: &mut dyn Layer, x: &Tensor, rng: &mut ChaCha8Rng) -> f64 {
    let y = layer.forward(x, Mode::Train).unwrap();
    let r = Tensor::randn(y.shape(), rng);
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&r).unwrap();
    let loss = |layer: &mut dyn Layer, x: &Tensor| layer.forward(x, Mode::Train).unwrap().dot(&r);

    let mut worst = 0.0f64;
    let idx = coords(rng, x.len(), 40);
    let mut num = Vec::new();
    let mut ana = Vec::new();
    for &i in &idx {
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        num.push((loss(layer, &xp) - loss(layer, &xm)) / (2.0 * H as f64));
        ana.push(dx.data()[i] as f64);
    }
    worst = worst.max(rel_err(&ana, &num));

    let n_params = layer.params().len();
    for k in 0..n_params {
        let (len, grads) = {
            let p = &layer.params()[k];
            (p.value.len(), p.grad.clone())
        };
        let idx = coords(rng, len, 40);
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for &i in &idx {
            let orig = layer.params()[k].value[i];
            layer.params_mut()[k].value[i] = orig + H;
            let lp = loss(layer, x);
            layer.params_mut()[k].value[i] = orig - H;
            let lm = loss(layer, x);
            layer.params_mut()[k].value[i] = orig;
            num.push((lp - lm) / (2.0 * H as f64));
            ana.push(grads[i] as f64);
        }
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

pub fn shape(rng: &mut ChaCha8Rng, c: usize) -> [usize; 4] {
    [rng.random_range(1..=2), c, rng.random_range(4..=9), rng.random_range(4..=9)]
}

/// Values separated by at least 0.05 so that no finite-difference step crosses a kink.
pub fn separated(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0 + 0.5) * 0.05).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v).unwrap()
}

// weights are binarized, so only the input path is differentiable here
struct SensingInput(SensingLayer);

impl Layer for SensingInput {
    fn forward(&mut self, x: &Tensor, m: Mode) -> fwic::Result<Tensor> {
        self.0.forward(x, m)
    }
    fn backward(&mut self, g: &Tensor) -> fwic::Result<Tensor> {
        self.0.backward(g)
    }
    fn kind(&self) -> &'static str {
        "sensing-input"
    }
}

fn make(name: &str, rng: &mut ChaCha8Rng) -> (Box<dyn Layer>, Tensor) {
    match name {
        "conv2d" => {
            let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let k = (rng.random_range(1..=5), rng.random_range(1..=5));
            let mut seed_rng = ChaCha8Rng::seed_from_u64(rng.random());
            let mut conv = Conv2d::new("c", ci, co, k, &mut seed_rng);
            if rng.random_bool(0.5) {
                conv = conv.with_stride((rng.random_range(1..=2), rng.random_range(1..=2)));
            }
            let mut s = shape(rng, ci);
            if rng.random_bool(0.3) {
                conv = conv.with_padding(Padding::default());
                s[2] = s[2].max(k.0);
                s[3] = s[3].max(k.1);
            } else {
                // same padding also covers planes smaller than the kernel
                s[2] = rng.random_range(1..=9);
                s[3] = rng.random_range(1..=9);
            }
            (Box::new(conv), Tensor::randn(s, rng))
        }
        "conv-transpose2d" => {
            let (ci, co, k) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3));
            let mut seed_rng = ChaCha8Rng::seed_from_u64(rng.random());
            (Box::new(ConvTranspose2d::new("t", ci, co, k, &mut seed_rng)), Tensor::randn(shape(rng, ci), rng))
        }
        "max-pool2d" => {
            let c = rng.random_range(1..=3);
            let x = separated(shape(rng, c), rng);
            (Box::new(MaxPool2d::new(rng.random_range(1..=3))), x)
        }
        "upsample2d" => {
            let c = rng.random_range(1..=3);
            let up = Upsample2d::new(rng.random_range(1..=3), rng.random_range(1..=3));
            (Box::new(up), Tensor::randn(shape(rng, c), rng))
        }
        "instance-norm2d" => {
            let c = rng.random_range(1..=3);
            let mut layer = InstanceNorm2d::new("n", c, rng.random_bool(0.5));
            for v in layer.gamma.value.iter_mut().chain(layer.beta.value.iter_mut()) {
                *v = rng.random_range(0.5..1.5);
            }
            (Box::new(layer), Tensor::randn(shape(rng, c), rng))
        }
        "relu" => {
            let c = rng.random_range(1..=3);
            (Box::new(Relu::new()), separated(shape(rng, c), rng))
        }
        "tanh" => {
            let c = rng.random_range(1..=3);
            (Box::new(Tanh::new()), Tensor::randn(shape(rng, c), rng))
        }
        "sensing" => {
            let n = rng.random_range(2..=6);
            let w: Vec<f32> = (0..n).map(|_| rng.random_range(-1.5f32..1.5)).collect();
            let layer = SensingLayer::from_weights(w, 1.0 / n as f64, 1.0).unwrap();
            (Box::new(SensingInput(layer)), Tensor::randn(shape(rng, n), rng))
        }
        other => panic!("unknown layer {other}"),
    }
}

/// Worst relative error of `name` over [`SHAPES_PER_LAYER`] random shapes.
pub fn layer_worst(name: &str) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    let mut worst = 0.0f64;
    for _ in 0..SHAPES_PER_LAYER {
        let (mut layer, x) = make(name, &mut rng);
        worst = worst.max(check(layer.as_mut(), &x, &mut rng));
    }
    worst
}

/// Dropout redraws its mask on every call, so each evaluation uses a fresh
/// layer with the same seed.
pub fn dropout_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..SHAPES_PER_LAYER {
        let seed: u64 = rng.random();
        let p = rng.random_range(0.1f32..0.6);
        let x = Tensor::randn(shape(&mut rng, 2), &mut rng);
        let mut layer = Dropout::new(p, seed).unwrap();
        let y = layer.forward(&x, Mode::Train).unwrap();
        let r = Tensor::randn(y.shape(), &mut rng);
        let dx = layer.backward(&r).unwrap();
        let mut num = Vec::new();
        let mut ana = Vec::new();
        for i in coords(&mut rng, x.len(), 40) {
            let f = |d: f32| {
                let mut xx = x.clone();
                xx.data_mut()[i] += d;
                Dropout::new(p, seed).unwrap().forward(&xx, Mode::Train).unwrap().dot(&r)
            };
            num.push((f(H) - f(-H)) / (2.0 * H as f64));
            ana.push(dx.data()[i] as f64);
        }
        worst = worst.max(rel_err(&ana, &num));
    }
    worst
}

/// Sensing gate -> conv -> MAE + rate loss. Weight gradients are compared
/// with finite differences of the surrogate in which gate `i` is
/// `phi(w0_i) + h(w_i) - h(w0_i)` and the rate is the mean gate.
pub fn ste_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..SHAPES_PER_LAYER {
        let n_shots = rng.random_range(3..=8);
        let w0: Vec<f32> = (0..n_shots).map(|_| rng.random_range(-0.9f32..0.9)).collect();
        let rate = rng.random_range(1..=n_shots) as f64 / n_shots as f64;
        let mu = rng.random_range(0.5..4.0);
        let [b, _, h, w] = shape(&mut rng, n_shots);
        let x = Tensor::randn([b, n_shots, h, w], &mut rng);
        let mut conv_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let mut conv = Conv2d::new("c", n_shots, 1, (3, 3), &mut conv_rng);
        // keep every residual far from zero
        let target = Tensor::filled([b, 1, h, w], 50.0);

        let mut sensing = SensingLayer::from_weights(w0.clone(), rate, mu).unwrap();
        let gated = sensing.forward(&x, Mode::Train).unwrap();
        let pred = conv.forward(&gated, Mode::Train).unwrap();
        let l = mixed_loss(&pred, &target, sensing.rate(), rate, mu).unwrap();
        let dg = conv.backward(&l.d_pred).unwrap();
        sensing.weights.zero_grad();
        sensing.backward(&dg).unwrap();
        sensing.backward_rate(l.d_rate);
        let analytic: Vec<f64> = sensing.weights.grad.iter().map(|&g| g as f64).collect();

        let surrogate = |w: &[f32], conv: &mut Conv2d| -> f64 {
            let gates: Vec<f32> = w
                .iter()
                .zip(&w0)
                .map(|(&wi, &w0i)| (w0i > 0.0) as i32 as f32 + hard_sigmoid(wi) - hard_sigmoid(w0i))
                .collect();
            let mut xg = x.clone();
            for s in 0..b {
                for (c, &g) in gates.iter().enumerate() {
                    xg.plane_mut(s, c).iter_mut().for_each(|v| *v *= g);
                }
            }
            let pred = conv.forward(&xg, Mode::Train).unwrap();
            let r_hat = gates.iter().map(|&g| g as f64).sum::<f64>() / n_shots as f64;
            mixed_loss(&pred, &target, r_hat, rate, mu).unwrap().loss
        };
        let numeric: Vec<f64> = (0..n_shots)
            .map(|i| {
                let mut wp = w0.clone();
                wp[i] += H;
                let mut wm = w0.clone();
                wm[i] -= H;
                (surrogate(&wp, &mut conv) - surrogate(&wm, &mut conv)) / (2.0 * H as f64)
            })
            .collect();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}
