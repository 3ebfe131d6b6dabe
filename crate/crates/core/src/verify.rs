//! Built-in self checks.
//!
//! Three suites: central-difference gradient checks of every differentiable
//! op, comparisons against direct reference implementations, and
//! persistence round trips. The `verify` command and the acceptance tests
//! both run these.

use std::path::Path;

use image::{GrayImage, Luma};
use serde::Serialize;

use crate::data::{
    decode_blob, decode_image, encode_blob, encode_image, load_checkpoint, save_checkpoint,
    Checkpoint, CheckpointMeta, Label,
};
use crate::error::{Error, Result};
use crate::eval::{auc, roc_curve, Scored};
use crate::models::{
    build_modified_vggnet, Activation, Architecture, ImageShape, Init, LayerKind, LayerSpec,
    NetworkSpec, ParamStore, Role,
};
use crate::nn::{self, BatchNormConfig, BatchNormState, Conv2dParams, ConvConfig, Mode};
use crate::rng::Stream;
use crate::tensor::{backward, Tensor};
use crate::train::{adam_step, AdamConfig, AdamState};

/// Number of random gradient cases in the full suite.
pub const GRAD_CASES: usize = 200;
/// Bound on `‖analytic - numeric‖ / max(‖analytic‖, ‖numeric‖)`.
pub const GRAD_TOL: f64 = 1e-4;
const GRAD_STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Gradient,
    Oracle,
    Persistence,
}

/// Outcome of one named check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: Suite, name: &str, passed: bool, detail: String) -> Self {
        Check {
            suite,
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(suite: Suite, name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Check::new(suite, name, passed, detail),
            Err(e) => Check::new(suite, name, false, format!("error: {e}")),
        }
    }
}

/// Every suite; `scratch` receives temporary files.
pub fn run_all(seed: u64, scratch: &Path) -> Vec<Check> {
    let mut out = gradient_suite(seed, GRAD_CASES);
    out.extend(oracle_suite(seed));
    out.extend(persistence_suite(seed, scratch));
    out
}

fn uniform(s: &mut Stream, shape: &[usize], lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::from_vec((0..n).map(|_| s.uniform(lo, hi)).collect(), shape)
}

/// Magnitudes in [0.1, 1] with random sign, keeping clear of kinks at 0.
fn off_zero(s: &mut Stream, shape: &[usize]) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = s.uniform(0.1, 1.0);
            if s.bernoulli(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(v, shape)
}

/// Distinct values spaced far apart relative to the difference step.
fn distinct(s: &mut Stream, shape: &[usize]) -> Result<Tensor<f64>> {
    let n: usize = shape.iter().product();
    let perm = s.permutation(n);
    let v = perm
        .iter()
        .map(|&p| (p as f64 + 0.5) / n as f64 * 2.0 - 1.0)
        .collect();
    Tensor::from_vec(v, shape)
}

fn between(s: &mut Stream, lo: usize, hi: usize) -> usize {
    lo + s.below(hi - lo + 1)
}

type Op = Box<dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>>;

struct GradCase {
    inputs: Vec<Tensor<f64>>,
    op: Op,
    /// Coordinates probed per input; `None` probes all of them.
    probe: Option<usize>,
}

const KINDS: [&str; 20] = [
    "add",
    "sub",
    "mul",
    "relu",
    "leaky_relu",
    "tanh",
    "sigmoid",
    "neg_scale_shift",
    "mean",
    "reshape_flatten",
    "matmul",
    "dense",
    "conv2d",
    "conv_transpose2d",
    "maxpool2d",
    "batchnorm2d_train",
    "batchnorm2d_eval",
    "bce_loss",
    "classifier_16",
    "vggnet",
];

fn small_shape(s: &mut Stream) -> Vec<usize> {
    vec![between(s, 1, 4), between(s, 1, 5)]
}

fn small_uniform(s: &mut Stream, lo: f64, hi: f64) -> Result<Tensor<f64>> {
    let shape = small_shape(s);
    uniform(s, &shape, lo, hi)
}

fn small_off_zero(s: &mut Stream) -> Result<Tensor<f64>> {
    let shape = small_shape(s);
    off_zero(s, &shape)
}

fn bn_case(s: &mut Stream, mode: Mode) -> Result<(Vec<Tensor<f64>>, Op)> {
    let c = between(s, 1, 3);
    let shape = [between(s, 2, 3), c, between(s, 2, 4), between(s, 2, 4)];
    let x = uniform(s, &shape, -2.0, 2.0)?;
    let gamma = uniform(s, &[c], 0.5, 1.5)?;
    let beta = uniform(s, &[c], -0.5, 0.5)?;
    let rm = uniform(s, &[c], -0.5, 0.5)?;
    let rv = uniform(s, &[c], 0.5, 2.0)?;
    let op: Op = Box::new(move |xs| {
        let mut st = BatchNormState {
            gamma: xs[1].clone(),
            beta: xs[2].clone(),
            running_mean: rm.clone(),
            running_var: rv.clone(),
            config: BatchNormConfig::default(),
        };
        nn::batchnorm2d(&xs[0], &mut st, mode)
    });
    Ok((vec![x, gamma, beta], op))
}

fn conv_geometry(s: &mut Stream) -> (usize, usize, usize, usize, usize, ConvConfig) {
    let k = between(s, 1, 3);
    let cfg = ConvConfig {
        stride: between(s, 1, 2),
        padding: between(s, 0, k - 1),
    };
    let (c, oc) = (between(s, 1, 3), between(s, 1, 3));
    let (h, w) = (between(s, k.max(3), 7), between(s, k.max(3), 7));
    (c, oc, k, h, w, cfg)
}

/// Conv, batchnorm, pooling and dense layers with a sigmoid head on 3x16x16.
fn small_classifier(seed: u64) -> Result<NetworkSpec<f64>> {
    let conv = |in_ch, out_ch| LayerKind::Conv2d {
        in_ch,
        out_ch,
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    let arch = Architecture {
        role: Role::Classifier,
        input: vec![3, 16, 16],
        layers: vec![
            LayerSpec::new(conv(3, 4), Activation::Identity),
            LayerSpec::new(
                LayerKind::BatchNorm2d {
                    channels: 4,
                    momentum: 0.1,
                    eps: 1e-5,
                },
                Activation::Relu,
            ),
            LayerSpec::new(LayerKind::MaxPool2d, Activation::Identity),
            LayerSpec::new(conv(4, 6), Activation::Relu),
            LayerSpec::new(LayerKind::MaxPool2d, Activation::Identity),
            LayerSpec::new(LayerKind::Flatten, Activation::Identity),
            LayerSpec::new(
                LayerKind::Dense {
                    in_features: 96,
                    out_features: 8,
                },
                Activation::Relu,
            ),
            LayerSpec::new(
                LayerKind::Dense {
                    in_features: 8,
                    out_features: 1,
                },
                Activation::Sigmoid,
            ),
        ],
        init: Init::He,
    };
    NetworkSpec::initialize(arch, seed)
}

/// Smallest distance from a kink in a train-mode forward pass: the nearest
/// ReLU input to zero, or the nearest runner-up to a positive max-pool winner.
fn kink_margin(net: &NetworkSpec<f64>, x: &Tensor<f64>) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for (k, layer) in net.arch.layers.iter().enumerate() {
        let (upto, relu) = match (&layer.kind, layer.activation) {
            (_, Activation::Relu | Activation::LeakyRelu { .. }) => (k + 1, true),
            (LayerKind::MaxPool2d, _) => (k, false),
            _ => continue,
        };
        let mut arch = net.arch.clone();
        arch.layers.truncate(upto);
        if relu {
            arch.layers[k].activation = Activation::Identity;
        }
        let mut prefix = NetworkSpec {
            arch,
            store: net.store.clone(),
        };
        let y = prefix.forward_with(&x.detach(), Mode::Train, false)?;
        if relu {
            margin = y.data().iter().fold(margin, |m, v| m.min(v.abs()));
            continue;
        }
        let &[n, c, h, w] = y.shape() else { continue };
        let d = y.data();
        for plane in 0..n * c {
            for i in (0..h - h % 2).step_by(2) {
                for j in (0..w - w % 2).step_by(2) {
                    let at = |di: usize, dj: usize| d[(plane * h + i + di) * w + j + dj];
                    let mut win = [at(0, 0), at(0, 1), at(1, 0), at(1, 1)];
                    win.sort_by(|a, b| b.total_cmp(a));
                    if win[0] > 0.0 {
                        margin = margin.min(win[0] - win[1]);
                    }
                }
            }
        }
    }
    Ok(margin)
}

/// Distance to the nearest kink below which an input batch is redrawn.
const KINK_MARGIN: f64 = 1e-5;

/// Whole-network case: BCE of a train-mode forward pass against fixed labels,
/// differentiated with respect to the batch and every parameter. Networks
/// and batches are redrawn until no ReLU or max-pool decision lies near a
/// kink and the loss depends on the inputs at all.
fn network_case(
    s: &mut Stream,
    build: impl Fn(u64) -> Result<NetworkSpec<f64>>,
    batch: &[usize],
) -> Result<(Vec<Tensor<f64>>, Op)> {
    let target = Tensor::from_vec(vec![1.0, 0.0], &[2, 1])?;
    for _ in 0..100 {
        let net = build(s.next_u64())?;
        let x = uniform(s, batch, -1.0, 1.0)?;
        if kink_margin(&net, &x)? < KINK_MARGIN {
            continue;
        }
        let names: Vec<String> = net.store.params.keys().cloned().collect();
        let mut inputs = vec![x];
        inputs.extend(net.store.params.values().cloned());
        let (template, target) = (net.clone(), target.clone());
        let op: Op = Box::new(move |xs| {
            let mut net = template.clone();
            for (name, t) in names.iter().zip(&xs[1..]) {
                net.store.params.insert(name.clone(), t.clone());
            }
            let p = net.forward(&xs[0], Mode::Train)?;
            nn::bce_loss(&p, &target)
        });
        let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.with_requires_grad(true)).collect();
        let grads = backward(&op(&leaves)?)?;
        let dead = leaves.iter().all(|l| {
            grads
                .get(l)
                .is_none_or(|g| g.data().iter().all(|&v| v == 0.0))
        });
        if !dead {
            return Ok((inputs, op));
        }
    }
    Err(Error::InvalidArgument(
        "no network draw clear of kinks".into(),
    ))
}

fn grad_case(index: usize, s: &mut Stream) -> Result<GradCase> {
    let kind = KINDS[index % KINDS.len()];
    let mut probe = None;
    let (inputs, op): (Vec<Tensor<f64>>, Op) = match kind {
        "add" | "sub" | "mul" => {
            let shape = small_shape(s);
            let xs = vec![
                uniform(s, &shape, -2.0, 2.0)?,
                uniform(s, &shape, -2.0, 2.0)?,
            ];
            let op: Op = match kind {
                "add" => Box::new(|xs| xs[0].add(&xs[1])),
                "sub" => Box::new(|xs| xs[0].sub(&xs[1])),
                _ => Box::new(|xs| xs[0].mul(&xs[1])),
            };
            (xs, op)
        }
        "relu" => (vec![small_off_zero(s)?], Box::new(|xs| Ok(xs[0].relu()))),
        "leaky_relu" => (
            vec![small_off_zero(s)?],
            Box::new(|xs| Ok(xs[0].leaky_relu(0.2))),
        ),
        "tanh" => (
            vec![small_uniform(s, -2.0, 2.0)?],
            Box::new(|xs| Ok(xs[0].tanh())),
        ),
        "sigmoid" => (
            vec![small_uniform(s, -3.0, 3.0)?],
            Box::new(|xs| Ok(xs[0].sigmoid())),
        ),
        "neg_scale_shift" => (
            vec![small_uniform(s, -2.0, 2.0)?],
            Box::new(|xs| Ok(xs[0].neg().scale(1.7).add_scalar(0.3))),
        ),
        "mean" => (
            vec![small_uniform(s, -2.0, 2.0)?],
            Box::new(|xs| Ok(xs[0].mul(&xs[0])?.mean())),
        ),
        "reshape_flatten" => {
            let shape = [between(s, 1, 3), between(s, 1, 3), between(s, 1, 4)];
            let x = uniform(s, &shape, -2.0, 2.0)?;
            let op: Op = Box::new(move |xs| {
                let r = xs[0].reshape(&[shape[0], shape[2], shape[1]])?;
                r.tanh().flatten()
            });
            (vec![x], op)
        }
        "matmul" => {
            let (m, k, n) = (between(s, 1, 5), between(s, 1, 5), between(s, 1, 5));
            let xs = vec![
                uniform(s, &[m, k], -1.0, 1.0)?,
                uniform(s, &[k, n], -1.0, 1.0)?,
            ];
            (xs, Box::new(|xs| xs[0].matmul(&xs[1])))
        }
        "dense" => {
            let (n, k, m) = (between(s, 1, 4), between(s, 1, 6), between(s, 1, 4));
            let xs = vec![
                uniform(s, &[n, k], -1.0, 1.0)?,
                uniform(s, &[k, m], -1.0, 1.0)?,
                uniform(s, &[m], -1.0, 1.0)?,
            ];
            (xs, Box::new(|xs| nn::dense(&xs[0], &xs[1], &xs[2])))
        }
        "conv2d" => {
            let (c, oc, k, h, w, cfg) = conv_geometry(s);
            let n = between(s, 1, 2);
            let xs = vec![
                uniform(s, &[n, c, h, w], -1.0, 1.0)?,
                uniform(s, &[oc, c, k, k], -1.0, 1.0)?,
                uniform(s, &[oc], -1.0, 1.0)?,
            ];
            let op: Op = Box::new(move |xs| {
                nn::conv2d(
                    &xs[0],
                    &Conv2dParams {
                        weight: xs[1].clone(),
                        bias: xs[2].clone(),
                        config: cfg,
                    },
                )
            });
            (xs, op)
        }
        "conv_transpose2d" => loop {
            let k = between(s, 2, 4);
            let cfg = ConvConfig {
                stride: between(s, 1, 2),
                padding: between(s, 0, 1),
            };
            let (c, oc) = (between(s, 1, 3), between(s, 1, 3));
            let shape = [between(s, 1, 2), c, between(s, 2, 4), between(s, 2, 4)];
            let xs = vec![
                uniform(s, &shape, -1.0, 1.0)?,
                uniform(s, &[c, oc, k, k], -1.0, 1.0)?,
            ];
            if nn::conv_transpose2d(&xs[0], &xs[1], cfg).is_ok() {
                let op: Op = Box::new(move |xs| nn::conv_transpose2d(&xs[0], &xs[1], cfg));
                break (xs, op);
            }
        },
        "maxpool2d" => {
            let shape = [
                between(s, 1, 2),
                between(s, 1, 3),
                2 * between(s, 1, 3),
                2 * between(s, 1, 3),
            ];
            (
                vec![distinct(s, &shape)?],
                Box::new(|xs| nn::maxpool2d(&xs[0])),
            )
        }
        "batchnorm2d_train" => bn_case(s, Mode::Train)?,
        "batchnorm2d_eval" => bn_case(s, Mode::Eval)?,
        "bce_loss" => {
            let shape = small_shape(s);
            let p = uniform(s, &shape, 0.05, 0.95)?;
            let n = p.numel();
            let t = Tensor::from_vec((0..n).map(|_| s.uniform(0.0, 1.0)).collect(), &shape)?;
            (vec![p], Box::new(move |xs| nn::bce_loss(&xs[0], &t)))
        }
        "classifier_16" => {
            probe = Some(40);
            network_case(s, small_classifier, &[2, 3, 16, 16])?
        }
        "vggnet" => {
            // Smallest input the classifier accepts, at a narrow width.
            let build =
                |seed| build_modified_vggnet(ImageShape::square(3, 32), 1.0 / 16.0, 8, seed);
            probe = Some(6);
            network_case(s, build, &[2, 3, 32, 32])?
        }
        _ => unreachable!("unknown gradient case {kind}"),
    };
    Ok(GradCase { inputs, op, probe })
}

/// Relative error between autodiff and central differences for one case.
fn grad_error(case: &GradCase, s: &mut Stream) -> Result<f64> {
    let first = (case.op)(&case.inputs)?;
    let weights = uniform(s, first.shape(), -1.0, 1.0)?;
    let objective =
        |xs: &[Tensor<f64>]| -> Result<Tensor<f64>> { Ok((case.op)(xs)?.mul(&weights)?.sum()) };

    let leaves: Vec<Tensor<f64>> = case
        .inputs
        .iter()
        .map(|t| t.with_requires_grad(true))
        .collect();
    let grads = backward(&objective(&leaves)?)?;

    let (mut diff2, mut a2, mut n2) = (0.0f64, 0.0f64, 0.0f64);
    let mut xs: Vec<Tensor<f64>> = case.inputs.iter().map(Tensor::detach).collect();
    for i in 0..xs.len() {
        let numel = xs[i].numel();
        let coords: Vec<usize> = match case.probe {
            Some(k) if k < numel => (0..k).map(|_| s.below(numel)).collect(),
            _ => (0..numel).collect(),
        };
        let base = xs[i].to_vec();
        let shape = xs[i].shape().to_vec();
        for j in coords {
            let mut eval_at = |v: f64| -> Result<f64> {
                let mut d = base.clone();
                d[j] = v;
                xs[i] = Tensor::from_vec(d, &shape)?;
                objective(&xs)?.item()
            };
            let up = eval_at(base[j] + GRAD_STEP)?;
            let down = eval_at(base[j] - GRAD_STEP)?;
            let numeric = (up - down) / (2.0 * GRAD_STEP);
            let analytic = grads.get(&leaves[i]).map_or(0.0, |g| g.data()[j]);
            diff2 += (analytic - numeric).powi(2);
            a2 += analytic * analytic;
            n2 += numeric * numeric;
        }
        xs[i] = Tensor::from_vec(base, &shape)?;
    }
    let scale = a2.sqrt().max(n2.sqrt());
    Ok(if scale < 1e-12 {
        diff2.sqrt()
    } else {
        diff2.sqrt() / scale
    })
}

/// `cases` random gradient checks cycling through every op, reported per op.
pub fn gradient_suite(seed: u64, cases: usize) -> Vec<Check> {
    let mut per_kind: Vec<(usize, usize, f64, Option<String>)> =
        vec![(0, 0, 0.0, None); KINDS.len()];
    for i in 0..cases {
        let mut s = Stream::derive(seed, "gradient-case", i as u64);
        let slot = &mut per_kind[i % KINDS.len()];
        slot.0 += 1;
        match grad_case(i, &mut s).and_then(|c| grad_error(&c, &mut s)) {
            Ok(e) => {
                slot.2 = slot.2.max(e);
                if e < GRAD_TOL {
                    slot.1 += 1;
                }
            }
            Err(e) => slot.3 = Some(format!("case {i}: {e}")),
        }
    }
    let mut out: Vec<Check> = KINDS
        .iter()
        .zip(&per_kind)
        .filter(|(_, k)| k.0 > 0)
        .map(|(name, &(n, ok, worst, ref err))| {
            let mut detail = format!("{ok}/{n} cases, worst relative error {worst:.2e}");
            if let Some(e) = err {
                detail.push_str(&format!("; {e}"));
            }
            Check::new(Suite::Gradient, name, ok == n && err.is_none(), detail)
        })
        .collect();
    let total_ok: usize = per_kind.iter().map(|k| k.1).sum();
    let worst = per_kind.iter().map(|k| k.2).fold(0.0, f64::max);
    out.push(Check::new(
        Suite::Gradient,
        "all",
        total_ok == cases,
        format!("{total_ok}/{cases} cases below {GRAD_TOL:e}, worst {worst:.2e}"),
    ));
    out
}

/// Direct nested-loop convolution, accumulating taps in channel, row,
/// column order from zero and adding the bias last.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, cfg: ConvConfig) -> Result<Tensor> {
    let (&[n, c, h, wd], &[oc, _, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(Error::InvalidShape("naive_conv2d expects rank 4".into()));
    };
    let oh = nn::conv_out_len(h, kh, cfg.stride, cfg.padding)?;
    let ow = nn::conv_out_len(wd, kw, cfg.stride, cfg.padding)?;
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0f32; n * oc * oh * ow];
    for s in 0..n {
        for o in 0..oc {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0f32;
                    for ch in 0..c {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let r = (i * cfg.stride + ki) as isize - cfg.padding as isize;
                                let q = (j * cfg.stride + kj) as isize - cfg.padding as isize;
                                if r < 0 || q < 0 || r >= h as isize || q >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((s * c + ch) * h + r as usize) * wd + q as usize];
                                acc += wdat[((o * c + ch) * kh + ki) * kw + kj] * xv;
                            }
                        }
                    }
                    out[((s * oc + o) * oh + i) * ow + j] = acc + bd[o];
                }
            }
        }
    }
    Tensor::from_vec(out, &[n, oc, oh, ow])
}

fn uniform32(s: &mut Stream, shape: &[usize]) -> Result<Tensor> {
    Ok(uniform(s, shape, -1.0, 1.0)?.cast())
}

fn check_conv_exact(seed: u64) -> Result<(bool, String)> {
    let mut outputs = 0;
    let mut mismatches = 0;
    for g in 0..40u64 {
        let mut s = Stream::derive(seed, "oracle-conv", g);
        let k = between(&mut s, 1, 5);
        let cfg = ConvConfig {
            stride: between(&mut s, 1, 3),
            padding: between(&mut s, 0, k - 1),
        };
        let (c, oc) = (between(&mut s, 1, 8), between(&mut s, 1, 40));
        let (h, w) = (between(&mut s, k, 20), between(&mut s, k, 20));
        let n = between(&mut s, 1, 3);
        let x = uniform32(&mut s, &[n, c, h, w])?;
        let wt = uniform32(&mut s, &[oc, c, k, k])?;
        let b = uniform32(&mut s, &[oc])?;
        let fast = nn::conv2d(
            &x,
            &Conv2dParams {
                weight: wt.clone(),
                bias: b.clone(),
                config: cfg,
            },
        )?;
        let slow = naive_conv2d(&x, &wt, &b, cfg)?;
        outputs += fast.numel();
        mismatches += fast
            .data()
            .iter()
            .zip(slow.data())
            .filter(|(a, b)| a.to_bits() != b.to_bits())
            .count();
    }
    Ok((
        mismatches == 0,
        format!("40 geometries, {mismatches} of {outputs} outputs differ bitwise"),
    ))
}

fn check_conv_transpose_adjoint(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for g in 0..40u64 {
        let mut s = Stream::derive(seed, "oracle-convt", g);
        let k = between(&mut s, 1, 5);
        let cfg = ConvConfig {
            stride: between(&mut s, 1, 3),
            padding: between(&mut s, 0, k - 1),
        };
        let (c, oc) = (between(&mut s, 1, 6), between(&mut s, 1, 6));
        let (oh, ow) = (between(&mut s, 1, 8), between(&mut s, 1, 8));
        let n = between(&mut s, 1, 3);
        // Input extent whose forward conv lands exactly on oh x ow.
        let extent = |o: usize| ((o - 1) * cfg.stride + k) as isize - 2 * cfg.padding as isize;
        let (h, w) = (extent(oh), extent(ow));
        if h <= 0 || w <= 0 {
            continue;
        }
        let (h, w) = (h as usize, w as usize);
        let wt = uniform32(&mut s, &[oc, c, k, k])?;
        let y = uniform32(&mut s, &[n, oc, oh, ow])?;
        let x = Tensor::<f32>::zeros(&[n, c, h, w])?.with_requires_grad(true);
        let fwd = nn::conv2d(
            &x,
            &Conv2dParams {
                weight: wt.clone(),
                bias: Tensor::zeros(&[oc])?,
                config: cfg,
            },
        )?;
        let adj = backward(&fwd.mul(&y)?.sum())?;
        let adj = adj
            .get(&x)
            .ok_or_else(|| Error::InconsistentState("no input gradient".into()))?;
        let t = nn::conv_transpose2d(&y, &wt, cfg)?;
        if t.shape() != adj.shape() {
            return Ok((
                false,
                format!("shape {:?} vs adjoint {:?}", t.shape(), adj.shape()),
            ));
        }
        for (a, b) in t.data().iter().zip(adj.data()) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    Ok((worst < 1e-5, format!("max abs difference {worst:.2e}")))
}

fn check_batchnorm(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for g in 0..20u64 {
        let mut s = Stream::derive(seed, "oracle-bn", g);
        let (n, c, h, w) = (
            between(&mut s, 2, 6),
            between(&mut s, 1, 6),
            between(&mut s, 1, 8),
            between(&mut s, 1, 8),
        );
        let x: Tensor = uniform(&mut s, &[n, c, h, w], -3.0, 5.0)?.cast();
        let cfg = BatchNormConfig::default();
        let mut st = BatchNormState::<f32>::new(c, cfg)?;
        st.gamma = uniform32(&mut s, &[c])?;
        st.beta = uniform32(&mut s, &[c])?;
        let y = nn::batchnorm2d(&x, &mut st, Mode::Train)?;
        let plane = h * w;
        let m = (n * plane) as f64;
        for ch in 0..c {
            let vals: Vec<f64> = (0..n)
                .flat_map(|i| {
                    let off = (i * c + ch) * plane;
                    x.data()[off..off + plane].iter().map(|&v| v as f64)
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / m;
            let ss: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
            let var = ss / m;
            let unbiased = ss / (m - 1.0);
            let (gm, bt) = (st.gamma.data()[ch] as f64, st.beta.data()[ch] as f64);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for p in 0..plane {
                    let want = gm * (x.data()[off + p] as f64 - mean) / (var + cfg.eps).sqrt() + bt;
                    worst = worst.max((y.data()[off + p] as f64 - want).abs());
                }
            }
            let rm = cfg.momentum * mean;
            let rv = (1.0 - cfg.momentum) + cfg.momentum * unbiased;
            worst = worst.max((st.running_mean.data()[ch] as f64 - rm).abs());
            worst = worst.max((st.running_var.data()[ch] as f64 - rv).abs() / rv.max(1.0));
        }
    }
    Ok((worst < 1e-6, format!("max abs difference {worst:.2e}")))
}

/// Probability that a random bona fide sample outscores a random attack,
/// ties counted as one half.
pub fn mann_whitney_auc(set: &[Scored]) -> f64 {
    let pos: Vec<f64> = set
        .iter()
        .filter(|s| s.label == Label::BonaFide)
        .map(|s| s.score)
        .collect();
    let neg: Vec<f64> = set
        .iter()
        .filter(|s| s.label == Label::Attack)
        .map(|s| s.score)
        .collect();
    let mut wins = 0.0;
    for &p in &pos {
        for &q in &neg {
            wins += if p > q {
                1.0
            } else if p == q {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn check_auc(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for g in 0..500u64 {
        let mut s = Stream::derive(seed, "oracle-auc", g);
        let n = between(&mut s, 2, 200);
        let levels = between(&mut s, 2, 50) as f64;
        let quantize = s.bernoulli(0.5);
        let mut set: Vec<Scored> = (0..n)
            .map(|_| {
                let label = if s.bernoulli(0.5) {
                    Label::Attack
                } else {
                    Label::BonaFide
                };
                let shift = if label == Label::BonaFide { 0.2 } else { 0.0 };
                let mut v = (s.uniform(0.0, 0.8) + shift).min(1.0);
                if quantize {
                    v = (v * levels).round() / levels;
                }
                Scored::new(v, label)
            })
            .collect();
        set[0].label = Label::Attack;
        set[1].label = Label::BonaFide;
        let a = auc(&roc_curve(&set)?)?;
        worst = worst.max((a - mann_whitney_auc(&set)).abs());
    }
    Ok((
        worst < 1e-9,
        format!("500 sets, max abs difference {worst:.2e}"),
    ))
}

fn check_adam(seed: u64) -> Result<(bool, String)> {
    let cfg = AdamConfig {
        lr: 1e-2,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut s = Stream::derive(seed, "oracle-adam", 0);
    let mut store = ParamStore::<f64>::default();
    for (name, n) in [("a", 5usize), ("b", 3)] {
        store.params.insert(
            name.into(),
            uniform(&mut s, &[n], -1.0, 1.0)?.with_requires_grad(true),
        );
    }
    let mut reference: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = store
        .params
        .values()
        .map(|p| (p.to_vec(), vec![0.0; p.numel()], vec![0.0; p.numel()]))
        .collect();
    let mut state = AdamState::new(&store)?;
    let mut worst = 0.0f64;
    for step in 1..=100i32 {
        let gs: Vec<Tensor<f64>> = store
            .params
            .values()
            .map(|p| uniform(&mut s, p.shape(), -1.0, 1.0))
            .collect::<Result<_>>()?;
        let mut loss = Tensor::<f64>::scalar(0.0);
        for (p, g) in store.params.values().zip(&gs) {
            loss = loss.add(&p.mul(g)?.sum())?;
        }
        let grads = backward(&loss)?;
        adam_step(&mut store, &grads, &mut state, &cfg)?;
        for ((p, m, v), g) in reference.iter_mut().zip(&gs) {
            for j in 0..p.len() {
                let gj = g.data()[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mh = m[j] / (1.0 - cfg.beta1.powi(step));
                let vh = v[j] / (1.0 - cfg.beta2.powi(step));
                p[j] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
            }
        }
        for (p, (want, _, _)) in store.params.values().zip(&reference) {
            for (a, b) in p.data().iter().zip(want) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok((
        worst < 1e-10,
        format!("100 steps, max abs difference {worst:.2e}"),
    ))
}

pub fn oracle_suite(seed: u64) -> Vec<Check> {
    vec![
        Check::from_result(
            Suite::Oracle,
            "conv2d_vs_nested_loops",
            check_conv_exact(seed),
        ),
        Check::from_result(
            Suite::Oracle,
            "conv_transpose2d_vs_adjoint",
            check_conv_transpose_adjoint(seed),
        ),
        Check::from_result(
            Suite::Oracle,
            "batchnorm2d_vs_two_pass",
            check_batchnorm(seed),
        ),
        Check::from_result(Suite::Oracle, "auc_vs_mann_whitney", check_auc(seed)),
        Check::from_result(Suite::Oracle, "adam_vs_scalar_reference", check_adam(seed)),
    ]
}

fn check_blobs(seed: u64) -> Result<(bool, String)> {
    let mut s = Stream::derive(seed, "persist-blob", 0);
    let mut count = 0;
    for rank in 1..=4usize {
        let shape: Vec<usize> = (0..rank).map(|_| between(&mut s, 1, 5)).collect();
        let t64 = uniform(&mut s, &shape, -1e3, 1e3)?;
        let t32: Tensor = t64.cast();
        let (back64, used64) = decode_blob::<f64>(&encode_blob(&t64))?;
        let (back32, used32) = decode_blob::<f32>(&encode_blob(&t32))?;
        if !back64.bitwise_eq(&t64) || !back32.bitwise_eq(&t32) {
            return Ok((false, format!("rank {rank} tensor changed")));
        }
        if used64 != encode_blob(&t64).len() || used32 != encode_blob(&t32).len() {
            return Ok((false, "blob length mismatch".into()));
        }
        count += 2;
    }
    let special32 = [
        f32::NAN,
        -f32::NAN,
        f32::from_bits(0x7fc0_1234),
        -0.0,
        f32::INFINITY,
        f32::MIN_POSITIVE / 8.0,
    ];
    let special64 = [
        f64::NAN,
        f64::from_bits(0xfff8_0000_dead_beef),
        -0.0,
        f64::NEG_INFINITY,
        5e-324,
    ];
    let t32 = Tensor::from_vec(special32.to_vec(), &[2, 3])?;
    let t64 = Tensor::from_vec(special64.to_vec(), &[5])?;
    if !decode_blob::<f32>(&encode_blob(&t32))?.0.bitwise_eq(&t32)
        || !decode_blob::<f64>(&encode_blob(&t64))?.0.bitwise_eq(&t64)
    {
        return Ok((false, "special values changed".into()));
    }
    count += 2;
    Ok((
        true,
        format!("{count} tensors bit-identical, NaN payloads and signed zeros included"),
    ))
}

fn sample_checkpoint(seed: u64) -> Result<Checkpoint> {
    let mut net = build_modified_vggnet::<f32>(ImageShape::square(1, 32), 1.0 / 16.0, 8, seed)?;
    let mut adam = AdamState::new(&net.store)?;
    let x = Tensor::create(
        &[2, 1, 32, 32],
        crate::Fill::Uniform { lo: -1.0, hi: 1.0 },
        seed,
    )?;
    let loss = net.forward(&x, Mode::Train)?.mean();
    let grads = backward(&loss)?;
    adam_step(&mut net.store, &grads, &mut adam, &AdamConfig::classifier())?;
    let meta = CheckpointMeta {
        kind: "verify".into(),
        seed,
        iteration: 1,
        ..CheckpointMeta::default()
    };
    Ok(Checkpoint::new(net, Some(adam), meta))
}

fn check_checkpoint(seed: u64, scratch: &Path) -> Result<(bool, String)> {
    let ck = sample_checkpoint(seed)?;
    let path = scratch.join("verify.ckpt");
    save_checkpoint(&ck, &path)?;
    let back: Checkpoint = load_checkpoint(&path)?;
    let same = back.network.store.bitwise_eq(&ck.network.store)
        && back.network.arch == ck.network.arch
        && back.meta == ck.meta
        && match (&back.adam, &ck.adam) {
            (Some(a), Some(b)) => a.bitwise_eq(b),
            _ => false,
        };
    let stable = back.to_bytes()? == std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let _ = std::fs::remove_file(&path);
    Ok((
        same && stable,
        format!("tensors equal: {same}, re-serialization identical: {stable}"),
    ))
}

fn check_png(scratch: &Path) -> Result<(bool, String)> {
    let path = scratch.join("verify-endpoints.png");
    let mut img = GrayImage::new(3, 1);
    for (x, v) in [0u8, 255, 128].into_iter().enumerate() {
        img.put_pixel(x as u32, 0, Luma([v]));
    }
    img.save(&path).map_err(|e| Error::Decode {
        path: path.clone(),
        message: e.to_string(),
    })?;
    let t = decode_image(&path, ImageShape::new(1, 1, 3))?;
    let decoded_ok =
        t.data()[0] == -1.0 && t.data()[1] == 1.0 && t.data()[2] == (128.0 / 127.5 - 1.0);

    encode_image(&Tensor::from_vec(vec![-1.0, 1.0, 0.0], &[1, 1, 3])?, &path)?;
    let raw = image::open(&path)
        .map_err(|e| Error::Decode {
            path: path.clone(),
            message: e.to_string(),
        })?
        .to_luma8();
    let encoded_ok = raw.as_raw()[..] == [0, 255, 128];
    let _ = std::fs::remove_file(&path);
    Ok((
        decoded_ok && encoded_ok,
        format!("decode 0/255 -> -1/1: {decoded_ok}, encode -1/1 -> 0/255: {encoded_ok}"),
    ))
}

fn check_corruption(seed: u64) -> Result<(bool, String)> {
    let bytes = sample_checkpoint(seed)?.to_bytes()?;
    let mut flipped = bytes.clone();
    let at = bytes.len() - 3;
    flipped[at] ^= 0x40;
    let truncated = &bytes[..bytes.len() - 17];
    let caught = |b: &[u8]| matches!(Checkpoint::<f32>::from_bytes(b), Err(Error::Corruption(_)));
    let (f, t) = (caught(&flipped), caught(truncated));
    Ok((
        f && t,
        format!("flipped byte rejected: {f}, truncation rejected: {t}"),
    ))
}

pub fn persistence_suite(seed: u64, scratch: &Path) -> Vec<Check> {
    vec![
        Check::from_result(
            Suite::Persistence,
            "tensor_blob_round_trip",
            check_blobs(seed),
        ),
        Check::from_result(
            Suite::Persistence,
            "checkpoint_round_trip",
            check_checkpoint(seed, scratch),
        ),
        Check::from_result(Suite::Persistence, "png_endpoints", check_png(scratch)),
        Check::from_result(
            Suite::Persistence,
            "corrupt_checkpoint_rejected",
            check_corruption(seed),
        ),
    ]
}

/// Loads a checkpoint, running every integrity check on the way.
pub fn verify_checkpoint_file(path: &Path) -> Result<NetworkSpec> {
    Ok(load_checkpoint::<f32>(path)?.network)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_gradient_suite_passes() {
        let checks = gradient_suite(3, KINDS.len());
        for c in &checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn gradient_check_detects_a_wrong_derivative() {
        // A function whose recorded derivative is deliberately wrong: the
        // detached factor hides half of d(x^2)/dx from autodiff.
        let case = GradCase {
            inputs: vec![Tensor::from_vec(vec![0.5, -1.0, 2.0], &[3]).unwrap()],
            op: Box::new(|xs| xs[0].mul(&xs[0].detach())),
            probe: None,
        };
        let e = grad_error(&case, &mut Stream::new(1)).unwrap();
        assert!(e > 0.1, "error {e}");
    }
}
