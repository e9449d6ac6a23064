//! Finite-difference checks of every differentiable primitive and of the
//! composite objectives, in 64-bit mode across many seeds. Each case
//! returns its worst relative error.
#![allow(dead_code)]

use fgwarp::diffarray::{grad_check_report, Array, DiffArray, GradCheck, Tape};
use fgwarp::flownet::{FlowNet, FlowNetConfig};
use fgwarp::losses::{
    binary_cross_entropy, mask_flow_loss, photometric_loss, segmentation_loss, soft_iou,
    visual_flow_loss, LossConfig,
};
use fgwarp::segmenter::{SegNet, SegNetConfig};
use fgwarp::warp::bilinear_warp;
use fgwarp::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;
const CHAIN_STEP: f64 = 1e-6;

pub type Res = std::result::Result<f64, String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array<f64> {
    let n = shape.iter().product();
    Array::new(
        shape.to_vec(),
        (0..n).map(|_| r.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

pub fn binary(r: &mut ChaCha8Rng, shape: &[usize]) -> Array<f64> {
    let n = shape.iter().product();
    Array::new(
        shape.to_vec(),
        (0..n)
            .map(|_| f64::from(u8::from(r.random_bool(0.4))))
            .collect(),
    )
    .unwrap()
}

fn random_shape(r: &mut ChaCha8Rng) -> Vec<usize> {
    vec![
        r.random_range(1..4),
        r.random_range(1..6),
        r.random_range(1..6),
    ]
}

/// Normalized flow whose pixel displacements keep sample points at least
/// 0.2 px away from integer coordinates.
fn off_grid_flow(r: &mut ChaCha8Rng, h: usize, w: usize) -> Array<f64> {
    let plane = h * w;
    let data = (0..2 * plane)
        .map(|i| {
            let px = f64::from(r.random_range(-3i32..=3)) + 0.3 + r.random_range(-0.1..0.1);
            px / if i < plane { w as f64 } else { h as f64 }
        })
        .collect();
    Array::new([2, h, w], data).unwrap()
}

/// A random linear functional, turning any output into a scalar with a
/// nontrivial gradient everywhere.
fn project<'t>(out: DiffArray<'t, f64>, seed: u64) -> Result<DiffArray<'t, f64>> {
    let mut r = rng(seed ^ 0x5eed);
    let w = uniform(&mut r, &out.shape(), -1.0, 1.0);
    Ok(out.mul(out.tape().constant(w))?.sum())
}

fn check<F>(name: &str, seed: u64, inputs: &[Array<f64>], max_coords: Option<usize>, f: F) -> Res
where
    F: for<'t> Fn(&'t Tape<f64>, &[DiffArray<'t, f64>]) -> Result<DiffArray<'t, f64>>,
{
    check_with_step(name, seed, inputs, max_coords, GradCheck::default().step, f)
}

fn check_with_step<F>(
    name: &str,
    seed: u64,
    inputs: &[Array<f64>],
    max_coords: Option<usize>,
    step: f64,
    f: F,
) -> Res
where
    F: for<'t> Fn(&'t Tape<f64>, &[DiffArray<'t, f64>]) -> Result<DiffArray<'t, f64>>,
{
    let cfg = GradCheck {
        step,
        max_coords,
        seed,
    };
    let report =
        grad_check_report(f, inputs, &cfg).map_err(|e| format!("{name} seed {seed}: {e}"))?;
    if report.max_rel_err > TOL {
        return Err(format!(
            "{name} seed {seed}: rel err {:.3e} at input {} coord {} (analytic {}, numeric {})",
            report.max_rel_err, report.input, report.coord, report.analytic, report.numeric
        ));
    }
    Ok(report.max_rel_err)
}

macro_rules! unary_case {
    ($test:ident, $lo:expr, $hi:expr, |$x:ident| $body:expr) => {
        pub fn $test() -> Res {
            let mut worst = 0.0f64;
            for seed in 0..SEEDS {
                let mut r = rng(seed);
                let shape = random_shape(&mut r);
                let a = uniform(&mut r, &shape, $lo, $hi);
                worst = worst.max(check(stringify!($test), seed, &[a], None, |_, v| {
                    let $x = v[0];
                    project($body, seed)
                })?);
            }
            Ok(worst)
        }
    };
}

macro_rules! binary_case {
    ($test:ident, ($alo:expr, $ahi:expr), ($blo:expr, $bhi:expr), |$a:ident, $b:ident| $body:expr) => {
        pub fn $test() -> Res {
            let mut worst = 0.0f64;
            for seed in 0..SEEDS {
                let mut r = rng(seed);
                let shape = random_shape(&mut r);
                let a = uniform(&mut r, &shape, $alo, $ahi);
                let b = if seed % 4 == 3 {
                    uniform(&mut r, &[1], $blo, $bhi)
                } else {
                    uniform(&mut r, &shape, $blo, $bhi)
                };
                worst = worst.max(check(stringify!($test), seed, &[a, b], None, |_, v| {
                    let ($a, $b) = (v[0], v[1]);
                    project($body, seed)
                })?);
            }
            Ok(worst)
        }
    };
}

binary_case!(add, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.add(b)?);
binary_case!(sub, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.sub(b)?);
binary_case!(mul, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.mul(b)?);
binary_case!(div, (-2.0, 2.0), (0.5, 1.5), |a, b| a.div(b)?);
binary_case!(minimum, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.minimum(b)?);
binary_case!(maximum, (-2.0, 2.0), (-2.0, 2.0), |a, b| a.maximum(b)?);

unary_case!(add_scalar, -2.0, 2.0, |x| x.add_scalar(0.7));
unary_case!(mul_scalar, -2.0, 2.0, |x| x.mul_scalar(-1.3));
unary_case!(neg, -2.0, 2.0, |x| x.neg());
unary_case!(rsub_scalar, -2.0, 2.0, |x| x.rsub_scalar(1.0));
unary_case!(sigmoid, -4.0, 4.0, |x| x.sigmoid());
unary_case!(tanh, -3.0, 3.0, |x| x.tanh());
unary_case!(relu, -2.0, 2.0, |x| x.relu());
unary_case!(leaky_relu, -2.0, 2.0, |x| x.leaky_relu(0.1));
unary_case!(log, 0.1, 2.0, |x| x.log());
unary_case!(square, -2.0, 2.0, |x| x.square());
unary_case!(sum, -2.0, 2.0, |x| x.sum().mul(x.sum())?);
unary_case!(mean, -2.0, 2.0, |x| x.mean()?.square());
pub fn repeat_channels() -> Res {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (h, w) = (r.random_range(1..6), r.random_range(1..6));
        let x = uniform(&mut r, &[1, h, w], -2.0, 2.0);
        worst = worst.max(check("repeat_channels", seed, &[x], None, |_, v| {
            project(v[0].repeat_channels(3)?, seed)
        })?);
    }
    Ok(worst)
}

pub fn concat_channels() -> Res {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (h, w) = (r.random_range(1..6), r.random_range(1..6));
        let (ca, cb) = (r.random_range(1..4), r.random_range(1..4));
        let a = uniform(&mut r, &[ca, h, w], -1.0, 1.0);
        let b = uniform(&mut r, &[cb, h, w], -1.0, 1.0);
        worst = worst.max(check("concat", seed, &[a, b], None, |_, v| {
            project(v[0].concat_channels(v[1])?, seed)
        })?);
    }
    Ok(worst)
}

pub fn conv2d() -> Res {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (c_in, c_out) = (r.random_range(1..4), r.random_range(1..4));
        let k = [1, 3, 5][r.random_range(0..3)];
        let stride = r.random_range(1..3);
        let padding = r.random_range(0..=k / 2);
        let n = r.random_range(k.max(3)..9);
        let x = uniform(&mut r, &[c_in, n, n], -1.0, 1.0);
        let kernel = uniform(&mut r, &[c_out, c_in, k, k], -1.0, 1.0);
        let bias = uniform(&mut r, &[c_out], -1.0, 1.0);
        worst = worst.max(check("conv2d", seed, &[x, kernel, bias], None, |_, v| {
            project(v[0].conv2d(v[1], v[2], stride, padding)?, seed)
        })?);
    }
    Ok(worst)
}

pub fn upsample2x() -> Res {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let shape = random_shape(&mut r);
        let x = uniform(&mut r, &shape, -1.0, 1.0);
        worst = worst.max(check("upsample2x", seed, &[x], None, |_, v| {
            project(v[0].upsample2x()?, seed)
        })?);
    }
    Ok(worst)
}

pub fn bilinear_warp_source_and_flow() -> Res {
    let mut worst = 0.0f64;
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (c, h, w) = (
            r.random_range(1..4),
            r.random_range(2..8),
            r.random_range(2..8),
        );
        let src = uniform(&mut r, &[c, h, w], -1.0, 1.0);
        let flow = off_grid_flow(&mut r, h, w);
        worst = worst.max(check("bilinear_warp", seed, &[src, flow], None, |_, v| {
            project(bilinear_warp(v[0], v[1])?, seed)
        })?);
        worst = worst.max(check(
            "bilinear_warp mean",
            seed,
            &[
                uniform(&mut r, &[c, h, w], -1.0, 1.0),
                off_grid_flow(&mut r, h, w),
            ],
            None,
            |_, v| bilinear_warp(v[0], v[1])?.mean(),
        )?);
    }
    Ok(worst)
}

pub fn loss_primitives() -> Res {
    let mut worst = 0.0f64;
    let cfg = LossConfig::default();
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (h, w) = (r.random_range(2..9), r.random_range(2..9));
        let a = uniform(&mut r, &[1, h, w], 0.05, 0.95);
        let b = uniform(&mut r, &[1, h, w], 0.05, 0.95);
        let t = binary(&mut r, &[1, h, w]);
        worst = worst.max(check(
            "soft_iou",
            seed,
            &[a.clone(), b.clone()],
            None,
            |_, v| soft_iou(v[0], v[1]),
        )?);
        worst = worst.max(check(
            "bce",
            seed,
            &[a.clone(), t.clone()],
            None,
            |_, v| binary_cross_entropy(v[0], v[1], 1e-7),
        )?);
        worst = worst.max(check(
            "mfl",
            seed,
            &[a.clone(), t.clone()],
            None,
            |_, v| mask_flow_loss(v[0], v[1], &cfg),
        )?);
        worst = worst.max(check(
            "seg loss",
            seed,
            &[a.clone(), b.clone()],
            None,
            |_, v| segmentation_loss(v[0], v[1], &cfg),
        )?);
        let xf = uniform(&mut r, &[3, h, w], 0.0, 1.0);
        let yf = uniform(&mut r, &[3, h, w], 0.0, 1.0);
        worst = worst.max(check(
            "vfl",
            seed,
            &[xf.clone(), a.clone(), yf.clone(), b.clone()],
            None,
            |_, v| visual_flow_loss(v[0], v[1], v[2], v[3]),
        )?);
        worst = worst.max(check("photometric", seed, &[xf, yf], None, |_, v| {
            photometric_loss(v[0], v[1])
        })?);
    }
    Ok(worst)
}

pub fn warp_then_losses() -> Res {
    let mut worst = 0.0f64;
    let cfg = LossConfig::default();
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (h, w) = (r.random_range(3..9), r.random_range(3..9));
        let mask = uniform(&mut r, &[1, h, w], 0.05, 0.95);
        let frame = uniform(&mut r, &[3, h, w], 0.0, 1.0);
        let target = binary(&mut r, &[1, h, w]);
        let target_frame = uniform(&mut r, &[3, h, w], 0.0, 1.0);
        let flow = off_grid_flow(&mut r, h, w);
        worst = worst.max(check(
            "warp+mfl+vfl",
            seed,
            &[flow, mask, frame],
            None,
            |tape, v| {
                let wm = bilinear_warp(v[1], v[0])?;
                let wf = bilinear_warp(v[2], v[0])?;
                let t = tape.constant(target.clone());
                let tf = tape.constant(target_frame.clone());
                mask_flow_loss(wm, t, &cfg)?.add(visual_flow_loss(wf, wm, tf, t)?)
            },
        )?);
    }
    Ok(worst)
}

pub fn perturbed_flownet(seed: u64) -> FlowNet<f64> {
    let mut net = FlowNet::<f64>::init(FlowNetConfig::default(), seed).unwrap();
    let mut r = rng(seed ^ 0xf10);
    for name in ["head.weight", "head.bias"] {
        let p = net.params.get_mut(name).unwrap();
        let shape = p.shape().to_vec();
        *p = uniform(&mut r, &shape, -0.05, 0.05);
    }
    net
}

pub fn flow_forward_warp_loss_chain() -> Res {
    let mut worst = 0.0f64;
    let cfg = LossConfig::default();
    for seed in 0..SEEDS {
        let net = perturbed_flownet(seed);
        let mut r = rng(seed);
        let n = 16;
        let x0 = uniform(&mut r, &[3, n, n], 0.0, 1.0);
        let x1 = uniform(&mut r, &[3, n, n], 0.0, 1.0);
        let y0 = uniform(&mut r, &[1, n, n], 0.05, 0.95);
        let y1 = binary(&mut r, &[1, n, n]);
        let names = [
            "head.weight",
            "head.bias",
            "enc0.down.weight",
            "dec0.conv2.weight",
            "enc2.conv.bias",
        ];
        let inputs: Vec<Array<f64>> = names
            .iter()
            .map(|k| net.params.get(k).unwrap().clone())
            .collect();
        // A learned flow can put bilinear sample points within a 1e-5
        // perturbation of integer coordinates, where the warp has kinks.
        worst = worst.max(check_with_step(
            "flow chain",
            seed,
            &inputs,
            Some(12),
            CHAIN_STEP,
            |tape, v| {
                let mut p = net.params.bind(tape, false);
                for (k, var) in names.iter().zip(v) {
                    p = p.with(k, *var)?;
                }
                let (a, b, m, t) = (
                    tape.constant(x0.clone()),
                    tape.constant(x1.clone()),
                    tape.constant(y0.clone()),
                    tape.constant(y1.clone()),
                );
                let flow = net.forward(&p, a, b, m)?;
                let wm = bilinear_warp(m, flow)?;
                let wf = bilinear_warp(a, flow)?;
                mask_flow_loss(wm, t, &cfg)?.add(visual_flow_loss(wf, wm, b, t)?)
            },
        )?);
        worst = worst.max(check_with_step(
            "flow mean",
            seed,
            &inputs[..2],
            Some(12),
            CHAIN_STEP,
            |tape, v| {
                let p = net
                    .params
                    .bind(tape, false)
                    .with(names[0], v[0])?
                    .with(names[1], v[1])?;
                net.forward(
                    &p,
                    tape.constant(x0.clone()),
                    tape.constant(x1.clone()),
                    tape.constant(y0.clone()),
                )?
                .mean()
            },
        )?);
    }
    Ok(worst)
}

pub fn segmenter_loss_chain() -> Res {
    let mut worst = 0.0f64;
    let cfg = LossConfig::default();
    for seed in 0..SEEDS {
        let net = SegNet::<f64>::init(SegNetConfig::default(), seed).unwrap();
        let mut r = rng(seed);
        let n = 16;
        let frame = uniform(&mut r, &[3, n, n], 0.0, 1.0);
        let prev = binary(&mut r, &[1, n, n]);
        let warped = uniform(&mut r, &[1, n, n], 0.0, 1.0);
        let target = binary(&mut r, &[1, n, n]);
        let names = [
            "last.out.weight",
            "last.conv.weight",
            "enc1.down.weight",
            "dec2.conv.bias",
        ];
        let mut inputs: Vec<Array<f64>> = names
            .iter()
            .map(|k| net.params.get(k).unwrap().clone())
            .collect();
        inputs.push(warped);
        worst = worst.max(check("seg chain", seed, &inputs, Some(12), |tape, v| {
            let mut p = net.params.bind(tape, false);
            for (k, var) in names.iter().zip(v) {
                p = p.with(k, *var)?;
            }
            let out = net.forward(
                &p,
                tape.constant(frame.clone()),
                tape.constant(prev.clone()),
                Some(v[4]),
            )?;
            segmentation_loss(out, tape.constant(target.clone()), &cfg)
        })?);
    }
    Ok(worst)
}

pub type Case = (&'static str, fn() -> Res);

pub const CASES: &[Case] = &[
    ("add", add),
    ("sub", sub),
    ("mul", mul),
    ("div", div),
    ("minimum", minimum),
    ("maximum", maximum),
    ("add_scalar", add_scalar),
    ("mul_scalar", mul_scalar),
    ("neg", neg),
    ("rsub_scalar", rsub_scalar),
    ("sigmoid", sigmoid),
    ("tanh", tanh),
    ("relu", relu),
    ("leaky_relu", leaky_relu),
    ("log", log),
    ("square", square),
    ("sum", sum),
    ("mean", mean),
    ("repeat_channels", repeat_channels),
    ("concat_channels", concat_channels),
    ("conv2d", conv2d),
    ("upsample2x", upsample2x),
    (
        "bilinear_warp_source_and_flow",
        bilinear_warp_source_and_flow,
    ),
    ("loss_primitives", loss_primitives),
    ("warp_then_losses", warp_then_losses),
    ("flow_forward_warp_loss_chain", flow_forward_warp_loss_chain),
    ("segmenter_loss_chain", segmenter_loss_chain),
];
