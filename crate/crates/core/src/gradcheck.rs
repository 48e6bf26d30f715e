//! Central finite-difference gradient checks.
//!
//! Analytic gradients come from the tape in f32; the numeric oracle reruns
//! the same graph in f64. Every loss ends in an L1 head whose residuals are
//! kept at least 0.5 away from zero, so no perturbation crosses its kink.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{BackwardHook, Tape, Var};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Network, Variant};
use crate::ops;
use crate::tensor::{Element, Shape, Tensor};

pub const TOLERANCE: f64 = 1e-3;
/// Elements where both gradients are below this are not compared.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;
pub const EPS: f64 = 1e-3;
/// Step for the end-to-end check; small enough that perturbations rarely
/// carry a ReLU pre-activation across zero.
pub const NETWORK_EPS: f64 = 1e-6;

/// Every check the suite runs, in order.
pub const CHECKS: [&str; 9] = [
    "conv2d",
    "conv2d_transpose",
    "pixel_shuffle",
    "concat_channels",
    "relu",
    "add",
    "l1_loss",
    "sum",
    "network",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Gradient elements compared.
    pub checked: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

#[derive(Clone, Copy, Debug)]
enum Graph {
    Conv { stride: usize, padding: usize },
    ConvT { stride: usize, padding: usize },
    Shuffle(usize),
    Concat,
    Relu,
    Add,
    L1,
    Sum,
}

struct Case {
    graph: Graph,
    inputs: Vec<Tensor<f32>>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f32> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0f32..1.0))
}

/// Values in ±[lo, hi] with random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let m = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn cases(name: &str, rng: &mut ChaCha8Rng) -> Vec<Case> {
    let s = Shape::new;
    match name {
        "conv2d" => [(3, 1, 1, 5, 6), (3, 2, 1, 5, 5), (1, 1, 0, 4, 4), (3, 1, 0, 5, 5)]
            .into_iter()
            .map(|(k, stride, padding, h, w)| Case {
                graph: Graph::Conv { stride, padding },
                inputs: vec![uniform(rng, s(2, 3, h, w)), uniform(rng, s(4, 3, k, k)), uniform(rng, s(1, 4, 1, 1))],
            })
            .collect(),
        "conv2d_transpose" => [(6, 2, 2, 3), (9, 3, 3, 2), (3, 1, 1, 4), (4, 2, 1, 3)]
            .into_iter()
            .map(|(k, stride, padding, hw)| Case {
                graph: Graph::ConvT { stride, padding },
                inputs: vec![uniform(rng, s(2, 3, hw, hw)), uniform(rng, s(3, 4, k, k)), uniform(rng, s(1, 4, 1, 1))],
            })
            .collect(),
        "pixel_shuffle" => vec![Case { graph: Graph::Shuffle(2), inputs: vec![uniform(rng, s(2, 4, 3, 3))] }],
        "concat_channels" => vec![Case {
            graph: Graph::Concat,
            inputs: vec![uniform(rng, s(2, 1, 3, 4)), uniform(rng, s(2, 2, 3, 4)), uniform(rng, s(2, 3, 3, 4))],
        }],
        "relu" => {
            let shape = s(2, 3, 4, 4);
            let x = Tensor::new(shape, away_from_zero(rng, shape.numel(), 0.05, 1.0)).unwrap();
            vec![Case { graph: Graph::Relu, inputs: vec![x] }]
        }
        "add" => vec![Case { graph: Graph::Add, inputs: vec![uniform(rng, s(2, 3, 4, 4)), uniform(rng, s(2, 3, 4, 4))] }],
        "l1_loss" => {
            let pred = uniform(rng, s(2, 3, 4, 4));
            let gap = away_from_zero(rng, pred.numel(), 0.5, 1.5);
            let target = Tensor::new(pred.shape(), pred.data().iter().zip(&gap).map(|(p, g)| p + g).collect()).unwrap();
            vec![Case { graph: Graph::L1, inputs: vec![pred, target] }]
        }
        "sum" => vec![Case { graph: Graph::Sum, inputs: vec![uniform(rng, s(2, 3, 4, 4))] }],
        _ => Vec::new(),
    }
}

/// Output of the op under test (before the loss head).
fn op_output<E: Element>(graph: Graph, tape: &mut Tape<'_, E>, v: &[Var]) -> Result<Var> {
    match graph {
        Graph::Conv { stride, padding } => tape.conv2d(v[0], v[1], v[2], stride, padding),
        Graph::ConvT { stride, padding } => tape.conv2d_transpose(v[0], v[1], v[2], stride, padding),
        Graph::Shuffle(a) => tape.pixel_shuffle(v[0], a),
        Graph::Concat => tape.concat(v),
        Graph::Relu => Ok(tape.relu(v[0])),
        Graph::Add => tape.add(v[0], v[1]),
        Graph::L1 => tape.l1_loss(v[0], v[1]),
        Graph::Sum => Ok(tape.sum(v[0])),
    }
}

fn is_scalar_op(graph: Graph) -> bool {
    matches!(graph, Graph::L1 | Graph::Sum)
}

/// Scalar loss of the case in precision `E`, with the L1 head against `target`.
fn case_loss<E: Element>(graph: Graph, inputs: &[Tensor<E>], target: Option<&Tensor<E>>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
    let mut out = op_output(graph, &mut tape, &vars)?;
    if let Some(t) = target {
        let tv = tape.leaf(t.clone(), false);
        out = tape.l1_loss(out, tv)?;
    }
    Ok(tape.value(out).data()[0].as_f64())
}

fn rel_error(a: f64, n: f64) -> Option<f64> {
    let scale = a.abs().max(n.abs());
    (scale > MAGNITUDE_FLOOR).then(|| (a - n).abs() / scale)
}

fn compare(analytic: &[f32], numeric: &[f64], worst: &mut f64, checked: &mut usize) {
    for (&a, &n) in analytic.iter().zip(numeric) {
        if let Some(r) = rel_error(a as f64, n) {
            *worst = worst.max(r);
            *checked += 1;
        }
    }
}

fn check_case(case: &Case, rng: &mut ChaCha8Rng, hook: Option<BackwardHook<f32>>) -> Result<(f64, usize)> {
    let graph = case.graph;
    // Inputs with a gradient; for l1_loss both pred and target.
    let wide: Vec<Tensor<f64>> = case.inputs.iter().map(Tensor::cast).collect();
    let target: Option<Tensor<f32>> = if is_scalar_op(graph) {
        None
    } else {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = wide.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = op_output(graph, &mut tape, &vars)?;
        let y = tape.value(out);
        let gap = away_from_zero(rng, y.numel(), 0.5, 1.5);
        Some(Tensor::new(y.shape(), y.data().iter().zip(&gap).map(|(v, g)| *v as f32 + g).collect())?)
    };
    let target_wide: Option<Tensor<f64>> = target.as_ref().map(Tensor::cast);

    let analytic: Vec<Vec<f32>> = {
        let mut tape = hook.map_or_else(Tape::new, Tape::with_backward_hook);
        let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let mut out = op_output(graph, &mut tape, &vars)?;
        if let Some(t) = &target {
            let tv = tape.leaf(t.clone(), false);
            out = tape.l1_loss(out, tv)?;
        }
        let grads = tape.backward(out)?;
        vars.iter()
            .zip(&case.inputs)
            .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec))
            .collect()
    };

    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut probe = wide.clone();
            let x0 = probe[i].data()[j];
            probe[i].data_mut()[j] = x0 + EPS;
            let up = case_loss(graph, &probe, target_wide.as_ref())?;
            probe[i].data_mut()[j] = x0 - EPS;
            let down = case_loss(graph, &probe, target_wide.as_ref())?;
            *slot = (up - down) / (2.0 * EPS);
        }
        compare(a, &numeric, &mut worst, &mut checked);
    }
    Ok((worst, checked))
}

/// End-to-end check on a B=2, L=2, n_r=n_g=8, ×2 DBDN, covering every
/// parameter element and the input image.
fn check_network(rng: &mut ChaCha8Rng, seed: u64, hook: Option<BackwardHook<f32>>) -> Result<(f64, usize)> {
    let net = Network::build(ModelConfig::tiny(Variant::Dbdn, 2, 2, 8, 2), seed)?;
    let input = Tensor::from_fn(Shape::new(1, 3, 4, 4), |_| rng.gen_range(0.0f32..1.0));
    let out = net.forward(&input)?;
    let gap = away_from_zero(rng, out.numel(), 0.5, 1.5);
    let target = Tensor::new(out.shape(), out.data().iter().zip(&gap).map(|(v, g)| v + g).collect())?;

    let (param_grads, input_grad) = {
        let mut tape = hook.map_or_else(Tape::new, Tape::with_backward_hook);
        let binding = net.bind(&mut tape);
        let x = tape.leaf(input.clone(), true);
        let y = net.forward_on_tape(&mut tape, &binding, x)?;
        let t = tape.constant(&target);
        let loss = tape.l1_loss(y, t)?;
        let grads = tape.backward(loss)?;
        let flat: Vec<Var> = binding.vars().iter().flat_map(|&(w, b)| [w, b]).collect();
        let pg: Vec<Vec<f32>> = flat
            .iter()
            .zip(net.params())
            .map(|(&v, (_, t))| grads.get(v).map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec))
            .collect();
        (pg, grads.get(x).map(<[f32]>::to_vec).unwrap_or_default())
    };

    let mut wide = net.cast::<f64>();
    let input_wide: Tensor<f64> = input.cast();
    let target_wide: Tensor<f64> = target.cast();
    let loss_of = |net: &Network<f64>, x: &Tensor<f64>| -> Result<f64> { ops::l1_loss(&net.forward(x)?, &target_wide) };

    let mut worst = 0.0f64;
    let mut checked = 0;
    for (i, analytic) in param_grads.iter().enumerate() {
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let x0 = wide.params()[i].1.data()[j];
            let set = |net: &mut Network<f64>, v: f64| net.params_mut()[i].1.data_mut()[j] = v;
            set(&mut wide, x0 + NETWORK_EPS);
            let up = loss_of(&wide, &input_wide)?;
            set(&mut wide, x0 - NETWORK_EPS);
            let down = loss_of(&wide, &input_wide)?;
            set(&mut wide, x0);
            *slot = (up - down) / (2.0 * NETWORK_EPS);
        }
        compare(analytic, &numeric, &mut worst, &mut checked);
    }
    let mut numeric = vec![0.0; input_wide.numel()];
    let mut probe = input_wide.clone();
    for (j, slot) in numeric.iter_mut().enumerate() {
        let x0 = probe.data()[j];
        probe.data_mut()[j] = x0 + NETWORK_EPS;
        let up = loss_of(&wide, &probe)?;
        probe.data_mut()[j] = x0 - NETWORK_EPS;
        let down = loss_of(&wide, &probe)?;
        probe.data_mut()[j] = x0;
        *slot = (up - down) / (2.0 * NETWORK_EPS);
    }
    compare(&input_grad, &numeric, &mut worst, &mut checked);
    Ok((worst, checked))
}

/// Runs one named check; see [`CHECKS`].
pub fn check(name: &str, seed: u64, hook: Option<BackwardHook<f32>>) -> Result<CheckReport> {
    let name = *CHECKS
        .iter()
        .find(|&&c| c == name)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown gradient check '{name}', expected one of {CHECKS:?}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (max_rel_error, checked) = if name == "network" {
        check_network(&mut rng, seed, hook)?
    } else {
        let mut worst = 0.0f64;
        let mut total = 0;
        for case in cases(name, &mut rng) {
            let (w, n) = check_case(&case, &mut rng, hook)?;
            worst = worst.max(w);
            total += n;
        }
        (worst, total)
    };
    Ok(CheckReport { name, max_rel_error, checked })
}

/// All checks, or only `only` when given.
pub fn run_checks(only: Option<&str>, seed: u64, hook: Option<BackwardHook<f32>>) -> Result<Vec<CheckReport>> {
    match only {
        Some(name) => Ok(vec![check(name, seed, hook)?]),
        None => CHECKS.iter().map(|name| check(name, seed, hook)).collect(),
    }
}
