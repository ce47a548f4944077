//! Oracles shared by the integration tests and the acceptance suite. None
//! of these call the library routine they check.
#![allow(dead_code)]

use joint_ood::data::{Dataset, Encoded, LabelMap, Vocab};
use joint_ood::encoders::{EncoderKind, ModelDims};
use joint_ood::evaluation::Outcome;
use joint_ood::model::{class_weight, Network, NetworkSpec, Targets, OOD_HEAD_IND, OOD_HEAD_OOD};
use joint_ood::numerics::{GradStore, Graph, NodeId, Params, Tensor};
use joint_ood::Result;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Below this magnitude the relative error is measured against the floor.
pub const FD_FLOOR: f64 = 1e-6;

pub type Objective<'a> = Box<dyn Fn(&Params<f64>) -> Result<(f64, GradStore<f64>)> + 'a>;

/// Central finite differences on every parameter entry. Returns the largest
/// relative error against the reverse-mode gradient.
pub fn max_gradient_error(params: &Params<f64>, objective: &Objective<'_>) -> Result<f64> {
    let (_, grads) = objective(params)?;
    let mut p = params.clone();
    let mut worst: f64 = 0.0;
    for id in params.ids().collect::<Vec<_>>() {
        for i in 0..params.get(id).len() {
            let x = params.get(id).data()[i];
            p.get_mut(id).data_mut()[i] = x + FD_STEP;
            let up = objective(&p)?.0;
            p.get_mut(id).data_mut()[i] = x - FD_STEP;
            let down = objective(&p)?.0;
            p.get_mut(id).data_mut()[i] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let analytic = grads.get(id).map_or(0.0, |t| t.data()[i]);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub fn uniform<R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..2.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `[t, c]` matrix whose column maxima beat the runner-up by a clear gap.
fn distinct_columns<R: Rng>(rng: &mut R, t: usize, c: usize) -> Tensor<f64> {
    let mut data = vec![0.0; t * c];
    for f in 0..c {
        let mut levels: Vec<f64> = (0..t).map(|k| k as f64 * 0.3).collect();
        for i in (1..t).rev() {
            levels.swap(i, rng.gen_range(0..=i));
        }
        for (k, l) in levels.into_iter().enumerate() {
            data[k * c + f] = l + rng.gen_range(-0.05..0.05);
        }
    }
    Tensor::new(vec![t, c], data).unwrap()
}

pub const PRIMITIVE_OPS: [&str; 19] = [
    "lookup",
    "matvec",
    "add",
    "mul",
    "scale",
    "one_minus",
    "concat",
    "slice",
    "sigmoid",
    "tanh",
    "selu",
    "softmax",
    "softmax_cross_entropy",
    "dropout",
    "sum",
    "sum_all",
    "stack",
    "conv1d",
    "max_over_time",
];

type Build = Box<dyn for<'g> Fn(&mut Graph<'g, f64>) -> Result<NodeId>>;

/// A random instance of one primitive op. Non-scalar outputs are reduced
/// with a fixed random projection so every output entry matters.
pub fn op_case<R: Rng>(op: &str, rng: &mut R) -> (Params<f64>, Objective<'static>) {
    let mut p = Params::new();
    let n = rng.gen_range(2..6);
    let m = rng.gen_range(2..6);
    let a = p.add("a", uniform(rng, &[n], -2.0, 2.0)).unwrap();
    let build: Build = match op {
        "lookup" => {
            let e = p.add("e", uniform(rng, &[m, n], -1.0, 1.0)).unwrap();
            let row = rng.gen_range(0..m);
            Box::new(move |g| {
                let r = g.lookup(e, row)?;
                let r2 = g.lookup(e, row)?;
                g.mul(r, r2)
            })
        }
        "matvec" => {
            let w = p.add("w", uniform(rng, &[m, n], -1.0, 1.0)).unwrap();
            Box::new(move |g| {
                let (w, a) = (g.param(w), g.param(a));
                g.matvec(w, a)
            })
        }
        "add" => {
            let b = p.add("b", uniform(rng, &[n], -2.0, 2.0)).unwrap();
            Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                g.add(a, b)
            })
        }
        "mul" => {
            let b = p.add("b", uniform(rng, &[n], -2.0, 2.0)).unwrap();
            Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                let ab = g.mul(a, b)?;
                // Same node on both sides accumulates twice.
                g.mul(ab, a)
            })
        }
        "scale" => {
            let s = rng.gen_range(-3.0..3.0);
            Box::new(move |g| {
                let a = g.param(a);
                Ok(g.scale(a, s))
            })
        }
        "one_minus" => Box::new(move |g| {
            let a = g.param(a);
            Ok(g.one_minus(a))
        }),
        "concat" => {
            let b = p.add("b", uniform(rng, &[m], -2.0, 2.0)).unwrap();
            Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                g.concat(&[b, a, b])
            })
        }
        "slice" => {
            let start = rng.gen_range(0..n);
            let len = rng.gen_range(1..=n - start);
            Box::new(move |g| {
                let a = g.param(a);
                g.slice(a, start, len)
            })
        }
        "sigmoid" => Box::new(move |g| {
            let a = g.param(a);
            Ok(g.sigmoid(a))
        }),
        "tanh" => Box::new(move |g| {
            let a = g.param(a);
            Ok(g.tanh(a))
        }),
        "selu" => {
            p.assign("a", away_from_zero(rng, &[n])).unwrap();
            Box::new(move |g| {
                let a = g.param(a);
                Ok(g.selu(a))
            })
        }
        "softmax" => Box::new(move |g| {
            let a = g.param(a);
            g.softmax(a)
        }),
        "softmax_cross_entropy" => {
            let gold = rng.gen_range(0..n);
            Box::new(move |g| {
                let a = g.param(a);
                g.softmax_cross_entropy(a, gold)
            })
        }
        "dropout" => {
            let rate = 0.3;
            let mask: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(rate) { 0.0 } else { 1.0 / (1.0 - rate) })
                .collect();
            Box::new(move |g| {
                let a = g.param(a);
                g.dropout(a, &mask)
            })
        }
        "sum" => {
            let b = p.add("b", uniform(rng, &[n], -2.0, 2.0)).unwrap();
            Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                g.sum(&[a, b, a])
            })
        }
        "sum_all" => Box::new(move |g| {
            let a = g.param(a);
            let sq = g.mul(a, a)?;
            Ok(g.sum_all(sq))
        }),
        "stack" => {
            let b = p.add("b", uniform(rng, &[n], -2.0, 2.0)).unwrap();
            Box::new(move |g| {
                let (a, b) = (g.param(a), g.param(b));
                g.stack(&[a, b, a])
            })
        }
        "conv1d" => {
            let width = rng.gen_range(1..4);
            let steps = width + rng.gen_range(0..4);
            let c = rng.gen_range(1..4);
            let x = p.add("x", uniform(rng, &[steps, n], -1.0, 1.0)).unwrap();
            let w = p.add("w", uniform(rng, &[c, width * n], -1.0, 1.0)).unwrap();
            let b = p.add("b", uniform(rng, &[c], -1.0, 1.0)).unwrap();
            Box::new(move |g| {
                let (x, w, b) = (g.param(x), g.param(w), g.param(b));
                g.conv1d(x, w, b, width)
            })
        }
        "max_over_time" => {
            let x = p.add("x", distinct_columns(rng, m, n)).unwrap();
            Box::new(move |g| {
                let x = g.param(x);
                g.max_over_time(x)
            })
        }
        other => panic!("no gradient case for {other}"),
    };
    let seed: u64 = rng.gen();
    let objective: Objective<'static> = Box::new(move |params: &Params<f64>| {
        let mut g = Graph::new(params);
        let out = build(&mut g)?;
        let root = if g.shape(out) == [1] {
            out
        } else {
            let mut r = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let proj = uniform(&mut r, g.shape(out), -1.0, 1.0);
            let proj = g.input(proj);
            let weighted = g.mul(out, proj)?;
            g.sum_all(weighted)
        };
        let value = g.scalar(root);
        let grads = g.backward(root)?;
        Ok((value, grads))
    });
    (p, objective)
}

/// Worst relative error of `op` over `trials` random instances.
pub fn check_op<R: Rng>(op: &str, trials: usize, rng: &mut R) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (p, f) = op_case(op, rng);
        worst = worst.max(max_gradient_error(&p, &f)?);
    }
    Ok(worst)
}

pub fn tiny_dims() -> ModelDims {
    ModelDims {
        char_emb: 3,
        char_hidden: 2,
        word_emb: 4,
        word_hidden: 3,
        head_hidden: 4,
        cnn_channels: 2,
    }
}

/// Three domains and five utterances, two of them OOD.
pub fn toy_batch() -> (Dataset, Vocab, Vec<Encoded>) {
    let labels = LabelMap::new(["Weather", "Music", "Alarm"]).unwrap();
    let data = Dataset::from_pairs(
        [
            ("rain in oslo", "Weather"),
            ("play jazz", "Music"),
            ("wake me at six", "Alarm"),
            ("zebra quantum", "OOD"),
            ("oslo jazz six rain", "OOD"),
        ],
        &labels,
    )
    .unwrap();
    let vocab = Vocab::build(&data, 1);
    let encoded = data.utterances.iter().map(|u| vocab.encode(u)).collect();
    (data, vocab, encoded)
}

pub fn toy_network<R: Rng>(encoder: EncoderKind, classes: usize, ood_head: bool, vocab: &Vocab, rng: &mut R) -> Network<f64> {
    let spec = NetworkSpec {
        dims: tiny_dims(),
        encoder,
        classes,
        ood_head,
        num_words: vocab.num_words(),
        num_chars: vocab.num_chars(),
    };
    Network::<f32>::new(spec, "joint", rng).unwrap().cast()
}

/// Weighted joint minibatch loss over the toy batch, built node by node.
pub fn joint_batch_objective<'a>(
    net: &'a Network<f64>,
    batch: &'a [Encoded],
    ood_id: usize,
    alpha: f64,
    lambda: f64,
) -> Objective<'a> {
    Box::new(move |params: &Params<f64>| {
        let mut g = Graph::new(params);
        let mut terms = Vec::new();
        for e in batch {
            let is_ood = e.label == ood_id;
            let targets = Targets {
                main: e.label,
                ood: Some(if is_ood { OOD_HEAD_OOD } else { OOD_HEAD_IND }),
            };
            let l = net.loss(&mut g, e, targets, alpha, None)?;
            terms.push(g.scale(l, class_weight(is_ood, lambda)?));
        }
        let root = g.sum(&terms)?;
        let value = g.scalar(root);
        Ok((value, g.backward(root)?))
    })
}

/// DCW controller written straight from the update rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DcwOracle {
    pub lambda: f64,
    pub gamma: f64,
    pub satisfied: bool,
}

impl DcwOracle {
    pub fn start() -> Self {
        Self {
            lambda: 1.0,
            gamma: 0.1,
            satisfied: false,
        }
    }

    pub fn step(self, far: f64, target: f64) -> Self {
        let eps = 1e-6;
        if far <= target {
            let gamma = if self.satisfied { self.gamma } else { self.gamma * 0.5 };
            Self {
                lambda: f64::max(self.lambda - gamma, eps),
                gamma,
                satisfied: true,
            }
        } else {
            Self {
                lambda: f64::min(self.lambda + self.gamma, 2.0 - eps),
                gamma: self.gamma,
                satisfied: false,
            }
        }
    }
}

/// Decision at threshold `t`, counted from scratch.
pub fn brute_metrics(items: &[Outcome], ood_id: usize, t: f64) -> (f64, f64, f64) {
    let mut correct = 0;
    let (mut ind, mut ood, mut fa, mut fr) = (0, 0, 0, 0);
    for o in items {
        let decided = if o.predicted != ood_id && o.confidence < t { ood_id } else { o.predicted };
        correct += usize::from(decided == o.gold);
        if o.gold == ood_id {
            ood += 1;
            fa += usize::from(decided != ood_id);
        } else {
            ind += 1;
            fr += usize::from(decided == ood_id);
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    (ratio(correct, items.len()), ratio(fa, ood), ratio(fr, ind))
}

/// Smallest candidate threshold whose FAR meets the target, found by
/// trying every candidate.
pub fn brute_threshold(items: &[Outcome], ood_id: usize, target: f64) -> f64 {
    let mut candidates = vec![0.0, 1.0 + f64::EPSILON];
    candidates.extend(items.iter().map(|o| o.confidence));
    candidates
        .into_iter()
        .filter(|&t| brute_metrics(items, ood_id, t).1 <= target)
        .fold(f64::INFINITY, f64::min)
}

/// Random scored outcomes with some OOD gold labels; confidences are drawn
/// from a coarse grid so ties occur.
pub fn random_outcomes<R: Rng>(rng: &mut R, classes: usize, max_len: usize) -> Vec<Outcome> {
    let ood_id = classes - 1;
    let len = rng.gen_range(1..=max_len);
    let mut out: Vec<Outcome> = (0..len)
        .map(|_| Outcome {
            predicted: rng.gen_range(0..classes),
            confidence: rng.gen_range(0..=20) as f64 / 20.0,
            gold: rng.gen_range(0..classes),
        })
        .collect();
    if !out.iter().any(|o| o.gold == ood_id) {
        let i = rng.gen_range(0..len);
        out[i].gold = ood_id;
    }
    out
}
