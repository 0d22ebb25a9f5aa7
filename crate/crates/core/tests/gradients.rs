//! Reverse-mode gradients against central finite differences.

use qfree_core::factor::{FactorizationModel, ModelConfig, Variant};
use qfree_core::graph::{Graph, Var};
use qfree_core::nn::{dense_forward, gru_step, Activation, Bound, ParamSet};
use qfree_core::replay::{Episode, EpisodeBatch};
use qfree_core::rng::{stream, Rng, Stream};
use qfree_core::train::{build_loss, LossConfig};
use qfree_core::{Result, Tensor};
use rand::Rng as _;

const REL_TOL: f64 = 1e-4;
const STEP: f64 = 1e-6;
const CONFIGS: u64 = 50;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Checks `d f / d p` for every value of every tensor in `inputs`.
fn check<F>(inputs: &ParamSet, f: F) -> f64
where
    F: Fn(&mut Graph, &Bound) -> Result<Var>,
{
    let mut g = Graph::new();
    let bound = inputs.bind(&mut g);
    let out = f(&mut g, &bound).unwrap();
    let loss = reduce(&mut g, out);
    g.backward(loss).unwrap();
    let value = |p: &ParamSet| {
        let mut g = Graph::new();
        let b = p.bind_frozen(&mut g);
        let out = f(&mut g, &b).unwrap();
        let loss = reduce(&mut g, out);
        g.data(loss)[0]
    };
    let mut worst: f64 = 0.0;
    for (path, t) in inputs.iter() {
        let analytic = g.grad(bound.get(path).unwrap()).unwrap().to_vec();
        for k in 0..t.numel() {
            let mut plus = inputs.clone();
            plus.get_mut(path).unwrap().data_mut()[k] += STEP;
            let mut minus = inputs.clone();
            minus.get_mut(path).unwrap().data_mut()[k] -= STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[k], numeric));
        }
    }
    worst
}

/// Weighted sum so that every output element gets a distinct upstream gradient.
fn reduce(g: &mut Graph, out: Var) -> Var {
    let n: usize = g.shape(out).iter().product();
    if n == 1 && g.shape(out).is_empty() {
        return out;
    }
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
    let w = g.constant(g.shape(out).to_vec().as_slice(), w).unwrap();
    let prod = g.mul(out, w).unwrap();
    g.sum(prod)
}

fn inputs(rng: &mut Rng, shapes: &[(&str, &[usize])]) -> ParamSet {
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        p.insert(*name, random_tensor(rng, shape));
    }
    p
}

fn dims(rng: &mut Rng) -> (usize, usize, usize) {
    (
        rng.gen_range(1..4),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
    )
}

#[test]
fn primitive_ops_match_finite_differences() {
    for seed in 0..CONFIGS {
        let mut rng = stream(seed, Stream::Test);
        let (m, k, n) = dims(&mut rng);
        let p = inputs(
            &mut rng,
            &[
                ("a", &[m, k]),
                ("b", &[k, n]),
                ("c", &[m, n]),
                ("row", &[1, n]),
                ("col", &[m, 1]),
            ],
        );
        let cases: Vec<(&str, Box<dyn Fn(&mut Graph, &Bound) -> Result<Var>>)> = vec![
            (
                "matmul",
                Box::new(|g, b| g.matmul(b.get("a")?, b.get("b")?)),
            ),
            (
                "add_row",
                Box::new(|g, b| g.add(b.get("c")?, b.get("row")?)),
            ),
            (
                "sub_col",
                Box::new(|g, b| g.sub(b.get("col")?, b.get("c")?)),
            ),
            (
                "mul_bcast",
                Box::new(|g, b| g.mul(b.get("row")?, b.get("col")?)),
            ),
            ("neg", Box::new(|g, b| Ok(g.neg(b.get("c")?)))),
            ("relu", Box::new(|g, b| Ok(g.relu(b.get("c")?)))),
            ("elu", Box::new(|g, b| Ok(g.elu(b.get("c")?)))),
            ("abs", Box::new(|g, b| Ok(g.abs(b.get("c")?)))),
            ("square", Box::new(|g, b| Ok(g.square(b.get("c")?)))),
            ("sigmoid", Box::new(|g, b| Ok(g.sigmoid(b.get("c")?)))),
            ("tanh", Box::new(|g, b| Ok(g.tanh(b.get("c")?)))),
            (
                "scalar_mul",
                Box::new(|g, b| Ok(g.scalar_mul(b.get("c")?, -2.5))),
            ),
            (
                "add_scalar",
                Box::new(|g, b| Ok(g.add_scalar(b.get("c")?, 0.7))),
            ),
            ("sum", Box::new(|g, b| Ok(g.sum(b.get("c")?)))),
            ("mean", Box::new(|g, b| Ok(g.mean(b.get("c")?)))),
            ("sum_axis0", Box::new(|g, b| g.sum_axis(b.get("c")?, 0))),
            ("sum_axis1", Box::new(|g, b| g.sum_axis(b.get("c")?, 1))),
            ("max_axis0", Box::new(|g, b| g.max_axis(b.get("c")?, 0))),
            ("max_axis1", Box::new(|g, b| g.max_axis(b.get("c")?, 1))),
            (
                "gather_rows",
                Box::new(move |g, b| {
                    let idx: Vec<usize> = (0..m + 2).map(|i| (i * 7) % m).collect();
                    g.gather_rows(b.get("c")?, &idx)
                }),
            ),
            (
                "pick",
                Box::new(move |g, b| {
                    let cols: Vec<usize> = (0..m).map(|i| (i * 5 + 1) % n).collect();
                    g.pick(b.get("c")?, &cols)
                }),
            ),
            (
                "concat_cols",
                Box::new(|g, b| g.concat_cols(&[b.get("c")?, b.get("col")?])),
            ),
            (
                "concat_rows",
                Box::new(|g, b| g.concat_rows(&[b.get("c")?, b.get("row")?])),
            ),
            (
                "slice_cols",
                Box::new(move |g, b| g.slice_cols(b.get("c")?, n / 2, n - n / 2)),
            ),
            (
                "reshape",
                Box::new(move |g, b| g.reshape(b.get("c")?, &[n, m])),
            ),
            (
                "chain",
                Box::new(|g, b| {
                    let h = g.matmul(b.get("a")?, b.get("b")?)?;
                    let h = g.elu(h);
                    let top = g.max_axis(h, 1)?;
                    let centered = g.sub(h, top)?;
                    let sq = g.square(centered);
                    g.mul(sq, b.get("c")?)
                }),
            ),
        ];
        for (name, f) in cases {
            let err = check(&p, f);
            assert!(err <= REL_TOL, "{name} seed {seed}: rel err {err:e}");
        }
    }
}

#[test]
fn dense_and_recurrent_layers_match_finite_differences() {
    for seed in 0..CONFIGS {
        let mut rng = stream(seed, Stream::Test);
        let (rows, fan_in, fan_out) = dims(&mut rng);
        let hidden = rng.gen_range(1..4);
        let mut p = inputs(&mut rng, &[("x", &[rows, fan_in]), ("h", &[rows, hidden])]);
        let mut init = stream(seed, Stream::Init);
        p.init_dense("fc", fan_in, fan_out, &mut init);
        p.init_gru("rnn", fan_in, hidden, &mut init);
        for (_, t) in p.iter_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.3..0.3));
        }
        for act in [
            Activation::Identity,
            Activation::Relu,
            Activation::Elu,
            Activation::Tanh,
        ] {
            let err = check(&p, |g, b| dense_forward(g, b, "fc", b.get("x")?, act));
            assert!(err <= REL_TOL, "dense {act:?} seed {seed}: {err:e}");
        }
        let err = check(&p, |g, b| gru_step(g, b, "rnn", b.get("x")?, b.get("h")?));
        assert!(err <= REL_TOL, "gru seed {seed}: {err:e}");
        let err = check(&p, |g, b| {
            let h1 = gru_step(g, b, "rnn", b.get("x")?, b.get("h")?)?;
            gru_step(g, b, "rnn", b.get("x")?, h1)
        });
        assert!(err <= REL_TOL, "gru unroll seed {seed}: {err:e}");
    }
}

fn small_config(rng: &mut Rng) -> ModelConfig {
    ModelConfig {
        n_agents: rng.gen_range(1..4),
        n_actions: rng.gen_range(2..4),
        obs_dim: rng.gen_range(1..3),
        agent_hidden: 4,
        rnn_hidden: 3,
        mixer_hidden: 4,
        transform_hidden: 4,
        hyper_embed: 3,
        share_params: rng.gen_bool(0.5),
        unconstrained_omega: rng.gen_bool(0.2),
    }
}

fn random_batch(rng: &mut Rng, c: &ModelConfig) -> EpisodeBatch {
    let obs = |rng: &mut Rng| -> Vec<Vec<f64>> {
        (0..c.n_agents)
            .map(|_| (0..c.obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    };
    let episodes: Vec<Episode> = (0..rng.gen_range(1..4))
        .map(|_| {
            let first = obs(rng);
            let mut e = Episode::new(c.n_agents, c.obs_dim, &first);
            let len = rng.gen_range(1..4);
            for t in 0..len {
                let a: Vec<usize> = (0..c.n_agents)
                    .map(|_| rng.gen_range(0..c.n_actions))
                    .collect();
                let next = obs(rng);
                e.push(
                    &a,
                    rng.gen_range(-2.0..2.0),
                    t + 1 == len && rng.gen_bool(0.7),
                    &next,
                );
            }
            e
        })
        .collect();
    let refs: Vec<&Episode> = episodes.iter().collect();
    EpisodeBatch::from_episodes(&refs, None).unwrap()
}

#[test]
fn full_losses_match_finite_differences() {
    let (mut checked, mut skipped) = (0usize, 0usize);
    for seed in 0..CONFIGS {
        let mut rng = stream(seed, Stream::Test);
        let variant = Variant::ALL[seed as usize % Variant::ALL.len()];
        let c = small_config(&mut rng);
        let mut model = FactorizationModel::new(variant, c, seed);
        // Zero biases can leave exact ties; move to a generic point.
        for (_, t) in model.params.iter_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let target = FactorizationModel::new(variant, c, seed + 1000).params;
        let batch = random_batch(&mut rng, &c);
        let cfg = LossConfig {
            gamma: 0.9,
            v1: rng.gen_range(0.0..2.0),
            v2: rng.gen_range(0.0..2.0),
            literal_min_penalty: rng.gen_bool(0.3),
            penalty_all_actions: rng.gen_bool(0.3),
            regularize_next_obs: rng.gen_bool(0.5),
        };

        let mut lg = build_loss(&model, &target, &batch, &cfg).unwrap();
        lg.graph.backward(lg.loss).unwrap();
        let loss_at = |params: &ParamSet| {
            let m = FactorizationModel {
                params: params.clone(),
                ..model.clone()
            };
            build_loss(&m, &target, &batch, &cfg).unwrap().terms.loss
        };
        let base = lg.terms.loss;
        let shifted = |path: &str, k: usize, h: f64| {
            let mut p = model.params.clone();
            p.get_mut(path).unwrap().data_mut()[k] += h;
            loss_at(&p)
        };
        let mut worst: f64 = 0.0;
        for (path, t) in model.params.iter() {
            let analytic = lg.graph.grad(lg.bound.get(path).unwrap()).unwrap().to_vec();
            // A handful of coordinates per tensor keeps the suite fast.
            for _ in 0..3 {
                let k = rng.gen_range(0..t.numel());
                let (up, down) = (shifted(path, k, STEP), shifted(path, k, -STEP));
                let numeric = (up - down) / (2.0 * STEP);
                // Kinks and greedy-action flips show up as unequal one-sided slopes.
                if rel_err((up - base) / STEP, (base - down) / STEP) > 1e-2 {
                    skipped += 1;
                    continue;
                }
                checked += 1;
                let err = rel_err(analytic[k], numeric);
                assert!(
                    err <= REL_TOL,
                    "{variant} seed {seed} {path}[{k}]: analytic {} numeric {numeric} ({err:e})",
                    analytic[k]
                );
                worst = worst.max(err);
            }
        }
        assert!(worst.is_finite());
    }
    assert!(
        skipped * 50 <= checked,
        "{skipped} discontinuous of {checked}"
    );
}
