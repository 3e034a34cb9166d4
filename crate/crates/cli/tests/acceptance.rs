//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,4,8` restricts the run to the listed criteria.

use std::any::Any;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hsrl_cli::commands::SweepAxis;
use hsrl_cli::config::{RunConfig, SimulatorKind};
use hsrl_cli::pipeline::{median, run_method, Method, Prepared};
use hsrl_core::catalog::Catalog;
use hsrl_core::env::{
    generate_synthetic, ClickModel, EnvConfig, EnvError, Environment, SessionState, Simulator,
    SyntheticConfig, UserPool,
};
use hsrl_core::hpn::{
    ContextTrajectory, Interaction, PolicyConfig, PolicyNetwork, PolicyOutput, SlateMode, UserState,
};
use hsrl_core::mlc::{Critic, CriticConfig};
use hsrl_core::numerics::gradcheck::{
    max_relative_error, numeric_gradient, numeric_param_gradient,
};
use hsrl_core::numerics::{Bound, Graph, ParamId, ParamStore, Tensor, Var, LAYER_NORM_EPS};
use hsrl_core::tokenizer::{codebook_to_bytes, fit_codebook, ItemEmbedding, SemanticId, SidIndex};
use hsrl_core::trainer::{
    bc_graph, bc_loss, clipped_advantage, critic_loss, entropy_graph, entropy_term, rollout,
    slate_log_prob, slate_log_prob_graph, td_target, train, training_rng, Agent, AgentSpec,
    TrainConfig, Transition, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
}

// ---------------------------------------------------------------------------
// Gradient suite

const CASES: u64 = 100;
const PRIMITIVE_TOL: f64 = 1e-4;
const COMPOSITE_TOL: f64 = 1e-3;

/// Analytic against numeric gradient of a scalar graph with respect to one
/// vector input.
fn input_error(x: &[f64], build: impl Fn(&mut Graph, Var) -> Var) -> f64 {
    let eval = |xs: &[f64]| {
        let mut g = Graph::new();
        let v = g.param(&Tensor::vector(xs.to_vec()));
        let out = build(&mut g, v);
        g.scalar(out)
    };
    let mut g = Graph::new();
    let v = g.param(&Tensor::vector(x.to_vec()));
    let out = build(&mut g, v);
    let analytic = g.backward(out).unwrap().get(v).unwrap().to_vec();
    max_relative_error(&analytic, &numeric_gradient(x, eval))
}

/// Analytic against numeric gradient with respect to stored parameters.
fn param_error(
    store: &ParamStore,
    ids: &[ParamId],
    build: impl Fn(&mut Graph, &Bound) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let out = build(&mut g, &bound);
    let grads = bound.gradients(store, &g.backward(out).unwrap());
    ids.iter()
        .map(|&id| {
            let numeric = numeric_param_gradient(store, id, |s| {
                let mut g = Graph::new();
                let b = s.bind_frozen(&mut g);
                let o = build(&mut g, &b);
                g.scalar(o)
            });
            max_relative_error(grads.get(id), &numeric)
        })
        .fold(0.0, f64::max)
}

fn small_policy(vocab: Vec<usize>, seed: u64) -> PolicyNetwork {
    let config = PolicyConfig {
        d_model: 6,
        history_window: 3,
        profile_dim: 0,
        vocab_sizes: vocab,
        flat: false,
    };
    PolicyNetwork::new(
        config,
        Catalog::new(0..8),
        None,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn small_critic(levels: usize, rng: &mut impl Rng) -> Critic {
    let mut config = CriticConfig::new(6, levels);
    config.hidden = 5;
    let mut c = Critic::new(config, rng).unwrap();
    let w = c.mix_weights();
    let n = c.params().get(w).len();
    let values = rand_vec(rng, n);
    c.params_mut()
        .get_mut(w)
        .data_mut()
        .copy_from_slice(&values);
    c
}

fn random_state(rng: &mut impl Rng) -> UserState {
    let n = rng.random_range(0..5);
    UserState::with_history(
        vec![],
        3,
        (0..n).map(|_| Interaction {
            item: rng.random_range(0..8),
            clicked: rng.random_bool(0.5),
        }),
    )
}

fn random_sid(rng: &mut impl Rng, vocab: &[usize]) -> SemanticId {
    SemanticId::new(
        vocab
            .iter()
            .map(|&t| rng.random_range(0..t) as u16)
            .collect(),
    )
}

/// Worst error per operation family over all seeded cases.
#[derive(Default)]
struct Worst(BTreeMap<&'static str, f64>);

impl Worst {
    fn note(&mut self, name: &'static str, err: f64) {
        let e = self.0.entry(name).or_insert(0.0);
        *e = e.max(err);
    }
}

fn gradient_suite() -> Outcome {
    let mut primitives = Worst::default();
    let mut composites = Worst::default();
    let vocab = vec![3, 4, 3];
    for case in 0..CASES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);

        let x = rand_vec(&mut rng, 12);
        let q = Tensor::vector(rand_vec(&mut rng, 12));
        primitives.note(
            "softmax",
            input_error(&x, |g, v| {
                let p = g.softmax(v).unwrap();
                let c = g.constant(&q);
                g.dot(p, c).unwrap()
            }),
        );
        primitives.note(
            "log_softmax",
            input_error(&x, |g, v| {
                let p = g.log_softmax(v).unwrap();
                let c = g.constant(&q);
                g.dot(p, c).unwrap()
            }),
        );
        let gain = Tensor::vector(rand_vec(&mut rng, 12));
        let bias = Tensor::vector(rand_vec(&mut rng, 12));
        let xt = Tensor::vector(x.clone());
        primitives.note(
            "layer_norm",
            input_error(&x, |g, v| {
                let (gn, b, c) = (g.constant(&gain), g.constant(&bias), g.constant(&q));
                let y = g.layer_norm(v, gn, b).unwrap();
                g.dot(y, c).unwrap()
            }),
        );
        primitives.note(
            "layer_norm",
            input_error(gain.data(), |g, v| {
                let (xv, b, c) = (g.constant(&xt), g.constant(&bias), g.constant(&q));
                let y = g.layer_norm(xv, v, b).unwrap();
                g.dot(y, c).unwrap()
            }),
        );
        primitives.note(
            "layer_norm",
            input_error(bias.data(), |g, v| {
                let (xv, gn) = (g.constant(&xt), g.constant(&gain));
                let y = g.layer_norm(xv, gn, v).unwrap();
                let y = g.tanh(y).unwrap();
                g.sum(y).unwrap()
            }),
        );

        // Residual recursion: every level distribution and the final context.
        let net = small_policy(vocab.clone(), case);
        let c0 = rand_vec(&mut rng, 6);
        let probes: Vec<Tensor> = vocab
            .iter()
            .map(|&t| Tensor::vector(rand_vec(&mut rng, t)))
            .collect();
        let last = Tensor::vector(rand_vec(&mut rng, 6));
        let hrsm = |g: &mut Graph, p: &Bound, c0: Var| {
            let trace = net.forward_graph(g, p, c0).unwrap();
            let mut terms = Vec::new();
            for (pv, q) in trace.probs.iter().zip(&probes) {
                let qv = g.constant(q);
                terms.push(g.dot(*pv, qv).unwrap());
            }
            let lv = g.constant(&last);
            terms.push(g.dot(*trace.contexts.last().unwrap(), lv).unwrap());
            let joined = g.concat(&terms).unwrap();
            g.sum(joined).unwrap()
        };
        let c0t = Tensor::vector(c0.clone());
        composites.note(
            "hrsm",
            param_error(net.params(), &net.head_param_ids(), |g, p| {
                let c = g.constant(&c0t);
                hrsm(g, p, c)
            }),
        );
        composites.note(
            "hrsm",
            input_error(&c0, |g, v| {
                let p = net.params().bind_frozen(g);
                hrsm(g, &p, v)
            }),
        );

        // Critic: per-level values and their softmax-weighted aggregate.
        let critic = small_critic(3, &mut rng);
        let ids: Vec<ParamId> = critic.params().ids().collect();
        let flat: Vec<f64> = (0..4).flat_map(|_| rand_vec(&mut rng, 6)).collect();
        let vprobe = Tensor::vector(rand_vec(&mut rng, 4));
        let contexts = |g: &mut Graph, flat: &[f64]| -> Vec<Var> {
            flat.chunks(6)
                .map(|c| g.vector(c.to_vec()).unwrap())
                .collect()
        };
        let per_level = |g: &mut Graph, p: &Bound, ctx: &[Var]| {
            let v = critic.per_level_values_graph(g, p, ctx).unwrap();
            let q = g.constant(&vprobe);
            g.dot(v, q).unwrap()
        };
        composites.note(
            "per_level_values",
            param_error(critic.params(), &ids, |g, p| {
                let ctx = contexts(g, &flat);
                per_level(g, p, &ctx)
            }),
        );
        let split = |g: &mut Graph, v: Var| -> Vec<Var> {
            (0..4)
                .map(|l| {
                    let parts: Vec<Var> = (0..6).map(|i| g.index(v, l * 6 + i).unwrap()).collect();
                    g.concat(&parts).unwrap()
                })
                .collect()
        };
        composites.note(
            "per_level_values",
            input_error(&flat, |g, v| {
                let p = critic.params().bind_frozen(g);
                let ctx = split(g, v);
                per_level(g, &p, &ctx)
            }),
        );
        composites.note(
            "aggregation",
            param_error(critic.params(), &ids, |g, p| {
                let ctx = contexts(g, &flat);
                critic.value_graph(g, p, &ctx).unwrap()
            }),
        );
        composites.note(
            "aggregation",
            input_error(&flat, |g, v| {
                let p = critic.params().bind_frozen(g);
                let ctx = split(g, v);
                critic.value_graph(g, &p, &ctx).unwrap()
            }),
        );

        // Loss terms through the state encoder and the full recursion.
        let state = random_state(&mut rng);
        let sids: Vec<SemanticId> = (0..3).map(|_| random_sid(&mut rng, &vocab)).collect();
        let mut feedback: Vec<bool> = (0..3).map(|_| rng.random_bool(0.5)).collect();
        feedback[rng.random_range(0..3)] = true;
        let advantage = rng.random_range(-1.0..1.0);
        let all: Vec<ParamId> = net.params().ids().collect();
        let trace = |g: &mut Graph, p: &Bound| {
            let c0 = net.encode_graph(g, p, &state).unwrap();
            net.forward_graph(g, p, c0).unwrap()
        };
        composites.note(
            "policy_gradient",
            param_error(net.params(), &all, |g, p| {
                let t = trace(g, p);
                let lp = slate_log_prob_graph(g, &t, &sids).unwrap();
                g.scale(lp, -advantage).unwrap()
            }),
        );
        composites.note(
            "entropy",
            param_error(net.params(), &all, |g, p| {
                let t = trace(g, p);
                entropy_graph(g, &t).unwrap()
            }),
        );
        composites.note(
            "behavioral_cloning",
            param_error(net.params(), &all, |g, p| {
                let t = trace(g, p);
                bc_graph(g, &t, &sids, &feedback).unwrap().unwrap()
            }),
        );
        let trajectories: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).flat_map(|_| rand_vec(&mut rng, 6)).collect())
            .collect();
        let targets: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        composites.note(
            "critic_mse",
            param_error(critic.params(), &ids, |g, p| {
                let sq: Vec<Var> = trajectories
                    .iter()
                    .zip(&targets)
                    .map(|(flat, &q)| {
                        let ctx = contexts(g, flat);
                        let v = critic.value_graph(g, p, &ctx).unwrap();
                        let qv = g.scalar_const(q).unwrap();
                        let d = g.sub(v, qv).unwrap();
                        g.mul(d, d).unwrap()
                    })
                    .collect();
                let joined = g.concat(&sq).unwrap();
                g.mean(joined).unwrap()
            }),
        );
    }
    for (name, err) in &primitives.0 {
        ensure(*err < PRIMITIVE_TOL, || {
            format!("{name}: relative error {err:e}")
        })?;
    }
    for (name, err) in &composites.0 {
        ensure(*err < COMPOSITE_TOL, || {
            format!("{name}: relative error {err:e}")
        })?;
    }
    let fmt = |w: &Worst| {
        w.0.iter()
            .map(|(n, e)| format!("{n} {e:.1e}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Ok(format!(
        "{CASES} cases; worst primitive: {}; worst composite: {}",
        fmt(&primitives),
        fmt(&composites)
    ))
}

// ---------------------------------------------------------------------------
// Tokenizer suite

fn random_items(n: usize, d: usize, seed: u64) -> Vec<ItemEmbedding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|item_id| ItemEmbedding {
            item_id,
            vector: rand_vec(&mut rng, d),
        })
        .collect()
}

/// Adjusted Rand index from the pair-counting contingency table.
fn adjusted_rand(a: &[usize], b: &[usize]) -> f64 {
    let choose2 = |n: usize| (n * n.saturating_sub(1)) as f64 / 2.0;
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut ra: BTreeMap<usize, usize> = BTreeMap::new();
    let mut rb: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sa: f64 = ra.values().map(|&n| choose2(n)).sum();
    let sb: f64 = rb.values().map(|&n| choose2(n)).sum();
    let expected = sa * sb / choose2(a.len());
    (index - expected) / (0.5 * (sa + sb) - expected)
}

fn tokenizer_suite() -> Outcome {
    for seed in 0..20 {
        let items = random_items(80, 5, seed);
        let fit = fit_codebook(&items, &[6, 5, 4], seed).unwrap();
        ensure(fit.level_errors.windows(2).all(|w| w[1] <= w[0]), || {
            format!(
                "seed {seed}: residual errors {:?} not monotone",
                fit.level_errors
            )
        })?;

        let mut seen = BTreeSet::new();
        for (_, bucket) in fit.index.buckets() {
            for &item in bucket {
                ensure(seen.insert(item), || {
                    format!("seed {seed}: item {item} in two buckets")
                })?;
            }
        }
        ensure(
            seen.len() == items.len() && fit.index.len() == items.len(),
            || {
                format!(
                    "seed {seed}: buckets cover {} of {} items",
                    seen.len(),
                    items.len()
                )
            },
        )?;

        let again = fit_codebook(&items, &[6, 5, 4], seed).unwrap();
        ensure(
            codebook_to_bytes(&fit.codebook, &fit.index)
                == codebook_to_bytes(&again.codebook, &again.index),
            || format!("seed {seed}: refit differs"),
        )?;

        let single = fit_codebook(&items, &[7], seed).unwrap();
        let centroids = single.codebook.centroids(0);
        for e in &items {
            let mut best = (f64::INFINITY, 0);
            for (k, c) in centroids.chunks(5).enumerate() {
                let d: f64 = c
                    .iter()
                    .zip(&e.vector)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, k);
                }
            }
            let got = single.index.sid(e.item_id).unwrap().token(0);
            ensure(got == best.1, || {
                format!(
                    "seed {seed}: item {} got {got}, nearest {}",
                    e.item_id, best.1
                )
            })?;
        }
    }

    // The asserted case is the acceptance setting: the default generator
    // and tokenizer seeds. Other generator seeds are reported alongside.
    let recovery = |seed: u64| {
        let data = generate_synthetic(&SyntheticConfig {
            items: 300,
            clusters: 8,
            seed,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let fit = fit_codebook(&data.embeddings, &[8, 16, 16], 0).unwrap();
        let truth: Vec<usize> = data
            .embeddings
            .iter()
            .map(|e| data.click_model.item_cluster(e.item_id).unwrap())
            .collect();
        let tokens: Vec<usize> = data
            .embeddings
            .iter()
            .map(|e| fit.index.sid(e.item_id).unwrap().token(0))
            .collect();
        adjusted_rand(&truth, &tokens)
    };
    let ari = recovery(RunConfig::default().seeds.simulator);
    ensure(ari > 0.95, || format!("adjusted agreement {ari:.4}"))?;
    let others: Vec<f64> = (1..12).map(recovery).collect();
    let above = others.iter().filter(|a| **a > 0.95).count();
    let low = others.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "20 random catalogs checked; planted clusters recovered with adjusted agreement {ari:.4} \
         (generator seeds 1-11: {above} of 11 above 0.95, lowest {low:.4})"
    ))
}

// ---------------------------------------------------------------------------
// Policy normalization

fn enumerate_mass(out: &PolicyOutput) -> f64 {
    let sizes: Vec<usize> = out.probs.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().product();
    (0..total)
        .map(|mut code| {
            let tokens: Vec<u16> = sizes
                .iter()
                .map(|&t| {
                    let tok = code % t;
                    code /= t;
                    tok as u16
                })
                .collect();
            out.sid_prob(&SemanticId::new(tokens)).unwrap()
        })
        .sum()
}

fn policy_normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    for draw in 0..20 {
        let net = small_policy(vec![4, 4, 4], 500 + draw);
        for out in [
            net.forward(&rand_vec(&mut rng, 6)).unwrap(),
            net.infer(&random_state(&mut rng)).unwrap(),
        ] {
            let mass = enumerate_mass(&out);
            worst = worst.max((mass - 1.0).abs());
        }
    }
    ensure(worst < 1e-9, || {
        format!("mass deviates from 1 by {worst:e}")
    })?;

    let net = small_policy(vec![4, 4, 4], 3);
    for level in 0..3 {
        for z in 0..4 {
            let mut g = Graph::new();
            let p = net.params().bind_frozen(&mut g);
            let c = g.vector(rand_vec(&mut rng, 6)).unwrap();
            let onehot = g
                .vector((0..4).map(|i| f64::from(u8::from(i == z))).collect())
                .unwrap();
            let (e, next) = net.hrsm_step(&mut g, &p, level, c, onehot).unwrap();
            let row = net.params().get(net.token_embedding(level)).row(z);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            ensure(bits(g.value(e)) == bits(row), || {
                format!("level {level} token {z}: expectation is not the row")
            })?;
            let diff: Vec<f64> = g.value(c).iter().zip(row).map(|(a, b)| a - b).collect();
            let mean = diff.iter().sum::<f64>() / 6.0;
            let var = diff.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
            for (got, x) in g.value(next).iter().zip(&diff) {
                let want = (x - mean) / (var + LAYER_NORM_EPS).sqrt();
                ensure((got - want).abs() < 1e-12, || {
                    format!("level {level} token {z}: refined context off")
                })?;
            }
        }
    }
    Ok(format!(
        "40 distributions over 64 ids, worst |Σπ − 1| = {worst:.1e}; one-hot alignment exact"
    ))
}

// ---------------------------------------------------------------------------
// Loss-formula oracle

fn output_from_probs(probs: Vec<Vec<f64>>) -> PolicyOutput {
    let levels = probs.len();
    PolicyOutput {
        log_probs: probs
            .iter()
            .map(|p| p.iter().map(|v| v.ln()).collect())
            .collect(),
        probs,
        trajectory: ContextTrajectory(vec![vec![0.0; 2]; levels + 1]),
    }
}

fn close(a: f64, b: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= 1e-12, || {
        format!("{what}: got {a}, expected {b}")
    })
}

fn sid(tokens: &[u16]) -> SemanticId {
    SemanticId::new(tokens.to_vec())
}

fn loss_oracle() -> Outcome {
    close(td_target(1.0, false, 0.5, 0.9), 1.45, "td target")?;
    close(td_target(1.0, true, 123.0, 0.9), 1.0, "terminal td target")?;
    close(td_target(-0.2, false, 0.0, 0.9), -0.2, "zero bootstrap")?;
    close(clipped_advantage(1.45, 2.0, 1.0), -0.55, "advantage")?;
    close(clipped_advantage(3.0, 0.0, 1.0), 1.0, "upper clip")?;
    close(clipped_advantage(-7.0, 0.0, 1.0), -1.0, "lower clip")?;
    close(critic_loss(&[0.0, 2.0], &[1.0, 0.0]), 2.5, "critic loss")?;

    let uniform = output_from_probs(vec![vec![0.25; 4]; 3]);
    close(
        entropy_term(&uniform),
        -3.0 * 4f64.ln(),
        "uniform entropy term",
    )?;
    ensure((entropy_term(&uniform) + 4.1589).abs() < 1e-4, || {
        "entropy term is not −4.1589".into()
    })?;
    let one_hot = output_from_probs(vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]]);
    close(entropy_term(&one_hot), 0.0, "one-hot entropy term")?;

    let u64s = output_from_probs(vec![vec![1.0 / 64.0; 64]; 3]);
    let lp = slate_log_prob(&u64s, &[sid(&[0, 5, 63]), sid(&[17, 17, 2])]).unwrap();
    close(
        lp,
        3.0 * (1.0f64 / 64.0).ln(),
        "uniform slate log-likelihood",
    )?;

    let e2 = (-2.0f64).exp();
    let single = output_from_probs(vec![vec![e2, 1.0 - e2]]);
    close(
        bc_loss(&single, &[sid(&[0]), sid(&[1])], &[true, false]).unwrap(),
        2.0,
        "behavioral cloning",
    )?;
    let out = output_from_probs(vec![vec![0.25; 4], vec![0.5, 0.5]]);
    let sids = [sid(&[0, 0]), sid(&[1, 1]), sid(&[3, 0])];
    close(
        bc_loss(&out, &sids, &[true, true, true]).unwrap(),
        -(0.25f64 * 0.5).ln(),
        "behavioral cloning, all positive",
    )?;

    ensure(bc_loss(&out, &sids, &[false; 3]).unwrap() == 0.0, || {
        "BC is not exactly 0 without positives".into()
    })?;
    let net = small_policy(vec![4, 2], 1);
    let mut g = Graph::new();
    let p = net.params().bind(&mut g);
    let c0 = net
        .encode_graph(&mut g, &p, &UserState::new(vec![], 3))
        .unwrap();
    let trace = net.forward_graph(&mut g, &p, c0).unwrap();
    ensure(
        bc_graph(&mut g, &trace, &sids, &[false; 3])
            .unwrap()
            .is_none(),
        || "BC graph term present without positives".into(),
    )?;
    Ok("td target, advantage clip, entropy, slate likelihood and BC match to 1e-12".into())
}

// ---------------------------------------------------------------------------
// Overfitting one batch

struct LowIds;

impl ClickModel for LowIds {
    fn click_probs(&self, _: &SessionState, slate: &[u64]) -> Result<Vec<f64>, EnvError> {
        Ok(slate
            .iter()
            .map(|&i| if i < 4 { 0.9 } else { 0.05 })
            .collect())
    }
}

struct AlwaysClick;

impl ClickModel for AlwaysClick {
    fn click_probs(&self, _: &SessionState, slate: &[u64]) -> Result<Vec<f64>, EnvError> {
        Ok(vec![1.0; slate.len()])
    }
}

fn toy_env<M: ClickModel>(model: M) -> Simulator<M> {
    let config = EnvConfig {
        slate_size: 3,
        history_window: 6,
        ..EnvConfig::default()
    };
    let pool = UserPool::new(vec![
        (0, vec![]),
        (
            1,
            vec![Interaction {
                item: 2,
                clicked: true,
            }],
        ),
        (
            2,
            vec![Interaction {
                item: 9,
                clicked: true,
            }],
        ),
    ]);
    Simulator::new(model, config, pool).unwrap()
}

fn toy_agent(learning_rate: f64, seed: u64) -> Agent {
    let spec = AgentSpec {
        d_model: 8,
        history_window: 6,
        critic_hidden: 6,
        train: TrainConfig {
            batch_size: 4,
            learning_rate,
            ..TrainConfig::default()
        },
        ..AgentSpec::default()
    };
    let index =
        SidIndex::from_assignments((0..12u64).map(|i| (i, sid(&[(i % 4) as u16, (i / 4) as u16]))));
    Agent::new(
        spec,
        &[4, 4],
        Catalog::new(0..12),
        index,
        None,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

fn toy_transitions(agent: &Agent, n: usize, seed: u64) -> Vec<Transition> {
    let env = toy_env(LowIds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < n {
        out.extend(
            rollout(&env, agent, SlateMode::Sample, &mut rng)
                .unwrap()
                .transitions,
        );
    }
    out.truncate(n);
    out
}

fn overfit_one_batch() -> Outcome {
    let mut a = toy_agent(0.01, 21);
    let batch = toy_transitions(&a, 16, 5);
    let first = a.train_step(&batch).unwrap().critic;
    let mut last = first;
    for _ in 0..199 {
        last = a.train_step(&batch).unwrap().critic;
    }
    ensure(last <= 0.5 * first, || {
        format!("critic loss {first:.4} -> {last:.4}")
    })?;

    let mut b = toy_agent(1e-3, 13);
    let mut t = toy_transitions(&b, 1, 6).remove(0);
    t.reward = 1.0;
    t.done = true;
    t.feedback = vec![true; t.sids.len()];
    let batch = vec![t.clone()];
    let log_prob =
        |a: &Agent| slate_log_prob(&a.policy().infer(&t.state).unwrap(), &t.sids).unwrap();
    let start = log_prob(&b);
    let mut prev = start;
    for step in 0..50 {
        let report = b.train_step(&batch).unwrap();
        ensure(report.mean_advantage > 0.0, || {
            format!("advantage vanished at step {step}")
        })?;
        let now = log_prob(&b);
        ensure(now > prev, || {
            format!("step {step}: log-prob {prev} -> {now}")
        })?;
        prev = now;
    }
    Ok(format!(
        "critic loss {first:.4} -> {last:.4} in 200 steps; log-prob {start:.4} -> {prev:.4}, increasing at each of 50 steps"
    ))
}

// ---------------------------------------------------------------------------
// End-to-end directional replication

const E2E_SEEDS: u64 = 5;

fn end_to_end() -> Outcome {
    let config = RunConfig::default();
    ensure(
        config.synthetic.items == 300
            && config.synthetic.clusters == 8
            && config.tokenizer.vocab_sizes == [16, 16, 16]
            && config.simulator.slate_size == 5
            && config.simulator.horizon == 20
            && config.agent.gamma == 0.9
            && config.agent.iterations == 20_000,
        || "default config drifted from the acceptance setting".into(),
    )?;
    let prepared = Prepared::new(&config).unwrap();
    let mut per_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for seed in 0..E2E_SEEDS {
        for method in [
            Method::Rl(Variant::Full),
            Method::Rl(Variant::NoEntropy),
            Method::Supervised,
        ] {
            let (_, summary) = run_method(&prepared, method, seed).unwrap();
            println!(
                "    seed {seed} {:<10} median reward {:.4} mean {:.4} median depth {:.1}",
                method.name(),
                summary.reward_median,
                summary.reward_mean,
                summary.depth_median
            );
            per_method
                .entry(method.name())
                .or_default()
                .push(summary.reward_median);
        }
    }
    let full = median(&per_method["full"]);
    let no_entropy = median(&per_method["no_entropy"]);
    let bc = median(&per_method["bc_only"]);
    let detail = format!("median over {E2E_SEEDS} seeds: full {full:.4}, no_entropy {no_entropy:.4}, bc_only {bc:.4}");
    ensure(full > bc, || {
        format!("full does not beat bc_only; {detail}")
    })?;
    ensure(full >= no_entropy, || {
        format!("no_entropy beats full; {detail}")
    })?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Protocol fidelity

fn check_rollouts<E: Environment>(
    env: &E,
    agent: &Agent,
    mode: SlateMode,
    episodes: u64,
    seen: &mut (usize, usize),
) -> Result<(), String> {
    for e in 0..episodes {
        let mut rng = ChaCha8Rng::seed_from_u64(e);
        let ep = rollout(env, agent, mode, &mut rng).unwrap();
        ensure(
            ep.metrics.depth <= 20 && ep.metrics.depth == ep.transitions.len(),
            || format!("episode depth {}", ep.metrics.depth),
        )?;
        for t in &ep.transitions {
            ensure((-0.2..=1.0).contains(&t.reward), || {
                format!("reward {} outside [-0.2, 1.0]", t.reward)
            })?;
        }
        seen.0 += ep.transitions.len();
        seen.1 = seen.1.max(ep.metrics.depth);
    }
    Ok(())
}

fn protocol_fidelity() -> Outcome {
    let mut seen = (0, 0);
    let always = toy_env(AlwaysClick);
    let agent = toy_agent(1e-3, 1);
    check_rollouts(&always, &agent, SlateMode::Sample, 20, &mut seen)?;
    ensure(seen.1 == 20, || {
        format!("always-click sessions stop at depth {}", seen.1)
    })?;

    for kind in [SimulatorKind::Learned, SimulatorKind::Planted] {
        let mut config = RunConfig::default();
        config.simulator.kind = kind;
        config.agent.iterations = 300;
        let prepared = Prepared::new(&config).unwrap();
        let mut agent = prepared.agent(0).unwrap();
        for env in [&prepared.simulators.train, &prepared.simulators.eval] {
            check_rollouts(env, &agent, SlateMode::Sample, 50, &mut seen)?;
        }
        let mut rng = training_rng(0, 0);
        train(
            &mut agent,
            &prepared.simulators.train,
            &[],
            &mut rng,
            |report, _| {
                for m in &report.finished {
                    assert!(m.depth <= 20, "training episode depth {}", m.depth);
                    assert!(
                        m.total_reward >= -0.2 * m.depth as f64 - 1e-12
                            && m.total_reward <= m.depth as f64 + 1e-12
                    );
                }
                Ok(())
            },
        )
        .unwrap();
        for env in [&prepared.simulators.train, &prepared.simulators.eval] {
            check_rollouts(env, &agent, SlateMode::Sample, 50, &mut seen)?;
            check_rollouts(env, &agent, SlateMode::Greedy, 50, &mut seen)?;
        }
    }

    ensure(SweepAxis::ENTROPY_GRID.contains(&0.1), || {
        "entropy grid lacks 0.1".into()
    })?;
    ensure(SweepAxis::VOCAB_GRID.contains(&80), || {
        "vocabulary grid lacks 80".into()
    })?;
    ensure(SweepAxis::LEVELS_GRID.contains(&4), || {
        "levels grid lacks 4".into()
    })?;
    let base = RunConfig::default();
    ensure(
        SweepAxis::Vocab
            .grid(&base)
            .iter()
            .any(|(_, c)| c.tokenizer.vocab_sizes == [80, 80, 80]),
        || "vocabulary sweep never builds T = 80".into(),
    )?;
    ensure(
        SweepAxis::Levels
            .grid(&base)
            .iter()
            .any(|(_, c)| c.tokenizer.vocab_sizes.len() == 4),
        || "levels sweep never builds L = 4".into(),
    )?;
    Ok(format!(
        "{} steps checked, deepest session {}; grids include λ_en = 0.1, T = 80, L = 4",
        seen.0, seen.1
    ))
}

// ---------------------------------------------------------------------------
// Reproducibility

const REPRO_CONFIG: &str = r#"
[synthetic]
items = 150
users = 60
records_per_user = 6

[simulator]
epochs = 2

[agent]
iterations = 30
batch_size = 4

[eval]
episodes = 5
every = 10
log_every = 5
"#;

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, REPRO_CONFIG).map_err(|e| e.to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_hsrl"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn output_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

fn reproducibility() -> Outcome {
    let commands: [&[&str]; 9] = [
        &["gen-data"],
        &["tokenize"],
        &["fit-sim"],
        &["train"],
        &["eval"],
        &["train", "--baseline"],
        &["sweep", "--axis", "entropy"],
        &["sweep", "--axis", "levels"],
        &["ablate"],
    ];
    let mut compared = 0;
    for args in commands {
        let runs: Vec<tempfile::TempDir> =
            (0..2).map(|_| tempfile::TempDir::new().unwrap()).collect();
        if args == ["eval"] {
            for r in &runs {
                run_cli(r.path(), &["train"])?;
            }
        }
        for r in &runs {
            run_cli(r.path(), args)?;
        }
        let (a, b) = (output_files(runs[0].path()), output_files(runs[1].path()));
        ensure(a.keys().eq(b.keys()), || {
            format!("{args:?}: different output files")
        })?;
        for (name, bytes) in &a {
            ensure(b[name] == *bytes, || {
                format!("{args:?}: {name} differs between reruns")
            })?;
        }
        compared += a.len();
    }
    let mut cfg = RunConfig::from_toml(REPRO_CONFIG).unwrap();
    cfg.agent.iterations = 2;
    ensure(
        SweepAxis::Vocab
            .grid(&cfg)
            .iter()
            .all(|(_, c)| c.validate().is_ok()),
        || "vocabulary sweep builds an invalid config".into(),
    )?;
    Ok(format!(
        "{} commands rerun, {compared} output files bitwise identical",
        commands.len()
    ))
}

// ---------------------------------------------------------------------------

fn panic_message(p: Box<dyn Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "gradient suite", gradient_suite),
        (2, "tokenizer suite", tokenizer_suite),
        (3, "policy normalization", policy_normalization),
        (4, "loss-formula oracle", loss_oracle),
        (5, "overfit one batch", overfit_one_batch),
        (6, "end-to-end directional replication", end_to_end),
        (7, "protocol fidelity", protocol_fidelity),
        (8, "reproducibility", reproducibility),
    ];
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    let mut ran = 0;
    for (n, name, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| Err(panic_message(p)));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {detail}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
