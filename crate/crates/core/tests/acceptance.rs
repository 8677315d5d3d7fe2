//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnorm_shield::attack::{objective_and_grad, AttackConfig, AttackResult};
use tnorm_shield::defense::{calibrate_tau, pairing_score, PairingConfig, RejectionRule};
use tnorm_shield::harness::metrics::{acc_main, argmax_over, macro_f1};
use tnorm_shield::harness::{attack_dataset, classification_quality, gen_toy, toy_constraints, AttackedSet, ModelConfig, ToyConfig};
use tnorm_shield::knowledge::{ANIMALS_CLASSES, ANIMALS_KNOWLEDGE, ANIMALS_MAIN_COUNT, TOY_CLASSES, TOY_KNOWLEDGE};
use tnorm_shield::training::{select_lambda, total_batch_loss, train, LambdaSelection, LAMBDA_GRID};
use tnorm_shield::{
    bind_predicates, parse_knowledge_file, Activation, ConstraintSet, Dataset, MainClasses, Model, TrainConfig,
    WeightSet,
};

use common::*;

const PERCENT_LABELED: f64 = 30.0;
const PERCENT_PARTIAL: f64 = 50.0;
const TARGET_REJECT_RATE: f64 = 0.10;
const EPSILON_GRID: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5];
const WHITE_BOX_ALPHA: f64 = 1.0;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn animals_set() -> ConstraintSet {
    let kb = parse_knowledge_file(ANIMALS_KNOWLEDGE).unwrap();
    ConstraintSet::new(bind_predicates(&kb, &ANIMALS_CLASSES, &MainClasses::First(ANIMALS_MAIN_COUNT)).unwrap()).unwrap()
}

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-3,
        epochs: 100,
        ..TrainConfig::default()
    }
}

fn toy_world(seed: u64) -> ToyConfig {
    ToyConfig {
        percent_labeled: PERCENT_LABELED,
        percent_partial: PERCENT_PARTIAL,
        seed,
        ..ToyConfig::default()
    }
}

struct Fixture {
    cs: ConstraintSet,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    unconstrained: Model,
    selection: LambdaSelection,
    surrogate: Model,
    rule: RejectionRule,
    train_secs: f64,
}

fn fixture() -> Fixture {
    let start = Instant::now();
    let cs = toy_constraints().unwrap();
    let (train_set, val, test) = gen_toy(&toy_world(0)).unwrap();
    let init = ModelConfig::default().init(2, 4).unwrap();
    let cfg = toy_train_config();
    let (unconstrained, _) = train(&init, &train_set, &val, &cs, &cfg).unwrap();
    let selection = select_lambda(&init, &train_set, &val, &cs, &cfg, &LAMBDA_GRID).unwrap();
    let train_secs = start.elapsed().as_secs_f64();

    // Independent surrogate: other data draw, other init, no knowledge.
    let (s_train, s_val, _) = gen_toy(&toy_world(1)).unwrap();
    let s_init = ModelConfig { seed: 1, ..ModelConfig::default() }.init(2, 4).unwrap();
    let (surrogate, _) = train(&s_init, &s_train, &s_val, &cs, &cfg).unwrap();

    let rule = calibrate_tau(&selection.model, val.features(), &cs, TARGET_REJECT_RATE).unwrap();
    Fixture {
        cs,
        train: train_set,
        val,
        test,
        unconstrained,
        selection,
        surrogate,
        rule,
        train_secs,
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut checked = 0u64;
    for (text, names) in [
        (TOY_KNOWLEDGE, TOY_CLASSES.to_vec()),
        (ANIMALS_KNOWLEDGE, ANIMALS_CLASSES.to_vec()),
    ] {
        let kb = parse_knowledge_file(text).unwrap();
        let bound = bind_predicates(&kb, &names, &MainClasses::All).unwrap();
        let cs = ConstraintSet::new(bound).unwrap();
        for (wf, program) in kb.formulas().iter().zip(cs.programs()) {
            let preds: Vec<&str> = wf.formula.predicates().into_iter().collect();
            let k = preds.len();
            let total: u64 = 1 << k;
            let chunk: u64 = total.min(1 << 16);
            let zero = vec![0.0; chunk as usize];
            let mut cols: HashMap<usize, Vec<f64>> = HashMap::new();
            let mut a0 = 0u64;
            while a0 < total {
                for (j, p) in preds.iter().enumerate() {
                    let col = cols.entry(names.iter().position(|n| n == p).unwrap()).or_default();
                    // Columns of the low bits repeat from chunk to chunk.
                    if a0 == 0 || (1u64 << j) >= chunk {
                        col.clear();
                        col.extend((a0..a0 + chunk).map(|a| ((a >> j) & 1) as f64));
                    }
                }
                let columns: Vec<&[f64]> = (0..names.len())
                    .map(|i| cols.get(&i).map_or(zero.as_slice(), |c| c.as_slice()))
                    .collect();
                let degrees = program.truth_degree_batch(&columns).map_err(|e| e.to_string())?;
                for (w, block) in degrees.chunks(64).enumerate() {
                    let base = a0 + 64 * w as u64;
                    // base is a multiple of 64: bit j of assignment base + s is bit j of s for j < 6.
                    let masks: Vec<u64> = (0..k)
                        .map(|j| match j {
                            0..6 => (0..64u64).fold(0u64, |m, s| m | (((s >> j) & 1) << s)),
                            _ if (base >> j) & 1 == 1 => u64::MAX,
                            _ => 0,
                        })
                        .collect();
                    let bits = |name: &str| masks[preds.iter().position(|p| *p == name).unwrap()];
                    let truth = bool_eval_bits(&wf.formula, &bits);
                    for (s, &d) in block.iter().enumerate() {
                        let expected = if (truth >> s) & 1 == 1 { 1.0 } else { 0.0 };
                        if d != expected {
                            return Err(format!("line {}: degree {d} at assignment {}", wf.source_line, base + s as u64));
                        }
                    }
                }
                checked += chunk;
                a0 += chunk;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, format!("{checked} crisp assignments match exactly in {secs:.2}s"))
}

fn criterion_2(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 4];

    // Constraint polynomials.
    let names = ["A", "B", "C", "D", "E"];
    for _ in 0..100 {
        let f = random_formula(&mut rng, &names, 6);
        let program = tnorm_shield::ConstraintProgram::compile(&f, names.len(), |n| names.iter().position(|m| *m == n))
            .map_err(|e| e.to_string())?;
        let outs: Vec<f64> = (0..names.len()).map(|_| rng.random_range(0.05..0.95)).collect();
        let mut grad = vec![0.0; names.len()];
        program.accumulate_loss_grad(&outs, 1.0, &mut grad).unwrap();
        let fd = central_diff(&outs, 1e-5, |o| program.formula_loss(o).unwrap());
        worst[0] = worst[0].max(rel_err(&grad, &fd, 1e-8));
    }
    for _ in 0..100 {
        let outs: Vec<f64> = (0..4).map(|_| rng.random_range(0.05..0.95)).collect();
        let g = fx.cs.grad_outputs(WeightSet::Test, &outs).unwrap();
        let fd = central_diff(&outs, 1e-5, |o| fx.cs.sample_loss(WeightSet::Test, o).unwrap());
        worst[0] = worst[0].max(rel_err(&g, &fd, 1e-8));
    }

    // Network weights and inputs.
    let mut nets = 0;
    while nets < 100 {
        let depth = rng.random_range(0..=3);
        let mut sizes = vec![rng.random_range(1..5)];
        sizes.extend((0..depth).map(|_| rng.random_range(1..=32)));
        sizes.push(rng.random_range(1..5));
        let act = if rng.random_bool(0.5) { Activation::Relu } else { Activation::Tanh };
        let model = Model::init(&sizes, act, rng.random()).unwrap();
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        if min_abs_hidden_preactivation(&model, &x) < 1e-3 {
            continue;
        }
        let up: Vec<f64> = (0..model.num_classes()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let trace = model.forward(&x).unwrap();
        let dot = |m: &Model, x: &[f64]| m.forward(x).unwrap().logits.iter().zip(&up).map(|(l, u)| l * u).sum::<f64>();
        let gx = model.grad_input(&trace, &up).unwrap();
        let fdx = central_diff(&x, 1e-6, |x| dot(&model, x));
        let gw = model.grad_weights(&trace, &up).unwrap().flatten();
        let p = params(&model);
        let fdw = central_diff(&p, 1e-6, |p| dot(&with_params(&model, p), &x));
        worst[1] = worst[1].max(rel_err(&gx, &fdx, 1e-8)).max(rel_err(&gw, &fdw, 1e-8));
        nets += 1;
    }

    // Training objective.
    let small = ModelConfig { hidden: vec![6], activation: Activation::Tanh, seed: 0 };
    for i in 0..100 {
        let model = ModelConfig { seed: i, ..small.clone() }.init(2, 4).unwrap();
        let batch: Vec<usize> = (0..8).map(|_| rng.random_range(0..fx.train.len())).collect();
        let cfg = TrainConfig { lambda: LAMBDA_GRID[i as usize % LAMBDA_GRID.len()], ..TrainConfig::default() };
        let loss = total_batch_loss(&model, &fx.train, &batch, &fx.cs, &cfg).unwrap();
        let p = params(&model);
        let fd = central_diff(&p, 1e-6, |p| {
            total_batch_loss(&with_params(&model, p), &fx.train, &batch, &fx.cs, &cfg).unwrap().total
        });
        worst[2] = worst[2].max(rel_err(&loss.grads.flatten(), &fd, 1e-8));
    }

    // Attack objective with respect to the input.
    let target = &fx.selection.model;
    let cfg = AttackConfig { kappa: 2.0, alpha: 1.0, ..AttackConfig::default() };
    let mut attacks = 0;
    while attacks < 100 {
        let x = vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let logits = target.forward(&x).unwrap().logits;
        // Both margin terms strictly inside their unclamped range.
        let ps: Vec<usize> = (0..4).filter(|&k| logits[k] > -cfg.kappa + 1e-2).collect();
        let ns: Vec<usize> = (0..4).filter(|&k| logits[k] < cfg.kappa - 1e-2).collect();
        if ps.is_empty() || ns.is_empty() || min_abs_hidden_preactivation(target, &x) < 1e-3 {
            continue;
        }
        let p = ps[rng.random_range(0..ps.len())];
        let n = ns[rng.random_range(0..ns.len())];
        if p == n {
            continue;
        }
        let (_, g) = objective_and_grad(target, &x, Some(p), Some(n), &fx.cs, &cfg).unwrap();
        let fd = central_diff(&x, 1e-7, |x| objective_and_grad(target, x, Some(p), Some(n), &fx.cs, &cfg).unwrap().0);
        worst[3] = worst[3].max(rel_err(&g, &fd, 1e-8));
        attacks += 1;
    }

    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "max relative error: polynomial {:.1e}, network {:.1e}, training {:.1e}, attack {:.1e} ({secs:.1}s)",
        worst[0], worst[1], worst[2], worst[3]
    );
    ensure(worst[0] <= 1e-6 && worst[1..].iter().all(|&w| w <= 1e-4) && secs < 30.0, detail)
}

fn criterion_3(fx: &Fixture) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for cs in [fx.cs.clone(), animals_set()] {
        let c = cs.num_classes();
        let batch: Vec<Vec<f64>> = (0..10_000).map(|_| (0..c).map(|_| rng.random::<f64>()).collect()).collect();
        for set in [WeightSet::Train, WeightSet::Test] {
            let report = cs.constraint_loss(set, &batch).unwrap();
            let gamma = cs.gamma(set);
            if !(0.0..=gamma).contains(&report.total) || report.per_sample.iter().any(|s| !(0.0..=gamma).contains(s)) {
                return Err(format!("loss outside [0, {gamma}]"));
            }
        }
    }
    let mut worst = 0.0f64;
    let model = ModelConfig::default().init(2, 4).unwrap();
    for (i, &lambda) in LAMBDA_GRID.iter().enumerate() {
        let batch: Vec<usize> = (0..64).map(|_| rng.random_range(0..fx.train.len())).collect();
        let with = TrainConfig { lambda, ..TrainConfig::default() };
        let without = TrainConfig { lambda: 0.0, ..with };
        let m = if i % 2 == 0 { &model } else { &fx.selection.model };
        let a = total_batch_loss(m, &fx.train, &batch, &fx.cs, &with).unwrap();
        let b = total_batch_loss(m, &fx.train, &batch, &fx.cs, &without).unwrap();
        let outs: Vec<Vec<f64>> = batch.iter().map(|&j| m.predict(&fx.train.features()[j]).unwrap()).collect();
        let phi = fx.cs.constraint_loss(WeightSet::Train, &outs).unwrap().total;
        worst = worst.max((a.total - b.total - lambda * phi).abs());
    }
    ensure(worst <= 1e-9, format!("range holds on 4x10^4 vectors; decomposition error {worst:.1e}"))
}

fn test_closs(model: &Model, fx: &Fixture) -> f64 {
    let outs: Vec<Vec<f64>> = fx.test.features().iter().map(|x| model.predict(x).unwrap()).collect();
    fx.cs.constraint_loss(WeightSet::Test, &outs).unwrap().total
}

fn criterion_4(fx: &Fixture) -> Outcome {
    let phi0 = test_closs(&fx.unconstrained, fx);
    let phi1 = test_closs(&fx.selection.model, fx);
    let f0 = macro_f1(&fx.unconstrained, &fx.test, 0.5).unwrap();
    let f1 = macro_f1(&fx.selection.model, &fx.test, 0.5).unwrap();
    let detail = format!(
        "lambda={} test phi {phi1:.5} vs {phi0:.5} (ratio {:.3}); macro-F1 {:.2} vs {:.2}; {:.1}s",
        fx.selection.lambda,
        phi1 / phi0,
        100.0 * f1,
        100.0 * f0,
        fx.train_secs
    );
    ensure(phi1 <= 0.5 * phi0 && f1 >= f0 - 0.02 && fx.train_secs < 180.0, detail)
}

fn reject_rate(rule: &RejectionRule, model: &Model, cs: &ConstraintSet, xs: &[Vec<f64>]) -> f64 {
    let n = xs
        .iter()
        .filter(|x| tnorm_shield::defense::should_reject(rule, model, cs, x).unwrap().reject)
        .count();
    n as f64 / xs.len() as f64
}

fn criterion_5(fx: &Fixture) -> Outcome {
    let cal = reject_rate(&fx.rule, &fx.selection.model, &fx.cs, fx.val.features());
    let (a, b, c) = gen_toy(&toy_world(99)).unwrap();
    let fresh: Vec<Vec<f64>> = [a, b, c].iter().flat_map(|d| d.features().to_vec()).collect();
    let held = reject_rate(&fx.rule, &fx.selection.model, &fx.cs, &fresh);
    ensure(
        fx.val.len() >= 200 && (cal - 0.10).abs() <= 0.01 && fresh.len() >= 500 && (held - 0.10).abs() <= 0.05,
        format!(
            "tau={:.3e}; calibration {:.2}% of {}, fresh {:.2}% of {}",
            fx.rule.tau,
            100.0 * cal,
            fx.val.len(),
            100.0 * held,
            fresh.len()
        ),
    )
}

struct BlackBox {
    epsilon: f64,
    attacked: Vec<(AttackConfig, AttackedSet, bool)>,
}

fn main_predictions(model: &Model, data: &Dataset, main: &[usize]) -> Vec<Option<usize>> {
    data.features().iter().map(|x| argmax_over(&model.predict(x).unwrap(), main)).collect()
}

fn criterion_6(fx: &Fixture, out: &mut Option<BlackBox>) -> Outcome {
    let start = Instant::now();
    let target = &fx.selection.model;
    let main = fx.cs.bound().main_classes();
    let truth: Vec<usize> = fx
        .test
        .labels()
        .iter()
        .map(|y| tnorm_shield::harness::metrics::true_main_class(y, main).unwrap())
        .collect();
    let clean = main_predictions(target, &fx.test, main);
    let correct: Vec<usize> = (0..truth.len()).filter(|&i| clean[i] == Some(truth[i])).collect();
    let mut bb = BlackBox { epsilon: f64::NAN, attacked: Vec::new() };
    let mut result = Err("no epsilon in the grid flips half of the clean-correct predictions".to_string());
    for eps in EPSILON_GRID {
        let cfg = AttackConfig {
            epsilon: eps,
            kappa: f64::INFINITY,
            alpha: 0.0,
            bounds: Some([0.0, 1.0]),
            ..AttackConfig::default()
        };
        let attacked = attack_dataset(target, Some(&fx.surrogate), &fx.cs, &fx.test, &cfg, Some(&fx.rule)).unwrap();
        let adv = main_predictions(target, &attacked.adversarial, main);
        let flipped = correct.iter().filter(|&&i| adv[i] != clean[i]).count() as f64 / correct.len() as f64;
        bb.attacked.push((cfg, attacked.clone(), true));
        if flipped >= 0.5 {
            let r = classification_quality(target, &fx.rule, &fx.cs, &fx.test, &attacked.adversarial, eps).unwrap();
            let (plain, rej) = (r.acc_main.unwrap(), r.acc_main_rej.unwrap());
            let secs = start.elapsed().as_secs_f64();
            bb.epsilon = eps;
            result = ensure(
                rej - plain >= 0.10 && secs < 300.0,
                format!(
                    "eps={eps}: {:.1}% flipped; AccMain {:.1}% without vs {:.1}% with rejection; {secs:.1}s",
                    100.0 * flipped,
                    100.0 * plain,
                    100.0 * rej
                ),
            );
            break;
        }
    }
    *out = Some(bb);
    result
}

fn criterion_7(fx: &Fixture, bb: &mut BlackBox) -> Outcome {
    if bb.epsilon.is_nan() {
        return Err("needs the black-box epsilon".into());
    }
    let target = &fx.selection.model;
    let run = |alpha: f64| {
        let cfg = AttackConfig {
            epsilon: bb.epsilon,
            kappa: 2.0,
            alpha,
            bounds: Some([0.0, 1.0]),
            ..AttackConfig::default()
        };
        let a = attack_dataset(target, None, &fx.cs, &fx.test, &cfg, Some(&fx.rule)).unwrap();
        (cfg, a)
    };
    let summary = |a: &AttackedSet| {
        let done: Vec<&AttackResult> = a.results.iter().flatten().collect();
        let succ: Vec<f64> = done.iter().filter(|r| r.outcome.prediction_changed).map(|r| r.outcome.measure).collect();
        let rejected = done.iter().filter(|r| r.outcome.rejected == Some(true)).count();
        (succ.iter().sum::<f64>() / succ.len().max(1) as f64, rejected as f64 / done.len() as f64, succ.len())
    };
    let (c0, a0) = run(0.0);
    let (c1, a1) = run(WHITE_BOX_ALPHA);
    let (m0, r0, s0) = summary(&a0);
    let (m1, r1, s1) = summary(&a1);
    bb.attacked.push((c0, a0, false));
    bb.attacked.push((c1, a1, false));
    ensure(
        s0 > 0 && s1 > 0 && m1 < m0 && r1 < r0,
        format!(
            "eps={}: mean measure on successes {m1:.4} (alpha={WHITE_BOX_ALPHA}, n={s1}) vs {m0:.4} (alpha=0, n={s0}); reject rate {:.2}% vs {:.2}%",
            bb.epsilon,
            100.0 * r1,
            100.0 * r0
        ),
    )
}

fn criterion_8(fx: &Fixture, bb: &BlackBox) -> Outcome {
    let mut iterates = 0usize;
    for (cfg, attacked, transfer) in &bb.attacked {
        let [lo, hi] = cfg.bounds.unwrap();
        for (i, r) in attacked.results.iter().enumerate() {
            let Some(r) = r else { continue };
            let x = &fx.test.features()[i];
            for t in &r.trace {
                let l2 = tnorm_shield::attack::l2_distance(x, &t.point);
                if l2 > cfg.epsilon + 1e-6 || t.point.iter().any(|v| !(lo..=hi).contains(v)) {
                    return Err(format!("sample {i} iteration {} leaves the feasible set", t.iteration));
                }
                iterates += 1;
            }
        }
        let surrogate = transfer.then_some(&fx.surrogate);
        let again = attack_dataset(&fx.selection.model, surrogate, &fx.cs, &fx.test, cfg, Some(&fx.rule)).unwrap();
        for (a, b) in attacked.results.iter().zip(&again.results) {
            let ja = a.as_ref().map(|r| serde_json::to_string(&r.trace).unwrap());
            let jb = b.as_ref().map(|r| serde_json::to_string(&r.trace).unwrap());
            if ja != jb {
                return Err("re-run produced a different trace".into());
            }
        }
    }
    ensure(
        iterates > 0,
        format!("{iterates} iterates over {} runs within budget and box; traces reproduce", bb.attacked.len()),
    )
}

/// Constraint loss of the toy knowledge written out by hand.
fn toy_measure_oracle(f: &[f64]) -> f64 {
    let (c, a, m, v) = (f[0], f[1], f[2], f[3]);
    let t1 = 1.0 - c * (1.0 - a);
    let t2 = 1.0 - m * (1.0 - v);
    let t3 = 1.0 - v * (1.0 - (1.0 - a));
    let or1 = 1.0 - (1.0 - c) * (1.0 - a);
    let or2 = 1.0 - (1.0 - or1) * (1.0 - m);
    let t4 = 1.0 - (1.0 - or2) * (1.0 - v);
    let mut total = 0.0;
    for t in [t1, t2, t3, t4] {
        total += 1.0 * (1.0 - t);
    }
    total
}

fn pairing_oracle(model: &Model, support: &[Vec<f64>], cfg: &PairingConfig) -> f64 {
    let d = support[0].len();
    let lo: Vec<f64> = (0..d).map(|k| support.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|k| support.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut off = Vec::new();
    for _ in 0..cfg.num_samples {
        let x: Vec<f64> = (0..d)
            .map(|k| {
                let pad = cfg.margin * (hi[k] - lo[k]);
                let (a, b) = (lo[k] - pad, hi[k] + pad);
                a + (b - a) * rng.random::<f64>()
            })
            .collect();
        off.push(x);
    }
    let mean = |xs: &[Vec<f64>]| {
        let mut m = 0.0;
        for (k, x) in xs.iter().enumerate() {
            m += (toy_measure_oracle(&model.predict(x).unwrap()) - m) / (k + 1) as f64;
        }
        m
    };
    (mean(&off) - mean(support)).abs()
}

fn criterion_9(fx: &Fixture) -> Outcome {
    let cfg = PairingConfig { num_samples: 2000, margin: 0.25, seed: 9 };
    let model = &fx.selection.model;
    let a = pairing_score(model, fx.train.features(), &fx.cs, &cfg).unwrap();
    let b = pairing_score(model, fx.train.features(), &fx.cs, &cfg).unwrap();
    let oracle = pairing_oracle(model, fx.train.features(), &cfg);
    let unconstrained = pairing_score(&fx.unconstrained, fx.train.features(), &fx.cs, &cfg).unwrap();
    ensure(
        a.is_finite() && a.to_bits() == b.to_bits() && a.to_bits() == oracle.to_bits(),
        format!("zeta={a:.6} (oracle {oracle:.6}, unconstrained model {unconstrained:.6})"),
    )
}

fn report(n: usize, outcome: &Outcome) -> bool {
    match outcome {
        Ok(d) => println!("[PASS] criterion {n}: {d}"),
        Err(d) => println!("[FAIL] criterion {n}: {d}"),
    }
    outcome.is_ok()
}

fn main() {
    let mut ok = report(1, &criterion_1());
    let fx = fixture();
    ok &= report(2, &criterion_2(&fx));
    ok &= report(3, &criterion_3(&fx));
    ok &= report(4, &criterion_4(&fx));
    ok &= report(5, &criterion_5(&fx));
    let mut bb = None;
    ok &= report(6, &criterion_6(&fx, &mut bb));
    let mut bb = bb.expect("set by criterion 6");
    ok &= report(7, &criterion_7(&fx, &mut bb));
    ok &= report(8, &criterion_8(&fx, &bb));
    ok &= report(9, &criterion_9(&fx));
    let acc = acc_main(&fx.selection.model, &fx.test, fx.cs.bound().main_classes()).unwrap();
    println!("constrained model: lambda={} AccMain {:.2}%", fx.selection.lambda, 100.0 * acc);
    if !ok {
        std::process::exit(1);
    }
}
