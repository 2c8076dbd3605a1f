//! Exit criteria, one line each. Runs without the libtest harness so every
//! line is printed; exits nonzero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use cal_attention::{AttentionModel, ModelConfig};
use cal_counterfactual::{
    cal_loss, compute_effect, counterfactual_predict, generate_counterfactual, CounterfactualError,
    CounterfactualStrategy, StrategyKind,
};
use cal_eval::{attention_miou, retrieval_metrics, EvalOptions};
use cal_synthdata::{generate_dataset, BBox, DatasetBundle, DatasetSpec};
use cal_tensor::{
    check_gradients, Graph, Result as TensorResult, Tensor, TensorError, Var, DEFAULT_EPS,
};
use cal_train::{run_experiment, train, Objective, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- helpers

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in ±[0.1, 1], away from the ReLU kink.
fn signed(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
    .unwrap()
}

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(lo..hi)).unwrap()
}

/// Scalar with a distinct fixed weight on every output coordinate.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> TensorResult<Var> {
    let w = g.constant(signed(g.shape(y), seed));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn tensor_err(e: impl std::fmt::Display) -> TensorError {
    TensorError::InvalidArgument(e.to_string())
}

fn small_model(seed: u64) -> AttentionModel {
    AttentionModel::new(ModelConfig {
        depth: 2,
        heads: 3,
        classes: 4,
        normalize_attention: false,
        seed,
    })
    .unwrap()
}

fn flat_bits(model: &AttentionModel) -> Vec<u64> {
    model
        .params()
        .iter()
        .flat_map(|p| p.tensor.data().iter().map(|v| v.to_bits()))
        .collect()
}

fn cal_bin() -> &'static str {
    env!("CARGO_BIN_EXE_cal")
}

fn run_cal(args: &[&str], cwd: &Path) -> Result<String, String> {
    let out = Command::new(cal_bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

// ------------------------------------------------------- 1: gradient suite

const GRAD_TOL: f64 = 1e-4;
const GRAD_POINTS: u64 = 5;

type GradCase = (&'static str, Box<dyn Fn(u64) -> TensorResult<f64>>);

fn primitive_cases() -> Vec<GradCase> {
    let eps = DEFAULT_EPS;
    vec![
        (
            "relu",
            Box::new(move |s| {
                check_gradients(
                    |g, x| {
                        let y = g.relu(x);
                        weighted_sum(g, y, 1)
                    },
                    &signed(&[2, 3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "conv2d.input",
            Box::new(move |s| {
                let (w, b) = (signed(&[3, 2, 3, 3], 100 + s), signed(&[3], 200 + s));
                check_gradients(
                    move |g, x| {
                        let (w, b) = (g.constant(w.clone()), g.constant(b.clone()));
                        let y = g.conv2d(x, w, b, 2, 1)?;
                        weighted_sum(g, y, 2)
                    },
                    &signed(&[2, 2, 5, 5], s),
                    eps,
                )
            }),
        ),
        (
            "conv2d.weight",
            Box::new(move |s| {
                let (x, b) = (signed(&[2, 2, 5, 5], s), signed(&[3], 200 + s));
                check_gradients(
                    move |g, w| {
                        let (x, b) = (g.constant(x.clone()), g.constant(b.clone()));
                        let y = g.conv2d(x, w, b, 1, 1)?;
                        weighted_sum(g, y, 3)
                    },
                    &signed(&[3, 2, 3, 3], 100 + s),
                    eps,
                )
            }),
        ),
        (
            "conv2d.bias",
            Box::new(move |s| {
                let (x, w) = (signed(&[2, 2, 5, 5], s), signed(&[3, 2, 3, 3], 100 + s));
                check_gradients(
                    move |g, b| {
                        let (x, w) = (g.constant(x.clone()), g.constant(w.clone()));
                        let y = g.conv2d(x, w, b, 2, 0)?;
                        weighted_sum(g, y, 4)
                    },
                    &signed(&[3], 200 + s),
                    eps,
                )
            }),
        ),
        (
            "global_avg_pool",
            Box::new(move |s| {
                check_gradients(
                    |g, x| {
                        let y = g.global_avg_pool(x)?;
                        weighted_sum(g, y, 5)
                    },
                    &signed(&[2, 3, 3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "mul",
            Box::new(move |s| {
                let o = signed(&[2, 3, 4, 4], 300 + s);
                check_gradients(
                    move |g, x| {
                        let o = g.constant(o.clone());
                        let y = g.mul(x, o)?;
                        weighted_sum(g, y, 6)
                    },
                    &signed(&[2, 3, 4, 4], s),
                    eps,
                )
            }),
        ),
        (
            "mul.broadcast",
            Box::new(move |s| {
                let o = signed(&[2, 3, 4, 4], 300 + s);
                check_gradients(
                    move |g, m| {
                        let o = g.constant(o.clone());
                        let y = g.mul(o, m)?;
                        weighted_sum(g, y, 7)
                    },
                    &signed(&[2, 1, 4, 4], 400 + s),
                    eps,
                )
            }),
        ),
        (
            "add",
            Box::new(move |s| {
                let o = signed(&[3, 4], 500 + s);
                check_gradients(
                    move |g, x| {
                        let o = g.constant(o.clone());
                        let y = g.add(x, o)?;
                        let y = g.mul(y, y)?;
                        weighted_sum(g, y, 8)
                    },
                    &signed(&[3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "sub",
            Box::new(move |s| {
                let o = signed(&[3, 4], 500 + s);
                check_gradients(
                    move |g, x| {
                        let o = g.constant(o.clone());
                        let y = g.sub(o, x)?;
                        let y = g.mul(y, y)?;
                        weighted_sum(g, y, 9)
                    },
                    &signed(&[3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "scale",
            Box::new(move |s| {
                check_gradients(
                    |g, x| {
                        let y = g.scale(x, -1.7);
                        weighted_sum(g, y, 10)
                    },
                    &signed(&[3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "sum",
            Box::new(move |s| {
                check_gradients(
                    |g, x| {
                        let y = g.mul(x, x)?;
                        Ok(g.sum(y))
                    },
                    &signed(&[3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "reshape",
            Box::new(move |s| {
                check_gradients(
                    |g, x| {
                        let y = g.reshape(x, &[2, 6])?;
                        weighted_sum(g, y, 11)
                    },
                    &signed(&[3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "linear.x",
            Box::new(move |s| {
                let (w, b) = (signed(&[4, 5], 600 + s), signed(&[5], 700 + s));
                check_gradients(
                    move |g, x| {
                        let (w, b) = (g.constant(w.clone()), g.constant(b.clone()));
                        let y = g.linear(x, w, b)?;
                        weighted_sum(g, y, 12)
                    },
                    &signed(&[3, 4], s),
                    eps,
                )
            }),
        ),
        (
            "linear.weight",
            Box::new(move |s| {
                let (x, b) = (signed(&[3, 4], s), signed(&[5], 700 + s));
                check_gradients(
                    move |g, w| {
                        let (x, b) = (g.constant(x.clone()), g.constant(b.clone()));
                        let y = g.linear(x, w, b)?;
                        weighted_sum(g, y, 13)
                    },
                    &signed(&[4, 5], 600 + s),
                    eps,
                )
            }),
        ),
        (
            "linear.bias",
            Box::new(move |s| {
                let (x, w) = (signed(&[3, 4], s), signed(&[4, 5], 600 + s));
                check_gradients(
                    move |g, b| {
                        let (x, w) = (g.constant(x.clone()), g.constant(w.clone()));
                        let y = g.linear(x, w, b)?;
                        weighted_sum(g, y, 14)
                    },
                    &signed(&[5], 700 + s),
                    eps,
                )
            }),
        ),
        (
            "softmax_cross_entropy",
            Box::new(move |s| {
                check_gradients(
                    |g, z| g.softmax_cross_entropy(z, &[1, 4, 0]),
                    &signed(&[3, 5], s),
                    eps,
                )
            }),
        ),
        (
            "attention_pool.features",
            Box::new(move |s| {
                let a = uniform(&[2, 4, 3, 3], 800 + s, 0.1, 1.0);
                check_gradients(
                    move |g, x| {
                        let a = g.constant(a.clone());
                        let y = g.attention_pool(x, a)?;
                        weighted_sum(g, y, 15)
                    },
                    &signed(&[2, 3, 3, 3], s),
                    eps,
                )
            }),
        ),
        (
            "attention_pool.attention",
            Box::new(move |s| {
                let x = signed(&[2, 3, 3, 3], s);
                check_gradients(
                    move |g, a| {
                        let x = g.constant(x.clone());
                        let y = g.attention_pool(x, a)?;
                        weighted_sum(g, y, 16)
                    },
                    &uniform(&[2, 4, 3, 3], 800 + s, 0.1, 1.0),
                    eps,
                )
            }),
        ),
        (
            "l2_normalize_rows",
            Box::new(move |s| {
                check_gradients(
                    |g, x| {
                        let y = g.l2_normalize_rows(x);
                        weighted_sum(g, y, 17)
                    },
                    &signed(&[3, 6], s),
                    eps,
                )
            }),
        ),
        (
            "neg_entropy",
            Box::new(move |s| {
                check_gradients(
                    |g, a| g.neg_entropy(a),
                    &uniform(&[2, 3, 3, 3], s, 0.1, 1.0),
                    eps,
                )
            }),
        ),
        (
            "batch_hard_triplet",
            Box::new(move |s| {
                check_gradients(
                    |g, e| Ok(g.batch_hard_triplet(e, &[0, 0, 1, 1, 2, 2], 2.0)?.0),
                    &signed(&[6, 4], s),
                    eps,
                )
            }),
        ),
    ]
}

/// `λ·CE(Y − Y(do(A=Ā))) + CE(Y)` through the whole model, as a function of parameter `index`.
fn composite_cal(
    model: &AttentionModel,
    g: &mut Graph,
    index: usize,
    x: Var,
    images: &Tensor,
    labels: &[usize],
    strategy: &CounterfactualStrategy,
) -> TensorResult<Var> {
    let bound = model.bind(g, false).with_override(index, x);
    let input = g.constant(images.clone());
    let out = model.forward(g, &bound, input).map_err(tensor_err)?;
    let a_bar =
        generate_counterfactual(g.value(out.attention.var()), strategy, 0).map_err(tensor_err)?;
    let y_cf =
        counterfactual_predict(model, g, &bound, out.features, &a_bar).map_err(tensor_err)?;
    let effect = compute_effect(g, out.logits, y_cf).map_err(tensor_err)?;
    cal_loss(g, effect, out.logits, labels, 0.8).map_err(|e: CounterfactualError| tensor_err(e))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = (String::new(), 0.0f64);
    let mut checks = 0;
    let mut note = |name: &str, err: f64| {
        checks += 1;
        if !(err <= worst.1) {
            worst = (name.to_string(), err);
        }
    };
    for (name, case) in primitive_cases() {
        for s in 0..GRAD_POINTS {
            note(name, case(s).map_err(|e| format!("{name}: {e}"))?);
        }
    }
    let strategy = CounterfactualStrategy::new(StrategyKind::random(), 12).unwrap();
    for s in 0..GRAD_POINTS {
        let model = small_model(1000 + s);
        let images = uniform(&[3, 3, 8, 8], 2000 + s, 0.0, 1.0);
        let labels = [(s % 4) as usize, 3, 0];
        for (i, p) in model.params().iter().enumerate() {
            let err = check_gradients(
                |g, x| composite_cal(&model, g, i, x, &images, &labels, &strategy),
                &p.tensor,
                DEFAULT_EPS,
            )
            .map_err(|e| format!("cal_loss/{}: {e}", p.name))?;
            note(&format!("cal_loss/{}", p.name), err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst.1 < GRAD_TOL && secs < 60.0,
        format!(
            "{checks} checks at eps {DEFAULT_EPS:e}, worst relative error {:.2e} ({}), {secs:.1}s (limits {GRAD_TOL:e}, 60s)",
            worst.1, worst.0
        ),
    )
}

// ------------------------------------------------- 2: zero-effect identity

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let cases: Vec<(AttentionModel, Tensor)> = (0..5)
        .map(|s| {
            (
                small_model(30 + s),
                uniform(&[4, 3, 8, 8], 40 + s, 0.0, 1.0),
            )
        })
        .chain(std::iter::once((
            AttentionModel::new(ModelConfig::new(20)).unwrap(),
            uniform(&[2, 3, 32, 32], 50, 0.0, 1.0),
        )))
        .collect();
    for (model, images) in &cases {
        let mut g = Graph::new();
        let bound = model.bind(&mut g, false);
        let input = g.constant(images.clone());
        let out = model
            .forward(&mut g, &bound, input)
            .map_err(|e| e.to_string())?;
        let a = g.value(out.attention.var()).clone();
        let y_cf = counterfactual_predict(model, &mut g, &bound, out.features, &a)
            .map_err(|e| e.to_string())?;
        let effect = compute_effect(&mut g, out.logits, y_cf).map_err(|e| e.to_string())?;
        worst = g
            .value(effect.var())
            .data()
            .iter()
            .fold(worst, |m, v| m.max(v.abs()));
    }
    ensure(
        worst < 1e-12,
        format!(
            "max |effect| with Ā = A over {} models: {worst:.1e} (limit 1e-12)",
            cases.len()
        ),
    )
}

// ------------------------------------------------- 3: strategy properties

fn criterion_3() -> Outcome {
    let strategy = |kind| CounterfactualStrategy::new(kind, 77).unwrap();
    let draws = 1_000_000;
    let a = Tensor::zeros(&[1000, 1, 1000, 1]).unwrap();
    let r = generate_counterfactual(&a, &strategy(StrategyKind::random()), 0)
        .map_err(|e| e.to_string())?;
    let in_range = r.data().iter().all(|v| (0.0..2.0).contains(v));
    let mean = r.data().iter().sum::<f64>() / draws as f64;

    let a = uniform(&[4, 3, 5, 5], 78, 0.0, 3.0);
    let per = a.numel() / 4;
    let u = generate_counterfactual(&a, &strategy(StrategyKind::Uniform), 1)
        .map_err(|e| e.to_string())?;
    let mut uniform_err = 0.0f64;
    for (src, out) in a.data().chunks(per).zip(u.data().chunks(per)) {
        let m = src.iter().sum::<f64>() / per as f64;
        uniform_err = out.iter().fold(uniform_err, |e, v| e.max((v - m).abs()));
    }

    let c = Tensor::full(&[3, 4, 5, 5], 0.37).unwrap();
    let rev = generate_counterfactual(&c, &strategy(StrategyKind::Reversed), 2)
        .map_err(|e| e.to_string())?;
    let reversed_zero = rev.data().iter().all(|&v| v == 0.0);

    let blocks = |t: &Tensor| -> Vec<Vec<u64>> {
        let per = t.numel() / t.shape()[0];
        let mut b: Vec<Vec<u64>> = t
            .data()
            .chunks(per)
            .map(|c| c.iter().map(|v| v.to_bits()).collect())
            .collect();
        b.sort();
        b
    };
    let mut shuffle_ok = true;
    for step in 0..20 {
        let a = uniform(&[6, 3, 4, 4], 90 + step, 0.0, 1.0);
        let s = generate_counterfactual(&a, &strategy(StrategyKind::Shuffle), step)
            .map_err(|e| e.to_string())?;
        shuffle_ok &= blocks(&a) == blocks(&s);
    }
    ensure(
        in_range && (mean - 1.0).abs() <= 0.01 && uniform_err <= 1e-12 && reversed_zero && shuffle_ok,
        format!(
            "random: {draws} draws in [0,2) {in_range}, mean {mean:.5}; uniform max error {uniform_err:.1e}; \
             reversed constant -> zero {reversed_zero}; shuffle keeps the map multiset {shuffle_ok}"
        ),
    )
}

// ------------------------------------------------ 4: switch-off equivalence

fn criterion_4() -> Outcome {
    let spec = DatasetSpec {
        num_classes: 4,
        samples_per_class: 8,
        test_samples_per_class: 2,
        image_size: 16,
        seed: 21,
        ..DatasetSpec::default()
    };
    let (samples, _) = generate_dataset(&spec).map_err(|e| e.to_string())?;
    let base = TrainConfig {
        epochs: 3,
        batch_size: 6,
        depth: 2,
        heads: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let fit = |config: &TrainConfig| {
        train(
            AttentionModel::new(config.model_config(4)).unwrap(),
            &samples,
            config,
        )
        .unwrap()
    };
    let (base_model, base_report) = fit(&base);
    let mut identical = Vec::new();
    for kind in [
        StrategyKind::random(),
        StrategyKind::Uniform,
        StrategyKind::Reversed,
        StrategyKind::Shuffle,
    ] {
        let cal = TrainConfig {
            objective: Objective::Cal,
            strategy: kind,
            lambda_effect: 0.0,
            ..base.clone()
        };
        let (model, report) = fit(&cal);
        let same_epochs = base_report.epochs.iter().zip(&report.epochs).all(|(a, b)| {
            a.loss.to_bits() == b.loss.to_bits()
                && a.factual_ce.to_bits() == b.factual_ce.to_bits()
                && a.train_top1.to_bits() == b.train_top1.to_bits()
        });
        identical.push((
            kind.name(),
            same_epochs && flat_bits(&model) == flat_bits(&base_model),
        ));
    }
    ensure(
        identical.iter().all(|(_, same)| *same),
        format!(
            "lambda_effect = 0 vs baseline, bit-identical losses and parameters: {identical:?}"
        ),
    )
}

// ------------------------------------------------------ 5: inference parity

fn runtime_deps(manifest: &Path) -> BTreeSet<String> {
    let text = fs::read_to_string(manifest).unwrap();
    let mut deps = BTreeSet::new();
    let mut in_section = false;
    for line in text.lines().map(str::trim) {
        if line.starts_with('[') {
            in_section = line == "[dependencies]" || line == "[build-dependencies]";
        } else if in_section && !line.is_empty() && !line.starts_with('#') {
            deps.insert(
                line.split(['=', '.', ' '])
                    .next()
                    .unwrap()
                    .trim()
                    .to_string(),
            );
        }
    }
    deps
}

fn workspace_crate(name: &str) -> Option<PathBuf> {
    let crates = Path::new(env!("CARGO_MANIFEST_DIR")).parent().unwrap();
    fs::read_dir(crates)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .find(|p| {
            fs::read_to_string(p.join("Cargo.toml"))
                .map(|t| t.lines().any(|l| l.trim() == format!("name = \"{name}\"")))
                .unwrap_or(false)
        })
}

fn source_mentions(dir: &Path, needle: &str) -> Vec<PathBuf> {
    let mut hits = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if fs::read_to_string(&path).unwrap().contains(needle) {
                hits.push(path);
            }
        }
    }
    hits
}

fn criterion_5() -> Outcome {
    let eval = workspace_crate("cal-eval").ok_or("cal-eval not found")?;
    let mut reached = BTreeSet::new();
    let mut stack = vec![eval.clone()];
    while let Some(dir) = stack.pop() {
        for dep in runtime_deps(&dir.join("Cargo.toml")) {
            if dep.starts_with("cal-") && reached.insert(dep.clone()) {
                stack.push(workspace_crate(&dep).ok_or(format!("{dep} not found"))?);
            }
        }
    }
    let mut mentions = Vec::new();
    for name in std::iter::once("cal-eval".to_string()).chain(reached.iter().cloned()) {
        let src = workspace_crate(&name).unwrap().join("src");
        mentions.extend(source_mentions(&src, "cal_counterfactual"));
    }
    ensure(
        !reached.contains("cal-counterfactual") && mentions.is_empty(),
        format!("evaluation dependency closure {reached:?}; source files naming the counterfactual crate: {mentions:?}"),
    )
}

// -------------------------------------------------------- 6: metric oracles

/// Pixel sets: the attended set is every pixel whose head-max value reaches
/// the cut; IoU counts pixels of its bounding rectangle against the box.
fn pixel_iou(maps: &[f64], m: usize, h: usize, w: usize, size: usize, frac: f64, gt: &BBox) -> f64 {
    let value = |x: usize, y: usize| {
        let (cy, cx) = (y * h / size, x * w / size);
        (0..m)
            .map(|k| maps[k * h * w + cy * w + cx])
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let peak = (0..size)
        .flat_map(|y| (0..size).map(move |x| (x, y)))
        .map(|(x, y)| value(x, y))
        .fold(0.0, f64::max);
    if peak <= 0.0 {
        return 0.0;
    }
    let marked: Vec<(usize, usize)> = (0..size)
        .flat_map(|y| (0..size).map(move |x| (x, y)))
        .filter(|&(x, y)| value(x, y) >= frac * peak)
        .collect();
    let (x0, x1) = (
        marked.iter().map(|p| p.0).min().unwrap(),
        marked.iter().map(|p| p.0).max().unwrap(),
    );
    let (y0, y1) = (
        marked.iter().map(|p| p.1).min().unwrap(),
        marked.iter().map(|p| p.1).max().unwrap(),
    );
    let rect: BTreeSet<(usize, usize)> = (y0..=y1)
        .flat_map(|y| (x0..=x1).map(move |x| (x, y)))
        .collect();
    let truth: BTreeSet<(usize, usize)> = (gt.y0..gt.y1)
        .flat_map(|y| (gt.x0..gt.x1).map(move |x| (x, y)))
        .collect();
    rect.intersection(&truth).count() as f64 / rect.union(&truth).count() as f64
}

fn miou_cases() -> Result<f64, String> {
    let mut worst = 0.0f64;
    for case in 0..10u64 {
        let mut r = rng(600 + case);
        let (n, m) = (r.gen_range(1..4), r.gen_range(1..4));
        let (h, w) = ([1, 2, 4][r.gen_range(0..3)], [1, 2, 4][r.gen_range(0..3)]);
        let size = 16;
        let frac = [0.25, 0.5, 0.75][case as usize % 3];
        let mut data: Vec<f64> = (0..n * m * h * w)
            .map(|_| {
                if r.gen_bool(0.3) {
                    0.0
                } else {
                    r.gen_range(0.0..1.0)
                }
            })
            .collect();
        if case == 3 {
            data[..m * h * w].fill(0.0);
        }
        let boxes: Vec<BBox> = (0..n)
            .map(|_| {
                let (x0, y0) = (r.gen_range(0..12), r.gen_range(0..12));
                BBox::new(x0, y0, r.gen_range(x0 + 1..=16), r.gen_range(y0 + 1..=16)).unwrap()
            })
            .collect();
        let maps = Tensor::new(vec![n, m, h, w], data.clone()).unwrap();
        let got = attention_miou(&maps, &boxes, size, frac).map_err(|e| e.to_string())?;
        let per = m * h * w;
        let want = (0..n)
            .map(|i| {
                pixel_iou(
                    &data[i * per..(i + 1) * per],
                    m,
                    h,
                    w,
                    size,
                    frac,
                    &boxes[i],
                )
            })
            .sum::<f64>()
            / n as f64;
        worst = worst.max((got - want).abs());
    }
    Ok(worst)
}

/// All pairwise distances, full sort, AP as the mean precision at each hit.
fn retrieval_oracle(
    q: &[Vec<f64>],
    qid: &[usize],
    g: &[Vec<f64>],
    gid: &[usize],
) -> (Vec<f64>, f64) {
    let mut first = vec![0usize; g.len()];
    let mut ap_total = 0.0;
    for (qv, &id) in q.iter().zip(qid) {
        let mut pairs: Vec<(f64, usize)> = g
            .iter()
            .enumerate()
            .map(|(j, gv)| {
                (
                    qv.iter()
                        .zip(gv)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt(),
                    j,
                )
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let hits: Vec<usize> = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| gid[p.1] == id)
            .map(|(r, _)| r)
            .collect();
        first[hits[0]] += 1;
        let mut precision_sum = 0.0;
        for (k, &rank) in hits.iter().enumerate() {
            precision_sum += (k + 1) as f64 / (rank + 1) as f64;
        }
        ap_total += precision_sum / hits.len() as f64;
    }
    let mut cmc = Vec::new();
    let mut running = 0;
    for c in first {
        running += c;
        cmc.push(running as f64 / q.len() as f64);
    }
    (cmc, ap_total / q.len() as f64)
}

fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
    Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
}

fn retrieval_cases() -> Result<(usize, f64), String> {
    let mut cases: Vec<(Vec<Vec<f64>>, Vec<usize>, Vec<Vec<f64>>, Vec<usize>)> = vec![(
        vec![vec![0.0, 0.0]],
        vec![0],
        vec![vec![0.1, 0.0], vec![0.5, 0.0], vec![0.9, 0.0]],
        vec![0, 1, 0],
    )];
    for case in 0..20u64 {
        let mut r = rng(700 + case);
        let ng = r.gen_range(2..=10);
        let ids = r.gen_range(1..=3.min(ng));
        let gid: Vec<usize> = (0..ng)
            .map(|j| if j < ids { j } else { r.gen_range(0..ids) })
            .collect();
        let nq = r.gen_range(1..5);
        let qid: Vec<usize> = (0..nq).map(|_| gid[r.gen_range(0..ng)]).collect();
        let mut point = |_| {
            (0..3)
                .map(|_| (r.gen_range(0..4) as f64) * 0.5)
                .collect::<Vec<f64>>()
        };
        let g: Vec<Vec<f64>> = (0..ng).map(&mut point).collect();
        let q: Vec<Vec<f64>> = (0..nq).map(&mut point).collect();
        cases.push((q, qid, g, gid));
    }
    let mut ap_hand = f64::NAN;
    for (i, (q, qid, g, gid)) in cases.iter().enumerate() {
        let got =
            retrieval_metrics(&to_tensor(q), qid, &to_tensor(g), gid).map_err(|e| e.to_string())?;
        let (cmc, map) = retrieval_oracle(q, qid, g, gid);
        if got.cmc != cmc || got.map_score != map {
            return Err(format!(
                "case {i}: cmc {:?} map {} vs oracle {cmc:?} {map}",
                got.cmc, got.map_score
            ));
        }
        if i == 0 {
            ap_hand = got.map_score;
        }
    }
    if (ap_hand - 5.0 / 6.0).abs() > 1e-15 {
        return Err(format!("ranks 1 and 3 give AP {ap_hand}, expected 5/6"));
    }
    Ok((cases.len(), ap_hand))
}

fn criterion_6() -> Outcome {
    let miou_err = miou_cases()?;
    let (n, ap) = retrieval_cases()?;
    ensure(
        miou_err <= 1e-9,
        format!("mIoU vs pixel-set oracle on 10 cases: max error {miou_err:.1e} (limit 1e-9); {n} retrieval cases exact, AP(ranks 1,3) = {ap:.6}"),
    )
}

// ------------------------------------------------- 7: baseline competence

fn classification_bundle(spec: DatasetSpec) -> DatasetBundle {
    let (train, test) = generate_dataset(&spec).unwrap();
    DatasetBundle::Classification { spec, train, test }
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let bundle = classification_bundle(DatasetSpec {
        num_classes: 20,
        samples_per_class: 100,
        bias_strength: 0.0,
        ..DatasetSpec::default()
    });
    let config = TrainConfig {
        epochs: 30,
        objective: Objective::Baseline,
        ..TrainConfig::default()
    };
    let (_, report) =
        run_experiment(&bundle, &config, &EvalOptions::default()).map_err(|e| e.to_string())?;
    let acc = report.top1_accuracy.unwrap();
    let secs = start.elapsed().as_secs_f64();
    ensure(
        acc >= 0.95 && secs < 600.0,
        format!("rho 0, 20 classes x 100: test top-1 {acc:.4} after 30 epochs in {secs:.0}s (needs >= 0.95, < 600s)"),
    )
}

// --------------------------------------------- 8: attention quality under bias

fn criterion_8() -> Outcome {
    let seeds = [0u64, 1, 2];
    let mut sums = BTreeMap::new();
    let mut per_seed = Vec::new();
    for &seed in &seeds {
        let bundle = classification_bundle(DatasetSpec {
            bias_strength: 0.9,
            seed,
            ..DatasetSpec::default()
        });
        for objective in [Objective::Baseline, Objective::Cal] {
            let config = TrainConfig {
                objective,
                strategy: StrategyKind::random(),
                seed,
                ..TrainConfig::default()
            };
            let (_, report) = run_experiment(&bundle, &config, &EvalOptions::default())
                .map_err(|e| e.to_string())?;
            let (miou, acc) = (
                report.attention_miou.unwrap(),
                report.top1_accuracy.unwrap(),
            );
            per_seed.push(format!("{objective}@{seed}: miou {miou:.3} top1 {acc:.3}"));
            let e = sums.entry(objective.name()).or_insert((0.0, 0.0));
            e.0 += miou / seeds.len() as f64;
            e.1 += acc / seeds.len() as f64;
        }
    }
    let (base, cal) = (sums["baseline"], sums["cal"]);
    ensure(
        cal.0 - base.0 >= 0.05 && cal.1 >= base.1 - 0.005,
        format!(
            "rho 0.9, 3 seeds: mIoU baseline {:.4} -> cal {:.4} (gain {:+.4}, needs >= 0.05); top-1 {:.4} -> {:.4} (needs >= baseline - 0.005) [{}]",
            base.0,
            cal.0,
            cal.0 - base.0,
            base.1,
            cal.1,
            per_seed.join("; ")
        ),
    )
}

// ---------------------------------------------------- 9: strategy ablation

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cwd = dir.path();
    run_cal(
        &[
            "gen",
            "--classes",
            "20",
            "--samples-per-class",
            "20",
            "--test-samples-per-class",
            "10",
            "--rho",
            "0.9",
            "--out",
            "d",
        ],
        cwd,
    )?;
    run_cal(
        &[
            "ablate", "--data", "d", "--axis", "strategy", "--epochs", "3", "--out", "a",
        ],
        cwd,
    )?;
    let csv = fs::read_to_string(cwd.join("a/ablation_strategy.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let header = &rows[0];
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let values: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
    let complete = rows[1..].iter().all(|r| {
        r[col("top1_mean")].parse::<f64>().is_ok() && r[col("miou_mean")].parse::<f64>().is_ok()
    });
    let reversed = rows[1..]
        .iter()
        .find(|r| r[0] == "reversed")
        .map(|r| (r[col("top1_mean")], r[col("miou_mean")]));
    ensure(
        values == StrategyKind::ALL && complete,
        format!("ablation_strategy.csv rows {values:?}, complete {complete}; reversed top-1/mIoU {reversed:?}"),
    )
}

// ----------------------------------------------------------- 10: determinism

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cwd = dir.path();
    let data = [
        "--classes",
        "5",
        "--samples-per-class",
        "6",
        "--test-samples-per-class",
        "3",
        "--image-size",
        "16",
        "--rho",
        "0.9",
        "--seed",
        "3",
    ];
    let model = [
        "--epochs", "3", "--depth", "2", "--heads", "4", "--batch", "6",
    ];
    let mut compared = Vec::new();
    for run in ["1", "2"] {
        let mut argv = vec!["gen"];
        argv.extend(data);
        let gen_out = format!("d{run}");
        argv.extend(["--out", &gen_out]);
        run_cal(&argv, cwd)?;
    }
    compared.push((
        "gen",
        dir_bytes(&cwd.join("d1")) == dir_bytes(&cwd.join("d2")),
    ));
    for run in ["1", "2"] {
        let out = format!("m{run}");
        let mut argv = vec!["train", "--data", "d1", "--objective", "cal", "--out", &out];
        argv.extend(model);
        run_cal(&argv, cwd)?;
    }
    compared.push((
        "train",
        dir_bytes(&cwd.join("m1")) == dir_bytes(&cwd.join("m2")),
    ));
    let mut stdout = Vec::new();
    for run in ["1", "2"] {
        let out = format!("e{run}");
        stdout.push(run_cal(
            &["eval", "--checkpoint", "m1", "--data", "d1", "--out", &out],
            cwd,
        )?);
    }
    compared.push((
        "eval",
        stdout[0] == stdout[1] && dir_bytes(&cwd.join("e1")) == dir_bytes(&cwd.join("e2")),
    ));
    for run in ["1", "2"] {
        let out = format!("v{run}");
        run_cal(
            &[
                "visualize",
                "--checkpoint",
                "m1",
                "--data",
                "d1",
                "--samples",
                "0,4",
                "--out",
                &out,
            ],
            cwd,
        )?;
    }
    compared.push((
        "visualize",
        dir_bytes(&cwd.join("v1")) == dir_bytes(&cwd.join("v2")),
    ));
    for run in ["1", "2"] {
        let out = format!("a{run}");
        let mut argv = vec![
            "ablate", "--data", "d1", "--axis", "strategy", "--seeds", "2", "--out", &out,
        ];
        argv.extend(model);
        run_cal(&argv, cwd)?;
    }
    compared.push((
        "ablate",
        dir_bytes(&cwd.join("a1")) == dir_bytes(&cwd.join("a2")),
    ));
    ensure(
        compared.iter().all(|c| c.1),
        format!("byte-identical reruns: {compared:?}"),
    )
}

// ------------------------------------------------------------------ runner

const CRITERIA: [(&str, fn() -> Outcome); 10] = [
    ("gradient suite", criterion_1),
    ("zero-effect identity", criterion_2),
    ("strategy properties", criterion_3),
    ("switch-off equivalence", criterion_4),
    ("inference parity", criterion_5),
    ("metric oracles", criterion_6),
    ("baseline competence", criterion_7),
    ("attention quality under bias", criterion_8),
    ("strategy ablation", criterion_9),
    ("determinism", criterion_10),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in CRITERIA.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|p| *p == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {n:>2} {tag} {name} ({:.1}s): {detail}",
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
