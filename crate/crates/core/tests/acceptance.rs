//! Acceptance criteria, one line of output each. Runs without the libtest
//! harness so the report is always printed.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::time::{Duration, Instant};

use mulco::corpus::{Corpus, Mention, Sentence};
use mulco::eval::score;
use mulco::scope_codec::{coverage, decode_hard, encode, uncovered_by_canonical, BioesVariant, Scope, DEFAULT_MAX_LEN};
use mulco::tagger::{
    evaluate, extract, forward, gradients, loss, save_params, stream_rng, train_with_validation, HeadLayout, Input,
    ModelParams, Stream, TrainConfig, Vocab,
};
use mulco::toy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_flat, random_sentence, representable, representable_union, scopes_with_offsets};

type Outcome = Result<String, String>;

/// Name, gold, predictions, expected precision, recall and F1.
type MetricCase = (&'static str, Vec<Vec<Mention>>, Vec<Vec<Mention>>, f64, f64, f64);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

fn set(ms: &[Mention]) -> BTreeSet<Mention> {
    ms.iter().cloned().collect()
}

fn government_example() -> Outcome {
    let started = Instant::now();
    let loc = |a, b| Mention::new(a, b, "Location");
    let org = |a, b| Mention::new(a, b, "Organization");
    let (beijing, haidian, haidian_beijing) = (loc(0, 3), loc(3, 6), loc(0, 6));
    let (government, whole) = (org(3, 10), org(0, 10));
    let s = Sentence::new(
        "北京市海淀区人民政府",
        vec![
            beijing.clone(),
            haidian.clone(),
            haidian_beijing.clone(),
            government.clone(),
            whole.clone(),
        ],
    )
    .map_err(|e| e.to_string())?;
    let decoded =
        |scope: Scope| set(&decode_hard(&encode(&s, scope, DEFAULT_MAX_LEN).labeling, scope, s.len()).mentions);
    let gold = set(s.mentions());

    let b_min = decoded(Scope::B_MIN);
    ensure(b_min == set(&[beijing.clone(), haidian.clone()]), || {
        format!("B-min gave {b_min:?}")
    })?;
    let b_max = decoded(Scope::B_MAX);
    let missed: BTreeSet<Mention> = gold.difference(&b_max).cloned().collect();
    ensure(missed == set(&[beijing, haidian, haidian_beijing.clone()]), || {
        format!("B-max missed {missed:?}")
    })?;
    let pair = coverage(&s, &[Scope::B_MIN, Scope::B_MAX], DEFAULT_MAX_LEN);
    ensure(pair.uncovered == vec![haidian_beijing.clone()], || {
        format!("B-min+B-max left {:?}", pair.uncovered)
    })?;
    let three = coverage(&s, &[Scope::B_MIN, Scope::B_MAX, Scope::E_MAX], DEFAULT_MAX_LEN);
    ensure(three.uncovered.is_empty(), || {
        format!("adding E-max left {:?}", three.uncovered)
    })?;
    let all = coverage(&s, &Scope::CANONICAL, DEFAULT_MAX_LEN);
    ensure(set(&all.covered) == gold && all.uncovered.is_empty(), || {
        "four scopes miss a mention".into()
    })?;
    within(started.elapsed(), Duration::from_secs(1))?;
    Ok(format!(
        "4 coverage statements exact, 5/5 with four scopes, {:?}",
        started.elapsed()
    ))
}

fn codec_round_trip() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_000);
    let scopes = scopes_with_offsets();
    let n = 10_000;
    for i in 0..n {
        let s = random_sentence(&mut rng, 40, 8);
        for &scope in &scopes {
            let enc = encode(&s, scope, DEFAULT_MAX_LEN);
            let got = set(&decode_hard(&enc.labeling, scope, s.len()).mentions);
            let want = representable(&s, scope);
            ensure(got == want, || {
                format!("sentence {i}, scope {scope}: got {got:?}, oracle {want:?}")
            })?;
        }
    }
    within(started.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "{n} sentences x {} scopes agree with the oracle in {:.2}s",
        scopes.len(),
        started.elapsed().as_secs_f64()
    ))
}

fn coverage_characterization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_000);
    let mut flagged = 0;
    for i in 0..10_000 {
        let s = random_sentence(&mut rng, 40, 8);
        let union = representable_union(&s, &Scope::CANONICAL);
        let want: BTreeSet<Mention> = s.mentions().iter().filter(|m| !union.contains(*m)).cloned().collect();
        let closed = set(&uncovered_by_canonical(&s, DEFAULT_MAX_LEN));
        ensure(closed == want, || {
            format!("sentence {i}: closed form {closed:?}, brute force {want:?}")
        })?;
        flagged += want.len();
    }
    let x = |a, b| Mention::new(a, b, "X");
    let adversarial =
        Sentence::new("0123456789", vec![x(2, 8), x(2, 5), x(2, 10), x(5, 8), x(0, 8)]).map_err(|e| e.to_string())?;
    let closed = uncovered_by_canonical(&adversarial, DEFAULT_MAX_LEN);
    ensure(closed == vec![x(2, 8)], || {
        format!("adversarial fixture flagged {closed:?}")
    })?;
    let measured = coverage(&adversarial, &Scope::CANONICAL, DEFAULT_MAX_LEN).uncovered;
    ensure(measured == vec![x(2, 8)], || {
        format!("adversarial fixture measured {measured:?}")
    })?;
    Ok(format!(
        "10000 sentences agree ({flagged} uncovered mentions), adversarial fixture flags [2,8) only"
    ))
}

fn flat_completeness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(30_000);
    let mut mentions = 0;
    for i in 0..1000 {
        let s = random_flat(&mut rng, 40);
        mentions += s.mentions().len();
        for scope in Scope::CANONICAL {
            let got = set(&decode_hard(&encode(&s, scope, DEFAULT_MAX_LEN).labeling, scope, s.len()).mentions);
            ensure(got == set(s.mentions()), || {
                format!("sentence {i}: {scope} lost {:?}", set(s.mentions()).difference(&got))
            })?;
        }
    }
    Ok(format!(
        "1000 flat sets, {mentions} mentions, every single scope covers 100%"
    ))
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let cfg = TrainConfig {
            embed_dim: 3,
            hidden: 3,
            layers: 1 + seed as usize % 2,
            max_len: 5,
            ..TrainConfig::default()
        };
        let mut p = ModelParams::<f64>::init(
            cfg.architecture(HeadLayout::Scopes),
            Vocab::from_chars("wxyz".chars().collect()),
            vec!["P".into(), "Q".into()],
            &mut stream_rng(seed, Stream::Init),
        );
        p.weights
            .for_each_mut(|_, t| t.iter_mut().for_each(|x| *x += rng.gen_range(-0.5..0.5)));
        let n = 5;
        let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(1..6)).collect();
        let targets: Vec<Vec<usize>> = p
            .head_sizes()
            .iter()
            .map(|&c| (0..n).map(|_| rng.gen_range(0..c)).collect())
            .collect();
        let mask = vec![true; n];
        let input = Input::Tokens(&tokens);
        let (_, analytic) = gradients(&p, &[(input, &targets[..], &mask[..])]).map_err(|e| e.to_string())?;
        let shapes: Vec<(String, usize)> = analytic
            .tensors()
            .iter()
            .map(|(name, _, t)| (name.clone(), t.len()))
            .collect();
        let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, _, t)| t.to_vec()).collect();
        for (k, (name, len)) in shapes.iter().enumerate() {
            let mut numeric = vec![0.0; *len];
            for (i, g) in numeric.iter_mut().enumerate() {
                let at = |delta: f64| {
                    let mut q = p.clone();
                    let mut idx = 0;
                    q.weights.for_each_mut(|_, t| {
                        if idx == k {
                            t[i] += delta;
                        }
                        idx += 1;
                    });
                    loss(&forward(&q, input).unwrap(), &targets, &mask)
                };
                *g = (at(eps) - at(-eps)) / (2.0 * eps);
            }
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let diff: Vec<f64> = analytic[k].iter().zip(&numeric).map(|(a, b)| a - b).collect();
            let scale = norm(&analytic[k]).max(norm(&numeric));
            let err = if scale < 1e-10 {
                norm(&diff)
            } else {
                norm(&diff) / scale
            };
            ensure(err <= 1e-4, || {
                format!("seed {seed}, tensor {name}: relative error {err:e}")
            })?;
            worst = worst.max(err);
        }
    }
    within(started.elapsed(), Duration::from_secs(60))?;
    Ok(format!(
        "5 models, worst tensor relative error {worst:.2e}, {:.2}s",
        started.elapsed().as_secs_f64()
    ))
}

fn toy_learning() -> Outcome {
    let train = toy::generate(2000, 42);
    let valid = toy::generate(200, 1042);
    let test = toy::generate(200, 2042);
    let config = TrainConfig::default();
    let outermost = HeadLayout::Bioes {
        variant: BioesVariant::Outermost,
    };
    let (mulco, baseline) = std::thread::scope(|scope| {
        let run = |layout| {
            let (train, valid, test, config) = (&train, &valid, &test, &config);
            scope.spawn(move || -> Result<_, String> {
                let started = Instant::now();
                let (params, report) =
                    train_with_validation::<f32>(train, valid, config, layout, None).map_err(|e| e.to_string())?;
                let elapsed = started.elapsed();
                let eval = evaluate(&params, test, None).map_err(|e| e.to_string())?;
                Ok((eval, report.best_epoch, elapsed))
            })
        };
        let a = run(HeadLayout::Scopes);
        let b = run(outermost);
        (a.join().unwrap(), b.join().unwrap())
    });
    let (m, best, elapsed) = mulco?;
    let (b, _, _) = baseline?;
    within(elapsed, Duration::from_secs(600))?;
    ensure(m.micro.f1 >= 0.99, || format!("test F1 {:.4} below 0.99", m.micro.f1))?;
    ensure(b.micro.recall < m.micro.recall, || {
        format!("outermost recall {:.4} not below {:.4}", b.micro.recall, m.micro.recall)
    })?;
    Ok(format!(
        "test F1 {:.4} (best epoch {best}/{}, {:.1}s), recall {:.4} vs outermost {:.4}",
        m.micro.f1,
        config.epochs,
        elapsed.as_secs_f64(),
        m.micro.recall,
        b.micro.recall
    ))
}

fn lstm_ablation() -> Outcome {
    let results: Vec<Result<(f64, f64), String>> = std::thread::scope(|scope| {
        let handles: Vec<_> = [1u64, 2, 3]
            .into_iter()
            .map(|seed| {
                scope.spawn(move || {
                    let train = toy::generate(500, 100 + seed);
                    let valid = toy::generate(100, 200 + seed);
                    let test = toy::generate(200, 300 + seed);
                    let f1 = |recurrent| -> Result<f64, String> {
                        let config = TrainConfig {
                            seed,
                            use_recurrent_encoder: recurrent,
                            ..TrainConfig::default()
                        };
                        let (p, _) = train_with_validation::<f32>(&train, &valid, &config, HeadLayout::Scopes, None)
                            .map_err(|e| e.to_string())?;
                        Ok(evaluate(&p, &test, None).map_err(|e| e.to_string())?.micro.f1)
                    };
                    Ok((f1(true)?, f1(false)?))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let pairs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let wins = pairs.iter().filter(|(with, without)| without < with).count();
    let shown: Vec<String> = pairs.iter().map(|(a, b)| format!("{a:.3}/{b:.3}")).collect();
    ensure(wins >= 2, || {
        format!("lower without the encoder in only {wins}/3 seeds: {shown:?}")
    })?;
    Ok(format!(
        "lower without the encoder in {wins}/3 seeds (with/without F1: {})",
        shown.join(", ")
    ))
}

fn metric_oracle() -> Outcome {
    let m = |a, b, c: &str| Mention::new(a, b, c);
    let (a, b, c, d) = (m(0, 2, "LOC"), m(3, 5, "ORG"), m(6, 7, "LOC"), m(8, 10, "PER"));
    // expected values worked out by hand
    let cases: Vec<MetricCase> = vec![
        (
            "half right",
            vec![vec![a.clone(), b.clone()]],
            vec![vec![a.clone(), c.clone()]],
            0.5,
            0.5,
            0.5,
        ),
        (
            "empty prediction",
            vec![vec![a.clone(), b.clone()]],
            vec![vec![]],
            0.0,
            0.0,
            0.0,
        ),
        ("empty everything", vec![vec![]], vec![vec![]], 0.0, 0.0, 0.0),
        (
            "duplicate hit",
            vec![vec![a.clone()]],
            vec![vec![a.clone(), a.clone()]],
            1.0,
            1.0,
            1.0,
        ),
        (
            "duplicate among misses",
            vec![vec![a.clone(), b.clone(), d.clone()]],
            vec![vec![a.clone(), a.clone(), c.clone()]],
            0.5,
            1.0 / 3.0,
            0.4,
        ),
        (
            "wrong category",
            vec![vec![m(0, 3, "LOC")]],
            vec![vec![m(0, 3, "ORG")]],
            0.0,
            0.0,
            0.0,
        ),
        (
            "boundary off by one",
            vec![vec![m(0, 3, "LOC")]],
            vec![vec![m(0, 4, "LOC")]],
            0.0,
            0.0,
            0.0,
        ),
        (
            "two sentences",
            vec![vec![a.clone(), b.clone()], vec![c.clone()]],
            vec![vec![a.clone()], vec![c.clone(), d.clone(), m(0, 1, "LOC")]],
            0.5,
            2.0 / 3.0,
            4.0 / 7.0,
        ),
        (
            "perfect",
            vec![vec![a.clone()], vec![], vec![b.clone(), d.clone()]],
            vec![vec![a.clone()], vec![], vec![d.clone(), b.clone()]],
            1.0,
            1.0,
            1.0,
        ),
        (
            "spurious in empty sentence",
            vec![vec![], vec![a.clone()]],
            vec![vec![b.clone()], vec![a.clone()]],
            0.5,
            1.0,
            2.0 / 3.0,
        ),
    ];
    for (name, gold, pred, p, r, f) in &cases {
        let s = score(gold, pred).map_err(|e| e.to_string())?.micro;
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9;
        ensure(close(s.precision, *p) && close(s.recall, *r) && close(s.f1, *f), || {
            format!(
                "{name}: got P {} R {} F1 {}, expected {p} {r} {f}",
                s.precision, s.recall, s.f1
            )
        })?;
    }
    Ok(format!("{} hand-computed cases exact to 1e-9", cases.len()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let train = toy::generate(300, 7);
    let test = toy::generate(50, 8);
    let config = TrainConfig {
        epochs: 4,
        seed: 13,
        ..TrainConfig::default()
    };
    let run = |tag: &str| -> Result<[Vec<u8>; 3], String> {
        let (params, report) =
            train_with_validation::<f32>(&train, &Corpus::default(), &config, HeadLayout::Scopes, None)
                .map_err(|e| e.to_string())?;
        let ckpt = dir.path().join(format!("{tag}.bin"));
        save_params(&params, Some(&config), &ckpt).map_err(|e| e.to_string())?;
        let sentences = test
            .sentences()
            .iter()
            .map(|s| Sentence::new(&s.text(), extract(&params, s, None).unwrap()).unwrap())
            .collect();
        let preds = Corpus::with_categories(sentences, params.categories.clone()).map_err(|e| e.to_string())?;
        let pred_path = dir.path().join(format!("{tag}.jsonl"));
        preds.save(&pred_path).map_err(|e| e.to_string())?;
        let read = |p| fs::read(p).map_err(|e| e.to_string());
        Ok([read(&ckpt)?, serde_json::to_vec(&report).unwrap(), read(&pred_path)?])
    };
    let first = run("a")?;
    let second = run("b")?;
    for (what, (x, y)) in ["checkpoint", "train report", "predictions"]
        .iter()
        .zip(first.iter().zip(&second))
    {
        ensure(x == y, || format!("{what} differs between runs"))?;
    }
    Ok(format!(
        "checkpoint ({} bytes), report and predictions bit-identical",
        first[0].len()
    ))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("nested government example", government_example),
        ("codec round trip", codec_round_trip),
        ("coverage characterization", coverage_characterization),
        ("flat completeness", flat_completeness),
        ("gradient check", gradient_check),
        ("toy-language learning", toy_learning),
        ("-LSTM ablation direction", lstm_ablation),
        ("metric oracle", metric_oracle),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
