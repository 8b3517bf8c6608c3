//! Acceptance criteria, run as a plain binary so every criterion prints a PASS/FAIL line.

use std::collections::HashSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use lgfusion::annotool::*;
use lgfusion::harness::*;
use lgfusion::lgf::{multi_head_attention, window_mask_matrix, AttentionIds, LgfConfig, LgfModel};
use lgfusion::numcore::{GradCheckConfig, Graph, ParamStore, Tensor};
use lgfusion::objective::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn desk_model(seed: u64) -> LgfModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LgfModel::new(LgfConfig::default(), &mut rng).unwrap()
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let data = SyntheticTaskConfig {
        train_samples: 2,
        test_samples: 0,
        ..SyntheticTaskConfig::default()
    };
    let batch = gen_synthetic(&data).map_err(|e| e.to_string())?.train;
    let model = desk_model(0);
    let cfg = TrainConfig::default();
    let gc = GradCheckConfig {
        step: 1e-5,
        tolerance: 1e-4,
        ..GradCheckConfig::default()
    };
    let report = model_grad_check(&model, &batch, &cfg.loss, &cfg.polarity, gc).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let elements: usize = report.params.iter().map(|p| p.elements).sum();
    ensure!(
        report.passed,
        "max relative error {:.3e}; failing: {:?}",
        report.max_rel_err,
        report.failures().map(|p| &p.name).collect::<Vec<_>>()
    );
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "{} tensors / {elements} elements, max rel err {:.2e}, {:.1}s",
        report.params.len(),
        report.max_rel_err,
        elapsed.as_secs_f64()
    ))
}

fn mask_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_dense: f64 = 0.0;
    let mut trials = 0;
    for _ in 0..60 {
        let s = rng.gen_range(1..=8);
        let d = rng.gen_range(0..=3);
        let heads = rng.gen_range(1..=2);
        let dk = rng.gen_range(1..=3);
        let c = heads * dk;
        let mut store = ParamStore::new();
        let ids = AttentionIds::register(&mut store, "a", c, heads, dk, &mut rng);
        let q = random(&mut rng, &[s, c]);
        let kv = random(&mut rng, &[s, c]);
        let mut g = Graph::new();
        let (qv, kvv) = (g.input(q), g.input(kv));
        let masked = multi_head_attention(&mut g, &store, &ids, qv, kvv, Some(&window_mask_matrix(s, d)))
            .map_err(|e| e.to_string())?;
        for w in &masked.weights {
            let w = g.value(*w);
            for t in 0..s {
                for u in 0..s {
                    if t.abs_diff(u) > d {
                        ensure!(
                            w.at2(t, u) == 0.0,
                            "weight ({t},{u}) = {:e} with s={s} d={d}",
                            w.at2(t, u)
                        );
                    }
                }
            }
        }
        let wide = multi_head_attention(&mut g, &store, &ids, qv, kvv, Some(&window_mask_matrix(s, s)))
            .map_err(|e| e.to_string())?;
        let dense = multi_head_attention(&mut g, &store, &ids, qv, kvv, None).map_err(|e| e.to_string())?;
        let diff = g
            .value(wide.out)
            .max_abs_diff(g.value(dense.out))
            .map_err(|e| e.to_string())?;
        ensure!(diff < 1e-10, "wide window differs from dense by {diff:e} (s={s})");
        worst_dense = worst_dense.max(diff);
        trials += 1;
    }
    Ok(format!(
        "{trials} random configs, wide-vs-dense max diff {worst_dense:.1e}"
    ))
}

fn probs(rng: &mut ChaCha8Rng, n: usize) -> Tensor<f64> {
    let logits = Tensor::new(vec![n, 6], (0..n * 6).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    softmax_rows(&logits).unwrap()
}

fn polarity_ce_identities() -> Outcome {
    let pm = PolarityMap::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut equalities = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..6);
        let p = probs(&mut rng, n);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..6)).collect();
        let ce = cross_entropy(&p, &labels).map_err(|e| e.to_string())?;
        let (l0, _) = polarity_ce_loss(&p, &labels, &LossConfig::uniform(0.0), &pm).map_err(|e| e.to_string())?;
        ensure!(
            (l0 - ce).abs() < 1e-12,
            "gamma 0 differs from CE by {:e}",
            (l0 - ce).abs()
        );
        let (l7, tel) = polarity_ce_loss(&p, &labels, &LossConfig::uniform(0.7), &pm).map_err(|e| e.to_string())?;
        ensure!(l7 >= ce - 1e-15, "penalized loss {l7} below CE {ce}");
        ensure!(
            (l7 == ce) == (tel.polarity_mismatches == 0),
            "equality with CE does not match zero mismatches ({} mismatches)",
            tel.polarity_mismatches
        );
        equalities += usize::from(l7 == ce);
    }
    let mut r = vec![0.0; 6];
    r[Emotion::Excitation.index()] = 0.5;
    r[Emotion::Relaxation.index()] = 0.3;
    r[Emotion::Fear.index()] = 0.2;
    let p = Tensor::from_rows(&[r]).unwrap();
    let y = [Emotion::Excitation.index()];
    let cfg = LossConfig::uniform(0.7);
    let (same, _) =
        polarity_ce_loss_with_preds(&p, &y, &[Emotion::Relaxation.index()], &cfg, &pm).map_err(|e| e.to_string())?;
    let (cross, _) =
        polarity_ce_loss_with_preds(&p, &y, &[Emotion::Fear.index()], &cfg, &pm).map_err(|e| e.to_string())?;
    ensure!((same - 2f64.ln()).abs() < 1e-9, "same-polarity value {same}");
    ensure!((cross - 1.7 * 2f64.ln()).abs() < 1e-9, "cross-polarity value {cross}");
    Ok(format!(
        "200 random batches ({equalities} mismatch-free), worked values {same:.6} / {cross:.6}"
    ))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let task = gen_synthetic(&SyntheticTaskConfig::default()).map_err(|e| e.to_string())?;
    let mut trainer = Trainer::<f64>::new(TrainConfig::default()).map_err(|e| e.to_string())?;
    for epoch in 1..=500 {
        trainer.run_epoch(&task.train).map_err(|e| e.to_string())?;
        let acc = trainer.evaluate(&task.train).map_err(|e| e.to_string())?.acc;
        if acc >= 98.0 {
            let elapsed = start.elapsed();
            ensure!(elapsed < Duration::from_secs(600), "took {elapsed:?}");
            return Ok(format!(
                "train acc {acc:.2}% after {epoch} epochs, {:.1}s",
                elapsed.as_secs_f64()
            ));
        }
    }
    Err("train accuracy stayed below 98% for 500 epochs".into())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fusion_necessity() -> Outcome {
    let (mut audio, mut visual, mut fused) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..3 {
        let cfg = RunConfig::default().with_seed(seed);
        let task = gen_synthetic(&cfg.data).map_err(|e| e.to_string())?;
        for (input, out) in [(ProbeInput::Audio, &mut audio), (ProbeInput::Visual, &mut visual)] {
            let probe = LinearProbe::fit(
                &task.train,
                SYNTHETIC_CLASSES,
                &ProbeConfig {
                    input,
                    ..ProbeConfig::default()
                },
            )
            .map_err(|e| e.to_string())?;
            out.push(
                evaluate(&probe, &task.test, SYNTHETIC_CLASSES)
                    .map_err(|e| e.to_string())?
                    .acc,
            );
        }
        let mut trainer = Trainer::<f64>::new(cfg.train).map_err(|e| e.to_string())?;
        trainer.train(&task.train).map_err(|e| e.to_string())?;
        fused.push(trainer.evaluate(&task.test).map_err(|e| e.to_string())?.acc);
    }
    let (a, v, f) = (median(audio.clone()), median(visual.clone()), median(fused.clone()));
    let detail = format!(
        "median test acc audio {a:.1}% visual {v:.1}% fused {f:.1}% (per seed {audio:.1?} {visual:.1?} {fused:.1?})"
    );
    ensure!(a <= 60.0 && v <= 45.0 && f >= 90.0, "{detail}");
    Ok(detail)
}

fn deferred_equivalence() -> Outcome {
    let mut data = gen_synthetic(&SyntheticTaskConfig::default())
        .map_err(|e| e.to_string())?
        .train;
    data.samples.truncate(32);
    let base = TrainConfig {
        shuffle: false,
        ..TrainConfig::default()
    };
    let mut deferred = Trainer::<f64>::new(TrainConfig {
        batch_size: 8,
        deferred_every: 4,
        ..base.clone()
    })
    .map_err(|e| e.to_string())?;
    let mut union = Trainer::<f64>::new(TrainConfig {
        batch_size: 32,
        deferred_every: 1,
        ..base
    })
    .map_err(|e| e.to_string())?;
    deferred.run_epoch(&data).map_err(|e| e.to_string())?;
    union.run_epoch(&data).map_err(|e| e.to_string())?;
    ensure!(
        deferred.steps() == 1 && union.steps() == 1,
        "step counts {} / {}",
        deferred.steps(),
        union.steps()
    );
    let (sa, sb) = (deferred.model().store(), union.model().store());
    let diff = sa
        .ids()
        .map(|id| sa.value(id).max_abs_diff(sb.value(id)).unwrap())
        .fold(0.0, f64::max);
    ensure!(diff < 1e-10, "max parameter difference {diff:e}");
    Ok(format!("4 x 8 deferred vs 1 x 32: max parameter difference {diff:.1e}"))
}

fn stage_sets(mut make: impl FnMut(Emotion) -> Vec<CrossCheckSample>) -> Vec<CrossCheckSet> {
    standard_stage_layout()
        .into_iter()
        .flat_map(|(e, n)| (0..n).map(move |_| (e, n)))
        .map(|(category, sets_in_category)| CrossCheckSet {
            category,
            stage: CheckStage::A,
            sets_in_category,
            samples: make(category),
        })
        .collect()
}

fn shifted(e: Emotion, k: usize) -> Emotion {
    Emotion::ALL[(e.index() + k) % 6]
}

fn consistency_metrics() -> Outcome {
    let perfect = stage_sets(|e| {
        vec![
            CrossCheckSample {
                prior: e,
                current: [e; 3]
            };
            100
        ]
    });
    let top = inter_consistency(&perfect, 6).map_err(|e| e.to_string())?;
    ensure!(top == 70.0, "all-consistent stage gives {top}");
    let mixed = stage_sets(|e| {
        let mut v = vec![
            CrossCheckSample {
                prior: e,
                current: [e, e, shifted(e, 1)]
            };
            80
        ];
        v.extend(vec![
            CrossCheckSample {
                prior: e,
                current: [shifted(e, 1), shifted(e, 2), shifted(e, 3)]
            };
            10
        ]);
        v.extend(vec![
            CrossCheckSample {
                prior: e,
                current: [shifted(e, 2); 3]
            };
            10
        ]);
        v
    });
    let mid = inter_consistency(&mixed, 6).map_err(|e| e.to_string())?;
    ensure!((mid - 59.0).abs() <= 1e-12, "mixed stage gives {mid}");
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..300 {
        let m = rng.gen_range(1..=100);
        let sets = stage_sets(|_| {
            (0..m)
                .map(|_| CrossCheckSample {
                    prior: Emotion::ALL[rng.gen_range(0..6)],
                    current: [0; 3].map(|_| Emotion::ALL[rng.gen_range(0..6)]),
                })
                .collect()
        });
        let sa = intra_consistency(&sets).map_err(|e| e.to_string())?;
        let sr = inter_consistency(&sets, 6).map_err(|e| e.to_string())? * 100.0 / m as f64;
        ensure!((0.0..=1.0).contains(&sa), "S_a {sa} out of range");
        ensure!((0.0..=70.0 + 1e-9).contains(&sr), "S_r {sr} out of range for m={m}");
    }
    Ok(format!("S_r max {top}, mixed {mid}, 300 random stages within bounds"))
}

fn vote_resolver() -> Outcome {
    let mut paths = 0usize;
    let mut stage_one = 0usize;
    for code in 0..216 {
        let votes = [code / 36, (code / 6) % 6, code % 6].map(|i| Emotion::ALL[i]);
        let two_of_three = votes[0] == votes[1] || votes[1] == votes[2] || votes[0] == votes[2];
        for l in 0..6 {
            for x in 0..6 {
                for e in 0..6 {
                    let mut v = VoteRecord::new(format!("s{code}"), votes);
                    v.leader_vote = Some(Emotion::ALL[l]);
                    v.exchange_vote = Some(Emotion::ALL[x]);
                    v.expert_label = Some(Emotion::ALL[e]);
                    let r = resolve_label(&v).map_err(|err| format!("{votes:?}: {err}"))?;
                    ensure!((1..=4).contains(&r.stage), "stage {} for {votes:?}", r.stage);
                    if two_of_three {
                        ensure!(r.stage == 1, "{votes:?} resolved at stage {}", r.stage);
                        stage_one += 1;
                    }
                    paths += 1;
                }
            }
        }
    }
    Ok(format!(
        "{paths} vote paths terminate, {stage_one} two-of-three paths resolve at stage 1"
    ))
}

fn kappa() -> Outcome {
    let unanimous = count_table(&[vec![0; 3], vec![4; 3], vec![2; 3], vec![5; 3]], 6).map_err(|e| e.to_string())?;
    let one = fleiss_kappa(&unanimous).map_err(|e| e.to_string())?;
    ensure!(one == 1.0, "unanimous kappa {one}");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ratings: Vec<Vec<usize>> = (0..1000)
        .map(|_| (0..3).map(|_| rng.gen_range(0..6)).collect())
        .collect();
    let k = fleiss_kappa(&count_table(&ratings, 6).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(k.abs() < 0.05, "random kappa {k}");
    Ok(format!("unanimous {one}, random {k:.4}"))
}

fn variant_sampling() -> Outcome {
    let manifest = DatasetManifest::from_counts(&CORPUS_COUNTS);
    let cfg = VariantConfig::default();
    let a = sample_variants(&manifest, &cfg).map_err(|e| e.to_string())?;
    let b = sample_variants(&manifest, &cfg).map_err(|e| e.to_string())?;
    ensure!(a.balanced.len() == 14_462, "balanced has {}", a.balanced.len());
    ensure!(a.test.len() == 5_000, "test has {}", a.test.len());
    ensure!(a == b, "same seed produced different manifests");
    for m in [&a.balanced, &a.test] {
        let ids: HashSet<&str> = m.records.iter().map(|r| r.id.as_str()).collect();
        ensure!(ids.len() == m.len(), "duplicate ids in a variant");
    }
    Ok(format!(
        "balanced {}, test {}, reproducible",
        a.balanced.len(),
        a.test.len()
    ))
}

fn checkpoint_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let cfg = RunConfig::default();
    let task = gen_synthetic(&cfg.data).map_err(|e| e.to_string())?;
    let train = TrainConfig { epochs: 5, ..cfg.train };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut dirs = Vec::new();
    for run in 0..2 {
        let mut t = Trainer::<f64>::new(train.clone()).map_err(|e| e.to_string())?;
        t.train(&task.train).map_err(|e| e.to_string())?;
        let dir = tmp.path().join(format!("run{run}"));
        save_trainer(&t, &dir).map_err(|e| e.to_string())?;
        dirs.push((dir, t));
    }
    let (first, second) = (checkpoint_bytes(&dirs[0].0), checkpoint_bytes(&dirs[1].0));
    ensure!(first == second, "checkpoints of identical runs differ");
    let loaded = load_model::<f64>(&dirs[0].0).map_err(|e| e.to_string())?;
    let original = dirs[0].1.model();
    for s in &task.test.samples {
        let (x, y) = (
            original.forward(&s.audio, &s.visual).map_err(|e| e.to_string())?,
            loaded.forward(&s.audio, &s.visual).map_err(|e| e.to_string())?,
        );
        ensure!(x == y, "reloaded model output differs");
    }
    let m1 = evaluate(original, &task.test, 6).map_err(|e| e.to_string())?;
    let m2 = evaluate(&loaded, &task.test, 6).map_err(|e| e.to_string())?;
    ensure!(m1 == m2, "reloaded metrics differ");
    let bytes: usize = first.iter().map(|f| f.1.len()).sum();
    Ok(format!(
        "{} checkpoint files ({bytes} bytes) identical, {} test outputs bit-exact",
        first.len(),
        task.test.len()
    ))
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [Criterion; 11] = [
        ("gradient fidelity", gradient_fidelity),
        ("mask exactness", mask_exactness),
        ("polarity-penalized loss identities", polarity_ce_identities),
        ("overfit 64 samples", overfit),
        ("fusion necessity", fusion_necessity),
        ("deferred-update equivalence", deferred_equivalence),
        ("consistency metrics", consistency_metrics),
        ("vote resolver", vote_resolver),
        ("fleiss kappa", kappa),
        ("variant sampling", variant_sampling),
        ("determinism and checkpoint round trip", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail})", i + 1),
            Err(why) => {
                failures += 1;
                println!("criterion {:>2} {name}: FAIL ({why})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed", criteria.len() - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
