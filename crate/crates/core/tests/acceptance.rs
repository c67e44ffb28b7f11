//! Acceptance criteria 1 to 8, one PASS/FAIL line each. Exits non-zero if
//! any criterion fails.

mod common;

use std::time::{Duration, Instant};

use hagan::analysis::{classify_pivots, domain_probe_accuracy, extract_word_scores, PivotCategory};
use hagan::autodiff::{grad_check, Tape};
use hagan::corpus::{generate_synthetic, parse_corpus, Document, SynthConfig, SynthCorpus};
use hagan::discriminator::{discriminate, domain_dist, sentiment_dist};
use hagan::generator::encode_document;
use hagan::losses::{
    discriminator_loss, domain_confusion_loss, domain_loss, entropy_loss, generator_loss,
    sentiment_loss, Domain, LossWeights,
};
use hagan::trainer::{load_checkpoint, log_to_tsv, save_checkpoint, write_checkpoint};
use hagan::{evaluate, Hagan, Result, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GRAD_TOLERANCE: f64 = 1e-3;
const GRAD_EPSILON: f64 = 1e-5;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const ORACLE_TOLERANCE: f64 = 1e-12;
const ORACLE_INSTANCES: u64 = 20;
const LOSS_TOLERANCE: f64 = 1e-12;
const ENTROPY_SAMPLES: usize = 1000;
const SEEDS: [u64; 3] = [0, 1, 2];
const EPOCHS: usize = 30;
const MIN_GAIN: f64 = 0.05;
const TRANSFER_BUDGET: Duration = Duration::from_secs(300);
const MIN_PROBE_GAP: f64 = 0.10;
const MAX_PROBE: f64 = 0.65;
const PIVOT_HIGH: f64 = 0.9;
const PIVOT_LOW: f64 = 0.5;
const TOP_PIVOTS: usize = 10;
const MIN_PIVOT_PRECISION: f64 = 0.8;
const MIN_PIVOT_SEEDS: usize = 2;
const DETERMINISM_EPOCHS: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(number: usize, name: &str, outcome: Result<Outcome>) -> bool {
    let (pass, detail) = match outcome {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {number} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn gradient_integrity() -> Result<Outcome> {
    let start = Instant::now();
    let corpus = parse_corpus("1\tS\tgreat plot here\tdull ending though\n", "-\tT\tsharp screen here\tweak battery though\n", 100)?;
    let cfg = TrainConfig::default();
    let mut model = Hagan::new(cfg.model_spec(corpus.vocab.len()), 11)?;
    let source = corpus.source_labeled[0].clone();
    let target = corpus.target_unlabeled[0].clone();
    let weights = cfg.weights;
    let template = model.clone();
    let report = grad_check(
        &mut model.store,
        |tape, store| {
            let m = Hagan {
                store: store.clone(),
                ..template.clone()
            };
            let bound = m.bind(tape, true, true);
            // A fresh rng per evaluation keeps the dropout mask fixed.
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut forward = |tape: &mut Tape, doc: &Document| {
                let enc = encode_document(tape, &bound.generator, &doc.sentences)?;
                discriminate(tape, &bound.discriminator, &enc.repr, true, &mut rng)
            };
            let ps = forward(tape, &source.doc)?;
            let pt = forward(tape, &target)?;
            let sen = sentiment_dist(tape, &ps, 2)?;
            let l_sen = sentiment_loss(tape, &[(sen, source.sentiment.class_index())])?;
            let ds = domain_dist(tape, &ps, 2)?;
            let dt = domain_dist(tape, &pt, 2)?;
            let l_dom = domain_loss(tape, &[(ds, Domain::Source), (dt.clone(), Domain::Target)])?;
            let l_d = discriminator_loss(tape, &l_sen, &l_dom, &weights)?;
            let l_conf = domain_confusion_loss(tape, &[(dt, Domain::Target)])?;
            let st = sentiment_dist(tape, &pt, 2)?;
            let l_ent = entropy_loss(tape, &[st])?;
            let l_g = generator_loss(tape, &l_sen, &l_conf, &l_ent, &weights)?;
            tape.add(&l_d, &l_g)
        },
        GRAD_EPSILON,
    )?;
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: report.max_rel_error < GRAD_TOLERANCE && elapsed < GRAD_BUDGET,
        detail: format!(
            "max rel error {:.2e} over {} entries, {:.1} s",
            report.max_rel_error,
            report.entries_checked,
            elapsed.as_secs_f64()
        ),
    })
}

fn oracle_equivalence() -> Result<Outcome> {
    let err = common::encoder_oracle_error(ORACLE_INSTANCES);
    Ok(Outcome {
        pass: err < ORACLE_TOLERANCE,
        detail: format!("max deviation {err:.2e} over {ORACLE_INSTANCES} instances"),
    })
}

fn loss_oracles() -> Result<Outcome> {
    let errs = common::loss_oracle_errors();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let outside = common::entropy_out_of_range(ENTROPY_SAMPLES);
    Ok(Outcome {
        pass: worst < LOSS_TOLERANCE && outside == 0,
        detail: format!("max deviation {worst:.2e}, {outside}/{ENTROPY_SAMPLES} entropies outside [0, ln 2]"),
    })
}

/// Both models of one seed, trained on the same corpus.
struct SeedRun {
    seed: u64,
    synth: SynthCorpus,
    naive: Trainer,
    hagan: Trainer,
    naive_acc: f64,
    hagan_acc: f64,
}

fn train_pair(seed: u64) -> Result<SeedRun> {
    let synth = generate_synthetic(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    let base = TrainConfig {
        seed,
        epochs: EPOCHS,
        ..TrainConfig::synthetic()
    };
    let split = synth.corpus.split(base.source_test_fraction, seed)?;
    let run = |weights| -> Result<(Trainer, f64)> {
        let mut t = Trainer::new(TrainConfig { weights, ..base.clone() }, split.vocab.len())?;
        t.run(split.training_view(), split.eval_sets())?;
        let acc = evaluate(&t.model, &split.target_test)?;
        Ok((t, acc))
    };
    let (naive, naive_acc) = run(LossWeights::naive())?;
    let (hagan, hagan_acc) = run(LossWeights::default())?;
    Ok(SeedRun {
        seed,
        synth,
        naive,
        hagan,
        naive_acc,
        hagan_acc,
    })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn per_seed(runs: &[SeedRun], f: impl Fn(&SeedRun) -> String) -> String {
    runs.iter().map(|r| format!("seed {}: {}", r.seed, f(r))).collect::<Vec<_>>().join("; ")
}

fn transfer_gain(runs: &[SeedRun], elapsed: Duration) -> Result<Outcome> {
    let gain = mean(runs.iter().map(|r| r.hagan_acc - r.naive_acc));
    Ok(Outcome {
        pass: gain >= MIN_GAIN && elapsed < TRANSFER_BUDGET,
        detail: format!(
            "mean target gain {:+.1} points; {}; {:.0} s",
            100.0 * gain,
            per_seed(runs, |r| format!("naive {:.3} hagan {:.3}", r.naive_acc, r.hagan_acc)),
            elapsed.as_secs_f64()
        ),
    })
}

fn domain_documents(synth: &SynthCorpus) -> (Vec<&Document>, Vec<&Document>) {
    let c = &synth.corpus;
    let source = c.source_labeled.iter().map(|d| &d.doc).chain(&c.source_unlabeled).collect();
    let target = c.target_unlabeled.iter().chain(c.target_test.iter().map(|d| &d.doc)).collect();
    (source, target)
}

fn probe(model: &Hagan, synth: &SynthCorpus, seed: u64) -> Result<f64> {
    let (source, target) = domain_documents(synth);
    domain_probe_accuracy(&model.represent(source)?, &model.represent(target)?, seed)
}

fn indistinguishability(runs: &[SeedRun]) -> Result<Outcome> {
    let mut naive = Vec::new();
    let mut adv = Vec::new();
    for r in runs {
        naive.push(probe(&r.naive.model, &r.synth, r.seed)?);
        adv.push(probe(&r.hagan.model, &r.synth, r.seed)?);
    }
    let (n, h) = (mean(naive.iter().copied()), mean(adv.iter().copied()));
    let detail = runs
        .iter()
        .zip(naive.iter().zip(&adv))
        .map(|(r, (a, b))| format!("seed {}: naive {a:.3} hagan {b:.3}", r.seed))
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Outcome {
        pass: n - h >= MIN_PROBE_GAP && h <= MAX_PROBE,
        detail: format!("mean probe naive {n:.3} hagan {h:.3}; {detail}"),
    })
}

/// Top-k pivot precision and planted target-only hits among target non-pivots.
fn pivot_recovery_of(r: &SeedRun, high: f64) -> Result<(usize, usize, usize)> {
    let (source, target) = domain_documents(&r.synth);
    let han = extract_word_scores(&r.naive.model, source)?;
    let adv = extract_word_scores(&r.hagan.model, target)?;
    let rep = classify_pivots(&han, &adv, high, PIVOT_LOW)?;
    let role = |w: &str| r.synth.role_of(w);
    let top: Vec<&str> = rep.words(PivotCategory::Pivot).into_iter().take(TOP_PIVOTS).collect();
    let hits = top.iter().filter(|w| role(w).is_some_and(|x| x.is_pivot())).count();
    let target_only = rep
        .words(PivotCategory::TargetNonPivot)
        .iter()
        .filter(|w| role(w).is_some_and(|x| x.is_target_only()))
        .count();
    Ok((hits, top.len(), target_only))
}

fn pivot_recovery(runs: &[SeedRun]) -> Result<Outcome> {
    let mut good = 0;
    let mut detail = Vec::new();
    for r in runs {
        let (hits, listed, target_only) = pivot_recovery_of(r, PIVOT_HIGH)?;
        let ok = listed > 0 && hits as f64 / listed as f64 >= MIN_PIVOT_PRECISION && target_only > 0;
        good += usize::from(ok);
        detail.push(format!(
            "seed {}: {hits}/{listed} pivots, {target_only} target-only non-pivots",
            r.seed
        ));
    }
    Ok(Outcome {
        pass: good >= MIN_PIVOT_SEEDS,
        detail: format!("{good}/{} seeds; {}", runs.len(), detail.join("; ")),
    })
}

fn determinism() -> Result<(Outcome, Trainer, hagan::corpus::SplitCorpus)> {
    let synth = generate_synthetic(&SynthConfig::default())?;
    let cfg = TrainConfig {
        epochs: DETERMINISM_EPOCHS,
        ..TrainConfig::synthetic()
    };
    let split = synth.corpus.split(cfg.source_test_fraction, cfg.seed)?;
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut t = Trainer::new(cfg.clone(), split.vocab.len())?;
        let report = t.run(split.training_view(), split.eval_sets())?;
        runs.push((t, report));
    }
    let (b, rb) = runs.pop().expect("two runs");
    let (a, ra) = runs.pop().expect("two runs");
    let same_log = log_to_tsv(&ra.log) == log_to_tsv(&rb.log);
    let same_ckpt = write_checkpoint(&a.model, &a.config, &a.optimizer) == write_checkpoint(&b.model, &b.config, &b.optimizer);
    let rounds = split.source_train.len().div_ceil(cfg.batch_size);
    let expected_phases = DETERMINISM_EPOCHS * rounds * (cfg.disc_steps + 1);
    let frozen_ok = ra.phases.len() == expected_phases && ra.phases.iter().all(|c| c.frozen_before == c.frozen_after);
    let outcome = Outcome {
        pass: same_log && same_ckpt && frozen_ok,
        detail: format!(
            "log identical: {same_log}, checkpoint identical: {same_ckpt}, {} of {expected_phases} phases with unchanged frozen hash",
            ra.phases.iter().filter(|c| c.frozen_before == c.frozen_after).count()
        ),
    };
    Ok((outcome, a, split))
}

fn checkpoint_round_trip(t: &Trainer, split: &hagan::corpus::SplitCorpus) -> Result<Outcome> {
    let dir = std::env::temp_dir().join(format!("hagan-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| hagan::Error::Usage(e.to_string()))?;
    let (first, second) = (dir.join("first.txt"), dir.join("second.txt"));
    save_checkpoint(&first, &t.model, &t.config, &t.optimizer)?;
    let loaded = load_checkpoint(&first)?;
    save_checkpoint(&second, &loaded.model, &loaded.config, &loaded.optimizer)?;
    let bytes = |p: &std::path::Path| std::fs::read(p).unwrap_or_default();
    let identical = bytes(&first) == bytes(&second) && !bytes(&first).is_empty();
    let _ = std::fs::remove_dir_all(&dir);
    let before = [evaluate(&t.model, &split.source_test)?, evaluate(&t.model, &split.target_test)?];
    let after = [evaluate(&loaded.model, &split.source_test)?, evaluate(&loaded.model, &split.target_test)?];
    Ok(Outcome {
        pass: identical && before == after,
        detail: format!("files identical: {identical}, accuracy before {before:?} after {after:?}"),
    })
}

fn main() {
    let mut all = true;
    all &= report(1, "gradient integrity", gradient_integrity());
    all &= report(2, "oracle equivalence", oracle_equivalence());
    all &= report(3, "loss-formula oracles", loss_oracles());

    let start = Instant::now();
    let runs: Result<Vec<SeedRun>> = SEEDS.iter().map(|&s| train_pair(s)).collect();
    let elapsed = start.elapsed();
    match runs {
        Ok(runs) => {
            all &= report(4, "synthetic transfer gain", transfer_gain(&runs, elapsed));
            all &= report(5, "domain indistinguishability", indistinguishability(&runs));
            all &= report(6, "pivot recovery", pivot_recovery(&runs));
        }
        Err(e) => {
            for (n, name) in [(4, "synthetic transfer gain"), (5, "domain indistinguishability"), (6, "pivot recovery")] {
                all &= report(n, name, Err(hagan::Error::Usage(format!("training failed: {e}"))));
            }
        }
    }

    match determinism() {
        Ok((outcome, trainer, split)) => {
            all &= report(7, "determinism and freezing", Ok(outcome));
            all &= report(8, "checkpoint round trip", checkpoint_round_trip(&trainer, &split));
        }
        Err(e) => {
            all &= report(7, "determinism and freezing", Err(e));
            all &= report(8, "checkpoint round trip", Err(hagan::Error::Usage("no trained model".into())));
        }
    }
    if !all {
        std::process::exit(1);
    }
}
