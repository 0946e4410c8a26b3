//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saber::backend::{
    binary_entropy, OracleBackend, OracleParams, PositionPrediction, PredictionSet, ScriptedBackend,
};
use saber::cli::{cmd_generate, ExperimentConfig};
use saber::sampler::{
    compute_confidence_drops, compute_remask_budget, compute_threshold, generate, GenerationResult,
    RunContext, SaberConfig, SaberSampler, SaberVariant, Strategy, ThresholdMode,
};
use saber::state::{SequenceState, VocabSpec};
use saber::telemetry::{metrics, replay_trace, trend, Trace};

/// Absolute tolerance for real-valued formula checks.
const FORMULA_TOL: f64 = 1e-12;
/// Absolute tolerance when comparing replayed and live ledgers.
const REPLAY_TOL: f64 = 1e-6;

const FORMULA_BUDGET: Duration = Duration::from_secs(1);
const GREEDY_BUDGET: Duration = Duration::from_secs(30);
const TERMINATION_BUDGET: Duration = Duration::from_secs(30);
const TREND_BUDGET: Duration = Duration::from_secs(60);
const ABLATION_BUDGET: Duration = Duration::from_secs(120);
const REPLAY_BUDGET: Duration = Duration::from_secs(30);

const GREEDY_SEEDS: u64 = 200;
const GREEDY_LEN: usize = 32;

const TERMINATION_INSTANCES: u64 = 500;
const TERMINATION_CAP_FACTOR: f64 = 2.0;

const TREND_LEN: usize = 64;
const TREND_DECEIVE: f64 = 0.1;
const TREND_SEEDS: u64 = 20;
const TREND_MIN_RHO: f64 = 0.5;
const TREND_MIN_PASSING: usize = 18;

const ABLATION_LEN: usize = 64;
const ABLATION_DECEIVE: f64 = 0.15;
const ABLATION_SEEDS: u64 = 100;
/// Full sampler's error must be at most this fraction of the no-backtrack error.
const ABLATION_MAX_ERROR_RATIO: f64 = 0.8;
/// Full sampler's mean steps must be at most this fraction of L.
const ABLATION_MAX_STEP_FRACTION: f64 = 0.75;

const DETERMINISM_REPEATS: usize = 20;

fn vocab() -> VocabSpec {
    VocabSpec::new(1024, 1023).unwrap()
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn check(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = f();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed < b);
    let pass = v.pass && in_time;
    let limit = budget.map_or(String::new(), |b| {
        format!(" / limit {:.0}s", b.as_secs_f64())
    });
    println!(
        "{} {name}: {} [{:.2}s{limit}]",
        if pass { "PASS" } else { "FAIL" },
        v.detail,
        elapsed.as_secs_f64()
    );
    pass
}

fn oracle_run(strategy: &Strategy, len: usize, deceive: f64, seed: u64) -> GenerationResult {
    let params = OracleParams::fixture(len, deceive, seed, vocab());
    let target = params.target.clone();
    let backend = OracleBackend::new(params).unwrap();
    generate(
        SequenceState::new(vec![], len, vocab()).unwrap(),
        &backend,
        &SaberConfig::default(),
        strategy,
        &RunContext::new(format!("{strategy}-seed{seed}"), seed).with_target(target),
    )
    .unwrap()
}

// ---------------------------------------------------------------- formulas

fn formula_exactness() -> Verdict {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0);

    // Threshold: empty ledger is c_max; otherwise the arithmetic mean of the
    // ledger. Dyadic confidences make the reference sum exact.
    for c_max in [0.0, 0.3, 0.9, 1.0] {
        let s = SequenceState::new(vec![], 4, vocab()).unwrap();
        let cfg = SaberConfig {
            c_max,
            ..Default::default()
        };
        if compute_threshold(&s, &cfg, &BTreeMap::new()) != c_max {
            failures.push(format!("empty ledger threshold != {c_max}"));
        }
    }
    for _ in 0..200 {
        let n = rng.gen_range(1..=64);
        let confs: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=1024)).collect();
        let mut s = SequenceState::new(vec![], n, vocab()).unwrap();
        for (i, &c) in confs.iter().enumerate() {
            s.apply_unmask(i, 1, c as f64 / 1024.0).unwrap();
        }
        let exact = confs.iter().map(|&c| c as u64).sum::<u64>() as f64 / (1024.0 * n as f64);
        let tau = compute_threshold(&s, &SaberConfig::default(), &BTreeMap::new());
        if (tau - exact).abs() > FORMULA_TOL {
            failures.push(format!("threshold {tau} != {exact}"));
        }
    }
    // First-commit variant averages the recorded first confidences of the
    // currently committed positions.
    {
        let mut s = SequenceState::new(vec![], 3, vocab()).unwrap();
        s.apply_unmask(0, 1, 0.99).unwrap();
        s.apply_unmask(1, 1, 0.96).unwrap();
        let first = BTreeMap::from([(0, 0.95), (1, 0.96), (2, 0.10)]);
        let cfg = SaberConfig {
            threshold_mode: ThresholdMode::InitMean,
            ..Default::default()
        };
        let tau = compute_threshold(&s, &cfg, &first);
        if (tau - 0.955).abs() > FORMULA_TOL {
            failures.push(format!("first-commit threshold {tau} != 0.955"));
        }
    }

    // Remask budget: count whole groups of mu by repeated subtraction.
    for mu in [1usize, 2, 4, 8] {
        for d in 0..=64usize {
            let mut groups = 0;
            let mut left = d;
            while left >= mu {
                left -= mu;
                groups += 1;
            }
            let expected = if groups == 0 { 1 } else { groups };
            let got = compute_remask_budget(d, mu);
            if got != expected {
                failures.push(format!(
                    "budget(|D|={d}, mu={mu}) = {got}, expected {expected}"
                ));
            }
        }
    }

    // Confidence drops, positive, zero and negative.
    let cases = [
        (0.9, 0.4, 0.5),
        (0.6, 0.2, 0.4),
        (0.5, 0.5, 0.0),
        (0.3, 0.6, -0.3),
        (1.0, 0.0, 1.0),
    ];
    let prev: BTreeMap<usize, f64> = cases.iter().enumerate().map(|(i, c)| (i, c.0)).collect();
    let now = PredictionSet::new(
        cases
            .iter()
            .map(|c| PositionPrediction {
                top_token: 1,
                top_prob: 0.5,
                cur_prob: Some(c.1),
                entropy: binary_entropy(0.5),
            })
            .collect(),
    );
    let drops = compute_confidence_drops(&prev, &now).unwrap();
    for (i, c) in cases.iter().enumerate() {
        if (drops[&i] - c.2).abs() > FORMULA_TOL {
            failures.push(format!(
                "drop {} - {} = {}, expected {}",
                c.0, c.1, drops[&i], c.2
            ));
        }
    }

    // Set update on randomized steps: U_t = (U_{t-1} ∪ D_t) \ R_t, and every
    // surviving ledger entry is either carried over or the new draft score.
    let mut updates = 0;
    for salt in 0..100u64 {
        let len = 1 + (salt as usize % 40);
        let backend = hashed_backend(salt, false);
        let mut s = SequenceState::new(vec![], len, vocab()).unwrap();
        let cfg = SaberConfig {
            mu: 1 + (salt as usize % 8),
            ..Default::default()
        };
        let mut sampler = SaberSampler::new(cfg);
        for _ in 0..6 {
            if s.is_complete() {
                break;
            }
            let before = s.ledger().clone();
            let out = sampler.step(&mut s, &backend).unwrap();
            let d: BTreeSet<usize> = out.drafted.iter().map(|x| x.index).collect();
            let r: BTreeSet<usize> = out.remasked.iter().copied().collect();
            let expected: BTreeSet<usize> = before
                .keys()
                .copied()
                .chain(d.iter().copied())
                .filter(|i| !r.contains(i))
                .collect();
            if s.unmasked() != &expected {
                failures.push(format!("set update mismatch at salt {salt}"));
            }
            for x in &out.drafted {
                if !r.contains(&x.index) && s.ledger()[&x.index] != x.confidence {
                    failures.push(format!("draft score not recorded at {}", x.index));
                }
            }
            for (j, c) in &before {
                if !r.contains(j) && s.ledger()[j] != *c {
                    failures.push(format!("carried score changed at {j}"));
                }
            }
            updates += 1;
        }
    }

    Verdict {
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("threshold, budget (65x4 grid), drops and {updates} set updates exact to {FORMULA_TOL:e}")
        } else {
            format!("{} mismatches, first: {}", failures.len(), failures[0])
        },
    }
}

// ------------------------------------------------------- greedy equivalence

fn greedy_equivalence(runs: &mut Vec<GenerationResult>) -> Verdict {
    let neither = Strategy::Saber(SaberVariant::Neither);
    let confidence: Strategy = "confidence".parse().unwrap();
    let mut identical = 0;
    for seed in 0..GREEDY_SEEDS {
        let a = oracle_run(&neither, GREEDY_LEN, TREND_DECEIVE, seed);
        let b = oracle_run(&confidence, GREEDY_LEN, TREND_DECEIVE, seed);
        if a.final_state.gen() == b.final_state.gen() && a.steps_used == b.steps_used {
            identical += 1;
        }
        runs.push(a);
        runs.push(b);
    }
    Verdict {
        pass: identical == GREEDY_SEEDS,
        detail: format!("{identical}/{GREEDY_SEEDS} seeds token-identical at L={GREEDY_LEN}"),
    }
}

// -------------------------------------------------------------- termination

/// State-determined pseudo-random predictions. With `collapse`, every
/// committed token is rescored at zero so every drop is positive.
fn hashed_backend(salt: u64, collapse: bool) -> ScriptedBackend {
    ScriptedBackend::from_fn(move |s| {
        Ok(PredictionSet::new(
            (0..s.len())
                .map(|i| {
                    let mut h = std::collections::hash_map::DefaultHasher::new();
                    (salt, i, s.gen()).hash(&mut h);
                    let x = h.finish();
                    let p = (x >> 11) as f64 / (1u64 << 53) as f64;
                    let cur = if collapse {
                        0.0
                    } else {
                        (x & 0xffff) as f64 / 65535.0
                    };
                    PositionPrediction {
                        top_token: 1 + (x % 1000) as u32,
                        top_prob: p,
                        cur_prob: (!s.is_masked(i)).then_some(cur),
                        entropy: binary_entropy(p),
                    }
                })
                .collect(),
        ))
    })
}

/// Masked confidence shrinks on every call, so only the single-token
/// fallback ever drafts, and every committed token collapses.
fn one_draft_backend() -> ScriptedBackend {
    let calls = AtomicUsize::new(0);
    ScriptedBackend::from_fn(move |s| {
        let p = 0.5 / (1.0 + calls.fetch_add(1, Ordering::SeqCst) as f64);
        Ok(PredictionSet::new(
            (0..s.len())
                .map(|i| PositionPrediction {
                    top_token: 7,
                    top_prob: p,
                    cur_prob: (!s.is_masked(i)).then_some(0.0),
                    entropy: binary_entropy(p),
                })
                .collect(),
        ))
    })
}

fn termination(runs: &mut Vec<GenerationResult>) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7E);
    let variants = Strategy::ablation_suite();
    let mut halted = 0;
    let mut worst = 0.0f64;
    for instance in 0..TERMINATION_INSTANCES {
        let len = rng.gen_range(1..=64);
        let cfg = SaberConfig {
            mu: rng.gen_range(1..=8),
            c_max: rng.gen_range(0.0..=1.0),
            step_cap_factor: TERMINATION_CAP_FACTOR,
            ..Default::default()
        };
        let backend = match instance % 3 {
            0 => hashed_backend(instance, false),
            1 => hashed_backend(instance, true),
            _ => one_draft_backend(),
        };
        let strategy = if instance % 5 == 0 {
            Strategy::Sar {
                block_length: rng.gen_range(1..=len),
                inner: Box::new(Strategy::Saber(SaberVariant::Full)),
            }
        } else {
            variants[rng.gen_range(0..variants.len())].clone()
        };
        let r = generate(
            SequenceState::new(vec![], len, vocab()).unwrap(),
            &backend,
            &cfg,
            &strategy,
            &RunContext::new(format!("term-{instance}"), instance),
        )
        .unwrap();
        let cap = (TERMINATION_CAP_FACTOR * len as f64).ceil() as u64;
        if r.steps_used <= cap {
            halted += 1;
        }
        worst = worst.max(r.steps_used as f64 / len as f64);
        runs.push(r);
    }
    Verdict {
        pass: halted == TERMINATION_INSTANCES,
        detail: format!(
            "{halted}/{TERMINATION_INSTANCES} instances halted within ceil(2L); worst steps/L = {worst:.3}"
        ),
    }
}

// ---------------------------------------------------------- confidence trend

fn confidence_trend(runs: &mut Vec<GenerationResult>) -> Verdict {
    let confidence: Strategy = "confidence".parse().unwrap();
    let mut rising = 0;
    let mut rhos = Vec::new();
    for seed in 0..TREND_SEEDS {
        let r = oracle_run(&confidence, TREND_LEN, TREND_DECEIVE, seed);
        let rho = trend(&metrics(&r.trace).unwrap().per_step_mean_confidence).unwrap_or(f64::NAN);
        if rho > TREND_MIN_RHO {
            rising += 1;
        }
        rhos.push(rho);
        runs.push(r);
    }
    let min = rhos.iter().cloned().fold(f64::INFINITY, f64::min);
    Verdict {
        pass: rising >= TREND_MIN_PASSING,
        detail: format!(
            "{rising}/{TREND_SEEDS} seeds with Spearman rho > {TREND_MIN_RHO} (need >= {TREND_MIN_PASSING}); min rho {min:.3}"
        ),
    }
}

// ----------------------------------------------------------------- ablation

fn ablation(runs: &mut Vec<GenerationResult>) -> Verdict {
    let full = Strategy::Saber(SaberVariant::Full);
    let no_bt = Strategy::Saber(SaberVariant::NoBacktrack);
    let baseline: Strategy = "confidence".parse().unwrap();
    let mut err_full = 0.0;
    let mut err_nobt = 0.0;
    let mut steps_full = 0.0;
    let mut baseline_exact = 0;
    for seed in 0..ABLATION_SEEDS {
        let a = oracle_run(&full, ABLATION_LEN, ABLATION_DECEIVE, seed);
        let b = oracle_run(&no_bt, ABLATION_LEN, ABLATION_DECEIVE, seed);
        let c = oracle_run(&baseline, ABLATION_LEN, ABLATION_DECEIVE, seed);
        err_full += metrics(&a.trace).unwrap().token_error_rate.unwrap();
        err_nobt += metrics(&b.trace).unwrap().token_error_rate.unwrap();
        steps_full += a.steps_used as f64;
        if c.steps_used == ABLATION_LEN as u64 {
            baseline_exact += 1;
        }
        runs.extend([a, b, c]);
    }
    let n = ABLATION_SEEDS as f64;
    let (err_full, err_nobt, steps_full) = (err_full / n, err_nobt / n, steps_full / n);
    let step_limit = ABLATION_MAX_STEP_FRACTION * ABLATION_LEN as f64;
    let pass = err_full <= ABLATION_MAX_ERROR_RATIO * err_nobt
        && steps_full <= step_limit
        && baseline_exact == ABLATION_SEEDS;
    Verdict {
        pass,
        detail: format!(
            "error {err_full:.4} vs {err_nobt:.4} without backtracking (ratio {:.3}, need <= {ABLATION_MAX_ERROR_RATIO}); \
             mean steps {steps_full:.2} (need <= {step_limit}); baseline used exactly L on {baseline_exact}/{ABLATION_SEEDS}",
            err_full / err_nobt
        ),
    }
}

// ------------------------------------------------------------------- replay

fn replay_fidelity(runs: &[GenerationResult]) -> Verdict {
    let mut faithful = 0;
    let mut first_bad = None;
    for r in runs {
        let parsed = Trace::read_jsonl(r.trace.to_jsonl().as_bytes()).unwrap();
        let ok = replay_trace(&parsed).is_ok_and(|s| s.matches(&r.final_state, REPLAY_TOL))
            && metrics(&parsed).unwrap() == metrics(&r.trace).unwrap();
        if ok {
            faithful += 1;
        } else if first_bad.is_none() {
            first_bad = Some(r.run_id.clone());
        }
    }
    Verdict {
        pass: faithful == runs.len(),
        detail: match first_bad {
            None => format!(
                "{faithful}/{} runs replay to identical state (tol {REPLAY_TOL:e}) and metrics",
                runs.len()
            ),
            Some(id) => format!("{faithful}/{} faithful, first failure {id}", runs.len()),
        },
    }
}

// -------------------------------------------------------------- determinism

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seeds: vec![0, 1, 2],
        output_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let read_all = || -> Vec<Vec<u8>> {
        let mut paths: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.to_string_lossy().ends_with(".trace.jsonl"))
            .collect();
        paths.sort();
        paths.iter().map(|p| std::fs::read(p).unwrap()).collect()
    };
    cmd_generate(&cfg, &mut std::io::sink()).unwrap();
    let reference = read_all();
    let mut identical = 0;
    for _ in 0..DETERMINISM_REPEATS {
        cmd_generate(&cfg, &mut std::io::sink()).unwrap();
        if read_all() == reference {
            identical += 1;
        }
    }
    Verdict {
        pass: identical == DETERMINISM_REPEATS && reference.len() == cfg.seeds.len(),
        detail: format!(
            "{identical}/{DETERMINISM_REPEATS} repeats byte-identical ({} traces, L={})",
            reference.len(),
            cfg.gen_length
        ),
    }
}

fn main() {
    let mut runs = Vec::new();
    let results = [
        check("formula exactness", Some(FORMULA_BUDGET), formula_exactness),
        check("greedy equivalence", Some(GREEDY_BUDGET), || {
            greedy_equivalence(&mut runs)
        }),
        check("termination", Some(TERMINATION_BUDGET), || {
            termination(&mut runs)
        }),
        check("confidence trend", Some(TREND_BUDGET), || {
            confidence_trend(&mut runs)
        }),
        check("backtracking ablation", Some(ABLATION_BUDGET), || {
            ablation(&mut runs)
        }),
        check("replay fidelity", Some(REPLAY_BUDGET), || {
            replay_fidelity(&runs)
        }),
        check("determinism", None, determinism),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
