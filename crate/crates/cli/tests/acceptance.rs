//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrecon::attack::{embedding_inversion, reconstruct_context_free, topk_candidates};
use textrecon::corpus::{estimate_prior, PriorMode, PriorModel, SentenceRecord, TokenId, Vocabulary};
use textrecon::eval::{
    binomial_sigma, conditional_entropies, context_free_bound, enumerate_best_strategy, expected_context_free_asr,
    expected_contextual_asr, reconstruct_dataset, run_sweep, score_dataset, spearman, split_corpus, take_shadow,
    train_scorer, AsrReport, Attack, AttackMethod, JointDistribution, ScorerOptions, SweepSpec, SEARCH_LIMIT,
};
use textrecon::mechanism::{build_channel, dp_ratio_check, sanitize_corpus, Channel, MechanismConfig};
use textrecon::synth::{generate, SynthConfig, SynthCorpus};

type Outcome = Result<String, String>;
type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_size(rng: &mut ChaCha8Rng, max: usize) -> usize {
    rng.random_range(1..=max)
}

fn c1_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (nx, ny) = (random_size(&mut rng, 6), random_size(&mut rng, 6));
        let joint = JointDistribution::random(&mut rng, nx, ny, 1);
        let gap = (expected_context_free_asr(&joint).unwrap() - enumerate_best_strategy(&joint, false).unwrap()).abs();
        worst = worst.max(gap);
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst <= 1e-12 && secs < 60.0, format!("100 joints, max gap {worst:.1e} (<= 1e-12), {secs:.2} s (< 60 s)"))
}

fn c2_contextual_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut worst, mut dominance_failures, mut joints) = (0.0f64, 0, 0);
    while joints < 50 {
        let (nx, ny, nc) = (random_size(&mut rng, 4), random_size(&mut rng, 4), random_size(&mut rng, 4));
        if (nx as f64).powi((ny * nc) as i32) > SEARCH_LIMIT as f64 {
            continue;
        }
        joints += 1;
        let joint = JointDistribution::random(&mut rng, nx, ny, nc);
        let ctx = expected_contextual_asr(&joint, nx).unwrap();
        worst = worst.max((ctx - enumerate_best_strategy(&joint, true).unwrap()).abs());
        if ctx + 1e-12 < expected_context_free_asr(&joint).unwrap() {
            dominance_failures += 1;
        }
    }
    check(
        worst <= 1e-12 && dominance_failures == 0,
        format!("50 joints, max gap {worst:.1e} (<= 1e-12), {dominance_failures} below context-free"),
    )
}

fn c3_entropy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut violations, mut worst_equality) = (0, 0.0f64);
    for _ in 0..1000 {
        let (nx, ny, nc) = (random_size(&mut rng, 6), random_size(&mut rng, 6), random_size(&mut rng, 4));
        let (h_y, h_yc) = conditional_entropies(&JointDistribution::random(&mut rng, nx, ny, nc));
        if h_yc > h_y + 1e-12 {
            violations += 1;
        }
        let (h_y, h_yc) = conditional_entropies(&JointDistribution::random_independent(&mut rng, nx, ny, nc));
        worst_equality = worst_equality.max((h_y - h_yc).abs());
    }
    check(
        violations == 0 && worst_equality <= 1e-12,
        format!("1000 joints, {violations} violations; independence gap {worst_equality:.1e}"),
    )
}

/// `n` tokens drawn from `px` in sentences of 100, sanitized with `channel`.
fn sampled(px: &[f64], channel: &Channel, n: usize, seed: u64) -> (Vocabulary, Vec<SentenceRecord>) {
    let vocab = Vocabulary::new((0..px.len()).map(|i| format!("t{i}"))).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = WeightedIndex::new(px).unwrap();
    let tokens: Vec<String> = (0..n).map(|_| vocab.tokens()[dist.sample(&mut rng)].clone()).collect();
    let records: Vec<SentenceRecord> =
        tokens.chunks(100).enumerate().map(|(i, c)| SentenceRecord::new(i as u64, c.to_vec())).collect();
    let data = sanitize_corpus(&records, &vocab, channel, seed).unwrap();
    (vocab, data)
}

fn c4_bound_sanity() -> Outcome {
    let px = [0.5, 0.3, 0.2];
    let symmetric =
        Channel::from_matrix(&[vec![0.6, 0.2, 0.2], vec![0.2, 0.6, 0.2], vec![0.2, 0.2, 0.6]], None).unwrap();
    let (vocab, data) = sampled(&px, &symmetric, 10_000, 404);
    let prior = estimate_prior(&data, &vocab, PriorMode::Exact).unwrap();
    let sym = context_free_bound(&data, &vocab, &symmetric, &prior).unwrap();

    let identity: Vec<Vec<f64>> = (0..5).map(|i| (0..5).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let identity = Channel::from_matrix(&identity, None).unwrap();
    let (vocab, data) = sampled(&[0.2; 5], &identity, 10_000, 405);
    let prior = estimate_prior(&data, &vocab, PriorMode::Exact).unwrap();
    let ident = context_free_bound(&data, &vocab, &identity, &prior).unwrap();

    let n = 8;
    let uniform = Channel::from_matrix(&vec![vec![1.0 / n as f64; n]; n], None).unwrap();
    let (vocab, data) = sampled(&vec![1.0 / n as f64; n], &uniform, 10_000, 406);
    let unif = context_free_bound(&data, &vocab, &uniform, &PriorModel::uniform(n)).unwrap();
    let sigma = binomial_sigma(1.0 / n as f64, unif.total);

    let ok =
        (sym.asr() - 0.6).abs() <= 0.015 && ident.asr() == 1.0 && (unif.asr() - 1.0 / n as f64).abs() <= 3.0 * sigma;
    check(
        ok,
        format!(
            "symmetric {:.4} (0.60 +/- 0.015), identity {}, uniform n={n} {:.4} (0.125 +/- {:.4})",
            sym.asr(),
            ident.asr(),
            unif.asr(),
            3.0 * sigma
        ),
    )
}

fn desk_corpus(seed: u64) -> SynthCorpus {
    generate(&SynthConfig { seed, ..SynthConfig::default() }).unwrap()
}

fn run(spec: &SweepSpec, corpus: &SynthCorpus) -> Vec<AsrReport> {
    let report = run_sweep(spec, &corpus.records, &corpus.vocab, &corpus.embeddings).unwrap();
    for r in &report.results {
        assert!(r.error.is_none(), "cell failed: {r:?}");
    }
    report.results
}

/// Fraction of attacked tokens whose original never occurs in the shadow sample.
fn unseen_fraction(corpus: &SynthCorpus, seed: u64, ratio: f64) -> f64 {
    let (private, pool) = split_corpus(&corpus.records, seed).unwrap();
    let shadow = take_shadow(&pool, ratio, private.len());
    let seen: std::collections::HashSet<&String> = shadow.iter().flat_map(|r| &r.tokens).collect();
    let (mut unseen, mut total) = (0usize, 0usize);
    for r in &private {
        for i in r.sensitive_positions() {
            total += 1;
            unseen += usize::from(!seen.contains(&r.tokens[i]));
        }
    }
    unseen as f64 / total as f64
}

fn c5_smoothing() -> Outcome {
    let corpus = desk_corpus(0);
    let spec = SweepSpec {
        shadow_ratios: vec![0.05],
        smoothing_scales: vec![0.0, 1.0, 5.0, 10.0],
        ..SweepSpec::new(vec![12.0], vec![AttackMethod::Bayes])
    };
    let unseen = unseen_fraction(&corpus, spec.seed, 0.05);
    let asr: Vec<f64> = run(&spec, &corpus).iter().map(|r| r.asr).collect();
    let ok = unseen >= 0.3 && asr[1] >= asr[0] && (asr[2] - asr[1]).abs() <= 0.01 && (asr[3] - asr[1]).abs() <= 0.01;
    check(
        ok,
        format!(
            "unseen {unseen:.3} (>= 0.3); ASR none {:.4}, 1/a {:.4}, 5/a {:.4}, 10/a {:.4}",
            asr[0], asr[1], asr[2], asr[3]
        ),
    )
}

fn c6_epsilon_trend() -> Outcome {
    let eps = vec![0.5, 1.0, 2.0, 4.0];
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in 0..3 {
        let corpus = desk_corpus(seed);
        let spec = SweepSpec { seed, ..SweepSpec::new(eps.clone(), vec![AttackMethod::Optimal]) };
        let asr: Vec<f64> = run(&spec, &corpus).iter().map(|r| r.asr).collect();
        let rho = spearman(&eps, &asr);
        ok &= rho > 0.0;
        lines.push(format!(
            "seed {seed}: rho {rho:.2} [{}]",
            asr.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ")
        ));
    }
    check(ok, lines.join("; "))
}

fn c7_large_epsilon_agreement() -> Outcome {
    let corpus = generate(&SynthConfig {
        vocab_size: 100,
        sentences: 1000,
        sentence_len: 10,
        clusters: 0,
        zipf_exponent: 0.0,
        seed: 7,
        ..SynthConfig::default()
    })
    .unwrap();
    let channel = build_channel(&corpus.embeddings, &MechanismConfig::full_vocab(50.0)).unwrap();
    let data = sanitize_corpus(&corpus.records, &corpus.vocab, &channel, 7).unwrap();
    let prior = PriorModel::uniform(corpus.vocab.len());
    let all: Vec<TokenId> = corpus.vocab.ids().collect();
    let (mut agree, mut total) = (0usize, 0usize);
    for r in &data {
        for y in r.sanitized.as_ref().unwrap() {
            let y = corpus.vocab.require(y).unwrap();
            total += 1;
            agree += usize::from(
                reconstruct_context_free(y, &channel, &prior).unwrap()
                    == embedding_inversion(y, &corpus.embeddings, &all).unwrap(),
            );
        }
    }
    let rate = agree as f64 / total as f64;
    check(total == 10_000 && rate >= 0.9, format!("|X| = 100, eps = 50: {agree}/{total} agree ({rate:.4} >= 0.90)"))
}

fn c8_k_behavior() -> Outcome {
    let corpus = desk_corpus(0);
    let spec = SweepSpec { ks: vec![1, 10, 20], ..SweepSpec::new(vec![12.0], vec![AttackMethod::ContextualBayes]) };
    let asr: Vec<f64> = run(&spec, &corpus).iter().map(|r| r.asr).collect();
    let diff = (asr[2] - asr[1]).abs();

    // Nesting: for every output and every K, the top-K list is a prefix of the full ranking.
    let (private, pool) = split_corpus(&corpus.records, spec.seed).unwrap();
    let shadow = take_shadow(&pool, 1.0, private.len());
    let prior = estimate_prior(&shadow, &corpus.vocab, PriorMode::ShadowSmoothed).unwrap();
    let channel = build_channel(&corpus.embeddings, &MechanismConfig::full_vocab(12.0)).unwrap();
    let n = corpus.vocab.len();
    let mut nesting_failures = 0;
    for y in corpus.vocab.ids() {
        let full = topk_candidates(y, n, &channel, &prior);
        for k in 1..=n {
            if topk_candidates(y, k, &channel, &prior) != full[..k.min(full.len())] {
                nesting_failures += 1;
            }
        }
    }
    check(
        diff <= 0.02 && nesting_failures == 0,
        format!(
            "ASR K=1 {:.4}, K=10 {:.4}, K=20 {:.4}; |K20 - K10| = {diff:.4} (<= 0.02); {nesting_failures} nesting failures over {} (y, K)",
            asr[0],
            asr[1],
            asr[2],
            n * n
        ),
    )
}

fn c9_dp_audit() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..20 {
        let corpus = generate(&SynthConfig {
            vocab_size: rng.random_range(2..=50),
            sentences: 1,
            dim: rng.random_range(1..=8),
            clusters: 0,
            seed: 900 + i,
            ..SynthConfig::default()
        })
        .unwrap();
        let eps = rng.random_range(0.05..20.0);
        let channel = build_channel(&corpus.embeddings, &MechanismConfig::full_vocab(eps)).unwrap();
        worst = worst.max(dp_ratio_check(&channel, &corpus.embeddings).unwrap());
    }
    check(worst <= 1e-9, format!("20 channels, worst margin {worst:.2e} (<= 1e-9)"))
}

fn c10_performance_and_determinism(bin: &Path) -> Outcome {
    let corpus = desk_corpus(0);
    let channel = build_channel(&corpus.embeddings, &MechanismConfig::full_vocab(4.0)).unwrap();
    let (private, pool) = split_corpus(&corpus.records, 0).unwrap();
    let shadow = take_shadow(&pool, 1.0, private.len());
    let mut target = Vec::new();
    let mut tokens = 0;
    for r in &private {
        if tokens + r.len() > 1000 {
            let keep = 1000 - tokens;
            target.push(
                SentenceRecord::with_mask(r.id, r.tokens.clone(), (0..r.len()).map(|i| i < keep).collect()).unwrap(),
            );
            break;
        }
        tokens += r.len();
        target.push(r.clone());
    }
    let data = sanitize_corpus(&target, &corpus.vocab, &channel, 0).unwrap();
    let prior = estimate_prior(&shadow, &corpus.vocab, PriorMode::ShadowSmoothed).unwrap();
    let one_core = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();

    let (free_secs, free_total) = one_core.install(|| {
        let start = Instant::now();
        let rec = reconstruct_dataset(&data, &corpus.vocab, &channel, Attack::ContextFree { prior: &prior }).unwrap();
        (start.elapsed().as_secs_f64(), score_dataset(&data, &rec).unwrap().total)
    });
    let ctx_secs = one_core.install(|| {
        let start = Instant::now();
        let scorer = train_scorer(&ScorerOptions::default(), &shadow, &corpus.vocab, &channel, 0).unwrap();
        let attack = Attack::Contextual { prior: &prior, scorer: scorer.as_ref(), k: 10 };
        reconstruct_dataset(&data, &corpus.vocab, &channel, attack).unwrap();
        start.elapsed().as_secs_f64()
    });

    let first = cli_outputs(bin);
    let second = cli_outputs(bin);
    let identical = first == second;
    check(
        free_total == 1000 && free_secs < 10.0 && ctx_secs < 300.0 && identical,
        format!(
            "1000 tokens on one core: context-free {free_secs:.3} s (< 10 s), contextual n-gram K=10 incl. training {ctx_secs:.2} s (< 300 s); {} CLI outputs {}",
            first.len(),
            if identical { "byte-identical across reruns" } else { "DIFFER across reruns" }
        ),
    )
}

/// Runs every subcommand in a fresh directory and returns the bytes of each output.
fn cli_outputs(bin: &Path) -> Vec<(String, Vec<u8>)> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let commands: &[&[&str]] = &[
        &[
            "synth",
            "--corpus",
            "corpus.jsonl",
            "--embeddings",
            "emb.txt",
            "--vocab-size",
            "80",
            "--sentences",
            "60",
            "--clusters",
            "8",
        ],
        &[
            "synth",
            "--corpus",
            "shadow.jsonl",
            "--embeddings",
            "emb2.txt",
            "--vocab-size",
            "80",
            "--sentences",
            "30",
            "--clusters",
            "8",
            "--seed",
            "1",
        ],
        &[
            "sanitize",
            "--input",
            "corpus.jsonl",
            "--embeddings",
            "emb.txt",
            "--epsilon",
            "5",
            "--output",
            "san.jsonl",
            "--seed",
            "3",
        ],
        &[
            "attack",
            "--input",
            "san.jsonl",
            "--embeddings",
            "emb.txt",
            "--epsilon",
            "5",
            "--method",
            "bayes",
            "--shadow",
            "shadow.jsonl",
            "--output",
            "bayes.jsonl",
            "--report",
            "bayes.json",
        ],
        &[
            "attack",
            "--input",
            "san.jsonl",
            "--embeddings",
            "emb.txt",
            "--epsilon",
            "5",
            "--method",
            "contextual-bayes",
            "--shadow",
            "shadow.jsonl",
            "--train-replications",
            "5",
            "--output",
            "ctx.jsonl",
            "--report",
            "ctx.json",
        ],
        &[
            "attack",
            "--input",
            "san.jsonl",
            "--embeddings",
            "emb.txt",
            "--epsilon",
            "5",
            "--method",
            "embedding-inversion",
            "--report",
            "inv.json",
        ],
        &[
            "bound",
            "--input",
            "san.jsonl",
            "--embeddings",
            "emb.txt",
            "--epsilon",
            "5",
            "--type",
            "context-free",
            "--report",
            "cf.json",
        ],
        &[
            "bound",
            "--input",
            "san.jsonl",
            "--embeddings",
            "emb.txt",
            "--epsilon",
            "5",
            "--type",
            "contextual-k",
            "--shadow",
            "shadow.jsonl",
            "--train-replications",
            "5",
            "--report",
            "ck.json",
        ],
        &[
            "sweep",
            "--spec",
            "spec.json",
            "--corpus",
            "corpus.jsonl",
            "--embeddings",
            "emb.txt",
            "--output",
            "sweep.json",
            "--csv",
            "sweep.csv",
        ],
        &[
            "samples",
            "--input",
            "shadow.jsonl",
            "--embeddings",
            "emb.txt",
            "--epsilon",
            "5",
            "--replications",
            "3",
            "--output",
            "samples.jsonl",
        ],
        &["oracle", "--vocab-size", "3", "--context-size", "2", "--trials", "20", "--output", "oracle.json"],
    ];
    fs::write(
        d.join("spec.json"),
        r#"{"epsilons": [1.0, 5.0], "attacks": ["optimal", "contextual-bound", "bayes", "contextual-bayes", "embedding-inversion"], "ks": [1, 10], "replications": 3, "train_replications": 3}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for (i, args) in commands.iter().enumerate() {
        let out = Command::new(bin).args(*args).current_dir(d).env_remove("TEXTRECON_DETECTOR_URL").output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        outputs.push((format!("stdout {i}"), out.stdout));
    }
    let mut files: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    for f in files {
        outputs.push((f.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&f).unwrap()));
    }
    outputs
}

fn main() -> ExitCode {
    let bin = Path::new(env!("CARGO_BIN_EXE_textrecon"));
    let criteria: Vec<(&str, Criterion)> = vec![
        ("optimality", Box::new(c1_optimality)),
        ("contextual optimality", Box::new(c2_contextual_optimality)),
        ("entropy inequality", Box::new(c3_entropy)),
        ("bound sanity", Box::new(c4_bound_sanity)),
        ("smoothing ablation", Box::new(c5_smoothing)),
        ("epsilon monotonicity", Box::new(c6_epsilon_trend)),
        ("large-epsilon agreement", Box::new(c7_large_epsilon_agreement)),
        ("K behavior", Box::new(c8_k_behavior)),
        ("DP audit", Box::new(c9_dp_audit)),
        ("performance and determinism", Box::new(move || c10_performance_and_determinism(bin))),
    ];
    let mut failed = 0;
    for (i, (name, criterion)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(criterion))
            .unwrap_or_else(|e| Err(format!("panicked: {}", e.downcast_ref::<String>().cloned().unwrap_or_default())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
