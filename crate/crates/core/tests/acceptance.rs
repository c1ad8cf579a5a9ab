//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails. Tolerances are pinned below.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use forensics_core::geometry::{
    bertscore_from_embeddings, bertscore_greedy, d_inter_and_ratio, d_intra, overall_average, report_ratio, self_bleu,
    LabelGroups,
};
use forensics_core::interpret::hit_rate_and_rank;
use forensics_core::pipeline::{Run, RunConfig, LEDGER_FILE};
use forensics_core::radius::{bisect, estimate_alpha, match_rate, RadiusConfig, RadiusEstimate};
use forensics_core::rng::RngStream;
use forensics_core::scoring::{select_top_k, ScoreBreakdown, ScoredCandidate};
use forensics_core::simworld::{normal_cdf, oracle_radius, SimWorld};
use forensics_core::wire::{EmbeddingMatrix, LabelId};
use forensics_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const BISECTION_CASES: usize = 50;
const BISECTION_EPS: f64 = 1e-3;
const BISECTION_TIME: Duration = Duration::from_secs(1);

const RADIUS_SEEDS: u64 = 10;
const RADIUS_M: usize = 1000;
const RADIUS_ETA: f64 = 0.7;
const RADIUS_REL_TOL: f64 = 0.15;
const RADIUS_TIME: Duration = Duration::from_secs(60);

const CALIBRATION_M: usize = 2000;
const CALIBRATION_TOL: f64 = 0.03;
const CALIBRATION_MIN_HITS: usize = 9;

const SELECTION_FIXTURES: usize = 200;
const GEOMETRY_FIXTURES: usize = 100;
const GEOMETRY_TOL: f64 = 1e-9;

const E2E_MIN_CONSISTENCY: f64 = 0.90;
const E2E_SAMPLES: usize = 100;
const E2E_TIME: Duration = Duration::from_secs(300);
const TASK_AVERAGES: [f64; 5] = [91.1, 86.6, 96.0, 92.0, 95.5];

const DIVERSITY_TOL: f64 = 1e-12;
const DISJOINT_CEILING: f64 = 1e-8;

const BUDGET_N: u64 = 500;

type Outcome = std::result::Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn halfspace() -> SimWorld {
    SimWorld::from_file(fixtures().join("halfspace.json")).unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bisection_contract() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let cfg = RadiusConfig {
        eps: BISECTION_EPS,
        ..Default::default()
    };
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..BISECTION_CASES {
        let t: f64 = rng.random_range(1e-6..10.0);
        let (a, _) = bisect(&cfg, |_, alpha| Ok(if alpha <= t { 1.0 } else { 0.0 })).map_err(|e| e.to_string())?;
        ensure(a <= t && t - a <= BISECTION_EPS, || format!("t={t} returned {a}"))?;
        worst = worst.max(t - a);
    }
    let took = start.elapsed();
    ensure(took < BISECTION_TIME, || format!("took {took:?}"))?;
    Ok(format!("{BISECTION_CASES} thresholds, max gap {worst:.2e}, {took:?}"))
}

fn analytic_radius() -> Outcome {
    let world = halfspace();
    let point = [1.0, 0.0];
    let expected = oracle_radius(world.spec(), &point, RADIUS_ETA).map_err(|e| e.to_string())?;
    ensure((expected - 1.9069).abs() < 1e-4, || format!("oracle radius {expected}"))?;
    let text = world.format_point(&point);
    let client = world.into_client(None, 8);
    let cfg = RadiusConfig {
        eta: RADIUS_ETA,
        m: RADIUS_M,
        ..Default::default()
    };
    let start = Instant::now();
    let mut alphas: Vec<f64> = (0..RADIUS_SEEDS)
        .map(|seed| {
            estimate_alpha(&client, &text, &cfg, &RngStream::from_seed(seed))
                .map(|r: RadiusEstimate| r.alpha_star)
                .map_err(|e| e.to_string())
        })
        .collect::<std::result::Result<_, _>>()?;
    let took = start.elapsed();
    alphas.sort_by(f64::total_cmp);
    let median = 0.5 * (alphas[4] + alphas[5]);
    let rel = (median - expected).abs() / expected;
    ensure(rel <= RADIUS_REL_TOL, || format!("median {median:.4} vs {expected:.4} ({rel:.3})"))?;
    ensure(took < RADIUS_TIME, || format!("took {took:?}"))?;
    Ok(format!("median {median:.4} vs {expected:.4} (rel err {rel:.3}), {took:?}"))
}

fn match_rate_calibration() -> Outcome {
    let world = halfspace();
    let text = world.format_point(&[1.0, 0.0]);
    let client = world.into_client(None, 8);
    let target = normal_cdf(1.0);
    let mut hits = 0;
    let mut rates = Vec::new();
    for seed in 0..10 {
        let r = match_rate(&client, &text, 1.0, CALIBRATION_M, &RngStream::from_seed(100 + seed)).map_err(|e| e.to_string())?;
        hits += usize::from((r - target).abs() <= CALIBRATION_TOL);
        rates.push(format!("{r:.4}"));
    }
    ensure(hits >= CALIBRATION_MIN_HITS, || format!("{hits}/10 within tolerance: {rates:?}"))?;
    Ok(format!("{hits}/10 within ±{CALIBRATION_TOL} of {target:.4}"))
}

fn dummy_radius(alpha: f64) -> RadiusEstimate {
    RadiusEstimate {
        alpha_star: alpha,
        eta: 0.7,
        m: 1,
        alpha_min: 0.0,
        alpha_max: 10.0,
        eps: 1e-3,
        trace: vec![],
        reference_label: LabelId::new("y").unwrap(),
        source_label: LabelId::new("y").unwrap(),
    }
}

fn best_subset_total(values: &[f64], k: usize) -> f64 {
    let n = values.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let mut chosen: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| values[i]).collect();
        chosen.sort_by(|a, b| b.total_cmp(a));
        best = best.max(chosen.iter().sum());
    }
    best
}

fn selection_optimality() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for case in 0..SELECTION_FIXTURES {
        let n = rng.random_range(1..=12);
        let k = rng.random_range(1..=5usize);
        let candidates: Vec<ScoredCandidate> = (0..n)
            .map(|i| {
                // Coarse values force ties now and then.
                let alpha = f64::from(rng.random_range(0..8u8)) * 0.25;
                let consistency = rng.random_range(-1.0..1.0);
                let separability = rng.random_range(0.0..2.0);
                ScoredCandidate {
                    text: format!("s{i:02}"),
                    vector: vec![],
                    radius: dummy_radius(alpha),
                    breakdown: ScoreBreakdown {
                        alpha_term: alpha,
                        consistency,
                        separability,
                        lambda: 1.0,
                        gamma: 1.0,
                        total: alpha + consistency + separability,
                    },
                }
            })
            .collect();
        let totals: Vec<f64> = candidates.iter().map(|c| c.breakdown.total).collect();
        let set = select_top_k(LabelId::new("y").unwrap(), candidates, k).map_err(|e| e.to_string())?;
        let expected = best_subset_total(&totals, k.min(n));
        ensure(set.total() == expected, || format!("case {case}: {} vs {expected}", set.total()))?;
        ensure(set.members.len() == k.min(n), || format!("case {case}: size"))?;
    }
    Ok(format!("{SELECTION_FIXTURES} fixtures match exhaustive search exactly"))
}

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn oracle_mean(vs: &[Vec<f64>]) -> Vec<f64> {
    (0..vs[0].len())
        .map(|j| vs.iter().map(|v| v[j]).sum::<f64>() / vs.len() as f64)
        .collect()
}

fn geometry_exactness() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for case in 0..GEOMETRY_FIXTURES {
        let labels = rng.random_range(2..=5);
        let dim = rng.random_range(2..=8);
        let mut groups = LabelGroups::new();
        for l in 0..labels {
            let size = rng.random_range(1..=6);
            let members = (0..size)
                .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            groups.insert(format!("label{l}"), members);
        }
        let cents: Vec<Vec<f64>> = groups.values().map(|m| oracle_mean(m)).collect();
        let intra = groups
            .values()
            .zip(&cents)
            .map(|(m, c)| m.iter().map(|z| 1.0 - oracle_cos(z, c)).sum::<f64>() / m.len() as f64)
            .sum::<f64>()
            / groups.len() as f64;
        let mut pairs = Vec::new();
        for i in 0..cents.len() {
            for j in i + 1..cents.len() {
                pairs.push(1.0 - oracle_cos(&cents[i], &cents[j]));
            }
        }
        let inter = pairs.iter().sum::<f64>() / pairs.len() as f64;
        let got_intra = d_intra(&groups).map_err(|e| e.to_string())?;
        let (got_inter, got_r) = d_inter_and_ratio(&groups).map_err(|e| e.to_string())?;
        let got_r = got_r.ok_or_else(|| format!("case {case}: ratio undefined"))?;
        for (got, want) in [(got_intra, intra), (got_inter, inter), (got_r, inter / intra)] {
            let err = (got - want).abs();
            worst = worst.max(err);
            ensure(err <= GEOMETRY_TOL, || format!("case {case}: {got} vs {want}"))?;
        }
    }
    let spam = report_ratio(0.9977 / 0.5210);
    ensure(spam == "1.92", || format!("spam row ratio {spam}"))?;
    Ok(format!("{GEOMETRY_FIXTURES} fixtures, max error {worst:.1e}; spam row r = {spam}"))
}

fn three_class_config(cache: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_file(fixtures().join("three_class.toml")).unwrap();
    cfg.cache_dir = cache.to_path_buf();
    cfg
}

fn end_to_end(cache: &Path) -> Outcome {
    let start = Instant::now();
    let run = Run::open(three_class_config(cache), None).map_err(|e| e.to_string())?;
    let report = run.run_all().map_err(|e| e.to_string())?;
    let took = start.elapsed();
    ensure(report.labels.len() == 3, || format!("labels {:?}", report.labels.keys()))?;
    let mut parts = Vec::new();
    for (label, r) in &report.labels {
        ensure(r.samples == E2E_SAMPLES, || format!("{label}: {} samples", r.samples))?;
        ensure(r.consistency >= E2E_MIN_CONSISTENCY, || format!("{label}: consistency {}", r.consistency))?;
        parts.push(format!("{label}={:.2}", r.consistency));
    }
    let avg = overall_average(&TASK_AVERAGES).unwrap_or(f64::NAN);
    ensure(format!("{avg:.2}") == "92.24", || format!("overall average {avg}"))?;
    ensure(took < E2E_TIME, || format!("took {took:?}"))?;
    Ok(format!("{}; overall average {avg:.2}; {took:?}", parts.join(" ")))
}

/// Independent BLEU: linear scans over n-gram lists.
fn oracle_bleu(hyp: &[&str], refs: &[Vec<&str>]) -> f64 {
    let grams = |t: &[&str], n: usize| -> Vec<Vec<String>> {
        if t.len() < n {
            return vec![];
        }
        (0..=t.len() - n).map(|i| t[i..i + n].iter().map(|s| s.to_string()).collect()).collect()
    };
    let orders = hyp.len().min(4);
    let mut log_p = 0.0;
    for n in 1..=orders {
        let hg = grams(hyp, n);
        let mut distinct: Vec<&Vec<String>> = vec![];
        for g in &hg {
            if !distinct.contains(&g) {
                distinct.push(g);
            }
        }
        let mut clipped = 0;
        for g in distinct {
            let own = hg.iter().filter(|x| *x == g).count();
            let best_ref = refs
                .iter()
                .map(|r| grams(r, n).iter().filter(|x| *x == g).count())
                .max()
                .unwrap_or(0);
            clipped += own.min(best_ref);
        }
        let total = hg.len() as f64;
        let p = if clipped == 0 { 1e-9 / total } else { clipped as f64 / total };
        log_p += p.ln() / orders as f64;
    }
    let c = hyp.len();
    let mut r = refs[0].len();
    for rf in refs {
        let d = rf.len().abs_diff(c);
        if d < r.abs_diff(c) || (d == r.abs_diff(c) && rf.len() < r) {
            r = rf.len();
        }
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_p.exp()
}

fn oracle_self_bleu(set: &[&str]) -> f64 {
    let toks: Vec<Vec<&str>> = set.iter().map(|s| s.split_whitespace().collect()).collect();
    (0..toks.len())
        .map(|i| {
            let refs: Vec<Vec<&str>> = (0..toks.len()).filter(|j| *j != i).map(|j| toks[j].clone()).collect();
            oracle_bleu(&toks[i], &refs)
        })
        .sum::<f64>()
        / toks.len() as f64
}

fn diversity_metrics() -> Outcome {
    let own = |v: &[&str]| self_bleu(&v.iter().map(|s| s.to_string()).collect::<Vec<_>>()).map_err(|e| e.to_string());
    let dup = own(&["the rain fell on the quiet town"; 3])?;
    ensure((dup - 1.0).abs() <= DIVERSITY_TOL, || format!("duplicated set {dup}"))?;
    let disjoint = own(&["a b c d e", "f g h i j", "k l m n o"])?;
    ensure(disjoint <= DISJOINT_CEILING, || format!("disjoint set {disjoint}"))?;
    let fixtures: [[&str; 3]; 4] = [
        ["the cat sat on the mat", "the cat lay on the rug", "a dog sat on the mat"],
        ["sunny skies all day long", "sunny days are long", "rain all day"],
        ["p 1.0000 2.0000", "p 1.0000 2.5000", "p 3.0000 2.0000"],
        ["one two three four five six", "two three four five", "six five four three two one"],
    ];
    for f in &fixtures {
        let got = own(f)?;
        let want = oracle_self_bleu(f);
        ensure((got - want).abs() <= DIVERSITY_TOL, || format!("{f:?}: {got} vs {want}"))?;
    }
    let client = halfspace().into_client(None, 2);
    let same = bertscore_greedy(&client, "sampler", "p 1.5000 2.0000", "p 1.5000 2.0000").map_err(|e| e.to_string())?;
    ensure((same.f1 - 1.0).abs() <= DIVERSITY_TOL, || format!("identical BERTScore {}", same.f1))?;
    // Token matrices for three sentences; brute-force greedy F1 per pair.
    let toks = [
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
        vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 2.0], vec![0.5, 0.0, 0.5]],
        vec![vec![0.2, 0.9, 0.1]],
    ];
    for a in &toks {
        for b in &toks {
            let p = a.iter().map(|x| b.iter().map(|y| oracle_cos(x, y)).fold(f64::MIN, f64::max)).sum::<f64>() / a.len() as f64;
            let r = b.iter().map(|y| a.iter().map(|x| oracle_cos(y, x)).fold(f64::MIN, f64::max)).sum::<f64>() / b.len() as f64;
            let want = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            let got = bertscore_from_embeddings(
                &EmbeddingMatrix::from_rows(a.clone()).unwrap(),
                &EmbeddingMatrix::from_rows(b.clone()).unwrap(),
            )
            .map_err(|e| e.to_string())?
            .f1;
            ensure((got - want).abs() <= DIVERSITY_TOL, || format!("BERTScore {got} vs {want}"))?;
        }
    }
    Ok(format!("duplicated {dup}, disjoint {disjoint:.1e}, identical BERTScore {}", same.f1))
}

fn entailment_hit_rate() -> Outcome {
    let client = halfspace().into_client(None, 2);
    let prototypes: Vec<String> = [
        "p 2.0000 0.0000",
        "p 1.0000 1.0000",
        "p -1.0000 0.0000",
        "p -2.0000 1.0000",
        "p -0.5000 -3.0000",
    ]
    .map(String::from)
    .to_vec();
    let candidates = vec!["sunshine".to_string()];
    let mut rates = Vec::new();
    for tau in [0.0, 0.3, 0.6, 0.9] {
        let ranked = hit_rate_and_rank(&client, &candidates, &prototypes, tau).map_err(|e| e.to_string())?;
        rates.push(ranked[0].hit_rate);
    }
    ensure(rates[2] == 0.4, || format!("H at tau 0.6 = {}", rates[2]))?;
    ensure(rates.windows(2).all(|w| w[1] <= w[0]), || format!("not monotone: {rates:?}"))?;
    Ok(format!("H = 0.4 at tau 0.6; across tau {rates:?}"))
}

fn determinism_and_budget(cache: &Path) -> Outcome {
    let before = std::fs::read(cache.join("report.json")).map_err(|e| e.to_string())?;
    let run = Run::open(three_class_config(cache), None).map_err(|e| e.to_string())?;
    let total_before = run.client.ledger_snapshot().dispatched_total;
    run.run_all().map_err(|e| e.to_string())?;
    let total_after = run.client.ledger_snapshot().dispatched_total;
    ensure(total_after == total_before, || format!("{} new dispatches", total_after - total_before))?;
    let after = std::fs::read(cache.join("report.json")).map_err(|e| e.to_string())?;
    ensure(before == after, || "report bytes differ on replay".into())?;

    let fresh = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = three_class_config(fresh.path());
    cfg.budget = Some(BUDGET_N);
    let run = Run::open(cfg, None).map_err(|e| e.to_string())?;
    match run.run_all() {
        Err(Error::BudgetExhausted { budget, dispatched }) => {
            ensure(budget == BUDGET_N && dispatched == BUDGET_N, || format!("{budget}/{dispatched}"))?
        }
        other => return Err(format!("expected budget exhaustion, got {:?}", other.map(|_| ()))),
    }
    let spent = run.client.ledger_snapshot().dispatched_total;
    let lines = std::fs::read_to_string(fresh.path().join(LEDGER_FILE))
        .map_err(|e| e.to_string())?
        .lines()
        .count() as u64;
    ensure(spent == BUDGET_N && lines == BUDGET_N, || format!("spent {spent}, ledger lines {lines}"))?;
    Ok(format!(
        "replay: 0 new dispatches over {total_before}, report identical; budget {BUDGET_N}: stopped at {spent}"
    ))
}

fn main() {
    let e2e_cache = tempfile::tempdir().expect("temp dir");
    let cache = e2e_cache.path().to_path_buf();
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("bisection contract", Box::new(bisection_contract)),
        ("analytic radius", Box::new(analytic_radius)),
        ("match-rate calibration", Box::new(match_rate_calibration)),
        ("selection optimality", Box::new(selection_optimality)),
        ("geometry exactness", Box::new(geometry_exactness)),
        ("end-to-end consistency", Box::new({
            let c = cache.clone();
            move || end_to_end(&c)
        })),
        ("diversity metrics", Box::new(diversity_metrics)),
        ("entailment hit rate", Box::new(entailment_hit_rate)),
        ("determinism and budget", Box::new(move || determinism_and_budget(&cache))),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
