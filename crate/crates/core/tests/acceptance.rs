//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Plain `main` so every criterion runs and reports even when an earlier one
//! fails. The process fails only for criteria outside `KNOWN_UNATTAINABLE`.

mod common;

use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{check_run, classify, sample_thresholds, sample_thresholds_with, tiny_instance, Offset, Side, Tiny};
use morap::assignment::{bvn_decompose, marginals, max_assignment, Assignment, BVN_TOLERANCE};
use morap::centralised::{build_centralised, CentralisedOracle};
use morap::engine::{configure_pool, Engine, Job, JobKind, JobOutput, RewardSpec};
use morap::geometry::NormMatrix;
use morap::model::ProductMdp;
use morap::morap::{
    load_instance, pareto_point, simulate, synthesize, verify_only, Decentralised, ParetoOptions, ParetoResult,
    SupportOracle,
};
use morap::numerics::{evaluate_scheduler, exact_evaluate, optimal_scheduler, IterOptions, Scheduler};
use morap::oracle::{brute_force_hull, build_feasibility_lp, hull_membership, solve_lp};
use morap::warehouse::{generate_instance, WarehouseConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The centralised model has `n·2^(n−1)` copies of a product, so its
/// growth from two to three agents is a factor of about 3, not 4.
const KNOWN_UNATTAINABLE: &[usize] = &[8];

const BAND: f64 = 1e-4;
const TIGHT: IterOptions = IterOptions {
    eps: 1e-10,
    max_sweeps: 1_000_000,
};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Outcome {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

/// Shared between criteria: the random tiny instances and the per-run
/// invariant violations collected for criterion 4.
struct Ctx {
    engine: Arc<Engine>,
    tiny: Vec<(Tiny, Vec<(Vec<f64>, Side)>)>,
    runs: usize,
    violations: Vec<String>,
}

impl Ctx {
    fn record(&mut self, label: &str, r: &ParetoResult, hull: &morap::oracle::AchievableHull) {
        self.runs += 1;
        if let Err(e) = check_run(r, hull, 1e-4) {
            self.violations.push(format!("{label}: {e}"));
        }
    }
}

fn tiny_suite(count: usize, seed: u64) -> Vec<(Tiny, Vec<(Vec<f64>, Side)>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let tiny = tiny_instance(&mut rng, 2, 4);
        let n = tiny.inst.n();
        // one far inside, one far outside, one near each side of the boundary
        let mut ts = Vec::new();
        for (offset, side) in [
            (Offset::Below, Side::Inside),
            (Offset::Above, Side::Outside),
            (Offset::Near, Side::Inside),
            (Offset::Near, Side::Outside),
        ] {
            for _ in 0..1000 {
                let t = sample_thresholds_with(&mut rng, &tiny.hull, n, offset);
                if classify(&t, &tiny.hull, BAND) == side {
                    ts.push((t, side));
                    break;
                }
            }
        }
        out.push((tiny, ts));
    }
    out
}

fn tiny_opts(eps: f64) -> ParetoOptions {
    ParetoOptions {
        eps,
        ..ParetoOptions::default()
    }
}

fn criterion_1(ctx: &mut Ctx) -> Outcome {
    let engine = ctx.engine.clone();
    let start = Instant::now();
    let loaded = load_instance(&data("example.json")).unwrap();
    let inst = loaded.instance;
    let m = NormMatrix::identity(2);
    let mut oracle = Decentralised::new(&inst, &engine).with_options(TIGHT);
    let feasible_a = verify_only(&mut oracle, &[-2.5, 0.7], &m, 0.001).unwrap();
    let feasible_u = verify_only(&mut oracle, &[-1.8, 0.9], &m, 0.001).unwrap();
    let hull = brute_force_hull(&inst).unwrap();
    let mut verts = hull.vertices.clone();
    verts.sort_by(|a, b| b[0].total_cmp(&a[0]));
    let expected = [[-1.0, 0.1], [-15.0 / 7.0, 5.0 / 7.0]];
    let verts_ok = verts.len() == 2
        && verts
            .iter()
            .zip(&expected)
            .all(|(v, e)| (v[0] - e[0]).abs() <= 1e-3 && (v[1] - e[1]).abs() <= 1e-3);
    let mut detail = Vec::new();
    let mut dist = f64::NAN;
    let mut paper_close = false;
    for (t, label) in [([-2.5, 0.7], "ta"), ([-1.8, 0.9], "tu")] {
        let r = pareto_point(&mut oracle, &t, &m, &tiny_opts(0.001)).unwrap();
        ctx.record(&format!("toy {label}"), &r, &hull);
        if label == "tu" {
            let proj = hull.projection(&t, &m).unwrap();
            dist = m.distance(&r.t_down, &proj).unwrap();
            paper_close = m.distance(&r.t_down, &[-1.97, 0.61]).unwrap() <= 0.1;
            detail.push(format!("tDown {:.4?}, oracle projection {:.4?}", r.t_down, proj));
        }
    }
    let elapsed = start.elapsed();
    let pass = feasible_a && !feasible_u && verts_ok && dist <= 1e-3 && elapsed < Duration::from_secs(1);
    Outcome::new(
        pass,
        format!(
            "ta feasible={feasible_a}, tu feasible={feasible_u}, vertices {:.4?}, {}, distance {dist:.2e}, printed (-1.97, 0.61) within 0.1: {paper_close}, {elapsed:.2?}",
            verts,
            detail.join("; ")
        ),
    )
}

fn criterion_2(ctx: &mut Ctx) -> Outcome {
    let engine = ctx.engine.clone();
    let start = Instant::now();
    let mut disagreements = Vec::new();
    let mut queries = 0;
    let suite = std::mem::take(&mut ctx.tiny);
    for (k, (tiny, ts)) in suite.iter().enumerate() {
        let central = build_centralised(&tiny.inst).unwrap();
        let m = NormMatrix::identity(tiny.inst.dimension());
        for (t, side) in ts {
            let mut dec = Decentralised::new(&tiny.inst, &engine).with_options(TIGHT);
            let mut cen = CentralisedOracle::new(&central).with_options(TIGHT);
            let a = pareto_point(&mut dec, t, &m, &tiny_opts(1e-6)).unwrap();
            let b = pareto_point(&mut cen, t, &m, &tiny_opts(1e-6)).unwrap();
            ctx.record(&format!("instance {k} decentralised"), &a, &tiny.hull);
            ctx.record(&format!("instance {k} centralised"), &b, &tiny.hull);
            queries += 1;
            let expected = *side == Side::Inside;
            if a.feasible != b.feasible || a.feasible != expected {
                disagreements.push(format!(
                    "instance {k} t={t:?}: dec {} cen {} hull {expected}",
                    a.feasible, b.feasible
                ));
            }
        }
    }
    ctx.tiny = suite;
    let elapsed = start.elapsed();
    Outcome::new(
        disagreements.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} instances, {queries} queries, {} disagreements{}, {elapsed:.2?}",
            ctx.tiny.len(),
            disagreements.len(),
            disagreements
                .first()
                .map(|d| format!(" (first: {d})"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_3(ctx: &mut Ctx) -> Outcome {
    let engine = ctx.engine.clone();
    let start = Instant::now();
    let mut disagreements = Vec::new();
    let mut queries = 0;
    for (k, (tiny, ts)) in ctx.tiny.iter().enumerate() {
        let m = NormMatrix::identity(tiny.inst.dimension());
        for (t, _) in ts {
            let mut dec = Decentralised::new(&tiny.inst, &engine).with_options(TIGHT);
            let v = verify_only(&mut dec, t, &m, 1e-6).unwrap();
            let lp = solve_lp(&build_feasibility_lp(&tiny.inst, t)).unwrap();
            let h = hull_membership(t, &tiny.hull, 1e-6).unwrap();
            queries += 1;
            if v != lp || lp != h {
                disagreements.push(format!("instance {k} t={t:?}: verify {v} lp {lp} hull {h}"));
            }
        }
    }
    let elapsed = start.elapsed();
    Outcome::new(
        disagreements.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{queries} queries, {} disagreements{}, {elapsed:.2?}",
            disagreements.len(),
            disagreements
                .first()
                .map(|d| format!(" (first: {d})"))
                .unwrap_or_default()
        ),
    )
}

fn criterion_4(ctx: &mut Ctx) -> Outcome {
    let engine = ctx.engine.clone();
    let mut counts = Vec::new();
    for name in ["w3x3_n1", "w3x3_n2", "w4x4_n2", "w5x5_n2", "w6x6_n2"] {
        let text = std::fs::read_to_string(data(&format!("warehouse/{name}.json"))).unwrap();
        let cfg: WarehouseConfig = serde_json::from_str(&text).unwrap();
        let inst = generate_instance(&cfg).unwrap();
        let n = inst.n();
        let m = NormMatrix::identity(2 * n);
        let mut oracle = Decentralised::new(&inst, &engine);
        let base = oracle.support(&vec![1.0 / (2 * n) as f64; 2 * n]).unwrap().r;
        // one relaxed and one demanding threshold around the balanced point
        for (scale, p) in [(1.1, 0.9), (0.9, 1.0)] {
            let mut t: Vec<f64> = base[..n].iter().map(|c| c * scale).collect();
            t.extend(std::iter::repeat(p).take(n));
            let r = pareto_point(&mut oracle, &t, &m, &ParetoOptions::default()).unwrap();
            counts.push((name, r.iterations.len(), r.converged));
        }
    }
    let lo = counts.iter().map(|c| c.1).min().unwrap();
    let hi = counts.iter().map(|c| c.1).max().unwrap();
    let all_converged = counts.iter().all(|c| c.2);
    let single_agent_low = counts.iter().filter(|c| c.1 < 2).all(|c| c.0.ends_with("_n1"));
    let pass = ctx.violations.is_empty() && hi <= 16 && all_converged && single_agent_low;
    Outcome::new(
        pass,
        format!(
            "{} runs checked, {} violations{}; warehouse iterations {lo}..{hi} (runs below 2 only on single-agent instances: {single_agent_low}), all converged: {all_converged}",
            ctx.runs,
            ctx.violations.len(),
            ctx.violations.first().map(|d| format!(" (first: {d})")).unwrap_or_default()
        ),
    )
}

fn criterion_5(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let opts = IterOptions::default();
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (model, reward) = common::random_absorbing(&mut rng, 50, 3);
        let m = &model.mdp;
        let sched = Scheduler::simple(
            (0..m.num_states())
                .map(|s| rng.gen_range(0..m.choices(s).len()))
                .collect(),
        );
        let approx = evaluate_scheduler(&model, &sched, &reward, opts).unwrap().value;
        let exact = exact_evaluate(&model, &sched, &reward).unwrap();
        worst = worst.max((approx - exact).abs());
    }
    let mut dominance_failures = 0;
    let mut checked = 0;
    let mut models = 0;
    while models < 50 {
        let (model, reward) = common::random_absorbing(&mut rng, 10, 3);
        let m = &model.mdp;
        let sizes: Vec<usize> = (0..m.num_states()).map(|s| m.choices(s).len()).collect();
        if sizes.iter().product::<usize>() > 20_000 {
            continue;
        }
        models += 1;
        let best = optimal_scheduler(&model, &reward, opts).unwrap().solution.value;
        let mut idx = vec![0usize; sizes.len()];
        loop {
            let v = exact_evaluate(&model, &Scheduler::simple(idx.clone()), &reward).unwrap();
            checked += 1;
            if v > best + 100.0 * opts.eps {
                dominance_failures += 1;
            }
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < sizes[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() {
                break;
            }
        }
    }
    Outcome::new(
        worst <= 100.0 * opts.eps && dominance_failures == 0,
        format!(
            "max |iterative - exact| {worst:.2e} (bound {:.0e}); {dominance_failures} of {checked} pure schedulers beat the optimum on {models} models",
            100.0 * opts.eps
        ),
    )
}

fn criterion_6(_: &mut Ctx) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut hungarian_bad = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=7);
        let c: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let (_, value) = max_assignment(&c).unwrap();
        let best = common::permutations(n)
            .into_iter()
            .map(|p| Assignment(p).value(&c))
            .fold(f64::NEG_INFINITY, f64::max);
        if value != best && (value - best).abs() > 1e-12 * (1.0 + best.abs()) {
            hungarian_bad += 1;
        }
    }
    let mut bvn_bad = 0;
    let mut max_ratio: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=7);
        let parts = rng.gen_range(1..3 * n * n);
        let mut x = vec![vec![0.0; n]; n];
        let mut total = 0.0;
        for _ in 0..parts {
            let mut p: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                p.swap(i, rng.gen_range(0..=i));
            }
            let w: f64 = rng.gen_range(0.01..1.0);
            total += w;
            for (j, &i) in p.iter().enumerate() {
                x[i][j] += w;
            }
        }
        x.iter_mut().flatten().for_each(|v| *v /= total);
        let d = bvn_decompose(&x, BVN_TOLERANCE).unwrap();
        let back = marginals(n, &d);
        let err = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| (back[i][j] - x[i][j]).abs())
            .fold(0.0, f64::max);
        let bound = n * n + 2 - 2 * n;
        max_ratio = max_ratio.max(d.len() as f64 / bound as f64);
        if d.len() > bound || err > n as f64 * BVN_TOLERANCE {
            bvn_bad += 1;
        }
    }
    Outcome::new(
        hungarian_bad == 0 && bvn_bad == 0,
        format!("{hungarian_bad}/500 assignment mismatches; {bvn_bad}/500 decompositions over the count bound or tolerance (largest count/bound {max_ratio:.2})"),
    )
}

fn criterion_7(_: &mut Ctx) -> Outcome {
    let text = std::fs::read_to_string(data("warehouse/w4x4_n2.json")).unwrap();
    let cfg: WarehouseConfig = serde_json::from_str(&text).unwrap();
    let inst = generate_instance(&cfg).unwrap();
    let models: Vec<Arc<ProductMdp>> = (0..inst.num_models()).map(|id| inst.model(id).clone()).collect();
    let smallest = models.iter().map(|p| p.num_states()).min().unwrap();
    let batch = || -> Vec<Job> {
        (0..64)
            .map(|id| {
                let c = (id % 8) as f64 / 7.0;
                Job {
                    id,
                    model: models[id % models.len()].clone(),
                    kind: JobKind::Optimize,
                    reward: RewardSpec::Weighted {
                        cost: c,
                        success: 1.0 - c,
                    },
                    opts: IterOptions::default(),
                }
            })
            .collect()
    };
    let mut reference: Option<Vec<(u64, Scheduler)>> = None;
    let mut identical = true;
    let mut times = Vec::new();
    for workers in [1, 2, 4, 8] {
        let engine = Engine::new(configure_pool(Some(workers), 1, 64).unwrap());
        let start = Instant::now();
        let out = engine.run_batch(batch());
        times.push((workers, start.elapsed()));
        let got: Vec<(u64, Scheduler)> = out
            .into_values()
            .map(|r| match r.unwrap() {
                JobOutput::Optimized(o) => (o.solution.value.to_bits(), o.scheduler),
                JobOutput::Evaluated(_) => unreachable!(),
            })
            .collect();
        match &reference {
            None => reference = Some(got),
            Some(r) => identical &= *r == got,
        }
    }
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let t1 = times[0].1.as_secs_f64();
    let t4 = times[2].1.as_secs_f64();
    let speed = if cores >= 4 {
        format!("4-worker/1-worker time {:.2} (limit 0.70)", t4 / t1)
    } else {
        format!(
            "speed-up unverified ({cores} core(s) available), 4-worker/1-worker time {:.2}",
            t4 / t1
        )
    };
    let pass = identical && (cores < 4 || t4 <= 0.7 * t1);
    Outcome::new(
        pass,
        format!("64 jobs over products of >= {smallest} states; bitwise identical across 1/2/4/8 workers: {identical}; {speed}"),
    )
}

fn criterion_8(_: &mut Ctx) -> Outcome {
    let mut dec = Vec::new();
    for n in 1..=4 {
        let inst = generate_instance(&WarehouseConfig::new(6, 6, n)).unwrap();
        dec.push(inst.total_product_states() as f64);
    }
    let mut cen = Vec::new();
    for n in 1..=3 {
        let inst = generate_instance(&WarehouseConfig::new(6, 6, n)).unwrap();
        cen.push(build_centralised(&inst).unwrap().num_states() as f64);
    }
    // Θ(n²): total/n² stays within a factor 2 band and the log-log slope is near 2
    let per: Vec<f64> = dec
        .iter()
        .enumerate()
        .map(|(k, s)| s / ((k + 1) * (k + 1)) as f64)
        .collect();
    let band = per.iter().cloned().fold(0.0, f64::max) / per.iter().cloned().fold(f64::INFINITY, f64::min);
    let xs: Vec<f64> = (1..=4).map(|n| (n as f64).ln()).collect();
    let ys: Vec<f64> = dec.iter().map(|s| s.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let quadratic = band <= 2.0 && (1.5..=2.5).contains(&slope);
    let factors: Vec<f64> = cen.windows(2).map(|w| w[1] / w[0]).collect();
    let growth = factors.iter().all(|&f| f >= 4.0);
    Outcome::new(
        quadratic && growth,
        format!(
            "decentralised totals {dec:?} (total/n² band {band:.2}, slope {slope:.2}, Θ(n²): {quadratic}); centralised {cen:?}, growth factors {:.2?} (>= 4 each: {growth})",
            factors
        ),
    )
}

fn criterion_9(ctx: &mut Ctx) -> Outcome {
    let engine = ctx.engine.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut failures = Vec::new();
    let mut worst_z: f64 = f64::NEG_INFINITY;
    let mut done = 0;
    while done < 20 {
        let tiny = tiny_instance(&mut rng, 2, 4);
        let n = tiny.inst.n();
        let t = sample_thresholds(&mut rng, &tiny.hull, n);
        let m = NormMatrix::identity(2 * n);
        let mut dec = Decentralised::new(&tiny.inst, &engine).with_options(TIGHT);
        let r = pareto_point(&mut dec, &t, &m, &tiny_opts(1e-6)).unwrap();
        let synth = synthesize(&r).unwrap();
        let report = simulate(&tiny.inst, &synth, 100_000, done as u64).unwrap();
        for k in 0..2 * n {
            let se = report.std_err[k].max(1e-9);
            let z = (r.t_up[k] - report.mean[k]) / se;
            worst_z = worst_z.max(z);
            if report.mean[k] < r.t_up[k] - 3.0 * se - 1e-9 {
                failures.push(format!(
                    "instance {done} objective {k}: mean {:.5} < tUp {:.5} (se {se:.1e})",
                    report.mean[k], r.t_up[k]
                ));
            }
        }
        done += 1;
    }
    Outcome::new(
        failures.is_empty(),
        format!(
            "20 instances x 100000 episodes, {} shortfalls beyond 3 standard errors, worst shortfall {worst_z:.2} se{}",
            failures.len(),
            failures.first().map(|d| format!(" (first: {d})")).unwrap_or_default()
        ),
    )
}

fn main() {
    let mut ctx = Ctx {
        engine: Arc::new(Engine::sequential()),
        tiny: tiny_suite(100, 2024),
        runs: 0,
        violations: Vec::new(),
    };
    let criteria: [(usize, fn(&mut Ctx) -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut unexpected = Vec::new();
    for (k, run) in criteria {
        let start = Instant::now();
        let out = run(&mut ctx);
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {k}: {verdict} - {} [{:.2?}]", out.detail, start.elapsed());
        if !out.pass && !KNOWN_UNATTAINABLE.contains(&k) {
            unexpected.push(k);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
