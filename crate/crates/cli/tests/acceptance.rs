//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary (`harness = false`).

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use treemax::gradcheck::{run_gradcheck, GradcheckSettings};
use treemax::gradient::tree_gradient;
use treemax::linalg::softmax;
use treemax::mdp::random_mdp;
use treemax::oracle::{enumerated_cumulant, enumerated_exponent, enumerated_policy};
use treemax::policy::direct_exponent;
use treemax::trainer::{train, ChainEnv, SimEnvironment, TrainConfig};
use treemax::variance::{log_slope, seeded_theta, toy_instance};
use treemax::{
    build_cumulant, build_exponent, conjecture_check_e, depth_sweep, exact_pg_variance, policy_c,
    policy_e, solve_q, theorem1_bound, Mdp, Regime, RegimeSpec, RewardMode, TreePolicyConfig, Variant,
};

type Outcome = Result<String, String>;

fn instance(seed: u64, s: usize, a: usize, d: usize, beta: f64, variant: Variant) -> (Mdp, TreePolicyConfig) {
    let rewards = match variant {
        Variant::Cumulative => RewardMode::StateAction,
        Variant::Exponentiated => RewardMode::State,
    };
    let (mdp, behavior) = random_mdp(s, a, rewards, 0.9, seed).expect("random mdp");
    let theta = seeded_theta(s, seed).map(|t| 2.0 * t - 1.0);
    let config = TreePolicyConfig::new(variant, d, beta, theta, behavior).expect("config");
    (mdp, config)
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    check(start.elapsed() < budget, || format!("took {:.1?}, budget {:?}", start.elapsed(), budget))
}

/// 1. Closed forms equal exhaustive trajectory enumeration.
fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut instances = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..60u64 {
        let s = 2 + (seed % 3) as usize;
        let a = 2 + ((seed / 3) % 2) as usize;
        let d = 1 + ((seed / 6) % 4) as usize;
        let beta = 0.3 + 0.25 * (seed % 7) as f64;
        let (mdp, config) = instance(seed, s, a, d, beta, Variant::Cumulative);
        let (mdp_e, config_e) = instance(seed, s, a, d, beta, Variant::Exponentiated);
        for root in 0..s {
            let c = build_cumulant(&mdp, &config, root).map_err(err)?.values;
            worst = worst.max((c - enumerated_cumulant(&mdp, &config, root)).amax());
            let p = policy_c(&mdp, &config, root).map_err(err)?.probs;
            worst = worst.max((p - enumerated_policy(&mdp, &config, root)).amax());
            let e = build_exponent(&mdp_e, &config_e, root).map_err(err)?.values;
            let e_ref = enumerated_exponent(&mdp_e, &config_e, root);
            worst = worst.max((e - &e_ref).amax() / e_ref.amax());
            let q = policy_e(&mdp_e, &config_e, root).map_err(err)?.probs;
            worst = worst.max((q - enumerated_policy(&mdp_e, &config_e, root)).amax());
        }
        instances += 2;
    }
    check(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("{instances} instances, max deviation {worst:.1e}, {:.1?}", start.elapsed()))
}

/// 2. Analytic gradients equal central differences; score identity.
fn gradient_correctness() -> Outcome {
    let report = run_gradcheck(&GradcheckSettings::default()).map_err(err)?;
    check(report.passed(), || format!("{} entries fail, e.g. {:?}", report.failures.len(), report.failures.first()))?;
    let mut defect: f64 = report.max_score_defect;
    for seed in 0..50u64 {
        for variant in [Variant::Cumulative, Variant::Exponentiated] {
            let (mdp, config) = instance(seed, 2 + (seed % 5) as usize, 2 + (seed % 3) as usize, (seed % 8) as usize, 1.0, variant);
            for root in 0..mdp.num_states() {
                let p = treemax::policy::tree_policy(&mdp, &config, root).map_err(err)?.probs;
                let g = tree_gradient(&mdp, &config, root).map_err(err)?.values;
                defect = defect.max((p.transpose() * g).amax());
            }
        }
    }
    check(defect <= 1e-10, || format!("score identity defect {defect:e}"))?;
    Ok(format!(
        "{} entries, max relative error {:.1e}, score defect {:.1e}",
        report.checked_entries, report.max_relative_error, defect
    ))
}

/// Shared suite for criteria 3 and 4: 200 instances per variant, `d = 0..6`.
fn bound_suite(variant: Variant) -> Vec<(Mdp, TreePolicyConfig)> {
    (0..200u64)
        .map(|seed| {
            let s = 2 + (seed % 5) as usize;
            let a = 2 + ((seed / 5) % 3) as usize;
            let beta = 0.25 + 0.25 * (seed % 9) as f64;
            instance(1000 + seed, s, a, 0, beta, variant)
        })
        .collect()
}

/// 3. Exact variance never exceeds the max-Q / max-gradient bound.
fn lemma_dominance() -> Outcome {
    let mut checks = 0;
    let mut tightest: f64 = 0.0;
    for variant in [Variant::Cumulative, Variant::Exponentiated] {
        for (mdp, base) in bound_suite(variant) {
            for d in 0..=6 {
                let r = exact_pg_variance(&mdp, &base.with_depth(d)).map_err(err)?;
                check(r.exact_variance <= r.lemma1_bound + 1e-9, || {
                    format!("{variant} d {d}: {} > {}", r.exact_variance, r.lemma1_bound)
                })?;
                if r.lemma1_bound > 0.0 {
                    tightest = tightest.max(r.exact_variance / r.lemma1_bound);
                }
                checks += 1;
            }
        }
    }
    Ok(format!("{checks} checks, 0 violations, largest variance/bound {tightest:.3}"))
}

/// 4. Closed-form depth bound for C, and the near-uniform decay slope.
fn theorem_dominance_and_decay() -> Outcome {
    let mut checks = 0;
    for (mdp, base) in bound_suite(Variant::Cumulative) {
        for d in 0..=6 {
            let config = base.with_depth(d);
            let v = exact_pg_variance(&mdp, &config).map_err(err)?.exact_variance;
            let bound = theorem1_bound(&mdp, &config).map_err(err)?;
            check(v <= bound + 1e-9, || format!("d {d}: {v} > {bound}"))?;
            checks += 1;
        }
    }
    let depths: Vec<usize> = (2..=8).collect();
    let xs: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let spec = RegimeSpec::new(Regime::NearUniform, 0.05, 5, 3).with_rewards(RewardMode::StateAction);
        let (mdp, config) = toy_instance(&spec, seed, Variant::Cumulative, 1.0).map_err(err)?;
        let reports = depth_sweep(&mdp, &config, &depths).map_err(err)?;
        let ys: Vec<f64> = reports.iter().map(|r| r.exact_variance).collect();
        let slope = log_slope(&xs, &ys);
        let model = 2.0 * (mdp.discount() * reports[0].lambda2).ln();
        let rel = (slope - model).abs() / model.abs();
        check(rel <= 0.2, || format!("seed {seed}: slope {slope:.3} vs {model:.3}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("{checks} bound checks, 0 violations; near-uniform slope error <= {:.1}%", 100.0 * worst))
}

/// 5. Rank-one behavior chains give zero gradient and zero variance.
fn optimal_decay_zero() -> Outcome {
    let mut worst: f64 = 0.0;
    for (rewards, variant) in [
        (RewardMode::StateAction, Variant::Cumulative),
        (RewardMode::Constant(0.5), Variant::Exponentiated),
    ] {
        for seed in 0..10 {
            let spec = RegimeSpec::new(Regime::NearUniform, 0.0, 4, 3).with_rewards(rewards);
            let (mdp, base) = toy_instance(&spec, seed, variant, 1.0).map_err(err)?;
            for d in 2..=8 {
                let config = base.with_depth(d);
                for root in 0..4 {
                    let g = tree_gradient(&mdp, &config, root).map_err(err)?;
                    worst = worst.max(g.values.amax());
                }
                worst = worst.max(exact_pg_variance(&mdp, &config).map_err(err)?.exact_variance);
            }
        }
    }
    check(worst <= 1e-12, || format!("largest entry {worst:e}"))?;
    Ok(format!("C and E, d = 2..8, largest gradient entry or variance {worst:.1e}"))
}

/// 6. Normalized E-variant sweeps with constant rewards track the model curve.
fn figure_reproduction() -> Outcome {
    let start = Instant::now();
    let depths: Vec<usize> = (1..=8).collect();
    let mut lines = Vec::new();
    let mut points = 0;
    let mut misses = 0;
    let mut worst: f64 = 0.0;
    for regime in Regime::ALL {
        let mix = match regime {
            Regime::NearUniform => 0.05,
            Regime::Random => 0.1,
            Regime::NearPermutation => 0.02,
        };
        let spec = RegimeSpec::new(regime, mix, 5, 3).with_rewards(RewardMode::Constant(0.5));
        let mut fitted = Vec::new();
        let mut spans = Vec::new();
        for seed in 0..5 {
            let (mdp, config) = toy_instance(&spec, seed, Variant::Exponentiated, 1.0).map_err(err)?;
            let reports = depth_sweep(&mdp, &config, &depths).map_err(err)?;
            let ratios: Vec<f64> = reports.iter().map(|r| r.normalized_variance / r.normalized_model).collect();
            let (lo, hi) = ratios.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
            spans.push(format!("{lo:.2}-{hi:.2}"));
            for r in &reports {
                let dev = (r.normalized_variance / r.normalized_model - 1.0).abs();
                points += 1;
                if !(dev <= 0.15) {
                    misses += 1;
                }
                worst = worst.max(if dev.is_finite() { dev } else { f64::INFINITY });
            }
            let fit = conjecture_check_e(&mdp, &config, &depths[2..]).map_err(err)?;
            fitted.push(fit.map(|f| format!("{f:.2}")).unwrap_or_else(|| "n/a".into()));
        }
        lines.push(format!(
            "{regime}: exact/model range per seed [{}]; fitted rate / (gamma l2)^2 over d=3..8 [{}]",
            spans.join(", "),
            fitted.join(", ")
        ));
    }
    // Random state rewards: reported only.
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let spec = RegimeSpec::new(Regime::Random, 0.1, 5, 3).with_rewards(RewardMode::State);
        let (mdp, config) = toy_instance(&spec, seed, Variant::Exponentiated, 1.0).map_err(err)?;
        if let Some(r) = conjecture_check_e(&mdp, &config, &depths).map_err(err)? {
            ratios.push(r);
        }
    }
    ratios.sort_by(f64::total_cmp);
    lines.push(format!(
        "random rewards (reported only): {} ratios, min {:.2}, median {:.2}, max {:.2}",
        ratios.len(),
        ratios[0],
        ratios[ratios.len() / 2],
        ratios[ratios.len() - 1]
    ));
    for l in &lines {
        println!("    {l}");
    }
    within_budget(start, Duration::from_secs(300))?;
    check(misses == 0, || {
        format!("{misses}/{points} points outside 15% of (gamma l2)^(2(d-1)); worst relative deviation {worst:.2}")
    })?;
    Ok(format!("{points} points within 15%, {:.1?}", start.elapsed()))
}

/// 7. Deep C policies approach Boltzmann exploration over `Q^{pi_b}`.
fn boltzmann_limit() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let s = 3 + (seed % 4) as usize;
        let (mdp, behavior) = random_mdp(s, 3, RewardMode::StateAction, 0.9, 500 + seed).map_err(err)?;
        let config = TreePolicyConfig::new(Variant::Cumulative, 50, 1.0, seeded_theta(s, seed), behavior.clone())
            .map_err(err)?;
        let q = solve_q(&mdp, &behavior).map_err(err)?;
        for root in 0..s {
            let p = policy_c(&mdp, &config, root).map_err(err)?.probs;
            let row: Vec<f64> = q.row(root).iter().copied().collect();
            let b = DVector::from_vec(softmax(&row).0);
            worst = worst.max(0.5 * (p - b).abs().sum());
        }
    }
    check(worst <= 1e-3, || format!("total variation {worst:e}"))?;
    Ok(format!("20 MDPs, max total variation {worst:.1e}"))
}

/// 8. Stochastic factorization of the exponent matrix.
fn factorization() -> Outcome {
    let (mut rel, mut row): (f64, f64) = (0.0, 0.0);
    for seed in 0..50u64 {
        let s = 2 + (seed % 5) as usize;
        let d = 1 + (seed % 8) as usize;
        let (mdp, config) = instance(2000 + seed, s, 2 + (seed % 3) as usize, d, 0.2 + 0.3 * (seed % 6) as f64, Variant::Exponentiated);
        for root in 0..s {
            let em = build_exponent(&mdp, &config, root).map_err(err)?;
            let direct = direct_exponent(&mdp, &config, root).map_err(err)?;
            rel = rel.max((em.reconstruct() - &direct).amax() / direct.amax());
            for b in &em.factors {
                for r in b.row_iter() {
                    row = row.max((r.sum() - 1.0).abs());
                }
            }
        }
    }
    check(rel <= 1e-9 && row <= 1e-10, || format!("reconstruction {rel:e}, row sums {row:e}"))?;
    Ok(format!("50 instances, reconstruction error {rel:.1e}, row-sum defect {row:.1e}"))
}

/// 9. Tree policies lower the empirical gradient variance on the chain.
fn trainer_demonstration() -> Outcome {
    let start = Instant::now();
    let env = ChainEnv::new(5).map_err(err)?;
    let target = 0.95 * env.optimal_return(0.9);
    let mean_var = |depth: usize, seed: u64| -> Result<(f64, Option<usize>), String> {
        let config = TrainConfig { depth, iterations: 2000, seed, ..TrainConfig::default() };
        let outcome = train(&env, &config).map_err(err)?;
        let n = outcome.records.len() as f64;
        let var = outcome.records.iter().map(|r| r.empirical_grad_variance).sum::<f64>() / n;
        let hit = outcome.records.iter().position(|r| r.mean_return >= target);
        Ok((var, hit))
    };
    let mut summary = Vec::new();
    for depth in [2, 3] {
        let mut wins = 0;
        let mut hits = Vec::new();
        for seed in 0..5 {
            let (base, _) = mean_var(0, seed)?;
            let (tree, hit) = mean_var(depth, seed)?;
            if tree < base {
                wins += 1;
            }
            hits.push(hit.ok_or_else(|| format!("d {depth} seed {seed} never reached the optimal return"))?);
        }
        check(wins >= 4, || format!("d {depth}: lower variance on only {wins}/5 seeds"))?;
        summary.push(format!("d={depth}: lower on {wins}/5, optimum by iteration {}", hits.iter().max().unwrap()));
    }
    within_budget(start, Duration::from_secs(120))?;
    Ok(format!("{}; {:.1?}", summary.join("; "), start.elapsed()))
}

fn run(dir: &Path, args: &[&str]) -> Result<(i32, Vec<u8>), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_treemax"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(err)?;
    Ok((out.status.code().unwrap_or(-1), out.stdout))
}

/// 10. Every command is byte-reproducible.
fn determinism() -> Outcome {
    let commands: Vec<Vec<&str>> = vec![
        vec!["gen-mdp", "--states", "6", "--actions", "3", "--regime", "random", "--seed", "7", "-o", "m.json"],
        vec!["gen-mdp", "--states", "5", "--actions", "2", "--regime", "permutation", "--mix", "0", "--seed", "3", "-o", "p.json"],
        vec!["sweep", "--seed", "0", "--seeds", "2", "--depths", "1..5", "-o", "c.csv", "--svg", "c.svg"],
        vec![
            "sweep", "--variant", "E", "--seed", "4", "--seeds", "2", "--depths", "1..5", "-o", "e.csv",
            "--svg", "e.svg", "--ratios", "r.csv", "--jobs", "3",
        ],
        vec!["sweep", "--mdp", "m.json", "--seed", "1", "--depths", "1,2,4", "-o", "f.csv"],
        vec!["gradcheck", "--suite", "10", "--seed", "5"],
        vec!["gradcheck", "--suite", "3", "--inject-sign-flip"],
        vec!["train", "--env", "chain", "--depth", "3", "--iterations", "40", "--baseline", "--seed", "1", "-o", "t.csv"],
        vec!["train", "--env", "grid", "--depth", "2", "--width", "8", "--iterations", "10", "--seed", "2", "-o", "g.csv"],
        vec!["analyze", "--mdp", "m.json", "--variant", "C", "--depth", "3"],
        vec!["gen-mdp", "--states", "4", "--actions", "2", "--rewards", "state", "--seed", "9", "-o", "s.json"],
        vec!["analyze", "--mdp", "s.json", "--variant", "E", "--depth", "2", "-o", "a.json"],
        vec!["analyze", "--mdp", "m.json", "--variant", "E"],
    ];
    let base = std::env::temp_dir().join(format!("treemax-acceptance-{}", std::process::id()));
    let mut transcripts = Vec::new();
    for run_id in 0..2 {
        let dir = base.join(format!("run{run_id}"));
        std::fs::create_dir_all(&dir).map_err(err)?;
        let mut log = Vec::new();
        for args in &commands {
            let (code, stdout) = run(&dir, args)?;
            log.push((args.join(" "), code, stdout));
        }
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .map_err(err)?
            .map(|e| {
                let e = e.expect("dir entry");
                (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read output"))
            })
            .collect();
        files.sort();
        transcripts.push((log, files));
    }
    let _ = std::fs::remove_dir_all(&base);
    let (log_a, files_a) = &transcripts[0];
    let (log_b, files_b) = &transcripts[1];
    for (a, b) in log_a.iter().zip(log_b) {
        check(a == b, || format!("`{}` differs between runs", a.0))?;
    }
    check(files_a.len() == files_b.len(), || "different output file sets".into())?;
    for (a, b) in files_a.iter().zip(files_b) {
        check(a == b, || format!("{} differs between runs", a.0))?;
    }
    let codes: Vec<String> = log_a.iter().map(|(_, c, _)| c.to_string()).collect();
    Ok(format!("{} commands, {} files identical; exit codes [{}]", commands.len(), files_a.len(), codes.join(",")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("gradient correctness", gradient_correctness),
        ("variance bound dominance", lemma_dominance),
        ("depth bound dominance and decay", theorem_dominance_and_decay),
        ("rank-one zero case", optimal_decay_zero),
        ("normalized sweep reproduction", figure_reproduction),
        ("Boltzmann limit", boltzmann_limit),
        ("exponent factorization", factorization),
        ("trainer demonstration", trainer_demonstration),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS criterion {}: {name} ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({detail})", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
