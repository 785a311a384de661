use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use treemax::gradcheck::{run_gradcheck, GradcheckSettings};
use treemax::mdp::{Regime, RewardMode};
use treemax::trainer::{self, TrainConfig, TrainOutcome, TrainStatus};
use treemax::variance::{conjecture_check_e, run_sweeps, seeded_theta, toy_instance, SweepOutcome};
use treemax::{
    analyze_spectrum, depth_sweep, generate_mdp, induce_chain, Mdp, RegimeSpec, SpectralReport,
    StationaryPolicy, TreePolicyConfig, TreeMaxError, Variant, VarianceReport,
};

use crate::report::{geometric_mean_curve, line_chart_svg, num, opt, CsvReport, Series, PALETTE};
use crate::{AnalyzeArgs, CliError, GenMdpArgs, GradcheckArgs, SweepArgs, TrainArgs};

pub const SWEEP_HEADER: [&str; 14] = [
    "regime",
    "seed",
    "S",
    "A",
    "beta",
    "gamma",
    "variant",
    "depth",
    "lambda2",
    "exact_variance",
    "lemma1_bound",
    "theorem_bound",
    "normalized_variance",
    "normalized_model",
];

pub const TRAIN_HEADER: [&str; 5] = [
    "iteration",
    "mean_return",
    "empirical_grad_variance",
    "policy_entropy",
    "wall_ms",
];

/// Default mixing weight per regime.
pub fn default_mix(regime: Regime) -> f64 {
    match regime {
        Regime::NearUniform => 0.05,
        Regime::Random => 0.1,
        Regime::NearPermutation => 0.02,
    }
}

/// Sidecar written next to every generated MDP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpMeta {
    pub regime: Regime,
    pub mix: f64,
    pub seed: u64,
    pub num_states: usize,
    pub num_actions: usize,
    pub rewards: String,
    pub gamma: f64,
    /// `|lambda_2|` of the behavior chain.
    pub lambda2: f64,
    pub mixing: bool,
    /// Behavior policy rows `[s][a]`.
    pub behavior: Vec<Vec<f64>>,
}

/// `m.json` -> `m.meta.json`.
pub fn meta_path(mdp_path: &Path) -> PathBuf {
    let stem = mdp_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    mdp_path.with_file_name(format!("{stem}.meta.json"))
}

/// `run.csv` -> `run.baseline.csv`.
pub fn baseline_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.baseline.csv"))
}

fn behavior_rows(policy: &StationaryPolicy) -> Vec<Vec<f64>> {
    policy.probs().row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn gen_mdp(args: &GenMdpArgs) -> Result<(), CliError> {
    let mix = args.mix.unwrap_or_else(|| default_mix(args.regime));
    let spec = RegimeSpec::new(args.regime, mix, args.states, args.actions)
        .with_rewards(args.rewards)
        .with_discount(args.gamma);
    let (mdp, behavior) = generate_mdp(&spec, args.seed)?;
    let report = analyze_spectrum(&induce_chain(&mdp, &behavior)?)?;
    let meta = MdpMeta {
        regime: args.regime,
        mix,
        seed: args.seed,
        num_states: args.states,
        num_actions: args.actions,
        rewards: args.rewards.to_string(),
        gamma: args.gamma,
        lambda2: report.lambda2_modulus,
        mixing: report.mixing_flag,
        behavior: behavior_rows(&behavior),
    };
    mdp.save(&args.output)?;
    fs::write(meta_path(&args.output), serde_json::to_string_pretty(&meta).map_err(TreeMaxError::from)? + "\n")?;
    Ok(())
}

fn load_with_meta(path: &Path) -> Result<(Mdp, Option<MdpMeta>), CliError> {
    let mdp = Mdp::load(path)?;
    let meta_file = meta_path(path);
    let meta = if meta_file.exists() {
        let text = fs::read_to_string(&meta_file)?;
        Some(serde_json::from_str(&text).map_err(TreeMaxError::from)?)
    } else {
        None
    };
    Ok((mdp, meta))
}

fn behavior_for(mdp: &Mdp, meta: Option<&MdpMeta>) -> Result<StationaryPolicy, CliError> {
    match meta {
        Some(m) => Ok(StationaryPolicy::from_rows(&m.behavior)?),
        None => Ok(StationaryPolicy::uniform(mdp.num_states(), mdp.num_actions())),
    }
}

/// `lo..hi` (inclusive) or `a,b,c`.
pub fn parse_depths(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = |e: String| CliError::Usage(format!("bad depth list `{text}`: {e}"));
    let depths: Vec<usize> = if let Some((lo, hi)) = text.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|e| bad(format!("{e}")))?;
        let hi: usize = hi.trim().parse().map_err(|e| bad(format!("{e}")))?;
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|d| d.trim().parse::<usize>().map_err(|e| bad(format!("{e}"))))
            .collect::<Result<_, _>>()?
    };
    if depths.is_empty() || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(bad("depths must be non-empty and strictly ascending".into()));
    }
    Ok(depths)
}

/// `TREEMAX_JOBS`, then `--jobs`, then the logical core count.
pub fn resolve_jobs(flag: Option<usize>) -> Result<usize, CliError> {
    if let Ok(v) = std::env::var("TREEMAX_JOBS") {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&j| j > 0)
            .ok_or_else(|| CliError::Usage(format!("TREEMAX_JOBS must be a positive integer, got `{v}`")));
    }
    match flag {
        Some(0) => Err(CliError::Usage("--jobs must be positive".into())),
        Some(j) => Ok(j),
        None => Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)),
    }
}

fn sweep_row(label: &str, seed: u64, mdp_dims: (usize, usize), beta: f64, gamma: f64, r: &VarianceReport) -> Vec<String> {
    vec![
        label.to_string(),
        seed.to_string(),
        mdp_dims.0.to_string(),
        mdp_dims.1.to_string(),
        num(beta),
        num(gamma),
        r.variant.to_string(),
        r.depth.to_string(),
        num(r.lambda2),
        num(r.exact_variance),
        num(r.lemma1_bound),
        opt(r.theorem_bound),
        num(r.normalized_variance),
        num(r.normalized_model),
    ]
}

/// One finished curve for the chart.
struct Curve {
    label: String,
    reports: Vec<VarianceReport>,
}

pub fn sweep(args: &SweepArgs) -> Result<(), CliError> {
    let depths = parse_depths(&args.depths)?;
    let jobs = resolve_jobs(args.jobs)?;
    let rewards = args.rewards.unwrap_or(match args.variant {
        Variant::Cumulative => RewardMode::StateAction,
        Variant::Exponentiated => RewardMode::State,
    });
    let mut csv = CsvReport::new(&SWEEP_HEADER);
    let mut ratio_csv = CsvReport::new(&["regime", "seed", "lambda2", "ratio"]);
    let mut curves: Vec<Curve> = Vec::new();
    let mut failure: Option<CliError> = None;

    if args.mdp_files.is_empty() {
        let specs: Vec<RegimeSpec> = args
            .regimes
            .iter()
            .map(|&r| {
                RegimeSpec::new(r, args.mix.unwrap_or_else(|| default_mix(r)), args.states, args.actions)
                    .with_rewards(rewards)
                    .with_discount(args.gamma)
            })
            .collect();
        let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed + i).collect();
        let outcomes = run_sweeps(&specs, &seeds, args.variant, args.beta, &depths, jobs)?;
        for SweepOutcome { spec, seed, reports } in outcomes {
            match reports {
                Ok(reports) => {
                    let label = spec.regime.as_str();
                    for r in &reports {
                        csv.row(&sweep_row(label, seed, (spec.num_states, spec.num_actions), args.beta, args.gamma, r));
                    }
                    if args.ratios.is_some() && args.variant == Variant::Exponentiated {
                        let (mdp, config) = toy_instance(&spec, seed, args.variant, args.beta)?;
                        let ratio = conjecture_check_e(&mdp, &config, &depths)?;
                        ratio_csv.row(&[label.to_string(), seed.to_string(), num(reports[0].lambda2), opt(ratio)]);
                    }
                    curves.push(Curve { label: label.to_string(), reports });
                }
                Err(e) => {
                    failure.get_or_insert(CliError::from(e));
                }
            }
        }
    } else {
        for path in &args.mdp_files {
            let result = (|| -> Result<(), CliError> {
                let (mdp, meta) = load_with_meta(path)?;
                let behavior = behavior_for(&mdp, meta.as_ref())?;
                let seed = meta.as_ref().map(|m| m.seed).unwrap_or(args.seed);
                let label = meta.as_ref().map(|m| m.regime.as_str()).unwrap_or("file");
                let theta = seeded_theta(mdp.num_states(), seed);
                let config = TreePolicyConfig::new(args.variant, depths[0], args.beta, theta, behavior)?;
                let reports = depth_sweep(&mdp, &config, &depths)?;
                for r in &reports {
                    csv.row(&sweep_row(label, seed, (mdp.num_states(), mdp.num_actions()), args.beta, mdp.discount(), r));
                }
                if args.ratios.is_some() && args.variant == Variant::Exponentiated {
                    let ratio = conjecture_check_e(&mdp, &config, &depths)?;
                    ratio_csv.row(&[label.to_string(), seed.to_string(), num(reports[0].lambda2), opt(ratio)]);
                }
                curves.push(Curve { label: label.to_string(), reports });
                Ok(())
            })();
            if let Err(e) = result {
                failure = Some(e);
                break;
            }
        }
    }

    let message = failure.as_ref().map(|e| e.to_string());
    csv.finish(&args.output, message.as_deref())?;
    if let Some(path) = &args.ratios {
        ratio_csv.finish(path, message.as_deref())?;
    }
    if let Some(path) = &args.svg {
        fs::write(path, sweep_chart(&curves, args.variant))?;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn sweep_chart(curves: &[Curve], variant: Variant) -> String {
    let mut labels: Vec<&str> = curves.iter().map(|c| c.label.as_str()).collect();
    labels.dedup();
    let mut series = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let group: Vec<&Curve> = curves.iter().filter(|c| c.label == *label).collect();
        let pick = |f: fn(&VarianceReport) -> f64| -> Vec<Vec<(f64, f64)>> {
            group
                .iter()
                .map(|c| c.reports.iter().map(|r| (r.depth as f64, f(r))).collect())
                .collect()
        };
        let color = PALETTE[i % PALETTE.len()];
        series.push(Series {
            label: format!("{label} exact"),
            dashed: false,
            color,
            points: geometric_mean_curve(&pick(|r| r.normalized_variance)),
        });
        series.push(Series {
            label: format!("{label} model"),
            dashed: true,
            color,
            points: geometric_mean_curve(&pick(|r| r.normalized_model)),
        });
    }
    line_chart_svg(
        &format!("Normalized policy-gradient variance ({variant} variant)"),
        "depth d",
        "variance / variance at first depth",
        &series,
    )
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let settings = GradcheckSettings {
        suite_size: args.suite,
        seed: args.seed,
        tolerance: args.tolerance,
        step: args.step,
        inject_sign_flip: args.inject_sign_flip,
    };
    let report = run_gradcheck(&settings)?;
    // A closed stdout (e.g. piped into `head`) must not abort the check.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "checked {} entries over {} instances per variant; max relative error {:e}; max score defect {:e}",
        report.checked_entries, args.suite, report.max_relative_error, report.max_score_defect
    );
    for f in report.failures.iter().take(20) {
        let _ = writeln!(
        out,
            "FAIL seed={} variant={} depth={} root={} entry=({}, {}) analytic={:e} numeric={:e} rel_err={:e}",
            f.instance_seed, f.variant, f.depth, f.root, f.action, f.state, f.analytic, f.numeric, f.relative_error
        );
    }
    if report.failures.len() > 20 {
        let _ = writeln!(out, "... {} more failures", report.failures.len() - 20);
    }
    if report.passed() {
        let _ = writeln!(out, "PASS");
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} gradient entries exceed tolerance {:e}",
            report.failures.len(),
            args.tolerance
        )))
    }
}

fn write_training(path: &Path, outcome: &TrainOutcome, timing: bool) -> std::io::Result<()> {
    let mut csv = CsvReport::new(&TRAIN_HEADER);
    for (r, ms) in outcome.records.iter().zip(&outcome.wall_ms) {
        csv.row(&[
            r.iteration.to_string(),
            num(r.mean_return),
            num(r.empirical_grad_variance),
            num(r.policy_entropy),
            if timing { format!("{ms:.3}") } else { "0".into() },
        ]);
    }
    let error = match outcome.status {
        TrainStatus::Completed => None,
        TrainStatus::Diverged => Some(format!(
            "diverged: |theta|_inf exceeded {:e} at iteration {}",
            trainer::train::DIVERGENCE_LIMIT,
            outcome.records.len().saturating_sub(1)
        )),
    };
    csv.finish(path, error.as_deref())
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let env = args.env.build()?;
    let config = TrainConfig {
        depth: args.depth,
        width: args.width,
        beta: args.beta,
        gamma: args.gamma,
        learning_rate: args.lr,
        batch_size: args.batch,
        iterations: args.iterations,
        horizon: args.horizon,
        seed: args.seed,
    };
    let outcome = trainer::train(env.as_ref(), &config)?;
    write_training(&args.output, &outcome, args.timing)?;
    let mut diverged = outcome.status == TrainStatus::Diverged;
    if args.baseline {
        let base = trainer::train(env.as_ref(), &TrainConfig { depth: 0, ..config })?;
        write_training(&baseline_path(&args.output), &base, args.timing)?;
        diverged |= base.status == TrainStatus::Diverged;
    }
    if diverged {
        return Err(CliError::Numeric("training diverged; see the CSV trailer".into()));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Analysis {
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    behavior_spectrum: SpectralReport,
    variant: Variant,
    depth: usize,
    beta: f64,
    theta: Vec<f64>,
    /// Tree policy rows `[s][a]`.
    policy: Vec<Vec<f64>>,
    policy_spectrum: Option<SpectralReport>,
    variance: Option<VarianceReport>,
    variance_error: Option<String>,
}

pub fn analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let (mdp, meta) = load_with_meta(&args.mdp)?;
    let behavior = behavior_for(&mdp, meta.as_ref())?;
    let theta = seeded_theta(mdp.num_states(), args.seed);
    let config = TreePolicyConfig::new(args.variant, args.depth, args.beta, theta.clone(), behavior.clone())?;
    let model = treemax::policy::TreeModel::new(&mdp, &config)?;
    let policy = model.policy_matrix()?;
    let (variance, variance_error) = match treemax::exact_pg_variance(&mdp, &config) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let analysis = Analysis {
        num_states: mdp.num_states(),
        num_actions: mdp.num_actions(),
        gamma: mdp.discount(),
        behavior_spectrum: analyze_spectrum(&induce_chain(&mdp, &behavior)?)?,
        variant: args.variant,
        depth: args.depth,
        beta: args.beta,
        theta: theta.iter().copied().collect(),
        policy: behavior_rows(&policy),
        policy_spectrum: analyze_spectrum(&induce_chain(&mdp, &policy)?).ok(),
        variance,
        variance_error,
    };
    let text = serde_json::to_string_pretty(&analysis).map_err(TreeMaxError::from)? + "\n";
    match &args.output {
        Some(path) => fs::write(path, text)?,
        None => {
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
        }
    }
    Ok(())
}
