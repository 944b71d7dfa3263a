//! `exteam` — batch front door for the team laboratory.
//!
//! Single binary, subcommand style. Every run writes its artifacts (CSV
//! and JSON) into `--out-dir` together with a `manifest.json` listing the
//! resolved flags, the config hash, and every emitted file. All
//! randomness flows from `--seed`; Monte-Carlo accumulation order is
//! fixed by `--chunk-size`, not by the worker count, so results are
//! byte-identical across `--threads` settings and repeated runs.
//!
//! Exit codes: 0 success, 2 config/usage error, 3 budget error, 4
//! numerical breakdown inside a solver or estimator.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use exteam_core::config::{load_mixture, LoadedTeam};
use exteam_core::error::{Result, TeamError};
use exteam_core::eval::{
    expected_cost_dynamic_exact, expected_cost_dynamic_mc, expected_cost_reduced_exact,
    expected_cost_reduced_mc, expected_cost_static_exact, expected_cost_static_mc, CostEstimate,
    McOptions, DEFAULT_CHUNK_SIZE, EXACT_TERM_BUDGET,
};
use exteam_core::manifest::{config_hash, RunManifest};
use exteam_core::opt::{
    brute_force_dirac, brute_force_dirac_dynamic, optimize_product_grid, optimize_symmetric_dynamic,
    optimize_symmetric_kernel, CeOptions, OptResult, SymmetricSearch, DEFAULT_GRID_PITCH,
    SEARCH_BUDGET,
};
use exteam_core::policy::{bernoulli_kernel, KernelShape};
use exteam_core::scaling::{
    df_audit_csv, df_bound_audit, gap_curve, gap_curve_dynamic, limit_cost_estimate,
    random_dirac_mixture, two_stage_flip_team, GapCurve,
};
use exteam_core::team::DynamicTeam;
use exteam_core::StaticTeam;

/// Accepts plain integers and scientific notation (`1e6`) for counts.
fn parse_count(s: &str) -> std::result::Result<u64, String> {
    if let Ok(v) = s.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = s
        .parse()
        .map_err(|_| format!("`{s}` is not a sample count"))?;
    if f.is_finite() && f >= 0.0 && f.fract() == 0.0 && f < 9.0e15 {
        Ok(f as u64)
    } else {
        Err(format!("`{s}` is not a whole nonnegative count"))
    }
}

#[derive(Parser)]
#[command(
    name = "exteam",
    version,
    about = "Cost evaluation, policy search, and scaling experiments for finite exchangeable teams",
    propagate_version = true
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GlobalOpts {
    /// Master seed; every random draw in a run derives from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (falls back to EXTEAM_THREADS, then all cores).
    /// Results do not depend on this setting.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Monte-Carlo accumulation chunk. Part of the reproducibility
    /// contract: fixed seed + fixed chunk size ⇒ byte-identical output.
    #[arg(long, global = true, default_value_t = DEFAULT_CHUNK_SIZE, value_parser = parse_count)]
    chunk_size: u64,
    /// Directory for emitted artifacts (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a policy mixture on a team document.
    Evaluate(EvaluateArgs),
    /// Search a policy class for the lowest expected cost.
    Optimize(OptimizeArgs),
    /// Scaling experiments over the number of decision makers.
    Scaling(ScalingArgs),
}

#[derive(Args)]
struct EvaluateArgs {
    /// Team document (JSON).
    #[arg(long)]
    team: PathBuf,
    /// Policy mixture document (JSON).
    #[arg(long)]
    policy: PathBuf,
    /// Evaluation route.
    #[arg(long, value_enum, default_value_t = EvalMode::Exact)]
    mode: EvalMode,
    /// Monte-Carlo sample count (mc routes only).
    #[arg(long, default_value = "1000000", value_parser = parse_count)]
    samples: u64,
    /// Exact-enumeration term budget (exact routes only).
    #[arg(long, default_value_t = EXACT_TERM_BUDGET, value_parser = parse_count)]
    budget: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    /// Exact enumeration of every profile/observation/action tuple.
    Exact,
    /// Monte-Carlo sampling with deterministic chunked accumulation.
    Mc,
    /// Exact enumeration under the reference observation measure
    /// (dynamic documents with a `reduction` block).
    ReducedExact,
    /// Monte-Carlo under the reference observation measure.
    ReducedMc,
}

impl EvalMode {
    fn name(self) -> &'static str {
        match self {
            EvalMode::Exact => "exact",
            EvalMode::Mc => "mc",
            EvalMode::ReducedExact => "reduced-exact",
            EvalMode::ReducedMc => "reduced-mc",
        }
    }
}

#[derive(Args)]
struct OptimizeArgs {
    /// Team document (JSON).
    #[arg(long)]
    team: PathBuf,
    /// Policy class to search.
    #[arg(long, value_enum)]
    class: PolicyClass,
    /// Simplex grid pitch for grid-based searches.
    #[arg(long, default_value_t = DEFAULT_GRID_PITCH)]
    pitch: usize,
    /// Use projected gradient descent instead of a grid (prsym only).
    #[arg(long)]
    gradient: bool,
    /// Random restarts for the gradient search.
    #[arg(long, default_value_t = 8)]
    restarts: u32,
    /// Candidate budget for enumerative searches.
    #[arg(long, default_value_t = SEARCH_BUDGET, value_parser = parse_count)]
    budget: u64,
    /// Term budget for each exact evaluation.
    #[arg(long, default_value_t = EXACT_TERM_BUDGET, value_parser = parse_count)]
    eval_budget: u64,
    /// Cross-entropy population size (dynamic only).
    #[arg(long, default_value_t = 64)]
    population: usize,
    /// Cross-entropy elite count (dynamic only).
    #[arg(long, default_value_t = 8)]
    elites: usize,
    /// Cross-entropy iterations (dynamic only).
    #[arg(long, default_value_t = 40)]
    iterations: usize,
    /// Cross-entropy smoothing weight on the new elite mean (dynamic only).
    #[arg(long, default_value_t = 0.7)]
    smoothing: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyClass {
    /// Brute force over deterministic profiles.
    Dirac,
    /// One shared kernel, independently randomized (grid or gradient).
    Prsym,
    /// Independent per-DM kernels on a simplex grid.
    Product,
    /// Cross-entropy over shared multi-stage kernels (dynamic teams;
    /// static documents are wrapped as horizon-1 teams).
    Dynamic,
}

impl PolicyClass {
    fn name(self) -> &'static str {
        match self {
            PolicyClass::Dirac => "dirac",
            PolicyClass::Prsym => "prsym",
            PolicyClass::Product => "product",
            PolicyClass::Dynamic => "dynamic",
        }
    }
}

#[derive(Args)]
struct ScalingArgs {
    #[command(subcommand)]
    variant: ScalingVariant,
}

#[derive(Subcommand)]
enum ScalingVariant {
    /// Deterministic-vs-symmetric optimality gap for each N.
    Gap(GapArgs),
    /// Cost of a fixed shared kernel along N, with a tail diagnostic.
    Limit(LimitArgs),
    /// Sampling-without-replacement bound audits on random mixtures.
    DfAudit(DfAuditArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Family {
    /// Static binary team: match the action mean to ½.
    MeanMatch,
    /// Two-stage dynamic team with action-flip dynamics.
    TwoStageFlip,
}

impl Family {
    fn name(self) -> &'static str {
        match self {
            Family::MeanMatch => "mean-match",
            Family::TwoStageFlip => "two-stage-flip",
        }
    }
}

#[derive(Args)]
struct GapArgs {
    /// Bundled team family.
    #[arg(long, value_enum, default_value_t = Family::MeanMatch)]
    family: Family,
    /// Team sizes, comma separated (e.g. 2,4,6).
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    /// State-flip probability for the two-stage family.
    #[arg(long, default_value_t = 0.5)]
    flip_prob: f64,
    /// Simplex grid pitch for the symmetric search (static family).
    #[arg(long, default_value_t = DEFAULT_GRID_PITCH)]
    pitch: usize,
    /// Candidate budget for enumerative searches.
    #[arg(long, default_value_t = SEARCH_BUDGET, value_parser = parse_count)]
    budget: u64,
    /// Term budget for each exact evaluation.
    #[arg(long, default_value_t = EXACT_TERM_BUDGET, value_parser = parse_count)]
    eval_budget: u64,
    /// Cross-entropy population size (dynamic family).
    #[arg(long, default_value_t = 64)]
    population: usize,
    /// Cross-entropy elite count (dynamic family).
    #[arg(long, default_value_t = 8)]
    elites: usize,
    /// Cross-entropy iterations (dynamic family).
    #[arg(long, default_value_t = 40)]
    iterations: usize,
}

#[derive(Args)]
struct LimitArgs {
    /// Bundled team family (static only).
    #[arg(long, value_enum, default_value_t = Family::MeanMatch)]
    family: Family,
    /// Team sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    /// How many trailing rows feed the limsup proxy.
    #[arg(long, default_value_t = 3)]
    tail_window: usize,
    /// Probability of action 1 under the shared kernel.
    #[arg(long, default_value_t = 0.5)]
    kernel_p: f64,
    /// Term budget for each exact evaluation.
    #[arg(long, default_value_t = EXACT_TERM_BUDGET, value_parser = parse_count)]
    budget: u64,
}

#[derive(Args)]
struct DfAuditArgs {
    /// Number of seeded random mixtures to audit.
    #[arg(long, default_value = "100", value_parser = parse_count)]
    seeds: u64,
    /// Largest team size to draw.
    #[arg(long, default_value_t = 5)]
    max_n: usize,
    /// Mixture atoms per drawn instance.
    #[arg(long, default_value_t = 2)]
    atoms: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let TeamError::Budget(_) = err {
                eprintln!("hint: exact enumeration too large — retry with `--mode mc --samples 1e6`, or shrink N / the grid pitch");
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let threads = resolve_threads(cli.global.threads)?;
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| TeamError::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.global.out_dir)
        .map_err(|e| TeamError::Io(format!("{}: {e}", cli.global.out_dir.display())))?;
    match &cli.command {
        Command::Evaluate(args) => cmd_evaluate(&cli.global, args),
        Command::Optimize(args) => cmd_optimize(&cli.global, args),
        Command::Scaling(args) => match &args.variant {
            ScalingVariant::Gap(gap) => cmd_scaling_gap(&cli.global, gap),
            ScalingVariant::Limit(limit) => cmd_scaling_limit(&cli.global, limit),
            ScalingVariant::DfAudit(audit) => cmd_scaling_df_audit(&cli.global, audit),
        },
    }
}

/// `--threads` wins; EXTEAM_THREADS is the fallback; unset means "let the
/// pool pick". An unparsable env var is a config error, not a silent
/// default.
fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("EXTEAM_THREADS") {
        Ok(text) => text
            .parse::<usize>()
            .map(Some)
            .map_err(|_| TeamError::Config(format!("EXTEAM_THREADS: `{text}` is not a number"))),
        Err(_) => Ok(None),
    }
}

/// Shared manifest scaffolding: command echo with resolved global flags.
fn manifest_for(global: &GlobalOpts, command_echo: String) -> RunManifest {
    let mut m = RunManifest::new(command_echo, env!("CARGO_PKG_VERSION"));
    m.seed = Some(global.seed);
    m.threads = Some(rayon::current_num_threads());
    m
}

fn write_artifact(out_dir: &Path, name: &str, contents: &str, manifest: &mut RunManifest) -> Result<()> {
    let path = out_dir.join(name);
    std::fs::write(&path, contents).map_err(|e| TeamError::Io(format!("{}: {e}", path.display())))?;
    manifest.record_output(name);
    println!("wrote {}", path.display());
    Ok(())
}

/// The manifest lists itself as the final artifact so that everything on
/// disk after a run is accounted for.
fn finish_manifest(out_dir: &Path, mut manifest: RunManifest) -> Result<()> {
    manifest.record_output("manifest.json");
    let path = out_dir.join("manifest.json");
    std::fs::write(&path, manifest.to_json_string()?)
        .map_err(|e| TeamError::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| TeamError::Io(format!("{}: {e}", path.display())))
}

fn cmd_evaluate(global: &GlobalOpts, args: &EvaluateArgs) -> Result<()> {
    let team_text = read_to_string(&args.team)?;
    let loaded = exteam_core::config::parse_team(&team_text)?;
    let policy = load_mixture(&args.policy)?;
    let opts = McOptions::new(args.samples, global.seed).with_chunk_size(global.chunk_size);

    let estimate: CostEstimate = match (&loaded, args.mode) {
        (LoadedTeam::Static(team), EvalMode::Exact) => {
            expected_cost_static_exact(team, &policy, args.budget)?
        }
        (LoadedTeam::Static(team), EvalMode::Mc) => expected_cost_static_mc(team, &policy, &opts)?,
        (LoadedTeam::Static(_), EvalMode::ReducedExact | EvalMode::ReducedMc) => {
            return Err(TeamError::Config(
                "reduced evaluation needs a dynamic team document with a `reduction` block".into(),
            ));
        }
        (LoadedTeam::Dynamic { team, .. }, EvalMode::Exact) => {
            expected_cost_dynamic_exact(team, &policy, args.budget)?
        }
        (LoadedTeam::Dynamic { team, .. }, EvalMode::Mc) => {
            expected_cost_dynamic_mc(team, &policy, &opts)?
        }
        (LoadedTeam::Dynamic { team, reduction }, EvalMode::ReducedExact) => {
            let red = reduction.as_ref().ok_or_else(|| {
                TeamError::Config("team document has no `reduction` block".into())
            })?;
            expected_cost_reduced_exact(team, red, &policy, args.budget)?
        }
        (LoadedTeam::Dynamic { team, reduction }, EvalMode::ReducedMc) => {
            let red = reduction.as_ref().ok_or_else(|| {
                TeamError::Config("team document has no `reduction` block".into())
            })?;
            expected_cost_reduced_mc(team, red, &policy, &opts)?
        }
    };

    let echo = format!(
        "evaluate --team {} --policy {} --mode {} --samples {} --budget {} --seed {} --chunk-size {} --out-dir {}",
        args.team.display(),
        args.policy.display(),
        args.mode.name(),
        args.samples,
        args.budget,
        global.seed,
        global.chunk_size,
        global.out_dir.display(),
    );
    let mut manifest = manifest_for(global, echo);
    manifest.config_hash = config_hash(&team_text)?;
    manifest.record_extra("policy_hash", config_hash(&read_to_string(&args.policy)?)?);
    manifest.record_extra("value", format!("{}", estimate.value));
    manifest.record_extra("std_error", format!("{}", estimate.std_error));

    let csv = format!("{}\n{}\n", CostEstimate::csv_header(), estimate.csv_row());
    println!(
        "value {} std_error {} ({})",
        estimate.value,
        estimate.std_error,
        args.mode.name()
    );
    write_artifact(&global.out_dir, "estimate.csv", &csv, &mut manifest)?;
    finish_manifest(&global.out_dir, manifest)
}

fn opt_result_csv(result: &OptResult) -> String {
    format!(
        "method,best_value,evaluations,restarts\n{},{},{},{}\n",
        result.method, result.best_value, result.evaluations, result.restarts
    )
}

fn cmd_optimize(global: &GlobalOpts, args: &OptimizeArgs) -> Result<()> {
    let team_text = read_to_string(&args.team)?;
    let loaded = exteam_core::config::parse_team(&team_text)?;

    let mut elite_trace: Option<Vec<f64>> = None;
    let result = match (&loaded, args.class) {
        (LoadedTeam::Static(team), PolicyClass::Dirac) => brute_force_dirac(team, args.budget)?,
        (LoadedTeam::Dynamic { team, .. }, PolicyClass::Dirac) => {
            brute_force_dirac_dynamic(team, args.budget, args.eval_budget)?
        }
        (LoadedTeam::Static(team), PolicyClass::Prsym) => {
            let search = if args.gradient {
                SymmetricSearch::ProjectedGradient {
                    restarts: args.restarts,
                    seed: global.seed,
                }
            } else {
                SymmetricSearch::Grid { pitch: args.pitch }
            };
            optimize_symmetric_kernel(team, search, args.budget)?
        }
        (LoadedTeam::Dynamic { .. }, PolicyClass::Prsym) => {
            return Err(TeamError::Config(
                "prsym searches static documents; use --class dynamic for multi-stage teams".into(),
            ));
        }
        (LoadedTeam::Static(team), PolicyClass::Product) => {
            optimize_product_grid(team, args.pitch, args.budget)?
        }
        (LoadedTeam::Dynamic { .. }, PolicyClass::Product) => {
            return Err(TeamError::Config(
                "product grids search static documents; use --class dynamic for multi-stage teams"
                    .into(),
            ));
        }
        (loaded, PolicyClass::Dynamic) => {
            let wrapped;
            let team: &DynamicTeam = match loaded {
                LoadedTeam::Dynamic { team, .. } => team,
                LoadedTeam::Static(static_team) => {
                    wrapped = DynamicTeam::from_static(static_team)?;
                    &wrapped
                }
            };
            let ce = CeOptions {
                population: args.population,
                elites: args.elites,
                iterations: args.iterations,
                smoothing: args.smoothing,
                seed: global.seed,
                eval_budget: args.eval_budget,
                ..CeOptions::default()
            };
            let ce_result = optimize_symmetric_dynamic(team, &ce)?;
            elite_trace = Some(ce_result.elite_trace);
            ce_result.result
        }
    };

    let echo = format!(
        "optimize --team {} --class {} --pitch {} --gradient {} --restarts {} --budget {} --eval-budget {} --population {} --elites {} --iterations {} --smoothing {} --seed {} --out-dir {}",
        args.team.display(),
        args.class.name(),
        args.pitch,
        args.gradient,
        args.restarts,
        args.budget,
        args.eval_budget,
        args.population,
        args.elites,
        args.iterations,
        args.smoothing,
        global.seed,
        global.out_dir.display(),
    );
    let mut manifest = manifest_for(global, echo);
    manifest.config_hash = config_hash(&team_text)?;
    manifest.record_extra("best_value", format!("{}", result.best_value));
    manifest.record_extra("method", result.method.to_string());
    manifest.record_extra("evaluations", result.evaluations.to_string());

    println!(
        "best value {} via {} after {} evaluations",
        result.best_value, result.method, result.evaluations
    );
    write_artifact(&global.out_dir, "opt_result.csv", &opt_result_csv(&result), &mut manifest)?;
    write_artifact(
        &global.out_dir,
        "optimum.json",
        &result.best_policy.to_json()?,
        &mut manifest,
    )?;
    if let Some(trace) = elite_trace {
        let mut csv = String::from("iteration,elite_mean\n");
        for (i, v) in trace.iter().enumerate() {
            let _ = writeln!(csv, "{i},{v}");
        }
        write_artifact(&global.out_dir, "elite_trace.csv", &csv, &mut manifest)?;
    }
    finish_manifest(&global.out_dir, manifest)
}

fn cmd_scaling_gap(global: &GlobalOpts, args: &GapArgs) -> Result<()> {
    let curve: GapCurve = match args.family {
        Family::MeanMatch => gap_curve(
            |n| Ok(StaticTeam::mean_match(n)),
            &args.n_list,
            SymmetricSearch::Grid { pitch: args.pitch },
            args.budget,
        )?,
        Family::TwoStageFlip => {
            let ce = CeOptions {
                population: args.population,
                elites: args.elites,
                iterations: args.iterations,
                seed: global.seed,
                eval_budget: args.eval_budget,
                ..CeOptions::default()
            };
            gap_curve_dynamic(
                |n| two_stage_flip_team(n, args.flip_prob),
                &args.n_list,
                &ce,
                args.budget,
                args.eval_budget,
            )?
        }
    };

    let echo = format!(
        "scaling gap --family {} --n-list {} --flip-prob {} --pitch {} --budget {} --eval-budget {} --population {} --elites {} --iterations {} --seed {} --out-dir {}",
        args.family.name(),
        join_usizes(&args.n_list),
        args.flip_prob,
        args.pitch,
        args.budget,
        args.eval_budget,
        args.population,
        args.elites,
        args.iterations,
        global.seed,
        global.out_dir.display(),
    );
    let mut manifest = manifest_for(global, echo);
    if let Some(last) = curve.rows.last() {
        manifest.record_extra("final_eps", format!("{}", last.eps));
    }
    println!(
        "gap curve over {} team sizes ({} family)",
        curve.rows.len(),
        args.family.name()
    );
    write_artifact(&global.out_dir, "gap_curve.csv", &curve.to_csv(), &mut manifest)?;
    finish_manifest(&global.out_dir, manifest)
}

fn cmd_scaling_limit(global: &GlobalOpts, args: &LimitArgs) -> Result<()> {
    if args.family != Family::MeanMatch {
        return Err(TeamError::Config(
            "limit curves need a static family (--family mean-match)".into(),
        ));
    }
    let kernel = bernoulli_kernel(args.kernel_p)?;
    let estimate = limit_cost_estimate(
        |n| Ok(StaticTeam::mean_match(n)),
        &kernel,
        &args.n_list,
        args.tail_window,
        args.budget,
    )?;

    let echo = format!(
        "scaling limit --family {} --n-list {} --tail-window {} --kernel-p {} --budget {} --seed {} --out-dir {}",
        args.family.name(),
        join_usizes(&args.n_list),
        args.tail_window,
        args.kernel_p,
        args.budget,
        global.seed,
        global.out_dir.display(),
    );
    let mut manifest = manifest_for(global, echo);
    manifest.record_extra("limsup_proxy", format!("{}", estimate.limsup_proxy));
    manifest.record_extra("monotone", estimate.monotone.to_string());
    println!(
        "limsup proxy {} over a tail window of {} (monotone: {})",
        estimate.limsup_proxy, estimate.tail_window, estimate.monotone
    );
    write_artifact(&global.out_dir, "limit.csv", &estimate.to_csv(), &mut manifest)?;
    finish_manifest(&global.out_dir, manifest)
}

fn cmd_scaling_df_audit(global: &GlobalOpts, args: &DfAuditArgs) -> Result<()> {
    use rand::{Rng, SeedableRng};
    if args.max_n < 2 {
        return Err(TeamError::Config("df-audit: --max-n must be ≥ 2".into()));
    }
    let mut audits = Vec::with_capacity(args.seeds as usize);
    let mut violations = 0usize;
    for i in 0..args.seeds {
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(global.seed.wrapping_add(i));
        let n = rng.gen_range(2..=args.max_n);
        let m = rng.gen_range(1..=n);
        let shape = KernelShape {
            stages: 1,
            obs: 2,
            actions: 2,
        };
        let mixture =
            exteam_core::policy::symmetrize(&random_dirac_mixture(&mut rng, shape, n, args.atoms)?)?;
        let audit = df_bound_audit(&mixture, m)?;
        if audit.slack < -1e-12 {
            violations += 1;
        }
        audits.push(audit);
    }

    let echo = format!(
        "scaling df-audit --seeds {} --max-n {} --atoms {} --seed {} --out-dir {}",
        args.seeds,
        args.max_n,
        args.atoms,
        global.seed,
        global.out_dir.display(),
    );
    let mut manifest = manifest_for(global, echo);
    manifest.record_extra("audits", args.seeds.to_string());
    manifest.record_extra("violations", violations.to_string());
    println!("{violations} bound violations in {} audits", args.seeds);
    write_artifact(&global.out_dir, "df_audit.csv", &df_audit_csv(&audits), &mut manifest)?;
    finish_manifest(&global.out_dir, manifest)
}

fn join_usizes(list: &[usize]) -> String {
    list.iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
