//! Acceptance suite: ten end-to-end checks covering reference values,
//! scaling behaviour, invariance properties, bound audits, extraction,
//! the measure-change identity, dynamic consistency, and byte-level
//! reproducibility of CLI artifacts.
//!
//! Each check prints `acceptance NN: PASS` when it holds; a failed
//! assertion fails the test (and withholds the line). Every tolerance is
//! pinned next to its assertion.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use exteam_core::eval::{
    expected_cost_dynamic_exact, expected_cost_dynamic_mc, expected_cost_reduced_exact,
    expected_cost_reduced_mc, expected_cost_static_exact, McOptions, EXACT_TERM_BUDGET,
};
use exteam_core::numeric::simplex_grid;
use exteam_core::opt::{
    brute_force_dirac, optimize_product_grid, optimize_symmetric_dynamic,
    optimize_symmetric_kernel, CeOptions, SymmetricSearch, SEARCH_BUDGET,
};
use exteam_core::policy::{
    definetti_extract, symmetrize, CandidateKernels, ClassTag, DeterministicPolicy, KernelShape,
    Mixture, PolicyProfile, RelaxedKernel,
};
use exteam_core::scaling::{
    df_bound_audit, gap_curve_dynamic, random_probability_row, random_profile_mixture,
    two_stage_flip_team,
};
use exteam_core::team::{DynamicTeam, ReductionData, StageCost};
use exteam_core::{FiniteSpace, StaticTeam};

/// Deterministic reference optimum of the bundled mean-matching team:
/// zero for even teams, 1/(4N²) for odd ones.
fn deterministic_reference(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        0.0
    } else {
        1.0 / (4.0 * (n * n) as f64)
    }
}

/// Symmetric-class reference optimum of the same family: 1/(4N), which
/// degenerates to a flat ¼ objective for a single decision maker.
fn symmetric_reference(n: usize) -> f64 {
    1.0 / (4.0 * n as f64)
}

#[test]
fn acceptance_01_reference_optima_for_the_matching_family() {
    let start = Instant::now();
    const TOL: f64 = 1e-6;
    for n in 1..=8 {
        let team = StaticTeam::mean_match(n);
        let det = brute_force_dirac(&team, SEARCH_BUDGET).unwrap();
        assert!(
            (det.best_value - deterministic_reference(n)).abs() <= TOL,
            "N={n}: deterministic optimum {} vs reference {}",
            det.best_value,
            deterministic_reference(n)
        );
        // Grid with 1e-4 spacing on the action probability.
        let grid = optimize_symmetric_kernel(
            &team,
            SymmetricSearch::Grid { pitch: 10_000 },
            SEARCH_BUDGET,
        )
        .unwrap();
        assert!(
            (grid.best_value - symmetric_reference(n)).abs() <= TOL,
            "N={n}: grid optimum {} vs reference {}",
            grid.best_value,
            symmetric_reference(n)
        );
        let descent = optimize_symmetric_kernel(
            &team,
            SymmetricSearch::ProjectedGradient {
                restarts: 4,
                seed: 17,
            },
            SEARCH_BUDGET,
        )
        .unwrap();
        assert!(
            (descent.best_value - symmetric_reference(n)).abs() <= TOL,
            "N={n}: descent optimum {} vs reference {}",
            descent.best_value,
            symmetric_reference(n)
        );
    }
    // The single-DM objective is flat: every action probability prices ¼.
    let team = StaticTeam::mean_match(1);
    for p in [0.0, 0.3, 0.7, 1.0] {
        let kernel = RelaxedKernel::single_stage(vec![vec![1.0 - p, p]]).unwrap();
        let mix = Mixture::symmetric_iid(kernel, 1).unwrap();
        let value = expected_cost_static_exact(&team, &mix, EXACT_TERM_BUDGET)
            .unwrap()
            .value;
        assert!((value - 0.25).abs() <= TOL, "flat objective broken at p={p}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "criterion 1 took {elapsed:.1}s, budget 60s");
    println!("acceptance 01: PASS");
}

#[test]
fn acceptance_02_gap_decays_like_one_over_four_n() {
    let start = Instant::now();
    const TOL: f64 = 1e-4;
    let mut previous = f64::INFINITY;
    for n in (2..=16).step_by(2) {
        let team = StaticTeam::mean_match(n);
        let det = brute_force_dirac(&team, SEARCH_BUDGET).unwrap().best_value;
        let sym = optimize_symmetric_kernel(
            &team,
            SymmetricSearch::Grid { pitch: 10_000 },
            SEARCH_BUDGET,
        )
        .unwrap()
        .best_value;
        let eps = sym - det;
        let scaled = eps * 4.0 * n as f64;
        assert!(
            (scaled - 1.0).abs() <= TOL,
            "N={n}: eps·4N = {scaled}, expected 1"
        );
        assert!(eps < previous, "N={n}: eps {eps} did not decrease");
        previous = eps;
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 120.0, "criterion 2 took {elapsed:.1}s, budget 120s");
    println!("acceptance 02: PASS");
}

/// A random binary-observation team with an exchangeable quadratic cost
/// in the action mean, used by the invariance criteria.
fn random_quadratic_team(rng: &mut ChaCha8Rng, n: usize) -> StaticTeam {
    let omega_count = rng.gen_range(1..=2);
    let omega0 =
        FiniteSpace::new((0..omega_count).map(|i| format!("w{i}")).collect::<Vec<_>>()).unwrap();
    let prior = random_probability_row(rng, omega_count);
    let obs = FiniteSpace::new(vec!["y0", "y1"]).unwrap();
    let actions = FiniteSpace::with_values(vec!["a0", "a1"], vec![0.0, 1.0]).unwrap();
    let obs_kernel = (0..omega_count)
        .map(|_| random_probability_row(rng, 2))
        .collect();
    let cost = StageCost::MeanFieldQuadratic {
        u_self: rng.gen_range(0.0..1.0),
        u_mean: rng.gen_range(0.0..1.0),
        u_track: rng.gen_range(0.0..1.0),
        x_self: 0.0,
        x_mean: 0.0,
        x_track: 0.0,
        target_u: (0..omega_count).map(|_| rng.gen_range(0.0..1.0)).collect(),
        target_x: vec![0.0; omega_count],
    };
    StaticTeam::new(omega0, prior, obs, actions, obs_kernel, cost, n).unwrap()
}

#[test]
fn acceptance_03_symmetrization_preserves_cost_on_random_instances() {
    const TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..200 {
        let n = rng.gen_range(2..=4);
        let team = random_quadratic_team(&mut rng, n);
        let shape = KernelShape {
            stages: 1,
            obs: 2,
            actions: 2,
        };
        let atoms = rng.gen_range(1..=3);
        let mix = random_profile_mixture(&mut rng, shape, n, atoms).unwrap();
        let sym = symmetrize(&mix).unwrap();
        let before = expected_cost_static_exact(&team, &mix, EXACT_TERM_BUDGET)
            .unwrap()
            .value;
        let after = expected_cost_static_exact(&team, &sym, EXACT_TERM_BUDGET)
            .unwrap()
            .value;
        assert!(
            (before - after).abs() <= TOL,
            "case {case}: cost moved from {before} to {after}"
        );
    }
    println!("acceptance 03: PASS");
}

/// Every deterministic table from observations to actions, for one DM.
fn all_policies(obs_count: usize, action_count: usize) -> Vec<DeterministicPolicy> {
    let total = action_count.pow(obs_count as u32);
    (0..total)
        .map(|mut code| {
            let table: Vec<usize> = (0..obs_count)
                .map(|_| {
                    let a = code % action_count;
                    code /= action_count;
                    a
                })
                .collect();
            DeterministicPolicy::new(vec![table], action_count).unwrap()
        })
        .collect()
}

#[test]
fn acceptance_04_no_weighted_recombination_beats_the_deterministic_optimum() {
    const EXACT_TOL: f64 = 1e-12;
    const GRID_TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        // Keep the profile count small enough that a pitch-8 weight grid
        // over whole-team profiles stays enumerable.
        let (n, obs_count) = match case % 5 {
            0 | 1 => (2, 1),
            2 | 3 => (3, 1),
            _ => (2, 2),
        };
        let mut team = random_quadratic_team(&mut rng, n);
        if obs_count == 1 {
            // Collapse the channel: a single uninformative observation.
            team = StaticTeam::new(
                team.omega0().clone(),
                team.prior().to_vec(),
                FiniteSpace::new(vec!["y"]).unwrap(),
                team.actions().clone(),
                vec![vec![1.0]; team.omega0().len()],
                team.cost().clone(),
                n,
            )
            .unwrap();
        }

        let best = brute_force_dirac(&team, SEARCH_BUDGET).unwrap();
        // The optimum survives relabeling-averaging exactly.
        let averaged = symmetrize(&best.best_policy).unwrap();
        let averaged_value = expected_cost_static_exact(&team, &averaged, EXACT_TERM_BUDGET)
            .unwrap()
            .value;
        assert!(
            (averaged_value - best.best_value).abs() <= EXACT_TOL,
            "case {case}: symmetrized optimum {averaged_value} vs {}",
            best.best_value
        );

        // Enumerate every deterministic whole-team profile and its cost.
        let per_dm = all_policies(obs_count, 2);
        let mut profile_costs = Vec::new();
        let mut codes = vec![0usize; n];
        loop {
            let policies: Vec<DeterministicPolicy> =
                codes.iter().map(|&c| per_dm[c].clone()).collect();
            let dirac = Mixture::dirac_from_policies(&policies, 2).unwrap();
            let value = expected_cost_static_exact(&team, &dirac, EXACT_TERM_BUDGET)
                .unwrap()
                .value;
            profile_costs.push(value);
            let mut pos = 0;
            while pos < n {
                codes[pos] += 1;
                if codes[pos] < per_dm.len() {
                    break;
                }
                codes[pos] = 0;
                pos += 1;
            }
            if pos == n {
                break;
            }
        }

        // Sweep the pitch-8 weight grid over those profiles: mixing never
        // beats the best vertex. (Symmetrizing any of these mixtures
        // leaves its cost unchanged, per criterion 3, so the sweep covers
        // the exchangeable recombinations too.)
        let grid = simplex_grid(profile_costs.len(), 8);
        let mut best_mixture = f64::INFINITY;
        for weights in &grid {
            let value: f64 = weights
                .iter()
                .zip(&profile_costs)
                .map(|(w, c)| w * c)
                .sum();
            best_mixture = best_mixture.min(value);
        }
        assert!(
            best_mixture >= best.best_value - GRID_TOL,
            "case {case}: a weighted recombination priced {best_mixture}, below {}",
            best.best_value
        );
    }
    println!("acceptance 04: PASS");
}

#[test]
fn acceptance_05_product_grid_optimum_sits_on_a_vertex() {
    const TOL: f64 = 1e-9;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        // n = 3 only with a collapsed channel, so the pitch-4 product grid
        // stays inside the candidate budget.
        let (n, obs_count) = match case % 3 {
            0 => (2, 2),
            1 => (2, 1),
            _ => (3, 1),
        };
        let mut team = random_quadratic_team(&mut rng, n);
        if obs_count == 1 {
            team = StaticTeam::new(
                team.omega0().clone(),
                team.prior().to_vec(),
                FiniteSpace::new(vec!["y"]).unwrap(),
                team.actions().clone(),
                vec![vec![1.0]; team.omega0().len()],
                team.cost().clone(),
                n,
            )
            .unwrap();
        }
        let dirac = brute_force_dirac(&team, SEARCH_BUDGET).unwrap().best_value;
        let product = optimize_product_grid(&team, 4, SEARCH_BUDGET)
            .unwrap()
            .best_value;
        // The grid contains every deterministic profile (its vertices), so
        // ≤ holds by inclusion; ≥ says randomization cannot help, i.e. the
        // minimum is attained at a vertex.
        assert!(
            product <= dirac + TOL && product >= dirac - TOL,
            "case {case}: product-grid best {product} vs deterministic best {dirac}"
        );
    }
    println!("acceptance 05: PASS");
}

#[test]
fn acceptance_06_sampling_bound_audits_find_no_violations() {
    let start = Instant::now();
    const TOL: f64 = 1e-12;
    let shape = KernelShape {
        stages: 1,
        obs: 2,
        actions: 2,
    };
    for case in 0..1_000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(60_000 + case);
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(1..=n);
        let mixture = symmetrize(
            &exteam_core::scaling::random_dirac_mixture(&mut rng, shape, n, 2).unwrap(),
        )
        .unwrap();
        let audit = df_bound_audit(&mixture, m).unwrap();
        assert!(
            audit.tv <= audit.bound + TOL,
            "case {case}: tv {} exceeds bound {}",
            audit.tv,
            audit.bound
        );
    }

    // The perfectly anti-correlated pair meets the bound with equality.
    let zero = RelaxedKernel::single_stage(vec![vec![1.0, 0.0]]).unwrap();
    let one = RelaxedKernel::single_stage(vec![vec![0.0, 1.0]]).unwrap();
    let pair = Mixture::new(
        ClassTag::Ex,
        vec![
            (
                0.5,
                PolicyProfile::new(vec![zero.clone(), one.clone()]).unwrap(),
            ),
            (0.5, PolicyProfile::new(vec![one, zero]).unwrap()),
        ],
    )
    .unwrap();
    let audit = df_bound_audit(&pair, 2).unwrap();
    assert!(
        audit.slack.abs() < TOL,
        "anti-correlated pair should attain the bound, slack {}",
        audit.slack
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "criterion 6 took {elapsed:.1}s, budget 300s");
    println!("acceptance 06: PASS");
}

#[test]
fn acceptance_07_extraction_certifies_iid_mixtures_and_rejects_antisymmetry() {
    const WEIGHT_TOL: f64 = 1e-6;
    const RESIDUAL_TOL: f64 = 1e-8;
    let k1 = RelaxedKernel::single_stage(vec![vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
    let k2 = RelaxedKernel::single_stage(vec![vec![0.1, 0.9], vec![0.6, 0.4]]).unwrap();
    for (w1, m) in [(0.35, 2), (0.5, 3), (0.2, 4)] {
        let planted = Mixture::new(
            ClassTag::CoSym,
            vec![
                (w1, PolicyProfile::iid(k1.clone(), m).unwrap()),
                (1.0 - w1, PolicyProfile::iid(k2.clone(), m).unwrap()),
            ],
        )
        .unwrap();
        let fit = definetti_extract(
            &planted,
            &CandidateKernels::List(vec![k1.clone(), k2.clone()]),
            RESIDUAL_TOL,
        )
        .unwrap();
        assert!(fit.certified, "m={m}: residual_l2 = {}", fit.residual_l2);
        assert!(fit.residual_l2 <= RESIDUAL_TOL);
        assert!(
            (fit.weights[0] - w1).abs() <= WEIGHT_TOL
                && (fit.weights[1] - (1.0 - w1)).abs() <= WEIGHT_TOL,
            "m={m}: recovered {:?}, planted ({w1}, {})",
            fit.weights,
            1.0 - w1
        );
    }

    let zero = RelaxedKernel::single_stage(vec![vec![1.0, 0.0]]).unwrap();
    let one = RelaxedKernel::single_stage(vec![vec![0.0, 1.0]]).unwrap();
    let pair = Mixture::new(
        ClassTag::Ex,
        vec![
            (
                0.5,
                PolicyProfile::new(vec![zero.clone(), one.clone()]).unwrap(),
            ),
            (0.5, PolicyProfile::new(vec![one, zero]).unwrap()),
        ],
    )
    .unwrap();
    let fit = definetti_extract(&pair, &CandidateKernels::Grid { pitch: 16 }, RESIDUAL_TOL).unwrap();
    assert!(
        !fit.certified && fit.residual_tv > 0.01,
        "anti-correlated pair must not decompose: residual_tv = {}",
        fit.residual_tv
    );
    println!("acceptance 07: PASS");
}

#[test]
fn acceptance_08_measure_change_agrees_with_direct_evaluation() {
    const EXACT_TOL: f64 = 1e-9;
    let mut coverage_hits = 0u32;
    let mut coverage_total = 0u32;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(80_000 + instance);
        let n = 2 + (instance as usize % 2);
        let team = exteam_core::scaling::random_dynamic_team(&mut rng, n).unwrap();
        let shape = KernelShape {
            stages: team.horizon(),
            obs: team.obs().len(),
            actions: team.actions().len(),
        };
        let kernel = exteam_core::scaling::random_kernel(&mut rng, shape).unwrap();
        let mix = Mixture::symmetric_iid(kernel, n).unwrap();
        let reduction = ReductionData::uniform_from(&team).unwrap();

        let direct = expected_cost_dynamic_exact(&team, &mix, EXACT_TERM_BUDGET)
            .unwrap()
            .value;
        let reduced = expected_cost_reduced_exact(&team, &reduction, &mix, EXACT_TERM_BUDGET)
            .unwrap()
            .value;
        assert!(
            (direct - reduced).abs() <= EXACT_TOL,
            "instance {instance}: direct {direct} vs reweighted {reduced}"
        );

        // Sampled comparison across 50 seeds, tolerance four combined
        // standard errors.
        for seed in 0..50u64 {
            let opts = McOptions::new(5_000, seed);
            let d = expected_cost_dynamic_mc(&team, &mix, &opts).unwrap();
            let r = expected_cost_reduced_mc(&team, &reduction, &mix, &opts).unwrap();
            let combined = (d.std_error * d.std_error + r.std_error * r.std_error).sqrt();
            coverage_total += 1;
            if (d.value - r.value).abs() <= 4.0 * combined {
                coverage_hits += 1;
            }
        }
    }
    let rate = f64::from(coverage_hits) / f64::from(coverage_total);
    assert!(
        rate >= 0.95,
        "sampled routes agreed in only {coverage_hits}/{coverage_total} runs"
    );
    println!("acceptance 08: PASS");
}

#[test]
fn acceptance_09_dynamic_solver_is_consistent_with_the_static_one() {
    // Horizon-1 wrapper: the cross-entropy optimum must match the static
    // symmetric optimum.
    const WRAP_TOL: f64 = 1e-3;
    let static_team = StaticTeam::mean_match(2);
    let static_best = optimize_symmetric_kernel(
        &static_team,
        SymmetricSearch::Grid { pitch: 10_000 },
        SEARCH_BUDGET,
    )
    .unwrap()
    .best_value;
    let wrapped = DynamicTeam::from_static(&static_team).unwrap();
    let ce = CeOptions {
        population: 48,
        elites: 8,
        iterations: 30,
        seed: 9,
        ..CeOptions::default()
    };
    let dynamic_best = optimize_symmetric_dynamic(&wrapped, &ce)
        .unwrap()
        .result
        .best_value;
    assert!(
        (dynamic_best - static_best).abs() <= WRAP_TOL,
        "wrapper optimum {dynamic_best} vs static optimum {static_best}"
    );

    // Bundled two-stage family: the gap stays nonnegative and has dropped
    // by the end of the sweep (no rate asserted).
    let ce = CeOptions {
        population: 48,
        elites: 8,
        iterations: 25,
        seed: 9,
        ..CeOptions::default()
    };
    let curve = gap_curve_dynamic(
        |n| two_stage_flip_team(n, 0.5),
        &[2, 3, 4],
        &ce,
        SEARCH_BUDGET,
        EXACT_TERM_BUDGET,
    )
    .unwrap();
    for row in &curve.rows {
        assert!(row.eps >= 0.0, "N={}: eps {} negative", row.n, row.eps);
    }
    let first = curve.rows.first().unwrap().eps;
    let last = curve.rows.last().unwrap().eps;
    assert!(
        last < first,
        "gap did not decay: first {first}, last {last}"
    );
    println!("acceptance 09: PASS");
}

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_exteam"))
        .args(args)
        .output()
        .expect("CLI should spawn")
}

fn read_artifact(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

/// Strips the wall-clock column (the only nondeterministic one) from a
/// gap-curve CSV before byte comparison.
fn mask_runtime(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let mut cols: Vec<&str> = line.split(',').collect();
            cols.pop();
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn acceptance_10_repeated_runs_emit_byte_identical_artifacts() {
    let config_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let team = config_dir.join("mean_match_n2.json");
    let policy = config_dir.join("bernoulli_half_n2.json");

    // Monte-Carlo evaluation: same seed and chunking, twice.
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let out = run_cli(&[
            "--seed",
            "7",
            "--chunk-size",
            "4096",
            "--out-dir",
            dir.path().to_str().unwrap(),
            "evaluate",
            "--team",
            team.to_str().unwrap(),
            "--policy",
            policy.to_str().unwrap(),
            "--mode",
            "mc",
            "--samples",
            "200000",
        ]);
        assert!(out.status.success(), "evaluate failed: {out:?}");
    }
    let first = read_artifact(dirs[0].path(), "estimate.csv");
    let second = read_artifact(dirs[1].path(), "estimate.csv");
    assert_eq!(first, second, "MC estimates differ between identical runs");

    // Gap curve: identical up to the wall-clock column.
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let out = run_cli(&[
            "--out-dir",
            dir.path().to_str().unwrap(),
            "scaling",
            "gap",
            "--family",
            "mean-match",
            "--n-list",
            "2,4,6",
        ]);
        assert!(out.status.success(), "scaling gap failed: {out:?}");
    }
    let first = mask_runtime(&read_artifact(dirs[0].path(), "gap_curve.csv"));
    let second = mask_runtime(&read_artifact(dirs[1].path(), "gap_curve.csv"));
    assert_eq!(first, second, "gap curves differ between identical runs");

    // Seeded audit tables and cross-entropy traces are fully byte-stable.
    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let out = run_cli(&[
            "--seed",
            "11",
            "--out-dir",
            dir.path().to_str().unwrap(),
            "scaling",
            "df-audit",
            "--seeds",
            "40",
        ]);
        assert!(out.status.success(), "df-audit failed: {out:?}");
    }
    assert_eq!(
        read_artifact(dirs[0].path(), "df_audit.csv"),
        read_artifact(dirs[1].path(), "df_audit.csv"),
        "audit tables differ between identical runs"
    );

    let dirs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        let out = run_cli(&[
            "--seed",
            "3",
            "--out-dir",
            dir.path().to_str().unwrap(),
            "optimize",
            "--team",
            team.to_str().unwrap(),
            "--class",
            "dynamic",
            "--population",
            "24",
            "--elites",
            "6",
            "--iterations",
            "10",
        ]);
        assert!(out.status.success(), "optimize failed: {out:?}");
    }
    for name in ["opt_result.csv", "elite_trace.csv", "optimum.json"] {
        assert_eq!(
            read_artifact(dirs[0].path(), name),
            read_artifact(dirs[1].path(), name),
            "{name} differs between identical runs"
        );
    }
    println!("acceptance 10: PASS");
}
