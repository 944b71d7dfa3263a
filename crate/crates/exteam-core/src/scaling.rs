//! Scaling experiments: how the price of restricting a team to symmetric
//! independently-randomized policies behaves as the team grows.
//!
//! The module provides
//! * gap curves — J_sym(N), J_det(N) and their difference ε_N per team
//!   size, with closed forms for the bundled reference families frozen in
//!   the tests;
//! * large-N limit estimates for a fixed symmetric kernel, reporting a
//!   limsup proxy over a tail window and a monotonicity flag;
//! * audits of the finite-exchangeability marginal bound: the total
//!   variation between the with-replacement extension and the true
//!   m-marginal never exceeds m(m−1)/(2N);
//! * seeded random generators for teams and mixtures used by the
//!   randomized checks;
//! * the bundled two-stage flip family used by the dynamic experiments.
//!
//! All CSV output is deterministic except for the wall-clock column of
//! gap curves, which reproducibility checks are expected to mask.

use std::time::Instant;

use rand::distributions::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;

use crate::error::{Result, TeamError};
use crate::eval::expected_cost_static_exact;
use crate::opt::{
    brute_force_dirac_dynamic, optimize_symmetric_dynamic, CeOptions, SymmetricSearch,
};
use crate::policy::{
    df_extend_marginal, mixture_tv, restrict, DeterministicPolicy, KernelShape, Mixture,
    PolicyProfile, RelaxedKernel,
};
use crate::space::FiniteSpace;
use crate::team::{DynamicTeam, NoiseSpec, StageCost, StaticTeam};

// ── Gap curves ───────────────────────────────────────────────────────────

/// One row of a gap curve.
#[derive(Debug, Clone)]
pub struct GapRow {
    pub n: usize,
    pub j_sym: f64,
    pub j_det: f64,
    pub eps: f64,
    /// Wall-clock seconds spent on this row — the only nondeterministic
    /// column.
    pub runtime_s: f64,
}

/// ε_N per team size, with the optima that produced it.
#[derive(Debug, Clone)]
pub struct GapCurve {
    pub rows: Vec<GapRow>,
}

impl GapCurve {
    pub const CSV_HEADER: &'static str = "n,j_sym,j_det,eps,runtime_s";

    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                row.n, row.j_sym, row.j_det, row.eps, row.runtime_s
            ));
        }
        out
    }
}

fn check_n_list(n_list: &[usize]) -> Result<()> {
    if n_list.is_empty() {
        return Err(TeamError::Config("n list must be nonempty".into()));
    }
    if let Some(&bad) = n_list.iter().find(|&&n| n == 0) {
        return Err(TeamError::Config(format!("n list entry {bad} must be ≥ 1")));
    }
    Ok(())
}

/// Gap curve for a static family: per N, the best deterministic profile
/// (brute force) against the best symmetric i.i.d. kernel.
pub fn gap_curve<F>(
    family: F,
    n_list: &[usize],
    search: SymmetricSearch,
    budget: u64,
) -> Result<GapCurve>
where
    F: Fn(usize) -> Result<StaticTeam>,
{
    check_n_list(n_list)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let start = Instant::now();
        let team = family(n)?;
        let gap = crate::opt::symmetric_gap(&team, search, budget)?;
        rows.push(GapRow {
            n,
            j_sym: gap.symmetric.best_value,
            j_det: gap.dirac.best_value,
            eps: gap.eps,
            runtime_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(GapCurve { rows })
}

/// Gap curve for a dynamic family: brute force over deterministic
/// profiles against cross-entropy over symmetric kernels. The gap is
/// clamped at zero exactly as in the static case; a symmetric "optimum"
/// below the deterministic one by more than rounding is impossible
/// because every mixture cost is an average of deterministic-profile
/// costs.
pub fn gap_curve_dynamic<F>(
    family: F,
    n_list: &[usize],
    ce: &CeOptions,
    budget: u64,
    eval_budget: u64,
) -> Result<GapCurve>
where
    F: Fn(usize) -> Result<DynamicTeam>,
{
    check_n_list(n_list)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let start = Instant::now();
        let team = family(n)?;
        let det = brute_force_dirac_dynamic(&team, budget, eval_budget)?;
        let sym = optimize_symmetric_dynamic(&team, ce)?;
        let raw = sym.result.best_value - det.best_value;
        if raw < -crate::opt::GAP_TOL {
            return Err(TeamError::NonFinite(format!(
                "gap: symmetric optimum beats the deterministic optimum by {} — impossible",
                -raw
            )));
        }
        rows.push(GapRow {
            n,
            j_sym: sym.result.best_value,
            j_det: det.best_value,
            eps: raw.max(0.0),
            runtime_s: start.elapsed().as_secs_f64(),
        });
    }
    Ok(GapCurve { rows })
}

// ── Large-N limit estimates ──────────────────────────────────────────────

/// J_N along a team-size list for a fixed symmetric kernel.
#[derive(Debug, Clone)]
pub struct LimitEstimate {
    pub rows: Vec<(usize, f64)>,
    /// Maximum of the last `tail_window` values — a conservative stand-in
    /// for the limsuperior of the sequence.
    pub limsup_proxy: f64,
    /// Whether the sequence is non-increasing along the given list
    /// (within 1e-12).
    pub monotone: bool,
    pub tail_window: usize,
}

impl LimitEstimate {
    pub const CSV_HEADER: &'static str = "n,j_n";

    #[must_use]
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (n, v) in &self.rows {
            out.push_str(&format!("{n},{v}\n"));
        }
        out
    }
}

/// Evaluates one symmetric kernel across team sizes and summarizes the
/// tail behaviour. The kernel is reused verbatim for every N, so the
/// family must keep its observation and action spaces fixed.
pub fn limit_cost_estimate<F>(
    family: F,
    kernel: &RelaxedKernel,
    n_list: &[usize],
    tail_window: usize,
    budget: u64,
) -> Result<LimitEstimate>
where
    F: Fn(usize) -> Result<StaticTeam>,
{
    check_n_list(n_list)?;
    if tail_window == 0 || tail_window > n_list.len() {
        return Err(TeamError::Config(format!(
            "tail window {} must be in 1..={}",
            tail_window,
            n_list.len()
        )));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let team = family(n)?;
        let mixture = Mixture::symmetric_iid(kernel.clone(), n)?;
        let value = expected_cost_static_exact(&team, &mixture, budget)?.value;
        rows.push((n, value));
    }
    let limsup_proxy = rows[rows.len() - tail_window..]
        .iter()
        .map(|&(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let monotone = rows.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-12);
    Ok(LimitEstimate {
        rows,
        limsup_proxy,
        monotone,
        tail_window,
    })
}

// ── Finite-exchangeability marginal audits ───────────────────────────────

/// One audit of the with-replacement extension against the true marginal.
#[derive(Debug, Clone)]
pub struct DfAudit {
    pub n: usize,
    pub m: usize,
    pub tv: f64,
    /// m(m−1)/(2N).
    pub bound: f64,
    /// bound − tv; a violation would be negative beyond rounding.
    pub slack: f64,
}

/// Compares the m-DM law obtained by sampling indices with replacement
/// against the true m-marginal of an exchangeable mixture. For
/// exchangeable inputs the total variation obeys tv ≤ m(m−1)/(2N).
pub fn df_bound_audit(mixture: &Mixture, m: usize) -> Result<DfAudit> {
    let n = mixture.num_dms();
    let extended = df_extend_marginal(mixture, m)?;
    let restricted = restrict(mixture, m)?;
    let tv = mixture_tv(&extended, &restricted)?;
    let bound = (m * (m - 1)) as f64 / (2.0 * n as f64);
    Ok(DfAudit {
        n,
        m,
        tv,
        bound,
        slack: bound - tv,
    })
}

/// CSV rows for a batch of audits.
#[must_use]
pub fn df_audit_csv(audits: &[DfAudit]) -> String {
    let mut out = String::from("n,m,tv,bound,slack\n");
    for a in audits {
        out.push_str(&format!("{},{},{},{},{}\n", a.n, a.m, a.tv, a.bound, a.slack));
    }
    out
}

// ── Bundled reference families ───────────────────────────────────────────

/// Closed-form optimum of the mean-matching team over symmetric i.i.d.
/// kernels: ¼ for a single DM (the objective is constant), 1/(4N)
/// otherwise.
#[must_use]
pub fn matching_symmetric_value(n: usize) -> f64 {
    if n == 1 {
        0.25
    } else {
        1.0 / (4.0 * n as f64)
    }
}

/// Closed-form optimum of the mean-matching team over deterministic
/// profiles: 0 for even N (an exact half-split matches the mean), else
/// 1/(4N²).
#[must_use]
pub fn matching_deterministic_value(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        0.0
    } else {
        1.0 / (4.0 * (n * n) as f64)
    }
}

/// ε_N of the mean-matching team.
#[must_use]
pub fn matching_excess(n: usize) -> f64 {
    matching_symmetric_value(n) - matching_deterministic_value(n)
}

/// Bundled two-stage family: binary local states with x' = x ⊕ u ⊕ w,
/// full state observation, uniform initial states, flip probability on
/// the dynamics noise, and stage cost (ū_t − ½)². Closed forms mirror the
/// static matching team with both stages contributing:
/// J_sym(N) = 1/(2N) for N ≥ 2 (1/2 for N = 1), J_det(N) = 0 for even N
/// and 1/(2N²) for odd N — the flip probability never enters because the
/// cost reads only the action mean.
pub fn two_stage_flip_team(n: usize, flip_prob: f64) -> Result<DynamicTeam> {
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(TeamError::Config(format!(
            "flip probability {flip_prob} must lie in [0, 1]"
        )));
    }
    let states = FiniteSpace::with_values(vec!["x0", "x1"], vec![0.0, 1.0])?;
    let obs = FiniteSpace::new(vec!["y0", "y1"])?;
    let dynamics_table = vec![
        vec![
            vec![vec![0, 1], vec![1, 0]],
            vec![vec![1, 0], vec![0, 1]],
        ];
        2
    ];
    let obs_table = vec![vec![vec![0], vec![1]]; 2];
    DynamicTeam::from_tables(
        FiniteSpace::singleton("w"),
        vec![1.0],
        states,
        obs,
        FiniteSpace::binary_actions(),
        vec![vec![0.5, 0.5]],
        NoiseSpec::new(
            FiniteSpace::new(vec!["stay", "flip"])?,
            vec![1.0 - flip_prob, flip_prob],
        )?,
        NoiseSpec::trivial(),
        2,
        dynamics_table,
        obs_table,
        StageCost::mean_tracking(0.5, 1),
        n,
    )
}

/// Closed-form symmetric optimum of [`two_stage_flip_team`].
#[must_use]
pub fn two_stage_symmetric_value(n: usize) -> f64 {
    2.0 * matching_symmetric_value(n)
}

/// Closed-form deterministic optimum of [`two_stage_flip_team`].
#[must_use]
pub fn two_stage_deterministic_value(n: usize) -> f64 {
    2.0 * matching_deterministic_value(n)
}

// ── Random instances ─────────────────────────────────────────────────────

/// A strictly positive probability row with rounding absorbed into the
/// largest entry, so it passes exact row-sum validation.
pub fn random_probability_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let gamma = Gamma::new(1.0, 1.0).expect("valid shape");
    let mut row: Vec<f64> = (0..len).map(|_| gamma.sample(rng) + 1e-3).collect();
    let sum: f64 = row.iter().sum();
    for x in row.iter_mut() {
        *x /= sum;
    }
    let err: f64 = 1.0 - row.iter().sum::<f64>();
    let imax = row
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
        .map(|(i, _)| i)
        .expect("nonempty row");
    row[imax] += err;
    row
}

/// Equally spaced action embedding on [0, 1].
fn embedded_actions(count: usize) -> Result<FiniteSpace> {
    let labels: Vec<String> = (0..count).map(|u| format!("u{u}")).collect();
    let values: Vec<f64> = (0..count)
        .map(|u| {
            if count == 1 {
                0.0
            } else {
                u as f64 / (count - 1) as f64
            }
        })
        .collect();
    FiniteSpace::with_values(labels, values)
}

/// A random static team with small spaces (up to 3 ω₀ atoms and
/// observations, 2–3 actions) and a random bounded cost table.
pub fn random_static_team(rng: &mut ChaCha8Rng, n: usize) -> Result<StaticTeam> {
    let omega_count = rng.gen_range(1..=3);
    let obs_count = rng.gen_range(1..=3);
    let act_count = rng.gen_range(2..=3);
    let omega0 = FiniteSpace::new((0..omega_count).map(|i| format!("w{i}")).collect::<Vec<_>>())?;
    let obs = FiniteSpace::new((0..obs_count).map(|i| format!("y{i}")).collect::<Vec<_>>())?;
    let actions = embedded_actions(act_count)?;
    let prior = random_probability_row(rng, omega_count);
    let obs_kernel: Vec<Vec<f64>> = (0..omega_count)
        .map(|_| random_probability_row(rng, obs_count))
        .collect();
    let cost_table: Vec<Vec<f64>> = (0..omega_count)
        .map(|_| (0..act_count).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    StaticTeam::new(
        omega0,
        prior,
        obs,
        actions,
        obs_kernel,
        StageCost::StaticTable(cost_table),
        n,
    )
}

/// A random kernel of the given shape with strictly positive rows.
pub fn random_kernel(rng: &mut ChaCha8Rng, shape: KernelShape) -> Result<RelaxedKernel> {
    let stages: Vec<Vec<Vec<f64>>> = (0..shape.stages)
        .map(|_| {
            (0..shape.obs)
                .map(|_| random_probability_row(rng, shape.actions))
                .collect()
        })
        .collect();
    RelaxedKernel::new(stages)
}

/// A random mixture of independently drawn kernel profiles.
pub fn random_profile_mixture(
    rng: &mut ChaCha8Rng,
    shape: KernelShape,
    n: usize,
    atoms: usize,
) -> Result<Mixture> {
    if atoms == 0 {
        return Err(TeamError::Config("mixture needs at least one atom".into()));
    }
    let weights = random_probability_row(rng, atoms);
    let mut support = Vec::with_capacity(atoms);
    for w in weights {
        let kernels: Result<Vec<RelaxedKernel>> =
            (0..n).map(|_| random_kernel(rng, shape)).collect();
        support.push((w, PolicyProfile::new(kernels?)?));
    }
    Mixture::new(crate::policy::ClassTag::General, support)
}

/// A random mixture of deterministic profiles.
pub fn random_dirac_mixture(
    rng: &mut ChaCha8Rng,
    shape: KernelShape,
    n: usize,
    atoms: usize,
) -> Result<Mixture> {
    if atoms == 0 {
        return Err(TeamError::Config("mixture needs at least one atom".into()));
    }
    let weights = random_probability_row(rng, atoms);
    let mut support = Vec::with_capacity(atoms);
    for w in weights {
        let kernels: Result<Vec<RelaxedKernel>> = (0..n)
            .map(|_| {
                let table: Vec<Vec<usize>> = (0..shape.stages)
                    .map(|_| {
                        (0..shape.obs)
                            .map(|_| rng.gen_range(0..shape.actions))
                            .collect()
                    })
                    .collect();
                let det = DeterministicPolicy::new(table, shape.actions)?;
                Ok(RelaxedKernel::from_deterministic(&det, shape.actions))
            })
            .collect();
        support.push((w, PolicyProfile::new(kernels?)?));
    }
    Mixture::new(crate::policy::ClassTag::General, support)
}

/// A random two-stage dynamic team with binary states and actions and
/// small noise alphabets, random tabular dynamics/observations and a
/// random bounded stage-cost table.
pub fn random_dynamic_team(rng: &mut ChaCha8Rng, n: usize) -> Result<DynamicTeam> {
    let horizon = 2;
    let state_count = 2;
    let obs_count = rng.gen_range(2..=3);
    let act_count = 2;
    let dyn_count = rng.gen_range(1..=2);
    let obs_noise_count = rng.gen_range(2..=3);
    let omega_count = rng.gen_range(1..=2);

    let omega0 = FiniteSpace::new((0..omega_count).map(|i| format!("w{i}")).collect::<Vec<_>>())?;
    let states = FiniteSpace::with_values(vec!["x0", "x1"], vec![0.0, 1.0])?;
    let obs = FiniteSpace::new((0..obs_count).map(|i| format!("y{i}")).collect::<Vec<_>>())?;
    let actions = embedded_actions(act_count)?;
    let init_kernel: Vec<Vec<f64>> = (0..omega_count)
        .map(|_| random_probability_row(rng, state_count))
        .collect();
    let dyn_noise = NoiseSpec::new(
        FiniteSpace::new((0..dyn_count).map(|i| format!("d{i}")).collect::<Vec<_>>())?,
        random_probability_row(rng, dyn_count),
    )?;
    let obs_noise = NoiseSpec::new(
        FiniteSpace::new((0..obs_noise_count).map(|i| format!("v{i}")).collect::<Vec<_>>())?,
        random_probability_row(rng, obs_noise_count),
    )?;
    let dynamics_table: Vec<Vec<Vec<Vec<usize>>>> = (0..horizon)
        .map(|_| {
            (0..state_count)
                .map(|_| {
                    (0..act_count)
                        .map(|_| {
                            (0..dyn_count)
                                .map(|_| rng.gen_range(0..state_count))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let obs_table: Vec<Vec<Vec<usize>>> = (0..horizon)
        .map(|_| {
            (0..state_count)
                .map(|_| {
                    (0..obs_noise_count)
                        .map(|_| rng.gen_range(0..obs_count))
                        .collect()
                })
                .collect()
        })
        .collect();
    let cost_table: Vec<Vec<Vec<f64>>> = (0..omega_count)
        .map(|_| {
            (0..state_count)
                .map(|_| (0..act_count).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect()
        })
        .collect();
    DynamicTeam::from_tables(
        omega0,
        random_probability_row(rng, omega_count),
        states,
        obs,
        actions,
        init_kernel,
        dyn_noise,
        obs_noise,
        horizon,
        dynamics_table,
        obs_table,
        StageCost::DynamicTable(cost_table),
        n,
    )
}
