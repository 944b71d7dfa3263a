//! Exact and Monte-Carlo evaluation of expected team cost.
//!
//! Three evaluation routes share one integrand — the per-DM-averaged
//! mean-field cost:
//!
//! * **exact** — full enumeration of the discrete probability tree
//!   (support atom × ω₀ × per-DM branches), with an early budget check.
//!   Single-atom i.i.d. profiles take a fast path: given ω₀ the DM action
//!   counts are multinomial, so the sum collapses from |U|^N branches to
//!   one term per count vector, which is what makes N = 64 teams exactly
//!   evaluable.
//! * **Monte Carlo** — chunked sampling with one RNG stream per chunk
//!   (stream index = chunk index), so results are bitwise reproducible
//!   for a fixed seed and chunk size regardless of how chunks are
//!   scheduled across threads.
//! * **reduced** — observations drawn from a policy-independent reference
//!   measure τ, the cost reweighted by the likelihood ratio ψ of the
//!   model's conditional observation law against τ. Unbiased for the same
//!   cost as the direct route, and exactly equal to it in exact mode.
//!
//! The sampling order is fixed as (atom, ω₀, per-DM initial states, then
//! per stage: per-DM observations, per-DM actions, per-DM dynamics noise)
//! so seed-matched comparisons across estimators are meaningful.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, TeamError};
use crate::numeric::{
    integer_compositions, multinomial_f64, sample_index, simplex_grid_len, KahanSum,
};
use crate::policy::{Mixture, PolicyProfile, RelaxedKernel};
use crate::space::FiniteSpace;
use crate::team::{DynamicTeam, ReductionData, StaticTeam, WeightContext};

/// Default cap on exact-enumeration terms; callers can lower it to force
/// the Monte-Carlo fallback or raise it on bigger hardware.
pub const EXACT_TERM_BUDGET: u64 = 100_000_000;

/// Default Monte-Carlo chunk size. Chunking is part of the reproducibility
/// contract (one RNG stream per chunk), so the default is a fixed number,
/// never derived from the thread count.
pub const DEFAULT_CHUNK_SIZE: u64 = 16_384;

// ── Estimates ────────────────────────────────────────────────────────────

/// The result of one cost evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CostEstimate {
    pub value: f64,
    /// Sample standard deviation / √n for MC estimates; 0 when exact.
    pub std_error: f64,
    pub exact: bool,
    /// Number of MC samples (0 when exact).
    pub samples: u64,
    /// Seed used by the sampler, if any.
    pub seed: Option<u64>,
}

impl CostEstimate {
    fn from_exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            exact: true,
            samples: 0,
            seed: None,
        }
    }

    #[must_use]
    pub fn csv_header() -> &'static str {
        "value,std_error,exact,samples,seed"
    }

    /// One CSV row matching [`CostEstimate::csv_header`]; the seed column
    /// is empty for exact evaluations.
    #[must_use]
    pub fn csv_row(&self) -> String {
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.value, self.std_error, self.exact, self.samples, seed
        )
    }
}

fn finite_estimate(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(TeamError::NonFinite(format!("expected cost evaluated to {value}")))
    }
}

// ── Empirical measures ───────────────────────────────────────────────────

/// The uniform atom measure (1/n) Σ δ_{point} on realized indices of a
/// finite space, with duplicate points merged.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<(usize, f64)>,
    mean: f64,
}

impl EmpiricalMeasure {
    /// (point index, weight) pairs in increasing point order; weights sum
    /// to 1.
    #[must_use]
    pub fn atoms(&self) -> &[(usize, f64)] {
        &self.atoms
    }

    /// Average of the embedded point values.
    #[must_use]
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Dense probability vector over a space of `len` points.
    #[must_use]
    pub fn to_vector(&self, len: usize) -> Vec<f64> {
        let mut v = vec![0.0; len];
        for &(p, w) in &self.atoms {
            v[p] = w;
        }
        v
    }
}

/// Empirical measure of realized action indices over an embedded space.
pub fn empirical_action_measure(
    actions: &[usize],
    space: &FiniteSpace,
) -> Result<EmpiricalMeasure> {
    if actions.is_empty() {
        return Err(TeamError::Config("empirical measure: empty input".into()));
    }
    let values = space
        .values()
        .ok_or_else(|| TeamError::Config("empirical measure: space has no embedding".into()))?;
    let mut counts = vec![0usize; space.len()];
    for &a in actions {
        if a >= space.len() {
            return Err(TeamError::Config(format!(
                "empirical measure: index {a} out of range"
            )));
        }
        counts[a] += 1;
    }
    let n = actions.len() as f64;
    let mut mean = KahanSum::new();
    let mut atoms = Vec::new();
    for (p, &c) in counts.iter().enumerate() {
        if c > 0 {
            atoms.push((p, c as f64 / n));
            mean.add(c as f64 * values[p]);
        }
    }
    Ok(EmpiricalMeasure {
        atoms,
        mean: mean.value() / n,
    })
}

// ── Shared helpers ───────────────────────────────────────────────────────

fn check_static_policy(team: &StaticTeam, policy: &Mixture) -> Result<()> {
    let shape = policy.shape();
    if policy.num_dms() != team.num_dms() {
        return Err(TeamError::Config(format!(
            "policy has {} DMs, team has {}",
            policy.num_dms(),
            team.num_dms()
        )));
    }
    if shape.stages != 1 {
        return Err(TeamError::Config(format!(
            "static team: policy kernels have {} stages, expected 1",
            shape.stages
        )));
    }
    if shape.obs != team.obs().len() || shape.actions != team.actions().len() {
        return Err(TeamError::Config(format!(
            "policy kernel shape {}×{} does not match team spaces {}×{}",
            shape.obs,
            shape.actions,
            team.obs().len(),
            team.actions().len()
        )));
    }
    Ok(())
}

fn check_dynamic_policy(team: &DynamicTeam, policy: &Mixture) -> Result<()> {
    let shape = policy.shape();
    if policy.num_dms() != team.num_dms() {
        return Err(TeamError::Config(format!(
            "policy has {} DMs, team has {}",
            policy.num_dms(),
            team.num_dms()
        )));
    }
    if shape.stages != team.horizon() {
        return Err(TeamError::Config(format!(
            "policy kernels have {} stages for horizon {}",
            shape.stages,
            team.horizon()
        )));
    }
    if shape.obs != team.obs().len() || shape.actions != team.actions().len() {
        return Err(TeamError::Config(format!(
            "policy kernel shape {}×{} does not match team spaces {}×{}",
            shape.obs,
            shape.actions,
            team.obs().len(),
            team.actions().len()
        )));
    }
    Ok(())
}

/// (1/N) Σ_i c(ω₀, u^i, ū) expressed through action counts — the only
/// statistics the mean-field cost reads.
pub(crate) fn mean_cost_from_counts(team: &StaticTeam, omega: usize, counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let mut mean = KahanSum::new();
    for (u, &c) in counts.iter().enumerate() {
        if c > 0 {
            mean.add(c as f64 * team.action_value(u));
        }
    }
    let u_bar = mean.value() / n as f64;
    let mut total = KahanSum::new();
    for (u, &c) in counts.iter().enumerate() {
        if c > 0 {
            total.add(c as f64 * team.stage_cost(omega, u, u_bar));
        }
    }
    total.value() / n as f64
}

fn nnz(probs: &[f64]) -> usize {
    probs.iter().filter(|&&p| p > 0.0).count()
}

fn profile_is_iid(profile: &PolicyProfile) -> bool {
    let first = profile.kernel(0);
    profile.kernels().iter().all(|k| k == first)
}

// ── Static exact evaluation ──────────────────────────────────────────────

/// Exact expected cost of a mixture on a static team: the full sum over
/// support atoms, ω₀, and per-DM (observation, action) branches, with
/// zero-probability branches pruned. Atoms whose profile is i.i.d. are
/// evaluated through the multinomial law of the action counts instead of
/// per-DM branching. Fails with a budget error (falling back to Monte
/// Carlo is the caller's move) when the pruned enumeration would exceed
/// `budget` terms.
pub fn expected_cost_static_exact(
    team: &StaticTeam,
    policy: &Mixture,
    budget: u64,
) -> Result<CostEstimate> {
    check_static_policy(team, policy)?;
    let n = team.num_dms();
    let act_count = team.actions().len();

    struct Task<'a> {
        weight: f64,
        omega: usize,
        profile: &'a PolicyProfile,
        iid: bool,
    }
    let mut tasks = Vec::new();
    let mut term_count = 0u64;
    for (w, profile) in policy.support() {
        if *w == 0.0 {
            continue;
        }
        let iid = profile_is_iid(profile);
        for (omega, &p0) in team.prior().iter().enumerate() {
            if p0 == 0.0 {
                continue;
            }
            let branches = if iid {
                simplex_grid_len(act_count, n)
            } else {
                let mut product = 1u64;
                for kernel in profile.kernels() {
                    let mut per_dm = 0u64;
                    for (y, &py) in team.obs_row(omega).iter().enumerate() {
                        if py > 0.0 {
                            per_dm += nnz(kernel.row(0, y)) as u64;
                        }
                    }
                    product = product.saturating_mul(per_dm);
                }
                product
            };
            term_count = term_count.saturating_add(branches);
            tasks.push(Task {
                weight: w * p0,
                omega,
                profile,
                iid,
            });
        }
    }
    if term_count > budget {
        return Err(TeamError::Budget(format!(
            "exact evaluation needs {term_count} terms, budget is {budget}; \
             use Monte-Carlo evaluation instead"
        )));
    }

    let values: Vec<f64> = tasks
        .par_iter()
        .map(|task| {
            if task.iid {
                iid_atom_value(team, task.omega, task.profile.kernel(0))
            } else {
                let mut acc = KahanSum::new();
                let mut counts = vec![0usize; act_count];
                static_branches(
                    team,
                    task.omega,
                    task.profile.kernels(),
                    0,
                    1.0,
                    &mut counts,
                    &mut acc,
                );
                acc.value()
            }
        })
        .collect();

    let mut total = KahanSum::new();
    for (task, v) in tasks.iter().zip(&values) {
        total.add(task.weight * v);
    }
    Ok(CostEstimate::from_exact(finite_estimate(total.value())?))
}

fn static_branches(
    team: &StaticTeam,
    omega: usize,
    kernels: &[RelaxedKernel],
    dm: usize,
    prob: f64,
    counts: &mut Vec<usize>,
    acc: &mut KahanSum,
) {
    if dm == kernels.len() {
        acc.add(prob * mean_cost_from_counts(team, omega, counts));
        return;
    }
    for (y, &py) in team.obs_row(omega).iter().enumerate() {
        if py == 0.0 {
            continue;
        }
        for (u, &pu) in kernels[dm].row(0, y).iter().enumerate() {
            if pu == 0.0 {
                continue;
            }
            counts[u] += 1;
            static_branches(team, omega, kernels, dm + 1, prob * py * pu, counts, acc);
            counts[u] -= 1;
        }
    }
}

/// Per-ω₀ value of an i.i.d. atom via the multinomial count law: the DM
/// actions are i.i.d. with marginal q(u) = Σ_y μ̂(y|ω₀) γ(u|y), so the
/// count vector is Multinomial(N, q) and the sum has one term per
/// composition of N.
fn iid_atom_value(team: &StaticTeam, omega: usize, kernel: &RelaxedKernel) -> f64 {
    let act_count = team.actions().len();
    let mut q = vec![KahanSum::new(); act_count];
    for (y, &py) in team.obs_row(omega).iter().enumerate() {
        if py == 0.0 {
            continue;
        }
        for (u, slot) in q.iter_mut().enumerate() {
            slot.add(py * kernel.row(0, y)[u]);
        }
    }
    let q: Vec<f64> = q.into_iter().map(|k| k.value()).collect();
    iid_count_sum(team, omega, &q)
}

fn iid_count_sum(team: &StaticTeam, omega: usize, q: &[f64]) -> f64 {
    let n = team.num_dms();
    let mut acc = KahanSum::new();
    'counts: for counts in integer_compositions(n, q.len()) {
        let mut prob = multinomial_f64(&counts);
        for (u, &c) in counts.iter().enumerate() {
            if c == 0 {
                continue;
            }
            if q[u] == 0.0 {
                continue 'counts;
            }
            prob *= q[u].powi(i32::try_from(c).expect("count fits i32"));
        }
        if prob != 0.0 {
            acc.add(prob * mean_cost_from_counts(team, omega, &counts));
        }
    }
    acc.value()
}

/// The symmetric-i.i.d. objective extended off the simplex: rows are
/// arbitrary nonnegative entries and the same multinomial sum is formed.
/// On the simplex this equals `expected_cost_static_exact` of Π^{⊗N}; off
/// it, it is the natural polynomial extension in the row entries, which is
/// what finite-difference probes of the symmetric solver evaluate without
/// tripping row-sum validation.
pub fn symmetric_iid_cost_raw(team: &StaticTeam, rows: &[Vec<f64>]) -> Result<f64> {
    if rows.len() != team.obs().len() {
        return Err(TeamError::Config(format!(
            "raw objective: {} rows for {} observations",
            rows.len(),
            team.obs().len()
        )));
    }
    let act_count = team.actions().len();
    for (y, row) in rows.iter().enumerate() {
        if row.len() != act_count {
            return Err(TeamError::Config(format!(
                "raw objective: row {y} has {} entries for {act_count} actions",
                row.len()
            )));
        }
        // Finite-difference probes may dip a hair below zero; genuine
        // negative weights stay rejected.
        if let Some(bad) = row.iter().find(|x| !x.is_finite() || **x < -0.01) {
            return Err(TeamError::Config(format!(
                "raw objective: entry {bad} must be finite and ≥ 0"
            )));
        }
    }
    if simplex_grid_len(act_count, team.num_dms()) > EXACT_TERM_BUDGET {
        return Err(TeamError::Budget(
            "raw objective: composition count exceeds the term budget".into(),
        ));
    }
    let mut total = KahanSum::new();
    for (omega, &p0) in team.prior().iter().enumerate() {
        if p0 == 0.0 {
            continue;
        }
        let mut q = vec![KahanSum::new(); act_count];
        for (y, &py) in team.obs_row(omega).iter().enumerate() {
            if py == 0.0 {
                continue;
            }
            for (u, slot) in q.iter_mut().enumerate() {
                slot.add(py * rows[y][u]);
            }
        }
        let q: Vec<f64> = q.into_iter().map(|k| k.value()).collect();
        total.add(p0 * iid_count_sum(team, omega, &q));
    }
    finite_estimate(total.value())
}

// ── Monte-Carlo machinery ────────────────────────────────────────────────

/// Knobs shared by every Monte-Carlo evaluator.
#[derive(Debug, Clone, Copy)]
pub struct McOptions {
    pub samples: u64,
    pub seed: u64,
    /// Samples per RNG stream; part of the reproducibility contract.
    pub chunk_size: u64,
}

impl McOptions {
    #[must_use]
    pub fn new(samples: u64, seed: u64) -> Self {
        Self {
            samples,
            seed,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }

    #[must_use]
    pub fn with_chunk_size(mut self, chunk_size: u64) -> Self {
        self.chunk_size = chunk_size;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(TeamError::Config("mc: samples must be ≥ 1".into()));
        }
        if self.chunk_size == 0 {
            return Err(TeamError::Config("mc: chunk size must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Runs `opts.samples` draws of `sample`, chunked with one ChaCha8 stream
/// per chunk and merged in chunk order — the result is a deterministic
/// function of (seed, chunk size) no matter how rayon schedules chunks.
fn run_chunks<F>(opts: &McOptions, sample: F) -> Result<CostEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64> + Sync,
{
    opts.validate()?;
    let chunks = opts.samples.div_ceil(opts.chunk_size);
    let stats: Result<Vec<(f64, f64)>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(chunk);
            let lo = chunk * opts.chunk_size;
            let hi = (lo + opts.chunk_size).min(opts.samples);
            let mut sum = KahanSum::new();
            let mut sum_sq = KahanSum::new();
            for _ in lo..hi {
                let x = sample(&mut rng)?;
                sum.add(x);
                sum_sq.add(x * x);
            }
            Ok((sum.value(), sum_sq.value()))
        })
        .collect();
    let stats = stats?;
    let mut sum = KahanSum::new();
    let mut sum_sq = KahanSum::new();
    for (s, s2) in stats {
        sum.add(s);
        sum_sq.add(s2);
    }
    let n = opts.samples as f64;
    let mean = finite_estimate(sum.value() / n)?;
    let std_error = if opts.samples > 1 {
        let var = ((sum_sq.value() - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(CostEstimate {
        value: mean,
        std_error,
        exact: false,
        samples: opts.samples,
        seed: Some(opts.seed),
    })
}

/// Monte-Carlo estimate of the static expected cost. Unbiased for the
/// exact value; deterministic for fixed (seed, chunk size).
pub fn expected_cost_static_mc(
    team: &StaticTeam,
    policy: &Mixture,
    opts: &McOptions,
) -> Result<CostEstimate> {
    check_static_policy(team, policy)?;
    let weights: Vec<f64> = policy.support().iter().map(|(w, _)| *w).collect();
    let n = team.num_dms();
    let act_count = team.actions().len();
    run_chunks(opts, |rng| {
        let atom = sample_index(rng, &weights);
        let omega = sample_index(rng, team.prior());
        let profile = &policy.support()[atom].1;
        let mut counts = vec![0usize; act_count];
        for dm in 0..n {
            let y = sample_index(rng, team.obs_row(omega));
            let u = sample_index(rng, profile.kernel(dm).row(0, y));
            counts[u] += 1;
        }
        Ok(mean_cost_from_counts(team, omega, &counts))
    })
}

// ── Dynamic evaluation ───────────────────────────────────────────────────

fn check_reduction(team: &DynamicTeam, reduction: &ReductionData) -> Result<()> {
    if reduction.tau().len() != team.obs().len() {
        return Err(TeamError::Config(format!(
            "reduction.tau: {} entries for {} observations",
            reduction.tau().len(),
            team.obs().len()
        )));
    }
    if !team.obs_noise_memoryless() {
        return Err(TeamError::Config(
            "reduction: observation map reads past obs noise; per-stage change of measure invalid"
                .into(),
        ));
    }
    Ok(())
}

/// Upper bound on the branch count of one (atom, ω₀) enumeration task —
/// per-DM products of initial states, observation draws, the widest
/// kernel row, and dynamics noise (skipped at the final stage).
fn dynamic_branch_bound(
    team: &DynamicTeam,
    profile: &PolicyProfile,
    reduction: Option<&ReductionData>,
    omega: usize,
) -> f64 {
    let n = team.num_dms();
    let horizon = team.horizon();
    let init = nnz(team.init_row(omega)) as f64;
    let obs_branch = match reduction {
        None => nnz(&team.obs_noise().probs) as f64,
        Some(r) => nnz(r.tau()) as f64,
    };
    let w_branch = nnz(&team.dyn_noise().probs) as f64;
    let mut bound = init.powi(n as i32);
    for t in 0..horizon {
        for dm in 0..n {
            let widest = (0..team.obs().len())
                .map(|y| nnz(profile.kernel(dm).row(t, y)))
                .max()
                .unwrap_or(1) as f64;
            bound *= obs_branch * widest;
            if t + 1 < horizon {
                bound *= w_branch;
            }
        }
        if !bound.is_finite() {
            break;
        }
    }
    bound
}

/// One (atom, ω₀) exact-enumeration task over the dynamic tree. Phases per
/// stage: per-DM observation branch (direct: obs-noise atoms feeding the
/// observation map; reduced: observations from τ with ψ accumulated), then
/// per-DM action branch, then the stage cost with the realized mean
/// fields, then per-DM dynamics-noise branch.
struct DynTask<'a> {
    team: &'a DynamicTeam,
    reduction: Option<&'a ReductionData>,
    omega: usize,
    kernels: &'a [RelaxedKernel],
    n: usize,
    horizon: usize,
    // Per-DM histories, pushed on branch entry and popped on exit; during
    // stage t each holds exactly t (+1 once the stage's draw landed)
    // entries, so `hist[dm][t]` is always the current-stage value. Plain
    // "current value" scratch slots would be clobbered by deeper stages
    // while sibling branches at earlier DM positions still need them.
    x_hist: Vec<Vec<usize>>,
    u_hist: Vec<Vec<usize>>,
    v_hist: Vec<Vec<usize>>,
    y_hist: Vec<Vec<usize>>,
    acc: KahanSum,
}

impl<'a> DynTask<'a> {
    fn new(
        team: &'a DynamicTeam,
        reduction: Option<&'a ReductionData>,
        omega: usize,
        kernels: &'a [RelaxedKernel],
    ) -> Self {
        let n = team.num_dms();
        Self {
            team,
            reduction,
            omega,
            kernels,
            n,
            horizon: team.horizon(),
            x_hist: vec![Vec::new(); n],
            u_hist: vec![Vec::new(); n],
            v_hist: vec![Vec::new(); n],
            y_hist: vec![Vec::new(); n],
            acc: KahanSum::new(),
        }
    }

    fn run(mut self) -> Result<f64> {
        self.init_phase(0, 1.0)?;
        Ok(self.acc.value())
    }

    fn init_phase(&mut self, dm: usize, prob: f64) -> Result<()> {
        if dm == self.n {
            return self.obs_phase(0, 0, prob, 1.0, 0.0);
        }
        let row = self.team.init_row(self.omega);
        for (x, &px) in row.iter().enumerate() {
            if px == 0.0 {
                continue;
            }
            self.x_hist[dm].push(x);
            self.init_phase(dm + 1, prob * px)?;
            self.x_hist[dm].pop();
        }
        Ok(())
    }

    fn obs_phase(&mut self, t: usize, dm: usize, prob: f64, psi: f64, cost: f64) -> Result<()> {
        if dm == self.n {
            return self.act_phase(t, 0, prob, psi, cost);
        }
        match self.reduction {
            None => {
                let atoms = self.team.obs_noise().probs.len();
                for v in 0..atoms {
                    let pv = self.team.obs_noise().probs[v];
                    if pv == 0.0 {
                        continue;
                    }
                    self.v_hist[dm].push(v);
                    let y = self
                        .team
                        .observe(t, &self.x_hist[dm], &self.u_hist[dm], &self.v_hist[dm]);
                    self.y_hist[dm].push(y);
                    self.obs_phase(t, dm + 1, prob * pv, psi, cost)?;
                    self.y_hist[dm].pop();
                    self.v_hist[dm].pop();
                }
            }
            Some(red) => {
                for y in 0..red.tau().len() {
                    let ty = red.tau()[y];
                    if ty == 0.0 {
                        continue;
                    }
                    let w = {
                        let ctx = WeightContext {
                            t,
                            omega: self.omega,
                            x_hist: &self.x_hist[dm],
                            u_hist: &self.u_hist[dm],
                        };
                        red.weight(&ctx, y)?
                    };
                    if w == 0.0 {
                        continue;
                    }
                    self.y_hist[dm].push(y);
                    self.obs_phase(t, dm + 1, prob * ty, psi * w, cost)?;
                    self.y_hist[dm].pop();
                }
            }
        }
        Ok(())
    }

    fn act_phase(&mut self, t: usize, dm: usize, prob: f64, psi: f64, cost: f64) -> Result<()> {
        if dm == self.n {
            return self.close_stage(t, prob, psi, cost);
        }
        let row = self.kernels[dm].row(t, self.y_hist[dm][t]);
        for (u, &pu) in row.iter().enumerate() {
            if pu == 0.0 {
                continue;
            }
            self.u_hist[dm].push(u);
            self.act_phase(t, dm + 1, prob * pu, psi, cost)?;
            self.u_hist[dm].pop();
        }
        Ok(())
    }

    fn close_stage(&mut self, t: usize, prob: f64, psi: f64, cost: f64) -> Result<()> {
        let n_f = self.n as f64;
        let mut xb = KahanSum::new();
        let mut ub = KahanSum::new();
        for i in 0..self.n {
            xb.add(self.team.state_value(self.x_hist[i][t]));
            ub.add(self.team.action_value(self.u_hist[i][t]));
        }
        let x_bar = xb.value() / n_f;
        let u_bar = ub.value() / n_f;
        let mut stage = KahanSum::new();
        for i in 0..self.n {
            stage.add(
                self.team
                    .stage_cost(self.omega, self.x_hist[i][t], self.u_hist[i][t], u_bar, x_bar),
            );
        }
        let cost = cost + stage.value() / n_f;
        if t + 1 == self.horizon {
            self.acc.add(prob * psi * cost);
            return Ok(());
        }
        self.noise_phase(t, 0, prob, psi, cost, x_bar, u_bar)
    }

    #[allow(clippy::too_many_arguments)]
    fn noise_phase(
        &mut self,
        t: usize,
        dm: usize,
        prob: f64,
        psi: f64,
        cost: f64,
        x_bar: f64,
        u_bar: f64,
    ) -> Result<()> {
        if dm == self.n {
            return self.obs_phase(t + 1, 0, prob, psi, cost);
        }
        let x = self.x_hist[dm][t];
        let u = self.u_hist[dm][t];
        let atoms = self.team.dyn_noise().probs.len();
        for w in 0..atoms {
            let pw = self.team.dyn_noise().probs[w];
            if pw == 0.0 {
                continue;
            }
            let next = self.team.next_state(t, x, u, x_bar, u_bar, w);
            self.x_hist[dm].push(next);
            self.noise_phase(t, dm + 1, prob * pw, psi, cost, x_bar, u_bar)?;
            self.x_hist[dm].pop();
        }
        Ok(())
    }
}

fn dynamic_exact_impl(
    team: &DynamicTeam,
    reduction: Option<&ReductionData>,
    policy: &Mixture,
    budget: u64,
) -> Result<CostEstimate> {
    check_dynamic_policy(team, policy)?;
    if let Some(red) = reduction {
        check_reduction(team, red)?;
    }
    let mut tasks = Vec::new();
    let mut bound = 0.0f64;
    for (w, profile) in policy.support() {
        if *w == 0.0 {
            continue;
        }
        for (omega, &p0) in team.prior().iter().enumerate() {
            if p0 == 0.0 {
                continue;
            }
            bound += dynamic_branch_bound(team, profile, reduction, omega);
            tasks.push((w * p0, omega, profile));
        }
    }
    // The comparison must reject NaN/overflowed bounds, so it cannot be
    // phrased as a plain `bound <= budget` fast path.
    if bound.is_nan() || bound > budget as f64 {
        return Err(TeamError::Budget(format!(
            "exact dynamic evaluation needs up to {bound:.0} branches, budget is {budget}; \
             use Monte-Carlo evaluation instead"
        )));
    }
    let values: Result<Vec<f64>> = tasks
        .par_iter()
        .map(|(_, omega, profile)| {
            DynTask::new(team, reduction, *omega, profile.kernels()).run()
        })
        .collect();
    let values = values?;
    let mut total = KahanSum::new();
    for ((w, _, _), v) in tasks.iter().zip(&values) {
        total.add(w * v);
    }
    Ok(CostEstimate::from_exact(finite_estimate(total.value())?))
}

/// Exact expected cost of a dynamic team under a mixture: the full sum
/// over the (atom, ω₀, initial states, per-stage observation/action/noise)
/// tree, with mean fields x̄_t, ū_t recomputed each stage and the per-DM
/// stage costs averaged. Value = Σ_t E[(1/N) Σ_i c_t].
pub fn expected_cost_dynamic_exact(
    team: &DynamicTeam,
    policy: &Mixture,
    budget: u64,
) -> Result<CostEstimate> {
    dynamic_exact_impl(team, None, policy, budget)
}

/// Exact reduced evaluation: observations enumerate the reference measure
/// τ and every path weight carries Π_{i,t} ψ. Coincides with
/// [`expected_cost_dynamic_exact`] whenever the reduction data is valid.
pub fn expected_cost_reduced_exact(
    team: &DynamicTeam,
    reduction: &ReductionData,
    policy: &Mixture,
    budget: u64,
) -> Result<CostEstimate> {
    dynamic_exact_impl(team, Some(reduction), policy, budget)
}

fn dynamic_mc_impl(
    team: &DynamicTeam,
    reduction: Option<&ReductionData>,
    policy: &Mixture,
    opts: &McOptions,
) -> Result<CostEstimate> {
    check_dynamic_policy(team, policy)?;
    if let Some(red) = reduction {
        check_reduction(team, red)?;
    }
    let weights: Vec<f64> = policy.support().iter().map(|(w, _)| *w).collect();
    let n = team.num_dms();
    let horizon = team.horizon();
    run_chunks(opts, |rng| {
        let atom = sample_index(rng, &weights);
        let omega = sample_index(rng, team.prior());
        let profile = &policy.support()[atom].1;
        let mut x_hist: Vec<Vec<usize>> = Vec::with_capacity(n);
        for _ in 0..n {
            x_hist.push(vec![sample_index(rng, team.init_row(omega))]);
        }
        let mut u_hist: Vec<Vec<usize>> = vec![Vec::with_capacity(horizon); n];
        let mut v_hist: Vec<Vec<usize>> = vec![Vec::with_capacity(horizon); n];
        let mut y_cur = vec![0usize; n];
        let mut psi = 1.0f64;
        let mut cost = KahanSum::new();
        for t in 0..horizon {
            for dm in 0..n {
                match reduction {
                    None => {
                        let v = sample_index(rng, &team.obs_noise().probs);
                        v_hist[dm].push(v);
                        y_cur[dm] = team.observe(t, &x_hist[dm], &u_hist[dm], &v_hist[dm]);
                    }
                    Some(red) => {
                        let y = sample_index(rng, red.tau());
                        let ctx = WeightContext {
                            t,
                            omega,
                            x_hist: &x_hist[dm],
                            u_hist: &u_hist[dm],
                        };
                        psi *= red.weight(&ctx, y)?;
                        y_cur[dm] = y;
                    }
                }
            }
            for dm in 0..n {
                let u = sample_index(rng, profile.kernel(dm).row(t, y_cur[dm]));
                u_hist[dm].push(u);
            }
            let n_f = n as f64;
            let mut xb = KahanSum::new();
            let mut ub = KahanSum::new();
            for dm in 0..n {
                xb.add(team.state_value(x_hist[dm][t]));
                ub.add(team.action_value(u_hist[dm][t]));
            }
            let x_bar = xb.value() / n_f;
            let u_bar = ub.value() / n_f;
            let mut stage = KahanSum::new();
            for dm in 0..n {
                stage.add(team.stage_cost(omega, x_hist[dm][t], u_hist[dm][t], u_bar, x_bar));
            }
            cost.add(stage.value() / n_f);
            if t + 1 < horizon {
                for dm in 0..n {
                    let w = sample_index(rng, &team.dyn_noise().probs);
                    let next = team.next_state(t, x_hist[dm][t], u_hist[dm][t], x_bar, u_bar, w);
                    x_hist[dm].push(next);
                }
            }
        }
        Ok(psi * cost.value())
    })
}

/// Monte-Carlo rollout estimate of the dynamic expected cost.
pub fn expected_cost_dynamic_mc(
    team: &DynamicTeam,
    policy: &Mixture,
    opts: &McOptions,
) -> Result<CostEstimate> {
    dynamic_mc_impl(team, None, policy, opts)
}

/// Monte-Carlo reduced estimate: observations sampled from τ, cost
/// reweighted by Π ψ. Unbiased for the same value as the direct rollout;
/// with ψ ≡ 1 and matched (seed, chunk size) it is draw-for-draw identical
/// to it.
pub fn expected_cost_reduced_mc(
    team: &DynamicTeam,
    reduction: &ReductionData,
    policy: &Mixture,
    opts: &McOptions,
) -> Result<CostEstimate> {
    dynamic_mc_impl(team, Some(reduction), policy, opts)
}
