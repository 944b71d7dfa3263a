//! Static and dynamic decentralized team models on finite spaces.
//!
//! A team has N decision makers (DMs). Each DM sees a private observation
//! and picks an action; the common stage cost couples DMs only through the
//! empirical mean of their actions (and states, in the dynamic case). The
//! types here are immutable after construction and validate their
//! probability data eagerly, so downstream evaluators can assume clean
//! inputs.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TeamError};
use crate::numeric::{check_probability_vector, KahanSum, ACCUM_TOL, EXACT_TOL};
use crate::space::FiniteSpace;

/// Largest `n_check` accepted by the exchangeability validator
/// (factorial enumeration of permutations).
pub const MAX_EXCHANGEABILITY_CHECK: usize = 6;

/// Importance weights above this threshold abort reduced evaluation —
/// a ratio this large means the reference measure barely covers the
/// observation model and the estimator variance is meaningless.
pub const WEIGHT_OVERFLOW_GUARD: f64 = 1e6;

// ── Stage costs ──────────────────────────────────────────────────────────

/// Per-DM stage cost c(ω₀, u, ū) (static) or c(ω₀, x, u, ū, x̄) (dynamic).
///
/// Two concrete families cover the lab:
/// * `MeanFieldQuadratic` — a nonnegative combination of squared terms in
///   the action/state values, their empirical means, and per-ω₀ targets.
///   With coefficients ≥ 0 the cost is nonnegative everywhere.
/// * `StaticTable` / `DynamicTable` — dense nonnegative arrays indexed in
///   label order; these cannot depend on the empirical mean.
#[derive(Debug, Clone, PartialEq)]
pub enum StageCost {
    MeanFieldQuadratic {
        /// Coefficient of (u − target_u(ω₀))².
        u_self: f64,
        /// Coefficient of (ū − target_u(ω₀))².
        u_mean: f64,
        /// Coefficient of (u − ū)².
        u_track: f64,
        /// Coefficient of (x − target_x(ω₀))² (dynamic teams only).
        x_self: f64,
        /// Coefficient of (x̄ − target_x(ω₀))² (dynamic teams only).
        x_mean: f64,
        /// Coefficient of (x − x̄)² (dynamic teams only).
        x_track: f64,
        /// Action target per ω₀ label.
        target_u: Vec<f64>,
        /// State target per ω₀ label.
        target_x: Vec<f64>,
    },
    /// cost[ω₀][u] for static teams.
    StaticTable(Vec<Vec<f64>>),
    /// cost[ω₀][x][u] for dynamic teams.
    DynamicTable(Vec<Vec<Vec<f64>>>),
}

impl StageCost {
    /// The quadratic cost (ū − target)², i.e. a pure mean-tracking penalty.
    pub fn mean_tracking(target: f64, omega_count: usize) -> Self {
        StageCost::MeanFieldQuadratic {
            u_self: 0.0,
            u_mean: 1.0,
            u_track: 0.0,
            x_self: 0.0,
            x_mean: 0.0,
            x_track: 0.0,
            target_u: vec![target; omega_count],
            target_x: vec![0.0; omega_count],
        }
    }

    fn validate(&self, omega_count: usize, state_count: Option<usize>, action_count: usize) -> Result<()> {
        match self {
            StageCost::MeanFieldQuadratic {
                u_self,
                u_mean,
                u_track,
                x_self,
                x_mean,
                x_track,
                target_u,
                target_x,
            } => {
                for (name, c) in [
                    ("u_self", u_self),
                    ("u_mean", u_mean),
                    ("u_track", u_track),
                    ("x_self", x_self),
                    ("x_mean", x_mean),
                    ("x_track", x_track),
                ] {
                    if !c.is_finite() || *c < 0.0 {
                        return Err(TeamError::Config(format!(
                            "cost.params.{name}: coefficient {c} must be finite and ≥ 0"
                        )));
                    }
                }
                for (name, t) in [("target_u", target_u), ("target_x", target_x)] {
                    if t.len() != omega_count {
                        return Err(TeamError::Config(format!(
                            "cost.params.{name}: {} entries for {omega_count} ω₀ labels",
                            t.len()
                        )));
                    }
                    if let Some(bad) = t.iter().find(|x| !x.is_finite()) {
                        return Err(TeamError::Config(format!(
                            "cost.params.{name}: non-finite target {bad}"
                        )));
                    }
                }
                if state_count.is_none() && (*x_self > 0.0 || *x_mean > 0.0 || *x_track > 0.0) {
                    return Err(TeamError::Config(
                        "cost.params: state-coupled coefficients on a static team".into(),
                    ));
                }
                Ok(())
            }
            StageCost::StaticTable(t) => {
                if state_count.is_some() {
                    return Err(TeamError::Config(
                        "cost.params: static table supplied for a dynamic team".into(),
                    ));
                }
                check_cost_table_2d(t, omega_count, action_count)
            }
            StageCost::DynamicTable(t) => {
                let states = state_count.ok_or_else(|| {
                    TeamError::Config("cost.params: dynamic table supplied for a static team".into())
                })?;
                if t.len() != omega_count {
                    return Err(TeamError::Config(format!(
                        "cost.params.values: {} ω₀ rows, expected {omega_count}",
                        t.len()
                    )));
                }
                for row in t {
                    check_cost_table_2d(row, states, action_count)?;
                }
                Ok(())
            }
        }
    }

    /// Static evaluation: c(ω₀, u, ū).
    #[must_use]
    pub fn eval_static(&self, omega: usize, u_idx: usize, u: f64, u_bar: f64) -> f64 {
        match self {
            StageCost::MeanFieldQuadratic {
                u_self,
                u_mean,
                u_track,
                target_u,
                ..
            } => {
                let t = target_u[omega];
                u_self * (u - t) * (u - t) + u_mean * (u_bar - t) * (u_bar - t)
                    + u_track * (u - u_bar) * (u - u_bar)
            }
            StageCost::StaticTable(t) => t[omega][u_idx],
            StageCost::DynamicTable(_) => f64::NAN, // rejected at validation
        }
    }

    /// Dynamic evaluation: c(ω₀, x, u, ū, x̄).
    #[allow(clippy::too_many_arguments)]
    #[must_use]
    pub fn eval_dynamic(
        &self,
        omega: usize,
        x_idx: usize,
        x: f64,
        u_idx: usize,
        u: f64,
        u_bar: f64,
        x_bar: f64,
    ) -> f64 {
        match self {
            StageCost::MeanFieldQuadratic {
                u_self,
                u_mean,
                u_track,
                x_self,
                x_mean,
                x_track,
                target_u,
                target_x,
            } => {
                let tu = target_u[omega];
                let tx = target_x[omega];
                u_self * (u - tu) * (u - tu)
                    + u_mean * (u_bar - tu) * (u_bar - tu)
                    + u_track * (u - u_bar) * (u - u_bar)
                    + x_self * (x - tx) * (x - tx)
                    + x_mean * (x_bar - tx) * (x_bar - tx)
                    + x_track * (x - x_bar) * (x - x_bar)
            }
            StageCost::StaticTable(t) => t[omega][u_idx],
            StageCost::DynamicTable(t) => t[omega][x_idx][u_idx],
        }
    }
}

fn check_cost_table_2d(t: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if t.len() != rows {
        return Err(TeamError::Config(format!(
            "cost.params.values: {} rows, expected {rows}",
            t.len()
        )));
    }
    for (i, row) in t.iter().enumerate() {
        if row.len() != cols {
            return Err(TeamError::Config(format!(
                "cost.params.values[{i}]: {} columns, expected {cols}",
                row.len()
            )));
        }
        if let Some(bad) = row.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(TeamError::Config(format!(
                "cost.params.values[{i}]: entry {bad} must be finite and ≥ 0"
            )));
        }
    }
    Ok(())
}

// ── Static teams ─────────────────────────────────────────────────────────

/// An N-DM static team: exogenous ω₀ with a prior, a shared observation
/// channel μ̂(y | ω₀) applied independently to every DM, an embedded action
/// space, and a per-DM stage cost coupled through the action mean.
#[derive(Debug, Clone)]
pub struct StaticTeam {
    omega0: FiniteSpace,
    prior: Vec<f64>,
    obs: FiniteSpace,
    actions: FiniteSpace,
    obs_kernel: Vec<Vec<f64>>,
    cost: StageCost,
    num_dms: usize,
}

impl StaticTeam {
    pub fn new(
        omega0: FiniteSpace,
        prior: Vec<f64>,
        obs: FiniteSpace,
        actions: FiniteSpace,
        obs_kernel: Vec<Vec<f64>>,
        cost: StageCost,
        num_dms: usize,
    ) -> Result<Self> {
        if num_dms == 0 {
            return Err(TeamError::Config("N: must be positive".into()));
        }
        if prior.len() != omega0.len() {
            return Err(TeamError::Config(format!(
                "omega0.prior: {} entries for {} labels",
                prior.len(),
                omega0.len()
            )));
        }
        check_probability_vector(&prior, "omega0.prior")?;
        if actions.values().is_none() {
            return Err(TeamError::Config(
                "actions.values: action space needs a numeric embedding".into(),
            ));
        }
        if obs_kernel.len() != omega0.len() {
            return Err(TeamError::Config(format!(
                "obs_kernel: {} rows for {} ω₀ labels",
                obs_kernel.len(),
                omega0.len()
            )));
        }
        for (i, row) in obs_kernel.iter().enumerate() {
            if row.len() != obs.len() {
                return Err(TeamError::Config(format!(
                    "obs_kernel[{i}]: {} columns for {} observations",
                    row.len(),
                    obs.len()
                )));
            }
            check_probability_vector(row, &format!("obs_kernel[{i}]"))?;
        }
        cost.validate(omega0.len(), None, actions.len())?;
        Ok(Self {
            omega0,
            prior,
            obs,
            actions,
            obs_kernel,
            cost,
            num_dms,
        })
    }

    /// The mean-matching reference team: binary actions embedded as {0, 1},
    /// a single uninformative observation, uniform binary ω₀ (irrelevant to
    /// the cost), and stage cost (ū − ½)². Closed forms used throughout the
    /// test suite:
    /// * best deterministic profile: 0 for even N (half the DMs play 1),
    ///   1/(4N²) for odd N (⌊N/2⌋ or ⌈N/2⌉ ones);
    /// * best symmetric i.i.d. kernel: Bernoulli(½), cost 1/(4N) for N ≥ 2
    ///   since E(ū − ½)² = (p − ½)² + p(1 − p)/N;
    /// * N = 1: the same identity makes the objective constant at ¼.
    pub fn mean_match(num_dms: usize) -> Self {
        let omega0 = FiniteSpace::singleton("w");
        let cost = StageCost::mean_tracking(0.5, 1);
        StaticTeam::new(
            omega0,
            vec![1.0],
            FiniteSpace::singleton("y"),
            FiniteSpace::binary_actions(),
            vec![vec![1.0]],
            cost,
            num_dms,
        )
        .expect("static construction")
    }

    #[must_use]
    pub fn num_dms(&self) -> usize {
        self.num_dms
    }

    /// The same team at a different team size (everything else shared).
    pub fn with_num_dms(&self, num_dms: usize) -> Result<Self> {
        if num_dms == 0 {
            return Err(TeamError::Config("N: must be positive".into()));
        }
        let mut t = self.clone();
        t.num_dms = num_dms;
        Ok(t)
    }

    #[must_use]
    pub fn omega0(&self) -> &FiniteSpace {
        &self.omega0
    }

    #[must_use]
    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    #[must_use]
    pub fn obs(&self) -> &FiniteSpace {
        &self.obs
    }

    #[must_use]
    pub fn actions(&self) -> &FiniteSpace {
        &self.actions
    }

    #[must_use]
    pub fn obs_row(&self, omega: usize) -> &[f64] {
        &self.obs_kernel[omega]
    }

    #[must_use]
    pub fn cost(&self) -> &StageCost {
        &self.cost
    }

    #[must_use]
    pub fn action_value(&self, u_idx: usize) -> f64 {
        self.actions.values().expect("validated at construction")[u_idx]
    }

    /// Per-DM stage cost at (ω₀, u, ū).
    #[must_use]
    pub fn stage_cost(&self, omega: usize, u_idx: usize, u_bar: f64) -> f64 {
        self.cost
            .eval_static(omega, u_idx, self.action_value(u_idx), u_bar)
    }
}

/// Team cost of one action tuple: (1/N) Σ_i c(ω₀, u^i, ū) with
/// ū = (1/N) Σ_p value(u^p).
pub fn mean_field_cost(team: &StaticTeam, omega: usize, actions: &[usize]) -> Result<f64> {
    let n = team.num_dms();
    if actions.len() != n {
        return Err(TeamError::Config(format!(
            "actions: {} entries for a {n}-DM team",
            actions.len()
        )));
    }
    if omega >= team.omega0().len() {
        return Err(TeamError::Config(format!("omega index {omega} out of range")));
    }
    let act_count = team.actions().len();
    let mut mean = KahanSum::new();
    for &u in actions {
        if u >= act_count {
            return Err(TeamError::Config(format!("action index {u} out of range")));
        }
        mean.add(team.action_value(u));
    }
    let u_bar = mean.value() / n as f64;
    let mut total = KahanSum::new();
    for &u in actions {
        total.add(team.stage_cost(omega, u, u_bar));
    }
    Ok(total.value() / n as f64)
}

/// Checks permutation invariance of an explicit joint cost
/// g(ω₀, (u¹, …, u^n)) over all action tuples and all permutations of
/// {1..n_check}, to within 1e-12. Enumeration is factorial, so `n_check`
/// is capped at [`MAX_EXCHANGEABILITY_CHECK`].
pub fn validate_exchangeable_cost_joint(
    joint: &dyn Fn(usize, &[usize]) -> f64,
    omega_count: usize,
    action_count: usize,
    n_check: usize,
) -> Result<bool> {
    if n_check == 0 {
        return Err(TeamError::Config("n_check: must be positive".into()));
    }
    if n_check > MAX_EXCHANGEABILITY_CHECK {
        return Err(TeamError::Budget(format!(
            "n_check {n_check} exceeds the factorial-enumeration cap {MAX_EXCHANGEABILITY_CHECK}"
        )));
    }
    let perms = permutations(n_check);
    let mut tuple = vec![0usize; n_check];
    let mut permuted = vec![0usize; n_check];
    loop {
        for omega in 0..omega_count {
            let base = joint(omega, &tuple);
            for sigma in &perms {
                for (j, &s) in sigma.iter().enumerate() {
                    permuted[j] = tuple[s];
                }
                if (joint(omega, &permuted) - base).abs() > EXACT_TOL {
                    return Ok(false);
                }
            }
        }
        // Odometer over action tuples.
        let mut pos = n_check;
        loop {
            if pos == 0 {
                return Ok(true);
            }
            pos -= 1;
            tuple[pos] += 1;
            if tuple[pos] < action_count {
                break;
            }
            tuple[pos] = 0;
        }
    }
}

/// Exchangeability check for a team's own mean-field cost, instantiated at
/// team size `n_check`. Mean-field costs are symmetric sums, so this always
/// returns true for them; the entry point exists so hand-written joint
/// costs can be screened through the same machinery.
pub fn validate_exchangeable_cost(team: &StaticTeam, n_check: usize) -> Result<bool> {
    let small = team.with_num_dms(n_check.max(1))?;
    validate_exchangeable_cost_joint(
        &|omega, tuple| mean_field_cost(&small, omega, tuple).unwrap_or(f64::NAN),
        team.omega0().len(),
        team.actions().len(),
        n_check,
    )
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    heap_permutations(&mut idx, n, &mut out);
    out
}

fn heap_permutations(idx: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == 1 {
        out.push(idx.clone());
        return;
    }
    for i in 0..k {
        heap_permutations(idx, k - 1, out);
        if k.is_multiple_of(2) {
            idx.swap(i, k - 1);
        } else {
            idx.swap(0, k - 1);
        }
    }
}

// ── Reference measures and likelihood ratios ─────────────────────────────

/// The dyadic reference measure on a k-label space: Q(m_p) = 2^{−p} for
/// p < k with the tail Σ_{p≥k} 2^{−p} = 2^{−(k−1)} folded into the last
/// label, so the finite vector sums to 1 exactly and every atom is
/// strictly positive (it dominates every observation row).
#[must_use]
pub fn countable_reference_measure(obs: &FiniteSpace) -> Vec<f64> {
    let k = obs.len();
    let mut q = Vec::with_capacity(k);
    for p in 1..k {
        q.push(0.5f64.powi(p as i32));
    }
    q.push(0.5f64.powi(k as i32 - 1));
    q
}

/// Likelihood ratio ψ(y) = θ(y − shift) / θ(y) for an additive-noise
/// observation y = shift + noise with noise density θ; used with the
/// reference measure τ(dy) ∝ θ(y) dy. Rejects grid points where θ
/// vanishes (the ratio is undefined there).
pub fn reduction_weight(theta: &dyn Fn(f64) -> f64, y: f64, shift: f64) -> Result<f64> {
    let denom = theta(y);
    if !(denom.is_finite() && denom > 0.0) {
        return Err(TeamError::Config(format!(
            "reduction weight: θ({y}) = {denom}; reference density must be positive at every grid point"
        )));
    }
    let psi = theta(y - shift) / denom;
    if !psi.is_finite() || psi < 0.0 {
        return Err(TeamError::NonFinite(format!("reduction weight ψ({y}) = {psi}")));
    }
    Ok(psi)
}

/// Standard normal density (up to the common normalizing constant, which
/// cancels in every ratio and renormalized grid).
#[must_use]
pub fn std_normal_density(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

/// ψ for the standard-normal additive-noise model.
pub fn gaussian_reduction_weight(y: f64, shift: f64) -> Result<f64> {
    reduction_weight(&std_normal_density, y, shift)
}

/// A probability vector proportional to θ on the given grid (the
/// discretized reference measure τ).
pub fn density_reference_grid(theta: &dyn Fn(f64) -> f64, grid: &[f64]) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(TeamError::Config("reference grid: empty".into()));
    }
    let raw: Vec<f64> = grid.iter().map(|&y| theta(y)).collect();
    if let Some(bad) = raw.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(TeamError::Config(format!(
            "reference grid: density value {bad} is not positive"
        )));
    }
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|x| x / total).collect())
}

// ── Dynamic teams ────────────────────────────────────────────────────────

/// Shared per-stage dynamics: (t, x, u, x̄, ū, w) ↦ next state index.
pub type DynamicsFn = dyn Fn(usize, usize, usize, f64, f64, usize) -> usize + Send + Sync;

/// Shared per-stage observation map over one DM's private history:
/// (t, x_{0..=t}, u_{0..t}, v_{0..=t}) ↦ observation index.
pub type ObsMapFn = dyn Fn(usize, &[usize], &[usize], &[usize]) -> usize + Send + Sync;

/// Finite noise source: labels plus an i.i.d. (across DMs and stages)
/// probability vector.
#[derive(Debug, Clone)]
pub struct NoiseSpec {
    pub space: FiniteSpace,
    pub probs: Vec<f64>,
}

impl NoiseSpec {
    pub fn new(space: FiniteSpace, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.len() {
            return Err(TeamError::Config(format!(
                "noise.probs: {} entries for {} labels",
                probs.len(),
                space.len()
            )));
        }
        check_probability_vector(&probs, "noise.probs")?;
        Ok(Self { space, probs })
    }

    /// A degenerate single-atom source (useful for noise-free dynamics).
    pub fn trivial() -> Self {
        Self::new(FiniteSpace::singleton("·"), vec![1.0]).expect("static construction")
    }
}

/// A horizon-T dynamic team with symmetric information structure: all DMs
/// share the same dynamics map, observation map, noise laws, and stage
/// cost, so permutation symmetry holds by construction.
#[derive(Clone)]
pub struct DynamicTeam {
    omega0: FiniteSpace,
    prior: Vec<f64>,
    states: FiniteSpace,
    obs: FiniteSpace,
    actions: FiniteSpace,
    init_kernel: Vec<Vec<f64>>,
    dyn_noise: NoiseSpec,
    obs_noise: NoiseSpec,
    horizon: usize,
    dynamics: Arc<DynamicsFn>,
    obs_map: Arc<ObsMapFn>,
    /// True when the observation map reads only the *current* obs-noise
    /// entry v_t (never past entries). Required by the reduced evaluator,
    /// whose change of measure replaces the per-stage observation channel.
    obs_noise_memoryless: bool,
    cost: StageCost,
    num_dms: usize,
}

impl fmt::Debug for DynamicTeam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicTeam")
            .field("omega0", &self.omega0)
            .field("states", &self.states)
            .field("obs", &self.obs)
            .field("actions", &self.actions)
            .field("horizon", &self.horizon)
            .field("num_dms", &self.num_dms)
            .finish_non_exhaustive()
    }
}

impl DynamicTeam {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        omega0: FiniteSpace,
        prior: Vec<f64>,
        states: FiniteSpace,
        obs: FiniteSpace,
        actions: FiniteSpace,
        init_kernel: Vec<Vec<f64>>,
        dyn_noise: NoiseSpec,
        obs_noise: NoiseSpec,
        horizon: usize,
        dynamics: Arc<DynamicsFn>,
        obs_map: Arc<ObsMapFn>,
        obs_noise_memoryless: bool,
        cost: StageCost,
        num_dms: usize,
    ) -> Result<Self> {
        if num_dms == 0 {
            return Err(TeamError::Config("N: must be positive".into()));
        }
        if horizon == 0 {
            return Err(TeamError::Config("horizon: must be positive".into()));
        }
        if prior.len() != omega0.len() {
            return Err(TeamError::Config(format!(
                "omega0.prior: {} entries for {} labels",
                prior.len(),
                omega0.len()
            )));
        }
        check_probability_vector(&prior, "omega0.prior")?;
        for (name, space) in [("states", &states), ("actions", &actions)] {
            if space.values().is_none() {
                return Err(TeamError::Config(format!(
                    "{name}.values: numeric embedding required for mean-field coupling"
                )));
            }
        }
        if init_kernel.len() != omega0.len() {
            return Err(TeamError::Config(format!(
                "init_kernel: {} rows for {} ω₀ labels",
                init_kernel.len(),
                omega0.len()
            )));
        }
        for (i, row) in init_kernel.iter().enumerate() {
            if row.len() != states.len() {
                return Err(TeamError::Config(format!(
                    "init_kernel[{i}]: {} columns for {} states",
                    row.len(),
                    states.len()
                )));
            }
            check_probability_vector(row, &format!("init_kernel[{i}]"))?;
        }
        cost.validate(omega0.len(), Some(states.len()), actions.len())?;
        Ok(Self {
            omega0,
            prior,
            states,
            obs,
            actions,
            init_kernel,
            dyn_noise,
            obs_noise,
            horizon,
            dynamics,
            obs_map,
            obs_noise_memoryless,
            cost,
            num_dms,
        })
    }

    /// Builds a dynamic team from dense tables:
    /// `dynamics_table[t][x][u][w] → x'` and `obs_table[t][x][v] → y`.
    /// Table-driven observation maps read only the current state and the
    /// current obs-noise atom, so the result supports reduced evaluation.
    #[allow(clippy::too_many_arguments)]
    pub fn from_tables(
        omega0: FiniteSpace,
        prior: Vec<f64>,
        states: FiniteSpace,
        obs: FiniteSpace,
        actions: FiniteSpace,
        init_kernel: Vec<Vec<f64>>,
        dyn_noise: NoiseSpec,
        obs_noise: NoiseSpec,
        horizon: usize,
        dynamics_table: Vec<Vec<Vec<Vec<usize>>>>,
        obs_table: Vec<Vec<Vec<usize>>>,
        cost: StageCost,
        num_dms: usize,
    ) -> Result<Self> {
        let (sx, su, sw, sv, sy) = (
            states.len(),
            actions.len(),
            dyn_noise.space.len(),
            obs_noise.space.len(),
            obs.len(),
        );
        if dynamics_table.len() != horizon {
            return Err(TeamError::Config(format!(
                "dynamics_table: {} stages for horizon {horizon}",
                dynamics_table.len()
            )));
        }
        for (t, per_x) in dynamics_table.iter().enumerate() {
            if per_x.len() != sx {
                return Err(TeamError::Config(format!(
                    "dynamics_table[{t}]: {} state rows, expected {sx}",
                    per_x.len()
                )));
            }
            for (x, per_u) in per_x.iter().enumerate() {
                if per_u.len() != su {
                    return Err(TeamError::Config(format!(
                        "dynamics_table[{t}][{x}]: {} action rows, expected {su}",
                        per_u.len()
                    )));
                }
                for per_w in per_u {
                    if per_w.len() != sw {
                        return Err(TeamError::Config(format!(
                            "dynamics_table[{t}][{x}]: {} noise columns, expected {sw}",
                            per_w.len()
                        )));
                    }
                    if let Some(bad) = per_w.iter().find(|&&x2| x2 >= sx) {
                        return Err(TeamError::Config(format!(
                            "dynamics_table[{t}][{x}]: next-state index {bad} out of range"
                        )));
                    }
                }
            }
        }
        if obs_table.len() != horizon {
            return Err(TeamError::Config(format!(
                "obs_table: {} stages for horizon {horizon}",
                obs_table.len()
            )));
        }
        for (t, per_x) in obs_table.iter().enumerate() {
            if per_x.len() != sx {
                return Err(TeamError::Config(format!(
                    "obs_table[{t}]: {} state rows, expected {sx}",
                    per_x.len()
                )));
            }
            for per_v in per_x {
                if per_v.len() != sv {
                    return Err(TeamError::Config(format!(
                        "obs_table[{t}]: {} noise columns, expected {sv}",
                        per_v.len()
                    )));
                }
                if let Some(bad) = per_v.iter().find(|&&y| y >= sy) {
                    return Err(TeamError::Config(format!(
                        "obs_table[{t}]: observation index {bad} out of range"
                    )));
                }
            }
        }
        let dt = dynamics_table;
        let ot = obs_table;
        let dynamics: Arc<DynamicsFn> =
            Arc::new(move |t, x, u, _x_bar, _u_bar, w| dt[t][x][u][w]);
        let obs_map: Arc<ObsMapFn> = Arc::new(move |t, x_hist, _u_hist, v_hist| {
            ot[t][x_hist[t]][v_hist[t]]
        });
        Self::new(
            omega0,
            prior,
            states,
            obs,
            actions,
            init_kernel,
            dyn_noise,
            obs_noise,
            horizon,
            dynamics,
            obs_map,
            true,
            cost,
            num_dms,
        )
    }

    /// Horizon-1 wrapper around a static team, used to cross-check the
    /// dynamic machinery against static evaluation/optimization.
    ///
    /// ω₀ is copied into the (cost-irrelevant) Markov state so the
    /// observation map can condition on it. The obs-noise alphabet
    /// enumerates functions ω₀ → y — atom v has probability
    /// Π_ω μ̂(v(ω) | ω) and the map emits v(x₀) — which reproduces the
    /// static channel law exactly for arbitrary rows.
    pub fn from_static(team: &StaticTeam) -> Result<Self> {
        let omega_count = team.omega0().len();
        let y_count = team.obs().len();
        let atoms = y_count
            .checked_pow(u32::try_from(omega_count).map_err(|_| {
                TeamError::Budget("static wrapper: ω₀ space too large".into())
            })?)
            .ok_or_else(|| TeamError::Budget("static wrapper: obs-noise alphabet overflow".into()))?;
        if atoms > 1_000_000 {
            return Err(TeamError::Budget(format!(
                "static wrapper: obs-noise alphabet {atoms} exceeds 1e6"
            )));
        }
        let mut labels = Vec::with_capacity(atoms);
        let mut probs = Vec::with_capacity(atoms);
        for v in 0..atoms {
            labels.push(format!("v{v}"));
            // Decode atom v as the function ω ↦ digit_ω in base y_count.
            let mut p = 1.0;
            let mut rest = v;
            for omega in 0..omega_count {
                let y = rest % y_count;
                rest /= y_count;
                p *= team.obs_row(omega)[y];
            }
            probs.push(p);
        }
        let obs_noise = NoiseSpec::new(FiniteSpace::new(labels)?, probs)?;
        let states = FiniteSpace::with_values(
            team.omega0().labels().to_vec(),
            vec![0.0; omega_count],
        )?;
        let init_kernel: Vec<Vec<f64>> = (0..omega_count)
            .map(|o| {
                let mut row = vec![0.0; omega_count];
                row[o] = 1.0;
                row
            })
            .collect();
        let yc = y_count;
        let obs_map: Arc<ObsMapFn> = Arc::new(move |_t, x_hist, _u_hist, v_hist| {
            let mut rest = v_hist[0];
            for _ in 0..x_hist[0] {
                rest /= yc;
            }
            rest % yc
        });
        let dynamics: Arc<DynamicsFn> = Arc::new(|_t, x, _u, _xb, _ub, _w| x);
        Self::new(
            team.omega0().clone(),
            team.prior().to_vec(),
            states,
            team.obs().clone(),
            team.actions().clone(),
            init_kernel,
            NoiseSpec::trivial(),
            obs_noise,
            1,
            dynamics,
            obs_map,
            true,
            team.cost().clone(),
            team.num_dms(),
        )
    }

    #[must_use]
    pub fn num_dms(&self) -> usize {
        self.num_dms
    }

    pub fn with_num_dms(&self, num_dms: usize) -> Result<Self> {
        if num_dms == 0 {
            return Err(TeamError::Config("N: must be positive".into()));
        }
        let mut t = self.clone();
        t.num_dms = num_dms;
        Ok(t)
    }

    #[must_use]
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[must_use]
    pub fn omega0(&self) -> &FiniteSpace {
        &self.omega0
    }

    #[must_use]
    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    #[must_use]
    pub fn states(&self) -> &FiniteSpace {
        &self.states
    }

    #[must_use]
    pub fn obs(&self) -> &FiniteSpace {
        &self.obs
    }

    #[must_use]
    pub fn actions(&self) -> &FiniteSpace {
        &self.actions
    }

    #[must_use]
    pub fn init_row(&self, omega: usize) -> &[f64] {
        &self.init_kernel[omega]
    }

    #[must_use]
    pub fn dyn_noise(&self) -> &NoiseSpec {
        &self.dyn_noise
    }

    #[must_use]
    pub fn obs_noise(&self) -> &NoiseSpec {
        &self.obs_noise
    }

    #[must_use]
    pub fn cost(&self) -> &StageCost {
        &self.cost
    }

    #[must_use]
    pub fn obs_noise_memoryless(&self) -> bool {
        self.obs_noise_memoryless
    }

    #[must_use]
    pub fn state_value(&self, x: usize) -> f64 {
        self.states.values().expect("validated at construction")[x]
    }

    #[must_use]
    pub fn action_value(&self, u: usize) -> f64 {
        self.actions.values().expect("validated at construction")[u]
    }

    #[must_use]
    pub fn next_state(&self, t: usize, x: usize, u: usize, x_bar: f64, u_bar: f64, w: usize) -> usize {
        (self.dynamics)(t, x, u, x_bar, u_bar, w)
    }

    #[must_use]
    pub fn observe(&self, t: usize, x_hist: &[usize], u_hist: &[usize], v_hist: &[usize]) -> usize {
        (self.obs_map)(t, x_hist, u_hist, v_hist)
    }

    /// Per-DM stage cost at (ω₀, x, u, ū, x̄).
    #[must_use]
    pub fn stage_cost(&self, omega: usize, x: usize, u: usize, u_bar: f64, x_bar: f64) -> f64 {
        self.cost.eval_dynamic(
            omega,
            x,
            self.state_value(x),
            u,
            self.action_value(u),
            u_bar,
            x_bar,
        )
    }

    /// Conditional law of y_t given one DM's history, obtained by summing
    /// the obs-noise law over atoms mapping to each observation. `v_hist`
    /// must hold the DM's past noise draws (empty slice allowed when the
    /// observation map is memoryless in past noise).
    #[must_use]
    pub fn conditional_obs_law(
        &self,
        t: usize,
        x_hist: &[usize],
        u_hist: &[usize],
        v_hist_past: &[usize],
    ) -> Vec<f64> {
        let mut law = vec![0.0; self.obs.len()];
        let mut v_hist = vec![0usize; t + 1];
        v_hist[..t.min(v_hist_past.len())]
            .copy_from_slice(&v_hist_past[..t.min(v_hist_past.len())]);
        for (v, &pv) in self.obs_noise.probs.iter().enumerate() {
            if pv == 0.0 {
                continue;
            }
            v_hist[t] = v;
            let y = self.observe(t, x_hist, u_hist, &v_hist);
            law[y] += pv;
        }
        law
    }
}

// ── Reduction data ───────────────────────────────────────────────────────

/// Conditioning context handed to an importance-weight function: the stage,
/// realized ω₀, and one DM's private state/action history up to the query.
#[derive(Debug, Clone, Copy)]
pub struct WeightContext<'a> {
    pub t: usize,
    pub omega: usize,
    /// x_0..x_t (current state included).
    pub x_hist: &'a [usize],
    /// u_0..u_{t−1}.
    pub u_hist: &'a [usize],
}

/// ψ(context, y): likelihood ratio of the model's conditional observation
/// law against the reference measure.
pub type WeightFn = dyn Fn(&WeightContext<'_>, usize) -> f64 + Send + Sync;

/// Policy-independent observation sampling data: a reference measure τ on
/// the observation space plus the density ψ of the model's conditional
/// observation law with respect to τ. For every conditioning context,
/// Σ_y ψ(·, y) τ(y) = 1 within 1e-9.
#[derive(Clone)]
pub struct ReductionData {
    tau: Vec<f64>,
    weight: Arc<WeightFn>,
}

impl fmt::Debug for ReductionData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReductionData").field("tau", &self.tau).finish_non_exhaustive()
    }
}

impl ReductionData {
    pub fn new(tau: Vec<f64>, weight: Arc<WeightFn>) -> Result<Self> {
        check_probability_vector(&tau, "reduction.tau")?;
        Ok(Self { tau, weight })
    }

    /// Derives ψ from the team itself: ψ(ctx, y) = P(y | ctx) / τ(y),
    /// where the conditional law comes from enumerating obs-noise atoms.
    /// Requires τ strictly positive and an observation map that ignores
    /// past obs noise (so the per-stage change of measure factorizes).
    pub fn independent_from(team: &DynamicTeam, tau: Vec<f64>) -> Result<Self> {
        if !team.obs_noise_memoryless() {
            return Err(TeamError::Config(
                "reduction: observation map reads past obs noise; independent reduction unavailable"
                    .into(),
            ));
        }
        if tau.len() != team.obs().len() {
            return Err(TeamError::Config(format!(
                "reduction.tau: {} entries for {} observations",
                tau.len(),
                team.obs().len()
            )));
        }
        check_probability_vector(&tau, "reduction.tau")?;
        if let Some(bad) = tau.iter().position(|&p| p <= 0.0) {
            return Err(TeamError::Config(format!(
                "reduction.tau: atom {bad} is zero; τ must dominate the observation law"
            )));
        }
        let team = team.clone();
        let tau_for_fn = tau.clone();
        let weight: Arc<WeightFn> = Arc::new(move |ctx, y| {
            let law = team.conditional_obs_law(ctx.t, ctx.x_hist, ctx.u_hist, &[]);
            law[y] / tau_for_fn[y]
        });
        Self::new(tau, weight)
    }

    /// Uniform reference measure over the team's observation space.
    pub fn uniform_from(team: &DynamicTeam) -> Result<Self> {
        let k = team.obs().len();
        Self::independent_from(team, vec![1.0 / k as f64; k])
    }

    #[must_use]
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    /// ψ at one (context, observation) pair, with the overflow guard
    /// applied: ratios past [`WEIGHT_OVERFLOW_GUARD`] indicate a reference
    /// grid that barely covers the model and abort evaluation.
    pub fn weight(&self, ctx: &WeightContext<'_>, y: usize) -> Result<f64> {
        let psi = (self.weight)(ctx, y);
        if !psi.is_finite() || psi < 0.0 {
            return Err(TeamError::NonFinite(format!("importance weight ψ = {psi}")));
        }
        if psi > WEIGHT_OVERFLOW_GUARD {
            return Err(TeamError::NonFinite(format!(
                "importance weight ψ = {psi} exceeds the overflow guard {WEIGHT_OVERFLOW_GUARD}"
            )));
        }
        Ok(psi)
    }

    /// Checks the density property Σ_y ψ(ctx, y) τ(y) = 1 (within 1e-9)
    /// for one context.
    pub fn check_density(&self, ctx: &WeightContext<'_>) -> Result<()> {
        let mut acc = KahanSum::new();
        for (y, &t) in self.tau.iter().enumerate() {
            if t > 0.0 {
                acc.add(self.weight(ctx, y)? * t);
            }
        }
        let s = acc.value();
        if (s - 1.0).abs() > ACCUM_TOL {
            return Err(TeamError::Config(format!(
                "reduction: Σ ψ·τ = {s} at t={}, ω={} (expected 1 within {ACCUM_TOL})",
                ctx.t, ctx.omega
            )));
        }
        Ok(())
    }
}
