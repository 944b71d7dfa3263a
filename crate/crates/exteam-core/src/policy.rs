//! Policies and randomized policy classes.
//!
//! Three layers of randomness appear in decentralized teams:
//!
//! 1. a *deterministic policy* maps each observation to an action
//!    (one table per stage for dynamic teams);
//! 2. a *relaxed kernel* maps each observation to a distribution over
//!    actions — deterministic policies are its 0/1 extreme points;
//! 3. a *mixture* is a finitely supported probability measure over
//!    N-DM profiles of relaxed kernels, tagged with its structural class:
//!    GENERAL (anything), EX (permutation-invariant law), CO / CO_SYM
//!    (explicit common-randomness layout, symmetric per-DM factors for
//!    CO_SYM), PR / PR_SYM (product of per-DM randomizations, identical
//!    factors for PR_SYM), DIRAC (point mass on a deterministic profile).
//!
//! The operations implement the lab's structural toolkit: permutation
//! action, exact symmetrization, exchangeability testing, restriction to
//! fewer DMs, the uniform-index extension of an exchangeable law and its
//! total-variation bound, extraction of i.i.d. mixture weights by
//! constrained least squares, and decomposition of a kernel into its
//! deterministic vertices.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TeamError};
use crate::numeric::{
    check_probability_vector, fingerprint_slice, project_to_simplex, simplex_grid,
    simplex_grid_len, KahanSum, EXACT_TOL,
};
use crate::space::FiniteSpace;

/// Exact symmetrization and exchangeability checks enumerate all N!
/// permutations; beyond this team size callers must use the sampled
/// variant.
pub const MAX_EXACT_SYMMETRIZATION: usize = 8;

/// Budget on index tuples N^m enumerated by the uniform-index extension.
pub const EXTENSION_TUPLE_BUDGET: u64 = 1_000_000;

/// Budget on deterministic maps |U|^(|Y|·T) enumerated by the vertex
/// decomposition, and on grid candidates generated for extraction.
pub const DECOMPOSITION_BUDGET: u64 = 1_000_000;

/// Budget on expanded common-randomness supports |base|^N.
pub const COMMON_RANDOMNESS_BUDGET: u64 = 1_000_000;

// ── Shapes ───────────────────────────────────────────────────────────────

/// Dimensions of a kernel: stages × observations × actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShape {
    pub stages: usize,
    pub obs: usize,
    pub actions: usize,
}

// ── Deterministic policies ───────────────────────────────────────────────

/// Per-stage observation → action tables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy {
    stages: Vec<Vec<usize>>,
}

impl DeterministicPolicy {
    pub fn new(stages: Vec<Vec<usize>>, action_count: usize) -> Result<Self> {
        if stages.is_empty() || stages.iter().any(Vec::is_empty) {
            return Err(TeamError::Config("deterministic policy: empty table".into()));
        }
        let obs = stages[0].len();
        for (t, table) in stages.iter().enumerate() {
            if table.len() != obs {
                return Err(TeamError::Config(format!(
                    "deterministic policy: stage {t} has {} rows, expected {obs}",
                    table.len()
                )));
            }
            if let Some(bad) = table.iter().find(|&&u| u >= action_count) {
                return Err(TeamError::Config(format!(
                    "deterministic policy: action index {bad} out of range"
                )));
            }
        }
        Ok(Self { stages })
    }

    /// Single-stage policy playing `action` for every observation.
    pub fn constant(action: usize, obs_count: usize, action_count: usize) -> Result<Self> {
        Self::new(vec![vec![action; obs_count]], action_count)
    }

    #[must_use]
    pub fn stages(&self) -> &[Vec<usize>] {
        &self.stages
    }

    #[must_use]
    pub fn action(&self, t: usize, y: usize) -> usize {
        self.stages[t][y]
    }

    /// Observation-label → action-label maps, one per stage.
    pub fn to_label_maps(
        &self,
        obs: &FiniteSpace,
        actions: &FiniteSpace,
    ) -> Result<Vec<std::collections::BTreeMap<String, String>>> {
        if self.stages[0].len() != obs.len() {
            return Err(TeamError::Config(
                "deterministic policy: table width does not match observation space".into(),
            ));
        }
        Ok(self
            .stages
            .iter()
            .map(|table| {
                table
                    .iter()
                    .enumerate()
                    .map(|(y, &u)| (obs.label(y).to_string(), actions.label(u).to_string()))
                    .collect()
            })
            .collect())
    }
}

// ── Relaxed kernels ──────────────────────────────────────────────────────

/// A stochastic kernel from observations to actions, one row per
/// observation per stage. Every row is a probability vector (sum within
/// 1e-12 of 1, entries in [0, 1]).
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedKernel {
    stages: Vec<Vec<Vec<f64>>>,
}

impl RelaxedKernel {
    pub fn new(stages: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if stages.is_empty() || stages.iter().any(Vec::is_empty) {
            return Err(TeamError::Config("kernel: empty stage list".into()));
        }
        let obs = stages[0].len();
        let actions = stages[0][0].len();
        for (t, rows) in stages.iter().enumerate() {
            if rows.len() != obs {
                return Err(TeamError::Config(format!(
                    "kernel: stage {t} has {} rows, expected {obs}",
                    rows.len()
                )));
            }
            for (y, row) in rows.iter().enumerate() {
                if row.len() != actions {
                    return Err(TeamError::Config(format!(
                        "kernel: row ({t},{y}) has {} entries, expected {actions}",
                        row.len()
                    )));
                }
                check_probability_vector(row, &format!("kernel row ({t},{y})"))?;
            }
        }
        Ok(Self { stages })
    }

    /// Single-stage kernel from observation rows.
    pub fn single_stage(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![rows])
    }

    /// Uniform kernel of the given shape.
    #[must_use]
    pub fn uniform(shape: KernelShape) -> Self {
        let row = vec![1.0 / shape.actions as f64; shape.actions];
        Self {
            stages: vec![vec![row; shape.obs]; shape.stages],
        }
    }

    /// The 0/1 kernel of a deterministic policy.
    #[must_use]
    pub fn from_deterministic(det: &DeterministicPolicy, action_count: usize) -> Self {
        let stages = det
            .stages()
            .iter()
            .map(|table| {
                table
                    .iter()
                    .map(|&u| {
                        let mut row = vec![0.0; action_count];
                        row[u] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        Self { stages }
    }

    #[must_use]
    pub fn shape(&self) -> KernelShape {
        KernelShape {
            stages: self.stages.len(),
            obs: self.stages[0].len(),
            actions: self.stages[0][0].len(),
        }
    }

    #[must_use]
    pub fn stage_rows(&self, t: usize) -> &[Vec<f64>] {
        &self.stages[t]
    }

    #[must_use]
    pub fn row(&self, t: usize, y: usize) -> &[f64] {
        &self.stages[t][y]
    }

    /// Flat stage-major, row-major entry vector (used for fingerprints and
    /// solver parameterizations).
    #[must_use]
    pub fn flatten(&self) -> Vec<f64> {
        self.stages
            .iter()
            .flat_map(|rows| rows.iter().flat_map(|r| r.iter().copied()))
            .collect()
    }

    /// The deterministic policy this kernel encodes, if every row is a
    /// 0/1 indicator (within 1e-12).
    #[must_use]
    pub fn as_deterministic(&self) -> Option<DeterministicPolicy> {
        let mut stages = Vec::with_capacity(self.stages.len());
        for rows in &self.stages {
            let mut table = Vec::with_capacity(rows.len());
            for row in rows {
                let mut hit = None;
                for (u, &p) in row.iter().enumerate() {
                    if (p - 1.0).abs() <= EXACT_TOL {
                        hit = Some(u);
                    } else if p.abs() > EXACT_TOL {
                        return None;
                    }
                }
                table.push(hit?);
            }
            stages.push(table);
        }
        Some(DeterministicPolicy { stages })
    }
}

// ── Profiles ─────────────────────────────────────────────────────────────

/// One relaxed kernel per DM.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProfile {
    per_dm: Vec<RelaxedKernel>,
}

impl PolicyProfile {
    pub fn new(per_dm: Vec<RelaxedKernel>) -> Result<Self> {
        if per_dm.is_empty() {
            return Err(TeamError::Config("profile: no decision makers".into()));
        }
        let shape = per_dm[0].shape();
        if per_dm.iter().any(|k| k.shape() != shape) {
            return Err(TeamError::Config("profile: kernels have mixed shapes".into()));
        }
        Ok(Self { per_dm })
    }

    /// N copies of the same kernel.
    pub fn iid(kernel: RelaxedKernel, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(TeamError::Config("profile: no decision makers".into()));
        }
        Ok(Self {
            per_dm: vec![kernel; n],
        })
    }

    #[must_use]
    pub fn num_dms(&self) -> usize {
        self.per_dm.len()
    }

    #[must_use]
    pub fn kernels(&self) -> &[RelaxedKernel] {
        &self.per_dm
    }

    #[must_use]
    pub fn kernel(&self, i: usize) -> &RelaxedKernel {
        &self.per_dm[i]
    }

    #[must_use]
    pub fn shape(&self) -> KernelShape {
        self.per_dm[0].shape()
    }
}

// ── Class tags and common randomness ─────────────────────────────────────

/// Structural class of a mixture; see the module docs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClassTag {
    General,
    Ex,
    Co,
    CoSym,
    Pr,
    PrSym,
    Dirac,
}

/// Explicit common-randomness layout: a shared atom z ~ η is drawn first,
/// then each DM i independently draws a base policy from `factors[z][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonRandomness {
    pub eta: Vec<f64>,
    pub base_policies: Vec<RelaxedKernel>,
    /// factors[z][dm][base index] — probability DM `dm` plays that base
    /// policy given atom z.
    pub factors: Vec<Vec<Vec<f64>>>,
}

impl CommonRandomness {
    pub fn validate(&self, num_dms: usize) -> Result<()> {
        check_probability_vector(&self.eta, "common_randomness.eta")?;
        if self.base_policies.is_empty() {
            return Err(TeamError::Config("common_randomness: no base policies".into()));
        }
        let shape = self.base_policies[0].shape();
        if self.base_policies.iter().any(|k| k.shape() != shape) {
            return Err(TeamError::Config(
                "common_randomness: base policies have mixed shapes".into(),
            ));
        }
        if self.factors.len() != self.eta.len() {
            return Err(TeamError::Config(format!(
                "common_randomness: {} factor blocks for {} atoms",
                self.factors.len(),
                self.eta.len()
            )));
        }
        for (z, per_dm) in self.factors.iter().enumerate() {
            if per_dm.len() != num_dms {
                return Err(TeamError::Config(format!(
                    "common_randomness.factors[{z}]: {} DM factors, expected {num_dms}",
                    per_dm.len()
                )));
            }
            for (i, f) in per_dm.iter().enumerate() {
                if f.len() != self.base_policies.len() {
                    return Err(TeamError::Config(format!(
                        "common_randomness.factors[{z}][{i}]: {} entries for {} base policies",
                        f.len(),
                        self.base_policies.len()
                    )));
                }
                check_probability_vector(f, &format!("common_randomness.factors[{z}][{i}]"))?;
            }
        }
        Ok(())
    }

    /// True when, for each z, every DM shares the same factor (within
    /// 1e-12) — the symmetric common-randomness shape.
    #[must_use]
    pub fn symmetric_factors(&self) -> bool {
        self.factors.iter().all(|per_dm| {
            per_dm.iter().all(|f| {
                f.iter()
                    .zip(&per_dm[0])
                    .all(|(a, b)| (a - b).abs() <= EXACT_TOL)
            })
        })
    }

    fn restricted(&self, m: usize) -> Self {
        Self {
            eta: self.eta.clone(),
            base_policies: self.base_policies.clone(),
            factors: self
                .factors
                .iter()
                .map(|per_dm| per_dm[..m].to_vec())
                .collect(),
        }
    }

    fn permuted(&self, sigma: &[usize]) -> Self {
        Self {
            eta: self.eta.clone(),
            base_policies: self.base_policies.clone(),
            factors: self
                .factors
                .iter()
                .map(|per_dm| sigma.iter().map(|&s| per_dm[s].clone()).collect())
                .collect(),
        }
    }
}

// ── Mixtures ─────────────────────────────────────────────────────────────

/// A finitely supported probability measure over N-DM policy profiles.
#[derive(Debug, Clone)]
pub struct Mixture {
    support: Vec<(f64, PolicyProfile)>,
    tag: ClassTag,
    common: Option<CommonRandomness>,
}

impl Mixture {
    /// Builds a mixture after validating weights (nonnegative, summing to
    /// 1 within 1e-12) and profile-shape consistency. The tag is taken at
    /// face value; see [`Mixture::check_tag`] for soundness testing.
    pub fn new(tag: ClassTag, support: Vec<(f64, PolicyProfile)>) -> Result<Self> {
        if support.is_empty() {
            return Err(TeamError::Config("mixture: empty support".into()));
        }
        let weights: Vec<f64> = support.iter().map(|(w, _)| *w).collect();
        check_probability_vector(&weights, "mixture weights")?;
        let n = support[0].1.num_dms();
        let shape = support[0].1.shape();
        for (_, p) in &support {
            if p.num_dms() != n || p.shape() != shape {
                return Err(TeamError::Config(
                    "mixture: atoms disagree on DM count or kernel shape".into(),
                ));
            }
        }
        Ok(Self {
            support,
            tag,
            common: None,
        })
    }

    /// Point mass on a deterministic profile (every kernel 0/1).
    pub fn dirac(profile: PolicyProfile) -> Result<Self> {
        if profile
            .kernels()
            .iter()
            .any(|k| k.as_deterministic().is_none())
        {
            return Err(TeamError::Config(
                "dirac mixture: profile contains a non-deterministic kernel".into(),
            ));
        }
        Self::new(ClassTag::Dirac, vec![(1.0, profile)])
    }

    /// Point mass on a deterministic profile given per-DM policies.
    pub fn dirac_from_policies(policies: &[DeterministicPolicy], action_count: usize) -> Result<Self> {
        let profile = PolicyProfile::new(
            policies
                .iter()
                .map(|d| RelaxedKernel::from_deterministic(d, action_count))
                .collect(),
        )?;
        Self::dirac(profile)
    }

    /// The symmetric i.i.d. profile Π^{⊗N} as a single-atom mixture.
    pub fn symmetric_iid(kernel: RelaxedKernel, n: usize) -> Result<Self> {
        Self::new(ClassTag::PrSym, vec![(1.0, PolicyProfile::iid(kernel, n)?)])
    }

    /// A (possibly asymmetric) product profile as a single-atom mixture.
    pub fn product(kernels: Vec<RelaxedKernel>) -> Result<Self> {
        Self::new(ClassTag::Pr, vec![(1.0, PolicyProfile::new(kernels)?)])
    }

    /// Expands a common-randomness layout into its support: draw z ~ η,
    /// then each DM independently draws a base policy from its factor.
    pub fn from_common_randomness(layout: CommonRandomness, num_dms: usize) -> Result<Self> {
        layout.validate(num_dms)?;
        let b = layout.base_policies.len() as u64;
        let count = b
            .checked_pow(u32::try_from(num_dms).map_err(|_| {
                TeamError::Budget("common randomness: too many DMs to expand".into())
            })?)
            .unwrap_or(u64::MAX);
        if count > COMMON_RANDOMNESS_BUDGET {
            return Err(TeamError::Budget(format!(
                "common randomness: expansion {count} atoms exceeds {COMMON_RANDOMNESS_BUDGET}"
            )));
        }
        let mut merged: HashMap<Vec<u32>, f64> = HashMap::new();
        let base_count = layout.base_policies.len();
        for (z, &ez) in layout.eta.iter().enumerate() {
            if ez == 0.0 {
                continue;
            }
            let mut choice = vec![0usize; num_dms];
            loop {
                let mut w = ez;
                for (i, &b_i) in choice.iter().enumerate() {
                    w *= layout.factors[z][i][b_i];
                }
                if w > 0.0 {
                    let key: Vec<u32> = choice.iter().map(|&b_i| b_i as u32).collect();
                    *merged.entry(key).or_insert(0.0) += w;
                }
                // Odometer over per-DM base choices.
                let mut pos = num_dms;
                let mut done = false;
                loop {
                    if pos == 0 {
                        done = true;
                        break;
                    }
                    pos -= 1;
                    choice[pos] += 1;
                    if choice[pos] < base_count {
                        break;
                    }
                    choice[pos] = 0;
                }
                if done {
                    break;
                }
            }
        }
        let mut keys: Vec<Vec<u32>> = merged.keys().cloned().collect();
        keys.sort_unstable();
        let support: Vec<(f64, PolicyProfile)> = keys
            .into_iter()
            .map(|key| {
                let w = merged[&key];
                let profile = PolicyProfile::new(
                    key.iter()
                        .map(|&b_i| layout.base_policies[b_i as usize].clone())
                        .collect(),
                )
                .expect("base policies validated");
                (w, profile)
            })
            .collect();
        let tag = if layout.symmetric_factors() {
            ClassTag::CoSym
        } else {
            ClassTag::Co
        };
        let mut mix = Self::new(tag, support)?;
        mix.common = Some(layout);
        Ok(mix)
    }

    /// Convex combination α·P + (1−α)·Q of two mixtures over the same
    /// profile space; the tag degrades to GENERAL (combinations do not
    /// preserve structural classes in general).
    pub fn blend(alpha: f64, p: &Mixture, q: &Mixture) -> Result<Mixture> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(TeamError::Config(format!("blend: α = {alpha} outside [0,1]")));
        }
        let mut support = Vec::with_capacity(p.support.len() + q.support.len());
        for (w, prof) in &p.support {
            if alpha * w > 0.0 {
                support.push((alpha * w, prof.clone()));
            }
        }
        for (w, prof) in &q.support {
            if (1.0 - alpha) * w > 0.0 {
                support.push(((1.0 - alpha) * w, prof.clone()));
            }
        }
        Mixture::new(ClassTag::General, support)
    }

    #[must_use]
    pub fn support(&self) -> &[(f64, PolicyProfile)] {
        &self.support
    }

    #[must_use]
    pub fn tag(&self) -> ClassTag {
        self.tag
    }

    #[must_use]
    pub fn common_randomness(&self) -> Option<&CommonRandomness> {
        self.common.as_ref()
    }

    #[must_use]
    pub fn num_dms(&self) -> usize {
        self.support[0].1.num_dms()
    }

    #[must_use]
    pub fn shape(&self) -> KernelShape {
        self.support[0].1.shape()
    }

    /// Verifies that the declared tag is sound for the carried law:
    /// EX ⇒ permutation invariance, PR ⇒ the law factorizes as a product
    /// of its per-DM marginals (PR_SYM: with identical factors),
    /// DIRAC ⇒ single deterministic atom, CO/CO_SYM ⇒ a layout is present,
    /// expands to this law, and (CO_SYM) has symmetric factors.
    pub fn check_tag(&self, tol: f64) -> Result<bool> {
        match self.tag {
            ClassTag::General => Ok(true),
            ClassTag::Ex => is_exchangeable(self, tol),
            ClassTag::Dirac => Ok(self.support.len() == 1
                && self.support[0]
                    .1
                    .kernels()
                    .iter()
                    .all(|k| k.as_deterministic().is_some())),
            ClassTag::Pr => self.factorizes(tol, false),
            ClassTag::PrSym => self.factorizes(tol, true),
            ClassTag::Co | ClassTag::CoSym => {
                let Some(layout) = &self.common else {
                    return Ok(false);
                };
                if self.tag == ClassTag::CoSym && !layout.symmetric_factors() {
                    return Ok(false);
                }
                let expanded = Mixture::from_common_randomness(layout.clone(), self.num_dms())?;
                Ok(mixture_tv(self, &expanded)? <= tol)
            }
        }
    }

    /// Does the law equal the product of its per-DM marginals (within tol
    /// in TV)? With `symmetric` also require identical marginals.
    fn factorizes(&self, tol: f64, symmetric: bool) -> Result<bool> {
        let n = self.num_dms();
        let mut dict = KernelDict::default();
        let law = law_with_dict(self, &mut dict);
        // Per-DM marginals over interned kernel ids.
        let k = dict.kernels.len();
        let mut marginals = vec![vec![0.0f64; k]; n];
        for (key, &w) in &law {
            for (i, &id) in key.iter().enumerate() {
                marginals[i][id as usize] += w;
            }
        }
        if symmetric {
            for m in &marginals[1..] {
                for (a, b) in m.iter().zip(&marginals[0]) {
                    if (a - b).abs() > tol {
                        return Ok(false);
                    }
                }
            }
        }
        // Product law restricted to the union support: compare on all keys
        // of the actual law plus verify the product over the full grid
        // carries no extra mass (grid may be large; bound it).
        let grid: u64 = (k as u64).checked_pow(n as u32).unwrap_or(u64::MAX);
        if grid > COMMON_RANDOMNESS_BUDGET {
            return Err(TeamError::Budget(format!(
                "factorization check: {grid} product atoms exceeds {COMMON_RANDOMNESS_BUDGET}"
            )));
        }
        let mut tv = KahanSum::new();
        let mut key = vec![0usize; n];
        loop {
            let mut prod = 1.0;
            for (i, &id) in key.iter().enumerate() {
                prod *= marginals[i][id];
            }
            let actual = law
                .get(&key.iter().map(|&x| x as u32).collect::<Vec<u32>>())
                .copied()
                .unwrap_or(0.0);
            tv.add((prod - actual).abs());
            let mut pos = n;
            let mut done = false;
            loop {
                if pos == 0 {
                    done = true;
                    break;
                }
                pos -= 1;
                key[pos] += 1;
                if key[pos] < k {
                    break;
                }
                key[pos] = 0;
            }
            if done {
                break;
            }
        }
        Ok(0.5 * tv.value() <= tol)
    }
}

// ── Law fingerprints ─────────────────────────────────────────────────────

/// Interns kernels by quantized fingerprint (resolution 2^−40 ≈ 9.1e-13,
/// i.e. entries closer than ~1e-12 collapse) so profile laws become maps
/// from id-tuples to weights.
#[derive(Default)]
struct KernelDict {
    index: HashMap<Vec<i64>, u32>,
    kernels: Vec<RelaxedKernel>,
}

impl KernelDict {
    fn intern(&mut self, k: &RelaxedKernel) -> u32 {
        let key = fingerprint_slice(&k.flatten());
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        let id = u32::try_from(self.kernels.len()).expect("dictionary fits in u32");
        self.index.insert(key, id);
        self.kernels.push(k.clone());
        id
    }
}

fn law_with_dict(m: &Mixture, dict: &mut KernelDict) -> HashMap<Vec<u32>, f64> {
    let mut law: HashMap<Vec<u32>, f64> = HashMap::new();
    for (w, profile) in &m.support {
        let key: Vec<u32> = profile.kernels().iter().map(|k| dict.intern(k)).collect();
        *law.entry(key).or_insert(0.0) += *w;
    }
    law
}

/// Total variation distance between two mixtures' laws on profile space.
/// Atoms are matched by quantized kernel fingerprints (see above).
pub fn mixture_tv(p: &Mixture, q: &Mixture) -> Result<f64> {
    if p.num_dms() != q.num_dms() || p.shape() != q.shape() {
        return Err(TeamError::Config(
            "mixture_tv: mixtures live on different profile spaces".into(),
        ));
    }
    let mut dict = KernelDict::default();
    let pl = law_with_dict(p, &mut dict);
    let ql = law_with_dict(q, &mut dict);
    let mut acc = KahanSum::new();
    for (key, &w) in &pl {
        acc.add((w - ql.get(key).copied().unwrap_or(0.0)).abs());
    }
    for (key, &w) in &ql {
        if !pl.contains_key(key) {
            acc.add(w.abs());
        }
    }
    Ok(0.5 * acc.value())
}

fn rebuild_sorted(
    merged: HashMap<Vec<u32>, f64>,
    dict: &KernelDict,
    tag: ClassTag,
) -> Result<Mixture> {
    let mut keys: Vec<Vec<u32>> = merged.keys().cloned().collect();
    keys.sort_unstable();
    let support: Vec<(f64, PolicyProfile)> = keys
        .into_iter()
        .map(|key| {
            let w = merged[&key];
            let profile = PolicyProfile::new(
                key.iter()
                    .map(|&id| dict.kernels[id as usize].clone())
                    .collect(),
            )
            .expect("interned kernels are valid");
            (w, profile)
        })
        .collect();
    Mixture::new(tag, support)
}

// ── Permutations ─────────────────────────────────────────────────────────

fn check_permutation(sigma: &[usize], n: usize) -> Result<()> {
    if sigma.len() != n {
        return Err(TeamError::Config(format!(
            "permutation: length {} for {n} DMs",
            sigma.len()
        )));
    }
    let mut seen = vec![false; n];
    for &s in sigma {
        if s >= n || seen[s] {
            return Err(TeamError::Config("permutation: not a bijection".into()));
        }
        seen[s] = true;
    }
    Ok(())
}

/// All permutations of {0..n−1} in a fixed (Heap's algorithm) order.
#[must_use]
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(idx: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == 1 {
            out.push(idx.clone());
            return;
        }
        for i in 0..k {
            heap(idx, k - 1, out);
            if k.is_multiple_of(2) {
                idx.swap(i, k - 1);
            } else {
                idx.swap(0, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..n).collect();
    heap(&mut idx, n, &mut out);
    out
}

/// The permuted mixture P^σ with coordinate i of every atom replaced by
/// coordinate σ(i): P^σ(γ¹ ∈ A₁, …) = P(γ^{σ(1)} ∈ A₁, …). Weights are
/// untouched; every structural class is closed under permutation, so the
/// tag and (permuted) common-randomness layout carry over.
pub fn permute_mixture(p: &Mixture, sigma: &[usize]) -> Result<Mixture> {
    let n = p.num_dms();
    check_permutation(sigma, n)?;
    let support = p
        .support
        .iter()
        .map(|(w, profile)| {
            let per_dm: Vec<RelaxedKernel> =
                sigma.iter().map(|&s| profile.kernel(s).clone()).collect();
            (*w, PolicyProfile::new(per_dm).expect("shape preserved"))
        })
        .collect();
    let mut out = Mixture::new(p.tag, support)?;
    out.common = p.common.as_ref().map(|c| c.permuted(sigma));
    Ok(out)
}

/// Exact symmetrization P̃ = (1/N!) Σ_σ P^σ with duplicate atoms merged
/// (quantized-fingerprint equality) and a canonical sorted atom order.
/// The result is exchangeable by construction; under an exchangeable cost
/// and conditionally i.i.d. observations it has the same expected cost as
/// P because the cost map is linear and permutation-invariant.
pub fn symmetrize(p: &Mixture) -> Result<Mixture> {
    let n = p.num_dms();
    if n > MAX_EXACT_SYMMETRIZATION {
        return Err(TeamError::Budget(format!(
            "symmetrize: N = {n} exceeds the exact cap {MAX_EXACT_SYMMETRIZATION} (N! atoms); \
             use symmetrize_sampled"
        )));
    }
    let mut dict = KernelDict::default();
    let atom_keys: Vec<(f64, Vec<u32>)> = p
        .support
        .iter()
        .map(|(w, profile)| {
            (
                *w,
                profile.kernels().iter().map(|k| dict.intern(k)).collect(),
            )
        })
        .collect();
    let perms = all_permutations(n);
    let scale = 1.0 / perms.len() as f64;
    let mut merged: HashMap<Vec<u32>, f64> = HashMap::new();
    for sigma in &perms {
        for (w, key) in &atom_keys {
            let permuted: Vec<u32> = sigma.iter().map(|&s| key[s]).collect();
            *merged.entry(permuted).or_insert(0.0) += w * scale;
        }
    }
    rebuild_sorted(merged, &dict, ClassTag::Ex)
}

/// Sampled symmetrization: a uniform average over `draws` random
/// permutations (seeded). Expected cost is preserved exactly — every P^σ
/// has the cost of P — but the result is only approximately exchangeable,
/// so it is tagged GENERAL.
pub fn symmetrize_sampled(p: &Mixture, draws: usize, seed: u64) -> Result<Mixture> {
    if draws == 0 {
        return Err(TeamError::Config("symmetrize_sampled: zero draws".into()));
    }
    let n = p.num_dms();
    let mut dict = KernelDict::default();
    let atom_keys: Vec<(f64, Vec<u32>)> = p
        .support
        .iter()
        .map(|(w, profile)| {
            (
                *w,
                profile.kernels().iter().map(|k| dict.intern(k)).collect(),
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / draws as f64;
    let mut merged: HashMap<Vec<u32>, f64> = HashMap::new();
    for _ in 0..draws {
        let mut sigma: Vec<usize> = (0..n).collect();
        sigma.shuffle(&mut rng);
        for (w, key) in &atom_keys {
            let permuted: Vec<u32> = sigma.iter().map(|&s| key[s]).collect();
            *merged.entry(permuted).or_insert(0.0) += w * scale;
        }
    }
    rebuild_sorted(merged, &dict, ClassTag::General)
}

/// True iff the law is invariant (within `tol` in TV) under every
/// permutation of the DM coordinates. Enumerates all N! permutations, so
/// N ≤ 8.
pub fn is_exchangeable(p: &Mixture, tol: f64) -> Result<bool> {
    let n = p.num_dms();
    if n > MAX_EXACT_SYMMETRIZATION {
        return Err(TeamError::Budget(format!(
            "is_exchangeable: N = {n} exceeds the exact cap {MAX_EXACT_SYMMETRIZATION}"
        )));
    }
    let mut dict = KernelDict::default();
    let law = law_with_dict(p, &mut dict);
    for sigma in all_permutations(n) {
        let mut permuted: HashMap<Vec<u32>, f64> = HashMap::with_capacity(law.len());
        for (key, &w) in &law {
            let k: Vec<u32> = sigma.iter().map(|&s| key[s]).collect();
            *permuted.entry(k).or_insert(0.0) += w;
        }
        let mut acc = KahanSum::new();
        for (key, &w) in &law {
            acc.add((w - permuted.get(key).copied().unwrap_or(0.0)).abs());
        }
        for (key, &w) in &permuted {
            if !law.contains_key(key) {
                acc.add(w.abs());
            }
        }
        if 0.5 * acc.value() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Marginal of the first m DM coordinates. Weights are preserved and
/// duplicate truncated atoms merge. Tags survive restriction whenever the
/// class provably does: exchangeable marginals of exchangeable laws,
/// truncated products of products (identical factors stay identical),
/// truncated common-randomness layouts, deterministic points, and GENERAL
/// trivially.
pub fn restrict(p: &Mixture, m: usize) -> Result<Mixture> {
    let n = p.num_dms();
    if m == 0 || m > n {
        return Err(TeamError::Config(format!(
            "restrict: m = {m} outside 1..={n}"
        )));
    }
    let mut dict = KernelDict::default();
    let mut merged: HashMap<Vec<u32>, f64> = HashMap::new();
    for (w, profile) in &p.support {
        let key: Vec<u32> = profile.kernels()[..m]
            .iter()
            .map(|k| dict.intern(k))
            .collect();
        *merged.entry(key).or_insert(0.0) += *w;
    }
    let mut out = rebuild_sorted(merged, &dict, p.tag)?;
    out.common = p.common.as_ref().map(|c| c.restricted(m));
    Ok(out)
}

/// m-coordinate marginal of the uniform-index extension of an
/// exchangeable law: the law of (γ^{I₁}, …, γ^{I_m}) where I_j are i.i.d.
/// uniform on {1..N}. Enumerates all N^m index tuples exactly. The result
/// is exchangeable by construction, and its TV distance to `restrict(p,m)`
/// obeys the m(m−1)/(2N) bound audited in the scaling module.
pub fn df_extend_marginal(p: &Mixture, m: usize) -> Result<Mixture> {
    let n = p.num_dms();
    if m == 0 {
        return Err(TeamError::Config("extension: m must be positive".into()));
    }
    let tuples = (n as u64)
        .checked_pow(u32::try_from(m).map_err(|_| TeamError::Budget("extension: m too large".into()))?)
        .unwrap_or(u64::MAX);
    if tuples > EXTENSION_TUPLE_BUDGET {
        return Err(TeamError::Budget(format!(
            "extension: N^m = {tuples} index tuples exceeds {EXTENSION_TUPLE_BUDGET}"
        )));
    }
    if n <= MAX_EXACT_SYMMETRIZATION && !is_exchangeable(p, 1e-9)? {
        return Err(TeamError::Config(
            "extension: input law is not exchangeable".into(),
        ));
    }
    let mut dict = KernelDict::default();
    let atom_keys: Vec<(f64, Vec<u32>)> = p
        .support
        .iter()
        .map(|(w, profile)| {
            (
                *w,
                profile.kernels().iter().map(|k| dict.intern(k)).collect(),
            )
        })
        .collect();
    let scale = 1.0 / tuples as f64;
    // Pack id-tuples into u64 keys when they fit (they always do within
    // the tuple budget, but keep the general path for safety).
    let bits = usize::BITS - (dict.kernels.len().max(2) - 1).leading_zeros();
    let packed_ok = (bits as usize) * m <= 64;
    let mut merged_packed: HashMap<u64, f64> = HashMap::new();
    let mut merged_vec: HashMap<Vec<u32>, f64> = HashMap::new();
    let mut index = vec![0usize; m];
    loop {
        for (w, key) in &atom_keys {
            if packed_ok {
                let mut packed: u64 = 0;
                for &i in &index {
                    packed = (packed << bits) | u64::from(key[i]);
                }
                *merged_packed.entry(packed).or_insert(0.0) += w * scale;
            } else {
                let k: Vec<u32> = index.iter().map(|&i| key[i]).collect();
                *merged_vec.entry(k).or_insert(0.0) += w * scale;
            }
        }
        // Odometer over index tuples (lexicographic).
        let mut pos = m;
        let mut done = false;
        loop {
            if pos == 0 {
                done = true;
                break;
            }
            pos -= 1;
            index[pos] += 1;
            if index[pos] < n {
                break;
            }
            index[pos] = 0;
        }
        if done {
            break;
        }
    }
    if packed_ok {
        let mask = (1u64 << bits) - 1;
        for (packed, w) in merged_packed {
            let mut key = vec![0u32; m];
            let mut rest = packed;
            for j in (0..m).rev() {
                key[j] = u32::try_from(rest & mask).expect("masked");
                rest >>= bits;
            }
            merged_vec.insert(key, w);
        }
    }
    rebuild_sorted(merged_vec, &dict, ClassTag::Ex)
}

// ── de Finetti extraction ────────────────────────────────────────────────

/// Candidate family for extraction: an explicit kernel list, or all
/// kernels whose rows lie on the simplex grid with the given pitch
/// denominator (default 16).
#[derive(Debug, Clone)]
pub enum CandidateKernels {
    List(Vec<RelaxedKernel>),
    Grid { pitch: usize },
}

/// Result of fitting Σ_z η(z)·(kernel_z)^{⊗m} to an exchangeable law.
#[derive(Debug, Clone)]
pub struct DeFinettiFit {
    /// Deduplicated candidate kernels, in presentation order.
    pub kernels: Vec<RelaxedKernel>,
    /// Mixing weights over `kernels` (nonnegative, summing to 1).
    pub weights: Vec<f64>,
    /// ℓ² distance between the law vector and the fitted combination.
    pub residual_l2: f64,
    /// Total-variation distance between the law and the fitted mixture.
    pub residual_tv: f64,
    /// residual_l2 ≤ tol — the law is (numerically) a mixture of i.i.d.
    /// profiles from the candidate family.
    pub certified: bool,
}

/// Fits mixing weights η ≥ 0, Ση = 1 minimizing the ℓ² distance between
/// the profile-law vector of `p` and Σ_z η(z)·δ_{(kernel_z,…,kernel_z)}.
///
/// Distinct candidates occupy distinct atoms of the law vector, so the
/// quadratic program reduces exactly to the Euclidean projection of the
/// matched-weight vector onto the probability simplex; off-diagonal mass
/// of `p` is unreachable and lands in the residual. A zero residual
/// certifies that the law is a mixture of symmetric i.i.d. profiles from
/// the candidate family; a positive residual quantifies how far this
/// finite-m law is from any such mixture.
pub fn definetti_extract(
    p: &Mixture,
    candidates: &CandidateKernels,
    tol: f64,
) -> Result<DeFinettiFit> {
    let m = p.num_dms();
    let shape = p.shape();
    let kernels = match candidates {
        CandidateKernels::List(list) => {
            if list.is_empty() {
                return Err(TeamError::Config("extraction: empty candidate set".into()));
            }
            if list.iter().any(|k| k.shape() != shape) {
                return Err(TeamError::Config(
                    "extraction: candidate shape does not match the mixture".into(),
                ));
            }
            list.clone()
        }
        CandidateKernels::Grid { pitch } => grid_kernels(shape, *pitch)?,
    };
    let mut dict = KernelDict::default();
    let law = law_with_dict(p, &mut dict);
    // Deduplicate candidates by fingerprint; keep first occurrence.
    let mut seen: HashSet<u32> = HashSet::new();
    let mut unique: Vec<(u32, RelaxedKernel)> = Vec::new();
    for k in kernels {
        let id = dict.intern(&k);
        if seen.insert(id) {
            unique.push((id, k));
        }
    }
    // Matched weights: law mass sitting exactly on each candidate's
    // identical-profile atom.
    let matched: Vec<f64> = unique
        .iter()
        .map(|(id, _)| law.get(&vec![*id; m]).copied().unwrap_or(0.0))
        .collect();
    let eta = project_to_simplex(&matched);
    // Residual over the union of atoms: candidate diagonals plus whatever
    // mass of `p` no candidate can reach.
    let diag_keys: Vec<Vec<u32>> = unique.iter().map(|(id, _)| vec![*id; m]).collect();
    let mut l2 = KahanSum::new();
    let mut tv = KahanSum::new();
    for (z, key) in diag_keys.iter().enumerate() {
        let d = eta[z] - law.get(key).copied().unwrap_or(0.0);
        l2.add(d * d);
        tv.add(d.abs());
    }
    for (key, &w) in &law {
        let on_diagonal = key.windows(2).all(|ab| ab[0] == ab[1])
            && seen.contains(&key[0])
            && diag_keys.iter().any(|k| k == key);
        if !on_diagonal {
            l2.add(w * w);
            tv.add(w.abs());
        }
    }
    let residual_l2 = l2.value().max(0.0).sqrt();
    let residual_tv = 0.5 * tv.value();
    Ok(DeFinettiFit {
        kernels: unique.into_iter().map(|(_, k)| k).collect(),
        weights: eta,
        residual_l2,
        residual_tv,
        certified: residual_l2 <= tol,
    })
}

/// All kernels whose rows lie on the `1/pitch` simplex grid (Cartesian
/// product over stage-rows, lexicographic order).
fn grid_kernels(shape: KernelShape, pitch: usize) -> Result<Vec<RelaxedKernel>> {
    if pitch == 0 {
        return Err(TeamError::Config("extraction: grid pitch must be positive".into()));
    }
    let per_row = simplex_grid_len(shape.actions, pitch);
    let rows_total = shape.stages * shape.obs;
    let count = per_row
        .checked_pow(u32::try_from(rows_total).map_err(|_| {
            TeamError::Budget("extraction: too many kernel rows".into())
        })?)
        .unwrap_or(u64::MAX);
    if count > DECOMPOSITION_BUDGET {
        return Err(TeamError::Budget(format!(
            "extraction: {count} grid kernels exceeds {DECOMPOSITION_BUDGET}"
        )));
    }
    let row_grid = simplex_grid(shape.actions, pitch);
    let mut out = Vec::with_capacity(count as usize);
    let mut choice = vec![0usize; rows_total];
    loop {
        let mut stages = Vec::with_capacity(shape.stages);
        for t in 0..shape.stages {
            let rows: Vec<Vec<f64>> = (0..shape.obs)
                .map(|y| row_grid[choice[t * shape.obs + y]].clone())
                .collect();
            stages.push(rows);
        }
        out.push(RelaxedKernel::new(stages)?);
        let mut pos = rows_total;
        let mut done = false;
        loop {
            if pos == 0 {
                done = true;
                break;
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < row_grid.len() {
                break;
            }
            choice[pos] = 0;
        }
        if done {
            break;
        }
    }
    Ok(out)
}

// ── Vertex decomposition ─────────────────────────────────────────────────

/// Decomposes a kernel into its deterministic extreme points via
/// independent row decomposition: the map g (one action per stage-row)
/// receives weight Π_{t,y} k(g(t,y) | t,y). Zero-weight maps are dropped;
/// the kept weights sum to 1 because rows do. Re-mixing the atoms
/// reproduces the kernel entrywise (within 1e-12).
pub fn kernel_to_deterministic_mixture(k: &RelaxedKernel) -> Result<Mixture> {
    let shape = k.shape();
    let rows_total = shape.stages * shape.obs;
    let count = (shape.actions as u64)
        .checked_pow(u32::try_from(rows_total).map_err(|_| {
            TeamError::Budget("decomposition: too many kernel rows".into())
        })?)
        .unwrap_or(u64::MAX);
    if count > DECOMPOSITION_BUDGET {
        return Err(TeamError::Budget(format!(
            "decomposition: |U|^(|Y|·T) = {count} maps exceeds {DECOMPOSITION_BUDGET}"
        )));
    }
    let mut support = Vec::new();
    let mut choice = vec![0usize; rows_total];
    loop {
        let mut w = 1.0;
        for t in 0..shape.stages {
            for y in 0..shape.obs {
                w *= k.row(t, y)[choice[t * shape.obs + y]];
            }
        }
        if w > 0.0 {
            let stages: Vec<Vec<usize>> = (0..shape.stages)
                .map(|t| (0..shape.obs).map(|y| choice[t * shape.obs + y]).collect())
                .collect();
            let det = DeterministicPolicy::new(stages, shape.actions)?;
            let profile =
                PolicyProfile::new(vec![RelaxedKernel::from_deterministic(&det, shape.actions)])?;
            support.push((w, profile));
        }
        let mut pos = rows_total;
        let mut done = false;
        loop {
            if pos == 0 {
                done = true;
                break;
            }
            pos -= 1;
            choice[pos] += 1;
            if choice[pos] < shape.actions {
                break;
            }
            choice[pos] = 0;
        }
        if done {
            break;
        }
    }
    let tag = if support.len() == 1 {
        ClassTag::Dirac
    } else {
        ClassTag::General
    };
    Mixture::new(tag, support)
}

/// Weighted average of a single-DM mixture's kernels — the inverse of
/// [`kernel_to_deterministic_mixture`] used by its soundness tests.
pub fn single_dm_mixture_to_kernel(m: &Mixture) -> Result<RelaxedKernel> {
    if m.num_dms() != 1 {
        return Err(TeamError::Config("re-mixing expects a single-DM mixture".into()));
    }
    let shape = m.shape();
    let mut stages = vec![vec![vec![0.0f64; shape.actions]; shape.obs]; shape.stages];
    for (w, profile) in m.support() {
        let k = profile.kernel(0);
        for (t, rows) in stages.iter_mut().enumerate() {
            for (y, row) in rows.iter_mut().enumerate() {
                for (u, slot) in row.iter_mut().enumerate() {
                    *slot += w * k.row(t, y)[u];
                }
            }
        }
    }
    RelaxedKernel::new(stages)
}

// ── Serialization ────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KernelDoc {
    Staged(Vec<Vec<Vec<f64>>>),
    SingleStage(Vec<Vec<f64>>),
}

impl From<&RelaxedKernel> for KernelDoc {
    fn from(k: &RelaxedKernel) -> Self {
        if k.stages.len() == 1 {
            KernelDoc::SingleStage(k.stages[0].clone())
        } else {
            KernelDoc::Staged(k.stages.clone())
        }
    }
}

impl TryFrom<KernelDoc> for RelaxedKernel {
    type Error = TeamError;
    fn try_from(doc: KernelDoc) -> Result<Self> {
        match doc {
            KernelDoc::Staged(stages) => RelaxedKernel::new(stages),
            KernelDoc::SingleStage(rows) => RelaxedKernel::single_stage(rows),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AtomDoc {
    weight: f64,
    profile: Vec<KernelDoc>,
}

#[derive(Serialize, Deserialize)]
struct CommonRandomnessDoc {
    eta: Vec<f64>,
    base_policies: Vec<KernelDoc>,
    factors: Vec<Vec<Vec<f64>>>,
}

/// On-disk mixture document: `{tag, atoms: [{weight, profile: [...]}],
/// common_randomness?}`. Kernels serialize as `[stage][obs][action]`
/// arrays, with a `[obs][action]` shorthand for single-stage kernels.
#[derive(Serialize, Deserialize)]
pub struct MixtureDoc {
    tag: ClassTag,
    atoms: Vec<AtomDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    common_randomness: Option<CommonRandomnessDoc>,
}

impl From<&Mixture> for MixtureDoc {
    fn from(m: &Mixture) -> Self {
        MixtureDoc {
            tag: m.tag,
            atoms: m
                .support
                .iter()
                .map(|(w, profile)| AtomDoc {
                    weight: *w,
                    profile: profile.kernels().iter().map(KernelDoc::from).collect(),
                })
                .collect(),
            common_randomness: m.common.as_ref().map(|c| CommonRandomnessDoc {
                eta: c.eta.clone(),
                base_policies: c.base_policies.iter().map(KernelDoc::from).collect(),
                factors: c.factors.clone(),
            }),
        }
    }
}

impl TryFrom<MixtureDoc> for Mixture {
    type Error = TeamError;
    fn try_from(doc: MixtureDoc) -> Result<Self> {
        let support = doc
            .atoms
            .into_iter()
            .map(|atom| {
                let kernels: Result<Vec<RelaxedKernel>> =
                    atom.profile.into_iter().map(RelaxedKernel::try_from).collect();
                Ok((atom.weight, PolicyProfile::new(kernels?)?))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut m = Mixture::new(doc.tag, support)?;
        if let Some(c) = doc.common_randomness {
            let base: Result<Vec<RelaxedKernel>> =
                c.base_policies.into_iter().map(RelaxedKernel::try_from).collect();
            let layout = CommonRandomness {
                eta: c.eta,
                base_policies: base?,
                factors: c.factors,
            };
            layout.validate(m.num_dms())?;
            m.common = Some(layout);
        }
        Ok(m)
    }
}

impl Mixture {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MixtureDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MixtureDoc = serde_json::from_str(text)?;
        Mixture::try_from(doc)
    }
}

/// A deliberately small dictionary of semi-random but deterministic
/// kernels used by tests and generators.
pub fn bernoulli_kernel(p_one: f64) -> Result<RelaxedKernel> {
    RelaxedKernel::single_stage(vec![vec![1.0 - p_one, p_one]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det_profile(actions: &[usize]) -> PolicyProfile {
        let per_dm = actions
            .iter()
            .map(|&u| {
                RelaxedKernel::from_deterministic(
                    &DeterministicPolicy::constant(u, 1, 2).unwrap(),
                    2,
                )
            })
            .collect();
        PolicyProfile::new(per_dm).unwrap()
    }

    fn dirac_pair() -> Mixture {
        // ½ δ_(a,b) + ½ δ_(b,a) with a = const-0, b = const-1.
        Mixture::new(
            ClassTag::Ex,
            vec![(0.5, det_profile(&[0, 1])), (0.5, det_profile(&[1, 0]))],
        )
        .unwrap()
    }

    #[test]
    fn kernel_constructors_validate_rows() {
        assert!(RelaxedKernel::single_stage(vec![vec![0.6, 0.5]]).is_err());
        assert!(RelaxedKernel::single_stage(vec![vec![0.5, 0.5], vec![1.0]]).is_err());
        let k = RelaxedKernel::uniform(KernelShape {
            stages: 2,
            obs: 3,
            actions: 2,
        });
        assert_eq!(k.shape().stages, 2);
        assert!(k.as_deterministic().is_none());
        let d = RelaxedKernel::from_deterministic(
            &DeterministicPolicy::constant(1, 3, 2).unwrap(),
            2,
        );
        assert_eq!(d.as_deterministic().unwrap().action(0, 2), 1);
    }

    #[test]
    fn permute_swaps_coordinates_and_inverts_exactly() {
        let p = Mixture::dirac(det_profile(&[0, 1])).unwrap();
        let swapped = permute_mixture(&p, &[1, 0]).unwrap();
        assert_eq!(mixture_tv(&swapped, &Mixture::dirac(det_profile(&[1, 0])).unwrap()).unwrap(), 0.0);
        // Group action: applying σ then σ⁻¹ restores the atom set.
        let three = Mixture::dirac(det_profile(&[0, 1, 1])).unwrap();
        let sigma = vec![1, 2, 0];
        let inverse = vec![2, 0, 1];
        let roundtrip = permute_mixture(&permute_mixture(&three, &sigma).unwrap(), &inverse).unwrap();
        assert_eq!(mixture_tv(&roundtrip, &three).unwrap(), 0.0);
        assert!(permute_mixture(&p, &[0, 0]).is_err(), "not a bijection");
    }

    #[test]
    fn three_cycle_matches_the_coordinate_convention() {
        // With new_i = old_{σ(i)} and σ = (0→1, 1→2, 2→0) written as the
        // index vector [1, 2, 0], δ_(a,b,c) maps to δ_(b,c,a); the inverse
        // convention gives δ_(c,a,b).
        let abc = Mixture::new(
            ClassTag::General,
            vec![(1.0, det_profile(&[0, 1, 1]))],
        )
        .unwrap();
        let sigma = vec![1, 2, 0];
        let got = permute_mixture(&abc, &sigma).unwrap();
        let expect = Mixture::new(ClassTag::General, vec![(1.0, det_profile(&[1, 1, 0]))]).unwrap();
        assert_eq!(mixture_tv(&got, &expect).unwrap(), 0.0);
        let inv = vec![2, 0, 1];
        let got_inv = permute_mixture(&abc, &inv).unwrap();
        let expect_inv =
            Mixture::new(ClassTag::General, vec![(1.0, det_profile(&[1, 0, 1]))]).unwrap();
        assert_eq!(mixture_tv(&got_inv, &expect_inv).unwrap(), 0.0);
    }

    #[test]
    fn exchangeable_mixtures_are_fixed_points_of_permutation() {
        let p = dirac_pair();
        for sigma in all_permutations(2) {
            let q = permute_mixture(&p, &sigma).unwrap();
            assert_eq!(mixture_tv(&p, &q).unwrap(), 0.0);
        }
    }

    #[test]
    fn symmetrize_uniformizes_a_dirac_atom() {
        let p = Mixture::dirac(det_profile(&[0, 1])).unwrap();
        let s = symmetrize(&p).unwrap();
        assert_eq!(s.support().len(), 2);
        for (w, _) in s.support() {
            assert!((w - 0.5).abs() < 1e-15, "uniform over S₂, got weight {w}");
        }
        assert!(is_exchangeable(&s, 1e-12).unwrap());
        assert_eq!(s.tag(), ClassTag::Ex);
    }

    #[test]
    fn symmetrize_is_idempotent_and_fixes_exchangeable_inputs() {
        let p = dirac_pair();
        let s = symmetrize(&p).unwrap();
        assert!(mixture_tv(&p, &s).unwrap() < 1e-12, "already exchangeable");
        let ss = symmetrize(&s).unwrap();
        assert!(mixture_tv(&s, &ss).unwrap() < 1e-12, "idempotent");
    }

    #[test]
    fn symmetrize_respects_the_team_size_cap() {
        let nine = Mixture::dirac(det_profile(&[0, 1, 0, 1, 0, 1, 0, 1, 0])).unwrap();
        assert!(matches!(symmetrize(&nine), Err(TeamError::Budget(_))));
        // The sampled variant still runs and keeps weights normalized.
        let s = symmetrize_sampled(&nine, 64, 11).unwrap();
        let total: f64 = s.support().iter().map(|(w, _)| w).sum();
        assert!((total - 1.0).abs() < 1e-12, "sampled weights sum to {total}");
    }

    #[test]
    fn exchangeability_detects_asymmetric_atoms() {
        assert!(!is_exchangeable(&Mixture::dirac(det_profile(&[0, 1])).unwrap(), 1e-12).unwrap());
        let iid = Mixture::symmetric_iid(bernoulli_kernel(0.25).unwrap(), 3).unwrap();
        assert!(is_exchangeable(&iid, 1e-12).unwrap());
    }

    #[test]
    fn restriction_marginalizes_and_keeps_survivable_tags() {
        let p = dirac_pair();
        assert_eq!(mixture_tv(&restrict(&p, 2).unwrap(), &p).unwrap(), 0.0);
        let one = restrict(&p, 1).unwrap();
        assert_eq!(one.support().len(), 2);
        for (w, _) in one.support() {
            assert!((w - 0.5).abs() < 1e-15);
        }
        assert_eq!(one.tag(), ClassTag::Ex);

        let iid = Mixture::symmetric_iid(bernoulli_kernel(0.5).unwrap(), 4).unwrap();
        let r = restrict(&iid, 2).unwrap();
        assert_eq!(r.tag(), ClassTag::PrSym);
        assert_eq!(
            mixture_tv(&r, &Mixture::symmetric_iid(bernoulli_kernel(0.5).unwrap(), 2).unwrap())
                .unwrap(),
            0.0
        );
        assert!(restrict(&p, 0).is_err());
        assert!(restrict(&p, 3).is_err());
    }

    #[test]
    fn extension_of_the_dirac_pair_is_uniform_and_attains_the_bound() {
        // N = 2, m = 2: index pairs (1,1),(1,2),(2,1),(2,2) each ¼; the
        // diagonal pairs copy one coordinate, so the law is uniform over
        // {(a,a),(a,b),(b,a),(b,b)} and TV to the original ½+½ law is 0.5
        // = m(m−1)/(2N).
        let p = dirac_pair();
        let ext = df_extend_marginal(&p, 2).unwrap();
        assert_eq!(ext.support().len(), 4);
        for (w, _) in ext.support() {
            assert!((w - 0.25).abs() < 1e-15, "uniform extension, got {w}");
        }
        let tv = mixture_tv(&restrict(&p, 2).unwrap(), &ext).unwrap();
        assert!((tv - 0.5).abs() < 1e-15, "bound attained: tv = {tv}");
        assert!(is_exchangeable(&ext, 1e-12).unwrap());
    }

    #[test]
    fn extension_of_an_iid_pair_matches_hand_enumeration() {
        // Each DM independently uniform over {a, b}: law ¼ on each pair.
        // Index pairs (1,1) and (2,2) duplicate a coordinate (law ½/½ on
        // the diagonal); (1,2) and (2,1) keep independence (¼ each).
        // Mixing: (a,a) = ½·½ + ½·¼ = ⅜, (a,b) = ½·¼ = ⅛, etc.; TV to the
        // original is 2·(⅜−¼)/... = ½(⅛+⅛+⅛+⅛) = 0.25 ≤ 0.5.
        let a = RelaxedKernel::from_deterministic(
            &DeterministicPolicy::constant(0, 1, 2).unwrap(),
            2,
        );
        let b = RelaxedKernel::from_deterministic(
            &DeterministicPolicy::constant(1, 1, 2).unwrap(),
            2,
        );
        let mut support = Vec::new();
        for &(i, j) in &[(0, 0), (0, 1), (1, 0), (1, 1)] {
            let pick = |x: usize| if x == 0 { a.clone() } else { b.clone() };
            support.push((0.25, PolicyProfile::new(vec![pick(i), pick(j)]).unwrap()));
        }
        let p = Mixture::new(ClassTag::PrSym, support).unwrap();
        let ext = df_extend_marginal(&p, 2).unwrap();
        let mut weights: Vec<f64> = ext.support().iter().map(|(w, _)| *w).collect();
        weights.sort_by(f64::total_cmp);
        assert_eq!(weights, vec![0.125, 0.125, 0.375, 0.375]);
        let tv = mixture_tv(&p, &ext).unwrap();
        assert!((tv - 0.25).abs() < 1e-15, "tv = {tv}");
    }

    #[test]
    fn extension_with_one_index_is_the_one_dm_restriction() {
        let p = dirac_pair();
        let tv = mixture_tv(
            &df_extend_marginal(&p, 1).unwrap(),
            &restrict(&p, 1).unwrap(),
        )
        .unwrap();
        assert_eq!(tv, 0.0);
    }

    #[test]
    fn extension_rejects_non_exchangeable_input_and_blown_budgets() {
        let p = Mixture::dirac(det_profile(&[0, 1])).unwrap();
        assert!(matches!(df_extend_marginal(&p, 2), Err(TeamError::Config(_))));
        let iid = Mixture::symmetric_iid(bernoulli_kernel(0.5).unwrap(), 100).unwrap();
        assert!(matches!(
            df_extend_marginal(&iid, 4),
            Err(TeamError::Budget(_))
        ));
    }

    #[test]
    fn extraction_recovers_exact_atoms_and_two_atom_mixtures() {
        let q1 = bernoulli_kernel(0.25).unwrap();
        let q2 = bernoulli_kernel(0.75).unwrap();
        // Single atom: weight 1, zero residual.
        let single = Mixture::symmetric_iid(q1.clone(), 3).unwrap();
        let fit = definetti_extract(
            &single,
            &CandidateKernels::List(vec![q1.clone(), q2.clone()]),
            1e-10,
        )
        .unwrap();
        assert!((fit.weights[0] - 1.0).abs() < 1e-12 && fit.weights[1].abs() < 1e-12);
        assert!(fit.residual_l2 <= 1e-10 && fit.certified);

        // 0.3 q₁^{⊗2} + 0.7 q₂^{⊗2}: exact recovery.
        let blend = Mixture::new(
            ClassTag::CoSym,
            vec![
                (0.3, PolicyProfile::iid(q1.clone(), 2).unwrap()),
                (0.7, PolicyProfile::iid(q2.clone(), 2).unwrap()),
            ],
        )
        .unwrap();
        let fit = definetti_extract(
            &blend,
            &CandidateKernels::List(vec![q1, q2]),
            1e-8,
        )
        .unwrap();
        assert!((fit.weights[0] - 0.3).abs() < 1e-8, "w₀ = {}", fit.weights[0]);
        assert!((fit.weights[1] - 0.7).abs() < 1e-8, "w₁ = {}", fit.weights[1]);
        assert!(fit.residual_l2 <= 1e-8 && fit.residual_tv <= 1e-8);
    }

    #[test]
    fn extraction_cannot_reach_the_antisymmetric_pair() {
        // The ½δ_(a,b) + ½δ_(b,a) law has no diagonal mass, so every
        // candidate diagonal stays unmatched and the projection spreads η
        // uniformly: the residual must stay macroscopic.
        let fit = definetti_extract(&dirac_pair(), &CandidateKernels::Grid { pitch: 16 }, 1e-8)
            .unwrap();
        assert!(fit.residual_l2 > 0.01, "residual_l2 = {}", fit.residual_l2);
        assert!(fit.residual_tv > 0.01, "residual_tv = {}", fit.residual_tv);
        assert!(!fit.certified);
    }

    #[test]
    fn extraction_rejects_empty_candidates() {
        assert!(definetti_extract(
            &dirac_pair(),
            &CandidateKernels::List(vec![]),
            1e-8
        )
        .is_err());
    }

    #[test]
    fn vertex_decomposition_matches_row_products() {
        // Already extreme: one atom, weight 1.
        let extreme = RelaxedKernel::single_stage(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = kernel_to_deterministic_mixture(&extreme).unwrap();
        assert_eq!(m.support().len(), 1);
        assert_eq!(m.tag(), ClassTag::Dirac);

        // One observation, fair row: two maps at ½ each.
        let fair = bernoulli_kernel(0.5).unwrap();
        let m = kernel_to_deterministic_mixture(&fair).unwrap();
        assert_eq!(m.support().len(), 2);
        for (w, _) in m.support() {
            assert!((w - 0.5).abs() < 1e-15);
        }

        // Two observations, fair rows: four maps at ¼ each.
        let two = RelaxedKernel::single_stage(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let m = kernel_to_deterministic_mixture(&two).unwrap();
        assert_eq!(m.support().len(), 4);
        for (w, _) in m.support() {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn vertex_decomposition_reconstructs_the_kernel() {
        let k = RelaxedKernel::single_stage(vec![vec![0.2, 0.8], vec![0.65, 0.35]]).unwrap();
        let m = kernel_to_deterministic_mixture(&k).unwrap();
        let back = single_dm_mixture_to_kernel(&m).unwrap();
        for y in 0..2 {
            for u in 0..2 {
                assert!(
                    (back.row(0, y)[u] - k.row(0, y)[u]).abs() < 1e-12,
                    "entry ({y},{u}) drifted"
                );
            }
        }
    }

    #[test]
    fn tag_checks_accept_sound_and_reject_unsound_claims() {
        let iid = Mixture::symmetric_iid(bernoulli_kernel(0.5).unwrap(), 2).unwrap();
        assert!(iid.check_tag(1e-9).unwrap());
        let wrong = Mixture::new(
            ClassTag::PrSym,
            vec![(1.0, det_profile(&[0, 1]))],
        )
        .unwrap();
        assert!(!wrong.check_tag(1e-9).unwrap(), "asymmetric product claimed PR_SYM");
        assert!(dirac_pair().check_tag(1e-9).unwrap(), "EX tag on the symmetric pair");
        let fake_dirac = Mixture::new(
            ClassTag::Dirac,
            vec![(1.0, PolicyProfile::iid(bernoulli_kernel(0.5).unwrap(), 2).unwrap())],
        )
        .unwrap();
        assert!(!fake_dirac.check_tag(1e-9).unwrap());
    }

    #[test]
    fn common_randomness_expansion_merges_and_tags() {
        let a = bernoulli_kernel(0.25).unwrap();
        let b = bernoulli_kernel(0.75).unwrap();
        let layout = CommonRandomness {
            eta: vec![0.5, 0.5],
            base_policies: vec![a, b],
            factors: vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.0]], // z = 0: both DMs play a
                vec![vec![0.0, 1.0], vec![0.0, 1.0]], // z = 1: both DMs play b
            ],
        };
        let m = Mixture::from_common_randomness(layout, 2).unwrap();
        assert_eq!(m.tag(), ClassTag::CoSym);
        assert_eq!(m.support().len(), 2);
        assert!(m.check_tag(1e-9).unwrap());
        assert!(is_exchangeable(&m, 1e-12).unwrap());
    }

    #[test]
    fn mixture_json_roundtrips() {
        let m = dirac_pair();
        let text = m.to_json().unwrap();
        let back = Mixture::from_json(&text).unwrap();
        assert_eq!(back.tag(), ClassTag::Ex);
        assert_eq!(mixture_tv(&m, &back).unwrap(), 0.0);
        // Single-stage kernels may be written in the flat shorthand.
        let flat = r#"{"tag":"PR_SYM","atoms":[{"weight":1.0,"profile":[[[0.5,0.5]],[[0.5,0.5]]]}]}"#;
        let parsed = Mixture::from_json(flat).unwrap();
        assert_eq!(parsed.num_dms(), 2);
        assert!(Mixture::from_json(r#"{"tag":"DIRAC","atoms":[]}"#).is_err());
    }

    #[test]
    fn label_maps_round_out_deterministic_serialization() {
        let obs = FiniteSpace::new(vec!["y0", "y1"]).unwrap();
        let act = FiniteSpace::binary_actions();
        let det = DeterministicPolicy::new(vec![vec![1, 0]], 2).unwrap();
        let maps = det.to_label_maps(&obs, &act).unwrap();
        assert_eq!(maps[0]["y0"], "u1");
        assert_eq!(maps[0]["y1"], "u0");
    }
}
