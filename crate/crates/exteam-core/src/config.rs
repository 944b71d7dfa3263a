//! JSON team documents.
//!
//! A team instance is described by a single JSON object with a `kind`
//! discriminator (`"static"` or `"dynamic"`). Every structural field is
//! validated by the team constructors; unknown keys are rejected up front
//! so a typo'd field name fails loudly instead of silently falling back
//! to a default.
//!
//! ```json
//! {
//!   "kind": "static",
//!   "omega0": { "labels": ["lo", "hi"], "probs": [0.5, 0.5] },
//!   "obs": { "labels": ["y0", "y1"] },
//!   "actions": { "labels": ["a", "b"], "values": [0.0, 1.0] },
//!   "obs_kernel": [[0.9, 0.1], [0.2, 0.8]],
//!   "cost": { "kind": "mean_tracking", "target": 0.5 },
//!   "n": 4
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TeamError};
use crate::policy::Mixture;
use crate::space::FiniteSpace;
use crate::team::{DynamicTeam, NoiseSpec, ReductionData, StageCost, StaticTeam};

/// A labelled finite set, optionally with a numeric embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceDoc {
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl SpaceDoc {
    fn build(&self) -> Result<FiniteSpace> {
        match &self.values {
            Some(v) => FiniteSpace::with_values(self.labels.clone(), v.clone()),
            None => FiniteSpace::new(self.labels.clone()),
        }
    }
}

/// A labelled finite set together with a distribution over it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionDoc {
    pub labels: Vec<String>,
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

impl DistributionDoc {
    fn build_space(&self) -> Result<FiniteSpace> {
        match &self.values {
            Some(v) => FiniteSpace::with_values(self.labels.clone(), v.clone()),
            None => FiniteSpace::new(self.labels.clone()),
        }
    }

    fn build_noise(&self) -> Result<NoiseSpec> {
        NoiseSpec::new(self.build_space()?, self.probs.clone())
    }
}

/// Per-stage cost, shared by static and dynamic documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostDoc {
    /// `(ū − target)²`: penalize the action mean for missing a target.
    MeanTracking { target: f64 },
    /// Full quadratic form in own action/state and the empirical means.
    MeanFieldQuadratic {
        #[serde(default)]
        u_self: f64,
        #[serde(default)]
        u_mean: f64,
        #[serde(default)]
        u_track: f64,
        #[serde(default)]
        x_self: f64,
        #[serde(default)]
        x_mean: f64,
        #[serde(default)]
        x_track: f64,
        target_u: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_x: Option<Vec<f64>>,
    },
    /// Dense `table[ω₀][u]` (static teams).
    StaticTable { table: Vec<Vec<f64>> },
    /// Dense `table[ω₀][x][u]` (dynamic teams).
    DynamicTable { table: Vec<Vec<Vec<f64>>> },
}

impl CostDoc {
    fn build(&self, omega_count: usize) -> StageCost {
        match self {
            CostDoc::MeanTracking { target } => StageCost::mean_tracking(*target, omega_count),
            CostDoc::MeanFieldQuadratic {
                u_self,
                u_mean,
                u_track,
                x_self,
                x_mean,
                x_track,
                target_u,
                target_x,
            } => StageCost::MeanFieldQuadratic {
                u_self: *u_self,
                u_mean: *u_mean,
                u_track: *u_track,
                x_self: *x_self,
                x_mean: *x_mean,
                x_track: *x_track,
                target_u: target_u.clone(),
                target_x: target_x
                    .clone()
                    .unwrap_or_else(|| vec![0.0; target_u.len()]),
            },
            CostDoc::StaticTable { table } => StageCost::StaticTable(table.clone()),
            CostDoc::DynamicTable { table } => StageCost::DynamicTable(table.clone()),
        }
    }
}

/// Optional reduced-evaluation block: a reference observation law whose
/// support must cover every reachable observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionDoc {
    pub tau: Vec<f64>,
}

/// Top-level team document.
///
/// One document is parsed per run, so the size gap between the static and
/// dynamic variants is not worth boxing over.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(clippy::large_enum_variant)]
pub enum TeamDoc {
    Static {
        omega0: DistributionDoc,
        obs: SpaceDoc,
        actions: SpaceDoc,
        /// `obs_kernel[ω₀][y]`: private observation law per environment atom.
        obs_kernel: Vec<Vec<f64>>,
        cost: CostDoc,
        /// Number of decision makers.
        n: usize,
    },
    Dynamic {
        omega0: DistributionDoc,
        states: SpaceDoc,
        obs: SpaceDoc,
        actions: SpaceDoc,
        /// `init_kernel[ω₀][x]`: initial state law per environment atom.
        init_kernel: Vec<Vec<f64>>,
        dyn_noise: DistributionDoc,
        obs_noise: DistributionDoc,
        horizon: usize,
        /// `dynamics_table[t][x][u][w] → x'`.
        dynamics_table: Vec<Vec<Vec<Vec<usize>>>>,
        /// `obs_table[t][x][v] → y`.
        obs_table: Vec<Vec<Vec<usize>>>,
        cost: CostDoc,
        /// Number of decision makers.
        n: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reduction: Option<ReductionDoc>,
    },
}

/// A parsed and validated team, ready to evaluate.
#[allow(clippy::large_enum_variant)]
pub enum LoadedTeam {
    Static(StaticTeam),
    Dynamic {
        team: DynamicTeam,
        reduction: Option<ReductionData>,
    },
}

impl LoadedTeam {
    /// Number of decision makers, independent of the variant.
    #[must_use]
    pub fn num_dms(&self) -> usize {
        match self {
            LoadedTeam::Static(t) => t.num_dms(),
            LoadedTeam::Dynamic { team, .. } => team.num_dms(),
        }
    }
}

impl TeamDoc {
    /// Validates the document and builds the team it describes.
    pub fn build(&self) -> Result<LoadedTeam> {
        match self {
            TeamDoc::Static {
                omega0,
                obs,
                actions,
                obs_kernel,
                cost,
                n,
            } => {
                let omega_space = omega0.build_space()?;
                let team = StaticTeam::new(
                    omega_space,
                    omega0.probs.clone(),
                    obs.build()?,
                    actions.build()?,
                    obs_kernel.clone(),
                    cost.build(omega0.labels.len()),
                    *n,
                )?;
                Ok(LoadedTeam::Static(team))
            }
            TeamDoc::Dynamic {
                omega0,
                states,
                obs,
                actions,
                init_kernel,
                dyn_noise,
                obs_noise,
                horizon,
                dynamics_table,
                obs_table,
                cost,
                n,
                reduction,
            } => {
                let team = DynamicTeam::from_tables(
                    omega0.build_space()?,
                    omega0.probs.clone(),
                    states.build()?,
                    obs.build()?,
                    actions.build()?,
                    init_kernel.clone(),
                    dyn_noise.build_noise()?,
                    obs_noise.build_noise()?,
                    *horizon,
                    dynamics_table.clone(),
                    obs_table.clone(),
                    cost.build(omega0.labels.len()),
                    *n,
                )?;
                let reduction = match reduction {
                    Some(doc) => Some(ReductionData::independent_from(&team, doc.tau.clone())?),
                    None => None,
                };
                Ok(LoadedTeam::Dynamic { team, reduction })
            }
        }
    }
}

/// Parses a team document from JSON text and builds it.
pub fn parse_team(text: &str) -> Result<LoadedTeam> {
    let doc: TeamDoc = serde_json::from_str(text)
        .map_err(|e| TeamError::Config(format!("team document: {e}")))?;
    doc.build()
}

/// Reads, parses, and builds a team document from a file.
pub fn load_team(path: &Path) -> Result<LoadedTeam> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TeamError::Io(format!("{}: {e}", path.display())))?;
    parse_team(&text)
}

/// Reads a policy mixture from a JSON file.
pub fn load_mixture(path: &Path) -> Result<Mixture> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TeamError::Io(format!("{}: {e}", path.display())))?;
    Mixture::from_json(&text)
}

/// Writes a policy mixture to a JSON file.
pub fn save_mixture(path: &Path, mixture: &Mixture) -> Result<()> {
    let text = mixture.to_json()?;
    std::fs::write(path, text).map_err(|e| TeamError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}
