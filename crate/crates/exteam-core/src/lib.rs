//! Numerical laboratory for finite decentralized stochastic teams whose
//! cost is invariant under relabeling the decision makers.
//!
//! The crate models static and dynamic mean-field teams over finite
//! spaces, randomized policies as mixtures of kernel profiles, and the
//! group action of DM permutations on both. On top of that sit exact and
//! Monte-Carlo cost evaluators (including evaluation under a
//! policy-independent observation measure with likelihood reweighting),
//! optimizers for deterministic, symmetric and product policy classes,
//! and scaling experiments that trace how the optimality gap of symmetric
//! independently-randomized policies closes as the team grows.
//!
//! Entry points:
//! * [`team`] — team models ([`team::StaticTeam`], [`team::DynamicTeam`]),
//!   stage costs, observation reductions;
//! * [`policy`] — kernels, profiles, mixtures, permutation tools,
//!   marginal extension and mixture extraction;
//! * [`eval`] — expected-cost evaluation (exact / MC / reduced);
//! * [`opt`] — brute-force, grid, gradient and cross-entropy searches;
//! * [`scaling`] — gap curves, limit diagnostics, sampling-bound audits;
//! * [`config`], [`manifest`] — JSON team documents and run manifests;
//! * [`space`], [`numeric`], [`error`] — shared plumbing.

pub mod config;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod numeric;
pub mod opt;
pub mod policy;
pub mod scaling;
pub mod space;
pub mod team;

pub use config::{load_mixture, load_team, parse_team, save_mixture, LoadedTeam, TeamDoc};
pub use error::{Result, TeamError};
pub use eval::{CostEstimate, EmpiricalMeasure, McOptions};
pub use manifest::{config_hash, RunManifest};
pub use opt::{CeOptions, GapResult, Method, OptResult, SymmetricSearch};
pub use policy::{ClassTag, DeterministicPolicy, Mixture, PolicyProfile, RelaxedKernel};
pub use space::FiniteSpace;
pub use team::{DynamicTeam, StageCost, StaticTeam};
