//! Bayesian causal mediation analysis for sparse, irregularly sampled
//! longitudinal mediators and outcomes.
//!
//! Both the mediator and the outcome are treated as noisy observations of
//! smooth latent processes. Each process is represented by a truncated
//! Karhunen–Loève expansion on a thin-plate spline basis, with principal
//! scores whose means depend on treatment, and fitted by Gibbs sampling.
//! The mediator posterior is fitted first; the outcome sampler consumes its
//! draws to impute the mediator process at outcome times (two-stage "cut"
//! inference). Posterior draws are then turned into effect curves over
//! time:
//!
//! - the effect of treatment on the mediator, `Σ_r (τ₁ʳ − τ₀ʳ) ψ_r(t)`,
//! - the average causal mediation effect, `δᵗ = γ · Σ_r (τ₁ʳ − τ₀ʳ) ψ_r(t)`,
//! - the total effect, `τᵗ = Σ_s (ξ₁ˢ − ξ₀ˢ) η_s(t) + δᵗ`,
//! - the natural direct effect, `τᵗ − δᵗ`.
//!
//! The [`simulate`] module reproduces the four-scenario simulation design
//! with stored ground truth, and [`sensitivity`] re-expresses the concurrent
//! mediator coefficient as a function of an unmeasured residual correlation.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod basis;
pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimands;
pub mod fpca;
pub mod linalg;
pub mod manifest;
pub mod mediator;
pub mod outcome;
pub mod posterior_io;
pub mod rng;
pub mod sensitivity;
pub mod simulate;

pub use basis::{PenaltyFlavor, SplineBasis};
pub use data::{LongitudinalDataset, Observation, Subject};
pub use error::{Error, Result};
pub use estimands::{EffectCurve, EffectCurves};
pub use fpca::{ChainConfig, FpcaState, Priors};
pub use mediator::{MediatorPosterior, MediatorState};
pub use outcome::{OutcomeConfig, OutcomePosterior, OutcomeState};
pub use simulate::{ScenarioConfig, SimulatedTruth};
