//! Iterative refinement of the token heatmap.
//!
//! Each pass asks the provider for attention under the current mask,
//! aggregates it into a heatmap, accumulates that heatmap, and then blocks
//! the dominant token cluster. The loop stops once a pass carries less total
//! mass than `beta`, when no cluster dominates, or at `max_iters` passes.
//! The accumulated heatmap is divided by how often each token was visible.

mod provider;

pub use provider::{AttentionProvider, Blob, ReplayProvider, SyntheticProvider};

use serde::{Deserialize, Serialize};

use crate::attention_map::{
    aggregate_heatmap, apply_mask, cluster_high_group, CountMask, TokenHeatmap, TokenMask,
};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_START_LAYER: usize = 12;
pub const DEFAULT_BETA: f64 = 0.3;
pub const DEFAULT_MAX_ITERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    /// First aggregated layer, 0-based.
    pub start_layer: usize,
    /// Passes whose total heatmap mass falls below this stop the loop.
    /// Serialized as `"inf"` when infinite.
    #[serde(with = "beta_json")]
    pub beta: f64,
    pub max_iters: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            start_layer: DEFAULT_START_LAYER,
            beta: DEFAULT_BETA,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(Error::validation(format!(
                "beta {} must be >= 0",
                self.beta
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::validation("max_iters must be at least 1"));
        }
        Ok(())
    }
}

mod beta_json {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(beta: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *beta == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*beta)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!(
                "beta must be a number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// Why the refinement loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    BelowThreshold,
    NoDominantTokens,
    IterationCap,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::BelowThreshold => "below-threshold",
            Termination::NoDominantTokens => "no-dominant-tokens",
            Termination::IterationCap => "iteration-cap",
        }
    }
}

/// State observed during one refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mask the provider was queried with.
    pub mask: TokenMask,
    pub heatmap: TokenHeatmap,
    pub total_mass: f64,
    /// Dominant tokens found in this pass, row-major.
    pub selected: Vec<(usize, usize)>,
    /// Whether this pass ended the loop.
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementTrace {
    pub config: RefinementConfig,
    pub iterations: Vec<IterationRecord>,
    pub termination: Termination,
    /// Count-normalized accumulated heatmap.
    pub aggregate: TokenHeatmap,
    pub counts: CountMask,
}

/// Runs the mask-and-re-attend loop and returns the count-normalized heatmap.
pub fn refine<P>(
    provider: &mut P,
    cfg: &RefinementConfig,
) -> Result<(TokenHeatmap, RefinementTrace)>
where
    P: AttentionProvider + ?Sized,
{
    cfg.validate()?;
    let dims = provider.dims();
    if dims.is_empty() {
        return Err(Error::validation(
            "provider reports an empty attention grid",
        ));
    }
    if cfg.start_layer >= dims.num_layers {
        return Err(Error::Range(format!(
            "start layer {} is outside 0..{}",
            cfg.start_layer, dims.num_layers
        )));
    }
    let (gh, gw) = (dims.grid_h, dims.grid_w);

    let mut mask = TokenMask::all(gh, gw);
    let mut sum = vec![0.0f64; gh * gw];
    let mut counts = CountMask::zeros(gh, gw);
    let mut iterations = Vec::new();
    let mut termination = Termination::IterationCap;

    for i in 0..cfg.max_iters {
        let stack = provider.attend(i, &mask).map_err(|e| Error::Provider {
            iteration: i,
            source: Box::new(e),
        })?;
        if stack.dims() != dims {
            return Err(Error::validation(format!(
                "provider returned shape {:?} at iteration {i}, expected {:?}",
                stack.dims().as_shape(),
                dims.as_shape()
            )));
        }
        // No-op for providers that already honour the mask.
        let stack = apply_mask(&stack, &mask)?;
        let heat = aggregate_heatmap(&stack, cfg.start_layer)?;

        for (s, h) in sum.iter_mut().zip(heat.grid().as_slice()) {
            *s += h;
        }
        counts.record(&mask);

        let selected = cluster_high_group(&heat, &mask)?;
        let total_mass = heat.total();

        let stop = if total_mass < cfg.beta {
            Some(Termination::BelowThreshold)
        } else if selected.is_empty() {
            Some(Termination::NoDominantTokens)
        } else if i + 1 == cfg.max_iters {
            Some(Termination::IterationCap)
        } else {
            None
        };

        let mut next_mask = mask.clone();
        next_mask.exclude(&selected);

        iterations.push(IterationRecord {
            iteration: i,
            mask: std::mem::replace(&mut mask, next_mask),
            heatmap: heat,
            total_mass,
            selected,
            terminated: stop.is_some(),
        });

        if let Some(reason) = stop {
            termination = reason;
            break;
        }
    }

    let normalized: Vec<f64> = sum
        .iter()
        .zip(counts.grid().as_slice())
        .map(|(s, &c)| s / f64::from(c))
        .collect();
    let aggregate = TokenHeatmap::from_grid_unchecked(Grid::new(gh, gw, normalized)?);

    let trace = RefinementTrace {
        config: *cfg,
        iterations,
        termination,
        aggregate: aggregate.clone(),
        counts,
    };
    Ok((aggregate, trace))
}
