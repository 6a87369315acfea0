//! JSON run descriptions: replay manifests, synthetic provider specs and
//! refinement traces.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention_map::{AttnStack, StackDims};
use crate::error::{Error, Result};
use crate::io::{read_npy, stack_from_npy};
use crate::postprocess::PostprocessConfig;
use crate::refinement::{
    Blob, RefinementConfig, RefinementTrace, ReplayProvider, SyntheticProvider,
};

/// Per-pass attention dumps for the replay provider.
///
/// Iteration paths are resolved relative to the manifest file. Unknown keys
/// (model identifiers, query positions) are ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub grid_h: usize,
    pub grid_w: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub iterations: Vec<String>,
}

impl RunManifest {
    pub fn dims(&self) -> StackDims {
        StackDims {
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Loads every listed stack and checks it against the declared shape
    /// before any refinement work starts.
    pub fn load_stacks(&self, base_dir: &Path) -> Result<Vec<AttnStack>> {
        if self.iterations.is_empty() {
            return Err(Error::validation("manifest lists no iteration files"));
        }
        let expected = self.dims();
        self.iterations
            .iter()
            .map(|name| {
                let path: PathBuf = base_dir.join(name);
                let stack = stack_from_npy(&read_npy(&path)?)?;
                if stack.dims() != expected {
                    return Err(Error::validation(format!(
                        "{} has shape {:?}, manifest declares {:?}",
                        path.display(),
                        stack.dims().as_shape(),
                        expected.as_shape()
                    )));
                }
                Ok(stack)
            })
            .collect()
    }
}

/// Reads a manifest and builds a replay provider from its dumps.
pub fn load_replay_provider(manifest_path: impl AsRef<Path>) -> Result<ReplayProvider> {
    let path = manifest_path.as_ref();
    let manifest = RunManifest::read(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    ReplayProvider::new(manifest.load_stacks(base)?)
}

fn default_layers() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSpec {
    /// `[row, column]` of the centre token.
    pub center: [usize; 2],
    pub width: f64,
    pub weight: f64,
}

/// JSON description of a synthetic provider.
///
/// `num_layers` defaults to 32 so the default start layer of 12 is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub grid_h: usize,
    pub grid_w: usize,
    #[serde(default = "default_layers")]
    pub num_layers: usize,
    #[serde(default)]
    pub leak: f64,
    pub blobs: Vec<BlobSpec>,
}

impl SyntheticSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn build(&self) -> Result<SyntheticProvider> {
        let blobs = self
            .blobs
            .iter()
            .map(|b| Blob {
                center: (b.center[0], b.center[1]),
                width: b.width,
                weight: b.weight,
            })
            .collect();
        SyntheticProvider::new(self.grid_h, self.grid_w, blobs, self.leak)?
            .with_layers(self.num_layers)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceIteration {
    pub iteration: usize,
    pub total_mass: f64,
    pub attendable: usize,
    pub selected_count: usize,
    /// `[row, column]` of each dominant token.
    pub selected: Vec<[usize; 2]>,
    pub terminated: bool,
}

/// Serialized refinement trace, optionally carrying post-processing settings
/// when written by the end-to-end pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub config: RefinementConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub postprocess: Option<PostprocessConfig>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub num_iterations: usize,
    pub termination_reason: String,
    pub iterations: Vec<TraceIteration>,
}

impl TraceRecord {
    pub fn from_trace(trace: &RefinementTrace) -> Self {
        let (grid_h, grid_w) = trace.aggregate.dims();
        Self {
            config: trace.config,
            postprocess: None,
            grid_h,
            grid_w,
            num_iterations: trace.iterations.len(),
            termination_reason: trace.termination.as_str().to_string(),
            iterations: trace
                .iterations
                .iter()
                .map(|r| TraceIteration {
                    iteration: r.iteration,
                    total_mass: r.total_mass,
                    attendable: r.mask.attendable_count(),
                    selected_count: r.selected.len(),
                    selected: r.selected.iter().map(|&(y, x)| [y, x]).collect(),
                    terminated: r.terminated,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
