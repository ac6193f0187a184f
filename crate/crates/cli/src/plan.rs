//! Reconstruction plan: a TOML file holding everything `mbir` needs besides
//! the sinogram itself.
//!
//! ```toml
//! init = "fbp"
//!
//! [geometry]
//! image_side = 256
//!
//! [prior]
//! lambda = 1.0        # sigma defaults to a tenth of the FBP range
//!
//! [solver]
//! max_iters = 100
//!
//! [hierarchy]
//! levels = 3
//!
//! [parallel]
//! workers = 2
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tomoforge_core::radon::DEFAULT_TOLERANCE;
use tomoforge_core::solver::SolverConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Fbp,
    Zero,
}

impl FromStr for InitKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fbp" => Ok(Self::Fbp),
            "zero" => Ok(Self::Zero),
            _ => Err(format!("unknown init '{s}' (fbp|zero)")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Inputs {
    pub sinogram: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    /// Reconstruction side; the detector width when absent.
    pub image_side: Option<usize>,
    /// NUFFT accuracy of every operator.
    pub tolerance: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            image_side: None,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub p: f64,
    pub q: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub sigma: Option<f64>,
    pub lambda: f64,
}

impl Default for PriorSection {
    fn default() -> Self {
        Self {
            p: 2.0,
            q: 1.2,
            t: 1.0,
            sigma: None,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchySection {
    /// Number of grid levels including the finest.
    pub levels: usize,
    /// Budgets coarse to fine; coarse levels default to `200 >> l`, the
    /// finest to `solver.max_iters`.
    pub iters: Option<Vec<usize>>,
    pub downsample_angles: bool,
}

impl Default for HierarchySection {
    fn default() -> Self {
        Self {
            levels: 1,
            iters: None,
            downsample_angles: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParallelSection {
    pub workers: usize,
    pub transport: String,
}

impl Default for ParallelSection {
    fn default() -> Self {
        Self {
            workers: 1,
            transport: "channel".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Recorded in log metadata. Reconstruction itself draws no random
    /// numbers beyond the fixed-seed power iteration.
    pub run: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconPlan {
    pub init: InitKind,
    pub inputs: Inputs,
    pub geometry: GeometrySection,
    pub prior: PriorSection,
    pub solver: SolverConfig,
    pub hierarchy: HierarchySection,
    pub parallel: ParallelSection,
    pub seeds: SeedSection,
}

impl ReconPlan {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("plan: {e}")))
    }

    /// Reads a plan; relative input paths resolve against the plan's
    /// directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut plan = Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let Some(s) = plan.inputs.sinogram.take() {
            let base = path.parent().unwrap_or(Path::new("."));
            let resolved = if s.is_absolute() { s } else { base.join(s) };
            if !resolved.is_file() {
                return Err(CliError::io(&resolved, "referenced by the plan but not found"));
            }
            plan.inputs.sinogram = Some(resolved);
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.hierarchy.levels == 0 {
            return Err(CliError::Usage("hierarchy.levels must be at least 1".into()));
        }
        if let Some(iters) = &self.hierarchy.iters {
            if iters.len() != self.hierarchy.levels {
                return Err(CliError::Usage(format!(
                    "hierarchy.iters has {} entries for {} levels",
                    iters.len(),
                    self.hierarchy.levels
                )));
            }
        }
        if self.parallel.workers == 0 {
            return Err(CliError::Usage("parallel.workers must be at least 1".into()));
        }
        self.parallel.transport.parse::<tomoforge_parallel::TransportKind>().map_err(CliError::Usage)?;
        if !(self.geometry.tolerance > 0.0 && self.geometry.tolerance < 1.0) {
            return Err(CliError::Usage(format!("geometry.tolerance {} outside (0, 1)", self.geometry.tolerance)));
        }
        Ok(())
    }

    /// SHA-256 of the plan's canonical JSON form.
    pub fn digest(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}
