//! Project manifest: one JSON file naming everything a run needs.
//!
//! Relative paths inside the manifest resolve against the manifest's
//! own directory, so a project folder can be moved as a unit. The world
//! can start from a stored cloud or be sampled from the scene, and
//! colorization frames can come from a directory or be rendered from
//! the scene; the manifest must name a source for both.

use super::{read_trajectory, IoError};
use crate::geometry::Camera;
use crate::synthworld::SceneSpec;
use crate::world::ColorPolicy;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectManifest {
    /// Scene description (JSON quad list); the sampling and ground truth
    /// source when `cloud` or `frames_dir` are absent.
    #[serde(default)]
    pub scene: Option<PathBuf>,
    /// Pre-built point cloud (PLY). Absent means sample from the scene.
    #[serde(default)]
    pub cloud: Option<PathBuf>,
    /// Camera trajectory (JSON intrinsics plus poses).
    pub trajectory: PathBuf,
    /// Directory of stored frames feeding colorization, one per camera.
    /// Absent means render frames from the scene.
    #[serde(default)]
    pub frames_dir: Option<PathBuf>,
    /// Directory receiving outputs.
    pub output_dir: PathBuf,
    /// Surface sampling density in points per unit area.
    pub density: f64,
    pub seed: u64,
    pub policy: ColorPolicy,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl ProjectManifest {
    /// Reads a manifest and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let mut manifest: ProjectManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        manifest.scene = manifest.scene.map(|p| resolve(base, &p));
        manifest.cloud = manifest.cloud.map(|p| resolve(base, &p));
        manifest.trajectory = resolve(base, &manifest.trajectory);
        manifest.frames_dir = manifest.frames_dir.map(|p| resolve(base, &p));
        manifest.output_dir = resolve(base, &manifest.output_dir);
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| IoError::io(path, e))
    }

    /// Checks the inputs exist and the parameters make sense. The output
    /// directory is created by the consumer, not checked here.
    pub fn validate(&self) -> Result<(), IoError> {
        for (name, path) in [("scene", &self.scene), ("cloud", &self.cloud)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(IoError::Invalid(format!(
                        "{name} file {} not found",
                        p.display()
                    )));
                }
            }
        }
        if !self.trajectory.is_file() {
            return Err(IoError::Invalid(format!(
                "trajectory file {} not found",
                self.trajectory.display()
            )));
        }
        if let Some(d) = &self.frames_dir {
            if !d.is_dir() {
                return Err(IoError::Invalid(format!(
                    "frames directory {} not found",
                    d.display()
                )));
            }
        }
        if self.scene.is_none() && self.cloud.is_none() {
            return Err(IoError::Invalid("no world source: set scene or cloud".into()));
        }
        if self.scene.is_none() && self.frames_dir.is_none() {
            return Err(IoError::Invalid("no frame source: set scene or frames_dir".into()));
        }
        if !(self.density > 0.0 && self.density.is_finite()) {
            return Err(IoError::Invalid(format!("density must be positive, got {}", self.density)));
        }
        Ok(())
    }

    /// Loads and re-validates the referenced scene.
    pub fn load_scene(&self) -> Result<SceneSpec, IoError> {
        let path = self
            .scene
            .as_ref()
            .ok_or_else(|| IoError::Invalid("manifest names no scene".into()))?;
        let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
        let parsed: SceneSpec = serde_json::from_str(&text)?;
        SceneSpec::new(parsed.quads, parsed.background)
            .map_err(|e| IoError::Invalid(e.to_string()))
    }

    pub fn load_trajectory(&self) -> Result<Vec<Camera>, IoError> {
        read_trajectory(&self.trajectory)
    }
}
