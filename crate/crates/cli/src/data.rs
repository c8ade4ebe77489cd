//! On-disk layouts for scenes and bursts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use burstdof_core::burst::{Burst, BurstTrajectory};
use burstdof_core::io::{read_pfm, read_png, write_pfm, write_png, BitDepth};
use burstdof_core::lightfield::{load_lightfield, save_lightfield};
use burstdof_core::scene::{Scene, SceneSpec};
use burstdof_core::RefocusFactor;

pub const DISPARITY_FILE: &str = "disparity.pfm";
pub const SPEC_FILE: &str = "scene.json";
pub const TRAJECTORY_FILE: &str = "trajectory.json";

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:04}")
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:02}.png")
}

/// Views, disparity and the generating spec.
pub fn save_scene(scene: &Scene, spec: &SceneSpec, dir: &Path) -> Result<()> {
    save_lightfield(&scene.light_field, dir)?;
    write_pfm(&scene.disparity, &dir.join(DISPARITY_FILE))?;
    fs::write(dir.join(SPEC_FILE), serde_json::to_string_pretty(spec)?)?;
    Ok(())
}

/// Grid size comes from `scene.json` when present, else `default_grid`.
pub fn load_scene(dir: &Path, default_grid: usize) -> Result<Scene> {
    let spec_path = dir.join(SPEC_FILE);
    let grid = if spec_path.is_file() {
        let spec: SceneSpec = serde_json::from_str(&fs::read_to_string(&spec_path)?)
            .with_context(|| format!("parsing {}", spec_path.display()))?;
        spec.grid_size
    } else {
        default_grid
    };
    let light_field = load_lightfield(dir, grid).with_context(|| format!("loading views from {}", dir.display()))?;
    let disparity = read_pfm(&dir.join(DISPARITY_FILE))
        .with_context(|| format!("{} needs a {DISPARITY_FILE}", dir.display()))?;
    if (disparity.width(), disparity.height()) != (light_field.width(), light_field.height()) {
        bail!(
            "{}: disparity is {}x{} but views are {}x{}",
            dir.display(),
            disparity.width(),
            disparity.height(),
            light_field.width(),
            light_field.height()
        );
    }
    Ok(Scene { light_field, disparity })
}

/// Every subdirectory of `dir` holding a disparity map, in name order.
pub fn scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading dataset {}", dir.display()))? {
        let path = entry?.path();
        if path.join(DISPARITY_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        bail!("no scenes (subdirectories with {DISPARITY_FILE}) in {}", dir.display());
    }
    Ok(dirs)
}

pub fn load_dataset(dir: &Path, default_grid: usize) -> Result<Vec<Scene>> {
    scene_dirs(dir)?.iter().map(|d| load_scene(d, default_grid)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub viewpoints: Vec<[i32; 2]>,
    pub alpha: f64,
}

pub fn save_burst(burst: &Burst, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, frame) in burst.frames.iter().enumerate() {
        write_png(frame, &dir.join(frame_file_name(i)), BitDepth::Sixteen)?;
    }
    let file = TrajectoryFile {
        viewpoints: burst.trajectory.viewpoints().iter().map(|&(u, v)| [u, v]).collect(),
        alpha: burst.alpha.value(),
    };
    fs::write(dir.join(TRAJECTORY_FILE), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_burst(dir: &Path) -> Result<Burst> {
    let path = dir.join(TRAJECTORY_FILE);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let file: TrajectoryFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let frames = (0..file.viewpoints.len())
        .map(|i| read_png(&dir.join(frame_file_name(i))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if frames.iter().any(|f| !f.same_dims(&frames[0])) {
        bail!("burst frames in {} differ in size", dir.display());
    }
    Ok(Burst {
        frames,
        trajectory: BurstTrajectory::new(file.viewpoints.iter().map(|p| (p[0], p[1])).collect())?,
        alpha: RefocusFactor::new(file.alpha)?,
    })
}
