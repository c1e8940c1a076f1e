//! Dataset directory: `frames/`, `depths/`, `dyn_masks/` (training frames `t{t:04}.png`),
//! `test_frames/`, `test_dyn_masks/`, `covis_masks/` (held-out views `v{i:03}.png`),
//! `cameras.json`, `spec.json` and, for synthetic data, `gt_scene.json`.

use std::path::Path;

use dynsplat_core::camera::Trajectory;
use dynsplat_core::image::{Image, Mask};
use dynsplat_core::render::RenderSettings;
use dynsplat_core::scene::Scene;
use dynsplat_core::synthgen::{CovisConfig, SynthDataset, SynthScene, SynthSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RunError};
use crate::formats::{read_json, write_json};
use crate::io;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub synth: Option<SynthSpec>,
    pub covis: Option<CovisConfig>,
    pub render: Option<RenderSettings>,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cameras {
    pub train: Trajectory,
    pub test: Trajectory,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub cameras: Cameras,
    pub frames: Vec<Image>,
    pub depths: Vec<Vec<f64>>,
    pub dyn_masks: Vec<Mask>,
    pub test_images: Vec<Image>,
    pub test_dyn_masks: Vec<Mask>,
    pub covis_masks: Vec<Mask>,
    /// Ground-truth geometry (synthetic data only).
    pub gt_scene: Option<Scene>,
}

pub fn train_name(t: usize) -> String {
    format!("t{t:04}.png")
}

pub fn test_name(i: usize) -> String {
    format!("v{i:03}.png")
}

pub fn write_synthetic(dir: &Path, spec: &SynthSpec, covis: &CovisConfig, render: &RenderSettings, scene: &SynthScene, data: &SynthDataset) -> Result<()> {
    let intr = &scene.train.intrinsics;
    for t in 0..data.frames.len() {
        io::write_rgb(&dir.join("frames").join(train_name(t)), &data.frames[t])?;
        io::write_depth(&dir.join("depths").join(train_name(t)), &data.depths[t], intr.width, intr.height)?;
        io::write_mask(&dir.join("dyn_masks").join(train_name(t)), &data.dyn_masks[t])?;
    }
    for i in 0..data.test_images.len() {
        io::write_rgb(&dir.join("test_frames").join(test_name(i)), &data.test_images[i])?;
        io::write_mask(&dir.join("test_dyn_masks").join(test_name(i)), &data.test_dyn_masks[i])?;
        io::write_mask(&dir.join("covis_masks").join(test_name(i)), &data.covis_masks[i])?;
    }
    let cams = Cameras { train: scene.train.clone(), test: scene.test.clone() };
    write_json(&dir.join("cameras.json"), "cameras", &cams)?;
    let ds = DatasetSpec { synth: Some(*spec), covis: Some(*covis), render: Some(*render), degenerate: scene.degenerate };
    write_json(&dir.join("spec.json"), "dataset_spec", &ds)?;
    write_json(&dir.join("gt_scene.json"), "scene", &scene.gt)
}

fn check_size(path: &Path, w: usize, h: usize, want: (usize, usize)) -> Result<()> {
    if (w, h) != want {
        return Err(RunError::Data(format!("{}: {w}x{h}, cameras say {}x{}", path.display(), want.0, want.1)));
    }
    Ok(())
}

/// Loads a dataset. Every missing file is named in one error.
pub fn read(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(RunError::Data(format!("dataset directory {} does not exist", dir.display())));
    }
    let cameras: Cameras = read_json(&dir.join("cameras.json"), "cameras")?;
    let spec: DatasetSpec = read_json(&dir.join("spec.json"), "dataset_spec")?;
    cameras.train.validate()?;
    cameras.test.validate()?;
    let n = cameras.train.len();
    let m = cameras.test.len();
    let mut missing = Vec::new();
    for t in 0..n {
        for sub in ["frames", "depths", "dyn_masks"] {
            let p = dir.join(sub).join(train_name(t));
            if !p.is_file() {
                missing.push(format!("{sub}/{}", train_name(t)));
            }
        }
    }
    for i in 0..m {
        for sub in ["test_frames", "test_dyn_masks", "covis_masks"] {
            let p = dir.join(sub).join(test_name(i));
            if !p.is_file() {
                missing.push(format!("{sub}/{}", test_name(i)));
            }
        }
    }
    if !missing.is_empty() {
        return Err(RunError::Data(format!("{}: missing {}", dir.display(), missing.join(", "))));
    }
    let wh = (cameras.train.intrinsics.width, cameras.train.intrinsics.height);
    let twh = (cameras.test.intrinsics.width, cameras.test.intrinsics.height);
    let mut ds = Dataset {
        spec,
        cameras,
        frames: Vec::with_capacity(n),
        depths: Vec::with_capacity(n),
        dyn_masks: Vec::with_capacity(n),
        test_images: Vec::with_capacity(m),
        test_dyn_masks: Vec::with_capacity(m),
        covis_masks: Vec::with_capacity(m),
        gt_scene: None,
    };
    for t in 0..n {
        let p = dir.join("frames").join(train_name(t));
        let f = io::read_rgb(&p)?;
        check_size(&p, f.width, f.height, wh)?;
        ds.frames.push(f);
        let p = dir.join("depths").join(train_name(t));
        let (d, w, h) = io::read_depth(&p)?;
        check_size(&p, w, h, wh)?;
        ds.depths.push(d);
        let p = dir.join("dyn_masks").join(train_name(t));
        let mk = io::read_mask(&p)?;
        check_size(&p, mk.width, mk.height, wh)?;
        ds.dyn_masks.push(mk);
    }
    for i in 0..m {
        let p = dir.join("test_frames").join(test_name(i));
        let f = io::read_rgb(&p)?;
        check_size(&p, f.width, f.height, twh)?;
        ds.test_images.push(f);
        for (sub, dst) in [("test_dyn_masks", &mut ds.test_dyn_masks), ("covis_masks", &mut ds.covis_masks)] {
            let p = dir.join(sub).join(test_name(i));
            let mk = io::read_mask(&p)?;
            check_size(&p, mk.width, mk.height, twh)?;
            dst.push(mk);
        }
    }
    let gp = dir.join("gt_scene.json");
    if gp.is_file() {
        ds.gt_scene = Some(read_json(&gp, "scene")?);
    }
    Ok(ds)
}
