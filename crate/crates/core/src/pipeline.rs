//! End-to-end runs: render, fill holes, optionally harmonize, and write the
//! image with its sidecars and a replayable JSON manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cloud::{self, ColoredPointCloud};
use crate::error::{Error, Result};
use crate::inpaint::{self, HoleMask};
use crate::plane::Threshold;
use crate::raster::{sidecar_path, OrthoImage};
use crate::render::{render_orthophoto, RenderConfig, RenderOutput};
use crate::wavelet::WaveletFilter;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub render: RenderConfig,
    pub seed: u64,
    pub inpaint_radius: usize,
    pub mask_dilation: usize,
    pub harmonize_ref: Option<PathBuf>,
    pub swt_filter: WaveletFilter,
    pub swt_weights: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            render: RenderConfig::default(),
            seed: 0,
            inpaint_radius: 5,
            mask_dilation: 1,
            harmonize_ref: None,
            swt_filter: WaveletFilter::Haar,
            swt_weights: vec![0.5, 0.3, 0.2],
        }
    }
}

/// Every accepted key, in the order they are written.
pub const CONFIG_KEYS: &[&str] = &[
    "rho",
    "r_min",
    "r_max",
    "p_max",
    "ssaa",
    "roof_band_frac",
    "ground_band",
    "m_min",
    "splat_radius_px",
    "crop_frac",
    "w_sat",
    "min_height_scale_frac",
    "facade_ratio",
    "ransac_threshold",
    "ransac_iters",
    "ransac_max_scoring_points",
    "ransac_refinement_passes",
    "seed",
    "inpaint_radius",
    "mask_dilation",
    "harmonize_ref",
    "swt_filter",
    "swt_weights",
];

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Schema(format!("invalid value {value:?} for {key}")))
}

impl PipelineConfig {
    /// Sets one key. Used for config files and command-line overrides alike.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let r = &mut self.render.raster;
        match key {
            "rho" => r.rho = num(key, value)?,
            "r_min" => r.r_min = num(key, value)?,
            "r_max" => r.r_max = num(key, value)?,
            "p_max" => r.p_max = num(key, value)?,
            "ssaa" => r.ssaa = num(key, value)?,
            "roof_band_frac" => r.roof_band_frac = num(key, value)?,
            "ground_band" => r.ground_band = num(key, value)?,
            "m_min" => r.m_min = num(key, value)?,
            "splat_radius_px" => r.splat_radius_px = num(key, value)?,
            "crop_frac" => r.crop_frac = num(key, value)?,
            "w_sat" => r.w_sat = num(key, value)?,
            "min_height_scale_frac" => r.min_height_scale_frac = num(key, value)?,
            "facade_ratio" => r.facade_ratio = num(key, value)?,
            "ransac_threshold" => {
                self.render.ransac.threshold = match value.strip_suffix("*diag") {
                    Some(frac) => Threshold::RelativeToDiagonal(num(key, frac.trim())?),
                    None => Threshold::Absolute(num(key, value)?),
                }
            }
            "ransac_iters" => self.render.ransac.iterations = num(key, value)?,
            "ransac_max_scoring_points" => self.render.ransac.max_scoring_points = num(key, value)?,
            "ransac_refinement_passes" => self.render.ransac.refinement_passes = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "inpaint_radius" => self.inpaint_radius = num(key, value)?,
            "mask_dilation" => self.mask_dilation = num(key, value)?,
            "harmonize_ref" => self.harmonize_ref = (!value.is_empty()).then(|| PathBuf::from(value)),
            "swt_filter" => self.swt_filter = WaveletFilter::parse(value)?,
            "swt_weights" => self.swt_weights = value.split(',').map(|w| num(key, w.trim())).collect::<Result<_>>()?,
            _ => return Err(Error::Schema(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let r = &self.render.raster;
        Some(match key {
            "rho" => format!("{:?}", r.rho),
            "r_min" => format!("{:?}", r.r_min),
            "r_max" => format!("{:?}", r.r_max),
            "p_max" => r.p_max.to_string(),
            "ssaa" => r.ssaa.to_string(),
            "roof_band_frac" => format!("{:?}", r.roof_band_frac),
            "ground_band" => format!("{:?}", r.ground_band),
            "m_min" => r.m_min.to_string(),
            "splat_radius_px" => format!("{:?}", r.splat_radius_px),
            "crop_frac" => format!("{:?}", r.crop_frac),
            "w_sat" => format!("{:?}", r.w_sat),
            "min_height_scale_frac" => format!("{:?}", r.min_height_scale_frac),
            "facade_ratio" => format!("{:?}", r.facade_ratio),
            "ransac_threshold" => match self.render.ransac.threshold {
                Threshold::Absolute(t) => format!("{t:?}"),
                Threshold::RelativeToDiagonal(f) => format!("{f:?}*diag"),
            },
            "ransac_iters" => self.render.ransac.iterations.to_string(),
            "ransac_max_scoring_points" => self.render.ransac.max_scoring_points.to_string(),
            "ransac_refinement_passes" => self.render.ransac.refinement_passes.to_string(),
            "seed" => self.seed.to_string(),
            "inpaint_radius" => self.inpaint_radius.to_string(),
            "mask_dilation" => self.mask_dilation.to_string(),
            "harmonize_ref" => self
                .harmonize_ref
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "swt_filter" => self.swt_filter.name().to_owned(),
            "swt_weights" => self
                .swt_weights
                .iter()
                .map(|w| format!("{w:?}"))
                .collect::<Vec<_>>()
                .join(","),
            _ => return None,
        })
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        CONFIG_KEYS
            .iter()
            .map(|k| (k.to_string(), self.get(k).expect("known key")))
            .collect()
    }

    pub fn to_key_values(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown or
    /// repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: n + 1, message };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected key=value, found {line:?}")))?;
            let k = k.trim();
            if !seen.insert(k.to_owned()) {
                return Err(parse_err(format!("key {k:?} appears twice")));
            }
            cfg.set(k, v).map_err(|e| parse_err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.render.raster.validate()?;
        let ransac = &self.render.ransac;
        if ransac.iterations == 0 || ransac.max_scoring_points < 3 || ransac.refinement_passes == 0 {
            return Err(Error::domain(
                "RANSAC needs at least one iteration, three scoring points and one refinement pass",
            ));
        }
        match self.render.ransac.threshold {
            Threshold::Absolute(t) | Threshold::RelativeToDiagonal(t) if !(t > 0.0 && t.is_finite()) => {
                return Err(Error::domain("RANSAC threshold must be positive"));
            }
            _ => {}
        }
        if self.inpaint_radius < 1 {
            return Err(Error::domain("inpaint_radius must be at least 1"));
        }
        crate::wavelet::LossWeights {
            swt_level_weights: self.swt_weights.clone(),
            ..Default::default()
        }
        .validate()
    }
}

/// In-memory result of a run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub render: RenderOutput,
    /// Final image: holes filled, optionally harmonized.
    pub image: OrthoImage,
    pub timings: Vec<(String, f64)>,
}

pub fn process_cloud(cloud: &ColoredPointCloud, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let render = render_orthophoto(cloud, &cfg.render, cfg.seed)?;
    let mut timings: Vec<(String, f64)> = render
        .timings
        .iter()
        .map(|(k, d)| (k.to_string(), d.as_secs_f64()))
        .collect();
    let start = Instant::now();
    let mask = HoleMask::from_image(&render.image);
    let image = if mask.count() == 0 {
        render.image.clone()
    } else {
        inpaint::inpaint(&render.image, &mask.dilate(cfg.mask_dilation), cfg.inpaint_radius)?
    };
    timings.push(("inpaint".into(), start.elapsed().as_secs_f64()));
    let image = match &cfg.harmonize_ref {
        Some(path) => {
            let start = Instant::now();
            let reference = OrthoImage::load_png(path)?;
            let out = inpaint::harmonize(&image, Some(&reference))?;
            timings.push(("harmonize".into(), start.elapsed().as_secs_f64()));
            out
        }
        None => image,
    };
    Ok(PipelineOutput { render, image, timings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub coefficients: [f64; 4],
    pub centroid: [f64; 3],
    pub basis_u: [f64; 3],
    pub basis_v: [f64; 3],
    pub inlier_fraction: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub input: PathBuf,
    pub output: PathBuf,
    pub hole_mask: PathBuf,
    pub georef: PathBuf,
    pub config: BTreeMap<String, String>,
    pub points: usize,
    pub timings_s: Vec<(String, f64)>,
    pub plane: PlaneRecord,
    pub pixel_scale: f64,
    /// Base grid before cropping, `[height, width]`.
    pub base_size: [usize; 2],
    /// Written image, `[height, width]`.
    pub output_size: [usize; 2],
    pub holes_before_inpaint: usize,
}

impl RunManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("run manifest: {e}")))?;
        if m.schema_version != 1 {
            return Err(Error::Schema(format!(
                "unsupported manifest schema_version {}",
                m.schema_version
            )));
        }
        Ok(m)
    }

    pub fn config(&self) -> Result<PipelineConfig> {
        PipelineConfig::from_map(&self.config)
    }
}

/// `<stem>.manifest.json` beside the output image.
pub fn manifest_path(output: &Path) -> PathBuf {
    sidecar_path(output, "manifest.json")
}

/// Loads the cloud, runs every stage and writes the image, the hole mask
/// of the raw render, the georef sidecar and the manifest.
pub fn run_pipeline(input: &Path, output: &Path, cfg: &PipelineConfig) -> Result<RunManifest> {
    let start = Instant::now();
    let load = cloud::load_ply(input)?;
    if load.dropped_nonfinite > 0 {
        log::warn!("dropped {} points with non-finite coordinates", load.dropped_nonfinite);
    }
    let load_s = start.elapsed().as_secs_f64();
    let out = process_cloud(&load.cloud, cfg)?;
    let start = Instant::now();
    out.image.save_png(output)?;
    out.render.image.save_hole_mask(output)?;
    out.image.save_georef(output)?;
    let plane = &out.render.plane;
    let mut timings_s = vec![("load".to_owned(), load_s)];
    timings_s.extend(out.timings.iter().cloned());
    timings_s.push(("write".into(), start.elapsed().as_secs_f64()));
    let manifest = RunManifest {
        schema_version: 1,
        input: input.to_path_buf(),
        output: output.to_path_buf(),
        hole_mask: sidecar_path(output, "holes.png"),
        georef: sidecar_path(output, "georef.txt"),
        config: cfg.to_map(),
        points: load.cloud.len(),
        timings_s,
        plane: PlaneRecord {
            coefficients: plane.coefficients(),
            centroid: plane.centroid.into(),
            basis_u: plane.basis_u.into(),
            basis_v: plane.basis_v.into(),
            inlier_fraction: plane.inlier_fraction,
            threshold: plane.threshold,
        },
        pixel_scale: out.render.resolution.pixel_scale,
        base_size: [out.render.uncropped.height, out.render.uncropped.width],
        output_size: [out.image.height, out.image.width],
        holes_before_inpaint: out.render.image.hole_count(),
    };
    let path = manifest_path(output);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
