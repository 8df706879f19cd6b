//! JSON pipeline configuration.
//!
//! Every field has a default, so a minimal config only names the input
//! rasters (or a synth section). Thresholds follow the declared order:
//! coarse ascending, fine descending.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hierclass::classify::CvGrid;
use hierclass::features::BandRoles;
use hierclass::hierarchy::Connectivity;
use hierclass::kernels::KernelKind;
use hierclass::pipeline::PipelineOptions;
use hierclass::synth::SynthConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Input rasters; defaulted to the synth stage outputs under the
    /// work dir when absent.
    #[serde(default)]
    pub coarse_raster: Option<PathBuf>,
    #[serde(default)]
    pub fine_raster: Option<PathBuf>,
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub work_dir: Option<PathBuf>,

    #[serde(default = "default_coarse_thresholds")]
    pub coarse_thresholds: Vec<f64>,
    #[serde(default = "default_fine_thresholds")]
    pub fine_thresholds: Vec<f64>,
    #[serde(default = "default_roles")]
    pub coarse_band_roles: RolesConfig,
    #[serde(default = "default_roles")]
    pub fine_band_roles: RolesConfig,
    #[serde(default = "default_connectivity")]
    pub connectivity: u8,
    #[serde(default = "default_standardize")]
    pub standardize_features: bool,

    #[serde(default = "default_grid")]
    pub grid: GridConfig,
    #[serde(default = "default_per_class")]
    pub per_class: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_svm_c")]
    pub svm_c: f64,

    /// Parameters for the `gram` stage.
    #[serde(default)]
    pub gram: GramConfig,

    /// Dataset generator section for the `synth` stage.
    #[serde(default)]
    pub synth: Option<SynthConfig>,

    /// Class id -> RGB for rendered maps; a built-in palette covers
    /// missing entries.
    #[serde(default)]
    pub palette: std::collections::BTreeMap<u16, [u8; 3]>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RolesConfig {
    pub red: usize,
    pub nir: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    pub gammas: Vec<f64>,
    pub cs: Vec<f64>,
    pub rhos: Vec<f64>,
    pub folds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GramConfig {
    pub kind: String,
    pub gamma: f64,
    #[serde(default)]
    pub rho: Option<f64>,
}

impl Default for GramConfig {
    fn default() -> Self {
        GramConfig {
            kind: "composite".into(),
            gamma: 4.0,
            rho: Some(0.5),
        }
    }
}

fn default_coarse_thresholds() -> Vec<f64> {
    (-2..=4).map(|e| 2f64.powi(e)).collect()
}

fn default_fine_thresholds() -> Vec<f64> {
    (1..=4).rev().map(|e| 2f64.powi(e)).collect()
}

fn default_roles() -> RolesConfig {
    RolesConfig { red: 1, nir: 2 }
}

fn default_connectivity() -> u8 {
    4
}

fn default_standardize() -> bool {
    true
}

fn default_grid() -> GridConfig {
    let g = CvGrid::default_grid();
    GridConfig {
        gammas: g.gammas,
        cs: g.cs,
        rhos: g.rhos,
        folds: g.folds,
    }
}

fn default_per_class() -> usize {
    200
}

fn default_repetitions() -> usize {
    10
}

fn default_tol() -> f64 {
    1e-3
}

fn default_svm_c() -> f64 {
    10.0
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.repetitions == 0 {
            anyhow::bail!("repetitions must be >= 1");
        }
        if !matches!(self.connectivity, 4 | 8) {
            anyhow::bail!("connectivity must be 4 or 8");
        }
        if self.grid.folds < 2 {
            anyhow::bail!("grid.folds must be >= 2");
        }
        if self.grid.gammas.is_empty() || self.grid.cs.is_empty() {
            anyhow::bail!("grid.gammas and grid.cs must be non-empty");
        }
        for w in self.coarse_thresholds.windows(2) {
            if w[0] >= w[1] {
                anyhow::bail!("coarse_thresholds must be strictly ascending");
            }
        }
        for w in self.fine_thresholds.windows(2) {
            if w[0] <= w[1] {
                anyhow::bail!("fine_thresholds must be strictly descending");
            }
        }
        KernelKind::parse(&self.gram.kind).map_err(|e| anyhow::anyhow!("gram.kind: {e}"))?;
        if let Some(synth) = &self.synth {
            synth
                .validate()
                .map_err(|e| anyhow::anyhow!("synth: {e}"))?;
        }
        Ok(())
    }

    /// Work dir, defaulting to `./work`.
    pub fn work_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        override_dir
            .map(|p| p.to_path_buf())
            .or_else(|| self.work_dir.clone())
            .unwrap_or_else(|| PathBuf::from("work"))
    }

    pub fn options(&self, seed: u64) -> PipelineOptions {
        let mut opts = PipelineOptions::default_options(seed);
        opts.coarse_thresholds = self.coarse_thresholds.clone();
        opts.fine_thresholds = self.fine_thresholds.clone();
        opts.coarse_band_roles = BandRoles {
            red: self.coarse_band_roles.red,
            nir: self.coarse_band_roles.nir,
        };
        opts.fine_band_roles = BandRoles {
            red: self.fine_band_roles.red,
            nir: self.fine_band_roles.nir,
        };
        opts.connectivity = if self.connectivity == 8 {
            Connectivity::Eight
        } else {
            Connectivity::Four
        };
        opts.standardize = self.standardize_features;
        opts.grid = CvGrid {
            gammas: self.grid.gammas.clone(),
            cs: self.grid.cs.clone(),
            rhos: self.grid.rhos.clone(),
            folds: self.grid.folds,
        };
        opts.per_class = self.per_class;
        opts.repetitions = self.repetitions;
        opts.tol = self.tol;
        opts
    }

    /// Raster paths, defaulting to the synth stage layout.
    pub fn dataset_paths(&self, work: &Path) -> (PathBuf, PathBuf, PathBuf) {
        let dataset = work.join("dataset");
        (
            self.coarse_raster
                .clone()
                .unwrap_or_else(|| dataset.join("coarse.bf")),
            self.fine_raster
                .clone()
                .unwrap_or_else(|| dataset.join("fine.bf")),
            self.truth
                .clone()
                .unwrap_or_else(|| dataset.join("truth.pgm")),
        )
    }

    /// Palette entry for a class, falling back to a built-in table.
    pub fn color_of(&self, class: u16) -> [u8; 3] {
        if let Some(&rgb) = self.palette.get(&class) {
            return rgb;
        }
        const BUILTIN: [[u8; 3]; 12] = [
            [31, 119, 180],
            [44, 160, 44],
            [148, 103, 189],
            [140, 86, 75],
            [255, 127, 14],
            [214, 39, 40],
            [227, 119, 194],
            [127, 127, 127],
            [188, 189, 34],
            [23, 190, 207],
            [174, 199, 232],
            [255, 187, 120],
        ];
        BUILTIN[(class as usize - 1) % BUILTIN.len()]
    }
}
