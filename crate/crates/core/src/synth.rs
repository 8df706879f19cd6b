//! Synthetic paired coarse/fine dataset generator.
//!
//! Classes are laid out in contiguous full-width bands so coarse
//! hierarchies carry context, and each coarse pixel's fine patch is
//! painted by the class's motif program. The default layout contains
//! two class pairs that force multi-level information: one pair shares
//! identical coarse spectral means but different motifs (tree structure
//! separates them), the other shares the motif but sits in different
//! neighborhoods (coarse context separates them).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMap, Raster};

/// Fine-texture program painting one patch of a class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Motif {
    /// Single spectral mean everywhere.
    Homogeneous,
    /// Left half first mean, right half second.
    TwoBlock,
    /// Alternating square cells of the two means.
    Checkered,
    /// Vertical stripes of the two means.
    Striped,
    /// Small second-mean objects scattered over a first-mean background.
    ScatteredObjects,
}

/// Spectral definition of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Documented coarse-level mean; the emitted coarse pixel is always
    /// the actual patch mean (plus noise).
    pub coarse_mean: [f64; 4],
    pub motif: Motif,
    /// One mean for homogeneous motifs, two for the others.
    pub motif_means: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub coarse_width: usize,
    pub coarse_height: usize,
    pub scale_factor: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub class_specs: Vec<ClassSpec>,
    /// Block-row patterns, cycled top to bottom. A single-class row is a
    /// full-width zone; a multi-class row cycles its classes left to
    /// right as rectangular blocks of randomized width. Class ids are
    /// 1-based indices into `class_specs`.
    pub layout_rows: Vec<Vec<u16>>,
}

impl SynthConfig {
    pub fn num_classes(&self) -> usize {
        self.class_specs.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.scale_factor == 0 || self.coarse_width == 0 || self.coarse_height == 0 {
            return Err(Error::InvalidConfig(
                "zero dimension or scale factor".into(),
            ));
        }
        for spec in &self.class_specs {
            let needed = if spec.motif == Motif::Homogeneous {
                1
            } else {
                2
            };
            if spec.motif_means.len() < needed {
                return Err(Error::InvalidConfig(format!(
                    "class '{}' needs {} motif means, has {}",
                    spec.name,
                    needed,
                    spec.motif_means.len()
                )));
            }
        }
        if self.layout_rows.is_empty() || self.layout_rows.iter().any(|r| r.is_empty()) {
            return Err(Error::InvalidConfig("empty layout row".into()));
        }
        for &c in self.layout_rows.iter().flatten() {
            if c == 0 || c as usize > self.num_classes() {
                return Err(Error::InvalidConfig(format!("layout references class {c}")));
            }
        }
        // Confusable pairs must exist: identical coarse means with
        // different motifs, and identical motif programs placed in
        // different neighborhoods.
        let specs = &self.class_specs;
        let same_mean_diff_motif = pair_exists(specs.len(), |a, b| {
            specs[a].coarse_mean == specs[b].coarse_mean
                && motif_program(&specs[a]) != motif_program(&specs[b])
        });
        if !same_mean_diff_motif {
            return Err(Error::InvalidConfig(
                "no class pair with identical coarse means but different motifs".into(),
            ));
        }
        let same_motif = pair_exists(specs.len(), |a, b| {
            motif_program(&specs[a]) == motif_program(&specs[b])
        });
        if !same_motif {
            return Err(Error::InvalidConfig(
                "no class pair sharing a motif program".into(),
            ));
        }
        Ok(())
    }

    /// Desk-scale default: 64x48 coarse grid, scale 8, 6 classes,
    /// sigma 0.02.
    pub fn default_desk(seed: u64) -> SynthConfig {
        let water = [0.15, 0.10, 0.05, 0.05];
        let meadow = [0.25, 0.20, 0.70, 0.30];
        let paved = [0.45, 0.45, 0.45, 0.45];
        let bright = [0.80, 0.75, 0.30, 0.45];
        let dark = [0.20, 0.15, 0.50, 0.25];
        let blend = [0.50, 0.45, 0.40, 0.35];
        SynthConfig {
            coarse_width: 64,
            coarse_height: 48,
            scale_factor: 8,
            noise_sigma: 0.02,
            seed,
            class_specs: vec![
                ClassSpec {
                    name: "water".into(),
                    coarse_mean: water,
                    motif: Motif::Homogeneous,
                    motif_means: vec![water],
                },
                ClassSpec {
                    name: "meadow".into(),
                    coarse_mean: meadow,
                    motif: Motif::Homogeneous,
                    motif_means: vec![meadow],
                },
                // Same appearance as "lot", different neighborhood:
                // plazas sit inside water rows, lots inside meadows.
                ClassSpec {
                    name: "plaza".into(),
                    coarse_mean: paved,
                    motif: Motif::Homogeneous,
                    motif_means: vec![paved],
                },
                ClassSpec {
                    name: "lot".into(),
                    coarse_mean: paved,
                    motif: Motif::Homogeneous,
                    motif_means: vec![paved],
                },
                // Same coarse mean, different sub-pixel arrangement.
                ClassSpec {
                    name: "rowhouses".into(),
                    coarse_mean: blend,
                    motif: Motif::Striped,
                    motif_means: vec![bright, dark],
                },
                ClassSpec {
                    name: "courtyards".into(),
                    coarse_mean: blend,
                    motif: Motif::Checkered,
                    motif_means: vec![bright, dark],
                },
            ],
            // Plaza blocks live inside water rows, lot blocks inside
            // meadow rows, and the two textured classes sit in adjacent
            // equal-mean blocks (one district per pair), so the coarse
            // hierarchy merges them together before any level could tell
            // them apart.
            layout_rows: vec![
                vec![1],
                vec![1, 3],
                vec![1],
                vec![1, 5, 6],
                vec![2],
                vec![2, 4],
                vec![2],
                vec![2, 4],
                vec![2],
                vec![1, 6, 5],
                vec![1],
                vec![1, 3],
            ],
        }
    }
}

fn pair_exists<F: Fn(usize, usize) -> bool>(n: usize, pred: F) -> bool {
    for a in 0..n {
        for b in a + 1..n {
            if pred(a, b) {
                return true;
            }
        }
    }
    false
}

/// Motif identity used for the "shared motif" invariant: layout plus
/// the means it paints with.
fn motif_program(spec: &ClassSpec) -> (Motif, &[[f64; 4]]) {
    (spec.motif, &spec.motif_means)
}

/// Generated dataset: coarse raster, fine raster, ground truth.
pub struct SynthDataset {
    pub coarse: Raster,
    pub fine: Raster,
    pub truth: LabelMap,
}

const BAND_NAMES: [&str; 4] = ["green", "red", "nir", "mir"];

/// Deterministic generation under the config seed.
///
/// The fine raster is painted patch by patch from each class's motif,
/// plus clipped Gaussian noise; each coarse pixel is the mean of its
/// fine patch plus independent noise. Bands of randomized height >= 4
/// cycle through `band_layout` top to bottom.
pub fn generate(config: &SynthConfig) -> Result<SynthDataset> {
    config.validate()?;
    let (cw, ch, s) = (
        config.coarse_width,
        config.coarse_height,
        config.scale_factor,
    );
    let (fw, fh) = (cw * s, ch * s);
    let band_names: Vec<String> = BAND_NAMES.iter().map(|s| s.to_string()).collect();

    let mut truth = LabelMap::new(cw, ch);
    let mut layout_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1));
    // Deterministic row heights (remainder spread over the first rows)
    // keep every pattern row present and class masses stable across
    // seeds; block widths carry the randomization.
    let k = config.layout_rows.len();
    let base = ch / k;
    if base < 4 {
        return Err(Error::InvalidConfig(format!(
            "grid height {ch} too small for {k} block rows of height >= 4"
        )));
    }
    let mut row = 0usize;
    let mut row_idx = 0usize;
    while row < ch {
        let mut height = base + usize::from(row_idx % k < ch % k);
        if ch - row < height + 4 {
            height = ch - row;
        }
        let pattern = &config.layout_rows[row_idx % config.layout_rows.len()];
        if pattern.len() == 1 {
            for y in row..row + height {
                for x in 0..cw {
                    truth.set(x, y, pattern[0]);
                }
            }
        } else {
            // Cycle the pattern left to right with randomized block
            // widths; the first class acts as the separator and stays
            // narrow. A remainder too short for a block joins the last.
            let mut x = 0usize;
            let mut block_idx = 0usize;
            while x < cw {
                let class = pattern[block_idx % pattern.len()];
                // Buffers stay narrow; rows holding a class pair get
                // wider blocks so both classes keep a solid test mass.
                let mut width = if block_idx.is_multiple_of(pattern.len()) {
                    layout_rng.random_range(4..=6)
                } else if pattern.len() > 2 {
                    layout_rng.random_range(10..=14)
                } else {
                    layout_rng.random_range(8..=12)
                };
                if cw - x < width + 4 {
                    width = cw - x;
                }
                for y in row..row + height {
                    for bx in x..x + width {
                        truth.set(bx, y, class);
                    }
                }
                x += width;
                block_idx += 1;
            }
        }
        row += height;
        row_idx += 1;
    }

    for (i, spec) in config.class_specs.iter().enumerate() {
        let id = i as u16 + 1;
        if !truth.labels.contains(&id) {
            return Err(Error::InvalidConfig(format!(
                "grid too small: class '{}' never placed",
                spec.name
            )));
        }
    }

    let mut fine = Raster::new(fw, fh, 4, band_names.clone());
    let mut coarse = Raster::new(cw, ch, 4, band_names);
    let noise = Normal::new(0.0, config.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(format!("noise distribution: {e}")))?;
    let sigma_zero = config.noise_sigma == 0.0;

    let mut fine_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 2));
    let mut coarse_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 3));

    for cy in 0..ch {
        for cx in 0..cw {
            let class = truth.get(cx, cy);
            let spec = &config.class_specs[class as usize - 1];
            let object_mask = match spec.motif {
                Motif::ScatteredObjects => Some(scattered_mask(
                    s,
                    mix_seed(config.seed, 4 + (cy * cw + cx) as u64),
                )),
                _ => None,
            };
            // Patch means accumulated in f64 over the stored f32 values.
            let mut sums = [0f64; 4];
            for py in 0..s {
                for px in 0..s {
                    let mean = motif_mean(spec, px, py, s, object_mask.as_deref());
                    for b in 0..4 {
                        let v = if sigma_zero {
                            mean[b]
                        } else {
                            (mean[b] + noise.sample(&mut fine_rng)).clamp(0.0, 1.0)
                        };
                        let v = v as f32;
                        fine.set(b, cx * s + px, cy * s + py, v);
                        sums[b] += v as f64;
                    }
                }
            }
            let patch_pixels = (s * s) as f64;
            for (b, &sum) in sums.iter().enumerate() {
                let mean = sum / patch_pixels;
                let v = if sigma_zero {
                    mean
                } else {
                    (mean + noise.sample(&mut coarse_rng)).clamp(0.0, 1.0)
                };
                coarse.set(b, cx, cy, v as f32);
            }
        }
    }

    Ok(SynthDataset {
        coarse,
        fine,
        truth,
    })
}

/// Motif cell size: a quarter of the patch, at least one pixel.
fn motif_cell(scale: usize) -> usize {
    (scale / 4).max(1)
}

fn motif_mean<'a>(
    spec: &'a ClassSpec,
    px: usize,
    py: usize,
    scale: usize,
    object_mask: Option<&[bool]>,
) -> &'a [f64; 4] {
    match spec.motif {
        Motif::Homogeneous => &spec.motif_means[0],
        Motif::TwoBlock => {
            if px < scale / 2 {
                &spec.motif_means[0]
            } else {
                &spec.motif_means[1]
            }
        }
        Motif::Striped => {
            let w = motif_cell(scale);
            if (px / w).is_multiple_of(2) {
                &spec.motif_means[0]
            } else {
                &spec.motif_means[1]
            }
        }
        Motif::Checkered => {
            let w = motif_cell(scale);
            if (px / w + py / w).is_multiple_of(2) {
                &spec.motif_means[0]
            } else {
                &spec.motif_means[1]
            }
        }
        Motif::ScatteredObjects => {
            let mask = object_mask.expect("mask precomputed for scattered motif");
            if mask[py * scale + px] {
                &spec.motif_means[1]
            } else {
                &spec.motif_means[0]
            }
        }
    }
}

/// Jittered grid of small square objects covering roughly a quarter of
/// the patch, deterministic per (seed, patch).
fn scattered_mask(scale: usize, seed: u64) -> Vec<bool> {
    let mut mask = vec![false; scale * scale];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obj = motif_cell(scale);
    let step = (2 * obj).max(1);
    let mut gy = 0;
    while gy + obj <= scale {
        let mut gx = 0;
        while gx + obj <= scale {
            let jitter_x = rng.random_range(0..=(step - obj).min(scale - gx - obj));
            let jitter_y = rng.random_range(0..=(step - obj).min(scale - gy - obj));
            for y in gy + jitter_y..gy + jitter_y + obj {
                for x in gx + jitter_x..gx + jitter_x + obj {
                    mask[y * scale + x] = true;
                }
            }
            gx += step;
        }
        gy += step;
    }
    mask
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 round over seed xor stream tag.
    let mut z = seed ^ stream.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
