//! One-against-one multi-class SVM on precomputed Gram matrices.
//!
//! The binary solver is SMO-style dual coordinate ascent with maximal
//! violating pair selection, stopping when the KKT violation gap drops
//! below the tolerance. All kernel evaluations are table lookups into
//! the precomputed (normalized) Gram matrix.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, KernelKind};
use crate::raster::LabelMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Default stopping tolerance on the KKT violation gap.
pub const DEFAULT_TOL: f64 = 1e-3;

/// Cap on SMO pair updates before the solver gives up.
pub const MAX_PAIR_UPDATES: u64 = 10_000_000;

/// One binary max-margin model over a subset of the training set.
/// The +1 side is `class_pair.0`, the -1 side `class_pair.1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmBinaryModel {
    /// Indices into the full training instance set.
    pub support_indices: Vec<u32>,
    /// alpha_i * y_i per support vector.
    pub dual_coefs: Vec<f64>,
    pub bias: f64,
    pub class_pair: (u16, u16),
    pub box_c: f64,
}

impl SvmBinaryModel {
    /// Decision value for a query given its kernel row over the full
    /// training set.
    pub fn decision(&self, kernel_row: &[f64]) -> f64 {
        let mut f = self.bias;
        for (&s, &coef) in self.support_indices.iter().zip(&self.dual_coefs) {
            f += coef * kernel_row[s as usize];
        }
        f
    }
}

/// Kernel configuration a model was trained with; queries must be
/// evaluated with the same one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelDescriptor {
    pub kind: KernelKind,
    pub gamma: f64,
    pub rho: Option<f64>,
}

/// One-against-one multi-class model: k(k-1)/2 binary models.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub binary_models: Vec<SvmBinaryModel>,
    pub classes: Vec<u16>,
    pub kernel: KernelDescriptor,
    /// Instance ids (into the archive/dataset) of the training set, in
    /// kernel-row order.
    pub training_instance_refs: Vec<u32>,
}

/// Train one binary SVM on a Gram block. `labels` are +1/-1 per row of
/// `gram`; `global_indices` maps block rows to full-training-set ids.
pub fn train_binary(
    gram: &GramMatrix,
    labels: &[f64],
    box_c: f64,
    tol: f64,
    class_pair: (u16, u16),
    global_indices: &[u32],
) -> Result<SvmBinaryModel> {
    let n = labels.len();
    if gram.n != n || global_indices.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "gram {} vs {} labels vs {} indices",
            gram.n,
            n,
            global_indices.len()
        )));
    }
    if box_c <= 0.0 || !box_c.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "box C must be positive, got {box_c}"
        )));
    }
    let has_pos = labels.iter().any(|&y| y > 0.0);
    let has_neg = labels.iter().any(|&y| y < 0.0);
    if !has_pos || !has_neg {
        return Err(Error::SingleClassTraining);
    }

    let (alpha, bias) = smo_solve(gram, labels, box_c, tol)?;

    let mut support_indices = Vec::new();
    let mut dual_coefs = Vec::new();
    for i in 0..n {
        if alpha[i] > 0.0 {
            support_indices.push(global_indices[i]);
            dual_coefs.push(alpha[i] * labels[i]);
        }
    }
    Ok(SvmBinaryModel {
        support_indices,
        dual_coefs,
        bias,
        class_pair,
        box_c,
    })
}

/// Maximal-violating-pair SMO. Returns (alpha, bias).
fn smo_solve(gram: &GramMatrix, labels: &[f64], c: f64, tol: f64) -> Result<(Vec<f64>, f64)> {
    let n = labels.len();
    let mut alpha = vec![0f64; n];
    // Gradient of 1/2 a'Qa - e'a at a = 0.
    let mut grad = vec![-1f64; n];

    let mut updates: u64 = 0;
    loop {
        // i maximizes -y G over I_up, j minimizes it over I_low.
        let mut i_best: Option<usize> = None;
        let mut m_up = f64::NEG_INFINITY;
        let mut j_best: Option<usize> = None;
        let mut m_low = f64::INFINITY;
        for t in 0..n {
            let v = -labels[t] * grad[t];
            let in_up = (labels[t] > 0.0 && alpha[t] < c) || (labels[t] < 0.0 && alpha[t] > 0.0);
            let in_low = (labels[t] > 0.0 && alpha[t] > 0.0) || (labels[t] < 0.0 && alpha[t] < c);
            if in_up && v > m_up {
                m_up = v;
                i_best = Some(t);
            }
            if in_low && v < m_low {
                m_low = v;
                j_best = Some(t);
            }
        }
        let (i, j) = match (i_best, j_best) {
            (Some(i), Some(j)) => (i, j),
            _ => break,
        };
        if m_up - m_low <= tol {
            break;
        }
        if updates >= MAX_PAIR_UPDATES {
            return Err(Error::NonConvergence(updates));
        }
        updates += 1;

        // Two-variable subproblem along the feasible direction.
        let quad = gram.get(i, i) + gram.get(j, j) - 2.0 * gram.get(i, j);
        let quad = quad.max(1e-12);
        let unclipped = (m_up - m_low) / quad;
        // Box limits: alpha_i moves by +y_i*d, alpha_j by -y_j*d.
        let limit_i = if labels[i] > 0.0 {
            c - alpha[i]
        } else {
            alpha[i]
        };
        let limit_j = if labels[j] > 0.0 {
            alpha[j]
        } else {
            c - alpha[j]
        };
        let d = unclipped.min(limit_i).min(limit_j);

        alpha[i] = (alpha[i] + labels[i] * d).clamp(0.0, c);
        alpha[j] = (alpha[j] - labels[j] * d).clamp(0.0, c);
        for t in 0..n {
            grad[t] += labels[t] * d * (gram.get(t, i) - gram.get(t, j));
        }
    }

    // Bias from free support vectors, midpoint of the bound scores
    // otherwise.
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut m_up = f64::NEG_INFINITY;
    let mut m_low = f64::INFINITY;
    for t in 0..n {
        let v = -labels[t] * grad[t];
        if alpha[t] > 0.0 && alpha[t] < c {
            free_sum += v;
            free_count += 1;
        }
        let in_up = (labels[t] > 0.0 && alpha[t] < c) || (labels[t] < 0.0 && alpha[t] > 0.0);
        let in_low = (labels[t] > 0.0 && alpha[t] > 0.0) || (labels[t] < 0.0 && alpha[t] < c);
        if in_up {
            m_up = m_up.max(v);
        }
        if in_low {
            m_low = m_low.min(v);
        }
    }
    let bias = if free_count > 0 {
        free_sum / free_count as f64
    } else {
        (m_up + m_low) / 2.0
    };
    Ok((alpha, bias))
}

/// Train all k(k-1)/2 binary models on a full-training-set Gram matrix.
/// Binary models train independently in parallel.
pub fn train_multiclass(
    gram: &GramMatrix,
    labels: &[u16],
    box_c: f64,
    tol: f64,
    kernel: KernelDescriptor,
    training_instance_refs: Vec<u32>,
) -> Result<SvmModel> {
    if gram.n != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "gram {} vs {} labels",
            gram.n,
            labels.len()
        )));
    }
    let classes = distinct_classes(labels);
    if classes.len() < 2 {
        return Err(Error::SingleClassTraining);
    }
    let pairs: Vec<(u16, u16)> = classes
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| classes[i + 1..].iter().map(move |&b| (a, b)))
        .collect();

    let binary_models: Vec<SvmBinaryModel> = pairs
        .par_iter()
        .map(|&(a, b)| -> Result<SvmBinaryModel> {
            let mut idx = Vec::new();
            let mut pair_labels = Vec::new();
            for (t, &l) in labels.iter().enumerate() {
                if l == a || l == b {
                    idx.push(t);
                    pair_labels.push(if l == a { 1.0 } else { -1.0 });
                }
            }
            let block = gram.subset(&idx);
            let global: Vec<u32> = idx.iter().map(|&t| t as u32).collect();
            train_binary(&block, &pair_labels, box_c, tol, (a, b), &global)
        })
        .collect::<Result<_>>()?;

    Ok(SvmModel {
        binary_models,
        classes,
        kernel,
        training_instance_refs,
    })
}

fn distinct_classes(labels: &[u16]) -> Vec<u16> {
    let mut classes: Vec<u16> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
}

/// Majority vote over the binary models given the query's kernel values
/// against every training instance (in training-set order). Vote ties
/// break toward the smallest class id, as does a zero decision value.
pub fn predict(model: &SvmModel, kernel_row: &[f64]) -> Result<u16> {
    if kernel_row.len() != model.training_instance_refs.len() {
        return Err(Error::DescriptorMismatch(format!(
            "kernel row has {} values, model trained on {}",
            kernel_row.len(),
            model.training_instance_refs.len()
        )));
    }
    let mut votes: std::collections::BTreeMap<u16, usize> = std::collections::BTreeMap::new();
    for m in &model.binary_models {
        let f = m.decision(kernel_row);
        let winner = if f > 0.0 {
            m.class_pair.0
        } else if f < 0.0 {
            m.class_pair.1
        } else {
            m.class_pair.0.min(m.class_pair.1)
        };
        *votes.entry(winner).or_insert(0) += 1;
    }
    // BTreeMap iterates ascending class id, so the first maximum is the
    // smallest-id winner.
    let mut best_class = model.classes[0];
    let mut best_votes = 0usize;
    for (&class, &v) in &votes {
        if v > best_votes {
            best_votes = v;
            best_class = class;
        }
    }
    Ok(best_class)
}

/// Cross-validation grid.
#[derive(Debug, Clone)]
pub struct CvGrid {
    pub gammas: Vec<f64>,
    pub cs: Vec<f64>,
    pub rhos: Vec<f64>,
    pub folds: usize,
}

impl CvGrid {
    pub fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.cs.is_empty() {
            return Err(Error::InvalidConfig("empty gamma or C grid".into()));
        }
        if self.folds < 2 {
            return Err(Error::InvalidConfig(format!(
                "folds must be >= 2, got {}",
                self.folds
            )));
        }
        Ok(())
    }

    /// Broad defaults: gamma and C over powers of two, rho over a
    /// 0..1 grid, 5 folds.
    pub fn default_grid() -> CvGrid {
        CvGrid {
            gammas: (-4..=4).map(|e| 2f64.powi(e)).collect(),
            cs: (-2..=6).map(|e| 2f64.powi(e)).collect(),
            rhos: (0..=10).map(|i| i as f64 / 10.0).collect(),
            folds: 5,
        }
    }
}

/// Accuracy of one grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CvCell {
    pub gamma: f64,
    pub c: f64,
    pub rho: Option<f64>,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best_gamma: f64,
    pub best_c: f64,
    pub best_rho: Option<f64>,
    pub table: Vec<CvCell>,
}

/// Precomputed per-gamma normalized Grams over the training set, from
/// which any grid cell's kernel is assembled without re-evaluating
/// structures: the composite combination is linear, so it is applied
/// post-hoc to the normalized matrices.
pub trait GramSource {
    /// Normalized Gram for (gamma, rho) over the instance set the
    /// cross-validation runs on.
    fn gram(&self, gamma: f64, rho: Option<f64>) -> Result<GramMatrix>;
}

/// Stratified 5-fold-style cross-validation over the grid.
///
/// Gram matrices are computed once per gamma by the source and shared
/// across folds and C values. Ties in mean accuracy break toward
/// smaller C, then larger gamma, then rho closest to 0.5 (then smaller
/// rho).
pub fn cross_validate<S: GramSource>(
    source: &S,
    labels: &[u16],
    kind: KernelKind,
    grid: &CvGrid,
    tol: f64,
    seed: u64,
) -> Result<CvOutcome> {
    grid.validate()?;
    let folds = assign_stratified_folds(labels, grid.folds, seed)?;
    let rhos: Vec<Option<f64>> = if kind == KernelKind::Composite {
        if grid.rhos.is_empty() {
            return Err(Error::InvalidConfig(
                "empty rho grid for composite kernel".into(),
            ));
        }
        grid.rhos.iter().map(|&r| Some(r)).collect()
    } else {
        vec![None]
    };

    let mut table = Vec::new();
    for &gamma in &grid.gammas {
        for &rho in &rhos {
            let gram = source.gram(gamma, rho)?;
            if gram.n != labels.len() {
                return Err(Error::DimensionMismatch(format!(
                    "gram {} vs {} labels",
                    gram.n,
                    labels.len()
                )));
            }
            for &c in &grid.cs {
                let acc = fold_accuracy(&gram, labels, &folds, grid.folds, c, tol)?;
                table.push(CvCell {
                    gamma,
                    c,
                    rho,
                    mean_accuracy: acc,
                });
            }
        }
    }

    let best = table
        .iter()
        .min_by(|a, b| {
            b.mean_accuracy
                .total_cmp(&a.mean_accuracy)
                .then_with(|| a.c.total_cmp(&b.c))
                .then_with(|| b.gamma.total_cmp(&a.gamma))
                .then_with(|| rho_tie_key(a.rho).total_cmp(&rho_tie_key(b.rho)))
                .then_with(|| a.rho.unwrap_or(0.0).total_cmp(&b.rho.unwrap_or(0.0)))
        })
        .expect("non-empty grid");
    Ok(CvOutcome {
        best_gamma: best.gamma,
        best_c: best.c,
        best_rho: best.rho,
        table: table.clone(),
    })
}

fn rho_tie_key(rho: Option<f64>) -> f64 {
    rho.map(|r| (r - 0.5).abs()).unwrap_or(0.0)
}

/// Mean validation accuracy over folds for one (gram, C) cell.
fn fold_accuracy(
    gram: &GramMatrix,
    labels: &[u16],
    fold_of: &[usize],
    folds: usize,
    c: f64,
    tol: f64,
) -> Result<f64> {
    let accs: Vec<f64> = (0..folds)
        .into_par_iter()
        .map(|fold| -> Result<f64> {
            let train_ids: Vec<usize> = (0..labels.len()).filter(|&t| fold_of[t] != fold).collect();
            let val_ids: Vec<usize> = (0..labels.len()).filter(|&t| fold_of[t] == fold).collect();
            let train_labels: Vec<u16> = train_ids.iter().map(|&t| labels[t]).collect();
            let block = gram.subset(&train_ids);
            let model = train_multiclass(
                &block,
                &train_labels,
                c,
                tol,
                KernelDescriptor {
                    kind: gram.kind,
                    gamma: gram.gamma,
                    rho: gram.rho,
                },
                train_ids.iter().map(|&t| t as u32).collect(),
            )?;
            let mut correct = 0usize;
            for &q in &val_ids {
                let row: Vec<f64> = train_ids.iter().map(|&t| gram.get(q, t)).collect();
                if predict(&model, &row)? == labels[q] {
                    correct += 1;
                }
            }
            Ok(if val_ids.is_empty() {
                1.0
            } else {
                correct as f64 / val_ids.len() as f64
            })
        })
        .collect::<Result<_>>()?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Deterministic stratified fold assignment: per class, shuffle under
/// the seed and deal round-robin.
pub fn assign_stratified_folds(labels: &[u16], folds: usize, seed: u64) -> Result<Vec<usize>> {
    let classes = distinct_classes(labels);
    let mut fold_of = vec![0usize; labels.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &class in &classes {
        let mut ids: Vec<usize> = (0..labels.len()).filter(|&t| labels[t] == class).collect();
        if ids.len() < folds {
            return Err(Error::InsufficientClass {
                class,
                have: ids.len(),
                need: folds,
            });
        }
        ids.shuffle(&mut rng);
        for (pos, &t) in ids.iter().enumerate() {
            fold_of[t] = pos % folds;
        }
    }
    Ok(fold_of)
}

/// Stratified train/test split over a label map: `per_class` randomly
/// chosen samples per class for training, the rest for testing. Returned
/// ids index the row-major enumeration of labeled pixels.
pub fn sample_training_set(
    labels: &LabelMap,
    per_class: usize,
    seed: u64,
) -> Result<(Vec<u32>, Vec<u32>)> {
    let labeled: Vec<(u32, u16)> = labels
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != 0)
        .map(|(p, &l)| (p as u32, l))
        .collect();
    let classes: Vec<u16> = {
        let mut c: Vec<u16> = labeled.iter().map(|&(_, l)| l).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    for &class in &classes {
        let mut ids: Vec<u32> = labeled
            .iter()
            .enumerate()
            .filter(|(_, &(_, l))| l == class)
            .map(|(i, _)| i as u32)
            .collect();
        if ids.len() < per_class {
            return Err(Error::InsufficientClass {
                class,
                have: ids.len(),
                need: per_class,
            });
        }
        ids.shuffle(&mut rng);
        train.extend_from_slice(&ids[..per_class]);
    }
    train.sort_unstable();
    let train_set: std::collections::HashSet<u32> = train.iter().copied().collect();
    let test: Vec<u32> = (0..labeled.len() as u32)
        .filter(|i| !train_set.contains(i))
        .collect();
    Ok((train, test))
}

// ---------------------------------------------------------------------
// Model file: ASCII header + binary per-model blocks.
// ---------------------------------------------------------------------

pub fn write_model<W: Write>(w: &mut W, model: &SvmModel) -> Result<()> {
    let rho = model
        .kernel
        .rho
        .map(|r| format!("{r:?}"))
        .unwrap_or_else(|| "-".into());
    writeln!(
        w,
        "SVMODEL {} {:?} {} {}",
        model.kernel.kind.as_str(),
        model.kernel.gamma,
        rho,
        model.binary_models.len()
    )?;
    writeln!(
        w,
        "classes {}",
        model
            .classes
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    )?;
    writeln!(
        w,
        "train {}",
        model
            .training_instance_refs
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    )?;
    for m in &model.binary_models {
        w.write_all(&(m.class_pair.0 as u32).to_le_bytes())?;
        w.write_all(&(m.class_pair.1 as u32).to_le_bytes())?;
        w.write_all(&m.box_c.to_le_bytes())?;
        w.write_all(&m.bias.to_le_bytes())?;
        w.write_all(&(m.support_indices.len() as u32).to_le_bytes())?;
        for &s in &m.support_indices {
            w.write_all(&s.to_le_bytes())?;
        }
        for &d in &m.dual_coefs {
            w.write_all(&d.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<SvmModel> {
    let header = read_line(r)?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 5 || parts[0] != "SVMODEL" {
        return Err(Error::MalformedFile {
            format: "model",
            detail: format!("bad header '{header}'"),
        });
    }
    let kind = KernelKind::parse(parts[1])?;
    let gamma: f64 = parts[2].parse().map_err(|_| Error::MalformedFile {
        format: "model",
        detail: "bad gamma".into(),
    })?;
    let rho = if parts[3] == "-" {
        None
    } else {
        Some(parts[3].parse::<f64>().map_err(|_| Error::MalformedFile {
            format: "model",
            detail: "bad rho".into(),
        })?)
    };
    let model_count: usize = parts[4].parse().map_err(|_| Error::MalformedFile {
        format: "model",
        detail: "bad model count".into(),
    })?;

    let classes_line = read_line(r)?;
    let classes: Vec<u16> = classes_line
        .strip_prefix("classes ")
        .ok_or(Error::MalformedFile {
            format: "model",
            detail: "missing classes".into(),
        })?
        .split_whitespace()
        .map(|t| t.parse::<u16>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedFile {
            format: "model",
            detail: "bad class id".into(),
        })?;

    let train_line = read_line(r)?;
    let training_instance_refs: Vec<u32> = train_line
        .strip_prefix("train ")
        .ok_or(Error::MalformedFile {
            format: "model",
            detail: "missing train refs".into(),
        })?
        .split_whitespace()
        .map(|t| t.parse::<u32>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedFile {
            format: "model",
            detail: "bad train ref".into(),
        })?;

    let mut binary_models = Vec::with_capacity(model_count);
    for _ in 0..model_count {
        let a = read_u32_le(r)? as u16;
        let b = read_u32_le(r)? as u16;
        let box_c = read_f64_le(r)?;
        let bias = read_f64_le(r)?;
        let sv = read_u32_le(r)? as usize;
        let mut support_indices = Vec::with_capacity(sv);
        for _ in 0..sv {
            support_indices.push(read_u32_le(r)?);
        }
        let mut dual_coefs = Vec::with_capacity(sv);
        for _ in 0..sv {
            dual_coefs.push(read_f64_le(r)?);
        }
        binary_models.push(SvmBinaryModel {
            support_indices,
            dual_coefs,
            bias,
            class_pair: (a, b),
            box_c,
        });
    }
    Ok(SvmModel {
        binary_models,
        classes,
        kernel: KernelDescriptor { kind, gamma, rho },
        training_instance_refs,
    })
}

fn read_line<R: Read>(r: &mut R) -> Result<String> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte).map_err(|e| Error::MalformedFile {
            format: "model",
            detail: e.to_string(),
        })?;
        if byte[0] == b'\n' {
            break;
        }
        line.push(byte[0]);
        if line.len() > 1 << 20 {
            return Err(Error::MalformedFile {
                format: "model",
                detail: "line too long".into(),
            });
        }
    }
    String::from_utf8(line).map_err(|_| Error::MalformedFile {
        format: "model",
        detail: "non-ascii line".into(),
    })
}

fn read_u32_le<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::MalformedFile {
        format: "model",
        detail: e.to_string(),
    })?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64_le<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::MalformedFile {
        format: "model",
        detail: e.to_string(),
    })?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gram_from(values: Vec<f64>, n: usize) -> GramMatrix {
        GramMatrix {
            n,
            values,
            kind: KernelKind::Sequence,
            gamma: 1.0,
            rho: None,
        }
    }

    fn identity_gram(n: usize) -> GramMatrix {
        let mut values = vec![0f64; n * n];
        for i in 0..n {
            values[i * n + i] = 1.0;
        }
        gram_from(values, n)
    }

    /// Linear-equivalent Gram from explicit points.
    fn linear_gram(points: &[(f64, f64)]) -> GramMatrix {
        let n = points.len();
        let mut values = vec![0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = points[i].0 * points[j].0 + points[i].1 * points[j].1;
            }
        }
        gram_from(values, n)
    }

    #[test]
    fn two_point_analytic_solution() {
        // Analytic oracle for two points with y = (+1, -1): both margins
        // active, so alpha = 2 / (K11 + K22 - 2 K12) and the bias solves
        // f(x1) = +1 exactly.
        let gram = identity_gram(2);
        let labels = [1.0, -1.0];
        let alpha_expected = 2.0 / (1.0 + 1.0 - 0.0);
        let m = train_binary(&gram, &labels, 10.0, 1e-6, (1, 2), &[0, 1]).unwrap();
        assert_eq!(m.support_indices, vec![0, 1]);
        assert!(
            (m.dual_coefs[0] - alpha_expected).abs() < 1e-6,
            "{:?}",
            m.dual_coefs
        );
        assert!((m.dual_coefs[1] + alpha_expected).abs() < 1e-6);
        assert!(m.bias.abs() < 1e-6, "bias {}", m.bias);
        // Decision separates the two with margin 1.
        let f0 = m.decision(&[1.0, 0.0]);
        let f1 = m.decision(&[0.0, 1.0]);
        assert!((f0 - 1.0).abs() < 1e-6 && (f1 + 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicated_point_with_opposite_labels_hits_box() {
        let gram = gram_from(vec![1.0, 1.0, 1.0, 1.0], 2);
        let labels = [1.0, -1.0];
        let c = 1.0;
        let m = train_binary(&gram, &labels, c, 1e-6, (1, 2), &[0, 1]).unwrap();
        assert_eq!(m.support_indices.len(), 2);
        for &coef in &m.dual_coefs {
            assert!((coef.abs() - c).abs() < 1e-9, "coef {coef}");
        }
    }

    #[test]
    fn separable_toy_set_reaches_full_training_accuracy() {
        // 20 points on two sides of a line, linear-equivalent Gram.
        let mut points = Vec::new();
        let mut labels16 = Vec::new();
        for i in 0..10 {
            points.push((1.0 + 0.1 * i as f64, 0.5 + 0.05 * i as f64));
            labels16.push(1u16);
            points.push((-1.0 - 0.1 * i as f64, -0.5 - 0.03 * i as f64));
            labels16.push(2u16);
        }
        let gram = linear_gram(&points);
        let refs: Vec<u32> = (0..20).collect();
        let model = train_multiclass(
            &gram,
            &labels16,
            10.0,
            1e-3,
            KernelDescriptor {
                kind: KernelKind::Sequence,
                gamma: 1.0,
                rho: None,
            },
            refs,
        )
        .unwrap();
        let mut correct = 0;
        for (q, &expected) in labels16.iter().enumerate() {
            let row: Vec<f64> = (0..20).map(|t| gram.get(q, t)).collect();
            if predict(&model, &row).unwrap() == expected {
                correct += 1;
            }
        }
        assert_eq!(correct, 20);
        // Dual feasibility: coefficients within the box, zero label-sum.
        for m in &model.binary_models {
            let sum: f64 = m.dual_coefs.iter().sum();
            assert!(sum.abs() <= 1e-6 * m.box_c, "sum {sum}");
            for &coef in &m.dual_coefs {
                assert!(coef.abs() <= m.box_c + 1e-9);
            }
        }
    }

    #[test]
    fn all_one_class_rejected() {
        let gram = identity_gram(3);
        assert!(matches!(
            train_binary(&gram, &[1.0, 1.0, 1.0], 1.0, 1e-3, (1, 2), &[0, 1, 2]),
            Err(Error::SingleClassTraining)
        ));
    }

    #[test]
    fn dual_objective_is_non_decreasing() {
        // Re-run SMO step by step on a small problem and track the dual
        // objective between pair updates.
        let points = [
            (1.0, 0.2),
            (0.8, -0.3),
            (-0.9, 0.1),
            (-1.1, -0.4),
            (0.3, 1.0),
            (-0.2, -1.0),
        ];
        let gram = linear_gram(&points);
        let labels = [1.0, 1.0, -1.0, -1.0, 1.0, -1.0];
        let c = 5.0;
        let n = labels.len();

        let mut alpha = vec![0f64; n];
        let mut grad = vec![-1f64; n];
        let objective = |alpha: &[f64]| -> f64 {
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += alpha[i] * alpha[j] * labels[i] * labels[j] * gram.get(i, j);
                }
            }
            alpha.iter().sum::<f64>() - 0.5 * quad
        };
        let mut prev = objective(&alpha);
        for _ in 0..200 {
            let mut i_best = None;
            let mut m_up = f64::NEG_INFINITY;
            let mut j_best = None;
            let mut m_low = f64::INFINITY;
            for t in 0..n {
                let v = -labels[t] * grad[t];
                let in_up =
                    (labels[t] > 0.0 && alpha[t] < c) || (labels[t] < 0.0 && alpha[t] > 0.0);
                let in_low =
                    (labels[t] > 0.0 && alpha[t] > 0.0) || (labels[t] < 0.0 && alpha[t] < c);
                if in_up && v > m_up {
                    m_up = v;
                    i_best = Some(t);
                }
                if in_low && v < m_low {
                    m_low = v;
                    j_best = Some(t);
                }
            }
            let (i, j) = match (i_best, j_best) {
                (Some(i), Some(j)) if m_up - m_low > 1e-9 => (i, j),
                _ => break,
            };
            let quad = (gram.get(i, i) + gram.get(j, j) - 2.0 * gram.get(i, j)).max(1e-12);
            let limit_i = if labels[i] > 0.0 {
                c - alpha[i]
            } else {
                alpha[i]
            };
            let limit_j = if labels[j] > 0.0 {
                alpha[j]
            } else {
                c - alpha[j]
            };
            let d = ((m_up - m_low) / quad).min(limit_i).min(limit_j);
            alpha[i] = (alpha[i] + labels[i] * d).clamp(0.0, c);
            alpha[j] = (alpha[j] - labels[j] * d).clamp(0.0, c);
            for t in 0..n {
                grad[t] += labels[t] * d * (gram.get(t, i) - gram.get(t, j));
            }
            let now = objective(&alpha);
            assert!(now >= prev - 1e-9, "objective fell from {prev} to {now}");
            prev = now;
        }
    }

    #[test]
    fn two_class_prediction_is_single_model_sign() {
        let gram = identity_gram(2);
        let model = train_multiclass(
            &gram,
            &[1, 2],
            10.0,
            1e-6,
            KernelDescriptor {
                kind: KernelKind::Sequence,
                gamma: 1.0,
                rho: None,
            },
            vec![0, 1],
        )
        .unwrap();
        assert_eq!(model.binary_models.len(), 1);
        assert_eq!(predict(&model, &[1.0, 0.0]).unwrap(), 1);
        assert_eq!(predict(&model, &[0.0, 1.0]).unwrap(), 2);
    }

    #[test]
    fn full_vote_tie_breaks_to_smallest_class() {
        // Three classes, rigged binary models giving one vote each.
        let mk = |pair: (u16, u16), coef: f64| SvmBinaryModel {
            support_indices: vec![0],
            dual_coefs: vec![coef],
            bias: 0.0,
            class_pair: pair,
            box_c: 1.0,
        };
        let model = SvmModel {
            // (1,2) -> 1, (1,3) -> 3, (2,3) -> 2: one vote each.
            binary_models: vec![mk((1, 2), 1.0), mk((1, 3), -1.0), mk((2, 3), 1.0)],
            classes: vec![1, 2, 3],
            kernel: KernelDescriptor {
                kind: KernelKind::Sequence,
                gamma: 1.0,
                rho: None,
            },
            training_instance_refs: vec![0],
        };
        assert_eq!(predict(&model, &[1.0]).unwrap(), 1);
    }

    #[test]
    fn scaling_gram_and_inverse_c_preserves_predictions() {
        let points = [
            (1.0, 0.1),
            (1.2, 0.3),
            (0.9, -0.1),
            (-1.0, 0.2),
            (-1.1, -0.2),
            (-0.8, 0.1),
            (0.1, 1.4),
            (-0.2, 1.2),
            (0.0, 1.0),
        ];
        let labels: Vec<u16> = vec![1, 1, 1, 2, 2, 2, 3, 3, 3];
        let gram = linear_gram(&points);
        let lambda = 2.5;
        let scaled = GramMatrix {
            n: gram.n,
            values: gram.values.iter().map(|v| v * lambda).collect(),
            kind: gram.kind,
            gamma: gram.gamma,
            rho: gram.rho,
        };
        let desc = KernelDescriptor {
            kind: KernelKind::Sequence,
            gamma: 1.0,
            rho: None,
        };
        let refs: Vec<u32> = (0..9).collect();
        let c = 4.0;
        let m1 = train_multiclass(&gram, &labels, c, 1e-6, desc, refs.clone()).unwrap();
        let m2 = train_multiclass(&scaled, &labels, c / lambda, 1e-6, desc, refs).unwrap();
        for q in 0..9 {
            let row1: Vec<f64> = (0..9).map(|t| gram.get(q, t)).collect();
            let row2: Vec<f64> = (0..9).map(|t| scaled.get(q, t)).collect();
            assert_eq!(predict(&m1, &row1).unwrap(), predict(&m2, &row2).unwrap());
        }
    }

    #[test]
    fn stratified_split_counts_and_determinism() {
        let mut map = LabelMap::new(3, 2);
        // Two classes, three pixels each.
        map.labels = vec![1, 1, 1, 2, 2, 2];
        let (train, test) = sample_training_set(&map, 1, 42).unwrap();
        assert_eq!(train.len(), 2);
        assert_eq!(test.len(), 4);
        let (train2, test2) = sample_training_set(&map, 1, 42).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
        // Train and test are disjoint and cover all labeled pixels.
        let mut all: Vec<u32> = train.iter().chain(test.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..6).collect::<Vec<u32>>());

        assert!(matches!(
            sample_training_set(&map, 4, 42),
            Err(Error::InsufficientClass {
                class: 1,
                have: 3,
                need: 4
            })
        ));
    }

    #[test]
    fn two_hundred_per_class_over_eight_classes() {
        let mut map = LabelMap::new(50, 40);
        for (i, l) in map.labels.iter_mut().enumerate() {
            *l = (i % 8) as u16 + 1;
        }
        let (train, test) = sample_training_set(&map, 200, 1).unwrap();
        assert_eq!(train.len(), 1600);
        assert_eq!(test.len(), 2000 - 1600);
    }

    #[test]
    fn model_file_round_trip() {
        let gram = identity_gram(4);
        let model = train_multiclass(
            &gram,
            &[1, 1, 2, 2],
            10.0,
            1e-6,
            KernelDescriptor {
                kind: KernelKind::Composite,
                gamma: 0.5,
                rho: Some(0.25),
            },
            vec![7, 9, 11, 13],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_model(&mut buf, &model).unwrap();
        let back = read_model(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(model, back);
    }

    struct FixedSource(GramMatrix);

    impl GramSource for FixedSource {
        fn gram(&self, _gamma: f64, _rho: Option<f64>) -> Result<GramMatrix> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn cv_single_cell_and_tie_break() {
        let points: Vec<(f64, f64)> = (0..12)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                (side * (1.0 + 0.05 * (i / 2) as f64), side * 0.2)
            })
            .collect();
        let labels: Vec<u16> = (0..12).map(|i| if i % 2 == 0 { 1 } else { 2 }).collect();
        let gram = linear_gram(&points);
        let source = FixedSource(gram);

        let grid = CvGrid {
            gammas: vec![1.0],
            cs: vec![8.0],
            rhos: vec![],
            folds: 3,
        };
        let out = cross_validate(&source, &labels, KernelKind::Sequence, &grid, 1e-3, 5).unwrap();
        assert_eq!(out.table.len(), 1);
        assert_eq!((out.best_gamma, out.best_c), (1.0, 8.0));

        // Same accuracy everywhere: ties prefer smaller C then larger
        // gamma.
        let grid = CvGrid {
            gammas: vec![0.5, 2.0],
            cs: vec![1.0, 4.0],
            rhos: vec![],
            folds: 3,
        };
        let out = cross_validate(&source, &labels, KernelKind::Sequence, &grid, 1e-3, 5).unwrap();
        let best_acc = out
            .table
            .iter()
            .map(|c| c.mean_accuracy)
            .fold(f64::MIN, f64::max);
        let tied: Vec<&CvCell> = out
            .table
            .iter()
            .filter(|c| c.mean_accuracy == best_acc)
            .collect();
        if tied.len() == out.table.len() {
            assert_eq!((out.best_c, out.best_gamma), (1.0, 2.0));
        }
    }

    #[test]
    fn cv_requires_enough_members_per_class() {
        let labels: Vec<u16> = vec![1, 1, 1, 2, 2];
        let gram = identity_gram(5);
        let source = FixedSource(gram);
        let grid = CvGrid {
            gammas: vec![1.0],
            cs: vec![1.0],
            rhos: vec![],
            folds: 3,
        };
        assert!(matches!(
            cross_validate(&source, &labels, KernelKind::Sequence, &grid, 1e-3, 5),
            Err(Error::InsufficientClass { class: 2, .. })
        ));
    }
}
