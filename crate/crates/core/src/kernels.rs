//! Subpath structured kernels.
//!
//! A subpath is a contiguous ancestor-to-descendant chain of nodes; the
//! kernel between two structures sums, over every pair of equal-length
//! subpaths, the product of Gaussian atomic kernels on aligned nodes.
//! Both the sequence and the tree kernel fill one |G| x |G'| matrix in
//! which every cell extends the chains ending at its node pair, giving
//! quadratic cost overall. Brute-force enumeration oracles are provided
//! for validation, plus normalization, the composite combination, and
//! Gram assembly over a labeled instance set.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hierarchy::{SequenceInstance, TreeInstance};

/// Gaussian bandwidth of the atomic kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomicKernelParams {
    pub gamma: f64,
}

impl AtomicKernelParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be finite positive, got {gamma}"
            )));
        }
        Ok(AtomicKernelParams { gamma })
    }
}

/// Mixing weight of the composite kernel: rho on the sequence side,
/// 1 - rho on the tree side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositeParams {
    pub rho: f64,
}

impl CompositeParams {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) || !rho.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "rho must be in [0,1], got {rho}"
            )));
        }
        Ok(CompositeParams { rho })
    }
}

/// Gaussian atomic kernel exp(-gamma ||x - x'||^2).
pub fn atomic_kernel(x: &[f64], y: &[f64], params: AtomicKernelParams) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "atomic kernel on {} vs {} dims",
            x.len(),
            y.len()
        )));
    }
    Ok(atomic_unchecked(x, y, params.gamma))
}

#[inline]
fn atomic_unchecked(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    let mut d2 = 0.0;
    for (a, b) in x.iter().zip(y) {
        let d = a - b;
        d2 += d * d;
    }
    (-gamma * d2).exp()
}

/// Unnormalized subpath kernel between two sequences.
///
/// Each matrix cell holds the sum over equal-length subpath pairs ending
/// at that node pair: M[i][j] = k(i,j) * (1 + M[i-1][j-1]); the kernel
/// is the sum of all cells. Every atomic pair is evaluated exactly once.
/// Only the previous row of M is ever read, so a two-row rolling buffer
/// stands in for the full matrix.
pub fn sequence_kernel(
    a: &SequenceInstance,
    b: &SequenceInstance,
    params: AtomicKernelParams,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sequence instance"));
    }
    let n = a.len();
    let m = b.len();
    // Index 0 holds the boundary zeros of the recursion.
    let mut prev = vec![0f64; m + 1];
    let mut curr = vec![0f64; m + 1];
    let mut total = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let k = atomic_unchecked(&a.features[i - 1], &b.features[j - 1], params.gamma);
            let v = k * (1.0 + prev[j - 1]);
            curr[j] = v;
            total += v;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(total)
}

/// Unnormalized subpath kernel between two trees in pre-order parent
/// table form. Same recursion as the sequence kernel with the diagonal
/// predecessor replaced by the parent pair; pre-order guarantees parent
/// cells are filled before their children.
pub fn tree_kernel(a: &TreeInstance, b: &TreeInstance, params: AtomicKernelParams) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let n = a.len();
    let m = b.len();
    // Index 0 is the virtual parent of the root and holds zero.
    let mut mat = vec![0f64; (n + 1) * (m + 1)];
    let mut total = 0.0;
    for i in 1..=n {
        let pi = a.parent_index[i - 1] as usize;
        for j in 1..=m {
            let pj = b.parent_index[j - 1] as usize;
            let k = atomic_unchecked(&a.features[i - 1], &b.features[j - 1], params.gamma);
            let v = k * (1.0 + mat[pi * (m + 1) + pj]);
            mat[i * (m + 1) + j] = v;
            total += v;
        }
    }
    Ok(total)
}

/// Default node-count cap for the brute-force oracles.
pub const ORACLE_NODE_CAP: usize = 14;

/// Brute-force sequence kernel: enumerate every contiguous run of each
/// sequence and sum, over equal-length pairs, the product of atomic
/// values. Reference oracle for the dynamic program; capped at
/// [`ORACLE_NODE_CAP`] nodes.
pub fn brute_force_sequence_kernel(
    a: &SequenceInstance,
    b: &SequenceInstance,
    params: AtomicKernelParams,
) -> Result<f64> {
    brute_force_sequence_kernel_with_cap(a, b, params, ORACLE_NODE_CAP)
}

pub fn brute_force_sequence_kernel_with_cap(
    a: &SequenceInstance,
    b: &SequenceInstance,
    params: AtomicKernelParams,
    cap: usize,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sequence instance"));
    }
    check_cap(a.len(), cap)?;
    check_cap(b.len(), cap)?;
    let subpaths_a = sequence_subpaths(a);
    let subpaths_b = sequence_subpaths(b);
    Ok(sum_matched_pairs(
        &subpaths_a,
        &subpaths_b,
        &a.features,
        &b.features,
        params.gamma,
    ))
}

/// Brute-force tree kernel: enumerate every descending ancestor-to-
/// descendant chain of each tree and sum matched products; capped at
/// [`ORACLE_NODE_CAP`] nodes.
pub fn brute_force_tree_kernel(
    a: &TreeInstance,
    b: &TreeInstance,
    params: AtomicKernelParams,
) -> Result<f64> {
    brute_force_tree_kernel_with_cap(a, b, params, ORACLE_NODE_CAP)
}

pub fn brute_force_tree_kernel_with_cap(
    a: &TreeInstance,
    b: &TreeInstance,
    params: AtomicKernelParams,
    cap: usize,
) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    check_cap(a.len(), cap)?;
    check_cap(b.len(), cap)?;
    let subpaths_a = tree_subpaths(a);
    let subpaths_b = tree_subpaths(b);
    Ok(sum_matched_pairs(
        &subpaths_a,
        &subpaths_b,
        &a.features,
        &b.features,
        params.gamma,
    ))
}

fn check_cap(size: usize, cap: usize) -> Result<()> {
    if size > cap {
        return Err(Error::OracleCapExceeded { size, cap });
    }
    Ok(())
}

/// All contiguous runs as 0-based node index chains.
fn sequence_subpaths(s: &SequenceInstance) -> Vec<Vec<usize>> {
    let n = s.len();
    let mut out = Vec::new();
    for start in 0..n {
        for end in start..n {
            out.push((start..=end).collect());
        }
    }
    out
}

/// All ancestor-to-descendant chains as 0-based node index chains: for
/// every node, one chain from each of its ancestors (and itself) down to
/// it along the unique tree path.
fn tree_subpaths(t: &TreeInstance) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for v in 0..t.len() {
        let mut chain = vec![v];
        let mut u = v;
        loop {
            out.push(chain.iter().rev().copied().collect());
            let p = t.parent_index[u] as usize;
            if p == 0 {
                break;
            }
            u = p - 1;
            chain.push(u);
        }
    }
    out
}

fn sum_matched_pairs(
    subpaths_a: &[Vec<usize>],
    subpaths_b: &[Vec<usize>],
    features_a: &[crate::features::FeatureVector],
    features_b: &[crate::features::FeatureVector],
    gamma: f64,
) -> f64 {
    let mut total = 0.0;
    for sa in subpaths_a {
        for sb in subpaths_b {
            if sa.len() != sb.len() {
                continue;
            }
            let mut prod = 1.0;
            for (&ia, &ib) in sa.iter().zip(sb) {
                prod *= atomic_unchecked(&features_a[ia], &features_b[ib], gamma);
            }
            total += prod;
        }
    }
    total
}

/// Cosine normalization K(g,g') / sqrt(K(g,g) K(g',g')).
pub fn normalize(raw_gg: f64, raw_g_self: f64, raw_gp_self: f64) -> Result<f64> {
    if raw_g_self <= 0.0 {
        return Err(Error::NonPositiveSelfKernel(raw_g_self));
    }
    if raw_gp_self <= 0.0 {
        return Err(Error::NonPositiveSelfKernel(raw_gp_self));
    }
    Ok(raw_gg / (raw_g_self * raw_gp_self).sqrt())
}

/// Convex combination rho * K*(S,S') + (1 - rho) * K*(T,T').
pub fn composite_kernel(k_seq: f64, k_tree: f64, params: CompositeParams) -> f64 {
    params.rho * k_seq + (1.0 - params.rho) * k_tree
}

/// Which structure a Gram matrix was computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Sequence,
    Tree,
    Composite,
}

impl KernelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            KernelKind::Sequence => "sequence",
            KernelKind::Tree => "tree",
            KernelKind::Composite => "composite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequence" => Ok(KernelKind::Sequence),
            "tree" => Ok(KernelKind::Tree),
            "composite" => Ok(KernelKind::Composite),
            other => Err(Error::InvalidParameter(format!(
                "unknown kernel kind '{other}'"
            ))),
        }
    }
}

/// Symmetric matrix of normalized kernel values over an instance set.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub n: usize,
    /// Row-major n x n values.
    pub values: Vec<f64>,
    pub kind: KernelKind,
    pub gamma: f64,
    pub rho: Option<f64>,
}

impl GramMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Restrict to a subset of instances, preserving order.
    pub fn subset(&self, ids: &[usize]) -> GramMatrix {
        let n = ids.len();
        let mut values = vec![0f64; n * n];
        for (a, &i) in ids.iter().enumerate() {
            for (b, &j) in ids.iter().enumerate() {
                values[a * n + b] = self.get(i, j);
            }
        }
        GramMatrix {
            n,
            values,
            kind: self.kind,
            gamma: self.gamma,
            rho: self.rho,
        }
    }
}

/// One labeled data instance: the coarse-image sequence and the
/// fine-image tree describing the same coarse pixel.
#[derive(Debug, Clone)]
pub struct Instance {
    pub sequence: SequenceInstance,
    pub tree: TreeInstance,
}

/// Normalized kernel value between two instances under `kind`.
///
/// Self-kernels of both arguments are recomputed; prefer
/// [`build_gram`] / [`kernel_rows`] when evaluating many pairs.
pub fn instance_kernel(
    a: &Instance,
    b: &Instance,
    kind: KernelKind,
    params: AtomicKernelParams,
    composite: Option<CompositeParams>,
) -> Result<f64> {
    let seq = |x: &Instance, y: &Instance| -> Result<f64> {
        let raw = sequence_kernel(&x.sequence, &y.sequence, params)?;
        let sx = sequence_kernel(&x.sequence, &x.sequence, params)?;
        let sy = sequence_kernel(&y.sequence, &y.sequence, params)?;
        normalize(raw, sx, sy)
    };
    let tree = |x: &Instance, y: &Instance| -> Result<f64> {
        let raw = tree_kernel(&x.tree, &y.tree, params)?;
        let sx = tree_kernel(&x.tree, &x.tree, params)?;
        let sy = tree_kernel(&y.tree, &y.tree, params)?;
        normalize(raw, sx, sy)
    };
    match kind {
        KernelKind::Sequence => seq(a, b),
        KernelKind::Tree => tree(a, b),
        KernelKind::Composite => {
            let rho = composite
                .ok_or_else(|| Error::InvalidParameter("composite kernel needs rho".into()))?;
            Ok(composite_kernel(seq(a, b)?, tree(a, b)?, rho))
        }
    }
}

/// Build the symmetric Gram matrix of normalized (and, for composite,
/// combined) kernel values. Each unordered pair is computed once in the
/// upper triangle (parallel over rows) and mirrored; the diagonal is
/// exactly 1.
pub fn build_gram(
    instances: &[Instance],
    kind: KernelKind,
    params: AtomicKernelParams,
    composite: Option<CompositeParams>,
) -> Result<GramMatrix> {
    if instances.is_empty() {
        return Err(Error::EmptyInput("instance list"));
    }
    if kind == KernelKind::Composite && composite.is_none() {
        return Err(Error::InvalidParameter("composite kernel needs rho".into()));
    }
    let n = instances.len();

    let seq_self: Vec<f64> = match kind {
        KernelKind::Tree => Vec::new(),
        _ => instances
            .par_iter()
            .map(|x| sequence_kernel(&x.sequence, &x.sequence, params))
            .collect::<Result<_>>()?,
    };
    let tree_self: Vec<f64> = match kind {
        KernelKind::Sequence => Vec::new(),
        _ => instances
            .par_iter()
            .map(|x| tree_kernel(&x.tree, &x.tree, params))
            .collect::<Result<_>>()?,
    };

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut row = vec![0f64; n - i];
            for j in i..n {
                row[j - i] = if i == j {
                    1.0
                } else {
                    pair_value(
                        &instances[i],
                        &instances[j],
                        kind,
                        params,
                        composite,
                        &seq_self,
                        &tree_self,
                        i,
                        j,
                    )?
                };
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut values = vec![0f64; n * n];
    for (i, row) in rows.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    Ok(GramMatrix {
        n,
        values,
        kind,
        gamma: params.gamma,
        rho: composite.map(|c| c.rho),
    })
}

#[allow(clippy::too_many_arguments)]
fn pair_value(
    a: &Instance,
    b: &Instance,
    kind: KernelKind,
    params: AtomicKernelParams,
    composite: Option<CompositeParams>,
    seq_self: &[f64],
    tree_self: &[f64],
    i: usize,
    j: usize,
) -> Result<f64> {
    let seq = |a: &Instance, b: &Instance| -> Result<f64> {
        let raw = sequence_kernel(&a.sequence, &b.sequence, params)?;
        normalize(raw, seq_self[i], seq_self[j])
    };
    let tree = |a: &Instance, b: &Instance| -> Result<f64> {
        let raw = tree_kernel(&a.tree, &b.tree, params)?;
        normalize(raw, tree_self[i], tree_self[j])
    };
    match kind {
        KernelKind::Sequence => seq(a, b),
        KernelKind::Tree => tree(a, b),
        KernelKind::Composite => Ok(composite_kernel(
            seq(a, b)?,
            tree(a, b)?,
            composite.unwrap(),
        )),
    }
}

/// Normalized kernel values between each query and every reference
/// instance (parallel over queries). Reference and query self-kernels
/// are computed once.
pub fn kernel_rows(
    queries: &[Instance],
    references: &[Instance],
    kind: KernelKind,
    params: AtomicKernelParams,
    composite: Option<CompositeParams>,
) -> Result<Vec<Vec<f64>>> {
    if kind == KernelKind::Composite && composite.is_none() {
        return Err(Error::InvalidParameter("composite kernel needs rho".into()));
    }
    let need_seq = kind != KernelKind::Tree;
    let need_tree = kind != KernelKind::Sequence;
    let ref_seq_self: Vec<f64> = if need_seq {
        references
            .par_iter()
            .map(|x| sequence_kernel(&x.sequence, &x.sequence, params))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let ref_tree_self: Vec<f64> = if need_tree {
        references
            .par_iter()
            .map(|x| tree_kernel(&x.tree, &x.tree, params))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    queries
        .par_iter()
        .map(|q| -> Result<Vec<f64>> {
            let q_seq_self = if need_seq {
                sequence_kernel(&q.sequence, &q.sequence, params)?
            } else {
                1.0
            };
            let q_tree_self = if need_tree {
                tree_kernel(&q.tree, &q.tree, params)?
            } else {
                1.0
            };
            let mut row = Vec::with_capacity(references.len());
            for (r, reference) in references.iter().enumerate() {
                let v = match kind {
                    KernelKind::Sequence => normalize(
                        sequence_kernel(&q.sequence, &reference.sequence, params)?,
                        q_seq_self,
                        ref_seq_self[r],
                    )?,
                    KernelKind::Tree => normalize(
                        tree_kernel(&q.tree, &reference.tree, params)?,
                        q_tree_self,
                        ref_tree_self[r],
                    )?,
                    KernelKind::Composite => {
                        let s = normalize(
                            sequence_kernel(&q.sequence, &reference.sequence, params)?,
                            q_seq_self,
                            ref_seq_self[r],
                        )?;
                        let t = normalize(
                            tree_kernel(&q.tree, &reference.tree, params)?,
                            q_tree_self,
                            ref_tree_self[r],
                        )?;
                        composite_kernel(s, t, composite.unwrap())
                    }
                };
                row.push(v);
            }
            Ok(row)
        })
        .collect()
}

// ---------------------------------------------------------------------
// Gram file: ASCII header + row-major float64 little-endian payload.
// ---------------------------------------------------------------------

pub fn write_gram<W: Write>(w: &mut W, gram: &GramMatrix) -> Result<()> {
    match gram.rho {
        Some(rho) => writeln!(
            w,
            "GRAM {} {} {:?} {:?}",
            gram.n,
            gram.kind.as_str(),
            gram.gamma,
            rho
        )?,
        None => writeln!(w, "GRAM {} {} {:?}", gram.n, gram.kind.as_str(), gram.gamma)?,
    }
    for v in &gram.values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_gram<R: Read>(r: &mut R) -> Result<GramMatrix> {
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte).map_err(|e| Error::MalformedFile {
            format: "gram",
            detail: e.to_string(),
        })?;
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
        if header.len() > 256 {
            return Err(Error::MalformedFile {
                format: "gram",
                detail: "header too long".into(),
            });
        }
    }
    let header = String::from_utf8(header).map_err(|_| Error::MalformedFile {
        format: "gram",
        detail: "non-ascii header".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() < 4 || parts[0] != "GRAM" {
        return Err(Error::MalformedFile {
            format: "gram",
            detail: format!("bad header '{header}'"),
        });
    }
    let n: usize = parts[1].parse().map_err(|_| Error::MalformedFile {
        format: "gram",
        detail: "bad n".into(),
    })?;
    let kind = KernelKind::parse(parts[2])?;
    let gamma: f64 = parts[3].parse().map_err(|_| Error::MalformedFile {
        format: "gram",
        detail: "bad gamma".into(),
    })?;
    let rho = if parts.len() > 4 {
        Some(parts[4].parse::<f64>().map_err(|_| Error::MalformedFile {
            format: "gram",
            detail: "bad rho".into(),
        })?)
    } else {
        None
    };
    let mut payload = vec![0u8; n * n * 8];
    r.read_exact(&mut payload)
        .map_err(|e| Error::MalformedFile {
            format: "gram",
            detail: e.to_string(),
        })?;
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GramMatrix {
        n,
        values,
        kind,
        gamma,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureVector, FEATURE_DIM};
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn feat(fill: f64) -> FeatureVector {
        [fill; FEATURE_DIM]
    }

    fn seq(features: Vec<FeatureVector>) -> SequenceInstance {
        let n = features.len();
        SequenceInstance {
            features,
            region_ids: vec![0; n],
        }
    }

    fn params(gamma: f64) -> AtomicKernelParams {
        AtomicKernelParams::new(gamma).unwrap()
    }

    /// Widely separated node features realize an indicator-like atomic
    /// kernel at gamma = 10: k(a,a) = k(b,b) = 1, k(a,b) < 1e-12.
    fn indicator_nodes() -> (FeatureVector, FeatureVector) {
        (feat(0.0), feat(100.0))
    }

    #[test]
    fn atomic_kernel_values() {
        let p = params(1.0);
        let x = feat(0.3);
        assert_eq!(atomic_kernel(&x, &x, p).unwrap(), 1.0);

        // gamma = 1, squared distance ln 2 -> 0.5.
        let mut y = x;
        y[0] = x[0] + 2f64.ln().sqrt();
        let v = atomic_kernel(&x, &y, p).unwrap();
        assert!((v - 0.5).abs() < 1e-12);

        // gamma = 0.5, x = (0,0), x' = (1,1) -> exp(-1).
        let v = atomic_kernel(&[0.0, 0.0], &[1.0, 1.0], params(0.5)).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-9);

        assert!(atomic_kernel(&[0.0], &[0.0, 1.0], p).is_err());
    }

    #[test]
    fn single_node_sequences() {
        let s = seq(vec![feat(0.2)]);
        let v = sequence_kernel(&s, &s, params(1.0)).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn two_node_indicator_sequence_gives_three() {
        let (a, b) = indicator_nodes();
        let s = seq(vec![a, b]);
        let p = params(10.0);
        let dp = sequence_kernel(&s, &s, p).unwrap();
        let oracle = brute_force_sequence_kernel(&s, &s, p).unwrap();
        assert!((dp - 3.0).abs() < 1e-9, "dp {dp}");
        assert!((oracle - 3.0).abs() < 1e-9, "oracle {oracle}");
    }

    #[test]
    fn three_node_indicator_tree_gives_nine() {
        let (a, b) = indicator_nodes();
        let t = TreeInstance {
            features: vec![a, b, b],
            parent_index: vec![0, 1, 1],
        };
        let p = params(10.0);
        let dp = tree_kernel(&t, &t, p).unwrap();
        let oracle = brute_force_tree_kernel(&t, &t, p).unwrap();
        assert!((dp - 9.0).abs() < 1e-9, "dp {dp}");
        assert!((oracle - 9.0).abs() < 1e-9, "oracle {oracle}");
    }

    #[test]
    fn single_node_tree_pair_is_atomic_value() {
        let t1 = TreeInstance {
            features: vec![feat(0.0)],
            parent_index: vec![0],
        };
        let t2 = TreeInstance {
            features: vec![feat(0.1)],
            parent_index: vec![0],
        };
        let p = params(1.0);
        let expect = atomic_kernel(&t1.features[0], &t2.features[0], p).unwrap();
        assert_eq!(tree_kernel(&t1, &t2, p).unwrap(), expect);
        assert_eq!(brute_force_tree_kernel(&t1, &t2, p).unwrap(), expect);
    }

    #[test]
    fn oracle_cap_enforced() {
        let s = seq(vec![feat(0.1); ORACLE_NODE_CAP + 1]);
        assert!(matches!(
            brute_force_sequence_kernel(&s, &s, params(1.0)),
            Err(Error::OracleCapExceeded { .. })
        ));
    }

    #[test]
    fn normalize_values() {
        assert_eq!(normalize(5.0, 5.0, 5.0).unwrap(), 1.0);
        assert_eq!(normalize(3.0, 4.0, 9.0).unwrap(), 0.5);
        assert!(normalize(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn composite_endpoints_and_midpoint() {
        let half = CompositeParams::new(0.5).unwrap();
        assert_eq!(
            composite_kernel(0.8, 0.3, CompositeParams::new(1.0).unwrap()),
            0.8
        );
        assert_eq!(
            composite_kernel(0.8, 0.3, CompositeParams::new(0.0).unwrap()),
            0.3
        );
        assert!((composite_kernel(0.8, 0.6, half) - 0.7).abs() < 1e-15);
        assert!(CompositeParams::new(1.5).is_err());
        assert!(CompositeParams::new(-0.1).is_err());
    }

    fn random_feature(rng: &mut ChaCha8Rng) -> FeatureVector {
        let mut f = [0f64; FEATURE_DIM];
        for v in f.iter_mut() {
            *v = rng.random::<f64>();
        }
        f
    }

    fn random_sequence(rng: &mut ChaCha8Rng, max_len: usize) -> SequenceInstance {
        let len = rng.random_range(1..=max_len);
        seq((0..len).map(|_| random_feature(rng)).collect())
    }

    fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> TreeInstance {
        let n = rng.random_range(1..=max_nodes);
        let mut parent_index = vec![0u32];
        for i in 1..n {
            parent_index.push(rng.random_range(1..=i) as u32);
        }
        TreeInstance {
            features: (0..n).map(|_| random_feature(rng)).collect(),
            parent_index,
        }
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
        Instance {
            sequence: random_sequence(rng, 8),
            tree: random_tree(rng, 12),
        }
    }

    #[test]
    fn dp_matches_brute_force_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for gamma in [0.1, 1.0, 10.0] {
            let p = params(gamma);
            for _ in 0..70 {
                let a = random_sequence(&mut rng, 10);
                let b = random_sequence(&mut rng, 10);
                let dp = sequence_kernel(&a, &b, p).unwrap();
                let bf = brute_force_sequence_kernel(&a, &b, p).unwrap();
                assert!((dp - bf).abs() <= 1e-9 * bf.max(1.0), "seq {dp} vs {bf}");

                let ta = random_tree(&mut rng, 12);
                let tb = random_tree(&mut rng, 12);
                let dp = tree_kernel(&ta, &tb, p).unwrap();
                let bf = brute_force_tree_kernel(&ta, &tb, p).unwrap();
                assert!((dp - bf).abs() <= 1e-9 * bf.max(1.0), "tree {dp} vs {bf}");
            }
        }
    }

    #[test]
    fn path_tree_equals_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = params(1.0);
        for _ in 0..20 {
            let s1 = random_sequence(&mut rng, 9);
            let s2 = random_sequence(&mut rng, 9);
            let chain = |s: &SequenceInstance| TreeInstance {
                features: s.features.clone(),
                parent_index: (0..s.len() as u32).collect(),
            };
            let k_seq = sequence_kernel(&s1, &s2, p).unwrap();
            let k_tree = tree_kernel(&chain(&s1), &chain(&s2), p).unwrap();
            assert!((k_seq - k_tree).abs() <= 1e-12 * k_seq.max(1.0));
        }
    }

    #[test]
    fn sibling_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = params(1.0);
        // Root with three leaf children in two different sibling orders.
        let f: Vec<FeatureVector> = (0..4).map(|_| random_feature(&mut rng)).collect();
        let t1 = TreeInstance {
            features: vec![f[0], f[1], f[2], f[3]],
            parent_index: vec![0, 1, 1, 1],
        };
        let t2 = TreeInstance {
            features: vec![f[0], f[3], f[1], f[2]],
            parent_index: vec![0, 1, 1, 1],
        };
        let other = random_tree(&mut rng, 10);
        let v1 = tree_kernel(&t1, &other, p).unwrap();
        let v2 = tree_kernel(&t2, &other, p).unwrap();
        assert!((v1 - v2).abs() <= 1e-12 * v1.max(1.0));

        // Deeper swap: move a whole subtree to the other sibling slot.
        let t3 = TreeInstance {
            features: vec![f[0], f[1], f[2], f[3]],
            parent_index: vec![0, 1, 2, 1],
        };
        let t4 = TreeInstance {
            features: vec![f[0], f[3], f[1], f[2]],
            parent_index: vec![0, 1, 1, 3],
        };
        let v3 = tree_kernel(&t3, &other, p).unwrap();
        let v4 = tree_kernel(&t4, &other, p).unwrap();
        assert!((v3 - v4).abs() <= 1e-12 * v3.max(1.0));
    }

    #[test]
    fn appending_node_does_not_decrease_self_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = params(1.0);
        for _ in 0..20 {
            let s = random_sequence(&mut rng, 9);
            let mut longer = s.clone();
            longer.features.push(random_feature(&mut rng));
            longer.region_ids.push(0);
            let k1 = sequence_kernel(&s, &s, p).unwrap();
            let k2 = sequence_kernel(&longer, &longer, p).unwrap();
            assert!(k2 >= k1);
        }
    }

    #[test]
    fn gram_is_normalized_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let instances: Vec<Instance> = (0..30).map(|_| random_instance(&mut rng)).collect();
        for (kind, rho) in [
            (KernelKind::Sequence, None),
            (KernelKind::Tree, None),
            (
                KernelKind::Composite,
                Some(CompositeParams::new(0.5).unwrap()),
            ),
        ] {
            let gram = build_gram(&instances, kind, params(1.0), rho).unwrap();
            for i in 0..gram.n {
                assert!((gram.get(i, i) - 1.0).abs() <= 1e-12);
                for j in 0..gram.n {
                    let v = gram.get(i, j);
                    assert_eq!(v, gram.get(j, i));
                    assert!(v > -1e-12 && v <= 1.0 + 1e-12, "entry {v}");
                }
            }
            // PSD within tolerance, checked by dense symmetric
            // eigendecomposition.
            let m = nalgebra::DMatrix::from_row_slice(gram.n, gram.n, &gram.values);
            let eig = m.symmetric_eigen();
            let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
            let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
            assert!(min >= -1e-8 * max, "kind {kind:?}: min {min} max {max}");
        }
    }

    #[test]
    fn trivial_grams() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let one = vec![random_instance(&mut rng)];
        let g = build_gram(&one, KernelKind::Sequence, params(1.0), None).unwrap();
        assert_eq!(g.values, vec![1.0]);

        let two = vec![one[0].clone(), one[0].clone()];
        let g = build_gram(&two, KernelKind::Tree, params(1.0), None).unwrap();
        for v in &g.values {
            assert!((v - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn gram_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let instances: Vec<Instance> = (0..5).map(|_| random_instance(&mut rng)).collect();
        let gram = build_gram(
            &instances,
            KernelKind::Composite,
            params(0.5),
            Some(CompositeParams::new(0.25).unwrap()),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_gram(&mut buf, &gram).unwrap();
        let back = read_gram(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(gram, back);

        let gram = build_gram(&instances, KernelKind::Sequence, params(2.0), None).unwrap();
        let mut buf = Vec::new();
        write_gram(&mut buf, &gram).unwrap();
        let back = read_gram(&mut std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(gram, back);
    }

    #[test]
    fn kernel_rows_match_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let instances: Vec<Instance> = (0..8).map(|_| random_instance(&mut rng)).collect();
        let p = params(1.0);
        let rho = Some(CompositeParams::new(0.3).unwrap());
        for (kind, rho) in [
            (KernelKind::Sequence, None),
            (KernelKind::Tree, None),
            (KernelKind::Composite, rho),
        ] {
            let gram = build_gram(&instances, kind, p, rho).unwrap();
            let rows = kernel_rows(&instances, &instances, kind, p, rho).unwrap();
            for (i, row) in rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    let d = (v - gram.get(i, j)).abs();
                    assert!(d <= 1e-12, "({i},{j}): {v} vs {}", gram.get(i, j));
                }
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn kernel_symmetry(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = params(1.0);
            let a = random_sequence(&mut rng, 8);
            let b = random_sequence(&mut rng, 8);
            let ab = sequence_kernel(&a, &b, p).unwrap();
            let ba = sequence_kernel(&b, &a, p).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));

            let ta = random_tree(&mut rng, 10);
            let tb = random_tree(&mut rng, 10);
            let ab = tree_kernel(&ta, &tb, p).unwrap();
            let ba = tree_kernel(&tb, &ta, p).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn normalized_pair_in_unit_interval(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = params(1.0);
            let a = random_instance(&mut rng);
            let b = random_instance(&mut rng);
            for kind in [KernelKind::Sequence, KernelKind::Tree] {
                let v = instance_kernel(&a, &b, kind, p, None).unwrap();
                prop_assert!(v > 0.0 && v <= 1.0 + 1e-12, "{kind:?} {v}");
                let s = instance_kernel(&a, &a, kind, p, None).unwrap();
                prop_assert!((s - 1.0).abs() <= 1e-12);
            }
        }
    }
}
