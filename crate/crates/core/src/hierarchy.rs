//! Bottom-up region-merging hierarchies, threshold cuts, and the two
//! instance structures extracted from them: the ascending sequence of a
//! coarse pixel and the descending tree of a fine-image patch.
//!
//! Region ids are merge-tree node ids: leaves are `0..pixel_count`, one
//! per pixel in row-major order; internal nodes are appended in merge
//! order, so children always precede their parent.

use std::collections::{BTreeSet, BinaryHeap};
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::raster::Raster;

/// Pixel connectivity for the region adjacency graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Dissimilarity between regions. The only criterion implemented is the
/// Euclidean distance between region mean spectral vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dissimilarity {
    EuclidMean,
}

#[derive(Debug, Clone)]
pub struct MergeNode {
    /// Children node ids, `None` for leaves.
    pub children: Option<(u32, u32)>,
    pub parent: Option<u32>,
    /// Dissimilarity at which the merge occurred; 0 for leaves. Clamped
    /// so costs are non-decreasing along every leaf-to-root path.
    pub merge_cost: f64,
    pub pixel_count: u32,
    /// Smallest row-major pixel index in the node's pixel set.
    pub min_pixel: u32,
    /// Bounding box (x0, y0, x1, y1), half open.
    pub bbox: (u32, u32, u32, u32),
}

/// Full binary merge tree over one raster (or one patch of it).
#[derive(Debug, Clone)]
pub struct MergeTree {
    pub width: usize,
    pub height: usize,
    pub nodes: Vec<MergeNode>,
    pub root: u32,
}

impl MergeTree {
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Row-major pixel indices of a node's pixel set, ascending.
    pub fn node_pixels(&self, node: u32) -> Vec<u32> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(v) = stack.pop() {
            match self.nodes[v as usize].children {
                None => out.push(v),
                Some((a, b)) => {
                    stack.push(a);
                    stack.push(b);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Text dump, one line per node: node_id, parent_id, merge_cost,
    /// pixel_count. The root's parent is written as -1.
    pub fn dump<W: Write>(&self, w: &mut W) -> Result<()> {
        for (id, n) in self.nodes.iter().enumerate() {
            let parent = n.parent.map(|p| p as i64).unwrap_or(-1);
            writeln!(
                w,
                "{} {} {} {}",
                id,
                parent,
                format_f64(n.merge_cost),
                n.pixel_count
            )?;
        }
        Ok(())
    }
}

/// Exact, locale-free float formatting for text dumps.
fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Candidate merge in the priority queue: ordered by (cost, smaller id,
/// larger id) so equal-cost ties break lexicographically.
#[derive(Debug, PartialEq)]
struct Candidate {
    cost: f64,
    a: u32,
    b: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Reversed: BinaryHeap is a max-heap, we want the smallest.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Build the merge tree of a raster: start from single pixels and
/// repeatedly merge the adjacent region pair with minimal dissimilarity,
/// updating adjacency by union, until one region remains.
pub fn build_merge_tree(
    raster: &Raster,
    connectivity: Connectivity,
    _dissimilarity: Dissimilarity,
) -> Result<MergeTree> {
    build_merge_tree_of_window(raster, 0, 0, raster.width, raster.height, connectivity)
}

/// Same as [`build_merge_tree`] but restricted to a window of the
/// raster; leaf ids are row-major within the window.
pub fn build_merge_tree_of_window(
    raster: &Raster,
    x0: usize,
    y0: usize,
    width: usize,
    height: usize,
    connectivity: Connectivity,
) -> Result<MergeTree> {
    let n = width * height;
    if n == 0 {
        return Err(Error::EmptyInput("raster window"));
    }
    let bands = raster.bands;
    let capacity = 2 * n - 1;

    let mut nodes: Vec<MergeNode> = Vec::with_capacity(capacity);
    // Band sums per active region; means are sums / pixel_count.
    let mut sums: Vec<Vec<f64>> = Vec::with_capacity(capacity);
    let mut neighbors: Vec<BTreeSet<u32>> = Vec::with_capacity(capacity);
    let mut alive: Vec<bool> = Vec::with_capacity(capacity);

    for wy in 0..height {
        for wx in 0..width {
            let gx = x0 + wx;
            let gy = y0 + wy;
            nodes.push(MergeNode {
                children: None,
                parent: None,
                merge_cost: 0.0,
                pixel_count: 1,
                min_pixel: (wy * width + wx) as u32,
                bbox: (wx as u32, wy as u32, wx as u32 + 1, wy as u32 + 1),
            });
            sums.push((0..bands).map(|b| raster.get(b, gx, gy) as f64).collect());
            neighbors.push(BTreeSet::new());
            alive.push(true);
        }
    }

    let offsets: &[(i64, i64)] = match connectivity {
        Connectivity::Four => &[(1, 0), (0, 1)],
        Connectivity::Eight => &[(1, 0), (0, 1), (1, 1), (1, -1)],
    };
    for wy in 0..height as i64 {
        for wx in 0..width as i64 {
            let p = (wy * width as i64 + wx) as u32;
            for &(dx, dy) in offsets {
                let (nx, ny) = (wx + dx, wy + dy);
                if nx >= 0 && ny >= 0 && nx < width as i64 && ny < height as i64 {
                    let q = (ny * width as i64 + nx) as u32;
                    neighbors[p as usize].insert(q);
                    neighbors[q as usize].insert(p);
                }
            }
        }
    }

    let dist = |sa: &[f64], ca: u32, sb: &[f64], cb: u32| -> f64 {
        let (ca, cb) = (ca as f64, cb as f64);
        let mut d2 = 0.0;
        for b in 0..bands {
            let d = sa[b] / ca - sb[b] / cb;
            d2 += d * d;
        }
        d2.sqrt()
    };

    let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
    for p in 0..n as u32 {
        for &q in neighbors[p as usize].iter() {
            if p < q {
                let cost = dist(&sums[p as usize], 1, &sums[q as usize], 1);
                heap.push(Candidate { cost, a: p, b: q });
            }
        }
    }

    let mut merges_left = n - 1;
    while merges_left > 0 {
        let Candidate { cost, a, b } = heap.pop().expect("adjacency graph is connected");
        // Ids are never reused, so an entry is stale exactly when one
        // endpoint has been merged away.
        if !alive[a as usize] || !alive[b as usize] {
            continue;
        }
        let id = nodes.len() as u32;
        // Stored cost is clamped to keep leaf-to-root paths monotone;
        // the greedy order itself uses the raw dissimilarity.
        let stored = cost
            .max(nodes[a as usize].merge_cost)
            .max(nodes[b as usize].merge_cost);
        let (ba, bb) = (nodes[a as usize].bbox, nodes[b as usize].bbox);
        nodes.push(MergeNode {
            children: Some((a, b)),
            parent: None,
            merge_cost: stored,
            pixel_count: nodes[a as usize].pixel_count + nodes[b as usize].pixel_count,
            min_pixel: nodes[a as usize].min_pixel.min(nodes[b as usize].min_pixel),
            bbox: (
                ba.0.min(bb.0),
                ba.1.min(bb.1),
                ba.2.max(bb.2),
                ba.3.max(bb.3),
            ),
        });
        nodes[a as usize].parent = Some(id);
        nodes[b as usize].parent = Some(id);
        alive[a as usize] = false;
        alive[b as usize] = false;
        alive.push(true);

        let sum: Vec<f64> = (0..bands)
            .map(|i| sums[a as usize][i] + sums[b as usize][i])
            .collect();
        let merged_neighbors: BTreeSet<u32> = neighbors[a as usize]
            .iter()
            .chain(neighbors[b as usize].iter())
            .copied()
            .filter(|&x| x != a && x != b)
            .collect();
        for &m in &merged_neighbors {
            neighbors[m as usize].remove(&a);
            neighbors[m as usize].remove(&b);
            neighbors[m as usize].insert(id);
            let cost = dist(
                &sum,
                nodes[id as usize].pixel_count,
                &sums[m as usize],
                nodes[m as usize].pixel_count,
            );
            let (lo, hi) = if m < id { (m, id) } else { (id, m) };
            heap.push(Candidate { cost, a: lo, b: hi });
        }
        sums.push(sum);
        neighbors.push(merged_neighbors);
        sums[a as usize].clear();
        sums[b as usize].clear();
        neighbors[a as usize].clear();
        neighbors[b as usize].clear();

        merges_left -= 1;
    }

    let root = nodes.len() as u32 - 1;
    Ok(MergeTree {
        width,
        height,
        nodes,
        root,
    })
}

/// Partitions of the pixel grid at each threshold of an ascending list.
#[derive(Debug, Clone)]
pub struct LevelCut {
    pub thresholds: Vec<f64>,
    /// One entry per threshold: pixel index -> region (node) id.
    pub partitions: Vec<Vec<u32>>,
}

impl LevelCut {
    pub fn levels(&self) -> usize {
        self.thresholds.len()
    }
}

/// Region id per pixel after applying every merge with cost <= alpha.
pub fn partition_at(tree: &MergeTree, alpha: f64) -> Vec<u32> {
    let node_count = tree.nodes.len();
    // Highest reachable ancestor per node; parents are created after
    // children, so iterate ids descending.
    let mut top: Vec<u32> = (0..node_count as u32).collect();
    for v in (0..node_count).rev() {
        if let Some(p) = tree.nodes[v].parent {
            if tree.nodes[p as usize].merge_cost <= alpha {
                top[v] = top[p as usize];
            }
        }
    }
    (0..tree.pixel_count()).map(|p| top[p]).collect()
}

/// Cut the tree at every threshold of a strictly ascending list.
pub fn cut_levels(tree: &MergeTree, thresholds: &[f64]) -> Result<LevelCut> {
    ensure_strictly_ordered(thresholds, true)?;
    let partitions = thresholds.iter().map(|&a| partition_at(tree, a)).collect();
    Ok(LevelCut {
        thresholds: thresholds.to_vec(),
        partitions,
    })
}

fn ensure_strictly_ordered(thresholds: &[f64], ascending: bool) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::BadThresholds {
            order: if ascending { "ascending" } else { "descending" },
            detail: "empty threshold list".into(),
        });
    }
    for w in thresholds.windows(2) {
        let ok = if ascending { w[0] < w[1] } else { w[0] > w[1] };
        if !ok {
            return Err(Error::BadThresholds {
                order: if ascending { "ascending" } else { "descending" },
                detail: format!("{} then {}", w[0], w[1]),
            });
        }
    }
    Ok(())
}

/// Region count per level of a cut.
pub fn level_region_counts(cut: &LevelCut) -> Vec<usize> {
    cut.partitions
        .iter()
        .map(|p| {
            let mut distinct: Vec<u32> = p.clone();
            distinct.sort_unstable();
            distinct.dedup();
            distinct.len()
        })
        .collect()
}

/// Ascending chain of region feature vectors for one coarse pixel:
/// pixel level first, coarsest level last.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceInstance {
    pub features: Vec<FeatureVector>,
    pub region_ids: Vec<u32>,
}

impl SequenceInstance {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// The pixel-level node alone (single-level scenarios).
    pub fn truncated_to_pixel_level(&self) -> SequenceInstance {
        SequenceInstance {
            features: vec![self.features[0]],
            region_ids: vec![self.region_ids[0]],
        }
    }
}

/// Pre-order node list plus 1-based parent-index table for one
/// fine-image patch; the root's parent index is 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeInstance {
    pub features: Vec<FeatureVector>,
    pub parent_index: Vec<u32>,
}

impl TreeInstance {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.parent_index.len() {
            return Err(Error::BadParentTable(format!(
                "{} features vs {} parent entries",
                self.features.len(),
                self.parent_index.len()
            )));
        }
        if self.parent_index.is_empty() {
            return Err(Error::BadParentTable("empty tree".into()));
        }
        if self.parent_index[0] != 0 {
            return Err(Error::BadParentTable("root parent must be 0".into()));
        }
        for (i, &p) in self.parent_index.iter().enumerate().skip(1) {
            let pos = i as u32 + 1;
            if p == 0 || p >= pos {
                return Err(Error::BadParentTable(format!(
                    "node {pos} has parent {p}, want 1 <= parent < {pos}"
                )));
            }
        }
        Ok(())
    }

    /// The root node alone (single-level scenarios).
    pub fn truncated_to_root(&self) -> TreeInstance {
        TreeInstance {
            features: vec![self.features[0]],
            parent_index: vec![0],
        }
    }
}

/// Look up features for the regions along one pixel's chain.
pub trait FeatureSource {
    fn feature_of(&self, region: u32) -> Option<FeatureVector>;
}

impl FeatureSource for std::collections::HashMap<u32, FeatureVector> {
    fn feature_of(&self, region: u32) -> Option<FeatureVector> {
        self.get(&region).copied()
    }
}

/// Sequence of a coarse pixel: its own region first, then the enclosing
/// region at each cut level in ascending threshold order.
pub fn extract_sequence<F: FeatureSource>(
    cut: &LevelCut,
    pixel: u32,
    features: &F,
) -> Result<SequenceInstance> {
    let mut region_ids = Vec::with_capacity(1 + cut.levels());
    region_ids.push(pixel);
    for partition in &cut.partitions {
        region_ids.push(partition[pixel as usize]);
    }
    let mut feats = Vec::with_capacity(region_ids.len());
    for &rid in &region_ids {
        feats.push(features.feature_of(rid).ok_or(Error::MissingFeature(rid))?);
    }
    Ok(SequenceInstance {
        features: feats,
        region_ids,
    })
}

/// Tree of one fine-image patch, cut at strictly descending thresholds.
///
/// The root is the whole patch. Children of a region are the regions of
/// the next finer cut contained in it; a region identical to its parent
/// is not duplicated (single-child chains are suppressed). Serialization
/// is pre-order depth-first with children ordered by smallest contained
/// pixel index.
pub fn extract_tree<F: FeatureSource>(
    patch_tree: &MergeTree,
    thresholds: &[f64],
    features: &F,
) -> Result<TreeInstance> {
    ensure_strictly_ordered(thresholds, false)?;
    // partitions[k]: pixel -> region id at threshold k (finer as k grows).
    let partitions: Vec<Vec<u32>> = thresholds
        .iter()
        .map(|&a| partition_at(patch_tree, a))
        .collect();

    let mut preorder_regions: Vec<u32> = Vec::new();
    let mut parent_index: Vec<u32> = Vec::new();
    // Stack of (region id, level it was emitted at, parent position).
    let mut stack: Vec<(u32, usize, u32)> = vec![(patch_tree.root, 0, 0)];
    while let Some((region, level, parent_pos)) = stack.pop() {
        let pos = preorder_regions.len() as u32 + 1;
        preorder_regions.push(region);
        parent_index.push(parent_pos);

        // Find the first deeper level where this region splits.
        let pixels = patch_tree.node_pixels(region);
        for (k, partition) in partitions.iter().enumerate().skip(level) {
            let mut children: Vec<u32> = pixels.iter().map(|&p| partition[p as usize]).collect();
            children.sort_unstable();
            children.dedup();
            if children.len() <= 1 {
                continue;
            }
            // Push in reverse min-pixel order so the stack pops children
            // smallest-first.
            children.sort_by_key(|&c| patch_tree.nodes[c as usize].min_pixel);
            for &c in children.iter().rev() {
                stack.push((c, k + 1, pos));
            }
            break;
        }
    }

    let mut feats = Vec::with_capacity(preorder_regions.len());
    for &rid in &preorder_regions {
        feats.push(features.feature_of(rid).ok_or(Error::MissingFeature(rid))?);
    }
    let tree = TreeInstance {
        features: feats,
        parent_index,
    };
    tree.validate()?;
    Ok(tree)
}

/// All distinct region ids a tree instance will reference for a patch
/// tree and descending thresholds (root and every cut region).
pub fn tree_region_ids(patch_tree: &MergeTree, thresholds: &[f64]) -> Vec<u32> {
    let mut ids: BTreeSet<u32> = BTreeSet::new();
    ids.insert(patch_tree.root);
    for &a in thresholds {
        for rid in partition_at(patch_tree, a) {
            ids.insert(rid);
        }
    }
    ids.into_iter().collect()
}

// ---------------------------------------------------------------------
// Instance archives: binary container with a count header.
// ---------------------------------------------------------------------

const SEQ_MAGIC: &[u8; 4] = b"HSQ1";
const TREE_MAGIC: &[u8; 4] = b"HTR1";

pub fn write_sequence_archive<W: Write>(w: &mut W, instances: &[SequenceInstance]) -> Result<()> {
    w.write_all(SEQ_MAGIC)?;
    w.write_all(&(instances.len() as u64).to_le_bytes())?;
    for inst in instances {
        w.write_all(&(inst.len() as u32).to_le_bytes())?;
        for f in &inst.features {
            for v in f {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_sequence_archive<R: Read>(r: &mut R) -> Result<Vec<SequenceInstance>> {
    expect_magic(r, SEQ_MAGIC, "sequence archive")?;
    let count = read_u64(r, "sequence archive")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(r, "sequence archive")? as usize;
        let features = read_features(r, len, "sequence archive")?;
        out.push(SequenceInstance {
            features,
            region_ids: vec![0; len],
        });
    }
    Ok(out)
}

pub fn write_tree_archive<W: Write>(w: &mut W, instances: &[TreeInstance]) -> Result<()> {
    w.write_all(TREE_MAGIC)?;
    w.write_all(&(instances.len() as u64).to_le_bytes())?;
    for inst in instances {
        w.write_all(&(inst.len() as u32).to_le_bytes())?;
        for &p in &inst.parent_index {
            w.write_all(&p.to_le_bytes())?;
        }
        for f in &inst.features {
            for v in f {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_tree_archive<R: Read>(r: &mut R) -> Result<Vec<TreeInstance>> {
    expect_magic(r, TREE_MAGIC, "tree archive")?;
    let count = read_u64(r, "tree archive")?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = read_u32(r, "tree archive")? as usize;
        let mut parent_index = Vec::with_capacity(len);
        for _ in 0..len {
            parent_index.push(read_u32(r, "tree archive")?);
        }
        let features = read_features(r, len, "tree archive")?;
        let inst = TreeInstance {
            features,
            parent_index,
        };
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 4], format: &'static str) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got).map_err(|e| Error::MalformedFile {
        format,
        detail: format!("missing magic: {e}"),
    })?;
    if &got != magic {
        return Err(Error::MalformedFile {
            format,
            detail: format!("bad magic {got:?}"),
        });
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R, format: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::MalformedFile {
        format,
        detail: e.to_string(),
    })?;
    Ok(u64::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R, format: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::MalformedFile {
        format,
        detail: e.to_string(),
    })?;
    Ok(u32::from_le_bytes(b))
}

fn read_features<R: Read>(
    r: &mut R,
    len: usize,
    format: &'static str,
) -> Result<Vec<FeatureVector>> {
    let mut features = Vec::with_capacity(len);
    for _ in 0..len {
        let mut f = [0f64; crate::features::FEATURE_DIM];
        for v in f.iter_mut() {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|e| Error::MalformedFile {
                format,
                detail: e.to_string(),
            })?;
            *v = f64::from_le_bytes(b);
        }
        features.push(f);
    }
    Ok(features)
}
