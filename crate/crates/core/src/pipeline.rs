//! End-to-end pipeline: instance construction from a co-registered
//! raster pair, per-scenario kernel classification with grid-searched
//! parameters, and repetition-level reporting.

use std::cell::RefCell;
use std::collections::HashMap;

use rayon::prelude::*;

use crate::classify::{
    cross_validate, predict, sample_training_set, train_multiclass, CvGrid, GramSource,
    KernelDescriptor, SvmModel,
};
use crate::error::{Error, Result};
use crate::eval::{metrics, repetition_stats, wilcoxon_compare, ConfusionMatrix, Metrics};
use crate::features::{
    features_for_partition, BandRoles, FeatureVector, QuantizedBand, Standardizer,
};
use crate::hierarchy::{
    build_merge_tree_of_window, cut_levels, extract_sequence, extract_tree, level_region_counts,
    Connectivity, SequenceInstance, TreeInstance,
};
use crate::kernels::{
    build_gram, kernel_rows, AtomicKernelParams, CompositeParams, GramMatrix, Instance, KernelKind,
};
use crate::raster::{patch_of, LabelMap, PatchMapping, Raster};

/// The five classification scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Gaussian kernel on pixel-level coarse features only.
    SingleCoarse,
    /// Sequence kernel over the coarse hierarchy.
    ContextCoarse,
    /// Gaussian kernel on whole-patch fine features only.
    SingleFine,
    /// Tree kernel over the fine patch hierarchies.
    SubregionsFine,
    /// Convex combination of the two structured kernels.
    Composite,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::SingleCoarse,
        Scenario::ContextCoarse,
        Scenario::SingleFine,
        Scenario::SubregionsFine,
        Scenario::Composite,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Scenario::SingleCoarse => "single_coarse",
            Scenario::ContextCoarse => "context_coarse",
            Scenario::SingleFine => "single_fine",
            Scenario::SubregionsFine => "subregions_fine",
            Scenario::Composite => "composite",
        }
    }

    pub fn parse(s: &str) -> Result<Scenario> {
        match s {
            "single_coarse" => Ok(Scenario::SingleCoarse),
            "context_coarse" => Ok(Scenario::ContextCoarse),
            "single_fine" => Ok(Scenario::SingleFine),
            "subregions_fine" => Ok(Scenario::SubregionsFine),
            "composite" => Ok(Scenario::Composite),
            other => Err(Error::InvalidParameter(format!(
                "unknown scenario '{other}'"
            ))),
        }
    }

    pub fn kernel_kind(&self) -> KernelKind {
        match self {
            Scenario::SingleCoarse | Scenario::ContextCoarse => KernelKind::Sequence,
            Scenario::SingleFine | Scenario::SubregionsFine => KernelKind::Tree,
            Scenario::Composite => KernelKind::Composite,
        }
    }
}

/// Hierarchy construction and experiment options.
#[derive(Debug, Clone)]
pub struct PipelineOptions {
    /// Ascending dissimilarity thresholds for the coarse hierarchy.
    pub coarse_thresholds: Vec<f64>,
    /// Descending dissimilarity thresholds for the fine patch trees.
    pub fine_thresholds: Vec<f64>,
    pub coarse_band_roles: BandRoles,
    pub fine_band_roles: BandRoles,
    pub connectivity: Connectivity,
    /// Standardize node features from training-set statistics before
    /// kernel evaluation.
    pub standardize: bool,
    pub grid: CvGrid,
    pub per_class: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub tol: f64,
}

impl PipelineOptions {
    /// Defaults: seven ascending coarse levels 2^-2..2^4, four
    /// descending fine levels 2^4..2^1, 200 samples per class,
    /// 10 repetitions.
    pub fn default_options(seed: u64) -> PipelineOptions {
        PipelineOptions {
            coarse_thresholds: (-2..=4).map(|e| 2f64.powi(e)).collect(),
            fine_thresholds: (1..=4).rev().map(|e| 2f64.powi(e)).collect(),
            coarse_band_roles: BandRoles { red: 1, nir: 2 },
            fine_band_roles: BandRoles { red: 1, nir: 2 },
            connectivity: Connectivity::Four,
            standardize: true,
            grid: CvGrid::default_grid(),
            per_class: 200,
            repetitions: 10,
            seed,
            tol: crate::classify::DEFAULT_TOL,
        }
    }
}

/// One feature-table row for the CSV dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub region_id: u32,
    /// 0 = pixel level, then ascending cut levels.
    pub level: usize,
    pub features: FeatureVector,
}

/// Instances for every labeled coarse pixel, in row-major pixel order.
#[derive(Debug, Clone)]
pub struct BuiltInstances {
    pub sequences: Vec<SequenceInstance>,
    pub trees: Vec<TreeInstance>,
    pub labels: Vec<u16>,
    /// Coarse row-major pixel index per instance.
    pub pixels: Vec<u32>,
    /// Region count per coarse cut level.
    pub coarse_region_counts: Vec<usize>,
    /// Coarse feature table (pixel level + every cut level).
    pub coarse_feature_rows: Vec<FeatureRow>,
}

impl BuiltInstances {
    pub fn classes(&self) -> Vec<u16> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Build the ascending sequence of every labeled coarse pixel and the
/// descending tree of its fine patch.
pub fn build_instances(
    coarse: &Raster,
    fine: &Raster,
    truth: &LabelMap,
    opts: &PipelineOptions,
) -> Result<BuiltInstances> {
    if truth.width != coarse.width || truth.height != coarse.height {
        return Err(Error::DimensionMismatch(format!(
            "truth {}x{} vs coarse {}x{}",
            truth.width, truth.height, coarse.width, coarse.height
        )));
    }
    let mapping = PatchMapping::new(coarse, fine)?;
    opts.coarse_band_roles.validate(coarse.bands)?;
    opts.fine_band_roles.validate(fine.bands)?;

    // Coarse hierarchy, cut levels, and the per-region feature table.
    let coarse_tree =
        build_merge_tree_of_window(coarse, 0, 0, coarse.width, coarse.height, opts.connectivity)?;
    let cut = cut_levels(&coarse_tree, &opts.coarse_thresholds)?;
    let coarse_region_counts = level_region_counts(&cut);

    let quant = QuantizedBand::new(coarse);
    let mut coarse_features: HashMap<u32, FeatureVector> = HashMap::new();
    let mut coarse_feature_rows: Vec<FeatureRow> = Vec::new();
    let pixel_partition: Vec<u32> = (0..coarse.pixel_count() as u32).collect();
    for (level, partition) in std::iter::once(&pixel_partition)
        .chain(cut.partitions.iter())
        .enumerate()
    {
        let table = features_for_partition(coarse, partition, &quant, opts.coarse_band_roles);
        let mut ids: Vec<u32> = table.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            coarse_feature_rows.push(FeatureRow {
                region_id: id,
                level,
                features: table[&id],
            });
        }
        coarse_features.extend(table);
    }

    let labeled: Vec<(u32, u16)> = truth
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != 0)
        .map(|(p, &l)| (p as u32, l))
        .collect();

    let sequences: Vec<SequenceInstance> = labeled
        .iter()
        .map(|&(pixel, _)| extract_sequence(&cut, pixel, &coarse_features))
        .collect::<Result<_>>()?;

    // Fine patch trees, independent across patches.
    let trees: Vec<TreeInstance> = labeled
        .par_iter()
        .map(|&(pixel, _)| -> Result<TreeInstance> {
            let cx = pixel as usize % coarse.width;
            let cy = pixel as usize / coarse.width;
            let rect = patch_of(&mapping, cx, cy)?;
            let patch = extract_patch(fine, rect.x0, rect.y0, mapping.scale_factor);
            let patch_tree = build_merge_tree_of_window(
                &patch,
                0,
                0,
                patch.width,
                patch.height,
                opts.connectivity,
            )?;
            let pquant = QuantizedBand::new(&patch);
            let mut table: HashMap<u32, FeatureVector> = HashMap::new();
            for &alpha in &opts.fine_thresholds {
                let partition = crate::hierarchy::partition_at(&patch_tree, alpha);
                for (id, f) in
                    features_for_partition(&patch, &partition, &pquant, opts.fine_band_roles)
                {
                    table.entry(id).or_insert(f);
                }
            }
            let root_partition = vec![patch_tree.root; patch.pixel_count()];
            for (id, f) in
                features_for_partition(&patch, &root_partition, &pquant, opts.fine_band_roles)
            {
                table.entry(id).or_insert(f);
            }
            extract_tree(&patch_tree, &opts.fine_thresholds, &table)
        })
        .collect::<Result<_>>()?;

    Ok(BuiltInstances {
        sequences,
        trees,
        labels: labeled.iter().map(|&(_, l)| l).collect(),
        pixels: labeled.iter().map(|&(p, _)| p).collect(),
        coarse_region_counts,
        coarse_feature_rows,
    })
}

fn extract_patch(fine: &Raster, x0: usize, y0: usize, size: usize) -> Raster {
    let mut patch = Raster::new(size, size, fine.bands, fine.band_names.clone());
    for b in 0..fine.bands {
        for y in 0..size {
            for x in 0..size {
                patch.set(b, x, y, fine.get(b, x0 + x, y0 + y));
            }
        }
    }
    patch
}

/// Scenario-ready instances: structures truncated per scenario, features
/// optionally standardized from the training subset.
fn scenario_instances(
    built: &BuiltInstances,
    scenario: Scenario,
    standardizers: Option<&(Standardizer, Standardizer)>,
) -> Vec<Instance> {
    let map_seq = |s: &SequenceInstance| -> SequenceInstance {
        match standardizers {
            Some((seq_std, _)) => SequenceInstance {
                features: s.features.iter().map(|f| seq_std.apply(f)).collect(),
                region_ids: s.region_ids.clone(),
            },
            None => s.clone(),
        }
    };
    let map_tree = |t: &TreeInstance| -> TreeInstance {
        match standardizers {
            Some((_, tree_std)) => TreeInstance {
                features: t.features.iter().map(|f| tree_std.apply(f)).collect(),
                parent_index: t.parent_index.clone(),
            },
            None => t.clone(),
        }
    };
    built
        .sequences
        .iter()
        .zip(&built.trees)
        .map(|(s, t)| {
            let sequence = match scenario {
                Scenario::SingleCoarse => map_seq(s).truncated_to_pixel_level(),
                _ => map_seq(s),
            };
            let tree = match scenario {
                Scenario::SingleFine => map_tree(t).truncated_to_root(),
                _ => map_tree(t),
            };
            Instance { sequence, tree }
        })
        .collect()
}

/// Normalized sequence and/or tree Gram for one gamma.
type GramPair = (Option<GramMatrix>, Option<GramMatrix>);

/// Per-gamma Gram cache over a fixed instance subset; composite cells
/// combine the two normalized matrices post-hoc.
pub struct InstanceGramSource<'a> {
    instances: &'a [Instance],
    kind: KernelKind,
    cache: RefCell<HashMap<u64, GramPair>>,
}

impl<'a> InstanceGramSource<'a> {
    pub fn new(instances: &'a [Instance], kind: KernelKind) -> Self {
        InstanceGramSource {
            instances,
            kind,
            cache: RefCell::new(HashMap::new()),
        }
    }
}

impl GramSource for InstanceGramSource<'_> {
    fn gram(&self, gamma: f64, rho: Option<f64>) -> Result<GramMatrix> {
        let key = gamma.to_bits();
        {
            let cache = self.cache.borrow();
            if let Some(entry) = cache.get(&key) {
                return assemble(entry, self.kind, rho);
            }
        }
        let params = AtomicKernelParams::new(gamma)?;
        let entry = match self.kind {
            KernelKind::Sequence => (
                Some(build_gram(
                    self.instances,
                    KernelKind::Sequence,
                    params,
                    None,
                )?),
                None,
            ),
            KernelKind::Tree => (
                None,
                Some(build_gram(self.instances, KernelKind::Tree, params, None)?),
            ),
            KernelKind::Composite => (
                Some(build_gram(
                    self.instances,
                    KernelKind::Sequence,
                    params,
                    None,
                )?),
                Some(build_gram(self.instances, KernelKind::Tree, params, None)?),
            ),
        };
        let gram = assemble(&entry, self.kind, rho)?;
        self.cache.borrow_mut().insert(key, entry);
        Ok(gram)
    }
}

fn assemble(entry: &GramPair, kind: KernelKind, rho: Option<f64>) -> Result<GramMatrix> {
    match kind {
        KernelKind::Sequence => Ok(entry.0.clone().expect("sequence gram cached")),
        KernelKind::Tree => Ok(entry.1.clone().expect("tree gram cached")),
        KernelKind::Composite => {
            let rho =
                rho.ok_or_else(|| Error::InvalidParameter("composite cell needs rho".into()))?;
            CompositeParams::new(rho)?;
            let ks = entry.0.as_ref().expect("sequence gram cached");
            let kt = entry.1.as_ref().expect("tree gram cached");
            let values = ks
                .values
                .iter()
                .zip(&kt.values)
                .map(|(s, t)| rho * s + (1.0 - rho) * t)
                .collect();
            Ok(GramMatrix {
                n: ks.n,
                values,
                kind: KernelKind::Composite,
                gamma: ks.gamma,
                rho: Some(rho),
            })
        }
    }
}

/// Chosen parameters and resulting metrics of one scenario run.
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub gamma: f64,
    pub c: f64,
    pub rho: Option<f64>,
    pub metrics: Metrics,
}

/// Mean and std (when >= 2 runs) of one metric over repetitions.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: Option<f64>,
}

fn summarize(runs: &[f64]) -> MetricSummary {
    if runs.len() >= 2 {
        let s = repetition_stats(runs).expect("two or more runs");
        MetricSummary {
            mean: s.mean,
            std: Some(s.std),
        }
    } else {
        MetricSummary {
            mean: runs.first().copied().unwrap_or(f64::NAN),
            std: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioSummary {
    pub scenario: Scenario,
    pub runs: Vec<ScenarioRun>,
    pub per_class: Vec<MetricSummary>,
    pub oa: MetricSummary,
    pub aa: MetricSummary,
    pub kappa: MetricSummary,
}

/// Paired signed-rank comparison of OA runs between two scenarios.
#[derive(Debug, Clone)]
pub struct ScenarioComparison {
    pub a: Scenario,
    pub b: Scenario,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub classes: Vec<u16>,
    pub scenarios: Vec<ScenarioSummary>,
    pub comparisons: Vec<ScenarioComparison>,
    pub repetitions: usize,
}

impl ExperimentReport {
    pub fn summary_of(&self, scenario: Scenario) -> Option<&ScenarioSummary> {
        self.scenarios.iter().find(|s| s.scenario == scenario)
    }
}

/// Run the requested scenarios for `opts.repetitions` paired splits and
/// aggregate Table-style statistics. Every scenario of one repetition
/// shares the same train/test split, which is what makes the paired
/// Wilcoxon comparison valid.
pub fn run_experiment(
    built: &BuiltInstances,
    truth: &LabelMap,
    scenarios: &[Scenario],
    opts: &PipelineOptions,
) -> Result<ExperimentReport> {
    if opts.repetitions == 0 {
        return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
    }
    let classes = built.classes();
    if classes.len() < 2 {
        return Err(Error::SingleClassTraining);
    }

    let mut runs: HashMap<&'static str, Vec<ScenarioRun>> = HashMap::new();
    for rep in 0..opts.repetitions {
        let split_seed = mix_seed(opts.seed, 0x5eed_0000 + rep as u64);
        let (train_ids, test_ids) = sample_training_set(truth, opts.per_class, split_seed)?;
        let standardizers = if opts.standardize {
            Some(fit_standardizers(built, &train_ids)?)
        } else {
            None
        };
        for &scenario in scenarios {
            let run = run_scenario_once(
                built,
                scenario,
                standardizers.as_ref(),
                &train_ids,
                &test_ids,
                opts,
                mix_seed(opts.seed, 0xc0de_0000 + rep as u64),
            )?;
            runs.entry(scenario.as_str()).or_default().push(run);
        }
    }

    let summaries: Vec<ScenarioSummary> = scenarios
        .iter()
        .map(|&scenario| {
            let sruns = runs[scenario.as_str()].clone();
            let k = classes.len();
            let per_class = (0..k)
                .map(|c| {
                    let vals: Vec<f64> = sruns
                        .iter()
                        .map(|r| r.metrics.per_class[c])
                        .filter(|v| v.is_finite())
                        .collect();
                    summarize(&vals)
                })
                .collect();
            ScenarioSummary {
                scenario,
                per_class,
                oa: summarize(&sruns.iter().map(|r| r.metrics.oa).collect::<Vec<f64>>()),
                aa: summarize(&sruns.iter().map(|r| r.metrics.aa).collect::<Vec<f64>>()),
                kappa: summarize(&sruns.iter().map(|r| r.metrics.kappa).collect::<Vec<f64>>()),
                runs: sruns,
            }
        })
        .collect();

    // Composite vs every other requested scenario, on paired OA runs.
    let mut comparisons = Vec::new();
    if scenarios.contains(&Scenario::Composite) && opts.repetitions >= 5 {
        let composite_oa: Vec<f64> = runs[Scenario::Composite.as_str()]
            .iter()
            .map(|r| r.metrics.oa)
            .collect();
        for &other in scenarios {
            if other == Scenario::Composite {
                continue;
            }
            let other_oa: Vec<f64> = runs[other.as_str()].iter().map(|r| r.metrics.oa).collect();
            let w = wilcoxon_compare(&composite_oa, &other_oa, 0.05)?;
            comparisons.push(ScenarioComparison {
                a: Scenario::Composite,
                b: other,
                p_value: w.p_value,
                significant: w.significant,
            });
        }
    }

    Ok(ExperimentReport {
        classes,
        scenarios: summaries,
        comparisons,
        repetitions: opts.repetitions,
    })
}

/// Pool node features of the training instances and fit one
/// standardizer per structure side.
fn fit_standardizers(
    built: &BuiltInstances,
    train_ids: &[u32],
) -> Result<(Standardizer, Standardizer)> {
    let mut seq_nodes: Vec<FeatureVector> = Vec::new();
    let mut tree_nodes: Vec<FeatureVector> = Vec::new();
    for &id in train_ids {
        seq_nodes.extend(built.sequences[id as usize].features.iter().copied());
        tree_nodes.extend(built.trees[id as usize].features.iter().copied());
    }
    Ok((
        Standardizer::fit(&seq_nodes)?,
        Standardizer::fit(&tree_nodes)?,
    ))
}

#[allow(clippy::too_many_arguments)]
fn run_scenario_once(
    built: &BuiltInstances,
    scenario: Scenario,
    standardizers: Option<&(Standardizer, Standardizer)>,
    train_ids: &[u32],
    test_ids: &[u32],
    opts: &PipelineOptions,
    cv_seed: u64,
) -> Result<ScenarioRun> {
    let kind = scenario.kernel_kind();
    let all = scenario_instances(built, scenario, standardizers);
    let train: Vec<Instance> = train_ids.iter().map(|&i| all[i as usize].clone()).collect();
    let train_labels: Vec<u16> = train_ids
        .iter()
        .map(|&i| built.labels[i as usize])
        .collect();

    let source = InstanceGramSource::new(&train, kind);
    let outcome = cross_validate(&source, &train_labels, kind, &opts.grid, opts.tol, cv_seed)?;
    let gram = source.gram(outcome.best_gamma, outcome.best_rho)?;
    let model = train_multiclass(
        &gram,
        &train_labels,
        outcome.best_c,
        opts.tol,
        KernelDescriptor {
            kind,
            gamma: outcome.best_gamma,
            rho: outcome.best_rho,
        },
        train_ids.to_vec(),
    )?;

    let test: Vec<Instance> = test_ids.iter().map(|&i| all[i as usize].clone()).collect();
    let params = AtomicKernelParams::new(outcome.best_gamma)?;
    let composite = outcome.best_rho.map(CompositeParams::new).transpose()?;
    let rows = kernel_rows(&test, &train, kind, params, composite)?;

    let mut cm = ConfusionMatrix::new(built.classes());
    for (row, &id) in rows.iter().zip(test_ids) {
        let predicted = predict_row(&model, row)?;
        cm.record(built.labels[id as usize], predicted);
    }
    Ok(ScenarioRun {
        gamma: outcome.best_gamma,
        c: outcome.best_c,
        rho: outcome.best_rho,
        metrics: metrics(&cm)?,
    })
}

fn predict_row(model: &SvmModel, row: &[f64]) -> Result<u16> {
    predict(model, row)
}

fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------
// Report rendering: plain-text table plus machine-readable CSV rows.
// ---------------------------------------------------------------------

/// Plain-text report, one scenario column per requested scenario, with
/// per-class rows and OA/AA/Kappa footer; std in parentheses.
pub fn render_report(report: &ExperimentReport, class_names: &[String]) -> String {
    let mut out = String::new();
    let name_of = |idx: usize| -> String {
        class_names
            .get(idx)
            .cloned()
            .unwrap_or_else(|| format!("class {}", report.classes[idx]))
    };
    let cell = |m: &MetricSummary, scale: f64, decimals: usize| -> String {
        match m.std {
            Some(std) => format!(
                "{:.prec$} ({:.prec$})",
                m.mean * scale,
                std * scale,
                prec = decimals
            ),
            None => format!("{:.prec$}", m.mean * scale, prec = decimals),
        }
    };

    let headers: Vec<&str> = report
        .scenarios
        .iter()
        .map(|s| s.scenario.as_str())
        .collect();
    let mut width = 24usize;
    for h in &headers {
        width = width.max(h.len() + 2);
    }
    out.push_str(&format!("{:<24}", "Class"));
    for h in &headers {
        out.push_str(&format!("{h:>width$}"));
    }
    out.push('\n');
    for idx in 0..report.classes.len() {
        out.push_str(&format!("{:<24}", name_of(idx)));
        for s in &report.scenarios {
            out.push_str(&format!("{:>width$}", cell(&s.per_class[idx], 100.0, 2)));
        }
        out.push('\n');
    }
    for (label, pick) in [("OA", 0usize), ("AA", 1), ("Kappa", 2)] {
        out.push_str(&format!("{label:<24}"));
        for s in &report.scenarios {
            let m = match pick {
                0 => &s.oa,
                1 => &s.aa,
                _ => &s.kappa,
            };
            let (scale, decimals) = if pick == 2 { (1.0, 3) } else { (100.0, 2) };
            out.push_str(&format!("{:>width$}", cell(m, scale, decimals)));
        }
        out.push('\n');
    }
    if !report.comparisons.is_empty() {
        out.push('\n');
        out.push_str("Wilcoxon signed-rank on OA runs (alpha = 0.05):\n");
        for c in &report.comparisons {
            out.push_str(&format!(
                "  {} vs {}: p = {:.6}{}\n",
                c.a.as_str(),
                c.b.as_str(),
                c.p_value,
                if c.significant { "  (significant)" } else { "" }
            ));
        }
    }
    out
}

/// CSV mirror of the report: scenario, metric, mean, std.
pub fn render_report_csv(report: &ExperimentReport, class_names: &[String]) -> String {
    let mut out = String::from("scenario,metric,mean,std\n");
    let fmt_std = |m: &MetricSummary| {
        m.std
            .map(|s| format!("{s:.6}"))
            .unwrap_or_else(|| "".into())
    };
    for s in &report.scenarios {
        for (idx, pc) in s.per_class.iter().enumerate() {
            let name = class_names
                .get(idx)
                .cloned()
                .unwrap_or_else(|| format!("class_{}", report.classes[idx]));
            out.push_str(&format!(
                "{},{},{:.6},{}\n",
                s.scenario.as_str(),
                name,
                pc.mean,
                fmt_std(pc)
            ));
        }
        out.push_str(&format!(
            "{},oa,{:.6},{}\n",
            s.scenario.as_str(),
            s.oa.mean,
            fmt_std(&s.oa)
        ));
        out.push_str(&format!(
            "{},aa,{:.6},{}\n",
            s.scenario.as_str(),
            s.aa.mean,
            fmt_std(&s.aa)
        ));
        out.push_str(&format!(
            "{},kappa,{:.6},{}\n",
            s.scenario.as_str(),
            s.kappa.mean,
            fmt_std(&s.kappa)
        ));
    }
    for c in &report.comparisons {
        out.push_str(&format!(
            "wilcoxon,{}_vs_{},{:.6},{}\n",
            c.a.as_str(),
            c.b.as_str(),
            c.p_value,
            c.significant
        ));
    }
    out
}
