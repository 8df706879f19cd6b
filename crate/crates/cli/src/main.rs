//! Pipeline driver: every stage of the multi-resolution kernel
//! classification workflow as a subcommand over a shared JSON config.
//!
//! Exit codes: 0 on success, 2 on configuration errors, 3 on data or
//! i/o errors.

mod config;

use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use hierclass::classify::{
    predict, read_model, sample_training_set, train_multiclass, write_model, KernelDescriptor,
    SvmModel,
};
use hierclass::eval::{metrics, ConfusionMatrix};
use hierclass::hierarchy::{
    build_merge_tree_of_window, read_sequence_archive, read_tree_archive, write_sequence_archive,
    write_tree_archive,
};
use hierclass::kernels::{
    build_gram, read_gram, write_gram, AtomicKernelParams, CompositeParams, GramMatrix, Instance,
    KernelKind,
};
use hierclass::pipeline::{
    build_instances, render_report, render_report_csv, run_experiment, Scenario,
};
use hierclass::raster::{
    load_label_map, load_raster, write_class_map, write_label_map, write_raster, LabelMap,
    RasterFormat,
};
use hierclass::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "hierclass",
    version,
    about = "Hierarchical multi-resolution kernel classification pipeline"
)]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true, default_value = "pipeline.json")]
    config: PathBuf,
    /// Override the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Override the work directory from the config.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic two-resolution dataset.
    Synth,
    /// Build sequence and tree instances from the raster pair.
    Build,
    /// Compute the Gram matrix over all built instances.
    Gram,
    /// Sample a train/test split and train the one-against-one SVM.
    Train,
    /// Predict every built instance from the Gram matrix and model.
    Predict,
    /// Score test predictions against the ground truth.
    Evaluate,
    /// Run classification scenarios end to end with cross-validation.
    Experiment {
        /// Single scenario to run (default: all five).
        #[arg(long)]
        scenario: Option<String>,
    },
}

/// Marker for errors that are the user's configuration rather than data.
#[derive(Debug)]
struct ConfigError(String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(ConfigError(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config_side = err.downcast_ref::<ConfigError>().is_some()
                || err
                    .downcast_ref::<hierclass::Error>()
                    .map(|e| e.is_config())
                    .unwrap_or(false);
            if config_side {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| config_err(format!("cannot configure {jobs} workers: {e}")))?;
    }
    let config = PipelineConfig::load(&cli.config).map_err(|e| config_err(format!("{e:#}")))?;
    let seed = cli.seed.unwrap_or(config.seed);
    let work = config.work_dir(cli.work_dir.as_deref());

    match &cli.command {
        Command::Synth => cmd_synth(&config, seed, &work),
        Command::Build => cmd_build(&config, seed, &work),
        Command::Gram => cmd_gram(&config, &work),
        Command::Train => cmd_train(&config, seed, &work),
        Command::Predict => cmd_predict(&config, &work),
        Command::Evaluate => cmd_evaluate(&config, &work),
        Command::Experiment { scenario } => {
            cmd_experiment(&config, seed, &work, scenario.as_deref())
        }
    }
}

fn stage_dir(work: &Path, stage: &str) -> anyhow::Result<PathBuf> {
    let dir = work.join(stage);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_manifest(dir: &Path, value: serde_json::Value) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(&value)?;
    bytes.push(b'\n');
    fs::write(dir.join("manifest.json"), bytes)?;
    Ok(())
}

fn cmd_synth(config: &PipelineConfig, seed: u64, work: &Path) -> anyhow::Result<()> {
    let mut synth_config = config
        .synth
        .clone()
        .unwrap_or_else(|| SynthConfig::default_desk(seed));
    synth_config.seed = seed;
    let dataset = generate(&synth_config)?;
    let dir = stage_dir(work, "dataset")?;

    write_raster(&dataset.coarse, &dir.join("coarse.bf"))?;
    write_raster(&dataset.fine, &dir.join("fine.bf"))?;
    write_label_map(&dataset.truth, &dir.join("truth.pgm"))?;
    let mut sidecar = serde_json::to_vec_pretty(&synth_config)?;
    sidecar.push(b'\n');
    fs::write(dir.join("synth.json"), sidecar)?;

    println!(
        "synth: {}x{} coarse + {}x{} fine + truth written to {}",
        dataset.coarse.width,
        dataset.coarse.height,
        dataset.fine.width,
        dataset.fine.height,
        dir.display()
    );
    Ok(())
}

fn load_dataset(
    config: &PipelineConfig,
    work: &Path,
) -> anyhow::Result<(
    hierclass::raster::Raster,
    hierclass::raster::Raster,
    LabelMap,
)> {
    let (coarse_path, fine_path, truth_path) = config.dataset_paths(work);
    let coarse = load_raster(&coarse_path, RasterFormat::BandFloat)
        .map_err(|e| anyhow::anyhow!("loading {}: {e}", coarse_path.display()))?;
    let fine = load_raster(&fine_path, RasterFormat::BandFloat)
        .map_err(|e| anyhow::anyhow!("loading {}: {e}", fine_path.display()))?;
    let truth = load_label_map(&truth_path)
        .map_err(|e| anyhow::anyhow!("loading {}: {e}", truth_path.display()))?;
    Ok((coarse, fine, truth))
}

fn cmd_build(config: &PipelineConfig, seed: u64, work: &Path) -> anyhow::Result<()> {
    let (coarse, fine, truth) = load_dataset(config, work)?;
    let opts = config.options(seed);
    let built = build_instances(&coarse, &fine, &truth, &opts)?;
    let dir = stage_dir(work, "build")?;

    let mut w = BufWriter::new(fs::File::create(dir.join("sequences.bin"))?);
    write_sequence_archive(&mut w, &built.sequences)?;
    w.flush()?;
    let mut w = BufWriter::new(fs::File::create(dir.join("trees.bin"))?);
    write_tree_archive(&mut w, &built.trees)?;
    w.flush()?;

    let mut labels = String::from("instance,pixel_x,pixel_y,class\n");
    for (i, (&pixel, &class)) in built.pixels.iter().zip(&built.labels).enumerate() {
        let x = pixel as usize % coarse.width;
        let y = pixel as usize / coarse.width;
        labels.push_str(&format!("{i},{x},{y},{class}\n"));
    }
    fs::write(dir.join("labels.csv"), labels)?;

    let mut counts = String::from("level,threshold,regions\n");
    for (level, (&t, &n)) in opts
        .coarse_thresholds
        .iter()
        .zip(&built.coarse_region_counts)
        .enumerate()
    {
        counts.push_str(&format!("{},{},{}\n", level + 1, t, n));
    }
    fs::write(dir.join("region_counts.csv"), counts)?;

    let mut features = String::from(
        "region_id,level,mean_b0,mean_b1,mean_b2,mean_b3,brightness,ndvi,glcm_homogeneity,std_dev\n",
    );
    for row in &built.coarse_feature_rows {
        features.push_str(&format!("{},{}", row.region_id, row.level));
        for v in row.features {
            features.push_str(&format!(",{v:?}"));
        }
        features.push('\n');
    }
    fs::write(dir.join("features.csv"), features)?;

    // Text dump of the coarse merge tree for debugging and golden tests.
    let coarse_tree = build_merge_tree_of_window(
        &coarse,
        0,
        0,
        coarse.width,
        coarse.height,
        opts.connectivity,
    )?;
    let mut dump = Vec::new();
    coarse_tree.dump(&mut dump)?;
    fs::write(dir.join("coarse_hierarchy.txt"), dump)?;

    write_manifest(
        &dir,
        serde_json::json!({
            "instances": built.sequences.len(),
            "coarse_thresholds": opts.coarse_thresholds,
            "fine_thresholds": opts.fine_thresholds,
            "region_counts": built.coarse_region_counts,
            "seed": seed,
        }),
    )?;
    println!(
        "build: {} instances, region counts {:?}",
        built.sequences.len(),
        built.coarse_region_counts
    );
    Ok(())
}

fn load_built(work: &Path) -> anyhow::Result<(Vec<Instance>, Vec<u16>)> {
    let dir = work.join("build");
    let mut r = BufReader::new(fs::File::open(dir.join("sequences.bin"))?);
    let sequences = read_sequence_archive(&mut r)?;
    let mut r = BufReader::new(fs::File::open(dir.join("trees.bin"))?);
    let trees = read_tree_archive(&mut r)?;
    if sequences.len() != trees.len() {
        anyhow::bail!(
            "archive mismatch: {} sequences vs {} trees",
            sequences.len(),
            trees.len()
        );
    }
    let labels_text = fs::read_to_string(dir.join("labels.csv"))?;
    let mut labels = Vec::new();
    for line in labels_text.lines().skip(1) {
        let class = line
            .rsplit(',')
            .next()
            .and_then(|t| t.parse::<u16>().ok())
            .ok_or_else(|| anyhow::anyhow!("bad labels.csv line: {line}"))?;
        labels.push(class);
    }
    if labels.len() != sequences.len() {
        anyhow::bail!(
            "labels.csv has {} rows, archives {}",
            labels.len(),
            sequences.len()
        );
    }
    let instances = sequences
        .into_iter()
        .zip(trees)
        .map(|(sequence, tree)| Instance { sequence, tree })
        .collect();
    Ok((instances, labels))
}

fn cmd_gram(config: &PipelineConfig, work: &Path) -> anyhow::Result<()> {
    let (instances, _) = load_built(work)?;
    let kind = KernelKind::parse(&config.gram.kind)?;
    let params = AtomicKernelParams::new(config.gram.gamma)?;
    let composite = match (kind, config.gram.rho) {
        (KernelKind::Composite, Some(rho)) => Some(CompositeParams::new(rho)?),
        (KernelKind::Composite, None) => {
            return Err(config_err("gram.rho required for the composite kernel"));
        }
        _ => None,
    };
    let gram = build_gram(&instances, kind, params, composite)?;
    let dir = stage_dir(work, "gram")?;
    let mut w = BufWriter::new(fs::File::create(dir.join("gram.bin"))?);
    write_gram(&mut w, &gram)?;
    w.flush()?;
    write_manifest(
        &dir,
        serde_json::json!({
            "n": gram.n,
            "kind": config.gram.kind,
            "gamma": config.gram.gamma,
            "rho": config.gram.rho,
        }),
    )?;
    println!(
        "gram: {}x{} {} matrix written",
        gram.n, gram.n, config.gram.kind
    );
    Ok(())
}

fn load_gram(work: &Path) -> anyhow::Result<GramMatrix> {
    let mut r = BufReader::new(fs::File::open(work.join("gram").join("gram.bin"))?);
    Ok(read_gram(&mut r)?)
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SplitFile {
    seed: u64,
    per_class: usize,
    train_ids: Vec<u32>,
    test_ids: Vec<u32>,
}

fn cmd_train(config: &PipelineConfig, seed: u64, work: &Path) -> anyhow::Result<()> {
    let (_, _, truth) = load_dataset(config, work)?;
    let (_, labels) = load_built(work)?;
    let gram = load_gram(work)?;
    if gram.n != labels.len() {
        anyhow::bail!(
            "gram is {}x{} but {} instances built",
            gram.n,
            gram.n,
            labels.len()
        );
    }
    let (train_ids, test_ids) = sample_training_set(&truth, config.per_class, seed)?;
    let train_labels: Vec<u16> = train_ids.iter().map(|&i| labels[i as usize]).collect();
    let sub: Vec<usize> = train_ids.iter().map(|&i| i as usize).collect();
    let model = train_multiclass(
        &gram.subset(&sub),
        &train_labels,
        config.svm_c,
        config.tol,
        KernelDescriptor {
            kind: gram.kind,
            gamma: gram.gamma,
            rho: gram.rho,
        },
        train_ids.clone(),
    )?;

    let dir = stage_dir(work, "train")?;
    let mut w = BufWriter::new(fs::File::create(dir.join("model.bin"))?);
    write_model(&mut w, &model)?;
    w.flush()?;
    let split = SplitFile {
        seed,
        per_class: config.per_class,
        train_ids,
        test_ids,
    };
    let mut bytes = serde_json::to_vec_pretty(&split)?;
    bytes.push(b'\n');
    fs::write(dir.join("split.json"), bytes)?;
    write_manifest(
        &dir,
        serde_json::json!({
            "classes": model.classes,
            "binary_models": model.binary_models.len(),
            "c": config.svm_c,
            "seed": seed,
        }),
    )?;
    println!(
        "train: {} binary models over {} classes, {} training instances",
        model.binary_models.len(),
        model.classes.len(),
        split.train_ids.len()
    );
    Ok(())
}

fn load_split(work: &Path) -> anyhow::Result<SplitFile> {
    let text = fs::read_to_string(work.join("train").join("split.json"))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_model(work: &Path) -> anyhow::Result<SvmModel> {
    let mut r = BufReader::new(fs::File::open(work.join("train").join("model.bin"))?);
    Ok(read_model(&mut r)?)
}

fn cmd_predict(config: &PipelineConfig, work: &Path) -> anyhow::Result<()> {
    let (coarse, _, truth) = load_dataset(config, work)?;
    let (_, labels) = load_built(work)?;
    let gram = load_gram(work)?;
    let model = load_model(work)?;
    let split = load_split(work)?;
    if model.kernel.kind != gram.kind
        || model.kernel.gamma != gram.gamma
        || model.kernel.rho != gram.rho
    {
        anyhow::bail!(
            "kernel descriptor mismatch: model ({:?} {} {:?}) vs gram ({:?} {} {:?})",
            model.kernel.kind,
            model.kernel.gamma,
            model.kernel.rho,
            gram.kind,
            gram.gamma,
            gram.rho
        );
    }

    let pixels: Vec<u32> = truth
        .labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l != 0)
        .map(|(p, _)| p as u32)
        .collect();
    let train_set: std::collections::HashSet<u32> = split.train_ids.iter().copied().collect();

    let mut predictions = String::from("instance,pixel_x,pixel_y,truth,predicted,role\n");
    let mut map = LabelMap::new(truth.width, truth.height);
    for (i, &pixel) in pixels.iter().enumerate() {
        let row: Vec<f64> = split
            .train_ids
            .iter()
            .map(|&t| gram.get(i, t as usize))
            .collect();
        let predicted = predict(&model, &row)?;
        let x = pixel as usize % coarse.width;
        let y = pixel as usize / coarse.width;
        let role = if train_set.contains(&(i as u32)) {
            "train"
        } else {
            "test"
        };
        predictions.push_str(&format!("{i},{x},{y},{},{predicted},{role}\n", labels[i]));
        map.set(x, y, predicted);
    }

    let dir = stage_dir(work, "predict")?;
    fs::write(dir.join("predictions.csv"), predictions)?;
    let mut palette = std::collections::BTreeMap::new();
    for &class in &model.classes {
        palette.insert(class, config.color_of(class));
    }
    write_class_map(&map, &palette, &dir.join("class_map.ppm"))?;
    println!("predict: {} instances predicted", pixels.len());
    Ok(())
}

fn cmd_evaluate(_config: &PipelineConfig, work: &Path) -> anyhow::Result<()> {
    let text = fs::read_to_string(work.join("predict").join("predictions.csv"))?;
    let mut rows: Vec<(u16, u16)> = Vec::new();
    let mut classes: Vec<u16> = Vec::new();
    for line in text.lines().skip(1) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            anyhow::bail!("bad predictions.csv line: {line}");
        }
        let truth: u16 = parts[3].parse()?;
        let predicted: u16 = parts[4].parse()?;
        classes.push(truth);
        if parts[5] == "test" {
            rows.push((truth, predicted));
        }
    }
    classes.sort_unstable();
    classes.dedup();
    let mut cm = ConfusionMatrix::new(classes.clone());
    for (truth, predicted) in rows {
        cm.record(truth, predicted);
    }
    let m = metrics(&cm)?;

    let dir = stage_dir(work, "evaluate")?;
    let mut confusion = String::from("reference\\prediction");
    for c in &classes {
        confusion.push_str(&format!(",{c}"));
    }
    confusion.push('\n');
    for (r, row) in cm.counts.iter().enumerate() {
        confusion.push_str(&classes[r].to_string());
        for v in row {
            confusion.push_str(&format!(",{v}"));
        }
        confusion.push('\n');
    }
    fs::write(dir.join("confusion.csv"), confusion)?;

    let mut report = String::new();
    report.push_str(&format!("{:<12}{:>10}\n", "Class", "Accuracy"));
    for (idx, acc) in m.per_class.iter().enumerate() {
        report.push_str(&format!("{:<12}{:>10.4}\n", classes[idx], acc));
    }
    report.push_str(&format!("{:<12}{:>10.4}\n", "OA", m.oa));
    report.push_str(&format!("{:<12}{:>10.4}\n", "AA", m.aa));
    report.push_str(&format!("{:<12}{:>10.4}\n", "Kappa", m.kappa));
    fs::write(dir.join("report.txt"), &report)?;

    let mut csv = String::from("metric,value\n");
    for (idx, acc) in m.per_class.iter().enumerate() {
        csv.push_str(&format!("class_{},{:.6}\n", classes[idx], acc));
    }
    csv.push_str(&format!(
        "oa,{:.6}\naa,{:.6}\nkappa,{:.6}\n",
        m.oa, m.aa, m.kappa
    ));
    fs::write(dir.join("metrics.csv"), csv)?;
    print!("{report}");
    Ok(())
}

fn cmd_experiment(
    config: &PipelineConfig,
    seed: u64,
    work: &Path,
    scenario: Option<&str>,
) -> anyhow::Result<()> {
    let (coarse, fine, truth) = load_dataset(config, work)?;
    let opts = {
        let mut o = config.options(seed);
        o.seed = seed;
        o
    };
    let scenarios: Vec<Scenario> = match scenario {
        Some(name) => vec![Scenario::parse(name)?],
        None => Scenario::ALL.to_vec(),
    };
    let built = build_instances(&coarse, &fine, &truth, &opts)?;
    let report = run_experiment(&built, &truth, &scenarios, &opts)?;

    // Class names come from the dataset sidecar when the scene was
    // generated, else from the config's synth section; real inputs fall
    // back to numeric ids in the report.
    let sidecar: Option<SynthConfig> = fs::read_to_string(work.join("dataset/synth.json"))
        .ok()
        .and_then(|text| serde_json::from_str(&text).ok());
    let class_names: Vec<String> = sidecar
        .as_ref()
        .or(config.synth.as_ref())
        .map(|s| s.class_specs.iter().map(|c| c.name.clone()).collect())
        .unwrap_or_default();
    let text = render_report(&report, &class_names);
    let csv = render_report_csv(&report, &class_names);

    let dir = stage_dir(work, "experiment")?;
    fs::write(dir.join("report.txt"), &text)?;
    fs::write(dir.join("report.csv"), &csv)?;

    let runs: Vec<serde_json::Value> = report
        .scenarios
        .iter()
        .map(|s| {
            serde_json::json!({
                "scenario": s.scenario.as_str(),
                "runs": s.runs.iter().map(|r| serde_json::json!({
                    "gamma": r.gamma,
                    "c": r.c,
                    "rho": r.rho,
                    "oa": r.metrics.oa,
                    "aa": r.metrics.aa,
                    "kappa": r.metrics.kappa,
                    "per_class": r.metrics.per_class,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    let mut bytes = serde_json::to_vec_pretty(&serde_json::json!({
        "seed": seed,
        "repetitions": report.repetitions,
        "scenarios": runs,
    }))?;
    bytes.push(b'\n');
    fs::write(dir.join("runs.json"), bytes)?;

    print!("{text}");
    Ok(())
}
