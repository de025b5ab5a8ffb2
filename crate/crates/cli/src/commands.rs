//! The pipeline stages. Each stage reads its predecessors' outputs from the
//! output directory and never modifies them.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gad_core::attribution::IgConfig;
use gad_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingKind};
use gad_core::dataset::synthetic::{generate, SyntheticSpec};
use gad_core::dataset::{
    load_directory, normalize, read_dataset, write_dataset, Dataset, NormStats, Sample,
};
use gad_core::eval::{aggregate_report, iou};
use gad_core::gad::{
    half_split_clusters, load_support_set, save_support_set, train_support_models, ClassPairing,
};
use gad_core::network::Model;
use gad_core::pipeline::{
    evaluate_samples, explain_samples, least_activated, map_to_csv, render_map, render_overlay,
    EvalSettings,
};
use gad_core::zoo::{accuracy, init_weights, train_classifier, SmallCnnSpec};
use gad_core::GadError;

use crate::config::{PairingConfig, RunConfig};
use crate::error::CliError;

/// Fixed locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn classifier(&self) -> PathBuf {
        self.root.join("classifier.ckpt")
    }
    pub fn train_loss(&self) -> PathBuf {
        self.root.join("train_loss.csv")
    }
    pub fn support(&self) -> PathBuf {
        self.root.join("support")
    }
    pub fn maps(&self) -> PathBuf {
        self.root.join("maps")
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn report(&self) -> PathBuf {
        self.eval().join("report.csv")
    }
    pub fn overlays(&self) -> PathBuf {
        self.eval().join("overlays")
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| GadError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| GadError::io(path, e).into())
}

fn fresh_dir(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| GadError::io(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| GadError::io(path, e).into())
}

/// File-name-safe form of a sample id such as `class0/c0_0001`.
pub fn file_stem(id: &str) -> String {
    id.replace(['/', '\\'], "_")
}

pub fn synthetic_spec(cfg: &RunConfig) -> SyntheticSpec {
    let d = &cfg.dataset;
    let base = if d.classes == 4 {
        SyntheticSpec::four_class(cfg.seed)
    } else {
        SyntheticSpec::two_class(cfg.seed)
    };
    SyntheticSpec {
        channels: d.channels,
        images_per_class: d.images_per_class,
        noise_std: d.noise_std,
        ..base
    }
}

pub fn gen_data(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let (ds, gt) = match &cfg.dataset.path {
        Some(p) => (load_directory(p, cfg.seed)?, None),
        None => {
            let (ds, gt) = generate(&synthetic_spec(cfg))?;
            (ds, Some(gt))
        }
    };
    fresh_dir(&layout.data())?;
    write_dataset(&layout.data(), &ds, gt.as_deref())?;
    let mut out = String::new();
    for (c, name) in ds.class_names.iter().enumerate() {
        let train = ds.train.iter().filter(|s| s.label == c).count();
        let eval = ds.eval.iter().filter(|s| s.label == c).count();
        let _ = writeln!(out, "{name}: {train} train, {eval} eval");
    }
    Ok(out)
}

/// Normalized dataset, its statistics, and the optional ground-truth masks.
pub struct LoadedData {
    pub dataset: Dataset,
    pub stats: NormStats,
    pub ground_truth: Option<Vec<Vec<u8>>>,
}

pub fn load_data(layout: &Layout) -> Result<LoadedData, CliError> {
    let (raw, manifest) = read_dataset(&layout.data())?;
    let (dataset, stats) = normalize(&raw)?;
    Ok(LoadedData {
        dataset,
        stats,
        ground_truth: manifest.ground_truth,
    })
}

pub fn load_classifier(layout: &Layout) -> Result<Model, CliError> {
    Ok(load_checkpoint(&layout.classifier())?.model)
}

pub fn train(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let data = load_data(layout)?;
    let ds = &data.dataset;
    let arch = SmallCnnSpec::new(ds.channels(), ds.num_classes())?.architecture();
    let init = init_weights(&arch, cfg.seed)?;
    let (model, report) = train_classifier(init, &ds.train, &cfg.classifier)?;
    save_checkpoint(
        &layout.classifier(),
        &Checkpoint {
            model: model.clone(),
            class_names: ds.class_names.clone(),
            kind: TrainingKind::Classifier,
        },
    )?;
    let mut csv = String::from("epoch,loss\n");
    let _ = writeln!(csv, "0,{}", report.initial_loss);
    for (e, l) in report.epoch_losses.iter().enumerate() {
        let _ = writeln!(csv, "{},{l}", e + 1);
    }
    write_file(&layout.train_loss(), csv)?;
    Ok(format!(
        "loss {} -> {}\ntrain accuracy {:.4}\neval accuracy {:.4}\n",
        report.initial_loss,
        report.final_loss,
        accuracy(&model, &ds.train)?,
        if ds.eval.is_empty() {
            f32::NAN
        } else {
            accuracy(&model, &ds.eval)?
        },
    ))
}

pub fn resolve_pairing(
    cfg: &RunConfig,
    model: &Model,
    train: &[Sample],
) -> Result<ClassPairing, CliError> {
    let pairing = match cfg.pairing {
        PairingConfig::TwoClass { k, l } => ClassPairing::TwoClass { k, l },
        PairingConfig::OneVsAll { k } => ClassPairing::OneVsAll { k },
        PairingConfig::Half => {
            let (cluster_a, cluster_b) = half_split_clusters(model, train)?;
            ClassPairing::HalfSplit {
                cluster_a,
                cluster_b,
            }
        }
    };
    pairing
        .validate(model.num_classes())
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(pairing)
}

pub fn gad(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let data = load_data(layout)?;
    let model = load_classifier(layout)?;
    let pairing = resolve_pairing(cfg, &model, &data.dataset.train)?;
    let set = train_support_models(
        &model,
        &data.dataset.train,
        &pairing,
        &cfg.schedule()?,
        &cfg.support,
    )?;
    fresh_dir(&layout.support())?;
    let manifest = save_support_set(
        &layout.support(),
        &set,
        &data.dataset.class_names,
        &cfg.support,
    )?;
    let mut out = format!(
        "pairing {}\n",
        serde_json::to_string(&pairing).unwrap_or_default()
    );
    for e in &manifest.models {
        let _ = writeln!(
            out,
            "{}: alpha ({}, {}) mse {} -> {}",
            e.file, e.alpha.k, e.alpha.l, e.initial_mse, e.final_mse
        );
    }
    Ok(out)
}

fn ig_config(cfg: &RunConfig) -> IgConfig {
    IgConfig::with_steps(cfg.ig_steps)
}

pub fn explain(cfg: &RunConfig, layout: &Layout, ids: &[String]) -> Result<String, CliError> {
    let data = load_data(layout)?;
    let model = load_classifier(layout)?;
    let (supports, _) = load_support_set(&layout.support())?;
    let ds = &data.dataset;
    let wanted = if !ids.is_empty() {
        ids
    } else {
        &cfg.explain_ids[..]
    };
    let samples: Vec<Sample> = if wanted.is_empty() {
        ds.eval.clone()
    } else {
        wanted
            .iter()
            .map(|id| {
                ds.find(id)
                    .cloned()
                    .ok_or_else(|| CliError::Data(format!("unknown image id {id:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    let classes: Vec<usize> = (0..ds.num_classes()).collect();
    let maps = explain_samples(
        &model,
        &supports,
        &samples,
        &cfg.methods,
        &classes,
        &ig_config(cfg),
    )?;
    fresh_dir(&layout.maps())?;
    let mut files = 0;
    for m in &maps {
        let stem = format!(
            "{}_{}_c{}",
            file_stem(&m.id),
            m.original.method.name(),
            m.original.class
        );
        for (tag, map) in [("orig", &m.original), ("gad", &m.filtered)] {
            write_file(
                &layout.maps().join(format!("{stem}_{tag}.pgm")),
                render_map(map).encode(),
            )?;
            write_file(
                &layout.maps().join(format!("{stem}_{tag}.csv")),
                map_to_csv(map),
            )?;
            files += 1;
        }
    }
    Ok(format!(
        "{} images, {files} maps written to {}\n",
        samples.len(),
        layout.maps().display()
    ))
}

pub fn eval(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let data = load_data(layout)?;
    let model = load_classifier(layout)?;
    let (supports, _) = load_support_set(&layout.support())?;
    let ds = &data.dataset;
    if ds.eval.is_empty() {
        return Err(CliError::Data("eval split is empty".into()));
    }
    let settings = EvalSettings {
        selection: cfg.selection,
        output: cfg.sensitivity,
    };
    let comps = evaluate_samples(
        &model,
        &supports,
        &ds.eval,
        &cfg.methods,
        &ig_config(cfg),
        settings,
    )?;
    fresh_dir(&layout.eval())?;

    if let Some(gt) = &data.ground_truth {
        let mut csv = String::from("id,class,method,iou_orig,iou_gad\n");
        for (i, c) in comps.iter().enumerate() {
            let truth = &gt[ds.eval[i / cfg.methods.len()].label];
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                c.result.id,
                c.result.class,
                c.result.method,
                iou(&c.mask_orig, truth)?,
                iou(&c.mask_gad, truth)?
            );
        }
        write_file(&layout.eval().join("ground_truth_iou.csv"), csv)?;
    }

    let n_methods = cfg.methods.len();
    for class in 0..ds.num_classes() {
        for idx in least_activated(&model, &ds.eval, class, cfg.overlays_per_class)? {
            let raw = data.stats.invert(&ds.eval[idx].image);
            for c in &comps[idx * n_methods..(idx + 1) * n_methods] {
                let r = render_overlay(&raw, &c.mask_orig, &c.mask_gad)?;
                let name = format!("{}_{}.ppm", file_stem(&c.result.id), c.result.method.name());
                write_file(&layout.overlays().join(name), r.encode())?;
            }
        }
    }

    let report = aggregate_report(comps.into_iter().map(|c| c.result).collect())?;
    write_file(&layout.report(), report.to_csv())?;
    let table = report.summary_table();
    write_file(&layout.eval().join("summary.txt"), &table)?;
    Ok(table)
}

/// Every stage in order.
pub fn run_all(cfg: &RunConfig, layout: &Layout) -> Result<String, CliError> {
    let mut out = gen_data(cfg, layout)?;
    out += &train(cfg, layout)?;
    out += &gad(cfg, layout)?;
    out += &explain(cfg, layout, &[])?;
    out += &eval(cfg, layout)?;
    Ok(out)
}
