//! Implementations behind the CLI subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::{
    generate_synthetic, load_dataset, load_split, save_dataset, save_modes, save_split,
    split_dataset, FeatureRecord, LabelHierarchy, Split, SplitAssignment, SyntheticSpec,
    MODES_FILE, SPLIT_FILE,
};
use crate::error::{io_err, Error, Result};
use crate::evaluation::{save_predictions_csv, save_report, EvalReport};
use crate::pipeline::{self, PipelineConfig, PreparedData};
use crate::rundir::{self, checkpoint_path, CONFIG_FILE, PREDICTIONS_FILE, REPORT_FILE};

/// Where the samples come from: a synthetic spec or a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Dir(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticSpec::default())
    }
}

/// Fully resolved experiment configuration; the copy written into the run
/// directory reproduces the run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub ratios: [f64; 3],
    pub split_seed: u64,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            ratios: [0.7, 0.1, 0.2],
            split_seed: 0,
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err("read", path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!(
            "bad config {}: {e}",
            path.display()
        )))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Invalid(format!("serialize config: {e}")))?;
        text.push('\n');
        std::fs::write(path, text).map_err(io_err("write", path))
    }

    /// Rebase every seed on one global value.
    pub fn with_global_seed(mut self, seed: u64) -> Self {
        if let DataSource::Synthetic(spec) = &mut self.data {
            spec.seed = seed;
        }
        self.split_seed = seed;
        self.pipeline.seed = seed;
        self
    }
}

/// Materialize dataset files (features, hierarchy, split, ground-truth modes).
pub fn cmd_gen(config: &RunConfig, out: &Path) -> Result<()> {
    let DataSource::Synthetic(spec) = &config.data else {
        return Err(Error::Config(
            "gen needs a synthetic data source in the config".into(),
        ));
    };
    let ds = generate_synthetic(spec)?;
    save_dataset(&ds.records, &ds.hierarchy, out)?;
    let split = split_dataset(&ds.records, config.ratios, config.split_seed)?;
    save_split(&split, &out.join(SPLIT_FILE))?;
    save_modes(&ds.item_modes, &out.join(MODES_FILE))?;
    println!(
        "wrote {} samples, {} items, {} types to {}",
        ds.records.len(),
        ds.hierarchy.num_items,
        ds.hierarchy.num_types,
        out.display()
    );
    Ok(())
}

/// Load or synthesize the dataset this config describes.
pub fn resolve_data(config: &RunConfig) -> Result<(Vec<FeatureRecord>, LabelHierarchy, SplitAssignment)> {
    match &config.data {
        DataSource::Synthetic(spec) => {
            let ds = generate_synthetic(spec)?;
            let split = split_dataset(&ds.records, config.ratios, config.split_seed)?;
            Ok((ds.records, ds.hierarchy, split))
        }
        DataSource::Dir(dir) => {
            let (records, hierarchy) = load_dataset(dir)?;
            let split_path = dir.join(SPLIT_FILE);
            let split = if split_path.exists() {
                load_split(&split_path)?
            } else {
                split_dataset(&records, config.ratios, config.split_seed)?
            };
            Ok((records, hierarchy, split))
        }
    }
}

/// Execute one run and write the run directory. Returns the test report.
pub fn cmd_run(config: &RunConfig, out: &Path) -> Result<EvalReport> {
    config.pipeline.validate()?;
    let (records, hierarchy, split) = resolve_data(config)?;
    let data = PreparedData::new(&records, &hierarchy, &split)?;

    std::fs::create_dir_all(out).map_err(io_err("create", out))?;
    config.save(&out.join(CONFIG_FILE))?;

    let outcome = pipeline::run(&data, &config.pipeline)?;

    let mut train_counts = vec![0usize; hierarchy.num_items];
    for &item in &data.train_items {
        train_counts[item] += 1;
    }
    rundir::write_outcome(&outcome, &hierarchy, &train_counts, out)?;

    let ckpt_dir = out.join(rundir::CHECKPOINT_DIR);
    std::fs::create_dir_all(&ckpt_dir).map_err(io_err("create", &ckpt_dir))?;
    let ckpt = Checkpoint::new(
        config.pipeline.seed,
        config.pipeline.base_lr,
        &outcome.item_model.0,
        &outcome.item_model.1,
        outcome.type_model.as_ref().map(|(b, h)| (b, h)),
    );
    ckpt.save(&checkpoint_path(out))?;

    let (set, report) = pipeline::evaluate(
        &outcome.item_model,
        outcome.type_model.as_ref(),
        &data,
        Split::Test,
        config.pipeline.batch_size,
    )?;
    save_predictions_csv(&set, &out.join(PREDICTIONS_FILE))?;
    save_report(&report, &out.join(REPORT_FILE))?;
    Ok(report)
}

/// Run several global seeds concurrently, each into its own subdirectory.
pub fn cmd_run_seeds(config: &RunConfig, seeds: &[u64], jobs: usize, out: &Path) -> Result<Vec<EvalReport>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let cfg = config.clone().with_global_seed(seed);
                cmd_run(&cfg, &out.join(format!("seed_{seed}")))
            })
            .collect()
    })
}

/// Score a saved checkpoint on one split of a dataset directory.
pub fn cmd_eval(
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let item_model = ckpt.item_model()?;
    let type_model = ckpt.type_model()?;

    let (records, hierarchy) = load_dataset(data_dir)?;
    let split_path = data_dir.join(SPLIT_FILE);
    if !split_path.exists() {
        return Err(Error::Data(format!(
            "{} has no {SPLIT_FILE}; run `gen` first or evaluate inside a run",
            data_dir.display()
        )));
    }
    let assignment = load_split(&split_path)?;
    let data = PreparedData::new(&records, &hierarchy, &assignment)?;
    if item_model.0.d_in() != data.d_in {
        return Err(Error::Data(format!(
            "dimension mismatch: checkpoint expects d_in={}, dataset has d_in={}",
            item_model.0.d_in(),
            data.d_in
        )));
    }

    let (set, report) = pipeline::evaluate(
        &item_model,
        type_model.as_ref(),
        &data,
        split,
        32,
    )?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(io_err("create", dir))?;
        save_predictions_csv(&set, &dir.join(PREDICTIONS_FILE))?;
        save_report(&report, &dir.join(REPORT_FILE))?;
    }
    Ok(report)
}

fn fmt_loss(v: f64) -> String {
    format!("{v:.4}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Human-readable summary of a run directory.
pub fn inspect_text(dir: &Path) -> Result<String> {
    let run = rundir::load_run(dir)?;
    let mut out = String::new();
    out.push_str(&format!(
        "run {}: mode={} iterations={} best_iteration={} stop={:?}\n",
        dir.display(),
        run.summary.mode,
        run.summary.iterations,
        run.summary.best_iteration,
        run.summary.stop_reason,
    ));
    out.push_str("iter |    K | stage1 train/val | stage2 train/val | stage3 train/val | silhouette | davies_bouldin\n");
    for r in &run.records {
        let fmt_stage = |idx: usize| -> String {
            r.stage(idx).map_or_else(
                || "       -      ".to_string(),
                |s| format!("{}/{}", fmt_loss(s.final_train_loss), fmt_loss(s.final_val_loss)),
            )
        };
        out.push_str(&format!(
            "{:4} | {:>4} | {:^16} | {:^16} | {:^16} | {:>10} | {:>10}\n",
            r.iteration,
            r.num_merged.map_or_else(|| "-".to_string(), |k| k.to_string()),
            fmt_stage(1),
            fmt_stage(2),
            fmt_stage(3),
            fmt_opt(r.silhouette),
            fmt_opt(r.davies_bouldin),
        ));
    }

    let mut any_merge = false;
    for report in run.merge_reports.iter().flatten() {
        any_merge = true;
        out.push_str(&format!(
            "\nmerge report, iteration {} ({} merged items):\n",
            report.iteration, report.num_merged
        ));
        for m in &report.merged_items {
            let members: Vec<String> = m
                .member_codes
                .iter()
                .zip(&m.member_sample_counts)
                .map(|(code, count)| format!("{code}({count})"))
                .collect();
            let total: usize = m.member_sample_counts.iter().sum();
            out.push_str(&format!(
                "  merged {:>3} type {:>2} exemplar {}: {} — total {} training samples\n",
                m.merged_label,
                m.parent_type,
                m.exemplar_code,
                members.join(", "),
                total
            ));
        }
    }
    if !any_merge {
        out.push_str("\nno merge stages in this run\n");
    }

    let report_path = dir.join(REPORT_FILE);
    if report_path.exists() {
        let report = crate::evaluation::load_report(&report_path)?;
        out.push_str(&format!(
            "\ntest report ({} samples): item micro {:.4} / macro {:.4}, type micro {:.4} / macro {:.4}\n",
            report.num_samples,
            report.item_micro_accuracy,
            report.item_macro_accuracy,
            report.type_micro_accuracy,
            report.type_macro_accuracy,
        ));
        out.push_str(&format!(
            "nutrient MAE per 100g: energy {:.2} kcal, protein {:.2} g, carbohydrate {:.2} g, fat {:.2} g\n",
            report.nutrient_mae.energy_kcal,
            report.nutrient_mae.protein_g,
            report.nutrient_mae.carbohydrate_g,
            report.nutrient_mae.fat_g,
        ));
    }
    Ok(out)
}

pub fn cmd_inspect(dir: &Path) -> Result<()> {
    print!("{}", inspect_text(dir)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PowerLawCounts;
    use tempfile::tempdir;

    fn tiny_run_config(seed: u64) -> RunConfig {
        RunConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                num_types: 2,
                items_per_type: (4, 4),
                modes_per_type: 2,
                d_in: 8,
                samples_per_item: PowerLawCounts {
                    exponent: 1.5,
                    min: 8,
                    max: 16,
                },
                intra_mode_stddev: 0.6,
                item_center_spread: 0.3,
                inter_mode_separation: 3.0,
                inter_type_separation: 3.0,
                nutrient_noise_scale: 0.1,
                seed,
            }),
            ratios: [0.7, 0.1, 0.2],
            split_seed: seed,
            pipeline: PipelineConfig {
                max_iterations: 1,
                epochs_per_stage: 2,
                base_lr: 5e-3,
                batch_size: 16,
                hidden_widths: vec![8],
                embed_dim: 8,
                seed,
                ..PipelineConfig::default()
            },
        }
    }

    #[test]
    fn gen_writes_loadable_files() {
        let dir = tempdir().unwrap();
        let config = tiny_run_config(1);
        cmd_gen(&config, dir.path()).unwrap();
        let (records, hierarchy, split) = resolve_data(&RunConfig {
            data: DataSource::Dir(dir.path().to_path_buf()),
            ..config
        })
        .unwrap();
        assert!(!records.is_empty());
        assert_eq!(hierarchy.num_items, 8);
        assert_eq!(split.partition.len(), records.len());
        assert!(dir.path().join(MODES_FILE).exists());
    }

    #[test]
    fn gen_is_byte_deterministic() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        let config = tiny_run_config(2);
        cmd_gen(&config, a.path()).unwrap();
        cmd_gen(&config, b.path()).unwrap();
        for name in ["features.csv", "hierarchy.json", SPLIT_FILE, MODES_FILE] {
            let fa = std::fs::read(a.path().join(name)).unwrap();
            let fb = std::fs::read(b.path().join(name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between identical gens");
        }
    }

    #[test]
    fn run_writes_the_full_layout_and_reruns_identically() {
        let out1 = tempdir().unwrap();
        let out2 = tempdir().unwrap();
        let config = tiny_run_config(3);
        cmd_run(&config, out1.path()).unwrap();
        cmd_run(&config, out2.path()).unwrap();
        for name in [CONFIG_FILE, rundir::METRICS_FILE, REPORT_FILE, PREDICTIONS_FILE] {
            let fa = std::fs::read(out1.path().join(name)).unwrap();
            let fb = std::fs::read(out2.path().join(name)).unwrap();
            assert_eq!(fa, fb, "{name} differs between identical runs");
        }
        assert!(checkpoint_path(out1.path()).exists());
        assert!(out1.path().join("iter_1").join(rundir::RECORD_FILE).exists());
        assert!(out1.path().join("iter_1").join(rundir::MERGE_REPORT_FILE).exists());
    }

    #[test]
    fn eval_reproduces_the_runs_own_report() {
        let data_dir = tempdir().unwrap();
        let run_dir = tempdir().unwrap();
        let mut config = tiny_run_config(4);
        cmd_gen(&config, data_dir.path()).unwrap();
        config.data = DataSource::Dir(data_dir.path().to_path_buf());
        let run_report = cmd_run(&config, run_dir.path()).unwrap();
        let eval_report = cmd_eval(
            &checkpoint_path(run_dir.path()),
            data_dir.path(),
            Split::Test,
            None,
        )
        .unwrap();
        assert_eq!(run_report, eval_report);
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let data8 = tempdir().unwrap();
        let data4 = tempdir().unwrap();
        let run_dir = tempdir().unwrap();
        let mut config = tiny_run_config(5);
        cmd_gen(&config, data8.path()).unwrap();
        if let DataSource::Synthetic(spec) = &mut config.data {
            spec.d_in = 4;
        }
        cmd_gen(&config, data4.path()).unwrap();
        config.data = DataSource::Dir(data8.path().to_path_buf());
        if let DataSource::Synthetic(spec) = &mut config.data {
            spec.d_in = 8;
        }
        cmd_run(&config, run_dir.path()).unwrap();
        let err = cmd_eval(
            &checkpoint_path(run_dir.path()),
            data4.path(),
            Split::Test,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn eval_on_train_split_is_labeled() {
        let data_dir = tempdir().unwrap();
        let run_dir = tempdir().unwrap();
        let mut config = tiny_run_config(6);
        cmd_gen(&config, data_dir.path()).unwrap();
        config.data = DataSource::Dir(data_dir.path().to_path_buf());
        cmd_run(&config, run_dir.path()).unwrap();
        let report = cmd_eval(
            &checkpoint_path(run_dir.path()),
            data_dir.path(),
            Split::Train,
            None,
        )
        .unwrap();
        assert_eq!(report.split, "train");
    }

    #[test]
    fn inspect_prints_iterations_and_merges() {
        let out = tempdir().unwrap();
        let mut config = tiny_run_config(7);
        config.pipeline.max_iterations = 2;
        cmd_run(&config, out.path()).unwrap();
        let text = inspect_text(out.path()).unwrap();
        assert!(text.contains("mode=full"));
        assert!(text.contains("\n   1 |"), "{text}");
        assert!(text.contains("\n   2 |"), "{text}");
        assert!(text.contains("merge report, iteration"));
        assert!(text.contains("test report"));
    }

    #[test]
    fn inspect_flat_run_notes_missing_merge_stages() {
        let out = tempdir().unwrap();
        let mut config = tiny_run_config(8);
        config.pipeline.mode = pipeline::RunMode::Flat;
        config.pipeline.max_iterations = 1;
        cmd_run(&config, out.path()).unwrap();
        let text = inspect_text(out.path()).unwrap();
        assert!(text.contains("no merge stages"), "{text}");
    }

    #[test]
    fn multi_seed_runs_land_in_private_subdirectories() {
        let out = tempdir().unwrap();
        let config = tiny_run_config(0);
        let reports = cmd_run_seeds(&config, &[1, 2], 2, out.path()).unwrap();
        assert_eq!(reports.len(), 2);
        assert!(out.path().join("seed_1").join(REPORT_FILE).exists());
        assert!(out.path().join("seed_2").join(REPORT_FILE).exists());
        // Seed 1 rerun alone must equal the parallel run's artifact.
        let solo = tempdir().unwrap();
        cmd_run(&config.clone().with_global_seed(1), solo.path()).unwrap();
        assert_eq!(
            std::fs::read(out.path().join("seed_1").join(rundir::METRICS_FILE)).unwrap(),
            std::fs::read(solo.path().join(rundir::METRICS_FILE)).unwrap()
        );
    }
}
