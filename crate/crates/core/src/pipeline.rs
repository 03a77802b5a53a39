//! Orchestration of the iterative method: per-iteration three-stage transfer
//! training, profile extraction, re-clustering, re-merging, the stopping rule,
//! and the flat / type-transfer baselines.
//!
//! Each iteration trains, in order, a type-level head (dimension I), a
//! merged-item head (dimension K from the current merge map), and an
//! item-level head (dimension N), carrying the backbone across stages while
//! every head starts fresh. The stage-3 backbone then re-derives per-item
//! profiles whose clustering becomes the next iteration's merge map, and the
//! shared base learning rate decays by a fixed factor. The loop stops when
//! the stage-3 validation loss fails to improve or the iteration cap is hit;
//! the returned model is the best-validation iteration's.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::clustering::{
    affinity_propagation, compute_profiles, davies_bouldin, merge_within_type, silhouette_score,
    similarity_matrix, ApParams, MergeMap, PreferenceMode,
};
use crate::dataset::{FeatureRecord, LabelHierarchy, Split, SplitAssignment};
use crate::encoder::{forward, train_stage, BackboneParams, HeadParams, StageConfig};
use crate::error::{Error, Result};
use crate::evaluation::{
    build_report, predict_classes, EvalReport, Prediction, PredictionSet, TypePredictionSource,
};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Full,
    Flat,
    Htl,
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunMode::Full => write!(f, "full"),
            RunMode::Flat => write!(f, "flat"),
            RunMode::Htl => write!(f, "htl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSettings {
    pub damping: f64,
    pub max_sweeps: usize,
    pub stability_window: usize,
    pub preference: PreferenceMode,
    pub squared_distance: bool,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        let ap = ApParams::default();
        Self {
            damping: ap.damping,
            max_sweeps: ap.max_sweeps,
            stability_window: ap.stability_window,
            preference: PreferenceMode::Median,
            squared_distance: false,
        }
    }
}

impl ClusterSettings {
    pub fn ap_params(&self) -> ApParams {
        ApParams {
            damping: self.damping,
            max_sweeps: self.max_sweeps,
            stability_window: self.stability_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: RunMode,
    pub max_iterations: usize,
    pub epochs_per_stage: usize,
    pub base_lr: f64,
    pub lr_iteration_decay: f64,
    pub batch_size: usize,
    pub hidden_widths: Vec<usize>,
    pub embed_dim: usize,
    pub clustering: ClusterSettings,
    pub seed: u64,
    /// Run the first clustering pass before any training (only sensible with
    /// a warm-started backbone).
    pub merge_before_first_iteration: bool,
    /// Optional checkpoint file whose item-model backbone seeds the run.
    pub warm_start: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: RunMode::Full,
            max_iterations: 5,
            epochs_per_stage: 15,
            base_lr: 1e-4,
            lr_iteration_decay: 0.8,
            batch_size: 32,
            hidden_widths: vec![64],
            embed_dim: 32,
            clustering: ClusterSettings::default(),
            seed: 0,
            merge_before_first_iteration: false,
            warm_start: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.lr_iteration_decay > 0.0 && self.lr_iteration_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_iteration_decay must be in (0, 1], got {}",
                self.lr_iteration_decay
            )));
        }
        if self.epochs_per_stage == 0 {
            return Err(Error::Config("epochs_per_stage must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be at least 1".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Config("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.clustering.damping) {
            return Err(Error::Config("damping must be in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Dense split matrices with both label levels, ready for training.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub hierarchy: LabelHierarchy,
    pub d_in: usize,
    pub x_train: Array2<f64>,
    pub train_items: Vec<usize>,
    pub train_types: Vec<usize>,
    pub x_val: Array2<f64>,
    pub val_items: Vec<usize>,
    pub val_types: Vec<usize>,
    pub x_test: Array2<f64>,
    pub test_items: Vec<usize>,
    pub test_types: Vec<usize>,
    pub test_ids: Vec<String>,
    pub train_ids: Vec<String>,
}

fn gather(records: &[FeatureRecord], idx: &[usize], d_in: usize) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), d_in), |(i, j)| records[idx[i]].features[j])
}

impl PreparedData {
    pub fn new(
        records: &[FeatureRecord],
        hierarchy: &LabelHierarchy,
        split: &SplitAssignment,
    ) -> Result<Self> {
        let d_in = crate::dataset::validate_records(records, hierarchy)?;
        let pick = |s: Split| split.indices(records, s);
        let (train, val, test) = (pick(Split::Train), pick(Split::Val), pick(Split::Test));
        for (name, idx) in [("train", &train), ("val", &val), ("test", &test)] {
            if idx.is_empty() {
                return Err(Error::Data(format!("{name} split is empty")));
            }
        }
        let items = |idx: &[usize]| idx.iter().map(|&i| records[i].item_label).collect();
        let types = |idx: &[usize]| idx.iter().map(|&i| records[i].type_label).collect();
        let ids = |idx: &[usize]| idx.iter().map(|&i| records[i].sample_id.clone()).collect();
        Ok(Self {
            hierarchy: hierarchy.clone(),
            d_in,
            x_train: gather(records, &train, d_in),
            train_items: items(&train),
            train_types: types(&train),
            x_val: gather(records, &val, d_in),
            val_items: items(&val),
            val_types: types(&val),
            x_test: gather(records, &test, d_in),
            test_items: items(&test),
            test_types: types(&test),
            test_ids: ids(&test),
            train_ids: ids(&train),
        })
    }

    pub fn features_of(&self, split: Split) -> (&Array2<f64>, &[usize], &[usize]) {
        match split {
            Split::Train => (&self.x_train, &self.train_items, &self.train_types),
            Split::Val => (&self.x_val, &self.val_items, &self.val_types),
            Split::Test => (&self.x_test, &self.test_items, &self.test_types),
        }
    }
}

/// Final train/validation losses of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub num_classes: usize,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
}

/// One metrics line per epoch and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetric {
    pub iteration: usize,
    pub stage: usize,
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
}

/// Everything recorded about one pipeline iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Merged-item count of the clustering produced at the end of this
    /// iteration (absent for baseline runs, which never cluster).
    pub num_merged: Option<usize>,
    /// Class count stage 2 trained with, when it ran.
    pub stage2_classes: Option<usize>,
    pub stages: Vec<StageRecord>,
    pub silhouette: Option<f64>,
    pub davies_bouldin: Option<f64>,
    pub duration_secs: f64,
}

impl IterationRecord {
    pub fn stage(&self, stage: usize) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Equality ignoring wall-clock duration, for determinism checks.
    pub fn same_results(&self, other: &IterationRecord) -> bool {
        self.iteration == other.iteration
            && self.num_merged == other.num_merged
            && self.stage2_classes == other.stage2_classes
            && self.stages == other.stages
            && self.silhouette == other.silhouette
            && self.davies_bouldin == other.davies_bouldin
    }
}

/// Mutable pipeline state carried across iterations.
pub struct PipelineState {
    pub backbone: BackboneParams,
    pub merge: MergeMap,
    /// Completed iterations.
    pub iteration: usize,
    /// Shared base rate for all stages of the next iteration.
    pub base_lr: f64,
}

impl PipelineState {
    pub fn initial(data: &PreparedData, config: &PipelineConfig) -> Result<Self> {
        let backbone = match &config.warm_start {
            Some(path) => {
                let ckpt = Checkpoint::load(path)?;
                let (backbone, _) = ckpt.item_model()?;
                if backbone.d_in() != data.d_in {
                    return Err(Error::Data(format!(
                        "warm-start checkpoint expects {} input features, dataset has {}",
                        backbone.d_in(),
                        data.d_in
                    )));
                }
                backbone
            }
            None => BackboneParams::new(
                data.d_in,
                &config.hidden_widths,
                config.embed_dim,
                derive_seed(config.seed, &[0xb0de]),
            ),
        };
        Ok(Self {
            backbone,
            merge: MergeMap::identity(&data.hierarchy),
            iteration: 0,
            base_lr: config.base_lr,
        })
    }
}

/// Embeddings of the training split under a backbone, in row order.
pub fn train_embeddings(
    backbone: &BackboneParams,
    data: &PreparedData,
    batch_size: usize,
) -> Result<Array2<f64>> {
    let probe_head = HeadParams {
        weight: Array2::zeros((backbone.embed_dim(), 1)),
        bias: ndarray::Array1::zeros(1),
    };
    let n = data.x_train.nrows();
    let mut emb = Array2::zeros((n, backbone.embed_dim()));
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let xb = Array2::from_shape_fn((chunk.len(), data.d_in), |(i, j)| {
            data.x_train[(chunk[i], j)]
        });
        let (e, _) = forward(backbone, &probe_head, &xb)?;
        for (local, &row) in chunk.iter().enumerate() {
            for j in 0..backbone.embed_dim() {
                emb[(row, j)] = e[(local, j)];
            }
        }
    }
    Ok(emb)
}

/// Cluster the training profiles under a backbone and merge within types.
pub fn recluster(
    backbone: &BackboneParams,
    data: &PreparedData,
    config: &PipelineConfig,
) -> Result<(MergeMap, Option<f64>, Option<f64>)> {
    let emb = train_embeddings(backbone, data, config.batch_size)?;
    let profiles = compute_profiles(&emb, &data.train_items, data.hierarchy.num_items)?;
    let s = similarity_matrix(
        &profiles,
        config.clustering.preference,
        config.clustering.squared_distance,
    )?;
    let ap = affinity_propagation(&s, &config.clustering.ap_params())?;
    let merge = merge_within_type(&ap, &data.hierarchy)?;

    let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.feature()).collect();
    let (silhouette, db) = if merge.num_merged >= 2 {
        let sil = silhouette_score(&points, &merge.assignment)?;
        let db = davies_bouldin(&points, &merge.assignment)?;
        (Some(sil), db.is_finite().then_some(db))
    } else {
        (None, None)
    };
    Ok((merge, silhouette, db))
}

/// Outputs of one full-pipeline iteration.
pub struct IterationOutput {
    pub record: IterationRecord,
    pub epoch_metrics: Vec<EpochMetric>,
    pub type_model: (BackboneParams, HeadParams),
    /// Stage-3 model snapshot; this iteration's candidate for the final model.
    pub item_backbone: BackboneParams,
    pub item_head: HeadParams,
    pub stage3_val_loss: f64,
    /// The merge map produced at the end of this iteration.
    pub merge: MergeMap,
}

fn push_epoch_metrics(
    sink: &mut Vec<EpochMetric>,
    iteration: usize,
    stage: usize,
    history: &[crate::encoder::EpochLosses],
) {
    for (e, losses) in history.iter().enumerate() {
        sink.push(EpochMetric {
            iteration,
            stage,
            epoch: e + 1,
            split: "train".into(),
            loss: losses.train,
        });
        sink.push(EpochMetric {
            iteration,
            stage,
            epoch: e + 1,
            split: "val".into(),
            loss: losses.val,
        });
    }
}

/// Run stages 1-3, recluster with the stage-3 backbone, and decay the rate.
pub fn run_iteration(
    state: &mut PipelineState,
    data: &PreparedData,
    config: &PipelineConfig,
) -> Result<IterationOutput> {
    let started = Instant::now();
    let iteration = state.iteration + 1;
    let h = &data.hierarchy;
    let mut metrics = Vec::new();
    let mut stages = Vec::new();

    let stage_cfg = |stage: usize, classes: usize| StageConfig {
        stage,
        num_classes: classes,
        epochs: config.epochs_per_stage,
        batch_size: config.batch_size,
        base_lr: state.base_lr,
        seed: derive_seed(config.seed, &[iteration as u64, stage as u64]),
    };
    let record_of = |stage: usize,
                     classes: usize,
                     history: &[crate::encoder::EpochLosses]|
     -> StageRecord {
        let last = history.last().expect("non-zero epochs");
        StageRecord {
            stage,
            num_classes: classes,
            final_train_loss: last.train,
            final_val_loss: last.val,
        }
    };

    // Stage 1: food types, fresh head of dimension I.
    let s1 = train_stage(
        state.backbone.clone(),
        &stage_cfg(1, h.num_types),
        (&data.x_train, &data.train_types),
        (&data.x_val, &data.val_types),
    )?;
    push_epoch_metrics(&mut metrics, iteration, 1, &s1.history);
    stages.push(record_of(1, h.num_types, &s1.history));
    let type_model = (s1.backbone.clone(), s1.head.clone());

    // Stage 2: merged items, skipped while the merge map is the identity
    // (it would duplicate stage 3).
    let k = state.merge.num_merged;
    let stage2_ran = k < h.num_items;
    let backbone_for_stage3;
    if stage2_ran {
        let merged_train: Vec<usize> = data.train_items.iter().map(|&i| state.merge.assignment[i]).collect();
        let merged_val: Vec<usize> = data.val_items.iter().map(|&i| state.merge.assignment[i]).collect();
        let s2 = train_stage(
            s1.backbone,
            &stage_cfg(2, k),
            (&data.x_train, &merged_train),
            (&data.x_val, &merged_val),
        )?;
        push_epoch_metrics(&mut metrics, iteration, 2, &s2.history);
        stages.push(record_of(2, k, &s2.history));
        backbone_for_stage3 = s2.backbone;
    } else {
        backbone_for_stage3 = s1.backbone;
    }

    // Stage 3: food items, fresh head of dimension N.
    let s3 = train_stage(
        backbone_for_stage3,
        &stage_cfg(3, h.num_items),
        (&data.x_train, &data.train_items),
        (&data.x_val, &data.val_items),
    )?;
    push_epoch_metrics(&mut metrics, iteration, 3, &s3.history);
    stages.push(record_of(3, h.num_items, &s3.history));
    let stage3_val_loss = s3.history.last().expect("non-zero epochs").val;

    // Recluster with the refined backbone; this becomes the next iteration's
    // merge map.
    let (merge, silhouette, db) = recluster(&s3.backbone, data, config)?;

    state.backbone = s3.backbone.clone();
    state.merge = merge.clone();
    state.iteration = iteration;
    state.base_lr *= config.lr_iteration_decay;

    Ok(IterationOutput {
        record: IterationRecord {
            iteration,
            num_merged: Some(merge.num_merged),
            stage2_classes: stage2_ran.then_some(k),
            stages,
            silhouette,
            davies_bouldin: db,
            duration_secs: started.elapsed().as_secs_f64(),
        },
        epoch_metrics: metrics,
        type_model,
        item_backbone: s3.backbone,
        item_head: s3.head,
        stage3_val_loss,
        merge,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    ValPlateau,
}

/// The iteration loop and stopping rule, abstracted over the iteration body:
/// stop as soon as the validation loss fails to improve on the previous
/// iteration (or the cap is reached) and report the best iteration.
pub fn pipeline_loop<T>(
    max_iterations: usize,
    mut body: impl FnMut(usize) -> Result<(f64, T)>,
) -> Result<(Vec<(f64, T)>, StopReason, usize)> {
    let mut completed: Vec<(f64, T)> = Vec::new();
    let mut stop = StopReason::MaxIterations;
    for t in 1..=max_iterations {
        let out = body(t)?;
        completed.push(out);
        if t >= 2 && completed[t - 1].0 >= completed[t - 2].0 {
            stop = StopReason::ValPlateau;
            break;
        }
    }
    let best = completed
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.0.partial_cmp(&b.0).expect("finite val losses"))
        .map(|(i, _)| i + 1)
        .expect("at least one iteration");
    Ok((completed, stop, best))
}

/// Result of a full run (or a baseline, which fills one pseudo-iteration).
pub struct PipelineOutcome {
    pub mode: RunMode,
    pub records: Vec<IterationRecord>,
    pub epoch_metrics: Vec<EpochMetric>,
    pub stop_reason: StopReason,
    /// 1-based index of the iteration whose model is returned.
    pub best_iteration: usize,
    pub item_model: (BackboneParams, HeadParams),
    /// Stage-1 model of the best iteration (absent in flat mode).
    pub type_model: Option<(BackboneParams, HeadParams)>,
    /// Merge map produced at the end of each iteration (empty for baselines).
    pub merges: Vec<MergeMap>,
}

/// The full iterative method.
pub fn run_pipeline(data: &PreparedData, config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let mut state = PipelineState::initial(data, config)?;
    if config.merge_before_first_iteration {
        let (merge, _, _) = recluster(&state.backbone, data, config)?;
        state.merge = merge;
    }

    let (completed, stop_reason, best_iteration) =
        pipeline_loop(config.max_iterations, |_| {
            let out = run_iteration(&mut state, data, config)?;
            Ok((out.stage3_val_loss, out))
        })?;

    let mut records = Vec::new();
    let mut epoch_metrics = Vec::new();
    let mut merges = Vec::new();
    for (_, out) in &completed {
        records.push(out.record.clone());
        epoch_metrics.extend(out.epoch_metrics.iter().cloned());
        merges.push(out.merge.clone());
    }
    let best = &completed[best_iteration - 1].1;
    Ok(PipelineOutcome {
        mode: RunMode::Full,
        records,
        epoch_metrics,
        stop_reason,
        best_iteration,
        item_model: (best.item_backbone.clone(), best.item_head.clone()),
        type_model: Some(best.type_model.clone()),
        merges,
    })
}

/// Total item-level epochs the baselines get: the full pipeline's stage-3
/// budget summed over the iteration cap.
pub fn baseline_epoch_budget(config: &PipelineConfig) -> usize {
    config.epochs_per_stage * config.max_iterations
}

/// Single head of dimension N trained directly on item labels, budget-matched
/// to the full pipeline's item-level effort. No clustering, no stages.
pub fn run_flat_baseline(data: &PreparedData, config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let state = PipelineState::initial(data, config)?;
    let h = &data.hierarchy;
    let cfg = StageConfig {
        stage: 1,
        num_classes: h.num_items,
        epochs: baseline_epoch_budget(config),
        batch_size: config.batch_size,
        base_lr: config.base_lr,
        seed: derive_seed(config.seed, &[0xf1a7, 1]),
    };
    let out = train_stage(
        state.backbone,
        &cfg,
        (&data.x_train, &data.train_items),
        (&data.x_val, &data.val_items),
    )?;
    let mut epoch_metrics = Vec::new();
    push_epoch_metrics(&mut epoch_metrics, 1, 1, &out.history);
    let last = out.history.last().expect("non-zero epochs");
    let record = IterationRecord {
        iteration: 1,
        num_merged: None,
        stage2_classes: None,
        stages: vec![StageRecord {
            stage: 1,
            num_classes: h.num_items,
            final_train_loss: last.train,
            final_val_loss: last.val,
        }],
        silhouette: None,
        davies_bouldin: None,
        duration_secs: 0.0,
    };
    Ok(PipelineOutcome {
        mode: RunMode::Flat,
        records: vec![record],
        epoch_metrics,
        stop_reason: StopReason::MaxIterations,
        best_iteration: 1,
        item_model: (out.backbone, out.head),
        type_model: None,
        merges: Vec::new(),
    })
}

/// One pass of type-level training followed by item-level training on the
/// transferred backbone, each stage budget-matched per level.
pub fn run_htl_baseline(data: &PreparedData, config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let state = PipelineState::initial(data, config)?;
    let h = &data.hierarchy;
    let epochs = baseline_epoch_budget(config);
    let mut epoch_metrics = Vec::new();

    let s1 = train_stage(
        state.backbone,
        &StageConfig {
            stage: 1,
            num_classes: h.num_types,
            epochs,
            batch_size: config.batch_size,
            base_lr: config.base_lr,
            seed: derive_seed(config.seed, &[0x471, 1]),
        },
        (&data.x_train, &data.train_types),
        (&data.x_val, &data.val_types),
    )?;
    push_epoch_metrics(&mut epoch_metrics, 1, 1, &s1.history);
    let type_model = (s1.backbone.clone(), s1.head.clone());

    let s2 = train_stage(
        s1.backbone,
        &StageConfig {
            stage: 3,
            num_classes: h.num_items,
            epochs,
            batch_size: config.batch_size,
            base_lr: config.base_lr,
            seed: derive_seed(config.seed, &[0x471, 3]),
        },
        (&data.x_train, &data.train_items),
        (&data.x_val, &data.val_items),
    )?;
    push_epoch_metrics(&mut epoch_metrics, 1, 3, &s2.history);

    let last1 = s1.history.last().expect("non-zero epochs");
    let last2 = s2.history.last().expect("non-zero epochs");
    let record = IterationRecord {
        iteration: 1,
        num_merged: None,
        stage2_classes: None,
        stages: vec![
            StageRecord {
                stage: 1,
                num_classes: h.num_types,
                final_train_loss: last1.train,
                final_val_loss: last1.val,
            },
            StageRecord {
                stage: 3,
                num_classes: h.num_items,
                final_train_loss: last2.train,
                final_val_loss: last2.val,
            },
        ],
        silhouette: None,
        davies_bouldin: None,
        duration_secs: 0.0,
    };
    Ok(PipelineOutcome {
        mode: RunMode::Htl,
        records: vec![record],
        epoch_metrics,
        stop_reason: StopReason::MaxIterations,
        best_iteration: 1,
        item_model: (s2.backbone, s2.head),
        type_model: Some(type_model),
        merges: Vec::new(),
    })
}

/// Dispatch on the configured mode.
pub fn run(data: &PreparedData, config: &PipelineConfig) -> Result<PipelineOutcome> {
    match config.mode {
        RunMode::Full => run_pipeline(data, config),
        RunMode::Flat => run_flat_baseline(data, config),
        RunMode::Htl => run_htl_baseline(data, config),
    }
}

/// Predict a split and aggregate the report. Type predictions come from the
/// saved type model when available, otherwise from the predicted item's parent.
pub fn evaluate(
    outcome_item: &(BackboneParams, HeadParams),
    outcome_type: Option<&(BackboneParams, HeadParams)>,
    data: &PreparedData,
    split: Split,
    batch_size: usize,
) -> Result<(PredictionSet, EvalReport)> {
    let (x, items, types) = data.features_of(split);
    let ids: Vec<String> = match split {
        Split::Test => data.test_ids.clone(),
        Split::Train => data.train_ids.clone(),
        Split::Val => (0..items.len()).map(|i| format!("val{i}")).collect(),
    };
    let pred_items = predict_classes(&outcome_item.0, &outcome_item.1, x, batch_size)?;
    let (type_source, pred_types) = match outcome_type {
        Some((backbone, head)) => (
            TypePredictionSource::Stage1Head,
            predict_classes(backbone, head, x, batch_size)?,
        ),
        None => (
            TypePredictionSource::DerivedFromItems,
            pred_items.iter().map(|&p| data.hierarchy.parent[p]).collect(),
        ),
    };
    let predictions = ids
        .into_iter()
        .zip(&pred_items)
        .zip(&pred_types)
        .enumerate()
        .map(|(i, ((sample_id, &pred_item), &pred_type))| Prediction {
            sample_id,
            true_item: items[i],
            pred_item,
            true_type: types[i],
            pred_type,
        })
        .collect();
    let set = PredictionSet {
        split: split.to_string(),
        type_source,
        predictions,
    };
    let report = build_report(&set, &data.hierarchy)?;
    Ok((set, report))
}
