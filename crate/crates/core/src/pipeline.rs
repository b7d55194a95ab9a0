//! Experiment stages over an output directory: prepare, train, fit error
//! models, select threshold and hidden size, score, evaluate and plot.
//!
//! Every artifact records the hash of the config that produced it; each
//! stage refuses inputs whose hash differs from the current config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ThresholdMode, BUILTIN_PREFIX};
use crate::data::{
    self, downsample, fit_first_pc, load_csv, load_intervals, make_windows, read_json,
    reduce_window_to_first_pc, resolve_path, split, write_json, DatasetManifest, Interval,
    NormalizationStats, PreparedDataset, PreparedManifest, SplitRequirement, TimeSeriesFrame,
    Window, PREPARED_FORMAT_VERSION,
};
use crate::detection::{
    classify, evaluate, format_table, ranking_auc, select_threshold_supervised,
    select_threshold_unsupervised, Metrics, ReportRow, Threshold,
};
use crate::error::{Error, Result};
use crate::lstm::EncDecModel;
use crate::plot::window_svg;
use crate::scoring::{collect_errors, fit_error_model, score_windows, GaussianErrorModel, ScoreSeries};
use crate::synthetic;
use crate::training::{mean_window_loss, Architecture, Checkpoint, TrainReport, Trainer};

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

/// File layout of an experiment output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn prepared(&self) -> PathBuf {
        self.root.join("prepared")
    }

    pub fn model_dir(&self, c: usize) -> PathBuf {
        self.root.join("models").join(format!("c{c}"))
    }

    pub fn model(&self, c: usize) -> PathBuf {
        self.model_dir(c).join("model.json")
    }

    pub fn checkpoint(&self, c: usize) -> PathBuf {
        self.model_dir(c).join("checkpoint.json")
    }

    pub fn train_report(&self, c: usize) -> PathBuf {
        self.model_dir(c).join("train_report.json")
    }

    pub fn error_model(&self, c: usize) -> PathBuf {
        self.model_dir(c).join("error_model.json")
    }

    pub fn threshold(&self) -> PathBuf {
        self.root.join("threshold.json")
    }

    pub fn scores(&self) -> PathBuf {
        self.root.join("scores.csv")
    }

    /// Scores the selected threshold was fit on.
    pub fn validation_scores(&self) -> PathBuf {
        self.root.join("validation_scores.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.txt")
    }

    pub fn plots(&self) -> PathBuf {
        self.root.join("plots")
    }
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn check_hash(found: Option<&str>, expected: &str, what: &Path) -> Result<()> {
    match found {
        Some(h) if h == expected => Ok(()),
        Some(h) => Err(Error::ArtifactMismatch(format!(
            "{} was produced by config {h}, current config is {expected}",
            what.display()
        ))),
        None => Err(Error::ArtifactMismatch(format!("{} has no config hash", what.display()))),
    }
}

/// `config.json`: the fully resolved config next to its hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub format_version: u32,
    pub config_hash: String,
    pub config: ExperimentConfig,
}

pub fn write_config(cfg: &ExperimentConfig, layout: &Layout) -> Result<()> {
    mkdir(layout.root())?;
    write_json(
        &layout.config(),
        &ConfigSnapshot {
            format_version: ARTIFACT_FORMAT_VERSION,
            config_hash: cfg.hash(),
            config: cfg.clone(),
        },
    )
}

pub fn read_config(layout: &Layout) -> Result<ExperimentConfig> {
    let path = layout.config();
    let snap: ConfigSnapshot = read_json(&path)?;
    snap.config.validate()?;
    if snap.config.hash() != snap.config_hash {
        return Err(Error::ArtifactMismatch(format!(
            "{} does not match its recorded hash",
            path.display()
        )));
    }
    Ok(snap.config)
}

const POWER_POINTS_PER_DAY: usize = 96;

/// 1997 Dutch public holidays falling on weekdays, as day offsets from
/// 1 January (a Wednesday): New Year, Good Friday, Easter Monday, Queen's
/// Day, Ascension, Whit Monday, Christmas and Boxing Day.
const POWER_HOLIDAYS_1997: [usize; 8] = [0, 86, 89, 119, 127, 138, 358, 359];

/// Interval lists compiled into the library, keyed by `builtin:<name>`.
pub fn builtin_intervals(name: &str) -> Result<Vec<Interval>> {
    match name {
        "power_demand_1997" => Ok(POWER_HOLIDAYS_1997
            .iter()
            .map(|d| Interval {
                series_id: None,
                start: d * POWER_POINTS_PER_DAY,
                end: (d + 1) * POWER_POINTS_PER_DAY,
            })
            .collect()),
        other => Err(Error::InvalidConfig(format!("unknown builtin interval set `{other}`"))),
    }
}

/// Loads (or generates) the labeled raw series.
pub fn load_frames(cfg: &ExperimentConfig, data_root: Option<&Path>) -> Result<Vec<TimeSeriesFrame>> {
    let d = &cfg.dataset;
    if let Some(syn) = &d.synthetic {
        return Ok(vec![synthetic::generate(syn, cfg.seed)?.0]);
    }
    let intervals = match &d.intervals {
        None => Vec::new(),
        Some(src) => match src.strip_prefix(BUILTIN_PREFIX) {
            Some(name) => builtin_intervals(name)?,
            None => load_intervals(resolve_path(data_root, Path::new(src)))?,
        },
    };
    d.series
        .iter()
        .map(|s| {
            let mut frame = load_csv(resolve_path(data_root, &s.path), &s.id, &d.schema)?;
            frame.apply_intervals(&intervals)?;
            if d.intervals.is_none() {
                frame.labels = None;
            }
            Ok(frame)
        })
        .collect()
}

/// Builds the prepared dataset: downsample, window, split, then fit
/// normalization and (optionally) the first principal component on s_N.
pub fn prepare(cfg: &ExperimentConfig, data_root: Option<&Path>) -> Result<PreparedDataset> {
    let d = &cfg.dataset;
    let frames = load_frames(cfg, data_root)?;
    let raw_m = frames.first().map_or(0, |f| f.dims());
    if frames.iter().any(|f| f.dims() != raw_m) {
        return Err(Error::DimensionMismatch("series have different channel counts".into()));
    }
    let mut normal = Vec::new();
    let mut anomalous = Vec::new();
    let mut next_id = 0;
    for frame in &frames {
        let ds = downsample(frame, d.downsample, d.downsample_method)?;
        for mut w in make_windows(&ds, d.window_length, d.window_step)? {
            w.id = next_id;
            next_id += 1;
            if w.label.is_anomalous() {
                anomalous.push(w);
            } else {
                normal.push(w);
            }
        }
    }
    let dataset = DatasetManifest {
        name: d.name.clone(),
        predictable: d.predictable,
        dimensions: raw_m,
        periodicity: d.periodicity,
        original_sequences: frames.len(),
        normal_subsequences: normal.len(),
        anomalous_subsequences: anomalous.len(),
    };
    let mut sp = split(normal, anomalous, &cfg.split, cfg.seed)?;
    let requirement = match cfg.detection.threshold {
        ThresholdMode::Supervised => SplitRequirement::Supervised,
        ThresholdMode::Unsupervised => SplitRequirement::Unsupervised,
    };
    sp.require(requirement)?;

    let normalization = if d.normalize {
        let stats = NormalizationStats::fit(&sp.s_n)?;
        map_windows(&mut sp, |w| stats.apply_window(w))?;
        Some(stats)
    } else {
        None
    };
    let principal_component = if d.pca {
        let pc = fit_first_pc(&sp.s_n)?;
        log::info!("first principal component explains {:.3} of the variance", pc.explained_variance_ratio);
        map_windows(&mut sp, |w| reduce_window_to_first_pc(w, &pc))?;
        Some(pc)
    } else {
        None
    };
    let m = if d.pca { 1 } else { raw_m };
    Ok(PreparedDataset {
        manifest: PreparedManifest {
            format_version: PREPARED_FORMAT_VERSION,
            config_hash: cfg.hash(),
            dataset,
            window_length: d.window_length,
            window_step: d.window_step,
            downsample: d.downsample,
            m,
            normalization,
            principal_component,
            window_count: next_id,
        },
        split: sp,
    })
}

fn map_windows(sp: &mut data::DatasetSplit, f: impl Fn(&Window) -> Result<Window>) -> Result<()> {
    for set in sp.subsets_mut() {
        for w in set.iter_mut() {
            *w = f(w)?;
        }
    }
    Ok(())
}

pub fn stage_prepare(cfg: &ExperimentConfig, data_root: Option<&Path>, layout: &Layout) -> Result<PreparedDataset> {
    write_config(cfg, layout)?;
    let prepared = prepare(cfg, data_root)?;
    prepared.write(layout.prepared())?;
    Ok(prepared)
}

pub fn load_prepared(cfg: &ExperimentConfig, layout: &Layout) -> Result<PreparedDataset> {
    let prepared = PreparedDataset::read(layout.prepared())?;
    check_hash(
        Some(&prepared.manifest.config_hash),
        &cfg.hash(),
        &layout.prepared().join(data::MANIFEST_FILE),
    )?;
    Ok(prepared)
}

/// Trains one model per hidden size. A checkpoint is written after every
/// epoch; `resume` continues the run whose architecture it records.
/// `stop_after` pauses each run after that many epochs of this invocation.
pub fn stage_train(
    cfg: &ExperimentConfig,
    layout: &Layout,
    resume: Option<&Path>,
    stop_after: Option<usize>,
) -> Result<Vec<(EncDecModel, TrainReport)>> {
    let prepared = load_prepared(cfg, layout)?;
    let hash = cfg.hash();
    let mut resume = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            check_hash(ck.config_hash.as_deref(), &hash, p)?;
            Some(ck)
        }
        None => None,
    };
    let sp = &prepared.split;
    let mut out = Vec::new();
    for &c in &cfg.model.hidden_sizes {
        let arch = Architecture {
            m: prepared.manifest.m,
            c,
            window_length: prepared.manifest.window_length,
        };
        let mut trainer = match resume.take() {
            Some(ck) if ck.architecture == arch => {
                log::info!("resuming c={c} after epoch {}", ck.report.epochs_run);
                Trainer::from_checkpoint(ck)?
            }
            other => {
                resume = other;
                let mut t = Trainer::new(arch, cfg.train.clone())?;
                t.set_config_hash(Some(hash.clone()));
                t
            }
        };
        mkdir(&layout.model_dir(c))?;
        let mut budget = stop_after.unwrap_or(usize::MAX);
        while trainer.report().stop_reason.is_none() && budget > 0 {
            trainer
                .run_epoch(&sp.s_n, &sp.v_n1)
                .map_err(|e| e.with_context(format!("c={c}")))?;
            trainer.checkpoint().save(layout.checkpoint(c))?;
            budget -= 1;
        }
        let (model, report) = trainer.finish();
        log::info!(
            "c={c}: {} epochs, best epoch {} (validation loss {:.4e})",
            report.epochs_run,
            report.best_epoch,
            report.validation_loss.get(report.best_epoch.saturating_sub(1)).copied().unwrap_or(f64::NAN)
        );
        model.save(layout.model(c))?;
        write_json(&layout.train_report(c), &report)?;
        out.push((model, report));
    }
    if let Some(ck) = resume {
        return Err(Error::ArtifactMismatch(format!(
            "checkpoint architecture c={} matches no configured hidden size",
            ck.architecture.c
        )));
    }
    Ok(out)
}

fn load_model(cfg: &ExperimentConfig, layout: &Layout, c: usize) -> Result<EncDecModel> {
    let path = layout.model(c);
    let model = EncDecModel::load(&path)?;
    check_hash(model.config_hash.as_deref(), &cfg.hash(), &path)?;
    Ok(model)
}

fn load_error_model(cfg: &ExperimentConfig, layout: &Layout, c: usize) -> Result<GaussianErrorModel> {
    let path = layout.error_model(c);
    let gm = GaussianErrorModel::load(&path)?;
    check_hash(gm.config_hash(), &cfg.hash(), &path)?;
    Ok(gm)
}

/// Fits `N(μ, Σ)` to the pooled v_N1 reconstruction errors of each model.
pub fn stage_fit_error_models(cfg: &ExperimentConfig, layout: &Layout) -> Result<Vec<GaussianErrorModel>> {
    let prepared = load_prepared(cfg, layout)?;
    cfg.model
        .hidden_sizes
        .iter()
        .map(|&c| {
            let model = load_model(cfg, layout, c)?;
            let errors = collect_errors(&model, &prepared.split.v_n1, cfg.detection.decode_mode)?;
            let mut gm = fit_error_model(&errors)?;
            gm.set_config_hash(Some(cfg.hash()));
            gm.save(layout.error_model(c))?;
            Ok(gm)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateModel {
    pub hidden_size: usize,
    pub threshold: Threshold,
    /// Validation F_β (supervised selection).
    pub f_beta: Option<f64>,
    /// Mean v_N1 window loss (unsupervised selection).
    pub validation_loss: Option<f64>,
}

/// `threshold.json`: the chosen hidden size and threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub format_version: u32,
    pub config_hash: String,
    pub hidden_size: usize,
    pub threshold: Threshold,
    pub candidates: Vec<CandidateModel>,
}

/// Supervised: τ and c maximizing F_β on v_N2 ∪ v_A. Unsupervised: c with the
/// lowest v_N1 loss, τ = mean + std of its v_N1 scores. Ties keep the
/// earlier hidden size in the list.
pub fn stage_threshold(cfg: &ExperimentConfig, layout: &Layout) -> Result<Selection> {
    let prepared = load_prepared(cfg, layout)?;
    let sp = &prepared.split;
    let mode = cfg.detection.decode_mode;
    let mut candidates = Vec::new();
    let mut fitted_on = Vec::new();
    for &c in &cfg.model.hidden_sizes {
        let model = load_model(cfg, layout, c)?;
        let gm = load_error_model(cfg, layout, c)?;
        let cand = match cfg.detection.threshold {
            ThresholdMode::Supervised => {
                let mut val: Vec<Window> = sp.v_n2.clone();
                val.extend(sp.v_a.iter().cloned());
                let scores = score_windows(&model, &gm, &val, mode)?;
                let t = select_threshold_supervised(&scores.scores(), &scores.truth(), cfg.detection.beta)?;
                let cand = CandidateModel {
                    hidden_size: c,
                    f_beta: t.best_f_beta,
                    threshold: t,
                    validation_loss: None,
                };
                (cand, scores)
            }
            ThresholdMode::Unsupervised => {
                let scores = score_windows(&model, &gm, &sp.v_n1, mode)?;
                let cand = CandidateModel {
                    hidden_size: c,
                    threshold: select_threshold_unsupervised(&scores.scores())?,
                    f_beta: None,
                    validation_loss: Some(mean_window_loss(&model, &sp.v_n1)?),
                };
                (cand, scores)
            }
        };
        candidates.push(cand.0);
        fitted_on.push(cand.1);
    }
    let better = |a: &CandidateModel, b: &CandidateModel| match cfg.detection.threshold {
        ThresholdMode::Supervised => a.f_beta > b.f_beta,
        ThresholdMode::Unsupervised => a.validation_loss < b.validation_loss,
    };
    let mut best_idx = 0;
    for (k, cand) in candidates.iter().enumerate().skip(1) {
        if better(cand, &candidates[best_idx]) {
            best_idx = k;
        }
    }
    let best = &candidates[best_idx];
    let mut val_scores = fitted_on.swap_remove(best_idx);
    val_scores.config_hash = Some(cfg.hash());
    val_scores.save_csv(layout.validation_scores())?;
    let selection = Selection {
        format_version: ARTIFACT_FORMAT_VERSION,
        config_hash: cfg.hash(),
        hidden_size: best.hidden_size,
        threshold: best.threshold.clone(),
        candidates: candidates.clone(),
    };
    write_json(&layout.threshold(), &selection)?;
    Ok(selection)
}

fn load_selection(cfg: &ExperimentConfig, layout: &Layout) -> Result<Selection> {
    let path = layout.threshold();
    let sel: Selection = read_json(&path)?;
    if sel.format_version != ARTIFACT_FORMAT_VERSION {
        return Err(Error::ArtifactMismatch(format!(
            "{} has format_version {}",
            path.display(),
            sel.format_version
        )));
    }
    check_hash(Some(&sel.config_hash), &cfg.hash(), &path)?;
    Ok(sel)
}

fn test_windows(prepared: &PreparedDataset) -> Vec<Window> {
    let mut test: Vec<Window> = prepared.split.t_n.iter().chain(&prepared.split.t_a).cloned().collect();
    test.sort_by_key(|w| w.id);
    test
}

/// Scores the test windows (t_N ∪ t_A) with the selected model.
pub fn stage_score(cfg: &ExperimentConfig, layout: &Layout) -> Result<ScoreSeries> {
    let prepared = load_prepared(cfg, layout)?;
    let sel = load_selection(cfg, layout)?;
    let model = load_model(cfg, layout, sel.hidden_size)?;
    let gm = load_error_model(cfg, layout, sel.hidden_size)?;
    let mut scores = score_windows(&model, &gm, &test_windows(&prepared), cfg.detection.decode_mode)?;
    scores.config_hash = Some(cfg.hash());
    scores.save_csv(layout.scores())?;
    Ok(scores)
}

/// `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub config_hash: String,
    pub row: ReportRow,
    pub test_points: usize,
    /// Ranking AUC of per-window mean scores (diagnostic).
    pub window_auc: Option<f64>,
    pub explained_variance_ratio: Option<f64>,
}

pub fn stage_evaluate(cfg: &ExperimentConfig, layout: &Layout) -> Result<MetricsReport> {
    let sel = load_selection(cfg, layout)?;
    let path = layout.scores();
    let scores = ScoreSeries::load_csv(&path)?;
    check_hash(scores.config_hash.as_deref(), &cfg.hash(), &path)?;
    let manifest: PreparedManifest = read_json(&layout.prepared().join(data::MANIFEST_FILE))?;
    let report = evaluate_scores(cfg, &sel, &scores, &manifest)?;
    write_json(&layout.metrics(), &report)?;
    let text = format_table(std::slice::from_ref(&report.row));
    fs::write(layout.summary(), &text).map_err(|e| Error::io(layout.summary(), e))?;
    Ok(report)
}

fn evaluate_scores(
    cfg: &ExperimentConfig,
    sel: &Selection,
    scores: &ScoreSeries,
    manifest: &PreparedManifest,
) -> Result<MetricsReport> {
    let pred = classify(&scores.scores(), sel.threshold.tau);
    let metrics: Metrics = evaluate(&pred, &scores.truth(), cfg.detection.beta)?;
    let means = scores.window_means();
    let window_scores: Vec<f64> = means.iter().map(|m| m.2).collect();
    let window_truth: Vec<bool> = means.iter().map(|m| m.1.is_anomalous()).collect();
    let window_auc = ranking_auc(&window_scores, &window_truth).ok();
    Ok(MetricsReport {
        format_version: ARTIFACT_FORMAT_VERSION,
        config_hash: cfg.hash(),
        row: ReportRow {
            dataset: cfg.dataset.name.clone(),
            window_length: cfg.dataset.window_length,
            hidden_size: sel.hidden_size,
            threshold: sel.threshold.clone(),
            metrics,
        },
        test_points: scores.len(),
        window_auc,
        explained_variance_ratio: manifest.principal_component.as_ref().map(|pc| pc.explained_variance_ratio),
    })
}

/// One SVG per test window (first channel).
pub fn stage_plots(cfg: &ExperimentConfig, layout: &Layout) -> Result<usize> {
    let prepared = load_prepared(cfg, layout)?;
    let sel = load_selection(cfg, layout)?;
    let model = load_model(cfg, layout, sel.hidden_size)?;
    let gm = load_error_model(cfg, layout, sel.hidden_size)?;
    let dir = layout.plots();
    mkdir(&dir)?;
    let windows = test_windows(&prepared);
    for w in &windows {
        let r = model.reconstruct(&w.values, cfg.detection.decode_mode)?;
        let scores = score_windows(&model, &gm, std::slice::from_ref(w), cfg.detection.decode_mode)?;
        let col = |m: &crate::numerics::Matrix| m.row_iter().map(|r| r[0]).collect::<Vec<f64>>();
        let title = format!(
            "{} window {} (start {}, {})",
            w.series_id,
            w.id,
            w.start,
            w.label.as_str()
        );
        let svg = window_svg(&title, &col(&w.values), &col(&r.values), &scores.scores(), sel.threshold.tau);
        let path = dir.join(format!("window_{:05}.svg", w.id));
        fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
    }
    Ok(windows.len())
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub prepared: PreparedDataset,
    pub selection: Selection,
    pub scores: ScoreSeries,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub plots: bool,
}

/// Runs every stage in order; errors name the failing stage.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    data_root: Option<&Path>,
    layout: &Layout,
    resume: Option<&Path>,
    opts: RunOptions,
) -> Result<ExperimentOutcome> {
    fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
        r.inspect_err(|_| log::error!("stage `{name}` failed"))
    }
    cfg.validate()?;
    let prepared = stage("prepare", stage_prepare(cfg, data_root, layout))?;
    stage("train", stage_train(cfg, layout, resume, None))?;
    stage("fit-error-model", stage_fit_error_models(cfg, layout))?;
    let selection = stage("threshold", stage_threshold(cfg, layout))?;
    let scores = stage("score", stage_score(cfg, layout))?;
    let report = stage("evaluate", stage_evaluate(cfg, layout))?;
    if opts.plots {
        stage("plots", stage_plots(cfg, layout))?;
    }
    Ok(ExperimentOutcome {
        prepared,
        selection,
        scores,
        report,
    })
}
