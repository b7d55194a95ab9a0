//! Mini-batch Adam training with early stopping on a validation set.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{EncDecModel, Parameters, TrainingSummary};
use crate::numerics::{prng_stream, Matrix};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 32,
            max_epochs: 500,
            patience: 20,
            seed: 0,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        Ok(())
    }
}

/// First and second moment accumulators plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first: Parameters,
    pub second: Parameters,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &Parameters) -> Self {
        AdamState {
            first: shape.zeros_like(),
            second: shape.zeros_like(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam step, in place.
pub fn adam_update(
    params: &mut Parameters,
    grads: &Parameters,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if let Some(block) = grads.first_non_finite_block() {
        return Err(Error::Divergence {
            block,
            context: " (gradient)".into(),
        });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let names = Parameters::block_names();
    let blocks = params
        .blocks_mut()
        .into_iter()
        .zip(grads.blocks())
        .zip(state.first.blocks_mut())
        .zip(state.second.blocks_mut());
    for (k, (((p, g), m), v)) in blocks.enumerate() {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            let step = -cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            if !step.is_finite() {
                return Err(Error::Divergence {
                    block: names[k].clone(),
                    context: " (update)".into(),
                });
            }
            p[i] += step;
        }
    }
    Ok(())
}

/// Rescales `grads` so its global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Parameters, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::Patience => "patience",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Mean per-window training loss, measured before each batch update.
    pub train_loss: Vec<f64>,
    /// Mean per-window teacher-forced loss on the validation set after each epoch.
    pub validation_loss: Vec<f64>,
    /// 1-based epoch whose weights were returned.
    pub best_epoch: usize,
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub m: usize,
    pub c: usize,
    pub window_length: usize,
}

/// Mean teacher-forced window loss.
pub fn mean_window_loss<W: AsRef<Matrix> + Sync>(model: &EncDecModel, windows: &[W]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::EmptySubset("no windows to evaluate".into()));
    }
    let losses: Vec<f64> = windows
        .par_iter()
        .map(|w| model.window_loss(w.as_ref()))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / windows.len() as f64)
}

/// Resumable training loop state.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    model: EncDecModel,
    best: EncDecModel,
    best_loss: f64,
    adam: AdamState,
    since_improvement: usize,
    report: TrainReport,
}

impl Trainer {
    pub fn new(arch: Architecture, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = EncDecModel::new(arch.m, arch.c, arch.window_length, cfg.seed)?;
        let adam = AdamState::new(&model.params);
        Ok(Trainer {
            best: model.clone(),
            best_loss: f64::INFINITY,
            model,
            adam,
            since_improvement: 0,
            report: TrainReport {
                epochs_run: 0,
                train_loss: Vec::new(),
                validation_loss: Vec::new(),
                best_epoch: 0,
                stop_reason: None,
            },
            cfg,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.report.epochs_run
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn current_model(&self) -> &EncDecModel {
        &self.model
    }

    /// Replaces the config, e.g. to extend `max_epochs` after resuming.
    pub fn set_config(&mut self, cfg: TrainConfig) -> Result<()> {
        cfg.validate()?;
        self.cfg = cfg;
        self.report.stop_reason = None;
        Ok(())
    }

    fn check_shapes<W: AsRef<Matrix>>(&self, windows: &[W]) -> Result<()> {
        let want = (self.model.window_length, self.model.m);
        for w in windows {
            let w = w.as_ref();
            if w.shape() != want {
                return Err(Error::DimensionMismatch(format!(
                    "training window is {}x{}, expected {}x{}",
                    w.rows(),
                    w.cols(),
                    want.0,
                    want.1
                )));
            }
        }
        Ok(())
    }

    /// Runs one epoch and returns the stop reason once training should end.
    ///
    /// The shuffle for epoch `e` comes from stream `e` of the seeded
    /// generator, so a resumed run replays exactly.
    pub fn run_epoch<W: AsRef<Matrix> + Sync>(
        &mut self,
        train: &[W],
        validation: &[W],
    ) -> Result<Option<StopReason>> {
        if train.is_empty() {
            return Err(Error::EmptySubset("training set s_N is empty".into()));
        }
        self.check_shapes(train)?;
        self.check_shapes(validation)?;
        let epoch = self.report.epochs_run + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut prng_stream(self.cfg.seed, epoch as u64));

        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            let batch: Vec<&Matrix> = chunk.iter().map(|&i| train[i].as_ref()).collect();
            let ctx = || format!("epoch {epoch}, batch {}", b + 1);
            let (loss, mut grads) = self
                .model
                .loss_and_gradients(&batch)
                .map_err(|e| e.with_context(ctx()))?;
            loss_sum += loss;
            clip_global_norm(&mut grads, self.cfg.clip_norm);
            adam_update(&mut self.model.params, &grads, &mut self.adam, &self.cfg)
                .map_err(|e| e.with_context(ctx()))?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_loss = if validation.is_empty() {
            mean_window_loss(&self.model, train)?
        } else {
            mean_window_loss(&self.model, validation)?
        };
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                block: "validation loss".into(),
                context: format!(" (epoch {epoch})"),
            });
        }

        self.report.epochs_run = epoch;
        self.report.train_loss.push(train_loss);
        self.report.validation_loss.push(val_loss);
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best = self.model.clone();
            self.report.best_epoch = epoch;
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} validation {val_loss:.6e}");

        let stop = if self.since_improvement >= self.cfg.patience {
            Some(StopReason::Patience)
        } else if epoch >= self.cfg.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        self.report.stop_reason = stop;
        Ok(stop)
    }

    /// Best-validation snapshot with its training summary attached.
    pub fn finish(self) -> (EncDecModel, TrainReport) {
        let mut model = self.best;
        model.training = Some(TrainingSummary {
            epochs_run: self.report.epochs_run,
            best_epoch: self.report.best_epoch,
            best_validation_loss: self.best_loss,
            stop_reason: self
                .report
                .stop_reason
                .map_or("interrupted", |r| r.as_str())
                .to_string(),
        });
        (model, self.report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash: self.model.config_hash.clone(),
            architecture: Architecture {
                m: self.model.m,
                c: self.model.c,
                window_length: self.model.window_length,
            },
            init_seed: self.model.init_seed,
            train_config: self.cfg.clone(),
            model: self.model.params.to_blocks(),
            best_model: self.best.params.to_blocks(),
            best_loss: if self.best_loss.is_finite() {
                Some(self.best_loss)
            } else {
                None
            },
            adam_t: self.adam.t,
            adam_first: self.adam.first.to_blocks(),
            adam_second: self.adam.second.to_blocks(),
            since_improvement: self.since_improvement,
            report: self.report.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "checkpoint format_version {} (supported: {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        ck.train_config.validate()?;
        let Architecture { m, c, window_length } = ck.architecture;
        let mut model = EncDecModel::zeros(m, c, window_length);
        model.init_seed = ck.init_seed;
        model.config_hash = ck.config_hash.clone();
        let mut best = model.clone();
        model.params = Parameters::from_blocks(m, c, &ck.model)?;
        best.params = Parameters::from_blocks(m, c, &ck.best_model)?;
        let adam = AdamState {
            first: Parameters::from_blocks(m, c, &ck.adam_first)?,
            second: Parameters::from_blocks(m, c, &ck.adam_second)?,
            t: ck.adam_t,
        };
        Ok(Trainer {
            cfg: ck.train_config,
            model,
            best,
            best_loss: ck.best_loss.unwrap_or(f64::INFINITY),
            adam,
            since_improvement: ck.since_improvement,
            report: ck.report,
        })
    }

    pub fn set_config_hash(&mut self, hash: Option<String>) {
        self.model.config_hash = hash.clone();
        self.best.config_hash = hash;
    }
}

/// Everything needed to continue training bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_hash: Option<String>,
    pub architecture: Architecture,
    pub init_seed: u64,
    pub train_config: TrainConfig,
    pub model: Vec<Vec<f64>>,
    pub best_model: Vec<Vec<f64>>,
    pub best_loss: Option<f64>,
    pub adam_t: u64,
    pub adam_first: Vec<Vec<f64>>,
    pub adam_second: Vec<Vec<f64>>,
    pub since_improvement: usize,
    pub report: TrainReport,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Trains until early stopping or `max_epochs`, returning the best snapshot.
pub fn train<W: AsRef<Matrix> + Sync>(
    train_set: &[W],
    validation: &[W],
    arch: Architecture,
    cfg: &TrainConfig,
) -> Result<(EncDecModel, TrainReport)> {
    let mut trainer = Trainer::new(arch, cfg.clone())?;
    while trainer.run_epoch(train_set, validation)?.is_none() {}
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_params(g: f64) -> Parameters {
        let mut p = Parameters::zeros(1, 1);
        for b in p.blocks_mut() {
            b.iter_mut().for_each(|v| *v = g);
        }
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = TrainConfig::default();
        let mut p = scalar_params(0.7);
        let before = p.clone();
        let mut st = AdamState::new(&p);
        adam_update(&mut p, &scalar_params(0.0), &mut st, &cfg).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = TrainConfig::default();
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p);
        adam_update(&mut p, &scalar_params(0.5), &mut st, &cfg).unwrap();
        let expected = -0.001 * (0.5 / (0.5 + 1e-8));
        for b in p.blocks() {
            assert!((b[0] - expected).abs() < 1e-15, "{} vs {expected}", b[0]);
        }
        assert!(st.second.blocks().iter().all(|b| b[0] >= 0.0));
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let cfg = TrainConfig::default();
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p);
        let g = scalar_params(-3.0);
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..5000 {
            adam_update(&mut p, &g, &mut st, &cfg).unwrap();
            step = p.blocks()[0][0] - prev;
            prev = p.blocks()[0][0];
        }
        assert!(step > 0.0);
        assert!((step - 1e-3).abs() < 1e-6, "step {step}");
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let cfg = TrainConfig::default();
        let mut p = scalar_params(0.0);
        let mut st = AdamState::new(&p);
        let mut g = scalar_params(0.0);
        g.output_bias[0] = f64::NAN;
        match adam_update(&mut p, &g, &mut st, &cfg) {
            Err(Error::Divergence { block, .. }) => assert_eq!(block, "output.bias"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = scalar_params(10.0);
        let before = clip_global_norm(&mut g, 1.0);
        assert!(before > 1.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = scalar_params(1e-3);
        let copy = small.clone();
        clip_global_norm(&mut small, 10.0);
        assert_eq!(small, copy);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { patience: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
