//! Reconstruction-error Gaussian model and Mahalanobis anomaly scores.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_csv_preamble, Label, Window};
use crate::error::{Error, Result};
use crate::lstm::{DecodeMode, EncDecModel, Reconstruction};
use crate::numerics::{dot, factor_spd, mean_and_covariance, solve_spd, Matrix, SpdFactorization};

pub const ERROR_MODEL_FORMAT_VERSION: u32 = 1;
pub const SCORES_FORMAT_VERSION: u32 = 1;

/// Relative base regularization added to the error covariance.
pub const BASE_REGULARIZATION: f64 = 1e-9;

/// Absolute reconstruction error `|x - x'|` at one point of a window.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorVector {
    pub e: Vec<f64>,
    pub window_id: usize,
    pub position: usize,
}

pub fn error_vectors(w: &Window, r: &Reconstruction) -> Result<Vec<ErrorVector>> {
    error_vectors_raw(&w.values, &r.values, w.id)
}

fn error_vectors_raw(x: &Matrix, xr: &Matrix, window_id: usize) -> Result<Vec<ErrorVector>> {
    if x.shape() != xr.shape() {
        return Err(Error::DimensionMismatch(format!(
            "window is {:?} but reconstruction is {:?}",
            x.shape(),
            xr.shape()
        )));
    }
    Ok(x.row_iter()
        .zip(xr.row_iter())
        .enumerate()
        .map(|(position, (a, b))| ErrorVector {
            e: a.iter().zip(b).map(|(p, q)| (p - q).abs()).collect(),
            window_id,
            position,
        })
        .collect())
}

/// `N(μ, Σ)` fitted to pooled error vectors, with a cached factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianErrorModel {
    mean: Vec<f64>,
    covariance: Matrix,
    factorization: SpdFactorization,
    sample_count: usize,
    config_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ErrorModelFile {
    format_version: u32,
    config_hash: Option<String>,
    m: usize,
    sample_count: usize,
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    base_regularization: f64,
    regularization: f64,
}

fn base_regularization(cov: &Matrix) -> f64 {
    let m = cov.rows();
    BASE_REGULARIZATION * cov.diag().iter().sum::<f64>() / m as f64
}

impl GaussianErrorModel {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn factorization(&self) -> &SpdFactorization {
        &self.factorization
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn config_hash(&self) -> Option<&str> {
        self.config_hash.as_deref()
    }

    pub fn set_config_hash(&mut self, hash: Option<String>) {
        self.config_hash = hash;
    }

    /// Builds a model from given moments (factorized with the standard base
    /// regularization).
    pub fn from_moments(mean: Vec<f64>, covariance: Matrix, sample_count: usize) -> Result<Self> {
        if covariance.shape() != (mean.len(), mean.len()) || mean.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "mean of length {} with covariance {:?}",
                mean.len(),
                covariance.shape()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("error-model mean".into()));
        }
        let factorization = factor_spd(&covariance, base_regularization(&covariance))?;
        Ok(GaussianErrorModel {
            mean,
            covariance,
            factorization,
            sample_count,
            config_hash: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ErrorModelFile {
            format_version: ERROR_MODEL_FORMAT_VERSION,
            config_hash: self.config_hash.clone(),
            m: self.dims(),
            sample_count: self.sample_count,
            mean: self.mean.clone(),
            covariance: self.covariance.row_iter().map(<[f64]>::to_vec).collect(),
            base_regularization: base_regularization(&self.covariance),
            regularization: self.factorization.regularization(),
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ErrorModelFile = serde_json::from_str(text)?;
        if file.format_version != ERROR_MODEL_FORMAT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "error model format_version {}, supported {ERROR_MODEL_FORMAT_VERSION}",
                file.format_version
            )));
        }
        if file.mean.len() != file.m {
            return Err(Error::ArtifactMismatch(format!(
                "error model declares m={} but mean has {} entries",
                file.m,
                file.mean.len()
            )));
        }
        let cov = Matrix::from_rows(&file.covariance)?;
        let mut gm = Self::from_moments(file.mean, cov, file.sample_count)?;
        if gm.factorization.regularization() != file.regularization {
            return Err(Error::ArtifactMismatch(format!(
                "stored regularization {:e} does not reproduce (got {:e})",
                file.regularization,
                gm.factorization.regularization()
            )));
        }
        gm.config_hash = file.config_hash;
        Ok(gm)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// MLE fit (mean, covariance with denominator N) of pooled error vectors.
pub fn fit_error_model(errors: &[ErrorVector]) -> Result<GaussianErrorModel> {
    let m = errors
        .first()
        .ok_or_else(|| Error::EmptySubset("no error vectors to fit".into()))?
        .e
        .len();
    if errors.len() < m + 1 {
        return Err(Error::EmptySubset(format!(
            "{} error vectors cannot fit a {m}-dimensional Gaussian (need at least {})",
            errors.len(),
            m + 1
        )));
    }
    let mut data = Vec::with_capacity(errors.len() * m);
    for ev in errors {
        if ev.e.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "error vector of length {} among length {m}",
                ev.e.len()
            )));
        }
        data.extend_from_slice(&ev.e);
    }
    let (mean, cov) = mean_and_covariance(&Matrix::from_vec(errors.len(), m, data)?);
    GaussianErrorModel::from_moments(mean, cov, errors.len())
}

/// `(e-μ)ᵀ (Σ+εI)⁻¹ (e-μ)`, clamped at zero against round-off.
pub fn anomaly_score(gm: &GaussianErrorModel, e: &[f64]) -> Result<f64> {
    if e.len() != gm.dims() {
        return Err(Error::DimensionMismatch(format!(
            "error vector of length {} for a {}-dimensional error model",
            e.len(),
            gm.dims()
        )));
    }
    let d: Vec<f64> = e.iter().zip(&gm.mean).map(|(x, mu)| x - mu).collect();
    let u = solve_spd(&gm.factorization, &d)?;
    let a = dot(&d, &u).max(0.0);
    if !a.is_finite() {
        return Err(Error::NonFinite("anomaly score".into()));
    }
    Ok(a)
}

/// Score of a single point in a series.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePoint {
    pub series_id: String,
    pub window_id: usize,
    pub position: usize,
    /// Window start plus position, in the (downsampled) series.
    pub global_time_index: usize,
    pub score: f64,
    /// Propagated window label, used as point-level truth.
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSeries {
    pub points: Vec<ScorePoint>,
    pub config_hash: Option<String>,
}

impl ScoreSeries {
    pub fn scores(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.score).collect()
    }

    pub fn truth(&self) -> Vec<bool> {
        self.points.iter().map(|p| p.label.is_anomalous()).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn concat(parts: impl IntoIterator<Item = ScoreSeries>) -> ScoreSeries {
        let mut out = ScoreSeries::default();
        for p in parts {
            out.config_hash = out.config_hash.or(p.config_hash);
            out.points.extend(p.points);
        }
        out
    }

    /// Mean score per window, in order of first appearance.
    pub fn window_means(&self) -> Vec<(usize, Label, f64)> {
        let mut out: Vec<(usize, Label, f64, usize)> = Vec::new();
        for p in &self.points {
            match out.last_mut() {
                Some(last) if last.0 == p.window_id => {
                    last.2 += p.score;
                    last.3 += 1;
                }
                _ => out.push((p.window_id, p.label, p.score, 1)),
            }
        }
        out.into_iter().map(|(id, l, s, n)| (id, l, s / n as f64)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# encdec-ad scores format_version={SCORES_FORMAT_VERSION} config_hash={}\n",
            self.config_hash.as_deref().unwrap_or("none")
        );
        out.push_str("series_id,window_index,position,global_time_index,score,label\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                p.series_id,
                p.window_id,
                p.position,
                p.global_time_index,
                p.score,
                p.label.as_str()
            );
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let hash = check_csv_preamble(&text, "scores", path)?;
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let mut points = Vec::new();
        for rec in rdr.deserialize::<(String, usize, usize, usize, f64, Label)>() {
            let (series_id, window_id, position, global_time_index, score, label) = rec?;
            points.push(ScorePoint {
                series_id,
                window_id,
                position,
                global_time_index,
                score,
                label,
            });
        }
        Ok(ScoreSeries {
            points,
            config_hash: (hash != "none").then_some(hash),
        })
    }
}

fn check_model_pair(model: &EncDecModel, gm: &GaussianErrorModel) -> Result<()> {
    if model.m != gm.dims() {
        return Err(Error::DimensionMismatch(format!(
            "model has m={} but error model has m={}",
            model.m,
            gm.dims()
        )));
    }
    Ok(())
}

/// Reconstruction error vectors of every window, pooled in window order.
pub fn collect_errors(model: &EncDecModel, windows: &[Window], mode: DecodeMode) -> Result<Vec<ErrorVector>> {
    let per_window: Vec<Vec<ErrorVector>> = windows
        .par_iter()
        .map(|w| error_vectors(w, &model.reconstruct(&w.values, mode)?))
        .collect::<Result<_>>()?;
    Ok(per_window.into_iter().flatten().collect())
}

/// Reconstructs every window and scores each point. Output is in window
/// order, then position order.
pub fn score_windows(
    model: &EncDecModel,
    gm: &GaussianErrorModel,
    windows: &[Window],
    mode: DecodeMode,
) -> Result<ScoreSeries> {
    check_model_pair(model, gm)?;
    let per_window: Vec<Vec<ScorePoint>> = windows
        .par_iter()
        .map(|w| {
            let r = model.reconstruct(&w.values, mode)?;
            error_vectors(w, &r)?
                .into_iter()
                .map(|ev| {
                    Ok(ScorePoint {
                        series_id: w.series_id.clone(),
                        window_id: w.id,
                        position: ev.position,
                        global_time_index: w.start + ev.position,
                        score: anomaly_score(gm, &ev.e)?,
                        label: w.label,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ScoreSeries {
        points: per_window.into_iter().flatten().collect(),
        config_hash: None,
    })
}
