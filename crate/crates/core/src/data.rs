//! Series ingestion and window preparation: CSV loading, downsampling,
//! windowing with label propagation, normalization, first-PC reduction and
//! the six-way dataset split.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{leading_pc, prng_stream, Matrix, PrincipalComponent};

pub const PREPARED_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

impl Label {
    pub fn is_anomalous(self) -> bool {
        self == Label::Anomalous
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Anomalous => "anomalous",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "normal" => Some(Label::Normal),
            "anomalous" => Some(Label::Anomalous),
            _ => None,
        }
    }
}

/// Raw `T×m` series with optional per-point anomaly labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    pub series_id: String,
    pub values: Matrix,
    pub labels: Option<Vec<bool>>,
}

/// Half-open anomalous range `[start, end)`, optionally bound to one series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub series_id: Option<String>,
    pub start: usize,
    pub end: usize,
}

impl TimeSeriesFrame {
    pub fn new(series_id: impl Into<String>, values: Matrix) -> Self {
        TimeSeriesFrame {
            series_id: series_id.into(),
            values,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.values.cols()
    }

    /// Marks every point inside the intervals that apply to this series.
    pub fn apply_intervals(&mut self, intervals: &[Interval]) -> Result<()> {
        let t = self.len();
        let labels = self.labels.get_or_insert_with(|| vec![false; t]);
        for iv in intervals {
            if iv.series_id.as_deref().is_some_and(|s| s != self.series_id) {
                continue;
            }
            if iv.start >= iv.end || iv.end > t {
                return Err(Error::InvalidConfig(format!(
                    "interval [{}, {}) is empty or outside series `{}` of length {t}",
                    iv.start, iv.end, self.series_id
                )));
            }
            labels[iv.start..iv.end].iter_mut().for_each(|l| *l = true);
        }
        Ok(())
    }

    pub fn point_labels(&self) -> Vec<bool> {
        self.labels.clone().unwrap_or_else(|| vec![false; self.len()])
    }

    /// Maximal runs of anomalous points as half-open intervals.
    pub fn anomalous_intervals(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let Some(labels) = &self.labels else {
            return out;
        };
        let mut start = None;
        for (i, &l) in labels.iter().enumerate() {
            match (l, start) {
                (true, None) => start = Some(i),
                (false, Some(s)) => {
                    out.push((s, i));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            out.push((s, labels.len()));
        }
        out
    }

    /// Keeps only the given columns, in order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<TimeSeriesFrame> {
        let m = self.dims();
        if let Some(bad) = channels.iter().find(|&&c| c >= m) {
            return Err(Error::InvalidConfig(format!(
                "channel {bad} requested from series `{}` with {m} columns",
                self.series_id
            )));
        }
        let t = self.len();
        let mut data = Vec::with_capacity(t * channels.len());
        for r in self.values.row_iter() {
            data.extend(channels.iter().map(|&c| r[c]));
        }
        Ok(TimeSeriesFrame {
            series_id: self.series_id.clone(),
            values: Matrix::from_vec(t, channels.len(), data)?,
            labels: self.labels.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    /// Comma when the line contains one, whitespace otherwise.
    #[default]
    Auto,
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default)]
    pub delimiter: Delimiter,
    /// `None` detects a header from a non-numeric first row.
    #[serde(default)]
    pub has_header: Option<bool>,
    /// Columns to keep; all when `None`.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
}

fn split_fields(line: &str, delim: Delimiter) -> Vec<&str> {
    let comma = match delim {
        Delimiter::Comma => true,
        Delimiter::Whitespace => false,
        Delimiter::Auto => line.contains(','),
    };
    if comma {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads a numeric series: one row per timestep, one column per channel.
/// Blank lines and lines starting with `#` are skipped.
pub fn load_csv(path: impl AsRef<Path>, series_id: &str, schema: &CsvSchema) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut width: Option<usize> = None;
    let mut data = Vec::new();
    let mut rows = 0usize;
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields = split_fields(line, schema.delimiter);
        if first {
            first = false;
            let numeric = fields.iter().all(|f| f.parse::<f64>().is_ok());
            match schema.has_header {
                Some(true) => continue,
                None if !numeric => continue,
                _ => {}
            }
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("ragged row: {} fields, expected {w}", fields.len()),
                ))
            }
            _ => {}
        }
        for f in &fields {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("non-numeric cell `{f}`")))?;
            if !v.is_finite() {
                return Err(parse_error(path, lineno, format!("non-finite cell `{f}`")));
            }
            data.push(v);
        }
        rows += 1;
    }
    let width = width.ok_or_else(|| parse_error(path, 0, "no data rows"))?;
    let frame = TimeSeriesFrame::new(series_id, Matrix::from_vec(rows, width, data)?);
    match &schema.channels {
        Some(ch) => frame.select_channels(ch),
        None => Ok(frame),
    }
}

/// Writes a series as comma-separated rows without header.
pub fn write_series_csv(frame: &TimeSeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in frame.values.row_iter() {
        let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads anomaly intervals. Rows are `series_id,start,end` or `start,end`;
/// surrounding parentheses are tolerated, a non-numeric first row is a header.
pub fn load_intervals(path: impl AsRef<Path>) -> Result<Vec<Interval>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_intervals(&text, path)
}

pub fn parse_intervals(text: &str, origin: &Path) -> Result<Vec<Interval>> {
    let mut out = Vec::new();
    let mut first = true;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim().trim_start_matches('(').trim_end_matches(')');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let (series, s, e) = match fields.as_slice() {
            [s, e] => (None, *s, *e),
            [id, s, e] => (Some(id.to_string()), *s, *e),
            _ => {
                return Err(parse_error(
                    origin,
                    lineno,
                    format!("expected 2 or 3 fields, found {}", fields.len()),
                ))
            }
        };
        let parsed = (s.parse::<usize>(), e.parse::<usize>());
        let (Ok(start), Ok(end)) = parsed else {
            if first {
                first = false;
                continue;
            }
            return Err(parse_error(origin, lineno, format!("bad interval bounds `{s}`, `{e}`")));
        };
        first = false;
        if start >= end {
            return Err(parse_error(origin, lineno, format!("empty interval [{start}, {end})")));
        }
        out.push(Interval {
            series_id: series,
            start,
            end,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleMethod {
    /// Per-channel mean of each block.
    #[default]
    Mean,
    /// First point of each block.
    Decimate,
}

/// Collapses non-overlapping blocks of `k` points; an incomplete trailing
/// block is dropped. A block is anomalous if any of its points is.
pub fn downsample(frame: &TimeSeriesFrame, k: usize, method: DownsampleMethod) -> Result<TimeSeriesFrame> {
    if k == 0 {
        return Err(Error::InvalidConfig("downsample factor must be >= 1".into()));
    }
    let blocks = frame.len() / k;
    let m = frame.dims();
    let mut values = Matrix::zeros(blocks, m);
    for b in 0..blocks {
        let out = values.row_mut(b);
        match method {
            DownsampleMethod::Mean => {
                for i in b * k..(b + 1) * k {
                    for (o, v) in out.iter_mut().zip(frame.values.row(i)) {
                        *o += v;
                    }
                }
                out.iter_mut().for_each(|o| *o /= k as f64);
            }
            DownsampleMethod::Decimate => out.copy_from_slice(frame.values.row(b * k)),
        }
    }
    let labels = frame
        .labels
        .as_ref()
        .map(|l| (0..blocks).map(|b| l[b * k..(b + 1) * k].iter().any(|&x| x)).collect());
    Ok(TimeSeriesFrame {
        series_id: frame.series_id.clone(),
        values,
        labels,
    })
}

/// Fixed-length slice of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub id: usize,
    pub series_id: String,
    /// Index of the first point in the (downsampled) source series.
    pub start: usize,
    /// `L×m`, row `i` is `x(i+1)`.
    pub values: Matrix,
    pub label: Label,
}

impl AsRef<Matrix> for Window {
    fn as_ref(&self) -> &Matrix {
        &self.values
    }
}

impl Window {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> usize {
        self.values.cols()
    }
}

pub type WindowSet = Vec<Window>;

/// Windows starting at `0, step, 2·step, …` while they fit. A window is
/// anomalous iff any of its points is labeled anomalous. Ids count from 0.
pub fn make_windows(frame: &TimeSeriesFrame, length: usize, step: usize) -> Result<WindowSet> {
    if step == 0 || length == 0 {
        return Err(Error::InvalidConfig("window length and step must be >= 1".into()));
    }
    if length > frame.len() {
        return Err(Error::InvalidConfig(format!(
            "window length {length} exceeds series `{}` length {}",
            frame.series_id,
            frame.len()
        )));
    }
    let labels = frame.point_labels();
    let m = frame.dims();
    let mut out = Vec::new();
    let mut start = 0;
    while start + length <= frame.len() {
        let data = frame.values.as_slice()[start * m..(start + length) * m].to_vec();
        let anomalous = labels[start..start + length].iter().any(|&l| l);
        out.push(Window {
            id: out.len(),
            series_id: frame.series_id.clone(),
            start,
            values: Matrix::from_vec(length, m, data)?,
            label: if anomalous { Label::Anomalous } else { Label::Normal },
        });
        start += step;
    }
    Ok(out)
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels with (near) zero spread; these are centered but not scaled.
    pub constant: Vec<bool>,
}

impl NormalizationStats {
    /// Fits on every point of the given windows (intended: s_N only).
    pub fn fit(windows: &[Window]) -> Result<Self> {
        let first = windows
            .first()
            .ok_or_else(|| Error::EmptySubset("cannot fit normalization on no windows".into()))?;
        let m = first.dims();
        let mut n = 0usize;
        let mut mean = vec![0.0; m];
        for w in windows {
            for r in w.values.row_iter() {
                mean.iter_mut().zip(r).for_each(|(a, x)| *a += x);
                n += 1;
            }
        }
        mean.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; m];
        for w in windows {
            for r in w.values.row_iter() {
                for j in 0..m {
                    var[j] += (r[j] - mean[j]).powi(2);
                }
            }
        }
        let mut std = Vec::with_capacity(m);
        let mut constant = Vec::with_capacity(m);
        for (j, v) in var.iter().enumerate() {
            let sd = (v / n as f64).sqrt();
            let flat = !(sd > 1e-12 * (1.0 + mean[j].abs()));
            if flat {
                log::warn!("channel {j} is constant on the fit set; passing it through unscaled");
            }
            constant.push(flat);
            std.push(if flat { 1.0 } else { sd });
        }
        Ok(NormalizationStats { mean, std, constant })
    }

    pub fn apply(&self, values: &Matrix) -> Result<Matrix> {
        self.map(values, |x, mu, sd| (x - mu) / sd)
    }

    pub fn invert(&self, values: &Matrix) -> Result<Matrix> {
        self.map(values, |z, mu, sd| z * sd + mu)
    }

    fn map(&self, values: &Matrix, f: impl Fn(f64, f64, f64) -> f64) -> Result<Matrix> {
        let m = self.mean.len();
        if values.cols() != m {
            return Err(Error::DimensionMismatch(format!(
                "normalization for {m} channels applied to {} columns",
                values.cols()
            )));
        }
        let mut out = values.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = f(*v, self.mean[j], self.std[j]);
            }
        }
        Ok(out)
    }

    pub fn apply_window(&self, w: &Window) -> Result<Window> {
        Ok(Window {
            values: self.apply(&w.values)?,
            ..w.clone()
        })
    }
}

/// First principal component of all points in `windows`.
pub fn fit_first_pc(windows: &[Window]) -> Result<PrincipalComponent> {
    let m = windows
        .first()
        .ok_or_else(|| Error::EmptySubset("cannot fit PCA on no windows".into()))?
        .dims();
    let mut data = Vec::new();
    for w in windows {
        data.extend_from_slice(w.values.as_slice());
    }
    let n = data.len() / m;
    leading_pc(&Matrix::from_vec(n, m, data)?)
}

fn project_rows(values: &Matrix, pc: &PrincipalComponent) -> Result<Matrix> {
    if values.cols() != pc.direction.len() {
        return Err(Error::DimensionMismatch(format!(
            "principal component of dimension {} applied to {} columns",
            pc.direction.len(),
            values.cols()
        )));
    }
    let projected = values.row_iter().map(|r| pc.project(r)).collect();
    Matrix::from_vec(values.rows(), 1, projected)
}

/// Projects every point onto the component, giving a univariate series.
pub fn reduce_to_first_pc(frame: &TimeSeriesFrame, pc: &PrincipalComponent) -> Result<TimeSeriesFrame> {
    Ok(TimeSeriesFrame {
        series_id: frame.series_id.clone(),
        values: project_rows(&frame.values, pc)?,
        labels: frame.labels.clone(),
    })
}

pub fn reduce_window_to_first_pc(w: &Window, pc: &PrincipalComponent) -> Result<Window> {
    Ok(Window {
        values: project_rows(&w.values, pc)?,
        ..w.clone()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    /// s_N, v_N1, v_N2, t_N
    pub normal: [f64; 4],
    /// v_A, t_A
    pub anomalous: [f64; 2],
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            normal: [0.5, 0.2, 0.15, 0.15],
            anomalous: [0.5, 0.5],
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("normal", &self.normal[..]), ("anomalous", &self.anomalous[..])] {
            if r.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} split ratios must be >= 0")));
            }
            let sum: f64 = r.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidConfig(format!(
                    "{name} split ratios sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub s_n: WindowSet,
    pub v_n1: WindowSet,
    pub v_n2: WindowSet,
    pub t_n: WindowSet,
    pub v_a: WindowSet,
    pub t_a: WindowSet,
    pub ratios: SplitRatios,
    pub seed: u64,
}

/// Which downstream workflow a split must support.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRequirement {
    /// Threshold fit on v_N2 ∪ v_A.
    Supervised,
    /// Threshold from v_N1 scores only.
    Unsupervised,
}

fn partition<T>(items: Vec<T>, ratios: &[f64]) -> Vec<Vec<T>> {
    let n = items.len();
    let mut bounds = Vec::with_capacity(ratios.len());
    let mut acc = 0.0;
    for (k, r) in ratios.iter().enumerate() {
        acc += r;
        let b = if k + 1 == ratios.len() {
            n
        } else {
            ((acc * n as f64).round() as usize).min(n)
        };
        bounds.push(b);
    }
    let mut out: Vec<Vec<T>> = Vec::with_capacity(ratios.len());
    let mut iter = items.into_iter();
    let mut prev = 0;
    for b in bounds {
        let b = b.max(prev);
        out.push(iter.by_ref().take(b - prev).collect());
        prev = b;
    }
    out
}

/// Seeded shuffle followed by contiguous partition by the ratios.
pub fn split(normal: WindowSet, anomalous: WindowSet, ratios: &SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    if normal.iter().any(|w| w.label.is_anomalous()) {
        return Err(Error::InvalidConfig("anomalous window passed as normal".into()));
    }
    if anomalous.iter().any(|w| !w.label.is_anomalous()) {
        return Err(Error::InvalidConfig("normal window passed as anomalous".into()));
    }
    let mut normal = normal;
    let mut anomalous = anomalous;
    normal.shuffle(&mut prng_stream(seed, 0));
    anomalous.shuffle(&mut prng_stream(seed, 1));
    let mut n = partition(normal, &ratios.normal).into_iter();
    let mut a = partition(anomalous, &ratios.anomalous).into_iter();
    Ok(DatasetSplit {
        s_n: n.next().unwrap_or_default(),
        v_n1: n.next().unwrap_or_default(),
        v_n2: n.next().unwrap_or_default(),
        t_n: n.next().unwrap_or_default(),
        v_a: a.next().unwrap_or_default(),
        t_a: a.next().unwrap_or_default(),
        ratios: ratios.clone(),
        seed,
    })
}

impl DatasetSplit {
    /// Named subsets in canonical order.
    pub fn subsets(&self) -> [(&'static str, &WindowSet); 6] {
        [
            ("s_n", &self.s_n),
            ("v_n1", &self.v_n1),
            ("v_n2", &self.v_n2),
            ("t_n", &self.t_n),
            ("v_a", &self.v_a),
            ("t_a", &self.t_a),
        ]
    }

    pub fn subsets_mut(&mut self) -> [&mut WindowSet; 6] {
        [
            &mut self.s_n,
            &mut self.v_n1,
            &mut self.v_n2,
            &mut self.t_n,
            &mut self.v_a,
            &mut self.t_a,
        ]
    }

    /// Checks the subsets a workflow cannot do without.
    pub fn require(&self, req: SplitRequirement) -> Result<()> {
        let need = |set: &WindowSet, name: &str, why: &str| {
            if set.is_empty() {
                Err(Error::EmptySubset(format!("{name} is empty but {why}")))
            } else {
                Ok(())
            }
        };
        need(&self.s_n, "s_N", "the model is trained on it")?;
        need(&self.v_n1, "v_N1", "the error model is fit on it")?;
        if req == SplitRequirement::Supervised {
            need(&self.v_n2, "v_N2", "supervised thresholding needs normal validation windows")?;
            need(&self.v_a, "v_A", "supervised thresholding needs anomalous validation windows")?;
        }
        Ok(())
    }

    pub fn membership(&self) -> SplitMembership {
        let ids = |s: &WindowSet| s.iter().map(|w| w.id).collect();
        SplitMembership {
            s_n: ids(&self.s_n),
            v_n1: ids(&self.v_n1),
            v_n2: ids(&self.v_n2),
            t_n: ids(&self.t_n),
            v_a: ids(&self.v_a),
            t_a: ids(&self.t_a),
        }
    }
}

/// Window ids per subset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitMembership {
    pub s_n: Vec<usize>,
    pub v_n1: Vec<usize>,
    pub v_n2: Vec<usize>,
    pub t_n: Vec<usize>,
    pub v_a: Vec<usize>,
    pub t_a: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Periodicity {
    Periodic,
    Aperiodic,
    QuasiPeriodic,
}

/// Dataset summary in the shape of a results-table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub predictable: bool,
    pub dimensions: usize,
    pub periodicity: Periodicity,
    pub original_sequences: usize,
    pub normal_subsequences: usize,
    pub anomalous_subsequences: usize,
}

/// Contents of `manifest.json` in a prepared-dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub dataset: DatasetManifest,
    pub window_length: usize,
    pub window_step: usize,
    pub downsample: usize,
    /// Model input dimension after optional PCA.
    pub m: usize,
    pub normalization: Option<NormalizationStats>,
    pub principal_component: Option<PrincipalComponent>,
    pub window_count: usize,
}

/// Contents of `split.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub membership: SplitMembership,
}

/// A prepared-dataset directory: `windows.csv`, `manifest.json`, `split.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDataset {
    pub manifest: PreparedManifest,
    pub split: DatasetSplit,
}

pub const WINDOWS_FILE: &str = "windows.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";

fn csv_preamble(kind: &str, hash: &str) -> String {
    format!("# encdec-ad {kind} format_version={PREPARED_FORMAT_VERSION} config_hash={hash}\n")
}

/// Reads and checks the `# encdec-ad <kind> format_version=.. config_hash=..` line.
pub(crate) fn check_csv_preamble(text: &str, kind: &str, path: &Path) -> Result<String> {
    let first = text.lines().next().unwrap_or_default();
    let mut version = None;
    let mut hash = None;
    if first.starts_with(&format!("# encdec-ad {kind} ")) {
        for tok in first.split_whitespace() {
            if let Some(v) = tok.strip_prefix("format_version=") {
                version = v.parse::<u32>().ok();
            }
            if let Some(h) = tok.strip_prefix("config_hash=") {
                hash = Some(h.to_string());
            }
        }
    }
    match (version, hash) {
        (Some(PREPARED_FORMAT_VERSION), Some(h)) => Ok(h),
        (Some(v), _) => Err(Error::ArtifactMismatch(format!(
            "{}: format_version {v}, supported {PREPARED_FORMAT_VERSION}",
            path.display()
        ))),
        _ => Err(Error::ArtifactMismatch(format!(
            "{}: missing `# encdec-ad {kind}` version line",
            path.display()
        ))),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl PreparedDataset {
    /// All windows ordered by id.
    pub fn windows(&self) -> Vec<&Window> {
        let mut all: Vec<&Window> = self.split.subsets().iter().flat_map(|(_, s)| s.iter()).collect();
        all.sort_by_key(|w| w.id);
        all
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let hash = &self.manifest.config_hash;

        let path = dir.join(WINDOWS_FILE);
        let mut text = csv_preamble("windows", hash);
        let m = self.manifest.m;
        let mut header = String::from("window_id,series_id,start,label,position");
        for j in 0..m {
            let _ = write!(header, ",v{j}");
        }
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        wtr.write_record(header.split(','))?;
        for w in self.windows() {
            for (pos, row) in w.values.row_iter().enumerate() {
                let mut rec = vec![
                    w.id.to_string(),
                    w.series_id.clone(),
                    w.start.to_string(),
                    w.label.as_str().to_string(),
                    pos.to_string(),
                ];
                rec.extend(row.iter().map(|v| v.to_string()));
                wtr.write_record(&rec)?;
            }
        }
        let body = wtr.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
        text.push_str(&String::from_utf8_lossy(&body));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        write_json(&dir.join(MANIFEST_FILE), &self.manifest)?;
        write_json(
            &dir.join(SPLIT_FILE),
            &SplitFile {
                format_version: PREPARED_FORMAT_VERSION,
                config_hash: hash.clone(),
                seed: self.split.seed,
                ratios: self.split.ratios.clone(),
                membership: self.split.membership(),
            },
        )
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: PreparedManifest = read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.format_version != PREPARED_FORMAT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "manifest format_version {}",
                manifest.format_version
            )));
        }
        let split_file: SplitFile = read_json(&dir.join(SPLIT_FILE))?;
        if split_file.config_hash != manifest.config_hash {
            return Err(Error::ArtifactMismatch(
                "split.json and manifest.json come from different configs".into(),
            ));
        }
        let path = dir.join(WINDOWS_FILE);
        let windows = read_windows_csv(&path, &manifest)?;

        let take = |ids: &[usize]| -> Result<WindowSet> {
            ids.iter()
                .map(|id| {
                    windows
                        .get(*id)
                        .and_then(|w| w.clone())
                        .ok_or_else(|| Error::ArtifactMismatch(format!("split refers to unknown window {id}")))
                })
                .collect()
        };
        let ms = &split_file.membership;
        let split = DatasetSplit {
            s_n: take(&ms.s_n)?,
            v_n1: take(&ms.v_n1)?,
            v_n2: take(&ms.v_n2)?,
            t_n: take(&ms.t_n)?,
            v_a: take(&ms.v_a)?,
            t_a: take(&ms.t_a)?,
            ratios: split_file.ratios,
            seed: split_file.seed,
        };
        Ok(PreparedDataset { manifest, split })
    }
}

fn read_windows_csv(path: &Path, manifest: &PreparedManifest) -> Result<Vec<Option<Window>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let hash = check_csv_preamble(&text, "windows", path)?;
    if hash != manifest.config_hash {
        return Err(Error::ArtifactMismatch(format!(
            "{} has config hash {hash}, manifest has {}",
            path.display(),
            manifest.config_hash
        )));
    }
    let (l, m) = (manifest.window_length, manifest.m);
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut slots: Vec<Option<(String, usize, Label, Vec<f64>)>> = vec![None; manifest.window_count];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |msg: String| parse_error(path, line, msg);
        if rec.len() != 5 + m {
            return Err(bad(format!("{} fields, expected {}", rec.len(), 5 + m)));
        }
        let id: usize = rec[0].parse().map_err(|_| bad("bad window_id".into()))?;
        let start: usize = rec[2].parse().map_err(|_| bad("bad start".into()))?;
        let label = Label::parse(&rec[3]).ok_or_else(|| bad(format!("bad label `{}`", &rec[3])))?;
        let pos: usize = rec[4].parse().map_err(|_| bad("bad position".into()))?;
        let slot = slots
            .get_mut(id)
            .ok_or_else(|| bad(format!("window id {id} beyond window_count")))?;
        let entry = slot.get_or_insert_with(|| (rec[1].to_string(), start, label, Vec::with_capacity(l * m)));
        if pos * m != entry.3.len() {
            return Err(bad(format!("window {id}: position {pos} out of order")));
        }
        for cell in rec.iter().skip(5) {
            entry.3.push(cell.parse().map_err(|_| bad(format!("non-numeric value `{cell}`")))?);
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(id, s)| {
            s.map(|(series_id, start, label, data)| {
                Ok(Window {
                    id,
                    series_id,
                    start,
                    values: Matrix::from_vec(l, m, data)?,
                    label,
                })
            })
            .transpose()
        })
        .collect()
}

/// Resolves `path` against `root` unless it is absolute.
pub fn resolve_path(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(values: &[f64]) -> TimeSeriesFrame {
        TimeSeriesFrame::new("s", Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap())
    }

    fn col(f: &TimeSeriesFrame) -> Vec<f64> {
        f.values.as_slice().to_vec()
    }

    #[test]
    fn downsample_examples() {
        let f = frame(&[1., 2., 3., 4., 5., 6.]);
        assert_eq!(col(&downsample(&f, 2, DownsampleMethod::Mean).unwrap()), vec![1.5, 3.5, 5.5]);
        let f = frame(&[1., 2., 3., 4., 5.]);
        assert_eq!(col(&downsample(&f, 2, DownsampleMethod::Mean).unwrap()), vec![1.5, 3.5]);
        assert_eq!(downsample(&f, 1, DownsampleMethod::Mean).unwrap(), f);
        assert_eq!(col(&downsample(&f, 2, DownsampleMethod::Decimate).unwrap()), vec![1., 3.]);
        assert!(downsample(&f, 0, DownsampleMethod::Mean).is_err());
    }

    #[test]
    fn downsample_labels_any_member() {
        let mut f = frame(&[0.; 8]);
        f.apply_intervals(&[Interval { series_id: None, start: 3, end: 4 }]).unwrap();
        let d = downsample(&f, 2, DownsampleMethod::Mean).unwrap();
        assert_eq!(d.labels.unwrap(), vec![false, true, false, false]);
    }

    #[test]
    fn window_counts() {
        let f = frame(&[0.; 10]);
        let w = make_windows(&f, 3, 3).unwrap();
        assert_eq!(w.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 3, 6]);
        assert_eq!(make_windows(&f, 3, 1).unwrap().len(), 8);
        assert!(make_windows(&f, 11, 1).is_err());
        assert!(make_windows(&f, 3, 0).is_err());
    }

    #[test]
    fn window_label_propagation() {
        let mut f = frame(&[0.; 12]);
        f.apply_intervals(&[Interval { series_id: None, start: 5, end: 7 }]).unwrap();
        let ws = make_windows(&f, 4, 4).unwrap();
        let labels: Vec<Label> = ws.iter().map(|w| w.label).collect();
        assert_eq!(labels, vec![Label::Normal, Label::Anomalous, Label::Normal]);
        // other-series intervals do not apply
        let mut g = frame(&[0.; 12]);
        g.apply_intervals(&[Interval { series_id: Some("other".into()), start: 0, end: 12 }]).unwrap();
        assert!(make_windows(&g, 4, 4).unwrap().iter().all(|w| w.label == Label::Normal));
        assert!(frame(&[0.; 4])
            .apply_intervals(&[Interval { series_id: None, start: 2, end: 9 }])
            .is_err());
    }

    #[test]
    fn intervals_parse_half_open() {
        let iv = parse_intervals("(10,20)\n", Path::new("x")).unwrap();
        let mut f = frame(&[0.; 30]);
        f.apply_intervals(&iv).unwrap();
        let labels = f.point_labels();
        assert!(!labels[9] && labels[10] && labels[19] && !labels[20]);
        assert_eq!(f.anomalous_intervals(), vec![(10, 20)]);

        let iv = parse_intervals("series_id,start,end\na,1,3\nb,4,6\n", Path::new("x")).unwrap();
        assert_eq!(iv.len(), 2);
        assert_eq!(iv[1].series_id.as_deref(), Some("b"));
        assert!(parse_intervals("1,2\nx,y\n", Path::new("x")).is_err());
        assert!(parse_intervals("5,5\n", Path::new("x")).is_err());
    }

    #[test]
    fn normalization_fit_and_invert() {
        let vals: Vec<f64> = (0..40).map(|i| 5.0 + 2.0 * if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let f = frame(&vals);
        let ws = make_windows(&f, 10, 10).unwrap();
        let stats = NormalizationStats::fit(&ws).unwrap();
        assert!((stats.mean[0] - 5.0).abs() < 1e-12 && (stats.std[0] - 2.0).abs() < 1e-12);
        let z = stats.apply(&f.values).unwrap();
        let mean = z.as_slice().iter().sum::<f64>() / 40.0;
        let sd = (z.as_slice().iter().map(|v| v * v).sum::<f64>() / 40.0).sqrt();
        assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        let back = stats.invert(&z).unwrap();
        for (a, b) in back.as_slice().iter().zip(f.values.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        // shifted test data keeps its offset
        let shifted: Vec<f64> = vals.iter().map(|v| v + 3.0).collect();
        let zt = stats.apply(&frame(&shifted).values).unwrap();
        let mt = zt.as_slice().iter().sum::<f64>() / 40.0;
        assert!((mt - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_passes_through() {
        let ws = make_windows(&frame(&[3.0; 10]), 5, 5).unwrap();
        let stats = NormalizationStats::fit(&ws).unwrap();
        assert!(stats.constant[0]);
        assert_eq!(stats.apply(&ws[0].values).unwrap().as_slice(), &[0.0; 5]);
    }

    #[test]
    fn first_pc_reduction() {
        let vals: Vec<f64> = (0..20).flat_map(|i| [i as f64, 2.0 * i as f64]).collect();
        let f = TimeSeriesFrame::new("s", Matrix::from_vec(20, 2, vals).unwrap());
        let ws = make_windows(&f, 5, 5).unwrap();
        let pc = fit_first_pc(&ws).unwrap();
        assert!((pc.explained_variance_ratio - 1.0).abs() < 1e-12);
        let r = reduce_to_first_pc(&f, &pc).unwrap();
        assert_eq!(r.dims(), 1);
        // zero residual: reconstruct points from the projection
        for (i, row) in f.values.row_iter().enumerate() {
            let z = r.values.get(i, 0);
            for j in 0..2 {
                assert!((pc.mean[j] + z * pc.direction[j] - row[j]).abs() < 1e-9);
            }
        }
        assert!(pc.project(&pc.mean).abs() < 1e-15);
        assert!(reduce_to_first_pc(&frame(&[1.0, 2.0]), &pc).is_err());
    }

    fn labelled(n: usize, label: Label, offset: usize) -> WindowSet {
        (0..n)
            .map(|i| Window {
                id: offset + i,
                series_id: "s".into(),
                start: i,
                values: Matrix::zeros(2, 1),
                label,
            })
            .collect()
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ratios = SplitRatios { normal: [0.25; 4], anomalous: [0.5, 0.5] };
        let s = split(labelled(8, Label::Normal, 0), labelled(4, Label::Anomalous, 8), &ratios, 3).unwrap();
        for (_, set) in s.subsets() {
            assert_eq!(set.len(), 2);
        }
        let again = split(labelled(8, Label::Normal, 0), labelled(4, Label::Anomalous, 8), &ratios, 3).unwrap();
        assert_eq!(s, again);
        let mut ids: Vec<usize> = s.subsets().iter().flat_map(|(_, set)| set.iter().map(|w| w.id)).collect();
        ids.sort();
        assert_eq!(ids, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn split_validation() {
        let bad = SplitRatios { normal: [0.5, 0.5, 0.5, 0.0], anomalous: [0.5, 0.5] };
        assert!(split(vec![], vec![], &bad, 0).is_err());
        assert!(split(labelled(2, Label::Anomalous, 0), vec![], &SplitRatios::default(), 0).is_err());
        let ecg = SplitRatios { normal: [0.5, 0.25, 0.0, 0.25], anomalous: [0.0, 1.0] };
        let s = split(labelled(8, Label::Normal, 0), labelled(1, Label::Anomalous, 8), &ecg, 0).unwrap();
        assert!(s.v_n2.is_empty() && s.v_a.is_empty() && s.t_a.len() == 1);
        assert!(s.require(SplitRequirement::Unsupervised).is_ok());
        assert!(matches!(s.require(SplitRequirement::Supervised), Err(Error::EmptySubset(_))));
    }
}
