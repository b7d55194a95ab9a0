//! LSTM encoder-decoder reconstruction model.
//!
//! The encoder folds an `L×m` window from `x(1)` to `x(L)`. Its final state
//! (hidden and cell memory) seeds the decoder, which emits the window in
//! reverse order: the first emission `x'(L)` comes straight from the seeded
//! state through the linear output layer, then each decoder step consumes a
//! point (the true `x(i)` when teacher forcing, the previous emission
//! otherwise) and emits `x'(i-1)`.
//!
//! Cell equations (standard LSTM, forget gate, no peepholes):
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)    f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g) o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g            h' = o ⊙ tanh(c')
//! ```

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_from, prng, Matrix};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const INIT_STDDEV: f64 = 0.1;
const INIT_FORGET_BIAS: f64 = 1.0;

/// Gate order used for every `[GateParams; 4]`.
pub const GATE_NAMES: [&str; 4] = ["input_gate", "forget_gate", "candidate", "output_gate"];
const INPUT: usize = 0;
const FORGET: usize = 1;
const CANDIDATE: usize = 2;
const OUTPUT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `c×m`
    pub input: Matrix,
    /// `c×c`
    pub recurrent: Matrix,
    pub bias: Vec<f64>,
}

impl GateParams {
    fn zeros(c: usize, m: usize) -> Self {
        GateParams {
            input: Matrix::zeros(c, m),
            recurrent: Matrix::zeros(c, c),
            bias: vec![0.0; c],
        }
    }

    #[inline]
    fn preactivation(&self, x: &[f64], h: &[f64], out: &mut [f64]) {
        let m = x.len();
        let c = h.len();
        let w = self.input.as_slice();
        let u = self.recurrent.as_slice();
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = self.bias[j];
            let wr = &w[j * m..(j + 1) * m];
            for k in 0..m {
                acc += wr[k] * x[k];
            }
            let ur = &u[j * c..(j + 1) * c];
            for k in 0..c {
                acc += ur[k] * h[k];
            }
            *o = acc;
        }
    }
}

/// Weights of one LSTM layer with `c` units over `m`-dimensional inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub gates: [GateParams; 4],
}

impl LstmParams {
    pub fn zeros(c: usize, m: usize) -> Self {
        LstmParams {
            gates: std::array::from_fn(|_| GateParams::zeros(c, m)),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.gates[0].bias.len()
    }

    pub fn input_size(&self) -> usize {
        self.gates[0].input.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(c: usize) -> Self {
        LstmState {
            h: vec![0.0; c],
            cell: vec![0.0; c],
        }
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Forward values of one cell step, kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn forward_step(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
    let c = h_prev.len();
    let mut pre = [vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c]];
    for (gate, out) in p.gates.iter().zip(pre.iter_mut()) {
        gate.preactivation(x, h_prev, out);
    }
    let [mut i, mut f, mut g, mut o] = pre;
    i.iter_mut().for_each(|v| *v = logistic(*v));
    f.iter_mut().for_each(|v| *v = logistic(*v));
    g.iter_mut().for_each(|v| *v = v.tanh());
    o.iter_mut().for_each(|v| *v = logistic(*v));
    let cell: Vec<f64> = (0..c).map(|j| f[j] * c_prev[j] + i[j] * g[j]).collect();
    let tanh_c: Vec<f64> = cell.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = (0..c).map(|j| o[j] * tanh_c[j]).collect();
    StepCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c: cell,
        tanh_c,
        h,
    }
}

/// Backpropagates `(dh, dc)` at a step's output into parameter gradients and
/// returns the gradient at the step's incoming state.
fn backward_step(
    p: &LstmParams,
    s: &StepCache,
    dh: &[f64],
    dc_in: &[f64],
    grad: &mut LstmParams,
) -> (Vec<f64>, Vec<f64>) {
    let c = dh.len();
    let m = s.x.len();
    let mut da = [vec![0.0; c], vec![0.0; c], vec![0.0; c], vec![0.0; c]];
    let mut dc_prev = vec![0.0; c];
    for j in 0..c {
        let d_o = dh[j] * s.tanh_c[j];
        let dc = dc_in[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
        let di = dc * s.g[j];
        let dg = dc * s.i[j];
        let df = dc * s.c_prev[j];
        dc_prev[j] = dc * s.f[j];
        da[INPUT][j] = di * s.i[j] * (1.0 - s.i[j]);
        da[FORGET][j] = df * s.f[j] * (1.0 - s.f[j]);
        da[CANDIDATE][j] = dg * (1.0 - s.g[j] * s.g[j]);
        da[OUTPUT][j] = d_o * s.o[j] * (1.0 - s.o[j]);
    }
    let mut dh_prev = vec![0.0; c];
    for (k, da_k) in da.iter().enumerate() {
        let gg = &mut grad.gates[k];
        let u = p.gates[k].recurrent.as_slice();
        let gw = gg.input.as_mut_slice();
        let gu = gg.recurrent.as_mut_slice();
        for j in 0..c {
            let a = da_k[j];
            if a == 0.0 {
                continue;
            }
            gg.bias[j] += a;
            for q in 0..m {
                gw[j * m + q] += a * s.x[q];
            }
            let ur = &u[j * c..(j + 1) * c];
            let gur = &mut gu[j * c..(j + 1) * c];
            for q in 0..c {
                gur[q] += a * s.h_prev[q];
                dh_prev[q] += ur[q] * a;
            }
        }
    }
    (dh_prev, dc_prev)
}

/// One LSTM cell step.
pub fn lstm_step(p: &LstmParams, x: &[f64], s: &LstmState) -> Result<LstmState> {
    let c = p.hidden_size();
    if x.len() != p.input_size() || s.h.len() != c || s.cell.len() != c {
        return Err(Error::DimensionMismatch(format!(
            "lstm_step: input {} / state ({}, {}) for cell with m={}, c={c}",
            x.len(),
            s.h.len(),
            s.cell.len(),
            p.input_size()
        )));
    }
    if x.iter().chain(&s.h).chain(&s.cell).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("lstm_step input".into()));
    }
    let out = forward_step(p, x, &s.h, &s.cell);
    Ok(LstmState {
        h: out.h,
        cell: out.c,
    })
}

/// Every learnable parameter of the encoder-decoder. Gradients and optimizer
/// moments reuse this shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    /// `c×m`; emissions are `wᵀ·h + b`.
    pub output_weight: Matrix,
    pub output_bias: Vec<f64>,
}

pub const BLOCK_COUNT: usize = 26;

impl Parameters {
    pub fn zeros(m: usize, c: usize) -> Self {
        Parameters {
            encoder: LstmParams::zeros(c, m),
            decoder: LstmParams::zeros(c, m),
            output_weight: Matrix::zeros(c, m),
            output_bias: vec![0.0; m],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Parameters::zeros(self.output_bias.len(), self.output_weight.rows())
    }

    /// Names of the parameter blocks in [`Parameters::blocks`] order.
    pub fn block_names() -> Vec<String> {
        let mut names = Vec::with_capacity(BLOCK_COUNT);
        for layer in ["encoder", "decoder"] {
            for gate in GATE_NAMES {
                for part in ["input", "recurrent", "bias"] {
                    names.push(format!("{layer}.{gate}.{part}"));
                }
            }
        }
        names.push("output.weight".into());
        names.push("output.bias".into());
        names
    }

    /// `(rows, cols)` of every block, in [`Parameters::blocks`] order.
    pub fn block_shapes(&self) -> Vec<(usize, usize)> {
        let m = self.output_bias.len();
        let c = self.output_weight.rows();
        let mut shapes = Vec::with_capacity(BLOCK_COUNT);
        for _ in 0..8 {
            shapes.extend([(c, m), (c, c), (c, 1)]);
        }
        shapes.push((c, m));
        shapes.push((m, 1));
        shapes
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(BLOCK_COUNT);
        for layer in [&self.encoder, &self.decoder] {
            for g in &layer.gates {
                out.push(g.input.as_slice());
                out.push(g.recurrent.as_slice());
                out.push(g.bias.as_slice());
            }
        }
        out.push(self.output_weight.as_slice());
        out.push(self.output_bias.as_slice());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(BLOCK_COUNT);
        for layer in [&mut self.encoder, &mut self.decoder] {
            for g in layer.gates.iter_mut() {
                out.push(g.input.as_mut_slice());
                out.push(g.recurrent.as_mut_slice());
                out.push(g.bias.as_mut_slice());
            }
        }
        out.push(self.output_weight.as_mut_slice());
        out.push(self.output_bias.as_mut_slice());
        out
    }

    /// Rebuilds parameters from blocks in [`Parameters::blocks`] order.
    pub fn from_blocks(m: usize, c: usize, blocks: &[Vec<f64>]) -> Result<Self> {
        let mut params = Parameters::zeros(m, c);
        if blocks.len() != BLOCK_COUNT {
            return Err(Error::ArtifactMismatch(format!(
                "{} parameter blocks, expected {BLOCK_COUNT}",
                blocks.len()
            )));
        }
        for ((dst, src), name) in params.blocks_mut().into_iter().zip(blocks).zip(Parameters::block_names()) {
            if dst.len() != src.len() {
                return Err(Error::ArtifactMismatch(format!(
                    "block `{name}` has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            dst.copy_from_slice(src);
        }
        Ok(params)
    }

    pub fn to_blocks(&self) -> Vec<Vec<f64>> {
        self.blocks().into_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn global_norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for b in self.blocks_mut() {
            b.iter_mut().for_each(|x| *x *= k);
        }
    }

    /// Name of the first block holding a non-finite value, if any.
    pub fn first_non_finite_block(&self) -> Option<String> {
        self.blocks()
            .iter()
            .position(|b| b.iter().any(|v| !v.is_finite()))
            .map(|i| Parameters::block_names().swap_remove(i))
    }
}

/// Summary of the training run that produced a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stop_reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncDecModel {
    pub m: usize,
    pub c: usize,
    pub window_length: usize,
    pub params: Parameters,
    pub init_seed: u64,
    pub config_hash: Option<String>,
    pub training: Option<TrainingSummary>,
}

/// Window reconstruction. `values` is in original time order, `trace` in the
/// order the decoder emitted it (`trace[k]` is `x'(L-k)`).
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub values: Matrix,
    pub trace: Matrix,
}

impl Reconstruction {
    fn from_trace(trace: Matrix) -> Self {
        let (l, m) = trace.shape();
        let mut values = Matrix::zeros(l, m);
        for i in 0..l {
            values.row_mut(i).copy_from_slice(trace.row(l - 1 - i));
        }
        Reconstruction { values, trace }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    TeacherForced,
    #[default]
    Autoregressive,
}

struct ForwardTrace {
    encoder: Vec<StepCache>,
    decoder: Vec<StepCache>,
    /// Decoder hidden state each emission was read from.
    hidden: Vec<Vec<f64>>,
    emissions: Matrix,
}

impl EncDecModel {
    /// Freshly initialized model: N(0, 0.1²) weights, forget-gate bias 1, other biases 0.
    pub fn new(m: usize, c: usize, window_length: usize, seed: u64) -> Result<Self> {
        if m == 0 || c == 0 || window_length == 0 {
            return Err(Error::InvalidConfig(format!(
                "model dimensions must be positive (m={m}, c={c}, L={window_length})"
            )));
        }
        let mut params = Parameters::zeros(m, c);
        let mut rng = prng(seed);
        for layer in [&mut params.encoder, &mut params.decoder] {
            for (k, g) in layer.gates.iter_mut().enumerate() {
                let n = g.input.as_slice().len();
                g.input
                    .as_mut_slice()
                    .copy_from_slice(&gaussian_from(&mut rng, n, INIT_STDDEV));
                let n = g.recurrent.as_slice().len();
                g.recurrent
                    .as_mut_slice()
                    .copy_from_slice(&gaussian_from(&mut rng, n, INIT_STDDEV));
                if k == FORGET {
                    g.bias.iter_mut().for_each(|b| *b = INIT_FORGET_BIAS);
                }
            }
        }
        let n = params.output_weight.as_slice().len();
        params
            .output_weight
            .as_mut_slice()
            .copy_from_slice(&gaussian_from(&mut rng, n, INIT_STDDEV));
        Ok(EncDecModel {
            m,
            c,
            window_length,
            params,
            init_seed: seed,
            config_hash: None,
            training: None,
        })
    }

    /// Model with every parameter zero.
    pub fn zeros(m: usize, c: usize, window_length: usize) -> Self {
        EncDecModel {
            m,
            c,
            window_length,
            params: Parameters::zeros(m, c),
            init_seed: 0,
            config_hash: None,
            training: None,
        }
    }

    fn check_window(&self, w: &Matrix) -> Result<()> {
        if w.shape() != (self.window_length, self.m) {
            return Err(Error::DimensionMismatch(format!(
                "window is {}x{}, model expects {}x{}",
                w.rows(),
                w.cols(),
                self.window_length,
                self.m
            )));
        }
        Ok(())
    }

    fn check_state(&self, s: &LstmState) -> Result<()> {
        if s.h.len() != self.c || s.cell.len() != self.c {
            return Err(Error::DimensionMismatch(format!(
                "state of size ({}, {}) for c={}",
                s.h.len(),
                s.cell.len(),
                self.c
            )));
        }
        Ok(())
    }

    fn emit(&self, h: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.params.output_bias);
        let w = self.params.output_weight.as_slice();
        for (j, hj) in h.iter().enumerate() {
            let row = &w[j * self.m..(j + 1) * self.m];
            for (o, wjn) in out.iter_mut().zip(row) {
                *o += wjn * hj;
            }
        }
    }

    fn encode_cached(&self, w: &Matrix) -> Vec<StepCache> {
        let mut caches: Vec<StepCache> = Vec::with_capacity(w.rows());
        let zero = vec![0.0; self.c];
        for x in w.row_iter() {
            let step = match caches.last() {
                Some(prev) => forward_step(&self.params.encoder, x, &prev.h, &prev.c),
                None => forward_step(&self.params.encoder, x, &zero, &zero),
            };
            caches.push(step);
        }
        caches
    }

    /// Runs the decoder from `init`. When `teacher` is given the decoder
    /// consumes its rows in reverse, otherwise its own emissions.
    fn decode_cached(
        &self,
        init: &LstmState,
        len: usize,
        teacher: Option<&Matrix>,
    ) -> (Vec<StepCache>, Vec<Vec<f64>>, Matrix) {
        let mut emissions = Matrix::zeros(len, self.m);
        let mut caches = Vec::with_capacity(len.saturating_sub(1));
        let mut hidden = Vec::with_capacity(len);
        let mut h = init.h.clone();
        let mut cell = init.cell.clone();
        self.emit(&h, emissions.row_mut(0));
        hidden.push(h.clone());
        for k in 1..len {
            let input = match teacher {
                Some(w) => w.row(len - k).to_vec(),
                None => emissions.row(k - 1).to_vec(),
            };
            let step = forward_step(&self.params.decoder, &input, &h, &cell);
            h = step.h.clone();
            cell = step.c.clone();
            self.emit(&h, emissions.row_mut(k));
            hidden.push(h.clone());
            caches.push(step);
        }
        (caches, hidden, emissions)
    }

    fn forward_teacher_forced(&self, w: &Matrix) -> ForwardTrace {
        let encoder = self.encode_cached(w);
        let init = encoder
            .last()
            .map(|s| LstmState {
                h: s.h.clone(),
                cell: s.c.clone(),
            })
            .unwrap_or_else(|| LstmState::zeros(self.c));
        let (decoder, hidden, emissions) = self.decode_cached(&init, w.rows(), Some(w));
        ForwardTrace {
            encoder,
            decoder,
            hidden,
            emissions,
        }
    }

    /// Final encoder state after folding the window from the zero state.
    pub fn encode(&self, w: &Matrix) -> Result<LstmState> {
        self.check_window(w)?;
        let last = self.encode_cached(w).pop().expect("window length >= 1");
        Ok(LstmState {
            h: last.h,
            cell: last.c,
        })
    }

    pub fn decode_teacher_forced(&self, w: &Matrix, enc_final: &LstmState) -> Result<Reconstruction> {
        self.check_window(w)?;
        self.check_state(enc_final)?;
        let (_, _, trace) = self.decode_cached(enc_final, w.rows(), Some(w));
        Ok(Reconstruction::from_trace(trace))
    }

    pub fn decode_autoregressive(&self, enc_final: &LstmState, len: usize) -> Result<Reconstruction> {
        self.check_state(enc_final)?;
        if len == 0 {
            return Err(Error::DimensionMismatch("decode length must be >= 1".into()));
        }
        let (_, _, trace) = self.decode_cached(enc_final, len, None);
        Ok(Reconstruction::from_trace(trace))
    }

    pub fn reconstruct(&self, w: &Matrix, mode: DecodeMode) -> Result<Reconstruction> {
        let state = self.encode(w)?;
        match mode {
            DecodeMode::TeacherForced => self.decode_teacher_forced(w, &state),
            DecodeMode::Autoregressive => self.decode_autoregressive(&state, w.rows()),
        }
    }

    /// Sum of squared teacher-forced reconstruction errors over the window.
    pub fn window_loss(&self, w: &Matrix) -> Result<f64> {
        let r = self.reconstruct(w, DecodeMode::TeacherForced)?;
        Ok(squared_error(w, &r.values))
    }

    fn single_loss_and_gradient(&self, w: &Matrix) -> (f64, Parameters) {
        let l = w.rows();
        let fwd = self.forward_teacher_forced(w);
        let mut grad = self.params.zeros_like();
        let mut loss = 0.0;
        let mut dh = vec![0.0; self.c];
        let mut dc = vec![0.0; self.c];
        let mut dy = vec![0.0; self.m];
        let wout = self.params.output_weight.as_slice();
        for k in (0..l).rev() {
            let target = w.row(l - 1 - k);
            let y = fwd.emissions.row(k);
            for n in 0..self.m {
                let d = y[n] - target[n];
                loss += d * d;
                dy[n] = 2.0 * d;
            }
            let h = &fwd.hidden[k];
            let gw = grad.output_weight.as_mut_slice();
            for j in 0..self.c {
                let mut acc = 0.0;
                for n in 0..self.m {
                    gw[j * self.m + n] += h[j] * dy[n];
                    acc += wout[j * self.m + n] * dy[n];
                }
                dh[j] += acc;
            }
            grad.output_bias.iter_mut().zip(&dy).for_each(|(g, d)| *g += d);
            if k > 0 {
                let (a, b) =
                    backward_step(&self.params.decoder, &fwd.decoder[k - 1], &dh, &dc, &mut grad.decoder);
                dh = a;
                dc = b;
            }
        }
        for step in fwd.encoder.iter().rev() {
            let (a, b) = backward_step(&self.params.encoder, step, &dh, &dc, &mut grad.encoder);
            dh = a;
            dc = b;
        }
        (loss, grad)
    }

    /// Summed teacher-forced loss over `batch` and its exact gradient.
    ///
    /// Windows are differentiated in parallel; the reduction runs in batch
    /// order so the result does not depend on scheduling.
    pub fn loss_and_gradients(&self, batch: &[&Matrix]) -> Result<(f64, Parameters)> {
        if batch.is_empty() {
            return Err(Error::EmptySubset("gradient batch is empty".into()));
        }
        for w in batch {
            self.check_window(w)?;
        }
        let parts: Vec<(f64, Parameters)> = batch
            .par_iter()
            .map(|w| self.single_loss_and_gradient(w))
            .collect();
        let mut iter = parts.into_iter();
        let (mut loss, mut grad) = iter.next().expect("non-empty batch");
        for (l, g) in iter {
            loss += l;
            grad.add_assign(&g);
        }
        if let Some(block) = grad.first_non_finite_block() {
            return Err(Error::Divergence {
                block,
                context: String::new(),
            });
        }
        Ok((loss, grad))
    }

    pub fn gradients(&self, batch: &[&Matrix]) -> Result<Parameters> {
        self.loss_and_gradients(batch).map(|(_, g)| g)
    }

    pub fn to_json(&self) -> Result<String> {
        let names = Parameters::block_names();
        let shapes = self.params.block_shapes();
        let parameters = self
            .params
            .blocks()
            .into_iter()
            .zip(names)
            .zip(shapes)
            .map(|((values, name), (rows, cols))| NamedBlock {
                name,
                rows,
                cols,
                values: values.to_vec(),
            })
            .collect();
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            m: self.m,
            c: self.c,
            window_length: self.window_length,
            init_seed: self.init_seed,
            config_hash: self.config_hash.clone(),
            training: self.training.clone(),
            parameters,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "model format_version {} (supported: {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let mut model = EncDecModel::zeros(file.m, file.c, file.window_length);
        model.init_seed = file.init_seed;
        model.config_hash = file.config_hash;
        model.training = file.training;
        let names = Parameters::block_names();
        let shapes = model.params.block_shapes();
        if file.parameters.len() != names.len() {
            return Err(Error::ArtifactMismatch(format!(
                "model has {} parameter blocks, expected {}",
                file.parameters.len(),
                names.len()
            )));
        }
        for (((dst, block), name), shape) in model
            .params
            .blocks_mut()
            .into_iter()
            .zip(&file.parameters)
            .zip(&names)
            .zip(&shapes)
        {
            if &block.name != name || (block.rows, block.cols) != *shape || block.values.len() != dst.len() {
                return Err(Error::ArtifactMismatch(format!(
                    "parameter block `{}` ({}x{}) does not match expected `{name}` ({}x{})",
                    block.name, block.rows, block.cols, shape.0, shape.1
                )));
            }
            if block.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter block `{name}`")));
            }
            dst.copy_from_slice(&block.values);
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EncDecModel::from_json(&text)
    }
}

/// `Σᵢ ‖a(i) − b(i)‖²`
pub fn squared_error(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

#[derive(Debug, Serialize, Deserialize)]
struct NamedBlock {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    m: usize,
    c: usize,
    window_length: usize,
    init_seed: u64,
    config_hash: Option<String>,
    training: Option<TrainingSummary>,
    parameters: Vec<NamedBlock>,
}
