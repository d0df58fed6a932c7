//! Single-layer LSTM classifier, written out by hand in 64-bit floats.
//!
//! Topology: T feature rows run through one recurrent cell; the last output
//! a_T (optionally dropout-masked) feeds a 2-unit dense layer with softmax.
//! Gradients are exact backpropagation through time, checked against central
//! finite differences in the test suite.

pub mod persist;
pub mod train;

pub use persist::{load_model, save_model, ModelMeta};
pub use train::{train, EarlyStopping, HistoryRow, StopReason, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bars::Label;
use crate::dataset::WindowExample;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("model file version {found} unsupported (this build reads {supported})")]
    VersionMismatch { found: u16, supported: u16 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense row-major matrix, just enough linear algebra for one LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    /// y = self * x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data.chunks_exact(self.cols).map(|row| dot(row, x)).collect()
    }

    /// out += self^T * y
    pub fn tvec_add(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (row, &yi) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += yi * w;
            }
        }
    }

    /// self += u * v^T
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &ui) in self.data.chunks_exact_mut(self.cols).zip(u) {
            for (w, &vj) in row.iter_mut().zip(v) {
                *w += ui * vj;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// All trainable parameters. The four gate matrices act on the stacked
/// vector A_t = [a_{t-1}; x_t] of length N+F; the same struct doubles as the
/// gradient and Adam-moment container since every field is shape-matched.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub n: usize,
    pub f: usize,
    pub w_u: Mat,
    pub w_f: Mat,
    pub w_c: Mat,
    pub w_o: Mat,
    pub b_u: Vec<f64>,
    pub b_f: Vec<f64>,
    pub b_c: Vec<f64>,
    pub b_o: Vec<f64>,
    pub w_dense: Mat,
    pub b_dense: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(n: usize, f: usize) -> Self {
        Self {
            n,
            f,
            w_u: Mat::zeros(n, n + f),
            w_f: Mat::zeros(n, n + f),
            w_c: Mat::zeros(n, n + f),
            w_o: Mat::zeros(n, n + f),
            b_u: vec![0.0; n],
            b_f: vec![0.0; n],
            b_c: vec![0.0; n],
            b_o: vec![0.0; n],
            w_dense: Mat::zeros(2, n),
            b_dense: vec![0.0; 2],
        }
    }

    /// Gate and dense weights uniform in [-k, k] with k = 1/sqrt(N+F); the
    /// forget-gate bias starts at 1 so early training does not wipe the cell
    /// state, the other biases at 0.
    pub fn init(n: usize, f: usize, seed: u64) -> Self {
        let mut rng = rng_stream(seed, 0);
        let k = 1.0 / ((n + f) as f64).sqrt();
        let mut params = Self::zeros(n, f);
        for m in [&mut params.w_u, &mut params.w_f, &mut params.w_c, &mut params.w_o] {
            for w in &mut m.data {
                *w = rng.gen_range(-k..=k);
            }
        }
        for w in &mut params.w_dense.data {
            *w = rng.gen_range(-k..=k);
        }
        params.b_f.fill(1.0);
        params
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let gate = (self.n, self.n + self.f);
        for (name, m) in [
            ("w_u", &self.w_u),
            ("w_f", &self.w_f),
            ("w_c", &self.w_c),
            ("w_o", &self.w_o),
        ] {
            if (m.rows, m.cols) != gate {
                return Err(NeuralError::ShapeMismatch(format!(
                    "{name} is {}x{}, expected {}x{}",
                    m.rows, m.cols, gate.0, gate.1
                )));
            }
        }
        if (self.w_dense.rows, self.w_dense.cols) != (2, self.n)
            || self.b_dense.len() != 2
            || [&self.b_u, &self.b_f, &self.b_c, &self.b_o].iter().any(|b| b.len() != self.n)
        {
            return Err(NeuralError::ShapeMismatch("bias or dense shape".into()));
        }
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(NeuralError::NonFinite("parameters"));
        }
        Ok(())
    }

    pub(crate) fn slices(&self) -> [&[f64]; 10] {
        [
            &self.w_u.data,
            &self.w_f.data,
            &self.w_c.data,
            &self.w_o.data,
            &self.b_u,
            &self.b_f,
            &self.b_c,
            &self.b_o,
            &self.w_dense.data,
            &self.b_dense,
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 10] {
        [
            &mut self.w_u.data,
            &mut self.w_f.data,
            &mut self.w_c.data,
            &mut self.w_o.data,
            &mut self.b_u,
            &mut self.b_f,
            &mut self.b_c,
            &mut self.b_o,
            &mut self.w_dense.data,
            &mut self.b_dense,
        ]
    }

    /// Euclidean norm over all parameters, used by the optional clip.
    pub fn grad_norm(&self) -> f64 {
        self.slices().iter().flat_map(|s| s.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for v in s.iter_mut() {
                *v *= factor;
            }
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }
}

pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(n: usize) -> Self {
        Self { a: vec![0.0; n], c: vec![0.0; n] }
    }
}

/// Per-step activations cached for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    /// A_t = [a_{t-1}; x_t], length N+F.
    stacked: Vec<f64>,
    gate_u: Vec<f64>,
    gate_f: Vec<f64>,
    candidate: Vec<f64>,
    gate_o: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    a: Vec<f64>,
}

fn cell_step(x_t: &[f64], prev: &CellState, params: &LstmParams) -> Result<StepCache, NeuralError> {
    let n = params.n;
    if x_t.len() != params.f || prev.a.len() != n || prev.c.len() != n {
        return Err(NeuralError::ShapeMismatch(format!(
            "cell input lengths a={} c={} x={}, expected a=c={} x={}",
            prev.a.len(),
            prev.c.len(),
            x_t.len(),
            n,
            params.f
        )));
    }
    let mut stacked = Vec::with_capacity(n + params.f);
    stacked.extend_from_slice(&prev.a);
    stacked.extend_from_slice(x_t);

    let pre = |w: &Mat, b: &[f64]| -> Vec<f64> {
        w.matvec(&stacked).iter().zip(b).map(|(z, bi)| z + bi).collect()
    };
    let gate_u: Vec<f64> = pre(&params.w_u, &params.b_u).iter().map(|&z| sigmoid(z)).collect();
    let gate_f: Vec<f64> = pre(&params.w_f, &params.b_f).iter().map(|&z| sigmoid(z)).collect();
    let candidate: Vec<f64> = pre(&params.w_c, &params.b_c).iter().map(|&z| z.tanh()).collect();
    let gate_o: Vec<f64> = pre(&params.w_o, &params.b_o).iter().map(|&z| sigmoid(z)).collect();

    let c: Vec<f64> =
        (0..n).map(|i| gate_u[i] * candidate[i] + gate_f[i] * prev.c[i]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let a: Vec<f64> = (0..n).map(|i| gate_o[i] * tanh_c[i]).collect();

    if c.iter().chain(&a).any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFinite("cell state"));
    }
    Ok(StepCache { stacked, gate_u, gate_f, candidate, gate_o, c, tanh_c, a })
}

/// One recurrent step: update/forget/output gates from the stacked input,
/// candidate through tanh, new cell state, gated output.
pub fn lstm_cell(
    x_t: &[f64],
    prev: &CellState,
    params: &LstmParams,
) -> Result<CellState, NeuralError> {
    let step = cell_step(x_t, prev, params)?;
    Ok(CellState { a: step.a, c: step.c })
}

/// Dropout mask for the dense-layer input, with inverted scaling so the
/// expected activation matches inference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub keep: Vec<bool>,
    pub keep_prob: f64,
}

impl DropoutMask {
    pub fn draw<R: Rng>(rng: &mut R, n: usize, dropout_rate: f64) -> Self {
        let keep_prob = 1.0 - dropout_rate;
        Self { keep: (0..n).map(|_| rng.gen_bool(keep_prob)).collect(), keep_prob }
    }

    fn scale(&self, i: usize) -> f64 {
        if self.keep[i] {
            1.0 / self.keep_prob
        } else {
            0.0
        }
    }
}

/// Everything backward() needs, plus the class probabilities.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: Vec<StepCache>,
    /// Dense-layer input: a_T after dropout scaling (training) or a_T itself.
    head_input: Vec<f64>,
    /// Per-unit dropout multiplier; None in inference mode.
    mask_scale: Option<Vec<f64>>,
    pub probs: [f64; 2],
}

/// Runs the cell over all T rows from a zero initial state, applies dropout
/// to a_T when a mask is given, then the dense layer and softmax.
pub fn forward(
    window: &[Vec<f64>],
    params: &LstmParams,
    dropout: Option<&DropoutMask>,
) -> Result<ForwardCache, NeuralError> {
    if window.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    if let Some(mask) = dropout {
        if mask.keep.len() != params.n || !(mask.keep_prob > 0.0 && mask.keep_prob <= 1.0) {
            return Err(NeuralError::ShapeMismatch("dropout mask".into()));
        }
    }
    let mut steps = Vec::with_capacity(window.len());
    let mut state = CellState::zeros(params.n);
    for x_t in window {
        let step = cell_step(x_t, &state, params)?;
        state = CellState { a: step.a.clone(), c: step.c.clone() };
        steps.push(step);
    }

    let mask_scale: Option<Vec<f64>> =
        dropout.map(|m| (0..params.n).map(|i| m.scale(i)).collect());
    let head_input: Vec<f64> = match &mask_scale {
        Some(scale) => state.a.iter().zip(scale).map(|(a, s)| a * s).collect(),
        None => state.a.clone(),
    };

    let logits: Vec<f64> = params
        .w_dense
        .matvec(&head_input)
        .iter()
        .zip(&params.b_dense)
        .map(|(z, b)| z + b)
        .collect();
    let peak = logits[0].max(logits[1]);
    let exps = [(logits[0] - peak).exp(), (logits[1] - peak).exp()];
    let total = exps[0] + exps[1];
    let probs = [exps[0] / total, exps[1] / total];
    if !probs[0].is_finite() || !probs[1].is_finite() {
        return Err(NeuralError::NonFinite("class probabilities"));
    }
    Ok(ForwardCache { steps, head_input, mask_scale, probs })
}

/// Categorical cross-entropy with probabilities clamped to
/// [1e-12, 1 - 1e-12] before the log.
pub fn loss(probs: &[f64; 2], targets: &[f64; 2]) -> f64 {
    let clamp = |p: f64| p.clamp(1e-12, 1.0 - 1e-12);
    -(targets[0] * clamp(probs[0]).ln() + targets[1] * clamp(probs[1]).ln())
}

/// Exact cross-entropy gradients for every parameter via backpropagation
/// through time over all T cached steps, dropout mask included.
pub fn backward(
    params: &LstmParams,
    cache: &ForwardCache,
    targets: &[f64; 2],
) -> Result<LstmParams, NeuralError> {
    let n = params.n;
    let mut grads = LstmParams::zeros(n, params.f);

    // Softmax + cross-entropy collapse to probs - targets at the logits.
    let d_logits = [cache.probs[0] - targets[0], cache.probs[1] - targets[1]];
    grads.w_dense.add_outer(&d_logits, &cache.head_input);
    grads.b_dense[0] += d_logits[0];
    grads.b_dense[1] += d_logits[1];

    let mut d_head = vec![0.0; n];
    params.w_dense.tvec_add(&d_logits, &mut d_head);
    let mut d_a: Vec<f64> = match &cache.mask_scale {
        Some(scale) => d_head.iter().zip(scale).map(|(d, s)| d * s).collect(),
        None => d_head,
    };

    let mut d_c_next = vec![0.0; n];
    for (t, step) in cache.steps.iter().enumerate().rev() {
        let mut d_z_o = vec![0.0; n];
        let mut d_z_u = vec![0.0; n];
        let mut d_z_c = vec![0.0; n];
        let mut d_z_f = vec![0.0; n];
        let mut d_c_prev = vec![0.0; n];
        for i in 0..n {
            let d_c = d_c_next[i] + d_a[i] * step.gate_o[i] * (1.0 - step.tanh_c[i].powi(2));
            let c_prev = if t > 0 { cache.steps[t - 1].c[i] } else { 0.0 };
            d_z_o[i] = d_a[i] * step.tanh_c[i] * step.gate_o[i] * (1.0 - step.gate_o[i]);
            d_z_u[i] = d_c * step.candidate[i] * step.gate_u[i] * (1.0 - step.gate_u[i]);
            d_z_c[i] = d_c * step.gate_u[i] * (1.0 - step.candidate[i].powi(2));
            d_z_f[i] = d_c * c_prev * step.gate_f[i] * (1.0 - step.gate_f[i]);
            d_c_prev[i] = d_c * step.gate_f[i];
        }

        grads.w_u.add_outer(&d_z_u, &step.stacked);
        grads.w_f.add_outer(&d_z_f, &step.stacked);
        grads.w_c.add_outer(&d_z_c, &step.stacked);
        grads.w_o.add_outer(&d_z_o, &step.stacked);
        for i in 0..n {
            grads.b_u[i] += d_z_u[i];
            grads.b_f[i] += d_z_f[i];
            grads.b_c[i] += d_z_c[i];
            grads.b_o[i] += d_z_o[i];
        }

        let mut d_stacked = vec![0.0; n + params.f];
        params.w_u.tvec_add(&d_z_u, &mut d_stacked);
        params.w_f.tvec_add(&d_z_f, &mut d_stacked);
        params.w_c.tvec_add(&d_z_c, &mut d_stacked);
        params.w_o.tvec_add(&d_z_o, &mut d_stacked);
        d_a = d_stacked[..n].to_vec();
        d_c_next = d_c_prev;
    }

    if grads.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
        return Err(NeuralError::NonFinite("gradients"));
    }
    Ok(grads)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: LstmParams,
    pub v: LstmParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize, f: usize) -> Self {
        Self { m: LstmParams::zeros(n, f), v: LstmParams::zeros(n, f), step: 0 }
    }
}

/// Standard bias-corrected Adam update at the given learning rate.
pub fn adam_step(params: &mut LstmParams, grads: &LstmParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let corr1 = 1.0 - ADAM_BETA1.powi(t);
    let corr2 = 1.0 - ADAM_BETA2.powi(t);
    let p_slices = params.slices_mut();
    let m_slices = state.m.slices_mut();
    let v_slices = state.v.slices_mut();
    let g_slices = grads.slices();
    for (((ps, ms), vs), gs) in
        p_slices.into_iter().zip(m_slices).zip(v_slices).zip(g_slices)
    {
        for (((p, m), v), &g) in ps.iter_mut().zip(ms.iter_mut()).zip(vs.iter_mut()).zip(gs) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / corr1;
            let v_hat = *v / corr2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Inference-mode result for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: [f64; 2],
    pub predicted: Label,
    pub actual: Label,
    pub prediction_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

/// Inference-mode forward over every example. The argmax tie breaks toward
/// the up class, mirroring the label rule's tie handling.
pub fn evaluate(params: &LstmParams, examples: &[WindowExample]) -> Result<EvalReport, NeuralError> {
    if examples.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    let mut total_loss = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(examples.len());
    for example in examples {
        let cache = forward(&example.features, params, None)?;
        let targets = example.label.targets();
        total_loss += loss(&cache.probs, &targets);
        let predicted = if cache.probs[0] >= cache.probs[1] { Label::Up } else { Label::Down };
        if predicted == example.label {
            correct += 1;
        }
        predictions.push(Prediction {
            probs: cache.probs,
            predicted,
            actual: example.label,
            prediction_index: example.prediction_index,
        });
    }
    Ok(EvalReport {
        loss: total_loss / examples.len() as f64,
        accuracy: correct as f64 / examples.len() as f64,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_params(n: usize, f: usize, seed: u64) -> LstmParams {
        LstmParams::init(n, f, seed)
    }

    fn random_window<R: Rng>(rng: &mut R, t: usize, f: usize) -> Vec<Vec<f64>> {
        (0..t).map(|_| (0..f).map(|_| rng.gen_range(0.0..1.0)).collect()).collect()
    }

    #[test]
    fn zero_params_give_half_gates_and_zero_output() {
        let params = LstmParams::zeros(3, 2);
        let out = lstm_cell(&[0.4, -0.7], &CellState::zeros(3), &params).unwrap();
        assert_eq!(out.c, vec![0.0; 3]);
        assert_eq!(out.a, vec![0.0; 3]);
    }

    #[test]
    fn zero_weights_halve_previous_cell_state() {
        let params = LstmParams::zeros(2, 1);
        let prev = CellState { a: vec![0.0; 2], c: vec![0.8, -0.6] };
        let out = lstm_cell(&[0.3], &prev, &params).unwrap();
        for i in 0..2 {
            assert!((out.c[i] - 0.5 * prev.c[i]).abs() < 1e-15);
            assert!((out.a[i] - 0.5 * (0.5 * prev.c[i]).tanh()).abs() < 1e-15);
        }
    }

    /// Straight-line reimplementation of the gate equations with scalar
    /// loops, kept deliberately independent of the production code paths.
    fn oracle_cell(x: &[f64], prev: &CellState, p: &LstmParams) -> CellState {
        let n = p.n;
        let nf = n + p.f;
        let stacked: Vec<f64> = prev.a.iter().chain(x).copied().collect();
        let lin = |w: &Mat, b: &[f64], i: usize| -> f64 {
            let mut z = b[i];
            for j in 0..nf {
                z += w.at(i, j) * stacked[j];
            }
            z
        };
        let mut a = vec![0.0; n];
        let mut c = vec![0.0; n];
        for i in 0..n {
            let gu = 1.0 / (1.0 + (-lin(&p.w_u, &p.b_u, i)).exp());
            let gf = 1.0 / (1.0 + (-lin(&p.w_f, &p.b_f, i)).exp());
            let cand = lin(&p.w_c, &p.b_c, i).tanh();
            let go = 1.0 / (1.0 + (-lin(&p.w_o, &p.b_o, i)).exp());
            c[i] = gu * cand + gf * prev.c[i];
            a[i] = go * c[i].tanh();
        }
        CellState { a, c }
    }

    #[test]
    fn cell_matches_duplicate_formula_oracle() {
        let mut rng = rng_stream(99, 0);
        for case in 0..25 {
            let n = 1 + (case % 5);
            let f = 1 + (case % 3);
            let params = random_params(n, f, 1000 + case as u64);
            let prev = CellState {
                a: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                c: (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            };
            let x: Vec<f64> = (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = lstm_cell(&x, &prev, &params).unwrap();
            let want = oracle_cell(&x, &prev, &params);
            for i in 0..n {
                assert!((got.a[i] - want.a[i]).abs() < 1e-12);
                assert!((got.c[i] - want.c[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_params_forward_is_coin_flip() {
        let params = LstmParams::zeros(4, 3);
        let window = vec![vec![0.2, 0.8, 0.5]; 6];
        let cache = forward(&window, &params, None).unwrap();
        assert!((cache.probs[0] - 0.5).abs() < 1e-15);
        assert!((cache.probs[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn probabilities_form_a_distribution() {
        let mut rng = rng_stream(7, 0);
        for seed in 0..20 {
            let params = random_params(5, 7, seed);
            let window = random_window(&mut rng, 10, 7);
            let cache = forward(&window, &params, None).unwrap();
            assert!(cache.probs.iter().all(|p| (0.0..1.0).contains(p) || *p == 1.0));
            assert!((cache.probs[0] + cache.probs[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inference_ignores_dropout_seed() {
        let params = random_params(4, 7, 3);
        let mut rng = rng_stream(10, 0);
        let window = random_window(&mut rng, 5, 7);
        let one = forward(&window, &params, None).unwrap();
        let two = forward(&window, &params, None).unwrap();
        assert_eq!(one.probs, two.probs);
    }

    #[test]
    fn loss_fixed_points() {
        assert!((loss(&[0.5, 0.5], &[1.0, 0.0]) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(&[1.0, 0.0], &[1.0, 0.0]) < 1e-11);
        // clamping keeps the loss finite even for a degenerate distribution
        assert!(loss(&[0.0, 1.0], &[1.0, 0.0]).is_finite());
    }

    #[test]
    fn saturated_correct_prediction_has_negligible_dense_gradient() {
        let mut params = LstmParams::zeros(3, 2);
        params.b_dense = vec![20.0, -20.0]; // probs pinned to ~[1, 0]
        let window = vec![vec![0.1, 0.9]; 4];
        let cache = forward(&window, &params, None).unwrap();
        let grads = backward(&params, &cache, &[1.0, 0.0]).unwrap();
        let magnitude: f64 = grads
            .w_dense
            .data
            .iter()
            .chain(&grads.b_dense)
            .map(|g| g.abs())
            .fold(0.0, f64::max);
        assert!(magnitude < 1e-8, "dense gradient magnitude {magnitude}");
    }

    #[test]
    fn masked_units_get_zero_gradients_for_single_step_windows() {
        let params = random_params(5, 7, 21);
        let mut rng = rng_stream(22, 0);
        let window = random_window(&mut rng, 1, 7);
        let mask = DropoutMask { keep: vec![true, false, true, false, true], keep_prob: 0.5 };
        let cache = forward(&window, &params, Some(&mask)).unwrap();
        let grads = backward(&params, &cache, &[0.0, 1.0]).unwrap();
        for i in [1usize, 3] {
            for m in [&grads.w_u, &grads.w_f, &grads.w_c, &grads.w_o] {
                for j in 0..m.cols {
                    assert_eq!(m.at(i, j), 0.0);
                }
            }
            for b in [&grads.b_u, &grads.b_f, &grads.b_c, &grads.b_o] {
                assert_eq!(b[i], 0.0);
            }
            assert_eq!(grads.w_dense.at(0, i), 0.0);
            assert_eq!(grads.w_dense.at(1, i), 0.0);
        }
    }

    /// Central finite differences of the full forward + loss pipeline with
    /// the same dropout mask. This is the independent oracle for backward().
    fn numeric_gradient(
        params: &LstmParams,
        window: &[Vec<f64>],
        targets: &[f64; 2],
        mask: Option<&DropoutMask>,
    ) -> LstmParams {
        let h = 1e-5;
        let mut numeric = LstmParams::zeros(params.n, params.f);
        let n_groups = 10;
        for group in 0..n_groups {
            let len = params.slices()[group].len();
            for idx in 0..len {
                let mut plus = params.clone();
                plus.slices_mut()[group][idx] += h;
                let lp = loss(&forward(window, &plus, mask).unwrap().probs, targets);
                let mut minus = params.clone();
                minus.slices_mut()[group][idx] -= h;
                let lm = loss(&forward(window, &minus, mask).unwrap().probs, targets);
                numeric.slices_mut()[group][idx] = (lp - lm) / (2.0 * h);
            }
        }
        numeric
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = rng_stream(4242, 0);
        for case in 0u64..22 {
            let n = 1 + (case % 6) as usize;
            let t = 1 + (case % 8) as usize;
            let f = 7;
            let params = random_params(n, f, 7000 + case);
            let window = random_window(&mut rng, t, f);
            let targets = if case % 2 == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
            let mask = if case % 3 == 0 {
                Some(DropoutMask::draw(&mut rng, n, 0.5))
            } else {
                None
            };
            let cache = forward(&window, &params, mask.as_ref()).unwrap();
            let analytic = backward(&params, &cache, &targets).unwrap();
            let numeric = numeric_gradient(&params, &window, &targets, mask.as_ref());
            for (a_s, n_s) in analytic.slices().iter().zip(numeric.slices()) {
                for (a, b) in a_s.iter().zip(n_s) {
                    let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-4);
                    assert!(rel <= 1e-4, "case {case}: analytic {a} vs numeric {b}");
                }
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let n = 3;
        let f = 2;
        let mut params = random_params(n, f, 5);
        let before = params.clone();
        let mut grads = LstmParams::zeros(n, f);
        for s in grads.slices_mut() {
            for (i, g) in s.iter_mut().enumerate() {
                *g = if i % 2 == 0 { 0.7 } else { -1.3 };
            }
        }
        let mut state = AdamState::new(n, f);
        adam_step(&mut params, &grads, &mut state, 0.001);
        for ((ps, bs), gs) in params.slices().iter().zip(before.slices()).zip(grads.slices()) {
            for ((p, b), g) in ps.iter().zip(bs).zip(gs) {
                let moved = p - b;
                assert!((moved + 0.001 * g.signum()).abs() < 1e-6, "moved {moved} for g {g}");
            }
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut params = random_params(2, 2, 6);
        let before = params.clone();
        let grads = LstmParams::zeros(2, 2);
        let mut state = AdamState::new(2, 2);
        for s in state.m.slices_mut() {
            s.fill(0.0);
        }
        adam_step(&mut params, &grads, &mut state, 0.001);
        assert_eq!(params, before);
    }

    #[test]
    fn dropout_average_approaches_inference_output() {
        let params = random_params(4, 7, 77);
        let mut rng = rng_stream(78, 0);
        let window = random_window(&mut rng, 6, 7);
        let inference = forward(&window, &params, None).unwrap().probs;
        let mut mean = [0.0f64; 2];
        let draws = 10_000;
        for _ in 0..draws {
            let mask = DropoutMask::draw(&mut rng, 4, 0.5);
            let p = forward(&window, &params, Some(&mask)).unwrap().probs;
            mean[0] += p[0];
            mean[1] += p[1];
        }
        mean[0] /= draws as f64;
        mean[1] /= draws as f64;
        assert!((mean[0] - inference[0]).abs() < 0.02, "{mean:?} vs {inference:?}");
        assert!((mean[1] - inference[1]).abs() < 0.02);
    }

    #[test]
    fn evaluate_scores_stub_predictors() {
        use crate::bars::Label;
        let up = WindowExample {
            features: vec![vec![1.0; 7]; 3],
            label: Label::Up,
            prediction_index: 3,
        };
        let down = WindowExample {
            features: vec![vec![0.0; 7]; 3],
            label: Label::Down,
            prediction_index: 4,
        };
        // zero params predict [0.5, 0.5]; the tie resolves toward Up
        let params = LstmParams::zeros(2, 7);
        let report = evaluate(&params, &[up.clone(), down.clone()]).unwrap();
        assert_eq!(report.accuracy, 0.5);
        assert!((report.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(report.predictions.iter().all(|p| p.predicted == Label::Up));
        assert!(matches!(evaluate(&params, &[]), Err(NeuralError::EmptyInput)));
    }

    #[test]
    fn init_respects_stated_ranges() {
        let params = LstmParams::init(6, 7, 123);
        params.validate().unwrap();
        let k = 1.0 / (13.0f64).sqrt();
        for m in [&params.w_u, &params.w_f, &params.w_c, &params.w_o, &params.w_dense] {
            assert!(m.data.iter().all(|w| w.abs() <= k));
        }
        assert!(params.b_f.iter().all(|&b| b == 1.0));
        assert!(params.b_u.iter().all(|&b| b == 0.0));
        assert_eq!(LstmParams::init(6, 7, 123), params);
        assert_ne!(LstmParams::init(6, 7, 124), params);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn softmax_always_normalizes(seed in any::<u64>(), t in 1usize..12) {
            let params = LstmParams::init(3, 4, seed);
            let mut rng = rng_stream(seed, 1);
            let window: Vec<Vec<f64>> =
                (0..t).map(|_| (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
            let cache = forward(&window, &params, None).unwrap();
            prop_assert!((cache.probs[0] + cache.probs[1] - 1.0).abs() < 1e-12);
            prop_assert!(cache.probs[0] > 0.0 && cache.probs[1] > 0.0);
        }
    }
}
