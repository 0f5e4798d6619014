//! Recurrent cells: the Deep Memory Update (DMU) module and the
//! ordinary RNN / LSTM / GRU baselines, behind one unroll interface.
//!
//! A DMU block is a feedforward network (FNN) that consumes the input
//! concatenated with the scaled lagged memory state `S * h_{t-1}` and
//! emits, from a linear layer of width `2d`, the gate pre-activations
//! `z_t` and the candidate `h_tilde_t`. The memory layer then computes
//!
//! ```text
//! h_t = h_{t-1} o sigmoid(z_t) + f(h_tilde_t) o (1 - sigmoid(z_t))
//! ```
//!
//! with `o` the elementwise product and `f = tanh`. The FNN hidden
//! layers use tanh as well — the method leaves the hidden nonlinearity
//! open, so tanh is this crate's documented choice.
//! Large `z_t` preserves the state, which is why initialization adds a
//! positive offset (default 3) to the biases of the z-producing output
//! neurons.

use crate::autodiff::{AdError, Parameter, Tape, TensorId};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CellError {
    #[error("FNN hidden layer list must be non-empty")]
    EmptyHidden,
    #[error("layer widths must be positive")]
    ZeroWidth,
    #[error("cannot unroll an empty input sequence")]
    EmptySequence,
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("parameter file error: {0}")]
    ParamIo(String),
    #[error("parameter {0} missing from file")]
    MissingParam(String),
    #[error("parameter {name} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        got: (usize, usize),
        expected: (usize, usize),
    },
}

/// Activation applied by the memory layer to the candidate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FActivation {
    Tanh,
}

/// Architecture of one DMU block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DmuSpec {
    pub input_width: usize,
    pub fnn_hidden: Vec<usize>,
    pub memory_width: usize,
    pub z_bias_offset: f64,
    pub f_activation: FActivation,
}

impl DmuSpec {
    pub fn new(
        input_width: usize,
        fnn_hidden: Vec<usize>,
        memory_width: usize,
    ) -> Result<Self, CellError> {
        if fnn_hidden.is_empty() {
            return Err(CellError::EmptyHidden);
        }
        if input_width == 0 || memory_width == 0 || fnn_hidden.iter().any(|&w| w == 0) {
            return Err(CellError::ZeroWidth);
        }
        Ok(DmuSpec {
            input_width,
            fnn_hidden,
            memory_width,
            z_bias_offset: 3.0,
            f_activation: FActivation::Tanh,
        })
    }

    pub fn with_z_bias_offset(mut self, offset: f64) -> Self {
        self.z_bias_offset = offset;
        self
    }

    /// Widths of consecutive FNN layers, input to output:
    /// `[n + d, hidden..., 2d]`.
    fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.fnn_hidden.len() + 2);
        dims.push(self.input_width + self.memory_width);
        dims.extend_from_slice(&self.fnn_hidden);
        dims.push(2 * self.memory_width);
        dims
    }
}

fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

fn linear_params(
    prefix: &str,
    index: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut impl Rng,
) -> (Parameter, Parameter) {
    let w = Parameter::new(
        format!("{prefix}{index}.weight"),
        glorot_uniform(fan_in, fan_out, rng),
    );
    let b = Parameter::new(format!("{prefix}{index}.bias"), Array2::zeros((1, fan_out)));
    (w, b)
}

/// Parameters bound onto a tape for one episode, in the same order as
/// the model's parameter list.
pub struct BoundParams {
    pub ids: Vec<TensorId>,
}

fn bind_params(tape: &mut Tape, params: &[Parameter]) -> BoundParams {
    let ids = params.iter().map(|p| tape.leaf(p.value.clone())).collect();
    BoundParams { ids }
}

/// One DMU step: the new state and the scaled-memory node it consumed.
pub struct DmuStep {
    pub h: TensorId,
    pub scaled_prev: TensorId,
}

/// A full DMU unroll over one episode.
pub struct DmuUnroll {
    /// States `h_1 ..= h_T` (the stored initial state is not included).
    pub states: Vec<TensorId>,
    /// The node the readout should consume: `S * h_T`, inserted so that
    /// the final state's gradient is observable like every other step's.
    pub output: TensorId,
    /// Nodes `S * h_t` for `t = 1 ..= T`, in time order; their adjoints
    /// are the per-timestep gradients `g_t` the scaling controller
    /// captures. The initial state's scaled node is excluded.
    pub grad_nodes: Vec<TensorId>,
}

#[derive(Debug, Clone)]
pub struct DmuModel {
    pub spec: DmuSpec,
    params: Vec<Parameter>,
}

impl DmuModel {
    /// Glorot-uniform weights, zero biases, then `z_bias_offset` added
    /// to the first `d` biases of the linear output layer (the
    /// z-producing neurons). The initial memory state is zeros.
    pub fn init(spec: DmuSpec, rng: &mut impl Rng) -> Self {
        let dims = spec.layer_dims();
        let mut params = Vec::new();
        for l in 0..dims.len() - 1 {
            let (w, mut b) = linear_params("fnn", l, dims[l], dims[l + 1], rng);
            if l == dims.len() - 2 {
                for i in 0..spec.memory_width {
                    b.value[[0, i]] += spec.z_bias_offset;
                }
            }
            params.push(w);
            params.push(b);
        }
        DmuModel { spec, params }
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        bind_params(tape, &self.params)
    }

    /// FNN forward: tanh hidden layers, linear `2d` output.
    fn fnn(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        input: TensorId,
    ) -> Result<TensorId, CellError> {
        let layers = self.params.len() / 2;
        let mut a = input;
        for l in 0..layers {
            let w = bound.ids[2 * l];
            let b = bound.ids[2 * l + 1];
            let lin = tape.matmul(a, w)?;
            let lin = tape.add_bias(lin, b)?;
            a = if l + 1 < layers { tape.tanh(lin) } else { lin };
        }
        Ok(a)
    }

    /// One memory update. `scale` is the controller's current `S`.
    pub fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        h_prev: TensorId,
        x: TensorId,
        scale: f64,
    ) -> Result<DmuStep, CellError> {
        let d = self.spec.memory_width;
        let scaled_prev = tape.scale(h_prev, scale);
        let fnn_in = tape.concat_cols(x, scaled_prev)?;
        let out = self.fnn(tape, bound, fnn_in)?;
        let z = tape.slice_cols(out, 0, d)?;
        let candidate_pre = tape.slice_cols(out, d, 2 * d)?;
        let gate = tape.sigmoid(z);
        let keep = tape.hadamard(h_prev, gate)?;
        let candidate = match self.spec.f_activation {
            FActivation::Tanh => tape.tanh(candidate_pre),
        };
        let inv_gate = tape.one_minus(gate);
        let write = tape.hadamard(candidate, inv_gate)?;
        let h = tape.add(keep, write)?;
        Ok(DmuStep { h, scaled_prev })
    }

    /// Unroll over a sequence of inputs starting from the zero state.
    /// The episode's first time instant only initializes the memory;
    /// the returned `grad_nodes` cover the states produced by the T
    /// active steps, with a virtual `S * h_T` node feeding the readout.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        xs: &[TensorId],
        scale: f64,
    ) -> Result<DmuUnroll, CellError> {
        if xs.is_empty() {
            return Err(CellError::EmptySequence);
        }
        let (batch, _) = tape.shape(xs[0]);
        let mut h = tape.zeros(batch, self.spec.memory_width);
        let mut states = Vec::with_capacity(xs.len());
        let mut scaled = Vec::with_capacity(xs.len() + 1);
        for &x in xs {
            let step = self.step(tape, bound, h, x, scale)?;
            scaled.push(step.scaled_prev);
            states.push(step.h);
            h = step.h;
        }
        let output = tape.scale(h, scale);
        scaled.push(output);
        // Drop S*h_0: the log runs over the episode's active steps.
        let grad_nodes = scaled.split_off(1);
        Ok(DmuUnroll {
            states,
            output,
            grad_nodes,
        })
    }
}

/// Baseline cell family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Dmu,
    Rnn,
    Lstm,
    Gru,
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CellKind::Dmu => "dmu",
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        };
        f.write_str(s)
    }
}

/// Architecture of a stacked baseline block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellSpec {
    pub kind: CellKind,
    pub layer_widths: Vec<usize>,
    pub input_width: usize,
}

impl CellSpec {
    pub fn new(kind: CellKind, layer_widths: Vec<usize>, input_width: usize) -> Result<Self, CellError> {
        if layer_widths.is_empty() {
            return Err(CellError::EmptyHidden);
        }
        if input_width == 0 || layer_widths.iter().any(|&w| w == 0) {
            return Err(CellError::ZeroWidth);
        }
        Ok(CellSpec {
            kind,
            layer_widths,
            input_width,
        })
    }

    fn fan_ins(&self) -> Vec<usize> {
        let mut ins = vec![self.input_width];
        ins.extend(self.layer_widths.iter().take(self.layer_widths.len() - 1));
        ins
    }
}

/// Ordinary recurrent network: per layer `h' = tanh(W [x; h] + b)`.
#[derive(Debug, Clone)]
pub struct RnnModel {
    pub spec: CellSpec,
    params: Vec<Parameter>,
}

impl RnnModel {
    pub fn init(spec: CellSpec, rng: &mut impl Rng) -> Self {
        let mut params = Vec::new();
        for (l, (&fan_in, &w)) in spec.fan_ins().iter().zip(&spec.layer_widths).enumerate() {
            let (weight, bias) = linear_params("rnn", l, fan_in + w, w, rng);
            params.push(weight);
            params.push(bias);
        }
        RnnModel { spec, params }
    }

    fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        states: &[TensorId],
        x: TensorId,
    ) -> Result<Vec<TensorId>, CellError> {
        let mut input = x;
        let mut next = Vec::with_capacity(states.len());
        for (l, &h) in states.iter().enumerate() {
            let cat = tape.concat_cols(input, h)?;
            let lin = tape.matmul(cat, bound.ids[2 * l])?;
            let lin = tape.add_bias(lin, bound.ids[2 * l + 1])?;
            let h_next = tape.tanh(lin);
            next.push(h_next);
            input = h_next;
        }
        Ok(next)
    }
}

/// LSTM with forget gate, no peepholes. Gates per layer:
/// `i, f, o = sigmoid(W [x; h] + b)`, `g = tanh(W [x; h] + b)`,
/// `c' = f o c + i o g`, `h' = o o tanh(c')`.
#[derive(Debug, Clone)]
pub struct LstmModel {
    pub spec: CellSpec,
    params: Vec<Parameter>,
}

const LSTM_GATES: [&str; 4] = ["i", "f", "g", "o"];

impl LstmModel {
    pub fn init(spec: CellSpec, rng: &mut impl Rng) -> Self {
        let mut params = Vec::new();
        for (l, (&fan_in, &w)) in spec.fan_ins().iter().zip(&spec.layer_widths).enumerate() {
            for gate in LSTM_GATES {
                let weight = Parameter::new(
                    format!("lstm{l}.{gate}.weight"),
                    glorot_uniform(fan_in + w, w, rng),
                );
                let bias = Parameter::new(format!("lstm{l}.{gate}.bias"), Array2::zeros((1, w)));
                params.push(weight);
                params.push(bias);
            }
        }
        LstmModel { spec, params }
    }

    fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        states: &[(TensorId, TensorId)],
        x: TensorId,
    ) -> Result<Vec<(TensorId, TensorId)>, CellError> {
        let mut input = x;
        let mut next = Vec::with_capacity(states.len());
        for (l, &(h, c)) in states.iter().enumerate() {
            let cat = tape.concat_cols(input, h)?;
            let base = 8 * l;
            let mut gates = Vec::with_capacity(4);
            for g in 0..4 {
                let lin = tape.matmul(cat, bound.ids[base + 2 * g])?;
                let lin = tape.add_bias(lin, bound.ids[base + 2 * g + 1])?;
                gates.push(lin);
            }
            let i = tape.sigmoid(gates[0]);
            let f = tape.sigmoid(gates[1]);
            let g = tape.tanh(gates[2]);
            let o = tape.sigmoid(gates[3]);
            let keep = tape.hadamard(f, c)?;
            let write = tape.hadamard(i, g)?;
            let c_next = tape.add(keep, write)?;
            let c_act = tape.tanh(c_next);
            let h_next = tape.hadamard(o, c_act)?;
            next.push((h_next, c_next));
            input = h_next;
        }
        Ok(next)
    }
}

/// GRU, single bias vector per gate:
/// `z, r = sigmoid(W [x; h] + b)`, `n = tanh(W [x; r o h] + b)`,
/// `h' = z o h + (1 - z) o n`.
#[derive(Debug, Clone)]
pub struct GruModel {
    pub spec: CellSpec,
    params: Vec<Parameter>,
}

const GRU_GATES: [&str; 3] = ["z", "r", "n"];

impl GruModel {
    pub fn init(spec: CellSpec, rng: &mut impl Rng) -> Self {
        let mut params = Vec::new();
        for (l, (&fan_in, &w)) in spec.fan_ins().iter().zip(&spec.layer_widths).enumerate() {
            for gate in GRU_GATES {
                let weight = Parameter::new(
                    format!("gru{l}.{gate}.weight"),
                    glorot_uniform(fan_in + w, w, rng),
                );
                let bias = Parameter::new(format!("gru{l}.{gate}.bias"), Array2::zeros((1, w)));
                params.push(weight);
                params.push(bias);
            }
        }
        GruModel { spec, params }
    }

    fn step(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        states: &[TensorId],
        x: TensorId,
    ) -> Result<Vec<TensorId>, CellError> {
        let mut input = x;
        let mut next = Vec::with_capacity(states.len());
        for (l, &h) in states.iter().enumerate() {
            let cat = tape.concat_cols(input, h)?;
            let base = 6 * l;
            let z_lin = tape.matmul(cat, bound.ids[base])?;
            let z_lin = tape.add_bias(z_lin, bound.ids[base + 1])?;
            let z = tape.sigmoid(z_lin);
            let r_lin = tape.matmul(cat, bound.ids[base + 2])?;
            let r_lin = tape.add_bias(r_lin, bound.ids[base + 3])?;
            let r = tape.sigmoid(r_lin);
            let gated = tape.hadamard(r, h)?;
            let cat2 = tape.concat_cols(input, gated)?;
            let n_lin = tape.matmul(cat2, bound.ids[base + 4])?;
            let n_lin = tape.add_bias(n_lin, bound.ids[base + 5])?;
            let n = tape.tanh(n_lin);
            let keep = tape.hadamard(z, h)?;
            let inv_z = tape.one_minus(z);
            let write = tape.hadamard(inv_z, n)?;
            let h_next = tape.add(keep, write)?;
            next.push(h_next);
            input = h_next;
        }
        Ok(next)
    }
}

/// Result of unrolling any cell: the node the readout consumes, and for
/// DMU the scaled-memory nodes whose adjoints the controller captures.
pub struct CellUnroll {
    pub output: TensorId,
    pub grad_nodes: Vec<TensorId>,
}

/// Any of the four cells behind a common interface.
#[derive(Debug, Clone)]
pub enum CellModel {
    Dmu(DmuModel),
    Rnn(RnnModel),
    Lstm(LstmModel),
    Gru(GruModel),
}

impl CellModel {
    /// Build a cell from its CLI-style architecture list. For DMU the
    /// last entry is the memory width and the rest are FNN hidden
    /// widths; for baselines each entry is a stacked layer width.
    pub fn init(
        kind: CellKind,
        arch: &[usize],
        input_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, CellError> {
        match kind {
            CellKind::Dmu => {
                if arch.len() < 2 {
                    return Err(CellError::EmptyHidden);
                }
                let (mem, hidden) = arch.split_last().expect("len checked");
                let spec = DmuSpec::new(input_width, hidden.to_vec(), *mem)?;
                Ok(CellModel::Dmu(DmuModel::init(spec, rng)))
            }
            CellKind::Rnn => {
                let spec = CellSpec::new(kind, arch.to_vec(), input_width)?;
                Ok(CellModel::Rnn(RnnModel::init(spec, rng)))
            }
            CellKind::Lstm => {
                let spec = CellSpec::new(kind, arch.to_vec(), input_width)?;
                Ok(CellModel::Lstm(LstmModel::init(spec, rng)))
            }
            CellKind::Gru => {
                let spec = CellSpec::new(kind, arch.to_vec(), input_width)?;
                Ok(CellModel::Gru(GruModel::init(spec, rng)))
            }
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellModel::Dmu(_) => CellKind::Dmu,
            CellModel::Rnn(_) => CellKind::Rnn,
            CellModel::Lstm(_) => CellKind::Lstm,
            CellModel::Gru(_) => CellKind::Gru,
        }
    }

    pub fn input_width(&self) -> usize {
        match self {
            CellModel::Dmu(m) => m.spec.input_width,
            CellModel::Rnn(m) => m.spec.input_width,
            CellModel::Lstm(m) => m.spec.input_width,
            CellModel::Gru(m) => m.spec.input_width,
        }
    }

    /// Width of the vector the readout consumes.
    pub fn output_width(&self) -> usize {
        match self {
            CellModel::Dmu(m) => m.spec.memory_width,
            CellModel::Rnn(m) => *m.spec.layer_widths.last().expect("non-empty"),
            CellModel::Lstm(m) => *m.spec.layer_widths.last().expect("non-empty"),
            CellModel::Gru(m) => *m.spec.layer_widths.last().expect("non-empty"),
        }
    }

    pub fn params(&self) -> &[Parameter] {
        match self {
            CellModel::Dmu(m) => &m.params,
            CellModel::Rnn(m) => &m.params,
            CellModel::Lstm(m) => &m.params,
            CellModel::Gru(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        match self {
            CellModel::Dmu(m) => &mut m.params,
            CellModel::Rnn(m) => &mut m.params,
            CellModel::Lstm(m) => &mut m.params,
            CellModel::Gru(m) => &mut m.params,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        bind_params(tape, self.params())
    }

    /// Unroll from zero state. `scale` only affects DMU; baselines do
    /// not scale their memory.
    pub fn unroll(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        xs: &[TensorId],
        scale: f64,
    ) -> Result<CellUnroll, CellError> {
        if xs.is_empty() {
            return Err(CellError::EmptySequence);
        }
        let (batch, _) = tape.shape(xs[0]);
        match self {
            CellModel::Dmu(m) => {
                let unrolled = m.unroll(tape, bound, xs, scale)?;
                Ok(CellUnroll {
                    output: unrolled.output,
                    grad_nodes: unrolled.grad_nodes,
                })
            }
            CellModel::Rnn(m) => {
                let mut states: Vec<TensorId> = m
                    .spec
                    .layer_widths
                    .iter()
                    .map(|&w| tape.zeros(batch, w))
                    .collect();
                for &x in xs {
                    states = m.step(tape, bound, &states, x)?;
                }
                Ok(CellUnroll {
                    output: *states.last().expect("non-empty"),
                    grad_nodes: Vec::new(),
                })
            }
            CellModel::Lstm(m) => {
                let mut states: Vec<(TensorId, TensorId)> = m
                    .spec
                    .layer_widths
                    .iter()
                    .map(|&w| (tape.zeros(batch, w), tape.zeros(batch, w)))
                    .collect();
                for &x in xs {
                    states = m.step(tape, bound, &states, x)?;
                }
                Ok(CellUnroll {
                    output: states.last().expect("non-empty").0,
                    grad_nodes: Vec::new(),
                })
            }
            CellModel::Gru(m) => {
                let mut states: Vec<TensorId> = m
                    .spec
                    .layer_widths
                    .iter()
                    .map(|&w| tape.zeros(batch, w))
                    .collect();
                for &x in xs {
                    states = m.step(tape, bound, &states, x)?;
                }
                Ok(CellUnroll {
                    output: *states.last().expect("non-empty"),
                    grad_nodes: Vec::new(),
                })
            }
        }
    }
}

/// Exact trainable-parameter count of a cell plus a linear readout
/// head, biases included.
pub fn count_weights(
    kind: CellKind,
    arch: &[usize],
    input_width: usize,
    readout_width: usize,
) -> usize {
    let linear = |fan_in: usize, fan_out: usize| fan_in * fan_out + fan_out;
    let gates = |n_gates: usize| {
        let mut total = 0;
        let mut fan_in = input_width;
        for &w in arch {
            total += n_gates * linear(fan_in + w, w);
            fan_in = w;
        }
        total + linear(fan_in, readout_width)
    };
    match kind {
        CellKind::Dmu => {
            let (mem, hidden) = arch.split_last().expect("dmu arch has >= 2 entries");
            let mut dims = vec![input_width + mem];
            dims.extend_from_slice(hidden);
            dims.push(2 * mem);
            let fnn: usize = dims.windows(2).map(|w| linear(w[0], w[1])).sum();
            fnn + linear(*mem, readout_width)
        }
        CellKind::Rnn => gates(1),
        CellKind::Lstm => gates(4),
        CellKind::Gru => gates(3),
    }
}

#[derive(Serialize, Deserialize)]
struct SavedParam {
    name: String,
    rows: usize,
    cols: usize,
    /// Row-major values.
    data: Vec<f64>,
}

/// Save a flat named-parameter list as JSON.
pub fn save_params(path: &Path, params: &[Parameter]) -> Result<(), CellError> {
    let saved: Vec<SavedParam> = params
        .iter()
        .map(|p| SavedParam {
            name: p.name.clone(),
            rows: p.value.nrows(),
            cols: p.value.ncols(),
            data: p.value.iter().cloned().collect(),
        })
        .collect();
    let file = File::create(path).map_err(|e| CellError::ParamIo(e.to_string()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &saved)
        .map_err(|e| CellError::ParamIo(e.to_string()))?;
    Ok(())
}

/// Load parameters by name into an existing model's parameter list.
pub fn load_params(path: &Path, params: &mut [Parameter]) -> Result<(), CellError> {
    let file = File::open(path).map_err(|e| CellError::ParamIo(e.to_string()))?;
    let saved: Vec<SavedParam> = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| CellError::ParamIo(e.to_string()))?;
    for param in params.iter_mut() {
        let found = saved
            .iter()
            .find(|s| s.name == param.name)
            .ok_or_else(|| CellError::MissingParam(param.name.clone()))?;
        let expected = param.value.dim();
        if (found.rows, found.cols) != expected {
            return Err(CellError::ParamShape {
                name: param.name.clone(),
                got: (found.rows, found.cols),
                expected,
            });
        }
        param.value = Array2::from_shape_vec((found.rows, found.cols), found.data.clone())
            .map_err(|e| CellError::ParamIo(e.to_string()))?;
    }
    Ok(())
}
