//! BPTT training loop: minibatching, Adam/SGD, per-episode scaling
//! updates, and threshold-based early stopping.
//!
//! One episode is one minibatch forward/backward pass; the scaling
//! controller's episode counter advances once per minibatch. Loss is
//! computed only at the final timestep, which is where all three
//! synthetic tasks score their output. Training stops on the first
//! epoch whose validation loss reaches the stop threshold, or when the
//! epoch budget runs out; any non-finite loss marks the run diverged
//! and halts it.

use crate::autodiff::{Parameter, Tape, TensorId};
use crate::cells::{CellError, CellKind, CellModel};
use crate::scaling::{capture_norms, ScaleController};
use crate::seed::derive_seed;
use crate::tasks::{make_split, Sample, Target, Task, TrainStream};
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Hyperparameters of the memory-scaling controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub enabled: bool,
    pub p: f64,
    pub epsilon: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        // p = 1, epsilon = 0.2 are the published settings.
        ScalingConfig {
            enabled: true,
            p: 1.0,
            epsilon: 0.2,
        }
    }
}

impl ScalingConfig {
    pub fn controller(&self) -> ScaleController {
        if self.enabled {
            ScaleController::new(self.p, self.epsilon)
        } else {
            ScaleController::disabled()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Training knobs. The published experiments defer learning rates and
/// budgets to unavailable supplemental material; these defaults are
/// this crate's documented choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub samples_per_epoch: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub stop_threshold: f64,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm clip threshold; off by default.
    pub clip: Option<f64>,
    pub scaling: ScalingConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 300,
            samples_per_epoch: 1024,
            val_size: 64,
            test_size: 64,
            stop_threshold: 1e-6,
            learning_rate: 3e-3,
            optimizer: OptimizerKind::Adam,
            clip: None,
            scaling: ScalingConfig::default(),
            seed: 0,
        }
    }
}

/// Adam (with bias correction) or plain SGD over a flat parameter
/// list, with optional global gradient-norm clipping.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip: Option<f64>,
    step_count: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Optimizer {
    pub fn adam(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: None,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Sgd,
            ..Optimizer::adam(learning_rate)
        }
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::adam(learning_rate),
            OptimizerKind::Sgd => Optimizer::sgd(learning_rate),
        }
    }

    pub fn with_clip(mut self, clip: Option<f64>) -> Self {
        self.clip = clip;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Apply one update. `grads` must align with `params`.
    pub fn step(&mut self, params: &mut [&mut Parameter], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len());
        let mut scale = 1.0;
        if let Some(clip) = self.clip {
            let norm: f64 = grads
                .iter()
                .flat_map(|g| g.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm > clip {
                scale = clip / norm;
            }
        }
        self.step_count += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (param, grad) in params.iter_mut().zip(grads) {
                    param.value -= &(grad * (self.learning_rate * scale));
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
                    self.v = grads.iter().map(|g| Array2::zeros(g.dim())).collect();
                }
                let t = self.step_count as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for ((param, grad), (m, v)) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                {
                    let g = grad * scale;
                    *m = &*m * self.beta1 + &g * (1.0 - self.beta1);
                    *v = &*v * self.beta2 + &(&g * &g) * (1.0 - self.beta2);
                    let update = (&*m / bc1) / ((&*v / bc2).mapv(f64::sqrt) + self.eps);
                    param.value -= &(update * self.learning_rate);
                }
            }
        }
    }
}

/// A recurrent cell with a linear readout head. The Adding task scores
/// the readout directly with MSE; the classification tasks feed it to
/// softmax cross-entropy.
#[derive(Debug, Clone)]
pub struct Model {
    pub cell: CellModel,
    readout_weight: Parameter,
    readout_bias: Parameter,
}

impl Model {
    pub fn new(
        kind: CellKind,
        arch: &[usize],
        input_width: usize,
        output_width: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, CellError> {
        let cell = CellModel::init(kind, arch, input_width, rng)?;
        let fan_in = cell.output_width();
        let limit = (6.0 / (fan_in + output_width) as f64).sqrt();
        let readout_weight = Parameter::new(
            "readout.weight",
            Array2::from_shape_fn((fan_in, output_width), |_| rng.gen_range(-limit..limit)),
        );
        let readout_bias = Parameter::new("readout.bias", Array2::zeros((1, output_width)));
        Ok(Model {
            cell,
            readout_weight,
            readout_bias,
        })
    }

    pub fn params(&self) -> Vec<&Parameter> {
        let mut all: Vec<&Parameter> = self.cell.params().iter().collect();
        all.push(&self.readout_weight);
        all.push(&self.readout_bias);
        all
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut all: Vec<&mut Parameter> = self.cell.params_mut().iter_mut().collect();
        all.push(&mut self.readout_weight);
        all.push(&mut self.readout_bias);
        all
    }
}

/// A minibatch of equal-length samples stacked into dense arrays.
pub struct Batch {
    /// One `(batch, input_width)` array per timestep.
    pub inputs: Vec<Array2<f64>>,
    pub targets: BatchTargets,
}

pub enum BatchTargets {
    Real(Array2<f64>),
    Class(Vec<usize>),
}

impl Batch {
    /// Stack samples; all must share the same length.
    pub fn from_samples(samples: &[Sample], input_width: usize) -> Batch {
        let steps = samples[0].inputs.len();
        let batch = samples.len();
        let mut inputs = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut arr = Array2::zeros((batch, input_width));
            for (r, sample) in samples.iter().enumerate() {
                for (c, &val) in sample.inputs[t].iter().enumerate() {
                    arr[[r, c]] = val;
                }
            }
            inputs.push(arr);
        }
        let targets = match samples[0].target {
            Target::Real(_) => {
                let mut arr = Array2::zeros((batch, 1));
                for (r, sample) in samples.iter().enumerate() {
                    if let Target::Real(v) = sample.target {
                        arr[[r, 0]] = v;
                    }
                }
                BatchTargets::Real(arr)
            }
            Target::Class(_) => {
                let classes = samples
                    .iter()
                    .map(|s| match s.target {
                        Target::Class(c) => c,
                        Target::Real(_) => unreachable!("mixed targets in one batch"),
                    })
                    .collect();
                BatchTargets::Class(classes)
            }
        };
        Batch { inputs, targets }
    }
}

/// One batch forward pass, ready for backward.
pub struct ForwardPass {
    pub loss: TensorId,
    /// DMU scaled-memory handles; empty for baselines.
    pub grad_nodes: Vec<TensorId>,
    /// Bound parameter leaves, aligned with `Model::params`.
    pub param_ids: Vec<TensorId>,
}

/// Forward one batch on a fresh tape, producing the scalar loss node.
pub fn build_loss(
    model: &Model,
    tape: &mut Tape,
    batch: &Batch,
    scale: f64,
) -> Result<ForwardPass, CellError> {
    let bound = model.cell.bind(tape);
    let w = tape.leaf(model.readout_weight.value.clone());
    let b = tape.leaf(model.readout_bias.value.clone());
    let mut param_ids = bound.ids.clone();
    param_ids.push(w);
    param_ids.push(b);
    let xs: Vec<_> = batch.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let unrolled = model.cell.unroll(tape, &bound, &xs, scale)?;
    let lin = tape.matmul(unrolled.output, w)?;
    let pred = tape.add_bias(lin, b)?;
    let loss = match &batch.targets {
        BatchTargets::Real(target) => tape.mse_loss(pred, target)?,
        BatchTargets::Class(classes) => tape.cross_entropy_loss(pred, classes)?,
    };
    Ok(ForwardPass {
        loss,
        grad_nodes: unrolled.grad_nodes,
        param_ids,
    })
}

/// Mean loss of the model over a sample set, no gradients.
pub fn evaluate(model: &Model, samples: &[Sample], scale: f64) -> Result<f64, CellError> {
    let width = model.cell.input_width();
    let mut total = 0.0;
    for sample in samples {
        let mut tape = Tape::new();
        let batch = Batch::from_samples(std::slice::from_ref(sample), width);
        let pass = build_loss(model, &mut tape, &batch, scale)?;
        total += tape.value(pass.loss)[[0, 0]];
    }
    Ok(total / samples.len() as f64)
}

/// One epoch's record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub scale_s: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    BudgetExhausted,
    Diverged,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::BudgetExhausted => "budget_exhausted",
            RunStatus::Diverged => "diverged",
        }
    }
}

/// Full history of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub history: Vec<EpochRecord>,
    pub status: RunStatus,
    pub test_loss: Option<f64>,
}

/// One pass over the epoch's training stream. Per minibatch: unroll,
/// final-step loss, backward, norm capture, optimizer step, scaling
/// update. The controller is driven by the gradients, not by the
/// optimizer, so it updates even at learning rate zero.
pub fn train_epoch(
    model: &mut Model,
    controller: &mut ScaleController,
    optimizer: &mut Optimizer,
    task: &Task,
    stream: &TrainStream,
    validation: &[Sample],
    config: &TrainConfig,
    epoch: usize,
) -> Result<EpochRecord, CellError> {
    let start = Instant::now();
    let mut rng = stream.epoch_rng(epoch);
    let n_batches = (config.samples_per_epoch / config.batch_size).max(1);
    let width = task.input_width();
    let mut train_loss_sum = 0.0;
    for _ in 0..n_batches {
        let len = task.pick_len(&mut rng);
        let samples: Vec<Sample> = (0..config.batch_size)
            .map(|_| task.sample_with_len(len, &mut rng))
            .collect();
        let batch = Batch::from_samples(&samples, width);
        let mut tape = Tape::new();
        let pass = build_loss(model, &mut tape, &batch, controller.scale())?;
        let loss_value = tape.value(pass.loss)[[0, 0]];
        train_loss_sum += loss_value;
        if !loss_value.is_finite() {
            return Ok(EpochRecord {
                epoch,
                train_loss: loss_value,
                val_loss: f64::NAN,
                scale_s: controller.scale(),
                wall_time: start.elapsed().as_secs_f64(),
            });
        }
        tape.backward(pass.loss)?;
        let log = capture_norms(&tape, &pass.grad_nodes)?;
        let grads: Vec<Array2<f64>> = pass
            .param_ids
            .iter()
            .map(|&id| tape.adjoint(id).expect("backward ran"))
            .collect();
        let mut params = model.params_mut();
        optimizer.step(&mut params, &grads);
        controller.update(&log);
    }
    let train_loss = train_loss_sum / n_batches as f64;
    let val_loss = evaluate(model, validation, controller.scale())?;
    Ok(EpochRecord {
        epoch,
        train_loss,
        val_loss,
        scale_s: controller.scale(),
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Train until the validation loss reaches the stop threshold or the
/// epoch budget is exhausted. Divergence is recorded, not thrown.
pub fn run_until_stop(
    model: &mut Model,
    task: &Task,
    config: &TrainConfig,
) -> Result<RunReport, CellError> {
    let split = make_split(task, config.val_size, config.test_size, derive_seed(config.seed, 1));
    let mut controller = config.scaling.controller();
    let mut optimizer =
        Optimizer::new(config.optimizer, config.learning_rate).with_clip(config.clip);
    let mut history = Vec::new();
    let mut status = RunStatus::BudgetExhausted;
    for epoch in 1..=config.max_epochs {
        let record = train_epoch(
            model,
            &mut controller,
            &mut optimizer,
            task,
            &split.train,
            &split.validation,
            config,
            epoch,
        )?;
        let finite = record.train_loss.is_finite() && record.val_loss.is_finite();
        let val_loss = record.val_loss;
        history.push(record);
        if !finite {
            status = RunStatus::Diverged;
            break;
        }
        if val_loss <= config.stop_threshold {
            status = RunStatus::Converged;
            break;
        }
    }
    if config.max_epochs == 0 {
        status = RunStatus::BudgetExhausted;
    }
    let test_loss = if status == RunStatus::Diverged {
        None
    } else {
        Some(evaluate(model, &split.test, controller.scale())?)
    };
    Ok(RunReport {
        history,
        status,
        test_loss,
    })
}

/// Convenience constructor: model seeded from the config, sized for
/// the task.
pub fn build_model(
    kind: CellKind,
    arch: &[usize],
    task: &Task,
    seed: u64,
) -> Result<Model, CellError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    Model::new(kind, arch, task.input_width(), task.output_width(), &mut rng)
}
