//! Sample-adaptive gating network and its trainer.
//!
//! A gate is a two-layer MLP (`input → 64 ReLU → M`) followed by a softmax,
//! so its output is a point on the probability simplex over experts.
//! Classification uses a single gate; survival uses one independent gate
//! per time bin. Gates are trained end to end through the fusion rule with
//! the expert logits held fixed.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationState;
use crate::cues::{build_gating_inputs, calibrated_unit_logits, calibrated_units, GatingInput};
use crate::data::{log_sum_exp, softmax_finite, Label, LogitRecord, SplitRole, TaskKind, SIMPLEX_TOL};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::survival::bin_targets;

pub const HIDDEN_UNITS: usize = 64;

// ─── simplex weights ────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Invalid("empty weight vector".into()));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(format!("weights must be nonnegative: {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Invalid(format!("weights sum to {sum}")));
        }
        Ok(SimplexWeights(w))
    }

    pub fn uniform(m: usize) -> Self {
        SimplexWeights(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, expert: usize) -> Self {
        let mut w = vec![0.0; m];
        w[expert] = 1.0;
        SimplexWeights(w)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

// ─── network ────────────────────────────────────────────────────────────────

/// One two-layer gate. Matrices are row-major: `w1` is `hidden × input`,
/// `w2` is `output × hidden`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateNetwork {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

struct ForwardCache {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    weights: Vec<f64>,
}

impl GateNetwork {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        GateNetwork {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    /// Uniform Glorot initialization of both weight matrices, zero biases.
    pub fn glorot<R: Rng>(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let mut net = Self::zeros(input_dim, hidden_dim, output_dim);
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let a2 = (6.0 / (hidden_dim + output_dim) as f64).sqrt();
        net.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..=a1));
        net.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..=a2));
        net
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn check_shapes(&self) -> Result<()> {
        let ok = self.w1.len() == self.hidden_dim * self.input_dim
            && self.b1.len() == self.hidden_dim
            && self.w2.len() == self.output_dim * self.hidden_dim
            && self.b2.len() == self.output_dim
            && self.output_dim >= 1;
        if !ok {
            return Err(Error::Shape("gate parameter arrays do not match their dims".into()));
        }
        if self.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("gate parameters".into()));
        }
        Ok(())
    }

    fn forward_cache(&self, x: &[f64]) -> ForwardCache {
        let pre: Vec<f64> = (0..self.hidden_dim)
            .map(|j| {
                let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
                self.b1[j] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let hidden: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
        let scores: Vec<f64> = (0..self.output_dim)
            .map(|m| {
                let row = &self.w2[m * self.hidden_dim..(m + 1) * self.hidden_dim];
                self.b2[m] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        let weights = softmax_finite(&scores).into_inner();
        ForwardCache { pre, hidden, weights }
    }

    /// `softmax(W2 · relu(W1 · x + b1) + b2)`.
    pub fn forward(&self, x: &[f64]) -> Result<SimplexWeights> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "gate expects {} inputs, got {}",
                self.input_dim,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gate input".into()));
        }
        Ok(SimplexWeights(self.forward_cache(x).weights))
    }

    /// Accumulates `scale · ∂loss/∂θ` given `∂loss/∂w` for the output weights.
    #[allow(clippy::needless_range_loop)]
    fn backward(&self, x: &[f64], cache: &ForwardCache, dweights: &[f64], scale: f64, grad: &mut GateNetwork) {
        let w = &cache.weights;
        let mean: f64 = w.iter().zip(dweights).map(|(w, g)| w * g).sum();
        let dscores: Vec<f64> = w
            .iter()
            .zip(dweights)
            .map(|(w, g)| scale * w * (g - mean))
            .collect();
        let mut dhidden = vec![0.0; self.hidden_dim];
        for (m, ds) in dscores.iter().enumerate() {
            grad.b2[m] += ds;
            let row = m * self.hidden_dim;
            for j in 0..self.hidden_dim {
                grad.w2[row + j] += ds * cache.hidden[j];
                dhidden[j] += ds * self.w2[row + j];
            }
        }
        for j in 0..self.hidden_dim {
            if cache.pre[j] <= 0.0 {
                continue;
            }
            let dpre = dhidden[j];
            grad.b1[j] += dpre;
            let row = j * self.input_dim;
            for (i, xi) in x.iter().enumerate() {
                grad.w1[row + i] += dpre * xi;
            }
        }
    }
}

/// `w = g_θ(x)` for a cue vector.
pub fn gate_forward(x: &GatingInput, theta: &GateNetwork) -> Result<SimplexWeights> {
    theta.forward(&x.x)
}

// ─── parameters of a learnable fusion mode ──────────────────────────────────

/// How fused weights combine the expert distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    /// Normalized weighted geometric mean.
    Product,
    /// Weighted arithmetic mixture.
    Sum,
}

/// What the gate sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateInputKind {
    /// `concat(s, γ, h, h̄, u)`.
    Cues,
    /// Calibrated logits of the unit, flattened.
    Logits,
}

/// Trained state of a learnable fusion mode: one gate for classification,
/// one gate per time bin for survival (no sharing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParameters {
    pub mode: FusionMode,
    pub n_experts: usize,
    pub gates: Vec<GateNetwork>,
}

impl GateParameters {
    /// Glorot-initialized gates for `mode` on the given task.
    pub fn init(mode: FusionMode, task: TaskKind, n_experts: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_gates, input_dim) = gate_layout(mode, task, n_experts)?;
        let gates = (0..n_gates)
            .map(|_| GateNetwork::glorot(input_dim, HIDDEN_UNITS, n_experts, &mut rng))
            .collect();
        Ok(GateParameters {
            mode,
            n_experts,
            gates,
        })
    }

    pub fn zeros(mode: FusionMode, task: TaskKind, n_experts: usize) -> Result<Self> {
        let (n_gates, input_dim) = gate_layout(mode, task, n_experts)?;
        Ok(GateParameters {
            mode,
            n_experts,
            gates: vec![GateNetwork::zeros(input_dim, HIDDEN_UNITS, n_experts); n_gates],
        })
    }

    pub fn combiner(&self) -> Combiner {
        self.mode.combiner().unwrap_or(Combiner::Product)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gates.is_empty() {
            return Err(Error::Shape("no gates".into()));
        }
        if self.mode.gate_input().is_none() {
            return Err(Error::Invalid(format!("{} is not a learnable mode", self.mode)));
        }
        for g in &self.gates {
            g.check_shapes()?;
            if g.output_dim != self.n_experts {
                return Err(Error::Shape(format!(
                    "gate emits {} weights for {} experts",
                    g.output_dim, self.n_experts
                )));
            }
        }
        Ok(())
    }

    pub fn weights(&self, unit: usize, input: &[f64]) -> Result<SimplexWeights> {
        let gate = self.gates.get(unit).ok_or_else(|| {
            Error::Shape(format!("no gate for unit {unit} ({} gates)", self.gates.len()))
        })?;
        gate.forward(input)
    }

    pub fn n_params(&self) -> usize {
        self.gates.iter().map(GateNetwork::n_params).sum()
    }

    fn zeros_like(&self) -> Self {
        GateParameters {
            mode: self.mode,
            n_experts: self.n_experts,
            gates: self
                .gates
                .iter()
                .map(|g| GateNetwork::zeros(g.input_dim, g.hidden_dim, g.output_dim))
                .collect(),
        }
    }
}

fn gate_layout(mode: FusionMode, task: TaskKind, m: usize) -> Result<(usize, usize)> {
    let input = mode
        .gate_input()
        .ok_or_else(|| Error::Invalid(format!("{mode} has no gate")))?;
    if m == 0 {
        return Err(Error::Invalid("pool has no experts".into()));
    }
    let n_gates = if task.is_survival() { task.k() } else { 1 };
    let input_dim = match (input, task.is_survival()) {
        (GateInputKind::Cues, _) => 3 * m + 2,
        (GateInputKind::Logits, false) => m * task.k(),
        (GateInputKind::Logits, true) => m,
    };
    Ok((n_gates, input_dim))
}

// ─── losses and gradients ───────────────────────────────────────────────────

/// One fused prediction inside a training example: a gate input, the M
/// clamped log-distributions to fuse and the observed outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionUnit {
    pub gate: usize,
    pub input: Vec<f64>,
    pub log_probs: Vec<Vec<f64>>,
    pub target: usize,
}

/// A record's contribution to the loss: one unit for classification, one
/// unit per at-risk bin for survival.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub sample_id: String,
    pub units: Vec<FusionUnit>,
}

/// Builds training examples for a learnable mode. Experts enter only
/// through their calibrated distributions, which are constants here.
pub fn build_examples(
    records: &[&LogitRecord],
    calib: &CalibrationState,
    task: TaskKind,
    mode: FusionMode,
) -> Result<Vec<TrainingExample>> {
    let kind = mode
        .gate_input()
        .ok_or_else(|| Error::Invalid(format!("{mode} has no gate")))?;
    records
        .iter()
        .map(|r| {
            let pools = calibrated_units(r, calib, task)?;
            let inputs: Vec<Vec<f64>> = match kind {
                GateInputKind::Cues => build_gating_inputs(r, calib, task)?
                    .into_iter()
                    .map(|g| g.x)
                    .collect(),
                GateInputKind::Logits => calibrated_unit_logits(r, calib, task)?,
            };
            let targets: Vec<Option<usize>> = match (r.label, task) {
                (Label::Class(c), TaskKind::Classification { k }) if (1..=k).contains(&c) => {
                    vec![Some(c - 1)]
                }
                (Label::Survival { bin, event }, TaskKind::Survival { k }) if (1..=k).contains(&bin) => {
                    bin_targets(k, bin, event)
                }
                _ => {
                    return Err(Error::Invalid(format!(
                        "label of {} does not fit a {} task with K = {}",
                        r.sample_id,
                        task.name(),
                        task.k()
                    )))
                }
            };
            let units = pools
                .into_iter()
                .zip(inputs)
                .zip(targets)
                .enumerate()
                .filter_map(|(gate, ((pool, input), target))| {
                    target.map(|target| FusionUnit {
                        gate,
                        input,
                        log_probs: pool.iter().map(|p| p.clamped_log()).collect(),
                        target,
                    })
                })
                .collect();
            Ok(TrainingExample {
                sample_id: r.sample_id.clone(),
                units,
            })
        })
        .collect()
}

/// Loss of one unit under weights `w` and, if requested, `∂loss/∂w`.
fn unit_loss(unit: &FusionUnit, w: &[f64], combiner: Combiner, dw: Option<&mut [f64]>) -> f64 {
    let n_out = unit.log_probs[0].len();
    let t = unit.target;
    match combiner {
        Combiner::Product => {
            let mixed: Vec<f64> = (0..n_out)
                .map(|y| w.iter().zip(&unit.log_probs).map(|(w, lp)| w * lp[y]).sum())
                .collect();
            let lse = log_sum_exp(&mixed);
            if let Some(dw) = dw {
                let q: Vec<f64> = mixed.iter().map(|l| (l - lse).exp()).collect();
                for (g, lp) in dw.iter_mut().zip(&unit.log_probs) {
                    let expected: f64 = q.iter().zip(lp).map(|(q, l)| q * l).sum();
                    *g = expected - lp[t];
                }
            }
            lse - mixed[t]
        }
        Combiner::Sum => {
            let q_t: f64 = w
                .iter()
                .zip(&unit.log_probs)
                .map(|(w, lp)| w * lp[t].exp())
                .sum();
            if let Some(dw) = dw {
                for (g, lp) in dw.iter_mut().zip(&unit.log_probs) {
                    *g = -lp[t].exp() / q_t;
                }
            }
            -q_t.ln()
        }
    }
}

fn example_loss(params: &GateParameters, ex: &TrainingExample) -> f64 {
    let combiner = params.combiner();
    ex.units
        .iter()
        .map(|u| {
            let w = params.gates[u.gate].forward_cache(&u.input).weights;
            unit_loss(u, &w, combiner, None)
        })
        .sum()
}

/// Mean per-example loss (cross-entropy of the fused distribution, or the
/// survival NLL summed over at-risk bins).
pub fn mean_loss(params: &GateParameters, batch: &[TrainingExample]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.iter().map(|ex| example_loss(params, ex)).sum::<f64>() / batch.len() as f64
}

/// Mean loss and its exact gradient with respect to every gate parameter.
pub fn gate_backward(params: &GateParameters, batch: &[&TrainingExample]) -> Result<(f64, GateParameters)> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let combiner = params.combiner();
    let mut grad = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut dw = vec![0.0; params.n_experts];
    for ex in batch {
        for u in &ex.units {
            let gate = params.gates.get(u.gate).ok_or_else(|| {
                Error::Shape(format!("unit refers to missing gate {}", u.gate))
            })?;
            if u.input.len() != gate.input_dim || u.log_probs.len() != params.n_experts {
                return Err(Error::Shape(format!("unit of {} does not fit the gate", ex.sample_id)));
            }
            let cache = gate.forward_cache(&u.input);
            total += unit_loss(u, &cache.weights, combiner, Some(&mut dw));
            gate.backward(&u.input, &cache, &dw, scale, &mut grad.gates[u.gate]);
        }
    }
    Ok((total * scale, grad))
}

// ─── training ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 200,
            patience: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Per-epoch losses. Epoch 0 holds the losses of the initial parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingTrace {
    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.get(self.best_epoch).map(|e| e.val_loss)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss"])?;
        for e in &self.epochs {
            out.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.val_loss.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

struct Adam {
    first: GateParameters,
    second: GateParameters,
    step: i32,
}

impl Adam {
    fn new(params: &GateParameters) -> Self {
        Adam {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut GateParameters, grad: &GateParameters, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        let gates = params
            .gates
            .iter_mut()
            .zip(&grad.gates)
            .zip(self.first.gates.iter_mut().zip(self.second.gates.iter_mut()));
        for ((p, g), (m1, m2)) in gates {
            let slices = p
                .slices_mut()
                .into_iter()
                .zip(g.slices())
                .zip(m1.slices_mut().into_iter().zip(m2.slices_mut()));
            for ((p, g), (m1, m2)) in slices {
                for i in 0..p.len() {
                    m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
                    m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                    p[i] -= cfg.learning_rate * (m1[i] / c1) / ((m2[i] / c2).sqrt() + cfg.epsilon);
                }
            }
        }
    }
}

fn diverged(epoch: usize, trace: &TrainingTrace, what: &str) -> Error {
    let mut detail = format!("non-finite {what}; recent epochs:");
    for e in trace.epochs.iter().rev().take(5).rev() {
        let _ = write!(detail, " [{} train={} val={}]", e.epoch, e.train_loss, e.val_loss);
    }
    Error::Diverged { epoch, detail }
}

/// Minibatch Adam with early stopping on validation loss. Returns the
/// parameters of the best validation epoch (the initial parameters count as
/// epoch 0).
pub fn train_on_examples(
    mut params: GateParameters,
    train: &[TrainingExample],
    val: &[TrainingExample],
    cfg: &TrainConfig,
) -> Result<(GateParameters, TrainingTrace)> {
    cfg.validate()?;
    params.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("gate training needs nonempty train and validation sets".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut adam = Adam::new(&params);
    let mut trace = TrainingTrace::default();

    let val_loss = mean_loss(&params, val);
    trace.epochs.push(EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&params, train),
        val_loss,
    });
    if !val_loss.is_finite() {
        return Err(diverged(0, &trace, "validation loss"));
    }
    let mut best = (val_loss, params.clone());
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = gate_backward(&params, &batch)?;
            if !loss.is_finite() {
                return Err(diverged(epoch, &trace, "training loss"));
            }
            epoch_loss += loss * batch.len() as f64;
            adam.update(&mut params, &grad, cfg);
        }
        let val_loss = mean_loss(&params, val);
        trace.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
        });
        if !val_loss.is_finite() {
            return Err(diverged(epoch, &trace, "validation loss"));
        }
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            trace.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                trace.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.1, trace))
}

/// Trains a learnable fusion mode on explicit train and validation records.
pub fn train_gate_split(
    train: &[&LogitRecord],
    val: &[&LogitRecord],
    calib: &CalibrationState,
    task: TaskKind,
    mode: FusionMode,
    cfg: &TrainConfig,
) -> Result<(GateParameters, TrainingTrace)> {
    let train_ex = build_examples(train, calib, task, mode)?;
    let val_ex = build_examples(val, calib, task, mode)?;
    let params = GateParameters::init(mode, task, calib.n_experts(), cfg.seed)?;
    train_on_examples(params, &train_ex, &val_ex, cfg)
}

/// Trains on the `train` role with early stopping on the `validation` role.
pub fn train_gate(
    dataset: &[LogitRecord],
    calib: &CalibrationState,
    task: TaskKind,
    mode: FusionMode,
    cfg: &TrainConfig,
) -> Result<(GateParameters, TrainingTrace)> {
    let pick = |role| -> Vec<&LogitRecord> {
        dataset.iter().filter(|r| r.split_role == role).collect()
    };
    train_gate_split(
        &pick(SplitRole::Train),
        &pick(SplitRole::Validation),
        calib,
        task,
        mode,
        cfg,
    )
}
