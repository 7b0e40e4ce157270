//! Mean-Frobenius loss, Adam, and the mini-batch training loop with
//! best-on-validation model selection.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_difference_check, GradCheck, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{rng_from, MatchingMatrix, Sample};
use crate::model::{forward_batch, ModelConfig, ModelParams, ParamVars};

fn default_batch_size() -> usize {
    128
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_iterations() -> usize {
    5000
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_validation_every() -> usize {
    50
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Optimiser steps, one mini-batch each.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_epsilon")]
    pub adam_epsilon: f64,
    #[serde(default = "default_validation_every")]
    pub validation_every: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            iterations: default_iterations(),
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_epsilon(),
            validation_every: default_validation_every(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.iterations == 0 || self.validation_every == 0 {
            return Err(Error::invalid(
                "batch_size, iterations and validation_every must be positive",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and non-negative"));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return Err(Error::invalid("adam_epsilon must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub first: ModelParams,
    pub second: ModelParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> AdamState {
        AdamState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

fn check_target(op: &Tensor, target: &MatchingMatrix) -> Result<()> {
    if op.shape() != [target.rows(), target.cols()] {
        return Err(Error::ShapeMismatch {
            op: "loss",
            left: op.shape().to_vec(),
            right: vec![target.rows(), target.cols()],
        });
    }
    Ok(())
}

/// Mean over the batch of `||OP - M||_F`.
pub fn loss(outputs: &[Tensor], targets: &[MatchingMatrix]) -> Result<f64> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::invalid(format!(
            "loss over {} outputs and {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (op, m) in outputs.iter().zip(targets) {
        check_target(op, m)?;
        let dense = m.to_dense();
        total += op
            .data()
            .iter()
            .zip(dense.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    Ok(total / outputs.len() as f64)
}

/// Differentiable form of [`loss`] over tape variables.
pub fn loss_on_tape(tape: &mut Tape<'_>, outputs: &[Var], targets: &[MatchingMatrix]) -> Result<Var> {
    if outputs.len() != targets.len() || outputs.is_empty() {
        return Err(Error::invalid("loss needs equally many outputs and targets"));
    }
    let mut norms = Vec::with_capacity(outputs.len());
    for (&op, m) in outputs.iter().zip(targets) {
        check_target(tape.value(op), m)?;
        let target = tape.constant(m.to_dense());
        let residual = tape.sub(op, target)?;
        norms.push(tape.frobenius_norm(residual)?);
    }
    let total = tape.add_n(&norms)?;
    tape.scale(total, 1.0 / outputs.len() as f64)
}

/// One bias-corrected Adam update. Rejects non-finite gradients before
/// touching any state.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let names = params.names();
    let grad_tensors = grads.tensors();
    if grad_tensors.len() != names.len() {
        return Err(Error::invalid("gradients do not cover every parameter"));
    }
    for (g, name) in grad_tensors.iter().zip(&names) {
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let correct1 = 1.0 - b1.powf(t);
    let correct2 = 1.0 - b2.powf(t);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_epsilon;

    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_tensors)
        .zip(state.first.tensors_mut())
        .zip(state.second.tensors_mut())
    {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (1.0 - b1) * gi;
            vd[i] = b2 * vd[i] + (1.0 - b2) * gi * gi;
            let m_hat = md[i] / correct1;
            let v_hat = vd[i] / correct2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Loss and gradients over one batch.
pub fn loss_and_gradients(
    batch: &[&Sample],
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<(f64, ModelParams)> {
    let mut tape = Tape::new();
    let vars = ParamVars::leaves(&mut tape, params);
    let outs = forward_batch(&mut tape, &vars, batch, cfg)?;
    let ops: Vec<Var> = outs.iter().map(|o| o.op).collect();
    let targets: Vec<MatchingMatrix> = batch.iter().map(|s| s.ground_truth()).collect();
    let loss = loss_on_tape(&mut tape, &ops, &targets)?;
    let mut grads = tape.backward(loss)?;
    let value = tape.value(loss).item();
    Ok((value, vars.gradients(cfg, &mut grads)?))
}

/// Central-difference check of the batch loss with respect to every
/// parameter tensor. Returns `(name, check)` in [`ModelParams::names`] order.
/// Costs two forward passes per parameter entry.
pub fn check_gradients(
    batch: &[&Sample],
    params: &ModelParams,
    cfg: &ModelConfig,
    h: f64,
) -> Result<Vec<(String, GradCheck)>> {
    params.check_shapes(cfg)?;
    let targets: Vec<MatchingMatrix> = batch.iter().map(|s| s.ground_truth()).collect();
    let names = params.names();
    let tensors = params.tensors();
    let mut out = Vec::with_capacity(names.len());
    for (index, (name, tensor)) in names.into_iter().zip(tensors).enumerate() {
        let check = finite_difference_check(
            |tape, x| {
                let mut vars = ParamVars::owned_constants(tape, params);
                vars.replace(index, x)?;
                let outs = forward_batch(tape, &vars, batch, cfg)?;
                let ops: Vec<Var> = outs.iter().map(|o| o.op).collect();
                loss_on_tape(tape, &ops, &targets)
            },
            tensor,
            h,
        )?;
        out.push((name, check));
    }
    Ok(out)
}

/// Samples per forward pass when only the loss is needed.
const EVAL_CHUNK: usize = 128;

/// Mean loss over `samples`, evaluated in fixed-size chunks without
/// gradient tracking.
pub fn evaluate_loss(samples: &[Sample], params: &ModelParams, cfg: &ModelConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate loss on an empty set"));
    }
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let vars = ParamVars::constants(&mut tape, params);
        let refs: Vec<&Sample> = chunk.iter().collect();
        let outs = forward_batch(&mut tape, &vars, &refs, cfg)?;
        let ops: Vec<Tensor> = outs.iter().map(|o| tape.value(o.op).clone()).collect();
        let targets: Vec<MatchingMatrix> = chunk.iter().map(Sample::ground_truth).collect();
        total += loss(&ops, &targets)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss (final ones when there is
    /// no validation set).
    pub best: ModelParams,
    pub best_iteration: usize,
    pub best_validation_loss: Option<f64>,
    pub history: Vec<HistoryRow>,
}

/// Trains from a fresh initialisation; see [`train_with_progress`].
pub fn train(
    train_set: &[Sample],
    valid_set: &[Sample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(train_set, valid_set, model_cfg, train_cfg, |_| {})
}

/// Each iteration draws `batch_size` samples uniformly with replacement,
/// takes one Adam step on the batch loss, and every `validation_every`
/// iterations (and at the last one) measures the full validation loss.
/// `progress` sees every row that carries a validation loss.
pub fn train_with_progress(
    train_set: &[Sample],
    valid_set: &[Sample],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut progress: impl FnMut(&HistoryRow),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    train_cfg.validate()?;
    let mut params = ModelParams::init(model_cfg)?;
    let mut state = AdamState::new(&params);
    let mut rng = rng_from(train_cfg.seed);
    let mut history = Vec::with_capacity(train_cfg.iterations);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for iteration in 1..=train_cfg.iterations {
        let batch: Vec<&Sample> = (0..train_cfg.batch_size)
            .map(|_| &train_set[rng.random_range(0..train_set.len())])
            .collect();
        let (train_loss, grads) = loss_and_gradients(&batch, &params, model_cfg)?;
        adam_step(&mut params, &grads, &mut state, train_cfg)?;

        let due = iteration % train_cfg.validation_every == 0 || iteration == train_cfg.iterations;
        let valid_loss = if due && !valid_set.is_empty() {
            Some(evaluate_loss(valid_set, &params, model_cfg)?)
        } else {
            None
        };
        if let Some(vl) = valid_loss {
            if best.as_ref().is_none_or(|(b, _, _)| vl < *b) {
                best = Some((vl, iteration, params.clone()));
            }
        }
        let row = HistoryRow {
            iteration,
            train_loss,
            valid_loss,
        };
        if valid_loss.is_some() {
            progress(&row);
        }
        history.push(row);
    }

    Ok(match best {
        Some((loss, iteration, best)) => TrainOutcome {
            best,
            best_iteration: iteration,
            best_validation_loss: Some(loss),
            history,
        },
        None => TrainOutcome {
            best: params,
            best_iteration: train_cfg.iterations,
            best_validation_loss: None,
            history,
        },
    })
}

/// `iteration,train_loss,valid_loss` with an empty field when the
/// validation loss was not measured.
pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("iteration,train_loss,valid_loss\n");
    for row in history {
        let valid = row.valid_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{}", row.iteration, row.train_loss, valid).expect("writing to a String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn loss_examples() {
        let m = MatchingMatrix::from_choices(vec![1, 0], 3).unwrap();
        let exact = m.to_dense();
        assert_eq!(loss(&[exact.clone()], &[m.clone()]).unwrap(), 0.0);

        let mut off = exact.clone();
        off.data_mut()[2] += 0.3;
        assert!((loss(&[off], &[m.clone()]).unwrap() - 0.3).abs() < 1e-15);

        let single = MatchingMatrix::from_choices(vec![0], 1).unwrap();
        let a = op(&[1, 1], &[2.0]);
        let b = op(&[1, 1], &[4.0]);
        let l = loss(&[a, b], &[single.clone(), single.clone()]).unwrap();
        assert_eq!(l, 2.0);

        assert!(loss(&[op(&[1, 2], &[0.5, 0.5])], &[single.clone()]).is_err());
        assert!(loss(&[], &[]).is_err());
    }

    #[test]
    fn zero_residual_gradient_is_zero_not_nan() {
        let m = MatchingMatrix::from_choices(vec![1], 2).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(m.to_dense());
        let l = loss_on_tape(&mut tape, &[x], &[m]).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);
        let g = tape.backward(l).unwrap().wrt(x);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    fn scalar_params(value: f64) -> (ModelConfig, ModelParams) {
        let cfg = ModelConfig {
            num_layers: 1,
            layer_dims: vec![1, 1],
            layer_activations: vec![crate::model::Activation::Identity],
            ntn_k: 1,
            seed: 0,
        };
        let mut p = ModelParams::init(&cfg).unwrap();
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = value);
        }
        (cfg, p)
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (_, mut p) = scalar_params(1.0);
        let mut g = p.zeros_like();
        g.gcn[0].data_mut()[0] = -3.5;
        g.head_b.data_mut()[0] = 0.02;
        let mut state = AdamState::new(&p);
        let cfg = TrainConfig::default();
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        assert!((p.gcn[0].data()[0] - 1.001).abs() < 1e-9);
        assert!((p.head_b.data()[0] - 0.999).abs() < 1e-6);
        assert_eq!(p.ntn[0].b.data()[0], 1.0);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr_are_identity() {
        let (_, mut p) = scalar_params(0.25);
        let orig = p.clone();
        let zero = p.zeros_like();
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &zero, &mut state, &TrainConfig::default()).unwrap();
        assert_eq!(p, orig);

        let mut g = p.zeros_like();
        g.tensors_mut().into_iter().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x = 0.7));
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        adam_step(&mut p, &g, &mut state, &cfg).unwrap();
        assert_eq!(p, orig);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let (_, mut p) = scalar_params(0.25);
        let orig = p.clone();
        let mut g = p.zeros_like();
        g.ntn[0].v.data_mut()[1] = f64::NAN;
        let mut state = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut state, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "ntn[0].v"));
        assert_eq!(p, orig);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            adam_beta1: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str("{\"iterations\": 7}").unwrap();
        assert_eq!(parsed.iterations, 7);
        assert_eq!(parsed.batch_size, 128);
    }

    #[test]
    fn history_csv_format() {
        let rows = [
            HistoryRow { iteration: 1, train_loss: 0.5, valid_loss: None },
            HistoryRow { iteration: 2, train_loss: 0.25, valid_loss: Some(0.75) },
        ];
        assert_eq!(history_csv(&rows), "iteration,train_loss,valid_loss\n1,0.5,\n2,0.25,0.75\n");
    }
}
