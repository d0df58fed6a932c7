//! Mini-batch training loop: seeded shuffling, decaying learning rate,
//! shrinking batch size, Adam, and early stopping on validation loss.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    adam_step, backward, evaluate, forward, loss, rng_stream, AdamState, DropoutMask,
    LstmParams, NeuralError,
};
use crate::dataset::WindowExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_n: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub lr_initial: f64,
    /// Subtracted from the rate once per schedule step.
    pub lr_decay: f64,
    pub lr_floor: f64,
    /// Epochs per learning-rate step; the batch size shrinks on the same
    /// boundaries.
    pub lr_step_epochs: usize,
    /// Non-increasing batch sizes within [32, 128]; the last entry holds for
    /// all remaining steps.
    pub batch_schedule: Vec<usize>,
    pub dropout_rate: f64,
    /// Stop after this many epochs without a new validation-loss minimum.
    pub patience: usize,
    /// Stop once validation loss exceeds this multiple of its minimum.
    pub divergence_factor: f64,
    /// Optional global gradient-norm clip; ships disabled.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_n: 8,
            max_epochs: 100,
            seed: 0,
            lr_initial: 0.001,
            lr_decay: 0.0003,
            lr_floor: 0.0001,
            lr_step_epochs: 15,
            batch_schedule: vec![128, 64, 32],
            dropout_rate: 0.5,
            patience: 20,
            divergence_factor: 1.05,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |msg: String| Err(NeuralError::InvalidConfig(msg));
        if self.hidden_n == 0 || self.max_epochs == 0 || self.lr_step_epochs == 0 {
            return bad("hidden_n, max_epochs, lr_step_epochs must be >= 1".into());
        }
        if self.lr_floor > self.lr_initial {
            return bad(format!(
                "lr_floor {} exceeds lr_initial {}",
                self.lr_floor, self.lr_initial
            ));
        }
        if self.batch_schedule.is_empty() {
            return bad("batch_schedule must not be empty".into());
        }
        if self.batch_schedule.iter().any(|&b| !(32..=128).contains(&b)) {
            return bad(format!("batch sizes must lie in [32, 128]: {:?}", self.batch_schedule));
        }
        if self.batch_schedule.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!("batch schedule must be non-increasing: {:?}", self.batch_schedule));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1): {}", self.dropout_rate));
        }
        if self.patience == 0 || self.divergence_factor < 1.0 {
            return bad("patience must be >= 1 and divergence_factor >= 1".into());
        }
        Ok(())
    }

    /// lr(epoch) = max(floor, initial - decay * (epoch / step)), the step
    /// division truncating.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_step_epochs) as f64;
        (self.lr_initial - self.lr_decay * steps).max(self.lr_floor)
    }

    /// Batch size shrinks along the schedule on the lr-step boundaries.
    pub fn batch_for_epoch(&self, epoch: usize) -> usize {
        let step = (epoch / self.lr_step_epochs).min(self.batch_schedule.len() - 1);
        self.batch_schedule[step]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    /// No validation-loss improvement for `patience` epochs.
    Patience,
    /// Validation loss exceeded divergence_factor times its minimum.
    Divergence,
    MaxEpochs,
}

/// Pure early-stopping observer: feed it one validation loss per epoch and
/// it reports when the patience or divergence rule fires.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    divergence_factor: f64,
    best: f64,
    best_epoch: usize,
    seen_any: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize, divergence_factor: f64) -> Self {
        Self { patience, divergence_factor, best: f64::INFINITY, best_epoch: 0, seen_any: false }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> Option<StopReason> {
        if !self.seen_any || val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.seen_any = true;
            return None;
        }
        if val_loss > self.divergence_factor * self.best {
            return Some(StopReason::Divergence);
        }
        if epoch - self.best_epoch >= self.patience {
            return Some(StopReason::Patience);
        }
        None
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with minimum validation loss.
    pub params: LstmParams,
    pub history: Vec<HistoryRow>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stop: StopReason,
}

fn check_homogeneous(examples: &[WindowExample], f: usize, t: usize) -> Result<(), NeuralError> {
    for e in examples {
        if e.features.len() != t || e.features.iter().any(|row| row.len() != f) {
            return Err(NeuralError::ShapeMismatch(format!(
                "example at edge {} is not {t}x{f}",
                e.prediction_index
            )));
        }
    }
    Ok(())
}

/// Trains from a fresh seeded initialization and returns the parameters of
/// the best validation epoch. Shuffling draws batch membership; gradients
/// within a batch accumulate in ascending example order, so parallel and
/// serial runs produce bit-identical results.
pub fn train(
    train_set: &[WindowExample],
    val_set: &[WindowExample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NeuralError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NeuralError::EmptyInput);
    }
    let t = train_set[0].features.len();
    let f = train_set[0].features.first().map_or(0, Vec::len);
    if t == 0 || f == 0 {
        return Err(NeuralError::ShapeMismatch("examples have no rows or columns".into()));
    }
    check_homogeneous(train_set, f, t)?;
    check_homogeneous(val_set, f, t)?;

    let mut params = LstmParams::init(cfg.hidden_n, f, cfg.seed);
    let mut adam = AdamState::new(cfg.hidden_n, f);
    let mut shuffle_rng = rng_stream(cfg.seed, 1);
    let mut dropout_rng = rng_stream(cfg.seed, 2);

    let mut stopper = EarlyStopping::new(cfg.patience, cfg.divergence_factor);
    let mut history = Vec::new();
    let mut best_params = params.clone();
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stop = StopReason::MaxEpochs;

    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.max_epochs {
        let lr = cfg.lr_for_epoch(epoch);
        let batch_size = cfg.batch_for_epoch(epoch);
        indices.shuffle(&mut shuffle_rng);

        for chunk in indices.chunks(batch_size) {
            let mut batch: Vec<usize> = chunk.to_vec();
            batch.sort_unstable(); // fixed accumulation order
            let with_masks: Vec<(usize, Option<DropoutMask>)> = batch
                .into_iter()
                .map(|i| {
                    let mask = (cfg.dropout_rate > 0.0)
                        .then(|| DropoutMask::draw(&mut dropout_rng, cfg.hidden_n, cfg.dropout_rate));
                    (i, mask)
                })
                .collect();

            let results: Vec<Result<(f64, LstmParams), NeuralError>> = with_masks
                .par_iter()
                .map(|(i, mask)| {
                    let example = &train_set[*i];
                    let cache = forward(&example.features, &params, mask.as_ref())?;
                    let targets = example.label.targets();
                    let sample_loss = loss(&cache.probs, &targets);
                    let grads = backward(&params, &cache, &targets)?;
                    Ok((sample_loss, grads))
                })
                .collect();

            let mut batch_grads = LstmParams::zeros(cfg.hidden_n, f);
            let mut batch_loss = 0.0;
            let count = results.len();
            for result in results {
                let (sample_loss, grads) = result?;
                batch_loss += sample_loss;
                batch_grads.add_assign(&grads);
            }
            batch_loss /= count as f64;
            if !batch_loss.is_finite() {
                return Err(NeuralError::Diverged { epoch });
            }
            batch_grads.scale(1.0 / count as f64);
            if let Some(max_norm) = cfg.clip_norm {
                let norm = batch_grads.grad_norm();
                if norm > max_norm {
                    batch_grads.scale(max_norm / norm);
                }
            }
            adam_step(&mut params, &batch_grads, &mut adam, lr);
        }

        let train_eval = evaluate(&params, train_set)?;
        let val_eval = evaluate(&params, val_set)?;
        if !train_eval.loss.is_finite() || !val_eval.loss.is_finite() {
            return Err(NeuralError::Diverged { epoch });
        }
        history.push(HistoryRow {
            epoch,
            lr,
            batch_size,
            train_loss: train_eval.loss,
            train_acc: train_eval.accuracy,
            val_loss: val_eval.loss,
            val_acc: val_eval.accuracy,
        });
        if val_eval.loss < best_val_loss {
            best_val_loss = val_eval.loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        if let Some(reason) = stopper.observe(epoch, val_eval.loss) {
            stop = reason;
            break;
        }
    }

    Ok(TrainOutcome { params: best_params, history, best_epoch, best_val_loss, stop })
}

/// epoch, lr, batch_size, train_loss, train_acc, val_loss, val_acc
pub fn write_history_csv(path: &Path, history: &[HistoryRow]) -> Result<(), NeuralError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,lr,batch_size,train_loss,train_acc,val_loss,val_acc")?;
    for row in history {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.epoch, row.lr, row.batch_size, row.train_loss, row.train_acc, row.val_loss,
            row.val_acc
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bars::{resample_with_returns, BarConfig, Label, LabelConfig};
    use crate::dataset::{build_examples, make_split, FeatureTable, OffsetConfig, SplitConfig};
    use crate::trade::synth::{synth_trades, Regime, SynthConfig};

    fn toy_example(level: f64, label: Label, index: usize) -> WindowExample {
        WindowExample { features: vec![vec![level; 7]; 4], label, prediction_index: index }
    }

    fn separable_sets() -> (Vec<WindowExample>, Vec<WindowExample>) {
        let mut train = Vec::new();
        let mut val = Vec::new();
        for i in 0..40 {
            let (level, label) =
                if i % 2 == 0 { (0.9, Label::Up) } else { (0.1, Label::Down) };
            train.push(toy_example(level, label, i));
        }
        for i in 0..16 {
            let (level, label) =
                if i % 2 == 0 { (0.9, Label::Up) } else { (0.1, Label::Down) };
            val.push(toy_example(level, label, 100 + i));
        }
        (train, val)
    }

    #[test]
    fn lr_schedule_matches_stated_values() {
        let cfg = TrainConfig::default();
        for (epoch, want) in [(0, 0.001), (15, 0.0007), (30, 0.0004), (45, 0.0001), (60, 0.0001)]
        {
            assert!(
                (cfg.lr_for_epoch(epoch) - want).abs() < 1e-12,
                "epoch {epoch}: {} != {want}",
                cfg.lr_for_epoch(epoch)
            );
        }
    }

    #[test]
    fn batch_schedule_shrinks_on_lr_boundaries() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.batch_for_epoch(0), 128);
        assert_eq!(cfg.batch_for_epoch(14), 128);
        assert_eq!(cfg.batch_for_epoch(15), 64);
        assert_eq!(cfg.batch_for_epoch(30), 32);
        assert_eq!(cfg.batch_for_epoch(90), 32);
    }

    #[test]
    fn config_validation_rejects_bad_schedules() {
        let mut cfg = TrainConfig { batch_schedule: vec![64, 128], ..TrainConfig::default() };
        assert!(cfg.validate().is_err()); // increasing
        cfg.batch_schedule = vec![256];
        assert!(cfg.validate().is_err()); // out of range
        cfg.batch_schedule = vec![128, 64, 32];
        cfg.lr_floor = 0.01;
        assert!(cfg.validate().is_err()); // floor above initial
    }

    #[test]
    fn flat_validation_loss_stops_at_exactly_patience_epochs() {
        let mut stopper = EarlyStopping::new(20, 1.05);
        assert_eq!(stopper.observe(0, 0.7), None);
        for epoch in 1..20 {
            assert_eq!(stopper.observe(epoch, 0.7), None, "epoch {epoch}");
        }
        assert_eq!(stopper.observe(20, 0.7), Some(StopReason::Patience));
    }

    #[test]
    fn divergence_rule_fires_above_five_percent() {
        let mut stopper = EarlyStopping::new(20, 1.05);
        assert_eq!(stopper.observe(0, 0.60), None);
        assert_eq!(stopper.observe(1, 0.62), None); // within 5%
        assert_eq!(stopper.observe(2, 0.64), Some(StopReason::Divergence));
    }

    #[test]
    fn training_reduces_loss_on_separable_toy_set() {
        let (train_set, val_set) = separable_sets();
        let cfg = TrainConfig {
            hidden_n: 4,
            max_epochs: 55,
            seed: 11,
            patience: 55,
            ..TrainConfig::default()
        };
        let outcome = train(&train_set, &val_set, &cfg).unwrap();
        assert!(outcome.history.len() >= 51);
        let first = outcome.history[0].train_loss;
        let fiftieth = outcome.history[50].train_loss;
        assert!(
            fiftieth < first,
            "epoch-50 loss {fiftieth} not below epoch-1 loss {first}"
        );
        let best = outcome.history[outcome.best_epoch].val_loss;
        assert_eq!(best, outcome.best_val_loss);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let (train_set, val_set) = separable_sets();
        let cfg = TrainConfig {
            hidden_n: 3,
            max_epochs: 8,
            seed: 5,
            patience: 30,
            ..TrainConfig::default()
        };
        let one = train(&train_set, &val_set, &cfg).unwrap();
        let two = train(&train_set, &val_set, &cfg).unwrap();
        assert_eq!(one.history, two.history);
        assert_eq!(one.params, two.params);
        let other_seed = TrainConfig { seed: 6, ..cfg };
        let three = train(&train_set, &val_set, &other_seed).unwrap();
        assert_ne!(one.history, three.history);
    }

    #[test]
    fn empty_sets_are_rejected() {
        let (train_set, _) = separable_sets();
        let cfg = TrainConfig::default();
        assert!(matches!(train(&train_set, &[], &cfg), Err(NeuralError::EmptyInput)));
        assert!(matches!(train(&[], &train_set, &cfg), Err(NeuralError::EmptyInput)));
    }

    // An epoch is len/batch optimizer steps, so the planted signal needs a
    // few thousand bars before the decaying schedule gives enough steps to
    // move the weights; hundreds of bars leave the model stuck at the prior.
    #[test]
    fn learns_planted_signal_above_chance() {
        let horizon = 2u32;
        let synth = SynthConfig {
            seed: 31,
            intervals: 3000,
            interval_ms: 1000,
            trades_per_interval: 6,
            regime: Regime::PlantedSignal { horizon, strength: 0.01, taker_bias: 0.4 },
            ..SynthConfig::default()
        };
        let stream = synth_trades(&synth).unwrap();
        let bars = resample_with_returns(
            &stream.trades,
            &BarConfig { interval_ms: 1000, horizons: vec![horizon] },
        )
        .unwrap();
        let table = FeatureTable::from_bars(&bars, 1000).unwrap();
        let periods =
            make_split(table.n_rows(), &SplitConfig { p: 3, q: 60, window_t: 6, seed: 1 })
                .unwrap();
        let sets = build_examples(
            &table,
            &periods,
            6,
            &LabelConfig { horizon_m: horizon, epsilon: 0.0 },
            &OffsetConfig { fraction: 0.34, seed: 2 },
        )
        .unwrap();
        let cfg = TrainConfig {
            hidden_n: 5,
            max_epochs: 25,
            seed: 3,
            patience: 25,
            batch_schedule: vec![32],
            dropout_rate: 0.0,
            ..TrainConfig::default()
        };
        let outcome = train(&sets.training, &sets.validation, &cfg).unwrap();
        let best_acc = outcome.history[outcome.best_epoch].val_acc;
        assert!(best_acc > 0.9, "best validation accuracy {best_acc}");
    }

    #[test]
    fn history_csv_round_trips_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("history.csv");
        let history = vec![HistoryRow {
            epoch: 0,
            lr: 0.001,
            batch_size: 128,
            train_loss: 0.69,
            train_acc: 0.5,
            val_loss: 0.70,
            val_acc: 0.48,
        }];
        write_history_csv(&path, &history).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "epoch,lr,batch_size,train_loss,train_acc,val_loss,val_acc"
        );
        assert_eq!(lines.next().unwrap(), "0,0.001,128,0.69,0.5,0.7,0.48");
    }
}
