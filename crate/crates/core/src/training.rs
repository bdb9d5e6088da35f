//! Mini-batch training loop shared by the JEPA and autoencoder objectives.
//!
//! One call to [`train`] runs a fixed number of epochs over a window-pair
//! split. Each step computes the loss and gradients for one shuffled batch,
//! applies one Adam update to the online parameters, and for the JEPA
//! objective blends the target encoder toward the online encoder once.
//! The optimizer only ever sees `model.online`, so the EMA branch cannot
//! receive gradient updates by construction.
//!
//! Everything that affects the loss trajectory is a deterministic function
//! of the initial parameters and [`TrainConfig::seed`]: batch shuffling is
//! derived from `(seed, epoch)` alone, and all arithmetic is single-threaded
//! f32 with f64 accumulators. Two runs from the same initial model and
//! config produce bitwise-identical loss histories.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hash::fnv1a64_words;
use crate::models::{Model, TrainMode};
use crate::numerics::{adam_step, AdamState, ModelParams, Tensor};
use crate::synthgen::DatasetSplit;

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr: f64,
    /// EMA blend factor for the JEPA target encoder; ignored in AE mode.
    pub ema_alpha: f64,
    /// Seeds batch shuffling; model initialization is the caller's seed.
    pub seed: u64,
    /// Validation cadence in epochs; the final epoch is always evaluated.
    pub eval_every: u32,
    /// Global gradient-norm cap applied before each Adam step, off when
    /// `None`.
    pub clip_grad_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 256,
            lr: 1e-3,
            ema_alpha: 0.996,
            seed: 42,
            eval_every: 1,
            clip_grad_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config(format!(
                "lr must be finite and non-negative, got {}",
                self.lr
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::config(format!(
                "ema_alpha must be in [0, 1], got {}",
                self.ema_alpha
            )));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be at least 1"));
        }
        if let Some(cap) = self.clip_grad_norm {
            if !cap.is_finite() || cap <= 0.0 {
                return Err(Error::config(format!(
                    "clip_grad_norm must be finite and positive, got {cap}"
                )));
            }
        }
        Ok(())
    }
}

/// One epoch of the training log.
///
/// `val_loss` is `None` on epochs skipped by [`TrainConfig::eval_every`].
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_ms: u64,
}

/// Renders one log line, `epoch=<n> train_loss=<f> val_loss=<f> ms=<n>`,
/// dropping the `val_loss` field on epochs without an evaluation.
pub fn format_epoch_line(record: &EpochRecord) -> String {
    match record.val_loss {
        Some(val) => format!(
            "epoch={} train_loss={:.6} val_loss={:.6} ms={}",
            record.epoch, record.train_loss, val, record.wall_ms
        ),
        None => format!(
            "epoch={} train_loss={:.6} ms={}",
            record.epoch, record.train_loss, record.wall_ms
        ),
    }
}

/// Runs the training loop, mutating `model` in place and returning the
/// per-epoch log. `on_epoch` fires after each epoch so callers can stream
/// progress while the loop runs.
///
/// A non-finite loss aborts immediately with the epoch and step at which
/// it appeared.
pub fn train(
    model: &mut Model<f32>,
    train_split: &DatasetSplit,
    val_split: &DatasetSplit,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>> {
    config.validate()?;
    model.validate()?;
    check_split_geometry(model, train_split, "train split")?;
    check_split_geometry(model, val_split, "val split")?;
    if train_split.pairs.is_empty() {
        return Err(Error::contract("train split has no window pairs"));
    }

    let mut optimizer = AdamState::with_defaults(config.lr as f32);
    let alpha = config.ema_alpha as f32;
    let mut history = Vec::with_capacity(config.epochs as usize);

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let order = epoch_permutation(train_split.pairs.len(), config.seed, epoch);
        let mut loss_sum = 0.0f64;

        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            let (context, target) = batch_tensors(train_split, batch)?;
            let loss = match model.mode {
                TrainMode::Jepa => model.jepa_loss_and_grads(&context, &target),
                TrainMode::Ae => model.ae_loss_and_grads(&context),
            }
            .map_err(|err| {
                Error::numeric(format!(
                    "training aborted at epoch {epoch} step {}: {err}",
                    step + 1
                ))
            })?;
            if let Some(cap) = config.clip_grad_norm {
                clip_gradient_norm(&mut model.online, cap);
            }
            adam_step(&mut optimizer, &mut model.online)?;
            if model.mode == TrainMode::Jepa {
                model.update_ema(alpha)?;
            }
            loss_sum += f64::from(loss) * batch.len() as f64;
        }

        let train_loss = loss_sum / train_split.pairs.len() as f64;
        let val_loss = if epoch % config.eval_every == 0 || epoch == config.epochs {
            Some(evaluate(model, val_split, config.batch_size)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_epoch(&record);
        history.push(record);
    }

    Ok(history)
}

/// Mean loss over a split under the model's own objective, batched in file
/// order. Pure: the model is untouched and repeated calls return the same
/// value bit for bit.
pub fn evaluate(model: &Model<f32>, split: &DatasetSplit, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    check_split_geometry(model, split, "split")?;
    if split.pairs.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    let order: Vec<usize> = (0..split.pairs.len()).collect();
    let mut loss_sum = 0.0f64;
    for batch in order.chunks(batch_size) {
        let (context, target) = batch_tensors(split, batch)?;
        let loss = match model.mode {
            TrainMode::Jepa => model.jepa_loss_value(&context, &target)?,
            TrainMode::Ae => model.ae_loss_value(&context)?,
        };
        loss_sum += f64::from(loss) * batch.len() as f64;
    }
    Ok(loss_sum / split.pairs.len() as f64)
}

/// Shuffle order for one epoch, a pure function of `(seed, epoch)` so runs
/// can be replayed without replaying the optimizer state.
fn epoch_permutation(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64_words(&[seed, u64::from(epoch)]));
    order.shuffle(&mut rng);
    order
}

/// Packs the selected pairs into `[batch, 1, len]` context and target
/// tensors in the order given.
fn batch_tensors(split: &DatasetSplit, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let mut context = Vec::with_capacity(indices.len() * split.context_len);
    let mut target = Vec::with_capacity(indices.len() * split.target_len);
    for &i in indices {
        context.extend_from_slice(&split.pairs[i].context);
        target.extend_from_slice(&split.pairs[i].target);
    }
    Ok((
        Tensor::new(vec![indices.len(), 1, split.context_len], context)?,
        Tensor::new(vec![indices.len(), 1, split.target_len], target)?,
    ))
}

/// Scales every gradient by `cap / norm` when the global L2 norm across all
/// parameters exceeds `cap`; otherwise leaves them untouched.
fn clip_gradient_norm(params: &mut ModelParams<f32>, cap: f64) {
    let mut sum_sq = 0.0f64;
    for (_, tensor) in params.iter() {
        if let Some(grad) = tensor.grad() {
            sum_sq += grad.iter().map(|&g| f64::from(g) * f64::from(g)).sum::<f64>();
        }
    }
    let norm = sum_sq.sqrt();
    if norm > cap {
        let scale = (cap / norm) as f32;
        for (_, tensor) in params.iter_mut() {
            if let Some(grad) = tensor.grad_mut() {
                for g in grad {
                    *g *= scale;
                }
            }
        }
    }
}

fn check_split_geometry(
    model: &Model<f32>,
    split: &DatasetSplit,
    what: &str,
) -> Result<()> {
    let input_len = model.config.input_len;
    if split.context_len != input_len {
        return Err(Error::dim(format!(
            "{what} has context windows of length {}, model expects {input_len}",
            split.context_len
        )));
    }
    if model.mode == TrainMode::Jepa && split.target_len != input_len {
        return Err(Error::dim(format!(
            "{what} has target windows of length {}, model expects {input_len}",
            split.target_len
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelConfig;
    use crate::synthgen::{extract_pair, generate_master, regime_table, standardize};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    const CONTEXT_LEN: usize = 96;
    const DELTA: usize = 32;

    /// A small split of real generator output: `n` sequences of one regime,
    /// standardized, with the target window shifted `DELTA` steps.
    fn tiny_split(regime_index: usize, n: u32, global_seed: u64) -> DatasetSplit {
        let spec = &regime_table()[regime_index];
        let pairs = (0..n)
            .map(|seq| {
                let master =
                    generate_master(spec, global_seed, seq, CONTEXT_LEN + DELTA).unwrap();
                let standardized = standardize(&master.values);
                extract_pair(&standardized, CONTEXT_LEN, DELTA, spec.regime_id, seq)
                    .unwrap()
            })
            .collect();
        DatasetSplit {
            pairs,
            context_len: CONTEXT_LEN,
            target_len: CONTEXT_LEN,
            num_regimes: 1,
        }
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_len: CONTEXT_LEN,
            latent_dim: 8,
            ..ModelConfig::default()
        }
    }

    fn jepa_model(seed: u64) -> Model<f32> {
        Model::init(&tiny_config(), TrainMode::Jepa, &mut rng(seed)).unwrap()
    }

    fn quick_config(epochs: u32) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            lr: 1e-3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        assert!(TrainConfig::default().validate().is_ok());
        let cases = [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { lr: -1e-3, ..TrainConfig::default() },
            TrainConfig { lr: f64::NAN, ..TrainConfig::default() },
            TrainConfig { ema_alpha: 1.5, ..TrainConfig::default() },
            TrainConfig { eval_every: 0, ..TrainConfig::default() },
            TrainConfig { clip_grad_norm: Some(0.0), ..TrainConfig::default() },
        ];
        for bad in cases {
            assert!(bad.validate().is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn epoch_permutation_is_deterministic_and_complete() {
        let a = epoch_permutation(100, 7, 3);
        let b = epoch_permutation(100, 7, 3);
        assert_eq!(a, b);
        assert_ne!(a, epoch_permutation(100, 7, 4));
        assert_ne!(a, epoch_permutation(100, 8, 3));
        let mut sorted = a;
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn zero_lr_leaves_parameters_and_loss_unchanged() {
        let split = tiny_split(1, 24, 11);
        let mut model = jepa_model(0);
        let before: Vec<Vec<f32>> =
            model.online.iter().map(|(_, t)| t.data().to_vec()).collect();
        let config = TrainConfig { lr: 0.0, ..quick_config(3) };
        let history = train(&mut model, &split, &split, &config, |_| {}).unwrap();

        let after: Vec<Vec<f32>> =
            model.online.iter().map(|(_, t)| t.data().to_vec()).collect();
        assert_eq!(before, after, "zero lr must not move the online parameters");

        // Epoch means differ only by f64 summation order under the shuffle.
        let first = history[0].train_loss;
        for record in &history {
            assert!((record.train_loss - first).abs() / first < 1e-6);
            assert_eq!(record.val_loss, history[0].val_loss);
        }
    }

    #[test]
    fn same_seed_reproduces_the_exact_loss_history() {
        let split = tiny_split(7, 24, 3);
        let config = quick_config(3);
        let run = |init_seed: u64| {
            let mut model = jepa_model(init_seed);
            train(&mut model, &split, &split, &config, |_| {}).unwrap()
        };
        let first = run(5);
        let second = run(5);
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_loss, b.val_loss);
        }
        let other_init = run(6);
        assert_ne!(first[0].train_loss, other_init[0].train_loss);
    }

    #[test]
    fn jepa_val_loss_improves_on_a_predictable_regime() {
        // Sine_MedFreq windows overlap heavily between context and target,
        // so even a few epochs should beat the untrained loss.
        let train_split = tiny_split(1, 48, 21);
        let val_split = tiny_split(1, 12, 22);
        let mut model = jepa_model(0);
        let initial = evaluate(&model, &val_split, 8).unwrap();
        assert!(initial.is_finite() && initial > 0.0);

        let history =
            train(&mut model, &train_split, &val_split, &quick_config(5), |_| {}).unwrap();
        let last = history.last().unwrap().val_loss.unwrap();
        assert!(
            last < initial,
            "val loss should drop: initial {initial}, after 5 epochs {last}"
        );
    }

    #[test]
    fn ae_starts_near_unit_loss_and_improves() {
        // Windows are standardized to unit variance and a fresh decoder's
        // output is small, so the initial reconstruction loss sits near
        // E[x^2], which is 1 up to window-vs-sequence variance mismatch.
        let train_split = tiny_split(1, 32, 13);
        let mut model = Model::init(&tiny_config(), TrainMode::Ae, &mut rng(2)).unwrap();
        let initial = evaluate(&model, &train_split, 8).unwrap();
        assert!(
            (0.5..2.0).contains(&initial),
            "fresh AE loss should be near 1.0, got {initial}"
        );

        let history =
            train(&mut model, &train_split, &train_split, &quick_config(3), |_| {}).unwrap();
        assert!(history.last().unwrap().val_loss.unwrap() < initial);
        assert!(model.ema.is_none(), "AE training must not grow an EMA branch");
    }

    #[test]
    fn train_loss_accounting_matches_evaluate_when_frozen() {
        // With lr = 0 the parameters never move, so the shuffled per-batch
        // means recombine to the same global mean evaluate computes, up to
        // the f32 rounding of each step's loss.
        let split = tiny_split(9, 10, 17);
        let mut model = jepa_model(1);
        let config = TrainConfig { lr: 0.0, batch_size: 4, ..quick_config(1) };
        let history = train(&mut model, &split, &split, &config, |_| {}).unwrap();
        let direct = evaluate(&model, &split, 4).unwrap();
        let via_train = history[0].train_loss;
        assert!(
            (via_train - direct).abs() / direct < 1e-6,
            "train epoch mean {via_train} vs evaluate {direct}"
        );
    }

    #[test]
    fn evaluate_is_repeatable_and_batch_size_invariant() {
        let split = tiny_split(4, 10, 29);
        let model = jepa_model(3);
        let a = evaluate(&model, &split, 4).unwrap();
        let b = evaluate(&model, &split, 4).unwrap();
        assert_eq!(a, b);
        let c = evaluate(&model, &split, 10).unwrap();
        assert!((a - c).abs() / a < 1e-6, "batch split changed the mean: {a} vs {c}");
    }

    #[test]
    fn window_length_mismatches_are_rejected() {
        let mut split = tiny_split(0, 4, 1);
        let mut model = jepa_model(0);
        split.context_len = 80;
        for pair in &mut split.pairs {
            pair.context.truncate(80);
        }
        assert!(evaluate(&model, &split, 4).is_err());
        assert!(train(&mut model, &split, &split, &quick_config(1), |_| {}).is_err());
    }

    #[test]
    fn ema_converges_geometrically_when_online_is_frozen() {
        // With the online encoder frozen, each EMA update contracts the
        // gap by exactly alpha, so successive gap norms form a geometric
        // sequence with that ratio.
        let mut model = jepa_model(0);
        let alpha = 0.996f32;
        for (_, tensor) in model.ema.as_mut().unwrap().iter_mut() {
            for v in tensor.data_mut() {
                *v += 0.25;
            }
        }
        let gap = |model: &Model<f32>| -> f64 {
            let online = model.online.subset("encoder.");
            let mut sum = 0.0f64;
            for (name, target) in model.ema.as_ref().unwrap().iter() {
                let source = online.get(name).unwrap();
                for (&t, &o) in target.data().iter().zip(source.data()) {
                    sum += (f64::from(t) - f64::from(o)).powi(2);
                }
            }
            sum.sqrt()
        };
        let mut previous = gap(&model);
        for _ in 0..5 {
            model.update_ema(alpha).unwrap();
            let current = gap(&model);
            let ratio = current / previous;
            assert!(
                (ratio - f64::from(alpha)).abs() < 1e-6,
                "gap ratio {ratio} should equal alpha {alpha}"
            );
            previous = current;
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_the_failing_step() {
        let split = tiny_split(0, 8, 5);
        let mut model = jepa_model(0);
        // Poison the head output bias: nothing downstream of it is a ReLU,
        // so the NaN reaches the loss instead of being masked to zero.
        model.online.get_mut("encoder.head.fc2.bias").unwrap().data_mut()[0] = f32::NAN;
        let err = train(&mut model, &split, &split, &quick_config(1), |_| {}).unwrap_err();
        let message = err.to_string();
        assert!(
            message.contains("epoch 1 step 1"),
            "abort should name the failing step: {message}"
        );
    }

    #[test]
    fn gradient_clipping_caps_the_global_norm() {
        let split = tiny_split(0, 8, 5);
        let mut model = jepa_model(0);
        let (context, target) = batch_tensors(&split, &[0, 1, 2, 3]).unwrap();
        model.jepa_loss_and_grads(&context, &target).unwrap();

        let norm_of = |params: &ModelParams<f32>| -> f64 {
            let mut sum = 0.0f64;
            for (_, t) in params.iter() {
                if let Some(g) = t.grad() {
                    sum += g.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
                }
            }
            sum.sqrt()
        };
        let raw = norm_of(&model.online);
        assert!(raw > 1e-6, "test needs a nonzero gradient, got norm {raw}");

        // A cap above the norm must leave gradients untouched.
        let before: Vec<Vec<f32>> = model
            .online
            .iter()
            .map(|(_, t)| t.grad().unwrap_or(&[]).to_vec())
            .collect();
        clip_gradient_norm(&mut model.online, raw * 2.0);
        let unchanged: Vec<Vec<f32>> = model
            .online
            .iter()
            .map(|(_, t)| t.grad().unwrap_or(&[]).to_vec())
            .collect();
        assert_eq!(before, unchanged);

        // A cap below the norm rescales to exactly the cap.
        let cap = raw / 8.0;
        clip_gradient_norm(&mut model.online, cap);
        let clipped = norm_of(&model.online);
        assert!(
            (clipped - cap).abs() / cap < 1e-5,
            "clipped norm {clipped} should equal cap {cap}"
        );
    }

    #[test]
    fn clipped_training_still_runs_and_improves() {
        let split = tiny_split(1, 24, 19);
        let mut model = jepa_model(0);
        let initial = evaluate(&model, &split, 8).unwrap();
        let config = TrainConfig { clip_grad_norm: Some(1.0), ..quick_config(5) };
        let history = train(&mut model, &split, &split, &config, |_| {}).unwrap();
        assert!(history.last().unwrap().val_loss.unwrap() < initial);
    }

    #[test]
    fn eval_every_skips_intermediate_epochs_but_not_the_last() {
        let split = tiny_split(0, 8, 5);
        let mut model = jepa_model(0);
        let config = TrainConfig { eval_every: 2, ..quick_config(3) };
        let history = train(&mut model, &split, &split, &config, |_| {}).unwrap();
        assert_eq!(history[0].val_loss, None);
        assert!(history[1].val_loss.is_some());
        assert!(history[2].val_loss.is_some(), "final epoch is always evaluated");
    }

    #[test]
    fn on_epoch_streams_records_in_order() {
        let split = tiny_split(0, 8, 5);
        let mut model = jepa_model(0);
        let mut seen = Vec::new();
        let history = train(&mut model, &split, &split, &quick_config(3), |record| {
            seen.push(record.clone());
        })
        .unwrap();
        assert_eq!(seen, history);
        assert_eq!(
            history.iter().map(|r| r.epoch).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
    }

    #[test]
    fn epoch_line_format_is_stable() {
        let record = EpochRecord {
            epoch: 3,
            train_loss: 0.123_456_4,
            val_loss: Some(0.2345),
            wall_ms: 17,
        };
        assert_eq!(
            format_epoch_line(&record),
            "epoch=3 train_loss=0.123456 val_loss=0.234500 ms=17"
        );
        let skipped = EpochRecord { val_loss: None, ..record };
        assert_eq!(format_epoch_line(&skipped), "epoch=3 train_loss=0.123456 ms=17");
    }
}
