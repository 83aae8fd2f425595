//! SAE training: Adam over shuffled token batches with the
//! warmup/plateau/decay schedule, unit-norm dictionary rows and
//! dead-feature resampling.

mod adam;
mod buffer;
mod config;
mod resample;
mod schedule;

pub use adam::{Adam, Moments};
pub use buffer::TokenBuffer;
pub use config::TrainConfig;
pub use resample::{resample_dead, ActivityWindow};
pub use schedule::lr_at;

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::ItemSource;
use crate::sae::{loss_and_gradients, LossBreakdown, SaeModel};
use crate::{Error, Result};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const RESAMPLE_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mutable optimizer-side state owned by one training run.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub step: usize,
    pub adam: Adam<f32>,
    pub activity: ActivityWindow,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(model: &SaeModel<f32>, config: &TrainConfig) -> Self {
        Self {
            step: 0,
            adam: Adam::new(model, config.adam_beta1, config.adam_beta2, config.adam_eps),
            activity: ActivityWindow::new(config.dead_feature_window, model.n()),
            rng: rng_for(config.seed, RESAMPLE_STREAM),
        }
    }
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: LossBreakdown,
    pub lr: f64,
    /// Features resampled after this step.
    pub dead_count: usize,
}

/// Tied initialization: dictionary rows uniform on the unit sphere,
/// encoder rows equal to the dictionary rows, zero bias.
pub fn init_model(m: usize, config: &TrainConfig) -> Result<SaeModel<f32>> {
    if m == 0 {
        return Err(Error::InvalidArgument(
            "input width must be positive".into(),
        ));
    }
    let n = config.expansion_factor * m;
    let mut rng = rng_for(config.seed, INIT_STREAM);
    let mut dictionary = Array2::<f32>::zeros((n, m));
    for mut row in dictionary.rows_mut() {
        loop {
            let raw: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for (dst, v) in row.iter_mut().zip(raw) {
                    *dst = (v / norm) as f32;
                }
                break;
            }
        }
    }
    SaeModel::new(dictionary.clone(), ndarray::Array1::zeros(n), dictionary)
}

/// Projects out, row by row, the component of the dictionary gradient
/// along the (unit-norm) dictionary row itself.
pub fn remove_radial_component(grad: &mut Array2<f32>, dictionary: &Array2<f32>) {
    Zip::from(grad.rows_mut())
        .and(dictionary.rows())
        .for_each(|mut g, f| {
            let along = g.dot(&f);
            g.scaled_add(-along, &f);
        });
}

/// Trains a fresh model on `source`. Deterministic for a fixed source
/// order and config.
pub fn train(
    source: &dyn ItemSource,
    config: &TrainConfig,
) -> Result<(SaeModel<f32>, Vec<StepRecord>)> {
    train_with_callback(source, config, |_| {})
}

pub fn train_with_callback(
    source: &dyn ItemSource,
    config: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<(SaeModel<f32>, Vec<StepRecord>)> {
    config.validate()?;
    let mut buffer = TokenBuffer::new(
        source,
        config.batch_size,
        config.buffer_batches_num,
        rng_for(config.seed, SHUFFLE_STREAM),
    )?;
    let mut model = init_model(buffer.d_model(), config)?;
    let mut state = TrainState::new(&model, config);
    let mut history = Vec::with_capacity(config.total_steps);

    for step in 0..config.total_steps {
        state.step = step;
        let batch = buffer.next_batch()?;
        let (loss, mut grads, z) = loss_and_gradients(batch.view(), &model, config.lambda)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence { step });
        }
        remove_radial_component(&mut grads.dictionary, &model.dictionary);
        let lr = lr_at(step, config)?;
        state.adam.step(&mut model, &grads, lr);
        model.normalize_dictionary();
        if !model.is_finite() {
            return Err(Error::Divergence { step });
        }
        state.activity.record(z.view());

        let done = step + 1;
        let mut dead_count = 0;
        if done % config.dead_feature_window == 0 && done < config.total_steps {
            dead_count = resample_dead(
                &mut model,
                &mut state,
                batch.view(),
                config.dead_feature_threshold,
            )?;
        }
        if done % config.feature_sampling_window == 0 {
            let dead_now = state
                .activity
                .dead_features(config.dead_feature_threshold)
                .len();
            log::info!(
                "step {done}/{}: recon {:.6} l1 {:.6} total {:.6} lr {:.3e} dead-in-window {dead_now} resampled {dead_count}",
                config.total_steps,
                loss.recon,
                loss.l1,
                loss.total,
                lr
            );
        }
        let record = StepRecord {
            step,
            loss,
            lr,
            dead_count,
        };
        on_step(&record);
        history.push(record);
    }
    Ok((model, history))
}

/// Loss history as CSV: `step,recon,l1,total,lr,dead_count`.
pub fn write_history_csv(history: &[StepRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "step,recon,l1,total,lr,dead_count")?;
    for r in history {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.step, r.loss.recon, r.loss.l1, r.loss.total, r.lr, r.dead_count
        )?;
    }
    Ok(())
}

pub fn save_history_csv(history: &[StepRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_history_csv(history, &mut w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, DataItem, SyntheticSpec};
    use ndarray::Array2;

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            total_steps: 60,
            batch_size: 32,
            lr: 1e-2,
            lr_warmup_steps: 5,
            lr_decay_steps: 10,
            lambda: 0.05,
            feature_sampling_window: 20,
            dead_feature_window: 20,
            buffer_batches_num: 4,
            expansion_factor: 2,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    fn tiny_corpus() -> Vec<DataItem> {
        generate_synthetic(&SyntheticSpec {
            d_model: 8,
            planted_features: 6,
            sparsity: 2,
            items: 20,
            tokens_per_item: 4,
            shared_features: 2,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .items
    }

    #[test]
    fn init_is_deterministic_unit_norm_and_tied() {
        let cfg = TrainConfig {
            seed: 9,
            ..TrainConfig::default()
        };
        let a = init_model(8, &cfg).unwrap();
        assert_eq!(a, init_model(8, &cfg).unwrap());
        assert_eq!(a.n(), 128);
        assert_eq!(a.w_enc, a.dictionary);
        assert!(a.b_enc.iter().all(|&v| v == 0.0));
        for n in a.dictionary_row_norms() {
            assert!((n - 1.0).abs() < 1e-6);
        }
        assert!(init_model(0, &cfg).is_err());
    }

    #[test]
    fn tied_init_reads_back_its_own_features() {
        let cfg = TrainConfig {
            expansion_factor: 16,
            ..TrainConfig::default()
        };
        let model = init_model(64, &cfg).unwrap();
        let n = model.n();
        let mut hits = 0;
        for k in 0..n {
            let mut z = Array2::<f32>::zeros((1, n));
            z[[0, k]] = 1.0;
            let h = model.decode(z.view()).unwrap();
            let pre = model.pre_activations(h.view()).unwrap();
            let best = pre
                .row(0)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            hits += usize::from(best == k);
        }
        assert!(hits as f64 >= 0.95 * n as f64, "{hits}/{n}");
    }

    #[test]
    fn radial_component_is_removed() {
        let dict = ndarray::array![[1.0f32, 0.0], [0.6, 0.8]];
        let mut g = ndarray::array![[3.0f32, 4.0], [1.0, 1.0]];
        remove_radial_component(&mut g, &dict);
        assert!((g[[0, 0]]).abs() < 1e-7 && (g[[0, 1]] - 4.0).abs() < 1e-7);
        assert!((g[[1, 0]] * 0.6 + g[[1, 1]] * 0.8).abs() < 1e-6);
    }

    #[test]
    fn training_keeps_rows_unit_norm_and_is_deterministic() {
        let items = tiny_corpus();
        let cfg = tiny_config();
        let mut norms_ok = true;
        let (a, hist) = train_with_callback(&items, &cfg, |_| {}).unwrap();
        for n in a.dictionary_row_norms() {
            norms_ok &= (n - 1.0).abs() < 1e-5;
        }
        assert!(norms_ok);
        assert_eq!(hist.len(), 60);
        assert_eq!(hist[0].lr, 0.0);
        let (b, hist_b) = train(&items, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(hist, hist_b);
        for r in &hist {
            assert!(
                (r.loss.total - (r.loss.recon + r.loss.lambda * r.loss.l1)).abs()
                    <= 1e-9 * r.loss.total.max(1.0)
            );
        }
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let mut items = tiny_corpus();
        items[0].records[0].hidden[0] = 1e30;
        let cfg = TrainConfig {
            lr: 1e30,
            ..tiny_config()
        };
        match train(&items, &cfg) {
            Err(Error::Divergence { step }) => assert!(step < 60),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let items: Vec<DataItem> = Vec::new();
        assert!(matches!(
            train(&items, &tiny_config()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn history_csv_format() {
        let rec = StepRecord {
            step: 3,
            loss: LossBreakdown::new(1.5, 2.0, 0.25),
            lr: 0.001,
            dead_count: 2,
        };
        let mut out = Vec::new();
        write_history_csv(&[rec], &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "step,recon,l1,total,lr,dead_count\n3,1.5,2,2,0.001,2\n"
        );
    }

    fn state_with_window(model: &SaeModel<f32>, window: usize, active: &[usize]) -> TrainState {
        let cfg = TrainConfig {
            dead_feature_window: window,
            ..TrainConfig::default()
        };
        let mut state = TrainState::new(model, &cfg);
        for _ in 0..window {
            let mut z = Array2::<f32>::zeros((2, model.n()));
            for &k in active {
                z[[1, k]] = 0.5;
            }
            state.activity.record(z.view());
        }
        state
    }

    #[test]
    fn resample_noop_when_all_alive() {
        let cfg = TrainConfig {
            expansion_factor: 2,
            ..TrainConfig::default()
        };
        let mut model = init_model(3, &cfg).unwrap();
        let before = model.clone();
        let mut state = state_with_window(&model, 4, &(0..6).collect::<Vec<_>>());
        let batch = Array2::from_shape_fn((5, 3), |(i, j)| (i + j) as f32);
        assert_eq!(
            resample_dead(&mut model, &mut state, batch.view(), 1e-4).unwrap(),
            0
        );
        assert_eq!(model, before);
    }

    #[test]
    fn resample_requires_full_window() {
        let mut model = init_model(3, &TrainConfig::default()).unwrap();
        let mut state = TrainState::new(&model, &TrainConfig::default());
        let batch = Array2::<f32>::ones((2, 3));
        assert!(matches!(
            resample_dead(&mut model, &mut state, batch.view(), 1e-4),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn resampled_features_get_worst_token_direction_and_fresh_moments() {
        let cfg = TrainConfig {
            expansion_factor: 2,
            ..TrainConfig::default()
        };
        let mut model = init_model(3, &cfg).unwrap();
        let mut state = state_with_window(&model, 4, &[0, 1, 2, 4]);
        state.adam.w_enc.first.fill(1.0);
        state.adam.dictionary.second.fill(1.0);
        state.adam.b_enc.first.fill(1.0);
        let live_mean: f64 = [0usize, 1, 2, 4]
            .iter()
            .map(|&k| {
                model
                    .w_enc
                    .row(k)
                    .iter()
                    .map(|&v| (v as f64).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .sum::<f64>()
            / 4.0;

        // Large tokens reconstruct worst.
        let batch = ndarray::array![[0.0f32, 0.0, 0.1], [30.0, 40.0, 0.0], [0.0, 0.0, 100.0]];
        let count = resample_dead(&mut model, &mut state, batch.view(), 1e-4).unwrap();
        assert_eq!(count, 2);
        // Feature 3 takes the worst token (index 2), feature 5 the next (index 1).
        let expect = [(3usize, [0.0f32, 0.0, 1.0]), (5, [0.6, 0.8, 0.0])];
        for (k, dir) in expect {
            for d in 0..3 {
                assert!((model.dictionary[[k, d]] - dir[d]).abs() < 1e-6);
                assert!(
                    (model.w_enc[[k, d]] as f64 - dir[d] as f64 * 0.2 * live_mean).abs() < 1e-6
                );
            }
            assert_eq!(model.b_enc[k], 0.0);
            assert!(state.adam.w_enc.first.row(k).iter().all(|&v| v == 0.0));
            assert!(state
                .adam
                .dictionary
                .second
                .row(k)
                .iter()
                .all(|&v| v == 0.0));
            assert_eq!(state.adam.b_enc.first[k], 0.0);
        }
        // Live features keep their moments.
        assert!(state.adam.w_enc.first.row(0).iter().all(|&v| v == 1.0));
        for n in model.dictionary_row_norms() {
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn clamped_feature_is_detected_dead() {
        let mut window = ActivityWindow::new(3, 2);
        for _ in 0..3 {
            window.record(ndarray::array![[0.0f32, 2.0]].view());
        }
        assert_eq!(window.dead_features(1e-4), vec![0]);
        // A single firing inside the window keeps it alive.
        window.record(ndarray::array![[1.0f32, 2.0]].view());
        assert!(window.dead_features(1e-4).is_empty());
        for _ in 0..3 {
            window.record(ndarray::array![[0.0f32, 2.0]].view());
        }
        assert_eq!(window.dead_features(1e-4), vec![0]);
    }
}
