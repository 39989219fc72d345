//! Seeded random models and token batches for tests, benches and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::engine::{BlockWeights, HeadWeights, ModelConfig, ModelWeights};
use crate::linalg::{Matrix, Vector};

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f32) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * rng.sample::<f32, _>(StandardNormal))
}

fn normal_vector(rng: &mut ChaCha8Rng, len: usize, mean: f32, std: f32) -> Vector {
    Vector::from_raw(
        (0..len)
            .map(|_| mean + std * rng.sample::<f32, _>(StandardNormal))
            .collect(),
    )
}

/// Gaussian weights scaled by fan-in, with small biases and LayerNorm
/// parameters near identity. Shapes follow the config's live head widths.
pub fn random_weights(config: &ModelConfig, seed: u64) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.embed_dim;
    let dm = config.mlp_dim;
    let in_std = 1.0 / (d as f32).sqrt();
    let blocks = (0..config.num_layers)
        .map(|l| {
            let k = config.live_head_dim(l);
            let heads = (0..config.num_heads)
                .map(|_| HeadWeights {
                    wq: normal_matrix(&mut rng, d, k, in_std),
                    wk: normal_matrix(&mut rng, d, k, in_std),
                    wv: normal_matrix(&mut rng, d, k, in_std),
                    wproj: normal_matrix(&mut rng, k, d, 1.0 / (k as f32).sqrt()),
                    bq: normal_vector(&mut rng, k, 0.0, 0.02),
                    bk: normal_vector(&mut rng, k, 0.0, 0.02),
                    bv: normal_vector(&mut rng, k, 0.0, 0.02),
                })
                .collect();
            BlockWeights {
                heads,
                bproj: normal_vector(&mut rng, d, 0.0, 0.02),
                fc1: normal_matrix(&mut rng, d, dm, in_std),
                bfc1: normal_vector(&mut rng, dm, 0.0, 0.02),
                fc2: normal_matrix(&mut rng, dm, d, 1.0 / (dm as f32).sqrt()),
                bfc2: normal_vector(&mut rng, d, 0.0, 0.02),
                ln1_scale: normal_vector(&mut rng, d, 1.0, 0.1),
                ln1_shift: normal_vector(&mut rng, d, 0.0, 0.1),
                ln2_scale: normal_vector(&mut rng, d, 1.0, 0.1),
                ln2_shift: normal_vector(&mut rng, d, 0.0, 0.1),
            }
        })
        .collect();
    ModelWeights { blocks }
}

/// Standard-normal `N × D` token batch.
pub fn random_tokens(config: &ModelConfig, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal_matrix(&mut rng, config.num_tokens, config.embed_dim, 1.0)
}

/// Standard-normal matrix of arbitrary shape.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    normal_matrix(&mut rng, rows, cols, 1.0)
}

/// Every weight zero, LayerNorm scale 1 and shift 0.
pub fn zero_weights(config: &ModelConfig) -> ModelWeights {
    let d = config.embed_dim;
    let dm = config.mlp_dim;
    let blocks = (0..config.num_layers)
        .map(|l| {
            let k = config.live_head_dim(l);
            BlockWeights {
                heads: (0..config.num_heads)
                    .map(|_| HeadWeights {
                        wq: Matrix::zeros(d, k),
                        wk: Matrix::zeros(d, k),
                        wv: Matrix::zeros(d, k),
                        wproj: Matrix::zeros(k, d),
                        bq: Vector::zeros(k),
                        bk: Vector::zeros(k),
                        bv: Vector::zeros(k),
                    })
                    .collect(),
                bproj: Vector::zeros(d),
                fc1: Matrix::zeros(d, dm),
                bfc1: Vector::zeros(dm),
                fc2: Matrix::zeros(dm, d),
                bfc2: Vector::zeros(d),
                ln1_scale: Vector::filled(d, 1.0),
                ln1_shift: Vector::zeros(d),
                ln2_scale: Vector::filled(d, 1.0),
                ln2_shift: Vector::zeros(d),
            }
        })
        .collect();
    ModelWeights { blocks }
}
