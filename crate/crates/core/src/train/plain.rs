//! Plaintext DPSGD in `f64`.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, DpsgdConfig, Model, TrainError};
use crate::oracle::exact_clip;

/// 0 below `-1/2`, 1 above `1/2`, `u + 1/2` in between.
pub fn piecewise_sigmoid(u: f64) -> f64 {
    if u <= -0.5 {
        0.0
    } else if u <= 0.5 {
        u + 0.5
    } else {
        1.0
    }
}

/// `vec(x^T (y_hat - y)) || (y_hat - y)` for one sample.
pub fn per_sample_gradient(model: &Model, x: &[f64], label: usize) -> Vec<f64> {
    let c = model.classes;
    let r: Vec<f64> = model
        .scores(x)
        .into_iter()
        .enumerate()
        .map(|(j, u)| piecewise_sigmoid(u) - if j == label { 1.0 } else { 0.0 })
        .collect();
    let mut g = Vec::with_capacity(model.len());
    for &xi in x.iter().take(model.dim) {
        for &rj in r.iter().take(c) {
            g.push(xi * rj);
        }
    }
    g.extend_from_slice(&r);
    g
}

/// `b` distinct indices out of `n`, uniformly.
pub fn sample_indices<R: Rng + ?Sized>(n: usize, b: usize, rng: &mut R) -> Vec<usize> {
    index::sample(rng, n, b.min(n)).into_vec()
}

pub fn plaintext_dpsgd<R: Rng + ?Sized>(
    data: &Dataset,
    init: &Model,
    cfg: &DpsgdConfig,
    rng: &mut R,
) -> Result<Model, TrainError> {
    plaintext_dpsgd_with(data, init, cfg, rng, |_, _| {})
}

/// Uniform minibatches without replacement, clipped per-sample gradients,
/// `N(0, sigma^2)` noise on the sum; `on_step` sees the model after each
/// update.
pub fn plaintext_dpsgd_with<R, F>(
    data: &Dataset,
    init: &Model,
    cfg: &DpsgdConfig,
    rng: &mut R,
    mut on_step: F,
) -> Result<Model, TrainError>
where
    R: Rng + ?Sized,
    F: FnMut(u64, &Model),
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(TrainError::Config("cannot train on an empty dataset".into()));
    }
    if init.dim != data.dim || init.classes != data.classes {
        return Err(TrainError::Config("model and dataset shapes differ".into()));
    }
    let sigma = cfg.sigma()?;
    let noise = Normal::new(0.0, sigma).map_err(|e| TrainError::Config(format!("noise distribution: {e}")))?;
    let mut model = init.clone();
    for t in 0..cfg.iterations {
        let batch = sample_indices(data.len(), cfg.batch, rng);
        let mut sum = vec![0.0; model.len()];
        for &i in &batch {
            let mut g = per_sample_gradient(&model, data.row(i), data.labels[i]);
            if cfg.is_private() {
                g = exact_clip(&g, cfg.clip);
            }
            sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
        }
        if cfg.is_private() && sigma > 0.0 {
            sum.iter_mut().for_each(|s| *s += noise.sample(rng));
        }
        let step = cfg.lr.rate(t, cfg.iterations) / batch.len() as f64;
        model.params.iter_mut().zip(&sum).for_each(|(p, s)| *p -= step * s);
        on_step(t, &model);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{LrSchedule, PrivacyMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sigmoid_pieces() {
        assert_eq!(piecewise_sigmoid(-3.0), 0.0);
        assert_eq!(piecewise_sigmoid(-0.5), 0.0);
        assert_eq!(piecewise_sigmoid(0.0), 0.5);
        assert_eq!(piecewise_sigmoid(0.5), 1.0);
        assert_eq!(piecewise_sigmoid(7.0), 1.0);
    }

    #[test]
    fn gradient_closed_form() {
        let mut m = Model::zeros(2, 2);
        m.params = vec![0.1, -0.2, 0.3, 0.0, 0.05, 0.0];
        let g = per_sample_gradient(&m, &[1.0, 2.0], 1);
        // u = [0.1 + 0.6 + 0.05, -0.2 + 0.0] = [0.75, -0.2]
        let r = [1.0, 0.3 - 1.0];
        let want = [r[0], r[1], 2.0 * r[0], 2.0 * r[1], r[0], r[1]];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn separable_data_is_learned() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let n = 400;
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let y = i % 2;
            let c = if y == 0 { -1.0 } else { 1.0 };
            feats.push(c + rng.random_range(-0.5..0.5));
            feats.push(rng.random_range(-1.0..1.0));
            labels.push(y);
        }
        let data = Dataset::new(feats, labels, 2, 2).unwrap();
        let cfg = DpsgdConfig {
            batch: 32,
            iterations: 200,
            clip: 3.0,
            lr: LrSchedule::Constant(0.2),
            privacy: PrivacyMode::NonPrivate,
        };
        let m = plaintext_dpsgd(&data, &Model::zeros(2, 2), &cfg, &mut rng).unwrap();
        assert!(m.accuracy(&data) > 0.97, "{}", m.accuracy(&data));
    }
}
