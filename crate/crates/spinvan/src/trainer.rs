//! REINFORCE minimization of `F_q` with Adam.

use serde::{Deserialize, Serialize};

use crate::arnet::{init_model, ModelParameters, Tensors};
use crate::error::{Error, Result};
use crate::estimators::ess;
use crate::lattice::{magnetization, Couplings};
use crate::priors::{PriorKind, PriorSpec};
use crate::rng::derive_seed;
use crate::sampler::{sample_chunked, SampleBatch};
use crate::scalar::Real;

pub const DEFAULT_BATCH: usize = 4096;
pub const DEFAULT_ERA_LENGTH: usize = 100;
const SAMPLE_CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub beta: f64,
    pub batch_size: usize,
    pub era_length: usize,
    pub eras: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub prior_kind: PriorKind,
    pub order: u8,
    /// Hidden width; the number of sites when absent.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: crate::exact::BETA_C,
            batch_size: DEFAULT_BATCH,
            era_length: DEFAULT_ERA_LENGTH,
            eras: 1,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            prior_kind: PriorKind::Ising,
            order: 0,
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if self.era_length < 1 {
            return Err(Error::invalid("era length must be at least 1"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::invalid(format!(
                "beta must be finite and non-negative, got {}",
                self.beta
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("moment decays must lie in [0, 1)"));
        }
        if self.hidden == Some(0) {
            return Err(Error::invalid("hidden width must be at least 1"));
        }
        Ok(())
    }
}

/// Statistics of one update's batch. Magnetizations are per site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub update: usize,
    pub era: usize,
    pub f_q: f64,
    pub ess: f64,
    pub m_mean: f64,
    pub m_abs_mean: f64,
    pub grad_norm: f64,
}

/// `F_q` estimate of the batch and the score-function gradient
/// `(1/M) Σ (log q + βE - b) ∇ log q` with `b` the batch mean.
pub fn loss_and_gradient<T: Real>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    batch: &SampleBatch<T>,
) -> Result<(f64, Tensors<T>)> {
    let m = batch.len();
    if m < 2 {
        return Err(Error::invalid("REINFORCE needs a batch of at least 2"));
    }
    let signal = batch.signal(spec.beta().as_f64());
    let f_q = signal.iter().sum::<f64>() / m as f64;
    let coeffs: Vec<T> = signal
        .iter()
        .map(|&x| T::lit((x - f_q) / m as f64))
        .collect();
    let mut grad = Tensors::zeros(params.sites(), params.hidden());
    params.accumulate_score_gradient(spec, &batch.spins, &coeffs, &mut grad)?;
    Ok((f_q, grad))
}

/// Adaptive-moment optimizer that keeps masked weights at zero.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
    steps: i32,
    m: Tensors<T>,
    v: Tensors<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(
        params: &ModelParameters<T>,
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        Adam {
            learning_rate: T::lit(learning_rate),
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            epsilon: T::lit(epsilon),
            steps: 0,
            m: Tensors::zeros(params.sites(), params.hidden()),
            v: Tensors::zeros(params.sites(), params.hidden()),
        }
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParameters<T>, grad: &Tensors<T>) {
        self.steps += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.steps);
        let c2 = one - self.beta2.powi(self.steps);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((w, &g), m), v) in params
            .tensors
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
        let mut t = std::mem::replace(&mut params.tensors, Tensors::zeros(0, 0));
        params.apply_mask(&mut t);
        params.tensors = t;
    }
}

fn batch_metrics<T: Real>(batch: &SampleBatch<T>, beta: f64) -> Result<(f64, f64, f64, f64)> {
    let signal = batch.signal(beta);
    let m = batch.len() as f64;
    let f_q = signal.iter().sum::<f64>() / m;
    let log_w: Vec<f64> = signal.iter().map(|x| -x).collect();
    let n = batch.sites as f64;
    let mags: Vec<f64> = batch
        .configs()
        .map(|s| magnetization(s) as f64 / n)
        .collect();
    Ok((
        f_q,
        ess(&log_w)?,
        mags.iter().sum::<f64>() / m,
        mags.iter().map(|x| x.abs()).sum::<f64>() / m,
    ))
}

/// Final parameters and the per-update metrics stream.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub params: ModelParameters<T>,
    pub spec: PriorSpec<T>,
    pub metrics: Vec<RunMetrics>,
}

/// Builds the model for `config` without training it.
pub fn initial_model<T: Real>(
    config: &TrainConfig,
    couplings: &Couplings,
) -> Result<(ModelParameters<T>, PriorSpec<T>)> {
    config.validate()?;
    let geometry = couplings.geometry();
    let spec = PriorSpec::build(
        config.prior_kind,
        couplings,
        T::lit(config.beta),
        config.order,
    )?;
    let hidden = config.hidden.unwrap_or(geometry.sites());
    let params = init_model(geometry, hidden, derive_seed(config.seed, "init", 0))?;
    Ok((params, spec))
}

/// Runs `eras × era_length` updates. `on_update` sees every metrics record; `on_era(k, params)`
/// is called with the initial model (`k = 0`) and after each era.
///
/// Update `u` samples its batch with master seed `derive_seed(seed, "train", u)`.
pub fn train<T: Real>(
    config: &TrainConfig,
    couplings: &Couplings,
    mut on_update: impl FnMut(&RunMetrics) -> Result<()>,
    mut on_era: impl FnMut(usize, &ModelParameters<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let (mut params, spec) = initial_model::<T>(config, couplings)?;
    let mut adam = Adam::new(
        &params,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_epsilon,
    );
    let mut metrics = Vec::with_capacity(config.eras * config.era_length);
    on_era(0, &params)?;
    for era in 0..config.eras {
        for step in 0..config.era_length {
            let update = era * config.era_length + step;
            let batch = sample_chunked(
                &params,
                &spec,
                couplings,
                config.batch_size,
                SAMPLE_CHUNK,
                derive_seed(config.seed, "train", update as u64),
                "batch",
            )?;
            let (f_q, ess, m_mean, m_abs_mean) = batch_metrics(&batch, config.beta)?;
            let (_, grad) = loss_and_gradient(&params, &spec, &batch)?;
            let grad_norm = grad.norm().as_f64();
            if !f_q.is_finite() || !grad_norm.is_finite() {
                return Err(Error::Diverged {
                    update,
                    value: if f_q.is_finite() { grad_norm } else { f_q },
                });
            }
            adam.step(&mut params, &grad);
            let record = RunMetrics {
                update,
                era,
                f_q,
                ess,
                m_mean,
                m_abs_mean,
                grad_norm,
            };
            on_update(&record)?;
            metrics.push(record);
        }
        on_era(era + 1, &params)?;
    }
    Ok(TrainOutcome {
        params,
        spec,
        metrics,
    })
}

/// Trailing moving average over `window` points (shorter at the start).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, &v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arnet::randomize;
    use crate::lattice::{Geometry, SpinConfig};
    use crate::rng::rng_from_seed;
    use crate::sampler::ancestral_sample;

    fn all_configs(n: usize) -> Vec<i8> {
        (0..1u64 << n)
            .flat_map(|b| SpinConfig::from_bits(b, n).into_inner())
            .collect()
    }

    /// `Σ_s q(s) (log q(s) + βE(s))` by enumeration.
    fn exact_loss(
        p: &ModelParameters<f64>,
        spec: &PriorSpec<f64>,
        c: &Couplings,
        all: &[i8],
    ) -> f64 {
        let lq = p.log_prob(spec, all).unwrap();
        let beta = spec.beta();
        all.chunks(p.sites())
            .zip(&lq)
            .map(|(s, &l)| l.exp() * (l + beta * c.energy(s).unwrap() as f64))
            .sum()
    }

    #[test]
    fn exact_gradient_matches_finite_differences() {
        let g = Geometry::new(3).unwrap();
        let c = Couplings::ferromagnetic(g);
        let spec = PriorSpec::ising(g, 0.44, 2).unwrap();
        let all = all_configs(9);
        let mut p = init_model::<f64>(g, 9, 0).unwrap();
        randomize(&mut p, 0.5, &mut rng_from_seed(1));
        // expected gradient: the REINFORCE sum weighted by q instead of sampled
        let lq = p.log_prob(&spec, &all).unwrap();
        let signal: Vec<f64> = all
            .chunks(9)
            .zip(&lq)
            .map(|(s, &l)| l + 0.44 * c.energy(s).unwrap() as f64)
            .collect();
        let f: f64 = lq.iter().zip(&signal).map(|(l, s)| l.exp() * s).sum();
        let coeffs: Vec<f64> = lq
            .iter()
            .zip(&signal)
            .map(|(l, s)| l.exp() * (s - f))
            .collect();
        let mut grad = Tensors::zeros(9, 9);
        p.accumulate_score_gradient(&spec, &all, &coeffs, &mut grad)
            .unwrap();
        let h = 1e-5;
        let n_params = p.tensors.len();
        let analytic: Vec<f64> = grad.iter().copied().collect();
        for k in (0..n_params).step_by(7) {
            let mut plus = p.clone();
            *plus.tensors.iter_mut().nth(k).unwrap() += h;
            let mut minus = p.clone();
            *minus.tensors.iter_mut().nth(k).unwrap() -= h;
            let fd = (exact_loss(&plus, &spec, &c, &all) - exact_loss(&minus, &spec, &c, &all))
                / (2.0 * h);
            let scale = fd.abs().max(analytic[k].abs()).max(1e-4);
            assert!(
                (fd - analytic[k]).abs() / scale < 1e-5,
                "param {k}: fd {fd} vs {}",
                analytic[k]
            );
        }
    }

    #[test]
    fn masked_weights_stay_zero() {
        let g = Geometry::new(3).unwrap();
        let c = Couplings::ea_binary(g, 4);
        let spec = PriorSpec::ea(&c, 0.8, 2).unwrap();
        let mut p = init_model::<f64>(g, 12, 2).unwrap();
        let mut adam = Adam::new(&p, 0.05, 0.9, 0.999, 1e-8);
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let batch = ancestral_sample(&p, &spec, &c, 64, &mut rng).unwrap();
            let (_, mut grad) = loss_and_gradient(&p, &spec, &batch).unwrap();
            // poison masked gradient entries; the optimizer must still leave them at zero
            grad.iter_mut().for_each(|x| *x += 1.0);
            adam.step(&mut p, &grad);
        }
        let mut masked = p.tensors.clone();
        p.apply_mask(&mut masked);
        assert_eq!(masked, p.tensors);
        assert!(p.tensors.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn energy_shift_only_moves_the_baseline() {
        let g = Geometry::new(3).unwrap();
        let c = Couplings::ferromagnetic(g);
        let spec = PriorSpec::ising(g, 0.4, 1).unwrap();
        let mut p = init_model::<f64>(g, 9, 0).unwrap();
        randomize(&mut p, 0.4, &mut rng_from_seed(5));
        let batch = ancestral_sample(&p, &spec, &c, 128, &mut rng_from_seed(6)).unwrap();
        let mut shifted = batch.clone();
        shifted.energies.iter_mut().for_each(|e| *e += 1000);
        let (f0, g0) = loss_and_gradient(&p, &spec, &batch).unwrap();
        let (f1, g1) = loss_and_gradient(&p, &spec, &shifted).unwrap();
        assert!((f1 - f0 - 400.0).abs() < 1e-9);
        for (a, b) in g0.iter().zip(g1.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_target_is_stationary() {
        let g = Geometry::new(3).unwrap();
        let c = Couplings::ferromagnetic(g);
        let spec = PriorSpec::ising(g, 0.0, 0).unwrap();
        let p = init_model::<f64>(g, 9, 0).unwrap();
        let batch = ancestral_sample(&p, &spec, &c, 256, &mut rng_from_seed(0)).unwrap();
        let (f, grad) = loss_and_gradient(&p, &spec, &batch).unwrap();
        assert!((f + 9.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(grad.norm() < 1e-12);
    }

    #[test]
    fn zero_updates_reproduce_the_prior() {
        let g = Geometry::new(4).unwrap();
        let c = Couplings::ferromagnetic(g);
        let config = TrainConfig {
            beta: 0.44,
            order: 4,
            eras: 0,
            batch_size: 512,
            ..TrainConfig::default()
        };
        let mut eras = Vec::new();
        let out = train::<f64>(
            &config,
            &c,
            |_| Ok(()),
            |k, _| {
                eras.push(k);
                Ok(())
            },
        )
        .unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(eras, vec![0]);
        let prior = PriorSpec::ising(g, 0.44, 4).unwrap();
        let x: Vec<i8> = SpinConfig::random(g, &mut rng_from_seed(1)).into_inner();
        let prior_lq = ModelParameters::<f64>::zeros(16, 16, 0.01)
            .unwrap()
            .log_prob(&prior, &x)
            .unwrap();
        assert_eq!(out.params.log_prob(&out.spec, &x).unwrap(), prior_lq);
    }

    #[test]
    fn metrics_bookkeeping_and_determinism() {
        let g = Geometry::new(3).unwrap();
        let c = Couplings::ferromagnetic(g);
        let config = TrainConfig {
            beta: 0.44,
            order: 1,
            eras: 3,
            era_length: 4,
            batch_size: 64,
            learning_rate: 1e-2,
            seed: 9,
            ..TrainConfig::default()
        };
        let mut streamed = 0;
        let mut eras = Vec::new();
        let a = train::<f64>(
            &config,
            &c,
            |_| {
                streamed += 1;
                Ok(())
            },
            |k, _| {
                eras.push(k);
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(a.metrics.len(), 12);
        assert_eq!(streamed, 12);
        assert_eq!(eras, vec![0, 1, 2, 3]);
        for (i, m) in a.metrics.iter().enumerate() {
            assert_eq!(m.update, i);
            assert_eq!(m.era, i / 4);
            assert!(m.ess > 0.0 && m.ess <= 1.0 && m.f_q.is_finite());
        }
        let b = train::<f64>(&config, &c, |_| Ok(()), |_, _| Ok(())).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn training_lowers_f_q() {
        let g = Geometry::new(4).unwrap();
        let c = Couplings::ferromagnetic(g);
        let config = TrainConfig {
            beta: 0.44,
            order: 0,
            eras: 3,
            era_length: 100,
            batch_size: 256,
            learning_rate: 1e-2,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train::<f64>(&config, &c, |_| Ok(()), |_, _| Ok(())).unwrap();
        let head = out.metrics[..20].iter().map(|m| m.f_q).sum::<f64>() / 20.0;
        let tail = out.metrics[280..].iter().map(|m| m.f_q).sum::<f64>() / 20.0;
        let exact = -crate::exact::enumerate(&c, 0.44).unwrap().log_z;
        assert!(tail < head - 1.0, "{head} -> {tail}");
        assert!(tail > exact - 0.1);
    }

    #[test]
    fn invalid_configs() {
        let c = Couplings::ferromagnetic(Geometry::new(2).unwrap());
        for bad in [
            TrainConfig {
                batch_size: 1,
                ..TrainConfig::default()
            },
            TrainConfig {
                era_length: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                beta: f64::NAN,
                ..TrainConfig::default()
            },
            TrainConfig {
                hidden: Some(0),
                ..TrainConfig::default()
            },
        ] {
            assert!(train::<f64>(&bad, &c, |_| Ok(()), |_, _| Ok(())).is_err());
        }
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(
            moving_average(&[1.0, 3.0, 5.0, 7.0], 2),
            vec![1.0, 2.0, 4.0, 6.0]
        );
    }
}
