//! Importance-sampling estimators of `F`, `Z` and observables, and their bootstrap errors.
//!
//! Everything is computed from log-weights with a max shift; `e^{±βE}` is never formed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arnet::ModelParameters;
use crate::error::{check_len, Error, Result};
use crate::lattice::{magnetization, Couplings};
use crate::priors::{PriorKind, PriorSpec};
use crate::rng::derived_rng;
use crate::sampler::sample_chunked;
use crate::scalar::Real;

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_ESTIMATE_SAMPLES: usize = 1 << 20;
const ESTIMATE_CHUNK: usize = 4096;

fn non_empty(xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        Err(Error::invalid("estimator needs at least one sample"))
    } else {
        Ok(())
    }
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `⟨w̃⟩² / ⟨w̃²⟩` from log-weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    non_empty(log_weights)?;
    let max = max_of(log_weights);
    let (mut s1, mut s2) = (0.0, 0.0);
    for &lw in log_weights {
        let w = (lw - max).exp();
        s1 += w;
        s2 += w * w;
    }
    Ok(s1 * s1 / (s2 * log_weights.len() as f64))
}

/// `-log Z_nis` with `Z_nis = (1/M) Σ w̃`.
pub fn f_nis(log_weights: &[f64]) -> Result<f64> {
    non_empty(log_weights)?;
    Ok(-log_mean_exp(log_weights))
}

/// `log Z_nis`.
pub fn log_z_nis(log_weights: &[f64]) -> Result<f64> {
    non_empty(log_weights)?;
    Ok(log_mean_exp(log_weights))
}

fn log_mean_exp(xs: &[f64]) -> f64 {
    crate::scalar::log_mean_exp(xs)
}

/// `F_mc = log ⟨e^{log q + βE}⟩_p` from the values `log q(s) + βE(s)` of samples drawn from `p`.
pub fn f_mc_from_signal(signal: &[f64]) -> Result<f64> {
    non_empty(signal)?;
    Ok(log_mean_exp(signal))
}

/// `F_mc` for MC configurations (back to back) evaluated under the model.
pub fn f_mc<T: Real>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    mc_samples: &[i8],
    beta: f64,
) -> Result<f64> {
    f_mc_from_signal(&mc_signal(params, spec, couplings, mc_samples, beta)?)
}

fn mc_signal<T: Real>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    mc_samples: &[i8],
    beta: f64,
) -> Result<Vec<f64>> {
    let n = params.sites();
    check_len(n, couplings.geometry().sites())?;
    if mc_samples.len() % n != 0 {
        return Err(Error::invalid(format!(
            "MC sample buffer of length {} is not a multiple of {n} sites",
            mc_samples.len()
        )));
    }
    let mut out = Vec::with_capacity(mc_samples.len() / n);
    for chunk in mc_samples.chunks(ESTIMATE_CHUNK * n) {
        let lq = params.log_prob(spec, chunk)?;
        for (s, l) in chunk.chunks(n).zip(lq) {
            out.push(l.as_f64() + beta * couplings.energy_unchecked(s) as f64);
        }
    }
    Ok(out)
}

/// `w̄ = Z_nis / Z_mc = e^{F_mc - F_nis}`.
pub fn w_bar(f_nis: f64, f_mc: f64) -> f64 {
    (f_mc - f_nis).exp()
}

/// Self-normalized `Σ w̃ O / Σ w̃`.
pub fn nis_observable(log_weights: &[f64], values: &[f64]) -> Result<f64> {
    non_empty(log_weights)?;
    check_len(log_weights.len(), values.len())?;
    let max = max_of(log_weights);
    let (mut num, mut den) = (0.0, 0.0);
    for (&lw, &v) in log_weights.iter().zip(values) {
        let w = (lw - max).exp();
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// Per-resample column sums of `features` over `resamples` with-replacement index draws.
pub fn bootstrap_sums<const K: usize, R: Rng + ?Sized>(
    features: &[[f64; K]],
    resamples: usize,
    rng: &mut R,
) -> Vec<[f64; K]> {
    let n = features.len();
    (0..resamples)
        .map(|_| {
            let mut acc = [0.0; K];
            for _ in 0..n {
                let row = &features[rng.random_range(0..n)];
                for (a, x) in acc.iter_mut().zip(row) {
                    *a += x;
                }
            }
            acc
        })
        .collect()
}

fn std_dev(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = xs.clone().fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let ss: f64 = xs.map(|x| (x - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn check_resamples(resamples: usize) -> Result<()> {
    if resamples < 100 {
        return Err(Error::invalid(format!(
            "bootstrap needs at least 100 resamples, got {resamples}"
        )));
    }
    Ok(())
}

/// Bootstrap standard error of the mean of `values`, or of the self-normalized
/// weighted mean when `log_weights` is given.
pub fn bootstrap_error<R: Rng + ?Sized>(
    values: &[f64],
    log_weights: Option<&[f64]>,
    resamples: usize,
    rng: &mut R,
) -> Result<f64> {
    check_resamples(resamples)?;
    non_empty(values)?;
    if values.len() == 1 {
        log::warn!("bootstrap of a single sample; reporting zero error");
        return Ok(0.0);
    }
    let features: Vec<[f64; 2]> = match log_weights {
        Some(lw) => {
            check_len(values.len(), lw.len())?;
            let max = max_of(lw);
            lw.iter()
                .zip(values)
                .map(|(&l, &v)| {
                    let w = (l - max).exp();
                    [w * v, w]
                })
                .collect()
        }
        None => values.iter().map(|&v| [v, 1.0]).collect(),
    };
    let sums = bootstrap_sums(&features, resamples, rng);
    Ok(std_dev(sums.iter().map(|s| s[0] / s[1])))
}

/// A value with its bootstrap standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub error: f64,
}

/// `⟨E⟩`, `⟨M⟩`, `⟨|M|⟩` with `M` the unnormalized magnetization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observables {
    pub energy: Measured,
    pub magnetization: Measured,
    pub abs_magnetization: Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub side: usize,
    pub beta: f64,
    pub prior_kind: PriorKind,
    pub order: u8,
    pub samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_samples: Option<usize>,
    pub ess: Measured,
    pub f_q: Measured,
    pub f_nis: Measured,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_mc: Option<Measured>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_bar: Option<Measured>,
    /// Plain averages over samples from `q`.
    pub variational: Observables,
    /// Importance-weighted averages over samples from `q`.
    pub nis: Observables,
    /// Averages over the MC samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<Observables>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_exact: Option<f64>,
    /// `F_q - F`, the reverse KL divergence, when `F` is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
}

/// Scalars kept per sample: `log q + βE`, `E`, `M`.
#[derive(Debug, Clone, Default)]
pub struct SampleScalars {
    pub signal: Vec<f64>,
    pub energy: Vec<f64>,
    pub magnetization: Vec<f64>,
}

impl SampleScalars {
    pub fn len(&self) -> usize {
        self.signal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signal.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.signal.iter().map(|x| -x).collect()
    }
}

/// Draws `samples` configurations from the model in chunks and keeps only per-sample scalars.
pub fn model_scalars<T: Real>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    samples: usize,
    seed: u64,
) -> Result<SampleScalars> {
    let beta = spec.beta().as_f64();
    let mut out = SampleScalars::default();
    let step = ESTIMATE_CHUNK * 16;
    let mut done = 0;
    let mut block = 0u64;
    while done < samples {
        let count = step.min(samples - done);
        let ns = format!("estimate-{block}");
        let batch = sample_chunked(params, spec, couplings, count, ESTIMATE_CHUNK, seed, &ns)?;
        out.signal.extend(batch.signal(beta));
        out.energy.extend(batch.energies.iter().map(|&e| e as f64));
        out.magnetization
            .extend(batch.configs().map(|s| magnetization(s) as f64));
        done += count;
        block += 1;
    }
    Ok(out)
}

fn mc_scalars<T: Real>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    mc_samples: &[i8],
) -> Result<SampleScalars> {
    let n = params.sites();
    let signal = mc_signal(params, spec, couplings, mc_samples, spec.beta().as_f64())?;
    let chunks = mc_samples.chunks(n);
    Ok(SampleScalars {
        signal,
        energy: chunks
            .clone()
            .map(|s| couplings.energy_unchecked(s) as f64)
            .collect(),
        magnetization: chunks.map(|s| magnetization(s) as f64).collect(),
    })
}

/// Estimates every column of the report from model samples and, optionally, MC samples.
#[allow(clippy::too_many_arguments)]
pub fn estimate<T: Real>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    samples: usize,
    seed: u64,
    mc_samples: Option<&[i8]>,
    resamples: usize,
) -> Result<EstimateReport> {
    if samples == 0 {
        return Err(Error::invalid("estimate needs at least one sample"));
    }
    let model = model_scalars(params, spec, couplings, samples, seed)?;
    let mc = mc_samples
        .map(|s| mc_scalars(params, spec, couplings, s))
        .transpose()?;
    if mc.as_ref().is_some_and(|m| m.is_empty()) {
        return Err(Error::invalid("MC sample set is empty"));
    }
    let mut rng = derived_rng(seed, "bootstrap", 0);
    report_from_scalars(spec, &model, mc.as_ref(), resamples, &mut rng)
}

/// Joint bootstrap over model samples (and MC samples, resampled independently).
pub fn report_from_scalars<T: Real, R: Rng + ?Sized>(
    spec: &PriorSpec<T>,
    model: &SampleScalars,
    mc: Option<&SampleScalars>,
    resamples: usize,
    rng: &mut R,
) -> Result<EstimateReport> {
    check_resamples(resamples)?;
    non_empty(&model.signal)?;
    let m = model.len() as f64;
    let log_w = model.log_weights();
    let shift = max_of(&log_w);
    let features: Vec<[f64; 9]> = (0..model.len())
        .map(|i| {
            let w = (log_w[i] - shift).exp();
            let (e, mg) = (model.energy[i], model.magnetization[i]);
            [
                model.signal[i],
                w,
                w * w,
                w * e,
                w * mg,
                w * mg.abs(),
                e,
                mg,
                mg.abs(),
            ]
        })
        .collect();
    let stats = |s: &[f64; 9]| -> [f64; 9] {
        [
            s[0] / m,
            -((s[1] / m).ln() + shift),
            s[1] * s[1] / (m * s[2]),
            s[3] / s[1],
            s[4] / s[1],
            s[5] / s[1],
            s[6] / m,
            s[7] / m,
            s[8] / m,
        ]
    };
    let total = features.iter().fold([0.0; 9], |mut acc, r| {
        acc.iter_mut().zip(r).for_each(|(a, x)| *a += x);
        acc
    });
    let point = stats(&total);
    let boot: Vec<[f64; 9]> = if model.len() > 1 {
        bootstrap_sums(&features, resamples, rng)
            .iter()
            .map(stats)
            .collect()
    } else {
        log::warn!("single model sample; reporting zero errors");
        vec![point]
    };
    let measured = |k: usize| Measured {
        value: point[k],
        error: std_dev(boot.iter().map(|b| b[k])),
    };

    let mut report = EstimateReport {
        side: spec.geometry().side(),
        beta: spec.beta().as_f64(),
        prior_kind: spec.kind(),
        order: spec.order(),
        samples: model.len(),
        mc_samples: None,
        f_q: measured(0),
        f_nis: measured(1),
        ess: measured(2),
        nis: Observables {
            energy: measured(3),
            magnetization: measured(4),
            abs_magnetization: measured(5),
        },
        variational: Observables {
            energy: measured(6),
            magnetization: measured(7),
            abs_magnetization: measured(8),
        },
        f_mc: None,
        w_bar: None,
        mc: None,
        f_exact: None,
        kl: None,
    };

    if let Some(mc) = mc {
        non_empty(&mc.signal)?;
        let k = mc.len() as f64;
        let shift = max_of(&mc.signal);
        let features: Vec<[f64; 4]> = (0..mc.len())
            .map(|i| {
                let mg = mc.magnetization[i];
                [(mc.signal[i] - shift).exp(), mc.energy[i], mg, mg.abs()]
            })
            .collect();
        let stats =
            |s: &[f64; 4]| -> [f64; 4] { [(s[0] / k).ln() + shift, s[1] / k, s[2] / k, s[3] / k] };
        let total = features.iter().fold([0.0; 4], |mut acc, r| {
            acc.iter_mut().zip(r).for_each(|(a, x)| *a += x);
            acc
        });
        let point_mc = stats(&total);
        let boot_mc: Vec<[f64; 4]> = if mc.len() > 1 {
            bootstrap_sums(&features, boot.len(), rng)
                .iter()
                .map(stats)
                .collect()
        } else {
            vec![point_mc; boot.len()]
        };
        let measured_mc = |j: usize| Measured {
            value: point_mc[j],
            error: std_dev(boot_mc.iter().map(|b| b[j])),
        };
        report.mc_samples = Some(mc.len());
        report.f_mc = Some(measured_mc(0));
        report.w_bar = Some(Measured {
            value: w_bar(point[1], point_mc[0]),
            error: std_dev(boot.iter().zip(&boot_mc).map(|(a, b)| w_bar(a[1], b[0]))),
        });
        report.mc = Some(Observables {
            energy: measured_mc(1),
            magnetization: measured_mc(2),
            abs_magnetization: measured_mc(3),
        });
    }
    Ok(report)
}

impl EstimateReport {
    /// Records the exact free energy and the implied `D_KL(q||p) = F_q - F`.
    pub fn with_exact(mut self, f: f64) -> Self {
        self.f_exact = Some(f);
        self.kl = Some(self.f_q.value - f);
        self
    }
}
