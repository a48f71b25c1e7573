//! Ancestral sampling from prior plus network, with cached hidden pre-activations.

use rand::Rng;
use rayon::prelude::*;

use crate::arnet::{signed, ModelParameters};
use crate::error::{check_len, Error, Result};
use crate::lattice::Couplings;
use crate::priors::PriorSpec;
use crate::rng::derived_rng;
use crate::scalar::{log_sigmoid, sigmoid, Real};

/// Configurations drawn from `q`, back to back, with their `log q` and energies.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<T> {
    pub sites: usize,
    pub spins: Vec<i8>,
    pub log_q: Vec<T>,
    pub energies: Vec<i64>,
}

impl<T: Real> SampleBatch<T> {
    pub fn len(&self) -> usize {
        self.log_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_q.is_empty()
    }

    pub fn config(&self, b: usize) -> &[i8] {
        &self.spins[b * self.sites..(b + 1) * self.sites]
    }

    pub fn configs(&self) -> std::slice::ChunksExact<'_, i8> {
        self.spins.chunks_exact(self.sites)
    }

    /// `log q + βE` per sample; its mean is the `F_q` estimate.
    pub fn signal(&self, beta: f64) -> Vec<f64> {
        self.log_q
            .iter()
            .zip(&self.energies)
            .map(|(lq, &e)| lq.as_f64() + beta * e as f64)
            .collect()
    }

    /// Unnormalized log importance weights `-βE - log q`.
    pub fn log_weights(&self, beta: f64) -> Vec<f64> {
        self.signal(beta).into_iter().map(|x| -x).collect()
    }

    pub fn magnetizations(&self) -> Vec<i64> {
        self.configs().map(crate::lattice::magnetization).collect()
    }

    pub fn append(&mut self, other: SampleBatch<T>) {
        self.spins.extend(other.spins);
        self.log_q.extend(other.log_q);
        self.energies.extend(other.energies);
    }
}

/// Incremental state of a batch being sampled site by site.
#[derive(Debug, Clone)]
pub struct SamplerCache<T> {
    batch: usize,
    sites: usize,
    hidden: usize,
    cursor: usize,
    pre: Vec<T>,
    outputs: Vec<T>,
    log_q: Vec<T>,
    spins: Vec<i8>,
}

impl<T: Real> SamplerCache<T> {
    pub fn new(params: &ModelParameters<T>, batch: usize) -> Result<Self> {
        if batch == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        let (n, h) = (params.sites(), params.hidden());
        let mut pre = Vec::with_capacity(batch * h);
        for _ in 0..batch {
            pre.extend_from_slice(&params.tensors.b_hidden);
        }
        Ok(SamplerCache {
            batch,
            sites: n,
            hidden: h,
            cursor: 0,
            pre,
            outputs: vec![T::zero(); batch * n],
            log_q: vec![T::zero(); batch],
            spins: vec![1; batch * n],
        })
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == self.sites
    }

    /// Hidden pre-activations of batch element `b`.
    pub fn pre_activations(&self, b: usize) -> &[T] {
        &self.pre[b * self.hidden..(b + 1) * self.hidden]
    }

    /// Network outputs `h_i` produced so far for batch element `b`.
    pub fn outputs(&self, b: usize) -> &[T] {
        &self.outputs[b * self.sites..b * self.sites + self.cursor]
    }

    /// Spins sampled so far for batch element `b`.
    pub fn prefix(&self, b: usize) -> &[i8] {
        &self.spins[b * self.sites..b * self.sites + self.cursor]
    }

    pub fn log_q(&self) -> &[T] {
        &self.log_q
    }

    /// Samples the spin at the cursor for every batch element, one uniform each, in batch order.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        params: &ModelParameters<T>,
        spec: &PriorSpec<T>,
        rng: &mut R,
    ) -> Result<()> {
        if self.is_complete() {
            return Err(Error::invalid("sampler cache is already complete"));
        }
        let (n, h, i) = (self.sites, self.hidden, self.cursor);
        for b in 0..self.batch {
            let pre = &mut self.pre[b * h..(b + 1) * h];
            let spins = &mut self.spins[b * n..(b + 1) * n];
            let out = params.output_at(pre, i);
            let z = out + spec.logit_site(spins, i);
            let u = T::lit(rng.random::<f64>());
            let s: i8 = if u < sigmoid(z) { 1 } else { -1 };
            spins[i] = s;
            self.outputs[b * n + i] = out;
            self.log_q[b] += log_sigmoid(signed(s, z));
            params.accumulate_input(pre, i, s);
        }
        self.cursor += 1;
        Ok(())
    }

    pub fn finish(self, couplings: &Couplings) -> Result<SampleBatch<T>> {
        if !self.is_complete() {
            return Err(Error::invalid("sampler cache is not complete"));
        }
        let energies = self
            .spins
            .chunks_exact(self.sites)
            .map(|s| couplings.energy_unchecked(s))
            .collect();
        Ok(SampleBatch {
            sites: self.sites,
            spins: self.spins,
            log_q: self.log_q,
            energies,
        })
    }
}

fn check_model(
    params: &ModelParameters<impl Real>,
    spec: &PriorSpec<impl Real>,
    couplings: &Couplings,
) -> Result<()> {
    check_len(params.sites(), spec.geometry().sites())?;
    check_len(params.sites(), couplings.geometry().sites())
}

/// Draws `batch` configurations from `q`, site-major, one uniform per (element, site).
pub fn ancestral_sample<T: Real, R: Rng + ?Sized>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    batch: usize,
    rng: &mut R,
) -> Result<SampleBatch<T>> {
    check_model(params, spec, couplings)?;
    let mut cache = SamplerCache::new(params, batch)?;
    for _ in 0..params.sites() {
        cache.step(params, spec, rng)?;
    }
    cache.finish(couplings)
}

/// Draws `total` samples in chunks of `chunk`; chunk `k` uses `derive_seed(seed, namespace, k)`.
/// The result does not depend on the number of threads.
pub fn sample_chunked<T: Real>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    total: usize,
    chunk: usize,
    seed: u64,
    namespace: &str,
) -> Result<SampleBatch<T>> {
    if total == 0 || chunk == 0 {
        return Err(Error::invalid(
            "sample count and chunk size must be positive",
        ));
    }
    check_model(params, spec, couplings)?;
    let parts: Vec<SampleBatch<T>> = (0..total.div_ceil(chunk))
        .into_par_iter()
        .map(|k| {
            let size = chunk.min(total - k * chunk);
            let mut rng = derived_rng(seed, namespace, k as u64);
            ancestral_sample(params, spec, couplings, size, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let mut all = iter.next().expect("at least one chunk");
    for p in iter {
        all.append(p);
    }
    Ok(all)
}

/// Independence Metropolis chain over ancestral proposals.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcChain {
    pub sites: usize,
    pub spins: Vec<i8>,
    pub energies: Vec<i64>,
    pub accepted: usize,
    pub acceptance_rate: f64,
}

impl McmcChain {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn state(&self, t: usize) -> &[i8] {
        &self.spins[t * self.sites..(t + 1) * self.sites]
    }
}

const PROPOSAL_BATCH: usize = 1024;

/// Chain of `length` states targeting `p ∝ e^{-βE}`. The first proposal is the initial state;
/// each later proposal `s'` replaces `s` with probability `min(1, w̃(s')/w̃(s))`.
pub fn neural_mcmc_chain<T: Real, R: Rng + ?Sized>(
    params: &ModelParameters<T>,
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    beta: f64,
    length: usize,
    rng: &mut R,
) -> Result<McmcChain> {
    if length == 0 {
        return Err(Error::invalid("chain length must be at least 1"));
    }
    let n = params.sites();
    let mut chain = McmcChain {
        sites: n,
        spins: Vec::with_capacity(length * n),
        energies: Vec::with_capacity(length),
        accepted: 0,
        acceptance_rate: 1.0,
    };
    let mut current: Option<f64> = None;
    let mut current_spins = vec![0i8; n];
    let mut produced = 0;
    while produced < length {
        let proposals = ancestral_sample(
            params,
            spec,
            couplings,
            PROPOSAL_BATCH.min(length - produced),
            rng,
        )?;
        let log_w = proposals.log_weights(beta);
        for (b, &lw) in log_w.iter().enumerate() {
            let accept = match current {
                None => true,
                Some(lw_cur) => {
                    let log_ratio = lw - lw_cur;
                    log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
                }
            };
            if accept {
                if current.is_some() {
                    chain.accepted += 1;
                }
                current_spins.copy_from_slice(proposals.config(b));
                current = Some(lw);
                chain.energies.push(proposals.energies[b]);
            } else {
                chain.energies.push(*chain.energies.last().unwrap());
            }
            chain.spins.extend_from_slice(&current_spins);
            produced += 1;
        }
    }
    if length > 1 {
        chain.acceptance_rate = chain.accepted as f64 / (length - 1) as f64;
    }
    Ok(chain)
}
