//! Markov chain Monte Carlo baselines: Wolff clusters, Metropolis sweeps and parallel tempering.
//!
//! Energies are exact integers; floating point appears only in acceptance tests.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lattice::{magnetization, Couplings, SpinConfig};
use crate::rng::{derived_rng, SimRng};

pub const DEFAULT_BURN_IN: usize = 10_000;
pub const DEFAULT_THIN: usize = 10;
pub const DEFAULT_LADDER_SIZE: usize = 16;
pub const DEFAULT_LADDER_MIN: f64 = 0.1;

/// One Markov chain at fixed `β`.
#[derive(Debug, Clone)]
pub struct ChainState {
    spins: Vec<i8>,
    beta: f64,
    energy: i64,
    sweeps: u64,
    rng: SimRng,
    proposed: u64,
    accepted: u64,
    /// `e^{-βΔE}` for `ΔE = 2k`, `k = 0..=4`.
    boltzmann: [f64; 5],
}

impl ChainState {
    pub fn new(couplings: &Couplings, beta: f64, spins: SpinConfig, rng: SimRng) -> Result<Self> {
        let g = couplings.geometry();
        if g.side() < 2 {
            return Err(Error::invalid(
                "Monte Carlo needs a lattice side of at least 2",
            ));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(Error::invalid(format!(
                "beta must be finite and non-negative, got {beta}"
            )));
        }
        check_len(g.sites(), spins.len())?;
        let spins = spins.into_inner();
        let energy = couplings.energy_unchecked(&spins);
        let mut state = ChainState {
            spins,
            beta,
            energy,
            sweeps: 0,
            rng,
            proposed: 0,
            accepted: 0,
            boltzmann: [1.0; 5],
        };
        state.set_beta(beta);
        Ok(state)
    }

    /// Chain started from a uniformly random configuration drawn from `rng`.
    pub fn random(couplings: &Couplings, beta: f64, mut rng: SimRng) -> Result<Self> {
        let spins = SpinConfig::random(couplings.geometry(), &mut rng);
        Self::new(couplings, beta, spins, rng)
    }

    fn set_beta(&mut self, beta: f64) {
        self.beta = beta;
        for (k, b) in self.boltzmann.iter_mut().enumerate() {
            *b = (-beta * (2 * k) as f64).exp();
        }
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn energy(&self) -> i64 {
        self.energy
    }

    pub fn magnetization(&self) -> i64 {
        magnetization(&self.spins)
    }

    pub fn sweeps(&self) -> u64 {
        self.sweeps
    }

    /// Fraction of accepted Metropolis proposals so far.
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    #[inline]
    fn flip(&mut self, couplings: &Couplings, site: usize) {
        let s = self.spins[site] as i64;
        self.energy += 2 * s * couplings.local_field(&self.spins, site);
        self.spins[site] = -self.spins[site];
    }
}

/// Grows one Wolff cluster from a random seed site with bond probability `1 - e^{-2β}` and
/// flips it. Returns the cluster size.
pub fn wolff_update(state: &mut ChainState, couplings: &Couplings) -> Result<usize> {
    if !couplings.is_ferromagnetic() {
        return Err(Error::UnsupportedModel(
            "Wolff updates need ferromagnetic couplings".into(),
        ));
    }
    check_len(couplings.geometry().sites(), state.spins.len())?;
    let g = couplings.geometry();
    let p_add = 1.0 - (-2.0 * state.beta).exp();
    let seed = state.rng.random_range(0..g.sites());
    let cluster_spin = state.spins[seed];
    let mut stack = vec![seed];
    state.flip(couplings, seed);
    let mut size = 1;
    while let Some(site) = stack.pop() {
        for nb in g.neighbors(site) {
            if state.spins[nb] == cluster_spin && state.rng.random::<f64>() < p_add {
                state.flip(couplings, nb);
                stack.push(nb);
                size += 1;
            }
        }
    }
    state.sweeps += 1;
    Ok(size)
}

/// `N` single-spin Metropolis proposals in site order. Returns this sweep's acceptance rate.
pub fn metropolis_sweep(state: &mut ChainState, couplings: &Couplings) -> Result<f64> {
    let n = couplings.geometry().sites();
    check_len(n, state.spins.len())?;
    let mut accepted = 0u64;
    for i in 0..n {
        let de = 2 * state.spins[i] as i64 * couplings.local_field(&state.spins, i);
        let accept = de <= 0 || state.rng.random::<f64>() < state.boltzmann[(de / 2) as usize];
        if accept {
            state.energy += de;
            state.spins[i] = -state.spins[i];
            accepted += 1;
        }
    }
    state.sweeps += 1;
    state.proposed += n as u64;
    state.accepted += accepted;
    Ok(accepted as f64 / n as f64)
}

/// Retained Monte Carlo samples at one `β`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct McSamples {
    pub beta: f64,
    pub energies: Vec<i64>,
    pub magnetizations: Vec<i64>,
    /// Configurations back to back, when requested.
    #[serde(skip)]
    pub spins: Vec<i8>,
}

impl McSamples {
    fn new(beta: f64) -> Self {
        McSamples {
            beta,
            ..Default::default()
        }
    }

    fn record(&mut self, state: &ChainState, keep_spins: bool) {
        self.energies.push(state.energy);
        self.magnetizations.push(state.magnetization());
        if keep_spins {
            self.spins.extend_from_slice(&state.spins);
        }
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    pub fn mean_energy(&self) -> f64 {
        mean(self.energies.iter().map(|&e| e as f64))
    }

    pub fn mean_abs_magnetization(&self) -> f64 {
        mean(self.magnetizations.iter().map(|&m| m.abs() as f64))
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Mean and batch-means standard error over `bins` contiguous bins.
pub fn binned_mean(values: &[f64], bins: usize) -> (f64, f64) {
    let n = values.len();
    let m = values.iter().sum::<f64>() / n as f64;
    let bins = bins.min(n);
    if bins < 2 {
        return (m, 0.0);
    }
    let width = n / bins;
    let means: Vec<f64> = (0..bins)
        .map(|b| values[b * width..(b + 1) * width].iter().sum::<f64>() / width as f64)
        .collect();
    let mb = means.iter().sum::<f64>() / bins as f64;
    let var = means.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (bins - 1) as f64;
    (m, (var / bins as f64).sqrt())
}

/// Burn-in, thinning and sample count of a run. For Wolff runs the unit is one cluster
/// update; otherwise one sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSchedule {
    pub burn_in: usize,
    pub thin: usize,
    pub samples: usize,
    pub keep_spins: bool,
}

impl Default for RunSchedule {
    fn default() -> Self {
        RunSchedule {
            burn_in: DEFAULT_BURN_IN,
            thin: DEFAULT_THIN,
            samples: 1000,
            keep_spins: false,
        }
    }
}

impl RunSchedule {
    fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::invalid("thinning interval must be at least 1"));
        }
        Ok(())
    }
}

fn run_with(
    state: &mut ChainState,
    schedule: &RunSchedule,
    mut update: impl FnMut(&mut ChainState) -> Result<()>,
) -> Result<McSamples> {
    schedule.validate()?;
    for _ in 0..schedule.burn_in {
        update(state)?;
    }
    let mut out = McSamples::new(state.beta);
    for _ in 0..schedule.samples {
        for _ in 0..schedule.thin {
            update(state)?;
        }
        out.record(state, schedule.keep_spins);
    }
    Ok(out)
}

pub fn wolff_run(
    state: &mut ChainState,
    couplings: &Couplings,
    schedule: &RunSchedule,
) -> Result<McSamples> {
    run_with(state, schedule, |s| wolff_update(s, couplings).map(|_| ()))
}

pub fn metropolis_run(
    state: &mut ChainState,
    couplings: &Couplings,
    schedule: &RunSchedule,
) -> Result<McSamples> {
    run_with(state, schedule, |s| {
        metropolis_sweep(s, couplings).map(|_| ())
    })
}

/// Replicas at a non-decreasing list of `β`. Slot `k` always runs at `betas[k]`; accepted swaps
/// exchange configurations between slots.
#[derive(Debug, Clone)]
pub struct TemperingLadder {
    betas: Vec<f64>,
    replicas: Vec<ChainState>,
    /// `replica_ids[k]`: which initial replica currently sits in slot `k`.
    replica_ids: Vec<usize>,
    swap_attempts: Vec<u64>,
    swap_accepts: Vec<u64>,
    rng: SimRng,
}

/// `count` geometrically spaced values from `from` to `to`.
pub fn geometric_betas(from: f64, to: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !(from > 0.0) || !(to >= from) {
        return Err(Error::invalid(format!(
            "geometric ladder needs 0 < from <= to and count >= 1, got {from}, {to}, {count}"
        )));
    }
    if count == 1 {
        return Ok(vec![to]);
    }
    let ratio = (to / from).powf(1.0 / (count - 1) as f64);
    let mut b: Vec<f64> = (0..count).map(|k| from * ratio.powi(k as i32)).collect();
    b[count - 1] = to;
    Ok(b)
}

impl TemperingLadder {
    /// Replica `k` starts from a random configuration drawn from `derive_seed(seed, "replica", k)`.
    pub fn new(couplings: &Couplings, betas: Vec<f64>, seed: u64) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("tempering ladder needs at least one beta"));
        }
        if betas.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(Error::invalid("tempering betas must be non-decreasing"));
        }
        let replicas = betas
            .iter()
            .enumerate()
            .map(|(k, &b)| ChainState::random(couplings, b, derived_rng(seed, "replica", k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let pairs = betas.len() - 1;
        Ok(TemperingLadder {
            replica_ids: (0..betas.len()).collect(),
            betas,
            replicas,
            swap_attempts: vec![0; pairs],
            swap_accepts: vec![0; pairs],
            rng: derived_rng(seed, "swap", 0),
        })
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn replicas(&self) -> &[ChainState] {
        &self.replicas
    }

    pub fn replica_ids(&self) -> &[usize] {
        &self.replica_ids
    }

    /// Acceptance rate of swaps between slots `k` and `k + 1`.
    pub fn swap_rates(&self) -> Vec<f64> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&a, &s)| if a == 0 { 0.0 } else { s as f64 / a as f64 })
            .collect()
    }

    fn sweep_all(&mut self, couplings: &Couplings) -> Result<()> {
        self.replicas
            .par_iter_mut()
            .try_for_each(|r| metropolis_sweep(r, couplings).map(|_| ()))
    }

    /// Attempts every adjacent swap in slot order, each accepted with
    /// `min(1, e^{(β_a - β_b)(E_a - E_b)})`.
    fn attempt_swaps(&mut self) {
        for k in 0..self.betas.len().saturating_sub(1) {
            let (ba, bb) = (self.betas[k], self.betas[k + 1]);
            let (ea, eb) = (self.replicas[k].energy, self.replicas[k + 1].energy);
            let log_ratio = (ba - bb) * (ea - eb) as f64;
            self.swap_attempts[k] += 1;
            if log_ratio >= 0.0 || self.rng.random::<f64>() < log_ratio.exp() {
                self.swap_accepts[k] += 1;
                let (lo, hi) = self.replicas.split_at_mut(k + 1);
                std::mem::swap(&mut lo[k].spins, &mut hi[0].spins);
                std::mem::swap(&mut lo[k].energy, &mut hi[0].energy);
                self.replica_ids.swap(k, k + 1);
            }
        }
    }
}

/// Samples per `β` and the adjacent-pair swap rates of a tempering run.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperingResult {
    pub samples: Vec<McSamples>,
    pub swap_rates: Vec<f64>,
}

/// Metropolis sweeps on every replica with swap attempts every `swap_interval` sweeps.
/// After `burn_in` sweeps, every replica is recorded each `thin` sweeps.
pub fn parallel_tempering_run(
    ladder: &mut TemperingLadder,
    couplings: &Couplings,
    schedule: &RunSchedule,
    swap_interval: usize,
) -> Result<TemperingResult> {
    schedule.validate()?;
    if swap_interval == 0 {
        return Err(Error::invalid("swap interval must be at least 1"));
    }
    if ladder.betas.len() == 1 {
        log::warn!("tempering ladder has one beta; running plain Metropolis");
    }
    let mut samples: Vec<McSamples> = ladder.betas.iter().map(|&b| McSamples::new(b)).collect();
    let total = schedule.burn_in + schedule.thin * schedule.samples;
    for sweep in 1..=total {
        ladder.sweep_all(couplings)?;
        if sweep % swap_interval == 0 {
            ladder.attempt_swaps();
        }
        if sweep > schedule.burn_in && (sweep - schedule.burn_in) % schedule.thin == 0 {
            for (s, r) in samples.iter_mut().zip(&ladder.replicas) {
                s.record(r, schedule.keep_spins);
            }
        }
    }
    Ok(TemperingResult {
        samples,
        swap_rates: ladder.swap_rates(),
    })
}
