//! Two-layer masked fully connected autoregressive network.
//!
//! Hidden unit `k` carries a degree `d(k)` in `1..N-1`; degrees are assigned
//! cyclically and then sorted so that the units seen by each output, and the
//! units fed by each input, form contiguous ranges. Hidden unit `k` reads
//! inputs `j < d(k)` and output `i` reads hidden units with `d(k) <= i`, so
//! output `i` depends on inputs `j < i` only.
//!
//! The network output `h_i` is added to the prior logit before the logistic:
//! `q(s_i = +1 | s_<i) = σ(h_i + l_i)`.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;

use crate::error::{check_len, Error, Result};
use crate::lattice::Geometry;
use crate::priors::PriorSpec;
use crate::rng::rng_from_seed;
use crate::scalar::{log_sigmoid, sigmoid, Real};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// The four trainable tensors. Used for parameters, gradients and optimizer moments.
///
/// `w_in` is stored input-major (`N × H`, row `j` holds the weights leaving input
/// `j`); `w_out` is output-major (`N × H`, row `i` holds the weights entering
/// output `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensors<T> {
    pub w_in: Vec<T>,
    pub b_hidden: Vec<T>,
    pub w_out: Vec<T>,
    pub b_out: Vec<T>,
}

impl<T: Real> Tensors<T> {
    pub fn zeros(sites: usize, hidden: usize) -> Self {
        Tensors {
            w_in: vec![T::zero(); sites * hidden],
            b_hidden: vec![T::zero(); hidden],
            w_out: vec![T::zero(); sites * hidden],
            b_out: vec![T::zero(); sites],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.w_in
            .iter()
            .chain(&self.b_hidden)
            .chain(&self.w_out)
            .chain(&self.b_out)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.w_in
            .iter_mut()
            .chain(self.b_hidden.iter_mut())
            .chain(self.w_out.iter_mut())
            .chain(self.b_out.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.w_in.len() + self.b_hidden.len() + self.w_out.len() + self.b_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn norm(&self) -> T {
        self.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, &b) in self.iter_mut().zip(other.iter()) {
            *a += scale * b;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    sites: usize,
    hidden: usize,
    leaky_slope: T,
    degrees: Vec<usize>,
    /// `first_above[j]`: index of the first hidden unit with degree `> j`, for `j` in `0..=N`.
    first_above: Vec<usize>,
    pub tensors: Tensors<T>,
}

impl<T: Real> ModelParameters<T> {
    /// All-zero network with the masking structure for `sites` inputs.
    pub fn zeros(sites: usize, hidden: usize, leaky_slope: T) -> Result<Self> {
        if sites == 0 || hidden == 0 {
            return Err(Error::invalid(
                "network needs at least one site and one hidden unit",
            ));
        }
        if !(leaky_slope >= T::zero() && leaky_slope < T::one()) {
            return Err(Error::invalid(format!(
                "leaky slope must lie in [0, 1), got {leaky_slope}"
            )));
        }
        let cycle = (sites - 1).max(1);
        let mut degrees: Vec<usize> = (0..hidden).map(|k| 1 + k % cycle).collect();
        degrees.sort_unstable();
        let first_above = (0..=sites)
            .map(|j| degrees.partition_point(|&d| d <= j))
            .collect();
        Ok(ModelParameters {
            sites,
            hidden,
            leaky_slope,
            degrees,
            first_above,
            tensors: Tensors::zeros(sites, hidden),
        })
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn leaky_slope(&self) -> T {
        self.leaky_slope
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    /// Hidden units `0..hidden_seen_by(i)` feed output `i`.
    #[inline]
    pub fn hidden_seen_by(&self, output: usize) -> usize {
        self.first_above[output]
    }

    /// Input `j` feeds hidden units `hidden_fed_from(j)..H`.
    #[inline]
    pub fn hidden_fed_from(&self, input: usize) -> usize {
        self.first_above[input]
    }

    /// Whether `w_in[j][k]` is trainable.
    pub fn input_mask(&self, input: usize, unit: usize) -> bool {
        input < self.degrees[unit]
    }

    /// Whether `w_out[i][k]` is trainable.
    pub fn output_mask(&self, output: usize, unit: usize) -> bool {
        self.degrees[unit] <= output
    }

    /// Zeroes every masked entry of `t`.
    pub fn apply_mask(&self, t: &mut Tensors<T>) {
        let h = self.hidden;
        for j in 0..self.sites {
            let lo = self.hidden_fed_from(j);
            t.w_in[j * h..j * h + lo]
                .iter_mut()
                .for_each(|x| *x = T::zero());
            let hi = self.hidden_seen_by(j);
            t.w_out[j * h + hi..(j + 1) * h]
                .iter_mut()
                .for_each(|x| *x = T::zero());
        }
    }

    #[inline]
    pub fn activation(&self, x: T) -> T {
        // max(x, αx) is the leaky rectifier for 0 <= α < 1
        x.max(self.leaky_slope * x)
    }

    #[inline]
    fn activation_slope(&self, x: T) -> T {
        if x > T::zero() {
            T::one()
        } else {
            self.leaky_slope
        }
    }

    /// Adds input `j`'s contribution `w_in[j]·s_j` to the hidden pre-activations.
    #[inline]
    pub(crate) fn accumulate_input(&self, pre: &mut [T], input: usize, spin: i8) {
        let h = self.hidden;
        let lo = self.hidden_fed_from(input);
        let row = &self.tensors.w_in[input * h + lo..(input + 1) * h];
        if spin > 0 {
            for (p, &w) in pre[lo..].iter_mut().zip(row) {
                *p += w;
            }
        } else {
            for (p, &w) in pre[lo..].iter_mut().zip(row) {
                *p -= w;
            }
        }
    }

    /// `h_i = b_out[i] + Σ_k w_out[i][k] act(pre_k)` over the hidden units output `i` sees.
    #[inline]
    pub(crate) fn output_at(&self, pre: &[T], output: usize) -> T {
        let h = self.hidden;
        let hi = self.hidden_seen_by(output);
        let row = &self.tensors.w_out[output * h..output * h + hi];
        let mut acc = self.tensors.b_out[output];
        for (&w, &p) in row.iter().zip(&pre[..hi]) {
            acc += w * self.activation(p);
        }
        acc
    }

    /// Hidden pre-activations of one complete configuration.
    pub(crate) fn pre_activations(&self, spins: &[i8], pre: &mut [T]) {
        pre.copy_from_slice(&self.tensors.b_hidden);
        for (j, &s) in spins.iter().enumerate() {
            self.accumulate_input(pre, j, s);
        }
    }

    fn forward_one(&self, spins: &[i8], pre: &mut [T], out: &mut [T]) {
        self.pre_activations(spins, pre);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.output_at(pre, i);
        }
    }

    /// `h = W_out · act(W_in · s + b_hidden) + b_out` for every configuration of
    /// a batch laid out back to back.
    pub fn forward(&self, batch: &[i8]) -> Result<Vec<T>> {
        let n = self.sites;
        if batch.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                expected: n * (batch.len() / n + 1),
                got: batch.len(),
            });
        }
        let mut out = vec![T::zero(); batch.len()];
        out.par_chunks_mut(n)
            .zip(batch.par_chunks(n))
            .for_each_init(
                || vec![T::zero(); self.hidden],
                |pre, (o, s)| self.forward_one(s, pre, o),
            );
        Ok(out)
    }

    /// `log q(s)` of every configuration in the batch.
    pub fn log_prob(&self, spec: &PriorSpec<T>, batch: &[i8]) -> Result<Vec<T>> {
        check_len(self.sites, spec.geometry().sites())?;
        let h = self.forward(batch)?;
        let l = spec.logits_batched(batch)?;
        Ok(batch
            .chunks(self.sites)
            .zip(h.chunks(self.sites).zip(l.chunks(self.sites)))
            .map(|(s, (h, l))| {
                s.iter()
                    .zip(h.iter().zip(l))
                    .map(|(&si, (&hi, &li))| log_sigmoid(signed(si, hi + li)))
                    .sum()
            })
            .collect())
    }

    /// Adds `Σ_b coeff[b] ∇ log q(s_b)` to `grad`. Prior logits are constants.
    pub fn accumulate_score_gradient(
        &self,
        spec: &PriorSpec<T>,
        batch: &[i8],
        coeffs: &[T],
        grad: &mut Tensors<T>,
    ) -> Result<()> {
        let n = self.sites;
        let hdim = self.hidden;
        check_len(batch.len(), coeffs.len() * n)?;
        let logits = spec.logits_batched(batch)?;
        let mut pre = vec![T::zero(); hdim];
        let mut d_act = vec![T::zero(); hdim];
        let mut act = vec![T::zero(); hdim];
        for ((spins, l), &c) in batch.chunks(n).zip(logits.chunks(n)).zip(coeffs) {
            if c == T::zero() {
                continue;
            }
            self.pre_activations(spins, &mut pre);
            d_act.iter_mut().for_each(|x| *x = T::zero());
            for (a, &p) in act.iter_mut().zip(&pre) {
                *a = self.activation(p);
            }
            for i in 0..n {
                let z = self.output_at(&pre, i) + l[i];
                let s = spins[i];
                // d/dz log σ(s z) = s σ(-s z)
                let g = c * signed(s, sigmoid(signed(-s, z)));
                grad.b_out[i] += g;
                let hi = self.hidden_seen_by(i);
                let w_row = &self.tensors.w_out[i * hdim..i * hdim + hi];
                let g_row = &mut grad.w_out[i * hdim..i * hdim + hi];
                for k in 0..hi {
                    g_row[k] += g * act[k];
                    d_act[k] += g * w_row[k];
                }
            }
            for k in 0..hdim {
                d_act[k] *= self.activation_slope(pre[k]);
                grad.b_hidden[k] += d_act[k];
            }
            for (j, &s) in spins.iter().enumerate() {
                let lo = self.hidden_fed_from(j);
                let g_row = &mut grad.w_in[j * hdim + lo..(j + 1) * hdim];
                for (g, &d) in g_row.iter_mut().zip(&d_act[lo..]) {
                    *g += signed(s, d);
                }
            }
        }
        Ok(())
    }
}

#[inline(always)]
pub(crate) fn signed<T: Real>(s: i8, x: T) -> T {
    if s > 0 {
        x
    } else {
        -x
    }
}

/// Network for `geometry` with `hidden` units: input weights uniform in
/// `±1/√N`, output weights scaled by `output_scale/√H`, biases zero.
/// [`init_model`] uses `output_scale = 0`, so an untrained model reproduces the prior exactly.
pub fn init_model_scaled<T: Real>(
    geometry: Geometry,
    hidden: usize,
    seed: u64,
    output_scale: T,
) -> Result<ModelParameters<T>> {
    let n = geometry.sites();
    let mut params = ModelParameters::zeros(n, hidden, T::lit(DEFAULT_LEAKY_SLOPE))?;
    let mut rng = rng_from_seed(seed);
    let a_in = 1.0 / (n as f64).sqrt();
    let a_out = output_scale.as_f64() / (hidden as f64).sqrt();
    let u_in = Uniform::new_inclusive(-a_in, a_in).unwrap();
    for w in params.tensors.w_in.iter_mut() {
        *w = T::lit(u_in.sample(&mut rng));
    }
    if a_out > 0.0 {
        let u_out = Uniform::new_inclusive(-a_out, a_out).unwrap();
        for w in params.tensors.w_out.iter_mut() {
            *w = T::lit(u_out.sample(&mut rng));
        }
    }
    let mut t = std::mem::replace(&mut params.tensors, Tensors::zeros(0, 0));
    params.apply_mask(&mut t);
    params.tensors = t;
    Ok(params)
}

pub fn init_model<T: Real>(
    geometry: Geometry,
    hidden: usize,
    seed: u64,
) -> Result<ModelParameters<T>> {
    init_model_scaled(geometry, hidden, seed, T::zero())
}

/// Conditional probabilities `σ(h + l)` and their complements `σ(-(h + l))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalProbs<T> {
    pub up: Vec<T>,
    pub down: Vec<T>,
}

pub fn conditional_probs<T: Real>(h: &[T], prior_logits: &[T]) -> Result<ConditionalProbs<T>> {
    check_len(h.len(), prior_logits.len())?;
    let z = h.iter().zip(prior_logits).map(|(&a, &b)| a + b);
    Ok(ConditionalProbs {
        up: z.clone().map(sigmoid).collect(),
        down: z.map(|x| sigmoid(-x)).collect(),
    })
}

/// Fills `params` with random weights on every trainable entry; test helper for
/// exercising the masks.
pub fn randomize<T: Real, R: Rng + ?Sized>(
    params: &mut ModelParameters<T>,
    scale: f64,
    rng: &mut R,
) {
    let u = Uniform::new_inclusive(-scale, scale).unwrap();
    let mut t = params.tensors.clone();
    for x in t.iter_mut() {
        *x = T::lit(u.sample(rng));
    }
    params.apply_mask(&mut t);
    params.tensors = t;
}
