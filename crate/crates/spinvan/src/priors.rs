//! Analytic approximate conditionals from the tanh-β (weak coupling) expansion.
//!
//! For a site at `(r, c)` the prior logit is a linear form in at most six
//! already-fixed spins. With `t = tanh β` and the ferromagnetic couplings the
//! contributions are
//!
//! | order | context spin        | coefficient |
//! |-------|---------------------|-------------|
//! | 1     | `(r-1, c)`, `(r, c-1)` | `2β`     |
//! | 2     | `(r-1, c+1)`        | `2t²`       |
//! | 3     | `(r-1, c+2)`, `(r, c-1)` | `2t³`  |
//! | 4     | `(r-1, c+3)`, `(r, c-2)`, `(r-1, c+1)` | `2t⁴` |
//!
//! For a general coupling field each power of `t` becomes the product of
//! `tanh(β J)` along the bonds of the path summed over, and the order-1
//! coefficient becomes `2 β J`. The rows above the lattice and the columns
//! left of it are zero padding; context reaching past the right edge wraps
//! around within the same row. Periodicity in the vertical direction is not
//! taken into account.
//!
//! Two evaluation paths exist: [`PriorSpec::logit_site`] applies the taps at a
//! single position (used while sampling) and [`PriorSpec::logits_batched`]
//! correlates the whole padded configuration with the kernel (used for
//! likelihood evaluation). Both accumulate taps in the same order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lattice::{Couplings, Geometry};
use crate::rng::derived_rng;
use crate::scalar::{log_sigmoid, sigmoid, Real};

pub const MAX_ORDER: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Ising,
    Ea,
}

impl fmt::Display for PriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PriorKind::Ising => "ising",
            PriorKind::Ea => "ea",
        })
    }
}

impl FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ising" => Ok(PriorKind::Ising),
            "ea" => Ok(PriorKind::Ea),
            other => Err(Error::format("prior kind", other.to_string())),
        }
    }
}

/// Position of a context spin relative to the site being predicted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offset {
    pub dr: isize,
    pub dc: isize,
}

const fn off(dr: isize, dc: isize) -> Offset {
    Offset { dr, dc }
}

/// Kernel positions in accumulation order, with the lowest order using each.
const TAPS: [(Offset, u8); 6] = [
    (off(-1, 0), 1),
    (off(0, -1), 1),
    (off(-1, 1), 2),
    (off(-1, 2), 3),
    (off(-1, 3), 4),
    (off(0, -2), 4),
];

/// Spin at `offset` from `site`, or 0 when it falls in the padding.
#[inline]
pub fn context_spin(geometry: Geometry, spins: &[i8], site: usize, offset: Offset) -> i8 {
    let l = geometry.side() as isize;
    let r = (site / geometry.side()) as isize + offset.dr;
    let mut c = (site % geometry.side()) as isize + offset.dc;
    if r < 0 || c < 0 {
        return 0;
    }
    if c >= l {
        // Right-edge padding repeats the start of the same row.
        c %= l;
    }
    spins[(r * l + c) as usize]
}

#[derive(Debug, Clone, PartialEq)]
enum TapWeights<T> {
    /// Translation-invariant kernel coefficient.
    Uniform(T),
    /// One precomputed factor per site.
    PerSite(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
struct Tap<T> {
    offset: Offset,
    weights: TapWeights<T>,
}

/// Gathered context of one site: spin indices and their weights, padding
/// entries pointing at site 0 with weight 0.
#[derive(Debug, Clone, Copy, PartialEq)]
struct SiteContext<T> {
    index: [u32; 6],
    weight: [T; 6],
    /// `3^k` for in-lattice taps, 0 for padding.
    radix: [u16; 6],
    /// Base-3 code contribution of the padding taps (digit 1 = spin 0).
    base: u16,
}

/// `(σ(z), log σ(z), log σ(-z))` for every base-3 pattern of the six context
/// spins of a translation-invariant kernel.
#[derive(Debug, Clone, PartialEq)]
struct PatternTable<T> {
    entries: Vec<[T; 3]>,
}

const PATTERNS: usize = 729;

impl<T: Real> Tap<T> {
    #[inline]
    fn weight(&self, site: usize) -> T {
        match &self.weights {
            TapWeights::Uniform(w) => *w,
            TapWeights::PerSite(f) => f[site],
        }
    }
}

/// Which bond a path factor refers to, relative to the predicted site.
#[derive(Clone, Copy)]
enum Link {
    /// `(r+dr, c+dc) — (r+dr, c+dc+1)`
    H(isize, isize),
    /// `(r+dr, c+dc) — (r+dr+1, c+dc)`
    V(isize, isize),
}

/// Coefficients of the six taps at one site, given per-bond `β J` and `tanh(β J)`.
fn tap_coefficients<T: Real>(
    order: u8,
    beta_j: impl Fn(Link) -> T,
    tanh: impl Fn(Link) -> T,
) -> [T; 6] {
    use Link::{H, V};
    let two = T::lit(2.0);
    let chain = |links: &[Link]| -> T {
        let mut p = tanh(links[0]);
        for &l in &links[1..] {
            p *= tanh(l);
        }
        two * p
    };
    let mut w = [T::zero(); 6];
    if order >= 1 {
        w[0] = two * beta_j(V(-1, 0));
        w[1] = two * beta_j(H(0, -1));
    }
    if order >= 2 {
        w[2] = chain(&[V(-1, 1), H(0, 0)]);
    }
    if order >= 3 {
        w[3] = chain(&[V(-1, 2), H(0, 1), H(0, 0)]);
        w[1] += chain(&[V(0, -1), H(1, -1), V(0, 0)]);
    }
    if order >= 4 {
        w[4] = chain(&[V(-1, 3), H(0, 2), H(0, 1), H(0, 0)]);
        w[5] = chain(&[V(0, -2), H(1, -2), H(1, -1), V(0, 0)]);
        w[2] += chain(&[V(-1, 1), V(0, 1), H(1, 0), V(0, 0)]);
    }
    w
}

/// Approximate conditional probabilities of a given expansion order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec<T> {
    kind: PriorKind,
    order: u8,
    beta: T,
    t: T,
    geometry: Geometry,
    taps: Vec<Tap<T>>,
    context: Vec<SiteContext<T>>,
    patterns: Option<PatternTable<T>>,
}

impl<T: Real> PriorSpec<T> {
    fn assemble(
        kind: PriorKind,
        order: u8,
        beta: T,
        geometry: Geometry,
        taps: Vec<Tap<T>>,
    ) -> Self {
        let l = geometry.side() as isize;
        let context = (0..geometry.sites())
            .map(|site| {
                let mut ctx = SiteContext {
                    index: [0; 6],
                    weight: [T::zero(); 6],
                    radix: [0; 6],
                    base: 0,
                };
                let (r, c) = (
                    (site / geometry.side()) as isize,
                    (site % geometry.side()) as isize,
                );
                let mut pow = 1u16;
                for k in 0..6 {
                    let tap = taps.get(k);
                    match tap.map(|t| (r + t.offset.dr, c + t.offset.dc)) {
                        Some((rr, cc)) if rr >= 0 && cc >= 0 => {
                            ctx.index[k] = (rr * l + cc % l) as u32;
                            ctx.weight[k] = taps[k].weight(site);
                            ctx.radix[k] = pow;
                        }
                        _ => ctx.base += pow,
                    }
                    pow *= 3;
                }
                ctx
            })
            .collect();
        let patterns = taps
            .iter()
            .all(|t| matches!(t.weights, TapWeights::Uniform(_)))
            .then(|| {
                let mut w = [T::zero(); 6];
                for (k, tap) in taps.iter().enumerate() {
                    w[k] = tap.weight(0);
                }
                let entries = (0..PATTERNS)
                    .map(|code| {
                        let mut digits = code;
                        let mut z = T::zero();
                        for wk in w {
                            z += wk * spin_value::<T>((digits % 3) as i8 - 1);
                            digits /= 3;
                        }
                        [sigmoid(z), log_sigmoid(z), log_sigmoid(-z)]
                    })
                    .collect();
                PatternTable { entries }
            });
        PriorSpec {
            kind,
            order,
            beta,
            t: beta.tanh(),
            geometry,
            taps,
            context,
            patterns,
        }
    }

    /// Translation-invariant kernel for the ferromagnetic Ising model.
    pub fn ising(geometry: Geometry, beta: T, order: u8) -> Result<Self> {
        validate(beta, order)?;
        let t = beta.tanh();
        let coeffs = tap_coefficients(order, |_| beta, |_| t);
        let taps = TAPS
            .iter()
            .zip(coeffs)
            .filter(|((_, min_order), _)| order >= *min_order)
            .map(|((offset, _), w)| Tap {
                offset: *offset,
                weights: TapWeights::Uniform(w),
            })
            .collect();
        Ok(PriorSpec::assemble(
            PriorKind::Ising,
            order,
            beta,
            geometry,
            taps,
        ))
    }

    /// Per-site factor tables for an arbitrary `±1` coupling field: products of
    /// `tanh(β J)` along every path, with zero where the context spin lies in the
    /// top or left padding.
    pub fn ea(couplings: &Couplings, beta: T, order: u8) -> Result<Self> {
        validate(beta, order)?;
        let geometry = couplings.geometry();
        let l = geometry.side() as isize;
        let n = geometry.sites();
        let mut tables: Vec<Vec<T>> = vec![vec![T::zero(); n]; TAPS.len()];
        for site in 0..n {
            let r = (site / geometry.side()) as isize;
            let c = (site % geometry.side()) as isize;
            let j = |link: Link| -> T {
                let (row, col, v) = match link {
                    Link::H(dr, dc) => (r + dr, c + dc, false),
                    Link::V(dr, dc) => (r + dr, c + dc, true),
                };
                let (row, col) = (row.rem_euclid(l) as usize, col.rem_euclid(l) as usize);
                let bond = if v {
                    couplings.v_at(row, col)
                } else {
                    couplings.h_at(row, col)
                };
                T::from_i8(bond).unwrap()
            };
            let coeffs = tap_coefficients(order, |b| beta * j(b), |b| (beta * j(b)).tanh());
            for (k, ((offset, _), w)) in TAPS.iter().zip(coeffs).enumerate() {
                let in_lattice = r + offset.dr >= 0 && c + offset.dc >= 0;
                tables[k][site] = if in_lattice { w } else { T::zero() };
            }
        }
        let taps = TAPS
            .iter()
            .zip(tables)
            .filter(|((_, min_order), _)| order >= *min_order)
            .map(|((offset, _), f)| Tap {
                offset: *offset,
                weights: TapWeights::PerSite(f),
            })
            .collect();
        Ok(PriorSpec::assemble(
            PriorKind::Ea,
            order,
            beta,
            geometry,
            taps,
        ))
    }

    /// Builds the prior matching `kind` for a coupling field.
    pub fn build(kind: PriorKind, couplings: &Couplings, beta: T, order: u8) -> Result<Self> {
        match kind {
            PriorKind::Ising => {
                if !couplings.is_ferromagnetic() {
                    return Err(Error::UnsupportedModel(
                        "ising prior requires ferromagnetic couplings".into(),
                    ));
                }
                PriorSpec::ising(couplings.geometry(), beta, order)
            }
            PriorKind::Ea => PriorSpec::ea(couplings, beta, order),
        }
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn beta(&self) -> T {
        self.beta
    }

    /// `tanh β`.
    pub fn t(&self) -> T {
        self.t
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    /// Kernel offsets in accumulation order.
    pub fn offsets(&self) -> Vec<Offset> {
        self.taps.iter().map(|t| t.offset).collect()
    }

    /// Factor table of every tap, expanded to one value per site.
    pub fn factor_tables(&self) -> Vec<(Offset, Vec<T>)> {
        let n = self.geometry.sites();
        self.taps
            .iter()
            .map(|tap| (tap.offset, (0..n).map(|i| tap.weight(i)).collect()))
            .collect()
    }

    /// Prior logit at `site`; only spins with index below `site` are read.
    #[inline]
    pub fn logit_site(&self, spins: &[i8], site: usize) -> T {
        let ctx = &self.context[site];
        let mut acc = T::zero();
        for k in 0..6 {
            acc += ctx.weight[k] * spin_value::<T>(spins[ctx.index[k] as usize]);
        }
        acc
    }

    /// Checked variant of [`PriorSpec::logit_site`].
    pub fn prior_logit_site(&self, prefix: &[i8], site: usize) -> Result<T> {
        if site >= self.geometry.sites() {
            return Err(Error::invalid(format!(
                "site {site} out of range for {} sites",
                self.geometry.sites()
            )));
        }
        if prefix.len() < site {
            return Err(Error::invalid(format!(
                "prefix of length {} does not fix the spins before site {site}",
                prefix.len()
            )));
        }
        Ok(self.logit_site(prefix, site))
    }

    /// Prior logits of every site of one complete configuration, written to `out`.
    pub fn logits_into(&self, spins: &[i8], out: &mut [T]) {
        let l = self.geometry.side();
        let width = l + 5;
        // One zero row on top, two zero columns on the left, three wrapped columns on the right.
        let mut padded = vec![0i8; (l + 1) * width];
        for r in 0..l {
            let row = &spins[r * l..(r + 1) * l];
            let dst = &mut padded[(r + 1) * width..(r + 2) * width];
            dst[2..2 + l].copy_from_slice(row);
            for k in 0..3 {
                dst[2 + l + k] = row[k % l];
            }
        }
        out.iter_mut().for_each(|x| *x = T::zero());
        for tap in &self.taps {
            let dr = (1 + tap.offset.dr) as usize;
            let dc = (2 + tap.offset.dc) as usize;
            for r in 0..l {
                let src = &padded[(r + dr) * width + dc..(r + dr) * width + dc + l];
                let dst = &mut out[r * l..(r + 1) * l];
                match &tap.weights {
                    TapWeights::Uniform(w) => {
                        for (o, &s) in dst.iter_mut().zip(src) {
                            *o += *w * spin_value::<T>(s);
                        }
                    }
                    TapWeights::PerSite(f) => {
                        let f = &f[r * l..(r + 1) * l];
                        for ((o, &s), &w) in dst.iter_mut().zip(src).zip(f) {
                            *o += w * spin_value::<T>(s);
                        }
                    }
                }
            }
        }
    }

    /// Prior logits for a batch of complete configurations laid out back to back.
    pub fn logits_batched(&self, batch: &[i8]) -> Result<Vec<T>> {
        let n = self.geometry.sites();
        if batch.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                expected: n * (batch.len() / n + 1),
                got: batch.len(),
            });
        }
        let mut out = vec![T::zero(); batch.len()];
        out.par_chunks_mut(n)
            .zip(batch.par_chunks(n))
            .for_each(|(o, s)| self.logits_into(s, o));
        Ok(out)
    }

    /// Draws `log_q.len()` configurations at once, site-major, into `block`
    /// (configurations back to back). Interleaving independent samples keeps the
    /// per-site dependency chain off the critical path.
    ///
    /// Translation-invariant kernels look the conditional up by the base-3 code
    /// of the context spins. Per-site factor tables take one exponential per
    /// site and accumulate `log q` as logarithms of partial products.
    pub fn sample_block<R: Rng + ?Sized>(&self, block: &mut [i8], log_q: &mut [T], rng: &mut R) {
        let n = self.geometry.sites();
        let count = log_q.len();
        assert_eq!(block.len(), n * count);
        log_q.iter_mut().for_each(|x| *x = T::zero());
        if let Some(table) = &self.patterns {
            for i in 0..n {
                let ctx = &self.context[i];
                for (spins, lq) in block.chunks_exact_mut(n).zip(log_q.iter_mut()) {
                    let mut code = ctx.base as usize;
                    for k in 0..6 {
                        code += ctx.radix[k] as usize * (spins[ctx.index[k] as usize] + 1) as usize;
                    }
                    let [p_up, log_up, log_down] = table.entries[code];
                    let up = T::lit(rng.random::<f64>()) < p_up;
                    spins[i] = if up { 1 } else { -1 };
                    *lq += if up { log_up } else { log_down };
                }
            }
            return;
        }
        let tiny = T::lit(1e-20);
        let mut prod = vec![T::one(); count];
        for i in 0..n {
            for (b, spins) in block.chunks_exact_mut(n).enumerate() {
                let z = self.logit_site(spins, i);
                let e = (-z.abs()).exp();
                let inv = T::one() / (T::one() + e);
                let (p_up, p_down) = if z >= T::zero() {
                    (inv, e * inv)
                } else {
                    (e * inv, inv)
                };
                let up = T::lit(rng.random::<f64>()) < p_up;
                spins[i] = if up { 1 } else { -1 };
                let p = if up { p_up } else { p_down };
                if p < tiny {
                    log_q[b] += p.ln();
                } else {
                    prod[b] *= p;
                    if prod[b] < tiny {
                        log_q[b] += prod[b].ln();
                        prod[b] = T::one();
                    }
                }
            }
        }
        for (l, p) in log_q.iter_mut().zip(prod) {
            *l += p.ln();
        }
    }

    /// Draws one configuration from the prior alone with a log-sigmoid per site,
    /// returning `log q`.
    pub fn sample_into<R: Rng + ?Sized>(&self, spins: &mut [i8], rng: &mut R) -> T {
        let mut log_q = T::zero();
        for i in 0..spins.len() {
            let z = self.logit_site(spins, i);
            let u = T::lit(rng.random::<f64>());
            let s = if u < sigmoid(z) { 1 } else { -1 };
            spins[i] = s;
            log_q += log_sigmoid(if s == 1 { z } else { -z });
        }
        log_q
    }
}

#[inline(always)]
fn spin_value<T: Real>(s: i8) -> T {
    match s {
        1 => T::one(),
        -1 => -T::one(),
        _ => T::zero(),
    }
}

fn validate<T: Real>(beta: T, order: u8) -> Result<()> {
    if order > MAX_ORDER {
        return Err(Error::invalid(format!(
            "prior order {order} exceeds {MAX_ORDER}"
        )));
    }
    if !(beta >= T::zero()) || !beta.is_finite() {
        return Err(Error::invalid(format!(
            "beta {beta} must be finite and non-negative"
        )));
    }
    Ok(())
}

/// Mean and standard error of a prior-only `F_q` estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FqEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub samples: usize,
}

const CHUNK: usize = 1 << 12;
const BLOCK: usize = 16;

/// `F_q ≈ (1/M) Σ (log q + βE)` with `q` the prior alone (zero network output).
///
/// Samples are drawn in chunks of 4096 (blocks of 16 sampled site-major), chunk `k` seeded from
/// `derive_seed(seed, "prior", k)`, so the result does not depend on the thread count.
pub fn prior_only_f_q<T: Real>(
    spec: &PriorSpec<T>,
    couplings: &Couplings,
    samples: usize,
    seed: u64,
) -> Result<FqEstimate> {
    if samples < 2 {
        return Err(Error::invalid("prior-only F_q needs at least 2 samples"));
    }
    check_len(spec.geometry().sites(), couplings.geometry().sites())?;
    let n = spec.geometry().sites();
    let beta = spec.beta().as_f64();
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = derived_rng(seed, "prior", k as u64);
            let mut remaining = CHUNK.min(samples - k * CHUNK);
            let mut block = vec![0i8; n * BLOCK];
            let mut log_q = vec![T::zero(); BLOCK];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            while remaining > 0 {
                let count = BLOCK.min(remaining);
                spec.sample_block(&mut block[..n * count], &mut log_q[..count], &mut rng);
                for (spins, lq) in block.chunks(n).zip(&log_q[..count]) {
                    let x = lq.as_f64() + beta * couplings.energy_unchecked(spins) as f64;
                    sum += x;
                    sum_sq += x * x;
                }
                remaining -= count;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = partial
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let m = samples as f64;
    let mean = sum / m;
    let var = ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0);
    Ok(FqEstimate {
        estimate: mean,
        std_error: (var / m).sqrt(),
        samples,
    })
}
