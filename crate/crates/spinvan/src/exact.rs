//! Ground-truth oracles: exhaustive enumeration for small lattices and the
//! closed-form finite-torus partition function of the ferromagnetic Ising model.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Couplings, SpinConfig};
use crate::scalar::Real;

/// Inverse critical temperature of the infinite square-lattice Ising model, `½ ln(1+√2)`.
pub const BETA_C: f64 = 0.440_686_793_509_771_51;

/// Largest lattice [`enumerate`] accepts.
pub const MAX_ENUMERATION_SITES: usize = 24;
/// Largest lattice for which the per-state table (and conditionals) is kept.
pub const MAX_TABLE_SITES: usize = 16;

#[derive(Debug, Clone, Serialize)]
pub struct EnumerationResult {
    pub sites: usize,
    pub beta: f64,
    pub log_z: f64,
    /// `F = -log Z`.
    pub free_energy: f64,
    pub mean_energy: f64,
    pub mean_magnetization: f64,
    pub mean_abs_magnetization: f64,
    #[serde(skip)]
    table: Option<StateTable>,
}

/// Energies of every state plus the marginal pyramid used for conditionals.
#[derive(Debug, Clone)]
struct StateTable {
    energies: Vec<i64>,
    min_energy: i64,
    /// `marginals[k][x]`: summed weight of all states whose first `k` spins encode `x`.
    marginals: Vec<Vec<f64>>,
}

/// Visits every state in Gray-code order, calling `visit(state_bits, E, M)`.
fn gray_walk(couplings: &Couplings, mut visit: impl FnMut(u64, i64, i64)) {
    let n = couplings.geometry().sites();
    // On a single site every bond is a self-loop and the local update does not apply.
    let self_loops = couplings.geometry().side() == 1;
    let mut spins = vec![-1i8; n];
    let mut energy = couplings.energy_unchecked(&spins);
    let mut mag = -(n as i64);
    let mut state = 0u64;
    visit(state, energy, mag);
    for k in 1u64..(1u64 << n) {
        let site = k.trailing_zeros() as usize;
        let before = spins[site] as i64;
        if self_loops {
            spins[site] = -spins[site];
        } else {
            energy += 2 * before * couplings.local_field(&spins, site);
            spins[site] = -spins[site];
        }
        mag -= 2 * before;
        state ^= 1 << site;
        visit(state, energy, mag);
    }
}

/// Exact `Z`, `F` and moments by summing over all `2^N` states.
pub fn enumerate(couplings: &Couplings, beta: f64) -> Result<EnumerationResult> {
    let n = couplings.geometry().sites();
    if n > MAX_ENUMERATION_SITES {
        return Err(Error::TooLarge {
            sites: n,
            limit: MAX_ENUMERATION_SITES,
        });
    }
    if !beta.is_finite() {
        return Err(Error::invalid("beta must be finite"));
    }
    let width = 2 * n + 1;
    let e_off = 2 * n as i64;
    let m_off = n as i64;
    // Density of states over (E, M); integer energies lie in [-2N, 2N].
    let mut hist = vec![0u64; (4 * n + 1) * width];
    let keep = n <= MAX_TABLE_SITES;
    let mut energies = if keep { vec![0i64; 1 << n] } else { Vec::new() };
    gray_walk(couplings, |state, e, m| {
        hist[(e + e_off) as usize * width + (m + m_off) as usize] += 1;
        if keep {
            energies[state as usize] = e;
        }
    });

    let mut terms = Vec::new();
    for (ei, row) in hist.chunks(width).enumerate() {
        for (mi, &count) in row.iter().enumerate() {
            if count > 0 {
                let e = ei as i64 - e_off;
                let m = mi as i64 - m_off;
                terms.push(((count as f64).ln() - beta * e as f64, e, m));
            }
        }
    }
    let max = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut ze, mut zm, mut zam) = (0.0, 0.0, 0.0, 0.0);
    for &(lw, e, m) in &terms {
        let w = (lw - max).exp();
        z += w;
        ze += w * e as f64;
        zm += w * m as f64;
        zam += w * m.abs() as f64;
    }
    let log_z = max + z.ln();

    let table = keep.then(|| {
        let min_energy = *energies.iter().min().unwrap();
        let mut top: Vec<f64> = energies
            .iter()
            .map(|&e| (-beta * (e - min_energy) as f64).exp())
            .collect();
        let mut marginals = Vec::with_capacity(n + 1);
        for k in (0..n).rev() {
            let half = 1usize << k;
            let lower: Vec<f64> = (0..half).map(|x| top[x] + top[x + half]).collect();
            marginals.push(std::mem::replace(&mut top, lower));
        }
        marginals.push(top);
        marginals.reverse();
        StateTable {
            energies,
            min_energy,
            marginals,
        }
    });

    Ok(EnumerationResult {
        sites: n,
        beta,
        log_z,
        free_energy: -log_z,
        mean_energy: ze / z,
        mean_magnetization: zm / z,
        mean_abs_magnetization: zam / z,
        table,
    })
}

fn prefix_bits(prefix: &[i8], len: usize) -> Result<u64> {
    let mut bits = 0u64;
    for (j, &s) in prefix[..len].iter().enumerate() {
        match s {
            1 => bits |= 1 << j,
            -1 => {}
            other => return Err(Error::invalid(format!("prefix spin {other} is not ±1"))),
        }
    }
    Ok(bits)
}

impl EnumerationResult {
    pub fn has_table(&self) -> bool {
        self.table.is_some()
    }

    fn table(&self) -> Result<&StateTable> {
        self.table.as_ref().ok_or(Error::TooLarge {
            sites: self.sites,
            limit: MAX_TABLE_SITES,
        })
    }

    /// Energy of the state whose bit `j` encodes `s_j = +1`.
    pub fn state_energy(&self, state: u64) -> Result<i64> {
        Ok(self.table()?.energies[state as usize])
    }

    /// `log p(s)` for a full configuration.
    pub fn log_prob(&self, config: &SpinConfig) -> Result<f64> {
        let table = self.table()?;
        if config.len() != self.sites {
            return Err(Error::DimensionMismatch {
                expected: self.sites,
                got: config.len(),
            });
        }
        let bits = prefix_bits(config.as_slice(), self.sites)?;
        Ok(-self.beta * table.energies[bits as usize] as f64 - self.log_z)
    }

    /// `p(s_site = +1 | s_<site)` by summing Boltzmann weights over all completions.
    pub fn conditional(&self, prefix: &[i8], site: usize) -> Result<f64> {
        let table = self.table()?;
        if site >= self.sites {
            return Err(Error::invalid(format!("site {site} out of range")));
        }
        if prefix.len() < site {
            return Err(Error::invalid(format!(
                "prefix of length {} does not fix the spins before site {site}",
                prefix.len()
            )));
        }
        let x = prefix_bits(prefix, site)? as usize;
        let up = table.marginals[site + 1][x | 1 << site];
        Ok(up / table.marginals[site][x])
    }

    /// Exact `logit p(s_site = +1 | s_<site)`.
    pub fn conditional_logit(&self, prefix: &[i8], site: usize) -> Result<f64> {
        let table = self.table()?;
        let p = self.conditional(prefix, site)?;
        let x = prefix_bits(prefix, site)? as usize;
        let up = table.marginals[site + 1][x | 1 << site];
        let down = table.marginals[site + 1][x];
        debug_assert!(p > 0.0);
        Ok((up / down).ln())
    }

    pub fn min_energy(&self) -> Result<i64> {
        Ok(self.table()?.min_energy)
    }
}

/// Free-function form of [`EnumerationResult::conditional`].
pub fn exact_conditional(
    enumeration: &EnumerationResult,
    prefix: &[i8],
    site: usize,
) -> Result<f64> {
    enumeration.conditional(prefix, site)
}

/// `log|2 cosh x|`.
fn log_2cosh<T: Real>(x: T) -> T {
    let a = x.abs();
    a + (-(a + a)).exp().ln_1p()
}

/// `(log|2 sinh x|, sign)`.
fn log_2sinh<T: Real>(x: T) -> (T, T) {
    let a = x.abs();
    if a == T::zero() {
        return (T::neg_infinity(), T::zero());
    }
    (a + (-(-(a + a)).exp()).ln_1p(), x.signum())
}

/// Exact `F = -log Z` of the ferromagnetic Ising model on the periodic `L×L`
/// torus, from the finite-lattice product formula over the transfer-matrix
/// angles `γ_k`:
///
/// `Z = ½ (2 sinh 2β)^{N/2} (Z₁ + Z₂ + Z₃ + Z₄)` with
/// `Z₁,₂ = Π_r 2 cosh / 2 sinh (L γ_{2r+1} / 2)`,
/// `Z₃,₄ = Π_r 2 cosh / 2 sinh (L γ_{2r} / 2)`,
/// `cosh γ_k = cosh 2β coth 2β − cos(πk/L)` and `γ₀ = 2β + ln tanh β`.
///
/// Everything is accumulated in log space with signs tracked for the sinh products.
pub fn kaufman_free_energy<T: Real>(side: usize, beta: T) -> Result<T> {
    if side == 0 {
        return Err(Error::invalid("lattice side must be positive"));
    }
    if !(beta > T::zero()) || !beta.is_finite() {
        return Err(Error::invalid(format!("beta {beta} must be positive")));
    }
    let l = T::from_count(side);
    let half = T::lit(0.5);
    let two_b = beta + beta;
    let c = two_b.cosh() / two_b.tanh();
    let gamma = |k: usize| -> T {
        if k == 0 {
            two_b + beta.tanh().ln()
        } else {
            let x = c - (T::PI() * T::from_count(k) / l).cos();
            // acosh(x) = ln(x + sqrt(x²-1)), x ≥ 1
            (x + (x * x - T::one()).sqrt()).ln()
        }
    };
    let mut log_terms = [T::zero(); 4];
    let mut signs = [T::one(); 4];
    for r in 0..side {
        let odd = half * l * gamma(2 * r + 1);
        let even = half * l * gamma(2 * r);
        log_terms[0] += log_2cosh(odd);
        let (ls, sg) = log_2sinh(odd);
        log_terms[1] += ls;
        signs[1] *= sg;
        log_terms[2] += log_2cosh(even);
        let (ls, sg) = log_2sinh(even);
        log_terms[3] += ls;
        signs[3] *= sg;
    }
    let max = log_terms
        .iter()
        .zip(&signs)
        .filter(|(_, s)| **s != T::zero())
        .map(|(x, _)| *x)
        .fold(T::neg_infinity(), T::max);
    let sum: T = log_terms
        .iter()
        .zip(&signs)
        .filter(|(_, s)| **s != T::zero())
        .map(|(x, s)| *s * (*x - max).exp())
        .sum();
    if !(sum > T::zero()) {
        return Err(Error::invalid("partition function sum is not positive"));
    }
    let n = l * l;
    let log_z = -T::LN_2() + half * n * (T::lit(2.0) * two_b.sinh()).ln() + max + sum.ln();
    Ok(-log_z)
}

/// `⟨E⟩ = dF/dβ` of the ferromagnet on an `L × L` torus, by a central difference of
/// [`kaufman_free_energy`] with step `1e-5`.
pub fn kaufman_mean_energy(side: usize, beta: f64) -> Result<f64> {
    let h = 1e-5;
    if beta <= h {
        return Err(Error::invalid(format!(
            "beta {beta} too small for the central difference"
        )));
    }
    let plus: f64 = kaufman_free_energy(side, beta + h)?;
    let minus: f64 = kaufman_free_energy(side, beta - h)?;
    Ok((plus - minus) / (2.0 * h))
}
