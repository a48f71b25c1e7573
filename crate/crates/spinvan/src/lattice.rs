//! Square periodic lattice, spin configurations and coupling fields.
//!
//! Sites are numbered row-major: site `i` sits at row `i / L`, column `i % L`.
//! Every periodic bond is stored once, indexed by its origin site, in one of
//! two arrays: `horizontal[i]` couples `i` to its right neighbour and
//! `vertical[i]` couples `i` to the site below it.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Geometry {
    side: usize,
}

impl Geometry {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 {
            return Err(Error::invalid("lattice side must be positive"));
        }
        Ok(Geometry { side })
    }

    #[inline]
    pub fn side(&self) -> usize {
        self.side
    }

    #[inline]
    pub fn sites(&self) -> usize {
        self.side * self.side
    }

    /// Number of periodic bonds, `2N`.
    #[inline]
    pub fn bonds(&self) -> usize {
        2 * self.sites()
    }

    #[inline]
    pub fn row(&self, site: usize) -> usize {
        site / self.side
    }

    #[inline]
    pub fn col(&self, site: usize) -> usize {
        site % self.side
    }

    /// Site index at `(row, col)`, both taken modulo `L`.
    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        (row % self.side) * self.side + col % self.side
    }

    #[inline]
    pub fn right(&self, site: usize) -> usize {
        let (r, c) = (self.row(site), self.col(site));
        r * self.side + (c + 1) % self.side
    }

    #[inline]
    pub fn left(&self, site: usize) -> usize {
        let (r, c) = (self.row(site), self.col(site));
        r * self.side + (c + self.side - 1) % self.side
    }

    #[inline]
    pub fn down(&self, site: usize) -> usize {
        (site + self.side) % self.sites()
    }

    #[inline]
    pub fn up(&self, site: usize) -> usize {
        (site + self.sites() - self.side) % self.sites()
    }

    #[inline]
    pub fn neighbors(&self, site: usize) -> [usize; 4] {
        [
            self.right(site),
            self.left(site),
            self.down(site),
            self.up(site),
        ]
    }
}

/// A configuration of `N` spins, each `-1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig(Vec<i8>);

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(bad) = spins.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::invalid(format!("spin value {bad} is not ±1")));
        }
        Ok(SpinConfig(spins))
    }

    pub fn uniform(geometry: Geometry, spin: i8) -> Self {
        assert!(spin == 1 || spin == -1);
        SpinConfig(vec![spin; geometry.sites()])
    }

    pub fn random<R: Rng + ?Sized>(geometry: Geometry, rng: &mut R) -> Self {
        SpinConfig(
            (0..geometry.sites())
                .map(|_| if rng.random::<bool>() { 1 } else { -1 })
                .collect(),
        )
    }

    /// Configuration `k` of the `2^N` enumeration: bit `j` set means `s_j = +1`.
    pub fn from_bits(bits: u64, sites: usize) -> Self {
        SpinConfig(
            (0..sites)
                .map(|j| if bits >> j & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }

    pub fn flipped(&self) -> Self {
        SpinConfig(self.0.iter().map(|s| -s).collect())
    }

    pub fn magnetization(&self) -> i64 {
        magnetization(&self.0)
    }
}

impl AsRef<[i8]> for SpinConfig {
    fn as_ref(&self) -> &[i8] {
        &self.0
    }
}

impl fmt::Display for SpinConfig {
    /// One line of space-separated `±1` values.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

impl FromStr for SpinConfig {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let spins = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<i8>()
                    .map_err(|e| Error::format("configuration", format!("{tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        SpinConfig::new(spins)
    }
}

/// Unnormalized magnetization `M = Σ s_i`.
#[inline]
pub fn magnetization(spins: &[i8]) -> i64 {
    spins.iter().map(|&s| s as i64).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    Ferromagnetic,
    EaBinary,
}

impl fmt::Display for CouplingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingKind::Ferromagnetic => "ferromagnetic",
            CouplingKind::EaBinary => "ea-binary",
        })
    }
}

impl FromStr for CouplingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ferromagnetic" => Ok(CouplingKind::Ferromagnetic),
            "ea-binary" => Ok(CouplingKind::EaBinary),
            other => Err(Error::format("coupling kind", other.to_string())),
        }
    }
}

/// Link variables `J` for every periodic bond, each `±1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Couplings {
    geometry: Geometry,
    kind: CouplingKind,
    seed: u64,
    horizontal: Vec<i8>,
    vertical: Vec<i8>,
}

impl Couplings {
    pub fn ferromagnetic(geometry: Geometry) -> Self {
        let n = geometry.sites();
        Couplings {
            geometry,
            kind: CouplingKind::Ferromagnetic,
            seed: 0,
            horizontal: vec![1; n],
            vertical: vec![1; n],
        }
    }

    /// Each bond independently `±1` with probability ½, drawn horizontal block first.
    pub fn ea_binary(geometry: Geometry, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let n = geometry.sites();
        let mut draw = || -> Vec<i8> {
            (0..n)
                .map(|_| if rng.random::<bool>() { 1 } else { -1 })
                .collect()
        };
        let horizontal = draw();
        let vertical = draw();
        Couplings {
            geometry,
            kind: CouplingKind::EaBinary,
            seed,
            horizontal,
            vertical,
        }
    }

    pub fn generate(kind: CouplingKind, geometry: Geometry, seed: u64) -> Self {
        match kind {
            CouplingKind::Ferromagnetic => Couplings::ferromagnetic(geometry),
            CouplingKind::EaBinary => Couplings::ea_binary(geometry, seed),
        }
    }

    pub fn from_parts(
        geometry: Geometry,
        kind: CouplingKind,
        seed: u64,
        horizontal: Vec<i8>,
        vertical: Vec<i8>,
    ) -> Result<Self> {
        check_len(geometry.sites(), horizontal.len())?;
        check_len(geometry.sites(), vertical.len())?;
        if let Some(bad) = horizontal
            .iter()
            .chain(&vertical)
            .find(|&&j| j != 1 && j != -1)
        {
            return Err(Error::invalid(format!("coupling value {bad} is not ±1")));
        }
        Ok(Couplings {
            geometry,
            kind,
            seed,
            horizontal,
            vertical,
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.geometry
    }

    pub fn kind(&self) -> CouplingKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizontal(&self) -> &[i8] {
        &self.horizontal
    }

    pub fn vertical(&self) -> &[i8] {
        &self.vertical
    }

    /// Bond between `site` and its right neighbour.
    #[inline]
    pub fn right_bond(&self, site: usize) -> i8 {
        self.horizontal[site]
    }

    /// Bond between `site` and the site below it.
    #[inline]
    pub fn down_bond(&self, site: usize) -> i8 {
        self.vertical[site]
    }

    /// Horizontal bond from `(row, col)` to `(row, col + 1)`, indices periodic.
    #[inline]
    pub fn h_at(&self, row: usize, col: usize) -> i8 {
        self.horizontal[self.geometry.index(row, col)]
    }

    /// Vertical bond from `(row, col)` to `(row + 1, col)`, indices periodic.
    #[inline]
    pub fn v_at(&self, row: usize, col: usize) -> i8 {
        self.vertical[self.geometry.index(row, col)]
    }

    pub fn is_ferromagnetic(&self) -> bool {
        self.horizontal
            .iter()
            .chain(&self.vertical)
            .all(|&j| j == 1)
    }

    pub fn bond_mean(&self) -> f64 {
        let total: i64 = self
            .horizontal
            .iter()
            .chain(&self.vertical)
            .map(|&j| j as i64)
            .sum();
        total as f64 / self.geometry.bonds() as f64
    }

    /// Local field `Σ_j J_ij s_j` over the four neighbours of `site`.
    #[inline]
    pub fn local_field(&self, spins: &[i8], site: usize) -> i64 {
        let g = &self.geometry;
        let (l, u) = (g.left(site), g.up(site));
        (self.horizontal[site] * spins[g.right(site)]) as i64
            + (self.horizontal[l] * spins[l]) as i64
            + (self.vertical[site] * spins[g.down(site)]) as i64
            + (self.vertical[u] * spins[u]) as i64
    }

    /// `E(s) = -Σ J_ij s_i s_j` over all `2N` periodic bonds.
    pub fn energy(&self, spins: &[i8]) -> Result<i64> {
        check_len(self.geometry.sites(), spins.len())?;
        Ok(self.energy_unchecked(spins))
    }

    pub(crate) fn energy_unchecked(&self, spins: &[i8]) -> i64 {
        let l = self.geometry.side();
        let n = self.geometry.sites();
        let mut acc = 0i32;
        for r in 0..l {
            let row = r * l;
            let below = (row + l) % n;
            for c in 0..l {
                let i = row + c;
                let right = if c + 1 == l { row } else { i + 1 };
                let s = spins[i] as i32;
                acc += s
                    * ((self.horizontal[i] * spins[right]) as i32
                        + (self.vertical[i] * spins[below + c]) as i32);
            }
        }
        -(acc as i64)
    }

    /// Text form: `L <L> kind <kind> seed <seed>` then the horizontal block and the
    /// vertical block, one lattice row per line.
    pub fn to_text(&self) -> String {
        let l = self.geometry.side();
        let mut out = format!("L {} kind {} seed {}\n", l, self.kind, self.seed);
        for block in [&self.horizontal, &self.vertical] {
            for row in block.chunks(l) {
                let line: Vec<String> = row.iter().map(|j| j.to_string()).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format("coupling file", "empty input"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (side, kind, seed) = match fields.as_slice() {
            ["L", l, "kind", k, "seed", s] => (
                l.parse::<usize>()
                    .map_err(|e| Error::format("coupling file", format!("L: {e}")))?,
                k.parse::<CouplingKind>()?,
                s.parse::<u64>()
                    .map_err(|e| Error::format("coupling file", format!("seed: {e}")))?,
            ),
            _ => {
                return Err(Error::format(
                    "coupling file",
                    format!("bad header {header:?}, expected `L <L> kind <kind> seed <seed>`"),
                ))
            }
        };
        let geometry = Geometry::new(side)?;
        let values = lines
            .flat_map(str::split_whitespace)
            .map(|tok| {
                tok.parse::<i8>()
                    .map_err(|e| Error::format("coupling file", format!("{tok:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        check_len(geometry.bonds(), values.len())?;
        let (h, v) = values.split_at(geometry.sites());
        Couplings::from_parts(geometry, kind, seed, h.to_vec(), v.to_vec())
    }
}
