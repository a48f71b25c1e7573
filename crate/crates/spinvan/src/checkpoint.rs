//! Text checkpoint container for a trained model and the system it was trained on.
//!
//! ```text
//! spinvan-ckpt v1
//! meta <key> <value>
//! ...
//! <tensor name> <dim> [<dim>]
//! <values separated by spaces>
//! ...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::arnet::ModelParameters;
use crate::error::{Error, Result};
use crate::lattice::{CouplingKind, Couplings, Geometry};
use crate::priors::{PriorKind, PriorSpec};
use crate::scalar::Real;

pub const MAGIC: &str = "spinvan-ckpt v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParameters<T>,
    pub prior_kind: PriorKind,
    pub order: u8,
    pub beta: f64,
    pub couplings: Couplings,
    /// Where the random stream resumes, e.g. `train <seed> <next update>`.
    pub rng_state: String,
    /// Free-form extra metadata.
    pub extra: BTreeMap<String, String>,
}

fn write_tensor<T: Real>(
    out: &mut String,
    name: &str,
    shape: &[usize],
    data: impl Iterator<Item = T>,
) {
    out.push_str(name);
    for d in shape {
        let _ = write!(out, " {d}");
    }
    out.push('\n');
    let mut first = true;
    for x in data {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{x}");
    }
    out.push('\n');
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", detail)
}

fn meta_value<'a>(meta: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    meta.get(key)
        .map(String::as_str)
        .ok_or_else(|| bad(format!("missing meta key `{key}`")))
}

fn parse_meta<V: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<V> {
    let raw = meta_value(meta, key)?;
    raw.parse()
        .map_err(|_| bad(format!("meta `{key}` has invalid value `{raw}`")))
}

const RESERVED: [&str; 9] = [
    "side",
    "hidden",
    "leaky_slope",
    "prior_kind",
    "order",
    "beta",
    "coupling_kind",
    "coupling_seed",
    "rng_state",
];

impl<T: Real> Checkpoint<T> {
    pub fn new(
        params: ModelParameters<T>,
        spec: &PriorSpec<T>,
        couplings: &Couplings,
        rng_state: impl Into<String>,
    ) -> Result<Self> {
        crate::error::check_len(params.sites(), couplings.geometry().sites())?;
        crate::error::check_len(params.sites(), spec.geometry().sites())?;
        Ok(Checkpoint {
            params,
            prior_kind: spec.kind(),
            order: spec.order(),
            beta: spec.beta().as_f64(),
            couplings: couplings.clone(),
            rng_state: rng_state.into(),
            extra: BTreeMap::new(),
        })
    }

    pub fn geometry(&self) -> Geometry {
        self.couplings.geometry()
    }

    /// Rebuilds the prior the model was trained with.
    pub fn prior(&self) -> Result<PriorSpec<T>> {
        PriorSpec::build(
            self.prior_kind,
            &self.couplings,
            T::lit(self.beta),
            self.order,
        )
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let (n, h) = (p.sites(), p.hidden());
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        let mut meta = vec![
            ("side", self.geometry().side().to_string()),
            ("hidden", h.to_string()),
            ("leaky_slope", p.leaky_slope().to_string()),
            ("prior_kind", self.prior_kind.to_string()),
            ("order", self.order.to_string()),
            ("beta", self.beta.to_string()),
            ("coupling_kind", self.couplings.kind().to_string()),
            ("coupling_seed", self.couplings.seed().to_string()),
            ("rng_state", self.rng_state.clone()),
        ];
        for (k, v) in &self.extra {
            meta.push((k.as_str(), v.clone()));
        }
        for (k, v) in meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        let t = &p.tensors;
        write_tensor(&mut out, "w_in", &[n, h], t.w_in.iter().copied());
        write_tensor(&mut out, "b_hidden", &[h], t.b_hidden.iter().copied());
        write_tensor(&mut out, "w_out", &[n, h], t.w_out.iter().copied());
        write_tensor(&mut out, "b_out", &[n], t.b_out.iter().copied());
        let as_real = |v: &[i8]| v.iter().map(|&j| T::lit(j as f64)).collect::<Vec<_>>();
        write_tensor(
            &mut out,
            "couplings_horizontal",
            &[n],
            as_real(self.couplings.horizontal()).into_iter(),
        );
        write_tensor(
            &mut out,
            "couplings_vertical",
            &[n],
            as_real(self.couplings.vertical()).into_iter(),
        );
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(first) if first.trim_end() == MAGIC => {}
            other => {
                return Err(bad(format!(
                    "expected header `{MAGIC}`, found `{}`",
                    other.unwrap_or("")
                )))
            }
        }
        let mut meta = BTreeMap::new();
        let mut tensors: BTreeMap<String, (Vec<usize>, Vec<T>)> = BTreeMap::new();
        let mut lines = lines.filter(|l| !l.trim().is_empty()).peekable();
        while let Some(line) = lines.next() {
            let mut words = line.split_whitespace();
            let head = words.next().unwrap_or_default();
            if head == "meta" {
                let key = words.next().ok_or_else(|| bad("meta line without key"))?;
                let value = line
                    .splitn(3, char::is_whitespace)
                    .nth(2)
                    .unwrap_or("")
                    .trim();
                meta.insert(key.to_string(), value.to_string());
                continue;
            }
            let shape = words
                .map(|w| {
                    w.parse::<usize>()
                        .map_err(|_| bad(format!("bad dimension `{w}` for `{head}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let data_line = lines
                .next()
                .ok_or_else(|| bad(format!("tensor `{head}` has no data")))?;
            let data = data_line
                .split_whitespace()
                .map(|w| {
                    w.parse::<T>()
                        .map_err(|_| bad(format!("bad value `{w}` in `{head}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let expected: usize = shape.iter().product();
            if data.len() != expected {
                return Err(bad(format!(
                    "tensor `{head}` declares {expected} values but has {}",
                    data.len()
                )));
            }
            tensors.insert(head.to_string(), (shape, data));
        }

        let side: usize = parse_meta(&meta, "side")?;
        let hidden: usize = parse_meta(&meta, "hidden")?;
        let slope: T = parse_meta(&meta, "leaky_slope")?;
        let prior_kind: PriorKind = parse_meta(&meta, "prior_kind")?;
        let order: u8 = parse_meta(&meta, "order")?;
        let beta: f64 = parse_meta(&meta, "beta")?;
        let coupling_kind: CouplingKind = parse_meta(&meta, "coupling_kind")?;
        let coupling_seed: u64 = parse_meta(&meta, "coupling_seed")?;
        let rng_state = meta_value(&meta, "rng_state")?.to_string();
        let geometry = Geometry::new(side)?;
        let n = geometry.sites();

        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<T>> {
            let (s, d) = tensors
                .remove(name)
                .ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if s != shape {
                return Err(bad(format!(
                    "tensor `{name}` has shape {s:?}, expected {shape:?}"
                )));
            }
            Ok(d)
        };
        let mut params = ModelParameters::zeros(n, hidden, slope)?;
        let mut t = params.tensors.clone();
        t.w_in = take("w_in", &[n, hidden])?;
        t.b_hidden = take("b_hidden", &[hidden])?;
        t.w_out = take("w_out", &[n, hidden])?;
        t.b_out = take("b_out", &[n])?;
        let as_bond = |v: Vec<T>| v.into_iter().map(|x| x.as_f64() as i8).collect::<Vec<i8>>();
        let horizontal = as_bond(take("couplings_horizontal", &[n])?);
        let vertical = as_bond(take("couplings_vertical", &[n])?);
        if let Some(name) = tensors.keys().next() {
            return Err(bad(format!("unknown tensor `{name}`")));
        }
        let masked = {
            let mut m = t.clone();
            params.apply_mask(&mut m);
            m
        };
        if masked != t {
            return Err(bad("masked weights are not zero"));
        }
        params.tensors = t;
        let couplings =
            Couplings::from_parts(geometry, coupling_kind, coupling_seed, horizontal, vertical)?;
        let extra = meta
            .into_iter()
            .filter(|(k, _)| !RESERVED.contains(&k.as_str()))
            .collect();
        Ok(Checkpoint {
            params,
            prior_kind,
            order,
            beta,
            couplings,
            rng_state,
            extra,
        })
    }

    /// Writes through a temporary file in the same directory and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Writes `bytes` to `path` via a temporary file and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
