//! Per-edge potentials σ (the antiderivative of the distributional potential
//! q = σ′) sampled on a uniform grid over [0, π], piecewise linear between
//! nodes, with optional registered jump points. A jump in σ encodes a Dirac
//! mass in q; y and y^[1] stay continuous across it, so jumps only change the
//! coefficient seen by the integrator.

use crate::error::{Error, Result};
use crate::tree::{EdgeId, TreeSpec};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

pub const DEFAULT_GRID: usize = 129;

/// σ on one edge: samples on a uniform grid over [0, len] plus jump terms.
#[derive(Debug, Clone)]
pub struct EdgePotential {
    /// Node values of the piecewise-linear part; node i sits at i·len/(n-1).
    pub values: Vec<f64>,
    /// (position, delta) pairs strictly inside (0, len): σ gains `delta` for
    /// x > position.
    pub jumps: Vec<(f64, f64)>,
    /// Edge length; π for tree edges, a multiple of π for chain intervals.
    pub len: f64,
}

impl EdgePotential {
    /// The zero potential on a unit edge.
    pub fn zero(n_grid: usize) -> EdgePotential {
        EdgePotential {
            values: vec![0.0; n_grid.max(2)],
            jumps: Vec::new(),
            len: PI,
        }
    }

    pub fn zero_len(n_grid: usize, len: f64) -> EdgePotential {
        EdgePotential {
            values: vec![0.0; n_grid.max(2)],
            jumps: Vec::new(),
            len,
        }
    }

    /// Samples `f` on a uniform grid of `n_grid` nodes over [0, len].
    pub fn from_fn(n_grid: usize, len: f64, f: impl Fn(f64) -> f64) -> EdgePotential {
        let n = n_grid.max(2);
        let h = len / (n - 1) as f64;
        EdgePotential {
            values: (0..n).map(|i| f(i as f64 * h)).collect(),
            jumps: Vec::new(),
            len,
        }
    }

    /// Truncated cosine series Σ c_k cos(kπx/len) on [0, len].
    pub fn from_cos_coeffs(n_grid: usize, len: f64, coeffs: &[f64]) -> EdgePotential {
        let c = coeffs.to_vec();
        EdgePotential::from_fn(n_grid, len, move |x| {
            c.iter()
                .enumerate()
                .map(|(k, ck)| ck * (k as f64 * PI * x / len).cos())
                .sum()
        })
    }

    /// Smooth random potential with sup-norm roughly `amp`, deterministic in
    /// `seed`. Low-order cosine content only.
    pub fn synth_smooth(n_grid: usize, len: f64, amp: f64, seed: u64) -> EdgePotential {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_modes = 4;
        let coeffs: Vec<f64> = (0..n_modes)
            .map(|k| {
                let scale = amp / (1.0 + k as f64);
                rng.gen_range(-scale..scale)
            })
            .collect();
        let norm: f64 = coeffs.iter().map(|c| c.abs()).sum::<f64>().max(1e-12);
        let rescale = amp / norm;
        let coeffs: Vec<f64> = coeffs.iter().map(|c| c * rescale).collect();
        EdgePotential::from_cos_coeffs(n_grid, len, &coeffs)
    }

    pub fn n_grid(&self) -> usize {
        self.values.len()
    }

    /// σ(x): piecewise-linear interpolation plus accumulated jumps.
    pub fn value(&self, x: f64) -> f64 {
        let n = self.values.len();
        let h = self.len / (n - 1) as f64;
        let xc = x.clamp(0.0, self.len);
        let i = ((xc / h).floor() as usize).min(n - 2);
        let t = (xc - i as f64 * h) / h;
        let mut v = self.values[i] * (1.0 - t) + self.values[i + 1] * t;
        for (pos, delta) in &self.jumps {
            if xc > *pos {
                v += delta;
            }
        }
        v
    }

    /// Break positions the integrator must not step across: grid nodes and
    /// jump points, ascending, including both endpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        let n = self.values.len();
        let h = self.len / (n - 1) as f64;
        let mut pts: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        for (pos, _) in &self.jumps {
            pts.push(*pos);
        }
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        pts
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
            && self.jumps.iter().all(|(p, d)| p.is_finite() && d.is_finite())
    }

    /// Restriction to [a, b] resampled on `n_grid` nodes (used when a chain
    /// recovery is committed edge by edge).
    pub fn restrict(&self, a: f64, b: f64, n_grid: usize) -> EdgePotential {
        let n = n_grid.max(2);
        let h = (b - a) / (n - 1) as f64;
        EdgePotential {
            values: (0..n).map(|i| self.value(a + i as f64 * h)).collect(),
            jumps: self
                .jumps
                .iter()
                .filter(|(p, _)| *p > a && *p < b)
                .map(|(p, d)| (p - a, *d))
                .collect(),
            len: b - a,
        }
    }

    /// The same physical potential seen from the opposite end of the edge:
    /// σ̃(x) = −σ(len − x). Quasi-derivatives map as y^[1] ↦ −y^[1].
    pub fn reversed(&self) -> EdgePotential {
        let n = self.values.len();
        EdgePotential {
            values: (0..n).map(|i| -self.values[n - 1 - i]).collect(),
            jumps: self
                .jumps
                .iter()
                .rev()
                .map(|(p, d)| (self.len - p, -*d))
                .collect(),
            len: self.len,
        }
    }

    /// Discrete L2 norm over [0, len].
    pub fn l2_norm(&self) -> f64 {
        crate::util::discrete_l2(&self.sampled(self.values.len().max(5)), self.len)
    }

    /// Samples (including jump contributions) on a fresh uniform grid.
    pub fn sampled(&self, n: usize) -> Vec<f64> {
        let h = self.len / (n - 1) as f64;
        (0..n).map(|i| self.value(i as f64 * h)).collect()
    }

    /// Plain-text serialization: one `x value` pair per line and optional
    /// `jump x delta` lines.
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let n = self.values.len();
        let h = self.len / (n - 1) as f64;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{:.12e} {:.12e}", i as f64 * h, v)?;
        }
        for (p, d) in &self.jumps {
            writeln!(w, "jump {:.12e} {:.12e}", p, d)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write_to(&mut f)
    }

    /// Parses the plain-text format. The x column must be uniform ascending.
    pub fn read_from(r: impl BufRead) -> Result<EdgePotential> {
        let mut xs = Vec::new();
        let mut vals = Vec::new();
        let mut jumps = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            if parts[0] == "jump" {
                if parts.len() != 3 {
                    return Err(bad("expected: jump <x> <delta>"));
                }
                let p: f64 = parts[1].parse().map_err(|_| bad("bad jump position"))?;
                let d: f64 = parts[2].parse().map_err(|_| bad("bad jump delta"))?;
                jumps.push((p, d));
            } else {
                if parts.len() != 2 {
                    return Err(bad("expected: <x> <value>"));
                }
                let x: f64 = parts[0].parse().map_err(|_| bad("bad x"))?;
                let v: f64 = parts[1].parse().map_err(|_| bad("bad value"))?;
                xs.push(x);
                vals.push(v);
            }
        }
        if xs.len() < 2 {
            return Err(Error::Parse {
                line: 0,
                msg: "potential file needs at least two samples".into(),
            });
        }
        let len = *xs.last().unwrap();
        let h = len / (xs.len() - 1) as f64;
        for (i, x) in xs.iter().enumerate() {
            if (x - i as f64 * h).abs() > 1e-6 * len.max(1.0) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "x column must be a uniform ascending grid from 0".into(),
                });
            }
        }
        for (p, _) in &jumps {
            if *p <= 0.0 || *p >= len {
                return Err(Error::Parse {
                    line: 0,
                    msg: "jump position must lie strictly inside (0, len)".into(),
                });
            }
        }
        Ok(EdgePotential { values: vals, jumps, len })
    }

    pub fn load(path: &std::path::Path) -> Result<EdgePotential> {
        let f = std::fs::File::open(path)?;
        EdgePotential::read_from(std::io::BufReader::new(f))
    }
}

/// Potentials for a set of edges.
#[derive(Debug, Clone, Default)]
pub struct PotentialSet {
    pub by_edge: BTreeMap<EdgeId, EdgePotential>,
}

impl PotentialSet {
    pub fn zero(tree: &TreeSpec, n_grid: usize) -> PotentialSet {
        PotentialSet {
            by_edge: tree
                .edges
                .iter()
                .map(|e| (e.id, EdgePotential::zero(n_grid)))
                .collect(),
        }
    }

    pub fn get(&self, e: EdgeId) -> Option<&EdgePotential> {
        self.by_edge.get(&e)
    }

    pub fn insert(&mut self, e: EdgeId, p: EdgePotential) {
        self.by_edge.insert(e, p);
    }

    pub fn has_all(&self, tree: &TreeSpec) -> bool {
        tree.edges.iter().all(|e| self.by_edge.contains_key(&e.id))
    }
}

/// Shifts the whole spectrum by `c`: σ_j(x) ↦ σ_j(x) + c·x, γ_j ↦ γ_j + c·π.
/// The + sign on γ keeps every vertex condition invariant under the change of
/// quasi-derivative.
pub fn shift_spectrum(tree: &TreeSpec, pots: &PotentialSet, c: f64) -> (TreeSpec, PotentialSet) {
    let mut t = tree.clone();
    for e in &tree.edges {
        let g = t.gamma.entry(e.id).or_insert(0.0);
        *g += c * PI;
    }
    let mut out = PotentialSet::default();
    for (id, p) in &pots.by_edge {
        let n = p.values.len();
        let h = p.len / (n - 1) as f64;
        let mut q = p.clone();
        for (i, v) in q.values.iter_mut().enumerate() {
            *v += c * (i as f64 * h);
        }
        out.insert(*id, q);
    }
    (t, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_file() {
        let p = EdgePotential {
            values: vec![0.0, 0.5, -0.25, 0.1, 0.0],
            jumps: vec![(1.0, 0.7)],
            len: PI,
        };
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        let q = EdgePotential::read_from(buf.as_slice()).unwrap();
        assert_eq!(q.values, p.values);
        assert_eq!(q.jumps.len(), 1);
        assert!((q.value(1.5) - p.value(1.5)).abs() < 1e-12);
    }

    #[test]
    fn jump_only_after_position() {
        let mut p = EdgePotential::zero(5);
        p.jumps.push((1.0, 2.0));
        assert_eq!(p.value(0.5), 0.0);
        assert_eq!(p.value(1.5), 2.0);
    }

    #[test]
    fn reversal_is_involutive() {
        let p = EdgePotential::from_fn(33, PI, |x| 0.3 * x.cos() + 0.1 * x);
        let rr = p.reversed().reversed();
        for i in 0..33 {
            assert!((rr.values[i] - p.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_files_report_lines() {
        let e = EdgePotential::read_from("0 0\nnot a line\n".as_bytes()).unwrap_err();
        match e {
            crate::error::Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let a = EdgePotential::synth_smooth(65, PI, 0.2, 42);
        let b = EdgePotential::synth_smooth(65, PI, 0.2, 42);
        assert_eq!(a.values, b.values);
        let c = EdgePotential::synth_smooth(65, PI, 0.2, 43);
        assert_ne!(a.values, c.values);
    }
}
