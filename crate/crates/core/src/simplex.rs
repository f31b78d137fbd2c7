//! Regular grid on the probability simplex and barycentric interpolation over
//! its Freudenthal (Kuhn) triangulation.
//!
//! A belief `o` is mapped to cumulative coordinates `z_i = M Σ_{j≥i} o_j`, so
//! `z_0 = M ≥ z_1 ≥ … ≥ z_{n-1} ≥ 0`. Grid points are exactly the integer
//! points of that region. The containing sub-simplex has base vertex
//! `⌊z⌋`, and each further vertex adds one unit vector in decreasing order
//! of the fractional parts.

use std::collections::HashMap;

use crate::belief::Belief;
use crate::error::{Error, Result};

pub const DEFAULT_GRID_CAP: usize = 2_000_000;

/// Coordinates within this distance of an integer are snapped onto it, so that
/// grid beliefs reproduce stored values exactly.
const SNAP_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SimplexGrid {
    dimension: usize,
    resolution: usize,
    /// Compositions of `resolution` into `dimension` parts, lexicographic.
    points: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
}

/// `C(n, k)` or `None` on overflow.
fn binomial(n: u128, k: u128) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

impl SimplexGrid {
    pub fn new(dimension: usize, resolution: usize) -> Result<Self> {
        Self::with_cap(dimension, resolution, DEFAULT_GRID_CAP)
    }

    pub fn with_cap(dimension: usize, resolution: usize, cap: usize) -> Result<Self> {
        if dimension < 2 || resolution < 1 {
            return Err(Error::InvalidConfig(format!(
                "simplex grid needs dimension >= 2 and resolution >= 1, got {dimension} and {resolution}"
            )));
        }
        let count = Self::point_count(dimension, resolution);
        if count.is_none_or(|c| c > cap as u128) {
            return Err(Error::SizeOverflow {
                points: count.unwrap_or(u128::MAX),
                cap,
            });
        }
        let mut points = Vec::with_capacity(count.unwrap_or(0) as usize);
        let mut current = vec![0u32; dimension];
        enumerate(&mut current, 0, resolution as u32, &mut points);
        let index = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
        Ok(Self {
            dimension,
            resolution,
            points,
            index,
        })
    }

    /// `C(M + n − 1, n − 1)`, or `None` if it does not fit in 128 bits.
    pub fn point_count(dimension: usize, resolution: usize) -> Option<u128> {
        binomial(
            (resolution + dimension - 1) as u128,
            (dimension - 1) as u128,
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn composition(&self, i: usize) -> &[u32] {
        &self.points[i]
    }

    pub fn index_of(&self, composition: &[u32]) -> Option<usize> {
        self.index.get(composition).copied()
    }

    pub fn belief(&self, i: usize) -> Belief {
        let m = self.resolution as f64;
        Belief::from_normalized(self.points[i].iter().map(|&k| k as f64 / m).collect())
    }

    pub fn beliefs(&self) -> impl Iterator<Item = Belief> + '_ {
        (0..self.len()).map(|i| self.belief(i))
    }

    /// Grid point indices and barycentric weights of the sub-simplex containing
    /// `belief`. Weights are positive and sum to one; at most `dimension`
    /// entries are returned.
    pub fn stencil(&self, belief: &Belief) -> Vec<(usize, f64)> {
        let n = self.dimension;
        let m = self.resolution as f64;
        let o = belief.as_slice();
        debug_assert_eq!(o.len(), n);

        // cumulative coordinates from the tail; monotone by construction
        let mut z = vec![0.0; n];
        let mut acc = 0.0;
        for i in (1..n).rev() {
            acc += o[i];
            z[i] = (acc * m).clamp(0.0, m);
        }
        z[0] = m;
        for zi in z.iter_mut() {
            let r = zi.round();
            if (*zi - r).abs() <= SNAP_TOL {
                *zi = r;
            }
        }
        let base: Vec<u32> = z.iter().map(|v| v.floor() as u32).collect();
        let frac: Vec<f64> = z.iter().zip(&base).map(|(v, &b)| v - b as f64).collect();

        let mut order: Vec<usize> = (1..n).collect();
        // decreasing fractional part, ties by ascending index
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));

        let mut out = Vec::with_capacity(n);
        let mut vertex = base;
        let first = 1.0 - order.first().map_or(0.0, |&i| frac[i]);
        if first > 0.0 {
            out.push((self.lookup(&vertex), first));
        }
        for (k, &i) in order.iter().enumerate() {
            vertex[i] += 1;
            let next = order.get(k + 1).map_or(0.0, |&j| frac[j]);
            let w = frac[i] - next;
            if w > 0.0 {
                out.push((self.lookup(&vertex), w));
            }
        }
        out
    }

    /// Map a cumulative-coordinate vertex back to its grid index.
    fn lookup(&self, cumulative: &[u32]) -> usize {
        let n = cumulative.len();
        let comp: Vec<u32> = (0..n)
            .map(|i| cumulative[i] - cumulative.get(i + 1).copied().unwrap_or(0))
            .collect();
        self.index[&comp]
    }

    /// Interpolate a table of per-point values at `belief`.
    pub fn interpolate(&self, values: &[f64], belief: &Belief) -> f64 {
        self.stencil(belief)
            .into_iter()
            .map(|(i, w)| w * values[i])
            .sum()
    }
}

fn enumerate(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for k in 0..=remaining {
        current[pos] = k;
        enumerate(current, pos + 1, remaining - k, out);
    }
}
