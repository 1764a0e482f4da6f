//! Lattice geometry, the dispersion relation, and torus quadrature.
//!
//! The dispersion `e(p) = 2 Σ_α sin²(π p_α)` is the Fourier symbol of
//! `-Δ/2` on `Z³`; the free spectrum is `[0, 6]`. Momentum integrals over
//! the torus `T³ = [-1/2, 1/2]³` are evaluated on a uniform grid shifted by
//! half a cell, so the integrable singularity of `1/e(q)` at `q = 0` is
//! never sampled exactly and the same quadrature serves the bound checks
//! for singular integrands.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the integer lattice `Z³`. Exact integer arithmetic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Site(pub i64, pub i64, pub i64);

impl Site {
    pub const ORIGIN: Site = Site(0, 0, 0);

    pub fn coords(&self) -> [i64; 3] {
        [self.0, self.1, self.2]
    }

    /// Sup-norm distance; this is the metric that defines cubes.
    pub fn dist_sup(&self, other: &Site) -> i64 {
        (self.0 - other.0)
            .abs()
            .max((self.1 - other.1).abs())
            .max((self.2 - other.2).abs())
    }

    /// Graph (ℓ¹) distance on the lattice.
    pub fn dist_l1(&self, other: &Site) -> i64 {
        (self.0 - other.0).abs() + (self.1 - other.1).abs() + (self.2 - other.2).abs()
    }

    /// Euclidean distance; used for decay-rate fits.
    pub fn dist_euclid(&self, other: &Site) -> f64 {
        let d = [self.0 - other.0, self.1 - other.1, self.2 - other.2];
        ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt()
    }

    pub fn norm_euclid(&self) -> f64 {
        self.dist_euclid(&Site::ORIGIN)
    }

    pub fn norm_sup(&self) -> i64 {
        self.dist_sup(&Site::ORIGIN)
    }

    /// The six nearest neighbors.
    pub fn neighbors(&self) -> [Site; 6] {
        let Site(x, y, z) = *self;
        [
            Site(x + 1, y, z),
            Site(x - 1, y, z),
            Site(x, y + 1, z),
            Site(x, y - 1, z),
            Site(x, y, z + 1),
            Site(x, y, z - 1),
        ]
    }
}

impl std::ops::Add for Site {
    type Output = Site;
    fn add(self, rhs: Site) -> Site {
        Site(self.0 + rhs.0, self.1 + rhs.1, self.2 + rhs.2)
    }
}

impl std::ops::Sub for Site {
    type Output = Site;
    fn sub(self, rhs: Site) -> Site {
        Site(self.0 - rhs.0, self.1 - rhs.1, self.2 - rhs.2)
    }
}

impl std::ops::Neg for Site {
    type Output = Site;
    fn neg(self) -> Site {
        Site(-self.0, -self.1, -self.2)
    }
}

/// The cube `Λ_{L,x} = { y : |x - y|_∞ ≤ L }` of side length `2L + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Site,
    pub radius: i64,
}

impl Cube {
    pub fn new(center: Site, radius: i64) -> Self {
        assert!(radius >= 0, "cube radius must be nonnegative");
        Cube { center, radius }
    }

    pub fn centered(radius: i64) -> Self {
        Cube::new(Site::ORIGIN, radius)
    }

    pub fn side(&self) -> i64 {
        2 * self.radius + 1
    }

    /// Number of lattice sites, `(2L+1)³`.
    pub fn cardinality(&self) -> usize {
        let s = self.side() as usize;
        s * s * s
    }

    pub fn contains(&self, site: &Site) -> bool {
        self.center.dist_sup(site) <= self.radius
    }

    /// Lexicographic site enumeration; the inverse of [`Cube::index_of`].
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::with_capacity(self.cardinality());
        let r = self.radius;
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    out.push(self.center + Site(dx, dy, dz));
                }
            }
        }
        out
    }

    /// Index of a site in the lexicographic enumeration.
    pub fn index_of(&self, site: &Site) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let s = self.side();
        let d = *site - self.center;
        let (ix, iy, iz) = (d.0 + self.radius, d.1 + self.radius, d.2 + self.radius);
        Some(((ix * s + iy) * s + iz) as usize)
    }

    pub fn site_at(&self, index: usize) -> Site {
        let s = self.side();
        let iz = index as i64 % s;
        let iy = (index as i64 / s) % s;
        let ix = index as i64 / (s * s);
        self.center + Site(ix - self.radius, iy - self.radius, iz - self.radius)
    }

    /// Interior boundary: sites of the cube with a nearest neighbor outside.
    /// For `L ≥ 1` this is the full surface shell; for `L = 0` it is the
    /// single center site.
    pub fn boundary(&self) -> Vec<Site> {
        self.sites()
            .into_iter()
            .filter(|s| s.neighbors().iter().any(|n| !self.contains(n)))
            .collect()
    }
}

/// A momentum on the torus `T³ = [-1/2, 1/2]³`; all arithmetic is reduced
/// modulo 1 into the fundamental domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Momentum(pub f64, pub f64, pub f64);

fn reduce_mod1(x: f64) -> f64 {
    // wrap into [-1/2, 1/2]
    let y = x - x.round();
    if y == -0.5 {
        0.5
    } else {
        y
    }
}

impl Momentum {
    pub fn new(p1: f64, p2: f64, p3: f64) -> Self {
        Momentum(reduce_mod1(p1), reduce_mod1(p2), reduce_mod1(p3))
    }

    pub fn components(&self) -> [f64; 3] {
        [self.0, self.1, self.2]
    }

    pub fn add(&self, other: &Momentum) -> Momentum {
        Momentum::new(self.0 + other.0, self.1 + other.1, self.2 + other.2)
    }

    pub fn neg(&self) -> Momentum {
        Momentum::new(-self.0, -self.1, -self.2)
    }

    /// Phase `e^{i 2π p·w}` for a lattice offset `w`.
    pub fn phase(&self, w: &Site) -> Complex64 {
        let arg = 2.0
            * std::f64::consts::PI
            * (self.0 * w.0 as f64 + self.1 * w.1 as f64 + self.2 * w.2 as f64);
        Complex64::from_polar(1.0, arg)
    }
}

/// Dispersion relation of `-Δ/2`: `e(p) = 2 Σ_α sin²(π p_α)`, range `[0, 6]`.
pub fn dispersion(p: &Momentum) -> f64 {
    let s1 = (std::f64::consts::PI * p.0).sin();
    let s2 = (std::f64::consts::PI * p.1).sin();
    let s3 = (std::f64::consts::PI * p.2).sin();
    2.0 * (s1 * s1 + s2 * s2 + s3 * s3)
}

/// One-dimensional dispersion `2 sin²(π t)`; handy for separable sums.
pub fn dispersion_1d(t: f64) -> f64 {
    let s = (std::f64::consts::PI * t).sin();
    2.0 * s * s
}

/// Uniform torus grid with `M` points per axis, shifted by half a cell:
/// the nodes are `(j + 1/2)/M - 1/2`, never sampling `p = 0` exactly.
/// Weights are `1/M³` and sum to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub points_per_axis: usize,
}

impl TorusGrid {
    pub fn new(points_per_axis: usize) -> Self {
        assert!(points_per_axis > 0, "grid must have at least one point");
        TorusGrid { points_per_axis }
    }

    /// Default resolution: 6+ correct digits for smooth negative-energy
    /// integrands at desk-scale runtime.
    pub const DEFAULT_M: usize = 128;

    pub fn default_grid() -> Self {
        TorusGrid::new(Self::DEFAULT_M)
    }

    pub fn weight(&self) -> f64 {
        let m = self.points_per_axis as f64;
        1.0 / (m * m * m)
    }

    /// The j-th node coordinate along one axis.
    pub fn node(&self, j: usize) -> f64 {
        let m = self.points_per_axis as f64;
        (j as f64 + 0.5) / m - 0.5
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.points_per_axis).map(|j| self.node(j)).collect()
    }

    /// The refinement ladder `M, 2M, 4M, ...` used by convergence checks.
    pub fn refine(&self) -> TorusGrid {
        TorusGrid::new(2 * self.points_per_axis)
    }

    /// Refinement ladder starting at this grid with `levels` entries.
    pub fn ladder(&self, levels: usize) -> Vec<TorusGrid> {
        let mut grids = Vec::with_capacity(levels);
        let mut g = *self;
        for _ in 0..levels {
            grids.push(g);
            g = g.refine();
        }
        grids
    }
}

/// Kahan compensated accumulator for complex values.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: Complex64,
    c: Complex64,
}

impl Kahan {
    fn add(&mut self, x: Complex64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// Uniform-weight Riemann sum of `f` over the shifted torus grid.
///
/// Exact for trigonometric polynomials of per-axis degree `< M`. The sum is
/// compensated per grid slice and the slices are reduced in a fixed order,
/// so the result is independent of the worker count. Non-finite integrand
/// values are a domain error naming the offending node.
pub fn torus_quadrature<F>(f: F, grid: &TorusGrid) -> Result<Complex64>
where
    F: Fn(&Momentum) -> Complex64 + Sync,
{
    let m = grid.points_per_axis;
    let nodes = grid.nodes();
    let slices: Vec<Result<Complex64>> = (0..m)
        .into_par_iter()
        .map(|j1| {
            let p1 = nodes[j1];
            let mut acc = Kahan::default();
            for &p2 in &nodes {
                for &p3 in &nodes {
                    let p = Momentum(p1, p2, p3);
                    let v = f(&p);
                    if !v.re.is_finite() || !v.im.is_finite() {
                        return Err(Error::NonFiniteIntegrand(p1, p2, p3));
                    }
                    acc.add(v);
                }
            }
            Ok(acc.sum)
        })
        .collect();
    let mut total = Kahan::default();
    for s in slices {
        total.add(s?);
    }
    Ok(total.sum * grid.weight())
}

/// Real-part convenience wrapper for real integrands.
pub fn torus_quadrature_real<F>(f: F, grid: &TorusGrid) -> Result<f64>
where
    F: Fn(&Momentum) -> f64 + Sync,
{
    torus_quadrature(|p| Complex64::new(f(p), 0.0), grid).map(|v| v.re)
}

/// Successive-refinement differences `|I(M_k) - I(M_{k+1})|` along a ladder.
/// Convergence checks assert these differences shrink (within a slack
/// factor) and fall below a target.
pub fn refinement_differences<F>(f: F, base: &TorusGrid, levels: usize) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&Momentum) -> f64 + Sync,
{
    let grids = base.ladder(levels);
    let mut values = Vec::with_capacity(levels);
    for g in &grids {
        values.push(torus_quadrature_real(&f, g)?);
    }
    let diffs = values.windows(2).map(|w| (w[0] - w[1]).abs()).collect();
    Ok((values, diffs))
}
