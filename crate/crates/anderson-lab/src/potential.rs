//! Single-site potentials, disorder densities, and disorder sampling.
//!
//! Three single-site profiles are supported: exponentially decaying
//! profiles on the full lattice (overlapping translates, period `(1,1,1)`),
//! compactly supported profiles whose translates by a period lattice
//! `kZ³` never overlap, and the mean-zero dipole `u(0) = 1, u(e₁) = -1`.
//!
//! Disorder couplings are i.i.d. draws from an even, compactly supported
//! density with unit second moment (enforced by rescaling the support at
//! construction). Sampling is inverse-CDF on a counter-based generator
//! keyed by `(master seed, site)`, so a sample is a pure function of its
//! seed record: order-independent, parallel-safe, reproducible bit-for-bit.

use std::collections::BTreeMap;

use num_complex::Complex64;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Cube, Momentum, Site};
use crate::rng;

/// Truncation threshold for exponentially decaying profiles: the stored
/// support radius is the smallest `r` with `C e^{-A r}` below this.
pub const OVERLAP_TRUNCATION: f64 = 1e-12;

/// A single-site potential profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SingleSitePotential {
    /// Exponentially decaying profile with `|u(x)| ≤ C e^{-A|x|}`,
    /// truncated at a stored radius; period `(1,1,1)`.
    Overlapping {
        values: BTreeMap<Site, f64>,
        decay_c: f64,
        decay_a: f64,
        truncation_radius: i64,
    },
    /// Compactly supported profile on `Θ` inside a primitive cell `Θ̂`
    /// whose translates by `kZ³` tile the lattice.
    NonOverlapping {
        support: BTreeMap<Site, f64>,
        period: [i64; 3],
        cell: Vec<Site>,
    },
    /// The dipole: `u(0) = 1`, `u(e₁) = -1`; mean-zero (`û(0) = 0`).
    Dipole,
}

impl SingleSitePotential {
    /// Kronecker delta profile; the plain Anderson model.
    pub fn kronecker_delta() -> Self {
        let mut values = BTreeMap::new();
        values.insert(Site::ORIGIN, 1.0);
        SingleSitePotential::Overlapping {
            values,
            decay_c: 1.0,
            decay_a: 1.0,
            truncation_radius: 0,
        }
    }

    /// Exponentially decaying profile from a closure, truncated where the
    /// envelope `C e^{-A|x|}` drops below [`OVERLAP_TRUNCATION`].
    pub fn overlapping<F>(profile: F, decay_c: f64, decay_a: f64) -> Result<Self>
    where
        F: Fn(&Site) -> f64,
    {
        if decay_a <= 0.0 || decay_c <= 0.0 {
            return Err(Error::InvalidInput(
                "overlapping profile needs positive decay constants".into(),
            ));
        }
        let radius = ((OVERLAP_TRUNCATION / decay_c).ln() / -decay_a).ceil().max(0.0) as i64;
        let mut values = BTreeMap::new();
        let cube = Cube::centered(radius);
        for s in cube.sites() {
            let v = profile(&s);
            if v != 0.0 {
                let envelope = decay_c * (-decay_a * s.norm_euclid()).exp();
                if v.abs() > envelope * (1.0 + 1e-12) {
                    return Err(Error::InvalidInput(format!(
                        "profile violates its decay envelope at ({}, {}, {})",
                        s.0, s.1, s.2
                    )));
                }
                values.insert(s, v);
            }
        }
        Ok(SingleSitePotential::Overlapping {
            values,
            decay_c,
            decay_a,
            truncation_radius: radius,
        })
    }

    /// Non-overlapping profile. `support` lives inside the primitive cell
    /// `cell`; translates of `cell` by the period lattice must tile `Z³`
    /// and translates of the support must be pairwise disjoint (checked
    /// constructively out to twice the cell diameter).
    pub fn non_overlapping(
        support: BTreeMap<Site, f64>,
        period: [i64; 3],
        cell: Vec<Site>,
    ) -> Result<Self> {
        if period.iter().any(|&k| k <= 0) {
            return Err(Error::InvalidInput("period components must be positive".into()));
        }
        let n = (period[0] * period[1] * period[2]) as usize;
        if cell.len() != n {
            return Err(Error::InvalidInput(format!(
                "cell has {} sites but the period lattice has index {n}",
                cell.len()
            )));
        }
        // tiling check: cell residues mod k must be pairwise distinct
        let mut residues = std::collections::BTreeSet::new();
        for s in &cell {
            let r = (
                s.0.rem_euclid(period[0]),
                s.1.rem_euclid(period[1]),
                s.2.rem_euclid(period[2]),
            );
            if !residues.insert(r) {
                return Err(Error::InvalidInput(
                    "cell residues collide: translates cannot tile the lattice".into(),
                ));
            }
        }
        for s in support.keys() {
            if !cell.contains(s) {
                return Err(Error::InvalidInput(
                    "support must be contained in the primitive cell".into(),
                ));
            }
        }
        // explicit non-overlap check for |i|_∞ up to twice the cell diameter
        let diam = cell
            .iter()
            .flat_map(|a| cell.iter().map(move |b| a.dist_sup(b)))
            .max()
            .unwrap_or(0);
        let reach = 2 * diam.max(1);
        for z1 in -reach..=reach {
            for z2 in -reach..=reach {
                for z3 in -reach..=reach {
                    let i = Site(z1 * period[0], z2 * period[1], z3 * period[2]);
                    if i == Site::ORIGIN {
                        continue;
                    }
                    for s in support.keys() {
                        if support.contains_key(&(*s - i)) {
                            return Err(Error::InvalidInput(
                                "support translates overlap".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(SingleSitePotential::NonOverlapping {
            support,
            period,
            cell,
        })
    }

    /// Period vector `k` of the translate lattice `kZ³`.
    pub fn period(&self) -> [i64; 3] {
        match self {
            SingleSitePotential::NonOverlapping { period, .. } => *period,
            _ => [1, 1, 1],
        }
    }

    pub fn value(&self, site: &Site) -> f64 {
        match self {
            SingleSitePotential::Overlapping { values, .. } => {
                values.get(site).copied().unwrap_or(0.0)
            }
            SingleSitePotential::NonOverlapping { support, .. } => {
                support.get(site).copied().unwrap_or(0.0)
            }
            SingleSitePotential::Dipole => match site {
                Site(0, 0, 0) => 1.0,
                Site(1, 0, 0) => -1.0,
                _ => 0.0,
            },
        }
    }

    /// Sites where the (stored) profile is nonzero.
    pub fn support(&self) -> Vec<Site> {
        match self {
            SingleSitePotential::Overlapping { values, .. } => values.keys().copied().collect(),
            SingleSitePotential::NonOverlapping { support, .. } => {
                support.keys().copied().collect()
            }
            SingleSitePotential::Dipole => vec![Site(0, 0, 0), Site(1, 0, 0)],
        }
    }

    /// `‖u‖_∞` over the profile.
    pub fn max_abs(&self) -> f64 {
        self.support()
            .iter()
            .map(|s| self.value(s).abs())
            .fold(0.0, f64::max)
    }

    /// Fourier transform `û(p) = Σ_n e^{-i2π p·n} u(n)` over the stored
    /// support. Unsupported for the non-overlapping variant, which goes
    /// through the cell-matrix route instead.
    pub fn u_hat(&self, p: &Momentum) -> Result<Complex64> {
        match self {
            SingleSitePotential::NonOverlapping { .. } => Err(Error::UnsupportedVariant(
                "û is not used for non-overlapping potentials; use the cell matrix D".into(),
            )),
            _ => {
                let mut sum = Complex64::new(0.0, 0.0);
                for s in self.support() {
                    sum += p.phase(&s).conj() * self.value(&s);
                }
                Ok(sum)
            }
        }
    }

    /// `‖û‖_∞`: exact for the delta and dipole profiles, measured on a
    /// fine grid otherwise (an `ℓ¹` bound caps the error).
    pub fn u_hat_sup(&self) -> Result<f64> {
        match self {
            SingleSitePotential::NonOverlapping { .. } => Err(Error::UnsupportedVariant(
                "û is not used for non-overlapping potentials".into(),
            )),
            SingleSitePotential::Dipole => Ok(2.0),
            SingleSitePotential::Overlapping { values, .. } => {
                if values.len() == 1 && values.contains_key(&Site::ORIGIN) {
                    return Ok(values[&Site::ORIGIN].abs());
                }
                let m = 64;
                let mut best: f64 = 0.0;
                for j1 in 0..m {
                    for j2 in 0..m {
                        for j3 in 0..m {
                            let p = Momentum::new(
                                j1 as f64 / m as f64 - 0.5,
                                j2 as f64 / m as f64 - 0.5,
                                j3 as f64 / m as f64 - 0.5,
                            );
                            let v = self.u_hat(&p).unwrap().norm();
                            best = best.max(v);
                        }
                    }
                }
                Ok(best)
            }
        }
    }

    /// `ℓ¹` norm of the profile; a rigorous upper bound for `‖û‖_∞`.
    pub fn l1_norm(&self) -> f64 {
        self.support().iter().map(|s| self.value(s).abs()).sum()
    }

    /// Primitive cell (`Θ̂`) for the non-overlapping variant.
    pub fn cell(&self) -> Option<&[Site]> {
        match self {
            SingleSitePotential::NonOverlapping { cell, .. } => Some(cell),
            _ => None,
        }
    }

    /// ℓ¹ diameter of the primitive cell; enters the non-overlapping
    /// energy threshold through the single-step Green-function ratio bound.
    pub fn cell_diameter_l1(&self) -> i64 {
        match self.cell() {
            Some(cell) => cell
                .iter()
                .flat_map(|a| cell.iter().map(move |b| a.dist_l1(b)))
                .max()
                .unwrap_or(0),
            None => 0,
        }
    }
}

/// One linear segment of a piecewise-linear density.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinearPiece {
    lo: f64,
    hi: f64,
    v_lo: f64,
    v_hi: f64,
}

impl LinearPiece {
    fn eval(&self, x: f64) -> f64 {
        let t = (x - self.lo) / (self.hi - self.lo);
        self.v_lo + t * (self.v_hi - self.v_lo)
    }
    fn mass(&self) -> f64 {
        0.5 * (self.v_lo + self.v_hi) * (self.hi - self.lo)
    }
    fn second_moment(&self) -> f64 {
        // ∫ x² ρ(x) dx on [lo, hi] for the linear interpolant
        let (a, b) = (self.lo, self.hi);
        let h = b - a;
        let slope = (self.v_hi - self.v_lo) / h;
        let c0 = self.v_lo - slope * a;
        c0 * (b.powi(3) - a.powi(3)) / 3.0 + slope * (b.powi(4) - a.powi(4)) / 4.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
enum DensityForm {
    /// Constant on `[-hw, hw]`.
    Uniform,
    /// `(1 + cos(π x / hw)) / (2 hw)`.
    RaisedCosine,
    /// `c |x|^{1/2}` on `[-hw, hw]`; Hölder exponent 1/2.
    SqrtBump,
    /// Even piecewise-linear density given on `[0, hw]`.
    PiecewiseLinear { pieces: Vec<LinearPiece> },
}

/// An even, compactly supported disorder density with unit second moment.
///
/// The support half-width is fixed at construction by rescaling so that
/// `∫ x² ρ = 1`; the Hölder data `(α, K)` certifies
/// `|ρ(x) - ρ(y)| ≤ K |x - y|^α` for `x, y` inside the support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisorderDensity {
    form: DensityForm,
    half_width: f64,
    holder_alpha: f64,
    holder_const: f64,
}

impl DisorderDensity {
    /// Uniform density on `[-√3, √3]` (unit variance).
    pub fn uniform() -> Self {
        DisorderDensity {
            form: DensityForm::Uniform,
            half_width: 3f64.sqrt(),
            holder_alpha: 1.0,
            holder_const: 0.0,
        }
    }

    /// Raised-cosine density, rescaled to unit variance.
    pub fn raised_cosine() -> Self {
        let s = 1.0 / (1.0 / 3.0 - 2.0 / (std::f64::consts::PI * std::f64::consts::PI)).sqrt();
        DisorderDensity {
            form: DensityForm::RaisedCosine,
            half_width: s,
            holder_alpha: 1.0,
            holder_const: std::f64::consts::PI / (2.0 * s * s),
        }
    }

    /// `ρ(x) = c |x|^{1/2}` on `[-√(7/3), √(7/3)]`: a genuinely
    /// `1/2`-Hölder density used to exercise the Lipschitz approximation.
    pub fn sqrt_bump() -> Self {
        let a = (7.0f64 / 3.0).sqrt();
        let c = 3.0 / (4.0 * a.powf(1.5));
        DisorderDensity {
            form: DensityForm::SqrtBump,
            half_width: a,
            holder_alpha: 0.5,
            holder_const: c,
        }
    }

    /// Even piecewise-linear density from nodes `(x, value)` on `[0, X]`
    /// (the even extension is implicit). The nodes are normalized to unit
    /// mass and the axis rescaled to unit second moment.
    pub fn piecewise_linear_even(nodes: &[(f64, f64)]) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidInput("need at least two density nodes".into()));
        }
        for w in nodes.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidInput("density nodes must be increasing in x".into()));
            }
        }
        if nodes[0].0 != 0.0 {
            return Err(Error::InvalidInput("first node must sit at x = 0".into()));
        }
        if nodes.iter().any(|&(_, v)| v < 0.0) {
            return Err(Error::InvalidInput("density values must be nonnegative".into()));
        }
        if nodes.last().unwrap().1 != 0.0 {
            return Err(Error::InvalidInput(
                "density must vanish at the support edge (Hölder continuity across ∂J)".into(),
            ));
        }
        let mut pieces: Vec<LinearPiece> = nodes
            .windows(2)
            .map(|w| LinearPiece {
                lo: w[0].0,
                hi: w[1].0,
                v_lo: w[0].1,
                v_hi: w[1].1,
            })
            .collect();
        // normalize mass (the even extension doubles the [0, X] mass)
        let mass: f64 = 2.0 * pieces.iter().map(LinearPiece::mass).sum::<f64>();
        if mass <= 0.0 {
            return Err(Error::InvalidInput("density has zero mass".into()));
        }
        for p in &mut pieces {
            p.v_lo /= mass;
            p.v_hi /= mass;
        }
        // rescale x so the second moment is 1: x → x/s with s² = ∫x²ρ
        let var: f64 = 2.0 * pieces.iter().map(LinearPiece::second_moment).sum::<f64>();
        let s = var.sqrt();
        for p in &mut pieces {
            p.lo /= s;
            p.hi /= s;
            p.v_lo *= s;
            p.v_hi *= s;
        }
        let half_width = pieces.last().unwrap().hi;
        let holder_const = pieces
            .iter()
            .map(|p| ((p.v_hi - p.v_lo) / (p.hi - p.lo)).abs())
            .fold(0.0, f64::max);
        Ok(DisorderDensity {
            form: DensityForm::PiecewiseLinear { pieces },
            half_width,
            holder_alpha: 1.0,
            holder_const,
        })
    }

    /// Wide-support Lipschitz preset for eigenvalue-count experiments: a
    /// central triangle plus small far triangles. The far mass creates
    /// single-site bound states below the free band at moderate coupling,
    /// so spectral windows at slightly negative energies have nonzero
    /// expected counts at desk-scale volumes (a narrow unit-variance
    /// density leaves them empty there).
    pub fn wegner_window() -> Self {
        let p = 0.015f64;
        let a = 7.0f64;
        let h = 1.0f64;
        let w = (6.0 * (1.0 - p * (a * a + h * h / 6.0)) / (1.0 - p)).sqrt();
        let center_height = (1.0 - p) / w;
        let far_height = (p / 2.0) / h;
        let nodes = [
            (0.0, center_height),
            (w, 0.0),
            (a - h, 0.0),
            (a, far_height),
            (a + h, 0.0),
        ];
        Self::piecewise_linear_even(&nodes).expect("preset nodes are valid")
    }

    /// Support interval `J = [-hw, hw]`.
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    /// Hölder data `(α, K)` valid inside the support.
    pub fn holder(&self) -> (f64, f64) {
        (self.holder_alpha, self.holder_const)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let hw = self.half_width;
        if x.abs() > hw {
            return 0.0;
        }
        match &self.form {
            DensityForm::Uniform => 0.5 / hw,
            DensityForm::RaisedCosine => {
                (1.0 + (std::f64::consts::PI * x / hw).cos()) / (2.0 * hw)
            }
            DensityForm::SqrtBump => self.holder_const * x.abs().sqrt(),
            DensityForm::PiecewiseLinear { pieces } => {
                let ax = x.abs();
                for p in pieces {
                    if ax <= p.hi {
                        return p.eval(ax);
                    }
                }
                0.0
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let hw = self.half_width;
        if x <= -hw {
            return 0.0;
        }
        if x >= hw {
            return 1.0;
        }
        match &self.form {
            DensityForm::Uniform => 0.5 + 0.5 * x / hw,
            DensityForm::RaisedCosine => {
                0.5 + x / (2.0 * hw)
                    + (std::f64::consts::PI * x / hw).sin() / (2.0 * std::f64::consts::PI)
            }
            DensityForm::SqrtBump => {
                let half = self.holder_const * (2.0 / 3.0) * x.abs().powf(1.5);
                if x >= 0.0 {
                    0.5 + half
                } else {
                    0.5 - half
                }
            }
            DensityForm::PiecewiseLinear { pieces } => {
                let ax = x.abs();
                let mut acc = 0.0;
                for p in pieces {
                    if ax >= p.hi {
                        acc += p.mass();
                    } else if ax > p.lo {
                        let v = p.eval(ax);
                        acc += 0.5 * (p.v_lo + v) * (ax - p.lo);
                        break;
                    } else {
                        break;
                    }
                }
                if x >= 0.0 {
                    0.5 + acc
                } else {
                    0.5 - acc
                }
            }
        }
    }

    /// Inverse CDF; exact where a closed form exists, safeguarded
    /// Newton/bisection otherwise. Deterministic.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0 - 1e-16);
        let hw = self.half_width;
        match &self.form {
            DensityForm::Uniform => (2.0 * u - 1.0) * hw,
            DensityForm::SqrtBump => {
                let half = (u - 0.5).abs();
                let mag = (3.0 * half / (2.0 * self.holder_const)).powf(2.0 / 3.0);
                if u >= 0.5 {
                    mag.min(hw)
                } else {
                    (-mag).max(-hw)
                }
            }
            _ => {
                // monotone CDF: bisection to a short bracket, Newton to finish
                let (mut lo, mut hi) = (-hw, hw);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-13 * hw.max(1.0) {
                        break;
                    }
                }
                let mut x = 0.5 * (lo + hi);
                for _ in 0..4 {
                    let d = self.pdf(x);
                    if d > 1e-12 {
                        let step = (self.cdf(x) - u) / d;
                        x = (x - step).clamp(lo, hi);
                    }
                }
                x
            }
        }
    }

    /// Even moment `E[ω^{2l}]`.
    pub fn moment(&self, order: u32) -> f64 {
        assert!(order % 2 == 0, "odd moments vanish by symmetry");
        let hw = self.half_width;
        match &self.form {
            DensityForm::Uniform => hw.powi(order as i32) / (order as f64 + 1.0),
            DensityForm::SqrtBump => {
                2.0 * self.holder_const * hw.powf(order as f64 + 1.5) / (order as f64 + 1.5)
            }
            _ => {
                // composite Simpson on [0, hw], doubled by symmetry
                let n = 20_000usize;
                let h = hw / n as f64;
                let f = |x: f64| x.powi(order as i32) * self.pdf(x);
                let mut s = f(0.0) + f(hw);
                for i in 1..n {
                    let x = i as f64 * h;
                    s += f(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
                }
                2.0 * s * h / 3.0
            }
        }
    }

    /// Exact rational even moments `m_2, m_4, ..., m_{2 l_max}` where the
    /// preset admits them (the uniform density: `m_{2l} = 3^l / (2l+1)`).
    pub fn rational_moments(&self, l_max: u32) -> Option<Vec<Ratio<i64>>> {
        match self.form {
            DensityForm::Uniform => Some(
                (1..=l_max)
                    .map(|l| Ratio::new(3i64.pow(l), 2 * l as i64 + 1))
                    .collect(),
            ),
            _ => None,
        }
    }
}

/// Seed record of a disorder sample: regenerating from it reproduces the
/// sample bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
}

/// An i.i.d. disorder draw `{ω_i}` on the period lattice sites covering a
/// region.
#[derive(Debug, Clone)]
pub struct DisorderSample {
    couplings: BTreeMap<Site, f64>,
    pub seed: SeedRecord,
}

impl DisorderSample {
    pub fn from_map(couplings: BTreeMap<Site, f64>) -> Self {
        DisorderSample {
            couplings,
            seed: SeedRecord { master: 0 },
        }
    }

    pub fn get(&self, site: &Site) -> Option<f64> {
        self.couplings.get(site).copied()
    }

    pub fn len(&self) -> usize {
        self.couplings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.couplings.is_empty()
    }

    pub fn sites(&self) -> impl Iterator<Item = (&Site, &f64)> {
        self.couplings.iter()
    }
}

/// Draw one i.i.d. coupling per site of `kZ³` whose translate of the
/// profile support can touch `region`. Every coupling is the pure function
/// `inverse_cdf(uniform(master, site))` of its seed and site, so disjoint
/// site ranges can be generated concurrently with identical results.
pub fn sample_disorder(
    density: &DisorderDensity,
    region: &Cube,
    potential: &SingleSitePotential,
    master_seed: u64,
) -> DisorderSample {
    let period = potential.period();
    let support = potential.support();
    if support.is_empty() {
        return DisorderSample {
            couplings: BTreeMap::new(),
            seed: SeedRecord { master: master_seed },
        };
    }
    let (mut smin, mut smax) = ([i64::MAX; 3], [i64::MIN; 3]);
    for s in &support {
        let c = s.coords();
        for a in 0..3 {
            smin[a] = smin[a].min(c[a]);
            smax[a] = smax[a].max(c[a]);
        }
    }
    let lo = [
        region.center.0 - region.radius - smax[0],
        region.center.1 - region.radius - smax[1],
        region.center.2 - region.radius - smax[2],
    ];
    let hi = [
        region.center.0 + region.radius - smin[0],
        region.center.1 + region.radius - smin[1],
        region.center.2 + region.radius - smin[2],
    ];
    let first = |a: usize| {
        let q = lo[a].div_euclid(period[a]);
        if q * period[a] >= lo[a] {
            q * period[a]
        } else {
            (q + 1) * period[a]
        }
    };
    let mut couplings = BTreeMap::new();
    let mut x = first(0);
    while x <= hi[0] {
        let mut y = first(1);
        while y <= hi[1] {
            let mut z = first(2);
            while z <= hi[2] {
                let site = Site(x, y, z);
                let u = rng::site_uniform(master_seed, [x, y, z]);
                couplings.insert(site, density.inverse_cdf(u));
                z += period[2];
            }
            y += period[1];
        }
        x += period[0];
    }
    DisorderSample {
        couplings,
        seed: SeedRecord { master: master_seed },
    }
}

/// The alloy potential `V_ω(x) = Σ_{i ∈ kZ³} ω_i u(x - i)`, evaluated over
/// the stored support. Missing couplings with nonzero coefficient are an
/// error, never silently zero.
pub fn alloy_potential(
    sample: &DisorderSample,
    potential: &SingleSitePotential,
    x: &Site,
) -> Result<f64> {
    let period = potential.period();
    let mut v = 0.0;
    for s in potential.support() {
        let i = *x - s;
        if i.0.rem_euclid(period[0]) != 0
            || i.1.rem_euclid(period[1]) != 0
            || i.2.rem_euclid(period[2]) != 0
        {
            continue;
        }
        let coeff = potential.value(&s);
        if coeff == 0.0 {
            continue;
        }
        match sample.get(&i) {
            Some(w) => v += w * coeff,
            None => return Err(Error::IncompleteSample(i.0, i.1, i.2)),
        }
    }
    Ok(v)
}
