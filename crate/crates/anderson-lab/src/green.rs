//! Free and renormalized lattice Green functions.
//!
//! The free Green function is the momentum integral
//! `G_E(x, y) = ∫_{T³} e^{i2π(x-y)·p} / (e(p) - E) d³p` for `E < 0`; the
//! renormalized kernel replaces the denominator by
//! `e(p) - E - iε - σ(p)`. One quadrature scheme serves both: the
//! denominator is tabulated on the shifted torus grid and all offsets are
//! read off a single 3D FFT. On the discrete grid the defining relation
//! `(-Δ/2 - E) G = δ₀` holds to rounding, so identity checks test the
//! quadrature and the algebra jointly.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{dispersion, torus_quadrature, Cube, Momentum, Site, TorusGrid};

/// Minimum admissible `|e(p) - E - iε - σ(p)|` on the grid before the
/// kernel is declared ill-conditioned.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Tabulated Green kernel: offsets `|w|_∞ ≤ radius` of a translation
/// invariant kernel at one energy. Immutable after construction.
#[derive(Debug, Clone)]
pub struct GreenTable {
    pub energy: f64,
    pub epsilon: f64,
    pub grid_m: usize,
    radius: i64,
    values: Vec<Complex64>,
}

impl GreenTable {
    /// Free-kernel table at `E < 0`.
    pub fn free(energy: f64, grid: &TorusGrid, radius: i64) -> Result<GreenTable> {
        if energy >= 0.0 {
            return Err(Error::InadmissibleEnergy(format!(
                "free Green function needs E < 0, got {energy}"
            )));
        }
        Self::from_symbol(|p| Complex64::new(dispersion(p) - energy, 0.0), energy, 0.0, grid, radius)
    }

    /// Table for a general scalar symbol `denom(p)`; the kernel value is
    /// `∫ e^{i2πw·p} / denom(p) d³p` evaluated on the shifted grid.
    pub fn from_symbol<F>(
        denom: F,
        energy: f64,
        epsilon: f64,
        grid: &TorusGrid,
        radius: i64,
    ) -> Result<GreenTable>
    where
        F: Fn(&Momentum) -> Complex64 + Sync,
    {
        let m = grid.points_per_axis;
        let nodes = grid.nodes();
        let mut data = vec![Complex64::new(0.0, 0.0); m * m * m];
        for j1 in 0..m {
            for j2 in 0..m {
                let base = (j1 * m + j2) * m;
                for j3 in 0..m {
                    let p = Momentum(nodes[j1], nodes[j2], nodes[j3]);
                    data[base + j3] = denom(&p);
                }
            }
        }
        Self::from_grid_values(data, energy, epsilon, grid, radius)
    }

    /// Table from denominator values already laid out on the grid (row
    /// major, axis order `(p₁, p₂, p₃)`).
    pub fn from_grid_values(
        mut data: Vec<Complex64>,
        energy: f64,
        epsilon: f64,
        grid: &TorusGrid,
        radius: i64,
    ) -> Result<GreenTable> {
        let m = grid.points_per_axis;
        if radius < 0 || 2 * radius as usize >= m {
            return Err(Error::InvalidInput(format!(
                "table radius {radius} does not fit in a grid with M = {m}"
            )));
        }
        if data.len() != m * m * m {
            return Err(Error::InvalidInput(
                "denominator grid has the wrong size".into(),
            ));
        }
        let nodes = grid.nodes();
        let mut min_abs = f64::INFINITY;
        let mut min_at = (0usize, 0usize, 0usize);
        for (idx, v) in data.iter().enumerate() {
            let a = v.norm();
            if !a.is_finite() {
                let j3 = idx % m;
                let j2 = (idx / m) % m;
                let j1 = idx / (m * m);
                return Err(Error::NonFiniteIntegrand(nodes[j1], nodes[j2], nodes[j3]));
            }
            if a < min_abs {
                min_abs = a;
                min_at = (idx / (m * m), (idx / m) % m, idx % m);
            }
        }
        if min_abs < DENOMINATOR_FLOOR {
            return Err(Error::Conditioning(format!(
                "kernel denominator reaches {min_abs:.3e} near p = ({}, {}, {})",
                nodes[min_at.0], nodes[min_at.1], nodes[min_at.2]
            )));
        }
        for v in data.iter_mut() {
            *v = v.inv();
        }
        fft3_inverse(&mut data, m);

        // phase for the half-cell grid shift, then read off the offsets
        let phase_1d: Vec<Complex64> = (-radius..=radius)
            .map(|w| {
                Complex64::from_polar(
                    1.0,
                    std::f64::consts::PI * w as f64 * (1.0 / m as f64 - 1.0),
                )
            })
            .collect();
        let side = (2 * radius + 1) as usize;
        let mut values = vec![Complex64::new(0.0, 0.0); side * side * side];
        let weight = grid.weight();
        for (i1, w1) in (-radius..=radius).enumerate() {
            for (i2, w2) in (-radius..=radius).enumerate() {
                for (i3, w3) in (-radius..=radius).enumerate() {
                    let k1 = (w1.rem_euclid(m as i64)) as usize;
                    let k2 = (w2.rem_euclid(m as i64)) as usize;
                    let k3 = (w3.rem_euclid(m as i64)) as usize;
                    let raw = data[(k1 * m + k2) * m + k3];
                    values[(i1 * side + i2) * side + i3] =
                        raw * phase_1d[i1] * phase_1d[i2] * phase_1d[i3] * weight;
                }
            }
        }
        Ok(GreenTable {
            energy,
            epsilon,
            grid_m: m,
            radius,
            values,
        })
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    pub fn value(&self, w: &Site) -> Option<Complex64> {
        if w.norm_sup() > self.radius {
            return None;
        }
        let side = (2 * self.radius + 1) as usize;
        let i1 = (w.0 + self.radius) as usize;
        let i2 = (w.1 + self.radius) as usize;
        let i3 = (w.2 + self.radius) as usize;
        Some(self.values[(i1 * side + i2) * side + i3])
    }

    /// Real value with the parity certificate `|Im| < 1e-10`; free tables
    /// must satisfy it at every offset.
    pub fn real_value(&self, w: &Site) -> Result<f64> {
        let v = self
            .value(w)
            .ok_or_else(|| Error::InvalidInput(format!("offset {w:?} outside table radius")))?;
        if v.im.abs() >= 1e-10 {
            return Err(Error::Conditioning(format!(
                "kernel at {w:?} has imaginary part {:.3e}",
                v.im
            )));
        }
        Ok(v.re)
    }

    /// CSV export: `w1,w2,w3,re,im` rows in lexicographic offset order.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "w1,w2,w3,re,im")?;
        for w1 in -self.radius..=self.radius {
            for w2 in -self.radius..=self.radius {
                for w3 in -self.radius..=self.radius {
                    let v = self.value(&Site(w1, w2, w3)).unwrap();
                    writeln!(out, "{},{},{},{},{}", w1, w2, w3, v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

/// In-place unnormalized inverse DFT along all three axes of an `m³` cube.
fn fft3_inverse(data: &mut [Complex64], m: usize) {
    let mut planner = FftPlanner::new();
    let fft: Arc<dyn rustfft::Fft<f64>> = planner.plan_fft_inverse(m);
    // axis 2: contiguous rows
    for row in data.chunks_mut(m) {
        fft.process(row);
    }
    // axes 1 and 0: gather strided lines into a scratch buffer
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for j1 in 0..m {
        for j3 in 0..m {
            for j2 in 0..m {
                line[j2] = data[(j1 * m + j2) * m + j3];
            }
            fft.process(&mut line);
            for j2 in 0..m {
                data[(j1 * m + j2) * m + j3] = line[j2];
            }
        }
    }
    for j2 in 0..m {
        for j3 in 0..m {
            for j1 in 0..m {
                line[j1] = data[(j1 * m + j2) * m + j3];
            }
            fft.process(&mut line);
            for j1 in 0..m {
                data[(j1 * m + j2) * m + j3] = line[j1];
            }
        }
    }
}

/// Evaluate a finitely supported Fourier series
/// `σ(p) = Σ_k c_k e^{i2π p·k}` on every node of the shifted grid, laid
/// out row major in axis order `(p₁, p₂, p₃)`. One FFT regardless of the
/// number of coefficients.
pub fn coefficients_on_grid(
    coeffs: &BTreeMap<Site, Complex64>,
    grid: &TorusGrid,
) -> Result<Vec<Complex64>> {
    let m = grid.points_per_axis;
    let half = (m as i64 - 1) / 2;
    let mut data = vec![Complex64::new(0.0, 0.0); m * m * m];
    let phi = |k: i64| {
        Complex64::from_polar(1.0, std::f64::consts::PI * k as f64 * (1.0 / m as f64 - 1.0))
    };
    for (k, &c) in coeffs {
        if k.norm_sup() > half {
            return Err(Error::InvalidInput(format!(
                "coefficient offset {k:?} aliases on a grid with M = {m}"
            )));
        }
        let i1 = k.0.rem_euclid(m as i64) as usize;
        let i2 = k.1.rem_euclid(m as i64) as usize;
        let i3 = k.2.rem_euclid(m as i64) as usize;
        data[(i1 * m + i2) * m + i3] += c * phi(k.0) * phi(k.1) * phi(k.2);
    }
    fft3_inverse(&mut data, m);
    Ok(data)
}

/// Single-offset free Green value by direct torus quadrature; the FFT
/// table reproduces it to rounding. Positivity and the vanishing of the
/// imaginary part are certified.
pub fn free_green(energy: f64, w: &Site, grid: &TorusGrid) -> Result<f64> {
    if energy >= 0.0 {
        return Err(Error::InadmissibleEnergy(format!(
            "free Green function needs E < 0, got {energy}"
        )));
    }
    let v = torus_quadrature(
        |p| p.phase(w) / Complex64::new(dispersion(p) - energy, 0.0),
        grid,
    )?;
    if v.im.abs() >= 1e-10 {
        return Err(Error::Conditioning(format!(
            "free Green imaginary part {:.3e} fails the parity check",
            v.im
        )));
    }
    if v.re <= 0.0 {
        return Err(Error::Conditioning(format!(
            "free Green value {:.3e} not positive at {w:?}",
            v.re
        )));
    }
    Ok(v.re)
}

/// The single-step ratio bound: for `w ≠ 0` and any unit vector `e`,
/// `1/(6-2E) < G_E(0,w)/G_E(0,w+e) < 6-2E`.
pub fn ratio_bound_check(table: &GreenTable, w: &Site, e: &Site) -> Result<bool> {
    if *w == Site::ORIGIN {
        return Err(Error::InvalidInput(
            "ratio bound excludes the pole site w = 0".into(),
        ));
    }
    if e.norm_sup() != 1 || e.dist_l1(&Site::ORIGIN) != 1 {
        return Err(Error::InvalidInput("e must be a unit lattice vector".into()));
    }
    let g_w = table.real_value(w)?;
    let g_we = table.real_value(&(*w + *e))?;
    let bound = 6.0 - 2.0 * table.energy;
    let ratio = g_w / g_we;
    Ok(ratio > 1.0 / bound && ratio < bound)
}

/// The decay envelope
/// `ψ_α(r) = e^{-r√(-E)/α} max((-E)^{(d-2)/2}, (1+r)^{2-d})`,
/// monotone nonincreasing in `r`.
pub fn psi_envelope(alpha: f64, energy: f64, r: f64, d: u32) -> f64 {
    assert!(d >= 3, "envelope defined for dimension ≥ 3");
    assert!(alpha > 0.0 && energy < 0.0 && r >= 0.0);
    let me = -energy;
    let exp_part = (-r * me.sqrt() / alpha).exp();
    let poly = me.powf((d as f64 - 2.0) / 2.0).max((1.0 + r).powi(2 - d as i32));
    exp_part * poly
}

/// Direct lattice sum `Σ_{x ∈ Z³} ψ_α(|x|)` truncated at Euclidean radius
/// `r_max`, using octant symmetry. Oracle for the `C·α/(-E)` scaling of
/// the envelope mass.
pub fn sum_psi_lattice(alpha: f64, energy: f64, r_max: f64) -> f64 {
    let rm = r_max.ceil() as i64;
    let mut total = 0.0;
    for x in 0..=rm {
        for y in 0..=rm {
            for z in 0..=rm {
                let r2 = (x * x + y * y + z * z) as f64;
                if r2 > r_max * r_max {
                    continue;
                }
                let mult = (1 << [x, y, z].iter().filter(|&&c| c != 0).count()) as f64;
                total += mult * psi_envelope(alpha, energy, r2.sqrt(), 3);
            }
        }
    }
    total
}

/// Result of an envelope comparison `G_E(0,w) ≤ C ψ_{3d}(|w|)`.
#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeReport {
    pub energy: f64,
    pub radius: i64,
    /// `sup_w G(0,w)/ψ(|w|)`, the measured envelope constant.
    pub worst_ratio: f64,
    pub attained_at: (i64, i64, i64),
    /// Worst ratio as a function of the cube radius; stability of the tail
    /// certifies the constant.
    pub by_radius: Vec<(i64, f64)>,
    pub min_green: f64,
}

/// Measure the envelope constant `C = sup_{|w|_∞ ≤ radius} G/ψ_{3d}` and
/// its stability under radius growth. All Green values must be positive.
pub fn envelope_check(energy: f64, radius: i64, grid: &TorusGrid) -> Result<EnvelopeReport> {
    let table = GreenTable::free(energy, grid, radius)?;
    let mut worst = 0.0f64;
    let mut attained = (0, 0, 0);
    let mut min_green = f64::INFINITY;
    let mut by_radius = Vec::new();
    for r in 1..=radius {
        let mut w_r = 0.0f64;
        let mut at_r = (0, 0, 0);
        for w in Cube::centered(r).sites() {
            let g = table.real_value(&w)?;
            min_green = min_green.min(g);
            let ratio = g / psi_envelope(9.0, energy, w.norm_euclid(), 3);
            if ratio > w_r {
                w_r = ratio;
                at_r = (w.0, w.1, w.2);
            }
        }
        by_radius.push((r, w_r));
        if w_r > worst {
            worst = w_r;
            attained = at_r;
        }
    }
    if min_green <= 0.0 {
        return Err(Error::Conditioning(format!(
            "free Green function not positive: min {min_green:.3e}"
        )));
    }
    Ok(EnvelopeReport {
        energy,
        radius,
        worst_ratio: worst,
        attained_at: attained,
        by_radius,
        min_green,
    })
}

/// An exponential decay fit `v ≈ prefactor · e^{-rate · r}` over a radial
/// range, with the RMS log-residual reported, never hidden.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub prefactor: f64,
    pub residual: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub points: usize,
}

/// Least-squares line through `(r, log v)` for the points with
/// `r_min ≤ r ≤ r_max`. Needs at least 5 points in range and positive
/// values.
pub fn decay_fit(values: &BTreeMap<Site, f64>, r_min: f64, r_max: f64) -> Result<DecayFit> {
    let mut pts = Vec::new();
    for (w, &v) in values {
        let r = w.norm_euclid();
        if r < r_min || r > r_max {
            continue;
        }
        if v <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "decay fit needs positive values; got {v} at {w:?}"
            )));
        }
        pts.push((r, v.ln()));
    }
    decay_fit_points(&pts, r_min, r_max)
}

/// Fit on prepared `(r, log v)` pairs.
pub fn decay_fit_points(pts: &[(f64, f64)], r_min: f64, r_max: f64) -> Result<DecayFit> {
    if pts.len() < 5 {
        return Err(Error::InvalidInput(format!(
            "decay fit needs ≥ 5 points in range, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-14 {
        return Err(Error::InvalidInput("degenerate abscissas in decay fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mut ss = 0.0;
    for (r, ly) in pts {
        let resid = ly - (intercept + slope * r);
        ss += resid * resid;
    }
    Ok(DecayFit {
        rate: -slope,
        prefactor: intercept.exp(),
        residual: (ss / n).sqrt(),
        r_min,
        r_max,
        points: pts.len(),
    })
}
