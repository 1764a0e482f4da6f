//! The stopping-rule resolvent expansion and its combinatorics.
//!
//! Expanding the resolvent `R = (H - E - iε)⁻¹` around the renormalized
//! propagator `R_r = (H_r - E - iε)⁻¹`, `H = H_r + Ṽ` with
//! `Ṽ = λV + Σ`, produces strings `R_r θ R_r θ ... R_r` where each factor
//! `θ` is either `-λV` (order 1) or the self-energy bullet `-Σ`
//! (order 2). Terms are grouped by total order: the stopping rule halts
//! each branch by order, not by factor count, giving the exact operator
//! identity `R = Σ_{l<N} A_l + Ã_N R` verified here as finite-box matrix
//! algebra to float noise.
//!
//! The disorder average of `|A_l|²` is organized by even-block set
//! partitions of the index set `Υ_N`; adjacent-index pair blocks
//! (tadpoles) cancel exactly against the self-energy bullets, which is
//! checked in exact rational arithmetic.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Ratio;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::lattice::{Cube, Site};
use crate::linalg::{operator_norm, BandMatrix};
use crate::potential::{alloy_potential, DisorderDensity, DisorderSample, SingleSitePotential};
use crate::rng;
use crate::selfenergy::MatrixSelfEnergy;

/// Hard cap on the expansion order (term count grows like a Fibonacci
/// sequence; matrix work grows with it).
pub const MAX_ORDER: u32 = 12;
/// Hard cap on the partition index `N` (`|Υ_N| = 2N`; even-block
/// partition counts grow super-exponentially).
pub const MAX_PARTITION_N: u32 = 6;
/// Hard cap for the exhaustive cancellation check.
pub const MAX_CANCELLATION_N: u32 = 4;

/// One factor of an expansion term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tag {
    /// `-λ V_ω`, order 1.
    V,
    /// `-Σ` (a bullet), order 2.
    B,
}

/// An expansion term: an ordered factor string with its λ-order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub tags: Vec<Tag>,
}

impl Term {
    pub fn order(&self) -> u32 {
        self.tags
            .iter()
            .map(|t| match t {
                Tag::V => 1,
                Tag::B => 2,
            })
            .sum()
    }

    pub fn label(&self) -> String {
        self.tags
            .iter()
            .map(|t| match t {
                Tag::V => 'V',
                Tag::B => 'B',
            })
            .collect()
    }
}

/// All factor strings of total order exactly `l`, in lexicographic order
/// (V before B). Counts satisfy `T(l) = T(l-1) + T(l-2)` with
/// `T(1) = 1, T(2) = 2`.
pub fn enumerate_terms(order: u32) -> Result<Vec<Term>> {
    if order > MAX_ORDER {
        return Err(Error::GuardExceeded(format!(
            "expansion order {order} exceeds the cap {MAX_ORDER}"
        )));
    }
    fn rec(order: u32) -> Vec<Vec<Tag>> {
        match order {
            0 => vec![vec![]],
            1 => vec![vec![Tag::V]],
            _ => {
                let mut out = Vec::new();
                for t in rec(order - 1) {
                    let mut s = vec![Tag::V];
                    s.extend(t);
                    out.push(s);
                }
                for t in rec(order - 2) {
                    let mut s = vec![Tag::B];
                    s.extend(t);
                    out.push(s);
                }
                out
            }
        }
    }
    Ok(rec(order).into_iter().map(|tags| Term { tags }).collect())
}

/// The self-energy insertion on a finite box.
#[derive(Debug, Clone)]
pub enum BoxSigma {
    /// No renormalization (`σ = 0`).
    None,
    /// Scalar case: the convolution kernel `Σ(x, y) = c_{y-x}` truncated
    /// to the box.
    Scalar(BTreeMap<Site, Complex64>),
    /// Non-overlapping case: the block kernel of the periodic extension.
    Matrix(MatrixSelfEnergy),
}

impl BoxSigma {
    pub fn kernel(&self, x: &Site, y: &Site) -> Complex64 {
        match self {
            BoxSigma::None => Complex64::zero(),
            BoxSigma::Scalar(coeffs) => coeffs
                .get(&(*y - *x))
                .copied()
                .unwrap_or_else(Complex64::zero),
            BoxSigma::Matrix(m) => m.kernel(x, y),
        }
    }

    /// Convolution mass dropped by the box compression:
    /// `max_x Σ_{y ∉ box} |Σ(x, y)|`. The box algebra itself stays exact;
    /// this reports how far the compressed insertion is from the
    /// infinite-volume operator.
    pub fn dropped_mass(&self, cube: &Cube) -> f64 {
        match self {
            BoxSigma::None => 0.0,
            BoxSigma::Scalar(coeffs) => {
                let mut worst = 0.0f64;
                for x in cube.sites() {
                    let mut dropped = 0.0;
                    for (k, c) in coeffs {
                        if !cube.contains(&(x + *k)) {
                            dropped += c.norm();
                        }
                    }
                    worst = worst.max(dropped);
                }
                worst
            }
            BoxSigma::Matrix(m) => {
                let mut worst = 0.0f64;
                for x in cube.sites() {
                    let (i, l) = (m.geometry.reduce(&x).0, m.geometry.reduce(&x).1);
                    let mut dropped = 0.0;
                    for (j, cs) in m.geometry.cell.iter().enumerate() {
                        let y = *cs + l;
                        if !cube.contains(&y) {
                            dropped += m.matrix[(i, j)].norm();
                        }
                    }
                    worst = worst.max(dropped);
                }
                worst
            }
        }
    }
}

/// Dense operator blocks of the expansion on one finite box: the
/// truncated Hamiltonian split `H = H_r + (λV + Σ)` and both resolvents.
/// Everything is exact matrix algebra on the box.
#[derive(Debug, Clone)]
pub struct BoxOperators {
    pub cube: Cube,
    pub lambda: f64,
    pub energy: f64,
    pub epsilon: f64,
    pub v_diag: Vec<f64>,
    pub sigma: DMatrix<Complex64>,
    pub h_r: DMatrix<Complex64>,
    pub r_r: DMatrix<Complex64>,
    pub r_full: DMatrix<Complex64>,
    pub sigma_dropped_mass: f64,
}

fn laplacian_half(cube: &Cube) -> DMatrix<f64> {
    let n = cube.cardinality();
    let sites = cube.sites();
    let mut m = DMatrix::zeros(n, n);
    for (i, s) in sites.iter().enumerate() {
        m[(i, i)] = 3.0;
        for nb in s.neighbors() {
            if let Some(j) = cube.index_of(&nb) {
                m[(i, j)] = -0.5;
            }
        }
    }
    m
}

pub fn build_box_operators(
    cube: Cube,
    lambda: f64,
    energy: f64,
    epsilon: f64,
    u: &SingleSitePotential,
    sample: &DisorderSample,
    sigma: &BoxSigma,
) -> Result<BoxOperators> {
    let n = cube.cardinality();
    let sites = cube.sites();
    let mut v_diag = Vec::with_capacity(n);
    for s in &sites {
        v_diag.push(alloy_potential(sample, u, s)?);
    }
    let lap = laplacian_half(&cube).map(|v| Complex64::new(v, 0.0));
    let mut sig = DMatrix::from_element(n, n, Complex64::zero());
    for (i, x) in sites.iter().enumerate() {
        for (j, y) in sites.iter().enumerate() {
            sig[(i, j)] = sigma.kernel(x, y);
        }
    }
    let z = Complex64::new(energy, epsilon);
    let h_r = &lap - &sig;
    let mut h_full = lap.clone();
    for (i, &v) in v_diag.iter().enumerate() {
        h_full[(i, i)] += Complex64::new(lambda * v, 0.0);
    }
    let eye = DMatrix::identity(n, n);
    let r_r = (h_r.clone() - &eye * z)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("singular renormalized resolvent on the box".into()))?;
    let r_full = (h_full - &eye * z)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("singular resolvent on the box".into()))?;
    Ok(BoxOperators {
        cube,
        lambda,
        energy,
        epsilon,
        v_diag,
        sigma_dropped_mass: sigma.dropped_mass(&cube),
        sigma: sig,
        h_r,
        r_r,
        r_full,
    })
}

impl BoxOperators {
    fn theta(&self, tag: Tag) -> DMatrix<Complex64> {
        let n = self.cube.cardinality();
        match tag {
            Tag::V => {
                let mut m = DMatrix::from_element(n, n, Complex64::zero());
                for (i, &v) in self.v_diag.iter().enumerate() {
                    m[(i, i)] = Complex64::new(-self.lambda * v, 0.0);
                }
                m
            }
            Tag::B => -self.sigma.clone(),
        }
    }

    /// `A'_l`: sum over order-`l` strings of `R_r θ₁ R_r θ₂ ... R_r θ_m`
    /// (signs inside the `θ`s); `A'_0 = I`.
    pub fn a_prime(&self, order: u32) -> Result<DMatrix<Complex64>> {
        let n = self.cube.cardinality();
        if order == 0 {
            return Ok(DMatrix::identity(n, n));
        }
        let mut total = DMatrix::from_element(n, n, Complex64::zero());
        for term in enumerate_terms(order)? {
            let mut m = self.r_r.clone() * self.theta(term.tags[0]);
            for &tag in &term.tags[1..] {
                m = m * &self.r_r * self.theta(tag);
            }
            total += m;
        }
        Ok(total)
    }

    /// `A_l = A'_l R_r`; `A_0 = R_r`.
    pub fn a_matrix(&self, order: u32) -> Result<DMatrix<Complex64>> {
        Ok(self.a_prime(order)? * &self.r_r)
    }

    /// `B_N = -A_{N-1} Σ`.
    pub fn b_matrix(&self, n: u32) -> Result<DMatrix<Complex64>> {
        assert!(n >= 1);
        Ok(-(self.a_matrix(n - 1)? * &self.sigma))
    }

    /// `Ã_N = A'_N + B_N`.
    pub fn a_tilde(&self, n: u32) -> Result<DMatrix<Complex64>> {
        Ok(self.a_prime(n)? + self.b_matrix(n)?)
    }

    /// Alternative assembly `Ã_N = A_N (H_r - E - iε) - A_{N-1} Σ`; must
    /// agree with [`BoxOperators::a_tilde`] to rounding.
    pub fn a_tilde_via_hr(&self, n: u32) -> Result<DMatrix<Complex64>> {
        let z = Complex64::new(self.energy, self.epsilon);
        let dim = self.cube.cardinality();
        let shifted = &self.h_r - DMatrix::identity(dim, dim) * z;
        Ok(self.a_matrix(n)? * shifted - self.a_matrix(n - 1)? * &self.sigma)
    }
}

/// Operator-norm residual of the telescoping identity
/// `R = Σ_{l=0}^{N-1} A_l + Ã_N R` on the box. The identity is exact
/// algebra; the residual is floating-point noise.
pub fn telescoping_check(ops: &BoxOperators, n: u32) -> Result<f64> {
    let dim = ops.cube.cardinality();
    let mut acc = DMatrix::from_element(dim, dim, Complex64::zero());
    for l in 0..n {
        acc += ops.a_matrix(l)?;
    }
    acc += ops.a_tilde(n)? * &ops.r_full;
    Ok(operator_norm(&(&ops.r_full - acc)))
}

/// The five-term second-order display, reproduced term by term:
/// `R = R_r - R_r Σ R - λ R_r V R_r + λ R_r V R_r Σ R + λ² R_r V R_r V R`.
/// Returns the per-term operator norms and the residual.
pub fn n2_display_check(ops: &BoxOperators) -> Result<(Vec<f64>, f64)> {
    let dim = ops.cube.cardinality();
    let v = {
        let mut m = DMatrix::from_element(dim, dim, Complex64::zero());
        for (i, &x) in ops.v_diag.iter().enumerate() {
            m[(i, i)] = Complex64::new(x, 0.0);
        }
        m
    };
    let l = Complex64::new(ops.lambda, 0.0);
    let t1 = ops.r_r.clone();
    let t2 = -(&ops.r_r * &ops.sigma * &ops.r_full);
    let t3 = -(&ops.r_r * &v * &ops.r_r) * l;
    let t4 = (&ops.r_r * &v * &ops.r_r * &ops.sigma * &ops.r_full) * l;
    let t5 = (&ops.r_r * &v * &ops.r_r * &v * &ops.r_full) * l * l;
    let sum = &t1 + &t2 + &t3 + &t4 + &t5;
    let residual = operator_norm(&(&ops.r_full - sum));
    let norms = [&t1, &t2, &t3, &t4, &t5]
        .iter()
        .map(|m| operator_norm(m))
        .collect();
    Ok((norms, residual))
}

/// The index set `Υ_N = {1, ..., N, N+2, ..., 2N+1}`.
pub fn upsilon(n: u32) -> Vec<u32> {
    (1..=n).chain(n + 2..=2 * n + 1).collect()
}

/// A partition of an index set into even-cardinality blocks. Blocks are
/// sorted internally and between each other, so equal partitions compare
/// equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Partition {
    pub blocks: Vec<Vec<u32>>,
}

impl Partition {
    /// A tadpole (gate) block is an adjacent-index pair `{i, i+1}`.
    pub fn is_tadpole(block: &[u32]) -> bool {
        block.len() == 2 && block[1] == block[0] + 1
    }

    pub fn tadpole_flags(&self) -> Vec<bool> {
        self.blocks.iter().map(|b| Self::is_tadpole(b)).collect()
    }

    pub fn is_tadpole_free(&self) -> bool {
        !self.blocks.iter().any(|b| Self::is_tadpole(b))
    }

    pub fn transcript(&self) -> String {
        let parts: Vec<String> = self
            .blocks
            .iter()
            .map(|b| {
                let inner: Vec<String> = b.iter().map(u32::to_string).collect();
                let tag = if Self::is_tadpole(b) { "*" } else { "" };
                format!("{{{}}}{tag}", inner.join(","))
            })
            .collect();
        parts.join(" ")
    }
}

/// All partitions of `elements` into even-size blocks, deduplicated up to
/// block order, in a deterministic order.
pub fn enumerate_even_partitions(elements: &[u32]) -> Vec<Partition> {
    fn rec(remaining: &[u32], acc: &mut Vec<Vec<u32>>, out: &mut Vec<Partition>) {
        if remaining.is_empty() {
            out.push(Partition { blocks: acc.clone() });
            return;
        }
        let first = remaining[0];
        let rest = &remaining[1..];
        // choose an odd number of partners for `first`
        let mut partners_count = 1;
        while partners_count <= rest.len() {
            let mut choice = vec![0usize; partners_count];
            for (i, c) in choice.iter_mut().enumerate() {
                *c = i;
            }
            loop {
                let mut block = vec![first];
                block.extend(choice.iter().map(|&i| rest[i]));
                let next: Vec<u32> = rest
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !choice.contains(i))
                    .map(|(_, &v)| v)
                    .collect();
                acc.push(block);
                rec(&next, acc, out);
                acc.pop();
                // next combination
                let mut i = partners_count;
                loop {
                    if i == 0 {
                        break;
                    }
                    i -= 1;
                    if choice[i] < rest.len() - (partners_count - i) {
                        choice[i] += 1;
                        for j in i + 1..partners_count {
                            choice[j] = choice[j - 1] + 1;
                        }
                        break;
                    }
                    if i == 0 {
                        choice.clear();
                        break;
                    }
                }
                if choice.is_empty() {
                    break;
                }
            }
            partners_count += 2;
        }
    }
    let mut out = Vec::new();
    let mut acc = Vec::new();
    rec(elements, &mut acc, &mut out);
    out
}

/// Even-block partitions of `Υ_N` with the combinatorial guard.
pub fn enumerate_partitions(n: u32) -> Result<Vec<Partition>> {
    if n == 0 || n > MAX_PARTITION_N {
        return Err(Error::GuardExceeded(format!(
            "partition index must be in 1..={MAX_PARTITION_N}, got {n}"
        )));
    }
    Ok(enumerate_even_partitions(&upsilon(n)))
}

/// Arithmetic the moment/cumulant machinery runs over: exact rationals
/// for preset densities, floats otherwise.
pub trait MomentScalar:
    Clone
    + PartialEq
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + Zero
    + One
{
}

impl MomentScalar for f64 {}
impl MomentScalar for Ratio<i64> {}

/// Even-moment table `m_2, m_4, ..., m_{2 l_max}` of a disorder density.
#[derive(Debug, Clone)]
pub struct Moments<T: MomentScalar> {
    even: Vec<T>,
}

impl<T: MomentScalar> Moments<T> {
    pub fn new(even: Vec<T>) -> Self {
        Moments { even }
    }

    /// `E[ω^k]`: zero for odd `k`, table lookup for even `k`.
    pub fn moment(&self, k: usize) -> T {
        if k == 0 {
            return T::one();
        }
        if k % 2 == 1 {
            return T::zero();
        }
        self.even[k / 2 - 1].clone()
    }

    pub fn l_max(&self) -> usize {
        self.even.len()
    }
}

/// Exact rational moments of the unit-variance uniform density.
pub fn uniform_rational_moments(l_max: u32) -> Moments<Ratio<i64>> {
    Moments::new(
        DisorderDensity::uniform()
            .rational_moments(l_max)
            .expect("uniform density has exact moments"),
    )
}

/// Cumulants `c_{2l}` obtained by inverting the moment identity
/// `m_{2l} = Σ_{even partitions π of a 2l-set} Π_j c_{|S_j|}`
/// at fully coincident indices. `c_2 = m_2 = 1` under the unit-variance
/// normalization.
#[derive(Debug, Clone)]
pub struct CumulantTable<T: MomentScalar> {
    /// `c_2, c_4, ..., c_{2 l_max}`.
    pub cumulants: Vec<T>,
}

impl<T: MomentScalar> CumulantTable<T> {
    pub fn cumulant(&self, k: usize) -> T {
        if k == 0 || k % 2 == 1 {
            return T::zero();
        }
        self.cumulants[k / 2 - 1].clone()
    }
}

impl CumulantTable<f64> {
    /// The growth constant: smallest `c` with `|c_{2l}| ≤ (c·l)^{2l+1}`
    /// over the table; reported, then checked, never assumed.
    pub fn growth_constant(&self) -> f64 {
        self.cumulants
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let l = (i + 1) as f64;
                c.abs().powf(1.0 / (2.0 * l + 1.0)) / l
            })
            .fold(0.0, f64::max)
    }
}

pub fn cumulants_from_moments<T: MomentScalar>(moments: &Moments<T>) -> Result<CumulantTable<T>> {
    if moments.moment(2) != T::one() {
        return Err(Error::InvalidInput(
            "unit second moment required (m₂ = 1)".into(),
        ));
    }
    let l_max = moments.l_max();
    let mut cumulants: Vec<T> = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        let set: Vec<u32> = (1..=2 * l as u32).collect();
        let mut lower = T::zero();
        for p in enumerate_even_partitions(&set) {
            if p.blocks.len() == 1 {
                continue; // the c_{2l} term itself
            }
            let mut prod = T::one();
            for b in &p.blocks {
                let idx = b.len() / 2 - 1;
                if idx >= cumulants.len() {
                    prod = T::zero();
                    break;
                }
                prod = prod * cumulants[idx].clone();
            }
            lower = lower + prod;
        }
        cumulants.push(moments.moment(2 * l) - lower);
    }
    Ok(CumulantTable { cumulants })
}

/// `E[Π_{i∈S} ω_{x_i}]` for a coincidence pattern: group indices by
/// position, multiply the class moments (odd classes vanish by symmetry).
pub fn joint_moment<T: MomentScalar>(
    indices: &[u32],
    positions: &BTreeMap<u32, Site>,
    moments: &Moments<T>,
) -> T {
    let mut classes: BTreeMap<Site, usize> = BTreeMap::new();
    for i in indices {
        *classes.entry(positions[i]).or_insert(0) += 1;
    }
    let mut prod = T::one();
    for (_, count) in classes {
        prod = prod * moments.moment(count);
    }
    prod
}

/// `δ(x_S)`: 1 when all positions in the block coincide.
fn delta_block(indices: &[u32], positions: &BTreeMap<u32, Site>) -> bool {
    indices
        .windows(2)
        .all(|w| positions[&w[0]] == positions[&w[1]])
}

/// Partition-sum prediction of the joint moment:
/// `Σ_{even π} Π_j c_{|S_j|} δ(x_{S_j})`.
pub fn tree_graph_prediction<T: MomentScalar>(
    n: u32,
    positions: &BTreeMap<u32, Site>,
    cumulants: &CumulantTable<T>,
) -> Result<T> {
    let mut total = T::zero();
    for p in enumerate_partitions(n)? {
        let mut prod = T::one();
        for b in &p.blocks {
            if !delta_block(b, positions) {
                prod = T::zero();
                break;
            }
            prod = prod * cumulants.cumulant(b.len());
        }
        total = total + prod;
    }
    Ok(total)
}

/// All collections of pairwise disjoint tadpole pairs inside `Υ_N`
/// (including the empty collection).
fn tadpole_collections(n: u32) -> Vec<Vec<(u32, u32)>> {
    let elems = upsilon(n);
    let present: std::collections::BTreeSet<u32> = elems.iter().copied().collect();
    let candidates: Vec<(u32, u32)> = elems
        .iter()
        .filter(|&&i| present.contains(&(i + 1)))
        .map(|&i| (i, i + 1))
        .collect();
    let mut out = vec![vec![]];
    fn rec(
        candidates: &[(u32, u32)],
        start: usize,
        used: &mut Vec<(u32, u32)>,
        out: &mut Vec<Vec<(u32, u32)>>,
    ) {
        for idx in start..candidates.len() {
            let c = candidates[idx];
            if used
                .iter()
                .any(|u| u.0 == c.0 || u.0 == c.1 || u.1 == c.0 || u.1 == c.1)
            {
                continue;
            }
            used.push(c);
            out.push(used.clone());
            rec(candidates, idx + 1, used, out);
            used.pop();
        }
    }
    let mut used = Vec::new();
    rec(&candidates, 0, &mut used, &mut out);
    out
}

/// Evaluate both sides of the cancellation identity at a coincidence
/// pattern:
///
/// - left: `Σ_k (-1)^k Σ_{k disjoint tadpoles} E[Π_{i∈S} ω_{x_i}] Π δ`,
///   where `S` is the complement of the chosen tadpoles;
/// - right: `Σ_{tadpole-free even π} Π_j c_{|S_j|} δ(x_{S_j})`.
///
/// With exact rational moments the two sides must be identical.
pub fn tadpole_cancellation_check<T: MomentScalar>(
    n: u32,
    positions: &BTreeMap<u32, Site>,
    moments: &Moments<T>,
) -> Result<(T, T)> {
    if n == 0 || n > MAX_CANCELLATION_N {
        return Err(Error::GuardExceeded(format!(
            "cancellation check capped at N = {MAX_CANCELLATION_N}, got {n}"
        )));
    }
    let elems = upsilon(n);
    let cumulants = cumulants_from_moments(moments)?;

    let mut lhs = T::zero();
    for collection in tadpole_collections(n) {
        // δ factors of the chosen tadpoles
        if !collection
            .iter()
            .all(|&(a, b)| positions[&a] == positions[&b])
        {
            continue;
        }
        let used: std::collections::BTreeSet<u32> = collection
            .iter()
            .flat_map(|&(a, b)| [a, b])
            .collect();
        let rest: Vec<u32> = elems.iter().copied().filter(|i| !used.contains(i)).collect();
        let term = joint_moment(&rest, positions, moments);
        if collection.len() % 2 == 0 {
            lhs = lhs + term;
        } else {
            lhs = lhs - term;
        }
    }

    let mut rhs = T::zero();
    for p in enumerate_partitions(n)? {
        if !p.is_tadpole_free() {
            continue;
        }
        let mut prod = T::one();
        for b in &p.blocks {
            if !delta_block(b, positions) {
                prod = T::zero();
                break;
            }
            prod = prod * cumulants.cumulant(b.len());
        }
        rhs = rhs + prod;
    }
    Ok((lhs, rhs))
}

/// Monte Carlo estimate of `E|A_l(x, y)|²` over disorder samples.
///
/// The renormalized resolvent is factored once (it does not depend on the
/// sample); each sample then assembles the order-`l` terms by banded
/// solves. The same per-sample seeds serve every requested pair (common
/// random numbers), which the paired comparisons rely on.
#[derive(Debug, Clone, Serialize)]
pub struct McMomentEstimate {
    pub pair: ((i64, i64, i64), (i64, i64, i64)),
    pub mean_sq: f64,
    pub stderr: f64,
    pub samples: usize,
}

pub struct McMomentConfig<'a> {
    pub cube: Cube,
    pub lambda: f64,
    pub energy: f64,
    pub epsilon: f64,
    pub order: u32,
    pub potential: &'a SingleSitePotential,
    pub density: &'a DisorderDensity,
    pub sigma: &'a BoxSigma,
    pub samples: usize,
    pub seed: u64,
}

pub fn mc_moment_a(cfg: &McMomentConfig, pairs: &[(Site, Site)]) -> Result<Vec<McMomentEstimate>> {
    if cfg.samples < 100 {
        return Err(Error::InvalidInput(
            "Monte Carlo moment estimation needs ≥ 100 samples".into(),
        ));
    }
    let cube = cfg.cube;
    let n = cube.cardinality();
    let sites = cube.sites();
    let side = cube.side() as usize;
    let bw = side * side;
    let z = Complex64::new(cfg.energy, cfg.epsilon);

    // banded H_r − z, factored once
    let mut hr = BandMatrix::<Complex64>::zeros(n, bw);
    for (i, s) in sites.iter().enumerate() {
        hr.set(i, i, Complex64::new(3.0, 0.0) - z);
        for nb in s.neighbors() {
            if let Some(j) = cube.index_of(&nb) {
                if j < i {
                    hr.set(i, j, Complex64::new(-0.5, 0.0));
                }
            }
        }
    }
    for (i, x) in sites.iter().enumerate() {
        for (j, y) in sites.iter().enumerate() {
            if j > i {
                continue;
            }
            let v = cfg.sigma.kernel(x, y);
            if v != Complex64::zero() {
                if i - j > bw {
                    return Err(Error::InvalidInput(
                        "self-energy kernel exceeds the box bandwidth".into(),
                    ));
                }
                hr.add_to(i, j, -v);
            }
        }
    }
    let fact = hr.ldlt()?;
    let terms = enumerate_terms(cfg.order)?;

    // deterministic per-sample accumulation, one column chain per distinct y
    let mut ys: Vec<Site> = Vec::new();
    for (_, y) in pairs {
        if !ys.contains(y) {
            ys.push(*y);
        }
    }
    let mut sums = vec![0.0f64; pairs.len()];
    let mut sums_sq = vec![0.0f64; pairs.len()];

    // order 0: deterministic, A_0 = R_r
    if cfg.order == 0 {
        let mut out = Vec::new();
        for (x, y) in pairs {
            let mut col = vec![Complex64::zero(); n];
            col[cube.index_of(y).unwrap()] = Complex64::one();
            fact.solve_in_place(&mut col);
            let v = col[cube.index_of(x).unwrap()].norm_sqr();
            out.push(McMomentEstimate {
                pair: ((x.0, x.1, x.2), (y.0, y.1, y.2)),
                mean_sq: v,
                stderr: 0.0,
                samples: cfg.samples,
            });
        }
        return Ok(out);
    }

    for sample_idx in 0..cfg.samples {
        let seed = rng::stream_seed(cfg.seed, sample_idx as u64);
        let sample = crate::potential::sample_disorder(cfg.density, &cube, cfg.potential, seed);
        let mut v_diag = Vec::with_capacity(n);
        for s in &sites {
            v_diag.push(alloy_potential(&sample, cfg.potential, s)?);
        }
        let mut columns: BTreeMap<Site, Vec<Complex64>> = BTreeMap::new();
        for y in &ys {
            let mut acc = vec![Complex64::zero(); n];
            for term in &terms {
                let mut t = vec![Complex64::zero(); n];
                t[cube.index_of(y).unwrap()] = Complex64::one();
                fact.solve_in_place(&mut t);
                // apply factors right to left: A e_y = R_r θ₁ ... θ_m R_r e_y
                for &tag in term.tags.iter().rev() {
                    match tag {
                        Tag::V => {
                            for (i, tv) in t.iter_mut().enumerate() {
                                *tv *= Complex64::new(-cfg.lambda * v_diag[i], 0.0);
                            }
                        }
                        Tag::B => {
                            let mut out = vec![Complex64::zero(); n];
                            for (i, x) in sites.iter().enumerate() {
                                for (j, yy) in sites.iter().enumerate() {
                                    let k = cfg.sigma.kernel(x, yy);
                                    if k != Complex64::zero() {
                                        out[i] -= k * t[j];
                                    }
                                }
                            }
                            t = out;
                        }
                    }
                    fact.solve_in_place(&mut t);
                }
                for (a, b) in acc.iter_mut().zip(&t) {
                    *a += b;
                }
            }
            columns.insert(*y, acc);
        }
        for (pi, (x, y)) in pairs.iter().enumerate() {
            let col = &columns[y];
            let val = col[cube.index_of(x).unwrap()].norm_sqr();
            sums[pi] += val;
            sums_sq[pi] += val * val;
        }
    }

    let mut out = Vec::new();
    for (pi, (x, y)) in pairs.iter().enumerate() {
        let m = sums[pi] / cfg.samples as f64;
        let var = (sums_sq[pi] / cfg.samples as f64 - m * m).max(0.0);
        out.push(McMomentEstimate {
            pair: ((x.0, x.1, x.2), (y.0, y.1, y.2)),
            mean_sq: m,
            stderr: (var / cfg.samples as f64).sqrt(),
            samples: cfg.samples,
        });
    }
    Ok(out)
}
