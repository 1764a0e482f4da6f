//! The dipole single-site potential: improved threshold, two-parameter
//! self energy, and the wall ground state against its closed form
//! `E_m = 1 - √(1 + 4λ²)`.
//!
//! ```bash
//! cargo run --release --example dipole_model
//! ```

use anderson_lab::hamiltonian::{dipole_slab_ground, dipole_wall_ground};
use anderson_lab::lattice::TorusGrid;
use anderson_lab::selfenergy::{solve_sigma_dipole, threshold_dipole};

fn main() -> anderson_lab::Result<()> {
    let lambda: f64 = 0.1;
    let e_d = threshold_dipole(lambda);
    println!("λ = {lambda}: dipole threshold E_d = {e_d:.6e} (vs -2λ² = {:.6e})", -2.0 * lambda * lambda);

    println!("\nself energy σ(p) = A + B sin²(π p₁) on an energy grid below E_d:");
    let grid = TorusGrid::new(128);
    for mult in [1.5, 2.0, 3.0, 4.0] {
        let energy = mult * e_d;
        let (sig, rep) = solve_sigma_dipole(lambda, energy, 0.0, &grid, 1e-12, 200, 0.2)?;
        println!(
            "  E = {energy:>10.6}: A = {:>12.6e}, B = {:>12.6e}, residual {:.1e}, |A|<λ²: {}, |B|<14λ²: {}",
            sig.a.re,
            sig.b.re,
            rep.residual,
            sig.a.norm() < lambda * lambda,
            sig.b.norm() < 14.0 * lambda * lambda
        );
    }

    println!("\nwall configuration (V = -2λ on the plane x·e₁ = 0):");
    for l in [0.05f64, 0.1, 0.2] {
        let (e_finite, e_exact) = dipole_wall_ground(l, 200)?;
        println!(
            "  λ = {l}: E_m exact = {e_exact:>12.8}, 1D chain (L=200) = {e_finite:>12.8}, -2λ² = {:>10.6}, |E_m + 2λ²| = {:.2e} ≤ 4λ⁴ = {:.2e}",
            -2.0 * l * l,
            (e_exact + 2.0 * l * l).abs(),
            4.0 * l.powi(4)
        );
    }

    println!("\n3D slab cross-check at L = 8:");
    let slab = dipole_slab_ground(lambda, 8)?;
    println!(
        "  fiber-decomposed slab bottom {:.8} vs 1D chain {:.8} (difference {:.1e})",
        slab.periodic_transverse,
        slab.one_d,
        (slab.periodic_transverse - slab.one_d).abs()
    );
    println!(
        "  full Dirichlet slab {:.8} = 1D + transverse zero-point {:.6}",
        slab.dirichlet,
        slab.dirichlet - slab.one_d
    );
    Ok(())
}
