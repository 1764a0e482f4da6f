//! Free lattice Green function: defining relation, ratio bounds, decay
//! envelope, and an exponential fit.
//!
//! ```bash
//! cargo run --release --example green_decay
//! ```

use std::collections::BTreeMap;

use anderson_lab::green::{decay_fit, envelope_check, psi_envelope, ratio_bound_check, GreenTable};
use anderson_lab::lattice::{Cube, Site, TorusGrid};

fn main() -> anderson_lab::Result<()> {
    let grid = TorusGrid::new(128);

    println!("free Green function G_E(0, w) along the axis (M = 128)");
    println!("{:>6} {:>14} {:>14} {:>14}", "w", "E=-0.1", "E=-0.5", "E=-1.0");
    let tables: Vec<GreenTable> = [-0.1, -0.5, -1.0]
        .iter()
        .map(|&e| GreenTable::free(e, &grid, 8))
        .collect::<anderson_lab::Result<_>>()?;
    for r in 0..=8 {
        let w = Site(r, 0, 0);
        print!("{r:>6}");
        for t in &tables {
            print!(" {:>14.8e}", t.real_value(&w)?);
        }
        println!();
    }

    // the defining relation (-Δ/2 - E) G = δ₀ on the discrete grid
    let t = &tables[1];
    let ring: f64 = Site::ORIGIN
        .neighbors()
        .iter()
        .map(|e| t.real_value(e).unwrap())
        .sum();
    let lhs = (3.0 + 0.5) * t.real_value(&Site::ORIGIN)? - 0.5 * ring;
    println!("\ndefining relation at E = -0.5: (3-E)G(0) - ½ΣG(e) = {lhs:.12} (exact: 1)");

    // single-step ratio bound 1/(6-2E) < G(w)/G(w+e) < 6-2E
    let mut held = true;
    for w in Cube::centered(4).sites() {
        if w == Site::ORIGIN {
            continue;
        }
        for e in Site::ORIGIN.neighbors() {
            held &= ratio_bound_check(&tables[2], &w, &e)?;
        }
    }
    println!("ratio bound (1/8, 8) at E = -1 over |w|_∞ ≤ 4, six directions: held = {held}");

    // envelope constant C = sup G/ψ and its stability in the radius
    for &energy in &[-0.5, -0.1] {
        let rep = envelope_check(energy, 8, &grid)?;
        println!(
            "envelope at E = {energy}: C = {:.6} attained at {:?}, stable tail {:?}",
            rep.worst_ratio,
            rep.attained_at,
            &rep.by_radius[4..]
        );
        println!(
            "  ψ envelope at r = 4: {:.4e} vs G on the axis {:.4e}",
            rep.worst_ratio * psi_envelope(9.0, energy, 4.0, 3),
            GreenTable::free(energy, &grid, 4)?.real_value(&Site(4, 0, 0))?
        );
    }

    // exponential decay fit along the axis, lattice transients excluded
    let mut vals = BTreeMap::new();
    for r in 1..=8 {
        vals.insert(Site(r, 0, 0), tables[2].real_value(&Site(r, 0, 0))?);
    }
    let fit = decay_fit(&vals, 2.0, 8.0)?;
    println!(
        "\ndecay fit at E = -1 over r ∈ [2, 8]: rate {:.4}/site, prefactor {:.4}, log-RMS {:.2e}",
        fit.rate, fit.prefactor, fit.residual
    );
    Ok(())
}
