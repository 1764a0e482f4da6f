//! Even-block partitions, cumulant inversion, and the exact cancellation
//! of tadpole contributions, in rational arithmetic.
//!
//! ```bash
//! cargo run --release --example tadpole_cancellation
//! ```

use std::collections::BTreeMap;

use anderson_lab::expansion::{
    cumulants_from_moments, enumerate_partitions, tadpole_cancellation_check,
    uniform_rational_moments, upsilon,
};
use anderson_lab::lattice::Site;

fn main() -> anderson_lab::Result<()> {
    println!("index set Υ_2 = {:?}", upsilon(2));
    println!("even-block partitions (tadpoles marked *):");
    for p in enumerate_partitions(2)? {
        println!("  {}", p.transcript());
    }
    for n in [3u32, 4, 5, 6] {
        println!("|partitions of Υ_{n}| = {}", enumerate_partitions(n)?.len());
    }

    let moments = uniform_rational_moments(4);
    let c = cumulants_from_moments(&moments)?;
    println!("\ncumulants of the unit-variance uniform density:");
    for l in 1..=4 {
        println!("  c_{} = {}", 2 * l, c.cumulant(2 * l));
    }

    println!("\ncancellation identity at N = 2 coincidence patterns:");
    let cases: [(&str, Vec<(u32, Site)>); 3] = [
        (
            "all distinct",
            vec![
                (1, Site(0, 0, 0)),
                (2, Site(2, 0, 0)),
                (4, Site(4, 0, 0)),
                (5, Site(6, 0, 0)),
            ],
        ),
        (
            "x1 = x4, x2 = x5",
            vec![
                (1, Site(0, 0, 0)),
                (2, Site(2, 0, 0)),
                (4, Site(0, 0, 0)),
                (5, Site(2, 0, 0)),
            ],
        ),
        (
            "tadpole x1 = x2, x4 = x5",
            vec![
                (1, Site(0, 0, 0)),
                (2, Site(0, 0, 0)),
                (4, Site(2, 0, 0)),
                (5, Site(2, 0, 0)),
            ],
        ),
    ];
    for (label, pattern) in cases {
        let positions: BTreeMap<u32, Site> = pattern.into_iter().collect();
        let (lhs, rhs) = tadpole_cancellation_check(2, &positions, &moments)?;
        println!("  {label:<24} lhs = {lhs:>5}  rhs = {rhs:>5}  equal = {}", lhs == rhs);
    }
    Ok(())
}
