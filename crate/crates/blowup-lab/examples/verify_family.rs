//! The blow-up verdict on a constructed single-bubble family, and on the same
//! family with λ frozen at its first value (which must fail concentration).

use blowup_lab::balance::{solve_reduced, verify_blowup, ReducedOptions, VerifyOptions};
use blowup_lab::sphere::{ScalarField, SpherePoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let y = SpherePoint::basis(n, 0);
    let k = ScalarField::zonal_polynomial(y.clone(), vec![1.0, 0.3]);
    let mut family = Vec::new();
    for tau in [1e-2, 5e-3, 2e-3, 1e-3, 5e-4] {
        let s = solve_reduced(tau, &[y.clone()], &ScalarField::zero(n), &k, None, &ReducedOptions::default())?;
        family.push((tau, s.configuration));
    }
    let mut frozen = family.clone();
    let first = frozen[0].1.bubbles[0].bubble.lambda;
    for (_, cfg) in frozen.iter_mut() {
        cfg.bubbles[0].bubble.lambda = first;
    }
    for (label, fam) in [("constructed", &family), ("frozen", &frozen)] {
        let r = verify_blowup(fam, &VerifyOptions::default())?;
        println!("{label}:");
        for (name, v) in [("concentration", &r.concentration), ("localisation", &r.localisation), ("separation", &r.separation), ("rate law", &r.rate_law)] {
            println!("  {name:<14} {:<5} {}", v.passed, v.detail);
        }
    }
    Ok(())
}
