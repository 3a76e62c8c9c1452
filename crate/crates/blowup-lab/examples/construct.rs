//! Two bubbles on 1 + 0.3 cos²θ, built from the reduced system along a τ-sweep
//! and checked against the rate law, the box and the energy limit.

use blowup_lab::balance::{limiting_energy, predicted_lambda, solve_reduced, verify_blowup, ReducedOptions, VerifyOptions};
use blowup_lab::functional::{energy, SphereFunction};
use blowup_lab::sphere::{QuadratureRule, ScalarField, SpherePoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let north = SpherePoint::basis(n, 0);
    let targets = vec![north.clone(), north.antipode()];
    let k = ScalarField::zonal_polynomial(north, vec![1.0, 0.0, 0.3]);
    let omega = ScalarField::zero(n);
    let mut family = Vec::new();
    println!("{:>8} {:>10} {:>10} {:>8} {:>5} {:>10} {:>10}", "tau", "lambda", "predicted", "iters", "box", "energy", "limit");
    for tau in [1e-2, 3e-3, 1e-3, 3e-4, 1e-4] {
        let s = solve_reduced(tau, &targets, &omega, &k, None, &ReducedOptions::default())?;
        let cfg = &s.configuration;
        let e = energy(cfg, &k, tau, &QuadratureRule::for_centers(&cfg.centers()))?.value;
        println!(
            "{tau:>8.0e} {:>10.3} {:>10.3} {:>8} {:>5} {e:>10.3} {:>10.3}",
            cfg.bubbles[0].bubble.lambda,
            predicted_lambda(tau, &targets[0], &k)?,
            s.log.len(),
            s.box_check.inside,
            limiting_energy(cfg)?
        );
        family.push((tau, s.configuration));
    }
    let report = verify_blowup(&family, &VerifyOptions::default())?;
    for (name, v) in [("concentration", &report.concentration), ("separation", &report.separation), ("rate law", &report.rate_law)] {
        println!("{name}: {} ({})", v.passed, v.detail);
    }
    Ok(())
}
