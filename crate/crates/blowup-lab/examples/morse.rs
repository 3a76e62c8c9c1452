//! Morse index bookkeeping and the finite-difference reduced Hessian at a
//! constructed single bubble, with and without residual mass.

use blowup_lab::balance::{curvature_index, morse_index, reduced_hessian, solve_reduced, ReducedOptions};
use blowup_lab::sphere::{manufactured_curvature, QuadratureRule, ScalarField, SpherePoint};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 7;
    let y = SpherePoint::basis(n, 0);
    for (bubbles, index_omega, indices, mass) in [(1, 0, vec![7], true), (2, 3, vec![7, 5], true), (2, 0, vec![6, 4], false)] {
        println!("N = {bubbles}, index(omega) = {index_omega}, index(K) = {indices:?}, residual mass {mass}: {}", morse_index(bubbles, index_omega, &indices, n, mass)?);
    }
    let omega = ScalarField::zonal_polynomial(y.clone(), vec![2.95, -3.2, 1.25]);
    let cases = [("no residual mass", ScalarField::zero(n), ScalarField::zonal_polynomial(y.clone(), vec![1.0, 0.3])), ("residual mass", omega.clone(), manufactured_curvature(&omega)?)];
    for (label, w, k) in cases {
        let s = solve_reduced(1e-3, &[y.clone()], &w, &k, None, &ReducedOptions::default())?;
        let h = reduced_hessian(&s.configuration, &QuadratureRule::zonal(), 1e-3, 0.05)?;
        println!("\n{label}: index(K, pole) = {}", curvature_index(&k, &y));
        println!("  coordinates {:?}", h.labels);
        println!("  gluing eigenvalues {:?}", h.gluing_eigenvalues);
        println!("  rate eigenvalues   {:?}", h.rate_eigenvalues);
        println!("  signature as predicted: {}", h.signature_ok());
    }
    Ok(())
}
