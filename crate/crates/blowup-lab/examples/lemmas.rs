//! The bubble power expansion, the log-weighted decay rates and the empirical
//! constants of the elementary sum inequalities.

use blowup_lab::lemmas::{inequality_suite, power_lemma_suite};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let power = power_lemma_suite(7)?;
    println!("tau = 0 expansion error {:.1e}", power.exact_error);
    for e in &power.expansions {
        println!("expansion: max error {:.3e}, sharp ratio {:.4}", e.max_error, e.sharp_ratio);
    }
    for d in &power.decays {
        println!("decay over {:?}: exponent {:.4}, expected {:.4}", d.lambdas, d.exponent, d.expected);
    }
    let ineq = inequality_suite(1_000, 100_000, 7)?;
    for c in &ineq.constants {
        println!("{:?} gamma {} terms {}: C(1e3) {:.4} C(1e5) {:.4}", c.inequality, c.gamma, c.terms, c.constant_small, c.constant_large);
    }
    println!("power suite {}, inequalities finite and stable {}", power.passed, ineq.all_finite_and_stable());
    Ok(())
}
