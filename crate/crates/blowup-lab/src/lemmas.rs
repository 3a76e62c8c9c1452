//! Numerical checks of two auxiliary facts used throughout the reduction:
//! the expansion of δ^{−τ} for small τ ln λ with the decay of log-weighted
//! bubble integrals, and a family of elementary power inequalities whose
//! constants are estimated by sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::bubble::{bubble_eval, BubbleParams};
use crate::constants::{c0, critical_exponent};
use crate::error::{LabError, Result};
use crate::functional::Admissibility;
use crate::quadrature::Estimate;
use crate::regression::loglog_fit;
use crate::sphere::{integrate_sphere, one_minus_cos, tangent_frame, QuadratureRule, SpherePoint};

/// Error of the first-order expansion of δ^{−τ} at one point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerExpansionSample {
    pub angle: f64,
    /// ln(2 + (λ²−1)(1 − cos d))
    pub log_factor: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerExpansionReport {
    pub n: usize,
    pub lambda: f64,
    pub tau: f64,
    pub admissibility: Admissibility,
    pub samples: Vec<PowerExpansionSample>,
    pub max_error: f64,
    /// max error / (τ² ln g): the constant of an O(τ² ln g) bound over the sample.
    pub fitted_constant: f64,
    /// max error / (½(mτ ln g)² e^{mτ ln g} c0^{−τ} λ^{−τm}); the Taylor
    /// remainder bound, so never above 1.
    pub sharp_ratio: f64,
}

/// δ^{−τ} against c0^{−τ} λ^{−τ(n−2)/2}(1 + (n−2)/2 · τ ln g) along a
/// geodesic from the centre, g = 2 + (λ²−1)(1 − cos d).
pub fn bubble_power_expansion(b: &BubbleParams, tau: f64, angles: usize) -> PowerExpansionReport {
    let n = b.dim();
    let m = (n as f64 - 2.0) / 2.0;
    let lam = b.lambda;
    let dir = &tangent_frame(&b.a)[0];
    let a = b.a.to_vector();
    let base = c0(n).powf(-tau) * lam.powf(-tau * m);
    let mut samples = Vec::with_capacity(angles + 1);
    let (mut max_error, mut fitted, mut sharp) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..=angles {
        // dense near the centre, where ln g changes fastest
        let theta = if k == 0 {
            0.0
        } else {
            std::f64::consts::PI * (1e-4f64).powf(1.0 - k as f64 / angles as f64)
        };
        let x = SpherePoint::from_ambient(&(&a * theta.cos() + dir * theta.sin())).expect("unit vector");
        let log_factor = (2.0 + (lam * lam - 1.0) * one_minus_cos(&x, &b.a)).ln();
        let exact = bubble_eval(b, &x).powf(-tau);
        let error = (exact - base * (1.0 + m * tau * log_factor)).abs();
        max_error = max_error.max(error);
        if tau > 0.0 {
            fitted = fitted.max(error / (tau * tau * log_factor));
            let y = m * tau * log_factor;
            sharp = sharp.max(error / (0.5 * y * y * y.exp() * base));
        }
        samples.push(PowerExpansionSample { angle: theta, log_factor, error });
    }
    PowerExpansionReport {
        n,
        lambda: lam,
        tau,
        admissibility: Admissibility::classify(tau * lam.ln()),
        samples,
        max_error,
        fitted_constant: fitted,
        sharp_ratio: sharp,
    }
}

/// ∫ δ^{p+1−β} ln^γ(2 + (λ²−1)(1 − cos d)).
pub fn log_weighted_integral(b: &BubbleParams, gamma: f64, beta: f64, rule: &QuadratureRule) -> Result<Estimate> {
    let n = b.dim();
    if !(0.0..(n as f64 / (n as f64 - 2.0))).contains(&beta) {
        return Err(LabError::Hypothesis(format!("β = {beta} outside [0, n/(n−2))")));
    }
    if !(gamma > 0.0) {
        return Err(LabError::Hypothesis(format!("γ = {gamma} must be positive")));
    }
    let q = critical_exponent(n) + 1.0 - beta;
    let lam2 = b.lambda * b.lambda;
    integrate_sphere(
        |x| bubble_eval(b, x).powf(q) * (2.0 + (lam2 - 1.0) * one_minus_cos(x, &b.a)).ln().powf(gamma),
        n,
        &[b.center()],
        rule,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub lambdas: Vec<f64>,
    pub integrals: Vec<f64>,
    /// −(log-log slope) of the integral against λ.
    pub exponent: f64,
    /// β(n−2)/2
    pub expected: f64,
}

/// λ-scaling of [`log_weighted_integral`] over a sweep.
pub fn log_weighted_decay(a: &SpherePoint, lambdas: &[f64], gamma: f64, beta: f64, rule: &QuadratureRule) -> Result<DecayFit> {
    let n = a.dim();
    let mut integrals = Vec::with_capacity(lambdas.len());
    for &lam in lambdas {
        integrals.push(log_weighted_integral(&BubbleParams::new(a.clone(), lam)?, gamma, beta, rule)?.value);
    }
    let fit = loglog_fit(lambdas, &integrals);
    Ok(DecayFit {
        lambdas: lambdas.to_vec(),
        integrals,
        exponent: -fit.slope,
        expected: beta * (n as f64 - 2.0) / 2.0,
    })
}

/// Everything the expansion lemma promises, at one dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLemmaReport {
    pub n: usize,
    /// max expansion error at τ = 0 over λ ∈ {10, 10³}
    pub exact_error: f64,
    /// τ ln λ ≤ 1e-3 expansions
    pub expansions: Vec<PowerExpansionReport>,
    pub decays: Vec<DecayFit>,
    pub exponent_tolerance: f64,
    pub passed: bool,
}

/// τ = 0 exactness, the τ² ln g bound at small τ ln λ, and the λ-decay of the
/// log-weighted integrals for (γ, β) ∈ {(1, 1), (2, 1), (1, ½)} on λ ∈ {10², 10³, 10⁴}.
pub fn power_lemma_suite(n: usize) -> Result<PowerLemmaReport> {
    let a = SpherePoint::basis(n, 0);
    let mut exact_error = 0.0f64;
    let mut expansions = Vec::new();
    for lam in [10.0, 1e3] {
        let b = BubbleParams::new(a.clone(), lam)?;
        exact_error = exact_error.max(bubble_power_expansion(&b, 0.0, 40).max_error);
        expansions.push(bubble_power_expansion(&b, 1e-3 / lam.ln(), 60));
    }
    let rule = QuadratureRule::zonal();
    let lambdas = [1e2, 1e3, 1e4];
    let decays = [(1.0, 1.0), (2.0, 1.0), (1.0, 0.5)]
        .iter()
        .map(|&(g, beta)| log_weighted_decay(&a, &lambdas, g, beta, &rule))
        .collect::<Result<Vec<_>>>()?;
    let exponent_tolerance = 0.1;
    let passed = exact_error == 0.0
        && expansions.iter().all(|e| e.fitted_constant.is_finite() && e.sharp_ratio <= 1.0 + 1e-6)
        && decays.iter().all(|d| (d.exponent - d.expected).abs() <= exponent_tolerance);
    Ok(PowerLemmaReport {
        n,
        exact_error,
        expansions,
        decays,
        exponent_tolerance,
        passed,
    })
}

/// The elementary inequalities checked by [`inequality_suite`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inequality {
    /// |(Σt_i)^γ − Σt_i^γ| ≤ c Σ_{i<j}(t_it_j)^{γ/2} for γ ≤ 2, c Σ_{i≠j} t_i^{γ−1}t_j for γ > 2.
    PowerOfSum,
    /// ||a+b|^γ − |a|^γ − γ|a|^{γ−2}ab| ≤ c|b|^γ for γ ≤ 2, c(|b|^γ + |a|^{γ−2}b²) for γ > 2.
    TaylorRemainder,
    /// |(Σt_i)^γ − Σt_i^γ − γt_1^{γ−1}Σ_{j≠1}t_j| t_1 ≤ c Σ_{k<j}(t_kt_j)^{(γ+1)/2}, 1 < γ ≤ 3.
    WeightedPowerOfSum,
    /// |(x+y)^γ − x^γ| ≤ c(x^{γ−1}y + y^γ), γ > 1.
    SuperlinearSum,
    /// |(x+y)^γ x − x^{γ+1}| ≤ c(xy)^{(γ+1)/2}, γ < 1.
    SublinearSum,
}

impl Inequality {
    pub const ALL: [Inequality; 5] = [
        Inequality::PowerOfSum,
        Inequality::TaylorRemainder,
        Inequality::WeightedPowerOfSum,
        Inequality::SuperlinearSum,
        Inequality::SublinearSum,
    ];

    /// Exponents exercised by the suite.
    pub fn exponents(&self) -> &'static [f64] {
        match self {
            Inequality::PowerOfSum => &[0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0],
            Inequality::TaylorRemainder => &[1.5, 2.0, 2.5, 3.0, 4.0],
            Inequality::WeightedPowerOfSum => &[1.5, 2.0, 2.5, 3.0],
            Inequality::SuperlinearSum => &[1.5, 2.0, 3.0, 4.0],
            Inequality::SublinearSum => &[-1.0, -0.5, 0.5, 0.9],
        }
    }

    /// Numbers of positive summands exercised.
    pub fn term_counts(&self) -> &'static [usize] {
        match self {
            Inequality::PowerOfSum | Inequality::WeightedPowerOfSum => &[2, 3],
            _ => &[2],
        }
    }

    /// (left side, right-side bound without c) at a sample. `t` holds
    /// positive numbers; the two-variable forms read (t[0], t[1]) and
    /// `signs` to build signed a, b. Left sides are expanded about the
    /// largest summand so that cancellation does not masquerade as growth.
    pub fn sides(&self, gamma: f64, t: &[f64], signs: (f64, f64)) -> (f64, f64) {
        match self {
            Inequality::PowerOfSum => {
                let (big, rest, ex2) = expand_about_largest(t, gamma);
                let lead = t[big];
                let others: f64 = t.iter().enumerate().filter(|(i, _)| *i != big).map(|(_, v)| v.powf(gamma)).sum();
                let lhs = (gamma * lead.powf(gamma - 1.0) * rest + ex2 - others).abs();
                let mut rhs = 0.0;
                for i in 0..t.len() {
                    for j in 0..t.len() {
                        if gamma <= 2.0 && i < j {
                            rhs += (t[i] * t[j]).powf(gamma / 2.0);
                        } else if gamma > 2.0 && i != j {
                            rhs += t[i].powf(gamma - 1.0) * t[j];
                        }
                    }
                }
                (lhs, rhs)
            }
            Inequality::TaylorRemainder => {
                let a = signs.0 * t[0];
                let b = signs.1 * t[1];
                let lhs = if a == 0.0 {
                    b.abs().powf(gamma)
                } else {
                    a.abs().powf(gamma) * taylor_excess(b / a, gamma).abs()
                };
                let rhs = if gamma > 2.0 {
                    b.abs().powf(gamma) + a.abs().powf(gamma - 2.0) * b * b
                } else {
                    b.abs().powf(gamma)
                };
                (lhs, rhs)
            }
            Inequality::WeightedPowerOfSum => {
                let (big, rest, ex2) = expand_about_largest(t, gamma);
                let lead = t[big];
                let others: f64 = t.iter().enumerate().filter(|(i, _)| *i != big).map(|(_, v)| v.powf(gamma)).sum();
                // (Σt)^γ − Σt^γ = γ M^{γ−1} R + ex2 − Σ_{others} t^γ, and when
                // t_1 is the largest the linear terms cancel identically.
                let core = if big == 0 {
                    ex2 - others
                } else {
                    let rest1: f64 = t[1..].iter().sum();
                    gamma * lead.powf(gamma - 1.0) * rest + ex2 - others - gamma * t[0].powf(gamma - 1.0) * rest1
                };
                let lhs = core.abs() * t[0];
                let mut rhs = 0.0;
                for i in 0..t.len() {
                    for j in i + 1..t.len() {
                        rhs += (t[i] * t[j]).powf((gamma + 1.0) / 2.0);
                    }
                }
                (lhs, rhs)
            }
            Inequality::SuperlinearSum => {
                let (x, y) = (t[0], t[1]);
                (x.powf(gamma) * (gamma * (y / x).ln_1p()).exp_m1().abs(), x.powf(gamma - 1.0) * y + y.powf(gamma))
            }
            Inequality::SublinearSum => {
                let (x, y) = (t[0], t[1]);
                (x.powf(gamma + 1.0) * (gamma * (y / x).ln_1p()).exp_m1().abs(), (x * y).powf((gamma + 1.0) / 2.0))
            }
        }
    }
}

/// (1+r)^γ − 1 − γr, by its binomial series when |r| is small.
fn binomial_excess(r: f64, gamma: f64) -> f64 {
    if r.abs() < 0.25 {
        let mut coef = gamma * (gamma - 1.0) / 2.0;
        let mut term = coef * r * r;
        let mut sum = term;
        for k in 3..200 {
            coef *= (gamma - k as f64 + 1.0) / k as f64;
            term = coef * r.powi(k as i32);
            sum += term;
            if term.abs() <= 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        (gamma * r.ln_1p()).exp_m1() - gamma * r
    }
}

/// |1+r|^γ − 1 − γr for any real r.
fn taylor_excess(r: f64, gamma: f64) -> f64 {
    if r > -0.75 {
        binomial_excess(r, gamma)
    } else {
        (1.0 + r).abs().powf(gamma) - 1.0 - gamma * r
    }
}

/// Index of the largest summand M, the sum R of the others, and
/// M^γ((1+R/M)^γ − 1 − γR/M).
fn expand_about_largest(t: &[f64], gamma: f64) -> (usize, f64, f64) {
    let big = t
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let rest: f64 = t.iter().enumerate().filter(|(i, _)| *i != big).map(|(_, v)| v).sum();
    let lead = t[big];
    (big, rest, lead.powf(gamma) * binomial_excess(rest / lead, gamma))
}

/// Empirical constant of one inequality at one exponent and term count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityConstant {
    pub inequality: Inequality,
    pub gamma: f64,
    pub terms: usize,
    /// max over the first `small_sample` draws of lhs/rhs
    pub constant_small: f64,
    /// max over all draws
    pub constant_large: f64,
    pub small_sample: usize,
    pub large_sample: usize,
}

impl InequalityConstant {
    pub fn is_finite(&self) -> bool {
        self.constant_large.is_finite()
    }

    /// The left side vanishes identically (constant at roundoff level), or
    /// the small-sample constant is within 50% of the large one.
    pub fn is_stable(&self) -> bool {
        self.constant_large < 1e-12 || self.constant_small >= 0.5 * self.constant_large
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub seed: u64,
    /// Summands are 10^U with U uniform on [−span, span].
    pub span: f64,
    pub constants: Vec<InequalityConstant>,
}

impl InequalityReport {
    pub fn all_finite_and_stable(&self) -> bool {
        self.constants.iter().all(|c| c.is_finite() && c.is_stable())
    }
}

/// Largest ratio lhs/rhs over log-uniform draws, recorded after `small` and `large` draws.
pub fn inequality_suite(small: usize, large: usize, seed: u64) -> Result<InequalityReport> {
    if small < 1000 || large < small {
        return Err(LabError::Domain(format!("need 1000 ≤ small ≤ large, got {small}, {large}")));
    }
    let span = 4.0;
    let exponent = Uniform::new_inclusive(-span, span);
    let mut constants = Vec::new();
    for (slot, ineq) in Inequality::ALL.iter().enumerate() {
        for &terms in ineq.term_counts() {
            for (g, &gamma) in ineq.exponents().iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((slot as u64) << 32) ^ ((terms as u64) << 16) ^ g as u64);
                let mut worst = 0.0f64;
                let mut worst_small = 0.0;
                let mut t = vec![0.0; terms];
                for draw in 0..large {
                    for v in t.iter_mut() {
                        *v = 10f64.powf(rng.sample(exponent));
                    }
                    let signs = (if rng.gen::<bool>() { 1.0 } else { -1.0 }, if rng.gen::<bool>() { 1.0 } else { -1.0 });
                    let (lhs, rhs) = ineq.sides(gamma, &t, signs);
                    let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
                    worst = worst.max(ratio);
                    if draw + 1 == small {
                        worst_small = worst;
                    }
                }
                constants.push(InequalityConstant {
                    inequality: *ineq,
                    gamma,
                    terms,
                    constant_small: worst_small,
                    constant_large: worst,
                    small_sample: small,
                    large_sample: large,
                });
            }
        }
    }
    Ok(InequalityReport { seed, span, constants })
}
