//! Bubbles δ̃_{a,λ} on S^n, their scaled derivatives, the interaction
//! coefficient ε_ij and bubble–bubble H¹ pairings.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constants::{c0, critical_exponent};
use crate::error::{LabError, Result};
use crate::quadrature::Estimate;
use crate::sphere::{integrate_sphere, one_minus_cos, project_tangent, tangent_frame, Center, QuadratureRule, SpherePoint};

/// Concentration point and rate of one bubble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BubbleParams {
    pub a: SpherePoint,
    pub lambda: f64,
}

impl BubbleParams {
    pub fn new(a: SpherePoint, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(LabError::Domain(format!("concentration rate must be positive, got {lambda}")));
        }
        Ok(Self { a, lambda })
    }

    pub fn dim(&self) -> usize {
        self.a.dim()
    }

    /// Quadrature centre for integrands concentrated at this bubble.
    pub fn center(&self) -> Center {
        Center {
            point: self.a.clone(),
            scale: 1.0 / self.lambda.max(1.0),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { a: self.a.clone(), lambda }
    }
}

fn denom(b: &BubbleParams, x: &SpherePoint) -> (f64, f64) {
    let w = one_minus_cos(x, &b.a);
    (w, 2.0 + (b.lambda * b.lambda - 1.0) * w)
}

/// δ̃_{a,λ}(x) = c0 λ^{(n-2)/2} / (2 + (λ²-1)(1 - cos d(x,a)))^{(n-2)/2}.
pub fn bubble_eval(b: &BubbleParams, x: &SpherePoint) -> f64 {
    let m = (b.dim() as f64 - 2.0) / 2.0;
    let (_, g) = denom(b, x);
    c0(b.dim()) * (b.lambda / g).powf(m)
}

/// λ ∂δ̃/∂λ.
pub fn bubble_dlambda(b: &BubbleParams, x: &SpherePoint) -> f64 {
    let m = (b.dim() as f64 - 2.0) / 2.0;
    let (w, g) = denom(b, x);
    let l2 = b.lambda * b.lambda;
    m * bubble_eval(b, x) * (2.0 - (l2 + 1.0) * w) / g
}

/// (1/λ) ∂δ̃/∂a as an ambient tangent vector at a.
pub fn bubble_da(b: &BubbleParams, x: &SpherePoint) -> DVector<f64> {
    let m = (b.dim() as f64 - 2.0) / 2.0;
    let (_, g) = denom(b, x);
    let l2 = b.lambda * b.lambda;
    let coef = m * bubble_eval(b, x) * (l2 - 1.0) / g / b.lambda;
    project_tangent(&b.a, &x.to_vector()) * coef
}

/// (1/λ) ∂δ̃/∂a in the coordinates of `tangent_frame(a)`.
pub fn bubble_da_frame(b: &BubbleParams, x: &SpherePoint) -> DVector<f64> {
    let v = bubble_da(b, x);
    let frame = tangent_frame(&b.a);
    DVector::from_iterator(frame.len(), frame.iter().map(|e| e.dot(&v)))
}

/// Interaction of two bubbles (value and the pair it belongs to).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub value: f64,
    pub i: usize,
    pub j: usize,
}

fn eps_base(bi: &BubbleParams, bj: &BubbleParams) -> f64 {
    let r = bi.lambda / bj.lambda;
    r + 1.0 / r + 0.5 * bi.lambda * bj.lambda * one_minus_cos(&bi.a, &bj.a)
}

/// ε_ij = (λi/λj + λj/λi + (λiλj/2)(1 - cos d(ai,aj)))^{(2-n)/2}.
pub fn epsilon(bi: &BubbleParams, bj: &BubbleParams) -> f64 {
    let nf = bi.dim() as f64;
    eps_base(bi, bj).powf((2.0 - nf) / 2.0)
}

/// λi ∂ε_ij/∂λi.
pub fn epsilon_dlambda(bi: &BubbleParams, bj: &BubbleParams) -> f64 {
    let nf = bi.dim() as f64;
    let g = eps_base(bi, bj);
    let r = bi.lambda / bj.lambda;
    (2.0 - nf) / 2.0 * g.powf(-nf / 2.0) * (r - 1.0 / r + 0.5 * bi.lambda * bj.lambda * one_minus_cos(&bi.a, &bj.a))
}

/// ∂ε_ij/∂ai as an ambient tangent vector at ai (unscaled).
pub fn epsilon_da(bi: &BubbleParams, bj: &BubbleParams) -> DVector<f64> {
    let nf = bi.dim() as f64;
    let m = (nf - 2.0) / 2.0;
    let g = eps_base(bi, bj);
    let coef = m * g.powf(-m - 1.0) * 0.5 * bi.lambda * bj.lambda;
    project_tangent(&bi.a, &bj.a.to_vector()) * coef
}

/// Interactions of all pairs i < j.
pub fn interactions(bubbles: &[BubbleParams]) -> Vec<Interaction> {
    let mut out = Vec::new();
    for i in 0..bubbles.len() {
        for j in i + 1..bubbles.len() {
            out.push(Interaction {
                value: epsilon(&bubbles[i], &bubbles[j]),
                i,
                j,
            });
        }
    }
    out
}

fn hyperbolic_base(bi: &BubbleParams, bj: &BubbleParams) -> f64 {
    let r = bi.lambda / bj.lambda;
    let w = one_minus_cos(&bi.a, &bj.a);
    let q = bi.lambda * bj.lambda;
    0.5 * (r + 1.0 / r) * (2.0 - w) + 0.5 * (q + 1.0 / q) * w
}

/// Exact conformal invariant of a bubble pair, `(2 cosh d_H)^{(2-n)/2}` with
/// d_H the hyperbolic distance of the two bubbles viewed as points of H^{n+1}.
///
/// It agrees with [`epsilon`] to leading order and, unlike it, pairings
/// ⟨δ̃_i, δ̃_j⟩ are exact functions of it.
pub fn conformal_interaction(bi: &BubbleParams, bj: &BubbleParams) -> f64 {
    let nf = bi.dim() as f64;
    hyperbolic_base(bi, bj).powf((2.0 - nf) / 2.0)
}

/// λi ∂/∂λi of [`conformal_interaction`].
pub fn conformal_interaction_dlambda(bi: &BubbleParams, bj: &BubbleParams) -> f64 {
    let nf = bi.dim() as f64;
    let g = hyperbolic_base(bi, bj);
    let r = bi.lambda / bj.lambda;
    let w = one_minus_cos(&bi.a, &bj.a);
    let q = bi.lambda * bj.lambda;
    let dg = 0.5 * (r - 1.0 / r) * (2.0 - w) + 0.5 * (q - 1.0 / q) * w;
    (2.0 - nf) / 2.0 * g.powf(-nf / 2.0) * dg
}

/// ∂/∂ai of [`conformal_interaction`] as an ambient tangent vector at ai.
pub fn conformal_interaction_da(bi: &BubbleParams, bj: &BubbleParams) -> DVector<f64> {
    let nf = bi.dim() as f64;
    let m = (nf - 2.0) / 2.0;
    let g = hyperbolic_base(bi, bj);
    let r = bi.lambda / bj.lambda;
    let q = bi.lambda * bj.lambda;
    // dw/dai = -P_{ai} aj
    let dgdw = -0.5 * (r + 1.0 / r) + 0.5 * (q + 1.0 / q);
    project_tangent(&bi.a, &bj.a.to_vector()) * (m * g.powf(-m - 1.0) * dgdw)
}

/// Bubble–bubble pairings by quadrature next to their analytic leading terms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairingReport {
    pub epsilon: f64,
    /// ⟨δ̃_i, δ̃_j⟩ = ∫ δ̃_j^p δ̃_i
    pub value: Estimate,
    /// c2 ε_ij
    pub leading: f64,
    /// ⟨δ̃_j, λi ∂δ̃_i/∂λi⟩ = ∫ δ̃_j^p λi ∂δ̃_i/∂λi
    pub dlambda_value: Estimate,
    /// c2 λi ∂ε_ij/∂λi
    pub dlambda_leading: f64,
    /// |value - leading| / ε^{n/(n-2)}
    pub residual_ratio: f64,
    /// |dlambda_value - dlambda_leading| / |dlambda_leading|
    pub dlambda_relative_gap: f64,
}

/// H¹ pairings of two bubbles, evaluated as ∫ δ̃_j^p h.
pub fn pairing_bubble_bubble(bi: &BubbleParams, bj: &BubbleParams, c2: f64, rule: &QuadratureRule) -> Result<PairingReport> {
    let n = bi.dim();
    let p = critical_exponent(n);
    let centers = [bi.center(), bj.center()];
    let value = integrate_sphere(|x| bubble_eval(bj, x).powf(p) * bubble_eval(bi, x), n, &centers, rule)?;
    let dlambda_value = integrate_sphere(|x| bubble_eval(bj, x).powf(p) * bubble_dlambda(bi, x), n, &centers, rule)?;
    let eps = epsilon(bi, bj);
    let leading = c2 * eps;
    let dlambda_leading = c2 * epsilon_dlambda(bi, bj);
    let nf = n as f64;
    Ok(PairingReport {
        epsilon: eps,
        value,
        leading,
        dlambda_value,
        dlambda_leading,
        residual_ratio: (value.value - leading).abs() / eps.powf(nf / (nf - 2.0)),
        dlambda_relative_gap: ((dlambda_value.value - dlambda_leading) / dlambda_leading).abs(),
    })
}

/// Rate μ ≥ 1 with μ + 1/μ = ε^{-2/(n-2)}: concentric bubbles of rates 1 and μ have invariant ε.
fn concentric_rate(eps: f64, n: usize) -> Result<f64> {
    let nf = n as f64;
    let s = eps.powf(-2.0 / (nf - 2.0));
    if s < 2.0 - 1e-14 {
        return Err(LabError::Domain(format!("interaction {eps} exceeds its maximum")));
    }
    let s = s.max(2.0);
    Ok(0.5 * (s + (s * s - 4.0).max(0.0).sqrt()))
}

/// Pairing P(ε) = ⟨δ̃_i, δ̃_j⟩ as a function of the invariant ε =
/// [`conformal_interaction`] alone, evaluated on the concentric
/// representative (a one-dimensional integral).
pub fn pairing_profile(eps: f64, n: usize) -> Result<Estimate> {
    let p = critical_exponent(n);
    let mu = concentric_rate(eps, n)?;
    let a = SpherePoint::basis(n, 0);
    let b1 = BubbleParams::new(a.clone(), 1.0)?;
    let bm = BubbleParams::new(a, mu)?;
    let centers = [bm.center()];
    integrate_sphere(|x| bubble_eval(&b1, x).powf(p) * bubble_eval(&bm, x), n, &centers, &QuadratureRule::zonal())
}

/// Derivative P'(ε) of [`pairing_profile`].
pub fn pairing_profile_derivative(eps: f64, n: usize) -> Result<Estimate> {
    let p = critical_exponent(n);
    let mu = concentric_rate(eps, n)?;
    let a = SpherePoint::basis(n, 0);
    let b1 = BubbleParams::new(a.clone(), 1.0)?;
    let bm = BubbleParams::new(a, mu)?;
    if (mu - 1.0).abs() < 1e-6 {
        return Err(LabError::Domain("profile derivative undefined at coincident bubbles".into()));
    }
    let centers = [bm.center()];
    let num = integrate_sphere(|x| bubble_eval(&b1, x).powf(p) * bubble_dlambda(&bm, x), n, &centers, &QuadratureRule::zonal())?;
    let d = conformal_interaction_dlambda(&bm, &b1);
    Ok(Estimate {
        value: num.value / d,
        error: num.error / d.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::random_point;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bubble_values_at_centre_and_antipode() {
        let n = 7;
        let nf = n as f64;
        let a = SpherePoint::basis(n, 0);
        let b = BubbleParams::new(a.clone(), 5.0).unwrap();
        let at = bubble_eval(&b, &a);
        assert!((at - c0(n) * (2.5f64).powf((nf - 2.0) / 2.0)).abs() < 1e-10 * at);
        let anti = bubble_eval(&b, &a.antipode());
        assert!((anti - c0(n) * (0.1f64).powf((nf - 2.0) / 2.0)).abs() < 1e-12 * anti);
        assert!(bubble_da(&b, &a).norm() == 0.0);
        assert!(BubbleParams::new(a, 0.0).is_err());
    }

    #[test]
    fn epsilon_symmetry_and_bound() {
        let n = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bound = 2f64.powf((2.0 - n as f64) / 2.0);
        for _ in 0..1000 {
            let bi = BubbleParams::new(random_point(n, &mut rng), 0.1 + 100.0 * rand::Rng::gen::<f64>(&mut rng)).unwrap();
            let bj = BubbleParams::new(random_point(n, &mut rng), 0.1 + 100.0 * rand::Rng::gen::<f64>(&mut rng)).unwrap();
            let e1 = epsilon(&bi, &bj);
            let e2 = epsilon(&bj, &bi);
            assert!((e1 - e2).abs() <= 1e-15 * e1);
            assert!(e1 > 0.0 && e1 <= bound * (1.0 + 1e-14));
            let s = -epsilon_dlambda(&bi, &bj) - epsilon_dlambda(&bj, &bi);
            assert!(s >= -1e-15 * e1);
        }
        let a = SpherePoint::basis(n, 0);
        let b = BubbleParams::new(a, 3.0).unwrap();
        assert!((epsilon(&b, &b) - bound).abs() < 1e-15);
        assert_eq!(epsilon_dlambda(&b, &b), 0.0);
    }

    fn observed_order(err: impl Fn(f64) -> f64) -> f64 {
        let (h1, h2) = (2e-2, 1e-2);
        (err(h1) / err(h2)).log2()
    }

    #[test]
    fn norm_identity_across_rates() {
        let n = 7;
        let p = critical_exponent(n);
        let sn = crate::constants::s_n_closed(n);
        for lambda in [1.0, 10.0, 100.0] {
            let b = BubbleParams::new(SpherePoint::basis(n, 2), lambda).unwrap();
            let v = integrate_sphere(|x| bubble_eval(&b, x).powf(p + 1.0), n, &[b.center()], &QuadratureRule::zonal()).unwrap();
            assert!(((v.value - sn) / sn).abs() < 1e-9, "lambda {lambda}: {} vs {sn}", v.value);
        }
    }

    #[test]
    fn bubble_is_orthogonal_to_its_rate_derivative() {
        let n = 7;
        let p = critical_exponent(n);
        let sn = crate::constants::s_n_closed(n);
        for lambda in [3.0, 50.0, 1e3] {
            let b = BubbleParams::new(SpherePoint::basis(n, 0), lambda).unwrap();
            let v = integrate_sphere(|x| bubble_eval(&b, x).powf(p) * bubble_dlambda(&b, x), n, &[b.center()], &QuadratureRule::zonal()).unwrap();
            assert!(v.value.abs() < 1e-10 * sn, "{}", v.value);
        }
    }

    #[test]
    fn derivatives_converge_at_second_order() {
        let n = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = BubbleParams::new(random_point(n, &mut rng), 4.0).unwrap();
        let xs: Vec<SpherePoint> = (0..20).map(|_| random_point(n, &mut rng)).collect();
        let frame = tangent_frame(&b.a);
        for x in &xs {
            let exact = bubble_dlambda(&b, x);
            let err = |h: f64| {
                let fd = (bubble_eval(&b.with_lambda(b.lambda * (1.0 + h)), x) - bubble_eval(&b.with_lambda(b.lambda * (1.0 - h)), x)) / (2.0 * h);
                (fd - exact).abs()
            };
            assert!(observed_order(err) >= 1.9);
            let exact_a = bubble_da_frame(&b, x);
            for (k, e) in frame.iter().enumerate() {
                let err = |h: f64| {
                    let shift = |t: f64| {
                        let a = crate::sphere::perturb_point(&b.a, &(e * t.tan())).unwrap();
                        bubble_eval(&BubbleParams::new(a, b.lambda).unwrap(), x)
                    };
                    ((shift(h) - shift(-h)) / (2.0 * h) / b.lambda - exact_a[k]).abs()
                };
                assert!(observed_order(err) >= 1.9);
            }
        }
        let bj = BubbleParams::new(random_point(n, &mut rng), 2.0).unwrap();
        let exact = epsilon_dlambda(&b, &bj);
        let err = |h: f64| {
            let fd = (epsilon(&b.with_lambda(b.lambda * h.exp()), &bj) - epsilon(&b.with_lambda(b.lambda * (-h).exp()), &bj)) / (2.0 * h);
            (fd - exact).abs()
        };
        assert!(observed_order(err) >= 1.9);
        let grad = epsilon_da(&b, &bj);
        for e in &frame {
            let err = |h: f64| {
                let shift = |t: f64| {
                    let a = crate::sphere::perturb_point(&b.a, &(e * t.tan())).unwrap();
                    epsilon(&BubbleParams::new(a, b.lambda).unwrap(), &bj)
                };
                ((shift(h) - shift(-h)) / (2.0 * h) - e.dot(&grad)).abs()
            };
            assert!(observed_order(err) >= 1.9);
        }
    }

    #[test]
    fn pushforward_is_the_flat_bubble() {
        let n = 7;
        let nf = n as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_point(n, &mut rng);
        let lambda = 6.0;
        let b = BubbleParams::new(a.clone(), lambda).unwrap();
        for _ in 0..50 {
            let x = random_point(n, &mut rng);
            let y = crate::sphere::stereo_project(&x, &a).unwrap();
            let r2 = y.norm_squared();
            // conformal factor of the inverse projection: (2/(1+|y|²))^{(n-2)/2}
            let jac = (2.0 / (1.0 + r2)).powf((nf - 2.0) / 2.0);
            let flat = c0(n) * lambda.powf((nf - 2.0) / 2.0) / (1.0 + lambda * lambda * r2).powf((nf - 2.0) / 2.0);
            let lifted = jac * bubble_eval(&b, &x);
            assert!((lifted - flat).abs() < 1e-12 * flat, "{lifted} vs {flat}");
        }
    }

    #[test]
    fn rotation_equivariance() {
        let n = 7;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let r = crate::sphere::random_rotation(n + 1, &mut rng);
            let b = BubbleParams::new(random_point(n, &mut rng), 7.0).unwrap();
            let x = random_point(n, &mut rng);
            let rb = BubbleParams::new(b.a.rotate(&r), b.lambda).unwrap();
            let v1 = bubble_eval(&b, &x);
            let v2 = bubble_eval(&rb, &x.rotate(&r));
            assert!((v1 - v2).abs() < 1e-12 * v1);
        }
    }

    #[test]
    fn epsilon_far_field_limit() {
        let n = 7;
        let nf = n as f64;
        let ai = SpherePoint::basis(n, 0);
        let aj = SpherePoint::at_angle(n, 1.0);
        let limit = (2.0 / (1.0 - 1f64.cos())).powf((nf - 2.0) / 2.0);
        for lambda in [1e3, 1e4] {
            let e = epsilon(&BubbleParams::new(ai.clone(), lambda).unwrap(), &BubbleParams::new(aj.clone(), lambda).unwrap());
            let scaled = lambda.powf(nf - 2.0) * e;
            assert!(((scaled - limit) / limit).abs() < 30.0 / (lambda * lambda));
        }
    }

    #[test]
    fn profile_matches_direct_pairing() {
        let n = 7;
        let p = critical_exponent(n);
        let bi = BubbleParams::new(SpherePoint::basis(n, 0), 30.0).unwrap();
        let bj = BubbleParams::new(SpherePoint::at_angle(n, 0.4), 10.0).unwrap();
        let eps = conformal_interaction(&bi, &bj);
        assert!(((eps - epsilon(&bi, &bj)) / eps).abs() < 0.05);
        let direct = integrate_sphere(|x| bubble_eval(&bj, x).powf(p) * bubble_eval(&bi, x), n, &[bi.center(), bj.center()], &QuadratureRule::bizonal()).unwrap();
        let prof = pairing_profile(eps, n).unwrap();
        assert!(((direct.value - prof.value) / prof.value).abs() < 1e-7, "{} vs {}", direct.value, prof.value);
        let d_direct = integrate_sphere(|x| bubble_eval(&bj, x).powf(p) * bubble_dlambda(&bi, x), n, &[bi.center(), bj.center()], &QuadratureRule::bizonal()).unwrap();
        let d_prof = pairing_profile_derivative(eps, n).unwrap().value * conformal_interaction_dlambda(&bi, &bj);
        assert!(((d_direct.value - d_prof) / d_prof).abs() < 1e-6, "{} vs {}", d_direct.value, d_prof);
    }
}
