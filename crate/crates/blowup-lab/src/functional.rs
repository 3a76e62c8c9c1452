//! The subcritical functional, gradient pairings against the test fields of
//! the bubble manifold, the leading terms of the gradient expansions and the
//! remainder aggregates that bound what they neglect.
//!
//! H¹ pairings never differentiate numerically: `⟨u, h⟩ = ∫ u·Lh` with Lh in
//! closed form (Lδ̃ = δ̃^p, L(λ∂_λδ̃) = pδ̃^{p-1}λ∂_λδ̃, and so on).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bubble::{bubble_da, bubble_dlambda, bubble_eval, epsilon, epsilon_dlambda, BubbleParams};
use crate::constants::{cached, conformal_mass, critical_exponent};
use crate::error::{LabError, Result};
use crate::quadrature::Estimate;
use crate::sphere::{integrate_sphere, integrate_sphere_scaled, tangent_frame, Center, QuadratureRule, ScalarField, SphereGrid, SpherePoint};

/// A function on S^n together with its image under the conformal Laplacian.
pub trait SphereFunction {
    fn dim(&self) -> usize;
    fn value(&self, x: &SpherePoint) -> f64;
    /// (−Δ + n(n−2)/4) applied to the function, evaluated at x.
    fn conformal_laplacian(&self, x: &SpherePoint) -> f64;
    /// Points where the function concentrates, most concentrated first.
    fn centers(&self) -> Vec<Center>;
}

impl SphereFunction for ScalarField {
    fn dim(&self) -> usize {
        ScalarField::dim(self)
    }

    fn value(&self, x: &SpherePoint) -> f64 {
        ScalarField::value(self, x)
    }

    fn conformal_laplacian(&self, x: &SpherePoint) -> f64 {
        -self.laplacian(x) + conformal_mass(self.dim()) * ScalarField::value(self, x)
    }

    fn centers(&self) -> Vec<Center> {
        self.axis().map(|a| vec![Center::smooth(a.clone())]).unwrap_or_default()
    }
}

/// Linear combination of borrowed functions.
pub struct Combination<'a> {
    pub terms: Vec<(f64, &'a dyn SphereFunction)>,
}

impl SphereFunction for Combination<'_> {
    fn dim(&self) -> usize {
        self.terms.first().map(|t| t.1.dim()).unwrap_or(0)
    }

    fn value(&self, x: &SpherePoint) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.value(x)).sum()
    }

    fn conformal_laplacian(&self, x: &SpherePoint) -> f64 {
        self.terms.iter().map(|(c, f)| c * f.conformal_laplacian(x)).sum()
    }

    fn centers(&self) -> Vec<Center> {
        let mut out: Vec<Center> = Vec::new();
        for (_, f) in &self.terms {
            out.extend(f.centers());
        }
        out.sort_by(|a, b| a.scale.partial_cmp(&b.scale).unwrap_or(std::cmp::Ordering::Equal));
        out
    }
}

/// One bubble of a configuration with its gluing coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedBubble {
    pub alpha: f64,
    pub bubble: BubbleParams,
}

/// u = α0 ω + Σ α_i δ̃_{a_i,λ_i} for the problem with curvature K and
/// exponent p − τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub n: usize,
    pub tau: f64,
    pub alpha0: f64,
    pub omega: ScalarField,
    pub curvature: ScalarField,
    pub bubbles: Vec<WeightedBubble>,
}

impl Configuration {
    pub fn new(n: usize, tau: f64, alpha0: f64, omega: ScalarField, curvature: ScalarField, bubbles: Vec<WeightedBubble>) -> Result<Self> {
        if n < 3 {
            return Err(LabError::Domain("dimension must be at least 3".into()));
        }
        if !(tau >= 0.0) {
            return Err(LabError::Domain(format!("tau must be nonnegative, got {tau}")));
        }
        if omega.dim() != n || curvature.dim() != n || bubbles.iter().any(|b| b.bubble.dim() != n) {
            return Err(LabError::Domain("dimension mismatch inside configuration".into()));
        }
        if bubbles.iter().any(|b| !(b.alpha > 0.0)) || !(alpha0 >= 0.0) {
            return Err(LabError::Domain("gluing coefficients must be positive".into()));
        }
        Ok(Self {
            n,
            tau,
            alpha0,
            omega,
            curvature,
            bubbles,
        })
    }

    pub fn has_residual_mass(&self) -> bool {
        !self.omega.is_zero()
    }

    pub fn bubble_params(&self) -> Vec<BubbleParams> {
        self.bubbles.iter().map(|b| b.bubble.clone()).collect()
    }

    /// Gluing coefficient making α^{p-1} K(a) λ^{-τ(n-2)/2} = 1.
    pub fn balanced_alpha(&self, b: &BubbleParams) -> f64 {
        let m = (self.n as f64 - 2.0) / 2.0;
        let p = critical_exponent(self.n);
        (b.lambda.powf(self.tau * m) / self.curvature.value(&b.a)).powf(1.0 / (p - 1.0))
    }

    /// Membership in the neighbourhood V(ω, N, μ): small interactions and
    /// near-unit normalisations.
    pub fn check_neighbourhood(&self, mu: f64) -> Result<()> {
        let p = critical_exponent(self.n);
        let b = self.bubble_params();
        for i in 0..b.len() {
            for j in i + 1..b.len() {
                let e = epsilon(&b[i], &b[j]);
                if e >= mu {
                    return Err(LabError::Hypothesis(format!("interaction ε_{i}{j} = {e:.3e} is not below μ = {mu}")));
                }
            }
        }
        for (i, wb) in self.bubbles.iter().enumerate() {
            let g = wb.alpha.powf(p - 1.0) * self.curvature.value(&wb.bubble.a);
            if (g - 1.0).abs() >= mu {
                return Err(LabError::Hypothesis(format!("bubble {i}: α^(p-1) K(a) = {g:.6} is not within μ of 1")));
            }
        }
        if self.has_residual_mass() && (self.alpha0 - 1.0).abs() >= mu {
            return Err(LabError::Hypothesis(format!("α0 = {} is not within μ of 1", self.alpha0)));
        }
        Ok(())
    }

    /// Largest τ ln λ_i and its admissibility class.
    pub fn admissibility(&self) -> Admissibility {
        let worst = self.bubbles.iter().map(|b| self.tau * b.bubble.lambda.ln()).fold(0.0, f64::max);
        Admissibility::classify(worst)
    }

    /// The same data moved by an orthogonal matrix.
    pub fn rotate(&self, r: &DMatrix<f64>) -> Self {
        let mut out = self.clone();
        out.omega = self.omega.rotate(r);
        out.curvature = self.curvature.rotate(r);
        for b in out.bubbles.iter_mut() {
            b.bubble.a = b.bubble.a.rotate(r);
        }
        out
    }
}

impl SphereFunction for Configuration {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &SpherePoint) -> f64 {
        let mut v = if self.has_residual_mass() { self.alpha0 * self.omega.value(x) } else { 0.0 };
        for b in &self.bubbles {
            v += b.alpha * bubble_eval(&b.bubble, x);
        }
        v
    }

    fn conformal_laplacian(&self, x: &SpherePoint) -> f64 {
        let p = critical_exponent(self.n);
        let mut v = if self.has_residual_mass() {
            self.alpha0 * SphereFunction::conformal_laplacian(&self.omega, x)
        } else {
            0.0
        };
        for b in &self.bubbles {
            v += b.alpha * bubble_eval(&b.bubble, x).powf(p);
        }
        v
    }

    fn centers(&self) -> Vec<Center> {
        let mut c: Vec<Center> = self.bubbles.iter().map(|b| b.bubble.center()).collect();
        c.sort_by(|a, b| a.scale.partial_cmp(&b.scale).unwrap_or(std::cmp::Ordering::Equal));
        if let Some(a) = self.omega.axis() {
            c.push(Center::smooth(a.clone()));
        }
        if let Some(a) = self.curvature.axis() {
            c.push(Center::smooth(a.clone()));
        }
        c
    }
}

/// Spanning directions of the tangent space E to the manifold of
/// configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestField {
    Omega,
    Bubble(usize),
    /// λ_i ∂δ̃_i/∂λ_i
    Rate(usize),
    /// (1/λ_i) ∂δ̃_i/∂a_i along the k-th vector of `tangent_frame(a_i)`
    Point(usize, usize),
}

impl TestField {
    /// The basis of E for a configuration: ω (when present), then per bubble
    /// δ̃, λ∂_λδ̃ and the n point derivatives.
    pub fn basis(cfg: &Configuration) -> Vec<TestField> {
        let mut out = Vec::new();
        if cfg.has_residual_mass() {
            out.push(TestField::Omega);
        }
        for i in 0..cfg.bubbles.len() {
            out.push(TestField::Bubble(i));
            out.push(TestField::Rate(i));
            for k in 0..cfg.n {
                out.push(TestField::Point(i, k));
            }
        }
        out
    }

    /// Basis without the point derivatives (enough for axially symmetric data).
    pub fn axial_basis(cfg: &Configuration) -> Vec<TestField> {
        TestField::basis(cfg).into_iter().filter(|t| !matches!(t, TestField::Point(..))).collect()
    }

    pub fn bind(self, cfg: &Configuration) -> BoundTestField<'_> {
        let direction = match self {
            TestField::Point(i, k) => Some(tangent_frame(&cfg.bubbles[i].bubble.a)[k].clone()),
            _ => None,
        };
        BoundTestField { cfg, field: self, direction }
    }
}

/// A test field attached to its configuration.
pub struct BoundTestField<'a> {
    cfg: &'a Configuration,
    field: TestField,
    direction: Option<DVector<f64>>,
}

impl SphereFunction for BoundTestField<'_> {
    fn dim(&self) -> usize {
        self.cfg.n
    }

    fn value(&self, x: &SpherePoint) -> f64 {
        match self.field {
            TestField::Omega => self.cfg.omega.value(x),
            TestField::Bubble(i) => bubble_eval(&self.cfg.bubbles[i].bubble, x),
            TestField::Rate(i) => bubble_dlambda(&self.cfg.bubbles[i].bubble, x),
            TestField::Point(i, _) => bubble_da(&self.cfg.bubbles[i].bubble, x).dot(self.direction.as_ref().expect("direction")),
        }
    }

    fn conformal_laplacian(&self, x: &SpherePoint) -> f64 {
        let p = critical_exponent(self.cfg.n);
        match self.field {
            TestField::Omega => SphereFunction::conformal_laplacian(&self.cfg.omega, x),
            TestField::Bubble(i) => bubble_eval(&self.cfg.bubbles[i].bubble, x).powf(p),
            TestField::Rate(i) | TestField::Point(i, _) => {
                let b = &self.cfg.bubbles[i].bubble;
                p * bubble_eval(b, x).powf(p - 1.0) * self.value(x)
            }
        }
    }

    fn centers(&self) -> Vec<Center> {
        match self.field {
            TestField::Omega => SphereFunction::centers(&self.cfg.omega),
            TestField::Bubble(i) | TestField::Rate(i) | TestField::Point(i, _) => vec![self.cfg.bubbles[i].bubble.center()],
        }
    }
}

/// K |u|^{q-1} u with the guard at u = 0.
fn signed_power(u: f64, q: f64) -> f64 {
    if u == 0.0 {
        0.0
    } else {
        u.abs().powf(q - 1.0) * u
    }
}

fn merged_centers(first: &dyn SphereFunction, second: &dyn SphereFunction) -> Vec<Center> {
    let mut c = first.centers();
    c.extend(second.centers());
    c
}

/// I_{K,τ}(u) = ½‖u‖² − (p+1−τ)^{-1} ∫ K |u|^{p+1−τ}.
pub fn energy(u: &dyn SphereFunction, curvature: &ScalarField, tau: f64, rule: &QuadratureRule) -> Result<Estimate> {
    let n = u.dim();
    let q = critical_exponent(n) + 1.0 - tau;
    integrate_sphere_scaled(
        |x| {
            let v = u.value(x);
            let a = 0.5 * v * u.conformal_laplacian(x);
            let b = curvature.value(x) * v.abs().powf(q) / q;
            (a - b, a.abs() + b.abs())
        },
        n,
        &u.centers(),
        rule,
    )
}

/// ⟨∇I_{K,τ}(u), h⟩ = ⟨u, h⟩ − ∫ K |u|^{p−1−τ} u h.
pub fn grad_pairing(u: &dyn SphereFunction, h: &dyn SphereFunction, curvature: &ScalarField, tau: f64, rule: &QuadratureRule) -> Result<Estimate> {
    let n = u.dim();
    let q = critical_exponent(n) - tau;
    integrate_sphere_scaled(
        |x| {
            let v = u.value(x);
            let a = v * h.conformal_laplacian(x);
            let b = curvature.value(x) * signed_power(v, q) * h.value(x);
            (a - b, a.abs() + b.abs())
        },
        n,
        &merged_centers(h, u),
        rule,
    )
}

/// [`grad_pairing`] on a fixed node set.
pub fn grad_pairing_on(grid: &SphereGrid, u: &dyn SphereFunction, h: &dyn SphereFunction, curvature: &ScalarField, tau: f64) -> f64 {
    let q = critical_exponent(u.dim()) - tau;
    grid.integrate(|x| {
        let v = u.value(x);
        v * h.conformal_laplacian(x) - curvature.value(x) * signed_power(v, q) * h.value(x)
    })
}

/// H¹ inner product ⟨f, g⟩ = ∫ f Lg.
pub fn h1_pairing(f: &dyn SphereFunction, g: &dyn SphereFunction, rule: &QuadratureRule) -> Result<Estimate> {
    integrate_sphere(|x| f.value(x) * g.conformal_laplacian(x), f.dim(), &merged_centers(g, f), rule)
}

/// Classes of the smallness condition on τ ln λ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Admissibility {
    Fine { tau_log_lambda: f64 },
    Warning { tau_log_lambda: f64 },
    Outside { tau_log_lambda: f64 },
}

impl Admissibility {
    pub const WARNING_BAND: (f64, f64) = (0.05, 0.1);

    pub fn classify(tau_log_lambda: f64) -> Self {
        if tau_log_lambda > Self::WARNING_BAND.1 {
            Admissibility::Outside { tau_log_lambda }
        } else if tau_log_lambda >= Self::WARNING_BAND.0 {
            Admissibility::Warning { tau_log_lambda }
        } else {
            Admissibility::Fine { tau_log_lambda }
        }
    }

    pub fn is_fine(&self) -> bool {
        matches!(self, Admissibility::Fine { .. })
    }
}

/// A leading term together with the remainder aggregate bounding the rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expansion<T> {
    pub leading: T,
    pub remainder: f64,
    pub admissibility: Admissibility,
}

/// Leading term of ⟨∇I(u), δ̃_i⟩: α_i S_n (1 − λ_i^{−τ(n−2)/2} α_i^{4/(n−2)} K(a_i)).
pub fn expansion_alpha(cfg: &Configuration, i: usize) -> Result<Expansion<f64>> {
    let c = cached(cfg.n)?;
    let m = (cfg.n as f64 - 2.0) / 2.0;
    let p = critical_exponent(cfg.n);
    let wb = &cfg.bubbles[i];
    let lam = wb.bubble.lambda;
    let leading = wb.alpha * c.s_n.value * (1.0 - lam.powf(-cfg.tau * m) * wb.alpha.powf(p - 1.0) * cfg.curvature.value(&wb.bubble.a));
    Ok(Expansion {
        leading,
        remainder: remainder_budget(cfg).r_alpha[i],
        admissibility: cfg.admissibility(),
    })
}

fn lambda_expansion(cfg: &Configuration, i: usize, self_factor: f64) -> Result<Expansion<f64>> {
    let c = cached(cfg.n)?;
    let m = (cfg.n as f64 - 2.0) / 2.0;
    let p = critical_exponent(cfg.n);
    let wi = &cfg.bubbles[i];
    let bi = &wi.bubble;
    let gi = wi.alpha.powf(p - 1.0) * cfg.curvature.value(&bi.a) * bi.lambda.powf(-cfg.tau * m);
    let mut interaction = 0.0;
    for (j, wj) in cfg.bubbles.iter().enumerate() {
        if j == i {
            continue;
        }
        let bj = &wj.bubble;
        let gj = wj.alpha.powf(p - 1.0) * cfg.curvature.value(&bj.a) * bj.lambda.powf(-cfg.tau * m);
        interaction += c.c2.value * wj.alpha * epsilon_dlambda(bi, bj) * (1.0 - gj - gi);
    }
    let lam = bi.lambda;
    let own = self_factor
        * wi.alpha.powf(p)
        * lam.powf(-cfg.tau * m)
        * (c.c4.value * cfg.curvature.chart_laplacian(&bi.a) / (lam * lam) + 2.0 * c.c5.value * cfg.curvature.value(&bi.a) * cfg.tau);
    Ok(Expansion {
        leading: interaction + own,
        remainder: remainder_budget(cfg).r_lambda[i],
        admissibility: cfg.admissibility(),
    })
}

/// Leading term of ⟨∇I(u), λ_i∂δ̃_i/∂λ_i⟩:
/// c2 Σ_j α_j λ_i∂ε_ij/∂λ_i (1 − g_j − g_i) + ½ α_i^p λ_i^{−τ(n−2)/2}(c4 ΔK(a_i)/λ_i² + 2c5 K(a_i) τ),
/// with g_k = α_k^{p−1} K(a_k) λ_k^{−τ(n−2)/2} and ΔK the chart Laplacian.
///
/// The self-interaction carries the factor ½ obtained from
/// −α^p/(p+1) λ∂_λ ∫ K δ̃^{p+1−τ}; see [`expansion_lambda_printed`] for the
/// variant without it.
pub fn expansion_lambda(cfg: &Configuration, i: usize) -> Result<Expansion<f64>> {
    lambda_expansion(cfg, i, 0.5)
}

/// [`expansion_lambda`] with the self-interaction at full weight. Its zero
/// set in λ is the same; its value is off by the self-term.
pub fn expansion_lambda_printed(cfg: &Configuration, i: usize) -> Result<Expansion<f64>> {
    lambda_expansion(cfg, i, 1.0)
}

/// Candidate for the constant of the point expansion: −S_n/(p+1), from
/// −α^p/(p+1) (1/λ) ∂_a ∫ K δ̃^{p+1} ≈ −α^p S_n ∇K(a)/((p+1) λ).
pub fn point_constant(n: usize) -> Result<f64> {
    Ok(-cached(n)?.s_n.value / (critical_exponent(n) + 1.0))
}

/// Leading term of ⟨∇I(u), (1/λ_i)∂δ̃_i/∂a_i⟩ in the coordinates of
/// `tangent_frame(a_i)`: α_i^p c ∇K(a_i)/λ_i with `c` supplied (use
/// [`point_constant`] or a fitted value).
pub fn expansion_point(cfg: &Configuration, i: usize, constant: f64) -> Expansion<DVector<f64>> {
    let p = critical_exponent(cfg.n);
    let wb = &cfg.bubbles[i];
    let g = cfg.curvature.gradient(&wb.bubble.a);
    let frame = tangent_frame(&wb.bubble.a);
    let coef = wb.alpha.powf(p) * constant / wb.bubble.lambda;
    Expansion {
        leading: DVector::from_iterator(frame.len(), frame.iter().map(|e| coef * e.dot(&g))),
        remainder: remainder_budget(cfg).r_point[i],
        admissibility: cfg.admissibility(),
    }
}

/// ‖ω‖² = ∫ ω Lω.
pub fn omega_norm_sq(omega: &ScalarField) -> Result<f64> {
    let rule = QuadratureRule::zonal().with_tolerance(1e-12);
    Ok(h1_pairing(omega, omega, &rule)?.value)
}

/// Leading term of ⟨∇I(u), ω⟩: α0 ‖ω‖² (1 − α0^{p−1}).
pub fn expansion_omega(cfg: &Configuration) -> Result<Expansion<f64>> {
    if !cfg.has_residual_mass() {
        return Err(LabError::Domain("configuration carries no residual mass".into()));
    }
    let p = critical_exponent(cfg.n);
    let norm = omega_norm_sq(&cfg.omega)?;
    Ok(Expansion {
        leading: cfg.alpha0 * norm * (1.0 - cfg.alpha0.powf(p - 1.0)),
        remainder: remainder_budget(cfg).r_omega.unwrap_or(0.0),
        admissibility: cfg.admissibility(),
    })
}

/// One term of a remainder aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetTerm {
    pub aggregate: String,
    pub name: String,
    pub value: f64,
}

/// The remainder aggregates of a configuration (with v = 0).
///
/// `r` bounds ‖v̄‖; `r2_lambda` is the aggregate of the λ-balance; the per
/// bubble lists are the error terms of the α-, λ- and point expansions.
/// Terms generated by the residual mass (λ^{−(n−2)/2}) appear only when ω ≠ 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderBudget {
    pub r: f64,
    pub r2_lambda: f64,
    pub r_alpha: Vec<f64>,
    pub r_lambda: Vec<f64>,
    pub r_point: Vec<f64>,
    pub r_omega: Option<f64>,
    pub terms: Vec<BudgetTerm>,
}

impl RemainderBudget {
    /// Sum of the recorded terms of one aggregate.
    pub fn total(&self, aggregate: &str) -> f64 {
        self.terms.iter().filter(|t| t.aggregate == aggregate).map(|t| t.value).sum()
    }
}

pub fn remainder_budget(cfg: &Configuration) -> RemainderBudget {
    let nf = cfg.n as f64;
    let b = cfg.bubble_params();
    let tau = cfg.tau;
    let omega = cfg.has_residual_mass();
    let mut terms = Vec::new();
    let mut push = |agg: &str, name: String, value: f64| {
        terms.push(BudgetTerm {
            aggregate: agg.to_string(),
            name,
            value,
        });
        value
    };

    let mut r = push("r", "tau".into(), tau);
    for (i, bi) in b.iter().enumerate() {
        let g = cfg.curvature.gradient(&bi.a).norm();
        r += push("r", format!("gradient[{i}]"), g / bi.lambda);
        r += push("r", format!("rate[{i}]"), 1.0 / (bi.lambda * bi.lambda));
    }
    for i in 0..b.len() {
        for j in i + 1..b.len() {
            let e = epsilon(&b[i], &b[j]);
            r += push(
                "r",
                format!("interaction[{i},{j}]"),
                e.powf((nf + 2.0) / (2.0 * (nf - 2.0))) * (-e.ln()).powf((nf + 2.0) / (2.0 * nf)),
            );
        }
    }

    let mut r2 = 0.0;
    for j in 0..b.len() {
        for k in 0..b.len() {
            if j != k {
                let e = epsilon(&b[j], &b[k]);
                r2 += push("r2_lambda", format!("interaction[{j},{k}]"), e.powf(nf / (nf - 2.0)) * (-e.ln()));
            }
        }
    }
    r2 += push("r2_lambda", "tau_squared".into(), tau * tau);
    for (k, bk) in b.iter().enumerate() {
        r2 += push("r2_lambda", format!("rate[{k}]"), bk.lambda.powf(-2.5));
        let g = cfg.curvature.gradient(&bk.a).norm();
        r2 += push("r2_lambda", format!("gradient[{k}]"), g * g / (bk.lambda * bk.lambda));
    }

    let mut r_alpha = Vec::new();
    let mut r_lambda = Vec::new();
    let mut r_point = Vec::new();
    let m = (nf - 2.0) / 2.0;
    for (i, bi) in b.iter().enumerate() {
        let lam = bi.lambda;
        let eps_sum: f64 = (0..b.len()).filter(|j| *j != i).map(|j| epsilon(bi, &b[j])).sum();
        let agg = format!("r_alpha[{i}]");
        let mut ra = push(&agg, "tau".into(), tau);
        ra += push(&agg, "rate".into(), 1.0 / (lam * lam));
        ra += push(&agg, "interaction".into(), eps_sum);
        if omega {
            ra += push(&agg, "residual_mass".into(), lam.powf(-m));
        }
        r_alpha.push(ra);

        let agg = format!("r_lambda[{i}]");
        let mut rl = 0.0;
        for j in 0..b.len() {
            for k in 0..b.len() {
                if j != k {
                    let e = epsilon(&b[j], &b[k]);
                    rl += push(&agg, format!("interaction[{j},{k}]"), e.powf(nf / (nf - 2.0)) * (-e.ln()));
                }
            }
        }
        rl += push(&agg, "tau_squared".into(), tau * tau);
        for (k, bk) in b.iter().enumerate() {
            rl += push(&agg, format!("far_field[{k}]"), bk.lambda.ln() / bk.lambda.powf(nf / 2.0));
        }
        let g = cfg.curvature.gradient(&bi.a).norm();
        rl += push(&agg, "gradient".into(), g * g / (lam * lam));
        rl += push(&agg, "rate_cubed".into(), lam.powi(-3));
        if omega {
            rl += push(&agg, "residual_mass".into(), lam.powf(-m));
        }
        r_lambda.push(rl);

        let agg = format!("r_point[{i}]");
        let mut rp = push(&agg, "rate_cubed".into(), lam.powi(-3));
        if omega {
            rp += push(&agg, "residual_mass".into(), lam.powf(-m));
        }
        rp += push(&agg, "interaction".into(), eps_sum);
        r_point.push(rp);
    }

    let r_omega = if omega {
        let mut ro = push("r_omega", "tau".into(), tau);
        for (k, bk) in b.iter().enumerate() {
            ro += push("r_omega", format!("residual_mass[{k}]"), bk.lambda.powf(-m));
            ro += push("r_omega", format!("rate_fourth[{k}]"), bk.lambda.powi(-4));
        }
        Some(ro)
    } else {
        None
    };

    RemainderBudget {
        r,
        r2_lambda: r2,
        r_alpha,
        r_lambda,
        r_point,
        r_omega,
        terms,
    }
}

/// Q(v) = ‖v‖² − p Σ ∫ δ̃_i^{p−1} v² − p ∫ K ω^{p−1} v².
pub fn quadratic_form(cfg: &Configuration, v: &dyn SphereFunction, rule: &QuadratureRule) -> Result<Estimate> {
    let p = critical_exponent(cfg.n);
    let mut centers = v.centers();
    centers.extend(cfg.centers());
    integrate_sphere_scaled(
        |x| {
            let w = v.value(x);
            let a = w * v.conformal_laplacian(x);
            let b = p * quadratic_weight(cfg, x) * w * w;
            (a - b, a.abs() + b.abs())
        },
        cfg.n,
        &centers,
        rule,
    )
}

/// Σ δ̃_i^{p−1} + K ω^{p−1} at x.
pub fn quadratic_weight(cfg: &Configuration, x: &SpherePoint) -> f64 {
    let p = critical_exponent(cfg.n);
    let mut s: f64 = cfg.bubbles.iter().map(|b| bubble_eval(&b.bubble, x).powf(p - 1.0)).sum();
    if cfg.has_residual_mass() {
        s += cfg.curvature.value(x) * cfg.omega.value(x).powf(p - 1.0);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{manufactured_curvature, random_rotation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(n: usize, lambda: f64, alpha: f64) -> Configuration {
        let b = BubbleParams::new(SpherePoint::basis(n, 0), lambda).unwrap();
        Configuration::new(n, 0.0, 0.0, ScalarField::zero(n), ScalarField::constant(n, 1.0), vec![WeightedBubble { alpha, bubble: b }]).unwrap()
    }

    fn omega_field(n: usize) -> ScalarField {
        ScalarField::zonal_polynomial(SpherePoint::basis(n, 0), vec![1.0, -0.3, 0.3])
    }

    #[test]
    fn energy_of_a_bubble_and_of_zero() {
        let n = 7;
        let s_n = cached(n).unwrap().s_n.value;
        let cfg = single(n, 20.0, 1.0);
        let rule = QuadratureRule::zonal().with_tolerance(1e-11);
        let e = energy(&cfg, &cfg.curvature, 0.0, &rule).unwrap();
        assert!((e.value - s_n / n as f64).abs() < 1e-8 * s_n, "{}", e.value);
        let zero = ScalarField::zero(n);
        assert_eq!(energy(&zero, &cfg.curvature, 0.0, &rule).unwrap().value, 0.0);
    }

    #[test]
    fn energy_of_the_residual_mass() {
        let n = 7;
        let omega = omega_field(n);
        let k = manufactured_curvature(&omega).unwrap();
        let rule = QuadratureRule::zonal().with_tolerance(1e-11);
        let e = energy(&omega, &k, 0.0, &rule).unwrap().value;
        let norm = omega_norm_sq(&omega).unwrap();
        assert!((e - norm / n as f64).abs() < 1e-9 * norm);
    }

    #[test]
    fn gradient_vanishes_at_exact_critical_points() {
        let n = 7;
        let cfg = single(n, 15.0, 1.0);
        let rule = QuadratureRule::zonal_design();
        let s_n = cached(n).unwrap().s_n.value;
        for t in TestField::basis(&cfg) {
            let h = t.bind(&cfg);
            let g = grad_pairing(&cfg, &h, &cfg.curvature, 0.0, &rule).unwrap();
            assert!(g.value.abs() < 1e-9 * s_n, "{t:?}: {}", g.value);
        }
        let omega = omega_field(n);
        let k = manufactured_curvature(&omega).unwrap();
        let g = grad_pairing(&omega, &omega, &k, 0.0, &rule).unwrap();
        assert!(g.value.abs() < 1e-10 * omega_norm_sq(&omega).unwrap());
    }

    #[test]
    fn gradient_of_a_scaled_bubble() {
        let n = 7;
        let s_n = cached(n).unwrap().s_n.value;
        let p = critical_exponent(n);
        let alpha = 1.3;
        let cfg = single(n, 8.0, alpha);
        let h = TestField::Bubble(0).bind(&cfg);
        let g = grad_pairing(&cfg, &h, &cfg.curvature, 0.0, &QuadratureRule::zonal().with_tolerance(1e-12)).unwrap();
        let exact = s_n * (alpha - alpha.powf(p));
        assert!((g.value - exact).abs() < 1e-9 * s_n, "{} vs {}", g.value, exact);
    }

    #[test]
    fn quadratic_form_signs() {
        let n = 7;
        let s_n = cached(n).unwrap().s_n.value;
        let p = critical_exponent(n);
        let cfg = single(n, 6.0, 1.0);
        let d = TestField::Bubble(0).bind(&cfg);
        let q = quadratic_form(&cfg, &d, &QuadratureRule::zonal().with_tolerance(1e-12)).unwrap();
        assert!((q.value - s_n * (1.0 - p)).abs() < 1e-9 * s_n);
        let empty = Configuration::new(n, 0.0, 0.0, ScalarField::zero(n), ScalarField::constant(n, 1.0), vec![]).unwrap();
        let v = ScalarField::zonal_polynomial(SpherePoint::basis(n, 2), vec![0.0, 1.0, 0.5]);
        let qv = quadratic_form(&empty, &v, &QuadratureRule::zonal()).unwrap().value;
        let norm = h1_pairing(&v, &v, &QuadratureRule::zonal()).unwrap().value;
        assert!(qv > 0.0 && (qv - norm).abs() < 1e-12 * norm);
        // negative on the residual-mass direction
        let omega = omega_field(n);
        let k = manufactured_curvature(&omega).unwrap();
        let cfg = Configuration::new(n, 0.0, 1.0, omega.clone(), k, vec![]).unwrap();
        assert!(quadratic_form(&cfg, &omega, &QuadratureRule::zonal()).unwrap().value < 0.0);
    }

    #[test]
    fn balanced_alpha_zeroes_the_alpha_expansion() {
        let n = 7;
        let k = ScalarField::zonal_polynomial(SpherePoint::basis(n, 1), vec![1.0, 0.2]);
        let b = BubbleParams::new(SpherePoint::at_angle(n, 0.3), 40.0).unwrap();
        let mut cfg = Configuration::new(n, 1e-3, 0.0, ScalarField::zero(n), k, vec![]).unwrap();
        let alpha = cfg.balanced_alpha(&b);
        cfg.bubbles.push(WeightedBubble { alpha, bubble: b });
        assert!(expansion_alpha(&cfg, 0).unwrap().leading.abs() < 1e-10);
    }

    #[test]
    fn rate_law_zeroes_the_lambda_expansion() {
        let n = 7;
        let c = cached(n).unwrap();
        let k = ScalarField::zonal_polynomial(SpherePoint::basis(n, 0), vec![1.0, 0.3]);
        let y = SpherePoint::basis(n, 0);
        let tau = 1e-3;
        let lam = (-(c.c4.value / (2.0 * c.c5.value)) * k.chart_laplacian(&y) / (k.value(&y) * tau)).sqrt();
        let b = BubbleParams::new(y, lam).unwrap();
        let cfg = Configuration::new(n, tau, 0.0, ScalarField::zero(n), k, vec![WeightedBubble { alpha: 1.0, bubble: b }]).unwrap();
        let e = expansion_lambda(&cfg, 0).unwrap().leading;
        let scale = 2.0 * c.c5.value * tau;
        assert!(e.abs() < 1e-12 * scale, "{e}");
        assert!(expansion_lambda_printed(&cfg, 0).unwrap().leading.abs() < 1e-12 * scale);
        assert!(expansion_point(&cfg, 0, point_constant(n).unwrap()).leading.norm() == 0.0);
    }

    #[test]
    fn budget_single_bubble_and_pair() {
        let n = 7;
        let cfg = single(n, 30.0, 1.0);
        let r = remainder_budget(&cfg);
        assert_eq!(r.r, 1.0 / 900.0);
        assert!((r.total("r") - r.r).abs() < 1e-18);
        let b1 = BubbleParams::new(SpherePoint::basis(n, 0), 10.0).unwrap();
        let b2 = BubbleParams::new(SpherePoint::basis(n, 1), 12.0).unwrap();
        let cfg = Configuration::new(
            n,
            0.0,
            0.0,
            ScalarField::zero(n),
            ScalarField::constant(n, 1.0),
            vec![WeightedBubble { alpha: 1.0, bubble: b1.clone() }, WeightedBubble { alpha: 1.0, bubble: b2.clone() }],
        )
        .unwrap();
        let r = remainder_budget(&cfg);
        let e = epsilon(&b1, &b2);
        let nf = n as f64;
        let inter = e.powf((nf + 2.0) / (2.0 * (nf - 2.0))) * (-e.ln()).powf((nf + 2.0) / (2.0 * nf));
        assert!((r.r - (inter + 0.01 + 1.0 / 144.0)).abs() < 1e-15);
        for agg in ["r", "r2_lambda", "r_alpha[0]", "r_lambda[1]", "r_point[0]"] {
            assert!(r.terms.iter().filter(|t| t.aggregate == agg).all(|t| t.value >= 0.0));
        }
        assert!((r.total("r2_lambda") - r.r2_lambda).abs() < 1e-15 * r.r2_lambda);
        assert!((r.total("r_lambda[1]") - r.r_lambda[1]).abs() < 1e-15 * r.r_lambda[1]);
    }

    #[test]
    fn energy_is_rotation_invariant() {
        let n = 7;
        let omega = omega_field(n);
        let k = manufactured_curvature(&omega).unwrap();
        let b = BubbleParams::new(SpherePoint::basis(n, 0), 12.0).unwrap();
        let cfg = Configuration::new(n, 1e-3, 1.0, omega, k, vec![WeightedBubble { alpha: 0.3, bubble: b }]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = random_rotation(n + 1, &mut rng);
        let rot = cfg.rotate(&r);
        let rule = QuadratureRule::zonal().with_tolerance(1e-11);
        let e1 = energy(&cfg, &cfg.curvature, cfg.tau, &rule).unwrap().value;
        let e2 = energy(&rot, &rot.curvature, rot.tau, &rule).unwrap().value;
        assert!((e1 - e2).abs() < 1e-10 * e1.abs());
    }

    #[test]
    fn neighbourhood_checks() {
        let n = 7;
        let cfg = single(n, 30.0, 1.0);
        assert!(cfg.check_neighbourhood(0.1).is_ok());
        let bad = single(n, 30.0, 1.5);
        assert!(matches!(bad.check_neighbourhood(0.1), Err(LabError::Hypothesis(_))));
        assert!(matches!(Admissibility::classify(0.07), Admissibility::Warning { .. }));
    }
}
