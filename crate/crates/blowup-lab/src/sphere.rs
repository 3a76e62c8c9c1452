//! Geometry of the round sphere S^n ⊂ R^{n+1}: points, geodesic distance,
//! stereographic charts, zonal scalar fields with closed-form derivatives,
//! and quadrature over the sphere.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{LabError, Result};
use crate::quadrature::{composite_rule, graded_breaks, Estimate, Focus};

const UNIT_TOL: f64 = 1e-12;

/// A point of S^n stored by its n+1 ambient coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    coords: Vec<f64>,
}

impl SpherePoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let norm = coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if coords.len() < 2 || (norm - 1.0).abs() > UNIT_TOL {
            return Err(LabError::Domain(format!("not a unit vector (norm {norm})")));
        }
        Ok(Self { coords })
    }

    /// Normalizes a non-zero ambient vector.
    pub fn from_ambient(v: &DVector<f64>) -> Result<Self> {
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(LabError::Domain("cannot normalize a zero vector".into()));
        }
        Ok(Self {
            coords: (v / norm).iter().copied().collect(),
        })
    }

    /// The ambient basis vector e_k of R^{n+1}.
    pub fn basis(n: usize, k: usize) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[k] = 1.0;
        Self { coords }
    }

    /// The point at geodesic distance `theta` from `e_0`, towards `e_1`.
    pub fn at_angle(n: usize, theta: f64) -> Self {
        let mut coords = vec![0.0; n + 1];
        coords[0] = theta.cos();
        coords[1] = theta.sin();
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len() - 1
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    pub fn dot(&self, other: &SpherePoint) -> f64 {
        self.coords.iter().zip(&other.coords).map(|(a, b)| a * b).sum()
    }

    pub fn dot_vec(&self, v: &DVector<f64>) -> f64 {
        self.coords.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn antipode(&self) -> Self {
        Self {
            coords: self.coords.iter().map(|c| -c).collect(),
        }
    }

    /// Applies an orthogonal matrix.
    pub fn rotate(&self, r: &DMatrix<f64>) -> Self {
        let v = r * self.to_vector();
        Self::from_ambient(&v).expect("rotation of a unit vector")
    }

    fn check_unit(&self) -> Result<()> {
        let norm = self.coords.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(LabError::Domain(format!("not a unit vector (norm {norm})")));
        }
        Ok(())
    }
}

/// Geodesic distance in [0, π].
pub fn geodesic_distance(x: &SpherePoint, y: &SpherePoint) -> Result<f64> {
    x.check_unit()?;
    y.check_unit()?;
    if x.dim() != y.dim() {
        return Err(LabError::Domain("dimension mismatch".into()));
    }
    Ok(chord_angle(x, y))
}

/// Angle between unit vectors, accurate for nearly equal and nearly antipodal pairs.
pub(crate) fn chord_angle(x: &SpherePoint, y: &SpherePoint) -> f64 {
    let mut dm = 0.0;
    let mut dp = 0.0;
    for (a, b) in x.coords.iter().zip(&y.coords) {
        dm += (a - b) * (a - b);
        dp += (a + b) * (a + b);
    }
    2.0 * dm.sqrt().atan2(dp.sqrt())
}

/// `1 - cos d(x, y)` computed without cancellation.
pub(crate) fn one_minus_cos(x: &SpherePoint, y: &SpherePoint) -> f64 {
    0.5 * x.coords.iter().zip(&y.coords).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Orthonormal frame of the tangent space at `a`.
///
/// Gram–Schmidt of the ambient basis against `a`, skipping the basis vector
/// with the largest overlap with `a` so the frame stays well conditioned near
/// coordinate poles.
pub fn tangent_frame(a: &SpherePoint) -> Vec<DVector<f64>> {
    let dim = a.coords.len();
    let skip = (0..dim)
        .max_by(|i, j| a.coords[*i].abs().partial_cmp(&a.coords[*j].abs()).unwrap())
        .unwrap_or(0);
    let av = a.to_vector();
    let mut frame: Vec<DVector<f64>> = Vec::with_capacity(dim - 1);
    for k in 0..dim {
        if k == skip {
            continue;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        for _ in 0..2 {
            let c = av.dot(&v);
            v -= &av * c;
            for f in &frame {
                let c = f.dot(&v);
                v -= f * c;
            }
        }
        let nv = v.norm();
        frame.push(v / nv);
    }
    frame
}

/// Stereographic projection with pole `-a`; `a` maps to the origin of R^n.
/// Coordinates are taken in `tangent_frame(a)`.
pub fn stereo_project(x: &SpherePoint, a: &SpherePoint) -> Result<DVector<f64>> {
    x.check_unit()?;
    a.check_unit()?;
    let t = x.dot(a);
    let denom = 1.0 + t;
    if one_minus_cos(x, &a.antipode()) < 1e-24 || denom <= 0.0 {
        return Err(LabError::PoleSingularity);
    }
    let frame = tangent_frame(a);
    let xv = x.to_vector();
    Ok(DVector::from_iterator(frame.len(), frame.iter().map(|e| e.dot(&xv) / denom)))
}

/// Inverse of [`stereo_project`].
pub fn stereo_lift(y: &DVector<f64>, a: &SpherePoint) -> Result<SpherePoint> {
    a.check_unit()?;
    if y.len() != a.dim() {
        return Err(LabError::Domain("chart dimension mismatch".into()));
    }
    let frame = tangent_frame(a);
    let r2 = y.norm_squared();
    let mut v = a.to_vector() * (1.0 - r2);
    for (k, e) in frame.iter().enumerate() {
        v += e * (2.0 * y[k]);
    }
    v /= 1.0 + r2;
    SpherePoint::from_ambient(&v)
}

/// `(y + ξ)/|y + ξ|` for a tangent vector ξ at y.
pub fn perturb_point(y: &SpherePoint, xi: &DVector<f64>) -> Result<SpherePoint> {
    y.check_unit()?;
    if xi.len() != y.coords.len() {
        return Err(LabError::Domain("tangent vector has wrong length".into()));
    }
    let overlap = y.dot_vec(xi);
    if overlap.abs() > 1e-10 * (1.0 + xi.norm()) {
        return Err(LabError::Domain(format!("vector not tangent (overlap {overlap:e})")));
    }
    if xi.norm() >= 1.0 {
        return Err(LabError::Domain("perturbation must have norm below 1".into()));
    }
    SpherePoint::from_ambient(&(y.to_vector() + xi))
}

/// Tangent component of an ambient vector at x.
pub fn project_tangent(x: &SpherePoint, v: &DVector<f64>) -> DVector<f64> {
    let xv = x.to_vector();
    let c = xv.dot(v);
    v - xv * c
}

/// Surface area of S^m.
pub fn sphere_area(m: usize) -> f64 {
    let h = (m as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(h) / ln_gamma(h).exp()
}

/// Uniformly random orthogonal matrix (Haar measure) from a seeded generator.
pub fn random_rotation(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

/// Uniformly random point of S^n.
pub fn random_point(n: usize, rng: &mut impl Rng) -> SpherePoint {
    loop {
        let v = DVector::from_fn(n + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
        if v.norm() > 1e-8 {
            return SpherePoint::from_ambient(&v).unwrap();
        }
    }
}

// ---------------------------------------------------------------------------
// Scalar fields
// ---------------------------------------------------------------------------

/// Profile of a zonal function `f(x) = F(x·e)` as a function of `s = x·e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// `Σ_k c_k s^k`.
    Polynomial { coeffs: Vec<f64> },
    /// The standard bubble of rate `lambda` centred on the axis.
    Bubble { lambda: f64 },
    /// `(L F)/F^p` for the conformal Laplacian L, built from a base profile.
    Manufactured { base: Box<Profile> },
}

impl Profile {
    /// F, F', F'', F''', F'''' at s (the last two only for base profiles).
    pub fn derivs(&self, s: f64, n: usize) -> [f64; 5] {
        match self {
            Profile::Polynomial { coeffs } => {
                let mut d = [0.0; 5];
                for (k, c) in coeffs.iter().enumerate() {
                    let mut fall = 1.0;
                    for (order, slot) in d.iter_mut().enumerate() {
                        if order > k {
                            break;
                        }
                        *slot += c * fall * s.powi((k - order) as i32);
                        fall *= (k - order) as f64;
                    }
                }
                d
            }
            Profile::Bubble { lambda } => {
                let nf = n as f64;
                let c0 = (nf * (nf - 2.0)).powf((nf - 2.0) / 4.0);
                let m = (nf - 2.0) / 2.0;
                let b = lambda * lambda - 1.0;
                let base = 2.0 + b * (1.0 - s);
                let amp = c0 * lambda.powf(m);
                let mut d = [0.0; 5];
                let mut coef = amp;
                for (k, slot) in d.iter_mut().enumerate() {
                    *slot = coef * base.powf(-m - k as f64);
                    coef *= (m + k as f64) * b;
                }
                d
            }
            Profile::Manufactured { base } => {
                let nf = n as f64;
                let p = (nf + 2.0) / (nf - 2.0);
                let a = nf * (nf - 2.0) / 4.0;
                let [f, f1, f2, f3, f4] = base.derivs(s, n);
                let q = 1.0 - s * s;
                let num = -q * f2 + nf * s * f1 + a * f;
                let num1 = 2.0 * s * f2 - q * f3 + nf * f1 + nf * s * f2 + a * f1;
                let num2 = (2.0 + 2.0 * nf + a) * f2 + (4.0 + nf) * s * f3 - q * f4;
                let fp = f.powf(-p);
                let g = num * fp;
                let g1 = num1 * fp - p * num * fp / f * f1;
                let g2 = num2 * fp - 2.0 * p * num1 * fp / f * f1
                    - p * num * (fp / f * f2 - (p + 1.0) * fp / (f * f) * f1 * f1);
                [g, g1, g2, f64::NAN, f64::NAN]
            }
        }
    }
}

/// A smooth function on S^n with closed-form derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarField {
    Constant { n: usize, value: f64 },
    Zonal { n: usize, axis: SpherePoint, profile: Profile },
}

impl ScalarField {
    pub fn constant(n: usize, value: f64) -> Self {
        ScalarField::Constant { n, value }
    }

    pub fn zero(n: usize) -> Self {
        ScalarField::Constant { n, value: 0.0 }
    }

    pub fn zonal(axis: SpherePoint, profile: Profile) -> Self {
        ScalarField::Zonal {
            n: axis.dim(),
            axis,
            profile,
        }
    }

    /// `c_0 + c_1 s + ... ` in `s = x·axis`.
    pub fn zonal_polynomial(axis: SpherePoint, coeffs: Vec<f64>) -> Self {
        Self::zonal(axis, Profile::Polynomial { coeffs })
    }

    pub fn dim(&self) -> usize {
        match self {
            ScalarField::Constant { n, .. } | ScalarField::Zonal { n, .. } => *n,
        }
    }

    pub fn axis(&self) -> Option<&SpherePoint> {
        match self {
            ScalarField::Constant { .. } => None,
            ScalarField::Zonal { axis, .. } => Some(axis),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, ScalarField::Constant { value, .. } if *value == 0.0)
    }

    fn zonal_derivs(&self, x: &SpherePoint) -> (f64, [f64; 5]) {
        match self {
            ScalarField::Constant { value, .. } => (0.0, [*value, 0.0, 0.0, 0.0, 0.0]),
            ScalarField::Zonal { n, axis, profile } => {
                let s = x.dot(axis).clamp(-1.0, 1.0);
                (s, profile.derivs(s, *n))
            }
        }
    }

    pub fn value(&self, x: &SpherePoint) -> f64 {
        self.zonal_derivs(x).1[0]
    }

    /// Intrinsic gradient as an ambient tangent vector.
    pub fn gradient(&self, x: &SpherePoint) -> DVector<f64> {
        match self {
            ScalarField::Constant { n, .. } => DVector::zeros(n + 1),
            ScalarField::Zonal { axis, .. } => {
                let (s, d) = self.zonal_derivs(x);
                let et = axis.to_vector() - x.to_vector() * s;
                et * d[1]
            }
        }
    }

    /// Intrinsic Hessian as an ambient matrix acting on the tangent space at x
    /// (it annihilates the normal direction).
    pub fn hessian(&self, x: &SpherePoint) -> DMatrix<f64> {
        match self {
            ScalarField::Constant { n, .. } => DMatrix::zeros(n + 1, n + 1),
            ScalarField::Zonal { n, axis, .. } => {
                let (s, d) = self.zonal_derivs(x);
                let xv = x.to_vector();
                let et = axis.to_vector() - &xv * s;
                let proj = DMatrix::identity(n + 1, n + 1) - &xv * xv.transpose();
                &et * et.transpose() * d[2] - proj * (s * d[1])
            }
        }
    }

    /// Laplace–Beltrami value.
    pub fn laplacian(&self, x: &SpherePoint) -> f64 {
        match self {
            ScalarField::Constant { .. } => 0.0,
            ScalarField::Zonal { n, .. } => {
                let (s, d) = self.zonal_derivs(x);
                (1.0 - s * s) * d[2] - *n as f64 * s * d[1]
            }
        }
    }

    /// Laplacian of the field in the stereographic chart centred at x; at the
    /// chart centre this is four times the Laplace–Beltrami value.
    pub fn chart_laplacian(&self, x: &SpherePoint) -> f64 {
        4.0 * self.laplacian(x)
    }

    /// Samples the field on a deterministic point set and reports the minimum.
    pub fn sampled_min(&self, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let mut m = f64::INFINITY;
        if let Some(a) = self.axis() {
            for k in 0..=200 {
                let t = std::f64::consts::PI * k as f64 / 200.0;
                let frame = tangent_frame(a);
                let v = a.to_vector() * t.cos() + &frame[0] * t.sin();
                m = m.min(self.value(&SpherePoint::from_ambient(&v).unwrap()));
            }
        }
        for _ in 0..samples {
            m = m.min(self.value(&random_point(n, &mut rng)));
        }
        m
    }

    /// Whether the field is positive on a sample (the positivity flag).
    pub fn is_positive(&self) -> bool {
        self.sampled_min(2000, 7) > 0.0
    }

    /// Applies an orthogonal matrix to the field's geometry.
    pub fn rotate(&self, r: &DMatrix<f64>) -> Self {
        match self {
            ScalarField::Constant { .. } => self.clone(),
            ScalarField::Zonal { n, axis, profile } => ScalarField::Zonal {
                n: *n,
                axis: axis.rotate(r),
                profile: profile.clone(),
            },
        }
    }
}

/// `K := (L ω)/ω^p`, which makes ω an exact solution of `L u = K u^p`.
pub fn manufactured_curvature(omega: &ScalarField) -> Result<ScalarField> {
    let n = omega.dim();
    let nf = n as f64;
    let p = (nf + 2.0) / (nf - 2.0);
    let k = match omega {
        ScalarField::Constant { value, .. } => {
            if *value <= 0.0 {
                return Err(LabError::Construction("ω must be positive".into()));
            }
            ScalarField::constant(n, nf * (nf - 2.0) / 4.0 / value.powf(p - 1.0))
        }
        ScalarField::Zonal { axis, profile, .. } => {
            if matches!(profile, Profile::Manufactured { .. }) {
                return Err(LabError::Construction("ω profile must have four closed-form derivatives".into()));
            }
            if omega.sampled_min(0, 0) <= 0.0 {
                return Err(LabError::Construction("ω must be positive".into()));
            }
            ScalarField::zonal(
                axis.clone(),
                Profile::Manufactured {
                    base: Box::new(profile.clone()),
                },
            )
        }
    };
    if k.sampled_min(0, 0) <= 0.0 {
        return Err(LabError::Construction("manufactured K is not positive".into()));
    }
    Ok(k)
}

/// Pointwise residual `L ω − K ω^p` of the critical equation.
pub fn critical_residual(omega: &ScalarField, curvature: &ScalarField, x: &SpherePoint) -> f64 {
    let nf = omega.dim() as f64;
    let p = (nf + 2.0) / (nf - 2.0);
    let w = omega.value(x);
    -omega.laplacian(x) + nf * (nf - 2.0) / 4.0 * w - curvature.value(x) * w.powf(p)
}

// ---------------------------------------------------------------------------
// Quadrature on the sphere
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureKind {
    Zonal1D,
    Bizonal2D,
    MonteCarlo,
}

/// A quadrature rule: kind, node budget, tolerance target and seed.
///
/// For the Gauss rules `nodes` is the order per panel; for Monte Carlo it is
/// the sample count. With `transverse` set, the zonal rule averages each
/// slice over the 2n points ±t_k of the tangent frame (a spherical 3-design),
/// which makes it exact for (zonal) × (polynomial of degree ≤ 3 in the
/// transverse direction), e.g. integrands carrying `x·e_k` factors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub kind: QuadratureKind,
    pub nodes: usize,
    pub tolerance: f64,
    pub seed: u64,
    #[serde(default)]
    pub transverse: bool,
}

impl QuadratureRule {
    pub fn zonal() -> Self {
        Self {
            kind: QuadratureKind::Zonal1D,
            nodes: 20,
            tolerance: 1e-10,
            seed: 0,
            transverse: false,
        }
    }

    /// Zonal rule with the transverse 3-design and a tighter target.
    pub fn zonal_design() -> Self {
        Self {
            kind: QuadratureKind::Zonal1D,
            nodes: 30,
            tolerance: 1e-12,
            seed: 0,
            transverse: true,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_nodes(mut self, nodes: usize) -> Self {
        self.nodes = nodes;
        self
    }

    pub fn bizonal() -> Self {
        Self {
            kind: QuadratureKind::Bizonal2D,
            nodes: 14,
            tolerance: 1e-8,
            seed: 0,
            transverse: false,
        }
    }

    pub fn monte_carlo(samples: usize, seed: u64) -> Self {
        Self {
            kind: QuadratureKind::MonteCarlo,
            nodes: samples,
            tolerance: f64::INFINITY,
            seed,
            transverse: false,
        }
    }

    /// Cheapest rule able to integrate functions that depend on the listed centres only.
    pub fn for_centers(centers: &[Center]) -> Self {
        match distinct_axes(centers).len() {
            0 | 1 => Self::zonal(),
            2 => Self::bizonal(),
            _ => Self::monte_carlo(200_000, 1),
        }
    }
}

/// A distinguished point of an integrand with the length scale on which it varies.
#[derive(Clone, Debug)]
pub struct Center {
    pub point: SpherePoint,
    pub scale: f64,
}

impl Center {
    pub fn smooth(point: SpherePoint) -> Self {
        Self { point, scale: 1.0 }
    }
}

/// Groups centres lying on a common axis (equal or antipodal).
fn distinct_axes(centers: &[Center]) -> Vec<Vec<Center>> {
    let mut groups: Vec<Vec<Center>> = Vec::new();
    for c in centers {
        let mut placed = false;
        for g in groups.iter_mut() {
            let t = g[0].point.dot(&c.point);
            if (t.abs() - 1.0).abs() < 1e-13 {
                g.push(c.clone());
                placed = true;
                break;
            }
        }
        if !placed {
            groups.push(vec![c.clone()]);
        }
    }
    groups
}

/// Foci in the angle from `axis` for the centres of one axis group.
fn axis_foci(axis: &SpherePoint, group: &[Center]) -> Vec<Focus> {
    let mut foci = vec![Focus { at: 0.0, scale: 1.0 }, Focus { at: std::f64::consts::PI, scale: 1.0 }];
    for c in group {
        let at = if c.point.dot(axis) > 0.0 { 0.0 } else { std::f64::consts::PI };
        foci.push(Focus { at, scale: c.scale });
    }
    foci
}

/// Integral over S^n of `f` using the requested rule.
///
/// A zonal rule assumes `f` depends on x only through the angle to the first
/// centre; a bizonal rule assumes dependence only on the angles to the first
/// two distinct axes. Monte Carlo accepts anything and reports its standard error.
pub fn integrate_sphere<F>(f: F, n: usize, centers: &[Center], rule: &QuadratureRule) -> Result<Estimate>
where
    F: Fn(&SpherePoint) -> f64,
{
    integrate_sphere_scaled(
        |x| {
            let v = f(x);
            (v, v.abs())
        },
        n,
        centers,
        rule,
    )
}

/// [`integrate_sphere`] for integrands that are differences of larger terms:
/// `f` returns (value, magnitude) and the tolerance is measured against the
/// integral of the magnitude.
pub fn integrate_sphere_scaled<F>(f: F, n: usize, centers: &[Center], rule: &QuadratureRule) -> Result<Estimate>
where
    F: Fn(&SpherePoint) -> (f64, f64),
{
    let groups = distinct_axes(centers);
    match rule.kind {
        QuadratureKind::Zonal1D => {
            let axis = groups.first().map(|g| g[0].point.clone()).unwrap_or_else(|| SpherePoint::basis(n, 0));
            let foci = groups.first().map(|g| axis_foci(&axis, g)).unwrap_or_default();
            zonal_integral(&f, n, &axis, &foci, rule)
        }
        QuadratureKind::Bizonal2D => {
            if groups.len() < 2 {
                let axis = groups.first().map(|g| g[0].point.clone()).unwrap_or_else(|| SpherePoint::basis(n, 0));
                let foci = groups.first().map(|g| axis_foci(&axis, g)).unwrap_or_default();
                return zonal_integral(&f, n, &axis, &foci, rule);
            }
            bizonal_integral(&f, n, &groups[0], &groups[1], rule)
        }
        QuadratureKind::MonteCarlo => Ok(monte_carlo(&f, n, rule.nodes, rule.seed)),
    }
}

fn precision_check(value: f64, abs_value: f64, error: f64, tol: f64) -> Result<Estimate> {
    if error <= tol * abs_value.max(1e-300) || error == 0.0 {
        Ok(Estimate { value, error })
    } else {
        Err(LabError::Precision {
            estimate: value,
            error,
            tolerance: tol,
        })
    }
}

fn zonal_integral<F>(f: &F, n: usize, axis: &SpherePoint, foci: &[Focus], rule: &QuadratureRule) -> Result<Estimate>
where
    F: Fn(&SpherePoint) -> (f64, f64),
{
    let frame = tangent_frame(axis);
    let dirs: Vec<DVector<f64>> = if rule.transverse {
        frame.iter().flat_map(|t| [t.clone(), -t]).collect()
    } else {
        vec![frame[0].clone()]
    };
    let a = axis.to_vector();
    let area = sphere_area(n - 1);
    let weight = |theta: f64| area * theta.sin().powi(n as i32 - 1);
    let slice = |theta: f64| {
        let (c, s) = (theta.cos(), theta.sin());
        let mut acc = 0.0;
        let mut mag = 0.0;
        for t in &dirs {
            let x = SpherePoint {
                coords: (&a * c + t * s).iter().copied().collect(),
            };
            let (v, m) = f(&x);
            acc += v;
            mag += m;
        }
        (acc / dirs.len() as f64, mag / dirs.len() as f64)
    };
    let mut max_width = 0.25;
    let mut last = None;
    for _ in 0..4 {
        let breaks = graded_breaks(0.0, std::f64::consts::PI, foci, max_width);
        let run = |m: usize| {
            let (xs, ws) = composite_rule(&breaks, m);
            let mut v = 0.0;
            let mut av = 0.0;
            for (x, w) in xs.iter().zip(&ws) {
                let (g, m) = slice(*x);
                let wx = w * weight(*x);
                v += wx * g;
                av += (wx * m).abs();
            }
            (v, av)
        };
        let (fine, abs_fine) = run(rule.nodes.max(4));
        let (coarse, _) = run((rule.nodes * 2 / 3).max(3));
        let err = (fine - coarse).abs();
        match precision_check(fine, abs_fine, err, rule.tolerance) {
            Ok(e) => return Ok(e),
            Err(e) => last = Some(e),
        }
        max_width *= 0.5;
    }
    Err(last.unwrap())
}

/// Fixed zonal node set (points with weights) about one axis, for integrating
/// many integrands on the same nodes.
#[derive(Clone, Debug)]
pub struct SphereGrid {
    pub points: Vec<SpherePoint>,
    pub weights: Vec<f64>,
}

impl SphereGrid {
    /// Graded Gauss rule in the angle from `axis`, refined towards the listed
    /// centres; with `transverse`, each slice carries the ±t_k design.
    pub fn zonal(n: usize, axis: &SpherePoint, centers: &[Center], nodes: usize, max_width: f64, transverse: bool) -> Self {
        let mut group: Vec<Center> = centers
            .iter()
            .filter(|c| (c.point.dot(axis).abs() - 1.0).abs() < 1e-13)
            .cloned()
            .collect();
        if group.is_empty() {
            group.push(Center::smooth(axis.clone()));
        }
        let foci = axis_foci(axis, &group);
        let frame = tangent_frame(axis);
        let dirs: Vec<DVector<f64>> = if transverse {
            frame.iter().flat_map(|t| [t.clone(), -t]).collect()
        } else {
            vec![frame[0].clone()]
        };
        let a = axis.to_vector();
        let area = sphere_area(n - 1);
        let breaks = graded_breaks(0.0, std::f64::consts::PI, &foci, max_width);
        let (xs, ws) = composite_rule(&breaks, nodes);
        let mut points = Vec::with_capacity(xs.len() * dirs.len());
        let mut weights = Vec::with_capacity(xs.len() * dirs.len());
        for (theta, w) in xs.iter().zip(&ws) {
            let (c, s) = (theta.cos(), theta.sin());
            let wt = w * area * s.powi(n as i32 - 1) / dirs.len() as f64;
            for t in &dirs {
                points.push(SpherePoint {
                    coords: (&a * c + t * s).iter().copied().collect(),
                });
                weights.push(wt);
            }
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: Fn(&SpherePoint) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(x, w)| w * f(x)).sum()
    }

    /// Weighted sum of precomputed nodal values.
    pub fn sum(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }
}

fn bizonal_integral<F>(f: &F, n: usize, g1: &[Center], g2: &[Center], rule: &QuadratureRule) -> Result<Estimate>
where
    F: Fn(&SpherePoint) -> (f64, f64),
{
    use std::f64::consts::PI;
    let c1 = g1[0].point.clone();
    let c2 = g2[0].point.clone();
    let a = c1.to_vector();
    let b = c2.to_vector();
    let cosd = c1.dot(&c2);
    let bh = {
        let v = &b - &a * cosd;
        let nv = v.norm();
        v / nv
    };
    // A unit vector orthogonal to both axes.
    let zeta = {
        let mut z = None;
        for k in 0..=n {
            let mut v = DVector::zeros(n + 1);
            v[k] = 1.0;
            v -= &a * a[k];
            v -= &bh * bh[k];
            if v.norm() > 0.5 {
                z = Some(v.normalize());
                break;
            }
        }
        z.expect("n >= 2 leaves room for a third direction")
    };
    let d = chord_angle(&c1, &c2);
    let mut outer_foci = axis_foci(&c1, g1);
    for c in g2 {
        let at = if c.point.dot(&c2) > 0.0 { d } else { PI - d };
        outer_foci.push(Focus { at, scale: c.scale });
    }
    let s2min = g2.iter().map(|c| c.scale).fold(1.0, f64::min);
    let s1min = g1.iter().map(|c| c.scale).fold(1.0, f64::min);
    let area = sphere_area(n - 2);
    let run = |m: usize, max_width: f64| {
        let breaks1 = graded_breaks(0.0, PI, &outer_foci, max_width);
        let (xs1, ws1) = composite_rule(&breaks1, m);
        let mut v = 0.0;
        let mut av = 0.0;
        for (t1, w1) in xs1.iter().zip(&ws1) {
            let st1 = t1.sin();
            let ct1 = t1.cos();
            let inner_scale = (s2min / st1.max(1e-300)).min(1.0).max(1e-12);
            let inner_scale1 = (s1min / st1.max(1e-300)).min(1.0).max(1e-12);
            let inner = [
                Focus { at: 0.0, scale: inner_scale },
                Focus { at: PI, scale: inner_scale.min(inner_scale1) },
                Focus { at: 0.0, scale: inner_scale1 },
            ];
            let breaks2 = graded_breaks(0.0, PI, &inner, max_width);
            let (xs2, ws2) = composite_rule(&breaks2, m);
            let wt1 = w1 * st1.powi(n as i32 - 1) * area;
            for (t2, w2) in xs2.iter().zip(&ws2) {
                let st2 = t2.sin();
                let v3 = &a * ct1 + (&bh * t2.cos() + &zeta * st2) * st1;
                let x = SpherePoint {
                    coords: v3.iter().copied().collect(),
                };
                let wx = wt1 * w2 * st2.powi(n as i32 - 2);
                let (g, m) = f(&x);
                v += wx * g;
                av += (wx * m).abs();
            }
        }
        (v, av)
    };
    let mut max_width = 0.3;
    let mut last = None;
    for _ in 0..3 {
        let (fine, abs_fine) = run(rule.nodes.max(4), max_width);
        let (coarse, _) = run((rule.nodes * 2 / 3).max(3), max_width);
        match precision_check(fine, abs_fine, (fine - coarse).abs(), rule.tolerance) {
            Ok(e) => return Ok(e),
            Err(e) => last = Some(e),
        }
        max_width *= 0.5;
    }
    Err(last.unwrap())
}

fn monte_carlo<F>(f: &F, n: usize, samples: usize, seed: u64) -> Estimate
where
    F: Fn(&SpherePoint) -> (f64, f64),
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let area = sphere_area(n);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..samples {
        let v = f(&random_point(n, &mut rng)).0;
        sum += v;
        sum2 += v * v;
    }
    let m = sum / samples as f64;
    let var = (sum2 / samples as f64 - m * m).max(0.0);
    Estimate {
        value: area * m,
        error: area * (var / samples as f64).sqrt(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn e(n: usize, k: usize) -> SpherePoint {
        SpherePoint::basis(n, k)
    }

    #[test]
    fn distances_of_basis_vectors() {
        let n = 5;
        assert!((geodesic_distance(&e(n, 0), &e(n, 0).antipode()).unwrap() - PI).abs() < 1e-15);
        assert_eq!(geodesic_distance(&e(n, 2), &e(n, 2)).unwrap(), 0.0);
        assert!((geodesic_distance(&e(n, 0), &e(n, 1)).unwrap() - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn non_unit_input_is_rejected() {
        assert!(SpherePoint::new(vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn stereographic_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 7;
        let a = random_point(n, &mut rng);
        assert!(stereo_project(&a, &a).unwrap().norm() < 1e-15);
        let origin = DVector::zeros(n);
        assert!(one_minus_cos(&stereo_lift(&origin, &a).unwrap(), &a) < 1e-30);
        assert!(matches!(stereo_project(&a.antipode(), &a), Err(LabError::PoleSingularity)));
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x = random_point(n, &mut rng);
            let y = stereo_project(&x, &a).unwrap();
            let back = stereo_lift(&y, &a).unwrap();
            worst = worst.max((back.to_vector() - x.to_vector()).amax());
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn perturbation_moves_by_arctan() {
        let n = 4;
        let y = e(n, 0);
        let mut xi = DVector::zeros(n + 1);
        assert_eq!(perturb_point(&y, &xi).unwrap(), y);
        xi[1] = 1e-3;
        let x = perturb_point(&y, &xi).unwrap();
        let d = geodesic_distance(&x, &y).unwrap();
        assert!((d - 1e-3).abs() < 1e-9);
        assert!((d - (1e-3f64).atan()).abs() < 1e-15);
        xi[0] = 0.1;
        assert!(perturb_point(&y, &xi).is_err());
    }

    #[test]
    fn zonal_field_derivatives_are_consistent() {
        let n = 7;
        let axis = SpherePoint::at_angle(n, 0.3);
        let f = ScalarField::zonal_polynomial(axis, vec![1.0, 0.3, -0.2, 0.05]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let x = random_point(n, &mut rng);
            let g = f.gradient(&x);
            assert!(x.dot_vec(&g).abs() < 1e-12);
            let h = f.hessian(&x);
            let frame = tangent_frame(&x);
            let trace: f64 = frame.iter().map(|t| (t.transpose() * &h * t)[(0, 0)]).sum();
            assert!((trace - f.laplacian(&x)).abs() < 1e-10);
            // directional derivative check along a great circle
            let t = &frame[2];
            let h_step: f64 = 1e-5;
            let xp = SpherePoint::from_ambient(&(x.to_vector() * h_step.cos() + t * h_step.sin())).unwrap();
            let xm = SpherePoint::from_ambient(&(x.to_vector() * h_step.cos() - t * h_step.sin())).unwrap();
            let fd = (f.value(&xp) - f.value(&xm)) / (2.0 * h_step);
            assert!((fd - g.dot(t)).abs() < 1e-8);
            let fd2 = (f.value(&xp) - 2.0 * f.value(&x) + f.value(&xm)) / (h_step * h_step);
            assert!((fd2 - (t.transpose() * &h * t)[(0, 0)]).abs() < 1e-4);
        }
    }

    #[test]
    fn manufactured_k_from_constant_and_bubble() {
        let n = 7;
        let nf = n as f64;
        let p = (nf + 2.0) / (nf - 2.0);
        let c = 1.7;
        let k = manufactured_curvature(&ScalarField::constant(n, c)).unwrap();
        assert!((k.value(&e(n, 0)) - nf * (nf - 2.0) / (4.0 * c.powf(p - 1.0))).abs() < 1e-12);
        let bubble = ScalarField::zonal(e(n, 0), Profile::Bubble { lambda: 3.0 });
        let kb = manufactured_curvature(&bubble).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x = random_point(n, &mut rng);
            assert!((kb.value(&x) - 1.0).abs() < 1e-10);
            assert!(kb.laplacian(&x).abs() < 1e-7);
        }
    }

    #[test]
    fn manufactured_k_zero_residual() {
        let n = 7;
        let omega = ScalarField::zonal_polynomial(e(n, 0), vec![1.0, -0.1]);
        let k = manufactured_curvature(&omega).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = random_point(n, &mut rng);
            assert!(critical_residual(&omega, &k, &x).abs() < 1e-10);
        }
        assert!(manufactured_curvature(&ScalarField::constant(n, -1.0)).is_err());
    }

    #[test]
    fn area_and_odd_harmonic() {
        let n = 7;
        let one = integrate_sphere(|_| 1.0, n, &[], &QuadratureRule::zonal()).unwrap();
        let exact = 2.0 * PI.powi(4) / 6.0;
        assert!(((one.value - exact) / exact).abs() < 1e-12);
        let c = e(n, 3);
        let odd = integrate_sphere(|x| x.dot(&c), n, &[Center::smooth(c.clone())], &QuadratureRule::zonal()).unwrap();
        assert!(odd.value.abs() < 1e-12);
    }

    #[test]
    fn bizonal_matches_monte_carlo() {
        let n = 5;
        let c1 = e(n, 0);
        let c2 = SpherePoint::at_angle(n, 1.0);
        let f = |x: &SpherePoint| (1.0 + 0.5 * x.dot(&c1)).powi(2) * (1.0 + 0.3 * x.dot(&c2)).powi(3);
        let centers = [Center::smooth(c1.clone()), Center::smooth(c2.clone())];
        let b = integrate_sphere(f, n, &centers, &QuadratureRule::bizonal()).unwrap();
        let mc = integrate_sphere(f, n, &centers, &QuadratureRule::monte_carlo(400_000, 9)).unwrap();
        assert!((b.value - mc.value).abs() < 3.0 * mc.error, "{} {} {}", b.value, mc.value, mc.error);
    }

    #[test]
    fn rotation_invariance_of_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 6;
        for _ in 0..20 {
            let r = random_rotation(n + 1, &mut rng);
            let x = random_point(n, &mut rng);
            let y = random_point(n, &mut rng);
            let d0 = geodesic_distance(&x, &y).unwrap();
            let d1 = geodesic_distance(&x.rotate(&r), &y.rotate(&r)).unwrap();
            assert!((d0 - d1).abs() < 1e-12);
        }
    }
}
