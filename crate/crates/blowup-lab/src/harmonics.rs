//! Zonal spherical harmonics normalised in H¹, and Galerkin discretisations of
//! axially symmetric fields on a fixed node set.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::constants::conformal_mass;
use crate::functional::SphereFunction;
use crate::sphere::{sphere_area, Center, SphereGrid, SpherePoint};

/// φ_k(x) = C_k^{((n−1)/2)}(x·axis)/h_k for k ≤ degree, with ‖φ_k‖_{H¹} = 1.
///
/// Each φ_k is an eigenfunction of the conformal Laplacian with eigenvalue
/// k(k+n−1) + n(n−2)/4, so the basis is H¹-orthonormal.
#[derive(Clone, Debug)]
pub struct ZonalBasis {
    pub n: usize,
    pub axis: SpherePoint,
    pub degree: usize,
    scale: Vec<f64>,
}

impl ZonalBasis {
    pub fn new(axis: SpherePoint, degree: usize) -> Self {
        let n = axis.dim();
        let nu = (n as f64 - 1.0) / 2.0;
        let area = sphere_area(n - 1);
        let scale = (0..=degree)
            .map(|k| {
                let kf = k as f64;
                // ∫_{S^n} C_k(x·e)² dx
                let ln_l2 = area.ln() + std::f64::consts::PI.ln() + (1.0 - 2.0 * nu) * 2f64.ln() + ln_gamma(kf + 2.0 * nu)
                    - ln_gamma(kf + 1.0)
                    - (kf + nu).ln()
                    - 2.0 * ln_gamma(nu);
                let mu = kf * (kf + n as f64 - 1.0) + conformal_mass(n);
                (-0.5 * (ln_l2 + mu.ln())).exp()
            })
            .collect();
        Self { n, axis, degree, scale }
    }

    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        let kf = k as f64;
        kf * (kf + self.n as f64 - 1.0) + conformal_mass(self.n)
    }

    /// φ_0(x), …, φ_degree(x).
    pub fn values(&self, x: &SpherePoint) -> Vec<f64> {
        self.values_at(x.dot(&self.axis).clamp(-1.0, 1.0))
    }

    pub fn values_at(&self, s: f64) -> Vec<f64> {
        let nu = (self.n as f64 - 1.0) / 2.0;
        let mut c = vec![0.0; self.len()];
        c[0] = 1.0;
        if self.degree >= 1 {
            c[1] = 2.0 * nu * s;
        }
        for k in 2..=self.degree {
            let kf = k as f64;
            c[k] = (2.0 * s * (kf + nu - 1.0) * c[k - 1] - (kf + 2.0 * nu - 2.0) * c[k - 2]) / kf;
        }
        c.iter().zip(&self.scale).map(|(v, h)| v * h).collect()
    }
}

/// Σ c_k φ_k for an H¹-orthonormal zonal basis; ‖·‖_{H¹} = |c|.
#[derive(Clone, Debug)]
pub struct ZonalExpansion {
    pub basis: ZonalBasis,
    pub coeffs: DVector<f64>,
}

impl SphereFunction for ZonalExpansion {
    fn dim(&self) -> usize {
        self.basis.n
    }

    fn value(&self, x: &SpherePoint) -> f64 {
        self.basis.values(x).iter().zip(self.coeffs.iter()).map(|(p, c)| p * c).sum()
    }

    fn conformal_laplacian(&self, x: &SpherePoint) -> f64 {
        self.basis
            .values(x)
            .iter()
            .zip(self.coeffs.iter())
            .enumerate()
            .map(|(k, (p, c))| self.basis.eigenvalue(k) * p * c)
            .sum()
    }

    fn centers(&self) -> Vec<Center> {
        vec![Center::smooth(self.basis.axis.clone())]
    }
}

/// A zonal basis tabulated on a fixed node set.
#[derive(Clone, Debug)]
pub struct ZonalDiscretization {
    pub basis: ZonalBasis,
    pub grid: SphereGrid,
    /// φ_k at node q, stored as (nodes × modes).
    pub table: DMatrix<f64>,
}

impl ZonalDiscretization {
    /// Nodes graded towards the centres on the axis; panel width shrinks with
    /// the degree so that products φ_kφ_l stay resolved.
    pub fn new(axis: SpherePoint, degree: usize, centers: &[Center]) -> Self {
        let n = axis.dim();
        let width = (6.0 / (degree as f64 + 1.0)).min(0.25);
        let grid = SphereGrid::zonal(n, &axis, centers, 24, width, false);
        let basis = ZonalBasis::new(axis, degree);
        let mut table = DMatrix::zeros(grid.len(), basis.len());
        for (q, x) in grid.points.iter().enumerate() {
            for (k, v) in basis.values(x).into_iter().enumerate() {
                table[(q, k)] = v;
            }
        }
        Self { basis, grid, table }
    }

    pub fn modes(&self) -> usize {
        self.basis.len()
    }

    /// Nodal values of a function.
    pub fn sample(&self, f: &dyn Fn(&SpherePoint) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.grid.len(), self.grid.points.iter().map(f))
    }

    /// ∫ g φ_k for nodal values g.
    pub fn project(&self, g: &DVector<f64>) -> DVector<f64> {
        let wg = DVector::from_iterator(g.len(), g.iter().zip(&self.grid.weights).map(|(a, w)| a * w));
        self.table.transpose() * wg
    }

    /// ∫ w φ_k φ_l for nodal weights w.
    pub fn weighted_gram(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let mut scaled = self.table.clone();
        for (q, mut row) in scaled.row_iter_mut().enumerate() {
            row *= w[q] * self.grid.weights[q];
        }
        self.table.transpose() * scaled
    }

    /// Nodal values of Σ c_k φ_k.
    pub fn synthesize(&self, c: &DVector<f64>) -> DVector<f64> {
        &self.table * c
    }

    /// H¹ coefficients ⟨f, φ_k⟩ = ∫ (Lf) φ_k.
    pub fn h1_coefficients(&self, f: &dyn SphereFunction) -> DVector<f64> {
        self.project(&self.sample(&|x| f.conformal_laplacian(x)))
    }

    pub fn expansion(&self, c: DVector<f64>) -> ZonalExpansion {
        ZonalExpansion {
            basis: self.basis.clone(),
            coeffs: c,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bubble::{bubble_eval, BubbleParams};
    use crate::constants::critical_exponent;

    #[test]
    fn basis_is_h1_orthonormal() {
        let n = 7;
        let axis = SpherePoint::basis(n, 0);
        let d = ZonalDiscretization::new(axis, 30, &[]);
        let mu = DVector::from_iterator(d.modes(), (0..d.modes()).map(|k| d.basis.eigenvalue(k)));
        let g = d.weighted_gram(&DVector::from_element(d.grid.len(), 1.0));
        for k in 0..d.modes() {
            for l in 0..d.modes() {
                let h1 = g[(k, l)] * mu[l];
                let expect = if k == l { 1.0 } else { 0.0 };
                assert!((h1 - expect).abs() < 1e-11, "{k} {l} {h1}");
            }
        }
    }

    #[test]
    fn bubble_coefficients_reproduce_its_norm() {
        let n = 7;
        let p = critical_exponent(n);
        let axis = SpherePoint::basis(n, 0);
        let b = BubbleParams::new(axis.clone(), 2.0).unwrap();
        let d = ZonalDiscretization::new(axis, 60, &[b.center()]);
        let c = d.project(&d.sample(&|x| bubble_eval(&b, x).powf(p)));
        let s_n = crate::constants::s_n_closed(n);
        assert!((c.norm_squared() - s_n).abs() < 1e-10 * s_n, "{} vs {}", c.norm_squared(), s_n);
        let e = d.expansion(c);
        let x = SpherePoint::at_angle(n, 0.7);
        assert!((e.value(&x) - bubble_eval(&b, &x)).abs() < 1e-10 * bubble_eval(&b, &x));
    }
}
