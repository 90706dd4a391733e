//! The power weight `rho` around source points and rho-weighted norms.

use crate::fem::FeFunction;
use crate::mesh::SourceSet;
use crate::quadrature::{ElementQuadrature, GradedRule};
use crate::{Error, Point, Result};

/// Default number of geometric halvings toward a source.
pub const DEFAULT_DEPTH: usize = 12;

/// Per-fragment exactness of the weighted-norm quadrature.
const FRAGMENT_DEGREE: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSpec {
    alpha: f64,
    dim: usize,
    sources: Vec<Point>,
    separation: f64,
}

impl WeightSpec {
    /// Rejects exponents outside `(dim - 2, 2)`.
    pub fn new(alpha: f64, dim: usize, sources: &SourceSet) -> Result<Self> {
        check_alpha(alpha, dim)?;
        Ok(Self { alpha, dim, sources: sources.points().to_vec(), separation: sources.separation() })
    }

    /// Builds a spec from raw data without validating the exponent range.
    pub fn from_parts(alpha: f64, dim: usize, sources: Vec<Point>, separation: f64) -> Self {
        Self { alpha, dim, sources, separation }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sources(&self) -> &[Point] {
        &self.sources
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    /// `|x - z|^alpha` for a single source; with several sources, the same
    /// power near the source closer than `d_D / 2` and 1 elsewhere.
    pub fn rho(&self, x: &Point) -> f64 {
        if self.sources.len() == 1 {
            return (x - self.sources[0]).norm().powf(self.alpha);
        }
        let half = 0.5 * self.separation;
        self.sources
            .iter()
            .map(|z| (x - z).norm())
            .find(|&r| r < half)
            .map_or(1.0, |r| r.powf(self.alpha))
    }

    /// Element quadrature that grades toward every source; `apex_exponent`
    /// is the power of the integrand at the sources (without Jacobian).
    fn quadrature(&self, depth: usize, apex_exponent: Option<f64>) -> Result<ElementQuadrature> {
        let mut graded = GradedRule::new(self.dim, FRAGMENT_DEGREE, depth)?;
        if let Some(e) = apex_exponent {
            graded = graded.with_tip_exponent(e + self.dim as f64 - 1.0)?;
        }
        Ok(ElementQuadrature::new(self.dim, FRAGMENT_DEGREE)?
            .with_singular_points(&self.sources)
            .with_graded(graded))
    }
}

/// Validates `alpha` against `(dim - 2, 2)`.
pub fn check_alpha(alpha: f64, dim: usize) -> Result<()> {
    let lo = dim as f64 - 2.0;
    if alpha > lo && alpha < 2.0 {
        Ok(())
    } else {
        Err(Error::AlphaOutOfRange { alpha, lo, dim })
    }
}

pub fn rho(x: &Point, spec: &WeightSpec) -> f64 {
    spec.rho(x)
}

/// `int rho g` for a field `g` bounded near the sources.
pub fn weighted_integral<G: Fn(&Point) -> f64>(
    mesh: &crate::mesh::SimplicialMesh,
    spec: &WeightSpec,
    depth: usize,
    field: G,
) -> Result<f64> {
    let quad = spec.quadrature(depth, Some(spec.alpha))?;
    Ok((0..mesh.n_elements()).map(|t| quad.integrate(mesh, t, |x| spec.rho(x) * field(x))).sum())
}

/// `(int rho |exact_gradient - grad f|^2)^(1/2)`, graded toward the sources.
pub fn weighted_grad_error<G: Fn(&Point) -> Point>(
    f: &FeFunction,
    exact_gradient: G,
    spec: &WeightSpec,
    depth: usize,
) -> Result<f64> {
    let mesh = f.mesh();
    let n = spec.dim as f64;
    let quad = spec.quadrature(depth, Some(spec.alpha + 2.0 - 2.0 * n))?;
    let mut total = 0.0;
    for t in 0..mesh.n_elements() {
        let gh = f.gradient(t);
        total += quad.integrate(mesh, t, |x| spec.rho(x) * (exact_gradient(x) - gh).norm_squared());
    }
    Ok(total.sqrt())
}

/// `|v|_{L2} / |grad v|_{L2(rho)}` for a discrete `v`.
pub fn weighted_poincare_probe(f: &FeFunction, spec: &WeightSpec) -> Result<f64> {
    let mesh = f.mesh();
    let quad = spec.quadrature(DEFAULT_DEPTH, Some(spec.alpha))?;
    let plain = ElementQuadrature::new(spec.dim, 2)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..mesh.n_elements() {
        let g2 = f.gradient(t).norm_squared();
        if g2 > 0.0 {
            den += g2 * quad.integrate(mesh, t, |x| spec.rho(x));
        }
        num += plain.integrate(mesh, t, |x| f.evaluate_in(t, x).powi(2));
    }
    if !(den > 0.0) {
        return Err(Error::ZeroGradient);
    }
    Ok((num / den).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::P1Space;
    use crate::mesh::{build_initial_mesh, uniform_refine, DomainPreset, SimplicialMesh};
    use crate::quadrature::gauss_legendre_unit;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    fn unit_square(levels: usize) -> SimplicialMesh {
        let mut m = build_initial_mesh(DomainPreset::UnitSquare);
        for _ in 0..levels {
            m = uniform_refine(&m);
        }
        m
    }

    #[test]
    fn rho_branches() {
        let two = WeightSpec::from_parts(1.5, 2, vec![p2(0.25, 0.25), p2(0.75, 0.75)], 0.25);
        // far from both sources: second branch
        assert_eq!(two.rho(&p2(0.25, 0.75)), 1.0);
        assert_eq!(two.rho(&p2(0.25, 0.25)), 0.0);
        // inside d_D / 2 of the first source: first branch
        assert_relative_eq!(two.rho(&p2(0.3, 0.25)), 0.05f64.powf(1.5), epsilon = 1e-15);
        // exactly at d_D / 2: strict inequality selects the constant branch
        assert_eq!(two.rho(&p2(0.375, 0.25)), 1.0);
        let one = WeightSpec::from_parts(1.0, 2, vec![p2(0.5, 0.5)], 0.5);
        assert_relative_eq!(one.rho(&p2(0.5, 0.75)), 0.25, epsilon = 1e-15);
        assert_relative_eq!(one.rho(&p2(0.0, 0.0)), 0.5f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn alpha_range_is_enforced() {
        assert!(check_alpha(1.0, 2).is_ok());
        assert!(check_alpha(0.0, 2).is_err());
        assert!(check_alpha(2.0, 2).is_err());
        assert!(check_alpha(0.5, 3).is_err());
        assert!(check_alpha(1.99, 3).is_ok());
        let m = unit_square(0);
        let src = SourceSet::new(&m, vec![p2(0.5, 0.5)]).unwrap();
        assert!(matches!(WeightSpec::new(3.0, 2, &src), Err(Error::AlphaOutOfRange { .. })));
    }

    /// int over the square of half-width `r0` centred at the source of
    /// `|x - z|^alpha`, by polar coordinates: 8 int_0^{pi/4} (r0/cos)^(a+2)/(a+2).
    fn polar_square_oracle(alpha: f64, r0: f64) -> f64 {
        let (x, w) = gauss_legendre_unit(40);
        let q = std::f64::consts::FRAC_PI_4;
        8.0 * x.iter().zip(&w).map(|(s, w)| w * q * (r0 / (s * q).cos()).powf(alpha + 2.0) / (alpha + 2.0)).sum::<f64>()
    }

    #[test]
    fn graded_weight_integral_matches_polar_oracle() {
        let m = unit_square(3);
        for alpha in [0.1, 1.0, 1.5, 1.9] {
            let spec = WeightSpec::from_parts(alpha, 2, vec![p2(0.5, 0.5)], 0.5);
            let got = weighted_integral(&m, &spec, DEFAULT_DEPTH, |_| 1.0).unwrap();
            assert_relative_eq!(got, polar_square_oracle(alpha, 0.5), max_relative = 1e-6);
        }
    }

    #[test]
    fn singular_gradient_error_matches_radial_oracle() {
        // e = grad log r: rho |e|^2 = r^(alpha-2); same square oracle with alpha - 2
        let m = unit_square(2);
        let space = P1Space::new(Arc::new(m));
        let zero = space.function(vec![0.0; space.n_dofs()]);
        let z = p2(0.5, 0.5);
        let alpha = 0.5;
        let spec = WeightSpec::from_parts(alpha, 2, vec![z], 0.5);
        let got = weighted_grad_error(&zero, |x| (x - z) / (x - z).norm_squared(), &spec, DEFAULT_DEPTH).unwrap();
        // neighbours of the source elements see r^-1.5 with a fixed-degree rule
        assert_relative_eq!(got * got, polar_square_oracle(alpha - 2.0, 0.5), max_relative = 1e-5);
    }

    #[test]
    fn identical_gradients_give_zero() {
        let space = P1Space::new(Arc::new(unit_square(2)));
        let f = space.interpolate(|p| 2.0 * p.x - p.y);
        let spec = WeightSpec::from_parts(1.0, 2, vec![p2(0.3, 0.6)], 0.3);
        let e = weighted_grad_error(&f, |_| Point::new(2.0, -1.0, 0.0), &spec, DEFAULT_DEPTH).unwrap();
        assert!(e < 1e-13);
    }

    #[test]
    fn poincare_probe() {
        let space = P1Space::new(Arc::new(unit_square(2)));
        let spec = WeightSpec::from_parts(1.0, 2, vec![p2(0.9, 0.9)], 0.1);
        let zero = space.function(vec![0.0; space.n_dofs()]);
        assert!(matches!(weighted_poincare_probe(&zero, &spec), Err(Error::ZeroGradient)));
        let centre = space.free_dofs()[0];
        let hat = space.function((0..space.n_dofs()).map(|v| if v == centre { 1.0 } else { 0.0 }).collect());
        let r = weighted_poincare_probe(&hat, &spec).unwrap();
        assert!(r.is_finite() && r > 0.0 && r < 10.0, "{r}");
    }

    proptest! {
        #[test]
        fn weighted_error_is_homogeneous(c in -4.0f64..4.0) {
            let space = P1Space::new(Arc::new(unit_square(2)));
            let spec = WeightSpec::from_parts(1.5, 2, vec![p2(0.4, 0.45)], 0.4);
            let f = space.interpolate(|p| (3.0 * p.x).sin() * p.y);
            let fc = space.function(f.values().iter().map(|v| c * v).collect());
            let g = |x: &Point| Point::new(x.y.cos(), x.x, 0.0);
            let base = weighted_grad_error(&f, g, &spec, 8).unwrap();
            let scaled = weighted_grad_error(&fc, |x| g(x) * c, &spec, 8).unwrap();
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-12 * base.max(1.0));
        }

        #[test]
        fn rho_follows_the_active_branch(x in 0.0f64..1.0, y in 0.0f64..1.0) {
            let z = [p2(0.25, 0.25), p2(0.75, 0.75)];
            let spec = WeightSpec::from_parts(1.5, 2, z.to_vec(), 0.25);
            let p = p2(x, y);
            let near: Vec<f64> = z.iter().map(|s| (p - s).norm()).filter(|&r| r < 0.125).collect();
            prop_assert!(near.len() <= 1);
            let expect = near.first().map_or(1.0, |r| r.powf(1.5));
            prop_assert_eq!(spec.rho(&p), expect);
        }
    }
}
