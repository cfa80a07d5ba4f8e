//! Regression bases: polynomial, truncated-power splines and clamped
//! B-splines. A basis expands each abscissa into a design-matrix row.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which family of basis functions to expand the abscissas with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    /// Plain monomials `1, x, ..., x^degree`.
    Polynomial,
    /// Truncated power basis: monomials plus `(x - t)_+^degree` per knot.
    Spline,
    /// Clamped B-splines of order `degree + 1`.
    Bspline,
}

/// Interior knots: either a count (placed at equal widths) or explicit
/// positions strictly inside the data domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Knots<F> {
    Count(usize),
    Positions(Vec<F>),
}

/// A fully specified basis. `knots` is ignored for `Polynomial`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec<F> {
    pub kind: BasisKind,
    pub degree: usize,
    pub knots: Knots<F>,
}

impl<F: Scalar> BasisSpec<F> {
    pub fn polynomial(degree: usize) -> Self {
        Self {
            kind: BasisKind::Polynomial,
            degree,
            knots: Knots::Count(0),
        }
    }

    pub fn spline(degree: usize, knots: Knots<F>) -> Self {
        Self {
            kind: BasisKind::Spline,
            degree,
            knots,
        }
    }

    pub fn bspline(degree: usize, knots: Knots<F>) -> Self {
        Self {
            kind: BasisKind::Bspline,
            degree,
            knots,
        }
    }

    /// Interior knot positions for the domain `(lo, hi)`.
    ///
    /// A `Count(l)` places `l` knots at equal widths; explicit positions
    /// must be strictly increasing and strictly inside the domain.
    pub fn resolve_knots(&self, lo: F, hi: F) -> Result<Vec<F>> {
        if !(hi > lo) {
            return Err(Error::DegenerateDomain);
        }
        if self.kind == BasisKind::Polynomial {
            return Ok(Vec::new());
        }
        match &self.knots {
            Knots::Count(l) => {
                let lf = F::fl((*l + 1) as f64);
                Ok((1..=*l)
                    .map(|i| lo + (hi - lo) * F::fl(i as f64) / lf)
                    .collect())
            }
            Knots::Positions(pos) => {
                for w in pos.windows(2) {
                    if w[1] <= w[0] {
                        return Err(Error::InvalidConfig(format!(
                            "knots must be strictly increasing, got {} then {}",
                            w[0].as_f64(),
                            w[1].as_f64()
                        )));
                    }
                }
                for &t in pos {
                    if t <= lo || t >= hi {
                        return Err(Error::KnotOutsideDomain {
                            knot: t.as_f64(),
                            lo: lo.as_f64(),
                            hi: hi.as_f64(),
                        });
                    }
                }
                Ok(pos.clone())
            }
        }
    }

    /// Number of basis functions (design-matrix columns).
    pub fn dimension(&self) -> usize {
        let l = match (&self.kind, &self.knots) {
            (BasisKind::Polynomial, _) => 0,
            (_, Knots::Count(l)) => *l,
            (_, Knots::Positions(pos)) => pos.len(),
        };
        self.degree + 1 + l
    }

    /// Expand `xs` into an `xs.len() x dimension()` design matrix over
    /// the domain `(lo, hi)`.
    pub fn design(&self, xs: &[F], lo: F, hi: F) -> Result<DMatrix<F>> {
        let interior = self.resolve_knots(lo, hi)?;
        let p = self.dimension();
        let m = xs.len();
        match self.kind {
            BasisKind::Polynomial => {
                let mut out = DMatrix::zeros(m, p);
                for (i, &x) in xs.iter().enumerate() {
                    let mut pow = F::one();
                    for j in 0..p {
                        out[(i, j)] = pow;
                        pow *= x;
                    }
                }
                Ok(out)
            }
            BasisKind::Spline => {
                let mut out = DMatrix::zeros(m, p);
                for (i, &x) in xs.iter().enumerate() {
                    let mut pow = F::one();
                    for j in 0..=self.degree {
                        out[(i, j)] = pow;
                        pow *= x;
                    }
                    for (j, &t) in interior.iter().enumerate() {
                        let col = self.degree + 1 + j;
                        out[(i, col)] = truncated_power(x, t, self.degree);
                    }
                }
                Ok(out)
            }
            BasisKind::Bspline => {
                let order = self.degree + 1;
                // clamped knot vector: `order` copies of each boundary
                let mut knots = Vec::with_capacity(2 * order + interior.len());
                knots.extend(std::iter::repeat(lo).take(order));
                knots.extend(interior.iter().copied());
                knots.extend(std::iter::repeat(hi).take(order));
                let mut out = DMatrix::zeros(m, p);
                for (i, &x) in xs.iter().enumerate() {
                    let (span, vals) = bspline_nonzero(x, &knots, order, p);
                    for (off, &v) in vals.iter().enumerate() {
                        out[(i, span + 1 - order + off)] = v;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// `(x - t)_+^d`; for `d = 0` this is the indicator of `x >= t`.
fn truncated_power<F: Scalar>(x: F, t: F, d: usize) -> F {
    if x < t {
        return F::zero();
    }
    if d == 0 {
        return F::one();
    }
    (x - t).powi(d as i32)
}

/// Evaluate the `order` nonzero B-splines at `x` on a clamped knot
/// vector. Returns the knot span index and the nonzero values in basis
/// order. `x` outside the domain clamps to the nearest boundary.
fn bspline_nonzero<F: Scalar>(x: F, knots: &[F], order: usize, p: usize) -> (usize, Vec<F>) {
    let lo = knots[0];
    let hi = knots[knots.len() - 1];
    let x = if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    };
    // span s with knots[s] <= x < knots[s+1], clamped so the last basis
    // function owns x == hi
    let mut span = order - 1;
    while span < p - 1 && x >= knots[span + 1] {
        span += 1;
    }
    // Cox-de Boor in the triangular form with `left`/`right` differences
    let mut vals = vec![F::zero(); order];
    vals[0] = F::one();
    let mut left = vec![F::zero(); order];
    let mut right = vec![F::zero(); order];
    for j in 1..order {
        left[j] = x - knots[span + 1 - j];
        right[j] = knots[span + j] - x;
        let mut saved = F::zero();
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let term = if denom > F::zero() {
                vals[r] / denom
            } else {
                F::zero()
            };
            vals[r] = saved + right[r + 1] * term;
            saved = left[j - r] * term;
        }
        vals[j] = saved;
    }
    (span, vals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_design_is_vandermonde() {
        let spec = BasisSpec::<f64>::polynomial(2);
        let d = spec.design(&[0.0, 1.0, 2.0], 0.0, 2.0).unwrap();
        assert_eq!(d.nrows(), 3);
        assert_eq!(d.ncols(), 3);
        assert_eq!(d[(2, 0)], 1.0);
        assert_eq!(d[(2, 1)], 2.0);
        assert_eq!(d[(2, 2)], 4.0);
    }

    #[test]
    fn knot_count_places_equal_widths() {
        let spec = BasisSpec::<f64>::spline(1, Knots::Count(3));
        let k = spec.resolve_knots(0.0, 4.0).unwrap();
        assert_eq!(k, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn knot_outside_domain_is_rejected() {
        let spec = BasisSpec::<f64>::spline(1, Knots::Positions(vec![5.0]));
        assert!(matches!(
            spec.design(&[0.0, 1.0], 0.0, 4.0).unwrap_err(),
            Error::KnotOutsideDomain { .. }
        ));
    }

    #[test]
    fn degenerate_domain_is_rejected() {
        let spec = BasisSpec::<f64>::spline(1, Knots::Count(1));
        assert!(matches!(
            spec.design(&[1.0], 1.0, 1.0).unwrap_err(),
            Error::DegenerateDomain
        ));
    }

    #[test]
    fn truncated_power_degree_zero_is_step() {
        let spec = BasisSpec::<f64>::spline(0, Knots::Positions(vec![1.0]));
        let d = spec.design(&[0.5, 1.0, 1.5], 0.0, 2.0).unwrap();
        // columns: constant, indicator(x >= 1)
        assert_eq!(d.column(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn truncated_power_is_continuous_for_degree_one() {
        let spec = BasisSpec::<f64>::spline(1, Knots::Positions(vec![1.0]));
        let eps = 1e-9;
        let d = spec.design(&[1.0 - eps, 1.0 + eps], 0.0, 2.0).unwrap();
        assert!((d[(0, 2)] - d[(1, 2)]).abs() < 1e-8);
    }

    #[test]
    fn bsplines_partition_unity_and_stay_nonnegative() {
        let spec = BasisSpec::<f64>::bspline(3, Knots::Count(3));
        let xs: Vec<f64> = (0..=50).map(|i| i as f64 / 50.0 * 4.0).collect();
        let d = spec.design(&xs, 0.0, 4.0).unwrap();
        assert_eq!(d.ncols(), 7); // 3 interior + order 4
        for i in 0..d.nrows() {
            let row: f64 = d.row(i).iter().sum();
            assert!((row - 1.0).abs() < 1e-12, "row {i} sums to {row}");
            assert!(d.row(i).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn bspline_without_interior_knots_is_bernstein() {
        let spec = BasisSpec::<f64>::bspline(2, Knots::Count(0));
        let xs = [0.0, 0.25, 0.5, 1.0];
        let d = spec.design(&xs, 0.0, 1.0).unwrap();
        for (i, &x) in xs.iter().enumerate() {
            let b = [(1.0 - x) * (1.0 - x), 2.0 * x * (1.0 - x), x * x];
            for j in 0..3 {
                assert!((d[(i, j)] - b[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bspline_boundary_values_are_interpolating() {
        let spec = BasisSpec::<f64>::bspline(3, Knots::Count(2));
        let d = spec.design(&[0.0, 1.0], 0.0, 1.0).unwrap();
        assert!((d[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((d[(1, d.ncols() - 1)] - 1.0).abs() < 1e-12);
    }
}
