//! Uniform quadratic B-splines.
//!
//! A [`SplineGrid`] with `G` intervals on `[lower, upper]` carries the knots
//! `t_j = lower + (j - 2) h`, `j = 0..=G + 4`, i.e. two uniformly extrapolated
//! knots on each side. That yields `G + 2` basis functions.
//!
//! Queries outside `[lower, upper]` are answered by extending the polynomial
//! of the nearest boundary interval, so every basis function (and every spline)
//! is a smooth polynomial continuation beyond the domain. Partition of unity
//! still holds there, non-negativity does not.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};

/// Polynomial degree of every spline in the engine.
pub const DEGREE: usize = 2;

/// Number of basis functions that can be non-zero at one point.
pub const SUPPORT: usize = DEGREE + 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    lower: f64,
    upper: f64,
    intervals: usize,
}

/// Values (or derivatives) of all basis functions at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisVector {
    pub values: Vec<f64>,
}

/// The `SUPPORT` basis functions that may be non-zero at a point, starting at
/// basis index `first`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalBasis {
    pub first: usize,
    pub values: [f64; SUPPORT],
}

impl SplineGrid {
    pub fn new(lower: f64, upper: f64, intervals: usize) -> Result<Self> {
        ensure_finite(lower, "grid lower bound")?;
        ensure_finite(upper, "grid upper bound")?;
        if lower >= upper {
            return Err(invalid(format!(
                "grid lower bound {lower} must be below upper bound {upper}"
            )));
        }
        if intervals == 0 {
            return Err(invalid("grid needs at least one interval"));
        }
        Ok(Self {
            lower,
            upper,
            intervals,
        })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn basis_count(&self) -> usize {
        self.intervals + DEGREE
    }

    /// Knot spacing.
    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / self.intervals as f64
    }

    pub fn knot(&self, j: usize) -> f64 {
        self.lower + (j as f64 - DEGREE as f64) * self.step()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.intervals + 2 * DEGREE + 1)
            .map(|j| self.knot(j))
            .collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    /// Greville abscissae: interpolating a linear function at these points
    /// gives coefficients that reproduce it exactly.
    pub fn greville_abscissae(&self) -> Vec<f64> {
        (0..self.basis_count())
            .map(|i| (1..=DEGREE).map(|k| self.knot(i + k)).sum::<f64>() / DEGREE as f64)
            .collect()
    }

    /// Interior interval whose polynomial pieces are used at `x`.
    fn span(&self, x: f64) -> usize {
        let s = ((x - self.lower) / self.step()).floor();
        if s.is_nan() || s < 0.0 {
            0
        } else {
            (s as usize).min(self.intervals - 1)
        }
    }

    /// Cox-de Boor triangle on the interval `span`, keeping the degree `p - 1`
    /// row so derivatives can be formed from it.
    fn triangle(&self, span: usize, x: f64) -> ([f64; SUPPORT], [f64; DEGREE]) {
        // knot index of the left end of the interval
        let k = span + DEGREE;
        let mut left = [0.0; SUPPORT];
        let mut right = [0.0; SUPPORT];
        let mut n = [0.0; SUPPORT];
        let mut lower_row = [0.0; DEGREE];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - self.knot(k + 1 - j);
            right[j] = self.knot(k + j) - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
            if j == DEGREE - 1 {
                lower_row.copy_from_slice(&n[..DEGREE]);
            }
        }
        (n, lower_row)
    }

    /// Non-zero basis values at `x` without input validation.
    pub fn local_basis(&self, x: f64) -> LocalBasis {
        let span = self.span(x);
        let (values, _) = self.triangle(span, x);
        LocalBasis {
            first: span,
            values,
        }
    }

    /// Non-zero basis values and their derivatives at `x`.
    pub fn local_basis_with_derivative(&self, x: f64) -> (LocalBasis, [f64; SUPPORT]) {
        let span = self.span(x);
        let (values, lower_row) = self.triangle(span, x);
        // uniform knots: d/dx N_{i,p} = (N_{i,p-1} - N_{i+1,p-1}) / h
        let inv_h = 1.0 / self.step();
        let mut deriv = [0.0; SUPPORT];
        for (r, d) in deriv.iter_mut().enumerate() {
            let a = if r >= 1 { lower_row[r - 1] } else { 0.0 };
            let b = if r < DEGREE { lower_row[r] } else { 0.0 };
            *d = (a - b) * inv_h;
        }
        (
            LocalBasis {
                first: span,
                values,
            },
            deriv,
        )
    }

    pub fn basis_at(&self, x: f64) -> Result<BasisVector> {
        ensure_finite(x, "spline argument")?;
        let local = self.local_basis(x);
        Ok(self.scatter(local.first, &local.values))
    }

    pub fn basis_derivative_at(&self, x: f64) -> Result<BasisVector> {
        ensure_finite(x, "spline argument")?;
        let (local, deriv) = self.local_basis_with_derivative(x);
        Ok(self.scatter(local.first, &deriv))
    }

    pub fn eval_spline(&self, coefficients: &[f64], x: f64) -> Result<f64> {
        self.check_coefficients(coefficients)?;
        ensure_finite(x, "spline argument")?;
        Ok(self.eval_unchecked(coefficients, x))
    }

    pub(crate) fn eval_unchecked(&self, coefficients: &[f64], x: f64) -> f64 {
        let local = self.local_basis(x);
        local
            .values
            .iter()
            .zip(&coefficients[local.first..local.first + SUPPORT])
            .map(|(b, c)| b * c)
            .sum()
    }

    pub fn check_coefficients(&self, coefficients: &[f64]) -> Result<()> {
        if coefficients.len() != self.basis_count() {
            return Err(Error::Dimension {
                context: "spline coefficients",
                expected: self.basis_count(),
                got: coefficients.len(),
            });
        }
        Ok(())
    }

    fn scatter(&self, first: usize, local: &[f64; SUPPORT]) -> BasisVector {
        let mut values = vec![0.0; self.basis_count()];
        values[first..first + SUPPORT].copy_from_slice(local);
        BasisVector { values }
    }

    /// Least-squares coefficients for `f` sampled densely on the domain.
    pub fn project(&self, f: impl Fn(f64) -> f64, samples: usize) -> Vec<f64> {
        let n = self.basis_count();
        let mut gram = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        let samples = samples.max(2 * n);
        for s in 0..samples {
            let x = self.lower + (self.upper - self.lower) * s as f64 / (samples - 1) as f64;
            let local = self.local_basis(x);
            let y = f(x);
            for a in 0..SUPPORT {
                let ia = local.first + a;
                rhs[ia] += local.values[a] * y;
                for b in 0..SUPPORT {
                    gram[ia][local.first + b] += local.values[a] * local.values[b];
                }
            }
        }
        crate::linalg::solve(gram, rhs).expect("spline Gram matrix is positive definite")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Definitional Cox-de Boor recursion over the full knot vector, valid
    /// inside `[lower, upper)` only.
    fn cox_de_boor(knots: &[f64], i: usize, p: usize, x: f64) -> f64 {
        if p == 0 {
            return if knots[i] <= x && x < knots[i + 1] {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let d1 = knots[i + p] - knots[i];
        if d1 != 0.0 {
            v += (x - knots[i]) / d1 * cox_de_boor(knots, i, p - 1, x);
        }
        let d2 = knots[i + p + 1] - knots[i + 1];
        if d2 != 0.0 {
            v += (knots[i + p + 1] - x) / d2 * cox_de_boor(knots, i + 1, p - 1, x);
        }
        v
    }

    fn oracle_basis(grid: &SplineGrid, x: f64) -> Vec<f64> {
        let knots = grid.knots();
        (0..grid.basis_count())
            .map(|i| cox_de_boor(&knots, i, DEGREE, x))
            .collect()
    }

    fn unit(g: usize) -> SplineGrid {
        SplineGrid::new(0.0, 1.0, g).unwrap()
    }

    #[test]
    fn knot_layout() {
        let grid = unit(5);
        let knots = grid.knots();
        assert_eq!(knots.len(), 5 + 2 * DEGREE + 1);
        assert_eq!(grid.basis_count(), 7);
        assert!((knots[0] + 0.4).abs() < 1e-15);
        assert!((knots[2] - 0.0).abs() < 1e-15);
        assert!((knots[7] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SplineGrid::new(1.0, 1.0, 3).is_err());
        assert!(SplineGrid::new(0.0, 1.0, 0).is_err());
        assert!(SplineGrid::new(f64::NAN, 1.0, 3).is_err());
    }

    #[test]
    fn single_interval_partition_of_unity() {
        let b = unit(1).basis_at(0.5).unwrap();
        assert_eq!(b.values.len(), 3);
        let s: f64 = b.values.iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
        // closed-form pieces at u = 0.5: (1-u)^2/2, (-2u^2+2u+1)/2, u^2/2
        let expect = [0.125, 0.75, 0.125];
        for (a, e) in b.values.iter().zip(expect) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_recursive_oracle() {
        let grid = unit(5);
        for x in [0.37, 0.0, 0.42, 0.999, 0.2] {
            let b = grid.basis_at(x).unwrap();
            let o = oracle_basis(&grid, x);
            for (a, e) in b.values.iter().zip(&o) {
                assert!((a - e).abs() < 1e-14, "x={x}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn non_finite_argument_is_rejected() {
        let grid = unit(5);
        assert!(matches!(grid.basis_at(f64::NAN), Err(Error::InvalidInput(_))));
        assert!(grid.basis_derivative_at(f64::INFINITY).is_err());
        assert!(grid.eval_spline(&[0.0; 7], f64::NAN).is_err());
    }

    #[test]
    fn derivative_closed_form_single_interval() {
        // h = 1, u = x: derivatives are (u-1), (1-2u), u
        let d = unit(1).basis_derivative_at(0.5).unwrap();
        let expect = [-0.5, 0.0, 0.5];
        for (a, e) in d.values.iter().zip(expect) {
            assert!((a - e).abs() < 1e-14);
        }
    }

    #[test]
    fn derivative_matches_central_difference() {
        let grid = unit(5);
        let x = 0.37;
        let step = 1e-6;
        let d = grid.basis_derivative_at(x).unwrap();
        let hi = grid.basis_at(x + step).unwrap();
        let lo = grid.basis_at(x - step).unwrap();
        let sum: f64 = d.values.iter().sum();
        assert!(sum.abs() < 1e-12);
        for k in 0..grid.basis_count() {
            let fd = (hi.values[k] - lo.values[k]) / (2.0 * step);
            assert!((fd - d.values[k]).abs() < 1e-5);
        }
    }

    #[test]
    fn spline_evaluation() {
        let grid = unit(5);
        assert_eq!(grid.eval_spline(&[0.0; 7], 0.3).unwrap(), 0.0);
        let c = [2.5; 7];
        for x in [0.0, 0.25, 0.5, 1.0] {
            assert!((grid.eval_spline(&c, x).unwrap() - 2.5).abs() < 1e-14);
        }
        let coef = [0.3, -1.2, 0.8, 2.0, -0.4, 1.1, 0.05];
        let x = 0.42;
        let o: f64 = oracle_basis(&grid, x)
            .iter()
            .zip(coef)
            .map(|(b, c)| b * c)
            .sum();
        assert!((grid.eval_spline(&coef, x).unwrap() - o).abs() < 1e-14);
        assert!(matches!(
            grid.eval_spline(&coef[..6], x),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn extension_is_polynomial_continuation() {
        let grid = unit(4);
        let coef = [0.3, -1.2, 0.8, 2.0, -0.4, 1.1];
        // the first interval's quadratic piece, recovered from three interior points
        let f = |x: f64| grid.eval_spline(&coef, x).unwrap();
        let (x0, x1, x2) = (0.02, 0.1, 0.2);
        let lagrange = |x: f64| {
            f(x0) * (x - x1) * (x - x2) / ((x0 - x1) * (x0 - x2))
                + f(x1) * (x - x0) * (x - x2) / ((x1 - x0) * (x1 - x2))
                + f(x2) * (x - x0) * (x - x1) / ((x2 - x0) * (x2 - x1))
        };
        for x in [-0.5, -0.1, -2.0] {
            assert!((f(x) - lagrange(x)).abs() < 1e-10);
        }
        let b = grid.basis_at(-3.0).unwrap();
        assert!((b.values.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn partition_nonnegativity_locality() {
        for g in [1, 3, 5, 12] {
            let grid = SplineGrid::new(-2.0, 3.0, g).unwrap();
            for s in 0..1000 {
                let x = -2.0 + 5.0 * s as f64 / 999.0;
                let b = grid.basis_at(x).unwrap();
                assert!((b.values.iter().sum::<f64>() - 1.0).abs() < 1e-10);
                assert!(b.values.iter().all(|&v| v >= -1e-12));
                assert!(b.values.iter().filter(|v| v.abs() > 0.0).count() <= SUPPORT);
            }
        }
    }

    #[test]
    fn greville_reproduces_linear() {
        let grid = SplineGrid::new(-1.5, 2.0, 6).unwrap();
        let f = |x: f64| 1.7 * x - 0.3;
        let coef: Vec<f64> = grid.greville_abscissae().into_iter().map(f).collect();
        for s in 0..200 {
            let x = -1.5 + 3.5 * s as f64 / 199.0;
            assert!((grid.eval_spline(&coef, x).unwrap() - f(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_reproduces_quadratic() {
        let grid = SplineGrid::new(-1.0, 1.0, 5).unwrap();
        let f = |x: f64| 0.5 * x * x - x + 2.0;
        let coef = grid.project(f, 400);
        for x in [-1.0, -0.3, 0.0, 0.77, 1.0] {
            assert!((grid.eval_spline(&coef, x).unwrap() - f(x)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn derivative_consistency(x in 0.001f64..0.999, g in 1usize..10) {
            let grid = unit(g);
            let step = 1e-6;
            let d = grid.basis_derivative_at(x).unwrap();
            let hi = grid.basis_at(x + step).unwrap();
            let lo = grid.basis_at(x - step).unwrap();
            for k in 0..grid.basis_count() {
                let fd = (hi.values[k] - lo.values[k]) / (2.0 * step);
                let scale = d.values[k].abs().max(1.0);
                prop_assert!((fd - d.values[k]).abs() / scale < 1e-5);
            }
        }

        #[test]
        fn oracle_agreement(x in 0.0f64..0.9999, g in 1usize..10) {
            let grid = unit(g);
            let b = grid.basis_at(x).unwrap();
            let o = oracle_basis(&grid, x);
            for (a, e) in b.values.iter().zip(&o) {
                prop_assert!((a - e).abs() < 1e-12);
            }
        }
    }
}
