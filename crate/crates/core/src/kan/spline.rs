use crate::error::{Error, Result};

/// Cox–de Boor basis of the given degree over an arbitrary knot vector.
///
/// With `knots.len() = m + 1` there are `m − degree` basis functions, and
/// they form a partition of unity on `[knots[degree], knots[m − degree]]`.
/// `x` is clamped to that interval first.
pub fn bspline_basis(x: f64, knots: &[f64], degree: usize) -> Result<Vec<f64>> {
    check_knots(knots, degree)?;
    if !x.is_finite() {
        return Err(Error::domain("bspline_basis needs a finite x"));
    }
    Ok(basis_tables(x, knots, degree).0)
}

fn check_knots(knots: &[f64], degree: usize) -> Result<()> {
    if knots.len() < 2 * degree + 2 {
        return Err(Error::domain(format!(
            "degree {degree} needs at least {} knots, got {}",
            2 * degree + 2,
            knots.len()
        )));
    }
    if let Some(i) = knots.windows(2).position(|w| !(w[0] < w[1])) {
        return Err(Error::domain(format!(
            "knot vector must be strictly increasing (knots[{i}] = {}, knots[{}] = {})",
            knots[i],
            i + 1,
            knots[i + 1]
        )));
    }
    Ok(())
}

/// Returns `(B_k, B_{k-1}, clamped)` where `B_{k-1}` is empty for `k = 0`.
fn basis_tables(x: f64, knots: &[f64], degree: usize) -> (Vec<f64>, Vec<f64>, bool) {
    let last = knots.len() - 1;
    let lo = knots[degree];
    let hi = knots[last - degree];
    let clamped = !(x > lo && x < hi);
    let x = x.clamp(lo, hi);

    // Degree 0: indicator of the knot span holding x; the right end of the
    // domain belongs to the last interior span.
    let mut span = degree;
    while span < last - degree - 1 && x >= knots[span + 1] {
        span += 1;
    }
    let mut cur = vec![0.0; last];
    cur[span] = 1.0;
    let mut prev = Vec::new();

    for p in 1..=degree {
        let count = last - p;
        let mut next = vec![0.0; count];
        for (i, slot) in next.iter_mut().enumerate() {
            let left = if cur[i] != 0.0 {
                (x - knots[i]) / (knots[i + p] - knots[i]) * cur[i]
            } else {
                0.0
            };
            let right = if cur[i + 1] != 0.0 {
                (knots[i + p + 1] - x) / (knots[i + p + 1] - knots[i + 1]) * cur[i + 1]
            } else {
                0.0
            };
            *slot = left + right;
        }
        prev = std::mem::replace(&mut cur, next);
    }
    (cur, prev, clamped)
}

/// Uniform knot vector shared by every edge function of a layer.
///
/// `intervals` equal spans cover `[-extent, extent]`; `degree` extra knots on
/// each side give `intervals + degree` basis functions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineGrid {
    knots: Vec<f64>,
    degree: usize,
    intervals: usize,
    extent: f64,
}

impl SplineGrid {
    pub fn uniform(intervals: usize, degree: usize, extent: f64) -> Result<Self> {
        if intervals == 0 {
            return Err(Error::domain("spline grid needs at least one interval"));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(Error::domain(format!("grid extent must be positive, got {extent}")));
        }
        let h = 2.0 * extent / intervals as f64;
        let knots = (0..=intervals + 2 * degree)
            .map(|m| -extent + (m as f64 - degree as f64) * h)
            .collect();
        Ok(Self {
            knots,
            degree,
            intervals,
            extent,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    /// `G + k`
    pub fn num_basis(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn basis(&self, x: f64) -> Vec<f64> {
        basis_tables(x, &self.knots, self.degree).0
    }

    /// Basis values and their derivatives in `x`. Derivatives are zero when
    /// `x` is at or beyond the grid extent, where the input is clamped.
    pub fn basis_and_derivative(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let (b, lower, clamped) = basis_tables(x, &self.knots, self.degree);
        let k = self.degree;
        let mut d = vec![0.0; b.len()];
        if k > 0 && !clamped {
            let t = &self.knots;
            for (i, di) in d.iter_mut().enumerate() {
                let left = k as f64 / (t[i + k] - t[i]) * lower[i];
                let right = k as f64 / (t[i + k + 1] - t[i + 1]) * lower[i + 1];
                *di = left - right;
            }
        }
        (b, d)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn silu_derivative(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// One learnable edge function `φ(x) = w_b·silu(x) + w_s·Σ_m c_m B_m(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineFunction {
    pub grid: SplineGrid,
    pub coefficients: Vec<f64>,
    pub base_weight: f64,
    pub spline_weight: f64,
}

impl SplineFunction {
    pub fn new(grid: SplineGrid, coefficients: Vec<f64>, base_weight: f64, spline_weight: f64) -> Result<Self> {
        if coefficients.len() != grid.num_basis() {
            return Err(Error::domain(format!(
                "spline needs {} coefficients, got {}",
                grid.num_basis(),
                coefficients.len()
            )));
        }
        Ok(Self {
            grid,
            coefficients,
            base_weight,
            spline_weight,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let b = self.grid.basis(x);
        let spline: f64 = b.iter().zip(&self.coefficients).map(|(b, c)| b * c).sum();
        self.base_weight * silu(x) + self.spline_weight * spline
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let (_, d) = self.grid.basis_and_derivative(x);
        let spline: f64 = d.iter().zip(&self.coefficients).map(|(d, c)| d * c).sum();
        self.base_weight * silu_derivative(x) + self.spline_weight * spline
    }
}
