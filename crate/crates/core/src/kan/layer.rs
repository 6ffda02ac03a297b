use crate::error::{Error, Result};
use crate::kan::spline::{silu, silu_derivative, SplineFunction, SplineGrid};
use crate::numerics::{Matrix, SeededRng};

/// Spline coefficients are initialized uniformly in `±COEF_INIT`.
pub const COEF_INIT: f64 = 0.1;

/// A Kolmogorov-Arnold layer: `out[p, j] = Σ_i φ_{j,i}(x[p, i])`.
///
/// All edges share one [`SplineGrid`]. Parameters are stored flat, and the
/// flat order used for gradients and checkpoints is
/// `coef[j][i][m]`, then `w_base[j][i]`, then `w_spline[j][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanLayer {
    in_dim: usize,
    out_dim: usize,
    grid: SplineGrid,
    /// `(out_dim, in_dim, num_basis)`
    coef: Vec<f64>,
    /// `(out_dim, in_dim)`
    w_base: Vec<f64>,
    /// `(out_dim, in_dim)`
    w_spline: Vec<f64>,
}

impl KanLayer {
    /// All coefficients zero, `w_b = w_s = 1`.
    pub fn new(in_dim: usize, out_dim: usize, grid: SplineGrid) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::domain(format!(
                "KAN layer dimensions must be positive, got {in_dim}->{out_dim}"
            )));
        }
        let edges = in_dim * out_dim;
        Ok(Self {
            coef: vec![0.0; edges * grid.num_basis()],
            w_base: vec![1.0; edges],
            w_spline: vec![1.0; edges],
            in_dim,
            out_dim,
            grid,
        })
    }

    /// Coefficients drawn from `uniform(−0.1, 0.1)`, `w_b = w_s = 1`.
    pub fn random(in_dim: usize, out_dim: usize, grid: SplineGrid, rng: &mut SeededRng) -> Result<Self> {
        let mut layer = Self::new(in_dim, out_dim, grid)?;
        for c in &mut layer.coef {
            *c = rng.uniform(-COEF_INIT, COEF_INIT);
        }
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn grid(&self) -> &SplineGrid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn base_weights(&self) -> &[f64] {
        &self.w_base
    }

    pub fn spline_weights(&self) -> &[f64] {
        &self.w_spline
    }

    #[inline]
    fn edge_index(&self, j: usize, i: usize) -> usize {
        j * self.in_dim + i
    }

    /// The edge function from input `i` to output `j`.
    pub fn edge(&self, j: usize, i: usize) -> SplineFunction {
        let e = self.edge_index(j, i);
        let nb = self.grid.num_basis();
        SplineFunction {
            grid: self.grid.clone(),
            coefficients: self.coef[e * nb..(e + 1) * nb].to_vec(),
            base_weight: self.w_base[e],
            spline_weight: self.w_spline[e],
        }
    }

    pub fn set_edge(&mut self, j: usize, i: usize, f: &SplineFunction) -> Result<()> {
        if f.grid != self.grid {
            return Err(Error::domain("edge function grid differs from the layer grid"));
        }
        let e = self.edge_index(j, i);
        let nb = self.grid.num_basis();
        self.coef[e * nb..(e + 1) * nb].copy_from_slice(&f.coefficients);
        self.w_base[e] = f.base_weight;
        self.w_spline[e] = f.spline_weight;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.coef.len() + self.w_base.len() + self.w_spline.len()
    }

    /// `(name, shape, values)` per parameter block, in flat order.
    pub fn param_blocks(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        vec![
            (
                "coef",
                vec![self.out_dim, self.in_dim, self.grid.num_basis()],
                &self.coef,
            ),
            ("w_base", vec![self.out_dim, self.in_dim], &self.w_base),
            ("w_spline", vec![self.out_dim, self.in_dim], &self.w_spline),
        ]
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.coef, &mut self.w_base, &mut self.w_spline]
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(&self.coef);
        v.extend_from_slice(&self.w_base);
        v.extend_from_slice(&self.w_spline);
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::domain(format!(
                "layer has {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let (c, rest) = flat.split_at(self.coef.len());
        let (b, s) = rest.split_at(self.w_base.len());
        self.coef.copy_from_slice(c);
        self.w_base.copy_from_slice(b);
        self.w_spline.copy_from_slice(s);
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.in_dim {
            return Err(Error::domain(format!(
                "KAN layer expects {} input columns, got {}",
                self.in_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let nb = self.grid.num_basis();
        let mut out = Matrix::zeros(x.rows(), self.out_dim);
        for p in 0..x.rows() {
            for i in 0..self.in_dim {
                let xi = x[(p, i)];
                let basis = self.grid.basis(xi);
                let s = silu(xi);
                for j in 0..self.out_dim {
                    let e = self.edge_index(j, i);
                    let c = &self.coef[e * nb..(e + 1) * nb];
                    let spline: f64 = c.iter().zip(&basis).map(|(c, b)| c * b).sum();
                    out[(p, j)] += self.w_base[e] * s + self.w_spline[e] * spline;
                }
            }
        }
        Ok(out)
    }

    /// Gradients of `Σ upstream ⊙ forward(x)`: flat parameter gradient and
    /// gradient with respect to `x`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        self.check_input(x)?;
        if upstream.shape() != (x.rows(), self.out_dim) {
            return Err(Error::domain(format!(
                "KAN layer upstream must be {}x{}, got {:?}",
                x.rows(),
                self.out_dim,
                upstream.shape()
            )));
        }
        let nb = self.grid.num_basis();
        let edges = self.in_dim * self.out_dim;
        let mut g_coef = vec![0.0; self.coef.len()];
        let mut g_base = vec![0.0; edges];
        let mut g_spline = vec![0.0; edges];
        let mut gx = Matrix::zeros(x.rows(), self.in_dim);
        for p in 0..x.rows() {
            for i in 0..self.in_dim {
                let xi = x[(p, i)];
                let (basis, dbasis) = self.grid.basis_and_derivative(xi);
                let s = silu(xi);
                let ds = silu_derivative(xi);
                let mut gxi = 0.0;
                for j in 0..self.out_dim {
                    let g = upstream[(p, j)];
                    if g == 0.0 {
                        continue;
                    }
                    let e = self.edge_index(j, i);
                    let c = &self.coef[e * nb..(e + 1) * nb];
                    let spline: f64 = c.iter().zip(&basis).map(|(c, b)| c * b).sum();
                    let dspline: f64 = c.iter().zip(&dbasis).map(|(c, d)| c * d).sum();
                    g_base[e] += g * s;
                    g_spline[e] += g * spline;
                    let ws = self.w_spline[e];
                    for (gc, b) in g_coef[e * nb..(e + 1) * nb].iter_mut().zip(&basis) {
                        *gc += g * ws * b;
                    }
                    gxi += g * (self.w_base[e] * ds + ws * dspline);
                }
                gx[(p, i)] = gxi;
            }
        }
        let mut flat = g_coef;
        flat.extend(g_base);
        flat.extend(g_spline);
        Ok((flat, gx))
    }
}

/// Layers composed in order: `KAN(X) = Φ_{L−1} ∘ … ∘ Φ_0 (X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KanStack {
    layers: Vec<KanLayer>,
}

impl KanStack {
    pub fn new(layers: Vec<KanLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("a KAN stack needs at least one layer"));
        }
        for (l, w) in layers.windows(2).enumerate() {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::domain(format!(
                    "layer {l} outputs {} columns but layer {} expects {}",
                    w[0].out_dim,
                    l + 1,
                    w[1].in_dim
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Randomly initialized stack with widths `dims[0] → dims[1] → …`.
    pub fn random(dims: &[usize], grid: &SplineGrid, rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::domain("a KAN stack needs at least an input and output width"));
        }
        let layers = dims
            .windows(2)
            .map(|w| KanLayer::random(w[0], w[1], grid.clone(), rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    pub fn layers(&self) -> &[KanLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [KanLayer] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(KanLayer::num_params).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(KanLayer::params_flat).collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::domain(format!(
                "stack has {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut rest = flat;
        for layer in &mut self.layers {
            let (head, tail) = rest.split_at(layer.num_params());
            layer.set_params_flat(head)?;
            rest = tail;
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = self.layers[0].forward(x)?;
        for layer in &self.layers[1..] {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Flat parameter gradient (layer order) and input gradient of
    /// `Σ upstream ⊙ forward(x)`.
    pub fn backward(&self, x: &Matrix, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.clone());
        for layer in &self.layers[..self.layers.len() - 1] {
            let next = layer.forward(inputs.last().expect("non-empty"))?;
            inputs.push(next);
        }
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut g = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (gp, gx) = layer.backward(&inputs[l], &g)?;
            grads[l] = gp;
            g = gx;
        }
        Ok((grads.concat(), g))
    }
}
