//! Per-cloud affinity graph, Laplacian eigenbasis, and the split of a vertex
//! signal into sharp (high-frequency) and gentle (low-frequency) parts.
//!
//! Band split: with `L = D − A = U Λ Uᵀ` (Λ ascending) and split index `T`,
//!
//! ```text
//! X_g = U[:, ..T] U[:, ..T]ᵀ X        X_s = U[:, T..] U[:, T..]ᵀ X
//! X̂_s = (I − Ã) X_s                  X̂_g = Ã X_g
//! ```
//!
//! Both components keep the `N×C` shape of `X`, so `X_s + X_g = X`.
//! Nothing here depends on learned parameters.

use crate::error::{Error, Result};
use crate::numerics::{sym_eig, Matrix};
use crate::pointcloud::PointCloud;

/// Convergence tolerance handed to the eigensolver.
pub const EIG_TOL: f64 = 1e-12;

/// How the adjacency is normalized into `Ã`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdjacencyNorm {
    /// `D⁻¹A`, row-stochastic.
    #[default]
    RandomWalk,
    /// `D^{-1/2} A D^{-1/2}`.
    Symmetric,
}

impl AdjacencyNorm {
    pub fn as_str(&self) -> &'static str {
        match self {
            AdjacencyNorm::RandomWalk => "random_walk",
            AdjacencyNorm::Symmetric => "symmetric",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "random_walk" => Ok(AdjacencyNorm::RandomWalk),
            "symmetric" => Ok(AdjacencyNorm::Symmetric),
            other => Err(Error::domain(format!(
                "unknown adjacency normalization {other:?} (expected random_walk or symmetric)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    /// Gaussian kernel scale, in coordinate units.
    pub sigma: f64,
    /// Pairs farther apart than this get no edge.
    pub tau: f64,
    pub self_loops: bool,
    pub norm: AdjacencyNorm,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            tau: 0.4,
            self_loops: true,
            norm: AdjacencyNorm::RandomWalk,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::domain(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    /// `A`, symmetric with entries in `[0, 1]`.
    pub adjacency: Matrix,
    /// Row sums of `A`.
    pub degree: Vec<f64>,
    /// `Ã`.
    pub norm_adjacency: Matrix,
}

impl AffinityGraph {
    pub fn len(&self) -> usize {
        self.degree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degree.is_empty()
    }

    /// `L = D − A`.
    pub fn laplacian(&self) -> Matrix {
        let n = self.len();
        let mut l = self.adjacency.scale(-1.0);
        for i in 0..n {
            l[(i, i)] += self.degree[i];
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBasis {
    /// Ascending Laplacian eigenvalues.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors as columns.
    pub eigenvectors: Matrix,
    /// Columns `..split_index` form the gentle band, the rest the sharp band.
    pub split_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledSignals {
    /// `X̂_s`
    pub sharp: Matrix,
    /// `X̂_g`
    pub gentle: Matrix,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Gaussian-kernel affinity graph over the points of `cloud`.
///
/// A point with no neighbor within `tau` is linked to its nearest neighbor
/// (lowest index on ties) with the kernel weight, so every degree is
/// positive and `Ã` is always defined.
pub fn build_affinity(cloud: &PointCloud, cfg: &GraphConfig) -> Result<AffinityGraph> {
    affinity_from_points(cloud.points(), cfg)
}

pub fn affinity_from_points(points: &Matrix, cfg: &GraphConfig) -> Result<AffinityGraph> {
    cfg.validate()?;
    let n = points.rows();
    if n < 2 {
        return Err(Error::domain(format!(
            "affinity graph needs at least 2 points, got {n}"
        )));
    }
    let inv_s2 = 1.0 / (cfg.sigma * cfg.sigma);
    let tau2 = cfg.tau * cfg.tau;
    let mut dist2 = Matrix::zeros(n, n);
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2 = squared_distance(points.row(i), points.row(j));
            dist2[(i, j)] = d2;
            dist2[(j, i)] = d2;
            if d2 <= tau2 {
                let w = (-d2 * inv_s2).exp();
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }

    for i in 0..n {
        let has_neighbor = (0..n).any(|j| j != i && a[(i, j)] > 0.0);
        if has_neighbor {
            continue;
        }
        let mut nearest = if i == 0 { 1 } else { 0 };
        for j in 0..n {
            if j != i && dist2[(i, j)] < dist2[(i, nearest)] {
                nearest = j;
            }
        }
        // Floor keeps the repaired edge from underflowing to zero.
        let w = (-dist2[(i, nearest)] * inv_s2).exp().max(f64::MIN_POSITIVE);
        a[(i, nearest)] = w;
        a[(nearest, i)] = w;
    }

    if cfg.self_loops {
        for i in 0..n {
            a[(i, i)] = 1.0;
        }
    }

    let degree: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let norm_adjacency = match cfg.norm {
        AdjacencyNorm::RandomWalk => Matrix::from_fn(n, n, |i, j| a[(i, j)] / degree[i]),
        AdjacencyNorm::Symmetric => {
            let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
            Matrix::from_fn(n, n, |i, j| inv_sqrt[i] * a[(i, j)] * inv_sqrt[j])
        }
    };
    Ok(AffinityGraph {
        adjacency: a,
        degree,
        norm_adjacency,
    })
}

/// `T = max(1, min(N − 1, round(fraction · N)))`.
pub fn split_index(n: usize, fraction: f64) -> usize {
    let t = (fraction * n as f64).round() as usize;
    t.clamp(1, n.saturating_sub(1).max(1))
}

/// Eigenbasis of `L = D − A` with the gentle/sharp split point.
pub fn laplacian_basis(graph: &AffinityGraph, split_fraction: f64) -> Result<SpectralBasis> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::domain(format!(
            "split fraction must lie in (0, 1), got {split_fraction}"
        )));
    }
    let eig = sym_eig(&graph.laplacian(), EIG_TOL)?;
    Ok(SpectralBasis {
        split_index: split_index(graph.len(), split_fraction),
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
    })
}

/// Band-limited reconstructions `(X_s, X_g)`.
pub fn band_split(basis: &SpectralBasis, x: &Matrix) -> Result<(Matrix, Matrix)> {
    let u = &basis.eigenvectors;
    let n = u.rows();
    if x.rows() != n {
        return Err(Error::domain(format!(
            "band_split: signal has {} rows, basis has {n}",
            x.rows()
        )));
    }
    let t = basis.split_index;
    let c = x.cols();
    // Spectral coefficients Uᵀ X, then synthesize each band separately.
    let coeffs = u.t_matmul(x)?;
    let mut gentle = Matrix::zeros(n, c);
    let mut sharp = Matrix::zeros(n, c);
    for i in 0..n {
        let u_row = u.row(i);
        let g_row = gentle.row_mut(i);
        for (k, &uik) in u_row[..t].iter().enumerate() {
            for (g, &ck) in g_row.iter_mut().zip(coeffs.row(k)) {
                *g += uik * ck;
            }
        }
        let s_row = sharp.row_mut(i);
        for (k, &uik) in u_row[t..].iter().enumerate() {
            for (s, &ck) in s_row.iter_mut().zip(coeffs.row(t + k)) {
                *s += uik * ck;
            }
        }
    }
    Ok((sharp, gentle))
}

/// `X̂_s = (I − Ã) X_s`, `X̂_g = Ã X_g`.
pub fn spectral_filter(graph: &AffinityGraph, sharp: &Matrix, gentle: &Matrix) -> Result<DisentangledSignals> {
    let n = graph.len();
    if sharp.rows() != n || gentle.rows() != n || sharp.shape() != gentle.shape() {
        return Err(Error::domain(format!(
            "spectral_filter: graph has {n} nodes, signals are {:?} and {:?}",
            sharp.shape(),
            gentle.shape()
        )));
    }
    let smoothed = graph.norm_adjacency.matmul(sharp)?;
    Ok(DisentangledSignals {
        sharp: sharp.sub(&smoothed)?,
        gentle: graph.norm_adjacency.matmul(gentle)?,
    })
}

/// Runs graph construction, eigendecomposition, band split and filtering
/// on the coordinates of `cloud`.
pub fn disentangle(cloud: &PointCloud, cfg: &GraphConfig, split_fraction: f64) -> Result<DisentangledSignals> {
    let graph = build_affinity(cloud, cfg)?;
    let basis = laplacian_basis(&graph, split_fraction)?;
    let (xs, xg) = band_split(&basis, cloud.points())?;
    spectral_filter(&graph, &xs, &xg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;
    use crate::pointcloud::normalize_unit_sphere;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = SeededRng::new(seed);
        let m = Matrix::from_fn(n, 3, |_, _| rng.uniform(-1.0, 1.0));
        normalize_unit_sphere(&PointCloud::new(m, None).unwrap()).unwrap()
    }

    fn cfg_inf(sigma: f64) -> GraphConfig {
        GraphConfig {
            sigma,
            tau: f64::INFINITY,
            ..GraphConfig::default()
        }
    }

    #[test]
    fn kernel_at_sigma_distance() {
        let pts = Matrix::from_rows(&[[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]]).unwrap();
        let g = affinity_from_points(&pts, &GraphConfig::default()).unwrap();
        assert!((g.adjacency[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((g.adjacency[(0, 1)] - 0.367879).abs() < 1e-6);
        assert_eq!(g.adjacency[(0, 0)], 1.0);
    }

    #[test]
    fn far_pair_is_repaired() {
        let pts = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let cfg = GraphConfig::default();
        let g = affinity_from_points(&pts, &cfg).unwrap();
        let w = (-1.0f64 / 0.04).exp();
        assert!((g.adjacency[(0, 1)] - w).abs() <= 1e-14 * w);
        assert_eq!(g.adjacency[(1, 0)], g.adjacency[(0, 1)]);
        assert!(g.degree.iter().all(|&d| d > 0.0));
        for i in 0..2 {
            let s: f64 = g.norm_adjacency.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn repair_without_self_loops() {
        let pts = Matrix::from_rows(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [5.0, 0.0, 0.0]]).unwrap();
        let cfg = GraphConfig {
            self_loops: false,
            ..GraphConfig::default()
        };
        let g = affinity_from_points(&pts, &cfg).unwrap();
        assert_eq!(g.adjacency[(2, 2)], 0.0);
        assert!(g.adjacency[(2, 1)] > 0.0);
        assert_eq!(g.adjacency[(2, 0)], 0.0);
        assert_eq!(g.norm_adjacency[(2, 1)], 1.0);
    }

    #[test]
    fn three_point_kernel_matches_brute_force() {
        let pts = Matrix::from_rows(&[[0.0, 0.0, 0.0], [0.3, 0.4, 0.0], [-0.5, 0.1, 0.2]]).unwrap();
        let g = affinity_from_points(&pts, &cfg_inf(1.0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d2: f64 = (0..3).map(|k| (pts[(i, k)] - pts[(j, k)]).powi(2)).sum();
                let want = (-d2).exp();
                assert!((g.adjacency[(i, j)] - want).abs() < 1e-15, "({i},{j})");
            }
        }
    }

    #[test]
    fn split_index_rounding() {
        assert_eq!(split_index(10, 0.5), 5);
        assert_eq!(split_index(10, 0.01), 1);
        assert_eq!(split_index(10, 0.99), 9);
        assert_eq!(split_index(2, 0.5), 1);
    }

    #[test]
    fn basis_has_laplacian_kernel() {
        let c = random_cloud(30, 11);
        let g = build_affinity(&c, &GraphConfig::default()).unwrap();
        let b = laplacian_basis(&g, 0.5).unwrap();
        assert!(b.eigenvalues[0].abs() < 1e-8);
        assert!(b.eigenvalues.iter().all(|&l| l >= -1e-8));
        assert!(b.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(b.split_index, 15);
        assert!(laplacian_basis(&g, 1.0).is_err());
        assert!(laplacian_basis(&g, 0.0).is_err());
    }

    #[test]
    fn constant_signal_is_gentle() {
        let c = random_cloud(20, 3);
        let g = build_affinity(&c, &cfg_inf(0.5)).unwrap();
        let b = laplacian_basis(&g, 0.5).unwrap();
        let x = Matrix::filled(20, 1, 2.5);
        let (xs, xg) = band_split(&b, &x).unwrap();
        assert!(xs.max_abs() < 1e-12);
        assert!(xg.sub(&x).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn single_gentle_vector_gives_column_means() {
        let c = random_cloud(16, 4);
        let g = build_affinity(&c, &cfg_inf(0.5)).unwrap();
        let mut b = laplacian_basis(&g, 0.5).unwrap();
        b.split_index = 1;
        let x = c.points();
        let (_, xg) = band_split(&b, x).unwrap();
        // projection onto 1/√N: every row equals the column means
        for k in 0..3 {
            let mean = x.column(k).iter().sum::<f64>() / 16.0;
            for r in 0..16 {
                assert!((xg[(r, k)] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn filter_on_constants() {
        let c = random_cloud(12, 5);
        let g = build_affinity(&c, &GraphConfig::default()).unwrap();
        let k = Matrix::filled(12, 3, -1.75);
        let out = spectral_filter(&g, &k, &k).unwrap();
        assert!(out.sharp.max_abs() < 1e-10);
        assert!(out.gentle.sub(&k).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn filter_matches_dense_products() {
        let c = random_cloud(4, 6);
        let g = build_affinity(&c, &cfg_inf(0.7)).unwrap();
        let mut rng = SeededRng::new(1);
        let xs = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let xg = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0));
        let out = spectral_filter(&g, &xs, &xg).unwrap();
        let at = &g.norm_adjacency;
        for i in 0..4 {
            for k in 0..3 {
                let mut s = xs[(i, k)];
                let mut gg = 0.0;
                for j in 0..4 {
                    s -= at[(i, j)] * xs[(j, k)];
                    gg += at[(i, j)] * xg[(j, k)];
                }
                assert!((out.sharp[(i, k)] - s).abs() < 1e-14);
                assert!((out.gentle[(i, k)] - gg).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_mismatches_rejected() {
        let c = random_cloud(6, 7);
        let g = build_affinity(&c, &GraphConfig::default()).unwrap();
        let b = laplacian_basis(&g, 0.5).unwrap();
        assert!(band_split(&b, &Matrix::zeros(5, 3)).is_err());
        assert!(spectral_filter(&g, &Matrix::zeros(6, 3), &Matrix::zeros(6, 2)).is_err());
        assert!(spectral_filter(&g, &Matrix::zeros(5, 3), &Matrix::zeros(5, 3)).is_err());
    }

    #[test]
    fn symmetric_normalization_variant() {
        let c = random_cloud(10, 8);
        let cfg = GraphConfig {
            norm: AdjacencyNorm::Symmetric,
            ..GraphConfig::default()
        };
        let g = build_affinity(&c, &cfg).unwrap();
        assert!(g.norm_adjacency.asymmetry() < 1e-15);
    }
}
