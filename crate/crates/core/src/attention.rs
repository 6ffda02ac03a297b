//! Unified representation attention, residual refinement, fusion, pooling
//! and the classification head.
//!
//! Per branch, with query map `P_q` on the raw features `X` and key map `P_k`
//! on the branch's KAN output `K`:
//!
//! ```text
//! S = (X P_q)(K P_k)ᵀ / √d_att      W = softmax_rows(S)      Y = X + W K
//! ```
//!
//! With [`AttentionMode::Raw`] the scale and softmax are dropped and `W` is
//! the bilinear score matrix itself.

use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Scaled scores followed by a row-wise softmax.
    #[default]
    Softmax,
    /// Unnormalized bilinear scores.
    Raw,
}

/// Projections of both attention branches, each mapping `C → d_att`.
#[derive(Debug, Clone, PartialEq)]
pub struct UraBlock {
    /// Query map on `X`, sharp branch.
    pub theta_o: Matrix,
    /// Key map on `KAN_s`.
    pub theta_s: Matrix,
    /// Query map on `X`, gentle branch.
    pub phi_o: Matrix,
    /// Key map on `KAN_g`.
    pub phi_g: Matrix,
    pub mode: AttentionMode,
}

impl UraBlock {
    /// Entries drawn from `uniform(±1/√C)`.
    pub fn random(channels: usize, d_att: usize, mode: AttentionMode, rng: &mut SeededRng) -> Result<Self> {
        if channels == 0 || d_att == 0 {
            return Err(Error::domain("attention dimensions must be positive"));
        }
        let bound = 1.0 / (channels as f64).sqrt();
        let mut draw = || Matrix::from_fn(channels, d_att, |_, _| rng.uniform(-bound, bound));
        Ok(Self {
            theta_o: draw(),
            theta_s: draw(),
            phi_o: draw(),
            phi_g: draw(),
            mode,
        })
    }

    pub fn d_att(&self) -> usize {
        self.theta_o.cols()
    }

    pub fn channels(&self) -> usize {
        self.theta_o.rows()
    }

    pub fn projections(&self) -> [&Matrix; 4] {
        [&self.theta_o, &self.theta_s, &self.phi_o, &self.phi_g]
    }

    pub fn projections_mut(&mut self) -> [&mut Matrix; 4] {
        [&mut self.theta_o, &mut self.theta_s, &mut self.phi_o, &mut self.phi_g]
    }
}

/// Affine map from pooled features to class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    /// `num_classes × pooled_dim`
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() != bias.len() {
            return Err(Error::domain(format!(
                "head has {} weight rows but {} biases",
                weights.rows(),
                bias.len()
            )));
        }
        Ok(Self { weights, bias })
    }

    /// Weights from `uniform(±1/√pooled_dim)`, zero bias.
    pub fn random(pooled_dim: usize, num_classes: usize, rng: &mut SeededRng) -> Result<Self> {
        if pooled_dim == 0 || num_classes == 0 {
            return Err(Error::domain("head dimensions must be positive"));
        }
        let bound = 1.0 / (pooled_dim as f64).sqrt();
        let weights = Matrix::from_fn(num_classes, pooled_dim, |_, _| rng.uniform(-bound, bound));
        Self::new(weights, vec![0.0; num_classes])
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn pooled_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Everything the forward pass produces after the KAN branches.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    /// `Y_s`
    pub refined_sharp: Matrix,
    /// `Y_g`
    pub refined_gentle: Matrix,
    /// `Z = [Y_s | Y_g]`
    pub fused: Matrix,
    /// Column max then column mean of `Z`.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

fn check_projection(proj: &Matrix, input: &Matrix, what: &str) -> Result<()> {
    if proj.rows() != input.cols() {
        return Err(Error::domain(format!(
            "{what} projection expects {} channels, input has {}",
            proj.rows(),
            input.cols()
        )));
    }
    Ok(())
}

/// In-place numerically stable softmax of each row.
pub fn softmax_rows(m: &mut Matrix) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Softmax of a vector with the max-shift trick.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `N×N` attention weights between the rows of `x` and the rows of `kan`.
pub fn ura_weights(q_proj: &Matrix, k_proj: &Matrix, x: &Matrix, kan: &Matrix, mode: AttentionMode) -> Result<Matrix> {
    check_projection(q_proj, x, "query")?;
    check_projection(k_proj, kan, "key")?;
    if q_proj.cols() != k_proj.cols() {
        return Err(Error::domain("query and key projections disagree on d_att"));
    }
    if x.rows() != kan.rows() {
        return Err(Error::domain(format!(
            "attention inputs have {} and {} rows",
            x.rows(),
            kan.rows()
        )));
    }
    let q = x.matmul(q_proj)?;
    let k = kan.matmul(k_proj)?;
    let mut s = q.matmul_t(&k)?;
    if mode == AttentionMode::Softmax {
        let scale = 1.0 / (q_proj.cols() as f64).sqrt();
        for v in s.data_mut() {
            *v *= scale;
        }
        softmax_rows(&mut s);
    }
    Ok(s)
}

/// `Y = X + W K`
pub fn ura_refine(x: &Matrix, w: &Matrix, kan: &Matrix) -> Result<Matrix> {
    if w.rows() != x.rows() || w.cols() != kan.rows() || x.shape() != kan.shape() {
        return Err(Error::domain(format!(
            "ura_refine: X {:?}, W {:?}, K {:?}",
            x.shape(),
            w.shape(),
            kan.shape()
        )));
    }
    x.add(&w.matmul(kan)?)
}

/// Gradients of one attention branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchGrad {
    pub q_proj: Matrix,
    pub k_proj: Matrix,
    /// With respect to the branch's KAN output.
    pub kan: Matrix,
}

/// Backpropagates `d_y = ∂L/∂Y` through `Y = X + W(X, K) K`. `w` must be the
/// weights returned by [`ura_weights`] for the same inputs. `X` is a model
/// input, so no gradient is returned for it.
pub fn ura_backward(
    q_proj: &Matrix,
    k_proj: &Matrix,
    x: &Matrix,
    kan: &Matrix,
    w: &Matrix,
    d_y: &Matrix,
    mode: AttentionMode,
) -> Result<BranchGrad> {
    let n = x.rows();
    if d_y.shape() != x.shape() || w.shape() != (n, n) {
        return Err(Error::domain("ura_backward: shape mismatch"));
    }
    // Y = X + W K
    let mut d_kan = w.t_matmul(d_y)?;
    let d_w = d_y.matmul_t(kan)?;

    let d_scores = match mode {
        AttentionMode::Raw => d_w,
        AttentionMode::Softmax => {
            let scale = 1.0 / (q_proj.cols() as f64).sqrt();
            let mut ds = Matrix::zeros(n, n);
            for r in 0..n {
                let wr = w.row(r);
                let gr = d_w.row(r);
                let inner = dot(wr, gr);
                for (o, (wv, gv)) in ds.row_mut(r).iter_mut().zip(wr.iter().zip(gr)) {
                    *o = scale * wv * (gv - inner);
                }
            }
            ds
        }
    };

    let q = x.matmul(q_proj)?;
    let k = kan.matmul(k_proj)?;
    let d_q = d_scores.matmul(&k)?;
    let d_k = d_scores.t_matmul(&q)?;
    let g_q_proj = x.t_matmul(&d_q)?;
    let g_k_proj = kan.t_matmul(&d_k)?;
    d_kan.add_assign(&d_k.matmul_t(k_proj)?)?;
    Ok(BranchGrad {
        q_proj: g_q_proj,
        k_proj: g_k_proj,
        kan: d_kan,
    })
}

/// Column concatenation `[Y_s | Y_g]`.
pub fn fuse(sharp: &Matrix, gentle: &Matrix) -> Result<Matrix> {
    if sharp.shape() != gentle.shape() {
        return Err(Error::domain(format!(
            "fuse needs equal shapes, got {:?} and {:?}",
            sharp.shape(),
            gentle.shape()
        )));
    }
    sharp.hconcat(gentle)
}

/// Column-wise max followed by column-wise mean.
pub fn global_pool(z: &Matrix) -> Result<Vec<f64>> {
    let (n, c) = z.shape();
    if n == 0 {
        return Err(Error::domain("cannot pool an empty matrix"));
    }
    let mut max = z.row(0).to_vec();
    let mut sum = vec![0.0; c];
    for r in 0..n {
        for (k, &v) in z.row(r).iter().enumerate() {
            if v > max[k] {
                max[k] = v;
            }
            sum[k] += v;
        }
    }
    max.extend(sum.into_iter().map(|s| s / n as f64));
    Ok(max)
}

/// Gradient of [`global_pool`] with respect to `z`. The max term routes to the
/// first row attaining the maximum.
pub fn global_pool_backward(z: &Matrix, d_pooled: &[f64]) -> Result<Matrix> {
    let (n, c) = z.shape();
    if d_pooled.len() != 2 * c {
        return Err(Error::domain("pool gradient has the wrong length"));
    }
    let mut g = Matrix::zeros(n, c);
    for k in 0..c {
        let mut arg = 0;
        for r in 1..n {
            if z[(r, k)] > z[(arg, k)] {
                arg = r;
            }
        }
        g[(arg, k)] += d_pooled[k];
        let share = d_pooled[c + k] / n as f64;
        for r in 0..n {
            g[(r, k)] += share;
        }
    }
    Ok(g)
}

/// `weights · pooled + bias`
pub fn classify(head: &ClassifierHead, pooled: &[f64]) -> Result<Vec<f64>> {
    if pooled.len() != head.pooled_dim() {
        return Err(Error::domain(format!(
            "head expects {} pooled features, got {}",
            head.pooled_dim(),
            pooled.len()
        )));
    }
    Ok((0..head.num_classes())
        .map(|c| dot(head.weights.row(c), pooled) + head.bias[c])
        .collect())
}

/// Returns `(∂weights, ∂bias, ∂pooled)` for upstream `d_logits`.
pub fn classify_backward(head: &ClassifierHead, pooled: &[f64], d_logits: &[f64]) -> (Matrix, Vec<f64>, Vec<f64>) {
    let g_w = Matrix::from_fn(head.num_classes(), pooled.len(), |c, k| d_logits[c] * pooled[k]);
    let mut g_pooled = vec![0.0; pooled.len()];
    for (c, &d) in d_logits.iter().enumerate() {
        for (gp, w) in g_pooled.iter_mut().zip(head.weights.row(c)) {
            *gp += d * w;
        }
    }
    (g_w, d_logits.to_vec(), g_pooled)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_m(r: usize, c: usize, rng: &mut SeededRng) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn constant_keys_give_uniform_weights() {
        let mut rng = SeededRng::new(1);
        let x = rand_m(5, 3, &mut rng);
        let kan = Matrix::from_fn(5, 3, |_, c| c as f64 + 0.5);
        let w = ura_weights(
            &rand_m(3, 3, &mut rng),
            &rand_m(3, 3, &mut rng),
            &x,
            &kan,
            AttentionMode::Softmax,
        )
        .unwrap();
        for v in w.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn single_row_weight_is_one() {
        let mut rng = SeededRng::new(2);
        let x = rand_m(1, 3, &mut rng);
        let w = ura_weights(
            &rand_m(3, 2, &mut rng),
            &rand_m(3, 2, &mut rng),
            &x,
            &x,
            AttentionMode::Softmax,
        )
        .unwrap();
        assert_eq!(w.data(), &[1.0]);
    }

    #[test]
    fn three_point_weights_match_explicit_scores() {
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.5, -0.5]]).unwrap();
        let kan = Matrix::from_rows(&[[0.2, 0.1], [-0.3, 0.4], [0.0, -1.0]]).unwrap();
        let qp = Matrix::from_rows(&[[1.0, 2.0], [0.0, -1.0]]).unwrap();
        let kp = Matrix::from_rows(&[[0.5, 0.0], [1.0, 1.0]]).unwrap();
        let w = ura_weights(&qp, &kp, &x, &kan, AttentionMode::Softmax).unwrap();
        for i in 0..3 {
            let qi = [x[(i, 0)] * 1.0 + x[(i, 1)] * 0.0, x[(i, 0)] * 2.0 - x[(i, 1)]];
            let scores: Vec<f64> = (0..3)
                .map(|j| {
                    let kj = [kan[(j, 0)] * 0.5 + kan[(j, 1)], kan[(j, 1)]];
                    (qi[0] * kj[0] + qi[1] * kj[1]) / 2f64.sqrt()
                })
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for j in 0..3 {
                assert!((w[(i, j)] - scores[j].exp() / z).abs() < 1e-15);
            }
        }
        let raw = ura_weights(&qp, &kp, &x, &kan, AttentionMode::Raw).unwrap();
        assert!((raw[(0, 0)] - (1.0 * 0.2 + 2.0 * 0.1)).abs() < 1e-15);
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = SeededRng::new(3);
        let x = rand_m(20, 3, &mut rng).scale(4.0);
        let k = rand_m(20, 3, &mut rng).scale(4.0);
        let w = ura_weights(
            &rand_m(3, 3, &mut rng),
            &rand_m(3, 3, &mut rng),
            &x,
            &k,
            AttentionMode::Softmax,
        )
        .unwrap();
        for r in 0..20 {
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(w.row(r).iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn refine_cases() {
        let mut rng = SeededRng::new(4);
        let x = rand_m(4, 3, &mut rng);
        let w = rand_m(4, 4, &mut rng);
        assert_eq!(ura_refine(&x, &w, &Matrix::zeros(4, 3)).unwrap(), x);
        let k = rand_m(4, 3, &mut rng);
        assert_eq!(ura_refine(&x, &Matrix::identity(4), &k).unwrap(), x.add(&k).unwrap());
        let y = ura_refine(&x, &w, &k).unwrap();
        for i in 0..4 {
            for c in 0..3 {
                let want = x[(i, c)] + (0..4).map(|j| w[(i, j)] * k[(j, c)]).sum::<f64>();
                assert!((y[(i, c)] - want).abs() < 1e-15);
            }
        }
        assert!(ura_refine(&x, &Matrix::identity(3), &k).is_err());
    }

    #[test]
    fn fuse_and_pool() {
        let a = Matrix::from_rows(&[[1.0]]).unwrap();
        let b = Matrix::from_rows(&[[2.0]]).unwrap();
        let z = fuse(&a, &b).unwrap();
        assert_eq!(z.row(0), &[1.0, 2.0]);
        assert_eq!(global_pool(&z).unwrap(), vec![1.0, 2.0, 1.0, 2.0]);
        assert!(fuse(&a, &Matrix::zeros(2, 1)).is_err());

        let mut rng = SeededRng::new(5);
        let z = rand_m(9, 4, &mut rng);
        let pooled = global_pool(&z).unwrap();
        for k in 0..4 {
            let col = z.column(k);
            assert_eq!(pooled[k], col.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            assert!((pooled[4 + k] - col.iter().sum::<f64>() / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn classify_cases() {
        let head = ClassifierHead::new(Matrix::zeros(2, 3), vec![0.5, -1.0]).unwrap();
        assert_eq!(classify(&head, &[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.0]);
        let one = ClassifierHead::new(Matrix::from_rows(&[[1.0]]).unwrap(), vec![0.25]).unwrap();
        assert_eq!(classify(&one, &[3.0]).unwrap(), vec![3.25]);
        assert!(classify(&head, &[1.0]).is_err());
    }

    #[test]
    fn attention_gradients_match_central_differences() {
        for mode in [AttentionMode::Softmax, AttentionMode::Raw] {
            let mut rng = SeededRng::new(6);
            let (n, c, d) = (5, 3, 2);
            let x = rand_m(n, c, &mut rng);
            let kan = rand_m(n, c, &mut rng);
            let qp = rand_m(c, d, &mut rng);
            let kp = rand_m(c, d, &mut rng);
            let up = rand_m(n, c, &mut rng);
            let loss = |qp: &Matrix, kp: &Matrix, kan: &Matrix| -> f64 {
                let w = ura_weights(qp, kp, &x, kan, mode).unwrap();
                let y = ura_refine(&x, &w, kan).unwrap();
                dot(y.data(), up.data())
            };
            let w = ura_weights(&qp, &kp, &x, &kan, mode).unwrap();
            let g = ura_backward(&qp, &kp, &x, &kan, &w, &up, mode).unwrap();
            let h = 1e-5;
            let check = |analytic: f64, plus: f64, minus: f64, what: &str| {
                let fd = (plus - minus) / (2.0 * h);
                let denom = analytic.abs().max(fd.abs()).max(1e-8);
                assert!(
                    (fd - analytic).abs() / denom < 1e-6,
                    "{mode:?} {what}: {fd} vs {analytic}"
                );
            };
            for idx in 0..c * d {
                let mut a = qp.clone();
                a.data_mut()[idx] += h;
                let mut b = qp.clone();
                b.data_mut()[idx] -= h;
                check(g.q_proj.data()[idx], loss(&a, &kp, &kan), loss(&b, &kp, &kan), "q");
                let mut a = kp.clone();
                a.data_mut()[idx] += h;
                let mut b = kp.clone();
                b.data_mut()[idx] -= h;
                check(g.k_proj.data()[idx], loss(&qp, &a, &kan), loss(&qp, &b, &kan), "k");
            }
            for idx in 0..n * c {
                let mut a = kan.clone();
                a.data_mut()[idx] += h;
                let mut b = kan.clone();
                b.data_mut()[idx] -= h;
                check(g.kan.data()[idx], loss(&qp, &kp, &a), loss(&qp, &kp, &b), "kan");
            }
        }
    }

    #[test]
    fn head_and_pool_gradients() {
        let mut rng = SeededRng::new(7);
        let z = rand_m(6, 4, &mut rng);
        let head = ClassifierHead::random(8, 3, &mut rng).unwrap();
        let up = [0.3, -1.2, 0.7];
        let pooled = global_pool(&z).unwrap();
        let (gw, gb, gp) = classify_backward(&head, &pooled, &up);
        assert_eq!(gb, up.to_vec());
        for c in 0..3 {
            for k in 0..8 {
                assert_eq!(gw[(c, k)], up[c] * pooled[k]);
            }
        }
        let gz = global_pool_backward(&z, &gp).unwrap();
        let h = 1e-5;
        let f = |z: &Matrix| dot(&classify(&head, &global_pool(z).unwrap()).unwrap(), &up);
        for idx in 0..24 {
            let mut a = z.clone();
            a.data_mut()[idx] += h;
            let mut b = z.clone();
            b.data_mut()[idx] -= h;
            let fd = (f(&a) - f(&b)) / (2.0 * h);
            let an = gz.data()[idx];
            assert!((fd - an).abs() / an.abs().max(fd.abs()).max(1e-8) < 1e-6);
        }
    }
}
