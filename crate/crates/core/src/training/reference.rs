//! A second, independently written evaluation of the learned part of the
//! forward pass and the loss, in double-double arithmetic. Parameters come
//! from a flat vector in registry order; spectral features are taken as given.

use crate::attention::AttentionMode;
use crate::error::{Error, Result};
use crate::kan::{KanLayer, KanStack};
use crate::model::{Model, SpectralFeatures};
use crate::numerics::{DoubleDouble as D, Matrix};

type Rows = Vec<Vec<D>>;

fn lift(m: &Matrix) -> Rows {
    (0..m.rows())
        .map(|r| m.row(r).iter().map(|&v| D::from(v)).collect())
        .collect()
}

fn basis(x: D, knots: &[f64], degree: usize) -> Vec<D> {
    let last = knots.len() - 1;
    let lo = D::from(knots[degree]);
    let hi = D::from(knots[last - degree]);
    let x = if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    };
    let mut span = degree;
    while span < last - degree - 1 && x >= D::from(knots[span + 1]) {
        span += 1;
    }
    let mut b = vec![D::ZERO; last];
    b[span] = D::ONE;
    for p in 1..=degree {
        let mut next = vec![D::ZERO; last - p];
        for (i, slot) in next.iter_mut().enumerate() {
            let t = |j: usize| D::from(knots[j]);
            let left = (x - t(i)) / (t(i + p) - t(i)) * b[i];
            let right = (t(i + p + 1) - x) / (t(i + p + 1) - t(i + 1)) * b[i + 1];
            *slot = left + right;
        }
        b = next;
    }
    b
}

fn silu(x: D) -> D {
    x / (D::ONE + (-x).exp())
}

fn take<'a>(params: &mut &'a [D], n: usize) -> &'a [D] {
    let (head, tail) = params.split_at(n);
    *params = tail;
    head
}

fn kan_stack(model: &Model, x: &Rows, params: &mut &[D]) -> Rows {
    let stack = model.kan_sharp();
    let mut h = x.clone();
    for layer in stack.layers() {
        h = kan_layer(layer, &h, params);
    }
    h
}

fn kan_layer(layer: &KanLayer, x: &Rows, params: &mut &[D]) -> Rows {
    let (din, dout) = (layer.in_dim(), layer.out_dim());
    let grid = layer.grid();
    let (knots, degree, nb) = (grid.knots(), grid.degree(), grid.num_basis());
    let coef = take(params, dout * din * nb);
    let w_base = take(params, dout * din);
    let w_spline = take(params, dout * din);
    x.iter()
        .map(|row| {
            let bases: Vec<Vec<D>> = row.iter().map(|&v| basis(v, knots, degree)).collect();
            (0..dout)
                .map(|j| {
                    let mut acc = D::ZERO;
                    for i in 0..din {
                        let e = j * din + i;
                        let mut s = D::ZERO;
                        for m in 0..nb {
                            s = s + coef[e * nb + m] * bases[i][m];
                        }
                        acc = acc + w_base[e] * silu(row[i]) + w_spline[e] * s;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Output of `stack` on the rows of `x`, with the stack's parameters replaced
/// by `params` (in [`KanStack::params_flat`] order).
pub fn reference_kan_forward(stack: &KanStack, params: &[D], x: &[Vec<D>]) -> Result<Vec<Vec<D>>> {
    if params.len() != stack.num_params() {
        return Err(Error::domain("reference_kan_forward: parameter count mismatch"));
    }
    if x.iter().any(|r| r.len() != stack.in_dim()) {
        return Err(Error::domain("reference_kan_forward: input width mismatch"));
    }
    let mut rest = params;
    let mut h = x.to_vec();
    for layer in stack.layers() {
        h = kan_layer(layer, &h, &mut rest);
    }
    Ok(h)
}

fn project(a: &Rows, p: &[D], d: usize) -> Rows {
    a.iter()
        .map(|row| {
            (0..d)
                .map(|k| row.iter().enumerate().fold(D::ZERO, |s, (c, &v)| s + v * p[c * d + k]))
                .collect()
        })
        .collect()
}

fn refine(x: &Rows, k: &Rows, qp: &[D], kp: &[D], d: usize, mode: AttentionMode) -> Rows {
    let q = project(x, qp, d);
    let kk = project(k, kp, d);
    let n = x.len();
    let scale = D::from(d as f64).sqrt().recip();
    let mut y = x.clone();
    for i in 0..n {
        let mut w: Vec<D> = (0..n)
            .map(|j| (0..d).fold(D::ZERO, |s, a| s + q[i][a] * kk[j][a]))
            .collect();
        if mode == AttentionMode::Softmax {
            let mx = w.iter().copied().fold(w[0] * scale, |m, v| m.max(v * scale));
            let mut z = D::ZERO;
            for v in w.iter_mut() {
                *v = (*v * scale - mx).exp();
                z = z + *v;
            }
            for v in w.iter_mut() {
                *v = *v / z;
            }
        }
        for c in 0..x[0].len() {
            y[i][c] = (0..n).fold(y[i][c], |s, j| s + w[j] * k[j][c]);
        }
    }
    y
}

/// Cross-entropy of the model with the given flat parameters.
pub fn reference_loss(model: &Model, f: &SpectralFeatures, params: &[D], label: usize) -> Result<D> {
    if params.len() != model.num_params() {
        return Err(Error::domain("reference_loss: parameter count mismatch"));
    }
    let cfg = model.config();
    if label >= cfg.num_classes {
        return Err(Error::domain("reference_loss: label out of range"));
    }
    let (c, d, k) = (cfg.in_channels, cfg.d_att, cfg.num_classes);
    let x = lift(&f.x);
    let mut rest = params;
    let (ks, kg) = if cfg.share_branches {
        let mut a = rest;
        let ks = kan_stack(model, &lift(&f.sharp), &mut a);
        let kg = kan_stack(model, &lift(&f.gentle), &mut rest);
        (ks, kg)
    } else {
        let ks = kan_stack(model, &lift(&f.sharp), &mut rest);
        let kg = kan_stack(model, &lift(&f.gentle), &mut rest);
        (ks, kg)
    };
    let theta_o = take(&mut rest, c * d);
    let theta_s = take(&mut rest, c * d);
    let phi_o = take(&mut rest, c * d);
    let phi_g = take(&mut rest, c * d);
    let ys = refine(&x, &ks, theta_o, theta_s, d, cfg.attention);
    let yg = refine(&x, &kg, phi_o, phi_g, d, cfg.attention);

    let n = D::from(x.len() as f64);
    let mut maxes = Vec::with_capacity(2 * c);
    let mut means = Vec::with_capacity(2 * c);
    for y in [&ys, &yg] {
        for col in 0..c {
            maxes.push(y.iter().skip(1).fold(y[0][col], |m, r| m.max(r[col])));
            means.push(y.iter().fold(D::ZERO, |s, r| s + r[col]) / n);
        }
    }
    let pooled: Vec<D> = maxes.into_iter().chain(means).collect();
    let weight = take(&mut rest, k * 4 * c);
    let bias = take(&mut rest, k);
    let logits: Vec<D> = (0..k)
        .map(|cl| {
            pooled
                .iter()
                .enumerate()
                .fold(bias[cl], |s, (i, &p)| s + weight[cl * 4 * c + i] * p)
        })
        .collect();
    let mx = logits.iter().copied().fold(logits[0], D::max);
    let z = logits.iter().fold(D::ZERO, |s, &l| s + (l - mx).exp());
    Ok(mx + z.ln() - logits[label])
}
