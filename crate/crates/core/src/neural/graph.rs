//! Vertex-feature ops: parameter-free self-attention and graph convolution.

use std::rc::Rc;

use super::ops::{add, linear, relu, row_norm, sparse_rows};
use super::tape::{Tape, Tensor, Var};
use crate::mesh::TriMesh;

/// Rows with a smaller norm are scaled by this instead.
pub const ATTENTION_GUARD: f64 = 1e-12;

fn unit_rows(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let c = x.cols();
    let mut hat = vec![0.0; x.len()];
    let mut r = vec![0.0; x.rows()];
    for m in 0..x.rows() {
        let row = x.row(m);
        r[m] = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(ATTENTION_GUARD);
        for k in 0..c {
            hat[m * c + k] = row[k] / r[m];
        }
    }
    (hat, r)
}

/// Direct double loop: `A_mn = f_m·f_n / (|f_m||f_n|)` and `g_m = Σ_n A_mn f_n`.
pub fn self_attention_reference(x: &Tensor) -> Tensor {
    let (n, c) = (x.rows(), x.cols());
    let norm = |m: usize| x.row(m).iter().map(|v| v * v).sum::<f64>().sqrt().max(ATTENTION_GUARD);
    let mut out = vec![0.0; n * c];
    for m in 0..n {
        for q in 0..n {
            let a = x.row(m).iter().zip(x.row(q)).map(|(p, r)| p * r).sum::<f64>() / (norm(m) * norm(q));
            for k in 0..c {
                out[m * c + k] += a * x.row(q)[k];
            }
        }
    }
    Tensor::new(vec![n, c], out).expect("shape")
}

/// Same product, one block of attention rows at a time.
pub fn self_attention_blocked(x: &Tensor, block: usize) -> Tensor {
    let (n, c) = (x.rows(), x.cols());
    let (hat, _) = unit_rows(x);
    let mut out = vec![0.0; n * c];
    let mut a = vec![0.0; block.max(1) * n];
    for start in (0..n).step_by(block.max(1)) {
        let end = (start + block.max(1)).min(n);
        for m in start..end {
            let hm = &hat[m * c..(m + 1) * c];
            for q in 0..n {
                a[(m - start) * n + q] = hm.iter().zip(&hat[q * c..(q + 1) * c]).map(|(p, r)| p * r).sum();
            }
        }
        for m in start..end {
            let o = &mut out[m * c..(m + 1) * c];
            for q in 0..n {
                let w = a[(m - start) * n + q];
                o.iter_mut().zip(x.row(q)).for_each(|(y, f)| *y += w * f);
            }
        }
    }
    Tensor::new(vec![n, c], out).expect("shape")
}

/// Self-attention on the tape. The backward pass uses `G = F̂ (F̂ᵀ F)`.
pub fn self_attention(tape: &mut Tape, x: Var) -> Var {
    let xv = tape.rc(x);
    let out = self_attention_blocked(&xv, 64);
    let (n, c) = (xv.rows(), xv.cols());
    tape.push(
        out,
        &[x],
        Box::new(move |g, grads| {
            let (hat, r) = unit_rows(&xv);
            let f = xv.data();
            // s = F̂ᵀ F and ds = F̂ᵀ dG, both C×C
            let mut s = vec![0.0; c * c];
            let mut ds = vec![0.0; c * c];
            for m in 0..n {
                for a in 0..c {
                    let h = hat[m * c + a];
                    for b in 0..c {
                        s[a * c + b] += h * f[m * c + b];
                        ds[a * c + b] += h * g[m * c + b];
                    }
                }
            }
            grads.add(x, |dx| {
                for m in 0..n {
                    // dF̂ = dG sᵀ + F dsᵀ ; dF (direct) = F̂ ds
                    let mut dhat = vec![0.0; c];
                    for a in 0..c {
                        let mut acc = 0.0;
                        for b in 0..c {
                            acc += g[m * c + b] * s[a * c + b] + f[m * c + b] * ds[a * c + b];
                            dx[m * c + b] += hat[m * c + a] * ds[a * c + b];
                        }
                        dhat[a] = acc;
                    }
                    let hm = &hat[m * c..(m + 1) * c];
                    let raw = f[m * c..(m + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt();
                    let proj = if raw > ATTENTION_GUARD { hm.iter().zip(&dhat).map(|(p, q)| p * q).sum() } else { 0.0 };
                    for a in 0..c {
                        dx[m * c + a] += (dhat[a] - hm[a] * proj) / r[m];
                    }
                }
            });
        }),
    )
}

/// Mean-over-neighbours operator for a mesh's one-rings.
pub fn neighbor_mean_rows(m: &TriMesh) -> Rc<Vec<Vec<(usize, f64)>>> {
    Rc::new(
        (0..m.n_vertices())
            .map(|v| {
                let nb = m.neighbors(v);
                let w = if nb.is_empty() { 0.0 } else { 1.0 / nb.len() as f64 };
                nb.iter().map(|&u| (u, w)).collect()
            })
            .collect(),
    )
}

/// Parameters of one graph-convolution layer.
#[derive(Clone, Copy, Debug)]
pub struct GraphConvVars {
    pub w_self: Var,
    pub w_nbr: Var,
    pub bias: Var,
    /// Gain and bias of the per-channel normalization, if enabled.
    pub norm: Option<(Var, Var)>,
}

/// `h'_p = W₀ h_p + W₁ mean_{c∈N(p)} h_c + b`, then normalization and ReLU
/// when `layer.norm` is set.
pub fn graph_conv(tape: &mut Tape, h: Var, adjacency: &Rc<Vec<Vec<(usize, f64)>>>, layer: GraphConvVars) -> Var {
    let own = linear(tape, h, layer.w_self, Some(layer.bias));
    let mean = sparse_rows(tape, h, adjacency.clone());
    let nbr = linear(tape, mean, layer.w_nbr, None);
    let y = add(tape, own, nbr);
    match layer.norm {
        Some((g, b)) => {
            let y = row_norm(tape, y, g, b);
            relu(tape, y)
        }
        None => y,
    }
}

/// Three graph convolutions and a linear head producing `[N, 3]` displacements.
pub fn de_stage(
    tape: &mut Tape,
    h: Var,
    adjacency: &Rc<Vec<Vec<(usize, f64)>>>,
    layers: &[GraphConvVars; 3],
    head: (Var, Var),
) -> Var {
    let mut x = h;
    for layer in layers {
        x = graph_conv(tape, x, adjacency, *layer);
    }
    linear(tape, x, head.0, Some(head.1))
}
