//! Differentiable ops on the tape.
//!
//! Volumes are `[C, d0, d1, d2]` tensors stored channel by channel, each
//! channel in the grid's `i + d0 (j + d1 k)` order. Vertex features are
//! row-major `[N, C]` matrices.

use std::rc::Rc;

use super::tape::{Tape, Tensor, Var};

pub(crate) fn vol_dims(t: &Tensor) -> [usize; 3] {
    let s = t.shape();
    assert_eq!(s.len(), 4, "volume tensor must be [C, d0, d1, d2]");
    [s[1], s[2], s[3]]
}

fn vol_shape(c: usize, d: [usize; 3]) -> Vec<usize> {
    vec![c, d[0], d[1], d[2]]
}

/// `y[i] += a0 x[i-1] + a1 x[i] + a2 x[i+1]`, zero outside the row.
#[inline]
fn row3(y: &mut [f64], x: &[f64], a: [f64; 3]) {
    let n = y.len();
    if n == 1 {
        y[0] += a[1] * x[0];
        return;
    }
    y[0] += a[1] * x[0] + a[2] * x[1];
    y[n - 1] += a[0] * x[n - 2] + a[1] * x[n - 1];
    let (l, m, r) = (&x[..n - 2], &x[1..n - 1], &x[2..n]);
    for (i, yi) in y[1..n - 1].iter_mut().enumerate() {
        *yi += a[0] * l[i] + a[1] * m[i] + a[2] * r[i];
    }
}

/// Dot product with four partial sums, so the reduction pipelines.
#[inline]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += p[l] * q[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `[Σ y[i] x[i-1], Σ y[i] x[i], Σ y[i] x[i+1]]` over in-row pairs.
#[inline]
fn row3_dot(y: &[f64], x: &[f64]) -> [f64; 3] {
    let n = y.len();
    if n == 1 {
        return [0.0, y[0] * x[0], 0.0];
    }
    [dot4(&y[1..], &x[..n - 1]), dot4(y, x), dot4(&y[..n - 1], &x[1..])]
}

/// Row shifts `(dy, dz)` of a 3×3×3 stencil; tap `3p + (dx+1)` for plane `p`.
const PLANES: [(isize, isize); 9] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Start of the row `(j + dy, k + dz)`, if inside the grid.
#[inline]
fn shifted_row(d: [usize; 3], j: usize, k: usize, (dy, dz): (isize, isize)) -> Option<usize> {
    let (jj, kk) = (j as isize + dy, k as isize + dz);
    (jj >= 0 && kk >= 0 && (jj as usize) < d[1] && (kk as usize) < d[2]).then(|| (kk as usize * d[1] + jj as usize) * d[0])
}

/// 3×3×3 convolution, stride 1, zero padding. `w` is `[Co, Ci, 27]` with tap
/// `(dx+1) + 3(dy+1) + 9(dz+1)`; `b` is `[Co]`.
pub fn conv3d(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let (xv, wv, bv) = (tape.rc(x), tape.rc(w), tape.rc(b));
    let d = vol_dims(&xv);
    let (ci, co) = (xv.shape()[0], wv.shape()[0]);
    assert_eq!(wv.shape(), &[co, ci, 27], "conv3d weight shape");
    assert_eq!(bv.len(), co, "conv3d bias shape");
    let v = d[0] * d[1] * d[2];
    let taps = move |wd: &[f64], o: usize, c: usize, p: usize| {
        let t = (o * ci + c) * 27 + 3 * p;
        [wd[t], wd[t + 1], wd[t + 2]]
    };
    let mut out = vec![0.0; co * v];
    for o in 0..co {
        for k in 0..d[2] {
            for j in 0..d[1] {
                let r = (k * d[1] + j) * d[0];
                let dst = &mut out[o * v + r..o * v + r + d[0]];
                dst.iter_mut().for_each(|y| *y = bv.data()[o]);
                for (p, &sh) in PLANES.iter().enumerate() {
                    let Some(s) = shifted_row(d, j, k, sh) else { continue };
                    for c in 0..ci {
                        let a = taps(wv.data(), o, c, p);
                        row3(dst, &xv.data()[c * v + s..c * v + s + d[0]], a);
                    }
                }
            }
        }
    }
    tape.push(
        Tensor::new(vol_shape(co, d), out).expect("shape"),
        &[x, w, b],
        Box::new(move |g, grads| {
            if grads.wants(b) {
                grads.add(b, |db| {
                    for o in 0..co {
                        db[o] += g[o * v..(o + 1) * v].iter().sum::<f64>();
                    }
                });
            }
            if grads.wants(w) {
                grads.add(w, |dw| {
                    for o in 0..co {
                        for k in 0..d[2] {
                            for j in 0..d[1] {
                                let r = o * v + (k * d[1] + j) * d[0];
                                let go = &g[r..r + d[0]];
                                for (p, &sh) in PLANES.iter().enumerate() {
                                    let Some(s) = shifted_row(d, j, k, sh) else { continue };
                                    for c in 0..ci {
                                        let acc = row3_dot(go, &xv.data()[c * v + s..c * v + s + d[0]]);
                                        let t = (o * ci + c) * 27 + 3 * p;
                                        dw[t..t + 3].iter_mut().zip(acc).for_each(|(a, b)| *a += b);
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if grads.wants(x) {
                grads.add(x, |dx| {
                    for c in 0..ci {
                        for k in 0..d[2] {
                            for j in 0..d[1] {
                                let r = c * v + (k * d[1] + j) * d[0];
                                let dst = &mut dx[r..r + d[0]];
                                // the input row feeds output rows shifted by the negated plane
                                for (p, &(dy, dz)) in PLANES.iter().enumerate() {
                                    let Some(s) = shifted_row(d, j, k, (-dy, -dz)) else { continue };
                                    for o in 0..co {
                                        let a = taps(wv.data(), o, c, p);
                                        row3(dst, &g[o * v + s..o * v + s + d[0]], [a[2], a[1], a[0]]);
                                    }
                                }
                            }
                        }
                    }
                });
            }
        }),
    )
}

/// Pointwise channel mixing of a volume: `w` is `[Co, Ci]`, optional bias `[Co]`.
pub fn conv1x1(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Var {
    let (xv, wv) = (tape.rc(x), tape.rc(w));
    let bv = b.map(|b| tape.rc(b));
    let d = vol_dims(&xv);
    let (ci, co) = (xv.shape()[0], wv.shape()[0]);
    assert_eq!(wv.shape(), &[co, ci], "conv1x1 weight shape");
    let v = d[0] * d[1] * d[2];
    let mut out = vec![0.0; co * v];
    for o in 0..co {
        let dst = &mut out[o * v..(o + 1) * v];
        if let Some(bv) = &bv {
            dst.iter_mut().for_each(|y| *y = bv.data()[o]);
        }
        for c in 0..ci {
            let wk = wv.data()[o * ci + c];
            for (y, &xx) in dst.iter_mut().zip(&xv.data()[c * v..(c + 1) * v]) {
                *y += wk * xx;
            }
        }
    }
    let mut inputs = vec![x, w];
    inputs.extend(b);
    tape.push(
        Tensor::new(vol_shape(co, d), out).expect("shape"),
        &inputs,
        Box::new(move |g, grads| {
            if let Some(b) = b {
                grads.add(b, |db| (0..co).for_each(|o| db[o] += g[o * v..(o + 1) * v].iter().sum::<f64>()));
            }
            grads.add(w, |dw| {
                for o in 0..co {
                    for c in 0..ci {
                        dw[o * ci + c] +=
                            g[o * v..(o + 1) * v].iter().zip(&xv.data()[c * v..(c + 1) * v]).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            });
            grads.add(x, |dx| {
                for o in 0..co {
                    for c in 0..ci {
                        let wk = wv.data()[o * ci + c];
                        for (y, &gg) in dx[c * v..(c + 1) * v].iter_mut().zip(&g[o * v..(o + 1) * v]) {
                            *y += wk * gg;
                        }
                    }
                }
            });
        }),
    )
}

pub const NORM_EPS: f64 = 1e-5;

/// Normalizes `groups` strided runs of `count` values: element `e` of group
/// `q` sits at `q * gstride + e * estride`.
#[derive(Clone, Copy)]
struct Layout {
    groups: usize,
    count: usize,
    gstride: usize,
    estride: usize,
}

fn normalize(tape: &mut Tape, x: Var, gain: Var, bias: Var, lay: Layout) -> Var {
    let (xv, gv, bv) = (tape.rc(x), tape.rc(gain), tape.rc(bias));
    assert_eq!(gv.len(), lay.groups, "norm gain shape");
    let n = lay.count as f64;
    let at = move |q: usize, e: usize| q * lay.gstride + e * lay.estride;
    let mut xhat = vec![0.0; xv.len()];
    let mut inv = vec![0.0; lay.groups];
    let mut out = vec![0.0; xv.len()];
    for q in 0..lay.groups {
        let mean = (0..lay.count).map(|e| xv.data()[at(q, e)]).sum::<f64>() / n;
        let var = (0..lay.count).map(|e| (xv.data()[at(q, e)] - mean).powi(2)).sum::<f64>() / n;
        inv[q] = 1.0 / (var + NORM_EPS).sqrt();
        for e in 0..lay.count {
            let h = (xv.data()[at(q, e)] - mean) * inv[q];
            xhat[at(q, e)] = h;
            out[at(q, e)] = gv.data()[q] * h + bv.data()[q];
        }
    }
    let shape = xv.shape().to_vec();
    tape.push(
        Tensor::new(shape, out).expect("shape"),
        &[x, gain, bias],
        Box::new(move |g, grads| {
            grads.add(bias, |db| (0..lay.groups).for_each(|q| db[q] += (0..lay.count).map(|e| g[at(q, e)]).sum::<f64>()));
            grads.add(gain, |dg| {
                (0..lay.groups).for_each(|q| dg[q] += (0..lay.count).map(|e| g[at(q, e)] * xhat[at(q, e)]).sum::<f64>())
            });
            grads.add(x, |dx| {
                for q in 0..lay.groups {
                    let gq = gv.data()[q];
                    let m1 = (0..lay.count).map(|e| g[at(q, e)] * gq).sum::<f64>() / n;
                    let m2 = (0..lay.count).map(|e| g[at(q, e)] * gq * xhat[at(q, e)]).sum::<f64>() / n;
                    for e in 0..lay.count {
                        let i = at(q, e);
                        dx[i] += inv[q] * (g[i] * gq - m1 - xhat[i] * m2);
                    }
                }
            });
        }),
    )
}

/// Per-channel normalization of a volume over its voxels (batch of one).
pub fn instance_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Var {
    let s = tape.value(x).shape().to_vec();
    let v = s[1] * s[2] * s[3];
    normalize(tape, x, gain, bias, Layout { groups: s[0], count: v, gstride: v, estride: 1 })
}

/// Per-column normalization of an `[N, C]` matrix over its rows.
pub fn row_norm(tape: &mut Tape, x: Var, gain: Var, bias: Var) -> Var {
    let s = tape.value(x).shape().to_vec();
    normalize(tape, x, gain, bias, Layout { groups: s[1], count: s[0], gstride: 1, estride: s[1] })
}

fn map_unary(tape: &mut Tape, x: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var {
    let xv = tape.rc(x);
    let out: Vec<f64> = xv.data().iter().map(|&a| f(a)).collect();
    let keep = Rc::new(out.clone());
    tape.push(
        Tensor::new(xv.shape().to_vec(), out).expect("shape"),
        &[x],
        Box::new(move |g, grads| {
            grads.add(x, |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * df(xv.data()[i], keep[i]);
                }
            })
        }),
    )
}

pub fn relu(tape: &mut Tape, x: Var) -> Var {
    map_unary(tape, x, |a| a.max(0.0), |a, _| if a > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid(tape: &mut Tape, x: Var) -> Var {
    map_unary(tape, x, |a| 1.0 / (1.0 + (-a).exp()), |_, y| y * (1.0 - y))
}

pub fn scale(tape: &mut Tape, x: Var, s: f64) -> Var {
    map_unary(tape, x, move |a| a * s, move |_, _| s)
}

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Var {
    let (av, bv) = (tape.rc(a), tape.rc(b));
    assert_eq!(av.shape(), bv.shape(), "add shapes");
    let out = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
    tape.push(
        Tensor::new(av.shape().to_vec(), out).expect("shape"),
        &[a, b],
        Box::new(move |g, grads| {
            grads.add_slice(a, g);
            grads.add_slice(b, g);
        }),
    )
}

/// Stacks tensors along the first axis (channels for volumes).
pub fn concat_first(tape: &mut Tape, xs: &[Var]) -> Var {
    let vals: Vec<Rc<Tensor>> = xs.iter().map(|&x| tape.rc(x)).collect();
    let tail = vals[0].shape()[1..].to_vec();
    assert!(vals.iter().all(|v| v.shape()[1..] == tail[..]), "concat shapes");
    let lens: Vec<usize> = vals.iter().map(|v| v.len()).collect();
    let mut shape = vec![vals.iter().map(|v| v.shape()[0]).sum()];
    shape.extend(tail);
    let data = vals.iter().flat_map(|v| v.data().iter().copied()).collect();
    let ids = xs.to_vec();
    tape.push(
        Tensor::new(shape, data).expect("shape"),
        xs,
        Box::new(move |g, grads| {
            let mut off = 0;
            for (x, &n) in ids.iter().zip(&lens) {
                grads.add_slice(*x, &g[off..off + n]);
                off += n;
            }
        }),
    )
}

/// Joins `[N, Cq]` matrices column-wise.
pub fn concat_cols(tape: &mut Tape, xs: &[Var]) -> Var {
    let vals: Vec<Rc<Tensor>> = xs.iter().map(|&x| tape.rc(x)).collect();
    let n = vals[0].rows();
    assert!(vals.iter().all(|v| v.rows() == n), "concat_cols rows");
    let widths: Vec<usize> = vals.iter().map(|v| v.cols()).collect();
    let total: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * total);
    for r in 0..n {
        for v in &vals {
            data.extend_from_slice(v.row(r));
        }
    }
    let ids = xs.to_vec();
    tape.push(
        Tensor::new(vec![n, total], data).expect("shape"),
        xs,
        Box::new(move |g, grads| {
            let mut off = 0;
            for (x, &w) in ids.iter().zip(&widths) {
                grads.add(*x, |dx| {
                    for r in 0..n {
                        for c in 0..w {
                            dx[r * w + c] += g[r * total + off + c];
                        }
                    }
                });
                off += w;
            }
        }),
    )
}

/// 2×2×2 average pooling; dims must be even.
pub fn avg_pool2(tape: &mut Tape, x: Var) -> Var {
    let xv = tape.rc(x);
    let d = vol_dims(&xv);
    assert!(d.iter().all(|n| n % 2 == 0), "avg_pool2 needs even dims");
    let c = xv.shape()[0];
    let h = [d[0] / 2, d[1] / 2, d[2] / 2];
    let (v, vh) = (d[0] * d[1] * d[2], h[0] * h[1] * h[2]);
    let src = move |ch: usize, i: usize, j: usize, k: usize| ch * v + i + d[0] * (j + d[1] * k);
    let dst = move |ch: usize, i: usize, j: usize, k: usize| ch * vh + i + h[0] * (j + h[1] * k);
    let mut out = vec![0.0; c * vh];
    for ch in 0..c {
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    out[dst(ch, i / 2, j / 2, k / 2)] += 0.125 * xv.data()[src(ch, i, j, k)];
                }
            }
        }
    }
    tape.push(
        Tensor::new(vol_shape(c, h), out).expect("shape"),
        &[x],
        Box::new(move |g, grads| {
            grads.add(x, |dx| {
                for ch in 0..c {
                    for k in 0..d[2] {
                        for j in 0..d[1] {
                            for i in 0..d[0] {
                                dx[src(ch, i, j, k)] += 0.125 * g[dst(ch, i / 2, j / 2, k / 2)];
                            }
                        }
                    }
                }
            })
        }),
    )
}

/// Nearest-neighbour 2× upsampling.
pub fn upsample2(tape: &mut Tape, x: Var) -> Var {
    let xv = tape.rc(x);
    let h = vol_dims(&xv);
    let c = xv.shape()[0];
    let d = [h[0] * 2, h[1] * 2, h[2] * 2];
    let (v, vh) = (d[0] * d[1] * d[2], h[0] * h[1] * h[2]);
    let src = move |ch: usize, i: usize, j: usize, k: usize| ch * vh + i / 2 + h[0] * (j / 2 + h[1] * (k / 2));
    let mut out = vec![0.0; c * v];
    for ch in 0..c {
        for k in 0..d[2] {
            for j in 0..d[1] {
                for i in 0..d[0] {
                    out[ch * v + i + d[0] * (j + d[1] * k)] = xv.data()[src(ch, i, j, k)];
                }
            }
        }
    }
    tape.push(
        Tensor::new(vol_shape(c, d), out).expect("shape"),
        &[x],
        Box::new(move |g, grads| {
            grads.add(x, |dx| {
                for ch in 0..c {
                    for k in 0..d[2] {
                        for j in 0..d[1] {
                            for i in 0..d[0] {
                                dx[src(ch, i, j, k)] += g[ch * v + i + d[0] * (j + d[1] * k)];
                            }
                        }
                    }
                }
            })
        }),
    )
}

/// `x · w + b` for `x: [N, Ci]`, `w: [Ci, Co]`, `b: [Co]`.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Var {
    let (xv, wv) = (tape.rc(x), tape.rc(w));
    let bv = b.map(|b| tape.rc(b));
    let (n, ci) = (xv.rows(), xv.cols());
    assert_eq!(wv.rows(), ci, "linear weight rows");
    let co = wv.cols();
    let mut out = vec![0.0; n * co];
    for r in 0..n {
        let o = &mut out[r * co..(r + 1) * co];
        if let Some(bv) = &bv {
            o.copy_from_slice(bv.data());
        }
        for (c, &xc) in xv.row(r).iter().enumerate() {
            if xc == 0.0 {
                continue;
            }
            for (y, &wk) in o.iter_mut().zip(wv.row(c)) {
                *y += xc * wk;
            }
        }
    }
    let mut inputs = vec![x, w];
    inputs.extend(b);
    tape.push(
        Tensor::new(vec![n, co], out).expect("shape"),
        &inputs,
        Box::new(move |g, grads| {
            if let Some(b) = b {
                grads.add(b, |db| (0..n).for_each(|r| db.iter_mut().zip(&g[r * co..(r + 1) * co]).for_each(|(a, b)| *a += b)));
            }
            grads.add(w, |dw| {
                for r in 0..n {
                    let gr = &g[r * co..(r + 1) * co];
                    for (c, &xc) in xv.row(r).iter().enumerate() {
                        dw[c * co..(c + 1) * co].iter_mut().zip(gr).for_each(|(a, b)| *a += xc * b);
                    }
                }
            });
            grads.add(x, |dx| {
                for r in 0..n {
                    let gr = &g[r * co..(r + 1) * co];
                    for c in 0..ci {
                        dx[r * ci + c] += wv.row(c).iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            });
        }),
    )
}

/// Fixed sparse row combination: output row `m` is `Σ w · x[src]` over `rows[m]`.
pub fn sparse_rows(tape: &mut Tape, x: Var, rows: Rc<Vec<Vec<(usize, f64)>>>) -> Var {
    let xv = tape.rc(x);
    let c = xv.cols();
    let mut out = vec![0.0; rows.len() * c];
    for (m, terms) in rows.iter().enumerate() {
        for &(s, w) in terms {
            out[m * c..(m + 1) * c].iter_mut().zip(xv.row(s)).for_each(|(a, b)| *a += w * b);
        }
    }
    let m = rows.len();
    tape.push(
        Tensor::new(vec![m, c], out).expect("shape"),
        &[x],
        Box::new(move |g, grads| {
            grads.add(x, |dx| {
                for (m, terms) in rows.iter().enumerate() {
                    for &(s, w) in terms {
                        dx[s * c..(s + 1) * c].iter_mut().zip(&g[m * c..(m + 1) * c]).for_each(|(a, b)| *a += w * b);
                    }
                }
            })
        }),
    )
}

/// Multiplies column `a` of an `[N, 3]` matrix by `s[a]`.
pub fn scale_cols(tape: &mut Tape, x: Var, s: [f64; 3]) -> Var {
    let xv = tape.rc(x);
    assert_eq!(xv.cols(), 3, "scale_cols expects three columns");
    let out = xv.data().iter().enumerate().map(|(i, v)| v * s[i % 3]).collect();
    tape.push(
        Tensor::new(xv.shape().to_vec(), out).expect("shape"),
        &[x],
        Box::new(move |g, grads| grads.add(x, |dx| dx.iter_mut().enumerate().for_each(|(i, d)| *d += g[i] * s[i % 3]))),
    )
}

/// `x + off[t]` broadcast over the rows of `x: [N, 3]`, with `off: [T, 3]`.
pub fn add_row(tape: &mut Tape, x: Var, off: Var, t: usize) -> Var {
    let (xv, ov) = (tape.rc(x), tape.rc(off));
    let o = [ov.row(t)[0], ov.row(t)[1], ov.row(t)[2]];
    let out = xv.data().iter().enumerate().map(|(i, v)| v + o[i % 3]).collect();
    tape.push(
        Tensor::new(xv.shape().to_vec(), out).expect("shape"),
        &[x, off],
        Box::new(move |g, grads| {
            grads.add_slice(x, g);
            grads.add(off, |d| (0..g.len()).for_each(|i| d[t * 3 + i % 3] += g[i]));
        }),
    )
}

/// `Σ_t k[t] · xs[t]` over same-shaped inputs.
pub fn weighted_sum(tape: &mut Tape, xs: &[Var], k: Var) -> Var {
    let vals: Vec<Rc<Tensor>> = xs.iter().map(|&x| tape.rc(x)).collect();
    let kv = tape.rc(k);
    assert_eq!(kv.len(), xs.len(), "one weight per input");
    let mut out = vec![0.0; vals[0].len()];
    for (v, &kt) in vals.iter().zip(kv.data()) {
        out.iter_mut().zip(v.data()).for_each(|(a, b)| *a += kt * b);
    }
    let ids = xs.to_vec();
    let mut inputs = xs.to_vec();
    inputs.push(k);
    tape.push(
        Tensor::new(vals[0].shape().to_vec(), out).expect("shape"),
        &inputs,
        Box::new(move |g, grads| {
            grads.add(k, |dk| {
                for (t, v) in vals.iter().enumerate() {
                    dk[t] += v.data().iter().zip(g).map(|(a, b)| a * b).sum::<f64>();
                }
            });
            for (t, &x) in ids.iter().enumerate() {
                let kt = kv.data()[t];
                grads.add(x, |dx| dx.iter_mut().zip(g).for_each(|(a, b)| *a += kt * b));
            }
        }),
    )
}

/// Same values under a new shape.
pub fn reshape(tape: &mut Tape, x: Var, shape: Vec<usize>) -> Var {
    let xv = tape.value(x).clone();
    let t = Tensor::new(shape, xv.into_data()).expect("reshape keeps the element count");
    tape.push(t, &[x], Box::new(move |g, grads| grads.add_slice(x, g)))
}
