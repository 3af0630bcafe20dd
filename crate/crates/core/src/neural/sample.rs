//! Trilinear feature sampling at vertex positions.

use super::ops::{add_row, scale_cols, vol_dims, weighted_sum};
use super::tape::{Tape, Tensor, Var};

/// Per-axis interpolation cell for a corner-aligned coordinate `u` with
/// border clamping: lower index, fraction, and `d pos / d u` (0 when clamped).
fn cell(u: f64, n: usize) -> (usize, f64, f64) {
    if n == 1 {
        return (0, 0.0, 0.0);
    }
    let top = (n - 1) as f64;
    let raw = (u + 1.0) * 0.5 * top;
    let (pos, slope) = if raw <= 0.0 {
        (0.0, 0.0)
    } else if raw >= top {
        (top, 0.0)
    } else {
        (raw, 0.5 * top)
    };
    let i0 = (pos.floor() as usize).min(n - 2);
    (i0, pos - i0 as f64, slope)
}

/// Samples `feat: [C, d0, d1, d2]` at `points: [N, 3]` in the corner-aligned
/// frame, where -1 and 1 are the first and last voxel centres. Points outside
/// are clamped to the border. Returns `[N, C]`.
pub fn grid_sample(tape: &mut Tape, feat: Var, points: Var) -> Var {
    let (fv, pv) = (tape.rc(feat), tape.rc(points));
    let d = vol_dims(&fv);
    let c = fv.shape()[0];
    let v = d[0] * d[1] * d[2];
    let n = pv.rows();
    assert_eq!(pv.cols(), 3, "points must be [N, 3]");
    let cells: Vec<[(usize, f64, f64); 3]> =
        (0..n).map(|r| std::array::from_fn(|a| cell(pv.row(r)[a], d[a]))).collect();
    // corner offset along an axis: 0 or 1, or 0 only on a single-voxel axis
    let step = move |a: usize| usize::from(d[a] > 1);
    let corner = move |cl: &[(usize, f64, f64); 3], q: usize| {
        let (bi, bj, bk) = (q & 1, (q >> 1) & 1, (q >> 2) & 1);
        let idx = (cl[0].0 + bi * step(0)) + d[0] * ((cl[1].0 + bj * step(1)) + d[1] * (cl[2].0 + bk * step(2)));
        let w = |b: usize, t: f64| if b == 1 { t } else { 1.0 - t };
        (idx, [w(bi, cl[0].1), w(bj, cl[1].1), w(bk, cl[2].1)], [bi, bj, bk])
    };
    let mut out = vec![0.0; n * c];
    for (r, cl) in cells.iter().enumerate() {
        for q in 0..8 {
            let (idx, w, _) = corner(cl, q);
            let wt = w[0] * w[1] * w[2];
            if wt == 0.0 {
                continue;
            }
            for ch in 0..c {
                out[r * c + ch] += wt * fv.data()[ch * v + idx];
            }
        }
    }
    tape.push(
        Tensor::new(vec![n, c], out).expect("shape"),
        &[feat, points],
        Box::new(move |g, grads| {
            grads.add(feat, |df| {
                for (r, cl) in cells.iter().enumerate() {
                    for q in 0..8 {
                        let (idx, w, _) = corner(cl, q);
                        let wt = w[0] * w[1] * w[2];
                        for ch in 0..c {
                            df[ch * v + idx] += wt * g[r * c + ch];
                        }
                    }
                }
            });
            grads.add(points, |dp| {
                for (r, cl) in cells.iter().enumerate() {
                    for q in 0..8 {
                        let (idx, w, b) = corner(cl, q);
                        let dot: f64 = (0..c).map(|ch| fv.data()[ch * v + idx] * g[r * c + ch]).sum();
                        for a in 0..3 {
                            let dw = if b[a] == 1 { 1.0 } else { -1.0 };
                            let others: f64 = (0..3).filter(|&o| o != a).map(|o| w[o]).product();
                            dp[r * 3 + a] += dot * dw * others * cl[a].2;
                        }
                    }
                }
            });
        }),
    )
}

/// Scale taking box-normalized coordinates (cell box to `[-1,1]`) to the
/// corner-aligned frame of an `n`-voxel axis.
pub fn box_to_aligned(d: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|a| if d[a] > 1 { d[a] as f64 / (d[a] - 1) as f64 } else { 1.0 })
}

/// Canonical 3×3×3 lattice with spacing of one voxel (`2/n` in box units).
pub fn lattice_offsets(d: [usize; 3]) -> Tensor {
    let mut data = Vec::with_capacity(81);
    for t in 0..27 {
        let s = [(t % 3) as f64 - 1.0, ((t / 3) % 3) as f64 - 1.0, (t / 9) as f64 - 1.0];
        for a in 0..3 {
            data.push(s[a] * 2.0 / d[a] as f64);
        }
    }
    Tensor::new(vec![27, 3], data).expect("shape")
}

/// Aggregates features over a learnable 27-point neighbourhood of each
/// vertex. `mesh_pts` is `[N, 3]` in box-normalized coordinates, `offsets`
/// is `[27, 3]` in the same units and `kernel` is `[27]`. Returns `[N, C]`:
/// `Σ_t kernel[t] · grid_sample(feat, (mesh_pts + offsets[t]) · s)`, with `s`
/// from [`box_to_aligned`].
pub fn offset_sample(tape: &mut Tape, feat: Var, mesh_pts: Var, offsets: Var, kernel: Var) -> Var {
    let (fv, mv, ov, kv) = (tape.rc(feat), tape.rc(mesh_pts), tape.rc(offsets), tape.rc(kernel));
    let d = vol_dims(&fv);
    let (c, v, n) = (fv.shape()[0], d[0] * d[1] * d[2], mv.rows());
    assert_eq!(mv.cols(), 3, "points must be [N, 3]");
    assert_eq!(ov.shape(), &[27, 3], "offsets must be [27, 3]");
    assert_eq!(kv.len(), 27, "kernel must have 27 taps");
    let s = box_to_aligned(d);
    // channel-last copy so the eight corner reads are contiguous
    let mut fl = vec![0.0; v * c];
    for ch in 0..c {
        for (i, &x) in fv.data()[ch * v..(ch + 1) * v].iter().enumerate() {
            fl[i * c + ch] = x;
        }
    }
    let cells: Vec<[(usize, f64, f64); 3]> = (0..n * 27)
        .map(|rt| {
            let (r, t) = (rt / 27, rt % 27);
            std::array::from_fn(|a| cell((mv.row(r)[a] + ov.row(t)[a]) * s[a], d[a]))
        })
        .collect();
    let step: [usize; 3] = std::array::from_fn(|a| usize::from(d[a] > 1));
    let corner = move |cl: &[(usize, f64, f64); 3], q: usize| {
        let b = [q & 1, (q >> 1) & 1, (q >> 2) & 1];
        let idx = (cl[0].0 + b[0] * step[0]) + d[0] * ((cl[1].0 + b[1] * step[1]) + d[1] * (cl[2].0 + b[2] * step[2]));
        let w: [f64; 3] = std::array::from_fn(|a| if b[a] == 1 { cl[a].1 } else { 1.0 - cl[a].1 });
        (idx, w, b)
    };
    let mut out = vec![0.0; n * c];
    for (rt, cl) in cells.iter().enumerate() {
        let (r, kt) = (rt / 27, kv.data()[rt % 27]);
        let dst = &mut out[r * c..(r + 1) * c];
        for q in 0..8 {
            let (idx, w, _) = corner(cl, q);
            let wt = w[0] * w[1] * w[2] * kt;
            if wt != 0.0 {
                dst.iter_mut().zip(&fl[idx * c..(idx + 1) * c]).for_each(|(y, x)| *y += wt * x);
            }
        }
    }
    tape.push(
        Tensor::new(vec![n, c], out).expect("shape"),
        &[feat, mesh_pts, offsets, kernel],
        Box::new(move |g, grads| {
            if grads.wants(feat) {
                let mut dfl = vec![0.0; v * c];
                for (rt, cl) in cells.iter().enumerate() {
                    let (r, kt) = (rt / 27, kv.data()[rt % 27]);
                    let gr = &g[r * c..(r + 1) * c];
                    for q in 0..8 {
                        let (idx, w, _) = corner(cl, q);
                        let wt = w[0] * w[1] * w[2] * kt;
                        if wt != 0.0 {
                            dfl[idx * c..(idx + 1) * c].iter_mut().zip(gr).for_each(|(y, x)| *y += wt * x);
                        }
                    }
                }
                grads.add(feat, |df| {
                    for ch in 0..c {
                        for (i, y) in df[ch * v..(ch + 1) * v].iter_mut().enumerate() {
                            *y += dfl[i * c + ch];
                        }
                    }
                });
            }
            let (wm, wo, wk) = (grads.wants(mesh_pts), grads.wants(offsets), grads.wants(kernel));
            if !(wm || wo || wk) {
                return;
            }
            let (mut dm, mut doff, mut dk) = (vec![0.0; n * 3], [0.0; 81], [0.0; 27]);
            for (rt, cl) in cells.iter().enumerate() {
                let (r, t) = (rt / 27, rt % 27);
                let kt = kv.data()[t];
                let gr = &g[r * c..(r + 1) * c];
                for q in 0..8 {
                    let (idx, w, b) = corner(cl, q);
                    let dot: f64 = fl[idx * c..(idx + 1) * c].iter().zip(gr).map(|(x, y)| x * y).sum();
                    dk[t] += w[0] * w[1] * w[2] * dot;
                    for a in 0..3 {
                        let sign = if b[a] == 1 { 1.0 } else { -1.0 };
                        let dpos = dot * kt * sign * w[(a + 1) % 3] * w[(a + 2) % 3] * cl[a].2 * s[a];
                        dm[r * 3 + a] += dpos;
                        doff[t * 3 + a] += dpos;
                    }
                }
            }
            if wm {
                grads.add_slice(mesh_pts, &dm);
            }
            if wo {
                grads.add_slice(offsets, &doff);
            }
            if wk {
                grads.add_slice(kernel, &dk);
            }
        }),
    )
}

/// [`offset_sample`] built from 27 [`grid_sample`] calls; the reference the
/// fused op is tested against.
pub fn offset_sample_composed(tape: &mut Tape, feat: Var, mesh_pts: Var, offsets: Var, kernel: Var) -> Var {
    let s = box_to_aligned(vol_dims(tape.value(feat)));
    let taps: Vec<Var> = (0..27)
        .map(|t| {
            let p = add_row(tape, mesh_pts, offsets, t);
            let p = scale_cols(tape, p, s);
            grid_sample(tape, feat, p)
        })
        .collect();
    weighted_sum(tape, &taps, kernel)
}
