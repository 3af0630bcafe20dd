//! The six mesh losses, each returning its value and the gradient with
//! respect to every vertex position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{vertex_normals, TriMesh};
use crate::spatial::KdTree;

/// A loss value and its per-vertex gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct TermValue {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

impl TermValue {
    pub fn zero(n: usize) -> TermValue {
        TermValue { value: 0.0, grad: vec![Vec3::ZERO; n] }
    }
}

/// Reference surface: points, a normal per point, and a search tree.
pub struct Target {
    tree: KdTree,
    normals: Vec<Vec3>,
}

impl Target {
    /// Uses the vertices of `q` and its area-weighted vertex normals.
    pub fn from_vertices(q: &TriMesh) -> Result<Target> {
        if q.n_vertices() == 0 {
            return Err(Error::Empty { what: "target" });
        }
        Ok(Target { tree: KdTree::new(q.vertices()), normals: vertex_normals(q) })
    }

    /// Vertices plus `per_face` uniform samples on every face, carrying face normals.
    pub fn from_surface(q: &TriMesh, per_face: usize, seed: u64) -> Result<Target> {
        if q.n_vertices() == 0 {
            return Err(Error::Empty { what: "target" });
        }
        let (pts, normals) = surface_samples(q, per_face, seed);
        Ok(Target { tree: KdTree::new(&pts), normals })
    }

    pub fn from_points(points: &[Vec3], normals: Vec<Vec3>) -> Result<Target> {
        if points.is_empty() {
            return Err(Error::Empty { what: "target" });
        }
        if normals.len() != points.len() {
            return Err(Error::ShapeMismatch(format!("{} normals for {} points", normals.len(), points.len())));
        }
        Ok(Target { tree: KdTree::new(points), normals })
    }

    pub fn points(&self) -> &[Vec3] {
        self.tree.points()
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn nearest(&self, p: Vec3) -> (usize, f64) {
        self.tree.nearest(p).expect("target is nonempty")
    }

    /// Nearest target index for every point of `pts`.
    pub fn matches(&self, pts: &[Vec3]) -> Vec<usize> {
        pts.iter().map(|&p| self.nearest(p).0).collect()
    }
}

/// Vertices of `m` followed by `per_face` samples on each face, with the
/// vertex normals then face normals. Deterministic for a seed.
pub fn surface_samples(m: &TriMesh, per_face: usize, seed: u64) -> (Vec<Vec3>, Vec<Vec3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = m.vertices().to_vec();
    let mut normals = vertex_normals(m);
    for f in 0..m.n_faces() {
        let [a, b, c] = m.triangle(f);
        let n = (b - a).cross(c - a).normalized();
        for s in 0..per_face {
            // stratify along the first barycentric coordinate
            let u0: f64 = (s as f64 + rng.random::<f64>()) / per_face as f64;
            let u1: f64 = rng.random();
            let (mut r1, mut r2) = (u0, u1);
            if r1 + r2 > 1.0 {
                r1 = 1.0 - r1;
                r2 = 1.0 - r2;
            }
            pts.push(a + (b - a) * r1 + (c - a) * r2);
            normals.push(n);
        }
    }
    (pts, normals)
}

/// Bidirectional squared-distance chamfer between `p` and the target points.
pub fn chamfer_to(p: &[Vec3], target: &Target) -> Result<TermValue> {
    if p.is_empty() {
        return Err(Error::Empty { what: "chamfer" });
    }
    let q = target.points();
    let (mut forward, mut backward) = (0.0, 0.0);
    let mut grad = vec![Vec3::ZERO; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        let (j, d) = target.nearest(pi);
        forward += d;
        grad[i] += (pi - q[j]) * 2.0;
    }
    let ptree = KdTree::new(p);
    for &qj in q {
        let (i, d) = ptree.nearest(qj).expect("p is nonempty");
        backward += d;
        grad[i] += (p[i] - qj) * 2.0;
    }
    Ok(TermValue { value: forward + backward, grad })
}

pub fn chamfer(p: &[Vec3], q: &[Vec3]) -> Result<TermValue> {
    if q.is_empty() {
        return Err(Error::Empty { what: "chamfer" });
    }
    chamfer_to(p, &Target::from_points(q, vec![Vec3::ZERO; q.len()])?)
}

pub fn laplacian_loss(m: &TriMesh) -> Result<TermValue> {
    let v = m.vertices();
    let n = v.len();
    let mut resid = Vec::with_capacity(n);
    for i in 0..n {
        let nb = m.neighbors(i);
        if nb.is_empty() {
            return Err(Error::IsolatedVertex(i));
        }
        let mean = nb.iter().fold(Vec3::ZERO, |acc, &c| acc + v[c]) / nb.len() as f64;
        resid.push(v[i] - mean);
    }
    let mut out = TermValue::zero(n);
    for i in 0..n {
        let r = resid[i];
        out.value += r.norm2();
        out.grad[i] += r * 2.0;
        let nb = m.neighbors(i);
        let w = 2.0 / nb.len() as f64;
        for &c in nb {
            out.grad[c] -= r * w;
        }
    }
    Ok(out)
}

/// Which formulation of the normal-consistency term to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalMode {
    /// Squared dot of each incident face cross product with the matched normal.
    #[default]
    FaceCross,
    /// Squared dot of each one-ring edge with the matched normal.
    EdgeTangent,
}

/// Normal term against fixed per-vertex matches into `target`.
pub fn normal_loss_with(m: &TriMesh, target: &Target, matches: &[usize], mode: NormalMode) -> TermValue {
    let v = m.vertices();
    let nq = target.normals();
    let mut out = TermValue::zero(v.len());
    match mode {
        NormalMode::FaceCross => {
            for f in m.faces() {
                let [a, b, c] = [v[f[0]], v[f[1]], v[f[2]]];
                let cr = (b - a).cross(c - a);
                // the cross product is the same from each corner; only n_q changes
                for &p in f {
                    let n = nq[matches[p]];
                    let d = cr.dot(n);
                    out.value += d * d;
                    let g = 2.0 * d;
                    out.grad[f[0]] += (b - c).cross(n) * g;
                    out.grad[f[1]] += (c - a).cross(n) * g;
                    out.grad[f[2]] += (a - b).cross(n) * g;
                }
            }
        }
        NormalMode::EdgeTangent => {
            for p in 0..v.len() {
                let n = nq[matches[p]];
                for &c in m.neighbors(p) {
                    let d = (v[p] - v[c]).dot(n);
                    out.value += d * d;
                    out.grad[p] += n * (2.0 * d);
                    out.grad[c] -= n * (2.0 * d);
                }
            }
        }
    }
    out
}

pub fn normal_loss(m: &TriMesh, target: &Target, mode: NormalMode) -> TermValue {
    let matches = target.matches(m.vertices());
    normal_loss_with(m, target, &matches, mode)
}

pub fn edge_loss(m: &TriMesh) -> TermValue {
    let v = m.vertices();
    let mut out = TermValue::zero(v.len());
    for e in &m.topology().edges {
        let d = v[e[0]] - v[e[1]];
        out.value += 2.0 * d.norm2();
        out.grad[e[0]] += d * 4.0;
        out.grad[e[1]] -= d * 4.0;
    }
    out
}

pub fn area_loss(m: &TriMesh) -> TermValue {
    let v = m.vertices();
    let mut out = TermValue::zero(v.len());
    if m.n_faces() == 0 {
        return out;
    }
    let inv = 1.0 / m.n_faces() as f64;
    for f in m.faces() {
        let [a, b, c] = [v[f[0]], v[f[1]], v[f[2]]];
        let cr = (b - a).cross(c - a);
        out.value += 0.5 * cr.norm2() * inv;
        out.grad[f[0]] += (b - c).cross(cr) * inv;
        out.grad[f[1]] += (c - a).cross(cr) * inv;
        out.grad[f[2]] += (a - b).cross(cr) * inv;
    }
    out
}

/// Scale of the area squash in the seal term, relative to the squared mean edge.
pub const SEAL_EPS_REL: f64 = 1e-3;
const NORMAL_GUARD2: f64 = 1e-24;

/// Seal term: per-edge closure indicator plus `lambda` times adjacent-normal
/// disagreement. The squash scale follows the mesh, so its dependence on
/// edge lengths is part of the gradient.
pub fn seal_loss(m: &TriMesh, lambda: f64) -> TermValue {
    let v = m.vertices();
    let topo = m.topology();
    let n_e = topo.edges.len();
    let mut out = TermValue::zero(v.len());
    if n_e == 0 {
        return out;
    }
    let crosses: Vec<Vec3> = m
        .faces()
        .iter()
        .map(|f| (v[f[1]] - v[f[0]]).cross(v[f[2]] - v[f[0]]))
        .collect();

    let mean_len = topo.edges.iter().map(|e| (v[e[0]] - v[e[1]]).norm()).sum::<f64>() / n_e as f64;
    let eps = SEAL_EPS_REL * mean_len * mean_len;
    let eps2 = eps * eps;
    // s(A) = A²/(A²+ε²) with A² = |C|²/4
    let a2: Vec<f64> = crosses.iter().map(|c| 0.25 * c.norm2()).collect();
    let s: Vec<f64> = a2.iter().map(|&x| x / (x + eps2)).collect();
    let ds_da2: Vec<f64> = a2.iter().map(|&x| eps2 / ((x + eps2) * (x + eps2))).collect();
    let ds_deps: Vec<f64> = a2.iter().map(|&x| -2.0 * eps * x / ((x + eps2) * (x + eps2))).collect();

    let inv_e = 1.0 / n_e as f64;
    let mut dface_a2 = vec![0.0; crosses.len()];
    let mut d_eps = 0.0;
    for fs in &topo.edge_faces {
        if fs.len() == 2 {
            let (i, j) = (fs[0], fs[1]);
            out.value += (1.0 - s[i] * s[j]) * inv_e;
            dface_a2[i] -= s[j] * ds_da2[i] * inv_e;
            dface_a2[j] -= s[i] * ds_da2[j] * inv_e;
            d_eps -= (ds_deps[i] * s[j] + s[i] * ds_deps[j]) * inv_e;
        } else {
            out.value += inv_e;
        }
    }

    // guarded unit normals and the pairwise term
    let r: Vec<f64> = crosses.iter().map(|c| (c.norm2() + NORMAL_GUARD2).sqrt()).collect();
    let nrm: Vec<Vec3> = crosses.iter().zip(&r).map(|(c, &r)| *c / r).collect();
    let mut dn = vec![Vec3::ZERO; crosses.len()];
    for fs in &topo.edge_faces {
        if fs.len() == 2 {
            let (i, j) = (fs[0], fs[1]);
            out.value += lambda * (1.0 - nrm[i].dot(nrm[j]));
            dn[i] -= nrm[j] * lambda;
            dn[j] -= nrm[i] * lambda;
        }
    }

    for (fi, f) in m.faces().iter().enumerate() {
        let c = crosses[fi];
        // dL/dC from the area indicator and from the normal
        let g = dn[fi];
        let mut w = c * (0.5 * dface_a2[fi]);
        w += g / r[fi] - c * (c.dot(g) / (r[fi] * r[fi] * r[fi]));
        let [a, b, cc] = [v[f[0]], v[f[1]], v[f[2]]];
        out.grad[f[0]] += (b - cc).cross(w);
        out.grad[f[1]] += (cc - a).cross(w);
        out.grad[f[2]] += (a - b).cross(w);
    }

    // ε = k·L̄², L̄ = mean edge length
    let de_dl = 2.0 * SEAL_EPS_REL * mean_len * d_eps * inv_e;
    for e in &topo.edges {
        let d = v[e[0]] - v[e[1]];
        let len = d.norm();
        if len > 0.0 {
            let u = d * (de_dl / len);
            out.grad[e[0]] += u;
            out.grad[e[1]] -= u;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{mat_mul_vec, rotation_from_axis_angle};
    use crate::mesh::{icosphere, tests::tetrahedron};

    fn fd_rel_err(m: &TriMesh, grad: &[Vec3], f: impl Fn(&TriMesh) -> f64) -> f64 {
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let mut diffs = Vec::new();
        for i in 0..m.n_vertices() {
            for a in 0..3 {
                let mut vp = m.vertices().to_vec();
                let mut vm = vp.clone();
                vp[i][a] += h;
                vm[i][a] -= h;
                let num = (f(&m.with_positions(vp)) - f(&m.with_positions(vm))) / (2.0 * h);
                scale = scale.max(num.abs());
                diffs.push((grad[i][a] - num).abs());
            }
        }
        for d in diffs {
            worst = worst.max(d);
        }
        worst / scale.max(1e-12)
    }

    fn jittered(level: u32, seed: u64, amp: f64) -> TriMesh {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = icosphere(level);
        let v = m
            .vertices()
            .iter()
            .map(|&p| {
                p + Vec3::new(rng.random_range(-amp..amp), rng.random_range(-amp..amp), rng.random_range(-amp..amp))
            })
            .collect();
        m.with_positions(v)
    }

    fn octahedron() -> TriMesh {
        let v = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(0.0, 0.0, -1.0),
        ];
        let f = vec![[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]];
        TriMesh::build(v, f).unwrap()
    }

    #[test]
    fn chamfer_hand_value() {
        let p = [Vec3::ZERO];
        let q = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let c = chamfer(&p, &q).unwrap();
        assert_eq!(c.value, 3.0);
        // own term toward q0, plus both q points pulling on p
        assert_eq!(c.grad[0], Vec3::new(-4.0, -2.0, 0.0));
    }

    #[test]
    fn chamfer_identity_and_empty() {
        let m = icosphere(1);
        let c = chamfer(m.vertices(), m.vertices()).unwrap();
        assert_eq!(c.value, 0.0);
        assert!(c.grad.iter().all(|g| *g == Vec3::ZERO));
        assert!(chamfer(&[], m.vertices()).is_err());
    }

    #[test]
    fn chamfer_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = || Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        let p: Vec<Vec3> = (0..20).map(|_| r()).collect();
        let q: Vec<Vec3> = (0..20).map(|_| r()).collect();
        let brute = |p: &[Vec3], q: &[Vec3]| {
            let dir = |a: &[Vec3], b: &[Vec3]| {
                a.iter().map(|x| b.iter().map(|y| x.dist2(*y)).fold(f64::INFINITY, f64::min)).sum::<f64>()
            };
            dir(p, q) + dir(q, p)
        };
        let c = chamfer(&p, &q).unwrap();
        assert_eq!(c.value, brute(&p, &q));
        assert_eq!(chamfer(&q, &p).unwrap().value, c.value);
        let m = TriMesh::build(p.clone(), vec![]).unwrap();
        let err = fd_rel_err(&m, &c.grad, |mm| brute(mm.vertices(), &q));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn laplacian_octahedron_and_gradient() {
        assert!((laplacian_loss(&octahedron()).unwrap().value - 6.0).abs() < 1e-12);
        let m = jittered(1, 3, 0.1);
        let t = laplacian_loss(&m).unwrap();
        let err = fd_rel_err(&m, &t.grad, |mm| laplacian_loss(mm).unwrap().value);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn laplacian_rejects_isolated_vertex() {
        let t = tetrahedron();
        let mut v = t.vertices().to_vec();
        v.push(Vec3::splat(5.0));
        let m = TriMesh::build(v, t.faces().to_vec()).unwrap();
        assert!(matches!(laplacian_loss(&m), Err(Error::IsolatedVertex(4))));
    }

    #[test]
    fn normal_term_substitution_cases() {
        let m = TriMesh::build(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)], vec![[0, 1, 2]])
            .unwrap();
        let along = Target::from_points(&[Vec3::ZERO], vec![Vec3::new(0.0, 0.0, 1.0)]).unwrap();
        // three corners, each contributes |c|² = 1
        assert!((normal_loss(&m, &along, NormalMode::FaceCross).value - 3.0).abs() < 1e-15);
        let inplane = Target::from_points(&[Vec3::ZERO], vec![Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(normal_loss(&m, &inplane, NormalMode::FaceCross).value, 0.0);
    }

    #[test]
    fn normal_gradients_with_frozen_matches() {
        let q = icosphere(2).map_positions(|p| p * 1.1);
        let target = Target::from_vertices(&q).unwrap();
        let m = jittered(1, 4, 0.05);
        let matches = target.matches(m.vertices());
        for mode in [NormalMode::FaceCross, NormalMode::EdgeTangent] {
            let t = normal_loss_with(&m, &target, &matches, mode);
            let err = fd_rel_err(&m, &t.grad, |mm| normal_loss_with(mm, &target, &matches, mode).value);
            assert!(err < 1e-5, "{mode:?} {err}");
        }
    }

    #[test]
    fn edge_loss_cases() {
        // unit regular tetrahedron
        let h = 0.5 / 2f64.sqrt();
        let v = vec![
            Vec3::new(0.5, 0.0, -h),
            Vec3::new(-0.5, 0.0, -h),
            Vec3::new(0.0, 0.5, h),
            Vec3::new(0.0, -0.5, h),
        ];
        let m = TriMesh::build(v, tetrahedron().faces().to_vec()).unwrap();
        assert!((edge_loss(&m).value - 12.0).abs() < 1e-12);
        let z = m.map_positions(|_| Vec3::splat(0.3));
        assert_eq!(edge_loss(&z).value, 0.0);
        let j = jittered(1, 5, 0.1);
        let t = edge_loss(&j);
        assert!(fd_rel_err(&j, &t.grad, |mm| edge_loss(mm).value) < 1e-5);
    }

    #[test]
    fn area_loss_cases() {
        let m = TriMesh::build(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)], vec![[0, 1, 2]])
            .unwrap();
        assert_eq!(area_loss(&m).value, 0.5);
        let line = m.with_positions(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)]);
        assert_eq!(area_loss(&line).value, 0.0);
        let ico = icosphere(1);
        let brute: f64 = (0..ico.n_faces())
            .map(|f| {
                let [a, b, c] = ico.triangle(f);
                0.5 * (b - a).cross(c - a).norm2()
            })
            .sum::<f64>()
            / ico.n_faces() as f64;
        assert!((area_loss(&ico).value - brute).abs() < 1e-15);
        let t = area_loss(&ico);
        assert!(fd_rel_err(&ico, &t.grad, |mm| area_loss(mm).value) < 1e-5);
    }

    /// Independent re-evaluation of the seal term from its definition.
    fn seal_reference(m: &TriMesh, lambda: f64) -> (f64, f64) {
        let v = m.vertices();
        let topo = m.topology();
        let mean = topo.edges.iter().map(|e| v[e[0]].dist2(v[e[1]]).sqrt()).sum::<f64>() / topo.edges.len() as f64;
        let eps = 1e-3 * mean * mean;
        let area = |f: usize| {
            let [a, b, c] = m.triangle(f);
            0.5 * (b - a).cross(c - a).norm()
        };
        let s = |a: f64| a * a / (a * a + eps * eps);
        let unit = |f: usize| {
            let [a, b, c] = m.triangle(f);
            (b - a).cross(c - a).normalized()
        };
        let mut first = 0.0;
        let mut second = 0.0;
        for fs in &topo.edge_faces {
            if fs.len() == 2 {
                first += 1.0 - s(area(fs[0])) * s(area(fs[1]));
                second += 1.0 - unit(fs[0]).dot(unit(fs[1]));
            } else {
                first += 1.0;
            }
        }
        (first / topo.edges.len() as f64, lambda * second)
    }

    #[test]
    fn seal_on_icosphere() {
        let m = icosphere(2);
        let (first, second) = seal_reference(&m, 0.1);
        assert!(first < 0.01);
        assert!(second > 0.0 && second < 1.0);
        assert!((seal_loss(&m, 0.1).value - (first + second)).abs() < 1e-12);
    }

    #[test]
    fn seal_collapsed_face() {
        let m = icosphere(1);
        let f = m.faces()[0];
        let mut v = m.vertices().to_vec();
        // make face 0 collinear; its neighbours keep their area
        v[f[2]] = (v[f[0]] + v[f[1]]) * 0.5;
        let mc = m.with_positions(v);
        let (first, _) = seal_reference(&mc, 0.1);
        let (base, _) = seal_reference(&m, 0.1);
        let added = first * mc.n_edges() as f64 - base * m.n_edges() as f64;
        // the three edges of the flat face go from ~0 to exactly 1 each
        assert!((added - 3.0).abs() < 0.05, "{added}");
        let t = seal_loss(&mc, 0.1);
        assert!(t.value.is_finite() && t.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn seal_coplanar_pair() {
        let v = vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let m = TriMesh::build(v, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        let (_, second) = seal_reference(&m, 1.0);
        assert_eq!(second, 0.0);
        let with = seal_loss(&m, 1.0).value;
        let without = seal_loss(&m, 0.0).value;
        assert!((with - without).abs() < 1e-15);
    }

    #[test]
    fn seal_gradient() {
        let m = jittered(1, 6, 0.08);
        let t = seal_loss(&m, 0.1);
        let err = fd_rel_err(&m, &t.grad, |mm| seal_loss(mm, 0.1).value);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn rigid_invariance() {
        let m = jittered(1, 7, 0.1);
        let r = rotation_from_axis_angle(Vec3::new(0.3, -1.0, 0.5), 1.1);
        let t = Vec3::new(0.4, -2.0, 3.0);
        let moved = m.map_positions(|p| mat_mul_vec(&r, p) + t);
        assert!((laplacian_loss(&m).unwrap().value - laplacian_loss(&moved).unwrap().value).abs() < 1e-9);
        assert!((edge_loss(&m).value - edge_loss(&moved).value).abs() < 1e-9);
        assert!((area_loss(&m).value - area_loss(&moved).value).abs() < 1e-9);
        let q = icosphere(2);
        let qm = q.map_positions(|p| mat_mul_vec(&r, p) + t);
        let a = chamfer(m.vertices(), q.vertices()).unwrap().value;
        let b = chamfer(moved.vertices(), qm.vertices()).unwrap().value;
        assert!((a - b).abs() < 1e-9);
    }
}
