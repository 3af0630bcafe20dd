//! Nearest-neighbour acceleration: a kd-tree over points and a bounding
//! volume hierarchy over triangles. Both return exactly what a linear scan
//! would, including the lowest-index choice among ties.

use crate::geom::{Aabb, Vec3};

const LEAF: usize = 8;

enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

pub struct KdTree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<KdNode>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> KdTree {
        let mut t = KdTree { points: points.to_vec(), order: (0..points.len()).collect(), nodes: Vec::new() };
        if !points.is_empty() {
            t.build(0, points.len());
        }
        t
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let b = self.order[start..end].iter().fold(Aabb::EMPTY, |b, &i| b.grow(self.points[i]));
        let ext = b.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = KdNode::Split { axis, value, left, right };
        id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index and squared distance of the nearest point; ties go to the lowest index.
    pub fn nearest(&self, q: Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        if !q.is_finite() {
            // propagate so callers see a non-finite distance
            return Some((0, f64::NAN));
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.visit(0, q, &mut best);
        if best.0 == usize::MAX {
            return Some((0, f64::NAN));
        }
        Some(best)
    }

    fn visit(&self, node: usize, q: Vec3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = self.points[i].dist2(q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.visit(near, q, best);
                // points equal to the split value can sit on either side
                if diff * diff <= best.1 {
                    self.visit(far, q, best);
                }
            }
        }
    }
}

/// Closest point on triangle `abc` to `p` (region tests after Ericson).
pub fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfacePoint {
    pub dist2: f64,
    pub point: Vec3,
    pub face: usize,
}

impl SurfacePoint {
    pub fn distance(&self) -> f64 {
        self.dist2.sqrt()
    }
}

struct BvhNode {
    bounds: Aabb,
    // leaf when count > 0: triangles order[first..first+count]; else children first, first+1
    first: usize,
    count: usize,
}

/// Hierarchy over a triangle soup.
pub struct TriangleBvh {
    tris: Vec<[Vec3; 3]>,
    boxes: Vec<Aabb>,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

const BVH_LEAF: usize = 4;

impl TriangleBvh {
    pub fn new(tris: Vec<[Vec3; 3]>) -> TriangleBvh {
        let boxes: Vec<Aabb> = tris.iter().map(|t| Aabb::from_points(t)).collect();
        let mut bvh = TriangleBvh { order: (0..tris.len()).collect(), tris, boxes, nodes: Vec::new() };
        if !bvh.tris.is_empty() {
            bvh.nodes.push(BvhNode { bounds: Aabb::EMPTY, first: 0, count: 0 });
            bvh.build(0, 0, bvh.tris.len());
        }
        bvh
    }

    pub fn from_mesh(m: &crate::mesh::TriMesh) -> TriangleBvh {
        TriangleBvh::new((0..m.n_faces()).map(|f| m.triangle(f)).collect())
    }

    pub fn triangles(&self) -> &[[Vec3; 3]] {
        &self.tris
    }

    pub fn is_empty(&self) -> bool {
        self.tris.is_empty()
    }

    fn build(&mut self, node: usize, start: usize, end: usize) {
        let bounds = self.order[start..end].iter().fold(Aabb::EMPTY, |b, &i| b.union(self.boxes[i]));
        self.nodes[node].bounds = bounds;
        if end - start <= BVH_LEAF {
            self.nodes[node].first = start;
            self.nodes[node].count = end - start;
            return;
        }
        let cb = self.order[start..end].iter().fold(Aabb::EMPTY, |b, &i| b.grow(self.boxes[i].center()));
        let ext = cb.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = (start + end) / 2;
        let boxes = &self.boxes;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            boxes[a].center()[axis].total_cmp(&boxes[b].center()[axis]).then(a.cmp(&b))
        });
        let left = self.nodes.len();
        self.nodes.push(BvhNode { bounds: Aabb::EMPTY, first: 0, count: 0 });
        self.nodes.push(BvhNode { bounds: Aabb::EMPTY, first: 0, count: 0 });
        self.nodes[node].first = left;
        self.nodes[node].count = 0;
        self.build(left, start, mid);
        self.build(left + 1, mid, end);
    }

    /// Closest surface point; ties between faces go to the lowest face index.
    pub fn nearest(&self, p: Vec3) -> Option<SurfacePoint> {
        if self.tris.is_empty() {
            return None;
        }
        let mut best = SurfacePoint { dist2: f64::INFINITY, point: p, face: usize::MAX };
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if node.bounds.dist2(p) > best.dist2 {
                continue;
            }
            if node.count > 0 {
                for &f in &self.order[node.first..node.first + node.count] {
                    let [a, b, c] = self.tris[f];
                    let q = closest_point_on_triangle(p, a, b, c);
                    let d = q.dist2(p);
                    if d < best.dist2 || (d == best.dist2 && f < best.face) {
                        best = SurfacePoint { dist2: d, point: q, face: f };
                    }
                }
            } else {
                let (l, r) = (node.first, node.first + 1);
                let (dl, dr) = (self.nodes[l].bounds.dist2(p), self.nodes[r].bounds.dist2(p));
                // push the farther child first so the nearer one is popped next
                if dl <= dr {
                    stack.push(r);
                    stack.push(l);
                } else {
                    stack.push(l);
                    stack.push(r);
                }
            }
        }
        Some(best)
    }

    /// Reference linear scan.
    pub fn nearest_brute(&self, p: Vec3) -> Option<SurfacePoint> {
        let mut best: Option<SurfacePoint> = None;
        for (f, &[a, b, c]) in self.tris.iter().enumerate() {
            let q = closest_point_on_triangle(p, a, b, c);
            let d = q.dist2(p);
            if best.is_none_or(|bs| d < bs.dist2) {
                best = Some(SurfacePoint { dist2: d, point: q, face: f });
            }
        }
        best
    }

    /// Every pair `(i, j)`, `i < j`, whose triangle boxes overlap, sorted.
    pub fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        if self.tris.is_empty() {
            return out;
        }
        let mut stack = vec![(0usize, 0usize)];
        while let Some((a, b)) = stack.pop() {
            let (na, nb) = (&self.nodes[a], &self.nodes[b]);
            if !na.bounds.overlaps(&nb.bounds) {
                continue;
            }
            match (na.count > 0, nb.count > 0) {
                (true, true) => {
                    for (ia, &fa) in self.order[na.first..na.first + na.count].iter().enumerate() {
                        let others = &self.order[nb.first..nb.first + nb.count];
                        let others = if a == b { &others[ia + 1..] } else { others };
                        for &fb in others {
                            if self.boxes[fa].overlaps(&self.boxes[fb]) {
                                out.push((fa.min(fb), fa.max(fb)));
                            }
                        }
                    }
                }
                (false, _) if a == b => {
                    let (l, r) = (na.first, na.first + 1);
                    stack.push((l, l));
                    stack.push((r, r));
                    stack.push((l, r));
                }
                (false, true) => {
                    stack.push((na.first, b));
                    stack.push((na.first + 1, b));
                }
                (true, false) => {
                    stack.push((a, nb.first));
                    stack.push((a, nb.first + 1));
                }
                (false, false) => {
                    // descend the larger box
                    if na.bounds.extent().norm2() >= nb.bounds.extent().norm2() {
                        stack.push((na.first, b));
                        stack.push((na.first + 1, b));
                    } else {
                        stack.push((a, nb.first));
                        stack.push((a, nb.first + 1));
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_pts(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn kdtree_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let pts = rand_pts(&mut rng, 300);
            let t = KdTree::new(&pts);
            for q in rand_pts(&mut rng, 50) {
                let (bi, bd) = pts
                    .iter()
                    .enumerate()
                    .fold((usize::MAX, f64::INFINITY), |acc, (i, p)| if p.dist2(q) < acc.1 { (i, p.dist2(q)) } else { acc });
                assert_eq!(t.nearest(q), Some((bi, bd)));
            }
        }
    }

    #[test]
    fn kdtree_ties_prefer_lowest_index() {
        // duplicated points on a lattice
        let mut pts = Vec::new();
        for _ in 0..3 {
            for i in 0..5 {
                for j in 0..5 {
                    pts.push(Vec3::new(i as f64, j as f64, 0.0));
                }
            }
        }
        let t = KdTree::new(&pts);
        assert_eq!(t.nearest(Vec3::new(2.0, 3.0, 1.0)).unwrap().0, 13);
        // equidistant from indices 0 and 1
        assert_eq!(t.nearest(Vec3::new(0.5, 0.0, 0.0)).unwrap().0, 0);
    }

    #[test]
    fn point_above_triangle() {
        let (a, b, c) = (Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let q = closest_point_on_triangle(Vec3::new(0.0, 0.0, 2.0), a, b, c);
        assert_eq!(q, Vec3::ZERO);
        let q = closest_point_on_triangle(Vec3::new(0.25, 0.25, -3.0), a, b, c);
        assert!((q - Vec3::new(0.25, 0.25, 0.0)).norm() < 1e-15);
        let q = closest_point_on_triangle(Vec3::new(1.0, 1.0, 0.0), a, b, c);
        assert!((q - Vec3::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn bvh_nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bvh = TriangleBvh::from_mesh(&icosphere(3));
        for q in rand_pts(&mut rng, 1000) {
            let q = q * 1.7;
            let (a, b) = (bvh.nearest(q).unwrap(), bvh.nearest_brute(q).unwrap());
            assert!((a.dist2.sqrt() - b.dist2.sqrt()).abs() <= 1e-9);
        }
    }

    #[test]
    fn bvh_pairs_match_all_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let tris: Vec<[Vec3; 3]> = (0..200)
            .map(|_| {
                let c = rand_pts(&mut rng, 1)[0] * 3.0;
                let p = rand_pts(&mut rng, 3);
                [c + p[0] * 0.4, c + p[1] * 0.4, c + p[2] * 0.4]
            })
            .collect();
        let bvh = TriangleBvh::new(tris.clone());
        let mut brute = Vec::new();
        for i in 0..tris.len() {
            for j in i + 1..tris.len() {
                if Aabb::from_points(&tris[i]).overlaps(&Aabb::from_points(&tris[j])) {
                    brute.push((i, j));
                }
            }
        }
        assert_eq!(bvh.overlapping_pairs(), brute);
    }
}
