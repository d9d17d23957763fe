//! Binned-SAH bounding volume hierarchy with watertight triangle tests.

use crate::math::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub const EMPTY: Aabb = Aabb {
        min: Vec3::splat(f64::INFINITY),
        max: Vec3::splat(f64::NEG_INFINITY),
    };

    pub fn grow(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    pub fn merge(&mut self, o: &Aabb) {
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn centroid(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    fn area(&self) -> f64 {
        let e = self.extent();
        if e.x < 0.0 {
            return 0.0;
        }
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    /// Slab test; returns the entry distance if the box is hit within `tmax`.
    fn hit(&self, org: Vec3, inv: Vec3, tmin: f64, tmax: f64) -> Option<f64> {
        let mut t0 = tmin;
        let mut t1 = tmax;
        for a in 0..3 {
            let mut ta = (self.min[a] - org[a]) * inv[a];
            let mut tb = (self.max[a] - org[a]) * inv[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN (0 * inf) falls through the max/min without shrinking.
            t0 = if ta > t0 { ta } else { t0 };
            t1 = if tb < t1 { tb } else { t1 };
            // Slightly loose so grazing hits on box faces are not lost.
            if t0 > t1 * (1.0 + 4.0 * f64::EPSILON) {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TriHit {
    pub t: f64,
    pub prim: u32,
    /// Barycentric weights of vertices 0, 1, 2.
    pub bary: [f64; 3],
}

/// Watertight ray/triangle test (Woop, Benthin, Wald). Hits with
/// `tmin < t < tmax` are reported.
pub fn intersect_triangle(org: Vec3, dir: Vec3, v: &[Vec3; 3], tmin: f64, tmax: f64) -> Option<(f64, [f64; 3])> {
    let ad = dir.abs();
    let kz = if ad.x >= ad.y && ad.x >= ad.z {
        0
    } else if ad.y >= ad.z {
        1
    } else {
        2
    };
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if dir[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sz = 1.0 / dir[kz];
    let sx = dir[kx] * sz;
    let sy = dir[ky] * sz;

    let a = v[0] - org;
    let b = v[1] - org;
    let c = v[2] - org;
    let ax = a[kx] - sx * a[kz];
    let ay = a[ky] - sy * a[kz];
    let bx = b[kx] - sx * b[kz];
    let by = b[ky] - sy * b[kz];
    let cx = c[kx] - sx * c[kz];
    let cy = c[ky] - sy * c[kz];

    let u = cx * by - cy * bx;
    let vv = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || vv < 0.0 || w < 0.0) && (u > 0.0 || vv > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + vv + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * sz * a[kz] + vv * sz * b[kz] + w * sz * c[kz];
    let t = t_scaled / det;
    if !(t > tmin && t < tmax) {
        return None;
    }
    Some((t, [u / det, vv / det, w / det]))
}

#[derive(Debug, Clone)]
enum Node {
    Inner { bounds: Aabb, left: u32, right: u32 },
    Leaf { bounds: Aabb, start: u32, count: u32 },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Inner { bounds, .. } | Node::Leaf { bounds, .. } => bounds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Permutation of primitive ids referenced by leaves.
    order: Vec<u32>,
}

const BINS: usize = 12;
const LEAF_MAX: usize = 4;

impl Bvh {
    pub fn build(tris: &[[Vec3; 3]]) -> Bvh {
        let boxes: Vec<Aabb> = tris
            .iter()
            .map(|t| {
                let mut b = Aabb::EMPTY;
                t.iter().for_each(|&p| b.grow(p));
                b
            })
            .collect();
        let centroids: Vec<Vec3> = boxes.iter().map(Aabb::centroid).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * tris.len().max(1)),
            order: (0..tris.len() as u32).collect(),
        };
        if tris.is_empty() {
            bvh.nodes.push(Node::Leaf {
                bounds: Aabb::EMPTY,
                start: 0,
                count: 0,
            });
            return bvh;
        }
        bvh.build_node(&boxes, &centroids, 0, tris.len());
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], cents: &[Vec3], start: usize, end: usize) -> u32 {
        let mut bounds = Aabb::EMPTY;
        let mut cbounds = Aabb::EMPTY;
        for &p in &self.order[start..end] {
            bounds.merge(&boxes[p as usize]);
            cbounds.grow(cents[p as usize]);
        }
        let id = self.nodes.len() as u32;
        let count = end - start;
        let leaf = Node::Leaf {
            bounds,
            start: start as u32,
            count: count as u32,
        };
        self.nodes.push(leaf.clone());
        if count <= LEAF_MAX {
            return id;
        }
        let ext = cbounds.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = if ext[axis] <= 0.0 {
            start + count / 2
        } else {
            let lo = cbounds.min[axis];
            let scale = BINS as f64 / ext[axis];
            let bin_of = |p: u32| (((cents[p as usize][axis] - lo) * scale) as usize).min(BINS - 1);
            let mut bin_box = [Aabb::EMPTY; BINS];
            let mut bin_cnt = [0usize; BINS];
            for &p in &self.order[start..end] {
                let b = bin_of(p);
                bin_box[b].merge(&boxes[p as usize]);
                bin_cnt[b] += 1;
            }
            let mut best = (f64::INFINITY, 0);
            for split in 1..BINS {
                let (mut lb, mut rb) = (Aabb::EMPTY, Aabb::EMPTY);
                let (mut lc, mut rc) = (0, 0);
                for b in 0..split {
                    lb.merge(&bin_box[b]);
                    lc += bin_cnt[b];
                }
                for b in split..BINS {
                    rb.merge(&bin_box[b]);
                    rc += bin_cnt[b];
                }
                if lc == 0 || rc == 0 {
                    continue;
                }
                let cost = lb.area() * lc as f64 + rb.area() * rc as f64;
                if cost < best.0 {
                    best = (cost, split);
                }
            }
            if best.1 == 0 {
                start + count / 2
            } else {
                let split = best.1;
                let slice = &mut self.order[start..end];
                slice.sort_by_key(|&p| (bin_of(p) >= split, p));
                start + slice.iter().take_while(|&&p| bin_of(p) < split).count()
            }
        };
        let mid = if mid == start || mid == end {
            let slice = &mut self.order[start..end];
            slice.sort_by(|&a, &b| {
                cents[a as usize][axis]
                    .partial_cmp(&cents[b as usize][axis])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            start + count / 2
        } else {
            mid
        };
        let left = self.build_node(boxes, cents, start, mid);
        let right = self.build_node(boxes, cents, mid, end);
        self.nodes[id as usize] = Node::Inner { bounds, left, right };
        id
    }

    pub fn bounds(&self) -> Aabb {
        *self.nodes[0].bounds()
    }

    /// Nearest hit with `tmin < t < tmax`; equal distances resolve to the
    /// lower primitive id.
    pub fn intersect(&self, tris: &[[Vec3; 3]], org: Vec3, dir: Vec3, tmin: f64, tmax: f64) -> Option<TriHit> {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<TriHit> = None;
        let mut tbest = tmax;
        let mut stack = [0u32; 64];
        let mut sp = 0;
        if self.nodes[0].bounds().hit(org, inv, tmin, tbest).is_none() {
            return None;
        }
        stack[sp] = 0;
        sp += 1;
        while sp > 0 {
            sp -= 1;
            match &self.nodes[stack[sp] as usize] {
                Node::Leaf { start, count, .. } => {
                    for &p in &self.order[*start as usize..(*start + *count) as usize] {
                        // Inclusive upper bound so ties pick the lower id.
                        let limit = tbest * (1.0 + 1e-15) + 1e-300;
                        if let Some((t, bary)) = intersect_triangle(org, dir, &tris[p as usize], tmin, limit) {
                            let better = match best {
                                None => true,
                                Some(b) => t < b.t || (t == b.t && p < b.prim),
                            };
                            if better {
                                best = Some(TriHit { t, prim: p, bary });
                                tbest = t;
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    let hl = self.nodes[*left as usize].bounds().hit(org, inv, tmin, tbest * (1.0 + 1e-12));
                    let hr = self.nodes[*right as usize].bounds().hit(org, inv, tmin, tbest * (1.0 + 1e-12));
                    match (hl, hr) {
                        (Some(a), Some(b)) => {
                            let (near, far) = if a <= b { (*left, *right) } else { (*right, *left) };
                            stack[sp] = far;
                            stack[sp + 1] = near;
                            sp += 2;
                        }
                        (Some(_), None) => {
                            stack[sp] = *left;
                            sp += 1;
                        }
                        (None, Some(_)) => {
                            stack[sp] = *right;
                            sp += 1;
                        }
                        (None, None) => {}
                    }
                }
            }
        }
        best.filter(|b| b.t < tmax)
    }

    /// Any hit with `tmin < t < tmax`.
    pub fn occluded(&self, tris: &[[Vec3; 3]], org: Vec3, dir: Vec3, tmin: f64, tmax: f64) -> bool {
        let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = [0u32; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let node = &self.nodes[stack[sp] as usize];
            if node.bounds().hit(org, inv, tmin, tmax).is_none() {
                continue;
            }
            match node {
                Node::Leaf { start, count, .. } => {
                    for &p in &self.order[*start as usize..(*start + *count) as usize] {
                        if intersect_triangle(org, dir, &tris[p as usize], tmin, tmax).is_some() {
                            return true;
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack[sp] = *left;
                    stack[sp + 1] = *right;
                    sp += 2;
                }
            }
        }
        false
    }
}

/// Linear scan over every triangle; reference for [`Bvh::intersect`].
pub fn intersect_brute_force(tris: &[[Vec3; 3]], org: Vec3, dir: Vec3, tmin: f64, tmax: f64) -> Option<TriHit> {
    let mut best: Option<TriHit> = None;
    for (p, tri) in tris.iter().enumerate() {
        if let Some((t, bary)) = intersect_triangle(org, dir, tri, tmin, tmax) {
            if best.is_none_or(|b| t < b.t) {
                best = Some(TriHit {
                    t,
                    prim: p as u32,
                    bary,
                });
            }
        }
    }
    best
}
