//! Bounding-volume hierarchy over triangles.
//!
//! Median split on the longest centroid axis, leaves of up to `LEAF_SIZE`
//! triangles. Boxes are padded slightly so slab tests never reject a triangle
//! that the exact intersection routine would accept; queries therefore return
//! exactly what a linear scan returns.

use super::Vec3;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    fn padded(mut self) -> Self {
        let pad = 1e-9 * self.extent().amax().max(1e-3);
        self.min -= Vec3::repeat(pad);
        self.max += Vec3::repeat(pad);
        self
    }

    /// Squared distance from `p` to the box (0 inside).
    pub fn distance_squared(&self, p: &Vec3) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = p[k];
            if v < self.min[k] {
                d2 += (self.min[k] - v).powi(2);
            } else if v > self.max[k] {
                d2 += (v - self.max[k]).powi(2);
            }
        }
        d2
    }

    /// Entry parameter of the ray into the box, if it enters within `t_max`.
    pub fn ray_entry(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for k in 0..3 {
            if dir[k] == 0.0 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let mut a = (self.min[k] - origin[k]) * inv;
            let mut b = (self.max[k] - origin[k]) * inv;
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, len: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Triangle ids in leaf order.
    order: Vec<usize>,
}

impl Bvh {
    pub fn build(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Self {
        let boxes: Vec<Aabb> = triangles.iter().map(|t| tri_bounds(vertices, t)).collect();
        let centroids: Vec<Vec3> = boxes.iter().map(|b| (b.min + b.max) * 0.5).collect();
        let mut order: Vec<usize> = (0..triangles.len()).collect();
        let mut nodes = Vec::with_capacity(2 * triangles.len() / LEAF_SIZE + 1);
        if !triangles.is_empty() {
            build_node(&mut nodes, &mut order, 0, triangles.len(), &boxes, &centroids);
        }
        Self { nodes, order }
    }

    /// Recompute bounds after vertices moved; topology is unchanged.
    pub fn refit(&mut self, vertices: &[Vec3], triangles: &[[usize; 3]]) {
        // Children are always stored after their parent.
        for i in (0..self.nodes.len()).rev() {
            let bounds = match self.nodes[i].kind {
                NodeKind::Leaf { start, len } => self.order[start..start + len]
                    .iter()
                    .map(|&t| tri_bounds(vertices, &triangles[t]))
                    .fold(Aabb::empty(), |acc, b| acc.merge(&b))
                    .padded(),
                NodeKind::Inner { left, right } => {
                    self.nodes[left].bounds.merge(&self.nodes[right].bounds)
                }
            };
            self.nodes[i].bounds = bounds;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Depth-first traversal. `enter(bounds)` decides whether to descend;
    /// `leaf(triangle_id)` is called for every triangle in accepted leaves.
    /// The closures share state through the caller.
    pub(crate) fn traverse(
        &self,
        mut enter: impl FnMut(&Aabb) -> bool,
        mut leaf: impl FnMut(usize),
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = Vec::with_capacity(64);
        stack.push(0usize);
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if !enter(&node.bounds) {
                continue;
            }
            match node.kind {
                NodeKind::Leaf { start, len } => {
                    for &t in &self.order[start..start + len] {
                        leaf(t);
                    }
                }
                NodeKind::Inner { left, right } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
    }

    /// Like [`traverse`](Self::traverse) but visits the nearer child first,
    /// ranked by `key` (smaller is nearer). Pruning decisions are re-evaluated
    /// when a node is popped so a tightening bound takes effect immediately.
    pub(crate) fn traverse_ordered(
        &self,
        mut key: impl FnMut(&Aabb) -> Option<f64>,
        mut leaf: impl FnMut(usize),
        mut still_useful: impl FnMut(f64) -> bool,
    ) {
        if self.nodes.is_empty() {
            return;
        }
        let Some(k0) = key(&self.nodes[0].bounds) else {
            return;
        };
        let mut stack: Vec<(usize, f64)> = Vec::with_capacity(64);
        stack.push((0, k0));
        while let Some((i, k)) = stack.pop() {
            if !still_useful(k) {
                continue;
            }
            match self.nodes[i].kind {
                NodeKind::Leaf { start, len } => {
                    for &t in &self.order[start..start + len] {
                        leaf(t);
                    }
                }
                NodeKind::Inner { left, right } => {
                    let kl = key(&self.nodes[left].bounds);
                    let kr = key(&self.nodes[right].bounds);
                    match (kl, kr) {
                        (Some(a), Some(b)) if a <= b => {
                            stack.push((right, b));
                            stack.push((left, a));
                        }
                        (Some(a), Some(b)) => {
                            stack.push((left, a));
                            stack.push((right, b));
                        }
                        (Some(a), None) => stack.push((left, a)),
                        (None, Some(b)) => stack.push((right, b)),
                        (None, None) => {}
                    }
                }
            }
        }
    }
}

fn tri_bounds(vertices: &[Vec3], t: &[usize; 3]) -> Aabb {
    let mut b = Aabb::empty();
    for &i in t {
        b.grow(&vertices[i]);
    }
    b
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [usize],
    start: usize,
    end: usize,
    boxes: &[Aabb],
    centroids: &[Vec3],
) -> usize {
    let bounds = order[start..end]
        .iter()
        .fold(Aabb::empty(), |acc, &t| acc.merge(&boxes[t]))
        .padded();
    let id = nodes.len();
    nodes.push(Node {
        bounds,
        kind: NodeKind::Leaf { start, len: end - start },
    });
    if end - start <= LEAF_SIZE {
        return id;
    }
    let mut cb = Aabb::empty();
    for &t in &order[start..end] {
        cb.grow(&centroids[t]);
    }
    let axis = cb.extent().imax();
    if cb.extent()[axis] <= 0.0 {
        return id;
    }
    let mid = (start + end) / 2;
    order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        centroids[a][axis]
            .total_cmp(&centroids[b][axis])
            .then(a.cmp(&b))
    });
    let left = build_node(nodes, order, start, mid, boxes, centroids);
    let right = build_node(nodes, order, mid, end, boxes, centroids);
    nodes[id].kind = NodeKind::Inner { left, right };
    id
}
