use crate::gaussian::Vec3;

/// Squared Euclidean distance; every nearest-neighbor path goes through here
/// so tree and brute-force answers agree bit for bit.
#[inline]
pub fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    let (dx, dy, dz) = (a.x - b.x, a.y - b.y, a.z - b.z);
    dx * dx + dy * dy + dz * dz
}

const LEAF: usize = 8;

enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

/// Static 3D kd-tree over a point set.
pub struct KdTree {
    points: Vec<Vec3>,
    /// original index of each reordered point
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Vec3]) -> Self {
        let mut items: Vec<(Vec3, usize)> = points.iter().copied().zip(0..).collect();
        let mut nodes = Vec::new();
        if !items.is_empty() {
            let n = items.len();
            build(&mut items, 0, n, &mut nodes);
        }
        let (points, order) = items.into_iter().unzip();
        KdTree { points, order, nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `(original index, squared distance)` of the nearest point; ties go to
    /// the lower original index.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, q, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, q: &Vec3, best: &mut (usize, f64)) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let d = dist2(q, &self.points[i]);
                    let idx = self.order[i];
                    if d < best.1 || (d == best.1 && idx < best.0) {
                        *best = (idx, d);
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if diff * diff <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(items: &mut [(Vec3, usize)], start: usize, end: usize, nodes: &mut Vec<Node>) -> usize {
    let id = nodes.len();
    if end - start <= LEAF {
        nodes.push(Node::Leaf { start, end });
        return id;
    }
    let slice = &mut items[start..end];
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for (p, _) in slice.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let axis = (hi - lo).imax();
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |a, b| a.0[axis].total_cmp(&b.0[axis]).then(a.1.cmp(&b.1)));
    let value = slice[mid].0[axis];
    nodes.push(Node::Leaf { start: 0, end: 0 });
    // left holds coordinates <= value, right holds >= value
    let left = build(items, start, start + mid, nodes);
    let right = build(items, start + mid, end, nodes);
    nodes[id] = Node::Split { axis, value, left, right };
    id
}

/// O(n) scan with the same distance and tie rule as the tree.
pub fn brute_nearest(points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(q, p);
        if best.is_none_or(|b| d < b.1) {
            best = Some((i, d));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(v: &[(f64, f64, f64)]) -> Vec<Vec3> {
        v.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect()
    }

    proptest! {
        #[test]
        fn tree_matches_scan(
            cloud in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64), 1..200),
            queries in prop::collection::vec((-6.0..6.0f64, -6.0..6.0f64, -6.0..6.0f64), 1..20),
        ) {
            let cloud = pts(&cloud);
            let tree = KdTree::new(&cloud);
            for q in pts(&queries) {
                prop_assert_eq!(tree.nearest(&q), brute_nearest(&cloud, &q));
            }
        }
    }

    #[test]
    fn duplicates_resolve_to_lowest_index() {
        let cloud = vec![Vec3::new(1.0, 0.0, 0.0); 20];
        let tree = KdTree::new(&cloud);
        assert_eq!(tree.nearest(&Vec3::zeros()), Some((0, 1.0)));
    }
}
