//! BIRCH: a single pass builds a CF-tree of subclusters, then weighted
//! k-means groups the leaf subclusters into the final clusters.

use super::kmeans::{best_of_runs, sq_dist};
use super::ClusterSet;
use crate::error::{Error, Result};

/// Clustering feature: count, linear sum, and sum of squared norms.
#[derive(Debug, Clone)]
struct Cf {
    n: f64,
    ls: Vec<f64>,
    ss: f64,
}

impl Cf {
    fn empty(dim: usize) -> Self {
        Self {
            n: 0.0,
            ls: vec![0.0; dim],
            ss: 0.0,
        }
    }

    fn of_point(p: &[f64]) -> Self {
        Self {
            n: 1.0,
            ls: p.to_vec(),
            ss: p.iter().map(|v| v * v).sum(),
        }
    }

    fn add(&mut self, other: &Cf) {
        self.n += other.n;
        self.ls.iter_mut().zip(&other.ls).for_each(|(a, b)| *a += b);
        self.ss += other.ss;
    }

    fn centroid(&self) -> Vec<f64> {
        self.ls.iter().map(|v| v / self.n).collect()
    }

    /// Root-mean-square distance of members to the centroid.
    fn radius(&self) -> f64 {
        let c2: f64 = self.ls.iter().map(|v| (v / self.n) * (v / self.n)).sum();
        (self.ss / self.n - c2).max(0.0).sqrt()
    }
}

#[derive(Debug)]
struct LeafEntry {
    cf: Cf,
    members: Vec<usize>,
}

#[derive(Debug)]
enum Node {
    Leaf(Vec<LeafEntry>),
    Internal(Vec<(Cf, Node)>),
}

impl Node {
    fn summary(&self, dim: usize) -> Cf {
        let mut cf = Cf::empty(dim);
        match self {
            Node::Leaf(entries) => entries.iter().for_each(|e| cf.add(&e.cf)),
            Node::Internal(children) => children.iter().for_each(|(c, _)| cf.add(c)),
        }
        cf
    }

    fn len(&self) -> usize {
        match self {
            Node::Leaf(e) => e.len(),
            Node::Internal(c) => c.len(),
        }
    }

    fn centroids(&self) -> Vec<Vec<f64>> {
        match self {
            Node::Leaf(e) => e.iter().map(|e| e.cf.centroid()).collect(),
            Node::Internal(c) => c.iter().map(|(cf, _)| cf.centroid()).collect(),
        }
    }

    /// Splits an overfull node around its two most distant entries.
    fn split(self) -> (Node, Node) {
        let centroids = self.centroids();
        let mut far = (0, 1, f64::NEG_INFINITY);
        for i in 0..centroids.len() {
            for j in i + 1..centroids.len() {
                let d = sq_dist(&centroids[i], &centroids[j]);
                if d > far.2 {
                    far = (i, j, d);
                }
            }
        }
        let side: Vec<bool> = centroids
            .iter()
            .enumerate()
            .map(|(i, c)| {
                if i == far.0 {
                    false
                } else if i == far.1 {
                    true
                } else {
                    sq_dist(c, &centroids[far.1]) < sq_dist(c, &centroids[far.0])
                }
            })
            .collect();
        fn partition<T>(items: Vec<T>, side: &[bool]) -> (Vec<T>, Vec<T>) {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for (item, &s) in items.into_iter().zip(side) {
                if s {
                    b.push(item)
                } else {
                    a.push(item)
                }
            }
            (a, b)
        }
        match self {
            Node::Leaf(entries) => {
                let (a, b) = partition(entries, &side);
                (Node::Leaf(a), Node::Leaf(b))
            }
            Node::Internal(children) => {
                let (a, b) = partition(children, &side);
                (Node::Internal(a), Node::Internal(b))
            }
        }
    }

    /// Inserts a point; returns a new sibling when this node had to split.
    fn insert(
        &mut self,
        index: usize,
        point: &[f64],
        threshold: f64,
        branching: usize,
    ) -> Option<Node> {
        let dim = point.len();
        match self {
            Node::Leaf(entries) => {
                let single = Cf::of_point(point);
                let closest = entries
                    .iter()
                    .enumerate()
                    .map(|(i, e)| (i, sq_dist(&e.cf.centroid(), point)))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, _)) = closest {
                    let mut merged = entries[i].cf.clone();
                    merged.add(&single);
                    if merged.radius() <= threshold {
                        entries[i].cf = merged;
                        entries[i].members.push(index);
                        return None;
                    }
                }
                entries.push(LeafEntry {
                    cf: single,
                    members: vec![index],
                });
            }
            Node::Internal(children) => {
                let (i, _) = children
                    .iter()
                    .enumerate()
                    .map(|(i, (cf, _))| (i, sq_dist(&cf.centroid(), point)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .expect("internal nodes are never empty");
                let sibling = children[i].1.insert(index, point, threshold, branching);
                match sibling {
                    None => children[i].0.add(&Cf::of_point(point)),
                    Some(node) => {
                        children[i].0 = children[i].1.summary(dim);
                        children.insert(i + 1, (node.summary(dim), node));
                    }
                }
            }
        }
        if self.len() > branching {
            let placeholder = Node::Leaf(Vec::new());
            let (a, b) = std::mem::replace(self, placeholder).split();
            *self = a;
            return Some(b);
        }
        None
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a LeafEntry>) {
        match self {
            Node::Leaf(entries) => out.extend(entries.iter()),
            Node::Internal(children) => children.iter().for_each(|(_, c)| c.collect_leaves(out)),
        }
    }
}

/// CF-tree with subcluster radius threshold `threshold` and branching factor
/// `branching`, then weighted k-means over leaf centroids. When the tree has
/// fewer than `k` leaf subclusters, each subcluster becomes its own cluster.
pub fn birch(
    points: &[Vec<f64>],
    threshold: f64,
    branching: usize,
    k: usize,
    seed: u64,
) -> Result<ClusterSet> {
    if k == 0 || k > points.len() {
        return Err(Error::param(format!(
            "BIRCH needs 1 <= k <= {} points, got k = {k}",
            points.len()
        )));
    }
    if branching < 2 {
        return Err(Error::param("BIRCH branching factor must be at least 2"));
    }
    let dim = points[0].len();
    let mut root = Node::Leaf(Vec::new());
    for (i, p) in points.iter().enumerate() {
        if let Some(sibling) = root.insert(i, p, threshold, branching) {
            let old = std::mem::replace(&mut root, Node::Leaf(Vec::new()));
            root = Node::Internal(vec![
                (old.summary(dim), old),
                (sibling.summary(dim), sibling),
            ]);
        }
    }
    let mut leaves = Vec::new();
    root.collect_leaves(&mut leaves);

    let centroids: Vec<Vec<f64>> = leaves.iter().map(|e| e.cf.centroid()).collect();
    let weights: Vec<f64> = leaves.iter().map(|e| e.cf.n).collect();
    let groups = if leaves.len() <= k {
        (0..leaves.len()).collect()
    } else {
        best_of_runs(&centroids, Some(&weights), k, seed).assignments
    };
    let mut labels = vec![0usize; points.len()];
    for (entry, &g) in leaves.iter().zip(&groups) {
        for &m in &entry.members {
            labels[m] = g;
        }
    }
    ClusterSet::from_assignments(points, labels)
}
