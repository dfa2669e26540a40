use alloc::vec::Vec;

use rand::Rng;

use super::c_factor;

/// Tree node in preorder storage. The left child of an internal node at
/// position `i` is at `i + 1`; the right child is at `right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Internal { dimension: u32, split: f64, right: u32 },
    External { size: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<Node>,
    height_limit: u32,
}

impl IsolationTree {
    pub(crate) fn grow<V: AsRef<[f64]>, R: Rng>(
        rows: &[V],
        mut sample: Vec<usize>,
        height_limit: u32,
        rng: &mut R,
    ) -> Self {
        let dimension = rows[sample[0]].as_ref().len();
        let mut builder = Builder {
            rows,
            nodes: Vec::new(),
            height_limit,
            splittable: Vec::with_capacity(dimension),
            dimension,
        };
        builder.grow(&mut sample, 0, rng);
        Self {
            nodes: builder.nodes,
            height_limit,
        }
    }

    /// Builds a tree from preorder nodes, recomputing right-child links.
    /// Returns `None` unless the nodes form exactly one complete tree.
    pub fn from_preorder(mut nodes: Vec<Node>, height_limit: u32) -> Option<Self> {
        fn walk(nodes: &mut [Node], at: usize, depth: u32, limit: u32) -> Option<usize> {
            if depth > limit {
                return None;
            }
            match *nodes.get(at)? {
                Node::External { .. } => Some(at + 1),
                Node::Internal { .. } => {
                    let right = walk(nodes, at + 1, depth + 1, limit)?;
                    if let Node::Internal { right: r, .. } = &mut nodes[at] {
                        *r = u32::try_from(right).ok()?;
                    }
                    walk(nodes, right, depth + 1, limit)
                }
            }
        }
        let end = walk(&mut nodes, 0, 0, height_limit)?;
        (end == nodes.len()).then_some(Self { nodes, height_limit })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn height_limit(&self) -> u32 {
        self.height_limit
    }

    /// Edges from the root to the external node reached by `x`, plus
    /// `c(size)` of that node.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        let mut depth = 0u32;
        loop {
            match self.nodes[at] {
                Node::Internal {
                    dimension,
                    split,
                    right,
                } => {
                    at = if x[dimension as usize] <= split {
                        at + 1
                    } else {
                        right as usize
                    };
                    depth += 1;
                }
                Node::External { size } => return depth as f64 + c_factor(size as usize),
            }
        }
    }
}

struct Builder<'a, V> {
    rows: &'a [V],
    nodes: Vec<Node>,
    height_limit: u32,
    splittable: Vec<(u32, f64, f64)>,
    dimension: usize,
}

impl<V: AsRef<[f64]>> Builder<'_, V> {
    fn grow<R: Rng>(&mut self, sample: &mut [usize], depth: u32, rng: &mut R) {
        let external = Node::External {
            size: sample.len() as u32,
        };
        if sample.len() <= 1 || depth >= self.height_limit {
            self.nodes.push(external);
            return;
        }

        self.splittable.clear();
        for d in 0..self.dimension {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &i in sample.iter() {
                let v = self.rows[i].as_ref()[d];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi > lo {
                self.splittable.push((d as u32, lo, hi));
            }
        }
        if self.splittable.is_empty() {
            self.nodes.push(external);
            return;
        }

        let (dimension, lo, hi) = self.splittable[rng.random_range(0..self.splittable.len())];
        let mut split = rng.random_range(lo..hi);
        if split >= hi {
            split = lo;
        }

        // partition: rows with x <= split first
        let mut left_len = 0;
        for j in 0..sample.len() {
            if self.rows[sample[j]].as_ref()[dimension as usize] <= split {
                sample.swap(left_len, j);
                left_len += 1;
            }
        }

        let at = self.nodes.len();
        self.nodes.push(Node::Internal {
            dimension,
            split,
            right: 0,
        });
        let (left, right) = sample.split_at_mut(left_len);
        self.grow(left, depth + 1, rng);
        let right_at = self.nodes.len() as u32;
        if let Node::Internal { right: r, .. } = &mut self.nodes[at] {
            *r = right_at;
        }
        self.grow(right, depth + 1, rng);
    }
}
