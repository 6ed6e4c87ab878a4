use crate::binning::BinMapper;

/// Tree node, stored in preorder: the left child of an internal node at
/// position `i` is always `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        bin: usize,
        threshold: f64,
        right: usize,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        Tree { nodes }
    }

    pub fn leaf(value: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { right, .. } => 1 + walk(nodes, i + 1).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    right,
                    ..
                } => {
                    // NaN goes right, consistent with binning
                    i = if x[feature] <= threshold { i + 1 } else { right };
                }
            }
        }
    }

    /// Checks the preorder layout: every child index is in range and each
    /// subtree is laid out contiguously.
    pub(crate) fn validate(&self, n_features: usize) -> Result<(), String> {
        fn walk(nodes: &[Node], i: usize, n_features: usize) -> Result<usize, String> {
            match nodes.get(i) {
                None => Err(format!("node {i} out of range")),
                Some(Node::Leaf { .. }) => Ok(i + 1),
                Some(Node::Split { feature, right, .. }) => {
                    if *feature >= n_features {
                        return Err(format!("node {i} splits on feature {feature}"));
                    }
                    let end_left = walk(nodes, i + 1, n_features)?;
                    if end_left != *right {
                        return Err(format!("node {i} right child {right} != {end_left}"));
                    }
                    walk(nodes, *right, n_features)
                }
            }
        }
        let end = walk(&self.nodes, 0, n_features)?;
        if end != self.nodes.len() {
            return Err(format!("{} trailing nodes", self.nodes.len() - end));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Default)]
struct Bucket {
    grad: f64,
    count: u32,
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct GrowLeaf {
    start: usize,
    end: usize,
    depth: usize,
    grad: f64,
    hist: Vec<Vec<Bucket>>,
    best: Option<SplitCandidate>,
}

#[derive(Clone)]
enum Proto {
    Leaf(usize),
    Split {
        feature: usize,
        bin: usize,
        gain: f64,
        left: Box<Proto>,
        right: Box<Proto>,
    },
}

pub(crate) struct GrowConfig {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub max_depth: Option<usize>,
}

pub(crate) struct GrownTree {
    pub tree: Tree,
    /// Leaf value for each row index, used to update predictions.
    pub row_values: Vec<(usize, usize, f64)>,
    pub order: Vec<usize>,
}

/// Grows one regression tree on residuals `grad` (target minus prediction).
/// Leaf values are mean residuals. `bins` is column-major.
pub(crate) fn grow(
    bins: &[Vec<u8>],
    mapper: &BinMapper,
    grad: &[f64],
    cfg: &GrowConfig,
) -> GrownTree {
    let n = grad.len();
    let mut order: Vec<usize> = (0..n).collect();
    let root_hist = build_hist(bins, mapper, grad, &order);
    let mut leaves = vec![GrowLeaf {
        start: 0,
        end: n,
        depth: 0,
        grad: grad.iter().sum(),
        hist: root_hist,
        best: None,
    }];
    leaves[0].best = best_split(&leaves[0], cfg);
    // proto tree: leaf ids refer into `leaves`
    let mut proto = Proto::Leaf(0);

    while leaves.len() < cfg.num_leaves {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.as_ref().map(|b| (i, b.gain)))
            .fold(None::<(usize, f64)>, |acc, (i, g)| match acc {
                Some((_, best)) if best >= g => acc,
                _ => Some((i, g)),
            });
        let Some((id, _)) = pick else { break };
        let split = leaves[id].best.take().unwrap();
        let (start, end, depth) = (leaves[id].start, leaves[id].end, leaves[id].depth);

        // stable partition of the leaf's rows
        let col = &bins[split.feature];
        let slice = &mut order[start..end];
        let (mut left, mut right): (Vec<usize>, Vec<usize>) =
            slice.iter().partition(|&&r| (col[r] as usize) <= split.bin);
        let mid = start + left.len();
        slice[..left.len()].copy_from_slice(&left);
        slice[left.len()..].copy_from_slice(&right);
        left.clear();
        right.clear();

        let left_grad: f64 = order[start..mid].iter().map(|&r| grad[r]).sum();
        let right_grad: f64 = order[mid..end].iter().map(|&r| grad[r]).sum();
        let (small, large_is_left) = if mid - start <= end - mid {
            (&order[start..mid], false)
        } else {
            (&order[mid..end], true)
        };
        let small_hist = build_hist(bins, mapper, grad, small);
        let parent_hist = std::mem::take(&mut leaves[id].hist);
        let large_hist = subtract(parent_hist, &small_hist);
        let (left_hist, right_hist) = if large_is_left {
            (large_hist, small_hist)
        } else {
            (small_hist, large_hist)
        };

        let right_id = leaves.len();
        leaves[id] = GrowLeaf {
            start,
            end: mid,
            depth: depth + 1,
            grad: left_grad,
            hist: left_hist,
            best: None,
        };
        leaves.push(GrowLeaf {
            start: mid,
            end,
            depth: depth + 1,
            grad: right_grad,
            hist: right_hist,
            best: None,
        });
        leaves[id].best = best_split(&leaves[id], cfg);
        leaves[right_id].best = best_split(&leaves[right_id], cfg);
        replace_leaf(&mut proto, id, &split, right_id);
    }

    let values: Vec<f64> = leaves
        .iter()
        .map(|l| {
            let count = l.end - l.start;
            if count == 0 {
                0.0
            } else {
                l.grad / count as f64
            }
        })
        .collect();
    let mut nodes = Vec::new();
    flatten(&proto, mapper, &values, &mut nodes);
    let row_values = leaves
        .iter()
        .zip(&values)
        .map(|(l, &v)| (l.start, l.end, v))
        .collect();
    GrownTree {
        tree: Tree { nodes },
        row_values,
        order,
    }
}

fn replace_leaf(proto: &mut Proto, id: usize, split: &SplitCandidate, right_id: usize) -> bool {
    match proto {
        Proto::Leaf(l) if *l == id => {
            *proto = Proto::Split {
                feature: split.feature,
                bin: split.bin,
                gain: split.gain,
                left: Box::new(Proto::Leaf(id)),
                right: Box::new(Proto::Leaf(right_id)),
            };
            true
        }
        Proto::Leaf(_) => false,
        Proto::Split { left, right, .. } => {
            replace_leaf(left, id, split, right_id) || replace_leaf(right, id, split, right_id)
        }
    }
}

fn flatten(proto: &Proto, mapper: &BinMapper, values: &[f64], out: &mut Vec<Node>) {
    match proto {
        Proto::Leaf(id) => out.push(Node::Leaf { value: values[*id] }),
        Proto::Split {
            feature,
            bin,
            gain,
            left,
            right,
        } => {
            let at = out.len();
            out.push(Node::Leaf { value: 0.0 });
            flatten(left, mapper, values, out);
            let right_at = out.len();
            flatten(right, mapper, values, out);
            out[at] = Node::Split {
                feature: *feature,
                bin: *bin,
                threshold: mapper.upper_bound(*feature, *bin),
                right: right_at,
                gain: *gain,
            };
        }
    }
}

fn build_hist(bins: &[Vec<u8>], mapper: &BinMapper, grad: &[f64], rows: &[usize]) -> Vec<Vec<Bucket>> {
    bins.iter()
        .enumerate()
        .map(|(f, col)| {
            let mut h = vec![Bucket::default(); mapper.n_bins(f)];
            for &r in rows {
                let b = &mut h[col[r] as usize];
                b.grad += grad[r];
                b.count += 1;
            }
            h
        })
        .collect()
}

fn subtract(mut parent: Vec<Vec<Bucket>>, child: &[Vec<Bucket>]) -> Vec<Vec<Bucket>> {
    for (p, c) in parent.iter_mut().zip(child) {
        for (pb, cb) in p.iter_mut().zip(c) {
            pb.grad -= cb.grad;
            pb.count -= cb.count;
        }
    }
    parent
}

fn best_split(leaf: &GrowLeaf, cfg: &GrowConfig) -> Option<SplitCandidate> {
    if let Some(max_depth) = cfg.max_depth {
        if leaf.depth >= max_depth {
            return None;
        }
    }
    let n = leaf.end - leaf.start;
    let min = cfg.min_data_in_leaf.max(1);
    if n < 2 * min {
        return None;
    }
    let total = leaf.grad;
    let parent_score = total * total / n as f64;
    let mut best: Option<SplitCandidate> = None;
    for (f, hist) in leaf.hist.iter().enumerate() {
        let mut left_grad = 0.0;
        let mut left_count = 0usize;
        for (b, bucket) in hist.iter().enumerate().take(hist.len().saturating_sub(1)) {
            left_grad += bucket.grad;
            left_count += bucket.count as usize;
            if left_count < min {
                continue;
            }
            let right_count = n - left_count;
            if right_count < min {
                break;
            }
            let right_grad = total - left_grad;
            let gain = left_grad * left_grad / left_count as f64
                + right_grad * right_grad / right_count as f64
                - parent_score;
            if gain > 1e-12 * (1.0 + parent_score.abs())
                && best.as_ref().map_or(true, |s| gain > s.gain)
            {
                best = Some(SplitCandidate {
                    gain,
                    feature: f,
                    bin: b,
                });
            }
        }
    }
    best
}
