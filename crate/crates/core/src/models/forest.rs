//! Gini random forest over bootstrap samples.
//!
//! Tree `t` draws its randomness from a stream derived from `(seed, t)`, so
//! growing more trees never alters the ones already built.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per split.
    pub mtry: usize,
    pub min_leaf: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        positive: usize,
        negative: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Majority vote of the reached leaf; an even leaf votes positive.
    pub fn votes_positive(&self, x: &[f64]) -> bool {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { positive, negative } => return positive >= negative,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match &nodes[at] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub seed: u64,
    pub trees: Vec<Tree>,
}

impl Forest {
    /// `x` is record-major; `y[i]` is true for LosNec.
    pub fn fit(x: &[Vec<f64>], y: &[bool], params: ForestParams, seed: u64) -> Self {
        assert!(!x.is_empty() && x.len() == y.len());
        let p = x[0].len();
        let params = ForestParams {
            mtry: params.mtry.clamp(1, p),
            min_leaf: params.min_leaf.max(1),
            ..params
        };
        let trees = (0..params.n_trees)
            .map(|t| grow_tree(x, y, params, derive_seed(seed, &[t as u64])))
            .collect();
        Self { params, seed, trees }
    }

    /// Fraction of trees voting LosNec.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.votes_positive(x)).count();
        votes as f64 / self.trees.len() as f64
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

fn grow_tree(x: &[Vec<f64>], y: &[bool], params: ForestParams, seed: u64) -> Tree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let sample: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    let mut nodes = Vec::new();
    build(x, y, sample, params, &mut rng, &mut nodes);
    Tree { nodes }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

fn build(
    x: &[Vec<f64>],
    y: &[bool],
    sample: Vec<usize>,
    params: ForestParams,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let n = sample.len();
    let pos = sample.iter().filter(|&&i| y[i]).count();
    let leaf = Node::Leaf {
        positive: pos,
        negative: n - pos,
    };
    if pos == 0 || pos == n || n < 2 * params.min_leaf {
        nodes.push(leaf);
        return id;
    }

    let p = x[0].len();
    let parent = gini(pos, n);
    let mut best: Option<BestSplit> = None;
    let mut order = sample.clone();
    for feature in index::sample(rng, p, params.mtry).into_iter() {
        order.sort_by(|&a, &b| x[a][feature].total_cmp(&x[b][feature]));
        let mut left_pos = 0;
        for k in 1..n {
            if y[order[k - 1]] {
                left_pos += 1;
            }
            let (lo, hi) = (x[order[k - 1]][feature], x[order[k]][feature]);
            if lo == hi || k < params.min_leaf || n - k < params.min_leaf {
                continue;
            }
            let weighted = (k as f64 * gini(left_pos, k) + (n - k) as f64 * gini(pos - left_pos, n - k)) / n as f64;
            let gain = parent - weighted;
            if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(BestSplit {
                    feature,
                    threshold: 0.5 * (lo + hi),
                    gain,
                });
            }
        }
    }

    let Some(best) = best else {
        nodes.push(leaf);
        return id;
    };
    let (left, right): (Vec<usize>, Vec<usize>) = sample
        .into_iter()
        .partition(|&i| x[i][best.feature] <= best.threshold);
    nodes.push(Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left: 0,
        right: 0,
    });
    let l = build(x, y, left, params, rng, nodes);
    let r = build(x, y, right, params, rng, nodes);
    if let Node::Split { left, right, .. } = &mut nodes[id] {
        *left = l;
        *right = r;
    }
    id
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let v = i as f64;
            x.push(vec![v, (i * 7 % 5) as f64]);
            y.push(i >= 10);
        }
        (x, y)
    }

    #[test]
    fn separable_data_is_fit_perfectly() {
        let (x, y) = toy();
        let f = Forest::fit(&x, &y, ForestParams { n_trees: 50, mtry: 2, min_leaf: 1 }, 1);
        for (xi, &yi) in x.iter().zip(&y) {
            let p = f.predict_proba(xi);
            assert!(if yi { p > 0.5 } else { p < 0.5 }, "{xi:?} {p}");
        }
    }

    #[test]
    fn vote_fraction() {
        let leaf = |pos| Tree {
            nodes: vec![Node::Leaf {
                positive: pos,
                negative: 1,
            }],
        };
        let f = Forest {
            params: ForestParams { n_trees: 4, mtry: 1, min_leaf: 1 },
            seed: 0,
            trees: vec![leaf(2), leaf(3), leaf(0), leaf(5)],
        };
        assert_eq!(f.predict_proba(&[0.0]), 0.75);
        let all = Forest {
            trees: vec![leaf(2), leaf(3)],
            ..f
        };
        assert_eq!(all.predict_proba(&[0.0]), 1.0);
    }

    #[test]
    fn prefix_stable() {
        let (x, y) = toy();
        let small = Forest::fit(&x, &y, ForestParams { n_trees: 10, mtry: 1, min_leaf: 2 }, 9);
        let big = Forest::fit(&x, &y, ForestParams { n_trees: 30, mtry: 1, min_leaf: 2 }, 9);
        assert_eq!(small.trees[..], big.trees[..10]);
    }

    #[test]
    fn min_leaf_respected() {
        let (x, y) = toy();
        let f = Forest::fit(&x, &y, ForestParams { n_trees: 20, mtry: 2, min_leaf: 4 }, 3);
        for t in &f.trees {
            for node in &t.nodes {
                if let Node::Leaf { positive, negative } = node {
                    assert!(positive + negative >= 4);
                }
            }
        }
    }
}
