//! Quantile regression forests: CART trees on bootstrap samples whose leaves
//! keep every member observation, giving per-query observation weights and
//! a weighted empirical CDF.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DesignMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QrfConfig {
    pub n_trees: usize,
    /// Features tried per split; `⌊√p⌋` (at least 1) when unset.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
}

impl Default for QrfConfig {
    fn default() -> Self {
        Self { n_trees: 500, mtry: None, min_leaf: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// Training rows in the leaf, repeated by bootstrap multiplicity.
    Leaf { members: Vec<usize> },
    /// Rows with `x[feature] <= threshold` go to `left`.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
    bootstrap: Vec<usize>,
}

impl Tree {
    /// Nodes with the root at index 0.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// The bootstrap sample the tree was grown on.
    pub fn bootstrap(&self) -> &[usize] {
        &self.bootstrap
    }

    pub fn leaf_members(&self, x: &[f64]) -> &[usize] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { members } => return members,
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    trees: Vec<Tree>,
    mtry: usize,
    min_leaf: usize,
    seeds: Vec<u64>,
    x: DMatrix<f64>,
    y: DVector<f64>,
}

struct Grower<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    mtry: usize,
    min_leaf: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn sse(&self, members: &[usize]) -> f64 {
        let n = members.len() as f64;
        let (s, s2) = members.iter().fold((0.0, 0.0), |(s, s2), &i| (s + self.y[i], s2 + self.y[i] * self.y[i]));
        (s2 - s * s / n).max(0.0)
    }

    /// Best variance-reducing split among `mtry` random features.
    fn best_split(&mut self, members: &[usize]) -> Option<(usize, f64)> {
        let p = self.x.ncols();
        let parent = self.sse(members);
        if parent <= 1e-12 * (1.0 + members.iter().map(|&i| self.y[i] * self.y[i]).sum::<f64>()) {
            return None;
        }
        let features = sample(&mut self.rng, p, self.mtry).into_vec();
        let n = members.len();
        let total: f64 = members.iter().map(|&i| self.y[i]).sum();
        let total2: f64 = members.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = members.to_vec();
        for f in features {
            order.sort_by(|&a, &b| self.x[(a, f)].total_cmp(&self.x[(b, f)]).then(a.cmp(&b)));
            let (mut s, mut s2) = (0.0, 0.0);
            for cut in 1..n {
                let yi = self.y[order[cut - 1]];
                s += yi;
                s2 += yi * yi;
                let lo = self.x[(order[cut - 1], f)];
                let hi = self.x[(order[cut], f)];
                if cut < self.min_leaf || n - cut < self.min_leaf || !(hi > lo) {
                    continue;
                }
                let nl = cut as f64;
                let nr = (n - cut) as f64;
                let sse = (s2 - s * s / nl) + ((total2 - s2) - (total - s) * (total - s) / nr);
                if best.is_none_or(|b| sse < b.0) {
                    best = Some((sse, f, 0.5 * (lo + hi)));
                }
            }
        }
        best.filter(|b| b.0 < parent).map(|b| (b.1, b.2))
    }

    fn grow(&mut self, members: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { members: Vec::new() });
        let split = if members.len() >= 2 * self.min_leaf { self.best_split(&members) } else { None };
        match split {
            None => self.nodes[id] = Node::Leaf { members },
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = members.iter().partition(|&&i| self.x[(i, feature)] <= threshold);
                let left = self.grow(l);
                let right = self.grow(r);
                self.nodes[id] = Node::Split { feature, threshold, left, right };
            }
        }
        id
    }
}

pub fn grow_forest(design: &DesignMatrix, cfg: &QrfConfig, seed: u64) -> Result<Forest> {
    grow_forest_xy(design.x(), design.y(), cfg, seed)
}

/// Grow `cfg.n_trees` trees in parallel. Each tree's generator is seeded
/// from a sequence drawn from `seed`, so forests do not depend on the
/// thread count.
pub fn grow_forest_xy(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &QrfConfig, seed: u64) -> Result<Forest> {
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len() });
    }
    if cfg.n_trees == 0 {
        return Err(Error::Parameter("forest needs at least one tree".into()));
    }
    if p == 0 {
        return Err(Error::Precondition("no predictors".into()));
    }
    let mtry = cfg.mtry.unwrap_or_else(|| ((p as f64).sqrt().floor() as usize).max(1));
    if mtry == 0 || mtry > p {
        return Err(Error::Parameter(format!("mtry {mtry} outside 1..={p}")));
    }
    if cfg.min_leaf == 0 || cfg.min_leaf > n {
        return Err(Error::Precondition(format!("min_leaf {} needs 1..={n}", cfg.min_leaf)));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Precondition("design contains missing or non-finite values".into()));
    }
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..cfg.n_trees).map(|_| master.random()).collect();
    let trees = seeds
        .par_iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            bootstrap.sort_unstable();
            let mut g = Grower { x, y, mtry, min_leaf: cfg.min_leaf, rng, nodes: Vec::new() };
            g.grow(bootstrap.clone());
            Tree { nodes: g.nodes, bootstrap }
        })
        .collect();
    Ok(Forest { trees, mtry, min_leaf: cfg.min_leaf, seeds, x: x.clone(), y: y.clone() })
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn mtry(&self) -> usize {
        self.mtry
    }

    pub fn min_leaf(&self) -> usize {
        self.min_leaf
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn y_train(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x_train(&self) -> &DMatrix<f64> {
        &self.x
    }

    fn check_query(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.x.ncols() {
            return Err(Error::Dimension { expected: self.x.ncols(), got: x.len() });
        }
        Ok(())
    }

    /// Observation weights of a query: per tree `1/|leaf|` for each leaf
    /// member (with multiplicity), averaged over trees.
    pub fn compute_weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_query(x)?;
        let mut w = vec![0.0; self.y.len()];
        let b = self.trees.len() as f64;
        for tree in &self.trees {
            let members = tree.leaf_members(x);
            let share = 1.0 / (members.len() as f64 * b);
            for &i in members {
                w[i] += share;
            }
        }
        Ok(w)
    }

    /// Weighted ECDF at each grid point.
    pub fn estimate_cdf(&self, x: &[f64], y_grid: &[f64]) -> Result<Vec<f64>> {
        let w = self.compute_weights(x)?;
        Ok(weighted_cdf(self.y.as_slice(), &w, y_grid))
    }

    /// `inf{y : F̂(y|x) ≥ α}` over the training targets.
    pub fn estimate_quantile(&self, x: &[f64], alpha: f64) -> Result<f64> {
        Ok(self.estimate_quantiles(x, &[alpha])?[0])
    }

    pub fn estimate_quantiles(&self, x: &[f64], alphas: &[f64]) -> Result<Vec<f64>> {
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::Parameter(format!("quantile level {a} is outside (0, 1)")));
        }
        let w = self.compute_weights(x)?;
        Ok(alphas.iter().map(|&a| weighted_quantile(self.y.as_slice(), &w, a)).collect())
    }

    /// Forest conditional mean `Σ w_i y_i`.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        let w = self.compute_weights(x)?;
        Ok(w.iter().zip(self.y.iter()).map(|(a, b)| a * b).sum())
    }
}

pub fn compute_weights(forest: &Forest, x: &[f64]) -> Result<Vec<f64>> {
    forest.compute_weights(x)
}

pub fn estimate_cdf(forest: &Forest, x: &[f64], y_grid: &[f64]) -> Result<Vec<f64>> {
    forest.estimate_cdf(x, y_grid)
}

pub fn estimate_quantile(forest: &Forest, x: &[f64], alpha: f64) -> Result<f64> {
    forest.estimate_quantile(x, alpha)
}

/// `Σ w_i 1{y_i ≤ g}` for each `g`.
pub fn weighted_cdf(y: &[f64], w: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..y.len()).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    grid.iter()
        .map(|&g| idx.iter().take_while(|&&i| y[i] <= g).map(|&i| w[i]).sum::<f64>().min(1.0))
        .collect()
}

/// Smallest `y_i` at which the cumulative weight reaches `alpha`.
pub fn weighted_quantile(y: &[f64], w: &[f64], alpha: f64) -> f64 {
    let mut idx: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
    idx.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut cum = 0.0;
    for &i in &idx {
        cum += w[i];
        if cum >= alpha - 1e-12 {
            return y[i];
        }
    }
    y[*idx.last().expect("weights sum to one")]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(12, 2, |i, j| ((i * (j + 3)) % 7) as f64 + 0.1 * i as f64);
        let y = DVector::from_fn(12, |i, _| x[(i, 0)] * 2.0 - x[(i, 1)]);
        (x, y)
    }

    #[test]
    fn constant_target_gives_single_leaves() {
        let (x, _) = toy();
        let y = DVector::from_element(12, 1.5);
        let f = grow_forest_xy(&x, &y, &QrfConfig { n_trees: 5, mtry: None, min_leaf: 1 }, 0).unwrap();
        assert!(f.trees().iter().all(|t| t.nodes().len() == 1));
    }

    #[test]
    fn full_cart_gives_pure_leaves() {
        let (x, y) = toy();
        let f = grow_forest_xy(&x, &y, &QrfConfig { n_trees: 1, mtry: Some(2), min_leaf: 1 }, 3).unwrap();
        for node in f.trees()[0].nodes() {
            if let Node::Leaf { members } = node {
                assert!(members.iter().all(|&i| y[i] == y[members[0]]));
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = toy();
        let cfg = QrfConfig { n_trees: 8, mtry: Some(1), min_leaf: 2 };
        assert_eq!(grow_forest_xy(&x, &y, &cfg, 9).unwrap(), grow_forest_xy(&x, &y, &cfg, 9).unwrap());
    }

    #[test]
    fn uniform_weights_and_quantiles() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let w = [0.25; 4];
        assert_eq!(weighted_cdf(&y, &w, &[0.0, 2.5, 9.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(weighted_quantile(&y, &w, 0.5), 2.0);
        assert_eq!(weighted_quantile(&y, &w, 0.99), 4.0);
    }

    #[test]
    fn weights_sum_to_one_and_mean_matches() {
        let (x, y) = toy();
        let f = grow_forest_xy(&x, &y, &QrfConfig { n_trees: 20, mtry: None, min_leaf: 2 }, 1).unwrap();
        let q = [3.0, 2.0];
        let w = f.compute_weights(&q).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mean: f64 = w.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        assert!((f.predict_mean(&q).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn parameter_errors() {
        let (x, y) = toy();
        assert!(grow_forest_xy(&x, &y, &QrfConfig { n_trees: 1, mtry: Some(3), min_leaf: 1 }, 0).is_err());
        assert!(grow_forest_xy(&x, &y, &QrfConfig { n_trees: 1, mtry: None, min_leaf: 13 }, 0).is_err());
    }
}
