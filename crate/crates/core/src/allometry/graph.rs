use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const NODE_FEATURES: usize = 8;

/// Undirected molecular graph with fixed-width node features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoleculeGraph {
    pub drug_id: usize,
    /// One row of [`NODE_FEATURES`] values per atom.
    pub features: Vec<Vec<f64>>,
    /// Each undirected edge once, as `(min, max)`.
    pub edges: Vec<(usize, usize)>,
}

impl MoleculeGraph {
    pub fn new(drug_id: usize, features: Vec<Vec<f64>>, edges: Vec<(usize, usize)>) -> Result<Self> {
        let g = Self {
            drug_id,
            features,
            edges: edges
                .into_iter()
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn num_nodes(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if n == 0 {
            return Err(Error::Contract(format!("drug {}: empty graph", self.drug_id)));
        }
        if let Some(row) = self.features.iter().find(|r| r.len() != NODE_FEATURES) {
            return Err(Error::shape("molecule_graph", &[NODE_FEATURES], &[row.len()]));
        }
        for &(a, b) in &self.edges {
            if a == b {
                return Err(Error::Contract(format!("drug {}: self-loop at {a}", self.drug_id)));
            }
            if a >= n || b >= n {
                return Err(Error::Contract(format!(
                    "drug {}: edge ({a}, {b}) out of range",
                    self.drug_id
                )));
            }
        }
        if !self.is_connected() {
            return Err(Error::Contract(format!("drug {}: graph is disconnected", self.drug_id)));
        }
        Ok(())
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_nodes()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let n = self.num_nodes();
        if n == 0 {
            return false;
        }
        let adj = self.neighbors();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    queue.push_back(u);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Mean aggregation operator over `N(v) ∪ {v}` as a dense row-stochastic
    /// matrix.
    pub fn mean_aggregation(&self) -> Tensor {
        let n = self.num_nodes();
        let mut a = vec![0.0; n * n];
        for (v, nbrs) in self.neighbors().iter().enumerate() {
            let w = 1.0 / (nbrs.len() + 1) as f64;
            a[v * n + v] = w;
            for &u in nbrs {
                a[v * n + u] = w;
            }
        }
        Tensor::new(&[n, n], a).expect("square aggregation")
    }

    pub fn feature_tensor(&self) -> Tensor {
        Tensor::new(&[self.num_nodes(), NODE_FEATURES], self.features.concat()).expect("feature shape")
    }

    pub fn mean_features(&self) -> [f64; NODE_FEATURES] {
        let mut m = [0.0; NODE_FEATURES];
        for row in &self.features {
            m.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        let n = self.num_nodes() as f64;
        m.iter_mut().for_each(|a| *a /= n);
        m
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(Error::Contract("not a permutation".into()));
        }
        let mut features = vec![Vec::new(); n];
        for (old, &new) in perm.iter().enumerate() {
            features[new] = self.features[old].clone();
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        Self::new(self.drug_id, features, edges)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64; NODE_FEATURES]).collect()
    }

    #[test]
    fn rejects_invalid_graphs() {
        assert!(MoleculeGraph::new(0, vec![], vec![]).is_err());
        assert!(MoleculeGraph::new(0, feats(2), vec![(0, 0)]).is_err());
        assert!(MoleculeGraph::new(0, feats(3), vec![(0, 1)]).is_err());
        assert!(MoleculeGraph::new(0, feats(1), vec![]).is_ok());
    }

    #[test]
    fn aggregation_rows_sum_to_one() {
        let g = MoleculeGraph::new(0, feats(4), vec![(0, 1), (1, 2), (2, 3), (3, 1)]).unwrap();
        let a = g.mean_aggregation();
        for i in 0..4 {
            let s: f64 = a.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(a.get2(1, 1), 0.25);
    }
}
