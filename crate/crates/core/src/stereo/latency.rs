//! Sequential-depth model for cascaded versus parallel convolution stages.

use crate::error::{Error, Result};

/// Convolution stages (nodes) and their data dependencies (edges).
#[derive(Clone, Debug, Default)]
pub struct StructureGraph {
    nodes: usize,
    edges: Vec<(usize, usize)>,
}

impl StructureGraph {
    pub fn new(nodes: usize) -> Self {
        StructureGraph {
            nodes,
            edges: Vec::new(),
        }
    }

    pub fn add_node(&mut self) -> usize {
        self.nodes += 1;
        self.nodes - 1
    }

    /// `to` consumes the output of `from`.
    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from >= self.nodes || to >= self.nodes {
            return Err(Error::InvalidArgument(format!(
                "edge {from} -> {to} references a node outside 0..{}",
                self.nodes
            )));
        }
        self.edges.push((from, to));
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    /// The group chain of one granular convolution: `G` stages in sequence.
    pub fn granular_cascade(groups: usize) -> Self {
        let mut g = StructureGraph::new(groups);
        for i in 1..groups {
            g.edges.push((i - 1, i));
        }
        g
    }

    /// `arms` independent chains, each `depth` stages long after a shared
    /// input node.
    pub fn parallel_arms(arms: usize, depth: usize) -> Self {
        let mut g = StructureGraph::new(1);
        for _ in 0..arms {
            let mut prev = 0;
            for _ in 0..depth {
                let n = g.add_node();
                g.edges.push((prev, n));
                prev = n;
            }
        }
        g
    }

    /// `blocks` granular convolutions of `groups` stages each, chained one
    /// after another.
    pub fn cascaded_blocks(blocks: usize, groups: usize) -> Self {
        let stages = blocks * (groups - 1) + 1;
        StructureGraph::granular_cascade(stages)
    }

    /// Length, in edges, of the longest chain of dependent stages.
    pub fn sequential_depth(&self) -> Result<usize> {
        let mut indegree = vec![0usize; self.nodes];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); self.nodes];
        for &(a, b) in &self.edges {
            indegree[b] += 1;
            out[a].push(b);
        }
        let mut queue: Vec<usize> = (0..self.nodes).filter(|&n| indegree[n] == 0).collect();
        let mut depth = vec![0usize; self.nodes];
        let mut visited = 0;
        while let Some(n) = queue.pop() {
            visited += 1;
            for &m in &out[n] {
                depth[m] = depth[m].max(depth[n] + 1);
                indegree[m] -= 1;
                if indegree[m] == 0 {
                    queue.push(m);
                }
            }
        }
        if visited != self.nodes {
            return Err(Error::Cycle);
        }
        Ok(depth.into_iter().max().unwrap_or(0))
    }
}

/// Sequential stages of `arms` granular convolutions with `groups` groups
/// run side by side, relative to running them as a cascade:
/// `cascade / arms`, integer-divided and never below one stage.
pub fn parallel_latency(groups: usize, arms: usize) -> usize {
    let cascade = StructureGraph::cascaded_blocks(arms.max(1), groups.max(2))
        .sequential_depth()
        .unwrap_or(0);
    (cascade / arms.max(1)).max(1)
}
