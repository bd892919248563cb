//! Graphs and the penalty weight matrices built from them.
//!
//! External edge-list files are 1-based; indices are converted to 0-based at
//! the parsing boundary and stay 0-based everywhere else.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::linalg::symmetric_spectral_norm;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("node index {0} out of range for {1} nodes")]
    NodeOutOfRange(usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("negative weight {weight} on edge ({u}, {v})")]
    NegativeWeight { u: usize, v: usize, weight: f64 },
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("infeasible perturbation: npe = {npe} but graph has {edges} edges and {absent} absent pairs")]
    InfeasiblePerturbation { npe: i64, edges: usize, absent: usize },
    #[error("penalty matrices have different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("reference penalty matrix has zero spectral norm")]
    ZeroDenominator,
    #[error("custom penalty matrix is not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("edge list parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Undirected graph with nonnegative edge weights. Node indices are 0-based;
/// edges are stored with `u < v` and unordered pairs are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, GraphError> {
        if num_nodes == 0 {
            return Err(GraphError::EmptyGraph);
        }
        let mut normalized = Vec::with_capacity(edges.len());
        let mut seen = std::collections::HashSet::new();
        for (u, v, w) in edges {
            if u >= num_nodes {
                return Err(GraphError::NodeOutOfRange(u, num_nodes));
            }
            if v >= num_nodes {
                return Err(GraphError::NodeOutOfRange(v, num_nodes));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            if !(w >= 0.0) {
                return Err(GraphError::NegativeWeight { u, v, weight: w });
            }
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            if !seen.insert((a, b)) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
            normalized.push((a, b, w));
        }
        normalized.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        Ok(Self { num_nodes, edges: normalized })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Weighted degree of every node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.num_nodes];
        for &(u, v, w) in &self.edges {
            d[u] += w;
            d[v] += w;
        }
        d
    }

    /// Parses the edge-list format: a required header `nodes <p>`, `#`
    /// comments, then one whitespace-separated `u v [w]` edge per line with
    /// 1-based node indices and weight defaulting to 1.
    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut num_nodes: Option<usize> = None;
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if num_nodes.is_none() {
                if fields.len() == 2 && fields[0] == "nodes" {
                    let p = fields[1].parse::<usize>().map_err(|e| GraphError::Parse {
                        line: line_no,
                        message: format!("invalid node count {:?}: {e}", fields[1]),
                    })?;
                    num_nodes = Some(p);
                    continue;
                }
                return Err(GraphError::Parse {
                    line: line_no,
                    message: "expected header line `nodes <p>` before edges".into(),
                });
            }
            if fields.len() < 2 || fields.len() > 3 {
                return Err(GraphError::Parse {
                    line: line_no,
                    message: format!("expected `u v [w]`, got {} fields", fields.len()),
                });
            }
            let parse_idx = |s: &str| -> Result<usize, GraphError> {
                let k = s.parse::<usize>().map_err(|e| GraphError::Parse {
                    line: line_no,
                    message: format!("invalid node index {s:?}: {e}"),
                })?;
                if k == 0 {
                    return Err(GraphError::Parse {
                        line: line_no,
                        message: "node indices are 1-based; got 0".into(),
                    });
                }
                Ok(k - 1)
            };
            let u = parse_idx(fields[0])?;
            let v = parse_idx(fields[1])?;
            let w = if fields.len() == 3 {
                fields[2].parse::<f64>().map_err(|e| GraphError::Parse {
                    line: line_no,
                    message: format!("invalid weight {:?}: {e}", fields[2]),
                })?
            } else {
                1.0
            };
            edges.push((u, v, w));
        }
        let p = num_nodes.ok_or(GraphError::Parse {
            line: 0,
            message: "missing required header line `nodes <p>`".into(),
        })?;
        Self::new(p, edges)
    }

    /// Serializes to the edge-list format accepted by `parse_edge_list`.
    pub fn to_edge_list_string(&self) -> String {
        let mut out = format!("nodes {}\n", self.num_nodes);
        for &(u, v, w) in &self.edges {
            out.push_str(&format!("{} {} {}\n", u + 1, v + 1, w));
        }
        out
    }

    /// Randomly removes (`npe < 0`) or adds (`npe > 0`) `|npe|` edges, sampled
    /// uniformly without replacement. Added edges get unit weight.
    /// Deterministic given the seed.
    pub fn perturb_edges(&self, npe: i64, rng_seed: u64) -> Result<Self, GraphError> {
        let total_pairs = self.num_nodes * (self.num_nodes - 1) / 2;
        let absent = total_pairs - self.edges.len();
        if (npe < 0 && npe.unsigned_abs() as usize > self.edges.len())
            || (npe > 0 && npe as usize > absent)
        {
            return Err(GraphError::InfeasiblePerturbation {
                npe,
                edges: self.edges.len(),
                absent,
            });
        }
        if npe == 0 {
            return Ok(self.clone());
        }
        let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
        if npe < 0 {
            let keep = self.edges.len() - npe.unsigned_abs() as usize;
            let chosen =
                rand::seq::index::sample(&mut rng, self.edges.len(), self.edges.len() - keep);
            let drop: std::collections::HashSet<usize> = chosen.into_iter().collect();
            let edges = self
                .edges
                .iter()
                .enumerate()
                .filter(|(i, _)| !drop.contains(i))
                .map(|(_, e)| *e)
                .collect();
            Self::new(self.num_nodes, edges)
        } else {
            let present: std::collections::HashSet<(usize, usize)> =
                self.edges.iter().map(|&(u, v, _)| (u, v)).collect();
            let mut missing = Vec::with_capacity(absent);
            for u in 0..self.num_nodes {
                for v in (u + 1)..self.num_nodes {
                    if !present.contains(&(u, v)) {
                        missing.push((u, v));
                    }
                }
            }
            let chosen = rand::seq::index::sample(&mut rng, missing.len(), npe as usize);
            let mut edges = self.edges.clone();
            for i in chosen {
                let (u, v) = missing[i];
                edges.push((u, v, 1.0));
            }
            Self::new(self.num_nodes, edges)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Laplacian,
    NormalizedLaplacian,
    Identity,
    Custom,
}

/// Symmetric penalty weight matrix, constructed symmetric. For the Laplacian
/// kinds the matrix is positive semidefinite up to the optional diagonal
/// jitter; custom matrices get a symmetry check only, PSD is the caller's
/// responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    matrix: DMatrix<f64>,
    kind: PenaltyKind,
    jitter: f64,
}

impl PenaltyMatrix {
    /// Graph Laplacian: degree on the diagonal (plus jitter), minus edge
    /// weights off the diagonal.
    pub fn laplacian(g: &WeightedGraph, jitter: f64) -> Self {
        let p = g.num_nodes();
        let mut m = DMatrix::zeros(p, p);
        for (u, d) in g.degrees().into_iter().enumerate() {
            m[(u, u)] = d + jitter;
        }
        for &(u, v, w) in g.edges() {
            m[(u, v)] = -w;
            m[(v, u)] = -w;
        }
        Self { matrix: m, kind: PenaltyKind::Laplacian, jitter }
    }

    /// Normalized Laplacian D^(-1/2) L D^(-1/2). Rows and columns of isolated
    /// nodes are zero (the 0 -> 0 convention for D^(-1/2)); jitter is added
    /// after normalization.
    pub fn normalized_laplacian(g: &WeightedGraph, jitter: f64) -> Self {
        let p = g.num_nodes();
        let degrees = g.degrees();
        let inv_sqrt: Vec<f64> =
            degrees.iter().map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 }).collect();
        let mut m = DMatrix::zeros(p, p);
        for u in 0..p {
            if degrees[u] > 0.0 {
                m[(u, u)] = 1.0;
            }
        }
        for &(u, v, w) in g.edges() {
            let x = -w * inv_sqrt[u] * inv_sqrt[v];
            m[(u, v)] = x;
            m[(v, u)] = x;
        }
        for u in 0..p {
            m[(u, u)] += jitter;
        }
        Self { matrix: m, kind: PenaltyKind::NormalizedLaplacian, jitter }
    }

    pub fn identity(p: usize) -> Self {
        Self { matrix: DMatrix::identity(p, p), kind: PenaltyKind::Identity, jitter: 0.0 }
    }

    /// User-supplied kernel. Checked for symmetry only.
    pub fn custom(matrix: DMatrix<f64>) -> Result<Self, GraphError> {
        let mut max_asym = 0.0_f64;
        for i in 0..matrix.nrows() {
            for j in (i + 1)..matrix.ncols() {
                max_asym = max_asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        if max_asym > 0.0 {
            return Err(GraphError::NotSymmetric(max_asym));
        }
        Ok(Self { matrix, kind: PenaltyKind::Custom, jitter: 0.0 })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Relative spectral distance ||a - b||_2 / ||b||_2.
pub fn spectral_distance(a: &PenaltyMatrix, b: &PenaltyMatrix) -> Result<f64, GraphError> {
    if a.dim() != b.dim() {
        return Err(GraphError::DimensionMismatch(a.dim(), b.dim()));
    }
    let denom = symmetric_spectral_norm(b.matrix());
    if denom == 0.0 {
        return Err(GraphError::ZeroDenominator);
    }
    Ok(symmetric_spectral_norm(&(a.matrix() - b.matrix())) / denom)
}
