//! Graph and system-theoretic objects of a delayed multi-agent system.
//!
//! Each agent `k` runs `x_k' = A x_k + B u_k(t - tau_k(t))` with the
//! diffusive protocol `u_k = -sum_l a_kl K (x_k - x_l)`. The consensus
//! question is reduced to stability of the error state
//! `z_k = x_1 - x_{k+1}`, `k = 1..m-1`, which obeys
//! `z' = Abar z - sum_k Bbar_k z(t - tau_k(t))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directed communication graph with a {0,1} adjacency matrix.
///
/// `adjacency[(k, l)] = 1` means agent `k` receives the state of agent `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    adjacency: DMatrix<f64>,
}

impl DirectedGraph {
    pub fn new(adjacency: DMatrix<f64>) -> Result<Self> {
        let m = adjacency.nrows();
        if adjacency.ncols() != m {
            return Err(Error::Graph(format!(
                "adjacency must be square, got {}x{}",
                m,
                adjacency.ncols()
            )));
        }
        if m < 2 {
            return Err(Error::Graph(format!("need at least 2 agents, got {m}")));
        }
        for i in 0..m {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::Graph(format!("self-loop at agent {}", i + 1)));
            }
            for j in 0..m {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(Error::Graph(format!(
                        "adjacency entry ({}, {}) = {a}; only 0/1 edges are supported",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Self { adjacency })
    }

    /// Builds a graph from row vectors, rejecting ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(Error::Graph(format!(
                "adjacency row {} has {} entries, expected {m}",
                i + 1,
                r.len()
            )));
        }
        Self::new(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
    }

    pub fn agents(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }
}

/// Graph Laplacian `L = D - A`; every row sums to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian(pub DMatrix<f64>);

impl Laplacian {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn build_laplacian(graph: &DirectedGraph) -> Laplacian {
    let a = graph.adjacency();
    let m = a.nrows();
    let mut l = -a.clone();
    for i in 0..m {
        let degree: f64 = (0..m).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        l[(i, i)] = degree;
    }
    Laplacian(l)
}

/// Tree-type transformation matrices `G = [1 -I]` and `U = [0 -I]^T`.
pub fn tree_transform(m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if m < 2 {
        return Err(Error::Graph(format!("need at least 2 agents, got {m}")));
    }
    let mut g = DMatrix::zeros(m - 1, m);
    let mut u = DMatrix::zeros(m, m - 1);
    for r in 0..m - 1 {
        g[(r, 0)] = 1.0;
        g[(r, r + 1)] = -1.0;
        u[(r + 1, r)] = -1.0;
    }
    Ok((g, u))
}

/// Lower and upper bound of one agent's time-varying delay, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBound {
    pub lower: f64,
    pub upper: f64,
}

impl DelayBound {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn validate(&self, agent: usize) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite()) {
            return Err(Error::Bounds(format!("agent {agent}: non-finite bound")));
        }
        if self.lower < 0.0 || self.lower > self.upper {
            return Err(Error::Bounds(format!(
                "agent {agent}: need 0 <= lower <= upper, got [{}, {}]",
                self.lower, self.upper
            )));
        }
        Ok(())
    }
}

/// A complete problem instance: agent dynamics, protocol gain, topology and delay box.
#[derive(Debug, Clone, PartialEq)]
pub struct MasModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub graph: DirectedGraph,
    pub bounds: Vec<DelayBound>,
}

impl MasModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        k: DMatrix<f64>,
        graph: DirectedGraph,
        bounds: Vec<DelayBound>,
    ) -> Result<Self> {
        let model = Self {
            a,
            b,
            k,
            graph,
            bounds,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n || n == 0 {
            return Err(Error::Dimension(format!(
                "A must be square and non-empty, got {}x{}",
                n,
                self.a.ncols()
            )));
        }
        if self.b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B must have {n} rows, got {}",
                self.b.nrows()
            )));
        }
        let r = self.b.ncols();
        if self.k.nrows() != r || self.k.ncols() != n {
            return Err(Error::Dimension(format!(
                "K must be {r}x{n}, got {}x{}",
                self.k.nrows(),
                self.k.ncols()
            )));
        }
        if self.bounds.len() != self.agents() {
            return Err(Error::Dimension(format!(
                "expected {} delay bounds, got {}",
                self.agents(),
                self.bounds.len()
            )));
        }
        for (i, b) in self.bounds.iter().enumerate() {
            b.validate(i + 1)?;
        }
        Ok(())
    }

    pub fn agents(&self) -> usize {
        self.graph.agents()
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn with_bounds(&self, bounds: Vec<DelayBound>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.b.clone(),
            self.k.clone(),
            self.graph.clone(),
            bounds,
        )
    }

    pub fn laplacian(&self) -> Laplacian {
        build_laplacian(&self.graph)
    }
}

/// Lifted error dynamics `z' = Abar z - sum_k Bbar_k z(t - tau_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSystem {
    pub agents: usize,
    pub state_dim: usize,
    /// `F = n (m - 1)`.
    pub dim: usize,
    pub abar: DMatrix<f64>,
    pub bbar: Vec<DMatrix<f64>>,
    pub bounds: Vec<DelayBound>,
}

impl ErrorSystem {
    pub fn tau_tilde(&self, k: usize) -> f64 {
        self.bounds[k].width()
    }
}

/// `G E_k L U`: the (m-1)x(m-1) coupling pattern of agent `k` (0-based).
pub fn agent_coupling(lap: &Laplacian, k: usize) -> Result<DMatrix<f64>> {
    let m = lap.0.nrows();
    let (g, u) = tree_transform(m)?;
    let mut ek = DMatrix::zeros(m, m);
    ek[(k, k)] = 1.0;
    Ok(g * ek * &lap.0 * u)
}

pub fn build_error_system(model: &MasModel) -> Result<ErrorSystem> {
    model.validate()?;
    let m = model.agents();
    let n = model.state_dim();
    let lap = model.laplacian();
    let bk = &model.b * &model.k;
    let abar = DMatrix::<f64>::identity(m - 1, m - 1).kronecker(&model.a);
    let bbar = (0..m)
        .map(|k| Ok(agent_coupling(&lap, k)?.kronecker(&bk)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorSystem {
        agents: m,
        state_dim: n,
        dim: n * (m - 1),
        abar,
        bbar,
        bounds: model.bounds.clone(),
    })
}

/// Stacks `z_k(0) = x_1(0) - x_{k+1}(0)` for `k = 1..m-1`.
pub fn error_initial_state(x0: &[DVector<f64>]) -> Result<DVector<f64>> {
    if x0.len() < 2 {
        return Err(Error::Dimension(format!(
            "need initial states for at least 2 agents, got {}",
            x0.len()
        )));
    }
    let n = x0[0].len();
    if let Some((i, _)) = x0.iter().enumerate().find(|(_, x)| x.len() != n) {
        return Err(Error::Dimension(format!(
            "initial state of agent {} has length {}, expected {n}",
            i + 1,
            x0[i].len()
        )));
    }
    let mut z = DVector::zeros(n * (x0.len() - 1));
    for k in 1..x0.len() {
        z.rows_mut((k - 1) * n, n).copy_from(&(&x0[0] - &x0[k]));
    }
    Ok(z)
}
