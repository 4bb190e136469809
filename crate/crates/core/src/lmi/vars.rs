use std::collections::HashMap;

use nalgebra::DMatrix;

use super::layout::AugmentedLayout;

/// Matrix decision variables of the criteria. Agents are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VarKind {
    P,
    Q1,
    Q2,
    R1,
    R2,
    W1,
    W2,
    W3,
    /// `Y_{ikj}`: interval `i` in 1..=3, column block `j` in 1..=2N+1.
    Y {
        interval: usize,
        j: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixVar {
    pub kind: VarKind,
    pub agent: usize,
    pub rows: usize,
    pub cols: usize,
    pub symmetric: bool,
    /// Required positive definite.
    pub positive: bool,
    /// Index of the first scalar.
    pub offset: usize,
}

impl MatrixVar {
    pub fn len(&self) -> usize {
        if self.symmetric {
            self.rows * (self.rows + 1) / 2
        } else {
            self.rows * self.cols
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global scalar index of entry `(r, c)`; symmetric variables share
    /// `(r, c)` and `(c, r)` (upper triangle, row-major).
    pub fn scalar(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.rows && c < self.cols);
        if self.symmetric {
            let (i, j) = if r <= c { (r, c) } else { (c, r) };
            let n = self.rows;
            self.offset + i * n - i * (i + 1) / 2 + j
        } else {
            self.offset + r * self.cols + c
        }
    }

    pub fn name(&self) -> String {
        let k = self.agent;
        match self.kind {
            VarKind::P => format!("P_{k}"),
            VarKind::Q1 => format!("Q_1{k}"),
            VarKind::Q2 => format!("Q_2{k}"),
            VarKind::R1 => format!("R_1{k}"),
            VarKind::R2 => format!("R_2{k}"),
            VarKind::W1 => format!("W_1{k}"),
            VarKind::W2 => format!("W_2{k}"),
            VarKind::W3 => format!("W_3{k}"),
            VarKind::Y { interval, j } => format!("Y_{interval}{k}{j}"),
        }
    }

    /// Dense value of this variable under a scalar assignment.
    pub fn matrix(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| x[self.scalar(r, c)])
    }
}

/// All decision variables, laid out as `P_1..P_m`, `Q_1k`, `Q_2k`, `R_1k`,
/// `R_2k`, `W_1k`, `W_2k`, `W_3k` (each over `k`), then `Y_ikj` ordered by
/// interval, agent and column block.
#[derive(Debug, Clone)]
pub struct VariableSpace {
    pub layout: AugmentedLayout,
    pub with_w: bool,
    vars: Vec<MatrixVar>,
    index: HashMap<(VarKind, usize), usize>,
    total: usize,
}

impl VariableSpace {
    /// `with_w = false` drops the `W` family (the criterion without zero
    /// equalities).
    pub fn new(layout: AugmentedLayout, with_w: bool) -> Self {
        let f = layout.dim;
        let m = layout.agents;
        let zdim = layout.zeta_dim();
        let mut shapes: Vec<(VarKind, usize, usize, bool, bool)> = vec![
            (VarKind::P, 3 * f, 3 * f, true, true),
            (VarKind::Q1, f, f, true, true),
            (VarKind::Q2, f, f, true, true),
            (VarKind::R1, 2 * f, 2 * f, true, true),
            (VarKind::R2, 2 * f, 2 * f, true, true),
        ];
        if with_w {
            for kind in [VarKind::W1, VarKind::W2, VarKind::W3] {
                shapes.push((kind, f, f, true, false));
            }
        }
        let mut vars = Vec::new();
        let mut offset = 0;
        let mut push = |kind, agent, rows, cols, symmetric, positive| {
            let v = MatrixVar {
                kind,
                agent,
                rows,
                cols,
                symmetric,
                positive,
                offset,
            };
            offset += v.len();
            vars.push(v);
        };
        for &(kind, rows, cols, sym, pos) in &shapes {
            for k in 1..=m {
                push(kind, k, rows, cols, sym, pos);
            }
        }
        for interval in 1..=3 {
            for k in 1..=m {
                for j in 1..=2 * layout.order + 1 {
                    push(VarKind::Y { interval, j }, k, zdim, f, false, false);
                }
            }
        }
        let index = vars
            .iter()
            .enumerate()
            .map(|(i, v)| ((v.kind, v.agent), i))
            .collect();
        Self {
            layout,
            with_w,
            vars,
            index,
            total: offset,
        }
    }

    pub fn vars(&self) -> &[MatrixVar] {
        &self.vars
    }

    pub fn num_scalars(&self) -> usize {
        self.total
    }

    pub fn get(&self, kind: VarKind, agent: usize) -> Option<&MatrixVar> {
        self.index.get(&(kind, agent)).map(|&i| &self.vars[i])
    }

    pub fn expect(&self, kind: VarKind, agent: usize) -> &MatrixVar {
        self.get(kind, agent)
            .unwrap_or_else(|| panic!("variable {kind:?} of agent {agent} not declared"))
    }

    /// Variable owning global scalar `s`.
    pub fn owner(&self, s: usize) -> &MatrixVar {
        let i = self.vars.partition_point(|v| v.offset + v.len() <= s);
        &self.vars[i]
    }

    /// Assignment with every positive-definite variable set to the identity.
    pub fn identity_assignment(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.total];
        for v in self.vars.iter().filter(|v| v.positive) {
            for i in 0..v.rows {
                x[v.scalar(i, i)] = 1.0;
            }
        }
        x
    }

    /// Scale normalisation `sum tr(V) = sum dim(V)` over the positive-definite
    /// variables, as `(coefficients, right-hand side)`.
    pub fn trace_normalization(&self) -> (Vec<(usize, f64)>, f64) {
        let mut coef = Vec::new();
        let mut rhs = 0.0;
        for v in self.vars.iter().filter(|v| v.positive) {
            for i in 0..v.rows {
                coef.push((v.scalar(i, i), 1.0));
            }
            rhs += v.rows as f64;
        }
        (coef, rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::build_layout;

    #[test]
    fn scalar_count_small_pair() {
        let l = build_layout(2, 1, 1).unwrap();
        let v = VariableSpace::new(l, true);
        // P: 2*6, Q: 4*1, R: 4*3, W: 6*1, Y: 18*13
        assert_eq!(v.num_scalars(), 12 + 4 + 12 + 6 + 234);
        let c = VariableSpace::new(l, false);
        assert_eq!(c.num_scalars(), 12 + 4 + 12 + 234);
    }

    #[test]
    fn symmetric_indexing_is_dense_and_shared() {
        let l = build_layout(3, 1, 1).unwrap();
        let vs = VariableSpace::new(l, true);
        let p = vs.expect(VarKind::P, 2);
        let mut seen = std::collections::BTreeSet::new();
        for r in 0..p.rows {
            for c in 0..p.cols {
                assert_eq!(p.scalar(r, c), p.scalar(c, r));
                seen.insert(p.scalar(r, c));
            }
        }
        assert_eq!(seen.len(), p.len());
        assert_eq!(*seen.iter().next().unwrap(), p.offset);
        assert_eq!(*seen.iter().last().unwrap(), p.offset + p.len() - 1);
        let y = vs.expect(VarKind::Y { interval: 3, j: 3 }, 3);
        assert_eq!(y.offset + y.len(), vs.num_scalars());
        assert_eq!(vs.owner(y.offset).kind, y.kind);
        assert_eq!(vs.owner(p.offset + 1).name(), "P_2");
    }

    #[test]
    fn identity_assignment_meets_normalization() {
        let l = build_layout(2, 2, 1).unwrap();
        let vs = VariableSpace::new(l, true);
        let x = vs.identity_assignment();
        let (coef, rhs) = vs.trace_normalization();
        let lhs: f64 = coef.iter().map(|&(i, c)| c * x[i]).sum();
        assert_eq!(lhs, rhs);
    }
}
