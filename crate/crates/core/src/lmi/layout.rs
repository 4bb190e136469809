use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Named block of the augmented vector. Agents and integral orders are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockName {
    /// `z(t)`
    Current,
    /// `z(t - tau_k^l)`
    LowerDelay(usize),
    /// `z(t - tau_k^u)`
    UpperDelay(usize),
    /// `z(t - tau_k(t))`
    VaryingDelay(usize),
    /// Normalised order-`i` integral over `[t - tau_k^l, t]`.
    IntLower(usize, usize),
    /// Normalised order-`i` integral over `[t - tau_k(t), t - tau_k^l]`.
    IntMid(usize, usize),
    /// Normalised order-`i` integral over `[t - tau_k^u, t - tau_k(t)]`.
    IntUpper(usize, usize),
}

/// Block map of the augmented vector: `1 + (3 + 3N) m` blocks of size `F`.
///
/// Block indices are 1-based throughout, so `current() == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AugmentedLayout {
    pub agents: usize,
    pub state_dim: usize,
    pub order: usize,
    /// `F = n (m - 1)`.
    pub dim: usize,
}

pub fn build_layout(m: usize, n: usize, order: usize) -> Result<AugmentedLayout> {
    if m < 2 {
        return Err(Error::OutOfRange(format!("need m >= 2, got {m}")));
    }
    if n == 0 {
        return Err(Error::OutOfRange("state dimension must be positive".into()));
    }
    if order == 0 {
        return Err(Error::OutOfRange(
            "approximation order N must be >= 1".into(),
        ));
    }
    Ok(AugmentedLayout {
        agents: m,
        state_dim: n,
        order,
        dim: n * (m - 1),
    })
}

impl AugmentedLayout {
    pub fn block_count(&self) -> usize {
        1 + (3 + 3 * self.order) * self.agents
    }

    pub fn zeta_dim(&self) -> usize {
        self.block_count() * self.dim
    }

    pub fn current(&self) -> usize {
        1
    }

    pub fn lower_delay(&self, k: usize) -> usize {
        self.check_agent(k);
        1 + k
    }

    pub fn upper_delay(&self, k: usize) -> usize {
        self.check_agent(k);
        1 + self.agents + k
    }

    pub fn varying_delay(&self, k: usize) -> usize {
        self.check_agent(k);
        1 + 2 * self.agents + k
    }

    pub fn int_lower(&self, k: usize, i: usize) -> usize {
        self.check_order(k, i);
        1 + (2 + i) * self.agents + k
    }

    pub fn int_mid(&self, k: usize, i: usize) -> usize {
        self.check_order(k, i);
        1 + (2 + self.order + i) * self.agents + k
    }

    pub fn int_upper(&self, k: usize, i: usize) -> usize {
        self.check_order(k, i);
        1 + (2 + 2 * self.order + i) * self.agents + k
    }

    pub fn index_of(&self, name: BlockName) -> usize {
        match name {
            BlockName::Current => self.current(),
            BlockName::LowerDelay(k) => self.lower_delay(k),
            BlockName::UpperDelay(k) => self.upper_delay(k),
            BlockName::VaryingDelay(k) => self.varying_delay(k),
            BlockName::IntLower(k, i) => self.int_lower(k, i),
            BlockName::IntMid(k, i) => self.int_mid(k, i),
            BlockName::IntUpper(k, i) => self.int_upper(k, i),
        }
    }

    /// Inverse of [`index_of`](Self::index_of).
    pub fn name_of(&self, block: usize) -> Result<BlockName> {
        let m = self.agents;
        let nn = self.order;
        if block == 0 || block > self.block_count() {
            return Err(Error::OutOfRange(format!(
                "block {block} outside 1..={}",
                self.block_count()
            )));
        }
        if block == 1 {
            return Ok(BlockName::Current);
        }
        let rest = block - 2;
        let (group, k) = (rest / m, rest % m + 1);
        Ok(match group {
            0 => BlockName::LowerDelay(k),
            1 => BlockName::UpperDelay(k),
            2 => BlockName::VaryingDelay(k),
            g if g < 3 + nn => BlockName::IntLower(k, g - 2),
            g if g < 3 + 2 * nn => BlockName::IntMid(k, g - 2 - nn),
            g => BlockName::IntUpper(k, g - 2 - 2 * nn),
        })
    }

    /// 0-based offset of block `f` inside the augmented vector.
    pub fn offset(&self, block: usize) -> usize {
        assert!(
            block >= 1 && block <= self.block_count(),
            "block {block} outside 1..={}",
            self.block_count()
        );
        (block - 1) * self.dim
    }

    fn check_agent(&self, k: usize) {
        assert!(
            k >= 1 && k <= self.agents,
            "agent {k} outside 1..={}",
            self.agents
        );
    }

    fn check_order(&self, k: usize, i: usize) {
        self.check_agent(k);
        assert!(
            i >= 1 && i <= self.order,
            "order {i} outside 1..={}",
            self.order
        );
    }
}

/// Dense selector `e_f` of shape `zeta_dim x F`; `e_f^T zeta` is block `f`.
pub fn selector(layout: &AugmentedLayout, block: usize) -> Result<DMatrix<f64>> {
    if block == 0 || block > layout.block_count() {
        return Err(Error::OutOfRange(format!(
            "block {block} outside 1..={}",
            layout.block_count()
        )));
    }
    let f = layout.dim;
    let mut e = DMatrix::zeros(layout.zeta_dim(), f);
    let off = layout.offset(block);
    for i in 0..f {
        e[(off + i, i)] = 1.0;
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let l = build_layout(2, 1, 1).unwrap();
        assert_eq!((l.block_count(), l.dim), (13, 1));
        let l = build_layout(4, 2, 2).unwrap();
        assert_eq!((l.block_count(), l.dim, l.zeta_dim()), (37, 6, 222));
        let l = build_layout(3, 1, 1).unwrap();
        assert_eq!(l.int_lower(1, 1), 11);
        assert!(build_layout(1, 1, 1).is_err());
        assert!(build_layout(2, 1, 0).is_err());
    }

    #[test]
    fn bijection() {
        for m in [2, 3, 4] {
            for order in 1..=4 {
                let l = build_layout(m, 1, order).unwrap();
                let mut seen = vec![false; l.block_count() + 1];
                let mut names = vec![BlockName::Current];
                for k in 1..=m {
                    names.push(BlockName::LowerDelay(k));
                    names.push(BlockName::UpperDelay(k));
                    names.push(BlockName::VaryingDelay(k));
                    for i in 1..=order {
                        names.push(BlockName::IntLower(k, i));
                        names.push(BlockName::IntMid(k, i));
                        names.push(BlockName::IntUpper(k, i));
                    }
                }
                assert_eq!(names.len(), l.block_count());
                for name in names {
                    let idx = l.index_of(name);
                    assert!(!seen[idx], "{name:?} collides");
                    seen[idx] = true;
                    assert_eq!(l.name_of(idx).unwrap(), name);
                }
                assert!(seen[1..].iter().all(|&s| s));
            }
        }
    }

    #[test]
    fn selectors_are_orthonormal() {
        let l = build_layout(3, 2, 1).unwrap();
        let zeta = nalgebra::DVector::from_fn(l.zeta_dim(), |i, _| i as f64);
        let e1 = selector(&l, 1).unwrap();
        assert_eq!(e1.transpose() * &zeta, zeta.rows(0, l.dim).into_owned());
        for f in 1..=l.block_count() {
            let ef = selector(&l, f).unwrap();
            assert_eq!(ef.transpose() * &ef, DMatrix::identity(l.dim, l.dim));
            if f > 1 {
                let eg = selector(&l, f - 1).unwrap();
                assert_eq!(ef.transpose() * eg, DMatrix::zeros(l.dim, l.dim));
            }
        }
        assert!(selector(&l, 0).is_err());
        assert!(selector(&l, l.block_count() + 1).is_err());
    }
}
