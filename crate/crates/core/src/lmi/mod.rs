//! Assembly of the delay-dependent LMI criteria.
//!
//! The stability condition is a symmetric matrix `Xi(tau)` that is affine in
//! every agent's delay `tau_k(t)` and linear in the decision variables, so it
//! suffices to check it at the corners of the delay box.

mod assemble;
mod expr;
mod layout;
mod sample;
mod vars;
mod vertex;

pub use assemble::{
    assemble_corollary, assemble_method, assemble_theorem, build_pi_blocks, dense_columns,
    dynamics_columns, positivity_constraints, restricted_y_mask, Assembled, Method, PiBlocks,
    SchurBlock, SchurForm,
};
pub use expr::{AffineMatrixExpression, DelayCoef, SparseCol};
pub use layout::{build_layout, selector, AugmentedLayout, BlockName};
pub use sample::{moment, sample_zeta};
pub use vars::{MatrixVar, VarKind, VariableSpace};
pub use vertex::{
    corner_label, corners, distinct_vertices, substitute_xi, vertex_problems, NumericConstraint,
    PrunedBlock, Sense, VertexProblem,
};
