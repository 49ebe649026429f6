//! Reduction of quantified multi-homogeneous formulas over products of
//! complex projective spaces to fibered-join formulas plus polynomial maps
//! on pseudo-Poincaré polynomials, with exact semantics and an exact
//! homology oracle for the coordinate fragment.

pub mod coordinate_model;
pub mod corpus;
pub mod formula_ir;
pub mod homology_oracle;
pub mod join_engine;
pub mod linalg;
pub mod poincare_algebra;
pub mod reduction_compiler;
