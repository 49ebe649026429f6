//! Complex joins, iterated joins and fibered joins, built syntactically.
//!
//! A joined block is always fresh. Copy `i` of a block `B` of arity `a`
//! occupies coordinates `i·a .. (i+1)·a` of the new block (copy-major),
//! and the new block is named `B@p` for a `(p+1)`-fold join.

use thiserror::Error;

use crate::formula_ir::{Block, BlockFamily, LatticeOp, Qf, ShapeStage, ShapedFormula, VarRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JoinError {
    #[error("expected a formula in {expected} block(s), found {found}")]
    BlockCount { expected: usize, found: usize },
    #[error("formula references block {0:?} outside its declared blocks")]
    ForeignBlock(String),
    #[error("no quantified block left to absorb")]
    NoQuantifier,
}

/// A quantifier-free formula together with the blocks it is written in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockFormula {
    pub blocks: Vec<Block>,
    pub formula: Qf,
}

impl BlockFormula {
    pub fn new(blocks: Vec<Block>, formula: Qf) -> Result<Self, JoinError> {
        let names: Vec<&str> = blocks.iter().map(|b| b.name.as_str()).collect();
        for a in formula.atoms() {
            for v in a.poly.vars() {
                if !names.contains(&v.owner.as_str()) || v.tuple.is_some() {
                    return Err(JoinError::ForeignBlock(v.owner.clone()));
                }
            }
        }
        Ok(BlockFormula { blocks, formula })
    }

    /// `True` over one block: the whole projective space.
    pub fn full(block: Block) -> Self {
        BlockFormula { blocks: vec![block], formula: Qf::True }
    }

    /// The empty set in a block, written as `block = 0` so that the
    /// zero-block condition holds.
    pub fn empty(block: Block) -> Self {
        let f = Qf::And((0..block.arity).map(|c| Qf::var_eq0(VarRef::block(block.name.clone(), c))).collect());
        BlockFormula { blocks: vec![block], formula: f }
    }

    pub fn to_shaped(&self) -> ShapedFormula {
        ShapedFormula::quantifier_free(self.blocks.clone(), self.formula.clone())
    }

    fn single(&self) -> Result<&Block, JoinError> {
        match self.blocks.as_slice() {
            [b] => Ok(b),
            _ => Err(JoinError::BlockCount { expected: 1, found: self.blocks.len() }),
        }
    }
}

fn shift_block(f: &Qf, from: &str, to: &str, offset: usize) -> Qf {
    f.map_vars(&|v: &VarRef| {
        if v.owner == from {
            VarRef::block(to, v.coord + offset)
        } else {
            v.clone()
        }
    })
}

/// `J(X, Y)`: `φ(Z_0..Z_k) ∧ ψ(Z_{k+1}..Z_{k+ℓ+1})` over a fresh block.
pub fn complex_join(x: &BlockFormula, y: &BlockFormula) -> Result<BlockFormula, JoinError> {
    let bx = x.single()?;
    let by = y.single()?;
    let fresh = Block::new(format!("{}*{}", bx.name, by.name), bx.arity + by.arity);
    let f = Qf::And(vec![
        shift_block(&x.formula, &bx.name, &fresh.name, 0),
        shift_block(&y.formula, &by.name, &fresh.name, bx.arity),
    ]);
    Ok(BlockFormula { blocks: vec![fresh], formula: f })
}

/// `J^p(X)`: conjunction of `p + 1` copies over one fresh block. `p = 0`
/// only renames.
pub fn iterated_join(x: &BlockFormula, p: usize) -> Result<BlockFormula, JoinError> {
    let b = x.single()?;
    let fresh = Block::new(format!("{}@{p}", b.name), b.arity * (p + 1));
    let copies = (0..=p).map(|i| shift_block(&x.formula, &b.name, &fresh.name, i * b.arity)).collect();
    Ok(BlockFormula { blocks: vec![fresh], formula: Qf::And(copies) })
}

/// `J^p_{pr_1}(A)`: the first block is kept, the second joined `p + 1` times fiberwise.
pub fn fibered_join(a: &BlockFormula, p: usize) -> Result<BlockFormula, JoinError> {
    let [bx, by] = a.blocks.as_slice() else {
        return Err(JoinError::BlockCount { expected: 2, found: a.blocks.len() });
    };
    let fresh = Block::new(format!("{}@{p}", by.name), by.arity * (p + 1));
    let copies = (0..=p).map(|i| shift_block(&a.formula, &by.name, &fresh.name, i * by.arity)).collect();
    Ok(BlockFormula { blocks: vec![bx.clone(), fresh], formula: Qf::And(copies) })
}

/// Absorbs the leading quantified block into a new family joined `p + 1`
/// times: appends the stage `(AND, p + 1)` and turns the block into a
/// family at the new depth with one member per index tuple. The core is
/// unchanged, its references to the block now denote the current member.
pub fn generalized_fibered_join(f: &ShapedFormula, p: usize) -> Result<ShapedFormula, JoinError> {
    if f.quantifiers.is_empty() {
        return Err(JoinError::NoQuantifier);
    }
    let mut out = f.clone();
    let z = out.quantifiers.remove(0).block;
    out.families.push(BlockFamily { name: z.name, depth: out.shape.len(), member_arity: z.arity });
    out.shape.push(ShapeStage { op: LatticeOp::And, arity: p + 1 });
    Ok(out)
}
