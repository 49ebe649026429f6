//! Abstract syntax for multi-homogeneous formulas over products of complex
//! projective spaces, the formula document format, validation and the
//! elementary rewrites (negation, shape expansion, instantiation).
//!
//! A [`ShapedFormula`] reads
//!
//! ```text
//! Λ⁰_{i_0} ⋯ Λ^σ_{i_σ} (Q_1 Z¹) ⋯ (Q_ω Z^ω) φ(X; W⁰_{i_0}; …; W^σ_{i_0..i_σ}; Z¹; …; Z^ω)
//! ```
//!
//! The lattice prefix is outermost: every index instance quantifies its own
//! copy of the `Z` blocks. Inside the core, a family reference without an
//! index tuple denotes the member selected by the current instance.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::poincare_algebra::parse_decimal;

pub const FORMULA_FMT: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("syntax error at line {line}, column {column}: {msg}")]
    Syntax { line: usize, column: usize, msg: String },
    #[error("schema error at {path}: {msg}")]
    Schema { path: String, msg: String },
    #[error("duplicate block name {0:?}")]
    DuplicateName(String),
    #[error("index arity mismatch: {0}")]
    IndexArityMismatch(String),
    #[error("unknown block {name:?} at {path}")]
    UnknownBlock { path: String, name: String },
    #[error("coordinate {coord} out of range for {owner:?} (arity {arity})")]
    CoordOutOfRange { owner: String, coord: usize, arity: usize },
    #[error("inhomogeneous atom {atom} in block {block:?}")]
    Inhomogeneous { atom: String, block: String },
    #[error("non-coordinate atom {0}")]
    NonCoordinateAtom(String),
    #[error("arity mismatch for {block:?}: expected {expected}, got {got}")]
    ArityMismatch { block: String, expected: usize, got: usize },
    #[error("zero vector is not a projective point")]
    ZeroVector,
    #[error("{0:?} is not a free block")]
    NotFree(String),
    #[error("coordinate unit {name:?} has {coords} coordinates; the pattern engine supports at most 64")]
    UnitTooLarge { name: String, coords: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Block {
    pub name: String,
    /// Number of homogeneous coordinates (`k + 1`).
    pub arity: usize,
}

impl Block {
    pub fn new(name: impl Into<String>, arity: usize) -> Self {
        Block { name: name.into(), arity }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatticeOp {
    And,
    Or,
}

impl LatticeOp {
    pub fn flip(self) -> Self {
        match self {
            LatticeOp::And => LatticeOp::Or,
            LatticeOp::Or => LatticeOp::And,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            LatticeOp::And => "and",
            LatticeOp::Or => "or",
        }
    }
}

/// One lattice stage `Λ^t` ranging over `arity = α_t + 1` indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShapeStage {
    pub op: LatticeOp,
    pub arity: usize,
}

/// Family `W^j`: members `W^j_{i_0..i_j}` of `member_arity` coordinates each.
/// Members sharing the prefix `(i_0..i_{j-1})` form one projective block.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BlockFamily {
    pub name: String,
    pub depth: usize,
    pub member_arity: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Quantifier {
    Exists,
    Forall,
}

impl Quantifier {
    pub fn flip(self) -> Self {
        match self {
            Quantifier::Exists => Quantifier::Forall,
            Quantifier::Forall => Quantifier::Exists,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Quantifier::Exists => "exists",
            Quantifier::Forall => "forall",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct QuantifiedBlock {
    pub quantifier: Quantifier,
    pub block: Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Closedness {
    Closed,
    Open,
    Unverified,
}

impl Closedness {
    pub fn as_str(self) -> &'static str {
        match self {
            Closedness::Closed => "closed",
            Closedness::Open => "open",
            Closedness::Unverified => "unverified",
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Closedness::Closed => Closedness::Open,
            Closedness::Open => Closedness::Closed,
            Closedness::Unverified => Closedness::Unverified,
        }
    }
}

/// A variable: coordinate `coord` of a plain block, or of a family member.
/// `tuple: None` on a family reference means "the member of the current instance".
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarRef {
    pub owner: String,
    pub tuple: Option<Vec<usize>>,
    pub coord: usize,
}

impl VarRef {
    pub fn block(owner: impl Into<String>, coord: usize) -> Self {
        VarRef { owner: owner.into(), tuple: None, coord }
    }

    pub fn member(owner: impl Into<String>, tuple: Vec<usize>, coord: usize) -> Self {
        VarRef { owner: owner.into(), tuple: Some(tuple), coord }
    }
}

impl fmt::Display for VarRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.tuple {
            None => write!(f, "{}_{}", self.owner, self.coord),
            Some(t) => {
                let idx: Vec<String> = t.iter().map(|i| i.to_string()).collect();
                write!(f, "{}[{}]_{}", self.owner, idx.join(","), self.coord)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    pub coeff: BigInt,
    /// Sorted by variable, powers ≥ 1, each variable at most once.
    pub exps: Vec<(VarRef, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Poly {
    pub monomials: Vec<Monomial>,
}

impl Poly {
    pub fn var(v: VarRef) -> Self {
        Poly { monomials: vec![Monomial { coeff: BigInt::one(), exps: vec![(v, 1)] }] }
    }

    pub fn constant(c: BigInt) -> Self {
        Poly { monomials: vec![Monomial { coeff: c, exps: vec![] }] }.normalized()
    }

    /// Merges equal monomials, drops zero coefficients, sorts deterministically.
    pub fn normalized(self) -> Self {
        let mut acc: BTreeMap<Vec<(VarRef, u32)>, BigInt> = BTreeMap::new();
        for m in self.monomials {
            let mut e: BTreeMap<VarRef, u32> = BTreeMap::new();
            for (v, p) in m.exps {
                if p > 0 {
                    *e.entry(v).or_insert(0) += p;
                }
            }
            let key: Vec<(VarRef, u32)> = e.into_iter().collect();
            *acc.entry(key).or_insert_with(BigInt::zero) += m.coeff;
        }
        Poly {
            monomials: acc
                .into_iter()
                .filter(|(_, c)| !c.is_zero())
                .map(|(exps, coeff)| Monomial { coeff, exps })
                .collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.monomials.is_empty()
    }

    /// Nonzero constant?
    pub fn as_nonzero_constant(&self) -> Option<&BigInt> {
        match self.monomials.as_slice() {
            [m] if m.exps.is_empty() => Some(&m.coeff),
            _ => None,
        }
    }

    pub fn vars(&self) -> BTreeSet<&VarRef> {
        self.monomials.iter().flat_map(|m| m.exps.iter().map(|(v, _)| v)).collect()
    }

    /// For a single-monomial polynomial `c·∏ v^e`, the variables; it vanishes
    /// iff one of them does. `None` otherwise.
    pub fn coordinate_vars(&self) -> Option<Vec<&VarRef>> {
        match self.monomials.as_slice() {
            [m] if !m.exps.is_empty() => Some(m.exps.iter().map(|(v, _)| v).collect()),
            _ => None,
        }
    }

    fn map_vars(&self, f: &impl Fn(&VarRef) -> VarRef) -> Poly {
        Poly {
            monomials: self
                .monomials
                .iter()
                .map(|m| Monomial {
                    coeff: m.coeff.clone(),
                    exps: m.exps.iter().map(|(v, p)| (f(v), *p)).collect(),
                })
                .collect(),
        }
        .normalized()
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.monomials.is_empty() {
            return write!(f, "0");
        }
        for (i, m) in self.monomials.iter().enumerate() {
            let neg = m.coeff.is_negative();
            let mag = m.coeff.abs();
            if i == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { " - " } else { " + " })?;
            }
            let mut parts: Vec<String> = Vec::new();
            if !mag.is_one() || m.exps.is_empty() {
                parts.push(mag.to_string());
            }
            for (v, p) in &m.exps {
                parts.push(if *p == 1 { v.to_string() } else { format!("{v}^{p}") });
            }
            write!(f, "{}", parts.join("*"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    EqZero,
    NeqZero,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Atom {
    pub poly: Poly,
    pub rel: Relation,
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = match self.rel {
            Relation::EqZero => "=",
            Relation::NeqZero => "≠",
        };
        write!(f, "({} {r} 0)", self.poly)
    }
}

/// Quantifier-free formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Qf {
    True,
    False,
    And(Vec<Qf>),
    Or(Vec<Qf>),
    Atom(Atom),
}

impl Qf {
    pub fn var_eq0(v: VarRef) -> Qf {
        Qf::Atom(Atom { poly: Poly::var(v), rel: Relation::EqZero })
    }

    pub fn var_neq0(v: VarRef) -> Qf {
        Qf::Atom(Atom { poly: Poly::var(v), rel: Relation::NeqZero })
    }

    /// Number of atoms (leaves True/False are not counted).
    pub fn atom_count(&self) -> usize {
        match self {
            Qf::True | Qf::False => 0,
            Qf::Atom(_) => 1,
            Qf::And(c) | Qf::Or(c) => c.iter().map(Qf::atom_count).sum(),
        }
    }

    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        match self {
            Qf::True | Qf::False => {}
            Qf::Atom(a) => out.push(a),
            Qf::And(c) | Qf::Or(c) => c.iter().for_each(|x| x.collect_atoms(out)),
        }
    }

    /// Boolean negation pushed to the atoms (no zero-block disjuncts).
    pub fn boolean_negation(&self) -> Qf {
        match self {
            Qf::True => Qf::False,
            Qf::False => Qf::True,
            Qf::And(c) => Qf::Or(c.iter().map(Qf::boolean_negation).collect()),
            Qf::Or(c) => Qf::And(c.iter().map(Qf::boolean_negation).collect()),
            Qf::Atom(a) => Qf::Atom(Atom {
                poly: a.poly.clone(),
                rel: match a.rel {
                    Relation::EqZero => Relation::NeqZero,
                    Relation::NeqZero => Relation::EqZero,
                },
            }),
        }
    }

    pub fn map_vars(&self, f: &impl Fn(&VarRef) -> VarRef) -> Qf {
        match self {
            Qf::True => Qf::True,
            Qf::False => Qf::False,
            Qf::And(c) => Qf::And(c.iter().map(|x| x.map_vars(f)).collect()),
            Qf::Or(c) => Qf::Or(c.iter().map(|x| x.map_vars(f)).collect()),
            Qf::Atom(a) => Qf::Atom(Atom { poly: a.poly.map_vars(f), rel: a.rel }),
        }
    }

    /// Constant folding of True/False children; atoms are left untouched.
    pub fn simplify(&self) -> Qf {
        match self {
            Qf::And(c) => {
                let mut kids = Vec::new();
                for k in c.iter().map(Qf::simplify) {
                    match k {
                        Qf::False => return Qf::False,
                        Qf::True => {}
                        other => kids.push(other),
                    }
                }
                match kids.len() {
                    0 => Qf::True,
                    1 => kids.pop().unwrap(),
                    _ => Qf::And(kids),
                }
            }
            Qf::Or(c) => {
                let mut kids = Vec::new();
                for k in c.iter().map(Qf::simplify) {
                    match k {
                        Qf::True => return Qf::True,
                        Qf::False => {}
                        other => kids.push(other),
                    }
                }
                match kids.len() {
                    0 => Qf::False,
                    1 => kids.pop().unwrap(),
                    _ => Qf::Or(kids),
                }
            }
            Qf::Atom(a) => match (a.poly.is_zero(), a.poly.as_nonzero_constant(), a.rel) {
                (true, _, Relation::EqZero) => Qf::True,
                (true, _, Relation::NeqZero) => Qf::False,
                (_, Some(_), Relation::EqZero) => Qf::False,
                (_, Some(_), Relation::NeqZero) => Qf::True,
                _ => self.clone(),
            },
            other => other.clone(),
        }
    }

    /// Does every atom vanish-test a single monomial?
    pub fn is_coordinate_fragment(&self) -> bool {
        self.atoms()
            .iter()
            .all(|a| a.poly.is_zero() || a.poly.as_nonzero_constant().is_some() || a.poly.coordinate_vars().is_some())
    }
}

/// A homogeneity unit of a shaped formula: a plain block or one W-group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitId {
    Block(String),
    Group { family: String, prefix: Vec<usize> },
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UnitId::Block(n) => write!(f, "{n}"),
            UnitId::Group { family, prefix } => {
                let idx: Vec<String> = prefix.iter().map(|i| i.to_string()).collect();
                write!(f, "{family}[{}]", idx.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Unit {
    pub id: UnitId,
    pub coords: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapedFormula {
    pub free_blocks: Vec<Block>,
    pub shape: Vec<ShapeStage>,
    pub families: Vec<BlockFamily>,
    pub quantifiers: Vec<QuantifiedBlock>,
    pub core: Qf,
    pub closedness: Closedness,
}

/// Iterates all tuples `(i_0..i_{n-1})` with `0 ≤ i_t < arities[t]`, lexicographically.
pub fn index_tuples(arities: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for &a in arities {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..a).map(move |i| {
                    let mut t2 = t.clone();
                    t2.push(i);
                    t2
                })
            })
            .collect();
    }
    out
}

impl ShapedFormula {
    /// Plain quantifier-free formula over the given free blocks.
    pub fn quantifier_free(free_blocks: Vec<Block>, core: Qf) -> Self {
        ShapedFormula {
            free_blocks,
            shape: vec![],
            families: vec![],
            quantifiers: vec![],
            core,
            closedness: Closedness::Unverified,
        }
    }

    pub fn omega(&self) -> usize {
        self.quantifiers.len()
    }

    pub fn shape_arities(&self) -> Vec<usize> {
        self.shape.iter().map(|s| s.arity).collect()
    }

    /// Number of index instances `∏ (α_t + 1)`.
    pub fn instance_count(&self) -> usize {
        self.shape.iter().map(|s| s.arity).product()
    }

    pub fn family(&self, name: &str) -> Option<&BlockFamily> {
        self.families.iter().find(|f| f.name == name)
    }

    /// Coordinates of one group of `fam`.
    pub fn group_arity(&self, fam: &BlockFamily) -> usize {
        fam.member_arity * self.shape[fam.depth].arity
    }

    /// Number of groups of `fam` (`m_j = ∏_{t<j} (α_t + 1)`).
    pub fn group_count(&self, fam: &BlockFamily) -> usize {
        self.shape[..fam.depth].iter().map(|s| s.arity).product()
    }

    /// Units of the free ambient `P^X × U`: free blocks then every W-group.
    pub fn free_units(&self) -> Vec<Unit> {
        let mut units: Vec<Unit> = self
            .free_blocks
            .iter()
            .map(|b| Unit { id: UnitId::Block(b.name.clone()), coords: b.arity })
            .collect();
        units.extend(self.group_units());
        units
    }

    /// Units of `U` only.
    pub fn group_units(&self) -> Vec<Unit> {
        let mut units = Vec::new();
        for fam in &self.families {
            let coords = self.group_arity(fam);
            for prefix in index_tuples(&self.shape_arities()[..fam.depth]) {
                units.push(Unit { id: UnitId::Group { family: fam.name.clone(), prefix }, coords });
            }
        }
        units
    }

    /// Complex dimensions of the factors of `U`.
    pub fn group_dims(&self) -> Vec<usize> {
        self.group_units().iter().map(|u| u.coords - 1).collect()
    }

    /// Every declared name, in declaration order.
    pub fn all_names(&self) -> Vec<&str> {
        self.free_blocks
            .iter()
            .map(|b| b.name.as_str())
            .chain(self.families.iter().map(|f| f.name.as_str()))
            .chain(self.quantifiers.iter().map(|q| q.block.name.as_str()))
            .collect()
    }

    /// Structural checks: names, shape/family consistency, references in range.
    pub fn check_structure(&self) -> Result<(), FormulaError> {
        let mut seen = HashSet::new();
        for n in self.all_names() {
            if !seen.insert(n) {
                return Err(FormulaError::DuplicateName(n.to_string()));
            }
        }
        for b in self.free_blocks.iter().chain(self.quantifiers.iter().map(|q| &q.block)) {
            if b.arity == 0 {
                return Err(FormulaError::Schema { path: b.name.clone(), msg: "arity must be ≥ 1".into() });
            }
        }
        for s in &self.shape {
            if s.arity == 0 {
                return Err(FormulaError::Schema { path: "shape".into(), msg: "stage arity must be ≥ 1".into() });
            }
        }
        for fam in &self.families {
            if fam.member_arity == 0 {
                return Err(FormulaError::Schema { path: fam.name.clone(), msg: "member_arity must be ≥ 1".into() });
            }
            if fam.depth >= self.shape.len() {
                return Err(FormulaError::IndexArityMismatch(format!(
                    "family {:?} has depth {} but the shape has {} stage(s)",
                    fam.name,
                    fam.depth,
                    self.shape.len()
                )));
            }
        }
        for atom in self.core.atoms() {
            for v in atom.poly.vars() {
                self.check_ref(v)?;
            }
        }
        Ok(())
    }

    fn check_ref(&self, v: &VarRef) -> Result<(), FormulaError> {
        if let Some(b) = self
            .free_blocks
            .iter()
            .chain(self.quantifiers.iter().map(|q| &q.block))
            .find(|b| b.name == v.owner)
        {
            if v.tuple.is_some() {
                return Err(FormulaError::IndexArityMismatch(format!("plain block {:?} referenced with an index tuple", b.name)));
            }
            if v.coord >= b.arity {
                return Err(FormulaError::CoordOutOfRange { owner: b.name.clone(), coord: v.coord, arity: b.arity });
            }
            return Ok(());
        }
        if let Some(fam) = self.family(&v.owner) {
            if let Some(t) = &v.tuple {
                if t.len() != fam.depth + 1 {
                    return Err(FormulaError::IndexArityMismatch(format!(
                        "member of {:?} addressed with {} indices, depth {} needs {}",
                        fam.name,
                        t.len(),
                        fam.depth,
                        fam.depth + 1
                    )));
                }
                for (i, (&ix, s)) in t.iter().zip(&self.shape).enumerate() {
                    if ix >= s.arity {
                        return Err(FormulaError::IndexArityMismatch(format!(
                            "index {ix} at position {i} of {:?} exceeds stage arity {}",
                            fam.name, s.arity
                        )));
                    }
                }
            }
            if v.coord >= fam.member_arity {
                return Err(FormulaError::CoordOutOfRange { owner: fam.name.clone(), coord: v.coord, arity: fam.member_arity });
            }
            return Ok(());
        }
        Err(FormulaError::UnknownBlock { path: "matrix".into(), name: v.owner.clone() })
    }

    /// Explicit quantifier-free tree over all index instances, with every
    /// family reference carrying its full member tuple. Requires ω = 0.
    pub fn shape_expand(&self) -> Qf {
        assert!(self.quantifiers.is_empty(), "shape_expand requires ω = 0");
        self.expand_level(0, &mut Vec::new())
    }

    fn expand_level(&self, level: usize, tuple: &mut Vec<usize>) -> Qf {
        if level == self.shape.len() {
            return self.instantiate_core(tuple);
        }
        let st = self.shape[level];
        let kids = (0..st.arity)
            .map(|i| {
                tuple.push(i);
                let k = self.expand_level(level + 1, tuple);
                tuple.pop();
                k
            })
            .collect();
        match st.op {
            LatticeOp::And => Qf::And(kids),
            LatticeOp::Or => Qf::Or(kids),
        }
    }

    /// The core at one instance tuple, family references made explicit.
    pub fn instantiate_core(&self, tuple: &[usize]) -> Qf {
        let depth: HashMap<&str, usize> = self.families.iter().map(|f| (f.name.as_str(), f.depth)).collect();
        self.core.map_vars(&|v: &VarRef| match (depth.get(v.owner.as_str()), &v.tuple) {
            (Some(&d), None) => VarRef::member(v.owner.clone(), tuple[..=d].to_vec(), v.coord),
            _ => v.clone(),
        })
    }

    /// Homogeneity unit of a variable inside the core (current-instance
    /// family references map to a symbolic prefix-less group key).
    fn core_unit_key(&self, v: &VarRef) -> String {
        match (self.family(&v.owner), &v.tuple) {
            (Some(fam), Some(t)) => UnitId::Group { family: fam.name.clone(), prefix: t[..fam.depth].to_vec() }.to_string(),
            (Some(fam), None) => format!("{}[*]", fam.name),
            (None, _) => v.owner.clone(),
        }
    }

    /// Units whose vanishing can be written from inside one instance: plain
    /// blocks and groups with a single member.
    pub fn zero_testable_units(&self) -> Vec<(String, Vec<VarRef>)> {
        let mut out = Vec::new();
        for b in self.free_blocks.iter().chain(self.quantifiers.iter().map(|q| &q.block)) {
            out.push((b.name.clone(), (0..b.arity).map(|c| VarRef::block(b.name.clone(), c)).collect()));
        }
        for fam in &self.families {
            if self.shape[fam.depth].arity == 1 {
                out.push((fam.name.clone(), (0..fam.member_arity).map(|c| VarRef::block(fam.name.clone(), c)).collect()));
            }
        }
        out
    }

    /// The same formula with `∨ (u = 0)` added for every zero-testable unit,
    /// which forces the zero-block condition without changing the realization.
    pub fn zero_completed(&self) -> ShapedFormula {
        let mut out = self.clone();
        let mut kids = vec![self.core.clone()];
        for (_, coords) in self.zero_testable_units() {
            kids.push(Qf::And(coords.into_iter().map(Qf::var_eq0).collect()));
        }
        out.core = Qf::Or(kids);
        out
    }

    /// Removes a free block by instantiating it at a point or a support pattern.
    pub fn instantiate(&self, block: &str, value: &BlockValue) -> Result<ShapedFormula, FormulaError> {
        let b = self
            .free_blocks
            .iter()
            .find(|b| b.name == block)
            .ok_or_else(|| FormulaError::NotFree(block.to_string()))?;
        let core = instantiate_qf(&self.core, b, value)?;
        let mut out = self.clone();
        out.free_blocks.retain(|x| x.name != block);
        out.core = core;
        Ok(out)
    }
}

/// A value for one block: an exact point (homogeneous integer coordinates)
/// or, in the coordinate fragment, a support pattern (bit `i` = coordinate `i` nonzero).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockValue {
    Point(Vec<BigInt>),
    Pattern(u64),
}

impl BlockValue {
    /// Clears denominators of a rational point `(num_i / den_i)`.
    pub fn from_rationals(coords: &[(BigInt, BigInt)]) -> Result<BlockValue, FormulaError> {
        if coords.iter().any(|(_, d)| d.is_zero()) {
            return Err(FormulaError::Schema { path: "point".into(), msg: "zero denominator".into() });
        }
        let l = coords.iter().fold(BigInt::one(), |acc, (_, d)| acc.lcm(d));
        Ok(BlockValue::Point(coords.iter().map(|(n, d)| n * (&l / d)).collect()))
    }
}

/// Substitutes `value` for the coordinates of plain block `b`.
pub fn instantiate_qf(f: &Qf, b: &Block, value: &BlockValue) -> Result<Qf, FormulaError> {
    match value {
        BlockValue::Point(p) => {
            if p.len() != b.arity {
                return Err(FormulaError::ArityMismatch { block: b.name.clone(), expected: b.arity, got: p.len() });
            }
            if p.iter().all(|c| c.is_zero()) {
                return Err(FormulaError::ZeroVector);
            }
        }
        BlockValue::Pattern(mask) => {
            if b.arity < 64 && mask >> b.arity != 0 {
                return Err(FormulaError::ArityMismatch {
                    block: b.name.clone(),
                    expected: b.arity,
                    got: 64 - mask.leading_zeros() as usize,
                });
            }
            if *mask == 0 {
                return Err(FormulaError::ZeroVector);
            }
        }
    }
    Ok(subst(f, b, value)?.simplify())
}

fn subst(f: &Qf, b: &Block, value: &BlockValue) -> Result<Qf, FormulaError> {
    Ok(match f {
        Qf::True => Qf::True,
        Qf::False => Qf::False,
        Qf::And(c) => Qf::And(c.iter().map(|x| subst(x, b, value)).collect::<Result<_, _>>()?),
        Qf::Or(c) => Qf::Or(c.iter().map(|x| subst(x, b, value)).collect::<Result<_, _>>()?),
        Qf::Atom(a) => {
            let touches = a.poly.vars().iter().any(|v| v.owner == b.name);
            if !touches {
                return Ok(f.clone());
            }
            match value {
                BlockValue::Point(p) => {
                    let mut monos = Vec::new();
                    for m in &a.poly.monomials {
                        let mut coeff = m.coeff.clone();
                        let mut exps = Vec::new();
                        for (v, e) in &m.exps {
                            if v.owner == b.name {
                                coeff *= num_traits::pow(p[v.coord].clone(), *e as usize);
                            } else {
                                exps.push((v.clone(), *e));
                            }
                        }
                        monos.push(Monomial { coeff, exps });
                    }
                    let poly = Poly { monomials: monos }.normalized();
                    Qf::Atom(Atom { poly, rel: a.rel }).simplify()
                }
                BlockValue::Pattern(mask) => {
                    let vars = a.poly.coordinate_vars().ok_or_else(|| FormulaError::NonCoordinateAtom(a.to_string()))?;
                    // Vanishes iff some variable vanishes; the substituted ones are decided by the pattern.
                    let mut rest = Vec::new();
                    let mut vanishes = false;
                    for v in vars {
                        if v.owner == b.name {
                            if mask >> v.coord & 1 == 0 {
                                vanishes = true;
                            }
                        } else {
                            rest.push(v.clone());
                        }
                    }
                    let eq = if vanishes {
                        Qf::True
                    } else if rest.is_empty() {
                        Qf::False
                    } else {
                        Qf::Or(rest.into_iter().map(Qf::var_eq0).collect())
                    };
                    match a.rel {
                        Relation::EqZero => eq,
                        Relation::NeqZero => eq.boolean_negation(),
                    }
                }
            }
        }
    })
}

/// `Φ̃ ∨ ⋁_u (u = 0)` for the given units (each listed by all its coordinates).
pub fn negate(f: &Qf, zero_units: &[(String, Vec<VarRef>)]) -> Qf {
    let mut kids = vec![f.boolean_negation()];
    for (_, coords) in zero_units {
        kids.push(Qf::And(coords.iter().cloned().map(Qf::var_eq0).collect()));
    }
    Qf::Or(kids)
}

/// Outcome of [`validate_multihomogeneous`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationReport {
    /// Every atom is homogeneous per unit.
    pub homogeneous: bool,
    pub zero_block: ZeroBlockStatus,
    pub coordinate_fragment: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ZeroBlockStatus {
    /// Checked exactly on patterns.
    Exact,
    /// Outside the fragment: substitution and simplification found no
    /// violation. `undecided` lists the blocks it could not settle.
    SyntacticPass { undecided: Vec<String> },
    /// A counterexample exists (block named).
    Fails(String),
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.homogeneous && !matches!(self.zero_block, ZeroBlockStatus::Fails(_))
    }
}

/// Checks multi-homogeneity of every atom and the zero-block condition.
pub fn validate_multihomogeneous(f: &ShapedFormula) -> Result<ValidationReport, FormulaError> {
    f.check_structure()?;
    for atom in f.core.atoms() {
        let mut degree: Option<BTreeMap<String, u32>> = None;
        for m in &atom.poly.monomials {
            let mut d: BTreeMap<String, u32> = BTreeMap::new();
            for (v, p) in &m.exps {
                *d.entry(f.core_unit_key(v)).or_insert(0) += p;
            }
            match &degree {
                None => degree = Some(d),
                Some(d0) => {
                    let keys: BTreeSet<&String> = d0.keys().chain(d.keys()).collect();
                    for k in keys {
                        if d0.get(k).copied().unwrap_or(0) != d.get(k).copied().unwrap_or(0) {
                            return Err(FormulaError::Inhomogeneous { atom: atom.to_string(), block: k.clone() });
                        }
                    }
                }
            }
        }
    }
    let fragment = f.core.is_coordinate_fragment();
    let zero_block = if fragment {
        match crate::coordinate_model::check_zero_block_condition(f) {
            Ok(None) => ZeroBlockStatus::Exact,
            Ok(Some(block)) => ZeroBlockStatus::Fails(block),
            Err(FormulaError::Schema { .. }) => syntactic_zero_block(f),
            Err(e) => return Err(e),
        }
    } else {
        syntactic_zero_block(f)
    };
    Ok(ValidationReport { homogeneous: true, zero_block, coordinate_fragment: fragment })
}

fn syntactic_zero_block(f: &ShapedFormula) -> ZeroBlockStatus {
    let mut undecided = Vec::new();
    for (name, coords) in f.zero_testable_units() {
        let zeroed: HashSet<&VarRef> = coords.iter().collect();
        let g = zero_vars(&f.core, &zeroed).simplify();
        match g {
            Qf::True => {}
            Qf::False => return ZeroBlockStatus::Fails(name),
            _ => undecided.push(name),
        }
    }
    ZeroBlockStatus::SyntacticPass { undecided }
}

fn zero_vars(f: &Qf, zeroed: &HashSet<&VarRef>) -> Qf {
    match f {
        Qf::And(c) => Qf::And(c.iter().map(|x| zero_vars(x, zeroed)).collect()),
        Qf::Or(c) => Qf::Or(c.iter().map(|x| zero_vars(x, zeroed)).collect()),
        Qf::Atom(a) => {
            let monos = a
                .poly
                .monomials
                .iter()
                .filter(|m| !m.exps.iter().any(|(v, _)| zeroed.contains(v)))
                .cloned()
                .collect();
            Qf::Atom(Atom { poly: Poly { monomials: monos }, rel: a.rel })
        }
        other => other.clone(),
    }
}

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

fn schema(path: &str, msg: impl Into<String>) -> FormulaError {
    FormulaError::Schema { path: path.to_string(), msg: msg.into() }
}

fn get_field<'a>(obj: &'a Map<String, Value>, key: &str, path: &str) -> Result<&'a Value, FormulaError> {
    obj.get(key).ok_or_else(|| schema(path, format!("missing field {key:?}")))
}

fn as_usize(v: &Value, path: &str) -> Result<usize, FormulaError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| schema(path, "expected a non-negative integer"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, FormulaError> {
    v.as_str().ok_or_else(|| schema(path, "expected a string"))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, FormulaError> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, FormulaError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], path: &str) -> Result<(), FormulaError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(schema(path, format!("unknown field {k:?}")));
        }
    }
    Ok(())
}

fn parse_identifier(v: &Value, path: &str) -> Result<String, FormulaError> {
    let s = as_str(v, path)?;
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(schema(path, format!("invalid identifier {s:?}")));
    }
    Ok(s.to_string())
}

fn parse_block(v: &Value, path: &str) -> Result<Block, FormulaError> {
    let o = as_object(v, path)?;
    check_keys(o, &["name", "arity"], path)?;
    let name = parse_identifier(get_field(o, "name", path)?, &format!("{path}.name"))?;
    let arity = as_usize(get_field(o, "arity", path)?, &format!("{path}.arity"))?;
    Ok(Block { name, arity })
}

/// `[owner, tuple?, coord]` (or with a trailing power when `with_power`).
fn parse_ref(v: &Value, path: &str, with_power: bool) -> Result<(VarRef, u32), FormulaError> {
    let a = as_array(v, path)?;
    let base = if with_power { 3 } else { 2 };
    let (tuple, rest) = match a.len() {
        n if n == base => (None, &a[1..]),
        n if n == base + 1 => {
            let t = as_array(&a[1], &format!("{path}[1]"))?
                .iter()
                .enumerate()
                .map(|(i, x)| as_usize(x, &format!("{path}[1][{i}]")))
                .collect::<Result<Vec<_>, _>>()?;
            (Some(t), &a[2..])
        }
        n => return Err(schema(path, format!("reference has {n} entries"))),
    };
    let owner = parse_identifier(&a[0], &format!("{path}[0]"))?;
    let coord = as_usize(&rest[0], &format!("{path}[coord]"))?;
    let power = if with_power {
        let p = as_usize(&rest[1], &format!("{path}[power]"))?;
        u32::try_from(p).map_err(|_| schema(path, "power too large"))?
    } else {
        1
    };
    Ok((VarRef { owner, tuple, coord }, power))
}

fn parse_poly(v: &Value, path: &str) -> Result<Poly, FormulaError> {
    let arr = as_array(v, path)?;
    let mut monomials = Vec::new();
    for (i, m) in arr.iter().enumerate() {
        let p = format!("{path}[{i}]");
        let o = as_object(m, &p)?;
        check_keys(o, &["coeff", "exps"], &p)?;
        let coeff = parse_coeff(get_field(o, "coeff", &p)?, &format!("{p}.coeff"))?;
        let exps = as_array(get_field(o, "exps", &p)?, &format!("{p}.exps"))?
            .iter()
            .enumerate()
            .map(|(j, e)| parse_ref(e, &format!("{p}.exps[{j}]"), true))
            .collect::<Result<Vec<_>, _>>()?;
        monomials.push((coeff, exps));
    }
    // Rational coefficients are cleared by the common denominator.
    let l = monomials.iter().fold(BigInt::one(), |acc, ((_, d), _)| acc.lcm(d));
    Ok(Poly {
        monomials: monomials
            .into_iter()
            .map(|((n, d), exps)| Monomial { coeff: n * (&l / d), exps })
            .collect(),
    }
    .normalized())
}

/// Decimal integer or `"n/d"`.
fn parse_coeff(v: &Value, path: &str) -> Result<(BigInt, BigInt), FormulaError> {
    let s = as_str(v, path)?;
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n, d),
        None => (s, "1"),
    };
    let n = parse_decimal(n).map_err(|e| schema(path, e))?;
    let d = parse_decimal(d).map_err(|e| schema(path, e))?;
    if d.is_zero() {
        return Err(schema(path, "zero denominator"));
    }
    if d.is_negative() {
        Ok((-n, -d))
    } else {
        Ok((n, d))
    }
}

fn parse_qf(v: &Value, path: &str, depth: usize) -> Result<Qf, FormulaError> {
    if depth > 512 {
        return Err(schema(path, "matrix nested too deeply"));
    }
    if let Some(b) = v.as_bool() {
        return Ok(if b { Qf::True } else { Qf::False });
    }
    let o = as_object(v, path)?;
    if o.len() != 1 {
        return Err(schema(path, "a matrix node has exactly one key"));
    }
    let (k, body) = o.iter().next().unwrap();
    let p = format!("{path}.{k}");
    Ok(match k.as_str() {
        "and" | "or" => {
            let kids = as_array(body, &p)?
                .iter()
                .enumerate()
                .map(|(i, x)| parse_qf(x, &format!("{p}[{i}]"), depth + 1))
                .collect::<Result<Vec<_>, _>>()?;
            if k == "and" {
                Qf::And(kids)
            } else {
                Qf::Or(kids)
            }
        }
        "eq0" => Qf::Atom(Atom { poly: parse_poly(body, &p)?, rel: Relation::EqZero }),
        "neq0" => Qf::Atom(Atom { poly: parse_poly(body, &p)?, rel: Relation::NeqZero }),
        "var_eq0" => Qf::var_eq0(parse_ref(body, &p, false)?.0),
        other => return Err(schema(path, format!("unknown matrix node {other:?}"))),
    })
}

fn json_error(e: serde_json::Error) -> FormulaError {
    FormulaError::Syntax { line: e.line(), column: e.column(), msg: e.to_string() }
}

/// Parses and structurally validates a formula document.
pub fn parse_formula(text: &str) -> Result<ShapedFormula, FormulaError> {
    let v: Value = serde_json::from_str(text).map_err(json_error)?;
    formula_from_value(&v)
}

pub fn formula_from_value(v: &Value) -> Result<ShapedFormula, FormulaError> {
    let o = as_object(v, "$")?;
    check_keys(o, &["fmt", "free_blocks", "shape", "families", "quantifiers", "matrix", "closedness"], "$")?;
    let fmt = as_usize(get_field(o, "fmt", "$")?, "$.fmt")?;
    if fmt as u64 != FORMULA_FMT {
        return Err(schema("$.fmt", format!("unsupported schema version {fmt}")));
    }
    let empty = Value::Array(vec![]);
    let list = |key: &str| -> Result<&Vec<Value>, FormulaError> {
        as_array(o.get(key).unwrap_or(&empty), &format!("$.{key}"))
    };
    let free_blocks = list("free_blocks")?
        .iter()
        .enumerate()
        .map(|(i, b)| parse_block(b, &format!("$.free_blocks[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    let shape = list("shape")?
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = format!("$.shape[{i}]");
            let so = as_object(s, &p)?;
            check_keys(so, &["op", "arity"], &p)?;
            let op = match as_str(get_field(so, "op", &p)?, &p)? {
                "and" => LatticeOp::And,
                "or" => LatticeOp::Or,
                other => return Err(schema(&p, format!("unknown lattice op {other:?}"))),
            };
            Ok(ShapeStage { op, arity: as_usize(get_field(so, "arity", &p)?, &format!("{p}.arity"))? })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let families = list("families")?
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = format!("$.families[{i}]");
            let fo = as_object(f, &p)?;
            check_keys(fo, &["name", "depth", "member_arity"], &p)?;
            Ok(BlockFamily {
                name: parse_identifier(get_field(fo, "name", &p)?, &format!("{p}.name"))?,
                depth: as_usize(get_field(fo, "depth", &p)?, &format!("{p}.depth"))?,
                member_arity: as_usize(get_field(fo, "member_arity", &p)?, &format!("{p}.member_arity"))?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let quantifiers = list("quantifiers")?
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let p = format!("$.quantifiers[{i}]");
            let qo = as_object(q, &p)?;
            check_keys(qo, &["q", "name", "arity"], &p)?;
            let quantifier = match as_str(get_field(qo, "q", &p)?, &p)? {
                "exists" => Quantifier::Exists,
                "forall" => Quantifier::Forall,
                other => return Err(schema(&p, format!("unknown quantifier {other:?}"))),
            };
            Ok(QuantifiedBlock {
                quantifier,
                block: Block {
                    name: parse_identifier(get_field(qo, "name", &p)?, &format!("{p}.name"))?,
                    arity: as_usize(get_field(qo, "arity", &p)?, &format!("{p}.arity"))?,
                },
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let core = parse_qf(get_field(o, "matrix", "$")?, "$.matrix", 0)?;
    let closedness = match o.get("closedness") {
        None => Closedness::Unverified,
        Some(c) => match as_str(c, "$.closedness")? {
            "closed" => Closedness::Closed,
            "open" => Closedness::Open,
            "unverified" => Closedness::Unverified,
            other => return Err(schema("$.closedness", format!("unknown closedness {other:?}"))),
        },
    };
    let f = ShapedFormula { free_blocks, shape, families, quantifiers, core, closedness };
    f.check_structure()?;
    Ok(f)
}

fn ref_value(v: &VarRef, power: Option<u32>) -> Value {
    let mut a = vec![json!(v.owner)];
    if let Some(t) = &v.tuple {
        a.push(json!(t));
    }
    a.push(json!(v.coord));
    if let Some(p) = power {
        a.push(json!(p));
    }
    Value::Array(a)
}

fn poly_value(p: &Poly) -> Value {
    Value::Array(
        p.monomials
            .iter()
            .map(|m| {
                json!({
                    "coeff": m.coeff.to_string(),
                    "exps": m.exps.iter().map(|(v, e)| ref_value(v, Some(*e))).collect::<Vec<_>>(),
                })
            })
            .collect(),
    )
}

pub fn qf_value(f: &Qf) -> Value {
    match f {
        Qf::True => json!(true),
        Qf::False => json!(false),
        Qf::And(c) => json!({ "and": c.iter().map(qf_value).collect::<Vec<_>>() }),
        Qf::Or(c) => json!({ "or": c.iter().map(qf_value).collect::<Vec<_>>() }),
        Qf::Atom(a) => {
            let single = match a.poly.monomials.as_slice() {
                [m] if m.coeff.is_one() && m.exps.len() == 1 && m.exps[0].1 == 1 => Some(&m.exps[0].0),
                _ => None,
            };
            match (a.rel, single) {
                (Relation::EqZero, Some(v)) => json!({ "var_eq0": ref_value(v, None) }),
                (Relation::EqZero, None) => json!({ "eq0": poly_value(&a.poly) }),
                (Relation::NeqZero, _) => json!({ "neq0": poly_value(&a.poly) }),
            }
        }
    }
}

pub fn formula_to_value(f: &ShapedFormula) -> Value {
    json!({
        "fmt": FORMULA_FMT,
        "free_blocks": f.free_blocks.iter().map(|b| json!({"name": b.name, "arity": b.arity})).collect::<Vec<_>>(),
        "shape": f.shape.iter().map(|s| json!({"op": s.op.as_str(), "arity": s.arity})).collect::<Vec<_>>(),
        "families": f.families.iter().map(|fam| json!({"name": fam.name, "depth": fam.depth, "member_arity": fam.member_arity})).collect::<Vec<_>>(),
        "quantifiers": f.quantifiers.iter().map(|q| json!({"q": q.quantifier.as_str(), "name": q.block.name, "arity": q.block.arity})).collect::<Vec<_>>(),
        "matrix": qf_value(&f.core),
        "closedness": f.closedness.as_str(),
    })
}

pub fn formula_to_json(f: &ShapedFormula) -> String {
    serde_json::to_string(&formula_to_value(f)).expect("formula serializes")
}

impl fmt::Display for Qf {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Qf::True => write!(f, "True"),
            Qf::False => write!(f, "False"),
            Qf::Atom(a) => write!(f, "{a}"),
            Qf::And(c) | Qf::Or(c) => {
                let sep = if matches!(self, Qf::And(_)) { " ∧ " } else { " ∨ " };
                let parts: Vec<String> = c.iter().map(|x| x.to_string()).collect();
                write!(f, "[{}]", parts.join(sep))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coordinate_model::{patterns_of, PatternSpace};

    const PSI_H: &str = r#"{"fmt":1,
        "free_blocks":[{"name":"X","arity":2},{"name":"Y","arity":2}],
        "matrix":{"and":[
            {"eq0":[{"coeff":"1","exps":[["Y",1,2]]},{"coeff":"-1","exps":[["Y",0,2]]}]},
            {"eq0":[{"coeff":"1","exps":[["X",0,2],["Y",1,1]]},{"coeff":"-1","exps":[["X",1,2],["Y",0,1]]}]}
        ]}}"#;

    fn eq(owner: &str, c: usize) -> Qf {
        Qf::var_eq0(VarRef::block(owner, c))
    }

    #[test]
    fn minimal_sentence_document() {
        let f = parse_formula(r#"{"fmt":1,"quantifiers":[{"q":"exists","name":"Y","arity":2}],"matrix":{"var_eq0":["Y",0]}}"#)
            .unwrap();
        assert_eq!(f.omega(), 1);
        assert!(f.shape.is_empty());
        assert_eq!(f.core, eq("Y", 0));
    }

    #[test]
    fn two_quantifier_document() {
        let f = parse_formula(
            r#"{"fmt":1,"free_blocks":[{"name":"X","arity":2}],
               "quantifiers":[{"q":"exists","name":"Y","arity":2},{"q":"forall","name":"Z","arity":3}],
               "matrix":{"or":[{"var_eq0":["X",1]},{"and":[{"var_eq0":["Y",0]},{"var_eq0":["Z",2]}]}]}}"#,
        )
        .unwrap();
        assert_eq!(f.omega(), 2);
        assert_eq!(f.quantifiers[1].quantifier, Quantifier::Forall);
    }

    #[test]
    fn family_depth_mismatch() {
        let e = parse_formula(
            r#"{"fmt":1,"shape":[{"op":"and","arity":2}],"families":[{"name":"W","depth":1,"member_arity":2}],"matrix":true}"#,
        )
        .unwrap_err();
        assert!(matches!(e, FormulaError::IndexArityMismatch(_)), "{e}");
    }

    #[test]
    fn document_errors() {
        assert!(matches!(parse_formula("{\"fmt\":1,\n\"matrix\":"), Err(FormulaError::Syntax { line: 2, .. })));
        let dup = r#"{"fmt":1,"free_blocks":[{"name":"X","arity":1}],"quantifiers":[{"q":"exists","name":"X","arity":1}],"matrix":true}"#;
        assert_eq!(parse_formula(dup).unwrap_err(), FormulaError::DuplicateName("X".into()));
        let unknown = r#"{"fmt":1,"matrix":{"var_eq0":["Q",0]}}"#;
        assert!(matches!(parse_formula(unknown), Err(FormulaError::UnknownBlock { .. })));
        let range = r#"{"fmt":1,"free_blocks":[{"name":"X","arity":2}],"matrix":{"var_eq0":["X",2]}}"#;
        assert!(matches!(parse_formula(range), Err(FormulaError::CoordOutOfRange { .. })));
        let version = r#"{"fmt":2,"matrix":true}"#;
        assert!(matches!(parse_formula(version), Err(FormulaError::Schema { .. })));
    }

    #[test]
    fn document_round_trip() {
        let f = parse_formula(PSI_H).unwrap();
        assert_eq!(parse_formula(&formula_to_json(&f)).unwrap(), f);
    }

    #[test]
    fn rational_coefficients_are_cleared() {
        let f = parse_formula(
            r#"{"fmt":1,"free_blocks":[{"name":"X","arity":2}],
               "matrix":{"eq0":[{"coeff":"1/2","exps":[["X",0,1]]},{"coeff":"-1/3","exps":[["X",1,1]]}]}}"#,
        )
        .unwrap();
        let Qf::Atom(a) = &f.core else { panic!() };
        let coeffs: Vec<i64> = a.poly.monomials.iter().map(|m| i64::try_from(&m.coeff).unwrap()).collect();
        assert_eq!(coeffs, vec![3, -2]);
    }

    #[test]
    fn validation_examples() {
        let f = parse_formula(PSI_H).unwrap();
        let r = validate_multihomogeneous(&f).unwrap();
        assert!(r.homogeneous && !r.coordinate_fragment);
        assert_eq!(r.zero_block, ZeroBlockStatus::SyntacticPass { undecided: vec!["X".into()] });

        let bad = parse_formula(
            r#"{"fmt":1,"free_blocks":[{"name":"X","arity":2}],
               "matrix":{"eq0":[{"coeff":"1","exps":[["X",0,1]]},{"coeff":"1","exps":[["X",1,2]]}]}}"#,
        )
        .unwrap();
        match validate_multihomogeneous(&bad) {
            Err(FormulaError::Inhomogeneous { block, .. }) => assert_eq!(block, "X"),
            other => panic!("{other:?}"),
        }

        let coord = ShapedFormula::quantifier_free(vec![Block::new("X", 2)], Qf::Or(vec![eq("X", 0), eq("X", 1)]));
        let r = validate_multihomogeneous(&coord).unwrap();
        assert!(r.coordinate_fragment && r.passed());
        assert_eq!(r.zero_block, ZeroBlockStatus::Exact);
    }

    #[test]
    fn negate_point_of_p1() {
        let b = Block::new("X", 2);
        let units = ShapedFormula::quantifier_free(vec![b.clone()], Qf::True).zero_testable_units();
        let n = negate(&eq("X", 0), &units);
        assert_eq!(
            n,
            Qf::Or(vec![Qf::var_neq0(VarRef::block("X", 0)), Qf::And(vec![eq("X", 0), eq("X", 1)])])
        );
        let pats = patterns_of(&[b.clone()], &n).unwrap();
        assert_eq!(pats.members.into_iter().collect::<Vec<_>>(), vec![vec![0b01], vec![0b11]]);
        assert!(patterns_of(&[b], &negate(&Qf::True, &units)).unwrap().is_empty());
    }

    #[test]
    fn shape_expansion() {
        let mut f = ShapedFormula::quantifier_free(vec![Block::new("X", 1)], eq("X", 0));
        assert_eq!(f.shape_expand(), eq("X", 0));
        f.shape = vec![ShapeStage { op: LatticeOp::And, arity: 2 }];
        f.families = vec![BlockFamily { name: "W".into(), depth: 0, member_arity: 2 }];
        f.core = Qf::Or(vec![eq("X", 0), Qf::var_eq0(VarRef::block("W", 1))]);
        let e = f.shape_expand();
        let inst = |i: usize| Qf::Or(vec![eq("X", 0), Qf::var_eq0(VarRef::member("W", vec![i], 1))]);
        assert_eq!(e, Qf::And(vec![inst(0), inst(1)]));

        f.shape = vec![ShapeStage { op: LatticeOp::Or, arity: 2 }, ShapeStage { op: LatticeOp::And, arity: 2 }];
        let e = f.shape_expand();
        assert_eq!(e.atom_count(), f.core.atom_count() * 4);
        let Qf::Or(kids) = e else { panic!() };
        assert!(kids.iter().all(|k| matches!(k, Qf::And(v) if v.len() == 2)));
    }

    #[test]
    fn instantiation_examples() {
        let f = ShapedFormula::quantifier_free(
            vec![Block::new("X", 2), Block::new("Y", 2)],
            Qf::And(vec![eq("X", 0), eq("Y", 0)]),
        );
        let point = BlockValue::Point(vec![BigInt::zero(), BigInt::one()]);
        assert_eq!(f.instantiate("X", &point).unwrap().core, eq("Y", 0));

        let g = ShapedFormula::quantifier_free(vec![Block::new("X", 2)], Qf::Or(vec![eq("X", 0), eq("X", 1)]));
        assert_eq!(g.instantiate("X", &BlockValue::Pattern(0b11)).unwrap().core, Qf::False);

        let psi = parse_formula(PSI_H).unwrap();
        let at = psi.instantiate("X", &BlockValue::Point(vec![BigInt::one(), BigInt::one()])).unwrap();
        let expected = parse_formula(
            r#"{"fmt":1,"free_blocks":[{"name":"Y","arity":2}],"matrix":{"and":[
                {"eq0":[{"coeff":"1","exps":[["Y",1,2]]},{"coeff":"-1","exps":[["Y",0,2]]}]},
                {"eq0":[{"coeff":"1","exps":[["Y",1,1]]},{"coeff":"-1","exps":[["Y",0,1]]}]}]}}"#,
        )
        .unwrap();
        assert_eq!(at.core, expected.core);
        assert_eq!(at.free_blocks, vec![Block::new("Y", 2)]);
    }

    #[test]
    fn instantiation_errors() {
        let f = ShapedFormula::quantifier_free(vec![Block::new("X", 2)], eq("X", 0));
        assert_eq!(
            f.instantiate("X", &BlockValue::Point(vec![BigInt::zero(), BigInt::zero()])).unwrap_err(),
            FormulaError::ZeroVector
        );
        assert!(matches!(
            f.instantiate("X", &BlockValue::Point(vec![BigInt::one()])),
            Err(FormulaError::ArityMismatch { .. })
        ));
        assert!(matches!(f.instantiate("X", &BlockValue::Pattern(0b100)), Err(FormulaError::ArityMismatch { .. })));
        assert!(matches!(f.instantiate("Y", &BlockValue::Pattern(1)), Err(FormulaError::NotFree(_))));
    }

    #[test]
    fn units_and_groups() {
        let f = ShapedFormula {
            free_blocks: vec![Block::new("X", 2)],
            shape: vec![ShapeStage { op: LatticeOp::And, arity: 2 }, ShapeStage { op: LatticeOp::Or, arity: 3 }],
            families: vec![
                BlockFamily { name: "V".into(), depth: 0, member_arity: 1 },
                BlockFamily { name: "W".into(), depth: 1, member_arity: 2 },
            ],
            quantifiers: vec![],
            core: Qf::True,
            closedness: Closedness::Unverified,
        };
        let ids: Vec<String> = f.free_units().iter().map(|u| format!("{}:{}", u.id, u.coords)).collect();
        assert_eq!(ids, vec!["X:2", "V[]:2", "W[0]:6", "W[1]:6"]);
        assert_eq!(f.group_dims(), vec![1, 5, 5]);
        let _ = PatternSpace::from_units(&f.free_units()).unwrap();
    }
}
