//! Exact semantics of the coordinate fragment.
//!
//! A point of a product of projective spaces is recorded by its support
//! pattern: one nonempty bitmask of nonzero coordinates per unit. Every
//! fragment formula is invariant under the coordinate torus, so its
//! realization is a finite set of patterns.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde_json::{json, Value};
use thiserror::Error;

use crate::formula_ir::{
    index_tuples, Atom, Block, FormulaError, LatticeOp, Qf, Quantifier, Relation, ShapedFormula,
    Unit, UnitId, VarRef,
};

/// Upper bound on the number of patterns enumerated by a single call.
pub const ENUMERATION_LIMIT: u128 = 1 << 26;

pub const PATTERN_FMT: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("non-coordinate atom {0}")]
    NonCoordinateAtom(String),
    #[error("pattern spaces differ")]
    SpaceMismatch,
    #[error("unit {0} out of range")]
    UnitOutOfRange(usize),
    #[error("enumeration of {count} patterns exceeds the limit of {limit}")]
    TooLarge { count: u128, limit: u128 },
    #[error("invalid pattern: {0}")]
    InvalidPattern(String),
    #[error("set is not closed")]
    NotClosed,
    #[error("free blocks remain: {0:?}")]
    FreeBlocksRemain(Vec<String>),
    #[error("pattern document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UnitSpec {
    pub name: String,
    pub coords: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct PatternSpace {
    pub units: Vec<UnitSpec>,
}

/// One support bitmask per unit.
pub type Pattern = Vec<u64>;

fn full_mask(coords: usize) -> u64 {
    if coords >= 64 {
        u64::MAX
    } else {
        (1u64 << coords) - 1
    }
}

impl PatternSpace {
    pub fn new(units: Vec<UnitSpec>) -> Result<Self, CoordError> {
        for u in &units {
            if u.coords == 0 || u.coords > 64 {
                return Err(CoordError::Formula(FormulaError::UnitTooLarge { name: u.name.clone(), coords: u.coords }));
            }
        }
        Ok(PatternSpace { units })
    }

    /// Product of projective spaces of the given complex dimensions.
    pub fn projective(dims: &[usize]) -> Self {
        PatternSpace {
            units: dims
                .iter()
                .enumerate()
                .map(|(i, &d)| UnitSpec { name: format!("u{i}"), coords: d + 1 })
                .collect(),
        }
    }

    pub fn from_units(units: &[Unit]) -> Result<Self, CoordError> {
        PatternSpace::new(units.iter().map(|u| UnitSpec { name: u.id.to_string(), coords: u.coords }).collect())
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.units.iter().map(|u| u.coords - 1).collect()
    }

    pub fn total_coords(&self) -> usize {
        self.units.iter().map(|u| u.coords).sum()
    }

    /// Complex dimension of the ambient.
    pub fn dimension(&self) -> usize {
        self.dims().iter().sum()
    }

    pub fn full_pattern(&self) -> Pattern {
        self.units.iter().map(|u| full_mask(u.coords)).collect()
    }

    pub fn pattern_count(&self) -> u128 {
        self.units
            .iter()
            .map(|u| if u.coords >= 64 { u128::MAX } else { (1u128 << u.coords) - 1 })
            .fold(1u128, |a, b| a.saturating_mul(b))
    }

    pub fn check_enumerable(&self) -> Result<(), CoordError> {
        let count = self.pattern_count();
        if count > ENUMERATION_LIMIT {
            return Err(CoordError::TooLarge { count, limit: ENUMERATION_LIMIT });
        }
        Ok(())
    }

    pub fn contains_pattern(&self, p: &[u64]) -> bool {
        p.len() == self.units.len()
            && p.iter().zip(&self.units).all(|(&m, u)| m != 0 && m & !full_mask(u.coords) == 0)
    }

    /// All patterns in lexicographic order of the mask tuple.
    pub fn all_patterns(&self) -> Result<Vec<Pattern>, CoordError> {
        self.check_enumerable()?;
        let mut out = vec![Vec::with_capacity(self.units.len())];
        for u in &self.units {
            let top = full_mask(u.coords);
            out = out
                .into_iter()
                .flat_map(|p| {
                    (1..=top).map(move |m| {
                        let mut q = p.clone();
                        q.push(m);
                        q
                    })
                })
                .collect();
        }
        Ok(out)
    }

    pub fn product(&self, other: &PatternSpace) -> PatternSpace {
        let mut units = self.units.clone();
        units.extend(other.units.iter().cloned());
        PatternSpace { units }
    }
}

/// Componentwise inclusion of supports.
pub fn pattern_le(a: &[u64], b: &[u64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x & !y == 0)
}

/// Orbit dimension `Σ (|S_u| − 1)`.
pub fn orbit_dimension(p: &[u64]) -> usize {
    p.iter().map(|m| m.count_ones() as usize - 1).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Topology {
    Closed,
    Open,
    /// Both closed and open: empty or the whole ambient.
    Clopen,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternSet {
    pub space: PatternSpace,
    pub members: BTreeSet<Pattern>,
}

impl PatternSet {
    pub fn empty(space: PatternSpace) -> Self {
        PatternSet { space, members: BTreeSet::new() }
    }

    pub fn full(space: PatternSpace) -> Result<Self, CoordError> {
        let members = space.all_patterns()?.into_iter().collect();
        Ok(PatternSet { space, members })
    }

    pub fn from_patterns(space: PatternSpace, pats: impl IntoIterator<Item = Pattern>) -> Result<Self, CoordError> {
        let mut members = BTreeSet::new();
        for p in pats {
            if !space.contains_pattern(&p) {
                return Err(CoordError::InvalidPattern(format!("{p:x?}")));
            }
            members.insert(p);
        }
        Ok(PatternSet { space, members })
    }

    /// Downward closure of the given supports.
    pub fn closure_of(space: PatternSpace, generators: &[Pattern]) -> Result<Self, CoordError> {
        let mut members = BTreeSet::new();
        for g in generators {
            if !space.contains_pattern(g) {
                return Err(CoordError::InvalidPattern(format!("{g:x?}")));
            }
            let mut sub: Vec<Pattern> = vec![Vec::new()];
            for &m in g {
                sub = sub
                    .into_iter()
                    .flat_map(|p| {
                        submasks(m).into_iter().map(move |s| {
                            let mut q = p.clone();
                            q.push(s);
                            q
                        })
                    })
                    .collect();
            }
            members.extend(sub);
        }
        Ok(PatternSet { space, members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, p: &[u64]) -> bool {
        self.members.contains(p)
    }

    fn same_space(&self, other: &PatternSet) -> Result<(), CoordError> {
        if self.space != other.space {
            return Err(CoordError::SpaceMismatch);
        }
        Ok(())
    }

    pub fn union(&self, other: &PatternSet) -> Result<PatternSet, CoordError> {
        self.same_space(other)?;
        Ok(PatternSet { space: self.space.clone(), members: self.members.union(&other.members).cloned().collect() })
    }

    pub fn intersection(&self, other: &PatternSet) -> Result<PatternSet, CoordError> {
        self.same_space(other)?;
        Ok(PatternSet {
            space: self.space.clone(),
            members: self.members.intersection(&other.members).cloned().collect(),
        })
    }

    pub fn difference(&self, other: &PatternSet) -> Result<PatternSet, CoordError> {
        self.same_space(other)?;
        Ok(PatternSet {
            space: self.space.clone(),
            members: self.members.difference(&other.members).cloned().collect(),
        })
    }

    pub fn complement(&self) -> Result<PatternSet, CoordError> {
        let members = self.space.all_patterns()?.into_iter().filter(|p| !self.members.contains(p)).collect();
        Ok(PatternSet { space: self.space.clone(), members })
    }

    pub fn product(&self, other: &PatternSet) -> PatternSet {
        let mut members = BTreeSet::new();
        for a in &self.members {
            for b in &other.members {
                let mut p = a.clone();
                p.extend_from_slice(b);
                members.insert(p);
            }
        }
        PatternSet { space: self.space.product(&other.space), members }
    }

    /// Realization equality (same space, same members).
    pub fn equals(&self, other: &PatternSet) -> bool {
        self == other
    }

    /// Down-closed under shrinking one unit's support to a nonempty subset.
    pub fn is_closed(&self) -> bool {
        self.members.iter().all(|p| {
            p.iter().enumerate().all(|(u, &m)| {
                m.count_ones() == 1
                    || (0..64).filter(|b| m >> b & 1 == 1).all(|b| {
                        let mut q = p.clone();
                        q[u] = m & !(1 << b);
                        self.members.contains(&q)
                    })
            })
        })
    }

    /// Up-closed: the complement is closed.
    pub fn is_open(&self) -> bool {
        self.members.iter().all(|p| {
            p.iter().enumerate().all(|(u, &m)| {
                let top = full_mask(self.space.units[u].coords);
                (0..self.space.units[u].coords).filter(|b| m >> b & 1 == 0).all(|b| {
                    let mut q = p.clone();
                    q[u] = (m | 1 << b) & top;
                    self.members.contains(&q)
                })
            })
        })
    }

    pub fn classify_topology(&self) -> Topology {
        match (self.is_closed(), self.is_open()) {
            (true, true) => Topology::Clopen,
            (true, false) => Topology::Closed,
            (false, true) => Topology::Open,
            (false, false) => Topology::Neither,
        }
    }

    /// The antichain of maximal supports of a closed set.
    pub fn max_supports(&self) -> Result<Vec<Pattern>, CoordError> {
        if !self.is_closed() {
            return Err(CoordError::NotClosed);
        }
        Ok(maximal_elements(self.members.iter()))
    }

    /// Sorts the set by ascending orbit dimension, ties broken lexicographically.
    pub fn by_dimension(&self) -> Vec<Pattern> {
        let mut v: Vec<Pattern> = self.members.iter().cloned().collect();
        v.sort_by_key(|p| (orbit_dimension(p), p.clone()));
        v
    }
}

/// Maximal elements of a family of patterns under componentwise inclusion.
pub fn maximal_elements<'a>(it: impl Iterator<Item = &'a Pattern>) -> Vec<Pattern> {
    let mut pats: Vec<&Pattern> = it.collect();
    pats.sort_by_key(|p| std::cmp::Reverse(p.iter().map(|m| m.count_ones()).sum::<u32>()));
    let mut out: Vec<Pattern> = Vec::new();
    for p in pats {
        if !out.iter().any(|q| pattern_le(p, q)) {
            out.push(p.clone());
        }
    }
    out.sort();
    out
}

/// Nonempty submasks of `m`.
pub fn submasks(m: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut s = m;
    while s != 0 {
        out.push(s);
        s = (s - 1) & m;
    }
    out.reverse();
    out
}

// ---------------------------------------------------------------------------
// Compiled evaluation
// ---------------------------------------------------------------------------

/// Quantifier-free formula resolved to (slot, bitmask) literals.
#[derive(Debug, Clone)]
pub enum CNode {
    Const(bool),
    And(Vec<CNode>),
    Or(Vec<CNode>),
    /// `vanish == true`: holds iff some listed coordinate is zero.
    /// `vanish == false`: holds iff all listed coordinates are nonzero.
    Lit { vars: Vec<(usize, u64)>, vanish: bool },
}

impl CNode {
    pub fn eval(&self, a: &[u64]) -> bool {
        match self {
            CNode::Const(b) => *b,
            CNode::And(c) => c.iter().all(|x| x.eval(a)),
            CNode::Or(c) => c.iter().any(|x| x.eval(a)),
            CNode::Lit { vars, vanish } => {
                let zero = vars.iter().any(|&(s, m)| a[s] & m == 0);
                zero == *vanish
            }
        }
    }
}

/// Resolves every coordinate atom with `resolve`, which maps a variable to
/// `(slot, bit)`.
pub fn compile_qf(f: &Qf, resolve: &dyn Fn(&VarRef) -> Result<(usize, u32), CoordError>) -> Result<CNode, CoordError> {
    Ok(match f {
        Qf::True => CNode::Const(true),
        Qf::False => CNode::Const(false),
        Qf::And(c) => CNode::And(c.iter().map(|x| compile_qf(x, resolve)).collect::<Result<_, _>>()?),
        Qf::Or(c) => CNode::Or(c.iter().map(|x| compile_qf(x, resolve)).collect::<Result<_, _>>()?),
        Qf::Atom(a) => compile_atom(a, resolve)?,
    })
}

fn compile_atom(a: &Atom, resolve: &dyn Fn(&VarRef) -> Result<(usize, u32), CoordError>) -> Result<CNode, CoordError> {
    let eq = a.rel == Relation::EqZero;
    if a.poly.is_zero() {
        return Ok(CNode::Const(eq));
    }
    if a.poly.as_nonzero_constant().is_some() {
        return Ok(CNode::Const(!eq));
    }
    let vars = a.poly.coordinate_vars().ok_or_else(|| CoordError::NonCoordinateAtom(a.to_string()))?;
    let mut lits = Vec::with_capacity(vars.len());
    for v in vars {
        let (s, b) = resolve(v)?;
        lits.push((s, 1u64 << b));
    }
    Ok(CNode::Lit { vars: lits, vanish: eq })
}

/// Membership evaluator for a fragment shaped formula over its free units.
#[derive(Debug, Clone)]
pub struct ShapedEvaluator {
    pub space: PatternSpace,
    shape: Vec<(LatticeOp, usize)>,
    quantifiers: Vec<(Quantifier, usize)>,
    /// Core compiled once per instance tuple, in lexicographic order.
    instances: Vec<CNode>,
    nfree: usize,
}

impl ShapedEvaluator {
    pub fn new(f: &ShapedFormula) -> Result<Self, CoordError> {
        f.check_structure()?;
        let units = f.free_units();
        let space = PatternSpace::from_units(&units)?;
        for q in &f.quantifiers {
            if q.block.arity > 64 {
                return Err(FormulaError::UnitTooLarge { name: q.block.name.clone(), coords: q.block.arity }.into());
            }
        }
        let nfree = units.len();
        let mut slot_of_block: HashMap<String, usize> = HashMap::new();
        for (i, u) in units.iter().enumerate() {
            if let UnitId::Block(n) = &u.id {
                slot_of_block.insert(n.clone(), i);
            }
        }
        for (k, q) in f.quantifiers.iter().enumerate() {
            slot_of_block.insert(q.block.name.clone(), nfree + k);
        }
        let mut slot_of_group: HashMap<(String, Vec<usize>), usize> = HashMap::new();
        for (i, u) in units.iter().enumerate() {
            if let UnitId::Group { family, prefix } = &u.id {
                slot_of_group.insert((family.clone(), prefix.clone()), i);
            }
        }
        let fams: HashMap<String, (usize, usize)> =
            f.families.iter().map(|fam| (fam.name.clone(), (fam.depth, fam.member_arity))).collect();
        let resolve = |v: &VarRef| -> Result<(usize, u32), CoordError> {
            if let Some(&(depth, ma)) = fams.get(&v.owner) {
                let t = v.tuple.as_ref().expect("instantiated core has explicit tuples");
                let slot = slot_of_group[&(v.owner.clone(), t[..depth].to_vec())];
                return Ok((slot, (t[depth] * ma + v.coord) as u32));
            }
            Ok((slot_of_block[&v.owner], v.coord as u32))
        };
        let mut instances = Vec::new();
        for t in index_tuples(&f.shape_arities()) {
            instances.push(compile_qf(&f.instantiate_core(&t), &resolve)?);
        }
        Ok(ShapedEvaluator {
            space,
            shape: f.shape.iter().map(|s| (s.op, s.arity)).collect(),
            quantifiers: f.quantifiers.iter().map(|q| (q.quantifier, q.block.arity)).collect(),
            instances,
            nfree,
        })
    }

    /// Evaluates the formula at a free pattern.
    pub fn contains(&self, p: &[u64]) -> bool {
        let mut a = Vec::with_capacity(self.nfree + self.quantifiers.len());
        a.extend_from_slice(p);
        a.resize(self.nfree + self.quantifiers.len(), 0);
        let mut next = 0;
        self.eval_shape(0, &mut next, &mut a)
    }

    fn eval_shape(&self, level: usize, next: &mut usize, a: &mut Vec<u64>) -> bool {
        if level == self.shape.len() {
            let core = &self.instances[*next];
            *next += 1;
            return self.eval_quant(0, core, a);
        }
        let (op, arity) = self.shape[level];
        let mut acc = op == LatticeOp::And;
        for _ in 0..arity {
            let v = self.eval_shape(level + 1, next, a);
            acc = match op {
                LatticeOp::And => acc && v,
                LatticeOp::Or => acc || v,
            };
        }
        acc
    }

    fn eval_quant(&self, k: usize, core: &CNode, a: &mut Vec<u64>) -> bool {
        if k == self.quantifiers.len() {
            return core.eval(a);
        }
        let (q, arity) = self.quantifiers[k];
        let slot = self.nfree + k;
        let top = full_mask(arity);
        for z in 1..=top {
            a[slot] = z;
            let v = self.eval_quant(k + 1, core, a);
            match q {
                Quantifier::Exists if v => return true,
                Quantifier::Forall if !v => return false,
                _ => {}
            }
        }
        q == Quantifier::Forall
    }

    pub fn realize(&self) -> Result<PatternSet, CoordError> {
        let members = self.space.all_patterns()?.into_iter().filter(|p| self.contains(p)).collect();
        Ok(PatternSet { space: self.space.clone(), members })
    }
}

/// Realization of a fragment shaped formula as a pattern set over its free units.
pub fn realize(f: &ShapedFormula) -> Result<PatternSet, CoordError> {
    ShapedEvaluator::new(f)?.realize()
}

/// Realization of a quantifier-free fragment formula over the given blocks.
pub fn patterns_of(blocks: &[Block], f: &Qf) -> Result<PatternSet, CoordError> {
    realize(&ShapedFormula::quantifier_free(blocks.to_vec(), f.clone()))
}

/// Exhaustive truth value of a sentence (no free units).
pub fn decide_sentence_bruteforce(f: &ShapedFormula) -> Result<bool, CoordError> {
    let ev = ShapedEvaluator::new(f)?;
    if !ev.space.is_empty() {
        return Err(CoordError::FreeBlocksRemain(ev.space.units.iter().map(|u| u.name.clone()).collect()));
    }
    Ok(ev.contains(&[]))
}

/// Eliminates unit `unit` of `a` with the given quantifier.
pub fn eliminate(q: Quantifier, unit: usize, a: &PatternSet) -> Result<PatternSet, CoordError> {
    if unit >= a.space.len() {
        return Err(CoordError::UnitOutOfRange(unit));
    }
    let mut units = a.space.units.clone();
    let removed = units.remove(unit);
    let space = PatternSpace { units };
    let members = match q {
        Quantifier::Exists => a
            .members
            .iter()
            .map(|p| {
                let mut r = p.clone();
                r.remove(unit);
                r
            })
            .collect(),
        Quantifier::Forall => {
            let top = full_mask(removed.coords);
            space
                .all_patterns()?
                .into_iter()
                .filter(|r| {
                    (1..=top).all(|z| {
                        let mut p = r.clone();
                        p.insert(unit, z);
                        a.members.contains(&p)
                    })
                })
                .collect()
        }
    };
    Ok(PatternSet { space, members })
}

/// Canonical fragment formula realizing `a` over blocks named after its units.
/// Closed sets use their maximal supports; other sets list every pattern.
pub fn formula_of(a: &PatternSet) -> Result<(Vec<Block>, Qf), CoordError> {
    let blocks: Vec<Block> = a.space.units.iter().map(|u| Block::new(u.name.clone(), u.coords)).collect();
    let vanish_outside = |p: &Pattern| -> Vec<Qf> {
        let mut lits = Vec::new();
        for (u, &m) in p.iter().enumerate() {
            for c in 0..a.space.units[u].coords {
                if m >> c & 1 == 0 {
                    lits.push(Qf::var_eq0(VarRef::block(blocks[u].name.clone(), c)));
                }
            }
        }
        lits
    };
    if a.is_closed() {
        let kids = a.max_supports()?.iter().map(|p| Qf::And(vanish_outside(p))).collect();
        return Ok((blocks, Qf::Or(kids)));
    }
    let mut kids = Vec::new();
    for p in &a.members {
        let mut lits = vanish_outside(p);
        for (u, &m) in p.iter().enumerate() {
            for c in 0..a.space.units[u].coords {
                if m >> c & 1 == 1 {
                    lits.push(Qf::var_neq0(VarRef::block(blocks[u].name.clone(), c)));
                }
            }
        }
        kids.push(Qf::And(lits));
    }
    for b in &blocks {
        kids.push(Qf::And((0..b.arity).map(|c| Qf::var_eq0(VarRef::block(b.name.clone(), c))).collect()));
    }
    Ok((blocks, Qf::Or(kids)))
}

/// Local variables of a fragment core: `(name, coords, may_be_empty)` per
/// unit and the compiled core over them.
fn local_core(f: &ShapedFormula, limit: usize) -> Result<(Vec<(String, usize, bool)>, CNode), FormulaError> {
    // Local units: plain blocks, then each distinct member reference.
    let mut names: Vec<(String, usize, bool)> = Vec::new();
    let mut index: HashMap<(String, Option<Vec<usize>>), usize> = HashMap::new();
    for b in f.free_blocks.iter().chain(f.quantifiers.iter().map(|q| &q.block)) {
        index.insert((b.name.clone(), None), names.len());
        names.push((b.name.clone(), b.arity, false));
    }
    let mut refs: BTreeSet<(String, Option<Vec<usize>>)> = BTreeSet::new();
    for atom in f.core.atoms() {
        for v in atom.poly.vars() {
            if f.family(&v.owner).is_some() {
                refs.insert((v.owner.clone(), v.tuple.clone()));
            }
        }
    }
    for (fam, t) in refs {
        let family = f.family(&fam).expect("checked");
        let single = f.shape[family.depth].arity == 1;
        index.insert((fam.clone(), t.clone()), names.len());
        names.push((fam, family.member_arity, !single));
    }
    let total: usize = names.iter().map(|n| n.1).sum();
    if total > limit {
        return Err(FormulaError::Schema {
            path: "matrix".into(),
            msg: format!("{total} local coordinates exceed the exact check limit {limit}"),
        });
    }
    let resolve = |v: &VarRef| -> Result<(usize, u32), CoordError> {
        let key = if f.family(&v.owner).is_some() { (v.owner.clone(), v.tuple.clone()) } else { (v.owner.clone(), None) };
        Ok((index[&key], v.coord as u32))
    };
    let core = compile_qf(&f.core, &resolve).map_err(|e| match e {
        CoordError::NonCoordinateAtom(s) => FormulaError::NonCoordinateAtom(s),
        other => FormulaError::Schema { path: "matrix".into(), msg: other.to_string() },
    })?;
    Ok((names, core))
}

/// Exact zero-block check of a fragment core on its local variables.
///
/// Every plain block and every single-member group must force the core
/// true when all of its coordinates vanish, whatever the other local
/// variables are. Members of multi-member groups range over all supports,
/// including the empty one. Returns the first failing block.
pub fn check_zero_block_condition(f: &ShapedFormula) -> Result<Option<String>, FormulaError> {
    let (names, core) = local_core(f, 26)?;
    let testable: Vec<usize> = names
        .iter()
        .enumerate()
        .filter(|(_, (_, _, may_be_empty))| !may_be_empty)
        .map(|(i, _)| i)
        .collect();
    for &u in &testable {
        let mut a = vec![0u64; names.len()];
        if !for_all_assignments(&names, u, 0, &mut a, &core) {
            return Ok(Some(names[u].0.clone()));
        }
    }
    Ok(None)
}

/// Limit on local coordinates for [`core_topology`].
pub const CORE_TOPOLOGY_LIMIT: usize = 20;

/// Topology of the core's realization in its local variables, where
/// members of multi-member groups may vanish (the core then lives in the
/// affine cone of each such member).
pub fn core_topology(f: &ShapedFormula) -> Result<Topology, FormulaError> {
    let (names, core) = local_core(f, CORE_TOPOLOGY_LIMIT)?;
    let ranges: Vec<(u64, u64)> =
        names.iter().map(|(_, c, e)| (if *e { 0 } else { 1 }, full_mask(*c))).collect();
    let mut members: HashSet<Vec<u64>> = HashSet::new();
    let mut cur = vec![0u64; names.len()];
    fn rec(i: usize, ranges: &[(u64, u64)], cur: &mut Vec<u64>, core: &CNode, out: &mut HashSet<Vec<u64>>) {
        if i == ranges.len() {
            if core.eval(cur) {
                out.insert(cur.clone());
            }
            return;
        }
        for m in ranges[i].0..=ranges[i].1 {
            cur[i] = m;
            rec(i + 1, ranges, cur, core, out);
        }
    }
    rec(0, &ranges, &mut cur, &core, &mut members);
    let neighbours = |p: &Vec<u64>, grow: bool| -> Vec<Vec<u64>> {
        let mut out = Vec::new();
        for (u, &(lo, full)) in ranges.iter().enumerate() {
            for c in 0..64 {
                if full >> c & 1 == 0 {
                    continue;
                }
                let has = p[u] >> c & 1 == 1;
                if has == grow {
                    continue;
                }
                let m = p[u] ^ (1u64 << c);
                if m < lo {
                    continue;
                }
                let mut q = p.clone();
                q[u] = m;
                out.push(q);
            }
        }
        out
    };
    let closed = members.iter().all(|p| neighbours(p, false).iter().all(|q| members.contains(q)));
    let open = members.iter().all(|p| neighbours(p, true).iter().all(|q| members.contains(q)));
    Ok(match (closed, open) {
        (true, true) => Topology::Clopen,
        (true, false) => Topology::Closed,
        (false, true) => Topology::Open,
        (false, false) => Topology::Neither,
    })
}

fn for_all_assignments(names: &[(String, usize, bool)], skip: usize, i: usize, a: &mut Vec<u64>, core: &CNode) -> bool {
    if i == names.len() {
        return core.eval(a);
    }
    if i == skip {
        a[i] = 0;
        return for_all_assignments(names, skip, i + 1, a, core);
    }
    let (_, coords, may_be_empty) = &names[i];
    let start = if *may_be_empty { 0 } else { 1 };
    for m in start..=full_mask(*coords) {
        a[i] = m;
        if !for_all_assignments(names, skip, i + 1, a, core) {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

pub fn space_value(s: &PatternSpace) -> Value {
    Value::Array(s.units.iter().map(|u| json!({"name": u.name, "coords": u.coords})).collect())
}

pub fn pattern_value(p: &[u64]) -> Value {
    Value::Array(p.iter().map(|m| Value::String(format!("0x{m:x}"))).collect())
}

pub fn pattern_set_value(a: &PatternSet) -> Value {
    json!({
        "fmt": PATTERN_FMT,
        "space": space_value(&a.space),
        "patterns": a.members.iter().map(|p| pattern_value(p)).collect::<Vec<_>>(),
    })
}

pub fn pattern_set_to_json(a: &PatternSet) -> String {
    serde_json::to_string(&pattern_set_value(a)).expect("pattern set serializes")
}

fn doc_err(msg: impl Into<String>) -> CoordError {
    CoordError::Document(msg.into())
}

pub fn parse_hex_mask(s: &str) -> Result<u64, CoordError> {
    let digits = s.strip_prefix("0x").ok_or_else(|| doc_err(format!("mask {s:?} lacks 0x prefix")))?;
    if digits.is_empty() || digits.len() > 16 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(doc_err(format!("malformed mask {s:?}")));
    }
    u64::from_str_radix(digits, 16).map_err(|e| doc_err(e.to_string()))
}

pub fn space_from_value(v: &Value) -> Result<PatternSpace, CoordError> {
    let arr = v.as_array().ok_or_else(|| doc_err("space must be an array"))?;
    let mut units = Vec::new();
    for (i, u) in arr.iter().enumerate() {
        let o = u.as_object().ok_or_else(|| doc_err(format!("space[{i}] must be an object")))?;
        if o.keys().any(|k| k != "name" && k != "coords") {
            return Err(doc_err(format!("space[{i}] has unknown fields")));
        }
        let name = o.get("name").and_then(Value::as_str).ok_or_else(|| doc_err(format!("space[{i}].name")))?;
        let coords = o.get("coords").and_then(Value::as_u64).ok_or_else(|| doc_err(format!("space[{i}].coords")))?;
        units.push(UnitSpec { name: name.to_string(), coords: coords as usize });
    }
    PatternSpace::new(units)
}

pub fn pattern_from_value(v: &Value, space: &PatternSpace) -> Result<Pattern, CoordError> {
    let arr = v.as_array().ok_or_else(|| doc_err("pattern must be an array"))?;
    let p = arr
        .iter()
        .map(|m| m.as_str().ok_or_else(|| doc_err("mask must be a string")).and_then(parse_hex_mask))
        .collect::<Result<Vec<_>, _>>()?;
    if !space.contains_pattern(&p) {
        return Err(CoordError::InvalidPattern(format!("{p:x?}")));
    }
    Ok(p)
}

pub fn pattern_set_from_value(v: &Value) -> Result<PatternSet, CoordError> {
    let o = v.as_object().ok_or_else(|| doc_err("pattern set must be an object"))?;
    if o.keys().any(|k| !["fmt", "space", "patterns"].contains(&k.as_str())) {
        return Err(doc_err("unknown field in pattern set"));
    }
    if o.get("fmt").and_then(Value::as_u64) != Some(PATTERN_FMT) {
        return Err(doc_err("unsupported or missing fmt"));
    }
    let space = space_from_value(o.get("space").ok_or_else(|| doc_err("missing space"))?)?;
    let pats = o.get("patterns").and_then(Value::as_array).ok_or_else(|| doc_err("missing patterns"))?;
    let members = pats.iter().map(|p| pattern_from_value(p, &space)).collect::<Result<BTreeSet<_>, _>>()?;
    Ok(PatternSet { space, members })
}

pub fn parse_pattern_set(text: &str) -> Result<PatternSet, CoordError> {
    let v: Value = serde_json::from_str(text).map_err(|e| doc_err(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    pattern_set_from_value(&v)
}
