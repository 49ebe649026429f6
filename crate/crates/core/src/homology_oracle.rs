//! Exact rational Betti numbers of torus-invariant subsets of products of
//! projective spaces, with independent engines.
//!
//! * Nerve engine (closed sets). Cover the set by its maximal coordinate
//!   multi-subspaces. The cover spectral sequence has rows indexed by
//!   multi-indices `j` (the class `∏ H_{2 j_u}`), and row `j` is the nerve
//!   of the sub-cover whose intersections still carry class `j`. So
//!   `b_n = Σ_j dim H_{n − 2|j|}(N_j)`.
//! * Orbit engine (any locally closed set, Borel–Moore homology). Chains
//!   are `⊕_S Λ^s(N_S)` over orbits `S`, where `N_S` is the cocharacter
//!   lattice of the orbit torus, placed in degree `dim S + s`. The
//!   differential is the cellular boundary of the product of simplices
//!   tensored with the quotient map that kills the collapsing circle. Rows
//!   `s` carry pure weights, so the spectral sequence degenerates at `E_2`.
//!   For closed sets Borel–Moore homology is ordinary homology; for open
//!   sets (smooth) Poincaré duality gives `b_i = dim BM_{2D−i}`.
//! * Poset engine (any union of orbits, ordinary homology). Chains are
//!   `Λ^q(N_top)` over chains of orbits in the orbit poset; see
//!   [`poset_betti`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::Duration;

use num_bigint::BigInt;
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::coordinate_model::{
    orbit_dimension, pattern_set_from_value, pattern_set_value, realize, CoordError, Pattern, PatternSet, PatternSpace,
    ShapedEvaluator,
};
use crate::formula_ir::formula_from_value;
use crate::linalg::{rank, rows_from_triples, SparseRow};
use crate::poincare_algebra::{duality_pseudo, parse_decimal, projective_product_polys, pseudo_from_poincare, PolyT};

/// Default cap on the number of chain-group generators (or nerve faces) per call.
pub const DEFAULT_CELL_BUDGET: usize = 4_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("set is not closed")]
    NotClosed,
    #[error("set is not open")]
    NotOpen,
    #[error("ambient mismatch: request says {expected:?}, patterns live in {found:?}")]
    AmbientMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("oracle budget exceeded: {what} needs {needed} cells, budget {budget}")]
    Budget { what: String, needed: u128, budget: usize },
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error("oracle document: {0}")]
    Document(String),
    #[error("external oracle: {0}")]
    External(String),
    #[error("external oracle timed out after {0:?}")]
    Timeout(Duration),
    #[error("cross-check failed: {0}")]
    CrossCheck(String),
}

/// Membership view of a torus-invariant set.
pub trait TorusSet: Sync {
    fn space(&self) -> &PatternSpace;
    fn contains(&self, p: &[u64]) -> bool;
}

impl TorusSet for PatternSet {
    fn space(&self) -> &PatternSpace {
        &self.space
    }
    fn contains(&self, p: &[u64]) -> bool {
        PatternSet::contains(self, p)
    }
}

impl TorusSet for ShapedEvaluator {
    fn space(&self) -> &PatternSpace {
        &self.space
    }
    fn contains(&self, p: &[u64]) -> bool {
        ShapedEvaluator::contains(self, p)
    }
}

/// Betti numbers `b_0..=b_through`. `through` is the ambient real
/// dimension when the table is complete.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BettiTable {
    pub b: Vec<u64>,
    pub through: usize,
}

impl BettiTable {
    pub fn poincare(&self) -> PolyT {
        PolyT::from_u64s(&self.b)
    }

    /// `Σ (b_{2j} − b_{2j−1}) T^j`, exact for `2j ≤ through`.
    pub fn pseudo(&self) -> PolyT {
        let full = pseudo_from_poincare(&self.poincare());
        full.trunc(self.through / 2)
    }

    pub fn euler(&self) -> i64 {
        self.b.iter().enumerate().map(|(i, &v)| if i % 2 == 0 { v as i64 } else { -(v as i64) }).sum()
    }

    /// Trailing zeros removed.
    pub fn trimmed(&self) -> Vec<u64> {
        let mut v = self.b.clone();
        while v.last() == Some(&0) {
            v.pop();
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Nerve,
    Orbit,
    Poset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Closed,
    Open,
}

fn binomial_table(n: usize) -> Vec<Vec<u128>> {
    let mut t = vec![vec![0u128; n + 1]; n + 1];
    for i in 0..=n {
        t[i][0] = 1;
        for j in 1..=i {
            t[i][j] = t[i - 1][j - 1].saturating_add(t[i - 1][j]);
        }
    }
    t
}

// ---------------------------------------------------------------------------
// Orbit engine
// ---------------------------------------------------------------------------

/// Orbits of a set grouped by dimension, with indices.
struct OrbitLevels {
    levels: BTreeMap<usize, Vec<Pattern>>,
    index: HashMap<Pattern, usize>,
}

impl OrbitLevels {
    fn new(orbits: impl IntoIterator<Item = Pattern>) -> Self {
        let mut levels: BTreeMap<usize, Vec<Pattern>> = BTreeMap::new();
        for p in orbits {
            levels.entry(orbit_dimension(&p)).or_default().push(p);
        }
        let mut index = HashMap::new();
        for v in levels.values_mut() {
            v.sort();
            for (i, p) in v.iter().enumerate() {
                index.insert(p.clone(), i);
            }
        }
        OrbitLevels { levels, index }
    }

    fn level(&self, d: usize) -> &[Pattern] {
        self.levels.get(&d).map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Basis of `N_S`: the non-minimal coordinates of every unit, as `(unit, coord)`.
fn lattice_basis(p: &[u64]) -> Vec<(usize, u32)> {
    let mut out = Vec::new();
    for (u, &m) in p.iter().enumerate() {
        let min = m.trailing_zeros();
        for c in 0..64 {
            if c != min && m >> c & 1 == 1 {
                out.push((u, c));
            }
        }
    }
    out
}

/// Colex rank of a sorted combination.
fn comb_rank(pos: &[usize], binom: &[Vec<u128>]) -> u128 {
    pos.iter().enumerate().map(|(i, &p)| binom[p][i + 1]).sum()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

/// Boundary of the cell `(S, B)` as `(orbit index in level d−1, combination, coefficient)`.
fn cell_boundary(
    s_pat: &[u64],
    basis: &[(usize, u32)],
    comb: &[usize],
    levels: &OrbitLevels,
    out: &mut Vec<(usize, Vec<usize>, i64)>,
) {
    let chosen: Vec<(usize, u32)> = comb.iter().map(|&i| basis[i]).collect();
    let mut offset = 0usize;
    for (g, &m) in s_pat.iter().enumerate() {
        let size = m.count_ones() as usize;
        if size >= 2 {
            let coords: Vec<u32> = (0..64).filter(|c| m >> c & 1 == 1).collect();
            for (k, &a) in coords.iter().enumerate() {
                let mut t = s_pat.to_vec();
                t[g] = m & !(1u64 << a);
                let Some(&ti) = levels.index.get(&t) else { continue };
                let cell_sign: i64 = if (offset + k) % 2 == 0 { 1 } else { -1 };
                let t_basis = lattice_basis(&t);
                let pos_of = |e: (usize, u32)| t_basis.binary_search(&e).expect("basis element survives");
                if k > 0 {
                    // `a` is not the minimum: its circle collapses.
                    if chosen.contains(&(g, a)) {
                        continue;
                    }
                    let mut pos: Vec<usize> = chosen.iter().map(|&e| pos_of(e)).collect();
                    pos.sort_unstable();
                    out.push((ti, pos, cell_sign));
                } else {
                    // The minimum is removed; the next coordinate becomes the minimum
                    // and e_{a1} = −Σ of the other basis vectors of the unit.
                    let a1 = coords[1];
                    if !chosen.contains(&(g, a1)) {
                        let mut pos: Vec<usize> = chosen.iter().map(|&e| pos_of(e)).collect();
                        pos.sort_unstable();
                        out.push((ti, pos, cell_sign));
                        continue;
                    }
                    for &c in &coords[2..] {
                        if chosen.contains(&(g, c)) {
                            continue;
                        }
                        let between = chosen.iter().filter(|&&(u, x)| u == g && x > a1 && x < c).count();
                        let sgn: i64 = if between % 2 == 0 { -1 } else { 1 };
                        let mut pos: Vec<usize> =
                            chosen.iter().map(|&e| if e == (g, a1) { pos_of((g, c)) } else { pos_of(e) }).collect();
                        pos.sort_unstable();
                        out.push((ti, pos, cell_sign * sgn));
                    }
                }
            }
        }
        offset += size - 1;
    }
}

/// `dim H_d` of row `s` for all `d` in `ds`, using orbits present in `levels`.
fn row_homology(levels: &OrbitLevels, s: usize, ds: &[usize], binom: &[Vec<u128>]) -> BTreeMap<usize, u64> {
    let mut rank_cache: HashMap<usize, usize> = HashMap::new();
    let cells = |d: usize| -> u128 { levels.level(d).len() as u128 * binom[d][s] };
    let mut boundary_rank = |d: usize| -> usize {
        if let Some(&r) = rank_cache.get(&d) {
            return r;
        }
        let r = if d == 0 || d < s || cells(d) == 0 || cells(d - 1) == 0 {
            0
        } else {
            let src = levels.level(d);
            let per_src = binom[d][s];
            let per_tgt = binom[d - 1][s];
            let combs = combinations(d, s);
            let rows: Vec<SparseRow> = src
                .par_iter()
                .flat_map_iter(|sp| {
                    let basis = lattice_basis(sp);
                    let mut local = Vec::with_capacity(combs.len());
                    let mut terms = Vec::new();
                    for comb in &combs {
                        terms.clear();
                        cell_boundary(sp, &basis, comb, levels, &mut terms);
                        let triples = terms
                            .iter()
                            .map(|(ti, pos, v)| (0usize, (*ti as u128 * per_tgt + comb_rank(pos, binom)) as u32, *v));
                        local.push(rows_from_triples(1, triples).pop().unwrap());
                    }
                    local
                })
                .collect();
            debug_assert_eq!(rows.len() as u128, src.len() as u128 * per_src);
            rank(&rows)
        };
        rank_cache.insert(d, r);
        r
    };
    let mut out = BTreeMap::new();
    for &d in ds {
        if d < s {
            out.insert(d, 0);
            continue;
        }
        let c = cells(d) as usize;
        let h = c - boundary_rank(d) - boundary_rank(d + 1);
        out.insert(d, h as u64);
    }
    out
}

/// Borel–Moore Betti numbers `BM_k` for `k` in `ks`, from a set of orbits that
/// contains every orbit of the set of dimension `d` with `d + s ∈ [k−1, k+1]`.
fn borel_moore(levels: &OrbitLevels, ks: &[usize], max_d: usize) -> BTreeMap<usize, u64> {
    let binom = binomial_table(max_d + 2);
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let rows: Vec<(usize, Vec<usize>)> = (0..=kmax.min(max_d))
        .map(|s| (s, ks.iter().filter(|&&k| k >= s && k - s <= max_d).map(|&k| k - s).collect::<Vec<_>>()))
        .filter(|(_, ds)| !ds.is_empty())
        .collect();
    let per_row: Vec<(usize, BTreeMap<usize, u64>)> =
        rows.par_iter().map(|(s, ds)| (*s, row_homology(levels, *s, ds, &binom))).collect();
    let mut out: BTreeMap<usize, u64> = ks.iter().map(|&k| (k, 0)).collect();
    for (s, hs) in per_row {
        for (d, h) in hs {
            *out.get_mut(&(d + s)).unwrap() += h;
        }
    }
    out
}

fn check_cells(levels: &OrbitLevels, max_d: usize, budget: usize, what: &str) -> Result<(), OracleError> {
    let binom = binomial_table(max_d + 2);
    let mut total: u128 = 0;
    for (&d, v) in &levels.levels {
        let widest = (0..=d).map(|s| binom[d][s]).max().unwrap_or(1);
        total = total.saturating_add(v.len() as u128 * widest);
    }
    if total > budget as u128 {
        return Err(OracleError::Budget { what: what.to_string(), needed: total, budget });
    }
    Ok(())
}

/// Orbits of a closed set with dimension at most `max_d`, grown from points.
pub fn closed_orbits_up_to(set: &dyn TorusSet, max_d: usize, budget: usize) -> Result<Vec<Pattern>, OracleError> {
    let space = set.space();
    let mut level: Vec<Pattern> = vec![Vec::new()];
    for u in &space.units {
        level = level.into_iter().flat_map(|p| (0..u.coords).map(move |c| {
            let mut q = p.clone();
            q.push(1u64 << c);
            q
        })).collect();
    }
    level.retain(|p| set.contains(p));
    let mut all = level.clone();
    for _ in 0..max_d {
        let mut next: HashSet<Pattern> = HashSet::new();
        for p in &level {
            for (u, unit) in space.units.iter().enumerate() {
                for c in 0..unit.coords {
                    if p[u] >> c & 1 == 0 {
                        let mut q = p.clone();
                        q[u] |= 1u64 << c;
                        next.insert(q);
                    }
                }
            }
        }
        let mut accepted: Vec<Pattern> = next.into_par_iter().filter(|q| set.contains(q)).collect();
        accepted.sort();
        if all.len() + accepted.len() > budget {
            return Err(OracleError::Budget { what: "orbit enumeration".into(), needed: (all.len() + accepted.len()) as u128, budget });
        }
        if accepted.is_empty() {
            break;
        }
        all.extend(accepted.iter().cloned());
        level = accepted;
    }
    Ok(all)
}

/// Orbits of an open set with codimension at most `max_codim`, shrunk from the torus.
pub fn open_orbits_down_to(set: &dyn TorusSet, max_codim: usize, budget: usize) -> Result<Vec<Pattern>, OracleError> {
    let space = set.space();
    let full = space.full_pattern();
    if !set.contains(&full) {
        return Ok(Vec::new());
    }
    let mut level = vec![full];
    let mut all = level.clone();
    for _ in 0..max_codim {
        let mut next: HashSet<Pattern> = HashSet::new();
        for p in &level {
            for (u, &m) in p.iter().enumerate() {
                if m.count_ones() < 2 {
                    continue;
                }
                for c in 0..64 {
                    if m >> c & 1 == 1 {
                        let mut q = p.clone();
                        q[u] = m & !(1u64 << c);
                        next.insert(q);
                    }
                }
            }
        }
        let mut accepted: Vec<Pattern> = next.into_par_iter().filter(|q| set.contains(q)).collect();
        accepted.sort();
        if all.len() + accepted.len() > budget {
            return Err(OracleError::Budget { what: "orbit enumeration".into(), needed: (all.len() + accepted.len()) as u128, budget });
        }
        if accepted.is_empty() {
            break;
        }
        all.extend(accepted.iter().cloned());
        level = accepted;
    }
    Ok(all)
}

/// Betti numbers `b_0..=through` of a closed set by the orbit engine.
pub fn orbit_betti_closed(set: &dyn TorusSet, through: Option<usize>, budget: usize) -> Result<BettiTable, OracleError> {
    let top = 2 * set.space().dimension();
    let n = through.unwrap_or(top).min(top);
    let orbits = closed_orbits_up_to(set, n + 1, budget)?;
    let levels = OrbitLevels::new(orbits);
    check_cells(&levels, n + 1, budget, "orbit chains")?;
    let ks: Vec<usize> = (0..=n).collect();
    let bm = borel_moore(&levels, &ks, n + 1);
    Ok(BettiTable { b: ks.iter().map(|k| bm[k]).collect(), through: n })
}

/// Betti numbers `b_0..=through` of an open set by Poincaré duality from
/// its Borel–Moore homology.
pub fn orbit_betti_open(set: &dyn TorusSet, through: Option<usize>, budget: usize) -> Result<BettiTable, OracleError> {
    let dim = set.space().dimension();
    let n = through.unwrap_or(2 * dim).min(2 * dim);
    // BM_k with k ≥ 2D − n needs orbits with d ≥ (2D − n)/2 − 1.
    let min_d = (2 * dim - n) / 2;
    let max_codim = dim - min_d.saturating_sub(1);
    let orbits = open_orbits_down_to(set, max_codim, budget)?;
    let levels = OrbitLevels::new(orbits);
    check_cells(&levels, dim, budget, "orbit chains")?;
    let ks: Vec<usize> = (2 * dim - n..=2 * dim).collect();
    let bm = borel_moore(&levels, &ks, dim);
    Ok(BettiTable { b: (0..=n).map(|i| bm[&(2 * dim - i)]).collect(), through: n })
}

/// Borel–Moore Betti numbers of an explicit locally closed set (all degrees).
pub fn borel_moore_betti(a: &PatternSet) -> Result<Vec<u64>, OracleError> {
    let dim = a.space.dimension();
    let levels = OrbitLevels::new(a.members.iter().cloned());
    check_cells(&levels, dim, DEFAULT_CELL_BUDGET, "orbit chains")?;
    let ks: Vec<usize> = (0..=2 * dim).collect();
    let bm = borel_moore(&levels, &ks, dim);
    Ok(ks.iter().map(|k| bm[k]).collect())
}

// ---------------------------------------------------------------------------
// Poset engine
// ---------------------------------------------------------------------------

/// Image of one basis vector of `N_S` in `N_T` for `T ⊂ S`, as `(position, coeff)`.
fn push_basis(e: (usize, u32), t: &[u64], t_basis: &[(usize, u32)]) -> Vec<(usize, i64)> {
    let (u, c) = e;
    let m = t[u];
    if m >> c & 1 == 0 {
        return Vec::new();
    }
    let pos = |x: (usize, u32)| t_basis.binary_search(&x).expect("basis element of the target");
    if c != m.trailing_zeros() {
        return vec![(pos(e), 1)];
    }
    (0..64u32).filter(|&x| x != c && m >> x & 1 == 1).map(|x| (pos((u, x)), -1)).collect()
}

/// `Λ^q` of the lattice map `N_S → N_T` applied to a basis wedge, as sorted
/// combinations of target positions with coefficients.
fn push_wedge(chosen: &[(usize, u32)], t: &[u64], t_basis: &[(usize, u32)], out: &mut Vec<(Vec<usize>, i64)>) {
    let images: Vec<Vec<(usize, i64)>> = chosen.iter().map(|&e| push_basis(e, t, t_basis)).collect();
    if images.iter().any(|v| v.is_empty()) {
        return;
    }
    fn rec(images: &[Vec<(usize, i64)>], i: usize, cur: &mut Vec<usize>, coeff: i64, out: &mut Vec<(Vec<usize>, i64)>) {
        if i == images.len() {
            let mut sorted = cur.clone();
            // Sign of the sorting permutation by counting inversions.
            let mut inv = 0usize;
            for a in 0..cur.len() {
                for b in a + 1..cur.len() {
                    if cur[a] > cur[b] {
                        inv += 1;
                    }
                }
            }
            sorted.sort_unstable();
            out.push((sorted, if inv % 2 == 0 { coeff } else { -coeff }));
            return;
        }
        for &(p, v) in &images[i] {
            if cur.contains(&p) {
                continue;
            }
            cur.push(p);
            rec(images, i + 1, cur, coeff * v, out);
            cur.pop();
        }
    }
    rec(&images, 0, &mut Vec::new(), 1, out);
}

fn proper_subpatterns(p: &[u64]) -> Vec<Pattern> {
    let mut out: Vec<Pattern> = vec![Vec::new()];
    for &m in p {
        out = out.into_iter().flat_map(|q| crate::coordinate_model::submasks(m).into_iter().map(move |s| {
            let mut q2 = q.clone();
            q2.push(s);
            q2
        })).collect();
    }
    out.retain(|q| q.as_slice() != p);
    out
}

/// Betti numbers of an arbitrary union of torus orbits.
///
/// The set deformation retracts, compatibly with the moment map, onto the
/// torus bundle over the order complex of its orbit poset. Filtering by
/// skeleta gives `E^1 = ⊕_{chains σ} Λ^q N_{top σ}`; the power maps of the
/// torus act by `k^q` on row `q`, so all differentials past `d^1` vanish and
/// `b_n = Σ_q dim H_{n−q}` of row `q`.
pub fn poset_betti(orbits: &[Pattern], space: &PatternSpace, through: Option<usize>, budget: usize) -> Result<BettiTable, OracleError> {
    let top = 2 * space.dimension();
    let n = through.unwrap_or(top).min(top);
    let mut orbits: Vec<Pattern> = orbits.to_vec();
    orbits.sort_by_key(|p| (orbit_dimension(p), p.clone()));
    orbits.dedup();
    let index: HashMap<&Pattern, u32> = orbits.iter().enumerate().map(|(i, p)| (p, i as u32)).collect();
    let below: Vec<Vec<u32>> = orbits
        .par_iter()
        .map(|p| {
            let mut v: Vec<u32> = proper_subpatterns(p).iter().filter_map(|q| index.get(q).copied()).collect();
            v.sort_unstable();
            v
        })
        .collect();
    // Chains of length p (p+1 elements, increasing), for p ≤ n + 1.
    let mut chains: Vec<Vec<Vec<u32>>> = vec![(0..orbits.len() as u32).map(|i| vec![i]).collect()];
    let mut total = chains[0].len();
    for _ in 0..=n {
        let prev = chains.last().unwrap();
        let next: Vec<Vec<u32>> = prev
            .iter()
            .flat_map(|c| below[c[0] as usize].iter().map(move |&b| {
                let mut d = Vec::with_capacity(c.len() + 1);
                d.push(b);
                d.extend_from_slice(c);
                d
            }))
            .collect();
        total += next.len();
        if total > budget {
            return Err(OracleError::Budget { what: "poset chains".into(), needed: total as u128, budget });
        }
        if next.is_empty() {
            break;
        }
        chains.push(next);
    }
    let chain_index: Vec<HashMap<&[u32], u32>> =
        chains.iter().map(|cs| cs.iter().enumerate().map(|(i, c)| (c.as_slice(), i as u32)).collect()).collect();
    let dims: Vec<usize> = orbits.iter().map(|p| orbit_dimension(p)).collect();
    let binom = binomial_table(space.dimension() + 2);
    let mut b = vec![0u64; n + 1];
    for q in 0..=n.min(space.dimension()) {
        // Generators in chain degree p: (chain, q-subset of the top's basis).
        let offsets: Vec<Vec<u64>> = chains
            .iter()
            .map(|cs| {
                let mut acc = 0u64;
                let mut v = Vec::with_capacity(cs.len() + 1);
                for c in cs {
                    v.push(acc);
                    acc += binom[dims[*c.last().unwrap() as usize]][q] as u64;
                }
                v.push(acc);
                v
            })
            .collect();
        let count = |p: usize| -> u64 { offsets.get(p).map(|v| *v.last().unwrap()).unwrap_or(0) };
        let boundary_rank = |p: usize| -> Result<usize, OracleError> {
            // ∂: degree p → p − 1 in row q.
            if p == 0 || p >= chains.len() || count(p) == 0 || count(p - 1) == 0 {
                return Ok(0);
            }
            if count(p) > u32::MAX as u64 || count(p - 1) > u32::MAX as u64 {
                return Err(OracleError::Budget { what: "poset chains".into(), needed: count(p) as u128, budget });
            }
            let rows: Vec<SparseRow> = chains[p]
                .par_iter()
                .flat_map_iter(|c| {
                    let top_pat = &orbits[*c.last().unwrap() as usize];
                    let basis = lattice_basis(top_pat);
                    let combs = combinations(basis.len(), q);
                    let mut rows = Vec::with_capacity(combs.len());
                    let mut pushed = Vec::new();
                    for comb in &combs {
                        let mut triples: Vec<(usize, u32, i64)> = Vec::new();
                        for i in 0..c.len() {
                            let mut face: Vec<u32> = c.clone();
                            face.remove(i);
                            let fi = chain_index[p - 1][face.as_slice()] as usize;
                            let base = offsets[p - 1][fi];
                            let sign: i64 = if i % 2 == 0 { 1 } else { -1 };
                            if i + 1 < c.len() {
                                triples.push((0, (base + comb_rank(comb, &binom) as u64) as u32, sign));
                            } else {
                                let t = &orbits[*face.last().unwrap() as usize];
                                let t_basis = lattice_basis(t);
                                let chosen: Vec<(usize, u32)> = comb.iter().map(|&k| basis[k]).collect();
                                pushed.clear();
                                push_wedge(&chosen, t, &t_basis, &mut pushed);
                                for (pos, v) in &pushed {
                                    triples.push((0, (base + comb_rank(pos, &binom) as u64) as u32, sign * v));
                                }
                            }
                        }
                        rows.push(rows_from_triples(1, triples).pop().unwrap());
                    }
                    rows
                })
                .collect();
            Ok(rank(&rows))
        };
        let ranks: Vec<usize> = (0..=n - q + 1).map(boundary_rank).collect::<Result<_, _>>()?;
        for p in 0..=n - q {
            let h = count(p) as usize - ranks[p] - ranks.get(p + 1).copied().unwrap_or(0);
            b[p + q] += h as u64;
        }
    }
    Ok(BettiTable { b, through: n })
}

/// Poset engine applied to the whole set, without retractions.
pub fn poset_betti_of(a: &PatternSet, through: Option<usize>, budget: usize) -> Result<BettiTable, OracleError> {
    let orbits: Vec<Pattern> = a.members.iter().cloned().collect();
    poset_betti(&orbits, &a.space, through, budget)
}

// ---------------------------------------------------------------------------
// Retractions
// ---------------------------------------------------------------------------

/// Subpattern lookups allowed per pruning pass.
const PRUNE_WORK_LIMIT: u128 = 1 << 25;

/// Pairwise comparisons allowed when testing whether a slice is open.
const SLICE_CHECK_LIMIT: usize = 50_000_000;

fn drop_unit(space: &PatternSpace, members: &[Pattern], u: usize) -> PatternSet {
    let mut units = space.units.clone();
    units.remove(u);
    let members = members
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.remove(u);
            q
        })
        .collect();
    PatternSet { space: PatternSpace { units }, members }
}

fn drop_coord(a: &PatternSet, u: usize, c: usize) -> PatternSet {
    let mut space = a.space.clone();
    space.units[u].coords -= 1;
    let low = (1u64 << c) - 1;
    let members = a
        .members
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q[u] = (p[u] & low) | ((p[u] >> 1) & !low);
            q
        })
        .collect();
    PatternSet { space, members }
}

fn is_subpattern(a: &[u64], b: &[u64], skip: usize) -> bool {
    a.iter().zip(b).enumerate().all(|(v, (x, y))| v == skip || x & !y == 0)
}

/// One retraction step: `None` when no move applies.
fn retract_step(a: &PatternSet) -> Option<Vec<PatternSet>> {
    for (u, unit) in a.space.units.iter().enumerate() {
        if unit.coords == 1 {
            let members: Vec<Pattern> = a.members.iter().cloned().collect();
            return Some(vec![drop_unit(&a.space, &members, u)]);
        }
        for c in 0..unit.coords {
            let bit = 1u64 << c;
            let (pinned, rest): (Vec<&Pattern>, Vec<&Pattern>) = a.members.iter().partition(|p| p[u] == bit);
            if !pinned.is_empty() {
                // The slice `unit u = e_c` is closed; split it off when it is also open.
                let above: Vec<&&Pattern> = rest.iter().filter(|p| p[u] & bit != 0).collect();
                if rest.is_empty() {
                    let members: Vec<Pattern> = pinned.into_iter().cloned().collect();
                    return Some(vec![drop_unit(&a.space, &members, u)]);
                }
                if pinned.len().saturating_mul(above.len()) > SLICE_CHECK_LIMIT {
                    continue;
                }
                let open = !above.iter().any(|t| pinned.iter().any(|s| is_subpattern(s, t, u)));
                if open {
                    let members: Vec<Pattern> = pinned.into_iter().cloned().collect();
                    let first = drop_unit(&a.space, &members, u);
                    let second = PatternSet { space: a.space.clone(), members: rest.into_iter().cloned().collect() };
                    return Some(vec![first, second]);
                }
                continue;
            }
            // Scaling coordinate `c` to zero retracts the set onto `x_c = 0`.
            let retracts = a.members.iter().all(|p| {
                if p[u] & bit == 0 {
                    return true;
                }
                let mut q = p.clone();
                q[u] &= !bit;
                a.members.contains(&q)
            });
            if retracts {
                let kept = PatternSet {
                    space: a.space.clone(),
                    members: a.members.iter().filter(|p| p[u] & bit == 0).cloned().collect(),
                };
                return Some(vec![drop_coord(&kept, u, c)]);
            }
        }
    }
    None
}

/// Whether the orbits of `members` strictly below `x` have a greatest or a
/// least element.
fn lower_set_has_cone_point(x: &[u64], members: &HashSet<Pattern>) -> bool {
    let mut join: Option<Pattern> = None;
    let mut meet: Option<Pattern> = None;
    for q in proper_subpatterns(x) {
        if !members.contains(&q) {
            continue;
        }
        match (&mut join, &mut meet) {
            (Some(j), Some(m)) => {
                for u in 0..q.len() {
                    j[u] |= q[u];
                    m[u] &= q[u];
                }
            }
            _ => {
                join = Some(q.clone());
                meet = Some(q);
            }
        }
    }
    let (Some(j), Some(m)) = (join, meet) else { return false };
    (j.as_slice() != x && members.contains(&j)) || (m.iter().all(|&v| v != 0) && members.contains(&m))
}

/// Removes orbits whose lower orbits in the set have a greatest or a least
/// element `y`. Toggling `y` is an acyclic matching on the chains through
/// such an orbit that never changes their top, so every row complex keeps
/// its homology.
pub fn prune_lower_cones(a: &PatternSet) -> PatternSet {
    let work: u128 = a.members.iter().map(|p| 1u128 << p.iter().map(|m| m.count_ones()).sum::<u32>()).sum();
    if work > PRUNE_WORK_LIMIT {
        return a.clone();
    }
    let mut members: HashSet<Pattern> = a.members.iter().cloned().collect();
    let mut order: Vec<Pattern> = a.members.iter().cloned().collect();
    order.sort_by_key(|p| (std::cmp::Reverse(orbit_dimension(p)), p.clone()));
    loop {
        let before = members.len();
        order.retain(|x| {
            if lower_set_has_cone_point(x, &members) {
                members.remove(x);
                false
            } else {
                true
            }
        });
        if members.len() == before {
            break;
        }
    }
    PatternSet { space: a.space.clone(), members: members.into_iter().collect() }
}

/// Disjoint pieces, each in a smaller ambient, whose homology adds up to
/// that of `a`. Every move is a deformation retraction (scaling one
/// coordinate to zero when no orbit could lose its last coordinate) or a
/// split along a slice `unit = e_c` that is both open and closed.
pub fn retract_pieces(a: &PatternSet) -> Vec<PatternSet> {
    let mut todo = vec![a.clone()];
    let mut done = Vec::new();
    while let Some(p) = todo.pop() {
        if p.members.is_empty() {
            continue;
        }
        if p.space.units.is_empty() {
            done.push(p);
            continue;
        }
        match retract_step(&p) {
            Some(next) => todo.extend(next),
            None => done.push(p),
        }
    }
    done
}

/// Betti numbers of any explicit set, closed, open or neither: retract,
/// then run the poset engine on each piece.
pub fn betti_any(a: &PatternSet, through: Option<usize>) -> Result<BettiTable, OracleError> {
    betti_any_with(a, through, DEFAULT_CELL_BUDGET)
}

pub fn betti_any_with(a: &PatternSet, through: Option<usize>, budget: usize) -> Result<BettiTable, OracleError> {
    let top = 2 * a.space.dimension();
    let n = through.unwrap_or(top).min(top);
    let mut b = vec![0u64; n + 1];
    for piece in retract_pieces(&prune_lower_cones(a)) {
        let piece = prune_lower_cones(&piece);
        if piece.space.units.is_empty() {
            b[0] += 1;
            continue;
        }
        let t = poset_betti_of(&piece, Some(n), budget)?;
        for (i, v) in t.b.iter().enumerate() {
            b[i] += v;
        }
    }
    Ok(BettiTable { b, through: n })
}

// ---------------------------------------------------------------------------
// Nerve engine
// ---------------------------------------------------------------------------

struct NerveFaces {
    /// Faces by size (1 = vertices), each with its intersection support sizes.
    by_size: Vec<Vec<(Vec<u32>, Vec<u32>)>>,
}

fn nerve_faces(maxes: &[Pattern], max_size: usize, budget: usize) -> Result<NerveFaces, OracleError> {
    let mut by_size: Vec<Vec<(Vec<u32>, Vec<u32>)>> = vec![Vec::new(); max_size + 1];
    let mut count = 0usize;
    fn rec(
        maxes: &[Pattern],
        start: usize,
        face: &mut Vec<u32>,
        inter: &[u64],
        max_size: usize,
        by_size: &mut Vec<Vec<(Vec<u32>, Vec<u32>)>>,
        count: &mut usize,
        budget: usize,
    ) -> Result<(), OracleError> {
        for v in start..maxes.len() {
            let next: Vec<u64> = if face.is_empty() {
                maxes[v].clone()
            } else {
                inter.iter().zip(&maxes[v]).map(|(a, b)| a & b).collect()
            };
            if next.iter().any(|&m| m == 0) {
                continue;
            }
            face.push(v as u32);
            *count += 1;
            if *count > budget {
                return Err(OracleError::Budget { what: "nerve faces".into(), needed: *count as u128, budget });
            }
            by_size[face.len()].push((face.clone(), next.iter().map(|m| m.count_ones()).collect()));
            if face.len() < max_size {
                rec(maxes, v + 1, face, &next, max_size, by_size, count, budget)?;
            }
            face.pop();
        }
        Ok(())
    }
    rec(maxes, 0, &mut Vec::new(), &[], max_size, &mut by_size, &mut count, budget)?;
    Ok(NerveFaces { by_size })
}

/// Simplicial homology dimensions `H_0..=H_top` of the complex given by its
/// faces per size (size `k+1` = dimension `k`). Faces of size `top + 2` must be present.
fn simplicial_homology(faces: &[Vec<&Vec<u32>>], top: usize) -> Vec<u64> {
    let index: Vec<HashMap<&Vec<u32>, u32>> =
        faces.iter().map(|fs| fs.iter().enumerate().map(|(i, f)| (*f, i as u32)).collect()).collect();
    let boundary_rank = |k: usize| -> usize {
        // ∂_k: faces of size k+1 → size k.
        if k == 0 || k + 1 >= faces.len() || faces[k + 1].is_empty() || faces[k].is_empty() {
            return 0;
        }
        let rows: Vec<SparseRow> = faces[k + 1]
            .par_iter()
            .map(|f| {
                let triples = (0..f.len()).map(|i| {
                    let mut g: Vec<u32> = (*f).clone();
                    g.remove(i);
                    let col = index[k][&g];
                    (0usize, col, if i % 2 == 0 { 1i64 } else { -1 })
                });
                rows_from_triples(1, triples).pop().unwrap()
            })
            .collect();
        rank(&rows)
    };
    let ranks: Vec<usize> = (0..=top + 1).map(boundary_rank).collect();
    (0..=top)
        .map(|k| {
            let c = faces.get(k + 1).map(|v| v.len()).unwrap_or(0);
            (c - ranks[k] - ranks[k + 1]) as u64
        })
        .collect()
}

/// Betti numbers `b_0..=through` of a closed set from its maximal supports.
pub fn nerve_betti(space: &PatternSpace, maxes: &[Pattern], through: Option<usize>, budget: usize) -> Result<BettiTable, OracleError> {
    let top = 2 * space.dimension();
    let n = through.unwrap_or(top).min(top);
    if maxes.is_empty() {
        return Ok(BettiTable { b: vec![0; n + 1], through: n });
    }
    let faces = nerve_faces(maxes, n + 2, budget)?;
    let dims = space.dims();
    let mut b = vec![0u64; n + 1];
    // Multi-indices j with 2|j| ≤ n and j_u ≤ dim_u.
    let mut js: Vec<Vec<u32>> = vec![Vec::new()];
    for &d in &dims {
        js = js
            .into_iter()
            .flat_map(|j| (0..=d as u32).map(move |x| {
                let mut j2 = j.clone();
                j2.push(x);
                j2
            }))
            .filter(|j| 2 * j.iter().sum::<u32>() as usize <= n)
            .collect();
    }
    for j in js {
        let w = 2 * j.iter().sum::<u32>() as usize;
        let top_k = n - w;
        let sub: Vec<Vec<&Vec<u32>>> = faces
            .by_size
            .iter()
            .map(|fs| {
                fs.iter()
                    .filter(|(_, sizes)| sizes.iter().zip(&j).all(|(&c, &ju)| c > ju))
                    .map(|(f, _)| f)
                    .collect()
            })
            .collect();
        if sub.get(1).map(|v| v.is_empty()).unwrap_or(true) {
            continue;
        }
        let h = simplicial_homology(&sub[..sub.len().min(top_k + 3)], top_k);
        for (k, v) in h.into_iter().enumerate() {
            b[w + k] += v;
        }
    }
    Ok(BettiTable { b, through: n })
}

// ---------------------------------------------------------------------------
// Public operations on explicit sets
// ---------------------------------------------------------------------------

/// Full Betti table of a closed set (nerve engine).
pub fn betti_closed(a: &PatternSet) -> Result<BettiTable, OracleError> {
    betti_closed_with(a, Engine::Nerve, None)
}

pub fn betti_closed_with(a: &PatternSet, engine: Engine, through: Option<usize>) -> Result<BettiTable, OracleError> {
    if !a.is_closed() {
        return Err(OracleError::NotClosed);
    }
    match engine {
        Engine::Nerve => nerve_betti(&a.space, &a.max_supports()?, through, DEFAULT_CELL_BUDGET),
        Engine::Orbit => orbit_betti_closed(a, through, DEFAULT_CELL_BUDGET),
        Engine::Poset => poset_betti_of(a, through, DEFAULT_CELL_BUDGET),
    }
}

pub fn poincare_closed(a: &PatternSet) -> Result<PolyT, OracleError> {
    Ok(betti_closed(a)?.poincare())
}

pub fn pseudo_closed(a: &PatternSet) -> Result<PolyT, OracleError> {
    Ok(betti_closed(a)?.pseudo())
}

/// Pseudo-Poincaré polynomial of an open set, defined through duality from
/// the closed complement.
pub fn pseudo_open(a: &PatternSet) -> Result<PolyT, OracleError> {
    if !a.is_open() {
        return Err(OracleError::NotOpen);
    }
    let comp = a.complement()?;
    let q_comp = pseudo_closed(&comp)?;
    let dims = a.space.dims();
    duality_pseudo(&q_comp, &dims, a.space.dimension()).map_err(|e| OracleError::CrossCheck(e.to_string()))
}

/// Betti numbers of an open set computed independently (orbit engine).
pub fn betti_open(a: &PatternSet) -> Result<BettiTable, OracleError> {
    if !a.is_open() {
        return Err(OracleError::NotOpen);
    }
    orbit_betti_open(a, None, DEFAULT_CELL_BUDGET)
}

/// Full pseudo-Poincaré polynomial of any explicit set: nerve engine when
/// closed, duality when open, poset engine otherwise.
pub fn pseudo_any(a: &PatternSet) -> Result<PolyT, OracleError> {
    if a.is_closed() {
        pseudo_closed(a)
    } else if a.is_open() {
        pseudo_open(a)
    } else {
        Ok(betti_any(a, None)?.pseudo())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EulerCheck {
    pub computed: i64,
    pub expected: i64,
}

impl EulerCheck {
    pub fn ok(&self) -> bool {
        self.computed == self.expected
    }
}

/// Number of members whose every support is a single coordinate.
pub fn fixed_point_count(a: &PatternSet) -> i64 {
    a.members.iter().filter(|p| p.iter().all(|m| m.count_ones() == 1)).count() as i64
}

/// Compares `P(−1)` (open sets: the duality-derived `Q(1)` route) with the
/// number of torus-fixed points.
pub fn euler_check(a: &PatternSet) -> Result<EulerCheck, OracleError> {
    let expected = fixed_point_count(a);
    let computed = if a.is_closed() {
        betti_closed(a)?.euler()
    } else if a.is_open() {
        // χ = Q(−1)... for any set, Σ(−1)^i b_i = P(−1); via Q this is
        // Σ_j (b_2j − b_2j−1) = Q(1).
        let q = pseudo_open(a)?;
        i64::try_from(q.eval(&BigInt::from(1))).map_err(|_| OracleError::CrossCheck("euler overflow".into()))?
    } else {
        betti_any(a, None)?.euler()
    };
    Ok(EulerCheck { computed, expected })
}

/// Betti table of a single coordinate multi-subspace, by Künneth.
pub fn kunneth_table(support_sizes: &[usize]) -> BettiTable {
    let dims: Vec<usize> = support_sizes.iter().map(|s| s - 1).collect();
    let (p, _) = projective_product_polys(&dims);
    let top = 2 * dims.iter().sum::<usize>();
    let mut b: Vec<u64> = (0..=top).map(|i| u64::try_from(&p.coeff(i)).unwrap_or(0)).collect();
    b.resize(top + 1, 0);
    BettiTable { b, through: top }
}

// ---------------------------------------------------------------------------
// Link complex
// ---------------------------------------------------------------------------

/// Faces of the link complex with at most `max_vertices` vertices. Circle
/// `i` is the boundary of the triangle on `3i, 3i+1, 3i+2`.
fn link_faces(a: &PatternSet, max_vertices: usize, budget: usize) -> Result<Vec<Vec<Vec<u32>>>, OracleError> {
    let coords = a.space.units[0].coords;
    let circle: [&[u32]; 6] = [&[0], &[1], &[2], &[0, 1], &[1, 2], &[0, 2]];
    let mut by_size: Vec<Vec<Vec<u32>>> = vec![Vec::new(); max_vertices + 1];
    let mut count = 0usize;
    #[allow(clippy::too_many_arguments)]
    fn rec(
        a: &PatternSet,
        coords: usize,
        start: usize,
        support: u64,
        face: &mut Vec<u32>,
        circle: &[&[u32]; 6],
        max_vertices: usize,
        by_size: &mut Vec<Vec<Vec<u32>>>,
        count: &mut usize,
        budget: usize,
    ) -> Result<(), OracleError> {
        for i in start..coords {
            let s = support | 1u64 << i;
            if !a.contains(&[s]) {
                continue;
            }
            for piece in circle {
                if face.len() + piece.len() > max_vertices {
                    continue;
                }
                let len = face.len();
                face.extend(piece.iter().map(|v| 3 * i as u32 + v));
                *count += 1;
                if *count > budget {
                    return Err(OracleError::Budget { what: "link faces".into(), needed: *count as u128, budget });
                }
                by_size[face.len()].push(face.clone());
                rec(a, coords, i + 1, s, face, circle, max_vertices, by_size, count, budget)?;
                face.truncate(len);
            }
        }
        Ok(())
    }
    rec(a, coords, 0, 0, &mut Vec::new(), &circle, max_vertices, &mut by_size, &mut count, budget)?;
    for fs in by_size.iter_mut() {
        fs.sort();
    }
    Ok(by_size)
}

fn check_link_input(a: &PatternSet) -> Result<(), OracleError> {
    if a.space.len() != 1 {
        return Err(OracleError::AmbientMismatch { expected: vec![a.space.dimension()], found: a.space.dims() });
    }
    if !a.is_closed() {
        return Err(OracleError::NotClosed);
    }
    Ok(())
}

/// Full homology of the link of a closed single-block set. Asserts `χ = 0`
/// for nonempty sets.
pub fn link_betti(a: &PatternSet) -> Result<BettiTable, OracleError> {
    check_link_input(a)?;
    let coords = a.space.units[0].coords;
    let max_v = 2 * coords;
    let faces = link_faces(a, max_v, DEFAULT_CELL_BUDGET)?;
    let top = max_v - 1;
    let refs: Vec<Vec<&Vec<u32>>> = faces.iter().map(|fs| fs.iter().collect()).collect();
    let h = simplicial_homology(&refs, top);
    let table = BettiTable { b: h, through: top };
    let chi_faces: i64 = faces.iter().enumerate().skip(1).map(|(k, fs)| if k % 2 == 1 { fs.len() as i64 } else { -(fs.len() as i64) }).sum();
    if table.euler() != chi_faces {
        return Err(OracleError::CrossCheck(format!("link Euler characteristic {} vs face count {}", table.euler(), chi_faces)));
    }
    if !a.is_empty() && chi_faces != 0 {
        return Err(OracleError::CrossCheck(format!("link Euler characteristic {chi_faces} is not 0")));
    }
    Ok(table)
}

/// Reduced link homology `H̃_0..H̃_{below−1}` from the truncated skeleton.
pub fn link_reduced_betti_below(a: &PatternSet, below: usize) -> Result<Vec<u64>, OracleError> {
    check_link_input(a)?;
    if below == 0 {
        return Ok(Vec::new());
    }
    let faces = link_faces(a, below + 1, DEFAULT_CELL_BUDGET)?;
    let refs: Vec<Vec<&Vec<u32>>> = faces.iter().map(|fs| fs.iter().collect()).collect();
    let mut h = simplicial_homology(&refs, below - 1);
    if !a.is_empty() {
        h[0] -= 1;
    }
    Ok(h)
}

// ---------------------------------------------------------------------------
// Valuation of large implicit sets
// ---------------------------------------------------------------------------

/// `Q` of a torus-invariant set modulo `T^{q_degree+1}`. `Closed` asserts
/// that the set is known to be closed; it is then grown from its points.
/// Otherwise every orbit is enumerated and the set is valued by the engine
/// matching its actual topology.
pub fn pseudo_truncated(set: &dyn TorusSet, parity: Parity, q_degree: usize, budget: usize) -> Result<PolyT, OracleError> {
    let through = 2 * q_degree;
    let table = match parity {
        Parity::Closed => orbit_betti_closed(set, Some(through), budget)?,
        Parity::Open => {
            let space = set.space();
            let count = space.pattern_count();
            if count > budget as u128 {
                return Err(OracleError::Budget { what: "pattern enumeration".into(), needed: count, budget });
            }
            let members: Vec<Pattern> = space.all_patterns()?.into_par_iter().filter(|p| set.contains(p)).collect();
            let a = PatternSet::from_patterns(space.clone(), members)?;
            if a.is_closed() {
                orbit_betti_closed(&a, Some(through), budget)?
            } else if a.is_open() {
                orbit_betti_open(&a, Some(through), budget)?
            } else {
                betti_any_with(&a, Some(through), budget)?
            }
        }
    };
    Ok(table.pseudo().trunc(q_degree))
}

// ---------------------------------------------------------------------------
// Request / response documents and the subprocess protocol
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Want {
    Betti,
    Poincare,
    Pseudo,
}

impl Want {
    fn as_str(self) -> &'static str {
        match self {
            Want::Betti => "betti",
            Want::Poincare => "poincare",
            Want::Pseudo => "pseudo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleInput {
    Patterns(PatternSet),
    /// A formula document, for external backends handling general atoms.
    Formula(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRequest {
    pub input: OracleInput,
    pub ambient: Vec<usize>,
    pub want: Vec<Want>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleResponse {
    pub betti: Option<Vec<u64>>,
    pub poincare: Option<PolyT>,
    pub pseudo: Option<PolyT>,
    pub checks: BTreeMap<String, bool>,
    /// "nerve", "duality", "poset" or an external backend's tag.
    pub method: Option<String>,
}

fn doc(msg: impl Into<String>) -> OracleError {
    OracleError::Document(msg.into())
}

pub fn request_to_value(r: &OracleRequest) -> Value {
    let mut o = serde_json::Map::new();
    match &r.input {
        OracleInput::Patterns(p) => o.insert("patterns".into(), pattern_set_value(p)),
        OracleInput::Formula(f) => o.insert("formula".into(), f.clone()),
    };
    o.insert("ambient".into(), json!(r.ambient));
    o.insert("want".into(), json!(r.want.iter().map(|w| w.as_str()).collect::<Vec<_>>()));
    Value::Object(o)
}

pub fn request_from_value(v: &Value) -> Result<OracleRequest, OracleError> {
    let o = v.as_object().ok_or_else(|| doc("request must be an object"))?;
    if o.keys().any(|k| !["patterns", "formula", "ambient", "want"].contains(&k.as_str())) {
        return Err(doc("unknown request field"));
    }
    let input = match (o.get("patterns"), o.get("formula")) {
        (Some(p), None) => OracleInput::Patterns(pattern_set_from_value(p)?),
        (None, Some(f)) => OracleInput::Formula(f.clone()),
        _ => return Err(doc("exactly one of patterns, formula is required")),
    };
    let ambient = o
        .get("ambient")
        .and_then(Value::as_array)
        .ok_or_else(|| doc("ambient must be an array"))?
        .iter()
        .map(|d| d.as_u64().map(|x| x as usize).ok_or_else(|| doc("ambient entries are dimensions")))
        .collect::<Result<Vec<_>, _>>()?;
    let want = o
        .get("want")
        .and_then(Value::as_array)
        .ok_or_else(|| doc("want must be an array"))?
        .iter()
        .map(|w| match w.as_str() {
            Some("betti") => Ok(Want::Betti),
            Some("poincare") => Ok(Want::Poincare),
            Some("pseudo") => Ok(Want::Pseudo),
            _ => Err(doc(format!("unknown want {w}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(OracleRequest { input, ambient, want })
}

pub fn parse_request(text: &str) -> Result<OracleRequest, OracleError> {
    let v: Value = serde_json::from_str(text).map_err(|e| doc(e.to_string()))?;
    request_from_value(&v)
}

/// Coefficients as JSON numbers, or decimal strings beyond `i64`.
pub fn poly_value(p: &PolyT) -> Value {
    Value::Array(
        p.coeffs()
            .iter()
            .map(|c| match i64::try_from(c) {
                Ok(n) => json!(n),
                Err(_) => json!(c.to_string()),
            })
            .collect(),
    )
}

/// Inverse of [`poly_value`]; accepts numbers and decimal strings.
pub fn poly_from_value(v: &Value) -> Result<PolyT, String> {
    let arr = v.as_array().ok_or("polynomial must be an array of coefficients")?;
    let coeffs = arr
        .iter()
        .map(|c| match c {
            Value::Number(n) => n.as_i64().map(BigInt::from).ok_or_else(|| format!("{n} is not an integer")),
            Value::String(s) => parse_decimal(s),
            other => Err(format!("{other} is not a coefficient")),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolyT::from_coeffs(coeffs))
}

pub fn response_to_value(r: &OracleResponse) -> Value {
    let mut o = serde_json::Map::new();
    if let Some(b) = &r.betti {
        o.insert("betti".into(), json!(b));
    }
    if let Some(p) = &r.poincare {
        o.insert("poincare".into(), poly_value(p));
    }
    if let Some(q) = &r.pseudo {
        o.insert("pseudo".into(), poly_value(q));
    }
    o.insert("checks".into(), json!(r.checks));
    if let Some(m) = &r.method {
        o.insert("method".into(), json!(m));
    }
    Value::Object(o)
}

pub fn response_from_value(v: &Value) -> Result<OracleResponse, OracleError> {
    let o = v.as_object().ok_or_else(|| doc("response must be an object"))?;
    if o.keys().any(|k| !["betti", "poincare", "pseudo", "checks", "method", "error"].contains(&k.as_str())) {
        return Err(doc("unknown response field"));
    }
    if let Some(e) = o.get("error") {
        return Err(OracleError::External(e.as_str().unwrap_or("unspecified error").to_string()));
    }
    let betti = match o.get("betti") {
        None => None,
        Some(b) => Some(
            b.as_array()
                .ok_or_else(|| doc("betti must be an array"))?
                .iter()
                .map(|x| x.as_u64().ok_or_else(|| doc("betti entries are non-negative integers")))
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    let poly = |key: &str| -> Result<Option<PolyT>, OracleError> {
        match o.get(key) {
            None => Ok(None),
            Some(p) => poly_from_value(p).map(Some).map_err(|e| doc(format!("{key}: {e}"))),
        }
    };
    let checks = match o.get("checks") {
        None => BTreeMap::new(),
        Some(c) => c
            .as_object()
            .ok_or_else(|| doc("checks must be an object"))?
            .iter()
            .map(|(k, v)| v.as_bool().map(|b| (k.clone(), b)).ok_or_else(|| doc("checks are booleans")))
            .collect::<Result<_, _>>()?,
    };
    let method = match o.get("method") {
        None => None,
        Some(m) => Some(m.as_str().ok_or_else(|| doc("method must be a string"))?.to_string()),
    };
    Ok(OracleResponse { betti, poincare: poly("poincare")?, pseudo: poly("pseudo")?, checks, method })
}

pub fn parse_response(text: &str) -> Result<OracleResponse, OracleError> {
    let v: Value = serde_json::from_str(text).map_err(|e| doc(e.to_string()))?;
    response_from_value(&v)
}

/// Answers a request with the built-in engines. Formula inputs are
/// realized first, so they must lie in the coordinate fragment. Closed sets use the nerve
/// engine, open sets the duality formula, other sets the poset engine.
/// Every answer carries the Euler check and, where the other engines apply
/// within budget, their agreement.
pub fn answer(req: &OracleRequest) -> Result<OracleResponse, OracleError> {
    let realized;
    let a = match &req.input {
        OracleInput::Patterns(a) => a,
        OracleInput::Formula(v) => {
            let f = formula_from_value(v).map_err(|e| doc(e.to_string()))?;
            realized = realize(&f)?;
            &realized
        }
    };
    if a.space.dims() != req.ambient {
        return Err(OracleError::AmbientMismatch { expected: req.ambient.clone(), found: a.space.dims() });
    }
    let mut checks = BTreeMap::new();
    let poset = betti_any(a, None);
    let (table, q, method) = if a.is_closed() {
        let t = betti_closed(a)?;
        let orbit = orbit_betti_closed(a, None, DEFAULT_CELL_BUDGET)?;
        checks.insert("orbit_engine".to_string(), orbit == t);
        if let Ok(p) = &poset {
            checks.insert("poset_engine".to_string(), *p == t);
        }
        let q = t.pseudo();
        (t, q, "nerve")
    } else if a.is_open() {
        let q = pseudo_open(a)?;
        let orbit = orbit_betti_open(a, None, DEFAULT_CELL_BUDGET)?;
        checks.insert("orbit_engine".to_string(), orbit.pseudo() == q);
        if let Ok(p) = &poset {
            checks.insert("poset_engine".to_string(), *p == orbit);
        }
        (orbit, q, "duality")
    } else {
        let t = poset?;
        let q = t.pseudo();
        (t, q, "poset")
    };
    let euler = euler_check(a)?;
    checks.insert("euler".to_string(), euler.ok());
    let wants: HashSet<Want> = req.want.iter().copied().collect();
    Ok(OracleResponse {
        betti: if wants.contains(&Want::Betti) { Some(table.trimmed()) } else { None },
        poincare: if wants.contains(&Want::Poincare) { Some(table.poincare()) } else { None },
        pseudo: if wants.contains(&Want::Pseudo) { Some(q) } else { None },
        checks,
        method: Some(method.to_string()),
    })
}

/// Handles one line of the line-delimited protocol; errors become `{"error": …}`.
pub fn answer_line(line: &str) -> String {
    let out = parse_request(line).and_then(|r| answer(&r)).map(|r| response_to_value(&r));
    match out {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e.to_string() }).to_string(),
    }
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
}

/// Client for an external oracle: one JSON request per line on stdin, one
/// response per line on stdout. The subprocess is kept alive across calls
/// and killed on timeout.
pub struct ExternalOracle {
    command: String,
    timeout: Duration,
    session: Mutex<Option<Session>>,
}

impl ExternalOracle {
    pub fn new(command: impl Into<String>, timeout: Duration) -> Self {
        ExternalOracle { command: command.into(), timeout, session: Mutex::new(None) }
    }

    fn spawn(&self) -> Result<Session, OracleError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleError::External(format!("cannot start {:?}: {e}", self.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Session { child, stdin, lines: rx })
    }

    pub fn query(&self, req: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let mut guard = self.session.lock().expect("oracle session lock");
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let session = guard.as_mut().unwrap();
        let line = request_to_value(req).to_string();
        let sent = writeln!(session.stdin, "{line}").and_then(|_| session.stdin.flush());
        if let Err(e) = sent {
            let _ = session.child.kill();
            *guard = None;
            return Err(OracleError::External(format!("write failed: {e}")));
        }
        match session.lines.recv_timeout(self.timeout) {
            Ok(Ok(text)) => parse_response(&text),
            Ok(Err(e)) => {
                *guard = None;
                Err(OracleError::External(format!("read failed: {e}")))
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {
                let _ = session.child.kill();
                *guard = None;
                Err(OracleError::Timeout(self.timeout))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                let _ = session.child.wait();
                *guard = None;
                Err(OracleError::External("oracle exited".into()))
            }
        }
    }
}

impl Drop for ExternalOracle {
    fn drop(&mut self) {
        if let Ok(mut g) = self.session.lock() {
            if let Some(mut s) = g.take() {
                let _ = s.child.kill();
                let _ = s.child.wait();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closure(dims: &[usize], gens: &[Pattern]) -> PatternSet {
        PatternSet::closure_of(PatternSpace::projective(dims), gens).unwrap()
    }

    fn both(a: &PatternSet) -> Vec<u64> {
        let n = betti_closed_with(a, Engine::Nerve, None).unwrap();
        let o = betti_closed_with(a, Engine::Orbit, None).unwrap();
        assert_eq!(n, o, "engines disagree on {:?}", a.members);
        let p = betti_closed_with(a, Engine::Poset, None).unwrap();
        assert_eq!(n, p, "poset engine disagrees on {:?}", a.members);
        n.trimmed()
    }

    #[test]
    fn triangle_of_lines() {
        let tri = closure(&[2], &[vec![0b011], vec![0b110], vec![0b101]]);
        assert_eq!(both(&tri), vec![1, 1, 3]);
        assert_eq!(poincare_closed(&tri).unwrap(), PolyT::from_i64s(&[1, 1, 3]));
        assert_eq!(pseudo_closed(&tri).unwrap(), PolyT::from_i64s(&[1, 2]));
        assert_eq!(euler_check(&tri).unwrap(), EulerCheck { computed: 3, expected: 3 });
    }

    #[test]
    fn four_cycle_of_lines() {
        let c = closure(&[3], &[vec![0b0101], vec![0b0110], vec![0b1001], vec![0b1010]]);
        assert_eq!(both(&c), vec![1, 1, 4]);
        assert!(euler_check(&c).unwrap().ok());
    }

    #[test]
    fn projective_spaces_and_products() {
        for a in 0..4 {
            let full = closure(&[a], &[vec![(1u64 << (a + 1)) - 1]]);
            let mut expected = vec![0u64; 2 * a + 1];
            for i in 0..=a {
                expected[2 * i] = 1;
            }
            assert_eq!(both(&full), expected);
        }
        let p1p1 = closure(&[1, 1], &[vec![0b11, 0b11]]);
        assert_eq!(both(&p1p1), vec![1, 0, 2, 0, 1]);
        assert_eq!(pseudo_closed(&p1p1).unwrap(), PolyT::from_i64s(&[1, 2, 1]));
        assert!(betti_closed(&PatternSet::empty(PatternSpace::projective(&[2]))).unwrap().trimmed().is_empty());
    }

    #[test]
    fn single_subspace_is_kunneth() {
        let a = closure(&[2, 3, 1], &[vec![0b011, 0b1101, 0b10]]);
        assert_eq!(betti_closed(&a).unwrap().trimmed(), kunneth_table(&[2, 3, 1]).trimmed());
    }

    #[test]
    fn open_sets() {
        let s = PatternSpace::projective(&[1]);
        let line = PatternSet::from_patterns(s.clone(), vec![vec![0b01], vec![0b11]]).unwrap();
        assert_eq!(pseudo_open(&line).unwrap(), PolyT::one());
        assert_eq!(betti_open(&line).unwrap().trimmed(), vec![1]);
        let torus = PatternSet::from_patterns(s.clone(), vec![vec![0b11]]).unwrap();
        assert_eq!(pseudo_open(&torus).unwrap(), PolyT::from_i64s(&[1, -1]));
        assert_eq!(betti_open(&torus).unwrap().trimmed(), vec![1, 1]);
        let full = PatternSet::full(s.clone()).unwrap();
        assert_eq!(pseudo_open(&full).unwrap(), PolyT::from_i64s(&[1, 1]));
        assert!(pseudo_open(&PatternSet::empty(s)).unwrap().is_zero());
    }

    #[test]
    fn sets_neither_open_nor_closed() {
        // (a ≠ 0 or a = b = 0) and (c ≠ 0 or c = d = 0) in P^3: scaling b, d
        // to zero retracts it onto the line b = d = 0.
        let s = PatternSpace::projective(&[3]);
        let members: Vec<Pattern> = [0u64, 0b01, 0b11]
            .iter()
            .flat_map(|&x| [0u64, 0b01, 0b11].into_iter().map(move |y| vec![x | y << 2]))
            .filter(|p| p[0] != 0)
            .collect();
        let a = PatternSet::from_patterns(s, members).unwrap();
        assert!(!a.is_closed() && !a.is_open());
        assert_eq!(betti_any(&a, None).unwrap().trimmed(), vec![1, 0, 1]);
        assert!(euler_check(&a).unwrap().ok());
        // The torus plus one fixed point is star-shaped around that point.
        let t = PatternSet::from_patterns(PatternSpace::projective(&[2]), vec![vec![0b111], vec![0b001]]).unwrap();
        assert_eq!(betti_any(&t, None).unwrap().trimmed(), vec![1]);
        let resp = answer(&OracleRequest { input: OracleInput::Patterns(a), ambient: vec![3], want: vec![Want::Betti] }).unwrap();
        assert_eq!(resp.method.as_deref(), Some("poset"));
        assert_eq!(resp.betti, Some(vec![1, 0, 1]));
    }

    #[test]
    fn poset_engine_on_open_sets() {
        let s = PatternSpace::projective(&[1]);
        let torus = PatternSet::from_patterns(s.clone(), vec![vec![0b11]]).unwrap();
        assert_eq!(betti_any(&torus, None).unwrap().trimmed(), vec![1, 1]);
        let line = PatternSet::from_patterns(s, vec![vec![0b01], vec![0b11]]).unwrap();
        assert_eq!(betti_any(&line, None).unwrap().trimmed(), vec![1]);
        let t2 = PatternSet::from_patterns(PatternSpace::projective(&[2]), vec![vec![0b111]]).unwrap();
        assert_eq!(betti_any(&t2, None).unwrap().trimmed(), vec![1, 2, 1]);
    }

    #[test]
    fn link_examples() {
        let s = PatternSpace::projective(&[2]);
        let point = PatternSet::closure_of(s.clone(), &[vec![0b001]]).unwrap();
        assert_eq!(link_betti(&point).unwrap().trimmed(), vec![1, 1]);
        let two = PatternSet::closure_of(s.clone(), &[vec![0b001], vec![0b100]]).unwrap();
        assert_eq!(link_betti(&two).unwrap().trimmed(), vec![2, 2]);
        let line = PatternSet::closure_of(PatternSpace::projective(&[1]), &[vec![0b11]]).unwrap();
        assert_eq!(link_betti(&line).unwrap().trimmed(), vec![1, 0, 0, 1]);
        assert_eq!(link_reduced_betti_below(&line, 3).unwrap(), vec![0, 0, 0]);
    }

    #[test]
    fn truncation_agrees_with_full() {
        let c = closure(&[1, 2], &[vec![0b11, 0b001], vec![0b01, 0b111], vec![0b10, 0b110]]);
        let full = betti_closed(&c).unwrap();
        for n in 0..=full.through {
            let t = betti_closed_with(&c, Engine::Orbit, Some(n)).unwrap();
            assert_eq!(t.b[..], full.b[..=n]);
            let u = betti_closed_with(&c, Engine::Nerve, Some(n)).unwrap();
            assert_eq!(u.b[..], full.b[..=n]);
        }
    }

    #[test]
    fn documents_round_trip() {
        let tri = closure(&[2], &[vec![0b011], vec![0b110], vec![0b101]]);
        let req = OracleRequest { input: OracleInput::Patterns(tri), ambient: vec![2], want: vec![Want::Betti, Want::Pseudo] };
        let text = request_to_value(&req).to_string();
        assert_eq!(parse_request(&text).unwrap(), req);
        let resp = answer(&req).unwrap();
        assert_eq!(resp.betti, Some(vec![1, 1, 3]));
        assert_eq!(resp.pseudo, Some(PolyT::from_i64s(&[1, 2])));
        assert!(resp.checks.values().all(|&b| b));
        let back = parse_response(&response_to_value(&resp).to_string()).unwrap();
        assert_eq!(back, resp);
        let bad = OracleRequest { ambient: vec![3], ..req };
        assert!(matches!(answer(&bad), Err(OracleError::AmbientMismatch { .. })));
    }

    #[test]
    fn coefficients_are_numbers_until_they_overflow() {
        let small = PolyT::from_i64s(&[1, -2, 3]);
        assert_eq!(poly_value(&small), json!([1, -2, 3]));
        let big = PolyT::from_coeffs(vec![BigInt::from(1) << 70u32, BigInt::from(-1)]);
        let v = poly_value(&big);
        assert_eq!(v, json!(["1180591620717411303424", -1]));
        assert_eq!(poly_from_value(&v).unwrap(), big);
        assert_eq!(poly_from_value(&json!(["1", 2])).unwrap(), PolyT::from_i64s(&[1, 2]));
        assert!(poly_from_value(&json!([1.5])).is_err());
        assert!(poly_from_value(&json!({"c": 1})).is_err());
    }
}
