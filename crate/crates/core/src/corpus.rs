//! Differential test corpora for the compiler: an exhaustive grammar of
//! small coordinate formulas, seeded random larger ones, and the checker
//! that compares every compiled case against brute force.
//!
//! Exhaustive grammar, every combination of:
//! * free blocks: none, or `X` of arity 1 or 2;
//! * shape prefix: none, or one stage (AND or OR, arity 1 or 2) with a
//!   family `W` of member arity 1 or 2;
//! * quantifier prefix: up to two blocks `Y`, `Z`, each `∃` or `∀`, of
//!   arity 1 or 2;
//! * core: one of five templates over the blocks present, see
//!   [`core_templates`].
//!
//! Every core is a positive combination of `= 0` atoms, completed by its
//! zero disjuncts. Duplicate formulas are dropped.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::coordinate_model::{decide_sentence_bruteforce, realize};
use crate::formula_ir::{
    formula_from_value, formula_to_value, Block, BlockFamily, LatticeOp, QuantifiedBlock, Quantifier, Qf, ShapeStage,
    ShapedFormula, VarRef,
};
use crate::homology_oracle::{pseudo_any, OracleError};
use crate::reduction_compiler::{
    compile, decide_compiled, fiber_checks, measured_sizes, predicted_sizes, predicted_trace, reduction_from_value,
    reduction_to_value, FragmentOracle, PoincareOracle, ReductionError,
};

pub const CORPUS_FMT: u64 = 1;

/// File name of the bundled exhaustive corpus.
pub const EXHAUSTIVE_FILE: &str = "exhaustive.jsonl";

/// A case stores the formula before zero completion so that it can be
/// shrunk; [`CorpusCase::formula`] is what gets compiled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusCase {
    pub id: String,
    pub raw: ShapedFormula,
}

impl CorpusCase {
    pub fn formula(&self) -> ShapedFormula {
        self.raw.zero_completed()
    }
}

fn eq0(name: &str, c: usize) -> Qf {
    Qf::var_eq0(VarRef::block(name, c))
}

/// The five core templates over blocks `(name, arity)`, in order:
/// some first coordinate vanishes; every last coordinate vanishes; a
/// diagonal (coordinate `c` vanishes everywhere, for some `c`); head or
/// tail; and a two-clause cross between the first and last blocks.
pub fn core_templates(blocks: &[(String, usize)]) -> Vec<Qf> {
    if blocks.is_empty() {
        return Vec::new();
    }
    let last = |i: usize| blocks[i].1 - 1;
    let k = blocks.len();
    let (h, t) = (&blocks[0].0, &blocks[k - 1].0);
    let any_first = Qf::Or(blocks.iter().map(|(n, _)| eq0(n, 0)).collect());
    let all_last = Qf::And(blocks.iter().enumerate().map(|(i, (n, _))| eq0(n, last(i))).collect());
    let diagonal = Qf::Or(
        (0..2)
            .map(|c| Qf::And(blocks.iter().map(|(n, a)| eq0(n, c.min(a - 1))).collect()))
            .collect(),
    );
    let tail: Vec<Qf> = if k == 1 {
        vec![eq0(h, last(0))]
    } else {
        (1..k).map(|i| eq0(&blocks[i].0, last(i))).collect()
    };
    let head_or_tail = Qf::Or(vec![eq0(h, 0), Qf::And(tail)]);
    let cross = Qf::And(vec![Qf::Or(vec![eq0(h, 0), eq0(t, last(k - 1))]), Qf::Or(vec![eq0(h, last(0)), eq0(t, 0)])]);
    vec![any_first, all_last, diagonal, head_or_tail, cross]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Prefix {
    free: Option<usize>,
    shape: Option<(LatticeOp, usize, usize)>,
    quantifiers: &'static [(Quantifier, usize)],
}

fn prefix_formula(p: &Prefix, names: &[&str], core: Qf) -> ShapedFormula {
    let free_blocks = p.free.map(|a| vec![Block::new("X", a)]).unwrap_or_default();
    let mut f = ShapedFormula::quantifier_free(free_blocks, core);
    if let Some((op, arity, member)) = p.shape {
        f.shape = vec![ShapeStage { op, arity }];
        f.families = vec![BlockFamily { name: "W".into(), depth: 0, member_arity: member }];
    }
    f.quantifiers = p
        .quantifiers
        .iter()
        .zip(names)
        .map(|(&(q, a), n)| QuantifiedBlock { quantifier: q, block: Block::new(*n, a) })
        .collect();
    f
}

fn block_list(f: &ShapedFormula) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = f.free_blocks.iter().map(|b| (b.name.clone(), b.arity)).collect();
    out.extend(f.families.iter().map(|w| (w.name.clone(), w.member_arity)));
    out.extend(f.quantifiers.iter().map(|q| (q.block.name.clone(), q.block.arity)));
    out
}

fn quantifier_prefixes() -> Vec<&'static [(Quantifier, usize)]> {
    use Quantifier::{Exists as E, Forall as A};
    const ONE: [[(Quantifier, usize); 1]; 4] = [[(E, 1)], [(E, 2)], [(A, 1)], [(A, 2)]];
    const TWO: [[(Quantifier, usize); 2]; 16] = [
        [(E, 1), (E, 1)], [(E, 1), (E, 2)], [(E, 2), (E, 1)], [(E, 2), (E, 2)],
        [(E, 1), (A, 1)], [(E, 1), (A, 2)], [(E, 2), (A, 1)], [(E, 2), (A, 2)],
        [(A, 1), (E, 1)], [(A, 1), (E, 2)], [(A, 2), (E, 1)], [(A, 2), (E, 2)],
        [(A, 1), (A, 1)], [(A, 1), (A, 2)], [(A, 2), (A, 1)], [(A, 2), (A, 2)],
    ];
    let mut out: Vec<&'static [(Quantifier, usize)]> = vec![&[]];
    out.extend(ONE.iter().map(|q| q.as_slice()));
    out.extend(TWO.iter().map(|q| q.as_slice()));
    out
}

fn prefix_id(p: &Prefix) -> String {
    let free = p.free.map(|a| format!("X{a}")).unwrap_or_else(|| "-".into());
    let shape = p
        .shape
        .map(|(op, a, m)| format!("{}{a}W{m}", if op == LatticeOp::And { "and" } else { "or" }))
        .unwrap_or_else(|| "-".into());
    let qs: Vec<String> =
        p.quantifiers.iter().map(|&(q, a)| format!("{}{a}", if q == Quantifier::Exists { "E" } else { "A" })).collect();
    format!("{free}/{shape}/{}", if qs.is_empty() { "-".into() } else { qs.join("") })
}

/// The exhaustive corpus, in a fixed order.
pub fn exhaustive_corpus() -> Vec<CorpusCase> {
    let mut shapes = vec![None];
    for op in [LatticeOp::And, LatticeOp::Or] {
        for arity in [1, 2] {
            for member in [1, 2] {
                shapes.push(Some((op, arity, member)));
            }
        }
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for free in [None, Some(1), Some(2)] {
        for &shape in &shapes {
            for quantifiers in quantifier_prefixes() {
                let p = Prefix { free, shape, quantifiers };
                let skeleton = prefix_formula(&p, &["Y", "Z"], Qf::True);
                for (t, core) in core_templates(&block_list(&skeleton)).into_iter().enumerate() {
                    let mut raw = skeleton.clone();
                    raw.core = core;
                    if seen.insert(formula_to_value(&raw).to_string()) {
                        out.push(CorpusCase { id: format!("{}/t{t}", prefix_id(&p)), raw });
                    }
                }
            }
        }
    }
    out
}

/// Seeded random cases beyond the exhaustive bounds: blocks of arity up to
/// 3, up to two free blocks, shape arity up to 3, and random positive cores
/// of up to three terms of up to three atoms.
pub fn random_corpus(seed: u64, count: usize) -> Vec<CorpusCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut f = ShapedFormula::quantifier_free(Vec::new(), Qf::True);
            for n in ["X", "V"].iter().take(rng.gen_range(0..=2)) {
                f.free_blocks.push(Block::new(*n, rng.gen_range(1..=3)));
            }
            if rng.gen_bool(0.3) {
                let arity = rng.gen_range(1..=3);
                let member = if arity == 3 { 1 } else { rng.gen_range(1..=2) };
                let op = if rng.gen_bool(0.5) { LatticeOp::And } else { LatticeOp::Or };
                f.shape = vec![ShapeStage { op, arity }];
                f.families = vec![BlockFamily { name: "W".into(), depth: 0, member_arity: member }];
            }
            let omega = if rng.gen_bool(0.7) { 1 } else { 2 };
            for n in ["Y", "Z"].iter().take(omega) {
                let q = if rng.gen_bool(0.5) { Quantifier::Exists } else { Quantifier::Forall };
                let a = if omega == 2 { rng.gen_range(1..=2) } else { rng.gen_range(1..=3) };
                f.quantifiers.push(QuantifiedBlock { quantifier: q, block: Block::new(*n, a) });
            }
            let blocks = block_list(&f);
            let terms = (0..rng.gen_range(1..=3))
                .map(|_| {
                    Qf::And(
                        (0..rng.gen_range(1..=3))
                            .map(|_| {
                                let (n, a) = &blocks[rng.gen_range(0..blocks.len())];
                                eq0(n, rng.gen_range(0..*a))
                            })
                            .collect(),
                    )
                })
                .collect();
            f.core = Qf::Or(terms).simplify();
            CorpusCase { id: format!("random/{seed}/{i}"), raw: f }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Checking
// ---------------------------------------------------------------------------

/// Per-valuation cell budget for corpus runs. Rank computations near the
/// library default take minutes each.
pub const CORPUS_CELL_BUDGET: usize = 250_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    /// Cases whose `Θ` has more coordinates than this are not valued.
    pub theta_coords: usize,
    pub cell_budget: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { theta_coords: 20, cell_budget: CORPUS_CELL_BUDGET }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Verified,
    Mismatch(String),
    BudgetExceeded(String),
    Error(String),
}

impl Outcome {
    pub fn kind(&self) -> &'static str {
        match self {
            Outcome::Verified => "verified",
            Outcome::Mismatch(_) => "mismatch",
            Outcome::BudgetExceeded(_) => "budget_exceeded",
            Outcome::Error(_) => "error",
        }
    }

    pub fn detail(&self) -> Option<&str> {
        match self {
            Outcome::Verified => None,
            Outcome::Mismatch(s) | Outcome::BudgetExceeded(s) | Outcome::Error(s) => Some(s),
        }
    }

    /// Whether the case disproves something (as opposed to not being checked).
    pub fn is_failure(&self) -> bool {
        matches!(self, Outcome::Mismatch(_) | Outcome::Error(_))
    }
}

/// Per-case results. `bookkeeping` covers trace length, trace values and
/// predicted sizes; it is checked before any valuation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseReport {
    pub id: String,
    pub omega: usize,
    pub bookkeeping: bool,
    pub sentence: bool,
    pub verdict: Option<bool>,
    pub fibers: usize,
    pub outcome: Outcome,
}

fn classify(e: ReductionError) -> Outcome {
    match e {
        ReductionError::Oracle(OracleError::Budget { what, needed, budget }) => {
            Outcome::BudgetExceeded(format!("{what}: {needed} > {budget}"))
        }
        other => Outcome::Error(other.to_string()),
    }
}

fn theta_coords(f: &ShapedFormula) -> usize {
    f.free_units().iter().chain(f.group_units().iter()).map(|u| u.coords).sum()
}

/// Compiles one case and checks it against brute force.
pub fn check_case(case: &CorpusCase, limits: &Limits, oracle: Option<&dyn PoincareOracle>) -> CaseReport {
    let f = case.formula();
    let mut report = CaseReport {
        id: case.id.clone(),
        omega: f.omega(),
        bookkeeping: false,
        sentence: f.free_blocks.is_empty() && f.families.is_empty(),
        verdict: None,
        fibers: 0,
        outcome: Outcome::Verified,
    };
    let out = match compile(&f) {
        Ok(o) => o,
        Err(e) => {
            report.outcome = classify(e);
            return report;
        }
    };
    let trace: Vec<(usize, usize, usize)> = out.trace.iter().map(|s| (s.m, s.alpha, s.p)).collect();
    report.bookkeeping = out.trace.len() == f.omega()
        && trace == predicted_trace(&f)
        && measured_sizes(&out.theta) == predicted_sizes(&f, &out.trace);
    if !report.bookkeeping {
        report.outcome = Outcome::Mismatch("Θ sizes or trace differ from the closed form".into());
        return report;
    }
    match reduction_from_value(&reduction_to_value(&out)) {
        Ok(back) if back == out => {}
        _ => {
            report.outcome = Outcome::Mismatch("reduction output does not round-trip".into());
            return report;
        }
    }
    let coords = theta_coords(&out.theta);
    if coords > limits.theta_coords {
        report.outcome = Outcome::BudgetExceeded(format!("Θ has {coords} coordinates > {}", limits.theta_coords));
        return report;
    }
    let builtin = FragmentOracle { budget: limits.cell_budget };
    let oracle = oracle.unwrap_or(&builtin);
    if report.sentence {
        let brute = match decide_sentence_bruteforce(&f) {
            Ok(b) => b,
            Err(e) => {
                report.outcome = Outcome::Error(e.to_string());
                return report;
            }
        };
        let expected = match realize(&f).map_err(ReductionError::from).and_then(|s| Ok(pseudo_any(&s)?)) {
            Ok(q) => q,
            Err(e) => {
                report.outcome = classify(e);
                return report;
            }
        };
        match decide_compiled(out, oracle) {
            Ok(d) => {
                report.verdict = Some(d.verdict);
                report.fibers = 1;
                if d.verdict != brute || d.value != expected {
                    report.outcome =
                        Outcome::Mismatch(format!("verdict {} (F(Q_Θ) = {}), brute force {brute}", d.verdict, d.value));
                }
            }
            Err(e) => report.outcome = classify(e),
        }
        return report;
    }
    match fiber_checks(&f, &out, oracle) {
        Ok(checks) => {
            report.fibers = checks.len();
            if let Some(bad) = checks.iter().find(|c| !c.ok()) {
                report.outcome =
                    Outcome::Mismatch(format!("at x = {:?}: brute force {}, via Θ {}", bad.x, bad.brute, bad.via_theta));
            }
        }
        Err(e) => report.outcome = classify(e),
    }
    report
}

/// Subformulas obtained by dropping one child of a connective, or by
/// replacing a connective with one of its children.
fn shrink_candidates(f: &Qf) -> Vec<Qf> {
    let mut out = Vec::new();
    if let Qf::And(v) | Qf::Or(v) = f {
        let rebuild = |w: Vec<Qf>| if matches!(f, Qf::And(_)) { Qf::And(w) } else { Qf::Or(w) };
        for i in 0..v.len() {
            out.push(v[i].clone());
            if v.len() > 1 {
                let mut w = v.clone();
                w.remove(i);
                out.push(rebuild(w));
            }
            for c in shrink_candidates(&v[i]) {
                let mut w = v.clone();
                w[i] = c;
                out.push(rebuild(w));
            }
        }
    }
    out
}

/// Greedily shrinks the core of a failing case while it keeps failing.
pub fn minimize(case: &CorpusCase, limits: &Limits, oracle: Option<&dyn PoincareOracle>) -> CorpusCase {
    let mut best = case.clone();
    'outer: loop {
        for core in shrink_candidates(&best.raw.core) {
            let mut cand = best.clone();
            cand.raw.core = core;
            if check_case(&cand, limits, oracle).outcome.is_failure() {
                best = cand;
                continue 'outer;
            }
        }
        return best;
    }
}

/// Checks every case with at most `jobs` worker threads. The result is in
/// case order whatever the number of jobs.
pub fn check_all(cases: &[CorpusCase], limits: &Limits, jobs: usize) -> Vec<CaseReport> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().expect("thread pool");
    pool.install(|| cases.par_iter().map(|c| check_case(c, limits, None)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub cases: usize,
    pub verified: usize,
    pub mismatches: usize,
    pub budget_exceeded: usize,
    pub errors: usize,
}

impl Tally {
    pub fn of(reports: &[CaseReport]) -> Tally {
        let mut t = Tally { cases: reports.len(), ..Tally::default() };
        for r in reports {
            match r.outcome {
                Outcome::Verified => t.verified += 1,
                Outcome::Mismatch(_) => t.mismatches += 1,
                Outcome::BudgetExceeded(_) => t.budget_exceeded += 1,
                Outcome::Error(_) => t.errors += 1,
            }
        }
        t
    }

    pub fn failures(&self) -> usize {
        self.mismatches + self.errors
    }
}

pub fn case_value(c: &CorpusCase) -> Value {
    json!({"id": c.id, "formula": formula_to_value(&c.raw)})
}

pub fn case_from_value(v: &Value) -> Result<CorpusCase, String> {
    let id = v.get("id").and_then(Value::as_str).ok_or("case needs a string id")?;
    let raw = formula_from_value(v.get("formula").ok_or("case needs a formula")?).map_err(|e| e.to_string())?;
    Ok(CorpusCase { id: id.to_string(), raw })
}

/// One case per line.
pub fn write_jsonl(cases: &[CorpusCase]) -> String {
    cases.iter().map(|c| case_value(c).to_string() + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<CorpusCase>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Value = serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1))?;
            case_from_value(&v).map_err(|e| format!("line {}: {e}", i + 1))
        })
        .collect()
}
