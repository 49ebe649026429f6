//! Compilation of a shaped formula into a quantifier-free join formula `Θ`
//! and a polynomial map `F` with `Q_{R(f(x;·))} = F(Q_{R(Θ(x;·))})` for
//! every instantiation `x` of the free blocks.
//!
//! Each quantifier stage absorbs the leading quantified block into a new
//! family by a generalized fibered join with `p = 2m + 1`, where `m` is the
//! dimension of the current W-ambient `U`. A `∀` stage first negates the
//! core and flips every lattice operator and remaining quantifier. The map
//! of a stage is `Trunc_m ∘ M_{(1−T)^α}` after the inner map, followed by
//! `Q ↦ Q_U − Rec_m(·)` for `∀`.

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::coordinate_model::{core_topology, realize, CoordError, PatternSet, ShapedEvaluator, Topology};
use crate::formula_ir::{
    formula_from_value, formula_to_value, negate, validate_multihomogeneous, BlockValue, Closedness, FormulaError,
    Quantifier, Relation, ShapedFormula, ZeroBlockStatus,
};
use crate::homology_oracle::{
    pseudo_any, pseudo_truncated, ExternalOracle, OracleError, OracleInput, OracleRequest, Parity, Want,
    DEFAULT_CELL_BUDGET,
};
use crate::join_engine::{generalized_fibered_join, JoinError};
use crate::poincare_algebra::{projective_product_polys, AlgebraError, PolyMapPipeline, PolyT, Stage};

pub const REDUCTION_FMT: u64 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReductionError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Join(#[from] JoinError),
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error("zero-block condition fails for block {0}")]
    ZeroBlock(String),
    #[error("core realization is {0}, expected closed or open")]
    CoreTopology(String),
    #[error("not a sentence: {0}")]
    NotASentence(String),
    #[error("inconsistent oracle value: {0}")]
    Inconsistent(String),
    #[error("reduction document: {0}")]
    Document(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageCase {
    Exists,
    Forall,
}

impl StageCase {
    pub fn as_str(self) -> &'static str {
        match self {
            StageCase::Exists => "exists",
            StageCase::Forall => "forall",
        }
    }
}

/// One quantifier stage: `m = dim U`, `alpha` instances, join parameter `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StageParams {
    pub case: StageCase,
    pub m: usize,
    pub alpha: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionOutput {
    pub theta: ShapedFormula,
    pub pipeline: PolyMapPipeline,
    pub trace: Vec<StageParams>,
    /// Parity of `Θ`'s core: the input's, flipped at every `∀` stage.
    pub parity: Closedness,
}

impl ReductionOutput {
    /// Degree below which `Q_Θ` must be known: the last stage's `m`, or the
    /// whole of `U` when there is no stage.
    pub fn input_precision(&self) -> usize {
        self.pipeline.input_precision().unwrap_or_else(|| dim_u(&self.theta))
    }
}

/// Complex dimension of the W-ambient `U`: `Σ_j m_j ((a_j+1)(α_j+1) − 1)`.
pub fn dim_u(f: &ShapedFormula) -> usize {
    f.group_dims().iter().sum()
}

/// Parity of the input core: exact in the fragment when small enough,
/// otherwise the declared closedness.
pub fn input_parity(f: &ShapedFormula) -> Result<Closedness, ReductionError> {
    if !f.core.is_coordinate_fragment() {
        return Ok(f.closedness);
    }
    match core_topology(f) {
        Ok(Topology::Closed | Topology::Clopen) => Ok(Closedness::Closed),
        Ok(Topology::Open) => Ok(Closedness::Open),
        Ok(Topology::Neither) => Err(ReductionError::CoreTopology("neither closed nor open".into())),
        Err(FormulaError::Schema { .. }) => Ok(f.closedness),
        Err(e) => Err(e.into()),
    }
}

/// Validates `f` and compiles it.
pub fn compile(f: &ShapedFormula) -> Result<ReductionOutput, ReductionError> {
    let report = validate_multihomogeneous(f)?;
    if let ZeroBlockStatus::Fails(b) = report.zero_block {
        return Err(ReductionError::ZeroBlock(b));
    }
    let parity = input_parity(f)?;
    compile_unchecked(f, parity)
}

/// The recursion itself, with the input parity supplied.
pub fn compile_unchecked(f: &ShapedFormula, mut parity: Closedness) -> Result<ReductionOutput, ReductionError> {
    let mut cur = f.clone();
    let mut trace = Vec::new();
    let mut maps: Vec<Vec<Stage>> = Vec::new();
    while let Some(first) = cur.quantifiers.first() {
        let case = match first.quantifier {
            Quantifier::Exists => StageCase::Exists,
            Quantifier::Forall => StageCase::Forall,
        };
        let m = dim_u(&cur);
        let alpha = cur.instance_count();
        let p = 2 * m + 1;
        let q_u = projective_product_polys(&cur.group_dims()).1;
        let mut g = cur.clone();
        if case == StageCase::Forall {
            g.core = negate(&g.core, &g.zero_testable_units());
            for s in g.shape.iter_mut() {
                s.op = s.op.flip();
            }
            for q in g.quantifiers.iter_mut() {
                q.quantifier = q.quantifier.flip();
            }
            parity = parity.flip();
        }
        let mut stages = vec![Stage::MulBy { poly: PolyT::one_minus_t_pow(alpha) }, Stage::Trunc { m }];
        if case == StageCase::Forall {
            stages.push(Stage::Rec { n: m });
            stages.push(Stage::SubFrom { poly: q_u });
        }
        maps.push(stages);
        trace.push(StageParams { case, m, alpha, p });
        cur = generalized_fibered_join(&g, p)?;
    }
    cur.closedness = parity;
    let stages: Vec<Stage> = if maps.is_empty() {
        vec![Stage::Identity]
    } else {
        maps.into_iter().rev().flatten().collect()
    };
    Ok(ReductionOutput { theta: cur, pipeline: PolyMapPipeline::new(stages), trace, parity })
}

// ---------------------------------------------------------------------------
// Size bookkeeping
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaSizes {
    /// Free blocks plus W-groups.
    pub units: usize,
    pub coords: usize,
    pub core_atoms: usize,
    /// Atoms of the shape-expanded matrix.
    pub expanded_atoms: usize,
}

pub fn measured_sizes(theta: &ShapedFormula) -> ThetaSizes {
    let units = theta.free_units();
    let core_atoms = theta.core.atom_count();
    ThetaSizes {
        units: units.len(),
        coords: units.iter().map(|u| u.coords).sum(),
        core_atoms,
        expanded_atoms: core_atoms * theta.instance_count(),
    }
}

/// Sizes of `Θ` computed from `f` and the trace alone: stage `i` adds
/// `alpha_i` groups of `a_i (p_i + 1)` coordinates and multiplies the
/// instance count by `p_i + 1`; a `∀` stage adds one `= 0` atom per
/// coordinate of every zero-testable unit.
pub fn predicted_sizes(f: &ShapedFormula, trace: &[StageParams]) -> ThetaSizes {
    let base = f.free_units();
    let mut units = base.len();
    let mut coords: usize = base.iter().map(|u| u.coords).sum();
    let mut atoms = f.core.atom_count();
    let mut instances = f.instance_count();
    let free_coords: usize = f.free_blocks.iter().map(|b| b.arity).sum();
    let single_member: usize =
        f.families.iter().filter(|fam| f.shape[fam.depth].arity == 1).map(|fam| fam.member_arity).sum();
    for (i, st) in trace.iter().enumerate() {
        let remaining: usize = f.quantifiers[i..].iter().map(|q| q.block.arity).sum();
        if st.case == StageCase::Forall {
            atoms += free_coords + remaining + single_member;
        }
        let a = f.quantifiers[i].block.arity;
        units += st.alpha;
        coords += st.alpha * a * (st.p + 1);
        instances *= st.p + 1;
    }
    ThetaSizes { units, coords, core_atoms: atoms, expanded_atoms: atoms * instances }
}

/// Recomputes `m`, `alpha` and `p` of every stage from the growth rule alone.
pub fn predicted_trace(f: &ShapedFormula) -> Vec<(usize, usize, usize)> {
    let mut m = dim_u(f);
    let mut alpha = f.instance_count();
    let mut out = Vec::new();
    for q in &f.quantifiers {
        let p = 2 * m + 1;
        out.push((m, alpha, p));
        m += alpha * (q.block.arity * (p + 1) - 1);
        alpha *= p + 1;
    }
    out
}

// ---------------------------------------------------------------------------
// Oracles and decisions
// ---------------------------------------------------------------------------

/// Values `Q` of a quantifier-free formula without free blocks, modulo
/// `T^{precision+1}`.
pub trait PoincareOracle {
    fn pseudo(&self, theta: &ShapedFormula, parity: Closedness, precision: usize) -> Result<PolyT, ReductionError>;
}

/// A core whose atoms all assert vanishing is down-closed on patterns,
/// zero members included, hence closed.
pub fn certified_closed(f: &ShapedFormula) -> bool {
    f.core.atoms().iter().all(|a| a.rel == Relation::EqZero)
}

/// Built-in oracle for the coordinate fragment.
#[derive(Debug, Clone, Copy)]
pub struct FragmentOracle {
    pub budget: usize,
}

impl Default for FragmentOracle {
    fn default() -> Self {
        FragmentOracle { budget: DEFAULT_CELL_BUDGET }
    }
}

impl PoincareOracle for FragmentOracle {
    fn pseudo(&self, theta: &ShapedFormula, _parity: Closedness, precision: usize) -> Result<PolyT, ReductionError> {
        if !theta.core.is_coordinate_fragment() {
            return Err(CoordError::NonCoordinateAtom(theta.core.to_string()).into());
        }
        let ev = ShapedEvaluator::new(theta)?;
        // The parity does not fix the topology: joins of open sets are
        // neither open nor closed, and negating a joined core yields
        // `member ≠ 0` conjuncts. Only `= 0` cores are trusted as closed.
        let par = if certified_closed(theta) { Parity::Closed } else { Parity::Open };
        Ok(pseudo_truncated(&ev, par, precision, self.budget)?)
    }
}

impl PoincareOracle for ExternalOracle {
    fn pseudo(&self, theta: &ShapedFormula, _parity: Closedness, precision: usize) -> Result<PolyT, ReductionError> {
        let req = OracleRequest {
            input: OracleInput::Formula(formula_to_value(theta)),
            ambient: theta.group_dims(),
            want: vec![Want::Pseudo],
        };
        let resp = self.query(&req)?;
        let q = resp
            .pseudo
            .ok_or_else(|| ReductionError::Inconsistent("external oracle returned no pseudo polynomial".into()))?;
        if q.constant_term() < 0.into() {
            return Err(ReductionError::Inconsistent(format!("negative b_0 in {q}")));
        }
        Ok(q.trunc(precision))
    }
}

/// `F(Q_Θ)` at a fully instantiated `Θ`.
pub fn transported(out: &ReductionOutput, theta: &ShapedFormula, oracle: &dyn PoincareOracle) -> Result<PolyT, ReductionError> {
    let q = oracle.pseudo(theta, out.parity, out.input_precision())?;
    Ok(out.pipeline.eval(&q)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub verdict: bool,
    /// `F(Q_Θ)`, which is `1` or `0`.
    pub value: PolyT,
    pub output: ReductionOutput,
}

fn require_sentence(f: &ShapedFormula) -> Result<(), ReductionError> {
    if !f.free_blocks.is_empty() {
        let names: Vec<&str> = f.free_blocks.iter().map(|b| b.name.as_str()).collect();
        return Err(ReductionError::NotASentence(format!("free blocks {names:?}")));
    }
    if !f.families.is_empty() {
        return Err(ReductionError::NotASentence("families leave a nontrivial ambient".into()));
    }
    Ok(())
}

/// Decides a sentence with one oracle call: true iff `F(Q_Θ)(0) > 0`.
pub fn decide(f: &ShapedFormula, oracle: &dyn PoincareOracle) -> Result<Decision, ReductionError> {
    require_sentence(f)?;
    let output = compile(f)?;
    decide_compiled(output, oracle)
}

pub fn decide_compiled(output: ReductionOutput, oracle: &dyn PoincareOracle) -> Result<Decision, ReductionError> {
    let value = transported(&output, &output.theta, oracle)?;
    let c = value.constant_term();
    if !(value.degree().unwrap_or(0) == 0 && (c == 0.into() || c == 1.into())) {
        return Err(ReductionError::Inconsistent(format!("a sentence must map to 0 or 1, got {value}")));
    }
    Ok(Decision { verdict: c > 0.into(), value, output })
}

/// Membership of `x` (values for every free block) in `R(f)`.
pub fn membership(f: &ShapedFormula, x: &[(String, BlockValue)], oracle: &dyn PoincareOracle) -> Result<bool, ReductionError> {
    Ok(decide(&instantiate_all(f, x)?, oracle)?.verdict)
}

pub fn instantiate_all(f: &ShapedFormula, x: &[(String, BlockValue)]) -> Result<ShapedFormula, ReductionError> {
    let mut g = f.clone();
    for (name, v) in x {
        g = g.instantiate(name, v)?;
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    True,
    False,
    OracleRequired(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GdpResult {
    pub output: ReductionOutput,
    pub verdict: Verdict,
}

/// Compiles a sentence document and decides it when an oracle can value
/// `Θ`: the given oracle, else the built-in one inside the fragment.
pub fn gdp_solve(doc: &Value, oracle: Option<&dyn PoincareOracle>) -> Result<GdpResult, ReductionError> {
    let f = formula_from_value(doc)?;
    require_sentence(&f)?;
    let output = compile(&f)?;
    let builtin = FragmentOracle::default();
    let chosen: &dyn PoincareOracle = match oracle {
        Some(o) => o,
        None if output.theta.core.is_coordinate_fragment() => &builtin,
        None => {
            return Ok(GdpResult {
                output,
                verdict: Verdict::OracleRequired("polynomial atoms need an external oracle".into()),
            })
        }
    };
    let d = decide_compiled(output, chosen)?;
    let verdict = if d.verdict { Verdict::True } else { Verdict::False };
    Ok(GdpResult { output: d.output, verdict })
}

// ---------------------------------------------------------------------------
// Differential checks
// ---------------------------------------------------------------------------

/// Both sides of the transport identity at one instantiation of the free
/// blocks by support patterns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FiberCheck {
    pub x: Vec<(String, u64)>,
    pub brute: PolyT,
    pub via_theta: PolyT,
}

impl FiberCheck {
    pub fn ok(&self) -> bool {
        self.brute == self.via_theta
    }
}

/// Checks `Q_{R(f(x;·))} = F(Q_{R(Θ(x;·))})` at every pattern `x`.
pub fn fiber_checks(f: &ShapedFormula, out: &ReductionOutput, oracle: &dyn PoincareOracle) -> Result<Vec<FiberCheck>, ReductionError> {
    let mut xs: Vec<Vec<(String, u64)>> = vec![Vec::new()];
    for b in &f.free_blocks {
        let full = (1u64 << b.arity) - 1;
        xs = xs
            .into_iter()
            .flat_map(|x| (1..=full).map(move |m| {
                let mut y = x.clone();
                y.push((b.name.clone(), m));
                y
            }))
            .collect();
    }
    xs.into_iter()
        .map(|x| {
            let vals: Vec<(String, BlockValue)> = x.iter().map(|(n, m)| (n.clone(), BlockValue::Pattern(*m))).collect();
            let fx = instantiate_all(f, &vals)?;
            let brute = pseudo_any(&realize(&fx)?)?;
            let tx = instantiate_all(&out.theta, &vals)?;
            let via_theta = transported(out, &tx, oracle)?;
            Ok(FiberCheck { x, brute, via_theta })
        })
        .collect()
}

/// Realization of `f(x;·)` as a pattern set, for reports.
pub fn fiber_set(f: &ShapedFormula, x: &[(String, u64)]) -> Result<PatternSet, ReductionError> {
    let vals: Vec<(String, BlockValue)> = x.iter().map(|(n, m)| (n.clone(), BlockValue::Pattern(*m))).collect();
    Ok(realize(&instantiate_all(f, &vals)?)?)
}

// ---------------------------------------------------------------------------
// Documents
// ---------------------------------------------------------------------------

fn doc_err(msg: impl Into<String>) -> ReductionError {
    ReductionError::Document(msg.into())
}

pub fn stage_value(s: &StageParams) -> Value {
    json!({"case": s.case.as_str(), "m": s.m, "alpha": s.alpha, "p": s.p})
}

pub fn reduction_to_value(r: &ReductionOutput) -> Value {
    json!({
        "fmt": REDUCTION_FMT,
        "theta": formula_to_value(&r.theta),
        "pipeline": serde_json::to_value(&r.pipeline).expect("pipeline serializes"),
        "trace": r.trace.iter().map(stage_value).collect::<Vec<_>>(),
        "parity": r.parity.as_str(),
    })
}

pub fn reduction_to_json(r: &ReductionOutput) -> String {
    serde_json::to_string_pretty(&reduction_to_value(r)).expect("value serializes")
}

fn stage_from_value(v: &Value, i: usize) -> Result<StageParams, ReductionError> {
    let o = v.as_object().ok_or_else(|| doc_err(format!("trace[{i}] must be an object")))?;
    if o.keys().any(|k| !["case", "m", "alpha", "p"].contains(&k.as_str())) {
        return Err(doc_err(format!("trace[{i}]: unknown field")));
    }
    let num = |k: &str| -> Result<usize, ReductionError> {
        o.get(k)
            .and_then(Value::as_u64)
            .map(|x| x as usize)
            .ok_or_else(|| doc_err(format!("trace[{i}].{k} must be a non-negative integer")))
    };
    let case = match o.get("case").and_then(Value::as_str) {
        Some("exists") => StageCase::Exists,
        Some("forall") => StageCase::Forall,
        _ => return Err(doc_err(format!("trace[{i}].case must be \"exists\" or \"forall\""))),
    };
    let s = StageParams { case, m: num("m")?, alpha: num("alpha")?, p: num("p")? };
    if s.p != 2 * s.m + 1 || s.alpha == 0 {
        return Err(doc_err(format!("trace[{i}]: p must equal 2m+1 and alpha be positive")));
    }
    Ok(s)
}

pub fn reduction_from_value(v: &Value) -> Result<ReductionOutput, ReductionError> {
    let o: &Map<String, Value> = v.as_object().ok_or_else(|| doc_err("reduction output must be an object"))?;
    if o.keys().any(|k| !["fmt", "theta", "pipeline", "trace", "parity"].contains(&k.as_str())) {
        return Err(doc_err("unknown field"));
    }
    if let Some(f) = o.get("fmt") {
        if f.as_u64() != Some(REDUCTION_FMT) {
            return Err(doc_err(format!("unsupported fmt {f}")));
        }
    }
    let theta = formula_from_value(o.get("theta").ok_or_else(|| doc_err("missing theta"))?)?;
    if theta.omega() != 0 {
        return Err(doc_err("theta must be quantifier-free"));
    }
    let pipeline: PolyMapPipeline = serde_json::from_value(o.get("pipeline").ok_or_else(|| doc_err("missing pipeline"))?.clone())
        .map_err(|e| doc_err(format!("pipeline: {e}")))?;
    let trace = o
        .get("trace")
        .and_then(Value::as_array)
        .ok_or_else(|| doc_err("trace must be an array"))?
        .iter()
        .enumerate()
        .map(|(i, s)| stage_from_value(s, i))
        .collect::<Result<Vec<_>, _>>()?;
    let parity = match o.get("parity").and_then(Value::as_str) {
        Some("closed") => Closedness::Closed,
        Some("open") => Closedness::Open,
        Some("unverified") => Closedness::Unverified,
        _ => return Err(doc_err("parity must be closed, open or unverified")),
    };
    Ok(ReductionOutput { theta, pipeline, trace, parity })
}

pub fn parse_reduction(text: &str) -> Result<ReductionOutput, ReductionError> {
    let v: Value = serde_json::from_str(text).map_err(|e| doc_err(format!("line {} column {}: {e}", e.line(), e.column())))?;
    reduction_from_value(&v)
}
