use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use ptoda::coordinate_model::{pattern_set_from_value, pattern_set_value, realize, PatternSet, Topology};
use ptoda::corpus::{check_all, minimize, parse_jsonl, random_corpus, CorpusCase, Limits, Tally};
use ptoda::formula_ir::{formula_from_value, formula_to_value, validate_multihomogeneous, ZeroBlockStatus};
use ptoda::homology_oracle::{
    answer, answer_line, betti_any, betti_closed_with, euler_check, kunneth_table, link_betti, orbit_betti_open,
    poly_value, pseudo_open, request_from_value, BettiTable, Engine, OracleError, OracleInput, OracleRequest,
    OracleResponse, Want, DEFAULT_CELL_BUDGET,
};
use ptoda::homology_oracle::{poset_betti_of, response_to_value, ExternalOracle};
use ptoda::reduction_compiler::{compile, gdp_solve, reduction_to_value, stage_value, PoincareOracle, ReductionError, Verdict};
use serde_json::{json, Value};

pub const REPORT_FMT: u64 = 1;

/// A failed command: exit code and message.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const EXIT_FALSE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ORACLE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;

fn input(msg: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_INPUT, message: msg.to_string() }
}

fn oracle_failure(msg: impl std::fmt::Display) -> Failure {
    Failure { code: EXIT_ORACLE, message: msg.to_string() }
}

impl From<ReductionError> for Failure {
    fn from(e: ReductionError) -> Self {
        match e {
            ReductionError::Oracle(_) | ReductionError::Inconsistent(_) => oracle_failure(e),
            other => input(other),
        }
    }
}

impl From<OracleError> for Failure {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Coord(_) | OracleError::Document(_) | OracleError::AmbientMismatch { .. } => input(e),
            other => oracle_failure(other),
        }
    }
}

/// What a command prints, and its exit code.
pub struct Output {
    pub doc: Value,
    pub code: i32,
}

impl Output {
    fn ok(doc: Value) -> Self {
        Output { doc, code: 0 }
    }
}

pub fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| input(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))
}

enum Doc {
    Formula(Value),
    Patterns(PatternSet),
    Request(OracleRequest),
}

fn classify_doc(v: Value) -> Result<Doc, Failure> {
    let o = v.as_object().ok_or_else(|| input("$: document must be an object"))?;
    if o.contains_key("matrix") {
        Ok(Doc::Formula(v))
    } else if o.contains_key("want") {
        Ok(Doc::Request(request_from_value(&v)?))
    } else if o.contains_key("space") {
        Ok(Doc::Patterns(pattern_set_from_value(&v).map_err(input)?))
    } else {
        Err(input("$: not a formula, pattern-set or oracle-request document"))
    }
}

fn realized(v: &Value) -> Result<PatternSet, Failure> {
    let f = formula_from_value(v).map_err(input)?;
    realize(&f.zero_completed()).map_err(input)
}

fn pattern_input(path: &Path) -> Result<PatternSet, Failure> {
    match classify_doc(read_json(path)?)? {
        Doc::Formula(v) => realized(&v),
        Doc::Patterns(a) => Ok(a),
        Doc::Request(r) => match r.input {
            OracleInput::Patterns(a) => Ok(a),
            OracleInput::Formula(v) => realized(&v),
        },
    }
}

pub fn validate(path: &Path) -> Result<Output, Failure> {
    let f = formula_from_value(&read_json(path)?).map_err(input)?;
    let r = validate_multihomogeneous(&f).map_err(input)?;
    let zero_block = match &r.zero_block {
        ZeroBlockStatus::Exact => json!({"status": "exact"}),
        ZeroBlockStatus::SyntacticPass { undecided } => json!({"status": "syntactic_pass", "undecided": undecided}),
        ZeroBlockStatus::Fails(b) => json!({"status": "fails", "block": b}),
    };
    let doc = json!({
        "fmt": REPORT_FMT,
        "valid": r.passed(),
        "homogeneous": r.homogeneous,
        "zero_block": zero_block,
        "coordinate_fragment": r.coordinate_fragment,
        "omega": f.omega(),
        "free_blocks": f.free_blocks.len(),
    });
    Ok(Output { code: if r.passed() { 0 } else { EXIT_INPUT }, doc })
}

pub fn patterns(path: &Path) -> Result<Output, Failure> {
    Ok(Output::ok(pattern_set_value(&pattern_input(path)?)))
}

pub fn poincare(path: &Path) -> Result<Output, Failure> {
    let req = match classify_doc(read_json(path)?)? {
        Doc::Request(r) => r,
        Doc::Formula(v) => {
            let a = realized(&v)?;
            OracleRequest { ambient: a.space.dims(), input: OracleInput::Patterns(a), want: all_wants() }
        }
        Doc::Patterns(a) => OracleRequest { ambient: a.space.dims(), input: OracleInput::Patterns(a), want: all_wants() },
    };
    let resp: OracleResponse = answer(&req)?;
    Ok(Output::ok(response_to_value(&resp)))
}

fn all_wants() -> Vec<Want> {
    vec![Want::Betti, Want::Poincare, Want::Pseudo]
}

pub fn reduce(path: &Path) -> Result<Output, Failure> {
    let f = formula_from_value(&read_json(path)?).map_err(input)?;
    Ok(Output::ok(reduction_to_value(&compile(&f.zero_completed())?)))
}

pub fn external(command: Option<&str>, timeout: Duration) -> Option<ExternalOracle> {
    command.filter(|c| !c.trim().is_empty()).map(|c| ExternalOracle::new(c, timeout))
}

pub fn decide(path: &Path, oracle: Option<&ExternalOracle>, exit_verdict: bool) -> Result<Output, Failure> {
    let v = read_json(path)?;
    let f = formula_from_value(&v).map_err(input)?;
    let completed = formula_to_value(&f.zero_completed());
    let r = gdp_solve(&completed, oracle.map(|o| o as &dyn PoincareOracle))?;
    let trace: Vec<Value> = r.output.trace.iter().map(stage_value).collect();
    let (verdict, note) = match &r.verdict {
        Verdict::True => (json!(true), Value::Null),
        Verdict::False => (json!(false), Value::Null),
        Verdict::OracleRequired(why) => (Value::Null, json!(why)),
    };
    let mut doc = json!({
        "fmt": REPORT_FMT,
        "verdict": verdict,
        "trace": trace,
        "reduction": reduction_to_value(&r.output),
    });
    if !note.is_null() {
        doc["oracle_required"] = note;
    }
    let code = if exit_verdict && r.verdict == Verdict::False { EXIT_FALSE } else { 0 };
    Ok(Output { doc, code })
}

pub struct VerifyArgs {
    pub dir: PathBuf,
    pub seed: u64,
    pub count: usize,
    pub jobs: usize,
    pub theta_limit: usize,
}

pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusCase>, Failure> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut cases = Vec::new();
    for p in files {
        let text = fs::read_to_string(&p).map_err(|e| input(format!("{}: {e}", p.display())))?;
        cases.extend(parse_jsonl(&text).map_err(|e| input(format!("{}: {e}", p.display())))?);
    }
    Ok(cases)
}

pub fn verify(args: &VerifyArgs) -> Result<Output, Failure> {
    let mut cases = load_corpus(&args.dir)?;
    cases.extend(random_corpus(args.seed, args.count));
    let limits = Limits { theta_coords: args.theta_limit, ..Limits::default() };
    let reports = check_all(&cases, &limits, args.jobs);
    let tally = Tally::of(&reports);
    let failed: Vec<Value> = cases
        .iter()
        .zip(&reports)
        .filter(|(_, r)| r.outcome.is_failure())
        .map(|(c, r)| {
            let small = minimize(c, &limits, None);
            json!({
                "id": c.id,
                "outcome": r.outcome.kind(),
                "detail": r.outcome.detail(),
                "formula": formula_to_value(&c.raw),
                "minimized": formula_to_value(&small.raw),
            })
        })
        .collect();
    let doc = json!({
        "fmt": REPORT_FMT,
        "seed": args.seed,
        "random_count": args.count,
        "theta_limit": args.theta_limit,
        "cases": tally.cases,
        "verified": tally.verified,
        "budget_exceeded": tally.budget_exceeded,
        "mismatches": tally.mismatches,
        "errors": tally.errors,
        "failures": tally.failures(),
        "bookkeeping_ok": reports.iter().filter(|r| r.bookkeeping).count(),
        "failed": failed,
    });
    Ok(Output { code: if tally.failures() == 0 { 0 } else { EXIT_VERIFY }, doc })
}

fn table_value(t: &Result<BettiTable, OracleError>) -> Value {
    match t {
        Ok(t) => json!(t.trimmed()),
        Err(e) => json!({"skipped": e.to_string()}),
    }
}

pub fn crosscheck(path: &Path) -> Result<Output, Failure> {
    let a = pattern_input(path)?;
    let topology = a.classify_topology();
    let mut engines = serde_json::Map::new();
    let mut checks = serde_json::Map::new();
    let reference = betti_any(&a, None);
    engines.insert("reduced_poset".into(), table_value(&reference));
    engines.insert("poset".into(), table_value(&poset_betti_of(&a, None, DEFAULT_CELL_BUDGET)));
    if a.is_closed() {
        for (name, e) in [("nerve", Engine::Nerve), ("orbit", Engine::Orbit)] {
            engines.insert(name.into(), table_value(&betti_closed_with(&a, e, None)));
        }
        let maxes = a.max_supports().map_err(input)?;
        if maxes.len() == 1 {
            let sizes: Vec<usize> = maxes[0].iter().map(|m| m.count_ones() as usize).collect();
            let k = kunneth_table(&sizes);
            checks.insert("kunneth".into(), json!(reference.as_ref().ok().map(|t| t.trimmed() == k.trimmed())));
        }
        if a.space.len() == 1 && !a.is_empty() {
            checks.insert("link_euler".into(), json!(link_betti(&a).is_ok()));
        }
    } else if a.is_open() {
        let orbit = orbit_betti_open(&a, None, DEFAULT_CELL_BUDGET);
        engines.insert("orbit".into(), table_value(&orbit));
        if let (Ok(q), Ok(t)) = (pseudo_open(&a), &orbit) {
            checks.insert("duality".into(), json!(q == t.pseudo()));
            engines.insert("duality_pseudo".into(), poly_value(&q));
        }
    }
    let tables: Vec<&Value> = engines.iter().filter(|(k, v)| *k != "duality_pseudo" && v.is_array()).map(|(_, v)| v).collect();
    checks.insert("engines_agree".into(), json!(tables.windows(2).all(|w| w[0] == w[1])));
    checks.insert("euler".into(), json!(euler_check(&a).map(|e| e.ok()).unwrap_or(false)));
    let ok = checks.values().all(|v| v.as_bool() != Some(false));
    let doc = json!({
        "fmt": REPORT_FMT,
        "topology": match topology {
            Topology::Closed => "closed",
            Topology::Open => "open",
            Topology::Clopen => "clopen",
            Topology::Neither => "neither",
        },
        "patterns": a.len(),
        "ambient": a.space.dims(),
        "engines": engines,
        "checks": checks,
        "ok": ok,
    });
    Ok(Output { code: if ok { 0 } else { EXIT_VERIFY }, doc })
}

/// Line-delimited oracle service on stdin/stdout.
pub fn oracle_filter() -> Result<(), Failure> {
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line.map_err(input)?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(stdout, "{}", answer_line(&line)).and_then(|_| stdout.flush()).map_err(input)?;
    }
    Ok(())
}

pub fn generate_corpus(dir: &Path) -> Result<Output, Failure> {
    fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    let cases = ptoda::corpus::exhaustive_corpus();
    let path = dir.join(ptoda::corpus::EXHAUSTIVE_FILE);
    fs::write(&path, ptoda::corpus::write_jsonl(&cases)).map_err(|e| input(format!("{}: {e}", path.display())))?;
    Ok(Output::ok(json!({"fmt": REPORT_FMT, "written": path.display().to_string(), "cases": cases.len()})))
}
