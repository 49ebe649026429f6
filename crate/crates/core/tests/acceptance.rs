//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Expected values are computed here from first principles (Künneth
//! products, coefficient reversal, hand-derived Betti numbers), never read
//! back from the code under test.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use ptoda::coordinate_model::{eliminate, formula_of, realize, Pattern, PatternSet, PatternSpace};
use ptoda::corpus::{check_all, exhaustive_corpus, random_corpus, Limits, Tally};
use ptoda::formula_ir::{Block, Qf, Quantifier, VarRef};
use ptoda::homology_oracle::{
    betti_closed, betti_closed_with, euler_check, link_reduced_betti_below, orbit_betti_open,
    pseudo_closed, pseudo_open, BettiTable, Engine, OracleError, DEFAULT_CELL_BUDGET,
};
use ptoda::join_engine::{complex_join, fibered_join, iterated_join, BlockFormula};
use ptoda::poincare_algebra::{PolyMapPipeline, PolyT, Stage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
    /// Set when the criterion fails only for lack of coverage, with no
    /// disagreement found.
    coverage_only: bool,
}

fn pass(detail: impl Into<String>) -> Verdict {
    Verdict { pass: true, detail: detail.into(), coverage_only: false }
}

fn fail(detail: impl Into<String>) -> Verdict {
    Verdict { pass: false, detail: detail.into(), coverage_only: false }
}

fn within(mut v: Verdict, elapsed: Duration, limit: Duration) -> Verdict {
    if v.pass && elapsed > limit {
        return fail(format!("{}; took {elapsed:.1?} > {limit:?}", v.detail));
    }
    v.detail = format!("{} [{elapsed:.1?}]", v.detail);
    v
}

fn eq0(b: &str, c: usize) -> Qf {
    Qf::var_eq0(VarRef::block(b, c))
}

/// `∏ (1 + T² + ⋯ + T^{2d})` as Betti numbers, by convolution.
fn kunneth(dims: &[usize]) -> Vec<u64> {
    let mut b = vec![1u64];
    for &d in dims {
        let mut out = vec![0u64; b.len() + 2 * d];
        for (i, &x) in b.iter().enumerate() {
            for j in 0..=d {
                out[i + 2 * j] += x;
            }
        }
        b = out;
    }
    b
}

fn trimmed(t: &BettiTable) -> Vec<u64> {
    t.trimmed()
}

fn block_formula(a: &PatternSet) -> BlockFormula {
    let (blocks, f) = formula_of(a).unwrap();
    BlockFormula::new(blocks, f).unwrap()
}

fn patterns(b: &BlockFormula) -> PatternSet {
    realize(&b.to_shaped()).unwrap()
}

fn random_closed(rng: &mut ChaCha8Rng, dims: &[usize], max_gens: usize) -> PatternSet {
    let space = PatternSpace::projective(dims);
    let gens: Vec<Pattern> = (0..rng.gen_range(1..=max_gens))
        .map(|_| dims.iter().map(|&d| rng.gen_range(1..(1u64 << (d + 1)))).collect())
        .collect();
    PatternSet::closure_of(space, &gens).unwrap()
}

fn criterion_1() -> Verdict {
    for k in 0..=3 {
        for l in 0..=3 {
            let x = BlockFormula::full(Block::new("X", k + 1));
            let y = BlockFormula::full(Block::new("Y", l + 1));
            let j = patterns(&complex_join(&x, &y).unwrap());
            let full = PatternSet::full(PatternSpace::projective(&[k + l + 1])).unwrap();
            if j.space.dims() != full.space.dims() || j.members != full.members {
                return fail(format!("J(P^{k}, P^{l}) is not P^{}", k + l + 1));
            }
            let expected: Vec<u64> = (0..=2 * (k + l + 1)).map(|i| u64::from(i % 2 == 0)).collect();
            let got = betti_closed(&j).unwrap().poincare();
            if got != PolyT::from_u64s(&expected) {
                return fail(format!("P of J(P^{k}, P^{l}) is {got}"));
            }
        }
    }
    pass("16 joins J(P^k, P^l) equal P^{k+l+1} with P = Σ T^{2i}")
}

fn criterion_2() -> Verdict {
    let tri = realize(&ptoda::formula_ir::ShapedFormula::quantifier_free(
        vec![Block::new("X", 3)],
        Qf::Or(vec![eq0("X", 0), eq0("X", 1), eq0("X", 2)]),
    ))
    .unwrap();
    let t = trimmed(&betti_closed(&tri).unwrap());
    if t != [1, 1, 3] {
        return fail(format!("triangle of lines gives {t:?}"));
    }
    let pts = |n: &str| BlockFormula::new(vec![Block::new(n, 2)], Qf::Or(vec![eq0(n, 0), eq0(n, 1)])).unwrap();
    let cycle = patterns(&complex_join(&pts("X"), &pts("Y")).unwrap());
    let c = trimmed(&betti_closed(&cycle).unwrap());
    if c != [1, 1, 4] {
        return fail(format!("4-cycle of lines gives {c:?}"));
    }
    let mut singles = 0;
    for dims in [vec![1], vec![2], vec![3], vec![1, 1], vec![2, 1], vec![1, 2], vec![2, 2], vec![1, 1, 1]] {
        let space = PatternSpace::projective(&dims);
        for top in space.all_patterns().unwrap() {
            let a = PatternSet::closure_of(space.clone(), std::slice::from_ref(&top)).unwrap();
            let sizes: Vec<usize> = top.iter().map(|m| m.count_ones() as usize - 1).collect();
            let got = trimmed(&betti_closed(&a).unwrap());
            if got != kunneth(&sizes) {
                return fail(format!("multi-subspace {top:x?} gives {got:?}"));
            }
            singles += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..200 {
        let dims: Vec<usize> = loop {
            let d: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(1..=4)).collect();
            if d.iter().map(|x| x + 1).sum::<usize>() <= 10 {
                break d;
            }
        };
        let a = random_closed(&mut rng, &dims, 5);
        let e = euler_check(&a).unwrap();
        // Independent side: χ of a torus-invariant set is its number of fixed points.
        let fixed = a.members.iter().filter(|p| p.iter().all(|m| m.count_ones() == 1)).count() as i64;
        if !e.ok() || e.computed != fixed {
            return fail(format!("Euler check {i} on {dims:?}: {} vs {fixed}", e.computed));
        }
    }
    pass(format!("triangle (1,1,3), 4-cycle (1,1,4), {singles} multi-subspaces match Künneth, 200 Euler checks"))
}

fn criterion_3() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut sets, mut links) = (0, 0);
    while sets < 60 || links < 30 {
        let k = rng.gen_range(0..=2);
        let p = rng.gen_range(1..=5);
        let x = random_closed(&mut rng, &[k], 3);
        let j = patterns(&iterated_join(&block_formula(&x), p).unwrap());
        let n = (p + 1) * (k + 1) - 1;
        let t = betti_closed_with(&j, Engine::Orbit, Some(p)).unwrap();
        for i in 0..p {
            let expected = u64::from(i % 2 == 0 && i <= 2 * n);
            if t.b[i] != expected {
                return fail(format!("b_{i}(J^{p}(X)) = {} for X ⊂ P^{k}", t.b[i]));
            }
        }
        sets += 1;
        if links < 40 && n < 10 {
            if let Ok(h) = link_reduced_betti_below(&j, p) {
                if h.iter().any(|&x| x != 0) {
                    return fail(format!("reduced link homology {h:?} below {p} for X ⊂ P^{k}"));
                }
                links += 1;
            }
        }
    }
    if links < 30 {
        return fail(format!("only {links} link cross-checks within budget"));
    }
    pass(format!("{sets} joins match projective space below p; {links} link checks vanish"))
}

fn criterion_4() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let one_minus_t2 = PolyT::from_i64s(&[1, 0, -1]);
    let one_minus_t = PolyT::from_i64s(&[1, -1]);
    let (mut n, mut skipped) = (0, 0);
    while n < 100 {
        let k = rng.gen_range(0..=2);
        let l = rng.gen_range(0..=2);
        let a = random_closed(&mut rng, &[k, l], 3);
        let p = 2 * k + 1;
        let image = eliminate(Quantifier::Exists, 1, &a).unwrap();
        let j = patterns(&fibered_join(&block_formula(&a), p).unwrap());
        let tj = match betti_closed_with(&j, Engine::Orbit, Some(p - 1)) {
            Ok(t) => t,
            Err(OracleError::Budget { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return fail(e.to_string()),
        };
        let ti = betti_closed(&image).unwrap();
        let lhs = ti.poincare().trunc(p - 1);
        let rhs = (&one_minus_t2 * &tj.poincare()).trunc(p - 1);
        if lhs != rhs {
            return fail(format!("Poincaré congruence fails: {lhs} vs {rhs} (k={k}, l={l})"));
        }
        let ql = ti.pseudo().trunc(k);
        let qr = (&one_minus_t * &tj.pseudo()).trunc(k);
        if ql != qr {
            return fail(format!("pseudo congruence fails: {ql} vs {qr} (k={k}, l={l})"));
        }
        n += 1;
    }
    pass(format!("{n} fibered joins satisfy both congruences ({skipped} over budget, resampled)"))
}

fn criterion_5() -> Verdict {
    let p1 = PatternSpace::projective(&[1]);
    let line = PatternSet::from_patterns(p1.clone(), vec![vec![0b01], vec![0b11]]).unwrap();
    let cstar = PatternSet::from_patterns(p1.clone(), vec![vec![0b11]]).unwrap();
    let hand = [
        ("affine line", pseudo_open(&line).unwrap(), PolyT::from_i64s(&[1])),
        ("C*", pseudo_open(&cstar).unwrap(), PolyT::from_i64s(&[1, -1])),
        ("ambient P^2", pseudo_open(&PatternSet::full(PatternSpace::projective(&[2])).unwrap()).unwrap(), PolyT::from_i64s(&[1, 1, 1])),
        ("empty", pseudo_open(&PatternSet::empty(p1)).unwrap(), PolyT::zero()),
    ];
    for (name, got, want) in &hand {
        if got != want {
            return fail(format!("{name}: Q = {got}, expected {want}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..100 {
        let dims: Vec<usize> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..=3)).collect();
        let s = random_closed(&mut rng, &dims, 3);
        let kdim: usize = dims.iter().sum();
        let q = pseudo_closed(&s).unwrap();
        let r = q.rec(kdim).unwrap().rec(kdim).unwrap();
        if r != q {
            return fail(format!("Rec is not an involution on {q}"));
        }
        // Ambient Q by hand, the complement valued by the orbit engine.
        let q_amb = dims.iter().fold(PolyT::one(), |acc, &d| &acc * &PolyT::from_u64s(&vec![1; d + 1]));
        let comp = s.complement().unwrap();
        let q_comp = orbit_betti_open(&comp, None, DEFAULT_CELL_BUDGET).unwrap().pseudo();
        let via = &q_amb - &q_comp.rec(kdim).unwrap();
        if via != q {
            return fail(format!("case {i}: Q_S = {q} but Q_amb − Rec(Q_comp) = {via}"));
        }
    }
    pass("hand open sets exact; Rec involution and ambient identity on 100 closed sets")
}

fn corpus_run() -> (Tally, usize, usize) {
    let mut cases = exhaustive_corpus();
    let exhaustive = cases.len();
    cases.extend(random_corpus(1, 500));
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let reports = check_all(&cases, &Limits::default(), jobs);
    let book = reports.iter().filter(|r| r.bookkeeping).count();
    (Tally::of(&reports), exhaustive, book)
}

fn criterion_6(t: &Tally, exhaustive: usize) -> Verdict {
    let detail = format!(
        "{} cases ({exhaustive} exhaustive + 500 random): {} verified, {} mismatches, {} errors, {} over budget",
        t.cases, t.verified, t.mismatches, t.errors, t.budget_exceeded
    );
    if t.failures() > 0 {
        return fail(detail);
    }
    if t.budget_exceeded > 0 {
        return Verdict { pass: false, detail, coverage_only: true };
    }
    pass(detail)
}

fn criterion_7(t: &Tally, book: usize) -> Verdict {
    if book == t.cases {
        pass(format!("Θ sizes and trace match the closed form on all {book} cases"))
    } else {
        fail(format!("bookkeeping differs on {} of {} cases", t.cases - book, t.cases))
    }
}

fn criterion_8() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let random_poly = |rng: &mut ChaCha8Rng, deg: usize| {
        PolyT::from_coeffs((0..=deg).map(|_| BigInt::from(rng.gen_range(-50i64..=50))).collect())
    };
    for i in 0..10_000 {
        let deg = rng.gen_range(0..=8);
        let q = random_poly(&mut rng, deg);
        let n = deg + rng.gen_range(0..=4);
        let r = q.rec(n).unwrap();
        let reversed: Vec<BigInt> = (0..=n).map(|j| q.coeff(n - j)).collect();
        if r != PolyT::from_coeffs(reversed) || r.rec(n).unwrap() != q {
            return fail(format!("case {i}: Rec_{n} on {q}"));
        }
        let m = rng.gen_range(0..=10);
        if q.trunc(m).trunc(m) != q.trunc(m) || (0..=m).any(|j| q.trunc(m).coeff(j) != q.coeff(j)) {
            return fail(format!("case {i}: Trunc_{m} on {q}"));
        }
        let (even, odd) = q.even_odd_split();
        if &even.substitute_square() + &odd.substitute_square().shift(1) != q {
            return fail(format!("case {i}: even/odd reconstruction of {q}"));
        }
        let stages: Vec<Stage> = (0..rng.gen_range(0..=4))
            .map(|_| match rng.gen_range(0..5) {
                0 => Stage::Identity,
                1 => Stage::Trunc { m: rng.gen_range(0..=6) },
                2 => Stage::Rec { n: rng.gen_range(6..=12) },
                3 => Stage::MulBy { poly: random_poly(&mut rng, 2) },
                _ => Stage::SubFrom { poly: random_poly(&mut rng, 3) },
            })
            .collect();
        let pipe = PolyMapPipeline::new(stages);
        let back = PolyMapPipeline::from_json(&pipe.to_json()).unwrap();
        if back != pipe || back.eval(&q).ok() != pipe.eval(&q).ok() {
            return fail(format!("case {i}: pipeline round trip {}", pipe.to_json()));
        }
    }
    pass("10000 randomized cases")
}

#[test]
fn acceptance() {
    let mut results: BTreeMap<u32, Verdict> = BTreeMap::new();
    let timed = |f: fn() -> Verdict, limit: u64| {
        let t = Instant::now();
        let v = f();
        within(v, t.elapsed(), Duration::from_secs(limit))
    };
    results.insert(1, timed(criterion_1, 5));
    results.insert(2, timed(criterion_2, 120));
    results.insert(3, timed(criterion_3, 600));
    results.insert(4, timed(criterion_4, 900));
    results.insert(5, timed(criterion_5, 60));
    let t = Instant::now();
    let (tally, exhaustive, book) = corpus_run();
    let elapsed = t.elapsed();
    results.insert(6, within(criterion_6(&tally, exhaustive), elapsed, Duration::from_secs(1800)));
    results.insert(7, criterion_7(&tally, book));
    results.insert(8, timed(criterion_8, 30));

    for (n, v) in &results {
        println!("{} criterion {n}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    // A coverage shortfall is reported above but does not fail the suite;
    // any disagreement does.
    let hard: Vec<u32> = results.iter().filter(|(_, v)| !v.pass && !v.coverage_only).map(|(n, _)| *n).collect();
    assert!(hard.is_empty(), "criteria {hard:?} failed");
}
