//! Exact rank of sparse integer matrices.
//!
//! Fraction-free row reduction: pivots are chosen per leading column, rows
//! are kept primitive (divided by their content). Entries are `i128` with
//! checked arithmetic; on overflow the whole computation restarts over
//! `BigInt`.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

/// Sparse row: strictly increasing column indices with nonzero values.
pub type SparseRow = Vec<(u32, i64)>;

trait Entry: Clone + PartialEq {
    fn from_i64(v: i64) -> Self;
    fn is_zero(&self) -> bool;
    fn is_unit(&self) -> bool;
    /// `a·x − b·y`, or `None` on overflow.
    fn combine(a: &Self, x: &Self, b: &Self, y: &Self) -> Option<Self>;
    fn gcd(&self, other: &Self) -> Self;
    fn div_exact(&self, d: &Self) -> Self;
    fn abs(&self) -> Self;
}

impl Entry for i128 {
    fn from_i64(v: i64) -> Self {
        v as i128
    }
    fn is_zero(&self) -> bool {
        *self == 0
    }
    fn is_unit(&self) -> bool {
        *self == 1 || *self == -1
    }
    fn combine(a: &Self, x: &Self, b: &Self, y: &Self) -> Option<Self> {
        a.checked_mul(*x)?.checked_sub(b.checked_mul(*y)?)
    }
    fn gcd(&self, other: &Self) -> Self {
        Integer::gcd(self, other)
    }
    fn div_exact(&self, d: &Self) -> Self {
        self / d
    }
    fn abs(&self) -> Self {
        i128::abs(*self)
    }
}

impl Entry for BigInt {
    fn from_i64(v: i64) -> Self {
        BigInt::from(v)
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn is_unit(&self) -> bool {
        Signed::abs(self).is_one()
    }
    fn combine(a: &Self, x: &Self, b: &Self, y: &Self) -> Option<Self> {
        Some(a * x - b * y)
    }
    fn gcd(&self, other: &Self) -> Self {
        Integer::gcd(self, other)
    }
    fn div_exact(&self, d: &Self) -> Self {
        self / d
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
}

fn make_primitive<T: Entry>(row: &mut [(u32, T)]) {
    if row.is_empty() || row.iter().any(|(_, v)| v.is_unit()) {
        return;
    }
    let mut g = row[0].1.abs();
    for (_, v) in row.iter().skip(1) {
        g = g.gcd(v);
        if g.is_unit() {
            return;
        }
    }
    if !g.is_unit() && !g.is_zero() {
        for (_, v) in row.iter_mut() {
            *v = v.div_exact(&g);
        }
    }
}

/// `pv·row − rv·pivot_row`, which cancels the leading entry of `row`.
fn eliminate<T: Entry>(row: &[(u32, T)], pivot: &[(u32, T)]) -> Option<Vec<(u32, T)>> {
    let rv = &row[0].1;
    let pv = &pivot[0].1;
    let g = rv.gcd(pv);
    let a = pv.div_exact(&g);
    let b = rv.div_exact(&g);
    let zero = T::from_i64(0);
    let one = T::from_i64(1);
    let mut out = Vec::with_capacity(row.len() + pivot.len());
    let (mut i, mut j) = (1, 1);
    while i < row.len() || j < pivot.len() {
        let ci = row.get(i).map(|e| e.0).unwrap_or(u32::MAX);
        let cj = pivot.get(j).map(|e| e.0).unwrap_or(u32::MAX);
        let (c, v) = if ci < cj {
            let v = T::combine(&a, &row[i].1, &zero, &one)?;
            i += 1;
            (ci, v)
        } else if cj < ci {
            let v = T::combine(&zero, &one, &b, &pivot[j].1)?;
            j += 1;
            (cj, v)
        } else {
            let v = T::combine(&a, &row[i].1, &b, &pivot[j].1)?;
            i += 1;
            j += 1;
            (ci, v)
        };
        if !v.is_zero() {
            out.push((c, v));
        }
    }
    make_primitive(&mut out);
    Some(out)
}

fn rank_generic<T: Entry>(rows: &[SparseRow]) -> Option<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by_key(|&i| rows[i].len());
    let mut pivots: HashMap<u32, Vec<(u32, T)>> = HashMap::new();
    for &ri in &order {
        let mut row: Vec<(u32, T)> = rows[ri].iter().filter(|e| e.1 != 0).map(|&(c, v)| (c, T::from_i64(v))).collect();
        if row.is_empty() {
            continue;
        }
        loop {
            let lead = row[0].0;
            match pivots.get(&lead) {
                None => {
                    pivots.insert(lead, row);
                    break;
                }
                Some(p) => {
                    row = eliminate(&row, p)?;
                    if row.is_empty() {
                        break;
                    }
                }
            }
        }
    }
    Some(pivots.len())
}

/// Rank over the rationals of a sparse integer matrix given by rows.
pub fn rank(rows: &[SparseRow]) -> usize {
    match rank_generic::<i128>(rows) {
        Some(r) => r,
        None => rank_generic::<BigInt>(rows).expect("bigint arithmetic does not overflow"),
    }
}

/// Builds sorted sparse rows from `(row, col, value)` triples, summing duplicates.
pub fn rows_from_triples(nrows: usize, triples: impl IntoIterator<Item = (usize, u32, i64)>) -> Vec<SparseRow> {
    let mut rows: Vec<Vec<(u32, i64)>> = vec![Vec::new(); nrows];
    for (r, c, v) in triples {
        rows[r].push((c, v));
    }
    for row in rows.iter_mut() {
        row.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, i64)> = Vec::with_capacity(row.len());
        for &(c, v) in row.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|e| e.1 != 0);
        *row = merged;
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(m: &[&[i64]]) -> Vec<SparseRow> {
        m.iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0).map(|(c, v)| (c as u32, *v)).collect())
            .collect()
    }

    #[test]
    fn small_ranks() {
        assert_eq!(rank(&dense(&[&[1, 2], &[2, 4]])), 1);
        assert_eq!(rank(&dense(&[&[1, 2], &[3, 4]])), 2);
        assert_eq!(rank(&dense(&[&[0, 0], &[0, 0]])), 0);
        assert_eq!(rank(&dense(&[&[2, 4, 6], &[3, 6, 9], &[1, 0, 1]])), 2);
    }

    #[test]
    fn overflow_falls_back() {
        let big = 1i64 << 62;
        let m = dense(&[&[big, big - 1, 3], &[big - 1, big, 5], &[big - 3, big - 7, 11], &[1, 1, 1]]);
        // Third row: not a combination, so full column rank.
        assert_eq!(rank(&m), 3);
        assert_eq!(rank_generic::<BigInt>(&m), Some(3));
    }

    #[test]
    fn triples_merge() {
        let rows = rows_from_triples(2, vec![(0, 1, 1), (0, 1, -1), (1, 0, 2), (1, 0, 3)]);
        assert_eq!(rows, vec![vec![], vec![(0, 5)]]);
    }
}
