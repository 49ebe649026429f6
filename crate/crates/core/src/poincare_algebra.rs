//! Integer polynomials in one variable `T`, the operators used to transport
//! pseudo-Poincaré polynomials through the reduction, and serializable
//! compositions of those operators.
//!
//! Conventions:
//! - `P_S = Σ b_i T^i` (Poincaré polynomial).
//! - `Q_S = Σ (b_{2j} − b_{2j−1}) T^j = P^even − T·P^odd` (pseudo-Poincaré).
//! - `P = P^even(T²) + T·P^odd(T²)`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("rec: degree {degree} exceeds window {n}")]
    DegreeExceedsWindow { degree: usize, n: usize },
    #[error("malformed pipeline document: {0}")]
    MalformedPipeline(String),
}

/// Dense polynomial with arbitrary-precision integer coefficients.
/// Index = power of `T`; trailing zeros are never stored.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct PolyT {
    coeffs: Vec<BigInt>,
}

impl PolyT {
    pub fn zero() -> Self {
        PolyT { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        PolyT::constant(BigInt::one())
    }

    pub fn constant(c: BigInt) -> Self {
        PolyT::from_coeffs(vec![c])
    }

    /// `T^k`.
    pub fn monomial(k: usize) -> Self {
        let mut c = vec![BigInt::zero(); k + 1];
        c[k] = BigInt::one();
        PolyT { coeffs: c }
    }

    pub fn from_coeffs(mut coeffs: Vec<BigInt>) -> Self {
        while coeffs.last().is_some_and(|c| c.is_zero()) {
            coeffs.pop();
        }
        PolyT { coeffs }
    }

    pub fn from_i64s(c: &[i64]) -> Self {
        PolyT::from_coeffs(c.iter().map(|&x| BigInt::from(x)).collect())
    }

    pub fn from_u64s(c: &[u64]) -> Self {
        PolyT::from_coeffs(c.iter().map(|&x| BigInt::from(x)).collect())
    }

    pub fn coeffs(&self) -> &[BigInt] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `None` for the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn coeff(&self, i: usize) -> BigInt {
        self.coeffs.get(i).cloned().unwrap_or_default()
    }

    pub fn constant_term(&self) -> BigInt {
        self.coeff(0)
    }

    pub fn has_nonnegative_coeffs(&self) -> bool {
        self.coeffs.iter().all(|c| !c.is_negative())
    }

    pub fn eval(&self, t: &BigInt) -> BigInt {
        self.coeffs
            .iter()
            .rev()
            .fold(BigInt::zero(), |acc, c| acc * t + c)
    }

    /// `(1 − T)^a`.
    pub fn one_minus_t_pow(a: usize) -> Self {
        let base = PolyT::from_i64s(&[1, -1]);
        (0..a).fold(PolyT::one(), |acc, _| &acc * &base)
    }

    /// `1 + T + … + T^d`.
    pub fn geometric(d: usize) -> Self {
        PolyT::from_coeffs(vec![BigInt::one(); d + 1])
    }

    /// `T^n Q(1/T)`; requires `deg Q ≤ n`.
    pub fn rec(&self, n: usize) -> Result<PolyT, AlgebraError> {
        match self.degree() {
            None => Ok(PolyT::zero()),
            Some(d) if d > n => Err(AlgebraError::DegreeExceedsWindow { degree: d, n }),
            Some(_) => {
                let mut c = vec![BigInt::zero(); n + 1];
                for (i, a) in self.coeffs.iter().enumerate() {
                    c[n - i] = a.clone();
                }
                Ok(PolyT::from_coeffs(c))
            }
        }
    }

    /// Keeps the terms of degree `≤ m`.
    pub fn trunc(&self, m: usize) -> PolyT {
        PolyT::from_coeffs(self.coeffs.iter().take(m + 1).cloned().collect())
    }

    /// Returns `(P^even, P^odd)` with `P = P^even(T²) + T·P^odd(T²)`.
    pub fn even_odd_split(&self) -> (PolyT, PolyT) {
        let even = self.coeffs.iter().step_by(2).cloned().collect();
        let odd = self.coeffs.iter().skip(1).step_by(2).cloned().collect();
        (PolyT::from_coeffs(even), PolyT::from_coeffs(odd))
    }

    /// `P(T²)`.
    pub fn substitute_square(&self) -> PolyT {
        let mut c = vec![BigInt::zero(); 2 * self.coeffs.len()];
        for (i, a) in self.coeffs.iter().enumerate() {
            c[2 * i] = a.clone();
        }
        PolyT::from_coeffs(c)
    }

    /// `T^k·P`.
    pub fn shift(&self, k: usize) -> PolyT {
        if self.is_zero() {
            return PolyT::zero();
        }
        let mut c = vec![BigInt::zero(); k];
        c.extend(self.coeffs.iter().cloned());
        PolyT { coeffs: c }
    }

    /// Coefficients as `i64`, when they all fit.
    pub fn to_i64s(&self) -> Option<Vec<i64>> {
        self.coeffs.iter().map(|c| i64::try_from(c).ok()).collect()
    }
}

/// `Q = P^even − T·P^odd`.
pub fn pseudo_from_poincare(p: &PolyT) -> PolyT {
    let (even, odd) = p.even_odd_split();
    &even - &odd.shift(1)
}

/// Poincaré and pseudo-Poincaré polynomials of `P^{d_1} × ⋯ × P^{d_r}`.
pub fn projective_product_polys(dims: &[usize]) -> (PolyT, PolyT) {
    dims.iter().fold((PolyT::one(), PolyT::one()), |(p, q), &d| {
        (
            &p * &PolyT::geometric(d).substitute_square(),
            &q * &PolyT::geometric(d),
        )
    })
}

/// `Q_S = Q_ambient − Rec_k(Q_complement)` for `S` closed or open in the
/// product of projective spaces of dimensions `ambient_dims`.
pub fn duality_pseudo(
    q_complement: &PolyT,
    ambient_dims: &[usize],
    k: usize,
) -> Result<PolyT, AlgebraError> {
    let (_, q_amb) = projective_product_polys(ambient_dims);
    Ok(&q_amb - &q_complement.rec(k)?)
}

impl fmt::Debug for PolyT {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PolyT({self})")
    }
}

impl fmt::Display for PolyT {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, c) in self.coeffs.iter().enumerate() {
            if c.is_zero() {
                continue;
            }
            let (sign, mag) = if c.is_negative() { ("-", -c) } else { ("+", c.clone()) };
            if first {
                if sign == "-" {
                    write!(f, "-")?;
                }
            } else {
                write!(f, " {sign} ")?;
            }
            first = false;
            match (i, mag.is_one()) {
                (0, _) => write!(f, "{mag}")?,
                (1, true) => write!(f, "T")?,
                (1, false) => write!(f, "{mag}T")?,
                (_, true) => write!(f, "T^{i}")?,
                (_, false) => write!(f, "{mag}T^{i}")?,
            }
        }
        Ok(())
    }
}

impl Add for &PolyT {
    type Output = PolyT;
    fn add(self, rhs: &PolyT) -> PolyT {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        PolyT::from_coeffs((0..n).map(|i| self.coeff(i) + rhs.coeff(i)).collect())
    }
}

impl Sub for &PolyT {
    type Output = PolyT;
    fn sub(self, rhs: &PolyT) -> PolyT {
        let n = self.coeffs.len().max(rhs.coeffs.len());
        PolyT::from_coeffs((0..n).map(|i| self.coeff(i) - rhs.coeff(i)).collect())
    }
}

impl Neg for &PolyT {
    type Output = PolyT;
    fn neg(self) -> PolyT {
        PolyT { coeffs: self.coeffs.iter().map(|c| -c).collect() }
    }
}

impl Mul for &PolyT {
    type Output = PolyT;
    fn mul(self, rhs: &PolyT) -> PolyT {
        if self.is_zero() || rhs.is_zero() {
            return PolyT::zero();
        }
        let mut c = vec![BigInt::zero(); self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        PolyT::from_coeffs(c)
    }
}

impl Serialize for PolyT {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.coeffs.len()))?;
        for c in &self.coeffs {
            seq.serialize_element(&c.to_string())?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for PolyT {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        let coeffs = raw
            .iter()
            .map(|s| parse_decimal(s).map_err(de::Error::custom))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PolyT::from_coeffs(coeffs))
    }
}

/// Strict decimal integer: optional leading `-`, then ASCII digits.
pub fn parse_decimal(s: &str) -> Result<BigInt, String> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("not a decimal integer: {s:?}"));
    }
    s.parse::<BigInt>().map_err(|e| format!("{s:?}: {e}"))
}

/// One operator of a [`PolyMapPipeline`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", deny_unknown_fields)]
pub enum Stage {
    #[serde(rename = "id")]
    Identity,
    #[serde(rename = "trunc")]
    Trunc { m: usize },
    #[serde(rename = "rec")]
    Rec { n: usize },
    #[serde(rename = "mul")]
    MulBy { poly: PolyT },
    /// `Q ↦ C − Q`.
    #[serde(rename = "sub_from")]
    SubFrom { poly: PolyT },
}

impl Stage {
    pub fn apply(&self, q: &PolyT) -> Result<PolyT, AlgebraError> {
        Ok(match self {
            Stage::Identity => q.clone(),
            Stage::Trunc { m } => q.trunc(*m),
            Stage::Rec { n } => q.rec(*n)?,
            Stage::MulBy { poly } => poly * q,
            Stage::SubFrom { poly } => poly - q,
        })
    }
}

/// Composition of operators applied innermost first (left to right).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyMapPipeline {
    #[serde(rename = "pipeline")]
    pub stages: Vec<Stage>,
}

impl PolyMapPipeline {
    pub fn identity() -> Self {
        PolyMapPipeline { stages: vec![Stage::Identity] }
    }

    pub fn new(stages: Vec<Stage>) -> Self {
        PolyMapPipeline { stages }
    }

    pub fn eval(&self, q: &PolyT) -> Result<PolyT, AlgebraError> {
        self.stages.iter().try_fold(q.clone(), |acc, s| s.apply(&acc))
    }

    /// `other ∘ self`: first `self`, then `other`.
    pub fn then(&self, other: &PolyMapPipeline) -> PolyMapPipeline {
        let mut stages = self.stages.clone();
        stages.extend(other.stages.iter().cloned());
        PolyMapPipeline { stages }
    }

    /// Smallest `d` such that the result depends only on the input mod `T^{d+1}`.
    /// `None` when no stage truncates before a degree-sensitive step.
    pub fn input_precision(&self) -> Option<usize> {
        for s in &self.stages {
            match s {
                Stage::Trunc { m } => return Some(*m),
                Stage::Rec { n } => return Some(*n),
                _ => {}
            }
        }
        None
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("pipeline serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AlgebraError> {
        serde_json::from_str(text).map_err(|e| AlgebraError::MalformedPipeline(e.to_string()))
    }
}
