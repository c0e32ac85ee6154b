//! Geometry and probe-scheme types shared by every other module.
//!
//! Anchor indices are 1-based everywhere they cross the public surface.

use std::fmt;

use crate::{Error, Result};

/// A point in `R^d`, `d ∈ {2, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Position {
    coords: Vec<f64>,
}

impl Position {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let d = coords.len();
        if d != 2 && d != 3 {
            return Err(Error::UnsupportedDimension(d));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite coordinate in {coords:?}"
            )));
        }
        Ok(Self { coords })
    }

    pub fn origin(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn norm_sq(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum()
    }

    pub fn inf_norm(&self) -> f64 {
        self.coords.iter().fold(0.0, |acc, c| acc.max(c.abs()))
    }

    pub fn dist_sq(&self, other: &Position) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, other: &Position) -> f64 {
        self.dist_sq(other).sqrt()
    }

    /// `self + v`; panics on dimension mismatch.
    pub fn translated(&self, v: &[f64]) -> Position {
        assert_eq!(self.dim(), v.len(), "translation dimension");
        Position {
            coords: self.coords.iter().zip(v).map(|(a, b)| a + b).collect(),
        }
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        Self { coords }
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Ordered anchors with known positions, addressed by 1-based index.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    anchors: Vec<Position>,
}

impl AnchorSet {
    pub fn new(anchors: Vec<Position>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::InsufficientAnchors {
                needed: 2,
                available: anchors.len(),
            });
        }
        let d = anchors[0].dim();
        if let Some(bad) = anchors.iter().find(|a| a.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
        Ok(Self { anchors })
    }

    /// Like [`AnchorSet::new`] but additionally enforces `‖a_i‖_∞ ≤ kappa_a`.
    pub fn bounded(anchors: Vec<Position>, kappa_a: f64) -> Result<Self> {
        let set = Self::new(anchors)?;
        for (i, a) in set.anchors.iter().enumerate() {
            if a.inf_norm() > kappa_a * (1.0 + 1e-12) {
                return Err(Error::InvalidParameter(format!(
                    "anchor {} = {a} exceeds kappa_a = {kappa_a}",
                    i + 1
                )));
            }
        }
        Ok(set)
    }

    /// The ten-anchor 3-D topology used by the default experiments, scaled by `kappa_a`.
    pub fn table1(kappa_a: f64) -> Self {
        let k = kappa_a;
        let h = kappa_a / 2.0;
        let raw = [
            [0.0, 0.0, 0.0],
            [k, 0.0, 0.0],
            [0.0, k, 0.0],
            [0.0, 0.0, k],
            [k, k, k],
            [k, 0.0, k],
            [k, k, 0.0],
            [0.0, k, k],
            [h, h, 0.0],
            [h, h, k],
        ];
        Self {
            anchors: raw.iter().map(|c| Position::from_raw(c.to_vec())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.anchors[0].dim()
    }

    /// 1-based lookup.
    pub fn get(&self, index: usize) -> Result<&Position> {
        if index == 0 || index > self.anchors.len() {
            return Err(Error::AnchorIndex {
                index,
                n: self.anchors.len(),
            });
        }
        Ok(&self.anchors[index - 1])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Position> {
        self.anchors.iter()
    }

    pub fn as_slice(&self) -> &[Position] {
        &self.anchors
    }

    /// The first `count` anchors, in order.
    pub fn prefix(&self, count: usize) -> Result<&[Position]> {
        if count > self.anchors.len() {
            return Err(Error::InsufficientAnchors {
                needed: count,
                available: self.anchors.len(),
            });
        }
        Ok(&self.anchors[..count])
    }

    pub fn translated(&self, v: &[f64]) -> AnchorSet {
        AnchorSet {
            anchors: self.anchors.iter().map(|a| a.translated(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+",
            Sign::Minus => "-",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeMember {
    /// 1-based anchor index.
    pub anchor: usize,
    pub sign: Sign,
}

/// Anchors taking part in one ranging and the sign each contributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeScheme {
    members: Vec<ProbeMember>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemeViolation {
    Empty,
    OddCardinality(usize),
    SignImbalance { plus: usize, minus: usize },
    DuplicateAnchor(usize),
    ZeroIndex,
}

impl fmt::Display for SchemeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeViolation::Empty => write!(f, "scheme has no members"),
            SchemeViolation::OddCardinality(n) => write!(f, "odd cardinality {n}"),
            SchemeViolation::SignImbalance { plus, minus } => {
                write!(f, "sign balance violated ({plus} plus vs {minus} minus)")
            }
            SchemeViolation::DuplicateAnchor(i) => write!(f, "anchor {i} appears twice"),
            SchemeViolation::ZeroIndex => write!(f, "anchor indices are 1-based"),
        }
    }
}

impl ProbeScheme {
    /// Unchecked construction; see [`validate_scheme`].
    pub fn new(members: Vec<ProbeMember>) -> Self {
        Self { members }
    }

    pub fn validated(members: Vec<ProbeMember>) -> Result<Self> {
        let scheme = Self::new(members);
        validate_scheme(&scheme).map_err(Error::InvalidScheme)?;
        Ok(scheme)
    }

    /// Convenience: `(anchor, +1 | -1)` pairs.
    pub fn from_pairs(pairs: &[(usize, i8)]) -> Self {
        Self::new(
            pairs
                .iter()
                .map(|&(anchor, s)| ProbeMember {
                    anchor,
                    sign: if s >= 0 { Sign::Plus } else { Sign::Minus },
                })
                .collect(),
        )
    }

    pub fn members(&self) -> &[ProbeMember] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sign_sum(&self) -> f64 {
        self.members.iter().map(|m| m.sign.value()).sum()
    }

    pub fn max_anchor(&self) -> usize {
        self.members.iter().map(|m| m.anchor).max().unwrap_or(0)
    }
}

pub fn validate_scheme(scheme: &ProbeScheme) -> std::result::Result<(), SchemeViolation> {
    let members = scheme.members();
    if members.is_empty() {
        return Err(SchemeViolation::Empty);
    }
    if members.iter().any(|m| m.anchor == 0) {
        return Err(SchemeViolation::ZeroIndex);
    }
    for (i, m) in members.iter().enumerate() {
        if members[..i].iter().any(|o| o.anchor == m.anchor) {
            return Err(SchemeViolation::DuplicateAnchor(m.anchor));
        }
    }
    if !members.len().is_multiple_of(2) {
        return Err(SchemeViolation::OddCardinality(members.len()));
    }
    let plus = members.iter().filter(|m| m.sign == Sign::Plus).count();
    let minus = members.len() - plus;
    if plus != minus {
        return Err(SchemeViolation::SignImbalance { plus, minus });
    }
    Ok(())
}

/// Scheme `k` pairs anchor `2k-1` (sign `+1`) with anchor `2k` (sign `-1`).
pub fn default_scheme_list(m: usize, n: usize) -> Result<Vec<ProbeScheme>> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if 2 * m > n {
        return Err(Error::InsufficientAnchors {
            needed: 2 * m,
            available: n,
        });
    }
    Ok((1..=m)
        .map(|k| ProbeScheme::from_pairs(&[(2 * k - 1, 1), (2 * k, -1)]))
        .collect())
}

/// Propagation parameters of the probe: field chirp rate and probe speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub gamma: f64,
    pub c: f64,
}

impl PhysicalConstants {
    pub fn new(gamma: f64, c: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) || !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma and c must be positive (gamma = {gamma}, c = {c})"
            )));
        }
        Ok(Self { gamma, c })
    }

    /// Round-trip time of flight to an anchor at distance `d`.
    pub fn time_of_flight(&self, d: f64) -> f64 {
        2.0 * d / self.c
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { gamma: 1e3, c: 3e8 }
    }
}
