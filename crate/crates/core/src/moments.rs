//! Multi-indices, monomials and truncated moment vectors.
//!
//! Coordinates are always ordered time first, then controls, then states.
//! Multi-indices of a given dimension are ordered graded-lexicographically:
//! by total degree, then with larger leading exponents first, so that for
//! two coordinates the degree-2 block reads `(2,0), (1,1), (0,2)`. Every
//! matrix row, file line and vector slot in the crate follows this order.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// Index with a single nonzero exponent.
    pub fn unit(dim: usize, pos: usize, power: u32) -> Self {
        let mut e = vec![0; dim];
        e[pos] = power;
        MultiIndex(e)
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        debug_assert_eq!(self.dim(), other.dim());
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Lowers the exponent at `pos` by one, or `None` when it is already zero.
    pub fn lowered(&self, pos: usize) -> Option<MultiIndex> {
        if self.0[pos] == 0 {
            return None;
        }
        let mut e = self.0.clone();
        e[pos] -= 1;
        Some(MultiIndex(e))
    }

    /// Nonzero exponents only at the listed positions.
    pub fn supported_on(&self, positions: &[usize]) -> bool {
        self.0
            .iter()
            .enumerate()
            .all(|(i, &e)| e == 0 || positions.contains(&i))
    }

    /// Keeps the entries at `positions`, in that order.
    pub fn project(&self, positions: &[usize]) -> MultiIndex {
        MultiIndex(positions.iter().map(|&p| self.0[p]).collect())
    }

    /// Inverse of [`MultiIndex::project`]: spreads entries into a `dim`-length index.
    pub fn embed(&self, positions: &[usize], dim: usize) -> MultiIndex {
        let mut e = vec![0; dim];
        for (&p, &v) in positions.iter().zip(&self.0) {
            e[p] = v;
        }
        MultiIndex(e)
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

/// All multi-indices of dimension `q` with degree at most `d`, graded-lex.
pub fn enumerate_indices(q: usize, d: u32) -> Vec<MultiIndex> {
    fn fill(rest: u32, pos: usize, cur: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
        if pos + 1 == cur.len() {
            cur[pos] = rest;
            out.push(MultiIndex(cur.clone()));
            return;
        }
        for e in (0..=rest).rev() {
            cur[pos] = e;
            fill(rest - e, pos + 1, cur, out);
        }
    }

    let mut out = Vec::new();
    if q == 0 {
        return out;
    }
    let mut cur = vec![0; q];
    for k in 0..=d {
        fill(k, 0, &mut cur, &mut out);
    }
    out
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// `z^alpha`; the empty product is 1.
pub fn monomial_eval(z: &[f64], alpha: &MultiIndex) -> Result<f64> {
    if z.len() != alpha.dim() {
        return Err(Error::DimensionMismatch {
            expected: alpha.dim(),
            got: z.len(),
        });
    }
    Ok(monomial(z, alpha))
}

#[inline]
pub(crate) fn monomial(z: &[f64], alpha: &MultiIndex) -> f64 {
    z.iter()
        .zip(alpha.entries())
        .fold(1.0, |acc, (&x, &e)| acc * x.powi(e as i32))
}

/// A canonical coordinate of the `(t, u, x)` space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Coord {
    Time,
    Control(usize),
    State(usize),
}

impl Coord {
    pub fn name(self) -> String {
        match self {
            Coord::Time => "t".to_string(),
            Coord::Control(k) => format!("u{}", k + 1),
            Coord::State(j) => format!("x{}", j + 1),
        }
    }

    pub fn parse(s: &str) -> Option<Coord> {
        if s == "t" {
            return Some(Coord::Time);
        }
        let (kind, num) = s.split_at(1.min(s.len()));
        let k: usize = num.parse().ok()?;
        if k == 0 {
            return None;
        }
        match kind {
            "u" => Some(Coord::Control(k - 1)),
            "x" => Some(Coord::State(k - 1)),
            _ => None,
        }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Which coordinates a moment vector is indexed over.
///
/// Occupation measures live on `(t, u, x)`; invariant measures of
/// autonomous systems live on `x` alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub time: bool,
    pub controls: usize,
    pub states: usize,
}

impl Layout {
    pub fn occupation(states: usize, controls: usize) -> Self {
        Layout {
            time: true,
            controls,
            states,
        }
    }

    pub fn state_only(states: usize) -> Self {
        Layout {
            time: false,
            controls: 0,
            states,
        }
    }

    pub fn dim(&self) -> usize {
        usize::from(self.time) + self.controls + self.states
    }

    pub fn position(&self, c: Coord) -> Option<usize> {
        let t = usize::from(self.time);
        match c {
            Coord::Time if self.time => Some(0),
            Coord::Control(k) if k < self.controls => Some(t + k),
            Coord::State(j) if j < self.states => Some(t + self.controls + j),
            _ => None,
        }
    }

    pub fn coord(&self, pos: usize) -> Coord {
        let t = usize::from(self.time);
        if self.time && pos == 0 {
            Coord::Time
        } else if pos < t + self.controls {
            Coord::Control(pos - t)
        } else {
            Coord::State(pos - t - self.controls)
        }
    }

    pub fn coords(&self) -> Vec<Coord> {
        (0..self.dim()).map(|p| self.coord(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        v >= self.lo - slack && v <= self.hi + slack
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Axis-aligned box, one closed interval per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    intervals: Vec<Interval>,
}

impl BoxDomain {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        for (i, iv) in intervals.iter().enumerate() {
            if !(iv.lo < iv.hi) || !iv.lo.is_finite() || !iv.hi.is_finite() {
                return Err(Error::DegenerateBox {
                    coord: i,
                    lo: iv.lo,
                    hi: iv.hi,
                });
            }
        }
        Ok(BoxDomain { intervals })
    }

    pub fn from_bounds(bounds: &[(f64, f64)]) -> Result<Self> {
        Self::new(bounds.iter().map(|&(lo, hi)| Interval::new(lo, hi)).collect())
    }

    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn interval(&self, i: usize) -> Interval {
        self.intervals[i]
    }

    pub fn contains(&self, z: &[f64], slack: f64) -> bool {
        z.len() == self.dim() && self.intervals.iter().zip(z).all(|(iv, &v)| iv.contains(v, slack))
    }

    pub fn diameter(&self) -> f64 {
        self.intervals
            .iter()
            .map(|iv| iv.width() * iv.width())
            .sum::<f64>()
            .sqrt()
    }

    /// Sub-box over the listed positions.
    pub fn select(&self, positions: &[usize]) -> BoxDomain {
        BoxDomain {
            intervals: positions.iter().map(|&p| self.intervals[p]).collect(),
        }
    }
}

/// Componentwise affine map `z -> scale * z + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    scale: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineMap {
    pub fn new(scale: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        if scale.len() != offset.len() {
            return Err(Error::DimensionMismatch {
                expected: scale.len(),
                got: offset.len(),
            });
        }
        if let Some(i) = scale.iter().position(|&a| a == 0.0 || !a.is_finite()) {
            return Err(Error::NonInvertibleMap(i));
        }
        Ok(AffineMap { scale, offset })
    }

    /// Maps `domain` onto `[-1, 1]^q`.
    pub fn to_unit(domain: &BoxDomain) -> Self {
        let (scale, offset) = domain
            .intervals()
            .iter()
            .map(|iv| {
                let w = iv.width();
                (2.0 / w, -(iv.hi + iv.lo) / w)
            })
            .unzip();
        AffineMap { scale, offset }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn inverse(&self) -> AffineMap {
        AffineMap {
            scale: self.scale.iter().map(|a| 1.0 / a).collect(),
            offset: self.scale.iter().zip(&self.offset).map(|(a, b)| -b / a).collect(),
        }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.scale.iter().zip(&self.offset))
            .map(|(v, (a, b))| a * v + b)
            .collect()
    }

    pub fn apply_coord(&self, pos: usize, v: f64) -> f64 {
        self.scale[pos] * v + self.offset[pos]
    }

    /// Image of a box; a negative scale flips the interval.
    pub fn map_box(&self, domain: &BoxDomain) -> BoxDomain {
        let intervals = domain
            .intervals()
            .iter()
            .enumerate()
            .map(|(i, iv)| {
                let (p, q) = (self.apply_coord(i, iv.lo), self.apply_coord(i, iv.hi));
                Interval::new(p.min(q), p.max(q))
            })
            .collect();
        BoxDomain { intervals }
    }

    /// Restriction to the listed positions.
    pub fn select(&self, positions: &[usize]) -> AffineMap {
        AffineMap {
            scale: positions.iter().map(|&p| self.scale[p]).collect(),
            offset: positions.iter().map(|&p| self.offset[p]).collect(),
        }
    }
}

/// Truncated moment sequence `y_alpha` of a positive measure on a box.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    layout: Layout,
    degree: u32,
    domain: BoxDomain,
    entries: BTreeMap<MultiIndex, f64>,
}

impl MomentVector {
    /// Builds a moment vector from arbitrary entries. The zero index must be
    /// present, every index must match the layout dimension and stay within
    /// `degree`, and `degree` must be even.
    pub fn new(layout: Layout, degree: u32, domain: BoxDomain, entries: BTreeMap<MultiIndex, f64>) -> Result<Self> {
        let q = layout.dim();
        if degree % 2 != 0 {
            return Err(Error::OddDegree(degree));
        }
        if domain.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: domain.dim(),
            });
        }
        for (alpha, v) in &entries {
            if alpha.dim() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: alpha.dim(),
                });
            }
            if alpha.degree() > degree {
                return Err(Error::InvalidArgument(format!(
                    "moment {alpha} exceeds degree {degree}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("moment {alpha} is not finite")));
            }
        }
        if !entries.contains_key(&MultiIndex::zero(q)) {
            return Err(Error::MissingMoment(MultiIndex::zero(q)));
        }
        Ok(MomentVector {
            layout,
            degree,
            domain,
            entries,
        })
    }

    /// Full moment vector from values aligned with [`enumerate_indices`].
    pub fn from_values(layout: Layout, degree: u32, domain: BoxDomain, values: &[f64]) -> Result<Self> {
        let indices = enumerate_indices(layout.dim(), degree);
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: indices.len(),
                got: values.len(),
            });
        }
        Self::new(
            layout,
            degree,
            domain,
            indices.into_iter().zip(values.iter().copied()).collect(),
        )
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total mass.
    pub fn mass(&self) -> f64 {
        self.entries[&MultiIndex::zero(self.layout.dim())]
    }

    pub fn get(&self, alpha: &MultiIndex) -> Option<f64> {
        self.entries.get(alpha).copied()
    }

    pub fn require(&self, alpha: &MultiIndex) -> Result<f64> {
        self.get(alpha).ok_or_else(|| Error::MissingMoment(alpha.clone()))
    }

    /// Entries in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.entries.iter().map(|(k, &v)| (k, v))
    }

    /// True when every index up to the degree is present.
    pub fn is_complete(&self) -> bool {
        self.entries.len() == binomial(self.layout.dim() as u64 + self.degree as u64, self.degree as u64) as usize
    }

    /// Moments of the pushforward measure under `map`.
    ///
    /// Each `(a z + b)^alpha` is expanded binomially coordinate by coordinate,
    /// so every index below `alpha` must be present.
    pub fn rescale(&self, map: &AffineMap) -> Result<MomentVector> {
        let q = self.layout.dim();
        if map.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: map.dim(),
            });
        }
        if let Some(i) = map.scale().iter().position(|&a| a == 0.0 || !a.is_finite()) {
            return Err(Error::NonInvertibleMap(i));
        }
        let mut out = BTreeMap::new();
        for alpha in self.entries.keys() {
            let mut total = 0.0;
            let mut beta = vec![0u32; q];
            loop {
                let b = MultiIndex(beta.clone());
                let y = self.require(&b)?;
                let mut coef = 1.0;
                for i in 0..q {
                    let (ai, bi) = (alpha.0[i], beta[i]);
                    coef *= binomial(ai as u64, bi as u64) as f64
                        * map.scale()[i].powi(bi as i32)
                        * map.offset()[i].powi((ai - bi) as i32);
                }
                total += coef * y;
                // odometer over beta <= alpha
                let mut i = 0;
                while i < q {
                    if beta[i] < alpha.0[i] {
                        beta[i] += 1;
                        break;
                    }
                    beta[i] = 0;
                    i += 1;
                }
                if i == q {
                    break;
                }
            }
            out.insert(alpha.clone(), total);
        }
        Ok(MomentVector {
            layout: self.layout,
            degree: self.degree,
            domain: map.map_box(&self.domain),
            entries: out,
        })
    }
}

/// Free-function form of [`MomentVector::rescale`].
pub fn rescale_moments(y: &MomentVector, map: &AffineMap) -> Result<MomentVector> {
    y.rescale(map)
}

/// Moments of a weighted point set, indexed by `indices`.
pub fn atomic_moments(points: &[Vec<f64>], weights: &[f64], indices: &[MultiIndex]) -> Vec<f64> {
    indices
        .iter()
        .map(|a| points.iter().zip(weights).map(|(z, w)| w * monomial(z, a)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn idx(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn enumeration_small_cases() {
        let got = enumerate_indices(2, 2);
        let want: Vec<_> = [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]
            .iter()
            .map(|e| idx(e))
            .collect();
        assert_eq!(got, want);
        let got = enumerate_indices(1, 3);
        assert_eq!(got, vec![idx(&[0]), idx(&[1]), idx(&[2]), idx(&[3])]);
    }

    #[test]
    fn enumeration_four_by_eight() {
        // C(12, 8) by Pascal's rule, kept separate from `binomial`.
        let mut pascal = vec![vec![1u64; 1]; 13];
        for n in 1..13 {
            let mut row = vec![1u64; n + 1];
            for k in 1..n {
                row[k] = pascal[n - 1][k - 1] + pascal[n - 1][k];
            }
            pascal[n] = row;
        }
        assert_eq!(pascal[12][8], 495);
        assert_eq!(enumerate_indices(4, 8).len(), 495);
    }

    #[test]
    fn enumeration_counts_and_order() {
        for q in 1..=6 {
            for d in 0..=12 {
                let ix = enumerate_indices(q, d);
                assert_eq!(ix.len() as u64, binomial((q as u64) + d as u64, d as u64));
                assert!(ix.windows(2).all(|w| w[0] < w[1]), "q={q} d={d}");
            }
        }
    }

    #[test]
    fn monomials() {
        assert_eq!(monomial_eval(&[2.0, 3.0], &idx(&[1, 2])).unwrap(), 18.0);
        assert_eq!(monomial_eval(&[0.5, -1.0, 4.0], &idx(&[0, 0, 0])).unwrap(), 1.0);
        assert_relative_eq!(
            monomial_eval(&[0.3, 0.7], &idx(&[3, 1])).unwrap(),
            0.0189,
            max_relative = 1e-12
        );
        assert!(matches!(
            monomial_eval(&[1.0], &idx(&[1, 1])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn rescale_shifts_dirac() {
        let dom = BoxDomain::from_bounds(&[(0.0, 2.0)]).unwrap();
        let y = MomentVector::from_values(Layout::state_only(1), 2, dom, &[1.0, 1.0, 1.0]).unwrap();
        let m = AffineMap::new(vec![1.0], vec![-1.0]).unwrap();
        let r = y.rescale(&m).unwrap();
        assert_eq!(r.get(&idx(&[1])).unwrap(), 0.0);
        assert_eq!(r.domain().interval(0), Interval::new(-1.0, 1.0));
    }

    #[test]
    fn rescale_lebesgue_to_symmetric_interval() {
        let dom = BoxDomain::from_bounds(&[(0.0, 1.0)]).unwrap();
        let vals: Vec<f64> = (0..=4).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        let y = MomentVector::from_values(Layout::state_only(1), 4, dom.clone(), &vals).unwrap();
        let m = AffineMap::to_unit(&dom);
        let r = y.rescale(&m).unwrap();
        // Pushforward of Lebesgue on [0,1] is Lebesgue/2 on [-1,1].
        assert_relative_eq!(r.get(&idx(&[0])).unwrap(), 1.0, epsilon = 1e-15);
        assert!(r.get(&idx(&[1])).unwrap().abs() < 1e-15);
        assert_relative_eq!(r.get(&idx(&[2])).unwrap(), 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(r.get(&idx(&[4])).unwrap(), 1.0 / 5.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_zero_scale() {
        assert!(matches!(
            AffineMap::new(vec![1.0, 0.0], vec![0.0, 0.0]),
            Err(Error::NonInvertibleMap(1))
        ));
    }

    #[test]
    fn moment_vector_invariants() {
        let dom = BoxDomain::from_bounds(&[(0.0, 1.0)]).unwrap();
        let mut e = BTreeMap::new();
        e.insert(idx(&[1]), 0.5);
        assert!(matches!(
            MomentVector::new(Layout::state_only(1), 2, dom.clone(), e.clone()),
            Err(Error::MissingMoment(_))
        ));
        e.insert(idx(&[0]), 1.0);
        assert!(matches!(
            MomentVector::new(Layout::state_only(1), 3, dom.clone(), e.clone()),
            Err(Error::OddDegree(3))
        ));
        assert!(MomentVector::new(Layout::state_only(1), 2, dom, e).is_ok());
    }

    #[test]
    fn layout_positions() {
        let l = Layout::occupation(2, 1);
        assert_eq!(l.dim(), 4);
        assert_eq!(l.position(Coord::Time), Some(0));
        assert_eq!(l.position(Coord::Control(0)), Some(1));
        assert_eq!(l.position(Coord::State(1)), Some(3));
        assert_eq!(l.position(Coord::State(2)), None);
        assert_eq!(
            l.coords(),
            vec![Coord::Time, Coord::Control(0), Coord::State(0), Coord::State(1)]
        );
        let s = Layout::state_only(2);
        assert_eq!(s.position(Coord::Time), None);
        assert_eq!(s.coord(1), Coord::State(1));
        assert_eq!(Coord::parse("x2"), Some(Coord::State(1)));
        assert_eq!(Coord::parse("u1"), Some(Coord::Control(0)));
        assert_eq!(Coord::parse("x0"), None);
    }

    fn random_atoms() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (1usize..6).prop_flat_map(|k| {
            (
                prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), k),
                prop::collection::vec(0.1f64..2.0, k),
            )
        })
    }

    proptest! {
        #[test]
        fn rescale_matches_mapped_atoms(
            (pts, w) in random_atoms(),
            scale in prop::collection::vec(prop_oneof![-2.0f64..-0.3, 0.3f64..2.0], 3),
            offset in prop::collection::vec(-1.0f64..1.0, 3),
        ) {
            let layout = Layout::occupation(1, 1);
            let dom = BoxDomain::from_bounds(&[(-2.0, 2.0); 3]).unwrap();
            let ix = enumerate_indices(3, 6);
            let y = MomentVector::from_values(layout, 6, dom, &atomic_moments(&pts, &w, &ix)).unwrap();
            let map = AffineMap::new(scale, offset).unwrap();
            let mapped: Vec<Vec<f64>> = pts.iter().map(|p| map.apply(p)).collect();
            let want = atomic_moments(&mapped, &w, &ix);
            let got = y.rescale(&map).unwrap();
            for (a, wv) in ix.iter().zip(&want) {
                let g = got.get(a).unwrap();
                prop_assert!((g - wv).abs() <= 1e-10 * wv.abs().max(1.0), "{a}: {g} vs {wv}");
            }
            let back = got.rescale(&map.inverse()).unwrap();
            for (a, v) in y.iter() {
                let b = back.get(a).unwrap();
                prop_assert!((b - v).abs() <= 1e-10 * v.abs().max(1.0));
            }
        }

        #[test]
        fn monomial_is_multiplicative(
            z in prop::collection::vec(-3.0f64..3.0, 4),
            a in prop::collection::vec(0u32..5, 4),
            b in prop::collection::vec(0u32..5, 4),
        ) {
            let (a, b) = (MultiIndex::new(a), MultiIndex::new(b));
            let lhs = monomial(&z, &a.add(&b));
            let rhs = monomial(&z, &a) * monomial(&z, &b);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn unit_round_trip_is_tight() {
        let dom = BoxDomain::from_bounds(&[(0.0, 3.5), (-1.0, 1.0), (-2.0, 2.0)]).unwrap();
        let pts = vec![vec![0.3, -1.0, 1.5], vec![2.9, 1.0, -0.4], vec![1.7, 0.2, 0.0]];
        let w = vec![0.7, 1.1, 1.9];
        let ix = enumerate_indices(3, 8);
        let y = MomentVector::from_values(Layout::occupation(1, 1), 8, dom.clone(), &atomic_moments(&pts, &w, &ix))
            .unwrap();
        let m = AffineMap::to_unit(&dom);
        let back = y.rescale(&m).unwrap().rescale(&m.inverse()).unwrap();
        for (a, v) in y.iter() {
            assert!((back.get(a).unwrap() - v).abs() <= 1e-12 * v.abs().max(1.0), "{a}");
        }
    }
}
