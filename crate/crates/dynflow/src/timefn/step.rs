//! Right-continuous piecewise-constant functions on the time axis.

use super::rat::Rat;
use crate::error::Error;
use crate::Result;
use std::fmt;

/// Piecewise-constant function, right-continuous, zero outside its listed
/// support. `values[i]` holds on `[breaks[i], breaks[i+1])`.
///
/// The representation is canonical: breakpoints strictly increase, adjacent
/// pieces carry different values, and the first and last pieces are nonzero.
/// Two step functions are equal as functions iff they are structurally equal.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct StepFn {
    breaks: Vec<Rat>,
    values: Vec<Rat>,
}

impl StepFn {
    /// The zero function.
    pub fn zero() -> StepFn {
        StepFn::default()
    }

    /// `c · 1_[a,b)`.
    pub fn rect(a: Rat, b: Rat, c: Rat) -> StepFn {
        assert!(a <= b, "rect with reversed interval");
        if a == b || c.is_zero() {
            return StepFn::zero();
        }
        StepFn {
            breaks: vec![a, b],
            values: vec![c],
        }
    }

    /// Builds from (start, end, value) pieces; overlapping pieces add up.
    pub fn from_pieces<I: IntoIterator<Item = (Rat, Rat, Rat)>>(pieces: I) -> StepFn {
        let mut acc = StepFn::zero();
        for (a, b, c) in pieces {
            acc = acc.add(&StepFn::rect(a, b, c));
        }
        acc
    }

    /// Canonicalizes a list of contiguous or gapped runs (start, end, value).
    /// Runs must be sorted by start and non-overlapping; gaps are implicit
    /// zeros.
    pub(crate) fn from_runs(runs: Vec<(Rat, Rat, Rat)>) -> StepFn {
        // fill gaps with explicit zero runs so a single merge pass suffices
        let mut filled: Vec<(Rat, Rat, Rat)> = Vec::with_capacity(runs.len());
        for (a, b, v) in runs {
            assert!(a <= b, "run with reversed interval");
            if a == b {
                continue;
            }
            if let Some(last) = filled.last() {
                assert!(last.1 <= a, "runs must be sorted and disjoint");
                if last.1 < a {
                    let gap = (last.1.clone(), a.clone(), Rat::zero());
                    filled.push(gap);
                }
            }
            filled.push((a, b, v));
        }
        // merge equal neighbours, drop leading zeros
        let mut breaks: Vec<Rat> = Vec::new();
        let mut values: Vec<Rat> = Vec::new();
        for (a, b, v) in filled {
            if values.is_empty() && v.is_zero() {
                continue;
            }
            if values.last() == Some(&v) {
                *breaks.last_mut().unwrap() = b;
                continue;
            }
            if values.is_empty() {
                breaks.push(a);
            }
            breaks.push(b);
            values.push(v);
        }
        // trim trailing zeros
        while values.last().map(Rat::is_zero) == Some(true) {
            values.pop();
            breaks.pop();
        }
        if values.is_empty() {
            return StepFn::zero();
        }
        StepFn { breaks, values }
    }

    /// Value at `t` (right-continuous, zero outside the support).
    pub fn value_at(&self, t: &Rat) -> Rat {
        if self.values.is_empty() || *t < self.breaks[0] || *t >= *self.breaks.last().unwrap() {
            return Rat::zero();
        }
        let i = match self.breaks.binary_search(t) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.values[i].clone()
    }

    /// Piecewise view: (start, end, value) for every stored piece.
    pub fn pieces(&self) -> impl Iterator<Item = (&Rat, &Rat, &Rat)> {
        self.values
            .iter()
            .enumerate()
            .map(move |(i, v)| (&self.breaks[i], &self.breaks[i + 1], v))
    }

    /// Stored breakpoints (empty for the zero function).
    pub fn breakpoints(&self) -> &[Rat] {
        &self.breaks
    }

    pub fn is_zero_fn(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_nonnegative(&self) -> bool {
        self.values.iter().all(|v| !v.is_negative())
    }

    /// Smallest closed interval containing the support, if nonempty.
    pub fn support(&self) -> Option<(Rat, Rat)> {
        if self.values.is_empty() {
            None
        } else {
            Some((self.breaks[0].clone(), self.breaks.last().unwrap().clone()))
        }
    }

    fn combine(&self, other: &StepFn, op: impl Fn(&Rat, &Rat) -> Rat) -> StepFn {
        debug_assert!(op(&Rat::zero(), &Rat::zero()).is_zero());
        let mut cuts: Vec<Rat> = self
            .breaks
            .iter()
            .chain(other.breaks.iter())
            .cloned()
            .collect();
        cuts.sort();
        cuts.dedup();
        if cuts.len() < 2 {
            return StepFn::zero();
        }
        let runs = cuts
            .windows(2)
            .map(|w| {
                let v = op(&self.value_at(&w[0]), &other.value_at(&w[0]));
                (w[0].clone(), w[1].clone(), v)
            })
            .collect();
        StepFn::from_runs(runs)
    }

    pub fn add(&self, other: &StepFn) -> StepFn {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &StepFn) -> StepFn {
        self.combine(other, |a, b| a - b)
    }

    /// Sums a collection of step functions.
    pub fn sum<'a, I: IntoIterator<Item = &'a StepFn>>(fs: I) -> StepFn {
        fs.into_iter().fold(StepFn::zero(), |acc, f| acc.add(f))
    }

    pub fn scale(&self, c: &Rat) -> StepFn {
        if c.is_zero() {
            return StepFn::zero();
        }
        StepFn {
            breaks: self.breaks.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// Pointwise `min(f, c)` for a constant `c ≥ 0`.
    pub fn min_const(&self, c: &Rat) -> StepFn {
        assert!(!c.is_negative());
        let runs = self
            .pieces()
            .map(|(a, b, v)| (a.clone(), b.clone(), v.clone().min(c.clone())))
            .collect();
        StepFn::from_runs(runs)
    }

    /// Pointwise `max(f, 0)`.
    pub fn clamp_below_zero(&self) -> StepFn {
        let runs = self
            .pieces()
            .map(|(a, b, v)| (a.clone(), b.clone(), v.clone().max(Rat::zero())))
            .collect();
        StepFn::from_runs(runs)
    }

    /// Exact translate: `t ↦ f(t - dt)`.
    pub fn shift(&self, dt: &Rat) -> StepFn {
        StepFn {
            breaks: self.breaks.iter().map(|b| b + dt).collect(),
            values: self.values.clone(),
        }
    }

    /// Exact integral over `[a, b]`.
    pub fn integrate(&self, a: &Rat, b: &Rat) -> Result<Rat> {
        if a > b {
            return Err(Error::ReversedInterval {
                a: a.to_string(),
                b: b.to_string(),
            });
        }
        let mut total = Rat::zero();
        for (lo, hi, v) in self.pieces() {
            if v.is_zero() {
                continue;
            }
            let lo = if lo > a { lo.clone() } else { a.clone() };
            let hi = if hi < b { hi.clone() } else { b.clone() };
            if lo < hi {
                total += (&hi - &lo) * v.clone();
            }
        }
        Ok(total)
    }

    /// Integral over the whole axis.
    pub fn total_mass(&self) -> Rat {
        self.pieces()
            .fold(Rat::zero(), |acc, (a, b, v)| acc + (b - a) * v.clone())
    }

    /// `f ≤ g` pointwise.
    pub fn le_pointwise(&self, other: &StepFn) -> bool {
        !self.sub(other).values.iter().any(Rat::is_positive)
    }
}

impl fmt::Debug for StepFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.values.is_empty() {
            return write!(f, "StepFn(0)");
        }
        write!(f, "StepFn(")?;
        for (i, (a, b, v)) in self.pieces().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{v}·1_[{a},{b})")?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::super::rat::rat;
    use super::*;

    fn r(n: i64) -> Rat {
        rat(n)
    }

    #[test]
    fn canonical_form() {
        // adjacent equal values merge
        let f = StepFn::from_pieces([
            (r(0), r(1), r(2)),
            (r(1), r(2), r(2)),
            (r(2), r(3), r(5)),
        ]);
        assert_eq!(f.breakpoints(), &[r(0), r(2), r(3)]);
        // zero tails trim, interior zeros stay implicit via gap
        let g = StepFn::from_pieces([(r(0), r(1), r(1)), (r(3), r(4), r(1))]);
        assert_eq!(g.breakpoints(), &[r(0), r(1), r(3), r(4)]);
        assert_eq!(g.value_at(&r(2)), r(0));
        assert_eq!(g.value_at(&r(3)), r(1));
        // rect of zero height is the zero function
        assert!(StepFn::rect(r(0), r(5), r(0)).is_zero_fn());
        // cancellation yields the zero function
        let z = f.sub(&f);
        assert!(z.is_zero_fn());
    }

    #[test]
    fn right_continuity() {
        let f = StepFn::rect(r(1), r(2), r(6));
        assert_eq!(f.value_at(&r(1)), r(6));
        assert_eq!(f.value_at(&r(2)), r(0));
        assert_eq!(f.value_at(&rat((3, 2))), r(6));
        assert_eq!(f.value_at(&r(0)), r(0));
    }

    #[test]
    fn integrate_examples() {
        // 6·1_[0,1] over [0,1] -> 6
        let f = StepFn::rect(r(0), r(1), r(6));
        assert_eq!(f.integrate(&r(0), &r(1)).unwrap(), r(6));
        // zero function over anything -> 0
        assert_eq!(StepFn::zero().integrate(&r(0), &r(10)).unwrap(), r(0));
        // 3·1_[0,2] over [1,3] -> 3 (closed-form rectangle area)
        let g = StepFn::rect(r(0), r(2), r(3));
        assert_eq!(g.integrate(&r(1), &r(3)).unwrap(), r(3));
        // reversed interval errors
        assert!(matches!(
            g.integrate(&r(2), &r(1)),
            Err(Error::ReversedInterval { .. })
        ));
    }

    /// Riemann-sum cross-check for the closed-form integral values above.
    #[test]
    fn integrate_matches_riemann_oracle() {
        let g = StepFn::rect(r(0), r(2), r(3));
        let exact = g.integrate(&r(1), &r(3)).unwrap().to_f64();
        let dt = 1e-4;
        let mut acc = 0.0;
        let mut t = 1.0;
        while t < 3.0 {
            let tr = Rat::new((t * 1e6) as i64, 1_000_000);
            acc += g.value_at(&tr).to_f64() * dt;
            t += dt;
        }
        assert!((acc - exact).abs() < 1e-3, "riemann {acc} vs exact {exact}");
    }

    #[test]
    fn arithmetic_and_clamps() {
        let f = StepFn::rect(r(0), r(2), r(3));
        let g = StepFn::rect(r(1), r(3), r(5));
        let s = f.add(&g);
        assert_eq!(s.value_at(&rat((1, 2))), r(3));
        assert_eq!(s.value_at(&rat((3, 2))), r(8));
        assert_eq!(s.value_at(&rat((5, 2))), r(5));
        assert_eq!(s.total_mass(), f.total_mass() + g.total_mass());

        let d = f.sub(&g);
        assert_eq!(d.value_at(&rat((3, 2))), r(-2));
        assert_eq!(d.clamp_below_zero().value_at(&rat((3, 2))), r(0));
        assert_eq!(d.clamp_below_zero().value_at(&rat((1, 2))), r(3));

        assert_eq!(f.min_const(&r(2)).value_at(&r(1)), r(2));
        assert_eq!(f.scale(&rat((1, 3))).value_at(&r(1)), r(1));
        assert_eq!(f.shift(&r(4)).support().unwrap(), (r(4), r(6)));
    }

    #[test]
    fn pointwise_order() {
        let f = StepFn::rect(r(0), r(2), r(1));
        let g = StepFn::rect(r(0), r(3), r(2));
        assert!(f.le_pointwise(&g));
        assert!(!g.le_pointwise(&f));
        assert!(f.le_pointwise(&f));
    }
}
