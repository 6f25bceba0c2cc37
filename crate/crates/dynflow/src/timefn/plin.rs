//! Piecewise-linear functions on a bounded interval.

use super::rat::Rat;
use super::step::StepFn;
use crate::error::Error;
use crate::Result;
use std::fmt;

/// Piecewise-linear function on a closed interval, given by its knots.
///
/// A repeated x-coordinate encodes an upward jump; `eval` at a jump point
/// returns the lower (left) value, which is the min-selection convention used
/// by generalized inverses. Cumulatives, queue profiles, delays and exit time
/// maps are always continuous (no repeated knots); jumps only arise from
/// inverting functions with plateaus.
#[derive(Clone, PartialEq, Eq)]
pub struct PLin {
    xs: Vec<Rat>,
    ys: Vec<Rat>,
}

impl PLin {
    /// Builds from knots, canonicalizing (drops collinear interior knots and
    /// zero-height jumps). Panics on structural misuse: fewer than two knots,
    /// decreasing x, more than two knots sharing an x, or downward jumps.
    pub fn from_knots(knots: Vec<(Rat, Rat)>) -> PLin {
        assert!(knots.len() >= 2, "PLin needs at least two knots");
        let mut xs: Vec<Rat> = Vec::with_capacity(knots.len());
        let mut ys: Vec<Rat> = Vec::with_capacity(knots.len());
        for (x, y) in knots {
            if let (Some(px), Some(py)) = (xs.last(), ys.last()) {
                assert!(*px <= x, "knot x-coordinates must be nondecreasing");
                if *px == x {
                    if *py == y {
                        continue; // zero-height jump
                    }
                    assert!(*py < y, "downward jumps are not representable");
                    if xs.len() >= 2 && xs[xs.len() - 2] == *px {
                        panic!("more than two knots share an x-coordinate");
                    }
                }
            }
            xs.push(x);
            ys.push(y);
        }
        assert!(
            xs.len() >= 2 && xs[0] < *xs.last().unwrap(),
            "PLin domain must be a nontrivial interval"
        );
        // drop interior knots collinear with both neighbours (never a jump
        // endpoint)
        let mut i = 1;
        while i + 1 < xs.len() {
            let jump_left = xs[i - 1] == xs[i];
            let jump_right = xs[i] == xs[i + 1];
            if !jump_left && !jump_right {
                let lhs = (&ys[i] - &ys[i - 1]) * (&xs[i + 1] - &xs[i]);
                let rhs = (&ys[i + 1] - &ys[i]) * (&xs[i] - &xs[i - 1]);
                if lhs == rhs {
                    xs.remove(i);
                    ys.remove(i);
                    continue;
                }
            }
            i += 1;
        }
        PLin { xs, ys }
    }

    /// Constant function `c` on `[lo, hi]`.
    pub fn constant(lo: Rat, hi: Rat, c: Rat) -> PLin {
        PLin::from_knots(vec![(lo, c.clone()), (hi, c)])
    }

    /// Identity on `[lo, hi]`.
    pub fn identity(lo: Rat, hi: Rat) -> PLin {
        PLin::from_knots(vec![(lo.clone(), lo), (hi.clone(), hi)])
    }

    /// Cumulative `F(t) = ∫_{lo}^{t} f` of a step function over `[lo, hi]`.
    /// The support of `f` must lie within `[lo, hi]`.
    pub fn cumulative_of(f: &StepFn, lo: &Rat, hi: &Rat) -> PLin {
        if let Some((s0, s1)) = f.support() {
            assert!(*lo <= s0 && s1 <= *hi, "support outside cumulative domain");
        }
        let mut knots = vec![(lo.clone(), Rat::zero())];
        let mut acc = Rat::zero();
        for (a, b, v) in f.pieces() {
            if knots.last().unwrap().0 < *a {
                knots.push((a.clone(), acc.clone()));
            }
            acc += (b - a) * v.clone();
            knots.push((b.clone(), acc.clone()));
        }
        if knots.last().unwrap().0 < *hi {
            knots.push((hi.clone(), acc));
        }
        PLin::from_knots(knots)
    }

    pub fn domain(&self) -> (&Rat, &Rat) {
        (&self.xs[0], self.xs.last().unwrap())
    }

    pub fn knots(&self) -> impl Iterator<Item = (&Rat, &Rat)> {
        self.xs.iter().zip(self.ys.iter())
    }

    pub fn knot_xs(&self) -> &[Rat] {
        &self.xs
    }

    pub fn is_continuous(&self) -> bool {
        self.xs.windows(2).all(|w| w[0] < w[1])
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[0] <= w[1])
    }

    /// Value at `t`; at a jump the lower (left) value. Panics outside the
    /// domain — use [`PLin::try_eval`] for checked evaluation.
    pub fn eval(&self, t: &Rat) -> Rat {
        self.try_eval(t).expect("evaluation outside PLin domain")
    }

    /// Checked evaluation.
    pub fn try_eval(&self, t: &Rat) -> Result<Rat> {
        let (lo, hi) = self.domain();
        if t < lo || t > hi {
            return Err(Error::Domain {
                value: t.to_string(),
                lo: lo.to_string(),
                hi: hi.to_string(),
            });
        }
        // first knot index with x >= t
        let i0 = self.xs.partition_point(|x| x < t);
        if self.xs[i0] == *t {
            return Ok(self.ys[i0].clone()); // first occurrence: left value
        }
        let (x1, y1) = (&self.xs[i0 - 1], &self.ys[i0 - 1]);
        let (x2, y2) = (&self.xs[i0], &self.ys[i0]);
        Ok(y1 + (y2 - y1) * (t - x1) / (x2 - x1))
    }

    /// Right limit at `t` (differs from `eval` only at jump points).
    pub fn eval_right(&self, t: &Rat) -> Rat {
        let i0 = self.xs.partition_point(|x| x < t);
        if self.xs.get(i0) == Some(t) {
            let j = if self.xs.get(i0 + 1) == Some(t) { i0 + 1 } else { i0 };
            return self.ys[j].clone();
        }
        self.eval(t)
    }

    fn refine_with(&self, other: &PLin) -> Vec<Rat> {
        debug_assert_eq!(self.domain(), other.domain());
        let mut cuts: Vec<Rat> = self.xs.iter().chain(other.xs.iter()).cloned().collect();
        cuts.sort();
        cuts.dedup();
        cuts
    }

    fn combine(&self, other: &PLin, op: impl Fn(&Rat, &Rat) -> Rat) -> PLin {
        assert!(self.is_continuous() && other.is_continuous());
        let cuts = self.refine_with(other);
        let knots = cuts
            .into_iter()
            .map(|x| {
                let y = op(&self.eval(&x), &other.eval(&x));
                (x, y)
            })
            .collect();
        PLin::from_knots(knots)
    }

    pub fn add(&self, other: &PLin) -> PLin {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &PLin) -> PLin {
        self.combine(other, |a, b| a - b)
    }

    pub fn scale(&self, c: &Rat) -> PLin {
        self.scale_shift(c, &Rat::zero())
    }

    /// `y ↦ α·y + β` applied to all values. With `α < 0` the input must be
    /// continuous (a flipped jump would point downward).
    pub fn scale_shift(&self, alpha: &Rat, beta: &Rat) -> PLin {
        if alpha.is_negative() {
            assert!(self.is_continuous());
        }
        PLin::from_knots(
            self.knots()
                .map(|(x, y)| (x.clone(), y * alpha + beta))
                .collect(),
        )
    }

    /// Pointwise `max(f, c)` with a constant; adds crossing knots exactly.
    pub fn max_const(&self, c: &Rat) -> PLin {
        assert!(self.is_continuous());
        let mut knots: Vec<(Rat, Rat)> = Vec::new();
        for w in 0..self.xs.len() - 1 {
            let (x1, y1) = (&self.xs[w], &self.ys[w]);
            let (x2, y2) = (&self.xs[w + 1], &self.ys[w + 1]);
            knots.push((x1.clone(), y1.clone().max(c.clone())));
            // crossing point of the segment with level c
            if (y1 < c && y2 > c) || (y1 > c && y2 < c) {
                let t = x1 + (x2 - x1) * &((c - y1) / (y2 - y1));
                knots.push((t, c.clone()));
            }
        }
        let (xl, yl) = (self.xs.last().unwrap(), self.ys.last().unwrap());
        knots.push((xl.clone(), yl.clone().max(c.clone())));
        PLin::from_knots(knots)
    }

    /// `t ↦ f(t - dt)` on the new domain `[lo, hi]`, clamping the argument to
    /// the domain of `f` (used for lagged cumulatives, which are constant
    /// beyond their ends).
    pub fn shift_time_clamped(&self, dt: &Rat, lo: &Rat, hi: &Rat) -> PLin {
        assert!(self.is_continuous());
        let (slo, shi) = self.domain();
        let clamp_eval = |t: &Rat| {
            let arg = t - dt;
            let arg = if arg < *slo {
                slo.clone()
            } else if arg > *shi {
                shi.clone()
            } else {
                arg
            };
            self.eval(&arg)
        };
        let mut knots = vec![(lo.clone(), clamp_eval(lo))];
        for x in &self.xs {
            let t = x + dt;
            if t > *lo && t < *hi {
                knots.push((t.clone(), clamp_eval(&t)));
            }
        }
        knots.push((hi.clone(), clamp_eval(hi)));
        PLin::from_knots(knots)
    }

    /// Restriction to `[a, b] ⊆ domain`.
    pub fn restrict(&self, a: &Rat, b: &Rat) -> PLin {
        assert!(a < b);
        let mut knots = vec![(a.clone(), self.eval(a))];
        for (x, y) in self.knots() {
            if x > a && x < b {
                knots.push((x.clone(), y.clone()));
            }
        }
        knots.push((b.clone(), self.eval(b)));
        PLin::from_knots(knots)
    }

    /// Largest value attained (extremes sit at knots).
    pub fn max_value(&self) -> Rat {
        self.ys.iter().cloned().reduce(Rat::max).unwrap()
    }

    /// Largest value attained on `[a, b] ⊆ domain`.
    pub fn max_on(&self, a: &Rat, b: &Rat) -> Rat {
        let mut best = self.eval(a).max(self.eval(b));
        for (x, y) in self.knots() {
            if x > a && x < b && *y > best {
                best = y.clone();
            }
        }
        best
    }

    pub fn min_value(&self) -> Rat {
        self.ys.iter().cloned().reduce(Rat::min).unwrap()
    }

    /// Does the restriction to `[a, b]` equal the constant `c`?
    pub fn is_constant_on(&self, a: &Rat, b: &Rat, c: &Rat) -> bool {
        if self.eval(a) != *c || self.eval(b) != *c {
            return false;
        }
        self.knots()
            .filter(|(x, _)| *x > a && *x < b)
            .all(|(_, y)| y == c)
    }

    /// `self ≤ other` pointwise (same domain).
    pub fn le_pointwise(&self, other: &PLin) -> bool {
        let cuts = self.refine_with(other);
        cuts.iter().all(|x| {
            self.eval(x) <= other.eval(x) && self.eval_right(x) <= other.eval_right(x)
        })
    }

    /// Exact integral over `[a, b] ⊆ domain` (jumps carry no mass).
    pub fn integrate(&self, a: &Rat, b: &Rat) -> Result<Rat> {
        if a > b {
            return Err(Error::ReversedInterval {
                a: a.to_string(),
                b: b.to_string(),
            });
        }
        let mut total = Rat::zero();
        for i in 0..self.xs.len() - 1 {
            let (x1, x2) = (&self.xs[i], &self.xs[i + 1]);
            if x1 == x2 {
                continue;
            }
            let lo = if x1 > a { x1.clone() } else { a.clone() };
            let hi = if x2 < b { x2.clone() } else { b.clone() };
            if lo >= hi {
                continue;
            }
            let y_lo = &self.ys[i] + (&self.ys[i + 1] - &self.ys[i]) * (&lo - x1) / (x2 - x1);
            let y_hi = &self.ys[i] + (&self.ys[i + 1] - &self.ys[i]) * (&hi - x1) / (x2 - x1);
            total += (y_lo + y_hi) * (&hi - &lo) / Rat::int(2);
        }
        Ok(total)
    }

    /// Slope function of a continuous piecewise-linear function.
    pub fn derivative_step(&self) -> Result<StepFn> {
        let mut runs = Vec::with_capacity(self.xs.len());
        for i in 0..self.xs.len() - 1 {
            let (x1, x2) = (&self.xs[i], &self.xs[i + 1]);
            if x1 == x2 {
                return Err(Error::Atom {
                    at: x1.to_string(),
                    mass: (&self.ys[i + 1] - &self.ys[i]).to_string(),
                });
            }
            let slope = (&self.ys[i + 1] - &self.ys[i]) / (x2 - x1);
            runs.push((x1.clone(), x2.clone(), slope));
        }
        Ok(StepFn::from_runs(runs))
    }

    /// Composition `self ∘ inner`. `inner` must be continuous and
    /// nondecreasing with its range inside the domain of `self`; jumps in
    /// `self` become jumps of the composition.
    pub fn compose(&self, inner: &PLin) -> Result<PLin> {
        assert!(inner.is_continuous() && inner.is_nondecreasing());
        let (lo, hi) = self.domain();
        let (in_lo, in_hi) = inner.domain();
        let (r_lo, r_hi) = (inner.eval(in_lo), inner.eval(in_hi));
        if r_lo < *lo || r_hi > *hi {
            return Err(Error::Horizon {
                detail: format!(
                    "composition range [{r_lo}, {r_hi}] escapes outer domain [{lo}, {hi}]"
                ),
            });
        }
        // cut at inner knots and at preimages of outer knots
        let mut cuts: Vec<Rat> = inner.xs.clone();
        for x in &self.xs {
            for (a, b) in inner.preimage_intervals(x, x) {
                cuts.push(a);
                cuts.push(b);
            }
        }
        cuts.sort();
        cuts.dedup();
        let mut knots: Vec<(Rat, Rat)> = Vec::new();
        for w in cuts.windows(2) {
            let (t1, t2) = (&w[0], &w[1]);
            let mid = Rat::mid(t1, t2);
            let y_mid = inner.eval(&mid);
            // the open image (inner(t1), inner(t2)) avoids outer knots, so an
            // affine representation around y_mid is valid on the whole piece
            let (alpha, beta) = self.affine_at(&y_mid);
            knots.push((t1.clone(), &alpha * &inner.eval(t1) + &beta));
            knots.push((t2.clone(), &alpha * &inner.eval(t2) + &beta));
        }
        Ok(PLin::from_knots(knots))
    }

    /// Affine coefficients (slope, intercept) valid in a neighbourhood of
    /// `x`; at a knot the right piece wins, at a jump the left value (min
    /// convention).
    fn affine_at(&self, x: &Rat) -> (Rat, Rat) {
        let i0 = self.xs.partition_point(|v| v < x);
        if self.xs[i0] == *x {
            if i0 + 1 < self.xs.len() && self.xs[i0 + 1] > self.xs[i0] {
                return self.piece_affine(i0);
            }
            if i0 > 0 && self.xs[i0 - 1] < self.xs[i0] {
                return self.piece_affine(i0 - 1);
            }
            // jump point with no affine neighbour on the left
            return (Rat::zero(), self.ys[i0].clone());
        }
        self.piece_affine(i0 - 1)
    }

    fn piece_affine(&self, i: usize) -> (Rat, Rat) {
        let (x1, y1) = (&self.xs[i], &self.ys[i]);
        let (x2, y2) = (&self.xs[i + 1], &self.ys[i + 1]);
        let slope = (y2 - y1) / (x2 - x1);
        let intercept = y1 - &(&slope * x1);
        (slope, intercept)
    }

    /// Exact preimage `f^{-1}([a, b])` as a sorted list of disjoint closed
    /// intervals (clipped to the domain).
    pub fn preimage_intervals(&self, a: &Rat, b: &Rat) -> Vec<(Rat, Rat)> {
        assert!(a <= b);
        let mut raw: Vec<(Rat, Rat)> = Vec::new();
        for i in 0..self.xs.len() - 1 {
            let (x1, y1) = (&self.xs[i], &self.ys[i]);
            let (x2, y2) = (&self.xs[i + 1], &self.ys[i + 1]);
            if x1 == x2 {
                // jump: only the left value is attained at x1 (handled below
                // as the knot of a neighbouring piece); the skipped values
                // contribute nothing
                if y1 >= a && y1 <= b {
                    raw.push((x1.clone(), x1.clone()));
                }
                continue;
            }
            if y1 == y2 {
                if y1 >= a && y1 <= b {
                    raw.push((x1.clone(), x2.clone()));
                }
                continue;
            }
            let (min_y, max_y) = if y1 < y2 { (y1, y2) } else { (y2, y1) };
            if max_y < a || min_y > b {
                continue;
            }
            let slope = (y2 - y1) / (x2 - x1);
            let t_of = |y: &Rat| x1 + &((y - y1) / &slope);
            let (mut t_a, mut t_b) = if slope.is_positive() {
                (
                    if y1 >= a { x1.clone() } else { t_of(a) },
                    if y2 <= b { x2.clone() } else { t_of(b) },
                )
            } else {
                (
                    if y1 <= b { x1.clone() } else { t_of(b) },
                    if y2 >= a { x2.clone() } else { t_of(a) },
                )
            };
            if t_a > t_b {
                std::mem::swap(&mut t_a, &mut t_b);
            }
            raw.push((t_a, t_b));
        }
        // merge touching intervals
        raw.sort();
        let mut merged: Vec<(Rat, Rat)> = Vec::new();
        for (a, b) in raw {
            match merged.last_mut() {
                Some(last) if a <= last.1 => {
                    if b > last.1 {
                        last.1 = b;
                    }
                }
                _ => merged.push((a, b)),
            }
        }
        merged
    }

    /// Generalized inverse selecting the earliest argument:
    /// `y ↦ min{ t : f(t) = y }` for continuous nondecreasing `f`. Plateaus of
    /// `f` become jumps of the inverse; evaluation at the jump level yields
    /// the plateau's left endpoint.
    pub fn min_inverse(&self) -> Result<PLin> {
        assert!(self.is_continuous() && self.is_nondecreasing());
        if self.ys[0] == *self.ys.last().unwrap() {
            return Err(Error::Invariant(
                "min_inverse of a constant function has a degenerate domain".into(),
            ));
        }
        // mirror every knot; a plateau piece then yields two knots at the
        // same level, i.e. the jump of the inverse, and the min convention
        // falls out of `eval` picking the first
        let mut knots: Vec<(Rat, Rat)> = vec![(self.ys[0].clone(), self.xs[0].clone())];
        for i in 1..self.xs.len() {
            knots.push((self.ys[i].clone(), self.xs[i].clone()));
        }
        // a trailing plateau would end the function with a jump — drop it
        while knots.len() >= 2 && knots[knots.len() - 1].0 == knots[knots.len() - 2].0 {
            knots.pop();
        }
        Ok(PLin::from_knots(knots))
    }
}

impl fmt::Debug for PLin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PLin[")?;
        for (i, (x, y)) in self.knots().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({x},{y})")?;
        }
        write!(f, "]")
    }
}

/// Density of the image measure `(f·σ) ∘ T^{-1}` for a nondecreasing time map
/// `T`: the rate observed after transporting each mass element of `f` through
/// `T`. Errors with [`Error::Atom`] when `T` is constant on a set carrying
/// positive `f`-mass, in which case no density exists.
pub fn pushforward(f: &StepFn, t_map: &PLin) -> Result<StepFn> {
    pushforward_impl(f, t_map, false)
}

/// Like [`pushforward`], but mass sitting on a plateau of the map is dropped
/// instead of raising an atom error. Used by fixed-point iterations whose
/// transient states may combine flows with stale time maps; at a genuine
/// fixed point no mass meets a plateau and the result agrees with
/// [`pushforward`].
pub fn pushforward_dropping_atoms(f: &StepFn, t_map: &PLin) -> StepFn {
    pushforward_impl(f, t_map, true).expect("lossy pushforward cannot fail")
}

fn pushforward_impl(f: &StepFn, t_map: &PLin, drop_atoms: bool) -> Result<StepFn> {
    assert!(t_map.is_nondecreasing(), "pushforward needs a monotone map");
    if let Some((s0, s1)) = f.support() {
        let (lo, hi) = t_map.domain();
        if s0 < *lo || s1 > *hi {
            return Err(Error::Domain {
                value: format!("support [{s0}, {s1}]"),
                lo: lo.to_string(),
                hi: hi.to_string(),
            });
        }
    }
    let xs = t_map.knot_xs();
    let mut runs: Vec<(Rat, Rat, Rat)> = Vec::new();
    for i in 0..xs.len() - 1 {
        let (x1, x2) = (&xs[i], &xs[i + 1]);
        if x1 == x2 {
            continue; // jump: no mass at a single point
        }
        let y1 = t_map.eval_right(x1);
        let y2 = t_map.eval(x2);
        if y1 == y2 {
            if !drop_atoms {
                let mass = f.integrate(x1, x2)?;
                if mass.is_positive() {
                    return Err(Error::Atom {
                        at: y1.to_string(),
                        mass: mass.to_string(),
                    });
                }
            }
            continue;
        }
        let slope = (&y2 - &y1) / (x2 - x1);
        for (p, q, v) in f.pieces() {
            if v.is_zero() {
                continue;
            }
            let p = if p > x1 { p.clone() } else { x1.clone() };
            let q = if q < x2 { q.clone() } else { x2.clone() };
            if p >= q {
                continue;
            }
            let out_a = &y1 + &((&p - x1) * slope.clone());
            let out_b = &y1 + &((&q - x1) * slope.clone());
            runs.push((out_a, out_b, v / &slope));
        }
    }
    Ok(StepFn::from_runs(runs))
}
