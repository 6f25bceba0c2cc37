//! Costs, tolled user-equilibrium checks, and implementability checks with
//! witnesses.

use crate::error::Error;
use crate::network::{enumerate_walks, Instance, Walk, WalkFlow};
use crate::param::{arrival_maps, propagate, FrozenTimes};
use crate::timefn::{PLin, Rat, StepFn};
use crate::vickrey::LoadingResult;
use crate::Result;

/// Nonnegative per-edge toll rates (paid on entry, as a function of entry
/// time).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TollSchedule {
    pub per_edge: Vec<StepFn>,
}

impl TollSchedule {
    pub fn zero(n_edges: usize) -> TollSchedule {
        TollSchedule {
            per_edge: vec![StepFn::zero(); n_edges],
        }
    }

    pub fn new(per_edge: Vec<StepFn>) -> Result<TollSchedule> {
        for (e, p) in per_edge.iter().enumerate() {
            if !p.is_nonnegative() {
                return Err(Error::Document(format!("negative toll on edge #{e}")));
            }
        }
        Ok(TollSchedule { per_edge })
    }
}

/// Exact integral of a piecewise-linear function against a step function.
pub fn integrate_plin_times_step(p: &PLin, f: &StepFn, a: &Rat, b: &Rat) -> Rat {
    let mut cuts: Vec<Rat> = p
        .knot_xs()
        .iter()
        .chain(f.breakpoints().iter())
        .filter(|x| **x > *a && **x < *b)
        .cloned()
        .collect();
    cuts.push(a.clone());
    cuts.push(b.clone());
    cuts.sort();
    cuts.dedup();
    let mut total = Rat::zero();
    let two = Rat::int(2);
    for w in cuts.windows(2) {
        let (t1, t2) = (&w[0], &w[1]);
        let c = f.value_at(&Rat::mid(t1, t2));
        if c.is_zero() {
            continue;
        }
        let trapezoid = (p.eval(t1) + p.eval(t2)) * (t2 - t1) / &two;
        total += trapezoid * c;
    }
    total
}

/// Total travel time `Σ_e ∫ D_e(t)·g_e(t) dt` of a loading.
pub fn total_travel_time(lr: &LoadingResult) -> Rat {
    let (lo, hi) = lr.horizon.full();
    lr.dynamics.iter().fold(Rat::zero(), |acc, d| {
        acc + integrate_plin_times_step(&d.delay, &d.inflow, &lo, &hi)
    })
}

/// Travel time experienced by one commodity: `Σ_e ∫ D_e(t)·g_e^i(t) dt`.
pub fn commodity_travel_time(lr: &LoadingResult, commodity: usize) -> Rat {
    let (lo, hi) = lr.horizon.full();
    lr.dynamics
        .iter()
        .zip(&lr.splits)
        .fold(Rat::zero(), |acc, (d, split)| {
            acc + integrate_plin_times_step(&d.delay, &split[commodity], &lo, &hi)
        })
}

/// Weighted walk travel time `Ψ_w(t) = γ_i · (sink arrival − t)` for a walk
/// entered at `t`, under frozen times.
pub fn walk_cost(ft: &FrozenTimes, inst: &Instance, walk: &Walk, t: &Rat) -> Result<Rat> {
    let maps = arrival_maps(ft, &walk.edges)?;
    let gamma = &inst.commodities[walk.commodity].vot;
    Ok((maps.last().unwrap().try_eval(t)? - t) * gamma.clone())
}

/// Total toll paid along a walk entered at `t`: each edge's toll at its
/// entry time.
pub fn toll_cost(
    ft: &FrozenTimes,
    tolls: &TollSchedule,
    walk: &Walk,
    t: &Rat,
) -> Result<Rat> {
    let maps = arrival_maps(ft, &walk.edges)?;
    let mut total = Rat::zero();
    for (j, &e) in walk.edges.iter().enumerate() {
        total += tolls.per_edge[e].value_at(&maps[j].try_eval(t)?);
    }
    Ok(total)
}

/// Weighted travel-time profile of a walk as a function of entry time, on
/// `[0, t_active_end]`.
fn psi_profile(ft: &FrozenTimes, inst: &Instance, walk: &Walk) -> Result<PLin> {
    let maps = arrival_maps(ft, &walk.edges)?;
    let (lo, hi) = ft.horizon.full();
    let id = PLin::identity(lo, hi);
    let gamma = &inst.commodities[walk.commodity].vot;
    let psi = maps.last().unwrap().sub(&id).scale(gamma);
    Ok(psi.restrict(&Rat::zero(), ft.horizon.active_end()))
}

/// Toll profile of a walk as a right-continuous step function of entry time
/// on `[0, t_active_end]` (agrees with `p ∘ A` off a null set).
pub fn walk_toll_profile(
    ft: &FrozenTimes,
    tolls: &TollSchedule,
    walk: &Walk,
) -> Result<StepFn> {
    toll_profile(ft, tolls, walk)
}

fn toll_profile(ft: &FrozenTimes, tolls: &TollSchedule, walk: &Walk) -> Result<StepFn> {
    let maps = arrival_maps(ft, &walk.edges)?;
    let active_end = ft.horizon.active_end();
    let mut total = StepFn::zero();
    for (j, &e) in walk.edges.iter().enumerate() {
        let p = &tolls.per_edge[e];
        if p.is_zero_fn() {
            continue;
        }
        let a_map = &maps[j];
        let mut cuts: Vec<Rat> = vec![Rat::zero(), active_end.clone()];
        for brk in p.breakpoints() {
            for (x, y) in a_map.preimage_intervals(brk, brk) {
                cuts.push(x);
                cuts.push(y);
            }
        }
        cuts.retain(|t| !t.is_negative() && t <= active_end);
        cuts.sort();
        cuts.dedup();
        let runs: Vec<(Rat, Rat, Rat)> = cuts
            .windows(2)
            .map(|w| {
                let v = p.value_at(&a_map.eval(&Rat::mid(&w[0], &w[1])));
                (w[0].clone(), w[1].clone(), v)
            })
            .collect();
        total = total.add(&StepFn::from_runs(runs));
    }
    Ok(total)
}

/// A Wardrop violation: on `interval`, walk `used` carries flow but walk
/// `better` is cheaper by up to `gap`.
#[derive(Debug, Clone)]
pub struct DueViolation {
    pub commodity: usize,
    pub used: Walk,
    pub better: Walk,
    pub interval: (Rat, Rat),
    pub gap: Rat,
}

/// Checks the tolled Wardrop condition: for almost every entry time carrying
/// flow on a walk, no enumerated same-commodity walk is strictly cheaper in
/// weighted travel time plus tolls. Alternatives come from
/// [`enumerate_walks`] with the given free-flow cost budget; every
/// flow-carrying walk must itself fall within the budget.
pub fn check_due(
    inst: &Instance,
    flow: &WalkFlow,
    lr: &LoadingResult,
    tolls: &TollSchedule,
    budget: &Rat,
) -> Result<Vec<DueViolation>> {
    let ft = FrozenTimes::from_loading(lr);
    let mut violations = Vec::new();
    for ci in 0..inst.commodities.len() {
        let alts = enumerate_walks(inst, ci, budget)?;
        let used: Vec<&(Walk, StepFn)> = flow
            .entries
            .iter()
            .filter(|(w, h)| w.commodity == ci && !h.is_zero_fn())
            .collect();
        for (w, _) in &used {
            if !alts.contains(w) {
                return Err(Error::BudgetTooSmall {
                    budget: budget.to_string(),
                    walk: inst.walk_name(w),
                });
            }
        }
        let mut profiles = Vec::with_capacity(alts.len());
        for alt in &alts {
            profiles.push((
                psi_profile(&ft, inst, alt)?,
                toll_profile(&ft, tolls, alt)?,
            ));
        }
        for (w, h) in &used {
            let wi = alts.iter().position(|a| a == w).unwrap();
            for (ai, alt) in alts.iter().enumerate() {
                if ai == wi {
                    continue;
                }
                violations.extend(compare_walks(w, alt, h, &profiles[wi], &profiles[ai]));
            }
        }
    }
    Ok(violations)
}

/// Piecewise comparison of two walk cost profiles wherever `h` is positive.
fn compare_walks(
    used: &Walk,
    better: &Walk,
    h: &StepFn,
    used_profile: &(PLin, StepFn),
    alt_profile: &(PLin, StepFn),
) -> Vec<DueViolation> {
    let (psi_u, toll_u) = used_profile;
    let (psi_a, toll_a) = alt_profile;
    let mut cuts: Vec<Rat> = psi_u
        .knot_xs()
        .iter()
        .chain(psi_a.knot_xs())
        .chain(toll_u.breakpoints())
        .chain(toll_a.breakpoints())
        .chain(h.breakpoints())
        .cloned()
        .collect();
    let (lo, hi) = psi_u.domain();
    cuts.retain(|t| t >= lo && t <= hi);
    cuts.push(lo.clone());
    cuts.push(hi.clone());
    cuts.sort();
    cuts.dedup();
    let mut out: Vec<DueViolation> = Vec::new();
    for w in cuts.windows(2) {
        let (t1, t2) = (&w[0], &w[1]);
        let mid = Rat::mid(t1, t2);
        if !h.value_at(&mid).is_positive() {
            continue;
        }
        // both cost functions are affine on the open piece
        let toll_gap = toll_u.value_at(&mid) - toll_a.value_at(&mid);
        let d1 = psi_u.eval(t1) - psi_a.eval(t1) + toll_gap.clone();
        let d2 = psi_u.eval(t2) - psi_a.eval(t2) + toll_gap;
        let gap = d1.max(d2);
        if gap.is_positive() {
            // merge with a preceding adjacent violation of the same pair
            if let Some(prev) = out.last_mut() {
                if prev.interval.1 == *t1 && prev.better == *better {
                    prev.interval.1 = t2.clone();
                    if gap > prev.gap {
                        prev.gap = gap;
                    }
                    continue;
                }
            }
            out.push(DueViolation {
                commodity: used.commodity,
                used: used.clone(),
                better: better.clone(),
                interval: (t1.clone(), t2.clone()),
                gap,
            });
        }
    }
    out
}

/// Certificate of non-implementability.
#[derive(Debug, Clone)]
pub enum Witness {
    /// A commodity sends flow into an edge leaving its own sink; truncating
    /// those walks at the sink strictly lowers aggregate weighted travel
    /// time without raising any edge load.
    SinkExit {
        commodity: usize,
        edge: usize,
        interval: (Rat, Rat),
        reroute: WalkFlow,
    },
    /// A flow-carrying cycle through the common sink.
    DCycle {
        walk: Walk,
        position: usize,
        cycle: Vec<usize>,
    },
}

/// Implementability verdict for shared-source, shared-sink instances.
#[derive(Debug, Clone)]
pub enum ImplementabilityVerdict {
    Implementable,
    NotImplementable(Witness),
}

impl ImplementabilityVerdict {
    pub fn is_implementable(&self) -> bool {
        matches!(self, ImplementabilityVerdict::Implementable)
    }
}

/// For instances where all commodities share one source and one sink and all
/// delays are strictly positive, a flow is implementable by tolls iff it
/// sends no flow into edges leaving the sink. Returns the verdict, with a
/// flow-carrying sink cycle as witness when not implementable.
pub fn check_implementable_single_sink(
    inst: &Instance,
    lr: &LoadingResult,
) -> Result<ImplementabilityVerdict> {
    let first = &inst.commodities[0];
    for c in &inst.commodities {
        if c.source != first.source || c.sink != first.sink {
            return Err(Error::WrongTopology {
                required: "a shared source and sink".into(),
                found: "commodities with distinct endpoints".into(),
            });
        }
    }
    for e in &inst.edges {
        if !e.model.delay_lower_bound().is_positive() {
            return Err(Error::WrongTopology {
                required: "strictly positive delays".into(),
                found: format!("edge `{}` can reach zero delay", e.id),
            });
        }
    }
    let d = first.sink;
    let loaded = inst
        .edges
        .iter()
        .enumerate()
        .filter(|(e, edge)| edge.tail == d && !lr.edge_inflow(*e).is_zero_fn())
        .map(|(e, _)| e)
        .next();
    let Some(_) = loaded else {
        return Ok(ImplementabilityVerdict::Implementable);
    };
    // extract the cycle from the loading's walk segments
    for lw in &lr.walks {
        for (j, &e) in lw.walk.edges.iter().enumerate() {
            if inst.edges[e].tail == d && !lw.segments[j].is_zero_fn() {
                return Ok(ImplementabilityVerdict::NotImplementable(Witness::DCycle {
                    walk: lw.walk.clone(),
                    position: j,
                    cycle: lw.walk.edges[j..].to_vec(),
                }));
            }
        }
    }
    Err(Error::Invariant(
        "edge leaving the sink carries flow but no walk segment explains it".into(),
    ))
}

/// Searches for a commodity that sends flow into an edge leaving its own
/// sink. If found, returns the witness whose reroute truncates the offending
/// walk at the sink; the reroute strictly decreases aggregate weighted
/// travel time under frozen times while only lowering edge loads, so the
/// original flow cannot be optimal for the tolled-equilibrium master
/// problem: it is not implementable.
pub fn sink_exit_witness(inst: &Instance, lr: &LoadingResult) -> Option<Witness> {
    for lw in &lr.walks {
        if lw.inflow.is_zero_fn() {
            continue;
        }
        let sink = inst.commodities[lw.walk.commodity].sink;
        for (j, &e) in lw.walk.edges.iter().enumerate() {
            if j > 0 && inst.edges[e].tail == sink && !lw.segments[j].is_zero_fn() {
                let (s0, s1) = lw.segments[j].support().unwrap();
                let mut reroute = WalkFlow::default();
                for other in &lr.walks {
                    if other.walk == lw.walk {
                        reroute.push(
                            Walk {
                                commodity: lw.walk.commodity,
                                edges: lw.walk.edges[..j].to_vec(),
                            },
                            other.inflow.clone(),
                        );
                    } else {
                        reroute.push(other.walk.clone(), other.inflow.clone());
                    }
                }
                return Some(Witness::SinkExit {
                    commodity: lw.walk.commodity,
                    edge: e,
                    interval: (s0, s1),
                    reroute,
                });
            }
        }
    }
    None
}

/// Aggregate weighted travel time `Σ_w ⟨Ψ_w, h_w⟩` of a walk flow under
/// frozen times.
pub fn aggregate_walk_cost(ft: &FrozenTimes, inst: &Instance, flow: &WalkFlow) -> Result<Rat> {
    let mut total = Rat::zero();
    let zero = Rat::zero();
    let end = ft.horizon.active_end().clone();
    for (w, h) in &flow.entries {
        if h.is_zero_fn() {
            continue;
        }
        let psi = psi_profile(ft, inst, w)?;
        total += integrate_plin_times_step(&psi, h, &zero, &end);
    }
    Ok(total)
}

/// Exact certificate for a sink-exit witness: aggregate weighted costs of
/// the original flow against the reroute, plus pointwise load domination of
/// the reroute under the frozen times.
pub struct SinkExitCertificate {
    pub cost_original: Rat,
    pub cost_reroute: Rat,
    pub loads_dominated: bool,
}

pub fn verify_sink_exit(
    inst: &Instance,
    lr: &LoadingResult,
    witness: &Witness,
) -> Result<SinkExitCertificate> {
    let Witness::SinkExit { reroute, .. } = witness else {
        return Err(Error::Invariant("not a sink-exit witness".into()));
    };
    let ft = FrozenTimes::from_loading(lr);
    let mut original = WalkFlow::default();
    for lw in &lr.walks {
        original.push(lw.walk.clone(), lw.inflow.clone());
    }
    let cost_original = aggregate_walk_cost(&ft, inst, &original)?;
    let cost_reroute = aggregate_walk_cost(&ft, inst, reroute)?;
    // parameterized loads of the reroute never exceed the reference flow
    let mut loads = vec![StepFn::zero(); inst.edges.len()];
    for (w, h) in &reroute.entries {
        let segs = propagate(&ft, &w.edges, h)?;
        for (j, &e) in w.edges.iter().enumerate() {
            loads[e] = loads[e].add(&segs[j]);
        }
    }
    let loads_dominated = loads
        .iter()
        .enumerate()
        .all(|(e, f)| f.le_pointwise(lr.edge_inflow(e)));
    Ok(SinkExitCertificate {
        cost_original,
        cost_reroute,
        loads_dominated,
    })
}
