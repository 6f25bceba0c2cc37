//! Edge dynamics and the network loading: mapping walk inflows to the edge
//! flows, queues, travel times and arrival maps they induce.

use crate::error::Error;
use crate::network::{
    check_demand_coverage, Capacity, EdgeModel, Instance, Walk, WalkFlow,
};
use crate::timefn::{pushforward, pushforward_dropping_atoms, Horizon, PLin, Rat, StepFn};
use crate::Result;

/// Full dynamics of one edge under a given inflow.
///
/// `exit` is the entry-to-exit time map `T(t) = t + delay(t)`. Beyond the
/// active horizon the delay is linearly ramped down so that `T(t_end) =
/// t_end`; no flow enters there, so queue, outflow and all costs are
/// unaffected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeDynamics {
    pub inflow: StepFn,
    pub outflow: StepFn,
    pub queue: PLin,
    pub delay: PLin,
    pub exit: PLin,
}

/// Vickrey point-queue dynamics: the queue grows at `inflow - nu` while
/// positive, never below zero, and the delay is `tau + queue/nu`.
pub fn vickrey_edge(inflow: &StepFn, tau: &Rat, nu: &Capacity, horizon: &Horizon) -> Result<EdgeDynamics> {
    assert!(inflow.is_nonnegative(), "vickrey inflow must be nonnegative");
    assert!(tau.is_positive());
    let (lo, hi) = horizon.full();
    let queue = match nu {
        Capacity::Infinite => PLin::constant(lo.clone(), hi.clone(), Rat::zero()),
        Capacity::Finite(nu) => solve_queue(inflow, nu, &lo, &hi),
    };
    let delay = match nu {
        Capacity::Infinite => PLin::constant(lo.clone(), hi.clone(), tau.clone()),
        Capacity::Finite(nu) => queue.scale_shift(&nu.recip(), tau),
    };
    finish_edge("vickrey", inflow, queue, delay, horizon)
}

/// Piecewise-exact queue profile: breakpoints at inflow breakpoints and at
/// queue-empties events.
fn solve_queue(inflow: &StepFn, nu: &Rat, lo: &Rat, hi: &Rat) -> PLin {
    let mut knots: Vec<(Rat, Rat)> = vec![(lo.clone(), Rat::zero())];
    let mut q = Rat::zero();
    let mut cuts: Vec<Rat> = inflow
        .breakpoints()
        .iter()
        .filter(|b| **b > *lo && **b < *hi)
        .cloned()
        .collect();
    cuts.push(hi.clone());
    let mut t = lo.clone();
    for cut in cuts {
        let rate = inflow.value_at(&t);
        let slope = &rate - nu;
        if q.is_zero() && !slope.is_positive() {
            // queue stays empty on the whole piece
            knots.push((cut.clone(), Rat::zero()));
        } else if slope.is_negative() {
            // draining; may hit zero inside the piece
            let t_zero = &t + &(&q / &(-slope.clone()));
            if t_zero < cut {
                knots.push((t_zero, Rat::zero()));
                q = Rat::zero();
                knots.push((cut.clone(), Rat::zero()));
            } else {
                q += slope * (&cut - &t);
                knots.push((cut.clone(), q.clone()));
            }
        } else {
            q += slope * (&cut - &t);
            knots.push((cut.clone(), q.clone()));
        }
        t = cut;
    }
    PLin::from_knots(knots)
}

/// Flow-independent delay.
pub fn constant_edge(inflow: &StepFn, tau: &Rat, horizon: &Horizon) -> Result<EdgeDynamics> {
    let (lo, hi) = horizon.full();
    let queue = PLin::constant(lo.clone(), hi.clone(), Rat::zero());
    let delay = PLin::constant(lo, hi, tau.clone());
    finish_edge("constant", inflow, queue, delay, horizon)
}

/// Decreasing-ramp dynamics: the delay starts at `d_hi` and falls with the
/// lagged, capped cumulative inflow until it reaches `d_lo`. The exit map is
/// checked for FIFO; this model does not guarantee it for all inflows.
pub fn ramp_edge(
    inflow: &StepFn,
    d_hi: &Rat,
    d_lo: &Rat,
    lag: &Rat,
    cap: &Rat,
    drain: &Rat,
    horizon: &Horizon,
) -> Result<EdgeDynamics> {
    assert!(inflow.is_nonnegative());
    let (lo, hi) = horizon.full();
    let delay = ramp_delay(inflow, d_hi, d_lo, lag, cap, drain, horizon);
    let queue = PLin::constant(lo, hi, Rat::zero());
    finish_edge("ramp", inflow, queue, delay, horizon)
}

/// The ramp delay profile alone. Useful when the exit map has plateaus under
/// mass (then a full [`EdgeDynamics`] does not exist: the outflow has atoms).
pub fn ramp_delay(
    inflow: &StepFn,
    d_hi: &Rat,
    d_lo: &Rat,
    lag: &Rat,
    cap: &Rat,
    drain: &Rat,
    horizon: &Horizon,
) -> PLin {
    let (lo, hi) = horizon.full();
    let capped = inflow.min_const(cap);
    let cum = PLin::cumulative_of(&capped, &lo, &hi);
    let lagged = cum.shift_time_clamped(lag, &lo, &hi);
    lagged.scale_shift(&-drain.clone(), d_hi).max_const(d_lo)
}

/// Dynamics of an edge under its model.
pub fn edge_dynamics(
    id: &str,
    model: &EdgeModel,
    inflow: &StepFn,
    horizon: &Horizon,
) -> Result<EdgeDynamics> {
    let result = match model {
        EdgeModel::Vickrey { tau, nu } => vickrey_edge(inflow, tau, nu, horizon),
        EdgeModel::ConstantDelay { tau } => constant_edge(inflow, tau, horizon),
        EdgeModel::DecreasingRamp {
            d_hi,
            d_lo,
            lag,
            cap,
            drain,
        } => ramp_edge(inflow, d_hi, d_lo, lag, cap, drain, horizon),
    };
    result.map_err(|e| match e {
        Error::FifoViolation { at, .. } => Error::FifoViolation {
            edge: id.to_string(),
            at,
        },
        Error::Horizon { detail } => Error::Horizon {
            detail: format!("edge `{id}`: {detail}"),
        },
        other => other,
    })
}

/// Assembles exit map (with the horizon ramp), checks FIFO, and computes the
/// outflow as the pushforward of the inflow through the exit map.
fn finish_edge(
    kind: &str,
    inflow: &StepFn,
    queue: PLin,
    delay: PLin,
    horizon: &Horizon,
) -> Result<EdgeDynamics> {
    let (lo, hi) = horizon.full();
    let active_end = horizon.active_end();
    let exit_raw = PLin::identity(lo.clone(), hi.clone()).add(&delay);
    // FIFO on the active part
    if let Some(at) = first_decrease(&exit_raw, active_end) {
        return Err(Error::FifoViolation {
            edge: kind.to_string(),
            at: at.to_string(),
        });
    }
    // ramp the exit down to (t_end, t_end) after the active horizon
    let exit_at_active = exit_raw.eval(active_end);
    if exit_at_active > hi {
        return Err(Error::Horizon {
            detail: format!(
                "exit time {exit_at_active} at t_active_end exceeds t_end {hi}; increase t_end"
            ),
        });
    }
    let mut knots: Vec<(Rat, Rat)> = exit_raw
        .restrict(&lo, active_end)
        .knots()
        .map(|(x, y)| (x.clone(), y.clone()))
        .collect();
    knots.push((hi.clone(), hi.clone()));
    let exit = PLin::from_knots(knots);
    let delay = exit.sub(&PLin::identity(lo, hi));
    let outflow = pushforward(inflow, &exit)?;
    debug_assert_eq!(outflow.total_mass(), inflow.total_mass());
    Ok(EdgeDynamics {
        inflow: inflow.clone(),
        outflow,
        queue,
        delay,
        exit,
    })
}

fn first_decrease(f: &PLin, up_to: &Rat) -> Option<Rat> {
    let mut prev: Option<(&Rat, &Rat)> = None;
    for (x, y) in f.knots() {
        if let Some((px, py)) = prev {
            if y < py && px <= up_to {
                return Some(px.clone());
            }
        }
        prev = Some((x, y));
        if x > up_to {
            break;
        }
    }
    None
}

/// One walk of a loading: its inflow, the induced flow at every position,
/// and the arrival time maps.
#[derive(Debug, Clone)]
pub struct LoadedWalk {
    pub walk: Walk,
    pub inflow: StepFn,
    /// `segments[j]` is the flow entering position `j` (0-based); the last
    /// entry is the rate at which the walk's particles reach the sink.
    pub segments: Vec<StepFn>,
    /// `arrivals[j]` maps walk entry time to arrival at position `j`; the
    /// last entry is the sink arrival map.
    pub arrivals: Vec<PLin>,
}

/// Result of a network loading.
#[derive(Debug, Clone)]
pub struct LoadingResult {
    pub horizon: Horizon,
    pub dynamics: Vec<EdgeDynamics>,
    /// Per-edge, per-commodity inflow split; sums to the edge inflow.
    pub splits: Vec<Vec<StepFn>>,
    pub walks: Vec<LoadedWalk>,
}

impl LoadingResult {
    pub fn edge_inflow(&self, e: usize) -> &StepFn {
        &self.dynamics[e].inflow
    }

    /// Aggregate edge inflows as a vector.
    pub fn edge_flows(&self) -> Vec<StepFn> {
        self.dynamics.iter().map(|d| d.inflow.clone()).collect()
    }

    /// Largest delay realized on the active horizon, over all edges. No
    /// a-priori bound is enforced anywhere; this reports what the loading
    /// actually produced.
    pub fn max_realized_delay(&self) -> Rat {
        let zero = Rat::zero();
        let end = self.horizon.active_end();
        self.dynamics
            .iter()
            .map(|d| d.delay.max_on(&zero, end))
            .reduce(Rat::max)
            .unwrap_or_else(Rat::zero)
    }
}

/// Computes the network loading of a walk flow: the unique family of edge
/// flows consistent with the travel times they induce.
///
/// The solver iterates dynamics and propagation globally. Because every
/// non-synthetic edge delays flow by at least `tau_min`, each sweep pins down
/// one more `tau_min`-prefix of the horizon, so the iteration reaches its
/// exact fixed point after finitely many sweeps (usually a handful: the
/// interaction depth of the instance).
pub fn load_network(inst: &Instance, flow: &WalkFlow) -> Result<LoadingResult> {
    check_demand_coverage(inst, flow)?;
    let horizon = &inst.horizon;
    let tau_min = inst
        .tau_min()
        .ok_or_else(|| Error::InvalidInstance("instance has no delaying edge".into()))?;
    let rounds_cap = (horizon.end().clone() / tau_min).ceil_int();
    let rounds_cap: u64 = 2 + u64::try_from(rounds_cap.max(1.into()))
        .map_err(|_| Error::Invariant("horizon/tau_min out of range".into()))?;

    let mut g: Vec<StepFn> = vec![StepFn::zero(); inst.edges.len()];
    let mut round = 0u64;
    loop {
        round += 1;
        if round > rounds_cap {
            return Err(Error::Invariant(
                "network loading failed to reach its fixed point".into(),
            ));
        }
        // lenient sweep: transient states may push flow onto stale queue
        // plateaus; that mass is provably outside the already-settled prefix
        // of the horizon, so it is dropped rather than treated as an atom
        let dynamics = round_dynamics(inst, &g)?;
        let mut new_g = vec![StepFn::zero(); inst.edges.len()];
        for (walk, h) in &flow.entries {
            let mut cur = h.clone();
            for &e in &walk.edges {
                new_g[e] = new_g[e].add(&cur);
                cur = pushforward_dropping_atoms(&cur, &dynamics[e].exit);
            }
        }
        if new_g == g {
            // candidate fixed point: confirm with a strict sweep, which also
            // produces the walk segments and arrival maps
            let (confirm_g, walks) = strict_sweep(inst, flow, &dynamics, horizon)?;
            if confirm_g != g {
                g = confirm_g;
                continue;
            }
            return finish_loading(inst, horizon, dynamics, walks, &g);
        }
        g = new_g;
    }
}

fn round_dynamics(inst: &Instance, g: &[StepFn]) -> Result<Vec<EdgeDynamics>> {
    inst.edges
        .iter()
        .zip(g)
        .map(|(e, f)| edge_dynamics(&e.id, &e.model, f, &inst.horizon))
        .collect()
}

fn strict_sweep(
    inst: &Instance,
    flow: &WalkFlow,
    dynamics: &[EdgeDynamics],
    horizon: &Horizon,
) -> Result<(Vec<StepFn>, Vec<LoadedWalk>)> {
    let mut walks = Vec::with_capacity(flow.entries.len());
    let mut new_g = vec![StepFn::zero(); inst.edges.len()];
    for (walk, h) in &flow.entries {
        let (lo, hi) = horizon.full();
        let mut arrivals = vec![PLin::identity(lo, hi)];
        let mut segments = vec![h.clone()];
        for &e in &walk.edges {
            let exit = &dynamics[e].exit;
            let cur = segments.last().unwrap();
            new_g[e] = new_g[e].add(cur);
            segments.push(pushforward(cur, exit)?);
            arrivals.push(exit.compose(arrivals.last().unwrap())?);
        }
        walks.push(LoadedWalk {
            walk: walk.clone(),
            inflow: h.clone(),
            segments,
            arrivals,
        });
    }
    Ok((new_g, walks))
}

fn finish_loading(
    inst: &Instance,
    horizon: &Horizon,
    dynamics: Vec<EdgeDynamics>,
    walks: Vec<LoadedWalk>,
    g: &[StepFn],
) -> Result<LoadingResult> {
    for (e, f) in g.iter().enumerate() {
        if let Some((_, s1)) = f.support() {
            if s1 > *horizon.active_end() {
                return Err(Error::NotDelivered {
                    detail: format!(
                        "edge `{}` still receives flow at {s1}, after t_active_end {}",
                        inst.edges[e].id,
                        horizon.active_end()
                    ),
                });
            }
        }
    }
    let mut splits = vec![vec![StepFn::zero(); inst.commodities.len()]; inst.edges.len()];
    for lw in &walks {
        for (j, &e) in lw.walk.edges.iter().enumerate() {
            splits[e][lw.walk.commodity] = splits[e][lw.walk.commodity].add(&lw.segments[j]);
        }
    }
    Ok(LoadingResult {
        horizon: horizon.clone(),
        dynamics,
        splits,
        walks,
    })
}
