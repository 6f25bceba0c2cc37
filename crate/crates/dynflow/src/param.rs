//! Propagation under frozen travel times, node balances, and flow
//! decomposition.
//!
//! Freezing the travel times of a reference flow turns the loading into a
//! linear operator: walk inflows push forward through fixed arrival maps.
//! This is the machinery behind equilibrium checks and both constructive
//! transformations.

use crate::error::Error;
use crate::network::Instance;
use crate::timefn::{pushforward, Horizon, PLin, Rat, StepFn};
use crate::vickrey::{edge_dynamics, EdgeDynamics, LoadingResult};
use crate::Result;

/// Exit and delay maps of every edge, frozen from a reference flow.
#[derive(Debug, Clone)]
pub struct FrozenTimes {
    pub horizon: Horizon,
    pub exits: Vec<PLin>,
    pub delays: Vec<PLin>,
}

impl FrozenTimes {
    pub fn from_loading(lr: &LoadingResult) -> FrozenTimes {
        FrozenTimes {
            horizon: lr.horizon.clone(),
            exits: lr.dynamics.iter().map(|d| d.exit.clone()).collect(),
            delays: lr.dynamics.iter().map(|d| d.delay.clone()).collect(),
        }
    }

    pub fn from_dynamics(horizon: &Horizon, dynamics: &[EdgeDynamics]) -> FrozenTimes {
        FrozenTimes {
            horizon: horizon.clone(),
            exits: dynamics.iter().map(|d| d.exit.clone()).collect(),
            delays: dynamics.iter().map(|d| d.delay.clone()).collect(),
        }
    }

    /// Recomputes frozen times from raw edge flows on an instance.
    pub fn from_edge_flows(inst: &Instance, flows: &[StepFn]) -> Result<FrozenTimes> {
        let dynamics = inst
            .edges
            .iter()
            .zip(flows)
            .map(|(e, f)| edge_dynamics(&e.id, &e.model, f, &inst.horizon))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenTimes::from_dynamics(&inst.horizon, &dynamics))
    }
}

/// Arrival time maps along a walk under frozen times: `maps[0]` is the
/// identity (arrival at the first edge), `maps[j] = exit_{w[j-1]} ∘
/// maps[j-1]`, and the last entry is the sink arrival map.
pub fn arrival_maps(ft: &FrozenTimes, walk_edges: &[usize]) -> Result<Vec<PLin>> {
    let (lo, hi) = ft.horizon.full();
    let mut maps = vec![PLin::identity(lo, hi)];
    for &e in walk_edges {
        let next = ft.exits[e].compose(maps.last().unwrap())?;
        if !next.is_nondecreasing() {
            return Err(Error::Invariant(
                "arrival map decreasing: frozen exits violate FIFO".into(),
            ));
        }
        maps.push(next);
    }
    Ok(maps)
}

/// Propagates a walk inflow through frozen times: the flow observed at every
/// position of the walk, the last entry being the rate at which the walk's
/// particles reach the sink.
pub fn propagate(ft: &FrozenTimes, walk_edges: &[usize], h: &StepFn) -> Result<Vec<StepFn>> {
    let mut segs = vec![h.clone()];
    for &e in walk_edges {
        segs.push(pushforward(segs.last().unwrap(), &ft.exits[e])?);
    }
    Ok(segs)
}

/// Sums propagated segments into per-edge flows.
pub fn propagate_to_edges(
    ft: &FrozenTimes,
    n_edges: usize,
    parts: &[(Vec<usize>, StepFn)],
) -> Result<Vec<StepFn>> {
    let mut flows = vec![StepFn::zero(); n_edges];
    for (edges, h) in parts {
        let segs = propagate(ft, edges, h)?;
        for (j, &e) in edges.iter().enumerate() {
            flows[e] = flows[e].add(&segs[j]);
        }
    }
    Ok(flows)
}

/// Cumulative node balance of an edge-flow family under frozen times:
/// outflow-into-edges minus arrival-at-node, both cumulative.
#[derive(Debug, Clone)]
pub struct NodeBalance {
    pub node: usize,
    pub balance: PLin,
}

/// Balance at `v`: `Σ_{e out of v} ∫_0^t g_e − Σ_{e into v} (g_e·σ)(T_e^{-1}[0,t])`.
/// Zero everywhere means exact flow conservation; a negative value is mass
/// that arrived and was absorbed (or is waiting).
pub fn node_balance(ft: &FrozenTimes, inst: &Instance, flows: &[StepFn], v: usize) -> Result<NodeBalance> {
    let (lo, hi) = ft.horizon.full();
    let mut balance = PLin::constant(lo.clone(), hi.clone(), Rat::zero());
    for (e, _) in inst.out_edges(v) {
        balance = balance.add(&PLin::cumulative_of(&flows[e], &lo, &hi));
    }
    for (e, _) in inst.in_edges(v) {
        let arrived = pushforward(&flows[e], &ft.exits[e])?;
        balance = balance.sub(&PLin::cumulative_of(&arrived, &lo, &hi));
    }
    Ok(NodeBalance { node: v, balance })
}

/// One walk of a decomposition, without commodity attribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkPiece {
    pub edges: Vec<usize>,
    pub inflow: StepFn,
}

/// Decomposes a parameterized source–sink flow into walk inflows by temporal
/// peeling: repeatedly pick the earliest time with positive residual on a
/// source edge, follow positive residuals through the frozen arrival maps,
/// and subtract the largest rectangle of flow that fits along the walk.
///
/// The input must conserve flow exactly at every node other than `source`
/// and `sink` (under `ft`) and all flow-carrying edges other than synthetic
/// attachments must delay by at least some positive bound; otherwise the
/// residual cannot be exhausted and an error is returned.
pub fn flow_decompose(
    ft: &FrozenTimes,
    inst: &Instance,
    flows: &[StepFn],
    source: usize,
    sink: usize,
) -> Result<Vec<WalkPiece>> {
    let mut residual: Vec<StepFn> = flows.to_vec();
    for (e, f) in residual.iter().enumerate() {
        if !f.is_nonnegative() {
            return Err(Error::NotDecomposable(format!(
                "negative flow on edge `{}`",
                inst.edges[e].id
            )));
        }
    }
    // longest walk any particle can use: every positive-delay edge eats at
    // least tau_pos of the horizon, plus the synthetic attachments
    let tau_pos = inst.tau_min();
    let max_len: usize = match tau_pos {
        Some(tau) => {
            let steps = (inst.horizon.end().clone() / tau).ceil_int();
            usize::try_from(steps).unwrap_or(usize::MAX / 2) + 3
        }
        None => 3,
    };
    let mut out: Vec<WalkPiece> = Vec::new();
    let mut guard = 0u64;
    loop {
        guard += 1;
        if guard > 1_000_000 {
            return Err(Error::NotDecomposable(
                "peeling did not terminate; residual flow malformed".into(),
            ));
        }
        // earliest positive residual on an edge leaving the source
        let mut start: Option<(Rat, usize)> = None;
        for (e, _) in inst.out_edges(source) {
            if let Some((s0, _)) = residual[e].support() {
                // support start may lead a zero piece after partial peels;
                // find the first genuinely positive piece
                let t0 = residual[e]
                    .pieces()
                    .find(|(_, _, v)| v.is_positive())
                    .map(|(a, _, _)| a.clone())
                    .unwrap_or(s0);
                match &start {
                    Some((t, _)) if *t <= t0 => {}
                    _ => start = Some((t0, e)),
                }
            }
        }
        let Some((t0, first_edge)) = start else {
            break; // source exhausted
        };
        let piece = peel_walk(ft, inst, &mut residual, &t0, first_edge, sink, max_len)?;
        // merge into an existing identical walk
        match out.iter_mut().find(|p| p.edges == piece.edges) {
            Some(p) => p.inflow = p.inflow.add(&piece.inflow),
            None => out.push(piece),
        }
    }
    // conservation must have drained everything
    for (e, f) in residual.iter().enumerate() {
        if !f.is_zero_fn() {
            return Err(Error::NotDecomposable(format!(
                "residual flow left on edge `{}` unreachable from the source",
                inst.edges[e].id
            )));
        }
    }
    Ok(out)
}

/// Peels one maximal rectangle of flow starting from `(t0, first_edge)`.
fn peel_walk(
    ft: &FrozenTimes,
    inst: &Instance,
    residual: &mut [StepFn],
    t0: &Rat,
    first_edge: usize,
    sink: usize,
    max_len: usize,
) -> Result<WalkPiece> {
    // walk state: edges chosen, and per position the affine arrival map
    // (slope, intercept) valid on [t0, t1)
    let mut edges = vec![first_edge];
    let mut affines: Vec<(Rat, Rat)> = vec![(Rat::one(), Rat::zero())];
    let mut t1 = piece_end_after(&residual[first_edge], t0);
    loop {
        let last = *edges.last().unwrap();
        let (a, b) = affines.last().unwrap().clone();
        // shrink [t0, t1) so the image under the exit of `last` stays affine
        let exit = &ft.exits[last];
        let arr_t0 = &a * t0 + &b;
        for x in exit.knot_xs() {
            if *x > arr_t0 {
                // preimage of the knot under the affine arrival map
                let t_knot = (x - &b) / &a;
                if t_knot < t1 {
                    t1 = t_knot;
                }
            }
        }
        // compose with the exit's affine piece at the arrival point
        let (ea, eb) = exit_affine_on(exit, &arr_t0);
        if ea.is_zero() {
            return Err(Error::NotDecomposable(format!(
                "exit map of edge `{}` constant at {arr_t0} under flow (atom)",
                inst.edges[last].id
            )));
        }
        let next_a = &ea * &a;
        let next_b = &ea * &b + &eb;
        let head = inst.edges[last].head;
        if head == sink {
            affines.push((next_a, next_b));
            break;
        }
        if edges.len() >= max_len {
            return Err(Error::NotDecomposable(
                "walk exceeds the horizon length bound (zero-delay cycle?)".into(),
            ));
        }
        // choose the next edge: positive residual at the arrival time
        let arrive0 = &next_a * t0 + &next_b;
        let mut chosen: Option<usize> = None;
        for (e, _) in inst.out_edges(head) {
            if residual[e].value_at(&arrive0).is_positive() {
                chosen = Some(e);
                break;
            }
        }
        let Some(next_edge) = chosen else {
            return Err(Error::NotDecomposable(format!(
                "no outgoing residual at node `{}` at time {arrive0}; conservation violated",
                inst.nodes[head]
            )));
        };
        // shrink t1 so the next edge's residual is constant on the image and
        // the image stays inside the chosen residual piece
        let end_here = piece_end_after(&residual[next_edge], &arrive0);
        // preimage of end_here under the next arrival map
        let t_lim = (&end_here - &next_b) / &next_a;
        if t_lim < t1 {
            t1 = t_lim;
        }
        edges.push(next_edge);
        affines.push((next_a, next_b));
    }
    if t1 <= *t0 {
        return Err(Error::NotDecomposable(format!(
            "empty peel interval at {t0}"
        )));
    }
    // the admissible rate: min over positions of residual rate × arrival slope
    let mut rate: Option<Rat> = None;
    for (j, &e) in edges.iter().enumerate() {
        let (a, b) = &affines[j];
        let at = a * t0 + b;
        let r_here = residual[e].value_at(&at) * a.clone();
        rate = Some(match rate {
            Some(r) => r.min(r_here),
            None => r_here,
        });
    }
    let rate = rate.unwrap();
    debug_assert!(rate.is_positive());
    // subtract the rectangle along the walk
    for (j, &e) in edges.iter().enumerate() {
        let (a, b) = &affines[j];
        let (ia, ib) = (a * t0 + b, a * &t1 + b);
        residual[e] = residual[e].sub(&StepFn::rect(ia, ib, &rate / a));
        if residual[e].value_at(&(a * t0 + b)).is_negative() {
            return Err(Error::NotDecomposable(format!(
                "over-subtraction on edge `{}`",
                inst.edges[e].id
            )));
        }
    }
    Ok(WalkPiece {
        edges,
        inflow: StepFn::rect(t0.clone(), t1, rate),
    })
}

/// End of the residual piece containing `t` (or the next breakpoint after a
/// gap); assumes a positive value at `t`.
fn piece_end_after(f: &StepFn, t: &Rat) -> Rat {
    for (a, b, _) in f.pieces() {
        if a <= t && t < b {
            return b.clone();
        }
    }
    panic!("piece_end_after outside support");
}

/// Affine piece of a (continuous nondecreasing) exit map at `t`, taking the
/// piece to the right of a knot.
fn exit_affine_on(exit: &PLin, t: &Rat) -> (Rat, Rat) {
    let xs = exit.knot_xs();
    let i0 = xs.partition_point(|x| x <= t);
    let i = if i0 == 0 { 0 } else { i0 - 1 };
    let (x1, x2) = (&xs[i], &xs[i + 1]);
    let y1 = exit.eval(x1);
    let y2 = exit.eval(x2);
    let slope = (&y2 - &y1) / &(x2 - x1);
    let intercept = &y1 - &(&slope * x1);
    (slope, intercept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Capacity, Commodity, Edge, EdgeModel, Walk, WalkFlow};
    use crate::timefn::rat;
    use crate::vickrey::load_network;

    fn single_edge_ft() -> (Instance, FrozenTimes) {
        let inst = crate::network::tests::two_node_instance();
        let flows = vec![StepFn::zero()];
        let ft = FrozenTimes::from_edge_flows(&inst, &flows).unwrap();
        (inst, ft)
    }

    #[test]
    fn arrival_maps_compose_shifts() {
        let (_, ft) = single_edge_ft();
        let maps = arrival_maps(&ft, &[0]).unwrap();
        assert_eq!(maps.len(), 2);
        assert_eq!(maps[1].eval(&rat(3)), rat(4)); // tau = 1
    }

    #[test]
    fn propagate_through_stretching_map() {
        // h = 1·1_[0,1] through exit T(t) = 2t + 1: position-2 flow (1/2)·1_[1,3]
        let (lo, hi) = (rat(0), rat(8));
        let ft = FrozenTimes {
            horizon: Horizon::new(rat(4), rat(8)).unwrap(),
            exits: vec![PLin::from_knots(vec![(lo.clone(), rat(1)), (hi.clone(), rat(17))])],
            delays: vec![PLin::identity(lo, hi)],
        };
        let segs = propagate(&ft, &[0], &StepFn::rect(rat(0), rat(1), rat(1))).unwrap();
        assert_eq!(segs[1], StepFn::rect(rat(1), rat(3), rat((1, 2))));
        // mass preserved at every position
        assert_eq!(segs[0].total_mass(), segs[1].total_mass());
        // zero in, zero out
        let z = propagate(&ft, &[0], &StepFn::zero()).unwrap();
        assert!(z[1].is_zero_fn());
    }

    fn path_with_delays(taus: &[i64]) -> (Instance, WalkFlow) {
        let n = taus.len();
        let nodes: Vec<String> = (0..=n).map(|i| format!("n{i}")).collect();
        let edges: Vec<Edge> = taus
            .iter()
            .enumerate()
            .map(|(i, &t)| Edge {
                id: format!("e{}", i + 1),
                tail: i,
                head: i + 1,
                model: EdgeModel::ConstantDelay { tau: rat(t) },
            })
            .collect();
        let commodities = vec![Commodity {
            id: "c1".into(),
            source: 0,
            sink: n,
            vot: rat(1),
            inflow: StepFn::rect(rat(0), rat(1), rat(1)),
        }];
        let inst = Instance::new(rat(10), None, nodes, edges, commodities).unwrap();
        let mut flow = WalkFlow::default();
        flow.push(
            Walk {
                commodity: 0,
                edges: (0..n).collect(),
            },
            inst.commodities[0].inflow.clone(),
        );
        (inst, flow)
    }

    #[test]
    fn node_balance_conservation_and_sink() {
        let (inst, flow) = path_with_delays(&[1, 1]);
        let lr = load_network(&inst, &flow).unwrap();
        let ft = FrozenTimes::from_loading(&lr);
        let flows = lr.edge_flows();
        // interior node conserves exactly
        let nb = node_balance(&ft, &inst, &flows, 1).unwrap();
        assert!(nb.balance.is_constant_on(&rat(0), inst.horizon.end(), &rat(0)));
        // sink balance: −max(0, min(t−2, 1)) for unit flow with path delay 2
        let nb = node_balance(&ft, &inst, &flows, 2).unwrap();
        assert_eq!(nb.balance.eval(&rat(2)), rat(0));
        assert_eq!(nb.balance.eval(&rat((5, 2))), rat((-1, 2)));
        assert_eq!(nb.balance.eval(&rat(3)), rat(-1));
        assert_eq!(nb.balance.eval(&rat(10)), rat(-1));
        // oracle: direct computation over sample points
        for t in [rat((9, 4)), rat((11, 4)), rat(5)] {
            let direct = -(&t.clone() - &rat(2)).min(rat(1)).max(rat(0));
            assert_eq!(nb.balance.eval(&t), direct);
        }
    }

    #[test]
    fn decompose_single_edge() {
        let (inst, flow) = path_with_delays(&[1]);
        let lr = load_network(&inst, &flow).unwrap();
        let ft = FrozenTimes::from_loading(&lr);
        let pieces = flow_decompose(&ft, &inst, &lr.edge_flows(), 0, 1).unwrap();
        assert_eq!(pieces.len(), 1);
        assert_eq!(pieces[0].edges, vec![0]);
        assert_eq!(pieces[0].inflow, inst.commodities[0].inflow);
    }

    #[test]
    fn decompose_parallel_paths_roundtrip() {
        // two parallel one-edge paths, each carrying 1·1_[0,1]
        let inst = Instance::new(
            rat(10),
            None,
            vec!["s".into(), "d".into()],
            vec![
                Edge {
                    id: "a".into(),
                    tail: 0,
                    head: 1,
                    model: EdgeModel::Vickrey {
                        tau: rat(1),
                        nu: Capacity::Finite(rat(2)),
                    },
                },
                Edge {
                    id: "b".into(),
                    tail: 0,
                    head: 1,
                    model: EdgeModel::ConstantDelay { tau: rat(2) },
                },
            ],
            vec![Commodity {
                id: "c1".into(),
                source: 0,
                sink: 1,
                vot: rat(1),
                inflow: StepFn::rect(rat(0), rat(1), rat(2)),
            }],
        )
        .unwrap();
        let mut flow = WalkFlow::default();
        for e in [0usize, 1] {
            flow.push(
                Walk {
                    commodity: 0,
                    edges: vec![e],
                },
                StepFn::rect(rat(0), rat(1), rat(1)),
            );
        }
        let lr = load_network(&inst, &flow).unwrap();
        let ft = FrozenTimes::from_loading(&lr);
        let flows = lr.edge_flows();
        let pieces = flow_decompose(&ft, &inst, &flows, 0, 1).unwrap();
        // both edges recovered with their exact inflows
        assert_eq!(pieces.len(), 2);
        for p in &pieces {
            assert_eq!(p.inflow, StepFn::rect(rat(0), rat(1), rat(1)));
        }
        // roundtrip: propagating the decomposition reproduces the edge flows
        let parts: Vec<(Vec<usize>, StepFn)> = pieces
            .iter()
            .map(|p| (p.edges.clone(), p.inflow.clone()))
            .collect();
        let rebuilt = propagate_to_edges(&ft, inst.edges.len(), &parts).unwrap();
        assert_eq!(rebuilt, flows);
    }

    #[test]
    fn decompose_rejects_unreachable_residual() {
        // flow on an edge not connected to the source
        let inst = Instance::new(
            rat(10),
            None,
            vec!["s".into(), "d".into(), "x".into(), "y".into()],
            vec![
                Edge {
                    id: "a".into(),
                    tail: 0,
                    head: 1,
                    model: EdgeModel::ConstantDelay { tau: rat(1) },
                },
                Edge {
                    id: "b".into(),
                    tail: 2,
                    head: 3,
                    model: EdgeModel::ConstantDelay { tau: rat(1) },
                },
            ],
            vec![Commodity {
                id: "c1".into(),
                source: 0,
                sink: 1,
                vot: rat(1),
                inflow: StepFn::rect(rat(0), rat(1), rat(1)),
            }],
        )
        .unwrap();
        let flows = vec![StepFn::zero(), StepFn::rect(rat(0), rat(1), rat(1))];
        let ft = FrozenTimes::from_edge_flows(&inst, &flows).unwrap();
        assert!(matches!(
            flow_decompose(&ft, &inst, &flows, 0, 1),
            Err(Error::NotDecomposable(_))
        ));
    }
}
