//! Built-in instances and reference flows used by the CLI and the test
//! suites: a parameterized five-commodity network whose best flow routes one
//! commodity around a cycle through its own sink, and a two-commodity
//! network with a non-monotone edge where the cheapest flow is likewise not
//! implementable.

use crate::error::Error;
use crate::network::{Capacity, Commodity, Edge, EdgeModel, Instance, Walk, WalkFlow};
use crate::timefn::{Rat, StepFn};
use crate::vickrey::LoadingResult;
use crate::Result;

/// Parameters of the five-commodity scenario: `m` stretches the tail demands
/// (and with it the cost of blocking them), `eps` scales the short free-flow
/// times. Requires `m ≥ 0` and `0 < eps ≤ 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioParams {
    pub m: Rat,
    pub eps: Rat,
}

impl ScenarioParams {
    pub fn new(m: Rat, eps: Rat) -> Result<ScenarioParams> {
        if m.is_negative() {
            return Err(Error::InvalidInstance("scenario needs M >= 0".into()));
        }
        if !eps.is_positive() || eps > Rat::one() {
            return Err(Error::InvalidInstance(
                "scenario needs eps in (0, 1]".into(),
            ));
        }
        Ok(ScenarioParams { m, eps })
    }
}

fn vickrey(tau: Rat, nu: Rat) -> EdgeModel {
    EdgeModel::Vickrey {
        tau,
        nu: Capacity::Finite(nu),
    }
}

/// The five-commodity instance. Nodes are named after the commodities they
/// serve; `e5` has free-flow time `2 − eps`, `e3`/`e4` have `eps`, `e6` is
/// uncapacitated with free-flow time 4.
pub fn counterexample(p: &ScenarioParams) -> Result<Instance> {
    let (m, eps) = (&p.m, &p.eps);
    let one = Rat::one();
    let r = |a: Rat, b: Rat, c: i64| StepFn::rect(a, b, Rat::int(c));
    let nodes: Vec<String> = ["sE", "dF", "sD_dC", "dDE", "sB", "sC_dB", "sF"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let n = |name: &str| nodes.iter().position(|x| x == name).unwrap();
    let edges = vec![
        Edge {
            id: "e1".into(),
            tail: n("sE"),
            head: n("dF"),
            model: vickrey(one.clone(), one.clone()),
        },
        Edge {
            id: "e2".into(),
            tail: n("dF"),
            head: n("sD_dC"),
            model: vickrey(one.clone(), one.clone()),
        },
        Edge {
            id: "e3".into(),
            tail: n("sD_dC"),
            head: n("dDE"),
            model: vickrey(eps.clone(), one.clone()),
        },
        Edge {
            id: "e4".into(),
            tail: n("sF"),
            head: n("dF"),
            model: vickrey(eps.clone(), Rat::int(2)),
        },
        Edge {
            id: "e5".into(),
            tail: n("sC_dB"),
            head: n("sF"),
            model: vickrey(Rat::int(2) - eps, Rat::int(2)),
        },
        Edge {
            id: "e6".into(),
            tail: n("dF"),
            head: n("sC_dB"),
            model: EdgeModel::Vickrey {
                tau: Rat::int(4),
                nu: Capacity::Infinite,
            },
        },
        Edge {
            id: "e7".into(),
            tail: n("sB"),
            head: n("sC_dB"),
            model: vickrey(one.clone(), Rat::int(6)),
        },
    ];
    let commodities = vec![
        Commodity {
            id: "B".into(),
            source: n("sB"),
            sink: n("sC_dB"),
            vot: one.clone(),
            inflow: r(Rat::zero(), one.clone(), 6),
        },
        Commodity {
            id: "C".into(),
            source: n("sC_dB"),
            sink: n("sD_dC"),
            vot: one.clone(),
            inflow: r(Rat::int(2), Rat::int(3), 2),
        },
        Commodity {
            id: "D".into(),
            source: n("sD_dC"),
            sink: n("dDE"),
            vot: one.clone(),
            inflow: r(Rat::int(7), Rat::int(10) + m, 1),
        },
        Commodity {
            id: "E".into(),
            source: n("sE"),
            sink: n("dDE"),
            vot: one.clone(),
            inflow: r(Rat::int(4), Rat::int(5), 1),
        },
        Commodity {
            id: "F".into(),
            source: n("sF"),
            sink: n("dF"),
            vot: one,
            inflow: r(Rat::int(9), Rat::int(13) + m, 2),
        },
    ];
    let t_active_end = Rat::int(24) + m;
    let t_end = Rat::int(100) + Rat::int(10) * m;
    Instance::new(t_active_end, Some(t_end), nodes, edges, commodities)
}

fn walk(inst: &Instance, commodity: &str, edges: &[&str]) -> Result<Walk> {
    let w = Walk {
        commodity: inst.commodity_index(commodity)?,
        edges: edges
            .iter()
            .map(|id| inst.edge_index(id))
            .collect::<Result<_>>()?,
    };
    inst.check_walk(&w)?;
    Ok(w)
}

fn demand_flow(inst: &Instance, routes: &[(&str, &[&str])]) -> Result<WalkFlow> {
    let mut flow = WalkFlow::default();
    for (cid, edges) in routes {
        let w = walk(inst, cid, edges)?;
        let inflow = inst.commodities[w.commodity].inflow.clone();
        flow.push(w, inflow);
    }
    Ok(flow)
}

/// The reference flow with the lowest total travel time: commodity B rides
/// the cycle (e5,e4,e6) once before stopping at its sink, everybody else
/// goes direct.
pub fn sysopt_candidate(inst: &Instance) -> Result<WalkFlow> {
    demand_flow(
        inst,
        &[
            ("B", &["e7", "e5", "e4", "e6"]),
            ("C", &["e5", "e4", "e2"]),
            ("D", &["e3"]),
            ("E", &["e1", "e2", "e3"]),
            ("F", &["e4"]),
        ],
    )
}

/// Implementable variant where C and E take their direct paths; the queue on
/// e2 then delays E into D's window on e3.
pub fn implementable_direct(inst: &Instance) -> Result<WalkFlow> {
    demand_flow(
        inst,
        &[
            ("B", &["e7"]),
            ("C", &["e5", "e4", "e2"]),
            ("D", &["e3"]),
            ("E", &["e1", "e2", "e3"]),
            ("F", &["e4"]),
        ],
    )
}

/// Implementable variant where C and E ride the cycle (e6,e5,e4) once before
/// heading home; the induced queue on e4 delays F's tail.
pub fn implementable_cycle(inst: &Instance) -> Result<WalkFlow> {
    demand_flow(
        inst,
        &[
            ("B", &["e7"]),
            ("C", &["e5", "e4", "e6", "e5", "e4", "e2"]),
            ("D", &["e3"]),
            ("E", &["e1", "e6", "e5", "e4", "e2", "e3"]),
            ("F", &["e4"]),
        ],
    )
}

/// Structural facts that hold for every loading of the five-commodity
/// instance: the queue on e2 never exceeds 3; e4 is queueless before t = 9;
/// e1, e7 and e6 never queue at all.
pub fn check_structural_suite(inst: &Instance, lr: &LoadingResult, eps: &Rat) -> Result<()> {
    let fail = |m: String| Err(Error::Invariant(m));
    let active_end = inst.horizon.active_end();
    let e = |id: &str| inst.edge_index(id).unwrap();
    let q2_max = lr.dynamics[e("e2")].queue.max_value();
    if q2_max > Rat::int(3) {
        return fail(format!("queue on e2 reached {q2_max}, above 3"));
    }
    let d4 = &lr.dynamics[e("e4")].delay;
    if !d4.restrict(&Rat::zero(), &Rat::int(9)).is_constant_on(&Rat::zero(), &Rat::int(9), eps) {
        return fail("delay on e4 departs from eps before t = 9".into());
    }
    for (id, expect) in [("e1", Rat::one()), ("e7", Rat::one()), ("e6", Rat::int(4))] {
        let d = &lr.dynamics[e(id)].delay;
        if !d.is_constant_on(&Rat::zero(), active_end, &expect) {
            return fail(format!("delay on {id} is not constantly {expect}"));
        }
    }
    Ok(())
}

/// Closed-form bound on the candidate flow's total travel time, summed from
/// the per-commodity bounds: `76 + (12 + 3M)·eps`.
pub fn candidate_cost_bound(p: &ScenarioParams) -> Rat {
    Rat::int(76) + (Rat::int(12) + Rat::int(3) * &p.m) * &p.eps
}

/// Alternative form of the candidate bound, `C + (11 + 3M)·eps` for a
/// demand-independent constant `C`. Note the eps-coefficient differs from
/// [`candidate_cost_bound`] by one unit; the summed form is the one the
/// acceptance suite pins, the alternative is kept for reference.
pub fn candidate_cost_bound_alt(p: &ScenarioParams, c: &Rat) -> Rat {
    c.clone() + (Rat::int(11) + Rat::int(3) * &p.m) * &p.eps
}

/// The five-commodity network restricted to commodity B alone (same graph
/// and horizon); its reference walk rides the cycle (e5,e4,e6) once.
pub fn counterexample_b_only(p: &ScenarioParams) -> Result<(Instance, WalkFlow)> {
    let full = counterexample(p)?;
    let b = full.commodity_index("B")?;
    let inst = Instance::new(
        full.horizon.active_end().clone(),
        Some(full.horizon.end().clone()),
        full.nodes.clone(),
        full.edges.clone(),
        vec![full.commodities[b].clone()],
    )?;
    let flow = demand_flow(&inst, &[("B", &["e7", "e5", "e4", "e6"])])?;
    Ok((inst, flow))
}

/// The three-node loop network of [`nonmonotone_example`] with the ramp edge
/// replaced by a point queue, so that both monotonicity properties hold and
/// the improvement pipeline applies. Returns the instance with the same
/// direct and detour flows.
pub fn monotone_loop_example() -> Result<(Instance, WalkFlow, WalkFlow)> {
    let nodes: Vec<String> = vec!["s12".into(), "v".into(), "d12".into()];
    let edges = vec![
        Edge {
            id: "e1".into(),
            tail: 0,
            head: 1,
            model: EdgeModel::ConstantDelay { tau: Rat::one() },
        },
        Edge {
            id: "e2".into(),
            tail: 1,
            head: 2,
            model: vickrey(Rat::one(), Rat::int(2)),
        },
        Edge {
            id: "e3".into(),
            tail: 2,
            head: 1,
            model: EdgeModel::ConstantDelay { tau: Rat::one() },
        },
    ];
    let commodities = vec![
        Commodity {
            id: "c1".into(),
            source: 0,
            sink: 2,
            vot: Rat::one(),
            inflow: StepFn::rect(Rat::int(5), Rat::int(6), Rat::int(6)),
        },
        Commodity {
            id: "c2".into(),
            source: 0,
            sink: 2,
            vot: Rat::one(),
            inflow: StepFn::rect(Rat::zero(), Rat::one(), Rat::one()),
        },
    ];
    let inst = Instance::new(Rat::int(14), Some(Rat::int(30)), nodes, edges, commodities)?;
    let direct = demand_flow(&inst, &[("c1", &["e1", "e2"]), ("c2", &["e1", "e2"])])?;
    let detour = demand_flow(
        &inst,
        &[("c1", &["e1", "e2"]), ("c2", &["e1", "e2", "e3", "e2"])],
    )?;
    Ok((inst, direct, detour))
}

/// The two-commodity instance with the decreasing-ramp edge, plus its two
/// canonical flows: everyone direct over (e1,e2), and the variant where the
/// first commodity loops once over (e2,e3) so its early traversal lowers the
/// delay before the bulk arrives.
pub fn nonmonotone_example() -> Result<(Instance, WalkFlow, WalkFlow)> {
    let nodes: Vec<String> = vec!["s12".into(), "v".into(), "d12".into()];
    let edges = vec![
        Edge {
            id: "e1".into(),
            tail: 0,
            head: 1,
            model: EdgeModel::ConstantDelay { tau: Rat::one() },
        },
        Edge {
            id: "e2".into(),
            tail: 1,
            head: 2,
            model: EdgeModel::DecreasingRamp {
                d_hi: Rat::int(2),
                d_lo: Rat::one(),
                lag: Rat::one(),
                cap: Rat::int(2),
                drain: Rat::new(1, 2),
            },
        },
        Edge {
            id: "e3".into(),
            tail: 2,
            head: 1,
            model: EdgeModel::ConstantDelay { tau: Rat::one() },
        },
    ];
    let commodities = vec![
        Commodity {
            id: "c1".into(),
            source: 0,
            sink: 2,
            vot: Rat::one(),
            inflow: StepFn::rect(Rat::int(5), Rat::int(6), Rat::int(6)),
        },
        Commodity {
            id: "c2".into(),
            source: 0,
            sink: 2,
            vot: Rat::one(),
            inflow: StepFn::rect(Rat::zero(), Rat::one(), Rat::one()),
        },
    ];
    let inst = Instance::new(Rat::int(12), Some(Rat::int(20)), nodes, edges, commodities)?;
    let direct = demand_flow(&inst, &[("c1", &["e1", "e2"]), ("c2", &["e1", "e2"])])?;
    let detour = demand_flow(
        &inst,
        &[("c1", &["e1", "e2"]), ("c2", &["e1", "e2", "e3", "e2"])],
    )?;
    Ok((inst, direct, detour))
}
