//! Instance model: graph, per-edge travel-time model parameters, commodities,
//! walks, and the text document format.

use crate::error::Error;
use crate::timefn::{Horizon, Rat, StepFn};
use crate::Result;
use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

mod document;

/// Service rate of a queueing edge; `Infinite` means the queue is always
/// empty and the delay stays at the free-flow time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Capacity {
    Finite(Rat),
    Infinite,
}

impl Capacity {
    pub fn as_finite(&self) -> Option<&Rat> {
        match self {
            Capacity::Finite(v) => Some(v),
            Capacity::Infinite => None,
        }
    }
}

/// Travel-time model of an edge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EdgeModel {
    /// Point queue: delay = tau + queue/nu.
    Vickrey { tau: Rat, nu: Capacity },
    /// Flow-independent delay. `tau = 0` is reserved for synthetic
    /// source/sink attachment edges.
    ConstantDelay { tau: Rat },
    /// Delay starts at `d_hi` and decreases with lagged, capped cumulative
    /// inflow: `delay(t) = max(d_hi - drain·∫_0^{t-lag} min(inflow, cap), d_lo)`.
    DecreasingRamp {
        d_hi: Rat,
        d_lo: Rat,
        lag: Rat,
        cap: Rat,
        drain: Rat,
    },
}

impl EdgeModel {
    /// Lower bound of the delay over all inflows (zero only for synthetic
    /// constant edges).
    pub fn delay_lower_bound(&self) -> Rat {
        match self {
            EdgeModel::Vickrey { tau, .. } => tau.clone(),
            EdgeModel::ConstantDelay { tau } => tau.clone(),
            EdgeModel::DecreasingRamp { d_lo, .. } => d_lo.clone(),
        }
    }

    fn validate(&self, edge: &str) -> Result<()> {
        let err = |detail: &str| {
            Err(Error::InvalidModel {
                edge: edge.to_string(),
                detail: detail.to_string(),
            })
        };
        match self {
            EdgeModel::Vickrey { tau, nu } => {
                if !tau.is_positive() {
                    return err("vickrey needs tau > 0");
                }
                if let Capacity::Finite(nu) = nu {
                    if !nu.is_positive() {
                        return err("vickrey needs nu > 0");
                    }
                }
            }
            EdgeModel::ConstantDelay { tau } => {
                if tau.is_negative() {
                    return err("constant delay needs tau >= 0");
                }
            }
            EdgeModel::DecreasingRamp {
                d_hi,
                d_lo,
                lag,
                cap,
                drain,
            } => {
                if d_lo.is_negative() || d_hi < d_lo {
                    return err("ramp needs d_hi >= d_lo >= 0");
                }
                if lag.is_negative() {
                    return err("ramp needs lag >= 0");
                }
                if !cap.is_positive() {
                    return err("ramp needs cap > 0");
                }
                if drain.is_negative() {
                    return err("ramp needs drain >= 0");
                }
            }
        }
        Ok(())
    }
}

/// Directed edge. Indices refer to `Instance::nodes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub model: EdgeModel,
}

/// Commodity: fixed network inflow at `source` bound for `sink`, with a
/// value-of-time weight.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Commodity {
    pub id: String,
    pub source: usize,
    pub sink: usize,
    pub vot: Rat,
    pub inflow: StepFn,
}

/// Walk of a commodity: consecutive edges joined head-to-tail, from the
/// commodity's source to its sink. Repeated edges and cycles are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk {
    pub commodity: usize,
    pub edges: Vec<usize>,
}

/// Walk-indexed inflow rates.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WalkFlow {
    pub entries: Vec<(Walk, StepFn)>,
}

impl WalkFlow {
    /// Adds inflow to a walk, merging with an existing entry for it.
    pub fn push(&mut self, walk: Walk, inflow: StepFn) {
        if let Some((_, f)) = self.entries.iter_mut().find(|(w, _)| *w == walk) {
            *f = f.add(&inflow);
        } else {
            self.entries.push((walk, inflow));
        }
    }
}

/// Validated instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub horizon: Horizon,
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    pub commodities: Vec<Commodity>,
}

impl Instance {
    /// Builds and validates an instance. `t_end = None` picks the automatic
    /// horizon extension.
    pub fn new(
        t_active_end: Rat,
        t_end: Option<Rat>,
        nodes: Vec<String>,
        edges: Vec<Edge>,
        commodities: Vec<Commodity>,
    ) -> Result<Instance> {
        let t_end = match t_end {
            Some(t) => t,
            None => auto_t_end(&t_active_end, &edges, &commodities),
        };
        let horizon = Horizon::new(t_active_end, t_end)?;
        let inst = Instance {
            horizon,
            nodes,
            edges,
            commodities,
        };
        inst.validate()?;
        Ok(inst)
    }

    fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::InvalidInstance(m));
        let mut seen_nodes = HashSet::new();
        for n in &self.nodes {
            if !seen_nodes.insert(n) {
                return err(format!("duplicate node `{n}`"));
            }
        }
        let mut seen_edges = HashSet::new();
        for e in &self.edges {
            if !seen_edges.insert(&e.id) {
                return err(format!("duplicate edge id `{}`", e.id));
            }
            if e.tail >= self.nodes.len() || e.head >= self.nodes.len() {
                return err(format!("edge `{}` references unknown node", e.id));
            }
            if e.tail == e.head {
                return err(format!("self-loop on edge `{}`", e.id));
            }
            e.model.validate(&e.id)?;
            // zero delay is only admissible on structurally synthetic
            // attachment edges
            if e.model.delay_lower_bound().is_zero() {
                let tail_is_super_source = !self.edges.iter().any(|f| f.head == e.tail);
                let head_is_super_sink = !self.edges.iter().any(|f| f.tail == e.head);
                if !(tail_is_super_source || head_is_super_sink) {
                    return err(format!(
                        "edge `{}` has zero delay but is not a source/sink attachment",
                        e.id
                    ));
                }
            }
        }
        let mut seen_comms = HashSet::new();
        for c in &self.commodities {
            if !seen_comms.insert(&c.id) {
                return err(format!("duplicate commodity `{}`", c.id));
            }
            if c.source >= self.nodes.len() || c.sink >= self.nodes.len() {
                return err(format!("commodity `{}` references unknown node", c.id));
            }
            if c.source == c.sink {
                return err(format!("commodity `{}` has source equal to sink", c.id));
            }
            if !c.vot.is_positive() {
                return err(format!("commodity `{}` needs vot > 0", c.id));
            }
            if c.inflow.is_zero_fn() {
                return err(format!("commodity `{}` has zero inflow", c.id));
            }
            if !c.inflow.is_nonnegative() {
                return err(format!("commodity `{}` has negative inflow", c.id));
            }
            let (s0, s1) = c.inflow.support().unwrap();
            if s0.is_negative() || s1 > *self.horizon.active_end() {
                return err(format!(
                    "commodity `{}` inflow not supported on the active horizon",
                    c.id
                ));
            }
            if !self.reachable(c.source, c.sink) {
                return err(format!(
                    "commodity `{}`: sink not reachable from source",
                    c.id
                ));
            }
        }
        Ok(())
    }

    fn reachable(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(v) = queue.pop_front() {
            if v == to {
                return true;
            }
            for e in &self.edges {
                if e.tail == v && !seen[e.head] {
                    seen[e.head] = true;
                    queue.push_back(e.head);
                }
            }
        }
        false
    }

    pub fn node_index(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Document(format!("unknown node `{name}`")))
    }

    pub fn edge_index(&self, id: &str) -> Result<usize> {
        self.edges
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| Error::Document(format!("unknown edge `{id}`")))
    }

    pub fn commodity_index(&self, id: &str) -> Result<usize> {
        self.commodities
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::Document(format!("unknown commodity `{id}`")))
    }

    /// Smallest positive delay lower bound over all edges (synthetic
    /// zero-delay attachments excluded); `None` for an edgeless graph.
    pub fn tau_min(&self) -> Option<Rat> {
        self.edges
            .iter()
            .map(|e| e.model.delay_lower_bound())
            .filter(Rat::is_positive)
            .min()
    }

    /// Edges leaving `v`, in edge order.
    pub fn out_edges(&self, v: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.tail == v)
    }

    /// Edges entering `v`, in edge order.
    pub fn in_edges(&self, v: usize) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.head == v)
    }

    /// Validates a walk against the graph and its commodity endpoints.
    pub fn check_walk(&self, walk: &Walk) -> Result<()> {
        let c = self
            .commodities
            .get(walk.commodity)
            .ok_or_else(|| Error::InvalidWalk("unknown commodity".into()))?;
        if walk.edges.is_empty() {
            return Err(Error::InvalidWalk(format!(
                "walk of commodity `{}` is empty",
                c.id
            )));
        }
        let mut at = c.source;
        for &ei in &walk.edges {
            let e = self
                .edges
                .get(ei)
                .ok_or_else(|| Error::InvalidWalk("unknown edge".into()))?;
            if e.tail != at {
                return Err(Error::InvalidWalk(format!(
                    "walk of commodity `{}` breaks at edge `{}`",
                    c.id, e.id
                )));
            }
            at = e.head;
        }
        if at != c.sink {
            return Err(Error::InvalidWalk(format!(
                "walk of commodity `{}` does not end at its sink",
                c.id
            )));
        }
        Ok(())
    }

    /// Human-readable walk rendering, e.g. `(e7,e5,e4,e6)`.
    pub fn walk_name(&self, walk: &Walk) -> String {
        let mut s = String::from("(");
        for (i, &e) in walk.edges.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}", self.edges[e].id);
        }
        s.push(')');
        s
    }

    /// Total demand mass over all commodities.
    pub fn total_demand(&self) -> Rat {
        self.commodities
            .iter()
            .fold(Rat::zero(), |acc, c| acc + c.inflow.total_mass())
    }
}

/// Default technical horizon: active end, plus every free-flow time, plus a
/// crude bound on the total queueing delay any particle can accumulate.
fn auto_t_end(t_active_end: &Rat, edges: &[Edge], commodities: &[Commodity]) -> Rat {
    let mass = commodities
        .iter()
        .fold(Rat::zero(), |acc, c| acc + c.inflow.total_mass());
    let mut t = t_active_end.clone() + Rat::one();
    for e in edges {
        match &e.model {
            EdgeModel::Vickrey { tau, nu } => {
                t += tau.clone();
                if let Capacity::Finite(nu) = nu {
                    if nu.is_positive() {
                        t += &mass / nu;
                    }
                }
            }
            EdgeModel::ConstantDelay { tau } => t += tau.clone(),
            EdgeModel::DecreasingRamp { d_hi, .. } => t += d_hi.clone(),
        }
    }
    t
}

/// All walks of `commodity` whose free-flow length (sum of delay lower
/// bounds) stays within `cost_budget`. Finite because every edge delay is
/// bounded below by a positive constant; errors otherwise.
pub fn enumerate_walks(inst: &Instance, commodity: usize, cost_budget: &Rat) -> Result<Vec<Walk>> {
    assert!(!cost_budget.is_negative());
    for e in &inst.edges {
        if !e.model.delay_lower_bound().is_positive() {
            return Err(Error::InvalidInstance(format!(
                "walk enumeration needs positive delays, edge `{}` can reach zero",
                e.id
            )));
        }
    }
    let c = &inst.commodities[commodity];
    let mut found = Vec::new();
    let mut stack: Vec<(usize, Rat, Vec<usize>)> = vec![(c.source, cost_budget.clone(), vec![])];
    while let Some((at, left, walk)) = stack.pop() {
        if at == c.sink && !walk.is_empty() {
            found.push(Walk {
                commodity,
                edges: walk.clone(),
            });
        }
        for (ei, e) in inst.out_edges(at) {
            let cost = e.model.delay_lower_bound();
            if cost <= left {
                let mut w = walk.clone();
                w.push(ei);
                stack.push((e.head, &left - &cost, w));
            }
        }
    }
    found.sort_by(|a, b| (a.edges.len(), &a.edges).cmp(&(b.edges.len(), &b.edges)));
    Ok(found)
}

/// Parses an instance document (see the crate README for the format).
pub fn load_instance(text: &str) -> Result<Instance> {
    document::parse_instance(text)
}

/// Serializes an instance back into document form; `load_instance` of the
/// output reproduces the instance exactly.
pub fn serialize_instance(inst: &Instance) -> String {
    document::serialize_instance(inst)
}

/// Parses a walk-flow document against an instance.
pub fn load_walkflow(inst: &Instance, text: &str) -> Result<WalkFlow> {
    document::parse_walkflow(inst, text)
}

pub fn serialize_walkflow(inst: &Instance, flow: &WalkFlow) -> String {
    document::serialize_walkflow(inst, flow)
}

/// Parses a toll-schedule document against an instance: one step function per
/// edge, zero where unspecified.
pub fn load_tolls(inst: &Instance, text: &str) -> Result<Vec<StepFn>> {
    document::parse_tolls(inst, text)
}

/// Interval list `[[t0,t1,rate],...]` summed into a step function.
pub(crate) fn intervals_to_step(rows: Vec<(Rat, Rat, Rat)>) -> Result<StepFn> {
    for (a, b, _) in &rows {
        if a > b {
            return Err(Error::ReversedInterval {
                a: a.to_string(),
                b: b.to_string(),
            });
        }
    }
    Ok(StepFn::from_pieces(rows))
}

/// Aggregated demand rate entering the network at node `v`.
pub fn demand_at_node(inst: &Instance, v: usize) -> StepFn {
    StepFn::sum(
        inst.commodities
            .iter()
            .filter(|c| c.source == v)
            .map(|c| &c.inflow),
    )
}

/// Map from commodity to the indices of `flow.entries` that belong to it.
pub fn entries_by_commodity(flow: &WalkFlow, n_commodities: usize) -> Vec<Vec<usize>> {
    let mut by: Vec<Vec<usize>> = vec![Vec::new(); n_commodities];
    for (i, (w, _)) in flow.entries.iter().enumerate() {
        by[w.commodity].push(i);
    }
    by
}

/// Checks `Σ_w h_w = r_i` exactly for every commodity.
pub fn check_demand_coverage(inst: &Instance, flow: &WalkFlow) -> Result<()> {
    for (w, f) in &flow.entries {
        inst.check_walk(w)?;
        if !f.is_nonnegative() {
            return Err(Error::InvalidWalk(format!(
                "negative walk inflow on {}",
                inst.walk_name(w)
            )));
        }
    }
    let by = entries_by_commodity(flow, inst.commodities.len());
    for (ci, c) in inst.commodities.iter().enumerate() {
        let total = StepFn::sum(by[ci].iter().map(|&i| &flow.entries[i].1));
        if total != c.inflow {
            return Err(Error::DemandMismatch {
                commodity: c.id.clone(),
            });
        }
    }
    Ok(())
}
