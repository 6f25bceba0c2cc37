//! Constructive flow transformations for single-sink instances: rerouting
//! sink-cycle flow into the sink (leaving particles waiting at nodes), then
//! removing the waiting slice by slice. Composed, they strictly lower the
//! total travel time of any flow that rides a cycle through the sink.

use crate::analysis::{integrate_plin_times_step, total_travel_time};
use crate::error::Error;
use crate::network::{Commodity, Edge, EdgeModel, Instance, Walk, WalkFlow};
use crate::param::{flow_decompose, FrozenTimes};
use crate::timefn::{pushforward, PLin, Rat, StepFn};
use crate::vickrey::{edge_dynamics, load_network, EdgeDynamics, LoadingResult};
use crate::Result;

/// A single-sink instance extended by a super source feeding every original
/// source through a zero-delay edge, and a zero-delay edge draining the sink
/// into a super sink. Original edges keep their indices.
#[derive(Debug, Clone)]
pub struct ExtendedInstance {
    pub inst: Instance,
    /// Number of original edges; `inst.edges[..n_base]` match the base
    /// instance.
    pub n_base: usize,
    pub super_source: usize,
    pub super_sink: usize,
    /// The original shared sink.
    pub sink: usize,
    /// Index of the synthetic edge `(sink, super_sink)`.
    pub sink_edge: usize,
    /// Synthetic source edges as `(edge index, original source node)`.
    pub source_edges: Vec<(usize, usize)>,
    /// Original source node of each commodity.
    pub commodity_sources: Vec<usize>,
}

fn fresh_name(base: &str, taken: &[String]) -> String {
    let mut name = base.to_string();
    while taken.iter().any(|n| *n == name) {
        name.push('_');
    }
    name
}

/// Requires every commodity to share one sink (sources may differ). Builds
/// the extended instance; commodities are re-rooted at the super source so
/// extended walks run super-source to super-sink.
pub fn extend_instance(inst: &Instance) -> Result<ExtendedInstance> {
    let sink = inst.commodities[0].sink;
    if inst.commodities.iter().any(|c| c.sink != sink) {
        return Err(Error::WrongTopology {
            required: "a single shared sink".into(),
            found: "multiple sinks".into(),
        });
    }
    let mut nodes = inst.nodes.clone();
    let ss_name = fresh_name("super_source", &nodes);
    nodes.push(ss_name);
    let super_source = nodes.len() - 1;
    let sk_name = fresh_name("super_sink", &nodes);
    nodes.push(sk_name);
    let super_sink = nodes.len() - 1;

    let mut edges = inst.edges.clone();
    let taken_ids: Vec<String> = edges.iter().map(|e| e.id.clone()).collect();
    let mut sources: Vec<usize> = inst.commodities.iter().map(|c| c.source).collect();
    sources.sort_unstable();
    sources.dedup();
    let mut source_edges = Vec::with_capacity(sources.len());
    for s in sources {
        let id = fresh_name(&format!("__in_{}", inst.nodes[s]), &taken_ids);
        source_edges.push((edges.len(), s));
        edges.push(Edge {
            id,
            tail: super_source,
            head: s,
            model: EdgeModel::ConstantDelay { tau: Rat::zero() },
        });
    }
    let sink_edge = edges.len();
    edges.push(Edge {
        id: fresh_name("__out", &taken_ids),
        tail: sink,
        head: super_sink,
        model: EdgeModel::ConstantDelay { tau: Rat::zero() },
    });

    let commodities = inst
        .commodities
        .iter()
        .map(|c| Commodity {
            id: c.id.clone(),
            source: super_source,
            sink: super_sink,
            vot: c.vot.clone(),
            inflow: c.inflow.clone(),
        })
        .collect();

    let ext = Instance::new(
        inst.horizon.active_end().clone(),
        Some(inst.horizon.end().clone()),
        nodes,
        edges,
        commodities,
    )?;
    Ok(ExtendedInstance {
        inst: ext,
        n_base: inst.edges.len(),
        super_source,
        super_sink,
        sink,
        sink_edge,
        source_edges,
        commodity_sources: inst.commodities.iter().map(|c| c.source).collect(),
    })
}

impl ExtendedInstance {
    /// Synthetic source edge feeding node `s`.
    pub fn source_edge_for(&self, s: usize) -> Option<usize> {
        self.source_edges
            .iter()
            .find(|(_, node)| *node == s)
            .map(|(e, _)| *e)
    }

    /// Demand entering the base instance at source node `s`, pooled over the
    /// commodities rooted there.
    pub fn pooled_demand(&self, s: usize) -> StepFn {
        StepFn::sum(
            self.inst
                .commodities
                .iter()
                .zip(&self.commodity_sources)
                .filter(|(_, src)| **src == s)
                .map(|(c, _)| &c.inflow),
        )
    }

    /// Maps a base-instance walk to the extended instance.
    pub fn extend_walk(&self, walk: &Walk) -> Walk {
        let s = self.commodity_sources[walk.commodity];
        let mut edges = vec![self.source_edge_for(s).expect("source edge")];
        edges.extend(walk.edges.iter().copied());
        edges.push(self.sink_edge);
        Walk {
            commodity: walk.commodity,
            edges,
        }
    }

    /// Maps a base-instance walk flow to the extended instance.
    pub fn extend_walkflow(&self, flow: &WalkFlow) -> WalkFlow {
        let mut out = WalkFlow::default();
        for (w, h) in &flow.entries {
            out.push(self.extend_walk(w), h.clone());
        }
        out
    }
}

/// An edge flow on an extended instance in which particles may wait at
/// nodes: at every original node the cumulative departure never exceeds the
/// cumulative arrival, with equality at the end of the horizon.
#[derive(Debug, Clone)]
pub struct WaitingFlow {
    pub ext: ExtendedInstance,
    pub flows: Vec<StepFn>,
}

impl WaitingFlow {
    /// Per-edge dynamics of the flow's own inflows.
    pub fn dynamics(&self) -> Result<Vec<EdgeDynamics>> {
        self.ext
            .inst
            .edges
            .iter()
            .zip(&self.flows)
            .map(|(e, f)| edge_dynamics(&e.id, &e.model, f, &self.ext.inst.horizon))
            .collect()
    }

    /// Node balances (cumulative departures minus cumulative arrivals)
    /// under the flow's own dynamics.
    pub fn balances(&self) -> Result<Vec<PLin>> {
        balances_from(&self.ext.inst, &self.dynamics()?)
    }

    /// Amount of flow waiting at `v`: arrivals minus departures.
    pub fn waiting_at(&self, v: usize) -> Result<PLin> {
        Ok(self.balances()?[v].scale(&-Rat::one()))
    }

    /// Cumulative arrival at the super sink.
    pub fn sink_arrival_cumulative(&self) -> PLin {
        let (lo, hi) = self.ext.inst.horizon.full();
        PLin::cumulative_of(&self.flows[self.ext.sink_edge], &lo, &hi)
    }

    /// Checks the waiting-flow invariants; `no_waiting` additionally demands
    /// exact conservation at every original node.
    pub fn validate(&self, no_waiting: bool) -> Result<()> {
        let inst = &self.ext.inst;
        let (lo, hi) = inst.horizon.full();
        let fail = |m: String| Err(Error::Invariant(m));
        for (e, f) in self.flows.iter().enumerate() {
            if !f.is_nonnegative() {
                return fail(format!("negative flow on `{}`", inst.edges[e].id));
            }
            if let Some((_, s1)) = f.support() {
                if s1 > *inst.horizon.active_end() {
                    return fail(format!(
                        "flow on `{}` beyond the active horizon",
                        inst.edges[e].id
                    ));
                }
            }
        }
        for (e, s) in &self.ext.source_edges {
            if self.flows[*e] != self.ext.pooled_demand(*s) {
                return fail(format!(
                    "source edge into `{}` does not carry its demand",
                    inst.nodes[*s]
                ));
            }
        }
        let balances = self.balances()?;
        let zero = PLin::constant(lo, hi.clone(), Rat::zero());
        for v in 0..inst.nodes.len() {
            if v == self.ext.super_source || v == self.ext.super_sink {
                continue;
            }
            let b = &balances[v];
            if no_waiting {
                if *b != zero {
                    return fail(format!("waiting remains at node `{}`", inst.nodes[v]));
                }
            } else {
                if !b.le_pointwise(&zero) {
                    return fail(format!(
                        "departures outrun arrivals at node `{}`",
                        inst.nodes[v]
                    ));
                }
                if !b.eval(&hi).is_zero() {
                    return fail(format!(
                        "mass stuck at node `{}` at the end of the horizon",
                        inst.nodes[v]
                    ));
                }
            }
        }
        Ok(())
    }
}

fn balances_from(inst: &Instance, dynamics: &[EdgeDynamics]) -> Result<Vec<PLin>> {
    let (lo, hi) = inst.horizon.full();
    let mut out = Vec::with_capacity(inst.nodes.len());
    for v in 0..inst.nodes.len() {
        let mut b = PLin::constant(lo.clone(), hi.clone(), Rat::zero());
        for (e, _) in inst.out_edges(v) {
            b = b.add(&PLin::cumulative_of(&dynamics[e].inflow, &lo, &hi));
        }
        for (e, _) in inst.in_edges(v) {
            b = b.sub(&PLin::cumulative_of(&dynamics[e].outflow, &lo, &hi));
        }
        out.push(b);
    }
    Ok(out)
}

/// Removes all flow-carrying cycles through the sink from a loaded flow:
/// every walk's flow is cut at its first entry into an edge leaving the
/// sink and sent to the super sink at that moment instead. The result is a
/// waiting flow whose super-sink arrivals dominate the original ones
/// pointwise, strictly somewhere.
pub fn remove_d_cycle(inst: &Instance, lr: &LoadingResult) -> Result<WaitingFlow> {
    let ext = extend_instance(inst)?;
    let sink = ext.sink;
    // extended edge flows of the loaded reference
    let mut flows: Vec<StepFn> = vec![StepFn::zero(); ext.inst.edges.len()];
    for e in 0..ext.n_base {
        flows[e] = lr.edge_inflow(e).clone();
    }
    for (e, s) in &ext.source_edges {
        flows[*e] = ext.pooled_demand(*s);
    }
    let mut sink_inflow = StepFn::zero();
    for lw in &lr.walks {
        sink_inflow = sink_inflow.add(lw.segments.last().unwrap());
    }
    let original_sink_cum = {
        let (lo, hi) = ext.inst.horizon.full();
        PLin::cumulative_of(&sink_inflow, &lo, &hi)
    };
    flows[ext.sink_edge] = sink_inflow;

    // cut each walk at its first entry into an edge leaving the sink
    let mut found = false;
    for lw in &lr.walks {
        let Some(j_star) = lw
            .walk
            .edges
            .iter()
            .position(|&e| inst.edges[e].tail == sink)
        else {
            continue;
        };
        if lw.segments[j_star].is_zero_fn() {
            continue;
        }
        found = true;
        for (j, &e) in lw.walk.edges.iter().enumerate().skip(j_star) {
            flows[e] = flows[e].sub(&lw.segments[j]);
        }
        // reroute: arrive at the super sink when entering the cycle, not
        // after riding it
        flows[ext.sink_edge] = flows[ext.sink_edge]
            .sub(lw.segments.last().unwrap())
            .add(&lw.segments[j_star]);
    }
    if !found {
        return Err(Error::NoDCycle);
    }
    for (e, f) in flows.iter().enumerate() {
        if !f.is_nonnegative() {
            return Err(Error::Invariant(format!(
                "cycle removal drove edge `{}` negative",
                ext.inst.edges[e].id
            )));
        }
    }
    // no flow may remain on edges leaving the sink
    for (e, edge) in inst.edges.iter().enumerate() {
        if edge.tail == sink && !flows[e].is_zero_fn() {
            return Err(Error::Invariant(format!(
                "flow remains on `{}` leaving the sink",
                edge.id
            )));
        }
    }
    let wf = WaitingFlow { ext, flows };
    wf.validate(false)?;
    // super-sink arrivals dominate the original ones, strictly somewhere
    let new_cum = wf.sink_arrival_cumulative();
    if !original_sink_cum.le_pointwise(&new_cum) || new_cum == original_sink_cum {
        return Err(Error::Invariant(
            "cycle removal failed to strictly advance sink arrivals".into(),
        ));
    }
    Ok(wf)
}

/// Turns a flow with waiting into one without: the horizon is processed in
/// slices no longer than the shortest edge delay; in each pass, every node's
/// departures are re-timed through the map sending the n-th unit of
/// departing mass to the arrival time of the n-th arriving unit (earliest
/// selection on plateaus), and each outgoing edge's inflow is pushed forward
/// through that map.
pub fn remove_waiting(wf: &WaitingFlow) -> Result<WaitingFlow> {
    wf.validate(false)?;
    let inst = &wf.ext.inst;
    let (lo, hi) = inst.horizon.full();
    let active_end = inst.horizon.active_end();
    let tau_min = inst
        .tau_min()
        .ok_or_else(|| Error::Invariant("extended instance has no delaying edge".into()))?;
    // slice count: smallest K with active_end / K <= tau_min
    let k_slices = u64::try_from((active_end.clone() / &tau_min).ceil_int())
        .map_err(|_| Error::Invariant("horizon/tau_min out of range".into()))?
        .max(1);
    let slice = active_end.clone() / Rat::int(k_slices as i64);

    let original_sink_cum = wf.sink_arrival_cumulative();
    let mut cur = wf.clone();
    let mut done_at = None;
    for j in 1..=k_slices {
        let dynamics = cur.dynamics()?;
        // slice invariants of the current state: still a waiting flow, with
        // conservation settled on the prefix processed so far
        let balances = balances_from(inst, &dynamics)?;
        let zero = PLin::constant(lo.clone(), hi.clone(), Rat::zero());
        let settled = slice.clone() * Rat::int((j - 1) as i64);
        let mut any_waiting = false;
        for v in 0..inst.nodes.len() {
            if v == wf.ext.super_source || v == wf.ext.super_sink {
                continue;
            }
            let b = &balances[v];
            if !b.le_pointwise(&zero) || !b.eval(&hi).is_zero() {
                return Err(Error::Invariant(format!(
                    "node `{}` lost the waiting-flow invariant mid-pass",
                    inst.nodes[v]
                )));
            }
            if !b.is_constant_on(&lo, &settled, &Rat::zero()) {
                return Err(Error::Invariant(format!(
                    "waiting persists at `{}` within the settled prefix [0, {settled}]",
                    inst.nodes[v]
                )));
            }
            if *b != zero {
                any_waiting = true;
            }
        }
        if !any_waiting {
            done_at = Some(j);
            break; // every later pass is the identity
        }
        let mut next = cur.flows.clone();
        for v in 0..inst.nodes.len() {
            if v == wf.ext.super_source || v == wf.ext.super_sink {
                continue;
            }
            // cumulative arrivals and departures at v
            let mut r_in = PLin::constant(lo.clone(), hi.clone(), Rat::zero());
            for (e, _) in inst.in_edges(v) {
                r_in = r_in.add(&PLin::cumulative_of(&dynamics[e].outflow, &lo, &hi));
            }
            let mut r_out = PLin::constant(lo.clone(), hi.clone(), Rat::zero());
            for (e, _) in inst.out_edges(v) {
                r_out = r_out.add(&PLin::cumulative_of(&dynamics[e].inflow, &lo, &hi));
            }
            if r_in.max_value().is_zero() || r_out == r_in {
                continue; // nothing moves, or no waiting here
            }
            let xi = r_in.min_inverse()?.compose(&r_out)?;
            for (e, _) in inst.out_edges(v) {
                next[e] = pushforward(&cur.flows[e], &xi)?;
            }
        }
        cur = WaitingFlow {
            ext: cur.ext,
            flows: next,
        };
        // sink arrivals only ever advance
        if !original_sink_cum.le_pointwise(&cur.sink_arrival_cumulative()) {
            return Err(Error::Invariant(
                "a waiting-removal pass delayed a sink arrival".into(),
            ));
        }
    }
    let _ = done_at;
    cur.validate(true)?;
    Ok(cur)
}

/// Output of the improvement pipeline.
#[derive(Debug, Clone)]
pub struct ImproveOutcome {
    pub improved: WalkFlow,
    pub cost_before: Rat,
    pub cost_after: Rat,
}

/// If the flow rides a cycle through the (single, shared) sink, reroutes it
/// into the sink, removes the induced waiting, decomposes the result into
/// walks and reloads it — producing a flow with strictly smaller total
/// travel time. Returns `None` when no flow-carrying sink cycle exists.
///
/// Requires queueing or constant-delay edges only: the construction leans on
/// their monotonicity (smaller inflows never exit later).
pub fn improve_if_cyclic(inst: &Instance, flow: &WalkFlow) -> Result<Option<ImproveOutcome>> {
    for e in &inst.edges {
        if matches!(e.model, EdgeModel::DecreasingRamp { .. }) {
            return Err(Error::WrongTopology {
                required: "monotone (queueing or constant-delay) edges".into(),
                found: format!("decreasing-ramp edge `{}`", e.id),
            });
        }
    }
    let lr = load_network(inst, flow)?;
    let cost_before = total_travel_time(&lr);
    let sink = inst.commodities[0].sink;
    let carries_cycle = lr.walks.iter().any(|lw| {
        lw.walk
            .edges
            .iter()
            .enumerate()
            .any(|(j, &e)| inst.edges[e].tail == sink && !lw.segments[j].is_zero_fn())
    });
    if inst.commodities.iter().any(|c| c.sink != sink) {
        return Err(Error::WrongTopology {
            required: "a single shared sink".into(),
            found: "multiple sinks".into(),
        });
    }
    if !carries_cycle {
        return Ok(None);
    }
    let wf = remove_d_cycle(inst, &lr)?;
    let settled = remove_waiting(&wf)?;
    let ext = &settled.ext;
    // decompose under the settled flow's own frozen times
    let ft = FrozenTimes::from_edge_flows(&ext.inst, &settled.flows)?;
    let pieces = flow_decompose(
        &ft,
        &ext.inst,
        &settled.flows,
        ext.super_source,
        ext.super_sink,
    )?;
    // strip synthetic edges and attribute to commodities by source
    let improved = attribute_pieces(inst, ext, &pieces)?;
    let lr2 = load_network(inst, &improved)?;
    // the reload reproduces the settled flow on the original edges
    for e in 0..ext.n_base {
        if *lr2.edge_inflow(e) != settled.flows[e] {
            return Err(Error::Invariant(format!(
                "reloading the improved flow changed edge `{}`",
                inst.edges[e].id
            )));
        }
    }
    let cost_after = total_travel_time(&lr2);
    if cost_after >= cost_before {
        return Err(Error::Invariant(format!(
            "improvement pipeline did not lower the cost: {cost_after} vs {cost_before}"
        )));
    }
    Ok(Some(ImproveOutcome {
        improved,
        cost_before,
        cost_after,
    }))
}

/// Converts decomposed super-source walks back into commodity walks. When
/// several commodities share a source, each walk's inflow is split between
/// them in proportion to their demand rates.
fn attribute_pieces(
    inst: &Instance,
    ext: &ExtendedInstance,
    pieces: &[crate::param::WalkPiece],
) -> Result<WalkFlow> {
    let mut improved = WalkFlow::default();
    for piece in pieces {
        let first = *piece.edges.first().unwrap();
        let last = *piece.edges.last().unwrap();
        if last != ext.sink_edge || piece.edges.len() < 3 {
            return Err(Error::Invariant(
                "decomposed walk does not run source edge to sink edge".into(),
            ));
        }
        let source = ext
            .source_edges
            .iter()
            .find(|(e, _)| *e == first)
            .map(|(_, s)| *s)
            .ok_or_else(|| Error::Invariant("walk does not start at a source edge".into()))?;
        let core: Vec<usize> = piece.edges[1..piece.edges.len() - 1].to_vec();
        let owners: Vec<usize> = inst
            .commodities
            .iter()
            .enumerate()
            .filter(|(_, c)| c.source == source)
            .map(|(i, _)| i)
            .collect();
        if owners.len() == 1 {
            improved.push(
                Walk {
                    commodity: owners[0],
                    edges: core,
                },
                piece.inflow.clone(),
            );
            continue;
        }
        let pool = ext.pooled_demand(source);
        for &ci in &owners {
            let share = proportional_share(&piece.inflow, &inst.commodities[ci].inflow, &pool);
            if !share.is_zero_fn() {
                improved.push(
                    Walk {
                        commodity: ci,
                        edges: core.clone(),
                    },
                    share,
                );
            }
        }
    }
    Ok(improved)
}

/// `piece · (r_i / pool)` wherever the pool is positive.
fn proportional_share(piece: &StepFn, r_i: &StepFn, pool: &StepFn) -> StepFn {
    let mut cuts: Vec<Rat> = piece
        .breakpoints()
        .iter()
        .chain(r_i.breakpoints())
        .chain(pool.breakpoints())
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
            let p = piece.value_at(&w[0]);
            let denom = pool.value_at(&w[0]);
            let v = if p.is_zero() || denom.is_zero() {
                Rat::zero()
            } else {
                p * r_i.value_at(&w[0]) / denom
            };
            (w[0].clone(), w[1].clone(), v)
        })
        .collect();
    StepFn::from_runs(runs)
}

/// Total travel time of an extended-instance loading computed through the
/// sink balance: mass enters at known times and spends, per unit, the time
/// until its super-sink arrival. Must agree with [`total_travel_time`]
/// exactly on every extended loading.
pub fn cost_via_sink_balance(ext: &ExtendedInstance, lr: &LoadingResult) -> Rat {
    let (lo, hi) = lr.horizon.full();
    let t_f = hi.clone();
    // ∫ (t_f − t) · Σ r_i dt
    let countdown = PLin::from_knots(vec![(lo.clone(), t_f.clone()), (hi.clone(), Rat::zero())]);
    let mut total = Rat::zero();
    for c in &ext.inst.commodities {
        total += integrate_plin_times_step(&countdown, &c.inflow, &lo, &hi);
    }
    // + ∫ ∇_sink dt, where ∇_sink(t) = −(cumulative super-sink arrival)
    let sink_cum = PLin::cumulative_of(lr.edge_inflow(ext.sink_edge), &lo, &hi);
    total - sink_cum.integrate(&lo, &hi).expect("horizon interval")
}
