//! Text document format for instances, walk flows and toll schedules.
//!
//! The format is a small key/value tree: maps `{ key: value, ... }`, lists
//! `[ a, b, ... ]` and atoms (names or rationals `p/q`). Commas are
//! interchangeable with whitespace, the colon after a key is optional, and
//! `#` starts a line comment. All numbers are exact rationals.

use super::{Capacity, Commodity, Edge, EdgeModel, Instance, Walk, WalkFlow};
use crate::error::Error;
use crate::timefn::{Rat, StepFn};
use crate::Result;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Atom(String),
    List(Vec<Value>),
    Map(Vec<(String, Value)>),
}

impl Value {
    fn atom(&self) -> Result<&str> {
        match self {
            Value::Atom(s) => Ok(s),
            _ => Err(Error::Document("expected a name or number".into())),
        }
    }

    fn rat(&self) -> Result<Rat> {
        self.atom()?.parse()
    }

    fn list(&self) -> Result<&[Value]> {
        match self {
            Value::List(v) => Ok(v),
            _ => Err(Error::Document("expected a list".into())),
        }
    }

    fn map(&self) -> Result<&[(String, Value)]> {
        match self {
            Value::Map(m) => Ok(m),
            _ => Err(Error::Document("expected a map".into())),
        }
    }

    fn get(&self, key: &str) -> Result<&Value> {
        self.map()?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::Document(format!("missing key `{key}`")))
    }

    fn get_opt(&self, key: &str) -> Option<&Value> {
        self.map()
            .ok()?
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
    }
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let mut in_comment = false;
    for ch in text.chars() {
        if in_comment {
            if ch == '\n' {
                in_comment = false;
            }
            continue;
        }
        match ch {
            '#' => {
                in_comment = true;
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            '{' | '}' | '[' | ']' | ':' | ',' => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
                tokens.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    tokens.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

struct Parser {
    tokens: Vec<String>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&str> {
        self.tokens.get(self.pos).map(String::as_str)
    }

    fn next(&mut self) -> Result<&str> {
        let t = self
            .tokens
            .get(self.pos)
            .ok_or_else(|| Error::Document("unexpected end of document".into()))?;
        self.pos += 1;
        Ok(t)
    }

    fn skip_commas(&mut self) {
        while self.peek() == Some(",") {
            self.pos += 1;
        }
    }

    fn value(&mut self) -> Result<Value> {
        match self.next()? {
            "{" => self.map_body("}"),
            "[" => {
                let mut items = Vec::new();
                loop {
                    self.skip_commas();
                    if self.peek() == Some("]") {
                        self.pos += 1;
                        return Ok(Value::List(items));
                    }
                    items.push(self.value()?);
                }
            }
            t @ ("}" | "]" | ":" | ",") => {
                Err(Error::Document(format!("unexpected `{t}`")))
            }
            atom => Ok(Value::Atom(atom.to_string())),
        }
    }

    fn map_body(&mut self, closer: &str) -> Result<Value> {
        let mut entries = Vec::new();
        loop {
            self.skip_commas();
            match self.peek() {
                None if closer.is_empty() => return Ok(Value::Map(entries)),
                None => return Err(Error::Document(format!("missing `{closer}`"))),
                Some(t) if t == closer => {
                    self.pos += 1;
                    return Ok(Value::Map(entries));
                }
                _ => {}
            }
            let key = self.next()?.to_string();
            if matches!(key.as_str(), "{" | "}" | "[" | "]" | ":" | ",") {
                return Err(Error::Document(format!("expected a key, got `{key}`")));
            }
            if self.peek() == Some(":") {
                self.pos += 1;
            }
            entries.push((key, self.value()?));
        }
    }
}

fn parse_document(text: &str) -> Result<Value> {
    let mut p = Parser {
        tokens: tokenize(text),
        pos: 0,
    };
    p.map_body("")
}

fn parse_intervals(v: &Value) -> Result<StepFn> {
    let mut rows = Vec::new();
    for row in v.list()? {
        let row = row.list()?;
        if row.len() != 3 {
            return Err(Error::Document(
                "interval rows are [t0, t1, rate]".into(),
            ));
        }
        rows.push((row[0].rat()?, row[1].rat()?, row[2].rat()?));
    }
    super::intervals_to_step(rows)
}

fn parse_model(v: &Value) -> Result<EdgeModel> {
    match v.get("kind")?.atom()? {
        "vickrey" => {
            let nu_raw = v.get("nu")?.atom()?;
            let nu = if nu_raw == "inf" || nu_raw == "infinity" {
                Capacity::Infinite
            } else {
                Capacity::Finite(nu_raw.parse()?)
            };
            Ok(EdgeModel::Vickrey {
                tau: v.get("tau")?.rat()?,
                nu,
            })
        }
        "constant" => Ok(EdgeModel::ConstantDelay {
            tau: v.get("tau")?.rat()?,
        }),
        "ramp" => Ok(EdgeModel::DecreasingRamp {
            d_hi: v.get("d_hi")?.rat()?,
            d_lo: v.get("d_lo")?.rat()?,
            lag: v.get("lag")?.rat()?,
            cap: v.get("cap")?.rat()?,
            drain: v.get("drain")?.rat()?,
        }),
        k => Err(Error::Document(format!("unknown edge model `{k}`"))),
    }
}

pub(super) fn parse_instance(text: &str) -> Result<Instance> {
    let doc = parse_document(text)?;
    let horizon = doc.get("horizon")?;
    let t_active_end = horizon.get("t_active_end")?.rat()?;
    let t_end = horizon
        .get_opt("t_end")
        .map(Value::rat)
        .transpose()?;

    let nodes: Vec<String> = doc
        .get("nodes")?
        .list()?
        .iter()
        .map(|v| v.atom().map(str::to_string))
        .collect::<Result<_>>()?;
    let node_idx = |name: &str| {
        nodes
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Document(format!("unknown node `{name}`")))
    };

    let mut edges = Vec::new();
    for e in doc.get("edges")?.list()? {
        edges.push(Edge {
            id: e.get("id")?.atom()?.to_string(),
            tail: node_idx(e.get("tail")?.atom()?)?,
            head: node_idx(e.get("head")?.atom()?)?,
            model: parse_model(e.get("model")?)?,
        });
    }

    let mut commodities = Vec::new();
    for c in doc.get("commodities")?.list()? {
        commodities.push(Commodity {
            id: c.get("id")?.atom()?.to_string(),
            source: node_idx(c.get("source")?.atom()?)?,
            sink: node_idx(c.get("sink")?.atom()?)?,
            vot: c.get("vot")?.rat()?,
            inflow: parse_intervals(c.get("inflow")?)?,
        });
    }

    Instance::new(t_active_end, t_end, nodes, edges, commodities)
}

pub(super) fn parse_walkflow(inst: &Instance, text: &str) -> Result<WalkFlow> {
    let doc = parse_document(text)?;
    let mut flow = WalkFlow::default();
    for entry in doc.get("flows")?.list()? {
        let commodity = inst.commodity_index(entry.get("commodity")?.atom()?)?;
        let edges = entry
            .get("edges")?
            .list()?
            .iter()
            .map(|v| inst.edge_index(v.atom()?))
            .collect::<Result<Vec<_>>>()?;
        let walk = Walk { commodity, edges };
        inst.check_walk(&walk)?;
        flow.push(walk, parse_intervals(entry.get("inflow")?)?);
    }
    Ok(flow)
}

pub(super) fn parse_tolls(inst: &Instance, text: &str) -> Result<Vec<StepFn>> {
    let doc = parse_document(text)?;
    let mut tolls = vec![StepFn::zero(); inst.edges.len()];
    for entry in doc.get("tolls")?.list()? {
        let e = inst.edge_index(entry.get("edge")?.atom()?)?;
        let sched = parse_intervals(entry.get("schedule")?)?;
        if !sched.is_nonnegative() {
            return Err(Error::Document(format!(
                "negative toll on edge `{}`",
                inst.edges[e].id
            )));
        }
        tolls[e] = tolls[e].add(&sched);
    }
    Ok(tolls)
}

fn write_intervals(out: &mut String, f: &StepFn) {
    out.push('[');
    let mut first = true;
    for (a, b, v) in f.pieces() {
        if v.is_zero() {
            continue;
        }
        if !first {
            out.push_str(", ");
        }
        first = false;
        let _ = write!(out, "[{a}, {b}, {v}]");
    }
    out.push(']');
}

pub(super) fn serialize_instance(inst: &Instance) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "horizon {{ t_active_end: {}, t_end: {} }}",
        inst.horizon.active_end(),
        inst.horizon.end()
    );
    let _ = writeln!(s, "nodes [{}]", inst.nodes.join(", "));
    let _ = writeln!(s, "edges [");
    for e in &inst.edges {
        let model = match &e.model {
            EdgeModel::Vickrey { tau, nu } => match nu {
                Capacity::Finite(nu) => format!("{{ kind: vickrey, tau: {tau}, nu: {nu} }}"),
                Capacity::Infinite => format!("{{ kind: vickrey, tau: {tau}, nu: inf }}"),
            },
            EdgeModel::ConstantDelay { tau } => format!("{{ kind: constant, tau: {tau} }}"),
            EdgeModel::DecreasingRamp {
                d_hi,
                d_lo,
                lag,
                cap,
                drain,
            } => format!(
                "{{ kind: ramp, d_hi: {d_hi}, d_lo: {d_lo}, lag: {lag}, cap: {cap}, drain: {drain} }}"
            ),
        };
        let _ = writeln!(
            s,
            "  {{ id: {}, tail: {}, head: {}, model: {} }}",
            e.id, inst.nodes[e.tail], inst.nodes[e.head], model
        );
    }
    let _ = writeln!(s, "]");
    let _ = writeln!(s, "commodities [");
    for c in &inst.commodities {
        let mut iv = String::new();
        write_intervals(&mut iv, &c.inflow);
        let _ = writeln!(
            s,
            "  {{ id: {}, source: {}, sink: {}, vot: {}, inflow: {} }}",
            c.id, inst.nodes[c.source], inst.nodes[c.sink], c.vot, iv
        );
    }
    let _ = writeln!(s, "]");
    s
}

pub(super) fn serialize_walkflow(inst: &Instance, flow: &WalkFlow) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "flows [");
    for (w, f) in &flow.entries {
        let edges: Vec<&str> = w.edges.iter().map(|&e| inst.edges[e].id.as_str()).collect();
        let mut iv = String::new();
        write_intervals(&mut iv, f);
        let _ = writeln!(
            s,
            "  {{ commodity: {}, edges: [{}], inflow: {} }}",
            inst.commodities[w.commodity].id,
            edges.join(", "),
            iv
        );
    }
    let _ = writeln!(s, "]");
    s
}
