//! Command-line front end: load or build instances, run loadings, emit
//! trajectory tables, run equilibrium and implementability checks, run the
//! improvement pipeline, and sweep the cost ratio between the reference
//! flows over growing demand tails.

use clap::{Parser, Subcommand, ValueEnum};
use dynflow::analysis::{
    check_due, check_implementable_single_sink, commodity_travel_time, sink_exit_witness,
    total_travel_time, verify_sink_exit, ImplementabilityVerdict, TollSchedule, Witness,
};
use dynflow::network::{
    load_instance, load_tolls, load_walkflow, serialize_instance, serialize_walkflow, Instance,
    WalkFlow,
};
use dynflow::scenarios::{
    counterexample, implementable_cycle, implementable_direct, nonmonotone_example,
    sysopt_candidate, ScenarioParams,
};
use dynflow::timefn::Rat;
use dynflow::transforms::improve_if_cyclic;
use dynflow::vickrey::{load_network, LoadingResult};
use dynflow::{Error, Result};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "dynflow", version, about = "exact dynamic network flow simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckMode {
    Due,
    Implementable,
    SinkExit,
}

#[derive(Clone, Copy, ValueEnum)]
enum EpsRule {
    Fixed,
    Inverse,
}

#[derive(clap::Args, Clone)]
struct InputArgs {
    /// Instance document path.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Walk-flow document path, or a named flow of the chosen scenario.
    #[arg(long)]
    flow: Option<String>,
    /// Built-in scenario: `counterexample` or `nonmonotone`.
    #[arg(long)]
    scenario: Option<String>,
    /// Demand-tail length of the counterexample scenario (rational).
    #[arg(long, default_value = "20")]
    m: String,
    /// Short free-flow time of the counterexample scenario (rational in (0,1]).
    #[arg(long, default_value = "1")]
    eps: String,
}

#[derive(Subcommand)]
enum Command {
    /// Load a flow onto an instance and report costs and trajectories.
    Simulate {
        #[command(flatten)]
        input: InputArgs,
        /// Directory for the report and trajectory CSV.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Add decimal columns next to the exact rationals in the CSV.
        #[arg(long)]
        float: bool,
    },
    /// Run an equilibrium or implementability check.
    Check {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        mode: CheckMode,
        /// Free-flow cost budget bounding the walks a user may compare
        /// against (defaults to the technical horizon end).
        #[arg(long)]
        budget: Option<String>,
        /// Toll schedule document (zero tolls when omitted).
        #[arg(long)]
        tolls: Option<PathBuf>,
    },
    /// Reroute sink-cycle flow and report the cost improvement.
    Improve {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Ratio of the cheaper reference variant to the candidate flow over a
    /// list of demand-tail lengths.
    PosSweep {
        /// Comma-separated list of M values.
        #[arg(long = "m-values", default_value = "40,400,4000")]
        m_values: String,
        #[arg(long, value_enum, default_value = "inverse")]
        eps_rule: EpsRule,
        /// eps for the fixed rule.
        #[arg(long, default_value = "1")]
        eps: String,
    },
    /// Write a scenario's instance and reference flows as documents.
    ExportScenario {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(passed) => {
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn parse_rat(s: &str) -> Result<Rat> {
    s.parse()
}

/// Resolves the instance and walk flow requested on the command line.
fn resolve_input(input: &InputArgs) -> Result<(Instance, WalkFlow)> {
    match (&input.instance, &input.scenario) {
        (Some(path), None) => {
            let inst = load_instance(&std::fs::read_to_string(path)?)?;
            let flow_path = input
                .flow
                .as_ref()
                .ok_or_else(|| Error::Document("--flow is required with --instance".into()))?;
            let flow = load_walkflow(&inst, &std::fs::read_to_string(flow_path)?)?;
            Ok((inst, flow))
        }
        (None, Some(name)) => {
            let flow_name = input.flow.as_deref().unwrap_or("sysopt");
            scenario_input(name, flow_name, &input.m, &input.eps)
        }
        _ => Err(Error::Document(
            "give exactly one of --instance or --scenario".into(),
        )),
    }
}

fn scenario_input(name: &str, flow: &str, m: &str, eps: &str) -> Result<(Instance, WalkFlow)> {
    match name {
        "counterexample" => {
            let params = ScenarioParams::new(parse_rat(m)?, parse_rat(eps)?)?;
            let inst = counterexample(&params)?;
            let flow = match flow {
                "sysopt" => sysopt_candidate(&inst)?,
                "direct" => implementable_direct(&inst)?,
                "cycle" => implementable_cycle(&inst)?,
                other => {
                    return Err(Error::Document(format!(
                        "unknown counterexample flow `{other}` (sysopt|direct|cycle)"
                    )))
                }
            };
            Ok((inst, flow))
        }
        "nonmonotone" => {
            let (inst, direct, detour) = nonmonotone_example()?;
            let flow = match flow {
                "direct" => direct,
                "detour" => detour,
                other => {
                    return Err(Error::Document(format!(
                        "unknown nonmonotone flow `{other}` (direct|detour)"
                    )))
                }
            };
            Ok((inst, flow))
        }
        other => Err(Error::Document(format!(
            "unknown scenario `{other}` (counterexample|nonmonotone)"
        ))),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate {
            input,
            out_dir,
            float,
        } => {
            let (inst, flow) = resolve_input(&input)?;
            let started = Instant::now();
            let lr = load_network(&inst, &flow)?;
            let elapsed = started.elapsed();
            let report = build_report(&inst, &lr, elapsed.as_secs_f64())?;
            print!("{report}");
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("report.txt"), &report)?;
                std::fs::write(dir.join("trajectories.csv"), trajectories_csv(&inst, &lr, float))?;
                println!("wrote {}", dir.join("trajectories.csv").display());
            }
            Ok(true)
        }
        Command::Check {
            input,
            mode,
            budget,
            tolls,
        } => {
            let (inst, flow) = resolve_input(&input)?;
            let lr = load_network(&inst, &flow)?;
            match mode {
                CheckMode::Due => {
                    let budget = match budget {
                        Some(b) => parse_rat(&b)?,
                        None => inst.horizon.end().clone(),
                    };
                    let tolls = match tolls {
                        Some(path) => {
                            TollSchedule::new(load_tolls(&inst, &std::fs::read_to_string(path)?)?)?
                        }
                        None => TollSchedule::zero(inst.edges.len()),
                    };
                    let violations = check_due(&inst, &flow, &lr, &tolls, &budget)?;
                    if violations.is_empty() {
                        println!("DUE: PASS (no violation among walks within budget {budget})");
                        Ok(true)
                    } else {
                        println!("DUE: FAIL ({} violation(s))", violations.len());
                        for v in violations {
                            println!(
                                "  commodity {} uses {} on [{}, {}] but {} is cheaper by up to {}",
                                inst.commodities[v.commodity].id,
                                inst.walk_name(&v.used),
                                v.interval.0,
                                v.interval.1,
                                inst.walk_name(&v.better),
                                v.gap
                            );
                        }
                        Ok(false)
                    }
                }
                CheckMode::Implementable => match check_implementable_single_sink(&inst, &lr)? {
                    ImplementabilityVerdict::Implementable => {
                        println!("IMPLEMENTABLE: no flow leaves the sink");
                        Ok(true)
                    }
                    ImplementabilityVerdict::NotImplementable(w) => {
                        let Witness::DCycle { walk, cycle, .. } = &w else {
                            unreachable!()
                        };
                        let names: Vec<&str> =
                            cycle.iter().map(|&e| inst.edges[e].id.as_str()).collect();
                        println!(
                            "NOT_IMPLEMENTABLE: walk {} rides the sink cycle ({})",
                            inst.walk_name(walk),
                            names.join(",")
                        );
                        Ok(false)
                    }
                },
                CheckMode::SinkExit => match sink_exit_witness(&inst, &lr) {
                    None => {
                        println!("SINK-EXIT: none (no commodity leaves its own sink)");
                        Ok(true)
                    }
                    Some(w) => {
                        let Witness::SinkExit {
                            commodity,
                            edge,
                            interval,
                            ..
                        } = &w
                        else {
                            unreachable!()
                        };
                        let cert = verify_sink_exit(&inst, &lr, &w)?;
                        println!(
                            "SINK-EXIT: commodity {} enters `{}` during [{}, {}] after reaching its sink",
                            inst.commodities[*commodity].id,
                            inst.edges[*edge].id,
                            interval.0,
                            interval.1
                        );
                        println!(
                            "  truncating there drops the aggregate weighted travel time from {} to {} (loads dominated: {})",
                            cert.cost_original, cert.cost_reroute, cert.loads_dominated
                        );
                        Ok(false)
                    }
                },
            }
        }
        Command::Improve { input, out_dir } => {
            let (inst, flow) = resolve_input(&input)?;
            match improve_if_cyclic(&inst, &flow)? {
                None => {
                    println!("no improvement: the flow carries no cycle through the sink");
                    Ok(true)
                }
                Some(outcome) => {
                    println!(
                        "improved: total travel time {} -> {} (saved {})",
                        outcome.cost_before,
                        outcome.cost_after,
                        &outcome.cost_before - &outcome.cost_after
                    );
                    if let Some(dir) = out_dir {
                        std::fs::create_dir_all(&dir)?;
                        let path = dir.join("improved_flow.txt");
                        std::fs::write(&path, serialize_walkflow(&inst, &outcome.improved))?;
                        println!("wrote {}", path.display());
                    }
                    Ok(true)
                }
            }
        }
        Command::PosSweep {
            m_values,
            eps_rule,
            eps,
        } => {
            let ms: Vec<Rat> = m_values
                .split(',')
                .map(|s| parse_rat(s.trim()))
                .collect::<Result<_>>()?;
            let fixed_eps = parse_rat(&eps)?;
            let rows = sweep(&ms, eps_rule, &fixed_eps)?;
            println!("M\teps\tcandidate\tdirect\tcycle\tratio\tratio_float");
            for r in &rows {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{:.4}",
                    r.m,
                    r.eps,
                    r.candidate,
                    r.direct,
                    r.cycle,
                    r.ratio,
                    r.ratio.to_f64()
                );
            }
            Ok(true)
        }
        Command::ExportScenario { input, out_dir } => {
            let name = input
                .scenario
                .clone()
                .ok_or_else(|| Error::Document("--scenario is required".into()))?;
            std::fs::create_dir_all(&out_dir)?;
            let flows: &[&str] = match name.as_str() {
                "counterexample" => &["sysopt", "direct", "cycle"],
                "nonmonotone" => &["direct", "detour"],
                _ => &[],
            };
            let mut wrote_instance = false;
            for flow_name in flows {
                let (inst, flow) = scenario_input(&name, flow_name, &input.m, &input.eps)?;
                if !wrote_instance {
                    std::fs::write(out_dir.join("instance.txt"), serialize_instance(&inst))?;
                    wrote_instance = true;
                }
                std::fs::write(
                    out_dir.join(format!("flow_{flow_name}.txt")),
                    serialize_walkflow(&inst, &flow),
                )?;
            }
            if !wrote_instance {
                return Err(Error::Document(format!("unknown scenario `{name}`")));
            }
            println!("wrote scenario `{name}` to {}", out_dir.display());
            Ok(true)
        }
    }
}

struct SweepRow {
    m: Rat,
    eps: Rat,
    candidate: Rat,
    direct: Rat,
    cycle: Rat,
    ratio: Rat,
}

/// Runs the three reference flows for each M; rows are independent and run
/// on separate threads.
fn sweep(ms: &[Rat], rule: EpsRule, fixed_eps: &Rat) -> Result<Vec<SweepRow>> {
    let jobs: Vec<(Rat, Rat)> = ms
        .iter()
        .map(|m| {
            let eps = match rule {
                EpsRule::Fixed => fixed_eps.clone(),
                EpsRule::Inverse => m.recip(),
            };
            (m.clone(), eps)
        })
        .collect();
    let results: Vec<Result<SweepRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(m, eps)| {
                scope.spawn(move || -> Result<SweepRow> {
                    let params = ScenarioParams::new(m.clone(), eps.clone())?;
                    let inst = counterexample(&params)?;
                    let candidate =
                        total_travel_time(&load_network(&inst, &sysopt_candidate(&inst)?)?);
                    let direct =
                        total_travel_time(&load_network(&inst, &implementable_direct(&inst)?)?);
                    let cycle =
                        total_travel_time(&load_network(&inst, &implementable_cycle(&inst)?)?);
                    let best_variant = direct.clone().min(cycle.clone());
                    let ratio = best_variant / &candidate;
                    Ok(SweepRow {
                        m: m.clone(),
                        eps: eps.clone(),
                        candidate,
                        direct,
                        cycle,
                        ratio,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    results.into_iter().collect()
}

fn build_report(inst: &Instance, lr: &LoadingResult, seconds: f64) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "loading report");
    let _ = writeln!(
        s,
        "  horizon: active [0, {}], technical end {}",
        inst.horizon.active_end(),
        inst.horizon.end()
    );
    let mut total_check = Rat::zero();
    for (ci, c) in inst.commodities.iter().enumerate() {
        let cost = commodity_travel_time(lr, ci);
        let _ = writeln!(s, "  commodity {}: travel time {}", c.id, cost);
        total_check += cost;
    }
    let total = total_travel_time(lr);
    if total != total_check {
        return Err(Error::Invariant(
            "per-commodity travel times do not sum to the total".into(),
        ));
    }
    let _ = writeln!(s, "  total travel time: {total}");
    let _ = writeln!(s, "  max realized delay: {}", lr.max_realized_delay());
    let _ = writeln!(s, "  loaded in {seconds:.4}s");
    Ok(s)
}

/// One row per breakpoint of any per-edge curve: exact rationals, with
/// decimal companions when `float` is set.
fn trajectories_csv(inst: &Instance, lr: &LoadingResult, float: bool) -> String {
    let mut s = String::new();
    if float {
        s.push_str(
            "edge,t,inflow,outflow,queue,delay,t_float,inflow_float,outflow_float,queue_float,delay_float\n",
        );
    } else {
        s.push_str("edge,t,inflow,outflow,queue,delay\n");
    }
    let active_end = inst.horizon.active_end();
    for (e, edge) in inst.edges.iter().enumerate() {
        let d = &lr.dynamics[e];
        let mut ts: Vec<Rat> = Vec::new();
        ts.extend(d.inflow.breakpoints().iter().cloned());
        ts.extend(d.outflow.breakpoints().iter().cloned());
        ts.extend(d.queue.knot_xs().iter().cloned());
        ts.extend(d.delay.knot_xs().iter().cloned());
        ts.push(Rat::zero());
        ts.retain(|t| t <= active_end);
        ts.sort();
        ts.dedup();
        for t in ts {
            let row = [
                d.inflow.value_at(&t),
                d.outflow.value_at(&t),
                d.queue.eval(&t),
                d.delay.eval(&t),
            ];
            let _ = write!(s, "{},{}", edge.id, t);
            for v in &row {
                let _ = write!(s, ",{v}");
            }
            if float {
                let _ = write!(s, ",{}", t.to_f64());
                for v in &row {
                    let _ = write!(s, ",{}", v.to_f64());
                }
            }
            s.push('\n');
        }
    }
    s
}
