//! Deterministic model of a microservice start-up.
//!
//! A plan partitions the graph's modules into launch units (containers). With
//! `n` units every unit becomes ready at `a + b·n`; work inside a unit starts
//! `runtime_init_s` later. Within a unit all dependent nodes must finish
//! before any main node starts. Nodes are list-scheduled onto `core_cap`
//! lanes in the order (unit index, dependent before main, node id).
//!
//! Unit indices are positions in the plan's canonical order (see
//! [`GroupingPlan`]), so two plans that describe the same partition always
//! produce the same timeline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, HashSet};
use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

use crate::scalar::{cmp, Scalar};
use crate::stats::{least_squares_affine, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Dependent,
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ServiceNode<T: Scalar> {
    pub id: String,
    pub module: String,
    pub kind: NodeKind,
    pub duration_s: T,
}

impl<T: Scalar> ServiceNode<T> {
    pub fn new(id: impl Into<String>, module: impl Into<String>, kind: NodeKind, duration_s: T) -> Self {
        ServiceNode { id: id.into(), module: module.into(), kind, duration_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ServiceGraph<T: Scalar> {
    pub modules: Vec<String>,
    pub nodes: Vec<ServiceNode<T>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("graph has no nodes")]
    NoNodes,
    #[error("duplicate node id '{0}'")]
    DuplicateNode(String),
    #[error("duplicate module '{0}'")]
    DuplicateModule(String),
    #[error("node '{node}' references unknown module '{module}'")]
    UnknownModule { node: String, module: String },
    #[error("node '{0}' must have a positive finite duration")]
    BadDuration(String),
}

impl<T: Scalar> ServiceGraph<T> {
    pub fn validate(&self) -> Result<(), Vec<GraphError>> {
        let mut errors = Vec::new();
        if self.nodes.is_empty() {
            errors.push(GraphError::NoNodes);
        }
        let mut modules = HashSet::new();
        for m in &self.modules {
            if !modules.insert(m.as_str()) {
                errors.push(GraphError::DuplicateModule(m.clone()));
            }
        }
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                errors.push(GraphError::DuplicateNode(n.id.clone()));
            }
            if !modules.contains(n.module.as_str()) {
                errors.push(GraphError::UnknownModule { node: n.id.clone(), module: n.module.clone() });
            }
            if !(n.duration_s > T::zero()) || !n.duration_s.is_finite() {
                errors.push(GraphError::BadDuration(n.id.clone()));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }

    /// Collapses modules into coarser ones: every block of `plan` becomes a
    /// single module named by joining its members with `+`.
    pub fn coarsen(&self, plan: &GroupingPlan) -> ServiceGraph<T> {
        let mut owner = HashMap::new();
        let mut modules = Vec::new();
        for block in plan.blocks() {
            let name = block.join("+");
            for m in block {
                owner.insert(m.clone(), name.clone());
            }
            modules.push(name);
        }
        let nodes = self
            .nodes
            .iter()
            .map(|n| ServiceNode {
                module: owner.get(&n.module).cloned().unwrap_or_else(|| n.module.clone()),
                ..n.clone()
            })
            .collect();
        ServiceGraph { modules, nodes }
    }
}

/// A set partition of module names into launch units.
///
/// Always stored canonically: members sorted within each block, blocks sorted
/// lexicographically. Equality is therefore set-partition equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "RawPlan", into = "RawPlan")]
pub struct GroupingPlan {
    blocks: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct RawPlan {
    blocks: Vec<Vec<String>>,
}

impl From<RawPlan> for GroupingPlan {
    fn from(raw: RawPlan) -> Self {
        GroupingPlan::new(raw.blocks)
    }
}

impl From<GroupingPlan> for RawPlan {
    fn from(plan: GroupingPlan) -> Self {
        RawPlan { blocks: plan.blocks }
    }
}

impl GroupingPlan {
    pub fn new<B, S>(blocks: impl IntoIterator<Item = B>) -> Self
    where
        B: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut blocks: Vec<Vec<String>> = blocks
            .into_iter()
            .map(|b| {
                let mut v: Vec<String> = b.into_iter().map(Into::into).collect();
                v.sort();
                v
            })
            .collect();
        blocks.sort();
        GroupingPlan { blocks }
    }

    pub fn singletons<S: AsRef<str>>(modules: &[S]) -> Self {
        GroupingPlan::new(modules.iter().map(|m| [m.as_ref().to_owned()]))
    }

    pub fn monolith<S: AsRef<str>>(modules: &[S]) -> Self {
        GroupingPlan::new([modules.iter().map(|m| m.as_ref().to_owned()).collect::<Vec<_>>()])
    }

    pub fn blocks(&self) -> &[Vec<String>] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

impl fmt::Display for GroupingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                f.write_str(" | ")?;
            }
            write!(f, "{{{}}}", b.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("module '{0}' is not assigned to any block")]
    Uncovered(String),
    #[error("module '{0}' appears more than once")]
    Duplicated(String),
    #[error("block {0} is empty")]
    EmptyBlock(usize),
    #[error("module '{0}' is not part of the graph")]
    UnknownModule(String),
}

pub fn validate_grouping<T: Scalar>(graph: &ServiceGraph<T>, plan: &GroupingPlan) -> Result<(), Vec<PlanError>> {
    let mut errors = Vec::new();
    let known: HashSet<&str> = graph.modules.iter().map(String::as_str).collect();
    let mut seen = HashSet::new();
    for (i, block) in plan.blocks().iter().enumerate() {
        if block.is_empty() {
            errors.push(PlanError::EmptyBlock(i));
        }
        for m in block {
            if !known.contains(m.as_str()) {
                errors.push(PlanError::UnknownModule(m.clone()));
            } else if !seen.insert(m.as_str()) {
                errors.push(PlanError::Duplicated(m.clone()));
            }
        }
    }
    for m in &graph.modules {
        if !seen.contains(m.as_str()) {
            errors.push(PlanError::Uncovered(m.clone()));
        }
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OrchestratorModel<T: Scalar> {
    pub ready_intercept_a: T,
    pub ready_slope_b: T,
    pub runtime_init_s: T,
    /// Parallel lanes; `None` means unlimited.
    #[serde(default)]
    pub core_cap: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("{0} must be finite and non-negative")]
    Negative(&'static str),
    #[error("core_cap must be at least 1")]
    ZeroCores,
}

impl<T: Scalar> OrchestratorModel<T> {
    pub fn zero_overhead(core_cap: Option<usize>) -> Self {
        OrchestratorModel {
            ready_intercept_a: T::zero(),
            ready_slope_b: T::zero(),
            runtime_init_s: T::zero(),
            core_cap,
        }
    }

    /// Readiness time of every unit when the plan has `units` blocks.
    pub fn ready_at(&self, units: usize) -> T {
        self.ready_intercept_a + self.ready_slope_b * T::from_count(units)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = |v: T| v >= T::zero() && v.is_finite();
        if !ok(self.ready_intercept_a) {
            return Err(ModelError::Negative("ready_intercept_a"));
        }
        if !ok(self.ready_slope_b) {
            return Err(ModelError::Negative("ready_slope_b"));
        }
        if !ok(self.runtime_init_s) {
            return Err(ModelError::Negative("runtime_init_s"));
        }
        if self.core_cap == Some(0) {
            return Err(ModelError::ZeroCores);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct UnitReady<T: Scalar> {
    pub modules: Vec<String>,
    pub ready_s: T,
    pub work_start_s: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScheduledNode<T: Scalar> {
    pub node: String,
    pub module: String,
    pub unit: usize,
    pub kind: NodeKind,
    pub start_s: T,
    pub end_s: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ModuleSpan<T: Scalar> {
    pub first_start_s: T,
    pub span_s: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LaunchTimeline<T: Scalar> {
    pub units: Vec<UnitReady<T>>,
    /// Nodes in dispatch order.
    pub nodes: Vec<ScheduledNode<T>>,
    pub total_s: T,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid graph: {0:?}")]
    InvalidGraph(Vec<GraphError>),
    #[error("invalid grouping: {0:?}")]
    InvalidGrouping(Vec<PlanError>),
    #[error("invalid model: {0}")]
    InvalidModel(ModelError),
}

#[derive(Clone, Copy)]
struct Pending<T: Scalar> {
    end: T,
    seq: usize,
    node: usize,
}

impl<T: Scalar> PartialEq for Pending<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Pending<T> {}
impl<T: Scalar> PartialOrd for Pending<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Pending<T> {
    // min-heap on (end, dispatch sequence)
    fn cmp(&self, other: &Self) -> Ordering {
        cmp(other.end, self.end).then(other.seq.cmp(&self.seq))
    }
}

/// Validates inputs then runs [`simulate_unchecked`].
pub fn simulate<T: Scalar>(
    graph: &ServiceGraph<T>,
    plan: &GroupingPlan,
    model: &OrchestratorModel<T>,
) -> Result<LaunchTimeline<T>, SimError> {
    graph.validate().map_err(SimError::InvalidGraph)?;
    validate_grouping(graph, plan).map_err(SimError::InvalidGrouping)?;
    model.validate().map_err(SimError::InvalidModel)?;
    Ok(simulate_unchecked(graph, plan, model))
}

/// Simulation without input validation; callers must have validated the
/// graph, plan and model (the grouping search does this once up front).
pub fn simulate_unchecked<T: Scalar>(
    graph: &ServiceGraph<T>,
    plan: &GroupingPlan,
    model: &OrchestratorModel<T>,
) -> LaunchTimeline<T> {
    let block_count = plan.block_count();
    let ready = model.ready_at(block_count);
    let work_start = ready + model.runtime_init_s;

    let mut unit_of: HashMap<&str, usize> = HashMap::new();
    for (u, block) in plan.blocks().iter().enumerate() {
        for m in block {
            unit_of.insert(m.as_str(), u);
        }
    }

    // priority key per node: (unit, kind, id)
    let mut order: Vec<usize> = (0..graph.nodes.len()).collect();
    order.sort_by(|&x, &y| {
        let (a, b) = (&graph.nodes[x], &graph.nodes[y]);
        unit_of[a.module.as_str()]
            .cmp(&unit_of[b.module.as_str()])
            .then(a.kind.cmp(&b.kind))
            .then(a.id.cmp(&b.id))
    });
    let mut rank = vec![0usize; graph.nodes.len()];
    for (r, &n) in order.iter().enumerate() {
        rank[n] = r;
    }

    let mut deps_left = vec![0usize; block_count];
    let mut mains: Vec<Vec<usize>> = vec![Vec::new(); block_count];
    let mut ready_set: BTreeSet<usize> = BTreeSet::new();
    for (i, n) in graph.nodes.iter().enumerate() {
        let u = unit_of[n.module.as_str()];
        match n.kind {
            NodeKind::Dependent => {
                deps_left[u] += 1;
                ready_set.insert(rank[i]);
            }
            NodeKind::Main => mains[u].push(i),
        }
    }
    for u in 0..block_count {
        if deps_left[u] == 0 {
            ready_set.extend(mains[u].iter().map(|&i| rank[i]));
        }
    }

    let cap = model.core_cap.unwrap_or(usize::MAX);
    let mut running: BinaryHeap<Pending<T>> = BinaryHeap::new();
    let mut scheduled = Vec::with_capacity(graph.nodes.len());
    let mut now = work_start;
    let mut total = ready;

    loop {
        while running.len() < cap {
            let Some(r) = ready_set.pop_first() else { break };
            let i = order[r];
            let node = &graph.nodes[i];
            let end = now + node.duration_s;
            running.push(Pending { end, seq: scheduled.len(), node: i });
            total = total.max(end);
            scheduled.push(ScheduledNode {
                node: node.id.clone(),
                module: node.module.clone(),
                unit: unit_of[node.module.as_str()],
                kind: node.kind,
                start_s: now,
                end_s: end,
            });
        }
        let Some(first) = running.pop() else { break };
        now = first.end;
        let mut finished = vec![first];
        while running.peek().is_some_and(|p| p.end == now) {
            finished.push(running.pop().expect("peeked"));
        }
        for f in finished {
            let node = &graph.nodes[f.node];
            if node.kind == NodeKind::Dependent {
                let u = unit_of[node.module.as_str()];
                deps_left[u] -= 1;
                if deps_left[u] == 0 {
                    ready_set.extend(mains[u].iter().map(|&i| rank[i]));
                }
            }
        }
    }

    let units = plan
        .blocks()
        .iter()
        .map(|b| UnitReady { modules: b.clone(), ready_s: ready, work_start_s: work_start })
        .collect();
    LaunchTimeline { units, nodes: scheduled, total_s: total }
}

/// Index form of a graph for scoring many plans in a row. Produces the same
/// total as [`simulate_unchecked`], without building a timeline.
pub(crate) struct Prepared<T: Scalar> {
    /// Module names in sorted order; plans are given as a unit per index.
    pub modules: Vec<String>,
    node_module: Vec<usize>,
    dependent: Vec<bool>,
    duration: Vec<T>,
    /// Rank of each node in (kind, id) order.
    tie: Vec<usize>,
}

impl<T: Scalar> Prepared<T> {
    pub fn new(graph: &ServiceGraph<T>) -> Self {
        let mut modules = graph.modules.clone();
        modules.sort();
        let index: HashMap<&str, usize> = modules.iter().enumerate().map(|(i, m)| (m.as_str(), i)).collect();
        let mut by_key: Vec<usize> = (0..graph.nodes.len()).collect();
        by_key.sort_by(|&x, &y| {
            let (a, b) = (&graph.nodes[x], &graph.nodes[y]);
            a.kind.cmp(&b.kind).then(a.id.cmp(&b.id))
        });
        let mut tie = vec![0; graph.nodes.len()];
        for (r, &n) in by_key.iter().enumerate() {
            tie[n] = r;
        }
        Prepared {
            node_module: graph.nodes.iter().map(|n| index[n.module.as_str()]).collect(),
            dependent: graph.nodes.iter().map(|n| n.kind == NodeKind::Dependent).collect(),
            duration: graph.nodes.iter().map(|n| n.duration_s).collect(),
            tie,
            modules,
        }
    }

    /// `unit_of[m]` is the canonical unit index of sorted module `m`.
    pub fn total(&self, unit_of: &[usize], units: usize, model: &OrchestratorModel<T>) -> T {
        let ready = model.ready_at(units);
        let mut now = ready + model.runtime_init_s;
        let mut total = ready;
        let unit = |i: usize| unit_of[self.node_module[i]];

        let mut deps_left = vec![0usize; units];
        let mut mains: Vec<Vec<usize>> = vec![Vec::new(); units];
        let mut ready_set: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
        for i in 0..self.duration.len() {
            if self.dependent[i] {
                deps_left[unit(i)] += 1;
                ready_set.insert((unit(i), self.tie[i], i));
            } else {
                mains[unit(i)].push(i);
            }
        }
        for u in 0..units {
            if deps_left[u] == 0 {
                ready_set.extend(mains[u].iter().map(|&i| (u, self.tie[i], i)));
            }
        }

        let cap = model.core_cap.unwrap_or(usize::MAX);
        let mut running: BinaryHeap<Pending<T>> = BinaryHeap::new();
        let mut seq = 0;
        loop {
            while running.len() < cap {
                let Some((_, _, i)) = ready_set.pop_first() else { break };
                let end = now + self.duration[i];
                running.push(Pending { end, seq, node: i });
                seq += 1;
                total = total.max(end);
            }
            let Some(first) = running.pop() else { break };
            now = first.end;
            let mut finished = vec![first];
            while running.peek().is_some_and(|p| p.end == now) {
                finished.push(running.pop().expect("peeked"));
            }
            for f in finished {
                if self.dependent[f.node] {
                    let u = unit(f.node);
                    deps_left[u] -= 1;
                    if deps_left[u] == 0 {
                        ready_set.extend(mains[u].iter().map(|&i| (u, self.tie[i], i)));
                    }
                }
            }
        }
        total
    }
}

/// Latest node end, or the latest unit readiness if that is later.
pub fn total_startup<T: Scalar>(timeline: &LaunchTimeline<T>) -> T {
    let ends = timeline.nodes.iter().map(|n| n.end_s);
    let readies = timeline.units.iter().map(|u| u.ready_s);
    ends.chain(readies).fold(T::zero(), T::max)
}

/// `max(start + duration)` over measured records.
pub fn replay_total<T: Scalar>(records: &[(T, T)]) -> Result<T, StatsError> {
    records
        .iter()
        .map(|&(s, d)| s + d)
        .reduce(T::max)
        .ok_or(StatsError::EmptyInput)
}

pub fn module_spans<T: Scalar>(timeline: &LaunchTimeline<T>) -> BTreeMap<String, ModuleSpan<T>> {
    let mut bounds: BTreeMap<String, (T, T)> = BTreeMap::new();
    for n in &timeline.nodes {
        bounds
            .entry(n.module.clone())
            .and_modify(|(s, e)| {
                *s = s.min(n.start_s);
                *e = e.max(n.end_s);
            })
            .or_insert((n.start_s, n.end_s));
    }
    bounds
        .into_iter()
        .map(|(m, (s, e))| (m, ModuleSpan { first_start_s: s, span_s: e - s }))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Calibration<T: Scalar> {
    pub model: OrchestratorModel<T>,
    /// Slope as fitted, before clamping.
    pub fitted_slope: T,
    pub clamped: bool,
    pub residual_rms: T,
}

/// Fits readiness `a + b·n` to `(container_count, ready_s)` observations.
/// A negative slope is clamped to zero and the intercept refitted as the mean.
pub fn calibrate<T: Scalar>(
    observations: &[(usize, T)],
    runtime_init_s: T,
    core_cap: Option<usize>,
) -> Result<Calibration<T>, StatsError> {
    let points: Vec<(T, T)> = observations.iter().map(|&(n, r)| (T::from_count(n), r)).collect();
    let fit = least_squares_affine(&points)?;
    let residual_rms = fit.residual_rms(&points);
    let (intercept, slope, clamped) = if fit.slope < T::zero() {
        log::warn!("fitted readiness slope {} is negative; clamping to 0", fit.slope);
        let mean = points.iter().fold(T::zero(), |acc, p| acc + p.1) / T::from_count(points.len());
        (mean, T::zero(), true)
    } else {
        (fit.intercept, fit.slope, false)
    };
    Ok(Calibration {
        model: OrchestratorModel {
            ready_intercept_a: intercept.max(T::zero()),
            ready_slope_b: slope,
            runtime_init_s,
            core_cap,
        },
        fitted_slope: fit.slope,
        clamped,
        residual_rms,
    })
}

/// Checks a timeline against the model's contract; returns every violation.
pub fn check_timeline<T: Scalar>(
    graph: &ServiceGraph<T>,
    model: &OrchestratorModel<T>,
    timeline: &LaunchTimeline<T>,
) -> Vec<String> {
    let mut problems = Vec::new();
    let durations: HashMap<&str, T> = graph.nodes.iter().map(|n| (n.id.as_str(), n.duration_s)).collect();
    if timeline.nodes.len() != graph.nodes.len() {
        problems.push(format!("{} of {} nodes scheduled", timeline.nodes.len(), graph.nodes.len()));
    }
    let mut dep_end: HashMap<usize, T> = HashMap::new();
    let mut main_start: HashMap<usize, T> = HashMap::new();
    for n in &timeline.nodes {
        match durations.get(n.node.as_str()) {
            Some(&d) if n.end_s == n.start_s + d => {}
            _ => problems.push(format!("node {} end != start + duration", n.node)),
        }
        let Some(unit) = timeline.units.get(n.unit) else {
            problems.push(format!("node {} in unknown unit {}", n.node, n.unit));
            continue;
        };
        if n.start_s < unit.work_start_s {
            problems.push(format!("node {} starts before its unit is ready", n.node));
        }
        match n.kind {
            NodeKind::Dependent => {
                let e = dep_end.entry(n.unit).or_insert(n.end_s);
                *e = e.max(n.end_s);
            }
            NodeKind::Main => {
                let s = main_start.entry(n.unit).or_insert(n.start_s);
                *s = s.min(n.start_s);
            }
        }
    }
    for (u, s) in &main_start {
        if let Some(e) = dep_end.get(u) {
            if s < e {
                problems.push(format!("unit {u}: main node starts before dependents finish"));
            }
        }
    }
    if let Some(cap) = model.core_cap {
        let peak = peak_concurrency(timeline);
        if peak > cap {
            problems.push(format!("{peak} nodes run concurrently with core_cap {cap}"));
        }
    }
    if total_startup(timeline) != timeline.total_s {
        problems.push("total_s differs from the latest end".into());
    }
    problems
}

/// Maximum number of node intervals `[start, end)` covering one instant.
pub fn peak_concurrency<T: Scalar>(timeline: &LaunchTimeline<T>) -> usize {
    let mut events: Vec<(T, i32)> = Vec::with_capacity(timeline.nodes.len() * 2);
    for n in &timeline.nodes {
        events.push((n.start_s, 1));
        events.push((n.end_s, -1));
    }
    // ends before starts at equal instants
    events.sort_by(|a, b| cmp(a.0, b.0).then(a.1.cmp(&b.1)));
    let (mut live, mut peak) = (0i32, 0i32);
    for (_, d) in events {
        live += d;
        peak = peak.max(live);
    }
    peak as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimelineRow<T: Scalar> {
    pub node: String,
    pub module: String,
    pub unit: usize,
    pub start_s: T,
    pub end_s: T,
}

impl<T: Scalar> LaunchTimeline<T> {
    pub fn rows(&self) -> Vec<TimelineRow<T>> {
        self.nodes
            .iter()
            .map(|n| TimelineRow {
                node: n.node.clone(),
                module: n.module.clone(),
                unit: n.unit,
                start_s: n.start_s,
                end_s: n.end_s,
            })
            .collect()
    }

    /// Flat `node,module,unit,start_s,end_s` table.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn read_timeline_csv<T: Scalar, R: io::Read>(input: R) -> Result<Vec<TimelineRow<T>>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(nodes: &[(&str, &str, NodeKind, f64)]) -> ServiceGraph<f64> {
        let mut modules: Vec<String> = Vec::new();
        for (_, m, _, _) in nodes {
            if !modules.iter().any(|x| x == m) {
                modules.push(m.to_string());
            }
        }
        ServiceGraph {
            modules,
            nodes: nodes.iter().map(|&(id, m, k, d)| ServiceNode::new(id, m, k, d)).collect(),
        }
    }

    use NodeKind::{Dependent as D, Main as M};

    #[test]
    fn singleton_graph() {
        let g = graph(&[("n", "a", M, 2.0)]);
        let t = simulate(&g, &GroupingPlan::singletons(&g.modules), &OrchestratorModel::zero_overhead(None)).unwrap();
        assert_eq!(t.total_s, 2.0);
        assert_eq!(total_startup(&t), 2.0);
    }

    #[test]
    fn barrier_scoped_to_unit() {
        let model = OrchestratorModel::zero_overhead(None);
        let g = graph(&[("ad", "A", D, 1.0), ("am", "A", M, 1.0), ("bd", "B", D, 1.0), ("bm", "B", M, 1.0)]);
        let merged = GroupingPlan::monolith(&g.modules);
        let split = GroupingPlan::singletons(&g.modules);
        assert_eq!(simulate(&g, &merged, &model).unwrap().total_s, 2.0);
        assert_eq!(simulate(&g, &split, &model).unwrap().total_s, 2.0);

        let g = graph(&[("ad", "A", D, 3.0), ("am", "A", M, 1.0), ("bd", "B", D, 1.0), ("bm", "B", M, 1.0)]);
        let tm = simulate(&g, &merged, &model).unwrap();
        let ts = simulate(&g, &split, &model).unwrap();
        assert_eq!(tm.total_s, 4.0);
        assert_eq!(ts.total_s, 4.0);
        let start = |t: &LaunchTimeline<f64>, id: &str| t.nodes.iter().find(|n| n.node == id).unwrap().start_s;
        assert_eq!(start(&tm, "bm"), 3.0);
        assert_eq!(start(&ts, "bm"), 1.0);
        assert_eq!(module_spans(&tm)["B"].span_s, 4.0);
        assert_eq!(module_spans(&ts)["B"].span_s, 2.0);
    }

    #[test]
    fn saturation_pigeonhole() {
        let names: Vec<String> = (0..26).map(|i| format!("m{i:02}")).collect();
        let g = ServiceGraph {
            modules: names.clone(),
            nodes: names.iter().map(|m| ServiceNode::new(format!("{m}.n"), m.clone(), M, 1.0)).collect(),
        };
        let t = simulate(&g, &GroupingPlan::singletons(&names), &OrchestratorModel::zero_overhead(Some(8))).unwrap();
        assert_eq!(t.total_s, 4.0);
        assert_eq!(peak_concurrency(&t), 8);
        assert!(check_timeline(&g, &OrchestratorModel::zero_overhead(Some(8)), &t).is_empty());
    }

    #[test]
    fn readiness_and_init_shift_work() {
        let g = graph(&[("d", "a", D, 1.0), ("m", "a", M, 2.0), ("x", "b", M, 0.5)]);
        let model = OrchestratorModel { ready_intercept_a: 2.0, ready_slope_b: 0.25, runtime_init_s: 0.5, core_cap: None };
        let t = simulate(&g, &GroupingPlan::singletons(&g.modules), &model).unwrap();
        assert_eq!(t.units[0].ready_s, 2.5);
        assert_eq!(t.units[0].work_start_s, 3.0);
        assert_eq!(t.total_s, 6.0);
        assert!(check_timeline(&g, &model, &t).is_empty());
    }

    #[test]
    fn empty_unit_counts_readiness() {
        let g = ServiceGraph {
            modules: vec!["a".into(), "empty".into()],
            nodes: vec![ServiceNode::new("n", "a", M, 0.5)],
        };
        let model = OrchestratorModel { ready_intercept_a: 1.0, ready_slope_b: 1.0, runtime_init_s: 0.0, core_cap: None };
        let t = simulate(&g, &GroupingPlan::singletons(&g.modules), &model).unwrap();
        assert_eq!(t.total_s, 3.5);
        let only_ready = LaunchTimeline::<f64> {
            units: vec![UnitReady { modules: vec!["x".into()], ready_s: 3.0, work_start_s: 3.0 }],
            nodes: vec![],
            total_s: 3.0,
        };
        assert_eq!(total_startup(&only_ready), 3.0);
    }

    #[test]
    fn dispatch_order_tiebreak() {
        // one lane: unit index dominates kind among nodes ready together
        let g = graph(&[("b2", "b", M, 1.0), ("a1", "a", M, 1.0), ("a0", "a", D, 1.0), ("b1", "b", D, 1.0)]);
        let t = simulate(&g, &GroupingPlan::singletons(&g.modules), &OrchestratorModel::zero_overhead(Some(1))).unwrap();
        let order: Vec<&str> = t.nodes.iter().map(|n| n.node.as_str()).collect();
        assert_eq!(order, ["a0", "a1", "b1", "b2"]);
        assert_eq!(t.total_s, 4.0);
    }

    #[test]
    fn plan_equality_is_partition_equality() {
        let p = GroupingPlan::new([vec!["c", "a"], vec!["b"]]);
        let q = GroupingPlan::new([vec!["b"], vec!["a", "c"]]);
        assert_eq!(p, q);
        assert_eq!(p.to_string(), "{a, c} | {b}");
        let json = serde_json::to_string(&q).unwrap();
        assert_eq!(json, r#"{"blocks":[["a","c"],["b"]]}"#);
        let back: GroupingPlan = serde_json::from_str(r#"{"blocks":[["b"],["c","a"]]}"#).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn grouping_errors() {
        let g = graph(&[("x", "a", M, 1.0), ("y", "b", M, 1.0), ("z", "c", M, 1.0)]);
        assert!(validate_grouping(&g, &GroupingPlan::new([vec!["a", "b"], vec!["c"]])).is_ok());
        let dup = validate_grouping(&g, &GroupingPlan::new([vec!["a", "b"], vec!["b", "c"]])).unwrap_err();
        assert_eq!(dup, vec![PlanError::Duplicated("b".into())]);
        let missing = validate_grouping(&g, &GroupingPlan::new([vec!["a", "b"]])).unwrap_err();
        assert_eq!(missing, vec![PlanError::Uncovered("c".into())]);
        let empty = validate_grouping(&g, &GroupingPlan::new([vec![], vec!["a", "b", "c"]])).unwrap_err();
        assert_eq!(empty, vec![PlanError::EmptyBlock(0)]);
        let err = simulate(&g, &GroupingPlan::new([vec!["a"]]), &OrchestratorModel::zero_overhead(None)).unwrap_err();
        assert!(matches!(err, SimError::InvalidGrouping(_)));
    }

    #[test]
    fn graph_validation() {
        let mut g = graph(&[("x", "a", M, 1.0), ("x", "a", D, 0.0)]);
        g.nodes.push(ServiceNode::new("q", "zz", M, 1.0));
        let errs = g.validate().unwrap_err();
        assert!(errs.contains(&GraphError::DuplicateNode("x".into())));
        assert!(errs.contains(&GraphError::BadDuration("x".into())));
        assert!(errs.contains(&GraphError::UnknownModule { node: "q".into(), module: "zz".into() }));
    }

    #[test]
    fn replay_examples() {
        assert_eq!(replay_total(&[(1.0, 1.0)]).unwrap(), 2.0);
        assert_eq!(replay_total::<f64>(&[]), Err(StatsError::EmptyInput));
        let bare_bars: [(f64, f64); 11] = [
            (0.0, 0.759),
            (0.956, 3.209),
            (1.005, 3.784),
            (1.749, 3.619),
            (1.823, 4.187),
            (2.211, 2.835),
            (0.759, 6.559),
            (3.167, 2.818),
            (3.573, 1.588),
            (3.648, 2.169),
            (4.050, 2.484),
        ];
        assert!((replay_total(&bare_bars).unwrap() - 7.318).abs() < 1e-9);
    }

    #[test]
    fn spans() {
        let t = LaunchTimeline::<f64> {
            units: vec![],
            nodes: vec![
                ScheduledNode { node: "a".into(), module: "m".into(), unit: 0, kind: M, start_s: 1.0, end_s: 3.0 },
                ScheduledNode { node: "b".into(), module: "m".into(), unit: 0, kind: M, start_s: 2.0, end_s: 4.0 },
                ScheduledNode { node: "c".into(), module: "s".into(), unit: 0, kind: M, start_s: 0.0, end_s: 1.5 },
            ],
            total_s: 4.0,
        };
        let s = module_spans(&t);
        assert_eq!((s["m"].first_start_s, s["m"].span_s), (1.0, 3.0));
        assert_eq!((s["s"].first_start_s, s["s"].span_s), (0.0, 1.5));
    }

    #[test]
    fn calibrate_examples() {
        let amd: [(usize, f64); 4] = [(1, 2.446), (10, 2.987), (17, 2.954), (26, 3.030)];
        let arm: [(usize, f64); 4] = [(1, 6.428), (10, 10.562), (17, 12.296), (26, 15.520)];
        let a = calibrate(&amd, 0.0, Some(24)).unwrap();
        let b = calibrate(&arm, 0.0, Some(24)).unwrap();
        assert!(a.model.ready_slope_b > 0.0 && !a.clamped);
        assert!((a.model.ready_at(10) - 2.987).abs() < 0.3);
        assert!(b.model.ready_slope_b > a.model.ready_slope_b);
        assert!(a.residual_rms < 0.2);
        assert_eq!(calibrate(&[(5, 3.0), (5, 3.1)], 0.0, None), Err(StatsError::DegenerateX));
    }

    #[test]
    fn calibrate_clamps_negative_slope() {
        let c = calibrate(&[(1, 3.0), (2, 2.0)], 0.7, None).unwrap();
        assert!(c.clamped);
        assert_eq!(c.model.ready_slope_b, 0.0);
        assert_eq!(c.model.ready_intercept_a, 2.5);
        assert_eq!(c.fitted_slope, -1.0);
        assert_eq!(c.model.runtime_init_s, 0.7);
    }

    #[test]
    fn timeline_csv_round_trip() {
        let g = graph(&[("d", "a", D, 0.1), ("m", "a", M, 1.0 / 3.0), ("x", "b", M, 0.7)]);
        let model = OrchestratorModel { ready_intercept_a: 2.566443620178042, ready_slope_b: 0.0213, runtime_init_s: 0.0, core_cap: Some(2) };
        let t = simulate(&g, &GroupingPlan::singletons(&g.modules), &model).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("node,module,unit,start_s,end_s\n"));
        let rows: Vec<TimelineRow<f64>> = read_timeline_csv(&buf[..]).unwrap();
        assert_eq!(rows, t.rows());
    }

    #[test]
    fn f32_simulation() {
        let g = ServiceGraph::<f32> {
            modules: vec!["a".into()],
            nodes: vec![ServiceNode::new("d", "a", D, 1.5f32), ServiceNode::new("m", "a", M, 0.5f32)],
        };
        let t = simulate(&g, &GroupingPlan::singletons(&g.modules), &OrchestratorModel::zero_overhead(None)).unwrap();
        assert_eq!(t.total_s, 2.0f32);
    }
}
