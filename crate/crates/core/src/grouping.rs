//! Search over module partitions for the plan with the smallest simulated
//! start-up time.
//!
//! Candidates are ranked by (total, more blocks first, canonical plan). The
//! ranking is a total order, so the winner depends neither on enumeration
//! order nor on how many lanes evaluated it.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::launchsim::{
    simulate_unchecked, validate_grouping, GroupingPlan, Prepared, OrchestratorModel, ServiceGraph, SimError,
};
use crate::scalar::{cmp, Scalar};

/// Largest module count exhaustive search accepts; Bell(13) = 27 644 437.
pub const MAX_EXHAUSTIVE_MODULES: usize = 13;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("{0} modules exceed the exhaustive search cap of {MAX_EXHAUSTIVE_MODULES}")]
    TooManyModules(usize),
    #[error("no modules to partition")]
    NoModules,
    #[error(transparent)]
    Input(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Exhaustive,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SearchResult<T: Scalar> {
    pub best_plan: GroupingPlan,
    pub best_total_s: T,
    pub evaluated: u64,
    pub method: SearchMethod,
}

impl<T: Scalar> SearchResult<T> {
    pub fn block_count(&self) -> usize {
        self.best_plan.block_count()
    }
}

/// Iterator over restricted growth strings of length `n`: `a[0] = 0` and
/// `a[i] <= 1 + max(a[..i])`, in lexicographic order.
#[derive(Debug, Clone)]
pub struct RestrictedGrowth {
    current: Vec<usize>,
    /// `prefix_max[i] = max(current[..=i])`
    prefix_max: Vec<usize>,
    done: bool,
}

impl RestrictedGrowth {
    pub fn new(n: usize) -> Self {
        RestrictedGrowth { current: vec![0; n], prefix_max: vec![0; n], done: n == 0 }
    }
}

impl Iterator for RestrictedGrowth {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let n = self.current.len();
        // rightmost position that can still grow
        let mut i = n;
        let mut advanced = false;
        while i > 1 {
            i -= 1;
            if self.current[i] <= self.prefix_max[i - 1] {
                self.current[i] += 1;
                self.prefix_max[i] = self.prefix_max[i - 1].max(self.current[i]);
                for j in i + 1..n {
                    self.current[j] = 0;
                    self.prefix_max[j] = self.prefix_max[i];
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            self.done = true;
        }
        Some(out)
    }
}

/// Plans for every set partition of `modules`, each exactly once, in
/// restricted-growth-string order.
pub struct Partitions<'a> {
    modules: &'a [String],
    strings: RestrictedGrowth,
}

impl Iterator for Partitions<'_> {
    type Item = GroupingPlan;

    fn next(&mut self) -> Option<GroupingPlan> {
        self.strings.next().map(|rgs| plan_from_rgs(self.modules, &rgs))
    }
}

pub fn plan_from_rgs(modules: &[String], rgs: &[usize]) -> GroupingPlan {
    let blocks = rgs.iter().copied().max().map_or(0, |m| m + 1);
    let mut out: Vec<Vec<String>> = vec![Vec::new(); blocks];
    for (m, &b) in modules.iter().zip(rgs) {
        out[b].push(m.clone());
    }
    GroupingPlan::new(out)
}

pub fn enumerate_partitions(modules: &[String]) -> Result<Partitions<'_>, SearchError> {
    if modules.is_empty() {
        return Err(SearchError::NoModules);
    }
    if modules.len() > MAX_EXHAUSTIVE_MODULES {
        return Err(SearchError::TooManyModules(modules.len()));
    }
    Ok(Partitions { modules, strings: RestrictedGrowth::new(modules.len()) })
}

/// Bell number B(n).
pub fn bell(n: usize) -> u64 {
    // Bell triangle
    let mut row = vec![1u64];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().expect("nonempty"));
        for &v in &row {
            let prev = *next.last().expect("nonempty");
            next.push(prev + v);
        }
        row = next;
    }
    row[0]
}

struct Candidate<T: Scalar> {
    plan: GroupingPlan,
    total: T,
}

fn rank<T: Scalar>(a: &Candidate<T>, b: &Candidate<T>) -> Ordering {
    cmp(a.total, b.total)
        .then(b.plan.block_count().cmp(&a.plan.block_count()))
        .then(a.plan.cmp(&b.plan))
}

fn better<T: Scalar>(best: Option<Candidate<T>>, c: Candidate<T>) -> Option<Candidate<T>> {
    match best {
        Some(b) if rank(&b, &c) != Ordering::Greater => Some(b),
        _ => Some(c),
    }
}

fn validate_inputs<T: Scalar>(graph: &ServiceGraph<T>, model: &OrchestratorModel<T>) -> Result<(), SearchError> {
    graph.validate().map_err(SimError::InvalidGraph)?;
    model.validate().map_err(SimError::InvalidModel)?;
    if graph.modules.is_empty() {
        return Err(SearchError::NoModules);
    }
    Ok(())
}

fn evaluate<T: Scalar>(graph: &ServiceGraph<T>, model: &OrchestratorModel<T>, plan: GroupingPlan) -> Candidate<T> {
    let total = simulate_unchecked(graph, &plan, model).total_s;
    Candidate { plan, total }
}

/// Evaluates every partition of the graph's modules on `lanes` threads.
pub fn optimize_exhaustive<T: Scalar>(
    graph: &ServiceGraph<T>,
    model: &OrchestratorModel<T>,
    lanes: usize,
) -> Result<SearchResult<T>, SearchError> {
    validate_inputs(graph, model)?;
    enumerate_partitions(&graph.modules)?;
    let lanes = lanes.max(1);
    let prepared = Prepared::new(graph);
    let prepared = &prepared;

    let lane_best = |lane: usize| -> (Option<Candidate<T>>, u64) {
        let mut best: Option<Candidate<T>> = None;
        let mut evaluated = 0;
        // over sorted modules, first-appearance labels are canonical unit indices
        for rgs in RestrictedGrowth::new(prepared.modules.len()).skip(lane).step_by(lanes) {
            let units = rgs.iter().copied().max().map_or(0, |m| m + 1);
            let total = prepared.total(&rgs, units, model);
            evaluated += 1;
            if best.as_ref().map_or(true, |b| cmp(total, b.total) != Ordering::Greater) {
                best = better(best, Candidate { plan: plan_from_rgs(&prepared.modules, &rgs), total });
            }
        }
        (best, evaluated)
    };

    let results: Vec<(Option<Candidate<T>>, u64)> = if lanes == 1 {
        vec![lane_best(0)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..lanes).map(|l| s.spawn(move || lane_best(l))).collect();
            handles.into_iter().map(|h| h.join().expect("search lane panicked")).collect()
        })
    };

    let mut best = None;
    let mut evaluated = 0;
    for (cand, n) in results {
        evaluated += n;
        if let Some(c) = cand {
            best = better(best, c);
        }
    }
    let best = best.expect("at least one partition");
    Ok(SearchResult { best_plan: best.plan, best_total_s: best.total, evaluated, method: SearchMethod::Exhaustive })
}

fn neighbours(plan: &GroupingPlan) -> Vec<GroupingPlan> {
    let blocks = plan.blocks();
    let mut out = Vec::new();
    for i in 0..blocks.len() {
        for j in i + 1..blocks.len() {
            let mut next: Vec<Vec<String>> = blocks.to_vec();
            let moved = next.remove(j);
            next[i].extend(moved);
            out.push(GroupingPlan::new(next));
        }
    }
    for (i, block) in blocks.iter().enumerate() {
        if block.len() < 2 {
            continue;
        }
        for (k, m) in block.iter().enumerate() {
            let mut rest = block.clone();
            rest.remove(k);
            let mut split = blocks.to_vec();
            split[i] = rest.clone();
            split.push(vec![m.clone()]);
            out.push(GroupingPlan::new(split));
            for j in (0..blocks.len()).filter(|&j| j != i) {
                let mut moved = blocks.to_vec();
                moved[i] = rest.clone();
                moved[j].push(m.clone());
                out.push(GroupingPlan::new(moved));
            }
        }
    }
    out
}

/// Seeded first-improvement hill climb from the all-singletons plan over
/// merge, split and move neighbourhoods. Stops after `max_iters` accepted
/// moves or at a local optimum.
pub fn optimize_local<T: Scalar>(
    graph: &ServiceGraph<T>,
    model: &OrchestratorModel<T>,
    seed: u64,
    max_iters: usize,
) -> Result<SearchResult<T>, SearchError> {
    validate_inputs(graph, model)?;
    let start = GroupingPlan::singletons(&graph.modules);
    validate_grouping(graph, &start).map_err(SimError::InvalidGrouping)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut current = evaluate(graph, model, start);
    let mut evaluated = 1u64;
    for _ in 0..max_iters.max(1) {
        let mut moves = neighbours(&current.plan);
        moves.shuffle(&mut rng);
        let mut improved = None;
        for plan in moves {
            let c = evaluate(graph, model, plan);
            evaluated += 1;
            if rank(&c, &current) == Ordering::Less {
                improved = Some(c);
                break;
            }
        }
        match improved {
            Some(c) => current = c,
            None => break,
        }
    }
    Ok(SearchResult {
        best_plan: current.plan,
        best_total_s: current.total,
        evaluated,
        method: SearchMethod::Local,
    })
}
