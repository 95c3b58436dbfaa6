//! Exact maximization of 0-1 programs of the form
//!
//! ```text
//! max  sum_i c_i a_i
//! s.t. sum_{j in G} a_j <= |G| - 1   for every group G
//!      a_i = f_i                      for every fixed variable
//! ```
//!
//! Each constraint only says "not every variable of `G` is 1", so setting a
//! variable to 0 can never break feasibility. The solver is a depth-first
//! branch and bound with unit propagation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::model::TupleId;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinaryProgram {
    pub objective: BTreeMap<TupleId, f64>,
    /// Variable sets that must not all be 1.
    pub groups: Vec<Vec<TupleId>>,
    pub fixed: BTreeMap<TupleId, bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Solution {
    Optimal {
        value: f64,
        assignment: BTreeMap<TupleId, bool>,
    },
    Infeasible,
}

impl Solution {
    pub fn value(&self) -> Option<f64> {
        match self {
            Solution::Optimal { value, .. } => Some(*value),
            Solution::Infeasible => None,
        }
    }
}

impl BinaryProgram {
    pub fn vars(&self) -> BTreeSet<TupleId> {
        self.objective
            .keys()
            .chain(self.groups.iter().flatten())
            .chain(self.fixed.keys())
            .copied()
            .collect()
    }

    pub fn free_vars(&self) -> BTreeSet<TupleId> {
        self.vars()
            .into_iter()
            .filter(|v| !self.fixed.contains_key(v))
            .collect()
    }

    pub fn coefficient(&self, v: TupleId) -> f64 {
        self.objective.get(&v).copied().unwrap_or(0.0)
    }

    /// Objective value of a total assignment, or `None` if it violates a constraint.
    pub fn evaluate(&self, assignment: &BTreeMap<TupleId, bool>) -> Option<f64> {
        for (v, f) in &self.fixed {
            if assignment.get(v) != Some(f) {
                return None;
            }
        }
        for g in &self.groups {
            if g.iter().all(|v| assignment.get(v) == Some(&true)) {
                return None;
            }
        }
        Some(
            self.objective
                .iter()
                .filter(|(v, _)| assignment.get(v) == Some(&true))
                .map(|(_, c)| c)
                .sum(),
        )
    }
}

/// Line-oriented dump: `obj v1 0.5`, `group v1 v2`, `fix v3 1`.
impl fmt::Display for BinaryProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (v, c) in &self.objective {
            writeln!(f, "obj v{} {:?}", v.0, c)?;
        }
        for g in &self.groups {
            let vars: Vec<String> = g.iter().map(|v| format!("v{}", v.0)).collect();
            writeln!(f, "group {}", vars.join(" "))?;
        }
        for (v, b) in &self.fixed {
            writeln!(f, "fix v{} {}", v.0, u8::from(*b))?;
        }
        Ok(())
    }
}

impl FromStr for BinaryProgram {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let var = |t: &str| {
            t.strip_prefix('v')
                .and_then(|n| n.parse().ok())
                .map(TupleId)
                .ok_or_else(|| format!("bad variable {t:?}"))
        };
        let mut p = BinaryProgram::default();
        for (n, line) in s.lines().enumerate() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => {}
                [c, ..] if c.starts_with('#') => {}
                ["obj", v, c] => {
                    let c = c.parse().map_err(|_| format!("line {}: bad coefficient", n + 1))?;
                    p.objective.insert(var(v)?, c);
                }
                ["group", vs @ ..] if !vs.is_empty() => {
                    p.groups.push(vs.iter().map(|v| var(v)).collect::<Result<_, _>>()?);
                }
                ["fix", v, "0"] => {
                    p.fixed.insert(var(v)?, false);
                }
                ["fix", v, "1"] => {
                    p.fixed.insert(var(v)?, true);
                }
                _ => return Err(format!("line {}: cannot parse {line:?}", n + 1)),
            }
        }
        Ok(p)
    }
}

struct Search {
    cost: Vec<f64>,
    // group -> member var indices
    groups: Vec<Vec<usize>>,
    // var -> group indices
    member_of: Vec<Vec<usize>>,
    state: Vec<Option<bool>>,
    trail: Vec<usize>,
    best_value: f64,
    best: Option<Vec<Option<bool>>>,
}

impl Search {
    fn assign(&mut self, v: usize, b: bool) {
        debug_assert!(self.state[v].is_none());
        self.state[v] = Some(b);
        self.trail.push(v);
    }

    fn undo_to(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().expect("trail entry");
            self.state[v] = None;
        }
    }

    /// Returns false when a group ends up with every variable at 1.
    fn propagate(&mut self) -> bool {
        loop {
            let mut changed = false;
            for g in 0..self.groups.len() {
                let mut ones = 0;
                let mut open = None;
                let mut open_count = 0;
                let mut has_zero = false;
                for &v in &self.groups[g] {
                    match self.state[v] {
                        Some(true) => ones += 1,
                        Some(false) => has_zero = true,
                        None => {
                            open_count += 1;
                            open = Some(v);
                        }
                    }
                }
                if has_zero {
                    continue;
                }
                if open_count == 0 {
                    return false;
                }
                if open_count == 1 && ones + 1 == self.groups[g].len() {
                    self.assign(open.expect("open var"), false);
                    changed = true;
                }
            }
            if !changed {
                return true;
            }
        }
    }

    fn unsatisfied(&self, g: usize) -> bool {
        !self.groups[g].iter().any(|&v| self.state[v] == Some(false))
    }

    /// Current value plus the best each undecided variable could add, minus
    /// the least forced loss in a family of groups with disjoint open variables.
    fn upper_bound(&self) -> f64 {
        let mut bound = 0.0;
        for (v, s) in self.state.iter().enumerate() {
            match s {
                Some(true) => bound += self.cost[v],
                Some(false) => {}
                None => bound += self.cost[v].max(0.0),
            }
        }
        let mut used = vec![false; self.state.len()];
        for g in 0..self.groups.len() {
            if !self.unsatisfied(g) {
                continue;
            }
            let open: Vec<usize> = self.groups[g]
                .iter()
                .copied()
                .filter(|&v| self.state[v].is_none())
                .collect();
            if open.iter().any(|&v| used[v]) {
                continue;
            }
            let loss = open
                .iter()
                .map(|&v| self.cost[v].max(0.0))
                .fold(f64::INFINITY, f64::min);
            if loss.is_finite() {
                bound -= loss;
                for v in open {
                    used[v] = true;
                }
            }
        }
        bound
    }

    fn value(&self) -> f64 {
        self.state
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == Some(true))
            .map(|(v, _)| self.cost[v])
            .sum()
    }

    /// Settles undecided variables whose choice is forced or dominated.
    /// Returns false on conflict.
    fn settle(&mut self) -> bool {
        if !self.propagate() {
            return false;
        }
        // a positive variable outside every open group is simply set to 1
        let n = self.state.len();
        for v in 0..n {
            if self.state[v].is_none() {
                let constrained = self.member_of[v].iter().any(|&g| self.unsatisfied(g));
                if !constrained {
                    self.assign(v, true);
                }
            }
        }
        true
    }

    fn branch_var(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (v, s) in self.state.iter().enumerate() {
            if s.is_none() && best.is_none_or(|b| self.cost[v] > self.cost[b]) {
                best = Some(v);
            }
        }
        best
    }

    fn dfs(&mut self) {
        let mark = self.trail.len();
        if !self.settle() {
            self.undo_to(mark);
            return;
        }
        if self.best.is_some() && self.upper_bound() <= self.best_value {
            self.undo_to(mark);
            return;
        }
        match self.branch_var() {
            None => {
                let value = self.value();
                if self.best.is_none() || value > self.best_value {
                    self.best_value = value;
                    self.best = Some(self.state.clone());
                }
            }
            Some(v) => {
                for b in [true, false] {
                    let inner = self.trail.len();
                    self.assign(v, b);
                    self.dfs();
                    self.undo_to(inner);
                }
            }
        }
        self.undo_to(mark);
    }
}

/// Solves `program` exactly. Ties between optimal assignments go to the first
/// one reached by the deterministic search order.
pub fn solve_binary_max(program: &BinaryProgram) -> Solution {
    let vars: Vec<TupleId> = program.vars().into_iter().collect();
    let index: BTreeMap<TupleId, usize> = vars.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let groups: Vec<Vec<usize>> = program
        .groups
        .iter()
        .map(|g| {
            let set: BTreeSet<usize> = g.iter().map(|v| index[v]).collect();
            set.into_iter().collect()
        })
        .collect();
    let mut member_of = vec![Vec::new(); vars.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &v in g {
            member_of[v].push(gi);
        }
    }
    let mut search = Search {
        cost: vars.iter().map(|v| program.coefficient(*v)).collect(),
        groups,
        member_of,
        state: vec![None; vars.len()],
        trail: Vec::new(),
        best_value: f64::NEG_INFINITY,
        best: None,
    };
    for (v, b) in &program.fixed {
        search.assign(index[v], *b);
    }
    if search.groups.iter().any(|g| g.iter().all(|&v| search.state[v] == Some(true))) {
        return Solution::Infeasible;
    }
    // zero is never worse for a variable that cannot gain anything
    for v in 0..vars.len() {
        if search.state[v].is_none() && search.cost[v] <= 0.0 {
            search.assign(v, false);
        }
    }
    search.dfs();
    match search.best {
        None => Solution::Infeasible,
        Some(state) => {
            let assignment = vars
                .iter()
                .zip(state)
                .map(|(v, s)| (*v, s.unwrap_or(false)))
                .collect();
            Solution::Optimal {
                value: search.best_value,
                assignment,
            }
        }
    }
}
