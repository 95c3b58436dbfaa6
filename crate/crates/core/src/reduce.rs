//! Budgeted uncertainty reduction.
//!
//! [`mes_reduce`] repeatedly takes the output with the highest MES, picks a
//! batch of input tuples whose re-verification lowers it, chooses a target
//! error probability slightly below the smallest positive error among the
//! output's tuples, and buys new labels from a [`Verifier`]. Outputs whose
//! derived label is unknown are resolved first by labeling their unlabeled
//! tuples. [`run_baseline`] spends the same budget on a fixed tuple order.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Error;
use crate::mes::{mes, MesScore};
use crate::model::{AnnotatedDes, Label, LogProb, Tri, TupleId, World, LOG_TOLERANCE};
use crate::provenance::{Form, ProvExpr};
use crate::risky::{classify_tuples, RiskClass, RiskLimits};
use crate::verifier::{improve_verification, mix_seed, Budget, Verifier, VerifyOutcome, VoteStreams};

/// Highest target error probability handed to a verifier.
const MAX_TARGET: f64 = 0.5 - 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ReduceConfig {
    pub theta: f64,
    pub top_k: usize,
    pub mu: usize,
    pub risky: RiskLimits,
    pub reverify_target: f64,
    /// Recompute every output's MES every this many steps and count mismatches.
    pub cross_check_every: Option<usize>,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        ReduceConfig {
            theta: 0.0,
            top_k: 1,
            mu: 50,
            risky: RiskLimits::default(),
            reverify_target: 0.3,
            cross_check_every: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Termination {
    Budget,
    Threshold,
    NoProgress,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Budget => "budget",
            Termination::Threshold => "threshold",
            Termination::NoProgress => "no-progress",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StepKind {
    Initial,
    Reverify,
    Improve,
    Baseline,
}

impl StepKind {
    pub fn name(self) -> &'static str {
        match self {
            StepKind::Initial => "initial",
            StepKind::Reverify => "reverify",
            StepKind::Improve => "improve",
            StepKind::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub kind: StepKind,
    /// Cumulative cost after the step.
    pub cost: u64,
    /// Tuples whose label or error changed, with their new label.
    pub changes: Vec<(TupleId, Label)>,
    /// Target error probability requested in this step.
    pub target: Option<f64>,
    /// Highest MES among outputs with a known label.
    pub max_mes: Option<LogProb>,
    pub unknown_outputs: usize,
    pub derived: Vec<Tri>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReductionTrace {
    pub steps: Vec<TraceStep>,
    pub termination: Termination,
    pub budget: u64,
    pub cross_check_mismatches: usize,
}

impl ReductionTrace {
    pub fn total_cost(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.cost)
    }

    pub fn initial_max_mes(&self) -> Option<LogProb> {
        self.steps.first().and_then(|s| s.max_mes)
    }

    pub fn final_max_mes(&self) -> Option<LogProb> {
        self.steps.last().and_then(|s| s.max_mes)
    }
}

/// MES bookkeeping for the target outputs.
struct Outputs<'a> {
    provs: &'a [ProvExpr],
    scores: Vec<Option<MesScore>>,
    derived: Vec<Tri>,
}

impl<'a> Outputs<'a> {
    fn new(des: &AnnotatedDes, provs: &'a [ProvExpr]) -> Result<Self, Error> {
        let mut out = Outputs {
            provs,
            scores: vec![None; provs.len()],
            derived: vec![Tri::Unknown; provs.len()],
        };
        let all: Vec<usize> = (0..provs.len()).collect();
        out.refresh(des, &all)?;
        Ok(out)
    }

    fn compute(des: &AnnotatedDes, prov: &ProvExpr) -> Result<(Tri, Option<MesScore>), Error> {
        let derived = prov.eval_k3(des)?;
        let score = match derived {
            Tri::Unknown => None,
            _ => Some(mes(des, prov)?),
        };
        Ok((derived, score))
    }

    fn refresh(&mut self, des: &AnnotatedDes, which: &[usize]) -> Result<(), Error> {
        let results = which
            .par_iter()
            .map(|&i| Self::compute(des, &self.provs[i]))
            .collect::<Result<Vec<_>, _>>()?;
        for (&i, (d, s)) in which.iter().zip(results) {
            self.derived[i] = d;
            self.scores[i] = s;
        }
        Ok(())
    }

    /// Outputs whose provenance mentions any of `tuples`.
    fn affected(&self, tuples: &[TupleId]) -> Vec<usize> {
        (0..self.provs.len())
            .filter(|&i| tuples.iter().any(|t| self.provs[i].contains_var(*t)))
            .collect()
    }

    /// Recomputes everything and counts outputs whose stored state disagrees.
    fn cross_check(&self, des: &AnnotatedDes) -> Result<usize, Error> {
        let fresh = self
            .provs
            .par_iter()
            .map(|p| Self::compute(des, p))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(fresh
            .iter()
            .enumerate()
            .filter(|(i, (d, s))| {
                *d != self.derived[*i]
                    || match (s, &self.scores[*i]) {
                        (Some(a), Some(b)) => !a.log_value.approx_eq(b.log_value),
                        (None, None) => false,
                        _ => true,
                    }
            })
            .count())
    }

    fn max_known(&self) -> Option<LogProb> {
        self.scores
            .iter()
            .flatten()
            .map(|s| s.log_value)
            .fold(None, |acc, v| match acc {
                Some(a) if !v.exceeds(a) => Some(a),
                _ => Some(v),
            })
    }

    fn unknown(&self) -> usize {
        self.derived.iter().filter(|d| **d == Tri::Unknown).count()
    }

    /// Unknown outputs count as MES 1.
    fn effective_max(&self) -> LogProb {
        if self.unknown() > 0 {
            LogProb::ONE
        } else {
            self.max_known().unwrap_or(LogProb::ZERO)
        }
    }

    fn step(&self, kind: StepKind, cost: u64, changes: Vec<(TupleId, Label)>, target: Option<f64>) -> TraceStep {
        TraceStep {
            kind,
            cost,
            changes,
            target,
            max_mes: self.max_known(),
            unknown_outputs: self.unknown(),
            derived: self.derived.clone(),
        }
    }
}

fn threshold_met(max: LogProb, theta: f64) -> bool {
    if max.is_zero() {
        return true;
    }
    theta > 0.0 && max.ln() <= theta.ln() + LOG_TOLERANCE
}

/// Labels the unlabeled tuples of every output whose derived label is unknown.
pub fn re_verify(
    des: &mut AnnotatedDes,
    provs: &[ProvExpr],
    budget: &mut Budget,
    target: f64,
    truth: &World,
    verifier: &dyn Verifier,
    streams: &mut VoteStreams,
) -> Result<VerifyOutcome, Error> {
    let mut todo = BTreeSet::new();
    for p in provs {
        if p.eval_k3(des)? == Tri::Unknown {
            todo.extend(p.vars().into_iter().filter(|v| des.tri(*v) == Tri::Unknown));
        }
    }
    let todo: Vec<TupleId> = todo.into_iter().collect();
    improve_verification(des, &todo, target, budget, truth, verifier, streams)
}

/// Whether buying a label at `achievable` error would improve on the tuple's current one.
fn improvable(des: &AnnotatedDes, t: TupleId, achievable: f64) -> bool {
    match des.err(t) {
        None => true,
        Some(e) => e > achievable,
    }
}

/// Group that alone fixes the output's label: a true term of a correct DNF
/// output or a false clause of an incorrect CNF output.
fn is_witness_group(des: &AnnotatedDes, g: &[TupleId], derived: bool) -> bool {
    g.iter().all(|v| des.tri(*v) == Tri::from(derived))
}

/// Batch of tuples to re-verify for one output. `achievable` is the error a
/// fresh label will carry; tuples already at or below it are never chosen.
pub fn find_improvement_set(
    des: &AnnotatedDes,
    prov: &ProvExpr,
    limits: &RiskLimits,
    achievable: f64,
) -> Result<BTreeSet<TupleId>, Error> {
    let derived = prov
        .eval_k3(des)?
        .as_bool()
        .ok_or(crate::error::MesError::UnknownOutputLabel)?;
    // (a) a safe tuple: lowering its error never raises the MES
    let reports = classify_tuples(des, prov, limits)?;
    if let Some(r) = reports
        .iter()
        .find(|r| r.class == RiskClass::Safe && improvable(des, r.tuple, achievable))
    {
        return Ok(BTreeSet::from([r.tuple]));
    }
    let dnf = prov.form() == Form::Dnf;
    if derived == dnf {
        // (b) the cheapest group whose labels alone fix the output's label
        let mut best: Option<Vec<TupleId>> = None;
        for g in prov.groups() {
            if !is_witness_group(des, g, derived) {
                continue;
            }
            let members: Vec<TupleId> = g
                .iter()
                .copied()
                .filter(|v| des.err(*v).is_some_and(|e| e > 0.0) && improvable(des, *v, achievable))
                .collect();
            // a witness group certain at error 0 already makes the MES 0
            if members.is_empty() || g.iter().any(|v| des.err(*v) == Some(0.0)) {
                continue;
            }
            if best.as_ref().is_none_or(|b| (members.len(), &members) < (b.len(), b)) {
                best = Some(members);
            }
        }
        return Ok(best.unwrap_or_default().into_iter().collect());
    }
    // (c) hit every group that could still flip, using tuples not at the output's label
    let settled = |v: TupleId| des.label(v) == Label::Known { value: derived, err: 0.0 };
    let eligible = |v: TupleId| {
        des.tri(v) != Tri::from(!derived)
            && !settled(v)
            && improvable(des, v, achievable)
    };
    let mut open: Vec<Vec<TupleId>> = prov
        .groups()
        .iter()
        .filter(|g| !g.iter().any(|v| settled(*v)))
        .map(|g| g.iter().copied().filter(|v| eligible(*v)).collect::<Vec<_>>())
        .filter(|g| !g.is_empty())
        .collect();
    let mut chosen = BTreeSet::new();
    while !open.is_empty() {
        let mut counts: BTreeMap<TupleId, usize> = BTreeMap::new();
        for g in &open {
            for v in g {
                *counts.entry(*v).or_default() += 1;
            }
        }
        // every tuple costs the same at a fixed target, so the most frequent wins
        let (&pick, _) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .expect("open groups are nonempty");
        chosen.insert(pick);
        open.retain(|g| !g.contains(&pick));
    }
    Ok(chosen)
}

/// Target error for the next verification of `set_size` tuples of one output.
pub fn next_probability(
    des: &AnnotatedDes,
    prov: &ProvExpr,
    set_size: usize,
    budget_left: u64,
    theta: f64,
    verifier: &dyn Verifier,
) -> f64 {
    let q = prov
        .vars()
        .into_iter()
        .filter_map(|v| des.err(v))
        .filter(|e| *e > 0.0)
        .fold(f64::INFINITY, f64::min);
    let p = if q.is_finite() {
        let n = (1.0 / q - 1e-9).ceil();
        (1.0 / (n + 1.0)).max(theta)
    } else {
        theta
    };
    let per_tuple = budget_left / set_size.max(1) as u64;
    p.max(verifier.floor(per_tuple.max(1))).min(MAX_TARGET)
}

fn changes_between(before: &AnnotatedDes, after: &AnnotatedDes, tuples: &[TupleId]) -> Vec<(TupleId, Label)> {
    tuples
        .iter()
        .filter(|t| before.label(**t) != after.label(**t))
        .map(|t| (*t, after.label(*t)))
        .collect()
}

/// Outputs to work on this round: the top `top_k`, plus up to `mu` outputs tied with the maximum.
fn select_outputs(outputs: &Outputs, top_k: usize, mu: usize) -> Vec<usize> {
    let mut known: Vec<(usize, LogProb)> = outputs
        .scores
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|s| (i, s.log_value)))
        .filter(|(_, v)| !v.is_zero())
        .collect();
    known.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    let Some(&(_, top)) = known.first() else {
        return Vec::new();
    };
    let mut chosen: BTreeSet<usize> = known.iter().take(top_k.max(1)).map(|x| x.0).collect();
    chosen.extend(
        known
            .iter()
            .filter(|(_, v)| v.approx_eq(top))
            .take(mu.max(1))
            .map(|x| x.0),
    );
    chosen.into_iter().collect()
}

/// Runs the reduction loop on a copy of `des`; returns the trace and the final state.
pub fn mes_reduce(
    des: &AnnotatedDes,
    provs: &[ProvExpr],
    budget_total: u64,
    config: &ReduceConfig,
    truth: &World,
    verifier: &dyn Verifier,
    seed: u64,
) -> Result<(ReductionTrace, AnnotatedDes), Error> {
    let mut des = des.clone();
    let mut budget = Budget::new(budget_total);
    let mut streams = VoteStreams::new(seed);
    let mut outputs = Outputs::new(&des, provs)?;
    let mut steps = vec![outputs.step(StepKind::Initial, 0, Vec::new(), None)];
    let mut mismatches = 0;
    let termination = loop {
        if threshold_met(outputs.effective_max(), config.theta) {
            break Termination::Threshold;
        }
        if budget.remaining() == 0 {
            break Termination::Budget;
        }
        let before = des.clone();
        let (kind, outcome, target) = if outputs.unknown() > 0 {
            let target = config.reverify_target;
            let o = re_verify(&mut des, provs, &mut budget, target, truth, verifier, &mut streams)?;
            (StepKind::Reverify, o, target)
        } else {
            let selected = select_outputs(&outputs, config.top_k, config.mu);
            let mut set = BTreeSet::new();
            let mut target = f64::INFINITY;
            for &i in &selected {
                let prov = &provs[i];
                // the target does not depend on the batch size beyond the budget floor
                let t = next_probability(&des, prov, 1, budget.remaining(), config.theta, verifier);
                let achievable = verifier.error_after(
                    verifier
                        .units_for(t)
                        .unwrap_or_else(|_| verifier.largest_affordable(u64::MAX)),
                );
                let s = find_improvement_set(&des, prov, &config.risky, achievable)?;
                if !s.is_empty() {
                    let t = next_probability(&des, prov, s.len(), budget.remaining(), config.theta, verifier);
                    target = target.min(t);
                    set.extend(s);
                }
            }
            if set.is_empty() {
                break Termination::NoProgress;
            }
            let set: Vec<TupleId> = set.into_iter().collect();
            let o = improve_verification(&mut des, &set, target, &mut budget, truth, verifier, &mut streams)?;
            (StepKind::Improve, o, target)
        };
        let changes = changes_between(&before, &des, &outcome.updated);
        if changes.is_empty() {
            if outcome.cost > 0 {
                steps.push(outputs.step(kind, budget.spent, changes, Some(target)));
            }
            break if budget.remaining() == 0 {
                Termination::Budget
            } else {
                Termination::NoProgress
            };
        }
        let touched: Vec<TupleId> = changes.iter().map(|c| c.0).collect();
        let affected = outputs.affected(&touched);
        outputs.refresh(&des, &affected)?;
        steps.push(outputs.step(kind, budget.spent, changes, Some(target)));
        if let Some(k) = config.cross_check_every {
            if k > 0 && (steps.len() - 1) % k == 0 {
                mismatches += outputs.cross_check(&des)?;
            }
        }
    };
    Ok((
        ReductionTrace {
            steps,
            termination,
            budget: budget_total,
            cross_check_mismatches: mismatches,
        },
        des,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Random,
    FormulaCount,
    OccurrencesCount,
    ProbGreedy,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::Random,
        BaselineKind::FormulaCount,
        BaselineKind::OccurrencesCount,
        BaselineKind::ProbGreedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::FormulaCount => "formula-count",
            BaselineKind::OccurrencesCount => "occurrences-count",
            BaselineKind::ProbGreedy => "prob-greedy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Order in which a baseline visits the tuples of the target outputs.
pub fn baseline_order(kind: BaselineKind, des: &AnnotatedDes, provs: &[ProvExpr], seed: u64) -> Vec<TupleId> {
    let vars: BTreeSet<TupleId> = provs.iter().flat_map(|p| p.vars()).collect();
    let mut order: Vec<TupleId> = vars.into_iter().collect();
    match kind {
        BaselineKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x0_5EED, 0));
            order.shuffle(&mut rng);
        }
        BaselineKind::FormulaCount => {
            let count = |v: &TupleId| provs.iter().filter(|p| p.contains_var(*v)).count();
            order.sort_by_key(|v| std::cmp::Reverse(count(v)));
        }
        BaselineKind::OccurrencesCount => {
            let count = |v: &TupleId| provs.iter().map(|p| p.occurrences(*v)).sum::<usize>();
            order.sort_by_key(|v| std::cmp::Reverse(count(v)));
        }
        BaselineKind::ProbGreedy => {
            // unlabeled tuples are as uncertain as a label can be
            let err = |v: &TupleId| des.err(*v).unwrap_or(0.5);
            order.sort_by(|a, b| err(b).total_cmp(&err(a)));
        }
    }
    order
}

/// Verifies tuples one at a time in the baseline's order, each once, at target `p`.
#[allow(clippy::too_many_arguments)]
pub fn run_baseline(
    kind: BaselineKind,
    p: f64,
    des: &AnnotatedDes,
    provs: &[ProvExpr],
    budget_total: u64,
    truth: &World,
    verifier: &dyn Verifier,
    seed: u64,
) -> Result<(ReductionTrace, AnnotatedDes), Error> {
    let mut des = des.clone();
    let mut budget = Budget::new(budget_total);
    let mut streams = VoteStreams::new(seed);
    let mut outputs = Outputs::new(&des, provs)?;
    let mut steps = vec![outputs.step(StepKind::Initial, 0, Vec::new(), None)];
    let order = baseline_order(kind, &des, provs, seed);
    let mut termination = Termination::NoProgress;
    for t in order {
        if budget.remaining() == 0 {
            termination = Termination::Budget;
            break;
        }
        let before = des.label(t);
        let o = improve_verification(&mut des, &[t], p, &mut budget, truth, verifier, &mut streams)?;
        if o.cost == 0 {
            termination = Termination::Budget;
            break;
        }
        let changes = if des.label(t) != before {
            vec![(t, des.label(t))]
        } else {
            Vec::new()
        };
        if !changes.is_empty() {
            let affected = outputs.affected(&[t]);
            outputs.refresh(&des, &affected)?;
        }
        steps.push(outputs.step(StepKind::Baseline, budget.spent, changes, Some(p)));
    }
    if termination == Termination::NoProgress && budget.remaining() == 0 {
        termination = Termination::Budget;
    }
    Ok((
        ReductionTrace {
            steps,
            termination,
            budget: budget_total,
            cross_check_mismatches: 0,
        },
        des,
    ))
}
