//! Maximal error scores.
//!
//! The MES of an output with a known derived label is the largest labeling
//! probability, restricted to the output's related tuples, of any world in
//! which the output's label is wrong. Four routes compute it:
//!
//! * term scan, for incorrect outputs with DNF provenance;
//! * a 0-1 program, for correct outputs with DNF provenance (and, dually,
//!   incorrect outputs with CNF provenance);
//! * clause scan, for correct outputs with CNF provenance;
//! * exhaustive enumeration, used as an oracle.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::error::MesError;
use crate::ilp::{solve_binary_max, BinaryProgram, Solution};
use crate::model::{AnnotatedDes, Label, LogProb, Tri, TupleId, World};
use crate::provenance::{Form, ProvExpr};

/// Default variable cap for [`mes_brute_force`].
pub const BRUTE_FORCE_CAP: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MesMethod {
    TermScan,
    Ilp,
    CnfDual,
    BruteForce,
}

impl MesMethod {
    pub fn name(self) -> &'static str {
        match self {
            MesMethod::TermScan => "term-scan",
            MesMethod::Ilp => "ilp",
            MesMethod::CnfDual => "cnf-dual",
            MesMethod::BruteForce => "brute-force",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MesScore {
    pub log_value: LogProb,
    /// A worst-case world over the provenance variables.
    pub witness: World,
    pub method: MesMethod,
    /// The output's derived label.
    pub derived: bool,
    /// Number of labeled related tuples, i.e. factors of the maximized product.
    pub factors: usize,
}

impl MesScore {
    pub fn value(&self) -> f64 {
        self.log_value.prob()
    }

    pub fn is_zero(&self) -> bool {
        self.log_value.is_zero()
    }

    pub fn averaged(&self) -> Option<f64> {
        averaged_mes(self.log_value, self.factors)
    }
}

/// Tuples whose variables occur in the provenance.
pub fn rel_tuples(prov: &ProvExpr) -> BTreeSet<TupleId> {
    prov.vars()
}

fn known_label(des: &AnnotatedDes, prov: &ProvExpr) -> Result<bool, MesError> {
    prov.eval_k3(des)?
        .as_bool()
        .ok_or(MesError::UnknownOutputLabel)
}

fn factor_count(des: &AnnotatedDes, vars: &BTreeSet<TupleId>) -> usize {
    vars.iter().filter(|v| des.tri(**v) != Tri::Unknown).count()
}

/// Lexicographic order of two worlds over the same variables, false < true.
fn world_cmp(a: &World, b: &World) -> Ordering {
    a.iter().map(|(_, x)| x).cmp(b.iter().map(|(_, x)| x))
}

/// Keeps `best` unless `cand` is larger beyond tolerance, or tied and lexicographically smaller.
fn keep_better(best: &mut Option<(LogProb, World)>, cand: LogProb, world: World) {
    let replace = match best {
        None => true,
        Some((lp, w)) => {
            cand.exceeds(*lp) || (cand.approx_eq(*lp) && world_cmp(&world, w) == Ordering::Less)
        }
    };
    if replace {
        *best = Some((cand, world));
    }
}

/// Scans one world per group: group variables pinned to `pin`, other labeled
/// variables at their label, unlabeled ones at `pin`.
fn group_scan(
    des: &AnnotatedDes,
    prov: &ProvExpr,
    pin: bool,
) -> Result<(LogProb, World), MesError> {
    let vars = prov.vars();
    let mut best = None;
    for g in prov.groups() {
        let world: World = vars
            .iter()
            .map(|&v| {
                let value = if g.binary_search(&v).is_ok() {
                    pin
                } else {
                    des.label(v).value().unwrap_or(pin)
                };
                (v, value)
            })
            .collect();
        let lp = des.labeling_probability(&world, vars.iter().copied())?;
        keep_better(&mut best, lp, world);
    }
    Ok(best.expect("provenance has at least one group"))
}

/// MES of an output labeled incorrect, with DNF provenance.
pub fn mes_incorrect(des: &AnnotatedDes, prov: &ProvExpr) -> Result<MesScore, MesError> {
    if prov.form() != Form::Dnf {
        return Err(MesError::Provenance(crate::error::ProvError::FormMismatch { expected: "DNF" }));
    }
    if known_label(des, prov)? {
        return Err(MesError::Precondition("term scan needs an output labeled 0".into()));
    }
    let (log_value, witness) = group_scan(des, prov, true)?;
    Ok(MesScore {
        log_value,
        witness,
        method: MesMethod::TermScan,
        derived: false,
        factors: factor_count(des, &prov.vars()),
    })
}

/// MES of an output labeled correct, with CNF provenance.
pub fn mes_cnf_dual(des: &AnnotatedDes, prov: &ProvExpr) -> Result<MesScore, MesError> {
    if prov.form() != Form::Cnf {
        return Err(MesError::Provenance(crate::error::ProvError::FormMismatch { expected: "CNF" }));
    }
    if !known_label(des, prov)? {
        return Err(MesError::Precondition("clause scan needs an output labeled 1".into()));
    }
    let (log_value, witness) = group_scan(des, prov, false)?;
    Ok(MesScore {
        log_value,
        witness,
        method: MesMethod::CnfDual,
        derived: true,
        factors: factor_count(des, &prov.vars()),
    })
}

/// True iff some group has every variable labeled `blocked` with error 0, so
/// that every world avoiding a fully-`blocked` group has probability 0.
fn zero_error_certificate(des: &AnnotatedDes, prov: &ProvExpr, blocked: bool) -> bool {
    prov.groups().iter().any(|g| {
        g.iter()
            .all(|&v| des.label(v) == Label::Known { value: blocked, err: 0.0 })
    })
}

/// True iff some DNF term has every variable labeled 1 with error 0.
pub fn exists_zero_error_one_certificate(des: &AnnotatedDes, prov: &ProvExpr) -> bool {
    prov.form() == Form::Dnf && zero_error_certificate(des, prov, true)
}

/// The 0-1 program whose variable `b_i` means "tuple `i` takes value `blocked`"
/// and whose groups forbid every variable of a group being `blocked`.
/// Returns the program and the constant offset of the log objective.
pub fn build_program(des: &AnnotatedDes, prov: &ProvExpr, blocked: bool) -> (BinaryProgram, f64) {
    let mut program = BinaryProgram {
        groups: prov.groups().to_vec(),
        ..Default::default()
    };
    let mut offset = 0.0;
    for v in prov.vars() {
        match des.label(v) {
            Label::Unknown => {
                program.fixed.insert(v, false);
            }
            Label::Known { value, err: 0.0 } => {
                program.fixed.insert(v, value == blocked);
            }
            Label::Known { value, err } => {
                // factor when the tuple takes `blocked`, and when it does not
                let (on, off) = if value == blocked {
                    ((1.0 - err).ln(), err.ln())
                } else {
                    (err.ln(), (1.0 - err).ln())
                };
                offset += off;
                program.objective.insert(v, on - off);
            }
        }
    }
    (program, offset)
}

fn ilp_route(des: &AnnotatedDes, prov: &ProvExpr, blocked: bool) -> Result<MesScore, MesError> {
    let vars = prov.vars();
    let factors = factor_count(des, &vars);
    let derived = blocked;
    let zero = |witness: World| MesScore {
        log_value: LogProb::ZERO,
        witness,
        method: MesMethod::Ilp,
        derived,
        factors,
    };
    // with the certificate every flipping world has probability 0; report the
    // world with every variable away from `blocked`
    let fallback: World = vars.iter().map(|&v| (v, !blocked)).collect();
    if zero_error_certificate(des, prov, blocked) {
        return Ok(zero(fallback));
    }
    let (program, offset) = build_program(des, prov, blocked);
    match solve_binary_max(&program) {
        Solution::Infeasible => Ok(zero(fallback)),
        Solution::Optimal { value, assignment } => {
            let witness: World = vars
                .iter()
                .map(|&v| (v, assignment.get(&v).copied().unwrap_or(false) == blocked))
                .collect();
            Ok(MesScore {
                log_value: LogProb::from_ln(value + offset),
                witness,
                method: MesMethod::Ilp,
                derived,
                factors,
            })
        }
    }
}

/// MES of an output labeled correct, with DNF provenance, via a 0-1 program.
pub fn mes_correct_ilp(des: &AnnotatedDes, prov: &ProvExpr) -> Result<MesScore, MesError> {
    if prov.form() != Form::Dnf {
        return Err(MesError::Provenance(crate::error::ProvError::FormMismatch { expected: "DNF" }));
    }
    if !known_label(des, prov)? {
        return Err(MesError::Precondition("the 0-1 program route needs an output labeled 1".into()));
    }
    ilp_route(des, prov, true)
}

/// MES by enumerating every assignment to the provenance variables.
pub fn mes_brute_force(des: &AnnotatedDes, prov: &ProvExpr, cap: usize) -> Result<MesScore, MesError> {
    let derived = known_label(des, prov)?;
    let vars: Vec<TupleId> = prov.vars().into_iter().collect();
    let n = vars.len();
    if n > cap || n >= 63 {
        return Err(MesError::CapExceeded { vars: n, cap });
    }
    let mut best: Option<(LogProb, World)> = None;
    // the first variable is the most significant bit, so masks ascend lexicographically
    for mask in 0u64..(1u64 << n) {
        let world: World = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| (v, mask >> (n - 1 - i) & 1 == 1))
            .collect();
        if prov.eval_bool(&world)? == derived {
            continue;
        }
        let lp = des.labeling_probability(&world, vars.iter().copied())?;
        let better = match &best {
            None => true,
            Some((b, _)) => lp.exceeds(*b),
        };
        if better {
            best = Some((lp, world));
        }
    }
    let (log_value, witness) =
        best.ok_or_else(|| MesError::Precondition("no world flips the output label".into()))?;
    Ok(MesScore {
        log_value,
        witness,
        method: MesMethod::BruteForce,
        derived,
        factors: factor_count(des, &prov.vars()),
    })
}

/// MES of an output whose derived label is known.
pub fn mes(des: &AnnotatedDes, prov: &ProvExpr) -> Result<MesScore, MesError> {
    let derived = known_label(des, prov)?;
    match (prov.form(), derived) {
        (Form::Dnf, false) => mes_incorrect(des, prov),
        (Form::Dnf, true) => mes_correct_ilp(des, prov),
        (Form::Cnf, true) => mes_cnf_dual(des, prov),
        // a satisfying world for a CNF must hit every clause: the dual program
        (Form::Cnf, false) => ilp_route(des, prov, false),
    }
}

/// Largest MES over several outputs, with the index of the first maximizer.
pub fn mes_set(des: &AnnotatedDes, provs: &[ProvExpr]) -> Result<(usize, MesScore), MesError> {
    if provs.is_empty() {
        return Err(MesError::Precondition("no outputs given".into()));
    }
    let scores = provs
        .par_iter()
        .map(|p| mes(des, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if s.log_value.exceeds(scores[best].log_value) {
            best = i;
        }
    }
    Ok((best, scores.into_iter().nth(best).expect("index in range")))
}

/// `score^(-1/n)`, absent when the score is 0 or `n` is 0.
pub fn averaged_mes(score: LogProb, n: usize) -> Option<f64> {
    if score.is_zero() || n == 0 {
        return None;
    }
    Some((-score.ln() / n as f64).exp())
}
