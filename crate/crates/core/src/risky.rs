//! Risky and safe input tuples.
//!
//! A labeled tuple is risky for an output when lowering its error probability
//! to some value strictly raises the output's MES. Lowering it to 0 is the
//! decisive probe: the tuple is risky exactly when that probe raises the MES.

use std::time::{Duration, Instant};

use crate::error::MesError;
use crate::mes::mes;
use crate::model::{AnnotatedDes, LogProb, TupleId};
use crate::provenance::{Form, ProvExpr};

/// Offset below the current error used by the reliability-impairing probe.
pub const IMPAIRING_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RiskClass {
    Risky,
    Safe,
    Undetermined,
}

impl RiskClass {
    pub fn name(self) -> &'static str {
        match self {
            RiskClass::Risky => "risky",
            RiskClass::Safe => "safe",
            RiskClass::Undetermined => "undetermined",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FastPath {
    Risky,
    NotRisky,
    Unknown,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskReport {
    pub tuple: TupleId,
    pub class: RiskClass,
    pub baseline: Option<LogProb>,
    /// MES with the tuple's error set to 0; absent when a structural shortcut decided.
    pub zero_err: Option<LogProb>,
    /// Largest probed unsafe error probability on the geometric grid.
    pub probed_q: Option<f64>,
    /// Whether a probe just below the current error is already unsafe. Heuristic.
    pub impairing_hint: Option<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RiskLimits {
    pub max_candidates: usize,
    pub time_limit: Duration,
    /// Depth of the grid `err / 2^i` searched for a positive unsafe probability.
    pub grid_depth: u32,
    pub probe_grid: bool,
    pub probe_impairing: bool,
}

impl Default for RiskLimits {
    fn default() -> Self {
        RiskLimits {
            max_candidates: 64,
            time_limit: Duration::from_secs(10),
            grid_depth: 40,
            probe_grid: false,
            probe_impairing: false,
        }
    }
}

fn check_candidate(des: &AnnotatedDes, prov: &ProvExpr, tuple: TupleId) -> Result<f64, MesError> {
    if !prov.contains_var(tuple) {
        return Err(MesError::Precondition(format!(
            "tuple {tuple} does not occur in the output's provenance"
        )));
    }
    match des.err(tuple) {
        None => Err(MesError::Precondition(format!("tuple {tuple} is unlabeled"))),
        Some(e) if e <= 0.0 => Err(MesError::Precondition(format!(
            "tuple {tuple} already has error probability 0"
        ))),
        Some(e) => Ok(e),
    }
}

/// MES after replacing the tuple's error probability with `q`.
fn mes_with(des: &AnnotatedDes, prov: &ProvExpr, tuple: TupleId, q: f64) -> Result<LogProb, MesError> {
    Ok(mes(&des.with_err(tuple, q)?, prov)?.log_value)
}

/// Whether lowering the tuple's error probability to `q` strictly raises the MES.
pub fn is_risky_at(des: &AnnotatedDes, prov: &ProvExpr, tuple: TupleId, q: f64) -> Result<bool, MesError> {
    let err = check_candidate(des, prov, tuple)?;
    if !(0.0..err).contains(&q) {
        return Err(MesError::Precondition(format!(
            "probe {q} must lie in [0, {err})"
        )));
    }
    let baseline = mes(des, prov)?.log_value;
    Ok(mes_with(des, prov, tuple, q)?.exceeds(baseline))
}

/// Decides riskiness by the error-0 probe.
pub fn is_risky(des: &AnnotatedDes, prov: &ProvExpr, tuple: TupleId) -> Result<RiskReport, MesError> {
    check_candidate(des, prov, tuple)?;
    let baseline = mes(des, prov)?.log_value;
    let zero = mes_with(des, prov, tuple, 0.0)?;
    Ok(RiskReport {
        tuple,
        class: if zero.exceeds(baseline) {
            RiskClass::Risky
        } else {
            RiskClass::Safe
        },
        baseline: Some(baseline),
        zero_err: Some(zero),
        probed_q: None,
        impairing_hint: None,
    })
}

/// Whether some world flipping the output's label gives `x` the value `pin`.
/// Decided on the structure of the monotone expression.
fn flip_world_exists(prov: &ProvExpr, derived: bool, x: TupleId, pin: bool) -> bool {
    let singleton = |g: &Vec<TupleId>| g.len() == 1 && g[0] == x;
    let avoids = |g: &Vec<TupleId>| g.binary_search(&x).is_err();
    match (prov.form(), derived, pin) {
        // satisfy a DNF: all-ones works with x = 1; x = 0 needs a term without x
        (Form::Dnf, false, true) => true,
        (Form::Dnf, false, false) => prov.groups().iter().any(avoids),
        // falsify a DNF: all-zeros works with x = 0; x = 1 fails only on a term {x}
        (Form::Dnf, true, false) => true,
        (Form::Dnf, true, true) => !prov.groups().iter().any(singleton),
        // the CNF cases are the duals
        (Form::Cnf, false, true) => true,
        (Form::Cnf, false, false) => !prov.groups().iter().any(singleton),
        (Form::Cnf, true, false) => true,
        (Form::Cnf, true, true) => prov.groups().iter().any(avoids),
    }
}

/// Structural shortcut before the MES probes.
///
/// If no flipping world agrees with the tuple's label, every flipping world
/// pays the tuple's error and lowering it cannot help. If every flipping world
/// agrees with it, lowering it raises every positive score; that is only
/// conclusive when every labeled related tuple has a positive error, since
/// otherwise the MES may be 0 and stay 0.
pub fn fast_path_risky(des: &AnnotatedDes, prov: &ProvExpr, tuple: TupleId) -> Result<FastPath, MesError> {
    check_candidate(des, prov, tuple)?;
    let derived = prov
        .eval_k3(des)?
        .as_bool()
        .ok_or(MesError::UnknownOutputLabel)?;
    let label = des.label(tuple).value().expect("candidate is labeled");
    let agree = flip_world_exists(prov, derived, tuple, label);
    let disagree = flip_world_exists(prov, derived, tuple, !label);
    if !agree {
        return Ok(FastPath::NotRisky);
    }
    if !disagree {
        let all_positive = prov
            .vars()
            .into_iter()
            .all(|v| des.err(v).is_none_or(|e| e > 0.0));
        if all_positive {
            return Ok(FastPath::Risky);
        }
    }
    Ok(FastPath::Unknown)
}

/// Largest `err / 2^i`, `1 <= i <= depth`, at which lowering is unsafe.
pub fn positive_unsafe_probe(
    des: &AnnotatedDes,
    prov: &ProvExpr,
    tuple: TupleId,
    depth: u32,
) -> Result<Option<f64>, MesError> {
    let err = check_candidate(des, prov, tuple)?;
    let baseline = mes(des, prov)?.log_value;
    for i in 1..=depth {
        let q = err / 2f64.powi(i as i32);
        if mes_with(des, prov, tuple, q)?.exceeds(baseline) {
            return Ok(Some(q));
        }
    }
    Ok(None)
}

/// Classifies every labeled related tuple with positive error, in id order.
/// Tuples beyond the candidate limit or the deadline are undetermined.
pub fn classify_tuples(
    des: &AnnotatedDes,
    prov: &ProvExpr,
    limits: &RiskLimits,
) -> Result<Vec<RiskReport>, MesError> {
    let baseline = mes(des, prov)?.log_value;
    let deadline = Instant::now() + limits.time_limit;
    let candidates: Vec<TupleId> = prov
        .vars()
        .into_iter()
        .filter(|v| des.err(*v).is_some_and(|e| e > 0.0))
        .collect();
    let mut out = Vec::with_capacity(candidates.len());
    for (i, &t) in candidates.iter().enumerate() {
        if i >= limits.max_candidates || Instant::now() >= deadline {
            out.push(RiskReport {
                tuple: t,
                class: RiskClass::Undetermined,
                baseline: Some(baseline),
                zero_err: None,
                probed_q: None,
                impairing_hint: None,
            });
            continue;
        }
        let mut report = match fast_path_risky(des, prov, t)? {
            FastPath::Risky => RiskReport {
                tuple: t,
                class: RiskClass::Risky,
                baseline: Some(baseline),
                zero_err: None,
                probed_q: None,
                impairing_hint: None,
            },
            FastPath::NotRisky => RiskReport {
                tuple: t,
                class: RiskClass::Safe,
                baseline: Some(baseline),
                zero_err: None,
                probed_q: None,
                impairing_hint: None,
            },
            FastPath::Unknown => {
                let zero = mes_with(des, prov, t, 0.0)?;
                RiskReport {
                    tuple: t,
                    class: if zero.exceeds(baseline) {
                        RiskClass::Risky
                    } else {
                        RiskClass::Safe
                    },
                    baseline: Some(baseline),
                    zero_err: Some(zero),
                    probed_q: None,
                    impairing_hint: None,
                }
            }
        };
        if report.class == RiskClass::Risky {
            let err = des.err(t).expect("candidate is labeled");
            if limits.probe_grid {
                report.probed_q = positive_unsafe_probe(des, prov, t, limits.grid_depth)?;
            }
            if limits.probe_impairing && err > IMPAIRING_EPSILON {
                report.impairing_hint =
                    Some(mes_with(des, prov, t, err - IMPAIRING_EPSILON)?.exceeds(baseline));
            }
        }
        out.push(report);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mes::{mes_brute_force, BRUTE_FORCE_CAP};
    use crate::model::{Column, ColumnType, Database, Label, RelationData, Schema, Value};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn des(n: u32, labels: &[(u32, bool, f64)]) -> AnnotatedDes {
        let schema = Schema::new(vec![Column::new("A", ColumnType::Int)]);
        let rows = (0..n).map(|i| vec![Value::Int(i as i64)]).collect();
        let db = Arc::new(Database::new(vec![RelationData::new("R", schema, rows)]).unwrap());
        let mut d = AnnotatedDes::unlabeled(db);
        for &(i, v, e) in labels {
            d.set_label(TupleId(i), Label::known(v, e)).unwrap();
        }
        d
    }

    fn dnf(groups: &[&[u32]]) -> ProvExpr {
        ProvExpr::dnf(groups.iter().map(|g| g.iter().map(|&i| TupleId(i)))).unwrap()
    }

    #[test]
    fn fast_path_cases() {
        // correct output (x): no falsifying world keeps x = 1
        let d = des(2, &[(1, true, 0.2)]);
        assert_eq!(fast_path_risky(&d, &dnf(&[&[1]]), TupleId(1)).unwrap(), FastPath::NotRisky);
        // incorrect output (x) | (y): both pins satisfiable
        let d = des(2, &[(1, false, 0.2), (2, false, 0.3)]);
        assert_eq!(fast_path_risky(&d, &dnf(&[&[1], &[2]]), TupleId(1)).unwrap(), FastPath::Unknown);
        // correct output x & y: falsifying worlds exist with x = 1 (y = 0) and x = 0
        let d = des(2, &[(1, true, 0.2), (2, true, 0.3)]);
        assert_eq!(fast_path_risky(&d, &dnf(&[&[1, 2]]), TupleId(1)).unwrap(), FastPath::Unknown);
        // incorrect output (x & y), x labeled 1: every satisfying world has x = 1
        let d = des(2, &[(1, true, 0.2), (2, false, 0.3)]);
        assert_eq!(fast_path_risky(&d, &dnf(&[&[1, 2]]), TupleId(1)).unwrap(), FastPath::Risky);
    }

    #[test]
    fn fast_path_does_not_claim_risky_at_zero_mes() {
        // every satisfying world has x = 1 but y is certainly 0, so the MES is 0 either way
        let d = des(2, &[(1, true, 0.2), (2, false, 0.0)]);
        let p = dnf(&[&[1, 2]]);
        assert_eq!(fast_path_risky(&d, &p, TupleId(1)).unwrap(), FastPath::Unknown);
        assert_eq!(is_risky(&d, &p, TupleId(1)).unwrap().class, RiskClass::Safe);
    }

    #[test]
    fn preconditions() {
        let d = des(3, &[(1, true, 0.2), (2, true, 0.0)]);
        let p = dnf(&[&[1, 2]]);
        assert!(matches!(is_risky(&d, &p, TupleId(3)), Err(MesError::Precondition(_))));
        assert!(matches!(is_risky(&d, &p, TupleId(2)), Err(MesError::Precondition(_))));
        assert!(matches!(is_risky_at(&d, &p, TupleId(1), 0.2), Err(MesError::Precondition(_))));
    }

    #[test]
    fn zero_candidates_all_undetermined() {
        let d = des(2, &[(1, true, 0.2), (2, true, 0.3)]);
        let limits = RiskLimits {
            max_candidates: 0,
            ..Default::default()
        };
        let r = classify_tuples(&d, &dnf(&[&[1, 2]]), &limits).unwrap();
        assert_eq!(r.len(), 2);
        assert!(r.iter().all(|x| x.class == RiskClass::Undetermined));
    }

    fn build(n: u32, codes: &[(u8, f64)]) -> AnnotatedDes {
        let labels: Vec<(u32, bool, f64)> = codes
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| *c < 2)
            .map(|(i, (c, e))| (i as u32 + 1, *c == 1, *e))
            .collect();
        des(n, &labels)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn fast_path_agrees_with_probe(
            groups in prop::collection::vec(prop::collection::vec(1u32..=7, 1..4), 1..5),
            codes in prop::collection::vec((0u8..3, 0.01f64..0.5), 7),
        ) {
            let d = build(7, &codes);
            let refs: Vec<&[u32]> = groups.iter().map(|g| g.as_slice()).collect();
            let p = dnf(&refs);
            if p.eval_k3(&d).unwrap().as_bool().is_none() {
                return Ok(());
            }
            for t in p.vars() {
                if d.err(t).is_none() {
                    continue;
                }
                let report = is_risky(&d, &p, t).unwrap();
                // the probe agrees with the exhaustive oracle
                let oracle = mes_brute_force(&d.with_err(t, 0.0).unwrap(), &p, BRUTE_FORCE_CAP).unwrap();
                prop_assert_eq!(report.class == RiskClass::Risky, oracle.log_value.exceeds(report.baseline.unwrap()));
                match fast_path_risky(&d, &p, t).unwrap() {
                    FastPath::Risky => prop_assert_eq!(report.class, RiskClass::Risky),
                    FastPath::NotRisky => prop_assert_eq!(report.class, RiskClass::Safe),
                    FastPath::Unknown => {}
                }
                if report.class == RiskClass::Risky {
                    prop_assert!(positive_unsafe_probe(&d, &p, t, 40).unwrap().is_some());
                }
            }
        }
    }
}
