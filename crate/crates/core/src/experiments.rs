//! Scenarios, quality metrics and the strategy comparison harness.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::Error;
use crate::model::{AnnotatedDes, Database, Label, Tri, World};
use crate::provenance::ProvExpr;
use crate::reduce::{mes_reduce, run_baseline, BaselineKind, ReduceConfig, ReductionTrace};
use crate::verifier::{mix_seed, Verifier};

const SCENARIO_STREAM: u64 = 0x5CE7_A410;
const VOTE_STREAM: u64 = 0x0070_7E5E;

pub const AVG_ERR_RANGE: (f64, f64) = (0.2, 0.499);
pub const WCS_ERR: f64 = 0.499;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Wcs,
    Avg,
    Rlbl,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Wcs => "wcs",
            ScenarioKind::Avg => "avg",
            ScenarioKind::Rlbl => "rlbl",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wcs" => Some(ScenarioKind::Wcs),
            "avg" => Some(ScenarioKind::Avg),
            "rlbl" => Some(ScenarioKind::Rlbl),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub truth: World,
    pub des: AnnotatedDes,
    pub seed: u64,
}

/// Builds a scenario over `db`. RLBL takes its labels and truth from `loaded` unchanged.
pub fn gen_scenario(
    kind: ScenarioKind,
    db: &Arc<Database>,
    seed: u64,
    loaded: Option<(&AnnotatedDes, &World)>,
) -> Result<Scenario, Error> {
    let (des, truth) = match kind {
        ScenarioKind::Wcs => {
            let mut des = AnnotatedDes::unlabeled(db.clone());
            for t in db.tuple_ids() {
                des.set_label(t, Label::known(false, WCS_ERR))?;
            }
            (des, World::total(db, |_| true))
        }
        ScenarioKind::Avg => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, SCENARIO_STREAM, 0));
            let mut des = AnnotatedDes::unlabeled(db.clone());
            let mut truth = World::new();
            for t in db.tuple_ids() {
                let actual: bool = rng.random_bool(0.5);
                let err = rng.random_range(AVG_ERR_RANGE.0..=AVG_ERR_RANGE.1);
                let flipped = rng.random_bool(err);
                des.set_label(t, Label::known(actual != flipped, err))?;
                truth.set(t, actual);
            }
            (des, truth)
        }
        ScenarioKind::Rlbl => {
            let (des, truth) = loaded.ok_or_else(|| {
                Error::Config("the rlbl scenario needs labels and a truth file".into())
            })?;
            (des.clone(), truth.clone())
        }
    };
    Ok(Scenario {
        kind,
        truth,
        des,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of predicted output labels, unknown counted as 0.
pub fn f1_of_labels(predicted: &[Tri], actual: &[bool]) -> F1 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (p, a) in predicted.iter().zip(actual) {
        match (*p == Tri::True, *a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    F1 {
        precision,
        recall,
        f1,
    }
}

/// True labels of the outputs under a total world.
pub fn output_truth(provs: &[ProvExpr], truth: &World) -> Result<Vec<bool>, Error> {
    provs
        .iter()
        .map(|p| p.eval_bool(truth).map_err(Error::from))
        .collect()
}

pub fn f1_of_outputs(des: &AnnotatedDes, provs: &[ProvExpr], truth: &World) -> Result<F1, Error> {
    let predicted = provs
        .iter()
        .map(|p| p.eval_k3(des))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(f1_of_labels(&predicted, &output_truth(provs, truth)?))
}

/// F1 after each trace step, paired with the cumulative cost.
pub fn f1_curve(trace: &ReductionTrace, actual: &[bool]) -> Vec<(u64, F1)> {
    trace
        .steps
        .iter()
        .map(|s| (s.cost, f1_of_labels(&s.derived, actual)))
        .collect()
}

/// Area under F1 as a step function of cost over `[0, budget]`. Each value
/// holds from its step's cost until the next step's cost.
pub fn f1_auc(curve: &[(u64, F1)], budget: u64) -> f64 {
    let mut area = 0.0;
    for (i, (cost, f)) in curve.iter().enumerate() {
        let end = curve.get(i + 1).map_or(budget, |n| n.0).min(budget);
        area += f.f1 * end.saturating_sub(*cost) as f64;
    }
    area
}

/// `ln(final) / ln(initial)` of the maximal MES. Infinite when the final MES
/// is 0, absent when the initial MES is 0 or 1.
pub fn mes_log_ratio(trace: &ReductionTrace) -> Option<f64> {
    let initial = trace.initial_max_mes()?;
    let last = trace.final_max_mes()?;
    log_ratio(initial.prob(), last.prob())
}

pub fn log_ratio(initial: f64, last: f64) -> Option<f64> {
    if !(initial > 0.0 && initial < 1.0) {
        return None;
    }
    if last <= 0.0 {
        return Some(f64::INFINITY);
    }
    Some(last.ln() / initial.ln())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    MesReduce,
    Baseline(BaselineKind, f64),
}

impl Strategy {
    pub fn name(&self) -> String {
        match self {
            Strategy::MesReduce => "mesreduce".to_string(),
            Strategy::Baseline(k, p) => format!("{}(p={})", k.name(), p),
        }
    }

    /// Parses `mesreduce`, `random`, `prob-greedy(p=0.01)` and the like.
    /// Baselines without an explicit probability use `default_p`.
    pub fn parse(s: &str, default_p: f64) -> Option<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("mesreduce") {
            return Some(Strategy::MesReduce);
        }
        let (name, p) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest.strip_suffix(')')?.trim();
                let inner = inner.strip_prefix("p=").unwrap_or(inner);
                (name, inner.parse().ok()?)
            }
            None => (s, default_p),
        };
        if !(p > 0.0 && p < 0.5) {
            return None;
        }
        Some(Strategy::Baseline(BaselineKind::parse(name)?, p))
    }

    /// The engine followed by every baseline at probability `p`.
    pub fn all(p: f64) -> Vec<Strategy> {
        std::iter::once(Strategy::MesReduce)
            .chain(BaselineKind::ALL.into_iter().map(|k| Strategy::Baseline(k, p)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub repeat: usize,
    pub trace: ReductionTrace,
    pub curve: Vec<(u64, F1)>,
    pub f1_auc: f64,
    pub mes_log_ratio: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct QualityReport {
    pub strategy: Strategy,
    pub scenario: ScenarioKind,
    pub runs: Vec<RunReport>,
}

impl QualityReport {
    /// Mean over runs where the ratio is defined.
    pub fn mean_log_ratio(&self) -> Option<f64> {
        let vals: Vec<f64> = self.runs.iter().filter_map(|r| r.mes_log_ratio).collect();
        if vals.is_empty() {
            return None;
        }
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }

    pub fn worst_f1_auc(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.f1_auc)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn mean_f1_auc(&self) -> f64 {
        self.runs.iter().map(|r| r.f1_auc).sum::<f64>() / self.runs.len().max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct ComparisonSetup<'a> {
    pub db: Arc<Database>,
    pub provs: &'a [ProvExpr],
    pub budget: u64,
    pub repeats: usize,
    pub seed: u64,
    pub config: ReduceConfig,
    pub loaded: Option<(&'a AnnotatedDes, &'a World)>,
}

/// Runs one strategy on one scenario with the given vote seed.
pub fn run_strategy(
    strategy: Strategy,
    scenario: &Scenario,
    provs: &[ProvExpr],
    budget: u64,
    config: &ReduceConfig,
    verifier: &dyn Verifier,
    vote_seed: u64,
) -> Result<ReductionTrace, Error> {
    let (trace, _) = match strategy {
        Strategy::MesReduce => mes_reduce(
            &scenario.des,
            provs,
            budget,
            config,
            &scenario.truth,
            verifier,
            vote_seed,
        )?,
        Strategy::Baseline(kind, p) => run_baseline(
            kind,
            p,
            &scenario.des,
            provs,
            budget,
            &scenario.truth,
            verifier,
            vote_seed,
        )?,
    };
    Ok(trace)
}

/// Every strategy sees the same scenario draw and vote streams in a given repeat.
pub fn run_comparison(
    setup: &ComparisonSetup,
    scenarios: &[ScenarioKind],
    strategies: &[Strategy],
    verifier: &dyn Verifier,
) -> Result<Vec<QualityReport>, Error> {
    let mut reports = Vec::new();
    for &kind in scenarios {
        let runs: Vec<Vec<RunReport>> = (0..setup.repeats)
            .into_par_iter()
            .map(|r| -> Result<Vec<RunReport>, Error> {
                let scenario_seed = mix_seed(setup.seed, kind as u64, r as u64);
                let vote_seed = mix_seed(setup.seed, VOTE_STREAM, r as u64);
                let scenario = gen_scenario(kind, &setup.db, scenario_seed, setup.loaded)?;
                let actual = output_truth(setup.provs, &scenario.truth)?;
                strategies
                    .iter()
                    .map(|&s| {
                        let trace = run_strategy(
                            s,
                            &scenario,
                            setup.provs,
                            setup.budget,
                            &setup.config,
                            verifier,
                            vote_seed,
                        )?;
                        let curve = f1_curve(&trace, &actual);
                        Ok(RunReport {
                            repeat: r,
                            f1_auc: f1_auc(&curve, setup.budget),
                            mes_log_ratio: mes_log_ratio(&trace),
                            curve,
                            trace,
                        })
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        for (i, &s) in strategies.iter().enumerate() {
            reports.push(QualityReport {
                strategy: s,
                scenario: kind,
                runs: runs.iter().map(|per| per[i].clone()).collect(),
            });
        }
    }
    Ok(reports)
}
