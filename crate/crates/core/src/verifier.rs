//! Simulated verifiers and vote accounting.
//!
//! A verifier re-labels a tuple against the ground truth at some cost. The
//! majority-vote verifier asks `n` (odd) independent workers, each wrong with
//! probability `w`, and reports the majority; the error of that label is the
//! binomial tail `P[Bin(n, w) >= (n + 1) / 2]`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use statrs::function::factorial::ln_binomial;

use crate::error::VerifyError;
use crate::model::{AnnotatedDes, Label, TupleId, World};

pub const DEFAULT_VOTE_CAP: u64 = 10001;
pub const DEFAULT_WORKER_ERROR: f64 = 0.2;

/// Probability that the majority of `n` votes is wrong. `n` must be odd.
pub fn majority_error(n: u64, w: f64) -> f64 {
    debug_assert!(n % 2 == 1, "majority needs an odd vote count");
    if w <= 0.0 {
        return 0.0;
    }
    let (lw, lq) = (w.ln(), (1.0 - w).ln());
    let terms: Vec<f64> = (n.div_ceil(2)..=n)
        .map(|k| ln_binomial(n, k) + k as f64 * lw + (n - k) as f64 * lq)
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - m).exp()).sum();
    (m + sum.ln()).exp().min(1.0)
}

fn check_worker(w: f64) -> Result<(), VerifyError> {
    if w > 0.0 && w <= 0.5 - 1e-6 {
        Ok(())
    } else {
        Err(VerifyError::WorkerError(w))
    }
}

fn largest_odd(n: u64) -> u64 {
    if n == 0 {
        0
    } else if n % 2 == 1 {
        n
    } else {
        n - 1
    }
}

/// Smallest odd vote count whose majority error is at most `target`.
pub fn votes_needed(w: f64, target: f64, cap: u64) -> Result<u64, VerifyError> {
    check_worker(w)?;
    if !(target > 0.0 && target < 0.5) {
        return Err(VerifyError::Target(target));
    }
    if target >= w {
        return Ok(1);
    }
    let top = largest_odd(cap);
    if top == 0 || majority_error(top, w) > target {
        return Err(VerifyError::Unreachable { target, cap });
    }
    // majority error falls as the odd count grows; search over k with n = 2k + 1
    let (mut lo, mut hi) = (0u64, (top - 1) / 2);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if majority_error(2 * mid + 1, w) <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(2 * lo + 1)
}

/// A pluggable source of new labels.
pub trait Verifier: Send + Sync {
    /// Units needed to reach error at most `target`.
    fn units_for(&self, target: f64) -> Result<u64, VerifyError>;
    /// Largest usable unit count not above `available`; 0 if none.
    fn largest_affordable(&self, available: u64) -> u64;
    /// Error probability of a label bought with `units`.
    fn error_after(&self, units: u64) -> f64;
    /// Draws a label for a tuple whose true value is `truth`.
    fn draw(&self, truth: bool, units: u64, rng: &mut ChaCha8Rng) -> bool;
    /// Lowest error reachable with at most `available` units, 0.5 if nothing is affordable.
    fn floor(&self, available: u64) -> f64 {
        match self.largest_affordable(available) {
            0 => 0.5,
            n => self.error_after(n),
        }
    }
    fn name(&self) -> String;
}

#[derive(Clone, Debug, PartialEq)]
pub struct MajorityVote {
    pub worker_error: f64,
    pub cap: u64,
}

impl MajorityVote {
    pub fn new(worker_error: f64, cap: u64) -> Result<Self, VerifyError> {
        check_worker(worker_error)?;
        Ok(MajorityVote { worker_error, cap })
    }
}

impl Verifier for MajorityVote {
    fn units_for(&self, target: f64) -> Result<u64, VerifyError> {
        votes_needed(self.worker_error, target, self.cap)
    }

    fn largest_affordable(&self, available: u64) -> u64 {
        largest_odd(available.min(self.cap))
    }

    fn error_after(&self, units: u64) -> f64 {
        majority_error(units, self.worker_error)
    }

    fn draw(&self, truth: bool, units: u64, rng: &mut ChaCha8Rng) -> bool {
        let wrong = Binomial::new(units, self.worker_error)
            .expect("valid binomial parameters")
            .sample(rng);
        if 2 * wrong > units {
            !truth
        } else {
            truth
        }
    }

    fn name(&self) -> String {
        format!("majority-vote(w={})", self.worker_error)
    }
}

/// A verifier that always answers with the same error probability for one unit.
#[derive(Clone, Debug, PartialEq)]
pub struct FixedOracle {
    pub error: f64,
}

impl FixedOracle {
    pub fn new(error: f64) -> Result<Self, VerifyError> {
        if (0.0..=0.5).contains(&error) {
            Ok(FixedOracle { error })
        } else {
            Err(VerifyError::WorkerError(error))
        }
    }
}

impl Verifier for FixedOracle {
    fn units_for(&self, _target: f64) -> Result<u64, VerifyError> {
        Ok(1)
    }

    fn largest_affordable(&self, available: u64) -> u64 {
        available.min(1)
    }

    fn error_after(&self, _units: u64) -> f64 {
        self.error
    }

    fn draw(&self, truth: bool, _units: u64, rng: &mut ChaCha8Rng) -> bool {
        if self.error > 0.0 && rng.random::<f64>() < self.error {
            !truth
        } else {
            truth
        }
    }

    fn name(&self) -> String {
        format!("fixed-oracle(e={})", self.error)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Budget {
    pub total: u64,
    pub spent: u64,
}

impl Budget {
    pub fn new(total: u64) -> Self {
        Budget { total, spent: 0 }
    }

    pub fn remaining(&self) -> u64 {
        self.total - self.spent
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Vote randomness keyed by tuple: the k-th verification of tuple t always
/// draws from the stream `(seed, t, k)`, whatever order tuples are visited in.
#[derive(Clone, Debug)]
pub struct VoteStreams {
    seed: u64,
    counts: HashMap<TupleId, u64>,
}

impl VoteStreams {
    pub fn new(seed: u64) -> Self {
        VoteStreams {
            seed,
            counts: HashMap::new(),
        }
    }

    pub fn next(&mut self, tuple: TupleId) -> ChaCha8Rng {
        let k = self.counts.entry(tuple).or_insert(0);
        *k += 1;
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, tuple.0 as u64, *k))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyOutcome {
    pub cost: u64,
    pub updated: Vec<TupleId>,
    pub skipped: Vec<TupleId>,
}

/// Re-labels `tuples` in order at the target error, clamping the unit count
/// to what the budget still allows and skipping tuples it cannot pay for.
pub fn improve_verification(
    des: &mut AnnotatedDes,
    tuples: &[TupleId],
    target: f64,
    budget: &mut Budget,
    truth: &World,
    verifier: &dyn Verifier,
    streams: &mut VoteStreams,
) -> Result<VerifyOutcome, crate::error::Error> {
    let mut out = VerifyOutcome::default();
    let wanted = match verifier.units_for(target) {
        Ok(n) => n,
        Err(VerifyError::Unreachable { .. }) => verifier.largest_affordable(u64::MAX),
        Err(e) => return Err(e.into()),
    };
    for &t in tuples {
        let n = if budget.remaining() >= wanted {
            wanted
        } else {
            verifier.largest_affordable(budget.remaining())
        };
        if n == 0 {
            out.skipped.push(t);
            continue;
        }
        let actual = truth
            .get(t)
            .ok_or(crate::error::DesError::WorldMissing(t))?;
        let label = verifier.draw(actual, n, &mut streams.next(t));
        des.set_label(t, Label::known(label, verifier.error_after(n)))?;
        budget.spent += n;
        out.cost += n;
        out.updated.push(t);
    }
    Ok(out)
}
