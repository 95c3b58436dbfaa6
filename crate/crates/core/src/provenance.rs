//! Monotone provenance expressions over tuple variables.
//!
//! An expression is either a disjunction of conjunctive terms (DNF) or a
//! conjunction of disjunctive clauses (CNF). Groups are kept as sorted,
//! duplicate-free variable lists so structural equality is meaningful.
//!
//! [`ProvExpr::normalize`] only removes repeated groups unless absorption is
//! asked for explicitly. Absorption drops variables from the expression and
//! therefore changes the set of related tuples an MES is computed over.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use crate::error::ProvError;
use crate::model::{Tri, TupleId, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Form {
    Dnf,
    Cnf,
}

impl Form {
    pub fn name(self) -> &'static str {
        match self {
            Form::Dnf => "DNF",
            Form::Cnf => "CNF",
        }
    }
}

/// Anything that can answer "what is the value of variable `x`".
pub trait Valuation<T> {
    fn value_of(&self, var: TupleId) -> Option<T>;
}

impl Valuation<bool> for World {
    fn value_of(&self, var: TupleId) -> Option<bool> {
        self.get(var)
    }
}

impl Valuation<Tri> for crate::model::AnnotatedDes {
    fn value_of(&self, var: TupleId) -> Option<Tri> {
        self.db().contains(var).then(|| self.tri(var))
    }
}

impl<T: Copy> Valuation<T> for std::collections::BTreeMap<TupleId, T> {
    fn value_of(&self, var: TupleId) -> Option<T> {
        self.get(&var).copied()
    }
}

impl<T: Copy, F: Fn(TupleId) -> Option<T>> Valuation<T> for F {
    fn value_of(&self, var: TupleId) -> Option<T> {
        self(var)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProvExpr {
    form: Form,
    groups: Vec<Vec<TupleId>>,
}

impl ProvExpr {
    pub fn new<G, I>(form: Form, groups: G) -> Result<Self, ProvError>
    where
        G: IntoIterator<Item = I>,
        I: IntoIterator<Item = TupleId>,
    {
        let groups: Vec<Vec<TupleId>> = groups
            .into_iter()
            .map(|g| {
                let set: BTreeSet<TupleId> = g.into_iter().collect();
                set.into_iter().collect::<Vec<_>>()
            })
            .collect();
        if groups.is_empty() {
            return Err(ProvError::Empty);
        }
        if groups.iter().any(|g| g.is_empty()) {
            return Err(ProvError::EmptyGroup);
        }
        Ok(ProvExpr { form, groups })
    }

    pub fn dnf<G, I>(terms: G) -> Result<Self, ProvError>
    where
        G: IntoIterator<Item = I>,
        I: IntoIterator<Item = TupleId>,
    {
        Self::new(Form::Dnf, terms)
    }

    pub fn cnf<G, I>(clauses: G) -> Result<Self, ProvError>
    where
        G: IntoIterator<Item = I>,
        I: IntoIterator<Item = TupleId>,
    {
        Self::new(Form::Cnf, clauses)
    }

    /// A single-variable expression, `(x)`.
    pub fn var(x: TupleId) -> Self {
        ProvExpr {
            form: Form::Dnf,
            groups: vec![vec![x]],
        }
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn is_dnf(&self) -> bool {
        self.form == Form::Dnf
    }

    pub fn groups(&self) -> &[Vec<TupleId>] {
        &self.groups
    }

    pub fn vars(&self) -> BTreeSet<TupleId> {
        self.groups.iter().flatten().copied().collect()
    }

    pub fn contains_var(&self, x: TupleId) -> bool {
        self.groups.iter().any(|g| g.binary_search(&x).is_ok())
    }

    /// Number of groups that mention `x`.
    pub fn occurrences(&self, x: TupleId) -> usize {
        self.groups
            .iter()
            .filter(|g| g.binary_search(&x).is_ok())
            .count()
    }

    /// Kleene evaluation.
    pub fn eval_k3(&self, labels: &impl Valuation<Tri>) -> Result<Tri, ProvError> {
        let (inner, outer): (fn(Tri, Tri) -> Tri, fn(Tri, Tri) -> Tri) = match self.form {
            Form::Dnf => (Tri::and, Tri::or),
            Form::Cnf => (Tri::or, Tri::and),
        };
        let (inner_unit, outer_unit) = match self.form {
            Form::Dnf => (Tri::True, Tri::False),
            Form::Cnf => (Tri::False, Tri::True),
        };
        let mut acc = outer_unit;
        for g in &self.groups {
            let mut val = inner_unit;
            for &x in g {
                let v = labels.value_of(x).ok_or(ProvError::MissingVariable(x))?;
                val = inner(val, v);
            }
            acc = outer(acc, val);
        }
        Ok(acc)
    }

    /// Classical evaluation under a Boolean assignment.
    pub fn eval_bool(&self, world: &impl Valuation<bool>) -> Result<bool, ProvError> {
        let mut missing = None;
        let mut get = |x: TupleId| match world.value_of(x) {
            Some(b) => b,
            None => {
                missing.get_or_insert(x);
                false
            }
        };
        let out = match self.form {
            Form::Dnf => self.groups.iter().any(|g| g.iter().all(|&x| get(x))),
            Form::Cnf => self.groups.iter().all(|g| g.iter().any(|&x| get(x))),
        };
        // short-circuiting may hide a missing variable; check every one
        if missing.is_none() {
            if let Some(x) = self.vars().into_iter().find(|x| world.value_of(*x).is_none()) {
                missing = Some(x);
            }
        }
        match missing {
            Some(x) => Err(ProvError::MissingVariable(x)),
            None => Ok(out),
        }
    }

    /// Removes repeated groups, keeping the first occurrence. With `absorption`,
    /// also removes every group that is a strict superset of another.
    pub fn normalize(&self, absorption: bool) -> ProvExpr {
        let mut seen = HashSet::new();
        let mut groups: Vec<Vec<TupleId>> = self
            .groups
            .iter()
            .filter(|g| seen.insert((*g).clone()))
            .cloned()
            .collect();
        if absorption {
            let snapshot = groups.clone();
            groups.retain(|g| {
                !snapshot
                    .iter()
                    .any(|h| h.len() < g.len() && h.iter().all(|x| g.binary_search(x).is_ok()))
            });
        }
        ProvExpr {
            form: self.form,
            groups,
        }
    }

    /// Disjunction of two DNF expressions, deduplicated.
    pub fn disjoin(&self, other: &ProvExpr) -> Result<ProvExpr, ProvError> {
        if self.form != Form::Dnf || other.form != Form::Dnf {
            return Err(ProvError::FormMismatch { expected: "DNF" });
        }
        let mut groups = self.groups.clone();
        groups.extend(other.groups.iter().cloned());
        Ok(ProvExpr {
            form: Form::Dnf,
            groups,
        }
        .normalize(false))
    }
}

impl fmt::Display for ProvExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (inner, outer) = match self.form {
            Form::Dnf => ("&", "|"),
            Form::Cnf => ("|", "&"),
        };
        for (i, g) in self.groups.iter().enumerate() {
            if i > 0 {
                f.write_str(outer)?;
            }
            f.write_str("(")?;
            for (j, x) in g.iter().enumerate() {
                if j > 0 {
                    f.write_str(inner)?;
                }
                write!(f, "v{}", x.0)?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl FromStr for ProvExpr {
    type Err = ProvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let bad = |m: &str| ProvError::Parse(format!("{m} in {s:?}"));
        let body = s
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| bad("expected parenthesized groups"))?;
        let (outer, inner, form) = if body.contains(")|(") {
            (")|(", '&', Form::Dnf)
        } else if body.contains(")&(") {
            (")&(", '|', Form::Cnf)
        } else if body.contains('|') {
            ("\u{0}", '|', Form::Cnf)
        } else {
            ("\u{0}", '&', Form::Dnf)
        };
        let mut groups = Vec::new();
        for g in body.split(outer) {
            let mut vars = Vec::new();
            for tok in g.split(inner) {
                let id = tok
                    .strip_prefix('v')
                    .and_then(|n| n.parse::<u32>().ok())
                    .ok_or_else(|| bad(&format!("bad variable {tok:?}")))?;
                vars.push(TupleId(id));
            }
            groups.push(vars);
        }
        ProvExpr::new(form, groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn t(ids: &[u32]) -> Vec<TupleId> {
        ids.iter().map(|&i| TupleId(i)).collect()
    }

    #[test]
    fn rejects_empty() {
        assert_eq!(ProvExpr::dnf(Vec::<Vec<TupleId>>::new()), Err(ProvError::Empty));
        assert_eq!(ProvExpr::dnf(vec![t(&[1]), t(&[])]), Err(ProvError::EmptyGroup));
    }

    #[test]
    fn groups_are_sorted_and_deduped() {
        let e = ProvExpr::dnf(vec![t(&[3, 1, 3])]).unwrap();
        assert_eq!(e.groups(), &[t(&[1, 3])]);
    }

    #[test]
    fn normalize_dedupes_only_by_default() {
        let e = ProvExpr::dnf(vec![t(&[1, 2]), t(&[1, 2])]).unwrap();
        assert_eq!(e.normalize(false).groups(), &[t(&[1, 2])]);
        let e = ProvExpr::dnf(vec![t(&[1]), t(&[1, 2])]).unwrap();
        assert_eq!(e.normalize(false), e);
        assert_eq!(e.normalize(true).groups(), &[t(&[1])]);
    }

    #[test]
    fn disjoin_requires_dnf() {
        let x = ProvExpr::dnf(vec![t(&[1]), t(&[2])]).unwrap();
        let z = ProvExpr::var(TupleId(3));
        assert_eq!(x.disjoin(&z).unwrap().to_string(), "(v1)|(v2)|(v3)");
        assert_eq!(x.disjoin(&x).unwrap(), x);
        let c = ProvExpr::cnf(vec![t(&[1])]).unwrap();
        assert!(matches!(x.disjoin(&c), Err(ProvError::FormMismatch { .. })));
    }

    #[test]
    fn text_round_trip() {
        for s in ["(v1&v2)|(v3&v4)", "(v1|v2)&(v3)", "(v7)", "(v1|v2)"] {
            let e: ProvExpr = s.parse().unwrap();
            assert_eq!(e.to_string(), s);
        }
        assert!("v1".parse::<ProvExpr>().is_err());
        assert!("(x1)".parse::<ProvExpr>().is_err());
    }

    #[test]
    fn missing_variable_is_reported() {
        let e = ProvExpr::dnf(vec![t(&[1]), t(&[2])]).unwrap();
        let labels = BTreeMap::from([(TupleId(1), Tri::True)]);
        assert_eq!(e.eval_k3(&labels), Err(ProvError::MissingVariable(TupleId(2))));
        let world: World = [(TupleId(1), true)].into_iter().collect();
        assert_eq!(e.eval_bool(&world), Err(ProvError::MissingVariable(TupleId(2))));
    }

    #[test]
    fn cnf_k3() {
        let e = ProvExpr::cnf(vec![t(&[1, 2]), t(&[3])]).unwrap();
        let mut l = BTreeMap::from([
            (TupleId(1), Tri::False),
            (TupleId(2), Tri::Unknown),
            (TupleId(3), Tri::True),
        ]);
        assert_eq!(e.eval_k3(&l).unwrap(), Tri::Unknown);
        l.insert(TupleId(2), Tri::True);
        assert_eq!(e.eval_k3(&l).unwrap(), Tri::True);
        l.insert(TupleId(3), Tri::False);
        assert_eq!(e.eval_k3(&l).unwrap(), Tri::False);
    }

    fn arb_expr(max_var: u32) -> impl Strategy<Value = ProvExpr> {
        (
            any::<bool>(),
            prop::collection::vec(prop::collection::vec(1..=max_var, 1..4), 1..5),
        )
            .prop_map(|(dnf, groups)| {
                let form = if dnf { Form::Dnf } else { Form::Cnf };
                ProvExpr::new(form, groups.into_iter().map(|g| g.into_iter().map(TupleId))).unwrap()
            })
    }

    fn tri_of(code: u8) -> Tri {
        match code % 3 {
            0 => Tri::False,
            1 => Tri::True,
            _ => Tri::Unknown,
        }
    }

    proptest! {
        #[test]
        fn k3_matches_bool_without_unknowns(e in arb_expr(12), mask in 0u32..4096) {
            let world: World = (1..=12).map(|i| (TupleId(i), mask >> (i - 1) & 1 == 1)).collect();
            let labels: BTreeMap<_, _> = world.iter().map(|(k, v)| (k, Tri::from(v))).collect();
            prop_assert_eq!(e.eval_k3(&labels).unwrap(), Tri::from(e.eval_bool(&world).unwrap()));
        }

        #[test]
        fn bool_eval_is_monotone(e in arb_expr(8), mask in 0u32..256, flip in 1u32..=8) {
            let mut world: World = (1..=8).map(|i| (TupleId(i), mask >> (i - 1) & 1 == 1)).collect();
            let before = e.eval_bool(&world).unwrap();
            world.set(TupleId(flip), true);
            prop_assert!(!before || e.eval_bool(&world).unwrap());
        }

        #[test]
        fn normalize_preserves_vars_and_k3(e in arb_expr(6), codes in prop::collection::vec(0u8..3, 6)) {
            let dup = ProvExpr::new(e.form(), e.groups().iter().chain(e.groups()).cloned()).unwrap();
            let n = dup.normalize(false);
            prop_assert_eq!(&n, &e.normalize(false));
            prop_assert_eq!(n.vars(), dup.vars());
            let labels: BTreeMap<_, _> =
                (1..=6).map(|i| (TupleId(i), tri_of(codes[i as usize - 1]))).collect();
            prop_assert_eq!(n.eval_k3(&labels).unwrap(), dup.eval_k3(&labels).unwrap());
        }

        #[test]
        fn text_form_round_trips(e in arb_expr(30)) {
            let back: ProvExpr = e.to_string().parse().unwrap();
            // a lone group prints identically in both forms only when it has one variable
            if e.groups().len() == 1 && e.groups()[0].len() == 1 {
                prop_assert_eq!(back.groups(), e.groups());
            } else if e.groups().len() == 1 && e.form() == Form::Dnf {
                prop_assert_eq!(back, e);
            } else if e.groups().len() > 1 {
                prop_assert_eq!(back, e);
            }
        }
    }
}
