use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::QueryError;
use crate::model::{AnnotatedDes, Database, Tri, Tuple, TupleId, Value};
use crate::provenance::{ProvExpr, Valuation};

use super::{AnnotatedOutput, Atom, CmpOp, Operand, Predicate, QueryPlan, QueryResult, Scan};

/// Case-insensitive match where `%` matches any run of characters.
fn ilike(text: &str, pattern: &str) -> bool {
    let text: Vec<char> = text.to_lowercase().chars().collect();
    let parts: Vec<Vec<char>> = pattern
        .to_lowercase()
        .split('%')
        .map(|p| p.chars().collect())
        .collect();
    if parts.len() == 1 {
        return text == parts[0];
    }
    let (first, last) = (&parts[0], &parts[parts.len() - 1]);
    if text.len() < first.len() + last.len()
        || !text.starts_with(first)
        || !text.ends_with(last)
    {
        return false;
    }
    let mut pos = first.len();
    let end = text.len() - last.len();
    for part in &parts[1..parts.len() - 1] {
        if part.is_empty() {
            continue;
        }
        match (pos..=end.saturating_sub(part.len()))
            .find(|&i| i + part.len() <= end && text[i..i + part.len()] == part[..])
        {
            Some(i) => pos = i + part.len(),
            None => return false,
        }
    }
    true
}

fn operand_value(op: &Operand, binding: &[&Tuple]) -> Value {
    match op {
        Operand::Column(c) => binding[c.slot].values[c.column].clone(),
        Operand::Year(c) => Value::Int(binding[c.slot].values[c.column].year().unwrap_or_default()),
        Operand::Literal(v) => v.clone(),
    }
}

fn holds(atom: &Atom, binding: &[&Tuple]) -> bool {
    let l = operand_value(&atom.lhs, binding);
    let r = operand_value(&atom.rhs, binding);
    match atom.op {
        CmpOp::Eq => l == r,
        CmpOp::Ne => l != r,
        CmpOp::Lt => l < r,
        CmpOp::Le => l <= r,
        CmpOp::Gt => l > r,
        CmpOp::Ge => l >= r,
        CmpOp::ILike => match (&l, &r) {
            (Value::Str(t), Value::Str(p)) => ilike(t, p),
            _ => false,
        },
    }
}

/// Rows of one block: projected values with the derivations that produced them.
type Rows = Vec<(Vec<Value>, Vec<Vec<TupleId>>)>;

fn bindings<'a>(
    db: &'a Database,
    scans: &[Scan],
    predicate: &Predicate,
    mut emit: impl FnMut(&[&'a Tuple]),
) -> Result<(), QueryError> {
    let relations = scans
        .iter()
        .map(|s| {
            db.relation(&s.relation)
                .ok_or_else(|| QueryError::UnknownRelation(s.relation.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    // atoms are checked as soon as every scan they read is bound
    let mut at_depth: Vec<Vec<&Atom>> = vec![Vec::new(); scans.len()];
    for atom in &predicate.atoms {
        match atom.depth() {
            Some(d) => at_depth[d].push(atom),
            None => {
                if !holds(atom, &[]) {
                    return Ok(());
                }
            }
        }
    }
    fn go<'a>(
        depth: usize,
        relations: &[&'a crate::model::Relation],
        at_depth: &[Vec<&Atom>],
        stack: &mut Vec<&'a Tuple>,
        emit: &mut dyn FnMut(&[&'a Tuple]),
    ) {
        if depth == relations.len() {
            emit(stack);
            return;
        }
        for t in &relations[depth].tuples {
            stack.push(t);
            if at_depth[depth].iter().all(|a| holds(a, stack)) {
                go(depth + 1, relations, at_depth, stack, emit);
            }
            stack.pop();
        }
    }
    let mut stack = Vec::with_capacity(scans.len());
    go(0, &relations, &at_depth, &mut stack, &mut emit);
    Ok(())
}

fn eval_block(db: &Database, plan: &QueryPlan) -> Result<Rows, QueryError> {
    let QueryPlan::Project { input, columns, .. } = plan else {
        return Err(QueryError::TypeMismatch(
            "a query block must end in a projection".into(),
        ));
    };
    let (scans, predicate) = flatten_input(input)?;
    let mut index: HashMap<Vec<Value>, usize> = HashMap::new();
    let mut rows: Rows = Vec::new();
    bindings(db, &scans, &predicate, |binding| {
        let values: Vec<Value> = columns
            .iter()
            .map(|c| binding[c.slot].values[c.column].clone())
            .collect();
        let term: BTreeSet<TupleId> = binding.iter().map(|t| t.id).collect();
        let term: Vec<TupleId> = term.into_iter().collect();
        let i = *index.entry(values.clone()).or_insert_with(|| {
            rows.push((values, Vec::new()));
            rows.len() - 1
        });
        rows[i].1.push(term);
    })?;
    Ok(rows)
}

fn flatten_input(plan: &QueryPlan) -> Result<(Vec<Scan>, Predicate), QueryError> {
    match plan {
        QueryPlan::Scan(s) => Ok((vec![s.clone()], Predicate::default())),
        QueryPlan::Product(scans) => Ok((scans.clone(), Predicate::default())),
        QueryPlan::Select { input, predicate } => {
            let (scans, mut inner) = flatten_input(input)?;
            inner.atoms.extend(predicate.atoms.iter().cloned());
            Ok((scans, inner))
        }
        _ => Err(QueryError::TypeMismatch(
            "projection and union cannot appear below a selection".into(),
        )),
    }
}

/// Evaluates `plan` over `db`, returning each distinct output with its DNF
/// provenance. Outputs are sorted by value; terms keep derivation order.
pub fn evaluate_provenance(
    db: &Database,
    plan: &QueryPlan,
) -> Result<Vec<(Vec<Value>, ProvExpr)>, QueryError> {
    let blocks: Vec<&QueryPlan> = match plan {
        QueryPlan::Union(parts) => parts.iter().collect(),
        other => vec![other],
    };
    let mut merged: BTreeMap<Vec<Value>, Vec<Vec<TupleId>>> = BTreeMap::new();
    for block in blocks {
        for (values, terms) in eval_block(db, block)? {
            merged.entry(values).or_default().extend(terms);
        }
    }
    merged
        .into_iter()
        .map(|(values, terms)| Ok((values, ProvExpr::dnf(terms)?.normalize(false))))
        .collect()
}

/// Evaluates `plan` and labels each output by Kleene evaluation of its provenance.
pub fn evaluate_with_provenance(
    des: &AnnotatedDes,
    plan: &QueryPlan,
) -> Result<QueryResult, QueryError> {
    let outputs = evaluate_provenance(des.db(), plan)?
        .into_iter()
        .map(|(values, prov)| {
            let derived = derive_output_label(&prov, des)?;
            Ok(AnnotatedOutput {
                values,
                prov,
                derived,
            })
        })
        .collect::<Result<Vec<_>, QueryError>>()?;
    Ok(QueryResult {
        columns: plan.output_columns(),
        outputs,
    })
}

/// The output's 3-valued label under `labels`.
pub fn derive_output_label(
    prov: &ProvExpr,
    labels: &impl Valuation<Tri>,
) -> Result<Tri, crate::error::ProvError> {
    prov.eval_k3(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ilike_patterns() {
        assert!(ilike("Co-founder", "%founder%"));
        assert!(ilike("Founder", "%founder%"));
        assert!(!ilike("CEO", "%founder%"));
        assert!(ilike("abc", "ABC"));
        assert!(!ilike("abcd", "abc"));
        assert!(ilike("abc", "a%c"));
        assert!(ilike("ac", "a%c"));
        assert!(!ilike("a", "a%a"));
        assert!(ilike("aXbYc", "a%b%c"));
        assert!(!ilike("aXcYb", "a%b%c%d"));
        assert!(ilike("", "%"));
    }
}
