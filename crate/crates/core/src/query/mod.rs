//! A small SPJU query language with provenance-annotated evaluation.
//!
//! Supported text:
//!
//! ```text
//! SELECT [DISTINCT] col, ... FROM rel [[AS] alias], ... [WHERE atom AND ...]
//!     [UNION SELECT ...] [;]
//! ```
//!
//! where an atom is `operand op operand`, `op` is one of
//! `= <> != < <= > >= ILIKE`, and an operand is a column reference
//! (`alias.col` or an unambiguous `col`), a string or numeric literal,
//! `YEAR(col)` or `DATE_PART('YEAR', col)`. Results always have set semantics.

mod eval;
mod parser;

use std::fmt;

use crate::model::{ColumnType, Tri, Value};
use crate::provenance::ProvExpr;

pub use eval::{derive_output_label, evaluate_provenance, evaluate_with_provenance};
pub use parser::parse_query;

/// A column of one scan in the enclosing block.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnRef {
    /// Position of the scan within the block's product.
    pub slot: usize,
    pub column: usize,
    pub name: String,
    pub ty: ColumnType,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Operand {
    Column(ColumnRef),
    Year(ColumnRef),
    Literal(Value),
}

impl Operand {
    pub fn ty(&self) -> ColumnType {
        match self {
            Operand::Column(c) => c.ty,
            Operand::Year(_) => ColumnType::Int,
            Operand::Literal(v) => v.column_type(),
        }
    }

    fn max_slot(&self) -> Option<usize> {
        match self {
            Operand::Column(c) | Operand::Year(c) => Some(c.slot),
            Operand::Literal(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    ILike,
}

impl fmt::Display for CmpOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "<>",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::ILike => "ILIKE",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub lhs: Operand,
    pub op: CmpOp,
    pub rhs: Operand,
}

impl Atom {
    /// Deepest scan slot the atom reads, or `None` for constant atoms.
    pub fn depth(&self) -> Option<usize> {
        match (self.lhs.max_slot(), self.rhs.max_slot()) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }
}

/// Conjunction of atoms.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Predicate {
    pub atoms: Vec<Atom>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub relation: String,
    pub alias: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryPlan {
    Scan(Scan),
    Product(Vec<Scan>),
    Select {
        input: Box<QueryPlan>,
        predicate: Predicate,
    },
    Project {
        input: Box<QueryPlan>,
        columns: Vec<ColumnRef>,
        distinct: bool,
    },
    Union(Vec<QueryPlan>),
}

impl QueryPlan {
    /// Output column names.
    pub fn output_columns(&self) -> Vec<String> {
        match self {
            QueryPlan::Project { columns, .. } => columns.iter().map(|c| c.name.clone()).collect(),
            QueryPlan::Union(parts) => parts.first().map(|p| p.output_columns()).unwrap_or_default(),
            QueryPlan::Select { input, .. } => input.output_columns(),
            QueryPlan::Scan(_) | QueryPlan::Product(_) => Vec::new(),
        }
    }
}

/// An output tuple with its provenance and derived label.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedOutput {
    pub values: Vec<Value>,
    pub prov: ProvExpr,
    pub derived: Tri,
}

impl AnnotatedOutput {
    pub fn render_values(&self) -> String {
        self.values
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub columns: Vec<String>,
    pub outputs: Vec<AnnotatedOutput>,
}
