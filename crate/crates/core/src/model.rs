//! Databases with error estimation.
//!
//! A [`Database`] holds typed relations whose tuples carry dense, database-wide
//! ids. An [`AnnotatedDes`] pairs a database with a partial 3-valued
//! correctness labeling in which every known label carries an error
//! probability in `[0, 0.5]`. The annotation variable of a tuple is its id.
//!
//! Probabilities are kept as natural logarithms ([`LogProb`]) and only turned
//! back into linear values when reported.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};

use crate::error::DesError;

/// Absolute tolerance used for every comparison of log probabilities.
pub const LOG_TOLERANCE: f64 = 1e-12;

/// Database-wide tuple identifier. It doubles as the tuple's annotation variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TupleId(pub u32);

impl fmt::Display for TupleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Kleene 3-valued truth value, used both for input labels and derived output labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tri {
    False,
    True,
    Unknown,
}

pub type TriLabel = Tri;
pub type TriBool = Tri;

impl Tri {
    pub fn and(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::False, _) | (_, Tri::False) => Tri::False,
            (Tri::True, Tri::True) => Tri::True,
            _ => Tri::Unknown,
        }
    }

    pub fn or(self, other: Tri) -> Tri {
        match (self, other) {
            (Tri::True, _) | (_, Tri::True) => Tri::True,
            (Tri::False, Tri::False) => Tri::False,
            _ => Tri::Unknown,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Tri::False => Some(false),
            Tri::True => Some(true),
            Tri::Unknown => None,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Tri::False => '0',
            Tri::True => '1',
            Tri::Unknown => '?',
        }
    }
}

impl From<bool> for Tri {
    fn from(b: bool) -> Self {
        if b {
            Tri::True
        } else {
            Tri::False
        }
    }
}

impl fmt::Display for Tri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tri::False => f.write_str("0"),
            Tri::True => f.write_str("1"),
            Tri::Unknown => f.write_str("unknown"),
        }
    }
}

/// The verifier's verdict on one tuple. A known label always carries its error probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Label {
    Unknown,
    Known { value: bool, err: f64 },
}

impl Label {
    pub fn known(value: bool, err: f64) -> Self {
        Label::Known { value, err }
    }

    pub fn tri(self) -> Tri {
        match self {
            Label::Unknown => Tri::Unknown,
            Label::Known { value, .. } => value.into(),
        }
    }

    pub fn value(self) -> Option<bool> {
        match self {
            Label::Unknown => None,
            Label::Known { value, .. } => Some(value),
        }
    }

    pub fn err(self) -> Option<f64> {
        match self {
            Label::Unknown => None,
            Label::Known { err, .. } => Some(err),
        }
    }

    /// Log of the probability that the verifier emitted this label when the
    /// truth is `actual`. Unknown labels contribute nothing.
    pub fn log_likelihood(self, actual: bool) -> LogProb {
        match self {
            Label::Unknown => LogProb::ONE,
            Label::Known { value, err } if value == actual => LogProb::from_prob(1.0 - err),
            Label::Known { err, .. } => LogProb::from_prob(err),
        }
    }
}

/// Natural-log probability. `f64::NEG_INFINITY` is the sentinel for probability zero.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct LogProb(f64);

impl LogProb {
    pub const ZERO: LogProb = LogProb(f64::NEG_INFINITY);
    pub const ONE: LogProb = LogProb(0.0);

    pub fn from_prob(p: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p), "probability {p} out of range");
        if p <= 0.0 {
            LogProb::ZERO
        } else {
            LogProb(p.ln().min(0.0))
        }
    }

    pub fn from_ln(ln: f64) -> Self {
        if ln == f64::NEG_INFINITY || ln.is_nan() {
            LogProb::ZERO
        } else {
            LogProb(ln.min(0.0))
        }
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn prob(self) -> f64 {
        self.0.exp()
    }

    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn mul(self, other: LogProb) -> LogProb {
        LogProb(self.0 + other.0)
    }

    /// `self > other` beyond [`LOG_TOLERANCE`].
    pub fn exceeds(self, other: LogProb) -> bool {
        if self.is_zero() {
            return false;
        }
        other.is_zero() || self.0 > other.0 + LOG_TOLERANCE
    }

    pub fn approx_eq(self, other: LogProb) -> bool {
        !self.exceeds(other) && !other.exceeds(self)
    }
}

impl fmt::Display for LogProb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            f.write_str("-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Column types supported by the loaders and the query engine.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColumnType {
    String,
    Int,
    Float,
    Date,
}

impl ColumnType {
    pub fn name(self) -> &'static str {
        match self {
            ColumnType::String => "string",
            ColumnType::Int => "int",
            ColumnType::Float => "float",
            ColumnType::Date => "date",
        }
    }

    pub fn parse_name(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "string" | "str" | "text" => Some(ColumnType::String),
            "int" | "integer" => Some(ColumnType::Int),
            "float" | "real" | "double" => Some(ColumnType::Float),
            "date" => Some(ColumnType::Date),
            _ => None,
        }
    }

    pub fn is_numeric(self) -> bool {
        matches!(self, ColumnType::Int | ColumnType::Float)
    }
}

/// A typed cell.
#[derive(Clone, Debug)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    Date(NaiveDate),
}

impl Value {
    pub fn column_type(&self) -> ColumnType {
        match self {
            Value::Str(_) => ColumnType::String,
            Value::Int(_) => ColumnType::Int,
            Value::Float(_) => ColumnType::Float,
            Value::Date(_) => ColumnType::Date,
        }
    }

    /// Parses a raw cell according to `ty`.
    pub fn parse(raw: &str, ty: ColumnType) -> Option<Value> {
        let raw = raw.trim();
        match ty {
            ColumnType::String => Some(Value::Str(raw.to_string())),
            ColumnType::Int => raw.parse().ok().map(Value::Int),
            ColumnType::Float => raw.parse().ok().map(Value::Float),
            ColumnType::Date => parse_date(raw).map(Value::Date),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(x) => Some(*x),
            _ => None,
        }
    }

    pub fn year(&self) -> Option<i64> {
        match self {
            Value::Date(d) => Some(d.year() as i64),
            _ => None,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Int(_) | Value::Float(_) => 0,
            Value::Str(_) => 1,
            Value::Date(_) => 2,
        }
    }
}

/// Accepts `YYYY-MM-DD` and `DD.MM.YYYY`.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(raw, "%d.%m.%Y"))
        .ok()
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::Date(a), Value::Date(b)) => a.cmp(b),
            (a, b) if a.rank() == 0 && b.rank() == 0 => {
                let (x, y) = (a.as_f64().unwrap_or(0.0), b.as_f64().unwrap_or(0.0));
                x.total_cmp(&y)
            }
            (a, b) => a.rank().cmp(&b.rank()),
        }
    }
}

impl std::hash::Hash for Value {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        match self {
            Value::Str(s) => s.hash(state),
            // ints and floats compare numerically, so they must hash alike
            Value::Int(i) => (*i as f64).to_bits().hash(state),
            Value::Float(x) => x.to_bits().hash(state),
            Value::Date(d) => d.hash(state),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Str(s) => f.write_str(s),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x}"),
            Value::Date(d) => write!(f, "{}", d.format("%d.%m.%Y")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column {
            name: name.into(),
            ty,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub columns: Vec<Column>,
    /// Index of the key column, when the relation has one.
    pub key: Option<usize>,
}

impl Schema {
    pub fn new(columns: Vec<Column>) -> Self {
        Schema { columns, key: None }
    }

    pub fn with_key(mut self, key: &str) -> Option<Self> {
        self.key = Some(self.index_of(key)?);
        Some(self)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns
            .iter()
            .position(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn arity(&self) -> usize {
        self.columns.len()
    }
}

/// A relation before ingestion: no tuple ids yet.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationData {
    pub name: String,
    pub schema: Schema,
    pub rows: Vec<Vec<Value>>,
}

impl RelationData {
    pub fn new(name: impl Into<String>, schema: Schema, rows: Vec<Vec<Value>>) -> Self {
        RelationData {
            name: name.into(),
            schema,
            rows,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tuple {
    pub id: TupleId,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Relation {
    pub name: String,
    pub schema: Schema,
    pub tuples: Vec<Tuple>,
}

/// Relations with database-wide tuple ids.
#[derive(Clone, Debug, Default)]
pub struct Database {
    relations: Vec<Relation>,
    // tuple id - 1 -> (relation index, row index)
    locator: Vec<Option<(usize, usize)>>,
}

impl Database {
    /// Ingests relations in order, assigning ids 1, 2, ... in file order.
    pub fn new(relations: Vec<RelationData>) -> Result<Self, DesError> {
        let mut out = Vec::with_capacity(relations.len());
        let mut next = 1u32;
        for data in relations {
            if out.iter().any(|r: &Relation| r.name.eq_ignore_ascii_case(&data.name)) {
                return Err(DesError::DuplicateRelation(data.name));
            }
            let mut tuples = Vec::with_capacity(data.rows.len());
            for (row_idx, values) in data.rows.into_iter().enumerate() {
                check_row(&data.name, &data.schema, row_idx + 1, &values)?;
                tuples.push(Tuple {
                    id: TupleId(next),
                    values,
                });
                next += 1;
            }
            out.push(Relation {
                name: data.name,
                schema: data.schema,
                tuples,
            });
        }
        Ok(Self::from_relations(out))
    }

    fn from_relations(relations: Vec<Relation>) -> Self {
        let max_id = relations
            .iter()
            .flat_map(|r| r.tuples.iter().map(|t| t.id.0))
            .max()
            .unwrap_or(0);
        let mut locator = vec![None; max_id as usize];
        for (ri, rel) in relations.iter().enumerate() {
            for (ti, t) in rel.tuples.iter().enumerate() {
                locator[t.id.0 as usize - 1] = Some((ri, ti));
            }
        }
        Database { relations, locator }
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Option<&Relation> {
        self.relations
            .iter()
            .find(|r| r.name.eq_ignore_ascii_case(name))
    }

    pub fn tuple(&self, id: TupleId) -> Option<(&Relation, &Tuple)> {
        let idx = (id.0 as usize).checked_sub(1)?;
        let (ri, ti) = (*self.locator.get(idx)?)?;
        let rel = &self.relations[ri];
        Some((rel, &rel.tuples[ti]))
    }

    pub fn contains(&self, id: TupleId) -> bool {
        self.tuple(id).is_some()
    }

    pub fn tuple_ids(&self) -> impl Iterator<Item = TupleId> + '_ {
        self.relations
            .iter()
            .flat_map(|r| r.tuples.iter().map(|t| t.id))
    }

    pub fn len(&self) -> usize {
        self.relations.iter().map(|r| r.tuples.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Upper bound (exclusive) of tuple-id indices, for dense per-tuple tables.
    pub fn id_capacity(&self) -> usize {
        self.locator.len()
    }

    /// Same relations and ids, keeping only the tuples in `keep`.
    pub fn restrict(&self, keep: &BTreeSet<TupleId>) -> Database {
        let relations = self
            .relations
            .iter()
            .map(|r| Relation {
                name: r.name.clone(),
                schema: r.schema.clone(),
                tuples: r
                    .tuples
                    .iter()
                    .filter(|t| keep.contains(&t.id))
                    .cloned()
                    .collect(),
            })
            .collect();
        Self::from_relations(relations)
    }
}

fn check_row(relation: &str, schema: &Schema, row: usize, values: &[Value]) -> Result<(), DesError> {
    if values.len() != schema.arity() {
        return Err(DesError::Arity {
            relation: relation.to_string(),
            row,
            expected: schema.arity(),
            found: values.len(),
        });
    }
    for (col, v) in schema.columns.iter().zip(values) {
        let ok = v.column_type() == col.ty
            || (col.ty == ColumnType::Float && v.column_type() == ColumnType::Int);
        if !ok {
            return Err(DesError::CellType {
                relation: relation.to_string(),
                column: col.name.clone(),
                expected: col.ty.name().to_string(),
                found: v.column_type().name().to_string(),
            });
        }
    }
    Ok(())
}

/// A possible world: a Boolean truth assignment to tuples.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct World(BTreeMap<TupleId, bool>);

impl World {
    pub fn new() -> Self {
        World(BTreeMap::new())
    }

    /// A total world over every tuple of `db`.
    pub fn total(db: &Database, mut f: impl FnMut(TupleId) -> bool) -> Self {
        World(db.tuple_ids().map(|id| (id, f(id))).collect())
    }

    pub fn get(&self, id: TupleId) -> Option<bool> {
        self.0.get(&id).copied()
    }

    pub fn set(&mut self, id: TupleId, value: bool) {
        self.0.insert(id, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (TupleId, bool)> + '_ {
        self.0.iter().map(|(k, v)| (*k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_total_over(&self, db: &Database) -> bool {
        db.tuple_ids().all(|id| self.0.contains_key(&id))
    }

    /// Renders as `v1=1 v5=0 ...`.
    pub fn render(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("v{}={}", k.0, u8::from(*v)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl FromIterator<(TupleId, bool)> for World {
    fn from_iter<I: IntoIterator<Item = (TupleId, bool)>>(iter: I) -> Self {
        World(iter.into_iter().collect())
    }
}

/// A database with error estimation whose tuples are annotated by their ids.
#[derive(Clone, Debug)]
pub struct AnnotatedDes {
    db: Arc<Database>,
    // indexed by tuple id - 1
    labels: Vec<Label>,
}

impl AnnotatedDes {
    /// A DES in which no tuple is labeled.
    pub fn unlabeled(db: Arc<Database>) -> Self {
        let labels = vec![Label::Unknown; db.id_capacity()];
        AnnotatedDes { db, labels }
    }

    pub fn db(&self) -> &Database {
        &self.db
    }

    pub fn db_arc(&self) -> &Arc<Database> {
        &self.db
    }

    pub fn label(&self, id: TupleId) -> Label {
        (id.0 as usize)
            .checked_sub(1)
            .and_then(|i| self.labels.get(i))
            .copied()
            .unwrap_or(Label::Unknown)
    }

    /// Labels in tuple-id order.
    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn tri(&self, id: TupleId) -> Tri {
        self.label(id).tri()
    }

    pub fn err(&self, id: TupleId) -> Option<f64> {
        self.label(id).err()
    }

    pub fn set_label(&mut self, id: TupleId, label: Label) -> Result<(), DesError> {
        if !self.db.contains(id) {
            return Err(DesError::UnknownTuple(id));
        }
        if let Label::Known { err, .. } = label {
            check_err(id, err)?;
        }
        self.labels[id.0 as usize - 1] = label;
        Ok(())
    }

    /// Copy with the error probability of one labeled tuple replaced.
    pub fn with_err(&self, id: TupleId, err: f64) -> Result<Self, DesError> {
        let value = self
            .label(id)
            .value()
            .ok_or(DesError::ErrOnUnlabeled(id))?;
        let mut out = self.clone();
        out.set_label(id, Label::known(value, err))?;
        Ok(out)
    }

    pub fn labeled_ids(&self) -> impl Iterator<Item = TupleId> + '_ {
        self.db.tuple_ids().filter(|id| self.tri(*id) != Tri::Unknown)
    }

    /// Log of the probability of observing the labels of `subset` when `world` is the truth.
    pub fn labeling_probability<I>(&self, world: &World, subset: I) -> Result<LogProb, DesError>
    where
        I: IntoIterator<Item = TupleId>,
    {
        let mut acc = LogProb::ONE;
        for id in subset {
            if !self.db.contains(id) {
                return Err(DesError::UnknownTuple(id));
            }
            let label = self.label(id);
            if label == Label::Unknown {
                continue;
            }
            let actual = world.get(id).ok_or(DesError::WorldMissing(id))?;
            acc = acc.mul(label.log_likelihood(actual));
        }
        Ok(acc)
    }
}

fn check_err(id: TupleId, err: f64) -> Result<(), DesError> {
    if !(0.0..=0.5).contains(&err) {
        return Err(DesError::ErrOutOfRange { tuple: id, err });
    }
    Ok(())
}

/// Builds an annotated DES from sparse label and error-probability maps.
///
/// Tuples absent from `labels` (or mapped to [`Tri::Unknown`]) are unlabeled.
pub fn build_annotated_des(
    db: Arc<Database>,
    labels: &BTreeMap<TupleId, Tri>,
    errs: &BTreeMap<TupleId, f64>,
) -> Result<AnnotatedDes, DesError> {
    let mut des = AnnotatedDes::unlabeled(db);
    for (&id, &err) in errs {
        if !des.db.contains(id) {
            return Err(DesError::UnknownTuple(id));
        }
        match labels.get(&id) {
            None | Some(Tri::Unknown) => return Err(DesError::ErrOnUnlabeled(id)),
            Some(_) => check_err(id, err)?,
        }
    }
    for (&id, &tri) in labels {
        if !des.db.contains(id) {
            return Err(DesError::UnknownTuple(id));
        }
        let Some(value) = tri.as_bool() else { continue };
        let err = *errs.get(&id).ok_or(DesError::MissingErr(id))?;
        des.set_label(id, Label::known(value, err))?;
    }
    Ok(des)
}

/// Rewrites a keyed relation into `(ID, Attribute, Value)` triplets, one per non-key cell.
pub fn to_cell_level(relation: &RelationData) -> Result<RelationData, DesError> {
    let key = relation
        .schema
        .key
        .ok_or_else(|| DesError::MissingKey(relation.name.clone()))?;
    let key_ty = relation.schema.columns[key].ty;
    let schema = Schema {
        columns: vec![
            Column::new("ID", key_ty),
            Column::new("Attribute", ColumnType::String),
            Column::new("Value", ColumnType::String),
        ],
        key: None,
    };
    let mut rows = Vec::new();
    for row in &relation.rows {
        for (i, col) in relation.schema.columns.iter().enumerate() {
            if i == key {
                continue;
            }
            rows.push(vec![
                row[key].clone(),
                Value::Str(col.name.clone()),
                Value::Str(row[i].to_string()),
            ]);
        }
    }
    Ok(RelationData::new(format!("{}C", relation.name), schema, rows))
}
