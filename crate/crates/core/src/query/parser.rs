use crate::error::QueryError;
use crate::model::{parse_date, ColumnType, Database, Value};

use super::{Atom, CmpOp, ColumnRef, Operand, Predicate, QueryPlan, Scan};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Semi,
    Star,
    Op(CmpOp),
    Eof,
}

struct Lexed {
    tok: Tok,
    offset: usize,
}

fn syntax(text: &str, offset: usize, message: impl Into<String>) -> QueryError {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
    QueryError::Syntax {
        offset,
        line,
        column,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<Lexed>, QueryError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let tok = match c {
            b',' => Tok::Comma,
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => Tok::Dot,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b';' => Tok::Semi,
            b'*' => Tok::Star,
            b'=' => Tok::Op(CmpOp::Eq),
            b'<' => match bytes.get(i + 1) {
                Some(b'=') => {
                    i += 1;
                    Tok::Op(CmpOp::Le)
                }
                Some(b'>') => {
                    i += 1;
                    Tok::Op(CmpOp::Ne)
                }
                _ => Tok::Op(CmpOp::Lt),
            },
            b'>' => {
                if bytes.get(i + 1) == Some(&b'=') {
                    i += 1;
                    Tok::Op(CmpOp::Ge)
                } else {
                    Tok::Op(CmpOp::Gt)
                }
            }
            b'!' if bytes.get(i + 1) == Some(&b'=') => {
                i += 1;
                Tok::Op(CmpOp::Ne)
            }
            b'\'' => {
                let mut s = String::new();
                i += 1;
                loop {
                    match text[i..].chars().next() {
                        None => return Err(syntax(text, start, "unterminated string literal")),
                        Some('\'') if bytes.get(i + 1) == Some(&b'\'') => {
                            s.push('\'');
                            i += 2;
                        }
                        Some('\'') => break,
                        Some(ch) => {
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                Tok::Str(s)
            }
            b'0'..=b'9' | b'.' | b'-' => {
                i += 1;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                let s = &text[start..i];
                if s == "-" {
                    return Err(syntax(text, start, "unexpected '-'"));
                }
                out.push(Lexed {
                    tok: Tok::Num(s.to_string()),
                    offset: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' || c == b'"' => {
                if c == b'"' {
                    let end = text[i + 1..]
                        .find('"')
                        .ok_or_else(|| syntax(text, start, "unterminated quoted identifier"))?;
                    let name = text[i + 1..i + 1 + end].to_string();
                    i += end + 2;
                    out.push(Lexed {
                        tok: Tok::Ident(name),
                        offset: start,
                    });
                    continue;
                }
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Lexed {
                    tok: Tok::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(text, start, format!("unexpected character {ch:?}")));
            }
        };
        i += 1;
        out.push(Lexed { tok, offset: start });
    }
    out.push(Lexed {
        tok: Tok::Eof,
        offset: text.len(),
    });
    Ok(out)
}

const RESERVED: &[&str] = &[
    "SELECT", "DISTINCT", "FROM", "WHERE", "AND", "UNION", "AS", "ILIKE",
];

/// Raw, unresolved syntax.
enum RawOperand {
    Column(Option<String>, String),
    Year(Option<String>, String),
    Str(String),
    Num(String, usize),
}

struct RawAtom {
    lhs: RawOperand,
    op: CmpOp,
    rhs: RawOperand,
}

struct RawBlock {
    distinct: bool,
    columns: Vec<(Option<String>, String)>,
    from: Vec<(String, String, usize)>,
    atoms: Vec<RawAtom>,
}

struct Parser<'a> {
    text: &'a str,
    toks: Vec<Lexed>,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].offset
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, message: impl Into<String>) -> QueryError {
        syntax(self.text, self.offset(), message)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.err(format!("expected {kw}")))
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), QueryError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn ident(&mut self) -> Result<String, QueryError> {
        match self.peek().clone() {
            Tok::Ident(s) if !RESERVED.iter().any(|k| k.eq_ignore_ascii_case(&s)) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.err("expected identifier")),
        }
    }

    fn column(&mut self) -> Result<(Option<String>, String), QueryError> {
        let first = self.ident()?;
        if *self.peek() == Tok::Dot {
            self.bump();
            Ok((Some(first), self.ident()?))
        } else {
            Ok((None, first))
        }
    }

    fn query(&mut self) -> Result<Vec<RawBlock>, QueryError> {
        let mut blocks = vec![self.block()?];
        while self.eat_kw("UNION") {
            blocks.push(self.block()?);
        }
        if *self.peek() == Tok::Semi {
            self.bump();
        }
        if *self.peek() != Tok::Eof {
            return Err(self.err("expected end of query"));
        }
        Ok(blocks)
    }

    fn block(&mut self) -> Result<RawBlock, QueryError> {
        self.expect_kw("SELECT")?;
        let distinct = self.eat_kw("DISTINCT");
        let mut columns = vec![self.column()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            columns.push(self.column()?);
        }
        self.expect_kw("FROM")?;
        let mut from = vec![self.table_ref()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            from.push(self.table_ref()?);
        }
        let mut atoms = Vec::new();
        if self.eat_kw("WHERE") {
            atoms.push(self.atom()?);
            while self.eat_kw("AND") {
                atoms.push(self.atom()?);
            }
        }
        Ok(RawBlock {
            distinct,
            columns,
            from,
            atoms,
        })
    }

    fn table_ref(&mut self) -> Result<(String, String, usize), QueryError> {
        let offset = self.offset();
        let rel = self.ident()?;
        let alias = if self.eat_kw("AS")
            || matches!(self.peek(), Tok::Ident(s) if !RESERVED.iter().any(|k| k.eq_ignore_ascii_case(s)))
        {
            self.ident()?
        } else {
            rel.clone()
        };
        Ok((rel, alias, offset))
    }

    fn atom(&mut self) -> Result<RawAtom, QueryError> {
        let lhs = self.operand()?;
        let op = match self.peek() {
            Tok::Op(op) => {
                let op = *op;
                self.bump();
                op
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("ILIKE") => {
                self.bump();
                CmpOp::ILike
            }
            _ => return Err(self.err("expected comparison operator")),
        };
        let rhs = self.operand()?;
        Ok(RawAtom { lhs, op, rhs })
    }

    fn operand(&mut self) -> Result<RawOperand, QueryError> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Str(s) => {
                self.bump();
                Ok(RawOperand::Str(s))
            }
            Tok::Num(n) => {
                self.bump();
                Ok(RawOperand::Num(n, offset))
            }
            Tok::Ident(s) if s.eq_ignore_ascii_case("YEAR") && self.toks[self.pos + 1].tok == Tok::LParen => {
                self.bump();
                self.bump();
                let (a, c) = self.column()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(RawOperand::Year(a, c))
            }
            Tok::Ident(s)
                if s.eq_ignore_ascii_case("DATE_PART") && self.toks[self.pos + 1].tok == Tok::LParen =>
            {
                self.bump();
                self.bump();
                match self.bump() {
                    Tok::Str(part) if part.eq_ignore_ascii_case("year") => {}
                    _ => return Err(syntax(self.text, offset, "only DATE_PART('YEAR', ...) is supported")),
                }
                self.expect(Tok::Comma, "','")?;
                let (a, c) = self.column()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(RawOperand::Year(a, c))
            }
            Tok::Ident(_) => {
                let (a, c) = self.column()?;
                Ok(RawOperand::Column(a, c))
            }
            _ => Err(self.err("expected column, literal, YEAR(...) or DATE_PART(...)")),
        }
    }
}

struct Scope<'a> {
    db: &'a Database,
    scans: Vec<Scan>,
}

impl Scope<'_> {
    fn resolve(&self, alias: &Option<String>, name: &str) -> Result<ColumnRef, QueryError> {
        let mut found = None;
        for (slot, scan) in self.scans.iter().enumerate() {
            if let Some(a) = alias {
                if !a.eq_ignore_ascii_case(&scan.alias) {
                    continue;
                }
            }
            let rel = self
                .db
                .relation(&scan.relation)
                .ok_or_else(|| QueryError::UnknownRelation(scan.relation.clone()))?;
            if let Some(column) = rel.schema.index_of(name) {
                if found.is_some() {
                    return Err(QueryError::AmbiguousColumn(name.to_string()));
                }
                let col = &rel.schema.columns[column];
                found = Some(ColumnRef {
                    slot,
                    column,
                    name: col.name.clone(),
                    ty: col.ty,
                });
            }
        }
        if let Some(a) = alias {
            if !self.scans.iter().any(|s| s.alias.eq_ignore_ascii_case(a)) {
                return Err(QueryError::UnknownRelation(a.clone()));
            }
        }
        found.ok_or_else(|| {
            QueryError::UnknownColumn(match alias {
                Some(a) => format!("{a}.{name}"),
                None => name.to_string(),
            })
        })
    }

    fn operand(&self, text: &str, raw: &RawOperand) -> Result<Operand, QueryError> {
        Ok(match raw {
            RawOperand::Column(a, c) => Operand::Column(self.resolve(a, c)?),
            RawOperand::Year(a, c) => {
                let col = self.resolve(a, c)?;
                if col.ty != ColumnType::Date {
                    return Err(QueryError::TypeMismatch(format!(
                        "YEAR() applied to {} column {}",
                        col.ty.name(),
                        col.name
                    )));
                }
                Operand::Year(col)
            }
            RawOperand::Str(s) => Operand::Literal(Value::Str(s.clone())),
            RawOperand::Num(n, offset) => {
                if let Ok(i) = n.parse::<i64>() {
                    Operand::Literal(Value::Int(i))
                } else if let Ok(x) = n.parse::<f64>() {
                    Operand::Literal(Value::Float(x))
                } else {
                    return Err(syntax(text, *offset, format!("bad number {n:?}")));
                }
            }
        })
    }
}

/// Coerces string literals compared against dates and checks operand types.
fn check_atom(mut atom: Atom) -> Result<Atom, QueryError> {
    fn coerce(lit: &mut Operand, other: ColumnType) -> Result<(), QueryError> {
        if let (Operand::Literal(Value::Str(s)), ColumnType::Date) = (&*lit, other) {
            let d = parse_date(s)
                .ok_or_else(|| QueryError::TypeMismatch(format!("{s:?} is not a date")))?;
            *lit = Operand::Literal(Value::Date(d));
        }
        Ok(())
    }
    let (lt, rt) = (atom.lhs.ty(), atom.rhs.ty());
    if atom.op == CmpOp::ILike {
        let pattern_ok = matches!(atom.rhs, Operand::Literal(Value::Str(_)));
        if lt != ColumnType::String || !pattern_ok {
            return Err(QueryError::TypeMismatch(
                "ILIKE needs a string operand and a string literal pattern".into(),
            ));
        }
        return Ok(atom);
    }
    coerce(&mut atom.lhs, rt)?;
    coerce(&mut atom.rhs, lt)?;
    let (lt, rt) = (atom.lhs.ty(), atom.rhs.ty());
    if lt == rt || (lt.is_numeric() && rt.is_numeric()) {
        Ok(atom)
    } else {
        Err(QueryError::TypeMismatch(format!(
            "cannot compare {} with {}",
            lt.name(),
            rt.name()
        )))
    }
}

fn plan_block(text: &str, db: &Database, block: RawBlock) -> Result<QueryPlan, QueryError> {
    let mut scope = Scope {
        db,
        scans: Vec::new(),
    };
    for (rel, alias, _) in &block.from {
        let relation = db
            .relation(rel)
            .ok_or_else(|| QueryError::UnknownRelation(rel.clone()))?;
        if scope.scans.iter().any(|s| s.alias.eq_ignore_ascii_case(alias)) {
            return Err(QueryError::DuplicateAlias(alias.clone()));
        }
        scope.scans.push(Scan {
            relation: relation.name.clone(),
            alias: alias.clone(),
        });
    }
    let mut atoms = Vec::new();
    for raw in &block.atoms {
        let atom = Atom {
            lhs: scope.operand(text, &raw.lhs)?,
            op: raw.op,
            rhs: scope.operand(text, &raw.rhs)?,
        };
        atoms.push(check_atom(atom)?);
    }
    let columns = block
        .columns
        .iter()
        .map(|(a, c)| scope.resolve(a, c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut input = if scope.scans.len() == 1 {
        QueryPlan::Scan(scope.scans.pop().expect("one scan"))
    } else {
        QueryPlan::Product(scope.scans)
    };
    if !atoms.is_empty() {
        input = QueryPlan::Select {
            input: Box::new(input),
            predicate: Predicate { atoms },
        };
    }
    Ok(QueryPlan::Project {
        input: Box::new(input),
        columns,
        distinct: block.distinct,
    })
}

/// Parses and resolves a query against the relations of `db`.
pub fn parse_query(text: &str, db: &Database) -> Result<QueryPlan, QueryError> {
    let toks = lex(text)?;
    let mut parser = Parser { text, toks, pos: 0 };
    let blocks = parser.query()?;
    let mut plans = blocks
        .into_iter()
        .map(|b| plan_block(text, db, b))
        .collect::<Result<Vec<_>, _>>()?;
    let arity = plans[0].output_columns().len();
    for p in &plans[1..] {
        let n = p.output_columns().len();
        if n != arity {
            return Err(QueryError::UnionArity(arity, n));
        }
    }
    Ok(if plans.len() == 1 {
        plans.pop().expect("one block")
    } else {
        QueryPlan::Union(plans)
    })
}
