//! Subpopulation masks: conjunctions of simple column comparisons on raw
//! values, e.g. `married=1` or `age>=30&black=0`.

use sfe::{Dataset, SfeError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Op {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Op::Eq => a == b,
            Op::Ne => a != b,
            Op::Lt => a < b,
            Op::Le => a <= b,
            Op::Gt => a > b,
            Op::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Clause {
    column: String,
    op: Op,
    value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    clauses: Vec<Clause>,
}

// two-character operators first so `>=` is not read as `>`
const OPS: [(&str, Op); 7] = [
    ("!=", Op::Ne),
    ("<=", Op::Le),
    (">=", Op::Ge),
    ("==", Op::Eq),
    ("=", Op::Eq),
    ("<", Op::Lt),
    (">", Op::Gt),
];

impl std::str::FromStr for Mask {
    type Err = SfeError;

    fn from_str(s: &str) -> Result<Self, SfeError> {
        let mut clauses = Vec::new();
        for part in s.split('&').map(str::trim) {
            let bad = || SfeError::InvalidConfig(format!("cannot parse mask clause `{part}`"));
            let (pos, op_str, op) = OPS
                .iter()
                .filter_map(|(t, op)| part.find(t).map(|p| (p, *t, *op)))
                .min_by_key(|(p, t, _)| (*p, std::cmp::Reverse(t.len())))
                .ok_or_else(bad)?;
            let column = part[..pos].trim();
            let value: f64 = part[pos + op_str.len()..].trim().parse().map_err(|_| bad())?;
            if column.is_empty() {
                return Err(bad());
            }
            clauses.push(Clause { column: column.to_string(), op, value });
        }
        Ok(Mask { clauses })
    }
}

impl Mask {
    /// Row indices satisfying every clause.
    pub fn select(&self, d: &Dataset) -> Result<Vec<usize>, SfeError> {
        let mut cols = Vec::with_capacity(self.clauses.len());
        for c in &self.clauses {
            let values = if c.column == d.outcome_name() {
                d.y().to_vec()
            } else {
                d.x().column(d.column_index(&c.column)?).to_vec()
            };
            cols.push(values);
        }
        Ok((0..d.n())
            .filter(|&i| self.clauses.iter().zip(&cols).all(|(c, v)| c.op.holds(v[i], c.value)))
            .collect())
    }
}
