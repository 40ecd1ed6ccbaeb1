//! Query-cardinality tensors over an in-memory table.
//!
//! Each mode is one predicate `column op value` with an ordered list of
//! values; a cell holds the number of rows (or of distinct values of one
//! column) matching the combination. Connectors apply left to right, so
//! `AND, OR` over three predicates means `(p1 AND p2) OR p3`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::{min_max_scale, Scaling};
use crate::error::{Error, Result};
use crate::seeded_rng;
use crate::tensor::{DenseTensor, Shape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSpec {
    pub rows: usize,
    pub seed: u64,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self { rows: 200, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Int(Vec<i64>),
    Str(Vec<String>),
}

impl Column {
    fn type_name(&self) -> &'static str {
        match self {
            Column::Int(_) => "integer",
            Column::Str(_) => "string",
        }
    }
}

/// A synthetic people table: `person_id`, `birth_year`, `height_cm`, `kids`,
/// `city` and a surname code column `surname_pcode` (letter + three digits).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    columns: Vec<(String, Column)>,
}

pub const CITIES: [&str; 8] = ["Aarhus", "Bergen", "Cork", "Delft", "Espoo", "Faro", "Graz", "Hull"];
const PCODE_LETTERS: &[u8] = b"ABCDEGHKLMPRST";

impl Table {
    pub fn generate(spec: &TableSpec) -> Result<Self> {
        if spec.rows == 0 {
            return Err(Error::Empty("table rows"));
        }
        let mut rng = seeded_rng(spec.seed);
        let n = spec.rows;
        let person_id = (1..=n as i64).collect();
        let birth_year = (0..n).map(|_| rng.random_range(1920..=2010)).collect();
        let height_cm = (0..n).map(|_| rng.random_range(150..=200)).collect();
        let kids = (0..n).map(|_| rng.random_range(0..=4)).collect();
        let city = (0..n)
            .map(|_| CITIES[rng.random_range(0..CITIES.len())].to_string())
            .collect();
        let surname_pcode = (0..n)
            .map(|_| {
                let letter = PCODE_LETTERS[rng.random_range(0..PCODE_LETTERS.len())] as char;
                format!("{letter}{}{}{}", rng.random_range(0..4), rng.random_range(0..4), rng.random_range(0..10))
            })
            .collect();
        Ok(Self {
            rows: n,
            columns: vec![
                ("person_id".into(), Column::Int(person_id)),
                ("birth_year".into(), Column::Int(birth_year)),
                ("height_cm".into(), Column::Int(height_cm)),
                ("kids".into(), Column::Int(kids)),
                ("city".into(), Column::Str(city)),
                ("surname_pcode".into(), Column::Str(surname_pcode)),
            ],
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> + '_ {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown column {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    /// String starts with the value.
    Prefix,
}

impl CompareOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
            CompareOp::Eq => "=",
            CompareOp::Ne => "<>",
            CompareOp::Prefix => "LIKE",
        }
    }

    fn accepts_int(self) -> bool {
        self != CompareOp::Prefix
    }

    fn accepts_str(self) -> bool {
        matches!(self, CompareOp::Eq | CompareOp::Ne | CompareOp::Prefix)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Int(i64),
    Str(String),
}

/// One mode of the query tensor: the predicate with each listed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Predicate {
    pub column: String,
    pub op: CompareOp,
    pub values: Vec<Literal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Connector {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryTemplate {
    #[serde(default)]
    pub table: TableSpec,
    pub predicates: Vec<Predicate>,
    pub connectors: Vec<Connector>,
    /// Count distinct values of this column instead of rows.
    #[serde(default)]
    pub distinct: Option<String>,
}

impl QueryTemplate {
    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.predicates.iter().map(|p| p.values.len()).collect())
    }

    /// The boolean expression with explicit left-to-right grouping.
    pub fn expression(&self) -> String {
        let mut expr = String::new();
        for (n, p) in self.predicates.iter().enumerate() {
            let term = format!("{} {} ?{}", p.column, p.op.symbol(), n + 1);
            if n == 0 {
                expr = term;
            } else {
                let c = match self.connectors[n - 1] {
                    Connector::And => "AND",
                    Connector::Or => "OR",
                };
                expr = if n == 1 {
                    format!("{expr} {c} {term}")
                } else {
                    format!("({expr}) {c} {term}")
                };
            }
        }
        expr
    }

    fn validate(&self, table: &Table) -> Result<()> {
        if self.predicates.is_empty() {
            return Err(Error::Empty("query predicates"));
        }
        if self.connectors.len() + 1 != self.predicates.len() {
            return Err(Error::InvalidArgument(format!(
                "{} predicates need {} connectors, got {}",
                self.predicates.len(),
                self.predicates.len() - 1,
                self.connectors.len()
            )));
        }
        for p in &self.predicates {
            let col = table.column(&p.column)?;
            if p.values.is_empty() {
                return Err(Error::Empty("predicate values"));
            }
            let ok = match col {
                Column::Int(_) => p.op.accepts_int() && p.values.iter().all(|v| matches!(v, Literal::Int(_))),
                Column::Str(_) => p.op.accepts_str() && p.values.iter().all(|v| matches!(v, Literal::Str(_))),
            };
            if !ok {
                return Err(Error::TypeMismatch(format!(
                    "predicate {} {} {:?} does not fit the {} column",
                    p.column,
                    p.op.symbol(),
                    p.values,
                    col.type_name()
                )));
            }
            if p.values.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "values of predicate on {} must be strictly increasing",
                    p.column
                )));
            }
        }
        if let Some(d) = &self.distinct {
            table.column(d)?;
        }
        Ok(())
    }
}

/// Rows as a packed bit set.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn from_fn(n: usize, f: impl Fn(usize) -> bool) -> Self {
        let mut words = vec![0u64; n.div_ceil(64)];
        for r in 0..n {
            if f(r) {
                words[r / 64] |= 1 << (r % 64);
            }
        }
        Bits(words)
    }

    fn combine(&self, other: &Bits, c: Connector) -> Bits {
        Bits(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| match c {
                    Connector::And => a & b,
                    Connector::Or => a | b,
                })
                .collect(),
        )
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(k * 64 + b)
                }
            })
        })
    }
}

fn predicate_bits(col: &Column, op: CompareOp, value: &Literal, rows: usize) -> Bits {
    match (col, value) {
        (Column::Int(c), Literal::Int(v)) => Bits::from_fn(rows, |r| {
            let x = c[r];
            match op {
                CompareOp::Lt => x < *v,
                CompareOp::Le => x <= *v,
                CompareOp::Gt => x > *v,
                CompareOp::Ge => x >= *v,
                CompareOp::Eq => x == *v,
                CompareOp::Ne => x != *v,
                CompareOp::Prefix => unreachable!("validated"),
            }
        }),
        (Column::Str(c), Literal::Str(v)) => Bits::from_fn(rows, |r| {
            let x = &c[r];
            match op {
                CompareOp::Eq => x == v,
                CompareOp::Ne => x != v,
                CompareOp::Prefix => x.starts_with(v.as_str()),
                _ => unreachable!("validated"),
            }
        }),
        _ => unreachable!("validated"),
    }
}

/// Dense ids of the distinct values of a column.
fn value_ids(col: &Column) -> (Vec<usize>, usize) {
    match col {
        Column::Int(c) => dictionary(c.iter()),
        Column::Str(c) => dictionary(c.iter()),
    }
}

fn dictionary<T: std::hash::Hash + Eq>(values: impl Iterator<Item = T>) -> (Vec<usize>, usize) {
    let mut seen = HashMap::new();
    let ids = values
        .map(|v| {
            let next = seen.len();
            *seen.entry(v).or_insert(next)
        })
        .collect();
    (ids, seen.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryTensor {
    /// Matching-row or distinct-value counts.
    pub raw: DenseTensor,
    /// `raw` min-max scaled onto `[0, 1]`.
    pub scaled: DenseTensor,
    pub scaling: Scaling,
    pub expression: String,
}

pub fn generate_query_tensor(template: &QueryTemplate) -> Result<QueryTensor> {
    let table = Table::generate(&template.table)?;
    evaluate_template(&table, template)
}

/// Counts for every combination of predicate values on an existing table.
pub fn evaluate_template(table: &Table, template: &QueryTemplate) -> Result<QueryTensor> {
    template.validate(table)?;
    let shape = template.shape()?;
    let n = table.rows();
    let bits: Vec<Vec<Bits>> = template
        .predicates
        .iter()
        .map(|p| {
            let col = table.column(&p.column).expect("validated");
            p.values.iter().map(|v| predicate_bits(col, p.op, v, n)).collect()
        })
        .collect();
    let distinct = match &template.distinct {
        Some(name) => Some(value_ids(table.column(name)?)),
        None => None,
    };
    let mut stamp = vec![usize::MAX; distinct.as_ref().map_or(0, |d| d.1)];
    let mut values = Vec::with_capacity(shape.numel());
    let mut idx = vec![0usize; shape.order()];
    // Prefix accumulators: acc[k] combines predicates 0..=k at idx[..=k].
    let mut acc: Vec<Bits> = Vec::with_capacity(shape.order());
    for flat in 0..shape.numel() {
        shape.unravel_into(flat, &mut idx);
        let keep = if flat == 0 {
            0
        } else {
            // Modes before the first changed one keep their accumulators.
            let prev = shape.unravel(flat - 1);
            prev.iter().zip(&idx).take_while(|(a, b)| a == b).count()
        };
        acc.truncate(keep);
        for k in keep..shape.order() {
            let b = &bits[k][idx[k]];
            let next = match k {
                0 => b.clone(),
                _ => acc[k - 1].combine(b, template.connectors[k - 1]),
            };
            acc.push(next);
        }
        let matched = acc.last().expect("order >= 1");
        let v = match &distinct {
            None => matched.count(),
            Some((ids, _)) => {
                let mut c = 0;
                for r in matched.rows() {
                    let id = ids[r];
                    if stamp[id] != flat {
                        stamp[id] = flat;
                        c += 1;
                    }
                }
                c
            }
        };
        values.push(v as f64);
    }
    let raw = DenseTensor::new(shape, values)?;
    let (scaled, scaling) = min_max_scale(&raw);
    Ok(QueryTensor {
        raw,
        scaled,
        scaling,
        expression: template.expression(),
    })
}

/// A random well-typed template with `dims[n]` values on mode `n`.
pub fn random_template(dims: &[usize], table: &TableSpec, distinct: Option<String>, seed: u64) -> Result<QueryTemplate> {
    let t = Table::generate(table)?;
    let mut rng = seeded_rng(seed);
    let names: Vec<String> = t.column_names().map(str::to_string).collect();
    let mut predicates = Vec::with_capacity(dims.len());
    for &d in dims {
        if d == 0 {
            return Err(Error::InvalidShape("query modes need at least one value".into()));
        }
        let name = names[rng.random_range(0..names.len())].clone();
        let pred = match t.column(&name)? {
            Column::Int(c) => {
                let ops = [CompareOp::Lt, CompareOp::Le, CompareOp::Gt, CompareOp::Ge, CompareOp::Eq, CompareOp::Ne];
                let op = ops[rng.random_range(0..ops.len())];
                let lo = *c.iter().min().expect("non-empty");
                let hi = *c.iter().max().expect("non-empty");
                // Spread d distinct thresholds across (a little beyond) the range.
                let span = (hi - lo + 2).max(d as i64);
                let mut vals: Vec<i64> = Vec::with_capacity(d);
                while vals.len() < d {
                    let v = lo - 1 + rng.random_range(0..=span);
                    if !vals.contains(&v) {
                        vals.push(v);
                    }
                }
                vals.sort_unstable();
                Predicate {
                    column: name,
                    op,
                    values: vals.into_iter().map(Literal::Int).collect(),
                }
            }
            Column::Str(c) => {
                let ops = [CompareOp::Eq, CompareOp::Ne, CompareOp::Prefix];
                let op = ops[rng.random_range(0..ops.len())];
                let mut pool: Vec<String> = c
                    .iter()
                    .map(|s| if op == CompareOp::Prefix { s[..1].to_string() } else { s.clone() })
                    .collect();
                pool.push("Z".into());
                pool.sort();
                pool.dedup();
                let mut vals: Vec<String> = Vec::with_capacity(d);
                while vals.len() < d.min(pool.len()) {
                    let v = pool[rng.random_range(0..pool.len())].clone();
                    if !vals.contains(&v) {
                        vals.push(v);
                    }
                }
                // Tiny pools: pad with prefixes that match nothing.
                let mut pad = 0;
                while vals.len() < d {
                    vals.push(format!("~{pad}"));
                    pad += 1;
                }
                vals.sort();
                Predicate {
                    column: name,
                    op,
                    values: vals.into_iter().map(Literal::Str).collect(),
                }
            }
        };
        predicates.push(pred);
    }
    let connectors = (1..dims.len())
        .map(|_| if rng.random::<bool>() { Connector::And } else { Connector::Or })
        .collect();
    Ok(QueryTemplate {
        table: table.clone(),
        predicates,
        connectors,
        distinct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int_pred(column: &str, op: CompareOp, values: &[i64]) -> Predicate {
        Predicate {
            column: column.into(),
            op,
            values: values.iter().map(|&v| Literal::Int(v)).collect(),
        }
    }

    #[test]
    fn tautology_under_or_counts_every_row() {
        let tpl = QueryTemplate {
            table: TableSpec { rows: 150, seed: 2 },
            predicates: vec![
                int_pred("person_id", CompareOp::Ge, &[1]),
                int_pred("birth_year", CompareOp::Lt, &[1950, 1980]),
            ],
            connectors: vec![Connector::Or],
            distinct: None,
        };
        let q = generate_query_tensor(&tpl).unwrap();
        assert!(q.raw.values().iter().all(|&v| v == 150.0));
    }

    #[test]
    fn empty_conjunction_is_zero() {
        let tpl = QueryTemplate {
            table: TableSpec::default(),
            predicates: vec![
                int_pred("birth_year", CompareOp::Lt, &[1900, 2000]),
                int_pred("kids", CompareOp::Ge, &[0, 2]),
            ],
            connectors: vec![Connector::And],
            distinct: None,
        };
        let q = generate_query_tensor(&tpl).unwrap();
        assert_eq!(q.raw.get(&[0, 0]).unwrap(), 0.0);
        assert_eq!(q.raw.get(&[0, 1]).unwrap(), 0.0);
        assert!(q.raw.get(&[1, 0]).unwrap() > 0.0);
        assert_eq!(q.scaled.min(), 0.0);
        assert_eq!(q.scaled.max(), 1.0);
        for (r, s) in q.raw.values().iter().zip(q.scaled.values()) {
            assert!((q.scaling.invert(*s) - r).abs() < 1e-9);
        }
    }

    #[test]
    fn expression_groups_left_to_right() {
        let tpl = QueryTemplate {
            table: TableSpec::default(),
            predicates: vec![
                int_pred("kids", CompareOp::Le, &[1]),
                int_pred("height_cm", CompareOp::Gt, &[170]),
                int_pred("birth_year", CompareOp::Ge, &[1990]),
            ],
            connectors: vec![Connector::And, Connector::Or],
            distinct: None,
        };
        assert_eq!(
            tpl.expression(),
            "(kids <= ?1 AND height_cm > ?2) OR birth_year >= ?3"
        );
    }

    #[test]
    fn type_errors() {
        let mut tpl = QueryTemplate {
            table: TableSpec::default(),
            predicates: vec![Predicate {
                column: "city".into(),
                op: CompareOp::Lt,
                values: vec![Literal::Str("Cork".into())],
            }],
            connectors: vec![],
            distinct: None,
        };
        assert!(matches!(generate_query_tensor(&tpl), Err(Error::TypeMismatch(_))));
        tpl.predicates[0] = int_pred("city", CompareOp::Eq, &[3]);
        assert!(matches!(generate_query_tensor(&tpl), Err(Error::TypeMismatch(_))));
        tpl.predicates[0] = int_pred("kids", CompareOp::Prefix, &[3]);
        assert!(matches!(generate_query_tensor(&tpl), Err(Error::TypeMismatch(_))));
        tpl.predicates[0] = int_pred("kids", CompareOp::Le, &[3, 1]);
        assert!(generate_query_tensor(&tpl).is_err());
        tpl.predicates[0] = int_pred("kids", CompareOp::Le, &[1, 3]);
        tpl.connectors = vec![Connector::And];
        assert!(generate_query_tensor(&tpl).is_err());
    }

    #[test]
    fn template_serde() {
        let text = r#"{"predicates":[{"column":"kids","op":"le","values":[1,2]},
            {"column":"city","op":"eq","values":["Bergen","Cork"]}],
            "connectors":["AND"],"distinct":"surname_pcode"}"#;
        let tpl: QueryTemplate = serde_json::from_str(text).unwrap();
        assert_eq!(tpl.shape().unwrap().dims(), &[2, 2]);
        assert_eq!(tpl.predicates[1].values[0], Literal::Str("Bergen".into()));
        assert!(serde_json::from_str::<QueryTemplate>(r#"{"predicates":[],"connectors":[],"extra":1}"#).is_err());
    }
}
