//! Interface contracts: typed parameters with ranges, invariant predicates,
//! compatibility checking and pipeline chaining.
//!
//! Contract file layout:
//!
//! ```json
//! {"inputs":  [{"name":"x","type":"integer","required":true,"range":{"min":0,"max":10}}],
//!  "outputs": [{"name":"mode","type":"enum","required":true,"values":["on","off"]}],
//!  "invariants": [["and", ["<=","x","y"], ["not", ["=","mode","off"]]]]}
//! ```
//!
//! In a comparison, a string operand that names a declared parameter is a
//! reference; any other string is a literal typed by the opposite operand.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digests::Document;
use crate::encoding::{b64_decode, b64_encode};

pub const MAX_PREDICATE_DEPTH: usize = 16;
const DECIMAL_SCALE: u32 = 12;
const DECIMAL_MAX_DIGITS: usize = 26;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("malformed contract at {location}: {reason}")]
    MalformedContract { location: String, reason: String },
    #[error("ill-typed predicate at {location}: {reason}")]
    IllTypedPredicate { location: String, reason: String },
    #[error("unknown parameter `{name}` referenced at {location}")]
    UnknownParameterReference { location: String, name: String },
    #[error("no binding for parameter `{0}`")]
    MissingBinding(String),
    #[error("binding for `{name}` has the wrong type: {reason}")]
    TypeError { name: String, reason: String },
}

impl ContractError {
    pub fn variant(&self) -> &'static str {
        match self {
            ContractError::MalformedContract { .. } => "MalformedContract",
            ContractError::IllTypedPredicate { .. } => "IllTypedPredicate",
            ContractError::UnknownParameterReference { .. } => "UnknownParameterReference",
            ContractError::MissingBinding(_) => "MissingBinding",
            ContractError::TypeError { .. } => "TypeError",
        }
    }
}

fn malformed(location: &str, reason: impl Into<String>) -> ContractError {
    ContractError::MalformedContract { location: location.to_string(), reason: reason.into() }
}

fn ill_typed(location: &str, reason: impl Into<String>) -> ContractError {
    ContractError::IllTypedPredicate { location: location.to_string(), reason: reason.into() }
}

/// Exact decimal with at most 12 fractional digits. Compares by value and
/// renders exactly as written.
#[derive(Debug, Clone)]
pub struct Decimal {
    text: String,
    units: i128,
}

impl Decimal {
    pub fn as_str(&self) -> &str {
        &self.text
    }
}

impl FromStr for Decimal {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| format!("`{s}` is not a decimal: {why}");
        let (negative, body) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("missing or invalid integer part"));
        }
        if body.contains('.') && frac_part.is_empty() {
            return Err(bad("empty fraction"));
        }
        if !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("invalid fraction"));
        }
        if frac_part.len() > DECIMAL_SCALE as usize {
            return Err(bad("more than 12 fractional digits"));
        }
        if int_part.len() + frac_part.len() > DECIMAL_MAX_DIGITS {
            return Err(bad("too many digits"));
        }
        let mut units: i128 = format!("{int_part}{frac_part}").parse().map_err(|_| bad("overflow"))?;
        units *= 10i128.pow(DECIMAL_SCALE - frac_part.len() as u32);
        if negative {
            units = -units;
        }
        Ok(Decimal { text: s.to_string(), units })
    }
}

impl PartialEq for Decimal {
    fn eq(&self, other: &Self) -> bool {
        self.units == other.units
    }
}

impl Eq for Decimal {}

impl PartialOrd for Decimal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Decimal {
    fn cmp(&self, other: &Self) -> Ordering {
        self.units.cmp(&other.units)
    }
}

impl fmt::Display for Decimal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Semantic type tag, ignoring ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemKind {
    Integer,
    Decimal,
    Text,
    Boolean,
    Enum,
    Binary,
}

impl SemKind {
    fn ordered(self) -> bool {
        matches!(self, SemKind::Integer | SemKind::Decimal)
    }

    fn name(self) -> &'static str {
        match self {
            SemKind::Integer => "integer",
            SemKind::Decimal => "decimal",
            SemKind::Text => "text",
            SemKind::Boolean => "boolean",
            SemKind::Enum => "enum",
            SemKind::Binary => "binary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamType {
    Integer {
        range: Option<(i64, i64)>,
    },
    Decimal {
        range: Option<(Decimal, Decimal)>,
    },
    Text {
        max_length: Option<u64>,
    },
    Boolean,
    /// Value set, in declaration order.
    Enum {
        values: Vec<String>,
    },
    Binary {
        max_length: Option<u64>,
    },
}

impl ParamType {
    pub fn kind(&self) -> SemKind {
        match self {
            ParamType::Integer { .. } => SemKind::Integer,
            ParamType::Decimal { .. } => SemKind::Decimal,
            ParamType::Text { .. } => SemKind::Text,
            ParamType::Boolean => SemKind::Boolean,
            ParamType::Enum { .. } => SemKind::Enum,
            ParamType::Binary { .. } => SemKind::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parameter {
    pub name: String,
    pub ty: ParamType,
    pub required: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, ty: ParamType) -> Self {
        Parameter { name: name.into(), ty, required: true }
    }

    pub fn to_document(&self) -> Document {
        let mut m = BTreeMap::new();
        m.insert("name".to_string(), Document::Str(self.name.clone()));
        m.insert("type".to_string(), Document::Str(self.ty.kind().name().to_string()));
        m.insert("required".to_string(), Document::Bool(self.required));
        match &self.ty {
            ParamType::Integer { range: Some((lo, hi)) } => {
                m.insert("range".into(), Document::map([("max", Document::Int(*hi)), ("min", Document::Int(*lo))]));
            }
            ParamType::Decimal { range: Some((lo, hi)) } => {
                m.insert("range".into(), Document::map([("max", hi.as_str().into()), ("min", lo.as_str().into())]));
            }
            ParamType::Text { max_length: Some(n) } | ParamType::Binary { max_length: Some(n) } => {
                m.insert("maxLength".into(), Document::Int(*n as i64));
            }
            ParamType::Enum { values } => {
                m.insert("values".into(), Document::List(values.iter().map(|v| Document::Str(v.clone())).collect()));
            }
            _ => {}
        }
        Document::Map(m)
    }

    fn from_document(doc: &Document, loc: &str) -> Result<Self, ContractError> {
        let map = doc.as_map().ok_or_else(|| malformed(loc, "parameter must be a map"))?;
        let allowed: &[&str] = &["name", "type", "required", "range", "maxLength", "values"];
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(malformed(loc, format!("unknown key `{k}`")));
        }
        let name = map
            .get("name")
            .and_then(Document::as_str)
            .filter(|n| !n.is_empty())
            .ok_or_else(|| malformed(&format!("{loc}.name"), "missing or empty"))?;
        let required = map
            .get("required")
            .and_then(Document::as_bool)
            .ok_or_else(|| malformed(&format!("{loc}.required"), "missing boolean"))?;
        let kind =
            map.get("type").and_then(Document::as_str).ok_or_else(|| malformed(&format!("{loc}.type"), "missing"))?;

        let range_loc = format!("{loc}.range");
        let range = map.get("range");
        let max_length = map.get("maxLength");
        let values = map.get("values");
        let reject = |present: bool, key: &str| -> Result<(), ContractError> {
            if present {
                Err(malformed(&format!("{loc}.{key}"), format!("not allowed for type `{kind}`")))
            } else {
                Ok(())
            }
        };

        let ty = match kind {
            "integer" => {
                reject(max_length.is_some(), "maxLength")?;
                reject(values.is_some(), "values")?;
                let range = match range {
                    None => None,
                    Some(r) => {
                        let lo = bound(r, "min", &range_loc)?.as_int();
                        let hi = bound(r, "max", &range_loc)?.as_int();
                        match (lo, hi) {
                            (Some(lo), Some(hi)) if lo <= hi => Some((lo, hi)),
                            (Some(_), Some(_)) => return Err(malformed(&range_loc, "min exceeds max")),
                            _ => return Err(malformed(&range_loc, "integer bounds required")),
                        }
                    }
                };
                ParamType::Integer { range }
            }
            "decimal" => {
                reject(max_length.is_some(), "maxLength")?;
                reject(values.is_some(), "values")?;
                let range = match range {
                    None => None,
                    Some(r) => {
                        let parse = |key: &str| -> Result<Decimal, ContractError> {
                            bound(r, key, &range_loc)?
                                .as_str()
                                .ok_or_else(|| malformed(&range_loc, "decimal bounds are strings"))?
                                .parse()
                                .map_err(|e: String| malformed(&range_loc, e))
                        };
                        let (lo, hi) = (parse("min")?, parse("max")?);
                        if lo > hi {
                            return Err(malformed(&range_loc, "min exceeds max"));
                        }
                        Some((lo, hi))
                    }
                };
                ParamType::Decimal { range }
            }
            "text" | "binary" => {
                reject(range.is_some(), "range")?;
                reject(values.is_some(), "values")?;
                let max_length = match max_length {
                    None => None,
                    Some(d) => Some(
                        d.as_int()
                            .and_then(|n| u64::try_from(n).ok())
                            .ok_or_else(|| malformed(&format!("{loc}.maxLength"), "non-negative integer"))?,
                    ),
                };
                if kind == "text" {
                    ParamType::Text { max_length }
                } else {
                    ParamType::Binary { max_length }
                }
            }
            "boolean" => {
                reject(range.is_some(), "range")?;
                reject(max_length.is_some(), "maxLength")?;
                reject(values.is_some(), "values")?;
                ParamType::Boolean
            }
            "enum" => {
                reject(range.is_some(), "range")?;
                reject(max_length.is_some(), "maxLength")?;
                let vloc = format!("{loc}.values");
                let list =
                    values.and_then(Document::as_list).ok_or_else(|| malformed(&vloc, "enum requires a value list"))?;
                let mut out = Vec::new();
                for v in list {
                    let s = v.as_str().ok_or_else(|| malformed(&vloc, "enum values are strings"))?;
                    if out.iter().any(|x| x == s) {
                        return Err(malformed(&vloc, format!("duplicate value `{s}`")));
                    }
                    out.push(s.to_string());
                }
                if out.is_empty() {
                    return Err(malformed(&vloc, "enum value set is empty"));
                }
                ParamType::Enum { values: out }
            }
            other => return Err(malformed(&format!("{loc}.type"), format!("unknown type `{other}`"))),
        };
        Ok(Parameter { name: name.to_string(), ty, required })
    }
}

fn bound<'a>(range: &'a Document, key: &str, loc: &str) -> Result<&'a Document, ContractError> {
    let map = range.as_map().ok_or_else(|| malformed(loc, "range must be a map"))?;
    if map.len() != 2 {
        return Err(malformed(loc, "range takes exactly `min` and `max`"));
    }
    map.get(key).ok_or_else(|| malformed(loc, format!("missing `{key}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            "=" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            ">=" => CmpOp::Ge,
            ">" => CmpOp::Gt,
            _ => return None,
        })
    }

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Ge => ord != Ordering::Less,
            CmpOp::Gt => ord == Ordering::Greater,
        }
    }
}

/// Concrete value of a parameter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Decimal(Decimal),
    Text(String),
    Bool(bool),
    Binary(Vec<u8>),
}

impl Value {
    /// Interprets a document as a value of the given parameter type.
    pub fn from_document(doc: &Document, ty: &ParamType) -> Result<Value, String> {
        match (ty.kind(), doc) {
            (SemKind::Integer, Document::Int(i)) => Ok(Value::Int(*i)),
            (SemKind::Decimal, Document::Str(s)) => s.parse().map(Value::Decimal),
            (SemKind::Text, Document::Str(s)) => Ok(Value::Text(s.clone())),
            (SemKind::Enum, Document::Str(s)) => match ty {
                ParamType::Enum { values } if values.contains(s) => Ok(Value::Text(s.clone())),
                _ => Err(format!("`{s}` is not in the enum value set")),
            },
            (SemKind::Boolean, Document::Bool(b)) => Ok(Value::Bool(*b)),
            (SemKind::Binary, Document::Str(s)) => {
                b64_decode(s).map(Value::Binary).map_err(|e| format!("bad base64: {e}"))
            }
            (kind, _) => Err(format!("expected a {} value", kind.name())),
        }
    }

    pub fn to_document(&self) -> Document {
        match self {
            Value::Int(i) => Document::Int(*i),
            Value::Decimal(d) => Document::Str(d.to_string()),
            Value::Text(s) => Document::Str(s.clone()),
            Value::Bool(b) => Document::Bool(*b),
            Value::Binary(b) => Document::Str(b64_encode(b)),
        }
    }

    fn compare(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => Some(a.cmp(b)),
            (Value::Decimal(a), Value::Decimal(b)) => Some(a.cmp(b)),
            (Value::Text(a), Value::Text(b)) => Some(a.cmp(b)),
            (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
            (Value::Binary(a), Value::Binary(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Operand {
    Param(String),
    /// A literal keeps the document it was written as, for exact re-serialization.
    Literal {
        raw: Document,
        value: Value,
    },
}

impl Operand {
    fn to_document(&self) -> Document {
        match self {
            Operand::Param(name) => Document::Str(name.clone()),
            Operand::Literal { raw, .. } => raw.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
    Not(Box<Predicate>),
    Compare { op: CmpOp, left: Operand, right: Operand },
}

impl Predicate {
    /// Prefix-notation list form.
    pub fn to_document(&self) -> Document {
        match self {
            Predicate::And(ps) | Predicate::Or(ps) => {
                let head = if matches!(self, Predicate::And(_)) { "and" } else { "or" };
                let mut items = vec![Document::from(head)];
                items.extend(ps.iter().map(Predicate::to_document));
                Document::List(items)
            }
            Predicate::Not(p) => Document::List(vec!["not".into(), p.to_document()]),
            Predicate::Compare { op, left, right } => {
                Document::List(vec![op.symbol().into(), left.to_document(), right.to_document()])
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Predicate::And(ps) | Predicate::Or(ps) => 1 + ps.iter().map(Predicate::depth).max().unwrap_or(0),
            Predicate::Not(p) => 1 + p.depth(),
            Predicate::Compare { .. } => 1,
        }
    }

    /// Names of every parameter the predicate mentions.
    pub fn references(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_refs(&mut out);
        out
    }

    fn collect_refs<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.collect_refs(out)),
            Predicate::Not(p) => p.collect_refs(out),
            Predicate::Compare { left, right, .. } => {
                for o in [left, right] {
                    if let Operand::Param(n) = o {
                        out.insert(n);
                    }
                }
            }
        }
    }

    fn eval(&self, values: &BTreeMap<&str, Value>) -> bool {
        match self {
            Predicate::And(ps) => ps.iter().all(|p| p.eval(values)),
            Predicate::Or(ps) => ps.iter().any(|p| p.eval(values)),
            Predicate::Not(p) => !p.eval(values),
            Predicate::Compare { op, left, right } => {
                let get = |o: &Operand| -> Value {
                    match o {
                        Operand::Param(n) => values[n.as_str()].clone(),
                        Operand::Literal { value, .. } => value.clone(),
                    }
                };
                // operand types were unified at parse time and bindings checked
                let ord = get(left).compare(&get(right)).expect("well-typed comparison");
                op.holds(ord)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct InterfaceContract {
    pub inputs: Vec<Parameter>,
    pub outputs: Vec<Parameter>,
    pub invariants: Vec<Predicate>,
}

impl InterfaceContract {
    pub fn to_document(&self) -> Document {
        Document::map([
            ("inputs", Document::List(self.inputs.iter().map(Parameter::to_document).collect())),
            ("invariants", Document::List(self.invariants.iter().map(Predicate::to_document).collect())),
            ("outputs", Document::List(self.outputs.iter().map(Parameter::to_document).collect())),
        ])
    }

    /// Looks a name up among inputs, then outputs.
    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.inputs.iter().chain(&self.outputs).find(|p| p.name == name)
    }

    /// Contract whose outputs mirror its inputs.
    pub fn mirror(params: Vec<Parameter>) -> Self {
        InterfaceContract { inputs: params.clone(), outputs: params, invariants: Vec::new() }
    }
}

pub fn parse_contract(doc: &Document) -> Result<InterfaceContract, ContractError> {
    let map = doc.as_map().ok_or_else(|| malformed("$", "contract must be a map"))?;
    if let Some(k) = map.keys().find(|k| !["inputs", "outputs", "invariants"].contains(&k.as_str())) {
        return Err(malformed("$", format!("unknown key `{k}`")));
    }
    let side = |key: &str| -> Result<Vec<Parameter>, ContractError> {
        let list = map.get(key).and_then(Document::as_list).ok_or_else(|| malformed(key, "missing list"))?;
        let mut params: Vec<Parameter> = Vec::with_capacity(list.len());
        for (i, item) in list.iter().enumerate() {
            let loc = format!("{key}[{i}]");
            let p = Parameter::from_document(item, &loc)?;
            if params.iter().any(|q| q.name == p.name) {
                return Err(malformed(&loc, format!("duplicate parameter `{}`", p.name)));
            }
            params.push(p);
        }
        Ok(params)
    };
    let inputs = side("inputs")?;
    let outputs = side("outputs")?;
    let mut contract = InterfaceContract { inputs, outputs, invariants: Vec::new() };

    let list =
        map.get("invariants").and_then(Document::as_list).ok_or_else(|| malformed("invariants", "missing list"))?;
    for (i, item) in list.iter().enumerate() {
        let loc = format!("invariants[{i}]");
        let p = parse_predicate(item, &contract, &loc, 1)?;
        contract.invariants.push(p);
    }
    Ok(contract)
}

fn parse_predicate(
    doc: &Document,
    contract: &InterfaceContract,
    loc: &str,
    depth: usize,
) -> Result<Predicate, ContractError> {
    if depth > MAX_PREDICATE_DEPTH {
        return Err(malformed(loc, format!("predicate nesting exceeds {MAX_PREDICATE_DEPTH}")));
    }
    let items = doc.as_list().ok_or_else(|| malformed(loc, "predicate must be a list"))?;
    let head = items
        .first()
        .and_then(Document::as_str)
        .ok_or_else(|| malformed(loc, "predicate must start with an operator"))?;
    let args = &items[1..];
    let sub = |i: usize, d: &Document| parse_predicate(d, contract, &format!("{loc}[{}]", i + 1), depth + 1);
    match head {
        "and" | "or" => {
            if args.is_empty() {
                return Err(malformed(loc, format!("`{head}` needs at least one operand")));
            }
            let ps = args.iter().enumerate().map(|(i, d)| sub(i, d)).collect::<Result<Vec<_>, _>>()?;
            Ok(if head == "and" { Predicate::And(ps) } else { Predicate::Or(ps) })
        }
        "not" => {
            if args.len() != 1 {
                return Err(malformed(loc, "`not` takes one operand"));
            }
            Ok(Predicate::Not(Box::new(sub(0, &args[0])?)))
        }
        op => {
            let op = CmpOp::parse(op).ok_or_else(|| malformed(loc, format!("unknown operator `{op}`")))?;
            if args.len() != 2 {
                return Err(malformed(loc, format!("`{}` takes two operands", op.symbol())));
            }
            let (left, right) = type_comparison(op, &args[0], &args[1], contract, loc)?;
            Ok(Predicate::Compare { op, left, right })
        }
    }
}

fn type_comparison(
    op: CmpOp,
    a: &Document,
    b: &Document,
    contract: &InterfaceContract,
    loc: &str,
) -> Result<(Operand, Operand), ContractError> {
    let param = |d: &Document| -> Option<&Parameter> { d.as_str().and_then(|n| contract.parameter(n)) };
    let (pa, pb) = (param(a), param(b));
    let anchor = match (pa, pb) {
        (Some(x), Some(y)) => {
            if x.ty.kind() != y.ty.kind() {
                return Err(ill_typed(
                    loc,
                    format!("`{}` is {} but `{}` is {}", x.name, x.ty.kind().name(), y.name, y.ty.kind().name()),
                ));
            }
            x
        }
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => {
            let unknown = [a, b].into_iter().find_map(Document::as_str);
            return Err(match unknown {
                Some(name) => {
                    ContractError::UnknownParameterReference { location: loc.to_string(), name: name.to_string() }
                }
                None => ill_typed(loc, "comparison references no parameter"),
            });
        }
    };
    if op.is_ordering() && !anchor.ty.kind().ordered() {
        return Err(ill_typed(
            loc,
            format!("`{}` is not defined on {} parameter `{}`", op.symbol(), anchor.ty.kind().name(), anchor.name),
        ));
    }
    let operand = |d: &Document, p: Option<&Parameter>| -> Result<Operand, ContractError> {
        match p {
            Some(p) => Ok(Operand::Param(p.name.clone())),
            None => {
                let value = Value::from_document(d, &anchor.ty).map_err(|e| {
                    ill_typed(loc, format!("literal {} against `{}`: {e}", d.to_canonical_string(), anchor.name))
                })?;
                Ok(Operand::Literal { raw: d.clone(), value })
            }
        }
    };
    Ok((operand(a, pa)?, operand(b, pb)?))
}

/// Evaluates every invariant over the union of input and output bindings.
pub fn eval_invariants(
    contract: &InterfaceContract,
    binding: &BTreeMap<String, Document>,
) -> Result<Vec<(Predicate, bool)>, ContractError> {
    let mut values: BTreeMap<&str, Value> = BTreeMap::new();
    for predicate in &contract.invariants {
        for name in predicate.references() {
            if values.contains_key(name) {
                continue;
            }
            let param = contract.parameter(name).expect("references were resolved at parse time");
            let doc = binding.get(name).ok_or_else(|| ContractError::MissingBinding(name.to_string()))?;
            let value = Value::from_document(doc, &param.ty)
                .map_err(|reason| ContractError::TypeError { name: name.to_string(), reason })?;
            values.insert(name, value);
        }
    }
    Ok(contract.invariants.iter().map(|p| (p.clone(), p.eval(&values))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FindingReason {
    Missing,
    TypeMismatch,
    RangeNotContained,
    EnumNotSubset,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub parameter: String,
    pub reason: FindingReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub findings: Vec<Finding>,
}

fn contained(producer: &ParamType, consumer: &ParamType) -> Result<(), FindingReason> {
    use FindingReason::*;
    fn within<T: Ord>(p: &Option<(T, T)>, c: &Option<(T, T)>) -> bool {
        match (p, c) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some((plo, phi)), Some((clo, chi))) => clo <= plo && phi <= chi,
        }
    }
    fn shorter(p: &Option<u64>, c: &Option<u64>) -> bool {
        match (p, c) {
            (_, None) => true,
            (None, Some(_)) => false,
            (Some(p), Some(c)) => p <= c,
        }
    }
    let ok = match (producer, consumer) {
        (ParamType::Integer { range: p }, ParamType::Integer { range: c }) => within(p, c),
        (ParamType::Decimal { range: p }, ParamType::Decimal { range: c }) => within(p, c),
        (ParamType::Text { max_length: p }, ParamType::Text { max_length: c })
        | (ParamType::Binary { max_length: p }, ParamType::Binary { max_length: c }) => shorter(p, c),
        (ParamType::Boolean, ParamType::Boolean) => true,
        (ParamType::Enum { values: p }, ParamType::Enum { values: c }) => {
            return if p.iter().all(|v| c.contains(v)) { Ok(()) } else { Err(EnumNotSubset) };
        }
        _ => return Err(TypeMismatch),
    };
    if ok {
        Ok(())
    } else {
        Err(RangeNotContained)
    }
}

/// Can `producer`'s outputs feed `consumer`'s required inputs?
pub fn check_compatibility(producer: &InterfaceContract, consumer: &InterfaceContract) -> CompatibilityReport {
    let mut findings = Vec::new();
    for input in consumer.inputs.iter().filter(|p| p.required) {
        let reason = match producer.outputs.iter().find(|o| o.name == input.name) {
            None => Some(FindingReason::Missing),
            Some(output) => contained(&output.ty, &input.ty).err(),
        };
        if let Some(reason) = reason {
            findings.push(Finding { parameter: input.name.clone(), reason });
        }
    }
    CompatibilityReport { compatible: findings.is_empty(), findings }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PairReport {
    /// 1-based position of the producing stage; the consumer is the next one.
    pub position: usize,
    pub report: CompatibilityReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PipelineReport {
    pub valid: bool,
    pub pairs: Vec<PairReport>,
}

impl PipelineReport {
    pub fn first_failure(&self) -> Option<&PairReport> {
        self.pairs.iter().find(|p| !p.report.compatible)
    }
}

pub fn chain_pipeline(stages: &[InterfaceContract]) -> PipelineReport {
    let pairs: Vec<PairReport> = stages
        .windows(2)
        .enumerate()
        .map(|(i, w)| PairReport { position: i + 1, report: check_compatibility(&w[0], &w[1]) })
        .collect();
    PipelineReport { valid: pairs.iter().all(|p| p.report.compatible), pairs }
}
