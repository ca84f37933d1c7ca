//! Independent reference implementations used to check the library.
//! These favour obviousness over speed and share no code with it beyond
//! plain data types.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use hcmr_core::certify::{AssuranceLevel, CertState, CertificationRecord};
use hcmr_core::compose::{Catalog, ModuleRecord, ResolutionConstraint, SecurityAttributes};
use hcmr_core::contracts::{check_compatibility, InterfaceContract, ParamType, Parameter};
use hcmr_core::digests::{content_digest, Digest, ModuleId, Version};
use hcmr_core::provenance::{Envelope, PAYLOAD_TYPE};
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;
use sha2::{Digest as _, Sha256};

use crate::T0;

pub type Hash = [u8; 32];

pub fn sha256(parts: &[&[u8]]) -> Hash {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    h.finalize().into()
}

pub fn leaf(body: &[u8]) -> Hash {
    sha256(&[&[0], body])
}

fn node(l: &Hash, r: &Hash) -> Hash {
    sha256(&[&[1], l, r])
}

/// Largest power of two strictly less than `n`.
fn split(n: usize) -> usize {
    let mut k = 1;
    while k * 2 < n {
        k *= 2;
    }
    k
}

/// Merkle tree hash of a list of leaf hashes.
pub fn mth(leaves: &[Hash]) -> Hash {
    match leaves.len() {
        0 => sha256(&[]),
        1 => leaves[0],
        n => {
            let k = split(n);
            node(&mth(&leaves[..k]), &mth(&leaves[k..]))
        }
    }
}

/// Audit path for leaf `m`.
pub fn inclusion_path(m: usize, leaves: &[Hash]) -> Vec<Hash> {
    let n = leaves.len();
    if n <= 1 {
        return vec![];
    }
    let k = split(n);
    if m < k {
        let mut p = inclusion_path(m, &leaves[..k]);
        p.push(mth(&leaves[k..]));
        p
    } else {
        let mut p = inclusion_path(m - k, &leaves[k..]);
        p.push(mth(&leaves[..k]));
        p
    }
}

/// Consistency proof between the first `m` leaves and all of `leaves`.
pub fn consistency_path(m: usize, leaves: &[Hash]) -> Vec<Hash> {
    fn sub(m: usize, d: &[Hash], complete: bool) -> Vec<Hash> {
        let n = d.len();
        if m == n {
            return if complete { vec![] } else { vec![mth(d)] };
        }
        let k = split(n);
        if m <= k {
            let mut p = sub(m, &d[..k], complete);
            p.push(mth(&d[k..]));
            p
        } else {
            let mut p = sub(m - k, &d[k..], false);
            p.push(mth(&d[..k]));
            p
        }
    }
    if m == 0 || m == leaves.len() {
        return vec![];
    }
    sub(m, leaves, true)
}

/// Fixed-point value of a decimal string, scaled by 10^12.
pub fn decimal_units(text: &str) -> i128 {
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    let mut frac = frac.to_string();
    while frac.len() < 12 {
        frac.push('0');
    }
    let v = int.parse::<i128>().unwrap() * 1_000_000_000_000 + frac.parse::<i128>().unwrap();
    if neg {
        -v
    } else {
        v
    }
}

/// Tree-walking evaluator over the raw predicate document. `kinds` maps
/// parameter names to their declared type name.
pub fn eval_predicate(
    pred: &Value,
    kinds: &BTreeMap<String, String>,
    binding: &serde_json::Map<String, Value>,
) -> bool {
    let items = pred.as_array().expect("predicate is a list");
    let head = items[0].as_str().expect("operator");
    let args = &items[1..];
    match head {
        "and" => args.iter().all(|p| eval_predicate(p, kinds, binding)),
        "or" => args.iter().any(|p| eval_predicate(p, kinds, binding)),
        "not" => !eval_predicate(&args[0], kinds, binding),
        op => {
            let param_kind = |v: &Value| v.as_str().and_then(|s| kinds.get(s)).cloned();
            let kind = param_kind(&args[0]).or_else(|| param_kind(&args[1])).expect("one side is a parameter");
            let resolve = |v: &Value| -> Value {
                match v.as_str() {
                    Some(s) if kinds.contains_key(s) => binding[s].clone(),
                    _ => v.clone(),
                }
            };
            let (l, r) = (resolve(&args[0]), resolve(&args[1]));
            let ord = match kind.as_str() {
                "integer" => l.as_i64().unwrap().cmp(&r.as_i64().unwrap()),
                "decimal" => decimal_units(l.as_str().unwrap()).cmp(&decimal_units(r.as_str().unwrap())),
                "boolean" => l.as_bool().unwrap().cmp(&r.as_bool().unwrap()),
                _ => l.as_str().unwrap().cmp(r.as_str().unwrap()),
            };
            match op {
                "<" => ord.is_lt(),
                "<=" => ord.is_le(),
                "=" => ord.is_eq(),
                "!=" => ord.is_ne(),
                ">=" => ord.is_ge(),
                ">" => ord.is_gt(),
                other => panic!("unknown operator {other}"),
            }
        }
    }
}

/// Tier after capping by every transitive dependency, or `None` when any
/// node in the closure is missing or not certified.
pub fn effective_tier(catalog: &Catalog, id: &ModuleId) -> Option<AssuranceLevel> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![id.clone()];
    let mut tier = AssuranceLevel::L3;
    while let Some(cur) = stack.pop() {
        if !seen.insert(cur.clone()) {
            continue;
        }
        let rec = catalog.get(&cur)?;
        if rec.state() != CertState::Certified {
            return None;
        }
        tier = tier.min(rec.assurance_level.unwrap_or(AssuranceLevel::L0));
        stack.extend(rec.dependencies.iter().map(|d| d.module_id()));
    }
    Some(tier)
}

/// Applies each discovery predicate independently, then sorts by name
/// ascending and version descending.
pub fn discover(catalog: &Catalog, c: &ResolutionConstraint) -> Vec<ModuleId> {
    let mut out: Vec<ModuleId> = Vec::new();
    for rec in catalog.records() {
        let certified = rec.state() == CertState::Certified;
        let tier_ok = effective_tier(catalog, &rec.module).is_some_and(|t| t >= c.min_assurance);
        let perms_ok = c
            .permission_ceiling
            .as_ref()
            .is_none_or(|ceiling| rec.security_attributes.required_permissions.iter().all(|p| ceiling.contains(p)));
        let name_ok =
            c.name_pattern.as_ref().is_none_or(|p| glob::Pattern::new(p.as_str()).unwrap().matches(&rec.module.name));
        let contract_ok = c
            .required_contract
            .as_ref()
            .is_none_or(|req| rec.contract().is_some_and(|own| check_compatibility(&own, req).compatible));
        if certified && tier_ok && perms_ok && name_ok && contract_ok {
            out.push(rec.module.clone());
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name).then(b.version.cmp(&a.version)));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanOutcome {
    Plan(Vec<ModuleId>),
    DepthExceeded(usize),
    NoPlan,
}

/// Enumerates every chain up to `max_depth` and keeps the shortest, then
/// lexicographically smallest. Beyond `max_depth` only the length of the
/// shortest chain is computed.
pub fn plan(
    catalog: &Catalog,
    source: &InterfaceContract,
    goal: &InterfaceContract,
    c: &ResolutionConstraint,
    max_depth: usize,
) -> PlanOutcome {
    if check_compatibility(source, goal).compatible {
        return PlanOutcome::Plan(vec![]);
    }
    let stage_filter = ResolutionConstraint { required_contract: None, ..c.clone() };
    let mut cands: Vec<(ModuleId, InterfaceContract)> = discover(catalog, &stage_filter)
        .into_iter()
        .filter_map(|id| catalog.get(&id).and_then(ModuleRecord::contract).map(|k| (id, k)))
        .collect();
    cands.sort_by(|a, b| a.0.cmp(&b.0));
    let compat = |a: &InterfaceContract, b: &InterfaceContract| check_compatibility(a, b).compatible;

    fn extend(
        chain: &mut Vec<usize>,
        len: usize,
        cands: &[(ModuleId, InterfaceContract)],
        ok: &dyn Fn(&[usize]) -> bool,
        out: &mut Vec<Vec<usize>>,
    ) {
        if chain.len() == len {
            if ok(chain) {
                out.push(chain.clone());
            }
            return;
        }
        for i in 0..cands.len() {
            chain.push(i);
            extend(chain, len, cands, ok, out);
            chain.pop();
        }
    }
    let valid = |chain: &[usize]| {
        compat(source, &cands[chain[0]].1)
            && chain.windows(2).all(|w| compat(&cands[w[0]].1, &cands[w[1]].1))
            && compat(&cands[*chain.last().unwrap()].1, goal)
    };
    for len in 1..=max_depth {
        let mut found = Vec::new();
        extend(&mut Vec::new(), len, &cands, &valid, &mut found);
        if let Some(best) = found.into_iter().min_by(|a, b| {
            let ka: Vec<&ModuleId> = a.iter().map(|&i| &cands[i].0).collect();
            let kb: Vec<&ModuleId> = b.iter().map(|&i| &cands[i].0).collect();
            ka.cmp(&kb)
        }) {
            return PlanOutcome::Plan(best.into_iter().map(|i| cands[i].0.clone()).collect());
        }
    }
    // plain BFS for the length of the shortest chain, if any
    let mut dist: Vec<Option<usize>> = vec![None; cands.len()];
    let mut queue = VecDeque::new();
    for (i, (_, k)) in cands.iter().enumerate() {
        if compat(source, k) {
            dist[i] = Some(1);
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        if compat(&cands[i].1, goal) {
            return PlanOutcome::DepthExceeded(dist[i].unwrap());
        }
        for j in 0..cands.len() {
            if dist[j].is_none() && compat(&cands[i].1, &cands[j].1) {
                dist[j] = Some(dist[i].unwrap() + 1);
                queue.push_back(j);
            }
        }
    }
    PlanOutcome::NoPlan
}

pub const KINDS: [&str; 4] = ["a", "b", "c", "d"];
pub const PERMISSIONS: [&str; 3] = ["exec", "fs", "net"];
const RANGES: [Option<(i64, i64)>; 4] = [None, Some((0, 10)), Some((0, 5)), Some((2, 8))];

pub fn random_contract(rng: &mut impl Rng) -> InterfaceContract {
    let param = |rng: &mut _, name: &str| -> Parameter {
        let range = *RANGES.choose(rng).unwrap();
        Parameter::new(name, ParamType::Integer { range })
    };
    let from = *KINDS.choose(rng).unwrap();
    let to = *KINDS.choose(rng).unwrap();
    InterfaceContract { inputs: vec![param(rng, from)], outputs: vec![param(rng, to)], invariants: vec![] }
}

fn placeholder_envelope() -> Envelope {
    Envelope { payload_type: PAYLOAD_TYPE.into(), payload: b"{}".to_vec(), signatures: vec![] }
}

/// Catalog of `n` synthetic records: mostly certified, random tiers,
/// permissions, contracts and acyclic dependencies. Records are not backed
/// by stored artifacts or real signatures.
pub fn random_catalog(rng: &mut impl Rng, n: usize) -> Catalog {
    let mut catalog = Catalog::new();
    let mut ids: Vec<ModuleId> = Vec::new();
    for i in 0..n {
        let id = ModuleId::new(format!("m{}", i % 8), Version::new((i / 8) as u64 + 1, 0, 0));
        let state = if rng.gen_bool(0.75) { CertState::Certified } else { *CertState::ALL.choose(rng).unwrap() };
        let level = [AssuranceLevel::L0, AssuranceLevel::L1, AssuranceLevel::L2, AssuranceLevel::L3]
            .choose(rng)
            .copied()
            .filter(|_| state == CertState::Certified || state == CertState::Revoked);
        let mut cert = CertificationRecord::new(id.clone(), crate::SUBMITTER, T0, i as u64);
        cert.state = state;
        cert.assurance_level = level;
        let deps = ids.iter().filter(|_| rng.gen_bool(0.15)).map(|d| catalog.get(d).unwrap().as_dependency()).collect();
        let perms = PERMISSIONS.iter().filter(|_| rng.gen_bool(0.3)).map(|s| s.to_string()).collect();
        let artifact = format!("{id}").into_bytes();
        catalog.insert(ModuleRecord {
            module: id.clone(),
            artifact_digest: content_digest(&artifact),
            contract: random_contract(rng).to_document(),
            security_attributes: SecurityAttributes { required_permissions: perms, threat_assumptions: vec![] },
            assurance_level: level,
            dependencies: deps,
            dependency_digest: Digest::from_bytes([0; 32]),
            provenance_envelope: placeholder_envelope(),
            build_digests: vec![],
            log_index: i as u64,
            certification: cert,
        });
        ids.push(id);
    }
    catalog
}

pub fn random_constraint(rng: &mut impl Rng) -> ResolutionConstraint {
    let min_assurance =
        *[AssuranceLevel::L0, AssuranceLevel::L1, AssuranceLevel::L2, AssuranceLevel::L3].choose(rng).unwrap();
    let permission_ceiling =
        rng.gen_bool(0.5).then(|| PERMISSIONS.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.to_string()).collect());
    let name_pattern =
        ["m1*", "m[0-3]", "*", "m?"].choose(rng).filter(|_| rng.gen_bool(0.4)).map(|p| glob::Pattern::new(p).unwrap());
    let required_contract = rng.gen_bool(0.3).then(|| random_contract(rng));
    ResolutionConstraint { min_assurance, required_contract, permission_ceiling, name_pattern }
}
