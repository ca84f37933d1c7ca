//! Discovery, resolution and planning over random catalogs backed by real
//! artifacts and signed provenance, against reference implementations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use hcmr_core::certify::CertState;
use hcmr_core::compose::{self, Catalog, ComposeError, ModuleRecord};
use hcmr_core::digests::{Digest, ModuleId};
use hcmr_core::provenance::{generate_statement, wrap_envelope, TrustRootSet};
use hcmr_core::store::{ArtifactStore, MemoryArtifactStore};
use hcmr_testkit::oracle::{self, PlanOutcome};
use hcmr_testkit::{build_record, Pki, SUBMITTER, T0};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

const CATALOGS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Defect {
    Tampered,
    ClosureDigest,
    Envelope,
}

fn reachable(catalog: &Catalog, root: &ModuleId) -> BTreeSet<ModuleId> {
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([root.clone()]);
    while let Some(cur) = queue.pop_front() {
        if !seen.insert(cur.clone()) {
            continue;
        }
        if let Some(rec) = catalog.get(&cur) {
            queue.extend(rec.dependencies.iter().map(|d| d.module_id()));
        }
    }
    seen
}

/// Closure digest from first principles: sorted, deduplicated reference
/// objects serialised with sorted keys and no whitespace.
fn closure_digest(catalog: &Catalog, rec: &ModuleRecord) -> Digest {
    let mut refs: Vec<(String, (u64, u64, u64), String)> = Vec::new();
    for id in reachable(catalog, &rec.module) {
        if id == rec.module {
            continue;
        }
        let dep = catalog.get(&id).unwrap();
        let v = &dep.module.version;
        refs.push((id.name.clone(), (v.major, v.minor, v.patch), dep.artifact_digest.to_hex()));
    }
    refs.sort();
    refs.dedup();
    let list: Vec<serde_json::Value> = refs
        .iter()
        .map(|(name, (a, b, c), hex)| json!({"digest": format!("sha256:{hex}"), "name": name, "version": format!("{a}.{b}.{c}")}))
        .collect();
    Digest::from_bytes(oracle::sha256(&[&serde_json::to_vec(&list).unwrap()]))
}

/// Gives every record stored bytes, a closure digest and a signed
/// envelope, then plants defects and returns where they are.
fn materialise(
    rng: &mut impl Rng,
    catalog: &mut Catalog,
    store: &MemoryArtifactStore,
    pki: &Pki,
) -> BTreeMap<ModuleId, Defect> {
    let signer = pki.signer(SUBMITTER, T0);
    let ids: Vec<ModuleId> = catalog.records().map(|r| r.module.clone()).collect();
    for id in &ids {
        let bytes = format!("{id}").into_bytes();
        assert_eq!(store.put(&bytes).unwrap(), catalog.get(id).unwrap().artifact_digest);
        let dependency_digest = closure_digest(catalog, catalog.get(id).unwrap());
        let rec = catalog.get_mut(id).unwrap();
        rec.dependency_digest = dependency_digest;
        let statement = generate_statement(&build_record(), rec.artifact_digest, &rec.dependencies, T0).unwrap();
        rec.provenance_envelope = wrap_envelope(&statement, &signer, T0).unwrap();
    }
    let mut defects = BTreeMap::new();
    for id in &ids {
        if !rng.gen_bool(0.12) {
            continue;
        }
        let rec = catalog.get_mut(id).unwrap();
        let defect = [Defect::Tampered, Defect::ClosureDigest, Defect::Envelope][rng.gen_range(0..3)];
        match defect {
            Defect::Tampered => store.overwrite_unchecked(&rec.artifact_digest, b"tampered".to_vec()),
            Defect::ClosureDigest => rec.dependency_digest = Digest::from_bytes(rng.gen()),
            Defect::Envelope => {
                let sig = &mut rec.provenance_envelope.signatures[0].sig;
                let i = rng.gen_range(0..sig.len());
                sig[i] ^= 1;
            }
        }
        defects.insert(id.clone(), defect);
    }
    defects
}

/// The error a node must produce when it is the first failure reached.
fn expected_failure(catalog: &Catalog, defects: &BTreeMap<ModuleId, Defect>, id: &ModuleId) -> Option<&'static str> {
    let rec = catalog.get(id)?;
    match rec.state() {
        CertState::Certified => {}
        CertState::Revoked => return Some("RevokedDependency"),
        _ => return Some("UncertifiedDependency"),
    }
    defects.get(id).map(|d| match d {
        Defect::Tampered | Defect::ClosureDigest => "DigestMismatch",
        Defect::Envelope => "ProvenanceFailure",
    })
}

fn check_resolve(
    catalog: &Catalog,
    store: &MemoryArtifactStore,
    roots: &TrustRootSet,
    defects: &BTreeMap<ModuleId, Defect>,
) -> (usize, usize) {
    let (mut ok, mut refused) = (0, 0);
    for rec in catalog.records() {
        let closure = reachable(catalog, &rec.module);
        let failures: BTreeMap<&ModuleId, &str> =
            closure.iter().filter_map(|id| expected_failure(catalog, defects, id).map(|f| (id, f))).collect();
        match compose::resolve(catalog, store, roots, &rec.module) {
            Ok(graph) => {
                assert!(failures.is_empty(), "{} resolved despite {failures:?}", rec.module);
                let nodes: BTreeSet<ModuleId> = graph.nodes.iter().map(|n| n.module.clone()).collect();
                assert_eq!(nodes, closure, "{}", rec.module);
                assert_eq!(graph.nodes.len(), closure.len(), "{}: duplicate nodes", rec.module);
                for n in &graph.nodes {
                    let bytes = format!("{}", n.module).into_bytes();
                    assert_eq!(n.artifact_digest, Digest::from_bytes(oracle::sha256(&[&bytes])));
                }
                ok += 1;
            }
            Err(e) => {
                let named = e.module().unwrap_or_else(|| panic!("{}: unnamed error {e:?}", rec.module));
                assert_eq!(failures.get(named).copied(), Some(e.variant()), "{}: {e:?} vs {failures:?}", rec.module);
                refused += 1;
            }
        }
    }
    (ok, refused)
}

fn check_plans(rng: &mut impl Rng, catalog: &Catalog) -> usize {
    let mut found = 0;
    let source = oracle::random_contract(rng);
    let goal = oracle::random_contract(rng);
    let constraint = oracle::random_constraint(rng);
    for max_depth in 1..=4 {
        let got = compose::synthesize_plan(catalog, &source, &goal, &constraint, max_depth);
        let want = oracle::plan(catalog, &source, &goal, &constraint, max_depth);
        match (&got, &want) {
            (Ok(plan), PlanOutcome::Plan(ids)) => {
                assert_eq!(&plan.stage_ids(), ids);
                assert!(plan.digest_matches());
                found += 1;
            }
            (Err(ComposeError::DepthExceeded { shortest, .. }), PlanOutcome::DepthExceeded(s)) => {
                assert_eq!(shortest, s)
            }
            (Err(ComposeError::NoPlanFound), PlanOutcome::NoPlan) => {}
            _ => panic!("maxDepth {max_depth}: {got:?} vs {want:?}"),
        }
    }
    found
}

pub fn run() -> String {
    let pki = Pki::new();
    let roots = TrustRootSet::single(pki.ca.root());
    let (mut resolved, mut refused, mut plans, mut discovered) = (0, 0, 0, 0);
    for seed in 0..CATALOGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=20);
        let mut catalog = oracle::random_catalog(&mut rng, n);
        let store = MemoryArtifactStore::new();
        let defects = materialise(&mut rng, &mut catalog, &store, &pki);

        for _ in 0..5 {
            let c = oracle::random_constraint(&mut rng);
            let got: Vec<ModuleId> = compose::discover(&catalog, &c).into_iter().map(|r| r.module.clone()).collect();
            assert_eq!(got, oracle::discover(&catalog, &c), "seed {seed}");
            discovered += 1;
        }
        let (ok, bad) = check_resolve(&catalog, &store, &roots, &defects);
        resolved += ok;
        refused += bad;
        for _ in 0..3 {
            plans += check_plans(&mut rng, &catalog);
        }
    }
    assert!(resolved > 0 && refused > 0 && plans > 0, "degenerate sample");
    format!(
        "{CATALOGS} catalogs: {discovered} discovery queries match; {resolved} closures resolved, {refused} refused naming a defective node; plan search matches for maxDepth 1..=4 ({plans} plans found)"
    )
}
