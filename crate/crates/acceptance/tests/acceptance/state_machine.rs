use std::collections::{BTreeMap, BTreeSet};

use hcmr_core::certify::{CertState, Decision, ManifestEntry, ReviewVerdict, RevocationOrder, ValidationManifest};
use hcmr_core::digests::{content_digest, ModuleId};
use hcmr_core::registry::{replay, ModuleSubmission, RegistryError};
use hcmr_core::signing::EphemeralSigner;
use hcmr_testkit::{id, mirror, passing_manifest, submission, Fixture, Pki, AUTHORITY, REVIEWERS, SUBMITTER, T0};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One verdict in an enumerated review sequence: `(identity, decision)`.
type Action = (&'static str, Decision);

fn alphabet() -> Vec<Action> {
    let mut a = vec![(SUBMITTER, Decision::Approve)];
    a.extend(REVIEWERS.iter().map(|r| (*r, Decision::Approve)));
    a.push((REVIEWERS[0], Decision::Reject));
    a
}

fn sequences(alphabet: &[Action], max_len: usize) -> Vec<Vec<Action>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for a in alphabet {
                let mut t: Vec<Action> = s.clone();
                t.push(*a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn err_variant<T>(r: &Result<T, RegistryError>) -> &'static str {
    r.as_ref().err().map_or("Ok", |e| e.variant())
}

/// Every review sequence of up to five verdicts drawn from the submitter,
/// four reviewers and one rejection, for each quorum in 1..=3.
fn exhaustive() -> usize {
    let pki = Pki::new();
    let m = id("m", "1.0.0");
    let contract = mirror("x");
    let sub = submission(&pki, &m, &contract, vec![], T0);
    let alphabet = alphabet();
    let verdicts: Vec<ReviewVerdict> =
        alphabet.iter().map(|&(who, d)| ReviewVerdict::sign(&m, d, "", &pki.signer(who, T0), T0).unwrap()).collect();
    let verdict = |a: &Action| &verdicts[alphabet.iter().position(|b| b == a).unwrap()];
    let manifest = passing_manifest(&contract);
    let seqs = sequences(&alphabet, 5);
    let mut runs = 0;
    for quorum in 1..=3u32 {
        for seq in &seqs {
            let fx = Fixture::new(quorum);
            fx.registry.submit(sub.clone()).unwrap();
            let mut rejected = false;
            let mut approvers = BTreeSet::new();
            for &(who, decision) in seq {
                let r = fx.registry.review(&m, verdict(&(who, decision)).clone());
                let expected = if rejected {
                    "WrongState"
                } else if who == SUBMITTER {
                    "SelfReview"
                } else {
                    match decision {
                        Decision::Approve => {
                            approvers.insert(who);
                        }
                        Decision::Reject => rejected = true,
                    }
                    "Ok"
                };
                assert_eq!(err_variant(&r), expected, "quorum {quorum}, sequence {seq:?}");
            }
            let eligible = !rejected && approvers.len() >= quorum as usize;
            let v = fx.registry.validate(&m, &manifest);
            assert_eq!(v.is_ok(), eligible, "validate: quorum {quorum}, sequence {seq:?}");
            let c = fx.registry.certify(&m);
            assert_eq!(c.is_ok(), eligible, "certify: quorum {quorum}, sequence {seq:?}");
            let rec = fx.registry.module(&m).unwrap();
            let certified = rec.state() == CertState::Certified;
            let counted: BTreeSet<&str> = rec.certification.distinct_approvers();
            assert!(!certified || counted.len() >= quorum as usize, "certified below quorum: {seq:?}");
            assert!(!counted.contains(SUBMITTER), "self-approval counted: {seq:?}");
            assert!(rec.certification.history_is_legal(), "{seq:?}");
            runs += 1;
        }
    }
    runs
}

#[derive(Debug, Clone)]
struct Model {
    state: CertState,
    submitter: &'static str,
    approvers: BTreeSet<&'static str>,
    deps: Vec<ModuleId>,
}

struct Walk {
    fx: Fixture,
    quorum: u32,
    model: BTreeMap<ModuleId, Model>,
    signers: BTreeMap<&'static str, EphemeralSigner>,
}

const IDENTITIES: [&str; 6] = [SUBMITTER, REVIEWERS[0], REVIEWERS[1], REVIEWERS[2], REVIEWERS[3], AUTHORITY];

impl Walk {
    fn new(quorum: u32) -> Self {
        let fx = Fixture::new(quorum);
        let signers = IDENTITIES.iter().map(|who| (*who, fx.pki.signer(who, T0))).collect();
        Walk { fx, quorum, model: BTreeMap::new(), signers }
    }

    fn closure_certified(&self, deps: &[ModuleId]) -> bool {
        let mut stack = deps.to_vec();
        let mut seen = BTreeSet::new();
        while let Some(d) = stack.pop() {
            if !seen.insert(d.clone()) {
                continue;
            }
            let m = &self.model[&d];
            if m.state != CertState::Certified {
                return false;
            }
            stack.extend(m.deps.iter().cloned());
        }
        true
    }

    fn step(&mut self, rng: &mut impl Rng, pool: &[ModuleId]) -> (String, &'static str, &'static str) {
        let m = pool.choose(rng).unwrap().clone();
        let known = self.model.get(&m).cloned();
        let before = known.as_ref().map(|k| k.state);
        let op = rng.gen_range(0..10);
        let (name, got, expected) = match op {
            0..=1 => {
                let existing: Vec<ModuleId> = self.model.keys().filter(|k| **k != m).cloned().collect();
                let count = rng.gen_range(0..=2);
                let deps: Vec<ModuleId> = existing.choose_multiple(rng, count).cloned().collect();
                let catalog = self.fx.registry.catalog();
                let refs = deps.iter().map(|d| catalog.get(d).unwrap().as_dependency()).collect();
                let mut sub: ModuleSubmission = submission(&self.fx.pki, &m, &mirror("x"), refs, T0);
                let reproducible = rng.gen_bool(0.85);
                if !reproducible {
                    sub.build_digests[1] = content_digest(b"other build");
                }
                let r = self.fx.registry.submit(sub);
                let expected = match &known {
                    Some(_) => "AlreadyExists",
                    None => {
                        let hygienic = deps.iter().all(|d| self.model[d].state == CertState::Certified);
                        let state = if hygienic && reproducible { CertState::Vetted } else { CertState::Rejected };
                        self.model
                            .insert(m.clone(), Model { state, submitter: SUBMITTER, approvers: BTreeSet::new(), deps });
                        "Ok"
                    }
                };
                ("submit", err_variant(&r), expected)
            }
            2..=5 => {
                let who = *IDENTITIES[..5].choose(rng).unwrap();
                let decision = if rng.gen_bool(0.85) { Decision::Approve } else { Decision::Reject };
                let verdict = ReviewVerdict::sign(&m, decision, "", &self.signers[who], T0).unwrap();
                let r = self.fx.registry.review(&m, verdict);
                let expected = match self.model.get_mut(&m) {
                    None => "UnknownModule",
                    Some(s) if !matches!(s.state, CertState::Vetted | CertState::InReview) => "WrongState",
                    Some(s) if s.submitter == who => "SelfReview",
                    Some(s) => {
                        match decision {
                            Decision::Approve => {
                                s.approvers.insert(who);
                                s.state = CertState::InReview;
                            }
                            Decision::Reject => s.state = CertState::Rejected,
                        }
                        "Ok"
                    }
                };
                ("review", err_variant(&r), expected)
            }
            6..=7 => {
                let pass = rng.gen_bool(0.8);
                let manifest = if pass {
                    passing_manifest(&mirror("x"))
                } else {
                    ValidationManifest {
                        entries: vec![ManifestEntry {
                            command: vec!["false".into()],
                            expected_exit_code: 0,
                            input_fixtures: BTreeMap::new(),
                            time_limit_seconds: 5,
                        }],
                    }
                };
                let r = self.fx.registry.validate(&m, &manifest);
                let quorum = self.quorum as usize;
                let expected = match self.model.get_mut(&m) {
                    None => "UnknownModule",
                    Some(s) if s.state != CertState::InReview || s.approvers.len() < quorum => "WrongState",
                    Some(s) => {
                        s.state = if pass { CertState::Validated } else { CertState::Rejected };
                        "Ok"
                    }
                };
                ("validate", err_variant(&r), expected)
            }
            8 => {
                let r = self.fx.registry.certify(&m);
                let expected = match &known {
                    None => "UnknownModule",
                    Some(s) if s.state != CertState::Validated => "WrongState",
                    Some(s) if !self.closure_certified(&s.deps) => "DependencyUncertified",
                    Some(_) => {
                        self.model.get_mut(&m).unwrap().state = CertState::Certified;
                        "Ok"
                    }
                };
                ("certify", err_variant(&r), expected)
            }
            _ => {
                let who = if rng.gen_bool(0.7) { AUTHORITY } else { REVIEWERS[1] };
                let order = RevocationOrder::sign(&m, "withdrawn", &self.signers[who], T0).unwrap();
                let r = self.fx.registry.revoke(&m, order);
                let expected = match &known {
                    None => "UnknownModule",
                    Some(s) if s.state != CertState::Certified => "WrongState",
                    Some(_) if who != AUTHORITY => "UnauthorizedRevocation",
                    Some(_) => {
                        self.model.get_mut(&m).unwrap().state = CertState::Revoked;
                        "Ok"
                    }
                };
                ("revoke", err_variant(&r), expected)
            }
        };
        let after = self.fx.registry.module(&m).ok().map(|r| r.state());
        let legal = match (before, after) {
            (Some(b), Some(a)) => a == b || hcmr_core::certify::is_legal_transition(b, a),
            (None, Some(a)) => matches!(a, CertState::Vetted | CertState::Rejected),
            (None, None) => true,
            (Some(_), None) => false,
        };
        let verdict = if legal { "legal" } else { "illegal" };
        (format!("{name} {m}"), got, if got == expected { verdict } else { expected })
    }
}

fn random_walks(seeds: &[u64], steps: usize) -> (usize, usize) {
    let mut illegal = 0;
    let mut total = 0;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool: Vec<ModuleId> = (0..12).map(|i| id(&format!("m{i}"), "1.0.0")).collect();
        let mut walk = Walk::new(rng.gen_range(1..=3));
        for step in 0..steps {
            let (op, got, outcome) = walk.step(&mut rng, &pool);
            match outcome {
                "legal" => {}
                "illegal" => illegal += 1,
                expected => panic!("seed {seed} step {step}: {op} returned {got}, model expected {expected}"),
            }
            total += 1;
        }
        let catalog = walk.fx.registry.catalog();
        for rec in catalog.records() {
            assert!(rec.certification.history_is_legal(), "seed {seed}: {}", rec.module);
            assert_eq!(rec.state(), walk.model[&rec.module].state, "seed {seed}: {}", rec.module);
        }
        let log = walk.fx.registry.log();
        let replayed = replay(&log.entries(0, log.size())).expect("replay");
        assert_eq!(replayed, *catalog, "seed {seed}: replay differs from live catalog");
    }
    (total, illegal)
}

pub fn run() -> String {
    let runs = exhaustive();
    let (steps, illegal) = random_walks(&[1, 2, 3], 10_000);
    assert_eq!(illegal, 0, "{illegal} illegal transitions");
    format!("{runs} exhaustive review sequences (quorum 1..=3, 4 reviewers); {steps} random steps in 3 walks, 0 illegal transitions")
}
