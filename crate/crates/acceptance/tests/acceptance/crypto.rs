use hcmr_core::digests::{canonicalize, content_digest, DependencyRef, Digest, Version};
use hcmr_core::provenance::{generate_statement, pae, verify_envelope, wrap_envelope, TrustRootSet};
use hcmr_core::signing::{verify_signature, EphemeralSigner, SigningHandle, DEFAULT_AUDIENCE};
use hcmr_testkit::{build_record, Pki, T0};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ring::signature::{UnparsedPublicKey, ED25519};

const ROUNDS: usize = 1000;
const MUTATIONS: usize = 1000;

fn ring_verifies(public: &[u8], message: &[u8], sig: &[u8]) -> bool {
    UnparsedPublicKey::new(&ED25519, public).verify(message, sig).is_ok()
}

fn random_bytes(rng: &mut impl Rng, max: usize) -> Vec<u8> {
    let n = rng.gen_range(0..=max);
    (0..n).map(|_| rng.gen()).collect()
}

fn flip(rng: &mut impl Rng, bytes: &mut [u8]) {
    let i = rng.gen_range(0..bytes.len());
    bytes[i] ^= rng.gen_range(1..=255u8);
}

fn signer(pki: &Pki, rng: &mut impl Rng, subject: &str) -> EphemeralSigner {
    let assertion = pki.idp.assert_identity(subject, DEFAULT_AUDIENCE, T0, 300);
    EphemeralSigner::enroll_with(&pki.ca, &assertion, SigningHandle::from_seed(rng.gen()), T0).expect("enroll")
}

fn random_deps(rng: &mut impl Rng) -> Vec<DependencyRef> {
    (0..rng.gen_range(0..4))
        .map(|i| {
            let version = Version::new(rng.gen_range(0..5), rng.gen_range(0..5), i);
            DependencyRef::new(format!("dep{}", rng.gen_range(0..100)), version, content_digest(&random_bytes(rng, 16)))
                .unwrap()
        })
        .collect()
}

pub fn run() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let pki = Pki::new();
    let root = pki.ca.root();
    let roots = TrustRootSet::single(root);

    for i in 0..ROUNDS {
        let subject = format!("user{i}@example.org");
        let s = signer(&pki, &mut rng, &subject);
        let signed_at = T0.plus_secs(rng.gen_range(0..600));
        let checked_at = signed_at.plus_secs(rng.gen_range(0..=600 - (signed_at.unix() - T0.unix())));

        let digest = content_digest(&random_bytes(&mut rng, 512));
        let bundle = s.sign_artifact(&digest, signed_at).unwrap();
        assert_eq!(verify_signature(&bundle, &digest, &root, checked_at).as_deref(), Ok(subject.as_str()), "round {i}");
        assert!(ring_verifies(s.certificate().public_key.as_bytes(), digest.as_bytes(), &bundle.signature));
        let cert_body = canonicalize(&bundle.certificate.body());
        assert!(ring_verifies(root.as_bytes(), &cert_body, &bundle.certificate.issuer_signature));

        let subject_digest = content_digest(&random_bytes(&mut rng, 512));
        let statement = generate_statement(&build_record(), subject_digest, &random_deps(&mut rng), signed_at).unwrap();
        let env = wrap_envelope(&statement, &s, signed_at).unwrap();
        assert_eq!(verify_envelope(&env, &roots, checked_at).unwrap(), statement, "round {i}");
        let sig = &env.signatures[0];
        assert!(ring_verifies(sig.cert.public_key.as_bytes(), &pae(&env.payload_type, &env.payload), &sig.sig));
    }

    let s = signer(&pki, &mut rng, "mutant@example.org");
    let mut by_target = [0usize; 6];
    for i in 0..MUTATIONS {
        let digest = content_digest(&random_bytes(&mut rng, 256));
        let bundle = s.sign_artifact(&digest, T0).unwrap();
        let statement = generate_statement(&build_record(), digest, &random_deps(&mut rng), T0).unwrap();
        let env = wrap_envelope(&statement, &s, T0).unwrap();
        let target = i % by_target.len();
        by_target[target] += 1;
        let rejected = match target {
            0 => {
                let mut b = bundle.clone();
                flip(&mut rng, &mut b.signature);
                verify_signature(&b, &digest, &root, T0).is_err()
            }
            1 => {
                let mut raw = *digest.as_bytes();
                flip(&mut rng, &mut raw);
                verify_signature(&bundle, &Digest::from_bytes(raw), &root, T0).is_err()
            }
            2 => {
                let mut b = bundle.clone();
                flip(&mut rng, &mut b.certificate.issuer_signature);
                verify_signature(&b, &digest, &root, T0).is_err()
            }
            3 => {
                let mut b = bundle.clone();
                let mut subject = b.certificate.subject.clone().into_bytes();
                let i = rng.gen_range(0..subject.len());
                subject[i] = if subject[i] == b'x' { b'y' } else { b'x' };
                b.certificate.subject = String::from_utf8(subject).unwrap();
                verify_signature(&b, &digest, &root, T0).is_err()
            }
            4 => {
                let mut e = env.clone();
                flip(&mut rng, &mut e.payload);
                verify_envelope(&e, &roots, T0).is_err()
            }
            _ => {
                let mut e = env.clone();
                flip(&mut rng, &mut e.signatures[0].sig);
                verify_envelope(&e, &roots, T0).is_err()
            }
        };
        assert!(rejected, "mutation {i} (target {target}) was accepted");
    }
    format!(
        "{ROUNDS} sign/verify and {ROUNDS} wrap/verify round-trips; {MUTATIONS} single-byte mutations rejected \
         (signature {}, digest {}, issuer signature {}, subject {}, payload {}, envelope signature {})",
        by_target[0], by_target[1], by_target[2], by_target[3], by_target[4], by_target[5]
    )
}
