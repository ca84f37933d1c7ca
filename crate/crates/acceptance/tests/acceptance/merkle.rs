use hcmr_core::digests::Digest;
use hcmr_core::translog::{verify_consistency, verify_inclusion, MerkleTree};
use hcmr_testkit::oracle::{self, Hash};

const MAX: usize = 64;

fn d(h: &Hash) -> Digest {
    Digest::from_bytes(*h)
}

pub fn run() -> String {
    let leaves: Vec<Hash> = (0..MAX).map(|i| oracle::leaf(format!("entry-{i}").as_bytes())).collect();
    let tree = MerkleTree::from_leaf_hashes(leaves.iter().map(d));
    let roots: Vec<Digest> = (0..=MAX).map(|n| d(&oracle::mth(&leaves[..n]))).collect();
    let forged = d(&oracle::leaf(b"forged"));
    let (mut inclusion, mut consistency) = (0, 0);

    for n in 1..=MAX {
        assert_eq!(tree.root(n as u64).unwrap(), roots[n], "root of size {n}");
        for m in 0..n {
            let proof = tree.inclusion_proof(m as u64, n as u64).unwrap();
            let expected: Vec<Digest> = oracle::inclusion_path(m, &leaves[..n]).iter().map(d).collect();
            assert_eq!(proof.path, expected, "inclusion path {m}/{n}");
            assert!(verify_inclusion(&proof, &d(&leaves[m]), &roots[n]), "inclusion {m}/{n}");
            assert!(!verify_inclusion(&proof, &forged, &roots[n]), "forged leaf {m}/{n}");
            inclusion += 1;
        }
        for m in 0..=n {
            let proof = tree.consistency_proof(m as u64, n as u64).unwrap();
            let expected: Vec<Digest> = oracle::consistency_path(m, &leaves[..n]).iter().map(d).collect();
            assert_eq!(proof.path, expected, "consistency path {m}/{n}");
            assert!(verify_consistency(&proof, &roots[m], &roots[n]), "consistency {m}/{n}");
            if m > 0 && m < n {
                assert!(!verify_consistency(&proof, &forged, &roots[n]), "forged old root {m}/{n}");
                assert!(!verify_consistency(&proof, &roots[m], &forged), "forged new root {m}/{n}");
            }
            consistency += 1;
        }
    }
    format!("{inclusion} inclusion and {consistency} consistency proofs for sizes 1..={MAX}")
}
