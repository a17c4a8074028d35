use exposure_core::crypto::vectors::{check_vector, parse_vectors};

#[test]
fn crypto_vectors() {
    let text = include_str!("vectors/crypto.txt");
    let vectors = parse_vectors(text).unwrap();
    assert!(vectors.len() >= 8);
    for mode in ["toymodp", "x25519", "rsa"] {
        assert!(vectors.iter().any(|v| v.mode == mode), "no {mode} vectors");
    }
    for v in &vectors {
        check_vector(v).unwrap_or_else(|e| panic!("line {}: {e}", v.line));
    }
}
