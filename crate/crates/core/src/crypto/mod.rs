//! Deterministic cryptographic primitives.

pub mod fixed;
pub mod multiexp;
pub mod paillier;
pub mod prime;
pub mod rng;
pub mod rsa;

pub use fixed::{FixedPoint, FRAC_BITS};
pub use paillier::{Ciphertext, Evaluator, PaillierKeyPair, PublicKey, SecretKey, Shadow};
pub use rng::{derive_rng, EmptyLabel, SeededRng};
pub use rsa::{RsaKeyPair, RsaPublicKey};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("plaintext outside the message space")]
    PlaintextOutOfRange,
    #[error("ciphertext outside [0, n^2)")]
    CiphertextOutOfRange,
    #[error("key mismatch: expected {expected}, found {found}")]
    KeyMismatch { expected: String, found: String },
    #[error("value is not invertible modulo n")]
    NotInvertible,
    #[error("malformed {0}")]
    Malformed(&'static str),
}
