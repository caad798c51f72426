//! Offline payment system for a retail digital currency.
//!
//! A central server keeps online accounts. Each client runs a wallet (UA)
//! next to a trusted application (TA) inside its device's TEE; the TA holds
//! the offline balance in replay-protected storage and signs payments that
//! any receiver can verify with the server key alone.

pub mod codec;
pub mod crypto;
pub mod server;
pub mod ta;
pub mod wallet;

pub use codec::{Payment, PaymentKey, WireKind, WireMessage};
pub use crypto::{Certificate, KeyPair, SecurityConfig, Signature, VerifyingKey};
pub use server::{Server, ServerError};
pub use ta::{TaError, TrustedApp};
pub use wallet::{pay_verify, Wallet, WalletError};

#[cfg(test)]
pub(crate) mod testkit;
