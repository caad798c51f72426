//! Emulated replay-protected secure storage.
//!
//! The store models an RPMB partition: the write counter (MIC) lives in the
//! engine, out of reach of the rich OS, while the sealed blob lives in
//! storage the adversary can copy and overwrite at will.
//!
//! Blob layout:
//!
//! ```text
//! ┌─────────┬──────────┬───────────┬──────────────┐
//! │ version │ mic      │ tag       │ ciphertext   │
//! │ 1B      │ 8B (BE)  │ 16B       │ variable     │
//! └─────────┴──────────┴───────────┴──────────────┘
//! ```
//!
//! The ciphertext is ChaCha20-Poly1305 under the per-device key, with the
//! nonce derived from the mic and `version ‖ mic` as associated data. A read
//! first authenticates the blob (failure: tamper), then requires its mic to
//! equal the engine's (failure: rollback).

use chacha20poly1305::aead::{AeadInPlace, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode};

use super::TaState;

pub const STORE_FORMAT_VERSION: u8 = 1;
pub const MAC_LEN: usize = 16;
pub const BLOB_HEADER_LEN: usize = 1 + 8 + MAC_LEN;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("secure store is empty")]
    Empty,
    #[error("rollback detected: blob counter {stored}, engine counter {engine}")]
    RollbackDetected { stored: u64, engine: u64 },
    #[error("tamper detected")]
    TamperDetected,
    #[error("write counter exhausted")]
    CounterExhausted,
    #[error("state unencodable: {0}")]
    Encoding(#[from] CodecError),
}

#[derive(Clone)]
pub struct SecureStore {
    engine_mic: u64,
    key: [u8; 32],
    blob: Option<Vec<u8>>,
}

impl std::fmt::Debug for SecureStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureStore")
            .field("engine_mic", &self.engine_mic)
            .field("blob_len", &self.blob.as_ref().map(Vec::len))
            .finish()
    }
}

fn nonce_for(mic: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&mic.to_be_bytes());
    n.into()
}

fn header(mic: u64) -> [u8; 9] {
    let mut h = [0u8; 9];
    h[0] = STORE_FORMAT_VERSION;
    h[1..].copy_from_slice(&mic.to_be_bytes());
    h
}

impl SecureStore {
    pub fn new(mac_key: [u8; 32]) -> Self {
        Self {
            engine_mic: 0,
            key: mac_key,
            blob: None,
        }
    }

    /// Current engine counter.
    pub fn mic(&self) -> u64 {
        self.engine_mic
    }

    pub fn is_empty(&self) -> bool {
        self.blob.is_none()
    }

    fn cipher(&self) -> ChaCha20Poly1305 {
        ChaCha20Poly1305::new(Key::from_slice(&self.key))
    }

    /// Seals `state` under the next counter value and replaces the blob.
    /// Either the whole write lands or nothing changes.
    pub fn write(&mut self, state: &TaState) -> Result<(), StoreError> {
        let mic = self
            .engine_mic
            .checked_add(1)
            .ok_or(StoreError::CounterExhausted)?;
        let mut body = state.encode()?;
        let head = header(mic);
        let tag = self
            .cipher()
            .encrypt_in_place_detached(&nonce_for(mic), &head, &mut body)
            .map_err(|_| StoreError::TamperDetected)?;

        let mut blob = Vec::with_capacity(BLOB_HEADER_LEN + body.len());
        blob.extend_from_slice(&head);
        blob.extend_from_slice(&tag);
        blob.extend_from_slice(&body);

        self.blob = Some(blob);
        self.engine_mic = mic;
        Ok(())
    }

    pub fn read(&self) -> Result<TaState, StoreError> {
        let blob = self.blob.as_deref().ok_or(StoreError::Empty)?;
        self.verify_blob(blob)
    }

    /// Checks an arbitrary blob against this engine exactly as [`read`]
    /// would.
    ///
    /// [`read`]: SecureStore::read
    pub fn verify_blob(&self, blob: &[u8]) -> Result<TaState, StoreError> {
        if blob.len() < BLOB_HEADER_LEN || blob[0] != STORE_FORMAT_VERSION {
            return Err(StoreError::TamperDetected);
        }
        let stored = u64::from_be_bytes(blob[1..9].try_into().expect("length checked"));
        let tag = Tag::from_slice(&blob[9..BLOB_HEADER_LEN]);
        let mut body = blob[BLOB_HEADER_LEN..].to_vec();
        self.cipher()
            .decrypt_in_place_detached(&nonce_for(stored), &blob[..9], &mut body, tag)
            .map_err(|_| StoreError::TamperDetected)?;
        if stored != self.engine_mic {
            return Err(StoreError::RollbackDetected {
                stored,
                engine: self.engine_mic,
            });
        }
        TaState::decode(&body).map_err(|_| StoreError::TamperDetected)
    }

    /// The sealed blob as it sits in untrusted storage.
    pub fn blob(&self) -> Option<&[u8]> {
        self.blob.as_deref()
    }

    /// Overwrites untrusted storage directly, bypassing the engine.
    pub fn replace_blob(&mut self, blob: Vec<u8>) {
        self.blob = Some(blob);
    }
}
