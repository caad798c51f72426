//! The offline-payment trusted application.
//!
//! Every method loads state from the [`SecureStore`], mutates a copy and
//! seals it back before producing any output. Nothing is cached between
//! calls, so a rolled-back or tampered blob stops the TA on its next call.

mod store;

pub use store::{SecureStore, StoreError, BLOB_HEADER_LEN, MAC_LEN, STORE_FORMAT_VERSION};

use std::collections::BTreeSet;

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{
    decode_set, encode_set, CodecError, Decode, Encode, Payment, PaymentKey, Reader, Writer,
};
use crate::crypto::{
    balance_attestation_bytes, cert_verify, deposit_confirmation_bytes, hw_cert_verify, keygen,
    withdraw_confirmation_bytes, Certificate, KeyPair, SecurityConfig, Signature, VerifyingKey,
};
use crate::wallet::{pay_verify, DeviceIdentity};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaError {
    #[error("already initialized")]
    AlreadyInitialized,
    #[error("not initialized")]
    NotInitialized,
    #[error("not activated")]
    NotActivated,
    #[error("invalid certificate")]
    InvalidCertificate,
    #[error("certificate not mine")]
    CertificateNotMine,
    #[error("counter out of sync: expected {expected}, got {got}")]
    CounterOutOfSync { expected: u64, got: u64 },
    #[error("invalid confirmation")]
    InvalidConfirmation,
    #[error("insufficient offline funds")]
    InsufficientOfflineFunds,
    #[error("amount must be at least 1")]
    ZeroAmount,
    #[error("bad receiver")]
    BadReceiver,
    #[error("invalid payment")]
    InvalidPayment,
    #[error("not addressed to me")]
    NotAddressedToMe,
    #[error("already collected")]
    AlreadyCollected,
    #[error("counter exhausted")]
    CounterExhausted,
    #[error("crashed after persisting")]
    Crashed,
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Persistent TA state. Lives only inside the secure store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaState {
    pub keys: KeyPair,
    pub bal: u64,
    pub cert: Option<Certificate>,
    pub iplog: BTreeSet<PaymentKey>,
    pub id: u64,
    pub pid: u64,
}

impl TaState {
    pub fn fresh(keys: KeyPair) -> Self {
        Self {
            keys,
            bal: 0,
            cert: None,
            iplog: BTreeSet::new(),
            id: 0,
            pid: 0,
        }
    }
}

impl Encode for TaState {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.put(&self.keys)?.u64(self.bal).put(&self.cert)?;
        encode_set(w, self.iplog.iter())?;
        w.u64(self.id).u64(self.pid);
        Ok(())
    }
}

impl Decode for TaState {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            keys: r.get()?,
            bal: r.u64()?,
            cert: r.get()?,
            iplog: decode_set(r, 44)?,
            id: r.u64()?,
            pid: r.u64()?,
        })
    }
}

/// Signed TA output for the withdraw protocol: `[x, id, σ]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WithdrawConfirmation {
    pub amount: u64,
    pub id: u64,
    pub sig: Signature,
}

impl WithdrawConfirmation {
    pub fn verify(&self, ta_vk: &VerifyingKey) -> bool {
        ta_vk.verify(
            &withdraw_confirmation_bytes(self.amount, self.id),
            &self.sig,
        )
    }
}

impl Encode for WithdrawConfirmation {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u64(self.amount).u64(self.id).put(&self.sig)?;
        Ok(())
    }
}

impl Decode for WithdrawConfirmation {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            amount: r.u64()?,
            id: r.u64()?,
            sig: r.get()?,
        })
    }
}

/// Signed balance report: `[bal, id, σ]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceAttestation {
    pub bal: u64,
    pub id: u64,
    pub sig: Signature,
}

impl BalanceAttestation {
    pub fn verify(&self, ta_vk: &VerifyingKey) -> bool {
        ta_vk.verify(&balance_attestation_bytes(self.bal, self.id), &self.sig)
    }
}

/// Fault-injection point inside the TA.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaCrashPoint {
    /// `pay` persisted the debit but dies before releasing the payment.
    PayAfterPersist,
}

/// Read-only view of TA state without key material.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaView {
    pub vk: VerifyingKey,
    pub bal: u64,
    pub cert: Option<Certificate>,
    pub iplog: BTreeSet<PaymentKey>,
    pub id: u64,
    pub pid: u64,
}

impl From<&TaState> for TaView {
    fn from(s: &TaState) -> Self {
        Self {
            vk: s.keys.vk,
            bal: s.bal,
            cert: s.cert.clone(),
            iplog: s.iplog.clone(),
            id: s.id,
            pid: s.pid,
        }
    }
}

/// A provisioned OPS TA instance on one device.
#[derive(Debug, Clone)]
pub struct TrustedApp {
    config: SecurityConfig,
    server_vk: VerifyingKey,
    store: SecureStore,
    crash: Option<TaCrashPoint>,
}

impl TrustedApp {
    /// Installs the TA binary with the server key baked in. The store key
    /// is derived from the device secret.
    pub fn provision(
        config: SecurityConfig,
        server_vk: VerifyingKey,
        device: &DeviceIdentity,
    ) -> Self {
        Self {
            config,
            server_vk,
            store: SecureStore::new(device.storage_key()),
            crash: None,
        }
    }

    pub fn server_vk(&self) -> &VerifyingKey {
        &self.server_vk
    }

    pub fn store(&self) -> &SecureStore {
        &self.store
    }

    /// Raw access to untrusted storage, for fault and attack injection.
    pub fn store_mut(&mut self) -> &mut SecureStore {
        &mut self.store
    }

    pub fn arm_crash(&mut self, point: TaCrashPoint) {
        self.crash = Some(point);
    }

    pub fn disarm_crash(&mut self) {
        self.crash = None;
    }

    pub fn view(&self) -> Result<TaView, StoreError> {
        Ok(TaView::from(&self.store.read()?))
    }

    pub fn view_of_blob(&self, blob: &[u8]) -> Result<TaView, StoreError> {
        Ok(TaView::from(&self.store.verify_blob(blob)?))
    }

    fn load(&self) -> Result<TaState, TaError> {
        match self.store.read() {
            Ok(s) => Ok(s),
            Err(StoreError::Empty) => Err(TaError::NotInitialized),
            Err(e) => Err(e.into()),
        }
    }

    fn load_active(&self) -> Result<(TaState, Certificate), TaError> {
        let state = self.load()?;
        let cert = state.cert.clone().ok_or(TaError::NotActivated)?;
        Ok((state, cert))
    }

    pub fn init<R: RngCore + CryptoRng>(
        &mut self,
        device: &DeviceIdentity,
        rng: &mut R,
    ) -> Result<(VerifyingKey, Signature), TaError> {
        if !self.store.is_empty() {
            return Err(TaError::AlreadyInitialized);
        }
        let keys = keygen(&self.config, rng);
        let vk = keys.vk;
        self.store.write(&TaState::fresh(keys))?;
        Ok((vk, device.attest(&vk)))
    }

    pub fn cert_init(&mut self, cert: &Certificate) -> Result<(), TaError> {
        let mut state = self.load()?;
        if !hw_cert_verify(cert, &self.server_vk) {
            return Err(TaError::InvalidCertificate);
        }
        if cert.vk != state.keys.vk {
            return Err(TaError::CertificateNotMine);
        }
        state.cert = Some(cert.clone());
        self.store.write(&state)?;
        Ok(())
    }

    pub fn deposit(&mut self, amount: u64, id: u64, server_sig: &Signature) -> Result<(), TaError> {
        let (mut state, _) = self.load_active()?;
        let expected = state.id.checked_add(1).ok_or(TaError::CounterExhausted)?;
        if id != expected {
            return Err(TaError::CounterOutOfSync { expected, got: id });
        }
        if !self.server_vk.verify(
            &deposit_confirmation_bytes(&state.keys.vk, amount, id),
            server_sig,
        ) {
            return Err(TaError::InvalidConfirmation);
        }
        if amount == 0 {
            return Err(TaError::ZeroAmount);
        }
        state.bal = state
            .bal
            .checked_add(amount)
            .ok_or(TaError::CounterExhausted)?;
        state.id = id;
        self.store.write(&state)?;
        Ok(())
    }

    pub fn withdraw(&mut self, amount: u64) -> Result<WithdrawConfirmation, TaError> {
        let (mut state, _) = self.load_active()?;
        if amount == 0 {
            return Err(TaError::ZeroAmount);
        }
        if amount > state.bal {
            return Err(TaError::InsufficientOfflineFunds);
        }
        state.bal -= amount;
        state.id = state.id.checked_add(1).ok_or(TaError::CounterExhausted)?;
        let sig = state
            .keys
            .sign(&withdraw_confirmation_bytes(amount, state.id));
        let id = state.id;
        self.store.write(&state)?;
        Ok(WithdrawConfirmation { amount, id, sig })
    }

    pub fn pay(&mut self, amount: u64, receiver: &Certificate) -> Result<Payment, TaError> {
        let (mut state, own_cert) = self.load_active()?;
        if amount == 0 {
            return Err(TaError::ZeroAmount);
        }
        if !(cert_verify(receiver, &self.server_vk) || hw_cert_verify(receiver, &self.server_vk)) {
            return Err(TaError::BadReceiver);
        }
        if state.bal < amount {
            return Err(TaError::InsufficientOfflineFunds);
        }
        state.bal -= amount;
        state.pid = state.pid.checked_add(1).ok_or(TaError::CounterExhausted)?;
        let mut payment = Payment {
            amount,
            sender: own_cert,
            receiver: receiver.clone(),
            index: state.pid,
            sig: Signature([0; 64]),
            created_at: None,
        };
        payment.sig = state.keys.sign(&payment.signed_bytes());

        // debit is durable before the payment leaves the TA
        self.store.write(&state)?;
        if self.crash.take() == Some(TaCrashPoint::PayAfterPersist) {
            return Err(TaError::Crashed);
        }
        Ok(payment)
    }

    pub fn collect(&mut self, payment: &Payment) -> Result<(), TaError> {
        let (mut state, own_cert) = self.load_active()?;
        if !pay_verify(payment, &self.server_vk) {
            return Err(TaError::InvalidPayment);
        }
        if payment.receiver != own_cert {
            return Err(TaError::NotAddressedToMe);
        }
        let key = payment.key();
        if state.iplog.contains(&key) {
            return Err(TaError::AlreadyCollected);
        }
        state.bal = state
            .bal
            .checked_add(payment.amount)
            .ok_or(TaError::CounterExhausted)?;
        state.iplog.insert(key);
        self.store.write(&state)?;
        Ok(())
    }

    pub fn get_balance(&self) -> Result<BalanceAttestation, TaError> {
        let (state, _) = self.load_active()?;
        let sig = state
            .keys
            .sign(&balance_attestation_bytes(state.bal, state.id));
        Ok(BalanceAttestation {
            bal: state.bal,
            id: state.id,
            sig,
        })
    }

    pub fn vk(&self) -> Result<VerifyingKey, TaError> {
        Ok(self.load()?.keys.vk)
    }

    pub fn cert(&self) -> Result<Option<Certificate>, TaError> {
        Ok(self.load()?.cert)
    }
}
