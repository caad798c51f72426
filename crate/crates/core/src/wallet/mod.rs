//! The client wallet (UA).
//!
//! The wallet holds the user's own key pair and drives the server-facing
//! protocols. All offline value lives in the TA on its [`SecureDevice`];
//! the wallet never holds funds itself.
//!
//! Deposit and withdraw keep the signed request until the round completes.
//! If the link drops mid-round, [`Wallet::resume`] resends the identical
//! request; the server answers a resend with its cached reply, so neither
//! side applies the operation twice. While a round is pending the wallet
//! refuses other server operations, which keeps that cached reply current.

mod channel;
mod device;
mod snapshot;
mod verify;

pub use channel::{ChannelError, LocalChannel, ServerChannel, StreamChannel};
pub use device::{device_chain_verify, DeviceError, DeviceIdentity, OemAuthority, SecureDevice};
pub use snapshot::WALLET_SNAPSHOT_VERSION;
pub use verify::pay_verify;

use std::collections::BTreeSet;

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{
    AuthedRequest, CodecError, Decode, Encode, Payment, PaymentKey, WireKind, WireMessage,
};
use crate::crypto::{
    cert_verify, deposit_confirmation_bytes, hw_cert_verify, keygen, CertKind, Certificate,
    KeyPair, SecurityConfig, VerifyingKey,
};
use crate::server::{ServerError, ServerReply};
use crate::ta::{TaError, TrustedApp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WalletError {
    #[error("wallet not registered")]
    NotRegistered,
    #[error("no secure device attached")]
    NoDevice,
    #[error("amount must be at least 1")]
    ZeroAmount,
    #[error("another server operation is pending")]
    PendingOperation,
    #[error("no pending operation")]
    NoPendingOperation,
    #[error("receiver certificate rejected")]
    BadReceiverCert,
    #[error("payment not in inbox")]
    NotInInbox,
    #[error("unexpected {0:?} reply")]
    UnexpectedReply(WireKind),
    #[error("bad server cert")]
    BadServerCert,
    #[error("server reply failed verification")]
    BadServerReply,
    #[error("TA activation failed: {0}")]
    ActivationFailed(TaError),
    #[error("request nonces exhausted")]
    NonceExhausted,
    #[error("wallet crashed")]
    Crashed,
    #[error(transparent)]
    Ta(#[from] TaError),
    #[error("server: {0}")]
    Server(#[from] ServerError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Why an incoming payment was refused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Rejection {
    #[error("invalid payment")]
    InvalidPayment,
    #[error("wrong receiver")]
    WrongReceiver,
    #[error("amount mismatch")]
    AmountMismatch,
    #[error("payment already accepted")]
    Replayed,
}

/// What a receiver hands to the payer: amount plus the certificate to pay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PayRequest {
    pub amount: u64,
    pub receiver: Certificate,
}

impl PayRequest {
    pub fn to_message(&self) -> WireMessage {
        WireMessage::PayReq {
            amount: self.amount,
            receiver: self.receiver.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Accepted {
    pub key: PaymentKey,
    /// Outcome of the immediate TA collect for TA-addressed payments.
    pub collected: Option<Result<(), TaError>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaimOutcome {
    Credited,
    AlreadyClaimed,
}

/// Fault-injection points inside the wallet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalletCrashPoint {
    /// The TA has debited and signed; the request never leaves.
    WithdrawBeforeSend,
    /// The confirmation arrived but is not handed to the TA.
    DepositBeforeApply,
}

#[derive(Debug, Clone)]
pub struct Wallet {
    config: SecurityConfig,
    server_vk: VerifyingKey,
    keys: KeyPair,
    cert: Option<Certificate>,
    device: Option<SecureDevice>,
    iplog: BTreeSet<PaymentKey>,
    inbox: Vec<Payment>,
    redeemed: Vec<Payment>,
    sent: Vec<Payment>,
    next_nonce: u64,
    pending_deposit: Option<AuthedRequest>,
    pending_withdraw: Option<AuthedRequest>,
    crash: Option<WalletCrashPoint>,
}

impl Wallet {
    pub fn new(config: SecurityConfig, server_vk: VerifyingKey, keys: KeyPair) -> Self {
        Self {
            config,
            server_vk,
            keys,
            cert: None,
            device: None,
            iplog: BTreeSet::new(),
            inbox: Vec::new(),
            redeemed: Vec::new(),
            sent: Vec::new(),
            next_nonce: 1,
            pending_deposit: None,
            pending_withdraw: None,
            crash: None,
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(
        config: SecurityConfig,
        server_vk: VerifyingKey,
        rng: &mut R,
    ) -> Self {
        let keys = keygen(&config, rng);
        Self::new(config, server_vk, keys)
    }

    pub fn with_device(mut self, device: SecureDevice) -> Self {
        self.device = Some(device);
        self
    }

    pub fn vk(&self) -> VerifyingKey {
        self.keys.vk
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    pub fn server_vk(&self) -> &VerifyingKey {
        &self.server_vk
    }

    pub fn cert(&self) -> Option<&Certificate> {
        self.cert.as_ref()
    }

    pub fn device(&self) -> Option<&SecureDevice> {
        self.device.as_ref()
    }

    pub fn device_mut(&mut self) -> Option<&mut SecureDevice> {
        self.device.as_mut()
    }

    pub fn ta(&self) -> Option<&TrustedApp> {
        self.device.as_ref()?.ta()
    }

    pub fn ta_mut(&mut self) -> Option<&mut TrustedApp> {
        self.device.as_mut()?.ta_mut()
    }

    fn require_ta(&mut self) -> Result<&mut TrustedApp, WalletError> {
        let device = self.device.as_mut().ok_or(WalletError::NoDevice)?;
        device
            .ta_mut()
            .ok_or(WalletError::Device(DeviceError::NoTa))
    }

    /// True iff the TA holds a server certificate and its store is readable.
    pub fn is_ta_active(&self) -> bool {
        matches!(self.ta().map(TrustedApp::cert), Some(Ok(Some(_))))
    }

    /// Attested offline balance, straight from the TA.
    pub fn offline_balance(&self) -> Result<u64, WalletError> {
        let ta = self.ta().ok_or(WalletError::NoDevice)?;
        Ok(ta.get_balance()?.bal)
    }

    pub fn iplog(&self) -> &BTreeSet<PaymentKey> {
        &self.iplog
    }

    /// Accepted payments not yet claimed or collected.
    pub fn inbox(&self) -> &[Payment] {
        &self.inbox
    }

    pub fn redeemed(&self) -> &[Payment] {
        &self.redeemed
    }

    pub fn sent(&self) -> &[Payment] {
        &self.sent
    }

    pub fn next_nonce(&self) -> u64 {
        self.next_nonce
    }

    pub fn pending_deposit(&self) -> Option<&AuthedRequest> {
        self.pending_deposit.as_ref()
    }

    pub fn pending_withdraw(&self) -> Option<&AuthedRequest> {
        self.pending_withdraw.as_ref()
    }

    /// Amount debited from the TA whose withdraw the server has not confirmed.
    pub fn pending_withdraw_amount(&self) -> u64 {
        match self.pending_withdraw.as_ref().map(|r| &r.message) {
            Some(WireMessage::WithdrawReq { amount, .. }) => *amount,
            _ => 0,
        }
    }

    pub fn arm_crash(&mut self, point: WalletCrashPoint) {
        self.crash = Some(point);
    }

    pub fn disarm_crash(&mut self) {
        self.crash = None;
    }

    fn crash_at(&mut self, point: WalletCrashPoint) -> bool {
        if self.crash == Some(point) {
            self.crash = None;
            return true;
        }
        false
    }

    fn ensure_idle(&self) -> Result<(), WalletError> {
        if self.pending_deposit.is_some() || self.pending_withdraw.is_some() {
            return Err(WalletError::PendingOperation);
        }
        Ok(())
    }

    fn ensure_online<C: ServerChannel + ?Sized>(ch: &C) -> Result<(), WalletError> {
        if !ch.is_connected() {
            return Err(ChannelError::Offline.into());
        }
        Ok(())
    }

    fn authed(&mut self, message: WireMessage) -> Result<AuthedRequest, WalletError> {
        let nonce = self.next_nonce;
        let req = AuthedRequest::sign(message, nonce, &self.keys)?;
        self.next_nonce = nonce.checked_add(1).ok_or(WalletError::NonceExhausted)?;
        Ok(req)
    }

    fn call<C: ServerChannel + ?Sized>(
        ch: &mut C,
        req: &AuthedRequest,
    ) -> Result<WireMessage, WalletError> {
        let reply = ch.exchange(&req.encode()?)?;
        Ok(ServerReply::decode(&reply)?.into_result()?)
    }

    /// Signs and sends an arbitrary message, bypassing every wallet-side
    /// check. Models a compromised client.
    pub fn send_raw<C: ServerChannel + ?Sized>(
        &mut self,
        ch: &mut C,
        message: WireMessage,
    ) -> Result<WireMessage, WalletError> {
        let req = self.authed(message)?;
        Self::call(ch, &req)
    }

    pub fn setup_client<C: ServerChannel + ?Sized>(
        &mut self,
        ch: &mut C,
    ) -> Result<Certificate, WalletError> {
        Self::ensure_online(ch)?;
        let req = self.authed(WireMessage::ClientRegister { vk: self.keys.vk })?;
        match Self::call(ch, &req)? {
            WireMessage::ClientRegisterAck { cert } => {
                if !cert_verify(&cert, &self.server_vk) || cert.vk != self.keys.vk {
                    return Err(WalletError::BadServerCert);
                }
                self.cert = Some(cert.clone());
                Ok(cert)
            }
            other => Err(WalletError::UnexpectedReply(other.kind())),
        }
    }

    /// Provisions and activates the TA on the attached device.
    pub fn setup_ta<C: ServerChannel + ?Sized, R: RngCore + CryptoRng>(
        &mut self,
        ch: &mut C,
        rng: &mut R,
    ) -> Result<Certificate, WalletError> {
        self.ensure_idle()?;
        Self::ensure_online(ch)?;
        let (config, server_vk) = (self.config, self.server_vk);
        let device = self.device.as_mut().ok_or(WalletError::NoDevice)?;
        device.provision_ta(config, server_vk);
        let identity = device.identity.clone();
        let ta = device.ta_mut().expect("just provisioned");
        // a TA left unactivated by an earlier failed attempt keeps its key
        let ta_vk = match ta.vk() {
            Ok(_) if ta.cert()?.is_some() => return Err(TaError::AlreadyInitialized.into()),
            Ok(vk) => vk,
            Err(TaError::NotInitialized) => ta.init(&identity, rng)?.0,
            Err(e) => return Err(e.into()),
        };
        let attestation = device.tos_attest(&ta_vk)?;
        let req = self.authed(WireMessage::TaRegister {
            device_vk: identity.vk(),
            device_model: identity.model.clone(),
            device_cert: identity.oem_cert,
            ta_vk,
            ua_vk: self.keys.vk,
            attestation,
        })?;
        match Self::call(ch, &req)? {
            WireMessage::TaRegisterAck { cert } => {
                self.require_ta()?
                    .cert_init(&cert)
                    .map_err(WalletError::ActivationFailed)?;
                Ok(cert)
            }
            other => Err(WalletError::UnexpectedReply(other.kind())),
        }
    }

    /// Moves `amount` from the online account into the TA.
    pub fn do_deposit<C: ServerChannel + ?Sized>(
        &mut self,
        ch: &mut C,
        amount: u64,
    ) -> Result<(), WalletError> {
        if amount == 0 {
            return Err(WalletError::ZeroAmount);
        }
        self.ensure_idle()?;
        // refuse before the server debits if the TA cannot take the value
        self.require_ta()?.get_balance()?;
        Self::ensure_online(ch)?;
        let req = self.authed(WireMessage::DepositReq { amount })?;
        self.pending_deposit = Some(req);
        self.finish_deposit(ch)
    }

    fn finish_deposit<C: ServerChannel + ?Sized>(&mut self, ch: &mut C) -> Result<(), WalletError> {
        let req = self
            .pending_deposit
            .clone()
            .ok_or(WalletError::NoPendingOperation)?;
        let WireMessage::DepositReq { amount } = req.message else {
            unreachable!("pending deposit holds a deposit request")
        };
        let reply = match Self::call(ch, &req) {
            Ok(m) => m,
            // the session moved on; whether this request landed is unknown
            Err(WalletError::Server(ServerError::ReplayedRequest)) => {
                return Err(ServerError::ReplayedRequest.into());
            }
            Err(WalletError::Server(e)) => {
                // refused: nothing was debited
                self.pending_deposit = None;
                return Err(e.into());
            }
            Err(e) => return Err(e),
        };
        let WireMessage::DepositConfirmed {
            amount: got,
            id,
            sig,
        } = reply
        else {
            return Err(WalletError::UnexpectedReply(reply.kind()));
        };
        let ta_vk = self.require_ta()?.vk()?;
        if got != amount
            || !self
                .server_vk
                .verify(&deposit_confirmation_bytes(&ta_vk, got, id), &sig)
        {
            return Err(WalletError::BadServerReply);
        }
        if self.crash_at(WalletCrashPoint::DepositBeforeApply) {
            return Err(WalletError::Crashed);
        }
        match self.require_ta()?.deposit(amount, id, &sig) {
            Ok(()) => {}
            // a previous attempt already landed in the TA
            Err(TaError::CounterOutOfSync { expected, got }) if got < expected => {}
            Err(e) => return Err(e.into()),
        }
        self.pending_deposit = None;
        Ok(())
    }

    /// Moves `amount` from the TA back to the online account.
    pub fn do_withdraw<C: ServerChannel + ?Sized>(
        &mut self,
        ch: &mut C,
        amount: u64,
    ) -> Result<(), WalletError> {
        if amount == 0 {
            return Err(WalletError::ZeroAmount);
        }
        self.ensure_idle()?;
        Self::ensure_online(ch)?;
        let conf = self.require_ta()?.withdraw(amount)?;
        let req = self.authed(WireMessage::WithdrawReq {
            amount: conf.amount,
            id: conf.id,
            sig: conf.sig,
        })?;
        self.pending_withdraw = Some(req);
        if self.crash_at(WalletCrashPoint::WithdrawBeforeSend) {
            return Err(WalletError::Crashed);
        }
        self.finish_withdraw(ch)
    }

    fn finish_withdraw<C: ServerChannel + ?Sized>(
        &mut self,
        ch: &mut C,
    ) -> Result<(), WalletError> {
        let req = self
            .pending_withdraw
            .clone()
            .ok_or(WalletError::NoPendingOperation)?;
        // the TA has already debited, so the request is kept until confirmed
        match Self::call(ch, &req)? {
            WireMessage::WithdrawConfirmed => {
                self.pending_withdraw = None;
                Ok(())
            }
            other => Err(WalletError::UnexpectedReply(other.kind())),
        }
    }

    /// Completes an interrupted deposit or withdraw by resending the
    /// identical request.
    pub fn resume<C: ServerChannel + ?Sized>(&mut self, ch: &mut C) -> Result<(), WalletError> {
        Self::ensure_online(ch)?;
        if self.pending_withdraw.is_some() {
            self.finish_withdraw(ch)
        } else if self.pending_deposit.is_some() {
            self.finish_deposit(ch)
        } else {
            Err(WalletError::NoPendingOperation)
        }
    }

    /// Asks to be paid into the TA if it is active, else into the UA.
    pub fn request_payment(&self, amount: u64) -> Result<PayRequest, WalletError> {
        let ta_cert = self.ta().and_then(|ta| ta.cert().ok().flatten());
        match ta_cert {
            Some(cert) if amount > 0 => Ok(PayRequest {
                amount,
                receiver: cert,
            }),
            _ => self.request_payment_to_ua(amount),
        }
    }

    /// Asks to be paid into the UA, for later claim at the server.
    pub fn request_payment_to_ua(&self, amount: u64) -> Result<PayRequest, WalletError> {
        if amount == 0 {
            return Err(WalletError::ZeroAmount);
        }
        let cert = self.cert.clone().ok_or(WalletError::NotRegistered)?;
        Ok(PayRequest {
            amount,
            receiver: cert,
        })
    }

    /// Issues a payment from the TA. Works without any network link.
    pub fn make_payment(&mut self, req: &PayRequest, now: u64) -> Result<Payment, WalletError> {
        if req.amount == 0 {
            return Err(WalletError::ZeroAmount);
        }
        if !(cert_verify(&req.receiver, &self.server_vk)
            || hw_cert_verify(&req.receiver, &self.server_vk))
        {
            return Err(WalletError::BadReceiverCert);
        }
        let mut payment = self.require_ta()?.pay(req.amount, &req.receiver)?;
        payment.created_at = Some(now);
        self.sent.push(payment.clone());
        Ok(payment)
    }

    fn is_mine(&self, cert: &Certificate) -> bool {
        match cert.kind {
            CertKind::Ua => self.cert.as_ref() == Some(cert),
            CertKind::Ta => {
                matches!(self.ta().map(TrustedApp::cert), Some(Ok(Some(c))) if &c == cert)
            }
        }
    }

    /// Validates an incoming payment against what was requested. Payments to
    /// the TA are collected immediately; payments to the UA wait for a claim.
    pub fn accept_payment(
        &mut self,
        payment: &Payment,
        expected: &PayRequest,
    ) -> Result<Accepted, Rejection> {
        if !pay_verify(payment, &self.server_vk) {
            return Err(Rejection::InvalidPayment);
        }
        if payment.receiver != expected.receiver || !self.is_mine(&payment.receiver) {
            return Err(Rejection::WrongReceiver);
        }
        if payment.amount != expected.amount {
            return Err(Rejection::AmountMismatch);
        }
        let key = payment.key();
        if self.iplog.contains(&key) {
            return Err(Rejection::Replayed);
        }
        self.iplog.insert(key);
        self.inbox.push(payment.clone());
        let collected = (payment.receiver.kind == CertKind::Ta).then(|| self.collect(&key));
        Ok(Accepted { key, collected })
    }

    fn take_from_inbox(&mut self, key: &PaymentKey) {
        if let Some(pos) = self.inbox.iter().position(|p| &p.key() == key) {
            let p = self.inbox.remove(pos);
            self.redeemed.push(p);
        }
    }

    fn collect(&mut self, key: &PaymentKey) -> Result<(), TaError> {
        let payment = self.inbox.iter().find(|p| &p.key() == key).cloned();
        let Some(payment) = payment else {
            return Ok(());
        };
        let ta = self
            .device
            .as_mut()
            .and_then(SecureDevice::ta_mut)
            .ok_or(TaError::NotInitialized)?;
        match ta.collect(&payment) {
            Ok(()) | Err(TaError::AlreadyCollected) => {
                self.take_from_inbox(key);
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Retries collection of every TA-addressed payment still in the inbox.
    pub fn collect_inbox(&mut self) -> Vec<(PaymentKey, Result<(), TaError>)> {
        let keys: Vec<_> = self
            .inbox
            .iter()
            .filter(|p| p.receiver.kind == CertKind::Ta)
            .map(Payment::key)
            .collect();
        keys.into_iter().map(|k| (k, self.collect(&k))).collect()
    }

    /// Redeems one UA-addressed payment at the server.
    pub fn do_claim<C: ServerChannel + ?Sized>(
        &mut self,
        ch: &mut C,
        key: &PaymentKey,
    ) -> Result<ClaimOutcome, WalletError> {
        let payment = self
            .inbox
            .iter()
            .find(|p| &p.key() == key && p.receiver.kind == CertKind::Ua)
            .cloned()
            .ok_or(WalletError::NotInInbox)?;
        self.ensure_idle()?;
        Self::ensure_online(ch)?;
        let req = self.authed(WireMessage::ClaimReq { payment })?;
        let outcome = match Self::call(ch, &req) {
            Ok(WireMessage::ClaimConfirmed) => ClaimOutcome::Credited,
            Ok(other) => return Err(WalletError::UnexpectedReply(other.kind())),
            // an earlier attempt went through but its reply was lost
            Err(WalletError::Server(ServerError::AlreadyClaimed)) => ClaimOutcome::AlreadyClaimed,
            Err(e) => return Err(e),
        };
        self.take_from_inbox(key);
        Ok(outcome)
    }

    /// Claims every UA-addressed payment in the inbox.
    pub fn claim_all<C: ServerChannel + ?Sized>(
        &mut self,
        ch: &mut C,
    ) -> Vec<(PaymentKey, Result<ClaimOutcome, WalletError>)> {
        let keys: Vec<_> = self
            .inbox
            .iter()
            .filter(|p| p.receiver.kind == CertKind::Ua)
            .map(Payment::key)
            .collect();
        keys.into_iter()
            .map(|k| (k, self.do_claim(ch, &k)))
            .collect()
    }
}
