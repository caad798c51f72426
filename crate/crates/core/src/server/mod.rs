//! The central-bank server: registration, online accounts, deposit,
//! withdraw and claim handling.
//!
//! Requests arrive as [`AuthedRequest`]s. The server keeps the last nonce
//! and reply per sender, so a retransmitted request receives the original
//! reply without being processed twice, and an older nonce is refused.

mod endpoint;
mod snapshot;

pub use endpoint::{serve_connection, spawn_tcp, TcpEndpoint};
pub use snapshot::{SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

use std::collections::{BTreeMap, BTreeSet};

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{
    AuthedRequest, CodecError, Decode, Encode, Payment, PaymentKey, Reader, WireMessage, Writer,
};
use crate::crypto::{
    deposit_confirmation_bytes, hash, keygen, oem_cert_verify, withdraw_confirmation_bytes,
    CertKind, Certificate, Digest, KeyPair, SecurityConfig, Signature, VerifyingKey,
};
use crate::wallet::{device_chain_verify, pay_verify};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("already registered")]
    AlreadyRegistered,
    #[error("unknown client or TA already provisioned")]
    UnknownOrAlreadyProvisioned,
    #[error("TA key already registered")]
    TaKeyInUse,
    #[error("attestation rejected")]
    AttestationRejected,
    #[error("insufficient online funds")]
    InsufficientOnlineFunds,
    #[error("no TA registered")]
    NoTaRegistered,
    #[error("request not authenticated")]
    Unauthenticated,
    #[error("unknown client")]
    UnknownClient,
    #[error("replayed request")]
    ReplayedRequest,
    #[error("counter out of sync")]
    CounterOutOfSync,
    #[error("invalid confirmation")]
    InvalidConfirmation,
    #[error("must be collected by the receiving TA")]
    MustBeCollected,
    #[error("already claimed")]
    AlreadyClaimed,
    #[error("invalid payment")]
    InvalidPayment,
    #[error("unknown receiver")]
    UnknownReceiver,
    #[error("amount must be at least 1")]
    ZeroAmount,
    #[error("balance overflow")]
    BalanceOverflow,
    #[error("counter exhausted")]
    CounterExhausted,
    #[error("unexpected message")]
    UnexpectedMessage,
    #[error("malformed request")]
    Malformed,
    #[error("corrupt server state")]
    CorruptState,
}

impl ServerError {
    pub const ALL: [ServerError; 21] = [
        ServerError::AlreadyRegistered,
        ServerError::UnknownOrAlreadyProvisioned,
        ServerError::TaKeyInUse,
        ServerError::AttestationRejected,
        ServerError::InsufficientOnlineFunds,
        ServerError::NoTaRegistered,
        ServerError::Unauthenticated,
        ServerError::UnknownClient,
        ServerError::ReplayedRequest,
        ServerError::CounterOutOfSync,
        ServerError::InvalidConfirmation,
        ServerError::MustBeCollected,
        ServerError::AlreadyClaimed,
        ServerError::InvalidPayment,
        ServerError::UnknownReceiver,
        ServerError::ZeroAmount,
        ServerError::BalanceOverflow,
        ServerError::CounterExhausted,
        ServerError::UnexpectedMessage,
        ServerError::Malformed,
        ServerError::CorruptState,
    ];

    /// Stable wire code.
    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|e| *e == self).expect("listed") as u8 + 1
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }
}

/// Server-to-client envelope.
#[allow(clippy::large_enum_variant)] // short-lived, never stored in bulk
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ServerReply {
    Ok(WireMessage),
    Abort(ServerError),
}

impl ServerReply {
    pub fn into_result(self) -> Result<WireMessage, ServerError> {
        match self {
            ServerReply::Ok(m) => Ok(m),
            ServerReply::Abort(e) => Err(e),
        }
    }
}

impl From<Result<WireMessage, ServerError>> for ServerReply {
    fn from(r: Result<WireMessage, ServerError>) -> Self {
        match r {
            Ok(m) => ServerReply::Ok(m),
            Err(e) => ServerReply::Abort(e),
        }
    }
}

impl Encode for ServerReply {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        match self {
            ServerReply::Ok(m) => {
                w.u8(0).put(m)?;
            }
            ServerReply::Abort(e) => {
                w.u8(1).u8(e.code());
            }
        }
        Ok(())
    }
}

impl Decode for ServerReply {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(ServerReply::Ok(r.get()?)),
            1 => ServerError::from_code(r.u8()?)
                .map(ServerReply::Abort)
                .ok_or(CodecError::Malformed("unknown error code")),
            _ => Err(CodecError::Malformed("unknown reply tag")),
        }
    }
}

/// Last request seen from one sender and the reply it got.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub nonce: u64,
    pub request: Digest,
    pub reply: ServerReply,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerState {
    pub keys: KeyPair,
    /// UA key to its TA key, once one is provisioned.
    pub userregistry: BTreeMap<VerifyingKey, Option<VerifyingKey>>,
    pub onbal: BTreeMap<VerifyingKey, u64>,
    pub idctr: BTreeMap<VerifyingKey, u64>,
    pub plog: BTreeSet<PaymentKey>,
    pub oem_roots: BTreeSet<VerifyingKey>,
    pub sessions: BTreeMap<VerifyingKey, Session>,
    /// Last deposit issued per client: `(id, amount)`.
    pub last_deposit: BTreeMap<VerifyingKey, (u64, u64)>,
    /// Total value ever created by [`Server::mint`].
    pub minted: u64,
}

impl ServerState {
    fn new(keys: KeyPair) -> Self {
        Self {
            keys,
            userregistry: BTreeMap::new(),
            onbal: BTreeMap::new(),
            idctr: BTreeMap::new(),
            plog: BTreeSet::new(),
            oem_roots: BTreeSet::new(),
            sessions: BTreeMap::new(),
            last_deposit: BTreeMap::new(),
            minted: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Server {
    config: SecurityConfig,
    state: ServerState,
    ta_index: BTreeMap<VerifyingKey, VerifyingKey>,
}

impl Server {
    pub fn new(config: SecurityConfig, keys: KeyPair) -> Self {
        Self {
            config,
            state: ServerState::new(keys),
            ta_index: BTreeMap::new(),
        }
    }

    pub fn generate<R: RngCore + CryptoRng>(config: SecurityConfig, rng: &mut R) -> Self {
        let keys = keygen(&config, rng);
        Self::new(config, keys)
    }

    pub(crate) fn from_state(config: SecurityConfig, state: ServerState) -> Self {
        let ta_index = state
            .userregistry
            .iter()
            .filter_map(|(ua, ta)| ta.map(|ta| (ta, *ua)))
            .collect();
        Self {
            config,
            state,
            ta_index,
        }
    }

    pub fn config(&self) -> &SecurityConfig {
        &self.config
    }

    pub fn vk(&self) -> VerifyingKey {
        self.state.keys.vk
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn add_oem_root(&mut self, root: VerifyingKey) {
        self.state.oem_roots.insert(root);
    }

    pub fn onbal(&self, ua: &VerifyingKey) -> Option<u64> {
        self.state.onbal.get(ua).copied()
    }

    pub fn idctr(&self, ua: &VerifyingKey) -> Option<u64> {
        self.state.idctr.get(ua).copied()
    }

    pub fn ta_of(&self, ua: &VerifyingKey) -> Option<VerifyingKey> {
        self.state.userregistry.get(ua).copied().flatten()
    }

    pub fn owner_of_ta(&self, ta: &VerifyingKey) -> Option<VerifyingKey> {
        self.ta_index.get(ta).copied()
    }

    pub fn is_registered(&self, ua: &VerifyingKey) -> bool {
        self.state.userregistry.contains_key(ua)
    }

    pub fn is_claimed(&self, key: &PaymentKey) -> bool {
        self.state.plog.contains(key)
    }

    pub fn total_online(&self) -> u64 {
        self.state.onbal.values().sum()
    }

    pub fn minted(&self) -> u64 {
        self.state.minted
    }

    /// Credits freshly issued value to a registered account.
    pub fn mint(&mut self, ua: &VerifyingKey, amount: u64) -> Result<(), ServerError> {
        if amount == 0 {
            return Err(ServerError::ZeroAmount);
        }
        let minted = self
            .state
            .minted
            .checked_add(amount)
            .ok_or(ServerError::BalanceOverflow)?;
        let bal = self
            .state
            .onbal
            .get_mut(ua)
            .ok_or(ServerError::UnknownClient)?;
        *bal = bal
            .checked_add(amount)
            .ok_or(ServerError::BalanceOverflow)?;
        self.state.minted = minted;
        Ok(())
    }

    pub fn register_client(&mut self, ua: &VerifyingKey) -> Result<Certificate, ServerError> {
        if self.state.userregistry.contains_key(ua) {
            return Err(ServerError::AlreadyRegistered);
        }
        let cert = Certificate::issue(CertKind::Ua, *ua, &self.state.keys);
        self.state.userregistry.insert(*ua, None);
        self.state.onbal.insert(*ua, 0);
        Ok(cert)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn register_ta(
        &mut self,
        ua: &VerifyingKey,
        ta: &VerifyingKey,
        attestation: &Signature,
        device_vk: &VerifyingKey,
        device_model: &str,
        device_cert: &Signature,
    ) -> Result<Certificate, ServerError> {
        if self.state.userregistry.get(ua) != Some(&None) {
            return Err(ServerError::UnknownOrAlreadyProvisioned);
        }
        let endorsed = self
            .state
            .oem_roots
            .iter()
            .any(|root| device_chain_verify(device_vk, device_model, device_cert, root));
        if !endorsed || !oem_cert_verify(ta, attestation, device_vk, device_model) {
            return Err(ServerError::AttestationRejected);
        }
        if self.ta_index.contains_key(ta) {
            return Err(ServerError::TaKeyInUse);
        }
        let cert = Certificate::issue(CertKind::Ta, *ta, &self.state.keys);
        self.state.userregistry.insert(*ua, Some(*ta));
        self.state.idctr.insert(*ua, 0);
        self.ta_index.insert(*ta, *ua);
        Ok(cert)
    }

    /// Debits the online account and returns `(id, σ)` for the TA.
    pub fn handle_deposit(
        &mut self,
        ua: &VerifyingKey,
        amount: u64,
    ) -> Result<(u64, Signature), ServerError> {
        let ta = self.ta_of(ua).ok_or(ServerError::NoTaRegistered)?;
        if amount == 0 {
            return Err(ServerError::ZeroAmount);
        }
        let bal = self
            .state
            .onbal
            .get(ua)
            .copied()
            .ok_or(ServerError::UnknownClient)?;
        if amount > bal {
            return Err(ServerError::InsufficientOnlineFunds);
        }
        let id = self.state.idctr[ua]
            .checked_add(1)
            .ok_or(ServerError::CounterExhausted)?;
        let sig = self
            .state
            .keys
            .sign(&deposit_confirmation_bytes(&ta, amount, id));
        self.state.onbal.insert(*ua, bal - amount);
        self.state.idctr.insert(*ua, id);
        self.state.last_deposit.insert(*ua, (id, amount));
        Ok((id, sig))
    }

    pub fn handle_withdraw(
        &mut self,
        ua: &VerifyingKey,
        amount: u64,
        id: u64,
        sig: &Signature,
    ) -> Result<(), ServerError> {
        let ta = self.ta_of(ua).ok_or(ServerError::NoTaRegistered)?;
        if amount == 0 {
            return Err(ServerError::ZeroAmount);
        }
        let expected = self.state.idctr[ua]
            .checked_add(1)
            .ok_or(ServerError::CounterExhausted)?;
        if id != expected {
            return Err(ServerError::CounterOutOfSync);
        }
        if !ta.verify(&withdraw_confirmation_bytes(amount, id), sig) {
            return Err(ServerError::InvalidConfirmation);
        }
        let bal = self
            .state
            .onbal
            .get(ua)
            .copied()
            .ok_or(ServerError::UnknownClient)?;
        let bal = bal
            .checked_add(amount)
            .ok_or(ServerError::BalanceOverflow)?;
        self.state.onbal.insert(*ua, bal);
        self.state.idctr.insert(*ua, id);
        Ok(())
    }

    /// Credits a UA-addressed payment to its receiver's online account.
    pub fn handle_claim(&mut self, payment: &Payment) -> Result<(), ServerError> {
        if payment.receiver.kind != CertKind::Ua {
            return Err(ServerError::MustBeCollected);
        }
        if !pay_verify(payment, &self.state.keys.vk) {
            return Err(ServerError::InvalidPayment);
        }
        let key = payment.key();
        if self.state.plog.contains(&key) {
            return Err(ServerError::AlreadyClaimed);
        }
        let receiver = payment.receiver.vk;
        let bal = self
            .state
            .onbal
            .get(&receiver)
            .copied()
            .ok_or(ServerError::UnknownReceiver)?;
        let bal = bal
            .checked_add(payment.amount)
            .ok_or(ServerError::BalanceOverflow)?;
        self.state.onbal.insert(receiver, bal);
        self.state.plog.insert(key);
        Ok(())
    }

    fn dispatch(
        &mut self,
        sender: &VerifyingKey,
        message: &WireMessage,
    ) -> Result<WireMessage, ServerError> {
        match message {
            WireMessage::ClientRegister { vk } => {
                if vk != sender {
                    return Err(ServerError::Unauthenticated);
                }
                Ok(WireMessage::ClientRegisterAck {
                    cert: self.register_client(vk)?,
                })
            }
            WireMessage::TaRegister {
                device_vk,
                device_model,
                device_cert,
                ta_vk,
                ua_vk,
                attestation,
            } => {
                if ua_vk != sender {
                    return Err(ServerError::Unauthenticated);
                }
                let cert = self.register_ta(
                    ua_vk,
                    ta_vk,
                    attestation,
                    device_vk,
                    device_model,
                    device_cert,
                )?;
                Ok(WireMessage::TaRegisterAck { cert })
            }
            WireMessage::DepositReq { amount } => {
                let (id, sig) = self.handle_deposit(sender, *amount)?;
                Ok(WireMessage::DepositConfirmed {
                    amount: *amount,
                    id,
                    sig,
                })
            }
            WireMessage::WithdrawReq { amount, id, sig } => {
                self.handle_withdraw(sender, *amount, *id, sig)?;
                Ok(WireMessage::WithdrawConfirmed)
            }
            WireMessage::ClaimReq { payment } => {
                self.handle_claim(payment)?;
                Ok(WireMessage::ClaimConfirmed)
            }
            _ => Err(ServerError::UnexpectedMessage),
        }
    }

    /// Authenticates, deduplicates and processes one request.
    pub fn handle(&mut self, req: &AuthedRequest) -> Result<WireMessage, ServerError> {
        if !req.verify() {
            return Err(ServerError::Unauthenticated);
        }
        let sender = req.sender_vk;
        let registering = matches!(req.message, WireMessage::ClientRegister { .. });
        if !registering && !self.is_registered(&sender) {
            return Err(ServerError::UnknownClient);
        }
        let digest = hash(&req.encode().map_err(|_| ServerError::Malformed)?);
        if let Some(s) = self.state.sessions.get(&sender) {
            if req.nonce == s.nonce && s.request == digest {
                return s.reply.clone().into_result();
            }
            if req.nonce <= s.nonce {
                return Err(ServerError::ReplayedRequest);
            }
        }
        let result = self.dispatch(&sender, &req.message);
        if self.is_registered(&sender) {
            self.state.sessions.insert(
                sender,
                Session {
                    nonce: req.nonce,
                    request: digest,
                    reply: result.clone().into(),
                },
            );
        }
        result
    }

    /// Byte-level entry point: decodes a request frame and encodes the reply.
    pub fn handle_frame(&mut self, frame: &[u8]) -> Vec<u8> {
        let reply: ServerReply = match AuthedRequest::decode(frame) {
            Ok(req) => self.handle(&req).into(),
            Err(_) => ServerReply::Abort(ServerError::Malformed),
        };
        reply.encode().expect("replies built by the server encode")
    }
}
