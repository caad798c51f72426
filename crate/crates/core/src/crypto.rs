//! Signatures, hashing, key generation and certificate predicates.
//!
//! Ed25519 is used throughout: signatures are deterministic, which keeps
//! simulator traces and golden vectors reproducible. Every signed byte string
//! starts with a [`DomainTag`] so that a signature produced for one protocol
//! message can never be accepted as another.

use std::fmt;

use ed25519_dalek::Signer;
use rand_core::{CryptoRng, RngCore};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};

pub const VERIFYING_KEY_LEN: usize = 32;
pub const SIGNING_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const DIGEST_LEN: usize = 32;

/// Security level provided by the signature scheme, in bits.
pub const SCHEME_SECURITY_BITS: u32 = 128;

/// Literal bound into every TA certificate.
pub const TA_CERT_LABEL: &[u8] = b"TA";

/// Literal bound into every device attestation, ahead of the model id.
pub const SECURE_DEVICE_LABEL: &[u8] = b"Secure Device";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("bad key material")]
    BadKeyMaterial,
    #[error("unsupported security level: {0} bits (need at least 128, scheme provides {SCHEME_SECURITY_BITS})")]
    UnsupportedSecurityLevel(u32),
}

/// Context string prefixed to each kind of signed message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DomainTag {
    UaCertificate,
    TaCertificate,
    DeviceCertificate,
    DeviceAttestation,
    DepositConfirmation,
    WithdrawConfirmation,
    BalanceAttestation,
    Payment,
    Request,
}

impl DomainTag {
    pub const ALL: [DomainTag; 9] = [
        DomainTag::UaCertificate,
        DomainTag::TaCertificate,
        DomainTag::DeviceCertificate,
        DomainTag::DeviceAttestation,
        DomainTag::DepositConfirmation,
        DomainTag::WithdrawConfirmation,
        DomainTag::BalanceAttestation,
        DomainTag::Payment,
        DomainTag::Request,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            DomainTag::UaCertificate => "ops.cert.ua.v1",
            DomainTag::TaCertificate => "ops.cert.ta.v1",
            DomainTag::DeviceCertificate => "ops.oem.device.v1",
            DomainTag::DeviceAttestation => "ops.oem.attest.v1",
            DomainTag::DepositConfirmation => "ops.deposit.v1",
            DomainTag::WithdrawConfirmation => "ops.withdraw.v1",
            DomainTag::BalanceAttestation => "ops.balance.v1",
            DomainTag::Payment => "ops.payment.v1",
            DomainTag::Request => "ops.request.v1",
        }
    }

    /// Starts a signed byte string with this tag.
    pub fn writer(self) -> Writer {
        let mut w = Writer::new();
        w.bytes(self.as_str().as_bytes())
            .expect("domain tags are short");
        w
    }
}

/// Security parameter plus the domain tag table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecurityConfig {
    lambda: u32,
}

impl SecurityConfig {
    pub fn new(lambda: u32) -> Result<Self, CryptoError> {
        if !(128..=SCHEME_SECURITY_BITS).contains(&lambda) {
            return Err(CryptoError::UnsupportedSecurityLevel(lambda));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> u32 {
        self.lambda
    }

    pub fn domain_tags(&self) -> &'static [DomainTag] {
        &DomainTag::ALL
    }
}

impl Default for SecurityConfig {
    fn default() -> Self {
        Self { lambda: 128 }
    }
}

macro_rules! hex_debug {
    ($ty:ident) => {
        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($ty), hex::encode(&self.0[..6]))
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }
    };
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VerifyingKey(pub [u8; VERIFYING_KEY_LEN]);
hex_debug!(VerifyingKey);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Signature(pub [u8; SIGNATURE_LEN]);
hex_debug!(Signature);

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Digest(pub [u8; DIGEST_LEN]);
hex_debug!(Digest);

#[derive(Clone, PartialEq, Eq)]
pub struct SigningKey(pub(crate) [u8; SIGNING_KEY_LEN]);

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

impl SigningKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let arr: [u8; SIGNING_KEY_LEN] =
            bytes.try_into().map_err(|_| CryptoError::BadKeyMaterial)?;
        Ok(Self(arr))
    }

    pub fn as_bytes(&self) -> &[u8; SIGNING_KEY_LEN] {
        &self.0
    }

    pub fn verifying_key(&self) -> VerifyingKey {
        let sk = ed25519_dalek::SigningKey::from_bytes(&self.0);
        VerifyingKey(sk.verifying_key().to_bytes())
    }
}

/// A signing key and its verification key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPair {
    pub vk: VerifyingKey,
    pub sk: SigningKey,
}

impl KeyPair {
    pub fn from_signing_key(sk: SigningKey) -> Self {
        Self {
            vk: sk.verifying_key(),
            sk,
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        sign(msg, &self.sk.0).expect("key pair holds well-formed key material")
    }
}

pub fn keygen<R: RngCore + CryptoRng>(config: &SecurityConfig, rng: &mut R) -> KeyPair {
    debug_assert!(config.lambda() <= SCHEME_SECURITY_BITS);
    let mut seed = [0u8; SIGNING_KEY_LEN];
    rng.fill_bytes(&mut seed);
    KeyPair::from_signing_key(SigningKey(seed))
}

pub fn sign(msg: &[u8], sk: &[u8]) -> Result<Signature, CryptoError> {
    let seed: [u8; SIGNING_KEY_LEN] = sk.try_into().map_err(|_| CryptoError::BadKeyMaterial)?;
    let key = ed25519_dalek::SigningKey::from_bytes(&seed);
    Ok(Signature(key.sign(msg).to_bytes()))
}

/// True iff `sig` is a valid signature on `msg` under `vk`. Garbage of any
/// length yields `false`.
pub fn sig_verify(msg: &[u8], sig: &[u8], vk: &[u8]) -> bool {
    let Ok(vk) = <[u8; VERIFYING_KEY_LEN]>::try_from(vk) else {
        return false;
    };
    let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(sig) else {
        return false;
    };
    let Ok(key) = ed25519_dalek::VerifyingKey::from_bytes(&vk) else {
        return false;
    };
    if key.is_weak() {
        return false;
    }
    let sig = ed25519_dalek::Signature::from_bytes(&sig);
    key.verify_strict(msg, &sig).is_ok()
}

impl VerifyingKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        sig_verify(msg, &sig.0, &self.0)
    }
}

pub fn hash(x: &[u8]) -> Digest {
    Digest(Sha256::digest(x).into())
}

/// Whether a certificate endorses a client wallet key or a trusted
/// application key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CertKind {
    Ua,
    Ta,
}

impl CertKind {
    pub const fn tag(self) -> u8 {
        match self {
            CertKind::Ua => 0x01,
            CertKind::Ta => 0x02,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0x01 => Some(CertKind::Ua),
            0x02 => Some(CertKind::Ta),
            _ => None,
        }
    }
}

/// A verification key endorsed by the server.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Certificate {
    pub vk: VerifyingKey,
    pub kind: CertKind,
    pub sig: Signature,
}

impl Certificate {
    /// Bytes the server signs when issuing a certificate of `kind` for `vk`.
    pub fn signed_bytes(vk: &VerifyingKey, kind: CertKind) -> Vec<u8> {
        let mut w = match kind {
            CertKind::Ua => DomainTag::UaCertificate.writer(),
            CertKind::Ta => DomainTag::TaCertificate.writer(),
        };
        w.put(vk).expect("fixed-size key");
        if kind == CertKind::Ta {
            w.bytes(TA_CERT_LABEL).expect("short label");
        }
        w.finish()
    }

    pub fn issue(kind: CertKind, vk: VerifyingKey, issuer: &KeyPair) -> Self {
        let sig = issuer.sign(&Self::signed_bytes(&vk, kind));
        Self { vk, kind, sig }
    }
}

/// UA certificate check: kind must be UA and the signature must cover `vk`.
pub fn cert_verify(cert: &Certificate, server_vk: &VerifyingKey) -> bool {
    cert.kind == CertKind::Ua
        && server_vk.verify(
            &Certificate::signed_bytes(&cert.vk, CertKind::Ua),
            &cert.sig,
        )
}

/// TA certificate check: kind must be TA and the signature must cover
/// `(vk, "TA")`.
pub fn hw_cert_verify(cert: &Certificate, server_vk: &VerifyingKey) -> bool {
    cert.kind == CertKind::Ta
        && server_vk.verify(
            &Certificate::signed_bytes(&cert.vk, CertKind::Ta),
            &cert.sig,
        )
}

/// Bytes a device signs to attest that `ta_vk` was produced by the TA it
/// hosts: `(ta_vk, "Secure Device" ‖ model)`.
pub fn attestation_bytes(ta_vk: &VerifyingKey, model: &str) -> Vec<u8> {
    let mut label = SECURE_DEVICE_LABEL.to_vec();
    label.extend_from_slice(model.as_bytes());
    let mut w = DomainTag::DeviceAttestation.writer();
    w.put(ta_vk).expect("fixed-size key");
    w.bytes(&label).expect("model identifiers are short");
    w.finish()
}

pub fn oem_cert_verify(
    ta_vk: &VerifyingKey,
    attestation: &Signature,
    device_vk: &VerifyingKey,
    model: &str,
) -> bool {
    device_vk.verify(&attestation_bytes(ta_vk, model), attestation)
}

/// Bytes an OEM root signs to endorse a device key for a model.
pub fn device_cert_bytes(device_vk: &VerifyingKey, model: &str) -> Vec<u8> {
    let mut w = DomainTag::DeviceCertificate.writer();
    w.put(device_vk).expect("fixed-size key");
    w.bytes(model.as_bytes())
        .expect("model identifiers are short");
    w.finish()
}

/// Server's deposit confirmation, bound to the receiving TA's key.
pub fn deposit_confirmation_bytes(ta_vk: &VerifyingKey, amount: u64, id: u64) -> Vec<u8> {
    let mut w = DomainTag::DepositConfirmation.writer();
    w.put(ta_vk).expect("fixed-size key");
    w.u64(amount).u64(id);
    w.finish()
}

pub fn withdraw_confirmation_bytes(amount: u64, id: u64) -> Vec<u8> {
    let mut w = DomainTag::WithdrawConfirmation.writer();
    w.u64(amount).u64(id);
    w.finish()
}

pub fn balance_attestation_bytes(balance: u64, id: u64) -> Vec<u8> {
    let mut w = DomainTag::BalanceAttestation.writer();
    w.u64(balance).u64(id);
    w.finish()
}

impl Encode for VerifyingKey {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.bytes(&self.0)?;
        Ok(())
    }
}

impl Decode for VerifyingKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self(r.fixed()?))
    }
}

impl Encode for Signature {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.bytes(&self.0)?;
        Ok(())
    }
}

impl Decode for Signature {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self(r.fixed()?))
    }
}

impl Encode for SigningKey {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.bytes(&self.0)?;
        Ok(())
    }
}

impl Decode for SigningKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self(r.fixed()?))
    }
}

impl Encode for Certificate {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.put(&self.vk)?.u8(self.kind.tag()).put(&self.sig)?;
        Ok(())
    }
}

impl Decode for Certificate {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let vk = r.get()?;
        let kind =
            CertKind::from_tag(r.u8()?).ok_or(CodecError::Malformed("unknown certificate kind"))?;
        let sig = r.get()?;
        Ok(Self { vk, kind, sig })
    }
}

impl Encode for KeyPair {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.put(&self.vk)?.put(&self.sk)?;
        Ok(())
    }
}

impl Decode for KeyPair {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let vk: VerifyingKey = r.get()?;
        let sk: SigningKey = r.get()?;
        if sk.verifying_key() != vk {
            return Err(CodecError::Malformed(
                "verification key does not match signing key",
            ));
        }
        Ok(Self { vk, sk })
    }
}
