//! Protocol messages, the authenticated request envelope and stream framing.

use std::io::{self, Read, Write};

use crate::crypto::{Certificate, DomainTag, KeyPair, Signature, VerifyingKey};

use super::{CodecError, Decode, Encode, Payment, Reader, Writer};

/// Largest frame accepted from a byte stream.
pub const MAX_FRAME_LEN: usize = 1 << 20;

/// Message kind tag; always the first encoded byte of a [`WireMessage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum WireKind {
    ClientRegister = 1,
    ClientRegisterAck = 2,
    TaRegister = 3,
    TaRegisterAck = 4,
    DepositReq = 5,
    DepositConfirmed = 6,
    WithdrawReq = 7,
    WithdrawConfirmed = 8,
    PayReq = 9,
    PaymentTransfer = 10,
    PayConfirmed = 11,
    ClaimReq = 12,
    ClaimConfirmed = 13,
}

impl WireKind {
    pub const ALL: [WireKind; 13] = [
        WireKind::ClientRegister,
        WireKind::ClientRegisterAck,
        WireKind::TaRegister,
        WireKind::TaRegisterAck,
        WireKind::DepositReq,
        WireKind::DepositConfirmed,
        WireKind::WithdrawReq,
        WireKind::WithdrawConfirmed,
        WireKind::PayReq,
        WireKind::PaymentTransfer,
        WireKind::PayConfirmed,
        WireKind::ClaimReq,
        WireKind::ClaimConfirmed,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            WireKind::ClientRegister => "ClientRegister",
            WireKind::ClientRegisterAck => "ClientRegisterAck",
            WireKind::TaRegister => "TaRegister",
            WireKind::TaRegisterAck => "TaRegisterAck",
            WireKind::DepositReq => "DepositReq",
            WireKind::DepositConfirmed => "DepositConfirmed",
            WireKind::WithdrawReq => "WithdrawReq",
            WireKind::WithdrawConfirmed => "WithdrawConfirmed",
            WireKind::PayReq => "PayReq",
            WireKind::PaymentTransfer => "PaymentTransfer",
            WireKind::PayConfirmed => "PayConfirmed",
            WireKind::ClaimReq => "ClaimReq",
            WireKind::ClaimConfirmed => "ClaimConfirmed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name))
    }

    /// Kinds a client sends to the server.
    pub fn is_server_bound(self) -> bool {
        matches!(
            self,
            WireKind::ClientRegister
                | WireKind::TaRegister
                | WireKind::DepositReq
                | WireKind::WithdrawReq
                | WireKind::ClaimReq
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    ClientRegister {
        vk: VerifyingKey,
    },
    ClientRegisterAck {
        cert: Certificate,
    },
    TaRegister {
        device_vk: VerifyingKey,
        device_model: String,
        device_cert: Signature,
        ta_vk: VerifyingKey,
        ua_vk: VerifyingKey,
        attestation: Signature,
    },
    TaRegisterAck {
        cert: Certificate,
    },
    DepositReq {
        amount: u64,
    },
    DepositConfirmed {
        amount: u64,
        id: u64,
        sig: Signature,
    },
    WithdrawReq {
        amount: u64,
        id: u64,
        sig: Signature,
    },
    WithdrawConfirmed,
    PayReq {
        amount: u64,
        receiver: Certificate,
    },
    PaymentTransfer {
        payment: Payment,
    },
    PayConfirmed,
    ClaimReq {
        payment: Payment,
    },
    ClaimConfirmed,
}

impl WireMessage {
    pub fn kind(&self) -> WireKind {
        match self {
            WireMessage::ClientRegister { .. } => WireKind::ClientRegister,
            WireMessage::ClientRegisterAck { .. } => WireKind::ClientRegisterAck,
            WireMessage::TaRegister { .. } => WireKind::TaRegister,
            WireMessage::TaRegisterAck { .. } => WireKind::TaRegisterAck,
            WireMessage::DepositReq { .. } => WireKind::DepositReq,
            WireMessage::DepositConfirmed { .. } => WireKind::DepositConfirmed,
            WireMessage::WithdrawReq { .. } => WireKind::WithdrawReq,
            WireMessage::WithdrawConfirmed => WireKind::WithdrawConfirmed,
            WireMessage::PayReq { .. } => WireKind::PayReq,
            WireMessage::PaymentTransfer { .. } => WireKind::PaymentTransfer,
            WireMessage::PayConfirmed => WireKind::PayConfirmed,
            WireMessage::ClaimReq { .. } => WireKind::ClaimReq,
            WireMessage::ClaimConfirmed => WireKind::ClaimConfirmed,
        }
    }

    /// Decodes a message and requires it to be of kind `expected`.
    pub fn decode_expecting(bytes: &[u8], expected: WireKind) -> Result<Self, CodecError> {
        let got = bytes
            .first()
            .and_then(|t| WireKind::from_tag(*t))
            .ok_or(CodecError::Malformed("unknown message kind"))?;
        if got != expected {
            return Err(CodecError::WrongKind { expected, got });
        }
        Self::decode(bytes)
    }

    /// Reads only the kind tag of an encoded message.
    pub fn peek_kind(bytes: &[u8]) -> Option<WireKind> {
        bytes.first().and_then(|t| WireKind::from_tag(*t))
    }

    /// The payment carried by a transfer or claim, if any.
    pub fn payment(&self) -> Option<&Payment> {
        match self {
            WireMessage::PaymentTransfer { payment } | WireMessage::ClaimReq { payment } => {
                Some(payment)
            }
            _ => None,
        }
    }
}

impl Encode for WireMessage {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u8(self.kind().tag());
        match self {
            WireMessage::ClientRegister { vk } => {
                w.put(vk)?;
            }
            WireMessage::ClientRegisterAck { cert } | WireMessage::TaRegisterAck { cert } => {
                w.put(cert)?;
            }
            WireMessage::TaRegister {
                device_vk,
                device_model,
                device_cert,
                ta_vk,
                ua_vk,
                attestation,
            } => {
                w.put(device_vk)?
                    .bytes(device_model.as_bytes())?
                    .put(device_cert)?
                    .put(ta_vk)?
                    .put(ua_vk)?
                    .put(attestation)?;
            }
            WireMessage::DepositReq { amount } => {
                check_amount(*amount)?;
                w.u64(*amount);
            }
            WireMessage::DepositConfirmed { amount, id, sig }
            | WireMessage::WithdrawReq { amount, id, sig } => {
                check_amount(*amount)?;
                w.u64(*amount).u64(*id).put(sig)?;
            }
            WireMessage::PayReq { amount, receiver } => {
                check_amount(*amount)?;
                w.u64(*amount).put(receiver)?;
            }
            WireMessage::PaymentTransfer { payment } | WireMessage::ClaimReq { payment } => {
                w.put(payment)?;
            }
            WireMessage::WithdrawConfirmed
            | WireMessage::PayConfirmed
            | WireMessage::ClaimConfirmed => {}
        }
        Ok(())
    }
}

fn check_amount(amount: u64) -> Result<(), CodecError> {
    if amount == 0 {
        return Err(CodecError::Unencodable("amount must be at least 1"));
    }
    Ok(())
}

fn read_amount(r: &mut Reader<'_>) -> Result<u64, CodecError> {
    match r.u64()? {
        0 => Err(CodecError::Malformed("amount out of range")),
        x => Ok(x),
    }
}

impl Decode for WireMessage {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let kind =
            WireKind::from_tag(r.u8()?).ok_or(CodecError::Malformed("unknown message kind"))?;
        Ok(match kind {
            WireKind::ClientRegister => WireMessage::ClientRegister { vk: r.get()? },
            WireKind::ClientRegisterAck => WireMessage::ClientRegisterAck { cert: r.get()? },
            WireKind::TaRegister => WireMessage::TaRegister {
                device_vk: r.get()?,
                device_model: r.string()?,
                device_cert: r.get()?,
                ta_vk: r.get()?,
                ua_vk: r.get()?,
                attestation: r.get()?,
            },
            WireKind::TaRegisterAck => WireMessage::TaRegisterAck { cert: r.get()? },
            WireKind::DepositReq => WireMessage::DepositReq {
                amount: read_amount(r)?,
            },
            WireKind::DepositConfirmed => WireMessage::DepositConfirmed {
                amount: read_amount(r)?,
                id: r.u64()?,
                sig: r.get()?,
            },
            WireKind::WithdrawReq => WireMessage::WithdrawReq {
                amount: read_amount(r)?,
                id: r.u64()?,
                sig: r.get()?,
            },
            WireKind::WithdrawConfirmed => WireMessage::WithdrawConfirmed,
            WireKind::PayReq => WireMessage::PayReq {
                amount: read_amount(r)?,
                receiver: r.get()?,
            },
            WireKind::PaymentTransfer => WireMessage::PaymentTransfer { payment: r.get()? },
            WireKind::PayConfirmed => WireMessage::PayConfirmed,
            WireKind::ClaimReq => WireMessage::ClaimReq { payment: r.get()? },
            WireKind::ClaimConfirmed => WireMessage::ClaimConfirmed,
        })
    }
}

/// Client-to-server envelope: the message plus a per-sender nonce, signed
/// by the sender's wallet key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthedRequest {
    pub sender_vk: VerifyingKey,
    pub nonce: u64,
    pub message: WireMessage,
    pub sig: Signature,
}

impl AuthedRequest {
    pub fn signed_bytes(message: &WireMessage, nonce: u64) -> Result<Vec<u8>, CodecError> {
        let mut w = DomainTag::Request.writer();
        w.put(message)?.u64(nonce);
        Ok(w.finish())
    }

    pub fn sign(message: WireMessage, nonce: u64, keys: &KeyPair) -> Result<Self, CodecError> {
        let sig = keys.sign(&Self::signed_bytes(&message, nonce)?);
        Ok(Self {
            sender_vk: keys.vk,
            nonce,
            message,
            sig,
        })
    }

    pub fn verify(&self) -> bool {
        match Self::signed_bytes(&self.message, self.nonce) {
            Ok(bytes) => self.sender_vk.verify(&bytes, &self.sig),
            Err(_) => false,
        }
    }
}

impl Encode for AuthedRequest {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.put(&self.sender_vk)?
            .u64(self.nonce)
            .put(&self.message)?
            .put(&self.sig)?;
        Ok(())
    }
}

impl Decode for AuthedRequest {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            sender_vk: r.get()?,
            nonce: r.u64()?,
            message: r.get()?,
            sig: r.get()?,
        })
    }
}

/// Writes one `u32`-length-prefixed frame.
pub fn write_frame<W: Write>(out: &mut W, payload: &[u8]) -> io::Result<()> {
    if payload.len() > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "frame too large",
        ));
    }
    out.write_all(&(payload.len() as u32).to_be_bytes())?;
    out.write_all(payload)?;
    out.flush()
}

/// Reads one frame. Returns `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(input: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    // only a stream ending exactly between frames is a clean end
    let first = loop {
        match input.read(&mut len[..1]) {
            Ok(n) => break n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    };
    if first == 0 {
        return Ok(None);
    }
    input.read_exact(&mut len[1..])?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            "frame too large",
        ));
    }
    let mut buf = vec![0u8; len];
    input.read_exact(&mut buf)?;
    Ok(Some(buf))
}
