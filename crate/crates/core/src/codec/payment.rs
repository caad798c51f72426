//! The offline payment object.

use crate::crypto::{CertKind, Certificate, DomainTag, Signature, VerifyingKey};

use super::{CodecError, Decode, Encode, Reader, Writer};

/// A signed offline payment released by a sender's trusted application.
///
/// `sig` covers `(amount, sender, receiver, index)` under the sender TA's
/// key. `created_at` is a logical timestamp attached by the sender's wallet;
/// it is carried but never signed and never compared.
#[derive(Debug, Clone)]
pub struct Payment {
    pub amount: u64,
    pub sender: Certificate,
    pub receiver: Certificate,
    pub index: u64,
    pub sig: Signature,
    pub created_at: Option<u64>,
}

/// Log-membership key for a payment: `(sender TA key, index)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PaymentKey {
    pub sender_vk: VerifyingKey,
    pub index: u64,
}

impl Payment {
    fn check(&self) -> Result<(), CodecError> {
        if self.amount == 0 {
            return Err(CodecError::Unencodable("payment amount must be at least 1"));
        }
        if self.sender.kind != CertKind::Ta {
            return Err(CodecError::Unencodable(
                "payment sender must be a TA certificate",
            ));
        }
        Ok(())
    }

    pub fn key(&self) -> PaymentKey {
        payment_key(self)
    }

    pub fn signed_bytes(&self) -> Vec<u8> {
        payment_signed_bytes(self)
    }
}

/// Payments are equal when their signed contents are equal.
impl PartialEq for Payment {
    fn eq(&self, other: &Self) -> bool {
        self.amount == other.amount
            && self.sender == other.sender
            && self.receiver == other.receiver
            && self.index == other.index
    }
}

impl Eq for Payment {}

/// The exact bytes `P.sig` must verify over. Excludes `sig` and `created_at`.
pub fn payment_signed_bytes(p: &Payment) -> Vec<u8> {
    let mut w = DomainTag::Payment.writer();
    w.u64(p.amount);
    p.sender
        .encode_to(&mut w)
        .expect("certificates are fixed-size");
    p.receiver
        .encode_to(&mut w)
        .expect("certificates are fixed-size");
    w.u64(p.index);
    w.finish()
}

pub fn payment_key(p: &Payment) -> PaymentKey {
    PaymentKey {
        sender_vk: p.sender.vk,
        index: p.index,
    }
}

impl Encode for Payment {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        self.check()?;
        w.u64(self.amount)
            .put(&self.sender)?
            .put(&self.receiver)?
            .u64(self.index)
            .put(&self.sig)?
            .put(&self.created_at)?;
        Ok(())
    }
}

impl Decode for Payment {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let amount = r.u64()?;
        if amount == 0 {
            return Err(CodecError::Malformed("payment amount out of range"));
        }
        let sender: Certificate = r.get()?;
        if sender.kind != CertKind::Ta {
            return Err(CodecError::Malformed(
                "payment sender is not a TA certificate",
            ));
        }
        Ok(Self {
            amount,
            sender,
            receiver: r.get()?,
            index: r.u64()?,
            sig: r.get()?,
            created_at: r.get()?,
        })
    }
}

impl Encode for PaymentKey {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.put(&self.sender_vk)?.u64(self.index);
        Ok(())
    }
}

impl Decode for PaymentKey {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Self {
            sender_vk: r.get()?,
            index: r.u64()?,
        })
    }
}
