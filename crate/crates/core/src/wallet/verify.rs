use crate::codec::{payment_signed_bytes, Payment};
use crate::crypto::{hw_cert_verify, VerifyingKey};

/// Offline payment check: the sender certificate is a server-issued TA
/// certificate and the payment signature verifies under its key.
pub fn pay_verify(p: &Payment, server_vk: &VerifyingKey) -> bool {
    hw_cert_verify(&p.sender, server_vk) && p.sender.vk.verify(&payment_signed_bytes(p), &p.sig)
}
