//! Secure-device and OEM emulation.
//!
//! An [`OemAuthority`] burns a device key pair into each device it ships and
//! endorses it for a model identifier. The device's trusted OS uses that key
//! to attest verification keys produced by the TA it hosts.

use rand_core::{CryptoRng, RngCore};
use thiserror::Error;

use crate::crypto::{
    attestation_bytes, device_cert_bytes, hash, keygen, KeyPair, SecurityConfig, Signature,
    VerifyingKey,
};
use crate::ta::TrustedApp;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeviceError {
    #[error("no TA")]
    NoTa,
}

/// Device-authority root that endorses device keys.
#[derive(Debug, Clone)]
pub struct OemAuthority {
    keys: KeyPair,
}

impl OemAuthority {
    pub fn generate<R: RngCore + CryptoRng>(config: &SecurityConfig, rng: &mut R) -> Self {
        Self {
            keys: keygen(config, rng),
        }
    }

    pub fn vk(&self) -> VerifyingKey {
        self.keys.vk
    }

    pub fn manufacture<R: RngCore + CryptoRng>(
        &self,
        config: &SecurityConfig,
        model: &str,
        rng: &mut R,
    ) -> DeviceIdentity {
        let device_keys = keygen(config, rng);
        let oem_cert = self.keys.sign(&device_cert_bytes(&device_keys.vk, model));
        DeviceIdentity {
            device_keys,
            model: model.to_owned(),
            oem_cert,
        }
    }
}

/// Per-device key pair and its OEM endorsement, fixed in ROM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceIdentity {
    pub device_keys: KeyPair,
    pub model: String,
    pub oem_cert: Signature,
}

impl DeviceIdentity {
    pub fn vk(&self) -> VerifyingKey {
        self.device_keys.vk
    }

    /// Raw trusted-OS signature over `(ta_vk, "Secure Device" ‖ model)`.
    pub fn attest(&self, ta_vk: &VerifyingKey) -> Signature {
        self.device_keys
            .sign(&attestation_bytes(ta_vk, &self.model))
    }

    /// Secure-storage key, derived from the device secret.
    pub fn storage_key(&self) -> [u8; 32] {
        let mut input = b"ops.rpmb.key".to_vec();
        input.extend_from_slice(self.device_keys.sk.as_bytes());
        hash(&input).0
    }
}

/// True iff `oem_root` endorsed `device_vk` for `model`.
pub fn device_chain_verify(
    device_vk: &VerifyingKey,
    model: &str,
    oem_cert: &Signature,
    oem_root: &VerifyingKey,
) -> bool {
    oem_root.verify(&device_cert_bytes(device_vk, model), oem_cert)
}

/// A TEE-enabled handset: ROM identity plus the TA it hosts, if provisioned.
#[derive(Debug, Clone)]
pub struct SecureDevice {
    pub identity: DeviceIdentity,
    ta: Option<TrustedApp>,
}

impl SecureDevice {
    pub fn new(identity: DeviceIdentity) -> Self {
        Self { identity, ta: None }
    }

    /// Local provisioning: the OPS TA ships on the device with the server
    /// key baked in.
    pub fn provision_ta(&mut self, config: SecurityConfig, server_vk: VerifyingKey) {
        if self.ta.is_none() {
            self.ta = Some(TrustedApp::provision(config, server_vk, &self.identity));
        }
    }

    pub fn ta(&self) -> Option<&TrustedApp> {
        self.ta.as_ref()
    }

    pub fn ta_mut(&mut self) -> Option<&mut TrustedApp> {
        self.ta.as_mut()
    }

    /// Trusted-OS attestation of a TA verification key.
    pub fn tos_attest(&self, ta_vk: &VerifyingKey) -> Result<Signature, DeviceError> {
        if self.ta.is_none() {
            return Err(DeviceError::NoTa);
        }
        Ok(self.identity.attest(ta_vk))
    }
}
