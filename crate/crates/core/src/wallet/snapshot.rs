//! Wallet persistence. The secure device is hardware and is not part of the
//! snapshot; it is reattached on restore.

use std::fs;
use std::path::Path;

use crate::codec::{decode_list, decode_set, encode_list, encode_set, CodecError, Reader, Writer};
use crate::crypto::{SecurityConfig, VerifyingKey};

use super::{SecureDevice, Wallet};

pub const WALLET_SNAPSHOT_VERSION: u8 = 1;

impl Wallet {
    pub fn snapshot(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        w.u8(WALLET_SNAPSHOT_VERSION)
            .put(&self.keys)?
            .put(&self.cert)?;
        encode_set(&mut w, self.iplog.iter())?;
        encode_list(&mut w, &self.inbox)?;
        encode_list(&mut w, &self.redeemed)?;
        encode_list(&mut w, &self.sent)?;
        w.u64(self.next_nonce)
            .put(&self.pending_deposit)?
            .put(&self.pending_withdraw)?;
        Ok(w.finish())
    }

    pub fn restore(
        config: SecurityConfig,
        server_vk: VerifyingKey,
        bytes: &[u8],
        device: Option<SecureDevice>,
    ) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        if r.u8()? != WALLET_SNAPSHOT_VERSION {
            return Err(CodecError::Malformed("unsupported wallet snapshot version"));
        }
        let mut wallet = Wallet::new(config, server_vk, r.get()?);
        wallet.cert = r.get()?;
        wallet.iplog = decode_set(&mut r, 44)?;
        wallet.inbox = decode_list(&mut r, 100)?;
        wallet.redeemed = decode_list(&mut r, 100)?;
        wallet.sent = decode_list(&mut r, 100)?;
        wallet.next_nonce = r.u64()?;
        wallet.pending_deposit = r.get()?;
        wallet.pending_withdraw = r.get()?;
        r.finish()?;
        wallet.device = device;
        Ok(wallet)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let bytes = self
            .snapshot()
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(tmp, path)
    }

    pub fn load(
        config: SecurityConfig,
        server_vk: VerifyingKey,
        path: &Path,
        device: Option<SecureDevice>,
    ) -> std::io::Result<Self> {
        let bytes = fs::read(path)?;
        Self::restore(config, server_vk, &bytes, device)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
