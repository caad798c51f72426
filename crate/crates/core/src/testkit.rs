//! Shared fixtures for unit tests.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::crypto::SecurityConfig;
use crate::server::Server;
use crate::wallet::{LocalChannel, OemAuthority, SecureDevice, Wallet};

pub(crate) const MODEL: &str = "test-handset";

pub(crate) struct Bank {
    pub cfg: SecurityConfig,
    pub rng: ChaCha20Rng,
    pub server: Server,
    pub oem: OemAuthority,
}

impl Bank {
    pub fn new(seed: u64) -> Self {
        let cfg = SecurityConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut server = Server::generate(cfg, &mut rng);
        let oem = OemAuthority::generate(&cfg, &mut rng);
        server.add_oem_root(oem.vk());
        Self {
            cfg,
            rng,
            server,
            oem,
        }
    }

    pub fn device(&mut self) -> SecureDevice {
        SecureDevice::new(self.oem.manufacture(&self.cfg, MODEL, &mut self.rng))
    }

    /// Registered wallet without a device.
    pub fn plain_client(&mut self) -> Wallet {
        let mut w = Wallet::generate(self.cfg, self.server.vk(), &mut self.rng);
        w.setup_client(&mut LocalChannel::new(&mut self.server))
            .unwrap();
        w
    }

    /// Registered wallet with an activated TA.
    pub fn client(&mut self) -> Wallet {
        let dev = self.device();
        let mut w = self.plain_client().with_device(dev);
        w.setup_ta(&mut LocalChannel::new(&mut self.server), &mut self.rng)
            .unwrap();
        w
    }

    /// Registered, activated and funded with `online` then `offline` deposited.
    pub fn funded(&mut self, online: u64, offline: u64) -> Wallet {
        let mut w = self.client();
        self.server.mint(&w.vk(), online + offline).unwrap();
        if offline > 0 {
            w.do_deposit(&mut LocalChannel::new(&mut self.server), offline)
                .unwrap();
        }
        w
    }

    pub fn ch(&mut self) -> LocalChannel<'_> {
        LocalChannel::new(&mut self.server)
    }
}
