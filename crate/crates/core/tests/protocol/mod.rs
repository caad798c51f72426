//! Step-by-step conformance of the seven protocols, with a branch checklist.
//!
//! Every protocol step that can abort, and every success path, has an entry
//! in [`BRANCHES`] keyed by protocol and step number. Each protocol test
//! records the entries it exercises; [`Checklist::missing`] lists the ones
//! nobody reached.

#![allow(dead_code)]

use std::collections::BTreeMap;

use ops_core::codec::AuthedRequest;
use ops_core::crypto::{
    cert_verify, deposit_confirmation_bytes, hw_cert_verify, keygen, oem_cert_verify, CertKind,
};
use ops_core::server::ServerReply;
use ops_core::ta::StoreError;
use ops_core::wallet::{
    ClaimOutcome, LocalChannel, OemAuthority, PayRequest, Rejection, SecureDevice,
};
use ops_core::{
    pay_verify, Certificate, KeyPair, SecurityConfig, Server, ServerError, TaError, TrustedApp,
    VerifyingKey, Wallet, WalletError, WireMessage,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub struct Branch {
    pub id: &'static str,
    pub step: &'static str,
}

const fn b(id: &'static str, step: &'static str) -> Branch {
    Branch { id, step }
}

pub const PROTOCOLS: [&str; 7] = [
    "client-registration",
    "ta-registration",
    "ta-program",
    "deposit",
    "withdraw",
    "offline-payment",
    "claim",
];

pub const BRANCHES: &[Branch] = &[
    b("client-registration/1", "A sends [ClientRegister, vk_A]"),
    b(
        "client-registration/2a",
        "abort: vk_A already in the registry",
    ),
    b("client-registration/2b", "registry gains (vk_A, none)"),
    b("client-registration/2c", "online balance starts at 0"),
    b("client-registration/2d", "cert_A issued over vk_A"),
    b("client-registration/2e", "A receives and keeps cert_A"),
    b(
        "client-registration/auth",
        "abort: request not signed by vk_A",
    ),
    b(
        "ta-registration/1",
        "TA init yields (vk, attestation); A sends TaRegister",
    ),
    b(
        "ta-registration/2a-registry",
        "abort: (vk_A, none) not in the registry",
    ),
    b(
        "ta-registration/2a-attestation",
        "abort: OEM attestation check fails",
    ),
    b("ta-registration/2b", "id_A set to 0"),
    b("ta-registration/2c", "TA certificate issued over (vk, TA)"),
    b("ta-registration/2d", "certificate sent to A"),
    b("ta-registration/2e", "registry entry bound to the TA key"),
    b("ta-registration/3", "A runs cert_init; TA becomes active"),
    b(
        "ta-registration/key-reuse",
        "abort: TA key already bound to another client",
    ),
    b(
        "ta-program/init",
        "init: fresh keys, bal 0, no cert, empty log, id 0, pid 0",
    ),
    b(
        "ta-program/init-output",
        "init outputs (vk, attestation) that verifies",
    ),
    b(
        "ta-program/certinit-abort",
        "cert_init aborts on a certificate failing hw_cert_verify",
    ),
    b(
        "ta-program/certinit-key",
        "cert_init aborts on a certificate for another key",
    ),
    b("ta-program/certinit", "cert_init stores the certificate"),
    b(
        "ta-program/deposit-nocert",
        "deposit aborts without a certificate",
    ),
    b(
        "ta-program/deposit-id",
        "deposit aborts unless id = SE.id + 1",
    ),
    b(
        "ta-program/deposit-sig",
        "deposit aborts on a bad server signature",
    ),
    b("ta-program/deposit", "deposit adds x and advances id"),
    b(
        "ta-program/withdraw-nocert",
        "withdraw aborts without a certificate",
    ),
    b("ta-program/withdraw-funds", "withdraw aborts if x > bal"),
    b(
        "ta-program/withdraw",
        "withdraw debits, advances id, signs [x, id]",
    ),
    b("ta-program/pay-nocert", "pay aborts without a certificate"),
    b("ta-program/pay-funds", "pay aborts if bal < x"),
    b(
        "ta-program/pay",
        "pay debits, advances pid, outputs signed P",
    ),
    b(
        "ta-program/collect-nocert",
        "collect aborts without a certificate",
    ),
    b(
        "ta-program/collect-verify",
        "collect aborts if payVerify fails",
    ),
    b(
        "ta-program/collect-receiver",
        "collect aborts if P.receiver is not own cert",
    ),
    b(
        "ta-program/collect-iplog",
        "collect aborts if P already in iplog",
    ),
    b("ta-program/collect", "collect credits and logs P"),
    b(
        "ta-program/getbalance-nocert",
        "getbalance aborts without a certificate",
    ),
    b(
        "ta-program/getbalance",
        "getbalance outputs signed [bal, id]",
    ),
    b("deposit/1", "A sends [Deposit, x]"),
    b("deposit/2a", "abort: x > onbal_A"),
    b("deposit/2b", "onbal_A reduced by x"),
    b("deposit/2c", "id_A advanced"),
    b("deposit/2d", "confirmation signed over [SE_A.vk, x, id]"),
    b("deposit/3", "A hands the confirmation to its TA"),
    b("deposit/no-ta", "abort: client has no registered TA"),
    b("withdraw/1", "A sends the TA's [Withdraw, x, id, sig]"),
    b("withdraw/2a-id", "abort: id != id_A + 1"),
    b(
        "withdraw/2a-sig",
        "abort: signature does not verify under SE_A.vk",
    ),
    b("withdraw/2b", "onbal_A increased by x"),
    b("withdraw/2c", "id_A advanced"),
    b("withdraw/2d", "WithdrawConfirmed sent"),
    b(
        "offline-payment/1-ta",
        "receiver asks to be paid into its TA",
    ),
    b(
        "offline-payment/1-ua",
        "receiver without TA asks to be paid into its UA",
    ),
    b(
        "offline-payment/2",
        "sender's TA issues P without the server",
    ),
    b("offline-payment/3a-verify", "abort: payVerify(P) fails"),
    b(
        "offline-payment/3a-receiver",
        "abort: P.receiver differs from the requested receiver",
    ),
    b(
        "offline-payment/3a-iplog",
        "abort: P already in the receiver's log",
    ),
    b("offline-payment/3b", "receiver logs P"),
    b("offline-payment/3c", "TA receiver collects P"),
    b("offline-payment/3d", "UA receiver holds P for a claim"),
    b(
        "offline-payment/payverify-cert",
        "payVerify fails on a sender cert failing hw_cert_verify",
    ),
    b(
        "offline-payment/payverify-sig",
        "payVerify fails on a bad signature",
    ),
    b("offline-payment/payverify", "payVerify accepts a genuine P"),
    b("claim/1", "B sends [Claim, P]"),
    b("claim/2a-type", "abort: P.receiver is not a UA"),
    b("claim/2a-verify", "abort: payVerify(P) fails"),
    b("claim/2a-plog", "abort: P already in plog"),
    b("claim/2b", "receiver's onbal increased by P.amount"),
    b("claim/2c", "P added to plog"),
    b("claim/2d", "ClaimConfirmed sent"),
];

/// Which test reached which branch.
#[derive(Debug, Default)]
pub struct Checklist {
    hits: BTreeMap<&'static str, Vec<&'static str>>,
    current: &'static str,
}

impl Checklist {
    pub fn hit(&mut self, id: &'static str) {
        assert!(BRANCHES.iter().any(|b| b.id == id), "unknown branch {id}");
        let tests = self.hits.entry(id).or_default();
        if !tests.contains(&self.current) {
            tests.push(self.current);
        }
    }

    pub fn covered(&self) -> usize {
        self.hits.len()
    }

    pub fn missing(&self) -> Vec<&'static Branch> {
        BRANCHES
            .iter()
            .filter(|b| !self.hits.contains_key(b.id))
            .collect()
    }

    pub fn missing_for(&self, protocol: &str) -> Vec<&'static Branch> {
        self.missing()
            .into_iter()
            .filter(|b| b.id.split('/').next() == Some(protocol))
            .collect()
    }

    /// `branch -> tests` table, one line per branch.
    pub fn render(&self) -> String {
        BRANCHES
            .iter()
            .map(|b| {
                let by = self
                    .hits
                    .get(b.id)
                    .map_or("MISSING".to_owned(), |t| t.join(", "));
                format!("{:<36} {:<62} {by}\n", b.id, b.step)
            })
            .collect()
    }
}

const MODEL: &str = "conformance-handset";

/// One server, one OEM, and helpers to make clients.
pub struct Env {
    pub cfg: SecurityConfig,
    pub rng: ChaCha20Rng,
    pub server_keys: KeyPair,
    pub server: Server,
    pub oem: OemAuthority,
}

impl Env {
    pub fn new(seed: u64) -> Self {
        let cfg = SecurityConfig::default();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let server_keys = keygen(&cfg, &mut rng);
        let mut server = Server::new(cfg, server_keys.clone());
        let oem = OemAuthority::generate(&cfg, &mut rng);
        server.add_oem_root(oem.vk());
        Self {
            cfg,
            rng,
            server_keys,
            server,
            oem,
        }
    }

    pub fn ch(&mut self) -> LocalChannel<'_> {
        LocalChannel::new(&mut self.server)
    }

    pub fn device(&mut self) -> SecureDevice {
        SecureDevice::new(self.oem.manufacture(&self.cfg, MODEL, &mut self.rng))
    }

    pub fn unregistered(&mut self) -> Wallet {
        Wallet::generate(self.cfg, self.server.vk(), &mut self.rng)
    }

    pub fn plain(&mut self) -> Wallet {
        let mut w = self.unregistered();
        w.setup_client(&mut LocalChannel::new(&mut self.server))
            .expect("registration");
        w
    }

    pub fn with_ta(&mut self) -> Wallet {
        let dev = self.device();
        let mut w = self.plain().with_device(dev);
        w.setup_ta(&mut LocalChannel::new(&mut self.server), &mut self.rng)
            .expect("TA registration");
        w
    }

    pub fn funded(&mut self, online: u64, offline: u64) -> Wallet {
        let mut w = self.with_ta();
        self.server.mint(&w.vk(), online + offline).expect("mint");
        if offline > 0 {
            w.do_deposit(&mut LocalChannel::new(&mut self.server), offline)
                .expect("deposit");
        }
        w
    }

    /// A standalone TA, initialized and optionally activated.
    pub fn bare_ta(&mut self, activate: bool) -> (TrustedApp, VerifyingKey) {
        let dev = self.oem.manufacture(&self.cfg, MODEL, &mut self.rng);
        let mut ta = TrustedApp::provision(self.cfg, self.server.vk(), &dev);
        let (vk, _) = ta.init(&dev, &mut self.rng).expect("init");
        if activate {
            ta.cert_init(&Certificate::issue(CertKind::Ta, vk, &self.server_keys))
                .expect("cert_init");
        }
        (ta, vk)
    }

    pub fn deposit_sig(&self, ta_vk: &VerifyingKey, amount: u64, id: u64) -> ops_core::Signature {
        self.server_keys
            .sign(&deposit_confirmation_bytes(ta_vk, amount, id))
    }

    /// Sends `msg` as `w`, with `w`'s next nonce.
    pub fn send(&mut self, w: &mut Wallet, msg: WireMessage) -> Result<WireMessage, ServerError> {
        match w.send_raw(&mut LocalChannel::new(&mut self.server), msg) {
            Ok(reply) => Ok(reply),
            Err(WalletError::Server(e)) => Err(e),
            Err(e) => panic!("local channel failed: {e}"),
        }
    }
}

fn ta_bal(w: &Wallet) -> u64 {
    w.ta().expect("device").view().expect("readable").bal
}

fn ta_id(w: &Wallet) -> u64 {
    w.ta().expect("device").view().expect("readable").id
}

pub fn client_registration(c: &mut Checklist) {
    c.current = "client_registration";
    let mut env = Env::new(1);
    let mut w = env.unregistered();
    let vk = w.vk();
    let cert = w
        .setup_client(&mut env.ch())
        .expect("first registration succeeds");
    c.hit("client-registration/1");

    assert_eq!(env.server.state().userregistry.get(&vk), Some(&None));
    assert_eq!(env.server.ta_of(&vk), None);
    c.hit("client-registration/2b");
    assert_eq!(env.server.onbal(&vk), Some(0));
    c.hit("client-registration/2c");
    assert_eq!(cert.vk, vk);
    assert_eq!(cert.kind, CertKind::Ua);
    assert!(cert_verify(&cert, &env.server.vk()));
    assert!(!hw_cert_verify(&cert, &env.server.vk()));
    c.hit("client-registration/2d");
    assert_eq!(w.cert(), Some(&cert));
    c.hit("client-registration/2e");

    assert_eq!(
        env.server.register_client(&vk),
        Err(ServerError::AlreadyRegistered)
    );
    let again = env.send(&mut w, WireMessage::ClientRegister { vk });
    assert_eq!(again, Err(ServerError::AlreadyRegistered));
    c.hit("client-registration/2a");

    // registering someone else's key, or a forged envelope
    let other = env.unregistered();
    let spoof = env.send(&mut w, WireMessage::ClientRegister { vk: other.vk() });
    assert_eq!(spoof, Err(ServerError::Unauthenticated));
    let mut forged = AuthedRequest::sign(
        WireMessage::ClientRegister { vk: other.vk() },
        1,
        other.keys(),
    )
    .unwrap();
    forged.nonce += 1;
    assert_eq!(
        env.server.handle(&forged),
        Err(ServerError::Unauthenticated)
    );
    assert!(!env.server.is_registered(&other.vk()));
    c.hit("client-registration/auth");
}

pub fn ta_registration(c: &mut Checklist) {
    c.current = "ta_registration";
    let mut env = Env::new(2);
    let server_vk = env.server.vk();

    // the raw exchange, step by step
    let mut w = env.plain();
    let ua = w.vk();
    let identity = env.oem.manufacture(&env.cfg, MODEL, &mut env.rng);
    let mut ta = TrustedApp::provision(env.cfg, server_vk, &identity);
    let (ta_vk, att) = ta.init(&identity, &mut env.rng).unwrap();
    assert!(oem_cert_verify(&ta_vk, &att, &identity.vk(), MODEL));
    c.hit("ta-registration/1");

    let stranger = env.unregistered().vk();
    let reg =
        |s: &mut Server,
         ua: &VerifyingKey,
         ta: &VerifyingKey,
         att,
         dvk: &VerifyingKey,
         model: &str| { s.register_ta(ua, ta, att, dvk, model, &identity.oem_cert) };
    assert_eq!(
        reg(
            &mut env.server,
            &stranger,
            &ta_vk,
            &att,
            &identity.vk(),
            MODEL
        ),
        Err(ServerError::UnknownOrAlreadyProvisioned)
    );
    // attestation over another key, from another device, for another model
    let wrong_vk = keygen(&env.cfg, &mut env.rng).vk;
    let bad_att = identity.attest(&wrong_vk);
    assert_eq!(
        reg(
            &mut env.server,
            &ua,
            &ta_vk,
            &bad_att,
            &identity.vk(),
            MODEL
        ),
        Err(ServerError::AttestationRejected)
    );
    assert_eq!(
        reg(&mut env.server, &ua, &ta_vk, &att, &wrong_vk, MODEL),
        Err(ServerError::AttestationRejected)
    );
    assert_eq!(
        reg(&mut env.server, &ua, &ta_vk, &att, &identity.vk(), "other"),
        Err(ServerError::AttestationRejected)
    );
    let rogue_oem = OemAuthority::generate(&env.cfg, &mut env.rng);
    let rogue = rogue_oem.manufacture(&env.cfg, MODEL, &mut env.rng);
    let rogue_att = rogue.attest(&ta_vk);
    assert_eq!(
        env.server
            .register_ta(&ua, &ta_vk, &rogue_att, &rogue.vk(), MODEL, &rogue.oem_cert),
        Err(ServerError::AttestationRejected)
    );
    assert_eq!(env.server.ta_of(&ua), None);
    c.hit("ta-registration/2a-attestation");

    let cert = reg(&mut env.server, &ua, &ta_vk, &att, &identity.vk(), MODEL)
        .expect("honest registration");
    assert_eq!(env.server.idctr(&ua), Some(0));
    c.hit("ta-registration/2b");
    assert_eq!((cert.vk, cert.kind), (ta_vk, CertKind::Ta));
    assert!(hw_cert_verify(&cert, &server_vk));
    assert!(!cert_verify(&cert, &server_vk));
    c.hit("ta-registration/2c");
    assert_eq!(env.server.ta_of(&ua), Some(ta_vk));
    assert_eq!(env.server.owner_of_ta(&ta_vk), Some(ua));
    c.hit("ta-registration/2e");
    // the entry is no longer (vk_A, none): a second TA is refused
    assert_eq!(
        reg(&mut env.server, &ua, &ta_vk, &att, &identity.vk(), MODEL),
        Err(ServerError::UnknownOrAlreadyProvisioned)
    );
    c.hit("ta-registration/2a-registry");

    assert!(matches!(
        ta.pay(1, w.cert().unwrap()),
        Err(TaError::NotActivated)
    ));
    ta.cert_init(&cert).unwrap();
    assert_eq!(ta.view().unwrap().cert, Some(cert.clone()));
    c.hit("ta-registration/3");

    // the same TA key cannot be bound to a second client
    let w2 = env.plain();
    assert_eq!(
        reg(
            &mut env.server,
            &w2.vk(),
            &ta_vk,
            &att,
            &identity.vk(),
            MODEL
        ),
        Err(ServerError::TaKeyInUse)
    );
    c.hit("ta-registration/key-reuse");

    // the wallet drives the same exchange over the wire
    let dev = env.device();
    w = env.plain().with_device(dev);
    let got = w
        .setup_ta(&mut LocalChannel::new(&mut env.server), &mut env.rng)
        .expect("wallet registration");
    assert!(w.is_ta_active());
    assert_eq!(w.ta().unwrap().cert().unwrap(), Some(got.clone()));
    assert_eq!(env.server.ta_of(&w.vk()), Some(got.vk));
    c.hit("ta-registration/2d");
    let mut late = env.unregistered().with_device(env.device());
    assert!(matches!(
        late.setup_ta(&mut LocalChannel::new(&mut env.server), &mut env.rng),
        Err(WalletError::Server(ServerError::UnknownClient))
    ));
}

pub fn ta_program(c: &mut Checklist) {
    c.current = "ta_program";
    let mut env = Env::new(3);
    let server_vk = env.server.vk();
    let identity = env.oem.manufacture(&env.cfg, MODEL, &mut env.rng);
    let mut ta = TrustedApp::provision(env.cfg, server_vk, &identity);
    let (vk, att) = ta.init(&identity, &mut env.rng).unwrap();
    let v = ta.view().unwrap();
    assert_eq!(
        (v.vk, v.bal, v.cert.clone(), v.iplog.len(), v.id, v.pid),
        (vk, 0, None, 0, 0, 0)
    );
    assert!(matches!(
        ta.init(&identity, &mut env.rng),
        Err(TaError::AlreadyInitialized)
    ));
    c.hit("ta-program/init");
    assert!(oem_cert_verify(&vk, &att, &identity.vk(), MODEL));
    c.hit("ta-program/init-output");

    // every method but init needs a certificate
    let some_cert = env.plain().cert().unwrap().clone();
    assert!(matches!(
        ta.deposit(5, 1, &env.deposit_sig(&vk, 5, 1)),
        Err(TaError::NotActivated)
    ));
    c.hit("ta-program/deposit-nocert");
    assert!(matches!(ta.withdraw(1), Err(TaError::NotActivated)));
    c.hit("ta-program/withdraw-nocert");
    assert!(matches!(ta.pay(1, &some_cert), Err(TaError::NotActivated)));
    c.hit("ta-program/pay-nocert");
    assert!(matches!(ta.get_balance(), Err(TaError::NotActivated)));
    c.hit("ta-program/getbalance-nocert");

    let ua_kind = Certificate::issue(CertKind::Ua, vk, &env.server_keys);
    let rogue_keys = keygen(&env.cfg, &mut env.rng);
    let rogue_issuer = Certificate::issue(CertKind::Ta, vk, &rogue_keys);
    assert!(matches!(
        ta.cert_init(&ua_kind),
        Err(TaError::InvalidCertificate)
    ));
    assert!(matches!(
        ta.cert_init(&rogue_issuer),
        Err(TaError::InvalidCertificate)
    ));
    c.hit("ta-program/certinit-abort");
    let not_mine = Certificate::issue(CertKind::Ta, rogue_keys.vk, &env.server_keys);
    assert!(matches!(
        ta.cert_init(&not_mine),
        Err(TaError::CertificateNotMine)
    ));
    c.hit("ta-program/certinit-key");
    let cert = Certificate::issue(CertKind::Ta, vk, &env.server_keys);
    ta.cert_init(&cert).unwrap();
    assert_eq!(ta.cert().unwrap(), Some(cert.clone()));
    c.hit("ta-program/certinit");

    // deposit
    let (other_ta, other_vk) = env.bare_ta(true);
    drop(other_ta);
    assert!(matches!(
        ta.deposit(10, 2, &env.deposit_sig(&vk, 10, 2)),
        Err(TaError::CounterOutOfSync { .. })
    ));
    assert!(matches!(
        ta.deposit(10, 0, &env.deposit_sig(&vk, 10, 0)),
        Err(TaError::CounterOutOfSync { .. })
    ));
    c.hit("ta-program/deposit-id");
    assert!(matches!(
        ta.deposit(10, 1, &env.deposit_sig(&vk, 9, 1)),
        Err(TaError::InvalidConfirmation)
    ));
    assert!(matches!(
        ta.deposit(10, 1, &env.deposit_sig(&other_vk, 10, 1)),
        Err(TaError::InvalidConfirmation)
    ));
    let forged = rogue_keys.sign(&deposit_confirmation_bytes(&vk, 10, 1));
    assert!(matches!(
        ta.deposit(10, 1, &forged),
        Err(TaError::InvalidConfirmation)
    ));
    c.hit("ta-program/deposit-sig");
    ta.deposit(10, 1, &env.deposit_sig(&vk, 10, 1)).unwrap();
    let v = ta.view().unwrap();
    assert_eq!((v.bal, v.id), (10, 1));
    assert!(matches!(
        ta.deposit(10, 1, &env.deposit_sig(&vk, 10, 1)),
        Err(TaError::CounterOutOfSync { .. })
    ));
    c.hit("ta-program/deposit");

    // withdraw
    assert!(matches!(
        ta.withdraw(11),
        Err(TaError::InsufficientOfflineFunds)
    ));
    assert_eq!(ta.view().unwrap().bal, 10);
    c.hit("ta-program/withdraw-funds");
    let conf = ta.withdraw(3).unwrap();
    let v = ta.view().unwrap();
    assert_eq!((v.bal, v.id, conf.amount, conf.id), (7, 2, 3, 2));
    assert!(conf.verify(&vk));
    assert!(!conf.verify(&other_vk));
    c.hit("ta-program/withdraw");

    // pay
    let receiver = env.with_ta();
    let rcert = receiver.ta().unwrap().cert().unwrap().unwrap();
    assert!(matches!(
        ta.pay(8, &rcert),
        Err(TaError::InsufficientOfflineFunds)
    ));
    c.hit("ta-program/pay-funds");
    let p = ta.pay(7, &rcert).unwrap();
    let v = ta.view().unwrap();
    assert_eq!((v.bal, v.pid, v.id), (0, 1, 2));
    assert_eq!((p.amount, p.index), (7, 1));
    assert_eq!((&p.sender, &p.receiver), (&cert, &rcert));
    assert!(pay_verify(&p, &server_vk));
    c.hit("ta-program/pay");

    // collect, on a second TA
    let (mut ta2, vk2) = env.bare_ta(true);
    let cert2 = ta2.cert().unwrap().unwrap();
    ta.deposit(5, 3, &env.deposit_sig(&vk, 5, 3)).unwrap();
    let to2 = ta.pay(4, &cert2).unwrap();
    let (mut idle, _) = env.bare_ta(false);
    assert!(matches!(idle.collect(&to2), Err(TaError::NotActivated)));
    c.hit("ta-program/collect-nocert");
    let mut inflated = to2.clone();
    inflated.amount = 40;
    assert!(matches!(
        ta2.collect(&inflated),
        Err(TaError::InvalidPayment)
    ));
    let mut ua_sender = to2.clone();
    ua_sender.sender = Certificate::issue(CertKind::Ua, vk, &env.server_keys);
    assert!(matches!(
        ta2.collect(&ua_sender),
        Err(TaError::InvalidPayment)
    ));
    c.hit("ta-program/collect-verify");
    assert!(matches!(ta2.collect(&p), Err(TaError::NotAddressedToMe)));
    c.hit("ta-program/collect-receiver");
    ta2.collect(&to2).unwrap();
    let v2 = ta2.view().unwrap();
    assert_eq!(v2.bal, 4);
    assert!(v2.iplog.contains(&to2.key()));
    c.hit("ta-program/collect");
    assert!(matches!(ta2.collect(&to2), Err(TaError::AlreadyCollected)));
    assert_eq!(ta2.view().unwrap().bal, 4);
    c.hit("ta-program/collect-iplog");

    let bal = ta2.get_balance().unwrap();
    assert_eq!((bal.bal, bal.id), (4, 0));
    assert!(bal.verify(&vk2));
    assert!(!bal.verify(&vk));
    c.hit("ta-program/getbalance");

    // a rolled-back store stops every method
    let old = ta2.store().blob().unwrap().to_vec();
    ta2.deposit(1, 1, &env.deposit_sig(&vk2, 1, 1)).unwrap();
    ta2.store_mut().replace_blob(old);
    assert!(matches!(
        ta2.get_balance(),
        Err(TaError::Store(StoreError::RollbackDetected { .. }))
    ));
}

pub fn deposit(c: &mut Checklist) {
    c.current = "deposit";
    let mut env = Env::new(4);
    let mut w = env.with_ta();
    let ua = w.vk();
    let ta_vk = w.ta().unwrap().vk().unwrap();
    env.server.mint(&ua, 50).unwrap();

    assert_eq!(
        env.send(&mut w, WireMessage::DepositReq { amount: 51 }),
        Err(ServerError::InsufficientOnlineFunds)
    );
    assert_eq!(env.server.onbal(&ua), Some(50));
    assert_eq!(env.server.idctr(&ua), Some(0));
    c.hit("deposit/2a");

    let reply = env
        .send(&mut w, WireMessage::DepositReq { amount: 20 })
        .unwrap();
    c.hit("deposit/1");
    assert_eq!(env.server.onbal(&ua), Some(30));
    c.hit("deposit/2b");
    assert_eq!(env.server.idctr(&ua), Some(1));
    c.hit("deposit/2c");
    let WireMessage::DepositConfirmed { amount, id, sig } = reply else {
        panic!("unexpected {reply:?}")
    };
    assert_eq!((amount, id), (20, 1));
    assert!(env
        .server
        .vk()
        .verify(&deposit_confirmation_bytes(&ta_vk, 20, 1), &sig));
    assert!(!env
        .server
        .vk()
        .verify(&deposit_confirmation_bytes(&ta_vk, 21, 1), &sig));
    c.hit("deposit/2d");
    w.ta_mut().unwrap().deposit(amount, id, &sig).unwrap();
    assert_eq!((ta_bal(&w), ta_id(&w)), (20, 1));
    c.hit("deposit/3");

    // the whole round through the wallet; x = onbal is allowed
    w.do_deposit(&mut env.ch(), 30).unwrap();
    assert_eq!(env.server.onbal(&ua), Some(0));
    assert_eq!((ta_bal(&w), ta_id(&w)), (50, 2));
    assert_eq!(env.server.idctr(&ua), Some(2));
    assert!(matches!(
        w.do_deposit(&mut env.ch(), 1),
        Err(WalletError::Server(ServerError::InsufficientOnlineFunds))
    ));

    let plain = env.plain();
    env.server.mint(&plain.vk(), 5).unwrap();
    assert_eq!(
        env.server.handle_deposit(&plain.vk(), 1),
        Err(ServerError::NoTaRegistered)
    );
    assert_eq!(env.server.onbal(&plain.vk()), Some(5));
    c.hit("deposit/no-ta");
}

pub fn withdraw(c: &mut Checklist) {
    c.current = "withdraw";
    let mut env = Env::new(5);
    let mut w = env.funded(0, 30);
    let ua = w.vk();
    let conf = w.ta_mut().unwrap().withdraw(12).unwrap();
    assert_eq!((conf.amount, conf.id), (12, 2));
    c.hit("withdraw/1");

    let skip = w.ta_mut().unwrap().withdraw(1).unwrap();
    assert_eq!(
        env.server
            .handle_withdraw(&ua, skip.amount, skip.id, &skip.sig),
        Err(ServerError::CounterOutOfSync)
    );
    // the skipped confirmation is gone; restore the TA to a consistent story
    assert_eq!(
        env.server.handle_withdraw(&ua, 13, conf.id, &conf.sig),
        Err(ServerError::InvalidConfirmation)
    );
    let (other, _) = env.bare_ta(true);
    let mut other = other;
    let deposit_sig = env.deposit_sig(&other.vk().unwrap(), 20, 1);
    other.deposit(20, 1, &deposit_sig).unwrap();
    let foreign = other.withdraw(12).unwrap();
    // right id, but signed by a TA that is not A's
    let forged_id = env.server.idctr(&ua).unwrap() + 1;
    assert_eq!(foreign.id, 2);
    assert_eq!(forged_id, 2);
    assert_eq!(
        env.server.handle_withdraw(&ua, 12, 2, &foreign.sig),
        Err(ServerError::InvalidConfirmation)
    );
    c.hit("withdraw/2a-sig");

    let reply = env.send(
        &mut w,
        WireMessage::WithdrawReq {
            amount: 12,
            id: 2,
            sig: conf.sig,
        },
    );
    assert_eq!(reply, Ok(WireMessage::WithdrawConfirmed));
    c.hit("withdraw/2d");
    assert_eq!(env.server.onbal(&ua), Some(12));
    c.hit("withdraw/2b");
    assert_eq!(env.server.idctr(&ua), Some(2));
    c.hit("withdraw/2c");
    // a second use of the same confirmation, or one from the past
    assert_eq!(
        env.server.handle_withdraw(&ua, 12, 2, &conf.sig),
        Err(ServerError::CounterOutOfSync)
    );
    assert_eq!(env.server.onbal(&ua), Some(12));
    c.hit("withdraw/2a-id");

    // the skipped confirmation (id 3) is now exactly next
    env.server
        .handle_withdraw(&ua, skip.amount, skip.id, &skip.sig)
        .unwrap();
    assert_eq!(env.server.idctr(&ua), Some(ta_id(&w)));

    // the wallet round keeps both counters equal
    w.do_withdraw(&mut env.ch(), 5).unwrap();
    assert_eq!((ta_bal(&w), ta_id(&w)), (12, 4));
    assert_eq!(env.server.idctr(&ua), Some(4));
    assert_eq!(env.server.onbal(&ua), Some(18));
}

pub fn offline_payment(c: &mut Checklist) {
    c.current = "offline_payment";
    let mut env = Env::new(6);
    let server_vk = env.server.vk();
    let mut a = env.funded(0, 20);
    let mut b = env.with_ta();
    let mut d = env.plain();
    let mut e = env.with_ta();

    let req_b = b.request_payment(5).unwrap();
    assert_eq!(
        Some(req_b.receiver.clone()),
        b.ta().unwrap().cert().unwrap()
    );
    c.hit("offline-payment/1-ta");
    let req_d = d.request_payment(3).unwrap();
    assert_eq!(Some(&req_d.receiver), d.cert());
    c.hit("offline-payment/1-ua");

    // nothing here touches the server
    let minted = env.server.minted();
    let p = a.make_payment(&req_b, 1).unwrap();
    let q = a.make_payment(&req_d, 2).unwrap();
    assert_eq!(ta_bal(&a), 12);
    c.hit("offline-payment/2");

    assert!(pay_verify(&p, &server_vk));
    c.hit("offline-payment/payverify");
    let mut bad_sig = p.clone();
    bad_sig.sig.0[0] ^= 1;
    assert!(!pay_verify(&bad_sig, &server_vk));
    let mut bad_amount = p.clone();
    bad_amount.amount += 1;
    assert!(!pay_verify(&bad_amount, &server_vk));
    c.hit("offline-payment/payverify-sig");
    let mut ua_sender = p.clone();
    ua_sender.sender = a.cert().unwrap().clone();
    assert!(!pay_verify(&ua_sender, &server_vk));
    let rogue = keygen(&env.cfg, &mut env.rng);
    let mut self_issued = p.clone();
    self_issued.sender = Certificate::issue(CertKind::Ta, p.sender.vk, &rogue);
    assert!(!pay_verify(&self_issued, &server_vk));
    c.hit("offline-payment/payverify-cert");

    assert_eq!(
        b.accept_payment(&bad_sig, &req_b),
        Err(Rejection::InvalidPayment)
    );
    assert_eq!(
        b.accept_payment(&ua_sender, &req_b),
        Err(Rejection::InvalidPayment)
    );
    c.hit("offline-payment/3a-verify");
    // P made out to B is useless to E, even if E asked for the same amount
    let req_e = e.request_payment(5).unwrap();
    assert_eq!(e.accept_payment(&p, &req_e), Err(Rejection::WrongReceiver));
    let other_req = PayRequest {
        amount: 5,
        receiver: b.cert().unwrap().clone(),
    };
    assert_eq!(
        b.accept_payment(&p, &other_req),
        Err(Rejection::WrongReceiver)
    );
    c.hit("offline-payment/3a-receiver");
    assert_eq!(
        b.accept_payment(
            &p,
            &PayRequest {
                amount: 4,
                ..req_b.clone()
            }
        ),
        Err(Rejection::AmountMismatch)
    );

    let acc = b.accept_payment(&p, &req_b).unwrap();
    assert!(b.iplog().contains(&p.key()));
    c.hit("offline-payment/3b");
    assert_eq!(acc.collected, Some(Ok(())));
    assert_eq!(ta_bal(&b), 5);
    assert!(b.ta().unwrap().view().unwrap().iplog.contains(&p.key()));
    c.hit("offline-payment/3c");
    assert_eq!(b.accept_payment(&p, &req_b), Err(Rejection::Replayed));
    assert_eq!(ta_bal(&b), 5);
    c.hit("offline-payment/3a-iplog");

    let acc = d.accept_payment(&q, &req_d).unwrap();
    assert_eq!(acc.collected, None);
    assert_eq!(d.inbox().len(), 1);
    assert_eq!(env.server.onbal(&d.vk()), Some(0));
    c.hit("offline-payment/3d");
    assert_eq!(env.server.minted(), minted);

    // the claim later
    let claimed = d.claim_all(&mut env.ch());
    assert!(matches!(
        claimed.as_slice(),
        [(_, Ok(ClaimOutcome::Credited))]
    ));
    assert_eq!(env.server.onbal(&d.vk()), Some(3));
}

pub fn claim(c: &mut Checklist) {
    c.current = "claim";
    let mut env = Env::new(7);
    let mut a = env.funded(0, 20);
    let mut b = env.with_ta();
    let mut d = env.plain();

    let req_d = d.request_payment(6).unwrap();
    let p = a.make_payment(&req_d, 1).unwrap();
    d.accept_payment(&p, &req_d).unwrap();
    let req_b = b.request_payment(2).unwrap();
    let to_ta = a.make_payment(&req_b, 2).unwrap();

    assert_eq!(
        env.send(
            &mut d,
            WireMessage::ClaimReq {
                payment: to_ta.clone()
            }
        ),
        Err(ServerError::MustBeCollected)
    );
    c.hit("claim/2a-type");
    let mut inflated = p.clone();
    inflated.amount = 60;
    assert_eq!(
        env.send(&mut d, WireMessage::ClaimReq { payment: inflated }),
        Err(ServerError::InvalidPayment)
    );
    c.hit("claim/2a-verify");
    assert_eq!(env.server.onbal(&d.vk()), Some(0));

    let reply = d.do_claim(&mut env.ch(), &p.key());
    c.hit("claim/1");
    assert_eq!(reply.unwrap(), ClaimOutcome::Credited);
    c.hit("claim/2d");
    assert_eq!(env.server.onbal(&d.vk()), Some(6));
    c.hit("claim/2b");
    assert!(env.server.is_claimed(&p.key()));
    c.hit("claim/2c");

    // anyone resubmitting it, including its rightful owner
    assert_eq!(
        env.send(&mut d, WireMessage::ClaimReq { payment: p.clone() }),
        Err(ServerError::AlreadyClaimed)
    );
    assert_eq!(
        env.send(&mut b, WireMessage::ClaimReq { payment: p.clone() }),
        Err(ServerError::AlreadyClaimed)
    );
    assert_eq!(env.server.onbal(&d.vk()), Some(6));
    c.hit("claim/2a-plog");

    // the TA-addressed one is still collectable exactly once
    b.accept_payment(&to_ta, &req_b).unwrap();
    assert_eq!(ta_bal(&b), 2);
    let reply: ServerReply = Err::<WireMessage, _>(ServerError::MustBeCollected).into();
    assert_eq!(reply, ServerReply::Abort(ServerError::MustBeCollected));
}

pub type ProtocolTest = (&'static str, fn(&mut Checklist));

/// The seven protocol tests, in protocol order.
pub const TESTS: [ProtocolTest; 7] = [
    ("client-registration", client_registration),
    ("ta-registration", ta_registration),
    ("ta-program", ta_program),
    ("deposit", deposit),
    ("withdraw", withdraw),
    ("offline-payment", offline_payment),
    ("claim", claim),
];

pub fn run_all() -> Checklist {
    let mut c = Checklist::default();
    for (_, test) in TESTS {
        test(&mut c);
    }
    c
}
