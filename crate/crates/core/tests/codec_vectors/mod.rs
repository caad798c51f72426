//! Golden and mutation fixtures from the independent Python encoder in
//! `tests/fixtures/gen_codec_fixtures.py`.
//!
//! A golden fixture describes a value structurally; the value is rebuilt
//! here with the crate's own constructors and signing, and its encoding
//! must equal the fixture bytes exactly. A mutation must be rejected by the
//! named decoder, or (for `reject: "verify"`) decode cleanly and then fail
//! its signature check.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::Cursor;

use ops_core::codec::{
    payment_signed_bytes, read_frame, write_frame, AuthedRequest, Decode, Encode,
};
use ops_core::crypto::{
    attestation_bytes, balance_attestation_bytes, cert_verify, deposit_confirmation_bytes,
    device_cert_bytes, hw_cert_verify, withdraw_confirmation_bytes, CertKind, SigningKey,
};
use ops_core::{pay_verify, Certificate, KeyPair, Payment, Signature, WireMessage};
use serde_json::Value;

const FIXTURES: &str = include_str!("../fixtures/codec_fixtures.json");

pub struct Fixtures {
    keys: BTreeMap<String, KeyPair>,
    doc: Value,
}

#[derive(Debug, Default)]
pub struct Tally {
    pub golden: usize,
    pub golden_matched: usize,
    pub mutations: usize,
    pub mutations_rejected: usize,
    pub failures: Vec<String>,
}

impl Tally {
    pub fn all_good(&self) -> bool {
        self.failures.is_empty()
            && self.golden == self.golden_matched
            && self.mutations == self.mutations_rejected
    }
}

fn s<'a>(v: &'a Value, field: &str) -> &'a str {
    v[field]
        .as_str()
        .unwrap_or_else(|| panic!("missing string {field} in {v}"))
}

fn n(v: &Value, field: &str) -> u64 {
    v[field]
        .as_u64()
        .unwrap_or_else(|| panic!("missing integer {field} in {v}"))
}

fn kind(name: &str) -> CertKind {
    match name {
        "ua" => CertKind::Ua,
        "ta" => CertKind::Ta,
        other => panic!("certificate kind {other}"),
    }
}

impl Fixtures {
    pub fn load() -> Self {
        let doc: Value = serde_json::from_str(FIXTURES).expect("fixture file is JSON");
        let keys = doc["keys"]
            .as_object()
            .expect("key table")
            .iter()
            .map(|(name, seed)| {
                let seed = hex::decode(seed.as_str().unwrap()).unwrap();
                (
                    name.clone(),
                    KeyPair::from_signing_key(SigningKey::from_bytes(&seed).unwrap()),
                )
            })
            .collect();
        Self { keys, doc }
    }

    pub fn golden(&self) -> &[Value] {
        self.doc["golden"].as_array().expect("golden list")
    }

    pub fn mutations(&self) -> &[Value] {
        self.doc["mutations"].as_array().expect("mutation list")
    }

    fn key(&self, name: &str) -> &KeyPair {
        &self.keys[name]
    }

    fn server(&self) -> &KeyPair {
        self.key("server")
    }

    fn cert(&self, d: &Value) -> Certificate {
        Certificate::issue(
            kind(s(d, "kind")),
            self.key(s(d, "subject")).vk,
            self.key(s(d, "issuer")),
        )
    }

    fn payment(&self, d: &Value) -> Payment {
        let mut p = Payment {
            amount: n(d, "amount"),
            sender: self.cert(&d["sender"]),
            receiver: self.cert(&d["receiver"]),
            index: n(d, "index"),
            sig: Signature([0; 64]),
            created_at: d["created_at"].as_u64(),
        };
        p.sig = self.key(s(d, "signer")).sign(&payment_signed_bytes(&p));
        p
    }

    fn wire(&self, d: &Value) -> WireMessage {
        match s(d, "kind") {
            "ClientRegister" => WireMessage::ClientRegister {
                vk: self.key(s(d, "vk")).vk,
            },
            "ClientRegisterAck" => WireMessage::ClientRegisterAck {
                cert: self.cert(&d["cert"]),
            },
            "TaRegisterAck" => WireMessage::TaRegisterAck {
                cert: self.cert(&d["cert"]),
            },
            "TaRegister" => {
                let model = s(d, "model");
                let device = self.key(s(d, "device"));
                let ta_vk = self.key(s(d, "ta")).vk;
                WireMessage::TaRegister {
                    device_vk: device.vk,
                    device_model: model.to_owned(),
                    device_cert: self
                        .key(s(d, "oem"))
                        .sign(&device_cert_bytes(&device.vk, model)),
                    ta_vk,
                    ua_vk: self.key(s(d, "ua")).vk,
                    attestation: device.sign(&attestation_bytes(&ta_vk, model)),
                }
            }
            "DepositReq" => WireMessage::DepositReq {
                amount: n(d, "amount"),
            },
            "DepositConfirmed" => {
                let (amount, id) = (n(d, "amount"), n(d, "id"));
                let bytes = deposit_confirmation_bytes(&self.key(s(d, "ta")).vk, amount, id);
                WireMessage::DepositConfirmed {
                    amount,
                    id,
                    sig: self.key(s(d, "signer")).sign(&bytes),
                }
            }
            "WithdrawReq" => {
                let (amount, id) = (n(d, "amount"), n(d, "id"));
                let sig = self
                    .key(s(d, "signer"))
                    .sign(&withdraw_confirmation_bytes(amount, id));
                WireMessage::WithdrawReq { amount, id, sig }
            }
            "WithdrawConfirmed" => WireMessage::WithdrawConfirmed,
            "PayReq" => WireMessage::PayReq {
                amount: n(d, "amount"),
                receiver: self.cert(&d["receiver"]),
            },
            "PaymentTransfer" => WireMessage::PaymentTransfer {
                payment: self.payment(&d["payment"]),
            },
            "PayConfirmed" => WireMessage::PayConfirmed,
            "ClaimReq" => WireMessage::ClaimReq {
                payment: self.payment(&d["payment"]),
            },
            "ClaimConfirmed" => WireMessage::ClaimConfirmed,
            other => panic!("message kind {other}"),
        }
    }

    fn request(&self, d: &Value) -> AuthedRequest {
        AuthedRequest::sign(
            self.wire(&d["message"]),
            n(d, "nonce"),
            self.key(s(d, "sender")),
        )
        .unwrap()
    }

    fn signed(&self, d: &Value) -> Vec<u8> {
        match s(d, "what") {
            "cert" => Certificate::signed_bytes(&self.key(s(d, "subject")).vk, kind(s(d, "kind"))),
            "attestation" => attestation_bytes(&self.key(s(d, "ta")).vk, s(d, "model")),
            "device_cert" => device_cert_bytes(&self.key(s(d, "device")).vk, s(d, "model")),
            "deposit" => {
                deposit_confirmation_bytes(&self.key(s(d, "ta")).vk, n(d, "amount"), n(d, "id"))
            }
            "withdraw" => withdraw_confirmation_bytes(n(d, "amount"), n(d, "id")),
            "balance" => balance_attestation_bytes(n(d, "bal"), n(d, "id")),
            "payment" => payment_signed_bytes(&self.payment(&d["payment"])),
            "request" => {
                AuthedRequest::signed_bytes(&self.wire(&d["message"]), n(d, "nonce")).unwrap()
            }
            other => panic!("signed structure {other}"),
        }
    }

    /// Encodes the value a golden fixture describes.
    pub fn build(&self, ty: &str, d: &Value) -> Vec<u8> {
        match ty {
            "cert" => self.cert(d).encode().unwrap(),
            "payment" => self.payment(d).encode().unwrap(),
            "wire" => self.wire(d).encode().unwrap(),
            "request" => self.request(d).encode().unwrap(),
            "frame" => {
                let mut out = Vec::new();
                write_frame(&mut out, &self.wire(&d["message"]).encode().unwrap()).unwrap();
                out
            }
            "signed" => self.signed(d),
            other => panic!("fixture type {other}"),
        }
    }

    /// Decodes and re-encodes; `None` when the decoder rejects the bytes.
    pub fn reencode(&self, ty: &str, bytes: &[u8]) -> Option<Vec<u8>> {
        match ty {
            "cert" => Certificate::decode(bytes).ok().map(|v| v.encode().unwrap()),
            "payment" => Payment::decode(bytes).ok().map(|v| v.encode().unwrap()),
            "wire" => WireMessage::decode(bytes).ok().map(|v| v.encode().unwrap()),
            "request" => AuthedRequest::decode(bytes)
                .ok()
                .map(|v| v.encode().unwrap()),
            "frame" => {
                let mut cur = Cursor::new(bytes);
                let payload = read_frame(&mut cur).ok()??;
                if cur.position() as usize != bytes.len() {
                    return None;
                }
                let msg = WireMessage::decode(&payload).ok()?;
                let mut out = Vec::new();
                write_frame(&mut out, &msg.encode().unwrap()).unwrap();
                Some(out)
            }
            _ => None,
        }
    }

    /// Whether the decoded value's signature checks out.
    fn verifies(&self, ty: &str, bytes: &[u8]) -> bool {
        let server_vk = self.server().vk;
        match ty {
            "cert" => {
                let c = Certificate::decode(bytes).unwrap();
                cert_verify(&c, &server_vk) || hw_cert_verify(&c, &server_vk)
            }
            "payment" => pay_verify(&Payment::decode(bytes).unwrap(), &server_vk),
            "request" => AuthedRequest::decode(bytes).unwrap().verify(),
            other => panic!("no verifier for {other}"),
        }
    }

    pub fn check(&self) -> Tally {
        let mut t = Tally::default();
        for g in self.golden() {
            t.golden += 1;
            let (name, ty) = (s(g, "name"), s(g, "type"));
            let want = hex::decode(s(g, "hex")).unwrap();
            let got = self.build(ty, &g["value"]);
            if got != want {
                t.failures.push(format!("golden {name}: encoding differs"));
                continue;
            }
            if ty != "signed" && self.reencode(ty, &want).as_deref() != Some(&want[..]) {
                t.failures
                    .push(format!("golden {name}: decode/encode is not the identity"));
                continue;
            }
            if ty != "signed" && ty != "wire" && ty != "frame" && !self.verifies(ty, &want) {
                t.failures
                    .push(format!("golden {name}: signature does not verify"));
                continue;
            }
            t.golden_matched += 1;
        }
        for m in self.mutations() {
            t.mutations += 1;
            let (name, ty) = (s(m, "name"), s(m, "decoder"));
            let bytes = hex::decode(s(m, "hex")).unwrap();
            let decoded = self.reencode(ty, &bytes).is_some();
            let rejected = match s(m, "reject") {
                "decode" => !decoded,
                "verify" if !decoded => {
                    t.failures.push(format!(
                        "mutation {name}: meant to decode, then fail verification"
                    ));
                    false
                }
                "verify" => !self.verifies(ty, &bytes),
                other => panic!("reject mode {other}"),
            };
            if rejected {
                t.mutations_rejected += 1;
            } else {
                t.failures
                    .push(format!("mutation {name}: accepted ({})", s(m, "note")));
            }
        }
        t
    }
}
