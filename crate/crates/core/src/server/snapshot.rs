//! Durable server state.
//!
//! ```text
//! bytes("OPSS") ‖ version u8 ‖ lambda u32 ‖ state ‖ sha256(all preceding)
//! ```
//!
//! Any decoding failure or digest mismatch on load is reported as
//! [`ServerError::CorruptState`]; nothing is partially restored.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::codec::{decode_set, encode_set, CodecError, Reader, Writer};
use crate::crypto::{hash, Digest, SecurityConfig, VerifyingKey, DIGEST_LEN};

use super::{Server, ServerError, ServerState, Session};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"OPSS";
pub const SNAPSHOT_VERSION: u8 = 1;

fn put_map<V>(
    w: &mut Writer,
    map: &BTreeMap<VerifyingKey, V>,
    mut f: impl FnMut(&mut Writer, &V) -> Result<(), CodecError>,
) -> Result<(), CodecError> {
    w.count(map.len())?;
    for (k, v) in map {
        w.put(k)?;
        f(w, v)?;
    }
    Ok(())
}

fn get_map<V>(
    r: &mut Reader<'_>,
    min_elem: usize,
    mut f: impl FnMut(&mut Reader<'_>) -> Result<V, CodecError>,
) -> Result<BTreeMap<VerifyingKey, V>, CodecError> {
    let n = r.count(min_elem)?;
    let mut out = BTreeMap::new();
    for _ in 0..n {
        let k: VerifyingKey = r.get()?;
        if out.keys().next_back().is_some_and(|last| &k <= last) {
            return Err(CodecError::Malformed("map keys not strictly ascending"));
        }
        let v = f(r)?;
        out.insert(k, v);
    }
    Ok(out)
}

fn encode_state(w: &mut Writer, s: &ServerState) -> Result<(), CodecError> {
    w.put(&s.keys)?;
    put_map(w, &s.userregistry, |w, v| w.put(v).map(|_| ()))?;
    put_map(w, &s.onbal, |w, v| {
        w.u64(*v);
        Ok(())
    })?;
    put_map(w, &s.idctr, |w, v| {
        w.u64(*v);
        Ok(())
    })?;
    encode_set(w, s.plog.iter())?;
    encode_set(w, s.oem_roots.iter())?;
    put_map(w, &s.sessions, |w, v| {
        w.u64(v.nonce).bytes(&v.request.0)?.put(&v.reply)?;
        Ok(())
    })?;
    put_map(w, &s.last_deposit, |w, (id, x)| {
        w.u64(*id).u64(*x);
        Ok(())
    })?;
    w.u64(s.minted);
    Ok(())
}

fn decode_state(r: &mut Reader<'_>) -> Result<ServerState, CodecError> {
    Ok(ServerState {
        keys: r.get()?,
        userregistry: get_map(r, 37, |r| r.get())?,
        onbal: get_map(r, 44, |r| r.u64())?,
        idctr: get_map(r, 44, |r| r.u64())?,
        plog: decode_set(r, 44)?,
        oem_roots: decode_set::<VerifyingKey>(r, 36)?,
        sessions: get_map(r, 80, |r| {
            Ok(Session {
                nonce: r.u64()?,
                request: Digest(r.fixed::<DIGEST_LEN>()?),
                reply: r.get()?,
            })
        })?,
        last_deposit: get_map(r, 52, |r| Ok((r.u64()?, r.u64()?)))?,
        minted: r.u64()?,
    })
}

impl Server {
    /// Serializes the full server state with an integrity trailer.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(SNAPSHOT_MAGIC)
            .expect("short")
            .u8(SNAPSHOT_VERSION)
            .u32(self.config().lambda());
        encode_state(&mut w, self.state()).expect("server state encodes");
        let mut out = w.finish();
        let digest = hash(&out);
        out.extend_from_slice(&digest.0);
        out
    }

    pub fn restore(bytes: &[u8]) -> Result<Self, ServerError> {
        let corrupt = |_| ServerError::CorruptState;
        let split = bytes
            .len()
            .checked_sub(DIGEST_LEN)
            .ok_or(ServerError::CorruptState)?;
        let (body, trailer) = bytes.split_at(split);
        if hash(body).0 != trailer {
            return Err(ServerError::CorruptState);
        }
        let mut r = Reader::new(body);
        if &r.fixed::<4>().map_err(corrupt)? != SNAPSHOT_MAGIC
            || r.u8().map_err(corrupt)? != SNAPSHOT_VERSION
        {
            return Err(ServerError::CorruptState);
        }
        let config = SecurityConfig::new(r.u32().map_err(corrupt)?)
            .map_err(|_| ServerError::CorruptState)?;
        let state = decode_state(&mut r).map_err(corrupt)?;
        r.finish().map_err(corrupt)?;
        if state
            .sessions
            .keys()
            .any(|k| !state.userregistry.contains_key(k))
        {
            return Err(ServerError::CorruptState);
        }
        let tas: BTreeSet<_> = state.userregistry.values().flatten().collect();
        if tas.len() != state.userregistry.values().flatten().count() {
            return Err(ServerError::CorruptState);
        }
        Ok(Server::from_state(config, state))
    }

    /// Writes the snapshot to `path` via a temporary file and rename.
    pub fn save(&self, path: &Path) -> io::Result<()> {
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.snapshot())?;
        f.sync_all()?;
        fs::rename(tmp, path)
    }

    pub fn load(path: &Path) -> io::Result<Result<Self, ServerError>> {
        Ok(Self::restore(&fs::read(path)?))
    }
}
