//! Location-bound report envelope.
//!
//! A detection report is sealed under a pre-shared 256-bit key together with
//! a fresh 128-bit random nonce. The keystream is HMAC-SHA256 in counter mode
//! over (nonce, location, block index); the envelope carries a keyed digest
//! of the location and a keyed integrity tag over everything before it.
//! Decryption checks integrity first, then that the claimed location matches
//! the bound one, and returns the report without the nonce.
//!
//! Wire layout, all integers big-endian:
//!
//! ```text
//! nonce (16) | location tag (32) | payload length (4) | ciphertext | integrity tag (32)
//! ```
//!
//! This construction is a simulation stand-in. It has not been reviewed and
//! must not be used to protect real data.

use hmac::{Hmac, KeyInit, Mac};
use rand::RngCore;
use sha2::Sha256;
use thiserror::Error;

use crate::detection::{DepthMap, IntensityImage};
use crate::ids::VehicleId;
use crate::registry::Location;

type HmacSha256 = Hmac<Sha256>;

pub const NONCE_LEN: usize = 16;
pub const TAG_LEN: usize = 32;
const HEADER_LEN: usize = NONCE_LEN + TAG_LEN + 4;

const LABEL_LOCATION: &[u8] = b"pothole/location-tag";
const LABEL_KEYSTREAM: &[u8] = b"pothole/keystream";
const LABEL_INTEGRITY: &[u8] = b"pothole/integrity";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("envelope truncated")]
    Truncated,
    #[error("claimed location does not match the envelope")]
    LocationMismatch,
    #[error("integrity check failed")]
    IntegrityFailure,
    #[error("malformed payload: {0}")]
    MalformedPayload(&'static str),
}

#[derive(Clone, PartialEq, Eq)]
pub struct SharedKey([u8; 32]);

impl SharedKey {
    pub fn new(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    fn mac(&self, label: &[u8]) -> HmacSha256 {
        let mut mac = HmacSha256::new_from_slice(&self.0).expect("HMAC accepts any key length");
        mac.update(label);
        mac
    }
}

impl std::fmt::Debug for SharedKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SharedKey(..)")
    }
}

/// What a vehicle uploads about one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainReport {
    pub depth_map: DepthMap,
    pub intensity: IntensityImage,
    pub location: Location,
    pub vehicle: VehicleId,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportEnvelope {
    pub nonce: [u8; NONCE_LEN],
    pub location_tag: [u8; TAG_LEN],
    pub ciphertext: Vec<u8>,
    pub integrity_tag: [u8; TAG_LEN],
}

impl ReportEnvelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.location_tag);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.integrity_tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < HEADER_LEN + TAG_LEN {
            return Err(CryptoError::Truncated);
        }
        let len = u32::from_be_bytes(bytes[48..52].try_into().unwrap()) as usize;
        if bytes.len() != HEADER_LEN + len + TAG_LEN {
            return Err(CryptoError::Truncated);
        }
        Ok(Self {
            nonce: bytes[..16].try_into().unwrap(),
            location_tag: bytes[16..48].try_into().unwrap(),
            ciphertext: bytes[52..52 + len].to_vec(),
            integrity_tag: bytes[52 + len..].try_into().unwrap(),
        })
    }
}

fn location_bytes(loc: &Location) -> Vec<u8> {
    let mut out = Vec::new();
    put_str(&mut out, loc.arc.as_str());
    out.extend_from_slice(&loc.offset_m.to_bits().to_be_bytes());
    out
}

fn location_tag(key: &SharedKey, loc: &Location) -> HmacSha256 {
    let mut mac = key.mac(LABEL_LOCATION);
    mac.update(&location_bytes(loc));
    mac
}

fn apply_keystream(key: &SharedKey, nonce: &[u8; NONCE_LEN], loc: &Location, data: &mut [u8]) {
    let loc = location_bytes(loc);
    for (block, chunk) in data.chunks_mut(32).enumerate() {
        let mut mac = key.mac(LABEL_KEYSTREAM);
        mac.update(nonce);
        mac.update(&loc);
        mac.update(&(block as u32).to_be_bytes());
        let stream = mac.finalize().into_bytes();
        for (b, k) in chunk.iter_mut().zip(stream.iter()) {
            *b ^= k;
        }
    }
}

fn integrity_mac(key: &SharedKey, env: &ReportEnvelope) -> HmacSha256 {
    let mut mac = key.mac(LABEL_INTEGRITY);
    mac.update(&env.nonce);
    mac.update(&env.location_tag);
    mac.update(&(env.ciphertext.len() as u32).to_be_bytes());
    mac.update(&env.ciphertext);
    mac
}

pub fn encrypt(report: &PlainReport, key: &SharedKey, rng: &mut impl RngCore) -> ReportEnvelope {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);

    let mut ciphertext = encode_report(report);
    apply_keystream(key, &nonce, &report.location, &mut ciphertext);

    let mut env = ReportEnvelope {
        nonce,
        location_tag: location_tag(key, &report.location)
            .finalize()
            .into_bytes()
            .into(),
        ciphertext,
        integrity_tag: [0u8; TAG_LEN],
    };
    env.integrity_tag = integrity_mac(key, &env).finalize().into_bytes().into();
    env
}

pub fn decrypt(
    env: &ReportEnvelope,
    key: &SharedKey,
    claimed: &Location,
) -> Result<PlainReport, CryptoError> {
    integrity_mac(key, env)
        .verify_slice(&env.integrity_tag)
        .map_err(|_| CryptoError::IntegrityFailure)?;
    location_tag(key, claimed)
        .verify_slice(&env.location_tag)
        .map_err(|_| CryptoError::LocationMismatch)?;

    let mut plain = env.ciphertext.clone();
    apply_keystream(key, &env.nonce, claimed, &mut plain);
    decode_report(&plain)
}

/// Parses wire bytes and decrypts them.
pub fn decrypt_bytes(
    bytes: &[u8],
    key: &SharedKey,
    claimed: &Location,
) -> Result<PlainReport, CryptoError> {
    decrypt(&ReportEnvelope::from_bytes(bytes)?, key, claimed)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_grid(out: &mut Vec<u8>, rows: usize, cols: usize, values: &[f64]) {
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend_from_slice(&(values.len() as u32).to_be_bytes());
    for v in values {
        out.extend_from_slice(&v.to_bits().to_be_bytes());
    }
}

fn encode_report(r: &PlainReport) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&r.depth_map.cell_m.to_bits().to_be_bytes());
    put_grid(
        &mut out,
        r.depth_map.rows,
        r.depth_map.cols,
        &r.depth_map.depths,
    );
    put_grid(
        &mut out,
        r.intensity.rows,
        r.intensity.cols,
        &r.intensity.values,
    );
    put_str(&mut out, r.location.arc.as_str());
    out.extend_from_slice(&r.location.offset_m.to_bits().to_be_bytes());
    put_str(&mut out, r.vehicle.as_str());
    out.extend_from_slice(&r.timestamp_ms.to_be_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CryptoError> {
        if self.buf.len() < n {
            return Err(CryptoError::MalformedPayload("short payload"));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<usize, CryptoError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, CryptoError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, CryptoError> {
        self.u64().map(f64::from_bits)
    }

    fn string(&mut self) -> Result<String, CryptoError> {
        let len = self.u32()?;
        String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CryptoError::MalformedPayload("invalid utf-8"))
    }

    fn grid(&mut self) -> Result<(usize, usize, Vec<f64>), CryptoError> {
        let rows = self.u32()?;
        let cols = self.u32()?;
        let len = self.u32()?;
        if len > self.buf.len() / 8 {
            return Err(CryptoError::MalformedPayload("grid longer than payload"));
        }
        let values = (0..len).map(|_| self.f64()).collect::<Result<_, _>>()?;
        Ok((rows, cols, values))
    }
}

fn decode_report(bytes: &[u8]) -> Result<PlainReport, CryptoError> {
    let mut r = Reader { buf: bytes };
    let cell_m = r.f64()?;
    let (rows, cols, depths) = r.grid()?;
    let (irows, icols, values) = r.grid()?;
    let arc = r.string()?;
    let offset_m = r.f64()?;
    let vehicle = r.string()?;
    let timestamp_ms = r.u64()?;
    if !r.buf.is_empty() {
        return Err(CryptoError::MalformedPayload("trailing bytes"));
    }
    Ok(PlainReport {
        depth_map: DepthMap {
            rows,
            cols,
            cell_m,
            depths,
        },
        intensity: IntensityImage {
            rows: irows,
            cols: icols,
            values,
        },
        location: Location::new(arc, offset_m),
        vehicle: vehicle.into(),
        timestamp_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> PlainReport {
        PlainReport {
            depth_map: DepthMap {
                rows: 1,
                cols: 3,
                cell_m: 0.5,
                depths: vec![12.0, 40.5, 18.25],
            },
            intensity: IntensityImage {
                rows: 1,
                cols: 3,
                values: vec![0.3, 0.3, 0.25],
            },
            location: Location::new("a7", 12.375),
            vehicle: "v1".into(),
            timestamp_ms: 1_234,
        }
    }

    fn key() -> SharedKey {
        SharedKey::new([7u8; 32])
    }

    #[test]
    fn round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = sample();
        let env = encrypt(&r, &key(), &mut rng);
        assert_eq!(decrypt(&env, &key(), &r.location).unwrap(), r);
        assert_eq!(
            decrypt_bytes(&env.to_bytes(), &key(), &r.location).unwrap(),
            r
        );
    }

    #[test]
    fn empty_payload_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = PlainReport {
            depth_map: DepthMap {
                rows: 0,
                cols: 0,
                cell_m: 0.5,
                depths: vec![],
            },
            intensity: IntensityImage {
                rows: 0,
                cols: 0,
                values: vec![],
            },
            ..sample()
        };
        let env = encrypt(&r, &key(), &mut rng);
        assert_eq!(decrypt(&env, &key(), &r.location).unwrap(), r);
    }

    #[test]
    fn fresh_nonce_per_encryption() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = sample();
        let a = encrypt(&r, &key(), &mut rng);
        let b = encrypt(&r, &key(), &mut rng);
        assert_ne!(a.nonce, b.nonce);
        assert_ne!(a.ciphertext, b.ciphertext);
        assert_eq!(a.location_tag, b.location_tag);
    }

    #[test]
    fn wrong_location_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = sample();
        let env = encrypt(&r, &key(), &mut rng);
        assert_eq!(
            decrypt(&env, &key(), &Location::new("a7", 12.5)),
            Err(CryptoError::LocationMismatch)
        );
        assert_eq!(
            decrypt(&env, &key(), &Location::new("a8", 12.375)),
            Err(CryptoError::LocationMismatch)
        );
    }

    #[test]
    fn wrong_key_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = sample();
        let env = encrypt(&r, &key(), &mut rng);
        assert_eq!(
            decrypt(&env, &SharedKey::new([8u8; 32]), &r.location),
            Err(CryptoError::IntegrityFailure)
        );
    }

    #[test]
    fn flipped_ciphertext_byte_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let r = sample();
        let env = encrypt(&r, &key(), &mut rng);
        let mut bytes = env.to_bytes();
        bytes[HEADER_LEN + 3] ^= 0x01;
        assert_eq!(
            decrypt_bytes(&bytes, &key(), &r.location),
            Err(CryptoError::IntegrityFailure)
        );
    }

    #[test]
    fn truncated_envelope_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = sample();
        let bytes = encrypt(&r, &key(), &mut rng).to_bytes();
        assert_eq!(
            decrypt_bytes(&bytes[..bytes.len() - 1], &key(), &r.location),
            Err(CryptoError::Truncated)
        );
        assert_eq!(
            ReportEnvelope::from_bytes(&bytes[..20]),
            Err(CryptoError::Truncated)
        );
    }

    #[test]
    fn wire_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let env = encrypt(&sample(), &key(), &mut rng);
        let bytes = env.to_bytes();
        assert_eq!(&bytes[..16], &env.nonce);
        assert_eq!(&bytes[16..48], &env.location_tag);
        assert_eq!(
            u32::from_be_bytes(bytes[48..52].try_into().unwrap()) as usize,
            env.ciphertext.len()
        );
        assert_eq!(&bytes[bytes.len() - 32..], &env.integrity_tag);
        assert_eq!(bytes.len(), 16 + 32 + 4 + env.ciphertext.len() + 32);
    }
}
