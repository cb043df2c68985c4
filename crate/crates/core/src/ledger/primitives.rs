//! Addresses, digests and the canonical JSON encoding everything is hashed over.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;
pub const ADDRESS_LEN: usize = 20;

/// SHA-256 output, rendered as lowercase 0x-hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; DIGEST_LEN]);

/// 20-byte account identifier, rendered as lowercase 0x-hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; ADDRESS_LEN]);

impl Digest {
    pub const ZERO: Digest = Digest([0; DIGEST_LEN]);

    pub fn of(bytes: &[u8]) -> Digest {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }
}

impl Address {
    /// First 20 bytes of SHA-256 over the name.
    pub fn derive(name: &str) -> Address {
        let d = Digest::of(name.as_bytes());
        let mut out = [0u8; ADDRESS_LEN];
        out.copy_from_slice(&d.0[..ADDRESS_LEN]);
        Address(out)
    }
}

fn parse_hex<const N: usize>(s: &str) -> Result<[u8; N], String> {
    let body = s.strip_prefix("0x").ok_or_else(|| format!("`{s}` lacks 0x prefix"))?;
    if body.len() != 2 * N {
        return Err(format!("`{s}` is not {N} bytes"));
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(body, &mut out).map_err(|e| format!("`{s}`: {e}"))?;
    Ok(out)
}

macro_rules! hex_newtype {
    ($ty:ident, $len:expr) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "0x{}", hex::encode(self.0))
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({self})", stringify!($ty))
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                parse_hex::<$len>(s).map($ty)
            }
        }

        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_newtype!(Digest, DIGEST_LEN);
hex_newtype!(Address, ADDRESS_LEN);

/// UTF-8 JSON with lexicographically sorted object keys and no whitespace.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> String {
    // serde_json::Value objects are BTreeMap-backed, so keys come out sorted
    let v = serde_json::to_value(value).expect("ledger types serialize to JSON");
    serde_json::to_string(&v).expect("JSON value serializes")
}

pub fn canonical_digest<T: Serialize + ?Sized>(value: &T) -> Digest {
    Digest::of(canonical_json(value).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn canonical_sorts_keys_and_strips_whitespace() {
        let v = json!({"b": 1, "a": {"z": [1, 2], "y": "x"}});
        assert_eq!(canonical_json(&v), r#"{"a":{"y":"x","z":[1,2]},"b":1}"#);
    }

    #[test]
    fn canonical_keeps_u128_exact() {
        #[derive(Serialize)]
        struct W {
            wei: u128,
        }
        let big = 340_282_366_920_938_463_463_374_607_431_768_211_455u128;
        assert_eq!(canonical_json(&W { wei: big }), format!("{{\"wei\":{big}}}"));
    }

    #[test]
    fn digest_of_empty_matches_known_vector() {
        assert_eq!(
            Digest::of(b"").to_string(),
            "0xe3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn address_derivation_is_prefix_of_digest() {
        let a = Address::derive("alice");
        let d = Digest::of(b"alice");
        assert_eq!(&a.0[..], &d.0[..20]);
        assert_eq!(a.to_string().len(), 42);
        assert_eq!(a.to_string().parse::<Address>().unwrap(), a);
    }

    #[test]
    fn hex_parse_rejects_bad_input() {
        assert!("1234".parse::<Address>().is_err());
        assert!("0x12".parse::<Address>().is_err());
        assert!(format!("0x{}", "zz".repeat(20)).parse::<Address>().is_err());
    }
}
