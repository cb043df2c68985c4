//! Contract call descriptors: `{function, args, window}`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::primitives::Address;

/// Entry points of the market contract, named as they appear on-chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Function {
    #[serde(rename = "setPricePerUnit")]
    SetPricePerUnit,
    #[serde(rename = "sellElectricity")]
    SellElectricity,
    #[serde(rename = "buyElectricity")]
    BuyElectricity,
    #[serde(rename = "validateMeter")]
    ValidateMeter,
    #[serde(rename = "transferEther")]
    TransferEther,
}

impl Function {
    pub const ALL: [Function; 5] = [
        Function::SetPricePerUnit,
        Function::SellElectricity,
        Function::BuyElectricity,
        Function::ValidateMeter,
        Function::TransferEther,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Function::SetPricePerUnit => "setPricePerUnit",
            Function::SellElectricity => "sellElectricity",
            Function::BuyElectricity => "buyElectricity",
            Function::ValidateMeter => "validateMeter",
            Function::TransferEther => "transferEther",
        }
    }

    pub fn signature(self) -> &'static str {
        match self {
            Function::SetPricePerUnit => "setPricePerUnit(uint256,(address,uint256)[])",
            Function::SellElectricity => "sellElectricity(uint256)",
            Function::BuyElectricity => "buyElectricity(uint256)",
            Function::ValidateMeter => "validateMeter((address,int256)[])",
            Function::TransferEther => "transferEther(address)",
        }
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A call argument. Addresses encode as 0x-hex strings, integers as JSON
/// integers, lists as arrays.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arg {
    Address(Address),
    Int(i128),
    List(Vec<Arg>),
}

impl Serialize for Arg {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Arg::Address(a) => a.serialize(serializer),
            Arg::Int(v) => serializer.serialize_i128(*v),
            Arg::List(items) => items.serialize(serializer),
        }
    }
}

impl Arg {
    fn from_value(v: serde_json::Value) -> Result<Arg, String> {
        match v {
            serde_json::Value::String(s) => s.parse().map(Arg::Address),
            serde_json::Value::Number(n) => {
                let text = n.to_string();
                text.parse::<i128>().map(Arg::Int).map_err(|_| format!("argument `{text}` is not an integer"))
            }
            serde_json::Value::Array(items) => items.into_iter().map(Arg::from_value).collect::<Result<_, _>>().map(Arg::List),
            other => Err(format!("unsupported argument {other}")),
        }
    }

    /// Calldata gas of this argument: 16 per significant byte and 4 per
    /// padding byte of each 32-byte word. Addresses always count 20
    /// significant bytes; integers count the big-endian bytes of their
    /// magnitude; lists add a length word.
    pub fn calldata_gas(&self, nonzero: u64, zero: u64) -> u64 {
        let word = |significant: u64| significant * nonzero + (32 - significant) * zero;
        match self {
            Arg::Address(_) => word(20),
            Arg::Int(v) => {
                let mag = v.unsigned_abs();
                let bytes = (128 - mag.leading_zeros() as u64).div_ceil(8);
                word(bytes)
            }
            Arg::List(items) => {
                Arg::Int(items.len() as i128).calldata_gas(nonzero, zero)
                    + items.iter().map(|a| a.calldata_gas(nonzero, zero)).sum::<u64>()
            }
        }
    }

    pub fn as_int(&self) -> Option<i128> {
        match self {
            Arg::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_address(&self) -> Option<Address> {
        match self {
            Arg::Address(a) => Some(*a),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Arg]> {
        match self {
            Arg::List(items) => Some(items),
            _ => None,
        }
    }
}

impl<'de> Deserialize<'de> for Arg {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(deserializer)?;
        Arg::from_value(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractCall {
    pub function: Function,
    pub args: Vec<Arg>,
    pub window: u64,
}

impl ContractCall {
    pub fn new(function: Function, args: Vec<Arg>, window: u64) -> Self {
        ContractCall { function, args, window }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::primitives::canonical_json;

    #[test]
    fn descriptor_encodes_canonically() {
        let call = ContractCall::new(
            Function::SetPricePerUnit,
            vec![Arg::Int(3_000_000), Arg::List(vec![Arg::List(vec![Arg::Address(Address([0xab; 20])), Arg::Int(-5)])])],
            7,
        );
        let json = canonical_json(&call);
        assert_eq!(
            json,
            format!(r#"{{"args":[3000000,[["0x{}",-5]]],"function":"setPricePerUnit","window":7}}"#, "ab".repeat(20))
        );
        let back: ContractCall = serde_json::from_str(&json).unwrap();
        assert_eq!(back, call);
    }

    #[test]
    fn address_argument_costs_368() {
        // 20 significant bytes at 16 plus 12 padding bytes at 4
        assert_eq!(Arg::Address(Address([0; 20])).calldata_gas(16, 4), 368);
    }

    #[test]
    fn integer_argument_counts_magnitude_bytes() {
        assert_eq!(Arg::Int(0).calldata_gas(16, 4), 128);
        assert_eq!(Arg::Int(255).calldata_gas(16, 4), 16 + 31 * 4);
        assert_eq!(Arg::Int(256).calldata_gas(16, 4), 32 + 30 * 4);
        assert_eq!(Arg::Int(-256).calldata_gas(16, 4), 32 + 30 * 4);
    }

    #[test]
    fn rejects_floats_and_objects() {
        assert!(serde_json::from_str::<Arg>("1.5").is_err());
        assert!(serde_json::from_str::<Arg>("{}").is_err());
        assert!(serde_json::from_str::<Arg>("true").is_err());
    }
}
