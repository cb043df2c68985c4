//! Gas schedule and metering.
//!
//! A transaction pays a flat base, calldata gas for its selector and
//! arguments, then a fixed execution cost for the function it calls.

use serde::{Deserialize, Serialize};

use super::call::{ContractCall, Function};

/// Bytes of function selector at the head of every call.
const SELECTOR_LEN: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GasSchedule {
    pub base: u64,
    pub calldata_nonzero_byte: u64,
    pub calldata_zero_byte: u64,
    pub set_price_per_unit: u64,
    pub sell_electricity: u64,
    pub buy_electricity: u64,
    pub validate_meter: u64,
    pub transfer_ether: u64,
}

impl Default for GasSchedule {
    fn default() -> Self {
        GasSchedule {
            base: 21_000,
            calldata_nonzero_byte: 16,
            calldata_zero_byte: 4,
            set_price_per_unit: 5_000,
            sell_electricity: 8_000,
            buy_electricity: 8_000,
            validate_meter: 8_000,
            transfer_ether: 12_015,
        }
    }
}

impl GasSchedule {
    pub fn execution(&self, function: Function) -> u64 {
        match function {
            Function::SetPricePerUnit => self.set_price_per_unit,
            Function::SellElectricity => self.sell_electricity,
            Function::BuyElectricity => self.buy_electricity,
            Function::ValidateMeter => self.validate_meter,
            Function::TransferEther => self.transfer_ether,
        }
    }

    pub fn calldata(&self, call: &ContractCall) -> u64 {
        SELECTOR_LEN * self.calldata_nonzero_byte
            + call
                .args
                .iter()
                .map(|a| a.calldata_gas(self.calldata_nonzero_byte, self.calldata_zero_byte))
                .sum::<u64>()
    }

    /// Gas charged before any contract code runs.
    pub fn intrinsic(&self, call: &ContractCall) -> u64 {
        self.base + self.calldata(call)
    }

    /// Gas a successful execution of `call` consumes.
    pub fn estimate(&self, call: &ContractCall) -> u64 {
        self.intrinsic(call) + self.execution(call.function)
    }
}

/// Limit attached to a call: the estimate plus 15% headroom, rounded up.
pub fn gas_limit_with_headroom(estimate: u64) -> u64 {
    (estimate * 115).div_ceil(100)
}

/// Outcome of charging a call against its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Metering {
    pub gas_used: u64,
    pub execution_cost: u64,
    pub out_of_gas: bool,
}

impl Metering {
    pub fn charge(schedule: &GasSchedule, call: &ContractCall, gas_limit: u64) -> Metering {
        let intrinsic = schedule.intrinsic(call);
        let execution = schedule.execution(call.function);
        if gas_limit < intrinsic {
            return Metering { gas_used: gas_limit, execution_cost: 0, out_of_gas: true };
        }
        if gas_limit - intrinsic < execution {
            return Metering { gas_used: gas_limit, execution_cost: gas_limit - intrinsic, out_of_gas: true };
        }
        Metering { gas_used: intrinsic + execution, execution_cost: execution, out_of_gas: false }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::call::Arg;
    use crate::ledger::primitives::Address;

    fn transfer() -> ContractCall {
        ContractCall::new(Function::TransferEther, vec![Arg::Address(Address::derive("seller"))], 0)
    }

    #[test]
    fn transfer_ether_reproduces_reference_receipt() {
        let g = GasSchedule::default();
        assert_eq!(g.calldata(&transfer()), 432);
        assert_eq!(g.estimate(&transfer()), 33_447);
        assert_eq!(gas_limit_with_headroom(33_447), 38_465);
        let m = Metering::charge(&g, &transfer(), 38_465);
        assert_eq!(m, Metering { gas_used: 33_447, execution_cost: 12_015, out_of_gas: false });
    }

    #[test]
    fn exhaustion_uses_whole_limit() {
        let g = GasSchedule::default();
        assert_eq!(Metering::charge(&g, &transfer(), 1), Metering { gas_used: 1, execution_cost: 0, out_of_gas: true });
        let m = Metering::charge(&g, &transfer(), 30_000);
        assert!(m.out_of_gas);
        assert_eq!(m.gas_used, 30_000);
        assert_eq!(m.execution_cost, 30_000 - 21_432);
    }

    #[test]
    fn overrides_deserialize_over_defaults() {
        let g: GasSchedule = serde_json::from_str(r#"{"sell_electricity": 9000}"#).unwrap();
        assert_eq!(g.sell_electricity, 9000);
        assert_eq!(g.transfer_ether, 12_015);
        assert!(serde_json::from_str::<GasSchedule>(r#"{"bogus": 1}"#).is_err());
    }
}
