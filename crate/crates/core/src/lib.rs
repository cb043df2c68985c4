pub mod clearing;
pub mod contract;
pub mod dispatch;
pub mod fixed;
pub mod harness;
pub mod ledger;
pub mod report;
pub mod scenario;
