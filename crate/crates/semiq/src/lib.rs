pub mod config;
pub mod experiments;
pub mod report;
pub mod stats;
pub mod testbed;
pub mod transport;
