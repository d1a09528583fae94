#![no_std]

extern crate alloc;

pub mod apps;
pub mod bits;
pub mod codec;
pub mod cotp;
pub mod cqtok;
pub mod crypt;
pub mod ftlift;
pub mod gf2;
pub mod progvm;
pub mod qhw;
pub mod ramobf;
