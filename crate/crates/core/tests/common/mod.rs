#![allow(dead_code)]

pub mod criteria;
pub mod gen;
pub mod http;
pub mod oracles;
