#![no_std]
extern crate alloc;

pub mod dyson;
pub mod expr;
pub mod grid;
pub mod kernel;
pub mod linalg;
pub mod opalg;
pub mod ring;
pub mod verify;
