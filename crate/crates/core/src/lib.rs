pub mod collector;
pub mod control;
pub mod frame;
pub mod harness;
pub mod sim;
pub mod tracker;
pub mod servo;
pub mod sketch;
