pub mod cli;
pub mod constants;
pub mod control;
pub mod experiment;
pub mod fields;
pub mod layout;
pub mod lp;
pub mod photonics;
pub mod trap;
