pub mod error;
pub mod fbsde;
pub mod market;
pub mod quadrature;
pub mod report;
pub mod utility;
pub mod grid;
pub mod solver;
pub mod config;
pub mod simulate;
pub mod verify;
pub mod io;
pub mod runner;
