pub mod balance;
pub mod bubble;
pub mod cli;
pub mod constants;
pub mod error;
pub mod functional;
pub mod harmonics;
pub mod lemmas;
pub mod quadrature;
pub mod radial;
pub mod reduction;
pub mod regression;
pub mod sphere;
