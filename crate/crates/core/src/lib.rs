pub mod analyzer;
pub mod attacks;
pub mod cli;
pub mod collector;
pub mod crypto;
pub mod gateway;
pub mod kms;
pub mod messages;
pub mod parties;
