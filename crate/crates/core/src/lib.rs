pub mod gain;
pub mod linalg;
pub mod system;
pub mod abstraction;
pub mod certificate;
pub mod composition;
pub mod synthesis;
pub mod bench;
pub mod config;
pub mod cli;
