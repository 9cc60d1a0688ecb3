pub mod case_file;
pub mod config;
pub mod experiment;
pub mod export;
