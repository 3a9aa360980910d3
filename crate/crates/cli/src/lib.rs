pub mod commands;
pub mod config;
pub mod formats;
pub mod inputs;
pub mod output;
