//! Command-line front end and snapshot fetcher for leaderlens.

mod app;
pub mod fetch;

pub use app::{exit_code, run};
