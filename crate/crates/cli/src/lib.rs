pub mod config;
pub mod error;
pub mod faithfulness;
pub mod manifest;
pub mod pipeline;
