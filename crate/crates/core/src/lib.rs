pub mod analytics;
pub mod api;
pub mod config;
pub mod crypto;
pub mod dataprep;
pub mod ids;
pub mod jsonl;
pub mod orchestrator;
pub mod protocol;
pub mod scheduler;
pub mod storage;
pub mod token;
pub mod worker;
