//! Hybrid static-analysis and reasoning pipeline for Solidity audits.

pub mod calibration;
pub mod catalog;
pub mod ccim;
pub mod claims;
pub mod config;
pub mod coverage;
pub mod dd;
pub mod evidence;
pub mod expr;
pub mod finding;
pub mod funnel;
pub mod ingest;
pub mod interaction;
pub mod lexer;
pub mod prompts;
pub mod reasoner;
pub mod report;
pub mod run;
pub mod signals;
pub mod triage;
pub mod types;
