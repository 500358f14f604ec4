//! Command-line verbs and the realtime websocket service.

pub mod commands;
pub mod service;
