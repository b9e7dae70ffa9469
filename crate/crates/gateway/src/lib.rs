//! HTTP gateway for vrlab: the API server, a blocking client for it, and
//! the pieces shared with the `vrlab` command-line tool.

pub mod client;
pub mod server;

pub use client::HttpApi;
pub use server::{router, serve, session_token, AppState, ServerConfig};
