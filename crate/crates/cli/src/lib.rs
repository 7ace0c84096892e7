//! Command-line tools and the live audit-session service.

pub mod commands;
pub mod files;
pub mod service;
pub mod session;
pub mod terminal;

pub use commands::{run, Cli, Command};
pub use session::{
    AuditSession, EntryRequest, SessionError, SessionStatus, SessionStore, SessionStrategy,
    SessionView, StartRequest,
};
