//! HTTP service for live preference-driven optimization sessions.

pub mod api;
pub mod error;
pub mod session;
pub mod spec;
pub mod store;

pub use api::{router, AppState};
pub use spec::{AxisSpec, SessionSpec};
