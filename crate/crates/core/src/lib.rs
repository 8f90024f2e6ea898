pub mod engine;
pub mod eval;
pub mod memory;
pub mod oracle;
pub mod scenario;
pub mod state;
pub mod scheduler;
