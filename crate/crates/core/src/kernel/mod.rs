//! Deterministic discrete-event engine: virtual clock, ordered event set,
//! seeded randomness.

mod queue;
mod time;

pub use queue::{ComponentId, Event, EventId, EventPayload, EventQueue, KernelError, RunSummary};
pub use time::{bit_time_ceil_ns, FracTime, ParseDurationError, SimTime};
