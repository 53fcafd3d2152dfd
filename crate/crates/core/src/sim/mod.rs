//! Clock, event queue, KV memory accounting and the engine cost model.

pub mod engine;
pub mod events;
pub mod memory;

pub use engine::{BatchPlan, EngineConfig, IterationWork, PlannedWork};
pub use events::{Event, EventKind, EventQueue, SimTime};
pub use events::{ProgramId, RequestId};
pub use memory::{AllocOutcome, MemoryConfig, MemoryPool, SwapInOutcome, SwapOutOutcome};
