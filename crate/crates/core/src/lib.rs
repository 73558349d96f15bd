//! Layered-state conversational agent framework and the phone damage claim bot
//! built on it.

pub mod channels;
pub mod claimbot;
pub mod context;
pub mod engine;
pub mod msgmodel;
pub mod nlu;
pub mod replay;
pub mod respond;

pub use context::{ContextStore, FileStore, MemoryStore, StoreError, UserContext};
pub use engine::{Engine, EngineError, StepOutput};
pub use msgmodel::{ChatAction, InboundMessage, Payload, UserKey};
pub use nlu::{Catalog, MessageUnderstanding, Understander};
pub use respond::{Formality, FormalityLevel, TemplateTable};
