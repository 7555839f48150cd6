//! Deterministic stand-in for a live multimodal model.
//!
//! Speaks the session wire protocol, recognizes tone-coded user speech,
//! classifies turns with a rule table and always acknowledges out loud before
//! emitting a tool call.

mod engine;
mod policy;
mod server;
pub mod voice;

pub use engine::{load_script, ModelEngine, ScriptedMessage, ScriptedTurn, OUT_CHUNK_MS};
pub use policy::{classify_turn, Decision, RuleAction, RuleSpec, TurnPolicy, PAST_REFERENCES};
pub use server::{ModelServer, ModelServerConfig};
pub use voice::{render_tones, synthesize, Speech, ToneDecoder};
