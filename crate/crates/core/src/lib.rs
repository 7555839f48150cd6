//! Core of the see-and-act loop: media capture into wire units, the live
//! session protocol and client, a deterministic mock model server, tool
//! routing, the skill gateway, personal memory and interaction analytics.

pub mod agent;
pub mod analytics;
pub mod control;
pub mod gateway;
pub mod media;
pub mod memory;
pub mod model_sim;
pub mod protocol;
pub mod router;
pub mod tool;

/// Milliseconds since the Unix epoch.
pub fn epoch_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}
