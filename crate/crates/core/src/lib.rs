//! Interdependent gas-power-water infrastructure: descriptor-system models,
//! state-attack impact on generation cost, distributed attack detection and
//! the attacker/defender communication-allocation game.

pub mod pencil;
pub mod model;
pub mod dynamics;
pub mod detection;
pub mod report;
pub mod game;
pub mod scenario;
pub mod experiment;
