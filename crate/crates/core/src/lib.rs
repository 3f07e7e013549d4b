//! Timing analysis of receiver cuts in Ultimate tracking data.
//!
//! The pipeline reads tracking frames ([`dataio`]), finds the moments off-disc
//! attackers start their cuts ([`detect`]), replays each cut earlier and later
//! ([`counterfactual`]), scores every replay with a weighted pitch-control
//! field ([`control`], [`timing`]) and summarises the scores ([`stats`]).

pub mod control;
pub mod counterfactual;
pub mod dataio;
pub mod detect;
pub mod geom;
pub mod render;
pub mod stats;
pub mod synth;
pub mod timing;
