//! Confidence-aware semantic scene completion for object-goal navigation in
//! procedurally generated 2-D indoor worlds: world generation, egocentric
//! raycast perception, completion and confidence networks, a double-DQN
//! policy over spatial action maps, episode evaluation, and rendering.

pub mod completion;
pub mod config;
pub mod episodes;
pub mod error;
pub mod nav;
pub mod perception;
pub mod render;
pub mod world;

pub use error::{Result, SscError};
