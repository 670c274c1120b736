//! Conversational co-creation of music loops.
//!
//! A language model plans tool calls in a `Thought` / `Action` /
//! `Action Input` text protocol; the [`handler::Engine`] executes them
//! against generation, separation and DSP tools, keeps a global attribute
//! table of the loop's musical properties, and records the dialogue.

pub mod audio;
pub mod backends;
pub mod dsp;
pub mod gat;
pub mod handler;
pub mod llm;
pub mod protocol;
pub mod tools;
pub mod transcript;
