//! Simulation, control and mission tooling for a quadrotor that perches on a
//! vertical wall with suction cups, tilts its tool table onto the wall through
//! a lockable hinge, and drills using rotor thrust as feed force.

pub mod attachment;
pub mod cli;
pub mod command;
pub mod control;
pub mod dynamics;
pub mod experiments;
pub mod mission;
pub mod model;
pub mod rotor;
pub mod script;
pub mod sim;
pub mod teleop;
pub mod telemetry;
pub mod tool;
