pub mod agent;
pub mod clock;
pub mod config;
pub mod executor;
pub mod llm;
pub mod media;
pub mod planner;
pub mod registry;
pub mod responder;
pub mod store;
pub mod taxonomy;
