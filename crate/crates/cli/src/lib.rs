//! Command line and HTTP front end for sketchforge: a persistent scene
//! store, a class-to-weights registry and the sketch-to-placed-object
//! request handler.

pub mod cli;
pub mod error;
pub mod registry;
pub mod service;
pub mod store;

pub use cli::run;
pub use error::ServiceError;
pub use registry::{Model, Registry};
pub use service::{handle_generate, router, AppState, GenerateRequest, GenerateResponse};
pub use store::{ObjectRecord, Store};
