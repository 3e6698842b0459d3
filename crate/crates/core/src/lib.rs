pub mod conic;
pub mod crlb;
pub mod error;
pub mod gn;
pub mod harness;
pub mod measurement;
pub mod model;
pub mod sdp;
