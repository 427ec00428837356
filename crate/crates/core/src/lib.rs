pub mod analysis;
pub mod campaign;
pub mod charlib;
pub mod circuit;
pub mod device;
pub mod dist;
pub mod mapping;
pub mod pattern;
pub mod presets;
pub mod profile;
pub mod record;
pub mod report;
pub mod rng;
