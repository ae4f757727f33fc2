pub mod bundle;
pub mod checks;
pub mod embedding;
pub mod error;
pub mod lifting;
pub mod linalg;
pub mod measure;
pub mod modules;
pub mod norms;
pub mod scalar;
