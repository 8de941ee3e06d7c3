pub mod bridge;
pub mod error;
pub mod functional;
pub mod jump_augment;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod model_select;
pub mod oracle;
pub mod path;
pub mod resample;
pub mod rml;
pub mod rng;
pub mod simulate;
pub mod smoother;
pub mod validation;
