pub mod numerics;
pub mod dataset;
pub mod context;
pub mod model;
pub mod training;
pub mod evaluation;
