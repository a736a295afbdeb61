pub mod auction;
pub mod bounds;
pub mod casegen;
pub mod continuous;
pub mod fixtures;
pub mod model;
pub mod optimize;
pub mod powerflow;
