pub mod conv;
pub mod graph;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod models;
pub mod pooling;
pub mod shapes;
pub mod tensor;
pub mod train;
