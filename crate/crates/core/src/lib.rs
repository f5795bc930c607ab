pub mod cnn;
pub mod container;
pub mod dataset;
pub mod linalg;
pub mod pca;
pub mod pipeline;
pub mod scattering;
pub mod svm;
