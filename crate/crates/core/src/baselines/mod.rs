mod knn;
mod lda;

pub use knn::KnnModel;
pub use lda::{LdaModel, Priors, SHRINKAGE};
