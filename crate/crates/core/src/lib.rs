pub mod additive;
pub mod arnet;
pub mod eval;
pub mod featsel;
pub mod ingest;
pub mod optim;
pub mod preprocess;
pub mod regimes;
pub mod report;
pub mod sarimax;
pub mod series;
