//! Optimizer, early-stopped training loop and grid search.

mod adam;
mod grid;
mod trainer;

pub use adam::Adam;
pub use grid::{grid_search, GridCell, GridEntry, GridResult, GridSpace};
pub use trainer::{
    train, Selection, SplitView, StepRecord, TrainConfig, TrainHistory, TrainedModel,
};
