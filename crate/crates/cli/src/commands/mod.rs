pub mod annot;
pub mod evaluate;
pub mod export;
pub mod run;
pub mod sync;
