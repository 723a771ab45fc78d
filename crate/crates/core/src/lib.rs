pub mod cohort;
pub mod diagnostics;
pub mod inference;
pub mod io;
pub mod numerics;
pub mod simulate;
pub mod study;
