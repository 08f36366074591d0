pub mod analyze;
pub mod baseline;
pub mod covmap_edit;
pub mod covmap_extract;
pub mod synthesize;
pub mod train;
