pub mod autodiff;
pub mod dsp;
pub mod eeg_io;
pub mod eval;
pub mod model;
pub mod train;
