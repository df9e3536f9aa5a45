pub mod audio;
pub mod diarize;
pub mod enhance;
pub mod sim;
pub mod sync;
pub mod edit;
pub mod transcript;
pub mod asr;
pub mod dedup;
pub mod evalscore;
pub mod tensorfile;
pub mod pipeline;
