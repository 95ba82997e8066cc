pub mod codecs;
pub mod context;
pub mod evaluation;
pub mod synthesis;
pub mod flow;
pub mod losses;
pub mod tensor;
pub mod training;
pub mod warping;
