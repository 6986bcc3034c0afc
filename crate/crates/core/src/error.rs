use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("invalid frame spec: {0}")]
    InvalidFrameSpec(&'static str),
    #[error("empty filter kernel")]
    EmptyKernel,
    #[error("zero-power component: {0}")]
    ZeroPower(&'static str),
    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    RateMismatch(u32, u32),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid room: {0}")]
    InvalidRoom(&'static str),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(&'static str),
    #[error("point ({0:.3}, {1:.3}, {2:.3}) is not strictly inside the room")]
    OutsideRoom(f64, f64, f64),
    #[error("decay range too short")]
    DecayRangeTooShort,
    #[error("unknown generator: {0}")]
    UnknownGenerator(String),
    #[error("task mismatch: {0}")]
    TaskMismatch(&'static str),
    #[error("diverged at step {step}")]
    Diverged { step: usize },
    #[error("zero-energy input")]
    ZeroEnergy,
    #[error("too little speech: {frames} usable frames, need {needed}")]
    TooLittleSpeech { frames: usize, needed: usize },
    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite parameter update in {0}")]
    NonFiniteUpdate(String),
}
