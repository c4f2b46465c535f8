use thiserror::Error;

/// Errors surfaced by the evaluation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("step cap of {cap} exceeded while sampling a trajectory; the chain may not be absorbing")]
    StepCapExceeded { cap: u64 },

    #[error("transition structure is not a forward chain: {0}")]
    NotAChain(String),

    #[error("feature matrix is rank deficient: smallest singular value {smallest:.3e} below {tol:.3e} of largest")]
    RankDeficient { smallest: f64, tol: f64 },

    #[error("invalid privacy budget: {0}")]
    InvalidBudget(String),

    #[error("public return bound f_max = {f_max} exceeds r_max/(1-gamma) = {limit}")]
    FMaxTooLarge { f_max: f64, limit: f64 },

    #[error("regularization lambda = {lambda} must exceed ||Phi||^2 ||rho||_inf = {threshold}")]
    InvalidRegularization { lambda: f64, threshold: f64 },

    #[error("neighbor pool of {size} alternatives exceeds the enumeration cap {cap}")]
    PoolTooLarge { size: usize, cap: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("replay file {path}: {msg}")]
    Replay { path: String, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
