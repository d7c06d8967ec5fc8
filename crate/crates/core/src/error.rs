use thiserror::Error;

#[derive(Debug, Error)]
pub enum PicnError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported derivative order ({order_x}, {order_y})")]
    UnsupportedDerivative { order_x: usize, order_y: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("point ({x}, {y}) lies outside the grid rectangle")]
    OutsideGrid { x: f64, y: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown problem `{name}`; builtin problems are: {}", .builtins.join(", "))]
    UnknownProblem { name: String, builtins: Vec<String> },

    #[error("problem `{problem}` does not accept parameter `{key}`")]
    UnknownParameter { problem: String, key: String },

    #[error("residual reads `{0}` but the point bundle does not carry it")]
    MissingQuantity(&'static str),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at epoch {epoch} (total = {value})")]
    Diverged { epoch: usize, value: f64 },

    #[error("checkpoint parse error at line {line}: {msg}")]
    Checkpoint { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PicnError>;
