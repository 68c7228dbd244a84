use std::fmt;

/// Phase of the pipeline in which a numerical failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Leaf,
    Merge,
    Solve,
    Update,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Leaf => "leaf",
            Stage::Merge => "merge",
            Stage::Solve => "solve",
            Stage::Update => "update",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HpsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("leaf factorization failed on box {node} (level {level}, stage {stage}): {detail}")]
    LeafFactorization {
        node: usize,
        level: usize,
        stage: Stage,
        detail: String,
    },

    #[error("merge failed on box {node} (level {level}, stage {stage}): {detail}")]
    MergeFailure {
        node: usize,
        level: usize,
        stage: Stage,
        detail: String,
    },

    #[error("corrupt tree: {0}")]
    CorruptTree(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("non-finite function value at ({x}, {y})")]
    Evaluation { x: f64, y: f64 },

    #[error("refinement depth {depth} exceeds the configured maximum {max_depth}")]
    DepthExceeded { depth: usize, max_depth: usize },

    #[error("solver tree has not been built")]
    UnbuiltTree,

    #[error("formulation mismatch: {0}")]
    FormulationMismatch(String),

    #[error("degenerate field on leaf {leaf}")]
    DegenerateField { leaf: usize },

    #[error("degenerate reference on leaf {leaf}")]
    DegenerateReference { leaf: usize },

    #[error("config error ({}field `{field}`): {message}", line_prefix(*.line))]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

fn line_prefix(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!("line {line}, ")
    }
}

impl HpsError {
    /// Short taxonomy name, used in CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            HpsError::InvalidArgument(_) => "invalid-argument",
            HpsError::LeafFactorization { .. } => "leaf-factorization-failure",
            HpsError::MergeFailure { .. } => "merge-failure",
            HpsError::CorruptTree(_) => "corrupt-tree",
            HpsError::PreconditionViolation(_) => "precondition-violation",
            HpsError::Evaluation { .. } => "evaluation-error",
            HpsError::DepthExceeded { .. } => "depth-exceeded",
            HpsError::UnbuiltTree => "unbuilt-tree",
            HpsError::FormulationMismatch(_) => "formulation-mismatch",
            HpsError::DegenerateField { .. } => "degenerate-field",
            HpsError::DegenerateReference { .. } => "degenerate-reference",
            HpsError::Config { .. } => "config-error",
            HpsError::Io(_) => "io-error",
            HpsError::Parse(_) => "parse-error",
        }
    }

    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HpsError::LeafFactorization { .. }
                | HpsError::MergeFailure { .. }
                | HpsError::Evaluation { .. }
                | HpsError::DepthExceeded { .. }
                | HpsError::DegenerateField { .. }
                | HpsError::DegenerateReference { .. }
                | HpsError::PreconditionViolation(_)
                | HpsError::CorruptTree(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, HpsError>;
