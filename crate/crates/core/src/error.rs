use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("radius {rho:e} m is below the singularity threshold (robot on the target axis)")]
    SingularRadius { rho: f64 },

    #[error("at least two robots are required, got {n}")]
    TooFewRobots { n: usize },

    #[error("escape window must be positive, got {s}")]
    InvalidWindow { s: f64 },

    #[error("robot {robot}: phase of neighbor {neighbor} is {age} ticks old (bound {bound})")]
    StaleNeighborData {
        robot: usize,
        neighbor: usize,
        age: u64,
        bound: u64,
    },

    #[error("communication graph is disconnected at tick {tick}")]
    DisconnectedGraph { tick: u64 },

    #[error("no route from robot {src} to robot {dst}")]
    NoRoute { src: usize, dst: usize },

    #[error("degenerate phase gap {delta} (must lie in (0, 2*pi))")]
    DegenerateDelta { delta: f64 },

    #[error("robot {robot} is not the informed robot")]
    NotInformed { robot: usize },

    #[error("not enough samples in the log")]
    InsufficientData,

    #[error("invalid scenario: {0}")]
    Config(String),

    #[error("tick {tick}: {source}")]
    AtTick {
        tick: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_tick(self, tick: u64) -> Error {
        match self {
            e @ Error::AtTick { .. } => e,
            e => Error::AtTick {
                tick,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, skipping tick context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtTick { source, .. } => source.root(),
            e => e,
        }
    }
}
