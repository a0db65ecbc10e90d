//! HTTP annotation service. Every write goes through one journaled commit
//! path; restarting replays the journal onto the latest snapshot.

pub mod api;
pub mod config;
pub mod journal;
pub mod state;
pub mod store;

use annopipe::corpus::CorpusError;
use annopipe::qc::QcError;
use annopipe::sampling::LoopError;
use thiserror::Error;

pub use api::{router, AppState};
pub use config::ServiceConfig;
pub use store::Store;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("internal: {0}")]
    Internal(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("unknown tweet `{0}`")]
    UnknownTweet(String),
    #[error("unknown lot `{0}`")]
    UnknownLot(String),
    #[error("tweet `{tweet_id}` is not assigned to `{annotator_id}`")]
    NotAssigned { tweet_id: String, annotator_id: String },
    #[error("tweet `{0}` is already labeled")]
    AlreadyLabeled(String),
    #[error("lot `{lot_id}` is open ({have}/{need})")]
    LotOpen { lot_id: String, have: usize, need: usize },
    #[error("tweet `{0}` is not awaiting discussion")]
    NotInDiscussion(String),
    #[error("batch incomplete: {remaining} remaining")]
    Incomplete { remaining: usize },
    #[error("no batch has been opened")]
    NoBatch,
    #[error("the unlabeled pool is empty")]
    PoolExhausted,
    #[error("selection returned no tweets")]
    NothingSelected,
    #[error("a batch selection is already running")]
    Busy,
    #[error("another batch was opened during selection")]
    Stale,
    #[error(transparent)]
    Qc(#[from] QcError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Loop(#[from] LoopError),
}

/// Binds the configured address and serves until interrupted.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let addr = format!("{}:{}", cfg.bind, cfg.port);
    let store = tokio::task::spawn_blocking(move || Store::open(cfg))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    let app = router(AppState::new(store));
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
