//! Review service for generated questions.
//!
//! Books, generated questions, curation decisions and annotations live in an
//! append-only event log ([`store`]); [`api`] exposes them as JSON over HTTP
//! and computes agreement and distribution reports on request.
//!
//! ```no_run
//! # async fn run() -> Result<(), Box<dyn std::error::Error>> {
//! let store = defquest_service::store::Store::open("data")?;
//! defquest_service::serve(([127, 0, 0, 1], 8080).into(), store, Default::default()).await?;
//! # Ok(()) }
//! ```

pub mod api;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::{router, ApiOptions};
pub use store::Store;

/// Serves the API until the process is stopped.
pub async fn serve(addr: SocketAddr, store: Store, options: ApiOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, data_dir = %store.dir().display(), "listening");
    axum::serve(listener, router(Arc::new(store), options)).await
}
