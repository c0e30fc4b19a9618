//! HTTP API and command-line front end for the CT series indexer.

pub mod api;
pub mod cli;
pub mod config;
pub mod state;

use ctindex_core::search::{Page, Query, SearchResult};
use serde::{Deserialize, Serialize};

/// Search output shared by `GET /search` and `ctindex query`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResponse {
    /// Canonical text of the parsed query.
    pub query: String,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub hits: Vec<String>,
}

impl SearchResponse {
    pub fn new(query: &Query, page: Page, result: SearchResult) -> Self {
        Self {
            query: query.to_string(),
            total: result.total,
            offset: page.offset,
            limit: page.limit,
            hits: result.hits,
        }
    }
}
