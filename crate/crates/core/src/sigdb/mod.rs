//! API signatures of interest, the raw-text keyword prefilter, and exact call-site detection.

mod db;
mod detect;
mod prefilter;

pub use db::{ApiCategory, ApiSignature, SigDbError, SignatureDb, ValueDomain, DEFAULT_SIGNATURES_JSON};
pub use detect::{find_call_sites, ApiCallSite, ResolvedArg};
pub use prefilter::{keyword_prefilter, PrefilterHit, PrefilterReport, DEFAULT_NEEDLES};
