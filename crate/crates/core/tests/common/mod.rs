#![allow(dead_code)]

use std::sync::OnceLock;

use funnel_planner::funnel::FunnelLibrary;

/// Default calibrated library shipped with the crate.
pub fn library() -> &'static FunnelLibrary {
    static LIB: OnceLock<FunnelLibrary> = OnceLock::new();
    LIB.get_or_init(|| {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/funnel_library.json");
        FunnelLibrary::load(&path).expect("library asset loads")
    })
}
