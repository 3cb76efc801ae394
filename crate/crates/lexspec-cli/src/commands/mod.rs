pub mod analyze;
pub mod eval;
pub mod mine;
pub mod train;

use std::collections::BTreeSet;

use anyhow::{bail, Result};
use lexspec::lexdata::Lang;

/// Comma-separated language codes, deduplicated; at least one required.
pub fn parse_lang_set(list: &str) -> Result<BTreeSet<Lang>> {
    let mut set = BTreeSet::new();
    for code in list.split(',') {
        let code = code.trim();
        if code.is_empty() {
            continue;
        }
        set.insert(Lang::new(code)?);
    }
    if set.is_empty() {
        bail!("expected at least one language code, got {list:?}");
    }
    Ok(set)
}
