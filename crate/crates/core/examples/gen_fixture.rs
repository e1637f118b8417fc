//! Regenerates `data/internet2.json`. The committed file is frozen; this
//! only exists so the provenance of its numbers is reproducible.

use sfc_core::topology::{generate_fixture, FIXTURE_SEED};

fn main() {
    print!("{}", generate_fixture(FIXTURE_SEED).to_document());
}
