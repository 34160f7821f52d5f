//! Generates a weight bundle, round-trips it through the `.rsfw` format and
//! shows what a corrupted file produces.

use resfu::bundle::{bundle_entries, deserialize_params, serialize_params};
use resfu::{generate_params, GuidedFilterConfig, UpsampleConfig};

fn main() -> resfu::Result<()> {
    let cfg = UpsampleConfig { seed: 42, ..UpsampleConfig::default() };
    let params = generate_params(16, 32, &cfg)?;

    for (name, map) in bundle_entries(&params) {
        let (h, w, c) = map.dims();
        println!("{name:<28} {h:>3} x {w:>3} x {c:>3}");
    }

    let bytes = serialize_params(&params);
    let back = deserialize_params(&bytes, GuidedFilterConfig::default())?;
    println!("{} bytes, round trip identical: {}", bytes.len(), back == params);

    let mut corrupted = bytes.clone();
    corrupted[0] = b'X';
    match deserialize_params(&corrupted, GuidedFilterConfig::default()) {
        Ok(_) => println!("corruption went unnoticed"),
        Err(e) => println!("corrupted magic: {e} (exit code {})", e.exit_code()),
    }
    let truncated = &bytes[..bytes.len() - 10];
    if let Err(e) = deserialize_params(truncated, GuidedFilterConfig::default()) {
        println!("truncated file: {e} (exit code {})", e.exit_code());
    }
    Ok(())
}
