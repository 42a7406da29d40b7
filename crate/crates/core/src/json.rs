//! Canonical JSON: sorted object keys, compact layout, and doubles printed with
//! 17 significant digits so that every value round-trips bit-for-bit.

use std::io;

use serde::Serialize;
use serde_json::ser::Formatter;

struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

pub fn format_f64(value: f64) -> String {
    if value == 0.0 {
        "0.0".to_owned()
    } else {
        format!("{value:.16e}")
    }
}

/// Serializes through `serde_json::Value`, whose maps keep keys sorted.
pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("value serializes to JSON");
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, CanonicalFormatter);
    value.serialize(&mut ser).expect("in-memory JSON write");
    String::from_utf8(out).expect("JSON is UTF-8")
}
